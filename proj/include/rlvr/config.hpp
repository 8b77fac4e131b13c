#pragma once

#include "rlvr/common.hpp"
#include "rlvr/grpo.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/rft.hpp"
#include "rlvr/shaping.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace rlvr {

struct TaskConfig {
    std::string kind = "modular_sum";
    int difficulty = 1;
    int train_count = 256;
    int vocab_size = 64;
};

struct RftRunConfig {
    std::string strategy = "rule_only";
    int batch_size = 128;
    double noise_fraction = 0.05;
    double redundancy_threshold = 0.31;
    int rollouts_per_prompt = 8;
    int iterations = 4;
    int sft_epochs = 1;
    double sft_learning_rate = 0.5;
};

struct ProbeRunConfig {
    int size = 32;
    int samples = 4;
    int eval_every = 20;
    std::vector<int> ks = {1, 4, 8};
};

struct ExperimentConfig {
    int schema_version = 1;
    TaskConfig task;
    PolicyDims policy;
    SamplingConfig sampling;
    GrpoConfig grpo;
    ShapingConfig shaping;
    RftRunConfig rft;
    ProbeRunConfig probe;
    std::string output_dir = "out";
    std::uint64_t seed = 1;
    bool determinism = true;
    int rollout_log_every = 50;  // cadence for rollouts.jsonl; 0 disables
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
        }
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline SelectionStrategy parse_strategy(const std::string& s) {
    if (s == "rule_only") return SelectionStrategy::rule_only;
    if (s == "noisy_mix") return SelectionStrategy::noisy_mix;
    if (s == "high_entropy") return SelectionStrategy::high_entropy;
    if (s == "high_rbf") return SelectionStrategy::high_rbf;
    if (s == "noisy_plus_rbf") return SelectionStrategy::noisy_plus_rbf;
    throw ConfigError("rft.strategy: unknown strategy '" + s + "'");
}

inline ShapingMode parse_shaping_mode(const std::string& s) {
    if (s == "none") return ShapingMode::none;
    if (s == "ppl") return ShapingMode::ppl;
    if (s == "position") return ShapingMode::position;
    throw ConfigError("shaping.mode: unknown mode '" + s + "'");
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    using detail::read;
    using detail::reject_unknown;
    ExperimentConfig cfg;

    reject_unknown(j, {"schema_version", "task", "policy", "sampling", "grpo", "shaping", "rft",
                       "probe", "output_dir", "seed", "determinism", "rollout_log_every"},
                   "config root");
    read(j, "schema_version", cfg.schema_version);
    if (cfg.schema_version != 1) {
        throw ConfigError("schema_version: expected 1, got " + std::to_string(cfg.schema_version));
    }

    if (j.contains("task")) {
        const auto& t = j.at("task");
        reject_unknown(t, {"kind", "difficulty", "train_count", "vocab_size"}, "task");
        read(t, "kind", cfg.task.kind);
        read(t, "difficulty", cfg.task.difficulty);
        read(t, "train_count", cfg.task.train_count);
        read(t, "vocab_size", cfg.task.vocab_size);
        if (cfg.task.kind != "modular_sum" && cfg.task.kind != "sequence_reverse") {
            throw ConfigError("task.kind: unknown task '" + cfg.task.kind + "'");
        }
        if (cfg.task.difficulty < 1) throw ConfigError("task.difficulty must be >= 1");
        if (cfg.task.train_count < 1) throw ConfigError("task.train_count must be >= 1");
    }

    if (j.contains("policy")) {
        const auto& p = j.at("policy");
        reject_unknown(p, {"embed", "hidden", "window"}, "policy");
        read(p, "embed", cfg.policy.embed);
        read(p, "hidden", cfg.policy.hidden);
        read(p, "window", cfg.policy.window);
        if (cfg.policy.embed < 1 || cfg.policy.hidden < 1 || cfg.policy.window < 1) {
            throw ConfigError("policy dims must all be >= 1");
        }
    }
    cfg.policy.vocab = cfg.task.vocab_size;

    if (j.contains("sampling")) {
        const auto& s = j.at("sampling");
        reject_unknown(s, {"temperature", "top_p", "max_response_len"}, "sampling");
        read(s, "temperature", cfg.sampling.temperature);
        read(s, "top_p", cfg.sampling.top_p);
        read(s, "max_response_len", cfg.sampling.max_response_len);
        if (cfg.sampling.temperature <= 0.0) throw ConfigError("sampling.temperature must be > 0");
        if (cfg.sampling.top_p <= 0.0 || cfg.sampling.top_p > 1.0) {
            throw ConfigError("sampling.top_p must be in (0, 1]");
        }
        if (cfg.sampling.max_response_len < 1) {
            throw ConfigError("sampling.max_response_len must be >= 1");
        }
    }

    if (j.contains("grpo")) {
        const auto& g = j.at("grpo");
        reject_unknown(g,
                       {"group_size", "eps_low", "eps_high", "beta", "std_epsilon", "inner_epochs",
                        "learning_rate", "total_steps", "prompts_per_batch"},
                       "grpo");
        read(g, "group_size", cfg.grpo.group_size);
        read(g, "eps_low", cfg.grpo.eps_low);
        read(g, "eps_high", cfg.grpo.eps_high);
        read(g, "beta", cfg.grpo.beta);
        read(g, "std_epsilon", cfg.grpo.std_epsilon);
        read(g, "inner_epochs", cfg.grpo.inner_epochs);
        read(g, "learning_rate", cfg.grpo.learning_rate);
        read(g, "total_steps", cfg.grpo.total_steps);
        read(g, "prompts_per_batch", cfg.grpo.prompts_per_batch);
        if (cfg.grpo.group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
        if (cfg.grpo.eps_low <= 0.0 || cfg.grpo.eps_low >= 1.0) {
            throw ConfigError("grpo.eps_low must be in (0, 1)");
        }
        if (cfg.grpo.eps_high <= 0.0 || cfg.grpo.eps_high >= 1.0) {
            throw ConfigError("grpo.eps_high must be in (0, 1)");
        }
        if (cfg.grpo.beta < 0.0) throw ConfigError("grpo.beta must be >= 0");
        if (cfg.grpo.total_steps < 1) throw ConfigError("grpo.total_steps must be >= 1");
        if (cfg.grpo.prompts_per_batch < 1) throw ConfigError("grpo.prompts_per_batch must be >= 1");
    }

    if (j.contains("shaping")) {
        const auto& s = j.at("shaping");
        reject_unknown(s,
                       {"mode", "alpha", "sigma_epsilon", "direction", "gamma", "d", "m", "center",
                        "start_step", "duration"},
                       "shaping");
        std::string mode = "none";
        read(s, "mode", mode);
        cfg.shaping.mode = parse_shaping_mode(mode);
        read(s, "alpha", cfg.shaping.ppl.alpha);
        read(s, "sigma_epsilon", cfg.shaping.ppl.sigma_epsilon);
        if (s.contains("direction")) {
            const std::string d = s.at("direction").get<std::string>();
            if (d == "favor_low_ppl") cfg.shaping.ppl.direction = PplDirection::favor_low_ppl;
            else if (d == "favor_high_ppl") cfg.shaping.ppl.direction = PplDirection::favor_high_ppl;
            else throw ConfigError("shaping.direction: unknown value '" + d + "'");
        }
        read(s, "gamma", cfg.shaping.position.gamma);
        read(s, "d", cfg.shaping.position.direction);
        read(s, "m", cfg.shaping.position.slope);
        read(s, "center", cfg.shaping.position.center);
        read(s, "start_step", cfg.shaping.position.start_step);
        read(s, "duration", cfg.shaping.position.duration);
        if (cfg.shaping.ppl.alpha < 0.0) throw ConfigError("shaping.alpha must be >= 0");
        if (cfg.shaping.position.gamma < 0.0) throw ConfigError("shaping.gamma must be >= 0");
        if (cfg.shaping.position.slope <= 0.0) throw ConfigError("shaping.m must be > 0");
        if (cfg.shaping.position.direction != 1.0 && cfg.shaping.position.direction != -1.0) {
            throw ConfigError("shaping.d must be +1 or -1");
        }
    }

    if (j.contains("rft")) {
        const auto& r = j.at("rft");
        reject_unknown(r,
                       {"strategy", "batch_size", "noise_fraction", "redundancy_threshold",
                        "rollouts_per_prompt", "iterations", "sft_epochs", "sft_learning_rate"},
                       "rft");
        read(r, "strategy", cfg.rft.strategy);
        parse_strategy(cfg.rft.strategy);  // validate
        read(r, "batch_size", cfg.rft.batch_size);
        read(r, "noise_fraction", cfg.rft.noise_fraction);
        read(r, "redundancy_threshold", cfg.rft.redundancy_threshold);
        read(r, "rollouts_per_prompt", cfg.rft.rollouts_per_prompt);
        read(r, "iterations", cfg.rft.iterations);
        read(r, "sft_epochs", cfg.rft.sft_epochs);
        read(r, "sft_learning_rate", cfg.rft.sft_learning_rate);
        if (cfg.rft.batch_size < 1) throw ConfigError("rft.batch_size must be >= 1");
        if (cfg.rft.noise_fraction < 0.0 || cfg.rft.noise_fraction >= 1.0) {
            throw ConfigError("rft.noise_fraction must be in [0, 1)");
        }
        if (cfg.rft.iterations < 1) throw ConfigError("rft.iterations must be >= 1");
    }

    if (j.contains("probe")) {
        const auto& p = j.at("probe");
        reject_unknown(p, {"size", "samples", "eval_every", "ks"}, "probe");
        read(p, "size", cfg.probe.size);
        read(p, "samples", cfg.probe.samples);
        read(p, "eval_every", cfg.probe.eval_every);
        read(p, "ks", cfg.probe.ks);
        if (cfg.probe.size < 1) throw ConfigError("probe.size must be >= 1");
        if (cfg.probe.samples < 1) throw ConfigError("probe.samples must be >= 1");
        if (cfg.probe.eval_every < 1) throw ConfigError("probe.eval_every must be >= 1");
    }

    read(j, "output_dir", cfg.output_dir);
    read(j, "seed", cfg.seed);
    read(j, "determinism", cfg.determinism);
    read(j, "rollout_log_every", cfg.rollout_log_every);
    if (cfg.rollout_log_every < 0) throw ConfigError("rollout_log_every must be >= 0");
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return parse_experiment_config(j);
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["schema_version"] = c.schema_version;
    j["task"] = {{"kind", c.task.kind},
                 {"difficulty", c.task.difficulty},
                 {"train_count", c.task.train_count},
                 {"vocab_size", c.task.vocab_size}};
    j["policy"] = {{"embed", c.policy.embed},
                   {"hidden", c.policy.hidden},
                   {"window", c.policy.window}};
    j["sampling"] = {{"temperature", c.sampling.temperature},
                     {"top_p", c.sampling.top_p},
                     {"max_response_len", c.sampling.max_response_len}};
    j["grpo"] = {{"group_size", c.grpo.group_size},
                 {"eps_low", c.grpo.eps_low},
                 {"eps_high", c.grpo.eps_high},
                 {"beta", c.grpo.beta},
                 {"std_epsilon", c.grpo.std_epsilon},
                 {"inner_epochs", c.grpo.inner_epochs},
                 {"learning_rate", c.grpo.learning_rate},
                 {"total_steps", c.grpo.total_steps},
                 {"prompts_per_batch", c.grpo.prompts_per_batch}};
    const char* mode = c.shaping.mode == ShapingMode::none
                           ? "none"
                           : (c.shaping.mode == ShapingMode::ppl ? "ppl" : "position");
    j["shaping"] = {
        {"mode", mode},
        {"alpha", c.shaping.ppl.alpha},
        {"sigma_epsilon", c.shaping.ppl.sigma_epsilon},
        {"direction",
         c.shaping.ppl.direction == PplDirection::favor_low_ppl ? "favor_low_ppl" : "favor_high_ppl"},
        {"gamma", c.shaping.position.gamma},
        {"d", c.shaping.position.direction},
        {"m", c.shaping.position.slope},
        {"center", c.shaping.position.center},
        {"start_step", c.shaping.position.start_step},
        {"duration", c.shaping.position.duration}};
    j["rft"] = {{"strategy", c.rft.strategy},
                {"batch_size", c.rft.batch_size},
                {"noise_fraction", c.rft.noise_fraction},
                {"redundancy_threshold", c.rft.redundancy_threshold},
                {"rollouts_per_prompt", c.rft.rollouts_per_prompt},
                {"iterations", c.rft.iterations},
                {"sft_epochs", c.rft.sft_epochs},
                {"sft_learning_rate", c.rft.sft_learning_rate}};
    j["probe"] = {{"size", c.probe.size},
                  {"samples", c.probe.samples},
                  {"eval_every", c.probe.eval_every},
                  {"ks", c.probe.ks}};
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    j["determinism"] = c.determinism;
    j["rollout_log_every"] = c.rollout_log_every;
    return j;
}

}  // namespace rlvr
