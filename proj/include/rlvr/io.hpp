#pragma once

#include "rlvr/common.hpp"
#include "rlvr/grpo.hpp"
#include "rlvr/metrics.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/vocab_task.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace rlvr {

using json = nlohmann::json;

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

// ---------------------------------------------------------------- dataset

inline void save_dataset_jsonl(const std::filesystem::path& path,
                               const std::vector<Prompt>& prompts, std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    for (const auto& p : prompts) {
        json j{{"prompt_id", p.prompt_id}, {"tokens", p.tokens},   {"answer", p.answer},
               {"task_kind", p.task_kind}, {"difficulty", p.difficulty}, {"seed", seed}};
        out << j.dump() << '\n';
    }
}

inline std::vector<Prompt> load_dataset_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset: " + path.string());
    std::vector<Prompt> prompts;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        Prompt p;
        p.prompt_id = j.at("prompt_id").get<std::int64_t>();
        p.tokens = j.at("tokens").get<std::vector<TokenId>>();
        p.answer = j.at("answer").get<std::int64_t>();
        p.task_kind = j.at("task_kind").get<std::string>();
        p.difficulty = j.at("difficulty").get<int>();
        prompts.push_back(std::move(p));
    }
    return prompts;
}

// ---------------------------------------------------------------- checkpoint

inline json matrix_to_json(const Mat& m) {
    std::vector<double> flat(static_cast<std::size_t>(m.size()));
    Eigen::Map<Mat>(flat.data(), m.rows(), m.cols()) = m;
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

inline Mat matrix_from_json(const json& j) {
    const Index rows = j.at("rows").get<Index>();
    const Index cols = j.at("cols").get<Index>();
    auto flat = j.at("data").get<std::vector<double>>();
    if (static_cast<Index>(flat.size()) != rows * cols) {
        throw DataError("checkpoint: matrix size mismatch");
    }
    return Eigen::Map<Mat>(flat.data(), rows, cols);
}

inline void save_checkpoint(const std::filesystem::path& path, const PolicyParams& p,
                            std::uint64_t seed) {
    json j{{"format", "rlvr-checkpoint"},
           {"version", 1},
           {"seed", seed},
           {"dims",
            {{"vocab", p.dims.vocab},
             {"embed", p.dims.embed},
             {"hidden", p.dims.hidden},
             {"window", p.dims.window}}},
           {"embedding", matrix_to_json(p.embedding)},
           {"w1", matrix_to_json(p.w1)},
           {"b1", matrix_to_json(p.b1)},
           {"head", matrix_to_json(p.head)},
           {"b2", matrix_to_json(p.b2)}};
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << j.dump() << '\n';
}

inline PolicyParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    json j = json::parse(in);
    if (j.value("format", "") != "rlvr-checkpoint") {
        throw DataError("not a checkpoint file: " + path.string());
    }
    if (j.at("version").get<int>() != 1) throw DataError("unsupported checkpoint version");
    PolicyParams p;
    p.dims.vocab = j.at("dims").at("vocab").get<int>();
    p.dims.embed = j.at("dims").at("embed").get<int>();
    p.dims.hidden = j.at("dims").at("hidden").get<int>();
    p.dims.window = j.at("dims").at("window").get<int>();
    p.embedding = matrix_from_json(j.at("embedding"));
    p.w1 = matrix_from_json(j.at("w1"));
    p.b1 = matrix_from_json(j.at("b1"));
    p.head = matrix_from_json(j.at("head"));
    p.b2 = matrix_from_json(j.at("b2"));
    return p;
}

// ---------------------------------------------------------------- logs

inline constexpr const char* kMetricsCsvHeader =
    "step,reward_mean,entropy_mean,pass1_probe,clip_frac,kl_mean,rbf_mean,len_mean";

class MetricsCsvWriter {
  public:
    explicit MetricsCsvWriter(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw DataError("cannot open for writing: " + path.string());
        out_ << kMetricsCsvHeader << '\n';
    }
    void write(const MetricsRecord& r) {
        out_ << r.step << ',' << format_double(r.reward_mean) << ','
             << format_double(r.entropy_mean) << ',' << format_double(r.pass1_probe) << ','
             << format_double(r.clip_fraction) << ',' << format_double(r.kl_mean) << ','
             << format_double(r.rbf_mean) << ',' << format_double(r.length_mean) << '\n';
    }

  private:
    std::ofstream out_;
};

class RolloutLogWriter {
  public:
    explicit RolloutLogWriter(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw DataError("cannot open for writing: " + path.string());
    }
    void write(int step, const RolloutGroup& group) {
        for (const auto& r : group.rollouts) {
            std::vector<double> lp(r.logprobs_old.data(), r.logprobs_old.data() + r.logprobs_old.size());
            std::vector<double> entropy, rbf;
            for (const auto& s : r.steps) {
                entropy.push_back(token_entropy(s.probs));
                rbf.push_back(rollout_branching_factor(s.probs, 0.95));
            }
            json j{{"step", step},           {"prompt_id", group.prompt_id},
                   {"tokens", r.tokens},     {"logprobs_old", lp},
                   {"reward", r.reward},     {"entropy", entropy},
                   {"rbf", rbf}};
            out_ << j.dump() << '\n';
        }
    }

  private:
    std::ofstream out_;
};

struct RolloutLogEntry {
    int step = 0;
    std::int64_t prompt_id = 0;
    std::vector<TokenId> tokens;
    std::vector<double> logprobs_old;
    int reward = 0;
    std::vector<double> entropy;
    std::vector<double> rbf;
};

inline std::vector<RolloutLogEntry> load_rollout_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open rollout log: " + path.string());
    std::vector<RolloutLogEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        RolloutLogEntry e;
        e.step = j.at("step").get<int>();
        e.prompt_id = j.at("prompt_id").get<std::int64_t>();
        e.tokens = j.at("tokens").get<std::vector<TokenId>>();
        e.logprobs_old = j.at("logprobs_old").get<std::vector<double>>();
        e.reward = j.at("reward").get<int>();
        e.entropy = j.at("entropy").get<std::vector<double>>();
        e.rbf = j.at("rbf").get<std::vector<double>>();
        entries.push_back(std::move(e));
    }
    return entries;
}

// Group log entries into per-prompt outcome lists, preserving recording order.
inline std::vector<PromptOutcomes> outcomes_from_log(const std::vector<RolloutLogEntry>& entries) {
    std::vector<PromptOutcomes> out;
    std::map<std::int64_t, std::size_t> index;
    for (const auto& e : entries) {
        auto [it, inserted] = index.try_emplace(e.prompt_id, out.size());
        if (inserted) {
            PromptOutcomes po;
            po.prompt_id = e.prompt_id;
            out.push_back(po);
        }
        out[it->second].rewards.push_back(e.reward);
    }
    return out;
}

}  // namespace rlvr
