// Experiment runner for the toy RLVR laboratory.
//
// Subcommands: train-grpo, train-rft, eval, intervene, metrics.
// Exit codes: 0 ok, 1 validation error, 2 runtime error.

#include "rlvr/config.hpp"
#include "rlvr/grpo.hpp"
#include "rlvr/io.hpp"
#include "rlvr/metrics.hpp"
#include "rlvr/rft.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace rlvr;

namespace {

fs::path resolve_output_dir(const std::string& configured) {
    fs::path dir(configured);
    if (const char* root = std::getenv("RLVR_OUTPUT_ROOT"); root && *root && dir.is_relative()) {
        dir = fs::path(root) / dir;
    }
    return dir;
}

fs::path prepare_output_dir(const std::string& configured, bool force) {
    fs::path dir = resolve_output_dir(configured);
    if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
        throw ConfigError("output directory exists: " + dir.string() + " (use --force)");
    }
    fs::create_directories(dir);
    return dir;
}

struct RunArtifacts {
    Vocab vocab;
    std::vector<Prompt> dataset;
    std::vector<Prompt> probes;
};

RunArtifacts build_task(const ExperimentConfig& cfg) {
    RunArtifacts a;
    a.vocab = build_vocab({cfg.task.vocab_size});
    a.dataset = generate_dataset(a.vocab, cfg.task.kind, cfg.task.difficulty, cfg.task.train_count,
                                 derive_seed(cfg.seed, "train-data"));
    a.probes = generate_dataset(a.vocab, cfg.task.kind, cfg.task.difficulty, cfg.probe.size,
                                derive_seed(cfg.seed, "probe-data"));
    return a;
}

int cmd_train_grpo(const std::string& config_path, bool force, bool dry_run) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (dry_run) {
        std::cout << "config ok: " << config_path << '\n';
        return 0;
    }
    fs::path out = prepare_output_dir(cfg.output_dir, force);
    RunArtifacts task = build_task(cfg);
    save_dataset_jsonl(out / "dataset.jsonl", task.dataset, derive_seed(cfg.seed, "train-data"));
    save_dataset_jsonl(out / "probes.jsonl", task.probes, derive_seed(cfg.seed, "probe-data"));
    {
        std::ofstream rc(out / "config.resolved.json");
        rc << experiment_config_to_json(cfg).dump(2) << '\n';
    }

    MetricsCsvWriter metrics_csv(out / "metrics.csv");
    RolloutLogWriter rollout_log(out / "rollouts.jsonl");
    TrainSinks sinks;
    sinks.on_metrics = [&](const MetricsRecord& r) { metrics_csv.write(r); };
    const int cadence = cfg.rollout_log_every;
    sinks.on_group = [&](int step, const RolloutGroup& g) {
        if (cadence > 0 && step % cadence == 0) rollout_log.write(step, g);
    };

    GrpoConfig grpo = cfg.grpo;
    grpo.seed = cfg.seed;
    TrainResult result = train_grpo(task.vocab, task.dataset, task.probes, cfg.policy, cfg.sampling,
                                    grpo, cfg.shaping, {cfg.probe.size, cfg.probe.samples,
                                                        cfg.probe.eval_every}, sinks);
    save_checkpoint(out / "checkpoint.json", result.params, cfg.seed);
    std::cout << "train-grpo done: " << result.metrics.size() << " steps, final pass@1 probe "
              << result.metrics.back().pass1_probe << '\n';
    return 0;
}

int cmd_train_rft(const std::string& config_path, bool force, bool dry_run) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (dry_run) {
        std::cout << "config ok: " << config_path << '\n';
        return 0;
    }
    fs::path out = prepare_output_dir(cfg.output_dir, force);
    RunArtifacts task = build_task(cfg);
    save_dataset_jsonl(out / "dataset.jsonl", task.dataset, derive_seed(cfg.seed, "train-data"));
    {
        std::ofstream rc(out / "config.resolved.json");
        rc << experiment_config_to_json(cfg).dump(2) << '\n';
    }

    PolicyParams params = init_policy(cfg.policy, cfg.seed);
    RftConfig rft;
    rft.selection.strategy = parse_strategy(cfg.rft.strategy);
    rft.selection.batch_size = cfg.rft.batch_size;
    rft.selection.noise_fraction = cfg.rft.noise_fraction;
    rft.selection.redundancy_threshold = cfg.rft.redundancy_threshold;
    rft.sampling = cfg.sampling;
    rft.rollouts_per_prompt = cfg.rft.rollouts_per_prompt;
    rft.sft_epochs = cfg.rft.sft_epochs;
    rft.sft_learning_rate = cfg.rft.sft_learning_rate;
    rft.probe_samples = cfg.probe.samples;
    rft.probe_ks = cfg.probe.ks;

    for (int it = 0; it < cfg.rft.iterations; ++it) {
        RftIterationReport rep = rft_iteration(params, task.vocab, task.dataset, task.probes, rft,
                                               derive_seed(cfg.seed, "rft-iter",
                                                           static_cast<std::uint64_t>(it)));
        json j{{"iteration", it},
               {"candidates", rep.candidates},
               {"passed_filter", rep.passed_filter},
               {"rejected_no_box", rep.rejected_no_box},
               {"rejected_no_digit", rep.rejected_no_digit},
               {"rejected_redundancy", rep.rejected_redundancy},
               {"candidate_pass_rate", rep.candidate_pass_rate},
               {"batch_positives", rep.batch_positives},
               {"batch_negatives", rep.batch_negatives},
               {"short_supply", rep.short_supply},
               {"sft_loss", rep.sft_loss},
               {"probe_pass1_before", rep.probe_pass1_before},
               {"probe_pass1_after", rep.probe_pass1_after}};
        for (auto& [k, v] : rep.probe_passk_before) j["probe_passk_before"][std::to_string(k)] = v;
        for (auto& [k, v] : rep.probe_passk_after) j["probe_passk_after"][std::to_string(k)] = v;
        std::ostringstream name;
        name << "rft_report_" << it << ".json";
        std::ofstream(out / name.str()) << j.dump(2) << '\n';
        std::ostringstream ck;
        ck << "checkpoint_" << it << ".json";
        save_checkpoint(out / ck.str(), params, cfg.seed);
        std::cout << "rft iter " << it << ": pass@1 " << rep.probe_pass1_before << " -> "
                  << rep.probe_pass1_after << '\n';
    }
    save_checkpoint(out / "checkpoint.json", params, cfg.seed);
    return 0;
}

std::vector<PromptOutcomes> sample_outcomes(const PolicyParams& params, const Vocab& vocab,
                                            const std::vector<Prompt>& prompts, int n,
                                            const SamplingConfig& scfg, std::uint64_t seed,
                                            std::map<std::int64_t, std::set<std::int64_t>>* answers) {
    std::vector<PromptOutcomes> out;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        PromptOutcomes po;
        po.prompt_id = prompts[i].prompt_id;
        Rng rng(derive_seed(seed, "eval", i));
        for (int j = 0; j < n; ++j) {
            Rollout r = sample_response(params, vocab, prompts[i], scfg, rng);
            po.rewards.push_back(verify(vocab, prompts[i], r.tokens).reward);
            if (answers) {
                auto span = extract_boxed(vocab, r.tokens);
                if (span) {
                    std::int64_t v = 0;
                    bool numeric = !span->payload.empty() && span->payload.size() <= 18;
                    for (TokenId t : span->payload) {
                        if (!vocab.is_digit(t)) { numeric = false; break; }
                        v = v * 10 + vocab.digit_value(t);
                    }
                    if (numeric) (*answers)[po.prompt_id].insert(v);
                }
            }
        }
        out.push_back(std::move(po));
    }
    return out;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path, int n,
             std::vector<int> ks, const std::string& out_dir, const std::string& compare_path,
             bool force, bool dry_run) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (ks.empty()) ks = cfg.probe.ks;
    int max_k = *std::max_element(ks.begin(), ks.end());
    if (n < max_k) throw UsageError("eval: n must be >= max(ks)");
    if (dry_run) {
        std::cout << "config ok: " << config_path << '\n';
        return 0;
    }
    fs::path out = prepare_output_dir(out_dir, force);
    PolicyParams params = load_checkpoint(checkpoint_path);
    Vocab vocab = build_vocab({params.dims.vocab});
    std::vector<Prompt> probes =
        generate_dataset(vocab, cfg.task.kind, cfg.task.difficulty, cfg.probe.size,
                         derive_seed(cfg.seed, "probe-data"));

    std::map<std::int64_t, std::set<std::int64_t>> answers;
    auto outcomes = sample_outcomes(params, vocab, probes, n, cfg.sampling,
                                    derive_seed(cfg.seed, "eval-a"), &answers);

    {
        std::ofstream csv(out / "pass_at_k.csv");
        csv << "k,pass_at_k\n";
        for (int k : ks) csv << k << ',' << format_double(pass_at_k_dataset(outcomes, k)) << '\n';
    }
    {
        json j;
        for (int k : ks) {
            auto us = unsolvable_set(outcomes, k);
            j[std::to_string(k)] = std::vector<std::int64_t>(us.prompt_ids.begin(),
                                                             us.prompt_ids.end());
        }
        std::ofstream(out / "unsolvable_sets.json") << j.dump(2) << '\n';
    }
    {
        std::ofstream csv(out / "diversity.csv");
        csv << "prompt_id,distinct_answers\n";
        for (const auto& p : probes) {
            csv << p.prompt_id << ',' << answers[p.prompt_id].size() << '\n';
        }
    }
    if (!compare_path.empty()) {
        PolicyParams other = load_checkpoint(compare_path);
        auto other_outcomes = sample_outcomes(other, vocab, probes, n, cfg.sampling,
                                              derive_seed(cfg.seed, "eval-b"), nullptr);
        json j;
        for (int k : ks) {
            auto ua = unsolvable_set(outcomes, k);
            auto ub = unsolvable_set(other_outcomes, k);
            j[std::to_string(k)] = venn_partition(ua, ub);
        }
        std::ofstream(out / "venn.json") << j.dump(2) << '\n';
    }
    std::cout << "eval done: " << out.string() << '\n';
    return 0;
}

int cmd_intervene(const std::string& checkpoint_path, const std::string& rollouts_path,
                  const std::string& dataset_path, const std::string& positions_spec, int k,
                  std::uint64_t seed, const std::string& out_dir, bool force, bool dry_run) {
    if (k < 1) throw UsageError("intervene: k must be >= 1");
    if (dry_run) return 0;
    fs::path out = prepare_output_dir(out_dir, force);
    PolicyParams params = load_checkpoint(checkpoint_path);
    Vocab vocab = build_vocab({params.dims.vocab});
    auto prompts = load_dataset_jsonl(dataset_path);
    std::map<std::int64_t, const Prompt*> by_id;
    for (const auto& p : prompts) by_id[p.prompt_id] = &p;
    auto entries = load_rollout_log(rollouts_path);

    // positions spec: "all", "top-entropy:Q" (percent), or comma list "0,2,5"
    std::vector<std::pair<std::size_t, Index>> positions;  // (entry index, t)
    if (positions_spec == "all") {
        for (std::size_t e = 0; e < entries.size(); ++e)
            for (std::size_t t = 0; t < entries[e].tokens.size(); ++t)
                positions.emplace_back(e, static_cast<Index>(t));
    } else if (positions_spec.rfind("top-entropy:", 0) == 0) {
        double q = std::stod(positions_spec.substr(12));
        if (q <= 0.0 || q > 100.0) throw UsageError("top-entropy percentage must be in (0, 100]");
        std::vector<std::tuple<double, std::size_t, Index>> ranked;
        for (std::size_t e = 0; e < entries.size(); ++e)
            for (std::size_t t = 0; t < entries[e].tokens.size(); ++t)
                ranked.emplace_back(entries[e].entropy[t], e, static_cast<Index>(t));
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            return std::get<0>(a) > std::get<0>(b);
        });
        const std::size_t take = static_cast<std::size_t>(
            std::ceil(q / 100.0 * static_cast<double>(ranked.size())));
        for (std::size_t i = 0; i < std::min(take, ranked.size()); ++i)
            positions.emplace_back(std::get<1>(ranked[i]), std::get<2>(ranked[i]));
    } else {
        std::stringstream ss(positions_spec);
        std::string item;
        std::vector<Index> ts;
        while (std::getline(ss, item, ',')) ts.push_back(std::stoll(item));
        for (std::size_t e = 0; e < entries.size(); ++e)
            for (Index t : ts) positions.emplace_back(e, t);
    }

    std::ofstream csv(out / "intervention.csv");
    csv << "prompt_id,rollout,t,entropy,relative_position,impact\n";
    VerifierFn verifier = default_verifier(vocab);
    for (auto [e, t] : positions) {
        const auto& entry = entries[e];
        auto it = by_id.find(entry.prompt_id);
        if (it == by_id.end()) {
            std::cerr << "skipping rollout for unknown prompt " << entry.prompt_id << '\n';
            continue;
        }
        if (t < 0 || t >= static_cast<Index>(entry.tokens.size())) {
            std::cerr << "position " << t << " out of range for rollout of prompt "
                      << entry.prompt_id << '\n';
            continue;
        }
        Rollout r;
        r.prompt_id = entry.prompt_id;
        r.tokens = entry.tokens;
        Rng rng(derive_seed(seed, "intervene", e, static_cast<std::uint64_t>(t)));
        double impact = intervention_impact(params, vocab, *it->second, r, t, k,
                                            ExperimentConfig{}.sampling, verifier, rng);
        const double rel = entry.tokens.size() == 1
                               ? 0.0
                               : static_cast<double>(t) /
                                     static_cast<double>(entry.tokens.size() - 1);
        csv << entry.prompt_id << ',' << e << ',' << t << ','
            << format_double(entry.entropy[static_cast<std::size_t>(t)]) << ','
            << format_double(rel) << ',' << format_double(impact) << '\n';
    }
    std::cout << "intervene done: " << (out / "intervention.csv").string() << '\n';
    return 0;
}

int cmd_metrics(const std::string& rollouts_path, std::vector<int> ks, const std::string& out_dir,
                bool force, bool dry_run) {
    if (dry_run) return 0;
    fs::path out = prepare_output_dir(out_dir, force);
    auto entries = load_rollout_log(rollouts_path);
    auto outcomes = outcomes_from_log(entries);

    double ent = 0.0, rbf = 0.0, reward = 0.0, len = 0.0;
    std::size_t tokens = 0;
    for (const auto& e : entries) {
        reward += e.reward;
        len += static_cast<double>(e.tokens.size());
        for (std::size_t t = 0; t < e.entropy.size(); ++t) {
            ent += e.entropy[t];
            rbf += e.rbf[t];
            ++tokens;
        }
    }
    json summary{{"rollouts", entries.size()},
                 {"reward_mean", entries.empty() ? 0.0 : reward / entries.size()},
                 {"length_mean", entries.empty() ? 0.0 : len / entries.size()},
                 {"entropy_mean", tokens == 0 ? 0.0 : ent / tokens},
                 {"rbf_mean", tokens == 0 ? 0.0 : rbf / tokens}};
    if (ks.empty()) ks = {1};
    int min_n = entries.empty() ? 0 : outcomes.front().n();
    for (const auto& p : outcomes) min_n = std::min(min_n, p.n());
    for (int k : ks) {
        if (k <= min_n) summary["pass_at_k"][std::to_string(k)] = pass_at_k_dataset(outcomes, k);
    }
    std::ofstream(out / "summary.json") << summary.dump(2) << '\n';

    std::ofstream csv(out / "per_prompt.csv");
    csv << "prompt_id,n,c,pass1\n";
    for (const auto& p : outcomes) {
        csv << p.prompt_id << ',' << p.n() << ',' << p.c() << ','
            << format_double(static_cast<double>(p.c()) / static_cast<double>(p.n())) << '\n';
    }
    std::cout << "metrics done: " << out.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy RLVR laboratory"};
    app.require_subcommand(1);
    bool force = false, dry_run = false;

    std::string config_path, checkpoint_path, compare_path, rollouts_path, dataset_path;
    std::string positions_spec = "all", out_dir = "eval_out";
    int n = 16, k = 4;
    std::uint64_t seed = 1;
    std::vector<int> ks;

    auto add_common = [&](CLI::App* sub) {
        sub->add_flag("--force", force, "overwrite existing output directory");
        sub->add_flag("--dry-run", dry_run, "validate configuration and exit without writing files");
    };

    auto* tg = app.add_subcommand("train-grpo", "run GRPO training from a config file");
    tg->add_option("config", config_path, "experiment config JSON")->required();
    add_common(tg);

    auto* tr = app.add_subcommand("train-rft", "run rejection-sampling fine-tuning iterations");
    tr->add_option("config", config_path, "experiment config JSON")->required();
    add_common(tr);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint with Pass@k and unsolvable sets");
    ev->add_option("--checkpoint", checkpoint_path)->required();
    ev->add_option("--config", config_path, "experiment config (task section is used)")->required();
    ev->add_option("-n", n, "samples per prompt");
    ev->add_option("--ks", ks, "k values");
    ev->add_option("--out", out_dir);
    ev->add_option("--compare", compare_path, "second checkpoint for unsolvable-set Venn overlap");
    add_common(ev);

    auto* iv = app.add_subcommand("intervene", "token replacement intervention analysis");
    iv->add_option("--checkpoint", checkpoint_path)->required();
    iv->add_option("--rollouts", rollouts_path)->required();
    iv->add_option("--dataset", dataset_path)->required();
    iv->add_option("--positions", positions_spec, "all | top-entropy:Q | comma list");
    iv->add_option("-k", k, "continuations per branch");
    iv->add_option("--seed", seed);
    iv->add_option("--out", out_dir);
    add_common(iv);

    auto* me = app.add_subcommand("metrics", "recompute metrics from a rollout log");
    me->add_option("--rollouts", rollouts_path)->required();
    me->add_option("--ks", ks);
    me->add_option("--out", out_dir);
    add_common(me);

    try {
        app.parse(argc, argv);
        if (tg->parsed()) return cmd_train_grpo(config_path, force, dry_run);
        if (tr->parsed()) return cmd_train_rft(config_path, force, dry_run);
        if (ev->parsed())
            return cmd_eval(checkpoint_path, config_path, n, ks, out_dir, compare_path, force,
                            dry_run);
        if (iv->parsed())
            return cmd_intervene(checkpoint_path, rollouts_path, dataset_path, positions_spec, k,
                                 seed, out_dir, force, dry_run);
        if (me->parsed()) return cmd_metrics(rollouts_path, ks, out_dir, force, dry_run);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
