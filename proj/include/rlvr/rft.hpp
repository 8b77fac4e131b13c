#pragma once

#include "rlvr/common.hpp"
#include "rlvr/grpo.hpp"
#include "rlvr/metrics.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/vocab_task.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace rlvr {

struct FilterReport {
    bool has_box = false;
    bool has_digit = false;
    std::optional<Index> truncated_at;  // cut position when truncation changed the sequence
    double trigram_redundancy = 0.0;
    bool passed = false;
};

enum class SelectionStrategy { rule_only, noisy_mix, high_entropy, high_rbf, noisy_plus_rbf };

struct SelectionConfig {
    SelectionStrategy strategy = SelectionStrategy::rule_only;
    int batch_size = 128;
    double noise_fraction = 0.05;
    double redundancy_threshold = 0.31;
};

struct RuleFilterResult {
    FilterReport report;
    std::vector<TokenId> tokens;  // truncated sequence the checks were evaluated on
};

// Truncation first (everything after the first BOX_CLOSE removed, EOS
// appended), then box/digit/redundancy checks on the truncated sequence.
inline RuleFilterResult rule_filter(const Vocab& vocab, std::span<const TokenId> response,
                                    double redundancy_threshold = 0.31) {
    RuleFilterResult out;
    auto close = std::find(response.begin(), response.end(), vocab.box_close);
    if (close != response.end()) {
        const Index keep = static_cast<Index>(close - response.begin()) + 1;
        out.tokens.assign(response.begin(), response.begin() + keep);
        out.tokens.push_back(vocab.eos);
        const std::size_t tail = response.size() - static_cast<std::size_t>(keep);
        const bool tail_is_eos = tail == 1 && response[static_cast<std::size_t>(keep)] == vocab.eos;
        if (tail > 0 && !tail_is_eos) out.report.truncated_at = keep;
    } else {
        out.tokens.assign(response.begin(), response.end());
    }
    auto span = extract_boxed(vocab, out.tokens);
    out.report.has_box = span.has_value();
    out.report.has_digit =
        std::any_of(out.tokens.begin(), out.tokens.end(), [&](TokenId t) { return vocab.is_digit(t); });
    out.report.trigram_redundancy = trigram_redundancy(out.tokens);
    out.report.passed = out.report.has_box && out.report.has_digit &&
                        out.report.trigram_redundancy <= redundancy_threshold;
    return out;
}

struct CandidateScore {
    double mean_entropy = 0.0;
    double mean_rbf = 1.0;
    int reward = 0;
};

inline CandidateScore score_candidate(const Rollout& rollout, double top_p = 0.95) {
    CandidateScore s;
    s.reward = rollout.reward;
    if (rollout.steps.empty()) return s;
    double ent = 0.0, rbf = 0.0;
    for (const auto& step : rollout.steps) {
        ent += token_entropy(step.probs);
        rbf += rollout_branching_factor(step.probs, top_p);
    }
    s.mean_entropy = ent / static_cast<double>(rollout.steps.size());
    s.mean_rbf = rbf / static_cast<double>(rollout.steps.size());
    return s;
}

struct Candidate {
    std::int64_t prompt_id = 0;
    int rollout_index = 0;  // recording order within the sampling pass
    const Prompt* prompt = nullptr;
    std::vector<TokenId> train_tokens;  // truncated response used for SFT
    FilterReport report;
    CandidateScore score;
};

struct BatchComposition {
    std::vector<std::size_t> selected;  // indices into the candidate list
    std::size_t positives = 0;
    std::size_t negatives = 0;
    bool short_supply = false;  // fewer passing candidates than requested
};

// Selection over filter-passing candidates.  Positives are reward-1,
// negatives reward-0; both must pass the rule filter.  Score ties break by
// (prompt_id, rollout_index); "recency" means latest recording order first.
inline BatchComposition select_batch(const std::vector<Candidate>& candidates,
                                     const SelectionConfig& cfg, Rng& rng) {
    if (cfg.noise_fraction < 0.0 || cfg.noise_fraction >= 1.0) {
        throw ConfigError("noise_fraction must be in [0, 1)");
    }
    std::vector<std::size_t> positives, negatives;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (!candidates[i].report.passed) continue;
        (candidates[i].score.reward == 1 ? positives : negatives).push_back(i);
    }

    auto by_recency = [&](std::vector<std::size_t>& idx) {
        std::reverse(idx.begin(), idx.end());
    };
    auto by_score_desc = [&](std::vector<std::size_t>& idx, auto key) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const double ka = key(candidates[a]), kb = key(candidates[b]);
            if (ka != kb) return ka > kb;
            if (candidates[a].prompt_id != candidates[b].prompt_id)
                return candidates[a].prompt_id < candidates[b].prompt_id;
            return candidates[a].rollout_index < candidates[b].rollout_index;
        });
    };

    const bool noisy = cfg.strategy == SelectionStrategy::noisy_mix ||
                       cfg.strategy == SelectionStrategy::noisy_plus_rbf;
    std::size_t noise_quota = 0;
    if (noisy) {
        noise_quota = static_cast<std::size_t>(
            std::ceil(cfg.noise_fraction * static_cast<double>(cfg.batch_size)));
    }

    switch (cfg.strategy) {
        case SelectionStrategy::rule_only:
        case SelectionStrategy::noisy_mix:
            by_recency(positives);
            break;
        case SelectionStrategy::high_entropy:
            by_score_desc(positives, [](const Candidate& c) { return c.score.mean_entropy; });
            break;
        case SelectionStrategy::high_rbf:
        case SelectionStrategy::noisy_plus_rbf:
            by_score_desc(positives, [](const Candidate& c) { return c.score.mean_rbf; });
            break;
    }

    BatchComposition out;
    if (noisy && !negatives.empty()) {
        std::vector<std::size_t> pool = negatives;
        std::shuffle(pool.begin(), pool.end(), rng);
        const std::size_t take = std::min(noise_quota, pool.size());
        for (std::size_t i = 0; i < take; ++i) out.selected.push_back(pool[i]);
        out.negatives = take;
    }
    if (noisy && out.negatives < noise_quota) out.short_supply = true;

    const std::size_t want_pos = static_cast<std::size_t>(cfg.batch_size) - out.negatives;
    const std::size_t take_pos = std::min(want_pos, positives.size());
    for (std::size_t i = 0; i < take_pos; ++i) out.selected.push_back(positives[i]);
    out.positives = take_pos;
    if (take_pos < want_pos) out.short_supply = true;
    return out;
}

struct RftConfig {
    SelectionConfig selection;
    SamplingConfig sampling;
    int rollouts_per_prompt = 8;
    int sft_epochs = 1;
    double sft_learning_rate = 0.5;
    int probe_samples = 8;
    std::vector<int> probe_ks = {1, 4};
};

struct RftIterationReport {
    std::size_t candidates = 0;
    std::size_t passed_filter = 0;
    std::size_t rejected_no_box = 0;
    std::size_t rejected_no_digit = 0;
    std::size_t rejected_redundancy = 0;
    double candidate_pass_rate = 0.0;  // reward-1 fraction among all candidates
    std::size_t batch_positives = 0;
    std::size_t batch_negatives = 0;
    bool short_supply = false;
    double sft_loss = 0.0;
    double probe_pass1_before = 0.0;
    double probe_pass1_after = 0.0;
    std::vector<std::pair<int, double>> probe_passk_before;
    std::vector<std::pair<int, double>> probe_passk_after;
};

template <typename Scalar>
std::vector<PromptOutcomes> probe_outcomes(const PolicyParamsT<Scalar>& params, const Vocab& vocab,
                                           const std::vector<Prompt>& probes, int samples,
                                           const SamplingConfig& scfg, std::uint64_t seed) {
    std::vector<PromptOutcomes> out;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        PromptOutcomes po;
        po.prompt_id = probes[i].prompt_id;
        Rng rng(derive_seed(seed, "rft-probe", i));
        for (int j = 0; j < samples; ++j) {
            Rollout r = sample_response(params, vocab, probes[i], scfg, rng);
            po.rewards.push_back(verify(vocab, probes[i], r.tokens).reward);
        }
        out.push_back(std::move(po));
    }
    return out;
}

// One rejection-sampling fine-tuning round: sample, verify, filter, select,
// cross-entropy update.
template <typename Scalar>
RftIterationReport rft_iteration(PolicyParamsT<Scalar>& params, const Vocab& vocab,
                                 const std::vector<Prompt>& dataset,
                                 const std::vector<Prompt>& probes, const RftConfig& cfg,
                                 std::uint64_t seed) {
    RftIterationReport report;
    const PolicyParamsT<Scalar> frozen = snapshot_reference(params);

    auto eval = [&](std::uint64_t s, double& pass1, std::vector<std::pair<int, double>>& passk) {
        auto outcomes = probe_outcomes(frozen, vocab, probes, cfg.probe_samples, cfg.sampling, s);
        pass1 = pass_at_k_dataset(outcomes, 1);
        for (int k : cfg.probe_ks) passk.emplace_back(k, pass_at_k_dataset(outcomes, k));
    };
    auto eval_after = [&](std::uint64_t s, double& pass1, std::vector<std::pair<int, double>>& passk) {
        auto outcomes = probe_outcomes(params, vocab, probes, cfg.probe_samples, cfg.sampling, s);
        pass1 = pass_at_k_dataset(outcomes, 1);
        for (int k : cfg.probe_ks) passk.emplace_back(k, pass_at_k_dataset(outcomes, k));
    };
    eval(derive_seed(seed, "before"), report.probe_pass1_before, report.probe_passk_before);

    std::vector<Candidate> candidates;
    std::size_t correct = 0;
    for (std::size_t pi = 0; pi < dataset.size(); ++pi) {
        Rng rng(derive_seed(seed, "rft-sample", pi));
        for (int j = 0; j < cfg.rollouts_per_prompt; ++j) {
            Rollout r = sample_response(frozen, vocab, dataset[pi], cfg.sampling, rng);
            r.reward = verify(vocab, dataset[pi], r.tokens).reward;
            correct += static_cast<std::size_t>(r.reward);
            auto filtered = rule_filter(vocab, r.tokens, cfg.selection.redundancy_threshold);
            Candidate c;
            c.prompt_id = dataset[pi].prompt_id;
            c.rollout_index = j;
            c.prompt = &dataset[pi];
            c.train_tokens = std::move(filtered.tokens);
            c.report = filtered.report;
            c.score = score_candidate(r);
            if (c.report.passed) ++report.passed_filter;
            else if (!c.report.has_box) ++report.rejected_no_box;
            else if (!c.report.has_digit) ++report.rejected_no_digit;
            else ++report.rejected_redundancy;
            candidates.push_back(std::move(c));
        }
    }
    report.candidates = candidates.size();
    report.candidate_pass_rate =
        candidates.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(candidates.size());

    Rng select_rng(derive_seed(seed, "rft-select"));
    BatchComposition batch = select_batch(candidates, cfg.selection, select_rng);
    report.batch_positives = batch.positives;
    report.batch_negatives = batch.negatives;
    report.short_supply = batch.short_supply;

    if (!batch.selected.empty()) {
        std::vector<SftBatchItem> items;
        items.reserve(batch.selected.size());
        for (std::size_t idx : batch.selected) {
            items.push_back({&candidates[idx].prompt->tokens, &candidates[idx].train_tokens});
        }
        for (int e = 0; e < cfg.sft_epochs; ++e) {
            report.sft_loss = sft_update(params, std::span<const SftBatchItem>(items),
                                         cfg.sft_learning_rate);
        }
    }

    eval_after(derive_seed(seed, "after"), report.probe_pass1_after, report.probe_passk_after);
    return report;
}

}  // namespace rlvr
