#pragma once

#include "rlvr/common.hpp"
#include "rlvr/metrics.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/shaping.hpp"
#include "rlvr/vocab_task.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace rlvr {

struct RolloutGroup {
    std::int64_t prompt_id = 0;
    const Prompt* prompt = nullptr;
    std::vector<Rollout> rollouts;  // G >= 2, each verified
};

struct GrpoConfig {
    int group_size = 8;
    double eps_low = 0.2;
    double eps_high = 0.2;  // asymmetric bounds allowed (Clip-Higher style)
    double beta = 0.01;
    double std_epsilon = 1e-6;
    int inner_epochs = 1;
    double learning_rate = 0.005;
    int total_steps = 3000;
    int prompts_per_batch = 16;
    std::uint64_t seed = 0;
};

template <typename Scalar>
RolloutGroup collect_group(const PolicyParamsT<Scalar>& old_policy, const Vocab& vocab,
                           const Prompt& prompt, int group_size, const SamplingConfig& cfg,
                           Rng& rng) {
    if (group_size < 2) throw ConfigError("group size must be >= 2");
    RolloutGroup group;
    group.prompt_id = prompt.prompt_id;
    group.prompt = &prompt;
    group.rollouts.reserve(static_cast<std::size_t>(group_size));
    for (int i = 0; i < group_size; ++i) {
        Rollout r = sample_response(old_policy, vocab, prompt, cfg, rng);
        r.reward = verify(vocab, prompt, r.tokens).reward;
        if (r.length() > 0) {
            r.logprobs_old = logprobs_under(old_policy, prompt.tokens, std::span<const TokenId>(r.tokens));
        }
        group.rollouts.push_back(std::move(r));
    }
    return group;
}

// A_t^i = (R^i - mean(R)) / std(R), population std, broadcast over tokens;
// all zero when the group reward variance vanishes.
inline AdvantageTensor compute_advantages(const RolloutGroup& group, double std_epsilon = 1e-6) {
    const Index g = static_cast<Index>(group.rollouts.size());
    Vec rewards(g);
    for (Index i = 0; i < g; ++i) rewards[i] = group.rollouts[static_cast<std::size_t>(i)].reward;
    const double mean = rewards.mean();
    const double stddev = std::sqrt((rewards.array() - mean).square().mean());
    AdvantageTensor adv;
    adv.tag = AdvantageTag::raw;
    for (Index i = 0; i < g; ++i) {
        const double a = stddev < std_epsilon ? 0.0 : (rewards[i] - mean) / stddev;
        adv.per_rollout.push_back(
            Vec::Constant(group.rollouts[static_cast<std::size_t>(i)].length(), a));
    }
    return adv;
}

struct GrpoDiagnostics {
    double clip_fraction = 0.0;
    double kl_mean = 0.0;
    double ratio_mean = 0.0;
    std::size_t token_count = 0;
};

// Per-token term: min(r A, clip(r, 1-eps_low, 1+eps_high) A) - beta * KL,
// with KL computed exactly over the full vocabulary.  The objective is the
// token mean over all rollouts of all groups; gradients are for ascent.
// Ratios exactly on a clip boundary use the unclipped branch.
template <typename Scalar>
double surrogate_loss_and_grads(const PolicyParamsT<Scalar>& params,
                                const PolicyParamsT<Scalar>& reference,
                                const std::vector<RolloutGroup>& groups,
                                const std::vector<AdvantageTensor>& advantages,
                                const GrpoConfig& cfg, GradientsT<Scalar>* grads,
                                GrpoDiagnostics* diag_out = nullptr) {
    std::size_t total_tokens = 0;
    for (const auto& group : groups)
        for (const auto& r : group.rollouts) total_tokens += r.tokens.size();
    if (total_tokens == 0) throw UsageError("surrogate: no tokens in batch");
    const double inv_n = 1.0 / static_cast<double>(total_tokens);

    double objective = 0.0;
    GrpoDiagnostics diag;
    diag.token_count = total_tokens;
    std::size_t clipped = 0;

    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& group = groups[gi];
        const auto& adv = advantages[gi];
        for (std::size_t ri = 0; ri < group.rollouts.size(); ++ri) {
            const Rollout& rollout = group.rollouts[ri];
            const Vec& a = adv.per_rollout[ri];
            std::vector<TokenId> ctx = group.prompt->tokens;
            for (Index t = 0; t < rollout.length(); ++t) {
                const TokenId tok = rollout.tokens[static_cast<std::size_t>(t)];
                auto fwd = forward(params, std::span<const TokenId>(ctx));
                Vec log_p = log_softmax(fwd.logits);
                auto ref_fwd = forward(reference, std::span<const TokenId>(ctx));
                Vec log_ref = log_softmax(ref_fwd.logits);

                const double lp_old = rollout.logprobs_old[t];
                if (!std::isfinite(lp_old)) {
                    throw DataError("surrogate: non-finite old logprob for chosen token");
                }
                const double ratio = std::exp(log_p[tok] - lp_old);
                const double clipped_ratio =
                    std::clamp(ratio, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
                const double unclipped_term = ratio * a[t];
                const double clipped_term = clipped_ratio * a[t];
                const bool clip_selected = clipped_term < unclipped_term;  // strict: boundary unclipped
                const double pg_term = clip_selected ? clipped_term : unclipped_term;

                const double kl = (fwd.probs.array() * (log_p - log_ref).array()).sum();
                objective += inv_n * (pg_term - cfg.beta * kl);
                diag.kl_mean += inv_n * kl;
                diag.ratio_mean += inv_n * ratio;
                clipped += clip_selected ? 1 : 0;

                if (grads) {
                    // dJ/dz for this token: the selected-clip branch has zero
                    // policy-gradient flow, the KL term always contributes.
                    const double alpha = clip_selected ? 0.0 : a[t] * ratio;
                    Vec dz = -alpha * fwd.probs;
                    dz[tok] += alpha;
                    dz.array() -=
                        cfg.beta * fwd.probs.array() * ((log_p - log_ref).array() - kl);
                    dz *= inv_n;
                    accumulate_logit_gradient(params, std::span<const TokenId>(ctx), dz, *grads);
                }
                ctx.push_back(tok);
            }
        }
    }
    diag.clip_fraction = static_cast<double>(clipped) / static_cast<double>(total_tokens);
    if (diag_out) *diag_out = diag;
    return objective;
}

struct MetricsRecord {
    int step = 0;
    double reward_mean = 0.0;
    double entropy_mean = 0.0;
    double pass1_probe = 0.0;
    double clip_fraction = 0.0;
    double kl_mean = 0.0;
    double rbf_mean = 0.0;
    double length_mean = 0.0;
};

struct TrainSinks {
    std::function<void(const MetricsRecord&)> on_metrics;
    std::function<void(int step, const RolloutGroup&)> on_group;  // optional rollout logging
    std::function<bool(const MetricsRecord&)> should_stop;        // early termination request
};

struct ShapingConfig {
    ShapingMode mode = ShapingMode::none;
    PplShapingConfig ppl;
    PositionShapingConfig position;
};

struct ProbeConfig {
    int size = 32;
    int samples = 4;
    int eval_every = 20;
};

template <typename Scalar>
double probe_pass1(const PolicyParamsT<Scalar>& params, const Vocab& vocab,
                   const std::vector<Prompt>& probes, int samples, const SamplingConfig& scfg,
                   std::uint64_t seed) {
    int correct = 0;
    int total = 0;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        Rng rng(derive_seed(seed, "probe", i));
        for (int j = 0; j < samples; ++j) {
            Rollout r = sample_response(params, vocab, probes[i], scfg, rng);
            correct += verify(vocab, probes[i], r.tokens).reward;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

struct TrainResult {
    PolicyParams params;
    std::vector<MetricsRecord> metrics;
};

inline TrainResult train_grpo(const Vocab& vocab, const std::vector<Prompt>& dataset,
                              const std::vector<Prompt>& probes, const PolicyDims& dims,
                              const SamplingConfig& scfg, const GrpoConfig& cfg,
                              const ShapingConfig& shaping, const ProbeConfig& probe,
                              const TrainSinks& sinks = {}) {
    if (dataset.empty()) throw ConfigError("train_grpo: empty dataset");
    TrainResult result;
    result.params = init_policy(dims, cfg.seed);
    PolicyParams reference = snapshot_reference(result.params);
    AdamState adam(dims);

    double last_pass1 = -1.0;
    for (int step = 0; step < cfg.total_steps; ++step) {
        PolicyParams old_policy = snapshot_reference(result.params);

        Rng batch_rng(derive_seed(cfg.seed, "batch", static_cast<std::uint64_t>(step)));
        std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
        std::vector<RolloutGroup> groups;
        std::vector<AdvantageTensor> advantages;
        groups.reserve(static_cast<std::size_t>(cfg.prompts_per_batch));
        for (int b = 0; b < cfg.prompts_per_batch; ++b) {
            const Prompt& prompt = dataset[pick(batch_rng)];
            Rng roll_rng(derive_seed(cfg.seed, "rollout", static_cast<std::uint64_t>(step),
                                     static_cast<std::uint64_t>(b)));
            groups.push_back(
                collect_group(old_policy, vocab, prompt, cfg.group_size, scfg, roll_rng));
        }
        for (auto& group : groups) {
            AdvantageTensor adv = compute_advantages(group, cfg.std_epsilon);
            if (shaping_active(shaping.mode, step, shaping.position)) {
                if (shaping.mode == ShapingMode::ppl) {
                    std::vector<double> log_ppls;
                    for (auto& r : group.rollouts) {
                        log_ppls.push_back(r.length() > 0 ? sequence_log_ppl(r) : 0.0);
                    }
                    adv = shape_advantages_ppl(adv, ppl_weights(log_ppls, shaping.ppl.sigma_epsilon),
                                               shaping.ppl);
                } else if (shaping.mode == ShapingMode::position) {
                    adv = shape_advantages_position(adv, shaping.position);
                }
            }
            advantages.push_back(std::move(adv));
        }

        GrpoDiagnostics diag;
        for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
            Gradients grads(dims);
            surrogate_loss_and_grads(result.params, reference, groups, advantages, cfg, &grads,
                                     &diag);
            apply_update(result.params, grads, adam, cfg.learning_rate);
        }

        MetricsRecord rec;
        rec.step = step;
        std::size_t n_rollouts = 0, n_tokens = 0;
        for (const auto& group : groups) {
            for (const auto& r : group.rollouts) {
                rec.reward_mean += r.reward;
                rec.length_mean += static_cast<double>(r.length());
                ++n_rollouts;
                for (const auto& s : r.steps) {
                    rec.entropy_mean += token_entropy(s.probs);
                    rec.rbf_mean += rollout_branching_factor(s.probs, 0.95);
                    ++n_tokens;
                }
            }
        }
        if (n_rollouts > 0) {
            rec.reward_mean /= static_cast<double>(n_rollouts);
            rec.length_mean /= static_cast<double>(n_rollouts);
        }
        if (n_tokens > 0) {
            rec.entropy_mean /= static_cast<double>(n_tokens);
            rec.rbf_mean /= static_cast<double>(n_tokens);
        }
        rec.clip_fraction = diag.clip_fraction;
        rec.kl_mean = diag.kl_mean;
        if (step % probe.eval_every == 0 || step + 1 == cfg.total_steps || last_pass1 < 0.0) {
            last_pass1 = probe_pass1(result.params, vocab, probes, probe.samples, scfg,
                                     derive_seed(cfg.seed, "probe-eval",
                                                 static_cast<std::uint64_t>(step)));
        }
        rec.pass1_probe = last_pass1;
        result.metrics.push_back(rec);
        if (sinks.on_metrics) sinks.on_metrics(rec);
        if (sinks.on_group) {
            for (const auto& group : groups) sinks.on_group(step, group);
        }
        if (sinks.should_stop && sinks.should_stop(rec)) break;
    }
    return result;
}

}  // namespace rlvr
