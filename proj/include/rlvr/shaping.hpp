#pragma once

#include "rlvr/common.hpp"
#include "rlvr/policy.hpp"

#include <cmath>
#include <vector>

namespace rlvr {

enum class ShapingMode { none, ppl, position };

enum class PplDirection { favor_low_ppl, favor_high_ppl };

struct PplShapingConfig {
    double alpha = 0.01;
    double sigma_epsilon = 1e-8;
    PplDirection direction = PplDirection::favor_low_ppl;
};

struct PositionShapingConfig {
    double gamma = 0.1;
    double direction = 1.0;  // d in {+1, -1}
    double slope = 15.0;     // m
    double center = 0.5;     // c; the printed n = -0.5 is reachable by setting center = -0.5
    int start_step = 200;
    int duration = 100;
};

enum class AdvantageTag { raw, ppl, position };

struct AdvantageTensor {
    std::vector<Vec> per_rollout;  // one entry per rollout, one value per token
    AdvantageTag tag = AdvantageTag::raw;
};

// ln PPL = -(1/|o|) * sum_t logprob_old(o_t); PPL = exp of this.
inline double sequence_log_ppl(const Rollout& rollout) {
    if (rollout.logprobs_old.size() == 0) throw UsageError("sequence_log_ppl: empty rollout");
    return -rollout.logprobs_old.mean();
}

// Standardized log-PPL weights across a group (population sigma); all zero
// when the group is degenerate.
inline Vec ppl_weights(const std::vector<double>& log_ppls, double sigma_epsilon = 1e-8) {
    const Index n = static_cast<Index>(log_ppls.size());
    if (n < 2) throw UsageError("ppl_weights: need at least 2 rollouts");
    Eigen::Map<const Vec> x(log_ppls.data(), n);
    const double mu = x.mean();
    const double sigma = std::sqrt((x.array() - mu).square().mean());
    if (sigma < sigma_epsilon) return Vec::Zero(n);
    return (x.array() - mu) / sigma;
}

inline AdvantageTensor shape_advantages_ppl(const AdvantageTensor& adv, const Vec& weights,
                                            const PplShapingConfig& cfg) {
    if (static_cast<std::size_t>(weights.size()) != adv.per_rollout.size()) {
        throw UsageError("shape_advantages_ppl: weight/rollout count mismatch");
    }
    AdvantageTensor out;
    out.tag = AdvantageTag::ppl;
    out.per_rollout.reserve(adv.per_rollout.size());
    for (std::size_t i = 0; i < adv.per_rollout.size(); ++i) {
        const double sign = cfg.direction == PplDirection::favor_low_ppl ? -1.0 : 1.0;
        const double factor = 1.0 + sign * cfg.alpha * weights[static_cast<Index>(i)];
        out.per_rollout.push_back(adv.per_rollout[i] * factor);
    }
    return out;
}

// b = gamma * sigmoid(d * m * (l - c)) with l = t/(seq_len-1), l = 0 for
// single-token sequences.
inline double position_bonus(Index seq_len, Index t, const PositionShapingConfig& cfg) {
    if (seq_len < 1 || t < 0 || t >= seq_len) throw UsageError("position_bonus: bad position");
    const double l = seq_len == 1 ? 0.0
                                  : static_cast<double>(t) / static_cast<double>(seq_len - 1);
    const double r = cfg.slope * (l - cfg.center);
    return cfg.gamma * sigmoid(cfg.direction * r);
}

// A~ = A + sign(A) * b; sign(0) = 0, so |A~| >= |A| and the sign is preserved.
inline AdvantageTensor shape_advantages_position(const AdvantageTensor& adv,
                                                 const PositionShapingConfig& cfg) {
    AdvantageTensor out;
    out.tag = AdvantageTag::position;
    out.per_rollout.reserve(adv.per_rollout.size());
    for (const Vec& a : adv.per_rollout) {
        Vec shaped(a.size());
        for (Index t = 0; t < a.size(); ++t) {
            const double b = position_bonus(a.size(), t, cfg);
            const double s = a[t] > 0.0 ? 1.0 : (a[t] < 0.0 ? -1.0 : 0.0);
            shaped[t] = a[t] + s * b;
        }
        out.per_rollout.push_back(std::move(shaped));
    }
    return out;
}

inline bool shaping_active(ShapingMode mode, int step, const PositionShapingConfig& pos) {
    switch (mode) {
        case ShapingMode::none:
            return false;
        case ShapingMode::ppl:
            return true;  // applied throughout training
        case ShapingMode::position:
            return step >= pos.start_step && step < pos.start_step + pos.duration;
    }
    return false;
}

}  // namespace rlvr
