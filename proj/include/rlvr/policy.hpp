#pragma once

#include "rlvr/common.hpp"
#include "rlvr/vocab_task.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace rlvr {

struct PolicyDims {
    int vocab = 64;
    int embed = 8;
    int hidden = 24;
    int window = 6;
};

// Fixed-window MLP policy: h = tanh(W1 * concat(embeddings of the last
// `window` context tokens, left-padded with the first context token) + b1),
// logits z = W * h + b2, probs = softmax(z).
template <typename Scalar = double>
struct PolicyParamsT {
    using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    PolicyDims dims;
    MatX embedding;  // V x d_e
    MatX w1;         // d_h x (window * d_e)
    VecX b1;         // d_h
    MatX head;       // V x d_h
    VecX b2;         // V
};

using PolicyParams = PolicyParamsT<double>;

template <typename Scalar = double>
struct GradientsT {
    using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    MatX embedding, w1, head;
    VecX b1, b2;

    explicit GradientsT(const PolicyDims& d = {}) { setZero(d); }
    void setZero(const PolicyDims& d) {
        embedding = MatX::Zero(d.vocab, d.embed);
        w1 = MatX::Zero(d.hidden, d.window * d.embed);
        b1 = VecX::Zero(d.hidden);
        head = MatX::Zero(d.vocab, d.hidden);
        b2 = VecX::Zero(d.vocab);
    }
};

using Gradients = GradientsT<double>;

template <typename Scalar>
PolicyParamsT<Scalar> init_policy(const PolicyDims& dims, std::uint64_t seed) {
    if (dims.vocab < 1 || dims.embed < 1 || dims.hidden < 1 || dims.window < 1) {
        throw ConfigError("policy dims must all be >= 1");
    }
    PolicyParamsT<Scalar> p;
    p.dims = dims;
    Rng rng(derive_seed(seed, "policy-init"));
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto fill = [&](auto& m, double fan_in) {
        const double scale = 1.0 / std::sqrt(fan_in);
        for (Index j = 0; j < m.cols(); ++j)
            for (Index i = 0; i < m.rows(); ++i)
                m(i, j) = static_cast<Scalar>(gauss(rng) * scale);
    };
    p.embedding.resize(dims.vocab, dims.embed);
    fill(p.embedding, dims.embed);
    p.w1.resize(dims.hidden, dims.window * dims.embed);
    fill(p.w1, dims.window * dims.embed);
    p.b1 = PolicyParamsT<Scalar>::VecX::Zero(dims.hidden);
    p.head.resize(dims.vocab, dims.hidden);
    fill(p.head, dims.hidden);
    p.b2 = PolicyParamsT<Scalar>::VecX::Zero(dims.vocab);
    return p;
}

inline PolicyParams init_policy(const PolicyDims& dims, std::uint64_t seed) {
    return init_policy<double>(dims, seed);
}

// Concatenated embedding of the last `window` context tokens; shorter
// contexts are left-padded with the first context token (BOS by contract).
template <typename Scalar>
typename PolicyParamsT<Scalar>::VecX context_input(const PolicyParamsT<Scalar>& p,
                                                   std::span<const TokenId> context) {
    if (context.empty()) throw UsageError("forward: empty context");
    const int w = p.dims.window;
    const int de = p.dims.embed;
    typename PolicyParamsT<Scalar>::VecX x(w * de);
    const Index n = static_cast<Index>(context.size());
    for (int k = 0; k < w; ++k) {
        Index idx = n - w + k;
        TokenId tok = idx >= 0 ? context[static_cast<std::size_t>(idx)] : context.front();
        x.segment(k * de, de) = p.embedding.row(tok).transpose();
    }
    return x;
}

template <typename Scalar>
struct ForwardResultT {
    typename PolicyParamsT<Scalar>::VecX probs;   // valid distribution over V
    typename PolicyParamsT<Scalar>::VecX hidden;  // h, exposed for the gradient proxy
    typename PolicyParamsT<Scalar>::VecX logits;  // z
};

using ForwardResult = ForwardResultT<double>;

template <typename Scalar>
ForwardResultT<Scalar> forward(const PolicyParamsT<Scalar>& p, std::span<const TokenId> context) {
    ForwardResultT<Scalar> out;
    auto x = context_input(p, context);
    out.hidden = (p.w1 * x + p.b1).array().tanh();
    out.logits = p.head * out.hidden + p.b2;
    out.probs = softmax(out.logits);
    return out;
}

struct SamplingConfig {
    double temperature = 0.6;
    double top_p = 0.95;
    int max_response_len = 16;
};

struct StepRecord {
    TokenId token = 0;
    double logprob = 0.0;  // under the untruncated temperature-adjusted distribution
    Vec probs;             // untruncated temperature-adjusted distribution
    Vec hidden;
};

struct Rollout {
    std::int64_t prompt_id = 0;
    std::vector<StepRecord> steps;
    std::vector<TokenId> tokens;  // response tokens, parallel to steps
    bool terminated_by_eos = false;
    int reward = 0;
    Vec logprobs_old;  // teacher-forced temperature-1 logprobs at collection time
    std::optional<double> log_ppl_cache;

    Index length() const { return static_cast<Index>(tokens.size()); }
};

// Smallest prefix of probability-sorted tokens with cumulative mass >= top_p;
// ties broken by ascending token id.
inline std::vector<TokenId> top_p_candidates(const Vec& probs, double top_p) {
    std::vector<TokenId> order(static_cast<std::size_t>(probs.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<TokenId>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](TokenId a, TokenId b) { return probs[a] > probs[b]; });
    double cum = 0.0;
    std::size_t keep = 0;
    for (; keep < order.size(); ++keep) {
        cum += probs[order[keep]];
        if (cum >= top_p) {
            ++keep;
            break;
        }
    }
    order.resize(std::max<std::size_t>(keep, 1));
    return order;
}

inline TokenId sample_top_p(const Vec& probs, double top_p, Rng& rng) {
    auto kept = top_p_candidates(probs, top_p);
    double mass = 0.0;
    for (TokenId t : kept) mass += probs[t];
    std::uniform_real_distribution<double> unif(0.0, mass);
    double u = unif(rng);
    double cum = 0.0;
    for (TokenId t : kept) {
        cum += probs[t];
        if (u <= cum) return t;
    }
    return kept.back();
}

template <typename Scalar>
Rollout sample_response(const PolicyParamsT<Scalar>& p, const Vocab& vocab, const Prompt& prompt,
                        const SamplingConfig& cfg, Rng& rng) {
    if (cfg.temperature <= 0.0) throw ConfigError("temperature must be > 0");
    if (cfg.top_p <= 0.0 || cfg.top_p > 1.0) throw ConfigError("top_p must be in (0, 1]");
    Rollout r;
    r.prompt_id = prompt.prompt_id;
    std::vector<TokenId> ctx = prompt.tokens;
    for (int t = 0; t < cfg.max_response_len; ++t) {
        auto fwd = forward(p, std::span<const TokenId>(ctx));
        Vec log_p = log_softmax(fwd.logits / cfg.temperature);
        StepRecord step;
        step.probs = log_p.array().exp();
        step.hidden = fwd.hidden;
        step.token = sample_top_p(step.probs, cfg.top_p, rng);
        step.logprob = log_p[step.token];
        ctx.push_back(step.token);
        r.tokens.push_back(step.token);
        r.steps.push_back(std::move(step));
        if (r.tokens.back() == vocab.eos) {
            r.terminated_by_eos = true;
            break;
        }
    }
    return r;
}

// Teacher-forced scoring under the full temperature-1, untruncated
// distribution; this is what the GRPO ratio is defined on.
template <typename Scalar>
Vec logprobs_under(const PolicyParamsT<Scalar>& p, std::span<const TokenId> prompt_tokens,
                   std::span<const TokenId> response) {
    std::vector<TokenId> ctx(prompt_tokens.begin(), prompt_tokens.end());
    Vec out(static_cast<Index>(response.size()));
    for (std::size_t t = 0; t < response.size(); ++t) {
        TokenId tok = response[t];
        if (tok < 0 || tok >= p.dims.vocab) throw UsageError("logprobs_under: token out of range");
        auto fwd = forward(p, std::span<const TokenId>(ctx));
        out[static_cast<Index>(t)] = log_softmax(fwd.logits)[tok];
        ctx.push_back(tok);
    }
    return out;
}

template <typename Scalar>
PolicyParamsT<Scalar> snapshot_reference(const PolicyParamsT<Scalar>& p) {
    return p;  // value semantics; deep copy by construction
}

// Backpropagates a given dJ/dz (logit gradient) for one context through the
// encoder, accumulating into `g`.
template <typename Scalar>
void accumulate_logit_gradient(const PolicyParamsT<Scalar>& p, std::span<const TokenId> context,
                               const typename PolicyParamsT<Scalar>::VecX& dz,
                               GradientsT<Scalar>& g) {
    auto x = context_input(p, context);
    typename PolicyParamsT<Scalar>::VecX h = (p.w1 * x + p.b1).array().tanh();
    g.head.noalias() += dz * h.transpose();
    g.b2 += dz;
    typename PolicyParamsT<Scalar>::VecX dh = p.head.transpose() * dz;
    typename PolicyParamsT<Scalar>::VecX da =
        dh.array() * (Scalar(1) - h.array().square());
    g.w1.noalias() += da * x.transpose();
    g.b1 += da;
    typename PolicyParamsT<Scalar>::VecX dx = p.w1.transpose() * da;
    const int w = p.dims.window;
    const int de = p.dims.embed;
    const Index n = static_cast<Index>(context.size());
    for (int k = 0; k < w; ++k) {
        Index idx = n - w + k;
        TokenId tok = idx >= 0 ? context[static_cast<std::size_t>(idx)] : context.front();
        g.embedding.row(tok) += dx.segment(k * de, de).transpose();
    }
}

// dJ/dz = alpha_t * (e(o_t) - pi); the per-token surrogate gradient form.
template <typename Scalar>
void backprop_surrogate(const PolicyParamsT<Scalar>& p, std::span<const TokenId> context,
                        TokenId chosen, Scalar alpha, GradientsT<Scalar>& g) {
    if (!std::isfinite(static_cast<double>(alpha))) {
        throw DataError("backprop_surrogate: non-finite coefficient");
    }
    auto fwd = forward(p, context);
    typename PolicyParamsT<Scalar>::VecX dz = -alpha * fwd.probs;
    dz[chosen] += alpha;
    accumulate_logit_gradient(p, context, dz, g);
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename Scalar = double>
struct AdamStateT {
    GradientsT<Scalar> m, v;
    std::int64_t t = 0;
    explicit AdamStateT(const PolicyDims& d = {}) : m(d), v(d) {}
};

using AdamState = AdamStateT<double>;

// Adam ascent step on the supplied objective gradient.
template <typename Scalar>
void apply_update(PolicyParamsT<Scalar>& p, const GradientsT<Scalar>& g, AdamStateT<Scalar>& st,
                  double lr, const AdamConfig& cfg = {}) {
    if (g.head.rows() != p.head.rows() || g.head.cols() != p.head.cols() ||
        g.w1.cols() != p.w1.cols() || g.embedding.rows() != p.embedding.rows()) {
        throw ConfigError("apply_update: gradient/parameter shape mismatch");
    }
    st.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    auto step = [&](auto& param, auto& m, auto& v, const auto& grad) {
        m.array() = cfg.beta1 * m.array() + (1.0 - cfg.beta1) * grad.array();
        v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * grad.array().square();
        param.array() +=
            lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
    };
    step(p.embedding, st.m.embedding, st.v.embedding, g.embedding);
    step(p.w1, st.m.w1, st.v.w1, g.w1);
    step(p.b1, st.m.b1, st.v.b1, g.b1);
    step(p.head, st.m.head, st.v.head, g.head);
    step(p.b2, st.m.b2, st.v.b2, g.b2);
}

struct SftBatchItem {
    const std::vector<TokenId>* prompt_tokens = nullptr;
    const std::vector<TokenId>* response = nullptr;
};

// One plain gradient step minimizing mean token-level NLL over the batch.
// Returns the pre-update loss.
template <typename Scalar>
double sft_update(PolicyParamsT<Scalar>& p, std::span<const SftBatchItem> batch, double lr) {
    if (batch.empty()) throw UsageError("sft_update: empty batch");
    std::size_t total_tokens = 0;
    for (const auto& item : batch) total_tokens += item.response->size();
    if (total_tokens == 0) throw UsageError("sft_update: batch has no tokens");

    GradientsT<Scalar> g(p.dims);
    double loss = 0.0;
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(total_tokens);
    for (const auto& item : batch) {
        std::vector<TokenId> ctx = *item.prompt_tokens;
        for (TokenId tok : *item.response) {
            auto fwd = forward(p, std::span<const TokenId>(ctx));
            loss -= std::log(static_cast<double>(fwd.probs[tok]));
            // ascent on mean log-likelihood: dJ/dz = (e - pi) / N
            typename PolicyParamsT<Scalar>::VecX dz = -inv_n * fwd.probs;
            dz[tok] += inv_n;
            accumulate_logit_gradient(p, std::span<const TokenId>(ctx), dz, g);
            ctx.push_back(tok);
        }
    }
    loss /= static_cast<double>(total_tokens);
    p.embedding += lr * g.embedding;
    p.w1 += lr * g.w1;
    p.b1 += lr * g.b1;
    p.head += lr * g.head;
    p.b2 += lr * g.b2;
    return loss;
}

}  // namespace rlvr
