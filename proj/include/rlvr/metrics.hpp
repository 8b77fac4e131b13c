#pragma once

#include "rlvr/common.hpp"
#include "rlvr/policy.hpp"
#include "rlvr/vocab_task.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace rlvr {

// Unbiased Pass@k estimator 1 - C(n-c,k)/C(n,k), evaluated in the stable
// product form prod_{i<k} (n-c-i)/(n-i).
inline double pass_at_k_unbiased(int n, int c, int k) {
    if (n < 1 || k < 1 || k > n || c < 0 || c > n) {
        throw UsageError("pass_at_k_unbiased: need 1 <= k <= n and 0 <= c <= n");
    }
    if (c == 0) return 0.0;
    if (n - c < k) return 1.0;
    double fail = 1.0;
    for (int i = 0; i < k; ++i) {
        fail *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
    }
    return 1.0 - fail;
}

struct PromptOutcomes {
    std::int64_t prompt_id = 0;
    std::vector<int> rewards;  // in recording order

    int n() const { return static_cast<int>(rewards.size()); }
    int c() const { return static_cast<int>(std::count(rewards.begin(), rewards.end(), 1)); }
};

inline double pass_at_k_dataset(const std::vector<PromptOutcomes>& log, int k) {
    if (log.empty()) throw UsageError("pass_at_k_dataset: empty log");
    double sum = 0.0;
    for (const auto& p : log) {
        if (p.n() < k) {
            throw UsageError("pass_at_k_dataset: prompt " + std::to_string(p.prompt_id) +
                             " has only " + std::to_string(p.n()) + " rollouts, need " +
                             std::to_string(k));
        }
        sum += pass_at_k_unbiased(p.n(), p.c(), k);
    }
    return sum / static_cast<double>(log.size());
}

// Natural-log Shannon entropy; 0*log(0) treated as 0.
template <typename Derived>
double token_entropy(const Eigen::MatrixBase<Derived>& probs) {
    double h = 0.0;
    for (Index i = 0; i < probs.size(); ++i) {
        const double p = probs[i];
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

// Count of tokens in the smallest top-p probability mass (ties by ascending
// token id).
template <typename Derived>
int rollout_branching_factor(const Eigen::MatrixBase<Derived>& probs, double top_p) {
    if (top_p <= 0.0 || top_p > 1.0) throw UsageError("rollout_branching_factor: bad top_p");
    Vec p = probs;
    return static_cast<int>(top_p_candidates(p, top_p).size());
}

// ||alpha * (e(o_t) - pi) h^T||_F via the rank-1 identity
// |alpha| * ||e - pi||_2 * ||h||_2.
template <typename DerivedP, typename DerivedH>
double gradient_norm_proxy(double alpha, const Eigen::MatrixBase<DerivedP>& probs,
                           TokenId chosen, const Eigen::MatrixBase<DerivedH>& hidden) {
    Vec d = -probs;
    d[chosen] += 1.0;
    return std::abs(alpha) * d.norm() * hidden.norm();
}

using VerifierFn = std::function<int(const Prompt&, std::span<const TokenId>)>;

inline VerifierFn default_verifier(const Vocab& vocab) {
    return [&vocab](const Prompt& p, std::span<const TokenId> resp) {
        return verify(vocab, p, resp).reward;
    };
}

// Token replacement intervention: continue k times from the original token
// and from the best alternative, and return the accuracy difference.
template <typename Scalar>
double intervention_impact(const PolicyParamsT<Scalar>& params, const Vocab& vocab,
                           const Prompt& prompt, const Rollout& rollout, Index t, int k,
                           const SamplingConfig& cfg, const VerifierFn& verifier, Rng& rng) {
    if (t < 0 || t >= rollout.length()) throw UsageError("intervention_impact: position out of range");
    if (k < 1) throw UsageError("intervention_impact: k must be >= 1");

    const TokenId original = rollout.tokens[static_cast<std::size_t>(t)];
    std::vector<TokenId> prefix = prompt.tokens;
    prefix.insert(prefix.end(), rollout.tokens.begin(), rollout.tokens.begin() + t);

    // argmax over V excluding the original token, ties by ascending id
    auto fwd = forward(params, std::span<const TokenId>(prefix));
    TokenId substitute = -1;
    double best = -1.0;
    for (Index v = 0; v < fwd.probs.size(); ++v) {
        if (static_cast<TokenId>(v) == original) continue;
        if (fwd.probs[v] > best) {
            best = fwd.probs[v];
            substitute = static_cast<TokenId>(v);
        }
    }

    auto branch_accuracy = [&](TokenId first) {
        int correct = 0;
        for (int j = 0; j < k; ++j) {
            std::vector<TokenId> resp = {first};
            std::vector<TokenId> ctx = prefix;
            ctx.push_back(first);
            if (first != vocab.eos) {
                Prompt continuation_prompt = prompt;
                continuation_prompt.tokens = ctx;
                Rollout cont = sample_response(params, vocab, continuation_prompt, cfg, rng);
                resp.insert(resp.end(), cont.tokens.begin(), cont.tokens.end());
            }
            std::vector<TokenId> full(rollout.tokens.begin(), rollout.tokens.begin() + t);
            full.insert(full.end(), resp.begin(), resp.end());
            correct += verifier(prompt, full);
        }
        return static_cast<double>(correct) / static_cast<double>(k);
    };

    return branch_accuracy(original) - branch_accuracy(substitute);
}

struct UnsolvableSet {
    int k = 0;
    std::set<std::int64_t> prompt_ids;
};

// Prompts whose first k recorded rollouts contain zero correct responses.
inline UnsolvableSet unsolvable_set(const std::vector<PromptOutcomes>& log, int k) {
    UnsolvableSet out;
    out.k = k;
    for (const auto& p : log) {
        if (p.n() < k) {
            throw UsageError("unsolvable_set: prompt " + std::to_string(p.prompt_id) +
                             " has fewer than k rollouts");
        }
        bool solved = false;
        for (int i = 0; i < k; ++i) {
            if (p.rewards[static_cast<std::size_t>(i)] == 1) {
                solved = true;
                break;
            }
        }
        if (!solved) out.prompt_ids.insert(p.prompt_id);
    }
    return out;
}

inline std::map<std::string, std::size_t> venn_partition(const UnsolvableSet& a,
                                                         const UnsolvableSet& b) {
    if (a.k != b.k) throw UsageError("venn_partition: mismatched k");
    std::map<std::string, std::size_t> out{{"only_a", 0}, {"only_b", 0}, {"both", 0}};
    for (auto id : a.prompt_ids) {
        if (b.prompt_ids.count(id)) ++out["both"];
        else ++out["only_a"];
    }
    for (auto id : b.prompt_ids) {
        if (!a.prompt_ids.count(id)) ++out["only_b"];
    }
    return out;
}

inline std::map<std::string, std::size_t> venn_partition(const UnsolvableSet& a,
                                                         const UnsolvableSet& b,
                                                         const UnsolvableSet& c) {
    if (a.k != b.k || b.k != c.k) throw UsageError("venn_partition: mismatched k");
    std::map<std::string, std::size_t> out{{"only_a", 0},  {"only_b", 0},  {"only_c", 0},
                                           {"a_b", 0},     {"a_c", 0},     {"b_c", 0},
                                           {"a_b_c", 0}};
    std::set<std::int64_t> all;
    for (const auto* s : {&a, &b, &c}) all.insert(s->prompt_ids.begin(), s->prompt_ids.end());
    for (auto id : all) {
        const bool ia = a.prompt_ids.count(id) > 0;
        const bool ib = b.prompt_ids.count(id) > 0;
        const bool ic = c.prompt_ids.count(id) > 0;
        if (ia && ib && ic) ++out["a_b_c"];
        else if (ia && ib) ++out["a_b"];
        else if (ia && ic) ++out["a_c"];
        else if (ib && ic) ++out["b_c"];
        else if (ia) ++out["only_a"];
        else if (ib) ++out["only_b"];
        else ++out["only_c"];
    }
    return out;
}

struct EntropyRewardFit {
    double a = 0.0;
    double b = 0.0;
    double residual = 0.0;  // sum of squared errors
};

// Least squares for R = -a * exp(H) + b in the transformed variable x = exp(H).
inline EntropyRewardFit fit_entropy_reward(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 2) throw UsageError("fit_entropy_reward: need >= 2 points");
    const Index n = static_cast<Index>(points.size());
    Mat design(n, 2);
    Vec rhs(n);
    for (Index i = 0; i < n; ++i) {
        design(i, 0) = -std::exp(points[static_cast<std::size_t>(i)].first);
        design(i, 1) = 1.0;
        rhs[i] = points[static_cast<std::size_t>(i)].second;
    }
    const double h0 = points.front().first;
    if (std::all_of(points.begin(), points.end(),
                    [&](const auto& p) { return p.first == h0; })) {
        throw UsageError("fit_entropy_reward: all entropy values identical, degenerate fit");
    }
    Vec coeffs = design.colPivHouseholderQr().solve(rhs);
    EntropyRewardFit fit;
    fit.a = coeffs[0];
    fit.b = coeffs[1];
    fit.residual = (design * coeffs - rhs).squaredNorm();
    return fit;
}

inline TokenCategory categorize_token(const Vocab& vocab, TokenId t) {
    if (t < 0 || t >= vocab.size) throw UsageError("categorize_token: token out of range");
    return vocab.categories[static_cast<std::size_t>(t)];
}

struct QualityFlags {
    bool format_violation = false;  // BOX_OPEN count != 1
    bool redundancy_flag = false;
};

struct QualityIssueCounts {
    std::vector<QualityFlags> per_response;
    std::size_t format_violations = 0;
    std::size_t redundancy_flags = 0;
    double format_violation_rate = 0.0;
    double redundancy_rate = 0.0;
};

// 1 - unique/total token trigrams; 0 for fewer than 3 tokens.
inline double trigram_redundancy(std::span<const TokenId> tokens) {
    if (tokens.size() < 3) return 0.0;
    std::set<std::array<TokenId, 3>> unique;
    const std::size_t total = tokens.size() - 2;
    for (std::size_t i = 0; i < total; ++i) {
        unique.insert({tokens[i], tokens[i + 1], tokens[i + 2]});
    }
    return 1.0 - static_cast<double>(unique.size()) / static_cast<double>(total);
}

inline QualityIssueCounts quality_issue_counts(const Vocab& vocab,
                                               const std::vector<std::vector<TokenId>>& responses,
                                               double redundancy_threshold = 0.31) {
    QualityIssueCounts out;
    for (const auto& resp : responses) {
        QualityFlags f;
        const auto boxes = std::count(resp.begin(), resp.end(), vocab.box_open);
        f.format_violation = boxes != 1;
        f.redundancy_flag = trigram_redundancy(resp) > redundancy_threshold;
        out.format_violations += f.format_violation ? 1 : 0;
        out.redundancy_flags += f.redundancy_flag ? 1 : 0;
        out.per_response.push_back(f);
    }
    if (!responses.empty()) {
        out.format_violation_rate =
            static_cast<double>(out.format_violations) / static_cast<double>(responses.size());
        out.redundancy_rate =
            static_cast<double>(out.redundancy_flags) / static_cast<double>(responses.size());
    }
    return out;
}

}  // namespace rlvr
