#pragma once

#include "rlvr/common.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rlvr {

enum class TokenCategory {
    formal_reasoning,
    logical_structuring,
    metacognitive,
    semantic_support,
    other,
};

struct VocabConfig {
    int size = 64;
};

// Fixed token layout: BOS=0, EOS=1, BOX_OPEN=2, BOX_CLOSE=3, digits 4..13,
// PLUS=14, QUERY=15, THEN=16 (connective), CHECK=17 (metacognitive),
// 18..V-1 filler.
struct Vocab {
    int size = 0;
    TokenId bos = 0;
    TokenId eos = 1;
    TokenId box_open = 2;
    TokenId box_close = 3;
    TokenId digit0 = 4;  // digits occupy [digit0, digit0 + 10)
    TokenId plus = 14;
    TokenId query = 15;
    TokenId then_tok = 16;
    TokenId check_tok = 17;
    std::vector<TokenCategory> categories;  // one entry per token id

    static constexpr int required_tokens = 18;

    bool is_digit(TokenId t) const { return t >= digit0 && t < digit0 + 10; }
    int digit_value(TokenId t) const { return t - digit0; }
    TokenId digit_token(int v) const { return digit0 + v; }
};

inline Vocab build_vocab(const VocabConfig& cfg) {
    if (cfg.size < Vocab::required_tokens) {
        throw ConfigError("vocab size " + std::to_string(cfg.size) + " < required " +
                          std::to_string(Vocab::required_tokens));
    }
    Vocab v;
    v.size = cfg.size;
    v.categories.assign(static_cast<std::size_t>(cfg.size), TokenCategory::semantic_support);
    for (TokenId t : {v.bos, v.eos, v.box_open, v.box_close}) {
        v.categories[static_cast<std::size_t>(t)] = TokenCategory::other;
    }
    for (int d = 0; d < 10; ++d) {
        v.categories[static_cast<std::size_t>(v.digit_token(d))] = TokenCategory::formal_reasoning;
    }
    v.categories[static_cast<std::size_t>(v.plus)] = TokenCategory::formal_reasoning;
    v.categories[static_cast<std::size_t>(v.query)] = TokenCategory::formal_reasoning;
    v.categories[static_cast<std::size_t>(v.then_tok)] = TokenCategory::logical_structuring;
    v.categories[static_cast<std::size_t>(v.check_tok)] = TokenCategory::metacognitive;
    return v;
}

struct Prompt {
    std::int64_t prompt_id = 0;
    std::vector<TokenId> tokens;  // starts with BOS, no box tokens
    std::int64_t answer = 0;      // hidden ground truth
    std::string task_kind;
    int difficulty = 1;
};

enum class ParseStatus { ok, no_box, multiple_boxes, non_numeric, wrong_answer };

struct VerifierOutcome {
    int reward = 0;  // 0 or 1
    ParseStatus parse_status = ParseStatus::no_box;
};

struct BoxSpan {
    std::vector<TokenId> payload;  // tokens strictly between BOX_OPEN and BOX_CLOSE
    Index open_idx = -1;
    Index close_idx = -1;
};

// First complete BOX_OPEN..BOX_CLOSE span; absent if no complete span.
inline std::optional<BoxSpan> extract_boxed(const Vocab& vocab, std::span<const TokenId> tokens) {
    for (Index i = 0; i < static_cast<Index>(tokens.size()); ++i) {
        if (tokens[static_cast<std::size_t>(i)] != vocab.box_open) continue;
        for (Index j = i + 1; j < static_cast<Index>(tokens.size()); ++j) {
            if (tokens[static_cast<std::size_t>(j)] == vocab.box_close) {
                BoxSpan span;
                span.open_idx = i;
                span.close_idx = j;
                span.payload.assign(tokens.begin() + i + 1, tokens.begin() + j);
                return span;
            }
        }
        return std::nullopt;  // unclosed first box
    }
    return std::nullopt;
}

// First-box-wins scoring; extra boxes are counted by quality_issue_counts,
// not here.
inline VerifierOutcome verify(const Vocab& vocab, const Prompt& prompt,
                              std::span<const TokenId> response) {
    VerifierOutcome out;
    auto span = extract_boxed(vocab, response);
    if (!span) {
        out.parse_status = ParseStatus::no_box;
        return out;
    }
    if (span->payload.empty() || span->payload.size() > 18) {
        out.parse_status = ParseStatus::non_numeric;
        return out;
    }
    std::int64_t value = 0;
    for (TokenId t : span->payload) {
        if (!vocab.is_digit(t)) {
            out.parse_status = ParseStatus::non_numeric;
            return out;
        }
        value = value * 10 + vocab.digit_value(t);
    }
    if (value == prompt.answer) {
        out.parse_status = ParseStatus::ok;
        out.reward = 1;
    } else {
        out.parse_status = ParseStatus::wrong_answer;
    }
    return out;
}

inline std::vector<TokenId> answer_digit_tokens(const Vocab& vocab, std::int64_t answer) {
    std::string s = std::to_string(answer);
    std::vector<TokenId> out;
    out.reserve(s.size());
    for (char c : s) out.push_back(vocab.digit_token(c - '0'));
    return out;
}

// The shortest reward-1 response; used to check solvability by construction.
inline std::vector<TokenId> canonical_response(const Vocab& vocab, const Prompt& prompt) {
    std::vector<TokenId> out;
    out.push_back(vocab.box_open);
    for (TokenId t : answer_digit_tokens(vocab, prompt.answer)) out.push_back(t);
    out.push_back(vocab.box_close);
    out.push_back(vocab.eos);
    return out;
}

inline std::vector<Prompt> generate_dataset(const Vocab& vocab, const std::string& task_kind,
                                            int difficulty, int count, std::uint64_t seed) {
    if (count < 1) throw ConfigError("dataset count must be >= 1");
    if (difficulty < 1) throw ConfigError("difficulty must be >= 1");
    if (task_kind != "modular_sum" && task_kind != "sequence_reverse") {
        throw ConfigError("unknown task_kind: " + task_kind);
    }
    Rng rng(derive_seed(seed, "dataset"));
    std::uniform_int_distribution<int> digit(0, 9);
    std::uniform_int_distribution<int> nonzero_digit(1, 9);

    std::vector<Prompt> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Prompt p;
        p.prompt_id = i;
        p.task_kind = task_kind;
        p.difficulty = difficulty;
        p.tokens.push_back(vocab.bos);
        if (task_kind == "modular_sum") {
            int sum = 0;
            for (int j = 0; j < difficulty; ++j) {
                int d = digit(rng);
                sum += d;
                if (j > 0) p.tokens.push_back(vocab.plus);
                p.tokens.push_back(vocab.digit_token(d));
            }
            p.answer = sum % 10;
        } else {  // sequence_reverse; last digit nonzero so the reversal has no leading zero
            std::vector<int> digits;
            for (int j = 0; j < difficulty; ++j) {
                digits.push_back(j + 1 == difficulty ? nonzero_digit(rng) : digit(rng));
                p.tokens.push_back(vocab.digit_token(digits.back()));
            }
            std::int64_t ans = 0;
            for (auto it = digits.rbegin(); it != digits.rend(); ++it) ans = ans * 10 + *it;
            p.answer = ans;
        }
        p.tokens.push_back(vocab.query);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace rlvr
