#include "rlvr/vocab_task.hpp"
#include "rlvr/io.hpp"

#include <doctest.h>

#include <filesystem>

using namespace rlvr;

TEST_CASE("build_vocab fixed layout") {
    Vocab v = build_vocab({64});
    CHECK(v.size == 64);
    CHECK(v.bos == 0);
    CHECK(v.eos == 1);
    CHECK(v.box_open == 2);
    CHECK(v.box_close == 3);
    CHECK(v.digit_token(0) == 4);
    CHECK(v.digit_token(9) == 13);
    CHECK(v.categories.size() == 64);
    for (TokenId t = 0; t < 64; ++t) {
        CHECK_NOTHROW((void)v.categories[static_cast<std::size_t>(t)]);
    }
}

TEST_CASE("build_vocab rejects undersized vocab") {
    CHECK_THROWS_AS(build_vocab({7}), ConfigError);
}

TEST_CASE("build_vocab is deterministic") {
    Vocab a = build_vocab({64});
    Vocab b = build_vocab({64});
    CHECK(a.categories == b.categories);
    CHECK(a.size == b.size);
}

TEST_CASE("generate_dataset modular_sum") {
    Vocab v = build_vocab({64});
    auto d1 = generate_dataset(v, "modular_sum", 2, 4, 7);
    auto d2 = generate_dataset(v, "modular_sum", 2, 4, 7);
    REQUIRE(d1.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(d1[i].tokens == d2[i].tokens);
        CHECK(d1[i].answer == d2[i].answer);
        CHECK(d1[i].tokens.front() == v.bos);
        CHECK(d1[i].tokens.back() == v.query);
        // a + b mod 10 encoded as BOS a PLUS b QUERY
        REQUIRE(d1[i].tokens.size() == 5);
        const int a = v.digit_value(d1[i].tokens[1]);
        const int b = v.digit_value(d1[i].tokens[3]);
        CHECK(d1[i].tokens[2] == v.plus);
        CHECK(d1[i].answer == (a + b) % 10);
    }
    // distinct ids
    CHECK(d1[0].prompt_id != d1[1].prompt_id);
}

TEST_CASE("generate_dataset sequence_reverse") {
    Vocab v = build_vocab({64});
    auto data = generate_dataset(v, "sequence_reverse", 3, 16, 11);
    for (const auto& p : data) {
        REQUIRE(p.tokens.size() == 5);  // BOS d d d QUERY
        const int d0 = v.digit_value(p.tokens[1]);
        const int d1 = v.digit_value(p.tokens[2]);
        const int d2 = v.digit_value(p.tokens[3]);
        CHECK(p.answer == d2 * 100 + d1 * 10 + d0);
    }
}

TEST_CASE("generate_dataset rejects unknown task kinds") {
    Vocab v = build_vocab({64});
    CHECK_THROWS_AS(generate_dataset(v, "quadratic", 1, 4, 0), ConfigError);
    CHECK_THROWS_AS(generate_dataset(v, "modular_sum", 1, 0, 0), ConfigError);
}

TEST_CASE("verify exact match and format failures") {
    Vocab v = build_vocab({64});
    Prompt p;
    p.answer = 7;
    std::vector<TokenId> good = {v.box_open, v.digit_token(7), v.box_close, v.eos};
    auto ok = verify(v, p, good);
    CHECK(ok.reward == 1);
    CHECK(ok.parse_status == ParseStatus::ok);

    std::vector<TokenId> no_box = {v.digit_token(7), v.eos};
    auto nb = verify(v, p, no_box);
    CHECK(nb.reward == 0);
    CHECK(nb.parse_status == ParseStatus::no_box);

    std::vector<TokenId> wrong = {v.box_open, v.digit_token(3), v.box_close};
    auto w = verify(v, p, wrong);
    CHECK(w.reward == 0);
    CHECK(w.parse_status == ParseStatus::wrong_answer);

    std::vector<TokenId> junk = {v.box_open, v.plus, v.box_close};
    CHECK(verify(v, p, junk).parse_status == ParseStatus::non_numeric);
}

TEST_CASE("verify scores the first box only") {
    Vocab v = build_vocab({64});
    Prompt p;
    p.answer = 7;
    std::vector<TokenId> resp = {v.box_open, v.digit_token(7), v.box_close, 20,
                                 v.box_open, v.digit_token(3), v.box_close};
    auto out = verify(v, p, resp);
    CHECK(out.reward == 1);
    CHECK(out.parse_status == ParseStatus::ok);
}

TEST_CASE("extract_boxed") {
    Vocab v = build_vocab({64});
    std::vector<TokenId> a = {v.box_open, v.digit_token(4), v.digit_token(2), v.box_close};
    auto sa = extract_boxed(v, a);
    REQUIRE(sa.has_value());
    CHECK(sa->payload == std::vector<TokenId>{v.digit_token(4), v.digit_token(2)});
    CHECK(sa->open_idx == 0);
    CHECK(sa->close_idx == 3);

    std::vector<TokenId> unclosed = {v.box_open, v.digit_token(4)};
    CHECK_FALSE(extract_boxed(v, unclosed).has_value());

    std::vector<TokenId> two = {v.digit_token(9), v.box_open, v.digit_token(1), v.box_close,
                                v.box_open, v.digit_token(2), v.box_close};
    auto st = extract_boxed(v, two);
    REQUIRE(st.has_value());
    CHECK(st->payload == std::vector<TokenId>{v.digit_token(1)});
}

TEST_CASE("every generated prompt is solvable by its canonical response") {
    Vocab v = build_vocab({64});
    for (const char* kind : {"modular_sum", "sequence_reverse"}) {
        for (int difficulty : {1, 2, 3}) {
            auto data = generate_dataset(v, kind, difficulty, 32, 5);
            for (const auto& p : data) {
                auto resp = canonical_response(v, p);
                CHECK(resp.size() <= 16);
                CHECK(verify(v, p, resp).reward == 1);
            }
        }
    }
}

TEST_CASE("dataset JSONL round trip") {
    Vocab v = build_vocab({64});
    auto data = generate_dataset(v, "modular_sum", 2, 8, 3);
    auto path = std::filesystem::temp_directory_path() / "rlvr_test_dataset.jsonl";
    save_dataset_jsonl(path, data, 3);
    auto loaded = load_dataset_jsonl(path);
    REQUIRE(loaded.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(loaded[i].prompt_id == data[i].prompt_id);
        CHECK(loaded[i].tokens == data[i].tokens);
        CHECK(loaded[i].answer == data[i].answer);
    }
    std::filesystem::remove(path);
}
