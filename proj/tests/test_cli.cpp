#include <doctest.h>

#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_path() {
#ifdef RLVR_CLI_PATH
    return RLVR_CLI_PATH;
#else
    const char* p = std::getenv("RLVR_CLI_PATH");
    REQUIRE_MESSAGE(p != nullptr, "RLVR_CLI_PATH must point at the CLI binary");
    return p;
#endif
}

int run(const std::string& args, const fs::path& log) {
    std::ostringstream cmd;
    cmd << cli_path() << ' ' << args << " >" << log.string() << " 2>&1";
    int rc = std::system(cmd.str().c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("rlvr_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

json small_config(const fs::path& out_dir) {
    json j;
    j["task"] = {{"kind", "modular_sum"}, {"difficulty", 1}, {"train_count", 8}, {"vocab_size", 32}};
    j["policy"] = {{"embed", 4}, {"hidden", 8}, {"window", 4}};
    j["sampling"] = {{"temperature", 1.0}, {"top_p", 1.0}, {"max_response_len", 6}};
    j["grpo"] = {{"group_size", 2}, {"total_steps", 4}, {"prompts_per_batch", 2},
                 {"learning_rate", 0.01}};
    j["probe"] = {{"size", 4}, {"samples", 2}, {"eval_every", 2}, {"ks", {1, 2}}};
    j["rft"] = {{"iterations", 1}, {"rollouts_per_prompt", 2}, {"batch_size", 4}};
    j["output_dir"] = out_dir.string();
    j["seed"] = 5;
    j["rollout_log_every"] = 2;
    return j;
}

fs::path write_config(const TempDir& dir, const json& j, const std::string& name = "config.json") {
    fs::path p = dir.path / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

}  // namespace

TEST_CASE("cli rejects missing subcommand and bad flags") {
    TempDir dir("usage");
    CHECK(run("", dir.path / "log.txt") == 1);
    CHECK(run("no-such-subcommand", dir.path / "log.txt") == 1);
    CHECK(run("train-grpo /does/not/exist.json", dir.path / "log.txt") == 1);
}

TEST_CASE("cli dry-run validates without writing") {
    TempDir dir("dry");
    fs::path out = dir.path / "out";
    fs::path cfg = write_config(dir, small_config(out));
    CHECK(run("train-grpo --dry-run " + cfg.string(), dir.path / "log.txt") == 0);
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("cli names the offending config field") {
    TempDir dir("badcfg");
    json j = small_config(dir.path / "out");
    j["grpo"]["group_size"] = 1;
    fs::path cfg = write_config(dir, j);
    CHECK(run("train-grpo --dry-run " + cfg.string(), dir.path / "log.txt") == 1);
    CHECK(slurp(dir.path / "log.txt").find("group_size") != std::string::npos);

    json unknown = small_config(dir.path / "out");
    unknown["grpo"]["learning_rte"] = 0.1;
    fs::path cfg2 = write_config(dir, unknown, "config2.json");
    CHECK(run("train-grpo --dry-run " + cfg2.string(), dir.path / "log.txt") == 1);
    CHECK(slurp(dir.path / "log.txt").find("learning_rte") != std::string::npos);

    std::ofstream(dir.path / "broken.json") << "{ not json";
    CHECK(run("train-grpo --dry-run " + (dir.path / "broken.json").string(),
              dir.path / "log.txt") == 1);
}

TEST_CASE("cli train-grpo writes the full artifact set") {
    TempDir dir("artifacts");
    fs::path out = dir.path / "out";
    fs::path cfg = write_config(dir, small_config(out));
    REQUIRE(run("train-grpo " + cfg.string(), dir.path / "log.txt") == 0);
    for (const char* name : {"dataset.jsonl", "probes.jsonl", "config.resolved.json", "metrics.csv",
                             "rollouts.jsonl", "checkpoint.json"}) {
        CHECK_MESSAGE(fs::exists(out / name), name);
    }
    std::ifstream csv(out / "metrics.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "step,reward_mean,entropy_mean,pass1_probe,clip_frac,kl_mean,rbf_mean,len_mean");
    int rows = 0;
    for (std::string line; std::getline(csv, line);) ++rows;
    CHECK(rows == 4);  // one row per training step

    SUBCASE("existing output is refused without --force") {
        CHECK(run("train-grpo " + cfg.string(), dir.path / "log.txt") == 1);
        CHECK(slurp(dir.path / "log.txt").find("--force") != std::string::npos);
        CHECK(run("train-grpo --force " + cfg.string(), dir.path / "log.txt") == 0);
    }

    SUBCASE("metrics subcommand recomputes summaries from the rollout log") {
        fs::path mout = dir.path / "mout";
        REQUIRE(run("metrics --rollouts " + (out / "rollouts.jsonl").string() + " --ks 1 --out " +
                        mout.string(),
                    dir.path / "log.txt") == 0);
        CHECK(fs::exists(mout / "summary.json"));
        CHECK(fs::exists(mout / "per_prompt.csv"));
        json summary = json::parse(std::ifstream(mout / "summary.json"));
        CHECK(summary["rollouts"].get<int>() > 0);
    }

    SUBCASE("eval subcommand produces pass@k artifacts") {
        fs::path eout = dir.path / "eout";
        REQUIRE(run("eval --checkpoint " + (out / "checkpoint.json").string() + " --config " +
                        cfg.string() + " -n 4 --ks 1 2 --out " + eout.string(),
                    dir.path / "log.txt") == 0);
        CHECK(fs::exists(eout / "pass_at_k.csv"));
        CHECK(fs::exists(eout / "unsolvable_sets.json"));
        CHECK(fs::exists(eout / "diversity.csv"));
        CHECK_FALSE(fs::exists(eout / "venn.json"));  // no --compare given

        fs::path vout = dir.path / "vout";
        REQUIRE(run("eval --checkpoint " + (out / "checkpoint.json").string() + " --compare " +
                        (out / "checkpoint.json").string() + " --config " + cfg.string() +
                        " -n 4 --ks 1 --out " + vout.string(),
                    dir.path / "log.txt") == 0);
        CHECK(fs::exists(vout / "venn.json"));
        json venn = json::parse(std::ifstream(vout / "venn.json"));
        CHECK(venn["1"]["only_a"].get<int>() == 0);  // identical checkpoints fully overlap
        CHECK(venn["1"]["only_b"].get<int>() == 0);
    }

    SUBCASE("intervene subcommand writes one row per requested position") {
        fs::path iout = dir.path / "iout";
        REQUIRE(run("intervene --checkpoint " + (out / "checkpoint.json").string() +
                        " --rollouts " + (out / "rollouts.jsonl").string() + " --dataset " +
                        (out / "dataset.jsonl").string() + " --positions 0 -k 2 --out " +
                        iout.string(),
                    dir.path / "log.txt") == 0);
        std::ifstream icsv(iout / "intervention.csv");
        std::string header2;
        std::getline(icsv, header2);
        CHECK(header2 == "prompt_id,rollout,t,entropy,relative_position,impact");
        int irows = 0;
        for (std::string line; std::getline(icsv, line);) ++irows;
        CHECK(irows > 0);
    }
}

TEST_CASE("cli train-rft writes reports and checkpoints") {
    TempDir dir("rft");
    fs::path out = dir.path / "out";
    fs::path cfg = write_config(dir, small_config(out));
    REQUIRE(run("train-rft " + cfg.string(), dir.path / "log.txt") == 0);
    CHECK(fs::exists(out / "rft_report_0.json"));
    CHECK(fs::exists(out / "checkpoint.json"));
    json rep = json::parse(std::ifstream(out / "rft_report_0.json"));
    CHECK(rep["candidates"].get<int>() == 16);  // 8 prompts x 2 rollouts
}

TEST_CASE("cli runs are byte-identical across repeats") {
    TempDir dir("determinism");
    fs::path out_a = dir.path / "a";
    fs::path out_b = dir.path / "b";
    json ja = small_config(out_a);
    json jb = small_config(out_b);
    fs::path cfg_a = write_config(dir, ja, "a.json");
    fs::path cfg_b = write_config(dir, jb, "b.json");
    REQUIRE(run("train-grpo " + cfg_a.string(), dir.path / "log.txt") == 0);
    REQUIRE(run("train-grpo " + cfg_b.string(), dir.path / "log.txt") == 0);
    CHECK(slurp(out_a / "metrics.csv") == slurp(out_b / "metrics.csv"));
    CHECK(slurp(out_a / "rollouts.jsonl") == slurp(out_b / "rollouts.jsonl"));
    CHECK(slurp(out_a / "dataset.jsonl") == slurp(out_b / "dataset.jsonl"));
}
