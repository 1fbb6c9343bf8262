#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <sys/wait.h>

#include "fedpoison/cli.hpp"
#include "test_util.hpp"

using namespace fedpoison;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

Result cli(const testutil::TempDir& dir, const std::string& args) {
    const char* bin = std::getenv("FEDPOISON_CLI");
    REQUIRE_MESSAGE(bin != nullptr, "FEDPOISON_CLI not set");
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string("\"") + bin + "\" " + args + " >\"" + out.string() +
                            "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, testutil::read_file(out),
            testutil::read_file(err)};
}

const char* kSmall = R"({
  "dataset": {"train_size": 100, "validation_size": 50, "synthetic": {"dim": 6}},
  "model": {"hidden": [8]},
  "federation": {"rounds": 2},
  "training": {"epochs": 1, "batch_size": 5},
  "attack": {"strategy": "targeted_explicit"},
  "stealth": {"histogram_bins": 4, "kappa": 1.0}
})";

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST_CASE("resolve_output_dir precedence") {
    CHECK(resolve_output_dir("x", "y", "cfg/a.json") == "x");
    CHECK(resolve_output_dir("", "y", "cfg/a.json") == "y");
    ::setenv("FEDPOISON_OUTPUT_ROOT", "/tmp/root", 1);
    CHECK(resolve_output_dir("", "", "cfg/a.json") == std::filesystem::path("/tmp/root/a"));
    ::unsetenv("FEDPOISON_OUTPUT_ROOT");
    CHECK(resolve_output_dir("", "", "cfg/a.json") == std::filesystem::path("runs/a"));
}

TEST_CASE("validate") {
    testutil::TempDir dir;
    testutil::write_file(dir / "c.json", kSmall);
    auto r = cli(dir, "validate " + (dir / "c.json").string());
    CHECK(r.code == 0);
    CHECK(contains(r.out, "ok: 100 training rows, 50 validation rows"));

    testutil::write_file(dir / "bad.json", R"({"federation": {"per_round": 30}})");
    r = cli(dir, "validate " + (dir / "bad.json").string());
    CHECK(r.code == 2);
    CHECK(contains(r.err, "per_round"));
}

TEST_CASE("run: outputs, missing file, unknown flag") {
    testutil::TempDir dir;
    testutil::write_file(dir / "c.json", kSmall);
    auto r = cli(dir, "run " + (dir / "c.json").string() + " --out " + (dir / "out").string());
    CHECK(r.code == 0);
    for (const char* f : {"metrics.csv", "histograms.csv", "final_weights.bin", "config.json"})
        CHECK(std::filesystem::exists(dir / "out" / f));

    r = cli(dir, "run " + (dir / "nope.json").string());
    CHECK(r.code != 0);
    CHECK(contains(r.out + r.err, "nope.json"));

    r = cli(dir, "run " + (dir / "c.json").string() + " --bogus");
    CHECK(r.code != 0);
    CHECK(contains(r.out + r.err, "bogus"));

    r = cli(dir, "");
    CHECK(r.code != 0);
}

TEST_CASE("sweep makes one directory per value") {
    testutil::TempDir dir;
    testutil::write_file(dir / "c.json", kSmall);
    const auto root = dir / "sweep";
    auto r = cli(dir, "sweep " + (dir / "c.json").string() +
                          " --param attack.lambda --values 1,2,10 --out " + root.string());
    REQUIRE(r.code == 0);
    for (const char* v : {"1", "2", "10"})
        CHECK(std::filesystem::exists(root / (std::string("attack.lambda=") + v) / "metrics.csv"));
    const auto summary = testutil::read_file(root / "sweep.csv");
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 4);

    r = cli(dir, "sweep " + (dir / "c.json").string() + " --param attack.lamda --values 1 --out " +
                     root.string());
    CHECK(r.code == 2);

    r = cli(dir, "sweep " + (dir / "c.json").string() + " --param federation.rounds --values 0,1 --out " +
                     (dir / "zero").string());
    REQUIRE(r.code == 0);
    const auto zero = testutil::read_file(dir / "zero" / "sweep.csv");
    CHECK(contains(zero, "\n0,0,nan,nan,nan,"));
    CHECK(contains(r.out, "rounds 0  kappa"));
}

TEST_CASE("export-hist") {
    testutil::TempDir dir;
    testutil::write_file(dir / "c.json", kSmall);
    const auto out = dir / "out";
    REQUIRE(cli(dir, "run " + (dir / "c.json").string() + " --out " + out.string()).code == 0);

    auto r = cli(dir, "export-hist " + out.string() + " --round 2 --agent 0");
    CHECK(r.code == 0);
    CHECK(r.out.rfind("agent,malicious,bin,lower,upper,count\n", 0) == 0);
    // 4 bins + underflow + overflow for agent 0, which is the adversary.
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1 + 6);
    CHECK(contains(r.out, "0,1,underflow,-inf,"));

    r = cli(dir, "export-hist " + out.string() + " --round 2");
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1 + 60);

    r = cli(dir, "export-hist " + out.string() + " --round 9");
    CHECK(r.code == 2);
    CHECK(contains(r.err, "round 9"));
}
