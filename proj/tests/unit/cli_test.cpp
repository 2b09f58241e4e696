#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "belltest/csv.hpp"
#include "belltest/efficiency.hpp"
#include "support/test_support.hpp"

// End-to-end checks of the installed command-line surface; the binary path
// comes from the build system.

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args, const std::filesystem::path& scratch) {
    const std::filesystem::path log = scratch / "cli_output.txt";
    const std::string cmd =
        std::string(BELLTEST_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_rotated_counts_csv(const std::filesystem::path& p) {
    belltest::csv::Writer w(p.string());
    w.line("a_deg,b_deg,c_pp");
    for (const auto& r : testsupport::rotated_counts_table()) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%g,%g,%lld", r.a_rad * 180.0 / 3.14159265358979323846,
                      r.b_rad * 180.0 / 3.14159265358979323846, static_cast<long long>(r.c_pp));
        w.line(buf);
    }
    w.flush();
}

} // namespace

TEST(Cli, UnknownFlagExitsTwo) {
    testsupport::TempDir tmp("cli_unknown");
    const RunResult r = run_cli("chsh --no-such-flag", tmp.path());
    EXPECT_EQ(r.exit_code, 2);
}

TEST(Cli, MissingDatasetExitsThree) {
    testsupport::TempDir tmp("cli_missing");
    const RunResult r = run_cli("histogram --data " + (tmp.path() / "nope").string() + " --out " +
                                    (tmp.path() / "out").string(),
                                tmp.path());
    EXPECT_EQ(r.exit_code, 3);
    EXPECT_NE(r.output.find("missing file"), std::string::npos);
}

TEST(Cli, RotatedCountsChshPrintsPublishedS) {
    testsupport::TempDir tmp("cli_chsh");
    const auto counts = tmp.path() / "counts.csv";
    write_rotated_counts_csv(counts);
    const RunResult r = run_cli("chsh --counts " + counts.string() +
                                    " --angles 0,45,22.5,67.5 --rotated-runs --out " +
                                    (tmp.path() / "out").string(),
                                tmp.path());
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("2.730"), std::string::npos) << r.output;
    EXPECT_TRUE(std::filesystem::exists(tmp.path() / "out" / "chsh.json"));
    EXPECT_TRUE(std::filesystem::exists(tmp.path() / "out" / "run_report.json"));
}

TEST(Cli, HypothesisOnPublishedCountsPassesStrict) {
    testsupport::TempDir tmp("cli_hyp");
    const auto counts = tmp.path() / "counts.csv";
    write_rotated_counts_csv(counts);
    const RunResult r = run_cli("hypothesis --counts " + counts.string() +
                                    " --angles 0,45,22.5,67.5 --rotated-runs --strict --out " +
                                    (tmp.path() / "out").string(),
                                tmp.path());
    EXPECT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("PASS with warnings"), std::string::npos) << r.output;
}

TEST(Cli, StrictHypothesisFailureExitsFour) {
    testsupport::TempDir tmp("cli_hypfail");
    const auto counts = tmp.path() / "counts.csv";
    {
        belltest::csv::Writer w(counts.string());
        w.line("a_deg,b_deg,c_pp,c_pm,c_mp,c_mm");
        // E1 swings from +0.4 to -0.4 when b' replaces b
        w.line("0,22.5,12000,2000,2000,4000");
        w.line("0,67.5,4000,2000,2000,12000");
        w.line("45,22.5,8000,2000,2000,8000");
        w.line("45,67.5,8000,2000,2000,8000");
        w.flush();
    }
    const RunResult r = run_cli("hypothesis --counts " + counts.string() +
                                    " --angles 0,45,22.5,67.5 --strict --out " +
                                    (tmp.path() / "out").string(),
                                tmp.path());
    EXPECT_EQ(r.exit_code, 4) << r.output;
    EXPECT_NE(r.output.find("FAIL"), std::string::npos);
}

TEST(Cli, SimulateThenSweepSmokeRun) {
    testsupport::TempDir tmp("cli_smoke");
    const auto data = (tmp.path() / "d").string();
    RunResult r = run_cli("simulate --model singlet --pairs 20000 --seed 7 --out " + data,
                          tmp.path());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    ASSERT_TRUE(std::filesystem::exists(tmp.path() / "d" / "station1.csv"));

    r = run_cli("sweep --data " + data + " --angles chsh-default --window-grid 2000:10000:4000" +
                    " --out " + (tmp.path() / "sweep").string(),
                tmp.path());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    const std::string sweep_csv = read_file(tmp.path() / "sweep" / "sweep.csv");
    EXPECT_EQ(sweep_csv.rfind("W_ps,S,S_bound,Nc,", 0), 0u);
    EXPECT_TRUE(std::filesystem::exists(tmp.path() / "sweep" / "sweep.json"));
    EXPECT_TRUE(std::filesystem::exists(tmp.path() / "sweep" / "run_report.json"));
}

TEST(Cli, SimulateIsByteReproducible) {
    testsupport::TempDir tmp("cli_repro");
    const std::string flags = "simulate --model local --pairs 5000 --seed 11 --t0-ps 500000 "
                              "--eta1 0.8,0.6 --out ";
    ASSERT_EQ(run_cli(flags + (tmp.path() / "a").string(), tmp.path()).exit_code, 0);
    ASSERT_EQ(run_cli(flags + (tmp.path() / "b").string(), tmp.path()).exit_code, 0);
    EXPECT_EQ(read_file(tmp.path() / "a" / "station1.csv"),
              read_file(tmp.path() / "b" / "station1.csv"));
    EXPECT_EQ(read_file(tmp.path() / "a" / "station2.csv"),
              read_file(tmp.path() / "b" / "station2.csv"));
}

TEST(Cli, OffsetEstimateAndCoincidences) {
    testsupport::TempDir tmp("cli_offset");
    const auto data = (tmp.path() / "d").string();
    ASSERT_EQ(run_cli("simulate --pairs 5000 --seed 3 --fixed 0,22.5 --jitter-ps 0 --out " + data,
                      tmp.path())
                  .exit_code,
              0);
    RunResult r = run_cli("offset --data " + data + " --bin 500 --range 100000 --out " +
                              (tmp.path() / "off").string(),
                          tmp.path());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("Delta_G = 0 ps"), std::string::npos) << r.output;

    r = run_cli("coincidences --data " + data + " --window 10000 --out " +
                    (tmp.path() / "coin").string(),
                tmp.path());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_TRUE(std::filesystem::exists(tmp.path() / "coin" / "pairs.csv"));
    EXPECT_TRUE(std::filesystem::exists(tmp.path() / "coin" / "counts.csv"));
    const std::string pairs_csv = read_file(tmp.path() / "coin" / "pairs.csv");
    EXPECT_EQ(pairs_csv.rfind("i1,i2,delta_ps", 0), 0u);
}

TEST(Cli, ReportRefusesAcausalOffsetWithoutFlag) {
    testsupport::TempDir tmp("cli_acausal");
    const auto data = (tmp.path() / "d").string();
    ASSERT_EQ(run_cli("simulate --pairs 10000 --seed 5 --out " + data, tmp.path()).exit_code, 0);

    RunResult r = run_cli("report --data " + data + " --delta-g 500 --out " +
                              (tmp.path() / "rep").string(),
                          tmp.path());
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.output.find("--allow-acausal"), std::string::npos);

    r = run_cli("report --data " + data + " --delta-g 500 --allow-acausal --window-grid "
                "4000:12000:4000 --out " + (tmp.path() / "rep").string(),
                tmp.path());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    const std::string report = read_file(tmp.path() / "rep" / "run_report.json");
    EXPECT_NE(report.find("\"acausal\": true"), std::string::npos);
}

TEST(Cli, ReportEmitsAllFourArtifacts) {
    testsupport::TempDir tmp("cli_report");
    const auto data = (tmp.path() / "d").string();
    ASSERT_EQ(run_cli("simulate --pairs 30000 --seed 9 --out " + data, tmp.path()).exit_code, 0);
    const RunResult r = run_cli("report --data " + data +
                                    " --window-grid 4000:12000:4000 --window 10000 --out " +
                                    (tmp.path() / "rep").string(),
                                tmp.path());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    for (const char* name : {"sweep.csv", "singles.csv", "counts.csv", "correlations.csv",
                             "hypothesis.json", "chsh.json", "run_report.json"}) {
        EXPECT_TRUE(std::filesystem::exists(tmp.path() / "rep" / name)) << name;
    }
}

TEST(Cli, EfficiencyFitFromEstimatesFile) {
    testsupport::TempDir tmp("cli_eff");
    const auto est = tmp.path() / "estimates.csv";
    {
        // consistent forward-model data for one parameter set
        const double r1 = 0.17, r2 = -0.01;
        const double e1h[2] = {-0.15, -0.25};
        const double e2h[2] = {0.10, -0.12};
        const double eh[4] = {-0.60, 0.40, -0.45, -0.55};
        const char* names[4] = {"ab", "abp", "apb", "apbp"};
        belltest::csv::Writer w(est.string());
        w.line("pair,E1,E2,E");
        for (int k = 0; k < 4; ++k) {
            const auto [i, j] = belltest::pair_station_indices(belltest::all_pairs[k]);
            const auto f = belltest::forward_model(r1, r2, e1h[i], e2h[j], eh[k]);
            char buf[128];
            std::snprintf(buf, sizeof(buf), "%s,%.12f,%.12f,%.12f", names[k], f.e1, f.e2, f.e);
            w.line(buf);
        }
        w.flush();
    }
    const RunResult r = run_cli("efficiency-fit --estimates " + est.string() + " --out " +
                                    (tmp.path() / "out").string(),
                                tmp.path());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("discrepancy"), std::string::npos);
    EXPECT_TRUE(std::filesystem::exists(tmp.path() / "out" / "consistency.csv"));

    // malformed value: parse error -> exit 2
    {
        belltest::csv::Writer w(est.string());
        w.line("pair,E1,E2,E");
        w.line("ab,0.1,not-a-number,0.2");
        w.flush();
    }
    const RunResult bad = run_cli("efficiency-fit --estimates " + est.string() + " --out " +
                                      (tmp.path() / "out2").string(),
                                  tmp.path());
    EXPECT_EQ(bad.exit_code, 2);
}
