#include "hadamard/pipeline.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <regex>

using namespace hadamard;
using config::Config;
using pipeline::json;

namespace {

namespace fs = std::filesystem;

const std::string kConfigs = HADAMARD_CONFIG_DIR;
const std::string kCli = HADAMARD_CLI;

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    fs::path d = fs::temp_directory_path() / ("hadamard_cli_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::optional<ErrorCode> code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

struct CliRun {
    int code;
    std::string out, err;
};

CliRun run_cli(const std::string& args, const fs::path& dir) {
    const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
    const std::string cmd = kCli + " " + args + " > " + o.string() + " 2> " + e.string();
    const int st = std::system(cmd.c_str());
    return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, read_file(o), read_file(e)};
}

std::string without_timestamp(const std::string& s) {
    return std::regex_replace(s, std::regex(R"("generated_at": "[^"]*")"), R"("generated_at": "")");
}

const char* kMinimal = R"(# minimal flat scalar run
[spacetime]
name = minkowski
m = 3
chart_lo = -2, -2, -2
chart_hi = 2, 2, 2
time_axis = 0

[bundle]
kind = scalar
mass = 0

[series]
n = 1
K = 2
time_function = coordinate

[probe]
base_point = 0, 0, 0

[coeffs]
n_cheb = 7
box_half = 0.28

[predict_r]
seeds = 8
t1 = 0.5
n_out = 2

[output]
dir = out

[run]
seed = 3
)";

}  // namespace

// ---------------------------------------------------------------------------
// Config format
// ---------------------------------------------------------------------------

TEST(Config, TypedAccess) {
    Config c = Config::parse(kMinimal);
    EXPECT_EQ(c.get_string("spacetime.name"), "minkowski");
    EXPECT_EQ(c.get_int("spacetime.m"), 3);
    EXPECT_DOUBLE_EQ(c.get_double("coeffs.box_half"), 0.28);
    EXPECT_EQ(c.get_doubles("spacetime.chart_lo", 3, 3), (std::vector<double>{-2, -2, -2}));
    EXPECT_EQ(c.get_u64("run.seed"), 3u);
}

TEST(Config, CanonicalTextRoundTripsByteIdentically) {
    EXPECT_EQ(Config::parse(kMinimal).serialize(), kMinimal);
    for (const auto& e : fs::directory_iterator(kConfigs)) {
        const std::string text = read_file(e.path());
        EXPECT_EQ(Config::load(e.path().string()).serialize(), text) << e.path();
    }
}

TEST(Config, LooseTextReachesAFixedPoint) {
    const std::string loose = "  # note\n[ a ]\n  x=1\ny =   2, 3 \n\n[b]\nz= w\n";
    const std::string once = Config::parse(loose).serialize();
    EXPECT_EQ(once, "# note\n[a]\nx = 1\ny = 2, 3\n\n[b]\nz = w\n");
    EXPECT_EQ(Config::parse(once).serialize(), once);
}

TEST(Config, SetReplacesOrAppends) {
    Config c = Config::parse("[a]\nx = 1\n\n[b]\ny = 2\n");
    c.set("a.x", "5");
    c.set("a.z", "6");
    c.set("c.w", "7");
    EXPECT_EQ(c.serialize(), "[a]\nx = 5\nz = 6\n\n[b]\ny = 2\n\n[c]\nw = 7\n");
    EXPECT_EQ(c.get_int("a.z"), 6);
}

TEST(Config, MalformedInputIsRejected) {
    for (const char* bad : {"x = 1\n", "[a]\nx = 1\nx = 2\n", "[a]\n[a]\n", "[a\n", "[a]\njunk\n", "[a]\nb c = 1\n"})
        EXPECT_EQ(code_of([&] { Config::parse(bad); }), ErrorCode::ConfigError) << bad;
}

TEST(Config, ErrorsNameTheKey) {
    Config c = Config::parse("[a]\nx = abc\ny = 7\nl = 1, 2\n");
    auto message = [](const std::function<void()>& f) {
        try {
            f();
        } catch (const Error& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_NE(message([&] { c.get_double("a.missing"); }).find("'a.missing'"), std::string::npos);
    EXPECT_NE(message([&] { c.get_double("a.x"); }).find("'a.x'"), std::string::npos);
    EXPECT_NE(message([&] { c.get_int("a.y", 0, 5); }).find("'a.y'"), std::string::npos);
    EXPECT_NE(message([&] { c.get_doubles("a.l", 3, 3); }).find("'a.l'"), std::string::npos);
    Config d = Config::parse("[a]\nx = 1\nspeed = 2\n");
    d.get_int("a.x");
    EXPECT_NE(message([&] { d.require_all_used(); }).find("unknown key 'a.speed'"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

TEST(RunConfig, ShippedConfigsParse) {
    int n = 0;
    for (const auto& e : fs::directory_iterator(kConfigs)) {
        EXPECT_NO_THROW(pipeline::load_run_config(e.path().string())) << e.path();
        ++n;
    }
    EXPECT_GE(n, 4);
}

TEST(RunConfig, PhysicsParametersAreNeverDefaulted) {
    for (const std::string key : {"bundle.mass", "spacetime.m", "series.K", "probe.base_point", "run.seed"}) {
        std::string text = kMinimal;
        const std::string k = key.substr(key.find('.') + 1);
        text = std::regex_replace(text, std::regex("\n" + k + " = [^\n]*"), "");
        try {
            pipeline::parse_run_config(Config::parse(text));
            ADD_FAILURE() << key << " accepted when missing";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::ConfigError);
            EXPECT_NE(std::string(e.what()).find("'" + key + "'"), std::string::npos) << e.what();
        }
    }
}

TEST(RunConfig, UnknownKeysAndMissingSections) {
    Config c = Config::parse(std::string(kMinimal) + "\n[kernel]\nn = 64\nh = 0.05\neps = 0.075\nspeed = 2\n");
    EXPECT_EQ(code_of([&] { pipeline::parse_run_config(c); }), ErrorCode::ConfigError);
    auto rc = pipeline::parse_run_config(Config::parse(kMinimal));
    EXPECT_EQ(code_of([&] { pipeline::sample_kernel(rc); }), ErrorCode::ConfigError);
}

TEST(RunConfig, SeriesOrderMustCoverTheExpansion) {
    std::string text = std::regex_replace(std::string(kMinimal), std::regex("K = 2"), "K = 0");
    auto rc = pipeline::parse_run_config(Config::parse(text));
    EXPECT_EQ(code_of([&] { pipeline::require_series_order(rc); }), ErrorCode::ConfigError);
}

// ---------------------------------------------------------------------------
// Commands in process
// ---------------------------------------------------------------------------

TEST(Commands, FlatCoefficientSummary) {
    auto dir = scratch("coeffs");
    Config c = Config::parse(kMinimal);
    c.set("output.dir", dir.string());
    auto res = pipeline::cmd_coeffs(pipeline::parse_run_config(c));
    EXPECT_EQ(res.exit_code, 0);
    const json& s = res.report["summary"];
    EXPECT_LE(s["max_abs_U0_minus_identity"].get<double>(), 1e-6);
    EXPECT_LE(s["max_abs_Uk"][1].get<double>(), 1e-6);
    EXPECT_LE(s["max_abs_Uk"][2].get<double>(), 1e-6);
    json table = json::parse(read_file(dir / "coeffs.json"));
    EXPECT_EQ(table["U"].size(), 3u);
    EXPECT_EQ(table["U"][0]["re"].size(), table["summary"]["n_nodes"].get<std::size_t>());
}

TEST(Commands, ZeroOrderTableHoldsOnlyTheLeadingCoefficient) {
    auto dir = scratch("coeffs_k0");
    Config c = Config::parse(kMinimal);
    c.set("output.dir", dir.string());
    c.set("series.K", "0");
    pipeline::cmd_coeffs(pipeline::parse_run_config(c));
    json table = json::parse(read_file(dir / "coeffs.json"));
    EXPECT_EQ(table["K"], 0);
    ASSERT_EQ(table["U"].size(), 1u);
    EXPECT_EQ(table["U"][0]["k"], 0);
}

TEST(Commands, MassiveFlatCoefficientAtTheBasePoint) {
    auto dir = scratch("coeffs_massive");
    Config c = Config::parse(kMinimal);
    c.set("output.dir", dir.string());
    c.set("bundle.mass", "0.8");
    auto res = pipeline::cmd_coeffs(pipeline::parse_run_config(c));
    const double u1 = res.report["summary"]["Uk_at_base_point"][1]["re"][0][0];
    EXPECT_NEAR(u1, -0.5 * 0.64, 1e-5 * 0.32);
}

TEST(Commands, SpacelikeSeedIsRejected) {
    Config c = Config::parse(kMinimal);
    c.set("predict_r.seed_covector", "0.1, 1, 0");
    auto rc = pipeline::parse_run_config(c);
    EXPECT_EQ(code_of([&] { pipeline::predict(rc); }), ErrorCode::NonNullSeed);
    c.set("predict_r.seed_covector", "-1, 1, 0");
    EXPECT_EQ(pipeline::predict(pipeline::parse_run_config(c)).seeds.size(), 1u);
}

TEST(Commands, TiltedTimeFunctionKeepsTheKernelCone) {
    Config c = Config::load(kConfigs + "/flat_m3_scalar.cfg");
    c.set("series.time_function", "tilted");
    c.set("series.tilt", "0.1");
    c.set("verify.suites", "cone");
    c.set("output.dir", scratch("tilted").string());
    auto rc = pipeline::parse_run_config(c);
    auto res = pipeline::cmd_verify(rc);
    EXPECT_EQ(res.exit_code, 0) << res.report.dump();
}

// ---------------------------------------------------------------------------
// Executable: exit codes and determinism
// ---------------------------------------------------------------------------

TEST(Executable, MissingKeyExitsWithConfigCodeAndNamesIt) {
    auto dir = scratch("missing");
    std::string text = std::regex_replace(std::string(kMinimal), std::regex("\nmass = 0"), "");
    std::ofstream(dir / "bad.cfg") << text;
    CliRun r = run_cli("coeffs --config " + (dir / "bad.cfg").string() + " --out " + dir.string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("bundle.mass"), std::string::npos) << r.err;
}

TEST(Executable, UnreadableConfigAndBadArguments) {
    auto dir = scratch("args");
    EXPECT_EQ(run_cli("coeffs --config " + (dir / "absent.cfg").string(), dir).code, 2);
    EXPECT_EQ(run_cli("transmogrify --config x.cfg", dir).code, 2);
    EXPECT_EQ(run_cli("coeffs", dir).code, 2);
}

TEST(Executable, SpacelikeSeedExitsWithConfigCode) {
    auto dir = scratch("seed");
    Config c = Config::parse(kMinimal);
    c.set("predict_r.seed_covector", "0.1, 1, 0");
    std::ofstream(dir / "seed.cfg") << c.serialize();
    CliRun r = run_cli("predict-r --config " + (dir / "seed.cfg").string() + " --out " + dir.string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("NonNullSeed"), std::string::npos) << r.err;
}

TEST(Executable, VerifyOnTheShippedFlatConfigPasses) {
    auto dir = scratch("verify");
    CliRun r = run_cli("verify --config " + kConfigs + "/flat_m3_scalar.cfg --out " + dir.string() + " --threads 1", dir);
    ASSERT_EQ(r.code, 0) << r.err;
    json v = json::parse(read_file(dir / "verify.json"));
    EXPECT_TRUE(v["pass"].get<bool>());
    EXPECT_EQ(v["suites"].size(), 4u);
    for (const auto& s : v["suites"]) EXPECT_TRUE(s["pass"].get<bool>()) << s.dump();
}

TEST(Executable, RerunsAreByteIdenticalApartFromTheTimestamp) {
    auto a = scratch("det_a"), b = scratch("det_b");
    const std::string cfg = " --config " + kConfigs + "/flat_m3_scalar.cfg --seed 11";
    for (const std::string cmd : {"coeffs", "predict-r", "verify"}) {
        ASSERT_EQ(run_cli(cmd + cfg + " --out " + a.string(), a).code, 0) << cmd;
        ASSERT_EQ(run_cli(cmd + cfg + " --out " + b.string() + " --threads 2", b).code, 0) << cmd;
    }
    for (const std::string f : {"coeffs.json", "predict_r.json", "verify.json"}) {
        const std::string x = read_file(a / f), y = read_file(b / f);
        ASSERT_FALSE(x.empty()) << f;
        EXPECT_NE(x.find("\"generated_at\""), std::string::npos);
        EXPECT_EQ(without_timestamp(x), without_timestamp(y)) << f;
    }
}

TEST(Executable, SeedChangesTheRandomPairs) {
    auto a = scratch("seed_a"), b = scratch("seed_b");
    Config c = Config::load(kConfigs + "/flat_m3_scalar.cfg");
    c.set("verify.suites", "commutator");
    std::ofstream(a / "c.cfg") << c.serialize();
    ASSERT_EQ(run_cli("verify --config " + (a / "c.cfg").string() + " --out " + a.string() + " --seed 1", a).code, 0);
    ASSERT_EQ(run_cli("verify --config " + (a / "c.cfg").string() + " --out " + b.string() + " --seed 2", b).code, 0);
    json x = json::parse(read_file(a / "verify.json")), y = json::parse(read_file(b / "verify.json"));
    EXPECT_EQ(x["seed"], 1);
    EXPECT_NE(x["suites"][0]["metrics"].dump(), y["suites"][0]["metrics"].dump());
}
