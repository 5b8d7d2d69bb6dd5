#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "twostage/calibration.hpp"
#include "twostage/cli.hpp"
#include "twostage/io.hpp"
#include "twostage/sandwich.hpp"
#include "twostage/simulation.hpp"

using namespace twostage;

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "twostage_test";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

ColumnMapping default_mapping(bool cox, bool with_design) {
    ColumnMapping m;
    if (cox) {
        m.y = "";
        m.time = "time";
        m.status = "status";
    }
    m.z = {"z1"};
    if (with_design) {
        m.stratum = "strat";
        m.cluster = "psu";
        m.weight = "w";
    }
    return m;
}

}  // namespace

TEST_CASE("config parser: sections, defaults, diagnostics") {
    ConfigFile cfg = ConfigFile::parse_string(
        "# comment\n"
        "[scenario]\n"
        "n = 500\n"
        "sigma2 = 0.5\n"
        "name = demo\n");
    const ConfigSection& s = cfg.section("scenario");
    CHECK(s.get_int("n", 0) == 500);
    CHECK(s.get_double("sigma2", 0.0) == doctest::Approx(0.5));
    CHECK(s.get_string("name", "") == "demo");
    CHECK(s.get_int("reps", 42) == 42);  // default

    CHECK_THROWS_AS(ConfigFile::parse_string("key = 1\n"), ConfigError);      // key outside section
    CHECK_THROWS_AS(ConfigFile::parse_string("[a]\nbroken\n"), ConfigError);  // not key = value
    CHECK_THROWS_AS(ConfigFile::parse_string("[a]\nk = 1\nk = 2\n"), ConfigError);
}

TEST_CASE("scenario config: unknown fields are named") {
    ConfigFile cfg = ConfigFile::parse_string(
        "[scenario]\n"
        "n = 500\n"
        "n_subet = 100\n");  // typo
    CHECK_THROWS_WITH_AS(scenario_from_config(cfg), doctest::Contains("n_subet"), ConfigError);

    ConfigFile bad_reps = ConfigFile::parse_string(
        "[scenario]\n"
        "reps = 0\n");
    CHECK_THROWS_AS(scenario_from_config(bad_reps), ConfigError);
}

TEST_CASE("csv round trip preserves every value exactly") {
    ScenarioConfig cfg;
    cfg.n_target = 120;
    cfg.n_subset = 40;
    cfg.seed = 2718;
    Dataset data = gen_srs_dataset(cfg, 0);
    auto path = temp_dir() / "roundtrip.csv";
    ColumnMapping m = default_mapping(false, false);
    write_dataset_csv(path.string(), data, m);
    Dataset back = read_dataset_csv(path.string(), m, ModelKind::binomial);
    CHECK(back.n_rows() == data.n_rows());
    CHECK(back.xstar == data.xstar);
    CHECK(back.y == data.y);
    CHECK(back.subset == data.subset);
    CHECK(back.z == data.z);
    for (int i = 0; i < data.n_rows(); ++i) {
        if (data.subset[i] != 0)
            CHECK(back.xstarstar[i] == data.xstarstar[i]);
        else
            CHECK(std::isnan(back.xstarstar[i]));
    }
}

TEST_CASE("csv reader: schema violations raise data errors") {
    auto dir = temp_dir();
    auto path = dir / "bad.csv";
    {
        std::ofstream out(path);
        out << "id,y,xstar,xstarstar,z1,subset\n";
        out << "0,1,0.5,0.7,0.1,0\n";  // xstarstar present off the subset
    }
    ColumnMapping m = default_mapping(false, false);
    CHECK_THROWS_AS(read_dataset_csv(path.string(), m, ModelKind::binomial), DataError);
    {
        std::ofstream out(path);
        out << "id,y,xstar,z1,subset\n";  // missing xstarstar column entirely
        out << "0,1,0.5,0.1,0\n";
    }
    CHECK_THROWS_AS(read_dataset_csv(path.string(), m, ModelKind::binomial), DataError);
    {
        std::ofstream out(path);
        out << "id,y,xstar,xstarstar,z1,subset\n";
        out << "0,1,abc,,0.1,0\n";
    }
    CHECK_THROWS_AS(read_dataset_csv(path.string(), m, ModelKind::binomial), DataError);
}

TEST_CASE("analyze: output matches the in-memory pipeline bit for bit") {
    ScenarioConfig cfg;
    cfg.n_target = 400;
    cfg.n_subset = 150;
    cfg.seed = 99;
    Dataset data = gen_srs_dataset(cfg, 2);
    SurveyDesign design = make_design(data);

    auto dir = temp_dir() / "analyze_roundtrip";
    std::filesystem::create_directories(dir);
    ColumnMapping m = default_mapping(false, false);
    write_dataset_csv((dir / "data.csv").string(), data, m);
    {
        std::ofstream out(dir / "analyze.ini");
        out << "[columns]\nz = z1\n[model]\nstage2 = logistic\n";
    }
    const int code = cli::run({"analyze", "--data", (dir / "data.csv").string(), "--config",
                               (dir / "analyze.ini").string(), "--out", dir.string(), "--methods",
                               "naive,sandwich", "--contrast", "1.2"});
    CHECK(code == 0);

    TwoStageFit fit = fit_two_stage(data, design, ModelKind::binomial);
    StackedSystem sys = build_stacked_system(data, design, fit);
    SandwichResult sand = sandwich_variance(sys, design);

    const std::string report = read_file(dir / "report.csv");
    // the exposure estimate and its sandwich SE appear with full precision
    CHECK(report.find(format_double(fit.stage2.coefficients[1])) != std::string::npos);
    CHECK(report.find(format_double(sand.se[sys.j + 1])) != std::string::npos);

    const std::string contrast = read_file(dir / "report_contrast.csv");
    const double lc = std::log(1.2);
    CHECK(contrast.find(format_double(std::exp(lc * fit.stage2.coefficients[1]))) != std::string::npos);
}

TEST_CASE("analyze: degenerate calibration gives sandwich close to naive") {
    // subset everywhere and xstarstar == xstar: xhat == xstar and the
    // stage-1 contribution to the sandwich is pure noise around zero
    ScenarioConfig cfg;
    cfg.n_target = 300;
    cfg.n_subset = 300;
    cfg.seed = 4;
    Dataset data = gen_srs_dataset(cfg, 1);
    for (int i = 0; i < data.n_rows(); ++i) data.xstarstar[i] = data.xstar[i];
    SurveyDesign design = make_design(data);
    TwoStageFit fit = fit_two_stage(data, design, ModelKind::binomial);
    CHECK((fit.xhat - data.xstar).cwiseAbs().maxCoeff() < 1e-8);
    StackedSystem sys = build_stacked_system(data, design, fit);
    SandwichResult sand = sandwich_variance(sys, design);
    Eigen::MatrixXd naive = one_model_variance(fit.stage2, design);
    const double se_sand = sand.se[sys.j + 1];
    const double se_naive = std::sqrt(naive(1, 1));
    CHECK(se_sand == doctest::Approx(se_naive).epsilon(0.02));
}

TEST_CASE("cli exit codes") {
    auto dir = temp_dir() / "cli_codes";
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "bad.ini");
        out << "[scenario]\nreps = 0\n";
    }
    CHECK(cli::run({"simulate", "--config", (dir / "bad.ini").string(), "--out", dir.string()}) == 2);
    {
        std::ofstream out(dir / "unknown.ini");
        out << "[scenario]\nrps = 10\n";
    }
    CHECK(cli::run({"simulate", "--config", (dir / "unknown.ini").string(), "--out", dir.string()}) == 2);
    CHECK(cli::run({"simulate", "--config", (dir / "missing.ini").string(), "--out", dir.string()}) == 2);

    {
        std::ofstream out(dir / "analyze.ini");
        out << "[columns]\nz = z1\n[model]\nstage2 = logistic\n";
    }
    {
        std::ofstream out(dir / "bad.csv");
        out << "id,y,xstar,xstarstar,z1,subset\n0,1,0.5,0.7,0.1,0\n";
    }
    CHECK(cli::run({"analyze", "--data", (dir / "bad.csv").string(), "--config", (dir / "analyze.ini").string(),
                    "--out", dir.string()}) == 3);

    // numerical failure: perfectly separated stage-2 outcome
    {
        std::ofstream out(dir / "separated.csv");
        out << "id,y,xstar,xstarstar,z1,subset\n";
        for (int i = 0; i < 24; ++i) {
            const double x = (i - 12) / 4.0;
            out << i << ',' << (x > 0 ? 1 : 0) << ',' << x << ',';
            if (i % 2 == 0) out << x * 0.9;
            out << ',' << 0.01 * i << ',' << (i % 2 == 0 ? 1 : 0) << '\n';
        }
    }
    CHECK(cli::run({"analyze", "--data", (dir / "separated.csv").string(), "--config",
                    (dir / "analyze.ini").string(), "--out", dir.string()}) == 4);
}

TEST_CASE("analyze: --seed coexists with a config seed, cox path works") {
    const std::string root = TWOSTAGE_SOURCE_DIR;
    auto dir = temp_dir() / "cox_seed";
    std::filesystem::create_directories(dir);
    const int code = cli::run({"analyze", "--data", root + "/data/example_cox.csv", "--config",
                               root + "/data/analyze_cox.ini", "--out", dir.string(), "--methods",
                               "naive,sandwich", "--seed", "5"});
    CHECK(code == 0);
    const std::string report = read_file(dir / "report.csv");
    CHECK(report.find("sandwich,xhat") != std::string::npos);
    CHECK(report.find("(intercept)") == std::string::npos);  // cox model has no intercept
}

TEST_CASE("simulate command writes the report files and honors threads") {
    auto dir = temp_dir() / "simulate_cmd";
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "scenario.ini");
        out << "[scenario]\nname = smoke\nn = 300\nn_subset = 120\nreps = 4\nseed = 12\n";
    }
    auto out1 = dir / "out1";
    auto out2 = dir / "out2";
    CHECK(cli::run({"simulate", "--config", (dir / "scenario.ini").string(), "--out", out1.string(),
                    "--threads", "1"}) == 0);
    CHECK(cli::run({"simulate", "--config", (dir / "scenario.ini").string(), "--out", out2.string(),
                    "--threads", "2"}) == 0);
    const std::string r1 = read_file(out1 / "report.csv");
    const std::string r2 = read_file(out2 / "report.csv");
    CHECK(r1 == r2);
    CHECK(r1.find("scenario,method,coefficient,estimate,pct_bias,mad,ase,cp,ci_low,ci_high") == 0);
    CHECK(r1.find("smoke,rc_sandwich,xhat") != std::string::npos);
    CHECK(read_file(out1 / "report.txt").find("rc_sandwich") != std::string::npos);
}
