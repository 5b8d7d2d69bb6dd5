#include "twostage/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include "twostage/calibration.hpp"
#include "twostage/io.hpp"
#include "twostage/resampling.hpp"
#include "twostage/rng.hpp"
#include "twostage/sandwich.hpp"
#include "twostage/simulation.hpp"
#include "twostage/stats.hpp"

namespace twostage::cli {

namespace {

constexpr double kBlank = std::numeric_limits<double>::quiet_NaN();

struct ReportLine {
    std::string scenario;
    std::string method;
    std::string coefficient;
    double estimate = kBlank;
    double pct_bias = kBlank;
    double mad = kBlank;
    double ase = kBlank;
    double cp = kBlank;
    double ci_low = kBlank;
    double ci_high = kBlank;
};

std::string field(double v) { return std::isnan(v) ? std::string() : format_double(v); }

void write_report_csv(const std::string& path, const std::vector<ReportLine>& lines) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "scenario,method,coefficient,estimate,pct_bias,mad,ase,cp,ci_low,ci_high\n";
    for (const auto& l : lines) {
        out << l.scenario << ',' << l.method << ',' << l.coefficient << ',' << field(l.estimate) << ','
            << field(l.pct_bias) << ',' << field(l.mad) << ',' << field(l.ase) << ',' << field(l.cp) << ','
            << field(l.ci_low) << ',' << field(l.ci_high) << '\n';
    }
}

struct MethodSelection {
    bool naive = true;
    bool sandwich = true;
    bool bootstrap = false;
    bool mi = false;
};

struct IntervalSelection {
    bool wald = true;
    bool percentile = false;
    bool bca = false;
};

MethodSelection parse_methods(const std::string& csv) {
    MethodSelection sel;
    sel.naive = sel.sandwich = false;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item == "naive")
            sel.naive = true;
        else if (item == "sandwich")
            sel.sandwich = true;
        else if (item == "bootstrap")
            sel.bootstrap = true;
        else if (item == "mi")
            sel.mi = true;
        else if (!item.empty())
            throw ConfigError("--methods: unknown method '" + item + "'");
    }
    if (!sel.naive && !sel.sandwich && !sel.bootstrap && !sel.mi)
        throw ConfigError("--methods: no variance method selected");
    return sel;
}

IntervalSelection parse_intervals(const std::string& csv) {
    IntervalSelection sel;
    sel.wald = false;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item == "wald")
            sel.wald = true;
        else if (item == "percentile")
            sel.percentile = true;
        else if (item == "bca")
            sel.bca = true;
        else if (!item.empty())
            throw ConfigError("--intervals: unknown interval type '" + item + "'");
    }
    if (!sel.wald && !sel.percentile && !sel.bca) sel.wald = true;
    return sel;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir, int threads,
                 std::optional<std::uint64_t> seed_override) {
    ConfigFile config = ConfigFile::parse_file(config_path);
    ScenarioConfig scenario = scenario_from_config(config);
    if (seed_override) scenario.seed = *seed_override;

    StudyReport report = run_study(scenario, threads);

    std::filesystem::create_directories(out_dir);
    std::vector<ReportLine> lines;
    for (const auto& row : report.rows) {
        ReportLine l;
        l.scenario = report.scenario;
        l.method = row.method;
        l.coefficient = row.method == "truth" ? "x_true" : (row.method == "naive" ? "xstar" : "xhat");
        l.estimate = row.estimate;
        l.pct_bias = row.pct_bias;
        l.mad = row.mad;
        l.ase = row.ase;
        l.cp = row.cp;
        lines.push_back(std::move(l));
    }
    write_report_csv((std::filesystem::path(out_dir) / "report.csv").string(), lines);
    std::ofstream txt(std::filesystem::path(out_dir) / "report.txt", std::ios::binary);
    txt << format_report_table(report);
    std::cout << format_report_table(report);
    return 0;
}

struct AnalyzeOptions {
    std::string data_path;
    std::string config_path;
    std::string out_dir;
    std::string methods_csv;
    std::string intervals_csv;
    double contrast = 0.0;
    int threads = 1;
    std::optional<std::uint64_t> seed;
};

int cmd_analyze(const AnalyzeOptions& opt) {
    ConfigFile config = ConfigFile::parse_file(opt.config_path);
    config.check_known_sections({"columns", "model", "methods", "bootstrap", "mi", "analysis"});

    const ConfigSection& model = config.section("model");
    const std::string stage2 = model.get_string("stage2", "logistic");
    ModelKind kind;
    if (stage2 == "logistic")
        kind = ModelKind::binomial;
    else if (stage2 == "cox")
        kind = ModelKind::coxph;
    else if (stage2 == "linear")
        kind = ModelKind::gaussian;
    else
        throw ConfigError("[model] stage2: expected logistic, cox or linear, got '" + stage2 + "'");

    ColumnMapping mapping = mapping_from_config(config.section("columns"));
    const ConfigSection& methods_cfg = config.section("methods");
    MethodSelection methods = parse_methods(
        !opt.methods_csv.empty() ? opt.methods_csv : methods_cfg.get_string("variance", "naive,sandwich"));
    IntervalSelection intervals = parse_intervals(
        !opt.intervals_csv.empty() ? opt.intervals_csv : methods_cfg.get_string("intervals", "wald"));

    const ConfigSection& analysis = config.section("analysis");
    const double level = analysis.get_double("level", 0.95);
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("[analysis] level must be in (0,1)");
    const std::uint64_t config_seed = analysis.get_uint64("seed", 1);
    const std::uint64_t seed = opt.seed ? *opt.seed : config_seed;
    const int boot_b = config.section("bootstrap").get_int("b", 500);
    const int mi_m = config.section("mi").get_int("m", 25);
    const bool mi_rubin = config.section("mi").get_bool("rubin_factor", false);
    config.check_all_used();

    Dataset data = read_dataset_csv(opt.data_path, mapping, kind);
    SurveyDesign design = make_design(data);
    const bool explicit_design = !mapping.stratum.empty() || !mapping.cluster.empty() || !mapping.weight.empty();

    TwoStageFit fit = fit_two_stage(data, design, kind);
    const Eigen::Index k = fit.stage2.coefficients.size();
    std::vector<std::string> coef_names;
    if (kind != ModelKind::coxph) coef_names.push_back("(intercept)");
    coef_names.push_back("xhat");
    for (const auto& z : mapping.z) coef_names.push_back(z);

    const double zq = normal_quantile(1.0 - (1.0 - level) / 2.0);
    std::vector<ReportLine> lines;
    auto wald_lines = [&](const std::string& method, const Eigen::VectorXd& se) {
        for (Eigen::Index c = 0; c < k; ++c) {
            ReportLine l;
            l.scenario = "analysis";
            l.method = method;
            l.coefficient = coef_names[static_cast<std::size_t>(c)];
            l.estimate = fit.stage2.coefficients[c];
            l.ase = se[c];
            if (intervals.wald || method != "bootstrap") {
                l.ci_low = l.estimate - zq * se[c];
                l.ci_high = l.estimate + zq * se[c];
            }
            lines.push_back(std::move(l));
        }
    };

    Eigen::VectorXd sandwich_se;
    if (methods.naive) {
        Eigen::VectorXd se = one_model_variance(fit.stage2, design).diagonal().cwiseMax(0.0).cwiseSqrt();
        wald_lines("naive", se);
    }
    if (methods.sandwich) {
        StackedSystem system = build_stacked_system(data, design, fit);
        const SurveyDesign vdesign = explicit_design ? augment_strata(design, data.subset) : design;
        SandwichResult res = sandwich_variance(system, vdesign);
        sandwich_se = res.se.tail(k);
        wald_lines("sandwich", sandwich_se);
    }
    if (methods.bootstrap) {
        BootstrapDraws draws = stratified_bootstrap(data, design, kind, boot_b, seed, opt.threads);
        std::optional<Eigen::MatrixXd> jack;
        if (intervals.bca) jack = jackknife_two_stage(data, design, kind, opt.threads);
        BootstrapIntervals ci =
            bootstrap_intervals(draws, fit.stage2.coefficients, level, jack ? &*jack : nullptr);
        Eigen::VectorXd se(k);
        std::vector<double> col(static_cast<std::size_t>(draws.estimates.rows()));
        for (Eigen::Index c = 0; c < k; ++c) {
            for (Eigen::Index r = 0; r < draws.estimates.rows(); ++r)
                col[static_cast<std::size_t>(r)] = draws.estimates(r, c);
            se[c] = sample_sd(col);
        }
        auto emit = [&](const std::string& method, const CoefficientIntervals& iv) {
            for (Eigen::Index c = 0; c < k; ++c) {
                ReportLine l;
                l.scenario = "analysis";
                l.method = method;
                l.coefficient = coef_names[static_cast<std::size_t>(c)];
                l.estimate = fit.stage2.coefficients[c];
                l.ase = se[c];
                l.ci_low = iv.lower[c];
                l.ci_high = iv.upper[c];
                lines.push_back(std::move(l));
            }
        };
        if (intervals.wald) emit("bootstrap_wald", ci.wald);
        if (intervals.percentile) emit("bootstrap_percentile", ci.percentile);
        if (intervals.bca && ci.bca) emit("bootstrap_bca", *ci.bca);
        if (draws.n_failed > 0)
            std::cerr << "note: " << draws.n_failed << " of " << boot_b
                      << " bootstrap replicates failed and were excluded\n";
    }
    if (methods.mi) {
        MIResult mi = mi_variance(data, design, kind, mi_m, seed, opt.threads, mi_rubin);
        wald_lines("mi", mi.v_star.cwiseMax(0.0).cwiseSqrt());
    }

    std::filesystem::create_directories(opt.out_dir);
    write_report_csv((std::filesystem::path(opt.out_dir) / "report.csv").string(), lines);

    // aligned text summary
    {
        std::ofstream txt(std::filesystem::path(opt.out_dir) / "report.txt", std::ios::binary);
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-22s %-12s %12s %10s %12s %12s\n", "method", "coefficient", "estimate",
                      "se", "ci_low", "ci_high");
        txt << buf;
        for (const auto& l : lines) {
            std::snprintf(buf, sizeof buf, "%-22s %-12s %12.6f %10.6f %12.6f %12.6f\n", l.method.c_str(),
                          l.coefficient.c_str(), l.estimate, l.ase, l.ci_low, l.ci_high);
            txt << buf;
        }
    }

    // exposure contrast table: a multiplicative change of `contrast` in the
    // exposure moves the linear predictor by log(contrast) * beta_xhat
    if (opt.contrast > 0.0) {
        if (opt.contrast == 1.0) throw ConfigError("--contrast must differ from 1");
        const double lc = std::log(opt.contrast);
        std::vector<ReportLine> contrast_lines;
        for (const auto& l : lines) {
            if (l.coefficient != "xhat") continue;
            ReportLine c = l;
            c.coefficient = "xhat_contrast";
            const bool exponentiate = kind != ModelKind::gaussian;
            auto transform = [&](double v) { return exponentiate ? std::exp(lc * v) : lc * v; };
            c.estimate = transform(l.estimate);
            c.ase = kBlank;
            if (!std::isnan(l.ci_low)) {
                c.ci_low = transform(l.ci_low);
                c.ci_high = transform(l.ci_high);
                if (c.ci_low > c.ci_high) std::swap(c.ci_low, c.ci_high);
            }
            contrast_lines.push_back(std::move(c));
        }
        write_report_csv((std::filesystem::path(opt.out_dir) / "report_contrast.csv").string(), contrast_lines);
    }
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Two-stage regression calibration with stacked sandwich variance estimation"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".";
    int threads = 1;
    std::uint64_t seed_value = 0;
    bool seed_given = false;

    auto* simulate = app.add_subcommand("simulate", "Run a simulation study from a scenario config");
    simulate->add_option("--config", config_path, "scenario config file")->required();
    simulate->add_option("--out", out_dir, "output directory");
    simulate->add_option("--threads", threads, "worker threads");
    simulate->add_option("--seed", seed_value, "override the scenario seed")->each([&](const std::string&) {
        seed_given = true;
    });

    AnalyzeOptions aopt;
    auto* analyze = app.add_subcommand("analyze", "Two-stage analysis of a CSV dataset");
    analyze->add_option("--data", aopt.data_path, "input CSV")->required();
    analyze->add_option("--config", aopt.config_path, "column-mapping / model config file")->required();
    analyze->add_option("--out", aopt.out_dir, "output directory")->required();
    analyze->add_option("--methods", aopt.methods_csv, "comma list: naive,sandwich,bootstrap,mi");
    analyze->add_option("--intervals", aopt.intervals_csv, "comma list: wald,percentile,bca");
    analyze->add_option("--contrast", aopt.contrast, "multiplicative exposure contrast (e.g. 1.2)");
    analyze->add_option("--threads", aopt.threads, "worker threads");
    std::uint64_t aseed = 0;
    bool aseed_given = false;
    analyze->add_option("--seed", aseed, "resampling seed")->each([&](const std::string&) { aseed_given = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (simulate->parsed())
            return cmd_simulate(config_path, out_dir, threads,
                                seed_given ? std::optional<std::uint64_t>(seed_value) : std::nullopt);
        if (analyze->parsed()) {
            if (aseed_given) aopt.seed = aseed;
            return cmd_analyze(aopt);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const DomainError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const LonelyPsuError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const Error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
    return 0;
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("twostage");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace twostage::cli
