// Acceptance suite: one pass/fail line per criterion, driven by the shipped
// scenario presets in configs/. Run all criteria or a single one:
//
//   acceptance [--criterion N] [--threads K]

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "twostage/calibration.hpp"
#include "twostage/io.hpp"
#include "twostage/resampling.hpp"
#include "twostage/rng.hpp"
#include "twostage/sandwich.hpp"
#include "twostage/simulation.hpp"
#include "twostage/stats.hpp"

using namespace twostage;

namespace {

int g_threads = 2;

bool report(int criterion, bool pass, const std::string& detail) {
    std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    return pass;
}

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof buf, format, args);
    va_end(args);
    return buf;
}

ScenarioConfig load_scenario(const std::string& name) {
    return scenario_from_config(ConfigFile::parse_file(std::string(TWOSTAGE_SOURCE_DIR) + "/configs/" + name));
}

const StudyRow& row(const StudyReport& report, const std::string& method) {
    for (const auto& r : report.rows)
        if (r.method == method) return r;
    throw Error("missing method row: " + method);
}

// fixed 20-row toy corpus for the closed-form oracle comparisons
Dataset oracle_toy(std::uint64_t seed) {
    RngStream rng(seed);
    const int n = 20;
    Dataset data;
    data.outcome_kind = ModelKind::binomial;
    data.xstar.resize(n);
    data.xstarstar.resize(n);
    data.subset.resize(n);
    data.z.resize(n, 1);
    data.y.resize(n);
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        data.z(i, 0) = 0.3 * x + rng.normal();
        data.xstar[i] = 0.1 + 0.7 * x + 0.2 * data.z(i, 0) + 0.4 * rng.normal();
        data.subset[i] = i < 9 ? 1 : 0;
        data.xstarstar[i] = data.subset[i] != 0 ? x + 0.35 * rng.normal()
                                                : std::numeric_limits<double>::quiet_NaN();
        data.y[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-(0.2 + 0.8 * x - 0.4 * data.z(i, 0)))) ? 1.0 : 0.0;
        data.unit_id.push_back(i);
    }
    data.y[0] = 1.0;
    data.y[1] = 0.0;
    return data;
}

bool criterion1() {
    const auto start = std::chrono::steady_clock::now();
    double worst_entry = 0.0, worst_norm = 0.0, worst_v = 0.0;
    for (std::uint64_t seed : {11ULL, 22ULL, 33ULL, 44ULL, 55ULL}) {
        Dataset data = oracle_toy(seed);
        SurveyDesign design = make_srs_design(20);
        TwoStageFit fit = fit_two_stage(data, design, ModelKind::binomial);
        StackedSystem sys = build_stacked_system(data, design, fit);

        Eigen::MatrixXd a_oracle = analytic_A_logistic(data, fit.stage1, fit.stage2);
        const double a_scale = a_oracle.cwiseAbs().maxCoeff();
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c) {
                const double want = a_oracle(r, c);
                const double got = sys.a(r, c);
                if (std::abs(want) > 1e-8 * a_scale)
                    worst_entry = std::max(worst_entry, std::abs(got - want) / std::abs(want));
                else if (std::abs(got) > 1e-8 * a_scale)
                    worst_entry = std::max(worst_entry, 1.0);
            }
        worst_norm = std::max(worst_norm, (sys.a - a_oracle).cwiseAbs().maxCoeff() / a_scale);

        Eigen::MatrixXd b_oracle = analytic_B_logistic(data, fit.stage1, fit.stage2);
        Eigen::MatrixXd ainv = a_oracle.inverse();
        Eigen::MatrixXd product = ainv * b_oracle * ainv.transpose() / 20.0;
        SandwichResult res = sandwich_variance(sys, design);
        Eigen::MatrixXd centered = res.v * (20.0 - 1.0) / 20.0;
        const double v_scale = product.cwiseAbs().maxCoeff();
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c)
                worst_v = std::max(worst_v, std::abs(centered(r, c) - product(r, c)) /
                                                std::max(std::abs(product(r, c)), 1e-6 * v_scale));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = worst_entry < 1e-5 && worst_norm < 1e-5 && worst_v < 1e-6 && secs < 1.0;
    return report(1, pass,
                  fmt("closed-form oracle equivalence: max A entry rel err %.2e (norm %.2e), sandwich-vs-product rel "
                      "err %.2e, %.2f s",
                      worst_entry, worst_norm, worst_v, secs));
}

bool criterion2() {
    ScenarioConfig cfg = load_scenario("srs_logistic_n1000_s025_low.ini");
    StudyReport rep = run_study(cfg, g_threads);
    const StudyRow& rc = row(rep, "rc_naive_se");
    const StudyRow& sand = row(rep, "rc_sandwich");
    const bool pass = std::abs(rc.pct_bias - (-3.76)) <= 2.0 && std::abs(sand.ase - 0.12) <= 0.01 &&
                      std::abs(sand.cp - 0.94) <= 0.02;
    return report(2, pass,
                  fmt("SRS logistic (N=1000, s2=0.25, low corr), %d reps: RC bias %.2f%% (want -3.76+-2.0), "
                      "sandwich ASE %.3f (want 0.12+-0.01), CP %.3f (want 0.94+-0.02)",
                      rep.reps, rc.pct_bias, sand.ase, sand.cp));
}

bool criterion3() {
    ScenarioConfig cfg = load_scenario("srs_logistic_n10000_s025_low.ini");
    StudyReport rep = run_study(cfg, g_threads);
    const StudyRow& rc = row(rep, "rc_naive_se");
    const StudyRow& sand = row(rep, "rc_sandwich");
    const bool pass = rc.cp <= 0.89 && sand.cp >= 0.92 && sand.cp <= 0.97;
    return report(3, pass,
                  fmt("SRS logistic (N=10000, s2=0.25, low corr), %d reps: naive-SE CP %.3f (want <= 0.89), "
                      "sandwich CP %.3f (want in [0.92, 0.97])",
                      rep.reps, rc.cp, sand.cp));
}

bool criterion4() {
    ScenarioConfig cfg = load_scenario("srs_logistic_n1000_s100_high_boot.ini");
    StudyReport rep = run_study(cfg, g_threads);
    const StudyRow& sand = row(rep, "rc_sandwich");
    const StudyRow& wald = row(rep, "rc_boot_wald");
    const StudyRow& perc = row(rep, "rc_boot_perc");
    const bool pass = wald.cp >= 0.965 && sand.cp >= 0.93 && sand.cp <= 0.97 && perc.cp <= wald.cp;
    return report(4, pass,
                  fmt("SRS logistic bootstrap (N=1000, s2=1.00, high corr), %d reps x B=%d: boot-Wald CP %.3f (want >= "
                      "0.965), sandwich CP %.3f (want in [0.93, 0.97]), percentile CP %.3f <= Wald",
                      rep.reps, cfg.boot_b, wald.cp, sand.cp, perc.cp));
}

bool criterion5() {
    ScenarioConfig cfg = load_scenario("srs_cox_n1000_s050_low.ini");
    StudyReport rep = run_study(cfg, g_threads);
    const StudyRow& rc = row(rep, "rc_naive_se");
    const StudyRow& sand = row(rep, "rc_sandwich");
    const bool pass = std::abs(rc.pct_bias - (-2.88)) <= 2.5 && std::abs(sand.cp - 0.95) <= 0.025;
    return report(5, pass,
                  fmt("SRS Cox (N=1000, s2=0.50, low corr), %d reps: RC bias %.2f%% (want -2.88+-2.5), "
                      "sandwich CP %.3f (want 0.95+-0.025)",
                      rep.reps, rc.pct_bias, sand.cp));
}

bool criterion6() {
    ScenarioConfig cfg = load_scenario("survey_logistic_n1000_s025_low.ini");
    StudyReport rep = run_study(cfg, g_threads);
    const StudyRow& sand = row(rep, "rc_sandwich");
    const StudyRow& mi = row(rep, "rc_mi");
    const bool pass = sand.cp >= 0.92 && sand.cp <= 0.98 && mi.ase >= sand.ase;
    return report(6, pass,
                  fmt("survey logistic (N~1000, s2=0.25, low corr), %d reps: sandwich CP %.3f (want in "
                      "[0.92, 0.98]), MI ASE %.3f >= sandwich ASE %.3f",
                      rep.reps, sand.cp, mi.ase, sand.ase));
}

bool criterion7() {
    bool pass = true;
    std::string fails;

    // score-zero across all three model families
    {
        ScenarioConfig cfg;
        cfg.n_target = 500;
        cfg.n_subset = 200;
        cfg.seed = 3;
        Dataset data = gen_srs_dataset(cfg, 0);
        SurveyDesign design = make_design(data);
        auto check_fit = [&](const ModelFit& fit) {
            const double bound = 1e-6 * fit.estfun.rows() * (1.0 + fit.coefficients.norm());
            if (fit.estfun.colwise().sum().cwiseAbs().maxCoeff() >= bound) {
                pass = false;
                fails += " score-zero";
            }
        };
        check_fit(fit_stage1(data, design));
        TwoStageFit rc = fit_two_stage(data, design, ModelKind::binomial);
        check_fit(rc.stage2);
        ScenarioConfig cox_cfg = cfg;
        cox_cfg.outcome = ModelKind::coxph;
        Dataset cox_data = gen_srs_dataset(cox_cfg, 0);
        check_fit(fit_outcome_model(cox_data, design, cox_data.x_true, ModelKind::coxph));

        // A upper-right block exactly zero; V symmetric PSD
        StackedSystem sys = build_stacked_system(data, design, rc);
        if (sys.a.topRightCorner(sys.j, sys.k).cwiseAbs().maxCoeff() != 0.0) {
            pass = false;
            fails += " A-block";
        }
        SandwichResult res = sandwich_variance(sys, design);
        if ((res.v - res.v.transpose()).cwiseAbs().maxCoeff() > 1e-10 * res.v.cwiseAbs().maxCoeff()) {
            pass = false;
            fails += " V-symmetry";
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigs(res.v);
        if (eigs.eigenvalues().minCoeff() < -1e-8 * res.v.trace()) {
            pass = false;
            fails += " V-psd";
        }

        // zero coupling: stage 2 on the true exposure equals the one-model sandwich
        ModelFit fixed = fit_outcome_model(data, design, data.x_true, ModelKind::binomial);
        StackedSystem fixed_sys = build_stacked_system(data, design, rc.stage1, fixed, false);
        SandwichResult fixed_res = sandwich_variance(fixed_sys, design);
        Eigen::MatrixXd one_model = one_model_variance(fixed, design);
        if ((fixed_res.stage2_block() - one_model).cwiseAbs().maxCoeff() >
            1e-10 * (1.0 + one_model.cwiseAbs().maxCoeff())) {
            pass = false;
            fails += " zero-coupling";
        }

        // stratified bootstrap preserves the subset composition
        for (int b = 0; b < 25; ++b) {
            const auto rows = bootstrap_replicate_rows(data, 99, b);
            int in_subset = 0;
            for (int r : rows) in_subset += data.subset[r];
            if (in_subset != cfg.n_subset || static_cast<int>(rows.size()) != cfg.n_target) {
                pass = false;
                fails += " boot-composition";
                break;
            }
        }

        // MI variance dominates its within component
        MIResult mi = mi_variance(data, design, ModelKind::binomial, 8, 17, g_threads);
        for (Eigen::Index c = 0; c < mi.v_star.size(); ++c)
            if (mi.v_star[c] < mi.within_vars.col(c).mean()) {
                pass = false;
                fails += " mi-vstar";
                break;
            }
    }

    // seed determinism across thread counts
    {
        ScenarioConfig cfg;
        cfg.reps = 4;
        cfg.n_target = 300;
        cfg.n_subset = 120;
        cfg.seed = 5;
        cfg.run_bootstrap = true;
        cfg.boot_b = 12;
        cfg.run_mi = true;
        cfg.mi_m = 4;
        StudyReport a = run_study(cfg, 1);
        StudyReport b = run_study(cfg, 2);
        for (std::size_t i = 0; i < a.rows.size(); ++i) {
            if (a.rows[i].pct_bias != b.rows[i].pct_bias || a.rows[i].ase != b.rows[i].ase ||
                a.rows[i].cp != b.rows[i].cp) {
                pass = false;
                fails += " determinism";
                break;
            }
        }
    }

    // BCa reduces to percentile at z0 = acceleration = 0
    {
        BootstrapDraws draws;
        draws.b = 2000;
        draws.estimates.resize(2000, 1);
        RngStream rng(23);
        for (int i = 0; i < 1000; ++i) {
            const double v = std::abs(rng.normal());
            draws.estimates(2 * i, 0) = 1.0 + v;
            draws.estimates(2 * i + 1, 0) = 1.0 - v;
        }
        Eigen::VectorXd point(1);
        point << 1.0;
        Eigen::MatrixXd jack(4, 1);
        jack << 0.9, 1.1, 0.8, 1.2;
        BootstrapIntervals ci = bootstrap_intervals(draws, point, 0.9, &jack);
        if (!ci.bca || std::abs(ci.bca->lower[0] - ci.percentile.lower[0]) > 1e-9 ||
            std::abs(ci.bca->upper[0] - ci.percentile.upper[0]) > 1e-9) {
            pass = false;
            fails += " bca-percentile";
        }
    }

    return report(7, pass,
                  pass ? "property suite: score-zero, A block, V symmetric PSD, zero coupling, bootstrap "
                         "composition, determinism, MI dominance, BCa reduction"
                       : "property suite failures:" + fails);
}

bool criterion8() {
    double lo = 1.0, hi = 0.0;
    for (double corr : {0.3, 0.7}) {
        for (ModelKind outcome : {ModelKind::binomial, ModelKind::coxph}) {
            ScenarioConfig cfg;
            cfg.correlation = corr;
            cfg.outcome = outcome;
            cfg.seed = 71;
            double sum = 0.0;
            for (int rep = 0; rep < 100; ++rep) {
                Dataset data = gen_srs_dataset(cfg, rep);
                double rate = 0.0;
                if (outcome == ModelKind::coxph) {
                    for (const auto& s : data.survival) rate += s.status;
                    rate /= static_cast<double>(data.survival.size());
                } else {
                    rate = data.y.mean();
                }
                sum += rate;
            }
            const double mean_rate = sum / 100.0;
            lo = std::min(lo, mean_rate);
            hi = std::max(hi, mean_rate);
        }
    }
    const bool pass = lo >= 0.35 && hi <= 0.41;
    return report(8, pass,
                  fmt("event rates (logistic + cox, low/high corr, 100 reps each): range [%.3f, %.3f], "
                      "want within [0.35, 0.41]",
                      lo, hi));
}

}  // namespace

int main(int argc, char** argv) {
    int criterion = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) criterion = std::atoi(argv[++i]);
        if (std::strcmp(argv[i], "--threads") == 0 && i + 1 < argc) g_threads = std::atoi(argv[++i]);
    }
    bool (*criteria[])() = {criterion1, criterion2, criterion3, criterion4,
                            criterion5, criterion6, criterion7, criterion8};
    bool all_pass = true;
    try {
        if (criterion >= 1 && criterion <= 8) {
            all_pass = criteria[criterion - 1]();
        } else {
            for (auto* c : criteria) all_pass = c() && all_pass;
        }
    } catch (const std::exception& e) {
        std::printf("FAIL: exception: %s\n", e.what());
        return 1;
    }
    return all_pass ? 0 : 1;
}
