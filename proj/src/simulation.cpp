#include "twostage/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>

#include "twostage/calibration.hpp"
#include "twostage/parallel.hpp"
#include "twostage/resampling.hpp"
#include "twostage/rng.hpp"
#include "twostage/sandwich.hpp"
#include "twostage/stats.hpp"

namespace twostage {

namespace {

constexpr std::uint64_t kDataTag = 0xda7a;
constexpr std::uint64_t kBootSeedTag = 0x5eedb007;
constexpr std::uint64_t kMiSeedTag = 0x5eed317a;

double expit(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

// Downstream variables shared by the SRS and survey generators: error-prone
// exposure, calibration subset with biomarker, and the outcome. Draw order
// is fixed so that (config, rep) pins the dataset exactly.
void fill_downstream(const ScenarioConfig& cfg, RngStream& rng, Dataset& data) {
    const int n = static_cast<int>(data.x_true.size());
    data.xstar.resize(n);
    for (int i = 0; i < n; ++i)
        data.xstar[i] = cfg.delta0 + cfg.delta1 * data.x_true[i] + cfg.delta2 * data.z(i, 0) +
                        std::sqrt(cfg.sigma2) * rng.normal();

    if (n < cfg.n_subset) throw SimulationError("generated sample smaller than the calibration subset");
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < cfg.n_subset; ++i) {
        const auto pick = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - i))) + i;
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick)]);
    }
    data.subset = Eigen::VectorXi::Zero(n);
    for (int i = 0; i < cfg.n_subset; ++i) data.subset[order[static_cast<std::size_t>(i)]] = 1;

    data.xstarstar.setConstant(n, std::numeric_limits<double>::quiet_NaN());
    const double bio_sd = std::sqrt(cfg.biomarker_var);
    for (int i = 0; i < n; ++i)
        if (data.subset[i] != 0) data.xstarstar[i] = data.x_true[i] + bio_sd * rng.normal();

    data.outcome_kind = cfg.outcome;
    if (cfg.outcome == ModelKind::coxph) {
        data.survival.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const double rate = cfg.cox_lambda0 * std::exp(cfg.beta_x * data.x_true[i] + cfg.beta_z * data.z(i, 0));
            const double t = rng.exponential(rate);
            auto& s = data.survival[static_cast<std::size_t>(i)];
            s.time = std::min(t, cfg.cox_censor_time);
            s.status = t <= cfg.cox_censor_time ? 1 : 0;
            s.strata_label = 0;
        }
    } else {
        data.y.resize(n);
        for (int i = 0; i < n; ++i) {
            const double p = expit(cfg.beta0 + cfg.beta_x * data.x_true[i] + cfg.beta_z * data.z(i, 0));
            data.y[i] = rng.uniform() < p ? 1.0 : 0.0;
        }
    }
}

}  // namespace

void ScenarioConfig::validate() const {
    if (reps < 1) throw ConfigError("scenario: reps must be >= 1");
    if (n_target < 4) throw ConfigError("scenario: n must be >= 4");
    if (n_subset < 4 || n_subset > n_target) throw ConfigError("scenario: n_subset must be in [4, n]");
    if (!(correlation > -1.0 && correlation < 1.0)) throw ConfigError("scenario: correlation must be in (-1,1)");
    if (sigma2 < 0.0) throw ConfigError("scenario: sigma2 must be >= 0");
    if (biomarker_var < 0.0) throw ConfigError("scenario: biomarker_var must be >= 0");
    if (cox_lambda0 <= 0.0 || cox_censor_time <= 0.0)
        throw ConfigError("scenario: cox_lambda0 and cox_censor_time must be positive");
    if (run_bootstrap && boot_b < 2) throw ConfigError("scenario: bootstrap B must be >= 2");
    if (run_mi && mi_m < 2) throw ConfigError("scenario: MI M must be >= 2");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("scenario: level must be in (0,1)");
    if (outcome == ModelKind::gaussian) throw ConfigError("scenario: outcome must be logistic or cox");
}

Dataset gen_srs_dataset(const ScenarioConfig& cfg, int rep_index) {
    cfg.validate();
    if (cfg.sampling != Sampling::srs) throw DomainError("gen_srs_dataset: scenario is not an SRS scenario");
    RngStream rng = RngStream::from_key(cfg.seed, kDataTag, static_cast<std::uint64_t>(rep_index));
    const int n = cfg.n_target;

    Dataset data;
    data.x_true.resize(n);
    data.z.resize(n, 1);
    const double cr = std::sqrt(1.0 - cfg.correlation * cfg.correlation);
    for (int i = 0; i < n; ++i) {
        const double n1 = rng.normal();
        const double n2 = rng.normal();
        data.x_true[i] = n1;
        data.z(i, 0) = cfg.correlation * n1 + cr * n2;
    }
    fill_downstream(cfg, rng, data);
    data.unit_id.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) data.unit_id[static_cast<std::size_t>(i)] = i;
    return data;
}

// Stand-in stratified multi-stage design (the reference pipeline's exact
// cluster counts and selection probabilities are not published):
//   - 4 strata, 20 block groups each, block-group size ~ U{40..60} scaled
//     with n_target/1000;
//   - stratum covariate laws MVN(mu_s + omega_gs, Sigma_s with off-diagonal
//     r_s + rho_gs), mu_s = (+-0.15, +-0.30), Sigma_s = (1 +- 0.15/0.30) * Sigma,
//     omega_gs ~ U(+-{0.015,0.0225,0.03,0.045}), rho_gs ~ U(+-0.15 r_s);
//   - stage 1 samples 10 of 20 block groups per stratum, stage 2 samples a
//     stratum-specific fraction {0.30,0.45,0.60,0.75} of units within each
//     sampled block group; weights are the inverse inclusion probabilities.
std::pair<Dataset, SurveyDesign> gen_survey_sample(const ScenarioConfig& cfg, int rep_index) {
    cfg.validate();
    if (cfg.sampling != Sampling::survey) throw DomainError("gen_survey_sample: scenario is not a survey scenario");
    RngStream rng = RngStream::from_key(cfg.seed, kDataTag, static_cast<std::uint64_t>(rep_index));

    constexpr int kStrata = 4;
    constexpr int kBlockGroups = 20;
    constexpr int kSampledGroups = 10;
    constexpr double kMuDefault[kStrata] = {0.15, -0.15, 0.30, -0.30};
    constexpr double kSigmaShiftDefault[kStrata] = {0.15, -0.15, 0.30, -0.30};
    constexpr double kOmegaRangeDefault[kStrata] = {0.015, 0.0225, 0.03, 0.045};
    constexpr double kUnitFractionDefault[kStrata] = {0.30, 0.45, 0.60, 0.75};
    constexpr double kFlatUnitFraction = 0.525;  // keeps E[N] at the default design's level
    double mu[kStrata], sigma_shift[kStrata], omega_range[kStrata], unit_fraction[kStrata];
    for (int s = 0; s < kStrata; ++s) {
        mu[s] = cfg.survey_flat ? 0.0 : kMuDefault[s];
        sigma_shift[s] = cfg.survey_flat ? 0.0 : kSigmaShiftDefault[s];
        omega_range[s] = cfg.survey_flat ? 0.0 : kOmegaRangeDefault[s];
        unit_fraction[s] = cfg.survey_flat ? kFlatUnitFraction : kUnitFractionDefault[s];
    }
    const double size_scale = static_cast<double>(cfg.n_target) / 1000.0;

    // block-group parameters, fixed draw order
    int sizes[kStrata][kBlockGroups];
    double omega[kStrata][kBlockGroups];
    double rho[kStrata][kBlockGroups];
    for (int s = 0; s < kStrata; ++s) {
        const double r_s = cfg.correlation * (1.0 + sigma_shift[s]);
        for (int g = 0; g < kBlockGroups; ++g) {
            const auto lo = static_cast<int>(std::lround(40.0 * size_scale));
            const auto hi = static_cast<int>(std::lround(60.0 * size_scale));
            sizes[s][g] = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
            omega[s][g] = (2.0 * rng.uniform() - 1.0) * omega_range[s];
            rho[s][g] = cfg.survey_flat ? 0.0 : (2.0 * rng.uniform() - 1.0) * 0.15 * r_s;
        }
    }

    // stage 1: block groups within strata
    bool selected[kStrata][kBlockGroups] = {};
    for (int s = 0; s < kStrata; ++s) {
        int pool[kBlockGroups];
        for (int g = 0; g < kBlockGroups; ++g) pool[g] = g;
        for (int d = 0; d < kSampledGroups; ++d) {
            const auto pick = d + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(kBlockGroups - d)));
            std::swap(pool[d], pool[pick]);
            selected[s][pool[d]] = true;
        }
    }

    Dataset data;
    std::vector<double> xs, zs, weights;
    for (int s = 0; s < kStrata; ++s) {
        const double var_s = 1.0 + sigma_shift[s];
        const double sd_s = std::sqrt(var_s);
        const double r_s = cfg.correlation * var_s;
        int psu_count = 0;
        for (int g = 0; g < kBlockGroups; ++g) {
            if (!selected[s][g]) continue;
            ++psu_count;
            const int m = std::max(1, static_cast<int>(std::lround(unit_fraction[s] * sizes[s][g])));
            const double corr_gs = (r_s + rho[s][g]) / var_s;
            const double cc = std::sqrt(std::max(0.0, 1.0 - corr_gs * corr_gs));
            const double mean_gs = mu[s] + omega[s][g];
            const double weight = 1.0 / ((static_cast<double>(kSampledGroups) / kBlockGroups) * unit_fraction[s]);
            for (int u = 0; u < m; ++u) {
                const double n1 = rng.normal();
                const double n2 = rng.normal();
                xs.push_back(mean_gs + sd_s * n1);
                zs.push_back(mean_gs + sd_s * (corr_gs * n1 + cc * n2));
                data.stratum_label.push_back(std::to_string(s));
                data.cluster_label.push_back(std::to_string(s * kBlockGroups + g));
                weights.push_back(weight);
            }
        }
        if (psu_count < 2) throw SimulationError("gen_survey_sample: a stratum has fewer than 2 sampled PSUs");
    }

    const int n = static_cast<int>(xs.size());
    data.x_true = Eigen::Map<Eigen::VectorXd>(xs.data(), n);
    data.z.resize(n, 1);
    data.z.col(0) = Eigen::Map<Eigen::VectorXd>(zs.data(), n);
    data.weight = Eigen::Map<Eigen::VectorXd>(weights.data(), n);
    fill_downstream(cfg, rng, data);
    data.unit_id.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) data.unit_id[static_cast<std::size_t>(i)] = i;

    SurveyDesign coded = make_design(data);
    return {std::move(data), std::move(coded)};
}

namespace {

struct RepResult {
    bool ok = false;
    std::string error;
    double event_rate = 0.0;
    double est_truth = 0.0, se_truth = 0.0;
    double est_naive = 0.0, se_naive = 0.0;
    double est_rc = 0.0, se_rc_naive = 0.0, se_rc_sandwich = 0.0;
    double boot_se = 0.0;
    double boot_wald_lo = 0.0, boot_wald_hi = 0.0;
    double boot_perc_lo = 0.0, boot_perc_hi = 0.0;
    double boot_bca_lo = 0.0, boot_bca_hi = 0.0;
    double mi_se = 0.0;
};

struct MethodSummary {
    std::vector<double> estimates;
    std::vector<double> ses;
    int covered = 0;
};

}  // namespace

StudyReport run_study(const ScenarioConfig& cfg, int threads) {
    cfg.validate();
    const int e_col = exposure_column_index(cfg.outcome);
    const double zq = normal_quantile(1.0 - (1.0 - cfg.level) / 2.0);

    std::vector<RepResult> results(static_cast<std::size_t>(cfg.reps));
    parallel_for(cfg.reps, threads, [&](int rep) {
        RepResult& out = results[static_cast<std::size_t>(rep)];
        try {
            Dataset data;
            SurveyDesign design;
            if (cfg.sampling == Sampling::srs) {
                data = gen_srs_dataset(cfg, rep);
                design = make_design(data);
            } else {
                std::tie(data, design) = gen_survey_sample(cfg, rep);
            }
            out.event_rate = cfg.outcome == ModelKind::coxph
                                 ? [&] {
                                       double s = 0.0;
                                       for (const auto& o : data.survival) s += o.status;
                                       return s / static_cast<double>(data.survival.size());
                                   }()
                                 : data.y.mean();

            ModelFit truth = fit_outcome_model(data, design, data.x_true, cfg.outcome);
            out.est_truth = truth.coefficients[e_col];
            out.se_truth = std::sqrt(one_model_variance(truth, design)(e_col, e_col));

            ModelFit naive = fit_outcome_model(data, design, data.xstar, cfg.outcome);
            out.est_naive = naive.coefficients[e_col];
            out.se_naive = std::sqrt(one_model_variance(naive, design)(e_col, e_col));

            TwoStageFit rc = fit_two_stage(data, design, cfg.outcome);
            out.est_rc = rc.stage2.coefficients[e_col];
            out.se_rc_naive = std::sqrt(one_model_variance(rc.stage2, design)(e_col, e_col));

            StackedSystem system = build_stacked_system(data, design, rc);
            const SurveyDesign variance_design =
                cfg.sampling == Sampling::survey ? augment_strata(design, data.subset) : design;
            SandwichResult sandwich = sandwich_variance(system, variance_design);
            out.se_rc_sandwich = sandwich.se[system.j + e_col];

            if (cfg.run_bootstrap) {
                const std::uint64_t bseed = mix_seed(cfg.seed, kBootSeedTag, static_cast<std::uint64_t>(rep));
                BootstrapDraws draws = stratified_bootstrap(data, design, cfg.outcome, cfg.boot_b, bseed);
                std::optional<Eigen::MatrixXd> jack;
                if (cfg.run_bca) jack = jackknife_two_stage(data, design, cfg.outcome);
                BootstrapIntervals ci = bootstrap_intervals(draws, rc.stage2.coefficients, cfg.level,
                                                            jack ? &*jack : nullptr);
                std::vector<double> col(static_cast<std::size_t>(draws.estimates.rows()));
                for (Eigen::Index r = 0; r < draws.estimates.rows(); ++r)
                    col[static_cast<std::size_t>(r)] = draws.estimates(r, e_col);
                out.boot_se = sample_sd(col);
                out.boot_wald_lo = ci.wald.lower[e_col];
                out.boot_wald_hi = ci.wald.upper[e_col];
                out.boot_perc_lo = ci.percentile.lower[e_col];
                out.boot_perc_hi = ci.percentile.upper[e_col];
                if (ci.bca) {
                    out.boot_bca_lo = ci.bca->lower[e_col];
                    out.boot_bca_hi = ci.bca->upper[e_col];
                }
            }
            if (cfg.run_mi) {
                const std::uint64_t mseed = mix_seed(cfg.seed, kMiSeedTag, static_cast<std::uint64_t>(rep));
                MIResult mi = mi_variance(data, design, cfg.outcome, cfg.mi_m, mseed, 1, cfg.mi_rubin_inflation);
                out.mi_se = std::sqrt(mi.v_star[e_col]);
            }
            out.ok = true;
        } catch (const Error& e) {
            out.error = e.what();
        }
    });

    int n_failed = 0;
    std::string first_error;
    double rate_sum = 0.0;
    int n_ok = 0;
    for (const auto& r : results) {
        if (!r.ok) {
            ++n_failed;
            if (first_error.empty()) first_error = r.error;
        } else {
            rate_sum += r.event_rate;
            ++n_ok;
        }
    }
    if (n_failed * 20 > cfg.reps)
        throw SimulationError("run_study: " + std::to_string(n_failed) + " of " + std::to_string(cfg.reps) +
                              " replicates failed (> 5%); first failure: " + first_error);

    auto summarize = [&](auto take_est, auto take_lo, auto take_hi, auto take_se) {
        MethodSummary s;
        for (const auto& r : results) {
            if (!r.ok) continue;
            const double est = take_est(r);
            s.estimates.push_back(est);
            s.ses.push_back(take_se(r));
            if (take_lo(r) <= cfg.beta_x && cfg.beta_x <= take_hi(r)) ++s.covered;
        }
        return s;
    };
    auto wald_method = [&](auto est, auto se) {
        return summarize(est, [&](const RepResult& r) { return est(r) - zq * se(r); },
                         [&](const RepResult& r) { return est(r) + zq * se(r); }, se);
    };

    StudyReport report;
    report.scenario = cfg.name;
    report.reps = cfg.reps;
    report.n_failed = n_failed;
    report.event_rate = n_ok > 0 ? rate_sum / n_ok : 0.0;

    struct Entry {
        std::string name;
        MethodSummary summary;
    };
    std::vector<Entry> entries;
    entries.push_back({"truth", wald_method([](const RepResult& r) { return r.est_truth; },
                                            [](const RepResult& r) { return r.se_truth; })});
    entries.push_back({"naive", wald_method([](const RepResult& r) { return r.est_naive; },
                                            [](const RepResult& r) { return r.se_naive; })});
    entries.push_back({"rc_naive_se", wald_method([](const RepResult& r) { return r.est_rc; },
                                                  [](const RepResult& r) { return r.se_rc_naive; })});
    entries.push_back({"rc_sandwich", wald_method([](const RepResult& r) { return r.est_rc; },
                                                  [](const RepResult& r) { return r.se_rc_sandwich; })});
    if (cfg.run_bootstrap) {
        auto est = [](const RepResult& r) { return r.est_rc; };
        auto bse = [](const RepResult& r) { return r.boot_se; };
        entries.push_back({"rc_boot_wald",
                           summarize(est, [](const RepResult& r) { return r.boot_wald_lo; },
                                     [](const RepResult& r) { return r.boot_wald_hi; }, bse)});
        entries.push_back({"rc_boot_perc",
                           summarize(est, [](const RepResult& r) { return r.boot_perc_lo; },
                                     [](const RepResult& r) { return r.boot_perc_hi; }, bse)});
        if (cfg.run_bca)
            entries.push_back({"rc_boot_bca",
                               summarize(est, [](const RepResult& r) { return r.boot_bca_lo; },
                                         [](const RepResult& r) { return r.boot_bca_hi; }, bse)});
    }
    if (cfg.run_mi)
        entries.push_back({"rc_mi", wald_method([](const RepResult& r) { return r.est_rc; },
                                                [](const RepResult& r) { return r.mi_se; })});

    for (auto& [name, s] : entries) {
        StudyRow row;
        row.method = name;
        std::vector<double> bias(s.estimates.size());
        for (std::size_t i = 0; i < s.estimates.size(); ++i)
            bias[i] = 100.0 * (s.estimates[i] - cfg.beta_x) / cfg.beta_x;
        row.estimate = median(s.estimates);
        row.pct_bias = median(bias);
        row.mad = mad(s.estimates);
        row.ase = median(s.ses);
        row.cp = s.estimates.empty() ? 0.0 : static_cast<double>(s.covered) / static_cast<double>(s.estimates.size());
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string format_report_table(const StudyReport& report) {
    std::ostringstream os;
    os << "scenario: " << report.scenario << "  (reps = " << report.reps << ", failed = " << report.n_failed
       << ", event rate = ";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", report.event_rate);
    os << buf << ")\n";
    std::snprintf(buf, sizeof buf, "%-14s %9s %7s %7s %6s\n", "method", "pct_bias", "mad", "ase", "cp");
    os << buf;
    for (const auto& row : report.rows) {
        std::snprintf(buf, sizeof buf, "%-14s %9.2f %7.3f %7.3f %6.3f\n", row.method.c_str(), row.pct_bias,
                      row.mad, row.ase, row.cp);
        os << buf;
    }
    return os.str();
}

}  // namespace twostage
