#include "twostage/resampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "twostage/parallel.hpp"
#include "twostage/rng.hpp"
#include "twostage/sandwich.hpp"
#include "twostage/stats.hpp"

namespace twostage {

namespace {

constexpr std::uint64_t kBootstrapTag = 0xb007;
constexpr std::uint64_t kImputationTag = 0x317a;

bool is_fit_failure(const Error& e) {
    return dynamic_cast<const ConvergenceError*>(&e) != nullptr ||
           dynamic_cast<const DivergenceError*>(&e) != nullptr ||
           dynamic_cast<const SingularSystemError*>(&e) != nullptr ||
           dynamic_cast<const NumericalError*>(&e) != nullptr;
}

Eigen::MatrixXd compact_rows(const std::vector<std::optional<Eigen::VectorXd>>& slots, Eigen::Index k) {
    Eigen::Index n_ok = 0;
    for (const auto& s : slots) n_ok += s.has_value();
    Eigen::MatrixXd out(n_ok, k);
    Eigen::Index r = 0;
    for (const auto& s : slots)
        if (s) out.row(r++) = s->transpose();
    return out;
}

}  // namespace

std::vector<int> bootstrap_replicate_rows(const Dataset& data, std::uint64_t seed, int replicate) {
    const auto subset = data.subset_rows();
    std::vector<int> complement;
    for (int i = 0; i < data.n_rows(); ++i)
        if (data.subset[i] == 0) complement.push_back(i);
    if (subset.empty() || complement.empty())
        throw DomainError("stratified_bootstrap: both subset strata must be nonempty");
    RngStream rng = RngStream::from_key(seed, kBootstrapTag, static_cast<std::uint64_t>(replicate));
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(data.n_rows()));
    for (std::size_t d = 0; d < subset.size(); ++d) rows.push_back(subset[rng.uniform_int(subset.size())]);
    for (std::size_t d = 0; d < complement.size(); ++d)
        rows.push_back(complement[rng.uniform_int(complement.size())]);
    return rows;
}

BootstrapDraws stratified_bootstrap(const Dataset& data, const SurveyDesign& design, ModelKind stage2_kind,
                                    int b, std::uint64_t seed, int threads) {
    data.validate();
    if (b < 2) throw DomainError("stratified_bootstrap: need B >= 2");

    const Eigen::Index k = stage2_design_matrix(data, data.xstar, stage2_kind).cols();
    std::vector<std::optional<Eigen::VectorXd>> slots(static_cast<std::size_t>(b));
    parallel_for(b, threads, [&](int rep) {
        const std::vector<int> rows = bootstrap_replicate_rows(data, seed, rep);
        Dataset rep_data = take_rows(data, rows);
        SurveyDesign rep_design = take_design_rows(design, rows);
        try {
            TwoStageFit fit = fit_two_stage(rep_data, rep_design, stage2_kind);
            if (fit.stage2.coefficients.allFinite())
                slots[static_cast<std::size_t>(rep)] = fit.stage2.coefficients;
        } catch (const Error& e) {
            if (!is_fit_failure(e)) throw;
        }
    });

    BootstrapDraws draws;
    draws.seed = seed;
    draws.b = b;
    draws.estimates = compact_rows(slots, k);
    draws.n_failed = b - static_cast<int>(draws.estimates.rows());
    if (draws.estimates.rows() == 0) throw NumericalError("stratified_bootstrap: all replicates failed");
    return draws;
}

Eigen::MatrixXd jackknife_two_stage(const Dataset& data, const SurveyDesign& design, ModelKind stage2_kind,
                                    int threads, int group_cap, int n_groups) {
    data.validate();
    const int n = data.n_rows();
    const int groups = n <= group_cap ? n : n_groups;
    const Eigen::Index k = stage2_design_matrix(data, data.xstar, stage2_kind).cols();
    std::vector<std::optional<Eigen::VectorXd>> slots(static_cast<std::size_t>(groups));
    parallel_for(groups, threads, [&](int g) {
        std::vector<int> rows;
        rows.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            if (i % groups != g) rows.push_back(i);
        Dataset del_data = take_rows(data, rows);
        SurveyDesign del_design = take_design_rows(design, rows);
        try {
            TwoStageFit fit = fit_two_stage(del_data, del_design, stage2_kind);
            slots[static_cast<std::size_t>(g)] = fit.stage2.coefficients;
        } catch (const Error& e) {
            if (!is_fit_failure(e)) throw;
        }
    });
    Eigen::MatrixXd est = compact_rows(slots, k);
    if (est.rows() < 3) throw NumericalError("jackknife_two_stage: too few successful leave-out fits");
    return est;
}

BootstrapIntervals bootstrap_intervals(const BootstrapDraws& draws, const Eigen::VectorXd& point,
                                       double level, const Eigen::MatrixXd* jackknife, bool want_wald) {
    if (!(level > 0.0 && level < 1.0)) throw DomainError("bootstrap_intervals: level must be in (0,1)");
    const Eigen::Index k = draws.estimates.cols();
    if (point.size() != k) throw DomainError("bootstrap_intervals: point estimate length mismatch");
    if (draws.estimates.rows() < 2) throw DomainError("bootstrap_intervals: need at least 2 draws");
    const double alpha = (1.0 - level) / 2.0;
    const double zq = normal_quantile(1.0 - alpha);
    const double blank = std::numeric_limits<double>::quiet_NaN();

    BootstrapIntervals out;
    out.wald.lower.setConstant(k, blank);
    out.wald.upper.setConstant(k, blank);
    out.percentile.lower.resize(k);
    out.percentile.upper.resize(k);
    if (jackknife) {
        out.bca = CoefficientIntervals{Eigen::VectorXd(k), Eigen::VectorXd(k)};
        if (jackknife->cols() != k) throw DomainError("bootstrap_intervals: jackknife column mismatch");
    }

    std::vector<double> col(static_cast<std::size_t>(draws.estimates.rows()));
    for (Eigen::Index c = 0; c < k; ++c) {
        for (Eigen::Index r = 0; r < draws.estimates.rows(); ++r)
            col[static_cast<std::size_t>(r)] = draws.estimates(r, c);
        if (want_wald) {
            const double sd = sample_sd(col);
            if (sd == 0.0)
                throw DomainError("bootstrap_intervals: degenerate draws (zero spread), Wald undefined");
            out.wald.lower[c] = point[c] - zq * sd;
            out.wald.upper[c] = point[c] + zq * sd;
        }

        std::sort(col.begin(), col.end());
        out.percentile.lower[c] = quantile_type7_sorted(col, alpha);
        out.percentile.upper[c] = quantile_type7_sorted(col, 1.0 - alpha);

        if (jackknife) {
            const auto n_draws = static_cast<double>(col.size());
            double n_below = 0.0;
            for (double v : col) n_below += v < point[c];
            if (n_below == 0.0 || n_below == n_draws)
                throw NumericalError("bootstrap_intervals: all draws on one side of the estimate, BCa undefined");
            const double z0 = normal_quantile(n_below / n_draws);

            double jmean = jackknife->col(c).mean();
            double s2 = 0.0, s3 = 0.0;
            for (Eigen::Index r = 0; r < jackknife->rows(); ++r) {
                const double d = jmean - (*jackknife)(r, c);
                s2 += d * d;
                s3 += d * d * d;
            }
            const double accel = s2 > 0.0 ? s3 / (6.0 * std::pow(s2, 1.5)) : 0.0;

            auto remap = [&](double z_alpha) {
                const double t = z0 + z_alpha;
                return normal_cdf(z0 + t / (1.0 - accel * t));
            };
            out.bca->lower[c] = quantile_type7_sorted(col, remap(normal_quantile(alpha)));
            out.bca->upper[c] = quantile_type7_sorted(col, remap(normal_quantile(1.0 - alpha)));
        }
    }
    return out;
}

MICombined mi_combine(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& within_vars,
                      bool rubin_inflation) {
    const Eigen::Index m = estimates.rows(), k = estimates.cols();
    if (m < 2) throw DomainError("mi_combine: need at least 2 imputations");
    if (within_vars.rows() != m || within_vars.cols() != k)
        throw DomainError("mi_combine: estimates/within_vars shape mismatch");
    const double inflate = rubin_inflation ? 1.0 + 1.0 / static_cast<double>(m) : 1.0;

    MICombined out;
    out.v_star.resize(k);
    out.robust_v_star.resize(k);
    std::vector<double> est_col(static_cast<std::size_t>(m)), var_col(static_cast<std::size_t>(m));
    for (Eigen::Index c = 0; c < k; ++c) {
        for (Eigen::Index r = 0; r < m; ++r) {
            est_col[static_cast<std::size_t>(r)] = estimates(r, c);
            var_col[static_cast<std::size_t>(r)] = within_vars(r, c);
        }
        const double mean_est = estimates.col(c).mean();
        double between = 0.0;
        for (Eigen::Index r = 0; r < m; ++r) {
            const double d = estimates(r, c) - mean_est;
            between += d * d;
        }
        between /= static_cast<double>(m) - 1.0;
        out.v_star[c] = within_vars.col(c).mean() + inflate * between;
        const double robust_between = mad(est_col);
        out.robust_v_star[c] = median(var_col) + inflate * robust_between * robust_between;
    }
    return out;
}

MIResult mi_variance(const Dataset& data, const SurveyDesign& design, ModelKind stage2_kind, int m,
                     std::uint64_t seed, int threads, bool rubin_inflation) {
    data.validate();
    if (m < 2) throw DomainError("mi_variance: need M >= 2");
    const auto subset = data.subset_rows();
    if (subset.empty()) throw DomainError("mi_variance: empty calibration subset");

    const Eigen::Index k = stage2_design_matrix(data, data.xstar, stage2_kind).cols();
    std::vector<std::optional<Eigen::VectorXd>> est_slots(static_cast<std::size_t>(m));
    std::vector<std::optional<Eigen::VectorXd>> var_slots(static_cast<std::size_t>(m));
    parallel_for(m, threads, [&](int imp) {
        RngStream rng = RngStream::from_key(seed, kImputationTag, static_cast<std::uint64_t>(imp));
        std::vector<int> rows;
        rows.reserve(subset.size());
        for (std::size_t d = 0; d < subset.size(); ++d)
            rows.push_back(subset[rng.uniform_int(subset.size())]);
        try {
            Dataset sub_data = take_rows(data, rows);
            SurveyDesign sub_design = take_design_rows(design, rows);
            ModelFit stage1 = fit_stage1(sub_data, sub_design);
            Eigen::VectorXd xhat = calibrate(stage1, data);
            ModelFit stage2 = fit_stage2(data, design, xhat, stage2_kind);
            est_slots[static_cast<std::size_t>(imp)] = stage2.coefficients;
            var_slots[static_cast<std::size_t>(imp)] = one_model_variance(stage2, design).diagonal();
        } catch (const Error& e) {
            if (!is_fit_failure(e)) throw;
        }
    });

    MIResult out;
    out.m = m;
    out.estimates = compact_rows(est_slots, k);
    out.within_vars = compact_rows(var_slots, k);
    out.n_failed = m - static_cast<int>(out.estimates.rows());
    if (out.n_failed > m / 10)
        throw NumericalError("mi_variance: more than 10% of imputations failed (" +
                             std::to_string(out.n_failed) + " of " + std::to_string(m) + ")");
    MICombined combined = mi_combine(out.estimates, out.within_vars, rubin_inflation);
    out.v_star = combined.v_star;
    out.robust_v_star = combined.robust_v_star;
    return out;
}

}  // namespace twostage
