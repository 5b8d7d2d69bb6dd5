#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>

#include "twostage/calibration.hpp"
#include "twostage/dataset.hpp"
#include "twostage/survey.hpp"

namespace twostage {

// Stage-2 coefficient replicates from the stratified bootstrap. Replicates
// that diverged or failed to converge are counted in n_failed and excluded
// from the estimates matrix.
struct BootstrapDraws {
    Eigen::MatrixXd estimates;  // successes x k, in replicate order
    int n_failed = 0;
    std::uint64_t seed = 0;
    int b = 0;
};

struct CoefficientIntervals {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

struct BootstrapIntervals {
    CoefficientIntervals wald;
    CoefficientIntervals percentile;
    std::optional<CoefficientIntervals> bca;  // present when jackknife estimates were supplied
};

// Combined multiple-imputation variance. v_star follows the resampling-MI
// combining rule W-bar + B (no (1+1/M) inflation unless requested);
// robust_v_star replaces the mean by the median and the between-imputation
// term by the squared (1.4826-scaled) MAD of the estimates.
struct MIResult {
    Eigen::MatrixXd estimates;    // M_success x k
    Eigen::MatrixXd within_vars;  // M_success x k
    Eigen::VectorXd v_star;
    Eigen::VectorXd robust_v_star;
    int m = 0;
    int n_failed = 0;
};

// Stratified bootstrap: each replicate draws n rows with replacement from
// the calibration subset and N-n from its complement, refits stage 1 on the
// replicate's subset rows, recalibrates, and refits stage 2.
BootstrapDraws stratified_bootstrap(const Dataset& data, const SurveyDesign& design, ModelKind stage2_kind,
                                    int b, std::uint64_t seed, int threads = 1);

// The row multiset a given bootstrap replicate resamples (subset draws
// first, then complement draws). stratified_bootstrap uses exactly this.
std::vector<int> bootstrap_replicate_rows(const Dataset& data, std::uint64_t seed, int replicate);

// Delete-one jackknife of the two-stage estimator (grouped delete-d with
// n_groups groups when N exceeds group_cap); rows keep their subset role.
Eigen::MatrixXd jackknife_two_stage(const Dataset& data, const SurveyDesign& design, ModelKind stage2_kind,
                                    int threads = 1, int group_cap = 2000, int n_groups = 200);

// Wald / percentile / BCa intervals from bootstrap draws. BCa needs the
// jackknife replicates of the estimator for the acceleration constant; pass
// them to enable it. Zero-spread draws make the Wald interval undefined
// (an error when it is requested); the percentile interval still collapses
// to the point, so callers that only need quantiles pass want_wald = false.
BootstrapIntervals bootstrap_intervals(const BootstrapDraws& draws, const Eigen::VectorXd& point,
                                       double level, const Eigen::MatrixXd* jackknife = nullptr,
                                       bool want_wald = true);

MIResult mi_variance(const Dataset& data, const SurveyDesign& design, ModelKind stage2_kind, int m,
                     std::uint64_t seed, int threads = 1, bool rubin_inflation = false);

// Combining rule alone (exposed for direct checks against hand evaluation).
struct MICombined {
    Eigen::VectorXd v_star;
    Eigen::VectorXd robust_v_star;
};
MICombined mi_combine(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& within_vars,
                      bool rubin_inflation = false);

}  // namespace twostage
