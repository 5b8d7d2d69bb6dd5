#pragma once

#include <Eigen/Core>

#include "twostage/calibration.hpp"
#include "twostage/dataset.hpp"
#include "twostage/model_fit.hpp"
#include "twostage/survey.hpp"

namespace twostage {

// Stacked estimating-equation system for theta = (alpha, beta).
//
// A is the averaged score Jacobian (1/N) sum_i d(w_i U_i)/d(theta); its
// upper-right j x k block is exactly zero because the stage-1 equations do
// not involve beta. u_tilde holds the unweighted per-observation scores
// (weighted estfun divided by the weights), with the first j columns zeroed
// for rows outside the calibration subset.
struct StackedSystem {
    Eigen::MatrixXd a;        // (j+k) x (j+k)
    Eigen::MatrixXd u_tilde;  // N x (j+k)
    int j = 0;
    int k = 0;
    Eigen::VectorXd theta_hat;
};

struct SandwichResult {
    Eigen::MatrixXd v;   // (j+k) x (j+k), symmetric PSD
    Eigen::VectorXd se;  // sqrt(diag(v))
    int j = 0;
    int k = 0;
    Eigen::MatrixXd stage2_block() const { return v.bottomRightCorner(k, k); }
};

// (1/N) d/d(alpha) of the total weighted stage-2 score, by central finite
// differences: the calibrated exposure is recomputed at alpha_m +/- h with
// beta fixed at its estimate. Step h = cbrt(eps) * max(1, |alpha_m|) unless
// overridden (tests use larger steps for order-of-accuracy checks).
Eigen::MatrixXd stage2_cross_jacobian(const Dataset& data, const SurveyDesign& design,
                                      const ModelFit& stage1, const ModelFit& stage2,
                                      double step_override = 0.0);

// Assembles A and u_tilde. When `stage2_uses_calibrated_exposure` is false
// (stage 2 was fit on an exposure that does not depend on alpha) the cross
// block is identically zero.
StackedSystem build_stacked_system(const Dataset& data, const SurveyDesign& design, const ModelFit& stage1,
                                   const ModelFit& stage2, bool stage2_uses_calibrated_exposure = true);

StackedSystem build_stacked_system(const Dataset& data, const SurveyDesign& design, const TwoStageFit& fit);

// V(theta) via the influence route: rows h_i = (A^{-1} u_i) / N are passed
// to total_variance, which applies the design weights. For an SRS this
// equals A^{-1} B A^{-T} / N up to the N/(N-1) centering factor.
SandwichResult sandwich_variance(const StackedSystem& system, const SurveyDesign& design);

// Design-based variance of a single fitted model (stage-2 alone, treating
// its design matrix as fixed). This is the "naive" SE in reports: it ignores
// the stage-1 uncertainty but respects strata/clusters/weights.
Eigen::MatrixXd one_model_variance(const ModelFit& fit, const SurveyDesign& design);

// Closed-form A and B for a linear stage-1 + logistic stage-2 pipeline with
// a single error-free covariate; test oracles, evaluated directly from the
// data and coefficients (independent of estfun/info/finite differences).
Eigen::MatrixXd analytic_A_logistic(const Dataset& data, const ModelFit& stage1, const ModelFit& stage2);
Eigen::MatrixXd analytic_B_logistic(const Dataset& data, const ModelFit& stage1, const ModelFit& stage2);

}  // namespace twostage
