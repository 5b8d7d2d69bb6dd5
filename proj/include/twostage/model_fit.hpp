#pragma once

#include <Eigen/Core>
#include <vector>

#include "twostage/errors.hpp"

namespace twostage {

enum class ModelKind { gaussian, binomial, coxph };

const char* model_kind_name(ModelKind kind);

// Right-censored survival response. `strata_label` stratifies the baseline
// hazard of the outcome model; it is unrelated to design strata.
struct SurvivalOutcome {
    double time = 0.0;
    int status = 0;  // 1 = event, 0 = censored
    int strata_label = 0;
};

// A fitted regression model together with the pieces the stacked sandwich
// needs: per-observation estimating-function contributions (estfun, on the
// weighted scale w_i * u_i) and the negative Jacobian of the total
// estimating function with respect to the coefficients (info).
//
// Scale convention: estfun rows are w*(y - mu)*x for the GLMs (no dispersion
// division for the gaussian family) and weighted score residuals for the Cox
// model; `info` is consistent with that scale, so for the gaussian family
// info = X'WX and naive_cov = dispersion * info^{-1}.
struct ModelFit {
    ModelKind kind = ModelKind::gaussian;
    Eigen::VectorXd coefficients;
    Eigen::MatrixXd naive_cov;         // model-based covariance, weighted-likelihood scale
    Eigen::MatrixXd estfun;            // N x p, columns sum to ~0 at the fit
    Eigen::VectorXd weights;
    double dispersion = 1.0;           // gaussian residual variance; 1 otherwise
    Eigen::VectorXd linear_predictor;  // X * coefficients
    bool converged = true;
    int iterations = 0;
    Eigen::MatrixXd info;              // -d(total estfun)/d(coefficients)
};

struct FitOptions {
    double coef_tol = 1e-10;     // relative coefficient change
    int max_iterations = 50;
    double divergence_norm = 1e3;
};

ModelFit fit_glm_gaussian(const Eigen::MatrixXd& design_matrix, const Eigen::VectorXd& response,
                          const Eigen::VectorXd& weights);

ModelFit fit_glm_binomial(const Eigen::MatrixXd& design_matrix, const Eigen::VectorXd& response,
                          const Eigen::VectorXd& weights, const FitOptions& options = {});

ModelFit fit_coxph(const Eigen::MatrixXd& design_matrix, const std::vector<SurvivalOutcome>& outcome,
                   const Eigen::VectorXd& weights, const FitOptions& options = {});

Eigen::VectorXd predict_linear(const ModelFit& fit, const Eigen::MatrixXd& newdata);

// Total weighted estimating function evaluated at arbitrary coefficients;
// used for the numerical cross-derivative in the stacked sandwich.
Eigen::VectorXd glm_total_score(ModelKind kind, const Eigen::MatrixXd& design_matrix,
                                const Eigen::VectorXd& response, const Eigen::VectorXd& weights,
                                const Eigen::VectorXd& coefficients);

Eigen::VectorXd cox_total_score(const Eigen::MatrixXd& design_matrix,
                                const std::vector<SurvivalOutcome>& outcome,
                                const Eigen::VectorXd& weights, const Eigen::VectorXd& coefficients);

}  // namespace twostage
