#pragma once

#include <Eigen/Core>

#include "twostage/dataset.hpp"
#include "twostage/model_fit.hpp"
#include "twostage/survey.hpp"

namespace twostage {

// Regression-calibration pipeline. Stage 1 regresses the biomarker on
// (1, xstar, Z) over the calibration subset; the fitted line predicts the
// calibrated exposure xhat for every row; stage 2 regresses the outcome on
// (1, xhat, Z) -- no intercept column for the Cox model.
struct TwoStageFit {
    ModelFit stage1;
    ModelFit stage2;
    Eigen::VectorXd xhat;
    int xhat_column_index = 1;  // 0 for coxph
};

// Stage-1 design rows [1, xstar, Z] for every row of the dataset.
Eigen::MatrixXd stage1_design_matrix(const Dataset& data);

// Stage-2 design rows given an exposure column.
Eigen::MatrixXd stage2_design_matrix(const Dataset& data, const Eigen::VectorXd& exposure, ModelKind kind);

int exposure_column_index(ModelKind stage2_kind);

ModelFit fit_stage1(const Dataset& data, const SurveyDesign& design);

Eigen::VectorXd calibrate(const ModelFit& stage1, const Dataset& data);

ModelFit fit_stage2(const Dataset& data, const SurveyDesign& design, const Eigen::VectorXd& xhat,
                    ModelKind kind);

TwoStageFit fit_two_stage(const Dataset& data, const SurveyDesign& design, ModelKind stage2_kind);

// Stage-2 fit on an externally supplied exposure (true X or xstar); used by
// the simulation's truth / naive comparators.
ModelFit fit_outcome_model(const Dataset& data, const SurveyDesign& design, const Eigen::VectorXd& exposure,
                           ModelKind kind);

}  // namespace twostage
