#include "twostage/calibration.hpp"

#include <cmath>

namespace twostage {

Eigen::MatrixXd stage1_design_matrix(const Dataset& data) {
    const int n = data.n_rows();
    const Eigen::Index q = data.z.size() > 0 ? data.z.cols() : 0;
    Eigen::MatrixXd x(n, 2 + q);
    x.col(0).setOnes();
    x.col(1) = data.xstar;
    if (q > 0) x.rightCols(q) = data.z;
    return x;
}

Eigen::MatrixXd stage2_design_matrix(const Dataset& data, const Eigen::VectorXd& exposure, ModelKind kind) {
    const int n = data.n_rows();
    if (exposure.size() != n) throw DomainError("stage2_design_matrix: exposure length mismatch");
    const Eigen::Index q = data.z.size() > 0 ? data.z.cols() : 0;
    const bool intercept = kind != ModelKind::coxph;
    Eigen::MatrixXd x(n, (intercept ? 2 : 1) + q);
    Eigen::Index c = 0;
    if (intercept) x.col(c++).setOnes();
    x.col(c++) = exposure;
    if (q > 0) x.rightCols(q) = data.z;
    return x;
}

int exposure_column_index(ModelKind stage2_kind) { return stage2_kind == ModelKind::coxph ? 0 : 1; }

ModelFit fit_stage1(const Dataset& data, const SurveyDesign& design) {
    data.validate();
    if (design.n() != data.n_rows()) throw DomainError("fit_stage1: design size mismatch");
    const auto rows = data.subset_rows();
    if (rows.empty()) throw DomainError("fit_stage1: empty calibration subset");
    const Eigen::Index p = 2 + (data.z.size() > 0 ? data.z.cols() : 0);
    if (static_cast<Eigen::Index>(rows.size()) < p + 2)
        throw DomainError("fit_stage1: calibration subset must have at least " + std::to_string(p + 2) +
                          " rows for " + std::to_string(p) + " stage-1 parameters");
    Eigen::MatrixXd x_all = stage1_design_matrix(data);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), p);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    Eigen::VectorXd w(static_cast<Eigen::Index>(rows.size()));
    Eigen::Index k = 0;
    for (int i : rows) {
        x.row(k) = x_all.row(i);
        y[k] = data.xstarstar[i];
        w[k] = design.weight[i];
        ++k;
    }
    return fit_glm_gaussian(x, y, w);
}

Eigen::VectorXd calibrate(const ModelFit& stage1, const Dataset& data) {
    for (Eigen::Index i = 0; i < data.xstar.size(); ++i)
        if (std::isnan(data.xstar[i])) throw DomainError("calibrate: xstar missing at row " + std::to_string(i));
    return predict_linear(stage1, stage1_design_matrix(data));
}

ModelFit fit_outcome_model(const Dataset& data, const SurveyDesign& design, const Eigen::VectorXd& exposure,
                           ModelKind kind) {
    if (design.n() != data.n_rows()) throw DomainError("fit_outcome_model: design size mismatch");
    Eigen::MatrixXd x = stage2_design_matrix(data, exposure, kind);
    switch (kind) {
        case ModelKind::gaussian: return fit_glm_gaussian(x, data.y, design.weight);
        case ModelKind::binomial: return fit_glm_binomial(x, data.y, design.weight);
        case ModelKind::coxph: return fit_coxph(x, data.survival, design.weight);
    }
    throw DomainError("fit_outcome_model: unknown model kind");
}

ModelFit fit_stage2(const Dataset& data, const SurveyDesign& design, const Eigen::VectorXd& xhat,
                    ModelKind kind) {
    return fit_outcome_model(data, design, xhat, kind);
}

TwoStageFit fit_two_stage(const Dataset& data, const SurveyDesign& design, ModelKind stage2_kind) {
    TwoStageFit fit;
    fit.stage1 = fit_stage1(data, design);
    fit.xhat = calibrate(fit.stage1, data);
    fit.stage2 = fit_stage2(data, design, fit.xhat, stage2_kind);
    fit.xhat_column_index = exposure_column_index(stage2_kind);
    return fit;
}

}  // namespace twostage
