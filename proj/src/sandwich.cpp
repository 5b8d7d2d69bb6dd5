#include "twostage/sandwich.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <cmath>
#include <limits>

namespace twostage {

namespace {

Eigen::VectorXd stage2_total_score_at_alpha(const Dataset& data, const SurveyDesign& design,
                                            const Eigen::MatrixXd& stage1_rows, const Eigen::VectorXd& alpha,
                                            const ModelFit& stage2) {
    Eigen::VectorXd exposure = stage1_rows * alpha;
    Eigen::MatrixXd x2 = stage2_design_matrix(data, exposure, stage2.kind);
    Eigen::VectorXd score;
    if (stage2.kind == ModelKind::coxph)
        score = cox_total_score(x2, data.survival, design.weight, stage2.coefficients);
    else
        score = glm_total_score(stage2.kind, x2, data.y, design.weight, stage2.coefficients);
    if (!score.allFinite())
        throw NumericalError("stage2_cross_jacobian: non-finite stage-2 score at perturbed alpha");
    return score;
}

}  // namespace

Eigen::MatrixXd stage2_cross_jacobian(const Dataset& data, const SurveyDesign& design, const ModelFit& stage1,
                                      const ModelFit& stage2, double step_override) {
    if (design.n() != data.n_rows()) throw DomainError("stage2_cross_jacobian: design size mismatch");
    const Eigen::Index j = stage1.coefficients.size();
    const Eigen::Index k = stage2.coefficients.size();
    const double n = static_cast<double>(data.n_rows());
    const Eigen::MatrixXd stage1_rows = stage1_design_matrix(data);
    const double h0 = std::cbrt(std::numeric_limits<double>::epsilon());

    Eigen::MatrixXd cross(k, j);
    for (Eigen::Index m = 0; m < j; ++m) {
        const double h = step_override > 0.0
                             ? step_override
                             : h0 * std::max(1.0, std::abs(stage1.coefficients[m]));
        Eigen::VectorXd alpha_plus = stage1.coefficients;
        Eigen::VectorXd alpha_minus = stage1.coefficients;
        alpha_plus[m] += h;
        alpha_minus[m] -= h;
        Eigen::VectorXd s_plus = stage2_total_score_at_alpha(data, design, stage1_rows, alpha_plus, stage2);
        Eigen::VectorXd s_minus = stage2_total_score_at_alpha(data, design, stage1_rows, alpha_minus, stage2);
        cross.col(m) = (s_plus - s_minus) / (2.0 * h * n);
    }
    return cross;
}

StackedSystem build_stacked_system(const Dataset& data, const SurveyDesign& design, const ModelFit& stage1,
                                   const ModelFit& stage2, bool stage2_uses_calibrated_exposure) {
    data.validate();
    if (design.n() != data.n_rows()) throw DomainError("build_stacked_system: design size mismatch");
    const int n = data.n_rows();
    const int j = static_cast<int>(stage1.coefficients.size());
    const int k = static_cast<int>(stage2.coefficients.size());
    if (stage2.estfun.rows() != n) throw DomainError("build_stacked_system: stage-2 estfun must cover all rows");

    StackedSystem sys;
    sys.j = j;
    sys.k = k;
    sys.theta_hat.resize(j + k);
    sys.theta_hat.head(j) = stage1.coefficients;
    sys.theta_hat.tail(k) = stage2.coefficients;

    sys.a = Eigen::MatrixXd::Zero(j + k, j + k);
    sys.a.topLeftCorner(j, j) = -stage1.info / n;
    sys.a.bottomRightCorner(k, k) = -stage2.info / n;
    if (stage2_uses_calibrated_exposure)
        sys.a.bottomLeftCorner(k, j) = stage2_cross_jacobian(data, design, stage1, stage2);

    sys.u_tilde = Eigen::MatrixXd::Zero(n, j + k);
    const auto subset = data.subset_rows();
    if (stage1.estfun.rows() != static_cast<Eigen::Index>(subset.size()))
        throw DomainError("build_stacked_system: stage-1 estfun must cover the calibration subset");
    for (std::size_t s = 0; s < subset.size(); ++s) {
        const int i = subset[s];
        sys.u_tilde.row(i).head(j) = stage1.estfun.row(static_cast<Eigen::Index>(s)) / design.weight[i];
    }
    for (int i = 0; i < n; ++i) sys.u_tilde.row(i).tail(k) = stage2.estfun.row(i) / design.weight[i];
    return sys;
}

StackedSystem build_stacked_system(const Dataset& data, const SurveyDesign& design, const TwoStageFit& fit) {
    return build_stacked_system(data, design, fit.stage1, fit.stage2, true);
}

SandwichResult sandwich_variance(const StackedSystem& system, const SurveyDesign& design) {
    const int n = static_cast<int>(system.u_tilde.rows());
    if (design.n() != n) throw DomainError("sandwich_variance: design size mismatch");
    const int j = system.j, k = system.k;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(system.a);
    if (!lu.isInvertible()) {
        // name the offending block in the error
        auto singular = [](const Eigen::MatrixXd& block) {
            return Eigen::FullPivLU<Eigen::MatrixXd>(block).rank() < block.rows();
        };
        if (singular(system.a.topLeftCorner(j, j)))
            throw SingularSystemError("sandwich_variance: singular stage-1 block of A");
        if (singular(system.a.bottomRightCorner(k, k)))
            throw SingularSystemError("sandwich_variance: singular stage-2 block of A");
        throw SingularSystemError("sandwich_variance: singular A matrix");
    }
    // influence rows h_i = (A^{-1} u_i) / N
    Eigen::MatrixXd influence = lu.solve(system.u_tilde.transpose()).transpose() / static_cast<double>(n);

    SandwichResult out;
    out.j = j;
    out.k = k;
    Eigen::MatrixXd v = total_variance(design, influence);
    out.v = 0.5 * (v + v.transpose());
    out.se = out.v.diagonal().cwiseMax(0.0).cwiseSqrt();
    return out;
}

Eigen::MatrixXd one_model_variance(const ModelFit& fit, const SurveyDesign& design) {
    if (fit.estfun.rows() != design.n()) throw DomainError("one_model_variance: estfun/design size mismatch");
    Eigen::MatrixXd unweighted = fit.estfun;
    for (Eigen::Index i = 0; i < unweighted.rows(); ++i) unweighted.row(i) /= design.weight[i];
    Eigen::LDLT<Eigen::MatrixXd> ldlt(fit.info);
    Eigen::MatrixXd influence = ldlt.solve(unweighted.transpose()).transpose();
    Eigen::MatrixXd v = total_variance(design, influence);
    return 0.5 * (v + v.transpose());
}

Eigen::MatrixXd analytic_A_logistic(const Dataset& data, const ModelFit& stage1, const ModelFit& stage2) {
    data.validate();
    if (stage1.kind != ModelKind::gaussian || stage2.kind != ModelKind::binomial)
        throw DomainError("analytic_A_logistic: requires gaussian stage 1 and binomial stage 2");
    if (data.z.size() == 0 || data.z.cols() != 1)
        throw DomainError("analytic_A_logistic: requires exactly one error-free covariate");
    if (data.weight.size() > 0 && (data.weight.array() != 1.0).any())
        throw DomainError("analytic_A_logistic: closed form is for unit weights");
    const int n = data.n_rows();
    const double a0 = stage1.coefficients[0], ax = stage1.coefficients[1], az = stage1.coefficients[2];
    const double b0 = stage2.coefficients[0], bx = stage2.coefficients[1], bz = stage2.coefficients[2];

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(6, 6);
    for (int i = 0; i < n; ++i) {
        const double v = data.subset[i] != 0 ? 1.0 : 0.0;
        const double xs = data.xstar[i];
        const double z = data.z(i, 0);
        const double xhat = a0 + ax * xs + az * z;
        const double p = 1.0 / (1.0 + std::exp(-(b0 + bx * xhat + bz * z)));
        const double y = data.y[i];
        const double pq = p * (1.0 - p);

        a(0, 0) += -v;
        a(0, 1) += -xs * v;
        a(0, 2) += -z * v;
        a(1, 0) += -xs * v;
        a(1, 1) += -xs * xs * v;
        a(1, 2) += -xs * z * v;
        a(2, 0) += -z * v;
        a(2, 1) += -xs * z * v;
        a(2, 2) += -z * z * v;

        a(3, 0) += -bx * pq;
        a(3, 1) += -bx * xs * pq;
        a(3, 2) += -bx * z * pq;
        a(3, 3) += -pq;
        a(3, 4) += -xhat * pq;
        a(3, 5) += -z * pq;

        a(4, 0) += xhat * (bx * p * p - bx * p) + (y - p);
        a(4, 1) += xhat * (bx * xs * p * p - bx * xs * p) + xs * (y - p);
        a(4, 2) += xhat * (bx * z * p * p - bx * z * p) + z * (y - p);
        a(4, 3) += -xhat * pq;
        a(4, 4) += -xhat * xhat * pq;
        a(4, 5) += -xhat * z * pq;

        a(5, 0) += -bx * z * pq;
        a(5, 1) += -bx * z * xs * pq;
        a(5, 2) += -bx * z * z * pq;
        a(5, 3) += -z * pq;
        a(5, 4) += -z * xhat * pq;
        a(5, 5) += -z * z * pq;
    }
    return a / static_cast<double>(n);
}

Eigen::MatrixXd analytic_B_logistic(const Dataset& data, const ModelFit& stage1, const ModelFit& stage2) {
    data.validate();
    if (stage1.kind != ModelKind::gaussian || stage2.kind != ModelKind::binomial)
        throw DomainError("analytic_B_logistic: requires gaussian stage 1 and binomial stage 2");
    if (data.z.size() == 0 || data.z.cols() != 1)
        throw DomainError("analytic_B_logistic: requires exactly one error-free covariate");
    if (data.weight.size() > 0 && (data.weight.array() != 1.0).any())
        throw DomainError("analytic_B_logistic: closed form is for unit weights");
    const int n = data.n_rows();
    const double a0 = stage1.coefficients[0], ax = stage1.coefficients[1], az = stage1.coefficients[2];
    const double b0 = stage2.coefficients[0], bx = stage2.coefficients[1], bz = stage2.coefficients[2];

    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(6, 6);
    Eigen::VectorXd u(6);
    for (int i = 0; i < n; ++i) {
        const double v = data.subset[i] != 0 ? 1.0 : 0.0;
        const double xs = data.xstar[i];
        const double z = data.z(i, 0);
        const double resid = v != 0.0 ? (data.xstarstar[i] - a0 - ax * xs - az * z) : 0.0;
        const double xhat = a0 + ax * xs + az * z;
        const double p = 1.0 / (1.0 + std::exp(-(b0 + bx * xhat + bz * z)));
        const double y = data.y[i];
        u[0] = v * resid;
        u[1] = v * resid * xs;
        u[2] = v * resid * z;
        u[3] = y - p;
        u[4] = xhat * (y - p);
        u[5] = z * (y - p);
        b.selfadjointView<Eigen::Lower>().rankUpdate(u, 1.0);
    }
    Eigen::MatrixXd sym = b.selfadjointView<Eigen::Lower>();
    return sym / static_cast<double>(n);
}

}  // namespace twostage
