#include "twostage/model_fit.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>

namespace twostage {

const char* model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::gaussian: return "gaussian";
        case ModelKind::binomial: return "binomial";
        case ModelKind::coxph: return "coxph";
    }
    return "?";
}

namespace {

void check_weights(const Eigen::VectorXd& w) {
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (!(w[i] >= 0.0)) throw DomainError("negative or non-finite weight at row " + std::to_string(i));
    }
}

void check_dimensions(const Eigen::MatrixXd& x, Eigen::Index n_response, const Eigen::VectorXd& w) {
    if (x.rows() != n_response || x.rows() != w.size())
        throw DomainError("design matrix, response and weights must have matching row counts");
    if (x.rows() < x.cols()) throw DomainError("need at least as many rows as coefficients");
}

void check_full_rank(const Eigen::MatrixXd& x, const Eigen::VectorXd& w, const char* what) {
    Eigen::MatrixXd xw = w.array().sqrt().matrix().asDiagonal() * x;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
    if (qr.rank() < x.cols())
        throw SingularSystemError(std::string(what) + ": design matrix is rank-deficient on rows with positive weight");
}

double expit(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

}  // namespace

ModelFit fit_glm_gaussian(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
    check_dimensions(x, y.size(), w);
    check_weights(w);
    check_full_rank(x, w, "fit_glm_gaussian");
    const Eigen::Index p = x.cols();

    Eigen::MatrixXd info = x.transpose() * w.asDiagonal() * x;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::VectorXd alpha = ldlt.solve(x.transpose() * (w.cwiseProduct(y)));

    ModelFit fit;
    fit.kind = ModelKind::gaussian;
    fit.coefficients = alpha;
    fit.weights = w;
    fit.linear_predictor = x * alpha;
    Eigen::VectorXd resid = y - fit.linear_predictor;
    const double wrss = (w.array() * resid.array().square()).sum();
    const double df = w.sum() - static_cast<double>(p);
    fit.dispersion = df > 0.0 ? std::max(0.0, wrss / df) : 0.0;
    fit.estfun = (w.cwiseProduct(resid)).asDiagonal() * x;
    fit.info = info;
    Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    fit.naive_cov = fit.dispersion * 0.5 * (inv + inv.transpose());
    fit.converged = true;
    fit.iterations = 1;
    return fit;
}

ModelFit fit_glm_binomial(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                          const FitOptions& options) {
    check_dimensions(x, y.size(), w);
    check_weights(w);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) throw DomainError("binomial response must be 0 or 1");
    }
    check_full_rank(x, w, "fit_glm_binomial");
    const Eigen::Index n = x.rows(), p = x.cols();

    auto loglik = [&](const Eigen::VectorXd& eta) {
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            // y*eta - log(1+exp(eta)), stable in both tails
            const double lse = eta[i] > 0.0 ? eta[i] + std::log1p(std::exp(-eta[i])) : std::log1p(std::exp(eta[i]));
            ll += w[i] * (y[i] * eta[i] - lse);
        }
        return ll;
    };

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
    double ll = loglik(eta);
    bool converged = false;
    int iter = 0;
    Eigen::MatrixXd info(p, p);
    for (; iter < options.max_iterations; ++iter) {
        Eigen::VectorXd prob(n), irls_w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            prob[i] = expit(eta[i]);
            irls_w[i] = w[i] * prob[i] * (1.0 - prob[i]);
        }
        info = x.transpose() * irls_w.asDiagonal() * x;
        Eigen::VectorXd grad = x.transpose() * (w.cwiseProduct(y - prob));
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success)
            throw SingularSystemError("fit_glm_binomial: information matrix not positive definite");
        Eigen::VectorXd step = ldlt.solve(grad);

        // step-halving if the likelihood degrades or blows up
        double scale = 1.0;
        Eigen::VectorXd beta_new, eta_new;
        double ll_new = 0.0;
        for (int half = 0; half < 6; ++half) {
            beta_new = beta + scale * step;
            eta_new = x * beta_new;
            ll_new = loglik(eta_new);
            if (std::isfinite(ll_new) && ll_new >= ll - 1e-12 * (1.0 + std::abs(ll))) break;
            scale *= 0.5;
        }
        const double change = (beta_new - beta).cwiseAbs().maxCoeff();
        beta = beta_new;
        eta = eta_new;
        ll = ll_new;
        if (beta.cwiseAbs().maxCoeff() > options.divergence_norm)
            throw DivergenceError("fit_glm_binomial: coefficients diverged (complete separation?)");
        // every fitted probability numerically 0 or 1: the likelihood is flat
        // to machine precision and no finite maximizer exists
        if (eta.cwiseAbs().minCoeff() > 30.0)
            throw DivergenceError("fit_glm_binomial: all fitted probabilities saturated (complete separation)");
        if (change < options.coef_tol * (1.0 + beta.cwiseAbs().maxCoeff())) {
            converged = true;
            ++iter;
            break;
        }
    }

    ModelFit fit;
    fit.kind = ModelKind::binomial;
    fit.coefficients = beta;
    fit.weights = w;
    fit.linear_predictor = eta;
    fit.dispersion = 1.0;
    fit.converged = converged;
    fit.iterations = iter;
    Eigen::VectorXd prob(n), irls_w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        prob[i] = expit(eta[i]);
        irls_w[i] = w[i] * prob[i] * (1.0 - prob[i]);
    }
    fit.estfun = (w.cwiseProduct(y - prob)).asDiagonal() * x;
    fit.info = x.transpose() * irls_w.asDiagonal() * x;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(fit.info);
    Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    fit.naive_cov = 0.5 * (inv + inv.transpose());
    if (!converged)
        throw ConvergenceError("fit_glm_binomial: no convergence after " +
                                   std::to_string(options.max_iterations) + " iterations",
                               beta);
    return fit;
}

Eigen::VectorXd predict_linear(const ModelFit& fit, const Eigen::MatrixXd& newdata) {
    if (fit.kind != ModelKind::gaussian) throw DomainError("predict_linear requires a gaussian fit");
    if (newdata.cols() != fit.coefficients.size())
        throw DomainError("predict_linear: newdata has " + std::to_string(newdata.cols()) +
                          " columns, fit has " + std::to_string(fit.coefficients.size()) + " coefficients");
    return newdata * fit.coefficients;
}

Eigen::VectorXd glm_total_score(ModelKind kind, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
    Eigen::VectorXd eta = x * beta;
    Eigen::VectorXd mu(eta.size());
    switch (kind) {
        case ModelKind::gaussian: mu = eta; break;
        case ModelKind::binomial:
            for (Eigen::Index i = 0; i < eta.size(); ++i) mu[i] = expit(eta[i]);
            break;
        case ModelKind::coxph: throw DomainError("glm_total_score: use cox_total_score for coxph");
    }
    return x.transpose() * (w.cwiseProduct(y - mu));
}

}  // namespace twostage
