#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include "twostage/model_fit.hpp"

// Weighted Cox proportional hazards with Breslow tie handling. The risk-set
// sums are accumulated by processing each stratum in decreasing time order;
// score residuals (per-subject estimating-function contributions whose
// columns sum to the total score) come from a second, increasing-time pass.

namespace twostage {

namespace {

struct StratumIndex {
    std::vector<int> rows;  // sorted by (time asc, row asc)
    int n_events = 0;
};

std::vector<StratumIndex> index_strata(const std::vector<SurvivalOutcome>& outcome) {
    std::map<int, StratumIndex> by_label;
    for (int i = 0; i < static_cast<int>(outcome.size()); ++i) {
        if (!(outcome[static_cast<std::size_t>(i)].time > 0.0))
            throw DomainError("fit_coxph: survival time must be positive (row " + std::to_string(i) + ")");
        auto& s = by_label[outcome[static_cast<std::size_t>(i)].strata_label];
        s.rows.push_back(i);
        s.n_events += outcome[static_cast<std::size_t>(i)].status != 0;
    }
    std::vector<StratumIndex> strata;
    strata.reserve(by_label.size());
    for (auto& [label, s] : by_label) {
        if (s.n_events == 0)
            throw DomainError("fit_coxph: outcome stratum " + std::to_string(label) + " has no events");
        std::sort(s.rows.begin(), s.rows.end(), [&](int a, int b) {
            const double ta = outcome[static_cast<std::size_t>(a)].time;
            const double tb = outcome[static_cast<std::size_t>(b)].time;
            return ta != tb ? ta < tb : a < b;
        });
        strata.push_back(std::move(s));
    }
    return strata;
}

struct PartialLikelihood {
    double loglik = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd info;
};

// One pass over all strata in decreasing time order. `want_info` controls
// whether the p x p risk-set sums are accumulated.
PartialLikelihood evaluate(const Eigen::MatrixXd& x, const std::vector<SurvivalOutcome>& outcome,
                           const Eigen::VectorXd& w, const Eigen::VectorXd& beta,
                           const std::vector<StratumIndex>& strata, bool want_info) {
    const Eigen::Index p = x.cols();
    Eigen::VectorXd eta = x * beta;
    PartialLikelihood out;
    out.gradient = Eigen::VectorXd::Zero(p);
    out.info = Eigen::MatrixXd::Zero(p, p);
    for (const auto& s : strata) {
        const auto& rows = s.rows;
        // shift eta by the stratum maximum so the risk sums cannot overflow
        double shift = -std::numeric_limits<double>::infinity();
        for (int i : rows) shift = std::max(shift, eta[i]);
        double cs0 = 0.0;
        Eigen::VectorXd cs1 = Eigen::VectorXd::Zero(p);
        Eigen::MatrixXd cs2 = Eigen::MatrixXd::Zero(p, p);
        std::size_t g_end = rows.size();
        while (g_end > 0) {
            // tie group [g_begin, g_end) shares one event time
            std::size_t g_begin = g_end;
            const double t = outcome[static_cast<std::size_t>(rows[g_end - 1])].time;
            while (g_begin > 0 && outcome[static_cast<std::size_t>(rows[g_begin - 1])].time == t) --g_begin;
            for (std::size_t q = g_begin; q < g_end; ++q) {
                const int i = rows[q];
                const double wr = w[i] * std::exp(eta[i] - shift);
                cs0 += wr;
                cs1 += wr * x.row(i).transpose();
                if (want_info) cs2.selfadjointView<Eigen::Lower>().rankUpdate(x.row(i).transpose(), wr);
            }
            for (std::size_t q = g_begin; q < g_end; ++q) {
                const int i = rows[q];
                if (outcome[static_cast<std::size_t>(i)].status == 0) continue;
                out.loglik += w[i] * (eta[i] - shift - std::log(cs0));
                Eigen::VectorXd xbar = cs1 / cs0;
                out.gradient += w[i] * (x.row(i).transpose() - xbar);
                if (want_info) {
                    Eigen::MatrixXd s2 = cs2.selfadjointView<Eigen::Lower>();
                    out.info += w[i] * (s2 / cs0 - xbar * xbar.transpose());
                }
            }
            g_end = g_begin;
        }
    }
    return out;
}

// Score residuals U_i = d_i (x_i - xbar(t_i)) - exp(eta_i) (G0(t_i) x_i - G1(t_i)),
// where G0/G1 are prefix sums of w_e/S0(t_e) and w_e xbar(t_e)/S0(t_e) over
// event times t_e <= t_i within the subject's stratum.
Eigen::MatrixXd score_residuals(const Eigen::MatrixXd& x, const std::vector<SurvivalOutcome>& outcome,
                                const Eigen::VectorXd& w, const Eigen::VectorXd& eta,
                                const std::vector<StratumIndex>& strata) {
    const Eigen::Index p = x.cols();
    Eigen::MatrixXd resid = Eigen::MatrixXd::Zero(x.rows(), p);
    for (const auto& s : strata) {
        const auto& rows = s.rows;
        double shift = -std::numeric_limits<double>::infinity();
        for (int i : rows) shift = std::max(shift, eta[i]);
        // decreasing-time pass: record S0 and xbar at each event subject's time
        std::vector<double> own_s0(rows.size(), 0.0);
        std::vector<Eigen::VectorXd> own_xbar(rows.size());
        {
            double cs0 = 0.0;
            Eigen::VectorXd cs1 = Eigen::VectorXd::Zero(p);
            std::size_t g_end = rows.size();
            while (g_end > 0) {
                std::size_t g_begin = g_end;
                const double t = outcome[static_cast<std::size_t>(rows[g_end - 1])].time;
                while (g_begin > 0 && outcome[static_cast<std::size_t>(rows[g_begin - 1])].time == t) --g_begin;
                for (std::size_t q = g_begin; q < g_end; ++q) {
                    const int i = rows[q];
                    const double wr = w[i] * std::exp(eta[i] - shift);
                    cs0 += wr;
                    cs1 += wr * x.row(i).transpose();
                }
                Eigen::VectorXd xbar = cs1 / cs0;
                for (std::size_t q = g_begin; q < g_end; ++q) {
                    if (outcome[static_cast<std::size_t>(rows[q])].status == 0) continue;
                    own_s0[q] = cs0;
                    own_xbar[q] = xbar;
                }
                g_end = g_begin;
            }
        }
        // event list in increasing time order, aligned with its weights
        std::vector<double> ev_time, ev_w, ev_s0;
        std::vector<const Eigen::VectorXd*> ev_xbar;
        for (std::size_t q = 0; q < rows.size(); ++q) {
            const int i = rows[q];
            if (outcome[static_cast<std::size_t>(i)].status == 0) continue;
            ev_time.push_back(outcome[static_cast<std::size_t>(i)].time);
            ev_w.push_back(w[i]);
            ev_s0.push_back(own_s0[q]);
            ev_xbar.push_back(&own_xbar[q]);
        }
        // increasing-time pass accumulating the cumulative-hazard terms
        double g0 = 0.0;
        Eigen::VectorXd g1 = Eigen::VectorXd::Zero(p);
        std::size_t e = 0;
        for (std::size_t q = 0; q < rows.size(); ++q) {
            const int i = rows[q];
            const double ti = outcome[static_cast<std::size_t>(i)].time;
            while (e < ev_time.size() && ev_time[e] <= ti) {
                g0 += ev_w[e] / ev_s0[e];
                g1 += (ev_w[e] / ev_s0[e]) * (*ev_xbar[e]);
                ++e;
            }
            // own_s0 carries the stratum shift, so the hazard term uses the
            // shifted relative risk as well
            Eigen::VectorXd u = -std::exp(eta[i] - shift) * (g0 * x.row(i).transpose() - g1);
            if (outcome[static_cast<std::size_t>(i)].status != 0)
                u += x.row(i).transpose() - own_xbar[q];
            resid.row(i) = w[i] * u.transpose();
        }
    }
    return resid;
}

}  // namespace

ModelFit fit_coxph(const Eigen::MatrixXd& x, const std::vector<SurvivalOutcome>& outcome,
                   const Eigen::VectorXd& w, const FitOptions& options) {
    if (x.rows() != static_cast<Eigen::Index>(outcome.size()) || x.rows() != w.size())
        throw DomainError("fit_coxph: design matrix, outcome and weights must have matching row counts");
    for (Eigen::Index i = 0; i < w.size(); ++i)
        if (!(w[i] >= 0.0)) throw DomainError("negative or non-finite weight at row " + std::to_string(i));
    const Eigen::Index p = x.cols();
    auto strata = index_strata(outcome);

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    PartialLikelihood cur = evaluate(x, outcome, w, beta, strata, true);
    bool converged = false;
    int iter = 0;
    const double grad_scale = 1.0 + w.sum();
    for (; iter < options.max_iterations; ++iter) {
        if (beta.cwiseAbs().maxCoeff() > options.divergence_norm)
            throw DivergenceError("fit_coxph: coefficients diverged (monotone likelihood, no finite maximizer)");
        // a within-stratum linear-predictor spread this large makes every
        // risk set numerically degenerate: the likelihood is flat and the
        // gradient underflows without a finite maximizer
        Eigen::VectorXd eta = x * beta;
        for (const auto& s : strata) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (int i : s.rows) {
                lo = std::min(lo, eta[i]);
                hi = std::max(hi, eta[i]);
            }
            if (hi - lo > 60.0)
                throw DivergenceError("fit_coxph: relative risks saturated (monotone likelihood)");
        }
        if (cur.gradient.cwiseAbs().maxCoeff() < 1e-13 * grad_scale) {
            converged = true;
            break;
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.info);
        Eigen::VectorXd step = ldlt.solve(cur.gradient);
        if (!step.allFinite())
            throw SingularSystemError("fit_coxph: singular partial-likelihood information");
        double scale = 1.0;
        Eigen::VectorXd beta_new;
        PartialLikelihood next;
        for (int half = 0; half < 10; ++half) {
            beta_new = beta + scale * step;
            next = evaluate(x, outcome, w, beta_new, strata, true);
            if (std::isfinite(next.loglik) && next.loglik >= cur.loglik - 1e-12 * (1.0 + std::abs(cur.loglik)))
                break;
            scale *= 0.5;
        }
        if (!std::isfinite(next.loglik))
            throw DivergenceError("fit_coxph: partial likelihood not representable (monotone likelihood?)");
        const double change = (beta_new - beta).cwiseAbs().maxCoeff();
        beta = beta_new;
        cur = next;
        if (change < options.coef_tol * (1.0 + beta.cwiseAbs().maxCoeff())) {
            converged = true;
            ++iter;
            break;
        }
    }
    if (!converged)
        throw ConvergenceError(
            "fit_coxph: no convergence after " + std::to_string(options.max_iterations) + " iterations", beta);

    ModelFit fit;
    fit.kind = ModelKind::coxph;
    fit.coefficients = beta;
    fit.weights = w;
    fit.linear_predictor = x * beta;
    fit.dispersion = 1.0;
    fit.converged = converged;
    fit.iterations = iter;
    fit.info = 0.5 * (cur.info + cur.info.transpose());
    fit.naive_cov = fit.info.completeOrthogonalDecomposition().pseudoInverse();
    fit.naive_cov = 0.5 * (fit.naive_cov + fit.naive_cov.transpose()).eval();
    fit.estfun = score_residuals(x, outcome, w, fit.linear_predictor, strata);
    return fit;
}

Eigen::VectorXd cox_total_score(const Eigen::MatrixXd& x, const std::vector<SurvivalOutcome>& outcome,
                                const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
    auto strata = index_strata(outcome);
    return evaluate(x, outcome, w, beta, strata, false).gradient;
}

}  // namespace twostage
