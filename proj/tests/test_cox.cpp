#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "twostage/model_fit.hpp"
#include "twostage/rng.hpp"

using namespace twostage;

namespace {

// Hand-written Breslow partial log-likelihood with O(n^2) risk-set scans;
// the independent oracle for small datasets.
double brute_pll(const Eigen::MatrixXd& x, const std::vector<SurvivalOutcome>& out,
                 const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
    double ll = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i].status == 0) continue;
        double s0 = 0.0;
        for (std::size_t l = 0; l < out.size(); ++l) {
            if (out[l].strata_label != out[i].strata_label) continue;
            if (out[l].time >= out[i].time)
                s0 += w[static_cast<Eigen::Index>(l)] *
                      std::exp(x.row(static_cast<Eigen::Index>(l)).dot(beta));
        }
        ll += w[static_cast<Eigen::Index>(i)] * (x.row(static_cast<Eigen::Index>(i)).dot(beta) - std::log(s0));
    }
    return ll;
}

double golden_max_1d(const std::function<double(double)>& f, double lo, double hi) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = f(c), fd = f(d);
    for (int it = 0; it < 200 && b - a > 1e-11; ++it) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    return (a + b) / 2.0;
}

// Coordinate-wise golden-section ascent; the partial likelihood is concave.
Eigen::VectorXd brute_max(const Eigen::MatrixXd& x, const std::vector<SurvivalOutcome>& out,
                          const Eigen::VectorXd& w) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
    for (int round = 0; round < 100; ++round) {
        double moved = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            const double old = beta[c];
            beta[c] = golden_max_1d(
                [&](double v) {
                    Eigen::VectorXd b = beta;
                    b[c] = v;
                    return brute_pll(x, out, w, b);
                },
                -10.0, 10.0);
            moved = std::max(moved, std::abs(beta[c] - old));
        }
        if (moved < 1e-10) break;
    }
    return beta;
}

}  // namespace

TEST_CASE("cox: constant covariate gives zero coefficient and zero score") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(5, 1) * 2.5;
    std::vector<SurvivalOutcome> out{{1.0, 1, 0}, {2.0, 0, 0}, {3.0, 1, 0}, {4.0, 1, 0}, {5.0, 0, 0}};
    ModelFit fit = fit_coxph(x, out, Eigen::VectorXd::Ones(5));
    CHECK(fit.coefficients[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(fit.estfun.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cox: 6-subject fit matches the brute-force partial-likelihood maximizer") {
    Eigen::MatrixXd x(6, 1);
    x << 1, 0, 1, 0, 1, 0;
    std::vector<SurvivalOutcome> out{{0.7, 1, 0}, {1.1, 1, 0}, {1.6, 0, 0}, {2.3, 1, 0}, {2.9, 1, 0}, {3.4, 0, 0}};
    Eigen::VectorXd w = Eigen::VectorXd::Ones(6);
    ModelFit fit = fit_coxph(x, out, w);
    Eigen::VectorXd oracle = brute_max(x, out, w);
    CHECK(std::abs(fit.coefficients[0] - oracle[0]) < 1e-6);
    CHECK(fit.estfun.colwise().sum().cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("cox: brute-force agreement on small random datasets (<= 8 subjects, 2 covariates)") {
    for (int rep = 0; rep < 8; ++rep) {
        RngStream rng = RngStream::from_key(777, static_cast<std::uint64_t>(rep));
        const int n = 5 + static_cast<int>(rng.uniform_int(4));
        Eigen::MatrixXd x(n, 2);
        std::vector<SurvivalOutcome> out;
        Eigen::VectorXd w(n);
        int events = 0;
        for (int i = 0; i < n; ++i) {
            x(i, 0) = rng.normal() * 0.6;
            x(i, 1) = rng.uniform() < 0.5 ? 0.0 : 1.0;
            const int status = rng.uniform() < 0.75 ? 1 : 0;
            events += status;
            out.push_back({0.2 + rng.exponential(1.0), status, 0});
            w[i] = 0.5 + rng.uniform();
        }
        if (events < 4) continue;
        ModelFit fit;
        try {
            fit = fit_coxph(x, out, w);
        } catch (const Error&) {
            continue;  // tiny datasets can have monotone likelihoods
        }
        // near-degenerate maximizers sit outside the oracle's search box
        if (fit.coefficients.cwiseAbs().maxCoeff() > 5.0) continue;
        Eigen::VectorXd oracle = brute_max(x, out, w);
        CHECK(std::abs(fit.coefficients[0] - oracle[0]) < 1e-6);
        CHECK(std::abs(fit.coefficients[1] - oracle[1]) < 1e-6);
        CHECK(fit.estfun.colwise().sum().cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("cox: score residuals sum to zero with ties, strata and weights") {
    RngStream rng(2024);
    const int n = 120;
    Eigen::MatrixXd x(n, 2);
    std::vector<SurvivalOutcome> out;
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = rng.normal();
        x(i, 1) = rng.normal() * 0.5;
        // discretized times force ties under Breslow handling
        const double t = std::ceil(rng.exponential(0.8) * 4.0) / 4.0;
        out.push_back({t, rng.uniform() < 0.6 ? 1 : 0, i % 3});
        w[i] = 0.25 + 2.0 * rng.uniform();
    }
    out[4].status = 1;  // keep every stratum populated with events
    out[5].status = 1;
    ModelFit fit = fit_coxph(x, out, w);
    CHECK(fit.estfun.colwise().sum().cwiseAbs().maxCoeff() < 1e-8);
    // naive_cov inverts the observed information
    Eigen::MatrixXd prod = fit.naive_cov * fit.info;
    CHECK((prod - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("cox: integer weights replicate rows") {
    Eigen::MatrixXd x(5, 1);
    x << 0.3, -0.7, 1.2, 0.1, -0.2;
    std::vector<SurvivalOutcome> out{{1.0, 1, 0}, {2.0, 1, 0}, {2.5, 0, 0}, {3.0, 1, 0}, {4.0, 1, 0}};
    Eigen::VectorXd w(5);
    w << 2, 1, 1, 1, 1;
    ModelFit weighted = fit_coxph(x, out, w);

    Eigen::MatrixXd x2(6, 1);
    x2 << 0.3, 0.3, -0.7, 1.2, 0.1, -0.2;
    std::vector<SurvivalOutcome> out2{{1.0, 1, 0}, {1.0, 1, 0}, {2.0, 1, 0}, {2.5, 0, 0}, {3.0, 1, 0}, {4.0, 1, 0}};
    ModelFit duplicated = fit_coxph(x2, out2, Eigen::VectorXd::Ones(6));
    CHECK(std::abs(weighted.coefficients[0] - duplicated.coefficients[0]) < 1e-9);
}

TEST_CASE("cox: domain errors") {
    Eigen::MatrixXd x(3, 1);
    x << 1, 2, 3;
    std::vector<SurvivalOutcome> none{{1.0, 0, 0}, {2.0, 0, 0}, {3.0, 0, 0}};
    CHECK_THROWS_AS(fit_coxph(x, none, Eigen::VectorXd::Ones(3)), DomainError);
    std::vector<SurvivalOutcome> empty_stratum{{1.0, 1, 0}, {2.0, 0, 1}, {3.0, 0, 1}};
    CHECK_THROWS_AS(fit_coxph(x, empty_stratum, Eigen::VectorXd::Ones(3)), DomainError);
    std::vector<SurvivalOutcome> bad_time{{0.0, 1, 0}, {2.0, 1, 0}, {3.0, 0, 0}};
    CHECK_THROWS_AS(fit_coxph(x, bad_time, Eigen::VectorXd::Ones(3)), DomainError);
}

TEST_CASE("cox: monotone likelihood raises a divergence error") {
    // covariate perfectly ordered with event times: no finite maximizer.
    // Newton walks the coefficient out slowly, so give it enough iterations
    // to trip the divergence rule rather than the iteration cap.
    Eigen::MatrixXd x(4, 1);
    x << 4, 3, 2, 1;
    std::vector<SurvivalOutcome> out{{1.0, 1, 0}, {2.0, 1, 0}, {3.0, 1, 0}, {4.0, 1, 0}};
    FitOptions options;
    options.max_iterations = 100000;
    CHECK_THROWS_AS(fit_coxph(x, out, Eigen::VectorXd::Ones(4), options), DivergenceError);
}
