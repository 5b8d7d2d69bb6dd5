#include <doctest.h>

#include <cmath>
#include <vector>

#include "twostage/rng.hpp"
#include "twostage/stats.hpp"

using namespace twostage;

TEST_CASE("normal quantile matches reference values") {
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
    CHECK(normal_quantile(0.025) == doctest::Approx(-1.959963984540054).epsilon(1e-12));
    CHECK(normal_quantile(0.841344746068543) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK_THROWS_AS(normal_quantile(0.0), DomainError);
    CHECK_THROWS_AS(normal_quantile(1.0), DomainError);
}

TEST_CASE("normal cdf and quantile are inverses") {
    for (double p : {1e-6, 0.01, 0.2, 0.5, 0.77, 0.99, 1.0 - 1e-6})
        CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
}

TEST_CASE("type-7 quantile interpolates order statistics") {
    std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    CHECK(quantile_type7(v, 0.25) == doctest::Approx(1.75));
    CHECK(quantile_type7(v, 0.5) == doctest::Approx(2.5));
    CHECK(quantile_type7(v, 0.0) == doctest::Approx(1.0));
    CHECK(quantile_type7(v, 1.0) == doctest::Approx(4.0));
    CHECK(median({3.0, 1.0, 2.0}) == doctest::Approx(2.0));
}

TEST_CASE("mad uses the 1.4826 consistency factor") {
    // |v - median| = {2, 1, 0, 1, 2}, median 1
    CHECK(mad({1.0, 2.0, 3.0, 4.0, 5.0}) == doctest::Approx(1.4826));
}

TEST_CASE("rng streams are deterministic and key-separated") {
    RngStream a = RngStream::from_key(42, 1, 2);
    RngStream b = RngStream::from_key(42, 1, 2);
    RngStream c = RngStream::from_key(42, 1, 3);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const double va = a.uniform();
        all_equal = all_equal && va == b.uniform();
        any_diff = any_diff || va != c.uniform();
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("uniform_int stays in range and covers it") {
    RngStream rng(7);
    std::vector<int> seen(5, 0);
    for (int i = 0; i < 1000; ++i) {
        const auto v = rng.uniform_int(5);
        REQUIRE(v < 5);
        ++seen[static_cast<std::size_t>(v)];
    }
    for (int count : seen) CHECK(count > 100);
}

TEST_CASE("normal sampler has the right first two moments") {
    RngStream rng(123);
    const int n = 1000000;
    double sum = 0.0, ss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        ss += v * v;
    }
    const double mean = sum / n;
    const double var = ss / n - mean * mean;
    CHECK(std::abs(mean) < 0.004);
    CHECK(var == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("exponential sampler has the right mean") {
    RngStream rng(5);
    const int n = 200000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += rng.exponential(2.0);
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
}
