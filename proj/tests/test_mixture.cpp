#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include "armr/error.hpp"
#include "armr/likelihood.hpp"
#include "armr/mixture.hpp"
#include "armr/model.hpp"

using namespace armr;

namespace {

std::vector<int> decode(long code, int m, int n) {
    std::vector<int> path(static_cast<std::size_t>(n));
    for (int k = n - 1; k >= 0; --k) {
        path[static_cast<std::size_t>(k)] = static_cast<int>(code % m);
        code /= m;
    }
    return path;
}

long power(int m, int n) {
    long p = 1;
    for (int k = 0; k < n; ++k) p *= m;
    return p;
}

// Two-state KT mixture by direct Beta(1/2, 1/2) integration of each transition row.
double kt_by_integration(const std::vector<int>& path) {
    int c[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t k = 0; k + 1 < path.size(); ++k) ++c[path[k]][path[k + 1]];
    boost::math::quadrature::tanh_sinh<double> rule;
    double value = 0.5;  // uniform initial state
    for (int i = 0; i < 2; ++i) {
        const int a = c[i][0];
        const int b = c[i][1];
        // p = sin^2(u) removes the endpoint singularities of the Beta(1/2, 1/2) density
        const double row = rule.integrate(
            [&](double u) {
                return 2.0 * std::pow(std::sin(u), 2 * a) * std::pow(std::cos(u), 2 * b) / std::numbers::pi;
            },
            0.0, std::numbers::pi / 2.0);
        value *= row;
    }
    return std::log(value);
}

// Closed form rebuilt from explicit n_i x n_i matrices.
double conditional_by_matrices(const Trajectory& t, const std::vector<int>& path, int m, double tau2) {
    const SegmentStats stats = segment_stats(t, path, m);
    const ProjectionSet proj = projection_set(stats, tau2);
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        const auto& s = stats.states[static_cast<std::size_t>(i)];
        if (s.count() == 0) continue;
        const double ni = s.count();
        const double q = s.response.dot(proj.states[static_cast<std::size_t>(i)].ridge_residual * s.response);
        total += 0.5 * std::log(proj.states[static_cast<std::size_t>(i)].ridge_inverse.determinant()) -
                 ni / 2.0 * std::log(2.0 * std::numbers::pi) - std::log(tau2) - ni / 2.0 * std::log(q) +
                 ni / 2.0 * std::log(2.0) + std::lgamma(ni / 2.0);
    }
    return total;
}

OracleOptions wide_range() {
    OracleOptions o;
    o.sigma2_min = 1e-12;
    o.sigma2_max = 1e12;
    return o;
}

}  // namespace

TEST(KtMixture, Examples) {
    EXPECT_EQ(kt_path_mixture_log(std::vector<int>{0, 0, 0, 0}, 1), 0.0);
    EXPECT_NEAR(kt_path_mixture_log(std::vector<int>{0, 0}, 2), -2.0 * std::log(2.0), 1e-14);
    EXPECT_NEAR(kt_by_integration({0, 0}), -2.0 * std::log(2.0), 1e-12);
}

TEST(KtMixture, MatchesDirichletIntegration) {
    for (int n = 1; n <= 8; ++n) {
        for (long code = 0; code < power(2, n); ++code) {
            const auto path = decode(code, 2, n);
            EXPECT_NEAR(kt_path_mixture_log(path, 2), kt_by_integration(path), 1e-10);
        }
    }
}

TEST(KtMixture, Normalizes) {
    for (int m = 2; m <= 3; ++m) {
        for (int n = 1; n <= (m == 2 ? 8 : 6); ++n) {
            double total = 0.0;
            for (long code = 0; code < power(m, n); ++code) total += std::exp(kt_path_mixture_log(decode(code, m, n), m));
            EXPECT_NEAR(total, 1.0, 1e-12) << "m=" << m << " n=" << n;
        }
    }
}

TEST(Projection, OrderingIdempotenceSymmetry) {
    Rng rng(21);
    std::normal_distribution<double> z;
    int cases = 0;
    for (double tau2 : {0.1, 1.0, 10.0}) {
        for (int trial = 0; trial < 170; ++trial, ++cases) {
            const int n = 3 + trial % 8;
            Trajectory t{z(rng), {}, std::vector<int>(static_cast<std::size_t>(n), 0)};
            for (int k = 0; k < n; ++k) t.y.push_back(z(rng) * 2.0 + 0.5);
            const SegmentStats stats = segment_stats(t, 1);
            const ProjectionSet proj = projection_set(stats, tau2);
            const auto& p = proj.states[0];
            ASSERT_TRUE(p.ols_residual.has_value());
            const Eigen::MatrixXd& b = *p.ols_residual;
            EXPECT_LT((b * b - b).cwiseAbs().maxCoeff(), 1e-9);
            EXPECT_LT((b - b.transpose()).cwiseAbs().maxCoeff(), 1e-12);
            EXPECT_LT((p.ridge_residual - p.ridge_residual.transpose()).cwiseAbs().maxCoeff(), 1e-12);
            EXPECT_LT((p.ridge_inverse - p.ridge_inverse.transpose()).cwiseAbs().maxCoeff(), 1e-14);
            EXPECT_GT(p.ridge_inverse.determinant(), 0.0);
            const Eigen::VectorXd& y = stats.states[0].response;
            const double yby = y.dot(b * y);
            const double ypy = y.dot(p.ridge_residual * y);
            EXPECT_GE(yby, -1e-12);
            EXPECT_LE(yby, ypy + 1e-12);
        }
    }
    EXPECT_GE(cases, 500);
}

TEST(ConditionalMixture, MatchesQuadratureOracle) {
    const Trajectory t{1.0, {0.5, -0.3}, std::vector<int>{0, 0}};
    PriorConfig prior;
    prior.u0 = 1e-8;
    prior.v0 = 1e-8;
    const OracleResult oracle = mixture_numeric_oracle(t, *t.path, 1, prior, wide_range());
    EXPECT_NEAR(conditional_mixture_log(t, *t.path, 1, PriorConfig{}), oracle.log_value, 1e-6);
    EXPECT_LT(oracle.relative_error, 1e-6);
}

TEST(ConditionalMixture, OracleAgreementShrinksAsPriorFlattens) {
    Rng rng(4);
    for (int trial = 0; trial < 6; ++trial) {
        const ModelSpec spec = random_model(2, rng);
        const Trajectory t = simulate(spec, 4 + trial % 3, 0.0, rng());
        const double closed = conditional_mixture_log(t, *t.path, 2, PriorConfig{});
        double previous = std::numeric_limits<double>::infinity();
        for (double eps : {1e-4, 1e-6, 1e-8}) {
            PriorConfig prior;
            prior.u0 = eps;
            prior.v0 = eps;
            const double gap = std::abs(mixture_numeric_oracle(t, *t.path, 2, prior, wide_range()).log_value - closed);
            EXPECT_LT(gap, previous);
            previous = gap;
        }
        EXPECT_LT(previous, 1e-4);
    }
}

TEST(ConditionalMixture, AgreesWithMatrixRecomputation) {
    Rng rng(8);
    std::uniform_int_distribution<int> pick(0, 2);
    for (int trial = 0; trial < 100; ++trial) {
        const ModelSpec spec = random_model(3, rng);
        const Trajectory t = simulate(spec, 12, 0.3, rng());
        std::vector<int> path(12);
        for (auto& x : path) x = pick(rng);
        for (double tau2 : {0.5, 2.0}) {
            PriorConfig prior;
            prior.tau2 = tau2;
            const double v = conditional_mixture_log(t, path, 3, prior);
            EXPECT_NEAR(v, conditional_by_matrices(t, path, 3, tau2), 1e-9 * std::max(1.0, std::abs(v)));
        }
        Trajectory doubled = t;
        doubled.y0 *= 2.0;
        for (auto& y : doubled.y) y *= 2.0;
        EXPECT_NEAR(conditional_mixture_log(doubled, path, 3, PriorConfig{}), conditional_by_matrices(doubled, path, 3, 1.0),
                    1e-9 * std::max(1.0, std::abs(conditional_by_matrices(doubled, path, 3, 1.0))));
    }
}

TEST(ConditionalMixture, DecreasingInQuadraticForm) {
    // single observation per state: M depends only on y0, response scales Q
    double previous = std::numeric_limits<double>::infinity();
    for (double y : {0.5, 1.0, 2.0, 4.0}) {
        const Trajectory t{0.0, {y}, std::vector<int>{0}};
        const double v = conditional_mixture_log(t, *t.path, 1, PriorConfig{});
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_LT(v, previous);
        previous = v;
    }
}

TEST(ConditionalMixture, DegenerateQuadraticThrows) {
    const Trajectory t{0.0, {0.0, 0.0}, std::vector<int>{0, 0}};
    try {
        (void)conditional_mixture_log(t, *t.path, 1, PriorConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
    }
}

TEST(Oracle, Guard) {
    const ModelSpec spec({{0.0, 0.5, 1.0}}, Eigen::MatrixXd::Ones(1, 1));
    const Trajectory t = simulate(spec, 7, 0.0, 1);
    try {
        (void)mixture_numeric_oracle(t, *t.path, 1, PriorConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SizeGuard);
    }
}

TEST(BruteForceMixture, SingleStateAndFiniteness) {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        const int m = 1 + trial % 2;
        const ModelSpec spec = random_model(m, rng);
        const Trajectory t = simulate(spec, 4 + trial % 5, 0.0, rng());
        const double q = mixture_bruteforce_log(t, m, PriorConfig{});
        EXPECT_TRUE(std::isfinite(q));
        if (m == 1) EXPECT_NEAR(q, conditional_mixture_log(t, std::vector<int>(static_cast<std::size_t>(t.n()), 0), 1, {}), 1e-12);
    }
}

TEST(BoundTerms, Examples) {
    const std::vector<double> ls1{1.0};
    for (int n : {4, 10, 100, 10000}) EXPECT_EQ(bound_terms(n, 1, {}, ls1, 1.0).c_m, 0.0);
    EXPECT_NEAR(bound_terms(4, 1, {}, ls1, 1.0).d, 2.0 + 0.5 * std::log(2.0), 1e-14);
    EXPECT_NEAR(bound_terms(4, 1, {}, ls1, 1.0).d, 2.3466, 1e-4);
    EXPECT_NEAR(kt_constant(100, 2), 1.846, 1e-3);
    // log 2 - 2 (log Gamma(1) - log Gamma(1/2) - 2/400 + 1/1200), Gamma(1/2) = sqrt(pi)
    EXPECT_NEAR(kt_constant(100, 2), std::log(2.0) + std::log(std::numbers::pi) + 2.0 * (2.0 / 400.0 - 1.0 / 1200.0), 1e-12);
    const std::vector<double> ls2{0.3, 0.6};
    const BoundTerms b = bound_terms(50, 2, {}, ls2, 1.7);
    EXPECT_NEAR(b.rhs_total, b.leading + b.c_m + b.d + b.e_m + b.ratio_term, 1e-12);
    EXPECT_NEAR(b.leading, 3.0 * std::log(50.0), 1e-12);
    EXPECT_NEAR(b.ratio_term, 50.0 * std::log(1.7), 1e-12);
    EXPECT_GE(b.e_m, 0.0);
}

TEST(BoundTerms, OutOfRange) {
    const std::vector<double> ls{1.0};
    try {
        (void)bound_terms(3, 1, {}, ls, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::OutOfRange);
    }
}

TEST(VerifyBound, NonNegativeSlackOnRandomInstances) {
    Rng rng(31);
    double min_slack = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 200; ++trial) {
        const int m = 1 + trial % 2;
        const int n = 4 + trial % 5;
        const ModelSpec spec = random_model(m, rng);
        const Trajectory t = simulate(spec, n, 0.0, rng());
        const BoundReport r = verify_bound(spec, t, PriorConfig{});
        EXPECT_GE(r.slack, 0.0);
        EXPECT_GE(r.terms.ratio_term, 0.0);
        EXPECT_NEAR(r.terms.rhs_total, r.terms.leading + r.terms.c_m + r.terms.d + r.terms.e_m + r.terms.ratio_term, 1e-12);
        min_slack = std::min(min_slack, r.slack);
    }
    std::cout << "min slack over 200 instances: " << min_slack << "\n";
}

TEST(KtBound, ExhaustiveTwoStatePaths) {
    for (int n = 1; n <= 10; ++n) {
        for (long code = 0; code < power(2, n); ++code) {
            const auto path = decode(code, 2, n);
            EXPECT_GE(kt_bound_check(path, 2, empirical_transition_matrix(path, 2)), -1e-9);
        }
    }
}

TEST(KtBound, ConstantPathAndSingleState) {
    const std::vector<int> ones(9, 0);
    EXPECT_GE(kt_bound_check(ones, 2, empirical_transition_matrix(ones, 2)), 0.0);
    EXPECT_NEAR(kt_bound_check(ones, 1, empirical_transition_matrix(ones, 1)), 0.0, 1e-15);
}
