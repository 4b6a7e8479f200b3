#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "armr/error.hpp"
#include "armr/estimator.hpp"
#include "armr/mixture.hpp"
#include "armr/selection.hpp"

using namespace armr;

namespace {

ModelSpec benchmark() {
    Eigen::MatrixXd a(2, 2);
    a << 0.9, 0.1, 0.1, 0.9;
    return ModelSpec({{-2.0, 0.3, 1.0}, {2.0, -0.2, 1.0}}, a);
}

ModelSpec white_noise() { return ModelSpec({{0.0, 0.0, 1.0}}, Eigen::MatrixXd::Ones(1, 1)); }

SelectionRow row(int m, double criterion, bool fitted = true) {
    SelectionRow r;
    r.m = m;
    r.fitted = fitted;
    r.criterion = criterion;
    return r;
}

}  // namespace

TEST(Penalty, SingleStateByHand) {
    const PenaltyConfig config;
    const double n = 100.0;
    const double log_n = std::log(n);
    EXPECT_NEAR(5.0 / 2.0 * log_n, 11.513, 1e-3);
    // c_1 = 0; e_1 with lambda = 1, sigma^2 = d = 1e4, tau2 = 1
    const double e1 = std::max(0.0, 0.5 * std::log(1.0 / (n * n) + 1e4) - 0.5 * std::log(2.0 * std::numbers::pi));
    const double expected = 5.0 / 2.0 * log_n + e1 + 2.0 * std::sqrt(n) * log_n;
    EXPECT_NEAR(penalty(100, 1, config), expected, 1e-10);
}

TEST(Penalty, StrictlyIncreasingInOrder) {
    for (PhiShape shape : {PhiShape::Sqrt, PhiShape::Log, PhiShape::Constant}) {
        for (Tau2Policy tp : {Tau2Policy::Constant, Tau2Policy::Proof}) {
            PenaltyConfig config;
            config.phi = shape;
            config.tau2_policy = tp;
            for (int n : {100, 1000, 10000}) {
                for (int m = 1; m <= 6; ++m) EXPECT_GT(penalty(n, m + 1, config), penalty(n, m, config));
            }
        }
    }
}

TEST(Penalty, PerObservationShrinksBeyondTenThousand) {
    const PenaltyConfig config;
    for (int m = 1; m <= 6; ++m) {
        double previous = penalty(10000, m, config) / 10000.0;
        for (int n : {20000, 50000, 100000, 1000000, 10000000}) {
            const double now = penalty(n, m, config) / n;
            EXPECT_LT(now, previous);
            previous = now;
        }
    }
}

TEST(Penalty, PlugInUsesFittedValues) {
    PenaltyConfig config;
    config.lambda_sigma = LambdaSigmaPolicy::PlugIn;
    const std::vector<std::vector<double>> plug{{1.0}, {0.5, 0.5}};
    const PriorConfig prior;
    const double log_n = std::log(500.0);
    const double expected = (2.0 + 3.0) / 2.0 * log_n + bound_terms(500, 1, prior, plug[0], 1.0).e_m +
                            (6.0 + 3.0) / 2.0 * log_n + kt_constant(500, 2) + bound_terms(500, 2, prior, plug[1], 1.0).e_m +
                            6.0 * std::sqrt(500.0) * log_n;
    EXPECT_NEAR(penalty(500, 2, config, plug), expected, 1e-10);
}

TEST(Penalty, Errors) {
    try {
        (void)penalty(3, 1, PenaltyConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::OutOfRange);
    }
    PenaltyConfig bad;
    bad.rho = 2.0;
    try {
        (void)penalty(100, 1, bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Domain);
    }
}

TEST(Argmin, TiesGoToSmallerOrderAndFailuresAreSkipped) {
    const std::vector<SelectionRow> tie{row(1, 10.0), row(2, 10.0), row(3, 11.0)};
    EXPECT_EQ(argmin_criterion(tie), 0);
    const std::vector<SelectionRow> skip{row(1, 10.0, false), row(2, 12.0), row(3, 11.0)};
    EXPECT_EQ(argmin_criterion(skip), 2);
    const std::vector<SelectionRow> none{row(1, 0.0, false)};
    EXPECT_EQ(argmin_criterion(none), -1);
}

TEST(SelectOrder, CriterionDecomposition) {
    const Trajectory t = simulate(benchmark(), 300, 0.0, 1);
    EmConfig em;
    em.seed = 3;
    const SelectionResult r = select_order(t, 3, em, PenaltyConfig{});
    ASSERT_EQ(r.table.size(), 3u);
    for (const auto& x : r.table) {
        ASSERT_TRUE(x.fitted);
        EXPECT_EQ(x.criterion, -x.loglik + x.penalty);
        EXPECT_EQ(x.penalty, penalty(300, x.m, PenaltyConfig{}));
    }
    EXPECT_EQ(r.table[static_cast<std::size_t>(argmin_criterion(r.table))].m, r.m_hat);
}

TEST(SelectOrder, WhiteNoiseSelectsOneState) {
    int ones = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const Trajectory t = simulate(white_noise(), 1000, 0.0, mix_seed(500, static_cast<std::uint64_t>(rep)));
        EmConfig em;
        em.seed = static_cast<std::uint64_t>(rep);
        ones += select_order(t, 2, em, PenaltyConfig{}).m_hat == 1;
    }
    EXPECT_GE(ones, 80);
}

TEST(SelectOrder, AutoRangeStopsAfterTwoIncreases) {
    const Trajectory t = simulate(benchmark(), 400, 0.0, 2);
    PenaltyConfig pen;
    pen.phi = PhiShape::Constant;
    pen.kappa = 0.01;
    const SelectionResult r = select_order(t, std::nullopt, EmConfig{}, pen);
    EXPECT_TRUE(r.auto_stop);
    const auto& tab = r.table;
    ASSERT_GE(tab.size(), 3u);
    EXPECT_GT(tab.back().criterion, tab[tab.size() - 2].criterion);
    EXPECT_GT(tab[tab.size() - 2].criterion, tab[tab.size() - 3].criterion);
    EXPECT_EQ(r.m_max, static_cast<int>(tab.size()));
}

TEST(SelectOrder, LengthGuard) {
    const Trajectory t = simulate(benchmark(), 10, 0.0, 2);
    try {
        (void)select_order(t, 3, EmConfig{}, PenaltyConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
    }
}

TEST(KlRate, SelfAndRelabelledAreZero) {
    const ModelSpec spec = benchmark();
    const KlEstimate self = kl_rate_estimate(spec, spec, 1000, 4);
    EXPECT_EQ(self.estimate, 0.0);
    const KlEstimate swapped = kl_rate_estimate(spec, permute_states(spec, std::vector<int>{1, 0}), 1000, 4);
    EXPECT_LE(std::abs(swapped.estimate), 3.0 * swapped.std_error + 1e-12);
    EXPECT_EQ(swapped.blocks.size(), 20u);

    Eigen::MatrixXd a(3, 3);
    a << 0.8, 0.1, 0.1, 0.2, 0.7, 0.1, 0.3, 0.3, 0.4;
    const ModelSpec three({{-1.0, 0.6, 0.5}, {1.5, -0.4, 2.0}, {0.0, 0.2, 1.0}}, a);
    std::vector<int> perm{0, 1, 2};
    while (std::next_permutation(perm.begin(), perm.end())) {
        const KlEstimate k = kl_rate_estimate(three, permute_states(three, perm), 500, 9);
        EXPECT_LE(std::abs(k.estimate), 3.0 * k.std_error + 1e-12);
    }
}

TEST(KlRate, UnderfittedModelIsSeparated) {
    const ModelSpec spec = benchmark();
    const Trajectory t = simulate(spec, 5000, 0.0, 10);
    const FitResult one = multistart_fit(t, 1, EmConfig{});
    const KlEstimate k = kl_rate_estimate(spec, one.spec, 5000, 11);
    EXPECT_GT(k.estimate, 3.0 * k.std_error);
}

TEST(Study, SingleReplicationReproducesSelectOrder) {
    StudyConfig config;
    config.n_grid = {300};
    config.replications = 1;
    config.m_max = 3;
    config.base_seed = 17;
    const StudyResult study = mc_consistency_study(benchmark(), config);
    const StudySeeds seeds = study_seeds(17, 300, 0);
    EmConfig em;
    em.seed = seeds.fit;
    const SelectionResult direct = select_order(simulate(benchmark(), 300, 0.0, seeds.simulate), 3, em, PenaltyConfig{});
    ASSERT_TRUE(study.rows[0].m_hat.has_value());
    EXPECT_EQ(*study.rows[0].m_hat, direct.m_hat);
    for (std::size_t m = 0; m < direct.table.size(); ++m) {
        EXPECT_EQ(study.rows[0].table[m].loglik, direct.table[m].loglik);
        EXPECT_EQ(study.rows[0].table[m].penalty, direct.table[m].penalty);
    }
}

TEST(Study, DeterministicAndPartitioned) {
    StudyConfig config;
    config.n_grid = {60, 120};
    config.replications = 6;
    config.m_max = 2;
    config.base_seed = 5;
    config.em.restarts = 3;
    const StudyResult a = mc_consistency_study(benchmark(), config);
    config.threads = 3;
    const StudyResult b = mc_consistency_study(benchmark(), config);
    ASSERT_EQ(a.rows.size(), 12u);
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        EXPECT_EQ(a.rows[i].m_hat, b.rows[i].m_hat);
        for (std::size_t m = 0; m < a.rows[i].table.size(); ++m) EXPECT_EQ(a.rows[i].table[m].loglik, b.rows[i].table[m].loglik);
    }
    for (const auto& s : a.summary) EXPECT_NEAR(s.p_under + s.p_exact + s.p_over + s.p_fail, 1.0, 1e-12);
}

TEST(Study, FailuresAreCounted) {
    StudyConfig config;
    config.n_grid = {6};
    config.replications = 3;
    config.m_max = 2;  // n < 4 * m_max
    const StudyResult r = mc_consistency_study(benchmark(), config);
    EXPECT_EQ(r.summary[0].failures, 3);
    EXPECT_EQ(r.summary[0].p_fail, 1.0);
    for (const auto& row : r.rows) EXPECT_FALSE(row.failure.empty());
}

TEST(Study, SeedsAreDistinct) {
    const StudySeeds a = study_seeds(1, 500, 0);
    const StudySeeds b = study_seeds(1, 500, 1);
    const StudySeeds c = study_seeds(1, 1000, 0);
    EXPECT_NE(a.simulate, a.fit);
    EXPECT_NE(a.simulate, b.simulate);
    EXPECT_NE(a.simulate, c.simulate);
    EXPECT_EQ(a.simulate, study_seeds(1, 500, 0).simulate);
}
