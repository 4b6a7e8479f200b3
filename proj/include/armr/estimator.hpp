#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "armr/model.hpp"

namespace armr {

struct EmConfig {
    double tolerance = 1e-7;  // relative log-likelihood change
    int max_iterations = 500;
    int restarts = 10;
    ParameterBounds bounds;   // variance floor is bounds.c
    double transition_floor = 1e-6;
    std::uint64_t seed = 0;
    /// n >= min_obs_per_state * m is required before fitting; 0 disables the guard.
    int min_obs_per_state = 4;
    /// Worker threads for independent restarts (1 = sequential).
    int threads = 1;
};

/// Smoothed posteriors of the hidden chain. gamma(k-1, i) = P(X_k = i | y),
/// xi(k-1, i * m + j) = P(X_k = i, X_{k+1} = j | y) for k = 1..n-1.
struct Posteriors {
    Eigen::MatrixXd gamma;
    Eigen::MatrixXd xi;
    double loglik = 0.0;

    [[nodiscard]] double pair(int k, int i, int j) const { return xi(k - 1, i * gamma.cols() + j); }
};

struct FitResult {
    ModelSpec spec;
    double loglik = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace;  // log-likelihood of the initial point and after every M-step
    std::uint64_t seed = 0;
    int restart = 0;
};

/// Scaled forward-backward recursion.
[[nodiscard]] Posteriors e_step(const ModelSpec& spec, const Trajectory& traj);

/// Closed-form weighted-regression update followed by flooring and projection
/// onto the parameter box. Throws RegimeStarvation when some state has
/// sum_k gamma_k(i) < 2.
[[nodiscard]] ModelSpec m_step(const Posteriors& post, const Trajectory& traj, const EmConfig& config);

/// Quantile-bin hard segmentation, per-bin OLS and +-10% multiplicative jitter.
[[nodiscard]] ModelSpec initial_model(const Trajectory& traj, int m, const EmConfig& config, std::uint64_t seed);

/// EM iterations from a given starting point.
[[nodiscard]] FitResult em_from(const ModelSpec& start, const Trajectory& traj, const EmConfig& config);

/// Single-start EM from initial_model(traj, m, config, seed). Throws FitFailure.
[[nodiscard]] FitResult em_fit(const Trajectory& traj, int m, const EmConfig& config, std::uint64_t seed);

/// Best of config.restarts em_fit runs with seeds mix_seed(config.seed, r);
/// ties go to the lower restart index.
[[nodiscard]] FitResult multistart_fit(const Trajectory& traj, int m, const EmConfig& config);

}  // namespace armr
