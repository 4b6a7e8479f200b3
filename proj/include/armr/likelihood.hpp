#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "armr/model.hpp"

namespace armr {

/// Per-state segmentation of a trajectory along a known hidden path.
/// Time indices are 1-based (k = 1..n); states 0-based.
struct SegmentStats {
    struct State {
        std::vector<int> visits;   // I_i
        Eigen::MatrixX2d design;   // W_i = [1, y_{k-1}] for k in I_i
        Eigen::VectorXd response;  // Y_{I_i}
        [[nodiscard]] int count() const noexcept { return static_cast<int>(visits.size()); }
    };

    std::vector<State> states;
    Eigen::MatrixXi transitions;  // n_ij over consecutive pairs (x_k, x_{k+1}), k = 1..n-1

    [[nodiscard]] int m() const noexcept { return static_cast<int>(states.size()); }
    [[nodiscard]] int n() const noexcept;
};

struct RegimeFit {
    Eigen::Vector2d theta;  // (intercept, slope)
    double sigma2 = 0.0;    // max(rss / n_i, variance floor)
    double rss = 0.0;
};

/// Upper bound on m^n for the path enumerators.
inline constexpr double kMaxEnumeratedPaths = 1e6;

/// Calls `visit` with every path in {0..m-1}^n in lexicographic order.
/// Throws SizeGuard when m^n exceeds kMaxEnumeratedPaths.
void for_each_path(int m, int n, const std::function<void(std::span<const int>)>& visit);

/// Numerically stable log(sum(exp(values))); -inf for an empty or all -inf input.
[[nodiscard]] double log_sum_exp(std::span<const double> values);

/// log p(y_1..y_n | y_0, x_1..x_n) for the Gaussian AR regimes.
[[nodiscard]] double conditional_loglik(std::span<const RegimeParams> regimes, const Trajectory& traj,
                                        std::span<const int> path);
[[nodiscard]] double conditional_loglik(std::span<const RegimeParams> regimes, const Trajectory& traj);

/// log lambda_{x_1} + sum_k log a_{x_k x_{k+1}}; -inf on a zero-probability step.
[[nodiscard]] double path_prior_loglik(const TransitionMatrix& a, std::span<const int> path);

/// log p_psi(y_1..y_n | y_0) by the forward recursion in log space.
[[nodiscard]] double loglik_forward(const ModelSpec& spec, const Trajectory& traj);

/// Same quantity by explicit summation over all m^n hidden paths.
[[nodiscard]] double loglik_bruteforce(const ModelSpec& spec, const Trajectory& traj);

[[nodiscard]] SegmentStats segment_stats(const Trajectory& traj, std::span<const int> path, int m);
[[nodiscard]] SegmentStats segment_stats(const Trajectory& traj, int m);

/// Least-squares fit of one segment. Throws InsufficientData for n_i < 2 and
/// SingularDesign when cond(W^t W) >= 1e12.
[[nodiscard]] RegimeFit ols_fit_state(const SegmentStats::State& state, double variance_floor);

/// ols_fit_state for every state.
[[nodiscard]] std::vector<RegimeFit> ols_fit(const SegmentStats& stats, double variance_floor = ParameterBounds{}.c);

/// Max-norm distance over (b, alpha, sigma2, a_ij) of two specs with equal m.
[[nodiscard]] double parameter_distance(const ModelSpec& lhs, const ModelSpec& rhs);

/// |loglik(spec) - loglik(other)| / (n * ||spec - other||_inf).
[[nodiscard]] double lipschitz_probe(const ModelSpec& spec, const ModelSpec& other, const Trajectory& traj);

}  // namespace armr
