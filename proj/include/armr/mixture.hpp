#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "armr/likelihood.hpp"
#include "armr/model.hpp"

namespace armr {

/**
 * @brief Conjugate prior on (theta_i, sigma2_i) plus Dirichlet(1/2) rows of A.
 *
 * theta_i | sigma2_i ~ N(0, sigma2_i * tau2 * I) and sigma2_i ~ IG(v0/2, u0/2).
 * The closed-form marginal is taken in the limit u0, v0 -> 0; u0 and v0 are
 * only read by mixture_numeric_oracle().
 */
struct PriorConfig {
    double tau2 = 1.0;
    double u0 = 0.0;
    double v0 = 0.0;
    static constexpr double kDirichletAlpha = 0.5;
};

/// M_i = (W^t W + tau^-2 I)^-1, P_i = I - W M W^t, B_i = I - W (W^t W)^-1 W^t.
struct ProjectionSet {
    struct State {
        Eigen::Matrix2d ridge_inverse;          // M_i
        Eigen::MatrixXd ridge_residual;         // P_i
        std::optional<Eigen::MatrixXd> ols_residual;  // B_i, empty when W^t W is singular
    };
    std::vector<State> states;
};

[[nodiscard]] ProjectionSet projection_set(const SegmentStats& stats, double tau2);

/// Right-hand side of the mixture inequality, component by component.
struct BoundTerms {
    double leading = 0.0;      // m(m+1)/2 log n
    double c_m = 0.0;
    double d = 0.0;
    double e_m = 0.0;
    double ratio_term = 0.0;   // (nm/2) log ratio_max
    double rhs_total = 0.0;
};

/// log q_m(x_1..x_n): Dirichlet(1/2) mixture of the path law with a uniform initial state.
[[nodiscard]] double kt_path_mixture_log(std::span<const int> path, int m);

/// log q_m(y | y_0, x): Normal/Inverse-Gamma marginal of every visited state,
/// u0, v0 -> 0. Unvisited states contribute 0.
[[nodiscard]] double conditional_mixture_log(const Trajectory& traj, std::span<const int> path, int m,
                                             const PriorConfig& prior);

struct OracleOptions {
    double sigma2_min = ParameterBounds{}.c;
    double sigma2_max = ParameterBounds{}.d;
    double tolerance = 1e-10;  // relative tolerance handed to each 1-D rule
};

struct OracleResult {
    double log_value = 0.0;
    double relative_error = 0.0;  // accumulated quadrature error estimate
};

/**
 * @brief Direct quadrature of the conditional marginal over (theta_i, sigma2_i).
 *
 * Integrates N(Y|W theta, s) N(theta|0, s tau2 I) s^-(v0/2+1) exp(-u0/(2s))
 * for every visited state, theta over R^2 and s over [sigma2_min, sigma2_max].
 * The Inverse-Gamma kernel is left unnormalized so that u0, v0 -> 0 recovers
 * the scale-invariant prior of the closed form. Guarded to n <= 6, m <= 2.
 */
[[nodiscard]] OracleResult mixture_numeric_oracle(const Trajectory& traj, std::span<const int> path, int m,
                                                  const PriorConfig& prior, const OracleOptions& options = {});

/// log q_m(y_1..y_n) by summing conditional_mixture_log + kt_path_mixture_log over all paths.
[[nodiscard]] double mixture_bruteforce_log(const Trajectory& traj, int m, const PriorConfig& prior);

/// c_m(n) = max{0, log m - m(log(Gamma(m/2)/Gamma(1/2)) - m(m-1)/4n + 1/12n)}; defined for every n >= 1.
[[nodiscard]] double kt_constant(int n, int m);

/// Components of the mixture inequality bound. Throws OutOfRange for n < 4.
[[nodiscard]] BoundTerms bound_terms(int n, int m, const PriorConfig& prior, std::span<const double> lambda_sigma,
                                     double ratio_max);

struct BoundReport {
    double lhs = 0.0;  // loglik_forward - mixture_bruteforce_log
    BoundTerms terms;
    double slack = 0.0;
    double ratio_max = 1.0;
    int excluded_paths = 0;  // paths skipped in the ratio max (some visited segment with n_i < 3)
};

/// Largest Y^t P Y / Y^t B Y over paths and visited states with a nonsingular B_i form.
/// Returns 1 when no path qualifies; `excluded` counts paths that were skipped.
[[nodiscard]] double ratio_max_over_paths(const Trajectory& traj, int m, double tau2, int* excluded = nullptr);

[[nodiscard]] BoundReport verify_bound(const ModelSpec& spec, const Trajectory& traj, const PriorConfig& prior);

/// Transition frequencies n_ij / n_i. of the path; rows never left are uniform.
[[nodiscard]] TransitionMatrix empirical_transition_matrix(std::span<const int> path, int m);

/// (m(m-1)/2) log n + c_m(n) - [log p_A(x) - kt_path_mixture_log(x)], with
/// p_A(x) = prod_k a_{x_k x_{k+1}} (initial-state factor bounded by 1).
[[nodiscard]] double kt_bound_check(std::span<const int> path, int m, const TransitionMatrix& a_mle);

}  // namespace armr
