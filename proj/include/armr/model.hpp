#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "armr/rng.hpp"

namespace armr {

/// Parameters of one regime: y_k = alpha * y_{k-1} + b + sqrt(sigma2) * e_k.
struct RegimeParams {
    double b = 0.0;
    double alpha = 0.0;
    double sigma2 = 1.0;

    friend bool operator==(const RegimeParams&, const RegimeParams&) = default;
};

/// Compact parameter box and variance range [c, d] defining the admissible
/// parameter space for every regime.
struct ParameterBounds {
    double c = 1e-4;
    double d = 1e4;
    double b_max = 100.0;
    double alpha_max = 10.0;
};

/// Row-stochastic m x m matrix; entry (i, j) is P(X_{k+1} = j | X_k = i).
using TransitionMatrix = Eigen::MatrixXd;

/**
 * @brief Full AR-MR parameter vector psi = (theta, sigma^2, A).
 *
 * The constructor only checks that dimensions agree; the model constraints
 * are reported by validate_model(). The stationary distribution is computed
 * once at construction and is empty when the chain has no unique one.
 */
class ModelSpec {
public:
    ModelSpec(std::vector<RegimeParams> regimes, TransitionMatrix transition);

    [[nodiscard]] int m() const noexcept { return static_cast<int>(regimes_.size()); }
    [[nodiscard]] const std::vector<RegimeParams>& regimes() const noexcept { return regimes_; }
    [[nodiscard]] const RegimeParams& regime(int i) const { return regimes_.at(static_cast<std::size_t>(i)); }
    [[nodiscard]] const TransitionMatrix& transition() const noexcept { return transition_; }

    /// Stationary distribution; throws NoStationary when it does not exist.
    [[nodiscard]] const Eigen::VectorXd& stationary() const;
    [[nodiscard]] bool has_stationary() const noexcept { return lambda_.has_value(); }

private:
    std::vector<RegimeParams> regimes_;
    TransitionMatrix transition_;
    std::optional<Eigen::VectorXd> lambda_;
};

/// Observed series y_0..y_n with an optional hidden path x_1..x_n.
/// States are 0-based in memory (1-based in files).
struct Trajectory {
    double y0 = 0.0;
    std::vector<double> y;
    std::optional<std::vector<int>> path;

    [[nodiscard]] int n() const noexcept { return static_cast<int>(y.size()); }
    /// y_{k-1} for k = 1..n, i.e. lagged(k) with k 1-based.
    [[nodiscard]] double lagged(int k) const { return k == 1 ? y0 : y[static_cast<std::size_t>(k - 2)]; }
    [[nodiscard]] Trajectory prefix(int n) const;
};

struct Violation {
    std::string name;
    std::string detail;
};

using ValidationReport = std::vector<Violation>;

/// Every violated constraint, by name: "row-stochastic", "nonnegative",
/// "irreducibility", "aperiodicity", "variance-bounds", "parameter-box",
/// "stability". Empty when the model is admissible.
[[nodiscard]] ValidationReport validate_model(const ModelSpec& spec, const ParameterBounds& bounds = {});

[[nodiscard]] std::string format_report(const ValidationReport& report);

[[nodiscard]] bool is_irreducible(const TransitionMatrix& a);
[[nodiscard]] bool is_aperiodic(const TransitionMatrix& a);

/// Solves (A^t - I) lambda = 0 with sum(lambda) = 1.
[[nodiscard]] Eigen::VectorXd stationary_distribution(const TransitionMatrix& a);

/// sum_i lambda_i log|alpha_i|; -inf when some visited regime has alpha_i = 0.
[[nodiscard]] double stability_index(const ModelSpec& spec);

/// X_1 ~ lambda, X_{k+1} | X_k ~ row of A, y_k by the AR recursion.
/// Throws Validation when the model is not admissible under `bounds`.
[[nodiscard]] Trajectory simulate(const ModelSpec& spec, int n, double y0, std::uint64_t seed,
                                  const ParameterBounds& bounds = {});

/// Relabels states: new state k is old state perm[k].
[[nodiscard]] ModelSpec permute_states(const ModelSpec& spec, std::span<const int> perm);
[[nodiscard]] std::vector<int> permute_path(std::span<const int> path, std::span<const int> perm);

/// Random admissible model with moderate parameters: |b| <= 2, |alpha| <= 0.8,
/// sigma2 in [0.25, 2], strictly positive transition rows.
[[nodiscard]] ModelSpec random_model(int m, Rng& rng);

}  // namespace armr
