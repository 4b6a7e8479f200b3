#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "armr/estimator.hpp"
#include "armr/model.hpp"

namespace armr {

enum class PhiShape { Sqrt, Log, Constant };

/// How the lambda_i * sigma_i entering e_l(n) are chosen.
enum class LambdaSigmaPolicy {
    UniformUpper,  // lambda_i = 1/l, sigma_i^2 = bounds.d
    PlugIn,        // taken from the l-state fit
};

/// tau2 = config value, or 3 l / 4 (the choice tau2 = 3/(4 lambda_k) with lambda_k = 1/l).
enum class Tau2Policy { Constant, Proof };

struct PenaltyConfig {
    double rho = 3.0;
    PhiShape phi = PhiShape::Sqrt;
    double kappa = 1.0;  // phi(n) for PhiShape::Constant
    double tau2 = 1.0;
    LambdaSigmaPolicy lambda_sigma = LambdaSigmaPolicy::UniformUpper;
    Tau2Policy tau2_policy = Tau2Policy::Constant;
    ParameterBounds bounds;  // d for the uniform-upper policy
};

[[nodiscard]] double phi_value(int n, const PenaltyConfig& config);
[[nodiscard]] std::string phi_name(const PenaltyConfig& config);

/**
 * @brief pen(n, m) = sum_{l<=m} (l(l+1)+rho)/2 log n + sum c_l(n) + sum e_l(n)
 *        + m(m+1) phi(n) log n.
 *
 * With the plug-in policy, plug_in[l-1] holds the lambda_i * sigma_i of the
 * l-state fit for every l <= m.
 */
[[nodiscard]] double penalty(int n, int m, const PenaltyConfig& config,
                             std::span<const std::vector<double>> plug_in = {});

/// lambda_i * sigma_i of a fitted model.
[[nodiscard]] std::vector<double> lambda_sigma_of(const ModelSpec& spec);

struct SelectionRow {
    int m = 0;
    bool fitted = false;
    double loglik = 0.0;
    double penalty = 0.0;
    double criterion = 0.0;  // -loglik + penalty
    int iterations = 0;
    bool converged = false;
    std::string failure;
};

struct SelectionResult {
    int m_hat = 0;
    int m_max = 0;
    bool auto_stop = false;
    std::vector<SelectionRow> table;          // one row per m = 1..m_max
    std::vector<std::optional<FitResult>> fits;  // parallel to table
};

/// Index of the smallest criterion among fitted rows; ties go to the lower m.
[[nodiscard]] int argmin_criterion(std::span<const SelectionRow> table);

/// m_max = nullopt selects the automatic range: m grows until the criterion
/// has increased at two consecutive steps (heuristic), or 4m exceeds n.
[[nodiscard]] SelectionResult select_order(const Trajectory& traj, std::optional<int> m_max, const EmConfig& em,
                                           const PenaltyConfig& pen);

struct KlEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
    std::vector<double> blocks;
};

/// Mean over B independent simulations (seeds mix_seed(seed, b)) of
/// (1/n)[log p_spec0(Y) - log p_spec(Y)] with Y ~ spec0, and its standard error.
[[nodiscard]] KlEstimate kl_rate_estimate(const ModelSpec& spec0, const ModelSpec& spec, int n, std::uint64_t seed,
                                          int blocks = 20);

struct StudyConfig {
    std::vector<int> n_grid;
    int replications = 1;
    std::optional<int> m_max;  // nullopt = auto
    double y0 = 0.0;
    EmConfig em;
    PenaltyConfig pen;
    std::uint64_t base_seed = 0;
    int threads = 1;
};

struct StudySeeds {
    std::uint64_t simulate;
    std::uint64_t fit;
};

/// Seeds of replication r at grid point n:
/// s = mix_seed(mix_seed(base, n), r); simulate = mix_seed(s, 0), fit = mix_seed(s, 1).
[[nodiscard]] StudySeeds study_seeds(std::uint64_t base_seed, int n, int replication);

struct StudyRow {
    int n = 0;
    int replication = 0;
    std::optional<int> m_hat;  // empty when the replication failed
    std::vector<SelectionRow> table;
    std::string failure;
};

struct StudySummary {
    int n = 0;
    int replications = 0;
    int failures = 0;
    double p_under = 0.0;
    double p_exact = 0.0;
    double p_over = 0.0;
    double p_fail = 0.0;
    std::vector<int> m_hat_counts;  // index = m_hat
};

struct StudyResult {
    std::vector<StudyRow> rows;
    std::vector<StudySummary> summary;
    bool exact_rate_nondecreasing = false;  // diagnostic only
};

[[nodiscard]] StudyResult mc_consistency_study(const ModelSpec& true_spec, const StudyConfig& config);

}  // namespace armr
