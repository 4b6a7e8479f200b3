#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "armr/model.hpp"
#include "armr/selection.hpp"

namespace armr {

inline constexpr const char* kArtifactVersion = "0.1.0";

/// Shortest form that still carries 17 significant digits when needed; parses back to the same double.
[[nodiscard]] std::string format_double(double value);
[[nodiscard]] double parse_double(const std::string& text);

struct ModelFile {
    ModelSpec spec;
    ParameterBounds bounds;
};

/**
 * @brief JSON model schema.
 *
 *   { "m": 2,
 *     "regimes": [ {"b": -2, "alpha": 0.3, "sigma2": 1}, ... ],
 *     "transition": [[0.9, 0.1], [0.1, 0.9]]   // or a flat row-major list
 *     "bounds": {"c": 1e-4, "d": 1e4, "b_max": 100, "alpha_max": 10} }  // optional
 */
[[nodiscard]] ModelFile model_from_json(const nlohmann::json& doc);
[[nodiscard]] nlohmann::json model_to_json(const ModelSpec& spec, const ParameterBounds& bounds);

/// Header `t,y,x` (or `t,y` without a path); the t=0 row carries y0 and an empty x.
[[nodiscard]] std::string trajectory_to_csv(const Trajectory& traj);
[[nodiscard]] Trajectory trajectory_from_csv(const std::string& text);

[[nodiscard]] std::string read_text(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);

[[nodiscard]] nlohmann::json read_json(const std::filesystem::path& path);

[[nodiscard]] EmConfig em_config_from_json(const nlohmann::json& doc, EmConfig base = {});
[[nodiscard]] nlohmann::json em_config_to_json(const EmConfig& config);
[[nodiscard]] PenaltyConfig penalty_config_from_json(const nlohmann::json& doc, PenaltyConfig base = {});
[[nodiscard]] nlohmann::json penalty_config_to_json(const PenaltyConfig& config);
[[nodiscard]] PhiShape parse_phi(const std::string& text, double* kappa);

struct StudyFile {
    ModelFile model;
    StudyConfig config;
};

/**
 * @brief Study config: {"model": {...} | "model_path": "...", "n_grid": [...],
 * "replications": R, "m_max": "auto" | k, "y0": 0, "base_seed": s,
 * "em": {...}, "penalty": {...}}. model_path is relative to `base_dir`.
 */
[[nodiscard]] StudyFile study_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// CSV `m,fitted,loglik,penalty,criterion,iterations,converged`.
[[nodiscard]] std::string selection_to_csv(const SelectionResult& result);
/// CSV `n,replication,m_hat,loglik_1..loglik_K,pen_1..pen_K`.
[[nodiscard]] std::string study_detail_to_csv(const StudyResult& result);
/// CSV `n,P_under,P_exact,P_over,P_fail,failures`.
[[nodiscard]] std::string study_summary_to_csv(const StudyResult& result);

struct RunMetadata {
    std::string command;
    nlohmann::json config;
    std::vector<std::uint64_t> seeds;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
    nlohmann::json extra = nlohmann::json::object();

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Writes `<artifact>.meta.json` next to an output file.
void write_metadata(const std::filesystem::path& artifact, const RunMetadata& meta);

}  // namespace armr
