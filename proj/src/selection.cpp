#include "armr/selection.hpp"

#include <cmath>
#include <sstream>

#include "armr/error.hpp"
#include "armr/likelihood.hpp"
#include "armr/mixture.hpp"
#include "armr/parallel.hpp"
#include "armr/rng.hpp"

namespace armr {

namespace {

constexpr int kAutoHardCap = 12;

std::vector<double> uniform_upper(int l, const PenaltyConfig& config) {
    return std::vector<double>(static_cast<std::size_t>(l), std::sqrt(config.bounds.d) / l);
}

}  // namespace

double phi_value(int n, const PenaltyConfig& config) {
    switch (config.phi) {
        case PhiShape::Sqrt: return std::sqrt(static_cast<double>(n));
        case PhiShape::Log: return std::log(static_cast<double>(n));
        case PhiShape::Constant: return config.kappa;
    }
    return 0.0;
}

std::string phi_name(const PenaltyConfig& config) {
    switch (config.phi) {
        case PhiShape::Sqrt: return "sqrt";
        case PhiShape::Log: return "log";
        case PhiShape::Constant: {
            std::ostringstream out;
            out.precision(17);
            out << "const:" << config.kappa;
            return out.str();
        }
    }
    return "";
}

double penalty(int n, int m, const PenaltyConfig& config, std::span<const std::vector<double>> plug_in) {
    if (n < 4) throw Error(ErrorKind::OutOfRange, "penalty is defined for n >= 4");
    if (m < 1) throw Error(ErrorKind::Domain, "m must be positive");
    if (!(config.rho > 2.0)) throw Error(ErrorKind::Domain, "rho must exceed 2");
    if (config.phi == PhiShape::Constant && !(config.kappa > 0.0)) throw Error(ErrorKind::Domain, "kappa must be positive");
    const double log_n = std::log(static_cast<double>(n));
    double total = 0.0;
    for (int l = 1; l <= m; ++l) {
        PriorConfig prior;
        prior.tau2 = config.tau2_policy == Tau2Policy::Proof ? 0.75 * l : config.tau2;
        std::vector<double> ls = uniform_upper(l, config);
        if (config.lambda_sigma == LambdaSigmaPolicy::PlugIn && static_cast<int>(plug_in.size()) >= l &&
            static_cast<int>(plug_in[static_cast<std::size_t>(l - 1)].size()) == l) {
            ls = plug_in[static_cast<std::size_t>(l - 1)];
        }
        const BoundTerms terms = bound_terms(n, l, prior, ls, 1.0);
        total += (l * (l + 1) + config.rho) / 2.0 * log_n + terms.c_m + terms.e_m;
    }
    total += m * (m + 1.0) * phi_value(n, config) * log_n;
    return total;
}

std::vector<double> lambda_sigma_of(const ModelSpec& spec) {
    std::vector<double> out(static_cast<std::size_t>(spec.m()));
    const auto& lambda = spec.stationary();
    for (int i = 0; i < spec.m(); ++i) out[static_cast<std::size_t>(i)] = lambda(i) * std::sqrt(spec.regime(i).sigma2);
    return out;
}

int argmin_criterion(std::span<const SelectionRow> table) {
    int best = -1;
    for (int r = 0; r < static_cast<int>(table.size()); ++r) {
        const auto& row = table[static_cast<std::size_t>(r)];
        if (!row.fitted) continue;
        if (best < 0 || row.criterion < table[static_cast<std::size_t>(best)].criterion) best = r;
    }
    return best;
}

SelectionResult select_order(const Trajectory& traj, std::optional<int> m_max, const EmConfig& em,
                             const PenaltyConfig& pen) {
    const int n = traj.n();
    const int per_state = std::max(em.min_obs_per_state, 1);
    if (m_max) {
        if (*m_max < 1) throw Error(ErrorKind::Domain, "m_max must be positive");
        if (em.min_obs_per_state > 0 && n < per_state * *m_max) {
            throw Error(ErrorKind::InsufficientData, "trajectory shorter than 4 * m_max");
        }
    }
    SelectionResult result;
    result.auto_stop = !m_max.has_value();
    std::vector<std::vector<double>> plug_in;
    int increases = 0;
    int previous = -1;

    for (int m = 1;; ++m) {
        if (m_max && m > *m_max) break;
        if (!m_max && (m > kAutoHardCap || n < per_state * m)) break;

        EmConfig config = em;
        config.seed = mix_seed(em.seed, static_cast<std::uint64_t>(m));
        SelectionRow row;
        row.m = m;
        std::optional<FitResult> fit;
        try {
            fit = multistart_fit(traj, m, config);
            row.fitted = true;
            row.loglik = fit->loglik;
            row.iterations = fit->iterations;
            row.converged = fit->converged;
            plug_in.push_back(lambda_sigma_of(fit->spec));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::FitFailure) throw;
            row.failure = e.what();
            plug_in.emplace_back();
        }
        row.penalty = penalty(n, m, pen, plug_in);
        row.criterion = -row.loglik + row.penalty;
        result.table.push_back(row);
        result.fits.push_back(std::move(fit));

        if (!m_max && row.fitted) {
            if (previous >= 0 && row.criterion > result.table[static_cast<std::size_t>(previous)].criterion) {
                ++increases;
            } else {
                increases = 0;
            }
            previous = static_cast<int>(result.table.size()) - 1;
            if (increases >= 2) break;
        }
    }
    result.m_max = static_cast<int>(result.table.size());
    const int best = argmin_criterion(result.table);
    if (best < 0) throw Error(ErrorKind::FitFailure, "every candidate order failed to fit");
    result.m_hat = result.table[static_cast<std::size_t>(best)].m;
    return result;
}

KlEstimate kl_rate_estimate(const ModelSpec& spec0, const ModelSpec& spec, int n, std::uint64_t seed, int blocks) {
    if (blocks < 2) throw Error(ErrorKind::Domain, "need at least two blocks for a standard error");
    KlEstimate out;
    out.blocks.reserve(static_cast<std::size_t>(blocks));
    for (int b = 0; b < blocks; ++b) {
        const Trajectory traj = simulate(spec0, n, 0.0, mix_seed(seed, static_cast<std::uint64_t>(b)));
        out.blocks.push_back((loglik_forward(spec0, traj) - loglik_forward(spec, traj)) / n);
    }
    double mean = 0.0;
    for (double v : out.blocks) mean += v;
    mean /= blocks;
    double var = 0.0;
    for (double v : out.blocks) var += (v - mean) * (v - mean);
    var /= blocks - 1;
    out.estimate = mean;
    out.std_error = std::sqrt(var / blocks);
    return out;
}

StudySeeds study_seeds(std::uint64_t base_seed, int n, int replication) {
    const std::uint64_t s = mix_seed(mix_seed(base_seed, static_cast<std::uint64_t>(n)), static_cast<std::uint64_t>(replication));
    return {mix_seed(s, 0), mix_seed(s, 1)};
}

StudyResult mc_consistency_study(const ModelSpec& true_spec, const StudyConfig& config) {
    if (config.replications < 1) throw Error(ErrorKind::Domain, "replications must be >= 1");
    for (std::size_t g = 1; g < config.n_grid.size(); ++g) {
        if (config.n_grid[g] <= config.n_grid[g - 1]) throw Error(ErrorKind::Domain, "n_grid must be ascending");
    }
    const int grid = static_cast<int>(config.n_grid.size());
    StudyResult result;
    result.rows.resize(static_cast<std::size_t>(grid * config.replications));

    parallel_for(grid * config.replications, config.threads, [&](int task) {
        const int g = task / config.replications;
        const int r = task % config.replications;
        const int n = config.n_grid[static_cast<std::size_t>(g)];
        StudyRow& row = result.rows[static_cast<std::size_t>(task)];
        row.n = n;
        row.replication = r;
        const StudySeeds seeds = study_seeds(config.base_seed, n, r);
        try {
            const Trajectory traj = simulate(true_spec, n, config.y0, seeds.simulate, config.em.bounds);
            EmConfig em = config.em;
            em.seed = seeds.fit;
            em.threads = 1;
            const SelectionResult sel = select_order(traj, config.m_max, em, config.pen);
            row.m_hat = sel.m_hat;
            row.table = sel.table;
        } catch (const Error& e) {
            row.failure = e.what();
        }
    });

    const int m0 = true_spec.m();
    for (int g = 0; g < grid; ++g) {
        StudySummary s;
        s.n = config.n_grid[static_cast<std::size_t>(g)];
        s.replications = config.replications;
        int under = 0;
        int exact = 0;
        int over = 0;
        for (int r = 0; r < config.replications; ++r) {
            const auto& row = result.rows[static_cast<std::size_t>(g * config.replications + r)];
            if (!row.m_hat) {
                ++s.failures;
                continue;
            }
            const int mh = *row.m_hat;
            if (static_cast<int>(s.m_hat_counts.size()) <= mh) s.m_hat_counts.resize(static_cast<std::size_t>(mh + 1), 0);
            ++s.m_hat_counts[static_cast<std::size_t>(mh)];
            if (mh < m0) ++under;
            else if (mh == m0) ++exact;
            else ++over;
        }
        const double reps = config.replications;
        s.p_under = under / reps;
        s.p_exact = exact / reps;
        s.p_over = over / reps;
        s.p_fail = s.failures / reps;
        result.summary.push_back(std::move(s));
    }
    result.exact_rate_nondecreasing = true;
    for (std::size_t g = 1; g < result.summary.size(); ++g) {
        if (result.summary[g].p_exact < result.summary[g - 1].p_exact) result.exact_rate_nondecreasing = false;
    }
    return result;
}

}  // namespace armr
