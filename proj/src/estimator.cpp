#include "armr/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>

#include "armr/error.hpp"
#include "armr/likelihood.hpp"
#include "armr/parallel.hpp"
#include "armr/rng.hpp"

namespace armr {

namespace {

constexpr double kMinEffectiveObs = 2.0;

double gaussian_logpdf(double residual, double sigma2) {
    return -0.5 * std::log(2.0 * std::numbers::pi * sigma2) - residual * residual / (2.0 * sigma2);
}

// Expected complete-data log-likelihood of one regime under the posterior weights.
double regime_objective(const RegimeParams& r, const Eigen::VectorXd& weights, const Trajectory& traj) {
    double total = 0.0;
    for (int k = 1; k <= traj.n(); ++k) {
        const double w = weights(k - 1);
        if (w == 0.0) continue;
        total += w * gaussian_logpdf(traj.y[static_cast<std::size_t>(k - 1)] - r.b - r.alpha * traj.lagged(k), r.sigma2);
    }
    return total;
}

// Expected log-probability of the hidden path: initial stationary term plus transitions.
double transition_objective(const TransitionMatrix& a, const Eigen::VectorXd& first, const Eigen::MatrixXd& counts) {
    const Eigen::VectorXd lambda = stationary_distribution(a);
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        if (first(i) > 0.0) total += first(i) * std::log(lambda(i));
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            if (counts(i, j) > 0.0) total += counts(i, j) * std::log(a(i, j));
        }
    }
    return total;
}

Eigen::MatrixXd expected_transitions(const Posteriors& post) {
    const auto m = post.gamma.cols();
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(m, m);
    if (post.xi.rows() == 0) return counts;
    const Eigen::RowVectorXd sums = post.xi.colwise().sum();
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) counts(i, j) = sums(i * m + j);
    }
    return counts;
}

void check_length(const Trajectory& traj, int m, const EmConfig& config) {
    if (m < 1) throw Error(ErrorKind::Domain, "m must be positive");
    if (config.min_obs_per_state > 0 && traj.n() < config.min_obs_per_state * m) {
        std::ostringstream msg;
        msg << "n = " << traj.n() << " is below " << config.min_obs_per_state << " * m = " << config.min_obs_per_state * m;
        throw Error(ErrorKind::InsufficientData, msg.str());
    }
}

}  // namespace

Posteriors e_step(const ModelSpec& spec, const Trajectory& traj) {
    const int m = spec.m();
    const int n = traj.n();
    if (n < 1) throw Error(ErrorKind::Domain, "e_step needs n >= 1");
    const auto& a = spec.transition();
    const auto& lambda = spec.stationary();

    // Emissions scaled by their per-step maximum; offsets re-enter the log-likelihood.
    Eigen::MatrixXd emit(n, m);
    Eigen::VectorXd offset(n);
    for (int k = 1; k <= n; ++k) {
        for (int i = 0; i < m; ++i) {
            const auto& r = spec.regime(i);
            if (!(r.sigma2 > 0.0)) throw Error(ErrorKind::Domain, "regime variance must be positive");
            emit(k - 1, i) = gaussian_logpdf(traj.y[static_cast<std::size_t>(k - 1)] - r.b - r.alpha * traj.lagged(k), r.sigma2);
        }
        offset(k - 1) = emit.row(k - 1).maxCoeff();
        emit.row(k - 1) = (emit.row(k - 1).array() - offset(k - 1)).exp();
    }

    Eigen::MatrixXd fwd(n, m);
    Eigen::VectorXd scale(n);
    fwd.row(0) = lambda.transpose().cwiseProduct(emit.row(0));
    for (int k = 0; k < n; ++k) {
        if (k > 0) fwd.row(k) = (fwd.row(k - 1) * a).cwiseProduct(emit.row(k));
        scale(k) = fwd.row(k).sum();
        if (!(scale(k) > 0.0) || !std::isfinite(scale(k))) {
            std::ostringstream msg;
            msg << "all forward weights vanish at k = " << k + 1;
            throw Error(ErrorKind::Degenerate, msg.str());
        }
        fwd.row(k) /= scale(k);
    }

    Eigen::MatrixXd bwd(n, m);
    bwd.row(n - 1).setOnes();
    for (int k = n - 2; k >= 0; --k) {
        const Eigen::RowVectorXd next = emit.row(k + 1).cwiseProduct(bwd.row(k + 1));
        bwd.row(k) = (a * next.transpose()).transpose() / scale(k + 1);
    }

    Posteriors post;
    post.loglik = scale.array().log().sum() + offset.sum();
    post.gamma = fwd.cwiseProduct(bwd);
    for (int k = 0; k < n; ++k) post.gamma.row(k) /= post.gamma.row(k).sum();

    post.xi.resize(std::max(n - 1, 0), m * m);
    for (int k = 0; k + 1 < n; ++k) {
        double total = 0.0;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                const double v = fwd(k, i) * a(i, j) * emit(k + 1, j) * bwd(k + 1, j);
                post.xi(k, i * m + j) = v;
                total += v;
            }
        }
        post.xi.row(k) /= total;
    }
    return post;
}

ModelSpec m_step(const Posteriors& post, const Trajectory& traj, const EmConfig& config) {
    const int m = static_cast<int>(post.gamma.cols());
    const int n = traj.n();
    if (post.gamma.rows() != n) throw Error(ErrorKind::Structural, "posteriors do not match the trajectory");
    const auto& bounds = config.bounds;

    std::vector<RegimeParams> regimes(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const Eigen::VectorXd w = post.gamma.col(i);
        const double mass = w.sum();
        if (mass < kMinEffectiveObs) {
            std::ostringstream msg;
            msg << "state " << i + 1 << " has " << mass << " effective observations";
            throw Error(ErrorKind::RegimeStarvation, msg.str());
        }
        Eigen::MatrixX2d design(n, 2);
        Eigen::VectorXd response(n);
        for (int k = 1; k <= n; ++k) {
            const double root = std::sqrt(w(k - 1));
            design(k - 1, 0) = root;
            design(k - 1, 1) = root * traj.lagged(k);
            response(k - 1) = root * traj.y[static_cast<std::size_t>(k - 1)];
        }
        const Eigen::Matrix2d gram = design.transpose() * design;
        const Eigen::Vector2d eig =
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(gram, Eigen::EigenvaluesOnly).eigenvalues();
        if (!(eig(0) > 0.0) || eig(1) / eig(0) >= 1e12) {
            throw Error(ErrorKind::SingularDesign, "weighted design is rank deficient");
        }
        const Eigen::Vector2d theta = design.colPivHouseholderQr().solve(response);
        const double rss = (response - design * theta).squaredNorm();
        auto& r = regimes[static_cast<std::size_t>(i)];
        r.b = std::clamp(theta(0), -bounds.b_max, bounds.b_max);
        r.alpha = std::clamp(theta(1), -bounds.alpha_max, bounds.alpha_max);
        r.sigma2 = std::clamp(rss / mass, bounds.c, bounds.d);
    }

    const Eigen::MatrixXd counts = expected_transitions(post);
    TransitionMatrix a(m, m);
    for (int i = 0; i < m; ++i) {
        const double from = counts.row(i).sum();
        for (int j = 0; j < m; ++j) {
            const double raw = from > 0.0 ? counts(i, j) / from : 1.0 / m;
            a(i, j) = std::max(raw, config.transition_floor);
        }
        a.row(i) /= a.row(i).sum();
    }
    return ModelSpec(std::move(regimes), std::move(a));
}

ModelSpec initial_model(const Trajectory& traj, int m, const EmConfig& config, std::uint64_t seed) {
    const int n = traj.n();
    if (n < 1) throw Error(ErrorKind::Domain, "empty trajectory");
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(-0.5, 0.5);
    const auto& bounds = config.bounds;

    std::vector<double> sorted = traj.y;
    std::ranges::sort(sorted);
    std::vector<double> cuts;
    for (int k = 1; k < m; ++k) {
        const double q = std::clamp((k + 0.5 * unit(rng)) / m, 0.0, 1.0);
        const auto idx = std::min(static_cast<std::size_t>(q * (n - 1) + 0.5), sorted.size() - 1);
        cuts.push_back(sorted[idx]);
    }
    std::ranges::sort(cuts);
    std::vector<int> path(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const double v = traj.y[static_cast<std::size_t>(k)];
        path[static_cast<std::size_t>(k)] = static_cast<int>(std::ranges::upper_bound(cuts, v) - cuts.begin());
        path[static_cast<std::size_t>(k)] = std::min(path[static_cast<std::size_t>(k)], m - 1);
    }

    double mean = 0.0;
    for (double v : traj.y) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : traj.y) var += (v - mean) * (v - mean);
    var = n > 1 ? var / (n - 1) : 1.0;

    const SegmentStats stats = segment_stats(traj, path, m);
    std::vector<RegimeParams> regimes(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        auto& r = regimes[static_cast<std::size_t>(i)];
        const auto& s = stats.states[static_cast<std::size_t>(i)];
        try {
            const RegimeFit fit = ols_fit_state(s, bounds.c);
            r = {fit.theta(0), fit.theta(1), fit.sigma2};
        } catch (const Error&) {
            r = {s.count() > 0 ? s.response.mean() : mean, 0.0, var};
        }
        r.b = std::clamp(r.b * (1.0 + 0.2 * unit(rng)), -bounds.b_max, bounds.b_max);
        r.alpha = std::clamp(r.alpha * (1.0 + 0.2 * unit(rng)), -bounds.alpha_max, bounds.alpha_max);
        r.sigma2 = std::clamp(r.sigma2 * (1.0 + 0.2 * unit(rng)), bounds.c, bounds.d);
    }

    TransitionMatrix a = stats.transitions.cast<double>().array() + 1.0;
    for (int i = 0; i < m; ++i) a.row(i) /= a.row(i).sum();
    return ModelSpec(std::move(regimes), std::move(a));
}

FitResult em_from(const ModelSpec& start, const Trajectory& traj, const EmConfig& config) {
    if (!(config.tolerance > 0.0) || config.max_iterations < 1) throw Error(ErrorKind::Domain, "invalid EM config");
    const int m = start.m();
    ModelSpec current = start;
    Posteriors post = e_step(current, traj);

    FitResult result{current, post.loglik, 0, false, {post.loglik}, config.seed, 0};
    for (int iter = 1; iter <= config.max_iterations; ++iter) {
        const ModelSpec candidate = m_step(post, traj, config);

        // Generalized EM: accept each block only if it raises its part of the
        // expected complete-data log-likelihood. Box projection and the
        // stationary initial term are what can make the closed form fall short.
        std::vector<RegimeParams> regimes = candidate.regimes();
        for (int i = 0; i < m; ++i) {
            const Eigen::VectorXd w = post.gamma.col(i);
            if (regime_objective(regimes[static_cast<std::size_t>(i)], w, traj) < regime_objective(current.regime(i), w, traj)) {
                regimes[static_cast<std::size_t>(i)] = current.regime(i);
            }
        }
        const Eigen::VectorXd first = post.gamma.row(0).transpose();
        const Eigen::MatrixXd counts = expected_transitions(post);
        const TransitionMatrix& old_a = current.transition();
        const double old_q = transition_objective(old_a, first, counts);
        TransitionMatrix a = candidate.transition();
        double step = 1.0;
        for (int halving = 0; halving < 40 && transition_objective(a, first, counts) < old_q; ++halving) {
            step *= 0.5;
            a = old_a + step * (candidate.transition() - old_a);
        }
        if (transition_objective(a, first, counts) < old_q) a = old_a;

        current = ModelSpec(std::move(regimes), std::move(a));
        post = e_step(current, traj);
        const double previous = result.loglik;
        result.loglik = post.loglik;
        result.trace.push_back(post.loglik);
        result.iterations = iter;
        if (std::abs(post.loglik - previous) < config.tolerance * std::max(std::abs(previous), 1e-300)) {
            result.converged = true;
            break;
        }
    }
    result.spec = current;
    return result;
}

FitResult em_fit(const Trajectory& traj, int m, const EmConfig& config, std::uint64_t seed) {
    check_length(traj, m, config);
    try {
        FitResult fit = em_from(initial_model(traj, m, config, seed), traj, config);
        fit.seed = seed;
        return fit;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::RegimeStarvation || e.kind() == ErrorKind::SingularDesign ||
            e.kind() == ErrorKind::Degenerate || e.kind() == ErrorKind::NoStationary) {
            std::ostringstream msg;
            msg << "EM start with seed " << seed << " failed: " << e.what();
            throw Error(ErrorKind::FitFailure, msg.str());
        }
        throw;
    }
}

FitResult multistart_fit(const Trajectory& traj, int m, const EmConfig& config) {
    check_length(traj, m, config);
    if (config.restarts < 1) throw Error(ErrorKind::Domain, "restarts must be >= 1");
    std::vector<std::optional<FitResult>> fits(static_cast<std::size_t>(config.restarts));
    std::vector<std::string> failures(static_cast<std::size_t>(config.restarts));
    parallel_for(config.restarts, config.threads, [&](int r) {
        try {
            FitResult fit = em_fit(traj, m, config, mix_seed(config.seed, static_cast<std::uint64_t>(r)));
            fit.restart = r;
            fits[static_cast<std::size_t>(r)] = std::move(fit);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::FitFailure) throw;
            failures[static_cast<std::size_t>(r)] = e.what();
        }
    });
    std::optional<FitResult> best;
    for (auto& fit : fits) {
        if (fit && (!best || fit->loglik > best->loglik)) best = std::move(fit);
    }
    if (!best) {
        std::ostringstream msg;
        msg << "all " << config.restarts << " EM starts failed for m = " << m << ":";
        for (const auto& f : failures) msg << "\n  " << f;
        throw Error(ErrorKind::FitFailure, msg.str());
    }
    return std::move(*best);
}

}  // namespace armr
