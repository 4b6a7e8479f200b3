#include "armr/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "armr/error.hpp"

namespace armr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMaxCondition = 1e12;

void require_path(const Trajectory& traj, std::span<const int> path, int m) {
    if (static_cast<int>(path.size()) != traj.n()) throw Error(ErrorKind::Structural, "path length differs from n");
    for (int x : path) {
        if (x < 0 || x >= m) {
            std::ostringstream msg;
            msg << "state label " << x + 1 << " outside 1.." << m;
            throw Error(ErrorKind::Domain, msg.str());
        }
    }
}

const std::vector<int>& stored_path(const Trajectory& traj) {
    if (!traj.path) throw Error(ErrorKind::Domain, "trajectory has no hidden path");
    return *traj.path;
}

double gaussian_logpdf(double residual, double sigma2) {
    return -0.5 * std::log(2.0 * std::numbers::pi * sigma2) - residual * residual / (2.0 * sigma2);
}

void require_positive_variances(std::span<const RegimeParams> regimes) {
    for (const auto& r : regimes) {
        if (!(r.sigma2 > 0.0)) throw Error(ErrorKind::Domain, "regime variance must be positive");
    }
}

}  // namespace

int SegmentStats::n() const noexcept {
    int total = 0;
    for (const auto& s : states) total += s.count();
    return total;
}

void for_each_path(int m, int n, const std::function<void(std::span<const int>)>& visit) {
    if (m < 1 || n < 0) throw Error(ErrorKind::Domain, "path enumeration needs m >= 1 and n >= 0");
    if (std::pow(static_cast<double>(m), n) > kMaxEnumeratedPaths) {
        std::ostringstream msg;
        msg << "m^n = " << m << "^" << n << " exceeds the enumeration guard";
        throw Error(ErrorKind::SizeGuard, msg.str());
    }
    std::vector<int> path(static_cast<std::size_t>(n), 0);
    while (true) {
        visit(path);
        int pos = n - 1;
        while (pos >= 0 && path[static_cast<std::size_t>(pos)] == m - 1) {
            path[static_cast<std::size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) return;
        ++path[static_cast<std::size_t>(pos)];
    }
}

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) return kNegInf;
    const double top = *std::ranges::max_element(values);
    if (top == kNegInf) return kNegInf;
    if (std::isinf(top)) return top;
    double total = 0.0;
    for (double v : values) total += std::exp(v - top);
    return top + std::log(total);
}

double conditional_loglik(std::span<const RegimeParams> regimes, const Trajectory& traj, std::span<const int> path) {
    const int m = static_cast<int>(regimes.size());
    require_path(traj, path, m);
    require_positive_variances(regimes);

    std::vector<double> rss(static_cast<std::size_t>(m), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(m), 0);
    double prev = traj.y0;
    for (int k = 0; k < traj.n(); ++k) {
        const auto i = static_cast<std::size_t>(path[static_cast<std::size_t>(k)]);
        const double value = traj.y[static_cast<std::size_t>(k)];
        const double residual = value - regimes[i].b - regimes[i].alpha * prev;
        rss[i] += residual * residual;
        ++counts[i];
        prev = value;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < rss.size(); ++i) {
        const double s2 = regimes[i].sigma2;
        total += -0.5 * counts[i] * std::log(2.0 * std::numbers::pi * s2) - rss[i] / (2.0 * s2);
    }
    return total;
}

double conditional_loglik(std::span<const RegimeParams> regimes, const Trajectory& traj) {
    return conditional_loglik(regimes, traj, stored_path(traj));
}

double path_prior_loglik(const TransitionMatrix& a, std::span<const int> path) {
    const auto m = static_cast<int>(a.rows());
    if (path.empty()) return 0.0;
    for (int x : path) {
        if (x < 0 || x >= m) throw Error(ErrorKind::Domain, "state label out of range");
    }
    const Eigen::VectorXd lambda = stationary_distribution(a);
    double total = std::log(lambda(path[0]));
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
        const double p = a(path[k], path[k + 1]);
        if (p <= 0.0) return kNegInf;
        total += std::log(p);
    }
    return total;
}

double loglik_forward(const ModelSpec& spec, const Trajectory& traj) {
    const int m = spec.m();
    const int n = traj.n();
    if (n < 1) throw Error(ErrorKind::Domain, "loglik needs n >= 1");
    require_positive_variances(spec.regimes());

    const auto& lambda = spec.stationary();
    Eigen::MatrixXd log_a = spec.transition().array().log();
    std::vector<double> alpha(static_cast<std::size_t>(m));
    std::vector<double> next(static_cast<std::size_t>(m));
    std::vector<double> terms(static_cast<std::size_t>(m));

    auto emission = [&](int k, int i) {
        const auto& r = spec.regime(i);
        return gaussian_logpdf(traj.y[static_cast<std::size_t>(k - 1)] - r.b - r.alpha * traj.lagged(k), r.sigma2);
    };

    for (int i = 0; i < m; ++i) alpha[static_cast<std::size_t>(i)] = std::log(lambda(i)) + emission(1, i);
    for (int k = 2; k <= n; ++k) {
        for (int j = 0; j < m; ++j) {
            for (int i = 0; i < m; ++i) terms[static_cast<std::size_t>(i)] = alpha[static_cast<std::size_t>(i)] + log_a(i, j);
            next[static_cast<std::size_t>(j)] = log_sum_exp(terms) + emission(k, j);
        }
        alpha.swap(next);
    }
    return log_sum_exp(alpha);
}

double loglik_bruteforce(const ModelSpec& spec, const Trajectory& traj) {
    std::vector<double> joint;
    for_each_path(spec.m(), traj.n(), [&](std::span<const int> path) {
        joint.push_back(conditional_loglik(spec.regimes(), traj, path) + path_prior_loglik(spec.transition(), path));
    });
    return log_sum_exp(joint);
}

SegmentStats segment_stats(const Trajectory& traj, std::span<const int> path, int m) {
    if (m < 1) throw Error(ErrorKind::Domain, "m must be positive");
    require_path(traj, path, m);
    SegmentStats stats;
    stats.states.resize(static_cast<std::size_t>(m));
    stats.transitions = Eigen::MatrixXi::Zero(m, m);
    for (int k = 1; k <= traj.n(); ++k) {
        const int x = path[static_cast<std::size_t>(k - 1)];
        stats.states[static_cast<std::size_t>(x)].visits.push_back(k);
        if (k < traj.n()) ++stats.transitions(x, path[static_cast<std::size_t>(k)]);
    }
    for (auto& s : stats.states) {
        const auto count = static_cast<Eigen::Index>(s.visits.size());
        s.design.resize(count, 2);
        s.response.resize(count);
        for (Eigen::Index r = 0; r < count; ++r) {
            const int k = s.visits[static_cast<std::size_t>(r)];
            s.design(r, 0) = 1.0;
            s.design(r, 1) = traj.lagged(k);
            s.response(r) = traj.y[static_cast<std::size_t>(k - 1)];
        }
    }
    return stats;
}

SegmentStats segment_stats(const Trajectory& traj, int m) { return segment_stats(traj, stored_path(traj), m); }

RegimeFit ols_fit_state(const SegmentStats::State& state, double variance_floor) {
    if (state.count() < 2) {
        throw Error(ErrorKind::InsufficientData, "segment has fewer than 2 observations");
    }
    const Eigen::Matrix2d gram = state.design.transpose() * state.design;
    const Eigen::Vector2d eig = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(gram, Eigen::EigenvaluesOnly).eigenvalues();
    if (!(eig(0) > 0.0) || eig(1) / eig(0) >= kMaxCondition) {
        throw Error(ErrorKind::SingularDesign, "segment design matrix is rank deficient (lagged values all equal)");
    }
    RegimeFit fit;
    fit.theta = state.design.colPivHouseholderQr().solve(state.response);
    fit.rss = (state.response - state.design * fit.theta).squaredNorm();
    fit.sigma2 = std::max(fit.rss / state.count(), variance_floor);
    return fit;
}

std::vector<RegimeFit> ols_fit(const SegmentStats& stats, double variance_floor) {
    std::vector<RegimeFit> fits;
    fits.reserve(stats.states.size());
    for (const auto& s : stats.states) fits.push_back(ols_fit_state(s, variance_floor));
    return fits;
}

double parameter_distance(const ModelSpec& lhs, const ModelSpec& rhs) {
    if (lhs.m() != rhs.m()) throw Error(ErrorKind::Structural, "specs have different state counts");
    double dist = (lhs.transition() - rhs.transition()).cwiseAbs().maxCoeff();
    for (int i = 0; i < lhs.m(); ++i) {
        const auto& a = lhs.regime(i);
        const auto& b = rhs.regime(i);
        dist = std::max({dist, std::abs(a.b - b.b), std::abs(a.alpha - b.alpha), std::abs(a.sigma2 - b.sigma2)});
    }
    return dist;
}

double lipschitz_probe(const ModelSpec& spec, const ModelSpec& other, const Trajectory& traj) {
    const double dist = parameter_distance(spec, other);
    if (!(dist > 0.0)) throw Error(ErrorKind::Degenerate, "parameter vectors coincide; Lipschitz ratio undefined");
    const double diff = std::abs(loglik_forward(spec, traj) - loglik_forward(other, traj));
    return diff / (traj.n() * dist);
}

}  // namespace armr
