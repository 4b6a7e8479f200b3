#include "armr/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>

#include "armr/error.hpp"

namespace armr {

namespace {

constexpr double kRowSumTolerance = 1e-12;

std::vector<std::vector<int>> adjacency(const TransitionMatrix& a) {
    const auto m = static_cast<int>(a.rows());
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            if (a(i, j) > 0.0) adj[static_cast<std::size_t>(i)].push_back(j);
        }
    }
    return adj;
}

// BFS distances from state 0; -1 for unreachable states.
std::vector<int> bfs_levels(const std::vector<std::vector<int>>& adj) {
    std::vector<int> level(adj.size(), -1);
    std::queue<int> queue;
    level[0] = 0;
    queue.push(0);
    while (!queue.empty()) {
        const int u = queue.front();
        queue.pop();
        for (int v : adj[static_cast<std::size_t>(u)]) {
            if (level[static_cast<std::size_t>(v)] < 0) {
                level[static_cast<std::size_t>(v)] = level[static_cast<std::size_t>(u)] + 1;
                queue.push(v);
            }
        }
    }
    return level;
}

}  // namespace

ModelSpec::ModelSpec(std::vector<RegimeParams> regimes, TransitionMatrix transition)
    : regimes_(std::move(regimes)), transition_(std::move(transition)) {
    const auto m = static_cast<Eigen::Index>(regimes_.size());
    if (m < 1) throw Error(ErrorKind::Structural, "model needs at least one state");
    if (transition_.rows() != m || transition_.cols() != m) {
        std::ostringstream msg;
        msg << "transition matrix is " << transition_.rows() << "x" << transition_.cols() << " but m = " << m;
        throw Error(ErrorKind::Structural, msg.str());
    }
    if ((transition_.array() >= 0.0).all() && is_irreducible(transition_) && is_aperiodic(transition_)) {
        lambda_ = stationary_distribution(transition_);
    }
}

const Eigen::VectorXd& ModelSpec::stationary() const {
    if (!lambda_) throw Error(ErrorKind::NoStationary, "transition matrix has no unique stationary distribution");
    return *lambda_;
}

Trajectory Trajectory::prefix(int len) const {
    if (len < 0 || len > n()) throw Error(ErrorKind::Domain, "prefix length out of range");
    Trajectory out;
    out.y0 = y0;
    out.y.assign(y.begin(), y.begin() + len);
    if (path) out.path = std::vector<int>(path->begin(), path->begin() + len);
    return out;
}

bool is_irreducible(const TransitionMatrix& a) {
    const auto adj = adjacency(a);
    const auto m = static_cast<int>(a.rows());
    // Strongly connected iff everything is reachable from 0 in A and in A^t.
    if (std::ranges::any_of(bfs_levels(adj), [](int l) { return l < 0; })) return false;
    const auto adj_t = adjacency(a.transpose());
    const auto back = bfs_levels(adj_t);
    return std::ranges::none_of(back, [](int l) { return l < 0; }) && m >= 1;
}

bool is_aperiodic(const TransitionMatrix& a) {
    // Period of an irreducible chain: gcd over edges (u, v) of level(u) + 1 - level(v).
    const auto adj = adjacency(a);
    const auto level = bfs_levels(adj);
    int period = 0;
    for (std::size_t u = 0; u < adj.size(); ++u) {
        if (level[u] < 0) continue;
        for (int v : adj[u]) {
            period = std::gcd(period, std::abs(level[u] + 1 - level[static_cast<std::size_t>(v)]));
        }
    }
    return period == 1;
}

Eigen::VectorXd stationary_distribution(const TransitionMatrix& a) {
    const auto m = a.rows();
    if (a.cols() != m || m < 1) throw Error(ErrorKind::Structural, "transition matrix must be square");
    if (!is_irreducible(a)) throw Error(ErrorKind::NoStationary, "transition matrix is reducible");
    if (!is_aperiodic(a)) throw Error(ErrorKind::NoStationary, "transition matrix is periodic");

    Eigen::MatrixXd system = a.transpose() - Eigen::MatrixXd::Identity(m, m);
    system.row(m - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
    rhs(m - 1) = 1.0;
    Eigen::VectorXd lambda = system.fullPivLu().solve(rhs);
    // Round-off can leave tiny negatives for nearly-absorbing chains.
    lambda = lambda.cwiseMax(0.0);
    lambda /= lambda.sum();
    return lambda;
}

double stability_index(const ModelSpec& spec) {
    const auto& lambda = spec.stationary();
    double total = 0.0;
    for (int i = 0; i < spec.m(); ++i) {
        const double alpha = std::abs(spec.regime(i).alpha);
        if (alpha == 0.0) return -std::numeric_limits<double>::infinity();
        total += lambda(i) * std::log(alpha);
    }
    return total;
}

ValidationReport validate_model(const ModelSpec& spec, const ParameterBounds& bounds) {
    ValidationReport report;
    const auto& a = spec.transition();
    const int m = spec.m();

    bool stochastic = true;
    if ((a.array() < 0.0).any()) {
        report.push_back({"nonnegative", "transition matrix has negative entries"});
        stochastic = false;
    }
    for (int i = 0; i < m; ++i) {
        const double row = a.row(i).sum();
        if (std::abs(row - 1.0) > kRowSumTolerance) {
            std::ostringstream msg;
            msg.precision(17);
            msg << "row " << i + 1 << " sums to " << row;
            report.push_back({"row-stochastic", msg.str()});
            stochastic = false;
        }
    }
    bool ergodic = false;
    if (!is_irreducible(a)) {
        report.push_back({"irreducibility", "hidden chain is reducible"});
    } else if (!is_aperiodic(a)) {
        report.push_back({"aperiodicity", "hidden chain is periodic"});
    } else {
        ergodic = true;
    }
    for (int i = 0; i < m; ++i) {
        const auto& r = spec.regime(i);
        if (!(r.sigma2 >= bounds.c && r.sigma2 <= bounds.d)) {
            std::ostringstream msg;
            msg << "regime " << i + 1 << ": sigma2 = " << r.sigma2 << " outside [" << bounds.c << ", " << bounds.d << "]";
            report.push_back({"variance-bounds", msg.str()});
        }
        if (!(std::abs(r.b) <= bounds.b_max && std::abs(r.alpha) <= bounds.alpha_max)) {
            std::ostringstream msg;
            msg << "regime " << i + 1 << ": (b, alpha) = (" << r.b << ", " << r.alpha << ") outside the parameter box";
            report.push_back({"parameter-box", msg.str()});
        }
    }
    if (stochastic && ergodic) {
        const double index = stability_index(spec);
        if (!(index < 0.0)) {
            std::ostringstream msg;
            msg << "sum_i lambda_i log|alpha_i| = " << index << " is not negative";
            report.push_back({"stability", msg.str()});
        }
    }
    return report;
}

std::string format_report(const ValidationReport& report) {
    std::ostringstream out;
    for (const auto& v : report) out << v.name << ": " << v.detail << '\n';
    return out.str();
}

Trajectory simulate(const ModelSpec& spec, int n, double y0, std::uint64_t seed, const ParameterBounds& bounds) {
    if (n < 1) throw Error(ErrorKind::Domain, "simulate needs n >= 1");
    if (auto report = validate_model(spec, bounds); !report.empty()) {
        throw Error(ErrorKind::Validation, "invalid model:\n" + format_report(report));
    }
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto& lambda = spec.stationary();
    const int m = spec.m();

    std::vector<std::discrete_distribution<int>> rows;
    rows.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const auto& a = spec.transition();
        std::vector<double> w(static_cast<std::size_t>(m));
        for (int j = 0; j < m; ++j) w[static_cast<std::size_t>(j)] = a(i, j);
        rows.emplace_back(w.begin(), w.end());
    }
    std::discrete_distribution<int> initial(lambda.data(), lambda.data() + m);

    Trajectory traj;
    traj.y0 = y0;
    traj.y.resize(static_cast<std::size_t>(n));
    std::vector<int> path(static_cast<std::size_t>(n));
    int state = initial(rng);
    double prev = y0;
    for (int k = 0; k < n; ++k) {
        if (k > 0) state = rows[static_cast<std::size_t>(state)](rng);
        const auto& r = spec.regime(state);
        const double value = r.alpha * prev + r.b + std::sqrt(r.sigma2) * noise(rng);
        path[static_cast<std::size_t>(k)] = state;
        traj.y[static_cast<std::size_t>(k)] = value;
        prev = value;
    }
    traj.path = std::move(path);
    return traj;
}

ModelSpec permute_states(const ModelSpec& spec, std::span<const int> perm) {
    const int m = spec.m();
    if (static_cast<int>(perm.size()) != m) throw Error(ErrorKind::Structural, "permutation size differs from m");
    std::vector<RegimeParams> regimes(static_cast<std::size_t>(m));
    TransitionMatrix a(m, m);
    for (int k = 0; k < m; ++k) {
        regimes[static_cast<std::size_t>(k)] = spec.regime(perm[static_cast<std::size_t>(k)]);
        for (int l = 0; l < m; ++l) {
            a(k, l) = spec.transition()(perm[static_cast<std::size_t>(k)], perm[static_cast<std::size_t>(l)]);
        }
    }
    return ModelSpec(std::move(regimes), std::move(a));
}

std::vector<int> permute_path(std::span<const int> path, std::span<const int> perm) {
    std::vector<int> inverse(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) inverse[static_cast<std::size_t>(perm[k])] = static_cast<int>(k);
    std::vector<int> out(path.size());
    for (std::size_t k = 0; k < path.size(); ++k) out[k] = inverse[static_cast<std::size_t>(path[k])];
    return out;
}

ModelSpec random_model(int m, Rng& rng) {
    if (m < 1) throw Error(ErrorKind::Domain, "m must be positive");
    std::uniform_real_distribution<double> intercept(-2.0, 2.0);
    std::uniform_real_distribution<double> slope(-0.8, 0.8);
    std::uniform_real_distribution<double> variance(0.25, 2.0);
    std::gamma_distribution<double> dirichlet(1.0, 1.0);

    std::vector<RegimeParams> regimes(static_cast<std::size_t>(m));
    for (auto& r : regimes) {
        r.b = intercept(rng);
        r.alpha = slope(rng);
        r.sigma2 = variance(rng);
    }
    TransitionMatrix a(m, m);
    for (int i = 0; i < m; ++i) {
        double total = 0.0;
        for (int j = 0; j < m; ++j) {
            a(i, j) = dirichlet(rng) + 0.05;
            total += a(i, j);
        }
        a.row(i) /= total;
    }
    return ModelSpec(std::move(regimes), std::move(a));
}

}  // namespace armr
