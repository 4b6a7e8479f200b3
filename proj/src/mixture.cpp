#include "armr/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "armr/error.hpp"

namespace armr {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2 pi)
constexpr double kDegenerateRelative = 1e-14;

struct SegmentMoments {
    int count = 0;
    Eigen::Matrix2d gram = Eigen::Matrix2d::Zero();  // W^t W
    Eigen::Vector2d cross = Eigen::Vector2d::Zero();  // W^t Y
    double yy = 0.0;                                  // Y^t Y
};

std::vector<SegmentMoments> moments(const Trajectory& traj, std::span<const int> path, int m) {
    std::vector<SegmentMoments> out(static_cast<std::size_t>(m));
    for (int k = 1; k <= traj.n(); ++k) {
        auto& s = out[static_cast<std::size_t>(path[static_cast<std::size_t>(k - 1)])];
        const double lag = traj.lagged(k);
        const double value = traj.y[static_cast<std::size_t>(k - 1)];
        ++s.count;
        s.gram(0, 0) += 1.0;
        s.gram(0, 1) += lag;
        s.gram(1, 1) += lag * lag;
        s.cross(0) += value;
        s.cross(1) += lag * value;
        s.yy += value * value;
    }
    for (auto& s : out) s.gram(1, 0) = s.gram(0, 1);
    return out;
}

void check_path(const Trajectory& traj, std::span<const int> path, int m) {
    if (m < 1) throw Error(ErrorKind::Domain, "m must be positive");
    if (static_cast<int>(path.size()) != traj.n()) throw Error(ErrorKind::Structural, "path length differs from n");
    for (int x : path) {
        if (x < 0 || x >= m) throw Error(ErrorKind::Domain, "state label out of range");
    }
}

// Y^t P Y / Y^t B Y for one segment, or nullopt when B is singular or n_i < 3.
std::optional<double> segment_ratio(const SegmentMoments& s, double tau2) {
    if (s.count < 3) return std::nullopt;
    const Eigen::Vector2d eig =
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(s.gram, Eigen::EigenvaluesOnly).eigenvalues();
    if (!(eig(0) > 0.0) || eig(1) / eig(0) >= 1e12) return std::nullopt;
    const Eigen::Matrix2d ridge = s.gram + Eigen::Matrix2d::Identity() / tau2;
    const double ypy = s.yy - s.cross.dot(ridge.ldlt().solve(s.cross));
    const double yby = s.yy - s.cross.dot(s.gram.ldlt().solve(s.cross));
    if (!(yby > 1e-12 * s.yy)) return std::nullopt;
    return ypy / yby;
}

}  // namespace

ProjectionSet projection_set(const SegmentStats& stats, double tau2) {
    if (!(tau2 > 0.0)) throw Error(ErrorKind::Domain, "tau2 must be positive");
    ProjectionSet set;
    for (const auto& s : stats.states) {
        ProjectionSet::State out;
        const Eigen::Matrix2d gram = s.design.transpose() * s.design;
        out.ridge_inverse = (gram + Eigen::Matrix2d::Identity() / tau2).inverse();
        const Eigen::Index n = s.design.rows();
        const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
        out.ridge_residual = identity - s.design * out.ridge_inverse * s.design.transpose();
        if (std::abs(gram.determinant()) > 1e-12 * std::max(1.0, gram.squaredNorm())) {
            out.ols_residual = identity - s.design * gram.inverse() * s.design.transpose();
        }
        set.states.push_back(std::move(out));
    }
    return set;
}

double kt_path_mixture_log(std::span<const int> path, int m) {
    if (m < 1) throw Error(ErrorKind::Domain, "m must be positive");
    Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(m, m);
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
        if (path[k] < 0 || path[k] >= m || path[k + 1] < 0 || path[k + 1] >= m) {
            throw Error(ErrorKind::Domain, "state label out of range");
        }
        ++counts(path[k], path[k + 1]);
    }
    const double half_m = 0.5 * m;
    const double lgamma_half = std::lgamma(0.5);
    double total = -std::log(static_cast<double>(m));
    for (int i = 0; i < m; ++i) {
        const int row = counts.row(i).sum();
        total += std::lgamma(half_m) - std::lgamma(row + half_m);
        for (int j = 0; j < m; ++j) total += std::lgamma(counts(i, j) + 0.5) - lgamma_half;
    }
    return total;
}

double conditional_mixture_log(const Trajectory& traj, std::span<const int> path, int m, const PriorConfig& prior) {
    check_path(traj, path, m);
    if (!(prior.tau2 > 0.0)) throw Error(ErrorKind::Domain, "tau2 must be positive");
    double total = 0.0;
    for (const auto& s : moments(traj, path, m)) {
        if (s.count == 0) continue;
        const Eigen::Matrix2d ridge = s.gram + Eigen::Matrix2d::Identity() / prior.tau2;
        const double quad = s.yy - s.cross.dot(ridge.ldlt().solve(s.cross));
        if (!(quad > kDegenerateRelative * s.yy) || !(quad > 0.0)) {
            throw Error(ErrorKind::Degenerate, "Y^t P Y is not positive");
        }
        const double half_n = 0.5 * s.count;
        total += -0.5 * std::log(ridge.determinant()) - half_n * kLogTwoPi - std::log(prior.tau2) -
                 half_n * std::log(quad) + half_n * std::numbers::ln2 + std::lgamma(half_n);
    }
    return total;
}

OracleResult mixture_numeric_oracle(const Trajectory& traj, std::span<const int> path, int m, const PriorConfig& prior,
                                    const OracleOptions& options) {
    check_path(traj, path, m);
    if (traj.n() > 6 || m > 2) throw Error(ErrorKind::SizeGuard, "quadrature oracle is limited to n <= 6, m <= 2");
    if (!(prior.tau2 > 0.0) || prior.u0 < 0.0 || prior.v0 < 0.0) throw Error(ErrorKind::Domain, "invalid prior");
    if (!(options.sigma2_min > 0.0) || !(options.sigma2_max > options.sigma2_min)) {
        throw Error(ErrorKind::Domain, "invalid variance range");
    }
    using Rule = boost::math::quadrature::gauss_kronrod<double, 31>;
    constexpr double kInf = std::numeric_limits<double>::infinity();
    constexpr unsigned kDepth = 15;
    const double tau2 = prior.tau2;

    // The (b, alpha) integrand is Gaussian at fixed s. After standardizing, mass beyond 12 sd is below 1e-32,
    // and a fixed panel rule keeps the inner value a smooth function of s for the adaptive outer rule.
    constexpr double kWindow = 12.0;
    constexpr int kPanels = 8;
    auto panel_integrate = [&](const auto& f, double* err) {
        double total = 0.0;
        double error = 0.0;
        for (int p = 0; p < kPanels; ++p) {
            const double lo = -kWindow + 2.0 * kWindow * p / kPanels;
            const double hi = lo + 2.0 * kWindow / kPanels;
            double e = 0.0;
            total += Rule::integrate(f, lo, hi, 0, 0.0, &e);
            error += e;
        }
        *err = error;
        return total;
    };

    OracleResult result;
    double abs_error_sum = 0.0;
    for (int state = 0; state < m; ++state) {
        std::vector<double> lag;
        std::vector<double> obs;
        for (int k = 1; k <= traj.n(); ++k) {
            if (path[static_cast<std::size_t>(k - 1)] != state) continue;
            lag.push_back(traj.lagged(k));
            obs.push_back(traj.y[static_cast<std::size_t>(k - 1)]);
        }
        if (obs.empty()) continue;
        const double count = static_cast<double>(obs.size());

        // Log of the full integrand in (b, alpha, s), evaluated from the raw data.
        auto log_integrand = [&](double b, double alpha, double s) {
            double rss = 0.0;
            for (std::size_t r = 0; r < obs.size(); ++r) {
                const double e = obs[r] - b - alpha * lag[r];
                rss += e * e;
            }
            return -0.5 * count * std::log(2.0 * std::numbers::pi * s) - rss / (2.0 * s) -
                   std::log(2.0 * std::numbers::pi * s * tau2) - (b * b + alpha * alpha) / (2.0 * s * tau2) -
                   (0.5 * prior.v0 + 1.0) * std::log(s) - prior.u0 / (2.0 * s);
        };

        // Location/scale hints for the affine substitutions; they do not change the integral.
        double s0 = count + 1.0 / tau2;
        double s1 = 0.0;
        double s2 = 1.0 / tau2;
        double sy = 0.0;
        double sxy = 0.0;
        for (std::size_t r = 0; r < obs.size(); ++r) {
            s1 += lag[r];
            s2 += lag[r] * lag[r];
            sy += obs[r];
            sxy += lag[r] * obs[r];
        }
        const double schur = s0 - s1 * s1 / s2;
        const double b_mode = (sy - s1 * sxy / s2) / schur;
        auto alpha_mode = [&](double b) { return (sxy - b * s1) / s2; };

        // log of the (b, alpha) integral at fixed s.
        auto log_theta_integral = [&](double s, double* err) {
            const double w_b = std::sqrt(s / schur);
            const double w_a = std::sqrt(s / s2);
            const double ref = log_integrand(b_mode, alpha_mode(b_mode), s);
            double inner_err_max = 0.0;
            auto over_b = [&](double zb) {
                const double b = b_mode + w_b * zb;
                const double a_mode = alpha_mode(b);
                double e = 0.0;
                const double v = panel_integrate(
                    [&](double za) { return std::exp(log_integrand(b, a_mode + w_a * za, s) - ref); }, &e);
                inner_err_max = std::max(inner_err_max, v > 0.0 ? e / v : 0.0);
                return w_a * v;
            };
            double e = 0.0;
            const double v = panel_integrate(over_b, &e);
            if (err) *err = (v > 0.0 ? e / v : 1.0) + inner_err_max;
            return ref + std::log(w_b * v);
        };

        // Laplace approximation of the outer integrand locates the peak in t = log s.
        const double t_lo = std::log(options.sigma2_min);
        const double t_hi = std::log(options.sigma2_max);
        auto approx = [&](double t) {
            const double s = std::exp(t);
            return log_integrand(b_mode, alpha_mode(b_mode), s) +
                   std::log(2.0 * std::numbers::pi * std::sqrt(s / schur) * std::sqrt(s / s2)) + t;
        };
        double t_peak = t_lo;
        double log_ref = -kInf;
        constexpr int kScan = 400;
        for (int g = 0; g <= kScan; ++g) {
            const double t = t_lo + (t_hi - t_lo) * g / kScan;
            if (const double v = approx(t); v > log_ref) {
                log_ref = v;
                t_peak = t;
            }
        }

        double outer_inner_err = 0.0;
        auto outer = [&](double t) {
            double e = 0.0;
            const double v = std::exp(log_theta_integral(std::exp(t), &e) + t - log_ref);
            // inner relative error, weighted by this point's share of the peak
            outer_inner_err = std::max(outer_inner_err, e * std::min(v, 1.0));
            return v;
        };
        std::vector<double> cuts{t_lo};
        for (double c : {t_peak - 4.0, t_peak - 1.0, t_peak + 1.0, t_peak + 4.0}) {
            if (c > cuts.back() && c < t_hi) cuts.push_back(c);
        }
        cuts.push_back(t_hi);
        double value = 0.0;
        double error = 0.0;
        for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
            double e = 0.0;
            value += Rule::integrate(outer, cuts[p], cuts[p + 1], kDepth, options.tolerance, &e);
            error += e;
        }
        if (!(value > 0.0) || !std::isfinite(value)) {
            throw Error(ErrorKind::OracleFailure, "quadrature oracle produced a non-positive value");
        }
        result.log_value += log_ref + std::log(value);
        abs_error_sum += error / value + outer_inner_err;
    }
    result.relative_error = abs_error_sum;
    if (result.relative_error > 1e-6) {
        std::ostringstream msg;
        msg << "quadrature oracle did not converge (relative error estimate " << result.relative_error << ")";
        throw Error(ErrorKind::OracleFailure, msg.str());
    }
    return result;
}

double mixture_bruteforce_log(const Trajectory& traj, int m, const PriorConfig& prior) {
    std::vector<double> terms;
    for_each_path(m, traj.n(), [&](std::span<const int> path) {
        terms.push_back(conditional_mixture_log(traj, path, m, prior) + kt_path_mixture_log(path, m));
    });
    return log_sum_exp(terms);
}

double kt_constant(int n, int m) {
    if (n < 1 || m < 1) throw Error(ErrorKind::Domain, "kt_constant needs n, m >= 1");
    const double md = m;
    const double nd = n;
    const double inner = std::lgamma(0.5 * md) - std::lgamma(0.5) - md * (md - 1.0) / (4.0 * nd) + 1.0 / (12.0 * nd);
    return std::max(0.0, std::log(md) - md * inner);
}

BoundTerms bound_terms(int n, int m, const PriorConfig& prior, std::span<const double> lambda_sigma,
                       double ratio_max) {
    if (n < 4) throw Error(ErrorKind::OutOfRange, "bound terms are defined for n >= 4");
    if (m < 1) throw Error(ErrorKind::Domain, "m must be positive");
    if (static_cast<int>(lambda_sigma.size()) != m) throw Error(ErrorKind::Structural, "need one lambda*sigma per state");
    if (!(ratio_max >= 1.0)) throw Error(ErrorKind::Domain, "ratio_max must be >= 1");
    const double nd = n;
    const double md = m;

    BoundTerms t;
    t.leading = md * (md + 1.0) / 2.0 * std::log(nd);
    t.c_m = kt_constant(n, m);
    t.d = nd / 2.0 + 0.5 * std::log(nd / 2.0);
    double sum_sq = 0.0;
    for (double v : lambda_sigma) sum_sq += v * v;
    const double tau4 = prior.tau2 * prior.tau2;
    t.e_m = std::max(0.0, md / 2.0 * std::log(1.0 / (nd * nd) + tau4 / md * sum_sq) - md * kLogTwoPi / 2.0);
    t.ratio_term = nd * md / 2.0 * std::log(ratio_max);
    t.rhs_total = t.leading + t.c_m + t.d + t.e_m + t.ratio_term;
    return t;
}

double ratio_max_over_paths(const Trajectory& traj, int m, double tau2, int* excluded) {
    double best = 1.0;
    int skipped = 0;
    for_each_path(m, traj.n(), [&](std::span<const int> path) {
        double path_max = -1.0;
        bool degenerate = false;
        for (const auto& s : moments(traj, path, m)) {
            if (s.count == 0) continue;
            const auto ratio = segment_ratio(s, tau2);
            if (!ratio) {
                degenerate = true;
                break;
            }
            path_max = std::max(path_max, *ratio);
        }
        if (degenerate) {
            ++skipped;
            return;
        }
        best = std::max(best, path_max);
    });
    if (excluded) *excluded = skipped;
    return best;
}

BoundReport verify_bound(const ModelSpec& spec, const Trajectory& traj, const PriorConfig& prior) {
    const int m = spec.m();
    const int n = traj.n();
    if (n < 4) throw Error(ErrorKind::OutOfRange, "bound verification needs n >= 4");
    BoundReport report;
    report.lhs = loglik_forward(spec, traj) - mixture_bruteforce_log(traj, m, prior);
    report.ratio_max = ratio_max_over_paths(traj, m, prior.tau2, &report.excluded_paths);

    std::vector<double> lambda_sigma(static_cast<std::size_t>(m));
    const auto& lambda = spec.stationary();
    for (int i = 0; i < m; ++i) lambda_sigma[static_cast<std::size_t>(i)] = lambda(i) * std::sqrt(spec.regime(i).sigma2);
    report.terms = bound_terms(n, m, prior, lambda_sigma, report.ratio_max);
    report.slack = report.terms.rhs_total - report.lhs;
    return report;
}

TransitionMatrix empirical_transition_matrix(std::span<const int> path, int m) {
    TransitionMatrix a = TransitionMatrix::Zero(m, m);
    for (std::size_t k = 0; k + 1 < path.size(); ++k) a(path[k], path[k + 1]) += 1.0;
    for (int i = 0; i < m; ++i) {
        const double row = a.row(i).sum();
        if (row > 0.0) {
            a.row(i) /= row;
        } else {
            a.row(i).setConstant(1.0 / m);
        }
    }
    return a;
}

double kt_bound_check(std::span<const int> path, int m, const TransitionMatrix& a_mle) {
    if (path.empty()) throw Error(ErrorKind::Domain, "path must be non-empty");
    if (a_mle.rows() != m || a_mle.cols() != m) throw Error(ErrorKind::Structural, "transition matrix is not m x m");
    double log_pa = 0.0;
    for (std::size_t k = 0; k + 1 < path.size(); ++k) log_pa += std::log(a_mle(path[k], path[k + 1]));
    const int n = static_cast<int>(path.size());
    const double rhs = m * (m - 1) / 2.0 * std::log(static_cast<double>(n)) + kt_constant(n, m);
    return rhs - (log_pa - kt_path_mixture_log(path, m));
}

}  // namespace armr
