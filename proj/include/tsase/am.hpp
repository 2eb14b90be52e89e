#pragma once

#include "tsase/estimation.hpp"
#include "tsase/quartic.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace tsase {

/// Rotate a rectangular state [v_r; v_i] by a common angle.
inline Vec rotate_state(const Vec& v, double alpha, bool reduced, int n_buses, int slack_idx);

/// Unit-circle parameterization of one PMU's attack rotation,
/// gamma = [cos dtheta; sin dtheta].
struct GammaPair {
    Eigen::Vector2d g{1.0, 0.0};

    double angle() const { return std::atan2(g(1), g(0)); }

    void normalize() {
        const double n = g.norm();
        if (n > 0.0) g /= n;
    }
};

/// A_n(v): pairs consecutive rows of H_n v so that
/// Gamma_n(theta) H_n v == A_n(v) * [cos theta; sin theta].
inline Mat build_a_matrix(const Vec& w) {
    Mat a(w.size(), 2);
    for (Eigen::Index p = 0; p + 1 < w.size(); p += 2) {
        a(p, 0) = w(p);
        a(p, 1) = -w(p + 1);
        a(p + 1, 0) = w(p + 1);
        a(p + 1, 1) = w(p);
    }
    return a;
}

inline Mat build_a_matrix(const PmuSite& site, const Vec& v) {
    return build_a_matrix(Vec(site.h * v));
}

inline Vec rotate_state(const Vec& v, double alpha, bool reduced, int n_buses, int slack_idx) {
    const double c = std::cos(alpha), s = std::sin(alpha);
    Vec full = v;
    if (reduced) {
        full.resize(2 * n_buses);
        const int drop = n_buses + slack_idx;
        Eigen::Index j = 0;
        for (Eigen::Index i = 0; i < full.size(); ++i)
            full(i) = (i == drop) ? 0.0 : v(j++);
    }
    Vec out(2 * n_buses);
    for (int i = 0; i < n_buses; ++i) {
        out(i) = c * full(i) - s * full(n_buses + i);
        out(n_buses + i) = s * full(i) + c * full(n_buses + i);
    }
    if (reduced) {
        Vec red(2 * n_buses - 1);
        const int drop = n_buses + slack_idx;
        Eigen::Index j = 0;
        for (Eigen::Index i = 0; i < out.size(); ++i)
            if (i != drop) red(j++) = out(i);
        return red;
    }
    return out;
}

namespace detail {

inline double site_cost(const PmuSite& site, const Vec& z, const Vec& fitted) {
    const Vec r = z - fitted;
    return r.dot(site.sigma_inv * r);
}

} // namespace detail

/// Exact minimizer of the bus-n cost over the unit circle (general
/// positive-definite covariance). The stationarity condition gives
/// gamma(lambda) = (A' S^-1 A + lambda I)^-1 A' S^-1 z with the multiplier
/// solving a quartic; every usable root is tried and the best kept. A
/// bisection fallback covers the guaranteed root when the polynomial
/// filtering comes up empty.
inline GammaPair update_gamma_general(const PmuSite& site, const Vec& z, const Mat& a_n,
                                      double* lambda_out = nullptr) {
    const Mat b = a_n.transpose() * site.sigma_inv * a_n; // 2x2 PSD
    const Eigen::Vector2d c = a_n.transpose() * (site.sigma_inv * z);

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> evd(b);
    const Eigen::Vector2d xi = evd.eigenvalues();
    const Eigen::Matrix2d q = evd.eigenvectors();
    const Eigen::Vector2d u = q.transpose() * c;

    const double scale = std::max({xi.cwiseAbs().maxCoeff(), u.cwiseAbs().maxCoeff(), 1e-300});
    if (u.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, xi.cwiseAbs().maxCoeff()))
        throw numerical_error("degenerate measurement: A' Sigma^-1 z vanishes");

    // g(l) = u1^2/(xi1+l)^2 + u2^2/(xi2+l)^2 = 1 is invariant under the
    // scaling (xi, u, l) -> (xi, u, l)/S; clear denominators of the scaled
    // equation into a monic quartic for conditioning.
    const double s1 = xi(0) / scale, s2 = xi(1) / scale;
    const double U1 = (u(0) / scale) * (u(0) / scale);
    const double U2 = (u(1) / scale) * (u(1) / scale);
    const double p = s1 + s2, m = s1 * s2;
    const double a3 = 2.0 * p;
    const double a2 = p * p + 2.0 * m - (U1 + U2);
    const double a1 = 2.0 * p * m - 2.0 * (U1 * s2 + U2 * s1);
    const double a0 = m * m - (U1 * s2 * s2 + U2 * s1 * s1);

    auto gamma_for = [&](double lambda) -> std::optional<GammaPair> {
        const double tol = 1e-12 * std::max(1.0, std::max(std::abs(xi(0)), std::abs(xi(1))));
        if (std::abs(lambda + xi(0)) <= tol || std::abs(lambda + xi(1)) <= tol)
            return std::nullopt;
        Eigen::Vector2d y(u(0) / (xi(0) + lambda), u(1) / (xi(1) + lambda));
        GammaPair gp;
        gp.g = q * y;
        gp.normalize();
        return gp;
    };

    GammaPair best;
    double best_cost = std::numeric_limits<double>::infinity();
    bool found = false;
    for (const Complex& root : quartic_roots(a3, a2, a1, a0)) {
        if (std::abs(root.imag()) > 1e-8 * (1.0 + std::abs(root.real()))) continue;
        auto gp = gamma_for(root.real() * scale);
        if (!gp) continue;
        const double cost = detail::site_cost(site, z, a_n * gp->g);
        if (cost < best_cost) {
            best_cost = cost;
            best = *gp;
            found = true;
            if (lambda_out) *lambda_out = root.real() * scale;
        }
    }

    if (!found) {
        // guaranteed real root in [-min(xi), inf): g is strictly decreasing
        // there from +inf to 0, so bracket and bisect g(l) = 1
        auto g_of = [&](double l) {
            const double d1 = xi(0) + l, d2 = xi(1) + l;
            return (u(0) * u(0)) / (d1 * d1) + (u(1) * u(1)) / (d2 * d2);
        };
        const double lo_edge = -std::min(xi(0), xi(1));
        double lo = lo_edge + 1e-12 * scale;
        for (int i = 0; i < 600 && g_of(lo) <= 1.0; ++i) lo = lo_edge + 0.5 * (lo - lo_edge);
        double hi = std::max(scale, 2.0 * std::abs(lo));
        for (int i = 0; i < 600 && g_of(hi) > 1.0; ++i) hi *= 2.0;
        if (g_of(lo) <= 1.0 || g_of(hi) > 1.0)
            throw numerical_error("gamma update failed: could not bracket the multiplier");
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (lo + hi);
            (g_of(mid) > 1.0 ? lo : hi) = mid;
        }
        auto gp = gamma_for(0.5 * (lo + hi));
        if (!gp) throw numerical_error("gamma update failed: no usable multiplier");
        best = *gp;
        found = true;
        if (lambda_out) *lambda_out = 0.5 * (lo + hi);
    }
    return best;
}

/// Closed-form gamma update for paired-equal diagonal covariance:
/// the normalized A' Sigma^-1 z (positive sign minimizes the cost).
inline GammaPair update_gamma_diagonal(const PmuSite& site, const Vec& z, const Mat& a_n) {
    Eigen::Vector2d c = a_n.transpose() * (site.sigma_inv * z);
    const double n = c.norm();
    if (n <= 0.0) throw numerical_error("degenerate measurement: A' Sigma^-1 z vanishes");
    GammaPair gp;
    gp.g = c / n;
    return gp;
}

enum class CovarianceMode { Automatic, General, Diagonal };

struct AmConfig {
    double tolerance = 0.01;  ///< relative objective-change stopping criterion
    int max_iter = 200;
    CovarianceMode covariance_mode = CovarianceMode::Automatic;
    double objective_floor = 1e-24; ///< treat objectives below this as converged
    /// The bilinear fit is invariant under rotating the whole state by alpha
    /// while shifting every attack angle by -alpha, so the minimizer is only
    /// determined up to that common rotation. When enabled (and no prior
    /// pins the state), the returned solution is re-gauged so the median
    /// estimated angle is zero, which reads the unattacked majority as
    /// unattacked. Has no effect on the objective.
    bool anchor_gauge = true;
};

struct AmResult {
    Vec v_hat;
    std::vector<int> pmu_buses;            ///< bus ids, model order
    std::vector<double> delta_theta_hat;   ///< radians, per PMU bus
    std::vector<double> objective_trace;   ///< objective after init and each sweep
    int iterations = 0;
    bool converged = false;

    double angle_for_bus(int bus_id) const {
        for (std::size_t i = 0; i < pmu_buses.size(); ++i)
            if (pmu_buses[i] == bus_id) return delta_theta_hat[i];
        throw config_error("no PMU at bus " + std::to_string(bus_id));
    }
};

namespace detail {

struct AmPrior {
    const Vec* v = nullptr;
    const Mat* precision = nullptr;
};

/// Shared alternating-minimization loop. With a prior this is the combined
/// PMU+SCADA variant: the state update gains the regularizer, the gamma
/// updates are untouched.
inline AmResult run_am_impl(const PmuModel& model, const MeasurementSet& z,
                            const AmConfig& cfg, const AmPrior& prior_in) {
    AmPrior prior = prior_in;
    if (prior.precision && !(prior.precision->cwiseAbs().maxCoeff() > 0.0)) prior = {};
    const std::size_t n_sites = model.sites.size();
    std::vector<GammaPair> gammas(n_sites);
    std::vector<const Vec*> zs(n_sites);
    for (std::size_t s = 0; s < n_sites; ++s) zs[s] = &z.z_for_bus(model.sites[s].bus_id);

    bool all_paired = true;
    for (const auto& site : model.sites) all_paired = all_paired && site.paired_diagonal;
    bool use_diagonal;
    switch (cfg.covariance_mode) {
        case CovarianceMode::Diagonal:
            if (!all_paired)
                throw config_error("diagonal gamma update requires paired-equal diagonal "
                                   "covariances");
            use_diagonal = true;
            break;
        case CovarianceMode::General: use_diagonal = false; break;
        case CovarianceMode::Automatic: use_diagonal = all_paired; break;
        default: use_diagonal = all_paired;
    }

    // With paired-equal diagonal covariance the rotations cancel inside
    // G_AM, so the (possibly regularized) normal matrix is factored once and
    // reused every sweep. Without a prior it must be nonsingular on its own;
    // with one, the regularizer may provide the missing observability.
    std::optional<Eigen::LDLT<Mat>> fixed_ldlt;
    Mat g_base;
    if (all_paired) {
        g_base = Mat::Zero(model.state_dim, model.state_dim);
        for (const auto& site : model.sites)
            g_base.noalias() += site.h.transpose() * site.sigma_inv * site.h;
        Mat g = prior.precision ? Mat(g_base + *prior.precision) : g_base;
        fixed_ldlt.emplace(g);
        if (fixed_ldlt->info() != Eigen::Success)
            throw numerical_error("AM state update: gain factorization failed");
        const Vec& d = fixed_ldlt->vectorD();
        if (!(d.maxCoeff() > 0.0) || !(d.minCoeff() > d.maxCoeff() * GainMatrix::kSingularRcond))
            throw numerical_error(prior.precision
                                      ? "AM state update: regularized gain matrix singular"
                                      : "AM state update: gain matrix singular (unobservable)");
    }

    auto state_update = [&]() -> Vec {
        Vec rhs = Vec::Zero(model.state_dim);
        for (std::size_t s = 0; s < n_sites; ++s) {
            const auto& site = model.sites[s];
            const double th = gammas[s].angle();
            // (Gamma H)' Sigma^-1 z = H' Gamma' Sigma^-1 z
            Vec y = site.sigma_inv * *zs[s];
            rhs.noalias() += site.h.transpose() * rotate_pairs(y, -th);
        }
        if (prior.precision) rhs.noalias() += *prior.precision * *prior.v;
        if (fixed_ldlt) return fixed_ldlt->solve(rhs);

        Mat g = Mat::Zero(model.state_dim, model.state_dim);
        for (std::size_t s = 0; s < n_sites; ++s) {
            const auto& site = model.sites[s];
            const double th = gammas[s].angle();
            Mat gh(site.m(), model.state_dim);
            for (Eigen::Index r = 0; r < site.m(); r += 2) {
                const double c = std::cos(th), sn = std::sin(th);
                gh.row(r) = c * site.h.row(r) - sn * site.h.row(r + 1);
                gh.row(r + 1) = sn * site.h.row(r) + c * site.h.row(r + 1);
            }
            g.noalias() += gh.transpose() * site.sigma_inv * gh;
        }
        if (prior.precision) g += *prior.precision;
        Eigen::LDLT<Mat> ldlt(g);
        if (ldlt.info() != Eigen::Success)
            throw numerical_error("AM state update: gain factorization failed");
        const Vec& d = ldlt.vectorD();
        if (!(d.maxCoeff() > 0.0) || !(d.minCoeff() > d.maxCoeff() * GainMatrix::kSingularRcond))
            throw numerical_error("AM state update: gain matrix singular");
        return ldlt.solve(rhs);
    };

    auto objective = [&](const Vec& v) {
        double acc = 0.0;
        for (std::size_t s = 0; s < n_sites; ++s) {
            const auto& site = model.sites[s];
            const Vec fitted = rotate_pairs(site.h * v, gammas[s].angle());
            acc += detail::site_cost(site, *zs[s], fitted);
        }
        if (prior.precision) {
            const Vec d = v - *prior.v;
            acc += d.dot(*prior.precision * d);
        }
        return acc;
    };

    AmResult out;
    for (const auto& site : model.sites) out.pmu_buses.push_back(site.bus_id);

    Vec v = state_update(); // initialization with gamma = [1 0]
    double prev_obj = objective(v);
    out.objective_trace.push_back(prev_obj);

    const double slack = 1e-10;
    for (int iter = 1; iter <= cfg.max_iter; ++iter) {
        // gamma sweep in ascending bus order (model order)
        for (std::size_t s = 0; s < n_sites; ++s) {
            const auto& site = model.sites[s];
            const Mat a_n = build_a_matrix(site, v);
            gammas[s] = use_diagonal ? update_gamma_diagonal(site, *zs[s], a_n)
                                     : update_gamma_general(site, *zs[s], a_n);
        }
        const double after_gamma = objective(v);
        if (after_gamma > prev_obj + slack * (1.0 + std::abs(prev_obj)))
            throw numerical_error("AM objective increased after gamma sweep");

        v = state_update();
        const double cur_obj = objective(v);
        if (cur_obj > after_gamma + slack * (1.0 + std::abs(after_gamma)))
            throw numerical_error("AM objective increased after state update");

        out.objective_trace.push_back(cur_obj);
        out.iterations = iter;
        if (std::abs(cur_obj) <= cfg.objective_floor ||
            std::abs(cur_obj - prev_obj) <= cfg.tolerance * std::abs(cur_obj)) {
            out.converged = true;
            prev_obj = cur_obj;
            break;
        }
        prev_obj = cur_obj;
    }

    out.v_hat = v;
    for (std::size_t s = 0; s < n_sites; ++s) {
        double th = gammas[s].angle();
        if (th <= -kPi) th += 2.0 * kPi;
        out.delta_theta_hat.push_back(th);
    }

    if (cfg.anchor_gauge && !prior.precision && !out.delta_theta_hat.empty()) {
        std::vector<double> sorted = out.delta_theta_hat;
        std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
        const double median = sorted[sorted.size() / 2];
        if (median != 0.0) {
            out.v_hat = rotate_state(out.v_hat, median, model.reduced, model.n_buses,
                                     model.slack_idx);
            for (double& th : out.delta_theta_hat) th = wrap_angle(th - median);
        }
    }
    return out;
}

} // namespace detail

/// State update of the alternating scheme for fixed rotations.
inline Vec am_update_state(const PmuModel& model, const MeasurementSet& z,
                           const std::vector<GammaPair>& gammas) {
    Mat g = Mat::Zero(model.state_dim, model.state_dim);
    Vec rhs = Vec::Zero(model.state_dim);
    for (std::size_t s = 0; s < model.sites.size(); ++s) {
        const auto& site = model.sites[s];
        const double th = gammas[s].angle();
        Mat gh(site.m(), model.state_dim);
        for (Eigen::Index r = 0; r < site.m(); r += 2) {
            const double c = std::cos(th), sn = std::sin(th);
            gh.row(r) = c * site.h.row(r) - sn * site.h.row(r + 1);
            gh.row(r + 1) = sn * site.h.row(r) + c * site.h.row(r + 1);
        }
        g.noalias() += gh.transpose() * site.sigma_inv * gh;
        rhs.noalias() += gh.transpose() * (site.sigma_inv * z.z_for_bus(site.bus_id));
    }
    Eigen::LDLT<Mat> ldlt(g);
    if (ldlt.info() != Eigen::Success)
        throw numerical_error("AM state update: factorization failed");
    const Vec& d = ldlt.vectorD();
    if (!(d.maxCoeff() > 0.0) || !(d.minCoeff() > d.maxCoeff() * GainMatrix::kSingularRcond))
        throw numerical_error("AM state update: gain matrix singular");
    return ldlt.solve(rhs);
}

/// Joint state estimation and attack-angle reconstruction by alternating
/// minimization, initialized at gamma = [1 0] for every PMU.
inline AmResult run_am(const PmuModel& model, const MeasurementSet& z, const AmConfig& cfg = {}) {
    return detail::run_am_impl(model, z, cfg, {});
}

/// Combined PMU+SCADA variant: the state update is regularized by the
/// SCADA prior (v_s, Sigma_s^-1); gamma updates are unchanged.
inline AmResult run_am_hybrid(const PmuModel& model, const MeasurementSet& z, const Vec& prior_v,
                              const Mat& prior_precision, const AmConfig& cfg = {}) {
    detail::AmPrior prior{&prior_v, &prior_precision};
    return detail::run_am_impl(model, z, cfg, prior);
}

} // namespace tsase
