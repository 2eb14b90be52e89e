#pragma once

#include "tsase/estimation.hpp"

#include <vector>

namespace tsase {

/// Identity of one scalar channel in the stacked PMU system.
struct StackedChannel {
    int bus_id = 0;
    int channel = 0; ///< row within the site's measurement vector
};

struct LnrtReport {
    Vec v_hat;
    struct Removal {
        StackedChannel channel;
        double normalized_residual = 0.0;
    };
    std::vector<Removal> removed;
    int rounds = 0;
    double final_max_normalized_residual = 0.0;
};

namespace detail {

struct StackedSystem {
    Mat h;
    Vec sigma_diag;   ///< used when every site is diagonal
    Mat sigma;        ///< dense block-diagonal fallback, built only if needed
    bool diagonal = true;
    Vec z;
    std::vector<StackedChannel> channels;
};

inline StackedSystem stack_system(const PmuModel& model, const MeasurementSet& z) {
    Eigen::Index rows = 0;
    StackedSystem sys;
    for (const auto& site : model.sites) {
        rows += site.m();
        sys.diagonal = sys.diagonal && site.diagonal;
    }
    sys.h = Mat::Zero(rows, model.state_dim);
    sys.sigma_diag.resize(rows);
    if (!sys.diagonal) sys.sigma = Mat::Zero(rows, rows);
    sys.z.resize(rows);
    Eigen::Index at = 0;
    for (const auto& site : model.sites) {
        const Vec& zn = z.z_for_bus(site.bus_id);
        sys.h.block(at, 0, site.m(), model.state_dim) = site.h;
        sys.sigma_diag.segment(at, site.m()) = site.sigma.diagonal();
        if (!sys.diagonal) sys.sigma.block(at, at, site.m(), site.m()) = site.sigma;
        sys.z.segment(at, site.m()) = zn;
        for (Eigen::Index r = 0; r < site.m(); ++r)
            sys.channels.push_back({site.bus_id, static_cast<int>(r)});
        at += site.m();
    }
    return sys;
}

struct WlsPass {
    Vec v_hat;
    Vec normalized;        ///< residual / sqrt(Omega_ii); 0 where critical
    Vec omega;             ///< residual variance diagonal (full-length layout)
    Vec sigma_diag;        ///< matching channel variances
    std::vector<bool> critical;
    double rcond = 0.0;

    double omega_ratio(Eigen::Index i) const {
        return sigma_diag(i) > 0.0 ? omega(i) / sigma_diag(i) : 0.0;
    }
};

/// One weighted-least-squares pass over the active channels, with the
/// residual covariance diagonal Omega_ii = (Sigma - H G^-1 H')_ii. Channels
/// with Omega_ii at numerical zero are critical (their residual is forced
/// to zero by observability).
inline WlsPass wls_residuals(const StackedSystem& sys, const std::vector<bool>& active) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < active.size(); ++i)
        if (active[i]) rows.push_back(static_cast<Eigen::Index>(i));
    const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index dim = sys.h.cols();
    if (m < dim) throw numerical_error("LNRT: active channel count below state dimension");

    Mat h(m, dim);
    Vec z(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        h.row(i) = sys.h.row(rows[i]);
        z(i) = sys.z(rows[i]);
    }

    Mat sig_inv_h(m, dim);
    Vec sig_inv_z(m);
    Vec sig_ii(m);
    if (sys.diagonal) {
        for (Eigen::Index i = 0; i < m; ++i) {
            const double s2 = sys.sigma_diag(rows[i]);
            sig_inv_h.row(i) = h.row(i) / s2;
            sig_inv_z(i) = z(i) / s2;
            sig_ii(i) = s2;
        }
    } else {
        Mat sig(m, m);
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < m; ++j) sig(i, j) = sys.sigma(rows[i], rows[j]);
        Eigen::LDLT<Mat> sig_ldlt(sig);
        sig_inv_h = sig_ldlt.solve(h);
        sig_inv_z = sig_ldlt.solve(z);
        sig_ii = sig.diagonal();
    }

    Mat g = h.transpose() * sig_inv_h;
    Eigen::LDLT<Mat> g_ldlt(g);
    if (g_ldlt.info() != Eigen::Success)
        throw numerical_error("LNRT: gain factorization failed");
    const Vec& d = g_ldlt.vectorD();
    if (!(d.maxCoeff() > 0.0) || !(d.minCoeff() > d.maxCoeff() * GainMatrix::kSingularRcond))
        throw numerical_error("LNRT: stacked system unobservable");

    WlsPass out;
    out.rcond = g_ldlt.rcond();
    Vec v = g_ldlt.solve(h.transpose() * sig_inv_z);
    out.v_hat = v;
    Vec r = z - h * v;
    // Omega = Sigma - H G^-1 H'
    Mat ginv_ht = g_ldlt.solve(h.transpose());
    out.normalized = Vec::Zero(sys.z.size());
    out.omega = Vec::Zero(sys.z.size());
    out.sigma_diag = Vec::Zero(sys.z.size());
    out.critical.assign(sys.channels.size(), false);
    for (Eigen::Index i = 0; i < m; ++i) {
        double omega_ii = sig_ii(i) - h.row(i).dot(ginv_ht.col(i));
        const std::size_t full_idx = static_cast<std::size_t>(rows[i]);
        out.omega(rows[i]) = omega_ii;
        out.sigma_diag(rows[i]) = sig_ii(i);
        if (omega_ii <= 1e-14) {
            out.critical[full_idx] = true;
            continue;
        }
        out.normalized(rows[i]) = r(i) / std::sqrt(omega_ii);
    }
    return out;
}

} // namespace detail

/// One-shot normalized residuals of the full stacked system. Critical
/// channels (Omega_ii at zero) are reported as zero with the flag set.
inline std::pair<Vec, std::vector<bool>> normalized_residuals(const PmuModel& model,
                                                              const MeasurementSet& z) {
    detail::StackedSystem sys = detail::stack_system(model, z);
    std::vector<bool> active(sys.channels.size(), true);
    detail::WlsPass pass = detail::wls_residuals(sys, active);
    return {pass.normalized, pass.critical};
}

/// Largest-normalized-residual test: repeatedly remove the worst channel
/// above the threshold, provided removal keeps the system observable,
/// until everything in excess is gone or only protected channels remain.
inline LnrtReport run_lnrt(const PmuModel& model, const MeasurementSet& z,
                           double threshold = 3.0) {
    detail::StackedSystem sys = detail::stack_system(model, z);
    std::vector<bool> active(sys.channels.size(), true);

    LnrtReport report;
    while (true) {
        detail::WlsPass pass = detail::wls_residuals(sys, active);
        ++report.rounds;
        report.v_hat = pass.v_hat;

        // candidates above threshold, worst first
        std::vector<std::pair<double, std::size_t>> offenders;
        for (std::size_t i = 0; i < active.size(); ++i) {
            if (!active[i] || pass.critical[i]) continue;
            const double mag = std::abs(pass.normalized(static_cast<Eigen::Index>(i)));
            if (mag > threshold) offenders.push_back({mag, i});
        }
        report.final_max_normalized_residual = 0.0;
        for (std::size_t i = 0; i < active.size(); ++i)
            if (active[i])
                report.final_max_normalized_residual =
                    std::max(report.final_max_normalized_residual,
                             std::abs(pass.normalized(static_cast<Eigen::Index>(i))));
        if (offenders.empty()) break;
        std::sort(offenders.rbegin(), offenders.rend());

        // with diagonal noise, removal of channel i keeps the gain matrix
        // nonsingular exactly when Omega_ii > 0 (matrix determinant lemma),
        // so a comfortably positive Omega_ii removes without a rank probe
        bool diagonal = true;
        for (const auto& site : model.sites) diagonal = diagonal && site.diagonal;

        bool removed_one = false;
        for (auto [mag, idx] : offenders) {
            const Eigen::Index i = static_cast<Eigen::Index>(idx);
            if (diagonal && pass.omega_ratio(i) > 1e-8) {
                active[idx] = false;
                report.removed.push_back({sys.channels[idx], pass.normalized(i)});
                removed_one = true;
                break;
            }
            // tentative removal must preserve observability
            active[idx] = false;
            bool ok = true;
            try {
                detail::wls_residuals(sys, active);
            } catch (const numerical_error&) {
                ok = false;
            }
            if (ok) {
                report.removed.push_back({sys.channels[idx], pass.normalized(i)});
                removed_one = true;
                break;
            }
            active[idx] = true;
        }
        if (!removed_one) break; // only protected channels exceed the threshold
    }
    return report;
}

} // namespace tsase
