#pragma once

#include "tsase/pmu.hpp"
#include "tsase/random.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace tsase {

enum class ScadaKind { VMag, PFlowFrom, QFlowFrom, PFlowTo, QFlowTo };

inline std::string to_string(ScadaKind k) {
    switch (k) {
        case ScadaKind::VMag: return "v_mag";
        case ScadaKind::PFlowFrom: return "p_flow_from";
        case ScadaKind::QFlowFrom: return "q_flow_from";
        case ScadaKind::PFlowTo: return "p_flow_to";
        case ScadaKind::QFlowTo: return "q_flow_to";
    }
    return "?";
}

inline ScadaKind scada_kind_from(const std::string& s) {
    if (s == "v_mag") return ScadaKind::VMag;
    if (s == "p_flow_from") return ScadaKind::PFlowFrom;
    if (s == "q_flow_from") return ScadaKind::QFlowFrom;
    if (s == "p_flow_to") return ScadaKind::PFlowTo;
    if (s == "q_flow_to") return ScadaKind::QFlowTo;
    throw io_error("unknown SCADA measurement kind '" + s + "'");
}

/// One SCADA channel: a bus voltage magnitude or one branch-flow component.
/// `index` is a bus index for VMag and an admittance branch row otherwise.
struct ScadaChannel {
    ScadaKind kind = ScadaKind::VMag;
    int index = 0;
    double sigma = 0.01;
    double value = 0.0;
};

struct ScadaMeasurementSet {
    std::vector<ScadaChannel> channels;

    std::size_t size() const { return channels.size(); }
    double redundancy_ratio(int n_buses) const {
        return static_cast<double>(channels.size()) / (2.0 * n_buses - 1.0);
    }
};

struct ScadaNoise {
    double sigma_vmag = 0.01;
    double sigma_flow = 0.02;
};

namespace detail {

struct ScadaEval {
    Vec h;
    Mat jac;
};

/// h(v) and its analytic Jacobian with respect to the reduced state
/// (imaginary part of the slack bus removed). Rectangular coordinates
/// throughout; flows come from S = V_metered * conj(I_branch).
inline ScadaEval scada_h_jacobian(const NetworkCase& nc, const AdmittanceModel& adm,
                                  const ScadaMeasurementSet& meas, const Vec& v_reduced,
                                  bool with_jacobian = true) {
    const int nb = static_cast<int>(nc.n_buses());
    const int slack = nc.slack_index();
    const int drop = nb + slack;
    const int dim = 2 * nb - 1;
    if (v_reduced.size() != dim) throw config_error("reduced state has wrong length");

    Vec full(2 * nb);
    {
        Eigen::Index j = 0;
        for (Eigen::Index i = 0; i < full.size(); ++i)
            full(i) = (i == drop) ? 0.0 : v_reduced(j++);
    }
    CVec vc = complex_voltage(full);

    ScadaEval out;
    out.h.resize(static_cast<Eigen::Index>(meas.size()));
    if (with_jacobian) out.jac = Mat::Zero(static_cast<Eigen::Index>(meas.size()), dim);

    auto col = [&](int full_col) -> int {
        if (full_col == drop) return -1;
        return full_col < drop ? full_col : full_col - 1;
    };
    auto add = [&](Eigen::Index row, int full_col, double val) {
        const int c = col(full_col);
        if (c >= 0) out.jac(row, c) += val;
    };

    for (std::size_t k = 0; k < meas.size(); ++k) {
        const auto& ch = meas.channels[k];
        const Eigen::Index row = static_cast<Eigen::Index>(k);
        if (ch.kind == ScadaKind::VMag) {
            const int n = ch.index;
            const double mag = std::abs(vc(n));
            if (mag <= 1e-12)
                throw numerical_error("voltage magnitude is zero: non-differentiable point");
            out.h(row) = mag;
            if (with_jacobian) {
                add(row, n, vc(n).real() / mag);
                add(row, nb + n, vc(n).imag() / mag);
            }
            continue;
        }
        const bool from_side =
            ch.kind == ScadaKind::PFlowFrom || ch.kind == ScadaKind::QFlowFrom;
        const bool active =
            ch.kind == ScadaKind::PFlowFrom || ch.kind == ScadaKind::PFlowTo;
        const auto& br = adm.rows[ch.index];
        const int metered = from_side ? br.from_idx : br.to_idx;
        const CVec y_row = from_side ? adm.yfrom.row(ch.index).transpose()
                                     : adm.yto.row(ch.index).transpose();
        const Complex current = (y_row.transpose() * vc).value();
        const Complex s = vc(metered) * std::conj(current);
        out.h(row) = active ? s.real() : s.imag();
        if (!with_jacobian) continue;

        // S = V_m conj(I); dS/dx = dV_m/dx conj(I) + V_m conj(dI/dx)
        for (int side = 0; side < 2; ++side) {
            const int bus = side == 0 ? br.from_idx : br.to_idx;
            const Complex c = y_row(bus);
            if (c == Complex(0.0, 0.0)) continue;
            // dI/dV_{bus,r} = c ; dI/dV_{bus,i} = j c
            Complex ds_dr = vc(metered) * std::conj(c);
            Complex ds_di = vc(metered) * std::conj(Complex(0.0, 1.0) * c);
            if (bus == metered) {
                ds_dr += std::conj(current);
                ds_di += Complex(0.0, 1.0) * std::conj(current);
            }
            add(row, bus, active ? ds_dr.real() : ds_dr.imag());
            add(row, nb + bus, active ? ds_di.real() : ds_di.imag());
        }
    }
    return out;
}

} // namespace detail

/// Seeded per-kind stratified sample of the full channel set (all bus
/// voltage magnitudes, all four flow components per in-service branch).
inline ScadaMeasurementSet select_channels(const NetworkCase& nc, const AdmittanceModel& adm,
                                           double fraction, std::uint64_t seed,
                                           const ScadaNoise& noise = {}) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw config_error("SCADA channel fraction must be in (0, 1]");
    Rng rng(seed);
    ScadaMeasurementSet out;
    const std::size_t nb = nc.n_buses();
    const std::size_t nl = adm.n_lines();

    auto take = [&](std::size_t n) {
        const std::size_t k =
            std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * n)));
        return rng.sample_without_replacement(n, std::min(k, n));
    };
    for (std::size_t i : take(nb))
        out.channels.push_back({ScadaKind::VMag, static_cast<int>(i), noise.sigma_vmag, 0.0});
    for (ScadaKind kind : {ScadaKind::PFlowFrom, ScadaKind::QFlowFrom, ScadaKind::PFlowTo,
                           ScadaKind::QFlowTo})
        for (std::size_t i : take(nl))
            out.channels.push_back({kind, static_cast<int>(i), noise.sigma_flow, 0.0});

    // observability probe at the flat state; a rank-deficient selection is
    // useless and the caller should reseed
    {
        const int dim = 2 * static_cast<int>(nb) - 1;
        if (static_cast<int>(out.channels.size()) < dim)
            throw numerical_error("SCADA selection smaller than the state dimension; reseed");
        Vec flat = Vec::Zero(dim);
        flat.head(static_cast<Eigen::Index>(nb)).setOnes();
        Mat jac = detail::scada_h_jacobian(nc, adm, out, flat, true).jac;
        Mat normal = jac.transpose() * jac;
        Eigen::LDLT<Mat> ldlt(normal);
        const Vec& d = ldlt.vectorD();
        if (ldlt.info() != Eigen::Success || !(d.maxCoeff() > 0.0) ||
            !(d.minCoeff() > d.maxCoeff() * 1e-12))
            throw numerical_error("SCADA channel selection is unobservable; choose a "
                                  "different selection seed");
    }
    return out;
}

/// Evaluate the SCADA measurement function at a reduced state.
inline Vec scada_h(const NetworkCase& nc, const AdmittanceModel& adm,
                   const ScadaMeasurementSet& meas, const Vec& v_reduced) {
    return detail::scada_h_jacobian(nc, adm, meas, v_reduced, false).h;
}

inline Mat scada_jacobian(const NetworkCase& nc, const AdmittanceModel& adm,
                          const ScadaMeasurementSet& meas, const Vec& v_reduced) {
    return detail::scada_h_jacobian(nc, adm, meas, v_reduced, true).jac;
}

/// Fill channel values with h(v_true) + noise (seeded).
inline ScadaMeasurementSet simulate_scada(const NetworkCase& nc, const AdmittanceModel& adm,
                                          ScadaMeasurementSet meas, const Vec& v_reduced,
                                          std::uint64_t seed, double noise_scale = 1.0) {
    Vec h = scada_h(nc, adm, meas, v_reduced);
    Rng rng(seed);
    for (std::size_t k = 0; k < meas.size(); ++k)
        meas.channels[k].value =
            h(static_cast<Eigen::Index>(k)) + noise_scale * meas.channels[k].sigma * rng.normal();
    return meas;
}

struct ScadaPrior {
    Vec v_s_hat;       ///< reduced state estimate, length 2 N_b - 1
    Mat sigma_s;       ///< covariance of the estimate
    Mat sigma_s_inv;   ///< its inverse (the precision used as regularizer)
    bool converged = false;
    double final_mismatch = 0.0;
    int iterations = 0;
};

struct ScadaOptions {
    double step_tol = 1e-8; ///< infinity-norm of the Gauss-Newton step
    int max_iter = 50;
};

/// Gauss-Newton nonlinear least squares from a flat start. The prior
/// covariance is (J' Sigma_e^-1 J)^-1 at the final iterate.
inline ScadaPrior estimate_scada(const NetworkCase& nc, const AdmittanceModel& adm,
                                 const ScadaMeasurementSet& meas,
                                 const ScadaOptions& opts = {}) {
    const int nb = static_cast<int>(nc.n_buses());
    const int dim = 2 * nb - 1;
    if (static_cast<int>(meas.size()) < dim)
        throw numerical_error("SCADA measurement set is smaller than the state dimension");

    Vec z(static_cast<Eigen::Index>(meas.size()));
    Vec w(static_cast<Eigen::Index>(meas.size()));
    for (std::size_t k = 0; k < meas.size(); ++k) {
        z(static_cast<Eigen::Index>(k)) = meas.channels[k].value;
        if (!(meas.channels[k].sigma > 0.0))
            throw config_error("SCADA channel sigma must be positive");
        w(static_cast<Eigen::Index>(k)) = 1.0 / (meas.channels[k].sigma * meas.channels[k].sigma);
    }

    Vec v = Vec::Zero(dim);
    v.head(nb).setOnes(); // flat start

    ScadaPrior out;
    auto cost_at = [&](const Vec& x) {
        Vec r = z - detail::scada_h_jacobian(nc, adm, meas, x, false).h;
        return (r.array().square() * w.array()).sum();
    };
    double cost = cost_at(v);
    int growing = 0;
    for (int iter = 1; iter <= opts.max_iter; ++iter) {
        detail::ScadaEval ev = detail::scada_h_jacobian(nc, adm, meas, v, true);
        Vec r = z - ev.h;
        Mat jw = ev.jac.transpose() * w.asDiagonal();
        Mat normal = jw * ev.jac;
        Eigen::LDLT<Mat> ldlt(normal);
        if (ldlt.info() != Eigen::Success)
            throw numerical_error("SCADA normal equations: factorization failed");
        const Vec& d = ldlt.vectorD();
        if (!(d.maxCoeff() > 0.0) || !(d.minCoeff() > d.maxCoeff() * 1e-14))
            throw numerical_error("SCADA measurement set is unobservable");
        Vec step = ldlt.solve(jw * r);

        // halve the Gauss-Newton step until the weighted residual drops
        double alpha = 1.0;
        double new_cost = cost_at(v + step);
        for (int back = 0; back < 25 && !(new_cost <= cost); ++back) {
            alpha *= 0.5;
            new_cost = cost_at(v + alpha * step);
        }
        if (!(new_cost <= cost)) {
            if (++growing >= 5)
                throw numerical_error("SCADA Gauss-Newton diverged: residual grew for 5 "
                                      "consecutive iterations");
        } else {
            growing = 0;
        }
        v += alpha * step;
        cost = new_cost;
        out.iterations = iter;
        out.final_mismatch = (alpha * step).cwiseAbs().maxCoeff();
        if (out.final_mismatch <= opts.step_tol) {
            out.converged = true;
            break;
        }
    }

    detail::ScadaEval ev = detail::scada_h_jacobian(nc, adm, meas, v, true);
    Mat jw = ev.jac.transpose() * w.asDiagonal();
    Mat normal = jw * ev.jac;
    Eigen::LDLT<Mat> ldlt(normal);
    const Vec& d = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || !(d.minCoeff() > d.maxCoeff() * 1e-14))
        throw numerical_error("SCADA covariance: normal matrix singular at the solution");
    out.v_s_hat = v;
    out.sigma_s = ldlt.solve(Mat::Identity(dim, dim));
    out.sigma_s_inv = normal;
    return out;
}

inline std::string emit_scada(const NetworkCase& nc, const AdmittanceModel& adm,
                              const ScadaMeasurementSet& meas) {
    nlohmann::json doc;
    doc["channels"] = nlohmann::json::array();
    for (const auto& ch : meas.channels) {
        nlohmann::json j{{"kind", to_string(ch.kind)}, {"sigma", ch.sigma}, {"value", ch.value}};
        if (ch.kind == ScadaKind::VMag) {
            j["bus"] = nc.buses[ch.index].id;
        } else {
            const auto& br = adm.rows[ch.index];
            j["from"] = nc.buses[br.from_idx].id;
            j["to"] = nc.buses[br.to_idx].id;
            j["ordinal"] = br.ordinal;
        }
        doc["channels"].push_back(std::move(j));
    }
    return doc.dump(2);
}

inline ScadaMeasurementSet parse_scada(const NetworkCase& nc, const AdmittanceModel& adm,
                                       const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("scada json: ") + e.what());
    }
    ScadaMeasurementSet out;
    try {
        for (const auto& j : doc.at("channels")) {
            ScadaChannel ch;
            ch.kind = scada_kind_from(j.at("kind").get<std::string>());
            ch.sigma = j.at("sigma").get<double>();
            ch.value = j.value("value", 0.0);
            if (ch.kind == ScadaKind::VMag) {
                ch.index = nc.bus_index(j.at("bus").get<int>());
            } else {
                auto key = std::tuple{j.at("from").get<int>(), j.at("to").get<int>(),
                                      j.value("ordinal", 0)};
                auto it = adm.branch_index.find(key);
                if (it == adm.branch_index.end())
                    throw io_error("scada channel references unknown branch");
                ch.index = it->second;
            }
            out.channels.push_back(ch);
        }
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("scada json: ") + e.what());
    }
    return out;
}

} // namespace tsase
