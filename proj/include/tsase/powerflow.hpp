#pragma once

#include "tsase/admittance.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tsase {

/// Rectangular nodal voltages, layout [v_r; v_i], length 2 N_b.
struct VoltageProfile {
    Vec v;

    Eigen::Index n_buses() const { return v.size() / 2; }

    /// Rotate the whole profile by a common angle (gauge change).
    VoltageProfile rotated(double angle_rad) const {
        const Eigen::Index nb = n_buses();
        const double c = std::cos(angle_rad), s = std::sin(angle_rad);
        VoltageProfile out;
        out.v.resize(v.size());
        for (Eigen::Index i = 0; i < nb; ++i) {
            out.v(i) = c * v(i) - s * v(nb + i);
            out.v(nb + i) = s * v(i) + c * v(nb + i);
        }
        return out;
    }
};

struct PowerFlowOptions {
    double tolerance = 1e-8; ///< max |power mismatch|, p.u.
    int max_iter = 30;
};

/// Newton-Raphson power flow in polar coordinates, flat start. Loads (P and
/// Q) are scaled by load_scale; generator outputs and setpoints are not.
inline VoltageProfile solve_power_flow(const NetworkCase& nc, double load_scale = 1.0,
                                       const PowerFlowOptions& opts = {}) {
    if (load_scale <= 0.0) throw config_error("load_scale must be positive");
    const AdmittanceModel adm = build_admittance(nc);
    const int nb = static_cast<int>(nc.n_buses());
    const int slack = nc.slack_index();

    // unknown ordering: angles at all non-slack buses, then magnitudes at PQ
    std::vector<int> ang_pos(nb, -1), mag_pos(nb, -1);
    std::vector<int> ang_bus, mag_bus;
    for (int i = 0; i < nb; ++i) {
        if (i == slack) continue;
        ang_pos[i] = static_cast<int>(ang_bus.size());
        ang_bus.push_back(i);
    }
    for (int i = 0; i < nb; ++i) {
        if (i == slack || nc.buses[i].type == BusType::PV) continue;
        mag_pos[i] = static_cast<int>(mag_bus.size());
        mag_bus.push_back(i);
    }
    const int n_ang = static_cast<int>(ang_bus.size());
    const int n_mag = static_cast<int>(mag_bus.size());
    const int n_unknown = n_ang + n_mag;

    Vec vm(nb), va(nb);
    const double slack_angle = deg2rad(nc.buses[slack].va_deg);
    for (int i = 0; i < nb; ++i) {
        va(i) = slack_angle;
        vm(i) = (i == slack || nc.buses[i].type == BusType::PV) ? nc.v_setpoint(i) : 1.0;
    }

    Vec p_spec(nb), q_spec(nb);
    for (int i = 0; i < nb; ++i) {
        p_spec(i) = nc.gen_p(i) - load_scale * nc.buses[i].pd;
        q_spec(i) = -load_scale * nc.buses[i].qd;
    }

    const Mat G = adm.ybus.real();
    const Mat B = adm.ybus.imag();
    Vec p_calc(nb), q_calc(nb);

    auto evaluate = [&]() {
        for (int i = 0; i < nb; ++i) {
            double p = 0.0, q = 0.0;
            for (int k = 0; k < nb; ++k) {
                const double th = va(i) - va(k);
                const double c = std::cos(th), s = std::sin(th);
                p += vm(i) * vm(k) * (G(i, k) * c + B(i, k) * s);
                q += vm(i) * vm(k) * (G(i, k) * s - B(i, k) * c);
            }
            p_calc(i) = p;
            q_calc(i) = q;
        }
    };

    double max_mismatch = 0.0;
    for (int iter = 0; iter <= opts.max_iter; ++iter) {
        evaluate();
        Vec f(n_unknown);
        for (int a = 0; a < n_ang; ++a) f(a) = p_spec(ang_bus[a]) - p_calc(ang_bus[a]);
        for (int m = 0; m < n_mag; ++m)
            f(n_ang + m) = q_spec(mag_bus[m]) - q_calc(mag_bus[m]);
        max_mismatch = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
        if (max_mismatch <= opts.tolerance) {
            VoltageProfile prof;
            prof.v.resize(2 * nb);
            for (int i = 0; i < nb; ++i) {
                prof.v(i) = vm(i) * std::cos(va(i));
                prof.v(nb + i) = vm(i) * std::sin(va(i));
            }
            return prof;
        }
        if (iter == opts.max_iter) break;

        Mat J = Mat::Zero(n_unknown, n_unknown);
        for (int a = 0; a < n_ang; ++a) {
            const int i = ang_bus[a];
            for (int b2 = 0; b2 < n_ang; ++b2) {
                const int j = ang_bus[b2];
                if (i == j)
                    J(a, b2) = -q_calc(i) - B(i, i) * vm(i) * vm(i);
                else {
                    const double th = va(i) - va(j);
                    J(a, b2) = vm(i) * vm(j) *
                               (G(i, j) * std::sin(th) - B(i, j) * std::cos(th));
                }
            }
            for (int m = 0; m < n_mag; ++m) {
                const int j = mag_bus[m];
                if (i == j)
                    J(a, n_ang + m) = p_calc(i) / vm(i) + G(i, i) * vm(i);
                else {
                    const double th = va(i) - va(j);
                    J(a, n_ang + m) =
                        vm(i) * (G(i, j) * std::cos(th) + B(i, j) * std::sin(th));
                }
            }
        }
        for (int mq = 0; mq < n_mag; ++mq) {
            const int i = mag_bus[mq];
            for (int b2 = 0; b2 < n_ang; ++b2) {
                const int j = ang_bus[b2];
                if (i == j)
                    J(n_ang + mq, b2) = p_calc(i) - G(i, i) * vm(i) * vm(i);
                else {
                    const double th = va(i) - va(j);
                    J(n_ang + mq, b2) = -vm(i) * vm(j) *
                                        (G(i, j) * std::cos(th) + B(i, j) * std::sin(th));
                }
            }
            for (int m = 0; m < n_mag; ++m) {
                const int j = mag_bus[m];
                if (i == j)
                    J(n_ang + mq, n_ang + m) = q_calc(i) / vm(i) - B(i, i) * vm(i);
                else {
                    const double th = va(i) - va(j);
                    J(n_ang + mq, n_ang + m) =
                        vm(i) * (G(i, j) * std::sin(th) - B(i, j) * std::cos(th));
                }
            }
        }

        Eigen::PartialPivLU<Mat> lu(J);
        Vec dx = lu.solve(f);
        if (!dx.allFinite())
            throw numerical_error("power flow Jacobian is singular");
        for (int a = 0; a < n_ang; ++a) va(ang_bus[a]) += dx(a);
        for (int m = 0; m < n_mag; ++m) vm(mag_bus[m]) += dx(n_ang + m);
    }
    std::ostringstream msg;
    msg << "power flow did not converge in " << opts.max_iter
        << " iterations; final mismatch " << std::scientific << max_mismatch << " p.u.";
    throw numerical_error(msg.str());
}

/// Serialize a profile: header "layout=rect n=<N_b>", then one value per line.
inline std::string emit_profile(const VoltageProfile& p) {
    std::ostringstream os;
    os << "layout=rect n=" << p.n_buses() << "\n";
    os << std::setprecision(17);
    for (Eigen::Index i = 0; i < p.v.size(); ++i) os << p.v(i) << "\n";
    return os.str();
}

/// Parse a profile file; n_buses_expected < 0 skips the size check.
inline VoltageProfile parse_profile(const std::string& text, Eigen::Index n_buses_expected = -1) {
    std::istringstream is(text);
    std::string header;
    if (!std::getline(is, header)) throw io_error("empty profile file");
    Eigen::Index n = -1;
    {
        std::istringstream hs(header);
        std::string tok;
        bool layout_ok = false;
        while (hs >> tok) {
            if (tok == "layout=rect") layout_ok = true;
            else if (tok.rfind("n=", 0) == 0) n = std::stoll(tok.substr(2));
        }
        if (!layout_ok || n <= 0) throw io_error("profile header must be 'layout=rect n=<N_b>'");
    }
    std::vector<double> vals;
    double x;
    while (is >> x) vals.push_back(x);
    if (static_cast<Eigen::Index>(vals.size()) != 2 * n)
        throw io_error("profile declares " + std::to_string(n) + " buses but holds " +
                       std::to_string(vals.size()) + " values (need " + std::to_string(2 * n) +
                       ")");
    if (n_buses_expected >= 0 && n != n_buses_expected)
        throw io_error("profile is for " + std::to_string(n) + " buses, case has " +
                       std::to_string(n_buses_expected));
    VoltageProfile p;
    p.v = Eigen::Map<const Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    if (!p.v.allFinite()) throw io_error("profile contains non-finite values");
    return p;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot write " + path);
    f << content;
}

} // namespace tsase
