#pragma once

#include "tsase/netcase.hpp"

#include <map>
#include <tuple>
#include <vector>

namespace tsase {

/// Complex bus/branch admittance model over the in-service branches of a
/// case. Row i of y_from (y_to) maps nodal voltages to the current injected
/// into branch i at its from (to) end. ybus includes branch contributions
/// and bus shunts, so injections are ybus * V for any complex V.
struct AdmittanceModel {
    struct BranchRow {
        int from_idx;    ///< bus index (not id) of the from end
        int to_idx;      ///< bus index of the to end
        int case_branch; ///< row in NetworkCase::branches
        int ordinal;     ///< 0-based count among parallel branches (same from,to)
    };

    CMat ybus;  ///< N_b x N_b
    CMat yfrom; ///< N_l x N_b
    CMat yto;   ///< N_l x N_b
    std::vector<BranchRow> rows;
    /// (from bus id, to bus id, parallel ordinal) -> branch row
    std::map<std::tuple<int, int, int>, int> branch_index;
    /// per bus index: incident (branch row, bus-is-from-end) pairs, ascending by row
    std::vector<std::vector<std::pair<int, bool>>> incident;

    std::size_t n_lines() const { return rows.size(); }
};

inline AdmittanceModel build_admittance(const NetworkCase& nc) {
    const int nb = static_cast<int>(nc.n_buses());
    AdmittanceModel m;

    std::vector<int> live;
    for (std::size_t i = 0; i < nc.branches.size(); ++i)
        if (nc.branches[i].in_service) live.push_back(static_cast<int>(i));
    const int nl = static_cast<int>(live.size());

    m.ybus = CMat::Zero(nb, nb);
    m.yfrom = CMat::Zero(nl, nb);
    m.yto = CMat::Zero(nl, nb);
    m.incident.resize(nb);

    std::map<std::pair<int, int>, int> parallel_count;
    for (int row = 0; row < nl; ++row) {
        const Branch& br = nc.branches[live[row]];
        if (br.x == 0.0)
            throw numerical_error("in-service branch " + std::to_string(br.from) + "-" +
                                  std::to_string(br.to) + " has zero reactance");
        const int f = nc.bus_index(br.from);
        const int t = nc.bus_index(br.to);
        const double tap = br.tap == 0.0 ? 1.0 : br.tap;
        const double shift = deg2rad(br.shift_deg);

        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex ych(0.0, br.b / 2.0);
        const Complex ratio = std::polar(tap, shift);

        const Complex yff = (ys + ych) / (tap * tap);
        const Complex yft = -ys / std::conj(ratio);
        const Complex ytf = -ys / ratio;
        const Complex ytt = ys + ych;

        m.yfrom(row, f) = yff;
        m.yfrom(row, t) = yft;
        m.yto(row, f) = ytf;
        m.yto(row, t) = ytt;

        m.ybus(f, f) += yff;
        m.ybus(f, t) += yft;
        m.ybus(t, f) += ytf;
        m.ybus(t, t) += ytt;

        int ord = parallel_count[{br.from, br.to}]++;
        m.rows.push_back({f, t, live[row], ord});
        m.branch_index[{br.from, br.to, ord}] = row;
        m.incident[f].push_back({row, true});
        m.incident[t].push_back({row, false});
    }
    for (int n = 0; n < nb; ++n)
        m.ybus(n, n) += Complex(nc.buses[n].gs, nc.buses[n].bs);
    return m;
}

/// Complex nodal voltage vector from a rectangular state [v_r; v_i].
inline CVec complex_voltage(const Vec& v) {
    const Eigen::Index nb = v.size() / 2;
    CVec out(nb);
    for (Eigen::Index i = 0; i < nb; ++i) out(i) = Complex(v(i), v(nb + i));
    return out;
}

} // namespace tsase
