#pragma once

#include "tsase/powerflow.hpp"
#include "tsase/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <string>
#include <vector>

namespace tsase {

/// PMU placement as an indicator over bus indices plus the ordered bus-id set.
struct PmuPlacement {
    std::vector<std::uint8_t> a; ///< length N_b, 1 = PMU installed
    std::vector<int> pmu_buses;  ///< ascending bus ids where a = 1

    static PmuPlacement from_bus_ids(const NetworkCase& nc, std::vector<int> ids) {
        PmuPlacement p;
        p.a.assign(nc.n_buses(), 0);
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        for (int id : ids) p.a[nc.bus_index(id)] = 1;
        p.pmu_buses = std::move(ids);
        return p;
    }

    static PmuPlacement parse(const NetworkCase& nc, const std::string& text) {
        std::vector<int> ids;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            auto cut = line.find('%');
            if (cut != std::string::npos) line = line.substr(0, cut);
            std::istringstream ls(line);
            int id;
            while (ls >> id) ids.push_back(id);
        }
        if (ids.empty()) throw io_error("placement file lists no buses");
        return from_bus_ids(nc, ids);
    }
};

/// One phasor pair measured by a PMU: the bus voltage, or the current
/// leaving `bus` into a specific branch row.
struct ChannelRef {
    enum class Kind { Voltage, Current };
    Kind kind = Kind::Voltage;
    int from_bus = 0; ///< measuring bus id
    int to_bus = 0;   ///< remote bus id (currents only)
    int ordinal = 0;  ///< parallel ordinal of the branch (currents only)
};

/// Per-PMU linear measurement system z_n = H_n v + w_n. Rows come in
/// interleaved (real, imag) pairs: the bus voltage pair first, then one pair
/// per incident in-service branch in admittance row order.
struct PmuSite {
    int bus_id = 0;
    int bus_idx = 0;
    int n_lines = 0;              ///< L_n: incident in-service branch count
    Mat h;                        ///< M_n x state_dim
    Vec sigma_diag;               ///< diagonal of Sigma_n (used when diagonal)
    Mat sigma;                    ///< full Sigma_n
    Mat sigma_inv;                ///< Sigma_n^{-1}
    bool diagonal = true;         ///< Sigma_n is diagonal
    bool paired_diagonal = true;  ///< diagonal with equal variances per phasor pair
    std::vector<ChannelRef> channels; ///< 1 + L_n entries, one per pair

    Eigen::Index m() const { return h.rows(); }
};

/// Measurement model for every PMU in a placement. In reduced mode the
/// imaginary-part column of the reference (slack) bus is removed from every
/// H_n and the state has dimension 2 N_b - 1.
struct PmuModel {
    std::vector<PmuSite> sites;
    int n_buses = 0;
    int state_dim = 0;
    bool reduced = false;
    int slack_idx = -1;

    const PmuSite* site_for_bus(int bus_id) const {
        for (const auto& s : sites)
            if (s.bus_id == bus_id) return &s;
        return nullptr;
    }

    /// Reduce a full-length state vector (drop the slack imaginary entry).
    Vec reduce_state(const Vec& v_full) const {
        if (!reduced) return v_full;
        Vec out(state_dim);
        const int drop = n_buses + slack_idx;
        Eigen::Index j = 0;
        for (Eigen::Index i = 0; i < v_full.size(); ++i)
            if (i != drop) out(j++) = v_full(i);
        return out;
    }

    /// Inverse of reduce_state: reinsert a zero at the slack imaginary slot.
    Vec expand_state(const Vec& v_red) const {
        if (!reduced) return v_red;
        Vec out(2 * n_buses);
        const int drop = n_buses + slack_idx;
        Eigen::Index j = 0;
        for (Eigen::Index i = 0; i < out.size(); ++i)
            out(i) = (i == drop) ? 0.0 : v_red(j++);
        return out;
    }
};

namespace detail {

/// Real 2 x 2nb expansion of a complex row c acting on [v_r; v_i].
inline void write_complex_row_pair(Mat& h, Eigen::Index row, const CVec& c) {
    const Eigen::Index nb = c.size();
    for (Eigen::Index k = 0; k < nb; ++k) {
        const double re = c(k).real(), im = c(k).imag();
        if (re == 0.0 && im == 0.0) continue;
        h(row, k) = re;
        h(row, nb + k) = -im;
        h(row + 1, k) = im;
        h(row + 1, nb + k) = re;
    }
}

inline Mat drop_column(const Mat& m, Eigen::Index col) {
    Mat out(m.rows(), m.cols() - 1);
    out.leftCols(col) = m.leftCols(col);
    out.rightCols(m.cols() - 1 - col) = m.rightCols(m.cols() - 1 - col);
    return out;
}

} // namespace detail

struct NoiseSpec {
    double sigma_v = 0.01; ///< std dev of voltage-channel components, p.u.
    double sigma_i = 0.02; ///< std dev of current-channel components, p.u.
};

inline PmuModel build_pmu_model(const NetworkCase& nc, const AdmittanceModel& adm,
                                const PmuPlacement& placement, const NoiseSpec& noise = {},
                                bool reduced = false) {
    const int nb = static_cast<int>(nc.n_buses());
    if (static_cast<int>(placement.a.size()) != nb)
        throw config_error("placement length does not match bus count");
    if (noise.sigma_v <= 0.0 || noise.sigma_i <= 0.0)
        throw config_error("noise standard deviations must be positive");

    PmuModel model;
    model.n_buses = nb;
    model.reduced = reduced;
    model.slack_idx = nc.slack_index();
    model.state_dim = reduced ? 2 * nb - 1 : 2 * nb;

    for (int bus_id : placement.pmu_buses) {
        const int n = nc.bus_index(bus_id);
        PmuSite site;
        site.bus_id = bus_id;
        site.bus_idx = n;
        site.n_lines = static_cast<int>(adm.incident[n].size());
        const Eigen::Index m = 2 + 2 * site.n_lines;

        Mat h = Mat::Zero(m, 2 * nb);
        h(0, n) = 1.0;
        h(1, nb + n) = 1.0;
        site.channels.push_back({ChannelRef::Kind::Voltage, bus_id, 0, 0});

        Eigen::Index row = 2;
        for (auto [branch_row, at_from] : adm.incident[n]) {
            const CVec c =
                at_from ? adm.yfrom.row(branch_row).transpose() : adm.yto.row(branch_row).transpose();
            detail::write_complex_row_pair(h, row, c);
            const auto& br = adm.rows[branch_row];
            const int remote_idx = at_from ? br.to_idx : br.from_idx;
            site.channels.push_back(
                {ChannelRef::Kind::Current, bus_id, nc.buses[remote_idx].id, br.ordinal});
            row += 2;
        }

        site.h = reduced ? detail::drop_column(h, nb + model.slack_idx) : std::move(h);

        site.sigma_diag.resize(m);
        site.sigma_diag(0) = noise.sigma_v * noise.sigma_v;
        site.sigma_diag(1) = noise.sigma_v * noise.sigma_v;
        for (Eigen::Index i = 2; i < m; ++i) site.sigma_diag(i) = noise.sigma_i * noise.sigma_i;
        site.sigma = site.sigma_diag.asDiagonal();
        site.sigma_inv = site.sigma_diag.cwiseInverse().asDiagonal();
        site.diagonal = true;
        site.paired_diagonal = true;

        model.sites.push_back(std::move(site));
    }
    return model;
}

/// Replace a site's noise covariance with a full positive-definite matrix.
inline void set_site_covariance(PmuSite& site, const Mat& sigma, double pair_tol = 1e-12) {
    if (sigma.rows() != site.m() || sigma.cols() != site.m())
        throw config_error("covariance size does not match measurement count");
    Eigen::LLT<Mat> llt(sigma);
    if (llt.info() != Eigen::Success)
        throw numerical_error("site covariance is not positive definite");
    site.sigma = sigma;
    site.sigma_inv = llt.solve(Mat::Identity(sigma.rows(), sigma.cols()));
    site.sigma_diag = sigma.diagonal();
    site.diagonal = sigma.isDiagonal(pair_tol);
    site.paired_diagonal = site.diagonal;
    if (site.paired_diagonal)
        for (Eigen::Index i = 0; i + 1 < sigma.rows(); i += 2)
            if (std::abs(sigma(i, i) - sigma(i + 1, i + 1)) >
                pair_tol * std::max(1.0, std::abs(sigma(i, i))))
                site.paired_diagonal = false;
}

/// Block-diagonal rotation operator of Eq-style structure: 1 + n_lines
/// identical 2x2 rotation blocks.
inline Mat gamma_matrix(double delta_theta, int n_lines) {
    const int m = 2 + 2 * n_lines;
    const double c = std::cos(delta_theta), s = std::sin(delta_theta);
    Mat g = Mat::Zero(m, m);
    for (int i = 0; i < m; i += 2) {
        g(i, i) = c;
        g(i, i + 1) = -s;
        g(i + 1, i) = s;
        g(i + 1, i + 1) = c;
    }
    return g;
}

/// Apply the pairwise rotation in place: out_pair = R(theta) * in_pair.
inline Vec rotate_pairs(const Vec& z, double delta_theta) {
    const double c = std::cos(delta_theta), s = std::sin(delta_theta);
    Vec out(z.size());
    for (Eigen::Index i = 0; i + 1 < z.size(); i += 2) {
        out(i) = c * z(i) - s * z(i + 1);
        out(i + 1) = s * z(i) + c * z(i + 1);
    }
    return out;
}

/// Attack description over bus indices. delta_theta is zero wherever b is.
struct AttackScenario {
    std::vector<std::uint8_t> b;  ///< attacked indicator, length N_b
    Vec delta_theta;              ///< radians, length N_b
    Vec delta_theta_max;          ///< radians, length N_b

    static AttackScenario none(int n_buses, double bound_rad = deg2rad(70.0)) {
        AttackScenario s;
        s.b.assign(n_buses, 0);
        s.delta_theta = Vec::Zero(n_buses);
        s.delta_theta_max = Vec::Constant(n_buses, bound_rad);
        return s;
    }

    /// Build from (bus id, angle radians) pairs.
    static AttackScenario on_buses(const NetworkCase& nc,
                                   const std::vector<std::pair<int, double>>& attacks,
                                   double bound_rad = deg2rad(70.0)) {
        AttackScenario s = none(static_cast<int>(nc.n_buses()), bound_rad);
        for (auto [bus_id, angle] : attacks) {
            const int i = nc.bus_index(bus_id);
            s.b[i] = 1;
            s.delta_theta(i) = angle;
        }
        return s;
    }

    void validate(const PmuPlacement& placement) const {
        if (placement.a.size() != b.size())
            throw config_error("attack vector length does not match placement");
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (b[i] && !placement.a[i])
                throw config_error("attack on bus without a PMU (index " + std::to_string(i) +
                                   ")");
            if (!b[i] && delta_theta(static_cast<Eigen::Index>(i)) != 0.0)
                throw config_error("nonzero attack angle on unattacked bus");
            if (std::abs(delta_theta(static_cast<Eigen::Index>(i))) >
                delta_theta_max(static_cast<Eigen::Index>(i)) + 1e-12)
                throw config_error("attack angle outside bounds");
        }
    }
};

struct MeasurementSet {
    struct Entry {
        int bus_id = 0;
        Vec z;
        bool attacked = false;
    };
    std::vector<Entry> entries;

    const Vec& z_for_bus(int bus_id) const {
        for (const auto& e : entries)
            if (e.bus_id == bus_id) return e.z;
        throw config_error("no measurement for bus " + std::to_string(bus_id));
    }
};

/// Simulate z_n = Gamma_n(dtheta_n) H_n v + noise_scale * w_n for every PMU.
/// Noise is drawn from a generator seeded with `seed`, site by site in model
/// order, so equal seeds give identical sets.
inline MeasurementSet simulate_measurements(const PmuModel& model, const Vec& v,
                                            const AttackScenario& attack, std::uint64_t seed,
                                            double noise_scale = 1.0) {
    if (v.size() != model.state_dim)
        throw config_error("state vector length does not match model");
    MeasurementSet out;
    Rng rng(seed);
    for (const auto& site : model.sites) {
        Vec base = site.h * v;
        const double theta = attack.b[site.bus_idx] ? attack.delta_theta(site.bus_idx) : 0.0;
        if (theta != 0.0) base = rotate_pairs(base, theta);
        if (noise_scale != 0.0) {
            if (site.diagonal) {
                for (Eigen::Index i = 0; i < base.size(); ++i)
                    base(i) += noise_scale * std::sqrt(site.sigma_diag(i)) * rng.normal();
            } else {
                Eigen::LLT<Mat> llt(site.sigma);
                Vec correlated = llt.matrixL() * rng.normal_vec(base.size());
                base += noise_scale * correlated;
            }
        }
        out.entries.push_back({site.bus_id, std::move(base), attack.b[site.bus_idx] != 0});
    }
    return out;
}

/// Structured-document serialization of a measurement set.
inline std::string emit_measurements(const PmuModel& model, const MeasurementSet& ms) {
    nlohmann::json doc;
    doc["buses"] = nlohmann::json::array();
    for (const auto& e : ms.entries) {
        const PmuSite* site = model.site_for_bus(e.bus_id);
        if (!site) throw config_error("measurement for unknown PMU bus");
        nlohmann::json channels = nlohmann::json::array();
        for (const auto& c : site->channels) {
            if (c.kind == ChannelRef::Kind::Voltage)
                channels.push_back({{"kind", "voltage"}, {"bus", c.from_bus}});
            else
                channels.push_back({{"kind", "current"},
                                    {"from", c.from_bus},
                                    {"to", c.to_bus},
                                    {"ordinal", c.ordinal}});
        }
        std::vector<double> values(e.z.data(), e.z.data() + e.z.size());
        doc["buses"].push_back({{"bus", e.bus_id},
                                {"attacked", e.attacked},
                                {"channels", channels},
                                {"values", values}});
    }
    return doc.dump(2);
}

inline MeasurementSet parse_measurements(const PmuModel& model, const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("measurements json: ") + e.what());
    }
    MeasurementSet ms;
    try {
        for (const auto& jb : doc.at("buses")) {
            MeasurementSet::Entry e;
            e.bus_id = jb.at("bus").get<int>();
            e.attacked = jb.value("attacked", false);
            const auto& vals = jb.at("values");
            e.z.resize(static_cast<Eigen::Index>(vals.size()));
            for (std::size_t i = 0; i < vals.size(); ++i)
                e.z(static_cast<Eigen::Index>(i)) = vals[i].get<double>();
            const PmuSite* site = model.site_for_bus(e.bus_id);
            if (!site)
                throw io_error("measurement file references bus " + std::to_string(e.bus_id) +
                               " which has no PMU in the placement");
            if (e.z.size() != site->m())
                throw io_error("measurement length mismatch at bus " + std::to_string(e.bus_id));
            ms.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("measurements json: ") + e.what());
    }
    return ms;
}

} // namespace tsase
