#pragma once

#include "tsase/common.hpp"

#include <nlohmann/json_fwd.hpp>

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tsase {

enum class BusType { PQ, PV, Slack };

inline std::string to_string(BusType t) {
    switch (t) {
        case BusType::PQ: return "PQ";
        case BusType::PV: return "PV";
        case BusType::Slack: return "slack";
    }
    return "?";
}

struct Bus {
    int id = 0;
    BusType type = BusType::PQ;
    double pd = 0.0;          ///< active demand, p.u. on system base
    double qd = 0.0;          ///< reactive demand, p.u.
    double gs = 0.0;          ///< shunt conductance, p.u. at V=1
    double bs = 0.0;          ///< shunt susceptance, p.u. at V=1
    double vm_setpoint = 1.0; ///< magnitude setpoint / initial guess, p.u.
    double va_deg = 0.0;      ///< angle, degrees; meaningful for the slack bus
};

struct Branch {
    int from = 0;
    int to = 0;
    double r = 0.0;
    double x = 0.0;
    double b = 0.0;         ///< total line charging susceptance, p.u.
    double tap = 1.0;       ///< off-nominal turns ratio on the from side; 0 normalized to 1
    double shift_deg = 0.0; ///< phase shift, degrees
    bool in_service = true;
};

struct Gen {
    int bus = 0;
    double pg = 0.0; ///< active output, p.u.
    double vg = 1.0; ///< voltage setpoint, p.u.
    bool in_service = true;
};

/// Parsed network case. Demands, shunts and generator outputs are stored
/// per-unit on base_mva; case files carry MW/MVAr.
struct NetworkCase {
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Gen> gens;

    std::size_t n_buses() const { return buses.size(); }
    std::size_t n_branches() const { return branches.size(); }

    /// Position of a bus id in `buses`; throws if unknown.
    int bus_index(int id) const {
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (buses[i].id == id) return static_cast<int>(i);
        throw config_error("unknown bus id " + std::to_string(id));
    }

    int slack_index() const {
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (buses[i].type == BusType::Slack) return static_cast<int>(i);
        throw config_error("case has no slack bus");
    }

    /// Sum of in-service generator outputs at a bus, p.u.
    double gen_p(int bus_idx) const {
        double p = 0.0;
        for (const auto& g : gens)
            if (g.in_service && g.bus == buses[bus_idx].id) p += g.pg;
        return p;
    }

    /// Voltage setpoint used by the power flow: the first in-service
    /// generator's vg if one exists, else the bus field.
    double v_setpoint(int bus_idx) const {
        for (const auto& g : gens)
            if (g.in_service && g.bus == buses[bus_idx].id) return g.vg;
        return buses[bus_idx].vm_setpoint;
    }

    bool has_gen(int bus_idx) const {
        for (const auto& g : gens)
            if (g.in_service && g.bus == buses[bus_idx].id) return true;
        return false;
    }
};

namespace detail {

inline void validate_case(NetworkCase& nc) {
    if (nc.buses.empty()) throw io_error("case has no buses");
    int slack_count = 0;
    std::map<int, int> seen;
    for (std::size_t i = 0; i < nc.buses.size(); ++i) {
        const auto& b = nc.buses[i];
        if (seen.count(b.id))
            throw io_error("duplicate bus id " + std::to_string(b.id));
        seen[b.id] = static_cast<int>(i);
        if (b.type == BusType::Slack) ++slack_count;
    }
    if (slack_count == 0) throw io_error("case has no slack bus");
    if (slack_count > 1) throw io_error("multiple slack buses");
    for (auto& br : nc.branches) {
        if (!seen.count(br.from))
            throw io_error("branch references unknown bus " + std::to_string(br.from));
        if (!seen.count(br.to))
            throw io_error("branch references unknown bus " + std::to_string(br.to));
        if (br.tap == 0.0) br.tap = 1.0; // MATPOWER convention
        if (br.in_service) {
            if (br.r < 0.0)
                throw io_error("in-service branch " + std::to_string(br.from) + "-" +
                               std::to_string(br.to) + " has negative resistance");
            if (br.x == 0.0)
                throw io_error("in-service branch " + std::to_string(br.from) + "-" +
                               std::to_string(br.to) + " has zero reactance");
        }
    }
    for (const auto& g : nc.gens)
        if (!seen.count(g.bus))
            throw io_error("generator references unknown bus " + std::to_string(g.bus));
}

inline std::vector<double> split_numbers(const std::string& row, int line_no) {
    std::vector<double> out;
    std::istringstream ss(row);
    std::string tok;
    while (ss >> tok) {
        try {
            std::size_t used = 0;
            double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw io_error("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
        }
    }
    return out;
}

inline BusType bus_type_from_code(int code, int line_no) {
    switch (code) {
        case 1: return BusType::PQ;
        case 2: return BusType::PV;
        case 3: return BusType::Slack;
        default:
            throw io_error("line " + std::to_string(line_no) + ": bad bus type code " +
                           std::to_string(code));
    }
}

inline NetworkCase parse_case_text(const std::string& text) {
    NetworkCase nc;
    enum class Section { None, Bus, Branch, Gen } section = Section::None;
    bool expect_base = false;
    bool have_base = false;

    std::istringstream lines(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(lines, raw)) {
        ++line_no;
        auto cut = raw.find('%');
        std::string line = (cut == std::string::npos) ? raw : raw.substr(0, cut);
        // rows may be terminated by ';' as in MATPOWER matrices
        std::string piece;
        std::istringstream segments(line);
        while (std::getline(segments, piece, ';')) {
            std::istringstream probe(piece);
            std::string first;
            if (!(probe >> first)) continue;

            if (first == "baseMVA" || first == "base_mva") {
                double v;
                if (probe >> v) {
                    nc.base_mva = v;
                    have_base = true;
                } else {
                    expect_base = true;
                }
                continue;
            }
            if (first == "bus") { section = Section::Bus; continue; }
            if (first == "branch") { section = Section::Branch; continue; }
            if (first == "gen") { section = Section::Gen; continue; }
            if (first == "end") { section = Section::None; continue; }

            auto nums = split_numbers(piece, line_no);
            if (nums.empty()) continue;
            if (expect_base) {
                nc.base_mva = nums[0];
                have_base = true;
                expect_base = false;
                continue;
            }
            switch (section) {
                case Section::Bus: {
                    if (nums.size() < 9)
                        throw io_error("line " + std::to_string(line_no) +
                                       ": bus row needs at least 9 columns");
                    Bus b;
                    b.id = static_cast<int>(nums[0]);
                    b.type = bus_type_from_code(static_cast<int>(nums[1]), line_no);
                    b.pd = nums[2]; // MW here; converted below
                    b.qd = nums[3];
                    b.gs = nums[4];
                    b.bs = nums[5];
                    b.vm_setpoint = nums[7];
                    b.va_deg = nums[8];
                    nc.buses.push_back(b);
                    break;
                }
                case Section::Branch: {
                    Branch br;
                    if (nums.size() >= 11) {
                        // full MATPOWER layout: f t r x b rateA rateB rateC ratio angle status
                        br.from = static_cast<int>(nums[0]);
                        br.to = static_cast<int>(nums[1]);
                        br.r = nums[2];
                        br.x = nums[3];
                        br.b = nums[4];
                        br.tap = nums[8];
                        br.shift_deg = nums[9];
                        br.in_service = nums[10] != 0.0;
                    } else if (nums.size() == 8) {
                        // abbreviated layout: f t r x b tau sigma status
                        br.from = static_cast<int>(nums[0]);
                        br.to = static_cast<int>(nums[1]);
                        br.r = nums[2];
                        br.x = nums[3];
                        br.b = nums[4];
                        br.tap = nums[5];
                        br.shift_deg = nums[6];
                        br.in_service = nums[7] != 0.0;
                    } else {
                        throw io_error("line " + std::to_string(line_no) +
                                       ": branch row needs 8 or >=11 columns");
                    }
                    nc.branches.push_back(br);
                    break;
                }
                case Section::Gen: {
                    if (nums.size() < 8)
                        throw io_error("line " + std::to_string(line_no) +
                                       ": gen row needs at least 8 columns");
                    Gen g;
                    g.bus = static_cast<int>(nums[0]);
                    g.pg = nums[1]; // MW here; converted below
                    g.vg = nums[5];
                    g.in_service = nums[7] != 0.0;
                    nc.gens.push_back(g);
                    break;
                }
                case Section::None:
                    throw io_error("line " + std::to_string(line_no) +
                                   ": numeric row outside any section");
            }
        }
    }
    if (!have_base) throw io_error("case is missing baseMVA");
    if (nc.base_mva <= 0.0) throw io_error("baseMVA must be positive");

    for (auto& b : nc.buses) {
        b.pd /= nc.base_mva;
        b.qd /= nc.base_mva;
        b.gs /= nc.base_mva;
        b.bs /= nc.base_mva;
    }
    for (auto& g : nc.gens) g.pg /= nc.base_mva;

    validate_case(nc);
    return nc;
}

inline NetworkCase parse_case_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("case json: ") + e.what());
    }
    NetworkCase nc;
    try {
        nc.base_mva = doc.at("base_mva").get<double>();
        for (const auto& jb : doc.at("bus")) {
            Bus b;
            b.id = jb.at("id").get<int>();
            std::string t = jb.at("type").get<std::string>();
            if (t == "PQ") b.type = BusType::PQ;
            else if (t == "PV") b.type = BusType::PV;
            else if (t == "slack") b.type = BusType::Slack;
            else throw io_error("bad bus type '" + t + "'");
            b.pd = jb.at("p_demand").get<double>();
            b.qd = jb.at("q_demand").get<double>();
            b.gs = jb.value("shunt_g", 0.0);
            b.bs = jb.value("shunt_b", 0.0);
            b.vm_setpoint = jb.value("v_mag_setpoint", 1.0);
            b.va_deg = jb.value("v_angle", 0.0);
            nc.buses.push_back(b);
        }
        for (const auto& jb : doc.at("branch")) {
            Branch br;
            br.from = jb.at("from").get<int>();
            br.to = jb.at("to").get<int>();
            br.r = jb.at("r").get<double>();
            br.x = jb.at("x").get<double>();
            br.b = jb.value("total_charging_b", 0.0);
            br.tap = jb.value("tap_ratio", 1.0);
            br.shift_deg = jb.value("phase_shift", 0.0);
            std::string st = jb.value("status", std::string("on"));
            br.in_service = (st == "on");
            nc.branches.push_back(br);
        }
        if (doc.contains("gen")) {
            for (const auto& jg : doc.at("gen")) {
                Gen g;
                g.bus = jg.at("bus").get<int>();
                g.pg = jg.at("p_output").get<double>();
                g.vg = jg.value("v_setpoint", 1.0);
                std::string st = jg.value("status", std::string("on"));
                g.in_service = (st == "on");
                nc.gens.push_back(g);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("case json: ") + e.what());
    }
    for (auto& b : nc.buses) {
        b.pd /= nc.base_mva;
        b.qd /= nc.base_mva;
        b.gs /= nc.base_mva;
        b.bs /= nc.base_mva;
    }
    for (auto& g : nc.gens) g.pg /= nc.base_mva;
    validate_case(nc);
    return nc;
}

} // namespace detail

/// Parse a network case. Detects the structured-document form by a leading
/// '{'; anything else goes through the section/row grammar.
inline NetworkCase parse_case(const std::string& text) {
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) continue;
        if (c == '{') return detail::parse_case_json(text);
        break;
    }
    return detail::parse_case_text(text);
}

/// Emit in the section/row text format (format A). Demands back in MW.
inline std::string emit_case_text(const NetworkCase& nc) {
    std::ostringstream os;
    os.precision(12);
    os << "baseMVA " << nc.base_mva << "\n";
    os << "bus\n";
    for (const auto& b : nc.buses) {
        int code = b.type == BusType::PQ ? 1 : (b.type == BusType::PV ? 2 : 3);
        os << b.id << " " << code << " " << b.pd * nc.base_mva << " " << b.qd * nc.base_mva
           << " " << b.gs * nc.base_mva << " " << b.bs * nc.base_mva << " 1 "
           << b.vm_setpoint << " " << b.va_deg << "\n";
    }
    os << "end\nbranch\n";
    for (const auto& br : nc.branches)
        os << br.from << " " << br.to << " " << br.r << " " << br.x << " " << br.b << " "
           << br.tap << " " << br.shift_deg << " " << (br.in_service ? 1 : 0) << "\n";
    os << "end\ngen\n";
    for (const auto& g : nc.gens)
        os << g.bus << " " << g.pg * nc.base_mva << " 0 0 0 " << g.vg << " " << nc.base_mva
           << " " << (g.in_service ? 1 : 0) << "\n";
    os << "end\n";
    return os.str();
}

/// Emit in the structured-document form (format B).
inline std::string emit_case_json(const NetworkCase& nc) {
    nlohmann::json doc;
    doc["base_mva"] = nc.base_mva;
    doc["bus"] = nlohmann::json::array();
    for (const auto& b : nc.buses) {
        doc["bus"].push_back({{"id", b.id},
                              {"type", to_string(b.type)},
                              {"p_demand", b.pd * nc.base_mva},
                              {"q_demand", b.qd * nc.base_mva},
                              {"shunt_g", b.gs * nc.base_mva},
                              {"shunt_b", b.bs * nc.base_mva},
                              {"v_mag_setpoint", b.vm_setpoint},
                              {"v_angle", b.va_deg}});
    }
    doc["branch"] = nlohmann::json::array();
    for (const auto& br : nc.branches) {
        doc["branch"].push_back({{"from", br.from},
                                 {"to", br.to},
                                 {"r", br.r},
                                 {"x", br.x},
                                 {"total_charging_b", br.b},
                                 {"tap_ratio", br.tap},
                                 {"phase_shift", br.shift_deg},
                                 {"status", br.in_service ? "on" : "off"}});
    }
    doc["gen"] = nlohmann::json::array();
    for (const auto& g : nc.gens) {
        doc["gen"].push_back({{"bus", g.bus},
                              {"p_output", g.pg * nc.base_mva},
                              {"v_setpoint", g.vg},
                              {"status", g.in_service ? "on" : "off"}});
    }
    return doc.dump(2);
}

inline bool structurally_equal(const NetworkCase& a, const NetworkCase& b, double tol = 1e-9) {
    if (a.buses.size() != b.buses.size() || a.branches.size() != b.branches.size() ||
        a.gens.size() != b.gens.size())
        return false;
    if (std::abs(a.base_mva - b.base_mva) > tol) return false;
    for (std::size_t i = 0; i < a.buses.size(); ++i) {
        const auto& x = a.buses[i];
        const auto& y = b.buses[i];
        if (x.id != y.id || x.type != y.type) return false;
        if (std::abs(x.pd - y.pd) > tol || std::abs(x.qd - y.qd) > tol) return false;
        if (std::abs(x.gs - y.gs) > tol || std::abs(x.bs - y.bs) > tol) return false;
        if (std::abs(x.vm_setpoint - y.vm_setpoint) > tol) return false;
        if (std::abs(x.va_deg - y.va_deg) > tol) return false;
    }
    for (std::size_t i = 0; i < a.branches.size(); ++i) {
        const auto& x = a.branches[i];
        const auto& y = b.branches[i];
        if (x.from != y.from || x.to != y.to || x.in_service != y.in_service) return false;
        if (std::abs(x.r - y.r) > tol || std::abs(x.x - y.x) > tol ||
            std::abs(x.b - y.b) > tol || std::abs(x.tap - y.tap) > tol ||
            std::abs(x.shift_deg - y.shift_deg) > tol)
            return false;
    }
    for (std::size_t i = 0; i < a.gens.size(); ++i) {
        const auto& x = a.gens[i];
        const auto& y = b.gens[i];
        if (x.bus != y.bus || x.in_service != y.in_service) return false;
        if (std::abs(x.pg - y.pg) > tol || std::abs(x.vg - y.vg) > tol) return false;
    }
    return true;
}

} // namespace tsase
