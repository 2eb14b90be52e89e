#pragma once

#include "tsase/am.hpp"
#include "tsase/lnrt.hpp"
#include "tsase/scada.hpp"
#include "tsase/vulnerability.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tsase {

/// Everything needed to reproduce one experiment: scenario, noise, seeds,
/// method and its knobs. Serializes to/from the structured document form.
struct ExperimentConfig {
    std::string case_path;
    std::string placement_path;
    std::string method = "am"; ///< ml | am | am_hybrid | lnrt | vuln_optimal | vuln_greedy

    struct Attack {
        std::vector<std::pair<int, double>> fixed_deg; ///< (bus id, angle in degrees)
        bool random = false;
        double random_fraction = 0.2;  ///< share of PMUs attacked per realization
        double angle_range_deg = 60.0; ///< angles drawn uniformly in +-range
    } attack;

    double sigma_v = 0.01;
    double sigma_i = 0.02;
    double load_scale = 1.0;
    std::vector<double> load_scales; ///< optional series (e.g. hourly profiles)

    int monte_carlo = 1;
    std::uint64_t base_seed = 1;

    double am_tolerance = 0.01;
    int am_max_iter = 200;
    std::string am_covariance = "auto"; ///< auto | general | diagonal
    double attack_flag_deg = 3.0;       ///< |angle| above this is reported attacked

    double lnrt_threshold = 3.0;

    std::size_t vuln_np = 1;
    double bounds_deg = 70.0;
    bool vuln_equal_weights = true; ///< search with equal channel weights
    bool vuln_grid_1d = true;

    struct Scada {
        double fraction = 0.5;
        double sigma_vmag = 0.01;
        double sigma_flow = 0.02;
        std::uint64_t seed = 1;
        bool add_slack_pmu = true; ///< hybrid runs add a PMU at the slack bus
    } scada;

    std::string out_dir; ///< when set, CSV artifacts and the manifest are written

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct RunSummary {
    std::string method;
    int realizations = 0;
    double relative_state_error = 0.0;
    double relative_angle_error = 0.0;
    std::vector<std::pair<int, double>> per_bus_angle_deg; ///< mean estimate per PMU bus
    std::vector<int> flagged_attacked;                     ///< buses above the flag threshold
    double wall_seconds = 0.0;
    // vulnerability-only fields
    std::vector<int> attacked_buses;
    double objective = 0.0;
};

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        c.case_path = j.at("case_path").get<std::string>();
        c.placement_path = j.value("placement_path", std::string());
        c.method = j.value("method", std::string("am"));
        if (j.contains("attack")) {
            const auto& a = j.at("attack");
            if (a.contains("buses")) {
                const auto& buses = a.at("buses");
                const auto& angles = a.at("angles_deg");
                if (buses.size() != angles.size())
                    throw config_error("attack buses/angles length mismatch");
                for (std::size_t i = 0; i < buses.size(); ++i)
                    c.attack.fixed_deg.push_back({buses[i].get<int>(), angles[i].get<double>()});
            }
            c.attack.random = a.value("random", false);
            c.attack.random_fraction = a.value("fraction", 0.2);
            c.attack.angle_range_deg = a.value("angle_range_deg", 60.0);
        }
        if (j.contains("noise")) {
            c.sigma_v = j.at("noise").value("sigma_v", 0.01);
            c.sigma_i = j.at("noise").value("sigma_i", 0.02);
        }
        c.load_scale = j.value("load_scale", 1.0);
        if (j.contains("load_scales"))
            for (const auto& s : j.at("load_scales")) c.load_scales.push_back(s.get<double>());
        c.monte_carlo = j.value("monte_carlo", 1);
        c.base_seed = j.value("base_seed", std::uint64_t{1});
        if (j.contains("tolerances")) {
            c.am_tolerance = j.at("tolerances").value("am", 0.01);
            c.lnrt_threshold = j.at("tolerances").value("lnrt_threshold", 3.0);
        }
        c.am_max_iter = j.value("am_max_iter", 200);
        c.am_covariance = j.value("am_covariance", std::string("auto"));
        c.attack_flag_deg = j.value("attack_flag_deg", 3.0);
        c.vuln_np = j.value("vuln_np", std::size_t{1});
        c.bounds_deg = j.value("bounds_deg", 70.0);
        c.vuln_equal_weights = j.value("vuln_equal_weights", true);
        c.vuln_grid_1d = j.value("vuln_grid_1d", true);
        if (j.contains("scada")) {
            const auto& s = j.at("scada");
            c.scada.fraction = s.value("fraction", 0.5);
            c.scada.sigma_vmag = s.value("sigma_vmag", 0.01);
            c.scada.sigma_flow = s.value("sigma_flow", 0.02);
            c.scada.seed = s.value("seed", std::uint64_t{1});
            c.scada.add_slack_pmu = s.value("add_slack_pmu", true);
        }
        c.out_dir = j.value("out_dir", std::string());
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("experiment config: ") + e.what());
    }
    return c;
}

inline nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json a;
    {
        std::vector<int> buses;
        std::vector<double> angles;
        for (auto [b, deg] : attack.fixed_deg) {
            buses.push_back(b);
            angles.push_back(deg);
        }
        a = {{"buses", buses},
             {"angles_deg", angles},
             {"random", attack.random},
             {"fraction", attack.random_fraction},
             {"angle_range_deg", attack.angle_range_deg}};
    }
    return {{"case_path", case_path},
            {"placement_path", placement_path},
            {"method", method},
            {"attack", a},
            {"noise", {{"sigma_v", sigma_v}, {"sigma_i", sigma_i}}},
            {"load_scale", load_scale},
            {"load_scales", load_scales},
            {"monte_carlo", monte_carlo},
            {"base_seed", base_seed},
            {"tolerances", {{"am", am_tolerance}, {"lnrt_threshold", lnrt_threshold}}},
            {"am_max_iter", am_max_iter},
            {"am_covariance", am_covariance},
            {"attack_flag_deg", attack_flag_deg},
            {"vuln_np", vuln_np},
            {"bounds_deg", bounds_deg},
            {"vuln_equal_weights", vuln_equal_weights},
            {"vuln_grid_1d", vuln_grid_1d},
            {"scada",
             {{"fraction", scada.fraction},
              {"sigma_vmag", scada.sigma_vmag},
              {"sigma_flow", scada.sigma_flow},
              {"seed", scada.seed},
              {"add_slack_pmu", scada.add_slack_pmu}}},
            {"out_dir", out_dir}};
}

namespace detail {

struct Workspace {
    NetworkCase nc;
    AdmittanceModel adm;
    PmuPlacement placement;         ///< as listed in the placement file
    PmuPlacement hybrid_placement;  ///< plus the slack bus
};

inline Workspace load_workspace(const ExperimentConfig& cfg) {
    Workspace w;
    w.nc = parse_case(read_text_file(cfg.case_path));
    w.adm = build_admittance(w.nc);
    if (cfg.placement_path.empty())
        throw config_error("experiment needs a placement file");
    w.placement = PmuPlacement::parse(w.nc, read_text_file(cfg.placement_path));
    std::vector<int> with_slack = w.placement.pmu_buses;
    with_slack.push_back(w.nc.buses[w.nc.slack_index()].id);
    w.hybrid_placement = PmuPlacement::from_bus_ids(w.nc, with_slack);
    return w;
}

/// Attack scenario for realization i: the fixed list, or a fresh random
/// draw (set + angles) from a seed derived from the base seed.
inline AttackScenario attack_for_realization(const ExperimentConfig& cfg, const Workspace& w,
                                             const PmuPlacement& placement, int realization) {
    const double bound = deg2rad(std::max(cfg.bounds_deg, cfg.attack.angle_range_deg));
    if (!cfg.attack.random) {
        std::vector<std::pair<int, double>> rad;
        for (auto [bus, deg] : cfg.attack.fixed_deg) rad.push_back({bus, deg2rad(deg)});
        AttackScenario sc = AttackScenario::on_buses(w.nc, rad, bound);
        sc.validate(placement);
        return sc;
    }
    Rng rng(cfg.base_seed * 1000003u + 17 * static_cast<std::uint64_t>(realization) + 11);
    AttackScenario sc = AttackScenario::none(static_cast<int>(w.nc.n_buses()), bound);
    const std::size_t n_pmu = placement.pmu_buses.size();
    const std::size_t n_atk = static_cast<std::size_t>(
        std::lround(cfg.attack.random_fraction * static_cast<double>(n_pmu)));
    for (std::size_t k : rng.sample_without_replacement(n_pmu, std::min(n_atk, n_pmu))) {
        const int idx = w.nc.bus_index(placement.pmu_buses[k]);
        sc.b[idx] = 1;
        sc.delta_theta(idx) =
            rng.uniform(-deg2rad(cfg.attack.angle_range_deg), deg2rad(cfg.attack.angle_range_deg));
    }
    return sc;
}

inline double relative_angle_error(const PmuModel& model, const AttackScenario& truth,
                                   const std::vector<double>& est) {
    Vec t(static_cast<Eigen::Index>(model.sites.size()));
    Vec e(static_cast<Eigen::Index>(model.sites.size()));
    for (std::size_t s = 0; s < model.sites.size(); ++s) {
        t(static_cast<Eigen::Index>(s)) = truth.delta_theta(model.sites[s].bus_idx);
        e(static_cast<Eigen::Index>(s)) = est[s];
    }
    const double denom = t.norm();
    if (denom == 0.0) return 0.0;
    return (e - t).norm() / denom;
}

inline std::string csv_number(double x) {
    std::ostringstream os;
    os << std::setprecision(12) << x;
    return os.str();
}

} // namespace detail

/// Run one experiment. Realization i draws its noise from base_seed + i, so
/// summaries are deterministic and methods sharing a config are paired.
inline RunSummary run_experiment(const ExperimentConfig& cfg) {
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();

    detail::Workspace w = detail::load_workspace(cfg);
    const bool hybrid = cfg.method == "am_hybrid";
    const PmuPlacement& placement = hybrid ? w.hybrid_placement : w.placement;
    const int nb = static_cast<int>(w.nc.n_buses());

    RunSummary out;
    out.method = cfg.method;

    std::vector<std::string> realization_rows;
    std::vector<std::string> trace_rows;
    std::vector<std::string> scale_rows;
    nlohmann::json manifest;
    manifest["config"] = cfg.to_json();
    manifest["n_buses"] = nb;
    manifest["n_pmus"] = placement.pmu_buses.size();

    if (cfg.method == "vuln_optimal" || cfg.method == "vuln_greedy") {
        NoiseSpec ns = cfg.vuln_equal_weights ? NoiseSpec{cfg.sigma_v, cfg.sigma_v}
                                              : NoiseSpec{cfg.sigma_v, cfg.sigma_i};
        PmuModel model = build_pmu_model(w.nc, w.adm, placement, ns);
        VoltageProfile prof = solve_power_flow(w.nc, cfg.load_scale);
        BiasEvaluator eval(model, prof.v);
        Vec bounds = Vec::Constant(nb, deg2rad(cfg.bounds_deg));
        VulnSolverOptions opts;
        opts.grid_1d = cfg.vuln_grid_1d;
        VulnerabilityResult r = cfg.method == "vuln_optimal"
                                    ? find_vulnerable_optimal(eval, cfg.vuln_np, bounds, opts)
                                    : find_vulnerable_greedy(eval, cfg.vuln_np, bounds, opts);
        out.attacked_buses = r.attacked_buses;
        out.objective = r.objective;
        out.realizations = 1;
        for (int bus : r.attacked_buses)
            out.per_bus_angle_deg.push_back({bus, rad2deg(r.delta_theta(w.nc.bus_index(bus)))});

        if (!cfg.out_dir.empty()) {
            std::filesystem::create_directories(cfg.out_dir);
            std::ostringstream csv;
            csv << "rank,buses,delta_theta_deg,objective\n";
            std::vector<VulnerabilityResult::Candidate> ranked = r.log;
            std::sort(ranked.begin(), ranked.end(),
                      [](const auto& a, const auto& b) { return a.objective > b.objective; });
            nlohmann::json cands = nlohmann::json::array();
            for (std::size_t i = 0; i < ranked.size(); ++i) {
                csv << (i + 1) << ",";
                for (std::size_t k = 0; k < ranked[i].buses.size(); ++k)
                    csv << (k ? " " : "") << ranked[i].buses[k];
                csv << ",";
                for (std::size_t k = 0; k < ranked[i].buses.size(); ++k)
                    csv << (k ? " " : "")
                        << detail::csv_number(rad2deg(
                               ranked[i].delta_theta(w.nc.bus_index(ranked[i].buses[k]))));
                csv << "," << detail::csv_number(ranked[i].objective) << "\n";
                cands.push_back({{"buses", ranked[i].buses},
                                 {"objective", ranked[i].objective},
                                 {"winning_init", ranked[i].winning_init}});
            }
            write_text_file(cfg.out_dir + "/vuln.csv", csv.str());
            manifest["candidates"] = cands;
            manifest["result"] = {{"buses", r.attacked_buses}, {"objective", r.objective}};
        }
    } else {
        std::vector<double> scales =
            cfg.load_scales.empty() ? std::vector<double>{cfg.load_scale} : cfg.load_scales;
        double total_state_err = 0.0;
        double total_angle_err = 0.0;
        int total_runs = 0;
        std::vector<double> angle_acc;

        for (std::size_t si = 0; si < scales.size(); ++si) {
            VoltageProfile prof = solve_power_flow(w.nc, scales[si]);
            PmuModel model = build_pmu_model(w.nc, w.adm, placement,
                                             {cfg.sigma_v, cfg.sigma_i}, hybrid);
            if (angle_acc.empty()) angle_acc.assign(model.sites.size(), 0.0);

            // hybrid works in the slack-angle-zero gauge and reduced state
            Vec truth;
            std::optional<ScadaMeasurementSet> scada_template;
            if (hybrid) {
                const int slack = w.nc.slack_index();
                VoltageProfile rot =
                    prof.rotated(-std::atan2(prof.v(nb + slack), prof.v(slack)));
                truth = model.reduce_state(rot.v);
                scada_template = select_channels(
                    w.nc, w.adm, cfg.scada.fraction, cfg.scada.seed,
                    {cfg.scada.sigma_vmag, cfg.scada.sigma_flow});
                manifest["scada_channels"] = scada_template->size();
                manifest["scada_redundancy"] = scada_template->redundancy_ratio(nb);
            } else {
                truth = prof.v;
            }

            double scale_state_err = 0.0;
            double scale_angle_err = 0.0;
            AmConfig am_cfg;
            am_cfg.tolerance = cfg.am_tolerance;
            am_cfg.max_iter = cfg.am_max_iter;
            am_cfg.covariance_mode = cfg.am_covariance == "general"
                                         ? CovarianceMode::General
                                         : (cfg.am_covariance == "diagonal"
                                                ? CovarianceMode::Diagonal
                                                : CovarianceMode::Automatic);

            for (int i = 0; i < cfg.monte_carlo; ++i) {
                const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(i);
                AttackScenario sc = detail::attack_for_realization(cfg, w, placement, i);
                MeasurementSet ms = simulate_measurements(model, truth, sc, seed);

                double state_err = 0.0;
                double angle_err = 0.0;
                if (cfg.method == "ml") {
                    Vec est = estimate_ml(model, ms);
                    state_err = (est - truth).norm() / truth.norm();
                } else if (cfg.method == "lnrt") {
                    LnrtReport rep = run_lnrt(model, ms, cfg.lnrt_threshold);
                    state_err = (rep.v_hat - truth).norm() / truth.norm();
                } else if (cfg.method == "am" || cfg.method == "am_hybrid") {
                    AmResult r;
                    if (hybrid) {
                        ScadaMeasurementSet sm = simulate_scada(
                            w.nc, w.adm, *scada_template, truth,
                            seed * 2654435761ull + 101);
                        ScadaPrior prior = estimate_scada(w.nc, w.adm, sm);
                        r = run_am_hybrid(model, ms, prior.v_s_hat, prior.sigma_s_inv, am_cfg);
                    } else {
                        r = run_am(model, ms, am_cfg);
                    }
                    state_err = (r.v_hat - truth).norm() / truth.norm();
                    angle_err = detail::relative_angle_error(model, sc, r.delta_theta_hat);
                    for (std::size_t s = 0; s < r.delta_theta_hat.size(); ++s)
                        angle_acc[s] += rad2deg(r.delta_theta_hat[s]);
                    if (i == 0 && si == 0) {
                        trace_rows.push_back("iteration,objective");
                        for (std::size_t t = 0; t < r.objective_trace.size(); ++t)
                            trace_rows.push_back(std::to_string(t) + "," +
                                                 detail::csv_number(r.objective_trace[t]));
                    }
                } else {
                    throw config_error("unknown method '" + cfg.method + "'");
                }
                scale_state_err += state_err;
                scale_angle_err += angle_err;
                realization_rows.push_back(std::to_string(total_runs) + "," +
                                           detail::csv_number(scales[si]) + "," +
                                           std::to_string(seed) + "," +
                                           detail::csv_number(state_err) + "," +
                                           detail::csv_number(angle_err));
                ++total_runs;
            }
            total_state_err += scale_state_err;
            total_angle_err += scale_angle_err;
            scale_rows.push_back(detail::csv_number(scales[si]) + "," +
                                 detail::csv_number(scale_state_err / cfg.monte_carlo) + "," +
                                 detail::csv_number(scale_angle_err / cfg.monte_carlo));
        }

        out.realizations = total_runs;
        out.relative_state_error = total_state_err / total_runs;
        out.relative_angle_error = total_angle_err / total_runs;

        if (!angle_acc.empty() && (cfg.method == "am" || cfg.method == "am_hybrid")) {
            PmuModel model = build_pmu_model(w.nc, w.adm, placement, {cfg.sigma_v, cfg.sigma_i},
                                             hybrid);
            for (std::size_t s = 0; s < model.sites.size(); ++s) {
                const double mean_deg = angle_acc[s] / total_runs;
                out.per_bus_angle_deg.push_back({model.sites[s].bus_id, mean_deg});
                if (std::abs(mean_deg) > cfg.attack_flag_deg)
                    out.flagged_attacked.push_back(model.sites[s].bus_id);
            }
        }
    }

    out.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        {
            // wall time lives in the manifest so CSV artifacts stay
            // byte-identical across reruns
            std::ostringstream os;
            os << "method,realizations,relative_state_error,relative_angle_error\n"
               << out.method << "," << out.realizations << ","
               << detail::csv_number(out.relative_state_error) << ","
               << detail::csv_number(out.relative_angle_error) << "\n";
            write_text_file(cfg.out_dir + "/summary.csv", os.str());
        }
        if (!realization_rows.empty()) {
            std::ostringstream os;
            os << "realization,load_scale,seed,relative_state_error,relative_angle_error\n";
            for (const auto& r : realization_rows) os << r << "\n";
            write_text_file(cfg.out_dir + "/realizations.csv", os.str());
        }
        if (!trace_rows.empty()) {
            std::ostringstream os;
            for (const auto& r : trace_rows) os << r << "\n";
            write_text_file(cfg.out_dir + "/trace.csv", os.str());
        }
        if (scale_rows.size() > 1) {
            std::ostringstream os;
            os << "load_scale,relative_state_error,relative_angle_error\n";
            for (const auto& r : scale_rows) os << r << "\n";
            write_text_file(cfg.out_dir + "/scale_series.csv", os.str());
        }
        if (!out.per_bus_angle_deg.empty()) {
            std::ostringstream os;
            os << "bus,mean_angle_deg,flagged_attacked\n";
            for (auto [bus, deg] : out.per_bus_angle_deg)
                os << bus << "," << detail::csv_number(deg) << ","
                   << (std::abs(deg) > cfg.attack_flag_deg ? 1 : 0) << "\n";
            write_text_file(cfg.out_dir + "/angles.csv", os.str());
        }
        manifest["summary"] = {{"method", out.method},
                               {"realizations", out.realizations},
                               {"relative_state_error", out.relative_state_error},
                               {"relative_angle_error", out.relative_angle_error},
                               {"wall_seconds", out.wall_seconds}};
        if (!out.attacked_buses.empty()) {
            manifest["summary"]["attacked_buses"] = out.attacked_buses;
            manifest["summary"]["objective"] = out.objective;
        }
        write_text_file(cfg.out_dir + "/manifest.json", manifest.dump(2) + "\n");
    }
    return out;
}

/// Paired multi-method comparison: every config must share the scenario
/// (case, placement, attack, seeds); each method consumes identical noise.
inline std::vector<RunSummary> compare_methods(const std::vector<ExperimentConfig>& configs) {
    if (configs.empty()) throw config_error("compare needs at least one config");
    for (const auto& c : configs) {
        if (c.case_path != configs[0].case_path ||
            c.placement_path != configs[0].placement_path ||
            c.base_seed != configs[0].base_seed || c.monte_carlo != configs[0].monte_carlo)
            throw config_error("compare_methods: scenario keys differ between configs");
        if (c.attack.fixed_deg != configs[0].attack.fixed_deg ||
            c.attack.random != configs[0].attack.random)
            throw config_error("compare_methods: attack differs between configs");
    }
    std::vector<RunSummary> out;
    for (const auto& c : configs) out.push_back(run_experiment(c));

    if (!configs[0].out_dir.empty()) {
        std::ostringstream os;
        os << "method,realizations,relative_state_error,relative_angle_error,wall_seconds\n";
        for (const auto& r : out)
            os << r.method << "," << r.realizations << ","
               << detail::csv_number(r.relative_state_error) << ","
               << detail::csv_number(r.relative_angle_error) << ","
               << detail::csv_number(r.wall_seconds) << "\n";
        std::filesystem::create_directories(configs[0].out_dir);
        write_text_file(configs[0].out_dir + "/comparison.csv", os.str());
    }
    return out;
}

} // namespace tsase
