// Command-line harness: power flow, measurement simulation, estimation,
// attack reconstruction, bad-data baseline, vulnerability search, and
// multi-method comparisons over the shipped network fixtures.

#include "tsase/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace tsase;

std::vector<std::pair<int, double>> parse_attack_list(const std::string& text) {
    // "6:30,14:45" -> {(6,30),(14,45)} in degrees
    std::vector<std::pair<int, double>> out;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto colon = item.find(':');
        if (colon == std::string::npos)
            throw config_error("attack entry '" + item + "' is not bus:angle_deg");
        out.push_back({std::stoi(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
    }
    return out;
}

struct CommonArgs {
    std::string config_path;
    std::string case_path;
    std::string placement_path;
    std::string attack;
    std::string out_dir;
    int monte_carlo = -1;
    std::uint64_t base_seed = 0;
    bool have_seed = false;
    double sigma_v = -1.0, sigma_i = -1.0;
    double load_scale = -1.0;
    std::string load_scales;
    double tolerance = -1.0;
    double random_fraction = -1.0;
    double angle_range_deg = -1.0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config (structured document)");
    cmd->add_option("--case", args.case_path, "network case file");
    cmd->add_option("--placement", args.placement_path, "PMU placement file");
    cmd->add_option("--attack", args.attack, "attack list, e.g. 6:30,14:45 (degrees)");
    cmd->add_option("-o,--out", args.out_dir, "output directory for CSV artifacts");
    cmd->add_option("--realizations", args.monte_carlo, "Monte-Carlo realization count");
    cmd->add_option("--seed", args.base_seed, "base seed")->each([&](const std::string&) {
        args.have_seed = true;
    });
    cmd->add_option("--sigma-v", args.sigma_v, "voltage-channel noise std dev");
    cmd->add_option("--sigma-i", args.sigma_i, "current-channel noise std dev");
    cmd->add_option("--load-scale", args.load_scale, "demand scaling factor");
    cmd->add_option("--load-scales", args.load_scales,
                    "comma-separated demand scaling series (e.g. hourly profile)");
    cmd->add_option("--tol", args.tolerance, "solver tolerance");
    cmd->add_option("--random-attack", args.random_fraction,
                    "attack a random PMU subset of this fraction per realization");
    cmd->add_option("--angle-range-deg", args.angle_range_deg,
                    "random attack angles drawn uniformly in +-range");
}

ExperimentConfig resolve(const CommonArgs& args, const std::string& method) {
    ExperimentConfig cfg;
    if (!args.config_path.empty()) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(read_text_file(args.config_path));
        } catch (const nlohmann::json::exception& e) {
            throw config_error(std::string("config: ") + e.what());
        }
        cfg = ExperimentConfig::from_json(doc);
    }
    cfg.method = method;
    if (!args.case_path.empty()) cfg.case_path = args.case_path;
    if (!args.placement_path.empty()) cfg.placement_path = args.placement_path;
    if (!args.attack.empty()) cfg.attack.fixed_deg = parse_attack_list(args.attack);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.monte_carlo > 0) cfg.monte_carlo = args.monte_carlo;
    if (args.have_seed) cfg.base_seed = args.base_seed;
    if (args.sigma_v > 0) cfg.sigma_v = args.sigma_v;
    if (args.sigma_i > 0) cfg.sigma_i = args.sigma_i;
    if (args.load_scale > 0) cfg.load_scale = args.load_scale;
    if (!args.load_scales.empty()) {
        cfg.load_scales.clear();
        std::istringstream ss(args.load_scales);
        std::string tok;
        while (std::getline(ss, tok, ',')) cfg.load_scales.push_back(std::stod(tok));
    }
    if (args.tolerance > 0) cfg.am_tolerance = args.tolerance;
    if (args.random_fraction > 0) {
        cfg.attack.random = true;
        cfg.attack.random_fraction = args.random_fraction;
    }
    if (args.angle_range_deg > 0) cfg.attack.angle_range_deg = args.angle_range_deg;
    if (cfg.case_path.empty()) throw config_error("a case file is required (--case or config)");
    return cfg;
}

void print_summary(const RunSummary& s) {
    std::cout << "method: " << s.method << "\n";
    if (!s.attacked_buses.empty()) {
        std::cout << "most vulnerable buses:";
        for (int b : s.attacked_buses) std::cout << " " << b;
        std::cout << "\nobjective: " << s.objective << "\n";
        for (auto [bus, deg] : s.per_bus_angle_deg)
            std::cout << "  bus " << bus << "  delta_theta " << deg << " deg\n";
        return;
    }
    std::cout << "realizations: " << s.realizations << "\n";
    std::cout << "relative state error: " << s.relative_state_error << "\n";
    if (s.method == "am" || s.method == "am_hybrid") {
        std::cout << "relative angle error: " << s.relative_angle_error << "\n";
        if (!s.flagged_attacked.empty()) {
            std::cout << "flagged attacked buses:";
            for (int b : s.flagged_attacked) std::cout << " " << b;
            std::cout << "\n";
        }
    }
    std::cout << "wall seconds: " << s.wall_seconds << "\n";
}

int run_cli(int argc, char** argv) {
    CLI::App app{"PMU time-synchronization-attack analysis toolkit"};
    app.require_subcommand(1);

    // pf
    auto* pf = app.add_subcommand("pf", "solve the power flow and write a voltage profile");
    std::string pf_case, pf_out;
    double pf_scale = 1.0;
    pf->add_option("--case", pf_case, "network case file")->required();
    pf->add_option("--load-scale", pf_scale, "demand scaling factor");
    pf->add_option("-o,--out", pf_out, "profile output path");

    // simulate
    auto* sim = app.add_subcommand("simulate", "simulate (possibly attacked) PMU measurements");
    CommonArgs sim_args;
    add_common(sim, sim_args);
    std::string sim_profile, sim_out;
    double sim_noise_scale = 1.0;
    sim->add_option("--profile", sim_profile, "voltage profile file (default: solve power flow)");
    sim->add_option("--measurements-out", sim_out, "measurement file to write")->required();
    sim->add_option("--noise-scale", sim_noise_scale, "noise multiplier (0 = noiseless)");

    // estimate
    auto* est = app.add_subcommand("estimate", "closed-form WLS state estimate");
    CommonArgs est_args;
    add_common(est, est_args);
    std::string est_meas, est_state_out, est_metrics_out;
    est->add_option("--measurements", est_meas, "measurement file (else simulated per config)");
    est->add_option("--state-out", est_state_out, "write the estimated profile here");
    est->add_option("--metrics-out", est_metrics_out, "write estimator metrics CSV here");

    // am / am-hybrid / lnrt
    auto* am = app.add_subcommand("am", "joint state and attack-angle reconstruction");
    CommonArgs am_args;
    add_common(am, am_args);
    std::string am_meas;
    int am_max_iter = -1;
    std::string am_cov;
    am->add_option("--measurements", am_meas, "measurement file (else Monte-Carlo per config)");
    am->add_option("--max-iter", am_max_iter, "maximum sweeps");
    am->add_option("--covariance", am_cov, "gamma update path: auto|general|diagonal");

    auto* amh = app.add_subcommand("am-hybrid", "reconstruction with a SCADA prior");
    CommonArgs amh_args;
    add_common(amh, amh_args);
    double amh_fraction = -1.0;
    std::uint64_t amh_seed = 0;
    bool amh_have_seed = false;
    amh->add_option("--scada-fraction", amh_fraction, "SCADA channel fraction");
    amh->add_option("--scada-seed", amh_seed, "SCADA selection seed")
        ->each([&](const std::string&) { amh_have_seed = true; });

    auto* lnrt = app.add_subcommand("lnrt", "largest-normalized-residual baseline");
    CommonArgs lnrt_args;
    add_common(lnrt, lnrt_args);
    std::string lnrt_meas;
    double lnrt_threshold = -1.0;
    lnrt->add_option("--measurements", lnrt_meas, "measurement file (else per config)");
    lnrt->add_option("--threshold", lnrt_threshold, "normalized-residual removal threshold");

    // vuln
    auto* vuln = app.add_subcommand("vuln", "rank the most vulnerable PMU locations");
    CommonArgs vuln_args;
    add_common(vuln, vuln_args);
    std::size_t vuln_np = 1;
    double vuln_bounds = 70.0;
    bool vuln_greedy = false;
    bool vuln_estimation_weights = false;
    vuln->add_option("--np", vuln_np, "number of attacked PMUs");
    vuln->add_option("--bounds-deg", vuln_bounds, "attack-angle box, degrees");
    vuln->add_flag("--greedy", vuln_greedy, "greedy search instead of exhaustive");
    vuln->add_flag("--estimation-weights", vuln_estimation_weights,
                   "use the estimation noise weights instead of equal weights");

    // compare
    auto* cmp = app.add_subcommand("compare", "paired multi-method comparison");
    std::string cmp_config;
    cmp->add_option("--config", cmp_config, "comparison config document")->required();

    CLI11_PARSE(app, argc, argv);

    if (pf->parsed()) {
        NetworkCase nc = parse_case(read_text_file(pf_case));
        VoltageProfile prof = solve_power_flow(nc, pf_scale);
        if (!pf_out.empty()) {
            write_text_file(pf_out, emit_profile(prof));
            std::cout << "profile written to " << pf_out << "\n";
        } else {
            std::cout << emit_profile(prof);
        }
        return 0;
    }

    if (sim->parsed()) {
        ExperimentConfig cfg = resolve(sim_args, "am");
        NetworkCase nc = parse_case(read_text_file(cfg.case_path));
        AdmittanceModel adm = build_admittance(nc);
        if (cfg.placement_path.empty()) throw config_error("simulate needs a placement");
        PmuPlacement pl = PmuPlacement::parse(nc, read_text_file(cfg.placement_path));
        PmuModel model = build_pmu_model(nc, adm, pl, {cfg.sigma_v, cfg.sigma_i});
        VoltageProfile prof =
            sim_profile.empty()
                ? solve_power_flow(nc, cfg.load_scale)
                : parse_profile(read_text_file(sim_profile),
                                static_cast<Eigen::Index>(nc.n_buses()));
        std::vector<std::pair<int, double>> rad;
        for (auto [bus, deg] : cfg.attack.fixed_deg) rad.push_back({bus, deg2rad(deg)});
        AttackScenario sc = AttackScenario::on_buses(nc, rad, deg2rad(180.0));
        sc.validate(pl);
        MeasurementSet ms =
            simulate_measurements(model, prof.v, sc, cfg.base_seed, sim_noise_scale);
        write_text_file(sim_out, emit_measurements(model, ms));
        std::cout << "measurements written to " << sim_out << "\n";
        return 0;
    }

    if (est->parsed()) {
        ExperimentConfig cfg = resolve(est_args, "ml");
        if (est_meas.empty()) {
            print_summary(run_experiment(cfg));
            return 0;
        }
        NetworkCase nc = parse_case(read_text_file(cfg.case_path));
        AdmittanceModel adm = build_admittance(nc);
        PmuPlacement pl = PmuPlacement::parse(nc, read_text_file(cfg.placement_path));
        PmuModel model = build_pmu_model(nc, adm, pl, {cfg.sigma_v, cfg.sigma_i});
        MeasurementSet ms = parse_measurements(model, read_text_file(est_meas));
        GainMatrix gain = GainMatrix::build(model);
        if (gain.ill_conditioned())
            std::cerr << "warning: gain matrix condition estimate above 1e12\n";
        Vec est_v = estimate_ml(model, ms, gain);
        VoltageProfile prof{est_v};
        if (!est_state_out.empty()) write_text_file(est_state_out, emit_profile(prof));
        if (!est_metrics_out.empty()) {
            // with a declared attack the closed-form statistics are exact;
            // otherwise only the covariance trace applies
            std::ostringstream os;
            os << std::setprecision(12);
            if (!cfg.attack.fixed_deg.empty()) {
                VoltageProfile truth = solve_power_flow(nc, cfg.load_scale);
                std::vector<std::pair<int, double>> rad;
                for (auto [bus, deg] : cfg.attack.fixed_deg)
                    rad.push_back({bus, deg2rad(deg)});
                AttackScenario sc = AttackScenario::on_buses(nc, rad, deg2rad(180.0));
                EstimatorStats st = attacked_stats(model, sc, truth.v);
                os << "bias_norm,mse,trace_g_inverse\n"
                   << st.bias.norm() << "," << st.mse << "," << gain.trace_inverse() << "\n";
            } else {
                os << "bias_norm,mse,trace_g_inverse\n"
                   << 0.0 << "," << gain.trace_inverse() << "," << gain.trace_inverse() << "\n";
            }
            write_text_file(est_metrics_out, os.str());
        }
        std::cout << emit_profile(prof);
        return 0;
    }

    auto run_measurement_method = [&](const CommonArgs& args, const std::string& method,
                                      const std::string& meas_path) -> int {
        ExperimentConfig cfg = resolve(args, method);
        if (am_max_iter > 0) cfg.am_max_iter = am_max_iter;
        if (!am_cov.empty()) cfg.am_covariance = am_cov;
        if (lnrt_threshold > 0) cfg.lnrt_threshold = lnrt_threshold;
        if (method == "am_hybrid") {
            if (amh_fraction > 0) cfg.scada.fraction = amh_fraction;
            if (amh_have_seed) cfg.scada.seed = amh_seed;
        }
        if (meas_path.empty()) {
            print_summary(run_experiment(cfg));
            return 0;
        }
        // single-shot file mode
        NetworkCase nc = parse_case(read_text_file(cfg.case_path));
        AdmittanceModel adm = build_admittance(nc);
        PmuPlacement pl = PmuPlacement::parse(nc, read_text_file(cfg.placement_path));
        PmuModel model = build_pmu_model(nc, adm, pl, {cfg.sigma_v, cfg.sigma_i});
        MeasurementSet ms = parse_measurements(model, read_text_file(meas_path));
        if (method == "lnrt") {
            LnrtReport rep = run_lnrt(model, ms, cfg.lnrt_threshold);
            std::cout << "rounds: " << rep.rounds << "\n";
            std::cout << "removed channels (bus, channel, normalized residual):\n";
            for (const auto& r : rep.removed)
                std::cout << "  " << r.channel.bus_id << ", " << r.channel.channel << ", "
                          << r.normalized_residual << "\n";
            std::cout << "final max normalized residual: " << rep.final_max_normalized_residual
                      << "\n";
            std::cout << emit_profile(VoltageProfile{rep.v_hat});
            if (!cfg.out_dir.empty()) {
                std::filesystem::create_directories(cfg.out_dir);
                std::ostringstream os;
                os << "round,bus,channel,normalized_residual\n";
                for (std::size_t i = 0; i < rep.removed.size(); ++i)
                    os << (i + 1) << "," << rep.removed[i].channel.bus_id << ","
                       << rep.removed[i].channel.channel << ","
                       << rep.removed[i].normalized_residual << "\n";
                write_text_file(cfg.out_dir + "/lnrt_removals.csv", os.str());
            }
            return 0;
        }
        AmConfig acfg;
        acfg.tolerance = cfg.am_tolerance;
        acfg.max_iter = cfg.am_max_iter;
        acfg.covariance_mode =
            cfg.am_covariance == "general"
                ? CovarianceMode::General
                : (cfg.am_covariance == "diagonal" ? CovarianceMode::Diagonal
                                                   : CovarianceMode::Automatic);
        AmResult r = run_am(model, ms, acfg);
        std::cout << "converged: " << (r.converged ? "yes" : "no")
                  << "  sweeps: " << r.iterations << "\n";
        std::cout << "bus, delta_theta_deg, flagged\n";
        for (std::size_t s = 0; s < r.pmu_buses.size(); ++s) {
            const double deg = rad2deg(r.delta_theta_hat[s]);
            std::cout << "  " << r.pmu_buses[s] << ", " << deg << ", "
                      << (std::abs(deg) > cfg.attack_flag_deg ? 1 : 0) << "\n";
        }
        std::cout << emit_profile(VoltageProfile{r.v_hat});
        if (!cfg.out_dir.empty()) {
            std::filesystem::create_directories(cfg.out_dir);
            std::ostringstream os;
            os << "iteration,objective\n";
            for (std::size_t i = 0; i < r.objective_trace.size(); ++i)
                os << i << "," << std::setprecision(12) << r.objective_trace[i] << "\n";
            write_text_file(cfg.out_dir + "/trace.csv", os.str());
        }
        return 0;
    };

    if (am->parsed()) return run_measurement_method(am_args, "am", am_meas);
    if (amh->parsed()) return run_measurement_method(amh_args, "am_hybrid", "");
    if (lnrt->parsed()) return run_measurement_method(lnrt_args, "lnrt", lnrt_meas);

    if (vuln->parsed()) {
        ExperimentConfig cfg = resolve(vuln_args, vuln_greedy ? "vuln_greedy" : "vuln_optimal");
        cfg.vuln_np = vuln_np;
        cfg.bounds_deg = vuln_bounds;
        if (vuln_estimation_weights) cfg.vuln_equal_weights = false;
        print_summary(run_experiment(cfg));
        return 0;
    }

    if (cmp->parsed()) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(read_text_file(cmp_config));
        } catch (const nlohmann::json::exception& e) {
            throw config_error(std::string("config: ") + e.what());
        }
        std::vector<ExperimentConfig> configs;
        if (doc.contains("base") && doc.contains("methods")) {
            ExperimentConfig base = ExperimentConfig::from_json(doc.at("base"));
            for (const auto& m : doc.at("methods")) {
                ExperimentConfig c = base;
                c.method = m.get<std::string>();
                configs.push_back(c);
            }
        } else if (doc.is_array()) {
            for (const auto& j : doc) configs.push_back(ExperimentConfig::from_json(j));
        } else {
            throw config_error("compare config must be an array or {base, methods}");
        }
        auto rows = compare_methods(configs);
        std::cout << "method, relative_state_error, relative_angle_error, wall_seconds\n";
        for (const auto& r : rows)
            std::cout << r.method << ", " << r.relative_state_error << ", "
                      << r.relative_angle_error << ", " << r.wall_seconds << "\n";
        return 0;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const tsase::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const tsase::numerical_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const tsase::io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
