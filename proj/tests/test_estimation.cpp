#include "helpers.hpp"

#include "tsase/estimation.hpp"

#include <catch2/catch.hpp>

using namespace tsase;
using testutil::load_case;
using testutil::load_placement;

namespace {

struct Fixture {
    NetworkCase nc;
    AdmittanceModel adm;
    PmuPlacement pl;
    PmuModel model;
    VoltageProfile prof;
};

Fixture make14() {
    Fixture f;
    f.nc = load_case("case14.case");
    f.adm = build_admittance(f.nc);
    f.pl = load_placement(f.nc, "placement14.txt");
    f.model = build_pmu_model(f.nc, f.adm, f.pl);
    f.prof = solve_power_flow(f.nc, 1.0);
    return f;
}

} // namespace

TEST_CASE("gain matrix is nonsingular for the shipped placements") {
    for (auto [cname, pname] :
         {std::pair{"case14.case", "placement14.txt"}, {"case30.case", "placement30.txt"},
          {"case118.case", "placement118.txt"}}) {
        NetworkCase nc = load_case(cname);
        AdmittanceModel adm = build_admittance(nc);
        PmuPlacement pl = load_placement(nc, pname);
        PmuModel model = build_pmu_model(nc, adm, pl);
        GainMatrix g = GainMatrix::build(model);
        REQUIRE(g.rcond() > 1e-12);
        REQUIRE_FALSE(g.ill_conditioned());
    }
}

TEST_CASE("unobservable placement is rejected") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    // a single PMU cannot observe the whole 14-bus network
    PmuPlacement pl = PmuPlacement::from_bus_ids(nc, {10});
    PmuModel model = build_pmu_model(nc, adm, pl);
    REQUIRE_THROWS_AS(GainMatrix::build(model), numerical_error);
}

TEST_CASE("noiseless measurements recover the exact state") {
    Fixture f = make14();
    MeasurementSet ms =
        simulate_measurements(f.model, f.prof.v, AttackScenario::none(14), 1, 0.0);
    Vec est = estimate_ml(f.model, ms);
    REQUIRE((est - f.prof.v).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("normal-equation residual is tiny") {
    Fixture f = make14();
    MeasurementSet ms = simulate_measurements(f.model, f.prof.v, AttackScenario::none(14), 3);
    GainMatrix g = GainMatrix::build(f.model);
    Vec rhs = normal_rhs(f.model, ms);
    Vec est = g.solve(rhs);
    REQUIRE((g.matrix() * est - rhs).norm() <= 1e-10 * rhs.norm());
}

TEST_CASE("estimator is linear in the measurements") {
    Fixture f = make14();
    GainMatrix g = GainMatrix::build(f.model);
    MeasurementSet z1 = simulate_measurements(f.model, f.prof.v, AttackScenario::none(14), 5);
    MeasurementSet z2 = simulate_measurements(f.model, f.prof.v, AttackScenario::none(14), 6);
    const double a = 0.7, b = -1.3;
    MeasurementSet mix = z1;
    for (std::size_t i = 0; i < mix.entries.size(); ++i)
        mix.entries[i].z = a * z1.entries[i].z + b * z2.entries[i].z;
    Vec lhs = estimate_ml(f.model, mix, g);
    Vec rhs = a * estimate_ml(f.model, z1, g) + b * estimate_ml(f.model, z2, g);
    REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));
}

TEST_CASE("Monte-Carlo covariance of ML estimates matches G inverse") {
    Fixture f = make14();
    GainMatrix g = GainMatrix::build(f.model);
    const int draws = 10000;
    Mat acc = Mat::Zero(28, 28);
    Vec mean = Vec::Zero(28);
    std::vector<Vec> ests;
    ests.reserve(draws);
    for (int k = 0; k < draws; ++k) {
        MeasurementSet ms =
            simulate_measurements(f.model, f.prof.v, AttackScenario::none(14), 50000 + k);
        ests.push_back(estimate_ml(f.model, ms, g));
        mean += ests.back();
    }
    mean /= draws;
    for (const Vec& e : ests) acc.noalias() += (e - mean) * (e - mean).transpose();
    acc /= (draws - 1);
    Mat ginv = g.inverse();
    REQUIRE((acc - ginv).norm() <= 0.10 * ginv.norm());
    // unbiasedness without attack
    double bound = 4.0 * std::sqrt(ginv.trace() / draws);
    REQUIRE((mean - f.prof.v).norm() <= bound);
}

TEST_CASE("zero attack gives zero bias and mean equal to the state") {
    Fixture f = make14();
    EstimatorStats st = attacked_stats(f.model, AttackScenario::none(14), f.prof.v);
    REQUIRE(st.bias.cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((st.mean - f.prof.v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("MSE equals trace of covariance plus squared bias norm") {
    Fixture f = make14();
    Rng rng(21);
    for (int t = 0; t < 25; ++t) {
        // random attacked subset of PMU buses with random angles
        std::vector<std::pair<int, double>> attacks;
        for (int bus : f.pl.pmu_buses)
            if (rng.uniform() < 0.5) attacks.push_back({bus, rng.uniform(-1.2, 1.2)});
        AttackScenario sc = attacks.empty() ? AttackScenario::none(14)
                                            : AttackScenario::on_buses(f.nc, attacks, 1.25);
        EstimatorStats st = attacked_stats(f.model, sc, f.prof.v);
        double expect = st.covariance.trace() + st.bias.squaredNorm();
        REQUIRE(st.mse == Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("attacked mean matches Monte-Carlo average") {
    Fixture f = make14();
    AttackScenario sc = AttackScenario::on_buses(f.nc, {{6, deg2rad(60.0)}});
    EstimatorStats st = attacked_stats(f.model, sc, f.prof.v);
    GainMatrix g = GainMatrix::build(f.model);
    const int draws = 10000;
    Vec mean = Vec::Zero(28);
    for (int k = 0; k < draws; ++k) {
        MeasurementSet ms = simulate_measurements(f.model, f.prof.v, sc, 90000 + k);
        mean += estimate_ml(f.model, ms, g);
    }
    mean /= draws;
    Mat ginv = g.inverse();
    for (Eigen::Index i = 0; i < 28; ++i) {
        double se = std::sqrt(ginv(i, i) / draws);
        REQUIRE(std::abs(mean(i) - st.mean(i)) <= 3.0 * se + 1e-12);
    }
}

TEST_CASE("bias_vector agrees with attacked_stats") {
    Fixture f = make14();
    AttackScenario sc =
        AttackScenario::on_buses(f.nc, {{6, deg2rad(35.0)}, {14, deg2rad(-50.0)}});
    Vec b1 = bias_vector(f.model, sc, f.prof.v);
    EstimatorStats st = attacked_stats(f.model, sc, f.prof.v);
    REQUIRE((b1 - st.bias).cwiseAbs().maxCoeff() < 1e-12);
    // zero attack gives the zero vector
    Vec b0 = bias_vector(f.model, AttackScenario::none(14), f.prof.v);
    REQUIRE(b0.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("analytic bias gradient matches central differences") {
    Fixture f = make14();
    BiasEvaluator eval(f.model, f.prof.v);
    std::vector<int> sites = {eval.site_of_bus_idx(f.nc.bus_index(6)),
                              eval.site_of_bus_idx(f.nc.bus_index(14))};
    Rng rng(17);
    for (int t = 0; t < 10; ++t) {
        Vec theta(2);
        theta << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
        Vec grad = eval.bias_norm2_gradient(sites, theta);
        const double h = 1e-6;
        for (int k = 0; k < 2; ++k) {
            Vec tp = theta, tm = theta;
            tp(k) += h;
            tm(k) -= h;
            double fp = eval.bias(sites, tp).squaredNorm();
            double fm = eval.bias(sites, tm).squaredNorm();
            double fd = (fp - fm) / (2.0 * h);
            REQUIRE(grad(k) == Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("MAP estimate reduces to ML with zero prior precision") {
    Fixture f = make14();
    MeasurementSet ms = simulate_measurements(f.model, f.prof.v, AttackScenario::none(14), 77);
    Vec ml = estimate_ml(f.model, ms);
    Vec map = estimate_map(f.model, ms, Vec::Zero(28), Mat::Zero(28, 28));
    REQUIRE((ml - map).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("MAP estimate approaches the prior as precision grows") {
    Fixture f = make14();
    MeasurementSet ms = simulate_measurements(f.model, f.prof.v, AttackScenario::none(14), 78);
    Vec prior = f.prof.v * 1.01;
    Vec map = estimate_map(f.model, ms, prior, 1e12 * Mat::Identity(28, 28));
    REQUIRE((map - prior).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("reduced-dimension MAP with exact prior recovers the state") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    // hybrid placement: Table II plus the slack bus
    PmuPlacement pl = PmuPlacement::from_bus_ids(nc, {1, 2, 4, 6, 7, 10, 14});
    PmuModel model = build_pmu_model(nc, adm, pl, {}, true);
    REQUIRE(model.state_dim == 27);
    VoltageProfile prof = solve_power_flow(nc, 1.0);
    const int slack = nc.slack_index();
    VoltageProfile rotated = prof.rotated(-std::atan2(prof.v(14 + slack), prof.v(slack)));
    Vec v_red = model.reduce_state(rotated.v);
    MeasurementSet ms = simulate_measurements(model, v_red, AttackScenario::none(14), 2, 0.0);
    Vec est = estimate_map(model, ms, v_red, Mat::Identity(27, 27));
    REQUIRE((est - v_red).cwiseAbs().maxCoeff() < 1e-8);
}
