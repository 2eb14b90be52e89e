#include "helpers.hpp"

#include "tsase/estimation.hpp"
#include "tsase/pmu.hpp"

#include <catch2/catch.hpp>

using namespace tsase;
using testutil::load_case;
using testutil::load_placement;

TEST_CASE("two-bus H matrix is hand-computable") {
    NetworkCase nc = parse_case(testutil::kTwoBusCase);
    AdmittanceModel adm = build_admittance(nc);
    PmuPlacement pl = PmuPlacement::from_bus_ids(nc, {1});
    PmuModel model = build_pmu_model(nc, adm, pl);
    REQUIRE(model.sites.size() == 1);
    const PmuSite& site = model.sites[0];
    REQUIRE(site.h.rows() == 4);
    REQUIRE(site.h.cols() == 4);
    // voltage selector pair
    REQUIRE(site.h(0, 0) == 1.0);
    REQUIRE(site.h(1, 2) == 1.0);
    // current pair: real expansion of the complex row [-10j, 10j]
    REQUIRE(site.h(2, 0) == Approx(0.0).margin(1e-15));
    REQUIRE(site.h(2, 2) == Approx(10.0));  // -Im(y_ff)
    REQUIRE(site.h(2, 3) == Approx(-10.0)); // -Im(y_ft)
    REQUIRE(site.h(3, 0) == Approx(-10.0)); // Im(y_ff)
    REQUIRE(site.h(3, 1) == Approx(10.0));  // Im(y_ft)
}

TEST_CASE("H_n v equals complex-domain phasor evaluation") {
    // oracle: compute the PMU quantities with complex arithmetic
    for (const char* name : {"case14.case", "case118.case"}) {
        NetworkCase nc = load_case(name);
        AdmittanceModel adm = build_admittance(nc);
        PmuPlacement pl = load_placement(
            nc, std::string(name) == "case14.case" ? "placement14.txt" : "placement118.txt");
        PmuModel model = build_pmu_model(nc, adm, pl);
        const int nb = static_cast<int>(nc.n_buses());
        Rng rng(7);
        Vec v(2 * nb);
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(-1.0, 1.0);
        CVec vc = complex_voltage(v);
        for (const auto& site : model.sites) {
            Vec z = site.h * v;
            REQUIRE(z(0) == Approx(vc(site.bus_idx).real()).margin(1e-12));
            REQUIRE(z(1) == Approx(vc(site.bus_idx).imag()).margin(1e-12));
            for (std::size_t c = 1; c < site.channels.size(); ++c) {
                const auto& ch = site.channels[c];
                auto it = adm.branch_index.find({ch.from_bus, ch.to_bus, ch.ordinal});
                Complex current;
                if (it != adm.branch_index.end()) {
                    current = (adm.yfrom.row(it->second) * vc).value();
                } else {
                    int row = adm.branch_index.at({ch.to_bus, ch.from_bus, ch.ordinal});
                    current = (adm.yto.row(row) * vc).value();
                }
                REQUIRE(z(2 * c) == Approx(current.real()).margin(1e-12));
                REQUIRE(z(2 * c + 1) == Approx(current.imag()).margin(1e-12));
            }
        }
    }
}

TEST_CASE("placement size mismatch rejected") {
    NetworkCase nc = parse_case(testutil::kTwoBusCase);
    AdmittanceModel adm = build_admittance(nc);
    PmuPlacement pl;
    pl.a = {1, 0, 0};
    pl.pmu_buses = {1};
    REQUIRE_THROWS_AS(build_pmu_model(nc, adm, pl), config_error);
}

TEST_CASE("gamma matrix structure") {
    SECTION("zero angle gives identity") {
        Mat g = gamma_matrix(0.0, 3);
        REQUIRE((g - Mat::Identity(8, 8)).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("quarter turn with one line") {
        Mat g = gamma_matrix(kPi / 2.0, 1);
        REQUIRE(g.rows() == 4);
        Mat block = g.block(0, 0, 2, 2);
        REQUIRE(block(0, 0) == Approx(0.0).margin(1e-15));
        REQUIRE(block(0, 1) == Approx(-1.0));
        REQUIRE(block(1, 0) == Approx(1.0));
        REQUIRE((g.block(2, 2, 2, 2) - block).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("orthonormal with unit-determinant blocks") {
        Rng rng(3);
        for (int t = 0; t < 20; ++t) {
            double theta = rng.uniform(-kPi, kPi);
            int lines = 1 + static_cast<int>(rng.uniform_index(4));
            Mat g = gamma_matrix(theta, lines);
            Mat eye = g.transpose() * g;
            REQUIRE((eye - Mat::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff() < 1e-14);
            for (int b = 0; b < g.rows(); b += 2) {
                double det = g(b, b) * g(b + 1, b + 1) - g(b, b + 1) * g(b + 1, b);
                REQUIRE(det == Approx(1.0).margin(1e-14));
            }
        }
    }
}

TEST_CASE("gamma group properties") {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
        double a = rng.uniform(-kPi, kPi), b = rng.uniform(-kPi, kPi);
        Mat ga = gamma_matrix(a, 2), gb = gamma_matrix(b, 2);
        REQUIRE((ga * gb - gamma_matrix(a + b, 2)).cwiseAbs().maxCoeff() < 1e-14);
        REQUIRE((gamma_matrix(-a, 2) - ga.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("noiseless unattacked measurements equal H v") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    PmuPlacement pl = load_placement(nc, "placement14.txt");
    PmuModel model = build_pmu_model(nc, adm, pl);
    VoltageProfile prof = solve_power_flow(nc, 1.0);
    AttackScenario attack = AttackScenario::none(14);
    MeasurementSet ms = simulate_measurements(model, prof.v, attack, 1, 0.0);
    for (const auto& site : model.sites) {
        Vec expect = site.h * prof.v;
        REQUIRE((ms.z_for_bus(site.bus_id) - expect).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("attack rotates the voltage phasor by exactly the attack angle") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    PmuPlacement pl = load_placement(nc, "placement14.txt");
    PmuModel model = build_pmu_model(nc, adm, pl);
    VoltageProfile prof = solve_power_flow(nc, 1.0);
    AttackScenario attack = AttackScenario::on_buses(nc, {{6, deg2rad(30.0)}});
    MeasurementSet clean = simulate_measurements(model, prof.v, AttackScenario::none(14), 1, 0.0);
    MeasurementSet spoofed = simulate_measurements(model, prof.v, attack, 1, 0.0);
    const Vec& z0 = clean.z_for_bus(6);
    const Vec& z1 = spoofed.z_for_bus(6);
    // polar comparison channel by channel
    for (Eigen::Index p = 0; p + 1 < z0.size(); p += 2) {
        double mag0 = std::hypot(z0(p), z0(p + 1));
        double mag1 = std::hypot(z1(p), z1(p + 1));
        double ang0 = std::atan2(z0(p + 1), z0(p));
        double ang1 = std::atan2(z1(p + 1), z1(p));
        REQUIRE(mag1 == Approx(mag0).epsilon(1e-12));
        REQUIRE(wrap_angle(ang1 - ang0) == Approx(deg2rad(30.0)).margin(1e-12));
    }
    // unattacked buses untouched
    REQUIRE((clean.z_for_bus(2) - spoofed.z_for_bus(2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rotation preserves channel magnitudes") {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        Vec z = rng.normal_vec(8);
        double theta = rng.uniform(-kPi, kPi);
        Vec r = rotate_pairs(z, theta);
        for (Eigen::Index p = 0; p < 8; p += 2) {
            double a = std::hypot(z(p), z(p + 1));
            double b = std::hypot(r(p), r(p + 1));
            REQUIRE(b == Approx(a).epsilon(1e-12));
        }
    }
}

TEST_CASE("same seed reproduces the measurement set") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    PmuPlacement pl = load_placement(nc, "placement14.txt");
    PmuModel model = build_pmu_model(nc, adm, pl);
    VoltageProfile prof = solve_power_flow(nc, 1.0);
    AttackScenario attack = AttackScenario::on_buses(nc, {{6, deg2rad(20.0)}});
    MeasurementSet a = simulate_measurements(model, prof.v, attack, 123);
    MeasurementSet b = simulate_measurements(model, prof.v, attack, 123);
    MeasurementSet c = simulate_measurements(model, prof.v, attack, 124);
    for (std::size_t i = 0; i < a.entries.size(); ++i)
        REQUIRE((a.entries[i].z - b.entries[i].z).cwiseAbs().maxCoeff() == 0.0);
    bool any_different = false;
    for (std::size_t i = 0; i < a.entries.size(); ++i)
        if ((a.entries[i].z - c.entries[i].z).cwiseAbs().maxCoeff() > 0) any_different = true;
    REQUIRE(any_different);
}

TEST_CASE("empirical noise covariance matches sigma") {
    NetworkCase nc = parse_case(testutil::kTwoBusLoaded);
    AdmittanceModel adm = build_admittance(nc);
    PmuPlacement pl = PmuPlacement::from_bus_ids(nc, {1});
    PmuModel model = build_pmu_model(nc, adm, pl);
    VoltageProfile prof = solve_power_flow(nc, 1.0);
    AttackScenario attack = AttackScenario::none(2);
    const PmuSite& site = model.sites[0];
    const Eigen::Index m = site.m();
    Vec base = site.h * prof.v;

    const int draws = 100000;
    Mat acc = Mat::Zero(m, m);
    for (int k = 0; k < draws; ++k) {
        MeasurementSet ms = simulate_measurements(model, prof.v, attack, 1000 + k);
        Vec w = ms.entries[0].z - base;
        acc.noalias() += w * w.transpose();
    }
    acc /= draws;
    for (Eigen::Index i = 0; i < m; ++i)
        REQUIRE(acc(i, i) == Approx(site.sigma(i, i)).epsilon(0.05));
}

TEST_CASE("attack invariant validation") {
    NetworkCase nc = load_case("case14.case");
    PmuPlacement pl = load_placement(nc, "placement14.txt");
    AttackScenario bad = AttackScenario::on_buses(nc, {{5, deg2rad(10.0)}}); // no PMU at 5
    REQUIRE_THROWS_AS(bad.validate(pl), config_error);
    AttackScenario wide = AttackScenario::on_buses(nc, {{6, deg2rad(80.0)}}); // beyond 70 deg
    REQUIRE_THROWS_AS(wide.validate(pl), config_error);
    AttackScenario ok = AttackScenario::on_buses(nc, {{6, deg2rad(30.0)}});
    REQUIRE_NOTHROW(ok.validate(pl));
}

TEST_CASE("measurement serialization round trip") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    PmuPlacement pl = load_placement(nc, "placement14.txt");
    PmuModel model = build_pmu_model(nc, adm, pl);
    VoltageProfile prof = solve_power_flow(nc, 1.0);
    AttackScenario attack = AttackScenario::on_buses(nc, {{6, deg2rad(30.0)}});
    MeasurementSet ms = simulate_measurements(model, prof.v, attack, 9);
    MeasurementSet back = parse_measurements(model, emit_measurements(model, ms));
    REQUIRE(back.entries.size() == ms.entries.size());
    for (std::size_t i = 0; i < ms.entries.size(); ++i) {
        REQUIRE(back.entries[i].bus_id == ms.entries[i].bus_id);
        REQUIRE(back.entries[i].attacked == ms.entries[i].attacked);
        REQUIRE((back.entries[i].z - ms.entries[i].z).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("parallel branches contribute their own current channels") {
    NetworkCase nc = load_case("case118.case");
    AdmittanceModel adm = build_admittance(nc);
    PmuPlacement pl = PmuPlacement::from_bus_ids(nc, {49});
    PmuModel model = build_pmu_model(nc, adm, pl);
    const PmuSite& site = model.sites[0];
    // bus 49 sees twelve circuits, including both 42-49 and both 49-54 and
    // both 49-66 parallels
    REQUIRE(site.n_lines == 12);
    REQUIRE(site.m() == 26);
    int to42 = 0;
    for (const auto& ch : site.channels)
        if (ch.kind == ChannelRef::Kind::Current && ch.to_bus == 42) ++to42;
    REQUIRE(to42 == 2);
}
