#include "helpers.hpp"

#include "tsase/scada.hpp"

#include <catch2/catch.hpp>

using namespace tsase;
using testutil::load_case;

namespace {

Vec reduced_truth(const NetworkCase& nc, const VoltageProfile& prof) {
    const int nb = static_cast<int>(nc.n_buses());
    const int slack = nc.slack_index();
    VoltageProfile rot = prof.rotated(-std::atan2(prof.v(nb + slack), prof.v(slack)));
    Vec red(2 * nb - 1);
    Eigen::Index j = 0;
    for (Eigen::Index i = 0; i < 2 * nb; ++i)
        if (i != nb + slack) red(j++) = rot.v(i);
    return red;
}

} // namespace

TEST_CASE("flat no-load profile gives unit magnitudes and zero flows") {
    NetworkCase nc = parse_case(testutil::kTwoBusCase);
    AdmittanceModel adm = build_admittance(nc);
    ScadaMeasurementSet all = select_channels(nc, adm, 1.0, 1);
    Vec v = Vec::Zero(3);
    v.head(2).setOnes();
    Vec h = scada_h(nc, adm, all, v);
    for (std::size_t k = 0; k < all.size(); ++k) {
        if (all.channels[k].kind == ScadaKind::VMag)
            REQUIRE(h(static_cast<Eigen::Index>(k)) == Approx(1.0));
        else
            REQUIRE(h(static_cast<Eigen::Index>(k)) == Approx(0.0).margin(1e-14));
    }
}

TEST_CASE("analytic SCADA Jacobian matches central differences") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    ScadaMeasurementSet meas = select_channels(nc, adm, 0.6, 3);
    Rng rng(5);
    for (int t = 0; t < 5; ++t) {
        Vec v(27);
        for (int i = 0; i < 27; ++i)
            v(i) = (i < 14 ? 1.0 : 0.0) + 0.08 * rng.normal();
        Mat jac = scada_jacobian(nc, adm, meas, v);
        const double h = 1e-6;
        for (int c = 0; c < 27; c += 5) {
            Vec vp = v, vm = v;
            vp(c) += h;
            vm(c) -= h;
            Vec fp = scada_h(nc, adm, meas, vp);
            Vec fm = scada_h(nc, adm, meas, vm);
            Vec fd = (fp - fm) / (2.0 * h);
            for (Eigen::Index r = 0; r < jac.rows(); ++r) {
                const double scale = std::max(1.0, std::abs(fd(r)));
                REQUIRE(jac(r, c) == Approx(fd(r)).margin(1e-5 * scale));
            }
        }
    }
}

TEST_CASE("h reproduces the power-flow branch flows") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    VoltageProfile prof = solve_power_flow(nc, 1.0);
    Vec red = reduced_truth(nc, prof);
    ScadaMeasurementSet all = select_channels(nc, adm, 1.0, 1);
    Vec h = scada_h(nc, adm, all, red);
    // flows computed directly from the (unrotated) profile in complex form
    CVec vc = complex_voltage(prof.v);
    for (std::size_t k = 0; k < all.size(); ++k) {
        const auto& ch = all.channels[k];
        double expect = 0.0;
        if (ch.kind == ScadaKind::VMag) {
            expect = std::abs(vc(ch.index));
        } else {
            const bool from_side =
                ch.kind == ScadaKind::PFlowFrom || ch.kind == ScadaKind::QFlowFrom;
            const auto& br = adm.rows[ch.index];
            Complex current = from_side ? (adm.yfrom.row(ch.index) * vc).value()
                                        : (adm.yto.row(ch.index) * vc).value();
            Complex s = vc(from_side ? br.from_idx : br.to_idx) * std::conj(current);
            expect = (ch.kind == ScadaKind::PFlowFrom || ch.kind == ScadaKind::PFlowTo)
                         ? s.real()
                         : s.imag();
        }
        REQUIRE(h(static_cast<Eigen::Index>(k)) == Approx(expect).margin(1e-8));
    }
}

TEST_CASE("noiseless SCADA estimation recovers the power-flow solution") {
    for (const char* name : {"case14.case", "case30.case"}) {
        NetworkCase nc = load_case(name);
        AdmittanceModel adm = build_admittance(nc);
        VoltageProfile prof = solve_power_flow(nc, 1.0);
        Vec red = reduced_truth(nc, prof);
        ScadaMeasurementSet meas = select_channels(nc, adm, 1.0, 2);
        meas = simulate_scada(nc, adm, meas, red, 7, 0.0);
        ScadaPrior prior = estimate_scada(nc, adm, meas);
        REQUIRE(prior.converged);
        REQUIRE((prior.v_s_hat - red).cwiseAbs().maxCoeff() < 1e-7);
    }
}

TEST_CASE("noisy half-rate SCADA estimation is chi-square consistent") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    VoltageProfile prof = solve_power_flow(nc, 1.0);
    Vec red = reduced_truth(nc, prof);
    ScadaMeasurementSet tmpl = select_channels(nc, adm, 0.5, 11);
    const int dof = static_cast<int>(tmpl.size()) - 27;
    REQUIRE(dof > 0);
    // pooled over realizations the weighted residual mean should sit within
    // 3 standard errors of the chi-square mean
    const int reps = 200;
    double acc = 0.0;
    for (int rep = 0; rep < reps; ++rep) {
        ScadaMeasurementSet meas = simulate_scada(nc, adm, tmpl, red, 800 + rep);
        ScadaPrior prior = estimate_scada(nc, adm, meas);
        REQUIRE(prior.converged);
        Vec r = scada_h(nc, adm, meas, prior.v_s_hat);
        double cost = 0.0;
        for (std::size_t k = 0; k < meas.size(); ++k) {
            double e = (meas.channels[k].value - r(static_cast<Eigen::Index>(k))) /
                       meas.channels[k].sigma;
            cost += e * e;
        }
        acc += cost;
    }
    const double mean = acc / reps;
    const double se = std::sqrt(2.0 * dof / static_cast<double>(reps));
    REQUIRE(std::abs(mean - dof) <= 3.0 * se);
}

TEST_CASE("prior covariance equals the inverse normal matrix at the solution") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    VoltageProfile prof = solve_power_flow(nc, 1.0);
    Vec red = reduced_truth(nc, prof);
    ScadaMeasurementSet meas =
        simulate_scada(nc, adm, select_channels(nc, adm, 0.5, 11), red, 99);
    ScadaPrior prior = estimate_scada(nc, adm, meas);
    Mat jac = scada_jacobian(nc, adm, meas, prior.v_s_hat);
    Vec w(static_cast<Eigen::Index>(meas.size()));
    for (std::size_t k = 0; k < meas.size(); ++k)
        w(static_cast<Eigen::Index>(k)) =
            1.0 / (meas.channels[k].sigma * meas.channels[k].sigma);
    Mat normal = jac.transpose() * w.asDiagonal() * jac;
    Mat expect = normal.ldlt().solve(Mat::Identity(27, 27));
    REQUIRE((prior.sigma_s - expect).cwiseAbs().maxCoeff() <=
            1e-10 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
}

TEST_CASE("too few channels raise the unobservability error") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    ScadaMeasurementSet meas = select_channels(nc, adm, 1.0, 3);
    meas.channels.resize(20); // below the 27-dimensional state
    REQUIRE_THROWS_AS(estimate_scada(nc, adm, meas), numerical_error);
}

TEST_CASE("channel selection is deterministic and correctly sized") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    ScadaMeasurementSet a = select_channels(nc, adm, 0.5, 2);
    ScadaMeasurementSet b = select_channels(nc, adm, 0.5, 2);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        REQUIRE(a.channels[k].kind == b.channels[k].kind);
        REQUIRE(a.channels[k].index == b.channels[k].index);
    }
    // full selection covers every channel: N_b + 4 N_l
    ScadaMeasurementSet full = select_channels(nc, adm, 1.0, 1);
    REQUIRE(full.size() == 14 + 4 * 20);
    // half selection is the per-kind ceiling
    REQUIRE(a.size() == 7 + 4 * 10);
    REQUIRE(a.redundancy_ratio(14) == Approx((7.0 + 40.0) / 27.0));
}

TEST_CASE("scada serialization round trip") {
    NetworkCase nc = load_case("case14.case");
    AdmittanceModel adm = build_admittance(nc);
    VoltageProfile prof = solve_power_flow(nc, 1.0);
    Vec red = reduced_truth(nc, prof);
    ScadaMeasurementSet meas =
        simulate_scada(nc, adm, select_channels(nc, adm, 0.5, 6), red, 6);
    ScadaMeasurementSet back = parse_scada(nc, adm, emit_scada(nc, adm, meas));
    REQUIRE(back.size() == meas.size());
    for (std::size_t k = 0; k < meas.size(); ++k) {
        REQUIRE(back.channels[k].kind == meas.channels[k].kind);
        REQUIRE(back.channels[k].index == meas.channels[k].index);
        REQUIRE(back.channels[k].value == Approx(meas.channels[k].value).margin(1e-12));
    }
}
