#pragma once

#include "tsase/estimation.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace tsase {

struct VulnSolverOptions {
    double grad_tol = 1e-7;      ///< projected-gradient stopping norm
    int max_iter = 500;
    double armijo = 1e-4;
    double shrink = 0.5;
    double initial_step = 1.0;
    bool grid_1d = true;         ///< exact grid scan for one-dimensional subproblems
    double grid_step_deg = 0.05;
    std::size_t combination_cap = 1000000;
};

struct AscentResult {
    Vec delta_theta;    ///< over the free coordinates
    double objective = 0.0;
    int iterations = 0;
    std::string init_label;
};

namespace detail {

/// Projected gradient ascent of ||bias(theta)||_2 over the box
/// [-bound, bound]^k, for the attack sites listed in `sites`. Coordinates
/// listed in `frozen` keep their initial value.
inline AscentResult ascend_box(const BiasEvaluator& eval, const std::vector<int>& sites,
                               const Vec& bounds, const Vec& init,
                               const std::vector<bool>& frozen, const VulnSolverOptions& opts) {
    const Eigen::Index k = init.size();
    auto project = [&](Vec x) {
        for (Eigen::Index i = 0; i < k; ++i) {
            if (frozen[static_cast<std::size_t>(i)]) {
                x(i) = init(i);
            } else {
                x(i) = std::clamp(x(i), -bounds(i), bounds(i));
            }
        }
        return x;
    };

    Vec x = project(init);
    double fx = eval.bias_norm(sites, x);
    if (k == 0) return {x, fx, 0, ""};
    int iter = 0;
    for (; iter < opts.max_iter; ++iter) {
        Vec g = eval.bias_norm2_gradient(sites, x);
        const double norm = eval.bias_norm(sites, x);
        if (norm > 1e-14) g /= (2.0 * norm); // gradient of the norm itself
        for (Eigen::Index i = 0; i < k; ++i)
            if (frozen[static_cast<std::size_t>(i)]) g(i) = 0.0;

        // projected-gradient stationarity measure
        Vec moved = project(x + g);
        if ((moved - x).cwiseAbs().maxCoeff() <= opts.grad_tol) break;

        double step = opts.initial_step;
        bool advanced = false;
        while (step > 1e-14) {
            Vec cand = project(x + step * g);
            double fc = eval.bias_norm(sites, cand);
            const double gain = g.dot(cand - x);
            if (fc >= fx + opts.armijo * gain && fc > fx) {
                x = cand;
                fx = fc;
                advanced = true;
                break;
            }
            step *= opts.shrink;
        }
        if (!advanced) break;
    }
    return {x, fx, iter, ""};
}

inline AscentResult best_of_three_inits(const BiasEvaluator& eval, const std::vector<int>& sites,
                                        const Vec& bounds, const std::vector<bool>& frozen,
                                        const Vec& frozen_values,
                                        const VulnSolverOptions& opts) {
    const Eigen::Index k = bounds.size();
    AscentResult best;
    best.objective = -1.0;
    const char* labels[3] = {"zero", "-max", "+max"};
    for (int which = 0; which < 3; ++which) {
        Vec init(k);
        for (Eigen::Index i = 0; i < k; ++i) {
            if (frozen[static_cast<std::size_t>(i)])
                init(i) = frozen_values(i);
            else
                init(i) = which == 0 ? 0.0 : (which == 1 ? -bounds(i) : bounds(i));
        }
        AscentResult r = ascend_box(eval, sites, bounds, init, frozen, opts);
        r.init_label = labels[which];
        if (r.objective > best.objective) best = r;
    }
    return best;
}

/// Exact scan + polish for a single free coordinate.
inline AscentResult grid_scan_1d(const BiasEvaluator& eval, const std::vector<int>& sites,
                                 const Vec& bounds, const std::vector<bool>& frozen,
                                 const Vec& frozen_values, Eigen::Index free_idx,
                                 const VulnSolverOptions& opts) {
    const double bound = bounds(free_idx);
    const double step = deg2rad(opts.grid_step_deg);
    Vec theta = frozen_values;
    double best_obj = -1.0;
    double best_theta = 0.0;
    const long n_steps = static_cast<long>(std::ceil(2.0 * bound / step));
    for (long i = 0; i <= n_steps; ++i) {
        const double t = std::min(-bound + static_cast<double>(i) * step, bound);
        theta(free_idx) = t;
        const double obj = eval.bias_norm(sites, theta);
        if (obj > best_obj) {
            best_obj = obj;
            best_theta = t;
        }
    }
    theta(free_idx) = best_theta;
    AscentResult polished = ascend_box(eval, sites, bounds, theta, frozen, opts);
    polished.init_label = "grid";
    if (polished.objective < best_obj) { // polish must never lose to the grid
        polished.delta_theta = theta;
        polished.objective = best_obj;
    }
    return polished;
}

} // namespace detail

/// Local maximization of the bias norm over the attack box for a fixed
/// attacked set. `b` marks attacked bus indices; free coordinates are
/// exactly those. Monotone ascent from `init`.
inline AscentResult maximize_bias_fixed_set(const BiasEvaluator& eval,
                                            const std::vector<std::uint8_t>& b,
                                            const Vec& delta_theta_max, const Vec& init,
                                            const VulnSolverOptions& opts = {}) {
    std::vector<int> sites;
    std::vector<Eigen::Index> coords;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (!b[i]) continue;
        const int s = eval.site_of_bus_idx(static_cast<int>(i));
        if (s < 0) throw config_error("attacked bus has no PMU");
        sites.push_back(s);
        coords.push_back(static_cast<Eigen::Index>(i));
    }
    const Eigen::Index k = static_cast<Eigen::Index>(sites.size());
    Vec bounds(k), x0(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        bounds(j) = delta_theta_max(coords[static_cast<std::size_t>(j)]);
        x0(j) = init(coords[static_cast<std::size_t>(j)]);
    }
    std::vector<bool> frozen(static_cast<std::size_t>(k), false);
    AscentResult r = detail::ascend_box(eval, sites, bounds, x0, frozen, opts);
    // map back to full-length vector
    Vec full = Vec::Zero(static_cast<Eigen::Index>(b.size()));
    for (Eigen::Index j = 0; j < k; ++j) full(coords[static_cast<std::size_t>(j)]) = r.delta_theta(j);
    r.delta_theta = full;
    return r;
}

struct VulnerabilityResult {
    std::vector<int> attacked_buses; ///< bus ids, selection order
    Vec delta_theta;                 ///< full-length, radians
    double objective = 0.0;
    struct Candidate {
        std::vector<int> buses;
        double objective;
        Vec delta_theta;
        std::string winning_init;
    };
    std::vector<Candidate> log;
};

namespace detail {

inline void combinations(std::size_t n, std::size_t k,
                         const std::function<void(const std::vector<std::size_t>&)>& visit) {
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    while (true) {
        visit(idx);
        std::size_t i = k;
        while (i > 0) {
            --i;
            if (idx[i] != i + n - k) break;
            if (i == 0) return;
        }
        if (idx[i] == i + n - k) return;
        ++idx[i];
        for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
}

inline std::size_t binomial_capped(std::size_t n, std::size_t k, std::size_t cap) {
    if (k > n) return 0;
    std::size_t c = 1;
    for (std::size_t i = 0; i < k; ++i) {
        c = c * (n - i) / (i + 1);
        if (c > 4 * cap) return c; // early out, avoids overflow for sane caps
    }
    return c;
}

} // namespace detail

/// Exhaustive search over all attacked sets of size n_p (Algorithm-1 style):
/// for each candidate set the box problem is solved from the three
/// initializations 0, -max, +max (or by exact grid scan when the subproblem
/// is one-dimensional and grid_1d is enabled). Ties keep the
/// lexicographically smallest bus set.
inline VulnerabilityResult find_vulnerable_optimal(const BiasEvaluator& eval, std::size_t n_p,
                                                   const Vec& delta_theta_max,
                                                   const VulnSolverOptions& opts = {}) {
    const PmuModel& model = eval.model();
    const std::size_t n_pmu = model.sites.size();
    if (n_p == 0 || n_p > n_pmu)
        throw config_error("attacked-set size must be between 1 and the PMU count");
    const std::size_t n_comb = detail::binomial_capped(n_pmu, n_p, opts.combination_cap);
    if (n_comb > opts.combination_cap)
        throw config_error("candidate subset count " + std::to_string(n_comb) +
                           " exceeds the cap of " + std::to_string(opts.combination_cap));

    VulnerabilityResult result;
    result.objective = -1.0;
    const Eigen::Index nb = static_cast<Eigen::Index>(model.n_buses);

    detail::combinations(n_pmu, n_p, [&](const std::vector<std::size_t>& pick) {
        std::vector<int> sites;
        Vec bounds(static_cast<Eigen::Index>(n_p));
        std::vector<int> buses;
        for (std::size_t j = 0; j < n_p; ++j) {
            const auto& site = model.sites[pick[j]];
            sites.push_back(static_cast<int>(pick[j]));
            bounds(static_cast<Eigen::Index>(j)) = delta_theta_max(site.bus_idx);
            buses.push_back(site.bus_id);
        }
        std::vector<bool> frozen(n_p, false);
        Vec frozen_values = Vec::Zero(static_cast<Eigen::Index>(n_p));
        AscentResult best =
            (n_p == 1 && opts.grid_1d)
                ? detail::grid_scan_1d(eval, sites, bounds, frozen, frozen_values, 0, opts)
                : detail::best_of_three_inits(eval, sites, bounds, frozen, frozen_values, opts);

        Vec full = Vec::Zero(nb);
        for (std::size_t j = 0; j < n_p; ++j)
            full(model.sites[pick[j]].bus_idx) = best.delta_theta(static_cast<Eigen::Index>(j));
        result.log.push_back({buses, best.objective, full, best.init_label});
        if (best.objective > result.objective) {
            result.objective = best.objective;
            result.attacked_buses = buses;
            result.delta_theta = full;
        }
    });
    return result;
}

/// Greedy search (Algorithm-2 style, extended to n_p >= 2): the single most
/// vulnerable PMU is found exhaustively, then each stage fixes every
/// previously chosen bus at its optimal angle and scans the remaining PMU
/// buses with a one-dimensional maximization.
inline VulnerabilityResult find_vulnerable_greedy(const BiasEvaluator& eval, std::size_t n_p,
                                                  const Vec& delta_theta_max,
                                                  const VulnSolverOptions& opts = {}) {
    const PmuModel& model = eval.model();
    if (n_p < 2) throw config_error("greedy search needs n_p >= 2");
    if (n_p > model.sites.size()) throw config_error("n_p exceeds the PMU count");

    VulnerabilityResult stage1 = find_vulnerable_optimal(eval, 1, delta_theta_max, opts);

    VulnerabilityResult result;
    result.attacked_buses = stage1.attacked_buses;
    result.delta_theta = stage1.delta_theta;
    result.objective = stage1.objective;
    result.log = std::move(stage1.log);

    std::vector<int> chosen_sites;
    chosen_sites.push_back(
        eval.site_of_bus_idx(eval.model().site_for_bus(result.attacked_buses[0])->bus_idx));

    const Eigen::Index nb = static_cast<Eigen::Index>(model.n_buses);
    while (result.attacked_buses.size() < n_p) {
        double stage_best = -1.0;
        int stage_bus = -1;
        int stage_site = -1;
        Vec stage_theta;
        std::string stage_init;
        const std::size_t k = chosen_sites.size() + 1;

        for (std::size_t s = 0; s < model.sites.size(); ++s) {
            const auto& site = model.sites[s];
            bool already = false;
            for (int cs : chosen_sites)
                if (cs == static_cast<int>(s)) already = true;
            if (already) continue;

            std::vector<int> sites = chosen_sites;
            sites.push_back(static_cast<int>(s));
            Vec bounds(static_cast<Eigen::Index>(k));
            Vec init(static_cast<Eigen::Index>(k));
            std::vector<bool> frozen(k, true);
            for (std::size_t j = 0; j + 1 < k; ++j) {
                const auto& prev = model.sites[static_cast<std::size_t>(chosen_sites[j])];
                bounds(static_cast<Eigen::Index>(j)) = delta_theta_max(prev.bus_idx);
                init(static_cast<Eigen::Index>(j)) = result.delta_theta(prev.bus_idx);
            }
            const Eigen::Index fi = static_cast<Eigen::Index>(k - 1);
            frozen[k - 1] = false;
            bounds(fi) = delta_theta_max(site.bus_idx);
            init(fi) = 0.0;

            AscentResult best = opts.grid_1d
                                    ? detail::grid_scan_1d(eval, sites, bounds, frozen, init, fi, opts)
                                    : detail::best_of_three_inits(eval, sites, bounds, frozen,
                                                                  init, opts);
            std::vector<int> buses = result.attacked_buses;
            buses.push_back(site.bus_id);
            Vec full = Vec::Zero(nb);
            for (std::size_t j = 0; j + 1 < k; ++j)
                full(model.sites[static_cast<std::size_t>(chosen_sites[j])].bus_idx) =
                    init(static_cast<Eigen::Index>(j));
            full(site.bus_idx) = best.delta_theta(fi);
            result.log.push_back({buses, best.objective, full, best.init_label});

            if (best.objective > stage_best) {
                stage_best = best.objective;
                stage_bus = site.bus_id;
                stage_site = static_cast<int>(s);
                stage_theta = full;
                stage_init = best.init_label;
            }
        }
        result.attacked_buses.push_back(stage_bus);
        result.delta_theta = stage_theta;
        result.objective = stage_best;
        chosen_sites.push_back(stage_site);
    }
    return result;
}

} // namespace tsase
