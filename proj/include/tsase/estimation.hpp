#pragma once

#include "tsase/pmu.hpp"

namespace tsase {

/// Normal-equation matrix G = sum_n H_n^T Sigma_n^{-1} H_n with a cached
/// factorization. Construction fails when the placement leaves the system
/// unobservable; rcond() exposes the conditioning for guard warnings.
class GainMatrix {
  public:
    static constexpr double kSingularRcond = 1e-14;
    static constexpr double kWarnRcond = 1e-12; // condition number above 1e12

    static GainMatrix build(const PmuModel& model) {
        Mat g = Mat::Zero(model.state_dim, model.state_dim);
        for (const auto& site : model.sites)
            g.noalias() += site.h.transpose() * site.sigma_inv * site.h;
        return GainMatrix(std::move(g));
    }

    explicit GainMatrix(Mat g) : g_(std::move(g)), ldlt_(g_) {
        if (ldlt_.info() != Eigen::Success)
            throw numerical_error("gain matrix factorization failed (unobservable system)");
        rcond_ = ldlt_.rcond();
        // LDLT accepts semidefinite input, so rank deficiency is detected
        // from the pivot spread rather than info().
        const Vec& d = ldlt_.vectorD();
        const double dmax = d.maxCoeff();
        const double dmin = d.minCoeff();
        if (!(dmax > 0.0) || !(dmin > dmax * kSingularRcond))
            throw numerical_error("gain matrix is singular: system unobservable");
    }

    const Mat& matrix() const { return g_; }
    double rcond() const { return rcond_; }
    bool ill_conditioned() const { return rcond_ < kWarnRcond; }
    Eigen::Index dim() const { return g_.rows(); }

    Vec solve(const Vec& rhs) const { return ldlt_.solve(rhs); }
    Mat solve(const Mat& rhs) const { return ldlt_.solve(rhs); }

    Mat inverse() const { return ldlt_.solve(Mat::Identity(g_.rows(), g_.cols())); }
    double trace_inverse() const { return inverse().trace(); }

  private:
    Mat g_;
    Eigen::LDLT<Mat> ldlt_;
    double rcond_ = 0.0;
};

/// Right-hand side sum_n H_n^T Sigma_n^{-1} z_n of the normal equations.
inline Vec normal_rhs(const PmuModel& model, const MeasurementSet& z) {
    Vec rhs = Vec::Zero(model.state_dim);
    for (const auto& site : model.sites)
        rhs.noalias() += site.h.transpose() * (site.sigma_inv * z.z_for_bus(site.bus_id));
    return rhs;
}

/// Closed-form ML state estimate (weighted least squares on all PMUs).
inline Vec estimate_ml(const PmuModel& model, const MeasurementSet& z) {
    return GainMatrix::build(model).solve(normal_rhs(model, z));
}

inline Vec estimate_ml(const PmuModel& model, const MeasurementSet& z, const GainMatrix& gain) {
    return gain.solve(normal_rhs(model, z));
}

/// MAP estimate with Gaussian prior (prior_precision = Sigma_s^{-1}).
inline Vec estimate_map(const PmuModel& model, const MeasurementSet& z, const Vec& prior_v,
                        const Mat& prior_precision) {
    Mat gp = GainMatrix::build(model).matrix() + prior_precision;
    Eigen::LDLT<Mat> ldlt(gp);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw numerical_error("regularized gain matrix is not positive definite");
    return ldlt.solve(normal_rhs(model, z) + prior_precision * prior_v);
}

/// Precomputed quantities for fast evaluation of the attacked-estimator mean
/// over many attack angles at a fixed voltage profile.
///
/// mean(dtheta) = G^{-1} [ t + sum_{n attacked} Ht_n (R(dtheta_n) w_n - w_n) ]
/// with w_n = H_n v, Ht_n = H_n^T Sigma_n^{-1}, t = sum_n Ht_n w_n.
class BiasEvaluator {
  public:
    BiasEvaluator(const PmuModel& model, const Vec& v)
        : model_(&model), v_(v), gain_(GainMatrix::build(model)) {
        t_ = Vec::Zero(model.state_dim);
        for (const auto& site : model.sites) {
            w_.push_back(site.h * v);
            ht_.push_back(site.h.transpose() * site.sigma_inv);
            t_.noalias() += ht_.back() * w_.back();
        }
    }

    const GainMatrix& gain() const { return gain_; }
    const Vec& profile() const { return v_; }
    const PmuModel& model() const { return *model_; }

    /// Site position for a bus index; -1 when the bus has no PMU.
    int site_of_bus_idx(int bus_idx) const {
        for (std::size_t s = 0; s < model_->sites.size(); ++s)
            if (model_->sites[s].bus_idx == bus_idx) return static_cast<int>(s);
        return -1;
    }

    /// Bias vector B(dtheta) v for an attack on `sites` (site positions)
    /// with angles `theta` (radians, same order).
    Vec bias(const std::vector<int>& sites, const Vec& theta) const {
        Vec y = t_;
        for (std::size_t k = 0; k < sites.size(); ++k) {
            const int s = sites[k];
            if (theta(static_cast<Eigen::Index>(k)) == 0.0) continue;
            y.noalias() +=
                ht_[s] * (rotate_pairs(w_[s], theta(static_cast<Eigen::Index>(k))) - w_[s]);
        }
        return gain_.solve(y) - v_;
    }

    double bias_norm(const std::vector<int>& sites, const Vec& theta) const {
        return bias(sites, theta).norm();
    }

    /// Gradient of ||bias||_2^2 with respect to each attacked angle.
    Vec bias_norm2_gradient(const std::vector<int>& sites, const Vec& theta) const {
        const Vec r = bias(sites, theta);
        const Vec s_vec = gain_.solve(r); // G symmetric
        Vec grad(static_cast<Eigen::Index>(sites.size()));
        for (std::size_t k = 0; k < sites.size(); ++k) {
            const int s = sites[k];
            // d/dtheta of R(theta) w is R(theta + pi/2) w
            const Vec dw =
                rotate_pairs(w_[s], theta(static_cast<Eigen::Index>(k)) + kPi / 2.0);
            grad(static_cast<Eigen::Index>(k)) = 2.0 * s_vec.dot(ht_[s] * dw);
        }
        return grad;
    }

  private:
    const PmuModel* model_;
    Vec v_;
    GainMatrix gain_;
    std::vector<Vec> w_;
    std::vector<Mat> ht_;
    Vec t_;
};

struct EstimatorStats {
    Vec mean;
    Mat covariance;
    Vec bias;
    double mse = 0.0;
};

/// Distribution of the attacked ML estimator: mean from the attacked
/// measurement model, covariance G^{-1}, and the MSE identity
/// mse = trace(G^{-1}) + ||bias||^2.
inline EstimatorStats attacked_stats(const PmuModel& model, const AttackScenario& attack,
                                     const Vec& v) {
    BiasEvaluator eval(model, v);
    std::vector<int> sites;
    std::vector<double> angles;
    for (std::size_t s = 0; s < model.sites.size(); ++s) {
        const int bus_idx = model.sites[s].bus_idx;
        if (attack.b[bus_idx]) {
            sites.push_back(static_cast<int>(s));
            angles.push_back(attack.delta_theta(bus_idx));
        }
    }
    Vec theta = Eigen::Map<const Vec>(angles.data(), static_cast<Eigen::Index>(angles.size()));
    EstimatorStats st;
    st.bias = eval.bias(sites, theta);
    st.mean = v + st.bias;
    st.covariance = eval.gain().inverse();
    st.mse = st.covariance.trace() + st.bias.squaredNorm();
    return st;
}

/// Attack-induced estimator bias B(dtheta) v, without forming B densely.
inline Vec bias_vector(const PmuModel& model, const AttackScenario& attack, const Vec& v) {
    BiasEvaluator eval(model, v);
    std::vector<int> sites;
    std::vector<double> angles;
    for (std::size_t s = 0; s < model.sites.size(); ++s) {
        const int bus_idx = model.sites[s].bus_idx;
        if (attack.b[bus_idx]) {
            sites.push_back(static_cast<int>(s));
            angles.push_back(attack.delta_theta(bus_idx));
        }
    }
    Vec theta = Eigen::Map<const Vec>(angles.data(), static_cast<Eigen::Index>(angles.size()));
    return eval.bias(sites, theta);
}

} // namespace tsase
