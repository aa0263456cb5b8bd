#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dmm/seq.hpp"
#include "dmm/tensor.hpp"

namespace dmm {

/// Linear-Gaussian state-space model in matrix form:
///   z_1 ~ N(mu0, Sigma0),  z_t = A z_{t-1} + c + eps,  eps ~ N(0, Q),
///   x_t = H z_t + delta,   delta ~ N(0, R).
/// Exact inference for these systems is the repo's ground-truth oracle.
struct LinearSystem {
    Eigen::MatrixXd A;
    Eigen::VectorXd c;
    Eigen::MatrixXd Q;
    Eigen::MatrixXd H;
    Eigen::MatrixXd R;
    Eigen::VectorXd mu0;
    Eigen::MatrixXd Sigma0;

    std::size_t latent_dim() const { return static_cast<std::size_t>(A.rows()); }
    std::size_t obs_dim() const { return static_cast<std::size_t>(H.rows()); }
};

/// The fixed 1-D drifting system used for compiled-inference experiments:
/// z_t ~ N(z_{t-1} + 0.05, 10), x_t ~ N(0.5 z_t, 20), z_1 ~ N(0, 1).
LinearSystem linear_drift_system();

/// Filtered estimates p(z_t | x_1..t) plus the predictive quantities the
/// smoother needs, and the exact data log-likelihood accumulated from the
/// one-step predictive densities.
struct FilterResult {
    std::vector<Eigen::VectorXd> means;       // m_{t|t}
    std::vector<Eigen::MatrixXd> covs;        // P_{t|t}
    std::vector<Eigen::VectorXd> pred_means;  // m_{t|t-1} (prior at t=1)
    std::vector<Eigen::MatrixXd> pred_covs;   // P_{t|t-1}
    double loglik = 0.0;
};

/// Smoothed marginals p(z_t | x_1..T) with full covariances.
struct SmoothResult {
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covs;

    /// Diagonal view in the shared sequence format.
    GaussianSeq marginals() const;
};

/// Joint-Gaussian brute-force answer: smoothed marginals and log p(x_1..T).
struct JointResult {
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covs;
    double loglik = 0.0;

    GaussianSeq marginals() const;
};

/// Forward predict/update recursion (Joseph-form covariance updates,
/// symmetrized). x_seq is [T x obs_dim], fully observed.
/// Throws NumericalError naming the step if an innovation covariance loses
/// positive definiteness.
FilterResult kalman_filter(const LinearSystem& sys, const Tensor& x_seq);

/// Backward recursion over the filtered estimates.
SmoothResult rts_smooth(const LinearSystem& sys, const Tensor& x_seq);

/// Independent cross-check: builds the dense joint normal over all latents and
/// observations, conditions on x_seq by Schur complement. O((T(d+m))^3), so T
/// is capped at 8.
JointResult joint_conditioning_oracle(const LinearSystem& sys, const Tensor& x_seq);

/// sqrt( (1/N)(1/T) sum_i sum_t sum_d (mean_{i,t,d} - z*_{i,t,d})^2 ).
/// Sequences may differ in T; each contributes at its own 1/T_i weight.
double exact_rmse(const std::vector<GaussianSeq>& posterior, const std::vector<Tensor>& z_star);

}  // namespace dmm
