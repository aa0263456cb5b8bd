#include "dmm/exact.hpp"

#include <cmath>
#include <string>

#include "dmm/error.hpp"

namespace dmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& s) { return 0.5 * (s + s.transpose()); }

Eigen::VectorXd obs_row(const Tensor& x_seq, std::size_t t) {
    std::size_t m = x_seq.dim(1);
    Eigen::VectorXd v(m);
    for (std::size_t j = 0; j < m; ++j) v[j] = x_seq.at(t, j);
    return v;
}

void check_inputs(const LinearSystem& sys, const Tensor& x_seq, const char* where) {
    if (x_seq.rank() != 2) {
        throw ContractViolation(std::string(where) + ": x_seq must be [T x obs_dim], got " +
                                x_seq.shape_str());
    }
    if (x_seq.dim(0) == 0) throw ContractViolation(std::string(where) + ": empty sequence");
    if (x_seq.dim(1) != sys.obs_dim()) {
        throw ContractViolation(std::string(where) + ": x_seq obs dim " +
                                std::to_string(x_seq.dim(1)) + " does not match system dim " +
                                std::to_string(sys.obs_dim()));
    }
}

// log N(x; mu, S) via Cholesky; throws with context if S is not PD.
double gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                       const Eigen::MatrixXd& S, const std::string& what) {
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) {
        throw NumericalError(what + ": covariance lost positive definiteness");
    }
    Eigen::VectorXd r = x - mu;
    Eigen::VectorXd w = llt.matrixL().solve(r);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
        logdet += 2.0 * std::log(llt.matrixL()(i, i));
    }
    return -0.5 * (static_cast<double>(S.rows()) * kLog2Pi + logdet + w.squaredNorm());
}

GaussianSeq diag_marginals(const std::vector<Eigen::VectorXd>& means,
                           const std::vector<Eigen::MatrixXd>& covs) {
    std::size_t T = means.size();
    std::size_t d = means.empty() ? 0 : static_cast<std::size_t>(means[0].size());
    GaussianSeq out;
    out.means = Tensor({T, d});
    out.vars = Tensor({T, d});
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < d; ++j) {
            out.means.at(t, j) = means[t][static_cast<Eigen::Index>(j)];
            out.vars.at(t, j) = covs[t](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
        }
    }
    return out;
}

}  // namespace

LinearSystem linear_drift_system() {
    LinearSystem sys;
    sys.A = Eigen::MatrixXd::Constant(1, 1, 1.0);
    sys.c = Eigen::VectorXd::Constant(1, 0.05);
    sys.Q = Eigen::MatrixXd::Constant(1, 1, 10.0);
    sys.H = Eigen::MatrixXd::Constant(1, 1, 0.5);
    sys.R = Eigen::MatrixXd::Constant(1, 1, 20.0);
    sys.mu0 = Eigen::VectorXd::Zero(1);
    sys.Sigma0 = Eigen::MatrixXd::Identity(1, 1);
    return sys;
}

GaussianSeq SmoothResult::marginals() const { return diag_marginals(means, covs); }
GaussianSeq JointResult::marginals() const { return diag_marginals(means, covs); }

FilterResult kalman_filter(const LinearSystem& sys, const Tensor& x_seq) {
    check_inputs(sys, x_seq, "kalman_filter");
    std::size_t T = x_seq.dim(0);
    std::size_t d = sys.latent_dim();
    Eigen::MatrixXd I = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d),
                                                  static_cast<Eigen::Index>(d));

    FilterResult res;
    res.means.reserve(T);
    res.covs.reserve(T);
    res.pred_means.reserve(T);
    res.pred_covs.reserve(T);

    Eigen::VectorXd m = sys.mu0;
    Eigen::MatrixXd P = sys.Sigma0;
    for (std::size_t t = 0; t < T; ++t) {
        Eigen::VectorXd m_pred;
        Eigen::MatrixXd P_pred;
        if (t == 0) {
            // the first step's predictive is the prior itself
            m_pred = sys.mu0;
            P_pred = sys.Sigma0;
        } else {
            m_pred = sys.A * m + sys.c;
            P_pred = symmetrize(sys.A * P * sys.A.transpose() + sys.Q);
        }

        Eigen::VectorXd x = obs_row(x_seq, t);
        Eigen::VectorXd x_pred = sys.H * m_pred;
        Eigen::MatrixXd S = symmetrize(sys.H * P_pred * sys.H.transpose() + sys.R);
        res.loglik += gaussian_logpdf(x, x_pred, S, "kalman_filter: step " + std::to_string(t));

        Eigen::LLT<Eigen::MatrixXd> llt(S);
        Eigen::MatrixXd K = llt.solve(sys.H * P_pred).transpose();  // P_pred H^T S^{-1}
        m = m_pred + K * (x - x_pred);
        // Joseph form keeps the covariance symmetric PSD under roundoff
        Eigen::MatrixXd J = I - K * sys.H;
        P = symmetrize(J * P_pred * J.transpose() + K * sys.R * K.transpose());

        res.pred_means.push_back(m_pred);
        res.pred_covs.push_back(P_pred);
        res.means.push_back(m);
        res.covs.push_back(P);
    }
    return res;
}

SmoothResult rts_smooth(const LinearSystem& sys, const Tensor& x_seq) {
    FilterResult f = kalman_filter(sys, x_seq);
    std::size_t T = f.means.size();

    SmoothResult res;
    res.means.assign(T, Eigen::VectorXd());
    res.covs.assign(T, Eigen::MatrixXd());
    res.means[T - 1] = f.means[T - 1];
    res.covs[T - 1] = f.covs[T - 1];
    for (std::size_t t = T - 1; t-- > 0;) {
        // gain C_t = P_{t|t} A^T (P_{t+1|t})^{-1}
        Eigen::LLT<Eigen::MatrixXd> llt(f.pred_covs[t + 1]);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("rts_smooth: predictive covariance at step " +
                                 std::to_string(t + 1) + " lost positive definiteness");
        }
        Eigen::MatrixXd C = llt.solve(sys.A * f.covs[t]).transpose();
        res.means[t] = f.means[t] + C * (res.means[t + 1] - f.pred_means[t + 1]);
        res.covs[t] =
            symmetrize(f.covs[t] + C * (res.covs[t + 1] - f.pred_covs[t + 1]) * C.transpose());
    }
    return res;
}

JointResult joint_conditioning_oracle(const LinearSystem& sys, const Tensor& x_seq) {
    check_inputs(sys, x_seq, "joint_conditioning_oracle");
    std::size_t T = x_seq.dim(0);
    if (T > 8) {
        throw ContractViolation("joint_conditioning_oracle: T = " + std::to_string(T) +
                                " exceeds the dense-conditioning cap of 8");
    }
    auto di = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    std::size_t d = sys.latent_dim();
    std::size_t m = sys.obs_dim();

    // Joint mean and covariance of (z_1..z_T) from the recursion.
    std::vector<Eigen::VectorXd> mz(T);
    // Szz[t][s] = Cov(z_{t+1}, z_{s+1}) for s <= t
    std::vector<std::vector<Eigen::MatrixXd>> Szz(T, std::vector<Eigen::MatrixXd>(T));
    mz[0] = sys.mu0;
    Szz[0][0] = sys.Sigma0;
    for (std::size_t t = 1; t < T; ++t) {
        mz[t] = sys.A * mz[t - 1] + sys.c;
        for (std::size_t s = 0; s < t; ++s) Szz[t][s] = sys.A * Szz[t - 1][s];
        Szz[t][t] = symmetrize(sys.A * Szz[t - 1][t - 1] * sys.A.transpose() + sys.Q);
    }
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t s = t + 1; s < T; ++s) Szz[t][s] = Szz[s][t].transpose();
    }

    Eigen::Index zd = di(T * d), xd = di(T * m);
    Eigen::VectorXd mu_z(zd), mu_x(xd), xobs(xd);
    Eigen::MatrixXd Zz(zd, zd), Zx(zd, xd), Xx(xd, xd);
    for (std::size_t t = 0; t < T; ++t) {
        mu_z.segment(di(t * d), di(d)) = mz[t];
        mu_x.segment(di(t * m), di(m)) = sys.H * mz[t];
        xobs.segment(di(t * m), di(m)) = obs_row(x_seq, t);
        for (std::size_t s = 0; s < T; ++s) {
            Zz.block(di(t * d), di(s * d), di(d), di(d)) = Szz[t][s];
            Zx.block(di(t * d), di(s * m), di(d), di(m)) = Szz[t][s] * sys.H.transpose();
            Eigen::MatrixXd xxts = sys.H * Szz[t][s] * sys.H.transpose();
            if (t == s) xxts += sys.R;
            Xx.block(di(t * m), di(s * m), di(m), di(m)) = xxts;
        }
    }
    Xx = symmetrize(Xx);

    JointResult res;
    res.loglik = gaussian_logpdf(xobs, mu_x, Xx, "joint_conditioning_oracle");

    Eigen::LLT<Eigen::MatrixXd> llt(Xx);
    Eigen::MatrixXd XxInvXz = llt.solve(Zx.transpose());        // Xx^{-1} Zx^T
    Eigen::VectorXd post_mean = mu_z + Zx * llt.solve(xobs - mu_x);
    Eigen::MatrixXd post_cov = symmetrize(Zz - Zx * XxInvXz);   // Schur complement

    res.means.resize(T);
    res.covs.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        res.means[t] = post_mean.segment(di(t * d), di(d));
        res.covs[t] = post_cov.block(di(t * d), di(t * d), di(d), di(d));
    }
    return res;
}

double exact_rmse(const std::vector<GaussianSeq>& posterior, const std::vector<Tensor>& z_star) {
    if (posterior.size() != z_star.size() || posterior.empty()) {
        throw ContractViolation("exact_rmse: need matching nonempty posterior and z_star lists");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < posterior.size(); ++i) {
        const Tensor& mu = posterior[i].means;
        const Tensor& zs = z_star[i];
        check_same_shape(mu, zs, "exact_rmse");
        std::size_t T = mu.dim(0);
        double seq = 0.0;
        for (std::size_t j = 0; j < mu.numel(); ++j) {
            double e = mu[j] - zs[j];
            seq += e * e;
        }
        total += seq / static_cast<double>(T);
    }
    return std::sqrt(total / static_cast<double>(posterior.size()));
}

}  // namespace dmm
