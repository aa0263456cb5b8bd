#pragma once

#include <cstddef>

#include "dmm/gssm.hpp"
#include "dmm/infnet.hpp"
#include "dmm/rng.hpp"
#include "dmm/seq.hpp"
#include "dmm/tape.hpp"

namespace dmm {

/// The training objective split into its terms. The doubles mirror the tape
/// values; objective_var is the live scalar node for gradient sweeps.
struct ElboBreakdown {
    double reconstruction = 0.0;  // sum_t E_q[log p(x_t | z_t)]
    double kl_t1 = 0.0;           // KL(q(z_1 | x) || p(z_1))
    double kl_rest = 0.0;         // sum_{t>=2} E_q KL(q(z_t | ...) || p(z_t | z_{t-1}))
    double anneal_weight = 1.0;
    double objective = 0.0;       // reconstruction - anneal_weight * (kl_t1 + kl_rest)
    Var objective_var{};
};

/// Linear KL ramp: min(1, step / horizon). horizon must be >= 1.
double anneal_weight(long long step, long long horizon);

/// 0.5 sum_d [ var_q/var_p - 1 - log(var_q/var_p) + (mu_p - mu_q)^2 / var_p ],
/// the divergence from N(mu_q, var_q) to N(mu_p, var_p), diagonal covariances.
/// Differentiable in all four inputs; variances must be strictly positive.
Var kl_diag_gaussian(Var mu_q, Var var_q, Var mu_p, Var var_p);

/// log N(v; mu, var) with diagonal covariance, summed over dimensions.
Var diag_gaussian_loglik(Var v, Var mu, Var var);

/// Variational bound for one sequence: runs the inference network with
/// sampling, scores reconstruction through the masked emission density,
/// takes kl_t1 analytically against the z_1 prior and kl_rest analytically
/// against the transition evaluated at the sampled path. n_samples > 1
/// averages independent full-path samples.
ElboBreakdown elbo_sequence(Tape& tape, const GenerativeModel& model,
                            const InferenceNetwork& net, const Sequence& seq,
                            double anneal_weight, std::size_t n_samples, Rng& rng);

/// Per-sequence bounds averaged over the batch, built on one tape.
ElboBreakdown elbo(Tape& tape, const GenerativeModel& model, const InferenceNetwork& net,
                   const SequenceBatch& batch, double anneal_weight, std::size_t n_samples,
                   Rng& rng);

/// Importance-sampled log-likelihood estimate: draws S posterior paths and
/// returns log (1/S) sum_s exp[log p(x|z_s) + log p(z_s) - log q(z_s|x)],
/// stabilized by subtracting the max log-weight.
double is_loglik(const GenerativeModel& model, const InferenceNetwork& net, const Sequence& seq,
                 std::size_t S, Rng& rng);

}  // namespace dmm
