#include "dmm/elbo.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dmm/error.hpp"

namespace dmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

void check_pair(const GenerativeModel& model, const InferenceNetwork& net) {
    const ModelConfig& mc = model.config();
    const InfConfig& ic = net.config();
    if (mc.latent_dim != ic.latent_dim || mc.obs_dim != ic.obs_dim ||
        mc.action_dim != ic.action_dim) {
        throw ContractViolation(
            "model and inference network disagree on dims: latent " +
            std::to_string(mc.latent_dim) + "/" + std::to_string(ic.latent_dim) + ", obs " +
            std::to_string(mc.obs_dim) + "/" + std::to_string(ic.obs_dim) + ", action " +
            std::to_string(mc.action_dim) + "/" + std::to_string(ic.action_dim));
    }
}

Tensor x_row(const Tensor& x, std::size_t t) {
    Tensor row({x.dim(1)});
    for (std::size_t d = 0; d < x.dim(1); ++d) row[d] = x.at(t, d);
    return row;
}

}  // namespace

double anneal_weight(long long step, long long horizon) {
    if (horizon < 1) throw ContractViolation("anneal_weight: horizon must be >= 1");
    if (step < 0) throw ContractViolation("anneal_weight: step must be >= 0");
    return std::min(1.0, static_cast<double>(step) / static_cast<double>(horizon));
}

Var kl_diag_gaussian(Var mu_q, Var var_q, Var mu_p, Var var_p) {
    check_same_shape(mu_q.val(), var_q.val(), "kl_diag_gaussian");
    check_same_shape(mu_q.val(), mu_p.val(), "kl_diag_gaussian");
    check_same_shape(mu_q.val(), var_p.val(), "kl_diag_gaussian");
    for (const Var* v : {&var_q, &var_p}) {
        const Tensor& t = v->val();
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (!(t[i] > 0.0)) {
                throw ContractViolation("kl_diag_gaussian: variance entry " + std::to_string(i) +
                                        " is not positive: " + std::to_string(t[i]));
            }
        }
    }
    // r - 1 - log(r) rather than log(1/r) - 1 + r: the former keeps the
    // O(eps^2) divergence of nearly-identical variances out of the absorbing
    // -1 term, so tiny perturbations still come out strictly positive.
    Var r = var_q / var_p;
    Var terms = r - 1.0 - log(r) + square(mu_p - mu_q) / var_p;
    return 0.5 * sum(terms);
}

Var diag_gaussian_loglik(Var v, Var mu, Var var) {
    check_same_shape(v.val(), mu.val(), "diag_gaussian_loglik");
    check_same_shape(v.val(), var.val(), "diag_gaussian_loglik");
    return -0.5 * sum(log(var) + square(v - mu) / var + kLog2Pi);
}

ElboBreakdown elbo_sequence(Tape& tape, const GenerativeModel& model,
                            const InferenceNetwork& net, const Sequence& seq,
                            double anneal_weight, std::size_t n_samples, Rng& rng) {
    check_pair(model, net);
    if (n_samples < 1) throw ContractViolation("elbo: n_samples must be >= 1");
    if (anneal_weight < 0.0 || anneal_weight > 1.0) {
        throw ContractViolation("elbo: anneal_weight must lie in [0, 1], got " +
                                std::to_string(anneal_weight));
    }
    const std::size_t T = seq.T();
    if (T == 0) throw ContractViolation("elbo: empty sequence");
    const Tensor* mask = seq.has_mask() ? &seq.mask : nullptr;
    const Tensor* u = seq.has_u() ? &seq.u : nullptr;
    const bool actions = model.config().action_dim > 0;
    if (actions && u == nullptr) {
        throw ContractViolation("elbo: action-conditioned model but the sequence has no u");
    }

    Var prior_mu = tape.constant(model.prior_mean());
    Var prior_var = tape.constant(model.prior_var());
    Tensor ones_mask = Tensor::full({model.config().obs_dim}, 1.0);

    Var recon_acc = tape.constant_scalar(0.0);
    Var kl1_acc = tape.constant_scalar(0.0);
    Var klr_acc = tape.constant_scalar(0.0);
    for (std::size_t s = 0; s < n_samples; ++s) {
        InferResult res = net.infer(tape, seq.x, mask, u, rng, /*sample=*/true);

        Var recon = tape.constant_scalar(0.0);
        for (std::size_t t = 0; t < T; ++t) {
            Var x_t = tape.constant(x_row(seq.x, t));
            Var m_t = tape.constant(mask ? x_row(*mask, t) : ones_mask);
            recon = recon + model.log_emission(tape, x_t, m_t, res.z[t]);
        }

        Var kl1 = kl_diag_gaussian(res.mu[0], res.var[0], prior_mu, prior_var);
        Var klr = tape.constant_scalar(0.0);
        for (std::size_t t = 1; t < T; ++t) {
            Var u_prev{};
            TransitionOut tr{};
            if (actions) {
                u_prev = tape.constant(x_row(seq.u, t - 1));
                tr = model.transition(tape, res.z[t - 1], &u_prev);
            } else {
                tr = model.transition(tape, res.z[t - 1]);
            }
            klr = klr + kl_diag_gaussian(res.mu[t], res.var[t], tr.mean, tr.var);
        }
        recon_acc = recon_acc + recon;
        kl1_acc = kl1_acc + kl1;
        klr_acc = klr_acc + klr;
    }

    const double inv = 1.0 / static_cast<double>(n_samples);
    Var recon_mean = recon_acc * inv;
    Var kl1_mean = kl1_acc * inv;
    Var klr_mean = klr_acc * inv;

    ElboBreakdown out;
    out.anneal_weight = anneal_weight;
    out.objective_var = recon_mean - anneal_weight * (kl1_mean + klr_mean);
    out.reconstruction = recon_mean.val().value();
    out.kl_t1 = kl1_mean.val().value();
    out.kl_rest = klr_mean.val().value();
    out.objective = out.objective_var.val().value();
    return out;
}

ElboBreakdown elbo(Tape& tape, const GenerativeModel& model, const InferenceNetwork& net,
                   const SequenceBatch& batch, double anneal_weight, std::size_t n_samples,
                   Rng& rng) {
    if (batch.size() == 0) throw ContractViolation("elbo: empty batch");
    ElboBreakdown out;
    out.anneal_weight = anneal_weight;
    Var obj_sum = tape.constant_scalar(0.0);
    for (const Sequence& seq : batch.seqs) {
        ElboBreakdown b = elbo_sequence(tape, model, net, seq, anneal_weight, n_samples, rng);
        obj_sum = obj_sum + b.objective_var;
        out.reconstruction += b.reconstruction;
        out.kl_t1 += b.kl_t1;
        out.kl_rest += b.kl_rest;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.reconstruction *= inv;
    out.kl_t1 *= inv;
    out.kl_rest *= inv;
    out.objective_var = obj_sum * inv;
    out.objective = out.objective_var.val().value();
    return out;
}

double is_loglik(const GenerativeModel& model, const InferenceNetwork& net, const Sequence& seq,
                 std::size_t S, Rng& rng) {
    check_pair(model, net);
    if (S < 1) throw ContractViolation("is_loglik: S must be >= 1");
    const std::size_t T = seq.T();
    if (T == 0) throw ContractViolation("is_loglik: empty sequence");
    const Tensor* mask = seq.has_mask() ? &seq.mask : nullptr;
    const Tensor* u = seq.has_u() ? &seq.u : nullptr;
    const bool actions = model.config().action_dim > 0;
    if (actions && u == nullptr) {
        throw ContractViolation("is_loglik: action-conditioned model but the sequence has no u");
    }
    Tensor ones_mask = Tensor::full({model.config().obs_dim}, 1.0);

    std::vector<double> logw(S);
    for (std::size_t s = 0; s < S; ++s) {
        Tape tape;
        InferResult res = net.infer(tape, seq.x, mask, u, rng, /*sample=*/true);
        Var prior_mu = tape.constant(model.prior_mean());
        Var prior_var = tape.constant(model.prior_var());

        double lpx = 0.0, lpz = 0.0, lq = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            Var x_t = tape.constant(x_row(seq.x, t));
            Var m_t = tape.constant(mask ? x_row(*mask, t) : ones_mask);
            lpx += model.log_emission(tape, x_t, m_t, res.z[t]).val().value();
            lq += diag_gaussian_loglik(res.z[t], res.mu[t], res.var[t]).val().value();
            if (t == 0) {
                lpz += diag_gaussian_loglik(res.z[0], prior_mu, prior_var).val().value();
            } else {
                TransitionOut tr{};
                if (actions) {
                    Var u_prev = tape.constant(x_row(seq.u, t - 1));
                    tr = model.transition(tape, res.z[t - 1], &u_prev);
                } else {
                    tr = model.transition(tape, res.z[t - 1]);
                }
                lpz += diag_gaussian_loglik(res.z[t], tr.mean, tr.var).val().value();
            }
        }
        logw[s] = lpx + lpz - lq;
    }

    double m = *std::max_element(logw.begin(), logw.end());
    double acc = 0.0;
    for (double w : logw) acc += std::exp(w - m);
    return m + std::log(acc / static_cast<double>(S));
}

}  // namespace dmm
