#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmm/gssm.hpp"
#include "dmm/infnet.hpp"
#include "dmm/seq.hpp"
#include "dmm/trainer.hpp"

namespace dmm {

/// Posterior mean paths q(z_t | x) for every sequence, eps-free (the sweep
/// uses the means, never a draw). Masks and actions are honored when present.
std::vector<GaussianSeq> posterior_marginals(const InferenceNetwork& net,
                                             const SequenceBatch& batch);

/// sqrt( (1/N) sum_i (1/T_i) sum_t sum_d (mean_{i,t,d} - z*_{i,t,d})^2 ):
/// root mean squared error of posterior means against ground-truth latents,
/// squared error summed over latent dims, averaged per step then per sequence.
/// Every sequence must carry z_star of the marginals' shape.
double rmse_posterior(const std::vector<GaussianSeq>& marginals, const SequenceBatch& batch);

/// Held-out likelihood summary in the three-number "a (b) {c}" convention:
///   a — importance-sampling NLL, -sum_i log-lik_S(x_i) / sum_i T_i
///       (normalized like b so the two columns are directly comparable);
///   b — bound NLL, -sum_i L(x_i) / sum_i T_i with L the 1-sample bound;
///   c — per-sequence bound mean, (1/N) sum_i L(x_i)/T_i, reported with the
///       bound's own sign (positive is better) to match the convention used
///       by sigmoid-belief-network baselines.
/// a <= b + statistical noise in expectation (the IS estimate tightens the
/// bound); S is the sample count behind a.
struct NllReport {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    std::size_t samples = 0;

    std::string formatted() const;  // "a (b) {c}" with four decimals
    nlohmann::json to_json() const;
};

NllReport nll_report(const GenerativeModel& model, const InferenceNetwork& net,
                     const SequenceBatch& test_set, std::size_t S, std::uint64_t seed,
                     std::size_t threads = 1);

/// One (variant, seed) training outcome: the best held-out bound the run
/// reached and, when the validation split carries ground-truth latents, the
/// posterior-mean RMSE of the trained network on that split (else NaN).
struct VariantRow {
    std::string variant;
    std::uint64_t seed = 0;
    double valid_bound = 0.0;
    double rmse = 0.0;
};

struct CompareTable {
    std::vector<VariantRow> rows;

    std::string to_csv() const;  // header variant,seed,valid_bound,rmse
};

/// Trains every (variant, seed) pair from scratch under one budget: a fresh
/// model from model_cfg and a fresh network from net_proto (its variant field
/// overridden, its dims forced to match the model) per cell, seeded so that
/// identical cells produce identical rows. The last n_valid sequences form
/// the held-out split. cfg.seed is overridden by each cell's seed.
CompareTable compare_variants(const ModelConfig& model_cfg, const InfConfig& net_proto,
                              const std::vector<std::string>& variants,
                              const SequenceBatch& dataset, std::size_t n_valid,
                              const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds);

/// Which observation coordinate counts as the indicator, and the cut above
/// which its reconstruction (mean for Gaussian, probability for Bernoulli)
/// reads as "high".
struct ThresholdSpec {
    std::size_t dim = 0;
    double cut = 0.5;
};

/// Paired rollout summary. factual[h-1] and counterfactual[h-1] are the
/// proportions of rollouts whose reconstructed indicator read "high" at the
/// h-th step after the intervention point (h = 1..horizon).
struct CounterfactualReport {
    std::size_t k = 0;
    std::size_t n_rollouts = 0;
    std::vector<double> factual;
    std::vector<double> counterfactual;

    std::string to_csv() const;  // step,factual,counterfactual series
    nlohmann::json to_json() const;
};

/// Model-based intervention contrast for one history. Infers q(z | x_{1..k},
/// u_{1..k}), takes the posterior mean at step k, then ancestrally samples
/// two latent futures per rollout under common random numbers: the factual
/// branch conditions on u_future (rows k..k+horizon-1 of the action
/// sequence), the counterfactual branch on the zero action. Observations are
/// reconstructed (emission mean, or sigmoid of the logits for Bernoulli
/// models), thresholded per th, and averaged over rollouts. A zero-effect
/// action therefore yields bitwise-identical factual and counterfactual
/// traces. horizon = 0 yields an empty report.
CounterfactualReport counterfactual_rollout(const GenerativeModel& model,
                                            const InferenceNetwork& net, const Tensor& x_prefix,
                                            const Tensor& u_prefix, const Tensor& u_future,
                                            std::size_t k, std::size_t horizon,
                                            std::size_t n_rollouts, const ThresholdSpec& th,
                                            Rng& rng);

/// counterfactual_rollout over a cohort: each sequence contributes its own
/// prefix x_{1..k}, u_{1..k} and its own recorded actions u_{k+1..k+horizon}
/// as the factual future, so every sequence needs T >= k + horizon. Per-step
/// proportions are averaged over the cohort with equal weight per sequence;
/// sequence i draws from its own stream spawned off seed.
CounterfactualReport counterfactual_cohort(const GenerativeModel& model,
                                           const InferenceNetwork& net,
                                           const SequenceBatch& cohort, std::size_t k,
                                           std::size_t horizon, std::size_t n_rollouts,
                                           const ThresholdSpec& th, std::uint64_t seed,
                                           std::size_t threads = 1);

}  // namespace dmm
