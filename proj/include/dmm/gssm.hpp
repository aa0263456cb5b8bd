#pragma once

#include <set>
#include <string>
#include <utility>

#include <json.hpp>

#include "dmm/exact.hpp"
#include "dmm/nn.hpp"
#include "dmm/param_store.hpp"
#include "dmm/rng.hpp"
#include "dmm/seq.hpp"
#include "dmm/tape.hpp"

namespace dmm {

/// Diagonal-Gaussian transition output on the tape; var is strictly positive
/// by construction (softplus or positive stored values).
struct TransitionOut {
    Var mean;
    Var var;
};

/// Emission distribution on the tape. Bernoulli carries logits (probabilities
/// are sigmoid(logits), strictly inside (0,1)); Gaussian carries mean and var.
struct EmissionOut {
    bool bernoulli = false;
    Var logits;  // Bernoulli only
    Var mean;    // Gaussian only
    Var var;     // Gaussian only
};

struct ModelConfig {
    std::string variant = "DMM";  // LinearGSSM | NonlinearGSSM2D | DMM | DMM-Actions
    std::size_t latent_dim = 1;
    std::size_t obs_dim = 1;
    std::size_t action_dim = 0;
    std::size_t trans_hidden = 200;
    std::size_t emis_hidden = 100;
    std::string nonlinearity = "tanh";  // emission MLP activation
    // NonlinearGSSM2D initial values of the two trainable dynamics parameters
    double alpha0 = 0.0;
    double beta0 = 0.0;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// The generative side: fixed linear and 2-D nonlinear synthetic systems, the
/// gated-transition deep Markov model, and its action-conditioned variant.
/// All forward passes run on a caller-supplied tape so gradients can flow to
/// the parameters listed in trainable().
class GenerativeModel {
  public:
    static GenerativeModel make(const ModelConfig& cfg, Rng& init_rng);

    /// The fixed 1-D drifting linear system (all parameters frozen).
    static GenerativeModel linear_drift();
    /// 2-D nonlinear system with trainable alpha/beta starting at the given values.
    static GenerativeModel nonlinear2d(double alpha0, double beta0);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    /// Parameter names gradient descent may move; the rest stay frozen.
    const std::set<std::string>& trainable() const { return trainable_; }

    const Tensor& prior_mean() const { return prior_mean_; }
    const Tensor& prior_var() const { return prior_var_; }
    /// Replace the z_1 prior (defaults to N(0, I)). var must be >= 0
    /// elementwise; zero variance makes sampling deterministic at the mean.
    void set_prior(Tensor mean, Tensor var);

    /// p(z_t | z_{t-1}[, u_{t-1}]). z_prev is [latent] or [S x latent];
    /// u_prev is required exactly for the action variant.
    TransitionOut transition(Tape& tape, Var z_prev, const Var* u_prev = nullptr) const;

    /// p(x_t | z_t). z is [latent] or [S x latent].
    EmissionOut emission(Tape& tape, Var z) const;

    /// sum_d mask_d * log p(x_d | z), differentiable in z and parameters.
    /// x and mask are [obs]; z may be [latent] (scalar result) or
    /// [S x latent] ([S] result, one value per sample).
    Var log_emission(Tape& tape, Var x, Var mask, Var z) const;

    /// Ancestral draw of (z_seq [T x latent], x_seq [T x obs]). u_seq must be
    /// [T x action_dim] for the action variant and absent otherwise.
    std::pair<Tensor, Tensor> sample_sequence(std::size_t T, const Tensor* u_seq,
                                              Rng& rng) const;

    bool is_action_conditioned() const { return cfg_.variant == "DMM-Actions"; }
    bool emits_bernoulli() const;

    /// Config + parameters + trainable flags.
    nlohmann::json to_json() const;
    static GenerativeModel from_json(const nlohmann::json& j);

    /// Leaf-name prefix this model uses on tapes ("gen.").
    static const std::string kPrefix;

  private:
    GenerativeModel() = default;
    void init_params(Rng& rng);

    ModelConfig cfg_;
    ParamStore params_;
    std::set<std::string> trainable_;
    Tensor prior_mean_;
    Tensor prior_var_;
};

/// Matrix form of a LinearGSSM model for the exact-inference oracle.
/// Throws ContractViolation for any other variant.
LinearSystem linear_system_of(const GenerativeModel& model);

}  // namespace dmm
