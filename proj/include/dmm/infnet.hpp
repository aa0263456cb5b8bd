#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dmm/nn.hpp"
#include "dmm/param_store.hpp"
#include "dmm/rng.hpp"
#include "dmm/seq.hpp"
#include "dmm/tape.hpp"

namespace dmm {

using nlohmann::json;

/// Which recurrent encoders and combiner a network owns:
///   "MF-L"  — forward encoder only, mean-field head on h_left
///   "MF-LR" — both encoders, per-side heads merged by Gaussian product
///   "ST-L"  — forward encoder, structured combiner over (z_prev, h_left)
///   "DKS"   — backward encoder, structured combiner over (z_prev, h_right)
///   "ST-LR" — both encoders, structured combiner over all three
struct InfConfig {
    std::string variant = "DKS";
    std::size_t latent_dim = 0;
    std::size_t obs_dim = 0;
    std::size_t action_dim = 0;  // > 0: encoder input rows are [x_t; u_t]
    std::size_t rnn_dim = 40;
    std::size_t embed_dim = 0;  // input-MLP width; 0 means rnn_dim

    json to_json() const;
    static InfConfig from_json(const json& j);
};

/// Recurrent summaries per timestep. h_left[t] digests x_1..x_t (forward
/// pass), h_right[t] digests x_t..x_T (backward pass); a variant computes
/// only the directions it owns. The Var lists stay on the encoding tape for
/// gradient flow; the stacked tensors are copies for inspection.
struct EncoderState {
    std::vector<Var> left_vars, right_vars;  // length T when present
    Tensor h_left, h_right;                  // [T x rnn_dim] when present

    bool has_left() const { return !left_vars.empty(); }
    bool has_right() const { return !right_vars.empty(); }
};

/// One posterior sweep. q holds the per-step diagonal Gaussians, z_path the
/// draw (or the means when sampling is off). mu/var/z expose the same
/// quantities as live tape nodes, one per timestep, for building objectives.
struct InferResult {
    GaussianSeq q;
    Tensor z_path;  // [T x latent_dim]
    std::vector<Var> mu, var, z;
};

class InferenceNetwork {
  public:
    static constexpr const char* kPrefix = "inf.";

    /// Fresh network with Glorot-initialized weights drawn from init_rng.
    static InferenceNetwork make(const InfConfig& cfg, Rng& init_rng);

    const InfConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    /// Every parameter trains; listed for uniform handling alongside models.
    const std::set<std::string>& trainable() const { return trainable_; }

    bool uses_left() const;
    bool uses_right() const;

    /// Runs the input MLP per timestep, then the owned LSTM directions from
    /// zero initial states. mask_seq (when given) zeroes missing entries
    /// before the network sees them; u_seq is required iff action_dim > 0.
    EncoderState encode(Tape& tape, const Tensor& x_seq, const Tensor* mask_seq = nullptr,
                        const Tensor* u_seq = nullptr) const;

    /// Mean-field heads: MF-L reads h_left alone; MF-LR reads both sides and
    /// merges the two Gaussians by precision weighting.
    std::pair<Var, Var> combine_mf(Tape& tape, const Var* h_left_t, const Var* h_right_t) const;

    /// Structured combiner: average of tanh(W z_prev + b) with the owned
    /// hidden states, then linear mean head and softplus variance head.
    std::pair<Var, Var> combine_st(Tape& tape, Var z_prev, const Var* h_left_t,
                                   const Var* h_right_t) const;

    /// Left-to-right posterior sweep. z_t = mu_t + sqrt(var_t) * eps_t with
    /// eps_t ~ N(0, I) when sample, else z_t = mu_t; structured variants feed
    /// the drawn z_t into the next combine (z_hat_0 = 0), mean-field variants
    /// never look at it.
    InferResult infer(Tape& tape, const Tensor& x_seq, const Tensor* mask_seq,
                      const Tensor* u_seq, Rng& rng, bool sample) const;

    json to_json() const;
    static InferenceNetwork from_json(const json& j);

  private:
    InferenceNetwork() = default;

    Var embed_step(Tape& tape, Var input) const;
    Var lstm_step(Tape& tape, const std::string& dir, Var e_t, Var& h, Var& c) const;
    std::pair<Var, Var> head(Tape& tape, const std::string& base, Var h) const;

    InfConfig cfg_;
    ParamStore params_;
    std::set<std::string> trainable_;
};

}  // namespace dmm
