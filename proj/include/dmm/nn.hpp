#pragma once

#include <string>
#include <vector>

#include "dmm/param_store.hpp"
#include "dmm/rng.hpp"
#include "dmm/tape.hpp"

namespace dmm {

enum class Act { Identity, Tanh, Relu, Sigmoid };

Act act_from_string(const std::string& name);
std::string act_to_string(Act act);

Var apply_act(Var x, Act act);

/// [fan_in x fan_out] matrix with uniform(+-sqrt(6/(fan_in+fan_out))) entries.
Tensor glorot_matrix(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Registers "<name>.W" = glorot_matrix(fan_in, fan_out) and "<name>.b"
/// [fan_out] zeros.
void init_linear(ParamStore& store, const std::string& name, std::size_t fan_in,
                 std::size_t fan_out, Rng& rng);

/// y = x W + b with parameters taken from the store and bound on the tape as
/// leaves "<leaf_prefix><name>.W" / ".b". x may be [fan_in] or [S x fan_in].
Var linear_forward(Tape& tape, const ParamStore& store, const std::string& leaf_prefix,
                   const std::string& name, Var x);

/// Registers layers "<base>.0", "<base>.1", ... for dims {in, h1, ..., out}.
void init_mlp(ParamStore& store, const std::string& base, const std::vector<std::size_t>& dims,
              Rng& rng);

/// Applies layer i then acts[i], in order. acts.size() selects the layer count.
Var mlp_forward(Tape& tape, const ParamStore& store, const std::string& leaf_prefix,
                const std::string& base, Var x, const std::vector<Act>& acts);

}  // namespace dmm
