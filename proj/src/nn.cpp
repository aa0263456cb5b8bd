#include "dmm/nn.hpp"

#include <cmath>

#include "dmm/error.hpp"

namespace dmm {

Act act_from_string(const std::string& name) {
    if (name == "identity") return Act::Identity;
    if (name == "tanh") return Act::Tanh;
    if (name == "relu") return Act::Relu;
    if (name == "sigmoid") return Act::Sigmoid;
    throw ContractViolation("unknown nonlinearity '" + name +
                            "' (expected identity, tanh, relu or sigmoid)");
}

std::string act_to_string(Act act) {
    switch (act) {
        case Act::Identity: return "identity";
        case Act::Tanh: return "tanh";
        case Act::Relu: return "relu";
        case Act::Sigmoid: return "sigmoid";
    }
    return "identity";
}

Var apply_act(Var x, Act act) {
    switch (act) {
        case Act::Identity: return x;
        case Act::Tanh: return tanh(x);
        case Act::Relu: return relu(x);
        case Act::Sigmoid: return sigmoid(x);
    }
    return x;
}

Tensor glorot_matrix(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor W({fan_in, fan_out});
    for (std::size_t i = 0; i < W.numel(); ++i) W[i] = bound * (2.0 * draw_uniform(rng) - 1.0);
    return W;
}

void init_linear(ParamStore& store, const std::string& name, std::size_t fan_in,
                 std::size_t fan_out, Rng& rng) {
    store.add(name + ".W", glorot_matrix(fan_in, fan_out, rng));
    store.add(name + ".b", Tensor({fan_out}));
}

Var linear_forward(Tape& tape, const ParamStore& store, const std::string& leaf_prefix,
                   const std::string& name, Var x) {
    Var W = tape.leaf(leaf_prefix + name + ".W", store.at(name + ".W"));
    Var b = tape.leaf(leaf_prefix + name + ".b", store.at(name + ".b"));
    return matmul(x, W) + b;
}

void init_mlp(ParamStore& store, const std::string& base, const std::vector<std::size_t>& dims,
              Rng& rng) {
    if (dims.size() < 2) throw ContractViolation("init_mlp: need at least input and output dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        init_linear(store, base + "." + std::to_string(i), dims[i], dims[i + 1], rng);
    }
}

Var mlp_forward(Tape& tape, const ParamStore& store, const std::string& leaf_prefix,
                const std::string& base, Var x, const std::vector<Act>& acts) {
    Var h = x;
    for (std::size_t i = 0; i < acts.size(); ++i) {
        h = linear_forward(tape, store, leaf_prefix, base + "." + std::to_string(i), h);
        h = apply_act(h, acts[i]);
    }
    return h;
}

}  // namespace dmm
