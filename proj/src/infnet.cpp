#include "dmm/infnet.hpp"

#include <cmath>

#include "dmm/error.hpp"

namespace dmm {

namespace {

const std::set<std::string> kVariants = {"MF-L", "MF-LR", "ST-L", "DKS", "ST-LR"};

bool variant_mf(const std::string& v) { return v == "MF-L" || v == "MF-LR"; }

}  // namespace

json InfConfig::to_json() const {
    return json{{"variant", variant},       {"latent_dim", latent_dim},
                {"obs_dim", obs_dim},       {"action_dim", action_dim},
                {"rnn_dim", rnn_dim},       {"embed_dim", embed_dim}};
}

InfConfig InfConfig::from_json(const json& j) {
    InfConfig cfg;
    try {
        cfg.variant = j.at("variant").get<std::string>();
        cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
        cfg.obs_dim = j.at("obs_dim").get<std::size_t>();
        cfg.action_dim = j.at("action_dim").get<std::size_t>();
        cfg.rnn_dim = j.at("rnn_dim").get<std::size_t>();
        cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    } catch (const json::exception& e) {
        throw SchemaError(std::string("inference config: ") + e.what());
    }
    return cfg;
}

bool InferenceNetwork::uses_left() const { return cfg_.variant != "DKS"; }

bool InferenceNetwork::uses_right() const {
    return cfg_.variant == "MF-LR" || cfg_.variant == "DKS" || cfg_.variant == "ST-LR";
}

InferenceNetwork InferenceNetwork::make(const InfConfig& cfg, Rng& init_rng) {
    if (kVariants.count(cfg.variant) == 0) {
        throw ContractViolation("unknown inference variant '" + cfg.variant +
                                "' (expected MF-L, MF-LR, ST-L, DKS or ST-LR)");
    }
    if (cfg.latent_dim == 0 || cfg.obs_dim == 0 || cfg.rnn_dim == 0) {
        throw ContractViolation("inference network dims must be positive");
    }
    InferenceNetwork net;
    net.cfg_ = cfg;
    if (net.cfg_.embed_dim == 0) net.cfg_.embed_dim = cfg.rnn_dim;

    const std::size_t in_dim = cfg.obs_dim + cfg.action_dim;
    const std::size_t E = net.cfg_.embed_dim;
    const std::size_t R = cfg.rnn_dim;
    const std::size_t L = cfg.latent_dim;
    ParamStore& ps = net.params_;

    init_linear(ps, "in.0", in_dim, E, init_rng);
    for (const char* dir : {"fwd", "bwd"}) {
        if ((dir[0] == 'f' && !net.uses_left()) || (dir[0] == 'b' && !net.uses_right())) continue;
        std::string base = std::string("lstm.") + dir;
        ps.add(base + ".Wx", glorot_matrix(E, 4 * R, init_rng));
        ps.add(base + ".Wh", glorot_matrix(R, 4 * R, init_rng));
        ps.add(base + ".b", Tensor({4 * R}));
    }
    if (!variant_mf(cfg.variant)) init_linear(ps, "comb", L, R, init_rng);
    if (cfg.variant == "MF-LR") {
        init_linear(ps, "head.left.mu", R, L, init_rng);
        init_linear(ps, "head.left.var", R, L, init_rng);
        init_linear(ps, "head.right.mu", R, L, init_rng);
        init_linear(ps, "head.right.var", R, L, init_rng);
    } else {
        init_linear(ps, "head.mu", R, L, init_rng);
        init_linear(ps, "head.var", R, L, init_rng);
    }
    for (const auto& name : ps.names()) net.trainable_.insert(name);
    return net;
}

Var InferenceNetwork::embed_step(Tape& tape, Var input) const {
    return tanh(linear_forward(tape, params_, kPrefix, "in.0", input));
}

Var InferenceNetwork::lstm_step(Tape& tape, const std::string& dir, Var e_t, Var& h,
                                Var& c) const {
    const std::size_t R = cfg_.rnn_dim;
    std::string base = "lstm." + dir;
    Var Wx = tape.leaf(kPrefix + base + ".Wx", params_.at(base + ".Wx"));
    Var Wh = tape.leaf(kPrefix + base + ".Wh", params_.at(base + ".Wh"));
    Var b = tape.leaf(kPrefix + base + ".b", params_.at(base + ".b"));
    Var pre = matmul(e_t, Wx) + matmul(h, Wh) + b;
    Var i = sigmoid(slice(pre, 0, R));
    Var f = sigmoid(slice(pre, R, R));
    Var g = tanh(slice(pre, 2 * R, R));
    Var o = sigmoid(slice(pre, 3 * R, R));
    c = f * c + i * g;
    h = o * tanh(c);
    return h;
}

EncoderState InferenceNetwork::encode(Tape& tape, const Tensor& x_seq, const Tensor* mask_seq,
                                      const Tensor* u_seq) const {
    if (x_seq.rank() != 2 || x_seq.dim(1) != cfg_.obs_dim) {
        throw ContractViolation("encode: x_seq must be [T x obs_dim], got " + x_seq.shape_str());
    }
    const std::size_t T = x_seq.dim(0);
    if (T == 0) throw ContractViolation("encode: empty sequence");
    if (mask_seq != nullptr && !mask_seq->same_shape(x_seq)) {
        throw ContractViolation("encode: mask shape " + mask_seq->shape_str() +
                                " does not match x " + x_seq.shape_str());
    }
    if (cfg_.action_dim > 0) {
        if (u_seq == nullptr || u_seq->rank() != 2 || u_seq->dim(0) != T ||
            u_seq->dim(1) != cfg_.action_dim) {
            throw ContractViolation("encode: action-conditioned network needs u_seq [T x " +
                                    std::to_string(cfg_.action_dim) + "]");
        }
    } else if (u_seq != nullptr) {
        throw ContractViolation("encode: network takes no actions but u_seq was given");
    }

    // Missing entries are zeroed before the network ever sees them, so the
    // values stored under the mask cannot influence any downstream number.
    std::vector<Var> inputs(T);
    for (std::size_t t = 0; t < T; ++t) {
        std::size_t in_dim = cfg_.obs_dim + cfg_.action_dim;
        Tensor row({in_dim});
        for (std::size_t d = 0; d < cfg_.obs_dim; ++d) {
            double m = mask_seq ? mask_seq->at(t, d) : 1.0;
            row[d] = x_seq.at(t, d) * m;
        }
        for (std::size_t j = 0; j < cfg_.action_dim; ++j) {
            row[cfg_.obs_dim + j] = u_seq->at(t, j);
        }
        inputs[t] = embed_step(tape, tape.constant(std::move(row)));
    }

    EncoderState enc;
    const std::size_t R = cfg_.rnn_dim;
    if (uses_left()) {
        Var h = tape.constant(Tensor({R}));
        Var c = tape.constant(Tensor({R}));
        enc.left_vars.resize(T);
        for (std::size_t t = 0; t < T; ++t) {
            enc.left_vars[t] = lstm_step(tape, "fwd", inputs[t], h, c);
        }
        enc.h_left = Tensor({T, R});
        for (std::size_t t = 0; t < T; ++t) {
            const Tensor& v = enc.left_vars[t].val();
            for (std::size_t r = 0; r < R; ++r) enc.h_left.at(t, r) = v[r];
        }
    }
    if (uses_right()) {
        Var h = tape.constant(Tensor({R}));
        Var c = tape.constant(Tensor({R}));
        enc.right_vars.resize(T);
        for (std::size_t t = T; t-- > 0;) {
            enc.right_vars[t] = lstm_step(tape, "bwd", inputs[t], h, c);
        }
        enc.h_right = Tensor({T, R});
        for (std::size_t t = 0; t < T; ++t) {
            const Tensor& v = enc.right_vars[t].val();
            for (std::size_t r = 0; r < R; ++r) enc.h_right.at(t, r) = v[r];
        }
    }
    return enc;
}

std::pair<Var, Var> InferenceNetwork::head(Tape& tape, const std::string& base, Var h) const {
    Var mu = linear_forward(tape, params_, kPrefix, base + ".mu", h);
    Var var = softplus(linear_forward(tape, params_, kPrefix, base + ".var", h));
    return {mu, var};
}

std::pair<Var, Var> InferenceNetwork::combine_mf(Tape& tape, const Var* h_left_t,
                                                 const Var* h_right_t) const {
    if (cfg_.variant == "MF-L") {
        if (h_left_t == nullptr || h_right_t != nullptr) {
            throw ContractViolation("combine_mf: MF-L takes h_left only");
        }
        return head(tape, "head", *h_left_t);
    }
    if (cfg_.variant == "MF-LR") {
        if (h_left_t == nullptr || h_right_t == nullptr) {
            throw ContractViolation("combine_mf: MF-LR needs both hidden states");
        }
        auto [mu_l, var_l] = head(tape, "head.left", *h_left_t);
        auto [mu_r, var_r] = head(tape, "head.right", *h_right_t);
        Var denom = var_r + var_l;
        Var mu = (mu_r * var_l + mu_l * var_r) / denom;
        Var var = var_r * var_l / denom;
        return {mu, var};
    }
    throw ContractViolation("combine_mf: variant " + cfg_.variant + " is not mean-field");
}

std::pair<Var, Var> InferenceNetwork::combine_st(Tape& tape, Var z_prev, const Var* h_left_t,
                                                 const Var* h_right_t) const {
    if (variant_mf(cfg_.variant)) {
        throw ContractViolation("combine_st: variant " + cfg_.variant + " is mean-field");
    }
    bool want_l = uses_left();
    bool want_r = uses_right();
    if (want_l != (h_left_t != nullptr) || want_r != (h_right_t != nullptr)) {
        throw ContractViolation("combine_st: " + cfg_.variant + " expects " +
                                (want_l ? std::string("h_left") : std::string("")) +
                                (want_l && want_r ? " and " : "") +
                                (want_r ? std::string("h_right") : std::string("")));
    }
    Var tz = tanh(linear_forward(tape, params_, kPrefix, "comb", z_prev));
    Var h_comb{};
    if (cfg_.variant == "ST-LR") {
        h_comb = (tz + *h_left_t + *h_right_t) * (1.0 / 3.0);
    } else if (cfg_.variant == "DKS") {
        h_comb = (tz + *h_right_t) * 0.5;
    } else {  // ST-L
        h_comb = (tz + *h_left_t) * 0.5;
    }
    return head(tape, "head", h_comb);
}

InferResult InferenceNetwork::infer(Tape& tape, const Tensor& x_seq, const Tensor* mask_seq,
                                    const Tensor* u_seq, Rng& rng, bool sample) const {
    EncoderState enc = encode(tape, x_seq, mask_seq, u_seq);
    const std::size_t T = x_seq.dim(0);
    const std::size_t L = cfg_.latent_dim;
    const bool mf = variant_mf(cfg_.variant);

    InferResult out;
    out.mu.resize(T);
    out.var.resize(T);
    out.z.resize(T);
    out.q.means = Tensor({T, L});
    out.q.vars = Tensor({T, L});
    out.z_path = Tensor({T, L});

    Var z_prev = tape.constant(Tensor({L}));  // z_hat_0 = 0
    for (std::size_t t = 0; t < T; ++t) {
        const Var* hl = enc.has_left() ? &enc.left_vars[t] : nullptr;
        const Var* hr = enc.has_right() ? &enc.right_vars[t] : nullptr;
        auto [mu, var] = mf ? combine_mf(tape, hl, hr) : combine_st(tape, z_prev, hl, hr);
        Var z{};
        if (sample) {
            Tensor eps({L});
            for (std::size_t d = 0; d < L; ++d) eps[d] = draw_normal(rng);
            z = mu + sqrt(var) * tape.constant(std::move(eps));
        } else {
            z = mu;
        }
        out.mu[t] = mu;
        out.var[t] = var;
        out.z[t] = z;
        const Tensor& mv = mu.val();
        const Tensor& vv = var.val();
        const Tensor& zv = z.val();
        for (std::size_t d = 0; d < L; ++d) {
            out.q.means.at(t, d) = mv[d];
            out.q.vars.at(t, d) = vv[d];
            out.z_path.at(t, d) = zv[d];
        }
        if (!mf) z_prev = z;
    }
    return out;
}

json InferenceNetwork::to_json() const {
    return json{{"config", cfg_.to_json()}, {"params", params_.to_json()}};
}

InferenceNetwork InferenceNetwork::from_json(const json& j) {
    InfConfig cfg;
    ParamStore stored;
    try {
        cfg = InfConfig::from_json(j.at("config"));
        stored = ParamStore::from_json(j.at("params"));
    } catch (const json::exception& e) {
        throw SchemaError(std::string("inference network: ") + e.what());
    }
    Rng scratch(0);
    InferenceNetwork net;
    try {
        net = make(cfg, scratch);
    } catch (const ContractViolation& e) {
        throw SchemaError(std::string("inference network: ") + e.what());
    }
    if (stored.names() != net.params_.names()) {
        throw SchemaError("inference network: stored parameters do not match the '" +
                          cfg.variant + "' layout");
    }
    for (const auto& name : stored.names()) {
        if (!stored.at(name).same_shape(net.params_.at(name))) {
            throw SchemaError("inference network: parameter '" + name + "' has shape " +
                              stored.at(name).shape_str() + ", expected " +
                              net.params_.at(name).shape_str());
        }
    }
    net.params_ = std::move(stored);
    return net;
}

}  // namespace dmm
