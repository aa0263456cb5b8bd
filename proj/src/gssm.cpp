#include "dmm/gssm.hpp"

#include <cmath>

#include "dmm/error.hpp"

namespace dmm {

using nlohmann::json;

const std::string GenerativeModel::kPrefix = "gen.";

namespace {

const std::set<std::string> kVariants = {"LinearGSSM", "NonlinearGSSM2D", "DMM", "DMM-Actions"};

// Materialize a scalar parameter across the shape of `like`, keeping the
// result differentiable with respect to the parameter.
Var spread(Tape& tape, Var scalar_param, Var like) {
    return scalar_param * tape.constant(Tensor::full(like.val().shape(), 1.0));
}

void check_mask_binary(const Tensor& mask) {
    for (std::size_t i = 0; i < mask.numel(); ++i) {
        if (mask[i] != 0.0 && mask[i] != 1.0) {
            throw ContractViolation("log_emission: mask entries must be 0 or 1, got " +
                                    std::to_string(mask[i]));
        }
    }
}

}  // namespace

json ModelConfig::to_json() const {
    return json{{"variant", variant},
                {"latent_dim", latent_dim},
                {"obs_dim", obs_dim},
                {"action_dim", action_dim},
                {"trans_hidden", trans_hidden},
                {"emis_hidden", emis_hidden},
                {"nonlinearity", nonlinearity},
                {"alpha0", alpha0},
                {"beta0", beta0}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("model config: expected a JSON object");
    ModelConfig cfg;
    try {
        cfg.variant = j.at("variant").get<std::string>();
        cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
        cfg.obs_dim = j.at("obs_dim").get<std::size_t>();
        cfg.action_dim = j.value("action_dim", std::size_t{0});
        cfg.trans_hidden = j.value("trans_hidden", std::size_t{200});
        cfg.emis_hidden = j.value("emis_hidden", std::size_t{100});
        cfg.nonlinearity = j.value("nonlinearity", std::string("tanh"));
        cfg.alpha0 = j.value("alpha0", 0.0);
        cfg.beta0 = j.value("beta0", 0.0);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("model config: ") + e.what());
    }
    return cfg;
}

GenerativeModel GenerativeModel::make(const ModelConfig& cfg, Rng& init_rng) {
    if (kVariants.count(cfg.variant) == 0) {
        throw ContractViolation("GenerativeModel: unknown variant '" + cfg.variant + "'");
    }
    GenerativeModel m;
    m.cfg_ = cfg;
    if (cfg.variant == "LinearGSSM") {
        m.cfg_.latent_dim = 1;
        m.cfg_.obs_dim = 1;
        m.cfg_.action_dim = 0;
    } else if (cfg.variant == "NonlinearGSSM2D") {
        m.cfg_.latent_dim = 2;
        m.cfg_.obs_dim = 2;
        m.cfg_.action_dim = 0;
    }
    if (m.cfg_.variant == "DMM-Actions" && m.cfg_.action_dim == 0) {
        throw ContractViolation("GenerativeModel: DMM-Actions requires action_dim >= 1");
    }
    if (m.cfg_.variant != "DMM-Actions") m.cfg_.action_dim = 0;
    if (m.cfg_.latent_dim == 0 || m.cfg_.obs_dim == 0) {
        throw ContractViolation("GenerativeModel: latent_dim and obs_dim must be >= 1");
    }
    m.prior_mean_ = Tensor({m.cfg_.latent_dim});
    m.prior_var_ = Tensor::full({m.cfg_.latent_dim}, 1.0);
    m.init_params(init_rng);
    return m;
}

GenerativeModel GenerativeModel::linear_drift() {
    ModelConfig cfg;
    cfg.variant = "LinearGSSM";
    Rng rng = spawn_stream(0, "unused");
    return make(cfg, rng);
}

GenerativeModel GenerativeModel::nonlinear2d(double alpha0, double beta0) {
    ModelConfig cfg;
    cfg.variant = "NonlinearGSSM2D";
    cfg.alpha0 = alpha0;
    cfg.beta0 = beta0;
    Rng rng = spawn_stream(0, "unused");
    return make(cfg, rng);
}

void GenerativeModel::init_params(Rng& rng) {
    std::size_t L = cfg_.latent_dim;
    if (cfg_.variant == "LinearGSSM") {
        // the fixed drifting system: z_t ~ N(z_{t-1} + 0.05, 10), x_t ~ N(0.5 z_t, 20)
        params_.add("trans.a", Tensor::scalar(1.0));
        params_.add("trans.c", Tensor::scalar(0.05));
        params_.add("trans.var", Tensor::scalar(10.0));
        params_.add("emis.h", Tensor::scalar(0.5));
        params_.add("emis.var", Tensor::scalar(20.0));
        // all fields frozen: the system is a fixed oracle target
        return;
    }
    if (cfg_.variant == "NonlinearGSSM2D") {
        params_.add("trans.alpha", Tensor::scalar(cfg_.alpha0));
        params_.add("trans.beta", Tensor::scalar(cfg_.beta0));
        params_.add("trans.var", Tensor::scalar(1.0));
        params_.add("emis.h", Tensor::scalar(0.5));
        params_.add("emis.var", Tensor::scalar(0.1));
        // only the two dynamics parameters learn
        trainable_ = {"trans.alpha", "trans.beta"};
        return;
    }

    // DMM / DMM-Actions: gated transition + MLP emission
    std::size_t ti = L + cfg_.action_dim;  // transition input dim
    std::size_t Ht = cfg_.trans_hidden;
    std::size_t He = cfg_.emis_hidden;
    init_mlp(params_, "trans.gate", {ti, Ht, L}, rng);
    init_mlp(params_, "trans.prop", {ti, Ht, L}, rng);
    // linear skip initialized to the identity map on z
    Tensor skipW({L, L});
    for (std::size_t i = 0; i < L; ++i) skipW.at(i, i) = 1.0;
    params_.add("trans.skip.W", std::move(skipW));
    params_.add("trans.skip.b", Tensor({L}));
    init_linear(params_, "trans.var", L, L, rng);
    init_mlp(params_, "emis", {L, He, He, cfg_.obs_dim}, rng);
    for (const auto& name : params_.names()) trainable_.insert(name);
}

void GenerativeModel::set_prior(Tensor mean, Tensor var) {
    if (mean.rank() != 1 || mean.dim(0) != cfg_.latent_dim || !mean.same_shape(var)) {
        throw ContractViolation("set_prior: mean and var must be [latent_dim] vectors");
    }
    for (std::size_t i = 0; i < var.numel(); ++i) {
        if (var[i] < 0.0) throw ContractViolation("set_prior: negative prior variance");
    }
    prior_mean_ = std::move(mean);
    prior_var_ = std::move(var);
}

bool GenerativeModel::emits_bernoulli() const {
    return cfg_.variant == "DMM" || cfg_.variant == "DMM-Actions";
}

TransitionOut GenerativeModel::transition(Tape& tape, Var z_prev, const Var* u_prev) const {
    if (is_action_conditioned() && u_prev == nullptr) {
        throw ContractViolation("transition: action-conditioned model requires u_prev");
    }
    if (!is_action_conditioned() && u_prev != nullptr) {
        throw ContractViolation("transition: u_prev given to a model without actions");
    }
    auto P = [&](const std::string& name) { return tape.leaf(kPrefix + name, params_.at(name)); };

    if (cfg_.variant == "LinearGSSM") {
        Var mean = P("trans.a") * z_prev + P("trans.c");
        return {mean, spread(tape, P("trans.var"), z_prev)};
    }
    if (cfg_.variant == "NonlinearGSSM2D") {
        Var z0 = slice(z_prev, 0, 1);
        Var z1 = slice(z_prev, 1, 1);
        Var m0 = z0 * 0.2 + tanh(P("trans.alpha") * z1);
        Var m1 = z1 * 0.2 + sin(P("trans.beta") * z0);
        Var mean = concat(m0, m1);
        return {mean, spread(tape, P("trans.var"), z_prev)};
    }

    // gated transition: blend a linear random-walk proposal with an MLP one
    Var input = is_action_conditioned() ? concat(z_prev, *u_prev) : z_prev;
    Var g = mlp_forward(tape, params_, kPrefix, "trans.gate", input, {Act::Relu, Act::Sigmoid});
    Var h = mlp_forward(tape, params_, kPrefix, "trans.prop", input, {Act::Relu, Act::Identity});
    // the linear skip sees only the z part, so identity init keeps mu = z
    Var lin = matmul(z_prev, P("trans.skip.W")) + P("trans.skip.b");
    Var mean = (1.0 - g) * lin + g * h;
    Var var = softplus(matmul(relu(h), P("trans.var.W")) + P("trans.var.b"));
    return {mean, var};
}

EmissionOut GenerativeModel::emission(Tape& tape, Var z) const {
    auto P = [&](const std::string& name) { return tape.leaf(kPrefix + name, params_.at(name)); };
    EmissionOut out;
    if (cfg_.variant == "LinearGSSM" || cfg_.variant == "NonlinearGSSM2D") {
        out.bernoulli = false;
        out.mean = P("emis.h") * z;
        out.var = spread(tape, P("emis.var"), z);
        return out;
    }
    Act act = act_from_string(cfg_.nonlinearity);
    out.bernoulli = true;
    out.logits = mlp_forward(tape, params_, kPrefix, "emis", z, {act, act, Act::Identity});
    return out;
}

Var GenerativeModel::log_emission(Tape& tape, Var x, Var mask, Var z) const {
    // Copies, not references: emitting nodes below may reallocate tape storage.
    const Tensor xv = x.val();
    const Tensor mv = mask.val();
    if (xv.rank() != 1 || mv.rank() != 1 || xv.dim(0) != cfg_.obs_dim ||
        mv.dim(0) != cfg_.obs_dim) {
        throw ContractViolation("log_emission: x and mask must be [obs_dim] vectors, got " +
                                xv.shape_str() + " and " + mv.shape_str());
    }
    check_mask_binary(mv);
    // Kill masked entries at the door: everything downstream sees x*mask, so
    // the value stored under a masked entry can never influence any result.
    Var xe = x * mask;

    EmissionOut e = emission(tape, z);
    Var ll{};
    if (e.bernoulli) {
        for (std::size_t d = 0; d < cfg_.obs_dim; ++d) {
            if (mv[d] != 0.0 && xv[d] != 0.0 && xv[d] != 1.0) {
                throw ContractViolation("log_emission: Bernoulli observation at dim " +
                                        std::to_string(d) + " is not binary: " +
                                        std::to_string(xv[d]));
            }
        }
        // log p(x|l) = -(x softplus(-l) + (1-x) softplus(l)), stable in l
        ll = -(xe * softplus(-e.logits) + (1.0 - xe) * softplus(e.logits));
    } else {
        constexpr double kLog2Pi = 1.8378770664093453;
        Var r = xe - e.mean;
        ll = (log(e.var) + square(r) / e.var + kLog2Pi) * -0.5;
    }
    Var masked = ll * mask;
    return masked.val().rank() == 1 ? sum(masked, 0) : sum(masked, 1);
}

std::pair<Tensor, Tensor> GenerativeModel::sample_sequence(std::size_t T, const Tensor* u_seq,
                                                           Rng& rng) const {
    if (T == 0) throw ContractViolation("sample_sequence: T must be >= 1");
    if (is_action_conditioned()) {
        if (u_seq == nullptr || u_seq->rank() != 2 || u_seq->dim(0) != T ||
            u_seq->dim(1) != cfg_.action_dim) {
            throw ContractViolation(
                "sample_sequence: action-conditioned model needs u_seq [T x action_dim]");
        }
    } else if (u_seq != nullptr) {
        throw ContractViolation("sample_sequence: u_seq given to a model without actions");
    }
    std::size_t L = cfg_.latent_dim, D = cfg_.obs_dim;
    Tensor z_seq({T, L});
    Tensor x_seq({T, D});
    Tensor z({L});
    for (std::size_t t = 0; t < T; ++t) {
        // per step: latent noise dims first, then observation noise dims
        Tape tape;
        if (t == 0) {
            for (std::size_t i = 0; i < L; ++i) {
                z[i] = prior_mean_[i] + std::sqrt(prior_var_[i]) * draw_normal(rng);
            }
        } else {
            Tensor z_prev = z;
            Var zp = tape.constant(z_prev);
            Var up{};
            TransitionOut tr{};
            if (is_action_conditioned()) {
                Tensor urow({cfg_.action_dim});
                for (std::size_t j = 0; j < cfg_.action_dim; ++j) {
                    urow[j] = u_seq->at(t - 1, j);
                }
                up = tape.constant(urow);
                tr = transition(tape, zp, &up);
            } else {
                tr = transition(tape, zp);
            }
            const Tensor& mu = tr.mean.val();
            const Tensor& var = tr.var.val();
            for (std::size_t i = 0; i < L; ++i) {
                z[i] = mu[i] + std::sqrt(var[i]) * draw_normal(rng);
            }
        }
        for (std::size_t i = 0; i < L; ++i) z_seq.at(t, i) = z[i];

        EmissionOut e = emission(tape, tape.constant(z));
        if (e.bernoulli) {
            const Tensor& p = sigmoid(e.logits).val();
            for (std::size_t d = 0; d < D; ++d) {
                x_seq.at(t, d) = draw_uniform(rng) < p[d] ? 1.0 : 0.0;
            }
        } else {
            const Tensor& mu = e.mean.val();
            const Tensor& var = e.var.val();
            for (std::size_t d = 0; d < D; ++d) {
                x_seq.at(t, d) = mu[d] + std::sqrt(var[d]) * draw_normal(rng);
            }
        }
    }
    return {std::move(z_seq), std::move(x_seq)};
}

json GenerativeModel::to_json() const {
    return json{{"config", cfg_.to_json()},
                {"params", params_.to_json()},
                {"trainable", trainable_},
                {"prior_mean", prior_mean_.flat()},
                {"prior_var", prior_var_.flat()}};
}

GenerativeModel GenerativeModel::from_json(const json& j) {
    if (!j.is_object() || !j.contains("config") || !j.contains("params")) {
        throw SchemaError("model: expected object with 'config' and 'params'");
    }
    ModelConfig cfg = ModelConfig::from_json(j.at("config"));
    Rng rng = spawn_stream(0, "model-load");
    GenerativeModel fresh = make(cfg, rng);
    GenerativeModel m;
    m.cfg_ = fresh.cfg_;
    m.prior_mean_ = fresh.prior_mean_;
    m.prior_var_ = fresh.prior_var_;
    m.params_ = ParamStore::from_json(j.at("params"));
    // loaded parameters must cover exactly the names construction defines
    if (m.params_.names() != fresh.params_.names()) {
        throw SchemaError("model: parameter names do not match the '" + cfg.variant +
                          "' variant layout");
    }
    for (const auto& name : m.params_.names()) {
        if (!m.params_.at(name).same_shape(fresh.params_.at(name))) {
            throw SchemaError("model: parameter '" + name + "' has shape " +
                              m.params_.at(name).shape_str() + ", expected " +
                              fresh.params_.at(name).shape_str());
        }
    }
    if (j.contains("trainable")) {
        for (const auto& name : j.at("trainable")) {
            std::string n = name.get<std::string>();
            if (!m.params_.has(n)) {
                throw SchemaError("model: trainable flag for unknown parameter '" + n + "'");
            }
            m.trainable_.insert(n);
        }
    } else {
        m.trainable_ = fresh.trainable_;
    }
    if (j.contains("prior_mean")) {
        auto pm = j.at("prior_mean").get<std::vector<double>>();
        auto pv = j.at("prior_var").get<std::vector<double>>();
        if (pm.size() != m.cfg_.latent_dim || pv.size() != m.cfg_.latent_dim) {
            throw SchemaError("model: prior vectors do not match latent_dim");
        }
        m.set_prior(Tensor::vec1(pm), Tensor::vec1(pv));
    }
    return m;
}

LinearSystem linear_system_of(const GenerativeModel& model) {
    if (model.config().variant != "LinearGSSM") {
        throw ContractViolation("linear_system_of: exact inference requires the LinearGSSM "
                                "variant, got '" + model.config().variant + "'");
    }
    const ParamStore& p = model.params();
    LinearSystem sys;
    sys.A = Eigen::MatrixXd::Constant(1, 1, p.at("trans.a").value());
    sys.c = Eigen::VectorXd::Constant(1, p.at("trans.c").value());
    sys.Q = Eigen::MatrixXd::Constant(1, 1, p.at("trans.var").value());
    sys.H = Eigen::MatrixXd::Constant(1, 1, p.at("emis.h").value());
    sys.R = Eigen::MatrixXd::Constant(1, 1, p.at("emis.var").value());
    sys.mu0 = Eigen::VectorXd::Constant(1, model.prior_mean()[0]);
    sys.Sigma0 = Eigen::MatrixXd::Constant(1, 1, model.prior_var()[0]);
    return sys;
}

}  // namespace dmm
