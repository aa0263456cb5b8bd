#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dmm/data.hpp"
#include "dmm/error.hpp"
#include "dmm/eval.hpp"
#include "dmm/exact.hpp"
#include "dmm/gssm.hpp"
#include "dmm/infnet.hpp"
#include "dmm/rng.hpp"
#include "dmm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// --threads defaults to DMM_THREADS when that is set to a positive integer.
std::size_t default_threads() {
    const char* env = std::getenv("DMM_THREADS");
    if (env == nullptr) return 1;
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) return 1;
    return static_cast<std::size_t>(v);
}

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw dmm::SchemaError("cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw dmm::SchemaError(path + ": " + e.what());
    }
    return j;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw dmm::SchemaError("cannot write " + path);
    f << content;
    if (!f) throw dmm::SchemaError("failed while writing " + path);
}

/// Everything one training run needs, read from a single JSON file:
/// generative model config, inference-network choice, training
/// hyperparameters, dataset paths, and the output directory.
struct RunConfig {
    dmm::ModelConfig model_cfg;
    dmm::InfConfig net_proto;  // dims are filled from the model config
    dmm::TrainConfig train_cfg;
    std::string train_data;
    std::string valid_data;
    std::string out_dir;
};

/// Model section with defaults: unset fields keep their ModelConfig defaults,
/// unknown keys are rejected against the full field set.
dmm::ModelConfig model_config_from_partial(const json& j) {
    if (!j.is_object()) throw dmm::SchemaError("run config: 'model' must be an object");
    json full = dmm::ModelConfig{}.to_json();
    for (const auto& item : j.items()) {
        if (!full.contains(item.key())) {
            throw dmm::SchemaError("run config: unknown model key '" + item.key() + "'");
        }
        full[item.key()] = item.value();
    }
    return dmm::ModelConfig::from_json(full);
}

RunConfig run_config_from_json(const json& j) {
    if (!j.is_object()) throw dmm::SchemaError("run config: expected a JSON object");
    static const std::set<std::string> known = {"model",      "net",     "train", "train_data",
                                               "valid_data", "out_dir", "seed"};
    for (const auto& item : j.items()) {
        if (known.count(item.key()) == 0) {
            throw dmm::SchemaError("run config: unknown key '" + item.key() + "'");
        }
    }
    for (const char* key : {"model", "net", "train", "train_data", "valid_data", "out_dir"}) {
        if (!j.contains(key)) {
            throw dmm::SchemaError("run config: missing key '" + std::string(key) + "'");
        }
    }
    RunConfig rc;
    rc.model_cfg = model_config_from_partial(j.at("model"));
    const json& net = j.at("net");
    if (!net.is_object()) throw dmm::SchemaError("run config: 'net' must be an object");
    static const std::set<std::string> net_known = {"variant", "rnn_dim", "embed_dim"};
    for (const auto& item : net.items()) {
        if (net_known.count(item.key()) == 0) {
            throw dmm::SchemaError("run config: unknown net key '" + item.key() + "'");
        }
    }
    try {
        rc.net_proto.variant = net.at("variant").get<std::string>();
        if (net.contains("rnn_dim")) rc.net_proto.rnn_dim = net.at("rnn_dim").get<std::size_t>();
        if (net.contains("embed_dim")) {
            rc.net_proto.embed_dim = net.at("embed_dim").get<std::size_t>();
        }
    } catch (const json::exception& e) {
        throw dmm::SchemaError(std::string("run config: net: ") + e.what());
    }
    static const std::set<std::string> variants = {"MF-L", "MF-LR", "ST-L", "DKS", "ST-LR"};
    if (variants.count(rc.net_proto.variant) == 0) {
        throw dmm::SchemaError("run config: net variant '" + rc.net_proto.variant +
                               "' is not one of MF-L, MF-LR, ST-L, DKS, ST-LR");
    }
    rc.train_cfg = dmm::TrainConfig::from_json(j.at("train"));
    try {
        rc.train_data = j.at("train_data").get<std::string>();
        rc.valid_data = j.at("valid_data").get<std::string>();
        rc.out_dir = j.at("out_dir").get<std::string>();
        if (j.contains("seed")) rc.train_cfg.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw dmm::SchemaError(std::string("run config: ") + e.what());
    }
    if (!fs::exists(rc.train_data)) {
        throw dmm::SchemaError("run config: train_data path does not exist: " + rc.train_data);
    }
    if (!fs::exists(rc.valid_data)) {
        throw dmm::SchemaError("run config: valid_data path does not exist: " + rc.valid_data);
    }
    return rc;
}

int cmd_gen_data(const std::string& system, std::size_t n, std::size_t t, std::uint64_t seed,
                 const std::string& out, double alpha, double beta, double rate,
                 std::size_t obs_dim, std::size_t action_dim, double action_p) {
    dmm::SequenceBatch batch;
    if (system == "linear-drift") {
        batch = dmm::gen_linear_drift(n, t, seed);
    } else if (system == "nonlinear2d") {
        batch = dmm::gen_nonlinear2d(n, t, alpha, beta, seed);
    } else if (system == "toy-binary") {
        batch = dmm::gen_toy_binary(n, t, obs_dim, seed);
    } else {  // actions: toy binary observations plus independent action bits
        batch = dmm::gen_toy_binary(n, t, obs_dim, seed);
        dmm::ActionPolicy policy;
        policy.kind = "random-bernoulli";
        policy.p = action_p;
        dmm::gen_actions(batch, action_dim, seed, policy);
    }
    if (rate > 0.0) batch = dmm::apply_missingness(batch, rate, seed);
    dmm::save_dataset(batch, out);
    std::cout << "wrote " << out << ": N=" << batch.size() << " T=" << t
              << " obs_dim=" << batch.obs_dim << " action_dim=" << batch.action_dim
              << " missing-rate=" << rate << "\n";
    return 0;
}

int cmd_train(const std::string& cfg_path, bool resume) {
    RunConfig rc = run_config_from_json(load_json_file(cfg_path));
    dmm::SequenceBatch train_set = dmm::load_dataset(rc.train_data);
    dmm::SequenceBatch valid_set = dmm::load_dataset(rc.valid_data);
    fs::create_directories(rc.out_dir);
    const std::string ckpt_path = rc.out_dir + "/checkpoint.json";
    const std::string csv_path = rc.out_dir + "/train_log.csv";

    dmm::Checkpoint run = [&]() -> dmm::Checkpoint {
        if (resume) {
            if (!fs::exists(ckpt_path)) {
                throw dmm::SchemaError("--resume: no checkpoint at " + ckpt_path);
            }
            return dmm::checkpoint_load(ckpt_path);
        }
        dmm::Rng model_rng = dmm::spawn_stream(rc.train_cfg.seed, "model-init");
        dmm::GenerativeModel model = dmm::GenerativeModel::make(rc.model_cfg, model_rng);
        dmm::InfConfig net_cfg = rc.net_proto;
        net_cfg.latent_dim = model.config().latent_dim;
        net_cfg.obs_dim = model.config().obs_dim;
        net_cfg.action_dim = model.config().action_dim;
        dmm::Rng net_rng = dmm::spawn_stream(rc.train_cfg.seed, "net-init");
        return {std::move(model), dmm::InferenceNetwork::make(net_cfg, net_rng),
                dmm::TrainerState{}};
    }();

    dmm::TrainLog log =
        dmm::train(run.model, run.net, train_set, valid_set, rc.train_cfg, &run.state);
    dmm::checkpoint_save(run.model, run.net, run.state, ckpt_path);
    if (resume && fs::exists(csv_path)) {
        // continue the existing log: same rows the uninterrupted run would append
        std::string rows = log.to_csv();
        rows.erase(0, rows.find('\n') + 1);
        std::ofstream f(csv_path, std::ios::app);
        if (!f) throw dmm::SchemaError("cannot append to " + csv_path);
        f << rows;
    } else {
        log.save_csv(csv_path);
    }

    std::cout << "updates this run: " << log.updates.size() << " (total " << run.state.update
              << ")\n";
    if (log.aborted_nan) {
        std::cerr << "training aborted: non-finite objective or gradient at update "
                  << log.nan_update << "; parameters from before that update were saved\n";
        return 3;
    }
    if (log.finished) {
        std::cout << "finished: best validation bound " << run.state.best_valid << " at epoch "
                  << run.state.best_epoch << "\n";
    } else {
        std::cout << "paused at update " << run.state.update << "; rerun with --resume\n";
    }
    std::cout << "checkpoint: " << ckpt_path << "\nlog: " << csv_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, std::size_t samples,
             std::uint64_t seed, std::size_t threads, const std::string& json_out) {
    dmm::Checkpoint c = dmm::checkpoint_load(ckpt_path);
    dmm::SequenceBatch data = dmm::load_dataset(data_path);
    dmm::NllReport r = dmm::nll_report(c.model, c.net, data, samples, seed, threads);
    std::cout << r.formatted() << "\n" << r.to_json().dump() << "\n";
    if (!json_out.empty()) write_text_file(json_out, r.to_json().dump(2) + "\n");
    return 0;
}

int cmd_compare_exact(const std::string& ckpt_path, const std::string& data_path,
                      std::uint64_t seed, std::size_t threads, const std::string& json_out) {
    dmm::Checkpoint c = dmm::checkpoint_load(ckpt_path);
    if (c.model.config().variant != "LinearGSSM") {
        throw dmm::ContractViolation(
            "compare-exact: exact inference is only available for the linear Gaussian model; "
            "this checkpoint holds variant '" +
            c.model.config().variant + "'");
    }
    dmm::SequenceBatch data = dmm::load_dataset(data_path);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const dmm::Sequence& s = data.seqs[i];
        if (!s.has_z_star()) {
            throw dmm::ContractViolation("compare-exact: sequence " + std::to_string(i) +
                                         " has no ground-truth latents");
        }
        if (s.has_mask()) {
            for (std::size_t j = 0; j < s.mask.numel(); ++j) {
                if (s.mask[j] == 0.0) {
                    throw dmm::ContractViolation(
                        "compare-exact: exact inference needs fully observed sequences, but "
                        "sequence " +
                        std::to_string(i) + " has missing entries");
                }
            }
        }
    }

    dmm::LinearSystem sys = dmm::linear_system_of(c.model);
    std::vector<dmm::GaussianSeq> net_marg = dmm::posterior_marginals(c.net, data);
    std::vector<dmm::GaussianSeq> exact_marg;
    exact_marg.reserve(data.size());
    double exact_sum = 0.0;
    for (const dmm::Sequence& s : data.seqs) {
        exact_marg.push_back(dmm::rts_smooth(sys, s.x).marginals());
        exact_sum += dmm::kalman_filter(sys, s.x).loglik;
    }
    double rmse_net = dmm::rmse_posterior(net_marg, data);
    double rmse_exact = dmm::rmse_posterior(exact_marg, data);
    double bound = dmm::validation_bound(c.model, c.net, data, 1, seed, threads);
    double exact_mean = exact_sum / static_cast<double>(data.size());
    double gap = exact_mean - bound;

    json j = {{"rmse_net", rmse_net},
              {"rmse_exact", rmse_exact},
              {"bound", bound},
              {"exact_loglik", exact_mean},
              {"gap", gap}};
    std::cout << "posterior-mean RMSE, inference net:  " << rmse_net << "\n"
              << "posterior-mean RMSE, exact smoother: " << rmse_exact << "\n"
              << "mean variational bound:              " << bound << "\n"
              << "mean exact log-likelihood:           " << exact_mean << "\n"
              << "gap (exact - bound):                 " << gap << "\n"
              << j.dump() << "\n";
    if (!json_out.empty()) write_text_file(json_out, j.dump(2) + "\n");
    return 0;
}

int cmd_sample(const std::string& ckpt_path, std::size_t n, std::size_t t, std::uint64_t seed,
               double action_p, const std::string& out) {
    dmm::Checkpoint c = dmm::checkpoint_load(ckpt_path);
    dmm::SequenceBatch batch = c.model.is_action_conditioned()
                                   ? dmm::sample_dataset_actions(c.model, n, t, seed, action_p)
                                   : dmm::sample_dataset(c.model, n, t, seed);
    dmm::save_dataset(batch, out);
    std::cout << "wrote " << out << ": N=" << batch.size() << " T=" << t
              << " obs_dim=" << batch.obs_dim << " action_dim=" << batch.action_dim << "\n";
    return 0;
}

int cmd_counterfactual(const std::string& ckpt_path, const std::string& data_path, std::size_t k,
                       std::size_t horizon, std::size_t dim, double cut, std::size_t rollouts,
                       std::uint64_t seed, std::size_t threads, const std::string& csv_out,
                       const std::string& json_out) {
    dmm::Checkpoint c = dmm::checkpoint_load(ckpt_path);
    dmm::SequenceBatch cohort = dmm::load_dataset(data_path);
    dmm::ThresholdSpec th;
    th.dim = dim;
    th.cut = cut;
    dmm::CounterfactualReport rep =
        dmm::counterfactual_cohort(c.model, c.net, cohort, k, horizon, rollouts, th, seed,
                                   threads);
    std::cout << rep.to_csv() << rep.to_json().dump() << "\n";
    if (!csv_out.empty()) write_text_file(csv_out, rep.to_csv());
    if (!json_out.empty()) write_text_file(json_out, rep.to_json().dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deep Markov model workbench"};
    app.require_subcommand(1);
    int exit_code = 0;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Sample a synthetic dataset and write it as JSON");
    std::string gd_system, gd_out;
    std::size_t gd_n = 0, gd_t = 0, gd_obs = 4, gd_actions = 1;
    std::uint64_t gd_seed = 0;
    double gd_alpha = 0.5, gd_beta = -0.1, gd_rate = 0.0, gd_action_p = 0.5;
    gen->add_option("--system", gd_system, "linear-drift | nonlinear2d | toy-binary | actions")
        ->required()
        ->check(CLI::IsMember({"linear-drift", "nonlinear2d", "toy-binary", "actions"}));
    gen->add_option("--n", gd_n, "number of sequences")->required();
    gen->add_option("--t", gd_t, "sequence length")->required();
    gen->add_option("--seed", gd_seed, "master seed");
    gen->add_option("--out", gd_out, "output dataset path")->required();
    gen->add_option("--alpha", gd_alpha, "nonlinear2d: tanh coupling");
    gen->add_option("--beta", gd_beta, "nonlinear2d: sine coupling");
    gen->add_option("--rate", gd_rate, "missingness rate")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--obs-dim", gd_obs, "toy-binary/actions: observation dims");
    gen->add_option("--action-dim", gd_actions, "actions: action dims");
    gen->add_option("--action-p", gd_action_p, "actions: Bernoulli rate")
        ->check(CLI::Range(0.0, 1.0));
    gen->callback([&] {
        exit_code = cmd_gen_data(gd_system, gd_n, gd_t, gd_seed, gd_out, gd_alpha, gd_beta,
                                 gd_rate, gd_obs, gd_actions, gd_action_p);
    });

    // train
    auto* tr = app.add_subcommand("train", "Train a model and inference network from a config");
    std::string tr_cfg;
    bool tr_resume = false;
    tr->add_option("--config", tr_cfg, "run config JSON path")->required();
    tr->add_flag("--resume", tr_resume, "continue from the checkpoint in out_dir");
    tr->callback([&] { exit_code = cmd_train(tr_cfg, tr_resume); });

    // eval
    auto* ev = app.add_subcommand("eval", "Held-out likelihood report for a checkpoint");
    std::string ev_ckpt, ev_data, ev_json;
    std::size_t ev_samples = 0, ev_threads = default_threads();
    std::uint64_t ev_seed = 0;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint JSON path")->required();
    ev->add_option("--data", ev_data, "dataset path")->required();
    ev->add_option("--samples", ev_samples, "importance samples per sequence")->required();
    ev->add_option("--seed", ev_seed, "master seed");
    ev->add_option("--threads", ev_threads, "worker threads");
    ev->add_option("--json", ev_json, "also write the report JSON here");
    ev->callback(
        [&] { exit_code = cmd_eval(ev_ckpt, ev_data, ev_samples, ev_seed, ev_threads, ev_json); });

    // compare-exact
    auto* cx = app.add_subcommand(
        "compare-exact", "Compare an inference network against exact linear-Gaussian inference");
    std::string cx_ckpt, cx_data, cx_json;
    std::size_t cx_threads = default_threads();
    std::uint64_t cx_seed = 0;
    cx->add_option("--checkpoint", cx_ckpt, "checkpoint JSON path")->required();
    cx->add_option("--data", cx_data, "dataset path (needs ground-truth latents)")->required();
    cx->add_option("--seed", cx_seed, "master seed");
    cx->add_option("--threads", cx_threads, "worker threads");
    cx->add_option("--json", cx_json, "also write the comparison JSON here");
    cx->callback(
        [&] { exit_code = cmd_compare_exact(cx_ckpt, cx_data, cx_seed, cx_threads, cx_json); });

    // sample
    auto* sm = app.add_subcommand("sample", "Ancestral-sample sequences from a checkpoint");
    std::string sm_ckpt, sm_out;
    std::size_t sm_n = 0, sm_t = 0;
    std::uint64_t sm_seed = 0;
    double sm_action_p = 0.5;
    sm->add_option("--checkpoint", sm_ckpt, "checkpoint JSON path")->required();
    sm->add_option("--n", sm_n, "number of sequences")->required();
    sm->add_option("--t", sm_t, "sequence length")->required();
    sm->add_option("--seed", sm_seed, "master seed");
    sm->add_option("--action-p", sm_action_p, "action-conditioned models: Bernoulli rate")
        ->check(CLI::Range(0.0, 1.0));
    sm->add_option("--out", sm_out, "output dataset path")->required();
    sm->callback(
        [&] { exit_code = cmd_sample(sm_ckpt, sm_n, sm_t, sm_seed, sm_action_p, sm_out); });

    // counterfactual
    auto* cf = app.add_subcommand("counterfactual",
                                  "Paired factual/no-action rollouts from inferred states");
    std::string cf_ckpt, cf_data, cf_csv, cf_json;
    std::size_t cf_k = 0, cf_horizon = 0, cf_dim = 0, cf_rollouts = 100;
    std::size_t cf_threads = default_threads();
    double cf_cut = 0.5;
    std::uint64_t cf_seed = 0;
    cf->add_option("--checkpoint", cf_ckpt, "checkpoint JSON path")->required();
    cf->add_option("--data", cf_data, "cohort dataset path")->required();
    cf->add_option("--k", cf_k, "intervention time (prefix length)")->required();
    cf->add_option("--horizon", cf_horizon, "steps to roll out")->required();
    cf->add_option("--dim", cf_dim, "indicator observation dimension");
    cf->add_option("--cut", cf_cut, "threshold on the reconstructed indicator");
    cf->add_option("--rollouts", cf_rollouts, "rollouts per sequence");
    cf->add_option("--seed", cf_seed, "master seed");
    cf->add_option("--threads", cf_threads, "worker threads");
    cf->add_option("--out", cf_csv, "also write the step series CSV here");
    cf->add_option("--json", cf_json, "also write the report JSON here");
    cf->callback([&] {
        exit_code = cmd_counterfactual(cf_ckpt, cf_data, cf_k, cf_horizon, cf_dim, cf_cut,
                                       cf_rollouts, cf_seed, cf_threads, cf_csv, cf_json);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const dmm::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const dmm::ContractViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dmm::SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return exit_code;
}
