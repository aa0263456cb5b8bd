// Python bindings for the core workbench operations: dataset generation and
// I/O, model and inference-network construction, training with checkpoints,
// likelihood reports, exact-inference comparison, and counterfactual rollouts.
// Heavy calls release the GIL; configs cross the boundary as JSON text and the
// python package turns them back into dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include <string>
#include <vector>

#include "dmm/data.hpp"
#include "dmm/error.hpp"
#include "dmm/eval.hpp"
#include "dmm/exact.hpp"
#include "dmm/gssm.hpp"
#include "dmm/infnet.hpp"
#include "dmm/rng.hpp"
#include "dmm/trainer.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace dmm;

namespace {

/// Overlay a partial config onto the given defaults, rejecting unknown keys.
json overlay_config(const json& defaults, const std::string& partial_text,
                    const std::string& who) {
    json merged = defaults;
    json partial = json::parse(partial_text);
    if (!partial.is_object()) {
        throw ContractViolation(who + ": config must be a JSON object");
    }
    for (const auto& [key, value] : partial.items()) {
        if (!merged.contains(key)) {
            throw ContractViolation(who + ": unknown config key '" + key + "'");
        }
        merged[key] = value;
    }
    return merged;
}

std::vector<std::vector<double>> tensor_rows(const Tensor& t) {
    std::vector<std::vector<double>> out(t.dim(0), std::vector<double>(t.dim(1)));
    for (std::size_t r = 0; r < t.dim(0); ++r) {
        for (std::size_t c = 0; c < t.dim(1); ++c) out[r][c] = t.at(r, c);
    }
    return out;
}

const Sequence& seq_at(const SequenceBatch& b, std::size_t i) {
    if (i >= b.size()) {
        throw ContractViolation("dataset: sequence index " + std::to_string(i) +
                                " out of range for " + std::to_string(b.size()) + " sequences");
    }
    return b.seqs[i];
}

GenerativeModel model_make(const std::string& config_text, std::uint64_t seed) {
    json merged = overlay_config(ModelConfig{}.to_json(), config_text, "model config");
    ModelConfig cfg = ModelConfig::from_json(merged);
    Rng rng = spawn_stream(seed, "model-init");
    return GenerativeModel::make(cfg, rng);
}

InferenceNetwork net_make(const std::string& config_text, std::uint64_t seed) {
    json merged = overlay_config(InfConfig{}.to_json(), config_text, "net config");
    InfConfig cfg = InfConfig::from_json(merged);
    Rng rng = spawn_stream(seed, "net-init");
    return InferenceNetwork::make(cfg, rng);
}

std::string train_py(GenerativeModel& model, InferenceNetwork& net,
                     const SequenceBatch& train_set, const SequenceBatch& valid_set,
                     const std::string& config_text, const std::string& checkpoint_path) {
    TrainConfig cfg = TrainConfig::from_json(json::parse(config_text));
    TrainerState state;
    TrainLog log = train(model, net, train_set, valid_set, cfg, &state);
    if (!checkpoint_path.empty()) {
        checkpoint_save(model, net, state, checkpoint_path);
    }
    json summary = {{"updates", state.update},
                    {"epochs", state.epoch},
                    {"finished", log.finished},
                    {"aborted", log.aborted_nan},
                    {"best_valid", log.best_valid},
                    {"best_epoch", log.best_epoch},
                    {"wall_seconds", log.wall_seconds}};
    return summary.dump();
}

std::string nll_report_py(const GenerativeModel& model, const InferenceNetwork& net,
                          const SequenceBatch& test_set, std::size_t samples,
                          std::uint64_t seed, std::size_t threads) {
    NllReport rep = nll_report(model, net, test_set, samples, seed, threads);
    json j = rep.to_json();
    j["formatted"] = rep.formatted();
    return j.dump();
}

std::string compare_exact_py(const GenerativeModel& model, const InferenceNetwork& net,
                             const SequenceBatch& data, std::uint64_t seed,
                             std::size_t threads) {
    if (model.config().variant != "LinearGSSM") {
        throw ContractViolation(
            "compare_exact: exact inference is only available for the linear Gaussian model; "
            "this model is variant '" +
            model.config().variant + "'");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Sequence& s = data.seqs[i];
        if (!s.has_z_star()) {
            throw ContractViolation("compare_exact: sequence " + std::to_string(i) +
                                    " has no ground-truth latents");
        }
        if (s.has_mask()) {
            for (std::size_t j = 0; j < s.mask.numel(); ++j) {
                if (s.mask[j] == 0.0) {
                    throw ContractViolation(
                        "compare_exact: exact inference needs fully observed sequences, but "
                        "sequence " +
                        std::to_string(i) + " has missing entries");
                }
            }
        }
    }
    LinearSystem sys = linear_system_of(model);
    std::vector<GaussianSeq> net_marg = posterior_marginals(net, data);
    std::vector<GaussianSeq> exact_marg;
    exact_marg.reserve(data.size());
    double exact_sum = 0.0;
    for (const Sequence& s : data.seqs) {
        exact_marg.push_back(rts_smooth(sys, s.x).marginals());
        exact_sum += kalman_filter(sys, s.x).loglik;
    }
    double bound = validation_bound(model, net, data, 1, seed, threads);
    double exact_mean = exact_sum / static_cast<double>(data.size());
    json j = {{"rmse_net", rmse_posterior(net_marg, data)},
              {"rmse_exact", rmse_posterior(exact_marg, data)},
              {"bound", bound},
              {"exact_loglik", exact_mean},
              {"gap", exact_mean - bound}};
    return j.dump();
}

std::string counterfactual_py(const GenerativeModel& model, const InferenceNetwork& net,
                              const SequenceBatch& cohort, std::size_t k, std::size_t horizon,
                              std::size_t n_rollouts, std::size_t dim, double cut,
                              std::uint64_t seed, std::size_t threads) {
    ThresholdSpec th;
    th.dim = dim;
    th.cut = cut;
    CounterfactualReport rep =
        counterfactual_cohort(model, net, cohort, k, horizon, n_rollouts, th, seed, threads);
    return rep.to_json().dump();
}

SequenceBatch sample_py(const GenerativeModel& model, std::size_t n, std::size_t t,
                        std::uint64_t seed, double action_p) {
    if (model.is_action_conditioned()) {
        return sample_dataset_actions(model, n, t, seed, action_p);
    }
    return sample_dataset(model, n, t, seed);
}

SequenceBatch gen_actions_dataset(std::size_t n, std::size_t t, std::size_t obs_dim,
                                  std::size_t action_dim, std::uint64_t seed, double p) {
    SequenceBatch batch = gen_toy_binary(n, t, obs_dim, seed);
    ActionPolicy policy;
    policy.kind = "random-bernoulli";
    policy.p = p;
    gen_actions(batch, action_dim, seed, policy);
    return batch;
}

py::object optional_rows(const Tensor& t, bool present) {
    if (!present) return py::none();
    return py::cast(tensor_rows(t));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Core operations of the state-space model workbench";

    py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
    py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    py::class_<SequenceBatch>(m, "Dataset", "A batch of observation sequences")
        .def_static("load", &load_dataset, py::arg("path"))
        .def("save", [](const SequenceBatch& b, const std::string& path) {
            save_dataset(b, path);
        }, py::arg("path"))
        .def("__len__", [](const SequenceBatch& b) { return b.size(); })
        .def_readonly("obs_dim", &SequenceBatch::obs_dim)
        .def_readonly("action_dim", &SequenceBatch::action_dim)
        .def("length_of", [](const SequenceBatch& b, std::size_t i) {
            return seq_at(b, i).x.dim(0);
        }, py::arg("i"))
        .def("x", [](const SequenceBatch& b, std::size_t i) {
            return tensor_rows(seq_at(b, i).x);
        }, py::arg("i"))
        .def("mask", [](const SequenceBatch& b, std::size_t i) {
            const Sequence& s = seq_at(b, i);
            return optional_rows(s.mask, s.has_mask());
        }, py::arg("i"))
        .def("u", [](const SequenceBatch& b, std::size_t i) {
            const Sequence& s = seq_at(b, i);
            return optional_rows(s.u, s.has_u());
        }, py::arg("i"))
        .def("z_star", [](const SequenceBatch& b, std::size_t i) {
            const Sequence& s = seq_at(b, i);
            return optional_rows(s.z_star, s.has_z_star());
        }, py::arg("i"));

    py::class_<GenerativeModel>(m, "Model", "Generative state-space model")
        .def_static("make", &model_make, py::arg("config_json"), py::arg("seed"))
        .def_property_readonly("config_json", [](const GenerativeModel& g) {
            return g.config().to_json().dump();
        })
        .def_property_readonly("variant", [](const GenerativeModel& g) {
            return g.config().variant;
        })
        .def("sample", &sample_py, py::arg("n"), py::arg("t"), py::arg("seed"),
             py::arg("action_p") = 0.5, py::call_guard<py::gil_scoped_release>());

    py::class_<InferenceNetwork>(m, "Net", "Structured variational inference network")
        .def_static("make", &net_make, py::arg("config_json"), py::arg("seed"))
        .def_property_readonly("config_json", [](const InferenceNetwork& n) {
            return n.config().to_json().dump();
        })
        .def_property_readonly("variant", [](const InferenceNetwork& n) {
            return n.config().variant;
        });

    m.def("gen_linear_drift", &gen_linear_drift, py::arg("n"), py::arg("t"), py::arg("seed"));
    m.def("gen_nonlinear2d", &gen_nonlinear2d, py::arg("n"), py::arg("t"), py::arg("alpha"),
          py::arg("beta"), py::arg("seed"));
    m.def("gen_toy_binary", &gen_toy_binary, py::arg("n"), py::arg("t"), py::arg("obs_dim"),
          py::arg("seed"));
    m.def("gen_actions_dataset", &gen_actions_dataset, py::arg("n"), py::arg("t"),
          py::arg("obs_dim"), py::arg("action_dim"), py::arg("seed"), py::arg("p") = 0.5);
    m.def("apply_missingness",
          [](SequenceBatch batch, double rate, std::uint64_t seed,
             const std::vector<std::size_t>& columns) {
              return apply_missingness(std::move(batch), rate, seed, columns);
          },
          py::arg("dataset"), py::arg("rate"), py::arg("seed"),
          py::arg("columns") = std::vector<std::size_t>{});

    m.def("train", &train_py, py::arg("model"), py::arg("net"), py::arg("train_data"),
          py::arg("valid_data"), py::arg("config_json"), py::arg("checkpoint_path") = "",
          py::call_guard<py::gil_scoped_release>(),
          "Train in place; returns a JSON summary string");
    m.def("save_checkpoint", [](const GenerativeModel& model, const InferenceNetwork& net,
                                const std::string& path) {
        checkpoint_save(model, net, TrainerState{}, path);
    }, py::arg("model"), py::arg("net"), py::arg("path"));
    m.def("load_checkpoint", [](const std::string& path) {
        Checkpoint c = checkpoint_load(path);
        return py::make_tuple(c.model, c.net);
    }, py::arg("path"));

    m.def("nll_report", &nll_report_py, py::arg("model"), py::arg("net"), py::arg("test_data"),
          py::arg("samples"), py::arg("seed") = 0, py::arg("threads") = 1,
          py::call_guard<py::gil_scoped_release>(),
          "Held-out likelihood report as a JSON string");
    m.def("posterior_rmse", [](const InferenceNetwork& net, const SequenceBatch& data) {
        return rmse_posterior(posterior_marginals(net, data), data);
    }, py::arg("net"), py::arg("data"), py::call_guard<py::gil_scoped_release>());
    m.def("validation_bound", &validation_bound, py::arg("model"), py::arg("net"),
          py::arg("data"), py::arg("samples"), py::arg("key"), py::arg("threads") = 1,
          py::call_guard<py::gil_scoped_release>());
    m.def("compare_exact", &compare_exact_py, py::arg("model"), py::arg("net"), py::arg("data"),
          py::arg("seed") = 0, py::arg("threads") = 1,
          py::call_guard<py::gil_scoped_release>(),
          "Inference network vs exact linear-Gaussian inference, as a JSON string");
    m.def("counterfactual", &counterfactual_py, py::arg("model"), py::arg("net"),
          py::arg("cohort"), py::arg("k"), py::arg("horizon"), py::arg("n_rollouts"),
          py::arg("dim") = 0, py::arg("cut") = 0.5, py::arg("seed") = 0, py::arg("threads") = 1,
          py::call_guard<py::gil_scoped_release>(),
          "Paired factual/no-action rollouts, as a JSON string");
}
