#include "dmm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <utility>

#include "dmm/elbo.hpp"
#include "dmm/error.hpp"
#include "dmm/parallel.hpp"
#include "dmm/rng.hpp"

namespace dmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(draw_u64(rng) % i);
        std::swap(v[i - 1], v[j]);
    }
}

void check_compat(const GenerativeModel& model, const SequenceBatch& batch, const char* who) {
    if (batch.obs_dim != model.config().obs_dim) {
        throw ContractViolation(std::string(who) + ": dataset obs_dim " +
                                std::to_string(batch.obs_dim) + " does not match the model's " +
                                std::to_string(model.config().obs_dim));
    }
    if (batch.action_dim != model.config().action_dim) {
        throw ContractViolation(std::string(who) + ": dataset action_dim " +
                                std::to_string(batch.action_dim) +
                                " does not match the model's " +
                                std::to_string(model.config().action_dim));
    }
}

json nan_to_null(double v) { return std::isnan(v) ? json() : json(v); }

double null_to_nan(const json& j, const char* key) {
    if (!j.contains(key)) throw SchemaError(std::string("trainer state: missing '") + key + "'");
    const json& v = j.at(key);
    if (v.is_null()) return kNaN;
    if (!v.is_number()) {
        throw SchemaError(std::string("trainer state: '") + key + "' must be a number or null");
    }
    return v.get<double>();
}

template <typename T>
T take(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw SchemaError(std::string("train config: bad value for '") + key + "'");
    }
}

}  // namespace

json TrainConfig::to_json() const {
    return json{{"batch_size", batch_size},
                {"epochs", epochs},
                {"lr", lr},
                {"anneal_horizon", anneal_horizon},
                {"n_samples", n_samples},
                {"seed", seed},
                {"patience", patience},
                {"train_model", train_model},
                {"train_net", train_net},
                {"threads", threads},
                {"max_updates", max_updates}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("train config: expected a JSON object");
    static const std::set<std::string> known = {
        "batch_size", "epochs",  "lr",        "anneal_horizon", "n_samples", "seed",
        "patience",   "train_model", "train_net", "threads",        "max_updates"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) throw SchemaError("train config: unknown key '" + key + "'");
    }
    TrainConfig cfg;
    cfg.batch_size = take<std::size_t>(j, "batch_size", cfg.batch_size);
    cfg.epochs = take<std::size_t>(j, "epochs", cfg.epochs);
    cfg.lr = take<double>(j, "lr", cfg.lr);
    cfg.anneal_horizon = take<long long>(j, "anneal_horizon", cfg.anneal_horizon);
    cfg.n_samples = take<std::size_t>(j, "n_samples", cfg.n_samples);
    cfg.seed = take<std::uint64_t>(j, "seed", cfg.seed);
    cfg.patience = take<std::size_t>(j, "patience", cfg.patience);
    cfg.train_model = take<bool>(j, "train_model", cfg.train_model);
    cfg.train_net = take<bool>(j, "train_net", cfg.train_net);
    cfg.threads = take<std::size_t>(j, "threads", cfg.threads);
    cfg.max_updates = take<long long>(j, "max_updates", cfg.max_updates);
    return cfg;
}

std::string TrainLog::to_csv() const {
    std::string out = "update,epoch,objective,recon,kl,anneal,valid_bound\n";
    char buf[256];
    for (const TrainRecord& r : updates) {
        std::snprintf(buf, sizeof buf, "%lld,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.update,
                      r.epoch, r.objective, r.reconstruction, r.kl, r.anneal, r.valid_bound);
        out += buf;
    }
    return out;
}

void TrainLog::save_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw SchemaError("cannot write train log: " + path);
    f << to_csv();
    if (!f) throw SchemaError("failed while writing train log: " + path);
}

json TrainerState::to_json() const {
    return json{{"update", update},
                {"epoch", epoch},
                {"cursor", cursor},
                {"order", order},
                {"shuffle_state", shuffle_state},
                {"eps_state", eps_state},
                {"eval_state", eval_state},
                {"last_valid", nan_to_null(last_valid)},
                {"has_best", has_best},
                {"best_valid", nan_to_null(best_valid)},
                {"best_epoch", best_epoch},
                {"since_best", since_best},
                {"done", done},
                {"best_model", best_model},
                {"best_net", best_net}};
}

TrainerState TrainerState::from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("trainer state: expected a JSON object");
    TrainerState st;
    try {
        st.update = j.at("update").get<long long>();
        st.epoch = j.at("epoch").get<std::size_t>();
        st.cursor = j.at("cursor").get<std::size_t>();
        st.order = j.at("order").get<std::vector<std::size_t>>();
        st.shuffle_state = j.at("shuffle_state").get<std::string>();
        st.eps_state = j.at("eps_state").get<std::string>();
        st.eval_state = j.at("eval_state").get<std::string>();
        st.has_best = j.at("has_best").get<bool>();
        st.best_epoch = j.at("best_epoch").get<std::size_t>();
        st.since_best = j.at("since_best").get<std::size_t>();
        st.done = j.at("done").get<bool>();
        st.best_model = j.at("best_model");
        st.best_net = j.at("best_net");
    } catch (const json::exception& e) {
        throw SchemaError(std::string("trainer state: ") + e.what());
    }
    st.last_valid = null_to_nan(j, "last_valid");
    st.best_valid = null_to_nan(j, "best_valid");
    return st;
}

double validation_bound(const GenerativeModel& model, const InferenceNetwork& net,
                        const SequenceBatch& batch, std::size_t n_samples,
                        std::uint64_t eval_key, std::size_t threads) {
    if (batch.seqs.empty()) throw ContractViolation("validation_bound: batch is empty");
    std::vector<double> vals(batch.seqs.size());
    run_indexed(batch.seqs.size(), threads, [&](std::size_t i) {
        Tape tape;
        Rng rng = spawn_stream(eval_key, "sample", i);
        vals[i] = elbo_sequence(tape, model, net, batch.seqs[i], 1.0, n_samples, rng).objective;
    });
    double sum = 0.0;
    for (double v : vals) sum += v;
    return sum / static_cast<double>(vals.size());
}

TrainLog train(GenerativeModel& model, InferenceNetwork& net, const SequenceBatch& train_set,
               const SequenceBatch& valid_set, const TrainConfig& cfg, TrainerState* state) {
    auto t0 = std::chrono::steady_clock::now();
    if (cfg.batch_size == 0) throw ContractViolation("train: batch_size must be >= 1");
    if (cfg.epochs == 0) throw ContractViolation("train: epochs must be >= 1");
    if (cfg.patience == 0) throw ContractViolation("train: patience must be >= 1");
    if (cfg.n_samples == 0) throw ContractViolation("train: n_samples must be >= 1");
    if (cfg.threads == 0) throw ContractViolation("train: threads must be >= 1");
    if (!(cfg.lr >= 0.0)) throw ContractViolation("train: learning rate must be >= 0");
    if (cfg.anneal_horizon < 1) throw ContractViolation("train: anneal_horizon must be >= 1");
    if (cfg.max_updates < 0) throw ContractViolation("train: max_updates must be >= 0");
    if (train_set.seqs.empty()) throw ContractViolation("train: training set is empty");
    if (valid_set.seqs.empty()) throw ContractViolation("train: validation set is empty");
    check_compat(model, train_set, "train");
    check_compat(model, valid_set, "train (validation set)");

    TrainerState local;
    TrainerState& st = state != nullptr ? *state : local;
    if (st.done) throw ContractViolation("train: this trainer state already finished");

    Rng shuffle = st.shuffle_state.empty() ? spawn_stream(cfg.seed, "shuffle")
                                           : rng_state_from_string(st.shuffle_state);
    Rng eps = st.eps_state.empty() ? spawn_stream(cfg.seed, "eps")
                                   : rng_state_from_string(st.eps_state);
    Rng eval = st.eval_state.empty() ? spawn_stream(cfg.seed, "eval")
                                     : rng_state_from_string(st.eval_state);
    auto park_streams = [&] {
        st.shuffle_state = rng_state_to_string(shuffle);
        st.eps_state = rng_state_to_string(eps);
        st.eval_state = rng_state_to_string(eval);
    };
    auto wall = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    AdamConfig adam;
    adam.lr = cfg.lr;

    // leaves to differentiate, and the parameter each one feeds
    std::vector<std::string> leaves;
    std::vector<std::pair<std::string, std::string>> model_map, net_map;
    if (cfg.train_model) {
        for (const std::string& n : model.trainable()) {
            leaves.push_back(GenerativeModel::kPrefix + n);
            model_map.emplace_back(leaves.back(), n);
        }
    }
    if (cfg.train_net) {
        for (const std::string& n : net.trainable()) {
            leaves.push_back(InferenceNetwork::kPrefix + n);
            net_map.emplace_back(leaves.back(), n);
        }
    }

    TrainLog log;
    const std::size_t N = train_set.seqs.size();
    double epoch_obj_sum = 0.0;
    std::size_t epoch_updates = 0;

    while (st.epoch < cfg.epochs) {
        if (st.order.empty()) {
            st.order.resize(N);
            std::iota(st.order.begin(), st.order.end(), std::size_t{0});
            fisher_yates(st.order, shuffle);
            st.cursor = 0;
        }
        while (st.cursor < N) {
            if (cfg.max_updates > 0 && st.update >= cfg.max_updates) {
                park_streams();
                log.wall_seconds = wall();
                return log;  // paused; resumable via the same state
            }
            const std::size_t B = std::min<std::size_t>(cfg.batch_size, N - st.cursor);
            const double aw = anneal_weight(st.update, cfg.anneal_horizon);
            const std::uint64_t ukey = draw_u64(eps);

            struct PerSeq {
                double obj = 0.0, recon = 0.0, kl = 0.0;
                GradMap grads;
            };
            std::vector<PerSeq> parts(B);
            bool numerical_failure = false;
            try {
                run_indexed(B, cfg.threads, [&](std::size_t i) {
                    const Sequence& s = train_set.seqs[st.order[st.cursor + i]];
                    Tape tape;
                    Rng rng = spawn_stream(ukey, "sample", i);
                    ElboBreakdown eb =
                        elbo_sequence(tape, model, net, s, aw, cfg.n_samples, rng);
                    parts[i].obj = eb.objective;
                    parts[i].recon = eb.reconstruction;
                    parts[i].kl = eb.kl_t1 + eb.kl_rest;
                    if (!leaves.empty()) parts[i].grads = tape.gradient(eb.objective_var, leaves);
                });
            } catch (const NumericalError&) {
                numerical_failure = true;
            }

            double obj = 0.0, recon = 0.0, kl = 0.0;
            GradMap sum;
            if (!numerical_failure) {
                for (std::size_t i = 0; i < B; ++i) {
                    obj += parts[i].obj;
                    recon += parts[i].recon;
                    kl += parts[i].kl;
                    for (auto& [name, g] : parts[i].grads) {
                        auto it = sum.find(name);
                        if (it == sum.end()) {
                            sum.emplace(name, g);
                        } else {
                            Tensor& acc = it->second;
                            for (std::size_t k = 0; k < acc.numel(); ++k) acc[k] += g[k];
                        }
                    }
                }
                obj /= static_cast<double>(B);
                recon /= static_cast<double>(B);
                kl /= static_cast<double>(B);
            }
            // ascend the bound with a descending optimizer: negate the averaged gradient
            bool finite = !numerical_failure && std::isfinite(obj);
            for (auto& [name, g] : sum) {
                for (std::size_t k = 0; k < g.numel(); ++k) g[k] *= -1.0 / static_cast<double>(B);
                if (!g.all_finite()) finite = false;
            }
            if (!finite) {
                log.aborted_nan = true;
                log.nan_update = st.update;
                park_streams();
                log.wall_seconds = wall();
                return log;  // parameters are still those of the last good update
            }

            GradMap model_grads, net_grads;
            for (const auto& [leaf, pname] : model_map) {
                auto it = sum.find(leaf);
                if (it != sum.end()) model_grads.emplace(pname, std::move(it->second));
            }
            for (const auto& [leaf, pname] : net_map) {
                auto it = sum.find(leaf);
                if (it != sum.end()) net_grads.emplace(pname, std::move(it->second));
            }
            if (!model_grads.empty()) model.params().adam_step(model_grads, adam);
            if (!net_grads.empty()) net.params().adam_step(net_grads, adam);

            TrainRecord rec;
            rec.update = st.update;
            rec.epoch = st.epoch;
            rec.objective = obj;
            rec.reconstruction = recon;
            rec.kl = kl;
            rec.anneal = aw;
            rec.valid_bound = st.last_valid;
            log.updates.push_back(rec);
            epoch_obj_sum += obj;
            ++epoch_updates;
            st.cursor += B;
            ++st.update;
        }

        const std::uint64_t ekey = draw_u64(eval);
        double vb = validation_bound(model, net, valid_set, cfg.n_samples, ekey, cfg.threads);
        log.epoch_train_bound.push_back(epoch_updates > 0
                                            ? epoch_obj_sum / static_cast<double>(epoch_updates)
                                            : kNaN);
        log.epoch_valid_bound.push_back(vb);
        epoch_obj_sum = 0.0;
        epoch_updates = 0;
        st.last_valid = vb;
        if (!st.has_best || vb > st.best_valid) {
            st.has_best = true;
            st.best_valid = vb;
            st.best_epoch = st.epoch;
            st.since_best = 0;
            st.best_model = model.to_json();
            st.best_net = net.to_json();
        } else {
            ++st.since_best;
        }
        ++st.epoch;
        st.order.clear();
        st.cursor = 0;
        if (st.since_best >= cfg.patience) break;
    }

    if (st.has_best) {
        model = GenerativeModel::from_json(st.best_model);
        net = InferenceNetwork::from_json(st.best_net);
    }
    st.done = true;
    log.finished = true;
    log.best_valid = st.best_valid;
    log.best_epoch = st.best_epoch;
    park_streams();
    log.wall_seconds = wall();
    return log;
}

void checkpoint_save(const GenerativeModel& model, const InferenceNetwork& net,
                     const TrainerState& state, const std::string& path) {
    json j{{"format_version", 1},
           {"kind", "dmm-checkpoint"},
           {"model", model.to_json()},
           {"net", net.to_json()},
           {"trainer", state.to_json()}};
    std::ofstream f(path);
    if (!f) throw SchemaError("cannot write checkpoint: " + path);
    f << j.dump() << '\n';
    if (!f) throw SchemaError("failed while writing checkpoint: " + path);
}

Checkpoint checkpoint_load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw SchemaError("cannot open checkpoint: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw SchemaError(path + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("format_version")) {
        throw SchemaError("checkpoint: missing field 'format_version'");
    }
    if (!j["format_version"].is_number_integer() || j["format_version"].get<long long>() != 1) {
        throw VersionError("checkpoint: unsupported format_version " + j["format_version"].dump() +
                           " (this build reads version 1)");
    }
    for (const char* field : {"model", "net", "trainer"}) {
        if (!j.contains(field)) {
            throw SchemaError(std::string("checkpoint: missing field '") + field + "'");
        }
    }
    return Checkpoint{GenerativeModel::from_json(j["model"]),
                      InferenceNetwork::from_json(j["net"]),
                      TrainerState::from_json(j["trainer"])};
}

}  // namespace dmm
