#include "dmm/data.hpp"

#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dmm/error.hpp"
#include "dmm/rng.hpp"

namespace dmm {

namespace {

constexpr std::size_t kFreeCols = std::numeric_limits<std::size_t>::max();

json matrix_rows(const Tensor& t) {
    json rows = json::array();
    for (std::size_t r = 0; r < t.dim(0); ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < t.dim(1); ++c) row.push_back(t.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Tensor parse_matrix(const json& arr, const std::string& where, std::size_t want_cols) {
    if (!arr.is_array() || arr.empty()) {
        throw SchemaError(where + " must be a non-empty array of rows");
    }
    const std::size_t rows = arr.size();
    std::size_t cols = 0;
    std::vector<double> data;
    for (std::size_t r = 0; r < rows; ++r) {
        const json& row = arr[r];
        if (!row.is_array() || row.empty()) {
            throw SchemaError(where + " row " + std::to_string(r) +
                              " must be a non-empty array");
        }
        if (r == 0) {
            cols = row.size();
            if (want_cols != kFreeCols && cols != want_cols) {
                throw SchemaError(where + " has " + std::to_string(cols) +
                                  " columns, expected " + std::to_string(want_cols));
            }
            data.reserve(rows * cols);
        } else if (row.size() != cols) {
            throw SchemaError(where + " row " + std::to_string(r) + " has " +
                              std::to_string(row.size()) + " entries, expected " +
                              std::to_string(cols));
        }
        for (const json& v : row) {
            if (!v.is_number()) throw SchemaError(where + " contains a non-numeric entry");
            data.push_back(v.get<double>());
        }
    }
    return Tensor::matrix(rows, cols, std::move(data));
}

void check_rate(double rate, const char* who) {
    if (!(rate >= 0.0 && rate <= 1.0)) {
        throw ContractViolation(std::string(who) + ": rate must lie in [0, 1], got " +
                                std::to_string(rate));
    }
}

}  // namespace

GenerativeModel toy_binary_model(std::size_t D, std::uint64_t seed) {
    if (D < 2) {
        throw ContractViolation("toy_binary_model: obs_dim must be >= 2, got " +
                                std::to_string(D));
    }
    ModelConfig cfg;
    cfg.variant = "DMM";
    cfg.latent_dim = 3;
    cfg.obs_dim = D;
    // Small hidden layers: the point of this generator is a cheap known-truth
    // model, not capacity.
    cfg.trans_hidden = 16;
    cfg.emis_hidden = 16;
    Rng init = spawn_stream(seed, "model");
    GenerativeModel model = GenerativeModel::make(cfg, init);
    // Spread the final emission biases so every observed bit carries its own
    // base rate. A plain random init predicts near 0.5 everywhere, which
    // would leave "data from this model" statistically anonymous.
    Tensor& bias = model.params().at("emis.2.b");
    for (std::size_t d = 0; d < D; ++d) bias[d] = 1.5 * draw_normal(init);
    return model;
}

SequenceBatch sample_dataset(const GenerativeModel& model, std::size_t N, std::size_t T,
                             std::uint64_t seed) {
    if (N == 0) throw ContractViolation("sample_dataset: N must be >= 1");
    if (T == 0) throw ContractViolation("sample_dataset: T must be >= 1");
    if (model.is_action_conditioned()) {
        throw ContractViolation(
            "sample_dataset: model is action-conditioned; use sample_dataset_actions");
    }
    SequenceBatch batch;
    batch.obs_dim = model.config().obs_dim;
    batch.action_dim = 0;
    batch.seqs.reserve(N);
    for (std::size_t i = 0; i < N; ++i) {
        Rng rng = spawn_stream(seed, "seq", i);
        auto [z, x] = model.sample_sequence(T, nullptr, rng);
        Sequence s;
        s.x = std::move(x);
        s.z_star = std::move(z);
        batch.seqs.push_back(std::move(s));
    }
    return batch;
}

SequenceBatch sample_dataset_actions(const GenerativeModel& model, std::size_t N,
                                     std::size_t T, std::uint64_t seed, double p) {
    if (N == 0) throw ContractViolation("sample_dataset_actions: N must be >= 1");
    if (T == 0) throw ContractViolation("sample_dataset_actions: T must be >= 1");
    if (!model.is_action_conditioned()) {
        throw ContractViolation(
            "sample_dataset_actions: model is not action-conditioned; use sample_dataset");
    }
    check_rate(p, "sample_dataset_actions");
    const std::size_t A = model.config().action_dim;
    SequenceBatch batch;
    batch.obs_dim = model.config().obs_dim;
    batch.action_dim = A;
    batch.seqs.reserve(N);
    for (std::size_t i = 0; i < N; ++i) {
        Rng act = spawn_stream(seed, "act", i);
        Tensor u({T, A});
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < A; ++j) {
                u.at(t, j) = draw_uniform(act) < p ? 1.0 : 0.0;
            }
        }
        Rng rng = spawn_stream(seed, "seq", i);
        auto [z, x] = model.sample_sequence(T, &u, rng);
        Sequence s;
        s.x = std::move(x);
        s.u = std::move(u);
        s.z_star = std::move(z);
        batch.seqs.push_back(std::move(s));
    }
    return batch;
}

SequenceBatch gen_linear_drift(std::size_t N, std::size_t T, std::uint64_t seed) {
    return sample_dataset(GenerativeModel::linear_drift(), N, T, seed);
}

SequenceBatch gen_nonlinear2d(std::size_t N, std::size_t T, double alpha, double beta,
                              std::uint64_t seed) {
    return sample_dataset(GenerativeModel::nonlinear2d(alpha, beta), N, T, seed);
}

SequenceBatch gen_toy_binary(std::size_t N, std::size_t T, std::size_t D,
                             std::uint64_t seed) {
    return sample_dataset(toy_binary_model(D, seed), N, T, seed);
}

void gen_actions(SequenceBatch& batch, std::size_t action_dim, std::uint64_t seed,
                 const ActionPolicy& policy) {
    if (action_dim == 0) throw ContractViolation("gen_actions: action_dim must be >= 1");
    const bool threshold = policy.kind == "threshold";
    if (!threshold && policy.kind != "random-bernoulli") {
        throw ContractViolation("gen_actions: unknown policy kind '" + policy.kind + "'");
    }
    check_rate(policy.p, "gen_actions");
    if (threshold && policy.obs_index >= batch.obs_dim) {
        throw ContractViolation("gen_actions: threshold obs_index " +
                                std::to_string(policy.obs_index) +
                                " out of range for obs_dim " +
                                std::to_string(batch.obs_dim));
    }
    for (std::size_t i = 0; i < batch.seqs.size(); ++i) {
        Sequence& s = batch.seqs[i];
        const std::size_t T = s.T();
        Rng rng = spawn_stream(seed, "act", i);
        Tensor u({T, action_dim});
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < action_dim; ++j) {
                if (threshold && j == 0) {
                    u.at(t, j) = s.x.at(t, policy.obs_index) > policy.level ? 1.0 : 0.0;
                } else {
                    u.at(t, j) = draw_uniform(rng) < policy.p ? 1.0 : 0.0;
                }
            }
        }
        s.u = std::move(u);
    }
    batch.action_dim = action_dim;
}

std::pair<SequenceBatch, SequenceBatch> split_batch(const SequenceBatch& batch,
                                                    std::size_t n_first) {
    if (n_first == 0 || n_first >= batch.seqs.size()) {
        throw ContractViolation("split_batch: need 1 <= n_first < " +
                                std::to_string(batch.seqs.size()) + ", got " +
                                std::to_string(n_first));
    }
    SequenceBatch head, tail;
    head.obs_dim = tail.obs_dim = batch.obs_dim;
    head.action_dim = tail.action_dim = batch.action_dim;
    head.seqs.assign(batch.seqs.begin(), batch.seqs.begin() + n_first);
    tail.seqs.assign(batch.seqs.begin() + n_first, batch.seqs.end());
    return {std::move(head), std::move(tail)};
}

SequenceBatch apply_missingness(SequenceBatch batch, double rate, std::uint64_t seed,
                                const std::vector<std::size_t>& columns) {
    check_rate(rate, "apply_missingness");
    for (std::size_t c : columns) {
        if (c >= batch.obs_dim) {
            throw ContractViolation("apply_missingness: column " + std::to_string(c) +
                                    " out of range for obs_dim " +
                                    std::to_string(batch.obs_dim));
        }
    }
    if (rate == 0.0) return batch;
    std::vector<std::size_t> cols = columns;
    if (cols.empty()) {
        cols.resize(batch.obs_dim);
        for (std::size_t c = 0; c < batch.obs_dim; ++c) cols[c] = c;
    }
    for (std::size_t i = 0; i < batch.seqs.size(); ++i) {
        Sequence& s = batch.seqs[i];
        if (!s.has_mask()) s.mask = Tensor::full(s.x.shape(), 1.0);
        Rng rng = spawn_stream(seed, "miss", i);
        for (std::size_t t = 0; t < s.T(); ++t) {
            for (std::size_t c : cols) {
                if (draw_uniform(rng) < rate) {
                    s.mask.at(t, c) = 0.0;
                    // Zero the value too: a hidden entry must not be readable
                    // through any code path, masked arithmetic included.
                    s.x.at(t, c) = 0.0;
                }
            }
        }
    }
    return batch;
}

json dataset_to_json(const SequenceBatch& batch) {
    json j;
    j["format_version"] = 1;
    j["obs_dim"] = batch.obs_dim;
    j["action_dim"] = batch.action_dim;
    json seqs = json::array();
    for (const Sequence& s : batch.seqs) {
        json js;
        js["x"] = matrix_rows(s.x);
        if (s.has_mask()) js["mask"] = matrix_rows(s.mask);
        if (s.has_u()) js["u"] = matrix_rows(s.u);
        if (s.has_z_star()) js["z_star"] = matrix_rows(s.z_star);
        seqs.push_back(std::move(js));
    }
    j["sequences"] = std::move(seqs);
    return j;
}

SequenceBatch dataset_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("dataset: not a JSON object");
    if (!j.contains("format_version")) {
        throw SchemaError("dataset: missing field 'format_version'");
    }
    if (!j["format_version"].is_number_integer()) {
        throw SchemaError("dataset: 'format_version' must be an integer");
    }
    const long long version = j["format_version"].get<long long>();
    if (version != 1) {
        throw VersionError("dataset: unsupported format_version " +
                           std::to_string(version) + " (this build reads version 1)");
    }
    for (const char* field : {"obs_dim", "action_dim"}) {
        if (!j.contains(field)) {
            throw SchemaError(std::string("dataset: missing field '") + field + "'");
        }
        if (!j[field].is_number_integer() || j[field].get<long long>() < 0) {
            throw SchemaError(std::string("dataset: '") + field +
                              "' must be a non-negative integer");
        }
    }
    SequenceBatch batch;
    batch.obs_dim = j["obs_dim"].get<std::size_t>();
    batch.action_dim = j["action_dim"].get<std::size_t>();
    if (batch.obs_dim == 0) throw SchemaError("dataset: obs_dim must be >= 1");
    if (!j.contains("sequences") || !j["sequences"].is_array()) {
        throw SchemaError("dataset: missing array field 'sequences'");
    }
    const json& seqs = j["sequences"];
    batch.seqs.reserve(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        const std::string who = "sequence " + std::to_string(i);
        const json& js = seqs[i];
        if (!js.is_object()) throw SchemaError(who + ": not an object");
        if (!js.contains("x")) throw SchemaError(who + ": missing field 'x'");
        Sequence s;
        s.x = parse_matrix(js["x"], who + ": field 'x'", batch.obs_dim);
        const std::size_t T = s.x.dim(0);
        if (js.contains("mask")) {
            s.mask = parse_matrix(js["mask"], who + ": field 'mask'", batch.obs_dim);
            if (s.mask.dim(0) != T) {
                throw SchemaError(who + ": field 'mask' has " +
                                  std::to_string(s.mask.dim(0)) + " rows, expected " +
                                  std::to_string(T));
            }
            for (double m : s.mask.flat()) {
                if (m != 0.0 && m != 1.0) {
                    throw SchemaError(who + ": field 'mask' must hold only 0 or 1");
                }
            }
        }
        if (batch.action_dim > 0) {
            if (!js.contains("u")) {
                throw SchemaError(who + ": missing field 'u' (action_dim is " +
                                  std::to_string(batch.action_dim) + ")");
            }
            s.u = parse_matrix(js["u"], who + ": field 'u'", batch.action_dim);
            if (s.u.dim(0) != T) {
                throw SchemaError(who + ": field 'u' has " + std::to_string(s.u.dim(0)) +
                                  " rows, expected " + std::to_string(T));
            }
        } else if (js.contains("u")) {
            throw SchemaError(who + ": field 'u' present but action_dim is 0");
        }
        if (js.contains("z_star")) {
            s.z_star = parse_matrix(js["z_star"], who + ": field 'z_star'", kFreeCols);
            if (s.z_star.dim(0) != T) {
                throw SchemaError(who + ": field 'z_star' has " +
                                  std::to_string(s.z_star.dim(0)) + " rows, expected " +
                                  std::to_string(T));
            }
        }
        batch.seqs.push_back(std::move(s));
    }
    return batch;
}

void save_dataset(const SequenceBatch& batch, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write dataset file: " + path);
    out << dataset_to_json(batch).dump() << '\n';
    if (!out) throw SchemaError("failed while writing dataset file: " + path);
}

SequenceBatch load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open dataset file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path + ": " + e.what());
    }
    return dataset_from_json(j);
}

}  // namespace dmm
