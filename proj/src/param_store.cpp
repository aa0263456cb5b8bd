#include "dmm/param_store.hpp"

#include <cmath>
#include <fstream>

#include "dmm/error.hpp"

namespace dmm {

using nlohmann::json;

json tensor_to_json(const Tensor& t) {
    json j;
    j["shape"] = t.shape();
    j["data"] = t.flat();
    return j;
}

Tensor tensor_from_json(const json& j) {
    if (!j.is_object() || !j.contains("shape") || !j.contains("data")) {
        throw SchemaError("tensor: expected object with 'shape' and 'data'");
    }
    std::vector<std::size_t> shape = j.at("shape").get<std::vector<std::size_t>>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    if (data.size() != shape_numel(shape)) {
        throw SchemaError("tensor: data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), std::move(data));
}

Tensor& ParamStore::add(const std::string& name, Tensor value) {
    auto [it, inserted] = params_.emplace(name, std::move(value));
    if (!inserted) throw ContractViolation("ParamStore::add: '" + name + "' already exists");
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractViolation("ParamStore: no parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractViolation("ParamStore: no parameter '" + name + "'");
    return it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.push_back(name);
    return out;
}

void ParamStore::adam_step(const GradMap& grads, const AdamConfig& cfg) {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (const auto& [name, g] : grads) {
        auto it = params_.find(name);
        if (it == params_.end()) {
            throw ContractViolation("adam_step: gradient for unknown parameter '" + name + "'");
        }
        Tensor& p = it->second;
        if (!p.same_shape(g)) {
            throw ContractViolation("adam_step: gradient shape " + g.shape_str() +
                                    " does not match parameter '" + name + "' shape " +
                                    p.shape_str());
        }
        if (!g.all_finite()) {
            throw NumericalError("adam_step: non-finite gradient for '" + name + "'");
        }
        Tensor& m = m_.try_emplace(name, Tensor(p.shape())).first->second;
        Tensor& v = v_.try_emplace(name, Tensor(p.shape())).first->second;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

std::map<std::string, Var> ParamStore::bind(Tape& tape, const std::string& prefix) const {
    std::map<std::string, Var> out;
    for (const auto& [name, t] : params_) {
        out.emplace(name, tape.leaf(prefix + name, t));
    }
    return out;
}

json ParamStore::to_json() const {
    json params = json::object();
    for (const auto& [name, t] : params_) params[name] = tensor_to_json(t);
    json m = json::object();
    for (const auto& [name, t] : m_) m[name] = tensor_to_json(t);
    json v = json::object();
    for (const auto& [name, t] : v_) v[name] = tensor_to_json(t);
    return json{{"format_version", 1},
                {"params", params},
                {"adam", json{{"step", step_}, {"m", m}, {"v", v}}}};
}

ParamStore ParamStore::from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("ParamStore: expected a JSON object");
    if (!j.contains("format_version")) throw SchemaError("ParamStore: missing format_version");
    if (j.at("format_version") != 1) {
        throw VersionError("ParamStore: unsupported format_version " +
                           j.at("format_version").dump());
    }
    if (!j.contains("params") || !j.at("params").is_object()) {
        throw SchemaError("ParamStore: missing 'params' object");
    }
    ParamStore store;
    for (const auto& [name, tj] : j.at("params").items()) {
        store.params_.emplace(name, tensor_from_json(tj));
    }
    if (j.contains("adam")) {
        const json& a = j.at("adam");
        if (!a.is_object() || !a.contains("step")) {
            throw SchemaError("ParamStore: malformed 'adam' section");
        }
        store.step_ = a.at("step").get<std::int64_t>();
        if (a.contains("m")) {
            for (const auto& [name, tj] : a.at("m").items())
                store.m_.emplace(name, tensor_from_json(tj));
        }
        if (a.contains("v")) {
            for (const auto& [name, tj] : a.at("v").items())
                store.v_.emplace(name, tensor_from_json(tj));
        }
    }
    return store;
}

void ParamStore::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw SchemaError("ParamStore::save: cannot open '" + path + "' for writing");
    out << to_json().dump(2) << "\n";
    if (!out) throw SchemaError("ParamStore::save: write failed for '" + path + "'");
}

ParamStore ParamStore::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("ParamStore::load: cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw SchemaError("ParamStore::load: '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

}  // namespace dmm
