#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmm/tape.hpp"
#include "dmm/tensor.hpp"

namespace dmm {

/// Adam hyperparameters. The learning-rate default matches the training setup
/// used across the workbench experiments.
struct AdamConfig {
    double lr = 0.0008;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

/// Named parameter tensors plus Adam moment state. Iteration order is the
/// lexicographic name order everywhere, which keeps updates and serialization
/// deterministic.
class ParamStore {
  public:
    /// Registers a new parameter; the name must be unused.
    Tensor& add(const std::string& name, Tensor value);

    bool has(const std::string& name) const { return params_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    std::vector<std::string> names() const;
    std::size_t size() const { return params_.size(); }

    /// One Adam update. Every gradient entry must name a stored parameter of
    /// the same shape; parameters without an entry are left untouched, moments
    /// included. The shared step counter advances once per call.
    void adam_step(const GradMap& grads, const AdamConfig& cfg);

    std::int64_t adam_steps() const { return step_; }

    /// Bind every parameter onto `tape` as leaf "<prefix><name>".
    std::map<std::string, Var> bind(Tape& tape, const std::string& prefix = "") const;

    /// {"format_version": 1, "params": {...}, "adam": {"step", "m", "v"}}
    nlohmann::json to_json() const;
    static ParamStore from_json(const nlohmann::json& j);

    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

  private:
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
    std::int64_t step_ = 0;
};

}  // namespace dmm
