#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dmm/gssm.hpp"
#include "dmm/seq.hpp"

namespace dmm {

using nlohmann::json;

/// How synthetic action bits are produced.
///   "random-bernoulli": every bit is an independent coin with rate p.
///   "threshold": bit 0 switches on when observation obs_index exceeds level
///   (a stand-in for prescriptions reacting to the record); remaining bits
///   stay independent coins.
struct ActionPolicy {
    std::string kind = "random-bernoulli";
    double p = 0.5;
    std::size_t obs_index = 0;
    double level = 0.0;
};

/// The fixed randomly-initialized binary-emission model behind gen_toy_binary,
/// exposed so its likelihood on that data stays computable by construction.
GenerativeModel toy_binary_model(std::size_t D, std::uint64_t seed);

/// N sequences of length T ancestrally sampled from the model; z_star kept.
/// Per-sequence noise streams derive from (seed, index), so any prefix of the
/// dataset is independent of N.
SequenceBatch sample_dataset(const GenerativeModel& model, std::size_t N, std::size_t T,
                             std::uint64_t seed);

/// Same, for an action-conditioned model: action bits are independent
/// Bernoulli(p) draws generated first, then the model rolls out under them.
SequenceBatch sample_dataset_actions(const GenerativeModel& model, std::size_t N, std::size_t T,
                                     std::uint64_t seed, double p);

/// 1-d drifting system: z_1 ~ N(0,1), z_t ~ N(z_{t-1}+0.05, 10),
/// x_t ~ N(0.5 z_t, 20).
SequenceBatch gen_linear_drift(std::size_t N, std::size_t T, std::uint64_t seed);

/// 2-d system with tanh/sine couplings: mean [0.2 z0 + tanh(alpha z1);
/// 0.2 z1 + sin(beta z0)], unit process noise, x ~ N(0.5 z, 0.1).
SequenceBatch gen_nonlinear2d(std::size_t N, std::size_t T, double alpha, double beta,
                              std::uint64_t seed);

/// Binary observations from toy_binary_model(D, seed).
SequenceBatch gen_toy_binary(std::size_t N, std::size_t T, std::size_t D, std::uint64_t seed);

/// Attaches u [T x action_dim] to every sequence per the policy. The batch
/// must already hold observations; the threshold policy reads them.
void gen_actions(SequenceBatch& batch, std::size_t action_dim, std::uint64_t seed,
                 const ActionPolicy& policy);

/// Head/tail split: the first n_first sequences and the rest. Both sides must
/// be nonempty.
std::pair<SequenceBatch, SequenceBatch> split_batch(const SequenceBatch& batch,
                                                    std::size_t n_first);

/// Zeroes mask entries i.i.d. at the given rate within the chosen columns
/// (all columns when the list is empty) and zeroes x under them, so nothing
/// downstream can read the hidden values. rate 0 returns the batch untouched.
SequenceBatch apply_missingness(SequenceBatch batch, double rate, std::uint64_t seed,
                                const std::vector<std::size_t>& columns = {});

/// Dataset file round-trip. JSON layout: {"format_version": 1, "obs_dim",
/// "action_dim", "sequences": [{"x": [[...]], "mask"?, "u"?, "z_star"?}]};
/// an omitted mask means fully observed. Schema problems name the offending
/// sequence index and field; an unknown format_version raises VersionError.
json dataset_to_json(const SequenceBatch& batch);
SequenceBatch dataset_from_json(const json& j);
void save_dataset(const SequenceBatch& batch, const std::string& path);
SequenceBatch load_dataset(const std::string& path);

}  // namespace dmm
