#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmm/gssm.hpp"
#include "dmm/infnet.hpp"
#include "dmm/seq.hpp"

namespace dmm {

using nlohmann::json;

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t epochs = 10;
    double lr = 0.0008;
    long long anneal_horizon = 5000;
    std::size_t n_samples = 1;
    std::uint64_t seed = 0;
    /// Epochs without a validation improvement before stopping.
    std::size_t patience = 5;
    /// Freeze switches for the two parameter groups; a frozen group is left
    /// bitwise untouched, optimizer moments included.
    bool train_model = true;
    bool train_net = true;
    /// Per-sequence bound evaluations within a batch run on this many threads;
    /// results are reduced in sequence order, so the thread count never
    /// changes any number.
    std::size_t threads = 1;
    /// Pause once the global update counter reaches this (0 = no cap). Used
    /// for resumable training: call train() again with the same TrainerState
    /// to continue exactly where it stopped.
    long long max_updates = 0;

    json to_json() const;
    static TrainConfig from_json(const json& j);
};

struct TrainRecord {
    long long update = 0;
    std::size_t epoch = 0;
    double objective = 0.0;
    double reconstruction = 0.0;
    double kl = 0.0;
    double anneal = 0.0;
    /// Most recent epoch-final validation bound; NaN before the first one.
    double valid_bound = std::numeric_limits<double>::quiet_NaN();
};

struct TrainLog {
    std::vector<TrainRecord> updates;
    /// Mean training objective per completed epoch (partial for an epoch that
    /// was resumed mid-way: the record covers only this call's updates).
    std::vector<double> epoch_train_bound;
    /// Validation bound per completed epoch, anneal weight forced to 1.
    std::vector<double> epoch_valid_bound;
    double best_valid = std::numeric_limits<double>::quiet_NaN();
    std::size_t best_epoch = 0;
    /// True when training ran to its natural end (epoch budget or patience)
    /// and the best-validation parameters were restored; false when paused by
    /// max_updates or aborted.
    bool finished = false;
    bool aborted_nan = false;
    long long nan_update = -1;
    double wall_seconds = 0.0;

    /// "update,epoch,objective,recon,kl,anneal,valid_bound" rows.
    std::string to_csv() const;
    void save_csv(const std::string& path) const;
};

/// Everything needed to continue training exactly: counters, the in-progress
/// epoch order, the three rng stream states, and the best-so-far snapshots.
struct TrainerState {
    long long update = 0;
    std::size_t epoch = 0;
    std::size_t cursor = 0;            // sequences consumed in the running epoch
    std::vector<std::size_t> order;    // shuffled order of the running epoch
    std::string shuffle_state;
    std::string eps_state;
    std::string eval_state;
    double last_valid = std::numeric_limits<double>::quiet_NaN();
    bool has_best = false;
    double best_valid = std::numeric_limits<double>::quiet_NaN();
    std::size_t best_epoch = 0;
    std::size_t since_best = 0;
    bool done = false;
    json best_model;
    json best_net;

    json to_json() const;
    static TrainerState from_json(const json& j);
};

/// Stochastic-gradient ascent on the annealed bound: shuffled minibatches,
/// per-sequence objectives averaged (so the learning rate is insensitive to
/// batch size), Adam on the unfrozen groups, early stopping on the validation
/// bound with the best parameters restored at the end. Deterministic given
/// cfg.seed. A non-finite objective or gradient aborts the run with the
/// offending update index recorded and the parameters as of the previous
/// update retained.
TrainLog train(GenerativeModel& model, InferenceNetwork& net, const SequenceBatch& train_set,
               const SequenceBatch& valid_set, const TrainConfig& cfg,
               TrainerState* state = nullptr);

/// Mean per-sequence bound with anneal weight 1; eval_key seeds the
/// per-sequence sampling streams.
double validation_bound(const GenerativeModel& model, const InferenceNetwork& net,
                        const SequenceBatch& batch, std::size_t n_samples,
                        std::uint64_t eval_key, std::size_t threads = 1);

struct Checkpoint {
    GenerativeModel model;
    InferenceNetwork net;
    TrainerState state;
};

/// One JSON document holding model, inference network (each with parameters
/// and optimizer moments), and the trainer state above.
void checkpoint_save(const GenerativeModel& model, const InferenceNetwork& net,
                     const TrainerState& state, const std::string& path);
Checkpoint checkpoint_load(const std::string& path);

}  // namespace dmm
