#include "dmm/eval.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

#include "dmm/data.hpp"
#include "dmm/elbo.hpp"
#include "dmm/error.hpp"
#include "dmm/parallel.hpp"
#include "dmm/rng.hpp"

namespace dmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_dims(const SequenceBatch& batch, std::size_t obs_dim, std::size_t action_dim,
                const char* who) {
    if (batch.obs_dim != obs_dim) {
        throw ContractViolation(std::string(who) + ": dataset obs_dim " +
                                std::to_string(batch.obs_dim) + " but the model expects " +
                                std::to_string(obs_dim));
    }
    if (batch.action_dim != action_dim) {
        throw ContractViolation(std::string(who) + ": dataset action_dim " +
                                std::to_string(batch.action_dim) + " but the model expects " +
                                std::to_string(action_dim));
    }
}

Tensor slice_rows(const Tensor& m, std::size_t start, std::size_t count) {
    Tensor out({count, m.dim(1)});
    for (std::size_t r = 0; r < count; ++r) {
        for (std::size_t c = 0; c < m.dim(1); ++c) out.at(r, c) = m.at(start + r, c);
    }
    return out;
}

Tensor row_of(const Tensor& m, std::size_t r) {
    Tensor out({m.dim(1)});
    for (std::size_t c = 0; c < m.dim(1); ++c) out[c] = m.at(r, c);
    return out;
}

}  // namespace

std::vector<GaussianSeq> posterior_marginals(const InferenceNetwork& net,
                                             const SequenceBatch& batch) {
    if (batch.seqs.empty()) throw ContractViolation("posterior_marginals: batch is empty");
    check_dims(batch, net.config().obs_dim, net.config().action_dim, "posterior_marginals");
    std::vector<GaussianSeq> out;
    out.reserve(batch.seqs.size());
    for (const Sequence& s : batch.seqs) {
        Tape tape;
        Rng rng = spawn_stream(0, "posterior-mean");  // untouched: no sampling below
        InferResult res = net.infer(tape, s.x, s.has_mask() ? &s.mask : nullptr,
                                    s.has_u() ? &s.u : nullptr, rng, false);
        out.push_back(std::move(res.q));
    }
    return out;
}

double rmse_posterior(const std::vector<GaussianSeq>& marginals, const SequenceBatch& batch) {
    if (batch.seqs.empty()) throw ContractViolation("rmse_posterior: batch is empty");
    if (marginals.size() != batch.seqs.size()) {
        throw ContractViolation("rmse_posterior: " + std::to_string(marginals.size()) +
                                " marginal sequences for " + std::to_string(batch.seqs.size()) +
                                " data sequences");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.seqs.size(); ++i) {
        const Sequence& s = batch.seqs[i];
        const GaussianSeq& q = marginals[i];
        if (!s.has_z_star()) {
            throw ContractViolation("rmse_posterior: sequence " + std::to_string(i) +
                                    " has no ground-truth latents");
        }
        if (q.means.rank() != 2 || q.means.dim(0) != s.z_star.dim(0) ||
            q.means.dim(1) != s.z_star.dim(1)) {
            throw ContractViolation("rmse_posterior: sequence " + std::to_string(i) +
                                    " marginals are " + q.means.shape_str() +
                                    " but the ground truth is " + s.z_star.shape_str());
        }
        double per_seq = 0.0;
        for (std::size_t t = 0; t < q.T(); ++t) {
            for (std::size_t d = 0; d < q.dim(); ++d) {
                double diff = q.means.at(t, d) - s.z_star.at(t, d);
                per_seq += diff * diff;
            }
        }
        acc += per_seq / static_cast<double>(q.T());
    }
    return std::sqrt(acc / static_cast<double>(batch.seqs.size()));
}

std::string NllReport::formatted() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.4f (%.4f) {%.4f}", a, b, c);
    return buf;
}

nlohmann::json NllReport::to_json() const {
    return {{"a", a}, {"b", b}, {"c", c}, {"samples", samples}};
}

NllReport nll_report(const GenerativeModel& model, const InferenceNetwork& net,
                     const SequenceBatch& test_set, std::size_t S, std::uint64_t seed,
                     std::size_t threads) {
    if (S == 0) throw ContractViolation("nll_report: S must be >= 1");
    if (threads == 0) throw ContractViolation("nll_report: threads must be >= 1");
    if (test_set.seqs.empty()) throw ContractViolation("nll_report: test set is empty");
    check_dims(test_set, model.config().obs_dim, model.config().action_dim, "nll_report");

    const std::size_t N = test_set.seqs.size();
    std::vector<double> bound(N), is_ll(N);
    run_indexed(N, threads, [&](std::size_t i) {
        const Sequence& s = test_set.seqs[i];
        Tape tape;
        Rng bound_rng = spawn_stream(seed, "sample", i);
        bound[i] = elbo_sequence(tape, model, net, s, 1.0, 1, bound_rng).objective;
        Rng is_rng = spawn_stream(seed, "is", i);
        is_ll[i] = is_loglik(model, net, s, S, is_rng);
    });

    double sum_T = 0.0, sum_bound = 0.0, sum_is = 0.0, sum_rate = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        double Ti = static_cast<double>(test_set.seqs[i].T());
        sum_T += Ti;
        sum_bound += bound[i];
        sum_is += is_ll[i];
        sum_rate += bound[i] / Ti;
    }
    NllReport report;
    report.a = -sum_is / sum_T;
    report.b = -sum_bound / sum_T;
    report.c = sum_rate / static_cast<double>(N);
    report.samples = S;
    return report;
}

std::string CompareTable::to_csv() const {
    std::string out = "variant,seed,valid_bound,rmse\n";
    char buf[160];
    for (const VariantRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%llu,%.17g,%.17g\n", r.variant.c_str(),
                      static_cast<unsigned long long>(r.seed), r.valid_bound, r.rmse);
        out += buf;
    }
    return out;
}

CompareTable compare_variants(const ModelConfig& model_cfg, const InfConfig& net_proto,
                              const std::vector<std::string>& variants,
                              const SequenceBatch& dataset, std::size_t n_valid,
                              const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds) {
    if (variants.empty()) throw ContractViolation("compare_variants: variants list is empty");
    if (seeds.empty()) throw ContractViolation("compare_variants: seeds list is empty");
    if (n_valid == 0) throw ContractViolation("compare_variants: n_valid must be >= 1");
    if (n_valid >= dataset.size()) {
        throw ContractViolation(
            "compare_variants: n_valid must leave at least one training sequence");
    }
    auto split = split_batch(dataset, dataset.size() - n_valid);
    const SequenceBatch& train_set = split.first;
    const SequenceBatch& valid_set = split.second;

    bool have_truth = true;
    for (const Sequence& s : valid_set.seqs) have_truth = have_truth && s.has_z_star();
    std::size_t truth_dim = have_truth ? valid_set.seqs.front().z_star.dim(1) : 0;

    CompareTable table;
    for (const std::string& variant : variants) {
        for (std::uint64_t seed : seeds) {
            Rng model_rng = spawn_stream(seed, "model-init");
            GenerativeModel model = GenerativeModel::make(model_cfg, model_rng);
            InfConfig net_cfg = net_proto;
            net_cfg.variant = variant;
            net_cfg.latent_dim = model.config().latent_dim;
            net_cfg.obs_dim = model.config().obs_dim;
            net_cfg.action_dim = model.config().action_dim;
            Rng net_rng = spawn_stream(seed, "net-init");
            InferenceNetwork net = InferenceNetwork::make(net_cfg, net_rng);
            TrainConfig run_cfg = cfg;
            run_cfg.seed = seed;
            TrainLog log = train(model, net, train_set, valid_set, run_cfg);

            VariantRow row;
            row.variant = variant;
            row.seed = seed;
            row.valid_bound = log.finished ? log.best_valid : kNaN;
            row.rmse = kNaN;
            if (log.finished && have_truth && truth_dim == model.config().latent_dim) {
                row.rmse = rmse_posterior(posterior_marginals(net, valid_set), valid_set);
            }
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

std::string CounterfactualReport::to_csv() const {
    std::string out = "step,factual,counterfactual\n";
    char buf[96];
    for (std::size_t h = 0; h < factual.size(); ++h) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", h + 1, factual[h],
                      counterfactual[h]);
        out += buf;
    }
    return out;
}

nlohmann::json CounterfactualReport::to_json() const {
    return {{"k", k},
            {"n_rollouts", n_rollouts},
            {"horizon", factual.size()},
            {"factual", factual},
            {"counterfactual", counterfactual}};
}

CounterfactualReport counterfactual_rollout(const GenerativeModel& model,
                                            const InferenceNetwork& net, const Tensor& x_prefix,
                                            const Tensor& u_prefix, const Tensor& u_future,
                                            std::size_t k, std::size_t horizon,
                                            std::size_t n_rollouts, const ThresholdSpec& th,
                                            Rng& rng) {
    if (!model.is_action_conditioned()) {
        throw ContractViolation("counterfactual_rollout: model takes no actions");
    }
    const std::size_t L = model.config().latent_dim;
    const std::size_t D = model.config().obs_dim;
    const std::size_t A = model.config().action_dim;
    if (net.config().latent_dim != L || net.config().obs_dim != D ||
        net.config().action_dim != A) {
        throw ContractViolation("counterfactual_rollout: network dims do not match the model");
    }
    if (k == 0) throw ContractViolation("counterfactual_rollout: k must be >= 1");
    if (n_rollouts == 0) throw ContractViolation("counterfactual_rollout: n_rollouts must be >= 1");
    if (th.dim >= D) {
        throw ContractViolation("counterfactual_rollout: threshold dim " +
                                std::to_string(th.dim) + " out of range for obs_dim " +
                                std::to_string(D));
    }
    if (x_prefix.rank() != 2 || x_prefix.dim(0) != k || x_prefix.dim(1) != D) {
        throw ContractViolation("counterfactual_rollout: x prefix must be [k x obs_dim], got " +
                                x_prefix.shape_str());
    }
    if (u_prefix.rank() != 2 || u_prefix.dim(0) != k || u_prefix.dim(1) != A) {
        throw ContractViolation(
            "counterfactual_rollout: u prefix must be [k x action_dim], got " +
            u_prefix.shape_str());
    }

    CounterfactualReport report;
    report.k = k;
    report.n_rollouts = n_rollouts;
    if (horizon == 0) return report;
    if (u_future.rank() != 2 || u_future.dim(0) != horizon || u_future.dim(1) != A) {
        throw ContractViolation(
            "counterfactual_rollout: factual future actions must be [horizon x action_dim], "
            "got " +
            u_future.shape_str());
    }

    Tensor z_start({L});
    {
        Tape tape;
        InferResult res = net.infer(tape, x_prefix, nullptr, &u_prefix, rng, false);
        for (std::size_t i = 0; i < L; ++i) z_start[i] = res.q.means.at(k - 1, i);
    }

    // One transition draw plus the reconstructed indicator at the new state;
    // the tape is value-only scratch. eps is supplied by the caller so the
    // factual and counterfactual branches share their noise.
    auto advance = [&](const Tensor& z_prev, const Tensor& u_prev,
                       const std::vector<double>& eps) {
        Tape tape;
        Var z_var = tape.constant(z_prev);
        Var u_var = tape.constant(u_prev);
        TransitionOut tr = model.transition(tape, z_var, &u_var);
        const Tensor& mean = tape.value(tr.mean);
        const Tensor& var = tape.value(tr.var);
        Tensor z_next({L});
        for (std::size_t i = 0; i < L; ++i) {
            z_next[i] = mean.flat()[i] + std::sqrt(var.flat()[i]) * eps[i];
        }
        EmissionOut em = model.emission(tape, tape.constant(z_next));
        double value;
        if (em.bernoulli) {
            double logit = tape.value(em.logits).flat()[th.dim];
            value = 1.0 / (1.0 + std::exp(-logit));
        } else {
            value = tape.value(em.mean).flat()[th.dim];
        }
        return std::pair<Tensor, double>(std::move(z_next), value);
    };

    const Tensor u_zero({A});  // the intervention: no actions from k on
    std::vector<std::size_t> high_f(horizon, 0), high_c(horizon, 0);
    std::uint64_t key = draw_u64(rng);
    std::vector<double> eps(L);
    for (std::size_t r = 0; r < n_rollouts; ++r) {
        Rng roll = spawn_stream(key, "roll", r);
        Tensor z_f = z_start;
        Tensor z_c = z_start;
        for (std::size_t h = 0; h < horizon; ++h) {
            for (std::size_t i = 0; i < L; ++i) eps[i] = draw_normal(roll);
            auto stepped_f = advance(z_f, row_of(u_future, h), eps);
            auto stepped_c = advance(z_c, u_zero, eps);
            z_f = std::move(stepped_f.first);
            z_c = std::move(stepped_c.first);
            if (stepped_f.second > th.cut) ++high_f[h];
            if (stepped_c.second > th.cut) ++high_c[h];
        }
    }
    report.factual.resize(horizon);
    report.counterfactual.resize(horizon);
    for (std::size_t h = 0; h < horizon; ++h) {
        report.factual[h] = static_cast<double>(high_f[h]) / static_cast<double>(n_rollouts);
        report.counterfactual[h] = static_cast<double>(high_c[h]) / static_cast<double>(n_rollouts);
    }
    return report;
}

CounterfactualReport counterfactual_cohort(const GenerativeModel& model,
                                           const InferenceNetwork& net,
                                           const SequenceBatch& cohort, std::size_t k,
                                           std::size_t horizon, std::size_t n_rollouts,
                                           const ThresholdSpec& th, std::uint64_t seed,
                                           std::size_t threads) {
    if (!model.is_action_conditioned()) {
        throw ContractViolation("counterfactual_cohort: model takes no actions");
    }
    if (cohort.seqs.empty()) throw ContractViolation("counterfactual_cohort: cohort is empty");
    if (threads == 0) throw ContractViolation("counterfactual_cohort: threads must be >= 1");
    check_dims(cohort, model.config().obs_dim, model.config().action_dim,
               "counterfactual_cohort");
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const Sequence& s = cohort.seqs[i];
        if (!s.has_u()) {
            throw ContractViolation("counterfactual_cohort: sequence " + std::to_string(i) +
                                    " has no recorded actions");
        }
        if (s.T() < k + horizon) {
            throw ContractViolation("counterfactual_cohort: sequence " + std::to_string(i) +
                                    " has " + std::to_string(s.T()) +
                                    " steps, fewer than k + horizon = " +
                                    std::to_string(k + horizon));
        }
    }

    const std::size_t N = cohort.size();
    std::vector<CounterfactualReport> parts(N);
    run_indexed(N, threads, [&](std::size_t i) {
        const Sequence& s = cohort.seqs[i];
        Rng rng = spawn_stream(seed, "cfac", i);
        parts[i] = counterfactual_rollout(model, net, slice_rows(s.x, 0, k),
                                          slice_rows(s.u, 0, k), slice_rows(s.u, k, horizon), k,
                                          horizon, n_rollouts, th, rng);
    });

    CounterfactualReport report;
    report.k = k;
    report.n_rollouts = n_rollouts;
    report.factual.assign(horizon, 0.0);
    report.counterfactual.assign(horizon, 0.0);
    for (const CounterfactualReport& p : parts) {
        for (std::size_t h = 0; h < horizon; ++h) {
            report.factual[h] += p.factual[h];
            report.counterfactual[h] += p.counterfactual[h];
        }
    }
    for (std::size_t h = 0; h < horizon; ++h) {
        report.factual[h] /= static_cast<double>(N);
        report.counterfactual[h] /= static_cast<double>(N);
    }
    return report;
}

}  // namespace dmm
