// Acceptance gate: ten end-to-end criteria covering gradient correctness,
// exact-inference agreement, desk-scale variational inference quality,
// inference-network ordering, analytic KL, missing-data inertness, bound
// tightness ordering, parameter recovery, counterfactual behavior, and
// deterministic resume.
//
// Usage: acceptance [A1 ... A10]   (no arguments = run all ten)
//
// Each selected criterion prints exactly one line
//     A<k> PASS  <detail>
// or  A<k> FAIL  <detail>
// and the process exits nonzero if any selected criterion fails.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dmm/data.hpp"
#include "dmm/elbo.hpp"
#include "dmm/eval.hpp"
#include "dmm/exact.hpp"
#include "dmm/gssm.hpp"
#include "dmm/infnet.hpp"
#include "dmm/parallel.hpp"
#include "dmm/rng.hpp"
#include "dmm/tape.hpp"
#include "dmm/trainer.hpp"

using namespace dmm;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double now_sec() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double median3(double a, double b, double c) {
    std::vector<double> v = {a, b, c};
    std::sort(v.begin(), v.end());
    return v[1];
}

void fill_param(ParamStore& ps, const std::string& name, double v) {
    Tensor& t = ps.at(name);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = v;
}

void set_param(ParamStore& ps, const std::string& name, const std::vector<double>& v) {
    Tensor& t = ps.at(name);
    if (t.numel() != v.size()) {
        throw std::runtime_error("set_param: size mismatch on " + name);
    }
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
}

// ---------------------------------------------------------------------------
// A1: analytic ELBO gradients vs central finite differences, every parameter.
// ---------------------------------------------------------------------------

Outcome run_a1() {
    double t0 = now_sec();

    ModelConfig mc;
    mc.variant = "DMM";
    mc.latent_dim = 3;
    mc.obs_dim = 4;
    mc.trans_hidden = 8;
    mc.emis_hidden = 8;
    Rng mr = spawn_stream(301, "model-init");
    GenerativeModel model = GenerativeModel::make(mc, mr);

    InfConfig ic;
    ic.variant = "DKS";
    ic.latent_dim = 3;
    ic.obs_dim = 4;
    ic.rnn_dim = 8;
    Rng nr = spawn_stream(301, "net-init");
    InferenceNetwork net = InferenceNetwork::make(ic, nr);

    SequenceBatch batch = gen_toy_binary(1, 3, 4, 302);

    auto objective = [&](Tape& tape) {
        Rng rng = spawn_stream(303, "eps");  // common random numbers
        return elbo(tape, model, net, batch, 1.0, 1, rng).objective_var;
    };

    Tape tape;
    Var obj = objective(tape);
    std::vector<std::string> names;
    for (const auto& n : model.params().names()) names.push_back(GenerativeModel::kPrefix + n);
    for (const auto& n : net.params().names()) names.push_back(InferenceNetwork::kPrefix + n);
    GradMap grads = tape.gradient(obj, names);

    const double h = 1e-5;
    double worst = 0.0;
    std::string worst_name;
    std::size_t checked = 0;
    auto sweep = [&](ParamStore& store, const std::string& prefix) {
        for (const auto& n : store.names()) {
            Tensor& p = store.at(n);
            const Tensor& ad = grads.at(prefix + n);
            for (std::size_t idx = 0; idx < p.numel(); ++idx) {
                double keep = p[idx];
                p[idx] = keep + h;
                Tape tp;
                double up = objective(tp).val().value();
                p[idx] = keep - h;
                Tape tm;
                double dn = objective(tm).val().value();
                p[idx] = keep;
                double fd = (up - dn) / (2.0 * h);
                double denom = std::max({std::abs(fd), std::abs(ad[idx]), 1.0});
                double rel = std::abs(fd - ad[idx]) / denom;
                if (rel > worst) {
                    worst = rel;
                    worst_name = prefix + n;
                }
                ++checked;
            }
        }
    };
    sweep(model.params(), GenerativeModel::kPrefix);
    sweep(net.params(), InferenceNetwork::kPrefix);

    double secs = now_sec() - t0;
    Outcome out;
    out.pass = worst < 1e-4 && secs < 60.0;
    out.detail = fmt("max rel err %.2e (at %s) over %zu parameter entries in %.1fs",
                     worst, worst_name.c_str(), checked, secs);
    return out;
}

// ---------------------------------------------------------------------------
// A2: RTS smoother and filter log-likelihood vs dense joint-Gaussian
// conditioning on random systems plus the fixed drifting system.
// ---------------------------------------------------------------------------

Eigen::MatrixXd randm(Rng& rng, std::size_t r, std::size_t c, double scale) {
    Eigen::MatrixXd M(r, c);
    for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = scale * draw_normal(rng);
    return M;
}

Eigen::MatrixXd random_spd(Rng& rng, std::size_t d, double jitter) {
    Eigen::MatrixXd L = randm(rng, d, d, 0.6);
    return L * L.transpose() + jitter * Eigen::MatrixXd::Identity(d, d);
}

LinearSystem random_stable_system(Rng& rng, std::size_t d, std::size_t m) {
    LinearSystem sys;
    sys.A = randm(rng, d, d, 0.7);
    double rho = sys.A.eigenvalues().cwiseAbs().maxCoeff();
    if (rho > 0.95) sys.A *= 0.95 / rho;
    sys.c = randm(rng, d, 1, 0.5);
    sys.Q = random_spd(rng, d, 0.2);
    sys.H = randm(rng, m, d, 1.0);
    sys.R = random_spd(rng, m, 0.3);
    sys.mu0 = randm(rng, d, 1, 1.0);
    sys.Sigma0 = random_spd(rng, d, 0.2);
    return sys;
}

Tensor simulate(const LinearSystem& sys, std::size_t T, Rng& rng) {
    auto mvn = [&](const Eigen::VectorXd& mu, const Eigen::MatrixXd& S) {
        Eigen::LLT<Eigen::MatrixXd> llt(S);
        Eigen::VectorXd eps(mu.size());
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = draw_normal(rng);
        return (mu + Eigen::MatrixXd(llt.matrixL()) * eps).eval();
    };
    std::size_t m = sys.obs_dim();
    Tensor x({T, m});
    Eigen::VectorXd z = mvn(sys.mu0, sys.Sigma0);
    for (std::size_t t = 0; t < T; ++t) {
        if (t > 0) z = mvn(sys.A * z + sys.c, sys.Q);
        Eigen::VectorXd xt = mvn(sys.H * z, sys.R);
        for (std::size_t j = 0; j < m; ++j) x.at(t, j) = xt[static_cast<Eigen::Index>(j)];
    }
    return x;
}

Outcome run_a2() {
    double worst_marginal = 0.0, worst_loglik = 0.0;
    auto check_system = [&](const LinearSystem& sys, const Tensor& x) {
        JointResult joint = joint_conditioning_oracle(sys, x);
        GaussianSeq smoothed = rts_smooth(sys, x).marginals();
        GaussianSeq dense = joint.marginals();
        for (std::size_t i = 0; i < smoothed.means.numel(); ++i) {
            worst_marginal = std::max(worst_marginal,
                                      std::abs(smoothed.means[i] - dense.means[i]));
            worst_marginal = std::max(worst_marginal,
                                      std::abs(smoothed.vars[i] - dense.vars[i]));
        }
        worst_loglik = std::max(worst_loglik,
                                std::abs(kalman_filter(sys, x).loglik - joint.loglik));
    };

    Rng rng = spawn_stream(310, "systems");
    for (int k = 0; k < 20; ++k) {
        std::size_t d = 1 + draw_u64(rng) % 3;
        std::size_t m = 1 + draw_u64(rng) % 3;
        std::size_t T = 1 + draw_u64(rng) % 6;
        LinearSystem sys = random_stable_system(rng, d, m);
        check_system(sys, simulate(sys, T, rng));
    }
    LinearSystem drift = linear_drift_system();
    Rng dr = spawn_stream(311, "drift-x");
    check_system(drift, simulate(drift, 6, dr));

    Outcome out;
    out.pass = worst_marginal < 1e-8 && worst_loglik < 1e-8;
    out.detail = fmt("max marginal err %.2e, max loglik err %.2e over 21 systems",
                     worst_marginal, worst_loglik);
    return out;
}

// ---------------------------------------------------------------------------
// A3 + A4 shared runs: three inference variants x three seeds on the fixed
// drifting system at desk scale, with the generative parameters frozen.
// ---------------------------------------------------------------------------

struct TrainedCell {
    std::string variant;
    std::uint64_t seed = 0;
    double held_out_bound = 0.0;  // best validation bound of the run
    double rmse = 0.0;            // posterior-mean RMSE on the full training set
    double mean_bound = 0.0;      // mean variational bound on the full training set
    double secs = 0.0;
};

struct A34Data {
    double exact_rmse_full = 0.0;
    double exact_mean_ll = 0.0;
    std::vector<TrainedCell> cells;
};

const A34Data& a34() {
    static const A34Data data = [] {
        A34Data out;
        SequenceBatch full = gen_linear_drift(500, 25, 100);
        SequenceBatch valid = gen_linear_drift(50, 25, 101);

        LinearSystem sys = linear_drift_system();
        std::vector<GaussianSeq> exact_marginals;
        std::vector<Tensor> truth;
        double ll_sum = 0.0;
        for (const Sequence& s : full.seqs) {
            exact_marginals.push_back(rts_smooth(sys, s.x).marginals());
            truth.push_back(s.z_star);
            ll_sum += kalman_filter(sys, s.x).loglik;
        }
        out.exact_rmse_full = exact_rmse(exact_marginals, truth);
        out.exact_mean_ll = ll_sum / static_cast<double>(full.size());

        const std::vector<std::string> variants = {"MF-L", "DKS", "ST-LR"};
        const std::vector<std::uint64_t> seeds = {1, 2, 3};
        out.cells.resize(variants.size() * seeds.size());
        run_indexed(out.cells.size(), 3, [&](std::size_t idx) {
            const std::string& variant = variants[idx / seeds.size()];
            std::uint64_t seed = seeds[idx % seeds.size()];
            double c0 = now_sec();

            ModelConfig mc;
            mc.variant = "LinearGSSM";
            Rng mr = spawn_stream(seed, "model-init");
            GenerativeModel model = GenerativeModel::make(mc, mr);

            InfConfig ic;
            ic.variant = variant;
            ic.latent_dim = 1;
            ic.obs_dim = 1;
            ic.rnn_dim = 16;
            Rng nr = spawn_stream(seed, "net-init");
            InferenceNetwork net = InferenceNetwork::make(ic, nr);

            TrainConfig tc;
            tc.batch_size = 25;
            tc.epochs = 150;  // 20 updates per epoch -> 3000 updates
            tc.lr = 0.005;
            tc.anneal_horizon = 200;
            tc.seed = seed;
            tc.patience = 150;
            tc.threads = 1;
            TrainLog log = train(model, net, full, valid, tc);

            TrainedCell cell;
            cell.variant = variant;
            cell.seed = seed;
            cell.held_out_bound = log.best_valid;
            cell.rmse = rmse_posterior(posterior_marginals(net, full), full);
            cell.mean_bound = validation_bound(model, net, full, 1, 7, 1);
            cell.secs = now_sec() - c0;
            out.cells[idx] = cell;
        });
        return out;
    }();
    return data;
}

std::vector<const TrainedCell*> cells_of(const A34Data& d, const std::string& variant) {
    std::vector<const TrainedCell*> out;
    for (const TrainedCell& c : d.cells) {
        if (c.variant == variant) out.push_back(&c);
    }
    return out;
}

Outcome run_a3() {
    const A34Data& d = a34();
    Outcome out;
    out.pass = true;
    std::string parts;
    for (const std::string& variant : {std::string("DKS"), std::string("ST-LR")}) {
        auto cs = cells_of(d, variant);
        double med_rmse = median3(cs[0]->rmse, cs[1]->rmse, cs[2]->rmse);
        double med_bound = median3(cs[0]->mean_bound, cs[1]->mean_bound, cs[2]->mean_bound);
        double secs = cs[0]->secs + cs[1]->secs + cs[2]->secs;
        double rmse_excess = med_rmse / d.exact_rmse_full - 1.0;
        double bound_gap = std::abs(med_bound - d.exact_mean_ll) / std::abs(d.exact_mean_ll);
        bool ok = rmse_excess <= 0.05 && bound_gap <= 0.02 && secs <= 900.0;
        out.pass = out.pass && ok;
        if (!parts.empty()) parts += "; ";
        parts += fmt("%s rmse %.4f vs exact %.4f (+%.1f%%), bound %.3f vs loglik %.3f "
                     "(%.2f%% gap), %.0fs",
                     variant.c_str(), med_rmse, d.exact_rmse_full, 100.0 * rmse_excess,
                     med_bound, d.exact_mean_ll, 100.0 * bound_gap, secs);
    }
    out.detail = "median of 3 seeds: " + parts;
    return out;
}

Outcome run_a4() {
    const A34Data& d = a34();
    std::map<std::string, double> med;
    for (const std::string& v : {std::string("MF-L"), std::string("DKS"), std::string("ST-LR")}) {
        auto cs = cells_of(d, v);
        med[v] = median3(cs[0]->held_out_bound, cs[1]->held_out_bound, cs[2]->held_out_bound);
    }
    Outcome out;
    out.pass = med["DKS"] >= med["MF-L"] && med["ST-LR"] >= med["MF-L"];
    out.detail = fmt("median held-out bound over 3 seeds: MF-L %.3f, DKS %.3f, ST-LR %.3f",
                     med["MF-L"], med["DKS"], med["ST-LR"]);
    return out;
}

// ---------------------------------------------------------------------------
// A5: analytic diagonal-Gaussian KL vs Monte Carlo, plus exactness properties.
// ---------------------------------------------------------------------------

Outcome run_a5() {
    Rng rng = spawn_stream(320, "kl");
    const std::size_t n_mc = 100000;
    double worst_z = 0.0;
    int violations = 0;
    bool nonneg_ok = true;

    for (int draw = 0; draw < 50; ++draw) {
        std::size_t d = 1 + draw_u64(rng) % 5;
        Tensor mu_q({d}), var_q({d}), mu_p({d}), var_p({d});
        for (std::size_t i = 0; i < d; ++i) {
            mu_q[i] = 1.5 * draw_normal(rng);
            mu_p[i] = 1.5 * draw_normal(rng);
            var_q[i] = 0.6 * std::exp(draw_normal(rng)) + 0.05;
            var_p[i] = 0.6 * std::exp(draw_normal(rng)) + 0.05;
        }

        Tape tape;
        double analytic = kl_diag_gaussian(tape.constant(mu_q), tape.constant(var_q),
                                           tape.constant(mu_p), tape.constant(var_p))
                              .val()
                              .value();
        nonneg_ok = nonneg_ok && analytic >= 0.0;

        // Independent Monte-Carlo estimate written out longhand.
        double sum = 0.0, sumsq = 0.0;
        for (std::size_t s = 0; s < n_mc; ++s) {
            double w = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                double z = mu_q[i] + std::sqrt(var_q[i]) * draw_normal(rng);
                double dq = z - mu_q[i], dp = z - mu_p[i];
                w += -0.5 * (std::log(var_q[i]) + dq * dq / var_q[i]) +
                     0.5 * (std::log(var_p[i]) + dp * dp / var_p[i]);
            }
            sum += w;
            sumsq += w * w;
        }
        double mean = sum / n_mc;
        double var = std::max(0.0, sumsq / n_mc - mean * mean);
        double se = std::sqrt(var / n_mc);
        double zscore = std::abs(analytic - mean) / std::max(se, 1e-300);
        worst_z = std::max(worst_z, zscore);
        if (zscore > 3.0) ++violations;
    }

    // Exact zero at equality, bitwise.
    Tensor mu({3}), var({3});
    for (std::size_t i = 0; i < 3; ++i) {
        mu[i] = draw_normal(rng);
        var[i] = std::exp(draw_normal(rng));
    }
    Tape tape;
    double at_equal = kl_diag_gaussian(tape.constant(mu), tape.constant(var),
                                       tape.constant(mu), tape.constant(var))
                          .val()
                          .value();
    bool zero_ok = at_equal == 0.0;

    Outcome out;
    out.pass = violations == 0 && nonneg_ok && zero_ok;
    out.detail = fmt("max |z| %.2f over 50 draws x %zu samples (3 SE allowed); "
                     "nonnegative: %s; zero at equality: %s",
                     worst_z, n_mc, nonneg_ok ? "yes" : "NO", zero_ok ? "exact" : "NO");
    return out;
}

// ---------------------------------------------------------------------------
// A6: masked observation entries are bitwise inert in every likelihood path.
// ---------------------------------------------------------------------------

Outcome run_a6() {
    SequenceBatch batch = gen_toy_binary(6, 10, 4, 330);
    batch = apply_missingness(batch, 0.3, 331);
    GenerativeModel model = toy_binary_model(4, 330);

    InfConfig ic;
    ic.variant = "DKS";
    ic.latent_dim = model.config().latent_dim;
    ic.obs_dim = 4;
    ic.rnn_dim = 8;
    Rng nr = spawn_stream(332, "net-init");
    InferenceNetwork net = InferenceNetwork::make(ic, nr);

    SequenceBatch poked = batch;
    std::size_t poked_count = 0;
    for (Sequence& s : poked.seqs) {
        for (std::size_t t = 0; t < s.mask.dim(0); ++t) {
            for (std::size_t j = 0; j < s.mask.dim(1); ++j) {
                if (s.mask.at(t, j) == 0.0) {
                    s.x.at(t, j) += 7.25 + static_cast<double>(t + j);
                    ++poked_count;
                }
            }
        }
    }
    if (poked_count == 0) {
        return {false, "missingness produced no masked entries to perturb"};
    }

    auto batch_elbo = [&](const SequenceBatch& b) {
        Tape tape;
        Rng rng = spawn_stream(333, "eps");
        return elbo(tape, model, net, b, 0.9, 1, rng).objective;
    };
    bool elbo_same = batch_elbo(batch) == batch_elbo(poked);

    bool is_same = true;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng r1 = spawn_stream(334, "is", i);
        Rng r2 = spawn_stream(334, "is", i);
        is_same = is_same && is_loglik(model, net, batch.seqs[i], 4, r1) ==
                                 is_loglik(model, net, poked.seqs[i], 4, r2);
    }

    NllReport ra = nll_report(model, net, batch, 3, 335, 1);
    NllReport rb = nll_report(model, net, poked, 3, 335, 1);
    bool report_same = ra.a == rb.a && ra.b == rb.b && ra.c == rb.c;

    Outcome out;
    out.pass = elbo_same && is_same && report_same;
    out.detail = fmt("perturbed %zu masked entries: elbo %s, is_loglik %s, nll_report %s",
                     poked_count, elbo_same ? "unchanged" : "CHANGED",
                     is_same ? "unchanged" : "CHANGED", report_same ? "unchanged" : "CHANGED");
    return out;
}

// ---------------------------------------------------------------------------
// A7: importance sampling tightens the bound and improves with more samples.
// ---------------------------------------------------------------------------

Outcome run_a7() {
    SequenceBatch train_set = gen_toy_binary(40, 10, 4, 340);
    SequenceBatch valid_set = gen_toy_binary(8, 10, 4, 341);

    ModelConfig mc;
    mc.variant = "DMM";
    mc.latent_dim = 3;
    mc.obs_dim = 4;
    mc.trans_hidden = 12;
    mc.emis_hidden = 12;
    Rng mr = spawn_stream(342, "model-init");
    GenerativeModel model = GenerativeModel::make(mc, mr);

    InfConfig ic;
    ic.variant = "DKS";
    ic.latent_dim = 3;
    ic.obs_dim = 4;
    ic.rnn_dim = 12;
    Rng nr = spawn_stream(342, "net-init");
    InferenceNetwork net = InferenceNetwork::make(ic, nr);

    TrainConfig tc;
    tc.batch_size = 10;
    tc.epochs = 50;
    tc.lr = 0.005;
    tc.anneal_horizon = 100;
    tc.seed = 343;
    tc.patience = 50;
    train(model, net, train_set, valid_set, tc);

    Sequence test = gen_toy_binary(1, 10, 4, 344).seqs[0];
    const std::size_t R = 200;
    std::vector<double> e(R), s1(R), s10(R), s100(R);
    run_indexed(R, 3, [&](std::size_t r) {
        {
            Tape tape;
            Rng rng = spawn_stream(345, "rep-elbo", r);
            e[r] = elbo_sequence(tape, model, net, test, 1.0, 1, rng).objective;
        }
        {
            Rng rng = spawn_stream(345, "rep-is1", r);
            s1[r] = is_loglik(model, net, test, 1, rng);
        }
        {
            Rng rng = spawn_stream(345, "rep-is10", r);
            s10[r] = is_loglik(model, net, test, 10, rng);
        }
        {
            Rng rng = spawn_stream(345, "rep-is100", r);
            s100[r] = is_loglik(model, net, test, 100, rng);
        }
    });

    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    double me = mean_of(e), m1 = mean_of(s1), m10 = mean_of(s10), m100 = mean_of(s100);
    double sq = 0.0;
    for (double x : e) sq += (x - me) * (x - me);
    double se = std::sqrt(sq / static_cast<double>(R - 1)) / std::sqrt(static_cast<double>(R));

    bool tighter = m100 >= me - 2.0 * se;
    bool monotone = m1 <= m10 && m10 <= m100;
    Outcome out;
    out.pass = tighter && monotone;
    out.detail = fmt("mean ELBO %.4f (SE %.4f); mean IS loglik %.4f / %.4f / %.4f "
                     "at S=1/10/100 over %zu repetitions",
                     me, se, m1, m10, m100, R);
    return out;
}

// ---------------------------------------------------------------------------
// A8: recovering the two dynamics parameters of the 2-d nonlinear system.
// ---------------------------------------------------------------------------

Outcome run_a8() {
    double t0 = now_sec();
    const double true_alpha = 0.5, true_beta = -0.1;
    SequenceBatch train_set = gen_nonlinear2d(300, 25, true_alpha, true_beta, 200);
    SequenceBatch valid_set = gen_nonlinear2d(30, 25, true_alpha, true_beta, 201);

    double alphas[3], betas[3];
    run_indexed(3, 3, [&](std::size_t i) {
        std::uint64_t seed = 3 + i;
        GenerativeModel model = GenerativeModel::nonlinear2d(0.0, 0.0);
        InfConfig ic;
        ic.variant = "DKS";
        ic.latent_dim = 2;
        ic.obs_dim = 2;
        ic.rnn_dim = 16;
        Rng nr = spawn_stream(seed, "net-init");
        InferenceNetwork net = InferenceNetwork::make(ic, nr);

        TrainConfig tc;
        tc.batch_size = 25;
        tc.epochs = 130;  // 12 updates per epoch -> 1560 updates
        tc.lr = 0.01;
        tc.anneal_horizon = 200;
        tc.seed = seed;
        tc.patience = 130;
        tc.threads = 1;
        train(model, net, train_set, valid_set, tc);

        alphas[i] = model.params().at("trans.alpha")[0];
        betas[i] = model.params().at("trans.beta")[0];
    });

    double med_a = median3(alphas[0], alphas[1], alphas[2]);
    double med_b = median3(betas[0], betas[1], betas[2]);
    double secs = now_sec() - t0;
    Outcome out;
    out.pass = std::abs(med_a - true_alpha) <= 0.1 && std::abs(med_b - true_beta) <= 0.1 &&
               secs <= 1800.0;
    out.detail = fmt("median over 3 seeds: alpha %.3f (true %.1f), beta %.3f (true %.1f) "
                     "in %.0fs",
                     med_a, true_alpha, med_b, true_beta, secs);
    return out;
}

// ---------------------------------------------------------------------------
// A9: counterfactual null under action-blind dynamics, and directionality
// under a transition where actions provably push the latent state down.
// ---------------------------------------------------------------------------

GenerativeModel make_zero_effect_model() {
    ModelConfig cfg;
    cfg.variant = "DMM-Actions";
    cfg.latent_dim = 2;
    cfg.obs_dim = 2;
    cfg.action_dim = 1;
    cfg.trans_hidden = 8;
    cfg.emis_hidden = 8;
    Rng rng = spawn_stream(44, "model-init");
    GenerativeModel m = GenerativeModel::make(cfg, rng);
    // Zero the action row of both transition input weight matrices: the
    // action bits then contribute exactly +0.0 everywhere.
    for (const char* name : {"trans.gate.0.W", "trans.prop.0.W"}) {
        Tensor& W = m.params().at(name);
        for (std::size_t c = 0; c < W.dim(1); ++c) W.at(2, c) = 0.0;
    }
    return m;
}

GenerativeModel make_known_effect_model() {
    ModelConfig cfg;
    cfg.variant = "DMM-Actions";
    cfg.latent_dim = 1;
    cfg.obs_dim = 1;
    cfg.action_dim = 1;
    cfg.trans_hidden = 4;
    cfg.emis_hidden = 2;
    cfg.nonlinearity = "relu";
    Rng rng = spawn_stream(500, "model-init");
    GenerativeModel m = GenerativeModel::make(cfg, rng);
    for (const char* name : {"trans.gate.0.W", "trans.gate.0.b", "trans.gate.1.W",
                             "trans.prop.0.b", "emis.0.b", "emis.1.b", "emis.2.b"}) {
        fill_param(m.params(), name, 0.0);
    }
    fill_param(m.params(), "trans.gate.1.b", 1e3);  // gate pinned fully open
    // hidden units: relu(z), relu(-z), relu(u), unused
    set_param(m.params(), "trans.prop.0.W", {1.0, -1.0, 0.0, 0.0,   // z row
                                             0.0, 0.0, 1.0, 0.0});  // u row
    set_param(m.params(), "trans.prop.1.W", {1.0, -1.0, -1.0, 0.0});
    set_param(m.params(), "trans.prop.1.b", {0.25});  // mean = z - u + 0.25 exactly
    fill_param(m.params(), "trans.var.W", 0.0);
    set_param(m.params(), "trans.var.b", {-6.0});
    set_param(m.params(), "emis.0.W", {1.0, -1.0});
    set_param(m.params(), "emis.1.W", {1.0, 0.0, 0.0, 1.0});
    set_param(m.params(), "emis.2.W", {1.0, -1.0});  // logits = z exactly
    return m;
}

InferenceNetwork make_dks_net(std::size_t latent, std::size_t obs, std::size_t actions,
                              std::size_t rnn, std::uint64_t seed) {
    InfConfig ic;
    ic.variant = "DKS";
    ic.latent_dim = latent;
    ic.obs_dim = obs;
    ic.action_dim = actions;
    ic.rnn_dim = rnn;
    Rng nr = spawn_stream(seed, "net-init");
    return InferenceNetwork::make(ic, nr);
}

Outcome run_a9() {
    // Null: action-blind model, shared noise -> bitwise-identical branches.
    GenerativeModel zmodel = make_zero_effect_model();
    InferenceNetwork znet = make_dks_net(2, 2, 1, 6, 44);
    SequenceBatch cohort = gen_toy_binary(5, 9, 2, 350);
    ActionPolicy policy;
    policy.kind = "random-bernoulli";
    policy.p = 0.5;
    gen_actions(cohort, 1, 351, policy);
    ThresholdSpec th;
    th.dim = 1;
    th.cut = 0.5;
    CounterfactualReport null_rep = counterfactual_cohort(zmodel, znet, cohort, 3, 4, 8, th,
                                                          352, 1);
    bool null_ok = true;
    for (std::size_t h = 0; h < null_rep.factual.size(); ++h) {
        null_ok = null_ok && null_rep.factual[h] == null_rep.counterfactual[h];
    }

    // Directionality: actions subtract from the latent state, the emission
    // logit is the latent state, so removing actions can only raise the
    // high-indicator proportion.
    GenerativeModel kmodel = make_known_effect_model();
    InferenceNetwork knet = make_dks_net(1, 1, 1, 6, 45);
    SequenceBatch kc = sample_dataset_actions(kmodel, 12, 8, 353, 0.7);
    ThresholdSpec kth;
    kth.dim = 0;
    kth.cut = 0.5;
    const std::size_t horizon = 4;
    double fact[3][horizon], cfac[3][horizon];
    for (std::uint64_t s = 0; s < 3; ++s) {
        CounterfactualReport rep = counterfactual_cohort(kmodel, knet, kc, 4, horizon, 40, kth,
                                                         354 + s, 1);
        for (std::size_t h = 0; h < horizon; ++h) {
            fact[s][h] = rep.factual[h];
            cfac[s][h] = rep.counterfactual[h];
        }
    }
    bool dir_ok = true;
    double min_gap = 1.0, max_gap = -1.0;
    for (std::size_t h = 0; h < horizon; ++h) {
        double mf = median3(fact[0][h], fact[1][h], fact[2][h]);
        double mc = median3(cfac[0][h], cfac[1][h], cfac[2][h]);
        dir_ok = dir_ok && mc >= mf;
        min_gap = std::min(min_gap, mc - mf);
        max_gap = std::max(max_gap, mc - mf);
    }

    Outcome out;
    out.pass = null_ok && dir_ok;
    out.detail = fmt("action-blind traces %s; median counterfactual-minus-factual proportion "
                     "gap in [%.2f, %.2f] across the horizon",
                     null_ok ? "bitwise identical" : "DIVERGED", min_gap, max_gap);
    return out;
}

// ---------------------------------------------------------------------------
// A10: fixed-seed reproducibility and checkpoint resume.
// ---------------------------------------------------------------------------

Outcome run_a10() {
    SequenceBatch train_set = gen_toy_binary(12, 6, 3, 360);
    SequenceBatch valid_set = gen_toy_binary(4, 6, 3, 361);

    auto fresh_model = [] {
        ModelConfig mc;
        mc.variant = "DMM";
        mc.latent_dim = 2;
        mc.obs_dim = 3;
        mc.trans_hidden = 8;
        mc.emis_hidden = 8;
        Rng mr = spawn_stream(362, "model-init");
        return GenerativeModel::make(mc, mr);
    };
    auto fresh_net = [] {
        InfConfig ic;
        ic.variant = "DKS";
        ic.latent_dim = 2;
        ic.obs_dim = 3;
        ic.rnn_dim = 8;
        Rng nr = spawn_stream(362, "net-init");
        return InferenceNetwork::make(ic, nr);
    };
    TrainConfig base;
    base.batch_size = 4;
    base.epochs = 50;
    base.lr = 0.005;
    base.anneal_horizon = 50;
    base.seed = 363;
    base.patience = 50;

    auto snapshot = [](const GenerativeModel& m, const InferenceNetwork& n) {
        return m.params().to_json().dump() + "|" + n.params().to_json().dump();
    };

    // Uninterrupted reference: 12 updates in one call.
    TrainConfig cap12 = base;
    cap12.max_updates = 12;
    GenerativeModel m_ref = fresh_model();
    InferenceNetwork n_ref = fresh_net();
    TrainerState st_ref;
    TrainLog log_ref = train(m_ref, n_ref, train_set, valid_set, cap12, &st_ref);
    std::string ref = snapshot(m_ref, n_ref);

    // Same run again from scratch: bitwise identical.
    GenerativeModel m_rep = fresh_model();
    InferenceNetwork n_rep = fresh_net();
    TrainerState st_rep;
    TrainLog log_rep = train(m_rep, n_rep, train_set, valid_set, cap12, &st_rep);
    bool repro_ok = snapshot(m_rep, n_rep) == ref && log_rep.to_csv() == log_ref.to_csv();

    // Pause at 7 updates, round-trip through a checkpoint file, resume for
    // 5 further updates.
    TrainConfig cap7 = base;
    cap7.max_updates = 7;
    GenerativeModel m_cut = fresh_model();
    InferenceNetwork n_cut = fresh_net();
    TrainerState st_cut;
    train(m_cut, n_cut, train_set, valid_set, cap7, &st_cut);

    std::string ckpt =
        (std::filesystem::temp_directory_path() / "dmm-acceptance-resume.json").string();
    checkpoint_save(m_cut, n_cut, st_cut, ckpt);
    Checkpoint loaded = checkpoint_load(ckpt);
    std::filesystem::remove(ckpt);

    train(loaded.model, loaded.net, train_set, valid_set, cap12, &loaded.state);
    bool resume_ok = snapshot(loaded.model, loaded.net) == ref &&
                     loaded.state.update == st_ref.update;

    Outcome out;
    out.pass = repro_ok && resume_ok;
    out.detail = fmt("fresh rerun %s; pause at 7 + 5 resumed updates %s the uninterrupted "
                     "parameters (update counter %lld)",
                     repro_ok ? "bitwise identical" : "DIVERGED",
                     resume_ok ? "bitwise matches" : "DOES NOT match",
                     static_cast<long long>(st_ref.update));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, Outcome (*)()>> criteria = {
        {"A1", run_a1}, {"A2", run_a2}, {"A3", run_a3},  {"A4", run_a4}, {"A5", run_a5},
        {"A6", run_a6}, {"A7", run_a7}, {"A8", run_a8},  {"A9", run_a9}, {"A10", run_a10},
    };

    std::vector<std::string> selected;
    for (int i = 1; i < argc; ++i) selected.emplace_back(argv[i]);
    for (const std::string& s : selected) {
        bool known = false;
        for (const auto& [name, fn] : criteria) known = known || name == s;
        if (!known) {
            std::fprintf(stderr, "unknown criterion '%s' (expected A1..A10)\n", s.c_str());
            return 2;
        }
    }

    bool all_pass = true;
    for (const auto& [name, fn] : criteria) {
        if (!selected.empty() &&
            std::find(selected.begin(), selected.end(), name) == selected.end()) {
            continue;
        }
        Outcome out;
        try {
            out = fn();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        std::printf("%s %s  %s\n", name.c_str(), out.pass ? "PASS" : "FAIL",
                    out.detail.c_str());
        std::fflush(stdout);
        all_pass = all_pass && out.pass;
    }
    return all_pass ? 0 : 1;
}
