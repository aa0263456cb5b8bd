#include <doctest.h>

#include <cmath>

#include "dmm/error.hpp"
#include "dmm/gssm.hpp"
#include "dmm/rng.hpp"

using namespace dmm;

namespace {

GenerativeModel make_dmm(std::size_t latent, std::size_t obs, std::size_t hidden,
                         std::uint64_t seed, std::size_t action_dim = 0) {
    ModelConfig cfg;
    cfg.variant = action_dim > 0 ? "DMM-Actions" : "DMM";
    cfg.latent_dim = latent;
    cfg.obs_dim = obs;
    cfg.action_dim = action_dim;
    cfg.trans_hidden = hidden;
    cfg.emis_hidden = hidden;
    Rng rng = spawn_stream(seed, "init");
    return GenerativeModel::make(cfg, rng);
}

// Saturate the transition gate to exactly 0 or 1 via a huge final-layer bias.
void force_gate(GenerativeModel& m, double bias) {
    Tensor& b = m.params().at("trans.gate.1.b");
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = bias;
}

Tensor randvec(Rng& rng, std::size_t n, double scale) {
    Tensor t({n});
    for (std::size_t i = 0; i < n; ++i) t[i] = scale * draw_normal(rng);
    return t;
}

}  // namespace

TEST_CASE("linear system model: fixed drifting dynamics") {
    GenerativeModel m = GenerativeModel::linear_drift();
    Tape tape;
    Var z0 = tape.constant(Tensor::vec1({0.0}));
    TransitionOut tr = m.transition(tape, z0);
    CHECK(tr.mean.val()[0] == 0.05);
    CHECK(tr.var.val()[0] == 10.0);

    Var z2 = tape.constant(Tensor::vec1({2.0}));
    EmissionOut e = m.emission(tape, z2);
    CHECK_FALSE(e.bernoulli);
    CHECK(e.mean.val()[0] == 1.0);
    CHECK(e.var.val()[0] == 20.0);

    // matrix form agrees with the standalone oracle system
    LinearSystem sys = linear_system_of(m);
    LinearSystem ref = linear_drift_system();
    CHECK(sys.A(0, 0) == ref.A(0, 0));
    CHECK(sys.c[0] == ref.c[0]);
    CHECK(sys.Q(0, 0) == ref.Q(0, 0));
    CHECK(sys.H(0, 0) == ref.H(0, 0));
    CHECK(sys.R(0, 0) == ref.R(0, 0));
    CHECK(sys.mu0[0] == 0.0);
    CHECK(sys.Sigma0(0, 0) == 1.0);
}

TEST_CASE("2-d nonlinear model: transition and emission formulas") {
    GenerativeModel m = GenerativeModel::nonlinear2d(0.0, 0.0);
    Tape tape;
    Var z = tape.constant(Tensor::vec1({1.0, 1.0}));
    TransitionOut tr = m.transition(tape, z);
    // alpha = beta = 0 kills both nonlinear couplings
    CHECK(tr.mean.val()[0] == doctest::Approx(0.2));
    CHECK(tr.mean.val()[1] == doctest::Approx(0.2));
    CHECK(tr.var.val()[0] == 1.0);
    CHECK(tr.var.val()[1] == 1.0);

    EmissionOut e = m.emission(tape, tape.constant(Tensor::vec1({0.0, 0.0})));
    CHECK(e.mean.val()[0] == 0.0);
    CHECK(e.mean.val()[1] == 0.0);
    CHECK(e.var.val()[0] == doctest::Approx(0.1));
    CHECK(e.var.val()[1] == doctest::Approx(0.1));

    // nonzero couplings: mu = [0.2 z0 + tanh(a z1); 0.2 z1 + sin(b z0)]
    GenerativeModel m2 = GenerativeModel::nonlinear2d(0.5, -0.1);
    Tape t2;
    Var z2 = t2.constant(Tensor::vec1({1.5, -0.7}));
    TransitionOut tr2 = m2.transition(t2, z2);
    CHECK(tr2.mean.val()[0] == doctest::Approx(0.2 * 1.5 + std::tanh(0.5 * -0.7)).epsilon(1e-14));
    CHECK(tr2.mean.val()[1] == doctest::Approx(0.2 * -0.7 + std::sin(-0.1 * 1.5)).epsilon(1e-14));

    CHECK(m2.trainable().count("trans.alpha") == 1);
    CHECK(m2.trainable().count("trans.beta") == 1);
    CHECK(m2.trainable().count("trans.var") == 0);
    CHECK(GenerativeModel::linear_drift().trainable().empty());
}

TEST_CASE("gated transition: saturation and identity initialization") {
    GenerativeModel m = make_dmm(3, 4, 8, 42);
    Rng rng = spawn_stream(9, "z");

    SUBCASE("gate forced to 1: mean equals the MLP proposal exactly") {
        force_gate(m, 1e3);
        Tape tape;
        Var z = tape.constant(randvec(rng, 3, 1.0));
        TransitionOut tr = m.transition(tape, z);
        Var input = z;
        Var h = mlp_forward(tape, m.params(), GenerativeModel::kPrefix, "trans.prop", input,
                            {Act::Relu, Act::Identity});
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(tr.mean.val()[i] == h.val()[i]);  // bitwise: gate is exactly 1
        }
    }

    SUBCASE("gate forced to 0 with identity skip: mean equals z exactly") {
        force_gate(m, -1e3);
        Tape tape;
        Tensor zv = randvec(rng, 3, 1.0);
        Var z = tape.constant(zv);
        TransitionOut tr = m.transition(tape, z);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(tr.mean.val()[i] == zv[i]);  // identity skip, zero bias
        }
    }

    SUBCASE("variance strictly positive over wide inputs") {
        for (int trial = 0; trial < 200; ++trial) {
            Tape tape;
            Var z = tape.constant(randvec(rng, 3, 10.0));  // N(0, 100)
            TransitionOut tr = m.transition(tape, z);
            for (std::size_t i = 0; i < 3; ++i) {
                CHECK(tr.var.val()[i] > 0.0);
                CHECK(std::isfinite(tr.mean.val()[i]));
            }
        }
    }
}

TEST_CASE("action-conditioned transition: u feeds the MLPs, not the skip") {
    GenerativeModel m = make_dmm(2, 3, 8, 7, /*action_dim=*/2);
    Rng rng = spawn_stream(3, "za");
    Tape tape;
    Var z = tape.constant(randvec(rng, 2, 1.0));
    Var u = tape.constant(Tensor::vec1({1.0, 0.0}));
    CHECK_THROWS_AS(m.transition(tape, z), ContractViolation);
    TransitionOut tr = m.transition(tape, z, &u);
    CHECK(tr.mean.val().dim(0) == 2);
    CHECK(tr.var.val()[0] > 0.0);

    // with the gate saturated closed, actions cannot move the mean at all
    force_gate(m, -1e3);
    Tape t2;
    Tensor zv = randvec(rng, 2, 1.0);
    Var z2 = t2.constant(zv);
    Var u0 = t2.constant(Tensor::vec1({0.0, 0.0}));
    Var u1 = t2.constant(Tensor::vec1({1.0, 1.0}));
    TransitionOut a = m.transition(t2, z2, &u0);
    TransitionOut b = m.transition(t2, z2, &u1);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(a.mean.val()[i] == zv[i]);
        CHECK(b.mean.val()[i] == zv[i]);
    }

    GenerativeModel plain = make_dmm(2, 3, 8, 7);
    Tape t3;
    Var z3 = t3.constant(randvec(rng, 2, 1.0));
    Var u3 = t3.constant(Tensor::vec1({1.0, 0.0}));
    CHECK_THROWS_AS(plain.transition(t3, z3, &u3), ContractViolation);
}

TEST_CASE("emission: zeroed final layer gives uniform Bernoulli") {
    GenerativeModel m = make_dmm(2, 5, 8, 1);
    Tensor& W = m.params().at("emis.2.W");
    Tensor& b = m.params().at("emis.2.b");
    for (std::size_t i = 0; i < W.numel(); ++i) W[i] = 0.0;
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = 0.0;
    Tape tape;
    EmissionOut e = m.emission(tape, tape.constant(Tensor::vec1({0.3, -0.7})));
    REQUIRE(e.bernoulli);
    const Tensor& p = sigmoid(e.logits).val();
    for (std::size_t d = 0; d < 5; ++d) CHECK(p[d] == 0.5);
}

TEST_CASE("log_emission: closed-form values and masking") {
    SUBCASE("uniform Bernoulli gives D * ln(1/2) for any binary x") {
        GenerativeModel m = make_dmm(2, 4, 8, 1);
        Tensor& W = m.params().at("emis.2.W");
        Tensor& b = m.params().at("emis.2.b");
        for (std::size_t i = 0; i < W.numel(); ++i) W[i] = 0.0;
        for (std::size_t i = 0; i < b.numel(); ++i) b[i] = 0.0;
        Tape tape;
        Var x = tape.constant(Tensor::vec1({1.0, 0.0, 1.0, 1.0}));
        Var mask = tape.constant(Tensor::full({4}, 1.0));
        Var z = tape.constant(Tensor::vec1({0.1, 0.2}));
        Var ll = m.log_emission(tape, x, mask, z);
        CHECK(ll.val().value() == doctest::Approx(4.0 * std::log(0.5)).epsilon(1e-14));
    }

    SUBCASE("standard-normal Gaussian at x=0") {
        GenerativeModel m = GenerativeModel::linear_drift();
        m.params().at("emis.var")[0] = 1.0;
        Tape tape;
        Var x = tape.constant(Tensor::vec1({0.0}));
        Var mask = tape.constant(Tensor::vec1({1.0}));
        Var z = tape.constant(Tensor::vec1({0.0}));
        Var ll = m.log_emission(tape, x, mask, z);
        CHECK(ll.val().value() == doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-12));
    }

    SUBCASE("all-zero mask marginalizes everything") {
        GenerativeModel m = make_dmm(2, 4, 8, 5);
        Tape tape;
        Var x = tape.constant(Tensor::vec1({1.0, 0.0, 1.0, 0.0}));
        Var mask = tape.constant(Tensor({4}));
        Var z = tape.constant(Tensor::vec1({0.1, -0.1}));
        CHECK(m.log_emission(tape, x, mask, z).val().value() == 0.0);
    }

    SUBCASE("full mask equals the sum of per-dimension masks") {
        GenerativeModel m = make_dmm(3, 4, 8, 11);
        Rng rng = spawn_stream(2, "x");
        Tape tape;
        Tensor xv({4});
        for (std::size_t d = 0; d < 4; ++d) xv[d] = draw_uniform(rng) < 0.5 ? 1.0 : 0.0;
        Var x = tape.constant(xv);
        Var z = tape.constant(randvec(rng, 3, 1.0));
        double full = m.log_emission(tape, x, tape.constant(Tensor::full({4}, 1.0)), z)
                          .val().value();
        double parts = 0.0;
        for (std::size_t d = 0; d < 4; ++d) {
            Tensor mask({4});
            mask[d] = 1.0;
            parts += m.log_emission(tape, x, tape.constant(mask), z).val().value();
        }
        CHECK(full == doctest::Approx(parts).epsilon(1e-12));
    }

    SUBCASE("masked entries are bitwise inert, even at absurd magnitudes") {
        GenerativeModel m = GenerativeModel::linear_drift();
        Tensor mask = Tensor::vec1({0.0});
        Tensor z = Tensor::vec1({0.7});
        double base, poked;
        {
            Tape tape;
            base = m.log_emission(tape, tape.constant(Tensor::vec1({3.0})),
                                  tape.constant(mask), tape.constant(z)).val().value();
        }
        {
            Tape tape;
            poked = m.log_emission(tape, tape.constant(Tensor::vec1({-1e308})),
                                   tape.constant(mask), tape.constant(z)).val().value();
        }
        CHECK(base == poked);  // bitwise
        CHECK(base == 0.0);
    }

    SUBCASE("contract violations") {
        GenerativeModel m = make_dmm(2, 3, 8, 1);
        Tape tape;
        Var z = tape.constant(Tensor::vec1({0.0, 0.0}));
        Var mask = tape.constant(Tensor::full({3}, 1.0));
        // non-binary observation for a Bernoulli emitter
        CHECK_THROWS_AS(
            m.log_emission(tape, tape.constant(Tensor::vec1({0.5, 0.0, 1.0})), mask, z),
            ContractViolation);
        // non-binary mask
        CHECK_THROWS_AS(
            m.log_emission(tape, tape.constant(Tensor::vec1({1.0, 0.0, 1.0})),
                           tape.constant(Tensor::vec1({0.5, 1.0, 1.0})), z),
            ContractViolation);
        // masked non-binary value is fine: it is marginalized out
        CHECK_NOTHROW(
            m.log_emission(tape, tape.constant(Tensor::vec1({0.5, 0.0, 1.0})),
                           tape.constant(Tensor::vec1({0.0, 1.0, 1.0})), z));
    }
}

TEST_CASE("log_emission: batched samples give one value per row") {
    GenerativeModel m = make_dmm(2, 3, 8, 3);
    Rng rng = spawn_stream(4, "batch");
    Tape tape;
    Tensor zb({4, 2});
    for (std::size_t i = 0; i < zb.numel(); ++i) zb[i] = draw_normal(rng);
    Var x = tape.constant(Tensor::vec1({1.0, 0.0, 1.0}));
    Var mask = tape.constant(Tensor::full({3}, 1.0));
    Var ll = m.log_emission(tape, x, mask, tape.constant(zb));
    REQUIRE(ll.val().shape() == std::vector<std::size_t>{4});
    // each row matches the rank-1 path bitwise
    for (std::size_t s = 0; s < 4; ++s) {
        Tensor zrow({2}, {zb.at(s, 0), zb.at(s, 1)});
        Tape t2;
        double single = m.log_emission(t2, t2.constant(Tensor::vec1({1.0, 0.0, 1.0})),
                                       t2.constant(Tensor::full({3}, 1.0)),
                                       t2.constant(zrow)).val().value();
        CHECK(ll.val()[s] == doctest::Approx(single).epsilon(1e-14));
    }
}

TEST_CASE("sample_sequence: zero noise collapses to a deterministic path") {
    GenerativeModel m = GenerativeModel::linear_drift();
    m.params().at("trans.var")[0] = 0.0;
    m.params().at("emis.var")[0] = 0.0;
    m.set_prior(Tensor::vec1({0.0}), Tensor::vec1({0.0}));
    Rng rng = spawn_stream(1, "s");
    auto [z, x] = m.sample_sequence(5, nullptr, rng);
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(z.at(t, 0) == doctest::Approx(0.05 * static_cast<double>(t)).epsilon(1e-12));
        CHECK(x.at(t, 0) == doctest::Approx(0.5 * z.at(t, 0)).epsilon(1e-12));
    }
}

TEST_CASE("sample_sequence: seed determinism and Monte-Carlo drift moment") {
    GenerativeModel m = GenerativeModel::linear_drift();
    {
        Rng r1 = spawn_stream(33, "a");
        Rng r2 = spawn_stream(33, "a");
        auto [z1, x1] = m.sample_sequence(10, nullptr, r1);
        auto [z2, x2] = m.sample_sequence(10, nullptr, r2);
        for (std::size_t i = 0; i < z1.numel(); ++i) CHECK(z1[i] == z2[i]);
        for (std::size_t i = 0; i < x1.numel(); ++i) CHECK(x1[i] == x2[i]);
    }

    // with z_1 pinned at 0, the mean of z_2 is the drift step 0.05
    m.set_prior(Tensor::vec1({0.0}), Tensor::vec1({0.0}));
    Rng rng = spawn_stream(101, "mc");
    const int n = 100000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        auto [z, x] = m.sample_sequence(2, nullptr, rng);
        acc += z.at(1, 0);
    }
    double mean = acc / n;
    double tol = 3.0 * std::sqrt(10.0) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mean - 0.05) < tol);
}

TEST_CASE("sample_sequence: binary emissions from the deep model") {
    GenerativeModel m = make_dmm(2, 6, 8, 12);
    Rng rng = spawn_stream(8, "bin");
    auto [z, x] = m.sample_sequence(7, nullptr, rng);
    CHECK(z.shape() == std::vector<std::size_t>{7, 2});
    CHECK(x.shape() == std::vector<std::size_t>{7, 6});
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK((x[i] == 0.0 || x[i] == 1.0));
    CHECK(z.all_finite());
    CHECK_THROWS_AS(m.sample_sequence(0, nullptr, rng), ContractViolation);

    GenerativeModel ma = make_dmm(2, 3, 8, 5, /*action_dim=*/2);
    CHECK_THROWS_AS(ma.sample_sequence(4, nullptr, rng), ContractViolation);
    Tensor u({4, 2});
    u.at(1, 0) = 1.0;
    auto [za, xa] = ma.sample_sequence(4, &u, rng);
    CHECK(za.shape() == std::vector<std::size_t>{4, 2});
}

TEST_CASE("model json round trip preserves everything") {
    GenerativeModel m = make_dmm(3, 5, 8, 77, /*action_dim=*/2);
    force_gate(m, 2.5);
    auto j = m.to_json();
    GenerativeModel back = GenerativeModel::from_json(j);
    CHECK(back.config().variant == "DMM-Actions");
    CHECK(back.config().latent_dim == 3);
    CHECK(back.params().names() == m.params().names());
    for (const auto& name : m.params().names()) {
        const Tensor& a = m.params().at(name);
        const Tensor& b = back.params().at(name);
        REQUIRE(a.same_shape(b));
        for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
    }
    CHECK(back.trainable() == m.trainable());

    // same inputs -> same transition outputs, bitwise
    Tape t1, t2;
    Rng rng = spawn_stream(6, "z");
    Tensor zv = randvec(rng, 3, 1.0);
    Tensor uv = Tensor::vec1({1.0, 0.0});
    Var u1 = t1.constant(uv), u2 = t2.constant(uv);
    Var z1 = t1.constant(zv), z2 = t2.constant(zv);
    TransitionOut o1 = m.transition(t1, z1, &u1);
    TransitionOut o2 = back.transition(t2, z2, &u2);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(o1.mean.val()[i] == o2.mean.val()[i]);
        CHECK(o1.var.val()[i] == o2.var.val()[i]);
    }

    auto bad = j;
    bad["config"]["variant"] = "DMM";  // params no longer match the layout
    CHECK_THROWS_AS(GenerativeModel::from_json(bad), SchemaError);
    CHECK_THROWS_AS(linear_system_of(m), ContractViolation);
}
