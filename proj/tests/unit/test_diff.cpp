// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <string>

#include "effortvae/checkpoint.hpp"
#include "effortvae/diff.hpp"
#include "effortvae/error.hpp"
#include "helpers.hpp"

using namespace effortvae;
using namespace effortvae::diff;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

// Every op composed into one scalar, so a single check covers all backward rules.
struct OpFixture {
    ParameterStore params;
    Matrix x;

    OpFixture() {
        RngStream rng(3);
        params.add("a", 4, 3).value = random_matrix(4, 3, rng);
        params.add("b", 4, 3).value = random_matrix(4, 3, rng);
        params.add("w", 5, 4).value = random_matrix(5, 4, rng);
        params.add("c", 5, 1).value = random_matrix(5, 1, rng);
        params.add("r", 1, 3).value = random_matrix(1, 3, rng, 0.5, 1.5);
        params.add("p", 4, 3).value = random_matrix(4, 3, rng, 0.2, 2.0);
        x = random_matrix(4, 3, rng);
    }

    Var build(Tape& t) {
        Var a = t.param(params.at("a")), b = t.param(params.at("b")), w = t.param(params.at("w"));
        Var c = t.param(params.at("c")), r = t.param(params.at("r")), p = t.param(params.at("p"));
        Var h = add_col(matmul(w, tanh(add(a, t.constant(x)))), c);          // 5x3
        Var s = softmax_cols(h);
        Var ls = log_softmax_cols(sub(h, scale(h, 0.3)));
        Var m = mul_row(mul(sigmoid(a), b), r);                             // 4x3
        Var e = exp(scale(clamp(b, -0.5, 0.5), 0.7));
        Var l = log(add_scalar(square(p), 0.1));
        Var stacked = concat_rows({m, e, l});                               // 12x3
        Var part = slice_rows(stacked, 2, 7);
        Var rl = relu(sub(part, t.constant(Matrix::Constant(7, 3, 0.1))));
        return add(add(sum(mul(s, ls)), mean(rl)), sum(col_sums(square(m))));
    }
};

}  // namespace

TEST_CASE("diff: composite of every op passes grad_check") {
    OpFixture f;
    const Objective obj = [&](Tape& t) { return f.build(t); };
    const GradCheckReport r = grad_check(obj, f.params);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-6);
    CHECK(r.tensors.size() == f.params.size());
}

TEST_CASE("diff: grad_check detects a wrong backward rule") {
    ParameterStore params;
    params.add("a", 2, 2).value << 0.3, -0.2, 0.5, 0.9;
    // Wrong on purpose: claims d/da sum(a^2) = a.
    const Objective bad = [&](Tape& t) {
        Var a = t.param(params.at("a"));
        const Matrix v = a.value().array().square().matrix();
        return sum(t.push("bad_square", v, true, [a](Tape& tape, const Matrix& up) {
            tape.accumulate(a.id, (up.array() * a.value().array()).matrix());
        }));
    };
    const GradCheckReport r = grad_check(bad, params);
    CHECK_FALSE(r.passed);
    CHECK(r.failing() == std::vector<std::string>{"a"});
}

TEST_CASE("diff: grad_check tolerates roundoff on a large objective but not a wrong slope") {
    ParameterStore params;
    params.add("a", 1, 3).value << 0.3, -0.2, 0.5;
    // Slopes of 2e-6 under an offset of 5e3: the central difference can only resolve ~1e-7.
    const Matrix offset = Matrix::Constant(1, 3, 5e3 / 3.0);
    const auto objective = [&](double wrong) {
        return Objective([&, wrong](Tape& t) {
            Var a = t.param(params.at("a"));
            Var v = add(t.constant(offset), scale(a, 2e-6));
            if (wrong == 0.0) return sum(v);
            const Matrix value = v.value();
            return sum(t.push("scaled", value, true, [a, wrong](Tape& tape, const Matrix& up) {
                tape.accumulate(a.id, up * (2e-6 * wrong));
            }));
        });
    };
    CHECK(grad_check(objective(0.0), params).passed);
    CHECK_FALSE(grad_check(objective(1.5), params).passed);
}

TEST_CASE("diff: matmul gradient by hand") {
    ParameterStore params;
    params.add("w", 1, 2).value << 2.0, -1.0;
    Matrix x(2, 1);
    x << 3.0, 4.0;
    const double v = grad([&](Tape& t) { return sum(matmul(t.param(params.at("w")), t.constant(x))); }, params);
    CHECK(v == doctest::Approx(2.0));
    CHECK(params.at("w").grad(0, 0) == doctest::Approx(3.0));
    CHECK(params.at("w").grad(0, 1) == doctest::Approx(4.0));
}

TEST_CASE("diff: non-finite output names the op") {
    Tape t;
    Var z = t.constant(Matrix::Zero(1, 1));
    try {
        log(z);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("log") != std::string::npos);
    }
    CHECK_THROWS_AS(exp(t.constant(Matrix::Constant(1, 1, 1000.0))), NumericError);
}

TEST_CASE("diff: softmax columns are distributions") {
    RngStream rng(8);
    Tape t;
    const Var s = softmax_cols(t.constant(random_matrix(4, 50, rng, -30.0, 30.0)));
    for (Eigen::Index j = 0; j < 50; ++j) {
        CHECK(s.value().col(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(s.value().col(j).minCoeff() >= 0.0);
    }
}

TEST_CASE("adam: first step moves each entry by lr against the gradient sign") {
    ParameterStore params;
    params.add("p", 1, 3).value << 1.0, 2.0, 3.0;
    params.at("p").grad << 0.5, -2.0, 0.0;
    AdamState s(params, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    adam_step(s, params);
    CHECK(params.at("p").value(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(params.at("p").value(0, 1) == doctest::Approx(2.1).epsilon(1e-6));
    CHECK(params.at("p").value(0, 2) == doctest::Approx(3.0));
    CHECK(s.step == 1);

    // Second step by hand, starting from the exact first-step value.
    const double p1 = params.at("p").value(0, 0);
    params.at("p").grad << 1.0, 1.0, 1.0;
    const double m = 0.9 * 0.05 + 0.1 * 1.0, v = 0.999 * 0.00025 + 0.001 * 1.0;
    const double expected = p1 - 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
    adam_step(s, params);
    CHECK(params.at("p").value(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adam: non-finite gradient leaves state untouched") {
    ParameterStore params;
    params.add("p", 1, 1).value << 1.0;
    AdamState s(params, AdamConfig{});
    params.at("p").grad(0, 0) = std::nan("");
    CHECK_THROWS_AS(adam_step(s, params), NumericError);
    CHECK(params.at("p").value(0, 0) == 1.0);
    CHECK(s.step == 0);
}

TEST_CASE("sha256 test vectors") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("checkpoint: round trip with optimizer state and stable hash") {
    const auto dir = effortvae::testing::scratch_dir("ckpt");
    RngStream rng(4);
    ParameterStore params;
    params.add("x", 3, 2).value = random_matrix(3, 2, rng);
    params.add("y", 1, 4).value = random_matrix(1, 4, rng);
    AdamState s(params, AdamConfig{});
    for (auto& p : params) p.grad.setConstant(0.25);
    adam_step(s, params);
    const std::string h1 = save_checkpoint(dir / "a", params, &s, {{"note", "x"}});
    const std::string h2 = save_checkpoint(dir / "b", params, &s, {{"note", "y"}});
    CHECK(h1 == h2);
    CHECK(h1 == sha256_file(checkpoint_tensor_path(dir / "a")));
    const Checkpoint ck = load_checkpoint(dir / "a", params);
    CHECK(ck.params.values_equal(params));
    REQUIRE(ck.optimizer);
    CHECK(ck.optimizer->step == 1);
    CHECK(ck.optimizer->first_moment[1] == s.first_moment[1]);
    CHECK(ck.manifest.at("note") == "x");

    ParameterStore other;
    other.add("x", 2, 2);
    CHECK_THROWS(load_checkpoint(dir / "a", other));
}
