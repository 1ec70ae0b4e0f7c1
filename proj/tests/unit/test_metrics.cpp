// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "effortvae/error.hpp"
#include "effortvae/metrics.hpp"
#include "helpers.hpp"

using namespace effortvae;
using effortvae::testing::random_sequence;

namespace {

Sequence still(std::size_t T, std::vector<Vec3> joints) {
    Sequence s;
    s.poses.assign(T, Pose{std::move(joints)});
    return s;
}

}  // namespace

TEST_CASE("ajd: hand values") {
    const Sequence a = still(4, {{0, 0, 0}, {1, 1, 1}});
    const Sequence b = still(4, {{3, 4, 0}, {1, 1, 1}});
    CHECK(ajd(a, b) == doctest::Approx(2.5));
    CHECK(ajd(a, a) == 0.0);
    std::vector<Sequence> xs{a, a}, ys{b, a};
    CHECK(ajd(xs, ys) == doctest::Approx(1.25));
    CHECK_THROWS_AS(ajd(a, still(3, {{0, 0, 0}, {1, 1, 1}})), PreconditionError);
}

TEST_CASE("ajd: pseudometric on random triples") {
    RngStream rng(1);
    for (int i = 0; i < 200; ++i) {
        const Sequence x = random_sequence(6, 4, rng), y = random_sequence(6, 4, rng), z = random_sequence(6, 4, rng);
        CHECK(ajd(x, y) >= 0.0);
        CHECK(ajd(x, x) == 0.0);
        CHECK(std::abs(ajd(x, y) - ajd(y, x)) <= 1e-12);
        CHECK(ajd(x, z) <= ajd(x, y) + ajd(y, z) + 1e-12);
    }
}

TEST_CASE("danceability: each proxy trips on its own") {
    const std::vector<Edge> skel{{0, 1}};
    Sequence ok = still(5, {{0.4, 0.4, 0.4}, {0.5, 0.4, 0.4}});
    DanceabilityThresholds t;
    CHECK(danceability(std::vector<Sequence>{ok}, skel, t).pass_rate == 1.0);

    Sequence stretch = ok;
    stretch.poses[2].joints[1] = {0.7, 0.4, 0.4};
    const auto r1 = danceability(std::vector<Sequence>{stretch}, skel, t);
    CHECK_FALSE(r1.sequences[0].bone_length_stable);
    CHECK_FALSE(r1.sequences[0].velocity_continuous);
    CHECK(r1.sequences[0].within_box);

    Sequence jump = ok;
    for (std::size_t tt = 3; tt < 5; ++tt)
        for (auto& j : jump.poses[tt].joints) j[2] += 0.3;
    const auto r2 = danceability(std::vector<Sequence>{jump}, skel, t);
    CHECK(r2.sequences[0].bone_length_stable);
    CHECK_FALSE(r2.sequences[0].velocity_continuous);

    Sequence out = ok;
    for (auto& p : out.poses)
        for (auto& j : p.joints) j[0] += 0.9;
    const auto r3 = danceability(std::vector<Sequence>{out}, skel, t);
    CHECK_FALSE(r3.sequences[0].within_box);
    CHECK(r3.sequences[0].velocity_continuous);

    const auto all = danceability(std::vector<Sequence>{ok, jump, out, ok}, skel, t);
    CHECK(all.passed == 2);
    CHECK(all.pass_rate == doctest::Approx(0.5));
    CHECK(danceability(std::vector<Sequence>{}, skel, t).pass_rate == 0.0);
    CHECK_THROWS_AS(danceability(std::vector<Sequence>{ok}, std::vector<Edge>{{0, 5}}, t), PreconditionError);
}

TEST_CASE("danceability: calibration passes the reference set") {
    RngStream rng(2);
    std::vector<Sequence> ref;
    for (int i = 0; i < 50; ++i) {
        Sequence s = still(10, {{0.5, 0.5, 0.5}, {0.6, 0.5, 0.5}});
        for (std::size_t t = 0; t < 10; ++t) {
            const double dx = 0.05 * std::sin(0.7 * static_cast<double>(t) + rng.uniform(0.0, 6.0));
            for (auto& j : s.poses[t].joints) j[1] += dx;
        }
        ref.push_back(s);
    }
    const std::vector<Edge> skel{{0, 1}};
    const DanceabilityThresholds t = calibrate_danceability(ref, skel);
    CHECK(t.bone_rel_std >= 0.05);
    CHECK(danceability(ref, skel, t).pass_rate == 1.0);
}

TEST_CASE("confusion matrix") {
    const std::vector<int> truth{0, 1, 2, 2, 1, 0};
    const ConfusionMatrix id = confusion_matrix(truth, truth, 3);
    CHECK(id.accuracy() == 1.0);
    CHECK(id.normalized().isApprox(Eigen::MatrixXd::Identity(3, 3)));

    const std::vector<int> pred{0, 2, 2, 1, 1, 1};
    const ConfusionMatrix c = confusion_matrix(truth, pred, 3);
    CHECK(c.accuracy() == doctest::Approx(3.0 / 6.0));
    const Eigen::MatrixXd n = c.normalized();
    for (int r = 0; r < 3; ++r) CHECK(std::abs(n.row(r).sum() - 1.0) < 1e-12);
    CHECK(c.to_csv().find('\n') != std::string::npos);

    const std::vector<int> partial{0, 0};
    const ConfusionMatrix e = confusion_matrix(partial, partial, 3);
    CHECK(e.normalized().row(2).isZero());
    CHECK_THROWS_AS(confusion_matrix(truth, partial, 3), PreconditionError);
}

TEST_CASE("confusion: uniform random predictions sit at chance") {
    RngStream rng(3);
    std::vector<int> truth, pred;
    for (int i = 0; i < 30000; ++i) {
        truth.push_back(static_cast<int>(rng.below(3)));
        pred.push_back(static_cast<int>(rng.below(3)));
    }
    CHECK(std::abs(confusion_matrix(truth, pred, 3).accuracy() - 1.0 / 3.0) < 0.01);
}

TEST_CASE("effort recovery uses the oracle per intended class") {
    const std::vector<std::vector<Sequence>> gen{{still(2, {{0, 0, 0}})}, {still(2, {{1, 0, 0}}), still(2, {{0, 0, 0}})}};
    const ConfusionMatrix r = effort_recovery(gen, [](const Sequence& s) { return s.poses[0].joints[0][0] > 0.5 ? 1 : 0; });
    CHECK(r.counts(0, 0) == 1);
    CHECK(r.counts(1, 1) == 1);
    CHECK(r.counts(1, 0) == 1);
}
