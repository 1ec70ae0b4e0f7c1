// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/LU>

#include "effortvae/error.hpp"
#include "effortvae/generator.hpp"
#include "effortvae/metrics.hpp"
#include "helpers.hpp"

using namespace effortvae;
using effortvae::testing::random_sequence;
using effortvae::testing::scratch_dir;

namespace {

std::vector<std::vector<Eigen::VectorXd>> cloud(int classes, int n, int dim, RngStream& rng) {
    std::vector<std::vector<Eigen::VectorXd>> out(classes);
    for (int y = 0; y < classes; ++y)
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd z(dim);
            for (int d = 0; d < dim; ++d) z[d] = 3.0 * y + (d + 1) * rng.normal() + 0.5 * (d ? z[0] : 0.0);
            out[y].push_back(z);
        }
    return out;
}

ModelConfig tiny() {
    ModelConfig c = ModelConfig::desk();
    c.window = 5;
    c.joints = 2;
    c.latent_dim = 3;
    c.encoder_width = c.decoder_width = 4;
    c.classifier_widths = {4};
    return c;
}

}  // namespace

TEST_CASE("atlas: Gaussian fit matches the sample moments") {
    RngStream rng(1);
    const auto latents = cloud(2, 40, 3, rng);
    const LatentAtlas a = LatentAtlas::fit(latents);
    REQUIRE(a.classes() == 2);
    REQUIRE(a.latent_dim() == 3);
    for (int y = 0; y < 2; ++y) {
        Eigen::MatrixXd X(3, 40);
        for (int i = 0; i < 40; ++i) X.col(i) = latents[y][i];
        const Eigen::VectorXd mu = X.rowwise().mean();
        const Eigen::MatrixXd C = X.colwise() - mu;
        const Eigen::MatrixXd cov = C * C.transpose() / 39.0 + 1e-4 * Eigen::MatrixXd::Identity(3, 3);
        CHECK(a.density(y).count == 40);
        CHECK(a.density(y).mean.isApprox(mu, 1e-12));
        CHECK(a.density(y).covariance.isApprox(cov, 1e-12));

        // log N(z; mu, cov) from the inverse and determinant directly
        const Eigen::VectorXd z = mu + Eigen::Vector3d(0.3, -0.2, 0.1);
        const double expect = -0.5 * ((z - mu).dot(cov.inverse() * (z - mu)) + std::log(cov.determinant()) +
                                      3.0 * std::log(2.0 * std::numbers::pi));
        CHECK(a.log_density(y, z) == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("atlas: draws follow the fitted Gaussian") {
    RngStream rng(2);
    const LatentAtlas a = LatentAtlas::fit(cloud(1, 30, 2, rng));
    const int n = 20000;
    Eigen::MatrixXd S(2, n);
    RngStream draw(3);
    for (int i = 0; i < n; ++i) S.col(i) = a.sample(0, draw);
    const Eigen::VectorXd mu = S.rowwise().mean();
    const Eigen::MatrixXd C = S.colwise() - mu;
    const Eigen::MatrixXd cov = C * C.transpose() / (n - 1.0);
    CHECK((mu - a.density(0).mean).norm() < 0.05);
    CHECK((cov - a.density(0).covariance).norm() / a.density(0).covariance.norm() < 0.05);
}

TEST_CASE("atlas: kde draws stay near stored latents") {
    RngStream rng(4);
    AtlasOptions o;
    o.kind = AtlasKind::Kde;
    o.bandwidth = 0.01;
    const LatentAtlas a = LatentAtlas::fit(cloud(1, 5, 2, rng), o);
    RngStream draw(5);
    for (int i = 0; i < 50; ++i) {
        const Eigen::VectorXd z = a.sample(0, draw);
        double nearest = 1e9;
        for (const auto& l : a.density(0).latents) nearest = std::min(nearest, (l - z).norm());
        CHECK(nearest < 0.1);
    }
}

TEST_CASE("atlas: JSON round trip keeps the hash") {
    RngStream rng(6);
    const LatentAtlas a = LatentAtlas::fit(cloud(3, 6, 2, rng));
    const LatentAtlas b = LatentAtlas::from_json(a.to_json());
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 64);
    CHECK(b.density(2).covariance.isApprox(a.density(2).covariance));
    RngStream other(7);
    CHECK(LatentAtlas::fit(cloud(3, 6, 2, other)).hash() != a.hash());
}

TEST_CASE("atlas: too few latents per class") {
    RngStream rng(8);
    auto latents = cloud(2, 4, 2, rng);
    latents[1].resize(1);
    CHECK_THROWS_AS(LatentAtlas::fit(latents), InsufficientDataError);
    CHECK_THROWS_AS(atlas_kind_from_string("mixture"), ConfigError);
}

TEST_CASE("conditional sampling through a model") {
    Model m(tiny(), 9);
    RngStream rng(10);
    std::vector<Sequence> windows;
    std::vector<int> ys;
    for (int i = 0; i < 12; ++i) {
        windows.push_back(random_sequence(5, 2, rng));
        ys.push_back(i % 3);
    }
    std::vector<const Sequence*> ptrs;
    for (const auto& w : windows) ptrs.push_back(&w);
    const LatentAtlas a = build_atlas(m, ptrs, ys);
    CHECK(a.classes() == 3);
    CHECK(a.density(1).mean.isApprox(
        (m.encode(windows[1], 1).mean + m.encode(windows[4], 1).mean + m.encode(windows[7], 1).mean +
         m.encode(windows[10], 1).mean) / 4.0));

    RngStream r1(11), r2(11);
    const auto s1 = sample_conditional(a, m, 2, 4, r1);
    const auto s2 = sample_conditional(a, m, 2, 4, r2);
    REQUIRE(s1.size() == 4);
    CHECK(s1[0].length() == 5);
    CHECK(s1[0].joint_count() == 2);
    for (std::size_t i = 0; i < 4; ++i) CHECK(ajd(s1[i], s2[i]) == 0.0);
    CHECK_THROWS_AS(sample_conditional(a, m, 3, 1, r1), PreconditionError);

    const auto prior = sample_prior(m, 3, r1, 0);
    CHECK(prior.size() == 3);
}

TEST_CASE("export writes files and a manifest") {
    RngStream rng(12);
    const std::vector<Sequence> seqs{random_sequence(5, 2, rng), random_sequence(5, 2, rng)};
    const GenerationManifest man{2, "High", 99, 2, "aa", "bb"};
    const std::vector<Edge> skel{{0, 1}};
    const auto dir = scratch_dir("export");
    const auto files = export_generated(dir / "csv", seqs, man, "csv", 35.0, skel);
    REQUIRE(files.size() == 3);
    const auto back = load_clips(files[0], ClipFormat::Csv);
    REQUIRE(back.size() == 1);
    CHECK(back[0].frame_count() == 5);
    CHECK(std::abs(back[0].frames[4].joints[1][2] - seqs[0].poses[4].joints[1][2]) < 1e-9);

    std::ifstream in(files.back());
    const auto m = nlohmann::json::parse(in);
    CHECK(m.at("seed").get<std::uint64_t>() == 99);
    CHECK(m.at("label_name") == "High");
    CHECK(m.at("files").size() == 2);

    const auto js = export_generated(dir / "json", seqs, man, "json", 35.0, skel);
    CHECK(load_clips(js[0], ClipFormat::Json).size() == 2);
    CHECK_THROWS_AS(export_generated(dir / "x", seqs, man, "bvh", 35.0, skel), ConfigError);
}
