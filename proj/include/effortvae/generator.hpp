// SPDX-License-Identifier: Apache-2.0
//
// Class-conditional generation. A latent atlas approximates q(z | y) by the
// posterior means of labeled training windows, summarised per class either by
// a full-covariance Gaussian (default) or kept as a kernel density.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "effortvae/model.hpp"
#include "effortvae/rng.hpp"

namespace effortvae {

enum class AtlasKind { Gaussian, Kde };

const char* to_string(AtlasKind k) noexcept;
AtlasKind atlas_kind_from_string(const std::string& name);

struct AtlasOptions {
    AtlasKind kind = AtlasKind::Gaussian;
    /// Added to every class covariance.
    double lambda = 1e-4;
    /// Isotropic noise scale around a stored latent (Kde only).
    double bandwidth = 0.1;
};

struct ClassDensity {
    std::size_t count = 0;
    Eigen::VectorXd mean;
    /// Sample covariance (divisor n - 1) plus lambda * I.
    Eigen::MatrixXd covariance;
    /// Lower Cholesky factor of `covariance`.
    Eigen::MatrixXd cholesky;
    double log_det = 0.0;
    /// Latent means the fit was built from.
    std::vector<Eigen::VectorXd> latents;
};

class LatentAtlas {
public:
    LatentAtlas() = default;

    int classes() const noexcept { return static_cast<int>(densities_.size()); }
    int latent_dim() const noexcept { return latent_dim_; }
    const AtlasOptions& options() const noexcept { return options_; }
    const ClassDensity& density(int y) const;

    /// Gaussian log-density of z under class y's fit.
    double log_density(int y, const Eigen::VectorXd& z) const;

    /// One latent for class y: Gaussian draw, or a stored latent plus noise.
    Eigen::VectorXd sample(int y, RngStream& rng) const;

    /// SHA-256 over the serialized atlas.
    std::string hash() const;

    nlohmann::json to_json() const;
    static LatentAtlas from_json(const nlohmann::json& j);

    /// Fits every class from the given latents. Throws InsufficientDataError
    /// when a class has fewer than two.
    static LatentAtlas fit(const std::vector<std::vector<Eigen::VectorXd>>& latents_per_class,
                           const AtlasOptions& options = {});

private:
    int latent_dim_ = 0;
    AtlasOptions options_;
    std::vector<ClassDensity> densities_;
};

/// Encodes each window with its label and fits the atlas on posterior means.
LatentAtlas build_atlas(const Model& model, std::span<const Sequence* const> windows, std::span<const int> labels,
                        const AtlasOptions& options = {});

/// `count` sequences decoded from class-y atlas draws. Throws PreconditionError
/// for an unknown class.
std::vector<Sequence> sample_conditional(const LatentAtlas& atlas, const Model& model, int y, std::size_t count,
                                         RngStream& rng);

/// z ~ N(0, I); label uniform over classes, or `fixed_label`.
std::vector<Sequence> sample_prior(const Model& model, std::size_t count, RngStream& rng,
                                   std::optional<int> fixed_label = std::nullopt);

struct GenerationManifest {
    int label = 0;
    std::string label_name;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    std::string atlas_hash;
    std::string checkpoint_hash;
};

void to_json(nlohmann::json& j, const GenerationManifest& m);

/// Writes one file per sequence (`gen_<label>_<i>.csv` or a single
/// `generated.json`) plus `manifest.json`. Returns the written paths.
std::vector<std::filesystem::path> export_generated(const std::filesystem::path& dir,
                                                    std::span<const Sequence> sequences,
                                                    const GenerationManifest& manifest, const std::string& format,
                                                    double fps, std::span<const Edge> skeleton);

}  // namespace effortvae
