// SPDX-License-Identifier: Apache-2.0
#include "effortvae/generator.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/Cholesky>

#include "effortvae/checkpoint.hpp"
#include "effortvae/error.hpp"

namespace effortvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd standard_normal(Eigen::Index n, RngStream& rng) {
    Eigen::VectorXd e(n);
    for (Eigen::Index i = 0; i < n; ++i) e[i] = rng.normal();
    return e;
}

ClassDensity fit_class(const std::vector<Eigen::VectorXd>& latents, Eigen::Index dim, double lambda, int y) {
    if (latents.size() < 2)
        throw InsufficientDataError("class " + std::to_string(y) + " has " + std::to_string(latents.size()) +
                                    " labeled windows; the atlas needs at least 2");
    ClassDensity d;
    d.count = latents.size();
    d.latents = latents;
    d.mean = Eigen::VectorXd::Zero(dim);
    for (const auto& z : latents) {
        if (z.size() != dim) throw PreconditionError("atlas: latent dimension mismatch");
        d.mean += z;
    }
    d.mean /= static_cast<double>(d.count);
    d.covariance = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& z : latents) {
        const Eigen::VectorXd c = z - d.mean;
        d.covariance.noalias() += c * c.transpose();
    }
    d.covariance /= static_cast<double>(d.count - 1);
    d.covariance = 0.5 * (d.covariance + d.covariance.transpose());
    d.covariance.diagonal().array() += lambda;
    const Eigen::LLT<Eigen::MatrixXd> llt(d.covariance);
    if (llt.info() != Eigen::Success) throw NumericError("atlas covariance cholesky");
    d.cholesky = llt.matrixL();
    d.log_det = 2.0 * d.cholesky.diagonal().array().log().sum();
    return d;
}

}  // namespace

const char* to_string(AtlasKind k) noexcept { return k == AtlasKind::Gaussian ? "gaussian" : "kde"; }

AtlasKind atlas_kind_from_string(const std::string& name) {
    if (name == "gaussian") return AtlasKind::Gaussian;
    if (name == "kde") return AtlasKind::Kde;
    throw ConfigError("unknown atlas kind '" + name + "' (expected gaussian or kde)");
}

const ClassDensity& LatentAtlas::density(int y) const {
    if (y < 0 || y >= classes()) throw PreconditionError("atlas has no class " + std::to_string(y));
    return densities_[static_cast<std::size_t>(y)];
}

double LatentAtlas::log_density(int y, const Eigen::VectorXd& z) const {
    const ClassDensity& d = density(y);
    if (z.size() != latent_dim_) throw PreconditionError("atlas: latent dimension mismatch");
    const Eigen::VectorXd w = d.cholesky.triangularView<Eigen::Lower>().solve(z - d.mean);
    return -0.5 * (w.squaredNorm() + d.log_det + latent_dim_ * std::log(2.0 * std::numbers::pi));
}

Eigen::VectorXd LatentAtlas::sample(int y, RngStream& rng) const {
    const ClassDensity& d = density(y);
    if (options_.kind == AtlasKind::Kde) {
        const Eigen::VectorXd& base = d.latents[rng.below(d.latents.size())];
        return base + options_.bandwidth * standard_normal(latent_dim_, rng);
    }
    return d.mean + d.cholesky * standard_normal(latent_dim_, rng);
}

json LatentAtlas::to_json() const {
    json classes = json::array();
    for (const auto& d : densities_) {
        json lat = json::array();
        for (const auto& z : d.latents) lat.push_back(vec_json(z));
        classes.push_back({{"count", d.count}, {"latents", std::move(lat)}});
    }
    return {{"latent_dim", latent_dim_},
            {"kind", to_string(options_.kind)},
            {"lambda", options_.lambda},
            {"bandwidth", options_.bandwidth},
            {"classes", std::move(classes)}};
}

LatentAtlas LatentAtlas::from_json(const json& j) {
    AtlasOptions o;
    o.kind = atlas_kind_from_string(j.at("kind").get<std::string>());
    o.lambda = j.at("lambda").get<double>();
    o.bandwidth = j.at("bandwidth").get<double>();
    std::vector<std::vector<Eigen::VectorXd>> per_class;
    for (const auto& c : j.at("classes")) {
        std::vector<Eigen::VectorXd> lat;
        for (const auto& z : c.at("latents")) lat.push_back(vec_from(z));
        per_class.push_back(std::move(lat));
    }
    LatentAtlas a = fit(per_class, o);
    if (a.latent_dim_ != j.at("latent_dim").get<int>()) throw SchemaError("atlas latent dimension mismatch");
    return a;
}

std::string LatentAtlas::hash() const { return sha256_hex(to_json().dump()); }

LatentAtlas LatentAtlas::fit(const std::vector<std::vector<Eigen::VectorXd>>& per_class, const AtlasOptions& options) {
    if (per_class.empty()) throw PreconditionError("atlas: no classes");
    if (!(options.lambda >= 0.0) || !(options.bandwidth >= 0.0)) throw ConfigError("atlas: lambda and bandwidth must be >= 0");
    LatentAtlas a;
    a.options_ = options;
    a.latent_dim_ = -1;
    for (const auto& c : per_class)
        if (!c.empty()) {
            a.latent_dim_ = static_cast<int>(c.front().size());
            break;
        }
    for (std::size_t y = 0; y < per_class.size(); ++y)
        a.densities_.push_back(fit_class(per_class[y], a.latent_dim_, options.lambda, static_cast<int>(y)));
    return a;
}

LatentAtlas build_atlas(const Model& model, std::span<const Sequence* const> windows, std::span<const int> labels,
                        const AtlasOptions& options) {
    if (windows.size() != labels.size()) throw PreconditionError("build_atlas: window and label counts differ");
    std::vector<std::vector<Eigen::VectorXd>> per_class(static_cast<std::size_t>(model.config().classes));
    constexpr std::size_t kChunk = 256;
    for (std::size_t i = 0; i < windows.size(); i += kChunk) {
        const std::size_t n = std::min(kChunk, windows.size() - i);
        const auto posts = model.encode_batch(windows.subspan(i, n), labels.subspan(i, n));
        for (std::size_t b = 0; b < n; ++b) per_class[static_cast<std::size_t>(labels[i + b])].push_back(posts[b].mean);
    }
    return LatentAtlas::fit(per_class, options);
}

std::vector<Sequence> sample_conditional(const LatentAtlas& atlas, const Model& model, int y, std::size_t count,
                                         RngStream& rng) {
    model.check_label(y);
    if (y >= atlas.classes()) throw PreconditionError("atlas has no class " + std::to_string(y));
    if (atlas.latent_dim() != model.config().latent_dim) throw PreconditionError("atlas and model latent sizes differ");
    if (count == 0) return {};
    diff::Matrix zs(model.config().latent_dim, static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i) zs.col(static_cast<Eigen::Index>(i)) = atlas.sample(y, rng);
    const std::vector<int> ys(count, y);
    return model.decode_batch(zs, ys);
}

std::vector<Sequence> sample_prior(const Model& model, std::size_t count, RngStream& rng, std::optional<int> fixed) {
    if (fixed) model.check_label(*fixed);
    if (count == 0) return {};
    const int d = model.config().latent_dim;
    diff::Matrix zs(d, static_cast<Eigen::Index>(count));
    std::vector<int> ys(count);
    for (std::size_t i = 0; i < count; ++i) {
        zs.col(static_cast<Eigen::Index>(i)) = standard_normal(d, rng);
        ys[i] = fixed ? *fixed : static_cast<int>(rng.below(static_cast<std::uint64_t>(model.config().classes)));
    }
    return model.decode_batch(zs, ys);
}

void to_json(json& j, const GenerationManifest& m) {
    j = {{"label", m.label},
         {"label_name", m.label_name},
         {"seed", m.seed},
         {"count", m.count},
         {"atlas_hash", m.atlas_hash},
         {"checkpoint_hash", m.checkpoint_hash}};
}

std::vector<fs::path> export_generated(const fs::path& dir, std::span<const Sequence> sequences,
                                       const GenerationManifest& manifest, const std::string& format, double fps,
                                       std::span<const Edge> skeleton) {
    fs::create_directories(dir);
    std::vector<MotionClip> clips;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        MotionClip c;
        c.id = "gen_" + std::to_string(manifest.label) + "_" + std::to_string(i);
        c.fps = fps;
        c.frames = sequences[i].poses;
        c.skeleton.assign(skeleton.begin(), skeleton.end());
        clips.push_back(std::move(c));
    }
    std::vector<fs::path> written;
    if (format == "json") {
        written.push_back(dir / "generated.json");
        save_clips_json(written.back(), clips);
    } else if (format == "csv") {
        for (const auto& c : clips) {
            written.push_back(dir / (c.id + ".csv"));
            save_clip_csv(written.back(), c);
        }
    } else {
        throw ConfigError("unknown export format '" + format + "' (expected csv or json)");
    }
    json m = manifest;
    json files = json::array();
    for (const auto& p : written) files.push_back(p.filename().string());
    m["files"] = std::move(files);
    written.push_back(dir / "manifest.json");
    std::ofstream out(written.back());
    if (!out) throw ConfigError("cannot write " + written.back().string());
    out << m.dump(2) << '\n';
    return written;
}

}  // namespace effortvae
