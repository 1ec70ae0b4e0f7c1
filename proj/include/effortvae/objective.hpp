// SPDX-License-Identifier: Apache-2.0
//
// Semi-supervised bounds:
//
//   L(x, y) = recon(x, decode(z, y)) + KL(q(z|x,y) || N(0, I)) + log k
//   U(x)    = sum_y q(y|x) L(x, y) - H(q(y|x))
//   loss    = sum_labeled L + sum_unlabeled U + alpha * mean_labeled(-log q(y|x))
//
// recon is the squared per-joint distance averaged over joints and frames,
// divided by the decoder variance. log k is the uniform label prior.
#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "effortvae/diff.hpp"
#include "effortvae/model.hpp"
#include "effortvae/rng.hpp"

namespace effortvae {

/// Closed-form KL(N(mean, diag(var)) || N(0, I)).
double kl_gaussian(const GaussianPosterior& posterior);

/// alpha = 0.1 * n_unlabeled / n_labeled.
double default_alpha(std::size_t n_unlabeled, std::size_t n_labeled);

struct LabeledExample {
    const Sequence* x = nullptr;
    int y = 0;
};

/// Noise for one loss evaluation: labeled (latent x n_l), and one
/// (latent x n_u) matrix per candidate label for the unlabeled pass.
struct LossNoise {
    diff::Matrix labeled;
    std::vector<diff::Matrix> unlabeled;

    /// Draw order: labeled columns, then each candidate label's columns.
    static LossNoise draw(const ModelConfig& config, std::size_t n_labeled, std::size_t n_unlabeled, RngStream& rng);
};

struct LossBreakdown {
    double reconstruction = 0.0;  // labeled + q-weighted unlabeled
    double kl = 0.0;              // labeled + q-weighted unlabeled
    double entropy = 0.0;         // sum of H(q(y|x)) over unlabeled
    double prior = 0.0;           // (n_l + n_u) log k
};

struct LossReport {
    double total = 0.0;
    double labeled_term = 0.0;
    double unlabeled_term = 0.0;
    /// Mean cross-entropy over labeled examples (before alpha).
    double classification_term = 0.0;
    double alpha = 0.0;
    std::size_t n_labeled = 0;
    std::size_t n_unlabeled = 0;
    LossBreakdown breakdown;
};

void to_json(nlohmann::json& j, const LossReport& r);

/// Graph of the total loss, for training.
struct LossGraph {
    diff::Var total;
    LossReport report;
};

/// Builds the loss on `bind`'s tape. Throws PreconditionError when both
/// batches are empty or alpha < 0.
LossGraph build_total_loss(Model::Binder& bind, const Model& model, std::span<const LabeledExample> labeled,
                           std::span<const Sequence* const> unlabeled, double alpha, const LossNoise& noise);

/// Value-only total loss; noise drawn from `rng` (see LossNoise::draw).
LossReport total_loss(const Model& model, std::span<const LabeledExample> labeled,
                      std::span<const Sequence* const> unlabeled, double alpha, RngStream& rng);

/// L(x, y) with eps drawn from `rng` / given explicitly.
double labeled_elbo_loss(const Model& model, const Sequence& x, int y, RngStream& rng);
double labeled_elbo_loss(const Model& model, const Sequence& x, int y, const Eigen::VectorXd& noise);

/// U(x) with one eps per candidate label.
double unlabeled_loss(const Model& model, const Sequence& x, RngStream& rng);
double unlabeled_loss(const Model& model, const Sequence& x, const std::vector<Eigen::VectorXd>& noise);

/// recon term for a given reconstruction under `config`'s decoder variance.
double reconstruction_error(const Sequence& x, const Sequence& reconstruction, double decoder_variance);

}  // namespace effortvae
