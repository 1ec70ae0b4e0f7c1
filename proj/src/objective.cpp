// SPDX-License-Identifier: Apache-2.0
#include "effortvae/objective.hpp"

#include <cmath>

#include "effortvae/error.hpp"

namespace effortvae {

using diff::Matrix;
using diff::Var;
using diff::concat_rows;

double kl_gaussian(const GaussianPosterior& p) {
    const auto& lv = p.log_variance.array();
    return 0.5 * (p.mean.array().square() + lv.exp() - 1.0 - lv).sum();
}

double default_alpha(std::size_t n_unlabeled, std::size_t n_labeled) {
    if (n_labeled == 0) throw PreconditionError("default alpha needs labeled data");
    return 0.1 * static_cast<double>(n_unlabeled) / static_cast<double>(n_labeled);
}

LossNoise LossNoise::draw(const ModelConfig& config, std::size_t n_labeled, std::size_t n_unlabeled, RngStream& rng) {
    auto fill = [&](std::size_t cols) {
        Matrix m(config.latent_dim, static_cast<Eigen::Index>(cols));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.normal();
        return m;
    };
    LossNoise n;
    n.labeled = fill(n_labeled);
    if (n_unlabeled > 0)
        for (int y = 0; y < config.classes; ++y) n.unlabeled.push_back(fill(n_unlabeled));
    return n;
}

void to_json(nlohmann::json& j, const LossReport& r) {
    j = {{"total", r.total},
         {"labeled", r.labeled_term},
         {"unlabeled", r.unlabeled_term},
         {"class_term", r.classification_term},
         {"alpha", r.alpha},
         {"n_labeled", r.n_labeled},
         {"n_unlabeled", r.n_unlabeled},
         {"reconstruction", r.breakdown.reconstruction},
         {"kl", r.breakdown.kl},
         {"entropy", r.breakdown.entropy},
         {"prior", r.breakdown.prior}};
}

namespace {

struct BoundTerms {
    Var recon;  // 1 x B
    Var kl;     // 1 x B
    Var loss;   // 1 x B, L(x, y)
};

// `inputs` feed the encoder (standardized); `frames` are the raw targets.
BoundTerms labeled_bound(Model::Binder& bind, const Model& model, const std::vector<Var>& inputs,
                         const std::vector<Var>& frames, const Var* state, Var label, const Matrix& noise) {
    const ModelConfig& c = model.config();
    diff::Tape& tape = bind.tape();
    const Var h = state ? *state : model.encoder_state(bind, inputs, &label);
    const Model::Heads heads = model.encoder_heads(bind, h, label);
    const Var z = Model::reparameterize(heads.mean, heads.log_variance, tape.constant(noise));
    const std::vector<Var> out = model.decoder(bind, z, label);

    Var sq{};
    for (std::size_t t = 0; t < out.size(); ++t) {
        const Var e = col_sums(square(sub(out[t], frames[t])));
        sq = t == 0 ? e : add(sq, e);
    }
    const double norm = 1.0 / (static_cast<double>(c.window) * c.joints * c.decoder_variance);
    BoundTerms terms;
    terms.recon = scale(sq, norm);
    const Var inner = add_scalar(sub(add(square(heads.mean), exp(heads.log_variance)), heads.log_variance), -1.0);
    terms.kl = scale(col_sums(inner), 0.5);
    terms.loss = add_scalar(add(terms.recon, terms.kl), std::log(static_cast<double>(c.classes)));
    return terms;
}

std::vector<Var> constants(diff::Tape& tape, const std::vector<Matrix>& ms) {
    std::vector<Var> v;
    v.reserve(ms.size());
    for (const auto& m : ms) v.push_back(tape.constant(m));
    return v;
}

}  // namespace

LossGraph build_total_loss(Model::Binder& bind, const Model& model, std::span<const LabeledExample> labeled,
                           std::span<const Sequence* const> unlabeled, double alpha, const LossNoise& noise) {
    if (labeled.empty() && unlabeled.empty()) throw PreconditionError("total_loss: both batches are empty");
    if (!(alpha >= 0.0)) throw PreconditionError("total_loss: alpha must be >= 0");
    const ModelConfig& c = model.config();
    diff::Tape& tape = bind.tape();
    const double log_k = std::log(static_cast<double>(c.classes));

    LossGraph g;
    LossReport& r = g.report;
    r.alpha = alpha;
    r.n_labeled = labeled.size();
    r.n_unlabeled = unlabeled.size();
    bool have_total = false;
    auto accumulate = [&](Var term) {
        g.total = have_total ? add(g.total, term) : term;
        have_total = true;
    };

    if (!labeled.empty()) {
        std::vector<const Sequence*> xs;
        std::vector<int> ys;
        for (const auto& ex : labeled) {
            model.check_label(ex.y);
            xs.push_back(ex.x);
            ys.push_back(ex.y);
        }
        if (noise.labeled.cols() != static_cast<Eigen::Index>(xs.size()))
            throw PreconditionError("total_loss: labeled noise has the wrong shape");
        const SequenceBatch batch = model.batch(xs);
        const std::vector<Var> frames = constants(tape, batch.frames);
        const std::vector<Var> inputs = model.standardization().is_identity() ? frames : constants(tape, batch.inputs);
        const Matrix onehot = one_hot(ys, c.classes);
        const Var label = tape.constant(onehot);

        const BoundTerms terms = labeled_bound(bind, model, inputs, frames, nullptr, label, noise.labeled);
        const Var labeled_sum = sum(terms.loss);

        const Var log_q = log_softmax_cols(model.classifier_logits(bind, tape.constant(batch.flat)));
        const Var ce = scale(sum(mul(log_q, label)), -1.0 / static_cast<double>(xs.size()));

        accumulate(labeled_sum);
        accumulate(scale(ce, alpha));
        r.labeled_term = labeled_sum.scalar();
        r.classification_term = ce.scalar();
        r.breakdown.reconstruction += terms.recon.value().sum();
        r.breakdown.kl += terms.kl.value().sum();
    }

    if (!unlabeled.empty()) {
        if (noise.unlabeled.size() != static_cast<std::size_t>(c.classes))
            throw PreconditionError("total_loss: unlabeled noise needs one matrix per class");
        const auto B = static_cast<Eigen::Index>(unlabeled.size());
        const SequenceBatch batch = model.batch(unlabeled);
        const std::vector<Var> frames = constants(tape, batch.frames);
        const std::vector<Var> inputs = model.standardization().is_identity() ? frames : constants(tape, batch.inputs);

        const Var log_q = log_softmax_cols(model.classifier_logits(bind, tape.constant(batch.flat)));
        const Var q = exp(log_q);

        Var shared_state{};
        if (!c.per_frame_label) shared_state = model.encoder_state(bind, inputs, nullptr);

        std::vector<Var> losses, recons, kls;
        for (int y = 0; y < c.classes; ++y) {
            if (noise.unlabeled[static_cast<std::size_t>(y)].cols() != B)
                throw PreconditionError("total_loss: unlabeled noise has the wrong shape");
            Matrix onehot = Matrix::Zero(c.classes, B);
            onehot.row(y).setOnes();
            const Var label = tape.constant(onehot);
            const BoundTerms terms = labeled_bound(bind, model, inputs, frames, c.per_frame_label ? nullptr : &shared_state,
                                                   label, noise.unlabeled[static_cast<std::size_t>(y)]);
            losses.push_back(terms.loss);
            recons.push_back(terms.recon);
            kls.push_back(terms.kl);
        }
        const Var by_label = concat_rows(losses);  // k x B
        const Var expected = col_sums(mul(q, by_label));
        const Var neg_entropy = col_sums(mul(q, log_q));
        const Var unlabeled_sum = sum(add(expected, neg_entropy));
        accumulate(unlabeled_sum);
        r.unlabeled_term = unlabeled_sum.scalar();

        const Matrix& qv = q.value();
        for (int y = 0; y < c.classes; ++y) {
            r.breakdown.reconstruction += qv.row(y).dot(recons[static_cast<std::size_t>(y)].value().row(0));
            r.breakdown.kl += qv.row(y).dot(kls[static_cast<std::size_t>(y)].value().row(0));
        }
        r.breakdown.entropy = -neg_entropy.value().sum();
    }

    r.breakdown.prior = static_cast<double>(r.n_labeled + r.n_unlabeled) * log_k;
    r.total = g.total.scalar();
    return g;
}

LossReport total_loss(const Model& model, std::span<const LabeledExample> labeled,
                      std::span<const Sequence* const> unlabeled, double alpha, RngStream& rng) {
    const LossNoise noise = LossNoise::draw(model.config(), labeled.size(), unlabeled.size(), rng);
    diff::Tape tape;
    Model::Binder bind(tape, model.params());
    return build_total_loss(bind, model, labeled, unlabeled, alpha, noise).report;
}

double labeled_elbo_loss(const Model& model, const Sequence& x, int y, const Eigen::VectorXd& noise) {
    model.check_sequence(x);
    LossNoise n;
    n.labeled = noise;
    const LabeledExample ex{&x, y};
    diff::Tape tape;
    Model::Binder bind(tape, model.params());
    return build_total_loss(bind, model, std::span<const LabeledExample>(&ex, 1), {}, 0.0, n).report.labeled_term;
}

double labeled_elbo_loss(const Model& model, const Sequence& x, int y, RngStream& rng) {
    Eigen::VectorXd noise(model.config().latent_dim);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
    return labeled_elbo_loss(model, x, y, noise);
}

double unlabeled_loss(const Model& model, const Sequence& x, const std::vector<Eigen::VectorXd>& noise) {
    model.check_sequence(x);
    LossNoise n;
    n.labeled = Matrix(model.config().latent_dim, 0);
    for (const auto& v : noise) n.unlabeled.emplace_back(v);
    const Sequence* p = &x;
    diff::Tape tape;
    Model::Binder bind(tape, model.params());
    return build_total_loss(bind, model, {}, std::span<const Sequence* const>(&p, 1), 0.0, n).report.unlabeled_term;
}

double unlabeled_loss(const Model& model, const Sequence& x, RngStream& rng) {
    std::vector<Eigen::VectorXd> noise(static_cast<std::size_t>(model.config().classes));
    for (auto& v : noise) {
        v.resize(model.config().latent_dim);
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    }
    return unlabeled_loss(model, x, noise);
}

double reconstruction_error(const Sequence& x, const Sequence& reconstruction, double decoder_variance) {
    if (x.length() != reconstruction.length() || x.joint_count() != reconstruction.joint_count())
        throw PreconditionError("reconstruction_error: shape mismatch");
    double s = 0.0;
    for (std::size_t t = 0; t < x.length(); ++t)
        for (std::size_t j = 0; j < x.joint_count(); ++j)
            for (int a = 0; a < 3; ++a) {
                const double d = x.poses[t].joints[j][a] - reconstruction.poses[t].joints[j][a];
                s += d * d;
            }
    return s / (static_cast<double>(x.length() * x.joint_count()) * decoder_variance);
}

}  // namespace effortvae
