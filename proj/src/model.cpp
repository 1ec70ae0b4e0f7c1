// SPDX-License-Identifier: Apache-2.0
#include "effortvae/model.hpp"

#include <cmath>

#include "effortvae/error.hpp"

namespace effortvae {

using diff::Matrix;
using diff::Var;
using diff::concat_rows;

// ---- config -------------------------------------------------------------------

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
    };
    positive(window, "window");
    positive(joints, "joints");
    positive(latent_dim, "latent_dim");
    positive(encoder_layers, "encoder_layers");
    positive(encoder_width, "encoder_width");
    positive(decoder_layers, "decoder_layers");
    positive(decoder_width, "decoder_width");
    if (window < 2) throw ConfigError("model config: window must be >= 2");
    if (classes < 2) throw ConfigError("model config: classes must be >= 2");
    for (int w : classifier_widths) positive(w, "classifier width");
    if (!(decoder_variance > 0.0)) throw ConfigError("model config: decoder_variance must be positive");
    if (!(log_variance_min < log_variance_max)) throw ConfigError("model config: empty log-variance range");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full_scale() {
    ModelConfig c;
    c.window = 40;
    c.joints = 53;
    c.classes = 3;
    c.latent_dim = 256;
    c.encoder_layers = c.decoder_layers = 5;
    c.encoder_width = c.decoder_width = 100;
    c.classifier_widths = {100, 100};
    return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"window", c.window},
         {"joints", c.joints},
         {"classes", c.classes},
         {"latent_dim", c.latent_dim},
         {"encoder_layers", c.encoder_layers},
         {"encoder_width", c.encoder_width},
         {"decoder_layers", c.decoder_layers},
         {"decoder_width", c.decoder_width},
         {"classifier_widths", c.classifier_widths},
         {"decoder_variance", c.decoder_variance},
         {"per_frame_label", c.per_frame_label},
         {"decoder_step_bias", c.decoder_step_bias},
         {"log_variance_min", c.log_variance_min},
         {"log_variance_max", c.log_variance_max}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.window = j.value("window", d.window);
    c.joints = j.value("joints", d.joints);
    c.classes = j.value("classes", d.classes);
    c.latent_dim = j.value("latent_dim", d.latent_dim);
    c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
    c.encoder_width = j.value("encoder_width", d.encoder_width);
    c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
    c.decoder_width = j.value("decoder_width", d.decoder_width);
    c.classifier_widths = j.value("classifier_widths", d.classifier_widths);
    c.decoder_variance = j.value("decoder_variance", d.decoder_variance);
    c.per_frame_label = j.value("per_frame_label", d.per_frame_label);
    c.decoder_step_bias = j.value("decoder_step_bias", d.decoder_step_bias);
    c.log_variance_min = j.value("log_variance_min", d.log_variance_min);
    c.log_variance_max = j.value("log_variance_max", d.log_variance_max);
}

// ---- posteriors ---------------------------------------------------------------

int ClassPosterior::argmax() const {
    Eigen::Index i = 0;
    probabilities.maxCoeff(&i);
    return static_cast<int>(i);
}

double ClassPosterior::entropy() const {
    double h = 0.0;
    for (Eigen::Index i = 0; i < probabilities.size(); ++i) {
        const double q = probabilities[i];
        if (q > 0.0) h -= q * std::log(q);
    }
    return h;
}

// ---- batches ------------------------------------------------------------------

// ---- standardization ----------------------------------------------------------

Standardization Standardization::identity(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

bool Standardization::is_identity() const {
    return (mean.array() == 0.0).all() && (scale.array() == 1.0).all();
}

Standardization fit_standardization(std::span<const Sequence* const> xs, double floor) {
    if (xs.empty()) throw PreconditionError("fit_standardization: no sequences");
    const std::size_t J = xs.front()->joint_count();
    const auto D = static_cast<Eigen::Index>(3 * J);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(D), sq = Eigen::VectorXd::Zero(D);
    double n = 0.0;
    for (const Sequence* s : xs) {
        if (s->joint_count() != J) throw PreconditionError("fit_standardization: joint counts differ");
        for (const Pose& p : s->poses) {
            for (std::size_t j = 0; j < J; ++j)
                for (int a = 0; a < 3; ++a) {
                    const double v = p.joints[j][static_cast<std::size_t>(a)];
                    sum[static_cast<Eigen::Index>(3 * j) + a] += v;
                    sq[static_cast<Eigen::Index>(3 * j) + a] += v * v;
                }
            n += 1.0;
        }
    }
    Standardization out;
    out.mean = sum / n;
    out.scale = (sq / n - out.mean.cwiseProduct(out.mean)).cwiseMax(0.0).cwiseSqrt().cwiseMax(floor);
    return out;
}

void to_json(nlohmann::json& j, const Standardization& s) {
    j = {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
         {"scale", std::vector<double>(s.scale.data(), s.scale.data() + s.scale.size())}};
}

void from_json(const nlohmann::json& j, Standardization& s) {
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto scale = j.at("scale").get<std::vector<double>>();
    s.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
}

// ---- batches ------------------------------------------------------------------

SequenceBatch SequenceBatch::from(std::span<const Sequence* const> sequences, const ModelConfig& config,
                                  const Standardization* standardization) {
    const auto T = static_cast<std::size_t>(config.window);
    const Eigen::Index D = config.input_dim();
    const auto B = static_cast<Eigen::Index>(sequences.size());
    SequenceBatch batch;
    batch.frames.assign(T, Matrix(D, B));
    for (Eigen::Index b = 0; b < B; ++b) {
        const Sequence& s = *sequences[static_cast<std::size_t>(b)];
        if (s.length() != T || s.joint_count() != static_cast<std::size_t>(config.joints)) {
            throw ConfigError("sequence " + s.window_id() + " is " + std::to_string(s.length()) + "x" +
                              std::to_string(s.joint_count()) + ", model expects " + std::to_string(T) + "x" +
                              std::to_string(config.joints));
        }
        for (std::size_t t = 0; t < T; ++t) {
            const auto& joints = s.poses[t].joints;
            for (std::size_t j = 0; j < joints.size(); ++j)
                for (int a = 0; a < 3; ++a) batch.frames[t](static_cast<Eigen::Index>(3 * j) + a, b) = joints[j][a];
        }
    }
    const bool identity = !standardization || standardization->is_identity();
    if (identity) {
        batch.inputs = batch.frames;
    } else {
        if (standardization->mean.size() != D) throw ConfigError("standardization does not match the joint count");
        const Eigen::ArrayXd inv = standardization->scale.array().inverse();
        batch.inputs.reserve(T);
        for (const Matrix& f : batch.frames)
            batch.inputs.push_back(((f.colwise() - standardization->mean).array().colwise() * inv).matrix());
    }
    batch.flat.resize(D * static_cast<Eigen::Index>(T), B);
    for (std::size_t t = 0; t < T; ++t) batch.flat.middleRows(static_cast<Eigen::Index>(t) * D, D) = batch.inputs[t];
    return batch;
}

SequenceBatch SequenceBatch::from(const Sequence& sequence, const ModelConfig& config,
                                  const Standardization* standardization) {
    const Sequence* p = &sequence;
    return from(std::span<const Sequence* const>(&p, 1), config, standardization);
}

Matrix one_hot(std::span<const int> labels, int classes) {
    Matrix m = Matrix::Zero(classes, static_cast<Eigen::Index>(labels.size()));
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] < 0 || labels[b] >= classes) throw PreconditionError("label out of range");
        m(labels[b], static_cast<Eigen::Index>(b)) = 1.0;
    }
    return m;
}

// ---- model --------------------------------------------------------------------

Model::Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    declare_parameters();
    standardization_ = Standardization::identity(config_.input_dim());
}

void Model::set_standardization(Standardization s) {
    if (s.mean.size() != config_.input_dim() || s.scale.size() != config_.input_dim())
        throw ConfigError("standardization has " + std::to_string(s.mean.size()) + " entries, model expects " +
                          std::to_string(config_.input_dim()));
    if (!s.mean.allFinite() || !(s.scale.array() > 0.0).all() || !s.scale.allFinite())
        throw ConfigError("standardization scale must be positive and finite");
    standardization_ = std::move(s);
}

SequenceBatch Model::batch(std::span<const Sequence* const> sequences) const {
    return SequenceBatch::from(sequences, config_, &standardization_);
}

void Model::declare_parameters() {
    const auto& c = config_;
    auto lstm = [&](const std::string& prefix, int layers, int input, int width) {
        for (int l = 0; l < layers; ++l) {
            const std::string p = prefix + ".lstm" + std::to_string(l);
            params_.add(p + ".Wx", 4 * width, l == 0 ? input : width);
            params_.add(p + ".Wh", 4 * width, width);
            params_.add(p + ".b", 4 * width, 1);
        }
    };
    lstm("enc", c.encoder_layers, c.input_dim() + (c.per_frame_label ? c.classes : 0), c.encoder_width);
    params_.add("enc.mean.W", c.latent_dim, c.encoder_width + c.classes);
    params_.add("enc.mean.b", c.latent_dim, 1);
    params_.add("enc.logvar.W", c.latent_dim, c.encoder_width + c.classes);
    params_.add("enc.logvar.b", c.latent_dim, 1);

    int in = c.input_dim() * c.window;
    for (std::size_t i = 0; i < c.classifier_widths.size(); ++i) {
        const std::string p = "cls.fc" + std::to_string(i);
        params_.add(p + ".W", c.classifier_widths[i], in);
        params_.add(p + ".b", c.classifier_widths[i], 1);
        in = c.classifier_widths[i];
    }
    params_.add("cls.out.W", c.classes, in);
    params_.add("cls.out.b", c.classes, 1);

    params_.add("dec.in.W", c.decoder_width, c.latent_dim + c.classes);
    params_.add("dec.in.b", c.decoder_width, 1);
    lstm("dec", c.decoder_layers, c.decoder_width, c.decoder_width);
    if (c.decoder_step_bias) params_.add("dec.step_bias", 4 * c.decoder_width * c.window, 1);
    params_.add("dec.out.W", c.input_dim(), c.decoder_width);
    params_.add("dec.out.b", c.input_dim(), 1);
}

Model Model::zeros(ModelConfig config) { return Model(std::move(config)); }

Model::Model(ModelConfig config, std::uint64_t seed) : Model(std::move(config)) {
    RngStream rng(seed);
    for (auto& p : params_) {
        const std::string& n = p.name;
        const bool is_bias = (n.size() >= 2 && n.compare(n.size() - 2, 2, ".b") == 0) || n == "dec.step_bias";
        if (is_bias) {
            if (n.find(".lstm") != std::string::npos) {
                const Eigen::Index h = p.rows() / 4;
                p.value.middleRows(h, h).setOnes();  // forget gate
            }
            continue;
        }
        Eigen::Index fan_in = p.cols();
        if (n.find(".lstm") != std::string::npos) {
            const std::string base = n.substr(0, n.rfind('.'));
            fan_in = params_.at(base + ".Wx").cols() + params_.at(base + ".Wh").cols();
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (Eigen::Index i = 0; i < p.size(); ++i) p.value.data()[i] = rng.uniform(-bound, bound);
    }
}

Var Model::Binder::operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = mutable_ ? tape_.param(mutable_->at(name)) : tape_.constant(params_.at(name).value);
    bound_.emplace(name, v);
    return v;
}

Var Model::lstm_stack(Binder& bind, const std::string& prefix, int layers, int width, const std::vector<Var>& inputs,
                      bool constant_input, std::vector<Var>* all_states, const Var* step_bias) const {
    diff::Tape& tape = bind.tape();
    const Eigen::Index B = inputs.front().cols();
    std::vector<Var> seq = inputs;
    Var last{};
    for (int l = 0; l < layers; ++l) {
        const std::string p = prefix + ".lstm" + std::to_string(l);
        const Var Wx = bind(p + ".Wx"), Wh = bind(p + ".Wh"), b = bind(p + ".b");
        Var h = tape.constant(Matrix::Zero(width, B));
        Var c = tape.constant(Matrix::Zero(width, B));
        const bool shared = constant_input && l == 0;
        Var shared_proj{};
        if (shared) shared_proj = add_col(matmul(Wx, seq.front()), b);
        std::vector<Var> out;
        out.reserve(seq.size());
        for (std::size_t t = 0; t < seq.size(); ++t) {
            Var pre = shared ? shared_proj : add_col(matmul(Wx, seq[t]), b);
            if (step_bias && l == 0)
                pre = add_col(pre, slice_rows(*step_bias, static_cast<Eigen::Index>(t) * 4 * width, 4 * width));
            Var gates = t == 0 ? pre : add(pre, matmul(Wh, h));
            Var i = sigmoid(slice_rows(gates, 0, width));
            Var f = sigmoid(slice_rows(gates, width, width));
            Var g = tanh(slice_rows(gates, 2 * width, width));
            Var o = sigmoid(slice_rows(gates, 3 * width, width));
            c = t == 0 ? mul(i, g) : add(mul(f, c), mul(i, g));
            h = mul(o, tanh(c));
            out.push_back(h);
        }
        seq = std::move(out);
        last = seq.back();
    }
    if (all_states) *all_states = seq;
    return last;
}

Var Model::encoder_state(Binder& bind, const std::vector<Var>& frames, const Var* label) const {
    if (frames.size() != static_cast<std::size_t>(config_.window)) throw ConfigError("encoder: wrong frame count");
    if (config_.per_frame_label) {
        if (!label) throw PreconditionError("encoder: per-frame label mode needs a label");
        std::vector<Var> inputs;
        inputs.reserve(frames.size());
        for (const Var& x : frames) inputs.push_back(concat_rows({x, *label}));
        return lstm_stack(bind, "enc", config_.encoder_layers, config_.encoder_width, inputs, false, nullptr);
    }
    return lstm_stack(bind, "enc", config_.encoder_layers, config_.encoder_width, frames, false, nullptr);
}

Model::Heads Model::encoder_heads(Binder& bind, Var final_state, Var label) const {
    Var features = concat_rows({final_state, label});
    Var mean = add_col(matmul(bind("enc.mean.W"), features), bind("enc.mean.b"));
    Var logvar = add_col(matmul(bind("enc.logvar.W"), features), bind("enc.logvar.b"));
    logvar = clamp(logvar, config_.log_variance_min, config_.log_variance_max);
    return {mean, logvar};
}

Var Model::classifier_logits(Binder& bind, Var flat) const {
    Var h = flat;
    for (std::size_t i = 0; i < config_.classifier_widths.size(); ++i) {
        const std::string p = "cls.fc" + std::to_string(i);
        h = relu(add_col(matmul(bind(p + ".W"), h), bind(p + ".b")));
    }
    return add_col(matmul(bind("cls.out.W"), h), bind("cls.out.b"));
}

std::vector<Var> Model::decoder(Binder& bind, Var z, Var label) const {
    Var h_dec = tanh(add_col(matmul(bind("dec.in.W"), concat_rows({z, label})), bind("dec.in.b")));
    std::vector<Var> inputs(static_cast<std::size_t>(config_.window), h_dec);
    std::vector<Var> states;
    Var step_bias{};
    if (config_.decoder_step_bias) step_bias = bind("dec.step_bias");
    lstm_stack(bind, "dec", config_.decoder_layers, config_.decoder_width, inputs, true, &states,
               config_.decoder_step_bias ? &step_bias : nullptr);
    const Var W = bind("dec.out.W"), b = bind("dec.out.b");
    const bool identity = standardization_.is_identity();
    Var unscale{}, shift{};
    if (!identity) {
        unscale = bind.tape().constant(standardization_.scale.asDiagonal().toDenseMatrix());
        shift = bind.tape().constant(standardization_.mean);
    }
    std::vector<Var> out;
    out.reserve(states.size());
    for (const Var& h : states) {
        Var y = add_col(matmul(W, h), b);
        out.push_back(identity ? y : add_col(matmul(unscale, y), shift));
    }
    return out;
}

Var Model::reparameterize(Var mean, Var log_variance, Var noise) {
    return add(mean, mul(exp(scale(log_variance, 0.5)), noise));
}

void Model::check_sequence(const Sequence& x) const {
    if (x.length() != static_cast<std::size_t>(config_.window) ||
        x.joint_count() != static_cast<std::size_t>(config_.joints)) {
        throw ConfigError("sequence shape " + std::to_string(x.length()) + "x" + std::to_string(x.joint_count()) +
                          " does not match model " + std::to_string(config_.window) + "x" +
                          std::to_string(config_.joints));
    }
}

void Model::check_label(int y) const {
    if (y < 0 || y >= config_.classes) throw PreconditionError("label " + std::to_string(y) + " out of range");
}

namespace {

std::vector<Var> input_vars(diff::Tape& tape, const SequenceBatch& batch) {
    std::vector<Var> v;
    v.reserve(batch.inputs.size());
    for (const auto& f : batch.inputs) v.push_back(tape.constant(f));
    return v;
}

}  // namespace

std::vector<GaussianPosterior> Model::encode_batch(std::span<const Sequence* const> xs, std::span<const int> ys) const {
    if (xs.size() != ys.size()) throw PreconditionError("encode: sequence and label counts differ");
    for (int y : ys) check_label(y);
    const SequenceBatch batch = this->batch(xs);
    diff::Tape tape;
    Binder bind(tape, params_);
    const Var label = tape.constant(one_hot(ys, config_.classes));
    const Var h = encoder_state(bind, input_vars(tape, batch), &label);
    const Heads heads = encoder_heads(bind, h, label);
    std::vector<GaussianPosterior> out(xs.size());
    for (std::size_t b = 0; b < xs.size(); ++b) {
        out[b].mean = heads.mean.value().col(static_cast<Eigen::Index>(b));
        out[b].log_variance = heads.log_variance.value().col(static_cast<Eigen::Index>(b));
    }
    return out;
}

std::vector<ClassPosterior> Model::classify_batch(std::span<const Sequence* const> xs) const {
    const SequenceBatch batch = this->batch(xs);
    diff::Tape tape;
    Binder bind(tape, params_);
    const Var probs = softmax_cols(classifier_logits(bind, tape.constant(batch.flat)));
    std::vector<ClassPosterior> out(xs.size());
    for (std::size_t b = 0; b < xs.size(); ++b) out[b].probabilities = probs.value().col(static_cast<Eigen::Index>(b));
    return out;
}

std::vector<Sequence> Model::decode_batch(const Matrix& zs, std::span<const int> ys) const {
    if (zs.rows() != config_.latent_dim) throw ConfigError("decode: latent has the wrong dimension");
    if (static_cast<std::size_t>(zs.cols()) != ys.size()) throw PreconditionError("decode: latent and label counts differ");
    for (int y : ys) check_label(y);
    diff::Tape tape;
    Binder bind(tape, params_);
    const auto frames = decoder(bind, tape.constant(zs), tape.constant(one_hot(ys, config_.classes)));
    std::vector<Sequence> out(ys.size());
    const auto J = static_cast<std::size_t>(config_.joints);
    for (std::size_t b = 0; b < ys.size(); ++b) {
        out[b].poses.resize(frames.size());
        for (std::size_t t = 0; t < frames.size(); ++t) {
            const Matrix& m = frames[t].value();
            auto& joints = out[b].poses[t].joints;
            joints.resize(J);
            for (std::size_t j = 0; j < J; ++j)
                for (int a = 0; a < 3; ++a)
                    joints[j][a] = m(static_cast<Eigen::Index>(3 * j) + a, static_cast<Eigen::Index>(b));
        }
    }
    return out;
}

GaussianPosterior Model::encode(const Sequence& x, int y) const {
    check_sequence(x);
    const Sequence* p = &x;
    return encode_batch(std::span<const Sequence* const>(&p, 1), std::span<const int>(&y, 1)).front();
}

ClassPosterior Model::classify(const Sequence& x) const {
    check_sequence(x);
    const Sequence* p = &x;
    return classify_batch(std::span<const Sequence* const>(&p, 1)).front();
}

Sequence Model::decode(const Eigen::VectorXd& z, int y) const {
    if (z.size() != config_.latent_dim) throw ConfigError("decode: latent has the wrong dimension");
    Matrix zs = z;
    return decode_batch(zs, std::span<const int>(&y, 1)).front();
}

// ---- sampling -----------------------------------------------------------------

LatentSample reparameterize(const GaussianPosterior& posterior, const Eigen::VectorXd& noise) {
    if (noise.size() != posterior.mean.size()) throw PreconditionError("reparameterize: noise has the wrong size");
    LatentSample s;
    s.posterior = posterior;
    s.noise = noise;
    s.z = posterior.mean.array() + (0.5 * posterior.log_variance.array()).exp() * noise.array();
    return s;
}

LatentSample reparameterize(const GaussianPosterior& posterior, RngStream& rng) {
    Eigen::VectorXd noise(posterior.mean.size());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
    return reparameterize(posterior, noise);
}

Reconstruction reconstruct(const Model& model, const Sequence& x, int y, RngStream& rng) {
    Reconstruction r;
    r.posterior = model.encode(x, y);
    r.sample = reparameterize(r.posterior, rng);
    r.reconstruction = model.decode(r.sample.z, y);
    r.reconstruction.clip_id = x.clip_id;
    r.reconstruction.start_frame = x.start_frame;
    return r;
}

std::vector<Sequence> reconstruct_batch(const Model& model, std::span<const Sequence* const> xs,
                                        std::span<const int> ys, RngStream& rng) {
    const auto posts = model.encode_batch(xs, ys);
    Matrix zs(model.config().latent_dim, static_cast<Eigen::Index>(xs.size()));
    for (std::size_t b = 0; b < xs.size(); ++b) zs.col(static_cast<Eigen::Index>(b)) = reparameterize(posts[b], rng).z;
    auto out = model.decode_batch(zs, ys);
    for (std::size_t b = 0; b < xs.size(); ++b) {
        out[b].clip_id = xs[b]->clip_id;
        out[b].start_frame = xs[b]->start_frame;
    }
    return out;
}

}  // namespace effortvae
