// SPDX-License-Identifier: Apache-2.0
//
// Conditional recurrent VAE over pose windows.
//
//   encoder    x_1..x_T -> stacked LSTM -> h_T; [h_T; onehot(y)] -> mean, log-variance
//   classifier flatten(x) -> ReLU dense stack -> softmax over k classes
//   decoder    h_dec = tanh(W [z; onehot(y)] + b), fed T times to a stacked LSTM;
//              a per-step dense head maps hidden states to 3J coordinates
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "effortvae/diff.hpp"
#include "effortvae/motion_data.hpp"
#include "effortvae/rng.hpp"

namespace effortvae {

struct ModelConfig {
    int window = 20;  // T
    int joints = 5;   // J
    int classes = 3;  // k
    int latent_dim = 8;
    int encoder_layers = 1;
    int encoder_width = 32;
    int decoder_layers = 1;
    int decoder_width = 32;
    std::vector<int> classifier_widths{32, 32};
    /// Fixed output variance of p(x | y, z).
    double decoder_variance = 1.0;
    /// Feed onehot(y) into every encoder step instead of only the Gaussian heads.
    bool per_frame_label = false;
    /// Learned per-timestep bias on the first decoder layer's gates. Without it
    /// the decoder sees the same input at every step and must find a limit
    /// cycle to produce periodic motion.
    bool decoder_step_bias = true;
    double log_variance_min = -10.0;
    double log_variance_max = 10.0;

    int input_dim() const noexcept { return 3 * joints; }
    void validate() const;

    /// Small configuration used for tests and synthetic experiments.
    static ModelConfig desk();
    /// 40-frame, 53-joint configuration with 5x100 LSTMs and a 256-d latent space.
    static ModelConfig full_scale();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct GaussianPosterior {
    Eigen::VectorXd mean;
    Eigen::VectorXd log_variance;

    Eigen::VectorXd variance() const { return log_variance.array().exp().matrix(); }
};

struct ClassPosterior {
    Eigen::VectorXd probabilities;

    int argmax() const;
    /// -sum q log q, with 0 log 0 = 0.
    double entropy() const;
};

struct LatentSample {
    Eigen::VectorXd z;
    GaussianPosterior posterior;
    Eigen::VectorXd noise;
};

/// Fixed per-coordinate affine map (3J entries): network inputs are
/// (x - mean) / scale and decoder outputs are mapped back by mean + scale * y,
/// so losses stay in data units. Fitted on training windows; identity by default.
struct Standardization {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    static Standardization identity(Eigen::Index dim);
    bool is_identity() const;
};

/// Per-coordinate mean and standard deviation over every frame of `xs`;
/// deviations below `floor` are raised to it.
Standardization fit_standardization(std::span<const Sequence* const> xs, double floor = 1e-3);

void to_json(nlohmann::json& j, const Standardization& s);
void from_json(const nlohmann::json& j, Standardization& s);

/// Per-timestep batch layout: frames[t] is (3J x B) raw coordinates (the
/// reconstruction target), inputs[t] the standardized copy, and flat the
/// standardized (3J*T x B) classifier input in (frame, joint, xyz) row order.
struct SequenceBatch {
    std::vector<diff::Matrix> frames;
    std::vector<diff::Matrix> inputs;
    diff::Matrix flat;

    std::size_t size() const noexcept { return static_cast<std::size_t>(flat.cols()); }
    static SequenceBatch from(std::span<const Sequence* const> sequences, const struct ModelConfig& config,
                              const Standardization* standardization = nullptr);
    static SequenceBatch from(const Sequence& sequence, const ModelConfig& config,
                              const Standardization* standardization = nullptr);
};

/// (k x B) one-hot columns.
diff::Matrix one_hot(std::span<const int> labels, int classes);

class Model {
public:
    /// Fan-in uniform initialisation; LSTM forget-gate biases start at 1.
    Model(ModelConfig config, std::uint64_t seed);
    /// All parameters zero.
    static Model zeros(ModelConfig config);

    const ModelConfig& config() const noexcept { return config_; }
    diff::ParameterStore& params() noexcept { return params_; }
    const diff::ParameterStore& params() const noexcept { return params_; }

    const Standardization& standardization() const noexcept { return standardization_; }
    /// Throws ConfigError on a size mismatch or a non-positive scale.
    void set_standardization(Standardization s);
    /// SequenceBatch::from with this model's standardization.
    SequenceBatch batch(std::span<const Sequence* const> sequences) const;

    /// Binds parameters to one tape. With a mutable store the leaves receive
    /// gradients; with a const store they are constants.
    class Binder {
    public:
        Binder(diff::Tape& tape, diff::ParameterStore& params) : tape_(tape), mutable_(&params), params_(params) {}
        Binder(diff::Tape& tape, const diff::ParameterStore& params) : tape_(tape), params_(params) {}
        diff::Var operator()(const std::string& name);
        diff::Tape& tape() noexcept { return tape_; }

    private:
        diff::Tape& tape_;
        diff::ParameterStore* mutable_ = nullptr;
        const diff::ParameterStore& params_;
        std::unordered_map<std::string, diff::Var> bound_;
    };

    struct Heads {
        diff::Var mean;
        diff::Var log_variance;
    };

    // ---- graph builders (batch) -----------------------------------------------
    /// Final hidden state h_T of the encoder stack. `label` (k x B) is only used
    /// in per-frame label mode.
    diff::Var encoder_state(Binder& bind, const std::vector<diff::Var>& frames, const diff::Var* label) const;
    Heads encoder_heads(Binder& bind, diff::Var final_state, diff::Var label) const;
    /// Unnormalized class scores (k x B).
    diff::Var classifier_logits(Binder& bind, diff::Var flat) const;
    /// T outputs of (3J x B) in data units.
    std::vector<diff::Var> decoder(Binder& bind, diff::Var z, diff::Var label) const;
    /// z = mean + exp(log_variance / 2) * noise.
    static diff::Var reparameterize(diff::Var mean, diff::Var log_variance, diff::Var noise);

    // ---- single-sequence evaluation -------------------------------------------
    GaussianPosterior encode(const Sequence& x, int y) const;
    ClassPosterior classify(const Sequence& x) const;
    Sequence decode(const Eigen::VectorXd& z, int y) const;

    std::vector<GaussianPosterior> encode_batch(std::span<const Sequence* const> xs, std::span<const int> ys) const;
    std::vector<ClassPosterior> classify_batch(std::span<const Sequence* const> xs) const;
    /// zs is (latent_dim x B).
    std::vector<Sequence> decode_batch(const diff::Matrix& zs, std::span<const int> ys) const;

    void check_sequence(const Sequence& x) const;
    void check_label(int y) const;

private:
    explicit Model(ModelConfig config);
    void declare_parameters();
    diff::Var lstm_stack(Binder& bind, const std::string& prefix, int layers, int width,
                         const std::vector<diff::Var>& inputs, bool constant_input,
                         std::vector<diff::Var>* all_states, const diff::Var* step_bias = nullptr) const;

    ModelConfig config_;
    diff::ParameterStore params_;
    Standardization standardization_;
};

/// z = mean + sqrt(variance) * eps with eps ~ N(0, I) drawn from `rng`.
LatentSample reparameterize(const GaussianPosterior& posterior, RngStream& rng);
/// Same with explicit noise.
LatentSample reparameterize(const GaussianPosterior& posterior, const Eigen::VectorXd& noise);

struct Reconstruction {
    Sequence reconstruction;
    GaussianPosterior posterior;
    LatentSample sample;
};

/// decode(reparameterize(encode(x, y)), y).
Reconstruction reconstruct(const Model& model, const Sequence& x, int y, RngStream& rng);

/// Batched variant; draws noise column by column in batch order.
std::vector<Sequence> reconstruct_batch(const Model& model, std::span<const Sequence* const> xs,
                                        std::span<const int> ys, RngStream& rng);

}  // namespace effortvae
