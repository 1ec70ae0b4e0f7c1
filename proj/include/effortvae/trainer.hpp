// SPDX-License-Identifier: Apache-2.0
//
// Semi-supervised training loop. Every optimisation step draws one labeled and
// one unlabeled batch; an epoch is one pass over the unlabeled training pool
// (or the labeled pool when there is no unlabeled data). All randomness of
// epoch e comes from RngStream(seed).fork(e), so an epoch can be replayed from
// its starting parameters and optimizer state alone.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "effortvae/diff.hpp"
#include "effortvae/label_store.hpp"
#include "effortvae/metrics.hpp"
#include "effortvae/model.hpp"
#include "effortvae/split.hpp"

namespace effortvae {

/// Which epoch's parameters to keep: minimum validation loss ("dance") or
/// maximum validation accuracy ("watch").
enum class SelectionCriterion { Dance, Watch };

const char* to_string(SelectionCriterion c) noexcept;
SelectionCriterion selection_criterion_from_string(const std::string& name);

struct TrainConfig {
    int epochs = 500;
    std::size_t batch_size = 80;
    double learning_rate = 3e-4;
    /// Defaults to 0.1 * n_unlabeled / n_labeled of the training pools.
    std::optional<double> alpha;
    std::uint64_t seed = 0;
    /// Save a checkpoint every n epochs (0: only best and last).
    int checkpoint_every = 0;
    SelectionCriterion criterion = SelectionCriterion::Dance;
    /// Fit the model's input standardization on the training pools before the
    /// first epoch (ignored when resuming).
    bool standardize = true;
    /// Log and checkpoints go here when set.
    std::filesystem::path out_dir;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LabeledSet {
    std::vector<const Sequence*> x;
    std::vector<int> y;

    std::size_t size() const noexcept { return x.size(); }
    bool empty() const noexcept { return x.empty(); }
};

/// Pools referenced by the trainer. Pointers refer into caller-owned windows.
struct TrainData {
    LabeledSet labeled_train;
    LabeledSet labeled_val;
    std::vector<const Sequence*> unlabeled_train;
    std::vector<const Sequence*> unlabeled_val;
    /// When set, every batch is checked against it before use.
    const SplitAssignment* split = nullptr;
};

/// Pools from a split: labeled partitions take their labels from `labels`.
/// Window order follows the split's member lists.
TrainData assemble_train_data(const std::vector<Sequence>& windows, const LabelTable& labels,
                              const SplitAssignment& split);

struct EpochRecord {
    int epoch = 0;  // 1-based
    std::uint64_t step = 0;
    /// Means over the epoch's steps of the per-step totals.
    double total = 0.0;
    double labeled = 0.0;
    double unlabeled = 0.0;
    double class_term = 0.0;
    /// Total validation loss per window, and classifier accuracy on labeled validation.
    double val_loss = 0.0;
    double val_acc = 0.0;
    double learning_rate = 0.0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

/// Called after every optimizer step; tests use it to inject faults.
using StepHook = std::function<void(int epoch, std::uint64_t step, diff::ParameterStore& params)>;

struct TrainState {
    diff::AdamState optimizer;
    int epochs_done = 0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    /// Parameters chosen by the selection criterion (initial parameters when no epoch ran).
    diff::ParameterStore selected;
    int selected_epoch = 0;
    /// State after the last completed epoch, for resuming.
    TrainState state;
    double alpha = 0.0;
    bool aborted = false;
    std::string abort_reason;
    std::vector<std::string> checkpoints;
};

/// Trains `model` in place (the model ends with the last good parameters).
/// Throws PreconditionError when the labeled training pool is empty.
/// A non-finite value rolls the epoch back, halves the learning rate and
/// retries once; a second failure stops training with `aborted` set.
TrainResult train(Model& model, const TrainData& data, const TrainConfig& config,
                  std::optional<TrainState> resume = std::nullopt, const StepHook& hook = {});

struct ValidationResult {
    double loss = 0.0;  // per window
    double accuracy = 0.0;
};

/// Validation loss with a fixed noise stream, and classifier accuracy.
ValidationResult validate(const Model& model, const TrainData& data, double alpha, std::size_t batch_size,
                          std::uint64_t seed);

struct ClassifierEvaluation {
    double accuracy = 0.0;
    ConfusionMatrix confusion;
    std::vector<int> predictions;
};

/// Throws PreconditionError on an empty set.
ClassifierEvaluation evaluate_classifier(const Model& model, const LabeledSet& set, std::size_t batch_size = 256);

/// Writes `<stem>.bin/.json` with model config and training state in the manifest.
std::string save_training_checkpoint(const std::filesystem::path& stem, const Model& model,
                                     const diff::AdamState* optimizer, nlohmann::json extra = {});

struct LoadedModel {
    Model model;
    nlohmann::json manifest;
    /// Present when the checkpoint carries optimizer state.
    std::optional<TrainState> state;
};

/// Inverse of save_training_checkpoint; the model config comes from the manifest.
LoadedModel load_training_checkpoint(const std::filesystem::path& stem);

}  // namespace effortvae
