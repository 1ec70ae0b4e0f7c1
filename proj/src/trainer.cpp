// SPDX-License-Identifier: Apache-2.0
#include "effortvae/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "effortvae/checkpoint.hpp"
#include "effortvae/error.hpp"
#include "effortvae/objective.hpp"

namespace effortvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream ids under the per-epoch fork.
constexpr std::uint64_t kUnlabeledOrder = 1;
constexpr std::uint64_t kLabeledOrder = 2;
constexpr std::uint64_t kNoise = 3;
// Stream id for validation noise (under the root seed, not an epoch).
constexpr std::uint64_t kValidationStream = 0x7661'6c69'6461'7465ULL;

void check_partition(const TrainData& data, const Sequence* x, Partition expected) {
    if (!data.split) return;
    const Partition got = data.split->partition_of({x->clip_id, x->start_frame});
    if (got != expected)
        throw PreconditionError("window " + x->window_id() + " is in " + to_string(got) + ", not " +
                                to_string(expected));
}

struct EpochTotals {
    double total = 0.0, labeled = 0.0, unlabeled = 0.0, class_term = 0.0;
    std::size_t steps = 0;
};

EpochTotals run_epoch(Model& model, const TrainData& data, diff::AdamState& adam, int epoch, const TrainConfig& cfg,
                      double alpha, const StepHook& hook) {
    const RngStream epoch_rng = RngStream(cfg.seed).fork(static_cast<std::uint64_t>(epoch));
    RngStream unl_rng = epoch_rng.fork(kUnlabeledOrder);
    RngStream lab_rng = epoch_rng.fork(kLabeledOrder);
    RngStream noise_rng = epoch_rng.fork(kNoise);

    const std::size_t nu = data.unlabeled_train.size();
    const std::size_t nl = data.labeled_train.size();
    const std::size_t B = cfg.batch_size;

    std::vector<std::size_t> u_order(nu), l_order(nl);
    for (std::size_t i = 0; i < nu; ++i) u_order[i] = i;
    for (std::size_t i = 0; i < nl; ++i) l_order[i] = i;
    shuffle(u_order.begin(), u_order.end(), unl_rng);
    shuffle(l_order.begin(), l_order.end(), lab_rng);
    std::size_t l_cursor = 0;

    const std::size_t pool = nu > 0 ? nu : nl;
    const std::size_t steps = (pool + B - 1) / B;
    EpochTotals totals;

    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<LabeledExample> labeled;
        const std::size_t nlb = std::min(B, nl);
        for (std::size_t i = 0; i < nlb; ++i) {
            if (l_cursor == nl) {
                shuffle(l_order.begin(), l_order.end(), lab_rng);
                l_cursor = 0;
            }
            const std::size_t idx = l_order[l_cursor++];
            const Sequence* x = data.labeled_train.x[idx];
            check_partition(data, x, Partition::LabeledTrain);
            labeled.push_back({x, data.labeled_train.y[idx]});
        }
        std::vector<const Sequence*> unlabeled;
        for (std::size_t i = s * B; i < std::min(nu, (s + 1) * B); ++i) {
            const Sequence* x = data.unlabeled_train[u_order[i]];
            check_partition(data, x, Partition::UnlabeledTrain);
            unlabeled.push_back(x);
        }

        const LossNoise noise = LossNoise::draw(model.config(), labeled.size(), unlabeled.size(), noise_rng);
        diff::Tape tape;
        Model::Binder bind(tape, model.params());
        const LossGraph g = build_total_loss(bind, model, labeled, unlabeled, alpha, noise);
        model.params().zero_grad();
        tape.backward(g.total);
        diff::adam_step(adam, model.params());
        if (hook) hook(epoch, adam.step, model.params());

        totals.total += g.report.total;
        totals.labeled += g.report.labeled_term;
        totals.unlabeled += g.report.unlabeled_term;
        totals.class_term += g.report.classification_term;
        ++totals.steps;
    }
    return totals;
}

bool all_finite(const diff::ParameterStore& params) {
    for (const auto& p : params)
        if (!p.value.allFinite()) return false;
    return true;
}

}  // namespace

const char* to_string(SelectionCriterion c) noexcept { return c == SelectionCriterion::Dance ? "dance" : "watch"; }

SelectionCriterion selection_criterion_from_string(const std::string& name) {
    if (name == "dance") return SelectionCriterion::Dance;
    if (name == "watch") return SelectionCriterion::Watch;
    throw ConfigError("unknown selection criterion '" + name + "' (expected dance or watch)");
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (alpha && !(*alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("checkpoint cadence must be >= 0");
}

void to_json(json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"alpha", c.alpha ? json(*c.alpha) : json(nullptr)},
         {"seed", c.seed},
         {"checkpoint_every", c.checkpoint_every},
         {"standardize", c.standardize},
         {"criterion", to_string(c.criterion)}};
}

void from_json(const json& j, TrainConfig& c) {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("alpha")) c.alpha = j.at("alpha").is_null() ? std::nullopt : std::optional(j.at("alpha").get<double>());
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.standardize = j.value("standardize", c.standardize);
    if (j.contains("criterion")) c.criterion = selection_criterion_from_string(j.at("criterion").get<std::string>());
}

void to_json(json& j, const EpochRecord& r) {
    j = {{"epoch", r.epoch},       {"step", r.step},           {"total", r.total},
         {"labeled", r.labeled},   {"unlabeled", r.unlabeled}, {"class_term", r.class_term},
         {"val_loss", r.val_loss}, {"val_acc", r.val_acc},     {"learning_rate", r.learning_rate}};
}

TrainData assemble_train_data(const std::vector<Sequence>& windows, const LabelTable& labels,
                              const SplitAssignment& split) {
    std::map<LabelKey, const Sequence*> by_key;
    for (const auto& w : windows) by_key[{w.clip_id, w.start_frame}] = &w;
    auto lookup = [&](const LabelKey& k) {
        const auto it = by_key.find(k);
        if (it == by_key.end())
            throw PreconditionError("split references unknown window " + k.clip_id + ":" + std::to_string(k.start_frame));
        return it->second;
    };
    auto labeled = [&](Partition p) {
        LabeledSet s;
        for (const auto& k : split.members(p)) {
            const LabelRecord* r = labels.find(k);
            if (!r) throw PreconditionError("labeled partition holds an unlabeled window");
            s.x.push_back(lookup(k));
            s.y.push_back(r->label);
        }
        return s;
    };
    auto unlabeled = [&](Partition p) {
        std::vector<const Sequence*> v;
        for (const auto& k : split.members(p)) v.push_back(lookup(k));
        return v;
    };
    TrainData d;
    d.labeled_train = labeled(Partition::LabeledTrain);
    d.labeled_val = labeled(Partition::LabeledVal);
    d.unlabeled_train = unlabeled(Partition::UnlabeledTrain);
    d.unlabeled_val = unlabeled(Partition::UnlabeledVal);
    d.split = &split;
    return d;
}

ValidationResult validate(const Model& model, const TrainData& data, double alpha, std::size_t batch_size,
                          std::uint64_t seed) {
    RngStream rng = RngStream(seed).fork(kValidationStream);
    ValidationResult out;
    double sum = 0.0;
    const std::size_t nl = data.labeled_val.size(), nu = data.unlabeled_val.size();
    for (std::size_t i = 0; i < nl; i += batch_size) {
        std::vector<LabeledExample> batch;
        for (std::size_t j = i; j < std::min(nl, i + batch_size); ++j) {
            check_partition(data, data.labeled_val.x[j], Partition::LabeledVal);
            batch.push_back({data.labeled_val.x[j], data.labeled_val.y[j]});
        }
        const LossReport r = total_loss(model, batch, {}, alpha, rng);
        sum += r.labeled_term + alpha * r.classification_term * static_cast<double>(batch.size());
    }
    for (std::size_t i = 0; i < nu; i += batch_size) {
        std::vector<const Sequence*> batch;
        for (std::size_t j = i; j < std::min(nu, i + batch_size); ++j) {
            check_partition(data, data.unlabeled_val[j], Partition::UnlabeledVal);
            batch.push_back(data.unlabeled_val[j]);
        }
        sum += total_loss(model, {}, batch, alpha, rng).unlabeled_term;
    }
    out.loss = nl + nu > 0 ? sum / static_cast<double>(nl + nu) : 0.0;
    out.accuracy = nl > 0 ? evaluate_classifier(model, data.labeled_val).accuracy : 0.0;
    return out;
}

ClassifierEvaluation evaluate_classifier(const Model& model, const LabeledSet& set, std::size_t batch_size) {
    if (set.empty()) throw PreconditionError("evaluate_classifier: empty set");
    if (batch_size == 0) batch_size = set.size();
    ClassifierEvaluation e;
    for (std::size_t i = 0; i < set.size(); i += batch_size) {
        const std::size_t n = std::min(batch_size, set.size() - i);
        for (const auto& p : model.classify_batch(std::span(set.x).subspan(i, n))) e.predictions.push_back(p.argmax());
    }
    e.confusion = confusion_matrix(set.y, e.predictions, model.config().classes);
    e.accuracy = e.confusion.accuracy();
    return e;
}

std::string save_training_checkpoint(const fs::path& stem, const Model& model, const diff::AdamState* optimizer,
                                     json extra) {
    json manifest = extra.is_object() ? std::move(extra) : json::object();
    manifest["model"] = model.config();
    if (!model.standardization().is_identity()) manifest["standardization"] = model.standardization();
    return save_checkpoint(stem, model.params(), optimizer, std::move(manifest));
}

LoadedModel load_training_checkpoint(const fs::path& stem) {
    const fs::path mpath = checkpoint_manifest_path(stem);
    std::ifstream in(mpath);
    if (!in) throw ConfigError("cannot read checkpoint manifest " + mpath.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(mpath.string() + ": " + e.what(), static_cast<long>(e.byte));
    }
    if (!manifest.contains("model")) throw SchemaError("checkpoint manifest lacks a model config");
    LoadedModel out{Model::zeros(manifest.at("model").get<ModelConfig>()), {}, std::nullopt};
    Checkpoint ck = load_checkpoint(stem, out.model.params());
    out.model.params() = std::move(ck.params);
    out.manifest = std::move(ck.manifest);
    if (out.manifest.contains("standardization"))
        out.model.set_standardization(out.manifest.at("standardization").get<Standardization>());
    if (ck.optimizer) out.state = TrainState{std::move(*ck.optimizer), out.manifest.value("epochs_done", 0)};
    return out;
}

TrainResult train(Model& model, const TrainData& data, const TrainConfig& cfg, std::optional<TrainState> resume,
                  const StepHook& hook) {
    cfg.validate();
    if (data.labeled_train.empty()) throw PreconditionError("train: the labeled training pool is empty");
    if (data.labeled_train.x.size() != data.labeled_train.y.size())
        throw PreconditionError("train: labeled pool has mismatched labels");

    if (!resume && cfg.standardize) {
        std::vector<const Sequence*> pool(data.labeled_train.x.begin(), data.labeled_train.x.end());
        pool.insert(pool.end(), data.unlabeled_train.begin(), data.unlabeled_train.end());
        model.set_standardization(fit_standardization(pool));
    }

    TrainResult result;
    result.alpha = cfg.alpha.value_or(default_alpha(data.unlabeled_train.size(), data.labeled_train.size()));
    result.state = resume ? std::move(*resume)
                          : TrainState{diff::AdamState(model.params(), diff::AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8}), 0};
    result.selected = model.params();
    result.selected_epoch = result.state.epochs_done;

    std::ofstream log;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir / "checkpoints");
        log.open(cfg.out_dir / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
        if (!log) throw ConfigError("cannot write training log in " + cfg.out_dir.string());
    }
    auto checkpoint = [&](const std::string& name, const diff::ParameterStore& params, int epoch) {
        if (cfg.out_dir.empty()) return;
        Model snapshot = model;
        snapshot.params() = params;
        json extra = {{"epoch", epoch},
                      {"epochs_done", result.state.epochs_done},
                      {"alpha", result.alpha},
                      {"train", cfg},
                      {"selected_epoch", result.selected_epoch}};
        const fs::path stem = cfg.out_dir / "checkpoints" / name;
        save_training_checkpoint(stem, snapshot, &result.state.optimizer, extra);
        result.checkpoints.push_back(stem.string());
    };

    const bool has_val = !data.labeled_val.empty() || !data.unlabeled_val.empty();
    const bool by_accuracy = cfg.criterion == SelectionCriterion::Watch && !data.labeled_val.empty();
    double best = std::numeric_limits<double>::infinity();

    for (int epoch = result.state.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
        const diff::ParameterStore params_before = model.params();
        const diff::AdamState adam_before = result.state.optimizer;
        EpochTotals totals;
        bool ok = false;
        for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
            try {
                totals = run_epoch(model, data, result.state.optimizer, epoch, cfg, result.alpha, hook);
                if (!all_finite(model.params())) throw NumericError("adam_step");
                ok = true;
            } catch (const NumericError& e) {
                model.params() = params_before;
                const double lr = result.state.optimizer.config.learning_rate;
                result.state.optimizer = adam_before;
                result.state.optimizer.config.learning_rate = 0.5 * lr;
                result.abort_reason = std::string("epoch ") + std::to_string(epoch) + ": " + e.what();
            }
        }
        if (!ok) {
            result.aborted = true;
            break;
        }
        result.abort_reason.clear();

        EpochRecord rec;
        rec.epoch = epoch;
        rec.step = result.state.optimizer.step;
        const double steps = static_cast<double>(std::max<std::size_t>(totals.steps, 1));
        rec.total = totals.total / steps;
        rec.labeled = totals.labeled / steps;
        rec.unlabeled = totals.unlabeled / steps;
        rec.class_term = totals.class_term / steps;
        rec.learning_rate = result.state.optimizer.config.learning_rate;
        if (has_val) {
            const ValidationResult v = validate(model, data, result.alpha, cfg.batch_size, cfg.seed);
            rec.val_loss = v.loss;
            rec.val_acc = v.accuracy;
        }
        result.state.epochs_done = epoch;
        result.history.push_back(rec);
        if (log) {
            log << json(rec).dump() << '\n';
            log.flush();
        }

        const double score = !has_val ? -static_cast<double>(epoch) : by_accuracy ? -rec.val_acc : rec.val_loss;
        if (score < best) {
            best = score;
            result.selected = model.params();
            result.selected_epoch = epoch;
            checkpoint("best", result.selected, epoch);
        }
        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch%04d", epoch);
            checkpoint(name, model.params(), epoch);
        }
    }
    if (result.state.epochs_done > 0) checkpoint("last", model.params(), result.state.epochs_done);
    return result;
}

}  // namespace effortvae
