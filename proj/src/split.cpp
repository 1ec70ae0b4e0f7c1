// SPDX-License-Identifier: Apache-2.0
#include "effortvae/split.hpp"

#include <cmath>
#include <fstream>

#include "effortvae/error.hpp"
#include "effortvae/rng.hpp"

namespace effortvae {

namespace {

constexpr std::array<const char*, 7> kPartitionNames{"labeled_train",   "labeled_val",   "labeled_test",
                                                     "unlabeled_train", "unlabeled_val", "unlabeled_test",
                                                     "unassigned"};

std::size_t cut(std::size_t n, double fraction) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 1e-9));
}

}  // namespace

const char* to_string(Partition p) noexcept { return kPartitionNames[static_cast<std::size_t>(p)]; }

Partition partition_from_string(const std::string& name) {
    for (std::size_t i = 0; i < kPartitionNames.size(); ++i)
        if (name == kPartitionNames[i]) return static_cast<Partition>(i);
    throw ParseError("unknown partition '" + name + "'");
}

void SplitFractions::validate() const {
    for (double f : {train, val, test})
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
    if (train + val + test > 1.0 + 1e-12) throw ConfigError("split fractions sum to more than 1");
}

void to_json(nlohmann::json& j, const SplitOptions& o) {
    j = {{"labeled", {o.labeled.train, o.labeled.val, o.labeled.test}},
         {"unlabeled", {o.unlabeled.train, o.unlabeled.val, o.unlabeled.test}},
         {"seed", o.seed}};
}

void from_json(const nlohmann::json& j, SplitOptions& o) {
    auto read = [&](const char* key, SplitFractions& f) {
        if (!j.contains(key)) return;
        const auto& a = j.at(key);
        if (!a.is_array() || a.size() != 3) throw ConfigError(std::string("split.") + key + " must be [train, val, test]");
        f = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    };
    read("labeled", o.labeled);
    read("unlabeled", o.unlabeled);
    if (j.contains("seed")) o.seed = j.at("seed").get<std::uint64_t>();
}

LabelKey parse_window_id(const std::string& id) {
    const auto colon = id.rfind(':');
    if (colon == std::string::npos || colon + 1 == id.size()) throw ParseError("malformed window id '" + id + "'");
    std::size_t start = 0;
    for (std::size_t i = colon + 1; i < id.size(); ++i) {
        if (id[i] < '0' || id[i] > '9') throw ParseError("malformed window id '" + id + "'");
        start = start * 10 + static_cast<std::size_t>(id[i] - '0');
    }
    return {id.substr(0, colon), start};
}

Partition SplitAssignment::partition_of(const LabelKey& key) const {
    const auto it = by_key_.find(key);
    return it == by_key_.end() ? Partition::Unassigned : it->second;
}

void SplitAssignment::assign(const LabelKey& key, Partition p) {
    const auto [it, inserted] = by_key_.emplace(key, p);
    if (!inserted) throw PreconditionError("window " + key.clip_id + ":" + std::to_string(key.start_frame) +
                                           " assigned twice");
    members_[static_cast<std::size_t>(p)].push_back(key);
}

nlohmann::json SplitAssignment::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, p] : by_key_) j[key.clip_id + ":" + std::to_string(key.start_frame)] = to_string(p);
    return j;
}

SplitAssignment SplitAssignment::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("split assignment must be a JSON object");
    SplitAssignment out;
    // Members come back in key order; the shuffled order is not persisted.
    for (const auto& [id, p] : j.items()) out.assign(parse_window_id(id), partition_from_string(p.get<std::string>()));
    return out;
}

void SplitAssignment::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << to_json().dump(1) << '\n';
}

SplitAssignment SplitAssignment::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

SplitAssignment split(const WindowIndex& windows, const LabelTable& labels, const SplitOptions& options) {
    options.labeled.validate();
    options.unlabeled.validate();

    std::vector<LabelKey> labeled, unlabeled;
    for (const auto& [clip, n] : windows.clips())
        for (std::size_t s : windows.starts(clip)) (labels.find({clip, s}) ? labeled : unlabeled).push_back({clip, s});

    const RngStream root(options.seed);
    SplitAssignment out;
    auto deal = [&](std::vector<LabelKey>& pool, const SplitFractions& f, std::array<Partition, 3> parts,
                    std::uint64_t stream, bool strict) {
        RngStream rng = root.fork(stream);
        shuffle(pool.begin(), pool.end(), rng);
        const std::array<std::size_t, 3> sizes{cut(pool.size(), f.train), cut(pool.size(), f.val),
                                               cut(pool.size(), f.test)};
        const std::array<double, 3> fr{f.train, f.val, f.test};
        for (std::size_t i = 0; i < 3; ++i)
            if (strict && fr[i] > 0.0 && sizes[i] == 0)
                throw InsufficientDataError("only " + std::to_string(pool.size()) + " labeled windows; the " +
                                            to_string(parts[i]) + " partition would be empty");
        std::size_t next = 0;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t n = 0; n < sizes[i]; ++n) out.assign(pool[next++], parts[i]);
        for (; next < pool.size(); ++next) out.assign(pool[next], Partition::Unassigned);
    };
    deal(labeled, options.labeled, {Partition::LabeledTrain, Partition::LabeledVal, Partition::LabeledTest}, 1, true);
    deal(unlabeled, options.unlabeled,
         {Partition::UnlabeledTrain, Partition::UnlabeledVal, Partition::UnlabeledTest}, 2, false);
    return out;
}

}  // namespace effortvae
