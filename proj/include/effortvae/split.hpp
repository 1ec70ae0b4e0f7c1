// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "effortvae/label_store.hpp"
#include "effortvae/motion_data.hpp"

namespace effortvae {

enum class Partition {
    LabeledTrain,
    LabeledVal,
    LabeledTest,
    UnlabeledTrain,
    UnlabeledVal,
    UnlabeledTest,
    Unassigned,
};

const char* to_string(Partition p) noexcept;
Partition partition_from_string(const std::string& name);

struct SplitFractions {
    double train = 0.0;
    double val = 0.0;
    double test = 0.0;

    /// Throws ConfigError unless every fraction is in [0, 1] and they sum to <= 1.
    void validate() const;
};

struct SplitOptions {
    SplitFractions labeled{0.79, 0.05, 0.03};
    SplitFractions unlabeled{0.90, 0.05, 0.05};
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SplitOptions& o);
void from_json(const nlohmann::json& j, SplitOptions& o);

/// Every window of the index assigned to exactly one partition. Labeled windows
/// come from the label table; all other windows form the unlabeled pool.
class SplitAssignment {
public:
    Partition partition_of(const LabelKey& key) const;
    const std::vector<LabelKey>& members(Partition p) const { return members_[static_cast<std::size_t>(p)]; }
    std::size_t size() const noexcept { return by_key_.size(); }

    /// {window_id -> partition name}.
    nlohmann::json to_json() const;
    static SplitAssignment from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static SplitAssignment load(const std::filesystem::path& path);

    void assign(const LabelKey& key, Partition p);
    bool operator==(const SplitAssignment& other) const { return by_key_ == other.by_key_; }

private:
    std::map<LabelKey, Partition> by_key_;
    std::array<std::vector<LabelKey>, 7> members_;
};

/// Shuffles each pool with the seed and cuts floor(n * fraction) windows per
/// partition; the remainder is Unassigned. Throws InsufficientDataError when a
/// labeled partition with a positive fraction would be empty.
SplitAssignment split(const WindowIndex& windows, const LabelTable& labels, const SplitOptions& options);

/// "clip:start" -> key; throws ParseError on malformed ids.
LabelKey parse_window_id(const std::string& id);

}  // namespace effortvae
