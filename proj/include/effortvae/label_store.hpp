// SPDX-License-Identifier: Apache-2.0
//
// Sparse categorical labels over window starts, their CSV store, and the two
// augmentation rules that spread a few manual labels to neighbouring windows.
#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "effortvae/motion_data.hpp"

namespace effortvae {

enum class LabelSource { Manual, BetweenFill, Dilation };

const char* to_string(LabelSource source) noexcept;
LabelSource label_source_from_string(const std::string& name);

/// Display names for the k classes; Low/Medium/High when k = 3.
class LabelNames {
public:
    explicit LabelNames(int classes);
    explicit LabelNames(std::vector<std::string> names);

    int classes() const noexcept { return static_cast<int>(names_.size()); }
    const std::string& name(int label) const;
    /// Accepts a display name (case-insensitive) or a decimal index.
    int parse(const std::string& text) const;
    const std::vector<std::string>& names() const noexcept { return names_; }

private:
    std::vector<std::string> names_;
};

struct LabelKey {
    std::string clip_id;
    std::size_t start_frame = 0;

    auto operator<=>(const LabelKey&) const = default;
};

struct LabelRecord {
    std::string clip_id;
    std::size_t start_frame = 0;
    std::size_t seq_len = 0;
    int label = 0;
    LabelSource source = LabelSource::Manual;
    std::string created_at;

    LabelKey key() const { return {clip_id, start_frame}; }
    bool operator==(const LabelRecord&) const = default;
};

/// What to do when a manual label lands on a key that already has a different manual label.
enum class ConflictPolicy { Reject, Overwrite };

/// Value-semantic snapshot: every mutation returns a new table.
class LabelTable {
public:
    LabelTable(int classes, std::size_t seq_len, ConflictPolicy policy = ConflictPolicy::Reject);

    int classes() const noexcept { return classes_; }
    std::size_t seq_len() const noexcept { return seq_len_; }
    ConflictPolicy conflict_policy() const noexcept { return policy_; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    const LabelRecord* find(const LabelKey& key) const;
    const std::map<LabelKey, LabelRecord>& records() const noexcept { return records_; }
    std::size_t count(LabelSource source) const;

    /// Manual records of one clip, ordered by start.
    std::vector<const LabelRecord*> manual_in_clip(const std::string& clip_id) const;

    /// Insert without a conflict check; used by loaders and augmentation.
    /// Manual records replace anything; augmented records only fill empty keys.
    /// Returns false if the record was dropped.
    bool merge(const LabelRecord& record);

    /// Throws PreconditionError if the label is out of range or seq_len differs.
    void check(const LabelRecord& record) const;

    bool operator==(const LabelTable& other) const { return records_ == other.records_; }

private:
    int classes_;
    std::size_t seq_len_;
    ConflictPolicy policy_;
    std::map<LabelKey, LabelRecord> records_;
};

/// Add a record. Manual labels win over augmented ones at the same key; a
/// different manual label at the key raises ConflictError unless `policy` is
/// Overwrite (defaults to the table's policy).
LabelTable save_label(const LabelTable& table, const LabelRecord& record,
                      std::optional<ConflictPolicy> policy = std::nullopt);

/// Between-fill: two consecutive manual records in one clip at starts a < b with
/// the same label and b - a <= T label every valid window strictly between them.
/// Existing records are never overwritten.
LabelTable augment_between(const LabelTable& table, const WindowIndex& windows,
                           const std::string& created_at = {});

/// Dilation: each manual or between-fill record spreads its label to every valid
/// window start within +-radius in its clip. Sources are visited in key order and
/// the first writer wins; existing records are never overwritten.
LabelTable augment_dilate(const LabelTable& table, const WindowIndex& windows, std::size_t radius,
                          const std::string& created_at = {});

struct ClassHistogram {
    std::vector<std::size_t> counts;
    std::size_t total = 0;
    /// Empty when the table is empty.
    std::optional<std::vector<double>> fractions;
};

ClassHistogram class_histogram(const LabelTable& table);

// ---- CSV ----------------------------------------------------------------------

inline constexpr const char* kLabelCsvHeader = "clip_id,start_frame,seq_len,label,source,created_at";

std::string label_csv_row(const LabelRecord& record);
void write_labels_csv(const std::filesystem::path& path, const LabelTable& table);

/// Replays rows in file order through LabelTable::merge. Files without a
/// `source` column are read as manual labels. `seq_len` of 0 adopts the file's.
LabelTable read_labels_csv(const std::filesystem::path& path, int classes, std::size_t seq_len = 0);

/// Current UTC time as ISO-8601 (e.g. 2024-01-31T12:00:00Z).
std::string iso8601_now();

/// CSV-backed label store with a single serialized writer.
class LabelStore {
public:
    /// Opens (or creates) the CSV at `path`.
    LabelStore(std::filesystem::path path, int classes, std::size_t seq_len);

    std::shared_ptr<const LabelTable> snapshot() const;

    struct SaveResult {
        LabelRecord record;
        bool replaced = false;  // an existing manual label was overwritten
    };

    /// Appends one CSV row and swaps in the new snapshot. `windows`, when given,
    /// is used to reject starts outside the clip.
    SaveResult save(LabelRecord record, bool overwrite, const WindowIndex* windows = nullptr);

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::shared_ptr<const LabelTable> table_;
};

}  // namespace effortvae
