// SPDX-License-Identifier: Apache-2.0
#include "effortvae/label_store.hpp"

#include <algorithm>
#include <cctype>
#include <ctime>
#include <fstream>
#include <sstream>

#include "effortvae/error.hpp"

namespace effortvae {

namespace fs = std::filesystem;

const char* to_string(LabelSource source) noexcept {
    switch (source) {
        case LabelSource::Manual: return "manual";
        case LabelSource::BetweenFill: return "between-fill";
        case LabelSource::Dilation: return "dilation";
    }
    return "manual";
}

LabelSource label_source_from_string(const std::string& name) {
    if (name == "manual") return LabelSource::Manual;
    if (name == "between-fill") return LabelSource::BetweenFill;
    if (name == "dilation") return LabelSource::Dilation;
    throw ParseError("unknown label source '" + name + "'");
}

// ---- names --------------------------------------------------------------------

LabelNames::LabelNames(int classes) {
    if (classes < 1) throw PreconditionError("class count must be positive");
    if (classes == 3) {
        names_ = {"Low", "Medium", "High"};
    } else {
        for (int c = 0; c < classes; ++c) names_.push_back("class" + std::to_string(c));
    }
}

LabelNames::LabelNames(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw PreconditionError("class names must not be empty");
}

const std::string& LabelNames::name(int label) const {
    if (label < 0 || label >= classes()) throw PreconditionError("label " + std::to_string(label) + " out of range");
    return names_[static_cast<std::size_t>(label)];
}

int LabelNames::parse(const std::string& text) const {
    auto lower = [](std::string s) {
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        return s;
    };
    const std::string wanted = lower(text);
    for (int c = 0; c < classes(); ++c)
        if (lower(names_[static_cast<std::size_t>(c)]) == wanted) return c;
    if (!text.empty() && std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isdigit(c); })) {
        const int v = std::stoi(text);
        if (v < classes()) return v;
    }
    throw PreconditionError("unknown label '" + text + "'");
}

// ---- table --------------------------------------------------------------------

LabelTable::LabelTable(int classes, std::size_t seq_len, ConflictPolicy policy)
    : classes_(classes), seq_len_(seq_len), policy_(policy) {
    if (classes < 1) throw PreconditionError("class count must be positive");
}

const LabelRecord* LabelTable::find(const LabelKey& key) const {
    auto it = records_.find(key);
    return it == records_.end() ? nullptr : &it->second;
}

std::size_t LabelTable::count(LabelSource source) const {
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [&](const auto& kv) { return kv.second.source == source; }));
}

std::vector<const LabelRecord*> LabelTable::manual_in_clip(const std::string& clip_id) const {
    std::vector<const LabelRecord*> out;
    for (auto it = records_.lower_bound(LabelKey{clip_id, 0}); it != records_.end() && it->first.clip_id == clip_id;
         ++it)
        if (it->second.source == LabelSource::Manual) out.push_back(&it->second);
    return out;
}

void LabelTable::check(const LabelRecord& record) const {
    if (record.label < 0 || record.label >= classes_) {
        throw PreconditionError("label " + std::to_string(record.label) + " outside [0, " + std::to_string(classes_) +
                                ")");
    }
    if (record.seq_len != seq_len_) {
        throw PreconditionError("record seq_len " + std::to_string(record.seq_len) + " differs from table's " +
                                std::to_string(seq_len_));
    }
    if (record.clip_id.empty() || record.clip_id.find_first_of(",\n\r") != std::string::npos) {
        throw PreconditionError("clip id must be non-empty and free of commas and newlines");
    }
}

bool LabelTable::merge(const LabelRecord& record) {
    auto [it, inserted] = records_.try_emplace(record.key(), record);
    if (inserted) return true;
    if (record.source == LabelSource::Manual) {
        it->second = record;
        return true;
    }
    return false;
}

LabelTable save_label(const LabelTable& table, const LabelRecord& record, std::optional<ConflictPolicy> policy) {
    table.check(record);
    const ConflictPolicy effective = policy.value_or(table.conflict_policy());
    if (const auto* existing = table.find(record.key())) {
        if (record.source != LabelSource::Manual) return table;  // augmented never overwrites
        if (existing->source == LabelSource::Manual && existing->label != record.label &&
            effective == ConflictPolicy::Reject) {
            throw ConflictError("manual label already stored for " + record.clip_id + ":" +
                                std::to_string(record.start_frame));
        }
    }
    LabelTable out = table;
    out.merge(record);
    return out;
}

LabelTable augment_between(const LabelTable& table, const WindowIndex& windows, const std::string& created_at) {
    LabelTable out = table;
    const std::size_t T = table.seq_len();
    std::string clip;
    for (const auto& [key, rec] : table.records()) {
        if (key.clip_id == clip) continue;
        clip = key.clip_id;
        const auto manual = table.manual_in_clip(clip);
        for (std::size_t i = 0; i + 1 < manual.size(); ++i) {
            const LabelRecord& a = *manual[i];
            const LabelRecord& b = *manual[i + 1];
            if (a.label != b.label || b.start_frame - a.start_frame > T) continue;
            for (std::size_t s = a.start_frame + 1; s < b.start_frame; ++s) {
                if (!windows.contains(clip, s)) continue;
                out.merge(LabelRecord{clip, s, T, a.label, LabelSource::BetweenFill, created_at});
            }
        }
    }
    return out;
}

LabelTable augment_dilate(const LabelTable& table, const WindowIndex& windows, std::size_t radius,
                          const std::string& created_at) {
    LabelTable out = table;
    for (const auto& [key, rec] : table.records()) {
        if (rec.source == LabelSource::Dilation) continue;
        const std::size_t lo = rec.start_frame > radius ? rec.start_frame - radius : 0;
        for (std::size_t s = lo; s <= rec.start_frame + radius; ++s) {
            if (!windows.contains(key.clip_id, s)) continue;
            out.merge(LabelRecord{key.clip_id, s, rec.seq_len, rec.label, LabelSource::Dilation, created_at});
        }
    }
    return out;
}

ClassHistogram class_histogram(const LabelTable& table) {
    ClassHistogram h;
    h.counts.assign(static_cast<std::size_t>(table.classes()), 0);
    for (const auto& [key, rec] : table.records()) ++h.counts[static_cast<std::size_t>(rec.label)];
    h.total = table.size();
    if (h.total > 0) {
        std::vector<double> f(h.counts.size());
        for (std::size_t c = 0; c < f.size(); ++c) f[c] = static_cast<double>(h.counts[c]) / static_cast<double>(h.total);
        h.fractions = std::move(f);
    }
    return h;
}

// ---- CSV ----------------------------------------------------------------------

std::string label_csv_row(const LabelRecord& r) {
    std::ostringstream ss;
    ss << r.clip_id << ',' << r.start_frame << ',' << r.seq_len << ',' << r.label << ',' << to_string(r.source) << ','
       << r.created_at << '\n';
    return ss.str();
}

void write_labels_csv(const fs::path& path, const LabelTable& table) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << kLabelCsvHeader << '\n';
    for (const auto& [key, rec] : table.records()) out << label_csv_row(rec);
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::size_t parse_size(const std::string& s, long row) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }))
        throw ParseError("expected a non-negative integer, got '" + s + "'", row);
    return static_cast<std::size_t>(std::stoull(s));
}

}  // namespace

LabelTable read_labels_csv(const fs::path& path, int classes, std::size_t seq_len) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty label file '" + path.string() + "'", 0);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_fields(line);
    auto column = [&](const std::string& name) -> int {
        auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };
    const int c_clip = column("clip_id"), c_start = column("start_frame"), c_len = column("seq_len"),
              c_label = column("label"), c_source = column("source"), c_time = column("created_at");
    if (c_clip < 0 || c_start < 0 || c_len < 0 || c_label < 0) {
        throw ParseError("label CSV header must contain clip_id,start_frame,seq_len,label", 0);
    }

    std::vector<LabelRecord> rows;
    long row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != header.size()) throw ParseError("label CSV row has wrong column count", row);
        LabelRecord r;
        r.clip_id = f[static_cast<std::size_t>(c_clip)];
        r.start_frame = parse_size(f[static_cast<std::size_t>(c_start)], row);
        r.seq_len = parse_size(f[static_cast<std::size_t>(c_len)], row);
        r.label = static_cast<int>(parse_size(f[static_cast<std::size_t>(c_label)], row));
        r.source = c_source >= 0 ? label_source_from_string(f[static_cast<std::size_t>(c_source)]) : LabelSource::Manual;
        r.created_at = c_time >= 0 ? f[static_cast<std::size_t>(c_time)] : std::string{};
        rows.push_back(std::move(r));
    }

    if (seq_len == 0 && !rows.empty()) seq_len = rows.front().seq_len;
    LabelTable table(classes, seq_len);
    row = 0;
    for (const auto& r : rows) {
        ++row;
        try {
            table.check(r);
        } catch (const PreconditionError& e) {
            throw ParseError(e.what(), row);
        }
        table.merge(r);
    }
    return table;
}

std::string iso8601_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---- store --------------------------------------------------------------------

LabelStore::LabelStore(fs::path path, int classes, std::size_t seq_len) : path_(std::move(path)) {
    if (fs::exists(path_) && fs::file_size(path_) > 0) {
        table_ = std::make_shared<const LabelTable>(read_labels_csv(path_, classes, seq_len));
        if (table_->seq_len() != seq_len)
            throw SchemaError("label store '" + path_.string() + "' holds windows of a different length");
    } else {
        table_ = std::make_shared<const LabelTable>(classes, seq_len);
        write_labels_csv(path_, *table_);
    }
}

std::shared_ptr<const LabelTable> LabelStore::snapshot() const {
    std::lock_guard lock(mutex_);
    return table_;
}

LabelStore::SaveResult LabelStore::save(LabelRecord record, bool overwrite, const WindowIndex* windows) {
    if (record.created_at.empty()) record.created_at = iso8601_now();
    if (windows && !windows->contains(record.clip_id, record.start_frame)) {
        throw PreconditionError("no window starts at " + record.clip_id + ":" + std::to_string(record.start_frame));
    }
    std::lock_guard lock(mutex_);
    const auto* existing = table_->find(record.key());
    const bool replaced = existing && existing->source == LabelSource::Manual && existing->label != record.label;
    auto next = std::make_shared<const LabelTable>(
        save_label(*table_, record, overwrite ? ConflictPolicy::Overwrite : ConflictPolicy::Reject));
    {
        std::ofstream out(path_, std::ios::binary | std::ios::app);
        if (!out) throw Error("cannot append to '" + path_.string() + "'");
        out << label_csv_row(record);
        out.flush();
        if (!out) throw Error("write to '" + path_.string() + "' failed");
    }
    table_ = std::move(next);
    return {std::move(record), replaced};
}

}  // namespace effortvae
