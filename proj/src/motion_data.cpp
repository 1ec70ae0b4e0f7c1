// SPDX-License-Identifier: Apache-2.0
#include "effortvae/motion_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "effortvae/error.hpp"

namespace effortvae {

namespace fs = std::filesystem;
using nlohmann::json;

void MotionClip::validate() const {
    if (!(fps > 0.0) || !std::isfinite(fps)) throw SchemaError("clip '" + id + "': fps must be positive");
    const std::size_t joints = joint_count();
    for (std::size_t f = 0; f < frames.size(); ++f) {
        if (frames[f].joint_count() != joints) {
            throw SchemaError("clip '" + id + "': frame " + std::to_string(f) + " has " +
                              std::to_string(frames[f].joint_count()) + " joints, expected " +
                              std::to_string(joints));
        }
        for (const auto& p : frames[f].joints) {
            if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
                throw SchemaError("clip '" + id + "': non-finite coordinate in frame " + std::to_string(f));
            }
        }
    }
    if (!frames.empty() && joints == 0) throw SchemaError("clip '" + id + "': frames have no joints");
    for (const auto& [a, b] : skeleton) {
        if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= joints || static_cast<std::size_t>(b) >= joints) {
            throw SchemaError("clip '" + id + "': skeleton edge (" + std::to_string(a) + ", " + std::to_string(b) +
                              ") references a missing joint");
        }
    }
}

std::vector<double> Sequence::flatten() const {
    std::vector<double> out;
    out.reserve(poses.size() * joint_count() * 3);
    for (const auto& pose : poses)
        for (const auto& p : pose.joints) out.insert(out.end(), p.begin(), p.end());
    return out;
}

Sequence Sequence::from_flat(std::span<const double> values, std::size_t frames, std::size_t joints,
                             std::string clip_id, std::size_t start_frame) {
    if (values.size() != frames * joints * 3) {
        throw SchemaError("flat sequence has " + std::to_string(values.size()) + " values, expected " +
                          std::to_string(frames * joints * 3));
    }
    Sequence seq{std::move(clip_id), start_frame, {}};
    seq.poses.resize(frames);
    std::size_t i = 0;
    for (auto& pose : seq.poses) {
        pose.joints.resize(joints);
        for (auto& p : pose.joints) {
            p = {values[i], values[i + 1], values[i + 2]};
            i += 3;
        }
    }
    return seq;
}

const char* to_string(BarycenterMode mode) noexcept {
    return mode == BarycenterMode::FixedXY ? "fixed-xy" : "none";
}

BarycenterMode barycenter_mode_from_string(const std::string& name) {
    if (name == "fixed-xy") return BarycenterMode::FixedXY;
    if (name == "none") return BarycenterMode::None;
    throw ConfigError("unknown barycenter mode '" + name + "'");
}

// ---- normalization ------------------------------------------------------------

namespace {

std::array<double, 2> xy_barycenter(const Pose& pose) {
    double x = 0.0, y = 0.0;
    for (const auto& p : pose.joints) {
        x += p[0];
        y += p[1];
    }
    const auto n = static_cast<double>(pose.joint_count());
    return {x / n, y / n};
}

}  // namespace

std::pair<std::vector<MotionClip>, NormalizationSpec> normalize(std::span<const MotionClip> clips,
                                                                BarycenterMode mode) {
    NormalizationSpec spec;
    spec.mode = mode;

    constexpr double inf = std::numeric_limits<double>::infinity();
    Vec3 lo{inf, inf, inf};
    Vec3 hi{-inf, -inf, -inf};
    double radius_xy = 0.0;
    bool any = false;

    for (const auto& clip : clips) {
        clip.validate();
        std::vector<std::array<double, 2>> track;
        if (mode == BarycenterMode::FixedXY) track.reserve(clip.frame_count());
        for (const auto& pose : clip.frames) {
            std::array<double, 2> b{0.0, 0.0};
            if (mode == BarycenterMode::FixedXY) {
                b = xy_barycenter(pose);
                track.push_back(b);
            }
            for (const auto& p : pose.joints) {
                const Vec3 q{p[0] - b[0], p[1] - b[1], p[2]};
                for (int a = 0; a < 3; ++a) {
                    lo[a] = std::min(lo[a], q[a]);
                    hi[a] = std::max(hi[a], q[a]);
                }
                radius_xy = std::max({radius_xy, std::abs(q[0]), std::abs(q[1])});
                any = true;
            }
        }
        if (mode == BarycenterMode::FixedXY) spec.removed_barycenters[clip.id] = std::move(track);
    }
    if (!any) throw PreconditionError("normalize: no frames to normalize");

    if (mode == BarycenterMode::FixedXY) {
        // Centered xy must fit in [-0.5, 0.5] around the target; z in [0, 1].
        double scale = inf;
        if (radius_xy > 0.0) scale = 0.5 / radius_xy;
        if (hi[2] > lo[2]) scale = std::min(scale, 1.0 / (hi[2] - lo[2]));
        if (!std::isfinite(scale)) throw DegenerateExtentError("normalize: all coordinates identical");
        spec.scale = scale;
        spec.offset = {kBarycenterTarget, kBarycenterTarget, -scale * lo[2]};
    } else {
        double extent = 0.0;
        for (int a = 0; a < 3; ++a) extent = std::max(extent, hi[a] - lo[a]);
        if (!(extent > 0.0)) throw DegenerateExtentError("normalize: all coordinates identical");
        spec.scale = 1.0 / extent;
        for (int a = 0; a < 3; ++a) spec.offset[a] = -spec.scale * lo[a];
    }

    std::vector<MotionClip> out;
    out.reserve(clips.size());
    for (const auto& clip : clips) {
        MotionClip c = clip;
        const auto* track = mode == BarycenterMode::FixedXY ? &spec.removed_barycenters.at(clip.id) : nullptr;
        for (std::size_t f = 0; f < c.frames.size(); ++f) {
            const std::array<double, 2> b = track ? (*track)[f] : std::array<double, 2>{0.0, 0.0};
            for (auto& p : c.frames[f].joints) {
                p[0] = spec.scale * (p[0] - b[0]) + spec.offset[0];
                p[1] = spec.scale * (p[1] - b[1]) + spec.offset[1];
                p[2] = spec.scale * p[2] + spec.offset[2];
            }
        }
        out.push_back(std::move(c));
    }
    return {std::move(out), std::move(spec)};
}

std::pair<MotionClip, NormalizationSpec> normalize(const MotionClip& clip, BarycenterMode mode) {
    if (clip.frames.empty()) throw PreconditionError("normalize: clip '" + clip.id + "' is empty");
    auto [clips, spec] = normalize(std::span<const MotionClip>(&clip, 1), mode);
    return {std::move(clips.front()), std::move(spec)};
}

MotionClip denormalize(const MotionClip& clip, const NormalizationSpec& spec) {
    const std::vector<std::array<double, 2>>* track = nullptr;
    if (spec.mode == BarycenterMode::FixedXY) {
        auto it = spec.removed_barycenters.find(clip.id);
        if (it != spec.removed_barycenters.end()) {
            if (it->second.size() != clip.frame_count()) {
                throw SchemaError("denormalize: barycenter track length does not match clip '" + clip.id + "'");
            }
            track = &it->second;
        }
    }
    MotionClip out = clip;
    for (std::size_t f = 0; f < out.frames.size(); ++f) {
        const std::array<double, 2> b = track ? (*track)[f] : std::array<double, 2>{0.0, 0.0};
        for (auto& p : out.frames[f].joints) {
            p[0] = (p[0] - spec.offset[0]) / spec.scale + b[0];
            p[1] = (p[1] - spec.offset[1]) / spec.scale + b[1];
            p[2] = (p[2] - spec.offset[2]) / spec.scale;
        }
    }
    return out;
}

// ---- windows ------------------------------------------------------------------

std::size_t window_count(std::size_t frames, std::size_t window, std::size_t stride) {
    if (window < 2) throw PreconditionError("window length must be >= 2");
    if (stride < 1) throw PreconditionError("stride must be >= 1");
    if (frames < window) return 0;
    return (frames - window) / stride + 1;
}

std::vector<Sequence> extract_windows(std::span<const MotionClip> clips, std::size_t window, std::size_t stride) {
    std::size_t total = 0;
    for (const auto& clip : clips) total += window_count(clip.frame_count(), window, stride);
    std::vector<Sequence> out;
    out.reserve(total);
    for (const auto& clip : clips) {
        const std::size_t n = window_count(clip.frame_count(), window, stride);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t start = i * stride;
            Sequence seq{clip.id, start, {}};
            seq.poses.assign(clip.frames.begin() + static_cast<std::ptrdiff_t>(start),
                             clip.frames.begin() + static_cast<std::ptrdiff_t>(start + window));
            out.push_back(std::move(seq));
        }
    }
    return out;
}

WindowIndex::WindowIndex(std::span<const MotionClip> clips, std::size_t window, std::size_t stride)
    : window_(window), stride_(stride) {
    for (const auto& clip : clips) add_clip(clip.id, clip.frame_count());
}

void WindowIndex::add_clip(const std::string& clip_id, std::size_t frames) {
    counts_[clip_id] = window_count(frames, window_, stride_);
}

std::size_t WindowIndex::total() const noexcept {
    std::size_t n = 0;
    for (const auto& [id, c] : counts_) n += c;
    return n;
}

std::size_t WindowIndex::count(const std::string& clip_id) const {
    auto it = counts_.find(clip_id);
    return it == counts_.end() ? 0 : it->second;
}

bool WindowIndex::contains(const std::string& clip_id, std::size_t start) const {
    return start % stride_ == 0 && start / stride_ < count(clip_id);
}

std::vector<std::size_t> WindowIndex::starts(const std::string& clip_id) const {
    std::vector<std::size_t> out(count(clip_id));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = i * stride_;
    return out;
}

// ---- IO -----------------------------------------------------------------------

ClipFormat clip_format_from_string(const std::string& name) {
    if (name == "csv") return ClipFormat::Csv;
    if (name == "json") return ClipFormat::Json;
    if (name == "raw-binary" || name == "bin" || name == "binary") return ClipFormat::RawBinary;
    throw ConfigError("unknown clip format '" + name + "'");
}

ClipFormat clip_format_from_path(const fs::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".csv") return ClipFormat::Csv;
    if (ext == ".json") return ClipFormat::Json;
    if (ext == ".bin" || ext == ".kpt") return ClipFormat::RawBinary;
    throw ConfigError("cannot infer clip format from '" + path.string() + "'");
}

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double parse_double(const std::string& field, long row) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(field, &used);
    } catch (const std::exception&) {
        throw ParseError("not a number: '" + field + "'", row);
    }
    while (used < field.size() && (field[used] == ' ' || field[used] == '\r')) ++used;
    if (used != field.size()) throw ParseError("not a number: '" + field + "'", row);
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

MotionClip load_csv(const fs::path& path, double fps) {
    const std::string text = read_file(path);
    std::istringstream in(text);
    std::string line;
    long row = 0;
    if (!std::getline(in, line) || line.empty() || line == "\r") throw ParseError("empty CSV file '" + path.string() + "'", 0);
    if (line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    if (header.empty() || header.size() % 3 != 0) {
        throw SchemaError("CSV header must have 3*J columns, got " + std::to_string(header.size()));
    }
    const std::size_t joints = header.size() / 3;
    for (std::size_t j = 0; j < joints; ++j) {
        const std::string stem = "j" + std::to_string(j);
        if (header[3 * j] != stem + "x" || header[3 * j + 1] != stem + "y" || header[3 * j + 2] != stem + "z") {
            throw ParseError("unexpected CSV header column '" + header[3 * j] + "'", 0);
        }
    }

    MotionClip clip{path.stem().string(), fps, {}, {}};
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw SchemaError("CSV row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                              " columns, expected " + std::to_string(header.size()));
        }
        Pose pose;
        pose.joints.resize(joints);
        for (std::size_t j = 0; j < joints; ++j)
            for (int a = 0; a < 3; ++a) pose.joints[j][a] = parse_double(fields[3 * j + a], row);
        clip.frames.push_back(std::move(pose));
    }
    if (clip.frames.empty()) throw ParseError("CSV file '" + path.string() + "' has no frames", row);
    clip.validate();
    return clip;
}

MotionClip clip_from_json(const json& j) {
    MotionClip clip;
    clip.id = j.at("id").get<std::string>();
    clip.fps = j.value("fps", 35.0);
    if (j.contains("skeleton")) {
        for (const auto& e : j.at("skeleton")) clip.skeleton.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    }
    for (const auto& frame : j.at("frames")) {
        Pose pose;
        pose.joints.reserve(frame.size());
        for (const auto& p : frame) {
            if (p.size() != 3) throw SchemaError("clip '" + clip.id + "': joint must have 3 coordinates");
            pose.joints.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
        }
        clip.frames.push_back(std::move(pose));
    }
    clip.validate();
    return clip;
}

std::vector<MotionClip> load_json(const fs::path& path) {
    const std::string text = read_file(path);
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ParseError("empty JSON file '" + path.string() + "'", 0);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("JSON: ") + e.what(), static_cast<long>(e.byte));
    }
    if (!doc.is_array()) throw SchemaError("JSON clip file must hold an array of clips");
    std::vector<MotionClip> clips;
    try {
        for (const auto& c : doc) clips.push_back(clip_from_json(c));
    } catch (const json::exception& e) {
        throw SchemaError(std::string("JSON clip: ") + e.what());
    }
    return clips;
}

template <class T>
T read_le(const std::string& bytes, std::size_t& offset) {
    if (offset + sizeof(T) > bytes.size()) throw ParseError("truncated binary clip", static_cast<long>(offset));
    T v;
    std::memcpy(&v, bytes.data() + offset, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    offset += sizeof(T);
    return v;
}

template <class T>
void write_le(std::ostream& out, T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

MotionClip load_binary(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.empty()) throw ParseError("empty binary clip '" + path.string() + "'", 0);
    if (bytes.size() < 4 || !std::equal(kBinaryMagic.begin(), kBinaryMagic.end(), bytes.begin())) {
        throw ParseError("bad magic in binary clip '" + path.string() + "'", 0);
    }
    std::size_t offset = 4;
    const auto joints = read_le<std::uint32_t>(bytes, offset);
    const auto frames = read_le<std::uint32_t>(bytes, offset);
    const auto fps = read_le<float>(bytes, offset);
    if (joints == 0) throw SchemaError("binary clip declares zero joints");
    const std::size_t expected = offset + std::size_t{frames} * joints * 3 * sizeof(float);
    if (bytes.size() != expected) {
        throw ParseError("binary clip size mismatch: expected " + std::to_string(expected) + " bytes",
                         static_cast<long>(std::min(bytes.size(), expected)));
    }
    MotionClip clip{path.stem().string(), static_cast<double>(fps), {}, {}};
    clip.frames.resize(frames);
    for (auto& pose : clip.frames) {
        pose.joints.resize(joints);
        for (auto& p : pose.joints)
            for (auto& c : p) c = static_cast<double>(read_le<float>(bytes, offset));
    }
    clip.validate();
    return clip;
}

std::vector<MotionClip> load_one(const fs::path& path, ClipFormat format, double fps) {
    switch (format) {
        case ClipFormat::Csv: return {load_csv(path, fps)};
        case ClipFormat::Json: return load_json(path);
        case ClipFormat::RawBinary: return {load_binary(path)};
    }
    return {};
}

bool matches_format(const fs::path& p, ClipFormat format) {
    try {
        return clip_format_from_path(p) == format;
    } catch (const ConfigError&) {
        return false;
    }
}

}  // namespace

std::vector<MotionClip> load_clips(const fs::path& path, ClipFormat format, double fps) {
    if (!fs::exists(path)) throw ParseError("no such file or directory '" + path.string() + "'");
    if (!fs::is_directory(path)) return load_one(path, format, fps);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path))
        if (entry.is_regular_file() && matches_format(entry.path(), format)) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<MotionClip> clips;
    for (const auto& f : files) {
        auto loaded = load_one(f, format, fps);
        clips.insert(clips.end(), std::make_move_iterator(loaded.begin()), std::make_move_iterator(loaded.end()));
    }
    return clips;
}

void save_clips_json(const fs::path& path, std::span<const MotionClip> clips) {
    json doc = json::array();
    for (const auto& clip : clips) {
        json frames = json::array();
        for (const auto& pose : clip.frames) {
            json f = json::array();
            for (const auto& p : pose.joints) f.push_back({p[0], p[1], p[2]});
            frames.push_back(std::move(f));
        }
        json edges = json::array();
        for (const auto& [a, b] : clip.skeleton) edges.push_back({a, b});
        doc.push_back({{"id", clip.id}, {"fps", clip.fps}, {"skeleton", edges}, {"frames", frames}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << doc.dump() << '\n';
}

void save_clip_csv(const fs::path& path, const MotionClip& clip) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    const std::size_t joints = clip.joint_count();
    for (std::size_t j = 0; j < joints; ++j) {
        if (j) out << ',';
        out << 'j' << j << "x,j" << j << "y,j" << j << 'z';
    }
    out << '\n';
    out.precision(17);
    for (const auto& pose : clip.frames) {
        bool first = true;
        for (const auto& p : pose.joints)
            for (double c : p) {
                if (!first) out << ',';
                out << c;
                first = false;
            }
        out << '\n';
    }
}

void save_clip_binary(const fs::path& path, const MotionClip& clip) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(kBinaryMagic.data(), kBinaryMagic.size());
    write_le(out, static_cast<std::uint32_t>(clip.joint_count()));
    write_le(out, static_cast<std::uint32_t>(clip.frame_count()));
    write_le(out, static_cast<float>(clip.fps));
    for (const auto& pose : clip.frames)
        for (const auto& p : pose.joints)
            for (double c : p) write_le(out, static_cast<float>(c));
}

}  // namespace effortvae
