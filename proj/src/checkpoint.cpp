// SPDX-License-Identifier: Apache-2.0
#include "effortvae/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "effortvae/error.hpp"

namespace effortvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'E', 'V', 'C', 'K'};

template <class T>
void put(std::string& out, T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t& offset) {
    if (offset + sizeof(T) > in.size()) throw ParseError("truncated checkpoint", static_cast<long>(offset));
    T v;
    std::memcpy(&v, in.data() + offset, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    offset += sizeof(T);
    return v;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

fs::path checkpoint_tensor_path(const fs::path& stem) { return fs::path(stem.string() + ".bin"); }
fs::path checkpoint_manifest_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }

void write_tensor_file(const fs::path& path, const std::vector<NamedTensor>& tensors) {
    std::string header(kMagic, 4);
    put<std::uint32_t>(header, kCheckpointVersion);
    put<std::uint32_t>(header, static_cast<std::uint32_t>(tensors.size()));
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        put<std::uint32_t>(header, static_cast<std::uint32_t>(t.name.size()));
        header += t.name;
        put<std::uint32_t>(header, 2);
        put<std::uint64_t>(header, static_cast<std::uint64_t>(t.value.rows()));
        put<std::uint64_t>(header, static_cast<std::uint64_t>(t.value.cols()));
        put<std::uint64_t>(header, offset);
        offset += static_cast<std::uint64_t>(t.value.size()) * sizeof(double);
    }
    std::string data;
    data.reserve(offset);
    for (const auto& t : tensors)
        for (Eigen::Index i = 0; i < t.value.size(); ++i) put<double>(data, t.value.data()[i]);

    const fs::path tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) throw Error("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, path);
}

std::vector<NamedTensor> read_tensor_file(const fs::path& path) {
    const std::string bytes = slurp(path);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("bad checkpoint magic", 0);
    std::size_t off = 4;
    const auto version = get<std::uint32_t>(bytes, off);
    if (version != kCheckpointVersion)
        throw SchemaError("unsupported checkpoint version " + std::to_string(version));
    const auto count = get<std::uint32_t>(bytes, off);

    struct Entry {
        std::string name;
        std::uint64_t rows, cols, offset;
    };
    std::vector<Entry> dir;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(bytes, off);
        if (off + len > bytes.size()) throw ParseError("truncated checkpoint directory", static_cast<long>(off));
        Entry e;
        e.name = bytes.substr(off, len);
        off += len;
        const auto ndims = get<std::uint32_t>(bytes, off);
        if (ndims != 2) throw SchemaError("checkpoint tensor '" + e.name + "' is not 2-D");
        e.rows = get<std::uint64_t>(bytes, off);
        e.cols = get<std::uint64_t>(bytes, off);
        e.offset = get<std::uint64_t>(bytes, off);
        dir.push_back(std::move(e));
    }
    const std::size_t data_start = off;
    std::vector<NamedTensor> out;
    for (const auto& e : dir) {
        std::size_t p = data_start + e.offset;
        NamedTensor t{e.name, diff::Matrix(static_cast<Eigen::Index>(e.rows), static_cast<Eigen::Index>(e.cols))};
        for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = get<double>(bytes, p);
        out.push_back(std::move(t));
    }
    return out;
}

std::string save_checkpoint(const fs::path& stem, const diff::ParameterStore& params, const diff::AdamState* optimizer,
                            json manifest) {
    std::vector<NamedTensor> tensors;
    for (const auto& p : params) tensors.push_back({p.name, p.value});
    if (optimizer) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            tensors.push_back({"adam.m/" + params[i].name, optimizer->first_moment[i]});
            tensors.push_back({"adam.v/" + params[i].name, optimizer->second_moment[i]});
        }
        manifest["optimizer"] = {{"kind", "adam"},
                                 {"step", optimizer->step},
                                 {"learning_rate", optimizer->config.learning_rate},
                                 {"beta1", optimizer->config.beta1},
                                 {"beta2", optimizer->config.beta2},
                                 {"epsilon", optimizer->config.epsilon}};
    }
    manifest["format_version"] = kCheckpointVersion;
    const fs::path bin = checkpoint_tensor_path(stem);
    write_tensor_file(bin, tensors);
    const std::string hash = sha256_file(bin);
    manifest["tensor_sha256"] = hash;
    std::ofstream out(checkpoint_manifest_path(stem), std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint manifest");
    out << manifest.dump(2) << '\n';
    return hash;
}

Checkpoint load_checkpoint(const fs::path& stem, const diff::ParameterStore& like) {
    Checkpoint ck;
    ck.params = like;
    const auto tensors = read_tensor_file(checkpoint_tensor_path(stem));
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t;

    auto take = [&](const std::string& name, diff::Matrix& dst) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw SchemaError("checkpoint is missing tensor '" + name + "'");
        if (it->second->value.rows() != dst.rows() || it->second->value.cols() != dst.cols())
            throw SchemaError("checkpoint tensor '" + name + "' has the wrong shape");
        dst = it->second->value;
    };
    for (auto& p : ck.params) take(p.name, p.value);

    const fs::path manifest_path = checkpoint_manifest_path(stem);
    if (fs::exists(manifest_path)) {
        try {
            ck.manifest = json::parse(slurp(manifest_path));
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("checkpoint manifest: ") + e.what(), static_cast<long>(e.byte));
        }
    }
    if (ck.manifest.contains("optimizer") && by_name.count("adam.m/" + like[0].name)) {
        const auto& o = ck.manifest["optimizer"];
        diff::AdamConfig cfg{o.at("learning_rate").get<double>(), o.at("beta1").get<double>(),
                             o.at("beta2").get<double>(), o.at("epsilon").get<double>()};
        diff::AdamState st(like, cfg);
        st.step = o.at("step").get<std::uint64_t>();
        for (std::size_t i = 0; i < like.size(); ++i) {
            take("adam.m/" + like[i].name, st.first_moment[i]);
            take("adam.v/" + like[i].name, st.second_moment[i]);
        }
        ck.optimizer = std::move(st);
    }
    return ck;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 failed");
    std::ostringstream ss;
    for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return ss.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(slurp(path)); }

}  // namespace effortvae
