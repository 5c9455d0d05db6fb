#pragma once

// Checkpoint container for trained models: a 4-byte little-endian header
// length, a JSON header (format version, model kind, arbitrary metadata,
// tensor directory), then the tensor payloads as little-endian IEEE-754
// doubles in directory order. The byte encoding is explicit so checkpoints
// written on any host read back identically.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "klp/tensor.hpp"

namespace klp {

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

struct Checkpoint {
    std::string kind;
    nlohmann::json meta;
    std::vector<NamedTensor> tensors;

    const NamedTensor& tensor(const std::string& name) const {
        for (const NamedTensor& t : tensors) {
            if (t.name == name) return t;
        }
        throw std::invalid_argument("checkpoint: no tensor named " + name);
    }
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64_le(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::string encode_checkpoint(const std::string& kind, const nlohmann::json& meta,
                                     const std::vector<NamedTensor>& tensors) {
    nlohmann::json dir = nlohmann::json::array();
    std::size_t total = 0;
    for (const NamedTensor& t : tensors) {
        if (shape_numel(t.shape) != t.data.size()) {
            throw std::invalid_argument("checkpoint: tensor " + t.name +
                                        " data does not match its shape");
        }
        dir.push_back({{"name", t.name}, {"shape", t.shape}});
        total += t.data.size();
    }
    nlohmann::json header;
    header["format"] = "klp-checkpoint";
    header["version"] = kCheckpointVersion;
    header["kind"] = kind;
    header["meta"] = meta;
    header["tensors"] = dir;
    const std::string header_text = header.dump();

    std::string out;
    out.reserve(4 + header_text.size() + 8 * total);
    detail::put_u32_le(out, static_cast<std::uint32_t>(header_text.size()));
    out += header_text;
    for (const NamedTensor& t : tensors) {
        for (double v : t.data) detail::put_f64_le(out, v);
    }
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 4) throw std::invalid_argument("checkpoint: truncated header length");
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    std::uint32_t header_len = 0;
    for (int i = 0; i < 4; ++i) header_len |= static_cast<std::uint32_t>(u[i]) << (8 * i);
    if (bytes.size() < 4 + static_cast<std::size_t>(header_len)) {
        throw std::invalid_argument("checkpoint: truncated header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(4, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("checkpoint: bad header json: ") + e.what());
    }
    if (!header.is_object() || header.value("format", "") != "klp-checkpoint") {
        throw std::invalid_argument("checkpoint: not a klp checkpoint");
    }
    if (header.value("version", -1) != kCheckpointVersion) {
        throw std::invalid_argument("checkpoint: unsupported version");
    }

    Checkpoint ckpt;
    ckpt.kind = header.value("kind", "");
    ckpt.meta = header.value("meta", nlohmann::json::object());
    std::size_t offset = 4 + header_len;
    for (const auto& entry : header.at("tensors")) {
        NamedTensor t;
        t.name = entry.at("name").get<std::string>();
        t.shape = entry.at("shape").get<Shape>();
        const std::size_t count = shape_numel(t.shape);
        if (bytes.size() < offset + 8 * count) {
            throw std::invalid_argument("checkpoint: truncated payload for tensor " + t.name);
        }
        t.data.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            t.data[i] = detail::get_f64_le(u + offset + 8 * i);
        }
        offset += 8 * count;
        ckpt.tensors.push_back(std::move(t));
    }
    if (offset != bytes.size()) {
        throw std::invalid_argument("checkpoint: trailing bytes after payload");
    }
    return ckpt;
}

inline void write_checkpoint(const std::string& path, const std::string& kind,
                             const nlohmann::json& meta,
                             const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    const std::string bytes = encode_checkpoint(kind, meta, tensors);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

// Bridges between live parameter tensors and checkpoint entries.
inline NamedTensor snapshot_tensor(const std::string& name, const Tensor& t) {
    return NamedTensor{name, t.shape(), t.data()};
}

inline void load_tensor(const NamedTensor& src, Tensor& dst) {
    if (src.shape != dst.shape()) {
        throw std::invalid_argument("checkpoint: tensor " + src.name + " has shape " +
                                    shape_str(src.shape) + ", model expects " +
                                    shape_str(dst.shape()));
    }
    dst.data() = src.data;
}

}  // namespace klp
