#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scalpel/common.hpp"

// Weight container. Layout, in order:
//   bytes 0..3   magic "SCLP"
//   u16          format version (little endian)
//   u32          manifest byte length (little endian)
//   manifest     UTF-8 JSON: {"meta": {...}, "tensors": [{name, shape,
//                offset, count}, ...]} with offset/count in f32 elements
//   blob         raw little-endian f32 data, tensors back to back
// Values are stored as f32 regardless of compute precision, so save/load
// round trips are bit exact for f32 weights.

namespace scalpel {

struct TensorRecord {
    std::string name;
    std::vector<i64> shape;
    std::vector<float> data;
};

namespace detail {
inline void write_u16(std::ostream& out, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(b, 2);
}
inline void write_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}
}  // namespace detail

class Checkpoint {
public:
    static constexpr std::uint16_t kVersion = 1;

    nlohmann::json meta = nlohmann::json::object();
    std::vector<TensorRecord> tensors;

    void add(std::string name, std::vector<i64> shape, std::vector<float> data) {
        std::size_t n = 1;
        for (i64 d : shape) n *= static_cast<std::size_t>(d);
        if (n != data.size())
            throw InternalError("checkpoint tensor '" + name + "': shape/data mismatch");
        tensors.push_back({std::move(name), std::move(shape), std::move(data)});
    }

    const TensorRecord* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }

    const TensorRecord& require(const std::string& name) const {
        const TensorRecord* t = find(name);
        if (!t) throw CorruptionError("checkpoint is missing tensor '" + name + "'");
        return *t;
    }

    void save(const std::filesystem::path& path) const {
        nlohmann::json manifest;
        manifest["meta"] = meta;
        manifest["tensors"] = nlohmann::json::array();
        std::uint64_t offset = 0;
        for (const auto& t : tensors) {
            nlohmann::json e;
            e["name"] = t.name;
            e["shape"] = t.shape;
            e["offset"] = offset;
            e["count"] = t.data.size();
            manifest["tensors"].push_back(std::move(e));
            offset += t.data.size();
        }
        const std::string mtext = manifest.dump();
        if (mtext.size() > 0xffffffffull) throw InternalError("checkpoint manifest too large");

        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
        out.write("SCLP", 4);
        detail::write_u16(out, kVersion);
        detail::write_u32(out, static_cast<std::uint32_t>(mtext.size()));
        out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
        std::vector<unsigned char> buf;
        for (const auto& t : tensors) {
            buf.resize(t.data.size() * 4);
            for (std::size_t i = 0; i < t.data.size(); ++i) {
                const std::uint32_t u = std::bit_cast<std::uint32_t>(t.data[i]);
                buf[i * 4 + 0] = static_cast<unsigned char>(u & 0xff);
                buf[i * 4 + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
                buf[i * 4 + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
                buf[i * 4 + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
            }
            out.write(reinterpret_cast<const char*>(buf.data()),
                      static_cast<std::streamsize>(buf.size()));
        }
        if (!out) throw InputError("write failed for '" + path.string() + "'");
    }

    static Checkpoint load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw InputError("cannot open '" + path.string() + "' for reading");
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
        if (bytes.size() < 10) throw CorruptionError("checkpoint truncated: " + path.string());
        if (std::string(bytes.begin(), bytes.begin() + 4) != "SCLP")
            throw CorruptionError("bad checkpoint magic in " + path.string());
        const std::uint16_t version =
            static_cast<std::uint16_t>(bytes[4] | (std::uint16_t(bytes[5]) << 8));
        if (version != kVersion)
            throw CorruptionError("unsupported checkpoint version " + std::to_string(version));
        const std::uint32_t mlen = static_cast<std::uint32_t>(
            bytes[6] | (std::uint32_t(bytes[7]) << 8) | (std::uint32_t(bytes[8]) << 16) |
            (std::uint32_t(bytes[9]) << 24));
        if (bytes.size() < 10 + static_cast<std::size_t>(mlen))
            throw CorruptionError("checkpoint manifest truncated: " + path.string());

        nlohmann::json manifest;
        try {
            manifest = nlohmann::json::parse(bytes.begin() + 10, bytes.begin() + 10 + mlen);
        } catch (const nlohmann::json::exception& e) {
            throw CorruptionError("checkpoint manifest is not valid JSON: " +
                                  std::string(e.what()));
        }
        if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
            throw CorruptionError("checkpoint manifest has no tensor table");

        const std::size_t blob_off = 10 + mlen;
        const std::size_t blob_count = (bytes.size() - blob_off) / 4;
        Checkpoint ck;
        ck.meta = manifest.value("meta", nlohmann::json::object());
        for (const auto& e : manifest["tensors"]) {
            try {
                TensorRecord t;
                t.name = e.at("name").get<std::string>();
                t.shape = e.at("shape").get<std::vector<i64>>();
                const std::uint64_t off = e.at("offset").get<std::uint64_t>();
                const std::uint64_t count = e.at("count").get<std::uint64_t>();
                std::size_t n = 1;
                for (i64 d : t.shape) {
                    if (d < 0) throw CorruptionError("negative dimension for '" + t.name + "'");
                    n *= static_cast<std::size_t>(d);
                }
                if (n != count)
                    throw CorruptionError("tensor '" + t.name + "': count disagrees with shape");
                if (off + count > blob_count)
                    throw CorruptionError("tensor '" + t.name + "' extends past end of blob");
                t.data.resize(count);
                const unsigned char* p = bytes.data() + blob_off + off * 4;
                for (std::size_t i = 0; i < count; ++i) {
                    const std::uint32_t u = static_cast<std::uint32_t>(
                        p[i * 4] | (std::uint32_t(p[i * 4 + 1]) << 8) |
                        (std::uint32_t(p[i * 4 + 2]) << 16) | (std::uint32_t(p[i * 4 + 3]) << 24));
                    t.data[i] = std::bit_cast<float>(u);
                }
                ck.tensors.push_back(std::move(t));
            } catch (const nlohmann::json::exception& e2) {
                throw CorruptionError("malformed tensor entry in manifest: " +
                                      std::string(e2.what()));
            }
        }
        return ck;
    }
};

}  // namespace scalpel
