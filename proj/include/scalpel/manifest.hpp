#pragma once

// Run provenance record written by every command: what ran, with which exact
// configuration, over which input bytes, producing which files. Contains no
// timestamps so reruns with identical flags produce identical manifests.

#include <fstream>

#include <nlohmann/json.hpp>

#include "scalpel/config.hpp"
#include "scalpel/hash.hpp"

namespace scalpel {

inline constexpr const char* kVersionString = "scalpel-0.1.0";

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot read " + path.string());
    Sha256 h;
    char buf[1 << 16];
    while (is.read(buf, sizeof buf) || is.gcount() > 0)
        h.update(buf, static_cast<std::size_t>(is.gcount()));
    return h.hex();
}

struct RunManifest {
    std::string command;
    Config config;  // effective configuration, flag overrides already applied
    std::vector<std::pair<std::string, std::string>> inputs;  // path, sha256
    std::vector<std::string> outputs;

    // Identity of the run: digest of the command and its exact effective
    // configuration. Same command + same config = same id, always.
    std::string run_id() const {
        return sha256_hex(command + "\n" + config.canonical());
    }

    void add_input(const std::filesystem::path& path) {
        inputs.emplace_back(path.string(), sha256_file(path));
    }

    void add_output(const std::filesystem::path& path) { outputs.push_back(path.string()); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["run_id"] = run_id();
        j["version"] = kVersionString;
        j["command"] = command;
        nlohmann::json cfg = nlohmann::json::object();
        for (const auto& [k, v] : config.entries()) cfg[k] = v;
        j["config"] = cfg;
        nlohmann::json ins = nlohmann::json::array();
        for (const auto& [path, digest] : inputs)
            ins.push_back({{"path", path}, {"sha256", digest}});
        j["inputs"] = ins;
        j["outputs"] = outputs;
        return j;
    }

    // A manifest only makes sense once the run succeeded, so every recorded
    // output must exist by the time it is written.
    void save(const std::filesystem::path& path) const {
        for (const auto& out : outputs)
            if (!std::filesystem::exists(out))
                throw InternalError("manifest lists missing output file " + out);
        std::ofstream os(path);
        if (!os) throw InputError("cannot write " + path.string());
        os << to_json().dump(2) << '\n';
    }
};

}  // namespace scalpel
