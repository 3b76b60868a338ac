#pragma once

// Run manifests: every CLI output is traceable to the config hash, master
// seed, and derived per-stage seeds that produced it. Timestamps live only
// here; data outputs stay byte-reproducible.

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "shimforge/core.hpp"

namespace shimforge {

inline constexpr const char* kToolVersion = "0.1.0";

inline std::string config_hash(const nlohmann::json& config) {
    const std::string canon = config.dump();
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(canon);
    return os.str();
}

struct RunManifest {
    std::string command;
    nlohmann::json config;
    std::uint64_t master_seed = 0;
    std::map<std::string, std::uint64_t> stage_seeds;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["tool_version"] = kToolVersion;
        j["command"] = command;
        j["config"] = config;
        j["config_hash"] = config_hash(config);
        j["master_seed"] = master_seed;
        j["stage_seeds"] = stage_seeds;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        const auto now = std::chrono::system_clock::now();
        const std::time_t tt = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
        j["created_utc"] = buf;
        return j;
    }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot write manifest: " + path);
        out << to_json().dump(2) << '\n';
    }
};

}  // namespace shimforge
