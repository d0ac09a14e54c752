#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "teamlens/config.hpp"
#include "teamlens/crc32.hpp"
#include "teamlens/model.hpp"
#include "teamlens/stream_io.hpp"

namespace teamlens {

// ============================================================================
//  Checkpoint container (.spck)
//
//  "SPCK" | u32 LE version (= 1) | u32 LE header length | header JSON |
//  concatenated f32 LE tensor payloads | u32 LE CRC32 of the payload.
//
//  The header carries the full run config plus a tensor directory
//  {name, rows, cols, offset, teacher_only}. Teacher tensors are stored for
//  resumability but flagged so inference tooling can refuse to consume them.
// ============================================================================

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(Model<float>& model, const GlobalConfig& cfg,
                            const std::filesystem::path& path) {
    nlohmann::json dir = nlohmann::json::array();
    std::string payload;
    auto refs = model.param_refs();
    for (const auto& r : refs) {
        const auto& t = r.param->value;
        dir.push_back({{"name", r.name},
                       {"rows", t.rows},
                       {"cols", t.cols},
                       {"offset", payload.size()},
                       {"teacher_only", Model<float>::is_teacher_param(r.name)}});
        const std::size_t at = payload.size();
        payload.resize(at + t.size() * sizeof(float));
        std::memcpy(payload.data() + at, t.data.data(), t.size() * sizeof(float));
    }
    nlohmann::json header = {{"config", cfg}, {"tensors", dir}};
    const std::string header_str = header.dump();

    std::string out;
    out.append("SPCK", 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(header_str.size()));
    out += header_str;
    out += payload;
    detail::put_u32(out, crc32(payload.data(), payload.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("save_checkpoint: short write to " + path.string());
}

struct LoadedCheckpoint {
    GlobalConfig config;
    Model<float> model;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 + 4) throw std::runtime_error("load_checkpoint: truncated file");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (std::memcmp(p, "SPCK", 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
    if (detail::get_u32(p + 4) != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version");
    const std::uint32_t header_len = detail::get_u32(p + 8);
    if (bytes.size() < 12 + header_len + 4)
        throw std::runtime_error("load_checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(12, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("load_checkpoint: bad header JSON: ") + e.what());
    }

    const std::size_t payload_at = 12 + header_len;
    const std::size_t payload_len = bytes.size() - payload_at - 4;
    const std::uint32_t want_crc = detail::get_u32(p + payload_at + payload_len);
    if (crc32(bytes.data() + payload_at, payload_len) != want_crc)
        throw std::runtime_error("load_checkpoint: payload CRC mismatch");

    LoadedCheckpoint out;
    header.at("config").get_to(out.config);
    out.model.resize(out.config.fusion, out.config.distill);
    out.model.co_train_teacher = out.config.co_train_teacher;

    std::map<std::string, nlohmann::json> by_name;
    for (const auto& e : header.at("tensors")) by_name[e.at("name").get<std::string>()] = e;

    for (auto& r : out.model.param_refs()) {
        auto it = by_name.find(r.name);
        if (it == by_name.end())
            throw std::runtime_error("load_checkpoint: missing tensor " + r.name);
        const auto& e = it->second;
        const std::size_t rows = e.at("rows").get<std::size_t>();
        const std::size_t cols = e.at("cols").get<std::size_t>();
        auto& t = r.param->value;
        if (rows != t.rows || cols != t.cols)
            throw std::runtime_error("load_checkpoint: tensor " + r.name + " is " +
                                     std::to_string(rows) + "x" + std::to_string(cols) +
                                     " but the config implies " + t.shape_str());
        const std::size_t offset = e.at("offset").get<std::size_t>();
        if (offset + t.size() * sizeof(float) > payload_len)
            throw std::runtime_error("load_checkpoint: tensor " + r.name + " overruns payload");
        std::memcpy(t.data.data(), bytes.data() + payload_at + offset, t.size() * sizeof(float));
    }
    return out;
}

} // namespace teamlens
