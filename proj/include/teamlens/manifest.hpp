#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "teamlens/pose_log.hpp"
#include "teamlens/stream_io.hpp"

namespace teamlens {

// ============================================================================
//  Episode manifest: JSON file binding robots to their feature streams and
//  trajectory logs, plus the queries asked of the episode.
//
//  {
//    "episode_id": "...", "fps": 10, "n_frames": 256,
//    "robots":  [{"robot_id": 0, "clip_path": "...", "token_path": "...",
//                 "pose_path": "...", "controls_path": "..."}],
//    "queries": [{"query_path": "...", "answer_index": 2}]
//  }
//
//  Paths are relative to the manifest location. pose_path (ground truth,
//  privileged) and controls_path (commanded) are optional per robot.
//  answer_index is present on train/eval manifests and absent on inference
//  manifests.
// ============================================================================

struct RobotEntry {
    int robot_id = -1;
    std::filesystem::path clip_path;
    std::filesystem::path token_path;
    std::optional<std::filesystem::path> pose_path;     // ground truth (training only)
    std::optional<std::filesystem::path> controls_path; // commanded, inference-safe
};

struct QueryEntry {
    std::filesystem::path query_path;
    std::optional<int> answer_index; // 0..3 when present
};

struct EpisodeManifest {
    std::string episode_id;
    double fps = 0;
    std::size_t n_frames = 0;
    std::vector<RobotEntry> robots;
    std::vector<QueryEntry> queries;

    std::size_t n_robots() const { return robots.size(); }
};

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMaxRobots = 8;

namespace detail {

struct StreamHeader {
    StreamKind kind;
    std::uint32_t n_frames;
    std::uint32_t dim;
};

/// Header-only peek, used for eager cross-file validation without pulling
/// whole payloads.
inline StreamHeader read_stream_header(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ManifestError("manifest: missing file " + path.string());
    char buf[kStreamHeaderSize];
    f.read(buf, kStreamHeaderSize);
    if (f.gcount() != static_cast<std::streamsize>(kStreamHeaderSize))
        throw ManifestError("manifest: truncated stream " + path.string());
    const auto* p = reinterpret_cast<const unsigned char*>(buf);
    if (std::memcmp(p, "SPCR", 4) != 0)
        throw ManifestError("manifest: " + path.string() + " is not a feature stream");
    StreamHeader h;
    h.kind = static_cast<StreamKind>(p[8]);
    h.n_frames = get_u32(p + 12);
    h.dim = get_u32(p + 16);
    return h;
}

} // namespace detail

/// Parses and eagerly validates a manifest: team size in [1, 8], both stream
/// kinds present per robot, and a shared frame count across every referenced
/// stream. Never returns a partially valid episode.
inline EpisodeManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ManifestError("load_manifest: cannot open " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError("load_manifest: bad JSON in " + path.string() + ": " + e.what());
    }

    EpisodeManifest m;
    const auto base = path.parent_path();
    try {
        m.episode_id = j.at("episode_id").get<std::string>();
        m.fps = j.at("fps").get<double>();
        m.n_frames = j.at("n_frames").get<std::size_t>();
        for (const auto& jr : j.at("robots")) {
            RobotEntry r;
            r.robot_id = jr.at("robot_id").get<int>();
            r.clip_path = base / jr.at("clip_path").get<std::string>();
            r.token_path = base / jr.at("token_path").get<std::string>();
            if (jr.contains("pose_path") && !jr["pose_path"].is_null())
                r.pose_path = base / jr["pose_path"].get<std::string>();
            if (jr.contains("controls_path") && !jr["controls_path"].is_null())
                r.controls_path = base / jr["controls_path"].get<std::string>();
            m.robots.push_back(std::move(r));
        }
        for (const auto& jq : j.at("queries")) {
            QueryEntry q;
            q.query_path = base / jq.at("query_path").get<std::string>();
            if (jq.contains("answer_index") && !jq["answer_index"].is_null())
                q.answer_index = jq["answer_index"].get<int>();
            m.queries.push_back(std::move(q));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError("load_manifest: schema error in " + path.string() + ": " + e.what());
    }

    if (m.robots.empty() || m.robots.size() > kMaxRobots)
        throw ManifestError("load_manifest: team size " + std::to_string(m.robots.size()) +
                            " outside [1, " + std::to_string(kMaxRobots) + "] in " + path.string());
    if (m.n_frames < 1) throw ManifestError("load_manifest: n_frames must be >= 1");

    std::set<int> ids;
    for (const auto& r : m.robots) {
        if (r.robot_id < 0)
            throw ManifestError("load_manifest: negative robot_id in " + path.string());
        if (!ids.insert(r.robot_id).second)
            throw ManifestError("load_manifest: duplicate robot_id " + std::to_string(r.robot_id));
        const auto clip = detail::read_stream_header(r.clip_path);
        if (clip.kind != StreamKind::clip)
            throw ManifestError("load_manifest: " + r.clip_path.string() + " is not a clip stream");
        const auto tok = detail::read_stream_header(r.token_path);
        if (tok.kind != StreamKind::token)
            throw ManifestError("load_manifest: " + r.token_path.string() + " is not a token stream");
        if (clip.n_frames != m.n_frames || tok.n_frames != m.n_frames)
            throw ManifestError("load_manifest: robot " + std::to_string(r.robot_id) +
                                " streams disagree on n_frames (" + std::to_string(clip.n_frames) +
                                " clip, " + std::to_string(tok.n_frames) + " token, manifest says " +
                                std::to_string(m.n_frames) + ")");
    }
    for (const auto& q : m.queries) {
        const auto qh = detail::read_stream_header(q.query_path);
        if (qh.kind != StreamKind::query)
            throw ManifestError("load_manifest: " + q.query_path.string() + " is not a query stream");
        if (q.answer_index && (*q.answer_index < 0 || *q.answer_index > 3))
            throw ManifestError("load_manifest: answer_index out of [0,3]");
    }
    return m;
}

// ---------------------------------------------------------------------------
//  Fully loaded episode data
// ---------------------------------------------------------------------------

enum class LoadMode {
    inference, // privileged ground-truth pose logs are never opened
    training,
};

struct RobotData {
    int robot_id = -1;
    FeatureStream clip;
    FeatureStream tokens;
    std::optional<PoseLog> controls;
    std::optional<PoseLog> gt_pose; // only populated in training mode
};

struct EpisodeData {
    EpisodeManifest manifest;
    std::vector<RobotData> robots;
    std::vector<QueryEmbedding> queries;
};

inline EpisodeData load_episode(const EpisodeManifest& m, LoadMode mode) {
    EpisodeData ep;
    ep.manifest = m;
    for (const auto& r : m.robots) {
        RobotData rd;
        rd.robot_id = r.robot_id;
        rd.clip = read_stream(r.clip_path);
        rd.clip.robot_id = r.robot_id;
        rd.tokens = read_stream(r.token_path);
        rd.tokens.robot_id = r.robot_id;
        if (r.controls_path) {
            rd.controls = read_pose_log(*r.controls_path, /*ground_truth=*/false);
            if (rd.controls->n_frames() != m.n_frames)
                throw ManifestError("load_episode: controls log length " +
                                    std::to_string(rd.controls->n_frames()) + " != n_frames " +
                                    std::to_string(m.n_frames));
        }
        if (mode == LoadMode::training && r.pose_path) {
            rd.gt_pose = read_pose_log(*r.pose_path, /*ground_truth=*/true);
            if (rd.gt_pose->n_frames() != m.n_frames)
                throw ManifestError("load_episode: pose log length mismatch for robot " +
                                    std::to_string(r.robot_id));
        }
        ep.robots.push_back(std::move(rd));
    }
    for (const auto& q : m.queries) ep.queries.push_back(read_query(q.query_path));
    return ep;
}

inline EpisodeData load_episode(const std::filesystem::path& manifest_path, LoadMode mode) {
    return load_episode(load_manifest(manifest_path), mode);
}

} // namespace teamlens
