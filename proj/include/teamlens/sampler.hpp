#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "teamlens/fft.hpp"
#include "teamlens/manifest.hpp"
#include "teamlens/tensor.hpp"

namespace teamlens {

// ============================================================================
//  Training-free two-stage frame sampler.
//
//  Stage 1 scores every frame by query similarity and keeps the top-M
//  candidates. Stage 2 ranks candidates by local temporal-spectrum energy
//  (optionally plus the standardized similarity) and keeps the top-K.
//  No learned parameters anywhere; identical inputs give identical output.
// ============================================================================

struct SamplerConfig {
    std::size_t candidate_budget = 32; // M
    std::size_t window = 4;            // w
    std::size_t select_budget = 8;     // K
    std::size_t n_bands = 0;           // B; 0 means one band per non-DC bin
    bool use_semantic_refine = true;   // rank by energy + standardized similarity
    bool use_spectral_energy = true;   // off: similarity-only ranking (ablation)

    std::size_t bands() const { return n_bands == 0 ? window / 2 : n_bands; }

    void validate() const {
        if (window < 2) throw std::invalid_argument("SamplerConfig: window must be >= 2");
        if (select_budget < 1 || select_budget > candidate_budget)
            throw std::invalid_argument("SamplerConfig: need 1 <= K <= M, got K=" +
                                        std::to_string(select_budget) + " M=" +
                                        std::to_string(candidate_budget));
        if (bands() < 1 || bands() > window / 2)
            throw std::invalid_argument("SamplerConfig: bands must be in [1, window/2]");
        if (!use_spectral_energy && !use_semantic_refine)
            throw std::invalid_argument("SamplerConfig: at least one ranking term must be enabled");
    }
};

/// Per-frame scores for one robot. Spectral quantities are defined only on
/// the candidate set and stored candidate-aligned.
template <typename T>
struct FrameScores {
    std::vector<T> semantic;             // similarity, all frames
    std::vector<std::size_t> candidates; // ascending frame indices
    std::vector<T> energy;               // per candidate
    std::vector<T> energy_std;           // standardized within candidates
    std::vector<T> semantic_std;         // standardized within candidates
    std::vector<T> rank_score;           // per candidate
};

struct Selection {
    struct RobotSelection {
        int robot_id = -1;
        std::vector<std::size_t> frames; // strictly ascending
    };
    std::vector<RobotSelection> per_robot;

    bool operator==(const Selection& o) const {
        if (per_robot.size() != o.per_robot.size()) return false;
        for (std::size_t i = 0; i < per_robot.size(); ++i)
            if (per_robot[i].robot_id != o.per_robot[i].robot_id ||
                per_robot[i].frames != o.per_robot[i].frames)
                return false;
        return true;
    }
};

// ----------------------------------------------------------------------------
//  stage 1: query similarity
// ----------------------------------------------------------------------------

/// s_t = <frame_t, query>. Both sides are unit-norm so s_t lands in [-1, 1]
/// up to the normalization tolerance.
template <typename T>
std::vector<T> semantic_scores(const Tensor2<T>& frames, std::span<const T> query) {
    if (frames.cols != query.size())
        throw std::invalid_argument("semantic_scores: frame dim " + std::to_string(frames.cols) +
                                    " != query dim " + std::to_string(query.size()));
    std::vector<T> s(frames.rows);
    for (std::size_t t = 0; t < frames.rows; ++t) {
        T acc = T(0);
        const T* row = frames.data.data() + t * frames.cols;
        for (std::size_t j = 0; j < frames.cols; ++j) acc += row[j] * query[j];
        s[t] = acc;
    }
    return s;
}

/// Indices of the min(M, T) highest scores, ties to the smaller frame index,
/// returned ascending.
template <typename T>
std::vector<std::size_t> top_m_candidates(const std::vector<T>& scores, std::size_t m) {
    if (m < 1) throw std::invalid_argument("top_m_candidates: M must be >= 1");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    idx.resize(std::min(m, scores.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
}

// ----------------------------------------------------------------------------
//  stage 2: windowed temporal spectrum energy
// ----------------------------------------------------------------------------

/// Stacks the length-w window whose rows cover t - w/2 .. t - w/2 + w - 1,
/// replicating boundary frames, and removes the per-column window mean.
template <typename T>
Tensor2<T> centered_window(const Tensor2<T>& frames, std::size_t t, std::size_t w) {
    const std::ptrdiff_t first = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(w / 2);
    const std::ptrdiff_t last_valid = static_cast<std::ptrdiff_t>(frames.rows) - 1;
    Tensor2<T> win(w, frames.cols);
    for (std::size_t i = 0; i < w; ++i) {
        std::ptrdiff_t src = first + static_cast<std::ptrdiff_t>(i);
        src = std::clamp<std::ptrdiff_t>(src, 0, last_valid);
        const T* row = frames.data.data() + static_cast<std::size_t>(src) * frames.cols;
        std::copy(row, row + frames.cols, win.data.data() + i * frames.cols);
    }
    for (std::size_t j = 0; j < win.cols; ++j) {
        T mean = T(0);
        for (std::size_t i = 0; i < w; ++i) mean += win.at(i, j);
        mean /= T(w);
        for (std::size_t i = 0; i < w; ++i) win.at(i, j) -= mean;
    }
    return win;
}

/// Scalar motion energy of the window at frame t: the DC bin of the
/// mean-removed window spectrum is dropped, the remaining bins are pooled
/// into B contiguous bands, and e = sum_k log(1 + band_k / d).
template <typename T>
T window_fft_energy(const Tensor2<T>& frames, std::size_t t, const SamplerConfig& cfg) {
    const Tensor2<T> win = centered_window(frames, t, cfg.window);
    const std::vector<T> bins = rfft_mag_sq(win);
    const std::size_t n_ac = bins.size() - 1; // non-DC bins, = floor(w/2)
    const std::size_t b = cfg.bands();
    const std::size_t width = n_ac / b;
    const T inv_d = T(1) / T(frames.cols);
    T e = T(0);
    for (std::size_t band = 0; band < b; ++band) {
        const std::size_t lo = 1 + band * width;
        const std::size_t hi = (band + 1 == b) ? bins.size() : lo + width;
        T acc = T(0);
        for (std::size_t k = lo; k < hi; ++k) acc += bins[k];
        e += std::log1p(acc * inv_d);
    }
    return e;
}

/// Z-scores values over their own set, population (1/n) std. A zero-variance
/// or singleton set maps to all zeros.
template <typename T>
std::vector<T> standardize_within(const std::vector<T>& values) {
    if (values.empty()) throw std::invalid_argument("standardize_within: empty set");
    T mean = T(0);
    for (T v : values) mean += v;
    mean /= T(values.size());
    T var = T(0);
    for (T v : values) var += (v - mean) * (v - mean);
    var /= T(values.size());
    std::vector<T> out(values.size(), T(0));
    if (var > T(0)) {
        const T inv_std = T(1) / std::sqrt(var);
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) * inv_std;
    }
    return out;
}

/// Top-min(K, |C|) candidates by rank score, ties to the smaller frame index,
/// returned ascending.
template <typename T>
std::vector<std::size_t> rank_and_select(const std::vector<std::size_t>& candidates,
                                         const std::vector<T>& rank_score, std::size_t k) {
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rank_score[a] > rank_score[b]; });
    order.resize(std::min(k, candidates.size()));
    std::vector<std::size_t> frames;
    frames.reserve(order.size());
    for (std::size_t o : order) frames.push_back(candidates[o]);
    std::sort(frames.begin(), frames.end());
    return frames;
}

/// Full two-stage scoring for one robot stream.
template <typename T>
FrameScores<T> score_frames(const Tensor2<T>& frames, std::span<const T> query,
                            const SamplerConfig& cfg) {
    cfg.validate();
    FrameScores<T> fs;
    fs.semantic = semantic_scores(frames, query);
    fs.candidates = top_m_candidates(fs.semantic, cfg.candidate_budget);

    std::vector<T> sem_on_c(fs.candidates.size());
    for (std::size_t i = 0; i < fs.candidates.size(); ++i)
        sem_on_c[i] = fs.semantic[fs.candidates[i]];
    fs.semantic_std = standardize_within(sem_on_c);

    fs.energy.resize(fs.candidates.size(), T(0));
    if (cfg.use_spectral_energy) {
        // Spectrum energy is evaluated on the candidate set only.
        for (std::size_t i = 0; i < fs.candidates.size(); ++i)
            fs.energy[i] = window_fft_energy(frames, fs.candidates[i], cfg);
    }
    fs.energy_std = standardize_within(fs.energy);

    fs.rank_score.assign(fs.candidates.size(), T(0));
    for (std::size_t i = 0; i < fs.candidates.size(); ++i) {
        if (cfg.use_spectral_energy) fs.rank_score[i] += fs.energy_std[i];
        if (cfg.use_semantic_refine) fs.rank_score[i] += fs.semantic_std[i];
    }
    return fs;
}

template <typename T>
std::vector<std::size_t> select_frames(const Tensor2<T>& frames, std::span<const T> query,
                                       const SamplerConfig& cfg) {
    const FrameScores<T> fs = score_frames(frames, query, cfg);
    return rank_and_select(fs.candidates, fs.rank_score, cfg.select_budget);
}

/// Samples every robot stream independently, in manifest order. The working
/// precision T is promoted from the stored f32 data.
template <typename T = double>
Selection run_sampler(const EpisodeData& ep, const QueryEmbedding& query,
                      const SamplerConfig& cfg) {
    cfg.validate();
    std::vector<T> q(query.data.begin(), query.data.end());
    Selection sel;
    for (const auto& robot : ep.robots) {
        const Tensor2<T> frames = robot.clip.data.template cast<T>();
        Selection::RobotSelection rs;
        rs.robot_id = robot.robot_id;
        rs.frames = select_frames<T>(frames, q, cfg);
        sel.per_robot.push_back(std::move(rs));
    }
    return sel;
}

// ----------------------------------------------------------------------------
//  selection file I/O
// ----------------------------------------------------------------------------

inline nlohmann::json sampler_config_json(const SamplerConfig& cfg) {
    return nlohmann::json{{"candidate_budget", cfg.candidate_budget},
                          {"window", cfg.window},
                          {"select_budget", cfg.select_budget},
                          {"n_bands", cfg.bands()},
                          {"use_semantic_refine", cfg.use_semantic_refine},
                          {"use_spectral_energy", cfg.use_spectral_energy}};
}

inline void write_selection(const Selection& sel, const std::string& episode_id,
                            const std::string& query_path, const SamplerConfig& cfg,
                            const std::filesystem::path& path) {
    nlohmann::json j;
    j["episode_id"] = episode_id;
    j["query_path"] = query_path;
    j["config"] = sampler_config_json(cfg);
    auto& arr = j["per_robot"] = nlohmann::json::array();
    for (const auto& rs : sel.per_robot)
        arr.push_back({{"robot_id", rs.robot_id}, {"frames", rs.frames}});
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_selection: cannot open " + path.string());
    f << j.dump(2) << "\n";
}

inline Selection read_selection(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_selection: cannot open " + path.string());
    nlohmann::json j;
    f >> j;
    Selection sel;
    for (const auto& jr : j.at("per_robot")) {
        Selection::RobotSelection rs;
        rs.robot_id = jr.at("robot_id").get<int>();
        rs.frames = jr.at("frames").get<std::vector<std::size_t>>();
        sel.per_robot.push_back(std::move(rs));
    }
    return sel;
}

} // namespace teamlens
