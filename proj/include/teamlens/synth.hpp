#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "teamlens/manifest.hpp"
#include "teamlens/pose_log.hpp"
#include "teamlens/rng.hpp"
#include "teamlens/sampler.hpp"
#include "teamlens/stream_io.hpp"

namespace teamlens {

// ============================================================================
//  Deterministic synthetic episodes with planted, query-aligned motion
//  events. Every episode answers one four-way question: which robot observed
//  the queried event. The generator plants
//    - in clip space: an alternating-sign burst along the query direction
//      (all of its energy in the top frequency band) plus wide, smooth
//      "decoy" stretches of query-lookalike static content whose similarity
//      beats the event's, so similarity-only ranking is fooled while
//      spectrum ranking is not;
//    - in token space: a strong marker (constant + alternating parts) on the
//      answer robot, so fusion over sampled tokens can identify it;
//    - in the pose logs: a forward-velocity spike over the event frames.
//  All randomness flows through the fixed splitmix64/xoshiro256** stack.
// ============================================================================

struct SynthConfig {
    std::uint64_t seed = 7;
    std::size_t n_frames = 256; // T
    std::size_t n_robots = 2;
    std::size_t d_clip = 32;
    std::size_t d_token = 32;
    std::size_t events_per_robot = 2;
    std::size_t event_width = 6;
    double noise_std = 0.05;
    double clip_burst = 0.35;
    double token_burst = 1.0;
    std::size_t decoys_per_robot = 1; // query-lookalike static stretches
    std::size_t decoy_width = 17;
    double decoy_amplitude = 0.7;
    double fps = 10.0;
    std::size_t id_pool = 0; // 0: ids are 0..N-1; else N distinct ids from [0, id_pool)

    void validate() const {
        if (n_robots < 1 || n_robots > kMaxRobots)
            throw std::invalid_argument("SynthConfig: n_robots outside [1,8]");
        if (event_width < 2) throw std::invalid_argument("SynthConfig: event_width must be >= 2");
        if (n_frames < 1) throw std::invalid_argument("SynthConfig: n_frames must be >= 1");
        if (events_per_robot >= 1 && n_frames < 4 * event_width * events_per_robot)
            throw std::invalid_argument("SynthConfig: events do not fit in " +
                                        std::to_string(n_frames) + " frames without overlap");
        if (id_pool != 0 && id_pool < n_robots)
            throw std::invalid_argument("SynthConfig: id_pool smaller than team");
        if (id_pool > kMaxRobots) throw std::invalid_argument("SynthConfig: id_pool exceeds 8");
        if (d_clip < 2 || d_token < 2) throw std::invalid_argument("SynthConfig: feature dim < 2");
    }
};

struct PlantedEvent {
    int robot_id = -1;
    std::size_t t_center = 0;
    std::size_t width = 0;
    double amplitude = 0;
    bool query_aligned = false;
};

struct EpisodeBundle {
    SynthConfig cfg;
    EpisodeData data; // in-memory; manifest paths are filled by write_episode
    QueryEmbedding query;
    std::vector<PlantedEvent> events;
    int answer_robot_id = -1;
};

namespace synth_detail {

inline constexpr std::size_t kEventTypes = 16;

// Stable direction tables: derived from fixed salts, independent of the
// episode seed, so identity and event signatures transfer across episodes.
inline std::vector<double> unit_direction(std::uint64_t salt, std::size_t dim) {
    Xoshiro256 rng(salt);
    std::vector<double> v(dim);
    double sq = 0;
    for (auto& x : v) {
        x = rng.normal();
        sq += x * x;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& x : v) x *= inv;
    return v;
}

inline std::vector<double> clip_base(int robot_id, std::size_t dim) {
    return unit_direction(0xC11Bu * 1000003ULL + static_cast<std::uint64_t>(robot_id), dim);
}
inline std::vector<double> token_base(int robot_id, std::size_t dim) {
    return unit_direction(0x70CBu * 1000003ULL + static_cast<std::uint64_t>(robot_id), dim);
}
inline std::vector<double> event_type_dir(std::size_t type, std::size_t dim) {
    return unit_direction(0xEE17u * 1000003ULL + type, dim);
}
inline std::vector<double> token_marker(int which, std::size_t dim) {
    return unit_direction(0x3A8Bu * 1000003ULL + static_cast<std::uint64_t>(which), dim);
}

inline double vdot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline void vnormalize(std::vector<double>& v) {
    const double n = std::sqrt(vdot(v, v));
    for (auto& x : v) x /= n;
}

} // namespace synth_detail

/// Builds the full episode in memory. Identical configs give identical
/// bundles, bit for bit, on any platform.
inline EpisodeBundle generate_episode(const SynthConfig& cfg) {
    using namespace synth_detail;
    cfg.validate();
    std::uint64_t sm = cfg.seed;
    Xoshiro256 rng(splitmix64_next(sm));

    const std::size_t t_total = cfg.n_frames;
    const std::size_t n = cfg.n_robots;

    EpisodeBundle out;
    out.cfg = cfg;

    // robot identities
    std::vector<int> ids;
    if (cfg.id_pool == 0) {
        for (std::size_t r = 0; r < n; ++r) ids.push_back(static_cast<int>(r));
    } else {
        std::vector<int> pool(cfg.id_pool);
        std::iota(pool.begin(), pool.end(), 0);
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t j = r + static_cast<std::size_t>(rng.below(pool.size() - r));
            std::swap(pool[r], pool[j]);
            ids.push_back(pool[r]);
        }
        std::sort(ids.begin(), ids.end());
    }

    // query: a perturbed event-type direction, kept close to the type axis
    const std::size_t event_type = static_cast<std::size_t>(rng.below(kEventTypes));
    const std::vector<double> aligned_dir = event_type_dir(event_type, cfg.d_clip);
    std::vector<double> query(cfg.d_clip);
    for (int attempt = 0; attempt < 64; ++attempt) {
        for (std::size_t i = 0; i < cfg.d_clip; ++i)
            query[i] = aligned_dir[i] + 0.05 * rng.normal();
        vnormalize(query);
        if (vdot(query, aligned_dir) >= 0.8) break;
    }

    // which robot holds the queried event; the answer id must be a valid
    // four-way choice
    std::vector<std::size_t> eligible;
    for (std::size_t r = 0; r < n; ++r)
        if (ids[r] < 4) eligible.push_back(r);
    if (eligible.empty())
        throw std::invalid_argument("generate_episode: no robot with id < 4 can hold the answer");
    const std::size_t answer_slot = eligible[static_cast<std::size_t>(rng.below(eligible.size()))];
    out.answer_robot_id = ids[answer_slot];

    // plant events: non-overlapping within each robot, centered away from
    // the stream edges
    const bool want_events = cfg.events_per_robot > 0 && t_total >= 4 * cfg.event_width;
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<std::size_t> centers;
        const std::size_t margin = cfg.event_width;
        for (std::size_t e = 0; want_events && e < cfg.events_per_robot; ++e) {
            bool placed = false;
            for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
                const std::size_t c =
                    margin + static_cast<std::size_t>(rng.below(t_total - 2 * margin));
                bool ok = true;
                for (std::size_t o : centers)
                    if (static_cast<std::size_t>(std::abs(static_cast<long>(c) -
                                                          static_cast<long>(o))) <
                        2 * cfg.event_width)
                        ok = false;
                if (ok) {
                    centers.push_back(c);
                    placed = true;
                }
            }
            if (!placed)
                throw std::invalid_argument("generate_episode: cannot place events without overlap");
        }
        for (std::size_t e = 0; e < centers.size(); ++e) {
            PlantedEvent ev;
            ev.robot_id = ids[r];
            ev.t_center = centers[e];
            ev.width = cfg.event_width;
            ev.amplitude = cfg.clip_burst;
            ev.query_aligned = (r == answer_slot && e == 0);
            out.events.push_back(ev);
        }
    }

    // decoy placement, kept clear of the events
    std::vector<std::vector<std::size_t>> decoy_centers(n);
    const bool want_decoys = cfg.decoys_per_robot > 0 && t_total >= 4 * cfg.decoy_width;
    if (want_decoys) {
        const std::size_t margin = cfg.decoy_width / 2 + 1;
        const std::size_t clearance = cfg.decoy_width / 2 + 2 * cfg.event_width;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t e = 0; e < cfg.decoys_per_robot; ++e) {
                for (int attempt = 0; attempt < 1000; ++attempt) {
                    const std::size_t c =
                        margin + static_cast<std::size_t>(rng.below(t_total - 2 * margin));
                    bool ok = true;
                    for (const auto& ev : out.events)
                        if (ev.robot_id == ids[r] &&
                            std::abs(static_cast<long>(c) - static_cast<long>(ev.t_center)) <
                                static_cast<long>(clearance))
                            ok = false;
                    for (std::size_t o : decoy_centers[r])
                        if (std::abs(static_cast<long>(c) - static_cast<long>(o)) <
                            static_cast<long>(cfg.decoy_width))
                            ok = false;
                    if (ok) {
                        decoy_centers[r].push_back(c);
                        break;
                    }
                }
            }
        }
    }

    // per-robot streams and logs
    const double dt = 1.0 / cfg.fps;
    for (std::size_t r = 0; r < n; ++r) {
        const int id = ids[r];
        const std::vector<double> cbase = clip_base(id, cfg.d_clip);
        const std::vector<double> tbase = token_base(id, cfg.d_token);
        const std::vector<double> mark_c = token_marker(0, cfg.d_token);
        const std::vector<double> mark_a = token_marker(1, cfg.d_token);
        const std::vector<double> dist_c = token_marker(2, cfg.d_token);
        const std::vector<double> dist_a = token_marker(3, cfg.d_token);

        // events of this robot, with a clip-space direction each
        struct LocalEvent {
            std::size_t center;
            bool aligned;
            std::vector<double> dir;
        };
        std::vector<LocalEvent> local;
        for (const auto& ev : out.events) {
            if (ev.robot_id != id) continue;
            LocalEvent le;
            le.center = ev.t_center;
            le.aligned = ev.query_aligned;
            if (ev.query_aligned) {
                le.dir = aligned_dir;
            } else {
                // distractor: orthogonal to the query, so it cannot win on
                // similarity
                le.dir.resize(cfg.d_clip);
                for (auto& x : le.dir) x = rng.normal();
                const double proj = vdot(le.dir, query);
                for (std::size_t i = 0; i < cfg.d_clip; ++i) le.dir[i] -= proj * query[i];
                vnormalize(le.dir);
            }
            local.push_back(std::move(le));
        }

        Tensor2<float> clip(t_total, cfg.d_clip);
        Tensor2<float> tokens(t_total, cfg.d_token);
        std::vector<double> crow(cfg.d_clip), trow(cfg.d_token);
        for (std::size_t t = 0; t < t_total; ++t) {
            for (std::size_t i = 0; i < cfg.d_clip; ++i)
                crow[i] = cbase[i] + cfg.noise_std * rng.normal();
            for (std::size_t i = 0; i < cfg.d_token; ++i)
                trow[i] = tbase[i] + cfg.noise_std * rng.normal();
            for (std::size_t c : decoy_centers[r]) {
                const long off = static_cast<long>(t) - static_cast<long>(c);
                const long half = static_cast<long>(cfg.decoy_width / 2);
                if (off < -half || off > half) continue;
                // smooth raised-cosine envelope: strong similarity, almost
                // no energy above the local window mean
                const double env = std::cos(kPi * 0.5 * double(off) / double(half + 1));
                const double amp = cfg.decoy_amplitude * env * env;
                for (std::size_t i = 0; i < cfg.d_clip; ++i) crow[i] += amp * query[i];
            }
            for (const auto& le : local) {
                const std::size_t first = le.center - cfg.event_width / 2;
                if (t < first || t >= first + cfg.event_width) continue;
                const double sign = ((t - le.center) % 2 == 0) ? 1.0 : -1.0;
                for (std::size_t i = 0; i < cfg.d_clip; ++i)
                    crow[i] += cfg.clip_burst * sign * le.dir[i];
                const auto& cm = le.aligned ? mark_c : dist_c;
                const auto& am = le.aligned ? mark_a : dist_a;
                for (std::size_t i = 0; i < cfg.d_token; ++i)
                    trow[i] += cfg.token_burst * (0.6 * cm[i] + 0.4 * sign * am[i]);
            }
            double sq = 0;
            for (double v : crow) sq += v * v;
            const double inv = 1.0 / std::sqrt(sq);
            for (std::size_t i = 0; i < cfg.d_clip; ++i)
                clip.at(t, i) = static_cast<float>(crow[i] * inv);
            for (std::size_t i = 0; i < cfg.d_token; ++i)
                tokens.at(t, i) = static_cast<float>(trow[i]);
        }

        // smooth 2-D motion with velocity spikes over event frames
        PoseLog gt;
        double x = rng.uniform(-3.0, 3.0);
        double y = rng.uniform(-3.0, 3.0);
        double heading = wrap_angle(rng.uniform(-kPi, kPi));
        for (std::size_t t = 0; t < t_total; ++t) {
            double v_fwd = 0.5 + 0.1 * rng.normal();
            if (v_fwd < 0) v_fwd = 0;
            const double v_ang = 0.2 * rng.normal();
            for (const auto& le : local) {
                const std::size_t first = le.center - cfg.event_width / 2;
                if (t >= first && t < first + cfg.event_width) v_fwd *= 3.0;
            }
            gt.rows.push_back({x, y, heading, v_fwd, v_ang});
            x += std::cos(heading) * v_fwd * dt;
            y += std::sin(heading) * v_fwd * dt;
            heading = wrap_angle(heading + v_ang * dt);
        }
        PoseLog ctrl;
        for (const auto& row : gt.rows) {
            PoseRow c = row;
            c.x += 0.02 * rng.normal();
            c.y += 0.02 * rng.normal();
            c.heading = wrap_angle(c.heading + 0.02 * rng.normal());
            c.v_fwd += 0.02 * rng.normal();
            c.v_ang += 0.02 * rng.normal();
            ctrl.rows.push_back(c);
        }

        RobotData rd;
        rd.robot_id = id;
        rd.clip.robot_id = id;
        rd.clip.kind = StreamKind::clip;
        rd.clip.data = std::move(clip);
        rd.tokens.robot_id = id;
        rd.tokens.kind = StreamKind::token;
        rd.tokens.data = std::move(tokens);
        rd.controls = std::move(ctrl);
        rd.gt_pose = std::move(gt);
        out.data.robots.push_back(std::move(rd));
    }

    out.query.data.resize(cfg.d_clip);
    for (std::size_t i = 0; i < cfg.d_clip; ++i) out.query.data[i] = static_cast<float>(query[i]);
    out.data.queries.push_back(out.query);

    out.data.manifest.episode_id = "ep" + std::to_string(cfg.seed);
    out.data.manifest.fps = cfg.fps;
    out.data.manifest.n_frames = t_total;
    for (int id : ids) {
        RobotEntry re;
        re.robot_id = id;
        out.data.manifest.robots.push_back(re);
    }
    QueryEntry qe;
    qe.answer_index = out.answer_robot_id;
    out.data.manifest.queries.push_back(qe);
    return out;
}

/// Writes the bundle as a standard on-disk episode directory and returns the
/// manifest path.
inline std::filesystem::path write_episode(const EpisodeBundle& b,
                                           const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json mj;
    mj["episode_id"] = b.data.manifest.episode_id;
    mj["fps"] = b.data.manifest.fps;
    mj["n_frames"] = b.data.manifest.n_frames;
    auto& robots = mj["robots"] = nlohmann::json::array();
    for (const auto& rd : b.data.robots) {
        const std::string stem = "robot" + std::to_string(rd.robot_id);
        FeatureStream clip = rd.clip;
        write_stream(clip, dir / (stem + "_clip.spcr"));
        FeatureStream tok = rd.tokens;
        write_stream(tok, dir / (stem + "_tok.spcr"));
        write_pose_log(*rd.gt_pose, dir / (stem + "_pose.csv"));
        write_pose_log(*rd.controls, dir / (stem + "_ctrl.csv"));
        robots.push_back({{"robot_id", rd.robot_id},
                          {"clip_path", stem + "_clip.spcr"},
                          {"token_path", stem + "_tok.spcr"},
                          {"pose_path", stem + "_pose.csv"},
                          {"controls_path", stem + "_ctrl.csv"}});
    }
    write_query(b.query, dir / "query0.spcr");
    auto& queries = mj["queries"] = nlohmann::json::array();
    queries.push_back({{"query_path", "query0.spcr"},
                       {"answer_index", b.answer_robot_id}});

    const fs::path manifest_path = dir / "manifest.json";
    std::ofstream f(manifest_path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_episode: cannot open " + manifest_path.string());
    f << mj.dump(2) << "\n";
    return manifest_path;
}

// ----------------------------------------------------------------------------
//  naive reference sampler (oracle)
// ----------------------------------------------------------------------------

/// Direct O(T w d) restatement of the two-stage sampler: full sorts, complex
/// DFT, double precision throughout. Deliberately shares no code with the
/// production path beyond the config struct.
inline Selection reference_sampler(const EpisodeData& ep, const QueryEmbedding& q,
                                   const SamplerConfig& cfg) {
    cfg.validate();
    Selection sel;
    const std::size_t w = cfg.window;
    for (const auto& robot : ep.robots) {
        const auto& clip = robot.clip.data;
        const std::size_t t_total = clip.rows;
        const std::size_t d = clip.cols;

        std::vector<double> sim(t_total, 0.0);
        for (std::size_t t = 0; t < t_total; ++t)
            for (std::size_t j = 0; j < d; ++j)
                sim[t] += static_cast<double>(clip.at(t, j)) * static_cast<double>(q.data[j]);

        // top-M by full sort, ties to the smaller index
        std::vector<std::size_t> order(t_total);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (sim[a] != sim[b]) return sim[a] > sim[b];
            return a < b;
        });
        std::vector<std::size_t> cand(order.begin(),
                                      order.begin() + std::min(cfg.candidate_budget, t_total));
        std::sort(cand.begin(), cand.end());

        // windowed spectrum energy per candidate
        std::vector<double> energy(cand.size(), 0.0);
        if (cfg.use_spectral_energy) {
            for (std::size_t ci = 0; ci < cand.size(); ++ci) {
                const long first = static_cast<long>(cand[ci]) - static_cast<long>(w / 2);
                std::vector<std::vector<double>> win(w, std::vector<double>(d));
                for (std::size_t i = 0; i < w; ++i) {
                    long src = first + static_cast<long>(i);
                    if (src < 0) src = 0;
                    if (src >= static_cast<long>(t_total)) src = static_cast<long>(t_total) - 1;
                    for (std::size_t j = 0; j < d; ++j)
                        win[i][j] = clip.at(static_cast<std::size_t>(src), j);
                }
                for (std::size_t j = 0; j < d; ++j) {
                    double mean = 0;
                    for (std::size_t i = 0; i < w; ++i) mean += win[i][j];
                    mean /= static_cast<double>(w);
                    for (std::size_t i = 0; i < w; ++i) win[i][j] -= mean;
                }
                const std::size_t nb = w / 2 + 1;
                std::vector<double> bins(nb, 0.0);
                for (std::size_t k = 0; k < nb; ++k)
                    for (std::size_t j = 0; j < d; ++j) {
                        std::complex<double> acc(0, 0);
                        for (std::size_t i = 0; i < w; ++i) {
                            const double ang = -kTwoPi * static_cast<double>(k) *
                                               static_cast<double>(i) / static_cast<double>(w);
                            acc += win[i][j] * std::complex<double>(std::cos(ang), std::sin(ang));
                        }
                        bins[k] += std::norm(acc);
                    }
                const std::size_t n_ac = nb - 1;
                const std::size_t bands = cfg.bands();
                const std::size_t width = n_ac / bands;
                double e = 0;
                for (std::size_t band = 0; band < bands; ++band) {
                    const std::size_t lo = 1 + band * width;
                    const std::size_t hi = (band + 1 == bands) ? nb : lo + width;
                    double acc = 0;
                    for (std::size_t k = lo; k < hi; ++k) acc += bins[k];
                    e += std::log1p(acc / static_cast<double>(d));
                }
                energy[ci] = e;
            }
        }

        auto zscore = [](const std::vector<double>& v) {
            double mean = 0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double var = 0;
            for (double x : v) var += (x - mean) * (x - mean);
            var /= static_cast<double>(v.size());
            std::vector<double> out(v.size(), 0.0);
            if (var > 0) {
                const double inv = 1.0 / std::sqrt(var);
                for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) * inv;
            }
            return out;
        };

        std::vector<double> sim_c(cand.size());
        for (std::size_t i = 0; i < cand.size(); ++i) sim_c[i] = sim[cand[i]];
        const std::vector<double> sim_z = zscore(sim_c);
        const std::vector<double> energy_z = zscore(energy);

        std::vector<double> rho(cand.size(), 0.0);
        for (std::size_t i = 0; i < cand.size(); ++i) {
            if (cfg.use_spectral_energy) rho[i] += energy_z[i];
            if (cfg.use_semantic_refine) rho[i] += sim_z[i];
        }

        std::vector<std::size_t> pick(cand.size());
        std::iota(pick.begin(), pick.end(), 0);
        std::sort(pick.begin(), pick.end(), [&](std::size_t a, std::size_t b) {
            if (rho[a] != rho[b]) return rho[a] > rho[b];
            return cand[a] < cand[b];
        });
        pick.resize(std::min(cfg.select_budget, cand.size()));

        Selection::RobotSelection rs;
        rs.robot_id = robot.robot_id;
        for (std::size_t i : pick) rs.frames.push_back(cand[i]);
        std::sort(rs.frames.begin(), rs.frames.end());
        sel.per_robot.push_back(std::move(rs));
    }
    return sel;
}

// ----------------------------------------------------------------------------
//  recall against the planted events
// ----------------------------------------------------------------------------

struct RecallReport {
    std::size_t n_aligned = 0;
    std::size_t n_hit = 0;
    double recall() const {
        return n_aligned == 0 ? 1.0 : static_cast<double>(n_hit) / static_cast<double>(n_aligned);
    }
};

/// A query-aligned event counts as recalled when its robot's selection holds
/// a frame within +-w/2 of the event center.
inline RecallReport measure_recall(const Selection& sel, const std::vector<PlantedEvent>& events,
                                   std::size_t window) {
    RecallReport rep;
    const long tol = static_cast<long>(window / 2);
    for (const auto& ev : events) {
        if (!ev.query_aligned) continue;
        ++rep.n_aligned;
        bool hit = false;
        for (const auto& rs : sel.per_robot) {
            if (rs.robot_id != ev.robot_id) continue;
            for (std::size_t f : rs.frames)
                if (std::abs(static_cast<long>(f) - static_cast<long>(ev.t_center)) <= tol)
                    hit = true;
        }
        if (hit) ++rep.n_hit;
    }
    return rep;
}

} // namespace teamlens
