#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "teamlens/synth.hpp"

using namespace teamlens;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    static int counter = 0;
    auto p = fs::temp_directory_path() / (std::string("teamlens_synth_") + tag + "_" +
                                          std::to_string(::getpid()) + "_" +
                                          std::to_string(counter++));
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("identical seeds produce byte-identical episode directories") {
    SynthConfig cfg;
    cfg.seed = 321;
    cfg.n_robots = 3;
    cfg.n_frames = 96;
    const auto d1 = temp_dir("det1");
    const auto d2 = temp_dir("det2");
    write_episode(generate_episode(cfg), d1);
    write_episode(generate_episode(cfg), d2);

    std::size_t compared = 0;
    for (const auto& e : fs::directory_iterator(d1)) {
        const auto name = e.path().filename();
        REQUIRE(fs::exists(d2 / name));
        REQUIRE(slurp(e.path()) == slurp(d2 / name));
        ++compared;
    }
    REQUIRE(compared == 3 * 4 + 2); // 4 files per robot + manifest + query
    // a different seed actually changes the payloads
    SynthConfig other = cfg;
    other.seed = 322;
    const auto d3 = temp_dir("det3");
    write_episode(generate_episode(other), d3);
    REQUIRE(slurp(d1 / "robot0_clip.spcr") != slurp(d3 / "robot0_clip.spcr"));
    fs::remove_all(d1);
    fs::remove_all(d2);
    fs::remove_all(d3);
}

TEST_CASE("generated episodes pass the store invariants end to end") {
    SynthConfig cfg;
    cfg.seed = 5;
    cfg.n_robots = 4;
    cfg.n_frames = 64;
    const auto dir = temp_dir("inv");
    const auto mp = write_episode(generate_episode(cfg), dir);
    // load_manifest + load_episode run every format/consistency check
    EpisodeData ep = load_episode(mp, LoadMode::training);
    REQUIRE(ep.robots.size() == 4);
    for (const auto& r : ep.robots) {
        REQUIRE(r.clip.n_frames() == 64);
        REQUIRE(r.tokens.n_frames() == 64);
        REQUIRE(r.gt_pose->n_frames() == 64);
        REQUIRE(r.controls->n_frames() == 64);
    }
    REQUIRE(ep.manifest.queries[0].answer_index.has_value());
    REQUIRE(*ep.manifest.queries[0].answer_index >= 0);
    REQUIRE(*ep.manifest.queries[0].answer_index <= 3);
    fs::remove_all(dir);
}

TEST_CASE("in-memory bundles equal their on-disk round trip") {
    SynthConfig cfg;
    cfg.seed = 17;
    cfg.n_robots = 2;
    cfg.n_frames = 48;
    auto bundle = generate_episode(cfg);
    const auto dir = temp_dir("roundtrip");
    const auto mp = write_episode(bundle, dir);
    EpisodeData ep = load_episode(mp, LoadMode::training);
    for (std::size_t r = 0; r < 2; ++r) {
        REQUIRE(ep.robots[r].clip.data.data == bundle.data.robots[r].clip.data.data);
        REQUIRE(ep.robots[r].tokens.data.data == bundle.data.robots[r].tokens.data.data);
        for (std::size_t t = 0; t < 48; ++t) {
            REQUIRE(ep.robots[r].gt_pose->rows[t].x == bundle.data.robots[r].gt_pose->rows[t].x);
            REQUIRE(ep.robots[r].gt_pose->rows[t].heading ==
                    bundle.data.robots[r].gt_pose->rows[t].heading);
        }
    }
    REQUIRE(ep.queries[0].data == bundle.query.data);
    fs::remove_all(dir);
}

TEST_CASE("zero noise: the queried event's frames take the top similarity scores") {
    SynthConfig cfg;
    cfg.seed = 23;
    cfg.n_robots = 1;
    cfg.noise_std = 0.0;
    cfg.events_per_robot = 1;
    cfg.decoys_per_robot = 0; // bare signal: one event, nothing else
    auto bundle = generate_episode(cfg);
    REQUIRE(bundle.events.size() == 1);
    const auto& ev = bundle.events[0];
    REQUIRE(ev.query_aligned);

    const auto frames = bundle.data.robots[0].clip.data.cast<double>();
    std::vector<double> q(bundle.query.data.begin(), bundle.query.data.end());
    auto s = semantic_scores(frames, std::span<const double>(q));
    const std::size_t best = std::max_element(s.begin(), s.end()) - s.begin();
    const std::size_t first = ev.t_center - ev.width / 2;
    REQUIRE(best >= first);
    REQUIRE(best < first + ev.width);
}

TEST_CASE("the answer robot is the one holding the aligned event") {
    for (std::uint64_t seed = 60; seed < 70; ++seed) {
        SynthConfig cfg;
        cfg.seed = seed;
        cfg.n_robots = 3;
        auto bundle = generate_episode(cfg);
        int aligned_robot = -1;
        std::size_t aligned_count = 0;
        for (const auto& ev : bundle.events) {
            if (ev.query_aligned) {
                aligned_robot = ev.robot_id;
                ++aligned_count;
            }
        }
        REQUIRE(aligned_count == 1);
        REQUIRE(aligned_robot == bundle.answer_robot_id);
        REQUIRE(bundle.answer_robot_id >= 0);
        REQUIRE(bundle.answer_robot_id <= 3);
    }
}

TEST_CASE("id pools widen the identity range without changing the team size") {
    SynthConfig cfg;
    cfg.seed = 91;
    cfg.n_robots = 2;
    cfg.id_pool = 4;
    bool saw_high_id = false;
    for (std::uint64_t s = 0; s < 12; ++s) {
        cfg.seed = 91 + s;
        auto bundle = generate_episode(cfg);
        REQUIRE(bundle.data.robots.size() == 2);
        for (const auto& r : bundle.data.robots) {
            REQUIRE(r.robot_id >= 0);
            REQUIRE(r.robot_id < 4);
            if (r.robot_id >= 2) saw_high_id = true;
        }
    }
    REQUIRE(saw_high_id); // ids beyond 0..N-1 do occur
}

TEST_CASE("events that cannot fit raise a config error") {
    SynthConfig cfg;
    cfg.n_frames = 16;
    cfg.events_per_robot = 3;
    cfg.event_width = 6;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);

    SynthConfig cfg2;
    cfg2.n_robots = 9;
    REQUIRE_THROWS_AS(cfg2.validate(), std::invalid_argument);

    SynthConfig cfg3;
    cfg3.id_pool = 1;
    cfg3.n_robots = 2;
    REQUIRE_THROWS_AS(cfg3.validate(), std::invalid_argument);
}

TEST_CASE("reference sampler handles degenerate streams") {
    // single-frame streams select frame zero
    SynthConfig cfg;
    cfg.seed = 44;
    cfg.n_frames = 1;
    cfg.events_per_robot = 0;
    cfg.n_robots = 2;
    auto bundle = generate_episode(cfg);
    SamplerConfig scfg;
    auto ref = reference_sampler(bundle.data, bundle.query, scfg);
    for (const auto& rs : ref.per_robot) REQUIRE(rs.frames == std::vector<std::size_t>{0});
    auto fast = run_sampler<double>(bundle.data, bundle.query, scfg);
    REQUIRE(fast == ref);

    // constant streams agree through the tie-break
    SynthConfig cfg2;
    cfg2.seed = 45;
    cfg2.n_frames = 24;
    cfg2.noise_std = 0.0;
    cfg2.events_per_robot = 0;
    cfg2.n_robots = 1;
    auto flat = generate_episode(cfg2);
    auto ref2 = reference_sampler(flat.data, flat.query, scfg);
    auto fast2 = run_sampler<double>(flat.data, flat.query, scfg);
    REQUIRE(fast2 == ref2);
    REQUIRE(ref2.per_robot[0].frames ==
            std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("recall bookkeeping") {
    std::vector<PlantedEvent> events;
    events.push_back({0, 10, 4, 1.0, true});
    events.push_back({1, 20, 4, 1.0, true});
    events.push_back({1, 30, 4, 1.0, false}); // distractors never count

    Selection sel;
    sel.per_robot.push_back({0, {8, 40}});   // 8 is within +-2 of 10
    sel.per_robot.push_back({1, {20, 35}});  // exact hit
    auto rep = measure_recall(sel, events, 4);
    REQUIRE(rep.n_aligned == 2);
    REQUIRE(rep.n_hit == 2);
    REQUIRE(rep.recall() == 1.0);

    Selection miss;
    miss.per_robot.push_back({0, {40}});
    miss.per_robot.push_back({1, {0}});
    REQUIRE(measure_recall(miss, events, 4).recall() == 0.0);

    Selection half;
    half.per_robot.push_back({0, {10}});
    half.per_robot.push_back({1, {0}});
    REQUIRE(measure_recall(half, events, 4).recall() == 0.5);
}
