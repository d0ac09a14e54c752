// teamlens: batch pipeline for multi-robot egocentric feature streams.
//
//   gen-synth   deterministic synthetic episodes with planted events
//   sample      query-guided two-stage frame selection
//   fuse        reliability-weighted team belief from a selection
//   train       end-to-end training with privileged prompt alignment
//   eval        four-way answer accuracy, overall and per team size
//   gradcheck   central-difference verification of every trainable tensor
//
// Exit codes: 0 success, 1 data/runtime error, 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "teamlens/checkpoint.hpp"
#include "teamlens/config.hpp"
#include "teamlens/module_checks.hpp"
#include "teamlens/synth.hpp"
#include "teamlens/trainer.hpp"

namespace fs = std::filesystem;
using namespace teamlens;

namespace {

/// Every command announces its fully resolved configuration before doing
/// anything, so a run can be reproduced from its own log.
void echo_config(const std::string& command, const nlohmann::json& j) {
    std::cerr << "[teamlens] " << command << " config: " << j.dump() << "\n";
}

std::set<std::size_t> parse_team_sizes(const std::string& csv) {
    std::set<std::size_t> out;
    if (csv.empty()) return out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.insert(std::stoul(item));
    return out;
}

/// Discovers the stream widths from the first episode under root.
void infer_data_dims(const fs::path& root, GlobalConfig& cfg) {
    const auto manifests = find_manifests(root);
    const EpisodeManifest m = load_manifest(manifests.front());
    const auto tok = detail::read_stream_header(m.robots.front().token_path);
    const auto q = detail::read_stream_header(m.queries.front().query_path);
    cfg.fusion.d_token = tok.dim;
    cfg.distill.d_query = q.dim;
}

// ---------------------------------------------------------------------------

int cmd_gen_synth(const SynthConfig& base, std::size_t count, const fs::path& out) {
    nlohmann::json j{{"seed", base.seed},
                     {"count", count},
                     {"out", out.string()},
                     {"n_frames", base.n_frames},
                     {"n_robots", base.n_robots},
                     {"d_clip", base.d_clip},
                     {"d_token", base.d_token},
                     {"events_per_robot", base.events_per_robot},
                     {"event_width", base.event_width},
                     {"noise_std", base.noise_std},
                     {"clip_burst", base.clip_burst},
                     {"token_burst", base.token_burst},
                     {"fps", base.fps},
                     {"id_pool", base.id_pool}};
    echo_config("gen-synth", j);
    for (std::size_t i = 0; i < count; ++i) {
        SynthConfig cfg = base;
        cfg.seed = base.seed + i;
        const auto dir = out / ("ep" + std::to_string(cfg.seed));
        write_episode(generate_episode(cfg), dir);
    }
    std::cout << out.string() << "\n";
    return 0;
}

int cmd_sample(const fs::path& manifest_path, const std::string& query_path,
               const SamplerConfig& cfg, const fs::path& out) {
    nlohmann::json j{{"manifest", manifest_path.string()},
                     {"query", query_path},
                     {"out", out.string()},
                     {"sampler", cfg}};
    echo_config("sample", j);

    const EpisodeManifest m = load_manifest(manifest_path);
    EpisodeData ep = load_episode(m, LoadMode::inference);
    QueryEmbedding q;
    std::string used_query;
    if (!query_path.empty()) {
        q = read_query(query_path);
        used_query = query_path;
    } else {
        if (ep.queries.empty())
            throw std::runtime_error("sample: manifest has no queries and none was given");
        q = ep.queries.front();
        used_query =
            fs::relative(m.queries.front().query_path, manifest_path.parent_path()).string();
    }
    const Selection sel = run_sampler<double>(ep, q, cfg);
    write_selection(sel, m.episode_id, used_query, cfg, out);
    std::cout << out.string() << "\n";
    return 0;
}

int cmd_fuse(const fs::path& manifest_path, const fs::path& selection_path,
             const fs::path& checkpoint_path, const fs::path& out) {
    nlohmann::json j{{"manifest", manifest_path.string()},
                     {"selection", selection_path.string()},
                     {"checkpoint", checkpoint_path.string()},
                     {"out", out.string()}};
    echo_config("fuse", j);

    LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
    const GlobalConfig& cfg = ckpt.config;
    EpisodeData ep = load_episode(manifest_path, LoadMode::inference);
    Selection sel = read_selection(selection_path);
    if (sel.per_robot.size() != ep.robots.size())
        throw std::runtime_error("fuse: selection covers " +
                                 std::to_string(sel.per_robot.size()) + " robots, episode has " +
                                 std::to_string(ep.robots.size()));

    std::vector<RobotInput<float>> team;
    for (std::size_t r = 0; r < ep.robots.size(); ++r) {
        const RobotData& rd = ep.robots[r];
        std::vector<std::size_t> frames = sel.per_robot[r].frames;
        if (sel.per_robot[r].robot_id != rd.robot_id)
            throw std::runtime_error("fuse: selection/manifest robot order mismatch");
        while (frames.size() < cfg.fusion.k_frames) frames.push_back(frames.back());
        RobotInput<float> in;
        in.robot_id = rd.robot_id;
        in.tokens = Tensor2<float>(cfg.fusion.k_frames, cfg.fusion.d_token);
        for (std::size_t k = 0; k < frames.size(); ++k)
            for (std::size_t jj = 0; jj < cfg.fusion.d_token; ++jj)
                in.tokens.at(k, jj) = rd.tokens.data.at(frames[k], jj);
        if (cfg.fusion.use_pose_token) {
            if (!rd.controls)
                throw std::runtime_error("fuse: robot " + std::to_string(rd.robot_id) +
                                         " lacks a controls log");
            in.pose_summary = pose_summary<float>(*rd.controls, frames);
            in.has_pose = true;
        }
        team.push_back(std::move(in));
    }

    TeamBelief<float> belief = fuse_forward(team, ckpt.model.fusion, cfg.fusion);

    FeatureStream dump;
    dump.kind = StreamKind::token;
    dump.data = Tensor2<float>(1, belief.data.size(), std::vector<float>(belief.data));
    write_stream(dump, out);

    nlohmann::json side;
    side["episode_id"] = ep.manifest.episode_id;
    side["weights"] = belief.weights;
    auto& robots = side["robots"] = nlohmann::json::array();
    for (const auto& rd : ep.robots) robots.push_back(rd.robot_id);
    std::ofstream sf(out.string() + ".json", std::ios::trunc);
    sf << side.dump(2) << "\n";

    std::cout << out.string() << "\n";
    return 0;
}

int cmd_train(GlobalConfig cfg, const fs::path& train_dir, const fs::path& val_dir,
              const std::string& team_sizes_csv, const fs::path& out, fs::path log_path) {
    infer_data_dims(train_dir, cfg);
    nlohmann::json j{{"train_dir", train_dir.string()},
                     {"val_dir", val_dir.string()},
                     {"team_sizes", team_sizes_csv},
                     {"out", out.string()},
                     {"log", log_path.string()},
                     {"config", cfg}};
    echo_config("train", j);

    const auto team_sizes = parse_team_sizes(team_sizes_csv);
    auto examples = load_examples<float>(train_dir, cfg, DataMode::train, team_sizes);
    std::cerr << "[teamlens] loaded " << examples.size() << " training examples\n";

    Model<float> model(cfg.fusion, cfg.distill);
    model.co_train_teacher = cfg.co_train_teacher;
    model.init(cfg.seed);

    std::ofstream log;
    if (log_path.empty()) log_path = out.string() + ".log.csv";
    log.open(log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("train: cannot open log " + log_path.string());

    const TrainStats stats = train_loop(model, examples, cfg, &log);
    std::cerr << "[teamlens] " << stats.steps << " steps, final loss " << stats.last_loss_total
              << " (answer " << stats.last_loss_lm << ", align " << stats.last_loss_distill
              << ")\n";

    save_checkpoint(model, cfg, out);

    if (!val_dir.empty()) {
        auto val = load_examples<float>(val_dir, cfg, DataMode::eval, team_sizes);
        const EvalResult res = evaluate(model, val);
        std::cerr << "[teamlens] validation accuracy " << res.accuracy() << " on " << res.total
                  << " examples\n";
    }
    std::cout << out.string() << "\n";
    return 0;
}

int cmd_eval(const fs::path& test_dir, const fs::path& checkpoint_path, bool by_team_size,
             const std::string& team_sizes_csv, std::size_t jobs) {
    nlohmann::json j{{"test_dir", test_dir.string()},
                     {"checkpoint", checkpoint_path.string()},
                     {"by_team_size", by_team_size},
                     {"team_sizes", team_sizes_csv},
                     {"jobs", jobs}};
    echo_config("eval", j);

    LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
    const auto team_sizes = parse_team_sizes(team_sizes_csv);
    auto examples = load_examples<float>(test_dir, ckpt.config, DataMode::eval, team_sizes);
    const EvalResult res = evaluate(ckpt.model, examples, jobs);

    if (by_team_size) {
        std::cout << format_eval_table(res);
    } else {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4f\n", res.accuracy());
        std::cout << buf;
    }
    std::cerr << "[teamlens] " << res.correct << "/" << res.total << " correct\n";
    return 0;
}

int cmd_gradcheck(const std::string& module, std::size_t instances, std::uint64_t seed) {
    nlohmann::json j{{"module", module}, {"instances", instances}, {"seed", seed}};
    echo_config("gradcheck", j);

    struct Entry {
        const char* name;
        double (*fn)(std::uint64_t);
    };
    std::vector<Entry> checks;
    if (module == "sampler-spectral" || module == "all") checks.push_back({"sampler-spectral", check_spectral_gradients});
    if (module == "fusion" || module == "all") checks.push_back({"fusion", check_fusion_gradients});
    if (module == "distill" || module == "all") checks.push_back({"distill", check_composite_gradients});
    if (checks.empty()) throw CLI::ValidationError("--module must be sampler-spectral, fusion, distill, or all");

    double worst = 0;
    for (const auto& entry : checks) {
        double module_worst = 0;
        for (std::size_t i = 0; i < instances; ++i)
            module_worst = std::max(module_worst, entry.fn(seed + i));
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%-16s max rel err %.3e over %zu instances\n", entry.name,
                      module_worst, instances);
        std::cout << buf;
        worst = std::max(worst, module_worst);
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "overall          max rel err %.3e\n", worst);
    std::cout << buf;
    return worst <= 1e-4 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-robot egocentric stream pipeline"};
    app.require_subcommand(1);

    // gen-synth ----------------------------------------------------------
    SynthConfig syn;
    std::size_t gen_count = 1;
    std::string gen_out = "episodes";
    auto* gen = app.add_subcommand("gen-synth", "generate synthetic episodes");
    gen->add_option("--seed", syn.seed, "base seed; episode i uses seed+i");
    gen->add_option("--count", gen_count, "number of episodes");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--frames", syn.n_frames, "frames per stream");
    gen->add_option("--robots", syn.n_robots, "team size (1..8)");
    gen->add_option("--d-clip", syn.d_clip, "similarity feature width");
    gen->add_option("--d-token", syn.d_token, "visual token width");
    gen->add_option("--events", syn.events_per_robot, "events per robot");
    gen->add_option("--event-width", syn.event_width, "event width in frames");
    gen->add_option("--noise", syn.noise_std, "feature noise std");
    gen->add_option("--clip-burst", syn.clip_burst, "clip-space burst amplitude");
    gen->add_option("--token-burst", syn.token_burst, "token-space marker amplitude");
    gen->add_option("--fps", syn.fps, "frames per second");
    gen->add_option("--id-pool", syn.id_pool, "draw robot ids from [0,pool); 0 = 0..N-1");

    // sample --------------------------------------------------------------
    std::string s_manifest, s_query, s_out = "selection.json";
    SamplerConfig scfg;
    bool s_no_refine = false, s_no_spectral = false;
    auto* smp = app.add_subcommand("sample", "query-guided frame selection");
    smp->add_option("--manifest", s_manifest, "episode manifest")->required();
    smp->add_option("--query", s_query, "query stream; default: first manifest query");
    smp->add_option("--m", scfg.candidate_budget, "candidate budget M");
    smp->add_option("--w", scfg.window, "spectrum window w");
    smp->add_option("--k", scfg.select_budget, "selection budget K");
    smp->add_option("--bands", scfg.n_bands, "spectrum bands B; 0 = w/2");
    smp->add_flag("--no-semantic-refine", s_no_refine, "rank by spectrum energy alone");
    smp->add_flag("--no-spectral-energy", s_no_spectral, "rank by similarity alone");
    smp->add_option("--out", s_out, "selection JSON path");

    // fuse ------------------------------------------------------------------
    std::string f_manifest, f_selection, f_checkpoint, f_out = "belief.spcr";
    auto* fus = app.add_subcommand("fuse", "fuse a selection into a team belief");
    fus->add_option("--manifest", f_manifest, "episode manifest")->required();
    fus->add_option("--selection", f_selection, "selection JSON")->required();
    fus->add_option("--checkpoint", f_checkpoint, "model checkpoint")->required();
    fus->add_option("--out", f_out, "belief dump path (.spcr + .json sidecar)");

    // train -------------------------------------------------------------
    GlobalConfig tcfg;
    std::string t_train_dir, t_val_dir, t_team_sizes, t_out = "model.spck", t_log;
    auto* trn = app.add_subcommand("train", "train on a directory of episodes");
    trn->add_option("--train-dir", t_train_dir, "directory of training episodes")->required();
    trn->add_option("--val-dir", t_val_dir, "directory of validation episodes");
    trn->add_option("--out", t_out, "checkpoint path");
    trn->add_option("--log", t_log, "training log CSV path");
    trn->add_option("--seed", tcfg.seed, "seed for init and shuffling");
    trn->add_option("--epochs", tcfg.train.epochs, "epochs");
    trn->add_option("--batch", tcfg.train.batch_size, "micro-batch size");
    trn->add_option("--accum", tcfg.train.grad_accum, "gradient accumulation steps");
    trn->add_option("--max-steps", tcfg.train.max_steps, "cap on optimizer steps (0 = none)");
    trn->add_option("--lr", tcfg.adam.lr, "learning rate");
    trn->add_option("--clip", tcfg.adam.clip_norm, "gradient clip norm");
    trn->add_option("--lambda-lm", tcfg.loss.lambda_lm, "answer loss weight");
    trn->add_option("--lambda-d", tcfg.loss.lambda_distill, "prompt alignment weight");
    trn->add_option("--prompts", tcfg.distill.n_prompts, "learnable prompt rows L");
    trn->add_option("--m", tcfg.sampler.candidate_budget, "sampler candidate budget");
    trn->add_option("--w", tcfg.sampler.window, "sampler window");
    trn->add_option("--k", tcfg.sampler.select_budget, "sampler selection budget");
    trn->add_option("--d-state", tcfg.fusion.d_state, "robot state width");
    trn->add_option("--d-spectral", tcfg.fusion.d_spectral, "spectral summary width");
    trn->add_option("--d-pose", tcfg.fusion.d_pose, "motion embedding width");
    trn->add_option("--d-belief", tcfg.fusion.d_belief, "team belief width");
    trn->add_option("--d-prompt", tcfg.distill.d_prompt, "prompt width");
    trn->add_option("--d-lm", tcfg.distill.d_lm, "prefix token width");
    trn->add_option("--team-sizes", t_team_sizes, "train only on these team sizes, e.g. 2,3");
    bool t_no_co_train = false;
    trn->add_flag("--freeze-teacher", t_no_co_train, "do not co-train the teacher");

    // eval ----------------------------------------------------------------
    std::string e_test_dir, e_checkpoint, e_team_sizes;
    bool e_by_team = false;
    std::size_t e_jobs = 1;
    auto* evl = app.add_subcommand("eval", "answer accuracy of a checkpoint");
    evl->add_option("--test-dir", e_test_dir, "directory of test episodes")->required();
    evl->add_option("--checkpoint", e_checkpoint, "model checkpoint")->required();
    evl->add_flag("--by-team-size", e_by_team, "per-team-size accuracy table");
    evl->add_option("--team-sizes", e_team_sizes, "evaluate only these team sizes");
    evl->add_option("--jobs", e_jobs, "parallel prediction threads");

    // gradcheck --------------------------------------------------------------
    std::string g_module = "all";
    std::size_t g_instances = 10;
    std::uint64_t g_seed = 7;
    auto* grd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    grd->add_option("--module", g_module, "sampler-spectral | fusion | distill | all");
    grd->add_option("--instances", g_instances, "random instances per module");
    grd->add_option("--seed", g_seed, "base seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // help goes to stdout, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen) return cmd_gen_synth(syn, gen_count, gen_out);
        if (*smp) {
            scfg.use_semantic_refine = !s_no_refine;
            scfg.use_spectral_energy = !s_no_spectral;
            return cmd_sample(s_manifest, s_query, scfg, s_out);
        }
        if (*fus) return cmd_fuse(f_manifest, f_selection, f_checkpoint, f_out);
        if (*trn) {
            tcfg.co_train_teacher = !t_no_co_train;
            return cmd_train(tcfg, t_train_dir, t_val_dir, t_team_sizes, t_out, t_log);
        }
        if (*evl) return cmd_eval(e_test_dir, e_checkpoint, e_by_team, e_team_sizes, e_jobs);
        if (*grd) return cmd_gradcheck(g_module, g_instances, g_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
