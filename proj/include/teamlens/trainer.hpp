#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "teamlens/checkpoint.hpp"
#include "teamlens/config.hpp"
#include "teamlens/model.hpp"
#include "teamlens/sampler.hpp"

namespace teamlens {

// ============================================================================
//  Example assembly, the training loop, and evaluation. The sampler is
//  training-free, so each (episode, query) pair is reduced once, up front,
//  to the fixed-size inputs the model consumes.
// ============================================================================

enum class DataMode {
    train, // answers + privileged pose summaries
    eval,  // answers, no privileged inputs
    infer, // neither
};

/// All episode directories (containing manifest.json) under root, sorted by
/// path so every run sees the same order.
inline std::vector<std::filesystem::path> find_manifests(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::vector<fs::path> out;
    if (fs::exists(root / "manifest.json")) out.push_back(root / "manifest.json");
    if (fs::is_directory(root)) {
        for (const auto& entry : fs::directory_iterator(root)) {
            if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
                out.push_back(entry.path() / "manifest.json");
        }
    }
    std::sort(out.begin(), out.end());
    if (out.empty())
        throw std::runtime_error("find_manifests: no episode manifests under " + root.string());
    return out;
}

/// Reduces one loaded episode to per-query model inputs: runs the sampler,
/// gathers the selected token rows (padding by repeating the last selected
/// frame when the stream is shorter than K), and summarizes motion over the
/// same frames.
template <typename T>
std::vector<Example<T>> make_examples(const EpisodeData& ep, const GlobalConfig& cfg,
                                      DataMode mode) {
    if (cfg.sampler.select_budget != cfg.fusion.k_frames)
        throw std::invalid_argument("make_examples: sampler K " +
                                    std::to_string(cfg.sampler.select_budget) +
                                    " != fusion K " + std::to_string(cfg.fusion.k_frames));
    std::vector<Example<T>> out;
    for (std::size_t qi = 0; qi < ep.queries.size(); ++qi) {
        const QueryEmbedding& q = ep.queries[qi];
        if (q.dim() != cfg.distill.d_query)
            throw std::invalid_argument("make_examples: query dim " + std::to_string(q.dim()) +
                                        " != configured " + std::to_string(cfg.distill.d_query));
        const Selection sel = run_sampler<double>(ep, q, cfg.sampler);

        Example<T> ex;
        ex.episode_id = ep.manifest.episode_id;
        ex.query.assign(q.data.begin(), q.data.end());
        if (mode != DataMode::infer) {
            const auto& ans = ep.manifest.queries.at(qi).answer_index;
            if (!ans)
                throw std::runtime_error("make_examples: manifest query " + std::to_string(qi) +
                                         " has no answer_index");
            ex.answer = *ans;
        }

        for (std::size_t r = 0; r < ep.robots.size(); ++r) {
            const RobotData& rd = ep.robots[r];
            std::vector<std::size_t> frames = sel.per_robot.at(r).frames;
            if (frames.empty()) throw std::runtime_error("make_examples: empty selection");
            while (frames.size() < cfg.fusion.k_frames) frames.push_back(frames.back());

            RobotInput<T> in;
            in.robot_id = rd.robot_id;
            if (rd.tokens.dim() != cfg.fusion.d_token)
                throw std::invalid_argument("make_examples: token dim " +
                                            std::to_string(rd.tokens.dim()) + " != configured " +
                                            std::to_string(cfg.fusion.d_token));
            in.tokens = Tensor2<T>(cfg.fusion.k_frames, cfg.fusion.d_token);
            for (std::size_t k = 0; k < frames.size(); ++k)
                for (std::size_t j = 0; j < cfg.fusion.d_token; ++j)
                    in.tokens.at(k, j) = static_cast<T>(rd.tokens.data.at(frames[k], j));
            if (cfg.fusion.use_pose_token) {
                if (!rd.controls)
                    throw std::runtime_error("make_examples: robot " +
                                             std::to_string(rd.robot_id) +
                                             " has no controls log but the model uses motion");
                in.pose_summary = pose_summary<T>(*rd.controls, frames);
                in.has_pose = true;
            }
            ex.robots.push_back(std::move(in));

            if (mode == DataMode::train) {
                if (!rd.gt_pose)
                    throw std::runtime_error("make_examples: robot " +
                                             std::to_string(rd.robot_id) +
                                             " has no ground-truth pose log for training");
                ex.gt_pose_summaries.push_back(pose_summary<T>(*rd.gt_pose, frames));
            }
        }
        out.push_back(std::move(ex));
    }
    return out;
}

/// Loads every episode under root and reduces it to examples.
/// `team_sizes` empty means no filter.
template <typename T>
std::vector<Example<T>> load_examples(const std::filesystem::path& root, const GlobalConfig& cfg,
                                      DataMode mode, const std::set<std::size_t>& team_sizes = {}) {
    const LoadMode lm = mode == DataMode::train ? LoadMode::training : LoadMode::inference;
    std::vector<Example<T>> out;
    for (const auto& mp : find_manifests(root)) {
        const EpisodeManifest m = load_manifest(mp);
        if (!team_sizes.empty() && !team_sizes.count(m.n_robots())) continue;
        const EpisodeData ep = load_episode(m, lm);
        for (auto& ex : make_examples<T>(ep, cfg, mode)) out.push_back(std::move(ex));
    }
    if (out.empty()) throw std::runtime_error("load_examples: no usable episodes in " + root.string());
    return out;
}

// ----------------------------------------------------------------------------
//  training loop
// ----------------------------------------------------------------------------

struct TrainStats {
    std::size_t steps = 0;
    double last_loss_total = 0;
    double last_loss_lm = 0;
    double last_loss_distill = 0;
};

struct StepReport {
    double loss_total = 0;
    double loss_lm = 0;
    double loss_distill = 0;
    double grad_norm = 0; // pre-clip
};

/// One optimizer step over a window of examples: zero grads, accumulate the
/// mean-loss gradient, clip, Adam update. Deterministic given the window
/// order and optimizer state.
inline StepReport train_step(Model<float>& model, const std::vector<ParamRef<float>>& refs,
                             std::span<const Example<float>> window, const LossWeights& w,
                             AdamW<float>& opt) {
    if (window.empty()) throw std::invalid_argument("train_step: empty batch");
    const float upstream = 1.0f / static_cast<float>(window.size());
    zero_grads(refs);
    StepReport rep;
    for (const Example<float>& ex : window) {
        ModelCache<float> cache;
        const LossReport<float> r = example_forward(model, ex, w, Mode::training, &cache);
        if (!std::isfinite(r.total))
            throw std::runtime_error("train_step: non-finite loss (episode " + ex.episode_id +
                                     ")");
        example_backward(model, ex, w, cache, upstream);
        rep.loss_total += r.total;
        rep.loss_lm += r.lm;
        rep.loss_distill += r.distill;
    }
    rep.loss_total /= static_cast<double>(window.size());
    rep.loss_lm /= static_cast<double>(window.size());
    rep.loss_distill /= static_cast<double>(window.size());
    rep.grad_norm = opt.step(refs);
    return rep;
}

/// Seeded, single-threaded, deterministic. One optimizer step consumes
/// grad_accum consecutive micro-batches of batch_size examples; the loss is
/// the mean over the examples in the step window. Appends one CSV row per
/// optimizer step to `log` when given:  step,loss_total,loss_lm,loss_distill,grad_norm
inline TrainStats train_loop(Model<float>& model, const std::vector<Example<float>>& examples,
                             const GlobalConfig& cfg, std::ostream* log) {
    if (examples.empty()) throw std::invalid_argument("train_loop: no examples");
    AdamW<float> opt(cfg.adam);
    auto refs = model.param_refs();
    const LossWeights& w = cfg.loss;

    std::uint64_t sm = cfg.seed ^ 0x7261696e00000001ull;
    Xoshiro256 shuffle_rng(splitmix64_next(sm));
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);

    const std::size_t micro = std::max<std::size_t>(1, cfg.train.batch_size);
    const std::size_t accum = std::max<std::size_t>(1, cfg.train.grad_accum);
    const std::size_t window = micro * accum;

    if (log) *log << "step,loss_total,loss_lm,loss_distill,grad_norm\n";

    TrainStats stats;
    for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        // Fisher-Yates with the fixed-algorithm generator
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(shuffle_rng.below(i));
            std::swap(order[i - 1], order[j]);
        }
        std::size_t at = 0;
        while (at < order.size()) {
            const std::size_t take = std::min(window, order.size() - at);
            const float upstream = 1.0f / static_cast<float>(take);
            zero_grads(refs);
            double sum_total = 0, sum_lm = 0, sum_distill = 0;
            for (std::size_t i = 0; i < take; ++i) {
                const Example<float>& ex = examples[order[at + i]];
                ModelCache<float> cache;
                const LossReport<float> rep =
                    example_forward(model, ex, w, Mode::training, &cache);
                if (!std::isfinite(rep.total))
                    throw std::runtime_error("train_loop: non-finite loss at step " +
                                             std::to_string(stats.steps) + " (episode " +
                                             ex.episode_id + ")");
                example_backward(model, ex, w, cache, upstream);
                sum_total += rep.total;
                sum_lm += rep.lm;
                sum_distill += rep.distill;
            }
            const float grad_norm = opt.step(refs);
            at += take;
            ++stats.steps;
            stats.last_loss_total = sum_total / static_cast<double>(take);
            stats.last_loss_lm = sum_lm / static_cast<double>(take);
            stats.last_loss_distill = sum_distill / static_cast<double>(take);
            if (log) {
                char buf[160];
                std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g\n", stats.steps,
                              stats.last_loss_total, stats.last_loss_lm, stats.last_loss_distill,
                              static_cast<double>(grad_norm));
                *log << buf;
            }
            if (cfg.train.max_steps > 0 && stats.steps >= cfg.train.max_steps) return stats;
        }
    }
    return stats;
}

/// Mean prompt-alignment distance over a set of training examples; the
/// convergence probe for the distillation objective.
inline double mean_prompt_distance(const Model<float>& model, const std::vector<Example<float>>& examples,
                                   const LossWeights& w) {
    double sum = 0;
    for (const auto& ex : examples) {
        ModelCache<float> cache;
        const auto rep = example_forward(model, ex, w, Mode::training, &cache);
        sum += rep.distill;
    }
    return sum / static_cast<double>(examples.size());
}

// ----------------------------------------------------------------------------
//  evaluation
// ----------------------------------------------------------------------------

struct EvalResult {
    std::size_t total = 0;
    std::size_t correct = 0;
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> per_team; // N -> {correct, total}

    double accuracy() const {
        return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    }
};

/// Four-way answer accuracy on the student path. Verifies that the run
/// touched neither ground-truth pose logs nor the teacher.
inline EvalResult evaluate(const Model<float>& model, const std::vector<Example<float>>& examples,
                           std::size_t jobs = 1) {
    const std::uint64_t gt0 = IoTracker::gt_pose_reads();
    const std::uint64_t tf0 = IoTracker::teacher_forwards();

    std::vector<int> preds(examples.size(), -1);
    jobs = std::max<std::size_t>(1, jobs);
    if (jobs == 1) {
        for (std::size_t i = 0; i < examples.size(); ++i) preds[i] = predict(model, examples[i]);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (std::size_t t = 0; t < jobs; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < examples.size();
                     i = next.fetch_add(1))
                    preds[i] = predict(model, examples[i]);
            });
        }
        for (auto& th : pool) th.join();
    }

    EvalResult res;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const Example<float>& ex = examples[i];
        if (ex.answer < 0) throw std::runtime_error("evaluate: example without answer");
        const bool ok = preds[i] == ex.answer;
        ++res.total;
        res.correct += ok;
        auto& bucket = res.per_team[ex.robots.size()];
        ++bucket.second;
        bucket.first += ok;
    }

    if (IoTracker::gt_pose_reads() != gt0)
        throw std::runtime_error("evaluate: privileged ground-truth pose logs were read");
    if (IoTracker::teacher_forwards() != tf0)
        throw std::runtime_error("evaluate: the teacher was invoked during evaluation");
    return res;
}

/// "N=2  N=3  N=4  AVG"-style accuracy table.
inline std::string format_eval_table(const EvalResult& res) {
    std::string head, vals;
    char buf[64];
    for (const auto& [n, bucket] : res.per_team) {
        std::snprintf(buf, sizeof(buf), "N=%zu", n);
        head += buf;
        head += "\t";
        const double acc =
            bucket.second ? static_cast<double>(bucket.first) / static_cast<double>(bucket.second)
                          : 0.0;
        std::snprintf(buf, sizeof(buf), "%.4f", acc);
        vals += buf;
        vals += "\t";
    }
    head += "AVG";
    std::snprintf(buf, sizeof(buf), "%.4f", res.accuracy());
    vals += buf;
    return head + "\n" + vals + "\n";
}

} // namespace teamlens
