#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "teamlens/distill.hpp"
#include "teamlens/fusion.hpp"
#include "teamlens/model.hpp"
#include "teamlens/optimizer.hpp"
#include "teamlens/sampler.hpp"

namespace teamlens {

struct TrainSchedule {
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    std::size_t grad_accum = 4;
    std::size_t max_steps = 0; // optimizer steps; 0 = bounded by epochs only
};

/// One config to rule a run: resolved from CLI flags + defaults, echoed
/// before execution, and embedded verbatim in checkpoints so a run can be
/// reproduced from its own artifacts.
struct GlobalConfig {
    std::uint64_t seed = 7;
    SamplerConfig sampler;
    FusionConfig fusion;
    DistillConfig distill;
    LossWeights loss;
    bool co_train_teacher = true;
    TrainSchedule train;
    AdamConfig adam;
};

inline void to_json(nlohmann::json& j, const SamplerConfig& c) {
    j = {{"candidate_budget", c.candidate_budget}, {"window", c.window},
         {"select_budget", c.select_budget},       {"n_bands", c.n_bands},
         {"use_semantic_refine", c.use_semantic_refine},
         {"use_spectral_energy", c.use_spectral_energy}};
}

inline void from_json(const nlohmann::json& j, SamplerConfig& c) {
    j.at("candidate_budget").get_to(c.candidate_budget);
    j.at("window").get_to(c.window);
    j.at("select_budget").get_to(c.select_budget);
    j.at("n_bands").get_to(c.n_bands);
    j.at("use_semantic_refine").get_to(c.use_semantic_refine);
    j.at("use_spectral_energy").get_to(c.use_spectral_energy);
}

inline void to_json(nlohmann::json& j, const FusionConfig& c) {
    j = {{"d_state", c.d_state},       {"d_spectral", c.d_spectral},
         {"d_pose", c.d_pose},         {"d_belief", c.d_belief},
         {"d_token", c.d_token},       {"k_frames", c.k_frames},
         {"n_low", c.n_low},           {"max_robots", c.max_robots},
         {"use_spectral_token", c.use_spectral_token},
         {"use_pose_token", c.use_pose_token}};
}

inline void from_json(const nlohmann::json& j, FusionConfig& c) {
    j.at("d_state").get_to(c.d_state);
    j.at("d_spectral").get_to(c.d_spectral);
    j.at("d_pose").get_to(c.d_pose);
    j.at("d_belief").get_to(c.d_belief);
    j.at("d_token").get_to(c.d_token);
    j.at("k_frames").get_to(c.k_frames);
    j.at("n_low").get_to(c.n_low);
    j.at("max_robots").get_to(c.max_robots);
    j.at("use_spectral_token").get_to(c.use_spectral_token);
    j.at("use_pose_token").get_to(c.use_pose_token);
}

inline void to_json(nlohmann::json& j, const DistillConfig& c) {
    j = {{"n_prompts", c.n_prompts}, {"d_prompt", c.d_prompt}, {"d_lm", c.d_lm},
         {"d_pose", c.d_pose},       {"d_query", c.d_query}};
}

inline void from_json(const nlohmann::json& j, DistillConfig& c) {
    j.at("n_prompts").get_to(c.n_prompts);
    j.at("d_prompt").get_to(c.d_prompt);
    j.at("d_lm").get_to(c.d_lm);
    j.at("d_pose").get_to(c.d_pose);
    j.at("d_query").get_to(c.d_query);
}

inline void to_json(nlohmann::json& j, const LossWeights& w) {
    j = {{"lambda_lm", w.lambda_lm}, {"lambda_distill", w.lambda_distill}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
    j.at("lambda_lm").get_to(w.lambda_lm);
    j.at("lambda_distill").get_to(w.lambda_distill);
}

inline void to_json(nlohmann::json& j, const TrainSchedule& t) {
    j = {{"epochs", t.epochs}, {"batch_size", t.batch_size},
         {"grad_accum", t.grad_accum}, {"max_steps", t.max_steps}};
}

inline void from_json(const nlohmann::json& j, TrainSchedule& t) {
    j.at("epochs").get_to(t.epochs);
    j.at("batch_size").get_to(t.batch_size);
    j.at("grad_accum").get_to(t.grad_accum);
    j.at("max_steps").get_to(t.max_steps);
}

inline void to_json(nlohmann::json& j, const AdamConfig& a) {
    j = {{"lr", a.lr},   {"beta1", a.beta1}, {"beta2", a.beta2},
         {"eps", a.eps}, {"weight_decay", a.weight_decay}, {"clip_norm", a.clip_norm}};
}

inline void from_json(const nlohmann::json& j, AdamConfig& a) {
    j.at("lr").get_to(a.lr);
    j.at("beta1").get_to(a.beta1);
    j.at("beta2").get_to(a.beta2);
    j.at("eps").get_to(a.eps);
    j.at("weight_decay").get_to(a.weight_decay);
    j.at("clip_norm").get_to(a.clip_norm);
}

inline void to_json(nlohmann::json& j, const GlobalConfig& c) {
    j = {{"seed", c.seed},           {"sampler", c.sampler}, {"fusion", c.fusion},
         {"distill", c.distill},     {"loss", c.loss},
         {"co_train_teacher", c.co_train_teacher},
         {"train", c.train},         {"adam", c.adam}};
}

inline void from_json(const nlohmann::json& j, GlobalConfig& c) {
    j.at("seed").get_to(c.seed);
    j.at("sampler").get_to(c.sampler);
    j.at("fusion").get_to(c.fusion);
    j.at("distill").get_to(c.distill);
    j.at("loss").get_to(c.loss);
    j.at("co_train_teacher").get_to(c.co_train_teacher);
    j.at("train").get_to(c.train);
    j.at("adam").get_to(c.adam);
}

} // namespace teamlens
