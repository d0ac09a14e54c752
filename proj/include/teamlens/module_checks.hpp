#pragma once

#include "teamlens/gradcheck.hpp"
#include "teamlens/model.hpp"
#include "teamlens/rng.hpp"

namespace teamlens {

// ============================================================================
//  Whole-module gradient verification on small random instances, shared by
//  the gradcheck CLI subcommand and the acceptance suite. Always double
//  precision, central differences, h = 1e-5.
// ============================================================================

inline FusionConfig check_fusion_config() {
    FusionConfig cfg;
    cfg.d_state = 8;
    cfg.d_spectral = 6;
    cfg.d_pose = 5;
    cfg.d_belief = 7;
    cfg.d_token = 6;
    cfg.k_frames = 4;
    return cfg;
}

inline DistillConfig check_distill_config() {
    DistillConfig cfg;
    cfg.n_prompts = 3;
    cfg.d_prompt = 8;
    cfg.d_lm = 9;
    cfg.d_pose = 5;
    cfg.d_query = 6;
    return cfg;
}

inline Example<double> check_example(Xoshiro256& rng, const FusionConfig& fc,
                                     const DistillConfig& dc, std::size_t n) {
    Example<double> ex;
    ex.episode_id = "check";
    ex.answer = int(rng.below(4));
    ex.query.resize(dc.d_query);
    for (auto& v : ex.query) v = rng.uniform(-1, 1);
    for (std::size_t r = 0; r < n; ++r) {
        RobotInput<double> in;
        in.robot_id = int(r);
        in.tokens = Tensor2<double>(fc.k_frames, fc.d_token);
        for (auto& v : in.tokens.data) v = rng.uniform(-1, 1);
        for (auto& v : in.pose_summary) v = rng.uniform(-1, 1);
        in.has_pose = true;
        ex.robots.push_back(std::move(in));
        std::array<double, kPoseSummaryDim> gt{};
        for (auto& v : gt) v = rng.uniform(-1, 1);
        ex.gt_pose_summaries.push_back(gt);
    }
    return ex;
}

/// Spectral summary subnetwork: loss = |F_r|^2 over its MLP + norm params.
inline double check_spectral_gradients(std::uint64_t seed) {
    Xoshiro256 rng(seed);
    FusionConfig cfg = check_fusion_config();
    FusionParams<double> p(cfg);
    init_fusion(p, rng);
    Tensor2<double> tokens(cfg.k_frames, cfg.d_token);
    for (auto& v : tokens.data) v = rng.uniform(-1, 1);
    const std::vector<double> pooled = spectral_pool(tokens, cfg.low_bins());

    std::vector<ParamRef<double>> refs;
    append_linear_refs(refs, "spec_fc1", p.spec_fc1);
    append_linear_refs(refs, "spec_fc2", p.spec_fc2);
    append_norm_refs(refs, "spec_norm", p.spec_norm);

    auto loss = [&] {
        std::vector<double> h, pre, f;
        spectral_token(pooled, p, h, pre, f);
        double l = 0;
        for (double v : f) l += v * v;
        return l;
    };
    auto backward = [&] {
        std::vector<double> h, pre, f;
        LayerNormCache<double> ln;
        spectral_token(pooled, p, h, pre, f, &ln);
        std::vector<double> df(f.size());
        for (std::size_t i = 0; i < f.size(); ++i) df[i] = 2.0 * f[i];
        std::vector<double> dpre(pre.size(), 0.0);
        layernorm_backward(std::span<const double>(df), ln, p.spec_norm, std::span<double>(dpre));
        std::vector<double> dh(h.size(), 0.0);
        linear_backward(p.spec_fc2, std::span<const double>(h), std::span<const double>(dpre),
                        std::span<double>(dh));
        for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= tanh_grad_from_y(h[i]);
        linear_backward(p.spec_fc1, std::span<const double>(pooled), std::span<const double>(dh),
                        std::span<double>());
    };
    return grad_check(loss, backward, refs).max_rel_err;
}

/// Full fusion: loss = |z|^2 over every fusion parameter.
inline double check_fusion_gradients(std::uint64_t seed) {
    Xoshiro256 rng(seed);
    FusionConfig cfg = check_fusion_config();
    FusionParams<double> p(cfg);
    init_fusion(p, rng);
    Example<double> ex = check_example(rng, cfg, check_distill_config(), 3);
    auto refs = fusion_param_refs(p);

    auto loss = [&] {
        auto belief = fuse_forward(ex.robots, p, cfg);
        double l = 0;
        for (double v : belief.data) l += v * v;
        return l;
    };
    auto backward = [&] {
        FusionCache<double> c;
        auto belief = fuse_forward(ex.robots, p, cfg, c);
        std::vector<double> dz(belief.data.size());
        for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = 2.0 * belief.data[i];
        fuse_backward(std::span<const double>(dz), ex.robots, p, cfg, c);
    };
    return grad_check(loss, backward, refs).max_rel_err;
}

/// Full composite objective over every trainable tensor (fusion, prompt
/// banks, teacher pose encoder, prefix projections, answer head). The
/// detached cosine targets are snapshotted at the base point so the numeric
/// sweep differentiates the same function the training step optimizes.
inline double check_composite_gradients(std::uint64_t seed) {
    Xoshiro256 rng(seed);
    Model<double> m(check_fusion_config(), check_distill_config());
    m.init(seed);
    m.co_train_teacher = true;
    std::vector<Example<double>> batch;
    batch.push_back(check_example(rng, m.fusion_cfg, m.distill_cfg, 2));
    batch.push_back(check_example(rng, m.fusion_cfg, m.distill_cfg, 3));
    const LossWeights w{1.0, 0.3};
    auto refs = m.param_refs();

    std::vector<Tensor2<double>> targets;
    for (const auto& ex : batch) {
        TeacherInputs<double> tin;
        tin.gt_summaries = ex.gt_pose_summaries;
        targets.push_back(teacher_forward(m, tin, Mode::training));
    }

    auto loss = [&] {
        double total = 0;
        for (std::size_t i = 0; i < batch.size(); ++i)
            total +=
                example_forward(m, batch[i], w, Mode::training,
                                static_cast<ModelCache<double>*>(nullptr), &targets[i])
                    .total;
        return total / double(batch.size());
    };
    auto backward = [&] {
        for (std::size_t i = 0; i < batch.size(); ++i) {
            ModelCache<double> cache;
            example_forward(m, batch[i], w, Mode::training, &cache, &targets[i]);
            example_backward(m, batch[i], w, cache, 1.0 / double(batch.size()));
        }
    };
    return grad_check(loss, backward, refs).max_rel_err;
}

} // namespace teamlens
