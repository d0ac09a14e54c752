#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "teamlens/distill.hpp"
#include "teamlens/fusion.hpp"
#include "teamlens/rng.hpp"

namespace teamlens {

enum class Mode { training, inference };

struct LossWeights {
    double lambda_lm = 1.0;
    double lambda_distill = 0.3;
};

/// One training/evaluation example: the sampled per-robot token blocks and
/// motion summaries, the query embedding, the answer, and (training only)
/// the privileged ground-truth pose summaries.
template <typename T>
struct Example {
    std::string episode_id;
    std::vector<RobotInput<T>> robots;
    std::vector<std::array<T, kPoseSummaryDim>> gt_pose_summaries;
    std::vector<T> query;
    int answer = -1; // 0..3, -1 when unavailable
};

template <typename T>
struct LossReport {
    T total = T(0);      // optimized objective
    T composite = T(0);  // lambda_lm * lm + lambda_d * distill
    T lm = T(0);         // student-prefix cross-entropy
    T distill = T(0);    // cosine prompt distance
    T teacher_lm = T(0); // teacher-prefix cross-entropy (0 when branch off)
    int predicted = -1;  // student argmax
};

template <typename T>
struct ModelCache {
    FusionCache<T> fusion;
    PromptCache<T> student;
    PromptCache<T> teacher;
    TeacherPoseCache<T> teacher_pose;
    TeacherInputs<T> teacher_in;
    Tensor2<T> student_prompts;
    Tensor2<T> teacher_prompts;
    Tensor2<T> distill_target; // detached copy the student was aligned to
    HeadCache<T> student_head;
    HeadCache<T> teacher_head;
    Tensor2<T> teacher_prefix;
    bool teacher_branch = false;
};

// ============================================================================
//  Full trainable model: fusion + prompt banks + prefix/head. The teacher
//  half (its pose encoder and prompt bank) is privileged: it exists only on
//  the training path and its tensors are flagged non-inference in
//  checkpoints.
// ============================================================================
template <typename T>
struct Model {
    FusionConfig fusion_cfg;
    DistillConfig distill_cfg;
    bool co_train_teacher = true;

    FusionParams<T> fusion;
    PromptBank<T> student;
    PromptBank<T> teacher;
    LinearMap<T> teacher_pose_fc1;
    LinearMap<T> teacher_pose_fc2;
    PrefixParams<T> prefix;

    Model() : Model(FusionConfig{}, DistillConfig{}) {}

    Model(const FusionConfig& fc, const DistillConfig& dc) { resize(fc, dc); }

    void resize(const FusionConfig& fc, const DistillConfig& dc) {
        fc.validate();
        dc.validate();
        fusion_cfg = fc;
        distill_cfg = dc;
        fusion.resize(fc);
        student = PromptBank<T>(dc.n_prompts, dc.d_prompt, fc.d_belief);
        teacher = PromptBank<T>(dc.n_prompts, dc.d_prompt, dc.d_pose);
        teacher_pose_fc1 = LinearMap<T>(dc.d_pose, kPoseSummaryDim);
        teacher_pose_fc2 = LinearMap<T>(dc.d_pose, dc.d_pose);
        prefix = PrefixParams<T>(dc.d_lm, fc.d_belief, dc.d_prompt, dc.d_query);
    }

    void init(std::uint64_t seed) {
        Xoshiro256 rng(splitmix64_next(seed));
        init_fusion(fusion, rng);
        init_bank(student, rng);
        init_linear(teacher_pose_fc1, rng);
        init_linear(teacher_pose_fc2, rng);
        init_bank(teacher, rng);
        init_projection(prefix.proj_belief, rng);
        init_projection(prefix.proj_prompt, rng);
        init_projection(prefix.proj_query, rng);
        init_linear(prefix.head, rng);
    }

    /// Every trainable tensor, in the fixed order shared by the optimizer,
    /// checkpoints, and the gradient checker.
    std::vector<ParamRef<T>> param_refs() {
        std::vector<ParamRef<T>> out = fusion_param_refs(fusion);
        for (auto& r : prompt_bank_refs(student, "student")) out.push_back(r);
        append_linear_refs(out, "teacher.pose_fc1", teacher_pose_fc1);
        append_linear_refs(out, "teacher.pose_fc2", teacher_pose_fc2);
        for (auto& r : prompt_bank_refs(teacher, "teacher")) out.push_back(r);
        for (auto& r : prefix_param_refs(prefix)) out.push_back(r);
        return out;
    }

    static bool is_teacher_param(const std::string& name) {
        return name.rfind("teacher.", 0) == 0;
    }

    void zero_grad() {
        for (auto& r : param_refs()) r.param->zero_grad();
    }

private:
    static void init_bank(PromptBank<T>& b, Xoshiro256& rng) {
        for (T& v : b.prompts.value.data) v = static_cast<T>(rng.normal(0.0, 0.02));
        for (T& v : b.pos.value.data) v = static_cast<T>(rng.normal(0.0, 0.02));
        init_linear(b.cond, rng);
    }
};

// ----------------------------------------------------------------------------
//  forward / backward
// ----------------------------------------------------------------------------

/// Privileged teacher prompt emission. Hard error on the inference path.
template <typename T>
Tensor2<T> teacher_forward(const Model<T>& m, const TeacherInputs<T>& in, Mode mode,
                           ModelCache<T>* c = nullptr) {
    if (mode == Mode::inference)
        throw std::runtime_error("teacher_forward: privileged teacher invoked at inference");
    IoTracker::teacher_forwards()++;
    std::vector<T> pose = teacher_pose_embed(in, m.teacher_pose_fc1, m.teacher_pose_fc2,
                                             c ? &c->teacher_pose : nullptr);
    return prompt_forward(m.teacher, std::span<const T>(pose), c ? &c->teacher : nullptr);
}

/// Inference-safe student prompt emission.
template <typename T>
Tensor2<T> student_forward(const Model<T>& m, std::span<const T> belief,
                           ModelCache<T>* c = nullptr) {
    return prompt_forward(m.student, belief, c ? &c->student : nullptr);
}

/// Student-path prediction: fuse -> student prompts -> prefix -> argmax.
template <typename T>
int predict(const Model<T>& m, const Example<T>& ex) {
    FusionCache<T> fc;
    TeamBelief<T> z = fuse_forward(ex.robots, m.fusion, m.fusion_cfg, fc);
    Tensor2<T> ps = student_forward(m, std::span<const T>(z.data));
    Tensor2<T> seq = assemble_prefix(std::span<const T>(z.data), ps,
                                     std::span<const T>(ex.query), m.prefix);
    return head_predict(seq, m.prefix.head);
}

/// Composite objective for one example.
///
/// total = lambda_lm * CE(student prefix) + lambda_d * cos_distance(P_S, P_T)
///       [ + lambda_lm * CE(teacher prefix) when the teacher is co-trained ]
///
/// The cosine target is detached, so the teacher trains only through its own
/// prefix branch. With lambda_d = 0 the teacher pathway is skipped entirely
/// and the objective reduces to the plain student cross-entropy.
///
/// `pinned_target` substitutes a frozen copy of the teacher prompt as the
/// cosine target. The gradient checker uses it to evaluate exactly the
/// function the step optimizes: each step aligns the student to a detached
/// snapshot, so finite differences must hold that snapshot fixed too.
template <typename T>
LossReport<T> example_forward(const Model<T>& m, const Example<T>& ex, const LossWeights& w,
                              Mode mode, ModelCache<T>* c = nullptr,
                              const Tensor2<T>* pinned_target = nullptr) {
    if (ex.answer < 0) throw std::invalid_argument("example_forward: example has no answer");
    LossReport<T> rep;

    FusionCache<T> local_fc;
    FusionCache<T>& fc = c ? c->fusion : local_fc;
    TeamBelief<T> z = fuse_forward(ex.robots, m.fusion, m.fusion_cfg, fc);
    const std::vector<T>& belief = z.data;

    Tensor2<T> ps = student_forward(m, std::span<const T>(belief), c);
    Tensor2<T> seq = assemble_prefix(std::span<const T>(belief), ps,
                                     std::span<const T>(ex.query), m.prefix);
    HeadCache<T> local_head;
    auto [lm_loss, pred] =
        surrogate_lm_loss(seq, m.prefix.head, ex.answer, c ? &c->student_head : &local_head);
    rep.lm = lm_loss;
    rep.predicted = pred;

    const bool distill_on = mode == Mode::training && w.lambda_distill > 0;
    if (distill_on) {
        if (ex.gt_pose_summaries.empty())
            throw std::runtime_error("example_forward: training with distillation requires "
                                     "ground-truth pose summaries");
        TeacherInputs<T> tin;
        tin.gt_summaries = ex.gt_pose_summaries;
        if (c) c->teacher_in = tin;
        Tensor2<T> pt = teacher_forward(m, tin, mode, c);
        rep.distill = distill_loss(ps, pinned_target ? *pinned_target : pt);
        if (c) c->distill_target = pinned_target ? *pinned_target : pt;
        if (m.co_train_teacher) {
            Tensor2<T> tseq = assemble_prefix(std::span<const T>(belief), pt,
                                              std::span<const T>(ex.query), m.prefix);
            auto [tl, tpred] = surrogate_lm_loss(tseq, m.prefix.head, ex.answer,
                                                 c ? &c->teacher_head : nullptr);
            (void)tpred;
            rep.teacher_lm = tl;
            if (c) c->teacher_prefix = tseq;
        }
        if (c) {
            c->teacher_prompts = pt;
            c->teacher_branch = m.co_train_teacher;
        }
    }
    if (c) c->student_prompts = ps;

    rep.composite = static_cast<T>(w.lambda_lm) * rep.lm +
                    static_cast<T>(w.lambda_distill) * rep.distill;
    rep.total = rep.composite;
    if (distill_on && m.co_train_teacher)
        rep.total += static_cast<T>(w.lambda_lm) * rep.teacher_lm;
    return rep;
}

/// Backward for `upstream * total`; gradients accumulate into the model.
/// Must be called with the cache filled by example_forward in training mode.
template <typename T>
void example_backward(Model<T>& m, const Example<T>& ex, const LossWeights& w,
                      const ModelCache<T>& c, T upstream) {
    const std::size_t d_belief_dim = m.fusion_cfg.d_belief;
    std::vector<T> d_belief(d_belief_dim, T(0));
    Tensor2<T> d_ps(c.student_prompts.rows, c.student_prompts.cols);

    const std::vector<T>& belief = c.fusion.belief;

    // student branch CE
    prefix_loss_backward(c.student_head, ex.answer, upstream * static_cast<T>(w.lambda_lm),
                         std::span<const T>(belief), c.student_prompts,
                         std::span<const T>(ex.query), m.prefix, std::span<T>(d_belief), d_ps);

    const bool distill_on = w.lambda_distill > 0 && c.teacher_prompts.rows > 0;
    if (distill_on) {
        // cosine alignment pulls only the student rows
        distill_loss_backward(c.student_prompts, c.distill_target,
                              upstream * static_cast<T>(w.lambda_distill), d_ps);
        if (c.teacher_branch) {
            Tensor2<T> d_pt(c.teacher_prompts.rows, c.teacher_prompts.cols);
            prefix_loss_backward(c.teacher_head, ex.answer, upstream * static_cast<T>(w.lambda_lm),
                                 std::span<const T>(belief), c.teacher_prompts,
                                 std::span<const T>(ex.query), m.prefix, std::span<T>(d_belief),
                                 d_pt);
            std::vector<T> d_teacher_pose(m.distill_cfg.d_pose, T(0));
            prompt_backward(m.teacher, d_pt, c.teacher, std::span<T>(d_teacher_pose));
            teacher_pose_backward(c.teacher_in, m.teacher_pose_fc1, m.teacher_pose_fc2,
                                  c.teacher_pose, std::span<const T>(d_teacher_pose));
        }
    }

    // student bank: prompt gradient flows back into the belief through cond
    prompt_backward(m.student, d_ps, c.student, std::span<T>(d_belief));

    fuse_backward(std::span<const T>(d_belief), ex.robots, m.fusion, m.fusion_cfg, c.fusion);
}

} // namespace teamlens
