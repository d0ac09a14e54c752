#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "teamlens/fusion.hpp"
#include "teamlens/ops.hpp"
#include "teamlens/optimizer.hpp"
#include "teamlens/stream_io.hpp"
#include "teamlens/tensor.hpp"

namespace teamlens {

// ============================================================================
//  Prompt-space distillation. A privileged teacher turns ground-truth pose
//  summaries into L prompt vectors; the student produces its own L prompts
//  from the fused team belief and is pulled toward the teacher rows by a
//  cosine distance, teacher side detached. At inference the teacher does not
//  exist: the student prompt plus the projected belief and query form the
//  prefix consumed by the answer head.
// ============================================================================

struct DistillConfig {
    std::size_t n_prompts = 8; // L
    std::size_t d_prompt = 128;
    std::size_t d_lm = 128;   // prefix token width
    std::size_t d_pose = 32;  // teacher pose embedding width
    std::size_t d_query = 32; // query embedding width
    static constexpr std::size_t n_choices = 4;

    void validate() const {
        if (n_prompts < 1) throw std::invalid_argument("DistillConfig: need at least one prompt");
        if (d_prompt < 2 || d_lm < 2 || d_pose < 1 || d_query < 1)
            throw std::invalid_argument("DistillConfig: degenerate dimension");
    }
};

/// Learnable prompt rows plus positional codes, a conditioning projection,
/// and the shared row-wise LayerNorm. The same machinery serves the student
/// (conditioned on the belief) and the teacher (conditioned on the pose
/// embedding); only cond.in_dim differs.
template <typename T>
struct PromptBank {
    Param<T> prompts; // L x d_prompt
    Param<T> pos;     // L x d_prompt
    LinearMap<T> cond;
    LayerNormParams<T> norm;

    PromptBank() = default;
    PromptBank(std::size_t l, std::size_t d, std::size_t cond_in)
        : prompts(l, d), pos(l, d), cond(d, cond_in), norm(d) {}

    std::size_t rows() const { return prompts.value.rows; }
    std::size_t dim() const { return prompts.value.cols; }
};

template <typename T>
struct PromptCache {
    std::vector<T> cond_in;  // conditioning input
    std::vector<T> cond_out; // broadcast row
    std::vector<std::vector<T>> pre;
    std::vector<LayerNormCache<T>> ln;
};

/// Row l of the output is LayerNorm(prompts[l] + pos[l] + cond(input)).
template <typename T>
Tensor2<T> prompt_forward(const PromptBank<T>& bank, std::span<const T> cond_in,
                          PromptCache<T>* cache) {
    const std::size_t l = bank.rows();
    const std::size_t d = bank.dim();
    std::vector<T> u(d);
    linear_forward(bank.cond, cond_in, std::span<T>(u));
    Tensor2<T> out(l, d);
    if (cache) {
        cache->cond_in.assign(cond_in.begin(), cond_in.end());
        cache->cond_out = u;
        cache->pre.resize(l);
        cache->ln.resize(l);
    }
    std::vector<T> pre(d);
    for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = 0; j < d; ++j)
            pre[j] = bank.prompts.value.at(i, j) + bank.pos.value.at(i, j) + u[j];
        if (cache) cache->pre[i] = pre;
        layernorm_forward(std::span<const T>(pre), bank.norm, out.row(i),
                          cache ? &cache->ln[i] : nullptr);
    }
    return out;
}

/// Backward through the bank; adds the conditioning-input gradient into
/// d_cond_in when non-empty.
template <typename T>
void prompt_backward(PromptBank<T>& bank, const Tensor2<T>& d_out, const PromptCache<T>& cache,
                     std::span<T> d_cond_in) {
    const std::size_t l = bank.rows();
    const std::size_t d = bank.dim();
    std::vector<T> d_u(d, T(0));
    std::vector<T> d_pre(d);
    for (std::size_t i = 0; i < l; ++i) {
        layernorm_backward(d_out.row(i), cache.ln[i], bank.norm, std::span<T>(d_pre));
        for (std::size_t j = 0; j < d; ++j) {
            bank.prompts.grad.at(i, j) += d_pre[j];
            bank.pos.grad.at(i, j) += d_pre[j];
            d_u[j] += d_pre[j];
        }
    }
    linear_backward(bank.cond, std::span<const T>(cache.cond_in), std::span<const T>(d_u),
                    d_cond_in);
}

// ----------------------------------------------------------------------------
//  teacher pose pathway (privileged)
// ----------------------------------------------------------------------------

/// Teacher-owned inputs: one pose summary per robot from the ground-truth
/// logs. Only constructible on the training path.
template <typename T>
struct TeacherInputs {
    std::vector<std::array<T, kPoseSummaryDim>> gt_summaries;
};

template <typename T>
struct TeacherPoseCache {
    std::vector<std::vector<T>> h;   // per robot, tanh output
    std::vector<std::vector<T>> emb; // per robot pose embedding
    std::vector<T> mean_emb;         // d_pose
};

/// Per-robot ground-truth pose embeddings, averaged into one vector.
template <typename T>
std::vector<T> teacher_pose_embed(const TeacherInputs<T>& in, const LinearMap<T>& fc1,
                                  const LinearMap<T>& fc2, TeacherPoseCache<T>* cache) {
    const std::size_t n = in.gt_summaries.size();
    if (n == 0) throw std::invalid_argument("teacher_pose_embed: no robots");
    const std::size_t d = fc2.out_dim();
    std::vector<T> mean(d, T(0));
    if (cache) {
        cache->h.resize(n);
        cache->emb.resize(n);
    }
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<T> h(fc1.out_dim());
        linear_forward(fc1, std::span<const T>(in.gt_summaries[r].data(), kPoseSummaryDim),
                       std::span<T>(h));
        for (T& v : h) v = std::tanh(v);
        std::vector<T> e(d);
        linear_forward(fc2, std::span<const T>(h), std::span<T>(e));
        for (std::size_t i = 0; i < d; ++i) mean[i] += e[i];
        if (cache) {
            cache->h[r] = std::move(h);
            cache->emb[r] = std::move(e);
        }
    }
    for (T& v : mean) v /= T(n);
    if (cache) cache->mean_emb = mean;
    return mean;
}

template <typename T>
void teacher_pose_backward(const TeacherInputs<T>& in, LinearMap<T>& fc1, LinearMap<T>& fc2,
                           const TeacherPoseCache<T>& cache, std::span<const T> d_mean) {
    const std::size_t n = in.gt_summaries.size();
    std::vector<T> d_emb(d_mean.size());
    for (std::size_t i = 0; i < d_emb.size(); ++i) d_emb[i] = d_mean[i] / T(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<T> d_h(fc1.out_dim(), T(0));
        linear_backward(fc2, std::span<const T>(cache.h[r]), std::span<const T>(d_emb),
                        std::span<T>(d_h));
        for (std::size_t i = 0; i < d_h.size(); ++i) d_h[i] *= tanh_grad_from_y(cache.h[r][i]);
        linear_backward(fc1, std::span<const T>(in.gt_summaries[r].data(), kPoseSummaryDim),
                        std::span<const T>(d_h), std::span<T>());
    }
}

// ----------------------------------------------------------------------------
//  cosine prompt alignment
// ----------------------------------------------------------------------------

/// Mean over rows of (1 - cos(student_row, teacher_row)); range [0, 2].
template <typename T>
T distill_loss(const Tensor2<T>& student, const Tensor2<T>& teacher) {
    if (!student.same_shape(teacher))
        throw std::invalid_argument("distill_loss: shape mismatch " + student.shape_str() +
                                    " vs " + teacher.shape_str());
    T total = T(0);
    for (std::size_t l = 0; l < student.rows; ++l) {
        const T ns = norm2(student.row(l));
        const T nt = norm2(teacher.row(l));
        if (ns == T(0) || nt == T(0))
            throw std::runtime_error("distill_loss: degenerate zero-norm prompt row " +
                                     std::to_string(l));
        total += T(1) - dot(student.row(l), teacher.row(l)) / (ns * nt);
    }
    return total / T(student.rows);
}

/// Gradient w.r.t. the student rows only; the teacher is a detached target.
template <typename T>
void distill_loss_backward(const Tensor2<T>& student, const Tensor2<T>& teacher, T upstream,
                           Tensor2<T>& d_student) {
    const T inv_l = upstream / T(student.rows);
    for (std::size_t l = 0; l < student.rows; ++l) {
        const auto s = student.row(l);
        const auto t = teacher.row(l);
        const T ns = norm2(s);
        const T nt = norm2(t);
        const T c = dot(s, t) / (ns * nt);
        for (std::size_t j = 0; j < s.size(); ++j) {
            // d(1 - cos)/ds_j = -(t_j/(ns*nt) - cos * s_j/ns^2)
            d_student.at(l, j) += -inv_l * (t[j] / (ns * nt) - c * s[j] / (ns * ns));
        }
    }
}

// ----------------------------------------------------------------------------
//  prefix assembly and the surrogate answer head
// ----------------------------------------------------------------------------

/// Projections assembling the decoder prefix, plus the 4-way answer head
/// standing in for a language-model readout.
template <typename T>
struct PrefixParams {
    Param<T> proj_belief; // d_lm x d_belief
    Param<T> proj_prompt; // d_lm x d_prompt
    Param<T> proj_query;  // d_lm x d_query
    LinearMap<T> head;    // 4 x d_lm

    PrefixParams() = default;
    PrefixParams(std::size_t d_lm, std::size_t d_belief, std::size_t d_prompt, std::size_t d_query)
        : proj_belief(d_lm, d_belief),
          proj_prompt(d_lm, d_prompt),
          proj_query(d_lm, d_query),
          head(DistillConfig::n_choices, d_lm) {}
};

/// Rows: [projected belief; L projected prompt rows; projected query].
template <typename T>
Tensor2<T> assemble_prefix(std::span<const T> belief, const Tensor2<T>& prompts,
                           std::span<const T> query, const PrefixParams<T>& p) {
    const std::size_t d_lm = p.proj_belief.value.rows;
    Tensor2<T> seq(1 + prompts.rows + 1, d_lm);
    matvec(p.proj_belief.value, belief, seq.row(0));
    for (std::size_t l = 0; l < prompts.rows; ++l)
        matvec(p.proj_prompt.value, prompts.row(l), seq.row(1 + l));
    matvec(p.proj_query.value, query, seq.row(1 + prompts.rows));
    return seq;
}

template <typename T>
struct HeadCache {
    Tensor2<T> prefix;
    std::vector<T> pooled; // mean over prefix rows
    std::vector<T> probs;  // softmax(logits)
};

/// Cross-entropy of the answer head over the mean-pooled prefix.
/// Returns {loss, argmax index}.
template <typename T>
std::pair<T, int> surrogate_lm_loss(const Tensor2<T>& prefix, const LinearMap<T>& head,
                                    int answer_index, HeadCache<T>* cache) {
    if (answer_index < 0 || answer_index >= static_cast<int>(DistillConfig::n_choices))
        throw std::invalid_argument("surrogate_lm_loss: answer_index " +
                                    std::to_string(answer_index) + " outside [0,3]");
    std::vector<T> pooled(prefix.cols, T(0));
    for (std::size_t r = 0; r < prefix.rows; ++r)
        for (std::size_t j = 0; j < prefix.cols; ++j) pooled[j] += prefix.at(r, j);
    for (T& v : pooled) v /= T(prefix.rows);
    std::vector<T> logits(DistillConfig::n_choices);
    linear_forward(head, std::span<const T>(pooled), std::span<T>(logits));
    std::vector<T> probs = softmax(std::span<const T>(logits));
    int best = 0;
    for (int i = 1; i < static_cast<int>(probs.size()); ++i)
        if (probs[i] > probs[best]) best = i;
    const T loss = -std::log(probs[static_cast<std::size_t>(answer_index)]);
    if (cache) {
        cache->prefix = prefix;
        cache->pooled = pooled;
        cache->probs = probs;
    }
    return {loss, best};
}

/// Argmax-only path for evaluation.
template <typename T>
int head_predict(const Tensor2<T>& prefix, const LinearMap<T>& head) {
    std::vector<T> pooled(prefix.cols, T(0));
    for (std::size_t r = 0; r < prefix.rows; ++r)
        for (std::size_t j = 0; j < prefix.cols; ++j) pooled[j] += prefix.at(r, j);
    for (T& v : pooled) v /= T(prefix.rows);
    std::vector<T> logits(DistillConfig::n_choices);
    linear_forward(head, std::span<const T>(pooled), std::span<T>(logits));
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

/// Backward for surrogate_lm_loss + assemble_prefix in one step.
/// Accumulates prefix/head gradients and adds input gradients into
/// d_belief / d_prompts / (query is data).
template <typename T>
void prefix_loss_backward(const HeadCache<T>& cache, int answer_index, T upstream,
                          std::span<const T> belief, const Tensor2<T>& prompts,
                          std::span<const T> query, PrefixParams<T>& p, std::span<T> d_belief,
                          Tensor2<T>& d_prompts) {
    const std::size_t rows = cache.prefix.rows;
    const std::size_t d_lm = cache.prefix.cols;
    std::vector<T> d_logits(cache.probs.begin(), cache.probs.end());
    d_logits[static_cast<std::size_t>(answer_index)] -= T(1);
    for (T& v : d_logits) v *= upstream;

    std::vector<T> d_pooled(d_lm, T(0));
    linear_backward(p.head, std::span<const T>(cache.pooled), std::span<const T>(d_logits),
                    std::span<T>(d_pooled));

    const T inv_rows = T(1) / T(rows);
    std::vector<T> d_row(d_lm);
    for (std::size_t j = 0; j < d_lm; ++j) d_row[j] = d_pooled[j] * inv_rows;

    // row 0: projected belief
    outer_acc(p.proj_belief.grad, std::span<const T>(d_row), belief);
    matTvec_acc(p.proj_belief.value, std::span<const T>(d_row), d_belief);
    // rows 1..L: projected prompts
    for (std::size_t l = 0; l < prompts.rows; ++l) {
        outer_acc(p.proj_prompt.grad, std::span<const T>(d_row), prompts.row(l));
        matTvec_acc(p.proj_prompt.value, std::span<const T>(d_row), d_prompts.row(l));
    }
    // final row: projected query (query is data, only the projection learns)
    outer_acc(p.proj_query.grad, std::span<const T>(d_row), query);
}

// ----------------------------------------------------------------------------
//  registries
// ----------------------------------------------------------------------------

template <typename T>
std::vector<ParamRef<T>> prompt_bank_refs(PromptBank<T>& b, const std::string& prefix) {
    std::vector<ParamRef<T>> out;
    out.push_back({prefix + ".prompts", &b.prompts});
    out.push_back({prefix + ".pos", &b.pos});
    append_linear_refs(out, prefix + ".cond", b.cond);
    append_norm_refs(out, prefix + ".norm", b.norm);
    return out;
}

template <typename T>
std::vector<ParamRef<T>> prefix_param_refs(PrefixParams<T>& p, const std::string& prefix = "prefix") {
    std::vector<ParamRef<T>> out;
    out.push_back({prefix + ".proj_belief", &p.proj_belief});
    out.push_back({prefix + ".proj_prompt", &p.proj_prompt});
    out.push_back({prefix + ".proj_query", &p.proj_query});
    append_linear_refs(out, prefix + ".head", p.head);
    return out;
}

} // namespace teamlens
