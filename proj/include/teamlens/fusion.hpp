#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "teamlens/fft.hpp"
#include "teamlens/ops.hpp"
#include "teamlens/optimizer.hpp"
#include "teamlens/pose_log.hpp"
#include "teamlens/rng.hpp"
#include "teamlens/tensor.hpp"

namespace teamlens {

// ============================================================================
//  Multi-view fusion. Each robot's K sampled visual tokens produce a
//  probabilistic state (mean + positive variance). A per-robot auxiliary
//  token combines a projected motion embedding, a projected low-frequency
//  spectral summary of the sampled tokens, and a learned role embedding.
//  States attend to the auxiliary tokens (single-head, residual) and are
//  pooled into one team belief with softmax(-|sigma|) reliability weights.
//  Nothing here depends on the team size, so the same parameters serve any
//  N in [1, max_robots].
// ============================================================================

struct FusionConfig {
    std::size_t d_state = 128;   // robot state / auxiliary token width
    std::size_t d_spectral = 64; // spectral summary width
    std::size_t d_pose = 32;     // motion embedding width
    std::size_t d_belief = 128;  // fused team belief width
    std::size_t d_token = 32;    // visual token width (from the streams)
    std::size_t k_frames = 8;    // sampled frames per robot
    std::size_t n_low = 0;       // retained low-frequency bins; 0 = K/2 + 1
    std::size_t max_robots = 8;
    bool use_spectral_token = true; // ablation: drop the W_f F_r term
    bool use_pose_token = true;     // drop the W_p P_r term (no controls available)

    std::size_t low_bins() const { return n_low == 0 ? k_frames / 2 + 1 : n_low; }

    void validate() const {
        if (d_state < 2 || d_spectral < 2 || d_pose < 1 || d_belief < 1 || d_token < 1)
            throw std::invalid_argument("FusionConfig: degenerate dimension");
        if (k_frames < 2) throw std::invalid_argument("FusionConfig: k_frames must be >= 2");
        if (low_bins() < 1 || low_bins() > k_frames / 2 + 1)
            throw std::invalid_argument("FusionConfig: n_low outside [1, K/2+1]");
        if (max_robots < 1) throw std::invalid_argument("FusionConfig: max_robots must be >= 1");
    }
};

constexpr std::size_t kPoseSummaryDim = 6; // x, y, cos h, sin h, v_fwd, v_ang

template <typename T>
struct FusionParams {
    // probabilistic head: token mean -> (mu, pre-softplus sigma)
    LinearMap<T> prob_mu;
    LinearMap<T> prob_sigma;
    // spectral summary MLP: pooled low-frequency magnitudes -> d_spectral
    LinearMap<T> spec_fc1;
    LinearMap<T> spec_fc2;
    LayerNormParams<T> spec_norm;
    // motion MLP: 6 summary features -> d_pose
    LinearMap<T> pose_fc1;
    LinearMap<T> pose_fc2;
    // auxiliary token assembly
    Param<T> proj_pose;     // d_state x d_pose
    Param<T> proj_spectral; // d_state x d_spectral
    Param<T> role;          // max_robots x d_state, row = robot id
    // single-head attention
    Param<T> attn_q, attn_k, attn_v, attn_o; // d_state x d_state
    // belief projection
    Param<T> proj_belief; // d_belief x d_state

    explicit FusionParams(const FusionConfig& cfg = {}) { resize(cfg); }

    void resize(const FusionConfig& cfg) {
        cfg.validate();
        prob_mu = LinearMap<T>(cfg.d_state, cfg.d_token);
        prob_sigma = LinearMap<T>(cfg.d_state, cfg.d_token);
        spec_fc1 = LinearMap<T>(cfg.d_spectral, cfg.low_bins());
        spec_fc2 = LinearMap<T>(cfg.d_spectral, cfg.d_spectral);
        spec_norm = LayerNormParams<T>(cfg.d_spectral);
        pose_fc1 = LinearMap<T>(cfg.d_pose, kPoseSummaryDim);
        pose_fc2 = LinearMap<T>(cfg.d_pose, cfg.d_pose);
        proj_pose = Param<T>(cfg.d_state, cfg.d_pose);
        proj_spectral = Param<T>(cfg.d_state, cfg.d_spectral);
        role = Param<T>(cfg.max_robots, cfg.d_state);
        attn_q = Param<T>(cfg.d_state, cfg.d_state);
        attn_k = Param<T>(cfg.d_state, cfg.d_state);
        attn_v = Param<T>(cfg.d_state, cfg.d_state);
        attn_o = Param<T>(cfg.d_state, cfg.d_state);
        proj_belief = Param<T>(cfg.d_belief, cfg.d_state);
    }
};

/// One robot's inputs to the fusion stage. Tokens are the K sampled rows of
/// the robot's token stream; the pose summary is averaged over the same
/// selected frames.
template <typename T>
struct RobotInput {
    int robot_id = -1;
    Tensor2<T> tokens; // K x d_token
    std::array<T, kPoseSummaryDim> pose_summary{};
    bool has_pose = false;
};

/// Mean over selected timesteps of (x, y, cos heading, sin heading, v_fwd,
/// v_ang). The trig pair keeps the wrap at +-pi continuous.
template <typename T>
std::array<T, kPoseSummaryDim> pose_summary(const PoseLog& log,
                                            const std::vector<std::size_t>& frames) {
    if (frames.empty()) throw std::invalid_argument("pose_summary: empty selection");
    std::array<double, kPoseSummaryDim> acc{};
    for (std::size_t t : frames) {
        if (t >= log.n_frames())
            throw std::invalid_argument("pose_summary: selected frame " + std::to_string(t) +
                                        " outside log of " + std::to_string(log.n_frames()));
        const PoseRow& r = log.rows[t];
        acc[0] += r.x;
        acc[1] += r.y;
        acc[2] += std::cos(r.heading);
        acc[3] += std::sin(r.heading);
        acc[4] += r.v_fwd;
        acc[5] += r.v_ang;
    }
    std::array<T, kPoseSummaryDim> out{};
    for (std::size_t i = 0; i < kPoseSummaryDim; ++i)
        out[i] = static_cast<T>(acc[i] / static_cast<double>(frames.size()));
    return out;
}

/// Low-frequency magnitude summary of a K x d token block: per-column
/// magnitude spectrum along the K axis, the lowest n_low bins (DC included)
/// mean-pooled across columns. Pure function of the tokens, no parameters.
template <typename T>
std::vector<T> spectral_pool(const Tensor2<T>& tokens, std::size_t n_low) {
    const Tensor2<T> mags = rfft_col_mag(tokens);
    if (n_low > mags.rows)
        throw std::invalid_argument("spectral_pool: n_low " + std::to_string(n_low) +
                                    " exceeds available bins " + std::to_string(mags.rows));
    std::vector<T> v(n_low, T(0));
    for (std::size_t k = 0; k < n_low; ++k) {
        T acc = T(0);
        for (std::size_t j = 0; j < mags.cols; ++j) acc += mags.at(k, j);
        v[k] = acc / T(mags.cols);
    }
    return v;
}

template <typename T>
struct TeamBelief {
    std::vector<T> data;    // d_belief
    std::vector<T> weights; // per robot, in (0,1], sums to 1
};

// ----------------------------------------------------------------------------
//  forward cache
// ----------------------------------------------------------------------------

template <typename T>
struct FusionCache {
    std::size_t n = 0;
    // per robot
    std::vector<std::vector<T>> pooled_tokens; // d_token
    std::vector<std::vector<T>> mu;            // d_state
    std::vector<std::vector<T>> sigma_pre;     // d_state
    std::vector<std::vector<T>> sigma;         // d_state
    std::vector<std::vector<T>> spec_in;       // n_low
    std::vector<std::vector<T>> spec_h;        // d_spectral (tanh output)
    std::vector<std::vector<T>> spec_pre;      // d_spectral (pre-norm)
    std::vector<LayerNormCache<T>> spec_ln;
    std::vector<std::vector<T>> fourier;  // d_spectral (F_r)
    std::vector<std::vector<T>> pose_h;   // d_pose (tanh output)
    std::vector<std::vector<T>> pose_emb; // d_pose (P_r)
    std::vector<std::vector<T>> aux;      // d_state (A_r)
    std::vector<std::vector<T>> att_q;    // d_state
    std::vector<std::vector<T>> att_k;    // d_state
    std::vector<std::vector<T>> att_v;    // d_state
    std::vector<std::vector<T>> att_w;    // n (softmax row)
    std::vector<std::vector<T>> ctx;      // d_state
    std::vector<std::vector<T>> mu_hat;   // d_state
    std::vector<T> sigma_norm;            // scalar per robot
    std::vector<T> weights;               // pooling weights
    std::vector<T> pooled_state;          // d_state
    std::vector<T> belief;                // d_belief
    std::vector<int> robot_ids;
};

// ----------------------------------------------------------------------------
//  component forwards (also usable standalone)
// ----------------------------------------------------------------------------

/// (mu_r, sigma_r) from the K sampled tokens; sigma strictly positive.
template <typename T>
void probabilistic_head(const Tensor2<T>& tokens, const FusionParams<T>& p,
                        std::vector<T>& mu, std::vector<T>& sigma_pre, std::vector<T>& sigma,
                        std::vector<T>& pooled) {
    pooled.assign(tokens.cols, T(0));
    for (std::size_t k = 0; k < tokens.rows; ++k)
        for (std::size_t j = 0; j < tokens.cols; ++j) pooled[j] += tokens.at(k, j);
    for (T& v : pooled) v /= T(tokens.rows);
    mu.resize(p.prob_mu.out_dim());
    sigma_pre.resize(p.prob_sigma.out_dim());
    sigma.resize(p.prob_sigma.out_dim());
    linear_forward(p.prob_mu, std::span<const T>(pooled), std::span<T>(mu));
    linear_forward(p.prob_sigma, std::span<const T>(pooled), std::span<T>(sigma_pre));
    for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = softplus(sigma_pre[i]);
}

/// Spectral summary F_r = LayerNorm(fc2(tanh(fc1(pooled magnitudes)))).
template <typename T>
void spectral_token(const std::vector<T>& spec_in, const FusionParams<T>& p, std::vector<T>& h,
                    std::vector<T>& pre, std::vector<T>& out,
                    LayerNormCache<T>* ln_cache = nullptr) {
    h.resize(p.spec_fc1.out_dim());
    linear_forward(p.spec_fc1, std::span<const T>(spec_in), std::span<T>(h));
    for (T& v : h) v = std::tanh(v);
    pre.resize(p.spec_fc2.out_dim());
    linear_forward(p.spec_fc2, std::span<const T>(h), std::span<T>(pre));
    out.resize(pre.size());
    layernorm_forward(std::span<const T>(pre), p.spec_norm, std::span<T>(out), ln_cache);
}

/// Motion embedding P_r = fc2(tanh(fc1(summary))).
template <typename T>
void pose_embed(const std::array<T, kPoseSummaryDim>& summary, const FusionParams<T>& p,
                std::vector<T>& h, std::vector<T>& out) {
    h.resize(p.pose_fc1.out_dim());
    linear_forward(p.pose_fc1, std::span<const T>(summary.data(), summary.size()), std::span<T>(h));
    for (T& v : h) v = std::tanh(v);
    out.resize(p.pose_fc2.out_dim());
    linear_forward(p.pose_fc2, std::span<const T>(h), std::span<T>(out));
}

/// A_r = W_p P_r + W_f F_r + role[robot_id]. Empty spans drop their term.
template <typename T>
void assemble_aux(const FusionParams<T>& p, std::span<const T> pose_emb,
                  std::span<const T> fourier, int robot_id, std::span<T> out) {
    std::fill(out.begin(), out.end(), T(0));
    if (!fourier.empty()) matvec_acc(p.proj_spectral.value, fourier, out);
    if (!pose_emb.empty()) matvec_acc(p.proj_pose.value, pose_emb, out);
    vec_add(out, p.role.value.row(static_cast<std::size_t>(robot_id)));
}

/// softmax over the negative sigma norms; the pooling weights.
template <typename T>
std::vector<T> reliability_weights(const std::vector<T>& sigma_norms) {
    std::vector<T> neg(sigma_norms.size());
    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -sigma_norms[i];
    return softmax(std::span<const T>(neg));
}

// ----------------------------------------------------------------------------
//  full forward
// ----------------------------------------------------------------------------

template <typename T>
TeamBelief<T> fuse_forward(const std::vector<RobotInput<T>>& robots, const FusionParams<T>& p,
                           const FusionConfig& cfg, FusionCache<T>& c) {
    cfg.validate();
    const std::size_t n = robots.size();
    if (n < 1) throw std::invalid_argument("fuse_forward: empty team");
    if (n > cfg.max_robots)
        throw std::invalid_argument("fuse_forward: team of " + std::to_string(n) +
                                    " exceeds max_robots " + std::to_string(cfg.max_robots));
    const std::size_t d = cfg.d_state;

    c = FusionCache<T>{};
    c.n = n;
    c.pooled_tokens.resize(n);
    c.mu.resize(n);
    c.sigma_pre.resize(n);
    c.sigma.resize(n);
    c.spec_in.resize(n);
    c.spec_h.resize(n);
    c.spec_pre.resize(n);
    c.spec_ln.resize(n);
    c.fourier.resize(n);
    c.pose_h.resize(n);
    c.pose_emb.resize(n);
    c.aux.resize(n);
    c.att_q.resize(n);
    c.att_k.resize(n);
    c.att_v.resize(n);
    c.att_w.resize(n);
    c.ctx.resize(n);
    c.mu_hat.resize(n);
    c.sigma_norm.resize(n);
    c.robot_ids.resize(n);

    for (std::size_t r = 0; r < n; ++r) {
        const auto& rb = robots[r];
        if (rb.robot_id < 0 || static_cast<std::size_t>(rb.robot_id) >= cfg.max_robots)
            throw std::invalid_argument("fuse_forward: robot_id " + std::to_string(rb.robot_id) +
                                        " outside role table of " + std::to_string(cfg.max_robots));
        if (rb.tokens.rows != cfg.k_frames)
            throw std::invalid_argument("fuse_forward: robot " + std::to_string(rb.robot_id) +
                                        " has " + std::to_string(rb.tokens.rows) +
                                        " token rows, expected K = " + std::to_string(cfg.k_frames));
        require_shape(rb.tokens, cfg.k_frames, cfg.d_token, "fuse_forward tokens");
        c.robot_ids[r] = rb.robot_id;

        probabilistic_head(rb.tokens, p, c.mu[r], c.sigma_pre[r], c.sigma[r], c.pooled_tokens[r]);

        if (cfg.use_spectral_token) {
            c.spec_in[r] = spectral_pool(rb.tokens, cfg.low_bins());
            spectral_token(c.spec_in[r], p, c.spec_h[r], c.spec_pre[r], c.fourier[r],
                           &c.spec_ln[r]);
        }
        if (cfg.use_pose_token) {
            if (!rb.has_pose)
                throw std::invalid_argument("fuse_forward: robot " + std::to_string(rb.robot_id) +
                                            " is missing a motion summary");
            pose_embed(rb.pose_summary, p, c.pose_h[r], c.pose_emb[r]);
        }
        c.aux[r].assign(d, T(0));
        assemble_aux<T>(p, std::span<const T>(c.pose_emb[r]), std::span<const T>(c.fourier[r]),
                        rb.robot_id, std::span<T>(c.aux[r]));
    }

    // single-head cross-attention, residual on the state means
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    for (std::size_t r = 0; r < n; ++r) {
        c.att_q[r].resize(d);
        c.att_k[r].resize(d);
        c.att_v[r].resize(d);
        matvec(p.attn_q.value, std::span<const T>(c.mu[r]), std::span<T>(c.att_q[r]));
        matvec(p.attn_k.value, std::span<const T>(c.aux[r]), std::span<T>(c.att_k[r]));
        matvec(p.attn_v.value, std::span<const T>(c.aux[r]), std::span<T>(c.att_v[r]));
    }
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<T> scores(n);
        for (std::size_t j = 0; j < n; ++j)
            scores[j] = dot(std::span<const T>(c.att_q[r]), std::span<const T>(c.att_k[j])) * scale;
        c.att_w[r] = softmax(std::span<const T>(scores));
        c.ctx[r].assign(d, T(0));
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < d; ++i) c.ctx[r][i] += c.att_w[r][j] * c.att_v[j][i];
        c.mu_hat[r].resize(d);
        matvec(p.attn_o.value, std::span<const T>(c.ctx[r]), std::span<T>(c.mu_hat[r]));
        for (std::size_t i = 0; i < d; ++i) c.mu_hat[r][i] += c.mu[r][i];
    }

    // reliability-weighted pooling: softmax over -|sigma_r|
    for (std::size_t r = 0; r < n; ++r) c.sigma_norm[r] = norm2(std::span<const T>(c.sigma[r]));
    c.weights = reliability_weights(c.sigma_norm);

    c.pooled_state.assign(d, T(0));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) c.pooled_state[i] += c.weights[r] * c.mu_hat[r][i];

    c.belief.resize(cfg.d_belief);
    matvec(p.proj_belief.value, std::span<const T>(c.pooled_state), std::span<T>(c.belief));

    TeamBelief<T> out;
    out.data = c.belief;
    out.weights = c.weights;
    return out;
}

/// Convenience wrapper when no backward pass is needed.
template <typename T>
TeamBelief<T> fuse_forward(const std::vector<RobotInput<T>>& robots, const FusionParams<T>& p,
                           const FusionConfig& cfg) {
    FusionCache<T> cache;
    return fuse_forward(robots, p, cfg, cache);
}

// ----------------------------------------------------------------------------
//  full backward
// ----------------------------------------------------------------------------

/// Accumulates parameter gradients for dL/d(belief). Inputs (tokens, pose
/// summaries) are data, not parameters, so the chain stops at their
/// immediate consumers.
template <typename T>
void fuse_backward(std::span<const T> d_belief, const std::vector<RobotInput<T>>& robots,
                   FusionParams<T>& p, const FusionConfig& cfg, const FusionCache<T>& c) {
    const std::size_t n = c.n;
    const std::size_t d = cfg.d_state;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));

    // z = W_b pooled
    std::vector<T> d_pooled(d, T(0));
    outer_acc(p.proj_belief.grad, d_belief, std::span<const T>(c.pooled_state));
    matTvec_acc(p.proj_belief.value, d_belief, std::span<T>(d_pooled));

    // pooled = sum_r w_r mu_hat_r
    std::vector<std::vector<T>> d_mu_hat(n, std::vector<T>(d, T(0)));
    std::vector<T> d_weights(n, T(0));
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            d_mu_hat[r][i] += c.weights[r] * d_pooled[i];
            d_weights[r] += c.mu_hat[r][i] * d_pooled[i];
        }
    }

    // weights = softmax(-|sigma_r|)
    std::vector<T> d_neg_norm(n);
    softmax_backward(std::span<const T>(c.weights), std::span<const T>(d_weights),
                     std::span<T>(d_neg_norm));
    std::vector<std::vector<T>> d_sigma(n, std::vector<T>(c.sigma[0].size(), T(0)));
    for (std::size_t r = 0; r < n; ++r) {
        const T d_norm = -d_neg_norm[r];
        const T inv = T(1) / c.sigma_norm[r]; // sigma > 0 elementwise, norm > 0
        for (std::size_t i = 0; i < d_sigma[r].size(); ++i)
            d_sigma[r][i] += d_norm * c.sigma[r][i] * inv;
    }

    // attention
    std::vector<std::vector<T>> d_mu(n, std::vector<T>(d, T(0)));
    std::vector<std::vector<T>> d_aux(n, std::vector<T>(d, T(0)));
    std::vector<std::vector<T>> d_att_v(n, std::vector<T>(d, T(0)));
    std::vector<std::vector<T>> d_att_k(n, std::vector<T>(d, T(0)));
    for (std::size_t r = 0; r < n; ++r) {
        // mu_hat_r = mu_r + W_o ctx_r
        vec_add(std::span<T>(d_mu[r]), std::span<const T>(d_mu_hat[r]));
        std::vector<T> d_ctx(d, T(0));
        outer_acc(p.attn_o.grad, std::span<const T>(d_mu_hat[r]), std::span<const T>(c.ctx[r]));
        matTvec_acc(p.attn_o.value, std::span<const T>(d_mu_hat[r]), std::span<T>(d_ctx));

        // ctx_r = sum_j w_rj v_j
        std::vector<T> d_w(n, T(0));
        for (std::size_t j = 0; j < n; ++j) {
            d_w[j] = dot(std::span<const T>(c.att_v[j]), std::span<const T>(d_ctx));
            for (std::size_t i = 0; i < d; ++i) d_att_v[j][i] += c.att_w[r][j] * d_ctx[i];
        }
        std::vector<T> d_scores(n);
        softmax_backward(std::span<const T>(c.att_w[r]), std::span<const T>(d_w),
                         std::span<T>(d_scores));

        // scores_rj = <q_r, k_j> * scale
        std::vector<T> d_q(d, T(0));
        for (std::size_t j = 0; j < n; ++j) {
            const T ds = d_scores[j] * scale;
            for (std::size_t i = 0; i < d; ++i) {
                d_q[i] += ds * c.att_k[j][i];
                d_att_k[j][i] += ds * c.att_q[r][i];
            }
        }
        // q_r = W_q mu_r
        outer_acc(p.attn_q.grad, std::span<const T>(d_q), std::span<const T>(c.mu[r]));
        matTvec_acc(p.attn_q.value, std::span<const T>(d_q), std::span<T>(d_mu[r]));
    }
    for (std::size_t j = 0; j < n; ++j) {
        outer_acc(p.attn_k.grad, std::span<const T>(d_att_k[j]), std::span<const T>(c.aux[j]));
        matTvec_acc(p.attn_k.value, std::span<const T>(d_att_k[j]), std::span<T>(d_aux[j]));
        outer_acc(p.attn_v.grad, std::span<const T>(d_att_v[j]), std::span<const T>(c.aux[j]));
        matTvec_acc(p.attn_v.value, std::span<const T>(d_att_v[j]), std::span<T>(d_aux[j]));
    }

    // auxiliary tokens and the probabilistic head
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = static_cast<std::size_t>(c.robot_ids[r]);
        vec_add(p.role.grad.row(row), std::span<const T>(d_aux[r]));

        if (cfg.use_pose_token) {
            std::vector<T> d_pose(c.pose_emb[r].size(), T(0));
            outer_acc(p.proj_pose.grad, std::span<const T>(d_aux[r]),
                      std::span<const T>(c.pose_emb[r]));
            matTvec_acc(p.proj_pose.value, std::span<const T>(d_aux[r]), std::span<T>(d_pose));
            // P_r = fc2(tanh(fc1(summary)))
            std::vector<T> d_h(c.pose_h[r].size(), T(0));
            linear_backward(p.pose_fc2, std::span<const T>(c.pose_h[r]), std::span<const T>(d_pose),
                            std::span<T>(d_h));
            for (std::size_t i = 0; i < d_h.size(); ++i) d_h[i] *= tanh_grad_from_y(c.pose_h[r][i]);
            linear_backward(p.pose_fc1,
                            std::span<const T>(robots[r].pose_summary.data(), kPoseSummaryDim),
                            std::span<const T>(d_h), std::span<T>());
        }
        if (cfg.use_spectral_token) {
            std::vector<T> d_fourier(c.fourier[r].size(), T(0));
            outer_acc(p.proj_spectral.grad, std::span<const T>(d_aux[r]),
                      std::span<const T>(c.fourier[r]));
            matTvec_acc(p.proj_spectral.value, std::span<const T>(d_aux[r]),
                        std::span<T>(d_fourier));
            std::vector<T> d_pre(c.spec_pre[r].size(), T(0));
            layernorm_backward(std::span<const T>(d_fourier), c.spec_ln[r], p.spec_norm,
                               std::span<T>(d_pre));
            std::vector<T> d_h(c.spec_h[r].size(), T(0));
            linear_backward(p.spec_fc2, std::span<const T>(c.spec_h[r]), std::span<const T>(d_pre),
                            std::span<T>(d_h));
            for (std::size_t i = 0; i < d_h.size(); ++i) d_h[i] *= tanh_grad_from_y(c.spec_h[r][i]);
            linear_backward(p.spec_fc1, std::span<const T>(c.spec_in[r]), std::span<const T>(d_h),
                            std::span<T>());
        }

        // sigma = softplus(sigma_pre), mu/sigma_pre linear in pooled tokens
        std::vector<T> d_sigma_pre(c.sigma_pre[r].size());
        for (std::size_t i = 0; i < d_sigma_pre.size(); ++i)
            d_sigma_pre[i] = d_sigma[r][i] * softplus_grad(c.sigma_pre[r][i]);
        linear_backward(p.prob_sigma, std::span<const T>(c.pooled_tokens[r]),
                        std::span<const T>(d_sigma_pre), std::span<T>());
        linear_backward(p.prob_mu, std::span<const T>(c.pooled_tokens[r]),
                        std::span<const T>(d_mu[r]), std::span<T>());
    }
}

// ----------------------------------------------------------------------------
//  initialization and registry
// ----------------------------------------------------------------------------

template <typename T>
void init_linear(LinearMap<T>& m, Xoshiro256& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.in_dim()));
    for (T& v : m.weight.value.data) v = static_cast<T>(rng.uniform(-bound, bound));
    m.bias.value.zero();
}

template <typename T>
void init_projection(Param<T>& p, Xoshiro256& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.cols));
    for (T& v : p.value.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void init_fusion(FusionParams<T>& p, Xoshiro256& rng) {
    init_linear(p.prob_mu, rng);
    init_linear(p.prob_sigma, rng);
    init_linear(p.spec_fc1, rng);
    init_linear(p.spec_fc2, rng);
    init_linear(p.pose_fc1, rng);
    init_linear(p.pose_fc2, rng);
    init_projection(p.proj_pose, rng);
    init_projection(p.proj_spectral, rng);
    for (T& v : p.role.value.data) v = static_cast<T>(rng.normal(0.0, 0.02));
    init_projection(p.attn_q, rng);
    init_projection(p.attn_k, rng);
    init_projection(p.attn_v, rng);
    init_projection(p.attn_o, rng);
    init_projection(p.proj_belief, rng);
}

template <typename T>
void append_linear_refs(std::vector<ParamRef<T>>& out, const std::string& name, LinearMap<T>& m) {
    out.push_back({name + ".weight", &m.weight});
    out.push_back({name + ".bias", &m.bias});
}

template <typename T>
void append_norm_refs(std::vector<ParamRef<T>>& out, const std::string& name,
                      LayerNormParams<T>& n) {
    out.push_back({name + ".gain", &n.gain});
    out.push_back({name + ".bias", &n.bias});
}

/// Registry order is load-bearing: initialization, optimizer state, and
/// checkpoints all follow it.
template <typename T>
std::vector<ParamRef<T>> fusion_param_refs(FusionParams<T>& p, const std::string& prefix = "fusion") {
    std::vector<ParamRef<T>> out;
    append_linear_refs(out, prefix + ".prob_mu", p.prob_mu);
    append_linear_refs(out, prefix + ".prob_sigma", p.prob_sigma);
    append_linear_refs(out, prefix + ".spec_fc1", p.spec_fc1);
    append_linear_refs(out, prefix + ".spec_fc2", p.spec_fc2);
    append_norm_refs(out, prefix + ".spec_norm", p.spec_norm);
    append_linear_refs(out, prefix + ".pose_fc1", p.pose_fc1);
    append_linear_refs(out, prefix + ".pose_fc2", p.pose_fc2);
    out.push_back({prefix + ".proj_pose", &p.proj_pose});
    out.push_back({prefix + ".proj_spectral", &p.proj_spectral});
    out.push_back({prefix + ".role", &p.role});
    out.push_back({prefix + ".attn_q", &p.attn_q});
    out.push_back({prefix + ".attn_k", &p.attn_k});
    out.push_back({prefix + ".attn_v", &p.attn_v});
    out.push_back({prefix + ".attn_o", &p.attn_o});
    out.push_back({prefix + ".proj_belief", &p.proj_belief});
    return out;
}

} // namespace teamlens
