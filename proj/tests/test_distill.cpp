#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "teamlens/gradcheck.hpp"
#include "teamlens/model.hpp"
#include "teamlens/module_checks.hpp"
#include "teamlens/rng.hpp"

using namespace teamlens;
using Catch::Matchers::WithinAbs;

namespace {

FusionConfig toy_fusion() {
    FusionConfig cfg;
    cfg.d_state = 8;
    cfg.d_spectral = 6;
    cfg.d_pose = 5;
    cfg.d_belief = 7;
    cfg.d_token = 6;
    cfg.k_frames = 4;
    return cfg;
}

DistillConfig toy_distill() {
    DistillConfig cfg;
    cfg.n_prompts = 3;
    cfg.d_prompt = 8;
    cfg.d_lm = 9;
    cfg.d_pose = 5;
    cfg.d_query = 6;
    return cfg;
}

Example<double> toy_example(Xoshiro256& rng, const FusionConfig& fc, const DistillConfig& dc,
                            std::size_t n) {
    Example<double> ex;
    ex.episode_id = "toy";
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

} // namespace

TEST_CASE("student prompts: zero conditioning reduces to normalized prompt+pos rows") {
    Xoshiro256 rng(40);
    Model<double> m(toy_fusion(), toy_distill());
    m.init(1);
    m.student.cond.bias.value.zero(); // already zero, but make the intent explicit

    std::vector<double> zero_belief(m.fusion_cfg.d_belief, 0.0);
    auto ps = student_forward(m, std::span<const double>(zero_belief));

    for (std::size_t l = 0; l < m.distill_cfg.n_prompts; ++l) {
        std::vector<double> pre(m.distill_cfg.d_prompt), want(m.distill_cfg.d_prompt);
        for (std::size_t j = 0; j < pre.size(); ++j)
            pre[j] = m.student.prompts.value.at(l, j) + m.student.pos.value.at(l, j);
        layernorm_forward(std::span<const double>(pre), m.student.norm, std::span<double>(want));
        for (std::size_t j = 0; j < want.size(); ++j)
            REQUIRE_THAT(ps.at(l, j), WithinAbs(want[j], 1e-12));
    }
}

TEST_CASE("prompt rows carry layer-norm statistics") {
    Xoshiro256 rng(41);
    Model<double> m(toy_fusion(), toy_distill());
    m.init(2);
    std::vector<double> belief(m.fusion_cfg.d_belief);
    for (auto& v : belief) v = rng.uniform(-1, 1);
    auto ps = student_forward(m, std::span<const double>(belief));
    // unit gain, zero bias at init: rows are mean 0, variance ~1
    for (std::size_t l = 0; l < ps.rows; ++l) {
        double mean = 0, var = 0;
        for (std::size_t j = 0; j < ps.cols; ++j) mean += ps.at(l, j);
        mean /= double(ps.cols);
        for (std::size_t j = 0; j < ps.cols; ++j)
            var += (ps.at(l, j) - mean) * (ps.at(l, j) - mean);
        var /= double(ps.cols);
        REQUIRE_THAT(mean, WithinAbs(0.0, 1e-9));
        REQUIRE_THAT(var, WithinAbs(1.0, 1e-3)); // eps-deflated by design
    }
}

TEST_CASE("teacher prompts: deterministic, and a privileged-input error at inference") {
    Xoshiro256 rng(42);
    Model<double> m(toy_fusion(), toy_distill());
    m.init(3);
    TeacherInputs<double> tin;
    for (int r = 0; r < 2; ++r) {
        std::array<double, kPoseSummaryDim> s{};
        for (auto& v : s) v = rng.uniform(-1, 1);
        tin.gt_summaries.push_back(s);
    }
    auto a = teacher_forward(m, tin, Mode::training);
    auto b = teacher_forward(m, tin, Mode::training);
    REQUIRE(a.data == b.data); // identical inputs, identical prompt

    REQUIRE_THROWS_WITH(teacher_forward(m, tin, Mode::inference),
                        Catch::Matchers::ContainsSubstring("privileged"));
}

TEST_CASE("teacher prompts match a direct recomputation") {
    Xoshiro256 rng(43);
    Model<double> m(toy_fusion(), toy_distill());
    m.init(4);
    TeacherInputs<double> tin;
    for (int r = 0; r < 3; ++r) {
        std::array<double, kPoseSummaryDim> s{};
        for (auto& v : s) v = rng.uniform(-1, 1);
        tin.gt_summaries.push_back(s);
    }
    auto pt = teacher_forward(m, tin, Mode::training);

    // recompute by hand
    std::vector<double> mean(m.distill_cfg.d_pose, 0.0);
    for (const auto& s : tin.gt_summaries) {
        std::vector<double> h(m.distill_cfg.d_pose), e(m.distill_cfg.d_pose);
        linear_forward(m.teacher_pose_fc1, std::span<const double>(s.data(), 6), std::span<double>(h));
        for (auto& v : h) v = std::tanh(v);
        linear_forward(m.teacher_pose_fc2, std::span<const double>(h), std::span<double>(e));
        for (std::size_t i = 0; i < e.size(); ++i) mean[i] += e[i] / 3.0;
    }
    std::vector<double> u(m.distill_cfg.d_prompt);
    linear_forward(m.teacher.cond, std::span<const double>(mean), std::span<double>(u));
    for (std::size_t l = 0; l < pt.rows; ++l) {
        std::vector<double> pre(pt.cols), want(pt.cols);
        for (std::size_t j = 0; j < pt.cols; ++j)
            pre[j] = m.teacher.prompts.value.at(l, j) + m.teacher.pos.value.at(l, j) + u[j];
        layernorm_forward(std::span<const double>(pre), m.teacher.norm, std::span<double>(want));
        for (std::size_t j = 0; j < pt.cols; ++j)
            REQUIRE_THAT(pt.at(l, j), WithinAbs(want[j], 1e-6));
    }
}

TEST_CASE("distill loss: aligned, opposite, orthogonal, degenerate") {
    Tensor2<double> a(2, 4, {1, 0, 0, 0, 0, 2, 0, 0});
    REQUIRE_THAT(distill_loss(a, a), WithinAbs(0.0, 1e-12));

    Tensor2<double> neg = a;
    for (auto& v : neg.data) v = -v;
    REQUIRE_THAT(distill_loss(a, neg), WithinAbs(2.0, 1e-12));

    Tensor2<double> orth(2, 4, {0, 0, 3, 0, 0, 0, 0, 1});
    REQUIRE_THAT(distill_loss(a, orth), WithinAbs(1.0, 1e-12));

    // positive scaling changes nothing
    Tensor2<double> scaled = a;
    for (auto& v : scaled.data) v *= 7.5;
    REQUIRE_THAT(distill_loss(a, scaled), WithinAbs(0.0, 1e-12));

    Tensor2<double> zero(2, 4);
    REQUIRE_THROWS_WITH(distill_loss(a, zero), Catch::Matchers::ContainsSubstring("zero-norm"));
    Tensor2<double> bad_shape(3, 4);
    REQUIRE_THROWS_AS(distill_loss(a, bad_shape), std::invalid_argument);
}

TEST_CASE("distill loss stays within [0,2] on random prompts") {
    Xoshiro256 rng(44);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor2<double> s(4, 6), t(4, 6);
        for (auto& v : s.data) v = rng.uniform(-1, 1);
        for (auto& v : t.data) v = rng.uniform(-1, 1);
        const double l = distill_loss(s, t);
        REQUIRE(l >= 0.0);
        REQUIRE(l <= 2.0);
    }
}

TEST_CASE("distill gradient flows into the student only") {
    Xoshiro256 rng(45);
    Model<double> m(toy_fusion(), toy_distill());
    m.init(5);
    Example<double> ex = toy_example(rng, m.fusion_cfg, m.distill_cfg, 2);

    LossWeights w;
    w.lambda_lm = 0.0; // isolate the distillation term
    w.lambda_distill = 1.0;
    m.co_train_teacher = false;

    ModelCache<double> cache;
    example_forward(m, ex, w, Mode::training, &cache);
    m.zero_grad();
    example_backward(m, ex, w, cache, 1.0);

    // teacher side is a detached target: every teacher gradient stays zero
    for (auto& r : m.param_refs()) {
        if (!Model<double>::is_teacher_param(r.name)) continue;
        for (double g : r.param->grad.data) REQUIRE(g == 0.0);
    }
    // the student prompts do receive gradient
    double student_sq = 0;
    for (double g : m.student.prompts.grad.data) student_sq += g * g;
    REQUIRE(student_sq > 0.0);
}

TEST_CASE("prefix assembly: length, zero projections, manual construction") {
    Xoshiro256 rng(46);
    DistillConfig dc = toy_distill();
    dc.n_prompts = 8;
    Model<double> m(toy_fusion(), dc);
    m.init(6);

    std::vector<double> belief(m.fusion_cfg.d_belief);
    for (auto& v : belief) v = rng.uniform(-1, 1);
    std::vector<double> query(dc.d_query);
    for (auto& v : query) v = rng.uniform(-1, 1);
    Tensor2<double> prompts(dc.n_prompts, dc.d_prompt);
    for (auto& v : prompts.data) v = rng.uniform(-1, 1);

    auto seq = assemble_prefix(std::span<const double>(belief), prompts,
                               std::span<const double>(query), m.prefix);
    REQUIRE(seq.rows == 1 + 8 + 1); // projected belief + L prompts + query row
    REQUIRE(seq.cols == dc.d_lm);

    // row-by-row equality with manual projection
    std::vector<double> row(dc.d_lm, 0.0);
    matvec(m.prefix.proj_belief.value, std::span<const double>(belief), std::span<double>(row));
    for (std::size_t j = 0; j < dc.d_lm; ++j) REQUIRE_THAT(seq.at(0, j), WithinAbs(row[j], 1e-12));
    const Tensor2<double>& cprompts = prompts;
    for (std::size_t l = 0; l < 8; ++l) {
        matvec(m.prefix.proj_prompt.value, cprompts.row(l), std::span<double>(row));
        for (std::size_t j = 0; j < dc.d_lm; ++j)
            REQUIRE_THAT(seq.at(1 + l, j), WithinAbs(row[j], 1e-12));
    }
    matvec(m.prefix.proj_query.value, std::span<const double>(query), std::span<double>(row));
    for (std::size_t j = 0; j < dc.d_lm; ++j)
        REQUIRE_THAT(seq.at(9, j), WithinAbs(row[j], 1e-12));

    // zeroed belief/prompt projections blank the first 1+L rows
    m.prefix.proj_belief.value.zero();
    m.prefix.proj_prompt.value.zero();
    auto seq2 = assemble_prefix(std::span<const double>(belief), prompts,
                                std::span<const double>(query), m.prefix);
    for (std::size_t r = 0; r < 9; ++r)
        for (std::size_t j = 0; j < dc.d_lm; ++j) REQUIRE(seq2.at(r, j) == 0.0);
}

TEST_CASE("surrogate answer loss: uniform logits give ln 4; argmax tracks the head") {
    DistillConfig dc = toy_distill();
    Model<double> m(toy_fusion(), dc);
    // zero head: all logits equal
    Tensor2<double> prefix(3, dc.d_lm);
    Xoshiro256 rng(47);
    for (auto& v : prefix.data) v = rng.uniform(-1, 1);
    auto [loss, pred] = surrogate_lm_loss(prefix, m.prefix.head, 2, static_cast<HeadCache<double>*>(nullptr));
    REQUIRE_THAT(loss, WithinAbs(std::log(4.0), 1e-12));
    REQUIRE(pred == 0); // ties resolve to the first index

    // a dominant correct-class logit drives the loss toward zero
    m.prefix.head.bias.value.data = {0, 0, 50, 0};
    auto [loss2, pred2] = surrogate_lm_loss(prefix, m.prefix.head, 2, static_cast<HeadCache<double>*>(nullptr));
    REQUIRE(loss2 < 1e-12);
    REQUIRE(pred2 == 2);

    REQUIRE_THROWS_AS(surrogate_lm_loss(prefix, m.prefix.head, 4, static_cast<HeadCache<double>*>(nullptr)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(surrogate_lm_loss(prefix, m.prefix.head, -1, static_cast<HeadCache<double>*>(nullptr)),
                      std::invalid_argument);
}

TEST_CASE("surrogate answer loss matches the softmax-CE oracle") {
    Xoshiro256 rng(48);
    DistillConfig dc = toy_distill();
    Model<double> m(toy_fusion(), dc);
    m.init(7);
    Tensor2<double> prefix(4, dc.d_lm);
    for (auto& v : prefix.data) v = rng.uniform(-1, 1);

    std::vector<double> pooled(dc.d_lm, 0.0);
    for (std::size_t r = 0; r < prefix.rows; ++r)
        for (std::size_t j = 0; j < prefix.cols; ++j) pooled[j] += prefix.at(r, j) / 4.0;
    std::vector<double> logits(4);
    linear_forward(m.prefix.head, std::span<const double>(pooled), std::span<double>(logits));

    for (int target = 0; target < 4; ++target) {
        auto [loss, pred] = surrogate_lm_loss(prefix, m.prefix.head, target, static_cast<HeadCache<double>*>(nullptr));
        (void)pred;
        REQUIRE_THAT(loss, WithinAbs(oracle::softmax_ce(logits, target), 1e-6));
    }
}

TEST_CASE("composite loss arithmetic") {
    Xoshiro256 rng(49);
    Model<double> m(toy_fusion(), toy_distill());
    m.init(8);
    Example<double> ex = toy_example(rng, m.fusion_cfg, m.distill_cfg, 2);

    // lambda_d = 0: pure answer loss, the teacher pathway never runs
    const std::uint64_t tf_before = IoTracker::teacher_forwards();
    LossWeights w0{1.0, 0.0};
    auto rep0 = example_forward(m, ex, w0, Mode::training);
    REQUIRE(IoTracker::teacher_forwards() == tf_before);
    REQUIRE(rep0.distill == 0.0);
    REQUIRE(rep0.teacher_lm == 0.0);
    REQUIRE_THAT(rep0.total, WithinAbs(rep0.lm, 1e-12));

    // lambda weighting: composite = lm + 0.3 * distill
    LossWeights w{1.0, 0.3};
    auto rep = example_forward(m, ex, w, Mode::training);
    REQUIRE_THAT(rep.composite, WithinAbs(rep.lm + 0.3 * rep.distill, 1e-9));
    REQUIRE_THAT(rep.total, WithinAbs(rep.composite + rep.teacher_lm, 1e-9));

    // worked values: components (ln 4, 1) combine to ln 4 + 0.3
    REQUIRE_THAT(1.0 * std::log(4.0) + 0.3 * 1.0, WithinAbs(1.6862943611198906, 1e-12));

    // lambda_lm = 0 with aligned prompts: the whole objective vanishes
    LossWeights wz{0.0, 0.3};
    Model<double> aligned = m;
    // force the student and teacher banks identical and their conditioning off
    aligned.student.prompts.value = aligned.teacher.prompts.value;
    aligned.student.pos.value = aligned.teacher.pos.value;
    aligned.student.norm.gain.value = aligned.teacher.norm.gain.value;
    aligned.student.norm.bias.value = aligned.teacher.norm.bias.value;
    aligned.student.cond.weight.value.zero();
    aligned.teacher.cond.weight.value.zero();
    auto repz = example_forward(aligned, ex, wz, Mode::training);
    REQUIRE_THAT(repz.distill, WithinAbs(0.0, 1e-9));
    REQUIRE_THAT(repz.total, WithinAbs(0.0, 1e-9));
}

TEST_CASE("gradient check of the full composite objective (fusion + distillation)") {
    // pinned-target central differences over every trainable tensor
    const double worst = check_composite_gradients(2026);
    REQUIRE(worst <= 1e-4);
}

TEST_CASE("prediction path is teacher-free") {
    Xoshiro256 rng(51);
    Model<double> m(toy_fusion(), toy_distill());
    m.init(10);
    Example<double> ex = toy_example(rng, m.fusion_cfg, m.distill_cfg, 3);
    const std::uint64_t tf = IoTracker::teacher_forwards();
    const int pred = predict(m, ex);
    REQUIRE(IoTracker::teacher_forwards() == tf);
    REQUIRE(pred >= 0);
    REQUIRE(pred < 4);
}
