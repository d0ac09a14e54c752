#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "teamlens/optimizer.hpp"
#include "teamlens/tensor.hpp"

namespace teamlens {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};

/// Central-difference gradient verification over every scalar in the
/// registry. `loss_fn` must be a pure forward evaluation (no grad writes);
/// `backward_fn` runs one forward+backward and leaves gradients accumulated.
/// rel err = |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckReport grad_check(const std::function<double()>& loss_fn,
                                  const std::function<void()>& backward_fn,
                                  const std::vector<ParamRef<double>>& params,
                                  double h = 1e-5) {
    // Determinism gate: two evaluations at the base point must agree bitwise.
    const double l0 = loss_fn();
    const double l1 = loss_fn();
    if (!(l0 == l1))
        throw std::runtime_error("grad_check: loss function is not deterministic (" +
                                 std::to_string(l0) + " vs " + std::to_string(l1) + ")");

    zero_grads(params);
    backward_fn();

    // Snapshot analytic grads before the numeric sweep perturbs anything.
    std::vector<std::vector<double>> analytic(params.size());
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        analytic[pi] = params[pi].param->grad.data;

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& value = params[pi].param->value.data;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            value[i] = saved + h;
            const double lp = loss_fn();
            value[i] = saved - h;
            const double lm = loss_fn();
            value[i] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[pi][i];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            const double rel = std::abs(a - numeric) / denom;
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = params[pi].name;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

} // namespace teamlens
