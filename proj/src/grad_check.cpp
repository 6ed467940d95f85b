// SPDX-License-Identifier: Apache-2.0

#include "distillkit/grad_check.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <utility>
#include <vector>

namespace distillkit {

namespace {

double evaluate(const LossFn& f) {
    Tape tape(false);
    const double v = f(tape).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite at a perturbed point");
    return v;
}

}  // namespace

GradCheckReport grad_check(const LossFn& f, std::span<Parameter* const> params, const GradCheckOptions& options) {
    if (options.eps <= 0.0) throw NumericError("grad_check: eps must be positive");
    for (Parameter* p : params) p->zero_grad();
    double loss_value = 0.0;
    {
        Tape tape(true);
        Var loss = f(tape);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) throw NumericError("grad_check: loss is not finite");
        tape.backward(loss);
    }
    // Difference roundoff grows with the loss value, so the floor does too.
    const double floor = options.rel_floor * std::max(1.0, std::abs(loss_value));

    std::vector<int64_t> offsets;
    int64_t total = 0;
    for (Parameter* p : params) {
        offsets.push_back(total);
        total += p->value.numel();
    }

    std::set<std::pair<size_t, int64_t>> picks;
    std::mt19937_64 rng(options.seed);
    if (total <= options.samples) {
        for (size_t i = 0; i < params.size(); ++i)
            for (int64_t j = 0; j < params[i]->value.numel(); ++j) picks.emplace(i, j);
    } else {
        for (size_t i = 0; i < params.size(); ++i) {
            const int64_t n = params[i]->value.numel();
            for (int k = 0; k < 2 && k < n; ++k) picks.emplace(i, static_cast<int64_t>(rng() % static_cast<uint64_t>(n)));
        }
        while (static_cast<int64_t>(picks.size()) < options.samples) {
            const int64_t flat = static_cast<int64_t>(rng() % static_cast<uint64_t>(total));
            const size_t i = static_cast<size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
            picks.emplace(i, flat - offsets[i]);
        }
    }

    GradCheckReport report;
    for (const auto& [i, j] : picks) {
        Parameter& p = *params[i];
        const double saved = p.value[j];
        p.value[j] = saved + options.eps;
        const double up = evaluate(f);
        p.value[j] = saved - options.eps;
        const double down = evaluate(f);
        p.value[j] = saved;

        const double numeric = (up - down) / (2.0 * options.eps);
        const double analytic = p.grad.numel() ? p.grad[j] : 0.0;
        const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
        const double rel = std::abs(analytic - numeric) / denom;
        ++report.checked;
        if (rel > report.max_rel_error || report.worst_index < 0) {
            report.max_rel_error = std::max(report.max_rel_error, rel);
            report.worst_param = p.name;
            report.worst_index = j;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    return report;
}

}  // namespace distillkit
