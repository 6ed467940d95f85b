// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "distillkit/autograd.h"

namespace distillkit {

struct GradCheckOptions {
    double eps = 1e-5;
    int64_t samples = 200;
    uint64_t seed = 0;
    // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor)
    // with floor = rel_floor * max(1, |loss|).
    double rel_floor = 1e-6;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    int64_t checked = 0;
    std::string worst_param;
    int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Builds the scalar loss on the given tape. Called once with a recording
/// tape and then repeatedly with non-recording tapes at perturbed points.
using LossFn = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients with central differences on a random
/// subsample of coordinates (every coordinate when there are fewer than
/// `samples`). Each parameter tensor contributes at least two coordinates.
/// Throws NumericError if the loss is non-finite at a perturbed point.
GradCheckReport grad_check(const LossFn& f, std::span<Parameter* const> params, const GradCheckOptions& options = {});

}  // namespace distillkit
