// SPDX-License-Identifier: Apache-2.0
//
// Distillation objectives, the student-to-teacher layer map, projection
// weights for mismatched widths, and student initialisation from a teacher.
//
// Every loss takes student outputs built on a recording tape and teacher
// outputs built on a non-recording one, so gradients reach the student only.
// Position averages run over attended (non-padding) positions.

#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "distillkit/encoder.h"
#include "distillkit/ops.h"

namespace distillkit {

struct LayerMap {
    int64_t M = 0;    // student transformer layers
    int64_t N_t = 0;  // teacher transformer layers
    std::vector<int64_t> g;  // g[l] for l = 0..M+1

    int64_t operator()(int64_t l) const { return g.at(static_cast<size_t>(l)); }
};

/// g(l) = l * (N_t / M) when M divides N_t, else ceil(l * N_t / M);
/// g(0) = 0 and g(M+1) = N_t + 1. Throws unless 1 <= M <= N_t.
LayerMap uniform_layer_map(int64_t M, int64_t N_t);

enum class Suite { distil_triple, tiny_layerwise, compact_hybrid, mobile_layerwise };
std::string to_string(Suite s);
Suite suite_from_string(const std::string& s);

struct DistillPlan {
    Suite suite = Suite::distil_triple;
    /// (α1, α2, α3); defaults follow the suite (2, 5, 1) or (1, 5, 3).
    std::array<double, 3> alphas = {2.0, 5.0, 1.0};
    /// Mobile suite mixing weight, strictly inside (0, 1).
    double alpha = 0.5;
    /// λ0..λ(M+1) for the layer-wise suite; empty means all 1.
    std::vector<double> lambdas;
    double temperature = 1.0;
    /// Leaves L_mlm and L_softMLM as raw sums over masked positions.
    bool sum_over_masked = false;
    /// Attention-row KL in the compact and mobile suites takes the student
    /// as the first argument. Default puts the teacher first.
    bool attention_kl_student_first = false;

    static DistillPlan defaults(Suite suite);
};

nlohmann::json to_json(const DistillPlan& p);
/// Starts from the suite's defaults; unknown keys are rejected.
DistillPlan distill_plan_from_json(const nlohmann::json& j);

/// Temporary learnable projections, present only when widths differ.
struct Projections {
    std::optional<Parameter> W_h;  // [D_s, D_t]
    std::optional<Parameter> W_e;  // [E_s, E_t]

    std::vector<Parameter*> parameters();
};
Projections make_projections(const EncoderConfig& student, const EncoderConfig& teacher, uint64_t seed);

/// Flat row indices of attended positions.
std::vector<int64_t> valid_rows(const MaskedBatch& b);

// Individual terms. Results are scalar Vars.
Var loss_mlm(const EncoderOutputs& s, const MaskedBatch& b, bool sum_over_masked = false, bool* no_masked = nullptr);
Var loss_soft_mlm(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, double temperature = 1.0,
                  bool sum_over_masked = false);
Var loss_align(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, const Var* W_h = nullptr);
Var loss_layer(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, const LayerMap& map, int64_t l,
               const Var* W_h = nullptr);
Var loss_embed(const Var& E_s, const Var& E_t, const Var* W_e = nullptr);
Var loss_output(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, double temperature = 1.0);
Var loss_compact_layer(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, const LayerMap& map,
                       int64_t l, bool student_first = false);
Var loss_mobile_layer(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, int64_t l,
                      bool student_first = false);

// Weighted combinations, shared by the scalar checks and the graph builders.
template <class T>
T combine_triple(const std::array<double, 3>& a, const T& mlm, const T& soft, const T& third) {
    return a[0] * mlm + a[1] * soft + a[2] * third;
}
template <class T>
T combine_tiny(const std::vector<double>& lambdas, const T& embed, const std::vector<T>& layers, const T& output) {
    T total = lambdas.at(0) * embed;
    for (size_t l = 0; l < layers.size(); ++l) total = total + lambdas.at(l + 1) * layers[l];
    return total + lambdas.at(layers.size() + 1) * output;
}
template <class T>
T combine_mobile(double alpha, const T& mlm, const std::vector<T>& layers) {
    T sum = layers.at(0);
    for (size_t l = 1; l < layers.size(); ++l) sum = sum + layers[l];
    return alpha * mlm + (1.0 - alpha) * ((1.0 / static_cast<double>(layers.size())) * sum);
}

struct DistillLoss {
    Var total;
    std::map<std::string, double> parts;  // named component values for reporting
};

/// Full objective of `plan.suite`. `proj` must come from make_projections for
/// the same pair of configs; its parameters are bound to `tape`.
DistillLoss distill_loss(const DistillPlan& plan, const EncoderOutputs& s, const EncoderOutputs& t,
                         const MaskedBatch& b, Projections& proj, Tape& tape);

/// Checks suite-specific shape requirements before a run starts.
void validate_plan(const DistillPlan& plan, const EncoderConfig& student, const EncoderConfig& teacher);

/// Teacher capture a suite needs.
Capture teacher_capture(Suite suite);

/// Copies embeddings, MLM head and a subset of layers (every other layer when
/// the teacher is twice as deep, else the uniform map) into a fresh student.
/// Throws ConfigError when widths differ.
ModelState init_student_from_teacher(const ModelState& teacher, const EncoderConfig& student_config,
                                     uint64_t seed = 0);
/// Teacher layer index (0-based) copied into student layer l.
int64_t init_source_layer(int64_t l, int64_t M, int64_t N_t);

}  // namespace distillkit
