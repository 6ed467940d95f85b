// SPDX-License-Identifier: Apache-2.0

#include "distillkit/distill.h"

#include <cmath>
#include <set>

#include "distillkit/random.h"

namespace distillkit {

namespace {

std::vector<int64_t> masked_rows(const MaskedBatch& b, std::vector<int64_t>* labels = nullptr) {
    std::vector<int64_t> rows;
    for (int64_t i = 0; i < b.tokens(); ++i)
        if (b.mask_indicator[static_cast<size_t>(i)]) {
            rows.push_back(i);
            if (labels) labels->push_back(b.labels[static_cast<size_t>(i)]);
        }
    return rows;
}

/// Rows of a [B, H, N, N] attention tensor viewed as [B*H*N, N] whose query
/// position is attended.
std::vector<int64_t> attention_rows(const MaskedBatch& b, int64_t heads) {
    std::vector<int64_t> rows;
    for (int64_t s = 0; s < b.batch; ++s)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t n = 0; n < b.seq_len; ++n)
                if (b.attention_mask[static_cast<size_t>(s * b.seq_len + n)])
                    rows.push_back((s * heads + h) * b.seq_len + n);
    return rows;
}

int64_t num_heads_of(const Var& att) {
    if (att.value().rank() != 4) throw ConfigError("attention maps must be [B, H, N, N]");
    return att.value().dim(1);
}

void need_full(const EncoderOutputs& o, int64_t l, const char* who) {
    if (o.attentions.size() < static_cast<size_t>(l) || o.hidden_states.size() < static_cast<size_t>(l + 1))
        throw ConfigError(std::string(who) + ": outputs lack layer " + std::to_string(l) + " (need full capture)");
}

Var project(const Var& x, const Var* W) { return W ? matmul(x, *W) : x; }

void check_width(const Var& a, const Var& b, const char* who) {
    if (a.value().cols() != b.value().cols()) {
        throw ConfigError(std::string(who) + ": student width " + std::to_string(a.value().cols()) +
                          " differs from teacher width " + std::to_string(b.value().cols()) +
                          " and no projection was given");
    }
}

/// Mean over attended rows of 1 - cos(student, teacher).
Var cosine_loss(const Var& hs, const Var& ht, const std::vector<int64_t>& rows) {
    Var c = cosine_rows(select_rows(hs, rows), select_rows(ht, rows));
    return add_scalar(scale(mean(c), -1.0), 1.0);
}

Var attention_kl(const Var& as, const Var& at, const std::vector<int64_t>& rows, bool student_first) {
    Var s = select_rows(as, rows), t = select_rows(at, rows);
    return student_first ? kl_rows(s, t) : kl_rows(t, s);
}

void check_heads(const Var& as, const Var& at, const char* who) {
    if (num_heads_of(as) != num_heads_of(at)) {
        throw ConfigError(std::string(who) + ": student has " + std::to_string(num_heads_of(as)) +
                          " heads, teacher has " + std::to_string(num_heads_of(at)));
    }
}

}  // namespace

LayerMap uniform_layer_map(int64_t M, int64_t N_t) {
    if (M < 1 || M > N_t)
        throw ConfigError("layer map needs 1 <= M <= N_t, got M=" + std::to_string(M) + " N_t=" + std::to_string(N_t));
    LayerMap m{M, N_t, {}};
    m.g.push_back(0);
    for (int64_t l = 1; l <= M; ++l) m.g.push_back(N_t % M == 0 ? l * (N_t / M) : (l * N_t + M - 1) / M);
    m.g.push_back(N_t + 1);
    return m;
}

std::string to_string(Suite s) {
    switch (s) {
        case Suite::distil_triple: return "distil_triple";
        case Suite::tiny_layerwise: return "tiny_layerwise";
        case Suite::compact_hybrid: return "compact_hybrid";
        case Suite::mobile_layerwise: return "mobile_layerwise";
    }
    return "?";
}

Suite suite_from_string(const std::string& s) {
    for (Suite v : {Suite::distil_triple, Suite::tiny_layerwise, Suite::compact_hybrid, Suite::mobile_layerwise})
        if (to_string(v) == s) return v;
    throw ConfigError("unknown distillation suite '" + s +
                      "' (expected distil_triple, tiny_layerwise, compact_hybrid or mobile_layerwise)");
}

DistillPlan DistillPlan::defaults(Suite suite) {
    DistillPlan p;
    p.suite = suite;
    if (suite == Suite::compact_hybrid) p.alphas = {1.0, 5.0, 3.0};
    return p;
}

nlohmann::json to_json(const DistillPlan& p) {
    return {{"suite", to_string(p.suite)},
            {"alphas", p.alphas},
            {"alpha", p.alpha},
            {"lambdas", p.lambdas},
            {"temperature", p.temperature},
            {"sum_over_masked", p.sum_over_masked},
            {"attention_kl_student_first", p.attention_kl_student_first}};
}

DistillPlan distill_plan_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("distillation plan must be a JSON object");
    DistillPlan p = DistillPlan::defaults(suite_from_string(j.value("suite", std::string("distil_triple"))));
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "suite") continue;
            if (k == "alphas") p.alphas = v.get<std::array<double, 3>>();
            else if (k == "alpha") p.alpha = v.get<double>();
            else if (k == "lambdas") p.lambdas = v.get<std::vector<double>>();
            else if (k == "temperature") p.temperature = v.get<double>();
            else if (k == "sum_over_masked") p.sum_over_masked = v.get<bool>();
            else if (k == "attention_kl_student_first") p.attention_kl_student_first = v.get<bool>();
            else throw ConfigError("unknown distillation plan key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed distillation plan: ") + e.what());
    }
    return p;
}

std::vector<Parameter*> Projections::parameters() {
    std::vector<Parameter*> out;
    if (W_h) out.push_back(&*W_h);
    if (W_e) out.push_back(&*W_e);
    return out;
}

Projections make_projections(const EncoderConfig& student, const EncoderConfig& teacher, uint64_t seed) {
    Projections p;
    auto make = [&](const char* name, int64_t in, int64_t out, uint64_t tag) {
        Tensor w({in, out});
        Rng rng(mix_seed(seed, tag));
        for (double& v : w.values()) v = truncated_normal(rng, student.init_std);
        return Parameter(name, std::move(w));
    };
    if (student.hidden_dim != teacher.hidden_dim) p.W_h = make("proj.hidden", student.hidden_dim, teacher.hidden_dim, 1);
    // The embedding-layer output is hidden_dim wide in both variants.
    if (student.hidden_dim != teacher.hidden_dim) p.W_e = make("proj.embed", student.hidden_dim, teacher.hidden_dim, 2);
    return p;
}

std::vector<int64_t> valid_rows(const MaskedBatch& b) {
    std::vector<int64_t> rows;
    for (int64_t i = 0; i < b.tokens(); ++i)
        if (b.attention_mask[static_cast<size_t>(i)]) rows.push_back(i);
    return rows;
}

Var loss_mlm(const EncoderOutputs& s, const MaskedBatch& b, bool sum_over_masked, bool* no_masked) {
    if (!s.mlm_logits.defined()) throw ConfigError("loss_mlm: student outputs carry no MLM logits");
    std::vector<int64_t> labels;
    const auto rows = masked_rows(b, &labels);
    if (no_masked) *no_masked = rows.empty();
    if (rows.empty()) return constant(Tensor(Shape{}));
    std::vector<int64_t> pick_rows(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) pick_rows[i] = static_cast<int64_t>(i);
    Var logp = log_softmax_rows(select_rows(s.mlm_logits, rows));
    Var total = sum(pick(logp, pick_rows, labels));
    return scale(total, sum_over_masked ? -1.0 : -1.0 / static_cast<double>(rows.size()));
}

Var loss_soft_mlm(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, double temperature,
                  bool sum_over_masked) {
    if (!s.mlm_logits.defined() || !t.mlm_logits.defined()) throw ConfigError("loss_soft_mlm: missing MLM logits");
    if (s.mlm_logits.value().cols() != t.mlm_logits.value().cols())
        throw ConfigError("loss_soft_mlm: student and teacher vocabularies differ");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    const auto rows = masked_rows(b);
    if (rows.empty()) return constant(Tensor(Shape{}));
    Var p = softmax_rows(scale(select_rows(t.mlm_logits, rows), 1.0 / temperature));
    Var q = softmax_rows(scale(select_rows(s.mlm_logits, rows), 1.0 / temperature));
    Var total = sum(kl_rows(p, q));
    return sum_over_masked ? total : scale(total, 1.0 / static_cast<double>(rows.size()));
}

Var loss_align(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, const Var* W_h) {
    Var hs = project(s.final_hidden(), W_h);
    check_width(hs, t.final_hidden(), "loss_align");
    return cosine_loss(hs, t.final_hidden(), valid_rows(b));
}

Var loss_layer(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, const LayerMap& map, int64_t l,
               const Var* W_h) {
    if (l < 1 || l > map.M) throw ConfigError("loss_layer: student layer " + std::to_string(l) + " out of range");
    const int64_t tl = map(l);
    need_full(s, l, "loss_layer");
    need_full(t, tl, "loss_layer");
    const Var& as = s.attentions[static_cast<size_t>(l - 1)];
    const Var& at = t.attentions[static_cast<size_t>(tl - 1)];
    check_heads(as, at, "loss_layer");
    const auto rows = valid_rows(b);
    Var hs = project(s.hidden_states[static_cast<size_t>(l)], W_h);
    check_width(hs, t.hidden_states[static_cast<size_t>(tl)], "loss_layer");
    Var hidden = mse(select_rows(hs, rows), select_rows(t.hidden_states[static_cast<size_t>(tl)], rows));
    // Every head covers the same number of entries, so the head average of
    // per-head MSEs is the MSE over all heads at once.
    const auto arows = attention_rows(b, num_heads_of(as));
    Var attn = mse(select_rows(as, arows), select_rows(at, arows));
    return hidden + attn;
}

Var loss_embed(const Var& E_s, const Var& E_t, const Var* W_e) {
    Var es = project(E_s, W_e);
    if (es.shape() != E_t.shape()) {
        throw ConfigError("loss_embed: projected student embeddings " + shape_str(es.shape()) +
                          " do not match teacher " + shape_str(E_t.shape()));
    }
    return mse(es, E_t);
}

Var loss_output(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, double temperature) {
    if (s.mlm_logits.value().cols() != t.mlm_logits.value().cols())
        throw ConfigError("loss_output: student and teacher vocabularies differ");
    const auto rows = valid_rows(b);
    Var p = softmax_rows(scale(select_rows(t.mlm_logits, rows), 1.0 / temperature));
    Var logq = log_softmax_rows(scale(select_rows(s.mlm_logits, rows), 1.0 / temperature));
    return scale(sum(mul(p, logq)), -1.0 / static_cast<double>(rows.size()));
}

Var loss_compact_layer(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, const LayerMap& map,
                       int64_t l, bool student_first) {
    if (l < 1 || l > map.M) throw ConfigError("loss_compact_layer: student layer out of range");
    const int64_t tl = map(l);
    need_full(s, l, "loss_compact_layer");
    need_full(t, tl, "loss_compact_layer");
    const Var& hs = s.hidden_states[static_cast<size_t>(l)];
    const Var& ht = t.hidden_states[static_cast<size_t>(tl)];
    check_width(hs, ht, "loss_compact_layer");
    const Var& as = s.attentions[static_cast<size_t>(l - 1)];
    const Var& at = t.attentions[static_cast<size_t>(tl - 1)];
    check_heads(as, at, "loss_compact_layer");
    Var kl = attention_kl(as, at, attention_rows(b, num_heads_of(as)), student_first);
    return cosine_loss(hs, ht, valid_rows(b)) + mean(kl);
}

Var loss_mobile_layer(const EncoderOutputs& s, const EncoderOutputs& t, const MaskedBatch& b, int64_t l,
                      bool student_first) {
    if (s.attentions.size() != t.attentions.size())
        throw ConfigError("loss_mobile_layer: student and teacher depths differ");
    if (l < 1) throw ConfigError("loss_mobile_layer: layer index must be >= 1");
    need_full(s, l, "loss_mobile_layer");
    need_full(t, l, "loss_mobile_layer");
    const Var& hs = s.hidden_states[static_cast<size_t>(l)];
    const Var& ht = t.hidden_states[static_cast<size_t>(l)];
    check_width(hs, ht, "loss_mobile_layer");
    const Var& as = s.attentions[static_cast<size_t>(l - 1)];
    const Var& at = t.attentions[static_cast<size_t>(l - 1)];
    check_heads(as, at, "loss_mobile_layer");
    const auto rows = valid_rows(b);
    const int64_t H = num_heads_of(as);
    // Summed over positions, averaged over heads (and over sequences in the batch).
    Var kl = attention_kl(as, at, attention_rows(b, H), student_first);
    Var attn = scale(sum(kl), 1.0 / static_cast<double>(H * b.batch));
    return mse(select_rows(hs, rows), select_rows(ht, rows)) + attn;
}

Capture teacher_capture(Suite suite) {
    return suite == Suite::distil_triple ? Capture::logits_only : Capture::full;
}

void validate_plan(const DistillPlan& plan, const EncoderConfig& student, const EncoderConfig& teacher) {
    if (student.vocab_size != teacher.vocab_size) throw ConfigError("student and teacher vocabularies differ");
    if (!(plan.temperature > 0.0)) throw ConfigError("temperature must be positive");
    for (double a : plan.alphas)
        if (!(a >= 0.0)) throw ConfigError("alphas must be non-negative");
    const int64_t M = student.num_layers, N_t = teacher.num_layers;
    switch (plan.suite) {
        case Suite::distil_triple: break;
        case Suite::tiny_layerwise:
            uniform_layer_map(M, N_t);
            if (student.num_heads != teacher.num_heads)
                throw ConfigError("tiny_layerwise needs equal head counts for per-head attention MSE");
            if (!plan.lambdas.empty() && plan.lambdas.size() != static_cast<size_t>(M + 2))
                throw ConfigError("tiny_layerwise needs M + 2 = " + std::to_string(M + 2) + " lambdas");
            for (double l : plan.lambdas)
                if (!(l >= 0.0)) throw ConfigError("lambdas must be non-negative");
            break;
        case Suite::compact_hybrid:
            uniform_layer_map(M, N_t);
            if (student.hidden_dim != teacher.hidden_dim) throw ConfigError("compact_hybrid needs equal hidden dims");
            if (student.num_heads != teacher.num_heads) throw ConfigError("compact_hybrid needs equal head counts");
            break;
        case Suite::mobile_layerwise:
            if (M != N_t) throw ConfigError("mobile_layerwise needs equal student and teacher depth");
            if (student.hidden_dim != teacher.hidden_dim) throw ConfigError("mobile_layerwise needs equal hidden dims");
            if (student.num_heads != teacher.num_heads) throw ConfigError("mobile_layerwise needs equal head counts");
            if (!(plan.alpha > 0.0 && plan.alpha < 1.0)) throw ConfigError("mobile alpha must lie strictly in (0, 1)");
            break;
    }
}

DistillLoss distill_loss(const DistillPlan& plan, const EncoderOutputs& s, const EncoderOutputs& t,
                         const MaskedBatch& b, Projections& proj, Tape& tape) {
    DistillLoss out;
    const int64_t M = static_cast<int64_t>(s.attentions.size());
    std::optional<Var> W_h, W_e;
    if (proj.W_h) W_h = tape.param(*proj.W_h);
    if (proj.W_e) W_e = tape.param(*proj.W_e);
    const Var* wh = W_h ? &*W_h : nullptr;
    const Var* we = W_e ? &*W_e : nullptr;

    switch (plan.suite) {
        case Suite::distil_triple: {
            Var mlm = loss_mlm(s, b, plan.sum_over_masked);
            Var soft = loss_soft_mlm(s, t, b, plan.temperature, plan.sum_over_masked);
            Var align = loss_align(s, t, b, wh);
            out.parts = {{"mlm", mlm.item()}, {"soft_mlm", soft.item()}, {"align", align.item()}};
            out.total = combine_triple(plan.alphas, mlm, soft, align);
            break;
        }
        case Suite::tiny_layerwise: {
            const LayerMap map = uniform_layer_map(M, static_cast<int64_t>(t.attentions.size()));
            std::vector<double> lambdas = plan.lambdas;
            if (lambdas.empty()) lambdas.assign(static_cast<size_t>(M + 2), 1.0);
            const auto rows = valid_rows(b);
            Var embed = loss_embed(select_rows(s.hidden_states[0], rows), select_rows(t.hidden_states[0], rows), we);
            std::vector<Var> layers;
            double layer_sum = 0.0;
            for (int64_t l = 1; l <= M; ++l) {
                layers.push_back(loss_layer(s, t, b, map, l, wh));
                layer_sum += layers.back().item();
            }
            Var output = loss_output(s, t, b, plan.temperature);
            out.parts = {{"embed", embed.item()}, {"layers", layer_sum}, {"output", output.item()}};
            out.total = combine_tiny(lambdas, embed, layers, output);
            break;
        }
        case Suite::compact_hybrid: {
            const LayerMap map = uniform_layer_map(M, static_cast<int64_t>(t.attentions.size()));
            Var mlm = loss_mlm(s, b, plan.sum_over_masked);
            Var soft = loss_soft_mlm(s, t, b, plan.temperature, plan.sum_over_masked);
            Var layers = loss_compact_layer(s, t, b, map, 1, plan.attention_kl_student_first);
            for (int64_t l = 2; l <= M; ++l)
                layers = layers + loss_compact_layer(s, t, b, map, l, plan.attention_kl_student_first);
            out.parts = {{"mlm", mlm.item()}, {"soft_mlm", soft.item()}, {"compact", layers.item()}};
            out.total = combine_triple(plan.alphas, mlm, soft, layers);
            break;
        }
        case Suite::mobile_layerwise: {
            if (!(plan.alpha > 0.0 && plan.alpha < 1.0)) throw ConfigError("mobile alpha must lie strictly in (0, 1)");
            Var mlm = loss_mlm(s, b, plan.sum_over_masked);
            std::vector<Var> layers;
            double layer_sum = 0.0;
            for (int64_t l = 1; l <= M; ++l) {
                layers.push_back(loss_mobile_layer(s, t, b, l, plan.attention_kl_student_first));
                layer_sum += layers.back().item();
            }
            out.parts = {{"mlm", mlm.item()}, {"mobile", layer_sum / static_cast<double>(M)}};
            out.total = combine_mobile(plan.alpha, mlm, layers);
            break;
        }
    }
    out.parts["total"] = out.total.item();
    return out;
}

int64_t init_source_layer(int64_t l, int64_t M, int64_t N_t) {
    if (N_t == 2 * M) return 2 * l;
    return uniform_layer_map(M, N_t)(l + 1) - 1;
}

ModelState init_student_from_teacher(const ModelState& teacher, const EncoderConfig& student_config, uint64_t seed) {
    const EncoderConfig& tc = teacher.config();
    const EncoderConfig& sc = student_config;
    if (sc.hidden_dim != tc.hidden_dim || sc.embed_dim != tc.embed_dim || sc.variant != tc.variant ||
        sc.ffn_dim() != tc.ffn_dim() || sc.inner_dim() != tc.inner_dim() || sc.vocab_size != tc.vocab_size ||
        sc.max_position != tc.max_position || (sc.variant == Variant::bottleneck && sc.num_ffn_blocks != tc.num_ffn_blocks)) {
        throw ConfigError("student shape differs from the teacher's beyond depth; copy-initialisation needs equal "
                          "widths, so initialise this student randomly instead");
    }
    const int64_t M = sc.num_layers, N_t = tc.num_layers;
    if (M > N_t) throw ConfigError("student is deeper than its teacher");
    ModelState student(sc, seed);
    for (auto& p : student.parameters()) {
        std::string src = p.name;
        if (src.starts_with("layers.")) {
            const auto dot = src.find('.', 7);
            const int64_t l = std::stoll(src.substr(7, dot - 7));
            src = "layers." + std::to_string(init_source_layer(l, M, N_t)) + src.substr(dot);
        }
        if (!teacher.has(src)) continue;  // task heads the teacher lacks stay fresh
        const Parameter& tp = teacher.param(src);
        if (!tp.value.same_shape(p.value)) continue;
        p.value = tp.value;
    }
    return student;
}

}  // namespace distillkit
