// SPDX-License-Identifier: Apache-2.0

#include "distillkit/train.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "distillkit/eval.h"
#include "distillkit/ops.h"
#include "distillkit/random.h"

namespace distillkit {

namespace {

constexpr uint64_t kHeadSeedTag = 0x68656164;
constexpr uint64_t kDropoutTag = 0x64726f70;
constexpr uint64_t kShuffleTag = 0x73687566;

/// Row order for one pass over `n` examples.
std::vector<int64_t> epoch_order(int64_t n, uint64_t seed, int64_t epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), int64_t{0});
    Rng rng(mix_seed(mix_seed(seed, kShuffleTag), static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

/// Rows of batch `step` when epochs of `n` rows are cut into batches.
std::vector<int64_t> batch_rows(int64_t n, int64_t batch_size, uint64_t seed, int64_t step) {
    const int64_t per_epoch = (n + batch_size - 1) / batch_size;
    const int64_t epoch = step / per_epoch, k = step % per_epoch;
    const auto order = epoch_order(n, seed, epoch);
    const int64_t begin = k * batch_size, end = std::min(n, begin + batch_size);
    return {order.begin() + begin, order.begin() + end};
}

double masked_accuracy(const Tensor& logits, const MaskedBatch& b) {
    int64_t hit = 0, total = 0;
    for (int64_t r = 0; r < b.tokens(); ++r) {
        if (!b.mask_indicator[static_cast<size_t>(r)]) continue;
        int64_t best = 0;
        for (int64_t c = 1; c < logits.cols(); ++c)
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        hit += best == b.labels[static_cast<size_t>(r)];
        ++total;
    }
    return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

struct StepOutcome {
    Var loss;
    double accuracy = 0.0;
    std::map<std::string, double> parts;
};

using StepFn = std::function<StepOutcome(int64_t step, Tape& tape)>;
using EvalFn = std::function<std::map<std::string, double>()>;  // needs "accuracy"
using SaveFn = std::function<void(int64_t step)>;

std::string describe_parts(const std::map<std::string, double>& parts) {
    std::ostringstream out;
    for (const auto& [k, v] : parts) out << ' ' << k << '=' << v;
    return out.str();
}

TrainReport train_loop(const std::vector<Parameter*>& params, int64_t total, const RunConfig& cfg,
                       const StepFn& step_fn, const EvalFn& eval_fn, const SaveFn& save_fn) {
    AdamW opt(params, {0.9, 0.999, 1e-8, cfg.weight_decay, cfg.clip_norm});
    TrainReport report;
    double elapsed_ms = 0.0;
    int64_t timed = 0;
    for (int64_t s = 0; s <= total; ++s) {
        const bool update = s < total;
        const bool record = s % cfg.eval_every == 0 || s == total;
        for (Parameter* p : params) p->zero_grad();

        const auto t0 = std::chrono::steady_clock::now();
        Tape tape(update);
        StepOutcome out = step_fn(s, tape);
        const double loss = out.loss.item();
        if (!std::isfinite(loss)) {
            throw TrainError("non-finite loss at step " + std::to_string(s) + ":" + describe_parts(out.parts) +
                             "; lower the learning rate or check the corpus");
        }
        auto t1 = std::chrono::steady_clock::now();

        if (record) {
            TrainRecord r;
            r.step = s;
            r.loss = loss;
            r.accuracy = out.accuracy;
            r.parts = out.parts;
            if (eval_fn) {
                for (const auto& [k, v] : eval_fn()) r.parts[k] = v;
                r.accuracy = r.parts.at("accuracy");
                r.parts.erase("accuracy");
            }
            if (save_fn) save_fn(s);
            report.records.push_back(std::move(r));
        }

        const auto t2 = std::chrono::steady_clock::now();
        if (update) {
            tape.backward(out.loss);
            optimizer_step(opt, s, total, cfg);
        }
        const auto t3 = std::chrono::steady_clock::now();
        elapsed_ms += std::chrono::duration<double, std::milli>((t1 - t0) + (t3 - t2)).count();
        ++timed;
        if (record) {
            report.records.back().ms_per_step = elapsed_ms / static_cast<double>(timed);
            elapsed_ms = 0.0;
            timed = 0;
        }
    }
    const auto& last = report.records.back();
    report.final_metrics["step"] = last.step;
    report.final_metrics["loss"] = last.loss;
    report.final_metrics["accuracy"] = last.accuracy;
    for (const auto& [k, v] : last.parts) report.final_metrics[k] = v;
    return report;
}

SaveFn checkpoint_saver(const ModelState& state, const RunConfig& cfg) {
    if (cfg.checkpoint_dir.empty()) return {};
    return [&state, &cfg](int64_t step) {
        std::filesystem::create_directories(cfg.checkpoint_dir);
        save_checkpoint(state, cfg.checkpoint_dir / ("step_" + std::to_string(step) + ".json"),
                        {{"step", step}, {"run", to_json(cfg)}});
    };
}

EvalFn heldout_eval(ModelState& state, const MlmCorpus& corpus, const RunConfig& cfg) {
    if (corpus.heldout.batch == 0) return {};
    return [&state, &corpus, &cfg] {
        const MlmEval e = evaluate_mlm(state, corpus.heldout, corpus.vocab, cfg.masking, kEvalMaskSeed,
                                       std::max<int64_t>(cfg.batch_size, 32));
        return std::map<std::string, double>{{"accuracy", e.accuracy}, {"heldout_loss", e.loss}};
    };
}

MaskedBatch mlm_batch(const MlmCorpus& corpus, const RunConfig& cfg, int64_t step) {
    if (corpus.train.batch == 0) throw TrainError("training corpus is empty");
    const auto rows = batch_rows(corpus.train.batch, cfg.batch_size, cfg.seed, step);
    return mask_batch(corpus.train.rows(rows), corpus.vocab, cfg.masking, mix_seed(cfg.seed, static_cast<uint64_t>(step)));
}

ForwardOptions train_options(const RunConfig& cfg, int64_t step, Capture capture) {
    return {capture, true, mix_seed(mix_seed(cfg.seed, kDropoutTag), static_cast<uint64_t>(step))};
}

bool copy_init_possible(const EncoderConfig& t, const EncoderConfig& s) {
    return s.hidden_dim == t.hidden_dim && s.embed_dim == t.embed_dim && s.variant == t.variant &&
           s.ffn_dim() == t.ffn_dim() && s.inner_dim() == t.inner_dim() && s.vocab_size == t.vocab_size &&
           s.max_position == t.max_position && s.num_layers <= t.num_layers &&
           (s.variant != Variant::bottleneck || s.num_ffn_blocks == t.num_ffn_blocks);
}

}  // namespace

std::string to_string(Mode m) {
    switch (m) {
        case Mode::distill: return "distill";
        case Mode::pretrain_mlm: return "pretrain_mlm";
        case Mode::finetune_token: return "finetune_token";
        case Mode::finetune_seq: return "finetune_seq";
    }
    return "?";
}

Mode mode_from_string(const std::string& s) {
    for (Mode m : {Mode::distill, Mode::pretrain_mlm, Mode::finetune_token, Mode::finetune_seq})
        if (to_string(m) == s) return m;
    throw ConfigError("unknown mode '" + s + "' (expected distill, pretrain_mlm, finetune_token or finetune_seq)");
}

RunConfig RunConfig::defaults(Mode mode) {
    RunConfig c;
    c.mode = mode;
    if (mode == Mode::finetune_token || mode == Mode::finetune_seq) {
        c.epochs = mode == Mode::finetune_token ? 5 : 3;
        c.batch_size = 16;
        c.learning_rate = 5e-5;
    }
    return c;
}

void RunConfig::validate(bool require_teacher_path) const {
    auto fail = [](const std::string& m) { throw ConfigError("run config: " + m); };
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (batch_size < 1) fail("batch_size must be at least 1");
    if (steps < 0) fail("steps must be non-negative");
    if (epochs < 0) fail("epochs must be non-negative");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction must be in [0, 1)");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
    if (!(clip_norm >= 0.0)) fail("clip_norm must be non-negative (0 disables clipping)");
    if (eval_every < 1) fail("eval_every must be at least 1");
    if (max_len < 3) fail("max_len must be at least 3");
    if (require_teacher_path && mode == Mode::distill && teacher.empty())
        fail("distill mode needs a teacher checkpoint path (key 'teacher')");
}

nlohmann::json to_json(const RunConfig& c) {
    return {{"mode", to_string(c.mode)},
            {"steps", c.steps},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"warmup_fraction", c.warmup_fraction},
            {"weight_decay", c.weight_decay},
            {"clip_norm", c.clip_norm},
            {"seed", c.seed},
            {"plan", to_json(c.plan)},
            {"eval_every", c.eval_every},
            {"max_len", c.max_len},
            {"masking",
             {{"select_rate", c.masking.select_rate},
              {"mask_prob", c.masking.mask_prob},
              {"random_prob", c.masking.random_prob}}},
            {"teacher", c.teacher},
            {"init_from_teacher", c.init_from_teacher},
            {"checkpoint_dir", c.checkpoint_dir.string()}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    RunConfig c = RunConfig::defaults(mode_from_string(j.value("mode", std::string("distill"))));
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "mode") continue;
            else if (k == "steps") c.steps = v.get<int64_t>();
            else if (k == "epochs") c.epochs = v.get<int64_t>();
            else if (k == "batch_size") c.batch_size = v.get<int64_t>();
            else if (k == "learning_rate") c.learning_rate = v.get<double>();
            else if (k == "warmup_fraction") c.warmup_fraction = v.get<double>();
            else if (k == "weight_decay") c.weight_decay = v.get<double>();
            else if (k == "clip_norm") c.clip_norm = v.get<double>();
            else if (k == "seed") c.seed = v.get<uint64_t>();
            else if (k == "plan") c.plan = distill_plan_from_json(v);
            else if (k == "eval_every") c.eval_every = v.get<int64_t>();
            else if (k == "max_len") c.max_len = v.get<int32_t>();
            else if (k == "teacher") c.teacher = v.get<std::string>();
            else if (k == "init_from_teacher") c.init_from_teacher = v.get<bool>();
            else if (k == "checkpoint_dir") c.checkpoint_dir = v.get<std::string>();
            else if (k == "masking") {
                for (const auto& [mk, mv] : v.items()) {
                    if (mk == "select_rate") c.masking.select_rate = mv.get<double>();
                    else if (mk == "mask_prob") c.masking.mask_prob = mv.get<double>();
                    else if (mk == "random_prob") c.masking.random_prob = mv.get<double>();
                    else throw ConfigError("unknown run config key 'masking." + mk + "'");
                }
            } else {
                throw ConfigError("unknown run config key '" + k + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    return c;
}

std::string TrainReport::csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "step,loss,accuracy,ms_per_step\n";
    for (const auto& r : records) out << r.step << ',' << r.loss << ',' << r.accuracy << ',' << r.ms_per_step << '\n';
    return out.str();
}

void TrainReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << csv();
}

nlohmann::json TrainReport::to_json() const {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : records)
        recs.push_back({{"step", r.step},
                        {"loss", r.loss},
                        {"accuracy", r.accuracy},
                        {"ms_per_step", r.ms_per_step},
                        {"parts", r.parts}});
    return {{"records", recs}, {"final", final_metrics}};
}

double scheduled_lr(int64_t step, int64_t total, double peak, double warmup_fraction) {
    if (step >= total || step < 0) return 0.0;
    const auto warmup = static_cast<int64_t>(std::llround(warmup_fraction * static_cast<double>(total)));
    if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    return peak * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
    double sq = 0.0;
    for (const Parameter* p : params)
        for (double g : p->grad.values()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (Parameter* p : params) p->grad.scale_(s);
    }
    return norm;
}

AdamW::AdamW(std::vector<Parameter*> params, OptimizerConfig config)
    : params_(std::move(params)), config_(config) {
    for (const Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

double AdamW::step(double lr) {
    const double norm = clip_grad_norm(params_, config_.clip_norm);
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (!p.grad.same_shape(p.value))
            throw NumericError("gradient of '" + p.name + "' does not match its parameter shape");
        double* w = p.value.data();
        const double* g = p.grad.data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        const double decay = p.decay ? config_.weight_decay : 0.0;
        for (int64_t k = 0; k < p.value.numel(); ++k) {
            m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
            v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
            const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
            w[k] -= lr * (update + decay * w[k]);
        }
    }
    return norm;
}

void optimizer_step(AdamW& optimizer, int64_t step_index, int64_t total_steps, const RunConfig& config) {
    optimizer.step(scheduled_lr(step_index, total_steps, config.learning_rate, config.warmup_fraction));
}

MlmCorpus make_mlm_corpus(const std::vector<std::string>& train_sentences,
                          const std::vector<std::string>& heldout_sentences, Vocab vocab, int32_t max_len) {
    MlmCorpus c;
    c.train = pack_blocks(train_sentences, vocab, max_len);
    if (!heldout_sentences.empty()) c.heldout = pack_blocks(heldout_sentences, vocab, max_len);
    c.vocab = std::move(vocab);
    return c;
}

MlmEval evaluate_mlm(ModelState& state, const TokenMatrix& data, const Vocab& vocab, const MaskingConfig& masking,
                     uint64_t seed, int64_t batch_size) {
    MlmEval e;
    double nll = 0.0;
    int64_t hit = 0;
    for (int64_t start = 0; start < data.batch; start += batch_size) {
        std::vector<int64_t> rows;
        for (int64_t r = start; r < std::min(data.batch, start + batch_size); ++r) rows.push_back(r);
        const MaskedBatch b = mask_batch(data.rows(rows), vocab, masking, mix_seed(seed, static_cast<uint64_t>(start)));
        const auto out = infer(state, BatchView::of(b), Capture::logits_only);
        const Tensor& logits = out.mlm_logits.value();
        for (int64_t r = 0; r < b.tokens(); ++r) {
            if (!b.mask_indicator[static_cast<size_t>(r)]) continue;
            const auto label = b.labels[static_cast<size_t>(r)];
            double mx = logits.at(r, 0);
            int64_t best = 0;
            for (int64_t c = 1; c < logits.cols(); ++c)
                if (logits.at(r, c) > mx) mx = logits.at(r, best = c);
            double z = 0.0;
            for (int64_t c = 0; c < logits.cols(); ++c) z += std::exp(logits.at(r, c) - mx);
            nll += mx + std::log(z) - logits.at(r, label);
            hit += best == label;
            ++e.masked;
        }
    }
    if (e.masked) {
        e.loss = nll / static_cast<double>(e.masked);
        e.accuracy = static_cast<double>(hit) / static_cast<double>(e.masked);
    }
    return e;
}

std::pair<ModelState, TrainReport> run_distillation(ModelState& teacher, const EncoderConfig& student_config,
                                                    const MlmCorpus& corpus, const RunConfig& cfg) {
    cfg.validate(false);
    student_config.validate();
    validate_plan(cfg.plan, student_config, teacher.config());
    if (corpus.vocab.size() != teacher.config().vocab_size || corpus.vocab.size() != student_config.vocab_size)
        throw ConfigError("vocabulary size differs between corpus, teacher and student");

    ModelState student = cfg.init_from_teacher && copy_init_possible(teacher.config(), student_config)
                             ? init_student_from_teacher(teacher, student_config, cfg.seed)
                             : ModelState(student_config, cfg.seed);
    Projections proj = make_projections(student_config, teacher.config(), cfg.seed);
    std::vector<Parameter*> params = student.parameter_ptrs();
    for (Parameter* p : proj.parameters()) params.push_back(p);

    const Capture t_capture = teacher_capture(cfg.plan.suite);
    StepFn step = [&](int64_t s, Tape& tape) {
        const MaskedBatch b = mlm_batch(corpus, cfg, s);
        const EncoderOutputs t = infer(teacher, BatchView::of(b), t_capture);
        const EncoderOutputs so = forward(student, BatchView::of(b), train_options(cfg, s, t_capture), tape);
        DistillLoss l = distill_loss(cfg.plan, so, t, b, proj, tape);
        return StepOutcome{l.total, masked_accuracy(so.mlm_logits.value(), b), l.parts};
    };
    TrainReport report = train_loop(params, cfg.steps, cfg, step, heldout_eval(student, corpus, cfg),
                                    checkpoint_saver(student, cfg));
    return {std::move(student), std::move(report)};
}

std::pair<ModelState, TrainReport> run_mlm_pretrain(const ModelState& init, const MlmCorpus& corpus,
                                                    const RunConfig& cfg) {
    cfg.validate(false);
    if (corpus.vocab.size() != init.config().vocab_size)
        throw ConfigError("vocabulary size differs between corpus and model");
    ModelState state = init;
    StepFn step = [&](int64_t s, Tape& tape) {
        const MaskedBatch b = mlm_batch(corpus, cfg, s);
        const EncoderOutputs o = forward(state, BatchView::of(b), train_options(cfg, s, Capture::logits_only), tape);
        Var loss = loss_mlm(o, b);
        return StepOutcome{loss, masked_accuracy(o.mlm_logits.value(), b), {{"mlm", loss.item()}}};
    };
    TrainReport report = train_loop(state.parameter_ptrs(), cfg.steps, cfg, step, heldout_eval(state, corpus, cfg),
                                    checkpoint_saver(state, cfg));
    return {std::move(state), std::move(report)};
}

Var token_cross_entropy(const Var& logits, const std::vector<int32_t>& labels, double* accuracy) {
    std::vector<int64_t> rows, cols;
    for (size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] == kIgnoreLabel) continue;
        rows.push_back(static_cast<int64_t>(r));
        cols.push_back(labels[r]);
    }
    if (rows.empty()) {
        if (accuracy) *accuracy = 0.0;
        return constant(Tensor(Shape{}));
    }
    if (accuracy) {
        const Tensor& z = logits.value();
        int64_t hit = 0;
        for (size_t i = 0; i < rows.size(); ++i) {
            int64_t best = 0;
            for (int64_t c = 1; c < z.cols(); ++c)
                if (z.at(rows[i], c) > z.at(rows[i], best)) best = c;
            hit += best == cols[i];
        }
        *accuracy = static_cast<double>(hit) / static_cast<double>(rows.size());
    }
    std::vector<int64_t> seq(rows.size());
    std::iota(seq.begin(), seq.end(), int64_t{0});
    Var logp = log_softmax_rows(select_rows(logits, rows));
    return scale(sum(pick(logp, seq, cols)), -1.0 / static_cast<double>(rows.size()));
}

std::pair<ModelState, TrainReport> run_finetune(const ModelState& init, const FinetuneSet& data,
                                                const RunConfig& cfg) {
    cfg.validate(false);
    if (cfg.mode != Mode::finetune_token && cfg.mode != Mode::finetune_seq)
        throw ConfigError("run_finetune needs mode finetune_token or finetune_seq");
    if (data.examples.empty()) throw DataError("fine-tuning dataset is empty");
    if (data.labels.empty()) throw DataError("fine-tuning label set is empty");
    if (data.vocab.size() != init.config().vocab_size)
        throw ConfigError("vocabulary size differs between dataset and model");
    const bool token = cfg.mode == Mode::finetune_token;
    const auto L = static_cast<int64_t>(data.labels.size());

    std::map<std::string, int32_t> index;
    for (size_t i = 0; i < data.labels.size(); ++i) index[data.labels[i]] = static_cast<int32_t>(i);
    auto label_id = [&](const std::string& l, size_t ex) {
        auto it = index.find(l);
        if (it == index.end())
            throw DataError("label mismatch: example " + std::to_string(ex) + " has label '" + l +
                            "' outside the head's label set");
        return it->second;
    };

    // Encoded once; batches trim padding to their longest row.
    std::vector<Encoding> encs;
    std::vector<std::vector<int32_t>> token_labels;
    std::vector<int32_t> seq_labels;
    for (size_t i = 0; i < data.examples.size(); ++i) {
        const auto& ex = data.examples[i];
        if (token) {
            if (ex.words.size() != ex.word_labels.size())
                throw DataError("example " + std::to_string(i) + " has " + std::to_string(ex.words.size()) +
                                " words but " + std::to_string(ex.word_labels.size()) + " labels");
            std::vector<int32_t> wl;
            for (const auto& l : ex.word_labels) wl.push_back(label_id(l, i));
            encs.push_back(encode_words(ex.words, data.vocab, cfg.max_len));
            token_labels.push_back(align_labels(wl, encs.back()));
        } else {
            std::string text = ex.text;
            if (text.empty())
                for (const auto& w : ex.words) text += (text.empty() ? "" : " ") + w;
            encs.push_back(encode(text, data.vocab, cfg.max_len));
            seq_labels.push_back(label_id(ex.label, i));
        }
    }

    ModelState state = init;
    const auto head = token ? ModelState::Head::token : ModelState::Head::sequence;
    const int64_t existing = token ? state.config().num_token_labels : state.config().num_seq_labels;
    if (existing == 0) state.init_head(head, L, mix_seed(cfg.seed, kHeadSeedTag));
    else if (existing != L)
        throw ConfigError("label mismatch: the model's head has " + std::to_string(existing) +
                          " labels, the dataset " + std::to_string(L));

    const auto n = static_cast<int64_t>(encs.size());
    const int64_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    StepFn step = [&](int64_t s, Tape& tape) {
        const auto rows = batch_rows(n, cfg.batch_size, cfg.seed, s);
        std::vector<Encoding> batch;
        for (int64_t r : rows) batch.push_back(encs[static_cast<size_t>(r)]);
        const TokenMatrix m = stack_encodings(batch);
        const EncoderOutputs o = forward(state, BatchView::of(m), train_options(cfg, s, Capture::final_hidden), tape);
        std::vector<int32_t> labels;
        Var logits;
        if (token) {
            for (int64_t r : rows) {
                const auto& tl = token_labels[static_cast<size_t>(r)];
                labels.insert(labels.end(), tl.begin(), tl.begin() + m.seq_len);
            }
            logits = task_head_token(state, o, tape, L);
        } else {
            for (int64_t r : rows) labels.push_back(seq_labels[static_cast<size_t>(r)]);
            logits = task_head_seq(state, o, tape, L);
        }
        double acc = 0.0;
        Var loss = token_cross_entropy(logits, labels, &acc);
        return StepOutcome{loss, acc, {{"ce", loss.item()}}};
    };
    TrainReport report =
        train_loop(state.parameter_ptrs(), cfg.epochs * per_epoch, cfg, step, {}, checkpoint_saver(state, cfg));
    report.final_metrics["epochs"] = cfg.epochs;
    return {std::move(state), std::move(report)};
}

}  // namespace distillkit
