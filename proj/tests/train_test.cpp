// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "distillkit/ops.h"
#include "distillkit/train.h"

using namespace distillkit;

namespace {

struct Fixture {
    SynthCorpus synth;
    MlmCorpus mlm;
    EncoderConfig cfg;

    Fixture() {
        SynthSpec spec = default_synth_spec("general");
        spec.num_sentences = 300;
        synth = synth_corpus(spec, 4);
        const auto train = sentence_texts(synth.train);
        Vocab vocab = build_vocab(train, 120, false);
        mlm = make_mlm_corpus(train, sentence_texts(synth.heldout), vocab, 24);
        cfg.num_layers = 2;
        cfg.hidden_dim = cfg.embed_dim = 16;
        cfg.num_heads = 2;
        cfg.ffn_expansion = 2;
        cfg.vocab_size = mlm.vocab.size();
        cfg.max_position = 32;
        cfg.dropout = 0.0;
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

RunConfig mlm_run(int64_t steps) {
    RunConfig r = RunConfig::defaults(Mode::pretrain_mlm);
    r.steps = steps;
    r.batch_size = 8;
    r.learning_rate = 3e-3;
    r.eval_every = 10;
    r.max_len = 24;
    r.seed = 21;
    return r;
}

bool same_params(const ModelState& a, const ModelState& b) {
    for (const auto& p : a.parameters())
        if (p.value.values() != b.param(p.name).value.values()) return false;
    return true;
}

}  // namespace

TEST_CASE("schedule: warmup from zero, linear decay, clamped past the horizon") {
    CHECK(scheduled_lr(0, 100, 1.0, 0.06) == 0.0);
    CHECK(scheduled_lr(3, 100, 1.0, 0.06) == doctest::Approx(0.5));
    CHECK(scheduled_lr(6, 100, 1.0, 0.06) == doctest::Approx(1.0));
    CHECK(scheduled_lr(53, 100, 1.0, 0.06) == doctest::Approx(0.5));
    CHECK(scheduled_lr(100, 100, 1.0, 0.06) == 0.0);
    CHECK(scheduled_lr(250, 100, 1.0, 0.06) == 0.0);
    CHECK(scheduled_lr(0, 100, 1.0, 0.0) == 1.0);
    for (int64_t s = 7; s < 100; ++s) CHECK(scheduled_lr(s, 100, 1.0, 0.06) < scheduled_lr(s - 1, 100, 1.0, 0.06));
}

TEST_CASE("zero gradients with zero weight decay leave parameters unchanged") {
    Parameter w("w", Tensor::vector({0.5, -2.0, 3.0}));
    Parameter b("b", Tensor::vector({1.0}), false);
    AdamW opt({&w, &b}, {0.9, 0.999, 1e-8, 0.0, 1.0});
    for (int i = 0; i < 10; ++i) opt.step(0.1);
    CHECK(w.value.values() == Storage{0.5, -2.0, 3.0});
    CHECK(b.value.values() == Storage{1.0});
}

TEST_CASE("weight decay skips parameters flagged decay=false") {
    Parameter w("w", Tensor::vector({1.0}));
    Parameter b("b", Tensor::vector({1.0}), false);
    AdamW opt({&w, &b}, {0.9, 0.999, 1e-8, 0.5, 1.0});
    opt.step(0.1);
    CHECK(w.value[0] == doctest::Approx(1.0 - 0.1 * 0.5));
    CHECK(b.value[0] == 1.0);
}

TEST_CASE("gradient clipping caps the global norm") {
    Parameter a("a", Tensor::vector({0, 0})), b("b", Tensor::vector({0}));
    a.grad = Tensor::vector({3.0, 0.0});
    b.grad = Tensor::vector({4.0});
    CHECK(clip_grad_norm({&a, &b}, 1.0) == doctest::Approx(5.0));
    CHECK(a.grad[0] == doctest::Approx(0.6));
    CHECK(b.grad[0] == doctest::Approx(0.8));
    CHECK(clip_grad_norm({&a, &b}, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("single-parameter quadratic converges under the full schedule") {
    Parameter theta("theta", Tensor::vector({1.0}));
    RunConfig rc = RunConfig::defaults(Mode::pretrain_mlm);
    rc.learning_rate = 0.05;
    rc.weight_decay = 0.0;
    AdamW opt({&theta}, {0.9, 0.999, 1e-8, rc.weight_decay, rc.clip_norm});
    const int64_t total = 500;
    for (int64_t s = 0; s < total; ++s) {
        theta.grad = Tensor::vector({2.0 * theta.value[0]});
        optimizer_step(opt, s, total, rc);
    }
    CHECK(std::abs(theta.value[0]) < 1e-3);
}

TEST_CASE("run config defaults, validation and JSON") {
    const auto tok = RunConfig::defaults(Mode::finetune_token);
    CHECK(tok.epochs == 5);
    CHECK(tok.batch_size == 16);
    CHECK(tok.learning_rate == 5e-5);
    CHECK(RunConfig::defaults(Mode::finetune_seq).epochs == 3);
    CHECK(tok.warmup_fraction == 0.06);
    CHECK(tok.clip_norm == 1.0);

    RunConfig d = RunConfig::defaults(Mode::distill);
    CHECK_THROWS_AS(d.validate(), ConfigError);  // no teacher path
    d.teacher = "t.json";
    d.validate();
    d.learning_rate = 0.0;
    CHECK_THROWS_AS(d.validate(), ConfigError);
    d.learning_rate = 1e-4;
    d.batch_size = 0;
    CHECK_THROWS_AS(d.validate(), ConfigError);

    RunConfig r = RunConfig::defaults(Mode::distill);
    r.plan = DistillPlan::defaults(Suite::compact_hybrid);
    r.seed = 99;
    r.masking.select_rate = 0.2;
    const auto back = run_config_from_json(to_json(r));
    CHECK(to_json(back) == to_json(r));
    CHECK(run_config_from_json({{"mode", "finetune_seq"}}).epochs == 3);
    CHECK_THROWS_AS(run_config_from_json({{"stepz", 3}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"masking", {{"rate", 0.1}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"mode", "sprint"}}), ConfigError);
}

TEST_CASE("zero steps return the initial model") {
    const auto& f = fixture();
    ModelState init(f.cfg, 3);
    auto [trained, report] = run_mlm_pretrain(init, f.mlm, mlm_run(0));
    CHECK(same_params(init, trained));
    REQUIRE(report.records.size() == 1);
    CHECK(report.records[0].step == 0);

    ModelState teacher(f.cfg, 5);
    RunConfig d = mlm_run(0);
    d.mode = Mode::distill;
    d.plan = DistillPlan::defaults(Suite::distil_triple);
    auto [student, dreport] = run_distillation(teacher, f.cfg, f.mlm, d);
    CHECK(same_params(student, init_student_from_teacher(teacher, f.cfg, d.seed)));
}

TEST_CASE("self-distillation starts at the weighted MLM term alone") {
    const auto& f = fixture();
    ModelState teacher(f.cfg, 8);
    RunConfig d = mlm_run(0);
    d.mode = Mode::distill;
    d.plan = DistillPlan::defaults(Suite::distil_triple);
    auto [student, report] = run_distillation(teacher, f.cfg, f.mlm, d);
    const auto& r0 = report.records.at(0);
    CHECK(r0.parts.at("soft_mlm") < 1e-10);
    CHECK(r0.parts.at("align") < 1e-10);
    CHECK(r0.loss == doctest::Approx(d.plan.alphas[0] * r0.parts.at("mlm")).epsilon(1e-12));
}

TEST_CASE("pretraining improves held-out masked accuracy and is deterministic") {
    const auto& f = fixture();
    ModelState init(f.cfg, 3);
    RunConfig rc = mlm_run(150);
    auto [a, ra] = run_mlm_pretrain(init, f.mlm, rc);
    auto [b, rb] = run_mlm_pretrain(init, f.mlm, rc);
    CHECK(ra.records.back().accuracy > ra.records.front().accuracy);
    CHECK(ra.records.back().parts.at("heldout_loss") < ra.records.front().parts.at("heldout_loss"));
    CHECK(same_params(a, b));
    REQUIRE(ra.records.size() == rb.records.size());
    for (size_t i = 0; i < ra.records.size(); ++i) {
        CHECK(ra.records[i].step == rb.records[i].step);
        CHECK(ra.records[i].loss == rb.records[i].loss);
        CHECK(ra.records[i].accuracy == rb.records[i].accuracy);
        CHECK(ra.records[i].parts == rb.records[i].parts);
        CHECK(std::isfinite(ra.records[i].loss));
        CHECK(std::isfinite(ra.records[i].ms_per_step));
        if (i) CHECK(ra.records[i].step > ra.records[i - 1].step);
    }
    CHECK(ra.records.back().step == 150);
    const std::string csv = ra.csv();
    CHECK(csv.rfind("step,loss,accuracy,ms_per_step\n", 0) == 0);
    CHECK(ra.to_json()["records"].size() == ra.records.size());
}

TEST_CASE("distillation runs every suite and reduces its loss") {
    const auto& f = fixture();
    ModelState teacher(f.cfg, 8);
    {
        auto [t, r] = run_mlm_pretrain(teacher, f.mlm, mlm_run(60));
        teacher = std::move(t);
    }
    EncoderConfig sc = f.cfg;
    sc.num_layers = 1;
    for (Suite suite : {Suite::distil_triple, Suite::tiny_layerwise, Suite::compact_hybrid}) {
        CAPTURE(to_string(suite));
        RunConfig d = mlm_run(60);
        d.mode = Mode::distill;
        d.plan = DistillPlan::defaults(suite);
        d.init_from_teacher = false;  // a copied student starts too close for one-batch losses to show progress
        auto [student, report] = run_distillation(teacher, sc, f.mlm, d);
        CHECK(report.records.back().loss < report.records.front().loss);
    }
    // Narrower student: random init plus projections.
    EncoderConfig narrow = sc;
    narrow.hidden_dim = narrow.embed_dim = 8;
    RunConfig d = mlm_run(30);
    d.mode = Mode::distill;
    d.plan = DistillPlan::defaults(Suite::tiny_layerwise);
    auto [student, report] = run_distillation(teacher, narrow, f.mlm, d);
    CHECK(student.config().hidden_dim == 8);
    CHECK(report.records.back().loss < report.records.front().loss);

    d.plan = DistillPlan::defaults(Suite::mobile_layerwise);
    CHECK_THROWS_AS(run_distillation(teacher, narrow, f.mlm, d), ConfigError);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    const auto& f = fixture();
    ModelState init(f.cfg, 3);
    init.param("mlm.bias").value[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        (void)run_mlm_pretrain(init, f.mlm, mlm_run(5));
        FAIL("expected TrainError");
    } catch (const TrainError& e) {
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("checkpoints at eval points round-trip bit-exactly") {
    const auto& f = fixture();
    const auto dir = std::filesystem::temp_directory_path() / "distillkit_train_ckpt";
    std::filesystem::remove_all(dir);
    RunConfig rc = mlm_run(20);
    rc.checkpoint_dir = dir;
    auto [state, report] = run_mlm_pretrain(ModelState(f.cfg, 3), f.mlm, rc);
    CHECK(std::filesystem::exists(dir / "step_0.json"));
    CHECK(std::filesystem::exists(dir / "step_10.json"));
    nlohmann::json extra;
    ModelState loaded = load_checkpoint(dir / "step_20.json", &extra);
    CHECK(extra["step"] == 20);
    CHECK(same_params(state, loaded));
    const TokenMatrix probe = f.mlm.heldout;
    const auto x = infer(state, BatchView::of(probe), Capture::logits_only);
    const auto y = infer(loaded, BatchView::of(probe), Capture::logits_only);
    CHECK(x.mlm_logits.value().values() == y.mlm_logits.value().values());
    std::filesystem::remove_all(dir);
}

TEST_CASE("ignored labels contribute zero gradient") {
    Parameter z("z", Tensor::matrix(4, 3, {0.1, -0.4, 0.7, 1.2, 0.3, -0.8, 0.5, 0.5, 0.0, -1.0, 2.0, 0.3}));
    Parameter z2("z2", Tensor::matrix(2, 3, {0.1, -0.4, 0.7, 0.5, 0.5, 0.0}));
    {
        Tape t;
        Var loss = token_cross_entropy(t.param(z), {2, kIgnoreLabel, 0, kIgnoreLabel});
        t.backward(loss);
    }
    {
        Tape t;
        Var loss = token_cross_entropy(t.param(z2), {2, 0});
        t.backward(loss);
    }
    for (int64_t c = 0; c < 3; ++c) {
        CHECK(z.grad.at(1, c) == 0.0);
        CHECK(z.grad.at(3, c) == 0.0);
        CHECK(z.grad.at(0, c) == z2.grad.at(0, c));
        CHECK(z.grad.at(2, c) == z2.grad.at(1, c));
    }
}

TEST_CASE("fine-tuning memorises a repeated example") {
    const auto& f = fixture();
    FinetuneSet tok;
    tok.vocab = f.mlm.vocab;
    tok.labels = f.synth.labels;
    tok.examples.assign(16, f.synth.train.front());
    RunConfig rc = RunConfig::defaults(Mode::finetune_token);
    rc.learning_rate = 1e-2;
    rc.epochs = 40;
    rc.max_len = 24;
    auto [m, report] = run_finetune(ModelState(f.cfg, 3), tok, rc);
    CHECK(report.records.back().accuracy == 1.0);
    CHECK(m.config().num_token_labels == static_cast<int64_t>(tok.labels.size()));

    FinetuneSet seq;
    seq.vocab = f.mlm.vocab;
    seq.labels = {"neg", "pos"};
    LabeledSequence ex;
    ex.text = "a small example";
    ex.label = "pos";
    seq.examples.assign(8, ex);
    rc.mode = Mode::finetune_seq;
    auto [ms, sreport] = run_finetune(ModelState(f.cfg, 3), seq, rc);
    CHECK(sreport.records.back().accuracy == 1.0);

    // Label outside the set, and a head of the wrong size.
    seq.examples[0].label = "maybe";
    CHECK_THROWS_AS(run_finetune(ModelState(f.cfg, 3), seq, rc), DataError);
    seq.examples[0].label = "pos";
    seq.labels = {"neg", "pos", "other"};
    CHECK_THROWS_AS(run_finetune(ms, seq, rc), ConfigError);
}
