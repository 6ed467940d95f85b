// SPDX-License-Identifier: Apache-2.0
//
// Optimisation loops: distillation, continual MLM pretraining and
// downstream fine-tuning, with AdamW, a warmup/linear-decay schedule and
// global-norm gradient clipping.
//
// Reports record the model after `step` updates: a record at step s holds the
// training loss on batch s and the evaluation accuracy before update s runs.

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "distillkit/corpus.h"
#include "distillkit/distill.h"
#include "distillkit/encoder.h"
#include "json.hpp"

namespace distillkit {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode { distill, pretrain_mlm, finetune_token, finetune_seq };
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct RunConfig {
    Mode mode = Mode::distill;
    int64_t steps = 1000;  // distill and pretrain_mlm
    int64_t epochs = 5;    // fine-tuning
    int64_t batch_size = 16;
    double learning_rate = 1e-4;
    double warmup_fraction = 0.06;
    double weight_decay = 0.01;
    double clip_norm = 1.0;  // 0 disables clipping
    uint64_t seed = 0;
    DistillPlan plan;
    int64_t eval_every = 100;
    int32_t max_len = 128;
    MaskingConfig masking;
    std::string teacher;  // checkpoint path, distill mode
    /// Copy layers from the teacher when widths allow.
    bool init_from_teacher = true;
    /// Written at every record when non-empty.
    std::filesystem::path checkpoint_dir;

    /// Fine-tuning defaults: token tasks 5 epochs, sequence tasks 3; both
    /// batch 16 at 5e-5.
    static RunConfig defaults(Mode mode);
    /// `require_teacher_path` applies the distill-mode rule; library entry
    /// points that receive the teacher in memory skip it.
    void validate(bool require_teacher_path = true) const;
};

nlohmann::json to_json(const RunConfig& c);
/// Starts from RunConfig::defaults of the document's mode; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);

struct TrainRecord {
    int64_t step = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double ms_per_step = 0.0;
    std::map<std::string, double> parts;  // loss components, held-out loss
};

struct TrainReport {
    std::vector<TrainRecord> records;
    nlohmann::json final_metrics = nlohmann::json::object();

    /// Columns step,loss,accuracy,ms_per_step.
    std::string csv() const;
    void write_csv(const std::filesystem::path& path) const;
    nlohmann::json to_json() const;
};

struct OptimizerConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
};

/// Linear warmup over round(warmup_fraction * total) steps, then linear decay
/// to 0 at `total`; 0 from there on.
double scheduled_lr(int64_t step, int64_t total, double peak, double warmup_fraction);

/// Scales gradients so their global L2 norm is at most `max_norm`. Returns
/// the norm before scaling.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

/// Decoupled weight decay applies only to parameters with `decay` set.
class AdamW {
public:
    AdamW(std::vector<Parameter*> params, OptimizerConfig config = {});

    /// Clips, then updates every parameter from its `grad` at rate `lr`.
    /// Returns the pre-clip gradient norm.
    double step(double lr);
    int64_t steps_taken() const { return t_; }

private:
    std::vector<Parameter*> params_;
    OptimizerConfig config_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

/// One scheduled AdamW update for `step_index` of a `total_steps` run.
void optimizer_step(AdamW& optimizer, int64_t step_index, int64_t total_steps, const RunConfig& config);

/// Packed MLM training and held-out blocks.
struct MlmCorpus {
    Vocab vocab;
    TokenMatrix train;
    TokenMatrix heldout;  // batch 0 when absent
};
MlmCorpus make_mlm_corpus(const std::vector<std::string>& train_sentences,
                          const std::vector<std::string>& heldout_sentences, Vocab vocab, int32_t max_len);

struct MlmEval {
    double loss = 0.0;      // mean cross-entropy per masked token
    double accuracy = 0.0;  // top-1 over masked tokens
    int64_t masked = 0;
};
/// Masks `data` once with `seed` and scores the MLM head on every masked token.
MlmEval evaluate_mlm(ModelState& state, const TokenMatrix& data, const Vocab& vocab, const MaskingConfig& masking,
                     uint64_t seed, int64_t batch_size = 32);

/// Held-out masks are drawn from this seed so runs compare on equal footing.
inline constexpr uint64_t kEvalMaskSeed = 0x6576616c;

std::pair<ModelState, TrainReport> run_distillation(ModelState& teacher, const EncoderConfig& student_config,
                                                    const MlmCorpus& corpus, const RunConfig& config);

std::pair<ModelState, TrainReport> run_mlm_pretrain(const ModelState& init, const MlmCorpus& corpus,
                                                    const RunConfig& config);

struct FinetuneSet {
    Vocab vocab;
    std::vector<LabeledSequence> examples;
    std::vector<std::string> labels;  // head output order
};

/// Creates the task head when absent. Token mode propagates word labels to
/// every sub-word and skips specials and padding.
std::pair<ModelState, TrainReport> run_finetune(const ModelState& init, const FinetuneSet& data,
                                                const RunConfig& config);

/// Mean token cross-entropy over rows whose label is not kIgnoreLabel, and
/// top-1 accuracy over the same rows (through `accuracy`).
Var token_cross_entropy(const Var& logits, const std::vector<int32_t>& labels, double* accuracy = nullptr);

}  // namespace distillkit
