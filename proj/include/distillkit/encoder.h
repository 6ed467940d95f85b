// SPDX-License-Identifier: Apache-2.0
//
// BERT-style encoder in two shapes: the standard post-norm stack and a
// bottleneck stack (narrow inner blocks between down/up projections, several
// feed-forward sub-blocks, narrow embeddings widened by a 1-D convolution).

#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "distillkit/autograd.h"
#include "distillkit/corpus.h"
#include "json.hpp"

namespace distillkit {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Variant { standard, bottleneck };

struct EncoderConfig {
    int64_t num_layers = 12;
    int64_t hidden_dim = 768;
    int64_t embed_dim = 768;
    int64_t num_heads = 12;
    double ffn_expansion = 4.0;
    int64_t vocab_size = 30522;
    int64_t max_position = 512;
    Variant variant = Variant::standard;
    // Bottleneck only.
    int64_t bottleneck_dim = 128;
    int64_t num_ffn_blocks = 4;
    int64_t embed_kernel = 3;
    // Task heads; 0 means absent.
    int64_t num_token_labels = 0;
    int64_t num_seq_labels = 0;

    double dropout = 0.1;
    double layer_norm_eps = 1e-12;
    double init_std = 0.02;

    /// Throws ConfigError naming the first violated constraint.
    void validate() const;
    /// Width the attention and FFN sub-blocks run at.
    int64_t inner_dim() const { return variant == Variant::bottleneck ? bottleneck_dim : hidden_dim; }
    int64_t ffn_dim() const;
};

nlohmann::json to_json(const EncoderConfig& c);
/// Starts from defaults; unknown keys are rejected.
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
std::string to_string(Variant v);

/// Closed-form parameter count, including MLM and any configured task heads.
int64_t count_params(const EncoderConfig& c);

class ModelState {
public:
    ModelState() = default;
    /// Truncated-normal weights, zero biases, unit norms. Each tensor draws
    /// from a stream keyed by its name, so adding a head leaves the rest intact.
    ModelState(const EncoderConfig& config, uint64_t seed);

    const EncoderConfig& config() const { return config_; }

    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Parameter& param(const std::string& name);
    const Parameter& param(const std::string& name) const;
    std::deque<Parameter>& parameters() { return params_; }
    const std::deque<Parameter>& parameters() const { return params_; }
    std::vector<Parameter*> parameter_ptrs();
    int64_t num_elements() const;
    void zero_grad();

    enum class Head { token, sequence };
    /// Creates or re-initialises a task head and records its label count.
    void init_head(Head head, int64_t num_labels, uint64_t seed);

    /// Used by checkpoint loading; shapes are validated against the config.
    void assign(const std::string& name, Tensor value);

private:
    Parameter& add(const std::string& name, Shape shape, uint64_t seed, int kind);

    EncoderConfig config_;
    std::deque<Parameter> params_;
    std::map<std::string, size_t> index_;
};

enum class Capture {
    full,          // every hidden state and attention map, plus MLM logits
    logits_only,   // MLM logits and the final hidden state
    final_hidden,  // final hidden state only (task heads)
};

struct ForwardOptions {
    Capture capture = Capture::full;
    bool train = false;  // enables dropout
    uint64_t dropout_seed = 0;
};

struct EncoderOutputs {
    int64_t batch = 0;
    int64_t seq_len = 0;
    std::vector<Var> hidden_states;  // [B*N, D]; index 0 is the embedding output under full capture
    std::vector<Var> attentions;     // [B, H, N, N] per layer
    Var mlm_logits;                  // [B*N, V]

    const Var& final_hidden() const { return hidden_states.back(); }
};

/// Batch of token ids with attention mask, row-major [batch, seq_len].
struct BatchView {
    int64_t batch = 0;
    int64_t seq_len = 0;
    std::span<const int32_t> ids;
    std::span<const uint8_t> attention_mask;

    static BatchView of(const MaskedBatch& b) { return {b.batch, b.seq_len, b.input_ids, b.attention_mask}; }
    static BatchView of(const TokenMatrix& m) { return {m.batch, m.seq_len, m.ids, m.attention_mask}; }
};

/// Dispatches on config().variant. Parameters enter through `tape`; pass a
/// non-recording tape for inference.
EncoderOutputs forward(ModelState& state, const BatchView& batch, const ForwardOptions& options, Tape& tape);
/// Forward with no gradient tracking.
EncoderOutputs infer(ModelState& state, const BatchView& batch, Capture capture = Capture::full);

/// Per-token label logits [B*N, L]. Throws when the head is missing or its
/// label count differs from `expected_labels` (when given).
Var task_head_token(ModelState& state, const EncoderOutputs& out, Tape& tape, int64_t expected_labels = -1);
/// Label logits of each sequence's first (CLS) position: [B, L].
Var task_head_seq(ModelState& state, const EncoderOutputs& out, Tape& tape, int64_t expected_labels = -1);

/// JSON manifest at `path` (config, tensor names, shapes, byte offsets) and
/// the little-endian f64 payload at `path` + ".bin".
void save_checkpoint(const ModelState& state, const std::filesystem::path& path,
                     const nlohmann::json& extra = nlohmann::json::object());
ModelState load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);
std::filesystem::path payload_path(const std::filesystem::path& manifest);

}  // namespace distillkit
