// SPDX-License-Identifier: Apache-2.0
//
// Data ingestion, synthetic corpora and MLM masking.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "distillkit/tokenizer.h"
#include "json.hpp"

namespace distillkit {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Row-major [batch, seq_len] token ids with their attention mask.
struct TokenMatrix {
    int64_t batch = 0;
    int64_t seq_len = 0;
    std::vector<int32_t> ids;
    std::vector<uint8_t> attention_mask;

    int32_t at(int64_t b, int64_t t) const { return ids[static_cast<size_t>(b * seq_len + t)]; }
    TokenMatrix rows(const std::vector<int64_t>& which) const;
};

struct MaskedBatch {
    int64_t batch = 0;
    int64_t seq_len = 0;
    std::vector<int32_t> input_ids;       // X after masking
    std::vector<int32_t> labels;          // original id where selected, else kIgnoreLabel
    std::vector<uint8_t> mask_indicator;  // W: 1 exactly where labels carry an id
    std::vector<uint8_t> attention_mask;

    int64_t tokens() const { return batch * seq_len; }
    int64_t masked_count() const;
    /// Unmasked view of a token matrix (W all zero).
    static MaskedBatch unmasked(const TokenMatrix& m);
};

struct MaskingConfig {
    double select_rate = 0.15;
    double mask_prob = 0.8;    // selected -> MASK
    double random_prob = 0.2;  // selected -> uniformly drawn other non-special token
    // The remaining 1 - mask_prob - random_prob keeps the original token.
};

/// Selects each non-special, attended token independently with probability
/// select_rate and rewrites it per `config`. Pure given `seed`.
MaskedBatch mask_batch(const TokenMatrix& ids, const Vocab& vocab, const MaskingConfig& config, uint64_t seed);
/// Replacement split mask_prob / (1 - mask_prob).
MaskedBatch mask_batch(const TokenMatrix& ids, const Vocab& vocab, double select_rate, double mask_prob,
                       uint64_t seed);

/// A token-classification sentence (words + per-word labels) or a
/// sequence-classification record (text + one label).
struct LabeledSequence {
    std::vector<std::string> words;
    std::vector<std::string> word_labels;
    std::string text;
    std::string label;
};

/// Sorted label inventory of a dataset ("O" first when present).
std::vector<std::string> label_inventory(const std::vector<LabeledSequence>& data);

/// "token<TAB or SPACE>label" lines, blank line between sentences.
std::vector<LabeledSequence> load_conll(const std::filesystem::path& path);
void write_conll(const std::filesystem::path& path, const std::vector<LabeledSequence>& data);

/// "text<TAB>label" lines.
std::vector<LabeledSequence> load_pairs(const std::filesystem::path& path);

struct QaExample {
    std::string question;
    std::string context;
    std::vector<std::string> answers;
};
/// "question<TAB>context<TAB>answer[|answer...]" lines.
std::vector<QaExample> load_qa(const std::filesystem::path& path);

/// Parameters of the synthetic sentence generator. Templates reference
/// entity types as {TYPE}; every other word is emitted verbatim with label O.
struct SynthSpec {
    struct EntityType {
        std::string name;
        std::vector<std::string> surfaces;  // may be multi-word
    };
    std::vector<EntityType> entity_types;
    std::vector<std::string> templates;
    int64_t num_sentences = 1000;
    double heldout_fraction = 0.1;
};

struct SynthCorpus {
    std::vector<LabeledSequence> train;
    std::vector<LabeledSequence> heldout;
    std::vector<std::string> labels;  // O, then B-/I- per entity type
};

SynthCorpus synth_corpus(const SynthSpec& spec, uint64_t seed);

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

/// Built-in generators: "biomedical" and "general" share the function-word
/// layer but differ in templates and entities.
SynthSpec default_synth_spec(const std::string& domain);

/// Fixed-length MLM blocks: [CLS] followed by whole sentences, each closed by
/// SEP, packed greedily and padded to max_len. A sentence never straddles two
/// blocks, so every sentence start sits after a CLS or SEP; one longer than a
/// block is truncated.
TokenMatrix pack_blocks(const std::vector<std::string>& sentences, const Vocab& vocab, int32_t max_len);

std::vector<std::string> sentence_texts(const std::vector<LabeledSequence>& data);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace distillkit
