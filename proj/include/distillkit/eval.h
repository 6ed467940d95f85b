// SPDX-License-Identifier: Apache-2.0
//
// Task metrics: entity-level NER scores, macro/binary classification scores
// and ranked-answer QA scores, plus decoding helpers that turn model logits
// into word-level predictions.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "distillkit/corpus.h"
#include "distillkit/encoder.h"
#include "json.hpp"

namespace distillkit {

struct MetricReport {
    std::string kind;  // "entity", "macro", "binary" or "ranked"
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    struct ClassRow {
        std::string name;
        double precision = 0.0, recall = 0.0, f1 = 0.0;
        int64_t support = 0;
    };
    std::vector<ClassRow> per_class;
    double strict_acc = 0.0;
    double lenient_acc = 0.0;
    double mrr = 0.0;
    int64_t count = 0;  // sentences, examples or questions scored

    nlohmann::json to_json() const;
    /// Aligned plain-text table, one row per score line.
    std::string table() const;
};

/// 2PR / (P + R), or 0 when P + R == 0.
double f1_score(double precision, double recall);

struct Span {
    int64_t sentence = 0;
    int64_t begin = 0;  // word index, inclusive
    int64_t end = 0;    // inclusive
    std::string type;
    auto operator<=>(const Span&) const = default;
};

/// Chunks of a BIO sequence. An I-X that does not continue an X chunk opens a
/// new one, as if it were B-X. Labels other than O, B-*, I-* are rejected.
std::vector<Span> extract_spans(const std::vector<std::string>& labels, int64_t sentence = 0);

/// Exact-match micro P/R/F1 over spans. Sequences must pair up in length.
MetricReport entity_f1(const std::vector<std::vector<std::string>>& gold,
                       const std::vector<std::vector<std::string>>& pred);

/// Unweighted mean of per-class P/R/F over `classes` plus any predicted label
/// outside it. With `positive_class`, reports that class alone (binary mode).
MetricReport macro_prf(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                       const std::vector<std::string>& classes,
                       const std::optional<std::string>& positive_class = std::nullopt);

/// Strict = gold at rank 1, lenient = gold anywhere, MRR = mean 1/rank of
/// the first gold candidate (0 when absent).
MetricReport ranked_qa(const std::vector<std::vector<std::string>>& gold_answers,
                       const std::vector<std::vector<std::string>>& ranked_predictions);

enum class Decode { first, majority };
Decode decode_from_string(const std::string& s);

/// Word labels from per-token label ids. Words cut off by truncation get "O".
/// Majority ties go to the earliest sub-word's label.
std::vector<std::string> collapse_subwords(const std::vector<int32_t>& token_pred, const Encoding& enc,
                                           const std::vector<std::string>& labels, Decode decode);

/// Word-level BIO predictions of the token head for each sentence.
std::vector<std::vector<std::string>> predict_token_labels(ModelState& state, const std::vector<LabeledSequence>& data,
                                                           const Vocab& vocab, const std::vector<std::string>& labels,
                                                           int32_t max_len, Decode decode = Decode::first,
                                                           int64_t batch_size = 32);

/// Sequence-head predictions for each record's text.
std::vector<std::string> predict_seq_labels(ModelState& state, const std::vector<LabeledSequence>& data,
                                            const Vocab& vocab, const std::vector<std::string>& labels,
                                            int32_t max_len, int64_t batch_size = 32);

/// Token matrix of encodings trimmed to the longest attended row.
TokenMatrix stack_encodings(const std::vector<Encoding>& encs);

}  // namespace distillkit
