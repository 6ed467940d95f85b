// SPDX-License-Identifier: Apache-2.0

#include "distillkit/eval.h"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace distillkit {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::vector<int32_t> argmax_rows(const Tensor& logits) {
    std::vector<int32_t> out(static_cast<size_t>(logits.rows()));
    for (int64_t r = 0; r < logits.rows(); ++r) {
        int64_t best = 0;
        for (int64_t c = 1; c < logits.cols(); ++c)
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        out[static_cast<size_t>(r)] = static_cast<int32_t>(best);
    }
    return out;
}

}  // namespace

double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j = {{"kind", kind}, {"count", count}};
    if (kind == "ranked") {
        j["strict_acc"] = strict_acc;
        j["lenient_acc"] = lenient_acc;
        j["mrr"] = mrr;
        return j;
    }
    j["precision"] = precision;
    j["recall"] = recall;
    j["f1"] = f1;
    if (!per_class.empty()) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& c : per_class)
            rows.push_back({{"class", c.name}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1},
                            {"support", c.support}});
        j["per_class"] = rows;
    }
    return j;
}

std::string MetricReport::table() const {
    std::ostringstream out;
    if (kind == "ranked") {
        out << "       S       L       M\n";
        out << "  " << fmt(strict_acc) << "  " << fmt(lenient_acc) << "  " << fmt(mrr) << '\n';
        return out.str();
    }
    size_t w = 8;
    for (const auto& c : per_class) w = std::max(w, c.name.size());
    auto row = [&](const std::string& name, double p, double r, double f) {
        out << name << std::string(w - name.size() + 2, ' ') << fmt(p) << "  " << fmt(r) << "  " << fmt(f) << '\n';
    };
    out << std::string(w + 2, ' ') << "     P       R       F\n";
    for (const auto& c : per_class) row(c.name, c.precision, c.recall, c.f1);
    row(kind == "macro" ? "macro" : kind, precision, recall, f1);
    return out.str();
}

std::vector<Span> extract_spans(const std::vector<std::string>& labels, int64_t sentence) {
    std::vector<Span> spans;
    std::optional<Span> open;
    auto close = [&] {
        if (open) spans.push_back(*open);
        open.reset();
    };
    for (size_t i = 0; i < labels.size(); ++i) {
        const std::string& l = labels[i];
        const auto pos = static_cast<int64_t>(i);
        if (l == "O") {
            close();
            continue;
        }
        if (l.size() < 3 || l[1] != '-' || (l[0] != 'B' && l[0] != 'I'))
            throw DataError("label '" + l + "' is not BIO (expected O, B-TYPE or I-TYPE)");
        const std::string type = l.substr(2);
        if (l[0] == 'I' && open && open->type == type) {
            open->end = pos;
            continue;
        }
        close();
        open = Span{sentence, pos, pos, type};
    }
    close();
    return spans;
}

MetricReport entity_f1(const std::vector<std::vector<std::string>>& gold,
                       const std::vector<std::vector<std::string>>& pred) {
    if (gold.size() != pred.size()) throw DataError("entity_f1: gold and prediction sentence counts differ");
    std::set<Span> g, p;
    for (size_t s = 0; s < gold.size(); ++s) {
        if (gold[s].size() != pred[s].size())
            throw DataError("entity_f1: sentence " + std::to_string(s) + " lengths differ");
        for (auto& sp : extract_spans(gold[s], static_cast<int64_t>(s))) g.insert(sp);
        for (auto& sp : extract_spans(pred[s], static_cast<int64_t>(s))) p.insert(sp);
    }
    int64_t tp = 0;
    for (const auto& sp : p) tp += g.count(sp);
    MetricReport r;
    r.kind = "entity";
    r.count = static_cast<int64_t>(gold.size());
    r.precision = p.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(p.size());
    r.recall = g.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(g.size());
    r.f1 = f1_score(r.precision, r.recall);
    return r;
}

MetricReport macro_prf(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                       const std::vector<std::string>& classes, const std::optional<std::string>& positive_class) {
    if (gold.size() != pred.size()) throw DataError("macro_prf: gold and prediction counts differ");
    std::vector<std::string> all = classes;
    std::set<std::string> known(classes.begin(), classes.end());
    for (const auto& g : gold)
        if (!known.count(g)) throw DataError("macro_prf: gold label '" + g + "' is not in the class inventory");
    for (const auto& p : pred)
        if (known.insert(p).second) all.push_back(p);
    if (all.empty()) throw DataError("macro_prf: no classes");

    MetricReport r;
    r.count = static_cast<int64_t>(gold.size());
    for (const auto& c : all) {
        int64_t tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < gold.size(); ++i) {
            const bool g = gold[i] == c, p = pred[i] == c;
            tp += g && p;
            fp += !g && p;
            fn += g && !p;
        }
        MetricReport::ClassRow row;
        row.name = c;
        row.support = tp + fn;
        row.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        row.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        row.f1 = f1_score(row.precision, row.recall);
        r.per_class.push_back(row);
    }
    if (positive_class) {
        auto it = std::find_if(r.per_class.begin(), r.per_class.end(),
                               [&](const auto& row) { return row.name == *positive_class; });
        if (it == r.per_class.end()) throw DataError("macro_prf: positive class '" + *positive_class + "' unknown");
        r.kind = "binary";
        r.precision = it->precision;
        r.recall = it->recall;
        r.f1 = it->f1;
        return r;
    }
    r.kind = "macro";
    for (const auto& row : r.per_class) {
        r.precision += row.precision;
        r.recall += row.recall;
        r.f1 += row.f1;
    }
    const auto n = static_cast<double>(r.per_class.size());
    r.precision /= n;
    r.recall /= n;
    r.f1 /= n;
    return r;
}

MetricReport ranked_qa(const std::vector<std::vector<std::string>>& gold_answers,
                       const std::vector<std::vector<std::string>>& ranked_predictions) {
    if (gold_answers.size() != ranked_predictions.size()) throw DataError("ranked_qa: question counts differ");
    MetricReport r;
    r.kind = "ranked";
    r.count = static_cast<int64_t>(gold_answers.size());
    if (gold_answers.empty()) return r;
    for (size_t q = 0; q < gold_answers.size(); ++q) {
        const std::set<std::string> gold(gold_answers[q].begin(), gold_answers[q].end());
        const auto& cand = ranked_predictions[q];
        for (size_t k = 0; k < cand.size(); ++k) {
            if (!gold.count(cand[k])) continue;
            if (k == 0) r.strict_acc += 1.0;
            r.lenient_acc += 1.0;
            r.mrr += 1.0 / static_cast<double>(k + 1);
            break;
        }
    }
    const auto n = static_cast<double>(gold_answers.size());
    r.strict_acc /= n;
    r.lenient_acc /= n;
    r.mrr /= n;
    return r;
}

Decode decode_from_string(const std::string& s) {
    if (s == "first") return Decode::first;
    if (s == "majority") return Decode::majority;
    throw DataError("unknown decoding rule '" + s + "' (expected first or majority)");
}

std::vector<std::string> collapse_subwords(const std::vector<int32_t>& token_pred, const Encoding& enc,
                                           const std::vector<std::string>& labels, Decode decode) {
    std::vector<std::vector<int32_t>> votes(static_cast<size_t>(enc.num_words));
    for (size_t i = 0; i < enc.word_index.size() && i < token_pred.size(); ++i)
        if (enc.word_index[i] >= 0) votes[static_cast<size_t>(enc.word_index[i])].push_back(token_pred[i]);
    std::vector<std::string> out;
    out.reserve(votes.size());
    for (const auto& v : votes) {
        if (v.empty()) {
            out.emplace_back("O");
            continue;
        }
        int32_t pick = v.front();
        if (decode == Decode::majority) {
            std::map<int32_t, int> count;
            for (int32_t x : v) ++count[x];
            for (int32_t x : v)
                if (count[x] > count[pick]) pick = x;
        }
        out.push_back(labels.at(static_cast<size_t>(pick)));
    }
    return out;
}

TokenMatrix stack_encodings(const std::vector<Encoding>& encs) {
    TokenMatrix m;
    m.batch = static_cast<int64_t>(encs.size());
    int64_t len = 1;
    for (const auto& e : encs)
        len = std::max<int64_t>(len, std::count(e.attention_mask.begin(), e.attention_mask.end(), uint8_t{1}));
    m.seq_len = len;
    for (const auto& e : encs) {
        m.ids.insert(m.ids.end(), e.token_ids.begin(), e.token_ids.begin() + len);
        m.attention_mask.insert(m.attention_mask.end(), e.attention_mask.begin(), e.attention_mask.begin() + len);
    }
    return m;
}

std::vector<std::vector<std::string>> predict_token_labels(ModelState& state, const std::vector<LabeledSequence>& data,
                                                           const Vocab& vocab, const std::vector<std::string>& labels,
                                                           int32_t max_len, Decode decode, int64_t batch_size) {
    std::vector<std::vector<std::string>> out;
    for (size_t start = 0; start < data.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(data.size(), start + static_cast<size_t>(batch_size));
        std::vector<Encoding> encs;
        for (size_t i = start; i < end; ++i) encs.push_back(encode_words(data[i].words, vocab, max_len));
        TokenMatrix m = stack_encodings(encs);
        auto o = infer(state, BatchView::of(m), Capture::final_hidden);
        Tape tape(false);
        const auto pred = argmax_rows(task_head_token(state, o, tape, static_cast<int64_t>(labels.size())).value());
        for (size_t i = 0; i < encs.size(); ++i) {
            const auto off = static_cast<std::ptrdiff_t>(i) * m.seq_len;
            std::vector<int32_t> row(pred.begin() + off, pred.begin() + off + m.seq_len);
            out.push_back(collapse_subwords(row, encs[i], labels, decode));
        }
    }
    return out;
}

std::vector<std::string> predict_seq_labels(ModelState& state, const std::vector<LabeledSequence>& data,
                                            const Vocab& vocab, const std::vector<std::string>& labels,
                                            int32_t max_len, int64_t batch_size) {
    std::vector<std::string> out;
    for (size_t start = 0; start < data.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(data.size(), start + static_cast<size_t>(batch_size));
        std::vector<Encoding> encs;
        for (size_t i = start; i < end; ++i) encs.push_back(encode(data[i].text, vocab, max_len));
        TokenMatrix m = stack_encodings(encs);
        auto o = infer(state, BatchView::of(m), Capture::final_hidden);
        Tape tape(false);
        for (int32_t p : argmax_rows(task_head_seq(state, o, tape, static_cast<int64_t>(labels.size())).value()))
            out.push_back(labels.at(static_cast<size_t>(p)));
    }
    return out;
}

}  // namespace distillkit
