// SPDX-License-Identifier: Apache-2.0

#include "distillkit/corpus.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "distillkit/random.h"

namespace distillkit {

namespace {

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

std::string located(const std::filesystem::path& path, size_t line, const std::string& what) {
    return path.string() + ":" + std::to_string(line) + ": " + what;
}

}  // namespace

TokenMatrix TokenMatrix::rows(const std::vector<int64_t>& which) const {
    TokenMatrix out;
    out.batch = static_cast<int64_t>(which.size());
    out.seq_len = seq_len;
    out.ids.reserve(which.size() * static_cast<size_t>(seq_len));
    out.attention_mask.reserve(out.ids.capacity());
    for (int64_t r : which) {
        if (r < 0 || r >= batch) throw DataError("TokenMatrix::rows: row " + std::to_string(r) + " out of range");
        const auto off = static_cast<size_t>(r * seq_len);
        out.ids.insert(out.ids.end(), ids.begin() + off, ids.begin() + off + seq_len);
        out.attention_mask.insert(out.attention_mask.end(), attention_mask.begin() + off,
                                  attention_mask.begin() + off + seq_len);
    }
    return out;
}

int64_t MaskedBatch::masked_count() const {
    return std::count(mask_indicator.begin(), mask_indicator.end(), uint8_t{1});
}

MaskedBatch MaskedBatch::unmasked(const TokenMatrix& m) {
    MaskedBatch b;
    b.batch = m.batch;
    b.seq_len = m.seq_len;
    b.input_ids = m.ids;
    b.labels.assign(m.ids.size(), kIgnoreLabel);
    b.mask_indicator.assign(m.ids.size(), 0);
    b.attention_mask = m.attention_mask;
    return b;
}

MaskedBatch mask_batch(const TokenMatrix& ids, const Vocab& vocab, const MaskingConfig& config, uint64_t seed) {
    if (!(config.select_rate >= 0.0 && config.select_rate < 1.0))
        throw DataError("select_rate must lie in [0, 1)");
    if (!(config.mask_prob >= 0.0 && config.random_prob >= 0.0 && config.mask_prob + config.random_prob <= 1.0 + 1e-12))
        throw DataError("mask_prob and random_prob must be non-negative and sum to at most 1");
    const auto pool = vocab.non_special_ids();
    if (pool.size() < 2) throw DataError("random replacement needs at least 2 non-special tokens");
    if (ids.ids.size() != static_cast<size_t>(ids.batch * ids.seq_len) || ids.attention_mask.size() != ids.ids.size())
        throw DataError("token matrix dimensions do not match its buffers");

    MaskedBatch out = MaskedBatch::unmasked(ids);
    Rng rng(mix_seed(seed, 0x6d61736bULL));
    for (size_t i = 0; i < ids.ids.size(); ++i) {
        const int32_t id = ids.ids[i];
        if (id < 0 || id >= vocab.size()) throw DataError("token id " + std::to_string(id) + " outside vocabulary");
        if (!ids.attention_mask[i] || vocab.is_special(id)) continue;
        if (uniform01(rng) >= config.select_rate) continue;
        out.labels[i] = id;
        out.mask_indicator[i] = 1;
        const double u = uniform01(rng);
        if (u < config.mask_prob) {
            out.input_ids[i] = vocab.mask_id();
        } else if (u < config.mask_prob + config.random_prob) {
            // Uniform over the pool minus the original token.
            int32_t pick = pool[uniform_index(rng, pool.size() - 1)];
            if (pick >= id && std::binary_search(pool.begin(), pool.end(), id)) {
                auto it = std::upper_bound(pool.begin(), pool.end(), pick);
                pick = *it;
            }
            out.input_ids[i] = pick;
        }
    }
    return out;
}

MaskedBatch mask_batch(const TokenMatrix& ids, const Vocab& vocab, double select_rate, double mask_prob,
                       uint64_t seed) {
    MaskingConfig c;
    c.select_rate = select_rate;
    c.mask_prob = mask_prob;
    c.random_prob = 1.0 - mask_prob;
    return mask_batch(ids, vocab, c, seed);
}

std::vector<std::string> label_inventory(const std::vector<LabeledSequence>& data) {
    std::set<std::string> labels;
    for (const auto& s : data) {
        labels.insert(s.word_labels.begin(), s.word_labels.end());
        if (!s.label.empty()) labels.insert(s.label);
    }
    std::vector<std::string> out;
    if (labels.erase("O")) out.push_back("O");
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

std::vector<LabeledSequence> load_conll(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<LabeledSequence> out;
    LabeledSequence cur;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        const auto fields = split_ws(line);
        if (fields.empty()) {
            if (!cur.words.empty()) out.push_back(std::move(cur));
            cur = {};
            continue;
        }
        if (fields.size() != 2)
            throw DataError(located(path, lineno, "expected 2 fields (token, label), got " + std::to_string(fields.size())));
        cur.words.push_back(fields[0]);
        cur.word_labels.push_back(fields[1]);
    }
    if (!cur.words.empty()) out.push_back(std::move(cur));
    return out;
}

void write_conll(const std::filesystem::path& path, const std::vector<LabeledSequence>& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& s : data) {
        for (size_t i = 0; i < s.words.size(); ++i) out << s.words[i] << '\t' << s.word_labels[i] << '\n';
        out << '\n';
    }
}

std::vector<LabeledSequence> load_pairs(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<LabeledSequence> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos) throw DataError(located(path, lineno, "missing label column"));
        LabeledSequence s;
        s.text = line.substr(0, tab);
        s.label = line.substr(tab + 1);
        if (split_ws(s.text).empty()) throw DataError(located(path, lineno, "empty text field"));
        if (split_ws(s.label).empty()) throw DataError(located(path, lineno, "empty label field"));
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<QaExample> load_qa(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<QaExample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string f;
        std::istringstream ls(line);
        while (std::getline(ls, f, '\t')) fields.push_back(f);
        if (fields.size() != 3) throw DataError(located(path, lineno, "expected question, context and answer columns"));
        QaExample q{fields[0], fields[1], {}};
        std::istringstream as(fields[2]);
        while (std::getline(as, f, '|'))
            if (!f.empty()) q.answers.push_back(f);
        if (q.question.empty() || q.answers.empty()) throw DataError(located(path, lineno, "empty question or answer"));
        out.push_back(std::move(q));
    }
    return out;
}

SynthCorpus synth_corpus(const SynthSpec& spec, uint64_t seed) {
    if (spec.templates.empty()) throw DataError("synthetic corpus needs at least one template");
    if (spec.num_sentences < 0) throw DataError("num_sentences must be non-negative");
    if (!(spec.heldout_fraction >= 0.0 && spec.heldout_fraction <= 1.0))
        throw DataError("heldout_fraction must lie in [0, 1]");
    std::map<std::string, const SynthSpec::EntityType*> types;
    SynthCorpus out;
    out.labels.push_back("O");
    for (const auto& t : spec.entity_types) {
        if (t.surfaces.empty()) throw DataError("entity type " + t.name + " has no surfaces");
        if (!types.emplace(t.name, &t).second) throw DataError("duplicate entity type " + t.name);
        out.labels.push_back("B-" + t.name);
        out.labels.push_back("I-" + t.name);
    }
    std::vector<std::vector<std::string>> templates;
    for (const auto& t : spec.templates) {
        auto words = split_ws(t);
        for (const auto& w : words)
            if (w.size() > 2 && w.front() == '{' && w.back() == '}' && !types.count(w.substr(1, w.size() - 2)))
                throw DataError("template references unknown entity type " + w);
        templates.push_back(std::move(words));
    }

    Rng rng(mix_seed(seed, 0x73796e74ULL));
    std::vector<LabeledSequence> all;
    all.reserve(static_cast<size_t>(spec.num_sentences));
    for (int64_t n = 0; n < spec.num_sentences; ++n) {
        const auto& tpl = templates[uniform_index(rng, templates.size())];
        LabeledSequence s;
        for (const auto& w : tpl) {
            if (w.size() > 2 && w.front() == '{' && w.back() == '}') {
                const auto* type = types.at(w.substr(1, w.size() - 2));
                const auto surface = split_ws(type->surfaces[uniform_index(rng, type->surfaces.size())]);
                for (size_t i = 0; i < surface.size(); ++i) {
                    s.words.push_back(surface[i]);
                    s.word_labels.push_back((i == 0 ? "B-" : "I-") + type->name);
                }
            } else {
                s.words.push_back(w);
                s.word_labels.push_back("O");
            }
        }
        for (size_t i = 0; i < s.words.size(); ++i) s.text += (i ? " " : "") + s.words[i];
        all.push_back(std::move(s));
    }
    const auto held = static_cast<size_t>(std::llround(static_cast<double>(spec.num_sentences) * spec.heldout_fraction));
    out.train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(held));
    out.heldout.assign(all.end() - static_cast<std::ptrdiff_t>(held), all.end());
    return out;
}

nlohmann::json to_json(const SynthSpec& spec) {
    nlohmann::json types = nlohmann::json::array();
    for (const auto& t : spec.entity_types) types.push_back({{"name", t.name}, {"surfaces", t.surfaces}});
    return {{"entity_types", types},
            {"templates", spec.templates},
            {"num_sentences", spec.num_sentences},
            {"heldout_fraction", spec.heldout_fraction}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {"entity_types", "templates", "num_sentences", "heldout_fraction", "domain"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw DataError("unknown synth spec key '" + k + "'");
    SynthSpec s = default_synth_spec(j.value("domain", std::string("biomedical")));
    try {
        if (j.contains("entity_types")) {
            s.entity_types.clear();
            for (const auto& t : j.at("entity_types"))
                s.entity_types.push_back({t.at("name").get<std::string>(), t.at("surfaces").get<std::vector<std::string>>()});
        }
        if (j.contains("templates")) s.templates = j.at("templates").get<std::vector<std::string>>();
        if (j.contains("num_sentences")) s.num_sentences = j.at("num_sentences").get<int64_t>();
        if (j.contains("heldout_fraction")) s.heldout_fraction = j.at("heldout_fraction").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed synth spec: ") + e.what());
    }
    return s;
}

SynthSpec default_synth_spec(const std::string& domain) {
    SynthSpec s;
    if (domain == "biomedical") {
        s.entity_types = {
            {"DISEASE", {"breast cancer", "diabetes", "asthma", "lung cancer", "hypertension", "alzheimer disease",
                         "parkinson disease", "malaria", "tuberculosis", "leukemia", "heart failure", "arthritis",
                         "obesity", "sepsis", "hepatitis", "migraine"}},
            {"CHEMICAL", {"aspirin", "metformin", "insulin", "cisplatin", "ibuprofen", "tamoxifen", "warfarin",
                          "dopamine", "glucose", "cholesterol", "nitric oxide", "vitamin d", "penicillin", "morphine"}},
            {"GENE", {"brca1", "tp53", "egfr", "kras", "her2", "apoe", "il6", "tnf", "vegf", "myc", "pten", "bcl2"}},
        };
        s.templates = {
            "patients with {DISEASE} were treated with {CHEMICAL} for six months .",
            "{CHEMICAL} reduced the risk of {DISEASE} in this study .",
            "mutations in the {GENE} gene are associated with {DISEASE} .",
            "expression of {GENE} was increased by {CHEMICAL} in these cells .",
            "the role of {GENE} in {DISEASE} remains unclear .",
            "we found that {CHEMICAL} inhibits {GENE} activity in human cells .",
            "treatment with {CHEMICAL} improved outcomes in patients with {DISEASE} .",
            "the {GENE} protein binds to {CHEMICAL} in vitro .",
            "there was no association between {GENE} and {DISEASE} in this cohort .",
            "high doses of {CHEMICAL} may cause {DISEASE} in older patients .",
            "loss of {GENE} function leads to {DISEASE} in mice .",
            "the effect of {CHEMICAL} on {DISEASE} was studied in a clinical trial .",
        };
    } else if (domain == "general") {
        s.entity_types = {
            {"PERSON", {"john smith", "mary jones", "david brown", "sarah miller", "james wilson", "emma davis",
                        "michael taylor", "anna clark", "peter hall", "laura king", "robert young", "lisa wright"}},
            {"LOCATION", {"london", "paris", "new york", "berlin", "tokyo", "chicago", "madrid", "rome", "boston",
                          "sydney", "cairo", "toronto"}},
            {"ORGANIZATION", {"acme corp", "global bank", "city council", "national museum", "state university",
                              "river company", "north airlines", "union press", "metro group", "first hospital"}},
        };
        s.templates = {
            "{PERSON} moved to {LOCATION} with the family last year .",
            "{PERSON} works for {ORGANIZATION} in {LOCATION} .",
            "the main office of {ORGANIZATION} is located in {LOCATION} .",
            "{ORGANIZATION} announced that {PERSON} will join the board .",
            "{PERSON} met {PERSON} in {LOCATION} on monday .",
            "the weather in {LOCATION} was cold and wet in this season .",
            "{PERSON} said the report was published by {ORGANIZATION} .",
            "{ORGANIZATION} opened a new office in {LOCATION} .",
            "many people visited {LOCATION} during the summer .",
            "{PERSON} was born in {LOCATION} and studied at {ORGANIZATION} .",
            "there was no comment from {ORGANIZATION} on the matter .",
            "{PERSON} wrote a book about the history of {LOCATION} .",
        };
    } else {
        throw DataError("unknown synthetic domain '" + domain + "' (expected biomedical or general)");
    }
    return s;
}

TokenMatrix pack_blocks(const std::vector<std::string>& sentences, const Vocab& vocab, int32_t max_len) {
    if (max_len < 3) throw DataError("max_len must be at least 3");
    const auto width = static_cast<size_t>(max_len);
    TokenMatrix m;
    m.seq_len = max_len;
    std::vector<int32_t> block;
    auto flush = [&] {
        if (block.empty()) return;
        m.ids.push_back(vocab.cls_id());
        m.attention_mask.push_back(1);
        for (size_t i = 0; i + 1 < width; ++i) {
            const bool real = i < block.size();
            m.ids.push_back(real ? block[i] : vocab.pad_id());
            m.attention_mask.push_back(real ? 1 : 0);
        }
        ++m.batch;
        block.clear();
    };
    for (const auto& s : sentences) {
        auto ids = tokenize(s, vocab);
        if (ids.empty()) continue;
        if (ids.size() > width - 2) ids.resize(width - 2);
        ids.push_back(vocab.sep_id());
        if (block.size() + ids.size() > width - 1) flush();
        block.insert(block.end(), ids.begin(), ids.end());
    }
    flush();
    return m;
}

std::vector<std::string> sentence_texts(const std::vector<LabeledSequence>& data) {
    std::vector<std::string> out;
    out.reserve(data.size());
    for (const auto& s : data) {
        if (!s.text.empty()) {
            out.push_back(s.text);
            continue;
        }
        std::string t;
        for (size_t i = 0; i < s.words.size(); ++i) t += (i ? " " : "") + s.words[i];
        out.push_back(std::move(t));
    }
    return out;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& l : lines) out << l << '\n';
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) out.push_back(strip_cr(line));
    return out;
}

}  // namespace distillkit
