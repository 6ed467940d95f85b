// SPDX-License-Identifier: Apache-2.0

#include "distillkit/tokenizer.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <utility>

namespace distillkit {

namespace {

constexpr std::string_view kCont = "##";

bool is_ascii_punct(unsigned char c) {
    return c < 0x80 && std::ispunct(c);
}

/// Splits a UTF-8 string into code-point substrings.
std::vector<std::string> utf8_chars(std::string_view s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        size_t len = 1;
        if (c >= 0xF0) len = 4;
        else if (c >= 0xE0) len = 3;
        else if (c >= 0xC0) len = 2;
        len = std::min(len, s.size() - i);
        out.emplace_back(s.substr(i, len));
        i += len;
    }
    return out;
}

std::string fold(std::string_view s, bool cased) {
    std::string out(s);
    if (!cased)
        for (char& c : out)
            if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string> split_punct(std::string_view word) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : word) {
        if (is_ascii_punct(static_cast<unsigned char>(c))) {
            if (!cur.empty()) parts.push_back(std::move(cur));
            cur.clear();
            parts.emplace_back(1, c);
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) parts.push_back(std::move(cur));
    return parts;
}

std::string strip_cont(const std::string& s) {
    return s.starts_with(kCont) ? s.substr(kCont.size()) : s;
}

Encoding finish(std::vector<int32_t> ids, std::vector<int32_t> words, int32_t num_words, const Vocab& vocab,
                int32_t max_len) {
    if (max_len < 2) throw TokenizerError("max_len must leave room for CLS and SEP");
    Encoding enc;
    enc.num_words = num_words;
    enc.token_ids.push_back(vocab.cls_id());
    enc.word_index.push_back(-1);
    for (size_t i = 0; i < ids.size() && static_cast<int32_t>(enc.token_ids.size()) < max_len - 1; ++i) {
        enc.token_ids.push_back(ids[i]);
        enc.word_index.push_back(words[i]);
    }
    enc.token_ids.push_back(vocab.sep_id());
    enc.word_index.push_back(-1);
    enc.attention_mask.assign(enc.token_ids.size(), 1);
    while (static_cast<int32_t>(enc.token_ids.size()) < max_len) {
        enc.token_ids.push_back(vocab.pad_id());
        enc.word_index.push_back(-1);
        enc.attention_mask.push_back(0);
    }
    return enc;
}

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens, bool cased) : tokens_(std::move(tokens)), cased_(cased) {
    for (size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<int32_t>(i)).second) {
            throw TokenizerError("duplicate vocabulary token '" + tokens_[i] + "' at id " + std::to_string(i));
        }
    }
    auto need = [&](std::string_view t) {
        const int32_t id = find(t);
        if (id < 0) throw TokenizerError("vocabulary is missing special token " + std::string(t));
        return id;
    };
    pad_ = need(kPad);
    unk_ = need(kUnk);
    cls_ = need(kCls);
    sep_ = need(kSep);
    mask_ = need(kMask);
}

int32_t Vocab::find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? -1 : it->second;
}

bool Vocab::is_special(int32_t id) const {
    return id == pad_ || id == unk_ || id == cls_ || id == sep_ || id == mask_;
}

std::vector<int32_t> Vocab::non_special_ids() const {
    std::vector<int32_t> ids;
    for (int32_t i = 0; i < size(); ++i)
        if (!is_special(i)) ids.push_back(i);
    return ids;
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TokenizerError("cannot write vocabulary to " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path, std::optional<bool> cased) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TokenizerError("cannot read vocabulary from " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    bool has_upper = false;
    for (const auto& t : tokens) {
        if (t.size() > 2 && t.front() == '[' && t.back() == ']') continue;
        for (char c : t)
            if (std::isupper(static_cast<unsigned char>(c))) has_upper = true;
    }
    return Vocab(std::move(tokens), cased.value_or(has_upper));
}

std::vector<std::string> basic_split(std::string_view text, bool cased) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) return;
        for (auto& p : split_punct(cur)) words.push_back(fold(p, cased));
        cur.clear();
    };
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) flush();
        else cur.push_back(c);
    }
    flush();
    return words;
}

Vocab build_vocab(const std::vector<std::string>& corpus, int32_t target_size, bool cased) {
    std::map<std::string, int64_t> word_freq;
    for (const auto& line : corpus)
        for (auto& w : basic_split(line, cased)) ++word_freq[w];
    if (word_freq.empty()) throw TokenizerError("cannot build a vocabulary from an empty corpus");

    // Each distinct word as a symbol sequence: first char bare, rest "##"-prefixed.
    std::vector<std::pair<std::vector<std::string>, int64_t>> words;
    std::set<std::string> base;
    for (const auto& [w, f] : word_freq) {
        std::vector<std::string> syms;
        auto chars = utf8_chars(w);
        for (size_t i = 0; i < chars.size(); ++i) syms.push_back(i == 0 ? chars[i] : std::string(kCont) + chars[i]);
        for (const auto& c : chars) base.insert(c);
        for (size_t i = 1; i < syms.size(); ++i) base.insert(syms[i]);
        words.emplace_back(std::move(syms), f);
    }

    std::vector<std::string> tokens = {std::string(Vocab::kPad), std::string(Vocab::kUnk), std::string(Vocab::kCls),
                                       std::string(Vocab::kSep), std::string(Vocab::kMask)};
    const int32_t minimum = static_cast<int32_t>(tokens.size() + base.size());
    if (target_size < minimum) {
        throw TokenizerError("target vocabulary size " + std::to_string(target_size) + " is below the " +
                             std::to_string(minimum) + " specials and base characters");
    }
    std::set<std::string> present(tokens.begin(), tokens.end());
    for (const auto& b : base) {
        tokens.push_back(b);
        present.insert(b);
    }

    while (static_cast<int32_t>(tokens.size()) < target_size) {
        std::map<std::pair<std::string, std::string>, int64_t> pairs;
        for (const auto& [syms, f] : words)
            for (size_t i = 0; i + 1 < syms.size(); ++i) pairs[{syms[i], syms[i + 1]}] += f;
        if (pairs.empty()) break;
        // std::map iterates in lexicographic order, so the first maximum wins ties.
        auto best = pairs.begin();
        for (auto it = pairs.begin(); it != pairs.end(); ++it)
            if (it->second > best->second) best = it;
        const auto [left, right] = best->first;
        const std::string merged = left + strip_cont(right);
        for (auto& [syms, f] : words) {
            std::vector<std::string> next;
            for (size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
                    next.push_back(merged);
                    ++i;
                } else {
                    next.push_back(syms[i]);
                }
            }
            syms = std::move(next);
        }
        if (present.insert(merged).second) tokens.push_back(merged);
    }
    return Vocab(std::move(tokens), cased);
}

Vocab build_vocab(std::istream& corpus, int32_t target_size, bool cased) {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(corpus, line)) lines.push_back(line);
    return build_vocab(lines, target_size, cased);
}

std::vector<int32_t> wordpiece(std::string_view word, const Vocab& vocab) {
    constexpr size_t kMaxWordBytes = 100;
    if (word.empty()) return {};
    if (word.size() > kMaxWordBytes) return {vocab.unk_id()};
    const auto chars = utf8_chars(word);
    std::vector<int32_t> out;
    size_t start = 0;
    while (start < chars.size()) {
        int32_t found = -1;
        size_t end = chars.size();
        for (; end > start; --end) {
            std::string piece = start > 0 ? std::string(kCont) : std::string();
            for (size_t i = start; i < end; ++i) piece += chars[i];
            found = vocab.find(piece);
            if (found >= 0) break;
        }
        if (found < 0) return {vocab.unk_id()};
        out.push_back(found);
        start = end;
    }
    return out;
}

std::vector<int32_t> tokenize(std::string_view text, const Vocab& vocab) {
    std::vector<int32_t> ids;
    for (const auto& w : basic_split(text, vocab.cased()))
        for (int32_t id : wordpiece(w, vocab)) ids.push_back(id);
    return ids;
}

Encoding encode(std::string_view text, const Vocab& vocab, int32_t max_len) {
    const auto words = basic_split(text, vocab.cased());
    std::vector<int32_t> ids, idx;
    for (size_t w = 0; w < words.size(); ++w)
        for (int32_t id : wordpiece(words[w], vocab)) {
            ids.push_back(id);
            idx.push_back(static_cast<int32_t>(w));
        }
    return finish(std::move(ids), std::move(idx), static_cast<int32_t>(words.size()), vocab, max_len);
}

Encoding encode_words(const std::vector<std::string>& words, const Vocab& vocab, int32_t max_len) {
    std::vector<int32_t> ids, idx;
    for (size_t w = 0; w < words.size(); ++w) {
        bool any = false;
        for (const auto& part : split_punct(fold(words[w], vocab.cased())))
            for (int32_t id : wordpiece(part, vocab)) {
                ids.push_back(id);
                idx.push_back(static_cast<int32_t>(w));
                any = true;
            }
        if (!any) {
            ids.push_back(vocab.unk_id());
            idx.push_back(static_cast<int32_t>(w));
        }
    }
    return finish(std::move(ids), std::move(idx), static_cast<int32_t>(words.size()), vocab, max_len);
}

std::vector<int32_t> align_labels(const std::vector<int32_t>& word_labels, const Encoding& enc) {
    if (static_cast<int32_t>(word_labels.size()) != enc.num_words) {
        throw TokenizerError("align_labels: " + std::to_string(word_labels.size()) + " labels for " +
                             std::to_string(enc.num_words) + " words");
    }
    std::vector<int32_t> out(enc.token_ids.size(), kIgnoreLabel);
    for (size_t i = 0; i < out.size(); ++i)
        if (enc.word_index[i] >= 0) out[i] = word_labels[static_cast<size_t>(enc.word_index[i])];
    return out;
}

std::string decode_pieces(const std::vector<int32_t>& ids, const Vocab& vocab) {
    std::string out;
    for (int32_t id : ids) out += strip_cont(vocab.token(id));
    return out;
}

}  // namespace distillkit
