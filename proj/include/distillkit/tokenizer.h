// SPDX-License-Identifier: Apache-2.0
//
// WordPiece-style sub-word tokenizer.

#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace distillkit {

class TokenizerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Label value for positions excluded from losses and metrics.
inline constexpr int32_t kIgnoreLabel = -100;

class Vocab {
public:
    static constexpr std::string_view kPad = "[PAD]";
    static constexpr std::string_view kUnk = "[UNK]";
    static constexpr std::string_view kCls = "[CLS]";
    static constexpr std::string_view kSep = "[SEP]";
    static constexpr std::string_view kMask = "[MASK]";

    Vocab() = default;
    /// Validates that tokens are distinct and that all five specials exist.
    Vocab(std::vector<std::string> tokens, bool cased);

    int32_t size() const { return static_cast<int32_t>(tokens_.size()); }
    bool cased() const { return cased_; }
    /// Id of `token`, or -1 when absent.
    int32_t find(std::string_view token) const;
    bool contains(std::string_view token) const { return find(token) >= 0; }
    const std::string& token(int32_t id) const { return tokens_.at(static_cast<size_t>(id)); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    int32_t pad_id() const { return pad_; }
    int32_t unk_id() const { return unk_; }
    int32_t cls_id() const { return cls_; }
    int32_t sep_id() const { return sep_; }
    int32_t mask_id() const { return mask_; }
    bool is_special(int32_t id) const;
    std::vector<int32_t> non_special_ids() const;

    /// One token per line, line number = id, '\n' terminated.
    void save(const std::filesystem::path& path) const;
    /// `cased` is inferred from the presence of upper-case ASCII when absent.
    static Vocab load(const std::filesystem::path& path, std::optional<bool> cased = std::nullopt);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int32_t> index_;
    bool cased_ = true;
    int32_t pad_ = -1, unk_ = -1, cls_ = -1, sep_ = -1, mask_ = -1;
};

struct Encoding {
    std::vector<int32_t> token_ids;
    std::vector<int32_t> word_index;  // -1 on CLS, SEP and PAD
    std::vector<uint8_t> attention_mask;
    int32_t num_words = 0;  // words in the source, including truncated ones
};

/// Splits on whitespace, then isolates ASCII punctuation characters.
/// Lower-cases ASCII letters when `cased` is false.
std::vector<std::string> basic_split(std::string_view text, bool cased);

/// Induces a vocabulary: specials, every character seen (word-initial form
/// and "##" continuation form), then pair merges in order of corpus frequency
/// (ties broken lexicographically) until `target_size` tokens exist or no
/// pair remains. Deterministic given the corpus.
Vocab build_vocab(const std::vector<std::string>& corpus, int32_t target_size, bool cased);
Vocab build_vocab(std::istream& corpus, int32_t target_size, bool cased);

/// Greedy longest-match-first pieces of one word; {UNK} when no
/// decomposition exists.
std::vector<int32_t> wordpiece(std::string_view word, const Vocab& vocab);

/// Sub-word ids of free text without CLS/SEP.
std::vector<int32_t> tokenize(std::string_view text, const Vocab& vocab);

/// CLS + pieces + SEP, truncated to max_len - 1 before SEP, padded to max_len.
Encoding encode(std::string_view text, const Vocab& vocab, int32_t max_len);
/// As encode, with word boundaries given by the caller. Punctuation inside a
/// word is split off but keeps that word's index.
Encoding encode_words(const std::vector<std::string>& words, const Vocab& vocab, int32_t max_len);

/// Every sub-word carries its word's label; specials and padding carry
/// kIgnoreLabel. Throws when word_labels.size() != enc.num_words.
std::vector<int32_t> align_labels(const std::vector<int32_t>& word_labels, const Encoding& enc);

/// Joins pieces back into a word, stripping "##" continuation markers.
std::string decode_pieces(const std::vector<int32_t>& ids, const Vocab& vocab);

}  // namespace distillkit
