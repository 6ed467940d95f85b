// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "distillkit/random.h"
#include "distillkit/tokenizer.h"

using namespace distillkit;

namespace {

Vocab tiny_vocab(std::vector<std::string> extra, bool cased = true) {
    std::vector<std::string> t = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    t.insert(t.end(), extra.begin(), extra.end());
    return Vocab(std::move(t), cased);
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("build_vocab keeps characters, specials and the most frequent merge") {
    Vocab v = build_vocab(std::vector<std::string>{"aa aa ab"}, 10, true);
    for (auto t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b", "aa"}) CHECK(v.contains(t));
    CHECK(v.size() <= 10);
    CHECK(v.pad_id() == 0);
    CHECK(v.mask_id() == 4);
}

TEST_CASE("build_vocab rejects empty corpora and undersized targets") {
    CHECK_THROWS_AS(build_vocab(std::vector<std::string>{}, 100, true), TokenizerError);
    CHECK_THROWS_AS(build_vocab(std::vector<std::string>{"   "}, 100, true), TokenizerError);
    CHECK_THROWS_AS(build_vocab(std::vector<std::string>{"abc def"}, 6, true), TokenizerError);
}

TEST_CASE("build_vocab is deterministic and every word encodes without UNK") {
    std::vector<std::string> corpus = {"the quick brown fox jumps over the lazy dog .",
                                       "the dog sleeps , the fox runs !", "Quick foxes and lazy dogs"};
    Vocab a = build_vocab(corpus, 80, false);
    Vocab b = build_vocab(corpus, 80, false);
    CHECK(a.tokens() == b.tokens());
    for (const auto& line : corpus)
        for (const auto& w : basic_split(line, false)) {
            auto ids = wordpiece(w, a);
            CHECK(std::find(ids.begin(), ids.end(), a.unk_id()) == ids.end());
            CHECK(decode_pieces(ids, a) == w);
        }
}

TEST_CASE("uncased tokenization folds case") {
    Vocab v = build_vocab(std::vector<std::string>{"the cat"}, 30, false);
    CHECK(encode("The", v, 8).token_ids == encode("the", v, 8).token_ids);
}

TEST_CASE("wordpiece is greedy longest match") {
    Vocab v = tiny_vocab({"a", "aa", "##b"});
    auto ids = wordpiece("aab", v);
    REQUIRE(ids.size() == 2);
    CHECK(v.token(ids[0]) == "aa");
    CHECK(v.token(ids[1]) == "##b");
    CHECK(wordpiece("c", v) == std::vector<int32_t>{v.unk_id()});
    CHECK(wordpiece("ac", v) == std::vector<int32_t>{v.unk_id()});
}

TEST_CASE("encode frames with CLS/SEP, truncates and pads") {
    Vocab v = tiny_vocab({"a", "b", "##a"});
    Encoding e = encode("a b a", v, 8);
    REQUIRE(e.token_ids.size() == 8);
    CHECK(e.token_ids[0] == v.cls_id());
    CHECK(e.token_ids[4] == v.sep_id());
    CHECK(e.token_ids[5] == v.pad_id());
    CHECK(e.attention_mask == std::vector<uint8_t>{1, 1, 1, 1, 1, 0, 0, 0});
    CHECK(e.word_index == std::vector<int32_t>{-1, 0, 1, 2, -1, -1, -1, -1});

    Encoding t = encode("a b a b a", v, 4);
    CHECK(t.token_ids.size() == 4);
    CHECK(t.token_ids.back() == v.sep_id());
    CHECK(t.num_words == 5);
    CHECK_THROWS_AS(encode("a", v, 1), TokenizerError);
}

TEST_CASE("basic_split isolates punctuation") {
    CHECK(basic_split("Hello, world!", true) == std::vector<std::string>{"Hello", ",", "world", "!"});
    CHECK(basic_split("IL-6", false) == std::vector<std::string>{"il", "-", "6"});
}

TEST_CASE("align_labels propagates word labels to every sub-word") {
    Vocab v = tiny_vocab({"my", "oma", "##to", "##sis", "of"});
    const int32_t B = 1, O = 0;
    Encoding e = encode_words({"omatosis", "of"}, v, 10);
    // omatosis -> oma ##to ##sis
    auto labels = align_labels({B, O}, e);
    CHECK(labels[0] == kIgnoreLabel);
    CHECK(labels[1] == B);
    CHECK(labels[2] == B);
    CHECK(labels[3] == B);
    CHECK(labels[4] == O);
    CHECK(labels[5] == kIgnoreLabel);
    for (size_t i = 6; i < labels.size(); ++i) CHECK(labels[i] == kIgnoreLabel);
    CHECK_THROWS_AS(align_labels({B}, e), TokenizerError);
}

TEST_CASE("encode_words keeps a split word's index on its punctuation") {
    Vocab v = tiny_vocab({"il", "-", "6"}, false);
    Encoding e = encode_words({"IL-6", "il"}, v, 10);
    CHECK(e.word_index == std::vector<int32_t>{-1, 0, 0, 0, 1, -1, -1, -1, -1, -1});
}

TEST_CASE("alignment property: sub-word labels equal their word's label") {
    Rng rng(5);
    std::vector<std::string> alphabet = {"ab", "ba", "abc", "cab", "x", "bca", "c"};
    Vocab v = build_vocab(alphabet, 20, true);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> words;
        std::vector<int32_t> labels;
        const auto n = 1 + uniform_index(rng, 12);
        for (uint64_t i = 0; i < n; ++i) {
            words.push_back(alphabet[uniform_index(rng, alphabet.size())]);
            labels.push_back(static_cast<int32_t>(uniform_index(rng, 5)));
        }
        Encoding e = encode_words(words, v, 64);
        auto aligned = align_labels(labels, e);
        for (size_t i = 0; i < aligned.size(); ++i) {
            if (e.word_index[i] < 0) CHECK(aligned[i] == kIgnoreLabel);
            else CHECK(aligned[i] == labels[static_cast<size_t>(e.word_index[i])]);
        }
        // Words reassemble from their pieces.
        for (size_t w = 0; w < words.size(); ++w) {
            std::vector<int32_t> pieces;
            for (size_t i = 0; i < e.token_ids.size(); ++i)
                if (e.word_index[i] == static_cast<int32_t>(w)) pieces.push_back(e.token_ids[i]);
            CHECK(decode_pieces(pieces, v) == words[w]);
        }
    }
}

TEST_CASE("vocab save/load round trip is bit exact") {
    auto dir = std::filesystem::temp_directory_path() / "distillkit_tok_test";
    std::filesystem::create_directories(dir);
    Vocab v = build_vocab(std::vector<std::string>{"Alpha beta gamma alpha"}, 40, true);
    v.save(dir / "a.txt");
    Vocab w = Vocab::load(dir / "a.txt");
    CHECK(w.tokens() == v.tokens());
    CHECK(w.cased());
    w.save(dir / "b.txt");
    CHECK(read_file(dir / "a.txt") == read_file(dir / "b.txt"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("vocab rejects duplicates and missing specials") {
    CHECK_THROWS_AS(Vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "a"}, true), TokenizerError);
    CHECK_THROWS_AS(Vocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a"}, true), TokenizerError);
}
