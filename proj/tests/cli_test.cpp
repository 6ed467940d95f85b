// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.h"
#include "doctest.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace distillkit::cli;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result call(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

struct Workdir {
    fs::path root = fs::temp_directory_path() / "distillkit_cli_test";
    Workdir() {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workdir() { fs::remove_all(root); }
    std::string operator()(const std::string& rel) const { return (root / rel).string(); }
};

json read_json(const std::string& path) {
    std::ifstream in(path);
    return json::parse(in);
}

}  // namespace

TEST_CASE("override grammar") {
    json doc = json::object();
    apply_override(doc, "plan.suite=tiny_layerwise");
    apply_override(doc, "steps=20");
    apply_override(doc, "plan.alphas=[1,2,3]");
    apply_override(doc, "teacher=a=b.json");
    CHECK(doc["plan"]["suite"] == "tiny_layerwise");
    CHECK(doc["steps"] == 20);
    CHECK(doc["plan"]["alphas"] == json({1, 2, 3}));
    CHECK(doc["teacher"] == "a=b.json");
    CHECK_THROWS(apply_override(doc, "novalue"));
    CHECK_THROWS(apply_override(doc, "a..b=1"));
    CHECK_THROWS(apply_override(doc, "steps.x=1"));  // steps is a number
}

TEST_CASE("sha256 of a known string") {
    Workdir w;
    std::ofstream(w("abc.txt"), std::ios::binary) << "abc";
    CHECK(sha256_file(w("abc.txt")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("usage errors exit 1, runtime failures exit 2") {
    Workdir w;
    CHECK(call({}).code == kUsageError);
    CHECK(call({"--help"}).code == kOk);
    CHECK(call({"frobnicate"}).code == kUsageError);
    auto missing = call({"distill", "--config", w("nope.json")});
    CHECK(missing.code == kUsageError);
    CHECK(missing.err.find(w("nope.json")) != std::string::npos);
    CHECK(call({"bench", "--set", "bogus=1"}).code == kUsageError);
    CHECK(call({"distill", "--set", "stepz=1"}).code == kUsageError);
    CHECK(call({"distill", "--set", "plan.suite=nonsense", "--set", "teacher=t.json"}).code == kUsageError);
    CHECK(call({"distill"}).code == kUsageError);  // no teacher path
    CHECK(call({"pretrain", "--set", "mode=distill"}).code == kUsageError);
    CHECK(call({"build-vocab", "--set", "size=\"big\""}).code == kUsageError);
    CHECK(call({"inspect"}).code == kUsageError);
    setenv("DISTILLKIT_THREADS", "zero", 1);
    CHECK(call({"synth", "--set", "output_dir=" + w("s")}).code == kUsageError);
    unsetenv("DISTILLKIT_THREADS");

    auto runtime = call({"build-vocab", "--set", "input=" + w("absent.txt"), "--set", "output_dir=" + w("v")});
    CHECK(runtime.code == kRuntimeError);
    CHECK(runtime.err.find("absent.txt") != std::string::npos);
    CHECK(call({"inspect", "--checkpoint", w("absent.json")}).code == kRuntimeError);
}

TEST_CASE("pipeline writes manifests and reruns bit-identically") {
    Workdir w;
    REQUIRE(call({"synth", "--set", "spec.num_sentences=200", "--set", "seed=4", "--set", "output_dir=" + w("syn")}).code == kOk);
    REQUIRE(call({"build-vocab", "--set", "input=" + w("syn/train.txt"), "--set", "size=120", "--set",
                  "output_dir=" + w("voc")}).code == kOk);
    std::ofstream(w("teacher.json")) << json{{"vocab", w("voc/vocab.txt")},
                                             {"train", w("syn/train.txt")},
                                             {"heldout", w("syn/heldout.txt")},
                                             {"model", {{"num_layers", 2}, {"hidden_dim", 16}, {"embed_dim", 16},
                                                        {"num_heads", 2}, {"max_position", 32}}},
                                             {"steps", 10},
                                             {"eval_every", 5},
                                             {"max_len", 24},
                                             {"seed", 11},
                                             {"output_dir", w("t")}};
    auto t = call({"pretrain", "--config", w("teacher.json")});
    REQUIRE_MESSAGE(t.code == kOk, t.err);
    auto d = call({"distill", "--set", "teacher=" + w("t/model.json"), "--set", "vocab=" + w("t/vocab.txt"), "--set",
                   "train=" + w("syn/train.txt"), "--set", "student.num_layers=1", "--set", "steps=6", "--set",
                   "eval_every=3", "--set", "max_len=24", "--set", "plan.suite=tiny_layerwise", "--set",
                   "output_dir=" + w("s")});
    REQUIRE_MESSAGE(d.code == kOk, d.err);

    const json manifest = read_json(w("s/manifest.json"));
    CHECK(manifest["subcommand"] == "distill");
    CHECK(manifest["config"]["plan"]["suite"] == "tiny_layerwise");
    CHECK(manifest["config"]["student"]["num_layers"] == 1);
    CHECK(manifest["artifacts"].contains("model.json.bin"));
    CHECK(manifest["artifacts"]["model.json.bin"] == sha256_file(w("s/model.json.bin")));
    CHECK(manifest["inputs"].contains(w("t/model.json.bin")));

    // The written config reproduces the run.
    auto again = call({"distill", "--config", w("s/config.json"), "--set", "output_dir=" + w("s2")});
    REQUIRE_MESSAGE(again.code == kOk, again.err);
    CHECK(sha256_file(w("s2/model.json.bin")) == sha256_file(w("s/model.json.bin")));
    json c1 = read_json(w("s/config.json")), c2 = read_json(w("s2/config.json"));
    c1.erase("output_dir");
    c2.erase("output_dir");
    CHECK(c1 == c2);

    auto f = call({"finetune", "--set", "init=" + w("s/model.json"), "--set", "vocab=" + w("s/vocab.txt"), "--set",
                   "train=" + w("syn/train.conll"), "--set", "epochs=1", "--set", "max_len=24", "--set",
                   "output_dir=" + w("f")});
    REQUIRE_MESSAGE(f.code == kOk, f.err);
    auto e = call({"eval", "--set", "checkpoint=" + w("f/model.json"), "--set", "data=" + w("syn/heldout.conll"),
                   "--set", "max_len=24", "--set", "output_dir=" + w("e")});
    REQUIRE_MESSAGE(e.code == kOk, e.err);
    CHECK(read_json(w("e/metrics.json"))["kind"] == "entity");
    auto mlm = call({"eval", "--set", "task=mlm", "--set", "checkpoint=" + w("t/model.json"), "--set",
                     "data=" + w("syn/heldout.txt"), "--set", "max_len=24", "--set", "output_dir=" + w("m")});
    REQUIRE_MESSAGE(mlm.code == kOk, mlm.err);
    CHECK(read_json(w("m/metrics.json"))["masked"].get<int64_t>() > 0);

    auto i = call({"inspect", "--checkpoint", w("s/model.json")});
    CHECK(i.code == kOk);
    CHECK(i.out.find("params: ") != std::string::npos);
}

TEST_CASE("qa scoring from ranked predictions") {
    Workdir w;
    std::ofstream(w("qa.tsv")) << "q1\tc1\taspirin\nq2\tc2\tinsulin|insulin glargine\n";
    std::ofstream(w("pred.txt")) << "aspirin|ibuprofen\nmetformin|insulin\n";
    auto r = call({"eval", "--set", "task=qa", "--set", "data=" + w("qa.tsv"), "--set", "predictions=" + w("pred.txt"),
                   "--set", "output_dir=" + w("o")});
    REQUIRE_MESSAGE(r.code == kOk, r.err);
    const json m = read_json(w("o/metrics.json"));
    CHECK(m["strict_acc"] == doctest::Approx(0.5));
    CHECK(m["lenient_acc"] == doctest::Approx(1.0));
    CHECK(m["mrr"] == doctest::Approx(0.75));
}

TEST_CASE("bench subcommand writes csv and json") {
    Workdir w;
    std::ofstream(w("b.json")) << json{{"configs", {{{"name", "mini"},
                                                     {"config", {{"num_layers", 1}, {"hidden_dim", 8}, {"embed_dim", 8},
                                                                 {"num_heads", 2}, {"vocab_size", 50}, {"max_position", 16}}}}}},
                                       {"batches", {1}},
                                       {"seq_lens", {8}},
                                       {"output_dir", w("b")}};
    auto r = call({"bench", "--config", w("b.json")});
    REQUIRE_MESSAGE(r.code == kOk, r.err);
    CHECK(r.out.rfind("config,batch,seq_len,median_ms,p90_ms,peak_bytes,params", 0) == 0);
    CHECK(fs::exists(w("b/bench.csv")));
    CHECK(read_json(w("b/bench.json")).size() == 1);
    CHECK(call({"bench", "--set", "configs=[\"huge\"]", "--set", "output_dir=" + w("b2")}).code == kRuntimeError);
}
