// SPDX-License-Identifier: Apache-2.0

#include "cli.h"

#include <openssl/evp.h>

#include <Eigen/Core>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "distillkit/bench.h"
#include "distillkit/eval.h"
#include "distillkit/train.h"

namespace distillkit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

bool is_run_command(const std::string& cmd) { return cmd == "pretrain" || cmd == "distill" || cmd == "finetune"; }

// Keys each subcommand owns. Run commands also take every RunConfig key at
// the top level; those are checked by the run config parser.
json command_defaults(const std::string& cmd) {
    if (cmd == "build-vocab") return {{"input", ""}, {"size", 1000}, {"cased", false}, {"output_dir", "out"}};
    if (cmd == "synth") return {{"spec", json::object()}, {"seed", 0}, {"output_dir", "out"}};
    if (cmd == "pretrain")
        return {{"model", json::object()}, {"init", ""}, {"vocab", ""}, {"train", ""}, {"heldout", ""}, {"output_dir", "out"}};
    if (cmd == "distill")
        return {{"student", json::object()}, {"vocab", ""}, {"train", ""}, {"heldout", ""}, {"output_dir", "out"}};
    if (cmd == "finetune")
        return {{"init", ""}, {"vocab", ""}, {"train", ""}, {"labels", json::array()}, {"output_dir", "out"}};
    if (cmd == "eval")
        return {{"task", "ner"},       {"checkpoint", ""},     {"vocab", ""},     {"data", ""},
                {"predictions", ""},   {"decode", "first"},    {"positive_class", ""},
                {"max_len", 128},      {"batch_size", 32},     {"seed", kEvalMaskSeed}, {"output_dir", "out"}};
    if (cmd == "bench")
        return {{"configs", {"tiny", "mobile", "distilled", "base"}},
                {"batches", {1, 8}},
                {"seq_lens", {32, 128, 512}},
                {"warmups", 5},
                {"repetitions", 30},
                {"seed", 0},
                {"memory_budget_bytes", 0},
                {"vocab_size", 30522},
                {"output_dir", "out"}};
    if (cmd == "inspect") return {{"checkpoint", ""}};
    throw UsageError("unknown subcommand '" + cmd + "'");
}

bool same_kind(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) return true;
    return a.type() == b.type();
}

void deep_merge(json& base, const json& over) {
    for (const auto& [k, v] : over.items()) {
        if (base.contains(k) && base[k].is_object() && v.is_object()) deep_merge(base[k], v);
        else base[k] = v;
    }
}

json read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("config file not found: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("cannot parse config " + path + ": " + e.what());
    }
    if (!doc.is_object()) throw UsageError("config " + path + " must hold a JSON object");
    return doc;
}

struct Resolved {
    std::string cmd;
    json keys;  // command-owned keys after defaults
    RunConfig run;
    json full;  // everything, as written back to config.json
};

Mode mode_for(const std::string& cmd, const json& run_doc) {
    if (cmd == "distill") return Mode::distill;
    if (cmd == "pretrain") return Mode::pretrain_mlm;
    const Mode m = mode_from_string(run_doc.value("mode", std::string("finetune_token")));
    if (m != Mode::finetune_token && m != Mode::finetune_seq)
        throw UsageError("finetune mode must be finetune_token or finetune_seq");
    return m;
}

Resolved resolve(const std::string& cmd, const json& doc) {
    Resolved r;
    r.cmd = cmd;
    r.keys = command_defaults(cmd);
    json run_doc = json::object();
    for (const auto& [k, v] : doc.items()) {
        if (r.keys.contains(k)) {
            if (!same_kind(r.keys[k], v))
                throw UsageError("key '" + k + "' expects a " + std::string(r.keys[k].type_name()) + ", got " +
                                 v.type_name());
            if (v.is_object()) deep_merge(r.keys[k], v);
            else r.keys[k] = v;
        } else if (is_run_command(cmd)) {
            run_doc[k] = v;
        } else {
            throw UsageError("unknown key '" + k + "' for " + cmd);
        }
    }
    r.full = r.keys;
    if (is_run_command(cmd)) {
        const Mode mode = mode_for(cmd, run_doc);
        if (run_doc.contains("mode") && mode_from_string(run_doc["mode"].get<std::string>()) != mode)
            throw UsageError(cmd + " runs in mode " + to_string(mode));
        run_doc["mode"] = to_string(mode);
        r.run = run_config_from_json(run_doc);
        r.run.validate(cmd == "distill");
        deep_merge(r.full, to_json(r.run));
    }
    return r;
}

std::string require(const json& keys, const std::string& key, const std::string& cmd) {
    const auto v = keys.at(key).get<std::string>();
    if (v.empty()) throw UsageError(cmd + " needs '" + key + "' (set it in the config or with --set " + key + "=...)");
    return v;
}

int threads_from_env() {
    const char* env = std::getenv("DISTILLKIT_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end || n < 1) throw UsageError(std::string("DISTILLKIT_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<int>(n);
}

// Inputs hashed into the manifest, by the key that named them.
using Inputs = std::map<std::string, std::string>;

void note_input(Inputs& inputs, const std::string& path) {
    if (path.empty()) return;
    if (!fs::is_regular_file(path)) throw DataError("input file not found: " + path);
    inputs[path] = sha256_file(path);
}

void note_checkpoint(Inputs& inputs, const std::string& path) {
    note_input(inputs, path);
    note_input(inputs, payload_path(path).string());
}

Vocab load_vocab(const std::string& path, Inputs& inputs) {
    Vocab v = Vocab::load(path);
    note_input(inputs, path);
    return v;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    out << std::setw(2) << j << '\n';
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

void save_run_outputs(const fs::path& dir, const ModelState& model, const TrainReport& report, const Vocab& vocab,
                      const json& extra) {
    save_checkpoint(model, dir / "model.json", extra);
    vocab.save(dir / "vocab.txt");
    report.write_csv(dir / "train.csv");
    write_json(dir / "report.json", report.to_json());
}

void print_last(std::ostream& out, const TrainReport& report) {
    if (report.records.empty()) return;
    const auto& r = report.records.back();
    out << "step " << r.step << " loss " << r.loss << " accuracy " << r.accuracy << '\n';
}

MlmCorpus load_mlm(const json& keys, const std::string& cmd, const Vocab& vocab, int32_t max_len, Inputs& inputs) {
    const std::string train = require(keys, "train", cmd);
    const std::string heldout = keys.at("heldout").get<std::string>();
    note_input(inputs, train);
    note_input(inputs, heldout);
    return make_mlm_corpus(read_lines(train), heldout.empty() ? std::vector<std::string>{} : read_lines(heldout),
                           vocab, max_len);
}

void cmd_build_vocab(Resolved& r, const fs::path& dir, Inputs& inputs, std::ostream& out) {
    const std::string input = require(r.keys, "input", r.cmd);
    std::ifstream in(input);
    if (!in) throw DataError("cannot read corpus " + input);
    note_input(inputs, input);
    const Vocab v = build_vocab(in, r.keys["size"].get<int32_t>(), r.keys["cased"].get<bool>());
    v.save(dir / "vocab.txt");
    out << "vocab: " << v.size() << " tokens -> " << (dir / "vocab.txt").string() << '\n';
}

void cmd_synth(Resolved& r, const fs::path& dir, std::ostream& out) {
    const SynthSpec spec = synth_spec_from_json(r.keys["spec"]);
    r.full["spec"] = to_json(spec);
    const SynthCorpus c = synth_corpus(spec, r.keys["seed"].get<uint64_t>());
    write_conll(dir / "train.conll", c.train);
    write_conll(dir / "heldout.conll", c.heldout);
    write_lines(dir / "train.txt", sentence_texts(c.train));
    write_lines(dir / "heldout.txt", sentence_texts(c.heldout));
    write_lines(dir / "labels.txt", c.labels);
    out << "synth: " << c.train.size() << " train and " << c.heldout.size() << " held-out sentences, "
        << c.labels.size() << " labels\n";
}

void cmd_pretrain(Resolved& r, const fs::path& dir, Inputs& inputs, std::ostream& out) {
    const Vocab vocab = load_vocab(require(r.keys, "vocab", r.cmd), inputs);
    const MlmCorpus corpus = load_mlm(r.keys, r.cmd, vocab, r.run.max_len, inputs);
    const std::string init = r.keys["init"].get<std::string>();
    ModelState start;
    if (!init.empty()) {
        start = load_checkpoint(init);
        note_checkpoint(inputs, init);
        if (start.config().vocab_size != vocab.size())
            throw ConfigError("checkpoint " + init + " expects " + std::to_string(start.config().vocab_size) +
                              " tokens but the vocabulary has " + std::to_string(vocab.size()));
    } else {
        json model = r.keys["model"];
        if (model.contains("vocab_size") && model["vocab_size"] != vocab.size())
            throw ConfigError("model.vocab_size disagrees with the vocabulary (" + std::to_string(vocab.size()) + ")");
        model["vocab_size"] = vocab.size();
        const EncoderConfig cfg = encoder_config_from_json(model);
        r.full["model"] = to_json(cfg);
        start = ModelState(cfg, r.run.seed);
    }
    auto [model, report] = run_mlm_pretrain(start, corpus, r.run);
    save_run_outputs(dir, model, report, vocab, {{"mode", to_string(r.run.mode)}});
    print_last(out, report);
}

void cmd_distill(Resolved& r, const fs::path& dir, Inputs& inputs, std::ostream& out) {
    const Vocab vocab = load_vocab(require(r.keys, "vocab", r.cmd), inputs);
    ModelState teacher = load_checkpoint(r.run.teacher);
    note_checkpoint(inputs, r.run.teacher);
    if (teacher.config().vocab_size != vocab.size())
        throw ConfigError("teacher expects " + std::to_string(teacher.config().vocab_size) +
                          " tokens but the vocabulary has " + std::to_string(vocab.size()));
    // Unset student fields follow the teacher, with half its depth.
    json student = to_json(teacher.config());
    student["num_layers"] = std::max<int64_t>(1, teacher.config().num_layers / 2);
    student["num_token_labels"] = 0;
    student["num_seq_labels"] = 0;
    deep_merge(student, r.keys["student"]);
    const EncoderConfig scfg = encoder_config_from_json(student);
    r.full["student"] = to_json(scfg);
    const MlmCorpus corpus = load_mlm(r.keys, r.cmd, vocab, r.run.max_len, inputs);
    auto [model, report] = run_distillation(teacher, scfg, corpus, r.run);
    save_run_outputs(dir, model, report, vocab, {{"mode", "distill"}, {"suite", to_string(r.run.plan.suite)}});
    print_last(out, report);
}

void cmd_finetune(Resolved& r, const fs::path& dir, Inputs& inputs, std::ostream& out) {
    const Vocab vocab = load_vocab(require(r.keys, "vocab", r.cmd), inputs);
    const std::string init = require(r.keys, "init", r.cmd);
    const ModelState start = load_checkpoint(init);
    note_checkpoint(inputs, init);
    const std::string train = require(r.keys, "train", r.cmd);
    note_input(inputs, train);
    FinetuneSet data;
    data.vocab = vocab;
    data.examples = r.run.mode == Mode::finetune_token ? load_conll(train) : load_pairs(train);
    data.labels = r.keys["labels"].get<std::vector<std::string>>();
    if (data.labels.empty()) data.labels = label_inventory(data.examples);
    r.full["labels"] = data.labels;
    auto [model, report] = run_finetune(start, data, r.run);
    save_run_outputs(dir, model, report, vocab, {{"mode", to_string(r.run.mode)}, {"labels", data.labels}});
    print_last(out, report);
}

std::vector<std::string> split_candidates(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, '|'))
        if (!item.empty()) out.push_back(item);
    return out;
}

void cmd_eval(Resolved& r, const fs::path& dir, Inputs& inputs, std::ostream& out) {
    const std::string task = r.keys["task"].get<std::string>();
    const std::string data = require(r.keys, "data", r.cmd);
    note_input(inputs, data);
    const auto max_len = r.keys["max_len"].get<int32_t>();
    const auto batch = r.keys["batch_size"].get<int64_t>();

    json result;
    if (task == "qa") {
        const auto qa = load_qa(data);
        const std::string pred_path = require(r.keys, "predictions", r.cmd);
        note_input(inputs, pred_path);
        const auto lines = read_lines(pred_path);
        if (lines.size() != qa.size())
            throw DataError(pred_path + " has " + std::to_string(lines.size()) + " lines for " +
                            std::to_string(qa.size()) + " questions");
        std::vector<std::vector<std::string>> gold, ranked;
        for (size_t i = 0; i < qa.size(); ++i) {
            gold.push_back(qa[i].answers);
            ranked.push_back(split_candidates(lines[i]));
        }
        const MetricReport m = ranked_qa(gold, ranked);
        result = m.to_json();
        out << m.table();
    } else if (task == "ner" || task == "classification" || task == "mlm") {
        const std::string ckpt = require(r.keys, "checkpoint", r.cmd);
        json extra;
        ModelState model = load_checkpoint(ckpt, &extra);
        note_checkpoint(inputs, ckpt);
        std::string vocab_path = r.keys["vocab"].get<std::string>();
        if (vocab_path.empty()) vocab_path = (fs::path(ckpt).parent_path() / "vocab.txt").string();
        r.full["vocab"] = vocab_path;
        const Vocab vocab = load_vocab(vocab_path, inputs);
        if (task == "mlm") {
            const MlmEval e = evaluate_mlm(model, pack_blocks(read_lines(data), vocab, max_len), vocab, MaskingConfig{},
                                           r.keys["seed"].get<uint64_t>(), batch);
            result = {{"kind", "mlm"}, {"loss", e.loss}, {"accuracy", e.accuracy}, {"masked", e.masked}};
            out << "mlm loss " << e.loss << " accuracy " << e.accuracy << " over " << e.masked << " masked tokens\n";
        } else {
            if (!extra.contains("labels"))
                throw ConfigError("checkpoint " + ckpt + " carries no label inventory; fine-tune it first");
            const auto labels = extra["labels"].get<std::vector<std::string>>();
            MetricReport m;
            if (task == "ner") {
                const auto sents = load_conll(data);
                const auto pred = predict_token_labels(model, sents, vocab, labels, max_len,
                                                       decode_from_string(r.keys["decode"].get<std::string>()), batch);
                std::vector<std::vector<std::string>> gold;
                for (const auto& s : sents) gold.push_back(s.word_labels);
                m = entity_f1(gold, pred);
            } else {
                const auto recs = load_pairs(data);
                const auto pred = predict_seq_labels(model, recs, vocab, labels, max_len, batch);
                std::vector<std::string> gold;
                for (const auto& x : recs) gold.push_back(x.label);
                const std::string pos = r.keys["positive_class"].get<std::string>();
                m = macro_prf(gold, pred, labels, pos.empty() ? std::nullopt : std::optional<std::string>(pos));
            }
            result = m.to_json();
            out << m.table();
        }
    } else {
        throw UsageError("eval task must be ner, classification, mlm or qa, got '" + task + "'");
    }
    write_json(dir / "metrics.json", result);
}

void cmd_bench(Resolved& r, const fs::path& dir, std::ostream& out) {
    const auto presets = reference_bench_configs(r.keys["vocab_size"].get<int64_t>());
    std::vector<BenchConfig> configs;
    for (const auto& c : r.keys["configs"]) {
        if (c.is_string()) {
            const auto name = c.get<std::string>();
            auto it = std::find_if(presets.begin(), presets.end(), [&](const BenchConfig& b) { return b.name == name; });
            if (it == presets.end()) throw ConfigError("unknown bench preset '" + name + "'");
            configs.push_back(*it);
        } else {
            if (!c.is_object() || !c.contains("name") || !c.contains("config"))
                throw ConfigError("bench configs are preset names or {\"name\", \"config\"} objects");
            configs.push_back({c["name"].get<std::string>(), encoder_config_from_json(c["config"])});
        }
    }
    BenchGrid grid{r.keys["batches"].get<std::vector<int64_t>>(), r.keys["seq_lens"].get<std::vector<int64_t>>()};
    BenchOptions opts;
    opts.warmups = r.keys["warmups"].get<int64_t>();
    opts.repetitions = r.keys["repetitions"].get<int64_t>();
    opts.seed = r.keys["seed"].get<uint64_t>();
    opts.memory_budget_bytes = r.keys["memory_budget_bytes"].get<int64_t>();
    const auto rows = run_bench(configs, grid, opts);
    const std::string csv = bench_csv(rows);
    std::ofstream(dir / "bench.csv") << csv;
    write_json(dir / "bench.json", bench_json(rows));
    out << csv;
}

void cmd_inspect(const Resolved& r, std::ostream& out) {
    const std::string path = require(r.keys, "checkpoint", r.cmd);
    json extra;
    const ModelState m = load_checkpoint(path, &extra);
    out << std::setw(2) << to_json(m.config()) << '\n';
    out << "params: " << count_params(m.config()) << '\n';
    out << "stored elements: " << m.num_elements() << '\n';
    if (!extra.empty()) out << "extra: " << extra.dump() << '\n';
}

uint64_t seed_of(const Resolved& r) {
    if (is_run_command(r.cmd)) return r.run.seed;
    if (r.keys.contains("seed")) return r.keys["seed"].get<uint64_t>();
    return 0;
}

void write_manifest(const Resolved& r, const fs::path& dir, const Inputs& inputs, const std::vector<std::string>& args,
                    int threads) {
    write_json(dir / "config.json", r.full);
    json artifacts = json::object();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) artifacts[fs::relative(f, dir).generic_string()] = sha256_file(f.string());
    json manifest = {{"tool", "distillkit"},
                     {"version", kVersion},
                     {"subcommand", r.cmd},
                     {"args", args},
                     {"config", r.full},
                     {"seed", seed_of(r)},
                     {"threads", threads},
                     {"inputs", inputs},
                     {"artifacts", artifacts},
                     {"rerun", "distillkit " + r.cmd + " --config " + (dir / "config.json").string()}};
    write_json(dir / "manifest.json", manifest);
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json* node = &doc;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw UsageError("override key '" + path + "' has an empty segment");
        parts.push_back(part);
    }
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        json& next = (*node)[parts[i]];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw UsageError("override '" + path + "': '" + parts[i] + "' is not an object");
        node = &next;
    }
    (*node)[parts.back()] = value;
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path + " for hashing");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return hex.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Knowledge distillation for BERT-style encoders", "distillkit"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1, 1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string checkpoint;
    const std::vector<std::pair<std::string, std::string>> subs = {
        {"build-vocab", "Build a WordPiece vocabulary from a text corpus"},
        {"synth", "Generate a seeded synthetic labelled corpus"},
        {"distill", "Distil a student from a teacher checkpoint"},
        {"pretrain", "Masked-language-model pretraining, fresh or continued"},
        {"finetune", "Fine-tune a checkpoint on token or sequence labels"},
        {"eval", "Score a model or ranked predictions"},
        {"bench", "Time inference over a batch x length grid"},
        {"inspect", "Print a checkpoint's config and parameter count"}};
    for (const auto& [name, help] : subs) {
        auto* sub = app.add_subcommand(name, help);
        if (name == "inspect") {
            sub->add_option("--checkpoint", checkpoint, "Checkpoint manifest")->required();
        } else {
            sub->add_option("--config", config_path, "JSON config file");
            sub->add_option("--set", overrides, "Dotted key=value override, repeatable")->take_all();
        }
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsageError;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();

    Resolved r;
    int threads = 1;
    try {
        threads = threads_from_env();
        json doc = config_path.empty() ? json::object() : read_config(config_path);
        for (const auto& o : overrides) apply_override(doc, o);
        if (cmd == "inspect") doc["checkpoint"] = checkpoint;
        r = resolve(cmd, doc);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    }
    // Kernels run on one thread in this build; the cap is recorded for the manifest.
    Eigen::setNbThreads(threads);

    try {
        if (cmd == "inspect") {
            cmd_inspect(r, out);
            return kOk;
        }
        const fs::path dir = r.keys["output_dir"].get<std::string>();
        fs::create_directories(dir);
        Inputs inputs;
        if (cmd == "build-vocab") cmd_build_vocab(r, dir, inputs, out);
        else if (cmd == "synth") cmd_synth(r, dir, out);
        else if (cmd == "pretrain") cmd_pretrain(r, dir, inputs, out);
        else if (cmd == "distill") cmd_distill(r, dir, inputs, out);
        else if (cmd == "finetune") cmd_finetune(r, dir, inputs, out);
        else if (cmd == "eval") cmd_eval(r, dir, inputs, out);
        else if (cmd == "bench") cmd_bench(r, dir, out);
        write_manifest(r, dir, inputs, args, threads);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kOk;
}

}  // namespace distillkit::cli
