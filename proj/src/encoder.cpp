// SPDX-License-Identifier: Apache-2.0

#include "distillkit/encoder.h"

#include <bit>
#include <cmath>
#include <fstream>
#include <set>

#include "distillkit/ops.h"
#include "distillkit/random.h"

namespace distillkit {

namespace {

enum Kind { kWeight = 0, kBias = 1, kGamma = 2 };

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string layer_prefix(int64_t l) { return "layers." + std::to_string(l) + "."; }

/// Resolves parameter names to tape leaves for one forward pass.
struct Ctx {
    ModelState& state;
    Tape& tape;
    const EncoderConfig& cfg;

    Var p(const std::string& name) { return tape.param(state.param(name)); }
    Var lin(const Var& x, const std::string& prefix) { return linear(x, p(prefix + ".weight"), p(prefix + ".bias")); }
    Var norm(const Var& x, const std::string& prefix) {
        return layer_norm(x, p(prefix + ".gamma"), p(prefix + ".beta"), cfg.layer_norm_eps);
    }
};

void check_batch(const EncoderConfig& cfg, const BatchView& b) {
    if (b.batch < 1 || b.seq_len < 1) throw ConfigError("forward: empty batch");
    if (b.seq_len > cfg.max_position) {
        throw ConfigError("forward: sequence length " + std::to_string(b.seq_len) + " exceeds max_position " +
                          std::to_string(cfg.max_position));
    }
    const auto n = static_cast<size_t>(b.batch * b.seq_len);
    if (b.ids.size() != n || b.attention_mask.size() != n) throw ConfigError("forward: batch buffers do not match shape");
    for (int32_t id : b.ids)
        if (id < 0 || id >= cfg.vocab_size) throw ConfigError("forward: token id " + std::to_string(id) + " out of range");
}

Var mlm_head(Ctx& c, const Var& h) {
    Var t = c.norm(gelu(c.lin(h, "mlm.transform")), "mlm.norm");
    return add_rowvec(matmul_nt(t, c.p("embeddings.token")), c.p("mlm.bias"));
}

EncoderOutputs run(ModelState& state, const BatchView& b, const ForwardOptions& opt, Tape& tape) {
    const EncoderConfig& cfg = state.config();
    check_batch(cfg, b);
    Ctx c{state, tape, cfg};
    Rng rng(mix_seed(opt.dropout_seed, 0x64726f70ULL));
    const double p_drop = opt.train ? cfg.dropout : 0.0;
    auto drop = [&](const Var& x) { return dropout(x, p_drop, rng); };
    const bool full = opt.capture == Capture::full;
    const bool bottleneck = cfg.variant == Variant::bottleneck;
    const int64_t B = b.batch, N = b.seq_len, H = cfg.num_heads;

    std::vector<int32_t> positions(static_cast<size_t>(B * N));
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int32_t>(static_cast<int64_t>(i) % N);

    EncoderOutputs out;
    out.batch = B;
    out.seq_len = N;

    Var h = embedding(c.p("embeddings.token"), b.ids);
    if (bottleneck) {
        // Padded positions enter the convolution as zeros, like the sequence edges.
        Tensor keep({B * N, cfg.embed_dim});
        for (int64_t r = 0; r < B * N; ++r)
            if (b.attention_mask[static_cast<size_t>(r)])
                for (int64_t e = 0; e < cfg.embed_dim; ++e) keep.at(r, e) = 1.0;
        h = mul(h, constant(std::move(keep)));
        h = c.lin(shift_concat(h, B, N, static_cast<int>(cfg.embed_kernel)), "embeddings.conv");
    }
    h = h + embedding(c.p("embeddings.position"), positions);
    h = drop(c.norm(h, "embeddings.norm"));
    if (full) out.hidden_states.push_back(h);

    for (int64_t l = 0; l < cfg.num_layers; ++l) {
        const std::string pre = layer_prefix(l);
        if (!bottleneck) {
            Var q = c.lin(h, pre + "attn.q"), k = c.lin(h, pre + "attn.k"), v = c.lin(h, pre + "attn.v");
            Var probs = attention_probs(q, k, B, N, H, b.attention_mask);
            Var a = drop(c.lin(attention_context(probs, v, B, N, H), pre + "attn.o"));
            Var h1 = c.norm(h + a, pre + "attn.norm");
            Var f = drop(c.lin(gelu(c.lin(h1, pre + "ffn.in")), pre + "ffn.out"));
            h = c.norm(h1 + f, pre + "ffn.norm");
            if (full) out.attentions.push_back(probs);
        } else {
            Var z = c.lin(h, pre + "down");
            Var qk = c.lin(h, pre + "attn.down");
            Var q = c.lin(qk, pre + "attn.q"), k = c.lin(qk, pre + "attn.k"), v = c.lin(h, pre + "attn.v");
            Var probs = attention_probs(q, k, B, N, H, b.attention_mask);
            Var a = drop(c.lin(attention_context(probs, v, B, N, H), pre + "attn.o"));
            z = c.norm(z + a, pre + "attn.norm");
            for (int64_t j = 0; j < cfg.num_ffn_blocks; ++j) {
                const std::string f = pre + "ffn." + std::to_string(j) + ".";
                z = c.norm(z + c.lin(gelu(c.lin(z, f + "in")), f + "out"), f + "norm");
            }
            h = c.norm(h + drop(c.lin(z, pre + "up")), pre + "up.norm");
            if (full) out.attentions.push_back(probs);
        }
        if (full) out.hidden_states.push_back(h);
    }
    if (!full) out.hidden_states.push_back(h);
    if (opt.capture != Capture::final_hidden) out.mlm_logits = mlm_head(c, h);
    return out;
}

}  // namespace

void EncoderConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid encoder config: " + m); };
    if (num_layers < 1) fail("num_layers must be >= 1");
    if (hidden_dim < 1 || embed_dim < 1) fail("dimensions must be positive");
    if (num_heads < 1) fail("num_heads must be >= 1");
    if (vocab_size < 6) fail("vocab_size must cover the 5 special tokens and at least one more");
    if (max_position < 1) fail("max_position must be >= 1");
    if (!(ffn_expansion > 0.0) || ffn_dim() < 1) fail("ffn_expansion must give a positive inner size");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
    if (!(init_std > 0.0)) fail("init_std must be positive");
    if (num_token_labels < 0 || num_seq_labels < 0) fail("label counts must be non-negative");
    if (variant == Variant::standard) {
        if (embed_dim != hidden_dim) fail("standard variant requires embed_dim == hidden_dim");
    } else {
        if (bottleneck_dim < 1) fail("bottleneck_dim must be positive");
        if (num_ffn_blocks < 1) fail("num_ffn_blocks must be >= 1");
        if (embed_kernel < 1 || embed_kernel % 2 == 0) fail("embed_kernel must be odd and positive");
    }
    if (inner_dim() % num_heads != 0) {
        fail("attention width " + std::to_string(inner_dim()) + " is not divisible by num_heads " +
             std::to_string(num_heads));
    }
}

int64_t EncoderConfig::ffn_dim() const {
    return static_cast<int64_t>(std::llround(ffn_expansion * static_cast<double>(inner_dim())));
}

std::string to_string(Variant v) { return v == Variant::standard ? "standard" : "bottleneck"; }

nlohmann::json to_json(const EncoderConfig& c) {
    return {{"num_layers", c.num_layers},         {"hidden_dim", c.hidden_dim},
            {"embed_dim", c.embed_dim},           {"num_heads", c.num_heads},
            {"ffn_expansion", c.ffn_expansion},   {"vocab_size", c.vocab_size},
            {"max_position", c.max_position},     {"variant", to_string(c.variant)},
            {"bottleneck_dim", c.bottleneck_dim}, {"num_ffn_blocks", c.num_ffn_blocks},
            {"embed_kernel", c.embed_kernel},     {"num_token_labels", c.num_token_labels},
            {"num_seq_labels", c.num_seq_labels}, {"dropout", c.dropout},
            {"layer_norm_eps", c.layer_norm_eps}, {"init_std", c.init_std}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("encoder config must be a JSON object");
    EncoderConfig c;
    bool embed_given = false;
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "num_layers") c.num_layers = v.get<int64_t>();
            else if (k == "hidden_dim") c.hidden_dim = v.get<int64_t>();
            else if (k == "embed_dim") c.embed_dim = v.get<int64_t>(), embed_given = true;
            else if (k == "num_heads") c.num_heads = v.get<int64_t>();
            else if (k == "ffn_expansion") c.ffn_expansion = v.get<double>();
            else if (k == "vocab_size") c.vocab_size = v.get<int64_t>();
            else if (k == "max_position") c.max_position = v.get<int64_t>();
            else if (k == "variant") {
                const auto s = v.get<std::string>();
                if (s == "standard") c.variant = Variant::standard;
                else if (s == "bottleneck") c.variant = Variant::bottleneck;
                else throw ConfigError("unknown variant '" + s + "'");
            } else if (k == "bottleneck_dim") c.bottleneck_dim = v.get<int64_t>();
            else if (k == "num_ffn_blocks") c.num_ffn_blocks = v.get<int64_t>();
            else if (k == "embed_kernel") c.embed_kernel = v.get<int64_t>();
            else if (k == "num_token_labels") c.num_token_labels = v.get<int64_t>();
            else if (k == "num_seq_labels") c.num_seq_labels = v.get<int64_t>();
            else if (k == "dropout") c.dropout = v.get<double>();
            else if (k == "layer_norm_eps") c.layer_norm_eps = v.get<double>();
            else if (k == "init_std") c.init_std = v.get<double>();
            else throw ConfigError("unknown encoder config key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed encoder config: ") + e.what());
    }
    if (!embed_given && c.variant == Variant::standard) c.embed_dim = c.hidden_dim;
    c.validate();
    return c;
}

int64_t count_params(const EncoderConfig& c) {
    c.validate();
    const int64_t V = c.vocab_size, P = c.max_position, D = c.hidden_dim, E = c.embed_dim;
    const int64_t I = c.inner_dim(), F = c.ffn_dim();
    auto lin = [](int64_t in, int64_t out) { return in * out + out; };
    int64_t n = V * E + P * D + 2 * D;
    int64_t layer = 0;
    if (c.variant == Variant::standard) {
        layer = 4 * lin(D, D) + 2 * D + lin(D, F) + lin(F, D) + 2 * D;
    } else {
        n += lin(c.embed_kernel * E, D);
        layer = 3 * lin(D, I) + 3 * lin(I, I) + 2 * I + c.num_ffn_blocks * (lin(I, F) + lin(F, I) + 2 * I) +
                lin(I, D) + 2 * D;
    }
    n += c.num_layers * layer;
    n += lin(D, E) + 2 * E + V;
    if (c.num_token_labels > 0) n += lin(D, c.num_token_labels);
    if (c.num_seq_labels > 0) n += lin(D, c.num_seq_labels);
    return n;
}

Parameter& ModelState::add(const std::string& name, Shape shape, uint64_t seed, int kind) {
    Tensor t(std::move(shape));
    if (kind == kWeight) {
        Rng rng(mix_seed(seed, fnv1a(name)));
        for (double& v : t.values()) v = truncated_normal(rng, config_.init_std);
    } else if (kind == kGamma) {
        t.fill(1.0);
    }
    auto it = index_.find(name);
    if (it != index_.end()) {
        params_[it->second] = Parameter(name, std::move(t), kind == kWeight);
        return params_[it->second];
    }
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(t), kind == kWeight);
    return params_.back();
}

ModelState::ModelState(const EncoderConfig& config, uint64_t seed) : config_(config) {
    config_.validate();
    const EncoderConfig& c = config_;
    const int64_t V = c.vocab_size, P = c.max_position, D = c.hidden_dim, E = c.embed_dim;
    const int64_t I = c.inner_dim(), F = c.ffn_dim();
    auto lin = [&](const std::string& n, int64_t in, int64_t out) {
        add(n + ".weight", {in, out}, seed, kWeight);
        add(n + ".bias", {out}, seed, kBias);
    };
    auto norm = [&](const std::string& n, int64_t w) {
        add(n + ".gamma", {w}, seed, kGamma);
        add(n + ".beta", {w}, seed, kBias);
    };

    add("embeddings.token", {V, E}, seed, kWeight);
    if (c.variant == Variant::bottleneck) lin("embeddings.conv", c.embed_kernel * E, D);
    add("embeddings.position", {P, D}, seed, kWeight);
    norm("embeddings.norm", D);
    for (int64_t l = 0; l < c.num_layers; ++l) {
        const std::string pre = layer_prefix(l);
        if (c.variant == Variant::standard) {
            for (auto s : {"q", "k", "v", "o"}) lin(pre + "attn." + s, D, D);
            norm(pre + "attn.norm", D);
            lin(pre + "ffn.in", D, F);
            lin(pre + "ffn.out", F, D);
            norm(pre + "ffn.norm", D);
        } else {
            lin(pre + "down", D, I);
            lin(pre + "attn.down", D, I);
            lin(pre + "attn.q", I, I);
            lin(pre + "attn.k", I, I);
            lin(pre + "attn.v", D, I);
            lin(pre + "attn.o", I, I);
            norm(pre + "attn.norm", I);
            for (int64_t j = 0; j < c.num_ffn_blocks; ++j) {
                const std::string f = pre + "ffn." + std::to_string(j) + ".";
                lin(f + "in", I, F);
                lin(f + "out", F, I);
                norm(f + "norm", I);
            }
            lin(pre + "up", I, D);
            norm(pre + "up.norm", D);
        }
    }
    lin("mlm.transform", D, E);
    norm("mlm.norm", E);
    add("mlm.bias", {V}, seed, kBias);
    if (c.num_token_labels > 0) lin("heads.token", D, c.num_token_labels);
    if (c.num_seq_labels > 0) lin("heads.seq", D, c.num_seq_labels);
}

Parameter& ModelState::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model has no parameter '" + name + "'");
    return params_[it->second];
}

const Parameter& ModelState::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model has no parameter '" + name + "'");
    return params_[it->second];
}

std::vector<Parameter*> ModelState::parameter_ptrs() {
    std::vector<Parameter*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
}

int64_t ModelState::num_elements() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

void ModelState::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void ModelState::init_head(Head head, int64_t num_labels, uint64_t seed) {
    if (num_labels < 1) throw ConfigError("task head needs at least one label");
    const std::string n = head == Head::token ? "heads.token" : "heads.seq";
    (head == Head::token ? config_.num_token_labels : config_.num_seq_labels) = num_labels;
    add(n + ".weight", {config_.hidden_dim, num_labels}, seed, kWeight);
    add(n + ".bias", {num_labels}, seed, kBias);
}

void ModelState::assign(const std::string& name, Tensor value) {
    Parameter& p = param(name);
    if (!p.value.same_shape(value)) {
        throw ConfigError("parameter '" + name + "' expects shape " + shape_str(p.value.shape()) + ", got " +
                          shape_str(value.shape()));
    }
    p.value = std::move(value);
}

EncoderOutputs forward(ModelState& state, const BatchView& batch, const ForwardOptions& options, Tape& tape) {
    return run(state, batch, options, tape);
}

EncoderOutputs infer(ModelState& state, const BatchView& batch, Capture capture) {
    Tape tape(false);
    ForwardOptions o;
    o.capture = capture;
    return run(state, batch, o, tape);
}

namespace {

Var head_logits(ModelState& state, const Var& x, Tape& tape, const std::string& name, int64_t have,
                int64_t expected) {
    if (have < 1 || !state.has(name + ".weight")) throw ConfigError("model has no " + name + " head");
    if (expected >= 0 && expected != have) {
        throw ConfigError(name + " head has " + std::to_string(have) + " labels, task needs " +
                          std::to_string(expected));
    }
    return linear(x, tape.param(state.param(name + ".weight")), tape.param(state.param(name + ".bias")));
}

}  // namespace

Var task_head_token(ModelState& state, const EncoderOutputs& out, Tape& tape, int64_t expected_labels) {
    return head_logits(state, out.final_hidden(), tape, "heads.token", state.config().num_token_labels,
                       expected_labels);
}

Var task_head_seq(ModelState& state, const EncoderOutputs& out, Tape& tape, int64_t expected_labels) {
    std::vector<int64_t> cls(static_cast<size_t>(out.batch));
    for (int64_t b = 0; b < out.batch; ++b) cls[static_cast<size_t>(b)] = b * out.seq_len;
    return head_logits(state, select_rows(out.final_hidden(), cls), tape, "heads.seq",
                       state.config().num_seq_labels, expected_labels);
}

std::filesystem::path payload_path(const std::filesystem::path& manifest) {
    return std::filesystem::path(manifest.string() + ".bin");
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path, const nlohmann::json& extra) {
    static_assert(std::endian::native == std::endian::little, "checkpoint payload is written in host order");
    nlohmann::json entries = nlohmann::json::array();
    std::ofstream bin(payload_path(path), std::ios::binary);
    if (!bin) throw ConfigError("cannot write " + payload_path(path).string());
    uint64_t offset = 0;
    for (const auto& p : state.parameters()) {
        const auto bytes = static_cast<uint64_t>(p.value.numel()) * sizeof(double);
        entries.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}, {"bytes", bytes}});
        bin.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(bytes));
        offset += bytes;
    }
    if (!bin) throw ConfigError("failed writing " + payload_path(path).string());
    nlohmann::json manifest = {{"format", "distillkit-checkpoint"},
                               {"version", 1},
                               {"dtype", "f64le"},
                               {"config", to_json(state.config())},
                               {"payload", payload_path(path).filename().string()},
                               {"tensors", entries},
                               {"extra", extra}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << manifest.dump(1) << '\n';
}

ModelState load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read checkpoint " + path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    if (manifest.value("format", "") != "distillkit-checkpoint" || manifest.value("dtype", "") != "f64le")
        throw ConfigError(path.string() + " is not a distillkit checkpoint");
    ModelState state(encoder_config_from_json(manifest.at("config")), 0);
    std::ifstream bin(payload_path(path), std::ios::binary);
    if (!bin) throw ConfigError("cannot read checkpoint payload " + payload_path(path).string());
    std::set<std::string> seen;
    for (const auto& e : manifest.at("tensors")) {
        const auto name = e.at("name").get<std::string>();
        Tensor t(e.at("shape").get<Shape>());
        bin.seekg(static_cast<std::streamoff>(e.at("offset").get<uint64_t>()));
        bin.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!bin) throw ConfigError("checkpoint payload truncated at tensor '" + name + "'");
        state.assign(name, std::move(t));
        seen.insert(name);
    }
    if (seen.size() != state.parameters().size()) throw ConfigError("checkpoint is missing parameters");
    if (extra) *extra = manifest.value("extra", nlohmann::json::object());
    return state;
}

}  // namespace distillkit
