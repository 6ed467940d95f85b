// SPDX-License-Identifier: Apache-2.0

#include "distillkit/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "distillkit/random.h"

namespace distillkit {

namespace {

constexpr int64_t kWord = sizeof(double);

int64_t available_memory_bytes() {
    std::ifstream f("/proc/meminfo");
    std::string key;
    int64_t kb = 0;
    std::string unit;
    while (f >> key >> kb >> unit)
        if (key == "MemAvailable:") return kb * 1024;
    return int64_t{4} << 30;
}

TokenMatrix random_batch(const EncoderConfig& c, int64_t batch, int64_t seq_len, uint64_t seed) {
    Rng rng(seed);
    TokenMatrix m;
    m.batch = batch;
    m.seq_len = seq_len;
    m.ids.resize(static_cast<size_t>(batch * seq_len));
    // Ids 0..4 are the special tokens of every vocabulary this library builds.
    for (auto& id : m.ids) id = 5 + static_cast<int32_t>(uniform_index(rng, static_cast<uint64_t>(c.vocab_size - 5)));
    m.attention_mask.assign(m.ids.size(), 1);
    return m;
}

}  // namespace

std::vector<BenchConfig> reference_bench_configs(int64_t vocab_size) {
    EncoderConfig base;
    base.vocab_size = vocab_size;

    EncoderConfig distilled = base;
    distilled.num_layers = 6;

    EncoderConfig tiny = base;
    tiny.num_layers = 4;
    tiny.hidden_dim = tiny.embed_dim = 312;
    tiny.ffn_expansion = 1200.0 / 312.0;

    EncoderConfig mobile = base;
    mobile.variant = Variant::bottleneck;
    mobile.num_layers = 24;
    mobile.hidden_dim = 512;
    mobile.embed_dim = 128;
    mobile.bottleneck_dim = 128;
    mobile.num_heads = 4;
    mobile.num_ffn_blocks = 4;

    return {{"tiny", tiny}, {"mobile", mobile}, {"distilled", distilled}, {"base", base}};
}

int64_t estimate_peak_bytes(const EncoderConfig& c, int64_t batch, int64_t seq_len) {
    const int64_t T = batch * seq_len, D = c.hidden_dim, I = c.inner_dim(), F = c.ffn_dim();
    const int64_t probs = batch * c.num_heads * seq_len * seq_len;
    // Embedding stage: token rows, conv window (bottleneck), position rows, output.
    const int64_t window = c.variant == Variant::bottleneck ? c.embed_kernel * c.embed_dim : 0;
    const int64_t embed = T * (c.embed_dim + window + 2 * D);
    // One block: residual input, q/k/v, scores and weights, context, output
    // projection, FFN inner activation and two normalised results.
    int64_t block = T * D + 3 * T * I + 2 * probs + T * I + T * I + T * F + 2 * T * std::max(D, I);
    if (c.variant == Variant::bottleneck) block += 2 * T * I;  // down-projected stream and shared q/k input
    return kWord * (count_params(c) + std::max(embed, block));
}

std::pair<double, double> median_p90(std::vector<double> s) {
    if (s.empty()) return {0.0, 0.0};
    std::sort(s.begin(), s.end());
    const size_t n = s.size();
    const double median = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
    const auto rank = static_cast<size_t>(std::ceil(0.9 * static_cast<double>(n)));
    return {median, s[std::max<size_t>(rank, 1) - 1]};
}

std::vector<BenchResult> run_bench(const std::vector<BenchConfig>& configs, const BenchGrid& grid,
                                   const BenchOptions& options) {
    if (configs.empty() || grid.batches.empty() || grid.seq_lens.empty())
        throw ConfigError("bench needs at least one config, batch size and sequence length");
    if (options.repetitions < 30) throw ConfigError("bench needs at least 30 timed repetitions");
    if (options.warmups < 5) throw ConfigError("bench needs at least 5 warmup passes");
    const int64_t budget = options.memory_budget_bytes > 0 ? options.memory_budget_bytes : available_memory_bytes();

    std::vector<BenchResult> out;
    for (const auto& bc : configs) {
        bc.config.validate();
        std::unique_ptr<ModelState> state;
        for (int64_t batch : grid.batches) {
            for (int64_t seq_len : grid.seq_lens) {
                BenchResult r;
                r.config = bc.name;
                r.batch = batch;
                r.seq_len = seq_len;
                r.params = count_params(bc.config);
                r.peak_bytes = estimate_peak_bytes(bc.config, batch, seq_len);
                if (batch < 1 || seq_len < 1) throw ConfigError("bench grid values must be positive");
                if (seq_len > bc.config.max_position) {
                    r.skipped = true;
                    r.reason = "seq_len exceeds max_position";
                } else if (r.peak_bytes > budget) {
                    r.skipped = true;
                    r.reason = "estimated " + std::to_string(r.peak_bytes) + " bytes exceeds budget of " +
                               std::to_string(budget);
                }
                if (r.skipped) {
                    out.push_back(r);
                    continue;
                }
                if (!state) state = std::make_unique<ModelState>(bc.config, options.seed);
                const TokenMatrix m = random_batch(bc.config, batch, seq_len, mix_seed(options.seed, 0x62656e63));
                const BatchView view = BatchView::of(m);
                for (int64_t i = 0; i < options.warmups; ++i) (void)infer(*state, view, Capture::final_hidden);
                std::vector<double> ms;
                for (int64_t i = 0; i < options.repetitions; ++i) {
                    const auto t0 = std::chrono::steady_clock::now();
                    (void)infer(*state, view, Capture::final_hidden);
                    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
                }
                std::tie(r.median_ms, r.p90_ms) = median_p90(ms);
                out.push_back(r);
            }
        }
    }
    return out;
}

std::string bench_csv(const std::vector<BenchResult>& results) {
    std::ostringstream out;
    out.precision(10);
    out << "config,batch,seq_len,median_ms,p90_ms,peak_bytes,params\n";
    for (const auto& r : results) {
        out << r.config << ',' << r.batch << ',' << r.seq_len << ',';
        if (!r.skipped) out << r.median_ms << ',' << r.p90_ms;
        else out << ',';
        out << ',' << r.peak_bytes << ',' << r.params << '\n';
    }
    return out.str();
}

nlohmann::json bench_json(const std::vector<BenchResult>& results) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : results) {
        nlohmann::json j = {{"config", r.config},         {"batch", r.batch},   {"seq_len", r.seq_len},
                            {"peak_bytes", r.peak_bytes}, {"params", r.params}, {"skipped", r.skipped}};
        if (r.skipped) {
            j["reason"] = r.reason;
        } else {
            j["median_ms"] = r.median_ms;
            j["p90_ms"] = r.p90_ms;
        }
        rows.push_back(j);
    }
    return rows;
}

}  // namespace distillkit
