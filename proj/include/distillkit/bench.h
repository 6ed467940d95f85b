// SPDX-License-Identifier: Apache-2.0
//
// Inference benchmarks: parameter counts, latency percentiles and an
// analytic peak-memory estimate over a batch x sequence-length grid.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "distillkit/encoder.h"
#include "json.hpp"

namespace distillkit {

struct BenchConfig {
    std::string name;
    EncoderConfig config;
};

struct BenchGrid {
    std::vector<int64_t> batches = {1, 8};
    std::vector<int64_t> seq_lens = {32, 128, 512};
};

struct BenchOptions {
    int64_t warmups = 5;
    int64_t repetitions = 30;
    uint64_t seed = 0;
    /// Grid points whose estimate exceeds this are skipped; 0 reads the
    /// available memory of the machine.
    int64_t memory_budget_bytes = 0;
};

struct BenchResult {
    std::string config;
    int64_t batch = 0;
    int64_t seq_len = 0;
    double median_ms = 0.0;
    double p90_ms = 0.0;
    int64_t peak_bytes = 0;
    int64_t params = 0;
    bool skipped = false;
    std::string reason;  // why a point was skipped
};

/// Reference shapes: tiny (4L/312D), mobile (24L bottleneck, 128-wide
/// embeddings), distilled (6L/768D) and base (12L/768D).
std::vector<BenchConfig> reference_bench_configs(int64_t vocab_size = 30522);

/// Parameter bytes plus the largest set of activations alive at once during
/// an inference forward pass that keeps only the final hidden state.
int64_t estimate_peak_bytes(const EncoderConfig& c, int64_t batch, int64_t seq_len);

/// Median and p90 (nearest rank) of `samples`.
std::pair<double, double> median_p90(std::vector<double> samples);

/// Times `repetitions` forward passes per grid point after `warmups` untimed
/// ones, on random non-special tokens with a full attention mask.
std::vector<BenchResult> run_bench(const std::vector<BenchConfig>& configs, const BenchGrid& grid,
                                   const BenchOptions& options = {});

/// Columns config,batch,seq_len,median_ms,p90_ms,peak_bytes,params. Skipped
/// points leave the timing columns empty.
std::string bench_csv(const std::vector<BenchResult>& results);
nlohmann::json bench_json(const std::vector<BenchResult>& results);

}  // namespace distillkit
