#pragma once

#include <chrono>

#include "c3/analysis.hpp"

namespace c3 {

struct BenchResult {
    std::string block;
    Shape input;
    int reps = 0;
    double min_ms = 0.0;
    double median_ms = 0.0;
    int64_t flops = 0;  // analyzer count for the same graph at the same size
};

inline GraphPlan plan_for_bench_block(const std::string& block, int64_t channels, int64_t dilation) {
    if (block == "c3") return plan_c3_block(channels, dilation);
    if (block == "rc3") return plan_rc3_block(channels, dilation);
    if (block == "ds") return plan_ds_dilate_block(channels, dilation);
    if (block == "std_dilated") return plan_std_dilated(channels, dilation);
    if (block == "esp_module") return plan_esp_module(channels);
    if (block == "c3_module") return plan_c3_module(channels);
    throw std::invalid_argument("bench: unknown block \"" + block + "\"");
}

template <typename T>
BenchResult run_bench(const std::string& block, int64_t channels, int64_t hw, int64_t dilation, int reps,
                      uint64_t seed) {
    if (reps < 1) throw std::invalid_argument("bench: reps must be >= 1");
    const GraphPlan plan = plan_for_bench_block(block, channels, dilation);
    const Graph<T> g = materialize<T>(plan, seed);
    const Shape in_shape{1, channels, hw, hw};
    const Tensor<T> input = random_init<T>(in_shape, mix_seed(seed, 0xBE7C), 1);

    BenchResult r;
    r.block = block;
    r.input = in_shape;
    r.reps = reps;
    r.flops = count_flops(plan, hw, hw).total_flops;

    std::vector<double> times_ms;
    volatile T sink = 0;  // keep the forward pass observable
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor<T> out = graph_forward(g, input);
        const auto t1 = std::chrono::steady_clock::now();
        sink = sink + out[0];
        times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times_ms.begin(), times_ms.end());
    r.min_ms = times_ms.front();
    r.median_ms = times_ms[times_ms.size() / 2];
    return r;
}

}  // namespace c3
