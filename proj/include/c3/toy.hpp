#pragma once

#include "c3/graph.hpp"

namespace c3 {

// Synthetic two-class segmentation set: one axis-aligned rectangle (+1) per
// image on a -1 background, label 1 inside it. The background is signed so
// that bias-free convolutions see nonzero input everywhere. Deterministic in
// the seed.
struct ToyData {
    Tensor<double> images;    // (n, 1, hw, hw)
    std::vector<int> labels;  // n*hw*hw entries, 0 or 1
};

inline ToyData toy_dataset(uint64_t seed, int64_t n = 4, int64_t hw = 32) {
    ToyData d;
    d.images = full<double>(Shape{n, 1, hw, hw}, -1.0);
    d.labels.assign(static_cast<size_t>(n * hw * hw), 0);
    std::mt19937_64 rng(mix_seed(seed, 0x7071));
    for (int64_t i = 0; i < n; ++i) {
        const int64_t rw = 6 + static_cast<int64_t>(rng() % static_cast<uint64_t>(hw / 2));
        const int64_t rh = 6 + static_cast<int64_t>(rng() % static_cast<uint64_t>(hw / 2));
        const int64_t x0 = static_cast<int64_t>(rng() % static_cast<uint64_t>(hw - rw));
        const int64_t y0 = static_cast<int64_t>(rng() % static_cast<uint64_t>(hw - rh));
        for (int64_t y = y0; y < y0 + rh; ++y) {
            for (int64_t x = x0; x < x0 + rw; ++x) {
                d.images.at(i, 0, y, x) = 1.0;
                d.labels[static_cast<size_t>((i * hw + y) * hw + x)] = 1;
            }
        }
    }
    return d;
}

// Small two-class segmentation head over a pointwise stem and two modules of
// parallel concentrated-comprehensive blocks.
inline GraphPlan plan_toy_net(int64_t width = 16, const std::vector<int64_t>& rates = {2, 3}) {
    GraphPlan g;
    PlanNode in;
    in.kind = NodeKind::Input;
    in.id = "in";
    int x = g.add(in);
    x = g.add(detail::conv_node(NodeKind::PointwiseConv, "stem", ConvSpec::pointwise(1, width), x));
    x = splice_plan(g, plan_c3_module(width, rates), x, "m1");
    x = splice_plan(g, plan_c3_module(width, rates), x, "m2");
    x = g.add(detail::conv_node(NodeKind::PointwiseConv, "head", ConvSpec::pointwise(width, 2), x));
    PlanNode out;
    out.kind = NodeKind::Output;
    out.id = "out";
    out.inputs = {x};
    g.add(out);
    g.finalize();
    return g;
}

struct SoftmaxCE {
    double loss = 0.0;
    Tensor<double> d_logits;
};

// Mean per-pixel two-class cross entropy and its gradient.
inline SoftmaxCE softmax_cross_entropy(const Tensor<double>& logits, const std::vector<int>& labels) {
    const Shape& s = logits.shape();
    if (s.c != 2) throw std::invalid_argument("softmax_cross_entropy: expected 2 logit channels");
    if (static_cast<int64_t>(labels.size()) != s.n * s.plane())
        throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    SoftmaxCE r;
    r.d_logits = zeros<double>(s);
    const double inv_count = 1.0 / static_cast<double>(s.n * s.plane());
    double loss = 0.0;
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t h = 0; h < s.h; ++h) {
            for (int64_t w = 0; w < s.w; ++w) {
                const double z0 = logits.at(n, 0, h, w);
                const double z1 = logits.at(n, 1, h, w);
                const double m = std::max(z0, z1);
                const double e0 = std::exp(z0 - m);
                const double e1 = std::exp(z1 - m);
                const double zsum = e0 + e1;
                const int label = labels[static_cast<size_t>((n * s.h + h) * s.w + w)];
                const double p0 = e0 / zsum, p1 = e1 / zsum;
                loss -= std::log(label == 0 ? p0 : p1);
                r.d_logits.at(n, 0, h, w) = (p0 - (label == 0 ? 1.0 : 0.0)) * inv_count;
                r.d_logits.at(n, 1, h, w) = (p1 - (label == 1 ? 1.0 : 0.0)) * inv_count;
            }
        }
    }
    r.loss = loss * inv_count;
    if (!std::isfinite(r.loss)) throw std::runtime_error("softmax_cross_entropy: loss overflowed");
    return r;
}

struct ToyTrainResult {
    std::vector<double> losses;  // losses[0] before any update, one entry per step after
    double initial() const { return losses.front(); }
    double final_loss() const { return losses.back(); }
};

// Plain gradient descent with frozen identity batch norms. Runs in double so
// the trace is bit-reproducible for a fixed seed.
inline ToyTrainResult train_toy(int steps = 200, uint64_t seed = 0, double lr = 0.1) {
    if (steps < 0) throw std::invalid_argument("train_toy: steps must be >= 0");
    const ToyData data = toy_dataset(seed);
    Graph<double> g = materialize<double>(plan_toy_net(), seed);
    ToyTrainResult r;
    for (int step = 0; step < steps; ++step) {
        const Tensor<double> logits = graph_forward(g, data.images);
        SoftmaxCE ce = softmax_cross_entropy(logits, data.labels);
        r.losses.push_back(ce.loss);
        const GraphGradients<double> grads = graph_backward(g, data.images, ce.d_logits);
        for (size_t i = 0; i < g.params.size(); ++i) {
            Tensor<double>& w = g.params[i].kernel.weights;
            const Tensor<double>& dw = grads.d_kernel[i];
            for (int64_t k = 0; k < dw.size(); ++k) w[k] -= lr * dw[k];
            auto& slope = g.params[i].prelu.slope;
            const auto& ds = grads.d_slope[i];
            for (size_t k = 0; k < ds.size(); ++k) slope[k] -= lr * ds[k];
        }
    }
    const Tensor<double> logits = graph_forward(g, data.images);
    r.losses.push_back(softmax_cross_entropy(logits, data.labels).loss);
    return r;
}

}  // namespace c3
