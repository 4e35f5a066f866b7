#pragma once

#include "c3/tensor.hpp"

namespace c3 {

template <typename T>
struct BatchNormParams {
    std::vector<T> gamma;
    std::vector<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T eps = static_cast<T>(1e-5);

    int64_t channels() const { return static_cast<int64_t>(gamma.size()); }

    void validate(int64_t c) const {
        if (channels() != c || static_cast<int64_t>(beta.size()) != c ||
            static_cast<int64_t>(running_mean.size()) != c || static_cast<int64_t>(running_var.size()) != c)
            throw std::invalid_argument("BatchNormParams: vector length mismatch for C=" + std::to_string(c));
        if (!(eps > 0)) throw std::invalid_argument("BatchNormParams: eps must be > 0");
        for (T v : running_var)
            if (v < 0) throw std::invalid_argument("BatchNormParams: running_var must be >= 0");
    }

    static BatchNormParams identity(int64_t c) {
        BatchNormParams p;
        p.gamma.assign(static_cast<size_t>(c), static_cast<T>(1));
        p.beta.assign(static_cast<size_t>(c), static_cast<T>(0));
        p.running_mean.assign(static_cast<size_t>(c), static_cast<T>(0));
        p.running_var.assign(static_cast<size_t>(c), static_cast<T>(1));
        return p;
    }
};

// Frozen-statistics normalization: (x - mean)/sqrt(var + eps) * gamma + beta per channel.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const BatchNormParams<T>& p) {
    const Shape& s = input.shape();
    p.validate(s.c);
    Tensor<T> out(s);
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < s.c; ++c) {
            const double scale =
                static_cast<double>(p.gamma[static_cast<size_t>(c)]) /
                std::sqrt(static_cast<double>(p.running_var[static_cast<size_t>(c)]) + static_cast<double>(p.eps));
            const double mean = static_cast<double>(p.running_mean[static_cast<size_t>(c)]);
            const double shift = static_cast<double>(p.beta[static_cast<size_t>(c)]);
            const T* in_plane = input.data() + (n * s.c + c) * s.plane();
            T* out_plane = out.data() + (n * s.c + c) * s.plane();
            for (int64_t i = 0; i < s.plane(); ++i)
                out_plane[i] = static_cast<T>((static_cast<double>(in_plane[i]) - mean) * scale + shift);
        }
    }
    return out;
}

// Train-mode normalization with batch statistics over N,H,W and a running-stat
// update (r <- (1-momentum)*r + momentum*batch). Mutates the params handle,
// which must be owned by a single caller.
template <typename T>
Tensor<T> batchnorm_forward_train(const Tensor<T>& input, BatchNormParams<T>& p, T momentum = static_cast<T>(0.1)) {
    const Shape& s = input.shape();
    p.validate(s.c);
    const double count = static_cast<double>(s.n * s.plane());
    Tensor<T> out(s);
    for (int64_t c = 0; c < s.c; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int64_t n = 0; n < s.n; ++n) {
            const T* in_plane = input.data() + (n * s.c + c) * s.plane();
            for (int64_t i = 0; i < s.plane(); ++i) {
                const double v = static_cast<double>(in_plane[i]);
                sum += v;
                sq += v * v;
            }
        }
        const double mean = sum / count;
        const double var = std::max(0.0, sq / count - mean * mean);
        const double scale = static_cast<double>(p.gamma[static_cast<size_t>(c)]) / std::sqrt(var + static_cast<double>(p.eps));
        const double shift = static_cast<double>(p.beta[static_cast<size_t>(c)]);
        for (int64_t n = 0; n < s.n; ++n) {
            const T* in_plane = input.data() + (n * s.c + c) * s.plane();
            T* out_plane = out.data() + (n * s.c + c) * s.plane();
            for (int64_t i = 0; i < s.plane(); ++i)
                out_plane[i] = static_cast<T>((static_cast<double>(in_plane[i]) - mean) * scale + shift);
        }
        const double m = static_cast<double>(momentum);
        p.running_mean[static_cast<size_t>(c)] =
            static_cast<T>((1.0 - m) * static_cast<double>(p.running_mean[static_cast<size_t>(c)]) + m * mean);
        p.running_var[static_cast<size_t>(c)] =
            static_cast<T>((1.0 - m) * static_cast<double>(p.running_var[static_cast<size_t>(c)]) + m * var);
    }
    return out;
}

// Adjoint of the frozen path: dF = dO * gamma / sqrt(var + eps) per channel.
template <typename T>
Tensor<T> batchnorm_backward_frozen(const Tensor<T>& d_out, const BatchNormParams<T>& p) {
    const Shape& s = d_out.shape();
    p.validate(s.c);
    Tensor<T> d_in(s);
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < s.c; ++c) {
            const double scale =
                static_cast<double>(p.gamma[static_cast<size_t>(c)]) /
                std::sqrt(static_cast<double>(p.running_var[static_cast<size_t>(c)]) + static_cast<double>(p.eps));
            const T* go = d_out.data() + (n * s.c + c) * s.plane();
            T* gi = d_in.data() + (n * s.c + c) * s.plane();
            for (int64_t i = 0; i < s.plane(); ++i) gi[i] = static_cast<T>(static_cast<double>(go[i]) * scale);
        }
    }
    return d_in;
}

template <typename T>
struct PReLUParams {
    std::vector<T> slope;  // negative-side multiplier per channel

    int64_t channels() const { return static_cast<int64_t>(slope.size()); }

    void validate(int64_t c) const {
        if (channels() != c) throw std::invalid_argument("PReLUParams: slope length mismatch for C=" + std::to_string(c));
        for (T v : slope)
            if (!std::isfinite(static_cast<double>(v))) throw std::invalid_argument("PReLUParams: slope must be finite");
    }

    static PReLUParams filled(int64_t c, T value) {
        PReLUParams p;
        p.slope.assign(static_cast<size_t>(c), value);
        return p;
    }
};

template <typename T>
Tensor<T> prelu_forward(const Tensor<T>& input, const PReLUParams<T>& p) {
    const Shape& s = input.shape();
    p.validate(s.c);
    Tensor<T> out(s);
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < s.c; ++c) {
            const T a = p.slope[static_cast<size_t>(c)];
            const T* in_plane = input.data() + (n * s.c + c) * s.plane();
            T* out_plane = out.data() + (n * s.c + c) * s.plane();
            for (int64_t i = 0; i < s.plane(); ++i) out_plane[i] = in_plane[i] > 0 ? in_plane[i] : a * in_plane[i];
        }
    }
    return out;
}

template <typename T>
struct PReLUGrads {
    Tensor<T> d_input;
    std::vector<T> d_slope;
};

// Exact subgradient; the x == 0 tie takes the positive branch (factor 1,
// no slope contribution).
template <typename T>
PReLUGrads<T> prelu_backward(const Tensor<T>& input, const PReLUParams<T>& p, const Tensor<T>& d_out) {
    const Shape& s = input.shape();
    p.validate(s.c);
    if (!input.same_shape(d_out)) throw std::invalid_argument("prelu_backward: d_out shape mismatch");
    PReLUGrads<T> g;
    g.d_input = Tensor<T>(s);
    g.d_slope.assign(static_cast<size_t>(s.c), static_cast<T>(0));
    for (int64_t c = 0; c < s.c; ++c) {
        const T a = p.slope[static_cast<size_t>(c)];
        double sacc = 0.0;
        for (int64_t n = 0; n < s.n; ++n) {
            const T* in_plane = input.data() + (n * s.c + c) * s.plane();
            const T* go = d_out.data() + (n * s.c + c) * s.plane();
            T* gi = g.d_input.data() + (n * s.c + c) * s.plane();
            for (int64_t i = 0; i < s.plane(); ++i) {
                if (in_plane[i] >= 0) {
                    gi[i] = go[i];
                } else {
                    gi[i] = a * go[i];
                    sacc += static_cast<double>(go[i]) * static_cast<double>(in_plane[i]);
                }
            }
        }
        g.d_slope[static_cast<size_t>(c)] = static_cast<T>(sacc);
    }
    return g;
}

}  // namespace c3
