#pragma once

#include <algorithm>
#include <utility>

#include "c3/tensor.hpp"

namespace c3 {

// Full description of one convolution. Stride is recorded for generality but
// every block in this library uses stride 1.
struct ConvSpec {
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    int64_t kernel_h = 1;
    int64_t kernel_w = 1;
    int64_t dilation = 1;  // applies to both axes
    int64_t stride = 1;
    int64_t pad_h = 0;  // zero padding per side
    int64_t pad_w = 0;
    int64_t groups = 1;

    void validate() const {
        if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("ConvSpec: channels must be >= 1");
        if (kernel_h < 1 || kernel_w < 1) throw std::invalid_argument("ConvSpec: kernel extents must be >= 1");
        if (dilation < 1) throw std::invalid_argument("ConvSpec: dilation must be >= 1");
        if (stride < 1) throw std::invalid_argument("ConvSpec: stride must be >= 1");
        if (pad_h < 0 || pad_w < 0) throw std::invalid_argument("ConvSpec: padding must be >= 0");
        if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0)
            throw std::invalid_argument("ConvSpec: groups must divide both channel counts");
    }

    // Stride-aware output extents; throws if either collapses below 1.
    Shape out_shape(const Shape& in) const {
        validate();
        if (in.c != in_channels)
            throw std::invalid_argument("ConvSpec: input has " + std::to_string(in.c) + " channels, spec expects " +
                                        std::to_string(in_channels));
        const int64_t eff_h = dilation * (kernel_h - 1) + 1;
        const int64_t eff_w = dilation * (kernel_w - 1) + 1;
        const int64_t ho = (in.h + 2 * pad_h - eff_h) / stride + 1;
        const int64_t wo = (in.w + 2 * pad_w - eff_w) / stride + 1;
        if (ho < 1 || wo < 1)
            throw std::invalid_argument("ConvSpec: non-positive output extent for input " + in.str());
        return Shape{in.n, out_channels, ho, wo};
    }

    Shape kernel_shape() const { return Shape{out_channels, in_channels / groups, kernel_h, kernel_w}; }
    int64_t weight_count() const { return kernel_h * kernel_w * (in_channels / groups) * out_channels; }

    bool operator==(const ConvSpec& o) const {
        return in_channels == o.in_channels && out_channels == o.out_channels && kernel_h == o.kernel_h &&
               kernel_w == o.kernel_w && dilation == o.dilation && stride == o.stride && pad_h == o.pad_h &&
               pad_w == o.pad_w && groups == o.groups;
    }

    // Padding that preserves spatial extent at stride 1: pad = d*(k-1)/2 per axis.
    static ConvSpec same_pad(int64_t ci, int64_t co, int64_t kh, int64_t kw, int64_t dilation, int64_t groups) {
        ConvSpec s;
        s.in_channels = ci;
        s.out_channels = co;
        s.kernel_h = kh;
        s.kernel_w = kw;
        s.dilation = dilation;
        s.groups = groups;
        s.pad_h = dilation * (kh - 1) / 2;
        s.pad_w = dilation * (kw - 1) / 2;
        return s;
    }

    static ConvSpec pointwise(int64_t ci, int64_t co) { return same_pad(ci, co, 1, 1, 1, 1); }
    static ConvSpec depthwise(int64_t c, int64_t kh, int64_t kw, int64_t dilation) {
        return same_pad(c, c, kh, kw, dilation, c);
    }
};

// Bias-free convolution weights, laid out (C_o, C_i/g, K_h, K_w).
template <typename T>
struct Kernel {
    Tensor<T> weights;

    Kernel() = default;
    explicit Kernel(Tensor<T> w) : weights(std::move(w)) {}

    void check(const ConvSpec& spec) const {
        if (weights.shape() != spec.kernel_shape())
            throw std::invalid_argument("Kernel: weight shape " + weights.shape().str() +
                                        " inconsistent with spec " + spec.kernel_shape().str());
    }
};

// fan_in = taps feeding one output element; used for the uniform init bound.
inline int64_t kernel_fan_in(const ConvSpec& spec) {
    return spec.kernel_h * spec.kernel_w * (spec.in_channels / spec.groups);
}

template <typename T>
Kernel<T> random_kernel(const ConvSpec& spec, uint64_t seed) {
    spec.validate();
    return Kernel<T>(random_init<T>(spec.kernel_shape(), seed, kernel_fan_in(spec)));
}

namespace detail {

// Output index range [lo, hi] such that o*stride + off lands in [0, extent).
inline void valid_out_range(int64_t off, int64_t stride, int64_t extent, int64_t out_extent, int64_t& lo,
                            int64_t& hi) {
    lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    const int64_t top = extent - 1 - off;
    hi = top < 0 ? -1 : std::min(out_extent - 1, top / stride);
}

template <typename T>
void conv_check_args(const Tensor<T>& input, const Kernel<T>& kernel, const ConvSpec& spec) {
    spec.validate();
    kernel.check(spec);
    if (input.shape().c != spec.in_channels)
        throw std::invalid_argument("conv: input channel mismatch, got " + std::to_string(input.shape().c) +
                                    " want " + std::to_string(spec.in_channels));
}

}  // namespace detail

// Direct grouped dilated convolution. Taps are walked outer-loop with
// analytically precomputed valid output ranges so the inner width loop is
// branch-free and contiguous. Accumulation is in double regardless of T and
// the reduction order per output element is fixed, so results are
// run-to-run deterministic.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const Kernel<T>& kernel, const ConvSpec& spec) {
    detail::conv_check_args(input, kernel, spec);
    const Shape in = input.shape();
    const Shape os = spec.out_shape(in);
    const int64_t cig = spec.in_channels / spec.groups;
    const int64_t cog = spec.out_channels / spec.groups;
    const int64_t d = spec.dilation, s = spec.stride;
    Tensor<T> out(os);
    std::vector<double> acc(static_cast<size_t>(os.plane()));
    const T* wts = kernel.weights.data();
    for (int64_t n = 0; n < in.n; ++n) {
        for (int64_t g = 0; g < spec.groups; ++g) {
            for (int64_t co = 0; co < cog; ++co) {
                const int64_t oc = g * cog + co;
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int64_t ci = 0; ci < cig; ++ci) {
                    const int64_t ic = g * cig + ci;
                    const T* in_plane = input.data() + (n * in.c + ic) * in.plane();
                    const T* w_plane = wts + (oc * cig + ci) * spec.kernel_h * spec.kernel_w;
                    for (int64_t m = 0; m < spec.kernel_h; ++m) {
                        const int64_t h0 = m * d - spec.pad_h;
                        int64_t oh_lo, oh_hi;
                        detail::valid_out_range(h0, s, in.h, os.h, oh_lo, oh_hi);
                        for (int64_t kn = 0; kn < spec.kernel_w; ++kn) {
                            const double wv = static_cast<double>(w_plane[m * spec.kernel_w + kn]);
                            const int64_t w0 = kn * d - spec.pad_w;
                            int64_t ow_lo, ow_hi;
                            detail::valid_out_range(w0, s, in.w, os.w, ow_lo, ow_hi);
                            for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                                const T* in_row = in_plane + (oh * s + h0) * in.w + w0;
                                double* acc_row = acc.data() + oh * os.w;
                                for (int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                                    acc_row[ow] += wv * static_cast<double>(in_row[ow * s]);
                            }
                        }
                    }
                }
                T* out_plane = out.data() + (n * os.c + oc) * os.plane();
                for (int64_t i = 0; i < os.plane(); ++i) out_plane[i] = static_cast<T>(acc[static_cast<size_t>(i)]);
            }
        }
    }
    return out;
}

// Reference path: the plainest possible per-output-pixel loop nest with
// explicit bounds checks. Shares no hot-path code with conv_forward.
template <typename T>
Tensor<T> conv_oracle(const Tensor<T>& input, const Kernel<T>& kernel, const ConvSpec& spec) {
    detail::conv_check_args(input, kernel, spec);
    const Shape in = input.shape();
    const Shape os = spec.out_shape(in);
    const int64_t cig = spec.in_channels / spec.groups;
    const int64_t cog = spec.out_channels / spec.groups;
    Tensor<T> out(os);
    for (int64_t n = 0; n < in.n; ++n) {
        for (int64_t oc = 0; oc < os.c; ++oc) {
            const int64_t g = oc / cog;
            for (int64_t oh = 0; oh < os.h; ++oh) {
                for (int64_t ow = 0; ow < os.w; ++ow) {
                    double sum = 0.0;
                    for (int64_t ci = 0; ci < cig; ++ci) {
                        for (int64_t m = 0; m < spec.kernel_h; ++m) {
                            for (int64_t kn = 0; kn < spec.kernel_w; ++kn) {
                                const int64_t ih = oh * spec.stride + m * spec.dilation - spec.pad_h;
                                const int64_t iw = ow * spec.stride + kn * spec.dilation - spec.pad_w;
                                if (ih < 0 || ih >= in.h || iw < 0 || iw >= in.w) continue;
                                sum += static_cast<double>(input.at(n, g * cig + ci, ih, iw)) *
                                       static_cast<double>(kernel.weights.at(oc, ci, m, kn));
                            }
                        }
                    }
                    out.at(n, oc, oh, ow) = static_cast<T>(sum);
                }
            }
        }
    }
    return out;
}

// Per-channel spatial convolution, no cross-channel mixing (groups == C).
template <typename T>
Tensor<T> depthwise_dilated_forward(const Tensor<T>& input, const Kernel<T>& kernel, const ConvSpec& spec) {
    if (spec.groups != spec.in_channels || spec.in_channels != spec.out_channels)
        throw std::invalid_argument("depthwise_dilated_forward: spec must have groups == C_i == C_o");
    detail::conv_check_args(input, kernel, spec);
    const Shape in = input.shape();
    const Shape os = spec.out_shape(in);
    const int64_t d = spec.dilation, s = spec.stride;
    Tensor<T> out(os);
    std::vector<double> acc(static_cast<size_t>(os.plane()));
    for (int64_t n = 0; n < in.n; ++n) {
        for (int64_t c = 0; c < in.c; ++c) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const T* in_plane = input.data() + (n * in.c + c) * in.plane();
            const T* w_plane = kernel.weights.data() + c * spec.kernel_h * spec.kernel_w;
            for (int64_t m = 0; m < spec.kernel_h; ++m) {
                const int64_t h0 = m * d - spec.pad_h;
                int64_t oh_lo, oh_hi;
                detail::valid_out_range(h0, s, in.h, os.h, oh_lo, oh_hi);
                for (int64_t kn = 0; kn < spec.kernel_w; ++kn) {
                    const double wv = static_cast<double>(w_plane[m * spec.kernel_w + kn]);
                    const int64_t w0 = kn * d - spec.pad_w;
                    int64_t ow_lo, ow_hi;
                    detail::valid_out_range(w0, s, in.w, os.w, ow_lo, ow_hi);
                    for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                        const T* in_row = in_plane + (oh * s + h0) * in.w + w0;
                        double* acc_row = acc.data() + oh * os.w;
                        for (int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                            acc_row[ow] += wv * static_cast<double>(in_row[ow * s]);
                    }
                }
            }
            T* out_plane = out.data() + (n * os.c + c) * os.plane();
            for (int64_t i = 0; i < os.plane(); ++i) out_plane[i] = static_cast<T>(acc[static_cast<size_t>(i)]);
        }
    }
    return out;
}

// 1x1 cross-channel mixing at every pixel (groups == 1).
template <typename T>
Tensor<T> pointwise_forward(const Tensor<T>& input, const Kernel<T>& kernel, const ConvSpec& spec) {
    if (spec.kernel_h != 1 || spec.kernel_w != 1 || spec.groups != 1)
        throw std::invalid_argument("pointwise_forward: spec must be 1x1 with groups == 1");
    detail::conv_check_args(input, kernel, spec);
    const Shape in = input.shape();
    const Shape os = spec.out_shape(in);
    Tensor<T> out(os);
    std::vector<double> acc(static_cast<size_t>(os.plane()));
    for (int64_t n = 0; n < in.n; ++n) {
        for (int64_t oc = 0; oc < os.c; ++oc) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int64_t ci = 0; ci < in.c; ++ci) {
                const double wv = static_cast<double>(kernel.weights.at(oc, ci, 0, 0));
                const T* in_plane = input.data() + (n * in.c + ci) * in.plane();
                for (int64_t i = 0; i < in.plane(); ++i) acc[static_cast<size_t>(i)] += wv * static_cast<double>(in_plane[i]);
            }
            T* out_plane = out.data() + (n * os.c + oc) * os.plane();
            for (int64_t i = 0; i < os.plane(); ++i) out_plane[i] = static_cast<T>(acc[static_cast<size_t>(i)]);
        }
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> d_input;
    Tensor<T> d_weights;  // same layout as the kernel
};

// Exact adjoint of conv_forward: gradients of sum(d_out .* conv(input, K))
// with respect to input and K.
template <typename T>
ConvGrads<T> conv_backward(const Tensor<T>& input, const Kernel<T>& kernel, const ConvSpec& spec,
                           const Tensor<T>& d_out) {
    detail::conv_check_args(input, kernel, spec);
    const Shape in = input.shape();
    const Shape os = spec.out_shape(in);
    if (d_out.shape() != os)
        throw std::invalid_argument("conv_backward: d_out shape " + d_out.shape().str() + " want " + os.str());
    const int64_t cig = spec.in_channels / spec.groups;
    const int64_t cog = spec.out_channels / spec.groups;
    const int64_t d = spec.dilation, s = spec.stride;
    ConvGrads<T> g;
    g.d_input = zeros<T>(in);
    g.d_weights = zeros<T>(spec.kernel_shape());
    for (int64_t oc = 0; oc < os.c; ++oc) {
        const int64_t grp = oc / cog;
        for (int64_t ci = 0; ci < cig; ++ci) {
            const int64_t ic = grp * cig + ci;
            for (int64_t m = 0; m < spec.kernel_h; ++m) {
                const int64_t h0 = m * d - spec.pad_h;
                int64_t oh_lo, oh_hi;
                detail::valid_out_range(h0, s, in.h, os.h, oh_lo, oh_hi);
                for (int64_t kn = 0; kn < spec.kernel_w; ++kn) {
                    const int64_t w0 = kn * d - spec.pad_w;
                    int64_t ow_lo, ow_hi;
                    detail::valid_out_range(w0, s, in.w, os.w, ow_lo, ow_hi);
                    const T wv = kernel.weights.at(oc, ci, m, kn);
                    double wacc = 0.0;
                    for (int64_t n = 0; n < in.n; ++n) {
                        const T* go_plane = d_out.data() + (n * os.c + oc) * os.plane();
                        const T* in_plane = input.data() + (n * in.c + ic) * in.plane();
                        T* gi_plane = g.d_input.data() + (n * in.c + ic) * in.plane();
                        for (int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                            const T* go_row = go_plane + oh * os.w;
                            const int64_t ih = oh * s + h0;
                            for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                                const int64_t iw = ow * s + w0;
                                const double go = static_cast<double>(go_row[ow]);
                                gi_plane[ih * in.w + iw] += static_cast<T>(go * static_cast<double>(wv));
                                wacc += go * static_cast<double>(in_plane[ih * in.w + iw]);
                            }
                        }
                    }
                    g.d_weights.at(oc, ci, m, kn) = static_cast<T>(wacc);
                }
            }
        }
    }
    return g;
}

}  // namespace c3
