#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace c3 {

// Dense rank-4 shape, N x C x H x W.
struct Shape {
    int64_t n = 0;
    int64_t c = 0;
    int64_t h = 0;
    int64_t w = 0;

    bool operator==(const Shape& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    // Validated element count. Throws on non-positive extents or index overflow.
    int64_t checked_elems() const {
        if (n < 1 || c < 1 || h < 1 || w < 1)
            throw std::invalid_argument("Shape: all extents must be >= 1, got " + str());
        // keep the product comfortably inside int64 so byte sizes cannot wrap
        constexpr int64_t kMax = int64_t(1) << 56;
        int64_t e = n;
        for (int64_t d : {c, h, w}) {
            if (e > kMax / d) throw std::overflow_error("Shape: element count overflows index range: " + str());
            e *= d;
        }
        return e;
    }

    int64_t elems() const { return n * c * h * w; }
    int64_t plane() const { return h * w; }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

// Contiguous NCHW tensor. Immutable by convention once handed to an operation;
// all library operations take inputs by const reference and return fresh tensors.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor requires a floating point element type");

public:
    Tensor() = default;
    explicit Tensor(const Shape& s) : shape_(s), data_(static_cast<size_t>(s.checked_elems())) {}

    const Shape& shape() const { return shape_; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    int64_t index(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T& at(int64_t n, int64_t c, int64_t h, int64_t w) { return data_[static_cast<size_t>(index(n, c, h, w))]; }
    const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>(index(n, c, h, w))];
    }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
Tensor<T> zeros(const Shape& s) {
    return Tensor<T>(s);  // vector value-initializes to exact 0
}

template <typename T>
Tensor<T> full(const Shape& s, T value) {
    Tensor<T> t(s);
    for (auto& v : t) v = value;
    return t;
}

// Uniform init on [-sqrt(1/fan_in), +sqrt(1/fan_in)], a pure function of
// (shape, seed, fan_in, element type). mt19937_64 is bit-exact across platforms,
// and the mapping to [0,1) below avoids std::uniform_real_distribution, whose
// output is implementation-defined.
template <typename T>
Tensor<T> random_init(const Shape& s, uint64_t seed, int64_t fan_in) {
    if (fan_in < 1) throw std::invalid_argument("random_init: fan_in must be >= 1");
    Tensor<T> t(s);
    std::mt19937_64 rng(seed);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : t) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0,1), 53 bits
        v = static_cast<T>((2.0 * u - 1.0) * bound);
    }
    return t;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    Tensor<T> out(a.shape());
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
    return out;
}

// Channel concatenation; parts must agree on N, H, W. Channel order follows list order.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: empty part list");
    const Shape& s0 = parts.front().shape();
    int64_t c_total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
            throw std::invalid_argument("concat_channels: spatial/batch mismatch " + s.str() + " vs " + s0.str());
        c_total += s.c;
    }
    Tensor<T> out(Shape{s0.n, c_total, s0.h, s0.w});
    const int64_t plane = s0.plane();
    for (int64_t n = 0; n < s0.n; ++n) {
        int64_t c_off = 0;
        for (const auto& p : parts) {
            const int64_t block = p.shape().c * plane;
            const T* src = p.data() + n * block;
            T* dst = out.data() + (n * c_total + c_off) * plane;
            std::copy(src, src + block, dst);
            c_off += p.shape().c;
        }
    }
    return out;
}

// Channels [c_begin, c_end) as a fresh tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, int64_t c_begin, int64_t c_end) {
    const Shape& s = t.shape();
    if (c_begin < 0 || c_end <= c_begin || c_end > s.c)
        throw std::invalid_argument("slice_channels: bad range [" + std::to_string(c_begin) + "," +
                                    std::to_string(c_end) + ") for c=" + std::to_string(s.c));
    const int64_t cs = c_end - c_begin;
    Tensor<T> out(Shape{s.n, cs, s.h, s.w});
    const int64_t plane = s.plane();
    for (int64_t n = 0; n < s.n; ++n) {
        const T* src = t.data() + (n * s.c + c_begin) * plane;
        std::copy(src, src + cs * plane, out.data() + n * cs * plane);
    }
    return out;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("max_abs_diff: shape mismatch");
    T m = 0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// 64-bit mix used to derive per-node weight seeds from a base seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace c3
