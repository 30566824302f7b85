#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <new>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvdm {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

/// 64-byte aligned storage. Vectorized reductions peel a scalar prologue up
/// to the first aligned element, so a fixed alignment keeps results
/// independent of where the allocator happens to place a buffer.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Dense row-major tensor with value semantics.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using Storage = std::vector<T, AlignedAllocator<T>>;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        for (int64_t d : shape_) {
            if (d < 0) throw std::invalid_argument("negative tensor extent in " + shape_str(shape_));
        }
        data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
    }

    Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        check_size();
    }

    Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) { check_size(); }

    Tensor(Shape shape, std::initializer_list<T> data) : shape_(std::move(shape)), data_(data) { check_size(); }

    void check_size() const {
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
            throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    template <typename Rng>
    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(shape));
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : t.data_) v = static_cast<T>(dist(rng)) * stddev;
        return t;
    }

    template <typename Rng>
    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
        Tensor t(std::move(shape));
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        for (auto& v : t.data_) v = static_cast<T>(dist(rng));
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty() && shape_.empty(); }

    int64_t dim(int axis) const {
        if (axis < 0) axis += rank();
        if (axis < 0 || axis >= rank()) throw std::out_of_range("axis out of range for shape " + shape_str(shape_));
        return shape_[static_cast<size_t>(axis)];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    Storage& storage() { return data_; }
    const Storage& storage() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    int64_t offset(std::initializer_list<int64_t> index) const {
        if (static_cast<int>(index.size()) != rank()) throw std::out_of_range("index rank mismatch");
        int64_t off = 0;
        size_t i = 0;
        for (int64_t v : index) {
            if (v < 0 || v >= shape_[i]) throw std::out_of_range("index out of range");
            off = off * shape_[i] + v;
            ++i;
        }
        return off;
    }

    T& at(std::initializer_list<int64_t> index) { return data_[static_cast<size_t>(offset(index))]; }
    const T& at(std::initializer_list<int64_t> index) const { return data_[static_cast<size_t>(offset(index))]; }

    Tensor reshaped(Shape shape) const {
        Tensor out;
        if (shape_numel(shape) != numel()) {
            throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        out.shape_ = std::move(shape);
        out.data_ = data_;
        return out;
    }

    void reshape_inplace(Shape shape) {
        if (shape_numel(shape) != numel()) {
            throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        shape_ = std::move(shape);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    Tensor& operator+=(const Tensor& o) {
        check_same(o, "+=");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Tensor& operator-=(const Tensor& o) {
        check_same(o, "-=");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }

    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, T s) { return a *= s; }
    friend Tensor operator*(T s, Tensor a) { return a *= s; }

    /// this += s * o
    void axpy(T s, const Tensor& o) {
        check_same(o, "axpy");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
    }

    T sum() const {
        double acc = 0;
        for (T v : data_) acc += v;
        return static_cast<T>(acc);
    }

    T mean() const { return numel() ? static_cast<T>(static_cast<double>(sum()) / numel()) : T(0); }

    T min() const { return *std::min_element(data_.begin(), data_.end()); }
    T max() const { return *std::max_element(data_.begin(), data_.end()); }

    T abs_max() const {
        T m = 0;
        for (T v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    void check_same(const Tensor& o, const char* what) const {
        if (shape_ != o.shape_) {
            throw std::invalid_argument(std::string("shape mismatch in ") + what + ": " + shape_str(shape_) +
                                        " vs " + shape_str(o.shape_));
        }
    }

    Shape shape_;
    Storage data_;
};

template <typename T>
T mean_squared_difference(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mean_squared_difference: shape mismatch");
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return a.numel() ? static_cast<T>(acc / a.numel()) : T(0);
}

/// Copies `x` with axes reordered so that output axis i is input axis perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r) throw std::invalid_argument("permute: rank mismatch");
    std::vector<int64_t> in_strides(r, 1);
    for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * x.shape()[i + 1];
    Shape out_shape(r);
    std::vector<int64_t> strides(r);
    std::vector<bool> seen(r, false);
    for (int i = 0; i < r; ++i) {
        if (perm[i] < 0 || perm[i] >= r || seen[perm[i]]) throw std::invalid_argument("permute: invalid permutation");
        seen[perm[i]] = true;
        out_shape[i] = x.shape()[perm[i]];
        strides[i] = in_strides[perm[i]];
    }
    Tensor<T> out(out_shape);
    if (out.numel() == 0) return out;

    // Collapse the trailing run of axes that stays contiguous into a block copy.
    int tail = r;
    int64_t block = 1;
    while (tail > 0 && strides[tail - 1] == block) {
        block *= out_shape[tail - 1];
        --tail;
    }
    std::vector<int64_t> idx(tail, 0);
    const T* src = x.data();
    T* dst = out.data();
    const int64_t outer = out.numel() / block;
    int64_t src_off = 0;
    for (int64_t o = 0; o < outer; ++o) {
        if (block == 1) {
            *dst++ = src[src_off];
        } else {
            std::copy(src + src_off, src + src_off + block, dst);
            dst += block;
        }
        for (int a = tail - 1; a >= 0; --a) {
            ++idx[a];
            src_off += strides[a];
            if (idx[a] < out_shape[a]) break;
            src_off -= strides[a] * out_shape[a];
            idx[a] = 0;
        }
    }
    return out;
}

inline std::vector<int> inverse_permutation(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    return inv;
}

/// Concatenates tensors along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Tensor<T>& first = *parts.front();
    if (axis < 0) axis += first.rank();
    Shape out_shape = first.shape();
    int64_t total = 0;
    for (const auto* p : parts) {
        if (p->rank() != first.rank()) throw std::invalid_argument("concat: rank mismatch");
        for (int a = 0; a < first.rank(); ++a) {
            if (a != axis && p->shape()[a] != first.shape()[a]) {
                throw std::invalid_argument("concat: extent mismatch " + shape_str(p->shape()) + " vs " +
                                            shape_str(first.shape()));
            }
        }
        total += p->shape()[axis];
    }
    out_shape[axis] = total;
    Tensor<T> out(out_shape);
    int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= out_shape[a];
    for (int a = axis + 1; a < first.rank(); ++a) inner *= out_shape[a];
    int64_t offset = 0;
    for (const auto* p : parts) {
        const int64_t len = p->shape()[axis] * inner;
        for (int64_t o = 0; o < outer; ++o) {
            std::copy(p->data() + o * len, p->data() + (o + 1) * len, out.data() + o * total * inner + offset);
        }
        offset += len;
    }
    return out;
}

/// Extracts [start, start+len) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
    if (axis < 0) axis += x.rank();
    if (start < 0 || len < 0 || start + len > x.shape()[axis]) throw std::out_of_range("slice out of range");
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    Tensor<T> out(out_shape);
    int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= x.shape()[a];
    for (int a = axis + 1; a < x.rank(); ++a) inner *= x.shape()[a];
    const int64_t full = x.shape()[axis] * inner;
    for (int64_t o = 0; o < outer; ++o) {
        std::copy(x.data() + o * full + start * inner, x.data() + o * full + (start + len) * inner,
                  out.data() + o * len * inner);
    }
    return out;
}

}  // namespace pvdm
