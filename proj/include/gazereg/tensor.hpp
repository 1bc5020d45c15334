#pragma once

#include "gazereg/errors.hpp"

#include <algorithm>
#include <cstdint>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

namespace gazereg::nn {

// Skips value-initialization on resize; buffers that are fully overwritten
// right after allocation use this through Tensor::uninitialized.
template <typename T>
struct default_init_allocator : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = default_init_allocator<U>;
    };
    template <typename U>
    void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

template <typename T>
using TensorStorage = std::vector<T, default_init_allocator<T>>;

// Dense row-major array with shape metadata: (B, C, L) for sequence data,
// (B, F) for flat data. T is float for training, double for gradient
// checking. The shape constructor zero-fills.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::int64_t> shape) : Tensor(std::move(shape), true) {}

    static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

    // Contents are indeterminate; every element must be written before use.
    static Tensor uninitialized(std::vector<std::int64_t> shape) {
        return Tensor(std::move(shape), false);
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    TensorStorage<T>& raw() { return data_; }
    const TensorStorage<T>& raw() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    T& operator()(std::int64_t a, std::int64_t b) {
        return data_[static_cast<std::size_t>(a * shape_[1] + b)];
    }
    const T& operator()(std::int64_t a, std::int64_t b) const {
        return data_[static_cast<std::size_t>(a * shape_[1] + b)];
    }
    T& operator()(std::int64_t a, std::int64_t b, std::int64_t c) {
        return data_[static_cast<std::size_t>((a * shape_[1] + b) * shape_[2] + c)];
    }
    const T& operator()(std::int64_t a, std::int64_t b, std::int64_t c) const {
        return data_[static_cast<std::size_t>((a * shape_[1] + b) * shape_[2] + c)];
    }

    void fill(T value) { data_.assign(data_.size(), value); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out = Tensor<U>::uninitialized(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out.raw()[i] = static_cast<U>(data_[i]);
        }
        return out;
    }

private:
    Tensor(std::vector<std::int64_t> shape, bool zero) {
        std::int64_t n = 1;
        for (auto d : shape) {
            if (d < 1) {
                throw ShapeError("tensor dims must be >= 1");
            }
            n *= d;
        }
        shape_ = std::move(shape);
        data_.resize(static_cast<std::size_t>(n));
        if (zero) {
            std::fill(data_.begin(), data_.end(), T{});
        }
    }

    std::vector<std::int64_t> shape_;
    TensorStorage<T> data_;
};

// Trainable array: value plus gradient and Adam moment buffers, all
// shape-identical. Moments start at zero.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> m;
    Tensor<T> v;
    std::int64_t step_count = 0;

    Parameter() = default;
    Parameter(std::string param_name, std::vector<std::int64_t> shape)
        : name(std::move(param_name)), value(shape), grad(shape), m(shape), v(std::move(shape)) {}

    void zero_grad() { grad.fill(T{}); }
};

} // namespace gazereg::nn
