#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lidarseg::tensorcore {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. Rank-3 tensors are laid out h, then w, then channels.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0});
    Tensor(Shape shape, std::vector<T> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // h×w×c accessors
    T& at(std::size_t y, std::size_t x, std::size_t c) { return data_[(y * shape_[1] + x) * shape_[2] + c]; }
    const T& at(std::size_t y, std::size_t x, std::size_t c) const {
        return data_[(y * shape_[1] + x) * shape_[2] + c];
    }

    void fill(T value);
    bool all_finite() const;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

/// Named parameter tensors, ordered by name.
template <typename T>
using TensorMap = std::map<std::string, Tensor<T>>;

template <typename U, typename T>
TensorMap<U> cast_map(const TensorMap<T>& in) {
    TensorMap<U> out;
    for (const auto& [name, t] : in) out.emplace(name, t.template cast<U>());
    return out;
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace lidarseg::tensorcore
