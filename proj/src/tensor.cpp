#include "lidarseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lidarseg/error.hpp"

namespace lidarseg::tensorcore {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
    for (auto d : shape_)
        if (d == 0) throw ConfigError("tensor dimensions must be positive, got " + shape_string(shape_));
    data_.assign(shape_size(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_)
        if (d == 0) throw ConfigError("tensor dimensions must be positive, got " + shape_string(shape_));
    if (shape_size(shape_) != data_.size())
        throw ConfigError("tensor shape " + shape_string(shape_) + " does not match " +
                          std::to_string(data_.size()) + " values");
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace lidarseg::tensorcore
