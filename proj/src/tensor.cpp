#include "funfreeze/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace funfreeze {

namespace {
std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> elems_)
    : shape(std::move(shape_)), elems(std::move(elems_)) {
    for (std::size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
    }
    if (elems.size() != shape_product(shape)) {
        throw std::invalid_argument("tensor element count does not match shape");
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::row_matrix(std::size_t rows, std::size_t cols, std::vector<double> elems) {
    return Tensor({rows, cols}, std::move(elems));
}

std::size_t Tensor::rows() const {
    if (shape.size() != 2) throw std::invalid_argument("rows() requires a rank-2 tensor");
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (shape.size() != 2) throw std::invalid_argument("cols() requires a rank-2 tensor");
    return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return elems[r * cols() + c]; }

double Tensor::at(std::size_t r, std::size_t c) const { return elems[r * cols() + c]; }

bool Tensor::all_finite() const {
    for (double v : elems) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string shape_str(const Tensor& t) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) os << "x";
        os << t.shape[i];
    }
    os << "]";
    return os.str();
}

}  // namespace funfreeze
