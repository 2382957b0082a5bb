#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace funfreeze {

// Dense row-major tensor of 64-bit floats. elems.size() always equals the
// product of shape. Rank is 1 or 2 everywhere in this codebase; scalars are
// represented as shape {1}.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> elems;

    Tensor() = default;
    Tensor(std::vector<std::size_t> shape_, std::vector<double> elems_);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor scalar(double v);
    static Tensor row_matrix(std::size_t rows, std::size_t cols, std::vector<double> elems);

    std::size_t size() const { return elems.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    bool operator==(const Tensor& other) const {
        return shape == other.shape && elems == other.elems;
    }
};

std::string shape_str(const Tensor& t);

}  // namespace funfreeze
