#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "sidrec/util.hpp"

namespace sidrec::num {

// Dense row-major double tensor. Only ranks 0..2 are used in practice.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

    static Tensor zeros(std::vector<size_t> s) {
        size_t n = 1;
        for (size_t e : s) n *= e;
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }
    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor row(std::vector<double> d) {
        size_t n = d.size();
        return Tensor({n}, std::move(d));
    }

    size_t size() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    size_t rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? 1 : 1); }
    size_t cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }

    double& at(size_t i) { return data[i]; }
    double at(size_t i) const { return data[i]; }
    double& at(size_t i, size_t j) { return data[i * shape[1] + j]; }
    double at(size_t i, size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

}  // namespace sidrec::num
