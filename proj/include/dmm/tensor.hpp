#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dmm/error.hpp"

namespace dmm {

/// Dense row-major tensor of doubles. Rank 0 (scalar), 1 (vector) and 2
/// (matrix) cover everything the workbench needs; all math lives on the tape
/// or in the modules, so this type is deliberately a plain data holder.
class Tensor {
  public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape.
    explicit Tensor(std::vector<std::size_t> shape);

    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double v);
    /// Rank-1 tensor from a flat list.
    static Tensor vec1(std::vector<double> data);
    /// Rank-2 tensor, row-major data of length rows*cols.
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& flat() { return data_; }
    const std::vector<double>& flat() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    /// Rank-2 element access.
    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;

    /// Value of a single-element tensor (any rank).
    double value() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    /// "[3, 4]" — used in error messages.
    std::string shape_str() const;

  private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);
std::size_t shape_numel(const std::vector<std::size_t>& shape);

/// Throws ContractViolation mentioning `where` unless the shapes match.
void check_same_shape(const Tensor& a, const Tensor& b, const char* where);

}  // namespace dmm
