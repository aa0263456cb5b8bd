#include "dmm/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dmm {

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw ContractViolation("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

Tensor Tensor::vec1(std::vector<double> data) {
    std::size_t n = data.size();
    return Tensor({n}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ContractViolation("Tensor::dim: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str());
    }
    return shape_[axis];
}

double& Tensor::at(std::size_t i, std::size_t j) {
    if (rank() != 2) throw ContractViolation("Tensor::at(i,j) requires rank 2, got shape " + shape_str());
    return data_[i * shape_[1] + j];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    if (rank() != 2) throw ContractViolation("Tensor::at(i,j) requires rank 2, got shape " + shape_str());
    return data_[i * shape_[1] + j];
}

double Tensor::value() const {
    if (data_.size() != 1) {
        throw ContractViolation("Tensor::value requires a single element, got shape " + shape_str());
    }
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b)) {
        throw ContractViolation(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
    }
}

}  // namespace dmm
