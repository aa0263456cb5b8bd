#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "dmm/tensor.hpp"

namespace dmm {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& val() const;
};

/// Gradient of a scalar output with respect to named leaves.
using GradMap = std::map<std::string, Tensor>;

enum class Op : std::uint8_t {
    Leaf,
    Const,
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Smul,
    Exp,
    Log,
    Square,
    Sqrt,
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
    Sin,
    SumAll,
    SumAxis,
    Mean,
    Concat,
    Slice,
};

/// Record of one forward computation. Nodes are appended in evaluation order;
/// the reverse sweep walks them back to front, so parents always come before
/// children and the forward values are never touched again once written.
class Tape {
  public:
    /// Trainable input, addressable by name in gradient(). Binding the same
    /// name twice returns the original node (the value must match the first
    /// binding's shape).
    Var leaf(const std::string& name, const Tensor& value);

    /// Non-trainable input; gradients do not flow into it.
    Var constant(Tensor value);
    Var constant_scalar(double v);

    const Tensor& value(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    bool has_leaf(const std::string& name) const { return leaves_.count(name) != 0; }
    std::vector<std::string> leaf_names() const;

    /// Reverse-mode sweep from a scalar output. Every requested leaf gets an
    /// entry; leaves the output never touched get zero tensors of their shape.
    /// Forward values are read-only during the sweep.
    GradMap gradient(Var output, const std::vector<std::string>& leaf_names) const;

    /// Internal: append a node. Op constructors below use this; not meant for
    /// direct calls from module code.
    Var emit(Op op, Tensor value, int p0, int p1 = -1, double scalar = 0.0, int axis = -1,
             std::size_t off = 0, std::size_t len = 0);

  private:
    struct Node {
        Tensor value;
        Op op = Op::Const;
        int p0 = -1;
        int p1 = -1;
        double scalar = 0.0;          // Smul factor
        int axis = -1;                // SumAxis
        std::size_t off = 0, len = 0; // Slice window on the last axis
        bool rg = false;              // reachable from some leaf
    };

    // deque, not vector: value() hands out references that must survive
    // later emits (no reallocation of existing nodes).
    std::deque<Node> nodes_;
    std::map<std::string, int> leaves_;
};

inline const Tensor& Var::val() const { return tape->value(*this); }

// Binary ops. Elementwise ops accept equal shapes, a rank-0 operand against
// anything, or a rank-1 row broadcast against a rank-2 batch.
Var matmul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);  // elementwise
Var operator/(Var a, Var b);  // elementwise

Var operator*(Var a, double s);
Var operator*(double s, Var a);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);

Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var softplus(Var a);
Var sin(Var a);

/// Sum over all elements; rank-0 result.
Var sum(Var a);
/// Sum over one axis of a rank-2 tensor (axis 0 keeps columns, axis 1 keeps
/// rows); a rank-1 tensor only admits axis 0 and yields a rank-0 result.
Var sum(Var a, int axis);
/// Mean over all elements; rank-0 result.
Var mean(Var a);

/// Join along the last axis; leading dimensions must match.
Var concat(Var a, Var b);
/// Window [off, off+len) of the last axis.
Var slice(Var a, std::size_t off, std::size_t len);

}  // namespace dmm
