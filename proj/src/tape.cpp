#include "dmm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dmm {

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    // max(x, 0) + log1p(exp(-|x|)) — never overflows, exact for large |x|.
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

void require_same_tape(Var a, Var b, const char* where) {
    if (a.tape == nullptr || b.tape == nullptr || a.tape != b.tape) {
        throw ContractViolation(std::string(where) + ": operands must live on the same tape");
    }
}

void require_valid(Var a, const char* where) {
    if (!a.valid()) throw ContractViolation(std::string(where) + ": invalid Var");
}

// Is `small` broadcastable to `out`? Legal: identical, rank-0 to anything,
// rank-1 row [D] to rank-2 [B, D].
bool broadcast_ok(const std::vector<std::size_t>& small, const std::vector<std::size_t>& out) {
    if (small == out) return true;
    if (small.empty()) return true;
    if (small.size() == 1 && out.size() == 2 && small[0] == out[1]) return true;
    return false;
}

// Shape of the result of an elementwise op, or throws.
std::vector<std::size_t> elementwise_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (a.same_shape(b)) return a.shape();
    if (broadcast_ok(b.shape(), a.shape())) return a.shape();
    if (broadcast_ok(a.shape(), b.shape())) return b.shape();
    throw ContractViolation(std::string(where) + ": incompatible shapes " + a.shape_str() +
                            " vs " + b.shape_str());
}

// Materialize `t` at shape `out` (assumes broadcast_ok).
Tensor broadcast_to(const Tensor& t, const std::vector<std::size_t>& out) {
    if (t.shape() == out) return t;
    Tensor r(out);
    std::size_t n = r.numel();
    if (t.rank() == 0) {
        double v = t[0];
        for (std::size_t i = 0; i < n; ++i) r[i] = v;
        return r;
    }
    // row broadcast: [D] over [B, D]
    std::size_t d = t.numel();
    for (std::size_t i = 0; i < n; ++i) r[i] = t[i % d];
    return r;
}

// Sum `g` (at out shape) down to `target` shape (assumes broadcast_ok).
Tensor reduce_to(const Tensor& g, const std::vector<std::size_t>& target) {
    if (g.shape() == target) return g;
    Tensor r(target);
    if (target.empty()) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.numel(); ++i) s += g[i];
        r[0] = s;
        return r;
    }
    std::size_t d = r.numel();
    for (std::size_t i = 0; i < g.numel(); ++i) r[i % d] += g[i];
    return r;
}

// C[m,n] += or = A[m,k] * B[k,n] over raw buffers.
void raw_matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                std::size_t n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,k] += G[m,n] * B[k,n]^T
void raw_matmul_bt(const double* g, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* grow = g + i * n;
            const double* brow = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            c[i * k + p] += s;
        }
    }
}

// C[k,n] += A[m,k]^T * G[m,n]
void raw_matmul_at(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* grow = g + i * n;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

// Logical (m, k, n) of a matmul after rank-1 promotion.
struct MatDims {
    std::size_t m, k, n;
    bool a_vec, b_vec;
};

MatDims matmul_dims(const Tensor& a, const Tensor& b) {
    MatDims d{};
    d.a_vec = a.rank() == 1;
    d.b_vec = b.rank() == 1;
    if (a.rank() == 2 && b.rank() == 2) {
        d.m = a.dim(0), d.k = a.dim(1), d.n = b.dim(1);
        if (b.dim(0) != d.k) {
            throw ContractViolation("matmul: inner dimensions disagree, " + a.shape_str() +
                                    " vs " + b.shape_str());
        }
    } else if (a.rank() == 1 && b.rank() == 2) {
        d.m = 1, d.k = a.dim(0), d.n = b.dim(1);
        if (b.dim(0) != d.k) {
            throw ContractViolation("matmul: inner dimensions disagree, " + a.shape_str() +
                                    " vs " + b.shape_str());
        }
    } else if (a.rank() == 2 && b.rank() == 1) {
        d.m = a.dim(0), d.k = a.dim(1), d.n = 1;
        if (b.dim(0) != d.k) {
            throw ContractViolation("matmul: inner dimensions disagree, " + a.shape_str() +
                                    " vs " + b.shape_str());
        }
    } else {
        throw ContractViolation("matmul: ranks must be 1 or 2 with at least one matrix, got " +
                                a.shape_str() + " and " + b.shape_str());
    }
    return d;
}

Tensor unary_map(const Tensor& x, double (*f)(double)) {
    Tensor r(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) r[i] = f(x[i]);
    return r;
}

}  // namespace

Var Tape::leaf(const std::string& name, const Tensor& value) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) {
        const Tensor& bound = nodes_[it->second].value;
        if (!bound.same_shape(value)) {
            throw ContractViolation("Tape::leaf: rebinding '" + name + "' with shape " +
                                    value.shape_str() + ", previously " + bound.shape_str());
        }
        return Var{this, it->second};
    }
    Node n;
    n.value = value;
    n.op = Op::Leaf;
    n.rg = true;
    nodes_.push_back(std::move(n));
    int id = static_cast<int>(nodes_.size()) - 1;
    leaves_.emplace(name, id);
    return Var{this, id};
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = Op::Const;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant_scalar(double v) { return constant(Tensor::scalar(v)); }

const Tensor& Tape::value(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
        throw ContractViolation("Tape::value: Var does not belong to this tape");
    }
    return nodes_[v.id].value;
}

std::vector<std::string> Tape::leaf_names() const {
    std::vector<std::string> out;
    out.reserve(leaves_.size());
    for (const auto& [name, id] : leaves_) out.push_back(name);
    return out;
}

Var Tape::emit(Op op, Tensor value, int p0, int p1, double scalar, int axis, std::size_t off,
               std::size_t len) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.p0 = p0;
    n.p1 = p1;
    n.scalar = scalar;
    n.axis = axis;
    n.off = off;
    n.len = len;
    n.rg = (p0 >= 0 && nodes_[p0].rg) || (p1 >= 0 && nodes_[p1].rg);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

GradMap Tape::gradient(Var output, const std::vector<std::string>& leaf_names) const {
    if (output.tape != this || output.id < 0 || output.id >= static_cast<int>(nodes_.size())) {
        throw ContractViolation("Tape::gradient: output does not belong to this tape");
    }
    if (nodes_[output.id].value.numel() != 1) {
        throw ContractViolation("Tape::gradient: output must be a scalar, got shape " +
                                nodes_[output.id].value.shape_str());
    }

    // Adjoint per node; `touched` marks nodes the sweep has reached (an
    // untouched node contributes nothing, whatever its shape).
    std::vector<Tensor> adj(nodes_.size());
    std::vector<char> touched(nodes_.size(), 0);
    adj[output.id] = Tensor::full(nodes_[output.id].value.shape(), 1.0);
    touched[output.id] = 1;

    auto acc = [&](int id, const Tensor& g) {
        if (id < 0 || !nodes_[id].rg) return;
        if (!touched[id]) {
            adj[id] = Tensor(nodes_[id].value.shape());
            touched[id] = 1;
        }
        for (std::size_t i = 0; i < g.numel(); ++i) adj[id][i] += g[i];
    };

    for (int i = output.id; i >= 0; --i) {
        const Node& node = nodes_[i];
        if (!node.rg || !touched[i]) continue;
        const Tensor& g = adj[i];
        const Tensor* av = node.p0 >= 0 ? &nodes_[node.p0].value : nullptr;
        const Tensor* bv = node.p1 >= 0 ? &nodes_[node.p1].value : nullptr;

        switch (node.op) {
            case Op::Leaf:
            case Op::Const:
                break;
            case Op::MatMul: {
                MatDims d = matmul_dims(*av, *bv);
                Tensor ga(av->shape());
                Tensor gb(bv->shape());
                raw_matmul_bt(g.data(), bv->data(), ga.data(), d.m, d.k, d.n);
                raw_matmul_at(av->data(), g.data(), gb.data(), d.m, d.k, d.n);
                acc(node.p0, ga);
                acc(node.p1, gb);
                break;
            }
            case Op::Add: {
                acc(node.p0, reduce_to(g, av->shape()));
                acc(node.p1, reduce_to(g, bv->shape()));
                break;
            }
            case Op::Sub: {
                acc(node.p0, reduce_to(g, av->shape()));
                Tensor ng(g.shape());
                for (std::size_t j = 0; j < g.numel(); ++j) ng[j] = -g[j];
                acc(node.p1, reduce_to(ng, bv->shape()));
                break;
            }
            case Op::Mul: {
                Tensor bb = broadcast_to(*bv, node.value.shape());
                Tensor aa = broadcast_to(*av, node.value.shape());
                Tensor ga(node.value.shape());
                Tensor gb(node.value.shape());
                for (std::size_t j = 0; j < g.numel(); ++j) {
                    ga[j] = g[j] * bb[j];
                    gb[j] = g[j] * aa[j];
                }
                acc(node.p0, reduce_to(ga, av->shape()));
                acc(node.p1, reduce_to(gb, bv->shape()));
                break;
            }
            case Op::Div: {
                Tensor bb = broadcast_to(*bv, node.value.shape());
                Tensor ga(node.value.shape());
                Tensor gb(node.value.shape());
                for (std::size_t j = 0; j < g.numel(); ++j) {
                    ga[j] = g[j] / bb[j];
                    gb[j] = -g[j] * node.value[j] / bb[j];
                }
                acc(node.p0, reduce_to(ga, av->shape()));
                acc(node.p1, reduce_to(gb, bv->shape()));
                break;
            }
            case Op::Smul: {
                Tensor ga(g.shape());
                for (std::size_t j = 0; j < g.numel(); ++j) ga[j] = g[j] * node.scalar;
                acc(node.p0, ga);
                break;
            }
            case Op::Exp: {
                Tensor ga(g.shape());
                for (std::size_t j = 0; j < g.numel(); ++j) ga[j] = g[j] * node.value[j];
                acc(node.p0, ga);
                break;
            }
            case Op::Log: {
                Tensor ga(g.shape());
                for (std::size_t j = 0; j < g.numel(); ++j) ga[j] = g[j] / (*av)[j];
                acc(node.p0, ga);
                break;
            }
            case Op::Square: {
                Tensor ga(g.shape());
                for (std::size_t j = 0; j < g.numel(); ++j) ga[j] = g[j] * 2.0 * (*av)[j];
                acc(node.p0, ga);
                break;
            }
            case Op::Sqrt: {
                Tensor ga(g.shape());
                for (std::size_t j = 0; j < g.numel(); ++j) ga[j] = g[j] / (2.0 * node.value[j]);
                acc(node.p0, ga);
                break;
            }
            case Op::Tanh: {
                Tensor ga(g.shape());
                for (std::size_t j = 0; j < g.numel(); ++j)
                    ga[j] = g[j] * (1.0 - node.value[j] * node.value[j]);
                acc(node.p0, ga);
                break;
            }
            case Op::Sigmoid: {
                Tensor ga(g.shape());
                for (std::size_t j = 0; j < g.numel(); ++j)
                    ga[j] = g[j] * node.value[j] * (1.0 - node.value[j]);
                acc(node.p0, ga);
                break;
            }
            case Op::Relu: {
                Tensor ga(g.shape());
                for (std::size_t j = 0; j < g.numel(); ++j)
                    ga[j] = (*av)[j] > 0.0 ? g[j] : 0.0;
                acc(node.p0, ga);
                break;
            }
            case Op::Softplus: {
                Tensor ga(g.shape());
                for (std::size_t j = 0; j < g.numel(); ++j)
                    ga[j] = g[j] * stable_sigmoid((*av)[j]);
                acc(node.p0, ga);
                break;
            }
            case Op::Sin: {
                Tensor ga(g.shape());
                for (std::size_t j = 0; j < g.numel(); ++j)
                    ga[j] = g[j] * std::cos((*av)[j]);
                acc(node.p0, ga);
                break;
            }
            case Op::SumAll: {
                acc(node.p0, Tensor::full(av->shape(), g[0]));
                break;
            }
            case Op::SumAxis: {
                Tensor ga(av->shape());
                if (av->rank() == 1) {
                    for (std::size_t j = 0; j < ga.numel(); ++j) ga[j] = g[0];
                } else {
                    std::size_t rows = av->dim(0), cols = av->dim(1);
                    if (node.axis == 0) {
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] = g[c];
                    } else {
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] = g[r];
                    }
                }
                acc(node.p0, ga);
                break;
            }
            case Op::Mean: {
                double s = g[0] / static_cast<double>(av->numel());
                acc(node.p0, Tensor::full(av->shape(), s));
                break;
            }
            case Op::Concat: {
                std::size_t alast = av->shape().back();
                std::size_t blast = bv->shape().back();
                std::size_t olast = alast + blast;
                Tensor ga(av->shape());
                Tensor gb(bv->shape());
                std::size_t rows = node.value.numel() / olast;
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < alast; ++c)
                        ga[r * alast + c] = g[r * olast + c];
                    for (std::size_t c = 0; c < blast; ++c)
                        gb[r * blast + c] = g[r * olast + alast + c];
                }
                acc(node.p0, ga);
                acc(node.p1, gb);
                break;
            }
            case Op::Slice: {
                std::size_t plast = av->shape().back();
                Tensor ga(av->shape());
                std::size_t rows = av->numel() / plast;
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < node.len; ++c)
                        ga[r * plast + node.off + c] = g[r * node.len + c];
                }
                acc(node.p0, ga);
                break;
            }
        }
    }

    GradMap out;
    for (const auto& name : leaf_names) {
        auto it = leaves_.find(name);
        if (it == leaves_.end()) {
            throw ContractViolation("Tape::gradient: leaf '" + name + "' was never bound");
        }
        int id = it->second;
        if (touched[id]) {
            out.emplace(name, adj[id]);
        } else {
            out.emplace(name, Tensor(nodes_[id].value.shape()));
        }
    }
    return out;
}

Var matmul(Var a, Var b) {
    require_same_tape(a, b, "matmul");
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    MatDims d = matmul_dims(av, bv);
    std::vector<std::size_t> oshape;
    if (!d.a_vec && !d.b_vec) {
        oshape = {d.m, d.n};
    } else if (d.a_vec) {
        oshape = {d.n};
    } else {
        oshape = {d.m};
    }
    Tensor out(oshape);
    raw_matmul(av.data(), bv.data(), out.data(), d.m, d.k, d.n, true);
    return a.tape->emit(Op::MatMul, std::move(out), a.id, b.id);
}

namespace {

Var binary_elementwise(Var a, Var b, Op op, const char* name) {
    require_same_tape(a, b, name);
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    auto oshape = elementwise_shape(av, bv, name);
    Tensor aa = broadcast_to(av, oshape);
    Tensor bb = broadcast_to(bv, oshape);
    Tensor out(oshape);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        switch (op) {
            case Op::Add: out[i] = aa[i] + bb[i]; break;
            case Op::Sub: out[i] = aa[i] - bb[i]; break;
            case Op::Mul: out[i] = aa[i] * bb[i]; break;
            case Op::Div: out[i] = aa[i] / bb[i]; break;
            default: break;
        }
    }
    return a.tape->emit(op, std::move(out), a.id, b.id);
}

Var unary(Var a, Op op, double (*f)(double), const char* name) {
    require_valid(a, name);
    Tensor out = unary_map(a.val(), f);
    return a.tape->emit(op, std::move(out), a.id);
}

}  // namespace

Var operator+(Var a, Var b) { return binary_elementwise(a, b, Op::Add, "add"); }
Var operator-(Var a, Var b) { return binary_elementwise(a, b, Op::Sub, "sub"); }
Var operator*(Var a, Var b) { return binary_elementwise(a, b, Op::Mul, "mul"); }
Var operator/(Var a, Var b) { return binary_elementwise(a, b, Op::Div, "div"); }

Var operator*(Var a, double s) {
    require_valid(a, "smul");
    const Tensor& av = a.val();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * s;
    return a.tape->emit(Op::Smul, std::move(out), a.id, -1, s);
}

Var operator*(double s, Var a) { return a * s; }
Var operator-(Var a) { return a * -1.0; }
Var operator+(Var a, double c) { return a + a.tape->constant_scalar(c); }
Var operator+(double c, Var a) { return a.tape->constant_scalar(c) + a; }
Var operator-(Var a, double c) { return a - a.tape->constant_scalar(c); }
Var operator-(double c, Var a) { return a.tape->constant_scalar(c) - a; }

Var exp(Var a) {
    return unary(a, Op::Exp, +[](double x) { return std::exp(x); }, "exp");
}
Var log(Var a) {
    return unary(a, Op::Log, +[](double x) { return std::log(x); }, "log");
}
Var square(Var a) {
    return unary(a, Op::Square, +[](double x) { return x * x; }, "square");
}
Var sqrt(Var a) {
    return unary(a, Op::Sqrt, +[](double x) { return std::sqrt(x); }, "sqrt");
}
Var tanh(Var a) {
    return unary(a, Op::Tanh, +[](double x) { return std::tanh(x); }, "tanh");
}
Var sigmoid(Var a) { return unary(a, Op::Sigmoid, &stable_sigmoid, "sigmoid"); }
Var relu(Var a) {
    return unary(a, Op::Relu, +[](double x) { return x > 0.0 ? x : 0.0; }, "relu");
}
Var softplus(Var a) { return unary(a, Op::Softplus, &stable_softplus, "softplus"); }
Var sin(Var a) {
    return unary(a, Op::Sin, +[](double x) { return std::sin(x); }, "sin");
}

Var sum(Var a) {
    require_valid(a, "sum");
    const Tensor& av = a.val();
    double s = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += av[i];
    return a.tape->emit(Op::SumAll, Tensor::scalar(s), a.id);
}

Var sum(Var a, int axis) {
    require_valid(a, "sum(axis)");
    const Tensor& av = a.val();
    if (av.rank() == 1) {
        if (axis != 0) {
            throw ContractViolation("sum: axis " + std::to_string(axis) +
                                    " out of range for shape " + av.shape_str());
        }
        double s = 0.0;
        for (std::size_t i = 0; i < av.numel(); ++i) s += av[i];
        return a.tape->emit(Op::SumAxis, Tensor::scalar(s), a.id, -1, 0.0, 0);
    }
    if (av.rank() != 2 || (axis != 0 && axis != 1)) {
        throw ContractViolation("sum: axis " + std::to_string(axis) +
                                " out of range for shape " + av.shape_str());
    }
    std::size_t rows = av.dim(0), cols = av.dim(1);
    if (axis == 0) {
        Tensor out({cols});
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out[c] += av[r * cols + c];
        return a.tape->emit(Op::SumAxis, std::move(out), a.id, -1, 0.0, 0);
    }
    Tensor out({rows});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r] += av[r * cols + c];
    return a.tape->emit(Op::SumAxis, std::move(out), a.id, -1, 0.0, 1);
}

Var mean(Var a) {
    require_valid(a, "mean");
    const Tensor& av = a.val();
    if (av.numel() == 0) throw ContractViolation("mean: empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += av[i];
    return a.tape->emit(Op::Mean, Tensor::scalar(s / static_cast<double>(av.numel())), a.id);
}

Var concat(Var a, Var b) {
    require_same_tape(a, b, "concat");
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.rank() == 0 || bv.rank() == 0 || av.rank() != bv.rank()) {
        throw ContractViolation("concat: ranks must match and be >= 1, got " + av.shape_str() +
                                " and " + bv.shape_str());
    }
    if (av.rank() == 2 && av.dim(0) != bv.dim(0)) {
        throw ContractViolation("concat: leading dimensions disagree, " + av.shape_str() +
                                " vs " + bv.shape_str());
    }
    std::size_t alast = av.shape().back();
    std::size_t blast = bv.shape().back();
    auto oshape = av.shape();
    oshape.back() = alast + blast;
    Tensor out(oshape);
    std::size_t rows = out.numel() / oshape.back();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < alast; ++c) out[r * oshape.back() + c] = av[r * alast + c];
        for (std::size_t c = 0; c < blast; ++c)
            out[r * oshape.back() + alast + c] = bv[r * blast + c];
    }
    return a.tape->emit(Op::Concat, std::move(out), a.id, b.id);
}

Var slice(Var a, std::size_t off, std::size_t len) {
    require_valid(a, "slice");
    const Tensor& av = a.val();
    if (av.rank() == 0) throw ContractViolation("slice: rank-0 tensor has no last axis");
    std::size_t last = av.shape().back();
    if (off + len > last || len == 0) {
        throw ContractViolation("slice: window [" + std::to_string(off) + ", " +
                                std::to_string(off + len) + ") out of range for shape " +
                                av.shape_str());
    }
    auto oshape = av.shape();
    oshape.back() = len;
    Tensor out(oshape);
    std::size_t rows = av.numel() / last;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < len; ++c) out[r * len + c] = av[r * last + off + c];
    }
    return a.tape->emit(Op::Slice, std::move(out), a.id, -1, 0.0, -1, off, len);
}

}  // namespace dmm
