#include "mdm/autodiff.hpp"

#include "mdm/errors.hpp"
#include "mdm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mdm::ad {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::MatMul: return "matmul";
        case Op::Linear: return "linear";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::MulConst: return "mul_const";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::LeakyRelu: return "leaky_relu";
        case Op::Softplus: return "softplus";
        case Op::Abs: return "abs";
        case Op::Scale: return "scale";
        case Op::AddScalar: return "add_scalar";
        case Op::AddRowBias: return "add_row_bias";
        case Op::ConcatCols: return "concat_cols";
        case Op::Mean: return "mean";
        case Op::Sum: return "sum";
        case Op::LogMeanExp: return "log_mean_exp";
    }
    return "?";
}

std::size_t DiffNode::rows() const {
    return shape.size() == 2 ? shape[0] : 1;
}

std::size_t DiffNode::cols() const {
    if (shape.size() == 2) return shape[1];
    if (shape.size() == 1) return shape[0];
    return 1;
}

const DiffNode& Var::node() const {
    if (tape_ == nullptr) throw ContractError("use of an unbound autodiff variable");
    return tape_->node(id_);
}

double Var::item() const {
    const auto& n = node();
    if (n.data.size() != 1) throw ContractError("item() on node of shape " + to_string(n.shape));
    return n.data[0];
}

Matrix Var::to_matrix() const {
    const auto& n = node();
    return Matrix(n.rows(), n.cols(), n.data);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(DiffNode node) {
    if (node.requires_grad) node.grad.assign(node.data.size(), 0.0);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Shape shape, std::vector<double> data) {
    if (numel(shape) != data.size()) {
        throw ShapeError("constant: shape " + to_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
    }
    DiffNode n;
    n.shape = std::move(shape);
    n.data = std::move(data);
    return push(std::move(n));
}

Var Tape::constant(const Matrix& m) {
    return constant(Shape{m.rows, m.cols}, m.data);
}

Var Tape::variable(Shape shape, std::vector<double> data) {
    if (numel(shape) != data.size()) {
        throw ShapeError("variable: shape " + to_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
    }
    DiffNode n;
    n.shape = std::move(shape);
    n.data = std::move(data);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::parameter(const Shape& shape, std::span<const double> value, std::vector<double>* grad_sink) {
    if (numel(shape) != value.size()) {
        throw ShapeError("parameter: shape " + to_string(shape) + " does not hold " +
                         std::to_string(value.size()) + " values");
    }
    DiffNode n;
    n.shape = shape;
    n.data.assign(value.begin(), value.end());
    n.requires_grad = grad_sink != nullptr;
    n.sink = grad_sink;
    return push(std::move(n));
}

void Tape::clear() { nodes_.clear(); }

namespace {

Tape& same_tape(Var a, Var b) {
    if (a.tape() == nullptr || a.tape() != b.tape()) {
        throw ContractError("autodiff operands belong to different tapes");
    }
    return *a.tape();
}

void require_same_shape(const char* what, Var a, Var b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

DiffNode derived(Op op, Shape shape, std::vector<double> data, std::initializer_list<Var> parents) {
    DiffNode n;
    n.op = op;
    n.shape = std::move(shape);
    n.data = std::move(data);
    for (const Var& p : parents) {
        n.parents.push_back(p.id());
        n.requires_grad = n.requires_grad || p.node().requires_grad;
    }
    return n;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename F>
Var unary(Op op, Var x, F&& f, double attr = 0.0) {
    Tape& tape = *x.tape();
    const auto& in = x.node().data;
    std::vector<double> out(in.size());
    std::transform(in.begin(), in.end(), out.begin(), f);
    DiffNode n = derived(op, x.shape(), std::move(out), {x});
    n.attr = attr;
    return tape.push(std::move(n));
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward ops

Var add(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("add", a, b);
    std::vector<double> out(a.size());
    const auto& x = a.node().data;
    const auto& y = b.node().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return tape.push(derived(Op::Add, a.shape(), std::move(out), {a, b}));
}

Var sub(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    const auto& x = a.node().data;
    const auto& y = b.node().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return tape.push(derived(Op::Sub, a.shape(), std::move(out), {a, b}));
}

Var mul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    const auto& x = a.node().data;
    const auto& y = b.node().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return tape.push(derived(Op::Mul, a.shape(), std::move(out), {a, b}));
}

Var mul_const(Var a, std::vector<double> factor) {
    if (factor.size() != a.size()) {
        throw ShapeError("mul_const: factor of length " + std::to_string(factor.size()) +
                         " for shape " + to_string(a.shape()));
    }
    std::vector<double> out(a.size());
    const auto& x = a.node().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor[i];
    DiffNode n = derived(Op::MulConst, a.shape(), std::move(out), {a});
    n.aux = std::move(factor);
    return a.tape()->push(std::move(n));
}

Var exp(Var x) {
    return unary(Op::Exp, x, [](double v) { return std::exp(v); });
}

Var log(Var x) {
    const auto& in = x.node().data;
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (!(in[i] > 0.0)) {
            std::ostringstream os;
            os << "log: non-positive entry " << in[i] << " at index " << i;
            throw DomainError(os.str());
        }
    }
    return unary(Op::Log, x, [](double v) { return std::log(v); });
}

Var sigmoid(Var x) { return unary(Op::Sigmoid, x, stable_sigmoid); }

Var tanh(Var x) {
    return unary(Op::Tanh, x, [](double v) { return std::tanh(v); });
}

Var leaky_relu(Var x, double slope) {
    return unary(Op::LeakyRelu, x, [slope](double v) { return v > 0.0 ? v : slope * v; }, slope);
}

Var softplus(Var x) { return unary(Op::Softplus, x, stable_softplus); }

Var abs(Var x) {
    return unary(Op::Abs, x, [](double v) { return std::fabs(v); });
}

Var scale(Var x, double factor) {
    return unary(Op::Scale, x, [factor](double v) { return v * factor; }, factor);
}

Var add_scalar(Var x, double offset) {
    return unary(Op::AddScalar, x, [offset](double v) { return v + offset; }, offset);
}

Var elementwise(ElementwiseKind kind, Var a, Var b, double slope) {
    switch (kind) {
        case ElementwiseKind::Add: return add(a, b);
        case ElementwiseKind::Sub: return sub(a, b);
        case ElementwiseKind::Mul: return mul(a, b);
        case ElementwiseKind::Exp: return exp(a);
        case ElementwiseKind::Log: return log(a);
        case ElementwiseKind::Sigmoid: return sigmoid(a);
        case ElementwiseKind::Tanh: return tanh(a);
        case ElementwiseKind::LeakyRelu: return leaky_relu(a, slope);
        case ElementwiseKind::Softplus: return softplus(a);
        case ElementwiseKind::Abs: return abs(a);
    }
    throw ContractError("elementwise: unknown kind");
}

Var matmul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    kernels::gemm_nn(a.value(), b.value(), out, m, k, n);
    return tape.push(derived(Op::MatMul, Shape{m, n}, std::move(out), {a, b}));
}

Var linear(Var x, Var w, Var bias) {
    Tape& tape = same_tape(x, w);
    same_tape(x, bias);
    if (w.shape().size() != 2 || x.cols() != w.cols() || bias.size() != w.rows()) {
        throw ShapeError("linear: input " + to_string(x.shape()) + ", weight " + to_string(w.shape()) +
                         ", bias " + to_string(bias.shape()));
    }
    const std::size_t m = x.rows(), in = x.cols(), out_dim = w.rows();
    std::vector<double> out(m * out_dim);
    kernels::gemm_nt(x.value(), w.value(), out, m, in, out_dim);
    const auto& b = bias.node().data;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < out_dim; ++j) out[i * out_dim + j] += b[j];
    return tape.push(derived(Op::Linear, Shape{m, out_dim}, std::move(out), {x, w, bias}));
}

Var add_row_bias(Var x, Var bias) {
    Tape& tape = same_tape(x, bias);
    if (bias.size() != x.cols()) {
        throw ShapeError("add_row_bias: bias " + to_string(bias.shape()) + " for input " +
                         to_string(x.shape()));
    }
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(x.value().begin(), x.value().end());
    const auto& b = bias.node().data;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
    return tape.push(derived(Op::AddRowBias, x.shape(), std::move(out), {x, bias}));
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no operands");
    Tape& tape = *parts[0].tape();
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const Var& p : parts) {
        same_tape(parts[0], p);
        if (p.rows() != m) {
            throw ShapeError("concat_cols: row mismatch " + to_string(parts[0].shape()) + " vs " +
                             to_string(p.shape()));
        }
        total += p.cols();
    }
    std::vector<double> out(m * total);
    std::size_t offset = 0;
    DiffNode n;
    n.op = Op::ConcatCols;
    n.shape = Shape{m, total};
    for (const Var& p : parts) {
        const std::size_t c = p.cols();
        const auto& src = p.node().data;
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * c), c,
                        out.begin() + static_cast<std::ptrdiff_t>(i * total + offset));
        offset += c;
        n.parents.push_back(p.id());
        n.requires_grad = n.requires_grad || p.node().requires_grad;
    }
    n.data = std::move(out);
    return tape.push(std::move(n));
}

Var sum(Var x) {
    const auto& in = x.node().data;
    if (in.empty()) throw DomainError("sum: empty input");
    double s = 0.0;
    for (double v : in) s += v;
    return x.tape()->push(derived(Op::Sum, Shape{}, {s}, {x}));
}

Var mean(Var x) {
    const auto& in = x.node().data;
    if (in.empty()) throw DomainError("mean: empty input");
    double s = 0.0;
    for (double v : in) s += v;
    return x.tape()->push(derived(Op::Mean, Shape{}, {s / static_cast<double>(in.size())}, {x}));
}

Var log_mean_exp(Var x) {
    const auto& in = x.node().data;
    if (in.empty()) throw DomainError("log_mean_exp: empty input");
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (double v : in) s += std::exp(v - mx);
    const double value = mx + std::log(s / static_cast<double>(in.size()));
    DiffNode n = derived(Op::LogMeanExp, Shape{}, {value}, {x});
    n.attr = value;
    return x.tape()->push(std::move(n));
}

Var reduce(ReduceKind kind, Var x) {
    switch (kind) {
        case ReduceKind::Mean: return mean(x);
        case ReduceKind::Sum: return sum(x);
        case ReduceKind::LogMeanExp: return log_mean_exp(x);
    }
    throw ContractError("reduce: unknown kind");
}

// ---------------------------------------------------------------------------
// Backward

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
    const DiffNode& root = nodes_.at(loss.id());
    if (root.data.size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + to_string(root.shape));
    }
    if (!root.requires_grad) return;

    // Fresh adjoints for this sweep; the results are added to the stored grads
    // at the end so repeated sweeps accumulate exactly.
    std::vector<std::vector<double>> adj(loss.id() + 1);
    adj[loss.id()].assign(1, 1.0);

    auto adjoint = [&](std::size_t id) -> std::vector<double>* {
        DiffNode& n = nodes_[id];
        if (!n.requires_grad) return nullptr;
        if (adj[id].empty()) adj[id].assign(n.data.size(), 0.0);
        return &adj[id];
    };

    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        if (adj[id].empty()) continue;
        const DiffNode& n = nodes_[id];
        const std::vector<double>& g = adj[id];
        const auto& y = n.data;

        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add:
            case Op::Sub: {
                if (auto* ga = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                if (auto* gb = adjoint(n.parents[1])) {
                    const double sign = n.op == Op::Add ? 1.0 : -1.0;
                    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += sign * g[i];
                }
                break;
            }
            case Op::Mul: {
                const auto& a = nodes_[n.parents[0]].data;
                const auto& b = nodes_[n.parents[1]].data;
                if (auto* ga = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b[i];
                if (auto* gb = adjoint(n.parents[1]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a[i];
                break;
            }
            case Op::MulConst: {
                if (auto* ga = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.aux[i];
                break;
            }
            case Op::Exp: {
                if (auto* gx = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i];
                break;
            }
            case Op::Log: {
                const auto& x = nodes_[n.parents[0]].data;
                if (auto* gx = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] / x[i];
                break;
            }
            case Op::Sigmoid: {
                if (auto* gx = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (1.0 - y[i]);
                break;
            }
            case Op::Tanh: {
                if (auto* gx = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case Op::LeakyRelu: {
                const auto& x = nodes_[n.parents[0]].data;
                if (auto* gx = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (x[i] > 0.0 ? 1.0 : n.attr);
                break;
            }
            case Op::Softplus: {
                const auto& x = nodes_[n.parents[0]].data;
                if (auto* gx = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * stable_sigmoid(x[i]);
                break;
            }
            case Op::Abs: {
                const auto& x = nodes_[n.parents[0]].data;
                if (auto* gx = adjoint(n.parents[0])) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const double s = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
                        (*gx)[i] += g[i] * s;
                    }
                }
                break;
            }
            case Op::Scale: {
                if (auto* gx = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * n.attr;
                break;
            }
            case Op::AddScalar: {
                if (auto* gx = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                break;
            }
            case Op::MatMul: {
                const DiffNode& a = nodes_[n.parents[0]];
                const DiffNode& b = nodes_[n.parents[1]];
                const std::size_t m = a.rows(), k = a.cols(), cols = b.cols();
                if (auto* ga = adjoint(n.parents[0])) kernels::gemm_nt(g, b.data, *ga, m, cols, k, true);
                if (auto* gb = adjoint(n.parents[1])) kernels::gemm_tn(a.data, g, *gb, k, m, cols, true);
                break;
            }
            case Op::Linear: {
                const DiffNode& x = nodes_[n.parents[0]];
                const DiffNode& w = nodes_[n.parents[1]];
                const std::size_t m = x.rows(), in = x.cols(), out = w.rows();
                if (auto* gx = adjoint(n.parents[0])) kernels::gemm_nn(g, w.data, *gx, m, out, in, true);
                if (auto* gw = adjoint(n.parents[1])) kernels::gemm_tn(g, x.data, *gw, out, m, in, true);
                if (auto* gb = adjoint(n.parents[2]))
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < out; ++j) (*gb)[j] += g[i * out + j];
                break;
            }
            case Op::AddRowBias: {
                const std::size_t m = n.rows(), cols = n.cols();
                if (auto* gx = adjoint(n.parents[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                if (auto* gb = adjoint(n.parents[1]))
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < cols; ++j) (*gb)[j] += g[i * cols + j];
                break;
            }
            case Op::ConcatCols: {
                const std::size_t m = n.rows(), total = n.cols();
                std::size_t offset = 0;
                for (std::size_t pid : n.parents) {
                    const std::size_t c = nodes_[pid].cols();
                    if (auto* gp = adjoint(pid))
                        for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < c; ++j) (*gp)[i * c + j] += g[i * total + offset + j];
                    offset += c;
                }
                break;
            }
            case Op::Sum: {
                if (auto* gx = adjoint(n.parents[0]))
                    for (double& v : *gx) v += g[0];
                break;
            }
            case Op::Mean: {
                if (auto* gx = adjoint(n.parents[0])) {
                    const double share = g[0] / static_cast<double>(gx->size());
                    for (double& v : *gx) v += share;
                }
                break;
            }
            case Op::LogMeanExp: {
                const auto& x = nodes_[n.parents[0]].data;
                if (auto* gx = adjoint(n.parents[0])) {
                    const double inv_n = 1.0 / static_cast<double>(x.size());
                    for (std::size_t i = 0; i < x.size(); ++i) (*gx)[i] += g[0] * std::exp(x[i] - n.attr) * inv_n;
                }
                break;
            }
        }
    }

    for (std::size_t id = 0; id <= loss.id(); ++id) {
        if (adj[id].empty()) continue;
        DiffNode& n = nodes_[id];
        for (std::size_t i = 0; i < n.grad.size(); ++i) n.grad[i] += adj[id][i];
        if (n.sink != nullptr) {
            if (n.sink->size() != adj[id].size()) n.sink->assign(adj[id].size(), 0.0);
            for (std::size_t i = 0; i < adj[id].size(); ++i) (*n.sink)[i] += adj[id][i];
        }
    }
}

}  // namespace mdm::ad
