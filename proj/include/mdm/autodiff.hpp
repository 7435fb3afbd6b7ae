#pragma once

// Tape-based reverse-mode differentiation over dense row-major arrays.
//
// Nodes are appended to a Tape in creation order, so the tape is always in
// topological order and backward() is a single reverse sweep. Rank-2 shapes
// are [rows, cols]; rank-1 shapes are treated as one row; rank 0 is a scalar.
// The only broadcast supported is adding a bias row to every row of a matrix.

#include "mdm/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mdm::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    Linear,
    Add,
    Sub,
    Mul,
    MulConst,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    LeakyRelu,
    Softplus,
    Abs,
    Scale,
    AddScalar,
    AddRowBias,
    ConcatCols,
    Mean,
    Sum,
    LogMeanExp,
};

const char* op_name(Op op);

struct DiffNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized like data when requires_grad
    Op op = Op::Leaf;
    std::vector<std::size_t> parents;
    bool requires_grad = false;
    double attr = 0.0;           // slope, scalar operand or cached reduction value
    std::vector<double> aux;     // constant operand of MulConst
    std::vector<double>* sink = nullptr;  // external gradient accumulator (parameter leaves)

    [[nodiscard]] std::size_t rows() const;
    [[nodiscard]] std::size_t cols() const;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until the tape is cleared.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    [[nodiscard]] Tape* tape() const { return tape_; }
    [[nodiscard]] std::size_t id() const { return id_; }
    [[nodiscard]] const DiffNode& node() const;
    [[nodiscard]] const Shape& shape() const { return node().shape; }
    [[nodiscard]] std::span<const double> value() const { return node().data; }
    [[nodiscard]] std::span<const double> grad() const { return node().grad; }
    [[nodiscard]] std::size_t rows() const { return node().rows(); }
    [[nodiscard]] std::size_t cols() const { return node().cols(); }
    [[nodiscard]] std::size_t size() const { return node().data.size(); }
    /// Value of a single-element node.
    [[nodiscard]] double item() const;
    [[nodiscard]] Matrix to_matrix() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Shape shape, std::vector<double> data);
    Var constant(const Matrix& m);
    /// Free leaf that records its own gradient.
    Var variable(Shape shape, std::vector<double> data);
    /// Leaf backed by externally owned storage. When `grad_sink` is non-null
    /// backward() adds this leaf's gradient into it.
    Var parameter(const Shape& shape, std::span<const double> value, std::vector<double>* grad_sink);

    /// Reverse sweep from a single-element node. Gradients accumulate into
    /// existing node grads and parameter sinks; nothing is reset.
    void backward(Var loss);

    /// Drops every node. Outstanding Vars become invalid.
    void clear();

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] const DiffNode& node(std::size_t id) const { return nodes_.at(id); }

    // Used by the op constructors.
    Var push(DiffNode node);
    DiffNode& mutable_node(std::size_t id) { return nodes_[id]; }

private:
    std::vector<DiffNode> nodes_;
};

// Binary elementwise ops on equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Elementwise product with a constant array (dropout masks).
Var mul_const(Var a, std::vector<double> factor);

Var exp(Var x);
/// Throws DomainError naming the first non-positive entry.
Var log(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var leaky_relu(Var x, double slope = 0.01);
Var softplus(Var x);
Var abs(Var x);
Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);

enum class ElementwiseKind { Add, Sub, Mul, Exp, Log, Sigmoid, Tanh, LeakyRelu, Softplus, Abs };
/// Dispatching form over the kinds above. Unary kinds ignore `b`.
Var elementwise(ElementwiseKind kind, Var a, Var b = {}, double slope = 0.01);

/// [m x k] * [k x n]
Var matmul(Var a, Var b);
/// x[m x in] * w[out x in]^T + bias[out]
Var linear(Var x, Var w, Var bias);
/// x[m x n] + bias[n] on every row.
Var add_row_bias(Var x, Var bias);
/// Column-wise concatenation of matrices with equal row counts.
Var concat_cols(std::span<const Var> parts);

enum class ReduceKind { Mean, Sum, LogMeanExp };
Var mean(Var x);
Var sum(Var x);
/// m + log(mean(exp(x - m))) with m = max(x).
Var log_mean_exp(Var x);
Var reduce(ReduceKind kind, Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace mdm::ad
