#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation in execution order; since each node only
// refers to earlier nodes, walking the tape backwards is a valid topological
// order for the backward pass. Only the primitives needed by the estimators
// are provided.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace grd {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string shape_string(const Matrix& m);
bool all_finite(const Matrix& m);

namespace ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient.
    Var constant(Matrix value);
    /// Leaf whose gradient is collected by backward().
    Var parameter(Matrix value);

    /// Records an op. The node needs a gradient iff any parent does.
    Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);

    /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be 1x1 and
    /// finite; a non-finite loss throws NumericError before any propagation.
    void backward(Var loss);

    const Matrix& value(Var v) const { return nodes_[v.id_].value; }
    /// Gradient of the last backward() target w.r.t. v; zeros if unreachable.
    Matrix grad(Var v) const;

    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    const Matrix& node_value(int id) const { return nodes_[id].value; }
    const Matrix& node_grad(int id) const { return nodes_[id].grad; }

    /// Adds `delta` into the gradient of node `id` (no-op for constants).
    template <typename Derived>
    void accumulate(int id, const Eigen::MatrixBase<Derived>& delta) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) {
            n.grad = delta;
        } else {
            n.grad += delta;
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        Backward backward;
    };
    std::deque<Node> nodes_;  // deque keeps value references stable
};

// Primitives. Binary elementwise ops accept equal shapes, a 1 x cols row
// broadcast on the right operand, or a 1x1 scalar broadcast on the right.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);  // b must be 1x1
Var scale(Var a, double factor);
Var relu(Var a);
Var square(Var a);
Var exp(Var a);
Var sqrt(Var a);
Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);
Var transpose(Var a);
Var concat_cols(Var a, Var b);
Var gather_rows(Var a, std::span<const int> rows);
/// Constant sparse matrix times a.
Var sparse_matmul(const SparseMatrix& s, Var a);
/// Squared Euclidean distances between all row pairs of a: n x n.
Var pairwise_sq_dists(Var a);
/// H a H with H = I - 11^T/n, for square a.
Var double_center(Var a);

Var mse(Var prediction, Var target);

/// Copy of a's value as a constant: blocks gradient flow.
Var detach(Var a);

/// Gradient of a scalar loss with respect to each parameter.
using LossFn = std::function<Var(Tape&, std::span<const Var> params)>;
std::vector<Matrix> loss_gradients(std::span<const Matrix> params, const LossFn& loss_fn);

}  // namespace ad
}  // namespace grd
