#include "grd/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace grd {

std::string shape_string(const Matrix& m) {
    std::ostringstream os;
    os << "(" << m.rows() << ", " << m.cols() << ")";
    return os.str();
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

namespace ad {

const Matrix& Var::value() const {
    if (tape_ == nullptr) throw std::logic_error("Var: use of an unbound variable");
    return tape_->value(*this);
}

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) {
        if (p.tape_ != this) throw std::logic_error("Tape: operand recorded on a different tape");
        needs = needs || nodes_[p.id_].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(Var loss) {
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw ShapeError("backward: loss must be 1x1, got " + shape_string(lv));
    }
    if (!std::isfinite(lv(0, 0))) throw NumericError("backward: non-finite loss");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[loss.id_].needs_grad) return;
    nodes_[loss.id_].grad = Matrix::Ones(1, 1);
    for (int id = loss.id_; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.backward && n.grad.size() != 0) n.backward(*this, id);
    }
}

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_[v.id_];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

namespace {

enum class Broadcast { Same, Row, Scalar };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Same;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                     shape_string(b));
}

// Reduces an upstream gradient to the shape of a broadcast operand.
Matrix reduce_to(const Matrix& g, Broadcast kind) {
    switch (kind) {
        case Broadcast::Same: return g;
        case Broadcast::Row: return g.colwise().sum();
        case Broadcast::Scalar: return Matrix::Constant(1, 1, g.sum());
    }
    return g;
}

Matrix expand(const Matrix& b, Broadcast kind, Eigen::Index rows, Eigen::Index cols) {
    switch (kind) {
        case Broadcast::Same: return b;
        case Broadcast::Row: return b.replicate(rows, 1);
        case Broadcast::Scalar: return Matrix::Constant(rows, cols, b(0, 0));
    }
    return b;
}

}  // namespace

Var matmul(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw ShapeError("matmul: " + shape_string(av) + " x " + shape_string(bv));
    }
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(av * bv, {a, b}, [ia, ib](Tape& t, int self) {
        const Matrix& g = t.node_grad(self);
        if (t.needs_grad(ia)) t.accumulate(ia, g * t.node_value(ib).transpose());
        if (t.needs_grad(ib)) t.accumulate(ib, t.node_value(ia).transpose() * g);
    });
}

Var add(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const Broadcast kind = broadcast_kind(av, bv, "add");
    Matrix out = av + expand(bv, kind, av.rows(), av.cols());
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), {a, b}, [ia, ib, kind](Tape& t, int self) {
        const Matrix& g = t.node_grad(self);
        t.accumulate(ia, g);
        if (t.needs_grad(ib)) t.accumulate(ib, reduce_to(g, kind));
    });
}

Var sub(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const Broadcast kind = broadcast_kind(av, bv, "sub");
    Matrix out = av - expand(bv, kind, av.rows(), av.cols());
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), {a, b}, [ia, ib, kind](Tape& t, int self) {
        const Matrix& g = t.node_grad(self);
        t.accumulate(ia, g);
        if (t.needs_grad(ib)) t.accumulate(ib, -reduce_to(g, kind));
    });
}

Var mul(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const Broadcast kind = broadcast_kind(av, bv, "mul");
    Matrix bx = expand(bv, kind, av.rows(), av.cols());
    Matrix out = av.cwiseProduct(bx);
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), {a, b}, [ia, ib, kind](Tape& t, int self) {
        const Matrix& g = t.node_grad(self);
        const Matrix& av = t.node_value(ia);
        const Matrix& bv = t.node_value(ib);
        if (t.needs_grad(ia)) {
            t.accumulate(ia, g.cwiseProduct(expand(bv, kind, av.rows(), av.cols())));
        }
        if (t.needs_grad(ib)) t.accumulate(ib, reduce_to(g.cwiseProduct(av), kind));
    });
}

Var div(Var a, Var b) {
    const Matrix& bv = b.value();
    if (bv.rows() != 1 || bv.cols() != 1) throw ShapeError("div: divisor must be 1x1");
    const double d = bv(0, 0);
    Matrix out = a.value() / d;
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), {a, b}, [ia, ib, d](Tape& t, int self) {
        const Matrix& g = t.node_grad(self);
        t.accumulate(ia, g / d);
        if (t.needs_grad(ib)) {
            const double dd = -(g.cwiseProduct(t.node_value(ia))).sum() / (d * d);
            t.accumulate(ib, Matrix::Constant(1, 1, dd));
        }
    });
}

Var scale(Var a, double factor) {
    const int ia = a.id();
    return a.tape()->record(a.value() * factor, {a}, [ia, factor](Tape& t, int self) {
        t.accumulate(ia, t.node_grad(self) * factor);
    });
}

Var relu(Var a) {
    const int ia = a.id();
    return a.tape()->record(a.value().cwiseMax(0.0), {a}, [ia](Tape& t, int self) {
        const Matrix& x = t.node_value(ia);
        // Subgradient 0 at the kink.
        t.accumulate(ia, t.node_grad(self).cwiseProduct((x.array() > 0.0).cast<double>().matrix()));
    });
}

Var square(Var a) {
    const int ia = a.id();
    return a.tape()->record(a.value().cwiseAbs2(), {a}, [ia](Tape& t, int self) {
        t.accumulate(ia, 2.0 * t.node_grad(self).cwiseProduct(t.node_value(ia)));
    });
}

Var exp(Var a) {
    const int ia = a.id();
    Matrix out = a.value().array().exp().matrix();
    return a.tape()->record(std::move(out), {a}, [ia](Tape& t, int self) {
        t.accumulate(ia, t.node_grad(self).cwiseProduct(t.node_value(self)));
    });
}

Var sqrt(Var a) {
    const int ia = a.id();
    if ((a.value().array() < 0.0).any()) throw NumericError("sqrt: negative input");
    Matrix out = a.value().cwiseSqrt();
    return a.tape()->record(std::move(out), {a}, [ia](Tape& t, int self) {
        const Matrix& y = t.node_value(self);
        t.accumulate(ia, (t.node_grad(self).array() / (2.0 * y.array())).matrix());
    });
}

Var sum(Var a) {
    const int ia = a.id();
    const Eigen::Index r = a.rows(), c = a.cols();
    return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), {a},
                            [ia, r, c](Tape& t, int self) {
                                t.accumulate(ia, Matrix::Constant(r, c, t.node_grad(self)(0, 0)));
                            });
}

Var mean(Var a) {
    const int ia = a.id();
    const Eigen::Index r = a.rows(), c = a.cols();
    const double n = static_cast<double>(r * c);
    if (n == 0) throw ShapeError("mean: empty input");
    return a.tape()->record(Matrix::Constant(1, 1, a.value().sum() / n), {a},
                            [ia, r, c, n](Tape& t, int self) {
                                t.accumulate(ia, Matrix::Constant(r, c, t.node_grad(self)(0, 0) / n));
                            });
}

Var row_sum(Var a) {
    const int ia = a.id();
    const Eigen::Index c = a.cols();
    Matrix out = a.value().rowwise().sum();
    return a.tape()->record(std::move(out), {a}, [ia, c](Tape& t, int self) {
        t.accumulate(ia, t.node_grad(self).replicate(1, c));
    });
}

Var transpose(Var a) {
    const int ia = a.id();
    Matrix out = a.value().transpose();
    return a.tape()->record(std::move(out), {a}, [ia](Tape& t, int self) {
        t.accumulate(ia, t.node_grad(self).transpose());
    });
}

Var concat_cols(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() != bv.rows()) {
        throw ShapeError("concat_cols: " + shape_string(av) + " and " + shape_string(bv));
    }
    Matrix out(av.rows(), av.cols() + bv.cols());
    out << av, bv;
    const int ia = a.id(), ib = b.id();
    const Eigen::Index ca = av.cols(), cb = bv.cols();
    return a.tape()->record(std::move(out), {a, b}, [ia, ib, ca, cb](Tape& t, int self) {
        const Matrix& g = t.node_grad(self);
        if (t.needs_grad(ia)) t.accumulate(ia, g.leftCols(ca));
        if (t.needs_grad(ib)) t.accumulate(ib, g.rightCols(cb));
    });
}

Var gather_rows(Var a, std::span<const int> rows) {
    const Matrix& av = a.value();
    Matrix out(static_cast<Eigen::Index>(rows.size()), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= av.rows()) throw ShapeError("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
    }
    const int ia = a.id();
    std::vector<int> idx(rows.begin(), rows.end());
    const Eigen::Index r = av.rows(), c = av.cols();
    return a.tape()->record(std::move(out), {a}, [ia, idx = std::move(idx), r, c](Tape& t, int self) {
        const Matrix& g = t.node_grad(self);
        Matrix acc = Matrix::Zero(r, c);
        for (std::size_t i = 0; i < idx.size(); ++i) acc.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
        t.accumulate(ia, acc);
    });
}

// `s` must outlive the tape.
Var sparse_matmul(const SparseMatrix& s, Var a) {
    const Matrix& av = a.value();
    if (s.cols() != av.rows()) {
        throw ShapeError("sparse_matmul: sparse cols " + std::to_string(s.cols()) + " vs " +
                         shape_string(av));
    }
    Matrix out = s * av;
    const int ia = a.id();
    const SparseMatrix* sp = &s;
    return a.tape()->record(std::move(out), {a}, [ia, sp](Tape& t, int self) {
        t.accumulate(ia, Matrix(sp->transpose() * t.node_grad(self)));
    });
}

Var pairwise_sq_dists(Var a) {
    // Direct differences: the |a|^2 + |b|^2 - 2ab expansion loses all
    // precision for rows that are close relative to their norm.
    const Matrix& av = a.value();
    const Eigen::Index n = av.rows();
    Matrix out = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            out(i, j) = out(j, i) = (av.row(i) - av.row(j)).squaredNorm();
        }
    }
    const int ia = a.id();
    return a.tape()->record(std::move(out), {a}, [ia](Tape& t, int self) {
        const Matrix& g = t.node_grad(self);
        const Matrix& x = t.node_value(ia);
        Matrix grad = Matrix::Zero(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
                const double w = 2.0 * (g(i, j) + g(j, i));
                const Eigen::RowVectorXd diff = w * (x.row(i) - x.row(j));
                grad.row(i) += diff;
                grad.row(j) -= diff;
            }
        }
        t.accumulate(ia, grad);
    });
}

namespace {

Matrix center(const Matrix& m) {
    const Eigen::RowVectorXd col_means = m.colwise().mean();
    const Vector row_means = m.rowwise().mean();
    const double grand = m.mean();
    Matrix out = m;
    out.rowwise() -= col_means;
    out.colwise() -= row_means;
    out.array() += grand;
    return out;
}

}  // namespace

Var double_center(Var a) {
    const Matrix& av = a.value();
    if (av.rows() != av.cols()) throw ShapeError("double_center: matrix must be square");
    const int ia = a.id();
    // H is symmetric, so the adjoint of A -> HAH is G -> HGH.
    return a.tape()->record(center(av), {a}, [ia](Tape& t, int self) {
        t.accumulate(ia, center(t.node_grad(self)));
    });
}

Var mse(Var prediction, Var target) {
    if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
        throw ShapeError("mse: " + shape_string(prediction.value()) + " vs " +
                         shape_string(target.value()));
    }
    return mean(square(sub(prediction, target)));
}

Var detach(Var a) { return a.tape()->constant(a.value()); }

std::vector<Matrix> loss_gradients(std::span<const Matrix> params, const LossFn& loss_fn) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Matrix& p : params) vars.push_back(tape.parameter(p));
    Var loss = loss_fn(tape, vars);
    tape.backward(loss);
    std::vector<Matrix> grads;
    grads.reserve(vars.size());
    for (const Var& v : vars) grads.push_back(tape.grad(v));
    return grads;
}

}  // namespace ad
}  // namespace grd
