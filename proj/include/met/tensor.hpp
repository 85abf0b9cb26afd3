#pragma once

// Dense 2-D tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle to an immutable graph node. Operations record a
// backward closure only when some operand requires a gradient, so inference
// graphs are freed as they go.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace met {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
struct Node {
    Matrix<Scalar> storage;
    const Matrix<Scalar>* external = nullptr;  // parameter leaves alias model storage
    Matrix<Scalar> grad;                       // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    const Matrix<Scalar>& value() const { return external ? *external : storage; }

    Matrix<Scalar>& grad_buffer() {
        if (grad.size() == 0) grad = Matrix<Scalar>::Zero(value().rows(), value().cols());
        return grad;
    }
};

template <typename Scalar>
class Tensor {
public:
    using NodePtr = std::shared_ptr<Node<Scalar>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor constant(Matrix<Scalar> value) {
        auto n = std::make_shared<Node<Scalar>>();
        n->storage = std::move(value);
        return Tensor(n);
    }

    static Tensor parameter(Matrix<Scalar> value) {
        auto n = std::make_shared<Node<Scalar>>();
        n->storage = std::move(value);
        n->requires_grad = true;
        return Tensor(n);
    }

    /// Leaf aliasing external storage, which must outlive the graph and stay
    /// unmodified until backward has run.
    static Tensor view(const Matrix<Scalar>& value, bool requires_grad) {
        auto n = std::make_shared<Node<Scalar>>();
        n->external = &value;
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    const Matrix<Scalar>& value() const { return node_->value(); }

    /// Accumulated gradient; zeros when nothing reached this tensor.
    Matrix<Scalar> grad() const {
        if (node_->grad.size() == 0) return Matrix<Scalar>::Zero(rows(), cols());
        return node_->grad;
    }

    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    std::string shape() const { return "(" + std::to_string(rows()) + ", " + std::to_string(cols()) + ")"; }
    bool requires_grad() const { return node_->requires_grad; }
    const NodePtr& node() const { return node_; }
    Scalar item() const { return value()(0, 0); }

private:
    NodePtr node_;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> record(Matrix<Scalar> value, std::vector<Tensor<Scalar>> operands, const char* op,
                      std::function<void(Node<Scalar>&)> backward) {
    auto n = std::make_shared<Node<Scalar>>();
    n->storage = std::move(value);
    n->op = op;
    for (const auto& t : operands) n->requires_grad = n->requires_grad || t.requires_grad();
    if (n->requires_grad) {
        for (auto& t : operands) n->parents.push_back(t.node());
        n->backward = std::move(backward);
    }
    return Tensor<Scalar>(n);
}

template <typename Scalar>
void accumulate(const std::shared_ptr<Node<Scalar>>& target, const Matrix<Scalar>& g) {
    if (target->requires_grad) target->grad_buffer() += g;
}

inline void require(bool ok, const std::string& op, const std::string& a, const std::string& b) {
    if (!ok) throw ShapeError(op + ": incompatible shapes " + a + " and " + b);
}

}  // namespace detail

/// Product whose row i depends only on row i of `a`, summed in a fixed order
/// over the inner index with exact zeros skipped. Appending rows or zero
/// columns to `a` (and matching rows to `b`) leaves existing rows bit-identical.
template <typename Scalar>
Matrix<Scalar> row_stable_product(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
    Matrix<Scalar> c = Matrix<Scalar>::Zero(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        auto ci = c.row(i);
        for (Eigen::Index k = 0; k < a.cols(); ++k) {
            const Scalar s = a(i, k);
            if (s != Scalar(0)) ci.noalias() += s * b.row(k);
        }
    }
    return c;
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require(a.cols() == b.rows(), "matmul", a.shape(), b.shape());
    return detail::record<Scalar>(row_stable_product(a.value(), b.value()), {a, b}, "matmul", [](Node<Scalar>& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (pa->requires_grad) pa->grad_buffer().noalias() += self.grad * pb->value().transpose();
        if (pb->requires_grad) pb->grad_buffer().noalias() += pa->value().transpose() * self.grad;
    });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.shape(), b.shape());
    return detail::record<Scalar>(a.value() + b.value(), {a, b}, "add", [](Node<Scalar>& self) {
        detail::accumulate(self.parents[0], self.grad);
        detail::accumulate(self.parents[1], self.grad);
    });
}

/// x + 1 x d bias broadcast over rows.
template <typename Scalar>
Tensor<Scalar> add_row(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
    detail::require(bias.rows() == 1 && bias.cols() == x.cols(), "add_row", x.shape(), bias.shape());
    Matrix<Scalar> out = x.value();
    out.rowwise() += bias.value().row(0);
    return detail::record<Scalar>(std::move(out), {x, bias}, "add_row", [](Node<Scalar>& self) {
        detail::accumulate(self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer() += self.grad.colwise().sum();
    });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar s) {
    return detail::record<Scalar>(x.value() * s, {x}, "scale", [s](Node<Scalar>& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += self.grad * s;
    });
}

/// Elementwise product.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a.shape(), b.shape());
    return detail::record<Scalar>(a.value().cwiseProduct(b.value()), {a, b}, "mul", [](Node<Scalar>& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (pa->requires_grad) pa->grad_buffer() += self.grad.cwiseProduct(pb->value());
        if (pb->requires_grad) pb->grad_buffer() += self.grad.cwiseProduct(pa->value());
    });
}

/// Subgradient at 0 is 0.
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
    return detail::record<Scalar>(x.value().cwiseMax(Scalar(0)), {x}, "relu", [](Node<Scalar>& self) {
        const auto& p = self.parents[0];
        if (p->requires_grad)
            p->grad_buffer() += (p->value().array() > Scalar(0)).select(self.grad, Scalar(0)).matrix();
    });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no operands");
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        detail::require(p.rows() == parts.front().rows(), "concat_cols", parts.front().shape(), p.shape());
        cols += p.cols();
    }
    Matrix<Scalar> out(parts.front().rows(), cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        offsets.push_back(at);
        at += p.cols();
    }
    return detail::record<Scalar>(std::move(out), parts, "concat_cols", [offsets](Node<Scalar>& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            const auto& p = self.parents[i];
            if (p->requires_grad) p->grad_buffer() += self.grad.middleCols(offsets[i], p->value().cols());
        }
    });
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > x.cols())
        throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + x.shape());
    return detail::record<Scalar>(x.value().middleCols(start, count), {x}, "slice_cols",
                                  [start, count](Node<Scalar>& self) {
                                      const auto& p = self.parents[0];
                                      if (p->requires_grad) p->grad_buffer().middleCols(start, count) += self.grad;
                                  });
}

/// Split along the last axis into equal parts.
template <typename Scalar>
std::vector<Tensor<Scalar>> split_cols(const Tensor<Scalar>& x, int parts) {
    if (parts <= 0 || x.cols() % parts != 0)
        throw ShapeError("split_cols: " + x.shape() + " not divisible into " + std::to_string(parts) + " parts");
    std::vector<Tensor<Scalar>> out;
    const Eigen::Index w = x.cols() / parts;
    for (int i = 0; i < parts; ++i) out.push_back(slice_cols(x, i * w, w));
    return out;
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
    return detail::record<Scalar>(x.value().transpose(), {x}, "transpose", [](Node<Scalar>& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += self.grad.transpose();
    });
}

/// Sum of all entries as a 1 x 1 tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
    Matrix<Scalar> out(1, 1);
    out(0, 0) = x.value().sum();
    return detail::record<Scalar>(std::move(out), {x}, "sum", [](Node<Scalar>& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer().array() += self.grad(0, 0);
    });
}

/// axis 0 reduces rows (result 1 x cols), axis 1 reduces columns (rows x 1).
template <typename Scalar>
Tensor<Scalar> sum_axis(const Tensor<Scalar>& x, int axis) {
    if (axis != 0 && axis != 1) throw ShapeError("sum_axis: axis must be 0 or 1");
    Matrix<Scalar> out = axis == 0 ? Matrix<Scalar>(x.value().colwise().sum()) : Matrix<Scalar>(x.value().rowwise().sum());
    return detail::record<Scalar>(std::move(out), {x}, "sum_axis", [axis](Node<Scalar>& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->grad_buffer();
        if (axis == 0)
            g.rowwise() += self.grad.row(0);
        else
            g.colwise() += self.grad.col(0);
    });
}

template <typename Scalar>
Tensor<Scalar> mean_axis(const Tensor<Scalar>& x, int axis) {
    const auto n = axis == 0 ? x.rows() : x.cols();
    return scale(sum_axis(x, axis), Scalar(1) / static_cast<Scalar>(n));
}

/// Row i of the result is row ids[i] of the table.
template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, const std::vector<int>& ids) {
    Matrix<Scalar> out(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows())
            throw ShapeError("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                             std::to_string(table.rows()) + " rows");
        out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    }
    return detail::record<Scalar>(std::move(out), {table}, "embedding_lookup", [ids](Node<Scalar>& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    });
}

/// Row softmax of scores + mask, where mask entries are 0 or -inf. Rows with
/// no finite entry produce zeros (and pass back zero gradient). An empty
/// mask means no masking.
template <typename Scalar>
Tensor<Scalar> masked_softmax(const Tensor<Scalar>& scores, const Matrix<Scalar>& mask) {
    const bool masked = mask.size() != 0;
    if (masked)
        detail::require(mask.rows() == scores.rows() && mask.cols() == scores.cols(), "masked_softmax", scores.shape(),
                        "(" + std::to_string(mask.rows()) + ", " + std::to_string(mask.cols()) + ")");
    const auto& s = scores.value();
    Matrix<Scalar> y(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        Scalar hi = -std::numeric_limits<Scalar>::infinity();
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            const Scalar z = masked ? s(i, j) + mask(i, j) : s(i, j);
            y(i, j) = z;
            if (z > hi) hi = z;
        }
        if (hi == -std::numeric_limits<Scalar>::infinity()) {
            y.row(i).setZero();
            continue;
        }
        Scalar total = 0;
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            const Scalar e = y(i, j) == -std::numeric_limits<Scalar>::infinity() ? Scalar(0) : std::exp(y(i, j) - hi);
            y(i, j) = e;
            total += e;
        }
        y.row(i) /= total;
    }
    return detail::record<Scalar>(std::move(y), {scores}, "masked_softmax", [](Node<Scalar>& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        const auto& out = self.storage;
        const Matrix<Scalar> gy = self.grad.cwiseProduct(out);
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = gy.rowwise().sum();
        Matrix<Scalar> dz = gy;
        dz.noalias() -= out.cwiseProduct(dot.replicate(1, out.cols()));
        p->grad_buffer() += dz;
    });
}

/// Per-row (x - mean) / sqrt(var + eps) * gamma + beta with population variance.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps = Scalar(1e-5)) {
    detail::require(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm", x.shape(), gamma.shape());
    detail::require(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm", x.shape(), beta.shape());
    const auto& v = x.value();
    const Eigen::Index n = v.rows(), d = v.cols();
    Matrix<Scalar> xhat(n, d);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar mean = v.row(i).mean();
        const auto centered = (v.row(i).array() - mean).eval();
        const Scalar var = centered.square().mean();
        inv[i] = Scalar(1) / std::sqrt(var + eps);
        xhat.row(i) = centered.matrix() * inv[i];
    }
    Matrix<Scalar> y = xhat;
    y.array().rowwise() *= gamma.value().row(0).array();
    y.rowwise() += beta.value().row(0);
    return detail::record<Scalar>(std::move(y), {x, gamma, beta}, "layer_norm",
                                  [xhat = std::move(xhat), inv = std::move(inv)](Node<Scalar>& self) {
                                      const auto& px = self.parents[0];
                                      const auto& pg = self.parents[1];
                                      const auto& pb = self.parents[2];
                                      const auto& g = self.grad;
                                      if (pb->requires_grad) pb->grad_buffer() += g.colwise().sum();
                                      if (pg->requires_grad) pg->grad_buffer() += g.cwiseProduct(xhat).colwise().sum();
                                      if (!px->requires_grad) return;
                                      Matrix<Scalar> dxhat = g;
                                      dxhat.array().rowwise() *= pg->value().row(0).array();
                                      auto& out = px->grad_buffer();
                                      for (Eigen::Index i = 0; i < g.rows(); ++i) {
                                          const Scalar m1 = dxhat.row(i).mean();
                                          const Scalar m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
                                          out.row(i).array() +=
                                              inv[i] * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
                                      }
                                  });
}

/// Inverted dropout: in training, zero with probability p and scale the
/// survivors by 1 / (1 - p); identity otherwise.
template <typename Scalar, typename Rng>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double p, bool training, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const Scalar keep_scale = Scalar(1.0 / (1.0 - p));
    Matrix<Scalar> mask(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j) mask(i, j) = uniform(rng) < p ? Scalar(0) : keep_scale;
    Matrix<Scalar> out = x.value().cwiseProduct(mask);
    return detail::record<Scalar>(std::move(out), {x}, "dropout", [mask = std::move(mask)](Node<Scalar>& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += self.grad.cwiseProduct(mask);
    });
}

/// Row-wise log softmax.
template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& x) {
    const auto& v = x.value();
    Matrix<Scalar> out(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const Scalar hi = v.row(i).maxCoeff();
        const Scalar lse = hi + std::log((v.row(i).array() - hi).exp().sum());
        out.row(i) = v.row(i).array() - lse;
    }
    return detail::record<Scalar>(std::move(out), {x}, "log_softmax", [](Node<Scalar>& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        const Matrix<Scalar> soft = self.storage.array().exp();
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> total = self.grad.rowwise().sum();
        Matrix<Scalar> dx = self.grad;
        dx.noalias() -= soft.cwiseProduct(total.replicate(1, soft.cols()));
        p->grad_buffer() += dx;
    });
}

/// sum_i w_i * -logp(i, labels[i]); rows with a negative label contribute 0.
template <typename Scalar>
Tensor<Scalar> weighted_nll(const Tensor<Scalar>& logp, const std::vector<int>& labels,
                            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& weights) {
    if (static_cast<Eigen::Index>(labels.size()) != logp.rows() || weights.size() != logp.rows())
        throw ShapeError("weighted_nll: " + std::to_string(labels.size()) + " labels and " +
                         std::to_string(weights.size()) + " weights for scores " + logp.shape());
    Scalar total = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) continue;
        if (labels[i] >= logp.cols())
            throw ShapeError("weighted_nll: label " + std::to_string(labels[i]) + " >= class count " +
                             std::to_string(logp.cols()));
        total += weights[static_cast<Eigen::Index>(i)] * -logp.value()(static_cast<Eigen::Index>(i), labels[i]);
    }
    Matrix<Scalar> out(1, 1);
    out(0, 0) = total;
    return detail::record<Scalar>(std::move(out), {logp}, "weighted_nll", [labels, weights](Node<Scalar>& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->grad_buffer();
        const Scalar up = self.grad(0, 0);
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] >= 0) g(static_cast<Eigen::Index>(i), labels[i]) -= up * weights[static_cast<Eigen::Index>(i)];
    });
}

/// Reverse-mode sweep from a scalar. Gradients accumulate into every
/// reachable node that requires them, in a fixed reverse topological order.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward: loss must be scalar, got " + loss.shape());
    if (!loss.requires_grad()) return;

    std::vector<Node<Scalar>*> order;
    std::unordered_map<Node<Scalar>*, int> state;  // 1 = on stack, 2 = done
    std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{loss.node().get(), 0}};
    state[loss.node().get()] = 1;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<Scalar>* parent = node->parents[next++].get();
            if (!parent->requires_grad) continue;
            auto it = state.find(parent);
            if (it == state.end()) {
                state[parent] = 1;
                stack.emplace_back(parent, 0);
            } else if (it->second == 1) {
                throw std::logic_error("backward: cycle in computation graph");
            }
        } else {
            state[node] = 2;
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_buffer().setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<Scalar>* n = *it;
        if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
}

}  // namespace met
