#include "tspkit/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tspkit/rng.hpp"

namespace tspkit::num {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Tape

BackwardContext::BackwardContext(Tape& tape, std::size_t node, std::vector<Tensor>& grads)
    : tape_(tape), node_(node), grads_(grads) {}

const Tensor& BackwardContext::output() const { return tape_.nodes_[node_].value; }

const Tensor& BackwardContext::grad_output() const { return grads_[node_]; }

const Tensor& BackwardContext::input(std::size_t k) const {
    return tape_.nodes_[tape_.nodes_[node_].inputs[k]].value;
}

std::size_t BackwardContext::num_inputs() const { return tape_.nodes_[node_].inputs.size(); }

Tensor* BackwardContext::input_grad(std::size_t k) {
    const auto id = tape_.nodes_[node_].inputs[k];
    if (!tape_.nodes_[id].needs_grad) return nullptr;
    auto& g = grads_[id];
    if (g.empty()) g = Tensor(tape_.nodes_[id].value.shape(), 0.0);
    return &g;
}

Var Tape::leaf(Tensor value) {
    Node n;
    n.needs_grad = record_grad_ && value.requires_grad();
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
    value.set_requires_grad(false);
    return leaf(std::move(value));
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    if (record_grad_) {
        for (auto id : inputs) n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
        if (n.needs_grad) {
            n.inputs = std::move(inputs);
            n.backward = std::move(backward);
        }
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Gradients Tape::backward(Var loss) {
    const auto& lv = value(loss);
    if (lv.size() != 1) throw ArgumentError("backward() needs a scalar loss, got shape " + shape_string(lv.shape()));
    std::vector<Tensor> grads(nodes_.size());
    if (nodes_[loss.id].needs_grad) {
        grads[loss.id] = Tensor(lv.shape(), 1.0);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& node = nodes_[i];
            if (grads[i].empty() || !node.backward) continue;
            BackwardContext ctx(*this, i, grads);
            node.backward(ctx);
        }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].value.requires_grad() && grads[i].empty()) grads[i] = Tensor(nodes_[i].value.shape(), 0.0);
    }
    return Gradients(std::move(grads));
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(x.shape()));
    }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_string(A.shape()) + " and " + shape_string(B.shape()));
    }
    const auto m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor out({m, n}, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* row = &out.at(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
            const double a_ip = A.at(i, p);
            if (a_ip == 0.0) continue;
            const double* brow = B.data().data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += a_ip * brow[j];
        }
    }
    return t.record(std::move(out), {a.id, b.id}, [m, k, n](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        const auto& A = ctx.input(0);
        const auto& B = ctx.input(1);
        if (auto* gA = ctx.input_grad(0)) {
            // dA = G B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += G.at(i, j) * B.at(p, j);
                    gA->at(i, p) += s;
                }
        }
        if (auto* gB = ctx.input_grad(1)) {
            // dB = A^T G
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double a_ip = A.at(i, p);
                    if (a_ip == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gB->at(p, j) += a_ip * G.at(i, j);
                }
        }
    });
}

Var add(Tape& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    require_same(A, B, "add");
    Tensor out = A;
    out.set_requires_grad(false);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return t.record(std::move(out), {a.id, b.id}, [](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        for (std::size_t k = 0; k < 2; ++k)
            if (auto* g = ctx.input_grad(k))
                for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i];
    });
}

Var mul(Tape& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    require_same(A, B, "mul");
    Tensor out(A.shape(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
    return t.record(std::move(out), {a.id, b.id}, [](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        const auto& A = ctx.input(0);
        const auto& B = ctx.input(1);
        if (auto* g = ctx.input_grad(0))
            for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i] * B[i];
        if (auto* g = ctx.input_grad(1))
            for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i] * A[i];
    });
}

Var scale(Tape& t, Var x, double factor) {
    Tensor out = t.value(x);
    out.set_requires_grad(false);
    for (auto& v : out.data()) v *= factor;
    return t.record(std::move(out), {x.id}, [factor](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        if (auto* g = ctx.input_grad(0))
            for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += factor * G[i];
    });
}

Var add_col_bias(Tape& t, Var x, Var bias) {
    const auto& X = t.value(x);
    const auto& b = t.value(bias);
    require_rank(X, 2, "add_col_bias");
    if (b.rank() != 1 || b.dim(0) != X.dim(0)) {
        throw ShapeError("add_col_bias: bias " + shape_string(b.shape()) + " does not fit " + shape_string(X.shape()));
    }
    const auto rows = X.dim(0), cols = X.dim(1);
    Tensor out = X;
    out.set_requires_grad(false);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += b[r];
    return t.record(std::move(out), {x.id, bias.id}, [rows, cols](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        if (auto* g = ctx.input_grad(0))
            for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i];
        if (auto* g = ctx.input_grad(1))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) (*g)[r] += G.at(r, c);
    });
}

Var relu(Tape& t, Var x) {
    Tensor out = t.value(x);
    out.set_requires_grad(false);
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return t.record(std::move(out), {x.id}, [](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        const auto& X = ctx.input(0);
        if (auto* g = ctx.input_grad(0))
            for (std::size_t i = 0; i < G.size(); ++i)
                if (X[i] > 0.0) (*g)[i] += G[i];
    });
}

Var conv1d_same(Tape& t, Var x, Var kernel, Var bias) {
    const auto& X = t.value(x);
    const auto& K = t.value(kernel);
    const auto& b = t.value(bias);
    require_rank(X, 2, "conv1d_same");
    if (K.rank() != 3 || K.dim(2) != 3) {
        throw ShapeError("conv1d_same: kernel must be [d_out x d_in x 3], got " + shape_string(K.shape()));
    }
    if (K.dim(1) != X.dim(0)) {
        throw ShapeError("conv1d_same: kernel " + shape_string(K.shape()) + " does not match input " +
                         shape_string(X.shape()));
    }
    if (b.rank() != 1 || b.dim(0) != K.dim(0)) {
        throw ShapeError("conv1d_same: bias " + shape_string(b.shape()) + " does not match kernel " +
                         shape_string(K.shape()));
    }
    const auto d_out = K.dim(0), d_in = K.dim(1), len = X.dim(1);
    Tensor out({d_out, len}, 0.0);
    const double* xd = X.data().data();
    const double* kd = K.data().data();
    double* yd = out.data().data();
    for (std::size_t o = 0; o < d_out; ++o) {
        double* y = yd + o * len;
        for (std::size_t s = 0; s < len; ++s) y[s] = b[o];
        for (std::size_t i = 0; i < d_in; ++i) {
            const double* xi = xd + i * len;
            const double* k = kd + (o * d_in + i) * 3;
            // y[s] += k0 x[s-1] + k1 x[s] + k2 x[s+1]
            for (std::size_t s = 0; s < len; ++s) {
                double acc = k[1] * xi[s];
                if (s > 0) acc += k[0] * xi[s - 1];
                if (s + 1 < len) acc += k[2] * xi[s + 1];
                y[s] += acc;
            }
        }
    }
    return t.record(std::move(out), {x.id, kernel.id, bias.id}, [d_out, d_in, len](BackwardContext& ctx) {
        const double* g = ctx.grad_output().data().data();
        const double* xd = ctx.input(0).data().data();
        const double* kd = ctx.input(1).data().data();
        auto* gx = ctx.input_grad(0);
        auto* gk = ctx.input_grad(1);
        auto* gb = ctx.input_grad(2);
        for (std::size_t o = 0; o < d_out; ++o) {
            const double* go = g + o * len;
            if (gb) {
                double s = 0.0;
                for (std::size_t p = 0; p < len; ++p) s += go[p];
                (*gb)[o] += s;
            }
            for (std::size_t i = 0; i < d_in; ++i) {
                const double* xi = xd + i * len;
                const std::size_t kbase = (o * d_in + i) * 3;
                if (gk) {
                    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
                    for (std::size_t p = 0; p < len; ++p) {
                        s1 += go[p] * xi[p];
                        if (p > 0) s0 += go[p] * xi[p - 1];
                        if (p + 1 < len) s2 += go[p] * xi[p + 1];
                    }
                    (*gk)[kbase] += s0;
                    (*gk)[kbase + 1] += s1;
                    (*gk)[kbase + 2] += s2;
                }
                if (gx) {
                    double* gxi = gx->data().data() + i * len;
                    const double* k = kd + kbase;
                    for (std::size_t p = 0; p < len; ++p) {
                        gxi[p] += k[1] * go[p];
                        if (p > 0) gxi[p - 1] += k[0] * go[p];
                        if (p + 1 < len) gxi[p + 1] += k[2] * go[p];
                    }
                }
            }
        }
    });
}

Var mean_over_time(Tape& t, Var x) {
    const auto& X = t.value(x);
    require_rank(X, 2, "mean_over_time");
    const auto rows = X.dim(0), cols = X.dim(1);
    Tensor out({rows}, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += X.at(r, c);
        out[r] = s / static_cast<double>(cols);
    }
    return t.record(std::move(out), {x.id}, [rows, cols](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        if (auto* g = ctx.input_grad(0)) {
            const double inv = 1.0 / static_cast<double>(cols);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) g->at(r, c) += G[r] * inv;
        }
    });
}

Var concat(Tape& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    require_rank(A, 1, "concat");
    require_rank(B, 1, "concat");
    const auto p = A.size();
    std::vector<double> v(A.values());
    v.insert(v.end(), B.values().begin(), B.values().end());
    return t.record(Tensor::vector(std::move(v)), {a.id, b.id}, [p](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        if (auto* g = ctx.input_grad(0))
            for (std::size_t i = 0; i < p; ++i) (*g)[i] += G[i];
        if (auto* g = ctx.input_grad(1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += G[p + i];
    });
}

Var slice(Tape& t, Var x, std::size_t offset, Shape shape) {
    const auto& X = t.value(x);
    const auto n = shape_size(shape);
    if (offset + n > X.size()) {
        throw ShapeError("slice: " + shape_string(shape) + " at offset " + std::to_string(offset) +
                         " exceeds " + shape_string(X.shape()));
    }
    std::vector<double> v(X.values().begin() + static_cast<std::ptrdiff_t>(offset),
                          X.values().begin() + static_cast<std::ptrdiff_t>(offset + n));
    return t.record(Tensor(std::move(shape), std::move(v)), {x.id}, [offset, n](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        if (auto* g = ctx.input_grad(0))
            for (std::size_t i = 0; i < n; ++i) (*g)[offset + i] += G[i];
    });
}

Var reshape(Tape& t, Var x, Shape shape) {
    const auto& X = t.value(x);
    if (shape_size(shape) != X.size()) {
        throw ShapeError("reshape: cannot view " + shape_string(X.shape()) + " as " + shape_string(shape));
    }
    return t.record(Tensor(std::move(shape), X.values()), {x.id}, [](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        if (auto* g = ctx.input_grad(0))
            for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i];
    });
}

namespace {

const Shape& pooled_shape(Tape& t, std::span<const Var> rows, const char* op) {
    if (rows.empty()) throw ArgumentError(std::string(op) + ": empty row list");
    const auto& s = t.shape(rows[0]);
    for (auto r : rows) {
        if (t.shape(r) != s) {
            throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(s) + " vs " +
                             shape_string(t.shape(r)));
        }
    }
    return s;
}

std::vector<std::size_t> ids_of(std::span<const Var> rows) {
    std::vector<std::size_t> ids;
    ids.reserve(rows.size());
    for (auto r : rows) ids.push_back(r.id);
    return ids;
}

}  // namespace

Var elementwise_max(Tape& t, std::span<const Var> rows) {
    Shape shape = pooled_shape(t, rows, "elementwise_max");
    Tensor out = t.value(rows[0]);
    out.set_requires_grad(false);
    std::vector<std::size_t> winner(out.size(), 0);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& v = t.value(rows[r]);
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (v[i] > out[i]) {
                out[i] = v[i];
                winner[i] = r;
            }
        }
    }
    return t.record(std::move(out), ids_of(rows), [winner = std::move(winner)](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        for (std::size_t i = 0; i < G.size(); ++i)
            if (auto* g = ctx.input_grad(winner[i])) (*g)[i] += G[i];
    });
}

Var elementwise_mean(Tape& t, std::span<const Var> rows) {
    Shape shape = pooled_shape(t, rows, "elementwise_mean");
    Tensor out(shape, 0.0);
    const double inv = 1.0 / static_cast<double>(rows.size());
    // Sorted per-coordinate summation keeps the result exactly invariant to row order.
    std::vector<double> column(rows.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t r = 0; r < rows.size(); ++r) column[r] = t.value(rows[r])[i];
        std::sort(column.begin(), column.end());
        double s = 0.0;
        for (double v : column) s += v;
        out[i] = s * inv;
    }
    return t.record(std::move(out), ids_of(rows), [inv](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        for (std::size_t k = 0; k < ctx.num_inputs(); ++k)
            if (auto* g = ctx.input_grad(k))
                for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i] * inv;
    });
}

Var sum(Tape& t, Var x) {
    double s = 0.0;
    for (double v : t.value(x).data()) s += v;
    return t.record(Tensor::scalar(s), {x.id}, [](BackwardContext& ctx) {
        const double g0 = ctx.grad_output()[0];
        if (auto* g = ctx.input_grad(0))
            for (auto& v : g->data()) v += g0;
    });
}

Var sum_scalars(Tape& t, std::span<const Var> terms) {
    if (terms.empty()) throw ArgumentError("sum_scalars: no terms");
    double s = 0.0;
    for (auto v : terms) {
        const auto& x = t.value(v);
        if (x.size() != 1) throw ShapeError("sum_scalars: non-scalar term " + shape_string(x.shape()));
        s += x[0];
    }
    return t.record(Tensor::scalar(s), ids_of(terms), [](BackwardContext& ctx) {
        const double g0 = ctx.grad_output()[0];
        for (std::size_t k = 0; k < ctx.num_inputs(); ++k)
            if (auto* g = ctx.input_grad(k)) (*g)[0] += g0;
    });
}

Var linear(Tape& t, Var x, Var weight, Var bias) {
    const auto& X = t.value(x);
    const auto& W = t.value(weight);
    const auto& b = t.value(bias);
    if (X.rank() != 1 || W.rank() != 2 || W.dim(0) != X.dim(0) || b.rank() != 1 || b.dim(0) != W.dim(1)) {
        throw ShapeError("linear: incompatible shapes x" + shape_string(X.shape()) + " W" + shape_string(W.shape()) +
                         " b" + shape_string(b.shape()));
    }
    const auto n = W.dim(0), m = W.dim(1);
    Tensor out = b;
    out.set_requires_grad(false);
    for (std::size_t i = 0; i < n; ++i) {
        const double xi = X[i];
        if (xi == 0.0) continue;
        const double* w = W.data().data() + i * m;
        for (std::size_t j = 0; j < m; ++j) out[j] += xi * w[j];
    }
    return t.record(std::move(out), {x.id, weight.id, bias.id}, [n, m](BackwardContext& ctx) {
        const auto& G = ctx.grad_output();
        const auto& X = ctx.input(0);
        const auto& W = ctx.input(1);
        if (auto* g = ctx.input_grad(0))
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < m; ++j) s += W.at(i, j) * G[j];
                (*g)[i] += s;
            }
        if (auto* g = ctx.input_grad(1))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) g->at(i, j) += X[i] * G[j];
        if (auto* g = ctx.input_grad(2))
            for (std::size_t j = 0; j < m; ++j) (*g)[j] += G[j];
    });
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    if (p.empty()) return p;
    const double mx = *std::max_element(p.begin(), p.end());
    double z = 0.0;
    for (auto& v : p) {
        v = std::exp(v - mx);
        z += v;
    }
    for (auto& v : p) v /= z;
    return p;
}

Var softmax_cross_entropy(Tape& t, Var logits, std::size_t label) {
    const auto& z = t.value(logits);
    require_rank(z, 1, "softmax_cross_entropy");
    if (label >= z.size()) {
        throw ArgumentError("softmax_cross_entropy: label " + std::to_string(label) + " out of range for " +
                            std::to_string(z.size()) + " classes");
    }
    const double mx = *std::max_element(z.data().begin(), z.data().end());
    double s = 0.0;
    for (double v : z.data()) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    const double loss = std::max(0.0, lse - z[label]);
    return t.record(Tensor::scalar(loss), {logits.id}, [label](BackwardContext& ctx) {
        const double g0 = ctx.grad_output()[0];
        if (auto* g = ctx.input_grad(0)) {
            const auto p = softmax(ctx.input(0).data());
            for (std::size_t i = 0; i < p.size(); ++i) (*g)[i] += g0 * (p[i] - (i == label ? 1.0 : 0.0));
        }
    });
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

double eval_loss(const LossBuilder& build, const std::vector<double>& point) {
    Tape tape(false);
    auto p = tape.constant(Tensor::vector(point));
    return tape.value(build(tape, p)).item();
}

std::vector<double> eval_grad(const LossBuilder& build, const std::vector<double>& point) {
    Tape tape;
    auto p = tape.leaf(Tensor::vector(point).set_requires_grad(true));
    auto loss = build(tape, p);
    auto grads = tape.backward(loss);
    return grads[p].values();
}

double rel_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    return std::abs(analytic - numeric) / denom;
}

}  // namespace

GradCheckReport gradient_check(const LossBuilder& build, std::vector<double> point, std::size_t coords, double h,
                               std::uint64_t seed) {
    GradCheckReport report;
    report.h = h;
    const auto n = point.size();
    if (n == 0) return report;

    std::vector<std::size_t> picks;
    if (coords >= n) {
        picks.resize(n);
        for (std::size_t i = 0; i < n; ++i) picks[i] = i;
    } else {
        Rng rng(seed);
        for (std::size_t i = 0; i < coords; ++i) picks.push_back(rng.uniform_index(n));
    }

    auto grad = eval_grad(build, point);
    Rng nudge_rng(seed ^ 0x5bd1e995ULL);
    for (auto idx : picks) {
        double err = 0.0;
        for (int attempt = 0; attempt < 8; ++attempt) {
            auto probe = [&](double delta) {
                auto q = point;
                q[idx] += delta;
                return eval_loss(build, q);
            };
            const double fp1 = probe(h), fm1 = probe(-h);
            const double fp2 = probe(2 * h), fm2 = probe(-2 * h);
            const double cd1 = (fp1 - fm1) / (2 * h);
            const double cd2 = (fp2 - fm2) / (4 * h);
            const bool kink = std::abs(cd1 - cd2) > 1e-4 * std::max(1.0, std::abs(cd1));
            if (kink && attempt + 1 < 8) {
                point[idx] += (nudge_rng.uniform() + 0.5) * 1e-3;
                grad = eval_grad(build, point);
                ++report.nudges;
                continue;
            }
            err = rel_error(grad[idx], cd1);
            break;
        }
        report.max_rel_error = std::max(report.max_rel_error, err);
        ++report.coords_checked;
    }
    return report;
}

}  // namespace tspkit::num
