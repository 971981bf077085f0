#pragma once

// Dense 64-bit tensors with a tape-based reverse-mode autodiff.
//
// A Tape records every primitive applied to its nodes. Values are owned by the
// tape; callers hold lightweight Var handles. A tape and its Vars must stay on
// one thread. Distinct tapes are independent.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tspkit::num {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor scalar(double v);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    /// Value of a single-element tensor.
    double item() const;

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool flag) {
        requires_grad_ = flag;
        return *this;
    }

    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
    bool requires_grad_ = false;
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    std::size_t id = 0;
};

/// View handed to a primitive's backward rule.
class BackwardContext {
public:
    BackwardContext(Tape& tape, std::size_t node, std::vector<Tensor>& grads);

    const Tensor& output() const;
    const Tensor& grad_output() const;
    const Tensor& input(std::size_t k) const;
    std::size_t num_inputs() const;
    /// Gradient accumulator for input k, or nullptr when that input needs no gradient.
    Tensor* input_grad(std::size_t k);

private:
    Tape& tape_;
    std::size_t node_;
    std::vector<Tensor>& grads_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

class Gradients {
public:
    Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
    const Tensor& operator[](Var v) const { return grads_.at(v.id); }

private:
    std::vector<Tensor> grads_;
};

class Tape {
public:
    /// With record_grad = false no backward rules are kept (inference only).
    explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Adds an input node; it is differentiated if value.requires_grad().
    Var leaf(Tensor value);
    Var constant(Tensor value);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
    bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
    std::size_t size() const { return nodes_.size(); }
    bool recording() const { return record_grad_; }

    /// Records the result of a primitive. Used by the operations below.
    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    /// Reverse sweep from a scalar node. Every requires_grad leaf gets an
    /// entry (zeros when unreachable).
    Gradients backward(Var loss);

private:
    friend class BackwardContext;

    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    bool record_grad_;
};

// Primitives. Shapes are checked eagerly; errors name the offending shapes.

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double factor);
/// x[d x L] + b[d] broadcast over columns.
Var add_col_bias(Tape& t, Var x, Var bias);
Var relu(Tape& t, Var x);
/// Temporal convolution, kernel width 3, zero padding 1: x[d_in x L] -> [d_out x L].
Var conv1d_same(Tape& t, Var x, Var kernel, Var bias);
/// [d x L] -> [d]
Var mean_over_time(Tape& t, Var x);
/// [p] ++ [q] -> [p + q]
Var concat(Tape& t, Var a, Var b);
/// Contiguous slice of the flattened tensor, returned with the given shape.
Var slice(Tape& t, Var x, std::size_t offset, Shape shape);
Var reshape(Tape& t, Var x, Shape shape);
/// Coordinatewise max over equally shaped rows; the subgradient goes to the
/// first attaining row.
Var elementwise_max(Tape& t, std::span<const Var> rows);
Var elementwise_mean(Tape& t, std::span<const Var> rows);
/// Sum of all elements -> scalar.
Var sum(Tape& t, Var x);
/// Sum of scalar nodes -> scalar.
Var sum_scalars(Tape& t, std::span<const Var> terms);
/// x[n] W[n x m] + b[m] -> [m]
Var linear(Tape& t, Var x, Var weight, Var bias);
/// log(sum(exp(logits))) - logits[label]
Var softmax_cross_entropy(Tape& t, Var logits, std::size_t label);

/// Numerically stable softmax of a rank-1 tensor (no tape).
std::vector<double> softmax(std::span<const double> logits);

struct GradCheckReport {
    double max_rel_error = 0.0;
    double h = 0.0;
    std::size_t coords_checked = 0;
    std::size_t nudges = 0;
};

/// Builds a scalar loss from a flat parameter leaf of shape [n].
using LossBuilder = std::function<Var(Tape&, Var params)>;

/// Compares backward() against central differences on sampled coordinates.
///
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-3).
/// Probe points whose step straddles a relu kink (detected by disagreement
/// between step h and step 2h central differences) are nudged away and the
/// analytic gradient is recomputed there.
GradCheckReport gradient_check(const LossBuilder& build, std::vector<double> point,
                               std::size_t coords, double h = 1e-6, std::uint64_t seed = 0);

}  // namespace tspkit::num
