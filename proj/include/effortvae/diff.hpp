// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense matrices. Values are column-major
// Eigen matrices; by convention rows are features and columns batch elements.
//
//   Tape tape;
//   Var w = tape.param(weights);
//   Var y = tanh(matmul(w, tape.constant(x)));
//   tape.backward(sum(y));        // accumulates into weights.grad
//
// Every op checks its output for non-finite values and throws NumericError
// naming itself.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "effortvae/rng.hpp"

namespace effortvae::diff {

using Matrix = Eigen::MatrixXd;

struct ParamTensor {
    std::string name;
    Matrix value;
    Matrix grad;

    ParamTensor(std::string name, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(name)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

    Eigen::Index rows() const noexcept { return value.rows(); }
    Eigen::Index cols() const noexcept { return value.cols(); }
    Eigen::Index size() const noexcept { return value.size(); }
};

/// Ordered, named collection of parameter tensors. Copies are deep.
class ParameterStore {
public:
    ParamTensor& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);

    ParamTensor& at(const std::string& name);
    const ParamTensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const noexcept { return tensors_.size(); }
    std::size_t total_values() const noexcept;

    auto begin() noexcept { return tensors_.begin(); }
    auto end() noexcept { return tensors_.end(); }
    auto begin() const noexcept { return tensors_.begin(); }
    auto end() const noexcept { return tensors_.end(); }
    ParamTensor& operator[](std::size_t i) { return tensors_[i]; }
    const ParamTensor& operator[](std::size_t i) const { return tensors_[i]; }

    void zero_grad();
    bool values_equal(const ParameterStore& other) const;

private:
    std::vector<ParamTensor> tensors_;
    std::map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    /// Value of a 1x1 node.
    double scalar() const;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    /// Leaf bound to a parameter; backward() accumulates into `p.grad`.
    Var param(ParamTensor& p);

    /// Seeds d(out)/d(out) = 1 for a 1x1 node and propagates to every parameter leaf.
    void backward(Var out);

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    /// Gradient of the last backward() target w.r.t. this node (zeros if unreached).
    Matrix grad(Var v) const;
    std::size_t node_count() const noexcept { return nodes_.size(); }

    // Used by op implementations.
    using Backward = std::function<void(Tape&, const Matrix& upstream)>;
    Var push(const char* op, Matrix value, bool requires_grad, Backward backward);
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    void accumulate(std::size_t id, const Matrix& g);
    template <class Expr>
    void accumulate_expr(std::size_t id, const Expr& g);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        bool has_grad = false;
        ParamTensor* param = nullptr;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

template <class Expr>
void Tape::accumulate_expr(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

// ---- ops ----------------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Adds a column vector to every column of `a`.
Var add_col(Var a, Var bias);
/// Elementwise product.
Var mul(Var a, Var b);
/// Scales every column j of `a` by row-vector entry r(0, j).
Var mul_row(Var a, Var r);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
/// Elementwise clamp; gradient is zero where the bound is active.
Var clamp(Var a, double lo, double hi);
/// Column-wise softmax / log-softmax (max-subtracted).
Var softmax_cols(Var a);
Var log_softmax_cols(Var a);
/// 1x1 sum / mean of all entries.
Var sum(Var a);
Var mean(Var a);
/// 1 x cols row of per-column sums.
Var col_sums(Var a);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);

// ---- objectives ---------------------------------------------------------------

/// Builds a 1x1 objective on the given tape; parameters enter via Tape::param.
using Objective = std::function<Var(Tape&)>;

/// Forward only.
double evaluate(const Objective& objective);

/// Zeroes `params` gradients, evaluates the objective and back-propagates.
/// Returns the objective value.
double grad(const Objective& objective, ParameterStore& params);

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Relative error is (|analytic - numeric| - r) / max(|analytic|, |numeric|, floor), where
    /// r = eps * |f| / step is the roundoff resolution of the central difference.
    double floor = 1e-6;
    /// Entries per tensor; larger tensors are sampled. 0 checks everything.
    std::size_t max_entries = 0;
    std::uint64_t seed = 0;
};

struct TensorCheck {
    std::string name;
    std::size_t entries_total = 0;
    std::size_t entries_checked = 0;
    double max_rel_error = 0.0;
    Eigen::Index worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<TensorCheck> tensors;
    double max_rel_error = 0.0;
    bool passed = true;
    double step = 0.0;
    double tolerance = 0.0;

    /// Names of tensors over tolerance.
    std::vector<std::string> failing() const;
};

/// Central differences (f(p+h) - f(p-h)) / 2h against the analytic gradient.
GradCheckReport grad_check(const Objective& objective, ParameterStore& params, const GradCheckOptions& options = {});

// ---- Adam ---------------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::uint64_t step = 0;

    AdamState() = default;
    AdamState(const ParameterStore& params, AdamConfig config);
};

/// Bias-corrected Adam update using the gradients held in `params`.
/// Throws NumericError (state untouched) on a non-finite gradient.
void adam_step(AdamState& state, ParameterStore& params);

}  // namespace effortvae::diff
