// SPDX-License-Identifier: Apache-2.0
#include "effortvae/diff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "effortvae/error.hpp"

namespace effortvae::diff {

// ---- ParameterStore -----------------------------------------------------------

ParamTensor& ParameterStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw PreconditionError("duplicate parameter '" + name + "'");
    index_[name] = tensors_.size();
    tensors_.emplace_back(name, rows, cols);
    return tensors_.back();
}

ParamTensor& ParameterStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw PreconditionError("unknown parameter '" + name + "'");
    return tensors_[it->second];
}

const ParamTensor& ParameterStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw PreconditionError("unknown parameter '" + name + "'");
    return tensors_[it->second];
}

std::size_t ParameterStore::total_values() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& t : tensors_) t.grad.setZero();
}

bool ParameterStore::values_equal(const ParameterStore& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
        if (tensors_[i].name != other.tensors_[i].name) return false;
        if (tensors_[i].value.rows() != other.tensors_[i].value.rows() ||
            tensors_[i].value.cols() != other.tensors_[i].value.cols())
            return false;
        if (tensors_[i].value != other.tensors_[i].value) return false;
    }
    return true;
}

// ---- Tape ---------------------------------------------------------------------

const Matrix& Var::value() const { return tape->value(*this); }

double Var::scalar() const {
    const Matrix& v = value();
    if (v.size() != 1) throw PreconditionError("scalar() on a non-1x1 node");
    return v(0, 0);
}

Var Tape::push(const char* op, Matrix value, bool requires_grad, Backward backward) {
    if (!value.allFinite()) throw NumericError(op);
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push("constant", std::move(value), false, nullptr); }

Var Tape::param(ParamTensor& p) {
    Var v = push(p.name.c_str(), p.value, true, nullptr);
    nodes_[v.id].param = &p;
    return v;
}

void Tape::accumulate(std::size_t id, const Matrix& g) { accumulate_expr(id, g); }

void Tape::backward(Var out) {
    if (out.tape != this) throw PreconditionError("backward() on a node from another tape");
    if (nodes_[out.id].value.size() != 1) throw PreconditionError("backward() needs a 1x1 objective");
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad.resize(0, 0);
    }
    if (!nodes_[out.id].requires_grad) return;
    nodes_[out.id].grad = Matrix::Ones(1, 1);
    nodes_[out.id].has_grad = true;
    for (std::size_t i = out.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad) continue;
        if (n.param) {
            n.param->grad += n.grad;
        } else if (n.backward) {
            n.backward(*this, n.grad);
        }
    }
}

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.has_grad) return n.grad;
    return Matrix::Zero(n.value.rows(), n.value.cols());
}

// ---- ops ----------------------------------------------------------------------

namespace {

void same_shape(Var a, Var b, const char* op) {
    if (a.tape != b.tape) throw PreconditionError(std::string(op) + ": operands on different tapes");
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw PreconditionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
    }
}

template <class Fn>
Var unary(const char* op, Var a, Matrix value, Fn backward) {
    Tape& t = *a.tape;
    const bool rg = t.requires_grad(a);
    return t.push(op, std::move(value), rg, [a, backward](Tape& tape, const Matrix& g) { backward(tape, g, a); });
}

}  // namespace

Var matmul(Var a, Var b) {
    if (a.cols() != b.rows()) throw PreconditionError("matmul: inner dimensions differ");
    Tape& t = *a.tape;
    return t.push("matmul", a.value() * b.value(), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tape, const Matrix& g) {
                      if (tape.requires_grad(a)) tape.accumulate_expr(a.id, g * b.value().transpose());
                      if (tape.requires_grad(b)) tape.accumulate_expr(b.id, a.value().transpose() * g);
                  });
}

Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Tape& t = *a.tape;
    return t.push("add", a.value() + b.value(), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tape, const Matrix& g) {
                      tape.accumulate(a.id, g);
                      tape.accumulate(b.id, g);
                  });
}

Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    Tape& t = *a.tape;
    return t.push("sub", a.value() - b.value(), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tape, const Matrix& g) {
                      tape.accumulate(a.id, g);
                      tape.accumulate_expr(b.id, -g);
                  });
}

Var add_col(Var a, Var bias) {
    if (bias.cols() != 1 || bias.rows() != a.rows()) throw PreconditionError("add_col: bias must be rows x 1");
    Tape& t = *a.tape;
    Matrix v = a.value();
    v.colwise() += bias.value().col(0);
    return t.push("add_col", std::move(v), t.requires_grad(a) || t.requires_grad(bias),
                  [a, bias](Tape& tape, const Matrix& g) {
                      tape.accumulate(a.id, g);
                      if (tape.requires_grad(bias)) tape.accumulate_expr(bias.id, g.rowwise().sum());
                  });
}

Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    Tape& t = *a.tape;
    return t.push("mul", a.value().cwiseProduct(b.value()), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tape, const Matrix& g) {
                      if (tape.requires_grad(a)) tape.accumulate_expr(a.id, g.cwiseProduct(b.value()));
                      if (tape.requires_grad(b)) tape.accumulate_expr(b.id, g.cwiseProduct(a.value()));
                  });
}

Var mul_row(Var a, Var r) {
    if (r.rows() != 1 || r.cols() != a.cols()) throw PreconditionError("mul_row: factor must be 1 x cols");
    Tape& t = *a.tape;
    Matrix v = a.value() * r.value().row(0).asDiagonal();
    return t.push("mul_row", std::move(v), t.requires_grad(a) || t.requires_grad(r),
                  [a, r](Tape& tape, const Matrix& g) {
                      if (tape.requires_grad(a)) tape.accumulate_expr(a.id, g * r.value().row(0).asDiagonal());
                      if (tape.requires_grad(r))
                          tape.accumulate_expr(r.id, g.cwiseProduct(a.value()).colwise().sum());
                  });
}

Var scale(Var a, double s) {
    return unary("scale", a, a.value() * s,
                 [s](Tape& tape, const Matrix& g, Var x) { tape.accumulate_expr(x.id, g * s); });
}

Var add_scalar(Var a, double s) {
    return unary("add_scalar", a, (a.value().array() + s).matrix(),
                 [](Tape& tape, const Matrix& g, Var x) { tape.accumulate(x.id, g); });
}

Var sigmoid(Var a) {
    Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    Tape& t = *a.tape;
    const std::size_t out_id = t.node_count();
    return unary("sigmoid", a, std::move(v), [out_id](Tape& tape, const Matrix& g, Var x) {
        const auto& s = tape.value(Var{&tape, out_id}).array();
        tape.accumulate_expr(x.id, (g.array() * s * (1.0 - s)).matrix());
    });
}

Var tanh(Var a) {
    Matrix v = a.value().array().tanh().matrix();
    const std::size_t out_id = a.tape->node_count();
    return unary("tanh", a, std::move(v), [out_id](Tape& tape, const Matrix& g, Var x) {
        const auto& y = tape.value(Var{&tape, out_id}).array();
        tape.accumulate_expr(x.id, (g.array() * (1.0 - y.square())).matrix());
    });
}

Var relu(Var a) {
    return unary("relu", a, a.value().cwiseMax(0.0), [](Tape& tape, const Matrix& g, Var x) {
        tape.accumulate_expr(x.id, (g.array() * (x.value().array() > 0.0).cast<double>()).matrix());
    });
}

Var exp(Var a) {
    Matrix v = a.value().array().exp().matrix();
    const std::size_t out_id = a.tape->node_count();
    return unary("exp", a, std::move(v), [out_id](Tape& tape, const Matrix& g, Var x) {
        tape.accumulate_expr(x.id, g.cwiseProduct(tape.value(Var{&tape, out_id})));
    });
}

Var log(Var a) {
    return unary("log", a, a.value().array().log().matrix(), [](Tape& tape, const Matrix& g, Var x) {
        tape.accumulate_expr(x.id, (g.array() / x.value().array()).matrix());
    });
}

Var square(Var a) {
    return unary("square", a, a.value().array().square().matrix(), [](Tape& tape, const Matrix& g, Var x) {
        tape.accumulate_expr(x.id, (2.0 * g.array() * x.value().array()).matrix());
    });
}

Var clamp(Var a, double lo, double hi) {
    return unary("clamp", a, a.value().cwiseMax(lo).cwiseMin(hi), [lo, hi](Tape& tape, const Matrix& g, Var x) {
        const auto& xv = x.value().array();
        tape.accumulate_expr(x.id, (g.array() * ((xv > lo) && (xv < hi)).cast<double>()).matrix());
    });
}

Var softmax_cols(Var a) {
    Matrix v = a.value();
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
        v.col(j).array() -= v.col(j).maxCoeff();
        v.col(j) = v.col(j).array().exp().matrix();
        v.col(j) /= v.col(j).sum();
    }
    const std::size_t out_id = a.tape->node_count();
    return unary("softmax_cols", a, std::move(v), [out_id](Tape& tape, const Matrix& g, Var x) {
        const Matrix& s = tape.value(Var{&tape, out_id});
        const Eigen::RowVectorXd dot = g.cwiseProduct(s).colwise().sum();
        Matrix gx = g;
        gx.rowwise() -= dot;
        tape.accumulate_expr(x.id, gx.cwiseProduct(s));
    });
}

Var log_softmax_cols(Var a) {
    Matrix v = a.value();
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
        const double m = v.col(j).maxCoeff();
        const double lse = m + std::log((v.col(j).array() - m).exp().sum());
        v.col(j).array() -= lse;
    }
    const std::size_t out_id = a.tape->node_count();
    return unary("log_softmax_cols", a, std::move(v), [out_id](Tape& tape, const Matrix& g, Var x) {
        const Matrix s = tape.value(Var{&tape, out_id}).array().exp().matrix();
        const Eigen::RowVectorXd total = g.colwise().sum();
        Matrix gx = g - s * total.asDiagonal();
        tape.accumulate_expr(x.id, gx);
    });
}

Var sum(Var a) {
    Matrix v(1, 1);
    v(0, 0) = a.value().sum();
    return unary("sum", a, std::move(v), [](Tape& tape, const Matrix& g, Var x) {
        tape.accumulate_expr(x.id, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
    });
}

Var mean(Var a) {
    const auto n = static_cast<double>(a.value().size());
    if (n == 0) throw PreconditionError("mean of an empty matrix");
    Matrix v(1, 1);
    v(0, 0) = a.value().sum() / n;
    return unary("mean", a, std::move(v), [n](Tape& tape, const Matrix& g, Var x) {
        tape.accumulate_expr(x.id, Matrix::Constant(x.rows(), x.cols(), g(0, 0) / n));
    });
}

Var col_sums(Var a) {
    return unary("col_sums", a, a.value().colwise().sum(), [](Tape& tape, const Matrix& g, Var x) {
        Matrix gx(x.rows(), x.cols());
        gx.rowwise() = g.row(0);
        tape.accumulate_expr(x.id, gx);
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw PreconditionError("concat_rows of nothing");
    Tape& t = *parts.front().tape;
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    bool rg = false;
    for (const Var& p : parts) {
        if (p.tape != &t) throw PreconditionError("concat_rows: operands on different tapes");
        if (p.cols() != cols) throw PreconditionError("concat_rows: column counts differ");
        rows += p.rows();
        rg = rg || t.requires_grad(p);
    }
    Matrix v(rows, cols);
    Eigen::Index r = 0;
    for (const Var& p : parts) {
        v.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    return t.push("concat_rows", std::move(v), rg, [parts](Tape& tape, const Matrix& g) {
        Eigen::Index off = 0;
        for (const Var& p : parts) {
            const Eigen::Index n = p.rows();
            if (tape.requires_grad(p)) tape.accumulate_expr(p.id, g.middleRows(off, n));
            off += n;
        }
    });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw PreconditionError("slice_rows out of range");
    return unary("slice_rows", a, a.value().middleRows(start, count),
                 [start, count](Tape& tape, const Matrix& g, Var x) {
                     Matrix gx = Matrix::Zero(x.rows(), x.cols());
                     gx.middleRows(start, count) = g;
                     tape.accumulate_expr(x.id, gx);
                 });
}

// ---- objectives ---------------------------------------------------------------

double evaluate(const Objective& objective) {
    Tape tape;
    return objective(tape).scalar();
}

double grad(const Objective& objective, ParameterStore& params) {
    params.zero_grad();
    Tape tape;
    Var out = objective(tape);
    const double value = out.scalar();
    tape.backward(out);
    return value;
}

std::vector<std::string> GradCheckReport::failing() const {
    std::vector<std::string> out;
    for (const auto& t : tensors)
        if (!t.passed) out.push_back(t.name);
    return out;
}

GradCheckReport grad_check(const Objective& objective, ParameterStore& params, const GradCheckOptions& options) {
    if (!(options.step > 0.0)) throw PreconditionError("grad_check: step must be positive");
    grad(objective, params);

    GradCheckReport report;
    report.step = options.step;
    report.tolerance = options.tolerance;
    RngStream rng(options.seed);

    for (auto& p : params) {
        TensorCheck tc;
        tc.name = p.name;
        tc.entries_total = static_cast<std::size_t>(p.size());

        std::vector<Eigen::Index> entries(static_cast<std::size_t>(p.size()));
        std::iota(entries.begin(), entries.end(), Eigen::Index{0});
        if (options.max_entries > 0 && entries.size() > options.max_entries) {
            shuffle(entries.begin(), entries.end(), rng);
            entries.resize(options.max_entries);
            std::sort(entries.begin(), entries.end());
        }
        tc.entries_checked = entries.size();

        const Matrix analytic = p.grad;
        for (Eigen::Index idx : entries) {
            double& v = p.value.data()[idx];
            const double saved = v;
            v = saved + options.step;
            const double f_plus = evaluate(objective);
            v = saved - options.step;
            const double f_minus = evaluate(objective);
            v = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * options.step);
            const double a = analytic.data()[idx];
            // Each evaluation carries ~1 ulp of |f|; that much of the gap is not the gradient's fault.
            const double resolution = std::numeric_limits<double>::epsilon() *
                                      std::max(std::abs(f_plus), std::abs(f_minus)) / options.step;
            const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
            const double rel = std::max(0.0, std::abs(a - numeric) - resolution) / denom;
            if (rel > tc.max_rel_error || tc.worst_index < 0) {
                tc.max_rel_error = rel;
                tc.worst_index = idx;
                tc.worst_analytic = a;
                tc.worst_numeric = numeric;
            }
        }
        tc.passed = tc.max_rel_error < options.tolerance;
        report.max_rel_error = std::max(report.max_rel_error, tc.max_rel_error);
        report.passed = report.passed && tc.passed;
        report.tensors.push_back(std::move(tc));
    }
    // Leave gradients as the analytic ones.
    grad(objective, params);
    return report;
}

// ---- Adam ---------------------------------------------------------------------

AdamState::AdamState(const ParameterStore& params, AdamConfig cfg) : config(cfg) {
    for (const auto& p : params) {
        first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
        second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
}

void adam_step(AdamState& state, ParameterStore& params) {
    if (state.first_moment.size() != params.size()) throw PreconditionError("adam_step: state does not match parameters");
    for (const auto& p : params)
        if (!p.grad.allFinite()) throw NumericError("adam_step(" + p.name + ")");

    const auto& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        m = c.beta1 * m + (1.0 - c.beta1) * p.grad;
        v = c.beta2 * v + (1.0 - c.beta2) * p.grad.cwiseProduct(p.grad);
        p.value.array() -=
            c.learning_rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + c.epsilon);
    }
}

}  // namespace effortvae::diff
