#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "rtd/tensor.hpp"

namespace rtd {

// A trainable (or frozen) weight. Lives outside any Graph; gradients
// accumulate additively across backward passes until zero_grad().
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}

    void zero_grad() { grad.fill(0.0); }
};

// Handle into a Graph's node arena.
struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. One Graph per forward/backward episode; nodes are
// appended in topological order, so reverse iteration is a valid backward
// schedule. Frozen parameters enter as constants, which makes "gradient is
// zero on frozen parameters" hold by construction and prunes backward work.
class Graph {
  public:
    Graph() { nodes_.reserve(256); }

    std::size_t node_count() const { return nodes_.size(); }

    // Smallest distance of any nonsmooth-op input (relu, abs, clamp,
    // min2/max2 ties) to its kink during this graph's forward pass. A probe
    // point violates grad_check's differentiability precondition when this
    // is of the order of the finite-difference step.
    double kink_margin() const { return kink_margin_; }

    const Tensor& value(Var v) const { return nodes_[check_id(v)].value; }

    // Gradient of the last backward() with respect to node v. Zero tensor if
    // the node was never reached.
    Tensor gradient(Var v) const {
        const Node& n = nodes_[check_id(v)];
        return n.grad_alloc ? n.grad : Tensor::zeros_like(n.value);
    }

    // ---- leaves ----

    Var constant(Tensor t) {
        return push(std::move(t), false, nullptr, {});
    }

    Var param(Parameter& p) {
        if (!p.trainable) return constant(p.value);
        Var v = push(p.value, true, nullptr, {});
        nodes_[v.id].param = &p;
        return v;
    }

    // ---- elementwise / broadcast ----

    Var add(Var a, Var b) {
        require_same_shape(a, b, "add");
        Tensor out = val(a);
        const Tensor& tb = val(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
        return push(std::move(out), needs(a) || needs(b), [](Graph& g, const Node& n) {
            if (g.needs_id(n.parents[0])) g.acc(n.parents[0], n.grad);
            if (g.needs_id(n.parents[1])) g.acc(n.parents[1], n.grad);
        }, {a.id, b.id});
    }

    Var sub(Var a, Var b) {
        require_same_shape(a, b, "sub");
        Tensor out = val(a);
        const Tensor& tb = val(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= tb[i];
        return push(std::move(out), needs(a) || needs(b), [](Graph& g, const Node& n) {
            if (g.needs_id(n.parents[0])) g.acc(n.parents[0], n.grad);
            if (g.needs_id(n.parents[1])) {
                Tensor& gb = g.grad_of(n.parents[1]);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= n.grad[i];
            }
        }, {a.id, b.id});
    }

    Var mul(Var a, Var b) {
        require_same_shape(a, b, "mul");
        Tensor out = val(a);
        const Tensor& tb = val(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
        return push(std::move(out), needs(a) || needs(b), [](Graph& g, const Node& n) {
            const Tensor& ta = g.nodes_[n.parents[0]].value;
            const Tensor& tb2 = g.nodes_[n.parents[1]].value;
            if (g.needs_id(n.parents[0])) {
                Tensor& ga = g.grad_of(n.parents[0]);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * tb2[i];
            }
            if (g.needs_id(n.parents[1])) {
                Tensor& gb = g.grad_of(n.parents[1]);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * ta[i];
            }
        }, {a.id, b.id});
    }

    Var div(Var a, Var b) {
        require_same_shape(a, b, "div");
        Tensor out = val(a);
        const Tensor& tb = val(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] /= tb[i];
        return push(std::move(out), needs(a) || needs(b), [](Graph& g, const Node& n) {
            const Tensor& tb2 = g.nodes_[n.parents[1]].value;
            if (g.needs_id(n.parents[0])) {
                Tensor& ga = g.grad_of(n.parents[0]);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] / tb2[i];
            }
            if (g.needs_id(n.parents[1])) {
                Tensor& gb = g.grad_of(n.parents[1]);
                for (std::size_t i = 0; i < gb.size(); ++i)
                    gb[i] -= n.grad[i] * n.value[i] / tb2[i];
            }
        }, {a.id, b.id});
    }

    Var scale(Var a, double c) {
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
        return push(std::move(out), needs(a), [c](Graph& g, const Node& n) {
            if (!g.needs_id(n.parents[0])) return;
            Tensor& ga = g.grad_of(n.parents[0]);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * n.grad[i];
        }, {a.id});
    }

    Var add_const(Var a, double c) {
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
        return push(std::move(out), needs(a), [](Graph& g, const Node& n) {
            if (g.needs_id(n.parents[0])) g.acc(n.parents[0], n.grad);
        }, {a.id});
    }

    // out[i,j] = a[i,j] + bias[j]
    Var add_row(Var a, Var bias) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(bias);
        if (ta.cols() != tb.size())
            throw ShapeError("add_row: bias length " + std::to_string(tb.size()) +
                             " vs cols " + std::to_string(ta.cols()));
        Tensor out = ta;
        const std::size_t r = ta.rows(), c = ta.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] += tb[j];
        return push(std::move(out), needs(a) || needs(bias), [](Graph& g, const Node& n) {
            const std::size_t c = n.value.cols(), r = n.value.rows();
            if (g.needs_id(n.parents[0])) g.acc(n.parents[0], n.grad);
            if (g.needs_id(n.parents[1])) {
                Tensor& gb = g.grad_of(n.parents[1]);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += n.grad[i * c + j];
            }
        }, {a.id, bias.id});
    }

    // out[i,:] = s[i] * a[i,:]
    Var scale_rows(Var a, Var s) {
        const Tensor& ta = val(a);
        const Tensor& ts = val(s);
        if (ta.rows() != ts.size()) throw ShapeError("scale_rows: length mismatch");
        Tensor out = ta;
        const std::size_t r = ta.rows(), c = ta.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= ts[i];
        return push(std::move(out), needs(a) || needs(s), [](Graph& g, const Node& n) {
            const Tensor& ta2 = g.nodes_[n.parents[0]].value;
            const Tensor& ts2 = g.nodes_[n.parents[1]].value;
            const std::size_t r = ta2.rows(), c = ta2.cols();
            if (g.needs_id(n.parents[0])) {
                Tensor& ga = g.grad_of(n.parents[0]);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += ts2[i] * n.grad[i * c + j];
            }
            if (g.needs_id(n.parents[1])) {
                Tensor& gs = g.grad_of(n.parents[1]);
                for (std::size_t i = 0; i < r; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < c; ++j) acc += n.grad[i * c + j] * ta2[i * c + j];
                    gs[i] += acc;
                }
            }
        }, {a.id, s.id});
    }

    // ---- nonlinearities ----

    Var relu(Var a) {
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) {
            kink_margin_ = std::min(kink_margin_, std::fabs(out[i]));
            out[i] = out[i] > 0.0 ? out[i] : 0.0;
        }
        return push(std::move(out), needs(a), [](Graph& g, const Node& n) {
            if (!g.needs_id(n.parents[0])) return;
            const Tensor& ta = g.nodes_[n.parents[0]].value;
            Tensor& ga = g.grad_of(n.parents[0]);
            for (std::size_t i = 0; i < ga.size(); ++i)
                if (ta[i] > 0.0) ga[i] += n.grad[i];
        }, {a.id});
    }

    Var sigmoid(Var a) {
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(out[i]);
        return push(std::move(out), needs(a), [](Graph& g, const Node& n) {
            if (!g.needs_id(n.parents[0])) return;
            Tensor& ga = g.grad_of(n.parents[0]);
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
        }, {a.id});
    }

    // Natural log; inputs must be positive (clamp first for probabilities).
    Var log(Var a) {
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
        return push(std::move(out), needs(a), [](Graph& g, const Node& n) {
            if (!g.needs_id(n.parents[0])) return;
            const Tensor& ta = g.nodes_[n.parents[0]].value;
            Tensor& ga = g.grad_of(n.parents[0]);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] / ta[i];
        }, {a.id});
    }

    Var abs(Var a) {
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = std::fabs(out[i]);
            kink_margin_ = std::min(kink_margin_, out[i]);
        }
        return push(std::move(out), needs(a), [](Graph& g, const Node& n) {
            if (!g.needs_id(n.parents[0])) return;
            const Tensor& ta = g.nodes_[n.parents[0]].value;
            Tensor& ga = g.grad_of(n.parents[0]);
            for (std::size_t i = 0; i < ga.size(); ++i) {
                if (ta[i] > 0.0) ga[i] += n.grad[i];
                else if (ta[i] < 0.0) ga[i] -= n.grad[i];
            }
        }, {a.id});
    }

    // Pass-through gradient strictly inside (lo, hi), zero outside.
    Var clamp(Var a, double lo, double hi) {
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) {
            kink_margin_ =
                std::min({kink_margin_, std::fabs(out[i] - lo), std::fabs(out[i] - hi)});
            out[i] = std::min(hi, std::max(lo, out[i]));
        }
        return push(std::move(out), needs(a), [lo, hi](Graph& g, const Node& n) {
            if (!g.needs_id(n.parents[0])) return;
            const Tensor& ta = g.nodes_[n.parents[0]].value;
            Tensor& ga = g.grad_of(n.parents[0]);
            for (std::size_t i = 0; i < ga.size(); ++i)
                if (ta[i] > lo && ta[i] < hi) ga[i] += n.grad[i];
        }, {a.id});
    }

    // Ties route the gradient to the first argument.
    Var min2(Var a, Var b) {
        require_same_shape(a, b, "min2");
        Tensor out = val(a);
        const Tensor& tb = val(b);
        for (std::size_t i = 0; i < out.size(); ++i) {
            kink_margin_ = std::min(kink_margin_, std::fabs(out[i] - tb[i]));
            out[i] = std::min(out[i], tb[i]);
        }
        return push(std::move(out), needs(a) || needs(b), [](Graph& g, const Node& n) {
            const Tensor& ta = g.nodes_[n.parents[0]].value;
            const Tensor& tb2 = g.nodes_[n.parents[1]].value;
            const bool na = g.needs_id(n.parents[0]), nb = g.needs_id(n.parents[1]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                if (ta[i] <= tb2[i]) {
                    if (na) g.grad_of(n.parents[0])[i] += n.grad[i];
                } else if (nb) {
                    g.grad_of(n.parents[1])[i] += n.grad[i];
                }
            }
        }, {a.id, b.id});
    }

    Var max2(Var a, Var b) {
        require_same_shape(a, b, "max2");
        Tensor out = val(a);
        const Tensor& tb = val(b);
        for (std::size_t i = 0; i < out.size(); ++i) {
            kink_margin_ = std::min(kink_margin_, std::fabs(out[i] - tb[i]));
            out[i] = std::max(out[i], tb[i]);
        }
        return push(std::move(out), needs(a) || needs(b), [](Graph& g, const Node& n) {
            const Tensor& ta = g.nodes_[n.parents[0]].value;
            const Tensor& tb2 = g.nodes_[n.parents[1]].value;
            const bool na = g.needs_id(n.parents[0]), nb = g.needs_id(n.parents[1]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                if (ta[i] >= tb2[i]) {
                    if (na) g.grad_of(n.parents[0])[i] += n.grad[i];
                } else if (nb) {
                    g.grad_of(n.parents[1])[i] += n.grad[i];
                }
            }
        }, {a.id, b.id});
    }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
            throw ShapeError("matmul: " + ta.shape_str() + " x " + tb.shape_str());
        Tensor out({ta.rows(), tb.cols()});
        kernels::matmul_nn_acc(ta.ptr(), tb.ptr(), out.ptr(), ta.rows(), ta.cols(), tb.cols());
        return push(std::move(out), needs(a) || needs(b), [](Graph& g, const Node& n) {
            const Tensor& ta2 = g.nodes_[n.parents[0]].value;
            const Tensor& tb2 = g.nodes_[n.parents[1]].value;
            if (g.needs_id(n.parents[0])) {
                Tensor& ga = g.grad_of(n.parents[0]);
                kernels::matmul_nt_acc(n.grad.ptr(), tb2.ptr(), ga.ptr(), n.grad.rows(),
                                       n.grad.cols(), tb2.rows());
            }
            if (g.needs_id(n.parents[1])) {
                Tensor& gb = g.grad_of(n.parents[1]);
                kernels::matmul_tn_acc(ta2.ptr(), n.grad.ptr(), gb.ptr(), ta2.rows(), ta2.cols(),
                                       n.grad.cols());
            }
        }, {a.id, b.id});
    }

    // out = a · bᵀ  (a: n×k, b: m×k)
    Var matmul_nt(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols())
            throw ShapeError("matmul_nt: " + ta.shape_str() + " x " + tb.shape_str() + "T");
        Tensor out({ta.rows(), tb.rows()});
        kernels::matmul_nt_acc(ta.ptr(), tb.ptr(), out.ptr(), ta.rows(), ta.cols(), tb.rows());
        return push(std::move(out), needs(a) || needs(b), [](Graph& g, const Node& n) {
            const Tensor& ta2 = g.nodes_[n.parents[0]].value;
            const Tensor& tb2 = g.nodes_[n.parents[1]].value;
            if (g.needs_id(n.parents[0])) {
                Tensor& ga = g.grad_of(n.parents[0]);
                kernels::matmul_nn_acc(n.grad.ptr(), tb2.ptr(), ga.ptr(), n.grad.rows(),
                                       n.grad.cols(), tb2.cols());
            }
            if (g.needs_id(n.parents[1])) {
                Tensor& gb = g.grad_of(n.parents[1]);
                kernels::matmul_tn_acc(n.grad.ptr(), ta2.ptr(), gb.ptr(), n.grad.rows(),
                                       n.grad.cols(), ta2.cols());
            }
        }, {a.id, b.id});
    }

    // ---- structure ----

    Var concat_cols(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rows() != tb.rows()) throw ShapeError("concat_cols: row mismatch");
        const std::size_t r = ta.rows(), ca = ta.cols(), cb = tb.cols();
        Tensor out({r, ca + cb});
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < ca; ++j) out(i, j) = ta(i, j);
            for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = tb(i, j);
        }
        return push(std::move(out), needs(a) || needs(b), [ca, cb](Graph& g, const Node& n) {
            const std::size_t r = n.value.rows();
            if (g.needs_id(n.parents[0])) {
                Tensor& ga = g.grad_of(n.parents[0]);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < ca; ++j) ga(i, j) += n.grad(i, j);
            }
            if (g.needs_id(n.parents[1])) {
                Tensor& gb = g.grad_of(n.parents[1]);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < cb; ++j) gb(i, j) += n.grad(i, ca + j);
            }
        }, {a.id, b.id});
    }

    Var slice_cols(Var a, std::size_t from, std::size_t to) {
        const Tensor& ta = val(a);
        if (to > ta.cols() || from >= to) throw ShapeError("slice_cols: bad range");
        const std::size_t r = ta.rows(), w = to - from;
        Tensor out = ta.rank() == 2 ? Tensor({r, w}) : Tensor({w});
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * w + j] = ta(i, from + j);
        return push(std::move(out), needs(a), [from, w](Graph& g, const Node& n) {
            if (!g.needs_id(n.parents[0])) return;
            Tensor& ga = g.grad_of(n.parents[0]);
            const std::size_t r = n.value.rows();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j) ga(i, from + j) += n.grad[i * w + j];
        }, {a.id});
    }

    // Column j of a matrix as a length-n vector.
    Var col(Var a, std::size_t j) {
        const Tensor& ta = val(a);
        if (ta.rank() != 2 || j >= ta.cols()) throw ShapeError("col: bad index");
        const std::size_t r = ta.rows();
        Tensor out({r});
        for (std::size_t i = 0; i < r; ++i) out[i] = ta(i, j);
        return push(std::move(out), needs(a), [j](Graph& g, const Node& n) {
            if (!g.needs_id(n.parents[0])) return;
            Tensor& ga = g.grad_of(n.parents[0]);
            for (std::size_t i = 0; i < n.value.size(); ++i) ga(i, j) += n.grad[i];
        }, {a.id});
    }

    // Select rows (or vector elements) by index, duplicates allowed.
    Var gather_rows(Var a, std::vector<std::size_t> idx) {
        const Tensor& ta = val(a);
        const std::size_t c = ta.rank() == 2 ? ta.cols() : 1;
        const std::size_t nrows = ta.rank() == 2 ? ta.rows() : ta.size();
        for (std::size_t i : idx)
            if (i >= nrows) throw ShapeError("gather_rows: index out of range");
        Tensor out = ta.rank() == 2 ? Tensor({idx.size(), c}) : Tensor({idx.size()});
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t j = 0; j < c; ++j) out[k * c + j] = ta[idx[k] * c + j];
        return push(std::move(out), needs(a), [idx = std::move(idx), c](Graph& g, const Node& n) {
            if (!g.needs_id(n.parents[0])) return;
            Tensor& ga = g.grad_of(n.parents[0]);
            for (std::size_t k = 0; k < idx.size(); ++k)
                for (std::size_t j = 0; j < c; ++j) ga[idx[k] * c + j] += n.grad[k * c + j];
        }, {a.id});
    }

    Var reshape(Var a, std::vector<std::size_t> shape) {
        Tensor out(std::move(shape));
        const Tensor& ta = val(a);
        if (out.size() != ta.size()) throw ShapeError("reshape: size mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i];
        return push(std::move(out), needs(a), [](Graph& g, const Node& n) {
            if (g.needs_id(n.parents[0])) {
                Tensor& ga = g.grad_of(n.parents[0]);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
            }
        }, {a.id});
    }

    // ---- normalization / reductions ----

    // Stable softmax along the last axis (per row for matrices).
    Var softmax_rows(Var a) {
        const Tensor& ta = val(a);
        Tensor out = ta;
        const std::size_t r = ta.rows(), c = ta.cols();
        for (std::size_t i = 0; i < r; ++i) softmax_row_inplace(out.ptr() + i * c, c);
        return push(std::move(out), needs(a), [](Graph& g, const Node& n) {
            if (!g.needs_id(n.parents[0])) return;
            Tensor& ga = g.grad_of(n.parents[0]);
            const std::size_t r = n.value.rows(), c = n.value.cols();
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = n.value.ptr() + i * c;
                const double* gy = n.grad.ptr() + i * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
                double* gx = ga.ptr() + i * c;
                for (std::size_t j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
        }, {a.id});
    }

    // Per-row layer normalization with affine gain/bias over the last axis.
    Var layer_norm(Var a, Var gain, Var bias, double eps) {
        const Tensor& ta = val(a);
        const Tensor& tg = val(gain);
        const Tensor& tb = val(bias);
        const std::size_t r = ta.rows(), c = ta.cols();
        if (tg.size() != c || tb.size() != c) throw ShapeError("layer_norm: affine size mismatch");
        if (c < 1) throw ShapeError("layer_norm: empty rows");
        Tensor out = ta;
        for (std::size_t i = 0; i < r; ++i) {
            double* row = out.ptr() + i * c;
            double mean = 0.0;
            for (std::size_t j = 0; j < c; ++j) mean += row[j];
            mean /= static_cast<double>(c);
            double var = 0.0;
            for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= static_cast<double>(c);
            const double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t j = 0; j < c; ++j) row[j] = (row[j] - mean) * inv * tg[j] + tb[j];
        }
        return push(std::move(out), needs(a) || needs(gain) || needs(bias),
                    [eps](Graph& g, const Node& n) {
            const Tensor& ta2 = g.nodes_[n.parents[0]].value;
            const Tensor& tg2 = g.nodes_[n.parents[1]].value;
            const std::size_t r = ta2.rows(), c = ta2.cols();
            const bool na = g.needs_id(n.parents[0]);
            const bool ng = g.needs_id(n.parents[1]);
            const bool nb = g.needs_id(n.parents[2]);
            std::vector<double> xhat(c);
            for (std::size_t i = 0; i < r; ++i) {
                const double* x = ta2.ptr() + i * c;
                const double* gy = n.grad.ptr() + i * c;
                double mean = 0.0;
                for (std::size_t j = 0; j < c; ++j) mean += x[j];
                mean /= static_cast<double>(c);
                double var = 0.0;
                for (std::size_t j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
                var /= static_cast<double>(c);
                const double inv = 1.0 / std::sqrt(var + eps);
                for (std::size_t j = 0; j < c; ++j) xhat[j] = (x[j] - mean) * inv;
                if (ng) {
                    Tensor& gg = g.grad_of(n.parents[1]);
                    for (std::size_t j = 0; j < c; ++j) gg[j] += gy[j] * xhat[j];
                }
                if (nb) {
                    Tensor& gb = g.grad_of(n.parents[2]);
                    for (std::size_t j = 0; j < c; ++j) gb[j] += gy[j];
                }
                if (na) {
                    Tensor& ga = g.grad_of(n.parents[0]);
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = gy[j] * tg2[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat[j];
                    }
                    const double cn = static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = gy[j] * tg2[j];
                        ga[i * c + j] +=
                            inv * (dxh - sum_dxhat / cn - xhat[j] * sum_dxhat_xhat / cn);
                    }
                }
            }
        }, {a.id, gain.id, bias.id});
    }

    // Same-padded 1-D convolution along rows. x: T×Cin, w: (K·Cin)×Cout,
    // b: Cout. Row t of the output sees x rows [t-K/2, t+K/2].
    Var conv1d_same(Var x, Var w, Var b, std::size_t k) {
        const Tensor& tx = val(x);
        const Tensor& tw = val(w);
        const Tensor& tb = val(b);
        const std::size_t t_len = tx.rows(), cin = tx.cols();
        if (k % 2 == 0) throw ShapeError("conv1d_same: kernel must be odd");
        if (t_len < k) throw ShapeError("conv1d_same: sequence shorter than kernel");
        if (tw.rows() != k * cin) throw ShapeError("conv1d_same: weight rows != K*Cin");
        const std::size_t cout = tw.cols();
        if (tb.size() != cout) throw ShapeError("conv1d_same: bias size mismatch");
        const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
        Tensor out({t_len, cout});
        for (std::size_t t = 0; t < t_len; ++t) {
            double* orow = out.ptr() + t * cout;
            for (std::size_t j = 0; j < cout; ++j) orow[j] = tb[j];
            for (std::size_t d = 0; d < k; ++d) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(d) - half;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
                const double* xrow = tx.ptr() + static_cast<std::size_t>(src) * cin;
                const double* wrow = tw.ptr() + d * cin * cout;
                kernels::matmul_nn_acc(xrow, wrow, orow, 1, cin, cout);
            }
        }
        return push(std::move(out), needs(x) || needs(w) || needs(b),
                    [k, half](Graph& g, const Node& n) {
            const Tensor& tx2 = g.nodes_[n.parents[0]].value;
            const Tensor& tw2 = g.nodes_[n.parents[1]].value;
            const std::size_t t_len = tx2.rows(), cin = tx2.cols(), cout = tw2.cols();
            const bool nx = g.needs_id(n.parents[0]);
            const bool nw = g.needs_id(n.parents[1]);
            const bool nb = g.needs_id(n.parents[2]);
            for (std::size_t t = 0; t < t_len; ++t) {
                const double* grow = n.grad.ptr() + t * cout;
                if (nb) {
                    Tensor& gb = g.grad_of(n.parents[2]);
                    for (std::size_t j = 0; j < cout; ++j) gb[j] += grow[j];
                }
                for (std::size_t d = 0; d < k; ++d) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(d) - half;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
                    const std::size_t s = static_cast<std::size_t>(src);
                    if (nx) {
                        Tensor& gx = g.grad_of(n.parents[0]);
                        kernels::matmul_nt_acc(grow, tw2.ptr() + d * cin * cout,
                                               gx.ptr() + s * cin, 1, cout, cin);
                    }
                    if (nw) {
                        Tensor& gw = g.grad_of(n.parents[1]);
                        kernels::matmul_tn_acc(tx2.ptr() + s * cin, grow,
                                               gw.ptr() + d * cin * cout, 1, cin, cout);
                    }
                }
            }
        }, {x.id, w.id, b.id});
    }

    Var sum(Var a) {
        const Tensor& ta = val(a);
        double acc = 0.0;
        for (std::size_t i = 0; i < ta.size(); ++i) acc += ta[i];
        return push(Tensor::scalar(acc), needs(a), [](Graph& g, const Node& n) {
            if (!g.needs_id(n.parents[0])) return;
            Tensor& ga = g.grad_of(n.parents[0]);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[0];
        }, {a.id});
    }

    Var mean(Var a) {
        const std::size_t n = val(a).size();
        return scale(sum(a), 1.0 / static_cast<double>(n));
    }

    // ---- backward ----

    void backward(Var loss) {
        Node& top = nodes_[check_id(loss)];
        if (top.value.size() != 1) throw ShapeError("backward: loss must be scalar");
        if (!top.value.all_finite()) throw NumericError("backward: non-finite loss");
        if (!top.requires_grad) return;
        grad_of(static_cast<std::size_t>(loss.id))[0] = 1.0;
        for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.grad_alloc) continue;
            if (n.back) n.back(*this, n);
            if (n.param) {
                Tensor& pg = n.param->grad;
                for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
            }
        }
    }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::int32_t> parents;
        std::function<void(Graph&, const Node&)> back;
        Parameter* param = nullptr;
        bool requires_grad = false;
        bool grad_alloc = false;
    };

    std::size_t check_id(Var v) const {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw Error("graph: invalid var handle");
        return static_cast<std::size_t>(v.id);
    }

    const Tensor& val(Var v) const { return nodes_[check_id(v)].value; }
    bool needs(Var v) const { return nodes_[check_id(v)].requires_grad; }
    bool needs_id(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    void require_same_shape(Var a, Var b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw ShapeError(std::string(op) + ": shape mismatch " + val(a).shape_str() + " vs " +
                             val(b).shape_str());
    }

    Tensor& grad_of(std::int32_t id) { return grad_of(static_cast<std::size_t>(id)); }
    Tensor& grad_of(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.grad_alloc) {
            n.grad = Tensor::zeros_like(n.value);
            n.grad_alloc = true;
        }
        return n.grad;
    }

    void acc(std::int32_t id, const Tensor& g) {
        Tensor& t = grad_of(id);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += g[i];
    }

    Var push(Tensor value, bool requires_grad, std::function<void(Graph&, const Node&)> back,
             std::vector<std::int32_t> parents) {
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.requires_grad = requires_grad;
        if (requires_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    static double sigmoid_scalar(double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

    static void softmax_row_inplace(double* row, std::size_t n) {
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
    }

    std::vector<Node> nodes_;
    double kink_margin_ = std::numeric_limits<double>::infinity();
};

// Forward-only stable softmax over the last axis (shares the graph kernel).
inline Tensor softmax_stable(const Tensor& x) {
    Graph g;
    return g.value(g.softmax_rows(g.constant(x)));
}

}  // namespace rtd
