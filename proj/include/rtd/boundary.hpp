#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "rtd/data.hpp"
#include "rtd/nn.hpp"

namespace rtd {

// Per-step starting/ending probabilities for one window.
struct BoundaryScores {
    std::vector<double> p_start;
    std::vector<double> p_end;

    std::size_t steps() const { return p_start.size(); }
};

// Boundary-attentive features: start-weighted block ‖ end-weighted block.
struct EnhancedFeatures {
    Tensor values;  // T×2C
    double scale_factor = 1.0;
};

// MLP-encoded memory plus the sinusoidal table the decoder attends with.
struct Memory {
    Tensor values;  // T×D_model
    Tensor pos;     // T×D_model, added to cross-attention keys
};

// Three-layer temporal convolution boundary predictor (kernel 3,
// same-padding, two hidden layers, terminal sigmoid). Trained on its own
// before the main model and frozen afterwards.
class Tem {
  public:
    Tem() = default;
    Tem(ParamStore& store, std::size_t c_in, std::size_t hidden, Rng& rng)
        : c1_(store, "tem.conv1", 3, c_in, hidden, rng),
          c2_(store, "tem.conv2", 3, hidden, hidden, rng),
          c3_(store, "tem.conv3", 3, hidden, 2, rng) {}

    // features: T×C (valid region only). Output T×2, column 0 = start.
    Var forward(Graph& g, Var features) const {
        Var h = g.relu(c1_.apply(g, features));
        h = g.relu(c2_.apply(g, h));
        return g.sigmoid(c3_.apply(g, h));
    }

    BoundaryScores predict(const Tensor& features) const {
        if (features.rows() < 3) throw ShapeError("tem: sequence shorter than kernel support");
        Graph g;
        const Tensor& probs = g.value(forward(g, g.constant(features)));
        BoundaryScores out;
        out.p_start.resize(probs.rows());
        out.p_end.resize(probs.rows());
        for (std::size_t t = 0; t < probs.rows(); ++t) {
            out.p_start[t] = probs(t, 0);
            out.p_end[t] = probs(t, 1);
        }
        return out;
    }

  private:
    Conv1d c1_, c2_, c3_;
};

// Frame-level boundary labels: step t is positive for the start (end)
// channel when its center lies within expansion*duration of any target's
// start (end).
struct BoundaryLabels {
    std::vector<double> start_pos;  // 1.0 / 0.0 per step
    std::vector<double> end_pos;
};

inline BoundaryLabels boundary_labels(const std::vector<LocalTarget>& targets, std::size_t steps,
                                      double expansion) {
    if (expansion <= 0.0) throw ConfigError("boundary labels: expansion must be positive");
    BoundaryLabels lab;
    lab.start_pos.assign(steps, 0.0);
    lab.end_pos.assign(steps, 0.0);
    for (const auto& t : targets) {
        const double half = expansion * (t.end - t.start);
        for (std::size_t i = 0; i < steps; ++i) {
            const double center = (static_cast<double>(i) + 0.5) / static_cast<double>(steps);
            if (std::fabs(center - t.start) <= half) lab.start_pos[i] = 1.0;
            if (std::fabs(center - t.end) <= half) lab.end_pos[i] = 1.0;
        }
    }
    return lab;
}

namespace detail {

// Class-balanced BCE for one channel: half weight on the positive-step
// mean, half on the negative-step mean; an empty class contributes nothing.
inline Var balanced_bce(Graph& g, Var probs, const std::vector<double>& pos_mask) {
    const std::size_t n = pos_mask.size();
    double n_pos = 0.0;
    for (double m : pos_mask) n_pos += m;
    const double n_neg = static_cast<double>(n) - n_pos;
    Tensor mask_pos({n});
    Tensor mask_neg({n});
    for (std::size_t i = 0; i < n; ++i) {
        mask_pos[i] = pos_mask[i];
        mask_neg[i] = 1.0 - pos_mask[i];
    }
    Var p = g.clamp(probs, 1e-12, 1.0 - 1e-12);
    Var log_p = g.log(p);
    Var log_1mp = g.log(g.add_const(g.scale(p, -1.0), 1.0));
    Var loss = g.constant(Tensor::scalar(0.0));
    if (n_pos > 0.0) {
        Var term = g.sum(g.mul(g.constant(mask_pos), log_p));
        loss = g.add(loss, g.scale(term, -0.5 / n_pos));
    }
    if (n_neg > 0.0) {
        Var term = g.sum(g.mul(g.constant(mask_neg), log_1mp));
        loss = g.add(loss, g.scale(term, -0.5 / n_neg));
    }
    return loss;
}

}  // namespace detail

// Sum of class-balanced BCE over the start and end channels. probs is the
// T×2 TEM output on the tape.
inline Var tem_loss_graph(Graph& g, Var probs, const std::vector<LocalTarget>& targets,
                          std::size_t steps, double expansion) {
    if (targets.empty())
        throw ConfigError("tem loss: window without targets (training windows must contain one)");
    const BoundaryLabels lab = boundary_labels(targets, steps, expansion);
    Var start_loss = detail::balanced_bce(g, g.col(probs, 0), lab.start_pos);
    Var end_loss = detail::balanced_bce(g, g.col(probs, 1), lab.end_pos);
    return g.add(start_loss, end_loss);
}

inline double tem_loss(const BoundaryScores& scores, const std::vector<LocalTarget>& targets,
                       double expansion) {
    const std::size_t t = scores.steps();
    Tensor probs({t, 2});
    for (std::size_t i = 0; i < t; ++i) {
        probs(i, 0) = scores.p_start[i];
        probs(i, 1) = scores.p_end[i];
    }
    Graph g;
    return g.value(tem_loss_graph(g, g.constant(probs), targets, t, expansion))[0];
}

// Per-channel min-max normalization over the window, then scaling by
// alpha_r. A constant channel carries no discriminative information and
// maps to 0.5*alpha_r everywhere.
inline BoundaryScores normalize_and_scale(const BoundaryScores& scores, double alpha_r) {
    if (alpha_r <= 0.0) throw ConfigError("normalize_and_scale: alpha_r must be positive");
    auto norm_channel = [alpha_r](const std::vector<double>& ch) {
        std::vector<double> out(ch.size());
        const auto [mn_it, mx_it] = std::minmax_element(ch.begin(), ch.end());
        const double mn = *mn_it, mx = *mx_it;
        if (mx == mn) {
            std::fill(out.begin(), out.end(), 0.5 * alpha_r);
            return out;
        }
        for (std::size_t i = 0; i < ch.size(); ++i) out[i] = (ch[i] - mn) / (mx - mn) * alpha_r;
        return out;
    };
    BoundaryScores out;
    out.p_start = norm_channel(scores.p_start);
    out.p_end = norm_channel(scores.p_end);
    return out;
}

// Row t of the output is (p_start[t]*f_t) ‖ (p_end[t]*f_t).
inline EnhancedFeatures enhance(const Tensor& features, const BoundaryScores& scaled,
                                double scale_factor = 1.0) {
    const std::size_t t_len = features.rows(), c = features.cols();
    if (scaled.steps() != t_len) throw ShapeError("enhance: score length mismatch");
    EnhancedFeatures out;
    out.scale_factor = scale_factor;
    out.values = Tensor({t_len, 2 * c});
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t j = 0; j < c; ++j) {
            out.values(t, j) = scaled.p_start[t] * features(t, j);
            out.values(t, c + j) = scaled.p_end[t] * features(t, j);
        }
    }
    return out;
}

// Three-layer MLP encoder; input is the enhanced features with a fixed
// sinusoidal table (dimension d_pos) concatenated per row.
class MemoryEncoder {
  public:
    MemoryEncoder() = default;
    MemoryEncoder(ParamStore& store, std::size_t in_dim, std::size_t d_pos, std::size_t d_model,
                  Rng& rng)
        : l1_(store, "enc.l1", in_dim + d_pos, d_model, rng),
          l2_(store, "enc.l2", d_model, d_model, rng),
          l3_(store, "enc.l3", d_model, d_model, rng),
          d_pos_(d_pos),
          d_model_(d_model) {}

    std::size_t d_pos() const { return d_pos_; }
    std::size_t d_model() const { return d_model_; }

    // enhanced: T×in_dim on the tape. The positional block is a constant.
    Var forward(Graph& g, Var enhanced) const {
        const std::size_t t_len = g.value(enhanced).rows();
        Var x = g.concat_cols(enhanced, g.constant(sinusoidal_table(t_len, d_pos_)));
        Var h = g.relu(l1_.apply(g, x));
        h = g.relu(l2_.apply(g, h));
        return l3_.apply(g, h);
    }

    // Value-level convenience returning the spec-shaped Memory (values plus
    // the d_model-dimensional table used at decoder attention).
    Memory encode(const Tensor& enhanced) const {
        Graph g;
        Memory m;
        m.values = g.value(forward(g, g.constant(enhanced)));
        m.pos = sinusoidal_table(enhanced.rows(), d_model_);
        return m;
    }

  private:
    Linear l1_, l2_, l3_;
    std::size_t d_pos_ = 32;
    std::size_t d_model_ = 64;
};

// CSV dump of per-step boundary probabilities: "t,p_start,p_end" rows.
inline void dump_boundary_csv(const BoundaryScores& scores, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "t,p_start,p_end\n";
    char buf[96];
    for (std::size_t t = 0; t < scores.steps(); ++t) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", t, scores.p_start[t], scores.p_end[t]);
        os << buf;
    }
}

}  // namespace rtd
