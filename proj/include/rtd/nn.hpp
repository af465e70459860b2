#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "rtd/graph.hpp"

namespace rtd {

// Owns every Parameter of a model. std::deque keeps addresses stable so
// Parameter& handles remain valid as the store grows. Creation order is the
// canonical order for checkpoints and optimizer iteration.
class ParamStore {
  public:
    Parameter& create(const std::string& name, std::vector<std::size_t> shape) {
        if (index_.count(name)) throw ConfigError("parameter already exists: " + name);
        params_.emplace_back(name, Tensor(std::move(shape)));
        index_[name] = params_.size() - 1;
        return params_.back();
    }

    Parameter& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("no such parameter: " + name);
        return params_[it->second];
    }

    const Parameter& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("no such parameter: " + name);
        return params_[it->second];
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return params_.size(); }
    Parameter& at(std::size_t i) { return params_[i]; }
    const Parameter& at(std::size_t i) const { return params_[i]; }

    std::vector<Parameter*> all() {
        std::vector<Parameter*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(&p);
        return out;
    }

    std::vector<Parameter*> trainable() {
        std::vector<Parameter*> out;
        for (auto& p : params_)
            if (p.trainable) out.push_back(&p);
        return out;
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    // Freeze everything, then re-enable the parameters whose name starts
    // with one of the given prefixes.
    void set_trainable_by_prefix(const std::vector<std::string>& prefixes) {
        for (auto& p : params_) {
            p.trainable = false;
            for (const auto& pre : prefixes) {
                if (p.name.rfind(pre, 0) == 0) {
                    p.trainable = true;
                    break;
                }
            }
        }
    }

  private:
    std::deque<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

// Uniform fan-in-scaled initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline void init_uniform_fan_in(Parameter& p, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-bound, bound);
}

// Fully connected layer, weights [in×out], bias [out]; both drawn from the
// fan-in-scaled uniform range.
struct Linear {
    Parameter* w = nullptr;
    Parameter* b = nullptr;

    Linear() = default;
    Linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
        w = &store.create(prefix + ".w", {in, out});
        b = &store.create(prefix + ".b", {out});
        init_uniform_fan_in(*w, in, rng);
        init_uniform_fan_in(*b, in, rng);
    }

    Var apply(Graph& g, Var x) const { return g.add_row(g.matmul(x, g.param(*w)), g.param(*b)); }
};

// x[N×D_in] · w + b with shape validation, usable outside any model.
inline Tensor linear_forward(const Tensor& x, Parameter& w, Parameter& b) {
    if (x.rank() != 2 || w.value.rank() != 2 || x.cols() != w.value.rows())
        throw ShapeError("linear_forward: x " + x.shape_str() + " vs w " + w.value.shape_str());
    Graph g;
    Linear lin;
    lin.w = &w;
    lin.b = &b;
    return g.value(lin.apply(g, g.constant(x)));
}

// Layer-norm affine pair.
struct NormAffine {
    Parameter* gain = nullptr;
    Parameter* bias = nullptr;

    NormAffine() = default;
    NormAffine(ParamStore& store, const std::string& prefix, std::size_t d) {
        gain = &store.create(prefix + ".gain", {d});
        bias = &store.create(prefix + ".bias", {d});
        gain->value.fill(1.0);
    }

    Var apply(Graph& g, Var x, double eps) const {
        return g.layer_norm(x, g.param(*gain), g.param(*bias), eps);
    }
};

// Same-padded temporal convolution, weights [(K·Cin)×Cout].
struct Conv1d {
    Parameter* w = nullptr;
    Parameter* b = nullptr;
    std::size_t kernel = 3;

    Conv1d() = default;
    Conv1d(ParamStore& store, const std::string& prefix, std::size_t k, std::size_t cin,
           std::size_t cout, Rng& rng)
        : kernel(k) {
        w = &store.create(prefix + ".w", {k * cin, cout});
        b = &store.create(prefix + ".b", {cout});
        init_uniform_fan_in(*w, k * cin, rng);
        init_uniform_fan_in(*b, k * cin, rng);
    }

    Var apply(Graph& g, Var x) const {
        return g.conv1d_same(x, g.param(*w), g.param(*b), kernel);
    }
};

// Multi-head attention block (projections only; residual/norm live in the
// decoder layer). Positional terms are added to queries/keys at the
// attention input; values stay positional-free. The key projection carries
// no bias: a shared key offset shifts every logit in a row equally, which
// softmax cancels, so the parameter would be inert.
struct MultiHeadAttention {
    Linear wq, wv, wo;
    Parameter* wk = nullptr;
    std::size_t heads = 1;
    std::size_t d_model = 0;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& store, const std::string& prefix, std::size_t d,
                       std::size_t n_heads, Rng& rng)
        : wq(store, prefix + ".q", d, d, rng),
          wv(store, prefix + ".v", d, d, rng),
          wo(store, prefix + ".o", d, d, rng),
          heads(n_heads),
          d_model(d) {
        if (d % n_heads != 0) throw ConfigError("d_model must be divisible by heads");
        wk = &store.create(prefix + ".k.w", {d, d});
        init_uniform_fan_in(*wk, d, rng);
    }

    struct Result {
        Var out;
        Var attn;  // head-averaged attention weights, rows = queries
    };

    // query_in/key_in feed the Q/K projections (positional terms already
    // added by the caller); value_in feeds V. key_mask, when valid, is a
    // length-M constant of 0 / -1e30 added to every logit row.
    Result apply(Graph& g, Var query_in, Var key_in, Var value_in, Var key_mask = {}) const {
        const std::size_t dh = d_model / heads;
        Var q = wq.apply(g, query_in);
        Var k = g.matmul(key_in, g.param(*wk));
        Var v = wv.apply(g, value_in);
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        Var merged;
        Var attn_avg;
        for (std::size_t h = 0; h < heads; ++h) {
            Var qh = g.slice_cols(q, h * dh, (h + 1) * dh);
            Var kh = g.slice_cols(k, h * dh, (h + 1) * dh);
            Var vh = g.slice_cols(v, h * dh, (h + 1) * dh);
            Var logits = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
            if (key_mask.valid()) logits = g.add_row(logits, key_mask);
            Var attn = g.softmax_rows(logits);
            Var oh = g.matmul(attn, vh);
            merged = h == 0 ? oh : g.concat_cols(merged, oh);
            attn_avg = h == 0 ? attn : g.add(attn_avg, attn);
        }
        attn_avg = g.scale(attn_avg, 1.0 / static_cast<double>(heads));
        return {wo.apply(g, merged), attn_avg};
    }
};

// Fixed sinusoidal positional table for positions [0, len).
inline Tensor sinusoidal_table(std::size_t len, std::size_t dim) {
    Tensor out({len, dim});
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
            const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
            out(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return out;
}

}  // namespace rtd
