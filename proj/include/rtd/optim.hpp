#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "rtd/graph.hpp"

namespace rtd {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// AdamW with decoupled weight decay and bias correction. Only trainable
// parameters are touched; state is keyed by position in the parameter list
// given at construction.
class AdamW {
  public:
    AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        if (cfg_.lr <= 0.0) throw ConfigError("adamw: lr must be positive");
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const Parameter* p : params_) {
            m_.emplace_back(Tensor::zeros_like(p->value));
            v_.emplace_back(Tensor::zeros_like(p->value));
        }
    }

    std::size_t step_count() const { return step_; }

    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Parameter& p = *params_[pi];
            if (!p.trainable) continue;
            Tensor& m = m_[pi];
            Tensor& v = v_[pi];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double g = p.grad[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p.value[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                         cfg_.weight_decay * p.value[i]);
            }
        }
    }

    void zero_grad() {
        for (Parameter* p : params_) p->zero_grad();
    }

  private:
    std::vector<Parameter*> params_;
    AdamWConfig cfg_;
    std::size_t step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

// Single-shot functional form used by the unit tests; applies one update to
// the given parameters at the given step index (state starts at zero).
inline void adamw_step(std::span<Parameter* const> params, const AdamWConfig& cfg,
                       std::size_t steps = 1) {
    AdamW opt(std::vector<Parameter*>(params.begin(), params.end()), cfg);
    for (std::size_t s = 0; s < steps; ++s) opt.step();
}

// Compares the reverse-mode gradient of `objective` against central finite
// differences at the current parameter values. The objective must be a
// deterministic function of the parameters and differentiable at the probe
// point (kinks of |.|, relu, clamp are unsupported probe points). Returns
// the max over elements of |a - n| / max(|a|, |n|, 1e-8).
inline double grad_check(const std::function<Var(Graph&)>& objective,
                         std::span<Parameter* const> params, double h) {
    for (Parameter* p : params) p->zero_grad();
    {
        Graph g;
        Var loss = objective(g);
        if (!g.value(loss).all_finite()) throw NumericError("grad_check: non-finite objective");
        g.backward(loss);
    }
    auto eval = [&]() {
        Graph g;
        const Tensor& v = g.value(objective(g));
        if (!v.all_finite()) throw NumericError("grad_check: non-finite objective");
        return v[0];
    };
    double worst = 0.0;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double fp = eval();
            p->value[i] = keep - h;
            const double fm = eval();
            p->value[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = p->grad[i];
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            worst = std::max(worst, std::fabs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace rtd
