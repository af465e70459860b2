#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtd/matching.hpp"
#include "rtd/model.hpp"
#include "rtd/optim.hpp"

namespace rtd {

struct LossBundle {
    double l_cls = 0.0;
    double l_boundary = 0.0;
    double l_complete = 0.0;
    double total = 0.0;
    std::size_t n_pos = 0;
};

// ---- tape-level losses ----

// Binary classification loss: -gamma * mean over all proposals of the
// Bernoulli log-likelihood. Relaxed additions count as positive here under
// every relaxation mode.
inline Var loss_cls_graph(Graph& g, Var p_bc, const Assignment& a, double gamma) {
    const std::size_t n = g.value(p_bc).size();
    if (n == 0 || a.pair.size() != n) throw ShapeError("loss_cls: assignment size mismatch");
    Tensor phat({n});
    Tensor phat_inv({n});
    for (std::size_t i = 0; i < n; ++i) {
        phat[i] = a.pair[i] >= 0 ? 1.0 : 0.0;
        phat_inv[i] = 1.0 - phat[i];
    }
    Var p = g.clamp(p_bc, 1e-12, 1.0 - 1e-12);
    Var log_p = g.log(p);
    Var log_1mp = g.log(g.add_const(g.scale(p, -1.0), 1.0));
    Var ll = g.add(g.mul(g.constant(phat), log_p), g.mul(g.constant(phat_inv), log_1mp));
    return g.scale(g.mean(ll), -gamma);
}

// Boundary loss over enabled positives: strict pairs always, relaxed
// additions only when the relaxation scope includes localization.
// (1/N_pos) * sum of alpha*l1 + beta*(1 - tIoU).
inline Var loss_boundary_graph(Graph& g, Var t_start, Var t_end, const Assignment& a,
                               const std::vector<Interval>& gts, double alpha, double beta,
                               std::size_t* n_pos_out = nullptr) {
    std::vector<std::size_t> pos_idx;
    std::vector<double> gs, ge;
    for (std::size_t i = 0; i < a.pair.size(); ++i) {
        if (a.pair[i] < 0) continue;
        if (a.relaxed[i] && !a.include_relaxed_in_loc) continue;
        pos_idx.push_back(i);
        gs.push_back(gts[static_cast<std::size_t>(a.pair[i])].start);
        ge.push_back(gts[static_cast<std::size_t>(a.pair[i])].end);
    }
    if (n_pos_out) *n_pos_out = pos_idx.size();
    if (pos_idx.empty()) return g.constant(Tensor::scalar(0.0));

    const std::size_t np = pos_idx.size();
    Tensor gs_t({np}), ge_t({np});
    for (std::size_t i = 0; i < np; ++i) {
        gs_t[i] = gs[i];
        ge_t[i] = ge[i];
    }
    Var ps = g.gather_rows(t_start, pos_idx);
    Var pe = g.gather_rows(t_end, pos_idx);
    Var cgs = g.constant(gs_t);
    Var cge = g.constant(ge_t);

    Var l1 = g.add(g.abs(g.sub(ps, cgs)), g.abs(g.sub(pe, cge)));

    Var inter = g.relu(g.sub(g.min2(pe, cge), g.max2(ps, cgs)));
    Var len_p = g.sub(pe, ps);
    Var len_g = g.sub(cge, cgs);
    Var uni = g.sub(g.add(len_p, len_g), inter);
    Var overlap = g.div(inter, uni);  // union >= target length > 0
    Var one_minus_tiou = g.add_const(g.scale(overlap, -1.0), 1.0);

    Var per_pair = g.add(g.scale(l1, alpha), g.scale(one_minus_tiou, beta));
    return g.scale(g.sum(per_pair), 1.0 / static_cast<double>(np));
}

// Completeness loss: mean squared error between p_c and each proposal's max
// tIoU over the targets (targets are constants on the tape).
inline Var loss_complete_graph(Graph& g, Var p_c, const std::vector<double>& g_tiou) {
    const std::size_t n = g.value(p_c).size();
    if (g_tiou.size() != n) throw ShapeError("loss_complete: target size mismatch");
    Tensor t({n});
    for (std::size_t i = 0; i < n; ++i) t[i] = g_tiou[i];
    Var diff = g.sub(p_c, g.constant(t));
    return g.mean(g.mul(diff, diff));
}

// Max tIoU of each proposal over all targets; 0 when nothing overlaps.
inline std::vector<double> completeness_targets(const std::vector<ProposalPrediction>& preds,
                                                const std::vector<Interval>& gts) {
    std::vector<double> out(preds.size(), 0.0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Interval p{preds[i].t_start, preds[i].t_end};
        for (const auto& gt : gts) out[i] = std::max(out[i], tiou(p, gt));
    }
    return out;
}

// ---- value-level forms (the tape versions evaluated on constants) ----

inline Tensor preds_to_vector(const std::vector<ProposalPrediction>& preds, int field) {
    Tensor out({preds.size()});
    for (std::size_t i = 0; i < preds.size(); ++i) {
        switch (field) {
            case 0: out[i] = preds[i].t_start; break;
            case 1: out[i] = preds[i].t_end; break;
            case 2: out[i] = preds[i].p_bc; break;
            default: out[i] = preds[i].p_c; break;
        }
    }
    return out;
}

inline double loss_cls(const std::vector<ProposalPrediction>& preds, const Assignment& a,
                       double gamma) {
    Graph g;
    return g.value(loss_cls_graph(g, g.constant(preds_to_vector(preds, 2)), a, gamma))[0];
}

inline double loss_boundary(const std::vector<ProposalPrediction>& preds, const Assignment& a,
                            const std::vector<Interval>& gts, double alpha, double beta,
                            std::size_t* n_pos_out = nullptr) {
    Graph g;
    return g.value(loss_boundary_graph(g, g.constant(preds_to_vector(preds, 0)),
                                       g.constant(preds_to_vector(preds, 1)), a, gts, alpha, beta,
                                       n_pos_out))[0];
}

inline double loss_complete(const std::vector<ProposalPrediction>& preds,
                            const std::vector<Interval>& gts) {
    Graph g;
    return g.value(
        loss_complete_graph(g, g.constant(preds_to_vector(preds, 3)), completeness_targets(preds, gts)))[0];
}

// ---- training schedule ----

struct TrainSchedule {
    CostWeights weights;  // alpha/beta/gamma shared by the matcher and Eqs. 2-3
    RelaxMode relax_mode = RelaxMode::threshold_cls_loc;
    double relax_threshold = 0.7;
    std::size_t batch_size = 32;
    AdamWConfig adam;  // lr defaults to 1e-4
    std::size_t epochs_strict = 80;
    std::size_t epochs_relaxed = 20;
    std::size_t epochs_complete = 20;
    std::uint64_t seed = 0;
};

struct EpochLog {
    std::size_t epoch = 0;  // global, 1-based across phases
    std::string phase;
    double l_cls = 0.0;
    double l_boundary = 0.0;
    double l_complete = 0.0;
    std::size_t n_pos = 0;
};

inline std::vector<Interval> window_target_intervals(const Window& w) {
    std::vector<Interval> out;
    out.reserve(w.targets.size());
    for (const auto& t : w.targets) out.push_back({t.start, t.end});
    return out;
}

// Three-phase schedule:
//   1. strict          - Hungarian assignment only, completeness frozen,
//                        minimize L_cls + L_boundary;
//   2. relaxed_finetune - relaxation active, only classification/boundary
//                        heads and query embeddings trainable;
//   3. completeness     - everything else frozen, minimize L_complete.
// The TEM is frozen throughout (it is trained beforehand).
class Trainer {
  public:
    Trainer(RtdModel& model, TrainSchedule sched) : model_(model), sched_(sched) {}

    std::vector<EpochLog> run(const std::vector<Window>& windows) {
        if (windows.empty()) throw ConfigError("train: empty window set");
        for (const auto& w : windows)
            if (w.targets.empty())
                throw ConfigError("train: window without targets (selection rule violated)");
        logs_.clear();
        epoch_counter_ = 0;

        // Phase 1: strict matching.
        model_.params().set_trainable_by_prefix({"enc.", "dec.", "query_embed", "head.boundary.",
                                                 "head.cls."});
        std::vector<EncoderInput> inputs(windows.size());
        for (std::size_t i = 0; i < windows.size(); ++i)
            inputs[i] = model_.prepare_encoder_input(windows[i]);
        run_phase("strict", sched_.epochs_strict, windows, [&](Graph& g, std::size_t wi) {
            return window_loss(g, model_.forward(g, inputs[wi]), windows[wi], false);
        });

        // Phase 2: relaxed fine-tune from cached memory.
        model_.params().set_trainable_by_prefix({"head.boundary.", "head.cls.", "query_embed"});
        std::vector<Tensor> memories(windows.size());
        for (std::size_t i = 0; i < windows.size(); ++i)
            memories[i] = model_.memory_values(inputs[i]);
        inputs.clear();
        inputs.shrink_to_fit();
        run_phase("relaxed_finetune", sched_.epochs_relaxed, windows,
                  [&](Graph& g, std::size_t wi) {
                      HeadsOut h = model_.predict_heads(g, model_.decode(g, g.constant(memories[wi])));
                      return window_loss(g, h, windows[wi], true);
                  });

        // Phase 3: completeness head on frozen decoder outputs.
        model_.params().set_trainable_by_prefix({"head.comp."});
        std::vector<Tensor> dec_outs(windows.size());
        std::vector<std::vector<double>> comp_targets(windows.size());
        for (std::size_t i = 0; i < windows.size(); ++i) {
            dec_outs[i] = model_.decoder_values(memories[i]);
            comp_targets[i] = completeness_targets(model_.head_values(dec_outs[i]),
                                                   window_target_intervals(windows[i]));
        }
        memories.clear();
        memories.shrink_to_fit();
        run_phase("completeness", sched_.epochs_complete, windows, [&](Graph& g, std::size_t wi) {
            HeadsOut h = model_.predict_heads(g, g.constant(dec_outs[wi]));
            Var loss = loss_complete_graph(g, h.p_c, comp_targets[wi]);
            LossBundle parts;
            parts.l_complete = g.value(loss)[0];
            parts.total = parts.l_complete;
            parts.n_pos = 0;
            return std::make_pair(loss, parts);
        });

        return logs_;
    }

  private:
    // L_cls + L_boundary for one window under the phase's matching rule.
    std::pair<Var, LossBundle> window_loss(Graph& g, const HeadsOut& h, const Window& w,
                                           bool relaxed) {
        const std::vector<Interval> gts = window_target_intervals(w);
        const std::vector<ProposalPrediction> preds = heads_to_predictions(g, h);
        Assignment a = hungarian_match(preds, gts, sched_.weights);
        if (relaxed) a = relax_assignment(a, preds, gts, sched_.relax_mode, sched_.relax_threshold);
        LossBundle parts;
        Var cls = loss_cls_graph(g, h.p_bc, a, sched_.weights.gamma);
        Var bnd = loss_boundary_graph(g, h.t_start, h.t_end, a, gts, sched_.weights.alpha,
                                      sched_.weights.beta, &parts.n_pos);
        Var total = g.add(cls, bnd);
        parts.l_cls = g.value(cls)[0];
        parts.l_boundary = g.value(bnd)[0];
        parts.total = g.value(total)[0];
        return {total, parts};
    }

    template <typename MakeLoss>
    void run_phase(const std::string& name, std::size_t epochs,
                   const std::vector<Window>& windows, MakeLoss&& make_loss) {
        if (epochs == 0) return;
        model_.params().zero_grad();
        AdamW opt(model_.params().trainable(), sched_.adam);
        Rng shuffle_rng(sched_.seed ^ (0x9e37ULL + epoch_counter_ * 0x10001ULL));
        std::vector<std::size_t> order(windows.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        for (std::size_t e = 0; e < epochs; ++e) {
            shuffle_rng.shuffle(order);
            EpochLog log;
            log.epoch = ++epoch_counter_;
            log.phase = name;
            for (std::size_t b = 0; b < order.size(); b += sched_.batch_size) {
                const std::size_t hi = std::min(order.size(), b + sched_.batch_size);
                const double inv_batch = 1.0 / static_cast<double>(hi - b);
                opt.zero_grad();
                for (std::size_t k = b; k < hi; ++k) {
                    Graph g;
                    auto [loss, parts] = make_loss(g, order[k]);
                    g.backward(g.scale(loss, inv_batch));
                    log.l_cls += parts.l_cls;
                    log.l_boundary += parts.l_boundary;
                    log.l_complete += parts.l_complete;
                    log.n_pos += parts.n_pos;
                }
                opt.step();
            }
            const double inv_n = 1.0 / static_cast<double>(windows.size());
            log.l_cls *= inv_n;
            log.l_boundary *= inv_n;
            log.l_complete *= inv_n;
            logs_.push_back(std::move(log));
        }
    }

    RtdModel& model_;
    TrainSchedule sched_;
    std::vector<EpochLog> logs_;
    std::size_t epoch_counter_ = 0;
};

// Frame-level boundary predictor training (runs before the main schedule).
struct TemTrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double expansion = 0.1;
    AdamWConfig adam;
    std::uint64_t seed = 0;
};

inline std::vector<EpochLog> train_tem(RtdModel& model, const std::vector<Window>& windows,
                                       const TemTrainConfig& cfg) {
    if (windows.empty()) throw ConfigError("train-tem: empty window set");
    model.params().set_trainable_by_prefix({"tem."});
    model.params().zero_grad();
    AdamW opt(model.params().trainable(), cfg.adam);
    Rng shuffle_rng(cfg.seed ^ 0x7ea5ULL);
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<Tensor> valid(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) valid[i] = RtdModel::valid_features(windows[i]);

    std::vector<EpochLog> logs;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        shuffle_rng.shuffle(order);
        EpochLog log;
        log.epoch = e + 1;
        log.phase = "tem";
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t hi = std::min(order.size(), b + cfg.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(hi - b);
            opt.zero_grad();
            for (std::size_t k = b; k < hi; ++k) {
                const Window& w = windows[order[k]];
                Graph g;
                Var probs = model.tem().forward(g, g.constant(valid[order[k]]));
                Var loss = tem_loss_graph(g, probs, w.targets, w.valid_steps, cfg.expansion);
                g.backward(g.scale(loss, inv_batch));
                log.l_cls += g.value(loss)[0];  // tem loss logged in the cls column
            }
            opt.step();
        }
        log.l_cls /= static_cast<double>(windows.size());
        logs.push_back(std::move(log));
    }
    return logs;
}

}  // namespace rtd
