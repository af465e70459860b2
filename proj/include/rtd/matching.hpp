#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "rtd/decoder.hpp"

namespace rtd {

// A temporal segment; window-normalized [0,1] during training, seconds in
// global space at evaluation time.
struct Interval {
    double start = 0.0;
    double end = 0.0;

    double length() const { return end - start; }
};

inline double tiou(const Interval& a, const Interval& b) {
    const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
    const double uni = a.length() + b.length() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

struct CostWeights {
    double alpha = 1.0;
    double beta = 5.0;
    double gamma = 2.0;
};

// Matcher cost for one (prediction, target) pair:
// alpha*l1 - beta*tIoU - gamma*p_bc, l1 = |ts-ts'| + |te-te'|.
inline double match_cost(const ProposalPrediction& pred, const Interval& gt, const CostWeights& w) {
    const Interval p{pred.t_start, pred.t_end};
    const double l1 = std::fabs(p.start - gt.start) + std::fabs(p.end - gt.end);
    return w.alpha * l1 - w.beta * tiou(p, gt) - w.gamma * pred.p_bc;
}

// Query -> target assignment. pair[i] is the ground-truth index or -1 for
// the no-object slot; relaxed[i] marks positives added by relaxation rather
// than by the bipartite match. include_relaxed_in_loc records the scope the
// relaxation mode grants to additions (cls-only vs cls+loc).
struct Assignment {
    std::vector<int> pair;
    std::vector<bool> relaxed;
    bool include_relaxed_in_loc = true;

    std::size_t positive_count() const {
        std::size_t n = 0;
        for (int p : pair)
            if (p >= 0) ++n;
        return n;
    }
};

namespace detail {

// Jonker-Volgenant style shortest augmenting path solver for a square cost
// matrix; handles arbitrary real costs. Returns row -> column.
inline std::vector<int> solve_square_assignment(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace detail

// Optimal bipartite match between predictions and targets under Eq-style
// pairwise costs. The target side is padded with no-object slots of cost 0,
// so the minimum of the square problem equals the minimum over injections
// of targets into predictions.
inline Assignment hungarian_match(const std::vector<ProposalPrediction>& preds,
                                  const std::vector<Interval>& gts, const CostWeights& w) {
    const std::size_t np = preds.size(), ng = gts.size();
    if (np < ng)
        throw ConfigError("hungarian_match: need at least as many predictions as targets");
    Assignment out;
    out.pair.assign(np, -1);
    out.relaxed.assign(np, false);
    if (ng == 0 || np == 0) return out;
    std::vector<std::vector<double>> cost(np, std::vector<double>(np, 0.0));
    for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < ng; ++j) cost[i][j] = match_cost(preds[i], gts[j], w);
    const std::vector<int> row_to_col = detail::solve_square_assignment(cost);
    for (std::size_t i = 0; i < np; ++i)
        if (row_to_col[i] >= 0 && row_to_col[i] < static_cast<int>(ng))
            out.pair[i] = row_to_col[i];
    return out;
}

inline double assignment_cost(const Assignment& a, const std::vector<ProposalPrediction>& preds,
                              const std::vector<Interval>& gts, const CostWeights& w) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.pair.size(); ++i)
        if (a.pair[i] >= 0) total += match_cost(preds[i], gts[static_cast<std::size_t>(a.pair[i])], w);
    return total;
}

enum class RelaxMode { threshold_cls_loc, threshold_cls, top1_cls_loc };

inline const char* relax_mode_name(RelaxMode m) {
    switch (m) {
        case RelaxMode::threshold_cls_loc: return "threshold_cls_loc";
        case RelaxMode::threshold_cls: return "threshold_cls";
        case RelaxMode::top1_cls_loc: return "top1_cls_loc";
    }
    return "?";
}

// Relaxed assignment: every bipartite pair is retained. Threshold modes
// additionally mark unmatched predictions whose max tIoU reaches the
// threshold as positive (assigned to the argmax target, ties to the lower
// index). Top-1 mode marks, per target, its highest-tIoU unmatched
// prediction. The mode decides whether additions feed the boundary loss.
inline Assignment relax_assignment(const Assignment& sigma,
                                   const std::vector<ProposalPrediction>& preds,
                                   const std::vector<Interval>& gts, RelaxMode mode,
                                   double threshold) {
    if (threshold <= 0.0 || threshold > 1.0)
        throw ConfigError("relax_assignment: threshold must lie in (0,1]");
    Assignment out = sigma;
    out.include_relaxed_in_loc = mode != RelaxMode::threshold_cls;
    if (gts.empty()) return out;

    auto best_gt = [&](std::size_t i) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t j = 0; j < gts.size(); ++j) {
            const double t = tiou({preds[i].t_start, preds[i].t_end}, gts[j]);
            if (t > best) {
                best = t;
                arg = j;
            }
        }
        return std::make_pair(arg, best);
    };

    switch (mode) {
        case RelaxMode::threshold_cls_loc:
        case RelaxMode::threshold_cls: {
            for (std::size_t i = 0; i < preds.size(); ++i) {
                if (out.pair[i] >= 0) continue;
                const auto [arg, best] = best_gt(i);
                if (best >= threshold) {
                    out.pair[i] = static_cast<int>(arg);
                    out.relaxed[i] = true;
                }
            }
            break;
        }
        case RelaxMode::top1_cls_loc: {
            for (std::size_t j = 0; j < gts.size(); ++j) {
                int arg = -1;
                double best = 0.0;
                for (std::size_t i = 0; i < preds.size(); ++i) {
                    const double t = tiou({preds[i].t_start, preds[i].t_end}, gts[j]);
                    if (t > best) {
                        best = t;
                        arg = static_cast<int>(i);
                    }
                }
                // The closest prediction may already be a bipartite pair (or
                // claimed by an earlier target); the sigma core is immutable.
                if (arg >= 0 && out.pair[static_cast<std::size_t>(arg)] < 0) {
                    out.pair[static_cast<std::size_t>(arg)] = static_cast<int>(j);
                    out.relaxed[static_cast<std::size_t>(arg)] = true;
                }
            }
            break;
        }
    }
    return out;
}

}  // namespace rtd
