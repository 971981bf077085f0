#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "tspkit/evalkit.hpp"

namespace oracle {

/// Central difference of f at x along coordinate i.
template <class F>
double central_difference(F&& f, std::vector<double> x, std::size_t i, double h) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

inline double overlap(const tspkit::evalkit::Segment& a, const tspkit::evalkit::Segment& b) {
    const double inter = std::max(0.0, std::min(a.t1, b.t1) - std::max(a.t0, b.t0));
    const double uni = (a.t1 - a.t0) + (b.t1 - b.t0) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

/// AP by enumeration: rank-ordered greedy matching, then the interpolated
/// precision at each recall level is the max precision at any rank with at
/// least that recall, summed over the recall increments.
inline double ap(std::vector<tspkit::evalkit::DetectionPrediction> preds,
                 std::vector<tspkit::evalkit::GroundTruth> gts, std::size_t label, double thr) {
    std::erase_if(preds, [&](const auto& p) { return p.label != label; });
    std::erase_if(gts, [&](const auto& g) { return g.label != label; });
    std::stable_sort(preds.begin(), preds.end(), [](const auto& a, const auto& b) {
        return std::tie(b.score, a.segment.t0, a.video_id, a.segment.t1) <
               std::tie(a.score, b.segment.t0, b.video_id, b.segment.t1);
    });
    std::stable_sort(gts.begin(), gts.end(), [](const auto& a, const auto& b) {
        return std::tie(a.video_id, a.segment.t0, a.segment.t1) < std::tie(b.video_id, b.segment.t0, b.segment.t1);
    });
    std::vector<bool> used(gts.size(), false);
    std::vector<int> tp;
    for (const auto& p : preds) {
        int best = -1;
        double best_o = 0.0;
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (used[j] || gts[j].video_id != p.video_id) continue;
            const double o = overlap(p.segment, gts[j].segment);
            if (o >= thr && (best < 0 || o > best_o)) {
                best = static_cast<int>(j);
                best_o = o;
            }
        }
        if (best >= 0) used[static_cast<std::size_t>(best)] = true;
        tp.push_back(best >= 0 ? 1 : 0);
    }
    const double n_gt = static_cast<double>(gts.size());
    std::vector<double> prec, rec;
    int hits = 0;
    for (std::size_t k = 0; k < tp.size(); ++k) {
        hits += tp[k];
        prec.push_back(hits / static_cast<double>(k + 1));
        rec.push_back(hits / n_gt);
    }
    double out = 0.0, prev_r = 0.0;
    for (std::size_t k = 0; k < tp.size(); ++k) {
        if (!tp[k]) continue;
        double interp = 0.0;
        for (std::size_t j = 0; j < tp.size(); ++j)
            if (rec[j] >= rec[k]) interp = std::max(interp, prec[j]);
        out += (rec[k] - prev_r) * interp;
        prev_r = rec[k];
    }
    return out;
}

/// Mean AP over the labels present in the ground truth.
inline double map(const std::vector<tspkit::evalkit::DetectionPrediction>& preds,
                  const std::vector<tspkit::evalkit::GroundTruth>& gts, double thr) {
    std::set<std::size_t> labels;
    for (const auto& g : gts) labels.insert(g.label);
    double sum = 0.0;
    for (auto c : labels) sum += ap(preds, gts, c, thr);
    return sum / static_cast<double>(labels.size());
}

/// AR at one AN: per video the top-AN proposals (score, then start, then end),
/// matched one-to-one by repeatedly taking the highest remaining tIoU pair
/// (earlier proposal, then earlier ground truth on ties), averaged over the
/// ten thresholds.
inline double ar(const std::vector<tspkit::evalkit::ProposalPrediction>& props,
                 const std::vector<tspkit::evalkit::GroundTruth>& gts, std::size_t an) {
    using tspkit::evalkit::Segment;
    std::map<std::string, std::vector<Segment>> g, p;
    for (const auto& x : gts) g[x.video_id].push_back(x.segment);
    for (auto& [_, v] : g) {
        std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return std::tie(a.t0, a.t1) < std::tie(b.t0, b.t1); });
    }
    std::map<std::string, std::vector<tspkit::evalkit::ProposalPrediction>> ranked;
    for (const auto& x : props) ranked[x.video_id].push_back(x);
    for (auto& [vid, v] : ranked) {
        std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
            return std::tie(b.score, a.segment.t0, a.segment.t1) < std::tie(a.score, b.segment.t0, b.segment.t1);
        });
        for (std::size_t k = 0; k < v.size() && k < an; ++k) p[vid].push_back(v[k].segment);
    }
    double sum = 0.0;
    for (double thr : {0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95}) {
        std::size_t hits = 0;
        for (const auto& [vid, gv] : g) {
            const auto& pv = p[vid];
            std::vector<bool> pu(pv.size(), false), gu(gv.size(), false);
            while (true) {
                double best = -1.0;
                std::size_t bi = 0, bj = 0;
                for (std::size_t i = 0; i < pv.size(); ++i) {
                    for (std::size_t j = 0; j < gv.size(); ++j) {
                        if (pu[i] || gu[j]) continue;
                        const double o = overlap(pv[i], gv[j]);
                        if (o >= thr && o > best) {
                            best = o;
                            bi = i;
                            bj = j;
                        }
                    }
                }
                if (best < 0.0) break;
                pu[bi] = gu[bj] = true;
                ++hits;
            }
        }
        sum += static_cast<double>(hits) / static_cast<double>(gts.size());
    }
    return sum / 10.0;
}

/// Mean AR over AN = 1..100, in percent.
inline double auc(const std::vector<tspkit::evalkit::ProposalPrediction>& props,
                  const std::vector<tspkit::evalkit::GroundTruth>& gts) {
    double sum = 0.0;
    for (std::size_t an = 1; an <= 100; ++an) sum += ar(props, gts, an);
    return sum;
}

}  // namespace oracle
