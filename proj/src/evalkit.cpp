#include "tspkit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace tspkit::evalkit {

using nlohmann::json;

const std::array<double, 10>& tiou_thresholds() {
    static const std::array<double, 10> t{0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
    return t;
}

double tiou(const Segment& a, const Segment& b) {
    const double inter = std::max(0.0, std::min(a.t1, b.t1) - std::max(a.t0, b.t0));
    const double uni = a.length() + b.length() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

std::vector<GroundTruth> ground_truth(const corpus::Corpus& corpus, corpus::Subset split) {
    std::vector<GroundTruth> out;
    for (auto vi : corpus.subset_indices(split)) {
        const auto& v = corpus.videos()[vi];
        for (const auto& a : v.annotations) {
            out.push_back({v.id, corpus.class_index(a.label), {a.t_start, a.t_end}});
        }
    }
    return out;
}

namespace {

bool segment_less(const Segment& a, const Segment& b) {
    return a.t0 != b.t0 ? a.t0 < b.t0 : a.t1 < b.t1;
}

/// Ground truth grouped per video, each group sorted by start time.
std::map<std::string, std::vector<Segment>> group_gts(const std::vector<GroundTruth>& gts,
                                                      std::optional<std::size_t> label) {
    std::map<std::string, std::vector<Segment>> out;
    for (const auto& g : gts) {
        if (!label || g.label == *label) out[g.video_id].push_back(g.segment);
    }
    for (auto& [_, v] : out) std::sort(v.begin(), v.end(), segment_less);
    return out;
}

}  // namespace

std::optional<double> average_precision(const std::vector<DetectionPrediction>& preds,
                                        const std::vector<GroundTruth>& gts, std::size_t label, double thr) {
    if (!(thr > 0.0 && thr < 1.0)) throw std::invalid_argument("average_precision: threshold must be in (0,1)");
    auto by_video = group_gts(gts, label);
    std::size_t n_gt = 0;
    for (const auto& [_, v] : by_video) n_gt += v.size();
    if (n_gt == 0) return std::nullopt;

    std::vector<const DetectionPrediction*> ps;
    for (const auto& p : preds) {
        if (p.label == label) ps.push_back(&p);
    }
    std::sort(ps.begin(), ps.end(), [](const auto* a, const auto* b) {
        if (a->score != b->score) return a->score > b->score;
        if (a->segment.t0 != b->segment.t0) return a->segment.t0 < b->segment.t0;
        if (a->video_id != b->video_id) return a->video_id < b->video_id;
        return a->segment.t1 < b->segment.t1;
    });

    std::map<std::string, std::vector<bool>> matched;
    for (const auto& [vid, v] : by_video) matched[vid].assign(v.size(), false);

    std::vector<bool> tp(ps.size(), false);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto it = by_video.find(ps[i]->video_id);
        if (it == by_video.end()) continue;
        auto& used = matched[ps[i]->video_id];
        double best = -1.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < it->second.size(); ++j) {
            if (used[j]) continue;
            const double o = tiou(ps[i]->segment, it->second[j]);
            if (o >= thr && o > best) {
                best = o;
                best_j = j;
            }
        }
        if (best >= 0.0) {
            used[best_j] = true;
            tp[i] = true;
        }
    }

    std::vector<double> precision(ps.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        hits += tp[i] ? 1 : 0;
        precision[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    double env = 0.0;
    double ap = 0.0;
    for (std::size_t i = ps.size(); i-- > 0;) {
        env = std::max(env, precision[i]);
        if (tp[i]) ap += env;
    }
    return ap / static_cast<double>(n_gt);
}

double map_at(const std::vector<DetectionPrediction>& preds, const std::vector<GroundTruth>& gts, double thr) {
    if (gts.empty()) throw EvalError("mAP: no ground truth instances");
    std::set<std::size_t> labels;
    for (const auto& g : gts) labels.insert(g.label);
    double sum = 0.0;
    for (auto c : labels) sum += *average_precision(preds, gts, c, thr);
    return sum / static_cast<double>(labels.size());
}

double average_map(const std::vector<DetectionPrediction>& preds, const std::vector<GroundTruth>& gts) {
    double sum = 0.0;
    for (double t : tiou_thresholds()) sum += map_at(preds, gts, t);
    return sum / static_cast<double>(tiou_thresholds().size());
}

std::vector<double> ar_at_an(const std::vector<ProposalPrediction>& proposals, const std::vector<GroundTruth>& gts,
                             const std::vector<std::size_t>& an_values) {
    if (gts.empty()) throw EvalError("AR: no ground truth instances");
    const auto by_video = group_gts(gts, std::nullopt);
    std::map<std::string, std::vector<Segment>> props;
    {
        std::map<std::string, std::vector<const ProposalPrediction*>> tmp;
        for (const auto& p : proposals) tmp[p.video_id].push_back(&p);
        for (auto& [vid, v] : tmp) {
            std::sort(v.begin(), v.end(), [](const auto* a, const auto* b) {
                if (a->score != b->score) return a->score > b->score;
                return segment_less(a->segment, b->segment);
            });
            auto& out = props[vid];
            for (const auto* p : v) out.push_back(p->segment);
        }
    }

    struct Pair {
        double o;
        std::size_t p, g;
    };
    std::vector<double> curve;
    curve.reserve(an_values.size());
    for (auto an : an_values) {
        double recall_sum = 0.0;
        for (double thr : tiou_thresholds()) {
            std::size_t hits = 0;
            for (const auto& [vid, g] : by_video) {
                auto it = props.find(vid);
                if (it == props.end()) continue;
                const auto n = std::min(an, it->second.size());
                std::vector<Pair> pairs;
                for (std::size_t p = 0; p < n; ++p) {
                    for (std::size_t j = 0; j < g.size(); ++j) {
                        const double o = tiou(it->second[p], g[j]);
                        if (o >= thr) pairs.push_back({o, p, j});
                    }
                }
                std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
                    if (a.o != b.o) return a.o > b.o;
                    if (a.p != b.p) return a.p < b.p;
                    return a.g < b.g;
                });
                std::vector<bool> pu(n, false), gu(g.size(), false);
                for (const auto& pr : pairs) {
                    if (pu[pr.p] || gu[pr.g]) continue;
                    pu[pr.p] = gu[pr.g] = true;
                    ++hits;
                }
            }
            recall_sum += static_cast<double>(hits) / static_cast<double>(gts.size());
        }
        curve.push_back(recall_sum / static_cast<double>(tiou_thresholds().size()));
    }
    return curve;
}

double auc_100(const std::vector<ProposalPrediction>& proposals, const std::vector<GroundTruth>& gts) {
    std::vector<std::size_t> an(100);
    std::iota(an.begin(), an.end(), 1);
    const auto curve = ar_at_an(proposals, gts, an);
    return 100.0 * std::accumulate(curve.begin(), curve.end(), 0.0) / 100.0;
}

// ---------------------------------------------------------------------------

std::string to_string(DetadBucket b) {
    switch (b) {
        case DetadBucket::XS: return "XS";
        case DetadBucket::S: return "S";
        case DetadBucket::M: return "M";
        case DetadBucket::L: return "L";
        case DetadBucket::XL: return "XL";
    }
    return "?";
}

DetadBucket detad_bucket(double length_sec) {
    if (!(length_sec > 0.0)) throw std::invalid_argument("detad_bucket: length must be positive");
    if (length_sec <= 30.0) return DetadBucket::XS;
    if (length_sec <= 60.0) return DetadBucket::S;
    if (length_sec <= 120.0) return DetadBucket::M;
    if (length_sec <= 180.0) return DetadBucket::L;
    return DetadBucket::XL;
}

std::vector<DetadRow> detad_report(const std::vector<DetectionPrediction>& preds, const std::vector<GroundTruth>& gts) {
    if (gts.empty()) throw EvalError("DETAD report: no ground truth instances");
    std::map<std::string, std::vector<std::size_t>> gt_by_video;
    for (std::size_t i = 0; i < gts.size(); ++i) gt_by_video[gts[i].video_id].push_back(i);

    // Bucket of each prediction's best-overlapping ground truth, if any.
    std::vector<std::optional<DetadBucket>> pred_bucket(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto it = gt_by_video.find(preds[i].video_id);
        if (it == gt_by_video.end()) continue;
        double best = 0.0;
        for (auto j : it->second) {
            const double o = tiou(preds[i].segment, gts[j].segment);
            if (o > best) {
                best = o;
                pred_bucket[i] = detad_bucket(gts[j].segment.length());
            }
        }
    }

    std::vector<DetadRow> rows;
    for (auto b : kDetadBuckets) {
        DetadRow row;
        row.bucket = b;
        std::vector<GroundTruth> g;
        for (const auto& x : gts) {
            if (detad_bucket(x.segment.length()) == b) g.push_back(x);
        }
        row.gt_count = g.size();
        row.share = static_cast<double>(g.size()) / static_cast<double>(gts.size());
        if (!g.empty()) {
            std::vector<DetectionPrediction> p;
            for (std::size_t i = 0; i < preds.size(); ++i) {
                if (!pred_bucket[i] || *pred_bucket[i] == b) p.push_back(preds[i]);
            }
            row.average_map = average_map(p, g);
        }
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------

void LocalizerParams::validate() const {
    if (window == 0 || window % 2 == 0) throw std::invalid_argument("localizer: window must be odd and >= 1");
    if (thresholds.empty()) throw std::invalid_argument("localizer: thresholds must not be empty");
    for (double t : thresholds) {
        if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("localizer: thresholds must lie in (0,1)");
    }
    if (!(nms_tiou > 0.0 && nms_tiou <= 1.0)) throw std::invalid_argument("localizer: nms_tiou must lie in (0,1]");
    if (max_predictions == 0) throw std::invalid_argument("localizer: max_predictions must be positive");
}

std::vector<double> smooth(const std::vector<double>& values, std::size_t window) {
    const std::size_t n = values.size();
    const std::size_t h = window / 2;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= h ? i - h : 0;
        const std::size_t hi = std::min(n - 1, i + h);
        double s = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) s += values[j];
        out[i] = s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

Segment row_extent(const extract::FeatureTrack& track, std::size_t row) {
    const double c = track.rows.at(row).t_center;
    const double half = 0.5 * track.hop_sec();
    return {std::max(0.0, c - half), std::min(track.duration_sec, c + half)};
}

std::vector<std::size_t> nms(const std::vector<Segment>& segments, const std::vector<double>& scores,
                             double nms_tiou) {
    std::vector<std::size_t> order(segments.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return segment_less(segments[a], segments[b]);
    });
    std::vector<std::size_t> keep;
    for (auto i : order) {
        bool ok = true;
        for (auto k : keep) {
            if (tiou(segments[i], segments[k]) > nms_tiou) {
                ok = false;
                break;
            }
        }
        if (ok) keep.push_back(i);
    }
    return keep;
}

namespace {

std::vector<double> softmax_of(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> out(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += out[i] = std::exp(z[i] - m);
    for (auto& v : out) v /= s;
    return out;
}

}  // namespace

Localization baseline_localize(const extract::FeatureTrack& track, const LocalizerParams& params) {
    params.validate();
    Localization out;
    if (track.rows.empty()) return out;
    if (!track.has_p_fg()) throw EvalError("localizer: track " + track.video_id + " has no p_fg scores");

    std::vector<double> p(track.rows.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = track.rows[i].p_fg.value();
    const auto s = smooth(p, params.window);

    std::vector<Segment> segs;
    std::vector<double> prop_scores;
    std::vector<std::size_t> labels;
    std::vector<double> det_scores;
    for (double theta : params.thresholds) {
        std::size_t i = 0;
        while (i < s.size()) {
            if (s[i] < theta) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j + 1 < s.size() && s[j + 1] >= theta) ++j;
            const Segment seg{row_extent(track, i).t0, row_extent(track, j).t1};
            if (seg.t1 > seg.t0) {
                double mean_p = 0.0;
                std::vector<double> logits(track.num_classes, 0.0);
                for (std::size_t k = i; k <= j; ++k) {
                    mean_p += s[k];
                    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += track.rows[k].action_logits[c];
                }
                const double n = static_cast<double>(j - i + 1);
                mean_p /= n;
                for (auto& v : logits) v /= n;
                segs.push_back(seg);
                prop_scores.push_back(mean_p);
                if (!logits.empty()) {
                    const auto prob = softmax_of(logits);
                    const auto c = static_cast<std::size_t>(std::max_element(prob.begin(), prob.end()) - prob.begin());
                    labels.push_back(c);
                    det_scores.push_back(mean_p * prob[c]);
                } else {
                    labels.push_back(0);
                    det_scores.push_back(mean_p);
                }
            }
            i = j + 1;
        }
    }

    for (auto k : nms(segs, prop_scores, params.nms_tiou)) {
        if (out.proposals.size() == params.max_predictions) break;
        out.proposals.push_back({track.video_id, segs[k], prop_scores[k]});
    }

    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t k = 0; k < segs.size(); ++k) by_class[labels[k]].push_back(k);
    for (const auto& [c, idx] : by_class) {
        std::vector<Segment> cs;
        std::vector<double> sc;
        for (auto k : idx) {
            cs.push_back(segs[k]);
            sc.push_back(det_scores[k]);
        }
        for (auto k : nms(cs, sc, params.nms_tiou)) out.detections.push_back({track.video_id, c, cs[k], sc[k]});
    }
    std::stable_sort(out.detections.begin(), out.detections.end(), [](const auto& a, const auto& b) {
        if (a.score != b.score) return a.score > b.score;
        return segment_less(a.segment, b.segment);
    });
    if (out.detections.size() > params.max_predictions) out.detections.resize(params.max_predictions);
    return out;
}

// ---------------------------------------------------------------------------

Probe fit_probe(const std::vector<extract::FeatureTrack>& tracks, const corpus::Corpus& corpus,
                const ProbeOptions& options) {
    if (tracks.empty()) throw EvalError("probe: no training tracks");
    const std::size_t F = tracks.front().feature_dim;
    const std::size_t C = corpus.num_classes();

    std::vector<double> X;
    std::vector<int> region;
    std::vector<std::optional<std::size_t>> cls;
    for (const auto& t : tracks) {
        if (t.feature_dim != F) throw EvalError("probe: tracks disagree on feature_dim");
        const auto lab = extract::row_classes(t, corpus);
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            X.insert(X.end(), t.rows[i].feature.begin(), t.rows[i].feature.end());
            region.push_back(lab[i] ? 1 : 0);
            cls.push_back(lab[i]);
        }
    }
    const std::size_t n = region.size();
    if (n == 0) throw EvalError("probe: training tracks have no rows");

    Probe pr;
    pr.num_classes = C;
    pr.mean.assign(F, 0.0);
    pr.inv_std.assign(F, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < F; ++f) pr.mean[f] += X[i * F + f];
    }
    for (auto& m : pr.mean) m /= static_cast<double>(n);
    std::vector<double> var(F, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < F; ++f) {
            const double d = X[i * F + f] - pr.mean[f];
            var[f] += d * d;
        }
    }
    for (std::size_t f = 0; f < F; ++f) {
        const double sd = std::sqrt(var[f] / static_cast<double>(n));
        pr.inv_std[f] = sd > 1e-12 ? 1.0 / sd : 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < F; ++f) X[i * F + f] = (X[i * F + f] - pr.mean[f]) * pr.inv_std[f];
    }

    // Class-balanced weights for the fg/bg head.
    std::size_t n_fg = 0;
    for (int r : region) n_fg += static_cast<std::size_t>(r);
    const std::size_t n_bg = n - n_fg;
    const double w_fg = n_fg ? 0.5 / static_cast<double>(n_fg) : 0.0;
    const double w_bg = n_bg ? 0.5 / static_cast<double>(n_bg) : 0.0;

    pr.region_weight.assign(F, 0.0);
    pr.action_weight.assign(C * F, 0.0);
    pr.action_bias.assign(C, 0.0);
    std::vector<double> gw(F), ga(C * F), gb(C), z(C);
    for (std::size_t it = 0; it < options.iterations; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(ga.begin(), ga.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        double g_rb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* x = &X[i * F];
            double a = pr.region_bias;
            for (std::size_t f = 0; f < F; ++f) a += pr.region_weight[f] * x[f];
            const double sig = 1.0 / (1.0 + std::exp(-a));
            const double e = (sig - region[i]) * (region[i] ? w_fg : w_bg);
            for (std::size_t f = 0; f < F; ++f) gw[f] += e * x[f];
            g_rb += e;
            if (!cls[i]) continue;
            double m = -1e300;
            for (std::size_t c = 0; c < C; ++c) {
                double v = pr.action_bias[c];
                for (std::size_t f = 0; f < F; ++f) v += pr.action_weight[c * F + f] * x[f];
                z[c] = v;
                m = std::max(m, v);
            }
            double s = 0.0;
            for (auto& v : z) s += v = std::exp(v - m);
            for (std::size_t c = 0; c < C; ++c) {
                const double e2 = (z[c] / s - (c == *cls[i] ? 1.0 : 0.0)) / static_cast<double>(n_fg);
                gb[c] += e2;
                for (std::size_t f = 0; f < F; ++f) ga[c * F + f] += e2 * x[f];
            }
        }
        const double lr = options.learning_rate;
        for (std::size_t f = 0; f < F; ++f) {
            pr.region_weight[f] -= lr * (gw[f] + options.l2 * pr.region_weight[f]);
        }
        pr.region_bias -= lr * g_rb;
        for (std::size_t k = 0; k < C * F; ++k) pr.action_weight[k] -= lr * (ga[k] + options.l2 * pr.action_weight[k]);
        for (std::size_t c = 0; c < C; ++c) pr.action_bias[c] -= lr * gb[c];
    }
    return pr;
}

extract::FeatureTrack apply_probe(const extract::FeatureTrack& track, const Probe& probe) {
    const std::size_t F = probe.mean.size();
    if (track.feature_dim != F) throw EvalError("probe: feature_dim mismatch for track " + track.video_id);
    auto out = track;
    out.num_classes = probe.num_classes;
    std::vector<double> x(F);
    for (auto& row : out.rows) {
        for (std::size_t f = 0; f < F; ++f) x[f] = (row.feature[f] - probe.mean[f]) * probe.inv_std[f];
        double a = probe.region_bias;
        for (std::size_t f = 0; f < F; ++f) a += probe.region_weight[f] * x[f];
        row.p_fg = 1.0 / (1.0 + std::exp(-a));
        row.action_logits.assign(probe.num_classes, 0.0);
        for (std::size_t c = 0; c < probe.num_classes; ++c) {
            double v = probe.action_bias[c];
            for (std::size_t f = 0; f < F; ++f) v += probe.action_weight[c * F + f] * x[f];
            row.action_logits[c] = v;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

json wrap(json results, const std::string& kind, const std::string& command) {
    json doc = json::object();
    if (!command.empty()) doc["command"] = command;
    doc["kind"] = kind;
    doc["results"] = std::move(results);
    return doc;
}

json parse_results(const std::string& text, const std::string& kind) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw EvalError(std::string("predictions file: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("results") || !doc["results"].is_object()) {
        throw EvalError("predictions file: missing 'results' object");
    }
    if (doc.contains("kind") && doc["kind"] != kind) {
        throw EvalError("predictions file holds " + doc["kind"].get<std::string>() + ", expected " + kind);
    }
    return doc["results"];
}

Segment parse_segment(const json& e, const std::string& vid) {
    if (!e.contains("segment") || !e["segment"].is_array() || e["segment"].size() != 2) {
        throw EvalError("predictions file: video " + vid + ": bad 'segment'");
    }
    Segment s{e["segment"][0].get<double>(), e["segment"][1].get<double>()};
    if (!(s.t0 < s.t1)) throw EvalError("predictions file: video " + vid + ": segment with t0 >= t1");
    return s;
}

}  // namespace

std::string detections_text(const std::vector<DetectionPrediction>& preds, const std::string& command) {
    json results = json::object();
    for (const auto& p : preds) {
        results[p.video_id].push_back({{"label", p.label}, {"segment", {p.segment.t0, p.segment.t1}}, {"score", p.score}});
    }
    return wrap(std::move(results), "detection", command).dump(1) + "\n";
}

std::string proposals_text(const std::vector<ProposalPrediction>& props, const std::string& command) {
    json results = json::object();
    for (const auto& p : props) {
        results[p.video_id].push_back({{"segment", {p.segment.t0, p.segment.t1}}, {"score", p.score}});
    }
    return wrap(std::move(results), "proposal", command).dump(1) + "\n";
}

std::vector<DetectionPrediction> parse_detections(const std::string& text) {
    const auto results = parse_results(text, "detection");
    std::vector<DetectionPrediction> out;
    try {
        for (const auto& [vid, list] : results.items()) {
            for (const auto& e : list) {
                if (!e.contains("label")) throw EvalError("predictions file: video " + vid + ": missing 'label'");
                out.push_back({vid, e["label"].get<std::size_t>(), parse_segment(e, vid), e.at("score").get<double>()});
            }
        }
    } catch (const json::exception& e) {
        throw EvalError(std::string("predictions file: ") + e.what());
    }
    return out;
}

std::vector<ProposalPrediction> parse_proposals(const std::string& text) {
    const auto results = parse_results(text, "proposal");
    std::vector<ProposalPrediction> out;
    try {
        for (const auto& [vid, list] : results.items()) {
            for (const auto& e : list) out.push_back({vid, parse_segment(e, vid), e.at("score").get<double>()});
        }
    } catch (const json::exception& e) {
        throw EvalError(std::string("predictions file: ") + e.what());
    }
    return out;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

}  // namespace tspkit::evalkit
