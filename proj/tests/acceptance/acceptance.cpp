// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "tspkit/analysis.hpp"
#include "tspkit/experiment.hpp"
#include "tspkit/extract.hpp"
#include "tspkit/pretrain.hpp"
#include "tspkit/rng.hpp"
#include "tspkit/textio.hpp"

using namespace tspkit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

/// Collects failed checks of one criterion.
class Checker {
public:
    void check(bool ok, const std::string& what) {
        if (!ok && failures_.size() < 5) failures_.push_back(what);
        if (!ok) ++failed_;
    }
    void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
    Outcome outcome() const {
        Outcome o;
        o.pass = failed_ == 0;
        o.detail = notes_;
        for (const auto& f : failures_) o.detail += (o.detail.empty() ? "" : "; ") + std::string("failed: ") + f;
        if (failed_ > failures_.size()) o.detail += "; " + std::to_string(failed_ - failures_.size()) + " more";
        return o;
    }

private:
    std::vector<std::string> failures_;
    std::size_t failed_ = 0;
    std::string notes_;
};

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string fixed(double v, int d = 4) { return textio::format_fixed(v, d); }

corpus::Corpus small_corpus(std::uint64_t seed, std::size_t classes = 8) {
    corpus::SynthConfig s;
    s.num_classes = classes;
    s.train_videos = 6;
    s.valid_videos = 3;
    s.min_duration_sec = 60;
    s.max_duration_sec = 120;
    s.length_log_mu = std::log(15.0);
    return corpus::generate_synthetic(s, seed);
}

pretrain::TrainConfig small_train(pretrain::Mode mode, std::uint64_t seed) {
    pretrain::TrainConfig t;
    t.mode = mode;
    t.encoder_lr = 0.01;
    t.head_lrs = {0.01, 0.05};
    t.epochs = 3;
    t.warmup_epochs = 1;
    t.decay_epochs = {2};
    t.seed = seed;
    return t;
}

encoder::EncoderConfig small_encoder() {
    encoder::EncoderConfig e;
    e.embed_dim = 8;
    e.num_blocks = 1;
    return e;
}

std::vector<double> head_flat(const pretrain::HeadParams& h) {
    std::vector<double> out;
    for (const auto* t : h.tensors()) out.insert(out.end(), t->data().begin(), t->data().end());
    return out;
}

/// Two fg and two bg clips of the first training epoch, test-mode crops.
std::vector<std::pair<sampler::LabeledClip, num::Tensor>> mixed_batch(const corpus::Corpus& c,
                                                                      const sampler::ClipGeometry& geom) {
    const auto ep = sampler::build_epoch(c, corpus::Subset::train, geom, 0, 5);
    std::vector<std::pair<sampler::LabeledClip, num::Tensor>> out;
    std::size_t fg = 0, bg = 0;
    for (const auto& lc : ep.clips) {
        auto& n = lc.labels.region ? fg : bg;
        if (n >= 2) continue;
        ++n;
        out.emplace_back(lc, sampler::load_clip(c, lc.spec, geom, sampler::Mode::test, nullptr));
    }
    return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
    Checker ck;
    const auto c = small_corpus(31);
    const sampler::ClipGeometry geom;
    encoder::EncoderConfig enc;  // d = 64, B = 2
    const std::size_t C = c.num_classes();
    ck.check(enc.embed_dim == 64 && enc.num_blocks == 2 && C == 8, "default sizes");

    const auto init = encoder::init_params(enc, 21);
    const auto gvf = pretrain::precompute_gvf(c, init, enc, geom, pretrain::GvfOptions{}, "init");
    auto heads = pretrain::init_heads(enc.feature_dim(), C, pretrain::Mode::tsp, 22);
    Rng rng(23);
    for (auto* t : heads.tensors())
        for (auto& v : t->data()) v = 0.2 * rng.normal();

    const auto batch = mixed_batch(c, geom);
    const auto n_enc = encoder::flatten(init).size();
    auto point = encoder::flatten(init);
    const auto hf = head_flat(heads);
    point.insert(point.end(), hf.begin(), hf.end());

    num::LossBuilder loss = [&](num::Tape& t, num::Var flat) {
        const auto ev = encoder::bind_flat(t, flat, enc);
        std::size_t off = n_enc;
        auto take = [&](const num::Tensor& like) {
            auto v = num::slice(t, flat, off, like.shape());
            off += like.size();
            return v;
        };
        pretrain::HeadVars hv{take(heads.action_weight), take(heads.action_bias), take(heads.region_weight),
                              take(heads.region_bias)};
        std::vector<num::Var> terms;
        for (const auto& [lc, clip] : batch) {
            const auto f = encoder::forward(t, ev, enc, clip);
            const auto g = t.constant(num::Tensor::vector(gvf.at(c.videos()[lc.spec.video_index].id)));
            terms.push_back(pretrain::clip_loss(t, f, g, lc.labels, hv, pretrain::LossWeights{}, pretrain::Mode::tsp));
        }
        return num::scale(t, num::sum_scalars(t, terms), 1.0 / static_cast<double>(terms.size()));
    };
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = num::gradient_check(loss, point, 100, 1e-6, 7);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ck.check(batch.size() == 4, "batch of 2 fg + 2 bg clips");
    ck.check(rep.coords_checked == 100, "100 coordinates checked");
    ck.check(rep.h == 1e-6, "h = 1e-6");
    ck.check(rep.max_rel_error <= 1e-5, "max relative error " + sci(rep.max_rel_error) + " > 1e-5");
    ck.check(secs < 60.0, "runtime " + fixed(secs, 1) + " s >= 60 s");
    ck.note(std::to_string(point.size()) + " parameters, 100 coords, max rel err " + sci(rep.max_rel_error) + ", " +
            fixed(secs, 1) + " s");
    return ck.outcome();
}

Outcome closed_forms() {
    Checker ck;
    const auto c = small_corpus(32, 4);
    const sampler::ClipGeometry geom;
    encoder::EncoderConfig enc;
    const auto params = encoder::init_params(enc, 3);
    const auto batch = mixed_batch(c, geom);

    auto zero_heads = pretrain::init_heads(enc.feature_dim(), 4, pretrain::Mode::tsp, 0);
    for (auto* t : zero_heads.tensors())
        for (auto& v : t->data()) v = 0.0;
    double worst_fg = 0.0, worst_bg = 0.0;
    for (const auto& [lc, clip] : batch) {
        num::Tape t(false);
        const auto ev = encoder::bind(t, params, false);
        const auto f = encoder::forward(t, ev, enc, clip);
        const auto g = t.constant(num::Tensor({enc.feature_dim()}, 0.7));
        const auto hv = pretrain::bind_heads(t, zero_heads, false);
        const double l =
            t.value(pretrain::clip_loss(t, f, g, lc.labels, hv, pretrain::LossWeights{}, pretrain::Mode::tsp)).item();
        if (lc.labels.region) {
            worst_fg = std::max(worst_fg, std::abs(l - (std::log(4.0) + std::log(2.0))));
        } else {
            worst_bg = std::max(worst_bg, std::abs(l - std::log(2.0)));
        }
    }
    ck.check(worst_fg <= 1e-9, "fg loss off ln4 + ln2 by " + sci(worst_fg));
    ck.check(worst_bg <= 1e-9, "bg loss off ln2 by " + sci(worst_bg));

    // Background-only batch through the whole encoder.
    num::Tape t;
    const auto ev = encoder::bind(t, params, true);
    const auto heads = pretrain::init_heads(enc.feature_dim(), 4, pretrain::Mode::tsp, 9);
    const auto hv = pretrain::bind_heads(t, heads, true);
    std::vector<num::Var> terms;
    const auto ep = sampler::build_epoch(c, corpus::Subset::train, geom, 0, 1);
    for (const auto& lc : ep.clips) {
        if (lc.labels.region || terms.size() == 6) continue;
        const auto clip = sampler::load_clip(c, lc.spec, geom, sampler::Mode::test, nullptr);
        const auto f = encoder::forward(t, ev, enc, clip);
        const auto g = t.constant(num::Tensor({enc.feature_dim()}, 0.7));
        terms.push_back(pretrain::clip_loss(t, f, g, lc.labels, hv, pretrain::LossWeights{}, pretrain::Mode::tsp));
    }
    const auto grads = t.backward(num::sum_scalars(t, terms));
    std::size_t nonzero = 0;
    for (double v : grads[hv.action_weight].data()) nonzero += v != 0.0;
    for (double v : grads[hv.action_bias].data()) nonzero += v != 0.0;
    double region = 0.0;
    for (double v : grads[hv.region_weight].data()) region += std::abs(v);
    ck.check(nonzero == 0, std::to_string(nonzero) + " nonzero W_c gradient entries");
    ck.check(region > 0.0, "region head gradient is zero");
    ck.note("fg err " + sci(worst_fg) + ", bg err " + sci(worst_bg) + ", " + std::to_string(terms.size()) +
            "-clip bg batch: W_c gradient exactly zero");
    return ck.outcome();
}

evalkit::Segment grid_segment(Rng& rng) {
    const double a = static_cast<double>(rng.uniform_index(10));
    return {a, a + 1.0 + static_cast<double>(rng.uniform_index(4))};
}

Outcome metric_oracles() {
    Checker ck;
    Rng rng(101);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto n_gt = 1 + rng.uniform_index(3);
        const auto n_p = rng.uniform_index(7);
        std::vector<evalkit::GroundTruth> g;
        std::vector<evalkit::DetectionPrediction> p;
        std::vector<evalkit::ProposalPrediction> q;
        auto vid = [&] { return std::string(rng.uniform() < 0.7 ? "a" : "b"); };
        for (std::size_t k = 0; k < n_gt; ++k) g.push_back({vid(), rng.uniform_index(2), grid_segment(rng)});
        for (std::size_t k = 0; k < n_p; ++k) {
            const auto v = vid();
            const auto s = grid_segment(rng);
            const double score = static_cast<double>(rng.uniform_index(4)) / 4.0;
            p.push_back({v, rng.uniform_index(2), s, score});
            q.push_back({v, s, score});
        }
        for (double thr : evalkit::tiou_thresholds()) {
            for (std::size_t label = 0; label < 2; ++label) {
                const auto got = evalkit::average_precision(p, g, label, thr);
                const bool has = std::any_of(g.begin(), g.end(), [&](const auto& x) { return x.label == label; });
                ck.check(got.has_value() == has, "AP presence");
                if (got) worst = std::max(worst, std::abs(*got - oracle::ap(p, g, label, thr)));
            }
            worst = std::max(worst, std::abs(evalkit::map_at(p, g, thr) - oracle::map(p, g, thr)));
        }
        std::vector<std::size_t> an{1, 2, 3, 4, 5, 6, 7, 100};
        const auto curve = evalkit::ar_at_an(q, g, an);
        for (std::size_t k = 0; k < an.size(); ++k) worst = std::max(worst, std::abs(curve[k] - oracle::ar(q, g, an[k])));
        worst = std::max(worst, std::abs(evalkit::auc_100(q, g) - oracle::auc(q, g)));
    }
    ck.check(worst <= 1e-12, "max deviation " + sci(worst));
    ck.check(evalkit::tiou({0, 10}, {5, 15}) == 1.0 / 3.0, "tIoU([0,10],[5,15]) != 1/3");
    ck.check(evalkit::tiou({0, 10}, {0, 10}) == 1.0, "identical segments");
    ck.check(evalkit::tiou({0, 1}, {1, 2}) == 0.0, "touching segments");
    ck.note("200 instances, AP/mAP at 10 thresholds, AR at 8 ANs, AUC; max deviation " + sci(worst));
    return ck.outcome();
}

Outcome directional_study() {
    Checker ck;
    auto cfg = experiment::preset("paper-study1");
    const auto& s = cfg.synth;
    ck.check(s.num_classes == 8 && s.train_videos == 80 && s.valid_videos == 40 && s.noise_sigma == 0.5 &&
                 s.background == corpus::BackgroundMode::hard,
             "default corpus shape");
    ck.check(cfg.seeds == std::vector<std::uint64_t>{0, 1, 2, 3, 4}, "seeds 0..4");
    cfg.threads = std::min<std::size_t>(4, experiment::default_threads());
    const auto t0 = std::chrono::steady_clock::now();
    const auto corpus = corpus::generate_synthetic(cfg.synth, cfg.corpus_seed);
    const auto r = experiment::run_bench(corpus, cfg, std::nullopt, "acceptance");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto mean = [&](pretrain::Mode m, const char* k) { return r.aggregates.at(m).at(k).mean; };
    const double map_tsp = mean(pretrain::Mode::tsp, "avg_map"), map_tac = mean(pretrain::Mode::tac, "avg_map");
    const double c_tsp = mean(pretrain::Mode::tsp, "contrast"), c_tac = mean(pretrain::Mode::tac, "contrast");
    const double r_tsp = mean(pretrain::Mode::tsp, "region_acc"),
                 r_nogvf = mean(pretrain::Mode::tsp_nogvf, "region_acc");
    ck.check(map_tsp - map_tac >= 5.0, "avg mAP gap " + fixed(map_tsp - map_tac, 2) + " < 5");
    ck.check(c_tsp > c_tac, "contrast tsp " + fixed(c_tsp) + " <= tac " + fixed(c_tac));
    ck.check(r_tsp >= r_nogvf, "region acc tsp " + fixed(r_tsp) + " < nogvf " + fixed(r_nogvf));
    ck.check(secs <= 900.0, "runtime " + fixed(secs, 0) + " s > 900 s");
    ck.note("avg mAP tsp " + fixed(map_tsp, 2) + " / nogvf " + fixed(mean(pretrain::Mode::tsp_nogvf, "avg_map"), 2) +
            " / tac " + fixed(map_tac, 2) + "; contrast tsp " + fixed(c_tsp) + " / nogvf " +
            fixed(mean(pretrain::Mode::tsp_nogvf, "contrast")) + " / tac " + fixed(c_tac) + "; region acc tsp " +
            fixed(r_tsp) + " / nogvf " + fixed(r_nogvf) + "; " + fixed(secs, 0) + " s on " +
            std::to_string(cfg.threads) + " thread(s)");
    return ck.outcome();
}

Outcome frozen_gvf() {
    Checker ck;
    const auto c = small_corpus(33, 4);
    const sampler::ClipGeometry geom;
    const auto enc = small_encoder();
    const auto init = encoder::init_params(enc, 8);
    for (auto pool : {pretrain::GvfPool::max, pretrain::GvfPool::avg}) {
        auto cfg = small_train(pretrain::Mode::tsp, 4);
        cfg.gvf.pool = pool;
        const auto before = pretrain::precompute_gvf(c, init, enc, geom, cfg.gvf, "before");
        const auto r = pretrain::train(c, enc, geom, init, cfg);
        const auto after = pretrain::precompute_gvf(c, r.checkpoint.gvf_encoder, enc, geom, cfg.gvf, "after");
        ck.check(r.checkpoint.gvf.features == before.features, "stored GVF differs from the pre-training table");
        ck.check(after.features == before.features, "GVF recomputed from the stored encoder differs");
        ck.check(!(r.checkpoint.encoder == init), "encoder did not train");

        // Permutation of the clip set.
        Rng rng(77);
        for (std::size_t vi = 0; vi < c.videos().size(); ++vi) {
            std::vector<std::vector<double>> rows;
            for (const auto& lc : sampler::video_test_clips(c, vi, geom)) {
                rows.push_back(encoder::encode(init, enc, sampler::load_clip(c, lc.spec, geom, sampler::Mode::test, nullptr)));
            }
            const auto ref = pretrain::pool_features(rows, pool);
            ck.check(ref == before.at(c.videos()[vi].id), "GVF differs from pooled clip features");
            for (int k = 0; k < 10; ++k) {
                rng.shuffle(rows.begin(), rows.end());
                ck.check(pretrain::pool_features(rows, pool) == ref, "pooling depends on clip order");
            }
        }
    }
    ck.note("max and avg pools: table bit-identical after training; 10 permutations per video exact");
    return ck.outcome();
}

Outcome balanced_sampling() {
    Checker ck;
    const auto big = corpus::generate_synthetic(corpus::SynthConfig{}, 0);
    const sampler::ClipGeometry geom;
    std::size_t epochs = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (std::size_t e = 0; e < 8; ++e) {
            const auto ep = sampler::build_epoch(big, corpus::Subset::train, geom, e, seed);
            std::size_t fg = 0;
            for (const auto& lc : ep.clips) fg += lc.labels.region;
            ck.check(ep.foreground == ep.background && fg == ep.foreground && ep.clips.size() == 2 * fg && fg > 0,
                     "seed " + std::to_string(seed) + " epoch " + std::to_string(e));
            ++epochs;
        }
    }
    // The counts logged by real training runs.
    const auto c = small_corpus(34, 4);
    std::size_t logged = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto cfg = small_train(pretrain::Mode::tsp, seed);
        cfg.epochs = 8;
        cfg.warmup_epochs = 2;
        cfg.decay_epochs = {4, 6};
        cfg.head_lrs = {0.01};
        const auto r = pretrain::train(c, small_encoder(), geom, encoder::init_params(small_encoder(), seed), cfg);
        ck.check(r.log.size() == 8, "8 logged epochs");
        for (const auto& e : r.log) {
            ck.check(e.foreground_clips == e.background_clips && e.foreground_clips > 0,
                     "training seed " + std::to_string(seed) + " epoch " + std::to_string(e.epoch));
            ++logged;
        }
    }
    ck.note(std::to_string(epochs) + " epochs on the default corpus and " + std::to_string(logged) +
            " logged training epochs, all fg == bg");
    return ck.outcome();
}

Outcome lr_schedule() {
    Checker ck;
    const pretrain::TrainConfig cfg;  // warmup 2, decay at 4 and 6, gamma 0.01
    ck.check(cfg.decay_gamma == 0.01 && cfg.decay_epochs == std::vector<std::size_t>{4, 6} && cfg.warmup_epochs == 2,
             "default schedule");
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-15 * std::max(1.0, std::abs(b)); };
    for (std::size_t spe : {1, 7, 10, 25}) {
        const std::size_t W = 2 * spe;
        for (std::size_t s = 0; s < W; ++s) {
            ck.check(close(pretrain::lr_at(s, spe, cfg), static_cast<double>(s + 1) / static_cast<double>(W)),
                     "warmup step " + std::to_string(s));
        }
        ck.check(close(pretrain::lr_at(W, spe, cfg), 1.0), "first step after warmup");
        ck.check(close(pretrain::lr_at(4 * spe - 1, spe, cfg), 1.0), "last step before epoch 4");
        ck.check(close(pretrain::lr_at(4 * spe, spe, cfg), 0.01), "first step of epoch 4");
        ck.check(close(pretrain::lr_at(6 * spe - 1, spe, cfg), 0.01), "last step before epoch 6");
        ck.check(close(pretrain::lr_at(6 * spe, spe, cfg), 1e-4), "first step of epoch 6");
        ck.check(close(pretrain::lr_at(8 * spe - 1, spe, cfg), 1e-4), "last step");
    }
    ck.note("ramp (s+1)/W and drops at epochs 4 and 6 for 4 step counts");
    return ck.outcome();
}

Outcome detad_buckets() {
    Checker ck;
    using evalkit::DetadBucket;
    ck.check(evalkit::detad_bucket(30.0) == DetadBucket::XS, "30 s");
    ck.check(evalkit::detad_bucket(60.0) == DetadBucket::S, "60 s");
    ck.check(evalkit::detad_bucket(120.0) == DetadBucket::M, "120 s");
    ck.check(evalkit::detad_bucket(180.0) == DetadBucket::L, "180 s");
    ck.check(evalkit::detad_bucket(180.01) == DetadBucket::XL, "180.01 s");
    ck.check(evalkit::detad_bucket(30.01) == DetadBucket::S, "30.01 s");
    ck.note("30/60/120/180 -> XS/S/M/L, 180.01 -> XL");
    return ck.outcome();
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = evalkit::read_text(e.path());
    }
    return out;
}

Outcome determinism() {
    Checker ck;
    const auto c = small_corpus(35, 4);
    const sampler::ClipGeometry geom;
    const auto enc = small_encoder();
    const auto cfg = small_train(pretrain::Mode::tsp, 6);
    const auto a = pretrain::train(c, enc, geom, encoder::init_params(enc, 1), cfg);
    const auto b = pretrain::train(c, enc, geom, encoder::init_params(enc, 1), cfg);
    const auto text = pretrain::checkpoint_text(a.checkpoint, "acceptance");
    ck.check(text == pretrain::checkpoint_text(b.checkpoint, "acceptance"), "checkpoints differ");
    ck.check(pretrain::training_log_tsv(a.log) == pretrain::training_log_tsv(b.log), "training logs differ");

    const auto back = pretrain::parse_checkpoint(text);
    ck.check(back.encoder == a.checkpoint.encoder && back.heads == a.checkpoint.heads &&
                 back.gvf_encoder == a.checkpoint.gvf_encoder && back.gvf == a.checkpoint.gvf &&
                 back.selection == a.checkpoint.selection && back.train_config == a.checkpoint.train_config &&
                 back.encoder_config == a.checkpoint.encoder_config && back.classes == a.checkpoint.classes,
             "checkpoint round trip is not value-exact");
    ck.check(back.id() == a.checkpoint.id(), "checkpoint id changes on round trip");
    ck.check(pretrain::checkpoint_text(back, "acceptance") == text, "checkpoint re-serialization differs");

    std::size_t tracks = 0;
    for (std::size_t vi = 0; vi < c.videos().size(); ++vi) {
        const auto t1 = extract::extract_track(c, vi, a.checkpoint);
        const auto t2 = extract::extract_track(c, vi, b.checkpoint);
        const auto s1 = extract::track_text(t1, "acceptance");
        ck.check(s1 == extract::track_text(t2, "acceptance"), "feature files differ");
        ck.check(extract::parse_track(s1) == t1, "feature file round trip is not value-exact");
        ++tracks;
    }

    // Reports: two tiny bench runs into separate directories.
    auto bc = experiment::preset("paper-study1");
    bc.synth = corpus::SynthConfig{};
    bc.synth.num_classes = 3;
    bc.synth.train_videos = 4;
    bc.synth.valid_videos = 2;
    bc.synth.min_duration_sec = 40;
    bc.synth.max_duration_sec = 80;
    bc.synth.length_log_mu = std::log(10.0);
    bc.encoder.embed_dim = 6;
    bc.seeds = {0, 1};
    bc.train.head_lrs = {0.01};
    bc.train.epochs = 1;
    bc.train.warmup_epochs = 0;
    bc.train.decay_epochs = {};
    bc.init_train.epochs = 1;
    bc.init_train.warmup_epochs = 0;
    bc.probe.iterations = 20;
    const auto bcorpus = corpus::generate_synthetic(bc.synth, bc.corpus_seed);
    const auto base = fs::temp_directory_path() / "tspkit_acceptance_reports";
    fs::remove_all(base);
    bc.threads = 1;
    experiment::run_bench(bcorpus, bc, base / "a", "acceptance");
    bc.threads = 2;
    experiment::run_bench(bcorpus, bc, base / "b", "acceptance");
    const auto ra = dir_contents(base / "a");
    const auto rb = dir_contents(base / "b");
    ck.check(ra == rb, "bench reports differ between runs");
    fs::remove_all(base);

    const auto agg = analysis::aggregate_runs({{{"m", 1.0}}, {{"m", 3.0}}});
    ck.check(std::abs(agg.at("m").mean - 2.0) <= 1e-9, "aggregate mean");
    ck.check(std::abs(agg.at("m").std - 1.4142135623730951) <= 1e-9, "aggregate std");
    ck.check(fixed(agg.at("m").std) == "1.4142", "aggregate std rendering");
    ck.note("checkpoints, " + std::to_string(tracks) + " feature files and " + std::to_string(ra.size()) +
            " report files byte-identical; round trips exact; {1,3} -> 2 ± 1.4142");
    return ck.outcome();
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "gradient fidelity of the full tsp loss", gradient_fidelity},
        {2, "loss closed forms and background-only W_c gradient", closed_forms},
        {3, "metric oracle equivalence", metric_oracles},
        {4, "directional mode comparison", directional_study},
        {5, "frozen GVF contract", frozen_gvf},
        {6, "balanced sampling", balanced_sampling},
        {7, "lr schedule", lr_schedule},
        {8, "DETAD buckets", detad_buckets},
        {9, "determinism and formats", determinism},
    };
    // Optional criterion ids on the command line select a subset.
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failed = 0, ran = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.name << " (" << o.detail << "; "
                  << fixed(secs, 1) << " s)" << std::endl;
    }
    std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
