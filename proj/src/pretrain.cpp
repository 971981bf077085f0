#include "tspkit/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tspkit/rng.hpp"
#include "tspkit/textio.hpp"

namespace tspkit::pretrain {

using nlohmann::json;
using num::Tape;
using num::Tensor;
using num::Var;

std::string to_string(Mode m) {
    switch (m) {
        case Mode::tsp: return "tsp";
        case Mode::tsp_nogvf: return "tsp_nogvf";
        case Mode::tac: return "tac";
    }
    return "?";
}

Mode parse_mode(const std::string& s) {
    if (s == "tsp") return Mode::tsp;
    if (s == "tsp_nogvf") return Mode::tsp_nogvf;
    if (s == "tac") return Mode::tac;
    throw std::invalid_argument("unknown mode '" + s + "' (expected tsp|tsp_nogvf|tac)");
}

std::string to_string(GvfPool p) { return p == GvfPool::max ? "max" : "avg"; }

GvfPool parse_gvf_pool(const std::string& s) {
    if (s == "max") return GvfPool::max;
    if (s == "avg" || s == "mean") return GvfPool::avg;
    throw std::invalid_argument("unknown GVF pool '" + s + "' (expected max|avg)");
}

std::string to_string(GvfClipSet s) { return s == GvfClipSet::segment ? "segment" : "dense"; }

GvfClipSet parse_gvf_clip_set(const std::string& s) {
    if (s == "segment") return GvfClipSet::segment;
    if (s == "dense") return GvfClipSet::dense;
    throw std::invalid_argument("unknown GVF clip set '" + s + "' (expected segment|dense)");
}

bool has_region_head(Mode m) { return m != Mode::tac; }

std::size_t region_input_dim(std::size_t feature_dim, Mode mode) {
    return mode == Mode::tsp ? 2 * feature_dim : feature_dim;
}

HeadParams init_heads(std::size_t feature_dim, std::size_t num_classes, Mode mode, std::uint64_t seed) {
    Rng rng(seed);
    auto normal = [&](num::Shape shape) {
        Tensor t(std::move(shape), 0.0);
        for (auto& v : t.data()) v = 0.01 * rng.normal();
        return t;
    };
    HeadParams h;
    h.action_weight = normal({feature_dim, num_classes});
    h.action_bias = Tensor({num_classes}, 0.0);
    h.region_weight = normal({region_input_dim(feature_dim, mode), 2});
    h.region_bias = Tensor({2}, 0.0);
    return h;
}

HeadVars bind_heads(Tape& tape, const HeadParams& heads, bool requires_grad) {
    auto leaf = [&](const Tensor& t) {
        Tensor c = t;
        c.set_requires_grad(requires_grad);
        return tape.leaf(std::move(c));
    };
    return {leaf(heads.action_weight), leaf(heads.action_bias), leaf(heads.region_weight), leaf(heads.region_bias)};
}

void LossWeights::validate() const {
    if (action < 0.0 || region < 0.0) throw std::invalid_argument("loss weights must be nonnegative");
    if (action == 0.0 && region == 0.0) throw std::invalid_argument("loss weights cannot both be zero");
}

HeadLogits apply_heads(Tape& tape, Var feature, std::optional<Var> gvf, const HeadVars& heads, Mode mode) {
    HeadLogits out;
    out.action = num::linear(tape, feature, heads.action_weight, heads.action_bias);
    if (mode == Mode::tac) return out;
    Var input = feature;
    if (mode == Mode::tsp) {
        if (!gvf) throw std::invalid_argument("tsp region head needs the global video feature");
        input = num::concat(tape, feature, *gvf);
    }
    out.region = num::linear(tape, input, heads.region_weight, heads.region_bias);
    return out;
}

Var clip_loss(Tape& tape, Var feature, std::optional<Var> gvf, const sampler::ClipLabels& labels,
              const HeadVars& heads, const LossWeights& weights, Mode mode) {
    if (labels.region == 1 && !labels.action) throw std::invalid_argument("foreground clip without action label");
    if (mode == Mode::tac) {
        if (labels.region != 1) throw std::invalid_argument("tac mode trains on foreground clips only");
        auto logits = apply_heads(tape, feature, gvf, heads, mode);
        return num::scale(tape, num::softmax_cross_entropy(tape, logits.action, *labels.action), weights.action);
    }
    auto logits = apply_heads(tape, feature, gvf, heads, mode);
    Var region_term = num::scale(
        tape, num::softmax_cross_entropy(tape, *logits.region, static_cast<std::size_t>(labels.region)), weights.region);
    if (labels.region != 1) return region_term;
    Var action_term =
        num::scale(tape, num::softmax_cross_entropy(tape, logits.action, *labels.action), weights.action);
    const Var terms[] = {region_term, action_term};
    return num::sum_scalars(tape, terms);
}

// ---------------------------------------------------------------------------
// GVF

const std::vector<double>& GvfTable::at(const std::string& video_id) const {
    auto it = features.find(video_id);
    if (it == features.end()) throw std::out_of_range("no GVF for video '" + video_id + "'");
    return it->second;
}

std::vector<double> pool_features(const std::vector<std::vector<double>>& rows, GvfPool pool) {
    if (rows.empty()) throw num::ArgumentError("pool_features: empty row list");
    std::vector<double> out = rows.front();
    if (pool == GvfPool::max) {
        for (std::size_t r = 1; r < rows.size(); ++r)
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], rows[r][i]);
        return out;
    }
    // Each coordinate is summed in sorted order so the result does not depend on row order.
    std::vector<double> column(rows.size());
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t r = 0; r < rows.size(); ++r) column[r] = rows[r][i];
        std::sort(column.begin(), column.end());
        double sum = 0.0;
        for (double v : column) sum += v;
        out[i] = sum * inv;
    }
    return out;
}

std::vector<double> video_gvf(const corpus::Corpus& corpus, std::size_t video_index,
                              const encoder::EncoderParams& params, const encoder::EncoderConfig& enc,
                              const sampler::ClipGeometry& geometry, const GvfOptions& options) {
    std::vector<sampler::ClipSpec> specs;
    const auto& video = corpus.videos().at(video_index);
    if (options.clip_set == GvfClipSet::segment) {
        for (auto& c : sampler::video_test_clips(corpus, video_index, geometry, options.clips_per_segment))
            specs.push_back(c.spec);
    } else {
        const auto hop = std::max<std::size_t>(options.dense_hop_frames, 1);
        for (std::size_t f = 0; f < video.num_frames(); f += hop) {
            sampler::ClipSpec s;
            s.video_index = video_index;
            s.center_frame = f;
            s.clip_len = geometry.clip_len;
            s.frame_stride = geometry.frame_stride;
            specs.push_back(s);
        }
    }
    if (specs.empty()) throw std::runtime_error("video '" + video.id + "' has no sampleable clips for the GVF");
    std::vector<std::vector<double>> rows;
    rows.reserve(specs.size());
    for (const auto& s : specs) {
        rows.push_back(encoder::encode(params, enc, sampler::load_clip(corpus, s, geometry, sampler::Mode::test, nullptr)));
    }
    return pool_features(rows, options.pool);
}

GvfTable precompute_gvf(const corpus::Corpus& corpus, const encoder::EncoderParams& params,
                        const encoder::EncoderConfig& enc, const sampler::ClipGeometry& geometry,
                        const GvfOptions& options, const std::string& source) {
    GvfTable table;
    table.pool = options.pool;
    table.source = source;
    for (std::size_t i = 0; i < corpus.videos().size(); ++i) {
        table.features.emplace(corpus.videos()[i].id, video_gvf(corpus, i, params, enc, geometry, options));
    }
    return table;
}

// ---------------------------------------------------------------------------
// Schedule

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (head_lrs.empty()) fail("head learning-rate grid is empty");
    for (double lr : head_lrs)
        if (!(lr > 0.0)) fail("head learning rates must be positive");
    if (encoder_lr < 0.0) fail("encoder_lr must be nonnegative");
    if (epochs > 0 && warmup_epochs >= epochs) fail("warmup_epochs must be smaller than epochs");
    for (auto d : decay_epochs)
        if (epochs > 0 && d >= epochs) fail("decay epoch " + std::to_string(d) + " is outside the run");
    if (!(decay_gamma > 0.0) || decay_gamma > 1.0) fail("decay_gamma must be in (0, 1]");
    if (batch_size == 0) fail("batch_size must be positive");
    if (momentum < 0.0 || momentum >= 1.0) fail("momentum must be in [0, 1)");
    if (clips_per_segment == 0) fail("clips_per_segment must be positive");
    weights.validate();
}

double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg) {
    const auto spe = std::max<std::size_t>(steps_per_epoch, 1);
    double m = 1.0;
    const auto warmup = cfg.warmup_epochs * spe;
    if (step < warmup) m = static_cast<double>(step + 1) / static_cast<double>(warmup);
    const auto epoch = step / spe;
    for (auto d : cfg.decay_epochs)
        if (epoch >= d) m *= cfg.decay_gamma;
    return m;
}

double ValidationResult::score() const {
    if (!region_acc) return action_acc;
    return 0.5 * (action_acc + *region_acc);
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct PlainHeads {
    std::vector<double> action;
    std::vector<double> region;
};

std::vector<double> affine(std::span<const double> x, const Tensor& w, const Tensor& b) {
    std::vector<double> out(b.values());
    const auto m = w.dim(1);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < m; ++j) out[j] += x[i] * w.at(i, j);
    return out;
}

PlainHeads head_outputs(const HeadParams& heads, const std::vector<double>& f, const std::vector<double>* gvf,
                        Mode mode) {
    PlainHeads out;
    out.action = affine(f, heads.action_weight, heads.action_bias);
    if (mode == Mode::tac) return out;
    if (mode == Mode::tsp) {
        std::vector<double> x = f;
        x.insert(x.end(), gvf->begin(), gvf->end());
        out.region = affine(x, heads.region_weight, heads.region_bias);
    } else {
        out.region = affine(f, heads.region_weight, heads.region_bias);
    }
    return out;
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

ValidationResult evaluate(const corpus::Corpus& corpus, const encoder::EncoderConfig& enc,
                          const encoder::EncoderParams& params, const HeadParams& heads, const GvfTable& gvf, Mode mode,
                          const std::vector<sampler::LabeledClip>& clips, const std::vector<Tensor>& tensors) {
    if (clips.empty()) throw std::runtime_error("validation split has no clips");
    std::size_t action_hits = 0, region_hits = 0, fg = 0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& c = clips[i];
        const auto f = encoder::encode(params, enc, tensors[i]);
        const std::vector<double>* g = nullptr;
        if (mode == Mode::tsp) g = &gvf.at(corpus.videos()[c.spec.video_index].id);
        const auto out = head_outputs(heads, f, g, mode);
        if (c.labels.region == 1) {
            ++fg;
            if (argmax(out.action) == *c.labels.action) ++action_hits;
        }
        if (mode != Mode::tac && static_cast<int>(argmax(out.region)) == c.labels.region) ++region_hits;
    }
    ValidationResult r;
    r.clips = clips.size();
    r.foreground_clips = fg;
    r.action_acc = fg ? static_cast<double>(action_hits) / static_cast<double>(fg) : 0.0;
    if (mode != Mode::tac) r.region_acc = static_cast<double>(region_hits) / static_cast<double>(clips.size());
    return r;
}

std::vector<Tensor> load_all(const corpus::Corpus& corpus, const sampler::ClipGeometry& geometry,
                             const std::vector<sampler::LabeledClip>& clips) {
    std::vector<Tensor> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back(sampler::load_clip(corpus, c.spec, geometry, sampler::Mode::test, nullptr));
    return out;
}

void check_geometry(const corpus::Corpus& corpus, const encoder::EncoderConfig& enc,
                    const sampler::ClipGeometry& geometry) {
    const auto& fs = corpus.frame_source();
    if (!fs) throw std::runtime_error("corpus has no frame source; training needs a synthetic corpus");
    const auto [h, w] = sampler::transformed_size(fs->height, fs->width, geometry);
    if (fs->channels != enc.in_channels || h != enc.height || w != enc.width) {
        throw num::ShapeError("encoder geometry " + std::to_string(enc.in_channels) + "x" + std::to_string(enc.height) +
                              "x" + std::to_string(enc.width) + " does not match corpus clips " +
                              std::to_string(fs->channels) + "x" + std::to_string(h) + "x" + std::to_string(w));
    }
}

std::uint64_t hash_values(std::uint64_t h, std::span<const double> values) {
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        h = hash_combine(h, bits);
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct Momentum {
    std::vector<std::vector<double>> buffers;

    void step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads, double lr, double mu) {
        if (buffers.empty()) {
            for (auto* p : params) buffers.emplace_back(p->size(), 0.0);
        }
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& buf = buffers[k];
            auto data = params[k]->data();
            const auto& g = *grads[k];
            for (std::size_t i = 0; i < buf.size(); ++i) {
                buf[i] = mu * buf[i] + g[i];
                data[i] -= lr * buf[i];
            }
        }
    }
};

constexpr std::uint64_t kHeadStream = 0x68656164ULL;
constexpr std::uint64_t kCropStream = 0x63726f70ULL;

}  // namespace

std::string Checkpoint::id() const {
    std::uint64_t h = 0x7473706bULL;
    for (const auto* t : encoder.tensors()) h = hash_values(h, t->data());
    for (const auto* t : heads.tensors()) h = hash_values(h, t->data());
    return hex64(h);
}

ValidationResult validate(const corpus::Corpus& corpus, const encoder::EncoderConfig& enc,
                          const sampler::ClipGeometry& geometry, const encoder::EncoderParams& params,
                          const HeadParams& heads, const GvfTable& gvf, Mode mode,
                          const std::vector<sampler::LabeledClip>& clips) {
    return evaluate(corpus, enc, params, heads, gvf, mode, clips, load_all(corpus, geometry, clips));
}

ValidationResult validate(const Checkpoint& ckpt, const corpus::Corpus& corpus, corpus::Subset split) {
    check_geometry(corpus, ckpt.encoder_config, ckpt.geometry);
    const auto clips = sampler::subset_test_clips(corpus, split, ckpt.geometry, ckpt.train_config.clips_per_segment);
    if (clips.empty()) throw std::runtime_error("split '" + corpus::to_string(split) + "' is empty");
    GvfTable gvf = ckpt.gvf;
    if (ckpt.mode() == Mode::tsp) {
        // Videos outside the training corpus get their GVF from the stored initialization encoder.
        for (auto vi : corpus.subset_indices(split)) {
            const auto& id = corpus.videos()[vi].id;
            if (!gvf.features.count(id)) {
                gvf.features.emplace(id, video_gvf(corpus, vi, ckpt.gvf_encoder, ckpt.encoder_config, ckpt.geometry,
                                                   ckpt.train_config.gvf));
            }
        }
    }
    return validate(corpus, ckpt.encoder_config, ckpt.geometry, ckpt.encoder, ckpt.heads, gvf, ckpt.mode(), clips);
}

TrainResult train(const corpus::Corpus& corpus, const encoder::EncoderConfig& enc,
                  const sampler::ClipGeometry& geometry, const encoder::EncoderParams& init, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    enc.validate();
    check_geometry(corpus, enc, geometry);
    if (corpus.subset_indices(corpus::Subset::train).empty()) throw std::runtime_error("corpus has no train videos");
    if (corpus.subset_indices(corpus::Subset::valid).empty()) throw std::runtime_error("corpus has no valid videos");

    const Mode mode = cfg.mode;
    const auto F = enc.feature_dim();
    const auto C = corpus.num_classes();

    TrainResult result;
    Checkpoint& best = result.checkpoint;
    best.encoder_config = enc;
    best.geometry = geometry;
    best.train_config = cfg;
    best.classes = corpus.classes();
    best.gvf_encoder = init;

    std::uint64_t init_hash = 0x696e6974ULL;
    for (const auto* t : init.tensors()) init_hash = hash_values(init_hash, t->data());
    best.gvf = precompute_gvf(corpus, init, enc, geometry, cfg.gvf, "init:" + hex64(init_hash));
    const GvfTable& gvf = best.gvf;

    const HeadParams head_init = init_heads(F, C, mode, hash_combine(cfg.seed, kHeadStream));
    const auto val_clips = sampler::subset_test_clips(corpus, corpus::Subset::valid, geometry, cfg.clips_per_segment);
    const auto val_tensors = load_all(corpus, geometry, val_clips);

    std::vector<double> lrs = cfg.head_lrs;
    std::sort(lrs.begin(), lrs.end());

    if (cfg.epochs == 0) {
        const auto v = evaluate(corpus, enc, init, head_init, gvf, mode, val_clips, val_tensors);
        best.encoder = init;
        best.heads = head_init;
        best.selection = {lrs.front(), 0, v.score(), v.action_acc, v.region_acc, {}};
        return result;
    }

    // Each epoch's clip list depends only on (seed, epoch), so it is shared by every grid cell.
    const sampler::EpochOptions opts{cfg.clips_per_segment, cfg.resample_each_epoch};
    std::vector<sampler::Epoch> epochs;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        epochs.push_back(mode == Mode::tac
                             ? sampler::build_foreground_epoch(corpus, corpus::Subset::train, geometry, e, cfg.seed, opts)
                             : sampler::build_epoch(corpus, corpus::Subset::train, geometry, e, cfg.seed, opts));
    }
    const std::size_t steps_per_epoch = (epochs.front().clips.size() + cfg.batch_size - 1) / cfg.batch_size;

    bool have_best = false;
    for (double head_lr : lrs) {
        encoder::EncoderParams params = init;
        HeadParams heads = head_init;
        Momentum enc_mom, head_mom;
        std::size_t step = 0;
        bool diverged = false;

        for (std::size_t e = 0; e < cfg.epochs && !diverged; ++e) {
            const auto& epoch = epochs[e];
            Rng crop_rng(hash_combine(hash_combine(cfg.seed, kCropStream), e));
            double loss_sum = 0.0;
            std::size_t loss_batches = 0;
            double mult = 0.0;
            for (std::size_t start = 0; start < epoch.clips.size(); start += cfg.batch_size) {
                const auto stop = std::min(start + cfg.batch_size, epoch.clips.size());
                mult = lr_at(step, steps_per_epoch, cfg);

                Tape tape;
                const auto ev = encoder::bind(tape, params, true);
                const auto hv = bind_heads(tape, heads, true);
                std::vector<Var> losses;
                for (std::size_t i = start; i < stop; ++i) {
                    const auto& clip = epoch.clips[i];
                    const auto x = sampler::load_clip(corpus, clip.spec, geometry, sampler::Mode::train, &crop_rng);
                    const Var f = encoder::forward(tape, ev, enc, x);
                    std::optional<Var> g;
                    if (mode == Mode::tsp) {
                        g = tape.constant(Tensor::vector(gvf.at(corpus.videos()[clip.spec.video_index].id)));
                    }
                    losses.push_back(clip_loss(tape, f, g, clip.labels, hv, cfg.weights, mode));
                }
                const Var loss =
                    num::scale(tape, num::sum_scalars(tape, losses), 1.0 / static_cast<double>(losses.size()));
                const double value = tape.value(loss).item();
                if (!std::isfinite(value)) {
                    diverged = true;
                    break;
                }
                loss_sum += value;
                ++loss_batches;
                const auto grads = tape.backward(loss);

                std::vector<const Tensor*> enc_grads;
                for (auto v : ev.all()) enc_grads.push_back(&grads[v]);
                enc_mom.step(params.tensors(), enc_grads, cfg.encoder_lr * mult, cfg.momentum);
                const std::vector<const Tensor*> head_grads{&grads[hv.action_weight], &grads[hv.action_bias],
                                                            &grads[hv.region_weight], &grads[hv.region_bias]};
                head_mom.step(heads.tensors(), head_grads, head_lr * mult, cfg.momentum);
                ++step;
            }

            EpochLog entry;
            entry.epoch = e + 1;
            entry.head_lr = head_lr;
            entry.lr_multiplier = mult;
            entry.foreground_clips = epoch.foreground;
            entry.background_clips = epoch.background;
            if (diverged) {
                entry.diverged = true;
                entry.mean_train_loss = std::numeric_limits<double>::quiet_NaN();
                best.selection.diverged_lrs.push_back(head_lr);
            } else {
                entry.mean_train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(loss_batches, 1));
                const auto v = evaluate(corpus, enc, params, heads, gvf, mode, val_clips, val_tensors);
                entry.action_acc = v.action_acc;
                entry.region_acc = v.region_acc;
                if (!have_best || v.score() > best.selection.score) {
                    have_best = true;
                    best.encoder = params;
                    best.heads = heads;
                    best.selection.head_lr = head_lr;
                    best.selection.epoch = e + 1;
                    best.selection.score = v.score();
                    best.selection.action_acc = v.action_acc;
                    best.selection.region_acc = v.region_acc;
                }
            }
            result.log.push_back(entry);
            if (on_epoch) on_epoch(entry);
        }
    }
    if (!have_best) throw std::runtime_error("training diverged for every head learning rate");
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from(const json& j, const std::string& what) {
    try {
        return Tensor(j.at("shape").get<num::Shape>(), j.at("data").get<std::vector<double>>());
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint: bad tensor '" + what + "': " + e.what());
    } catch (const num::ShapeError& e) {
        throw CheckpointError("checkpoint: bad tensor '" + what + "': " + e.what());
    }
}

json encoder_json(const encoder::EncoderParams& p) {
    json arr = json::array();
    for (const auto* t : p.tensors()) arr.push_back(tensor_json(*t));
    return arr;
}

encoder::EncoderParams encoder_from(const json& j, const encoder::EncoderConfig& cfg, const std::string& what) {
    encoder::EncoderParams p;
    p.blocks.resize(cfg.num_blocks);
    auto tensors = p.tensors();
    if (!j.is_array() || j.size() != tensors.size()) throw CheckpointError("checkpoint: '" + what + "' has wrong tensor count");
    for (std::size_t i = 0; i < tensors.size(); ++i) *tensors[i] = tensor_from(j[i], what);
    const auto ref = encoder::init_params(cfg, 0);
    const auto ref_tensors = ref.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (tensors[i]->shape() != ref_tensors[i]->shape()) {
            throw CheckpointError("checkpoint: '" + what + "' tensor " + std::to_string(i) + " has shape " +
                                  num::shape_string(tensors[i]->shape()) + ", expected " +
                                  num::shape_string(ref_tensors[i]->shape()));
        }
    }
    return p;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

}  // namespace

std::string checkpoint_text(const Checkpoint& ckpt, const std::string& command) {
    const auto& tc = ckpt.train_config;
    const auto& ec = ckpt.encoder_config;
    json doc;
    doc["schema_version"] = ckpt.schema_version;
    doc["checkpoint_id"] = ckpt.id();
    if (!command.empty()) doc["command"] = command;
    doc["config"] = {
        {"mode", to_string(tc.mode)},
        {"gvf_pool", to_string(tc.gvf.pool)},
        {"gvf_clip_set", to_string(tc.gvf.clip_set)},
        {"gvf_dense_hop_frames", tc.gvf.dense_hop_frames},
        {"encoder_lr", tc.encoder_lr},
        {"head_lrs", tc.head_lrs},
        {"epochs", tc.epochs},
        {"warmup_epochs", tc.warmup_epochs},
        {"decay_epochs", tc.decay_epochs},
        {"decay_gamma", tc.decay_gamma},
        {"batch_size", tc.batch_size},
        {"momentum", tc.momentum},
        {"alpha_c", tc.weights.action},
        {"alpha_r", tc.weights.region},
        {"clips_per_segment", tc.clips_per_segment},
        {"resample_each_epoch", tc.resample_each_epoch},
        {"seed", tc.seed},
    };
    doc["encoder_config"] = {{"in_channels", ec.in_channels}, {"height", ec.height},
                             {"width", ec.width},             {"embed_dim", ec.embed_dim},
                             {"num_blocks", ec.num_blocks},
                             {"temporal_pool", ec.pool == encoder::TemporalPool::mean ? "mean" : "max"}};
    doc["geometry"] = {{"clip_len", ckpt.geometry.clip_len},
                       {"frame_stride", ckpt.geometry.frame_stride},
                       {"crop_size", ckpt.geometry.crop_size},
                       {"resize_short_side", ckpt.geometry.resize_short_side}};
    doc["classes"] = ckpt.classes;
    doc["encoder"] = encoder_json(ckpt.encoder);
    doc["heads"] = {{"action_weight", tensor_json(ckpt.heads.action_weight)},
                    {"action_bias", tensor_json(ckpt.heads.action_bias)},
                    {"region_weight", tensor_json(ckpt.heads.region_weight)},
                    {"region_bias", tensor_json(ckpt.heads.region_bias)}};
    doc["gvf_encoder"] = encoder_json(ckpt.gvf_encoder);
    json table = json::object();
    for (const auto& [id, f] : ckpt.gvf.features) table[id] = f;
    doc["gvf"] = {{"pool", to_string(ckpt.gvf.pool)}, {"source", ckpt.gvf.source}, {"videos", std::move(table)}};
    const auto& s = ckpt.selection;
    doc["selection"] = {{"head_lr", s.head_lr},
                        {"epoch", s.epoch},
                        {"score", s.score},
                        {"action_acc", s.action_acc},
                        {"region_acc", optional_json(s.region_acc)},
                        {"diverged_lrs", s.diverged_lrs}};
    return doc.dump() + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
    }
    try {
        Checkpoint ck;
        ck.schema_version = doc.at("schema_version").get<int>();
        if (ck.schema_version != kCheckpointSchemaVersion) {
            throw CheckpointError("checkpoint schema_version " + std::to_string(ck.schema_version) +
                                  " is not supported (expected " + std::to_string(kCheckpointSchemaVersion) + ")");
        }
        const auto& c = doc.at("config");
        auto& tc = ck.train_config;
        tc.mode = parse_mode(c.at("mode").get<std::string>());
        tc.gvf.pool = parse_gvf_pool(c.at("gvf_pool").get<std::string>());
        tc.gvf.clip_set = parse_gvf_clip_set(c.at("gvf_clip_set").get<std::string>());
        tc.gvf.dense_hop_frames = c.at("gvf_dense_hop_frames").get<std::size_t>();
        tc.encoder_lr = c.at("encoder_lr").get<double>();
        tc.head_lrs = c.at("head_lrs").get<std::vector<double>>();
        tc.epochs = c.at("epochs").get<std::size_t>();
        tc.warmup_epochs = c.at("warmup_epochs").get<std::size_t>();
        tc.decay_epochs = c.at("decay_epochs").get<std::vector<std::size_t>>();
        tc.decay_gamma = c.at("decay_gamma").get<double>();
        tc.batch_size = c.at("batch_size").get<std::size_t>();
        tc.momentum = c.at("momentum").get<double>();
        tc.weights.action = c.at("alpha_c").get<double>();
        tc.weights.region = c.at("alpha_r").get<double>();
        tc.clips_per_segment = c.at("clips_per_segment").get<std::size_t>();
        tc.resample_each_epoch = c.at("resample_each_epoch").get<bool>();
        tc.seed = c.at("seed").get<std::uint64_t>();
        tc.gvf.clips_per_segment = tc.clips_per_segment;

        const auto& e = doc.at("encoder_config");
        auto& ec = ck.encoder_config;
        ec.in_channels = e.at("in_channels").get<std::size_t>();
        ec.height = e.at("height").get<std::size_t>();
        ec.width = e.at("width").get<std::size_t>();
        ec.embed_dim = e.at("embed_dim").get<std::size_t>();
        ec.num_blocks = e.at("num_blocks").get<std::size_t>();
        ec.pool = e.at("temporal_pool").get<std::string>() == "max" ? encoder::TemporalPool::max
                                                                    : encoder::TemporalPool::mean;
        const auto& g = doc.at("geometry");
        ck.geometry.clip_len = g.at("clip_len").get<std::size_t>();
        ck.geometry.frame_stride = g.at("frame_stride").get<std::size_t>();
        ck.geometry.crop_size = g.at("crop_size").get<std::size_t>();
        ck.geometry.resize_short_side = g.at("resize_short_side").get<std::size_t>();
        ck.classes = doc.at("classes").get<std::vector<std::string>>();

        ck.encoder = encoder_from(doc.at("encoder"), ec, "encoder");
        ck.gvf_encoder = encoder_from(doc.at("gvf_encoder"), ec, "gvf_encoder");
        const auto& h = doc.at("heads");
        ck.heads.action_weight = tensor_from(h.at("action_weight"), "action_weight");
        ck.heads.action_bias = tensor_from(h.at("action_bias"), "action_bias");
        ck.heads.region_weight = tensor_from(h.at("region_weight"), "region_weight");
        ck.heads.region_bias = tensor_from(h.at("region_bias"), "region_bias");
        const auto F = ec.feature_dim(), C = ck.classes.size();
        if (ck.heads.action_weight.shape() != num::Shape{F, C} || ck.heads.action_bias.shape() != num::Shape{C} ||
            ck.heads.region_weight.shape() != num::Shape{region_input_dim(F, tc.mode), 2} ||
            ck.heads.region_bias.shape() != num::Shape{2}) {
            throw CheckpointError("checkpoint: head shapes do not match feature_dim/classes/mode");
        }

        const auto& gv = doc.at("gvf");
        ck.gvf.pool = parse_gvf_pool(gv.at("pool").get<std::string>());
        ck.gvf.source = gv.at("source").get<std::string>();
        for (auto it = gv.at("videos").begin(); it != gv.at("videos").end(); ++it) {
            auto f = it.value().get<std::vector<double>>();
            if (f.size() != F) throw CheckpointError("checkpoint: GVF of '" + it.key() + "' has wrong dimension");
            ck.gvf.features.emplace(it.key(), std::move(f));
        }
        const auto& s = doc.at("selection");
        ck.selection.head_lr = s.at("head_lr").get<double>();
        ck.selection.epoch = s.at("epoch").get<std::size_t>();
        ck.selection.score = s.at("score").get<double>();
        ck.selection.action_acc = s.at("action_acc").get<double>();
        ck.selection.region_acc = optional_from(s.at("region_acc"));
        ck.selection.diverged_lrs = s.at("diverged_lrs").get<std::vector<double>>();

        if (doc.contains("checkpoint_id") && doc.at("checkpoint_id").get<std::string>() != ck.id()) {
            throw CheckpointError("checkpoint: weights do not match checkpoint_id (corrupt file)");
        }
        return ck;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, const std::string& command) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << checkpoint_text(ckpt, command);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

std::string training_log_tsv(const std::vector<EpochLog>& log, const std::string& command) {
    std::string out;
    if (!command.empty()) out += "# command: " + command + "\n";
    out += "epoch\thead_lr\tmean_train_loss\taction_acc\tregion_acc\tlr_multiplier\n";
    for (const auto& e : log) {
        out += std::to_string(e.epoch) + '\t' + textio::format_double(e.head_lr) + '\t' +
               (e.diverged ? std::string("nan") : textio::format_double(e.mean_train_loss)) + '\t' +
               textio::format_double(e.action_acc) + '\t' +
               (e.region_acc ? textio::format_double(*e.region_acc) : std::string("NA")) + '\t' +
               textio::format_double(e.lr_multiplier) + '\n';
    }
    return out;
}

}  // namespace tspkit::pretrain
