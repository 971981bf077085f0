#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <type_traits>

#include "tspkit/analysis.hpp"
#include "tspkit/corpus.hpp"
#include "tspkit/evalkit.hpp"
#include "tspkit/experiment.hpp"
#include "tspkit/extract.hpp"
#include "tspkit/pretrain.hpp"
#include "tspkit/textio.hpp"

namespace fs = std::filesystem;

namespace tspkit::cli {

namespace {

// ---------------------------------------------------------------------------
// Flag helpers

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    if (text.empty() || text == "none") return out;
    for (auto part : textio::split(text, ',')) {
        if (part.empty()) throw UsageError("empty element in list '" + text + "'");
        out.emplace_back(part);
    }
    return out;
}

std::vector<double> double_list(const std::string& flag, const std::string& text) {
    std::vector<double> out;
    for (const auto& s : split_list(text)) {
        auto v = textio::parse_double(s);
        if (!v || !std::isfinite(*v)) throw UsageError(flag + ": '" + s + "' is not a number");
        out.push_back(*v);
    }
    return out;
}

template <class T>
std::vector<T> uint_list(const std::string& flag, const std::string& text) {
    std::vector<T> out;
    for (const auto& s : split_list(text)) {
        T v{};
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
            throw UsageError(flag + ": '" + s + "' is not a non-negative integer");
        }
        out.push_back(v);
    }
    return out;
}

std::string join_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
    return out;
}

std::string double_text(const std::vector<double>& v) {
    std::vector<std::string> s;
    for (double x : v) s.push_back(textio::format_double(x));
    return join_list(s);
}

template <class T>
std::string uint_text(const std::vector<T>& v) {
    std::vector<std::string> s;
    for (auto x : v) s.push_back(std::to_string(x));
    return join_list(s);
}

/// Runs a library validator, reporting its complaint as a usage error.
template <class F>
void validated(F&& f) {
    try {
        f();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

void require_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw InputError("missing input file: " + p.string());
}

void require_dir(const fs::path& p) {
    if (!fs::is_directory(p)) throw InputError("missing input directory: " + p.string());
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_or_print(const std::string& out, const std::string& text) {
    if (out.empty()) {
        std::cout << text;
    } else {
        ensure_parent(out);
        evalkit::write_text(out, text);
    }
}

/// Effective flag set of a parsed subcommand: given values, else defaults.
std::string command_line(const CLI::App& sub) {
    std::string out = "tspkit " + sub.get_name();
    for (const CLI::Option* opt : sub.get_options()) {
        const auto name = opt->get_name();
        if (name == "--help" || name == "--config") continue;
        std::string value;
        if (opt->count() > 0) {
            value = opt->get_type_size() == 0 ? (opt->as<bool>() ? "true" : "false") : opt->results().back();
        } else {
            value = opt->get_default_str();
        }
        out += " " + name + "=" + value;
    }
    return out;
}

/// Adds an option whose default is shown (and recorded) in round-trip form.
template <class T>
CLI::Option* flag(CLI::App* sub, const std::string& name, T& value, const std::string& help) {
    auto* opt = sub->add_option(name, value, help);
    if constexpr (std::is_floating_point_v<T>) opt->default_str(textio::format_double(value));
    return opt;
}

corpus::Corpus load_corpus(const std::string& path) {
    require_file(path);
    return corpus::load_manifest(path);
}

std::vector<std::size_t> split_indices(const corpus::Corpus& corpus, const std::string& split) {
    if (split == "all") {
        std::vector<std::size_t> all(corpus.videos().size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    return corpus.subset_indices(corpus::parse_subset(split));
}

/// Encoder input geometry follows the corpus frames after the spatial transform.
void fit_encoder_to(encoder::EncoderConfig& enc, const corpus::Corpus& corpus, const sampler::ClipGeometry& geometry) {
    if (!corpus.has_frames()) throw InputError("manifest has no frame source; pretraining needs frames");
    const auto& fsrc = *corpus.frame_source();
    const auto [h, w] = sampler::transformed_size(fsrc.height, fsrc.width, geometry);
    enc.in_channels = fsrc.channels;
    enc.height = h;
    enc.width = w;
}

std::vector<extract::FeatureTrack> load_tracks(const corpus::Corpus& corpus, const std::vector<std::size_t>& videos,
                                               const fs::path& dir) {
    require_dir(dir);
    std::vector<extract::FeatureTrack> out;
    for (auto vi : videos) {
        const auto path = dir / extract::track_filename(corpus.videos()[vi].id);
        require_file(path);
        out.push_back(extract::read_track(path));
    }
    return out;
}

void add_synth_flags(CLI::App* sub, corpus::SynthConfig& s, std::string& background) {
    flag(sub, "--classes", s.num_classes, "number of action classes");
    flag(sub, "--train-videos", s.train_videos, "videos in the train split");
    flag(sub, "--valid-videos", s.valid_videos, "videos in the valid split");
    flag(sub, "--test-videos", s.test_videos, "videos in the test split");
    flag(sub, "--min-duration", s.min_duration_sec, "shortest video (s)");
    flag(sub, "--max-duration", s.max_duration_sec, "longest video (s)");
    flag(sub, "--min-instances", s.min_instances, "fewest action instances per video");
    flag(sub, "--max-instances", s.max_instances, "most action instances per video");
    flag(sub, "--length-mu", s.length_log_mu, "mean of ln(instance length in s)");
    flag(sub, "--length-sigma", s.length_log_sigma, "std of ln(instance length in s)");
    flag(sub, "--min-instance", s.min_instance_sec, "shortest instance (s)");
    flag(sub, "--min-gap", s.min_gap_sec, "background kept around every instance (s)");
    flag(sub, "--channels", s.channels, "frame channels");
    flag(sub, "--height", s.height, "frame height");
    flag(sub, "--width", s.width, "frame width");
    flag(sub, "--noise", s.noise_sigma, "per-value frame noise std");
    flag(sub, "--background", background, "background frames: hard (mix of two classes) or pure");
    flag(sub, "--fps", s.fps, "frames per second");
}

void add_localizer_flags(CLI::App* sub, evalkit::LocalizerParams& p, std::string& thresholds) {
    flag(sub, "--window", p.window, "moving-average window over rows");
    flag(sub, "--thresholds", thresholds, "fg score thresholds, comma separated");
    flag(sub, "--nms-tiou", p.nms_tiou, "NMS suppression tIoU");
    flag(sub, "--max-predictions", p.max_predictions, "predictions kept per video");
}

struct Command {
    CLI::App* app = nullptr;
    std::function<void(const std::string&)> run;
};

// ---------------------------------------------------------------------------
// gen-corpus

Command gen_corpus(CLI::App& root) {
    struct Opts {
        corpus::SynthConfig synth;
        std::string background = "hard";
        std::uint64_t seed = 0;
        std::string out;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = root.add_subcommand("gen-corpus", "generate a synthetic annotated corpus manifest");
    flag(sub, "--out", o->out, "manifest path")->required();
    flag(sub, "--seed", o->seed, "corpus seed");
    add_synth_flags(sub, o->synth, o->background);
    return {sub, [o](const std::string& cmd) {
                validated([&] {
                    o->synth.background = corpus::parse_background_mode(o->background);
                    o->synth.validate();
                });
                const auto c = corpus::generate_synthetic(o->synth, o->seed);
                ensure_parent(o->out);
                corpus::save_manifest(c, o->out, cmd);
                std::cout << "wrote " << o->out << " (" << c.videos().size() << " videos, " << c.num_classes()
                          << " classes)\n";
            }};
}

// ---------------------------------------------------------------------------
// pretrain

Command pretrain_cmd(CLI::App& root) {
    struct Opts {
        std::string manifest, out, log, init_checkpoint;
        std::string mode = "tsp", pool = "mean", gvf_pool = "max", gvf_clips = "segment";
        std::string head_lrs, decay_epochs;
        std::uint64_t init_seed = 0;
        encoder::EncoderConfig enc;
        sampler::ClipGeometry geometry;
        pretrain::TrainConfig train;
    };
    auto o = std::make_shared<Opts>();
    o->head_lrs = double_text(o->train.head_lrs);
    o->decay_epochs = uint_text(o->train.decay_epochs);
    auto* sub = root.add_subcommand("pretrain", "pretrain a clip encoder (tsp, tsp_nogvf or tac)");
    flag(sub, "--manifest", o->manifest, "corpus manifest")->required();
    flag(sub, "--out", o->out, "checkpoint path")->required();
    flag(sub, "--log", o->log, "training log TSV (default: <out>.log.tsv)");
    flag(sub, "--mode", o->mode, "tsp, tsp_nogvf or tac");
    flag(sub, "--init-checkpoint", o->init_checkpoint, "start from this checkpoint's encoder");
    flag(sub, "--init-seed", o->init_seed, "seed of the random encoder init");
    flag(sub, "--embed-dim", o->enc.embed_dim, "feature width d");
    flag(sub, "--blocks", o->enc.num_blocks, "residual temporal blocks");
    flag(sub, "--pool", o->pool, "temporal pooling: mean or max");
    flag(sub, "--clip-len", o->geometry.clip_len, "frames per clip");
    flag(sub, "--frame-stride", o->geometry.frame_stride, "stride between clip frames");
    flag(sub, "--crop", o->geometry.crop_size, "crop side");
    flag(sub, "--resize", o->geometry.resize_short_side, "short side after resize");
    flag(sub, "--gvf-pool", o->gvf_pool, "GVF pooling: max or avg");
    flag(sub, "--gvf-clips", o->gvf_clips, "GVF clip set: segment or dense");
    flag(sub, "--encoder-lr", o->train.encoder_lr, "encoder learning rate");
    flag(sub, "--head-lrs", o->head_lrs, "head learning-rate grid, comma separated");
    flag(sub, "--epochs", o->train.epochs, "training epochs");
    flag(sub, "--warmup", o->train.warmup_epochs, "linear warmup epochs");
    flag(sub, "--decay-epochs", o->decay_epochs,
                    "epochs where the lr drops by gamma ('none' for no decay)");
    flag(sub, "--gamma", o->train.decay_gamma, "lr decay factor");
    flag(sub, "--batch-size", o->train.batch_size, "clips per step");
    flag(sub, "--momentum", o->train.momentum, "SGD momentum");
    flag(sub, "--alpha-c", o->train.weights.action, "action loss weight");
    flag(sub, "--alpha-r", o->train.weights.region, "region loss weight");
    flag(sub, "--clips-per-segment", o->train.clips_per_segment, "clips sampled per region segment");
    flag(sub, "--seed", o->train.seed, "training seed");
    return {sub, [o](const std::string& cmd) {
                auto tc = o->train;
                auto enc = o->enc;
                validated([&] {
                    tc.mode = pretrain::parse_mode(o->mode);
                    tc.gvf.pool = pretrain::parse_gvf_pool(o->gvf_pool);
                    tc.gvf.clip_set = pretrain::parse_gvf_clip_set(o->gvf_clips);
                    tc.head_lrs = double_list("--head-lrs", o->head_lrs);
                    tc.decay_epochs = uint_list<std::size_t>("--decay-epochs", o->decay_epochs);
                    if (o->pool == "mean") {
                        enc.pool = encoder::TemporalPool::mean;
                    } else if (o->pool == "max") {
                        enc.pool = encoder::TemporalPool::max;
                    } else {
                        throw UsageError("--pool: expected mean or max, got '" + o->pool + "'");
                    }
                    tc.validate();
                    enc.validate();
                });
                const auto corpus = load_corpus(o->manifest);
                fit_encoder_to(enc, corpus, o->geometry);
                encoder::EncoderParams init;
                if (!o->init_checkpoint.empty()) {
                    require_file(o->init_checkpoint);
                    const auto ck = pretrain::load_checkpoint(o->init_checkpoint);
                    if (!(ck.encoder_config == enc)) {
                        throw UsageError("--init-checkpoint encoder config differs from the requested encoder");
                    }
                    init = ck.encoder;
                } else {
                    init = encoder::init_params(enc, o->init_seed);
                }
                const auto result = pretrain::train(corpus, enc, o->geometry, init, tc, [](const pretrain::EpochLog& e) {
                    std::cerr << "lr " << textio::format_double(e.head_lr) << " epoch " << e.epoch << " loss "
                              << textio::format_fixed(e.mean_train_loss, 4) << "\n";
                });
                ensure_parent(o->out);
                pretrain::save_checkpoint(result.checkpoint, o->out, cmd);
                const auto log = o->log.empty() ? o->out + ".log.tsv" : o->log;
                ensure_parent(log);
                evalkit::write_text(log, pretrain::training_log_tsv(result.log, cmd));
                const auto& sel = result.checkpoint.selection;
                std::cout << "checkpoint " << result.checkpoint.id() << " head_lr "
                          << textio::format_double(sel.head_lr) << " epoch " << sel.epoch << " score "
                          << textio::format_fixed(sel.score, 4) << "\n";
            }};
}

// ---------------------------------------------------------------------------
// extract

Command extract_cmd(CLI::App& root) {
    struct Opts {
        std::string manifest, checkpoint, out_dir, split = "all";
        std::size_t hop = 0;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = root.add_subcommand("extract", "dense clip features for every video of a split");
    flag(sub, "--manifest", o->manifest, "corpus manifest")->required();
    flag(sub, "--checkpoint", o->checkpoint, "pretrained checkpoint")->required();
    flag(sub, "--out-dir", o->out_dir, "directory for <video_id>.csv tracks")->required();
    flag(sub, "--split", o->split, "train, valid, test or all");
    flag(sub, "--hop", o->hop, "hop in frames (0 = clip span)");
    return {sub, [o](const std::string& cmd) {
                if (o->split != "all") validated([&] { corpus::parse_subset(o->split); });
                const auto corpus = load_corpus(o->manifest);
                require_file(o->checkpoint);
                const auto ckpt = pretrain::load_checkpoint(o->checkpoint);
                std::optional<std::size_t> hop;
                if (o->hop > 0) hop = o->hop;
                fs::create_directories(o->out_dir);
                const auto videos = split_indices(corpus, o->split);
                for (auto vi : videos) {
                    const auto t = extract::extract_track(corpus, vi, ckpt, hop);
                    extract::write_track(t, fs::path(o->out_dir) / extract::track_filename(t.video_id), cmd);
                }
                std::cout << "wrote " << videos.size() << " tracks to " << o->out_dir << "\n";
            }};
}

// ---------------------------------------------------------------------------
// localize

Command localize_cmd(CLI::App& root) {
    struct Opts {
        std::string manifest, tracks, probe_tracks, detections, proposals, split = "valid", scores = "head";
        std::string thresholds;
        evalkit::LocalizerParams loc;
        evalkit::ProbeOptions probe;
    };
    auto o = std::make_shared<Opts>();
    o->thresholds = double_text(o->loc.thresholds);
    auto* sub = root.add_subcommand("localize", "threshold localizer over feature tracks");
    flag(sub, "--manifest", o->manifest, "corpus manifest")->required();
    flag(sub, "--tracks", o->tracks, "track directory of the split to localize")->required();
    flag(sub, "--split", o->split, "split to localize");
    flag(sub, "--scores", o->scores, "fg scores from the region head (head) or a linear probe (probe)");
    flag(sub, "--probe-tracks", o->probe_tracks, "train-split track directory for fitting the probe");
    flag(sub, "--probe-iterations", o->probe.iterations, "probe gradient steps");
    flag(sub, "--probe-lr", o->probe.learning_rate, "probe learning rate");
    flag(sub, "--probe-l2", o->probe.l2, "probe weight decay");
    add_localizer_flags(sub, o->loc, o->thresholds);
    flag(sub, "--detections", o->detections, "detections JSON output")->required();
    flag(sub, "--proposals", o->proposals, "proposals JSON output");
    return {sub, [o](const std::string& cmd) {
                auto loc = o->loc;
                experiment::ScoreSource source{};
                corpus::Subset split{};
                validated([&] {
                    source = experiment::parse_score_source(o->scores);
                    split = corpus::parse_subset(o->split);
                    loc.thresholds = double_list("--thresholds", o->thresholds);
                    loc.validate();
                });
                if (source == experiment::ScoreSource::probe && o->probe_tracks.empty()) {
                    throw UsageError("--scores probe needs --probe-tracks");
                }
                if (source == experiment::ScoreSource::head && !o->probe_tracks.empty()) {
                    throw UsageError("--probe-tracks given with --scores head");
                }
                const auto corpus = load_corpus(o->manifest);
                auto tracks = load_tracks(corpus, corpus.subset_indices(split), o->tracks);
                if (source == experiment::ScoreSource::head) {
                    for (const auto& t : tracks) {
                        if (!t.has_p_fg()) {
                            throw UsageError("track " + t.video_id +
                                             " has no region scores (tac checkpoint); use --scores probe");
                        }
                    }
                } else {
                    const auto train = load_tracks(corpus, corpus.subset_indices(corpus::Subset::train), o->probe_tracks);
                    const auto probe = evalkit::fit_probe(train, corpus, o->probe);
                    for (auto& t : tracks) t = evalkit::apply_probe(t, probe);
                }
                std::vector<evalkit::DetectionPrediction> dets;
                std::vector<evalkit::ProposalPrediction> props;
                for (const auto& t : tracks) {
                    auto r = evalkit::baseline_localize(t, loc);
                    dets.insert(dets.end(), r.detections.begin(), r.detections.end());
                    props.insert(props.end(), r.proposals.begin(), r.proposals.end());
                }
                ensure_parent(o->detections);
                evalkit::write_text(o->detections, evalkit::detections_text(dets, cmd));
                if (!o->proposals.empty()) {
                    ensure_parent(o->proposals);
                    evalkit::write_text(o->proposals, evalkit::proposals_text(props, cmd));
                }
                std::cout << "wrote " << dets.size() << " detections, " << props.size() << " proposals\n";
            }};
}

// ---------------------------------------------------------------------------
// eval-det / eval-prop

Command eval_det_cmd(CLI::App& root) {
    struct Opts {
        std::string manifest, predictions, out, split = "valid";
        bool detad = false;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = root.add_subcommand("eval-det", "detection mAP report");
    flag(sub, "--manifest", o->manifest, "corpus manifest")->required();
    flag(sub, "--predictions", o->predictions, "detections JSON")->required();
    flag(sub, "--split", o->split, "ground-truth split");
    sub->add_flag("--detad", o->detad, "add the per-length-bucket breakdown");
    flag(sub, "--out", o->out, "report path (default: stdout)");
    return {sub, [o](const std::string& cmd) {
                corpus::Subset split{};
                validated([&] { split = corpus::parse_subset(o->split); });
                const auto corpus = load_corpus(o->manifest);
                require_file(o->predictions);
                const auto preds = evalkit::parse_detections(evalkit::read_text(o->predictions));
                const auto gts = evalkit::ground_truth(corpus, split);
                std::string r = "# command: " + cmd + "\nmetric\tvalue\n";
                r += "average_map\t" + textio::format_fixed(evalkit::average_map(preds, gts), 6) + "\n";
                for (double thr : evalkit::tiou_thresholds()) {
                    r += "map@" + textio::format_fixed(thr, 2) + "\t" +
                         textio::format_fixed(evalkit::map_at(preds, gts, thr), 6) + "\n";
                }
                if (o->detad) {
                    r += "\nbucket\tgt_count\tshare\taverage_map\n";
                    for (const auto& row : evalkit::detad_report(preds, gts)) {
                        r += evalkit::to_string(row.bucket) + "\t" + std::to_string(row.gt_count) + "\t" +
                             textio::format_fixed(row.share, 6) + "\t" +
                             (row.average_map ? textio::format_fixed(*row.average_map, 6) : std::string("NA")) + "\n";
                    }
                }
                write_or_print(o->out, r);
            }};
}

Command eval_prop_cmd(CLI::App& root) {
    struct Opts {
        std::string manifest, proposals, out, split = "valid", an = "1,5,10,50,100";
    };
    auto o = std::make_shared<Opts>();
    auto* sub = root.add_subcommand("eval-prop", "proposal AR@AN and AUC report");
    flag(sub, "--manifest", o->manifest, "corpus manifest")->required();
    flag(sub, "--proposals", o->proposals, "proposals JSON")->required();
    flag(sub, "--split", o->split, "ground-truth split");
    flag(sub, "--an", o->an, "AN values, comma separated");
    flag(sub, "--out", o->out, "report path (default: stdout)");
    return {sub, [o](const std::string& cmd) {
                corpus::Subset split{};
                std::vector<std::size_t> an;
                validated([&] {
                    split = corpus::parse_subset(o->split);
                    an = uint_list<std::size_t>("--an", o->an);
                });
                if (std::find(an.begin(), an.end(), std::size_t{0}) != an.end()) throw UsageError("--an: AN must be >= 1");
                const auto corpus = load_corpus(o->manifest);
                require_file(o->proposals);
                const auto props = evalkit::parse_proposals(evalkit::read_text(o->proposals));
                const auto gts = evalkit::ground_truth(corpus, split);
                const auto ar = evalkit::ar_at_an(props, gts, an);
                std::string r = "# command: " + cmd + "\nmetric\tvalue\n";
                for (std::size_t i = 0; i < an.size(); ++i) {
                    r += "ar@" + std::to_string(an[i]) + "\t" + textio::format_fixed(ar[i], 6) + "\n";
                }
                r += "auc_100\t" + textio::format_fixed(evalkit::auc_100(props, gts), 4) + "\n";
                write_or_print(o->out, r);
            }};
}

// ---------------------------------------------------------------------------
// analyze-sim

Command analyze_sim_cmd(CLI::App& root) {
    struct Opts {
        std::string manifest, track, out_prefix;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = root.add_subcommand("analyze-sim", "clip-feature cosine similarity of one video");
    flag(sub, "--manifest", o->manifest, "corpus manifest")->required();
    flag(sub, "--track", o->track, "feature track CSV")->required();
    flag(sub, "--out-prefix", o->out_prefix, "writes <prefix>.csv, <prefix>.pgm, <prefix>_contrast.tsv")
        ->required();
    return {sub, [o](const std::string& cmd) {
                const auto corpus = load_corpus(o->manifest);
                require_file(o->track);
                const auto track = extract::read_track(o->track);
                corpus.video(track.video_id);
                const auto s = analysis::cosine_matrix(track, corpus);
                const auto st = analysis::contrast_stats(track, corpus);
                ensure_parent(o->out_prefix + ".csv");
                evalkit::write_text(o->out_prefix + ".csv", analysis::matrix_csv(s, cmd));
                analysis::export_pgm(s, o->out_prefix + ".pgm", "command: " + cmd);
                auto fmt = [](const std::optional<double>& v) {
                    return v ? textio::format_double(*v) : std::string("NA");
                };
                const std::string r = "# command: " + cmd + "\nvideo_id\tintra_fg\tfg_bg\tintra_bg\tcontrast\n" +
                                      track.video_id + "\t" + fmt(st.intra_fg) + "\t" + fmt(st.fg_bg) + "\t" +
                                      fmt(st.intra_bg) + "\t" + fmt(st.contrast()) + "\n";
                evalkit::write_text(o->out_prefix + "_contrast.tsv", r);
                std::cout << "contrast " << fmt(st.contrast()) << "\n";
            }};
}

// ---------------------------------------------------------------------------
// bench

Command bench_cmd(CLI::App& root) {
    struct Opts {
        experiment::BenchConfig cfg = experiment::preset("paper-study1");
        std::string preset = "paper-study1", manifest, out_dir, background = "hard";
        std::string modes = "tsp,tac,tsp_nogvf", seeds, scores, head_lrs, decay_epochs, thresholds;
    };
    auto o = std::make_shared<Opts>();
    auto& c = o->cfg;
    o->seeds = uint_text(c.seeds);
    o->scores = experiment::to_string(c.score_source);
    o->head_lrs = double_text(c.train.head_lrs);
    o->decay_epochs = uint_text(c.train.decay_epochs);
    o->thresholds = double_text(c.localizer.thresholds);
    auto* sub = root.add_subcommand("bench", "multi-mode, multi-seed comparison with mean and std per mode");
    flag(sub, "--preset", o->preset, "experiment preset");
    flag(sub, "--manifest", o->manifest, "use this corpus instead of generating one");
    flag(sub, "--corpus-seed", c.corpus_seed, "seed of the generated corpus");
    add_synth_flags(sub, c.synth, o->background);
    flag(sub, "--modes", o->modes, "pretraining modes, comma separated");
    flag(sub, "--seeds", o->seeds, "training seeds, comma separated");
    flag(sub, "--scores", o->scores, "localizer fg scores: probe or head");
    flag(sub, "--threads", c.threads, "worker threads (0 = TSPKIT_THREADS or all cores)");
    flag(sub, "--out-dir", o->out_dir, "directory for tables and per-cell artifacts");
    flag(sub, "--embed-dim", c.encoder.embed_dim, "feature width d");
    flag(sub, "--blocks", c.encoder.num_blocks, "residual temporal blocks");
    flag(sub, "--encoder-lr", c.train.encoder_lr, "encoder learning rate");
    flag(sub, "--head-lrs", o->head_lrs, "head learning-rate grid, comma separated");
    flag(sub, "--epochs", c.train.epochs, "training epochs");
    flag(sub, "--warmup", c.train.warmup_epochs, "linear warmup epochs");
    flag(sub, "--decay-epochs", o->decay_epochs, "epochs where the lr drops by gamma ('none' for no decay)");
    flag(sub, "--batch-size", c.train.batch_size, "clips per step");
    flag(sub, "--init-epochs", c.init_train.epochs, "classification epochs of the shared init");
    flag(sub, "--init-encoder-lr", c.init_train.encoder_lr, "encoder learning rate of the shared init");
    flag(sub, "--init-warmup", c.init_train.warmup_epochs, "warmup epochs of the shared init");
    flag(sub, "--init-seed", c.init_seed, "seed of the shared init");
    flag(sub, "--probe-iterations", c.probe.iterations, "probe gradient steps");
    add_localizer_flags(sub, c.localizer, o->thresholds);
    return {sub, [o](const std::string& cmd) {
                auto cfg = o->cfg;
                validated([&] {
                    experiment::preset(o->preset);
                    cfg.synth.background = corpus::parse_background_mode(o->background);
                    cfg.modes.clear();
                    for (const auto& m : split_list(o->modes)) cfg.modes.push_back(pretrain::parse_mode(m));
                    cfg.seeds = uint_list<std::uint64_t>("--seeds", o->seeds);
                    cfg.score_source = experiment::parse_score_source(o->scores);
                    cfg.train.head_lrs = double_list("--head-lrs", o->head_lrs);
                    cfg.train.decay_epochs = uint_list<std::size_t>("--decay-epochs", o->decay_epochs);
                    cfg.localizer.thresholds = double_list("--thresholds", o->thresholds);
                    cfg.validate();
                });
                corpus::Corpus corpus;
                if (o->manifest.empty()) {
                    corpus = corpus::generate_synthetic(cfg.synth, cfg.corpus_seed);
                } else {
                    corpus = load_corpus(o->manifest);
                }
                fit_encoder_to(cfg.encoder, corpus, cfg.geometry);
                std::optional<fs::path> out;
                if (!o->out_dir.empty()) out = o->out_dir;
                const auto result = experiment::run_bench(corpus, cfg, out, cmd,
                                                          [](const std::string& m) { std::cerr << m << "\n"; });
                std::cout << experiment::bench_table(result);
                std::cerr << "bench took " << textio::format_fixed(result.seconds, 1) << " s\n";
            }};
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> out(args.begin(), args.begin() + std::min<std::size_t>(2, args.size()));
    std::vector<std::string> explicit_flags;
    std::vector<std::string> from_file;
    for (std::size_t i = 2; i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        } else {
            explicit_flags.push_back(args[i]);
            continue;
        }
        require_file(path);
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(evalkit::read_text(path));
        } catch (const nlohmann::json::exception& e) {
            throw UsageError("config " + path + ": " + e.what());
        }
        if (!doc.is_object()) throw UsageError("config " + path + ": expected a JSON object of flag values");
        for (const auto& [key, value] : doc.items()) {
            std::string text;
            if (value.is_string()) {
                text = value.get<std::string>();
            } else if (value.is_array()) {
                std::vector<std::string> parts;
                for (const auto& v : value) parts.push_back(v.is_string() ? v.get<std::string>() : v.dump());
                text = parts.empty() ? "none" : join_list(parts);
            } else if (value.is_primitive() && !value.is_null()) {
                text = value.dump();
            } else {
                throw UsageError("config " + path + ": unsupported value for '" + key + "'");
            }
            from_file.push_back("--" + key + "=" + text);
        }
    }
    out.insert(out.end(), from_file.begin(), from_file.end());
    out.insert(out.end(), explicit_flags.begin(), explicit_flags.end());
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"tspkit: temporally-sensitive pretraining of clip encoders at desk scale"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    std::vector<Command> commands{gen_corpus(app),   pretrain_cmd(app),  extract_cmd(app),     localize_cmd(app),
                                  eval_det_cmd(app), eval_prop_cmd(app), analyze_sim_cmd(app), bench_cmd(app)};
    for (auto& c : commands) {
        c.app->add_option("--config", "JSON object of flag values; explicit flags override it");
    }

    try {
        std::vector<std::string> args(argv, argv + argc);
        args = expand_config(args);
        std::vector<char*> cargs;
        for (auto& a : args) cargs.push_back(a.data());
        try {
            app.parse(static_cast<int>(cargs.size()), cargs.data());
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            app.exit(e);
            return 2;
        }
        for (auto& c : commands) {
            if (c.app->parsed()) c.run(command_line(*c.app));
        }
        return 0;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace tspkit::cli
