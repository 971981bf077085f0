#include "tspkit/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "tspkit/extract.hpp"
#include "tspkit/textio.hpp"

namespace tspkit::experiment {

std::string to_string(ScoreSource s) { return s == ScoreSource::head ? "head" : "probe"; }

ScoreSource parse_score_source(const std::string& s) {
    if (s == "head") return ScoreSource::head;
    if (s == "probe") return ScoreSource::probe;
    throw std::invalid_argument("unknown score source '" + s + "' (expected head or probe)");
}

void BenchConfig::validate() const {
    synth.validate();
    encoder.validate();
    train.validate();
    init_train.validate();
    localizer.validate();
    if (modes.empty()) throw std::invalid_argument("bench: no modes");
    if (seeds.empty()) throw std::invalid_argument("bench: no seeds");
    auto m = modes;
    std::sort(m.begin(), m.end());
    if (std::adjacent_find(m.begin(), m.end()) != m.end()) throw std::invalid_argument("bench: duplicate mode");
    auto s = seeds;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) throw std::invalid_argument("bench: seeds must be distinct");
    if (score_source == ScoreSource::head && std::find(modes.begin(), modes.end(), pretrain::Mode::tac) != modes.end()) {
        throw std::invalid_argument("bench: tac checkpoints have no region head; use --scores probe");
    }
    if (init_train.mode != pretrain::Mode::tac) throw std::invalid_argument("bench: init stage must be tac");
}

BenchConfig preset(const std::string& name) {
    if (name != "paper-study1") throw std::invalid_argument("unknown preset '" + name + "'");
    BenchConfig c;
    c.encoder.in_channels = c.synth.channels;
    c.encoder.height = c.synth.height;
    c.encoder.width = c.synth.width;
    c.encoder.embed_dim = 32;
    c.encoder.num_blocks = 1;
    c.train.encoder_lr = 0.004;

    c.init_train = c.train;
    c.init_train.mode = pretrain::Mode::tac;
    c.init_train.encoder_lr = 0.01;
    c.init_train.head_lrs = {0.01};
    c.init_train.epochs = 4;
    c.init_train.warmup_epochs = 1;
    c.init_train.decay_epochs = {};
    c.init_seed = 1000;
    return c;
}

std::size_t default_threads() {
    if (const char* env = std::getenv("TSPKIT_THREADS")) {
        try {
            const auto v = std::stoul(env);
            if (v > 0) return v;
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

encoder::EncoderParams init_stage(const corpus::Corpus& corpus, const BenchConfig& cfg) {
    auto tc = cfg.init_train;
    tc.seed = cfg.init_seed;
    const auto random = encoder::init_params(cfg.encoder, cfg.init_seed);
    if (tc.epochs == 0) return random;
    return pretrain::train(corpus, cfg.encoder, cfg.geometry, random, tc).checkpoint.encoder;
}

namespace {

std::string cell_name(pretrain::Mode mode, std::uint64_t seed) {
    return pretrain::to_string(mode) + "_seed" + std::to_string(seed);
}

}  // namespace

CellResult run_cell(const corpus::Corpus& corpus, const BenchConfig& cfg, const encoder::EncoderParams& init,
                    pretrain::Mode mode, std::uint64_t seed, const std::optional<std::filesystem::path>& cell_dir,
                    const std::string& command) {
    auto tc = cfg.train;
    tc.mode = mode;
    tc.seed = seed;
    const auto trained = pretrain::train(corpus, cfg.encoder, cfg.geometry, init, tc);
    const auto& ckpt = trained.checkpoint;

    CellResult cell;
    cell.mode = mode;
    cell.seed = seed;
    cell.checkpoint_id = ckpt.id();

    const auto train_idx = corpus.subset_indices(corpus::Subset::train);
    const auto valid_idx = corpus.subset_indices(corpus::Subset::valid);

    std::vector<extract::FeatureTrack> valid_tracks;
    for (auto vi : valid_idx) valid_tracks.push_back(extract::extract_track(corpus, vi, ckpt));

    std::vector<extract::FeatureTrack> scored = valid_tracks;
    if (cfg.score_source == ScoreSource::probe) {
        std::vector<extract::FeatureTrack> train_tracks;
        for (auto vi : train_idx) train_tracks.push_back(extract::extract_track(corpus, vi, ckpt));
        const auto probe = evalkit::fit_probe(train_tracks, corpus, cfg.probe);
        for (auto& t : scored) t = evalkit::apply_probe(t, probe);
    } else if (!pretrain::has_region_head(mode)) {
        throw std::invalid_argument("head scores requested for a checkpoint without a region head");
    }

    std::vector<evalkit::DetectionPrediction> dets;
    std::vector<evalkit::ProposalPrediction> props;
    for (const auto& t : scored) {
        auto loc = evalkit::baseline_localize(t, cfg.localizer);
        dets.insert(dets.end(), loc.detections.begin(), loc.detections.end());
        props.insert(props.end(), loc.proposals.begin(), loc.proposals.end());
    }
    const auto gts = evalkit::ground_truth(corpus, corpus::Subset::valid);

    double contrast_sum = 0.0, fg_sum = 0.0, fgbg_sum = 0.0;
    std::size_t contrast_n = 0;
    for (const auto& t : valid_tracks) {
        const auto st = analysis::contrast_stats(t, corpus);
        if (auto c = st.contrast()) {
            contrast_sum += *c;
            fg_sum += *st.intra_fg;
            fgbg_sum += *st.fg_bg;
            ++contrast_n;
        }
    }

    auto& m = cell.metrics;
    m["avg_map"] = 100.0 * evalkit::average_map(dets, gts);
    m["map_50"] = 100.0 * evalkit::map_at(dets, gts, 0.5);
    m["auc"] = evalkit::auc_100(props, gts);
    const double cn = static_cast<double>(std::max<std::size_t>(contrast_n, 1));
    m["contrast"] = contrast_sum / cn;
    m["intra_fg"] = fg_sum / cn;
    m["fg_bg"] = fgbg_sum / cn;
    m["action_acc"] = ckpt.selection.action_acc;
    if (ckpt.selection.region_acc) m["region_acc"] = *ckpt.selection.region_acc;

    if (cell_dir) {
        std::filesystem::create_directories(*cell_dir);
        pretrain::save_checkpoint(ckpt, *cell_dir / "checkpoint.json", command);
        evalkit::write_text(*cell_dir / "train_log.tsv", pretrain::training_log_tsv(trained.log, command));
        evalkit::write_text(*cell_dir / "detections.json", evalkit::detections_text(dets, command));
        evalkit::write_text(*cell_dir / "proposals.json", evalkit::proposals_text(props, command));
        std::string metrics = "# command: " + command + "\nmetric\tvalue\n";
        for (const auto& [k, v] : m) metrics += k + "\t" + textio::format_double(v) + "\n";
        evalkit::write_text(*cell_dir / "metrics.tsv", metrics);
    }
    return cell;
}

BenchResult run_bench(const corpus::Corpus& corpus, const BenchConfig& cfg,
                      const std::optional<std::filesystem::path>& out_dir, const std::string& command,
                      const ProgressFn& progress) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::mutex log_mutex;
    auto say = [&](const std::string& msg) {
        if (!progress) return;
        std::lock_guard<std::mutex> lock(log_mutex);
        progress(msg);
    };

    say("init stage");
    const auto init = init_stage(corpus, cfg);

    struct Job {
        pretrain::Mode mode;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto mode : cfg.modes) {
        for (auto seed : cfg.seeds) jobs.push_back({mode, seed});
    }
    std::vector<CellResult> cells(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            const auto name = cell_name(jobs[i].mode, jobs[i].seed);
            say("cell " + name + " started");
            try {
                std::optional<std::filesystem::path> dir;
                if (out_dir) dir = *out_dir / "cells" / name;
                cells[i] = run_cell(corpus, cfg, init, jobs[i].mode, jobs[i].seed, dir, command);
                say("cell " + name + " done: avg_map " + textio::format_fixed(cells[i].metrics.at("avg_map"), 2));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto n_threads = std::min(cfg.threads ? cfg.threads : default_threads(), jobs.size());
    std::vector<std::thread> pool;
    for (std::size_t k = 1; k < n_threads; ++k) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    BenchResult result;
    result.cells = std::move(cells);
    for (auto mode : cfg.modes) {
        std::vector<analysis::MetricMap> runs;
        for (const auto& c : result.cells) {
            if (c.mode == mode) runs.push_back(c.metrics);
        }
        result.aggregates[mode] = analysis::aggregate_runs(runs);
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        evalkit::write_text(*out_dir / "bench_table.tsv", bench_table(result, command));
        evalkit::write_text(*out_dir / "bench_cells.tsv", cells_tsv(result, command));
        for (const auto& [mode, agg] : result.aggregates) {
            evalkit::write_text(*out_dir / ("aggregate_" + pretrain::to_string(mode) + ".tsv"),
                                analysis::aggregation_tsv(agg, command));
        }
    }
    return result;
}

namespace {

const std::vector<std::string>& table_metrics() {
    static const std::vector<std::string> m{"avg_map", "map_50", "auc", "region_acc", "action_acc",
                                                "contrast", "intra_fg", "fg_bg"};
    return m;
}

}  // namespace

std::string bench_table(const BenchResult& result, const std::string& command) {
    std::string out;
    if (!command.empty()) out += "# command: " + command + "\n";
    out += "mode\truns";
    for (const auto& k : table_metrics()) out += "\t" + k;
    out += "\n";
    for (const auto& [mode, agg] : result.aggregates) {
        out += pretrain::to_string(mode) + "\t" + std::to_string(agg.begin()->second.n);
        for (const auto& k : table_metrics()) {
            auto it = agg.find(k);
            if (it == agg.end()) {
                out += "\tNA";
            } else {
                out += "\t" + textio::format_fixed(it->second.mean, 4) + " ± " + textio::format_fixed(it->second.std, 4);
            }
        }
        out += "\n";
    }
    return out;
}

std::string cells_tsv(const BenchResult& result, const std::string& command) {
    std::string out;
    if (!command.empty()) out += "# command: " + command + "\n";
    out += "mode\tseed\tcheckpoint_id";
    for (const auto& k : table_metrics()) out += "\t" + k;
    out += "\n";
    for (const auto& c : result.cells) {
        out += pretrain::to_string(c.mode) + "\t" + std::to_string(c.seed) + "\t" + c.checkpoint_id;
        for (const auto& k : table_metrics()) {
            auto it = c.metrics.find(k);
            out += "\t" + (it == c.metrics.end() ? std::string("NA") : textio::format_double(it->second));
        }
        out += "\n";
    }
    return out;
}

}  // namespace tspkit::experiment
