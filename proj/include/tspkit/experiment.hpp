#pragma once

// Multi-mode, multi-seed comparison: init stage, pretraining per (mode, seed),
// dense extraction, localization, evaluation, similarity contrast, aggregation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tspkit/analysis.hpp"
#include "tspkit/corpus.hpp"
#include "tspkit/encoder.hpp"
#include "tspkit/evalkit.hpp"
#include "tspkit/pretrain.hpp"
#include "tspkit/sampler.hpp"

namespace tspkit::experiment {

/// Where the localizer's fg scores and class logits come from.
enum class ScoreSource { head, probe };

std::string to_string(ScoreSource s);
ScoreSource parse_score_source(const std::string& s);

struct BenchConfig {
    corpus::SynthConfig synth;
    std::uint64_t corpus_seed = 0;
    std::vector<pretrain::Mode> modes{pretrain::Mode::tsp, pretrain::Mode::tac, pretrain::Mode::tsp_nogvf};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    encoder::EncoderConfig encoder;
    sampler::ClipGeometry geometry;
    /// Template for every cell; mode and seed are overwritten.
    pretrain::TrainConfig train;
    /// Classification pretraining that produces the shared initialization.
    pretrain::TrainConfig init_train;
    std::uint64_t init_seed = 0;
    evalkit::LocalizerParams localizer;
    ScoreSource score_source = ScoreSource::probe;
    evalkit::ProbeOptions probe;
    std::size_t threads = 0;  // 0 = TSPKIT_THREADS or hardware concurrency

    void validate() const;
};

/// Named presets; "paper-study1" is the default comparison.
BenchConfig preset(const std::string& name);

/// TSPKIT_THREADS when set, else hardware concurrency (at least 1).
std::size_t default_threads();

struct CellResult {
    pretrain::Mode mode = pretrain::Mode::tsp;
    std::uint64_t seed = 0;
    std::string checkpoint_id;
    analysis::MetricMap metrics;
};

struct BenchResult {
    std::vector<CellResult> cells;  // sorted by (mode order, seed)
    std::map<pretrain::Mode, std::map<std::string, analysis::Aggregate>> aggregates;
    double seconds = 0.0;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Shared initialization: encoder trained with `init_train` from a random draw.
encoder::EncoderParams init_stage(const corpus::Corpus& corpus, const BenchConfig& cfg);

/// One (mode, seed) cell. Writes per-cell artifacts under `cell_dir` when given.
CellResult run_cell(const corpus::Corpus& corpus, const BenchConfig& cfg, const encoder::EncoderParams& init,
                    pretrain::Mode mode, std::uint64_t seed, const std::optional<std::filesystem::path>& cell_dir,
                    const std::string& command);

/// Runs every cell (concurrently up to cfg.threads) and aggregates per mode.
BenchResult run_bench(const corpus::Corpus& corpus, const BenchConfig& cfg,
                      const std::optional<std::filesystem::path>& out_dir, const std::string& command,
                      const ProgressFn& progress = {});

/// Comparison table: one row per mode, mean and std of each headline metric.
std::string bench_table(const BenchResult& result, const std::string& command = {});

/// Every cell's metrics, one row per (mode, seed).
std::string cells_tsv(const BenchResult& result, const std::string& command = {});

}  // namespace tspkit::experiment
