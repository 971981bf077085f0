#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "tspkit/experiment.hpp"

using namespace tspkit;
using namespace tspkit::experiment;

namespace {

BenchConfig tiny_bench() {
    BenchConfig c = preset("paper-study1");
    c.synth.num_classes = 3;
    c.synth.train_videos = 4;
    c.synth.valid_videos = 2;
    c.synth.min_duration_sec = 40;
    c.synth.max_duration_sec = 80;
    c.synth.length_log_mu = std::log(10.0);
    c.encoder.embed_dim = 6;
    c.seeds = {0, 1};
    c.train.head_lrs = {0.01};
    c.train.epochs = 1;
    c.train.warmup_epochs = 0;
    c.train.decay_epochs = {};
    c.init_train.epochs = 1;
    c.init_train.warmup_epochs = 0;
    c.probe.iterations = 20;
    return c;
}

}  // namespace

TEST_CASE("preset and validation") {
    const auto c = preset("paper-study1");
    CHECK_NOTHROW(c.validate());
    CHECK(c.modes.size() == 3);
    CHECK(c.seeds.size() == 5);
    CHECK(c.train.head_lrs == std::vector<double>{0.002, 0.004, 0.006, 0.008, 0.01});
    CHECK(c.train.epochs == 8);
    CHECK_THROWS_AS(preset("nope"), std::invalid_argument);

    auto d = c;
    d.seeds = {1, 1};
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    d = c;
    d.score_source = ScoreSource::head;
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    d.modes = {pretrain::Mode::tsp, pretrain::Mode::tsp_nogvf};
    CHECK_NOTHROW(d.validate());
    CHECK(parse_score_source("head") == ScoreSource::head);
    CHECK_THROWS_AS(parse_score_source("x"), std::invalid_argument);
}

TEST_CASE("bench results do not depend on the thread count") {
    auto cfg = tiny_bench();
    const auto corpus = corpus::generate_synthetic(cfg.synth, cfg.corpus_seed);
    cfg.threads = 1;
    const auto a = run_bench(corpus, cfg, std::nullopt, "t");
    cfg.threads = 3;
    const auto b = run_bench(corpus, cfg, std::nullopt, "t");
    REQUIRE(a.cells.size() == 6);
    REQUIRE(b.cells.size() == 6);
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].checkpoint_id == b.cells[i].checkpoint_id);
        CHECK(a.cells[i].metrics == b.cells[i].metrics);
    }
    CHECK(cells_tsv(a) == cells_tsv(b));
    CHECK(bench_table(a) == bench_table(b));

    for (const auto& c : a.cells) {
        CHECK(c.metrics.count("avg_map"));
        CHECK(c.metrics.count("auc"));
        CHECK(c.metrics.count("contrast"));
        CHECK(c.metrics.count("region_acc") == (c.mode == pretrain::Mode::tac ? 0u : 1u));
    }
    CHECK(a.aggregates.at(pretrain::Mode::tsp).at("avg_map").n == 2);
}

TEST_CASE("bench writes its artifacts") {
    auto cfg = tiny_bench();
    cfg.modes = {pretrain::Mode::tsp};
    cfg.seeds = {3};
    const auto corpus = corpus::generate_synthetic(cfg.synth, cfg.corpus_seed);
    const auto dir = std::filesystem::temp_directory_path() / "tspkit_bench_artifacts";
    std::filesystem::remove_all(dir);
    const auto r = run_bench(corpus, cfg, dir, "tspkit bench");
    CHECK(std::filesystem::exists(dir / "bench_table.tsv"));
    CHECK(std::filesystem::exists(dir / "bench_cells.tsv"));
    CHECK(std::filesystem::exists(dir / "aggregate_tsp.tsv"));
    for (const char* f : {"checkpoint.json", "train_log.tsv", "detections.json", "proposals.json", "metrics.tsv"}) {
        CHECK(std::filesystem::exists(dir / "cells" / "tsp_seed3" / f));
    }
    CHECK(evalkit::read_text(dir / "bench_table.tsv").rfind("# command: tspkit bench\n", 0) == 0);
    CHECK(r.aggregates.at(pretrain::Mode::tsp).at("avg_map").single_run);
    std::filesystem::remove_all(dir);
}
