#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "tspkit/evalkit.hpp"
#include "tspkit/rng.hpp"

using namespace tspkit;
using namespace tspkit::evalkit;

namespace {

Segment random_segment(Rng& rng) {
    // Coarse grid so ties and exact threshold hits occur.
    const double a = static_cast<double>(rng.uniform_index(10));
    const double len = 1.0 + static_cast<double>(rng.uniform_index(4));
    return {a, a + len};
}

extract::FeatureTrack toy_track(const std::vector<double>& p) {
    extract::FeatureTrack t;
    t.video_id = "v";
    t.fps = 1.0;
    t.hop_frames = 2;
    t.duration_sec = 2.0 * static_cast<double>(p.size());
    t.feature_dim = 1;
    t.num_classes = 2;
    for (std::size_t i = 0; i < p.size(); ++i) t.rows.push_back({2.0 * static_cast<double>(i), {0.0}, p[i], {0.0, 1.0}});
    return t;
}

}  // namespace

TEST_CASE("tIoU examples") {
    CHECK(tiou({0, 10}, {0, 10}) == 1.0);
    CHECK(tiou({0, 10}, {5, 15}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(tiou({0, 1}, {2, 3}) == 0.0);
    CHECK(tiou({0, 1}, {1, 2}) == 0.0);
}

TEST_CASE("tIoU thresholds are 0.50 to 0.95 in steps of 0.05") {
    const auto& t = tiou_thresholds();
    CHECK(t.front() == 0.5);
    CHECK(t.back() == 0.95);
    for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] - t[i - 1] == doctest::Approx(0.05));
}

TEST_CASE("AP examples") {
    const std::vector<GroundTruth> one{{"a", 0, {0, 10}}};
    CHECK(*average_precision({{"a", 0, {0, 10}, 0.9}}, one, 0, 0.5) == 1.0);
    const std::vector<GroundTruth> two{{"a", 0, {0, 10}}, {"a", 0, {20, 30}}};
    CHECK(*average_precision({{"a", 0, {0, 10}, 0.9}}, two, 0, 0.5) == 0.5);
    CHECK(!average_precision({{"a", 0, {0, 10}, 0.9}}, one, 1, 0.5));
    CHECK(*average_precision({}, one, 0, 0.5) == 0.0);
    CHECK_THROWS_AS(average_precision({}, one, 0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(map_at({}, {}, 0.5), EvalError);
}

TEST_CASE("equal-score predictions in either order give the same AP") {
    const std::vector<GroundTruth> g{{"a", 0, {0, 10}}, {"a", 0, {20, 30}}};
    std::vector<DetectionPrediction> p{{"a", 0, {0, 10}, 0.5}, {"a", 0, {50, 60}, 0.5}, {"a", 0, {20, 29}, 0.4}};
    const double ap = *average_precision(p, g, 0, 0.5);
    std::swap(p[0], p[1]);
    CHECK(*average_precision(p, g, 0, 0.5) == ap);
}

TEST_CASE("AP matches the brute-force oracle on random instances") {
    Rng rng(17);
    for (int trial = 0; trial < 400; ++trial) {
        const auto n_gt = 1 + rng.uniform_index(3);
        const auto n_p = rng.uniform_index(7);
        std::vector<GroundTruth> g;
        std::vector<DetectionPrediction> p;
        for (std::size_t k = 0; k < n_gt; ++k) g.push_back({rng.uniform() < 0.7 ? "a" : "b", 0, random_segment(rng)});
        for (std::size_t k = 0; k < n_p; ++k) {
            p.push_back({rng.uniform() < 0.7 ? "a" : "b", rng.uniform_index(2), random_segment(rng),
                         static_cast<double>(rng.uniform_index(4)) / 4.0});
        }
        for (double thr : {0.3, 0.5, 0.75}) {
            const auto got = average_precision(p, g, 0, thr);
            REQUIRE(got);
            CAPTURE(trial);
            CHECK(std::abs(*got - oracle::ap(p, g, 0, thr)) <= 1e-12);
            CHECK(*got >= 0.0);
            CHECK(*got <= 1.0);
        }
    }
}

TEST_CASE("prepending a correct top prediction for an unmatched instance never lowers AP") {
    Rng rng(23);
    int tested = 0;
    for (int trial = 0; trial < 400; ++trial) {
        std::vector<GroundTruth> g;
        std::vector<DetectionPrediction> p;
        for (int k = 0; k < 3; ++k) g.push_back({"a", 0, random_segment(rng)});
        for (int k = 0; k < 5; ++k) p.push_back({"a", 0, random_segment(rng), rng.uniform()});
        const auto free_gt = std::find_if(g.begin(), g.end(), [&](const GroundTruth& x) {
            return std::none_of(p.begin(), p.end(), [&](const auto& q) { return tiou(q.segment, x.segment) >= 0.5; });
        });
        if (free_gt == g.end()) continue;
        ++tested;
        const double before = *average_precision(p, g, 0, 0.5);
        auto q = p;
        q.push_back({"a", 0, free_gt->segment, 2.0});
        CHECK(*average_precision(q, g, 0, 0.5) >= before - 1e-12);
    }
    CHECK(tested > 50);
}

TEST_CASE("metrics ignore video order") {
    Rng rng(29);
    std::vector<GroundTruth> g;
    std::vector<DetectionPrediction> p;
    std::vector<ProposalPrediction> q;
    for (int k = 0; k < 12; ++k) {
        const std::string v = "v" + std::to_string(k % 4);
        g.push_back({v, static_cast<std::size_t>(k % 3), random_segment(rng)});
        for (int r = 0; r < 3; ++r) {
            const auto s = random_segment(rng);
            p.push_back({v, rng.uniform_index(3), s, rng.uniform()});
            q.push_back({v, s, rng.uniform()});
        }
    }
    const double map = average_map(p, g);
    const double auc = auc_100(q, g);
    for (int k = 0; k < 5; ++k) {
        rng.shuffle(g.begin(), g.end());
        rng.shuffle(p.begin(), p.end());
        rng.shuffle(q.begin(), q.end());
        CHECK(average_map(p, g) == doctest::Approx(map).epsilon(1e-14));
        CHECK(auc_100(q, g) == doctest::Approx(auc).epsilon(1e-14));
    }
    CHECK(map >= 0.0);
    CHECK(map <= 1.0);
    CHECK(auc >= 0.0);
    CHECK(auc <= 100.0);
}

TEST_CASE("AR examples") {
    const std::vector<GroundTruth> g{{"a", 0, {0, 10}}};
    CHECK(ar_at_an({{"a", {0, 10}, 0.9}}, g, {1})[0] == 1.0);
    CHECK(auc_100({{"a", {0, 10}, 0.9}}, g) == doctest::Approx(100.0));
    // tIoU 0.6 counts at thresholds 0.50, 0.55, 0.60.
    CHECK(ar_at_an({{"a", {0, 6}, 0.9}}, g, {1})[0] == doctest::Approx(0.3));
    const auto base = ar_at_an({{"a", {0, 6}, 0.9}}, g, {1, 5});
    CHECK(ar_at_an({{"a", {0, 6}, 0.9}, {"a", {40, 50}, 0.1}}, g, {1, 5}) == base);
    CHECK_THROWS_AS(ar_at_an({}, {}, {1}), EvalError);
}

TEST_CASE("AR matching is one-to-one") {
    const std::vector<GroundTruth> g{{"a", 0, {0, 10}}, {"a", 0, {0, 10}}};
    CHECK(ar_at_an({{"a", {0, 10}, 0.9}}, g, {1})[0] == 0.5);
    CHECK(ar_at_an({{"a", {0, 10}, 0.9}, {"a", {0, 10}, 0.8}}, g, {2})[0] == 1.0);
}

TEST_CASE("DETAD buckets are right-inclusive") {
    CHECK(detad_bucket(30.0) == DetadBucket::XS);
    CHECK(detad_bucket(30.01) == DetadBucket::S);
    CHECK(detad_bucket(60.0) == DetadBucket::S);
    CHECK(detad_bucket(90.0) == DetadBucket::M);
    CHECK(detad_bucket(180.0) == DetadBucket::L);
    CHECK(detad_bucket(200.0) == DetadBucket::XL);
    CHECK_THROWS_AS(detad_bucket(0.0), std::invalid_argument);
}

TEST_CASE("DETAD report shares and per-bucket filtering") {
    const std::vector<GroundTruth> g{{"a", 0, {0, 20}}, {"a", 0, {100, 200}}, {"b", 0, {0, 45}}};
    const std::vector<DetectionPrediction> p{{"a", 0, {0, 20}, 0.9}, {"a", 0, {100, 200}, 0.8}, {"b", 0, {0, 45}, 0.7}};
    const auto rows = detad_report(p, g);
    REQUIRE(rows.size() == 5);
    double share = 0.0;
    for (const auto& r : rows) share += r.share;
    CHECK(share == doctest::Approx(1.0));
    CHECK(rows[0].gt_count == 1);
    CHECK(*rows[0].average_map == 1.0);
    CHECK(*rows[1].average_map == 1.0);
    CHECK(*rows[2].average_map == 1.0);
    CHECK(!rows[3].average_map);
    CHECK(!rows[4].average_map);
}

TEST_CASE("smoothing shrinks at the edges") {
    CHECK(smooth({0, 0, 3, 0, 0}, 3) == std::vector<double>{0, 1, 1, 1, 0});
    CHECK(smooth({1, 2}, 3) == std::vector<double>{1.5, 1.5});
    CHECK(smooth({4, 5, 6}, 1) == std::vector<double>{4, 5, 6});
}

TEST_CASE("localizer extracts threshold runs") {
    const auto t = toy_track({0, 0, 1, 1, 0});
    LocalizerParams lp;
    lp.thresholds = {0.5};
    const auto loc = baseline_localize(t, lp);
    REQUIRE(loc.proposals.size() == 1);
    CHECK(loc.proposals[0].segment == Segment{3, 7});
    CHECK(loc.proposals[0].score == 1.0);
    REQUIRE(loc.detections.size() == 1);
    CHECK(loc.detections[0].label == 1);
    CHECK(loc.detections[0].segment == Segment{3, 7});

    const auto all = baseline_localize(t, LocalizerParams{});
    CHECK(all.proposals.size() == 1);

    CHECK(baseline_localize(toy_track({0, 0.05, 0, 0}), LocalizerParams{}).proposals.empty());
    CHECK(baseline_localize(toy_track({}), LocalizerParams{}).detections.empty());
    auto no_scores = toy_track({0.5});
    no_scores.rows[0].p_fg.reset();
    CHECK_THROWS_AS(baseline_localize(no_scores, LocalizerParams{}), EvalError);
}

TEST_CASE("localizer output respects the cap and ranges") {
    Rng rng(31);
    std::vector<double> p(200);
    for (auto& v : p) v = rng.uniform();
    const auto t = toy_track(p);
    LocalizerParams lp;
    lp.max_predictions = 25;
    const auto loc = baseline_localize(t, lp);
    CHECK(loc.proposals.size() <= 25);
    CHECK(loc.detections.size() <= 25);
    for (const auto& d : loc.detections) {
        CHECK(d.segment.t0 >= 0.0);
        CHECK(d.segment.t1 <= t.duration_sec);
        CHECK(d.segment.t0 < d.segment.t1);
        CHECK(d.score >= 0.0);
        CHECK(d.score <= 1.0);
    }
    for (std::size_t i = 1; i < loc.detections.size(); ++i) CHECK(loc.detections[i - 1].score >= loc.detections[i].score);
}

TEST_CASE("NMS keeps one of two identical candidates") {
    const std::vector<Segment> s{{0, 10}, {0, 10}, {20, 30}};
    CHECK(nms(s, {0.5, 0.9, 0.1}, 0.8) == std::vector<std::size_t>{1, 2});
    CHECK(nms({{0, 10}, {0, 9}}, {0.9, 0.8}, 0.95) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("localizer params validation") {
    LocalizerParams p;
    p.window = 2;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = LocalizerParams{};
    p.thresholds = {1.0};
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("prediction files round trip") {
    const std::vector<DetectionPrediction> d{{"a", 2, {0.1, 3.3}, 0.123456789012345}, {"b", 0, {1, 2}, 0.5}};
    auto back = parse_detections(detections_text(d, "tspkit localize"));
    std::sort(back.begin(), back.end(), [](const auto& x, const auto& y) { return x.video_id < y.video_id; });
    CHECK(back == d);
    const std::vector<ProposalPrediction> p{{"a", {0.1, 3.3}, 0.25}};
    CHECK(parse_proposals(proposals_text(p)) == p);
    CHECK_THROWS_AS(parse_proposals(detections_text(d)), EvalError);
    CHECK_THROWS_AS(parse_detections("{\"results\": {\"a\": [{\"segment\": [3, 1], \"score\": 1, \"label\": 0}]}}"),
                    EvalError);
    CHECK_THROWS_AS(parse_detections("not json"), EvalError);
}
