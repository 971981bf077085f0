#pragma once

// Temporal localization metrics, the length-bucket breakdown, a baseline
// threshold localizer, and a linear probe over frozen clip features.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tspkit/corpus.hpp"
#include "tspkit/extract.hpp"

namespace tspkit::evalkit {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Segment {
    double t0 = 0.0;
    double t1 = 0.0;

    double length() const { return t1 - t0; }
    friend bool operator==(const Segment&, const Segment&) = default;
};

struct DetectionPrediction {
    std::string video_id;
    std::size_t label = 0;
    Segment segment;
    double score = 0.0;

    friend bool operator==(const DetectionPrediction&, const DetectionPrediction&) = default;
};

struct ProposalPrediction {
    std::string video_id;
    Segment segment;
    double score = 0.0;

    friend bool operator==(const ProposalPrediction&, const ProposalPrediction&) = default;
};

struct GroundTruth {
    std::string video_id;
    std::size_t label = 0;
    Segment segment;
};

/// tIoU thresholds 0.50, 0.55, ..., 0.95.
const std::array<double, 10>& tiou_thresholds();

double tiou(const Segment& a, const Segment& b);

/// Ground-truth instances of the videos in a split (raw annotations).
std::vector<GroundTruth> ground_truth(const corpus::Corpus& corpus, corpus::Subset split);

/// AP of one class at one threshold; nullopt when the class has no ground truth.
std::optional<double> average_precision(const std::vector<DetectionPrediction>& preds,
                                        const std::vector<GroundTruth>& gts, std::size_t label, double thr);

/// Mean AP over classes with at least one ground-truth instance.
double map_at(const std::vector<DetectionPrediction>& preds, const std::vector<GroundTruth>& gts, double thr);

/// Mean of map_at over tiou_thresholds().
double average_map(const std::vector<DetectionPrediction>& preds, const std::vector<GroundTruth>& gts);

/// Average recall (over tiou_thresholds()) using the top-AN proposals per video, for each AN.
std::vector<double> ar_at_an(const std::vector<ProposalPrediction>& proposals, const std::vector<GroundTruth>& gts,
                             const std::vector<std::size_t>& an_values);

/// Mean AR over AN = 1..100, in percent.
double auc_100(const std::vector<ProposalPrediction>& proposals, const std::vector<GroundTruth>& gts);

// ---------------------------------------------------------------------------
// Length buckets

enum class DetadBucket { XS, S, M, L, XL };
inline constexpr std::array<DetadBucket, 5> kDetadBuckets{DetadBucket::XS, DetadBucket::S, DetadBucket::M,
                                                          DetadBucket::L, DetadBucket::XL};

std::string to_string(DetadBucket b);

/// XS (0,30], S (30,60], M (60,120], L (120,180], XL > 180 seconds.
DetadBucket detad_bucket(double length_sec);

struct DetadRow {
    DetadBucket bucket = DetadBucket::XS;
    std::size_t gt_count = 0;
    double share = 0.0;
    std::optional<double> average_map;  // absent for empty buckets
};

/// Per bucket: ground truth restricted to the bucket; predictions whose best
/// overlapping ground truth (same video, any class) lies in another bucket are
/// dropped, predictions overlapping nothing are kept.
std::vector<DetadRow> detad_report(const std::vector<DetectionPrediction>& preds, const std::vector<GroundTruth>& gts);

// ---------------------------------------------------------------------------
// Baseline localizer

struct LocalizerParams {
    std::size_t window = 1;
    std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    double nms_tiou = 0.8;
    std::size_t max_predictions = 100;

    void validate() const;
};

struct Localization {
    std::vector<DetectionPrediction> detections;
    std::vector<ProposalPrediction> proposals;
};

/// Centered moving average with the window shrunk at the edges.
std::vector<double> smooth(const std::vector<double>& values, std::size_t window);

/// Time extent of a row: centered hop-wide window clamped to the video.
Segment row_extent(const extract::FeatureTrack& track, std::size_t row);

/// Greedy NMS by score; drops candidates whose tIoU with a kept one exceeds nms_tiou.
std::vector<std::size_t> nms(const std::vector<Segment>& segments, const std::vector<double>& scores,
                             double nms_tiou);

/// Threshold runs of smoothed p_fg into scored proposals and labelled detections.
Localization baseline_localize(const extract::FeatureTrack& track, const LocalizerParams& params);

// ---------------------------------------------------------------------------
// Linear probe

/// Logistic fg/bg head and softmax class head on standardized frozen features.
struct Probe {
    std::vector<double> mean;
    std::vector<double> inv_std;
    std::vector<double> region_weight;  // [F]
    double region_bias = 0.0;
    std::vector<double> action_weight;  // [C x F] row-major
    std::vector<double> action_bias;    // [C]
    std::size_t num_classes = 0;
};

struct ProbeOptions {
    std::size_t iterations = 300;
    double learning_rate = 0.5;
    double l2 = 1e-4;
};

/// Full-batch gradient descent on the rows of the given tracks.
Probe fit_probe(const std::vector<extract::FeatureTrack>& tracks, const corpus::Corpus& corpus,
                const ProbeOptions& options = {});

/// Copy of the track with p_fg and action logits replaced by probe outputs.
extract::FeatureTrack apply_probe(const extract::FeatureTrack& track, const Probe& probe);

// ---------------------------------------------------------------------------
// Files

std::string detections_text(const std::vector<DetectionPrediction>& preds, const std::string& command = {});
std::string proposals_text(const std::vector<ProposalPrediction>& props, const std::string& command = {});
std::vector<DetectionPrediction> parse_detections(const std::string& text);
std::vector<ProposalPrediction> parse_proposals(const std::string& text);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace tspkit::evalkit
