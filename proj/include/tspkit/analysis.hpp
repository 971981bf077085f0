#pragma once

// Clip-feature similarity analysis and multi-run aggregation.

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tspkit/corpus.hpp"
#include "tspkit/extract.hpp"

namespace tspkit::analysis {

struct SimilarityMatrix {
    std::string video_id;
    std::size_t n = 0;
    std::vector<double> values;  // n x n row-major
    std::vector<double> times;   // clip centers (s)
    std::vector<std::pair<double, double>> foreground;  // merged fg extents (s)

    double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

/// Pairwise cosine similarity; zero-norm rows give 0 off the diagonal and 1 on it.
SimilarityMatrix cosine_matrix(const extract::FeatureTrack& track);

/// Same, with the foreground extents of the video filled in.
SimilarityMatrix cosine_matrix(const extract::FeatureTrack& track, const corpus::Corpus& corpus);

struct ContrastStats {
    std::optional<double> intra_fg;
    std::optional<double> fg_bg;
    std::optional<double> intra_bg;

    /// intra_fg - fg_bg, absent when either is absent.
    std::optional<double> contrast() const;
};

/// Mean cosine over unordered row pairs that are both fg, fg x bg, and both bg.
ContrastStats contrast_stats(const extract::FeatureTrack& track, const std::vector<bool>& is_foreground);
ContrastStats contrast_stats(const extract::FeatureTrack& track, const corpus::Corpus& corpus);

/// Gray level round((s + 1) / 2 * 255), clamped to [0, 255].
unsigned char gray_level(double s);

/// Binary PGM (P5); `comment` goes into a '#' line when non-empty.
std::string pgm_bytes(const SimilarityMatrix& s, const std::string& comment = {});
void export_pgm(const SimilarityMatrix& s, const std::filesystem::path& path, const std::string& comment = {});

/// CSV: header row of clip times, then one row per clip.
std::string matrix_csv(const SimilarityMatrix& s, const std::string& command = {});

class AggregationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;  // sample (N - 1) estimator; 0 when N = 1
    std::size_t n = 0;
    bool single_run = false;
};

using MetricMap = std::map<std::string, double>;

/// Per-metric mean and sample standard deviation across runs with identical keys.
std::map<std::string, Aggregate> aggregate_runs(const std::vector<MetricMap>& runs);

/// TSV "metric\tmean\tstd\tn".
std::string aggregation_tsv(const std::map<std::string, Aggregate>& agg, const std::string& command = {});

}  // namespace tspkit::analysis
