#pragma once

// Dense clip-feature extraction over whole videos and the CSV feature-track format.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tspkit/corpus.hpp"
#include "tspkit/pretrain.hpp"

namespace tspkit::extract {

class TrackFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FeatureRow {
    double t_center = 0.0;
    std::vector<double> feature;
    std::optional<double> p_fg;  // absent when the extractor has no region head
    std::vector<double> action_logits;

    friend bool operator==(const FeatureRow&, const FeatureRow&) = default;
};

struct FeatureTrack {
    std::string video_id;
    std::size_t clip_len = 16;
    std::size_t frame_stride = 2;
    std::size_t hop_frames = 31;
    double fps = 30.0;
    double duration_sec = 0.0;
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;
    std::string checkpoint_id;
    std::vector<double> gvf;
    std::vector<FeatureRow> rows;

    bool has_p_fg() const;
    /// Seconds covered by one hop.
    double hop_sec() const { return static_cast<double>(hop_frames) / fps; }

    friend bool operator==(const FeatureTrack&, const FeatureTrack&) = default;
};

/// Number of rows for a video: floor((num_frames - 1) / hop) + 1.
std::size_t tile_count(std::size_t num_frames, std::size_t hop_frames);

/// Features at clip centers 0, hop, 2 hop, ... (default hop = clip span).
FeatureTrack extract_track(const corpus::Corpus& corpus, std::size_t video_index, const pretrain::Checkpoint& ckpt,
                           std::optional<std::size_t> hop_frames = std::nullopt);

std::string track_text(const FeatureTrack& track, const std::string& command = {});
FeatureTrack parse_track(const std::string& text);
void write_track(const FeatureTrack& track, const std::filesystem::path& path, const std::string& command = {});
FeatureTrack read_track(const std::filesystem::path& path);

/// Foreground class of each row by clip-center membership in the merged
/// foreground segments of the video; nullopt for background rows.
std::vector<std::optional<std::size_t>> row_classes(const FeatureTrack& track, const corpus::Corpus& corpus);

/// File name used for a video's track inside an output directory.
std::string track_filename(const std::string& video_id);

}  // namespace tspkit::extract
