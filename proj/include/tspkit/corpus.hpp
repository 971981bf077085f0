#pragma once

// Temporally annotated untrimmed videos (ActivityNet-style manifest), the
// foreground/background partition of each video, and a seeded synthetic
// corpus whose frames are generated on demand.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tspkit/numcore.hpp"

namespace tspkit::corpus {

inline constexpr int kManifestSchemaVersion = 1;

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Subset { train, valid, test };

std::string to_string(Subset s);
Subset parse_subset(const std::string& s);

struct AnnotationInstance {
    std::string label;
    double t_start = 0.0;
    double t_end = 0.0;

    friend bool operator==(const AnnotationInstance&, const AnnotationInstance&) = default;
};

struct VideoRecord {
    std::string id;
    Subset subset = Subset::train;
    double duration_sec = 0.0;
    double fps = 30.0;
    std::vector<AnnotationInstance> annotations;
    std::optional<std::uint64_t> frame_seed;

    std::size_t num_frames() const;

    friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

enum class RegionKind { background, foreground };

struct RegionSegment {
    double t_start = 0.0;
    double t_end = 0.0;
    RegionKind kind = RegionKind::background;
    std::string class_label;  // empty for background

    bool foreground() const { return kind == RegionKind::foreground; }
    friend bool operator==(const RegionSegment&, const RegionSegment&) = default;
};

enum class BackgroundMode { pure, hard };

std::string to_string(BackgroundMode m);
BackgroundMode parse_background_mode(const std::string& s);

/// Parameters needed to regenerate frames; persisted in the manifest.
struct FrameSource {
    std::uint64_t seed = 0;
    std::size_t channels = 16;
    std::size_t height = 1;
    std::size_t width = 1;
    double noise_sigma = 0.5;
    BackgroundMode background = BackgroundMode::hard;

    friend bool operator==(const FrameSource&, const FrameSource&) = default;
};

struct SynthConfig {
    std::size_t num_classes = 8;
    std::size_t train_videos = 80;
    std::size_t valid_videos = 40;
    std::size_t test_videos = 0;
    double min_duration_sec = 150.0;
    double max_duration_sec = 600.0;
    std::size_t min_instances = 1;
    std::size_t max_instances = 3;
    /// Log-normal instance length: ln(length) ~ N(mu, sigma^2), length in seconds.
    double length_log_mu = 3.6888794541139363;  // ln 40
    double length_log_sigma = 0.9;
    double min_instance_sec = 2.0;
    /// Minimum background gap kept around every instance.
    double min_gap_sec = 2.0;
    std::size_t channels = 16;
    std::size_t height = 1;
    std::size_t width = 1;
    double noise_sigma = 0.5;
    BackgroundMode background = BackgroundMode::hard;
    double fps = 30.0;

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
};

/// Merged foreground intervals plus background gaps; partitions [0, duration].
std::vector<RegionSegment> derive_segments(const VideoRecord& video);

class Corpus {
public:
    Corpus() = default;
    Corpus(std::vector<std::string> classes, std::vector<VideoRecord> videos,
           std::optional<FrameSource> frames = std::nullopt);

    const std::vector<std::string>& classes() const { return classes_; }
    std::size_t num_classes() const { return classes_.size(); }
    std::size_t class_index(const std::string& label) const;

    const std::vector<VideoRecord>& videos() const { return videos_; }
    const VideoRecord& video(const std::string& id) const;
    std::size_t video_index(const std::string& id) const;
    std::vector<std::size_t> subset_indices(Subset s) const;

    /// Region partition of video i (cached at construction).
    const std::vector<RegionSegment>& segments(std::size_t video_index) const { return segments_.at(video_index); }

    const std::optional<FrameSource>& frame_source() const { return frames_; }
    bool has_frames() const { return frames_.has_value(); }
    /// Values per frame (channels * height * width).
    std::size_t frame_size() const;

    /// Procedural frame [channels x height x width] at the given index.
    num::Tensor frame(std::size_t video_index, std::size_t frame_index) const;
    /// Writes a frame into out (length frame_size()) without allocating.
    void frame_into(std::size_t video_index, std::size_t frame_index, std::span<double> out) const;

    const std::vector<double>& prototype(std::size_t class_index) const { return prototypes_.at(class_index); }
    /// Background prototype of a video (pure: own draw, hard: mean of two classes).
    const std::vector<double>& background_prototype(std::size_t video_index) const {
        return backgrounds_.at(video_index);
    }
    /// Class pair mixed into the background in hard mode.
    std::pair<std::size_t, std::size_t> background_pair(std::size_t video_index) const;

    friend bool operator==(const Corpus& a, const Corpus& b) {
        return a.classes_ == b.classes_ && a.videos_ == b.videos_ && a.frames_ == b.frames_;
    }

private:
    void index();

    std::vector<std::string> classes_;
    std::vector<VideoRecord> videos_;
    std::optional<FrameSource> frames_;

    std::map<std::string, std::size_t> class_lookup_;
    std::map<std::string, std::size_t> video_lookup_;
    std::vector<std::vector<RegionSegment>> segments_;
    std::vector<std::vector<double>> prototypes_;
    std::vector<std::vector<double>> backgrounds_;
    std::vector<std::pair<std::size_t, std::size_t>> pairs_;
};

Corpus generate_synthetic(const SynthConfig& config, std::uint64_t seed);

/// Parses and validates a manifest. Errors carry the line number (parse) or
/// the video id and field (invariant violations).
Corpus parse_manifest(const std::string& text);
Corpus load_manifest(const std::filesystem::path& path);

/// Serialized manifest text; `command` is recorded as a provenance field when non-empty.
std::string manifest_text(const Corpus& corpus, const std::string& command = {});
void save_manifest(const Corpus& corpus, const std::filesystem::path& path, const std::string& command = {});

}  // namespace tspkit::corpus
