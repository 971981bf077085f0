#pragma once

// Clip geometry, per-segment clip sampling, spatial transform, and the
// foreground/background balanced epoch builder.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tspkit/corpus.hpp"
#include "tspkit/numcore.hpp"
#include "tspkit/rng.hpp"

namespace tspkit::sampler {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode { train, test };

struct ClipGeometry {
    std::size_t clip_len = 16;
    std::size_t frame_stride = 2;
    std::size_t crop_size = 112;
    std::size_t resize_short_side = 128;

    /// Frames covered by one clip: (L - 1) * stride + 1.
    std::size_t span() const { return (clip_len - 1) * frame_stride + 1; }
};

struct ClipSpec {
    std::size_t video_index = 0;
    std::size_t center_frame = 0;
    std::size_t clip_len = 16;
    std::size_t frame_stride = 2;
    corpus::RegionKind kind = corpus::RegionKind::background;
    std::optional<std::size_t> class_index;  // foreground only

    friend bool operator==(const ClipSpec&, const ClipSpec&) = default;
};

struct ClipLabels {
    int region = 0;                          // y_r
    std::optional<std::size_t> action;       // y_c, present iff region == 1

    friend bool operator==(const ClipLabels&, const ClipLabels&) = default;
};

struct LabeledClip {
    ClipSpec spec;
    ClipLabels labels;

    friend bool operator==(const LabeledClip&, const LabeledClip&) = default;
};

/// Indices center - ((L-1)/2)*stride ... center + (L/2)*stride, clamped to [0, num_frames).
std::vector<std::size_t> clip_frame_indices(const ClipSpec& spec, std::size_t num_frames);

/// Counts segments too short to hold a frame.
struct SampleStats {
    std::size_t skipped_segments = 0;
};

/// Clip centers for one region segment: i.i.d. uniform frames (train) or at
/// fractions (k + 0.5) / n of the segment (test).
std::vector<ClipSpec> sample_segment_clips(const corpus::RegionSegment& segment, const corpus::VideoRecord& video,
                                           std::size_t video_index, std::optional<std::size_t> class_index,
                                           const ClipGeometry& geometry, Mode mode, std::size_t n, Rng* rng,
                                           SampleStats* stats = nullptr);

/// Resize (short side > target) then crop; identity when the frame already fits.
/// frames: [c x L x h x w].
num::Tensor spatial_transform(const num::Tensor& frames, const ClipGeometry& geometry, Mode mode, Rng* rng);

/// Output spatial size for an input frame of h x w.
std::pair<std::size_t, std::size_t> transformed_size(std::size_t h, std::size_t w, const ClipGeometry& geometry);

/// Materializes the clip [c x L x h_out x w_out].
num::Tensor load_clip(const corpus::Corpus& corpus, const ClipSpec& spec, const ClipGeometry& geometry, Mode mode,
                      Rng* rng);

/// All per-segment clips of one video, test-mode placement.
std::vector<LabeledClip> video_test_clips(const corpus::Corpus& corpus, std::size_t video_index,
                                          const ClipGeometry& geometry, std::size_t clips_per_segment = 5,
                                          SampleStats* stats = nullptr);

/// Test-mode clips over a whole subset, in video order.
std::vector<LabeledClip> subset_test_clips(const corpus::Corpus& corpus, corpus::Subset subset,
                                           const ClipGeometry& geometry, std::size_t clips_per_segment = 5);

struct EpochOptions {
    std::size_t clips_per_segment = 5;
    /// When false the majority-pool subsample is drawn once (epoch 0) and reused.
    bool resample_each_epoch = true;
};

struct Epoch {
    std::vector<LabeledClip> clips;
    std::size_t foreground = 0;
    std::size_t background = 0;
    SampleStats stats;
};

/// Balanced epoch: m = min(|fg|, |bg|) clips of each kind, shuffled.
Epoch build_epoch(const corpus::Corpus& corpus, corpus::Subset split, const ClipGeometry& geometry,
                  std::size_t epoch_index, std::uint64_t seed, const EpochOptions& options = {});

/// Foreground-only epoch (every fg candidate clip, shuffled); used for trimmed
/// action classification.
Epoch build_foreground_epoch(const corpus::Corpus& corpus, corpus::Subset split, const ClipGeometry& geometry,
                             std::size_t epoch_index, std::uint64_t seed, const EpochOptions& options = {});

}  // namespace tspkit::sampler
