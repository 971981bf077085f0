#pragma once

// Clip-encoder pretraining on untrimmed videos.
//
// Three modes share one loop:
//   tsp        action head on f, region head on f (+) f_g (frozen global video feature)
//   tsp_nogvf  action head on f, region head on f
//   tac        action head only, foreground clips only
//
// Per clip loss: fg -> a_r CE(region, 1) + a_c CE(action, y_c); bg -> a_r CE(region, 0).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tspkit/corpus.hpp"
#include "tspkit/encoder.hpp"
#include "tspkit/numcore.hpp"
#include "tspkit/sampler.hpp"

namespace tspkit::pretrain {

inline constexpr int kCheckpointSchemaVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode { tsp, tsp_nogvf, tac };
enum class GvfPool { max, avg };
enum class GvfClipSet { segment, dense };

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);
std::string to_string(GvfPool p);
GvfPool parse_gvf_pool(const std::string& s);
std::string to_string(GvfClipSet s);
GvfClipSet parse_gvf_clip_set(const std::string& s);

bool has_region_head(Mode m);

struct HeadParams {
    num::Tensor action_weight;  // [F x C]
    num::Tensor action_bias;    // [C]
    num::Tensor region_weight;  // [2F x 2] (tsp) or [F x 2]
    num::Tensor region_bias;    // [2]

    std::vector<num::Tensor*> tensors() { return {&action_weight, &action_bias, &region_weight, &region_bias}; }
    std::vector<const num::Tensor*> tensors() const {
        return {&action_weight, &action_bias, &region_weight, &region_bias};
    }
    friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

/// Region head input width: 2F with the GVF, F without.
std::size_t region_input_dim(std::size_t feature_dim, Mode mode);

/// Small normal weights (std 0.01), zero biases.
HeadParams init_heads(std::size_t feature_dim, std::size_t num_classes, Mode mode, std::uint64_t seed);

struct HeadVars {
    num::Var action_weight, action_bias, region_weight, region_bias;
};

HeadVars bind_heads(num::Tape& tape, const HeadParams& heads, bool requires_grad);

struct LossWeights {
    double action = 1.0;  // alpha_c
    double region = 1.0;  // alpha_r

    void validate() const;
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct HeadLogits {
    num::Var action;                 // [C]
    std::optional<num::Var> region;  // [2]
};

/// Applies both heads. `gvf` is required in tsp mode and ignored otherwise.
HeadLogits apply_heads(num::Tape& tape, num::Var feature, std::optional<num::Var> gvf, const HeadVars& heads,
                       Mode mode);

/// Per-clip loss. Background clips are not valid in tac mode.
num::Var clip_loss(num::Tape& tape, num::Var feature, std::optional<num::Var> gvf, const sampler::ClipLabels& labels,
                   const HeadVars& heads, const LossWeights& weights, Mode mode);

// ---------------------------------------------------------------------------
// Global video feature

struct GvfOptions {
    GvfPool pool = GvfPool::max;
    GvfClipSet clip_set = GvfClipSet::segment;
    std::size_t clips_per_segment = 5;
    std::size_t dense_hop_frames = 31;

    friend bool operator==(const GvfOptions&, const GvfOptions&) = default;
};

struct GvfTable {
    std::map<std::string, std::vector<double>> features;
    GvfPool pool = GvfPool::max;
    std::string source;

    const std::vector<double>& at(const std::string& video_id) const;
    friend bool operator==(const GvfTable&, const GvfTable&) = default;
};

/// Pools encoder features of a set of clips (max or mean per coordinate).
std::vector<double> pool_features(const std::vector<std::vector<double>>& rows, GvfPool pool);

/// GVF of one video from the given encoder.
std::vector<double> video_gvf(const corpus::Corpus& corpus, std::size_t video_index,
                              const encoder::EncoderParams& params, const encoder::EncoderConfig& enc,
                              const sampler::ClipGeometry& geometry, const GvfOptions& options);

/// GVF of every video in the corpus; computed once and never updated.
GvfTable precompute_gvf(const corpus::Corpus& corpus, const encoder::EncoderParams& params,
                        const encoder::EncoderConfig& enc, const sampler::ClipGeometry& geometry,
                        const GvfOptions& options, const std::string& source);

// ---------------------------------------------------------------------------
// Optimization

struct TrainConfig {
    Mode mode = Mode::tsp;
    GvfOptions gvf;
    double encoder_lr = 1e-4;
    std::vector<double> head_lrs{0.002, 0.004, 0.006, 0.008, 0.01};
    std::size_t epochs = 8;
    std::size_t warmup_epochs = 2;
    std::vector<std::size_t> decay_epochs{4, 6};
    double decay_gamma = 0.01;
    std::size_t batch_size = 32;
    double momentum = 0.9;
    LossWeights weights;
    std::size_t clips_per_segment = 5;
    bool resample_each_epoch = true;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Learning-rate multiplier for a global step: linear warmup (s + 1) / W over
/// W = warmup_epochs * steps_per_epoch steps, times gamma per decay epoch reached.
double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg);

struct EpochLog {
    std::size_t epoch = 0;  // 1-based, after that many epochs
    double head_lr = 0.0;
    double mean_train_loss = 0.0;
    double action_acc = 0.0;
    std::optional<double> region_acc;
    double lr_multiplier = 0.0;  // at the epoch's last step
    std::size_t foreground_clips = 0;
    std::size_t background_clips = 0;
    bool diverged = false;

    friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct SelectionRecord {
    double head_lr = 0.0;
    std::size_t epoch = 0;  // 0 = initialization
    double score = 0.0;
    double action_acc = 0.0;
    std::optional<double> region_acc;
    std::vector<double> diverged_lrs;

    friend bool operator==(const SelectionRecord&, const SelectionRecord&) = default;
};

struct Checkpoint {
    int schema_version = kCheckpointSchemaVersion;
    encoder::EncoderConfig encoder_config;
    sampler::ClipGeometry geometry;
    TrainConfig train_config;
    std::vector<std::string> classes;
    encoder::EncoderParams encoder;
    HeadParams heads;
    /// Encoder the GVF was computed from (the initialization).
    encoder::EncoderParams gvf_encoder;
    GvfTable gvf;
    SelectionRecord selection;

    Mode mode() const { return train_config.mode; }
    /// Content hash of the learned weights (hex).
    std::string id() const;
};

struct ValidationResult {
    double action_acc = 0.0;
    std::optional<double> region_acc;  // absent for tac
    std::size_t clips = 0;
    std::size_t foreground_clips = 0;

    /// Mean of the head accuracies (action accuracy alone without a region head).
    double score() const;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
};

/// Called after every epoch (for progress reporting); may be empty.
using EpochCallback = std::function<void(const EpochLog&)>;

/// Grid search over head learning rates; returns the best (lr, epoch) snapshot.
TrainResult train(const corpus::Corpus& corpus, const encoder::EncoderConfig& enc,
                  const sampler::ClipGeometry& geometry, const encoder::EncoderParams& init, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Accuracy of both heads on deterministic test-mode clips of a split.
ValidationResult validate(const Checkpoint& ckpt, const corpus::Corpus& corpus, corpus::Subset split);

/// Same, with explicit weights (used inside training).
ValidationResult validate(const corpus::Corpus& corpus, const encoder::EncoderConfig& enc,
                          const sampler::ClipGeometry& geometry, const encoder::EncoderParams& params,
                          const HeadParams& heads, const GvfTable& gvf, Mode mode,
                          const std::vector<sampler::LabeledClip>& clips);

std::string checkpoint_text(const Checkpoint& ckpt, const std::string& command = {});
Checkpoint parse_checkpoint(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, const std::string& command = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// TSV training log: epoch, head_lr, mean_train_loss, action_acc, region_acc, lr_multiplier.
std::string training_log_tsv(const std::vector<EpochLog>& log, const std::string& command = {});

}  // namespace tspkit::pretrain
