#pragma once

// Micro clip encoder: a per-frame spatial stem followed by residual temporal
// convolution blocks and temporal pooling, giving one feature vector per clip.

#include <cstdint>
#include <vector>

#include "tspkit/numcore.hpp"

namespace tspkit::encoder {

enum class TemporalPool { mean, max };

struct EncoderConfig {
    std::size_t in_channels = 16;
    std::size_t height = 1;  // after spatial transform
    std::size_t width = 1;
    std::size_t embed_dim = 64;
    std::size_t num_blocks = 2;
    TemporalPool pool = TemporalPool::mean;

    std::size_t frame_dim() const { return in_channels * height * width; }
    std::size_t feature_dim() const { return embed_dim; }
    void validate() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct ResidualBlock {
    num::Tensor kernel1;  // [d x d x 3]
    num::Tensor bias1;    // [d]
    num::Tensor kernel2;
    num::Tensor bias2;

    friend bool operator==(const ResidualBlock&, const ResidualBlock&) = default;
};

struct EncoderParams {
    num::Tensor stem_weight;  // [d x frame_dim]
    num::Tensor stem_bias;    // [d]
    std::vector<ResidualBlock> blocks;

    /// Every tensor in a fixed order (stem weight, stem bias, then per block k1, b1, k2, b2).
    std::vector<num::Tensor*> tensors();
    std::vector<const num::Tensor*> tensors() const;

    friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

/// Parameter nodes of one forward pass, in the order of EncoderParams::tensors().
struct EncoderVars {
    num::Var stem_weight;
    num::Var stem_bias;
    struct Block {
        num::Var kernel1, bias1, kernel2, bias2;
    };
    std::vector<Block> blocks;

    std::vector<num::Var> all() const;
};

std::size_t param_count(const EncoderConfig& config);

/// He-scaled normal weights (std sqrt(2 / fan_in)), zero biases.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

/// Places each tensor on the tape as its own leaf.
EncoderVars bind(num::Tape& tape, const EncoderParams& params, bool requires_grad);

/// Views slices of a flat parameter vector laid out as EncoderParams::tensors().
EncoderVars bind_flat(num::Tape& tape, num::Var flat, const EncoderConfig& config, std::size_t offset = 0);

std::vector<double> flatten(const EncoderParams& params);
EncoderParams unflatten(const EncoderConfig& config, std::span<const double> values);

/// Clip [c x L x h x w] -> feature [F].
num::Var forward(num::Tape& tape, const EncoderVars& vars, const EncoderConfig& config, const num::Tensor& clip);

/// Convenience: tape-free feature of one clip.
std::vector<double> encode(const EncoderParams& params, const EncoderConfig& config, const num::Tensor& clip);

}  // namespace tspkit::encoder
