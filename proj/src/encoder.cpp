#include "tspkit/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "tspkit/rng.hpp"

namespace tspkit::encoder {

using num::Tensor;
using num::Var;

void EncoderConfig::validate() const {
    if (in_channels == 0 || height == 0 || width == 0) throw std::invalid_argument("encoder: empty input geometry");
    if (embed_dim == 0) throw std::invalid_argument("encoder: embed_dim must be positive");
}

std::vector<Tensor*> EncoderParams::tensors() {
    std::vector<Tensor*> out{&stem_weight, &stem_bias};
    for (auto& b : blocks) out.insert(out.end(), {&b.kernel1, &b.bias1, &b.kernel2, &b.bias2});
    return out;
}

std::vector<const Tensor*> EncoderParams::tensors() const {
    std::vector<const Tensor*> out{&stem_weight, &stem_bias};
    for (const auto& b : blocks) out.insert(out.end(), {&b.kernel1, &b.bias1, &b.kernel2, &b.bias2});
    return out;
}

std::vector<Var> EncoderVars::all() const {
    std::vector<Var> out{stem_weight, stem_bias};
    for (const auto& b : blocks) out.insert(out.end(), {b.kernel1, b.bias1, b.kernel2, b.bias2});
    return out;
}

std::size_t param_count(const EncoderConfig& c) {
    const auto d = c.embed_dim;
    return d * c.frame_dim() + d + c.num_blocks * 2 * (d * d * 3 + d);
}

namespace {

num::Shape stem_shape(const EncoderConfig& c) { return {c.embed_dim, c.frame_dim()}; }
num::Shape kernel_shape(const EncoderConfig& c) { return {c.embed_dim, c.embed_dim, 3}; }

Tensor he_normal(num::Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape), 0.0);
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data()) v = rng.normal() * sd;
    return t;
}

std::vector<num::Shape> layout(const EncoderConfig& c) {
    std::vector<num::Shape> shapes{stem_shape(c), {c.embed_dim}};
    for (std::size_t b = 0; b < c.num_blocks; ++b) {
        shapes.insert(shapes.end(), {kernel_shape(c), {c.embed_dim}, kernel_shape(c), {c.embed_dim}});
    }
    return shapes;
}

}  // namespace

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    EncoderParams p;
    p.stem_weight = he_normal(stem_shape(config), config.frame_dim(), rng);
    p.stem_bias = Tensor({config.embed_dim}, 0.0);
    for (std::size_t b = 0; b < config.num_blocks; ++b) {
        ResidualBlock blk;
        blk.kernel1 = he_normal(kernel_shape(config), config.embed_dim * 3, rng);
        blk.bias1 = Tensor({config.embed_dim}, 0.0);
        blk.kernel2 = he_normal(kernel_shape(config), config.embed_dim * 3, rng);
        // Residual branches start small so the stack begins close to identity.
        for (auto& v : blk.kernel2.data()) v *= 0.1;
        blk.bias2 = Tensor({config.embed_dim}, 0.0);
        p.blocks.push_back(std::move(blk));
    }
    return p;
}

EncoderVars bind(num::Tape& tape, const EncoderParams& params, bool requires_grad) {
    auto leaf = [&](const Tensor& t) {
        Tensor copy = t;
        copy.set_requires_grad(requires_grad);
        return tape.leaf(std::move(copy));
    };
    EncoderVars v;
    v.stem_weight = leaf(params.stem_weight);
    v.stem_bias = leaf(params.stem_bias);
    for (const auto& b : params.blocks) v.blocks.push_back({leaf(b.kernel1), leaf(b.bias1), leaf(b.kernel2), leaf(b.bias2)});
    return v;
}

EncoderVars bind_flat(num::Tape& tape, Var flat, const EncoderConfig& config, std::size_t offset) {
    std::vector<Var> vars;
    for (auto& shape : layout(config)) {
        const auto n = num::shape_size(shape);
        vars.push_back(num::slice(tape, flat, offset, shape));
        offset += n;
    }
    EncoderVars v;
    v.stem_weight = vars[0];
    v.stem_bias = vars[1];
    for (std::size_t b = 0; b < config.num_blocks; ++b) {
        const auto k = 2 + 4 * b;
        v.blocks.push_back({vars[k], vars[k + 1], vars[k + 2], vars[k + 3]});
    }
    return v;
}

std::vector<double> flatten(const EncoderParams& params) {
    std::vector<double> out;
    for (const auto* t : params.tensors()) out.insert(out.end(), t->data().begin(), t->data().end());
    return out;
}

EncoderParams unflatten(const EncoderConfig& config, std::span<const double> values) {
    if (values.size() != param_count(config)) {
        throw num::ShapeError("encoder: expected " + std::to_string(param_count(config)) + " values, got " +
                              std::to_string(values.size()));
    }
    EncoderParams p;
    p.blocks.resize(config.num_blocks);
    auto tensors = p.tensors();
    std::size_t offset = 0;
    const auto shapes = layout(config);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto n = num::shape_size(shapes[i]);
        *tensors[i] = Tensor(shapes[i], std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(offset),
                                                            values.begin() + static_cast<std::ptrdiff_t>(offset + n)));
        offset += n;
    }
    return p;
}

Var forward(num::Tape& tape, const EncoderVars& vars, const EncoderConfig& config, const Tensor& clip) {
    if (clip.rank() != 4 || clip.dim(0) != config.in_channels || clip.dim(2) != config.height ||
        clip.dim(3) != config.width) {
        throw num::ShapeError("encoder: clip " + num::shape_string(clip.shape()) + " does not match geometry [" +
                              std::to_string(config.in_channels) + " x L x " + std::to_string(config.height) + " x " +
                              std::to_string(config.width) + "]");
    }
    if (vars.blocks.size() != config.num_blocks) throw num::ShapeError("encoder: block count mismatch");
    const auto c = clip.dim(0), len = clip.dim(1), hw = clip.dim(2) * clip.dim(3);

    // [c x L x h x w] -> [(c*h*w) x L], one column per frame.
    Tensor frames({c * hw, len}, 0.0);
    const auto src = clip.data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t t = 0; t < len; ++t)
            for (std::size_t p = 0; p < hw; ++p) frames.at(ch * hw + p, t) = src[(ch * len + t) * hw + p];

    Var x = tape.constant(std::move(frames));
    Var h = num::relu(tape, num::add_col_bias(tape, num::matmul(tape, vars.stem_weight, x), vars.stem_bias));
    for (const auto& b : vars.blocks) {
        Var r = num::relu(tape, num::conv1d_same(tape, h, b.kernel1, b.bias1));
        r = num::conv1d_same(tape, r, b.kernel2, b.bias2);
        h = num::relu(tape, num::add(tape, r, h));
    }
    if (config.pool == TemporalPool::mean) return num::mean_over_time(tape, h);

    // Max over time: pull out each frame column with a one-hot selector and pool.
    const auto d = tape.shape(h)[0];
    std::vector<Var> cols;
    for (std::size_t t = 0; t < len; ++t) {
        Tensor sel({len, 1}, 0.0);
        sel.at(t, 0) = 1.0;
        cols.push_back(num::reshape(tape, num::matmul(tape, h, tape.constant(std::move(sel))), {d}));
    }
    return num::elementwise_max(tape, cols);
}

std::vector<double> encode(const EncoderParams& params, const EncoderConfig& config, const Tensor& clip) {
    num::Tape tape(false);
    auto vars = bind(tape, params, false);
    return tape.value(forward(tape, vars, config, clip)).values();
}

}  // namespace tspkit::encoder
