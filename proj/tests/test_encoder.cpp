#include <cmath>

#include "doctest.h"
#include "tspkit/encoder.hpp"
#include "tspkit/rng.hpp"

using namespace tspkit;
using namespace tspkit::encoder;

namespace {

num::Tensor random_clip(const EncoderConfig& c, std::size_t len, std::uint64_t seed) {
    Rng rng(seed);
    num::Tensor t({c.in_channels, len, c.height, c.width}, 0.0);
    for (auto& v : t.data()) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("parameter count follows the shape formula") {
    EncoderConfig c;
    c.in_channels = 4;
    c.embed_dim = 8;
    c.num_blocks = 1;
    CHECK(param_count(c) == 440);
    CHECK(flatten(init_params(c, 0)).size() == 440);
    c.num_blocks = 0;
    CHECK(param_count(c) == 40);
    c.num_blocks = 1;
    c.embed_dim = 16;
    const auto block16 = param_count(c) - 16 * 4 - 16;
    CHECK(static_cast<double>(block16) / 400.0 == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("stem weights have He scale") {
    EncoderConfig c;
    c.in_channels = 64;
    c.embed_dim = 256;
    c.num_blocks = 0;
    const auto p = init_params(c, 3);
    double ss = 0.0;
    for (double v : p.stem_weight.data()) ss += v * v;
    const double sd = std::sqrt(ss / static_cast<double>(p.stem_weight.size()));
    CHECK(std::abs(sd - std::sqrt(2.0 / 64.0)) <= 0.1 * std::sqrt(2.0 / 64.0));
    for (double v : p.stem_bias.data()) CHECK(v == 0.0);
}

TEST_CASE("init is deterministic in the seed") {
    EncoderConfig c;
    CHECK(init_params(c, 5) == init_params(c, 5));
    CHECK(!(init_params(c, 5) == init_params(c, 6)));
}

TEST_CASE("flatten and unflatten round trip") {
    EncoderConfig c;
    const auto p = init_params(c, 1);
    CHECK(unflatten(c, flatten(p)) == p);
    std::vector<double> short_values(10);
    CHECK_THROWS_AS(unflatten(c, short_values), num::ShapeError);
}

TEST_CASE("zero input without blocks gives relu of the stem bias") {
    EncoderConfig c;
    c.in_channels = 3;
    c.embed_dim = 4;
    c.num_blocks = 0;
    auto p = init_params(c, 2);
    p.stem_bias = num::Tensor::vector({-1.0, 0.5, 0.0, 2.0});
    const auto f = encode(p, c, num::Tensor({3, 7, 1, 1}, 0.0));
    CHECK(f == std::vector<double>{0.0, 0.5, 0.0, 2.0});
}

TEST_CASE("time-constant clips match the single-frame path without temporal blocks") {
    EncoderConfig c;
    c.num_blocks = 0;
    const auto p = init_params(c, 4);
    const auto one = random_clip(c, 1, 9);
    num::Tensor clip({c.in_channels, 16, 1, 1}, 0.0);
    for (std::size_t ch = 0; ch < c.in_channels; ++ch)
        for (std::size_t t = 0; t < 16; ++t) clip[ch * 16 + t] = one[ch];
    for (auto pool : {TemporalPool::mean, TemporalPool::max}) {
        c.pool = pool;
        const auto single = encode(p, c, one);
        const auto many = encode(p, c, clip);
        REQUIRE(many.size() == single.size());
        for (std::size_t i = 0; i < single.size(); ++i) CHECK(many[i] == doctest::Approx(single[i]).epsilon(1e-14));
    }
}

TEST_CASE("output dimension is F for any clip length") {
    EncoderConfig c;
    c.embed_dim = 12;
    const auto p = init_params(c, 0);
    for (std::size_t len : {1u, 2u, 5u, 16u, 33u}) CHECK(encode(p, c, random_clip(c, len, len)).size() == 12);
}

TEST_CASE("clip geometry mismatch is a shape error") {
    EncoderConfig c;
    const auto p = init_params(c, 0);
    CHECK_THROWS_AS(encode(p, c, num::Tensor({3, 16, 1, 1}, 0.0)), num::ShapeError);
}

TEST_CASE("full encoder gradient check at the default size") {
    EncoderConfig c;
    REQUIRE(c.embed_dim == 64);
    REQUIRE(c.num_blocks == 2);
    const auto clip = random_clip(c, 16, 12);
    Rng rng(13);
    std::vector<double> w(c.feature_dim());
    for (auto& v : w) v = rng.normal();
    num::LossBuilder loss = [&](num::Tape& t, num::Var flat) {
        const auto vars = bind_flat(t, flat, c);
        const auto f = forward(t, vars, c, clip);
        return num::sum(t, num::mul(t, f, t.constant(num::Tensor::vector(w))));
    };
    const auto rep = num::gradient_check(loss, flatten(init_params(c, 14)), 200);
    CHECK(rep.max_rel_error <= 1e-5);
    CHECK(rep.coords_checked == 200);
}
