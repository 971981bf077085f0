#include "tspkit/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace tspkit::sampler {

using corpus::RegionKind;

std::vector<std::size_t> clip_frame_indices(const ClipSpec& spec, std::size_t num_frames) {
    std::vector<std::size_t> idx(spec.clip_len);
    const auto left = static_cast<long long>((spec.clip_len - 1) / 2 * spec.frame_stride);
    const auto last = static_cast<long long>(num_frames) - 1;
    for (std::size_t k = 0; k < spec.clip_len; ++k) {
        long long f = static_cast<long long>(spec.center_frame) - left +
                      static_cast<long long>(k * spec.frame_stride);
        idx[k] = static_cast<std::size_t>(std::clamp(f, 0LL, std::max(last, 0LL)));
    }
    return idx;
}

namespace {

// Frames whose timestamps fall in [t_start, t_end); the final segment of a
// video also owns the trailing frames.
std::pair<long long, long long> segment_frames(const corpus::RegionSegment& seg, const corpus::VideoRecord& video) {
    const auto n = static_cast<long long>(video.num_frames());
    long long first = static_cast<long long>(std::ceil(seg.t_start * video.fps - 1e-9));
    long long last = static_cast<long long>(std::ceil(seg.t_end * video.fps - 1e-9)) - 1;
    if (seg.t_end >= video.duration_sec) last = n - 1;
    first = std::max(first, 0LL);
    last = std::min(last, n - 1);
    return {first, last};
}

}  // namespace

std::vector<ClipSpec> sample_segment_clips(const corpus::RegionSegment& segment, const corpus::VideoRecord& video,
                                           std::size_t video_index, std::optional<std::size_t> class_index,
                                           const ClipGeometry& geometry, Mode mode, std::size_t n, Rng* rng,
                                           SampleStats* stats) {
    if (n == 0) throw std::invalid_argument("sample_segment_clips: n must be at least 1");
    std::vector<ClipSpec> out;
    const auto [first, last] = segment_frames(segment, video);
    if (last < first) {
        if (stats) ++stats->skipped_segments;
        return out;
    }
    ClipSpec base;
    base.video_index = video_index;
    base.clip_len = geometry.clip_len;
    base.frame_stride = geometry.frame_stride;
    base.kind = segment.kind;
    if (segment.foreground()) base.class_index = class_index;

    for (std::size_t k = 0; k < n; ++k) {
        long long center;
        if (mode == Mode::train) {
            if (!rng) throw std::invalid_argument("sample_segment_clips: train mode needs an rng");
            center = first + static_cast<long long>(rng->uniform_index(static_cast<std::uint64_t>(last - first + 1)));
        } else {
            const double frac = (static_cast<double>(k) + 0.5) / static_cast<double>(n);
            const double t = segment.t_start + frac * (segment.t_end - segment.t_start);
            center = std::clamp(static_cast<long long>(std::llround(t * video.fps)), first, last);
        }
        ClipSpec s = base;
        s.center_frame = static_cast<std::size_t>(center);
        out.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spatial transform

namespace {

std::pair<std::size_t, std::size_t> resized_size(std::size_t h, std::size_t w, const ClipGeometry& g) {
    const auto short_side = std::min(h, w);
    if (short_side <= g.resize_short_side) return {h, w};
    const double s = static_cast<double>(g.resize_short_side) / static_cast<double>(short_side);
    const auto rh = h == short_side ? g.resize_short_side : static_cast<std::size_t>(std::lround(static_cast<double>(h) * s));
    const auto rw = w == short_side ? g.resize_short_side : static_cast<std::size_t>(std::lround(static_cast<double>(w) * s));
    return {rh, rw};
}

}  // namespace

std::pair<std::size_t, std::size_t> transformed_size(std::size_t h, std::size_t w, const ClipGeometry& g) {
    const auto [rh, rw] = resized_size(h, w, g);
    return {std::min(rh, g.crop_size), std::min(rw, g.crop_size)};
}

namespace {

// Bilinear resize of one plane, half-pixel centers.
void resize_plane(const double* src, std::size_t h, std::size_t w, double* dst, std::size_t oh, std::size_t ow) {
    const double sy = static_cast<double>(h) / static_cast<double>(oh);
    const double sx = static_cast<double>(w) / static_cast<double>(ow);
    for (std::size_t y = 0; y < oh; ++y) {
        double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const auto y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < ow; ++x) {
            double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const auto x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            const double top = src[y0 * w + x0] * (1 - wx) + src[y0 * w + x1] * wx;
            const double bot = src[y1 * w + x0] * (1 - wx) + src[y1 * w + x1] * wx;
            dst[y * ow + x] = top * (1 - wy) + bot * wy;
        }
    }
}

}  // namespace

num::Tensor spatial_transform(const num::Tensor& frames, const ClipGeometry& g, Mode mode, Rng* rng) {
    if (frames.rank() != 4) {
        throw num::ShapeError("spatial_transform: expected [c x L x h x w], got " + num::shape_string(frames.shape()));
    }
    const auto c = frames.dim(0), len = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
    if (h <= g.crop_size && w <= g.crop_size) return frames;

    const auto [rh, rw] = resized_size(h, w, g);
    std::vector<double> resized;
    const double* base = frames.data().data();
    if (rh != h || rw != w) {
        resized.resize(c * len * rh * rw);
        for (std::size_t p = 0; p < c * len; ++p) resize_plane(base + p * h * w, h, w, resized.data() + p * rh * rw, rh, rw);
        base = resized.data();
    }

    // Crop.
    const auto ch = std::min(rh, g.crop_size), cw = std::min(rw, g.crop_size);
    std::size_t oy, ox;
    if (mode == Mode::train) {
        if (!rng) throw std::invalid_argument("spatial_transform: train mode needs an rng");
        oy = rng->uniform_index(rh - ch + 1);
        ox = rng->uniform_index(rw - cw + 1);
    } else {
        oy = (rh - ch) / 2;
        ox = (rw - cw) / 2;
    }
    num::Tensor out({c, len, ch, cw}, 0.0);
    auto dst = out.data();
    for (std::size_t p = 0; p < c * len; ++p)
        for (std::size_t y = 0; y < ch; ++y)
            for (std::size_t x = 0; x < cw; ++x)
                dst[(p * ch + y) * cw + x] = base[(p * rh + oy + y) * rw + ox + x];
    return out;
}

num::Tensor load_clip(const corpus::Corpus& corpus, const ClipSpec& spec, const ClipGeometry& geometry, Mode mode,
                      Rng* rng) {
    const auto& fs = corpus.frame_source();
    if (!fs) throw std::logic_error("load_clip: corpus has no frame source");
    const auto& video = corpus.videos().at(spec.video_index);
    const auto indices = clip_frame_indices(spec, video.num_frames());
    const auto c = fs->channels, hw = fs->height * fs->width, len = spec.clip_len;
    num::Tensor clip({c, len, fs->height, fs->width}, 0.0);
    std::vector<double> frame(corpus.frame_size());
    auto data = clip.data();
    for (std::size_t k = 0; k < len; ++k) {
        corpus.frame_into(spec.video_index, indices[k], frame);
        for (std::size_t ch = 0; ch < c; ++ch)
            std::copy_n(frame.begin() + static_cast<std::ptrdiff_t>(ch * hw), hw, data.begin() + static_cast<std::ptrdiff_t>((ch * len + k) * hw));
    }
    return spatial_transform(clip, geometry, mode, rng);
}

// ---------------------------------------------------------------------------
// Clip sets

namespace {

ClipLabels labels_for(const ClipSpec& spec) {
    ClipLabels l;
    l.region = spec.kind == RegionKind::foreground ? 1 : 0;
    if (l.region) l.action = spec.class_index;
    return l;
}

std::optional<std::size_t> segment_class(const corpus::Corpus& corpus, const corpus::RegionSegment& seg) {
    if (!seg.foreground()) return std::nullopt;
    return corpus.class_index(seg.class_label);
}

}  // namespace

std::vector<LabeledClip> video_test_clips(const corpus::Corpus& corpus, std::size_t video_index,
                                          const ClipGeometry& geometry, std::size_t clips_per_segment,
                                          SampleStats* stats) {
    std::vector<LabeledClip> out;
    const auto& video = corpus.videos().at(video_index);
    for (const auto& seg : corpus.segments(video_index)) {
        for (auto& spec : sample_segment_clips(seg, video, video_index, segment_class(corpus, seg), geometry, Mode::test,
                                               clips_per_segment, nullptr, stats)) {
            out.push_back({spec, labels_for(spec)});
        }
    }
    return out;
}

std::vector<LabeledClip> subset_test_clips(const corpus::Corpus& corpus, corpus::Subset subset,
                                           const ClipGeometry& geometry, std::size_t clips_per_segment) {
    std::vector<LabeledClip> out;
    for (auto vi : corpus.subset_indices(subset)) {
        auto clips = video_test_clips(corpus, vi, geometry, clips_per_segment);
        out.insert(out.end(), clips.begin(), clips.end());
    }
    return out;
}

namespace {

void candidate_pools(const corpus::Corpus& corpus, corpus::Subset split, const ClipGeometry& geometry,
                     std::size_t clips_per_segment, Rng& jitter, std::vector<LabeledClip>& fg,
                     std::vector<LabeledClip>& bg, SampleStats& stats) {
    for (auto vi : corpus.subset_indices(split)) {
        const auto& video = corpus.videos()[vi];
        for (const auto& seg : corpus.segments(vi)) {
            for (auto& spec : sample_segment_clips(seg, video, vi, segment_class(corpus, seg), geometry, Mode::train,
                                                   clips_per_segment, &jitter, &stats)) {
                (seg.foreground() ? fg : bg).push_back({spec, labels_for(spec)});
            }
        }
    }
}

// Keeps k items chosen without replacement, in their original order.
void subsample(std::vector<LabeledClip>& pool, std::size_t k, Rng& rng) {
    if (pool.size() <= k) return;
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    order.resize(k);
    std::sort(order.begin(), order.end());
    std::vector<LabeledClip> kept;
    kept.reserve(k);
    for (auto i : order) kept.push_back(pool[i]);
    pool = std::move(kept);
}

constexpr std::uint64_t kJitterStream = 0x6a6974ULL;
constexpr std::uint64_t kSubsampleStream = 0x737562ULL;
constexpr std::uint64_t kShuffleStream = 0x736866ULL;

}  // namespace

Epoch build_epoch(const corpus::Corpus& corpus, corpus::Subset split, const ClipGeometry& geometry,
                  std::size_t epoch_index, std::uint64_t seed, const EpochOptions& options) {
    Epoch epoch;
    std::vector<LabeledClip> fg, bg;
    Rng jitter(hash_combine(hash_combine(seed, kJitterStream), epoch_index));
    candidate_pools(corpus, split, geometry, options.clips_per_segment, jitter, fg, bg, epoch.stats);
    if (fg.empty() || bg.empty()) {
        throw ConfigError("split '" + corpus::to_string(split) + "' has " + std::to_string(fg.size()) +
                          " foreground and " + std::to_string(bg.size()) +
                          " background clips; balanced sampling needs both");
    }
    const auto m = std::min(fg.size(), bg.size());
    const auto sub_epoch = options.resample_each_epoch ? epoch_index : 0;
    Rng sub(hash_combine(hash_combine(seed, kSubsampleStream), sub_epoch));
    subsample(fg, m, sub);
    subsample(bg, m, sub);
    epoch.foreground = fg.size();
    epoch.background = bg.size();
    epoch.clips = std::move(fg);
    epoch.clips.insert(epoch.clips.end(), bg.begin(), bg.end());
    Rng shuf(hash_combine(hash_combine(seed, kShuffleStream), epoch_index));
    shuf.shuffle(epoch.clips.begin(), epoch.clips.end());
    return epoch;
}

Epoch build_foreground_epoch(const corpus::Corpus& corpus, corpus::Subset split, const ClipGeometry& geometry,
                             std::size_t epoch_index, std::uint64_t seed, const EpochOptions& options) {
    Epoch epoch;
    std::vector<LabeledClip> fg, bg;
    Rng jitter(hash_combine(hash_combine(seed, kJitterStream), epoch_index));
    candidate_pools(corpus, split, geometry, options.clips_per_segment, jitter, fg, bg, epoch.stats);
    if (fg.empty()) throw ConfigError("split '" + corpus::to_string(split) + "' has no foreground clips");
    epoch.foreground = fg.size();
    epoch.clips = std::move(fg);
    Rng shuf(hash_combine(hash_combine(seed, kShuffleStream), epoch_index));
    shuf.shuffle(epoch.clips.begin(), epoch.clips.end());
    return epoch;
}

}  // namespace tspkit::sampler
