#include "tspkit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tspkit/rng.hpp"

namespace tspkit::corpus {

using nlohmann::json;

std::string to_string(Subset s) {
    switch (s) {
        case Subset::train: return "train";
        case Subset::valid: return "valid";
        case Subset::test: return "test";
    }
    return "?";
}

Subset parse_subset(const std::string& s) {
    if (s == "train") return Subset::train;
    if (s == "valid" || s == "validation") return Subset::valid;
    if (s == "test" || s == "testing") return Subset::test;
    throw std::invalid_argument("unknown subset '" + s + "'");
}

std::string to_string(BackgroundMode m) { return m == BackgroundMode::pure ? "pure" : "hard"; }

BackgroundMode parse_background_mode(const std::string& s) {
    if (s == "pure") return BackgroundMode::pure;
    if (s == "hard") return BackgroundMode::hard;
    throw std::invalid_argument("unknown background mode '" + s + "' (expected pure|hard)");
}

std::size_t VideoRecord::num_frames() const {
    return static_cast<std::size_t>(std::floor(duration_sec * fps + 1e-9));
}

void SynthConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("synthetic config: " + m); };
    if (num_classes < 1) fail("num_classes must be positive");
    if (background == BackgroundMode::hard && num_classes < 2) fail("hard background needs at least 2 classes");
    if (train_videos + valid_videos + test_videos == 0) fail("no videos requested");
    if (!(min_duration_sec > 0.0) || max_duration_sec < min_duration_sec) fail("invalid duration range");
    if (max_instances < min_instances) fail("invalid instance count range");
    if (!(length_log_sigma >= 0.0)) fail("length sigma must be nonnegative");
    if (!(min_instance_sec > 0.0)) fail("min_instance_sec must be positive");
    if (min_gap_sec < 0.0) fail("min_gap_sec must be nonnegative");
    if (channels == 0 || height == 0 || width == 0) fail("frame geometry must be positive");
    if (noise_sigma < 0.0) fail("noise sigma must be nonnegative");
    if (!(fps > 0.0)) fail("fps must be positive");
    if (max_instances > 0 &&
        min_duration_sec < static_cast<double>(max_instances) * min_instance_sec +
                               static_cast<double>(max_instances + 1) * min_gap_sec) {
        fail("min duration cannot hold max_instances instances of minimum length");
    }
}

std::vector<RegionSegment> derive_segments(const VideoRecord& video) {
    std::vector<AnnotationInstance> ann = video.annotations;
    std::stable_sort(ann.begin(), ann.end(),
                     [](const AnnotationInstance& a, const AnnotationInstance& b) { return a.t_start < b.t_start; });

    struct Merged {
        double t0, t1;
        std::vector<const AnnotationInstance*> members;
    };
    std::vector<Merged> merged;
    for (const auto& a : ann) {
        if (!merged.empty() && a.t_start <= merged.back().t1) {
            merged.back().t1 = std::max(merged.back().t1, a.t_end);
            merged.back().members.push_back(&a);
        } else {
            merged.push_back({a.t_start, a.t_end, {&a}});
        }
    }

    std::vector<RegionSegment> out;
    double cursor = 0.0;
    for (const auto& m : merged) {
        if (m.t0 > cursor) out.push_back({cursor, m.t0, RegionKind::background, {}});
        // Members are inside the merged interval, so overlap == own length.
        const AnnotationInstance* best = m.members.front();
        for (const auto* a : m.members) {
            const double len = a->t_end - a->t_start;
            const double best_len = best->t_end - best->t_start;
            if (len > best_len) best = a;  // members are sorted by t_start: ties keep the earliest
        }
        out.push_back({m.t0, m.t1, RegionKind::foreground, best->label});
        cursor = m.t1;
    }
    if (video.duration_sec > cursor) out.push_back({cursor, video.duration_sec, RegionKind::background, {}});
    return out;
}

// ---------------------------------------------------------------------------
// Corpus

namespace {

constexpr std::uint64_t kProtoStream = 0x70726f746fULL;
constexpr std::uint64_t kBackgroundStream = 0x626b67ULL;

std::vector<double> normal_vector(std::uint64_t key, std::size_t n) {
    Rng rng(key);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

}  // namespace

Corpus::Corpus(std::vector<std::string> classes, std::vector<VideoRecord> videos, std::optional<FrameSource> frames)
    : classes_(std::move(classes)), videos_(std::move(videos)), frames_(frames) {
    std::sort(videos_.begin(), videos_.end(), [](const VideoRecord& a, const VideoRecord& b) { return a.id < b.id; });
    index();
}

void Corpus::index() {
    class_lookup_.clear();
    for (std::size_t i = 0; i < classes_.size(); ++i) {
        if (!class_lookup_.emplace(classes_[i], i).second) throw ManifestError("duplicate class '" + classes_[i] + "'");
    }
    video_lookup_.clear();
    segments_.clear();
    for (std::size_t i = 0; i < videos_.size(); ++i) {
        const auto& v = videos_[i];
        auto bad = [&](const std::string& field, const std::string& msg) {
            throw ManifestError("video '" + v.id + "': " + field + " " + msg);
        };
        if (v.id.empty()) throw ManifestError("video with empty id");
        if (!video_lookup_.emplace(v.id, i).second) bad("id", "is duplicated");
        if (!(v.duration_sec > 0.0) || !std::isfinite(v.duration_sec)) bad("duration_sec", "must be positive");
        if (!(v.fps > 0.0) || !std::isfinite(v.fps)) bad("fps", "must be positive");
        if (v.num_frames() < 1) bad("duration_sec", "yields no frames at this fps");
        for (std::size_t k = 0; k < v.annotations.size(); ++k) {
            const auto& a = v.annotations[k];
            const std::string field = "annotations[" + std::to_string(k) + "]";
            if (!class_lookup_.count(a.label)) bad(field + ".label", "'" + a.label + "' is not a known class");
            if (!(a.t_start >= 0.0)) bad(field + ".segment", "starts before 0");
            if (!(a.t_start < a.t_end)) bad(field + ".segment", "is empty or reversed");
            if (a.t_end > v.duration_sec) bad(field + ".segment", "ends after duration_sec");
        }
        if (frames_ && !v.frame_seed) bad("frame_seed", "is required for synthetic corpora");
        segments_.push_back(derive_segments(v));
    }

    prototypes_.clear();
    backgrounds_.clear();
    pairs_.clear();
    if (!frames_) return;
    if (frames_->background == BackgroundMode::hard && classes_.size() < 2) {
        throw ManifestError("hard background mode needs at least two classes");
    }
    const auto dim = frame_size();
    for (std::size_t c = 0; c < classes_.size(); ++c) {
        prototypes_.push_back(normal_vector(hash_combine(hash_combine(frames_->seed, kProtoStream), c), dim));
    }
    for (const auto& v : videos_) {
        const auto key = hash_combine(*v.frame_seed, kBackgroundStream);
        if (frames_->background == BackgroundMode::pure) {
            backgrounds_.push_back(normal_vector(key, dim));
            pairs_.emplace_back(0, 0);
        } else {
            Rng rng(key);
            const auto n = classes_.size();
            const auto a = rng.uniform_index(n);
            auto b = rng.uniform_index(n - 1);
            if (b >= a) ++b;
            std::vector<double> bg(dim);
            for (std::size_t e = 0; e < dim; ++e) bg[e] = 0.5 * (prototypes_[a][e] + prototypes_[b][e]);
            backgrounds_.push_back(std::move(bg));
            pairs_.emplace_back(a, b);
        }
    }
}

std::size_t Corpus::class_index(const std::string& label) const {
    auto it = class_lookup_.find(label);
    if (it == class_lookup_.end()) throw std::out_of_range("unknown class '" + label + "'");
    return it->second;
}

const VideoRecord& Corpus::video(const std::string& id) const { return videos_.at(video_index(id)); }

std::size_t Corpus::video_index(const std::string& id) const {
    auto it = video_lookup_.find(id);
    if (it == video_lookup_.end()) throw std::out_of_range("unknown video '" + id + "'");
    return it->second;
}

std::vector<std::size_t> Corpus::subset_indices(Subset s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < videos_.size(); ++i)
        if (videos_[i].subset == s) out.push_back(i);
    return out;
}

std::size_t Corpus::frame_size() const {
    if (!frames_) return 0;
    return frames_->channels * frames_->height * frames_->width;
}

std::pair<std::size_t, std::size_t> Corpus::background_pair(std::size_t video_index) const {
    if (!frames_ || frames_->background != BackgroundMode::hard) {
        throw std::logic_error("background_pair() requires a hard-mode synthetic corpus");
    }
    return pairs_.at(video_index);
}

void Corpus::frame_into(std::size_t video_index, std::size_t frame_index, std::span<double> out) const {
    if (!frames_) throw std::logic_error("corpus has no frame source (not a synthetic corpus)");
    const auto& v = videos_.at(video_index);
    if (frame_index >= v.num_frames()) {
        throw num::ArgumentError("frame index " + std::to_string(frame_index) + " out of range for video '" + v.id +
                                 "' with " + std::to_string(v.num_frames()) + " frames");
    }
    const auto dim = frame_size();
    if (out.size() != dim) throw num::ShapeError("frame buffer has wrong size");

    const double t = static_cast<double>(frame_index) / v.fps;
    const auto& segs = segments_[video_index];
    const RegionSegment* seg = &segs.back();
    for (const auto& s : segs) {
        if (t < s.t_end) {
            seg = &s;
            break;
        }
    }
    const auto& proto = seg->foreground() ? prototypes_[class_index(seg->class_label)] : backgrounds_[video_index];
    const auto frame_key = hash_combine(*v.frame_seed, frame_index);
    const double sigma = frames_->noise_sigma;
    for (std::size_t e = 0; e < dim; ++e) {
        out[e] = proto[e];
        if (sigma > 0.0) out[e] += sigma * hashed_normal(hash_combine(frame_key, e));
    }
}

num::Tensor Corpus::frame(std::size_t video_index, std::size_t frame_index) const {
    if (!frames_) throw std::logic_error("corpus has no frame source (not a synthetic corpus)");
    num::Tensor out({frames_->channels, frames_->height, frames_->width}, 0.0);
    frame_into(video_index, frame_index, out.data());
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generation

namespace {

double round_centi(double x) { return std::round(x * 100.0) / 100.0; }

std::string video_id(Subset s, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu", to_string(s).c_str(), i);
    return buf;
}

std::vector<AnnotationInstance> place_instances(const SynthConfig& cfg, double duration, std::size_t count,
                                                const std::string& label, Rng& rng, const std::string& id) {
    std::vector<AnnotationInstance> out;
    if (count == 0) return out;
    const double max_len = duration - 2.0 * cfg.min_gap_sec;
    constexpr int kMaxAttempts = 64;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::vector<double> lengths(count);
        double total = static_cast<double>(count + 1) * cfg.min_gap_sec;
        for (auto& len : lengths) {
            len = std::exp(cfg.length_log_mu + cfg.length_log_sigma * rng.normal());
            len = round_centi(std::clamp(len, cfg.min_instance_sec, max_len));
            total += len;
        }
        if (total > duration) continue;
        // Spread the slack over the count + 1 gaps.
        std::vector<double> weights(count + 1);
        double wsum = 0.0;
        for (auto& w : weights) {
            w = rng.uniform() + 1e-9;
            wsum += w;
        }
        const double slack = duration - total;
        double t = cfg.min_gap_sec + slack * weights[0] / wsum;
        for (std::size_t k = 0; k < count; ++k) {
            const double t0 = round_centi(t);
            const double t1 = round_centi(t0 + lengths[k]);
            out.push_back({label, t0, std::min(t1, duration)});
            t = t1 + cfg.min_gap_sec + slack * weights[k + 1] / wsum;
        }
        return out;
    }
    throw GenerationError("could not place " + std::to_string(count) + " instances in video '" + id + "' (" +
                          std::to_string(duration) + " s) after " + std::to_string(kMaxAttempts) +
                          " attempts; use longer durations or fewer/shorter instances");
}

}  // namespace

Corpus generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    std::vector<std::string> classes;
    for (std::size_t c = 0; c < config.num_classes; ++c) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "class_%02zu", c);
        classes.emplace_back(buf);
    }

    std::vector<VideoRecord> videos;
    const std::pair<Subset, std::size_t> plan[] = {
        {Subset::train, config.train_videos}, {Subset::valid, config.valid_videos}, {Subset::test, config.test_videos}};
    for (const auto& [subset, count] : plan) {
        for (std::size_t i = 0; i < count; ++i) {
            VideoRecord v;
            v.id = video_id(subset, i);
            v.subset = subset;
            v.fps = config.fps;
            v.duration_sec = round_centi(rng.uniform(config.min_duration_sec, config.max_duration_sec));
            v.frame_seed = rng.next_u64() >> 11;  // exactly representable as a JSON double
            const auto n = config.min_instances + rng.uniform_index(config.max_instances - config.min_instances + 1);
            const auto& label = classes[rng.uniform_index(config.num_classes)];
            v.annotations = place_instances(config, v.duration_sec, n, label, rng, v.id);
            videos.push_back(std::move(v));
        }
    }

    FrameSource fs{seed, config.channels, config.height, config.width, config.noise_sigma, config.background};
    return Corpus(std::move(classes), std::move(videos), fs);
}

// ---------------------------------------------------------------------------
// Manifest I/O

namespace {

std::size_t line_of(const std::string& text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

template <class T>
T field(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ManifestError(where + ": missing field '" + key + "'");
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ManifestError(where + ": field '" + key + "' has the wrong type");
    }
}

}  // namespace

Corpus parse_manifest(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ManifestError("manifest parse error at line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
    }
    if (!doc.is_object()) throw ManifestError("manifest: top level must be an object");
    const auto version = field<int>(doc, "schema_version", "manifest");
    if (version != kManifestSchemaVersion) {
        throw ManifestError("manifest: unsupported schema_version " + std::to_string(version));
    }
    auto classes = field<std::vector<std::string>>(doc, "classes", "manifest");
    const auto vids = doc.find("videos");
    if (vids == doc.end() || !vids->is_object()) throw ManifestError("manifest: 'videos' must be an object");

    std::vector<VideoRecord> videos;
    for (auto it = vids->begin(); it != vids->end(); ++it) {
        const std::string where = "video '" + it.key() + "'";
        const auto& obj = it.value();
        if (!obj.is_object()) throw ManifestError(where + ": entry must be an object");
        VideoRecord v;
        v.id = it.key();
        try {
            v.subset = parse_subset(field<std::string>(obj, "subset", where));
        } catch (const std::invalid_argument& e) {
            throw ManifestError(where + ": subset " + e.what());
        }
        v.duration_sec = field<double>(obj, "duration_sec", where);
        v.fps = field<double>(obj, "fps", where);
        if (obj.contains("frame_seed")) v.frame_seed = field<std::uint64_t>(obj, "frame_seed", where);
        const auto anns = obj.find("annotations");
        if (anns != obj.end()) {
            if (!anns->is_array()) throw ManifestError(where + ": 'annotations' must be an array");
            for (std::size_t k = 0; k < anns->size(); ++k) {
                const auto& a = (*anns)[k];
                const std::string aw = where + " annotations[" + std::to_string(k) + "]";
                if (!a.is_object()) throw ManifestError(aw + ": must be an object");
                auto seg = field<std::vector<double>>(a, "segment", aw);
                if (seg.size() != 2) throw ManifestError(aw + ": segment must have two values");
                v.annotations.push_back({field<std::string>(a, "label", aw), seg[0], seg[1]});
            }
        }
        videos.push_back(std::move(v));
    }

    std::optional<FrameSource> frames;
    if (auto s = doc.find("synthetic"); s != doc.end()) {
        FrameSource fs;
        fs.seed = field<std::uint64_t>(*s, "seed", "synthetic");
        fs.channels = field<std::size_t>(*s, "channels", "synthetic");
        fs.height = field<std::size_t>(*s, "height", "synthetic");
        fs.width = field<std::size_t>(*s, "width", "synthetic");
        fs.noise_sigma = field<double>(*s, "noise_sigma", "synthetic");
        try {
            fs.background = parse_background_mode(field<std::string>(*s, "background", "synthetic"));
        } catch (const std::invalid_argument& e) {
            throw ManifestError(std::string("synthetic: ") + e.what());
        }
        if (fs.channels == 0 || fs.height == 0 || fs.width == 0) throw ManifestError("synthetic: empty frame geometry");
        frames = fs;
    }
    return Corpus(std::move(classes), std::move(videos), frames);
}

Corpus load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ManifestError("cannot open manifest " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str());
}

std::string manifest_text(const Corpus& corpus, const std::string& command) {
    json doc;
    doc["schema_version"] = kManifestSchemaVersion;
    doc["classes"] = corpus.classes();
    json vids = json::object();
    for (const auto& v : corpus.videos()) {
        json obj;
        obj["subset"] = to_string(v.subset);
        obj["duration_sec"] = v.duration_sec;
        obj["fps"] = v.fps;
        if (v.frame_seed) obj["frame_seed"] = *v.frame_seed;
        json anns = json::array();
        for (const auto& a : v.annotations) anns.push_back({{"label", a.label}, {"segment", {a.t_start, a.t_end}}});
        obj["annotations"] = std::move(anns);
        vids[v.id] = std::move(obj);
    }
    doc["videos"] = std::move(vids);
    if (const auto& fs = corpus.frame_source()) {
        doc["synthetic"] = {{"seed", fs->seed},           {"channels", fs->channels},
                            {"height", fs->height},       {"width", fs->width},
                            {"noise_sigma", fs->noise_sigma}, {"background", to_string(fs->background)}};
    }
    if (!command.empty()) doc["command"] = command;
    return doc.dump(1) + "\n";
}

void save_manifest(const Corpus& corpus, const std::filesystem::path& path, const std::string& command) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    out << manifest_text(corpus, command);
}

}  // namespace tspkit::corpus
