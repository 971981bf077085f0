#include "tspkit/extract.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "tspkit/sampler.hpp"
#include "tspkit/textio.hpp"

namespace tspkit::extract {

bool FeatureTrack::has_p_fg() const {
    return !rows.empty() && rows.front().p_fg.has_value();
}

std::size_t tile_count(std::size_t num_frames, std::size_t hop_frames) {
    if (num_frames == 0) return 0;
    return (num_frames - 1) / hop_frames + 1;
}

FeatureTrack extract_track(const corpus::Corpus& corpus, std::size_t video_index, const pretrain::Checkpoint& ckpt,
                           std::optional<std::size_t> hop_frames) {
    const auto& video = corpus.videos().at(video_index);
    const auto& fs = corpus.frame_source();
    if (!fs) throw std::runtime_error("extract: corpus has no frame source");
    const auto [h, w] = sampler::transformed_size(fs->height, fs->width, ckpt.geometry);
    const auto& ec = ckpt.encoder_config;
    if (fs->channels != ec.in_channels || h != ec.height || w != ec.width) {
        throw num::ShapeError("extract: checkpoint expects " + std::to_string(ec.in_channels) + "x" +
                              std::to_string(ec.height) + "x" + std::to_string(ec.width) + " clips, corpus gives " +
                              std::to_string(fs->channels) + "x" + std::to_string(h) + "x" + std::to_string(w));
    }
    if (ckpt.classes.size() != corpus.num_classes()) {
        throw std::runtime_error("extract: checkpoint has " + std::to_string(ckpt.classes.size()) +
                                 " classes, corpus has " + std::to_string(corpus.num_classes()));
    }

    const auto mode = ckpt.mode();
    FeatureTrack track;
    track.video_id = video.id;
    track.clip_len = ckpt.geometry.clip_len;
    track.frame_stride = ckpt.geometry.frame_stride;
    track.hop_frames = hop_frames.value_or(ckpt.geometry.span());
    if (track.hop_frames == 0) throw std::invalid_argument("extract: hop must be positive");
    track.fps = video.fps;
    track.duration_sec = video.duration_sec;
    track.feature_dim = ec.feature_dim();
    track.num_classes = ckpt.classes.size();
    track.checkpoint_id = ckpt.id();
    if (auto it = ckpt.gvf.features.find(video.id); it != ckpt.gvf.features.end()) {
        track.gvf = it->second;
    } else {
        track.gvf = pretrain::video_gvf(corpus, video_index, ckpt.gvf_encoder, ec, ckpt.geometry, ckpt.train_config.gvf);
    }

    const auto n = tile_count(video.num_frames(), track.hop_frames);
    track.rows.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        sampler::ClipSpec spec;
        spec.video_index = video_index;
        spec.center_frame = k * track.hop_frames;
        spec.clip_len = track.clip_len;
        spec.frame_stride = track.frame_stride;
        const auto clip = sampler::load_clip(corpus, spec, ckpt.geometry, sampler::Mode::test, nullptr);

        num::Tape tape(false);
        const auto ev = encoder::bind(tape, ckpt.encoder, false);
        const auto hv = pretrain::bind_heads(tape, ckpt.heads, false);
        const auto f = encoder::forward(tape, ev, ec, clip);
        std::optional<num::Var> g;
        if (mode == pretrain::Mode::tsp) g = tape.constant(num::Tensor::vector(track.gvf));
        const auto logits = pretrain::apply_heads(tape, f, g, hv, mode);

        FeatureRow row;
        row.t_center = static_cast<double>(spec.center_frame) / video.fps;
        row.feature = tape.value(f).values();
        row.action_logits = tape.value(logits.action).values();
        if (logits.region) row.p_fg = num::softmax(tape.value(*logits.region).data())[1];
        track.rows.push_back(std::move(row));
    }
    return track;
}

// ---------------------------------------------------------------------------
// CSV format

std::string track_text(const FeatureTrack& t, const std::string& command) {
    std::string out;
    if (!command.empty()) out += "# command=" + command + "\n";
    out += "# video_id=" + t.video_id + "\n";
    out += "# clip_len=" + std::to_string(t.clip_len) + "\n";
    out += "# frame_stride=" + std::to_string(t.frame_stride) + "\n";
    out += "# hop_frames=" + std::to_string(t.hop_frames) + "\n";
    out += "# fps=" + textio::format_double(t.fps) + "\n";
    out += "# duration_sec=" + textio::format_double(t.duration_sec) + "\n";
    out += "# feature_dim=" + std::to_string(t.feature_dim) + "\n";
    out += "# num_classes=" + std::to_string(t.num_classes) + "\n";
    out += "# checkpoint_id=" + t.checkpoint_id + "\n";
    out += "# gvf=" + textio::join(t.gvf, ';') + "\n";
    out += "t_center";
    for (std::size_t i = 0; i < t.feature_dim; ++i) out += ",f_" + std::to_string(i);
    out += ",p_fg";
    for (std::size_t i = 0; i < t.num_classes; ++i) out += ",a_" + std::to_string(i);
    out += '\n';
    for (const auto& r : t.rows) {
        out += textio::format_double(r.t_center);
        for (double v : r.feature) out += ',' + textio::format_double(v);
        out += ',' + (r.p_fg ? textio::format_double(*r.p_fg) : std::string("NA"));
        for (double v : r.action_logits) out += ',' + textio::format_double(v);
        out += '\n';
    }
    return out;
}

namespace {

std::size_t parse_count(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw TrackFormatError("feature track: missing header key '" + key + "'");
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(key);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw TrackFormatError("feature track: header key '" + key + "' is not an integer");
    }
}

double parse_real(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw TrackFormatError("feature track: missing header key '" + key + "'");
    auto v = textio::parse_double(it->second);
    if (!v) throw TrackFormatError("feature track: header key '" + key + "' is not a number");
    return *v;
}

}  // namespace

FeatureTrack parse_track(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::map<std::string, std::string> kv;
    std::size_t line_no = 0;
    bool have_header_row = false;
    FeatureTrack t;
    std::size_t expected_cols = 0;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!have_header_row && line.rfind("#", 0) == 0) {
            auto body = line.substr(1);
            if (!body.empty() && body.front() == ' ') body.erase(0, 1);
            const auto eq = body.find('=');
            if (eq != std::string::npos) kv[body.substr(0, eq)] = body.substr(eq + 1);
            continue;
        }
        if (!have_header_row) {
            if (!kv.count("video_id")) throw TrackFormatError("feature track: missing header key 'video_id'");
            t.video_id = kv["video_id"];
            t.clip_len = parse_count(kv, "clip_len");
            t.frame_stride = parse_count(kv, "frame_stride");
            t.hop_frames = parse_count(kv, "hop_frames");
            t.fps = parse_real(kv, "fps");
            t.duration_sec = parse_real(kv, "duration_sec");
            t.feature_dim = parse_count(kv, "feature_dim");
            t.num_classes = parse_count(kv, "num_classes");
            t.checkpoint_id = kv.count("checkpoint_id") ? kv["checkpoint_id"] : "";
            if (auto g = kv.find("gvf"); g != kv.end() && !g->second.empty()) {
                for (auto part : textio::split(g->second, ';')) {
                    auto v = textio::parse_double(part);
                    if (!v) throw TrackFormatError("feature track: bad gvf value '" + std::string(part) + "'");
                    t.gvf.push_back(*v);
                }
            }
            if (!t.gvf.empty() && t.gvf.size() != t.feature_dim) {
                throw TrackFormatError("feature track: gvf has " + std::to_string(t.gvf.size()) +
                                       " values, feature_dim is " + std::to_string(t.feature_dim));
            }
            // Column header must match the declared dimensions.
            std::string expected = "t_center";
            for (std::size_t i = 0; i < t.feature_dim; ++i) expected += ",f_" + std::to_string(i);
            expected += ",p_fg";
            for (std::size_t i = 0; i < t.num_classes; ++i) expected += ",a_" + std::to_string(i);
            if (line != expected) {
                throw TrackFormatError("feature track line " + std::to_string(line_no) +
                                       ": column header does not match feature_dim/num_classes");
            }
            expected_cols = 2 + t.feature_dim + t.num_classes;
            have_header_row = true;
            continue;
        }
        const auto cells = textio::split(line, ',');
        const auto row_no = t.rows.size() + 1;
        if (cells.size() != expected_cols) {
            throw TrackFormatError("feature track row " + std::to_string(row_no) + " (line " + std::to_string(line_no) +
                                   "): expected " + std::to_string(expected_cols) + " columns, got " +
                                   std::to_string(cells.size()));
        }
        auto num = [&](std::string_view cell) {
            auto v = textio::parse_double(cell);
            if (!v) {
                throw TrackFormatError("feature track row " + std::to_string(row_no) + ": bad number '" +
                                       std::string(cell) + "'");
            }
            return *v;
        };
        FeatureRow r;
        r.t_center = num(cells[0]);
        for (std::size_t i = 0; i < t.feature_dim; ++i) r.feature.push_back(num(cells[1 + i]));
        if (cells[1 + t.feature_dim] != "NA") r.p_fg = num(cells[1 + t.feature_dim]);
        for (std::size_t i = 0; i < t.num_classes; ++i) r.action_logits.push_back(num(cells[2 + t.feature_dim + i]));
        if (!t.rows.empty() && r.t_center < t.rows.back().t_center) {
            throw TrackFormatError("feature track row " + std::to_string(row_no) + ": rows not ordered by t_center");
        }
        t.rows.push_back(std::move(r));
    }
    if (!have_header_row) throw TrackFormatError("feature track: missing column header row");
    return t;
}

void write_track(const FeatureTrack& track, const std::filesystem::path& path, const std::string& command) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write feature track " + path.string());
    out << track_text(track, command);
}

FeatureTrack read_track(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TrackFormatError("cannot open feature track " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_track(ss.str());
}

std::vector<std::optional<std::size_t>> row_classes(const FeatureTrack& track, const corpus::Corpus& corpus) {
    const auto vi = corpus.video_index(track.video_id);
    const auto& segs = corpus.segments(vi);
    std::vector<std::optional<std::size_t>> out(track.rows.size());
    std::size_t s = 0;
    for (std::size_t i = 0; i < track.rows.size(); ++i) {
        const double t = track.rows[i].t_center;
        while (s + 1 < segs.size() && t >= segs[s].t_end) ++s;
        if (!segs.empty() && segs[s].foreground() && t >= segs[s].t_start) {
            out[i] = corpus.class_index(segs[s].class_label);
        }
    }
    return out;
}

std::string track_filename(const std::string& video_id) { return video_id + ".csv"; }

}  // namespace tspkit::extract
