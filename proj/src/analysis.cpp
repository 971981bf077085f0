#include "tspkit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tspkit/textio.hpp"

namespace tspkit::analysis {

SimilarityMatrix cosine_matrix(const extract::FeatureTrack& track) {
    SimilarityMatrix s;
    s.video_id = track.video_id;
    s.n = track.rows.size();
    s.values.assign(s.n * s.n, 0.0);
    std::vector<double> norms(s.n);
    for (std::size_t i = 0; i < s.n; ++i) {
        s.times.push_back(track.rows[i].t_center);
        double q = 0.0;
        for (double v : track.rows[i].feature) q += v * v;
        norms[i] = std::sqrt(q);
    }
    for (std::size_t i = 0; i < s.n; ++i) {
        s.values[i * s.n + i] = 1.0;
        for (std::size_t j = i + 1; j < s.n; ++j) {
            double c = 0.0;
            if (norms[i] > 0.0 && norms[j] > 0.0) {
                const auto& a = track.rows[i].feature;
                const auto& b = track.rows[j].feature;
                double dot = 0.0;
                for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
                c = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
            }
            s.values[i * s.n + j] = s.values[j * s.n + i] = c;
        }
    }
    return s;
}

SimilarityMatrix cosine_matrix(const extract::FeatureTrack& track, const corpus::Corpus& corpus) {
    auto s = cosine_matrix(track);
    for (const auto& seg : corpus.segments(corpus.video_index(track.video_id))) {
        if (seg.foreground()) s.foreground.emplace_back(seg.t_start, seg.t_end);
    }
    return s;
}

std::optional<double> ContrastStats::contrast() const {
    if (!intra_fg || !fg_bg) return std::nullopt;
    return *intra_fg - *fg_bg;
}

ContrastStats contrast_stats(const extract::FeatureTrack& track, const std::vector<bool>& is_foreground) {
    if (is_foreground.size() != track.rows.size()) {
        throw std::invalid_argument("contrast_stats: one fg flag per row required");
    }
    const auto s = cosine_matrix(track);
    double sum[3] = {0, 0, 0};
    std::size_t cnt[3] = {0, 0, 0};
    for (std::size_t i = 0; i < s.n; ++i) {
        for (std::size_t j = i + 1; j < s.n; ++j) {
            const int g = is_foreground[i] && is_foreground[j] ? 0 : (is_foreground[i] || is_foreground[j] ? 1 : 2);
            sum[g] += s.at(i, j);
            ++cnt[g];
        }
    }
    ContrastStats out;
    if (cnt[0]) out.intra_fg = sum[0] / static_cast<double>(cnt[0]);
    if (cnt[1]) out.fg_bg = sum[1] / static_cast<double>(cnt[1]);
    if (cnt[2]) out.intra_bg = sum[2] / static_cast<double>(cnt[2]);
    return out;
}

ContrastStats contrast_stats(const extract::FeatureTrack& track, const corpus::Corpus& corpus) {
    const auto cls = extract::row_classes(track, corpus);
    std::vector<bool> fg(cls.size());
    for (std::size_t i = 0; i < cls.size(); ++i) fg[i] = cls[i].has_value();
    return contrast_stats(track, fg);
}

unsigned char gray_level(double s) {
    const double v = std::round((s + 1.0) / 2.0 * 255.0);
    return static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
}

std::string pgm_bytes(const SimilarityMatrix& s, const std::string& comment) {
    std::string out = "P5\n";
    if (!comment.empty()) out += "# " + comment + "\n";
    out += std::to_string(s.n) + " " + std::to_string(s.n) + "\n255\n";
    for (double v : s.values) out += static_cast<char>(gray_level(v));
    return out;
}

void export_pgm(const SimilarityMatrix& s, const std::filesystem::path& path, const std::string& comment) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << pgm_bytes(s, comment);
}

std::string matrix_csv(const SimilarityMatrix& s, const std::string& command) {
    std::string out;
    if (!command.empty()) out += "# command=" + command + "\n";
    out += "# video_id=" + s.video_id + "\n";
    out += textio::join(s.times, ',') + "\n";
    for (std::size_t i = 0; i < s.n; ++i) {
        out += textio::join(std::span<const double>(s.values.data() + i * s.n, s.n), ',') + "\n";
    }
    return out;
}

std::map<std::string, Aggregate> aggregate_runs(const std::vector<MetricMap>& runs) {
    if (runs.empty()) throw AggregationError("aggregate_runs: no runs");
    const auto& ref = runs.front();
    for (std::size_t r = 1; r < runs.size(); ++r) {
        std::string missing;
        for (const auto& [k, _] : ref) {
            if (!runs[r].count(k)) missing += (missing.empty() ? "" : ", ") + k;
        }
        std::string extra;
        for (const auto& [k, _] : runs[r]) {
            if (!ref.count(k)) extra += (extra.empty() ? "" : ", ") + k;
        }
        if (!missing.empty() || !extra.empty()) {
            std::string msg = "aggregate_runs: run " + std::to_string(r) + " key mismatch";
            if (!missing.empty()) msg += "; missing: " + missing;
            if (!extra.empty()) msg += "; unexpected: " + extra;
            throw AggregationError(msg);
        }
    }
    std::map<std::string, Aggregate> out;
    const double n = static_cast<double>(runs.size());
    for (const auto& [k, _] : ref) {
        Aggregate a;
        a.n = runs.size();
        double s = 0.0;
        for (const auto& r : runs) s += r.at(k);
        a.mean = s / n;
        if (runs.size() == 1) {
            a.single_run = true;
        } else {
            double q = 0.0;
            for (const auto& r : runs) q += (r.at(k) - a.mean) * (r.at(k) - a.mean);
            a.std = std::sqrt(q / (n - 1.0));
        }
        out[k] = a;
    }
    return out;
}

std::string aggregation_tsv(const std::map<std::string, Aggregate>& agg, const std::string& command) {
    std::string out;
    if (!command.empty()) out += "# command: " + command + "\n";
    out += "metric\tmean\tstd\tn\n";
    for (const auto& [k, a] : agg) {
        out += k + "\t" + textio::format_double(a.mean) + "\t" + textio::format_double(a.std) + "\t" +
               std::to_string(a.n) + (a.single_run ? "\t# single run, std undefined" : "") + "\n";
    }
    return out;
}

}  // namespace tspkit::analysis
