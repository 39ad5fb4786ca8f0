#include "trajvid/curation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "trajvid/errors.hpp"

namespace trajvid {

using nlohmann::json;

double aesthetic_score(const Tensor& frames) {
    require_shape(frames, {-1, -1, -1, 3}, "frames");
    const int64_t L = frames.shape[0], H = frames.shape[1], W = frames.shape[2];
    const int64_t mid = L / 2;
    double max_sat = 0.0, lum_min = 1e30, lum_max = -1e30;
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            double r = frames.at4(mid, y, x, 0);
            double g = frames.at4(mid, y, x, 1);
            double b = frames.at4(mid, y, x, 2);
            double hi = std::max(r, std::max(g, b));
            double lo = std::min(r, std::min(g, b));
            max_sat = std::max(max_sat, hi - lo);
            double lum = 0.2126 * r + 0.7152 * g + 0.0722 * b;
            lum_min = std::min(lum_min, lum);
            lum_max = std::max(lum_max, lum);
        }
    }
    double score = 10.0 * (0.9 * max_sat + 0.75 * (lum_max - lum_min));
    return std::min(10.0, std::max(0.0, score));
}

double flow_score(const Tensor& flow, const std::vector<Tensor>& masks) {
    require_shape(flow, {-1, -1, -1, 2}, "flow");
    const int64_t L = flow.shape[0], H = flow.shape[1], W = flow.shape[2];
    double total = 0.0;
    int64_t count = 0;
    for (int64_t i = 1; i < L; ++i) {
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                if (!masks.empty()) {
                    bool fg = false;
                    for (const auto& m : masks)
                        if (m.at3(i - 1, y, x) > 0.5) fg = true;
                    if (!fg) continue;
                }
                total += std::hypot(flow.at4(i, y, x, 0), flow.at4(i, y, x, 1));
                count += 1;
            }
        }
    }
    return count == 0 ? 0.0 : total / double(count);
}

double circular_median_deg(std::vector<double> angles_deg) {
    if (angles_deg.empty()) throw validation_error("circular median of an empty set");
    for (double& a : angles_deg) {
        a = std::fmod(a, 360.0);
        if (a < 0) a += 360.0;
    }
    std::sort(angles_deg.begin(), angles_deg.end());
    const int64_t n = int64_t(angles_deg.size());
    // unwrap one period so every candidate sees its neighbors contiguously
    std::vector<double> b(angles_deg);
    b.reserve(size_t(2 * n));
    for (int64_t i = 0; i < n; ++i) b.push_back(angles_deg[size_t(i)] + 360.0);
    std::vector<double> prefix(b.size() + 1, 0.0);
    for (size_t i = 0; i < b.size(); ++i) prefix[i + 1] = prefix[i] + b[i];

    double best_cost = 1e300, best_angle = angles_deg[0];
    for (int64_t i = 0; i < n; ++i) {
        double c = b[size_t(i)];
        // points j in [i, i+n) lie at offsets b[j]-c in [0, 360)
        auto split = std::upper_bound(b.begin() + i, b.begin() + i + n, c + 180.0);
        int64_t k = split - b.begin();  // first offset beyond a half turn
        double near_sum = prefix[size_t(k)] - prefix[size_t(i)];
        int64_t near_cnt = k - i;
        double far_sum = prefix[size_t(i + n)] - prefix[size_t(k)];
        int64_t far_cnt = (i + n) - k;
        double cost = (near_sum - double(near_cnt) * c) +
                      (double(far_cnt) * (360.0 + c) - far_sum);
        if (cost < best_cost - 1e-12) {
            best_cost = cost;
            best_angle = angles_deg[size_t(i)];
        }
    }
    return best_angle;
}

bool angle_in_valid_band(double deg) {
    return (deg >= 0.0 && deg <= 20.0) || (deg >= 160.0 && deg <= 200.0) ||
           (deg >= 340.0 && deg <= 360.0);
}

CameraDiagnostics camera_diagnostics(const Tensor& flow, const std::vector<Tensor>& masks) {
    require_shape(flow, {-1, -1, -1, 2}, "flow");
    const int64_t L = flow.shape[0], H = flow.shape[1], W = flow.shape[2];
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    CameraDiagnostics diag;
    int64_t outward = 0, inward = 0;
    std::vector<double> angles;
    for (int64_t i = 1; i < L; ++i) {
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                bool fg = false;
                for (const auto& m : masks)
                    if (m.at3(i - 1, y, x) > 0.5) fg = true;
                if (fg) continue;
                double u = flow.at4(i, y, x, 0), v = flow.at4(i, y, x, 1);
                if (std::hypot(u, v) <= 0.5) continue;
                diag.moving_pixels += 1;
                double dot = u * (x - cx) + v * (y - cy);
                if (dot > 0) outward += 1;
                else if (dot < 0) inward += 1;
                double a = std::atan2(v, u) * 180.0 / M_PI;
                if (a < 0) a += 360.0;
                angles.push_back(a);
            }
        }
    }
    if (diag.moving_pixels == 0) return diag;
    diag.has_moving_background = true;
    diag.outward_fraction = double(outward) / double(diag.moving_pixels);
    diag.zoom_fraction = double(std::llabs(outward - inward)) / double(diag.moving_pixels);
    diag.dominant_angle_deg = circular_median_deg(angles);
    return diag;
}

bool validity_filter(double aesthetic, double flow, const CurationConfig& cfg) {
    return aesthetic > cfg.aesthetic_threshold && flow > cfg.flow_threshold;
}

bool resolution_filter(int64_t H, int64_t W, const CurationConfig& cfg) {
    return std::min(H, W) >= cfg.min_short_edge;
}

CameraCheck camera_motion_filter(const CameraDiagnostics& diag, const CurationConfig& cfg) {
    CameraCheck check;
    if (!diag.has_moving_background) return check;  // static camera always passes
    if (diag.zoom_fraction > cfg.zoom_threshold) {
        check.pass = false;
        check.reason = "zoom: net divergence fraction " +
                       std::to_string(diag.zoom_fraction) + " exceeds " +
                       std::to_string(cfg.zoom_threshold);
        return check;
    }
    if (!angle_in_valid_band(diag.dominant_angle_deg)) {
        check.pass = false;
        check.reason = "pan angle " + std::to_string(diag.dominant_angle_deg) +
                       " deg outside accepted bands";
    }
    return check;
}

double retention_probability(double flow_score_value) {
    return std::max(0.0, 1.0 - flow_score_value / 100.0);
}

bool retention_filter(double flow_score_value, const std::string& clip_id, uint64_t seed) {
    Rng rng(Rng::derive(seed, Rng::hash_str(clip_id)));
    return rng.uniform() < retention_probability(flow_score_value);
}

ManifestResult build_manifest(const std::string& corpus_dir, const std::string& out_dir,
                              const CurationConfig& cfg, const PromptRefiner* refiner) {
    namespace fs = std::filesystem;
    EchoPromptRefiner echo;
    if (!refiner) refiner = &echo;

    auto index = read_corpus_index(corpus_dir);
    ManifestResult result;
    result.counts["total"] = int64_t(index.size());
    result.counts["kept"] = 0;
    result.counts["rejected_validity"] = 0;
    result.counts["rejected_resolution"] = 0;
    result.counts["rejected_camera"] = 0;
    result.counts["rejected_retention"] = 0;

    std::string manifest_lines;
    for (const auto& entry : index) {
        RenderedClip clip = read_clip((fs::path(corpus_dir) / entry.clip_id).string());
        ClipDiagnostics diag;
        diag.clip_id = entry.clip_id;
        diag.category = entry.category;
        diag.H = entry.H;
        diag.W = entry.W;
        diag.aesthetic = aesthetic_score(clip.frames);
        diag.flow = flow_score(clip.flow, clip.masks);
        diag.camera = camera_diagnostics(clip.flow, clip.masks);
        result.diagnostics.push_back(diag);

        auto reject = [&](const std::string& filter, const std::string& reason) {
            result.rejections.push_back({entry.clip_id, filter, reason});
            result.counts["rejected_" + filter] += 1;
        };

        if (!validity_filter(diag.aesthetic, diag.flow, cfg)) {
            std::string reason;
            if (diag.aesthetic <= cfg.aesthetic_threshold)
                reason = "aesthetic " + std::to_string(diag.aesthetic) + " not above " +
                         std::to_string(cfg.aesthetic_threshold);
            else
                reason = "flow " + std::to_string(diag.flow) + " not above " +
                         std::to_string(cfg.flow_threshold);
            reject("validity", reason);
            continue;
        }
        if (!resolution_filter(diag.H, diag.W, cfg)) {
            reject("resolution", "short edge " +
                                     std::to_string(std::min(diag.H, diag.W)) +
                                     " below " + std::to_string(cfg.min_short_edge));
            continue;
        }
        CameraCheck cam = camera_motion_filter(diag.camera, cfg);
        if (!cam.pass) {
            reject("camera", cam.reason);
            continue;
        }
        if (cfg.retention_enabled &&
            !retention_filter(diag.flow, entry.clip_id, cfg.seed)) {
            reject("retention", "dropped with keep probability " +
                                    std::to_string(retention_probability(diag.flow)));
            continue;
        }
        result.kept.push_back(entry.clip_id);
        result.counts["kept"] += 1;
        json line{{"clip_id", entry.clip_id},
                  {"path", entry.clip_id},
                  {"caption", refiner->refine(entry.caption)},
                  {"category", entry.category},
                  {"dims", json{{"L", entry.L}, {"H", entry.H}, {"W", entry.W}}},
                  {"scores", json{{"aesthetic", diag.aesthetic},
                                  {"flow", diag.flow},
                                  {"zoom_fraction", diag.camera.zoom_fraction},
                                  {"dominant_angle_deg", diag.camera.dominant_angle_deg}}},
                  {"bucket_hint", std::to_string(entry.H) + "x" + std::to_string(entry.W) +
                                      ":" + std::to_string(entry.L)}};
        manifest_lines += line.dump() + "\n";
    }

    fs::create_directories(out_dir);
    auto atomic_write = [](const fs::path& path, const std::string& text) {
        fs::path tmp = path;
        tmp += ".tmp";
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot write " + path.string());
        out << text;
        out.close();
        fs::rename(tmp, path);
    };
    atomic_write(fs::path(out_dir) / "manifest.jsonl", manifest_lines);

    std::string rejlog;
    for (const auto& r : result.rejections) {
        json line{{"clip_id", r.clip_id}, {"filter", r.filter}, {"reason", r.reason}};
        rejlog += line.dump() + "\n";
    }
    atomic_write(fs::path(out_dir) / "rejections.jsonl", rejlog);

    json summary;
    summary["kind"] = "curation_summary";
    summary["config"] = json{{"aesthetic_threshold", cfg.aesthetic_threshold},
                             {"flow_threshold", cfg.flow_threshold},
                             {"min_short_edge", cfg.min_short_edge},
                             {"zoom_threshold", cfg.zoom_threshold},
                             {"retention_enabled", cfg.retention_enabled},
                             {"seed", cfg.seed}};
    summary["counts"] = result.counts;
    atomic_write(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
    return result;
}

std::vector<std::string> read_manifest_clip_ids(const std::string& manifest_path) {
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw io_error("manifest not found: " + manifest_path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, true);
        ids.push_back(rec.at("clip_id").get<std::string>());
    }
    return ids;
}

}  // namespace trajvid
