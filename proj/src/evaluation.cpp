#include "trajvid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "trajvid/errors.hpp"

namespace trajvid {

using nlohmann::json;

double trajectory_error(const Trajectory& predefined, const TrackResult& tracked) {
    if (predefined.points.size() != tracked.tracked.size())
        throw validation_error("trajectory length " + std::to_string(predefined.points.size()) +
                               " does not match track length " +
                               std::to_string(tracked.tracked.size()));
    if (predefined.points.empty()) throw validation_error("cannot score an empty trajectory");
    double total = 0.0;
    for (size_t i = 0; i < predefined.points.size(); ++i) {
        total += std::abs(predefined.points[i][0] - tracked.tracked[i][0]) +
                 std::abs(predefined.points[i][1] - tracked.tracked[i][1]);
    }
    return total / double(predefined.points.size());
}

TrackResult track_centroid(const Tensor& video, double background_level) {
    if (video.ndim() != 4) throw validation_error("tracker expects a [L, H, W, C] volume");
    require_finite(video, "video");
    const int64_t L = video.shape[0], H = video.shape[1], W = video.shape[2],
                  C = video.shape[3];
    TrackResult result;
    std::array<double, 2> prev = {(W - 1) / 2.0, (H - 1) / 2.0};
    for (int64_t i = 0; i < L; ++i) {
        double fg_mass = 0.0, total_mass = 0.0, sx = 0.0, sy = 0.0;
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                double intensity = 0.0;
                for (int64_t c = 0; c < C; ++c) intensity += video.at4(i, y, x, c);
                intensity /= double(C);
                total_mass += intensity;
                if (intensity > background_level) {
                    fg_mass += intensity;
                    sx += intensity * double(x);
                    sy += intensity * double(y);
                }
            }
        }
        if (fg_mass > 0.0) {
            prev = {sx / fg_mass, sy / fg_mass};
            result.confidence.push_back(total_mass > 0.0 ? fg_mass / total_mass : 0.0);
        } else {
            result.confidence.push_back(0.0);
        }
        result.tracked.push_back(prev);
    }
    return result;
}

double psnr(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) throw validation_error("psnr inputs must share a shape");
    if (a.numel() == 0) throw validation_error("psnr of empty tensors");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a.data[size_t(i)] - b.data[size_t(i)];
        mse += d * d;
    }
    mse /= double(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

std::vector<double> gaussian_window(int64_t size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size));
    double sum = 0.0;
    double mid = (size - 1) / 2.0;
    for (int64_t i = 0; i < size; ++i) {
        w[size_t(i)] = std::exp(-0.5 * (i - mid) * (i - mid) / (sigma * sigma));
        sum += w[size_t(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) throw validation_error("ssim inputs must share a shape");
    if (a.ndim() != 4) throw validation_error("ssim expects [L, H, W, C] volumes");
    const int64_t L = a.shape[0], H = a.shape[1], W = a.shape[2], C = a.shape[3];
    int64_t win = std::min<int64_t>(11, std::min(H, W));
    if (win % 2 == 0) win -= 1;
    if (win < 1) throw validation_error("ssim inputs too small for any window");
    const auto kernel = gaussian_window(win, 1.5);
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;

    double total = 0.0;
    int64_t windows = 0;
    for (int64_t i = 0; i < L; ++i) {
        for (int64_t c = 0; c < C; ++c) {
            for (int64_t y0 = 0; y0 + win <= H; ++y0) {
                for (int64_t x0 = 0; x0 + win <= W; ++x0) {
                    double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                    for (int64_t dy = 0; dy < win; ++dy) {
                        for (int64_t dx = 0; dx < win; ++dx) {
                            double wgt = kernel[size_t(dy)] * kernel[size_t(dx)];
                            double va = a.at4(i, y0 + dy, x0 + dx, c);
                            double vb = b.at4(i, y0 + dy, x0 + dx, c);
                            mx += wgt * va;
                            my += wgt * vb;
                            xx += wgt * va * va;
                            yy += wgt * vb * vb;
                            xy += wgt * va * vb;
                        }
                    }
                    double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
                    double val = ((2 * mx * my + C1) * (2 * cov + C2)) /
                                 ((mx * mx + my * my + C1) * (vx + vy + C2));
                    total += val;
                    windows += 1;
                }
            }
        }
    }
    return total / double(windows);
}

void save_run_record(const std::string& path, const RunRecord& record) {
    namespace fs = std::filesystem;
    // non-finite metrics (the PSNR infinity sentinel) round-trip as strings
    json metrics = json::object();
    for (const auto& [k, v] : record.metrics) {
        if (std::isfinite(v)) metrics[k] = v;
        else metrics[k] = v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
    }
    json j{{"kind", "run_record"},
           {"run_id", record.run_id},
           {"config_hash", record.config_hash},
           {"provenance", record.provenance},
           {"metrics", metrics},
           {"tags", record.tags}};
    fs::path tmp = fs::path(path);
    tmp += ".tmp";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write run record: " + path);
    out << j.dump(2) << "\n";
    out.close();
    fs::rename(tmp, fs::path(path));
}

namespace {

RunRecord record_from_json(const json& j) {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.provenance = j.at("provenance").get<std::string>();
    for (const auto& [k, v] : j.at("metrics").items()) {
        if (v.is_string()) {
            std::string s = v.get<std::string>();
            double inf = std::numeric_limits<double>::infinity();
            r.metrics[k] = s == "inf" ? inf
                          : s == "-inf" ? -inf
                                        : std::numeric_limits<double>::quiet_NaN();
        } else {
            r.metrics[k] = v.get<double>();
        }
    }
    for (const auto& [k, v] : j.at("tags").items()) r.tags[k] = v.get<std::string>();
    return r;
}

}  // namespace

RunRecord load_run_record(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("run record not found: " + path);
    json j = json::parse(in, nullptr, true);
    if (j.value("kind", "") != "run_record") throw io_error("not a run record: " + path);
    return record_from_json(j);
}

std::vector<RunRecord> load_run_records(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir)) throw io_error("run record directory not found: " + dir);
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".json") paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    std::vector<RunRecord> out;
    for (const auto& p : paths) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw io_error("run record not found: " + p);
        json j = json::parse(in, nullptr, true);
        // other tool outputs (config snapshots) may share the directory
        if (j.value("kind", "") != "run_record") continue;
        out.push_back(record_from_json(j));
    }
    return out;
}

std::string config_hash_hex(const std::string& serialized_config) {
    uint64_t h = Rng::hash_str(serialized_config);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

std::string fmt_metric(const RunRecord& r, const std::string& key) {
    auto it = r.metrics.find(key);
    if (it == r.metrics.end()) return "-";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", it->second);
    return buf;
}

std::string pad(const std::string& s, size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

// rows ordered by trajectory error ascending, missing values last; ties and
// absent metrics fall back to run_id order for a stable layout
std::vector<const RunRecord*> order_rows(const std::vector<const RunRecord*>& rows) {
    std::vector<const RunRecord*> sorted(rows);
    std::sort(sorted.begin(), sorted.end(), [](const RunRecord* a, const RunRecord* b) {
        auto ta = a->metrics.find("traj_error"), tb = b->metrics.find("traj_error");
        bool ha = ta != a->metrics.end(), hb = tb != b->metrics.end();
        if (ha != hb) return ha;
        if (ha && hb && ta->second != tb->second) return ta->second < tb->second;
        return a->run_id < b->run_id;
    });
    return sorted;
}

}  // namespace

AblationReport ablation_report(const std::vector<RunRecord>& runs) {
    if (runs.empty()) throw validation_error("ablation report needs at least one run");
    const std::vector<std::string> axes = {"compression", "fuser", "curriculum"};
    AblationReport report;
    report.csv = "axis,value,run_id,traj_error,loss,fvd,clipsim\n";

    for (const auto& axis : axes) {
        std::vector<const RunRecord*> rows;
        for (const auto& r : runs)
            if (r.tags.count(axis)) rows.push_back(&r);
        if (rows.empty()) continue;
        auto sorted = order_rows(rows);

        report.text += "== ablation: " + axis + " ==\n";
        report.text += pad(axis, 16) + pad("run_id", 24) + pad("traj_error", 12) +
                       pad("loss", 12) + pad("fvd", 8) + "clipsim\n";
        for (const RunRecord* r : sorted) {
            report.text += pad(r->tags.at(axis), 16) + pad(r->run_id, 24) +
                           pad(fmt_metric(*r, "traj_error"), 12) +
                           pad(fmt_metric(*r, "loss"), 12) + pad(fmt_metric(*r, "fvd"), 8) +
                           fmt_metric(*r, "clipsim") + "\n";
            report.csv += axis + "," + r->tags.at(axis) + "," + r->run_id + "," +
                          fmt_metric(*r, "traj_error") + "," + fmt_metric(*r, "loss") + "," +
                          fmt_metric(*r, "fvd") + "," + fmt_metric(*r, "clipsim") + "\n";
        }
        report.text += "\n";
    }

    std::vector<const RunRecord*> duration_rows;
    for (const auto& r : runs)
        if (r.tags.count("duration")) duration_rows.push_back(&r);
    if (!duration_rows.empty()) {
        std::sort(duration_rows.begin(), duration_rows.end(),
                  [](const RunRecord* a, const RunRecord* b) {
                      double da = std::stod(a->tags.at("duration"));
                      double db = std::stod(b->tags.at("duration"));
                      if (da != db) return da < db;
                      return a->run_id < b->run_id;
                  });
        report.text += "== duration vs trajectory error ==\n";
        report.text += pad("duration", 12) + pad("run_id", 24) + "traj_error\n";
        for (const RunRecord* r : duration_rows) {
            report.text += pad(r->tags.at("duration"), 12) + pad(r->run_id, 24) +
                           fmt_metric(*r, "traj_error") + "\n";
            report.csv += "duration," + r->tags.at("duration") + "," + r->run_id + "," +
                          fmt_metric(*r, "traj_error") + ",,,\n";
        }
    }
    return report;
}

void write_ablation_report(const std::string& dir, const std::vector<RunRecord>& runs) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    AblationReport report = ablation_report(runs);
    auto atomic_write = [](const fs::path& path, const std::string& text) {
        fs::path tmp = path;
        tmp += ".tmp";
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot write " + path.string());
        out << text;
        out.close();
        fs::rename(tmp, path);
    };
    atomic_write(fs::path(dir) / "ablation_report.txt", report.text);
    atomic_write(fs::path(dir) / "ablation_report.csv", report.csv);
}

}  // namespace trajvid
