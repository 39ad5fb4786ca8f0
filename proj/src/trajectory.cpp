#include "trajvid/trajectory.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "trajvid/errors.hpp"
#include "trajvid/motion_vae.hpp"

namespace trajvid {

std::vector<std::array<double, 2>> trajectory_offsets(const Trajectory& traj) {
    if (traj.points.empty()) throw validation_error("trajectory has no points");
    const size_t L = traj.points.size();
    std::vector<std::array<double, 2>> offsets(L, {0.0, 0.0});
    for (size_t i = 0; i + 1 < L; ++i) {
        offsets[i][0] = traj.points[i + 1][0] - traj.points[i][0];
        offsets[i][1] = traj.points[i + 1][1] - traj.points[i][1];
    }
    return offsets;
}

void check_trajectory(const Trajectory& traj, int64_t L, int64_t H, int64_t W) {
    if (static_cast<int64_t>(traj.points.size()) != L)
        throw validation_error("trajectory '" + traj.object_id + "' has " +
                               std::to_string(traj.points.size()) + " points, expected " +
                               std::to_string(L) + " (one per frame)");
    for (size_t i = 0; i < traj.points.size(); ++i) {
        const double x = traj.points[i][0], y = traj.points[i][1];
        if (!std::isfinite(x) || !std::isfinite(y))
            throw validation_error("trajectory '" + traj.object_id + "' has a non-finite point");
        if (x < 0.0 || x >= static_cast<double>(W) || y < 0.0 || y >= static_cast<double>(H))
            throw validation_error("trajectory '" + traj.object_id + "' point " +
                                   std::to_string(i) + " (" + std::to_string(x) + ", " +
                                   std::to_string(y) + ") outside " + std::to_string(W) + "x" +
                                   std::to_string(H));
    }
}

Tensor gaussian_filter_slices(const Tensor& volume, double sigma) {
    if (volume.ndim() != 4)
        throw validation_error("gaussian filter expects [frames, h, w, ch], got " +
                               shape_str(volume.shape));
    if (sigma <= 0.0) throw validation_error("gaussian sigma must be positive");
    const int64_t L = volume.shape[0], H = volume.shape[1], W = volume.shape[2],
                  C = volume.shape[3];
    const int64_t r = static_cast<int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * r + 1));
    double ksum = 0.0;
    for (int64_t i = -r; i <= r; ++i) {
        k[static_cast<size_t>(i + r)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += k[static_cast<size_t>(i + r)];
    }
    for (double& v : k) v /= ksum;
    // truncated 2D Gaussian separates into two normalized 1D passes
    Tensor hpass(volume.shape);
    for (int64_t l = 0; l < L; ++l)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                for (int64_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (int64_t t = -r; t <= r; ++t) {
                        const int64_t xs = x + t;
                        if (xs < 0 || xs >= W) continue;
                        acc += k[static_cast<size_t>(t + r)] *
                               volume.data[((l * H + y) * W + xs) * C + c];
                    }
                    hpass.data[((l * H + y) * W + x) * C + c] = acc;
                }
    Tensor out(volume.shape);
    for (int64_t l = 0; l < L; ++l)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                for (int64_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (int64_t t = -r; t <= r; ++t) {
                        const int64_t ys = y + t;
                        if (ys < 0 || ys >= H) continue;
                        acc += k[static_cast<size_t>(t + r)] *
                               hpass.data[((l * H + ys) * W + x) * C + c];
                    }
                    out.data[((l * H + y) * W + x) * C + c] = acc;
                }
    return out;
}

TrajectoryMap rasterize_trajectories(const std::vector<Trajectory>& trajs, int64_t L, int64_t H,
                                     int64_t W, double sigma) {
    if (L < 1 || H < 1 || W < 1)
        throw validation_error("rasterize: dims must be positive");
    if (sigma <= 0.0) throw validation_error("rasterize: sigma must be positive");
    Tensor splat({L, H, W, 2});
    for (const auto& traj : trajs) {
        check_trajectory(traj, L, H, W);
        const auto offsets = trajectory_offsets(traj);
        for (int64_t i = 1; i < L; ++i) {
            const double u = offsets[static_cast<size_t>(i - 1)][0];
            const double v = offsets[static_cast<size_t>(i - 1)][1];
            const int64_t px = std::llround(traj.points[static_cast<size_t>(i - 1)][0]);
            const int64_t py = std::llround(traj.points[static_cast<size_t>(i - 1)][1]);
            const int64_t cx = std::min(std::max<int64_t>(px, 0), W - 1);
            const int64_t cy = std::min(std::max<int64_t>(py, 0), H - 1);
            splat.data[((i * H + cy) * W + cx) * 2 + 0] += u;
            splat.data[((i * H + cy) * W + cx) * 2 + 1] += v;
        }
    }
    TrajectoryMap map;
    map.sigma = sigma;
    map.data = gaussian_filter_slices(splat, sigma);
    // frame 0 carries no displacement by convention
    const int64_t frame = H * W * 2;
    std::fill(map.data.data.begin(), map.data.data.begin() + frame, 0.0);
    return map;
}

TrajectoryMap trajectory_map_from_flow(const Tensor& flow, double sigma) {
    if (flow.ndim() != 4 || flow.shape[3] != 2)
        throw validation_error("flow field must be [frames, h, w, 2], got " +
                               shape_str(flow.shape));
    require_finite(flow, "flow field");
    TrajectoryMap map;
    map.sigma = sigma;
    map.data = flow;
    const int64_t frame = flow.shape[1] * flow.shape[2] * 2;
    std::fill(map.data.data.begin(), map.data.data.begin() + frame, 0.0);
    return map;
}

const std::vector<std::array<double, 3>>& flow_color_wheel() {
    static const std::vector<std::array<double, 3>> wheel = [] {
        const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
        std::vector<std::array<double, 3>> w;
        w.reserve(RY + YG + GC + CB + BM + MR);
        for (int i = 0; i < RY; ++i)
            w.push_back({255.0, std::floor(255.0 * i / RY), 0.0});
        for (int i = 0; i < YG; ++i)
            w.push_back({255.0 - std::floor(255.0 * i / YG), 255.0, 0.0});
        for (int i = 0; i < GC; ++i)
            w.push_back({0.0, 255.0, std::floor(255.0 * i / GC)});
        for (int i = 0; i < CB; ++i)
            w.push_back({0.0, 255.0 - std::floor(255.0 * i / CB), 255.0});
        for (int i = 0; i < BM; ++i)
            w.push_back({std::floor(255.0 * i / BM), 0.0, 255.0});
        for (int i = 0; i < MR; ++i)
            w.push_back({255.0, 0.0, 255.0 - std::floor(255.0 * i / MR)});
        for (auto& row : w)
            for (double& v : row) v /= 255.0;
        return w;
    }();
    return wheel;
}

Tensor flow_to_rgb(const TrajectoryMap& map, double max_magnitude) {
    const Tensor& flow = map.data;
    if (flow.ndim() != 4 || flow.shape[3] != 2)
        throw validation_error("flow_to_rgb expects [frames, h, w, 2], got " +
                               shape_str(flow.shape));
    require_finite(flow, "flow_to_rgb input");
    const int64_t n = flow.numel() / 2;
    double maxrad = max_magnitude;
    if (maxrad <= 0.0) {
        for (int64_t i = 0; i < n; ++i) {
            const double u = flow.data[i * 2], v = flow.data[i * 2 + 1];
            maxrad = std::max(maxrad, std::sqrt(u * u + v * v));
        }
    }
    maxrad = std::max(maxrad, 1e-6);
    const auto& wheel = flow_color_wheel();
    const int ncols = static_cast<int>(wheel.size());
    Tensor out({flow.shape[0], flow.shape[1], flow.shape[2], 3});
    for (int64_t i = 0; i < n; ++i) {
        const double u = flow.data[i * 2] / maxrad;
        const double v = flow.data[i * 2 + 1] / maxrad;
        const double rad = std::sqrt(u * u + v * v);
        const double a = std::atan2(-v, -u) / 3.14159265358979323846;
        const double fk = (a + 1.0) / 2.0 * (ncols - 1);
        const int k0 = static_cast<int>(std::floor(fk)) % ncols;
        const int k1 = (k0 + 1) % ncols;
        const double f = fk - std::floor(fk);
        for (int c = 0; c < 3; ++c) {
            double col = (1.0 - f) * wheel[static_cast<size_t>(k0)][static_cast<size_t>(c)] +
                         f * wheel[static_cast<size_t>(k1)][static_cast<size_t>(c)];
            if (rad <= 1.0)
                col = 1.0 - rad * (1.0 - col);  // desaturate toward white at low magnitude
            else
                col *= 0.75;
            out.data[i * 3 + c] = col;
        }
    }
    return out;
}

void extractor_init(ParamMap& params, int64_t d_prime, int patch_size, int num_levels,
                    uint64_t seed) {
    if (num_levels < 1) throw validation_error("extractor needs at least one level");
    Rng rng(Rng::derive(seed, Rng::hash_str("extractor_init")));
    const int64_t in_features = static_cast<int64_t>(patch_size) * patch_size * kLatentChannels;
    params["te.embed.w"] = orthogonal(d_prime, in_features, rng);
    params["te.embed.b"] = Tensor::zeros({d_prime});
    for (int i = 1; i <= num_levels; ++i) {
        Tensor w = orthogonal(d_prime, 3 * d_prime, rng);
        for (double& v : w.data) v *= 0.1;  // keep residual refinements small at init
        w.shape = {d_prime, 3, d_prime};
        params["te.conv" + std::to_string(i) + ".w"] = w;
        params["te.conv" + std::to_string(i) + ".b"] = Tensor::zeros({d_prime});
    }
}

std::vector<ad::Var> motion_patch_levels(ParamBind& p, const ad::Var& motion_latent,
                                         int patch_size, int num_levels) {
    if (num_levels < 1) throw validation_error("motion patches need at least one level");
    auto tokens = ad::patchify_op(motion_latent, patch_size);
    auto f = ad::linear(tokens, p["te.embed.w"], p["te.embed.b"]);
    std::vector<ad::Var> levels;
    levels.reserve(static_cast<size_t>(num_levels));
    for (int i = 1; i <= num_levels; ++i) {
        const std::string name = "te.conv" + std::to_string(i);
        f = ad::add(ad::conv1d_rows(f, p[name + ".w"], p[name + ".b"]), f);
        levels.push_back(f);
    }
    return levels;
}

MotionPatches extract_motion_patches(const TrajectoryMap& map, const ParamMap& vae_params,
                                     const ParamMap& extractor_params, int patch_size,
                                     int num_levels) {
    Tensor rgb = flow_to_rgb(map);
    Tensor latent = vae_encode(rgb, vae_params, /*sample=*/false);
    if (latent.shape[1] % patch_size != 0 || latent.shape[2] % patch_size != 0)
        throw validation_error("patch size " + std::to_string(patch_size) +
                               " does not divide latent dims " + shape_str(latent.shape));
    ParamMap local = extractor_params;
    ParamBind p(local, {});
    auto levels = motion_patch_levels(p, ad::constant(latent), patch_size, num_levels);
    MotionPatches out;
    out.patch_size = patch_size;
    for (const auto& lv : levels) out.levels.push_back(lv->val);
    return out;
}

std::vector<Trajectory> load_trajectories(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open trajectory file '" + path + "'");
    std::vector<Trajectory> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("points"))
            throw validation_error("trajectory file '" + path + "' line " +
                                   std::to_string(lineno) + " is not a valid record");
        Trajectory t;
        t.object_id = j.value("object_id", "obj" + std::to_string(out.size()));
        for (const auto& pt : j["points"]) {
            if (!pt.is_array() || pt.size() != 2)
                throw validation_error("trajectory file '" + path + "' line " +
                                       std::to_string(lineno) + ": points must be [x, y] pairs");
            t.points.push_back({pt[0].get<double>(), pt[1].get<double>()});
        }
        out.push_back(std::move(t));
    }
    return out;
}

void save_trajectories(const std::string& path, const std::vector<Trajectory>& trajs) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot open '" + path + "' for writing");
    for (const auto& t : trajs) {
        nlohmann::json j;
        j["object_id"] = t.object_id;
        auto pts = nlohmann::json::array();
        for (const auto& p : t.points) pts.push_back({p[0], p[1]});
        j["points"] = pts;
        os << j.dump() << "\n";
    }
}

Trajectory resample_trajectory(const Trajectory& traj, int64_t new_len) {
    if (traj.points.size() < 2 || new_len < 2)
        throw validation_error("resampling needs at least two points");
    Trajectory out;
    out.object_id = traj.object_id;
    const int64_t n = static_cast<int64_t>(traj.points.size());
    for (int64_t i = 0; i < new_len; ++i) {
        const double pos = static_cast<double>(i) * (n - 1) / static_cast<double>(new_len - 1);
        const int64_t lo = std::min<int64_t>(static_cast<int64_t>(pos), n - 2);
        const double w = pos - static_cast<double>(lo);
        out.points.push_back(
            {(1.0 - w) * traj.points[static_cast<size_t>(lo)][0] +
                 w * traj.points[static_cast<size_t>(lo + 1)][0],
             (1.0 - w) * traj.points[static_cast<size_t>(lo)][1] +
                 w * traj.points[static_cast<size_t>(lo + 1)][1]});
    }
    return out;
}

}  // namespace trajvid
