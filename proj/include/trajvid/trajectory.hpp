#ifndef __TRAJVID_TRAJECTORY_HPP__
#define __TRAJVID_TRAJECTORY_HPP__

// Trajectory extraction pipeline: point tracks -> per-frame displacement maps
// -> flow-colored RGB volumes -> VAE latent -> multi-level motion patches.

#include <array>
#include <string>
#include <vector>

#include "trajvid/params.hpp"
#include "trajvid/tensor.hpp"

namespace trajvid {

struct Trajectory {
    std::vector<std::array<double, 2>> points;  // (x, y) per frame
    std::string object_id;
};

struct TrajectoryMap {
    Tensor data;  // [L, H, W, 2]; channel 0 = u (horizontal), 1 = v (vertical)
    double sigma = 3.0;
};

struct MotionPatches {
    std::vector<Tensor> levels;  // each [l, s, d']
    int patch_size = 2;
};

// u_i = x_{i+1} - x_i, v_i = y_{i+1} - y_i; final entry (0, 0)
std::vector<std::array<double, 2>> trajectory_offsets(const Trajectory& traj);

void check_trajectory(const Trajectory& traj, int64_t L, int64_t H, int64_t W);

// Splats offset (u_{i-1}, v_{i-1}) at the rounded frame-(i-1) position into
// frame i, then filters each frame-channel slice with a normalized Gaussian
// (radius ceil(3*sigma), zero padding).  Frame 0 is forced to zero.
TrajectoryMap rasterize_trajectories(const std::vector<Trajectory>& trajs, int64_t L, int64_t H,
                                     int64_t W, double sigma = 3.0);

// Wraps an existing dense displacement field [L, H, W, 2] (frame 0 zeroed).
TrajectoryMap trajectory_map_from_flow(const Tensor& flow, double sigma = 3.0);

// Color-wheel flow rendering; zero flow maps to white.  max_magnitude <= 0
// means per-map normalization (floored at 1e-6).
Tensor flow_to_rgb(const TrajectoryMap& map, double max_magnitude = 0.0);

// Reference color wheel rows (55 x RGB in [0,1]).
const std::vector<std::array<double, 3>>& flow_color_wheel();

// Separable Gaussian filter over each [H, W] slice of a [L, H, W, C] volume.
Tensor gaussian_filter_slices(const Tensor& volume, double sigma);

// Multi-level motion features from an already-encoded motion latent
// [l, h, w, 4].  Parameters: te.embed.{w,b} and te.conv{i}.{w,b}, i = 1..N.
std::vector<ad::Var> motion_patch_levels(ParamBind& p, const ad::Var& motion_latent,
                                         int patch_size, int num_levels);

void extractor_init(ParamMap& params, int64_t d_prime, int patch_size, int num_levels,
                    uint64_t seed);

// Full pipeline: flow_to_rgb -> vae_encode (posterior mean) -> patchify ->
// embed -> stacked residual convs.  Returns levels f_1..f_num_levels.
MotionPatches extract_motion_patches(const TrajectoryMap& map, const ParamMap& vae_params,
                                     const ParamMap& extractor_params, int patch_size,
                                     int num_levels);

// Trajectory file I/O: one record per line, {"object_id": ..., "points": [[x,y],...]}
std::vector<Trajectory> load_trajectories(const std::string& path);
void save_trajectories(const std::string& path, const std::vector<Trajectory>& trajs);

// Linear time-resampling of control points onto new_len frames.
Trajectory resample_trajectory(const Trajectory& traj, int64_t new_len);

}  // namespace trajvid

#endif
