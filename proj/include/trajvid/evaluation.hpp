#ifndef __TRAJVID_EVALUATION_HPP__
#define __TRAJVID_EVALUATION_HPP__

// Motion-controllability and reconstruction metrics: trajectory error with a
// centroid tracker for synthetic bright-object scenes, PSNR/SSIM, and
// ablation report generation from persisted run records.

#include <array>
#include <map>
#include <string>
#include <vector>

#include "trajvid/tensor.hpp"
#include "trajvid/trajectory.hpp"

namespace trajvid {

struct TrackResult {
    std::vector<std::array<double, 2>> tracked;  // (x, y) per frame
    std::vector<double> confidence;              // in [0, 1]
};

// mean over frames of |dx| + |dy|; throws on length mismatch
double trajectory_error(const Trajectory& predefined, const TrackResult& tracked);

// Intensity-weighted centroid of pixels whose mean channel value exceeds
// background_level.  Confidence = foreground share of total intensity mass.
// Empty-foreground frames carry the previous centroid (frame center if none).
TrackResult track_centroid(const Tensor& video, double background_level);

// 10*log10(1/MSE) for values in [0,1]; identical inputs give +infinity
double psnr(const Tensor& a, const Tensor& b);

// Standard windowed SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2, averaged over valid windows, channels, and frames.
double ssim(const Tensor& a, const Tensor& b);

struct RunRecord {
    std::string run_id;
    std::string config_hash;
    std::string provenance;  // free-form builder/version string
    std::map<std::string, double> metrics;      // e.g. traj_error, loss
    std::map<std::string, std::string> tags;    // e.g. fuser, curriculum, duration
};

void save_run_record(const std::string& path, const RunRecord& record);
RunRecord load_run_record(const std::string& path);
// every *.json run record under dir, ordered by filename; JSON files of
// other kinds (config snapshots) are skipped
std::vector<RunRecord> load_run_records(const std::string& dir);

std::string config_hash_hex(const std::string& serialized_config);

struct AblationReport {
    std::string text;  // aligned plain-text tables
    std::string csv;   // delimited rows: axis,value,run_id,traj_error,loss,fvd,clipsim
};

// One table per ablation axis (compression, fuser, curriculum), rows ordered
// by trajectory error ascending, plus a duration-vs-error series.  FVD and
// CLIPSIM columns are reserved for externally merged values.
AblationReport ablation_report(const std::vector<RunRecord>& runs);

void write_ablation_report(const std::string& dir, const std::vector<RunRecord>& runs);

}  // namespace trajvid

#endif
