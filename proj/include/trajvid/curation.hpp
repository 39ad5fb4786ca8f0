#ifndef __TRAJVID_CURATION_HPP__
#define __TRAJVID_CURATION_HPP__

// Clip scoring and filtering: validity (aesthetic + flow), resolution,
// camera motion (zoom + dominant pan angle), and seeded retention.

#include <map>
#include <string>
#include <vector>

#include "trajvid/corpus.hpp"
#include "trajvid/tensor.hpp"

namespace trajvid {

struct CurationConfig {
    double aesthetic_threshold = 5.5;  // strict: score must exceed
    double flow_threshold = 3.0;       // strict: score must exceed
    int64_t min_short_edge = 720;
    double zoom_threshold = 0.4;  // net divergence fraction above which a clip is a zoom
    bool retention_enabled = true;
    uint64_t seed = 0;
};

// stub in [0, 10]: saturation peak plus luminance range of the middle frame
double aesthetic_score(const Tensor& frames);

// mean flow magnitude over frames 1..L-1; restricted to the union of the
// object masks at the flow's source frame when masks are present
double flow_score(const Tensor& flow, const std::vector<Tensor>& masks);

struct CameraDiagnostics {
    bool has_moving_background = false;
    int64_t moving_pixels = 0;
    double outward_fraction = 0.0;   // raw share of moving bg vectors pointing outward
    double zoom_fraction = 0.0;      // |outward - inward| / moving; ~0 for pans, ~1 for zooms
    double dominant_angle_deg = 0.0; // circular median over moving bg vectors
};

CameraDiagnostics camera_diagnostics(const Tensor& flow, const std::vector<Tensor>& masks);

// circular median in degrees: the sample minimizing total wrap-around distance
double circular_median_deg(std::vector<double> angles_deg);

// accepted pan bands: [0,20], [160,200], [340,360] degrees, inclusive
bool angle_in_valid_band(double deg);

bool validity_filter(double aesthetic, double flow, const CurationConfig& cfg);
bool resolution_filter(int64_t H, int64_t W, const CurationConfig& cfg);

struct CameraCheck {
    bool pass = true;
    std::string reason;
};
CameraCheck camera_motion_filter(const CameraDiagnostics& diag, const CurationConfig& cfg);

double retention_probability(double flow_score_value);
bool retention_filter(double flow_score_value, const std::string& clip_id, uint64_t seed);

class PromptRefiner {
  public:
    virtual ~PromptRefiner() = default;
    virtual std::string refine(const std::string& caption) const = 0;
};

class EchoPromptRefiner : public PromptRefiner {
  public:
    std::string refine(const std::string& caption) const override { return caption; }
};

struct ClipDiagnostics {
    std::string clip_id;
    std::string category;
    int64_t H = 0, W = 0;
    double aesthetic = 0.0;
    double flow = 0.0;
    CameraDiagnostics camera;
};

struct Rejection {
    std::string clip_id;
    std::string filter;  // validity | resolution | camera | retention
    std::string reason;
};

struct ManifestResult {
    std::vector<std::string> kept;  // clip ids, ordered
    std::vector<Rejection> rejections;
    std::map<std::string, int64_t> counts;  // total, kept, per-filter rejections
    std::vector<ClipDiagnostics> diagnostics;
};

// applies validity -> resolution -> camera -> retention, writes
// manifest.jsonl (kept clips), rejections.jsonl, and summary.json under out_dir
ManifestResult build_manifest(const std::string& corpus_dir, const std::string& out_dir,
                              const CurationConfig& cfg,
                              const PromptRefiner* refiner = nullptr);

std::vector<std::string> read_manifest_clip_ids(const std::string& manifest_path);

}  // namespace trajvid

#endif
