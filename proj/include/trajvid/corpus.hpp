#ifndef __TRAJVID_CORPUS_HPP__
#define __TRAJVID_CORPUS_HPP__

// Synthetic moving-shape corpus with exact ground-truth flow and masks.
// Flow convention: flow[i] holds the displacement from frame i-1 to frame i,
// stored at frame-(i-1) pixel positions; flow[0] is all zero.

#include <array>
#include <string>
#include <vector>

#include "trajvid/tensor.hpp"

namespace trajvid {

struct SceneObject {
    std::string shape;  // "square" or "circle"
    int64_t tx = 0, ty = 0;  // top-left corner at frame 0
    int64_t size = 8;
    int64_t vx = 0, vy = 0;  // per-frame displacement, screen space
    std::array<double, 3> color = {0.9, 0.2, 0.2};
    std::string color_name = "red";
};

struct CameraMotion {
    std::string kind = "none";  // none | pan | zoom
    int64_t u = 0, v = 0;       // pan displacement per frame
    double zoom_rate = 0.0;     // radial flow coefficient
};

struct ClipSpec {
    std::string clip_id;
    int64_t L = 16, H = 64, W = 64;
    std::vector<SceneObject> objects;
    CameraMotion camera;
    std::string category = "clean";
    std::string caption;
    std::array<double, 3> background = {0.05, 0.06, 0.09};
    double texture_contrast = 0.04;  // checker amplitude; 0 disables
};

struct RenderedClip {
    std::string clip_id;
    std::string category;
    std::string caption;
    Tensor frames;              // [L, H, W, 3] in [0, 1]
    Tensor flow;                // [L, H, W, 2]
    std::vector<Tensor> masks;  // per object, [L, H, W] in {0, 1}
    std::vector<SceneObject> objects;
    CameraMotion camera;
};

RenderedClip render_clip(const ClipSpec& spec);

// per-frame centroid (pixel-index mean) of one object
std::vector<std::array<double, 2>> object_centroids(const SceneObject& obj, int64_t L);

struct CorpusConfig {
    int64_t count = 50;
    int64_t L = 16, H = 64, W = 64;
    uint64_t seed = 0;
    int64_t max_objects = 2;
    std::vector<std::string> shapes = {"square", "circle"};
    // category fractions; remainder is "clean"
    double frac_slow = 0.0;
    double frac_dull = 0.0;
    double frac_pan_good = 0.0;
    double frac_pan_bad = 0.0;
    double frac_zoom = 0.0;
};

ClipSpec make_clip_spec(const CorpusConfig& cfg, int64_t index);

// clip directory layout: <corpus>/<clip_id>/data.tvar
void write_clip(const std::string& corpus_dir, const RenderedClip& clip);
RenderedClip read_clip(const std::string& clip_dir);

struct CorpusIndexEntry {
    std::string clip_id;
    std::string category;
    std::string caption;
    int64_t L = 0, H = 0, W = 0;
};

void generate_corpus(const std::string& corpus_dir, const CorpusConfig& cfg);
std::vector<CorpusIndexEntry> read_corpus_index(const std::string& corpus_dir);

}  // namespace trajvid

#endif
