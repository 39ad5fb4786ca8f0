#ifndef __TRAJVID_TRAINING_HPP__
#define __TRAJVID_TRAINING_HPP__

// Two-stage motion-conditioning curriculum: stage 1 conditions on dense
// ground-truth flow, stage 2 on sparse mask-centroid trajectories.  An
// optional all-parameter pretrain on unconditional denoising stands in for
// an externally pretrained backbone; afterwards only the trajectory
// extractor, the fusers, and the temporal blocks receive gradients.

#include <array>
#include <map>
#include <string>
#include <vector>

#include "trajvid/backbone.hpp"
#include "trajvid/corpus.hpp"
#include "trajvid/diffusion.hpp"
#include "trajvid/params.hpp"
#include "trajvid/tensor.hpp"
#include "trajvid/trajectory.hpp"

namespace trajvid {

struct Bucket {
    int64_t H = 0, W = 0;  // bucket resolution; H*W is the interval's lower edge
    int64_t num_frames = 0;
    int64_t batch_size = 1;
};

std::string bucket_label(const Bucket& b);

// pixel counts strictly descending implies num_frames non-decreasing
void validate_buckets(const std::vector<Bucket>& buckets);

// index of the bucket whose pixel interval [own H*W, next larger H*W)
// contains the clip's pixel count and whose num_frames fits; -1 = rejection
int64_t assign_bucket(const std::vector<Bucket>& buckets, int64_t H, int64_t W, int64_t L);

std::vector<Bucket> default_buckets();

// Each latent slice is unmasked independently; slice 0 at the elevated
// probability max(probability, 0.5).  Never returns a full unmask.
ConditionMask apply_unmask_strategy(int64_t l, double probability, uint64_t seed);

// per-frame centroid of a [L, H, W] binary mask; empty frames carry the
// previous centroid forward
std::vector<std::array<double, 2>> mask_centroid_track(const Tensor& mask);

// k ~ uniform{1..min(max_trajectories, #objects)} distinct objects; each
// trajectory is its mask's centroid track.  Throws when no mask is nonempty.
std::vector<Trajectory> sample_sparse_trajectories(const std::vector<Tensor>& masks,
                                                   int64_t max_trajectories, uint64_t seed);

struct TrainerConfig {
    BackboneConfig backbone;
    int64_t diffusion_T = 1000;
    double learning_rate = 2e-5;
    int64_t pretrain_epochs = 0;
    int64_t stage1_epochs = 2;
    int64_t stage2_epochs = 1;
    std::string curriculum_mode = "hybrid";  // hybrid | dense_only
    int64_t max_trajectories = 16;
    double sigma = 3.0;              // rasterization Gaussian std
    double unmask_probability = 0.25;
    double text_dropout = 0.1;       // null-text rate for the CFG branch
    uint64_t seed = 0;
    std::vector<Bucket> buckets;     // empty selects default_buckets()
    int64_t max_steps_per_stage = 0; // 0 = run the configured epochs
    std::string log_path;            // JSONL {step, stage, loss, lr, bucket}
    std::string checkpoint_path;     // written atomically at stage boundaries
};

enum class Curriculum { fresh, pretrained, stage1_done, stage2_done };
std::string to_string(Curriculum c);
Curriculum curriculum_from_string(const std::string& s);

struct ModelBundle {
    ParamMap params;      // backbone + trajectory extractor
    ParamMap vae_params;
    BackboneConfig backbone;
    int64_t diffusion_T = 1000;
};

ModelBundle load_model_bundle(const std::string& checkpoint_path);

class Trainer {
  public:
    Trainer(TrainerConfig cfg, ParamMap vae_params);

    // clip_ids empty = every clip in the corpus index
    void set_corpus(const std::string& corpus_dir, std::vector<std::string> clip_ids = {});

    // stage runners enforce the curriculum order; pretrain with zero epochs
    // still advances the state machine
    void run_pretrain();
    void run_stage1();
    void run_stage2();
    void run_all();  // honors curriculum_mode

    // single optimization steps (unit-level entry points)
    double pretrain_step(const RenderedClip& clip);
    double stage1_step(const RenderedClip& clip);
    double stage2_step(const RenderedClip& clip);

    Curriculum curriculum() const { return curriculum_; }
    int64_t global_step() const { return global_step_; }
    const TrainerConfig& config() const { return cfg_; }
    ParamMap& params() { return params_; }
    const ParamMap& vae_params() const { return vae_params_; }
    std::vector<std::string> stage_trainable_prefixes() const;

    void save_checkpoint(const std::string& path) const;
    static Trainer load_checkpoint(const std::string& path);

  private:
    struct ClipCache {
        Tensor z0;                   // [l, h, w, 4]
        Tensor dense_motion_latent;  // [l, h, w, 4]
        std::vector<int64_t> tokens;
        int64_t nframes = 0;
        std::string bucket;
    };

    Trainer(TrainerConfig cfg);  // checkpoint-resume path
    const ClipCache& cache_for(const RenderedClip& clip);
    double run_step(const RenderedClip& clip, const std::string& stage);
    void run_stage(const std::string& stage, int64_t epochs);
    void log_step(const std::string& stage, double loss, const std::string& bucket);

    TrainerConfig cfg_;
    DiffusionSchedule schedule_;
    ParamMap params_;
    ParamMap vae_params_;
    Adam adam_;
    Curriculum curriculum_ = Curriculum::fresh;
    int64_t global_step_ = 0;
    std::string corpus_dir_;
    std::vector<std::string> clip_ids_;
    std::map<std::string, ClipCache> cache_;
};

}  // namespace trajvid

#endif
