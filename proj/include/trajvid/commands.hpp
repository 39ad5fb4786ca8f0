#ifndef __TRAJVID_COMMANDS_HPP__
#define __TRAJVID_COMMANDS_HPP__

// Batch command implementations behind the CLI: each validates its inputs
// up front, writes a resolved-config snapshot into its output directory,
// and confines all writes to that directory.

#include <string>
#include <vector>

#include "trajvid/corpus.hpp"
#include "trajvid/curation.hpp"
#include "trajvid/motion_vae.hpp"
#include "trajvid/training.hpp"

namespace trajvid {

// relative paths resolve under $TRAJVID_OUTPUT_ROOT when it is set
std::string resolve_output_path(const std::string& path);

struct GenCorpusOptions {
    std::string out_dir;
    CorpusConfig corpus;
};
void cmd_gen_corpus(const GenCorpusOptions& opt);

struct CurateOptions {
    std::string corpus_dir;
    std::string out_dir;
    CurationConfig curation;
};
void cmd_curate(const CurateOptions& opt);

struct TrainVaeOptions {
    std::string corpus_dir;
    std::string out_dir;            // writes vae.tvar + resolved_config.json
    VaeTrainConfig train;
    int64_t max_clips = 0;          // 0 = all
    bool include_flow = true;       // also train on flow visualizations
    bool include_frames = true;
};
void cmd_train_vae(const TrainVaeOptions& opt);

struct TrainOptions {
    std::string corpus_dir;
    std::string manifest_path;      // optional: restrict to curated clips
    std::string vae_checkpoint;
    std::string out_dir;            // writes model.tvar + training_log.jsonl
    TrainerConfig trainer;
    std::string stages = "all";     // all | pretrain | stage1 | stage2
    std::string resume_checkpoint;  // continue from a trainer checkpoint
};
void cmd_train(const TrainOptions& opt);

struct SampleOptions {
    std::string checkpoint;         // trainer checkpoint
    std::string out_dir;
    std::string caption;
    std::string trajectory_path;    // empty = unconditional motion
    std::string init_clip_dir;      // optional first-frame conditioning source
    int64_t frames = 16, height = 64, width = 64;
    int64_t steps = 30;
    double guidance_scale = 7.0;
    double sigma = 3.0;
    uint64_t seed = 0;
    bool write_frames = true;       // PNG frames next to the archive
};
void cmd_sample(const SampleOptions& opt);

struct EvalOptions {
    std::string video_path;         // sample.tvar or clip data.tvar
    std::string out_dir;
    std::string trajectory_path;    // enables trajectory error
    std::string reference_path;     // enables psnr/ssim against another video
    double background_level = 0.5;
    std::string run_id = "run";
    std::vector<std::pair<std::string, std::string>> tags;
};
void cmd_eval(const EvalOptions& opt);

struct VisualizeOptions {
    std::string out_dir;
    std::string trajectory_path;    // rasterize these trajectories...
    std::string clip_dir;           // ...or visualize a clip's stored flow
    int64_t frames = 16, height = 64, width = 64;
    double sigma = 3.0;
};
void cmd_visualize(const VisualizeOptions& opt);

struct ReportOptions {
    std::string records_dir;
    std::string out_dir;
};
void cmd_report(const ReportOptions& opt);

// reads a video tensor back from a sample or clip archive
Tensor load_video_archive(const std::string& path);

}  // namespace trajvid

#endif
