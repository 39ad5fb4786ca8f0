#include <cstdio>
#include <exception>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "trajvid/commands.hpp"
#include "trajvid/errors.hpp"
#include "trajvid/fuser.hpp"

namespace {

using namespace trajvid;

void add_gen_corpus(CLI::App& app, GenCorpusOptions& opt) {
    CLI::App* sub = app.add_subcommand("gen-corpus", "generate a synthetic clip corpus");
    sub->add_option("-o,--out", opt.out_dir, "output corpus directory")->required();
    sub->add_option("-n,--count", opt.corpus.count, "number of clips");
    sub->add_option("--frames", opt.corpus.L, "frames per clip");
    sub->add_option("--height", opt.corpus.H, "frame height");
    sub->add_option("--width", opt.corpus.W, "frame width");
    sub->add_option("--max-objects", opt.corpus.max_objects, "objects per clip upper bound");
    sub->add_option("--seed", opt.corpus.seed, "corpus seed");
    sub->add_option("--frac-slow", opt.corpus.frac_slow, "fraction with sub-threshold motion");
    sub->add_option("--frac-dull", opt.corpus.frac_dull, "fraction with low-contrast palette");
    sub->add_option("--frac-pan-good", opt.corpus.frac_pan_good,
                    "fraction with near-horizontal camera pan");
    sub->add_option("--frac-pan-bad", opt.corpus.frac_pan_bad,
                    "fraction with steep-angle camera pan");
    sub->add_option("--frac-zoom", opt.corpus.frac_zoom, "fraction with camera zoom");
    sub->callback([&opt]() { cmd_gen_corpus(opt); });
}

void add_curate(CLI::App& app, CurateOptions& opt) {
    CLI::App* sub = app.add_subcommand("curate", "filter a corpus into a training manifest");
    sub->add_option("-c,--corpus", opt.corpus_dir, "corpus directory")->required();
    sub->add_option("-o,--out", opt.out_dir, "output directory for the manifest")->required();
    sub->add_option("--aesthetic-threshold", opt.curation.aesthetic_threshold,
                    "minimum aesthetic score");
    sub->add_option("--flow-threshold", opt.curation.flow_threshold, "minimum flow score");
    sub->add_option("--min-short-edge", opt.curation.min_short_edge,
                    "minimum short-edge resolution");
    sub->add_option("--zoom-threshold", opt.curation.zoom_threshold,
                    "net divergence fraction above which a clip is rejected");
    sub->add_flag("--retention,!--no-retention", opt.curation.retention_enabled,
                  "seeded retention filter (--no-retention disables it)")
        ->default_val(true);
    sub->add_option("--seed", opt.curation.seed, "retention seed");
    sub->callback([&opt]() { cmd_curate(opt); });
}

void add_train_vae(CLI::App& app, TrainVaeOptions& opt) {
    CLI::App* sub = app.add_subcommand("train-vae", "train the video autoencoder");
    sub->add_option("-c,--corpus", opt.corpus_dir, "corpus directory")->required();
    sub->add_option("-o,--out", opt.out_dir, "output directory")->required();
    sub->add_option("--steps", opt.train.steps, "optimizer steps");
    sub->add_option("--lr", opt.train.learning_rate, "learning rate");
    sub->add_option("--max-frames", opt.train.max_frames, "longest training crop");
    sub->add_option("--kl-weight", opt.train.kl_weight, "KL regularizer weight");
    sub->add_option("--seed", opt.train.seed, "training seed");
    sub->add_option("--eval-every", opt.train.eval_every,
                    "steps between early-stop reconstruction checks (0 = off)");
    sub->add_option("--target-psnr", opt.train.target_psnr, "early-stop PSNR target");
    sub->add_option("--max-clips", opt.max_clips, "cap on corpus clips (0 = all)");
    sub->add_flag("--frames-only", [&opt](int64_t) { opt.include_flow = false; },
                  "train on rendered frames only");
    sub->add_flag("--flow-only", [&opt](int64_t) { opt.include_frames = false; },
                  "train on flow visualizations only");
    sub->callback([&opt]() { cmd_train_vae(opt); });
}

void add_train(CLI::App& app, TrainOptions& opt) {
    CLI::App* sub = app.add_subcommand("train", "run the denoiser training curriculum");
    sub->add_option("-c,--corpus", opt.corpus_dir, "corpus directory")->required();
    sub->add_option("-o,--out", opt.out_dir, "output directory")->required();
    sub->add_option("--manifest", opt.manifest_path, "curated manifest (JSONL)");
    sub->add_option("--vae", opt.vae_checkpoint, "VAE checkpoint path");
    sub->add_option("--resume", opt.resume_checkpoint, "trainer checkpoint to continue from");
    sub->add_option("--stages", opt.stages, "all | pretrain | stage1 | stage2");
    sub->add_option("--lr", opt.trainer.learning_rate, "learning rate");
    sub->add_option("--pretrain-epochs", opt.trainer.pretrain_epochs,
                    "all-parameter epochs before the curriculum");
    sub->add_option("--stage1-epochs", opt.trainer.stage1_epochs, "dense-flow epochs");
    sub->add_option("--stage2-epochs", opt.trainer.stage2_epochs, "sparse-trajectory epochs");
    sub->add_option("--curriculum", opt.trainer.curriculum_mode, "hybrid | dense_only");
    sub->add_option("--max-trajectories", opt.trainer.max_trajectories,
                    "sparse trajectory cap per sample");
    sub->add_option("--sigma", opt.trainer.sigma, "rasterization Gaussian std");
    sub->add_option("--unmask-probability", opt.trainer.unmask_probability,
                    "chance a latent slice escapes noising");
    sub->add_option("--text-dropout", opt.trainer.text_dropout, "null-text rate");
    sub->add_option("--seed", opt.trainer.seed, "training seed");
    sub->add_option("--max-steps-per-stage", opt.trainer.max_steps_per_stage,
                    "step cap per stage (0 = full epochs)");
    sub->add_option("--diffusion-T", opt.trainer.diffusion_T, "diffusion timesteps");
    sub->add_option("--dim", opt.trainer.backbone.d, "token width");
    sub->add_option("--heads", opt.trainer.backbone.heads, "attention heads");
    sub->add_option("--blocks", opt.trainer.backbone.n_blocks, "transformer blocks (even)");
    sub->add_option("--patch-size", opt.trainer.backbone.patch_size, "spatial patch edge");
    sub->add_option_function<std::vector<std::string>>(
        "--bucket",
        [&opt](const std::vector<std::string>& specs) {
            opt.trainer.buckets.clear();
            for (const auto& s : specs) opt.trainer.buckets.push_back(parse_bucket_spec(s));
        },
        "training bucket as HxWxF or HxWxFxB (repeatable, replaces the defaults)");
    sub->add_option_function<std::string>(
           "--fuser",
           [&opt](const std::string& s) {
               opt.trainer.backbone.fuser_kind = fuser_kind_from_string(s);
           },
           "extra_channel | adaptive_norm | cross_attention")
        ->default_str("adaptive_norm");
    sub->add_option_function<std::string>(
           "--placement",
           [&opt](const std::string& s) {
               opt.trainer.backbone.placement = fuser_placement_from_string(s);
           },
           "temporal | spatial | both")
        ->default_str("temporal");
    sub->callback([&opt]() { cmd_train(opt); });
}

void add_sample(CLI::App& app, SampleOptions& opt) {
    CLI::App* sub = app.add_subcommand("sample", "generate a video from a checkpoint");
    sub->add_option("--checkpoint", opt.checkpoint, "trainer checkpoint")->required();
    sub->add_option("-o,--out", opt.out_dir, "output directory")->required();
    sub->add_option("--caption", opt.caption, "text prompt");
    sub->add_option("--trajectories", opt.trajectory_path, "trajectory JSONL for motion control");
    sub->add_option("--init-clip", opt.init_clip_dir,
                    "corpus clip whose first frames condition the video");
    sub->add_option("--frames", opt.frames, "output frames");
    sub->add_option("--height", opt.height, "output height");
    sub->add_option("--width", opt.width, "output width");
    sub->add_option("--steps", opt.steps, "sampler steps");
    sub->add_option("--guidance-scale", opt.guidance_scale, "classifier-free guidance scale");
    sub->add_option("--sigma", opt.sigma, "rasterization Gaussian std");
    sub->add_option("--seed", opt.seed, "sampling seed");
    sub->add_flag("--png,!--no-png", opt.write_frames, "PNG frame export (--no-png skips it)")
        ->default_val(true);
    sub->callback([&opt]() { cmd_sample(opt); });
}

void add_eval(CLI::App& app, EvalOptions& opt) {
    CLI::App* sub = app.add_subcommand("eval", "score a generated video");
    sub->add_option("--video", opt.video_path, "sample.tvar or clip data.tvar")->required();
    sub->add_option("-o,--out", opt.out_dir, "run-record output directory")->required();
    sub->add_option("--trajectories", opt.trajectory_path,
                    "intended trajectory JSONL (enables trajectory error)");
    sub->add_option("--reference", opt.reference_path,
                    "reference video (enables PSNR/SSIM)");
    sub->add_option("--background-level", opt.background_level,
                    "intensity below which pixels count as background");
    sub->add_option("--run-id", opt.run_id, "record file stem");
    sub->add_option_function<std::vector<std::string>>(
        "--tag",
        [&opt](const std::vector<std::string>& kvs) {
            for (const auto& kv : kvs) {
                auto pos = kv.find('=');
                if (pos == std::string::npos)
                    throw CLI::ValidationError("--tag", "expected key=value, got " + kv);
                opt.tags.emplace_back(kv.substr(0, pos), kv.substr(pos + 1));
            }
        },
        "key=value label stored on the run record (repeatable)");
    sub->callback([&opt]() { cmd_eval(opt); });
}

void add_visualize(CLI::App& app, VisualizeOptions& opt) {
    CLI::App* sub = app.add_subcommand("visualize", "render flow and trajectory overlays");
    sub->add_option("-o,--out", opt.out_dir, "output directory")->required();
    sub->add_option("--trajectories", opt.trajectory_path, "trajectory JSONL to rasterize");
    sub->add_option("--clip", opt.clip_dir, "corpus clip whose flow to visualize");
    sub->add_option("--frames", opt.frames, "frame count for trajectory rasterization");
    sub->add_option("--height", opt.height, "canvas height");
    sub->add_option("--width", opt.width, "canvas width");
    sub->add_option("--sigma", opt.sigma, "rasterization Gaussian std");
    sub->callback([&opt]() { cmd_visualize(opt); });
}

void add_report(CLI::App& app, ReportOptions& opt) {
    CLI::App* sub = app.add_subcommand("report", "aggregate run records into a study report");
    sub->add_option("--records", opt.records_dir, "directory of run-record JSON files")
        ->required();
    sub->add_option("-o,--out", opt.out_dir, "report output directory")->required();
    sub->callback([&opt]() { cmd_report(opt); });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trajectory-controlled video generation toolkit"};
    app.require_subcommand(1);

    GenCorpusOptions gen_opt;
    CurateOptions curate_opt;
    TrainVaeOptions vae_opt;
    TrainOptions train_opt;
    SampleOptions sample_opt;
    EvalOptions eval_opt;
    VisualizeOptions vis_opt;
    ReportOptions report_opt;

    add_gen_corpus(app, gen_opt);
    add_curate(app, curate_opt);
    add_train_vae(app, vae_opt);
    add_train(app, train_opt);
    add_sample(app, sample_opt);
    add_eval(app, eval_opt);
    add_visualize(app, vis_opt);
    add_report(app, report_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const trajvid::validation_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const trajvid::missing_dependency_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
