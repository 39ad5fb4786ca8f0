#include "trajvid/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "trajvid/archive.hpp"
#include "trajvid/diffusion.hpp"
#include "trajvid/errors.hpp"
#include "trajvid/evaluation.hpp"
#include "trajvid/image_io.hpp"
#include "trajvid/trajectory.hpp"

namespace trajvid {

namespace fs = std::filesystem;
using nlohmann::json;

std::string resolve_output_path(const std::string& path) {
    if (path.empty()) throw validation_error("output path must not be empty");
    if (fs::path(path).is_absolute()) return path;
    const char* root = std::getenv("TRAJVID_OUTPUT_ROOT");
    if (!root || !*root) return path;
    return (fs::path(root) / path).string();
}

namespace {

void atomic_write_text(const fs::path& path, const std::string& text) {
    fs::path tmp = path;
    tmp += ".tmp";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path.string());
    out << text;
    out.close();
    fs::rename(tmp, path);
}

void write_resolved_config(const std::string& out_dir, json config) {
    fs::create_directories(out_dir);
    atomic_write_text(fs::path(out_dir) / "resolved_config.json", config.dump(2) + "\n");
}

void require_file(const std::string& path, const std::string& what, const std::string& hint) {
    if (!fs::exists(path))
        throw missing_dependency_error(what + " not found: " + path + " (" + hint + ")");
}

void require_corpus(const std::string& corpus_dir) {
    require_file((fs::path(corpus_dir) / "corpus.json").string(), "corpus index",
                 "run gen-corpus first");
}

Tensor video_frame(const Tensor& video, int64_t i) {
    const int64_t H = video.shape[1], W = video.shape[2], C = video.shape[3];
    Tensor frame({H, W, C});
    const int64_t stride = H * W * C;
    std::copy(video.data.begin() + i * stride, video.data.begin() + (i + 1) * stride,
              frame.data.begin());
    return frame;
}

void write_video_frames(const std::string& out_dir, const Tensor& video,
                        const std::string& stem) {
    for (int64_t i = 0; i < video.shape[0]; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%03lld.png", stem.c_str(),
                      static_cast<long long>(i));
        write_png((fs::path(out_dir) / name).string(), video_frame(video, i));
    }
}

json curation_config_json(const CurationConfig& c) {
    return json{{"aesthetic_threshold", c.aesthetic_threshold},
                {"flow_threshold", c.flow_threshold},
                {"min_short_edge", c.min_short_edge},
                {"zoom_threshold", c.zoom_threshold},
                {"retention_enabled", c.retention_enabled},
                {"seed", c.seed}};
}

}  // namespace

void cmd_gen_corpus(const GenCorpusOptions& opt) {
    if (opt.corpus.count < 1) throw validation_error("corpus count must be positive");
    if (opt.corpus.L < 2) throw validation_error("frames per clip must be at least 2");
    if (opt.corpus.H < 16 || opt.corpus.W < 16)
        throw validation_error("clip resolution must be at least 16x16");
    double frac_sum = opt.corpus.frac_slow + opt.corpus.frac_dull + opt.corpus.frac_pan_good +
                      opt.corpus.frac_pan_bad + opt.corpus.frac_zoom;
    if (frac_sum > 1.0 + 1e-9)
        throw validation_error("category fractions must sum to at most 1");

    std::string out = resolve_output_path(opt.out_dir);
    generate_corpus(out, opt.corpus);
    write_resolved_config(out, json{{"command", "gen-corpus"},
                                    {"count", opt.corpus.count},
                                    {"frames", opt.corpus.L},
                                    {"height", opt.corpus.H},
                                    {"width", opt.corpus.W},
                                    {"max_objects", opt.corpus.max_objects},
                                    {"seed", opt.corpus.seed},
                                    {"frac_slow", opt.corpus.frac_slow},
                                    {"frac_dull", opt.corpus.frac_dull},
                                    {"frac_pan_good", opt.corpus.frac_pan_good},
                                    {"frac_pan_bad", opt.corpus.frac_pan_bad},
                                    {"frac_zoom", opt.corpus.frac_zoom}});
}

void cmd_curate(const CurateOptions& opt) {
    std::string corpus = resolve_output_path(opt.corpus_dir);
    require_corpus(corpus);
    std::string out = resolve_output_path(opt.out_dir);
    fs::create_directories(out);
    build_manifest(corpus, out, opt.curation);
    write_resolved_config(out, json{{"command", "curate"},
                                    {"corpus", opt.corpus_dir},
                                    {"curation", curation_config_json(opt.curation)}});
}

void cmd_train_vae(const TrainVaeOptions& opt) {
    if (opt.train.steps < 0) throw validation_error("steps must be non-negative");
    if (opt.train.learning_rate <= 0) throw validation_error("learning_rate must be positive");
    if (!opt.include_frames && !opt.include_flow)
        throw validation_error("at least one of frames/flow sources must be enabled");
    std::string corpus_dir = resolve_output_path(opt.corpus_dir);
    require_corpus(corpus_dir);

    auto index = read_corpus_index(corpus_dir);
    if (opt.max_clips > 0 && int64_t(index.size()) > opt.max_clips)
        index.resize(size_t(opt.max_clips));
    std::vector<Tensor> volumes;
    for (const auto& entry : index) {
        RenderedClip clip = read_clip((fs::path(corpus_dir) / entry.clip_id).string());
        if (opt.include_frames) volumes.push_back(clip.frames);
        if (opt.include_flow)
            volumes.push_back(flow_to_rgb(trajectory_map_from_flow(clip.flow)));
    }
    if (volumes.empty()) throw validation_error("no training volumes selected");

    VaeTrainResult result = vae_train(volumes, opt.train);
    std::string out = resolve_output_path(opt.out_dir);
    fs::create_directories(out);

    json train_cfg{{"steps", opt.train.steps},
                   {"learning_rate", opt.train.learning_rate},
                   {"batch_size", opt.train.batch_size},
                   {"max_frames", opt.train.max_frames},
                   {"seed", opt.train.seed},
                   {"kl_weight", opt.train.kl_weight},
                   {"eval_every", opt.train.eval_every},
                   {"target_psnr", opt.train.target_psnr}};
    VaeConfig vcfg;
    vcfg.kl_weight = opt.train.kl_weight;
    save_vae_checkpoint((fs::path(out) / "vae.tvar").string(), result.params, vcfg,
                        train_cfg.dump());

    std::string log;
    for (size_t i = 0; i < result.loss_history.size(); ++i)
        log += json{{"step", i + 1}, {"loss", result.loss_history[i]}}.dump() + "\n";
    atomic_write_text(fs::path(out) / "vae_log.jsonl", log);
    write_resolved_config(out, json{{"command", "train-vae"},
                                    {"corpus", opt.corpus_dir},
                                    {"max_clips", opt.max_clips},
                                    {"include_frames", opt.include_frames},
                                    {"include_flow", opt.include_flow},
                                    {"train", train_cfg}});
}

void cmd_train(const TrainOptions& opt) {
    if (opt.stages != "all" && opt.stages != "pretrain" && opt.stages != "stage1" &&
        opt.stages != "stage2")
        throw validation_error("stages must be one of all|pretrain|stage1|stage2, got " +
                               opt.stages);
    std::string corpus_dir = resolve_output_path(opt.corpus_dir);
    require_corpus(corpus_dir);
    std::string out = resolve_output_path(opt.out_dir);
    fs::create_directories(out);

    std::vector<std::string> clip_ids;
    if (!opt.manifest_path.empty()) {
        std::string manifest = resolve_output_path(opt.manifest_path);
        require_file(manifest, "manifest", "run curate first or drop --manifest");
        clip_ids = read_manifest_clip_ids(manifest);
        if (clip_ids.empty()) throw validation_error("manifest lists no clips");
    }

    TrainerConfig tcfg = opt.trainer;
    if (tcfg.log_path.empty()) tcfg.log_path = (fs::path(out) / "training_log.jsonl").string();
    if (tcfg.checkpoint_path.empty())
        tcfg.checkpoint_path = (fs::path(out) / "model.tvar").string();
    // fresh log per invocation so reruns are byte-comparable
    if (fs::exists(tcfg.log_path)) fs::remove(tcfg.log_path);

    Trainer trainer = [&]() {
        if (!opt.resume_checkpoint.empty()) {
            std::string resume = resolve_output_path(opt.resume_checkpoint);
            require_file(resume, "trainer checkpoint", "point --resume at a train output");
            Trainer tr = Trainer::load_checkpoint(resume);
            return tr;
        }
        std::string vae = resolve_output_path(opt.vae_checkpoint);
        require_file(vae, "VAE checkpoint", "run train-vae first");
        return Trainer(tcfg, load_vae_checkpoint(vae));
    }();

    trainer.set_corpus(corpus_dir, clip_ids);
    if (opt.stages == "all") trainer.run_all();
    else if (opt.stages == "pretrain") trainer.run_pretrain();
    else if (opt.stages == "stage1") trainer.run_stage1();
    else trainer.run_stage2();
    trainer.save_checkpoint(tcfg.checkpoint_path);

    write_resolved_config(
        out, json{{"command", "train"},
                  {"corpus", opt.corpus_dir},
                  {"manifest", opt.manifest_path},
                  {"vae_checkpoint", opt.vae_checkpoint},
                  {"stages", opt.stages},
                  {"resume", opt.resume_checkpoint},
                  {"curriculum_result", to_string(trainer.curriculum())},
                  {"global_step", trainer.global_step()},
                  {"trainer",
                   json{{"learning_rate", tcfg.learning_rate},
                        {"pretrain_epochs", tcfg.pretrain_epochs},
                        {"stage1_epochs", tcfg.stage1_epochs},
                        {"stage2_epochs", tcfg.stage2_epochs},
                        {"curriculum_mode", tcfg.curriculum_mode},
                        {"max_trajectories", tcfg.max_trajectories},
                        {"sigma", tcfg.sigma},
                        {"unmask_probability", tcfg.unmask_probability},
                        {"text_dropout", tcfg.text_dropout},
                        {"seed", tcfg.seed},
                        {"max_steps_per_stage", tcfg.max_steps_per_stage},
                        {"fuser", to_string(tcfg.backbone.fuser_kind)},
                        {"placement", to_string(tcfg.backbone.placement)}}}});
}

void cmd_sample(const SampleOptions& opt) {
    if (opt.frames < kTemporalFactor || opt.frames % kTemporalFactor != 0)
        throw validation_error("frames must be a positive multiple of " +
                               std::to_string(kTemporalFactor) + ", got " +
                               std::to_string(opt.frames));
    if (opt.height % kSpatialFactor != 0 || opt.width % kSpatialFactor != 0)
        throw validation_error("height and width must be multiples of " +
                               std::to_string(kSpatialFactor));
    if (opt.steps < 1) throw validation_error("steps must be at least 1");
    if (opt.guidance_scale < 0) throw validation_error("guidance_scale must be non-negative");

    // trajectory validation runs before any heavy loading
    std::vector<Trajectory> trajs;
    if (!opt.trajectory_path.empty()) {
        std::string tpath = resolve_output_path(opt.trajectory_path);
        require_file(tpath, "trajectory file", "pass a JSONL trajectory file");
        trajs = load_trajectories(tpath);
        if (trajs.empty()) throw validation_error("trajectory file is empty");
        for (const auto& t : trajs) {
            if (int64_t(t.points.size()) != opt.frames)
                throw validation_error(
                    "trajectory length " + std::to_string(t.points.size()) +
                    " does not match requested frames " + std::to_string(opt.frames));
            check_trajectory(t, opt.frames, opt.height, opt.width);
        }
    }

    std::string ckpt = resolve_output_path(opt.checkpoint);
    require_file(ckpt, "trainer checkpoint", "run train first");
    ModelBundle bundle = load_model_bundle(ckpt);

    DiffusionSchedule schedule = make_linear_schedule(bundle.diffusion_T);
    schedule.sampler_steps = opt.steps;
    schedule.guidance_scale = opt.guidance_scale;

    std::vector<int64_t> latent_shape = {opt.frames / kTemporalFactor,
                                         opt.height / kSpatialFactor,
                                         opt.width / kSpatialFactor, kLatentChannels};

    MotionPatches motion;
    bool has_motion = false;
    if (!trajs.empty()) {
        TrajectoryMap map =
            rasterize_trajectories(trajs, opt.frames, opt.height, opt.width, opt.sigma);
        motion = extract_motion_patches(map, bundle.vae_params, bundle.params,
                                        bundle.backbone.patch_size,
                                        int(bundle.backbone.n_blocks));
        has_motion = true;
    }

    ImageCondition cond;
    bool has_cond = false;
    if (!opt.init_clip_dir.empty()) {
        std::string clip_dir = resolve_output_path(opt.init_clip_dir);
        require_file((fs::path(clip_dir) / "data.tvar").string(), "conditioning clip",
                     "point --init-clip at a corpus clip directory");
        RenderedClip clip = read_clip(clip_dir);
        if (clip.frames.shape[1] != opt.height || clip.frames.shape[2] != opt.width)
            throw validation_error("conditioning clip resolution does not match the request");
        if (clip.frames.shape[0] < kTemporalFactor)
            throw validation_error("conditioning clip is shorter than one latent slice");
        Tensor head({kTemporalFactor, opt.height, opt.width, 3});
        std::copy(clip.frames.data.begin(), clip.frames.data.begin() + head.numel(),
                  head.data.begin());
        Tensor z_head = vae_encode(head, bundle.vae_params);
        cond.mask.unmasked = {0};
        cond.values = Tensor::zeros(latent_shape);
        std::copy(z_head.data.begin(), z_head.data.end(), cond.values.data.begin());
        has_cond = true;
    }

    std::vector<int64_t> tokens = tokenize_text(opt.caption, bundle.backbone.vocab_size);
    Tensor latent = sample_video_latent(latent_shape, tokens, has_motion ? &motion : nullptr,
                                        has_cond ? &cond : nullptr, schedule, bundle.params,
                                        bundle.backbone, opt.seed);
    Tensor video = vae_decode(latent, bundle.vae_params);

    std::string out = resolve_output_path(opt.out_dir);
    fs::create_directories(out);
    Archive ar;
    ar.meta = json{{"kind", "sample"},
                   {"caption", opt.caption},
                   {"frames", opt.frames},
                   {"height", opt.height},
                   {"width", opt.width},
                   {"steps", opt.steps},
                   {"guidance_scale", opt.guidance_scale},
                   {"seed", opt.seed},
                   {"conditioned", has_motion},
                   {"image_conditioned", has_cond}};
    ar.put_f32("video", video);
    ar.put_f32("latent", latent);
    ar.save((fs::path(out) / "sample.tvar").string());
    if (opt.write_frames) write_video_frames(out, video, "frame");

    write_resolved_config(out, json{{"command", "sample"},
                                    {"checkpoint", opt.checkpoint},
                                    {"caption", opt.caption},
                                    {"trajectory", opt.trajectory_path},
                                    {"init_clip", opt.init_clip_dir},
                                    {"frames", opt.frames},
                                    {"height", opt.height},
                                    {"width", opt.width},
                                    {"steps", opt.steps},
                                    {"guidance_scale", opt.guidance_scale},
                                    {"sigma", opt.sigma},
                                    {"seed", opt.seed}});
}

Tensor load_video_archive(const std::string& path) {
    Archive ar = Archive::load(path);
    if (ar.has("video")) return ar.get("video");
    if (ar.has("frames")) {
        Tensor frames = ar.get("frames");
        for (double& v : frames.data) v /= 255.0;
        return frames;
    }
    throw io_error("archive holds no video tensor: " + path);
}

void cmd_eval(const EvalOptions& opt) {
    if (opt.trajectory_path.empty() && opt.reference_path.empty())
        throw validation_error("eval needs --trajectory and/or --reference");
    if (!(opt.background_level >= 0.0 && opt.background_level < 1.0))
        throw validation_error("background_level must lie in [0, 1)");
    std::string vpath = resolve_output_path(opt.video_path);
    require_file(vpath, "video archive", "run sample first");
    Tensor video = load_video_archive(vpath);
    require_shape(video, {-1, -1, -1, 3}, "video");

    RunRecord record;
    record.run_id = opt.run_id;
    record.provenance = "trajvid";
    for (const auto& [k, v] : opt.tags) record.tags[k] = v;

    if (!opt.trajectory_path.empty()) {
        std::string tpath = resolve_output_path(opt.trajectory_path);
        require_file(tpath, "trajectory file", "pass the predefined trajectory");
        auto trajs = load_trajectories(tpath);
        if (trajs.empty()) throw validation_error("trajectory file is empty");
        if (int64_t(trajs[0].points.size()) != video.shape[0])
            throw validation_error("trajectory length " +
                                   std::to_string(trajs[0].points.size()) +
                                   " does not match video frames " +
                                   std::to_string(video.shape[0]));
        TrackResult track = track_centroid(video, opt.background_level);
        record.metrics["traj_error"] = trajectory_error(trajs[0], track);
        double conf = 0.0;
        for (double c : track.confidence) conf += c;
        record.metrics["track_confidence"] = conf / double(track.confidence.size());
        record.tags["trajectories"] = std::to_string(trajs.size());
    }
    if (!opt.reference_path.empty()) {
        std::string rpath = resolve_output_path(opt.reference_path);
        require_file(rpath, "reference video", "pass a clip or sample archive");
        Tensor ref = load_video_archive(rpath);
        if (ref.shape != video.shape)
            throw validation_error("reference shape does not match video shape");
        record.metrics["psnr"] = psnr(video, ref);
        record.metrics["ssim"] = ssim(video, ref);
    }

    json cfg{{"command", "eval"},
             {"video", opt.video_path},
             {"trajectory", opt.trajectory_path},
             {"reference", opt.reference_path},
             {"background_level", opt.background_level},
             {"run_id", opt.run_id}};
    record.config_hash = config_hash_hex(cfg.dump());

    std::string out = resolve_output_path(opt.out_dir);
    fs::create_directories(out);
    save_run_record((fs::path(out) / (opt.run_id + ".json")).string(), record);
    write_resolved_config(out, cfg);
}

namespace {

void draw_marker(Tensor& canvas, double px, double py) {
    const int64_t H = canvas.shape[0], W = canvas.shape[1];
    int64_t cx = int64_t(std::llround(px)), cy = int64_t(std::llround(py));
    for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dx = -1; dx <= 1; ++dx) {
            int64_t x = cx + dx, y = cy + dy;
            if (x < 0 || x >= W || y < 0 || y >= H) continue;
            for (int64_t c = 0; c < 3; ++c) canvas.at3(y, x, c) = 0.0;
        }
}

void draw_segment(Tensor& canvas, const std::array<double, 2>& a,
                  const std::array<double, 2>& b, double t01) {
    const int64_t H = canvas.shape[0], W = canvas.shape[1];
    // early points blue, late points red
    double col[3] = {0.15 + 0.75 * t01, 0.2, 0.9 - 0.8 * t01};
    int64_t steps = std::max<int64_t>(
        1, int64_t(std::ceil(std::max(std::abs(b[0] - a[0]), std::abs(b[1] - a[1])))));
    for (int64_t s = 0; s <= steps; ++s) {
        double u = double(s) / double(steps);
        int64_t x = int64_t(std::llround(a[0] + u * (b[0] - a[0])));
        int64_t y = int64_t(std::llround(a[1] + u * (b[1] - a[1])));
        if (x < 0 || x >= W || y < 0 || y >= H) continue;
        for (int64_t c = 0; c < 3; ++c) canvas.at3(y, x, c) = col[c];
    }
}

}  // namespace

void cmd_visualize(const VisualizeOptions& opt) {
    const bool from_traj = !opt.trajectory_path.empty();
    const bool from_clip = !opt.clip_dir.empty();
    if (from_traj == from_clip)
        throw validation_error("visualize needs exactly one of --trajectories or --clip");
    if (opt.sigma <= 0) throw validation_error("sigma must be positive");

    TrajectoryMap map;
    std::vector<Trajectory> trajs;
    if (from_traj) {
        if (opt.frames < 2) throw validation_error("frames must be at least 2");
        std::string tpath = resolve_output_path(opt.trajectory_path);
        require_file(tpath, "trajectory file", "pass a JSONL trajectory file");
        trajs = load_trajectories(tpath);
        if (trajs.empty()) throw validation_error("trajectory file is empty");
        for (const auto& t : trajs) check_trajectory(t, opt.frames, opt.height, opt.width);
        map = rasterize_trajectories(trajs, opt.frames, opt.height, opt.width, opt.sigma);
    } else {
        std::string clip_dir = resolve_output_path(opt.clip_dir);
        require_file((fs::path(clip_dir) / "data.tvar").string(), "clip",
                     "point --clip at a corpus clip directory");
        RenderedClip clip = read_clip(clip_dir);
        map = trajectory_map_from_flow(clip.flow, opt.sigma);
    }

    Tensor rgb = flow_to_rgb(map);
    std::string out = resolve_output_path(opt.out_dir);
    fs::create_directories(out);
    write_video_frames(out, rgb, "flow");
    Archive ar;
    ar.meta = json{{"kind", "flow_visualization"}};
    ar.put_f64("video", rgb);
    ar.save((fs::path(out) / "flow_rgb.tvar").string());

    if (from_traj) {
        Tensor overlay = Tensor::full({map.data.shape[1], map.data.shape[2], 3}, 1.0);
        for (const auto& t : trajs) {
            for (size_t i = 0; i + 1 < t.points.size(); ++i)
                draw_segment(overlay, t.points[i], t.points[i + 1],
                             double(i) / double(std::max<size_t>(1, t.points.size() - 2)));
            for (const auto& p : t.points) draw_marker(overlay, p[0], p[1]);
        }
        write_png((fs::path(out) / "trajectory_overlay.png").string(), overlay);
    }

    write_resolved_config(out, json{{"command", "visualize"},
                                    {"trajectories", opt.trajectory_path},
                                    {"clip", opt.clip_dir},
                                    {"frames", opt.frames},
                                    {"height", opt.height},
                                    {"width", opt.width},
                                    {"sigma", opt.sigma}});
}

void cmd_report(const ReportOptions& opt) {
    std::string records = resolve_output_path(opt.records_dir);
    if (!fs::exists(records))
        throw missing_dependency_error("run-record directory not found: " + records +
                                       " (run eval first)");
    auto runs = load_run_records(records);
    if (runs.empty()) throw validation_error("no run records found in " + records);
    std::string out = resolve_output_path(opt.out_dir);
    write_ablation_report(out, runs);
    write_resolved_config(out, json{{"command", "report"}, {"records", opt.records_dir}});
}

}  // namespace trajvid
