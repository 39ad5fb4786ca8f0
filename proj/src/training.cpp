#include "trajvid/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "trajvid/archive.hpp"
#include "trajvid/errors.hpp"
#include "trajvid/motion_vae.hpp"

namespace trajvid {

using nlohmann::json;

std::string bucket_label(const Bucket& b) {
    return std::to_string(b.H) + "x" + std::to_string(b.W) + "x" + std::to_string(b.num_frames);
}

void validate_buckets(const std::vector<Bucket>& buckets) {
    if (buckets.empty()) throw validation_error("bucket set must not be empty");
    for (const auto& b : buckets) {
        if (b.H < 1 || b.W < 1) throw validation_error("bucket resolution must be positive");
        if (b.batch_size < 1 || b.batch_size > 1024)
            throw validation_error("bucket batch_size must lie in [1, 1024]");
        if (b.num_frames < kTemporalFactor || b.num_frames % kTemporalFactor != 0)
            throw validation_error("bucket num_frames must be a positive multiple of " +
                                   std::to_string(kTemporalFactor) + ", got " +
                                   std::to_string(b.num_frames));
    }
    std::vector<Bucket> sorted(buckets);
    std::sort(sorted.begin(), sorted.end(),
              [](const Bucket& a, const Bucket& b) { return a.H * a.W > b.H * b.W; });
    for (size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].H * sorted[i].W == sorted[i - 1].H * sorted[i - 1].W)
            throw validation_error("bucket pixel counts must be distinct");
        if (sorted[i].num_frames < sorted[i - 1].num_frames)
            throw validation_error(
                "buckets sorted by pixel count descending must have non-decreasing frame "
                "counts");
    }
}

int64_t assign_bucket(const std::vector<Bucket>& buckets, int64_t H, int64_t W, int64_t L) {
    validate_buckets(buckets);
    const int64_t px = H * W;
    int64_t best = -1, best_px = -1;
    for (size_t i = 0; i < buckets.size(); ++i) {
        int64_t bpx = buckets[i].H * buckets[i].W;
        if (bpx <= px && bpx > best_px) {
            best = int64_t(i);
            best_px = bpx;
        }
    }
    if (best < 0) return -1;                          // below every interval
    if (buckets[size_t(best)].num_frames > L) return -1;  // too short for the bucket
    return best;
}

std::vector<Bucket> default_buckets() {
    return {{64, 64, 16, 1}, {32, 32, 16, 1}, {16, 16, 32, 1}};
}

ConditionMask apply_unmask_strategy(int64_t l, double probability, uint64_t seed) {
    if (l < 1) throw validation_error("slice count must be positive");
    if (!(probability >= 0.0 && probability <= 1.0))
        throw validation_error("unmask probability must lie in [0, 1]");
    ConditionMask mask;
    if (probability == 0.0) return mask;
    Rng rng(Rng::derive(seed, Rng::hash_str("unmask")));
    for (int attempt = 0; attempt < 16; ++attempt) {
        std::vector<int64_t> un;
        for (int64_t i = 0; i < l; ++i) {
            double p = (i == 0) ? std::max(probability, 0.5) : probability;
            if (rng.uniform() < p) un.push_back(i);
        }
        if (int64_t(un.size()) < l) {
            mask.unmasked = std::move(un);
            return mask;
        }
    }
    // probability ~1 keeps drawing full unmasks; force the last slice masked
    for (int64_t i = 0; i + 1 < l; ++i) mask.unmasked.push_back(i);
    return mask;
}

std::vector<std::array<double, 2>> mask_centroid_track(const Tensor& mask) {
    if (mask.ndim() != 3)
        throw validation_error("mask must be [frames, height, width], got " +
                               shape_str(mask.shape));
    const int64_t L = mask.shape[0], H = mask.shape[1], W = mask.shape[2];
    std::vector<std::array<double, 2>> track(static_cast<size_t>(L));
    std::array<double, 2> prev = {0.0, 0.0};
    for (int64_t i = 0; i < L; ++i) {
        double sx = 0, sy = 0;
        int64_t count = 0;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                if (mask.at3(i, y, x) > 0.5) {
                    sx += double(x);
                    sy += double(y);
                    count += 1;
                }
        if (count > 0) prev = {sx / double(count), sy / double(count)};
        track[size_t(i)] = prev;
    }
    return track;
}

std::vector<Trajectory> sample_sparse_trajectories(const std::vector<Tensor>& masks,
                                                   int64_t max_trajectories, uint64_t seed) {
    if (max_trajectories < 1) throw validation_error("max_trajectories must be at least 1");
    std::vector<int64_t> candidates;
    for (size_t k = 0; k < masks.size(); ++k) {
        bool nonempty = false;
        for (double v : masks[k].data)
            if (v > 0.5) {
                nonempty = true;
                break;
            }
        if (nonempty) candidates.push_back(int64_t(k));
    }
    if (candidates.empty())
        throw validation_error("no objects available for trajectory sampling");

    Rng rng(Rng::derive(seed, Rng::hash_str("sparse_traj")));
    int64_t k = rng.randint(1, std::min<int64_t>(max_trajectories, int64_t(candidates.size())));
    for (size_t i = 0; i + 1 < candidates.size(); ++i) {
        int64_t j = rng.randint(int64_t(i), int64_t(candidates.size()) - 1);
        std::swap(candidates[i], candidates[size_t(j)]);
    }
    candidates.resize(size_t(k));
    std::sort(candidates.begin(), candidates.end());

    std::vector<Trajectory> out;
    for (int64_t idx : candidates) {
        Trajectory t;
        t.object_id = "object_" + std::to_string(idx);
        t.points = mask_centroid_track(masks[size_t(idx)]);
        out.push_back(std::move(t));
    }
    return out;
}

std::string to_string(Curriculum c) {
    switch (c) {
        case Curriculum::fresh: return "fresh";
        case Curriculum::pretrained: return "pretrained";
        case Curriculum::stage1_done: return "stage1_done";
        case Curriculum::stage2_done: return "stage2_done";
    }
    return "fresh";
}

Curriculum curriculum_from_string(const std::string& s) {
    if (s == "fresh") return Curriculum::fresh;
    if (s == "pretrained") return Curriculum::pretrained;
    if (s == "stage1_done") return Curriculum::stage1_done;
    if (s == "stage2_done") return Curriculum::stage2_done;
    throw validation_error("unknown curriculum state: " + s);
}

namespace {

Tensor truncate_frames(const Tensor& t, int64_t n) {
    if (t.shape.empty() || t.shape[0] < n)
        throw validation_error("cannot truncate tensor to " + std::to_string(n) + " frames");
    Tensor out;
    out.shape = t.shape;
    out.shape[0] = n;
    out.data.assign(t.data.begin(), t.data.begin() + numel_of(out.shape));
    return out;
}

json config_to_json(const TrainerConfig& cfg) {
    json buckets = json::array();
    for (const auto& b : cfg.buckets)
        buckets.push_back(json{{"H", b.H},
                               {"W", b.W},
                               {"num_frames", b.num_frames},
                               {"batch_size", b.batch_size}});
    return json{{"backbone",
                 json{{"d", cfg.backbone.d},
                      {"heads", cfg.backbone.heads},
                      {"n_blocks", cfg.backbone.n_blocks},
                      {"patch_size", cfg.backbone.patch_size},
                      {"d_prime", cfg.backbone.d_prime},
                      {"vocab_size", cfg.backbone.vocab_size},
                      {"t_max", cfg.backbone.t_max},
                      {"use_positional", cfg.backbone.use_positional},
                      {"fuser_kind", to_string(cfg.backbone.fuser_kind)},
                      {"placement", to_string(cfg.backbone.placement)}}},
                {"diffusion_T", cfg.diffusion_T},
                {"learning_rate", cfg.learning_rate},
                {"pretrain_epochs", cfg.pretrain_epochs},
                {"stage1_epochs", cfg.stage1_epochs},
                {"stage2_epochs", cfg.stage2_epochs},
                {"curriculum_mode", cfg.curriculum_mode},
                {"max_trajectories", cfg.max_trajectories},
                {"sigma", cfg.sigma},
                {"unmask_probability", cfg.unmask_probability},
                {"text_dropout", cfg.text_dropout},
                {"seed", cfg.seed},
                {"buckets", buckets},
                {"max_steps_per_stage", cfg.max_steps_per_stage}};
}

TrainerConfig config_from_json(const json& j) {
    TrainerConfig cfg;
    const json& b = j.at("backbone");
    cfg.backbone.d = b.at("d").get<int64_t>();
    cfg.backbone.heads = b.at("heads").get<int64_t>();
    cfg.backbone.n_blocks = b.at("n_blocks").get<int64_t>();
    cfg.backbone.patch_size = b.at("patch_size").get<int>();
    cfg.backbone.d_prime = b.at("d_prime").get<int64_t>();
    cfg.backbone.vocab_size = b.at("vocab_size").get<int64_t>();
    cfg.backbone.t_max = b.at("t_max").get<int64_t>();
    cfg.backbone.use_positional = b.at("use_positional").get<bool>();
    cfg.backbone.fuser_kind = fuser_kind_from_string(b.at("fuser_kind").get<std::string>());
    cfg.backbone.placement = fuser_placement_from_string(b.at("placement").get<std::string>());
    cfg.diffusion_T = j.at("diffusion_T").get<int64_t>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.pretrain_epochs = j.at("pretrain_epochs").get<int64_t>();
    cfg.stage1_epochs = j.at("stage1_epochs").get<int64_t>();
    cfg.stage2_epochs = j.at("stage2_epochs").get<int64_t>();
    cfg.curriculum_mode = j.at("curriculum_mode").get<std::string>();
    cfg.max_trajectories = j.at("max_trajectories").get<int64_t>();
    cfg.sigma = j.at("sigma").get<double>();
    cfg.unmask_probability = j.at("unmask_probability").get<double>();
    cfg.text_dropout = j.at("text_dropout").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.buckets.clear();
    for (const auto& jb : j.at("buckets"))
        cfg.buckets.push_back(Bucket{jb.at("H").get<int64_t>(), jb.at("W").get<int64_t>(),
                                     jb.at("num_frames").get<int64_t>(),
                                     jb.at("batch_size").get<int64_t>()});
    cfg.max_steps_per_stage = j.at("max_steps_per_stage").get<int64_t>();
    return cfg;
}

void validate_trainer_config(const TrainerConfig& cfg) {
    validate_backbone_config(cfg.backbone);
    if (cfg.diffusion_T < 1) throw validation_error("diffusion_T must be positive");
    if (cfg.learning_rate <= 0) throw validation_error("learning_rate must be positive");
    if (cfg.pretrain_epochs < 0 || cfg.stage1_epochs < 0 || cfg.stage2_epochs < 0)
        throw validation_error("epoch counts must be non-negative");
    if (cfg.curriculum_mode != "hybrid" && cfg.curriculum_mode != "dense_only")
        throw validation_error("curriculum_mode must be hybrid or dense_only, got " +
                               cfg.curriculum_mode);
    if (cfg.max_trajectories < 1)
        throw validation_error("max_trajectories must be at least 1");
    if (cfg.sigma <= 0) throw validation_error("sigma must be positive");
    if (!(cfg.unmask_probability >= 0.0 && cfg.unmask_probability <= 1.0))
        throw validation_error("unmask_probability must lie in [0, 1]");
    if (!(cfg.text_dropout >= 0.0 && cfg.text_dropout <= 1.0))
        throw validation_error("text_dropout must lie in [0, 1]");
    if (cfg.max_steps_per_stage < 0)
        throw validation_error("max_steps_per_stage must be non-negative");
    validate_buckets(cfg.buckets);
}

}  // namespace

Trainer::Trainer(TrainerConfig cfg)
    : cfg_(std::move(cfg)),
      schedule_(make_linear_schedule(cfg_.diffusion_T)),
      adam_(AdamConfig{cfg_.learning_rate, 0.9, 0.999, 1e-8}) {
    if (cfg_.buckets.empty()) cfg_.buckets = default_buckets();
    validate_trainer_config(cfg_);
}

Trainer::Trainer(TrainerConfig cfg, ParamMap vae_params) : Trainer(std::move(cfg)) {
    if (vae_params.empty()) throw validation_error("trainer requires motion VAE parameters");
    vae_params_ = std::move(vae_params);
    params_ = backbone_init(cfg_.backbone, Rng::derive(cfg_.seed, Rng::hash_str("model_init")));
}

void Trainer::set_corpus(const std::string& corpus_dir, std::vector<std::string> clip_ids) {
    if (clip_ids.empty())
        for (const auto& e : read_corpus_index(corpus_dir)) clip_ids.push_back(e.clip_id);
    if (clip_ids.empty()) throw validation_error("corpus has no clips");
    corpus_dir_ = corpus_dir;
    clip_ids_ = std::move(clip_ids);
}

std::vector<std::string> Trainer::stage_trainable_prefixes() const {
    std::vector<std::string> out = {"te."};
    for (int i = 0; i < int(cfg_.backbone.n_blocks); ++i) {
        std::string bp = "block" + std::to_string(i) + ".";
        if (!is_spatial_block(i)) out.push_back(bp);
        else if (placement_covers(cfg_.backbone.placement, true)) out.push_back(bp + "fuse.");
    }
    return out;
}

const Trainer::ClipCache& Trainer::cache_for(const RenderedClip& clip) {
    auto it = cache_.find(clip.clip_id);
    if (it != cache_.end()) return it->second;

    const auto& fshape = clip.frames.shape;
    int64_t bi = assign_bucket(cfg_.buckets, fshape[1], fshape[2], fshape[0]);
    if (bi < 0)
        throw validation_error("no bucket accepts clip " + clip.clip_id + " (" +
                               shape_str(fshape) + ")");
    const Bucket& bucket = cfg_.buckets[size_t(bi)];

    ClipCache cc;
    cc.nframes = bucket.num_frames;
    cc.bucket = bucket_label(bucket);
    cc.z0 = vae_encode(truncate_frames(clip.frames, cc.nframes), vae_params_);
    if (clip.flow.numel() > 0) {
        TrajectoryMap map =
            trajectory_map_from_flow(truncate_frames(clip.flow, cc.nframes), cfg_.sigma);
        cc.dense_motion_latent = vae_encode(flow_to_rgb(map), vae_params_);
    }
    cc.tokens = tokenize_text(clip.caption, cfg_.backbone.vocab_size);
    return cache_.emplace(clip.clip_id, std::move(cc)).first->second;
}

double Trainer::run_step(const RenderedClip& clip, const std::string& stage) {
    const ClipCache& cc = cache_for(clip);
    uint64_t step_seed =
        Rng::derive(Rng::derive(cfg_.seed, Rng::hash_str("train_step")), uint64_t(global_step_));

    ConditionMask mask =
        apply_unmask_strategy(cc.z0.shape[0], cfg_.unmask_probability, Rng::derive(step_seed, 1));

    std::vector<int64_t> tokens = cc.tokens;
    if (stage == "pretrain") {
        tokens.clear();  // unconditional denoising
    } else {
        Rng drop(Rng::derive(step_seed, 2));
        if (drop.uniform() < cfg_.text_dropout) tokens.clear();
    }

    Tensor motion_latent;
    bool has_motion = false;
    if (stage == "stage1") {
        if (cc.dense_motion_latent.numel() == 0)
            throw validation_error("stage 1 requires a dense flow field for clip " +
                                   clip.clip_id);
        motion_latent = cc.dense_motion_latent;
        has_motion = true;
    } else if (stage == "stage2") {
        std::vector<Tensor> masks;
        for (const auto& m : clip.masks) masks.push_back(truncate_frames(m, cc.nframes));
        auto trajs =
            sample_sparse_trajectories(masks, cfg_.max_trajectories, Rng::derive(step_seed, 4));
        TrajectoryMap map = rasterize_trajectories(trajs, cc.nframes, clip.frames.shape[1],
                                                   clip.frames.shape[2], cfg_.sigma);
        motion_latent = vae_encode(flow_to_rgb(map), vae_params_);
        has_motion = true;
    }

    const bool pretrain = stage == "pretrain";
    std::vector<std::string> prefixes = pretrain ? std::vector<std::string>{}
                                                 : stage_trainable_prefixes();
    ParamBind bind = pretrain ? ParamBind(params_) : ParamBind(params_, prefixes);
    ad::Var text = text_embed_g(bind, cfg_.backbone, tokens);
    std::vector<ad::Var> levels;
    if (has_motion)
        levels = motion_patch_levels(bind, ad::constant(motion_latent),
                                     cfg_.backbone.patch_size, int(cfg_.backbone.n_blocks));

    Rng loss_rng(Rng::derive(step_seed, 3));
    ad::Var loss = training_loss_g(
        cc.z0, mask, schedule_,
        [&](const Tensor& zt, int64_t t) {
            return denoise_g(bind, cfg_.backbone, zt, t, text,
                             has_motion ? &levels : nullptr);
        },
        loss_rng);
    ad::backward(loss);
    adam_.step(params_, bind.collect_grads(), prefixes);
    global_step_ += 1;

    double value = loss->val.data[0];
    log_step(stage, value, cc.bucket);
    return value;
}

double Trainer::pretrain_step(const RenderedClip& clip) { return run_step(clip, "pretrain"); }

double Trainer::stage1_step(const RenderedClip& clip) {
    if (clip.flow.numel() == 0)
        throw validation_error("stage 1 requires a dense flow field");
    return run_step(clip, "stage1");
}

double Trainer::stage2_step(const RenderedClip& clip) { return run_step(clip, "stage2"); }

void Trainer::log_step(const std::string& stage, double loss, const std::string& bucket) {
    if (cfg_.log_path.empty()) return;
    std::ofstream out(cfg_.log_path, std::ios::app);
    if (!out) throw io_error("cannot append to training log: " + cfg_.log_path);
    json line{{"step", global_step_},
              {"stage", stage},
              {"loss", loss},
              {"lr", cfg_.learning_rate},
              {"bucket", bucket}};
    out << line.dump() << "\n";
}

void Trainer::run_stage(const std::string& stage, int64_t epochs) {
    if (corpus_dir_.empty()) throw validation_error("trainer has no corpus; call set_corpus");
    namespace fs = std::filesystem;
    int64_t steps = 0;
    for (int64_t epoch = 0; epoch < epochs; ++epoch) {
        std::vector<size_t> order(clip_ids_.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle(Rng::derive(Rng::derive(cfg_.seed, Rng::hash_str(stage + "_order")),
                                uint64_t(epoch)));
        for (size_t i = 0; i + 1 < order.size(); ++i) {
            int64_t j = shuffle.randint(int64_t(i), int64_t(order.size()) - 1);
            std::swap(order[i], order[size_t(j)]);
        }
        for (size_t idx : order) {
            if (cfg_.max_steps_per_stage > 0 && steps >= cfg_.max_steps_per_stage) return;
            RenderedClip clip =
                read_clip((fs::path(corpus_dir_) / clip_ids_[idx]).string());
            const auto& fshape = clip.frames.shape;
            if (assign_bucket(cfg_.buckets, fshape[1], fshape[2], fshape[0]) < 0)
                continue;  // bucket rejection: the clip is skipped, not an error
            run_step(clip, stage);
            steps += 1;
        }
    }
}

void Trainer::run_pretrain() {
    if (curriculum_ != Curriculum::fresh)
        throw validation_error("pretrain must start from a fresh model (state: " +
                               to_string(curriculum_) + ")");
    run_stage("pretrain", cfg_.pretrain_epochs);
    curriculum_ = Curriculum::pretrained;
    if (!cfg_.checkpoint_path.empty()) save_checkpoint(cfg_.checkpoint_path);
}

void Trainer::run_stage1() {
    if (curriculum_ != Curriculum::pretrained)
        throw validation_error("stage 1 requires a completed pretrain (state: " +
                               to_string(curriculum_) + ")");
    int64_t epochs = cfg_.stage1_epochs;
    if (cfg_.curriculum_mode == "dense_only") epochs += cfg_.stage2_epochs;
    run_stage("stage1", epochs);
    curriculum_ = Curriculum::stage1_done;
    if (!cfg_.checkpoint_path.empty()) save_checkpoint(cfg_.checkpoint_path);
}

void Trainer::run_stage2() {
    if (curriculum_ != Curriculum::stage1_done)
        throw validation_error("stage 2 never runs before stage 1 (state: " +
                               to_string(curriculum_) + ")");
    if (cfg_.curriculum_mode == "dense_only")
        throw validation_error("stage 2 is disabled under the dense_only curriculum");
    run_stage("stage2", cfg_.stage2_epochs);
    curriculum_ = Curriculum::stage2_done;
    if (!cfg_.checkpoint_path.empty()) save_checkpoint(cfg_.checkpoint_path);
}

void Trainer::run_all() {
    run_pretrain();
    run_stage1();
    if (cfg_.curriculum_mode == "hybrid") run_stage2();
}

void Trainer::save_checkpoint(const std::string& path) const {
    Archive ar;
    ar.meta = json{{"kind", "trainer"},
                   {"format_version", 1},
                   {"curriculum", to_string(curriculum_)},
                   {"global_step", global_step_},
                   {"adam_steps", adam_.steps_taken()},
                   {"config", config_to_json(cfg_)}};
    for (const auto& [name, t] : params_) ar.put_f64("p." + name, t);
    for (const auto& [name, t] : vae_params_) ar.put_f64("vae." + name, t);
    for (const auto& [name, t] : adam_.moment_m()) ar.put_f64("am." + name, t);
    for (const auto& [name, t] : adam_.moment_v()) ar.put_f64("av." + name, t);
    ar.save(path);
}

Trainer Trainer::load_checkpoint(const std::string& path) {
    Archive ar = Archive::load(path);
    if (ar.meta.value("kind", "") != "trainer")
        throw io_error("not a trainer checkpoint: " + path);
    Trainer tr(config_from_json(ar.meta.at("config")));
    tr.curriculum_ = curriculum_from_string(ar.meta.at("curriculum").get<std::string>());
    tr.global_step_ = ar.meta.at("global_step").get<int64_t>();
    std::map<std::string, Tensor> am, av;
    for (const auto& [name, entry] : ar.tensors) {
        (void)entry;
        if (name.rfind("p.", 0) == 0) tr.params_[name.substr(2)] = ar.get(name);
        else if (name.rfind("vae.", 0) == 0) tr.vae_params_[name.substr(4)] = ar.get(name);
        else if (name.rfind("am.", 0) == 0) am[name.substr(3)] = ar.get(name);
        else if (name.rfind("av.", 0) == 0) av[name.substr(3)] = ar.get(name);
    }
    tr.adam_.restore(std::move(am), std::move(av), ar.meta.at("adam_steps").get<int64_t>());
    if (tr.params_.empty() || tr.vae_params_.empty())
        throw io_error("trainer checkpoint is missing parameters: " + path);
    return tr;
}

ModelBundle load_model_bundle(const std::string& checkpoint_path) {
    Archive ar = Archive::load(checkpoint_path);
    if (ar.meta.value("kind", "") != "trainer")
        throw io_error("not a trainer checkpoint: " + checkpoint_path);
    TrainerConfig cfg = config_from_json(ar.meta.at("config"));
    ModelBundle bundle;
    bundle.backbone = cfg.backbone;
    bundle.diffusion_T = cfg.diffusion_T;
    for (const auto& [name, entry] : ar.tensors) {
        (void)entry;
        if (name.rfind("p.", 0) == 0) bundle.params[name.substr(2)] = ar.get(name);
        else if (name.rfind("vae.", 0) == 0) bundle.vae_params[name.substr(4)] = ar.get(name);
    }
    if (bundle.params.empty() || bundle.vae_params.empty())
        throw io_error("checkpoint is missing parameters: " + checkpoint_path);
    return bundle;
}

}  // namespace trajvid
