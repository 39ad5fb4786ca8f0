#include <doctest.h>

#include <sys/wait.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajvid/archive.hpp"
#include "trajvid/commands.hpp"
#include "trajvid/corpus.hpp"
#include "trajvid/errors.hpp"
#include "trajvid/evaluation.hpp"
#include "trajvid/trajectory.hpp"

using namespace trajvid;

namespace {

namespace fs = std::filesystem;

struct CliResult {
    int code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    auto log = fs::temp_directory_path() /
               ("trajvid_cli_log_" + std::to_string(++counter) + ".txt");
    std::string cmd =
        std::string("\"") + TRAJVID_BIN + "\" " + args + " > " + log.string() + " 2>&1";
    int status = std::system(cmd.c_str());
    CliResult result;
    if (WIFEXITED(status)) result.code = WEXITSTATUS(status);
    std::ifstream in(log);
    result.output.assign(std::istreambuf_iterator<char>(in),
                         std::istreambuf_iterator<char>());
    fs::remove(log);
    return result;
}

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("trajvid_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    return std::vector<char>(std::istreambuf_iterator<char>(in),
                             std::istreambuf_iterator<char>());
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(bool(in));
    return nlohmann::json::parse(in);
}

std::string write_line_trajectory(const fs::path& path, int64_t n, double x0, double y0,
                                  double dx, double dy) {
    Trajectory t;
    t.object_id = "object_0";
    for (int64_t i = 0; i < n; ++i)
        t.points.push_back({x0 + dx * double(i), y0 + dy * double(i)});
    save_trajectories(path.string(), {t});
    return path.string();
}

}  // namespace

TEST_CASE("usage and validation failures exit with code two") {
    CHECK(run_cli("").code == 2);                       // a subcommand is required
    CHECK(run_cli("frobnicate").code == 2);             // unknown subcommand
    CHECK(run_cli("gen-corpus").code == 2);             // missing required --out
    CHECK(run_cli("--help").code == 0);

    auto dir = temp_dir("validation");
    CliResult bad_count = run_cli("gen-corpus -o " + (dir / "c").string() + " -n 0");
    CHECK(bad_count.code == 2);
    CHECK(bad_count.output.find("error:") != std::string::npos);
    CHECK(run_cli("gen-corpus -o " + (dir / "c").string() + " --height 8").code == 2);
    CHECK(run_cli("gen-corpus -o " + (dir / "c").string() +
                  " --frac-slow 0.8 --frac-zoom 0.4")
              .code == 2);
    CHECK(run_cli("sample --checkpoint x -o " + (dir / "s").string() + " --frames 13")
              .code == 2);
    CHECK(run_cli("sample --checkpoint x -o " + (dir / "s").string() + " --height 20")
              .code == 2);
    CHECK(run_cli("eval --video x -o " + (dir / "e").string()).code == 2);
    CHECK(run_cli("visualize -o " + (dir / "v").string()).code == 2);
    CHECK(run_cli("visualize -o " + (dir / "v").string() + " --trajectories a --clip b")
              .code == 2);
    fs::remove_all(dir);
}

TEST_CASE("missing upstream artifacts exit with code three") {
    auto dir = temp_dir("missing");
    CliResult no_corpus =
        run_cli("curate -c " + (dir / "nope").string() + " -o " + (dir / "out").string());
    CHECK(no_corpus.code == 3);
    CHECK(no_corpus.output.find("gen-corpus") != std::string::npos);  // actionable hint
    CHECK(run_cli("train -c " + (dir / "nope").string() + " -o " + (dir / "out").string())
              .code == 3);
    CHECK(run_cli("sample --checkpoint " + (dir / "nope.tvar").string() + " -o " +
                  (dir / "out").string() + " --frames 8 --height 16 --width 16")
              .code == 3);
    CHECK(run_cli("report --records " + (dir / "nope").string() + " -o " +
                  (dir / "out").string())
              .code == 3);
    fs::remove_all(dir);
}

TEST_CASE("corpus generation is byte-deterministic across processes") {
    auto dir = temp_dir("gen");
    std::string common = " -n 4 --frames 8 --height 16 --width 16 --seed 11";
    CHECK(run_cli("gen-corpus -o " + (dir / "a").string() + common).code == 0);
    CHECK(run_cli("gen-corpus -o " + (dir / "b").string() + common).code == 0);

    auto cfg = read_json(dir / "a" / "resolved_config.json");
    CHECK(cfg.at("command").get<std::string>() == "gen-corpus");
    CHECK(cfg.at("count").get<int64_t>() == 4);
    CHECK(cfg.at("seed").get<int64_t>() == 11);

    auto index = read_corpus_index((dir / "a").string());
    REQUIRE(index.size() == 4);
    CHECK(read_bytes(dir / "a" / "corpus.json") == read_bytes(dir / "b" / "corpus.json"));
    for (const auto& e : index)
        CHECK(read_bytes(dir / "a" / e.clip_id / "data.tvar") ==
              read_bytes(dir / "b" / e.clip_id / "data.tvar"));
    fs::remove_all(dir);
}

TEST_CASE("relative output paths resolve under the output root variable") {
    CHECK(resolve_output_path("/abs/path") == "/abs/path");
    CHECK_THROWS_AS(resolve_output_path(""), validation_error);

    auto root = temp_dir("root");
    setenv("TRAJVID_OUTPUT_ROOT", root.string().c_str(), 1);
    CHECK(resolve_output_path("rel") == (root / "rel").string());
    CliResult gen = run_cli("gen-corpus -o rooted_corpus -n 1 --frames 8 --height 16 "
                            "--width 16");
    unsetenv("TRAJVID_OUTPUT_ROOT");
    CHECK(gen.code == 0);
    CHECK(fs::exists(root / "rooted_corpus" / "corpus.json"));
    CHECK(resolve_output_path("rel") == "rel");  // no root, no rewrite
    fs::remove_all(root);
}

TEST_CASE("flow visualization writes exact colorized archives and overlays") {
    auto dir = temp_dir("viz");

    // a stationary trajectory has zero flow everywhere: every frame is white
    auto still_path = write_line_trajectory(dir / "still.jsonl", 6, 8.0, 8.0, 0.0, 0.0);
    CHECK(run_cli("visualize -o " + (dir / "still").string() + " --trajectories " +
                  still_path + " --frames 6 --height 16 --width 16 --sigma 1.5")
              .code == 0);
    Archive still_ar = Archive::load((dir / "still" / "flow_rgb.tvar").string());
    Tensor still_rgb = still_ar.get("video");
    REQUIRE(still_rgb.shape == std::vector<int64_t>{6, 16, 16, 3});
    for (double v : still_rgb.data) CHECK(v == 1.0);
    CHECK(fs::exists(dir / "still" / "flow_000.png"));
    CHECK(fs::exists(dir / "still" / "flow_005.png"));
    CHECK(fs::exists(dir / "still" / "trajectory_overlay.png"));
    CHECK(fs::file_size(dir / "still" / "trajectory_overlay.png") > 0);

    // a moving trajectory matches the library pipeline bit for bit
    auto move_path = write_line_trajectory(dir / "move.jsonl", 6, 3.0, 8.0, 1.0, 0.0);
    CHECK(run_cli("visualize -o " + (dir / "move").string() + " --trajectories " +
                  move_path + " --frames 6 --height 16 --width 16 --sigma 1.5")
              .code == 0);
    Archive move_ar = Archive::load((dir / "move" / "flow_rgb.tvar").string());
    Tensor got = move_ar.get("video");
    auto trajs = load_trajectories(move_path);
    Tensor want = flow_to_rgb(rasterize_trajectories(trajs, 6, 16, 16, 1.5));
    REQUIRE(got.shape == want.shape);
    for (size_t i = 0; i < want.data.size(); ++i) CHECK(got.data[i] == want.data[i]);

    // clip mode colorizes the stored ground-truth flow
    auto corpus = dir / "corpus";
    CHECK(run_cli("gen-corpus -o " + corpus.string() +
                  " -n 1 --frames 8 --height 16 --width 16 --seed 4")
              .code == 0);
    CHECK(run_cli("visualize -o " + (dir / "clip").string() + " --clip " +
                  (corpus / "clip_00000").string() + " --sigma 2.0")
              .code == 0);
    RenderedClip clip = read_clip((corpus / "clip_00000").string());
    Tensor clip_want = flow_to_rgb(trajectory_map_from_flow(clip.flow, 2.0));
    Archive clip_ar = Archive::load((dir / "clip" / "flow_rgb.tvar").string());
    Tensor clip_got = clip_ar.get("video");
    REQUIRE(clip_got.shape == clip_want.shape);
    for (size_t i = 0; i < clip_want.data.size(); ++i)
        CHECK(clip_got.data[i] == clip_want.data[i]);
    CHECK(!fs::exists(dir / "clip" / "trajectory_overlay.png"));  // no tracks given
    fs::remove_all(dir);
}

TEST_CASE("the full command chain produces samples, scores, and reports") {
    auto dir = temp_dir("chain");
    auto corpus = (dir / "corpus").string();
    REQUIRE(run_cli("gen-corpus -o " + corpus +
                    " -n 2 --frames 8 --height 16 --width 16 --seed 21")
                .code == 0);

    // curate with desk-scale thresholds: fast bright clips survive
    auto curated = (dir / "curated").string();
    REQUIRE(run_cli("curate -c " + corpus + " -o " + curated +
                    " --min-short-edge 16 --no-retention")
                .code == 0);
    CHECK(fs::exists(dir / "curated" / "manifest.jsonl"));
    CHECK(fs::exists(dir / "curated" / "rejections.jsonl"));
    CHECK(fs::exists(dir / "curated" / "summary.json"));

    auto vae_out = (dir / "vae").string();
    REQUIRE(run_cli("train-vae -c " + corpus + " -o " + vae_out +
                    " --steps 3 --lr 1e-4 --max-frames 8 --seed 5")
                .code == 0);
    CHECK(fs::exists(dir / "vae" / "vae.tvar"));
    CHECK(fs::exists(dir / "vae" / "vae_log.jsonl"));
    CHECK(read_json(dir / "vae" / "resolved_config.json").at("command") == "train-vae");

    auto train_out = (dir / "train").string();
    std::string train_flags =
        " --dim 8 --heads 2 --blocks 2 --patch-size 1 --diffusion-T 20"
        " --lr 1e-3 --pretrain-epochs 1 --stage1-epochs 1 --stage2-epochs 1"
        " --max-steps-per-stage 2 --seed 9";
    REQUIRE(run_cli("train -c " + corpus + " -o " + train_out + " --vae " + vae_out +
                    "/vae.tvar --manifest " + curated + "/manifest.jsonl --stages all" +
                    train_flags)
                .code == 0);
    CHECK(fs::exists(dir / "train" / "model.tvar"));
    CHECK(fs::exists(dir / "train" / "training_log.jsonl"));
    auto tcfg = read_json(dir / "train" / "resolved_config.json");
    CHECK(tcfg.at("curriculum_result").get<std::string>() == "stage2_done");
    CHECK(tcfg.at("global_step").get<int64_t>() == 6);

    auto traj_path = write_line_trajectory(dir / "traj.jsonl", 8, 4.0, 7.0, 1.0, 0.0);
    auto sample_out = (dir / "sample").string();
    REQUIRE(run_cli("sample --checkpoint " + train_out + "/model.tvar -o " + sample_out +
                    " --caption \"a red square\" --trajectories " + traj_path +
                    " --frames 8 --height 16 --width 16 --steps 4 --guidance-scale 2"
                    " --seed 3")
                .code == 0);
    Archive sample_ar = Archive::load((dir / "sample" / "sample.tvar").string());
    CHECK(sample_ar.meta.at("conditioned").get<bool>());
    Tensor video = sample_ar.get("video");
    REQUIRE(video.shape == std::vector<int64_t>{8, 16, 16, 3});
    for (double v : video.data) {
        CHECK(v >= 0.0);  // decoded through a sigmoid output layer
        CHECK(v <= 1.0);
    }
    CHECK(fs::exists(dir / "sample" / "frame_000.png"));
    CHECK(fs::exists(dir / "sample" / "frame_007.png"));

    // identical seeds reproduce the sample across processes
    auto sample_again = (dir / "sample_again").string();
    REQUIRE(run_cli("sample --checkpoint " + train_out + "/model.tvar -o " + sample_again +
                    " --caption \"a red square\" --trajectories " + traj_path +
                    " --frames 8 --height 16 --width 16 --steps 4 --guidance-scale 2"
                    " --seed 3 --no-png")
                .code == 0);
    Tensor video2 = Archive::load((dir / "sample_again" / "sample.tvar").string()).get("video");
    REQUIRE(video2.shape == video.shape);
    for (size_t i = 0; i < video.data.size(); ++i) CHECK(video2.data[i] == video.data[i]);
    CHECK(!fs::exists(dir / "sample_again" / "frame_000.png"));

    auto eval_out = (dir / "eval").string();
    REQUIRE(run_cli("eval --video " + sample_out + "/sample.tvar -o " + eval_out +
                    " --trajectories " + traj_path + " --reference " + corpus +
                    "/clip_00000/data.tvar --background-level 0.5 --run-id smoke"
                    " --tag fuser=adaptive_norm --tag duration=8")
                .code == 0);
    RunRecord record = load_run_record((dir / "eval" / "smoke.json").string());
    CHECK(record.run_id == "smoke");
    CHECK(record.metrics.count("traj_error") == 1);
    CHECK(record.metrics.at("traj_error") >= 0.0);
    CHECK(record.metrics.count("track_confidence") == 1);
    CHECK(record.metrics.count("psnr") == 1);
    CHECK(record.metrics.count("ssim") == 1);
    CHECK(record.tags.at("fuser") == "adaptive_norm");
    CHECK(!record.config_hash.empty());

    // the report consumes the eval directory directly
    auto report_out = (dir / "report").string();
    REQUIRE(run_cli("report --records " + eval_out + " -o " + report_out).code == 0);
    auto report_text = read_bytes(dir / "report" / "ablation_report.txt");
    CHECK(!report_text.empty());
    CHECK(fs::exists(dir / "report" / "ablation_report.csv"));
    fs::remove_all(dir);
}

TEST_CASE("training resumes from checkpoints across separate invocations") {
    auto dir = temp_dir("resume");
    auto corpus = (dir / "corpus").string();
    REQUIRE(run_cli("gen-corpus -o " + corpus +
                    " -n 2 --frames 8 --height 16 --width 16 --seed 2")
                .code == 0);
    auto vae_out = (dir / "vae").string();
    REQUIRE(run_cli("train-vae -c " + corpus + " -o " + vae_out +
                    " --steps 2 --lr 1e-4 --max-frames 8")
                .code == 0);

    auto out = (dir / "train").string();
    std::string flags =
        " --dim 8 --heads 2 --blocks 2 --patch-size 1 --diffusion-T 20"
        " --max-steps-per-stage 1 --pretrain-epochs 0";
    REQUIRE(run_cli("train -c " + corpus + " -o " + out + " --vae " + vae_out +
                    "/vae.tvar --stages pretrain" + flags)
                .code == 0);
    CHECK(read_json(dir / "train" / "resolved_config.json").at("curriculum_result") ==
          "pretrained");

    REQUIRE(run_cli("train -c " + corpus + " -o " + out + " --resume " + out +
                    "/model.tvar --stages stage1" + flags)
                .code == 0);
    CHECK(read_json(dir / "train" / "resolved_config.json").at("curriculum_result") ==
          "stage1_done");

    REQUIRE(run_cli("train -c " + corpus + " -o " + out + " --resume " + out +
                    "/model.tvar --stages stage2" + flags)
                .code == 0);
    CHECK(read_json(dir / "train" / "resolved_config.json").at("curriculum_result") ==
          "stage2_done");

    // running a finished curriculum again is a clean validation failure
    CHECK(run_cli("train -c " + corpus + " -o " + out + " --resume " + out +
                  "/model.tvar --stages stage2" + flags)
              .code == 2);
    fs::remove_all(dir);
}
