#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajvid/corpus.hpp"
#include "trajvid/curation.hpp"
#include "trajvid/errors.hpp"

using namespace trajvid;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("trajvid_curation_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

Tensor constant_flow(int64_t L, int64_t H, int64_t W, double u, double v) {
    Tensor f = Tensor::zeros({L, H, W, 2});
    for (int64_t i = 1; i < L; ++i)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                f.at4(i, y, x, 0) = u;
                f.at4(i, y, x, 1) = v;
            }
    return f;
}

}  // namespace

TEST_CASE("validity and resolution thresholds are strict vs inclusive as documented") {
    CurationConfig cfg;  // aesthetic > 5.5, flow > 3.0, short edge >= 720
    CHECK(!validity_filter(5.5, 4.0, cfg));
    CHECK(validity_filter(5.5 + 1e-9, 4.0, cfg));
    CHECK(!validity_filter(6.0, 3.0, cfg));
    CHECK(validity_filter(6.0, 3.0 + 1e-9, cfg));
    CHECK(!validity_filter(5.0, 2.0, cfg));

    CHECK(resolution_filter(720, 1280, cfg));
    CHECK(resolution_filter(1280, 720, cfg));
    CHECK(!resolution_filter(719, 1280, cfg));
    CHECK(!resolution_filter(1280, 719, cfg));
}

TEST_CASE("pan angle bands include their endpoints") {
    for (double ok : {0.0, 10.0, 20.0, 160.0, 180.0, 200.0, 340.0, 350.0, 360.0})
        CHECK(angle_in_valid_band(ok));
    for (double bad : {20.001, 45.0, 90.0, 159.999, 200.001, 270.0, 339.999, -1.0})
        CHECK(!angle_in_valid_band(bad));
}

TEST_CASE("circular median handles wrap-around and normalizes its input") {
    CHECK(circular_median_deg({42.0}) == 42.0);
    CHECK(circular_median_deg({10.0, 20.0, 30.0}) == 20.0);
    CHECK(circular_median_deg({350.0, 0.0, 10.0}) == 0.0);   // wraps across zero
    CHECK(circular_median_deg({350.0, 355.0, 5.0}) == 355.0);
    // -10 and 370 normalize to 350 and 10; the tie resolves to the smaller angle
    CHECK(circular_median_deg({-10.0, 370.0}) == 10.0);
    CHECK_THROWS_AS(circular_median_deg({}), validation_error);
}

TEST_CASE("aesthetic score matches its closed form and reads only the middle frame") {
    Tensor frames = Tensor::zeros({4, 6, 6, 3});
    for (double& v : frames.data) v = 0.5;
    CHECK(aesthetic_score(frames) == 0.0);  // no saturation, no luminance range

    frames.at4(2, 1, 2, 0) = 0.9;  // L/2 == 2 is the frame that is scored
    frames.at4(2, 1, 2, 1) = 0.3;
    frames.at4(2, 1, 2, 2) = 0.1;
    const double sat = 0.9 - 0.1;
    const double lum = 0.2126 * 0.9 + 0.7152 * 0.3 + 0.0722 * 0.1;
    const double want = 10.0 * (0.9 * sat + 0.75 * (0.5 - lum));
    CHECK(aesthetic_score(frames) == doctest::Approx(want).epsilon(1e-12));

    frames.at4(0, 3, 3, 0) = 1.0;  // other frames do not contribute
    frames.at4(3, 3, 3, 1) = 0.0;
    CHECK(aesthetic_score(frames) == doctest::Approx(want).epsilon(1e-12));

    // saturated red on black exceeds the scale and clamps at ten
    Tensor vivid = Tensor::zeros({2, 4, 4, 3});
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 2; ++x) vivid.at4(1, y, x, 0) = 1.0;
    CHECK(aesthetic_score(vivid) == 10.0);

    CHECK_THROWS_AS(aesthetic_score(Tensor::zeros({2, 4, 4, 2})), validation_error);
}

TEST_CASE("flow score averages magnitudes after the first frame, masked when available") {
    Tensor flow = constant_flow(3, 4, 4, 3.0, 4.0);
    flow.at4(0, 0, 0, 0) = 100.0;  // frame 0 is excluded by convention
    CHECK(flow_score(flow, {}) == doctest::Approx(5.0).epsilon(1e-12));

    // masks restrict the average to source-frame object pixels
    Tensor masked = Tensor::zeros({2, 4, 4, 2});
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 4; ++x) {
            masked.at4(1, y, x, 0) = 30.0;
            masked.at4(1, y, x, 1) = 40.0;
        }
    masked.at4(1, 2, 1, 0) = 3.0;
    masked.at4(1, 2, 1, 1) = 4.0;
    masked.at4(1, 2, 2, 0) = 0.0;
    masked.at4(1, 2, 2, 1) = 8.0;
    Tensor mask = Tensor::zeros({2, 4, 4});
    mask.at3(0, 2, 1) = 1.0;
    mask.at3(0, 2, 2) = 1.0;
    CHECK(flow_score(masked, {mask}) == doctest::Approx(6.5).epsilon(1e-12));

    // empty mask union yields zero rather than dividing by zero
    Tensor empty_mask = Tensor::zeros({2, 4, 4});
    CHECK(flow_score(masked, {empty_mask}) == 0.0);
    CHECK_THROWS_AS(flow_score(Tensor::zeros({2, 4, 4, 3}), {}), validation_error);
}

TEST_CASE("camera diagnostics separate pans from zooms exactly on synthetic fields") {
    const int64_t L = 3, H = 16, W = 16;

    Tensor still = Tensor::zeros({L, H, W, 2});
    CameraDiagnostics d0 = camera_diagnostics(still, {});
    CHECK(!d0.has_moving_background);
    CHECK(d0.moving_pixels == 0);
    CHECK(d0.zoom_fraction == 0.0);

    // a uniform pan is point-symmetric about the center: outward and inward
    // counts match exactly, so the net divergence fraction is exactly zero
    Tensor pan = constant_flow(L, H, W, 3.0, 1.0);
    CameraDiagnostics dp = camera_diagnostics(pan, {});
    CHECK(dp.has_moving_background);
    CHECK(dp.moving_pixels == (L - 1) * H * W);
    CHECK(dp.zoom_fraction == 0.0);
    CHECK(dp.dominant_angle_deg ==
          doctest::Approx(std::atan2(1.0, 3.0) * 180.0 / M_PI).epsilon(1e-12));

    // a radial field points outward everywhere it moves at all
    const double rate = 0.1875, cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    Tensor zoom = Tensor::zeros({L, H, W, 2});
    int64_t expect_moving = 0;
    for (int64_t i = 1; i < L; ++i)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                zoom.at4(i, y, x, 0) = rate * (x - cx);
                zoom.at4(i, y, x, 1) = rate * (y - cy);
                if (std::hypot(rate * (x - cx), rate * (y - cy)) > 0.5) ++expect_moving;
            }
    CameraDiagnostics dz = camera_diagnostics(zoom, {});
    CHECK(dz.moving_pixels == expect_moving);
    CHECK(dz.outward_fraction == 1.0);
    CHECK(dz.zoom_fraction == 1.0);

    // masked pixels never count as background
    Tensor all_mask = Tensor::zeros({L, H, W});
    for (double& v : all_mask.data) v = 1.0;
    CameraDiagnostics dm = camera_diagnostics(pan, {all_mask});
    CHECK(!dm.has_moving_background);

    Tensor half_mask = Tensor::zeros({L, H, W});
    for (int64_t i = 0; i < L; ++i)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W / 2; ++x) half_mask.at3(i, y, x) = 1.0;
    CameraDiagnostics dh = camera_diagnostics(pan, {half_mask});
    CHECK(dh.moving_pixels == (L - 1) * H * (W / 2));
}

TEST_CASE("camera motion filter applies the zoom threshold then the angle bands") {
    CurationConfig cfg;
    CameraDiagnostics diag;  // static camera
    CHECK(camera_motion_filter(diag, cfg).pass);

    diag.has_moving_background = true;
    diag.moving_pixels = 100;
    diag.zoom_fraction = 0.41;
    diag.dominant_angle_deg = 10.0;
    CameraCheck zoomed = camera_motion_filter(diag, cfg);
    CHECK(!zoomed.pass);
    CHECK(zoomed.reason.find("zoom") != std::string::npos);

    diag.zoom_fraction = 0.4;  // threshold is strict, equality passes
    CHECK(camera_motion_filter(diag, cfg).pass);

    diag.zoom_fraction = 0.1;
    diag.dominant_angle_deg = 45.0;
    CameraCheck panned = camera_motion_filter(diag, cfg);
    CHECK(!panned.pass);
    CHECK(panned.reason.find("pan angle") != std::string::npos);

    diag.dominant_angle_deg = 180.0;
    CHECK(camera_motion_filter(diag, cfg).pass);
}

TEST_CASE("retention keeps clips with probability one minus flow over one hundred") {
    CHECK(retention_probability(0.0) == 1.0);
    CHECK(retention_probability(40.0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(retention_probability(100.0) == 0.0);
    CHECK(retention_probability(150.0) == 0.0);  // clamped, never negative

    // edge probabilities are certain regardless of id or seed
    for (int i = 0; i < 20; ++i) {
        std::string id = "clip_" + std::to_string(i);
        CHECK(retention_filter(0.0, id, uint64_t(i)));
        CHECK(!retention_filter(100.0, id, uint64_t(i)));
    }

    // per-id decisions are deterministic
    CHECK(retention_filter(40.0, "clip_00007", 5) == retention_filter(40.0, "clip_00007", 5));

    // Monte Carlo over many ids: the keep rate matches the probability
    const int64_t n = 100000;
    int64_t kept = 0;
    for (int64_t i = 0; i < n; ++i)
        if (retention_filter(40.0, "mc_" + std::to_string(i), 1)) ++kept;
    const double rate = double(kept) / double(n);
    CHECK(std::abs(rate - 0.6) < 0.01);
}

TEST_CASE("manifest construction filters a mixed corpus with predictable counts") {
    auto corpus = temp_dir("manifest_corpus");
    auto out = temp_dir("manifest_out");
    CorpusConfig ccfg;
    ccfg.count = 10;
    ccfg.L = 8;
    ccfg.H = 48;
    ccfg.W = 48;
    ccfg.seed = 1234;
    ccfg.max_objects = 1;
    ccfg.frac_slow = 0.2;      // low flow, fails validity
    ccfg.frac_dull = 0.2;      // low saturation, fails validity
    ccfg.frac_pan_good = 0.2;  // moving background inside the angle bands
    ccfg.frac_pan_bad = 0.2;   // diagonal or vertical pans
    ccfg.frac_zoom = 0.2;      // radial background
    generate_corpus(corpus.string(), ccfg);

    CurationConfig cfg;
    cfg.min_short_edge = 32;  // desk-scale clips, keep the real thresholds otherwise
    cfg.retention_enabled = false;
    ManifestResult res = build_manifest(corpus.string(), out.string(), cfg);

    CHECK(res.counts.at("total") == 10);
    CHECK(res.counts.at("rejected_validity") == 4);   // slow + dull
    CHECK(res.counts.at("rejected_resolution") == 0);
    CHECK(res.counts.at("rejected_camera") == 4);     // pan_bad + zoom
    CHECK(res.counts.at("rejected_retention") == 0);
    CHECK(res.counts.at("kept") == 2);                // the pan_good clips
    REQUIRE(res.kept.size() == 2);
    CHECK(res.kept[0] == "clip_00004");
    CHECK(res.kept[1] == "clip_00005");

    for (const auto& r : res.rejections) {
        if (r.clip_id == "clip_00000" || r.clip_id == "clip_00001") {
            CHECK(r.filter == "validity");
            CHECK(r.reason.find("flow") != std::string::npos);
        } else if (r.clip_id == "clip_00002" || r.clip_id == "clip_00003") {
            CHECK(r.filter == "validity");
            CHECK(r.reason.find("aesthetic") != std::string::npos);
        } else if (r.clip_id == "clip_00006" || r.clip_id == "clip_00007") {
            CHECK(r.filter == "camera");
            CHECK(r.reason.find("pan angle") != std::string::npos);
        } else {
            CHECK(r.filter == "camera");
            CHECK(r.reason.find("zoom") != std::string::npos);
        }
    }

    // the on-disk manifest mirrors the returned result
    auto ids = read_manifest_clip_ids((out / "manifest.jsonl").string());
    CHECK(ids == res.kept);
    std::ifstream rej(out / "rejections.jsonl");
    std::string line;
    int64_t rej_lines = 0;
    while (std::getline(rej, line))
        if (!line.empty()) ++rej_lines;
    CHECK(rej_lines == int64_t(res.rejections.size()));
    std::ifstream sum(out / "summary.json");
    REQUIRE(bool(sum));
    auto summary = nlohmann::json::parse(sum);
    CHECK(summary.at("counts").at("kept").get<int64_t>() == 2);
    CHECK(summary.at("counts").at("total").get<int64_t>() == 10);

    // re-running is deterministic
    auto out2 = temp_dir("manifest_out2");
    ManifestResult res2 = build_manifest(corpus.string(), out2.string(), cfg);
    CHECK(res2.kept == res.kept);
    CHECK(res2.counts == res.counts);

    // a raised resolution floor rejects before the camera filter ever runs
    CurationConfig strict = cfg;
    strict.min_short_edge = 100;
    auto out3 = temp_dir("manifest_out3");
    ManifestResult res3 = build_manifest(corpus.string(), out3.string(), strict);
    CHECK(res3.counts.at("kept") == 0);
    CHECK(res3.counts.at("rejected_validity") == 4);
    CHECK(res3.counts.at("rejected_resolution") == 6);
    CHECK(res3.counts.at("rejected_camera") == 0);

    std::filesystem::remove_all(corpus);
    std::filesystem::remove_all(out);
    std::filesystem::remove_all(out2);
    std::filesystem::remove_all(out3);
}

TEST_CASE("prompt refinement rewrites manifest captions without changing filtering") {
    class TagRefiner : public PromptRefiner {
      public:
        std::string refine(const std::string& caption) const override {
            return caption + " on a desk";
        }
    };

    auto corpus = temp_dir("refine_corpus");
    auto out = temp_dir("refine_out");
    CorpusConfig ccfg;
    ccfg.count = 3;
    ccfg.L = 6;
    ccfg.H = 48;
    ccfg.W = 48;
    ccfg.seed = 7;
    generate_corpus(corpus.string(), ccfg);

    CurationConfig cfg;
    cfg.min_short_edge = 32;
    cfg.retention_enabled = false;
    TagRefiner refiner;
    ManifestResult res = build_manifest(corpus.string(), out.string(), cfg, &refiner);
    REQUIRE(!res.kept.empty());

    std::ifstream in(out / "manifest.jsonl");
    std::string line;
    int64_t checked = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto rec = nlohmann::json::parse(line);
        auto caption = rec.at("caption").get<std::string>();
        CHECK(caption.size() > 10);
        CHECK(caption.substr(caption.size() - 10) == " on a desk");
        ++checked;
    }
    CHECK(checked == int64_t(res.kept.size()));

    CHECK_THROWS_AS(read_manifest_clip_ids((out / "missing.jsonl").string()), io_error);
    std::filesystem::remove_all(corpus);
    std::filesystem::remove_all(out);
}
