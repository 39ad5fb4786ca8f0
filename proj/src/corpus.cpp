#include "trajvid/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "trajvid/archive.hpp"
#include "trajvid/errors.hpp"

namespace trajvid {

using nlohmann::json;

namespace {

struct Palette {
    const char* name;
    std::array<double, 3> rgb;
};

const Palette kBright[] = {
    {"red", {0.85, 0.15, 0.15}},    {"green", {0.15, 0.80, 0.20}},
    {"blue", {0.20, 0.35, 0.90}},   {"yellow", {0.90, 0.85, 0.15}},
    {"magenta", {0.85, 0.20, 0.80}}, {"cyan", {0.15, 0.80, 0.80}},
    {"orange", {0.95, 0.55, 0.10}}, {"white", {0.95, 0.95, 0.95}},
};

const Palette kDull[] = {
    {"gray", {0.42, 0.42, 0.42}},
    {"dim gray", {0.36, 0.36, 0.36}},
    {"light gray", {0.50, 0.50, 0.50}},
};

// velocities with per-axis speed <= 3 and magnitude >= 3.6 so a 16-frame
// clip keeps the object on screen while the mean flow clears 3 px/frame
const std::array<int64_t, 2> kFastVel[] = {
    {{3, 2}},  {{2, 3}},  {{3, 3}},  {{-3, 2}}, {{2, -3}}, {{-3, -2}},
    {{-2, 3}}, {{3, -3}}, {{-3, 3}}, {{-3, -3}}, {{-2, -3}}, {{3, -2}},
};

const std::array<int64_t, 2> kSlowVel[] = {{{1, 0}}, {{0, 1}}, {{-1, 0}}, {{0, -1}}};

// pan angles inside the accepted bands: 0, 18.4, 161.6, 180, 341.6 degrees
const std::array<int64_t, 2> kPanGood[] = {{{3, 0}}, {{3, 1}}, {{-3, 1}}, {{-3, 0}}, {{3, -1}}};
// pan angles well outside: 45, 90, 135, 270, 315 degrees
const std::array<int64_t, 2> kPanBad[] = {{{2, 2}}, {{0, 3}}, {{-2, 2}}, {{0, -3}}, {{2, -2}}};

bool in_square(const SceneObject& o, int64_t i, int64_t px, int64_t py) {
    int64_t x0 = o.tx + o.vx * i, y0 = o.ty + o.vy * i;
    return px >= x0 && px < x0 + o.size && py >= y0 && py < y0 + o.size;
}

bool in_circle(const SceneObject& o, int64_t i, int64_t px, int64_t py) {
    double cx = o.tx + o.vx * i + (o.size - 1) / 2.0;
    double cy = o.ty + o.vy * i + (o.size - 1) / 2.0;
    double r = o.size / 2.0 - 0.1;
    double dx = px - cx, dy = py - cy;
    return dx * dx + dy * dy <= r * r;
}

bool in_object(const SceneObject& o, int64_t i, int64_t px, int64_t py) {
    return o.shape == "circle" ? in_circle(o, i, px, py) : in_square(o, i, px, py);
}

// swept bounding box over all frames, padded by one pixel
std::array<int64_t, 4> swept_box(const SceneObject& o, int64_t L) {
    int64_t dx = o.vx * (L - 1), dy = o.vy * (L - 1);
    return {o.tx + std::min<int64_t>(0, dx) - 1, o.ty + std::min<int64_t>(0, dy) - 1,
            o.tx + o.size + std::max<int64_t>(0, dx) + 1,
            o.ty + o.size + std::max<int64_t>(0, dy) + 1};
}

bool boxes_overlap(const std::array<int64_t, 4>& a, const std::array<int64_t, 4>& b) {
    return a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3];
}

// captions name appearance only; motion is carried by the trajectory condition
std::string object_phrase(const SceneObject& o) {
    return "a " + o.color_name + " " + o.shape;
}

// place an object with the given velocity; false when no start position fits
bool place_object(SceneObject& o, int64_t L, int64_t H, int64_t W,
                  const std::vector<SceneObject>& placed, Rng& rng) {
    int64_t dx = o.vx * (L - 1), dy = o.vy * (L - 1);
    int64_t xlo = 1 - std::min<int64_t>(0, dx);
    int64_t xhi = W - 1 - o.size - std::max<int64_t>(0, dx);
    int64_t ylo = 1 - std::min<int64_t>(0, dy);
    int64_t yhi = H - 1 - o.size - std::max<int64_t>(0, dy);
    if (xhi < xlo || yhi < ylo) return false;
    for (int attempt = 0; attempt < 40; ++attempt) {
        o.tx = rng.randint(xlo, xhi);
        o.ty = rng.randint(ylo, yhi);
        auto box = swept_box(o, L);
        bool clash = false;
        for (const auto& p : placed)
            if (boxes_overlap(box, swept_box(p, L))) clash = true;
        if (!clash) return true;
    }
    return false;
}

int64_t floor_div(int64_t a, int64_t b) {
    int64_t q = a / b, r = a % b;
    return (r != 0 && (r < 0) != (b < 0)) ? q - 1 : q;
}

json camera_to_json(const CameraMotion& c) {
    return json{{"kind", c.kind}, {"u", c.u}, {"v", c.v}, {"zoom_rate", c.zoom_rate}};
}

CameraMotion camera_from_json(const json& j) {
    CameraMotion c;
    c.kind = j.at("kind").get<std::string>();
    c.u = j.at("u").get<int64_t>();
    c.v = j.at("v").get<int64_t>();
    c.zoom_rate = j.at("zoom_rate").get<double>();
    return c;
}

}  // namespace

std::vector<std::array<double, 2>> object_centroids(const SceneObject& obj, int64_t L) {
    // both shapes have a pixel set symmetric about corner + (size-1)/2
    std::vector<std::array<double, 2>> out(L);
    for (int64_t i = 0; i < L; ++i) {
        out[i][0] = obj.tx + obj.vx * i + (obj.size - 1) / 2.0;
        out[i][1] = obj.ty + obj.vy * i + (obj.size - 1) / 2.0;
    }
    return out;
}

RenderedClip render_clip(const ClipSpec& spec) {
    const int64_t L = spec.L, H = spec.H, W = spec.W;
    if (L < 2 || H < 8 || W < 8) throw validation_error("clip dimensions too small to render");
    RenderedClip clip;
    clip.clip_id = spec.clip_id;
    clip.category = spec.category;
    clip.caption = spec.caption;
    clip.objects = spec.objects;
    clip.camera = spec.camera;
    clip.frames = Tensor::zeros({L, H, W, 3});
    clip.flow = Tensor::zeros({L, H, W, 2});
    for (size_t k = 0; k < spec.objects.size(); ++k)
        clip.masks.push_back(Tensor::zeros({L, H, W}));

    const bool pan = spec.camera.kind == "pan";
    for (int64_t i = 0; i < L; ++i) {
        int64_t ucum = pan ? spec.camera.u * i : 0;
        int64_t vcum = pan ? spec.camera.v * i : 0;
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                int64_t checker = (floor_div(x - ucum, 8) + floor_div(y - vcum, 8)) & 1;
                for (int64_t c = 0; c < 3; ++c)
                    clip.frames.at4(i, y, x, c) =
                        spec.background[c] + spec.texture_contrast * double(checker);
            }
        }
        for (size_t k = 0; k < spec.objects.size(); ++k) {
            const SceneObject& o = spec.objects[k];
            for (int64_t y = 0; y < H; ++y) {
                for (int64_t x = 0; x < W; ++x) {
                    if (!in_object(o, i, x, y)) continue;
                    clip.masks[k].at3(i, y, x) = 1.0;
                    for (int64_t c = 0; c < 3; ++c) clip.frames.at4(i, y, x, c) = o.color[c];
                }
            }
        }
    }
    // quantize to the 8-bit grid so rendering matches on-disk frames exactly
    for (double& v : clip.frames.data) {
        v = std::min(1.0, std::max(0.0, v));
        v = std::round(v * 255.0) / 255.0;
    }

    // flow[i]: camera field everywhere, object velocity on frame-(i-1) pixels
    double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    for (int64_t i = 1; i < L; ++i) {
        if (spec.camera.kind == "pan") {
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    clip.flow.at4(i, y, x, 0) = double(spec.camera.u);
                    clip.flow.at4(i, y, x, 1) = double(spec.camera.v);
                }
        } else if (spec.camera.kind == "zoom") {
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    clip.flow.at4(i, y, x, 0) = spec.camera.zoom_rate * (x - cx);
                    clip.flow.at4(i, y, x, 1) = spec.camera.zoom_rate * (y - cy);
                }
        }
        for (size_t k = 0; k < spec.objects.size(); ++k) {
            const SceneObject& o = spec.objects[k];
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    if (clip.masks[k].at3(i - 1, y, x) > 0.5) {
                        clip.flow.at4(i, y, x, 0) = double(o.vx);
                        clip.flow.at4(i, y, x, 1) = double(o.vy);
                    }
        }
    }
    return clip;
}

ClipSpec make_clip_spec(const CorpusConfig& cfg, int64_t index) {
    if (index < 0 || index >= cfg.count) throw validation_error("clip index out of range");
    Rng rng(Rng::derive(cfg.seed, uint64_t(index)));
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "clip_%05lld", static_cast<long long>(index));

    ClipSpec spec;
    spec.clip_id = idbuf;
    spec.L = cfg.L;
    spec.H = cfg.H;
    spec.W = cfg.W;

    auto count_of = [&](double frac) { return int64_t(std::llround(frac * double(cfg.count))); };
    int64_t n_slow = count_of(cfg.frac_slow);
    int64_t n_dull = count_of(cfg.frac_dull);
    int64_t n_pg = count_of(cfg.frac_pan_good);
    int64_t n_pb = count_of(cfg.frac_pan_bad);
    int64_t n_zoom = count_of(cfg.frac_zoom);
    int64_t b1 = n_slow, b2 = b1 + n_dull, b3 = b2 + n_pg, b4 = b3 + n_pb, b5 = b4 + n_zoom;
    if (index < b1) spec.category = "slow";
    else if (index < b2) spec.category = "dull";
    else if (index < b3) spec.category = "pan_good";
    else if (index < b4) spec.category = "pan_bad";
    else if (index < b5) spec.category = "zoom";
    else spec.category = "clean";

    const bool dull = spec.category == "dull";
    if (dull) {
        spec.background = {0.40, 0.40, 0.42};
        spec.texture_contrast = 0.005;
    }
    if (spec.category == "pan_good") {
        auto v = kPanGood[rng.randint(0, std::size(kPanGood) - 1)];
        spec.camera = {"pan", v[0], v[1], 0.0};
    } else if (spec.category == "pan_bad") {
        auto v = kPanBad[rng.randint(0, std::size(kPanBad) - 1)];
        spec.camera = {"pan", v[0], v[1], 0.0};
    } else if (spec.category == "zoom") {
        spec.camera = {"zoom", 0, 0, rng.uniform() < 0.5 ? 0.1875 : -0.1875};
    }

    int64_t want = rng.randint(1, std::max<int64_t>(1, cfg.max_objects));
    for (int64_t k = 0; k < want; ++k) {
        SceneObject o;
        o.shape = cfg.shapes[size_t(rng.randint(0, int64_t(cfg.shapes.size()) - 1))];
        o.size = 6 + 2 * rng.randint(0, 2);
        if (spec.category == "slow") {
            auto v = kSlowVel[rng.randint(0, std::size(kSlowVel) - 1)];
            o.vx = v[0];
            o.vy = v[1];
        } else {
            auto v = kFastVel[rng.randint(0, std::size(kFastVel) - 1)];
            o.vx = v[0];
            o.vy = v[1];
        }
        const Palette* pal = dull ? kDull : kBright;
        size_t npal = dull ? std::size(kDull) : std::size(kBright);
        const Palette& p = pal[rng.randint(0, int64_t(npal) - 1)];
        o.color = p.rgb;
        o.color_name = p.name;
        if (place_object(o, spec.L, spec.H, spec.W, spec.objects, rng)) spec.objects.push_back(o);
    }
    if (spec.objects.empty()) {
        // guarantee at least one object so captions and masks are never empty
        SceneObject o;
        o.shape = "square";
        o.size = 6;
        o.vx = 3;
        o.vy = 2;
        const Palette& p = dull ? kDull[0] : kBright[0];
        o.color = p.rgb;
        o.color_name = p.name;
        o.tx = 2;
        o.ty = 2;
        spec.objects.push_back(o);
    }

    std::string caption;
    for (size_t k = 0; k < spec.objects.size(); ++k) {
        if (k) caption += " and ";
        caption += object_phrase(spec.objects[k]);
    }
    spec.caption = caption;
    return spec;
}

void write_clip(const std::string& corpus_dir, const RenderedClip& clip) {
    namespace fs = std::filesystem;
    fs::path dir = fs::path(corpus_dir) / clip.clip_id;
    fs::create_directories(dir);

    Archive ar;
    json objs = json::array();
    for (const auto& o : clip.objects) {
        objs.push_back(json{{"shape", o.shape},
                            {"tx", o.tx},
                            {"ty", o.ty},
                            {"size", o.size},
                            {"vx", o.vx},
                            {"vy", o.vy},
                            {"color", o.color},
                            {"color_name", o.color_name}});
    }
    const auto& fs_ = clip.frames.shape;
    ar.meta = json{{"kind", "clip"},
                   {"clip_id", clip.clip_id},
                   {"category", clip.category},
                   {"caption", clip.caption},
                   {"L", fs_[0]},
                   {"H", fs_[1]},
                   {"W", fs_[2]},
                   {"camera", camera_to_json(clip.camera)},
                   {"objects", objs}};

    std::vector<unsigned char> fb(clip.frames.data.size());
    for (size_t i = 0; i < fb.size(); ++i)
        fb[i] = static_cast<unsigned char>(std::llround(clip.frames.data[i] * 255.0));
    ar.put_u8("frames", clip.frames.shape, fb);
    ar.put_f32("flow", clip.flow);
    for (size_t k = 0; k < clip.masks.size(); ++k) {
        std::vector<unsigned char> mb(clip.masks[k].data.size());
        for (size_t i = 0; i < mb.size(); ++i)
            mb[i] = clip.masks[k].data[i] > 0.5 ? 1 : 0;
        ar.put_u8("mask" + std::to_string(k), clip.masks[k].shape, mb);
    }
    ar.save((dir / "data.tvar").string());
}

RenderedClip read_clip(const std::string& clip_dir) {
    namespace fs = std::filesystem;
    fs::path path = fs::path(clip_dir) / "data.tvar";
    if (!fs::exists(path)) throw io_error("clip data not found: " + path.string());
    Archive ar = Archive::load(path.string());
    if (ar.meta.value("kind", "") != "clip")
        throw io_error("not a clip archive: " + path.string());

    RenderedClip clip;
    clip.clip_id = ar.meta.at("clip_id").get<std::string>();
    clip.category = ar.meta.at("category").get<std::string>();
    clip.caption = ar.meta.at("caption").get<std::string>();
    clip.camera = camera_from_json(ar.meta.at("camera"));
    clip.frames = ar.get("frames");
    for (double& v : clip.frames.data) v /= 255.0;
    clip.flow = ar.get("flow");
    for (size_t k = 0; ar.has("mask" + std::to_string(k)); ++k)
        clip.masks.push_back(ar.get("mask" + std::to_string(k)));
    for (const auto& jo : ar.meta.at("objects")) {
        SceneObject o;
        o.shape = jo.at("shape").get<std::string>();
        o.tx = jo.at("tx").get<int64_t>();
        o.ty = jo.at("ty").get<int64_t>();
        o.size = jo.at("size").get<int64_t>();
        o.vx = jo.at("vx").get<int64_t>();
        o.vy = jo.at("vy").get<int64_t>();
        auto col = jo.at("color").get<std::vector<double>>();
        o.color = {col[0], col[1], col[2]};
        o.color_name = jo.at("color_name").get<std::string>();
        clip.objects.push_back(o);
    }
    return clip;
}

void generate_corpus(const std::string& corpus_dir, const CorpusConfig& cfg) {
    if (cfg.count < 1) throw validation_error("corpus count must be positive");
    if (cfg.L < 2) throw validation_error("corpus clip length must be at least 2");
    namespace fs = std::filesystem;
    fs::create_directories(corpus_dir);

    json index;
    index["kind"] = "corpus";
    index["count"] = cfg.count;
    index["seed"] = cfg.seed;
    index["L"] = cfg.L;
    index["H"] = cfg.H;
    index["W"] = cfg.W;
    json clips = json::array();
    for (int64_t i = 0; i < cfg.count; ++i) {
        ClipSpec spec = make_clip_spec(cfg, i);
        RenderedClip clip = render_clip(spec);
        write_clip(corpus_dir, clip);
        clips.push_back(json{{"clip_id", clip.clip_id},
                             {"category", clip.category},
                             {"caption", clip.caption},
                             {"L", spec.L},
                             {"H", spec.H},
                             {"W", spec.W}});
    }
    index["clips"] = clips;

    fs::path tmp = fs::path(corpus_dir) / "corpus.json.tmp";
    fs::path final_path = fs::path(corpus_dir) / "corpus.json";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write corpus index: " + final_path.string());
    out << index.dump(2) << "\n";
    out.close();
    fs::rename(tmp, final_path);
}

std::vector<CorpusIndexEntry> read_corpus_index(const std::string& corpus_dir) {
    namespace fs = std::filesystem;
    fs::path path = fs::path(corpus_dir) / "corpus.json";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("corpus index not found: " + path.string());
    json index = json::parse(in, nullptr, true);
    if (index.value("kind", "") != "corpus")
        throw io_error("not a corpus index: " + path.string());
    std::vector<CorpusIndexEntry> out;
    for (const auto& jc : index.at("clips")) {
        CorpusIndexEntry e;
        e.clip_id = jc.at("clip_id").get<std::string>();
        e.category = jc.at("category").get<std::string>();
        e.caption = jc.at("caption").get<std::string>();
        e.L = jc.at("L").get<int64_t>();
        e.H = jc.at("H").get<int64_t>();
        e.W = jc.at("W").get<int64_t>();
        out.push_back(e);
    }
    std::sort(out.begin(), out.end(),
              [](const CorpusIndexEntry& a, const CorpusIndexEntry& b) {
                  return a.clip_id < b.clip_id;
              });
    return out;
}

}  // namespace trajvid
