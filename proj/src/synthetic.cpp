#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "defront/data.hpp"
#include "defront/errors.hpp"
#include "defront/rng.hpp"

namespace fs = std::filesystem;

namespace defront {

namespace {

struct Color {
    double r, g, b;
    Color scaled(double s) const {
        return {std::clamp(r * s, 0.0, 1.0), std::clamp(g * s, 0.0, 1.0), std::clamp(b * s, 0.0, 1.0)};
    }
};

// All face geometry expressed as offsets from the face center, x right /
// y down, so yaw foreshortening is x *= cos(yaw). The five landmark
// offsets follow the alignment template shape (scaled, lightly jittered),
// which keeps frontal alignment residuals small while still giving every
// identity its own continuous alignment-error value.
struct IdentityParams {
    Color skin, hair, eye, mouth, nose, ear;
    double head_a, head_b;  // half axes
    double hair_frac;       // hairline height as fraction of head_b
    double layout_scale;
    struct Offset {
        double x, y;
    };
    std::map<std::string, Offset> lm;  // the five frontal landmark offsets
    double eye_r;
    double brow_dy, brow_h;
    double nose_len, nose_w;
    double mouth_h;
    double ear_y, ear_r, ear_depth;
    struct Blotch {
        double x, y, r;
        Color color;
    };
    std::vector<Blotch> blotches;
};

IdentityParams identity_params(std::uint64_t identity_seed) {
    Rng rng(identity_seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    IdentityParams p;
    double tone = rng.uniform(0.45, 0.85);
    p.skin = {tone, tone * rng.uniform(0.75, 0.92), tone * rng.uniform(0.55, 0.8)};
    double hv = rng.uniform(0.05, 0.45);
    p.hair = {hv, hv * rng.uniform(0.6, 1.0), hv * rng.uniform(0.3, 0.9)};
    double ev = rng.uniform(0.05, 0.5);
    p.eye = {ev * rng.uniform(0.3, 1.0), ev * rng.uniform(0.3, 1.0), ev};
    p.mouth = {rng.uniform(0.45, 0.75), rng.uniform(0.1, 0.3), rng.uniform(0.15, 0.35)};
    p.nose = p.skin.scaled(rng.uniform(0.7, 0.9));
    p.ear = {std::clamp(p.skin.r * 1.15, 0.0, 1.0), p.skin.g * 0.9, p.skin.b * 0.75};
    p.head_a = rng.uniform(36, 44);
    p.head_b = rng.uniform(48, 56);
    p.hair_frac = rng.uniform(0.45, 0.7);
    p.layout_scale = rng.uniform(0.88, 1.12);

    LandmarkSet tmpl = frontal_template_112();
    double cx = 0, cy = 0;
    for (const auto& name : kFrontalNames) {
        cx += tmpl.get(name).x / 5.0;
        cy += tmpl.get(name).y / 5.0;
    }
    for (const auto& name : kFrontalNames) {
        const Point2D& t = tmpl.get(name);
        p.lm[name] = {(t.x - cx) * p.layout_scale + rng.uniform(-0.3, 0.3),
                      (t.y - cy) * p.layout_scale + rng.uniform(-0.3, 0.3)};
    }

    p.eye_r = rng.uniform(2.5, 4.5);
    p.brow_dy = rng.uniform(5, 8);
    p.brow_h = rng.uniform(1.5, 3.0);
    p.nose_len = rng.uniform(10, 16);
    p.nose_w = rng.uniform(2.0, 4.0);
    p.mouth_h = rng.uniform(1.5, 3.5);
    p.ear_y = rng.uniform(-6, 2);
    p.ear_r = rng.uniform(3, 5);
    p.ear_depth = rng.uniform(0.35, 0.5);
    int n_blotches = 3 + static_cast<int>(rng.next_below(4));
    for (int i = 0; i < n_blotches; ++i) {
        IdentityParams::Blotch b;
        b.x = rng.uniform(-0.7, 0.7) * p.head_a;
        b.y = rng.uniform(-0.5, 0.8) * p.head_b;
        b.r = rng.uniform(1.5, 3.5);
        b.color = p.skin.scaled(rng.uniform(0.6, 1.3));
        p.blotches.push_back(b);
    }
    return p;
}

void fill_ellipse(Image& img, double cx, double cy, double rx, double ry, const Color& col) {
    long y0 = std::max(0L, static_cast<long>(std::floor(cy - ry - 1)));
    long y1 = std::min(img.height() - 1, static_cast<long>(std::ceil(cy + ry + 1)));
    long x0 = std::max(0L, static_cast<long>(std::floor(cx - rx - 1)));
    long x1 = std::min(img.width() - 1, static_cast<long>(std::ceil(cx + rx + 1)));
    for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x) {
            double dx = (static_cast<double>(x) - cx) / rx;
            double dy = (static_cast<double>(y) - cy) / ry;
            double d = dx * dx + dy * dy;
            if (d <= 1.0) {
                // soft 1px edge
                double t = std::clamp((1.0 - d) * std::min(rx, ry), 0.0, 1.0);
                img.at(y, x, 0) = (1 - t) * img.at(y, x, 0) + t * col.r;
                img.at(y, x, 1) = (1 - t) * img.at(y, x, 1) + t * col.g;
                img.at(y, x, 2) = (1 - t) * img.at(y, x, 2) + t * col.b;
            }
        }
}

void fill_rect(Image& img, double cx, double cy, double hw, double hh, const Color& col) {
    long y0 = std::max(0L, static_cast<long>(std::lround(cy - hh)));
    long y1 = std::min(img.height() - 1, static_cast<long>(std::lround(cy + hh)));
    long x0 = std::max(0L, static_cast<long>(std::lround(cx - hw)));
    long x1 = std::min(img.width() - 1, static_cast<long>(std::lround(cx + hw)));
    for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x) {
            img.at(y, x, 0) = col.r;
            img.at(y, x, 1) = col.g;
            img.at(y, x, 2) = col.b;
        }
}

}  // namespace

SyntheticFace generate_synthetic_face(const SyntheticFaceSpec& spec) {
    const IdentityParams p = identity_params(spec.identity_seed);
    const double yaw = spec.yaw_deg * M_PI / 180.0;
    const double cosy = std::cos(yaw);
    const double acos = std::fabs(cosy);
    const double cx = static_cast<double>(spec.size) / 2.0;
    const double cy = static_cast<double>(spec.size) / 2.0;
    const double illum = spec.illumination;

    // face-plane features project with x' = cx + x*cos(yaw)
    auto px = [&](double x) { return cx + x * cosy; };
    auto lmx = [&](const char* name) { return px(p.lm.at(name).x); };
    auto lmy = [&](const char* name) { return cy + p.lm.at(name).y; };

    Image img(spec.size, spec.size, 3, 0.12);  // dark backdrop

    const double a_eff = p.head_a * (0.55 + 0.45 * acos);
    fill_ellipse(img, cx, cy, a_eff, p.head_b, p.skin.scaled(illum));

    // hair cap
    const double hair_top = cy - p.head_b * p.hair_frac;
    for (long y = 0; y < img.height() && static_cast<double>(y) < hair_top; ++y)
        for (long x = 0; x < img.width(); ++x) {
            double dx = (static_cast<double>(x) - cx) / a_eff;
            double dy = (static_cast<double>(y) - cy) / p.head_b;
            if (dx * dx + dy * dy <= 1.0) {
                Color h = p.hair.scaled(illum);
                img.at(y, x, 0) = h.r;
                img.at(y, x, 1) = h.g;
                img.at(y, x, 2) = h.b;
            }
        }

    for (const auto& b : p.blotches)
        fill_ellipse(img, px(b.x), cy + b.y, std::max(0.8, b.r * acos), b.r, b.color.scaled(illum));

    // brows, nose, mouth, eyes anchored on the landmark layout
    for (const char* eye : {"left_eye", "right_eye"})
        fill_rect(img, lmx(eye), lmy(eye) - p.brow_dy, std::max(1.0, p.eye_r * 1.4 * acos), p.brow_h,
                  p.hair.scaled(illum));
    fill_rect(img, lmx("nose_top"), lmy("nose_top") + p.nose_len / 2, std::max(0.8, p.nose_w * acos),
              p.nose_len / 2, p.nose.scaled(illum));
    const double mouth_cx = 0.5 * (lmx("mouth_left") + lmx("mouth_right"));
    const double mouth_cy = 0.5 * (lmy("mouth_left") + lmy("mouth_right"));
    const double mouth_hw = 0.5 * std::fabs(lmx("mouth_right") - lmx("mouth_left"));
    fill_rect(img, mouth_cx, mouth_cy, std::max(1.0, mouth_hw), p.mouth_h, p.mouth.scaled(illum));
    for (const char* eye : {"left_eye", "right_eye"})
        fill_ellipse(img, lmx(eye), lmy(eye), std::max(0.8, p.eye_r * acos), p.eye_r,
                     p.eye.scaled(illum));

    SyntheticFace out;
    out.yaw_deg = spec.yaw_deg;
    out.landmarks.source = LandmarkSource::synthetic;
    for (const auto& name : kFrontalNames)
        out.landmarks.points[name] = {px(p.lm.at(name.c_str()).x), cy + p.lm.at(name.c_str()).y};

    // ear marker on the trailing side of the head, revealed at extreme yaw
    if (std::fabs(spec.yaw_deg) >= 60.0) {
        double side = spec.yaw_deg > 0 ? -1.0 : 1.0;
        double ex = cx + side * (0.9 * p.head_a * acos + p.ear_depth * p.head_a * std::fabs(std::sin(yaw)));
        double ey = cy + p.ear_y;
        fill_ellipse(img, ex, ey, p.ear_r, p.ear_r * 1.4, p.ear.scaled(illum));
        out.landmarks.points["ear_point"] = {ex, ey};
    }

    out.image = std::move(img);
    return out;
}

SyntheticDatasetPaths build_synthetic_dataset(const std::string& out_dir, int n_identities,
                                              const std::vector<int>& poses, std::uint64_t seed) {
    if (n_identities < 2) throw DegenerateInput("build_synthetic_dataset: need >= 2 identities");
    if (poses.empty()) throw DegenerateInput("build_synthetic_dataset: need at least one pose");

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    fs::create_directories(fs::path(out_dir) / "eval", ec);
    if (ec) throw IOFailure("cannot create dataset directories under " + out_dir);

    Rng rng(seed);
    auto id_name = [](int i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "id%04d", i);
        return std::string(buf);
    };

    std::vector<TrainImageRecord> train_records, eval_records;
    std::vector<FacePairRecord> pair_records;
    IdentityGallery gallery;
    struct EvalImage {
        std::string path;
        int id;
        int yaw;
    };
    std::vector<EvalImage> eval_images;

    for (int i = 0; i < n_identities; ++i) {
        std::uint64_t mix = seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(i) + 1));
        std::uint64_t id_seed = splitmix64(mix);
        Rng idrng(mix ^ 0xabcdef1234567ULL);
        std::string frontal_train_path;
        LandmarkSet frontal_train_lms;
        for (int yaw : poses) {
            SyntheticFaceSpec spec;
            spec.identity_seed = id_seed;
            spec.yaw_deg = yaw;
            spec.illumination = idrng.uniform(0.92, 1.08);
            SyntheticFace face = generate_synthetic_face(spec);
            std::string name = id_name(i) + "_yaw" + std::to_string(yaw) + ".ppm";
            std::string path = (fs::path(out_dir) / "images" / name).string();
            save_ppm(face.image, path);
            TrainImageRecord tr;
            tr.path = path;
            tr.identity_id = id_name(i);
            tr.yaw_deg = yaw;
            tr.landmarks = face.landmarks;
            train_records.push_back(tr);
            if (yaw == 0) {
                frontal_train_path = path;
                frontal_train_lms = face.landmarks;
            }
        }
        // frontal-profile pairs for the generator training set
        for (int yaw : poses) {
            if (std::abs(yaw) < 60 || frontal_train_path.empty()) continue;
            const TrainImageRecord* profile = nullptr;
            for (const auto& tr : train_records)
                if (tr.identity_id == id_name(i) && tr.yaw_deg == yaw) profile = &tr;
            FacePairRecord pr;
            pr.identity_id = id_name(i);
            pr.frontal_path = frontal_train_path;
            pr.profile_path = profile->path;
            pr.frontal_landmarks = frontal_train_lms;
            // nose, visible mouth corner (farther from ear), ear
            const auto& lm = profile->landmarks;
            pr.profile_landmarks.source = LandmarkSource::synthetic;
            pr.profile_landmarks.points["nose_top"] = lm.get("nose_top");
            pr.profile_landmarks.points["ear_point"] = lm.get("ear_point");
            const Point2D ear = lm.get("ear_point");
            const Point2D ml = lm.get("mouth_left");
            const Point2D mr = lm.get("mouth_right");
            if (std::hypot(ml.x - ear.x, ml.y - ear.y) >= std::hypot(mr.x - ear.x, mr.y - ear.y))
                pr.profile_landmarks.points["mouth_left"] = ml;
            else
                pr.profile_landmarks.points["mouth_right"] = mr;
            pr.illumination_tag = "synthetic";
            pair_records.push_back(std::move(pr));
        }
        // held-out images: fresh illumination jitter, same identity/poses
        for (int yaw : poses) {
            SyntheticFaceSpec spec;
            spec.identity_seed = id_seed;
            spec.yaw_deg = yaw;
            spec.illumination = idrng.uniform(0.9, 1.1);
            SyntheticFace face = generate_synthetic_face(spec);
            std::string name = id_name(i) + "_yaw" + std::to_string(yaw) + "_eval.ppm";
            std::string path = (fs::path(out_dir) / "eval" / name).string();
            save_ppm(face.image, path);
            eval_images.push_back({path, i, yaw});
            gallery.entries.push_back({id_name(i), path, yaw});
            TrainImageRecord er;
            er.path = path;
            er.identity_id = id_name(i);
            er.yaw_deg = yaw;
            er.landmarks = face.landmarks;
            eval_records.push_back(er);
        }
    }

    // balanced verification pairs over the held-out images
    std::vector<TestPair> pairs, extreme_pairs;
    auto eval_of = [&](int id, int yaw) -> const EvalImage& {
        for (const auto& e : eval_images)
            if (e.id == id && e.yaw == yaw) return e;
        throw InvalidState("eval image lookup failed");
    };
    size_t n_poses = poses.size();
    for (int i = 0; i < n_identities; ++i) {
        if (n_poses > 1) {
            // same pair: two different poses of one identity
            int pa = static_cast<int>(rng.next_below(n_poses));
            int pb = static_cast<int>(rng.next_below(n_poses));
            while (pb == pa) pb = static_cast<int>(rng.next_below(n_poses));
            pairs.push_back({eval_of(i, poses[static_cast<size_t>(pa)]).path,
                             eval_of(i, poses[static_cast<size_t>(pb)]).path, true});
        }
        // matching different-identity pair keeps the list balanced
        int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_identities)));
        while (j == i) j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_identities)));
        int pc = static_cast<int>(rng.next_below(n_poses));
        int pd = static_cast<int>(rng.next_below(n_poses));
        if (n_poses > 1)
            pairs.push_back({eval_of(i, poses[static_cast<size_t>(pc)]).path,
                             eval_of(j, poses[static_cast<size_t>(pd)]).path, false});
    }
    // extreme subset: both sides at |yaw| = 90
    std::vector<int> extremes;
    for (int yaw : poses)
        if (std::abs(yaw) == 90) extremes.push_back(yaw);
    if (extremes.size() > 1) {
        for (int i = 0; i < n_identities; ++i) {
            int ya = extremes[rng.next_below(extremes.size())];
            int yb = extremes[rng.next_below(extremes.size())];
            while (yb == ya) yb = extremes[rng.next_below(extremes.size())];
            extreme_pairs.push_back({eval_of(i, ya).path, eval_of(i, yb).path, true});
            int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_identities)));
            while (j == i) j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_identities)));
            extreme_pairs.push_back({eval_of(i, extremes[rng.next_below(extremes.size())]).path,
                                     eval_of(j, extremes[rng.next_below(extremes.size())]).path, false});
        }
    }

    SyntheticDatasetPaths out;
    out.root = out_dir;
    out.pair_manifest = (fs::path(out_dir) / "pairs.jsonl").string();
    out.train_list = (fs::path(out_dir) / "train_images.jsonl").string();
    out.eval_list = (fs::path(out_dir) / "eval_images.jsonl").string();
    out.test_pairs = (fs::path(out_dir) / "test_pairs.txt").string();
    out.test_pairs_extreme = (fs::path(out_dir) / "test_pairs_extreme.txt").string();
    out.gallery = (fs::path(out_dir) / "gallery.jsonl").string();
    save_pair_manifest(out.pair_manifest, pair_records);
    save_train_list(out.train_list, train_records);
    save_train_list(out.eval_list, eval_records);
    save_test_pairs(out.test_pairs, pairs);
    save_test_pairs(out.test_pairs_extreme, extreme_pairs);
    save_gallery(out.gallery, gallery);
    return out;
}

}  // namespace defront
