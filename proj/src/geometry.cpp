#include "defront/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "defront/errors.hpp"

namespace defront {

const std::vector<std::string> kFrontalNames = {
    "left_eye", "right_eye", "nose_top", "mouth_left", "mouth_right"};

const Point2D& LandmarkSet::get(const std::string& name) const {
    auto it = points.find(name);
    if (it == points.end()) throw MissingLandmark("landmark not present: " + name);
    return it->second;
}

bool LandmarkSet::valid_for_frontal() const {
    for (const auto& n : kFrontalNames)
        if (!has(n)) return false;
    return true;
}

bool LandmarkSet::valid_for_profile() const {
    return has("nose_top") && has("ear_point") && (has("mouth_left") || has("mouth_right"));
}

LandmarkSet frontal_template_112() {
    LandmarkSet t;
    t.source = LandmarkSource::annotation;
    t.points["left_eye"] = {38.29, 51.70};
    t.points["right_eye"] = {73.53, 51.50};
    t.points["nose_top"] = {56.03, 71.74};
    t.points["mouth_left"] = {41.55, 92.37};
    t.points["mouth_right"] = {70.73, 92.20};
    return t;
}

Transform2D Transform2D::identity(TransformKind kind) {
    Transform2D t;
    t.kind = kind;
    return t;
}

Transform2D Transform2D::inverse() const {
    double d = det();
    if (std::fabs(d) < 1e-12) throw DegenerateInput("transform not invertible");
    Transform2D inv;
    inv.kind = kind;
    inv.m[0] = m[4] / d;
    inv.m[1] = -m[1] / d;
    inv.m[3] = -m[3] / d;
    inv.m[4] = m[0] / d;
    inv.m[2] = -(inv.m[0] * m[2] + inv.m[1] * m[5]);
    inv.m[5] = -(inv.m[3] * m[2] + inv.m[4] * m[5]);
    return inv;
}

bool Transform2D::is_similarity(double tol) const {
    return std::fabs(m[0] - m[4]) <= tol && std::fabs(m[1] + m[3]) <= tol && det() > 0;
}

Transform2D compose(const Transform2D& outer, const Transform2D& inner) {
    Transform2D r;
    r.kind = (outer.kind == TransformKind::similarity && inner.kind == TransformKind::similarity)
                 ? TransformKind::similarity
                 : TransformKind::affine;
    r.m[0] = outer.m[0] * inner.m[0] + outer.m[1] * inner.m[3];
    r.m[1] = outer.m[0] * inner.m[1] + outer.m[1] * inner.m[4];
    r.m[2] = outer.m[0] * inner.m[2] + outer.m[1] * inner.m[5] + outer.m[2];
    r.m[3] = outer.m[3] * inner.m[0] + outer.m[4] * inner.m[3];
    r.m[4] = outer.m[3] * inner.m[1] + outer.m[4] * inner.m[4];
    r.m[5] = outer.m[3] * inner.m[2] + outer.m[4] * inner.m[5] + outer.m[5];
    return r;
}

Transform2D solve_similarity(const std::vector<Point2D>& src, const std::vector<Point2D>& dst) {
    if (src.size() != dst.size() || src.size() < 2)
        throw DegenerateInput("solve_similarity: need >= 2 point pairs");
    const double n = static_cast<double>(src.size());
    double mx = 0, my = 0, ux = 0, uy = 0;
    for (size_t i = 0; i < src.size(); ++i) {
        mx += src[i].x;
        my += src[i].y;
        ux += dst[i].x;
        uy += dst[i].y;
    }
    mx /= n; my /= n; ux /= n; uy /= n;

    // closed-form least squares over [a -b; b a] + t
    double sxx = 0, dot = 0, crs = 0;
    for (size_t i = 0; i < src.size(); ++i) {
        double sx = src[i].x - mx, sy = src[i].y - my;
        double dx = dst[i].x - ux, dy = dst[i].y - uy;
        sxx += sx * sx + sy * sy;
        dot += sx * dx + sy * dy;
        crs += sx * dy - sy * dx;
    }
    if (sxx < 1e-12) throw DegenerateInput("solve_similarity: source points coincident");
    double a = dot / sxx, b = crs / sxx;
    if (a * a + b * b < 1e-24)
        throw DegenerateInput("solve_similarity: degenerate destination configuration");

    Transform2D t;
    t.kind = TransformKind::similarity;
    t.m[0] = a;
    t.m[1] = -b;
    t.m[3] = b;
    t.m[4] = a;
    t.m[2] = ux - (a * mx - b * my);
    t.m[5] = uy - (b * mx + a * my);
    return t;
}

Transform2D solve_affine_exact(const std::vector<Point2D>& src, const std::vector<Point2D>& dst) {
    if (src.size() != 3 || dst.size() != 3)
        throw DegenerateInput("solve_affine_exact: need exactly 3 correspondences");
    Eigen::Matrix3d A;
    for (int i = 0; i < 3; ++i) A.row(i) << src[static_cast<size_t>(i)].x, src[static_cast<size_t>(i)].y, 1.0;
    if (std::fabs(A.determinant()) < 1e-9)
        throw DegenerateInput("solve_affine_exact: source points collinear");
    Eigen::Vector3d bx(dst[0].x, dst[1].x, dst[2].x);
    Eigen::Vector3d by(dst[0].y, dst[1].y, dst[2].y);
    Eigen::Vector3d rx = A.fullPivLu().solve(bx);
    Eigen::Vector3d ry = A.fullPivLu().solve(by);
    Transform2D t;
    t.kind = TransformKind::affine;
    t.m[0] = rx[0];
    t.m[1] = rx[1];
    t.m[2] = rx[2];
    t.m[3] = ry[0];
    t.m[4] = ry[1];
    t.m[5] = ry[2];
    return t;
}

Image warp_to_aligned(const Image& src, const Transform2D& t, long out_size) {
    Transform2D inv = t.inverse();
    Image out(out_size, out_size, src.channels());
    for (long y = 0; y < out_size; ++y)
        for (long x = 0; x < out_size; ++x) {
            Point2D p = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            for (long c = 0; c < src.channels(); ++c) out.at(y, x, c) = src.sample(p.y, p.x, c);
        }
    return out;
}

Image warp_validity_mask(long src_height, long src_width, const Transform2D& t, long out_size) {
    Transform2D inv = t.inverse();
    Image out(out_size, out_size, 1);
    for (long y = 0; y < out_size; ++y)
        for (long x = 0; x < out_size; ++x) {
            Point2D p = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            bool inside = p.x >= 0.0 && p.x <= static_cast<double>(src_width - 1) && p.y >= 0.0 &&
                          p.y <= static_cast<double>(src_height - 1);
            out.at(y, x, 0) = inside ? 1.0 : 0.0;
        }
    return out;
}

namespace {

std::pair<Transform2D, double> fit_frontal(const LandmarkSet& landmarks, const LandmarkSet& tmpl) {
    std::vector<Point2D> src, dst;
    for (const auto& name : kFrontalNames) {
        if (!landmarks.has(name)) throw MissingLandmark("frontal alignment needs landmark: " + name);
        if (!tmpl.has(name)) throw MissingLandmark("template missing landmark: " + name);
        src.push_back(landmarks.get(name));
        dst.push_back(tmpl.get(name));
    }
    Transform2D t = solve_similarity(src, dst);
    double err = 0;
    for (size_t i = 0; i < src.size(); ++i) {
        Point2D q = t.apply(src[i]);
        err += std::hypot(q.x - dst[i].x, q.y - dst[i].y);
    }
    return {t, err / static_cast<double>(src.size())};
}

}  // namespace

AlignedFace align_frontal(const Image& image, const LandmarkSet& landmarks, const LandmarkSet& tmpl) {
    if (image.empty()) throw DegenerateInput("align_frontal: empty image");
    auto [t, err] = fit_frontal(landmarks, tmpl);
    AlignedFace out;
    out.image = warp_to_aligned(image, t);
    out.transform = t;
    out.residual_error = err;
    out.side = FaceSide::full;
    for (const auto& name : kFrontalNames) out.aligned_landmarks[name] = t.apply(landmarks.get(name));
    return out;
}

double alignment_error(const LandmarkSet& landmarks, const LandmarkSet& tmpl) {
    return fit_frontal(landmarks, tmpl).second;
}

AlignedFace align_profile(const Image& image, const LandmarkSet& profile_lms,
                          const AlignedFace& frontal_ref) {
    if (image.empty()) throw DegenerateInput("align_profile: empty image");
    if (!profile_lms.has("nose_top")) throw MissingLandmark("align_profile: nose_top required");
    if (!profile_lms.has("ear_point")) throw MissingLandmark("align_profile: ear_point required");

    const Point2D nose = profile_lms.get("nose_top");
    const Point2D ear = profile_lms.get("ear_point");

    // Visible mouth corner; with both detected, take the one farther from the ear.
    std::string mouth_name;
    if (profile_lms.has("mouth_left") && profile_lms.has("mouth_right")) {
        const Point2D ml = profile_lms.get("mouth_left");
        const Point2D mr = profile_lms.get("mouth_right");
        mouth_name = std::hypot(ml.x - ear.x, ml.y - ear.y) >= std::hypot(mr.x - ear.x, mr.y - ear.y)
                         ? "mouth_left"
                         : "mouth_right";
    } else if (profile_lms.has("mouth_left")) {
        mouth_name = "mouth_left";
    } else if (profile_lms.has("mouth_right")) {
        mouth_name = "mouth_right";
    } else {
        throw MissingLandmark("align_profile: a mouth corner is required");
    }
    const Point2D mouth = profile_lms.get(mouth_name);

    auto ref_it = frontal_ref.aligned_landmarks.find("nose_top");
    if (ref_it == frontal_ref.aligned_landmarks.end())
        throw MissingLandmark("align_profile: frontal reference has no aligned nose_top");
    const double y_nose = ref_it->second.y;
    auto mouth_it = frontal_ref.aligned_landmarks.find(mouth_name);
    if (mouth_it == frontal_ref.aligned_landmarks.end())
        throw MissingLandmark("align_profile: frontal reference has no aligned " + mouth_name);
    const double y_mouth = mouth_it->second.y;

    const double half = kAlignedSize / 2.0;  // both x targets sit on the vertical midline

    // stage A: exact 2-point similarity
    Transform2D stage_a = solve_similarity({nose, mouth}, {{half, y_nose}, {half, y_mouth}});
    const Point2D ear_a = stage_a.apply(ear);

    // stage B: keep the two pinned points, move the ear to x = 0 at its stage-A row
    Transform2D stage_b = solve_affine_exact({{half, y_nose}, {half, y_mouth}, ear_a},
                                             {{half, y_nose}, {half, y_mouth}, {0.0, ear_a.y}});
    Transform2D total = compose(stage_b, stage_a);

    AlignedFace out;
    out.image = warp_to_aligned(image, total);
    out.transform = total;
    out.side = FaceSide::full;
    out.aligned_landmarks["nose_top"] = total.apply(nose);
    out.aligned_landmarks[mouth_name] = total.apply(mouth);
    out.aligned_landmarks["ear_point"] = total.apply(ear);
    double err = 0;
    err += std::hypot(out.aligned_landmarks["nose_top"].x - half, out.aligned_landmarks["nose_top"].y - y_nose);
    err += std::hypot(out.aligned_landmarks[mouth_name].x - half, out.aligned_landmarks[mouth_name].y - y_mouth);
    err += std::fabs(out.aligned_landmarks["ear_point"].x);
    out.residual_error = err / 3.0;
    return out;
}

AlignedFace bisect_horizontal(const AlignedFace& face, BisectSide side) {
    if (face.side != FaceSide::full)
        throw InvalidState("bisect_horizontal: face already bisected");
    Image img = side == BisectSide::right ? face.image.flipped_horizontal() : face.image;
    const long half = kAlignedSize / 2;
    for (long y = 0; y < img.height(); ++y)
        for (long x = half; x < img.width(); ++x)
            for (long c = 0; c < img.channels(); ++c) img.at(y, x, c) = 0.0;
    AlignedFace out;
    out.image = std::move(img);
    out.transform = face.transform;
    out.residual_error = face.residual_error;
    out.side = side == BisectSide::left ? FaceSide::left_half : FaceSide::right_half;
    return out;
}

}  // namespace defront
