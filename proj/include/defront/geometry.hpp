#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "defront/image.hpp"

namespace defront {

struct Point2D {
    double x = 0.0;
    double y = 0.0;
};

enum class LandmarkSource { detector, annotation, synthetic };

// Named 2D facial keypoints. Frontal alignment needs the five eye/nose/mouth
// points; profile alignment needs nose_top, one mouth corner and ear_point.
struct LandmarkSet {
    std::map<std::string, Point2D> points;
    LandmarkSource source = LandmarkSource::annotation;

    bool has(const std::string& name) const { return points.count(name) > 0; }
    const Point2D& get(const std::string& name) const;

    bool valid_for_frontal() const;
    bool valid_for_profile() const;
};

// The five frontal landmark names, in canonical order.
extern const std::vector<std::string> kFrontalNames;

inline constexpr long kAlignedSize = 112;

enum class TransformKind { similarity, affine };

// 2x3 matrix mapping source pixel coordinates into target coordinates:
// [x'; y'] = A [x; y] + t with row-major m = {a00,a01,tx, a10,a11,ty}.
struct Transform2D {
    double m[6] = {1, 0, 0, 0, 1, 0};
    TransformKind kind = TransformKind::affine;

    Point2D apply(const Point2D& p) const {
        return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
    }
    double det() const { return m[0] * m[4] - m[1] * m[3]; }
    Transform2D inverse() const;
    static Transform2D identity(TransformKind kind = TransformKind::similarity);

    // true when the linear part is s*R with s > 0, within tol
    bool is_similarity(double tol = 1e-6) const;
};

Transform2D compose(const Transform2D& outer, const Transform2D& inner);

enum class FaceSide { full, left_half, right_half };

struct AlignedFace {
    Image image;  // 112x112
    Transform2D transform;
    double residual_error = 0.0;
    FaceSide side = FaceSide::full;
    // landmark positions after the alignment transform, when known
    std::map<std::string, Point2D> aligned_landmarks;
};

// Canonical 5-point 112x112 alignment template.
LandmarkSet frontal_template_112();

// Least-squares similarity (scale, rotation, translation) src -> dst.
// Exact for two non-coincident pairs.
Transform2D solve_similarity(const std::vector<Point2D>& src, const std::vector<Point2D>& dst);

// Affine through exactly three correspondences.
Transform2D solve_affine_exact(const std::vector<Point2D>& src, const std::vector<Point2D>& dst);

// Warps source into the aligned 112x112 frame (bilinear, edge clamp).
Image warp_to_aligned(const Image& src, const Transform2D& t, long out_size = kAlignedSize);

// 1 where the inverse-mapped sample falls inside the source bounds, 0 in the
// fill region; the ground-truth mask for the synthesis heads.
Image warp_validity_mask(long src_height, long src_width, const Transform2D& t,
                         long out_size = kAlignedSize);

AlignedFace align_frontal(const Image& image, const LandmarkSet& landmarks,
                          const LandmarkSet& tmpl = frontal_template_112());

// Two-stage extreme-pose alignment: a 2-point similarity pins the nose and
// mouth-corner rows from the aligned frontal reference, then a 3-point
// affine pulls the ear landmark to x = 0 keeping its stage-A row.
AlignedFace align_profile(const Image& image, const LandmarkSet& profile_lms,
                          const AlignedFace& frontal_ref);

// Mean landmark residual (pixels) after best-fit similarity to the template.
double alignment_error(const LandmarkSet& landmarks,
                       const LandmarkSet& tmpl = frontal_template_112());

enum class BisectSide { left, right };

// Keeps one half of the face, mirrored to canonical left orientation for
// right-side requests; the discarded half is zero-filled.
AlignedFace bisect_horizontal(const AlignedFace& face, BisectSide side);

}  // namespace defront
