#pragma once

#include <string>
#include <vector>

#include "defront/geometry.hpp"
#include "defront/nets.hpp"
#include "defront/rng.hpp"

namespace defront {

struct AugmentationPolicy {
    double error_threshold = 0.0;  // pixels; set by calibration
    double apply_probability = 1.0;
    double target_fraction = 0.2;
    std::uint64_t rng_seed = 0;
    bool calibrated = false;
};

struct AugmentationDecision {
    bool apply = false;
    BisectSide side = BisectSide::left;  // meaningful only when apply
};

struct CalibrationReport {
    double threshold = 0.0;
    double target_fraction = 0.0;
    double realized_fraction = 0.0;  // eligible fraction on the calibration set
    std::vector<long> histogram;     // 32 bins over [hist_min, hist_max]
    double hist_min = 0.0, hist_max = 0.0;
    bool degenerate_warning = false;  // tied errors make the gate all-or-nothing

    std::string to_json() const;
};

// Threshold at the q-quantile of the error population, q = target/probability,
// so the expected defrontalized fraction approximates the target.
double calibrate_threshold(const std::vector<double>& errors, double target_fraction,
                           double apply_probability);

// Calibrates the policy in place and returns the report.
CalibrationReport calibrate_policy(AugmentationPolicy& policy, const std::vector<double>& errors);

// Pure function of (error, policy, draw_index): the gate never fires at or
// above the threshold, and the coin flips come from a counter-based stream.
AugmentationDecision decide(double record_error, const AugmentationPolicy& policy,
                            std::uint64_t draw_index);

struct DefrontalizedSample {
    Image image;  // 112x112, [0,1]
    Image mask;   // 112x112, 1 channel, for optional background replacement
};

// Bisects the requested side, runs the generator, returns the synthesized
// full-resolution profile (mirrored back for right-side requests).
DefrontalizedSample apply_defrontalization(const AlignedFace& face, BisectSide side,
                                           const DefrontModel& model);

// One training sample: either the raw aligned image or its defrontalized
// version, per decide(). Identity labels are untouched by construction.
Image augmented_sample(const AlignedFace& face, double record_error,
                       const AugmentationPolicy& policy, const DefrontModel& model,
                       std::uint64_t draw_index, AugmentationDecision* out_decision = nullptr);

// Cached-error sidecar: one {"path","error","template_hash"} JSON per line.
void save_error_cache(const std::string& path,
                      const std::vector<std::pair<std::string, double>>& errors,
                      const std::string& template_hash);
std::vector<std::pair<std::string, double>> load_error_cache(const std::string& path,
                                                             const std::string& expected_template_hash);

// FNV-1a over the template coordinates; keys the error cache.
std::string landmark_template_hash(const LandmarkSet& tmpl);

}  // namespace defront
