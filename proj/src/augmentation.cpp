#include "defront/augmentation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "defront/errors.hpp"

using nlohmann::json;

namespace defront {

double calibrate_threshold(const std::vector<double>& errors, double target_fraction,
                           double apply_probability) {
    if (errors.empty()) throw EmptyInput("calibrate_threshold: empty error list");
    if (apply_probability <= 0.0 || apply_probability > 1.0)
        throw InfeasibleTarget("apply_probability must be in (0, 1]");
    double q = target_fraction / apply_probability;
    if (q > 1.0 + 1e-12)
        throw InfeasibleTarget("target_fraction / apply_probability = " + std::to_string(q) + " > 1");
    std::vector<double> sorted = errors;
    std::sort(sorted.begin(), sorted.end());
    const long n = static_cast<long>(sorted.size());
    if (q >= 1.0) {
        // everything eligible: sit just above the maximum (gate is strict <)
        return std::nextafter(sorted.back(), std::numeric_limits<double>::infinity());
    }
    long k = static_cast<long>(std::floor(q * static_cast<double>(n)));
    k = std::min(std::max(k, 0L), n - 1);
    return sorted[static_cast<size_t>(k)];
}

CalibrationReport calibrate_policy(AugmentationPolicy& policy, const std::vector<double>& errors) {
    CalibrationReport rep;
    rep.target_fraction = policy.target_fraction;
    policy.error_threshold = calibrate_threshold(errors, policy.target_fraction, policy.apply_probability);
    policy.calibrated = true;
    rep.threshold = policy.error_threshold;

    long eligible = 0;
    double lo = errors[0], hi = errors[0];
    for (double e : errors) {
        if (e < policy.error_threshold) ++eligible;
        lo = std::min(lo, e);
        hi = std::max(hi, e);
    }
    rep.realized_fraction =
        policy.apply_probability * static_cast<double>(eligible) / static_cast<double>(errors.size());
    rep.hist_min = lo;
    rep.hist_max = hi;
    rep.histogram.assign(32, 0);
    double span = hi > lo ? hi - lo : 1.0;
    for (double e : errors) {
        long bin = static_cast<long>((e - lo) / span * 32.0);
        rep.histogram[static_cast<size_t>(std::min(bin, 31L))]++;
    }
    // tied populations gate all-or-nothing; surface it instead of guessing
    rep.degenerate_warning =
        std::fabs(rep.realized_fraction - rep.target_fraction) > 0.5 * rep.target_fraction + 1e-12;
    return rep;
}

std::string CalibrationReport::to_json() const {
    json j;
    j["threshold"] = threshold;
    j["target_fraction"] = target_fraction;
    j["realized_fraction"] = realized_fraction;
    j["histogram"] = histogram;
    j["hist_min"] = hist_min;
    j["hist_max"] = hist_max;
    j["degenerate_warning"] = degenerate_warning;
    return j.dump(2);
}

AugmentationDecision decide(double record_error, const AugmentationPolicy& policy,
                            std::uint64_t draw_index) {
    if (!policy.calibrated) throw PolicyUncalibrated("decide: policy is not calibrated");
    AugmentationDecision d;
    if (!(record_error < policy.error_threshold)) return d;  // gate is strict
    CounterRng stream(policy.rng_seed);
    if (stream.uniform_at(draw_index, /*lane=*/0) >= policy.apply_probability) return d;
    d.apply = true;
    d.side = stream.uniform_at(draw_index, /*lane=*/1) < 0.5 ? BisectSide::left : BisectSide::right;
    return d;
}

DefrontalizedSample apply_defrontalization(const AlignedFace& face, BisectSide side,
                                           const DefrontModel& model) {
    if (face.side != FaceSide::full) throw InvalidState("apply_defrontalization: face already bisected");
    AlignedFace half = bisect_horizontal(face, side);

    // model operates in [-1,1] on canonical (left) halves
    Tensor chw = half.image.to_chw_tensor();
    Tensor batch({1, 3, kAlignedSize, kAlignedSize});
    for (long i = 0; i < chw.size(); ++i) batch[i] = chw[i] * 2.0 - 1.0;

    ad::NoGradGuard ng;
    auto synth = model.synth(ad::constant(std::move(batch)));
    const Tensor& img112 = synth.output.images.at(112).value();
    const Tensor& mask112 = synth.output.masks.at(112).value();

    Tensor img_chw({3, kAlignedSize, kAlignedSize});
    for (long i = 0; i < img_chw.size(); ++i) img_chw[i] = (img112[i] + 1.0) / 2.0;
    Tensor mask_chw({1, kAlignedSize, kAlignedSize});
    for (long i = 0; i < mask_chw.size(); ++i) mask_chw[i] = mask112[i];

    DefrontalizedSample out;
    out.image = Image::from_chw_tensor(img_chw);
    out.mask = Image::from_chw_tensor(mask_chw);
    if (side == BisectSide::right) {
        out.image = out.image.flipped_horizontal();
        out.mask = out.mask.flipped_horizontal();
    }
    return out;
}

Image augmented_sample(const AlignedFace& face, double record_error,
                       const AugmentationPolicy& policy, const DefrontModel& model,
                       std::uint64_t draw_index, AugmentationDecision* out_decision) {
    AugmentationDecision d = decide(record_error, policy, draw_index);
    if (out_decision) *out_decision = d;
    if (!d.apply) return face.image;
    return apply_defrontalization(face, d.side, model).image;
}

std::string landmark_template_hash(const LandmarkSet& tmpl) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, p] : tmpl.points) {
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        mix(p.x);
        mix(p.y);
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void save_error_cache(const std::string& path,
                      const std::vector<std::pair<std::string, double>>& errors,
                      const std::string& template_hash) {
    std::ofstream f(path);
    if (!f) throw IOFailure("cannot write error cache: " + path);
    for (const auto& [img_path, err] : errors) {
        json j;
        j["path"] = img_path;
        j["error"] = err;
        j["template_hash"] = template_hash;
        f << j.dump() << "\n";
    }
}

std::vector<std::pair<std::string, double>> load_error_cache(
    const std::string& path, const std::string& expected_template_hash) {
    std::ifstream f(path);
    if (!f) throw MissingFile(path);
    std::vector<std::pair<std::string, double>> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        if (j.at("template_hash").get<std::string>() != expected_template_hash)
            throw InvalidState("error cache was computed against a different template");
        out.push_back({j.at("path").get<std::string>(), j.at("error").get<double>()});
    }
    return out;
}

}  // namespace defront
