#include "defront/losses.hpp"

#include <cmath>

#include "defront/errors.hpp"

namespace defront {

using ad::Var;

namespace {

void check_scales_match(const ScaleMap& a, const ScaleMap& b, const char* what) {
    if (a.size() != b.size()) throw ShapeMismatch(std::string(what) + ": scale sets differ");
    for (const auto& [s, v] : a) {
        auto it = b.find(s);
        if (it == b.end()) throw ShapeMismatch(std::string(what) + ": missing scale " + std::to_string(s));
        if (!v.value().same_shape(it->second.value()))
            throw ShapeMismatch(std::string(what) + ": shape mismatch at scale " + std::to_string(s));
    }
}

Var multi_scale_l1(const ScaleMap& a, const ScaleMap& b, L1Reduction red, const char* what) {
    check_scales_match(a, b, what);
    Var total;
    for (const auto& [s, v] : a) {
        Var diff = ad::abs_(ad::sub(v, b.at(s)));
        Var term = red == L1Reduction::mean ? ad::mean_all(diff) : ad::sum_all(diff);
        total = total.defined() ? ad::add(total, term) : term;
    }
    return total;
}

}  // namespace

Var pixel_loss(const ScaleMap& synth, const ScaleMap& gt, L1Reduction reduction) {
    return multi_scale_l1(synth, gt, reduction, "pixel_loss");
}

Var perceptual_loss(const FeatureTapNetwork& net, const Var& synth112, const Var& gt112,
                    const std::array<double, 5>& weights) {
    if (!synth112.value().same_shape(gt112.value()))
        throw ShapeMismatch("perceptual_loss: input shapes differ");
    auto synth_taps = feature_net_taps(net, synth112);
    auto gt_taps = feature_net_taps(net, gt112);
    auto names = net.tap_names();
    if (names.size() != weights.size()) throw UnknownTap("perceptual_loss: want 5 taps");
    Var total;
    for (size_t i = 0; i < names.size(); ++i) {
        Var term = ad::scale(ad::mean_abs_diff(synth_taps.at(names[i]), gt_taps.at(names[i])), weights[i]);
        total = total.defined() ? ad::add(total, term) : term;
    }
    return total;
}

AdversarialTerms adversarial_loss(const Var& d_real, const Var& d_fake, GanGeneratorMode mode,
                                  double eps) {
    Var log_real = ad::log_(ad::clamp(d_real, eps, 1.0 - eps));
    Var clamped_fake = ad::clamp(d_fake, eps, 1.0 - eps);
    Var log_one_minus_fake = ad::log_(ad::add_scalar(ad::scale(clamped_fake, -1.0), 1.0));
    AdversarialTerms t;
    t.disc_term = ad::scale(ad::add(ad::mean_all(log_real), ad::mean_all(log_one_minus_fake)), -1.0);
    if (mode == GanGeneratorMode::non_saturating) {
        t.gen_term = ad::scale(ad::mean_all(ad::log_(clamped_fake)), -1.0);
    } else {
        t.gen_term = ad::mean_all(log_one_minus_fake);  // literal min-max form
    }
    return t;
}

Var illumination_preserving_loss(const ScaleMap& warped, const ScaleMap& input_frontal,
                                 L1Reduction reduction) {
    return multi_scale_l1(warped, input_frontal, reduction, "illumination_preserving_loss");
}

Var identity_preserving_loss(const FeatureTapNetwork& identity_net, const Var& synth112,
                             const Var& gt112) {
    auto synth_taps = feature_net_taps(identity_net, synth112);
    auto gt_taps = feature_net_taps(identity_net, gt112);
    Var fc2 = ad::mean_abs_diff(synth_taps.at("fc2"), gt_taps.at("fc2"));
    Var pool = ad::mean_abs_diff(synth_taps.at("pool"), gt_taps.at("pool"));
    return ad::add(fc2, pool);
}

Var mask_loss(const ScaleMap& pred_masks, const ScaleMap& gt_masks, double eps) {
    check_scales_match(pred_masks, gt_masks, "mask_loss");
    Var total;
    for (const auto& [s, pred] : pred_masks) {
        Var term = ad::bce_mean(pred, gt_masks.at(s), eps);
        total = total.defined() ? ad::add(total, term) : term;
    }
    return total;
}

Var total_loss(const LossWeights& w, const LossComponents& parts) {
    Var total = ad::scale(parts.pixel, w.pixel);
    total = ad::add(total, ad::scale(parts.perceptual, w.perceptual));
    total = ad::add(total, ad::scale(parts.adversarial, w.adversarial));
    total = ad::add(total, ad::scale(parts.illumination, w.illumination));
    total = ad::add(total, ad::scale(parts.identity, w.identity));
    total = ad::add(total, ad::scale(parts.mask, w.mask));
    return total;
}

Var margin_softmax_loss(const Var& embeddings, const Var& class_weights,
                        const std::vector<long>& labels, const MarginConfig& cfg) {
    if (cfg.margin < 0 || cfg.margin >= M_PI / 2)
        throw InvalidState("margin must lie in [0, pi/2)");
    if (cfg.scale <= 0) throw InvalidState("margin scale must be positive");
    if (class_weights.value().dim(0) != cfg.num_classes)
        throw ShapeMismatch("class weight rows != num_classes");
    for (long lab : labels)
        if (lab < 0 || lab >= cfg.num_classes)
            throw LabelOutOfRange("label " + std::to_string(lab) + " outside [0, " +
                                  std::to_string(cfg.num_classes) + ")");
    Var cosines = ad::linear(embeddings, class_weights, Var());
    Var logits = ad::margin_cos_logits(cosines, labels, cfg.scale, cfg.margin);
    return ad::softmax_xent(logits, labels);
}

}  // namespace defront
