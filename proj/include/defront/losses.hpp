#pragma once

#include <array>
#include <map>
#include <vector>

#include "defront/autodiff.hpp"
#include "defront/nets.hpp"

namespace defront {

enum class L1Reduction { mean, sum };  // per-scale mean keeps magnitudes resolution-independent

struct LossWeights {
    double pixel = 10.0;         // lambda0
    double perceptual = 1.0;     // lambda1
    double adversarial = 0.1;    // lambda2
    double illumination = 1.0;   // lambda3
    double identity = 1.0;       // lambda4
    double mask = 1.0;           // lambda5
    std::array<double, 5> perceptual_layer_weights = {1.0, 0.5, 0.25, 0.25, 0.125};
    L1Reduction reduction = L1Reduction::mean;
};

struct MarginConfig {
    double scale = 64.0;
    double margin = 0.5;  // radians, in [0, pi/2)
    long num_classes = 0;
};

using ScaleMap = std::map<int, ad::Var>;

// Sum over scales of the reduced L1 between synthesized and ground-truth images.
ad::Var pixel_loss(const ScaleMap& synth, const ScaleMap& gt,
                   L1Reduction reduction = L1Reduction::mean);

// Weighted L1 over the five perceptual taps.
ad::Var perceptual_loss(const FeatureTapNetwork& net, const ad::Var& synth112, const ad::Var& gt112,
                        const std::array<double, 5>& weights = {1.0, 0.5, 0.25, 0.25, 0.125});

enum class GanGeneratorMode { non_saturating, saturating };

struct AdversarialTerms {
    ad::Var disc_term;  // discriminator minimizes
    ad::Var gen_term;   // generator minimizes
};

// disc_term = -[mean log d_real + mean log(1 - d_fake)];
// gen_term defaults to the non-saturating -mean log d_fake.
AdversarialTerms adversarial_loss(const ad::Var& d_real, const ad::Var& d_fake,
                                  GanGeneratorMode mode = GanGeneratorMode::non_saturating,
                                  double eps = 1e-7);

// Sum over scales of L1 between the back-warped synthesis and the input frontal.
ad::Var illumination_preserving_loss(const ScaleMap& warped, const ScaleMap& input_frontal,
                                     L1Reduction reduction = L1Reduction::mean);

// L1 over the fc2 and pool taps of the identity feature network.
ad::Var identity_preserving_loss(const FeatureTapNetwork& identity_net,
                                 const ad::Var& synth112, const ad::Var& gt112);

// Sum over scales of mean BCE between predicted and ground-truth masks.
ad::Var mask_loss(const ScaleMap& pred_masks, const ScaleMap& gt_masks, double eps = 1e-7);

struct LossComponents {
    ad::Var pixel, perceptual, adversarial, illumination, identity, mask;
};

ad::Var total_loss(const LossWeights& weights, const LossComponents& parts);

// Additive angular margin softmax. embeddings:[N,D] and class_weights:[K,D]
// must have unit rows.
ad::Var margin_softmax_loss(const ad::Var& embeddings, const ad::Var& class_weights,
                            const std::vector<long>& labels, const MarginConfig& cfg);

}  // namespace defront
