#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "defront/autodiff.hpp"
#include "defront/geometry.hpp"
#include "defront/rng.hpp"

namespace defront {

// Scales used by every multi-scale head and loss.
inline const std::vector<int> kScales = {28, 56, 112};

struct NetConfig {
    long flow_param_budget = 7'000'000;
    bool enforce_flow_budget = false;  // full preset turns this on
    int flow_levels = 3;               // encoder/decoder depth; >= 3 so heads cover 28/56/112
    int flow_base_width = 8;
    int generator_width = 8;
    int discriminator_width = 8;
    int backbone_width = 8;
    int backbone_depth = 1;            // residual blocks per stage
    long embedding_dim = 512;
    bool attention = false;

    static NetConfig desk();
    static NetConfig full_scale();
};

nlohmann::json net_config_to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);

struct NamedParam {
    std::string name;
    ad::Var var;
};

// Owns the named parameters of one model; names are stable across runs so
// checkpoints can be matched tensor by tensor.
class ParamStore {
public:
    ad::Var make(const std::string& name, Tensor init, bool trainable = true);
    std::vector<NamedParam>& items() { return items_; }
    const std::vector<NamedParam>& items() const { return items_; }
    long count() const;
    void load(const std::map<std::string, Tensor>& tensors);
    std::vector<std::pair<std::string, Tensor>> snapshot() const;
    std::vector<ad::Var> vars() const;

private:
    std::vector<NamedParam> items_;
};

struct Conv {
    ad::Var w, b;
    int stride = 1, pad = 1;
    Conv() = default;
    // with_bias=false for convs feeding a norm layer, where a bias is a dead
    // parameter (instance norm removes per-plane shifts exactly)
    Conv(ParamStore& ps, const std::string& name, long in_ch, long out_ch, int k,
         int stride, int pad, Rng& rng, bool near_zero_init = false, bool with_bias = true);
    ad::Var operator()(const ad::Var& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

struct InstanceNorm {
    ad::Var gamma, beta;
    InstanceNorm() = default;
    InstanceNorm(ParamStore& ps, const std::string& name, long ch);
    ad::Var operator()(const ad::Var& x) const { return ad::instance_norm(x, gamma, beta); }
};

struct Linear {
    ad::Var w, b;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, long in_dim, long out_dim, Rng& rng);
    ad::Var operator()(const ad::Var& x) const { return ad::linear(x, w, b); }
};

// Per-pixel displacement fields at one scale.
struct FlowField {
    Tensor flow;  // [N,2,s,s]
    int scale = 0;
};

// Encoder/decoder flow estimator with a flow head at each of the three
// output scales. Heads are zero-initialized so training starts from the
// identity warp.
class FlowNetwork {
public:
    FlowNetwork(const NetConfig& cfg, const std::string& name, Rng& rng);

    // x: [N,3,112,112] -> {28,56,112} -> [N,2,s,s]
    std::map<int, ad::Var> forward(const ad::Var& x) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    long parameter_count() const { return params_.count(); }
    const std::string& name() const { return name_; }

private:
    std::string name_;
    int levels_;
    std::vector<Conv> enc_a_, enc_b_;
    std::vector<Conv> dec_;
    std::map<int, Conv> heads_;
    ParamStore params_;
};

// Images and masks synthesized at the three scales.
struct MultiScaleOutput {
    std::map<int, ad::Var> images;  // tanh-bounded, [-1,1]
    std::map<int, ad::Var> masks;   // sigmoid-bounded, [0,1]
    void validate() const;          // exactly {28,56,112}, masks in [0,1]
};

// U-Net style generator; each decoder stage consumes the flow-warped input
// pyramid and emits an image head and a mask head.
class Generator {
public:
    Generator(const NetConfig& cfg, Rng& rng);

    // frontal_half: [N,3,112,112], warped: flow-warped input pyramid per scale
    MultiScaleOutput forward(const ad::Var& frontal_half,
                             const std::map<int, ad::Var>& warped) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    bool attention_;
    Conv enc1_, enc1b_, enc2_, enc2b_, enc3_, enc3b_, mid_;
    InstanceNorm in1_, in2_, in3_, inm_;
    Conv dec28_, dec56_, dec112_;
    InstanceNorm ind28_, ind56_, ind112_;
    Conv att28_, att56_, att112_;
    std::map<int, Conv> img_heads_, mask_heads_;
    ParamStore params_;
};

// PatchGAN-style discriminator, sigmoid probability map.
class Discriminator {
public:
    Discriminator(const NetConfig& cfg, Rng& rng);
    ad::Var forward(const ad::Var& image112) const;  // [N,1,14,14] in (0,1)
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    Conv c1_, c2_, c3_, c4_;
    InstanceNorm n2_, n3_;
    ParamStore params_;
};

// Residual embedding backbone; global average pooling makes it usable at
// any input resolution, the alignment contract fixes 112 in the pipeline.
class EmbeddingBackbone {
public:
    EmbeddingBackbone(const NetConfig& cfg, Rng& rng);

    ad::Var forward(const ad::Var& images) const;  // [N,3,H,W] -> [N,D] unit rows
    long embedding_dim() const { return dim_; }

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    struct Block {
        Conv c1, c2;
        InstanceNorm n1, n2;
    };
    struct Stage {
        Conv down;
        InstanceNorm down_norm;
        std::vector<Block> blocks;
    };
    long dim_;
    Conv stem_;
    InstanceNorm stem_norm_;
    std::vector<Stage> stages_;
    Linear head_;
    ParamStore params_;
};

// Unit-norm feature vector produced by the backbone.
struct EmbeddingVector {
    std::vector<double> values;
    bool is_unit(double tol = 1e-5) const;
};

// Runs the backbone without building a graph; input must be 112x112.
EmbeddingVector extract_embedding(const EmbeddingBackbone& backbone, const Image& aligned112);
std::vector<EmbeddingVector> extract_embeddings(const EmbeddingBackbone& backbone,
                                                const std::vector<Image>& aligned112);

// Pluggable network exposing named intermediate activations, used by the
// perceptual and identity losses.
class FeatureTapNetwork {
public:
    virtual ~FeatureTapNetwork() = default;
    virtual std::vector<std::string> tap_names() const = 0;
    virtual std::map<std::string, ad::Var> taps(const ad::Var& image) const = 0;
};

std::map<std::string, ad::Var> feature_net_taps(const FeatureTapNetwork& net, const ad::Var& image);

extern const std::vector<std::string> kPerceptualTapNames;  // conv1_1 .. conv5_1
extern const std::vector<std::string> kIdentityTapNames;    // fc2, pool

// Small frozen nets with seeded random weights; stand-ins for the published
// pretrained feature extractors, which are external artifacts.
class SeededPerceptualNet : public FeatureTapNetwork {
public:
    explicit SeededPerceptualNet(std::uint64_t seed);
    std::vector<std::string> tap_names() const override { return kPerceptualTapNames; }
    std::map<std::string, ad::Var> taps(const ad::Var& image) const override;

private:
    Conv c1_, c2_, c3_, c4_, c5_;
    ParamStore params_;
};

class SeededIdentityNet : public FeatureTapNetwork {
public:
    explicit SeededIdentityNet(std::uint64_t seed);
    std::vector<std::string> tap_names() const override { return kIdentityTapNames; }
    std::map<std::string, ad::Var> taps(const ad::Var& image) const override;

private:
    Conv c1_, c2_, c3_;
    Linear fc1_, fc2_;
    ParamStore params_;
};

// The four adapted FFWM sub-models plus everything needed to run the
// defrontalization pipeline end to end.
class DefrontModel {
public:
    DefrontModel(const NetConfig& cfg, std::uint64_t seed);

    const NetConfig& config() const { return cfg_; }
    FlowNetwork& flow_forward_net() { return *flow_fwd_; }
    FlowNetwork& flow_backward_net() { return *flow_bwd_; }
    Generator& generator() { return *gen_; }
    Discriminator& discriminator() { return *disc_; }
    const FlowNetwork& flow_forward_net() const { return *flow_fwd_; }
    const FlowNetwork& flow_backward_net() const { return *flow_bwd_; }
    const Generator& generator() const { return *gen_; }
    const Discriminator& discriminator() const { return *disc_; }

    // Full synthesis pass: flows from the half face, warped input pyramid,
    // generator heads. x: [N,3,112,112] in [-1,1].
    struct SynthResult {
        MultiScaleOutput output;
        std::map<int, ad::Var> forward_flows;
        std::map<int, ad::Var> warped_pyramid;
    };
    SynthResult synth(const ad::Var& frontal_half) const;

    std::vector<std::pair<std::string, Tensor>> snapshot() const;
    void load_snapshot(const std::map<std::string, Tensor>& tensors);
    std::vector<NamedParam> all_params();

private:
    NetConfig cfg_;
    std::unique_ptr<FlowNetwork> flow_fwd_, flow_bwd_;
    std::unique_ptr<Generator> gen_;
    std::unique_ptr<Discriminator> disc_;
};

// Differentiable image pyramid at {28,56,112} from a 112 input.
std::map<int, ad::Var> image_pyramid(const ad::Var& x112);

}  // namespace defront
