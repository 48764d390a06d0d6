#include "defront/nets.hpp"

#include <algorithm>
#include <cmath>

#include "defront/errors.hpp"

namespace defront {

using ad::Var;

NetConfig NetConfig::desk() {
    NetConfig c;
    c.flow_levels = 3;
    c.flow_base_width = 8;
    c.generator_width = 8;
    c.discriminator_width = 8;
    c.backbone_width = 8;
    c.backbone_depth = 1;
    c.embedding_dim = 128;
    c.attention = false;
    c.enforce_flow_budget = false;
    return c;
}

NetConfig NetConfig::full_scale() {
    NetConfig c;
    c.flow_levels = 4;
    c.flow_base_width = 64;
    c.generator_width = 64;
    c.discriminator_width = 64;
    c.backbone_width = 64;
    c.backbone_depth = 6;
    c.embedding_dim = 512;
    c.attention = true;
    c.enforce_flow_budget = true;
    return c;
}

nlohmann::json net_config_to_json(const NetConfig& cfg) {
    return {{"flow_param_budget", cfg.flow_param_budget},
            {"enforce_flow_budget", cfg.enforce_flow_budget},
            {"flow_levels", cfg.flow_levels},
            {"flow_base_width", cfg.flow_base_width},
            {"generator_width", cfg.generator_width},
            {"discriminator_width", cfg.discriminator_width},
            {"backbone_width", cfg.backbone_width},
            {"backbone_depth", cfg.backbone_depth},
            {"embedding_dim", cfg.embedding_dim},
            {"attention", cfg.attention}};
}

NetConfig net_config_from_json(const nlohmann::json& j) {
    NetConfig cfg;
    cfg.flow_param_budget = j.value("flow_param_budget", cfg.flow_param_budget);
    cfg.enforce_flow_budget = j.value("enforce_flow_budget", cfg.enforce_flow_budget);
    cfg.flow_levels = j.value("flow_levels", cfg.flow_levels);
    cfg.flow_base_width = j.value("flow_base_width", cfg.flow_base_width);
    cfg.generator_width = j.value("generator_width", cfg.generator_width);
    cfg.discriminator_width = j.value("discriminator_width", cfg.discriminator_width);
    cfg.backbone_width = j.value("backbone_width", cfg.backbone_width);
    cfg.backbone_depth = j.value("backbone_depth", cfg.backbone_depth);
    cfg.embedding_dim = j.value("embedding_dim", cfg.embedding_dim);
    cfg.attention = j.value("attention", cfg.attention);
    return cfg;
}

ad::Var ParamStore::make(const std::string& name, Tensor init, bool trainable) {
    for (const auto& it : items_)
        if (it.name == name) throw InvalidState("duplicate parameter name: " + name);
    Var v(std::move(init), trainable);
    items_.push_back({name, v});
    return v;
}

long ParamStore::count() const {
    long n = 0;
    for (const auto& it : items_) n += it.var.value().size();
    return n;
}

void ParamStore::load(const std::map<std::string, Tensor>& tensors) {
    for (auto& it : items_) {
        auto found = tensors.find(it.name);
        if (found == tensors.end()) throw CheckpointIOFailure("checkpoint missing tensor: " + it.name);
        if (!(found->second.shape() == it.var.value().shape()))
            throw CheckpointIOFailure("shape mismatch for " + it.name + ": " +
                                      shape_str(found->second.shape()) + " vs " +
                                      shape_str(it.var.value().shape()));
        it.var.value() = found->second;
    }
}

std::vector<std::pair<std::string, Tensor>> ParamStore::snapshot() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(items_.size());
    for (const auto& it : items_) out.push_back({it.name, it.var.value()});
    return out;
}

std::vector<ad::Var> ParamStore::vars() const {
    std::vector<ad::Var> out;
    out.reserve(items_.size());
    for (const auto& it : items_) out.push_back(it.var);
    return out;
}

Conv::Conv(ParamStore& ps, const std::string& name, long in_ch, long out_ch, int k,
           int stride_, int pad_, Rng& rng, bool near_zero_init, bool with_bias)
    : stride(stride_), pad(pad_) {
    // near-zero heads start flow estimation at (almost) the identity warp
    // while keeping gradients alive below them
    double std = near_zero_init ? 1e-3 : std::sqrt(2.0 / static_cast<double>(in_ch * k * k));
    w = ps.make(name + ".w", Tensor::randn({out_ch, in_ch, k, k}, rng, std));
    if (with_bias) b = ps.make(name + ".b", Tensor::zeros({out_ch}));
}

InstanceNorm::InstanceNorm(ParamStore& ps, const std::string& name, long ch) {
    gamma = ps.make(name + ".gamma", Tensor::full({ch}, 1.0));
    beta = ps.make(name + ".beta", Tensor::zeros({ch}));
}

Linear::Linear(ParamStore& ps, const std::string& name, long in_dim, long out_dim, Rng& rng) {
    w = ps.make(name + ".w", Tensor::randn({out_dim, in_dim}, rng, std::sqrt(1.0 / static_cast<double>(in_dim))));
    b = ps.make(name + ".b", Tensor::zeros({out_dim}));
}

// ---------------------------------------------------------------- flow network

FlowNetwork::FlowNetwork(const NetConfig& cfg, const std::string& name, Rng& rng)
    : name_(name), levels_(cfg.flow_levels) {
    if (levels_ < 3) throw InvalidState("flow_levels must be >= 3 so heads cover {28,56,112}");
    long prev = 3;
    for (int i = 0; i < levels_; ++i) {
        long ch = static_cast<long>(cfg.flow_base_width) << i;
        enc_a_.emplace_back(params_, name + ".enc" + std::to_string(i) + "a", prev, ch, 3, 2, 1, rng);
        enc_b_.emplace_back(params_, name + ".enc" + std::to_string(i) + "b", ch, ch, 3, 1, 1, rng);
        prev = ch;
    }
    // decoder: one up-step per level back to 112, skip from the matching
    // encoder level (or the raw image at full resolution)
    long cur = prev;
    for (int k = 1; k <= levels_; ++k) {
        int j = levels_ - k - 1;
        long skip_ch = j >= 0 ? (static_cast<long>(cfg.flow_base_width) << j) : 3;
        long out_ch = j >= 0 ? skip_ch : cfg.flow_base_width;
        dec_.emplace_back(params_, name + ".dec" + std::to_string(k), cur + skip_ch, out_ch, 3, 1, 1, rng);
        cur = out_ch;
        int spatial = 112 >> (levels_ - k);
        if (spatial == 28 || spatial == 56 || spatial == 112)
            heads_.emplace(spatial, Conv(params_, name + ".head" + std::to_string(spatial),
                                         out_ch, 2, 3, 1, 1, rng, /*near_zero_init=*/true));
    }
}

std::map<int, Var> FlowNetwork::forward(const Var& x) const {
    if (x.value().ndim() != 4 || x.value().dim(2) != 112 || x.value().dim(3) != 112)
        throw ShapeMismatch("FlowNetwork: want [N,3,112,112], got " + shape_str(x.shape()));
    std::vector<Var> skips;
    Var h = x;
    for (int i = 0; i < levels_; ++i) {
        h = ad::leaky_relu(enc_a_[static_cast<size_t>(i)](h));
        h = ad::leaky_relu(enc_b_[static_cast<size_t>(i)](h));
        skips.push_back(h);
    }
    std::map<int, Var> flows;
    for (int k = 1; k <= levels_; ++k) {
        h = ad::upsample_nearest2(h);
        int j = levels_ - k - 1;
        Var skip = j >= 0 ? skips[static_cast<size_t>(j)] : x;
        h = ad::leaky_relu(dec_[static_cast<size_t>(k - 1)](ad::concat_channels({h, skip})));
        int spatial = 112 >> (levels_ - k);
        auto head = heads_.find(spatial);
        if (head != heads_.end()) flows[spatial] = head->second(h);
    }
    return flows;
}

// ---------------------------------------------------------------- generator

void MultiScaleOutput::validate() const {
    for (int s : kScales) {
        if (!images.count(s)) throw ShapeMismatch("MultiScaleOutput missing image scale " + std::to_string(s));
        if (!masks.count(s)) throw ShapeMismatch("MultiScaleOutput missing mask scale " + std::to_string(s));
    }
    if (images.size() != kScales.size() || masks.size() != kScales.size())
        throw ShapeMismatch("MultiScaleOutput must hold exactly scales {28,56,112}");
    for (const auto& [s, m] : masks)
        for (long i = 0; i < m.value().size(); ++i)
            if (m.value()[i] < 0.0 || m.value()[i] > 1.0)
                throw ShapeMismatch("mask values outside [0,1] at scale " + std::to_string(s));
}

Generator::Generator(const NetConfig& cfg, Rng& rng) : attention_(cfg.attention) {
    long w = cfg.generator_width;
    enc1_ = Conv(params_, "gen.enc1", 3, w, 3, 2, 1, rng);
    enc1b_ = Conv(params_, "gen.enc1b", w, w, 3, 1, 1, rng, false, false);
    in1_ = InstanceNorm(params_, "gen.in1", w);
    enc2_ = Conv(params_, "gen.enc2", w, 2 * w, 3, 2, 1, rng);
    enc2b_ = Conv(params_, "gen.enc2b", 2 * w, 2 * w, 3, 1, 1, rng, false, false);
    in2_ = InstanceNorm(params_, "gen.in2", 2 * w);
    enc3_ = Conv(params_, "gen.enc3", 2 * w, 4 * w, 3, 2, 1, rng);
    enc3b_ = Conv(params_, "gen.enc3b", 4 * w, 4 * w, 3, 1, 1, rng, false, false);
    in3_ = InstanceNorm(params_, "gen.in3", 4 * w);
    mid_ = Conv(params_, "gen.mid", 4 * w, 4 * w, 3, 1, 1, rng, false, false);
    inm_ = InstanceNorm(params_, "gen.inm", 4 * w);

    dec28_ = Conv(params_, "gen.dec28", 4 * w + 2 * w + 3, 2 * w, 3, 1, 1, rng, false, false);
    ind28_ = InstanceNorm(params_, "gen.ind28", 2 * w);
    dec56_ = Conv(params_, "gen.dec56", 2 * w + w + 3, w, 3, 1, 1, rng, false, false);
    ind56_ = InstanceNorm(params_, "gen.ind56", w);
    dec112_ = Conv(params_, "gen.dec112", w + 3, w, 3, 1, 1, rng, false, false);
    ind112_ = InstanceNorm(params_, "gen.ind112", w);
    if (attention_) {
        att28_ = Conv(params_, "gen.att28", 2 * w, 2 * w, 3, 1, 1, rng);
        att56_ = Conv(params_, "gen.att56", w, w, 3, 1, 1, rng);
        att112_ = Conv(params_, "gen.att112", w, w, 3, 1, 1, rng);
    }
    img_heads_.emplace(28, Conv(params_, "gen.img28", 2 * w, 3, 3, 1, 1, rng));
    img_heads_.emplace(56, Conv(params_, "gen.img56", w, 3, 3, 1, 1, rng));
    img_heads_.emplace(112, Conv(params_, "gen.img112", w, 3, 3, 1, 1, rng));
    mask_heads_.emplace(28, Conv(params_, "gen.mask28", 2 * w, 1, 3, 1, 1, rng));
    mask_heads_.emplace(56, Conv(params_, "gen.mask56", w, 1, 3, 1, 1, rng));
    mask_heads_.emplace(112, Conv(params_, "gen.mask112", w, 1, 3, 1, 1, rng));
}

MultiScaleOutput Generator::forward(const Var& x, const std::map<int, Var>& warped) const {
    for (int s : kScales)
        if (!warped.count(s)) throw ShapeMismatch("generator: warped pyramid missing scale " + std::to_string(s));
    Var e1 = ad::leaky_relu(in1_(enc1b_(ad::leaky_relu(enc1_(x)))));       // [N,w,56,56]
    Var e2 = ad::leaky_relu(in2_(enc2b_(ad::leaky_relu(enc2_(e1)))));      // [N,2w,28,28]
    Var e3 = ad::leaky_relu(in3_(enc3b_(ad::leaky_relu(enc3_(e2)))));      // [N,4w,14,14]
    Var h = ad::leaky_relu(inm_(mid_(e3)));

    MultiScaleOutput out;
    h = ad::upsample_nearest2(h);  // 28
    h = ad::leaky_relu(ind28_(dec28_(ad::concat_channels({h, e2, warped.at(28)}))));
    if (attention_) h = ad::mul(h, ad::sigmoid_(att28_(h)));
    out.images[28] = ad::tanh_(img_heads_.at(28)(h));
    out.masks[28] = ad::sigmoid_(mask_heads_.at(28)(h));

    h = ad::upsample_nearest2(h);  // 56
    h = ad::leaky_relu(ind56_(dec56_(ad::concat_channels({h, e1, warped.at(56)}))));
    if (attention_) h = ad::mul(h, ad::sigmoid_(att56_(h)));
    out.images[56] = ad::tanh_(img_heads_.at(56)(h));
    out.masks[56] = ad::sigmoid_(mask_heads_.at(56)(h));

    h = ad::upsample_nearest2(h);  // 112
    h = ad::leaky_relu(ind112_(dec112_(ad::concat_channels({h, warped.at(112)}))));
    if (attention_) h = ad::mul(h, ad::sigmoid_(att112_(h)));
    out.images[112] = ad::tanh_(img_heads_.at(112)(h));
    out.masks[112] = ad::sigmoid_(mask_heads_.at(112)(h));
    return out;
}

// ---------------------------------------------------------------- discriminator

Discriminator::Discriminator(const NetConfig& cfg, Rng& rng) {
    long w = cfg.discriminator_width;
    c1_ = Conv(params_, "disc.c1", 3, w, 3, 2, 1, rng);
    c2_ = Conv(params_, "disc.c2", w, 2 * w, 3, 2, 1, rng, false, false);
    n2_ = InstanceNorm(params_, "disc.n2", 2 * w);
    c3_ = Conv(params_, "disc.c3", 2 * w, 4 * w, 3, 2, 1, rng, false, false);
    n3_ = InstanceNorm(params_, "disc.n3", 4 * w);
    c4_ = Conv(params_, "disc.c4", 4 * w, 1, 3, 1, 1, rng);
}

Var Discriminator::forward(const Var& image112) const {
    if (image112.value().dim(2) != 112 || image112.value().dim(3) != 112)
        throw ShapeMismatch("discriminator: want 112x112 input, got " + shape_str(image112.shape()));
    Var h = ad::leaky_relu(c1_(image112));
    h = ad::leaky_relu(n2_(c2_(h)));
    h = ad::leaky_relu(n3_(c3_(h)));
    return ad::sigmoid_(c4_(h));
}

// ---------------------------------------------------------------- backbone

EmbeddingBackbone::EmbeddingBackbone(const NetConfig& cfg, Rng& rng) : dim_(cfg.embedding_dim) {
    long w = cfg.backbone_width;
    stem_ = Conv(params_, "bb.stem", 3, w, 3, 1, 1, rng, false, false);
    stem_norm_ = InstanceNorm(params_, "bb.stem_norm", w);
    long widths[3] = {w, 2 * w, 4 * w};
    long prev = w;
    for (int s = 0; s < 3; ++s) {
        Stage st;
        std::string p = "bb.s" + std::to_string(s);
        st.down = Conv(params_, p + ".down", prev, widths[s], 3, 2, 1, rng, false, false);
        st.down_norm = InstanceNorm(params_, p + ".down_norm", widths[s]);
        for (int b = 0; b < cfg.backbone_depth; ++b) {
            Block blk;
            std::string bp = p + ".b" + std::to_string(b);
            blk.c1 = Conv(params_, bp + ".c1", widths[s], widths[s], 3, 1, 1, rng, false, false);
            blk.n1 = InstanceNorm(params_, bp + ".n1", widths[s]);
            blk.c2 = Conv(params_, bp + ".c2", widths[s], widths[s], 3, 1, 1, rng, false, false);
            blk.n2 = InstanceNorm(params_, bp + ".n2", widths[s]);
            st.blocks.push_back(std::move(blk));
        }
        stages_.push_back(std::move(st));
        prev = widths[s];
    }
    head_ = Linear(params_, "bb.head", prev, dim_, rng);
}

Var EmbeddingBackbone::forward(const Var& images) const {
    if (images.value().ndim() != 4 || images.value().dim(1) != 3)
        throw ShapeMismatch("backbone: want [N,3,H,W], got " + shape_str(images.shape()));
    Var h = ad::relu(stem_norm_(stem_(images)));
    for (const auto& st : stages_) {
        h = ad::relu(st.down_norm(st.down(h)));
        for (const auto& blk : st.blocks) {
            Var r = blk.n2(blk.c2(ad::relu(blk.n1(blk.c1(h)))));
            h = ad::relu(ad::add(h, r));
        }
    }
    Var pooled = ad::global_avg_pool(h);
    return ad::l2_normalize_rows(head_(pooled));
}

bool EmbeddingVector::is_unit(double tol) const {
    double s = 0;
    for (double v : values) s += v * v;
    return std::fabs(std::sqrt(s) - 1.0) <= tol;
}

EmbeddingVector extract_embedding(const EmbeddingBackbone& backbone, const Image& aligned112) {
    auto batch = extract_embeddings(backbone, {aligned112});
    return batch[0];
}

std::vector<EmbeddingVector> extract_embeddings(const EmbeddingBackbone& backbone,
                                                const std::vector<Image>& aligned112) {
    if (aligned112.empty()) return {};
    long N = static_cast<long>(aligned112.size());
    Tensor batch({N, 3, kAlignedSize, kAlignedSize});
    for (long i = 0; i < N; ++i) {
        const Image& img = aligned112[static_cast<size_t>(i)];
        if (img.height() != kAlignedSize || img.width() != kAlignedSize || img.channels() != 3)
            throw ShapeMismatch("extract_embedding: want 112x112x3 aligned input");
        Tensor chw = img.to_chw_tensor();
        // backbone operates in [-1,1], matching the training path
        for (long k = 0; k < chw.size(); ++k) batch[i * chw.size() + k] = chw[k] * 2.0 - 1.0;
    }
    ad::NoGradGuard ng;
    Var out = backbone.forward(ad::constant(std::move(batch)));
    std::vector<EmbeddingVector> result(static_cast<size_t>(N));
    long D = out.value().dim(1);
    for (long i = 0; i < N; ++i) {
        result[static_cast<size_t>(i)].values.assign(out.value().data() + i * D,
                                                     out.value().data() + (i + 1) * D);
    }
    return result;
}

// ---------------------------------------------------------------- feature taps

const std::vector<std::string> kPerceptualTapNames = {"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"};
const std::vector<std::string> kIdentityTapNames = {"fc2", "pool"};

std::map<std::string, Var> feature_net_taps(const FeatureTapNetwork& net, const Var& image) {
    auto out = net.taps(image);
    for (const auto& name : net.tap_names())
        if (!out.count(name)) throw UnknownTap("feature net did not produce tap: " + name);
    return out;
}

SeededPerceptualNet::SeededPerceptualNet(std::uint64_t seed) {
    Rng rng(seed);
    c1_ = Conv(params_, "p.c1", 3, 4, 3, 1, 1, rng);
    c2_ = Conv(params_, "p.c2", 4, 6, 3, 2, 1, rng);
    c3_ = Conv(params_, "p.c3", 6, 8, 3, 2, 1, rng);
    c4_ = Conv(params_, "p.c4", 8, 8, 3, 2, 1, rng);
    c5_ = Conv(params_, "p.c5", 8, 8, 3, 2, 1, rng);
    for (auto& p : params_.items()) p.var.node()->requires_grad = false;  // frozen
}

std::map<std::string, Var> SeededPerceptualNet::taps(const Var& image) const {
    std::map<std::string, Var> out;
    Var h = ad::relu(ad::conv2d(image, c1_.w, c1_.b, 1, 1));
    out["conv1_1"] = h;
    h = ad::relu(ad::conv2d(h, c2_.w, c2_.b, 2, 1));
    out["conv2_1"] = h;
    h = ad::relu(ad::conv2d(h, c3_.w, c3_.b, 2, 1));
    out["conv3_1"] = h;
    h = ad::relu(ad::conv2d(h, c4_.w, c4_.b, 2, 1));
    out["conv4_1"] = h;
    h = ad::relu(ad::conv2d(h, c5_.w, c5_.b, 2, 1));
    out["conv5_1"] = h;
    return out;
}

SeededIdentityNet::SeededIdentityNet(std::uint64_t seed) {
    Rng rng(seed);
    c1_ = Conv(params_, "id.c1", 3, 6, 3, 2, 1, rng);
    c2_ = Conv(params_, "id.c2", 6, 8, 3, 2, 1, rng);
    c3_ = Conv(params_, "id.c3", 8, 8, 3, 2, 1, rng);
    fc1_ = Linear(params_, "id.fc1", 8, 16, rng);
    fc2_ = Linear(params_, "id.fc2", 16, 16, rng);
    for (auto& p : params_.items()) p.var.node()->requires_grad = false;
}

std::map<std::string, Var> SeededIdentityNet::taps(const Var& image) const {
    Var h = ad::relu(ad::conv2d(image, c1_.w, c1_.b, 2, 1));
    h = ad::relu(ad::conv2d(h, c2_.w, c2_.b, 2, 1));
    h = ad::relu(ad::conv2d(h, c3_.w, c3_.b, 2, 1));
    Var pool = ad::global_avg_pool(h);
    Var fc = ad::linear(ad::relu(ad::linear(pool, fc1_.w, fc1_.b)), fc2_.w, fc2_.b);
    return {{"pool", pool}, {"fc2", fc}};
}

// ---------------------------------------------------------------- defront model

DefrontModel::DefrontModel(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    flow_fwd_ = std::make_unique<FlowNetwork>(cfg, "flow_fwd", rng);
    flow_bwd_ = std::make_unique<FlowNetwork>(cfg, "flow_bwd", rng);
    gen_ = std::make_unique<Generator>(cfg, rng);
    disc_ = std::make_unique<Discriminator>(cfg, rng);
}

std::map<int, Var> image_pyramid(const Var& x112) {
    std::map<int, Var> pyr;
    pyr[112] = x112;
    pyr[56] = ad::avg_pool2(x112);
    pyr[28] = ad::avg_pool2(pyr[56]);
    return pyr;
}

DefrontModel::SynthResult DefrontModel::synth(const Var& frontal_half) const {
    SynthResult r;
    r.forward_flows = flow_fwd_->forward(frontal_half);
    auto pyr = image_pyramid(frontal_half);
    for (int s : kScales) r.warped_pyramid[s] = ad::warp_bilinear(pyr[s], r.forward_flows[s]);
    r.output = gen_->forward(frontal_half, r.warped_pyramid);
    return r;
}

std::vector<std::pair<std::string, Tensor>> DefrontModel::snapshot() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto* ps : {&flow_fwd_->params(), &flow_bwd_->params(), &gen_->params(), &disc_->params()})
        for (const auto& it : ps->items()) out.push_back({it.name, it.var.value()});
    return out;
}

void DefrontModel::load_snapshot(const std::map<std::string, Tensor>& tensors) {
    flow_fwd_->params().load(tensors);
    flow_bwd_->params().load(tensors);
    gen_->params().load(tensors);
    disc_->params().load(tensors);
}

std::vector<NamedParam> DefrontModel::all_params() {
    std::vector<NamedParam> out;
    for (auto* ps : {&flow_fwd_->params(), &flow_bwd_->params(), &gen_->params(), &disc_->params()})
        for (const auto& it : ps->items()) out.push_back(it);
    return out;
}

}  // namespace defront
