#include "defront/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "defront/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace defront {

using ad::Var;

double poly_lr(double lr0, long step, long total_steps, double power) {
    if (step < 0 || step > total_steps || total_steps <= 0)
        throw InvalidState("poly_lr: step outside [0, total_steps]");
    double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * std::pow(frac, power);
}

// ---------------------------------------------------------------- optimizers

SGD::SGD(std::vector<Var> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& p : params_) velocity_.push_back(Tensor::zeros(p.value().shape()));
}

void SGD::step(double lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        const Tensor& g = p.grad();
        Tensor& vel = velocity_[i];
        Tensor& val = p.value();
        for (long k = 0; k < val.size(); ++k) {
            double grad = g[k] + weight_decay_ * val[k];
            vel[k] = momentum_ * vel[k] + grad;
            val[k] -= lr * vel[k];
        }
    }
}

void SGD::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p.value().shape()));
        v_.push_back(Tensor::zeros(p.value().shape()));
    }
}

void Adam::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        const Tensor& g = p.grad();
        Tensor& val = p.value();
        for (long k = 0; k < val.size(); ++k) {
            m_[i][k] = beta1_ * m_[i][k] + (1 - beta1_) * g[k];
            v_[i][k] = beta2_ * v_[i][k] + (1 - beta2_) * g[k] * g[k];
            val[k] -= lr_ * (m_[i][k] / bc1) / (std::sqrt(v_[i][k] / bc2) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

std::vector<std::pair<std::string, Tensor>> Adam::state(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t i = 0; i < params_.size(); ++i) {
        out.push_back({prefix + ".m" + std::to_string(i), m_[i]});
        out.push_back({prefix + ".v" + std::to_string(i), v_[i]});
    }
    out.push_back({prefix + ".t", Tensor::scalar(static_cast<double>(t_))});
    return out;
}

void Adam::load_state(const std::string& prefix, const std::map<std::string, Tensor>& tensors) {
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i] = tensors.at(prefix + ".m" + std::to_string(i));
        v_[i] = tensors.at(prefix + ".v" + std::to_string(i));
    }
    t_ = static_cast<long>(tensors.at(prefix + ".t").item());
}

// ---------------------------------------------------------------- metrics

void TrainMetrics::log(long step, std::map<std::string, double> values) {
    if (!rows_.empty() && step <= rows_.back().step)
        throw InvalidState("metrics steps must be strictly increasing");
    for (const auto& [k, v] : values)
        if (!std::isfinite(v)) throw NonFiniteLoss("non-finite metric '" + k + "' at step " + std::to_string(step));
    rows_.push_back({step, std::move(values)});
}

double TrainMetrics::first(const std::string& key) const {
    for (const auto& r : rows_)
        if (r.values.count(key)) return r.values.at(key);
    throw InvalidState("metric not found: " + key);
}

double TrainMetrics::last(const std::string& key) const {
    for (auto it = rows_.rbegin(); it != rows_.rend(); ++it)
        if (it->values.count(key)) return it->values.at(key);
    throw InvalidState("metric not found: " + key);
}

void TrainMetrics::write_jsonl(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IOFailure("cannot write metrics: " + path);
    for (const auto& r : rows_) {
        json j;
        j["step"] = r.step;
        for (const auto& [k, v] : r.values) j[k] = v;
        f << j.dump() << "\n";
    }
}

// ---------------------------------------------------------------- data prep

namespace {

Tensor to_signed_chw(const Image& img) {
    Tensor t = img.to_chw_tensor();
    for (long i = 0; i < t.size(); ++i) t[i] = t[i] * 2.0 - 1.0;
    return t;
}

Tensor stack_batch(const std::vector<const Tensor*>& items) {
    long N = static_cast<long>(items.size());
    std::vector<long> shape = items[0]->shape();
    shape.insert(shape.begin(), N);
    Tensor out(shape);
    long stride = items[0]->size();
    for (long i = 0; i < N; ++i)
        std::copy(items[static_cast<size_t>(i)]->data(), items[static_cast<size_t>(i)]->data() + stride,
                  out.data() + i * stride);
    return out;
}

std::map<int, Var> constant_pyramid(const Tensor& batch112) {
    return image_pyramid(ad::constant(batch112));
}

void check_finite(const Var& loss, const char* what) {
    if (!std::isfinite(loss.value().item()))
        throw NonFiniteLoss(std::string(what) + " became non-finite; aborting");
}

}  // namespace

std::vector<PairTensors> prepare_pair_tensors(const std::vector<FacePairRecord>& records) {
    std::vector<PairTensors> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        Image frontal = load_ppm(r.frontal_path);
        Image profile = load_ppm(r.profile_path);
        AlignedFace af = align_frontal(frontal, r.frontal_landmarks);
        AlignedFace ap = align_profile(profile, r.profile_landmarks, af);
        // the visible mouth corner names the face side to bisect
        BisectSide side = r.profile_landmarks.has("mouth_right") ? BisectSide::right : BisectSide::left;
        AlignedFace half = bisect_horizontal(af, side);

        PairTensors p;
        p.half = to_signed_chw(half.image);
        p.profile = to_signed_chw(ap.image);
        Image mask = warp_validity_mask(profile.height(), profile.width(), ap.transform);
        p.mask = mask.to_chw_tensor();
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------- flow pretraining

namespace {

// photometric L1 across scales; smoothness added when weight > 0
Var flow_photometric(const FlowNetwork& net, const Var& src, const std::map<int, Var>& src_pyr,
                     const std::map<int, Var>& dst_pyr, double smooth_weight, Var* smooth_out) {
    auto flows = net.forward(src);
    Var photo;
    Var smooth;
    for (int s : kScales) {
        Var warped = ad::warp_bilinear(src_pyr.at(s), flows.at(s));
        Var term = ad::mean_abs_diff(warped, dst_pyr.at(s));
        photo = photo.defined() ? ad::add(photo, term) : term;
        if (smooth_weight > 0) {
            Var sm = ad::first_diff_l1(flows.at(s));
            smooth = smooth.defined() ? ad::add(smooth, sm) : sm;
        }
    }
    if (smooth_out) *smooth_out = smooth;
    return photo;
}

double eval_photometric(DefrontModel& model, const std::vector<PairTensors>& pairs, int batch_size) {
    ad::NoGradGuard ng;
    double total = 0;
    long count = 0;
    for (size_t i = 0; i < pairs.size(); i += static_cast<size_t>(batch_size)) {
        std::vector<const Tensor*> halves, profiles;
        for (size_t k = i; k < std::min(pairs.size(), i + static_cast<size_t>(batch_size)); ++k) {
            halves.push_back(&pairs[k].half);
            profiles.push_back(&pairs[k].profile);
        }
        Var half = ad::constant(stack_batch(halves));
        Var prof = ad::constant(stack_batch(profiles));
        auto half_pyr = image_pyramid(half);
        auto prof_pyr = image_pyramid(prof);
        Var fwd = flow_photometric(model.flow_forward_net(), half, half_pyr, prof_pyr, 0, nullptr);
        Var bwd = flow_photometric(model.flow_backward_net(), prof, prof_pyr, half_pyr, 0, nullptr);
        total += (fwd.value().item() + bwd.value().item()) * static_cast<double>(halves.size());
        count += static_cast<long>(halves.size());
    }
    return total / static_cast<double>(2 * count);
}

}  // namespace

FlowPretrainResult pretrain_flows(DefrontModel& model, const std::vector<PairTensors>& pairs,
                                  const DefrontTrainConfig& cfg) {
    if (pairs.empty()) throw DataEmpty("pretrain_flows: no pairs");
    FlowPretrainResult result;
    result.initial_photometric = eval_photometric(model, pairs, cfg.batch_size);

    std::vector<Var> params = model.flow_forward_net().params().vars();
    for (const auto& v : model.flow_backward_net().params().vars()) params.push_back(v);
    Adam opt(params, cfg.flow_adam_lr, cfg.adam_beta1, cfg.adam_beta2);

    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    long step = 0;
    long images_seen = 0;
    auto t_start = std::chrono::steady_clock::now();
    for (int epoch = 0; epoch < cfg.flow_pretrain_epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed ^ (0x5bd1e995ULL * static_cast<std::uint64_t>(epoch + 1)));
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;  // permutation per epoch, not cumulative
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
        for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.batch_size)) {
            std::vector<const Tensor*> halves, profiles;
            for (size_t k = i; k < std::min(order.size(), i + static_cast<size_t>(cfg.batch_size)); ++k) {
                halves.push_back(&pairs[order[k]].half);
                profiles.push_back(&pairs[order[k]].profile);
            }
            Var half = ad::constant(stack_batch(halves));
            Var prof = ad::constant(stack_batch(profiles));
            auto half_pyr = image_pyramid(half);
            auto prof_pyr = image_pyramid(prof);

            Var smooth_f, smooth_b;
            Var photo_f = flow_photometric(model.flow_forward_net(), half, half_pyr, prof_pyr,
                                           cfg.smoothness_weight, &smooth_f);
            Var photo_b = flow_photometric(model.flow_backward_net(), prof, prof_pyr, half_pyr,
                                           cfg.smoothness_weight, &smooth_b);
            Var total = ad::add(photo_f, photo_b);
            if (smooth_f.defined())
                total = ad::add(total, ad::scale(ad::add(smooth_f, smooth_b), cfg.smoothness_weight));
            check_finite(total, "flow pretraining loss");

            opt.zero_grad();
            ad::backward(total);
            opt.step();

            images_seen += static_cast<long>(halves.size());
            double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            result.metrics.log(step++, {{"photometric_fwd", photo_f.value().item()},
                                        {"photometric_bwd", photo_b.value().item()},
                                        {"flow_total", total.value().item()},
                                        {"lr", cfg.flow_adam_lr},
                                        {"throughput_img_s", images_seen / std::max(elapsed, 1e-9)}});
        }
    }
    result.final_photometric = eval_photometric(model, pairs, cfg.batch_size);
    return result;
}

// ---------------------------------------------------------------- defront GAN

namespace {

std::map<int, Var> mask_pyramid(const Tensor& mask_batch) {
    // binary at every scale: box-filter then re-threshold
    std::map<int, Var> pyr;
    Var m112 = ad::constant(mask_batch);
    Var m56 = ad::avg_pool2(m112);
    Var m28 = ad::avg_pool2(m56);
    for (auto& [s, v] : std::map<int, Var>{{112, m112}, {56, m56}, {28, m28}}) {
        Tensor t = v.value();
        for (long i = 0; i < t.size(); ++i) t[i] = t[i] >= 0.5 ? 1.0 : 0.0;
        pyr[s] = ad::constant(std::move(t));
    }
    return pyr;
}

double eval_pixel_loss(DefrontModel& model, const std::vector<PairTensors>& pairs, int batch_size) {
    ad::NoGradGuard ng;
    double total = 0;
    long count = 0;
    for (size_t i = 0; i < pairs.size(); i += static_cast<size_t>(batch_size)) {
        std::vector<const Tensor*> halves, profiles;
        for (size_t k = i; k < std::min(pairs.size(), i + static_cast<size_t>(batch_size)); ++k) {
            halves.push_back(&pairs[k].half);
            profiles.push_back(&pairs[k].profile);
        }
        auto synth = model.synth(ad::constant(stack_batch(halves)));
        auto gt_pyr = constant_pyramid(stack_batch(profiles));
        Var pl = pixel_loss(synth.output.images, gt_pyr);
        total += pl.value().item() * static_cast<double>(halves.size());
        count += static_cast<long>(halves.size());
    }
    return total / static_cast<double>(count);
}

json defront_config_echo(const DefrontTrainConfig& cfg, const NetConfig& net) {
    json j;
    j["epochs"] = cfg.epochs;
    j["flow_pretrain_epochs"] = cfg.flow_pretrain_epochs;
    j["adam_lr"] = cfg.adam_lr;
    j["flow_adam_lr"] = cfg.flow_adam_lr;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["smoothness_weight"] = cfg.smoothness_weight;
    j["loss_weights"] = {cfg.loss_weights.pixel,        cfg.loss_weights.perceptual,
                         cfg.loss_weights.adversarial,  cfg.loss_weights.illumination,
                         cfg.loss_weights.identity,     cfg.loss_weights.mask};
    j["net"] = net_config_to_json(net);
    return j;
}

}  // namespace

DefrontTrainResult train_defront(DefrontModel& model, const std::vector<PairTensors>& pairs,
                                 const DefrontTrainConfig& cfg, const FeatureTapNetwork& perceptual_net,
                                 const FeatureTapNetwork& identity_net) {
    if (pairs.empty()) throw DataEmpty("train_defront: no pairs");

    std::vector<Var> g_params = model.generator().params().vars();
    for (const auto& v : model.flow_forward_net().params().vars()) g_params.push_back(v);
    for (const auto& v : model.flow_backward_net().params().vars()) g_params.push_back(v);
    Adam opt_g(g_params, cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2);
    Adam opt_d(model.discriminator().params().vars(), cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2);

    long step = 0;
    int start_epoch = 0;
    if (!cfg.resume_from.empty()) {
        Checkpoint ck = load_checkpoint(cfg.resume_from);
        auto tensors = ck.tensor_map();
        model.load_snapshot(tensors);
        opt_g.load_state("opt_g", tensors);
        opt_d.load_state("opt_d", tensors);
        step = static_cast<long>(ck.step);
        start_epoch = ck.config.value("epochs_completed", 0);
    }

    DefrontTrainResult result;
    result.initial_pixel_loss = eval_pixel_loss(model, pairs, cfg.batch_size);

    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    long images_seen = 0;
    auto t_start = std::chrono::steady_clock::now();
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed ^ (0xc2b2ae3dULL * static_cast<std::uint64_t>(epoch + 1)));
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;  // permutation per epoch, not cumulative
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.batch_size)) {
            std::vector<const Tensor*> halves, profiles, masks;
            for (size_t k = i; k < std::min(order.size(), i + static_cast<size_t>(cfg.batch_size)); ++k) {
                halves.push_back(&pairs[order[k]].half);
                profiles.push_back(&pairs[order[k]].profile);
                masks.push_back(&pairs[order[k]].mask);
            }
            Var half = ad::constant(stack_batch(halves));
            Tensor gt_batch = stack_batch(profiles);
            auto gt_pyr = constant_pyramid(gt_batch);
            auto gt_masks = mask_pyramid(stack_batch(masks));
            Var gt112 = gt_pyr.at(112);

            // generator step: full six-term objective
            auto synth = model.synth(half);
            Var d_real = model.discriminator().forward(gt112);
            Var d_fake = model.discriminator().forward(synth.output.images.at(112));
            auto adv = adversarial_loss(d_real, d_fake, cfg.gen_mode);

            // back-warp the synthesis and compare against the input frontal
            auto back_flows = model.flow_backward_net().forward(synth.output.images.at(112));
            std::map<int, Var> back_warped;
            for (int s : kScales)
                back_warped[s] = ad::warp_bilinear(synth.output.images.at(s), back_flows.at(s));
            auto half_pyr = image_pyramid(half);

            LossComponents parts;
            parts.pixel = pixel_loss(synth.output.images, gt_pyr, cfg.loss_weights.reduction);
            parts.perceptual = perceptual_loss(perceptual_net, synth.output.images.at(112), gt112,
                                               cfg.loss_weights.perceptual_layer_weights);
            parts.adversarial = adv.gen_term;
            parts.illumination =
                illumination_preserving_loss(back_warped, half_pyr, cfg.loss_weights.reduction);
            parts.identity = identity_preserving_loss(identity_net, synth.output.images.at(112), gt112);
            parts.mask = mask_loss(synth.output.masks, gt_masks);
            Var g_total = total_loss(cfg.loss_weights, parts);
            check_finite(g_total, "generator loss");

            opt_g.zero_grad();
            ad::backward(g_total);
            opt_g.step();

            // discriminator step on the detached synthesis
            Var d_real2 = model.discriminator().forward(gt112);
            Var d_fake2 = model.discriminator().forward(ad::detach(synth.output.images.at(112)));
            auto adv2 = adversarial_loss(d_real2, d_fake2, cfg.gen_mode);
            check_finite(adv2.disc_term, "discriminator loss");
            opt_d.zero_grad();
            ad::backward(adv2.disc_term);
            opt_d.step();

            double real_acc = 0, fake_acc = 0;
            for (long k = 0; k < d_real2.value().size(); ++k) real_acc += d_real2.value()[k] > 0.5;
            for (long k = 0; k < d_fake2.value().size(); ++k) fake_acc += d_fake2.value()[k] < 0.5;
            double disc_acc = 0.5 * (real_acc / static_cast<double>(d_real2.value().size()) +
                                     fake_acc / static_cast<double>(d_fake2.value().size()));

            images_seen += static_cast<long>(halves.size());
            double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            result.metrics.log(step++, {{"loss_pixel", parts.pixel.value().item()},
                                        {"loss_perceptual", parts.perceptual.value().item()},
                                        {"loss_adversarial", parts.adversarial.value().item()},
                                        {"loss_illumination", parts.illumination.value().item()},
                                        {"loss_identity", parts.identity.value().item()},
                                        {"loss_mask", parts.mask.value().item()},
                                        {"loss_total", g_total.value().item()},
                                        {"loss_disc", adv2.disc_term.value().item()},
                                        {"disc_accuracy", disc_acc},
                                        {"lr", cfg.adam_lr},
                                        {"throughput_img_s", images_seen / std::max(elapsed, 1e-9)}});
        }

        if (!cfg.checkpoint_dir.empty()) {
            fs::create_directories(cfg.checkpoint_dir);
            auto tensors = model.snapshot();
            for (auto& t : opt_g.state("opt_g")) tensors.push_back(std::move(t));
            for (auto& t : opt_d.state("opt_d")) tensors.push_back(std::move(t));
            json echo = defront_config_echo(cfg, model.config());
            echo["epochs_completed"] = epoch + 1;
            Checkpoint ckpt = checkpoint_from(tensors, echo, static_cast<std::uint64_t>(step));
            result.final_checkpoint =
                (fs::path(cfg.checkpoint_dir) / ("defront_epoch" + std::to_string(epoch) + ".ckpt")).string();
            save_checkpoint(result.final_checkpoint, ckpt);
        }
    }
    result.final_pixel_loss = eval_pixel_loss(model, pairs, cfg.batch_size);
    return result;
}

// ---------------------------------------------------------------- embedding training

double accumulate_margin_grads(const EmbeddingBackbone& backbone, const ad::Var& class_weights,
                               const MarginConfig& cfg, const std::vector<Tensor>& micro_images,
                               const std::vector<std::vector<long>>& micro_labels) {
    if (micro_images.empty() || micro_images.size() != micro_labels.size())
        throw InvalidState("accumulate_margin_grads: inconsistent micro-batches");
    const double inv_k = 1.0 / static_cast<double>(micro_images.size());
    double mean_loss = 0;
    for (size_t i = 0; i < micro_images.size(); ++i) {
        Var emb = backbone.forward(ad::constant(micro_images[i]));
        Var w_norm = ad::l2_normalize_rows(class_weights);
        Var loss = margin_softmax_loss(emb, w_norm, micro_labels[i], cfg);
        check_finite(loss, "margin loss");
        ad::backward(ad::scale(loss, inv_k));
        mean_loss += loss.value().item() * inv_k;
    }
    return mean_loss;
}

EmbedTrainResult train_embeddings(EmbeddingBackbone& backbone, const std::vector<EmbedTrainItem>& items,
                                  const EmbedTrainConfig& cfg, const DefrontModel* defront,
                                  const std::vector<std::string>& forbidden_paths) {
    if (items.empty()) throw DataEmpty("train_embeddings: no items");
    if (defront && !cfg.policy.calibrated)
        throw PolicyUncalibrated("train_embeddings: augmentation policy not calibrated");
    {
        std::set<std::string> forbidden(forbidden_paths.begin(), forbidden_paths.end());
        for (const auto& it : items)
            if (forbidden.count(it.path))
                throw InvalidState("training item is on the evaluation list: " + it.path);
    }

    long num_classes = 0;
    for (const auto& it : items) num_classes = std::max(num_classes, it.label + 1);
    MarginConfig margin = cfg.margin;
    margin.num_classes = num_classes;

    // preload aligned images
    std::vector<Image> images;
    images.reserve(items.size());
    for (const auto& it : items) {
        Image img = load_ppm(it.path);
        if (img.height() != kAlignedSize || img.width() != kAlignedSize)
            throw ShapeMismatch("train_embeddings: item is not 112x112 aligned: " + it.path);
        images.push_back(std::move(img));
    }

    Rng init_rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
    Var class_weights(Tensor::randn({num_classes, backbone.embedding_dim()}, init_rng,
                                    1.0 / std::sqrt(static_cast<double>(backbone.embedding_dim()))),
                      true);

    std::vector<Var> params = backbone.params().vars();
    params.push_back(class_weights);
    SGD opt(params, cfg.momentum, cfg.weight_decay);

    const long n = static_cast<long>(items.size());
    const long micro_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const long steps_per_epoch = (micro_per_epoch + cfg.accumulation_steps - 1) / cfg.accumulation_steps;
    const long total_steps = steps_per_epoch * cfg.epochs;

    EmbedTrainResult result;
    AugmentationPolicy policy = cfg.policy;

    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    long opt_step = 0;
    auto t_start = std::chrono::steady_clock::now();
    long images_seen = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed ^ (0x9e3779b9ULL * static_cast<std::uint64_t>(epoch + 1)));
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;  // permutation per epoch, not cumulative
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        long applied = 0;
        size_t pos = 0;
        while (pos < order.size()) {
            std::vector<Tensor> micro_images;
            std::vector<std::vector<long>> micro_labels;
            for (int a = 0; a < cfg.accumulation_steps && pos < order.size(); ++a) {
                long bsz = std::min<long>(cfg.batch_size, static_cast<long>(order.size() - pos));
                Tensor batch({bsz, 3, kAlignedSize, kAlignedSize});
                std::vector<long> labels(static_cast<size_t>(bsz));
                for (long b = 0; b < bsz; ++b, ++pos) {
                    size_t idx = order[pos];
                    const auto& item = items[idx];
                    Image sample = images[idx];
                    if (defront) {
                        // draw index keyed by (epoch, original index): decisions are
                        // independent of iteration order
                        std::uint64_t draw =
                            static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(n) + idx;
                        AlignedFace face;
                        face.image = sample;
                        face.side = FaceSide::full;
                        AugmentationDecision dec;
                        sample = augmented_sample(face, item.align_error, policy, *defront, draw, &dec);
                        if (dec.apply) ++applied;
                    }
                    Tensor chw = to_signed_chw(sample);
                    std::copy(chw.data(), chw.data() + chw.size(), batch.data() + b * chw.size());
                    labels[static_cast<size_t>(b)] = item.label;
                }
                micro_images.push_back(std::move(batch));
                micro_labels.push_back(std::move(labels));
                images_seen += bsz;
            }
            opt.zero_grad();
            double loss = accumulate_margin_grads(backbone, class_weights, margin, micro_images, micro_labels);
            double lr = poly_lr(cfg.lr0, opt_step, total_steps, cfg.poly_power);
            opt.step(lr);
            ++opt_step;

            double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            result.metrics.log(opt_step, {{"loss_margin", loss},
                                          {"lr", lr},
                                          {"throughput_img_s", images_seen / std::max(elapsed, 1e-9)}});
        }
        result.epoch_aug_fraction.push_back(static_cast<double>(applied) / static_cast<double>(n));
    }
    result.class_weights = class_weights.value();
    return result;
}

Checkpoint checkpoint_from(const std::vector<std::pair<std::string, Tensor>>& tensors,
                           nlohmann::json config_echo, std::uint64_t step) {
    Checkpoint ckpt;
    ckpt.config = std::move(config_echo);
    ckpt.step = step;
    ckpt.tensors = tensors;
    return ckpt;
}

}  // namespace defront
