#include "defront/experiment_config.hpp"

#include <fstream>
#include <set>

#include "defront/errors.hpp"

using nlohmann::json;

namespace defront {

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw ConfigInvalid("unknown key '" + key + "' in " + where);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("bad value for '") + key + "': " + e.what());
    }
}

}  // namespace

LandmarkSet ExperimentConfig::frontal_template() const {
    if (geometry.template_points.empty()) return frontal_template_112();
    LandmarkSet t;
    for (size_t i = 0; i < kFrontalNames.size(); ++i)
        t.points[kFrontalNames[i]] = {geometry.template_points[i][0], geometry.template_points[i][1]};
    return t;
}

ExperimentConfig parse_experiment_config(const json& j) {
    reject_unknown(j, {"seed", "out", "workers", "device", "data", "geometry", "nets", "losses",
                       "augmentation", "training", "evaluation"},
                   "config root");
    ExperimentConfig cfg;
    cfg.echo = j;
    cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
    cfg.out_dir = get_or<std::string>(j, "out", cfg.out_dir);
    cfg.workers = get_or<int>(j, "workers", cfg.workers);
    cfg.device = get_or<std::string>(j, "device", cfg.device);
    if (cfg.device != "cpu") throw ConfigInvalid("only device 'cpu' is supported in this build");

    if (j.contains("data")) {
        const json& d = j.at("data");
        reject_unknown(d, {"n_identities", "poses", "dataset_dir"}, "data");
        cfg.data.n_identities = get_or<int>(d, "n_identities", cfg.data.n_identities);
        cfg.data.poses = get_or<std::vector<int>>(d, "poses", cfg.data.poses);
        cfg.data.dataset_dir = get_or<std::string>(d, "dataset_dir", cfg.data.dataset_dir);
    }
    if (j.contains("geometry")) {
        const json& g = j.at("geometry");
        reject_unknown(g, {"template"}, "geometry");
        if (g.contains("template")) {
            auto pts = g.at("template").get<std::vector<std::array<double, 2>>>();
            if (pts.size() != 5) throw ConfigInvalid("geometry.template needs exactly 5 [x,y] points");
            cfg.geometry.template_points = pts;
        }
    }
    if (j.contains("nets")) {
        const json& n = j.at("nets");
        reject_unknown(n,
                       {"preset", "flow_levels", "flow_base_width", "generator_width",
                        "discriminator_width", "backbone_width", "backbone_depth", "embedding_dim",
                        "attention", "flow_param_budget"},
                       "nets");
        cfg.nets_preset = get_or<std::string>(n, "preset", cfg.nets_preset);
        if (cfg.nets_preset == "desk")
            cfg.nets = NetConfig::desk();
        else if (cfg.nets_preset == "full")
            cfg.nets = NetConfig::full_scale();
        else
            throw ConfigInvalid("nets.preset must be 'desk' or 'full'");
        cfg.nets.flow_levels = get_or<int>(n, "flow_levels", cfg.nets.flow_levels);
        cfg.nets.flow_base_width = get_or<int>(n, "flow_base_width", cfg.nets.flow_base_width);
        cfg.nets.generator_width = get_or<int>(n, "generator_width", cfg.nets.generator_width);
        cfg.nets.discriminator_width = get_or<int>(n, "discriminator_width", cfg.nets.discriminator_width);
        cfg.nets.backbone_width = get_or<int>(n, "backbone_width", cfg.nets.backbone_width);
        cfg.nets.backbone_depth = get_or<int>(n, "backbone_depth", cfg.nets.backbone_depth);
        cfg.nets.embedding_dim = get_or<long>(n, "embedding_dim", cfg.nets.embedding_dim);
        cfg.nets.attention = get_or<bool>(n, "attention", cfg.nets.attention);
        cfg.nets.flow_param_budget = get_or<long>(n, "flow_param_budget", cfg.nets.flow_param_budget);
        if (cfg.nets.flow_levels < 3 || cfg.nets.flow_base_width < 1 || cfg.nets.generator_width < 1 ||
            cfg.nets.discriminator_width < 1 || cfg.nets.backbone_width < 1 ||
            cfg.nets.backbone_depth < 1 || cfg.nets.embedding_dim < 1)
            throw ConfigInvalid("nets sizes must be positive (flow_levels >= 3)");
    }
    if (j.contains("losses")) {
        const json& l = j.at("losses");
        reject_unknown(l,
                       {"pixel", "perceptual", "adversarial", "illumination", "identity", "mask",
                        "perceptual_layer_weights", "reduction", "margin_scale", "margin"},
                       "losses");
        cfg.losses.pixel = get_or<double>(l, "pixel", cfg.losses.pixel);
        cfg.losses.perceptual = get_or<double>(l, "perceptual", cfg.losses.perceptual);
        cfg.losses.adversarial = get_or<double>(l, "adversarial", cfg.losses.adversarial);
        cfg.losses.illumination = get_or<double>(l, "illumination", cfg.losses.illumination);
        cfg.losses.identity = get_or<double>(l, "identity", cfg.losses.identity);
        cfg.losses.mask = get_or<double>(l, "mask", cfg.losses.mask);
        if (l.contains("perceptual_layer_weights")) {
            auto w = l.at("perceptual_layer_weights").get<std::vector<double>>();
            if (w.size() != 5) throw ConfigInvalid("perceptual_layer_weights needs 5 values");
            std::copy(w.begin(), w.end(), cfg.losses.perceptual_layer_weights.begin());
        }
        std::string red = get_or<std::string>(l, "reduction", "mean");
        if (red == "mean")
            cfg.losses.reduction = L1Reduction::mean;
        else if (red == "sum")
            cfg.losses.reduction = L1Reduction::sum;
        else
            throw ConfigInvalid("losses.reduction must be 'mean' or 'sum'");
        cfg.margin.scale = get_or<double>(l, "margin_scale", cfg.margin.scale);
        cfg.margin.margin = get_or<double>(l, "margin", cfg.margin.margin);
        for (double v : {cfg.losses.pixel, cfg.losses.perceptual, cfg.losses.adversarial,
                         cfg.losses.illumination, cfg.losses.identity, cfg.losses.mask})
            if (v < 0) throw ConfigInvalid("loss weights must be non-negative");
    }
    if (j.contains("augmentation")) {
        const json& a = j.at("augmentation");
        reject_unknown(a, {"target_fraction", "apply_probability"}, "augmentation");
        cfg.augmentation.target_fraction = get_or<double>(a, "target_fraction", 0.2);
        cfg.augmentation.apply_probability = get_or<double>(a, "apply_probability", 1.0);
        if (cfg.augmentation.target_fraction < 0 || cfg.augmentation.target_fraction > 1 ||
            cfg.augmentation.apply_probability < 0 || cfg.augmentation.apply_probability > 1)
            throw ConfigInvalid("augmentation fractions must lie in [0,1]");
    }
    if (j.contains("training")) {
        const json& t = j.at("training");
        reject_unknown(t, {"defront", "embed"}, "training");
        if (t.contains("defront")) {
            const json& d = t.at("defront");
            reject_unknown(d,
                           {"epochs", "flow_pretrain_epochs", "batch_size", "adam_lr", "flow_adam_lr",
                            "smoothness_weight", "generator_loss"},
                           "training.defront");
            cfg.defront_train.epochs = get_or<int>(d, "epochs", cfg.defront_train.epochs);
            cfg.defront_train.flow_pretrain_epochs =
                get_or<int>(d, "flow_pretrain_epochs", cfg.defront_train.flow_pretrain_epochs);
            cfg.defront_train.batch_size = get_or<int>(d, "batch_size", cfg.defront_train.batch_size);
            cfg.defront_train.adam_lr = get_or<double>(d, "adam_lr", cfg.defront_train.adam_lr);
            cfg.defront_train.flow_adam_lr = get_or<double>(d, "flow_adam_lr", cfg.defront_train.flow_adam_lr);
            cfg.defront_train.smoothness_weight =
                get_or<double>(d, "smoothness_weight", cfg.defront_train.smoothness_weight);
            std::string gl = get_or<std::string>(d, "generator_loss", "non_saturating");
            if (gl == "non_saturating")
                cfg.defront_train.gen_mode = GanGeneratorMode::non_saturating;
            else if (gl == "saturating")
                cfg.defront_train.gen_mode = GanGeneratorMode::saturating;
            else
                throw ConfigInvalid("generator_loss must be 'non_saturating' or 'saturating'");
            if (cfg.defront_train.epochs < 1) throw ConfigInvalid("defront epochs must be >= 1");
        }
        if (t.contains("embed")) {
            const json& e = t.at("embed");
            reject_unknown(e,
                           {"epochs", "batch_size", "accumulation_steps", "lr0", "poly_power",
                            "weight_decay", "momentum"},
                           "training.embed");
            cfg.embed_train.epochs = get_or<int>(e, "epochs", cfg.embed_train.epochs);
            cfg.embed_train.batch_size = get_or<int>(e, "batch_size", cfg.embed_train.batch_size);
            cfg.embed_train.accumulation_steps =
                get_or<int>(e, "accumulation_steps", cfg.embed_train.accumulation_steps);
            cfg.embed_train.lr0 = get_or<double>(e, "lr0", cfg.embed_train.lr0);
            cfg.embed_train.poly_power = get_or<double>(e, "poly_power", cfg.embed_train.poly_power);
            cfg.embed_train.weight_decay = get_or<double>(e, "weight_decay", cfg.embed_train.weight_decay);
            cfg.embed_train.momentum = get_or<double>(e, "momentum", cfg.embed_train.momentum);
        }
    }
    if (j.contains("evaluation")) {
        const json& e = j.at("evaluation");
        reject_unknown(e, {"folds", "bench_iterations", "bench_warmup", "csv_export"}, "evaluation");
        cfg.evaluation.folds = get_or<int>(e, "folds", cfg.evaluation.folds);
        cfg.evaluation.bench_iterations = get_or<int>(e, "bench_iterations", cfg.evaluation.bench_iterations);
        cfg.evaluation.bench_warmup = get_or<int>(e, "bench_warmup", cfg.evaluation.bench_warmup);
        cfg.evaluation.csv_export = get_or<bool>(e, "csv_export", cfg.evaluation.csv_export);
    }

    // propagate shared knobs
    cfg.defront_train.seed = cfg.seed;
    cfg.embed_train.seed = cfg.seed;
    cfg.embed_train.margin = cfg.margin;
    cfg.embed_train.policy = cfg.augmentation;
    cfg.embed_train.policy.rng_seed = cfg.seed;
    cfg.defront_train.loss_weights = cfg.losses;
    if (cfg.data.dataset_dir.empty()) cfg.data.dataset_dir = cfg.out_dir + "/dataset";
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputMissing("config file not found: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_experiment_config(j);
}

}  // namespace defront
