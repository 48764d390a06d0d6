#include "defront/cli_commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "defront/augmentation.hpp"
#include "defront/checkpoint.hpp"
#include "defront/data.hpp"
#include "defront/detector_client.hpp"
#include "defront/errors.hpp"
#include "defront/evaluation.hpp"
#include "defront/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace defront::cli {

namespace {

void write_manifest(const ExperimentConfig& cfg, const std::string& command, json inputs,
                    json outputs) {
    fs::create_directories(cfg.out_dir);
    json m;
    m["command"] = command;
    m["inputs"] = std::move(inputs);
    m["outputs"] = std::move(outputs);
    m["config_echo"] = cfg.echo;
    m["seed"] = cfg.seed;
    m["timestamp_utc"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    std::ofstream f(fs::path(cfg.out_dir) / (command + "_manifest.json"));
    f << m.dump(2) << "\n";
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty() || !fs::exists(path)) throw InputMissing(what + " not found: " + path);
}

json embed_config_echo(const ExperimentConfig& cfg) {
    const auto& e = cfg.embed_train;
    return {{"lr0", e.lr0},
            {"poly_power", e.poly_power},
            {"weight_decay", e.weight_decay},
            {"momentum", e.momentum},
            {"epochs", e.epochs},
            {"batch_size", e.batch_size},
            {"accumulation_steps", e.accumulation_steps},
            {"margin_scale", e.margin.scale},
            {"margin", e.margin.margin},
            {"net", net_config_to_json(cfg.nets)}};
}

}  // namespace

int cmd_synth(const ExperimentConfig& cfg) {
    auto paths = build_synthetic_dataset(cfg.data.dataset_dir, cfg.data.n_identities, cfg.data.poses,
                                         cfg.seed);
    write_manifest(cfg, "synth",
                   {{"n_identities", cfg.data.n_identities}, {"poses", cfg.data.poses}},
                   {{"root", paths.root},
                    {"pair_manifest", paths.pair_manifest},
                    {"train_list", paths.train_list},
                    {"eval_list", paths.eval_list},
                    {"test_pairs", paths.test_pairs},
                    {"test_pairs_extreme", paths.test_pairs_extreme},
                    {"gallery", paths.gallery}});
    std::cerr << "synth: wrote dataset under " << paths.root << "\n";
    return 0;
}

int cmd_align(const ExperimentConfig& cfg, const std::string& list_path, const std::string& subdir,
              bool use_detector, const std::string& point_mapping_path) {
    require_file(list_path, "image list");
    auto records = load_train_list(list_path);
    LandmarkSet tmpl = cfg.frontal_template();
    std::string out_dir = (fs::path(cfg.out_dir) / subdir).string();
    fs::create_directories(out_dir);

    std::unique_ptr<DetectorClient> detector;
    if (use_detector) {
        DetectorConfig dcfg = DetectorConfig::from_env();
        if (dcfg.endpoint.empty())
            throw ConfigInvalid("--detect requires DETECTOR_ENDPOINT in the environment");
        if (!point_mapping_path.empty()) dcfg.point_mapping = load_point_mapping(point_mapping_path);
        detector = std::make_unique<DetectorClient>(dcfg, make_http_transport(dcfg.endpoint));
    }

    std::vector<TrainImageRecord> aligned_records;
    std::vector<std::pair<std::string, double>> errors;
    for (const auto& r : records) {
        Image img = load_ppm(r.path);
        LandmarkSet lms = detector ? detector->fetch_landmarks(img) : r.landmarks;
        AlignedFace face = align_frontal(img, lms, tmpl);
        std::string out_path = (fs::path(out_dir) / fs::path(r.path).filename()).string();
        save_ppm(face.image, out_path);
        TrainImageRecord ar = r;
        ar.path = out_path;
        ar.landmarks.points.clear();
        for (const auto& name : kFrontalNames)
            ar.landmarks.points[name] = face.aligned_landmarks.at(name);
        aligned_records.push_back(std::move(ar));
        errors.push_back({out_path, face.residual_error});
    }
    std::string aligned_list = (fs::path(out_dir) / "aligned_list.jsonl").string();
    std::string errors_path = (fs::path(out_dir) / "errors.jsonl").string();
    save_train_list(aligned_list, aligned_records);
    save_error_cache(errors_path, errors, landmark_template_hash(tmpl));
    write_manifest(cfg, "align_" + subdir, {{"list", list_path}},
                   {{"aligned_list", aligned_list}, {"errors", errors_path}, {"count", records.size()}});
    std::cerr << "align: " << records.size() << " images -> " << out_dir << "\n";
    return 0;
}

int cmd_calibrate(const ExperimentConfig& cfg, const std::string& errors_path) {
    require_file(errors_path, "error cache");
    auto cache = load_error_cache(errors_path, landmark_template_hash(cfg.frontal_template()));
    std::vector<double> errors;
    errors.reserve(cache.size());
    for (const auto& [p, e] : cache) errors.push_back(e);
    AugmentationPolicy policy = cfg.augmentation;
    policy.rng_seed = cfg.seed;
    CalibrationReport report = calibrate_policy(policy, errors);
    fs::create_directories(cfg.out_dir);
    std::string report_path = (fs::path(cfg.out_dir) / "calibration_report.json").string();
    std::ofstream f(report_path);
    f << report.to_json() << "\n";
    write_manifest(cfg, "calibrate", {{"errors", errors_path}},
                   {{"report", report_path}, {"threshold", report.threshold}});
    std::cerr << "calibrate: threshold " << report.threshold << " realized "
              << report.realized_fraction << (report.degenerate_warning ? " (degenerate)" : "")
              << "\n";
    return 0;
}

int cmd_train_defront(const ExperimentConfig& cfg, const std::string& pair_manifest) {
    require_file(pair_manifest, "pair manifest");
    auto records = load_pair_manifest(pair_manifest);
    if (records.empty()) throw DataEmpty("pair manifest is empty");
    auto pairs = prepare_pair_tensors(records);

    DefrontModel model(cfg.nets, cfg.seed);
    DefrontTrainConfig tcfg = cfg.defront_train;
    tcfg.checkpoint_dir = (fs::path(cfg.out_dir) / "checkpoints").string();

    auto flow_result = pretrain_flows(model, pairs, tcfg);
    std::cerr << "flow pretrain: photometric " << flow_result.initial_photometric << " -> "
              << flow_result.final_photometric << "\n";

    SeededPerceptualNet pnet(cfg.seed ^ 0x1111);
    SeededIdentityNet idnet(cfg.seed ^ 0x2222);
    auto result = train_defront(model, pairs, tcfg, pnet, idnet);
    std::cerr << "defront train: pixel loss " << result.initial_pixel_loss << " -> "
              << result.final_pixel_loss << "\n";

    fs::create_directories(cfg.out_dir);
    std::string metrics_path = (fs::path(cfg.out_dir) / "defront_metrics.jsonl").string();
    std::string flow_metrics_path = (fs::path(cfg.out_dir) / "flow_metrics.jsonl").string();
    result.metrics.write_jsonl(metrics_path);
    flow_result.metrics.write_jsonl(flow_metrics_path);

    write_manifest(cfg, "train_defront", {{"pair_manifest", pair_manifest}},
                   {{"checkpoint", result.final_checkpoint},
                    {"metrics", metrics_path},
                    {"flow_metrics", flow_metrics_path},
                    {"initial_pixel_loss", result.initial_pixel_loss},
                    {"final_pixel_loss", result.final_pixel_loss},
                    {"initial_photometric", flow_result.initial_photometric},
                    {"final_photometric", flow_result.final_photometric}});
    return 0;
}

DefrontModel load_defront_model(const std::string& ckpt_path) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (!ckpt.config.contains("net"))
        throw CheckpointIOFailure("checkpoint has no net config echo: " + ckpt_path);
    DefrontModel model(net_config_from_json(ckpt.config["net"]), /*seed=*/0);
    model.load_snapshot(ckpt.tensor_map());
    return model;
}

std::pair<EmbeddingBackbone, Tensor> load_backbone(const std::string& ckpt_path) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (!ckpt.config.contains("net"))
        throw CheckpointIOFailure("checkpoint has no net config echo: " + ckpt_path);
    NetConfig net = net_config_from_json(ckpt.config["net"]);
    Rng rng(0);
    EmbeddingBackbone backbone(net, rng);
    auto tensors = ckpt.tensor_map();
    backbone.params().load(tensors);
    Tensor class_weights;
    auto it = tensors.find("head.class_weights");
    if (it != tensors.end()) class_weights = it->second;
    return {std::move(backbone), std::move(class_weights)};
}

int cmd_defrontalize(const ExperimentConfig& cfg, const std::string& defront_ckpt,
                     const std::string& aligned_list, int max_images) {
    require_file(defront_ckpt, "defrontalization checkpoint");
    require_file(aligned_list, "aligned list");
    DefrontModel model = load_defront_model(defront_ckpt);
    auto records = load_train_list(aligned_list);
    std::string out_dir = (fs::path(cfg.out_dir) / "defrontalized").string();
    fs::create_directories(out_dir);

    int written = 0;
    json outputs = json::array();
    for (const auto& r : records) {
        if (written >= max_images) break;
        AlignedFace face;
        face.image = load_ppm(r.path);
        face.side = FaceSide::full;
        for (BisectSide side : {BisectSide::left, BisectSide::right}) {
            DefrontalizedSample sample = apply_defrontalization(face, side, model);
            std::string tag = side == BisectSide::left ? "_left" : "_right";
            std::string stem = fs::path(r.path).stem().string();
            std::string img_path = (fs::path(out_dir) / (stem + tag + ".ppm")).string();
            std::string mask_path = (fs::path(out_dir) / (stem + tag + "_mask.pgm")).string();
            save_ppm(sample.image, img_path);
            save_ppm(sample.mask, mask_path);
            outputs.push_back(img_path);
        }
        ++written;
    }
    write_manifest(cfg, "defrontalize",
                   {{"checkpoint", defront_ckpt}, {"aligned_list", aligned_list}},
                   {{"images", outputs}});
    std::cerr << "defrontalize: wrote " << outputs.size() << " images to " << out_dir << "\n";
    return 0;
}

int cmd_train_embed(const ExperimentConfig& cfg, const std::string& aligned_list,
                    const std::string& errors_path, const std::string& defront_ckpt,
                    const std::string& forbidden_list) {
    require_file(aligned_list, "aligned list");
    require_file(errors_path, "error cache");
    auto records = load_train_list(aligned_list);
    auto cache = load_error_cache(errors_path, landmark_template_hash(cfg.frontal_template()));
    std::map<std::string, double> error_of(cache.begin(), cache.end());

    // identity ids -> dense labels, sorted for determinism
    std::set<std::string> ids;
    for (const auto& r : records) ids.insert(r.identity_id);
    std::map<std::string, long> label_of;
    long next = 0;
    for (const auto& id : ids) label_of[id] = next++;

    std::vector<EmbedTrainItem> items;
    for (const auto& r : records) {
        auto it = error_of.find(r.path);
        if (it == error_of.end())
            throw InvalidState("no cached alignment error for " + r.path +
                               "; run align before train-embed");
        items.push_back({r.path, label_of[r.identity_id], it->second});
    }

    std::vector<std::string> forbidden;
    if (!forbidden_list.empty()) {
        for (const auto& p : load_test_pairs(forbidden_list)) {
            forbidden.push_back(p.path_a);
            forbidden.push_back(p.path_b);
        }
    }

    EmbedTrainConfig tcfg = cfg.embed_train;
    std::unique_ptr<DefrontModel> defront;
    if (!defront_ckpt.empty()) {
        require_file(defront_ckpt, "defrontalization checkpoint");
        defront = std::make_unique<DefrontModel>(load_defront_model(defront_ckpt));
        std::vector<double> errors;
        for (const auto& it : items) errors.push_back(it.align_error);
        calibrate_policy(tcfg.policy, errors);
    }

    Rng rng(cfg.seed);
    EmbeddingBackbone backbone(cfg.nets, rng);
    auto result = train_embeddings(backbone, items, tcfg, defront.get(), forbidden);

    fs::create_directories(cfg.out_dir);
    auto tensors = backbone.params().snapshot();
    tensors.push_back({"head.class_weights", result.class_weights});
    Checkpoint ckpt = checkpoint_from(tensors, embed_config_echo(cfg),
                                      static_cast<std::uint64_t>(result.metrics.rows().size()));
    std::string ckpt_path = (fs::path(cfg.out_dir) / "backbone.ckpt").string();
    save_checkpoint(ckpt_path, ckpt);
    std::string metrics_path = (fs::path(cfg.out_dir) / "embed_metrics.jsonl").string();
    result.metrics.write_jsonl(metrics_path);

    json fractions = result.epoch_aug_fraction;
    write_manifest(cfg, "train_embed",
                   {{"aligned_list", aligned_list},
                    {"errors", errors_path},
                    {"defront_checkpoint", defront_ckpt}},
                   {{"checkpoint", ckpt_path},
                    {"metrics", metrics_path},
                    {"epoch_aug_fraction", fractions},
                    {"num_classes", next}});
    std::cerr << "train-embed: " << items.size() << " items, " << next << " classes -> " << ckpt_path
              << "\n";
    return 0;
}

namespace {

// The evaluation-time pipeline: raw image -> frontal alignment -> embedding.
Embedder make_embedder(const EmbeddingBackbone& backbone, const std::string& eval_list,
                       const LandmarkSet& tmpl) {
    auto records = std::make_shared<std::map<std::string, TrainImageRecord>>();
    for (auto& r : load_train_list(eval_list)) (*records)[r.path] = r;
    return [&backbone, records, tmpl](const std::string& path) {
        auto it = records->find(path);
        if (it == records->end()) throw EmbeddingFailure("no landmarks for " + path);
        Image img = load_ppm(path);
        AlignedFace face = align_frontal(img, it->second.landmarks, tmpl);
        return extract_embedding(backbone, face.image).values;
    };
}

}  // namespace

int cmd_eval(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
             const std::string& test_pairs, const std::string& gallery_path,
             const std::string& eval_list, const std::string& pose_annotations) {
    require_file(backbone_ckpt, "backbone checkpoint");
    require_file(eval_list, "eval list");
    auto [backbone, class_weights] = load_backbone(backbone_ckpt);
    Embedder raw_embedder = make_embedder(backbone, eval_list, cfg.frontal_template());
    fs::create_directories(cfg.out_dir);
    json outputs;

    // extract all embeddings up front, parallel across images
    std::vector<std::string> all_paths;
    if (!test_pairs.empty()) {
        require_file(test_pairs, "test pairs");
        for (const auto& p : load_test_pairs(test_pairs)) {
            all_paths.push_back(p.path_a);
            all_paths.push_back(p.path_b);
        }
    }
    if (!gallery_path.empty()) {
        require_file(gallery_path, "gallery");
        for (const auto& e : load_gallery(gallery_path).entries) all_paths.push_back(e.path);
    }
    auto cache = std::make_shared<std::map<std::string, std::vector<double>>>(
        embed_paths(all_paths, raw_embedder, cfg.workers));
    Embedder embedder = [cache](const std::string& path) { return cache->at(path); };

    if (!test_pairs.empty()) {
        auto pairs = load_test_pairs(test_pairs);
        VerificationResult vr = verify_10fold(pairs, embedder, cfg.evaluation.folds);
        json j;
        j["fold_accuracies"] = vr.fold_accuracies;
        j["fold_thresholds"] = vr.fold_thresholds;
        j["mean_accuracy"] = vr.mean_accuracy;
        j["pairs"] = pairs.size();
        std::string path = (fs::path(cfg.out_dir) / "verification_report.json").string();
        std::ofstream f(path);
        f << j.dump(2) << "\n";
        outputs["verification_report"] = path;
        std::cerr << "eval: verification mean accuracy " << vr.mean_accuracy << "\n";
    }

    if (!gallery_path.empty()) {
        IdentityGallery gallery = load_gallery(gallery_path);
        IdentificationResult ir = identify_top1(gallery, gallery, embedder);
        json j;
        for (const auto& [bin, acc] : ir.per_pose_bin) j["per_pose"][std::to_string(bin)] = acc;
        j["average"] = ir.average;
        j["empty_bins"] = ir.empty_bins;
        std::string path = (fs::path(cfg.out_dir) / "identification_report.json").string();
        std::ofstream f(path);
        f << j.dump(2) << "\n";
        outputs["identification_report"] = path;
        if (cfg.evaluation.csv_export) {
            std::string csv_path = (fs::path(cfg.out_dir) / "identification_report.csv").string();
            std::ofstream csv(csv_path);
            csv << "abs_yaw_deg,top1_accuracy\n";
            for (const auto& [bin, acc] : ir.per_pose_bin) csv << bin << "," << acc << "\n";
            csv << "average," << ir.average << "\n";
            outputs["identification_csv"] = csv_path;
        }
        std::cerr << "eval: identification average " << ir.average << "\n";
    }

    if (!pose_annotations.empty()) {
        require_file(pose_annotations, "pose annotations");
        std::ifstream f(pose_annotations);
        std::vector<PosePairAnnotation> anns;
        std::string line;
        int line_no = 0;
        while (std::getline(f, line)) {
            ++line_no;
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception& e) {
                throw ParseError(std::string("invalid pose annotation: ") + e.what(), line_no);
            }
            PosePairAnnotation a;
            a.pitch_a = j.at("pitch_a");
            a.yaw_a = j.at("yaw_a");
            a.roll_a = j.at("roll_a");
            a.pitch_b = j.at("pitch_b");
            a.yaw_b = j.at("yaw_b");
            a.roll_b = j.at("roll_b");
            anns.push_back(a);
        }
        PoseStats stats = pose_pair_stats(anns);
        json j = {{"pitch", stats.pitch}, {"yaw", stats.yaw}, {"roll", stats.roll}};
        std::string path = (fs::path(cfg.out_dir) / "pose_stats.json").string();
        std::ofstream out(path);
        out << j.dump(2) << "\n";
        outputs["pose_stats"] = path;
    }

    write_manifest(cfg, "eval",
                   {{"backbone", backbone_ckpt},
                    {"test_pairs", test_pairs},
                    {"gallery", gallery_path},
                    {"eval_list", eval_list}},
                   outputs);
    return 0;
}

int cmd_bench(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
              const std::string& defront_ckpt) {
    require_file(backbone_ckpt, "backbone checkpoint");
    require_file(defront_ckpt, "defrontalization checkpoint");
    auto [backbone, class_weights] = load_backbone(backbone_ckpt);
    DefrontModel defront = load_defront_model(defront_ckpt);

    SyntheticFaceSpec spec;
    spec.identity_seed = cfg.seed;
    SyntheticFace face = generate_synthetic_face(spec);
    AlignedFace aligned = align_frontal(face.image, face.landmarks, cfg.frontal_template());

    std::vector<std::pair<std::string, Pipeline>> pipelines;
    pipelines.push_back({"embed_only", [&]() { extract_embedding(backbone, aligned.image); }});
    pipelines.push_back({"defront_embed", [&]() {
                             auto sample = apply_defrontalization(aligned, BisectSide::left, defront);
                             extract_embedding(backbone, sample.image);
                         }});
    BenchmarkResult result =
        benchmark_inference(pipelines, cfg.evaluation.bench_iterations, cfg.evaluation.bench_warmup);

    json j;
    j["hardware"] = result.hardware;
    for (const auto& e : result.entries)
        j["pipelines"][e.name] = {{"mean_ms", e.mean_ms}, {"std_ms", e.std_ms}, {"iterations", e.iterations}};
    j["ratio_defront_embed_over_embed_only"] =
        result.entries[1].mean_ms / result.entries[0].mean_ms;
    fs::create_directories(cfg.out_dir);
    std::string path = (fs::path(cfg.out_dir) / "benchmark_report.json").string();
    std::ofstream f(path);
    f << j.dump(2) << "\n";
    write_manifest(cfg, "bench", {{"backbone", backbone_ckpt}, {"defront", defront_ckpt}},
                   {{"report", path}});
    std::cerr << "bench: " << result.entries[0].name << " " << result.entries[0].mean_ms << " ms, "
              << result.entries[1].name << " " << result.entries[1].mean_ms << " ms\n";
    return 0;
}

}  // namespace defront::cli
