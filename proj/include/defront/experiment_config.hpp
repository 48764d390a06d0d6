#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "defront/augmentation.hpp"
#include "defront/losses.hpp"
#include "defront/nets.hpp"
#include "defront/training.hpp"

namespace defront {

// One structured config file drives every command; unknown keys are
// rejected so typos fail loudly instead of silently using defaults.
struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "runs/default";
    int workers = 1;
    std::string device = "cpu";

    struct DataSection {
        int n_identities = 64;
        std::vector<int> poses = {0, 15, -15, 90, -90};
        std::string dataset_dir;  // defaults to <out>/dataset
    } data;

    struct GeometrySection {
        std::vector<std::array<double, 2>> template_points;  // optional 5-point override
    } geometry;

    NetConfig nets = NetConfig::desk();
    std::string nets_preset = "desk";

    LossWeights losses;
    MarginConfig margin;

    AugmentationPolicy augmentation;

    DefrontTrainConfig defront_train;
    EmbedTrainConfig embed_train;

    struct EvaluationSection {
        int folds = 10;
        int bench_iterations = 100;
        int bench_warmup = 10;
        bool csv_export = false;
    } evaluation;

    nlohmann::json echo;  // the raw file content, for manifests

    LandmarkSet frontal_template() const;
};

ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const nlohmann::json& j);

}  // namespace defront
