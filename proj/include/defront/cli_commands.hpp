#pragma once

#include <string>

#include "defront/experiment_config.hpp"

namespace defront::cli {

// Each command returns a process exit code and writes a manifest of its
// inputs, outputs and the config echo under the output directory.

int cmd_synth(const ExperimentConfig& cfg);

// Aligns every record in a train/eval list; writes aligned images, an
// aligned list and the cached alignment-error sidecar. With use_detector the
// landmarks come from the external service (DETECTOR_ENDPOINT/DETECTOR_KEY)
// instead of the list annotations.
int cmd_align(const ExperimentConfig& cfg, const std::string& list_path,
              const std::string& subdir = "aligned", bool use_detector = false,
              const std::string& point_mapping_path = "");

int cmd_calibrate(const ExperimentConfig& cfg, const std::string& errors_path);

int cmd_train_defront(const ExperimentConfig& cfg, const std::string& pair_manifest);

int cmd_defrontalize(const ExperimentConfig& cfg, const std::string& defront_ckpt,
                     const std::string& aligned_list, int max_images = 8);

int cmd_train_embed(const ExperimentConfig& cfg, const std::string& aligned_list,
                    const std::string& errors_path, const std::string& defront_ckpt,
                    const std::string& forbidden_list = "");

int cmd_eval(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
             const std::string& test_pairs, const std::string& gallery_path,
             const std::string& eval_list, const std::string& pose_annotations = "");

int cmd_bench(const ExperimentConfig& cfg, const std::string& backbone_ckpt,
              const std::string& defront_ckpt);

// Helpers shared with tests and the acceptance suite.
DefrontModel load_defront_model(const std::string& ckpt_path);
std::pair<EmbeddingBackbone, Tensor> load_backbone(const std::string& ckpt_path);

}  // namespace defront::cli
