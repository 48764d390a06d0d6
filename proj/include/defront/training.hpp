#pragma once

#include <map>
#include <string>
#include <vector>

#include "defront/augmentation.hpp"
#include "defront/checkpoint.hpp"
#include "defront/data.hpp"
#include "defront/losses.hpp"
#include "defront/nets.hpp"

namespace defront {

// lr0 * (1 - step/total)^power
double poly_lr(double lr0, long step, long total_steps, double power = 1.0);

class SGD {
public:
    SGD(std::vector<ad::Var> params, double momentum, double weight_decay);
    void step(double lr);
    void zero_grad();

private:
    std::vector<ad::Var> params_;
    std::vector<Tensor> velocity_;
    double momentum_, weight_decay_;
};

class Adam {
public:
    Adam(std::vector<ad::Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step();
    void zero_grad();
    // optimizer moments, prefixed, for checkpoint round trips
    std::vector<std::pair<std::string, Tensor>> state(const std::string& prefix) const;
    void load_state(const std::string& prefix, const std::map<std::string, Tensor>& tensors);

private:
    std::vector<ad::Var> params_;
    std::vector<Tensor> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

// Per-step scalar log; rejects non-finite values and non-increasing steps.
class TrainMetrics {
public:
    struct Row {
        long step;
        std::map<std::string, double> values;
    };
    void log(long step, std::map<std::string, double> values);
    const std::vector<Row>& rows() const { return rows_; }
    double first(const std::string& key) const;
    double last(const std::string& key) const;
    void write_jsonl(const std::string& path) const;

private:
    std::vector<Row> rows_;
};

// One aligned frontal-profile pair, preprocessed to model space [-1,1].
struct PairTensors {
    Tensor half;     // [3,112,112] canonical bisected frontal
    Tensor profile;  // [3,112,112] aligned profile
    Tensor mask;     // [1,112,112] binary ground-truth coverage mask
};

// Runs the full alignment pipeline over manifest records.
std::vector<PairTensors> prepare_pair_tensors(const std::vector<FacePairRecord>& records);

struct DefrontTrainConfig {
    int epochs = 50;  // generator convergence horizon on the 50k-identity set
    int flow_pretrain_epochs = 5;
    LossWeights loss_weights;
    double adam_lr = 1e-4;  // FFWM-style preset; the original hyperparameters are not published
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double flow_adam_lr = 1e-3;
    double smoothness_weight = 0.1;
    GanGeneratorMode gen_mode = GanGeneratorMode::non_saturating;
    int batch_size = 8;
    std::uint64_t seed = 0;
    std::string checkpoint_dir;  // per-epoch checkpoints when non-empty
    std::string resume_from;     // epoch checkpoint to continue from
};

struct FlowPretrainResult {
    TrainMetrics metrics;
    double initial_photometric = 0.0;  // step-0 average
    double final_photometric = 0.0;    // last-epoch average
};

// Photometric L1 + first-order smoothness on both flow networks.
FlowPretrainResult pretrain_flows(DefrontModel& model, const std::vector<PairTensors>& pairs,
                                  const DefrontTrainConfig& cfg);

struct DefrontTrainResult {
    TrainMetrics metrics;
    double initial_pixel_loss = 0.0;
    double final_pixel_loss = 0.0;
    std::string final_checkpoint;
};

// Alternating generator/discriminator training under the six-term objective.
DefrontTrainResult train_defront(DefrontModel& model, const std::vector<PairTensors>& pairs,
                                 const DefrontTrainConfig& cfg, const FeatureTapNetwork& perceptual_net,
                                 const FeatureTapNetwork& identity_net);

struct EmbedTrainConfig {
    double lr0 = 0.1;
    double poly_power = 1.0;
    double weight_decay = 5e-4;
    double momentum = 0.9;
    int epochs = 20;
    int batch_size = 32;
    int accumulation_steps = 32;  // effective batch 1024 by default
    MarginConfig margin;          // num_classes filled from the label set
    AugmentationPolicy policy;
    std::uint64_t seed = 0;
};

struct EmbedTrainItem {
    std::string path;  // aligned 112x112 image
    long label = 0;
    double align_error = 0.0;  // cached, computed once before training
};

struct EmbedTrainResult {
    TrainMetrics metrics;
    std::vector<double> epoch_aug_fraction;  // realized defrontalized share per epoch
    Tensor class_weights;                    // [K,D] head, training artifact
};

// Margin-softmax training with SGD + polynomial decay + gradient
// accumulation; the defrontalization model stays frozen (inference only).
// Throws InvalidState if any item path appears in forbidden_paths.
EmbedTrainResult train_embeddings(EmbeddingBackbone& backbone, const std::vector<EmbedTrainItem>& items,
                                  const EmbedTrainConfig& cfg, const DefrontModel* defront,
                                  const std::vector<std::string>& forbidden_paths = {});

// Forward/backward over micro-batches with each loss scaled by 1/K, leaving
// the accumulated gradient on the parameters; equals the single large-batch
// gradient when micro-batches have equal size. Returns the mean loss.
double accumulate_margin_grads(const EmbeddingBackbone& backbone, const ad::Var& class_weights,
                               const MarginConfig& cfg, const std::vector<Tensor>& micro_images,
                               const std::vector<std::vector<long>>& micro_labels);

// Named-tensor snapshot of a whole model as a checkpoint.
Checkpoint checkpoint_from(const std::vector<std::pair<std::string, Tensor>>& tensors,
                           nlohmann::json config_echo, std::uint64_t step);

}  // namespace defront
