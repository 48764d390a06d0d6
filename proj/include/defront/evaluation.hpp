#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "defront/data.hpp"
#include "defront/nets.hpp"

namespace defront {

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

struct VerificationResult {
    std::vector<double> fold_accuracies;  // 10 folds
    std::vector<double> fold_thresholds;  // cosine threshold picked per fold
    double mean_accuracy = 0.0;           // fold-size weighted
};

using Embedder = std::function<std::vector<double>(const std::string& path)>;

// Embeds the unique paths with up to `workers` threads (read-only inference
// is safe to share); results are keyed, so the output is order-independent.
std::map<std::string, std::vector<double>> embed_paths(const std::vector<std::string>& paths,
                                                       const Embedder& embedder, int workers);

// Scored-pair core: thresholds chosen on the other folds (midpoints of sorted
// unique similarities), accuracy measured on the held-out fold.
VerificationResult verify_10fold_scores(const std::vector<std::pair<double, bool>>& scored_pairs,
                                        int folds = 10);

// Embeds both sides of each pair, then runs the scored protocol. Folds are
// contiguous slices of the input order; a remainder goes to the last fold.
VerificationResult verify_10fold(const std::vector<TestPair>& pairs, const Embedder& embedder,
                                 int folds = 10);

struct IdentificationResult {
    std::map<int, double> per_pose_bin;  // |yaw| -> top-1 accuracy
    std::vector<int> empty_bins;         // reported, omitted from the average
    double average = 0.0;
};

// Splits the gallery file into the frontal gallery (yaw 0, one per identity)
// and probes (yaw != 0); nearest gallery embedding by cosine similarity.
IdentificationResult identify_top1(const IdentityGallery& gallery, const IdentityGallery& probes,
                                   const Embedder& embedder);

struct BenchmarkResult {
    struct Entry {
        std::string name;
        double mean_ms = 0.0;
        double std_ms = 0.0;
        int iterations = 0;
    };
    std::vector<Entry> entries;
    std::string hardware;  // cpu fingerprint; cross-machine comparison only via ratios
};

using Pipeline = std::function<void()>;

// Wall-clock per-call latency; warmup excluded, strictly serial.
BenchmarkResult benchmark_inference(const std::vector<std::pair<std::string, Pipeline>>& pipelines,
                                    int iterations = 100, int warmup = 10);

struct PosePairAnnotation {
    double pitch_a = 0, yaw_a = 0, roll_a = 0;
    double pitch_b = 0, yaw_b = 0, roll_b = 0;
};

struct PoseStats {
    double pitch = 0, yaw = 0, roll = 0;  // mean absolute differences
};

PoseStats pose_pair_stats(const std::vector<PosePairAnnotation>& pairs);

std::string hardware_fingerprint();

}  // namespace defront
