#include "defront/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "defront/errors.hpp"

namespace defront {

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeMismatch("cosine_similarity: dimension mismatch");
    double dot = 0;
    for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot;
}

namespace {

// Best threshold on the training scores: classify same when sim >= t.
// Candidates are midpoints between sorted unique values plus both extremes;
// prefix counts make the sweep O(n log n).
double best_threshold(std::vector<std::pair<double, bool>> scores) {
    std::sort(scores.begin(), scores.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    const long n = static_cast<long>(scores.size());
    long total_same = 0;
    for (const auto& [s, same] : scores) total_same += same;

    // suffix_same[i] = #same with index >= i; prefix_diff[i] = #diff below i
    std::vector<long> prefix_diff(static_cast<size_t>(n + 1), 0);
    std::vector<long> suffix_same(static_cast<size_t>(n + 1), 0);
    for (long i = 0; i < n; ++i)
        prefix_diff[static_cast<size_t>(i + 1)] =
            prefix_diff[static_cast<size_t>(i)] + (scores[static_cast<size_t>(i)].second ? 0 : 1);
    for (long i = n - 1; i >= 0; --i)
        suffix_same[static_cast<size_t>(i)] =
            suffix_same[static_cast<size_t>(i + 1)] + (scores[static_cast<size_t>(i)].second ? 1 : 0);

    // threshold below everything and cut points between unique values
    double best_t = scores.front().first - 1.0;
    long best_correct = suffix_same[0];  // all predicted same
    for (long i = 1; i <= n; ++i) {
        if (i < n && scores[static_cast<size_t>(i)].first == scores[static_cast<size_t>(i - 1)].first)
            continue;
        double t = i == n ? scores[static_cast<size_t>(n - 1)].first + 1.0
                          : 0.5 * (scores[static_cast<size_t>(i - 1)].first +
                                   scores[static_cast<size_t>(i)].first);
        long correct = prefix_diff[static_cast<size_t>(i)] + suffix_same[static_cast<size_t>(i)];
        if (correct > best_correct) {
            best_correct = correct;
            best_t = t;
        }
    }
    return best_t;
}

}  // namespace

VerificationResult verify_10fold_scores(const std::vector<std::pair<double, bool>>& scored_pairs,
                                        int folds) {
    if (static_cast<int>(scored_pairs.size()) < folds)
        throw DegenerateInput("verify_10fold: fewer pairs than folds");
    const long n = static_cast<long>(scored_pairs.size());
    const long base = n / folds;  // last fold takes the remainder

    VerificationResult result;
    double weighted = 0;
    for (int f = 0; f < folds; ++f) {
        long lo = base * f;
        long hi = f == folds - 1 ? n : base * (f + 1);
        std::vector<std::pair<double, bool>> train;
        train.reserve(static_cast<size_t>(n - (hi - lo)));
        for (long i = 0; i < n; ++i)
            if (i < lo || i >= hi) train.push_back(scored_pairs[static_cast<size_t>(i)]);
        double t = best_threshold(std::move(train));
        long correct = 0;
        for (long i = lo; i < hi; ++i) {
            const auto& [s, same] = scored_pairs[static_cast<size_t>(i)];
            if ((s >= t) == same) ++correct;
        }
        double acc = static_cast<double>(correct) / static_cast<double>(hi - lo);
        result.fold_accuracies.push_back(acc);
        result.fold_thresholds.push_back(t);
        weighted += acc * static_cast<double>(hi - lo);
    }
    result.mean_accuracy = weighted / static_cast<double>(n);
    return result;
}

std::map<std::string, std::vector<double>> embed_paths(const std::vector<std::string>& paths,
                                                       const Embedder& embedder, int workers) {
    std::vector<std::string> unique = paths;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    std::vector<std::vector<double>> results(unique.size());
    std::vector<std::string> errors(unique.size());
    workers = std::max(1, workers);
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= unique.size()) break;
            try {
                results[i] = embedder(unique[i]);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    std::map<std::string, std::vector<double>> out;
    for (size_t i = 0; i < unique.size(); ++i) {
        if (!errors[i].empty()) throw EmbeddingFailure(unique[i] + ": " + errors[i]);
        out[unique[i]] = std::move(results[i]);
    }
    return out;
}

VerificationResult verify_10fold(const std::vector<TestPair>& pairs, const Embedder& embedder,
                                 int folds) {
    std::map<std::string, std::vector<double>> cache;
    auto embed = [&](const std::string& path) -> const std::vector<double>& {
        auto it = cache.find(path);
        if (it != cache.end()) return it->second;
        try {
            return cache.emplace(path, embedder(path)).first->second;
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw EmbeddingFailure("embedding failed for " + path + ": " + e.what());
        }
    };
    std::vector<std::pair<double, bool>> scored;
    scored.reserve(pairs.size());
    for (const auto& p : pairs)
        scored.push_back({cosine_similarity(embed(p.path_a), embed(p.path_b)), p.same_identity});
    return verify_10fold_scores(scored, folds);
}

IdentificationResult identify_top1(const IdentityGallery& gallery, const IdentityGallery& probes,
                                   const Embedder& embedder) {
    std::vector<const GalleryEntry*> frontal;
    std::set<std::string> seen;
    for (const auto& e : gallery.entries) {
        if (e.yaw_deg != 0) continue;
        if (!seen.insert(e.identity_id).second)
            throw DuplicateGalleryIdentity("duplicate frontal gallery entry: " + e.identity_id);
        frontal.push_back(&e);
    }
    if (frontal.empty()) throw DegenerateInput("identify_top1: gallery has no frontal entries");

    std::vector<std::vector<double>> gallery_emb;
    gallery_emb.reserve(frontal.size());
    for (const auto* e : frontal) gallery_emb.push_back(embedder(e->path));

    static const std::set<int> kBins = {15, 30, 45, 60, 75, 90};
    std::map<int, long> hits, counts;
    for (const auto& p : probes.entries) {
        if (p.yaw_deg == 0) continue;  // frontals are gallery, not probes
        int bin = std::abs(p.yaw_deg);
        if (!kBins.count(bin))
            throw InvalidPoseLabel("probe yaw " + std::to_string(p.yaw_deg) +
                                   " outside the +/-{15..90} bins");
        std::vector<double> emb = embedder(p.path);
        double best = -2.0;
        size_t best_idx = 0;
        for (size_t g = 0; g < gallery_emb.size(); ++g) {
            double sim = cosine_similarity(emb, gallery_emb[g]);
            if (sim > best) {
                best = sim;
                best_idx = g;
            }
        }
        counts[bin]++;
        if (frontal[best_idx]->identity_id == p.identity_id) hits[bin]++;
    }

    IdentificationResult result;
    double sum = 0;
    long nonempty = 0;
    for (int bin : kBins) {
        if (!counts.count(bin) || counts[bin] == 0) {
            result.empty_bins.push_back(bin);
            continue;
        }
        double acc = static_cast<double>(hits[bin]) / static_cast<double>(counts[bin]);
        result.per_pose_bin[bin] = acc;
        sum += acc;
        ++nonempty;
    }
    if (nonempty == 0) throw DegenerateInput("identify_top1: no probes in any bin");
    result.average = sum / static_cast<double>(nonempty);
    return result;
}

std::string hardware_fingerprint() {
    std::string model = "unknown-cpu";
    std::ifstream f("/proc/cpuinfo");
    std::string line;
    while (std::getline(f, line)) {
        if (line.rfind("model name", 0) == 0) {
            auto colon = line.find(':');
            if (colon != std::string::npos) {
                model = line.substr(colon + 1);
                while (!model.empty() && model.front() == ' ') model.erase(model.begin());
            }
            break;
        }
    }
    return model + " x" + std::to_string(std::thread::hardware_concurrency());
}

BenchmarkResult benchmark_inference(const std::vector<std::pair<std::string, Pipeline>>& pipelines,
                                    int iterations, int warmup) {
    if (iterations < 1) throw DegenerateInput("benchmark_inference: need >= 1 iteration");
    BenchmarkResult result;
    result.hardware = hardware_fingerprint();
    for (const auto& [name, run] : pipelines) {
        if (!run) throw PipelineLoadFailure("pipeline not loaded: " + name);
        for (int i = 0; i < warmup; ++i) run();
        std::vector<double> times;
        times.reserve(static_cast<size_t>(iterations));
        for (int i = 0; i < iterations; ++i) {
            auto t0 = std::chrono::steady_clock::now();
            run();
            auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        double mean = 0;
        for (double t : times) mean += t;
        mean /= static_cast<double>(times.size());
        double var = 0;
        for (double t : times) var += (t - mean) * (t - mean);
        var /= static_cast<double>(times.size());
        result.entries.push_back({name, mean, std::sqrt(var), iterations});
    }
    return result;
}

PoseStats pose_pair_stats(const std::vector<PosePairAnnotation>& pairs) {
    if (pairs.empty()) throw MissingAnnotation("pose_pair_stats: no annotated pairs");
    PoseStats s;
    for (const auto& p : pairs) {
        s.pitch += std::fabs(p.pitch_a - p.pitch_b);
        s.yaw += std::fabs(p.yaw_a - p.yaw_b);
        s.roll += std::fabs(p.roll_a - p.roll_b);
    }
    double n = static_cast<double>(pairs.size());
    s.pitch /= n;
    s.yaw /= n;
    s.roll /= n;
    return s;
}

}  // namespace defront
