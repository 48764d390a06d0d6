#pragma once

#include <optional>
#include <string>
#include <vector>

#include "defront/geometry.hpp"
#include "defront/image.hpp"

namespace defront {

struct FacePairRecord {
    std::string identity_id;
    std::string frontal_path;
    std::string profile_path;
    LandmarkSet frontal_landmarks;  // the five frontal names
    LandmarkSet profile_landmarks;  // nose_top, one mouth corner, ear_point
    std::optional<std::string> illumination_tag;
};

// JSON-lines manifest, one record per line. Relative paths resolve against
// the manifest's directory. Malformed lines raise ParseError with the line
// number; nothing is skipped silently.
std::vector<FacePairRecord> load_pair_manifest(const std::string& path, bool check_paths = true);
void save_pair_manifest(const std::string& path, const std::vector<FacePairRecord>& records);

struct TestPair {
    std::string path_a;
    std::string path_b;
    bool same_identity = false;
};

// "pathA pathB label" per line, label in {0,1}; file order defines folds.
std::vector<TestPair> load_test_pairs(const std::string& path);
void save_test_pairs(const std::string& path, const std::vector<TestPair>& pairs);

struct GalleryEntry {
    std::string identity_id;
    std::string path;
    int yaw_deg = 0;  // signed, multiples of 15
};

struct IdentityGallery {
    std::vector<GalleryEntry> entries;
};

IdentityGallery load_gallery(const std::string& path);
void save_gallery(const std::string& path, const IdentityGallery& gallery);

// ------------------------------------------------------------- synthetic faces

struct SyntheticFaceSpec {
    std::uint64_t identity_seed = 0;
    double yaw_deg = 0.0;       // [-90, 90]
    double illumination = 1.0;  // [0.5, 1.5]
    long size = 112;
};

struct SyntheticFace {
    Image image;
    LandmarkSet landmarks;  // ground truth; ear_point present for |yaw| >= 60
    double yaw_deg = 0.0;
};

// Procedural face-like rendering with analytically exact landmark ground
// truth. Yaw foreshortens face-plane x-coordinates by cos(yaw) and reveals
// the ear marker at |yaw| >= 60 degrees. Deterministic in the spec.
SyntheticFace generate_synthetic_face(const SyntheticFaceSpec& spec);

struct TrainImageRecord {
    std::string path;
    std::string identity_id;
    int yaw_deg = 0;
    LandmarkSet landmarks;
};

std::vector<TrainImageRecord> load_train_list(const std::string& path);
void save_train_list(const std::string& path, const std::vector<TrainImageRecord>& records);

struct SyntheticDatasetPaths {
    std::string root;
    std::string pair_manifest;       // frontal-profile training pairs
    std::string train_list;          // every training image with labels
    std::string eval_list;           // held-out images with landmark ground truth
    std::string test_pairs;          // verification pairs over held-out images
    std::string test_pairs_extreme;  // subset with both sides at |yaw| = 90
    std::string gallery;             // held-out gallery + probes with yaw labels
};

// Renders a full desk-scale dataset: training images plus a disjoint
// held-out image set for verification pairs and the identification gallery.
SyntheticDatasetPaths build_synthetic_dataset(const std::string& out_dir, int n_identities,
                                              const std::vector<int>& poses, std::uint64_t seed);

}  // namespace defront
