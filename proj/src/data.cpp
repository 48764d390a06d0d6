#include "defront/data.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "defront/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace defront {

namespace {

std::string resolve_path(const std::string& base_dir, const std::string& p) {
    fs::path path(p);
    if (path.is_absolute()) return p;
    return (fs::path(base_dir) / path).lexically_normal().string();
}

std::vector<std::array<double, 2>> parse_lms(const json& j, size_t expected, int line,
                                             const char* key) {
    if (!j.is_array() || j.size() != expected)
        throw ParseError(std::string(key) + " must be an array of " + std::to_string(expected) +
                             " [x,y] points",
                         line);
    std::vector<std::array<double, 2>> out;
    for (const auto& p : j) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
            throw ParseError(std::string(key) + " entries must be [x,y] numbers", line);
        out.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    return out;
}

}  // namespace

std::vector<FacePairRecord> load_pair_manifest(const std::string& path, bool check_paths) {
    std::ifstream f(path);
    if (!f) throw MissingFile(path);
    const std::string dir = fs::path(path).parent_path().string();
    std::vector<FacePairRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        for (const char* key : {"id", "frontal", "profile", "frontal_lms", "profile_lms"})
            if (!j.contains(key)) throw ParseError(std::string("missing key: ") + key, line_no);

        FacePairRecord r;
        r.identity_id = j["id"].get<std::string>();
        r.frontal_path = resolve_path(dir, j["frontal"].get<std::string>());
        r.profile_path = resolve_path(dir, j["profile"].get<std::string>());

        auto flms = parse_lms(j["frontal_lms"], 5, line_no, "frontal_lms");
        r.frontal_landmarks.source = LandmarkSource::annotation;
        for (size_t i = 0; i < kFrontalNames.size(); ++i)
            r.frontal_landmarks.points[kFrontalNames[i]] = {flms[i][0], flms[i][1]};

        auto plms = parse_lms(j["profile_lms"], 3, line_no, "profile_lms");
        std::string mouth_name;
        if (j.contains("profile_mouth")) {
            mouth_name = j["profile_mouth"].get<std::string>();
            if (mouth_name != "mouth_left" && mouth_name != "mouth_right")
                throw ParseError("profile_mouth must be mouth_left or mouth_right", line_no);
        } else {
            // fallback: corner right of the nose is the subject's image-right corner
            mouth_name = plms[1][0] > plms[0][0] ? "mouth_right" : "mouth_left";
        }
        r.profile_landmarks.source = LandmarkSource::annotation;
        r.profile_landmarks.points["nose_top"] = {plms[0][0], plms[0][1]};
        r.profile_landmarks.points[mouth_name] = {plms[1][0], plms[1][1]};
        r.profile_landmarks.points["ear_point"] = {plms[2][0], plms[2][1]};

        if (j.contains("illumination_tag")) r.illumination_tag = j["illumination_tag"].get<std::string>();

        if (check_paths) {
            if (!fs::exists(r.frontal_path)) throw MissingFile(r.frontal_path);
            if (!fs::exists(r.profile_path)) throw MissingFile(r.profile_path);
        }
        records.push_back(std::move(r));
    }
    return records;
}

void save_pair_manifest(const std::string& path, const std::vector<FacePairRecord>& records) {
    std::ofstream f(path);
    if (!f) throw IOFailure("cannot write manifest: " + path);
    const std::string dir = fs::path(path).parent_path().string();
    for (const auto& r : records) {
        json j;
        j["id"] = r.identity_id;
        j["frontal"] = fs::path(r.frontal_path).lexically_proximate(dir).string();
        j["profile"] = fs::path(r.profile_path).lexically_proximate(dir).string();
        json flms = json::array();
        for (const auto& name : kFrontalNames) {
            const Point2D& p = r.frontal_landmarks.get(name);
            flms.push_back({p.x, p.y});
        }
        j["frontal_lms"] = flms;
        std::string mouth_name =
            r.profile_landmarks.has("mouth_left") ? "mouth_left" : "mouth_right";
        json plms = json::array();
        const Point2D& n = r.profile_landmarks.get("nose_top");
        const Point2D& m = r.profile_landmarks.get(mouth_name);
        const Point2D& e = r.profile_landmarks.get("ear_point");
        plms.push_back({n.x, n.y});
        plms.push_back({m.x, m.y});
        plms.push_back({e.x, e.y});
        j["profile_lms"] = plms;
        j["profile_mouth"] = mouth_name;
        if (r.illumination_tag) j["illumination_tag"] = *r.illumination_tag;
        f << j.dump() << "\n";
    }
    if (!f) throw IOFailure("write failed: " + path);
}

std::vector<TestPair> load_test_pairs(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingFile(path);
    const std::string dir = fs::path(path).parent_path().string();
    std::vector<TestPair> pairs;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string a, b, label;
        if (!(ss >> a >> b >> label)) throw ParseError("want: pathA pathB label", line_no);
        std::string extra;
        if (ss >> extra) throw ParseError("trailing tokens after label", line_no);
        if (label != "0" && label != "1") throw ParseError("label must be 0 or 1, got " + label, line_no);
        if (a == b) throw ParseError("pair paths must be distinct", line_no);
        pairs.push_back({resolve_path(dir, a), resolve_path(dir, b), label == "1"});
    }
    return pairs;
}

void save_test_pairs(const std::string& path, const std::vector<TestPair>& pairs) {
    std::ofstream f(path);
    if (!f) throw IOFailure("cannot write test pairs: " + path);
    const std::string dir = fs::path(path).parent_path().string();
    for (const auto& p : pairs)
        f << fs::path(p.path_a).lexically_proximate(dir).string() << " "
          << fs::path(p.path_b).lexically_proximate(dir).string() << " "
          << (p.same_identity ? 1 : 0) << "\n";
    if (!f) throw IOFailure("write failed: " + path);
}

IdentityGallery load_gallery(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingFile(path);
    const std::string dir = fs::path(path).parent_path().string();
    IdentityGallery g;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        for (const char* key : {"id", "path", "yaw_deg"})
            if (!j.contains(key)) throw ParseError(std::string("missing key: ") + key, line_no);
        if (!j["yaw_deg"].is_number_integer() || j["yaw_deg"].get<int>() % 15 != 0)
            throw ParseError("yaw_deg must be a signed multiple of 15", line_no);
        g.entries.push_back({j["id"].get<std::string>(), resolve_path(dir, j["path"].get<std::string>()),
                             j["yaw_deg"].get<int>()});
    }
    return g;
}

void save_gallery(const std::string& path, const IdentityGallery& gallery) {
    std::ofstream f(path);
    if (!f) throw IOFailure("cannot write gallery: " + path);
    const std::string dir = fs::path(path).parent_path().string();
    for (const auto& e : gallery.entries) {
        json j;
        j["id"] = e.identity_id;
        j["path"] = fs::path(e.path).lexically_proximate(dir).string();
        j["yaw_deg"] = e.yaw_deg;
        f << j.dump() << "\n";
    }
    if (!f) throw IOFailure("write failed: " + path);
}

std::vector<TrainImageRecord> load_train_list(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingFile(path);
    const std::string dir = fs::path(path).parent_path().string();
    std::vector<TrainImageRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        for (const char* key : {"path", "id", "yaw_deg", "lms"})
            if (!j.contains(key)) throw ParseError(std::string("missing key: ") + key, line_no);
        TrainImageRecord r;
        r.path = resolve_path(dir, j["path"].get<std::string>());
        r.identity_id = j["id"].get<std::string>();
        r.yaw_deg = j["yaw_deg"].get<int>();
        auto lms = parse_lms(j["lms"], 5, line_no, "lms");
        r.landmarks.source = LandmarkSource::synthetic;
        for (size_t i = 0; i < kFrontalNames.size(); ++i)
            r.landmarks.points[kFrontalNames[i]] = {lms[i][0], lms[i][1]};
        records.push_back(std::move(r));
    }
    return records;
}

void save_train_list(const std::string& path, const std::vector<TrainImageRecord>& records) {
    std::ofstream f(path);
    if (!f) throw IOFailure("cannot write train list: " + path);
    const std::string dir = fs::path(path).parent_path().string();
    for (const auto& r : records) {
        json j;
        j["path"] = fs::path(r.path).lexically_proximate(dir).string();
        j["id"] = r.identity_id;
        j["yaw_deg"] = r.yaw_deg;
        json lms = json::array();
        for (const auto& name : kFrontalNames) {
            const Point2D& p = r.landmarks.get(name);
            lms.push_back({p.x, p.y});
        }
        j["lms"] = lms;
        f << j.dump() << "\n";
    }
    if (!f) throw IOFailure("write failed: " + path);
}

}  // namespace defront
