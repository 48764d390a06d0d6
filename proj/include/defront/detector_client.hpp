#pragma once

#include <map>
#include <memory>
#include <string>

#include "defront/geometry.hpp"
#include "defront/image.hpp"

namespace defront {

struct HttpResponse {
    int status = 0;
    std::string body;
    bool transport_timeout = false;
};

// Wire abstraction so tests can stub the service without sockets.
class DetectorTransport {
public:
    virtual ~DetectorTransport() = default;
    virtual HttpResponse post(const std::string& json_body, double timeout_s) = 0;
};

// POSTs to DETECTOR_ENDPOINT with DETECTOR_KEY auth via cpp-httplib.
std::shared_ptr<DetectorTransport> make_http_transport(const std::string& endpoint);

struct DetectorConfig {
    std::string endpoint;
    std::string api_key;
    double timeout_s = 10.0;
    int max_retries = 3;
    // dense detector point name -> one of the six semantic names
    std::map<std::string, std::string> point_mapping = {
        {"left_eye_center", "left_eye"},   {"right_eye_center", "right_eye"},
        {"nose_bridge_top", "nose_top"},   {"mouth_corner_left", "mouth_left"},
        {"mouth_corner_right", "mouth_right"}, {"ear_lobe", "ear_point"}};

    // Reads DETECTOR_ENDPOINT / DETECTOR_KEY from the environment.
    static DetectorConfig from_env();
};

// Loads a {"dense_name": "semantic_name", ...} JSON mapping file.
std::map<std::string, std::string> load_point_mapping(const std::string& path);

class DetectorClient {
public:
    DetectorClient(DetectorConfig config, std::shared_ptr<DetectorTransport> transport);

    // Encodes the image, calls the service with retry/backoff, reduces the
    // dense response to the six semantic points. Throws Timeout, AuthFailure
    // or DetectorMiss.
    LandmarkSet fetch_landmarks(const Image& image) const;

    const DetectorConfig& config() const { return config_; }

private:
    DetectorConfig config_;
    std::shared_ptr<DetectorTransport> transport_;
};

std::string base64_encode(const std::string& bytes);

}  // namespace defront
