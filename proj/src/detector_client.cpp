#include "defront/detector_client.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "defront/errors.hpp"

using nlohmann::json;

namespace defront {

std::string base64_encode(const std::string& bytes) {
    static const char* table = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 2 < bytes.size()) {
        unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                     (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                     static_cast<unsigned char>(bytes[i + 2]);
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += table[v & 63];
        i += 3;
    }
    if (i + 1 == bytes.size()) {
        unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                     (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

DetectorConfig DetectorConfig::from_env() {
    DetectorConfig c;
    if (const char* e = std::getenv("DETECTOR_ENDPOINT")) c.endpoint = e;
    if (const char* k = std::getenv("DETECTOR_KEY")) c.api_key = k;
    return c;
}

std::map<std::string, std::string> load_point_mapping(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingFile(path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid mapping JSON: ") + e.what(), 1);
    }
    std::map<std::string, std::string> out;
    for (auto& [k, v] : j.items()) out[k] = v.get<std::string>();
    return out;
}

DetectorClient::DetectorClient(DetectorConfig config, std::shared_ptr<DetectorTransport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
    if (!transport_) throw InvalidState("detector client needs a transport");
}

namespace {

std::string encode_request(const Image& image, const std::string& api_key) {
    std::ostringstream ppm;
    ppm << "P6\n" << image.width() << " " << image.height() << "\n255\n";
    for (long y = 0; y < image.height(); ++y)
        for (long x = 0; x < image.width(); ++x)
            for (long c = 0; c < 3; ++c) {
                double v = image.channels() == 3 ? image.at(y, x, c) : image.at(y, x, 0);
                ppm.put(static_cast<char>(std::lround(std::min(std::max(v, 0.0), 1.0) * 255.0)));
            }
    json req;
    req["api_key"] = api_key;
    req["image_base64"] = base64_encode(ppm.str());
    return req.dump();
}

}  // namespace

LandmarkSet DetectorClient::fetch_landmarks(const Image& image) const {
    if (image.empty()) throw DegenerateInput("fetch_landmarks: empty image");
    const std::string body = encode_request(image, config_.api_key);

    HttpResponse resp;
    int attempt = 0;
    while (true) {
        resp = transport_->post(body, config_.timeout_s);
        bool retriable = resp.transport_timeout || resp.status >= 500;
        if (!retriable) break;
        ++attempt;
        if (attempt >= config_.max_retries)
            throw Timeout("detector unreachable after " + std::to_string(attempt) + " attempts" +
                          (resp.status ? " (last status " + std::to_string(resp.status) + ")" : ""));
        std::this_thread::sleep_for(std::chrono::milliseconds(50L << attempt));  // exponential backoff
    }
    if (resp.status == 401 || resp.status == 403)
        throw AuthFailure("detector rejected credentials (status " + std::to_string(resp.status) + ")");
    if (resp.status != 200)
        throw DetectorMiss("detector returned status " + std::to_string(resp.status));

    json j;
    try {
        j = json::parse(resp.body);
    } catch (const json::exception& e) {
        throw DetectorMiss(std::string("unparseable detector response: ") + e.what());
    }
    if (!j.contains("faces") || !j["faces"].is_array() || j["faces"].empty())
        throw DetectorMiss("no face found");
    const json& face = j["faces"][0];
    if (!face.contains("landmarks") || !face["landmarks"].is_object())
        throw DetectorMiss("face without landmarks");

    LandmarkSet out;
    out.source = LandmarkSource::detector;
    for (const auto& [dense, semantic] : config_.point_mapping) {
        auto it = face["landmarks"].find(dense);
        if (it == face["landmarks"].end()) continue;
        if (!it->contains("x") || !it->contains("y")) throw DetectorMiss("malformed landmark " + dense);
        out.points[semantic] = {(*it)["x"].get<double>(), (*it)["y"].get<double>()};
    }
    // never return a partially filled frontal set
    if (!out.valid_for_frontal() && !out.valid_for_profile())
        throw DetectorMiss("detector response missing required points");
    return out;
}

class HttplibTransport : public DetectorTransport {
public:
    explicit HttplibTransport(std::string endpoint) : endpoint_(std::move(endpoint)) {}
    HttpResponse post(const std::string& json_body, double timeout_s) override;

private:
    std::string endpoint_;
};

std::shared_ptr<DetectorTransport> make_http_transport(const std::string& endpoint) {
    return std::make_shared<HttplibTransport>(endpoint);
}

}  // namespace defront

// httplib pulled in after our headers; it drags in platform headers
#include <httplib.h>

namespace defront {

HttpResponse HttplibTransport::post(const std::string& json_body, double timeout_s) {
    // endpoint like http://host:port/path
    auto scheme_end = endpoint_.find("://");
    std::string rest = scheme_end == std::string::npos ? endpoint_ : endpoint_.substr(scheme_end + 3);
    auto slash = rest.find('/');
    std::string host_port = slash == std::string::npos ? rest : rest.substr(0, slash);
    std::string path = slash == std::string::npos ? "/" : rest.substr(slash);

    httplib::Client client(("http://" + host_port).c_str());
    client.set_connection_timeout(static_cast<time_t>(timeout_s), 0);
    client.set_read_timeout(static_cast<time_t>(timeout_s), 0);
    auto res = client.Post(path.c_str(), json_body, "application/json");
    HttpResponse out;
    if (!res) {
        out.transport_timeout = true;
        return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
}

}  // namespace defront
