#include "defront/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "defront/errors.hpp"

namespace defront {

namespace {
constexpr char kMagic[4] = {'D', 'F', 'C', 'K'};

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}
}  // namespace

std::map<std::string, Tensor> Checkpoint::tensor_map() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, t] : tensors) out[name] = t;
    return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["step"] = ckpt.step;
    header["config"] = ckpt.config;
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.size());
    }
    header["tensors"] = index;
    const std::string header_str = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointIOFailure("cannot open checkpoint for write: " + path);
    f.write(kMagic, 4);
    write_pod<std::uint32_t>(f, kCheckpointVersion);
    write_pod<std::uint64_t>(f, header_str.size());
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : ckpt.tensors)
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw CheckpointIOFailure("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointIOFailure("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointIOFailure("bad checkpoint magic: " + path);
    auto version = read_pod<std::uint32_t>(f);
    if (version != kCheckpointVersion)
        throw CheckpointIOFailure("unsupported checkpoint version " + std::to_string(version));
    auto header_len = read_pod<std::uint64_t>(f);
    std::string header_str(header_len, '\0');
    f.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!f) throw CheckpointIOFailure("truncated checkpoint header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointIOFailure(std::string("corrupt checkpoint header: ") + e.what());
    }
    Checkpoint ckpt;
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.config = header.value("config", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        std::vector<long> shape = entry.at("shape").get<std::vector<long>>();
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!f) throw CheckpointIOFailure("truncated tensor data for " + name + ": " + path);
        ckpt.tensors.push_back({std::move(name), std::move(t)});
    }
    return ckpt;
}

}  // namespace defront
