#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "defront/tensor.hpp"

namespace defront {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Single-file archive: config echo, step counter and named weight tensors.
struct Checkpoint {
    nlohmann::json config;
    std::uint64_t step = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;  // insertion order preserved

    std::map<std::string, Tensor> tensor_map() const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace defront
