#pragma once

#include <json.hpp>

#include <map>
#include <string>

#include "miniwm/tensor.hpp"

namespace miniwm {

// Versioned named-array container:
//   magic "WMCKPT1\0" | u64 LE manifest length | manifest JSON | payload
// The manifest lists entries (name, dtype, shape, offset, nbytes; offsets
// relative to payload start) plus a free-form meta object (step, config
// hash, RNG states). Payloads are raw little-endian float32. Writes are
// atomic (temp file + rename).
struct Checkpoint {
    std::map<std::string, Tensor<float>> tensors;
    nlohmann::json meta;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    // split by name prefix, e.g. "tokenizer/"
    std::map<std::string, Tensor<float>> with_prefix(const std::string& prefix) const;
};

std::string rng_state_hex(const Rng& rng);
Rng rng_from_hex(const std::string& hex);

}  // namespace miniwm
