#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace miniwm {

// Minimal SHA-256 for config and checkpoint content hashes.
class Sha256 {
public:
    Sha256();
    void update(const void* data, size_t len);
    std::string hex_digest();  // finalizes

    static std::string of(const std::string& s);
    static std::string of_file(const std::string& path);

private:
    void process_block(const uint8_t* p);
    uint32_t h_[8];
    uint64_t total_ = 0;
    std::vector<uint8_t> buf_;
    bool done_ = false;
};

}  // namespace miniwm
