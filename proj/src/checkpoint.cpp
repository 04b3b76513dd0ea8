#include "miniwm/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "miniwm/errors.hpp"

using nlohmann::json;

namespace miniwm {

namespace {
constexpr char kMagic[8] = {'W', 'M', 'C', 'K', 'P', 'T', '1', '\0'};
}

void Checkpoint::save(const std::string& path) const {
    json manifest;
    json entries = json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        uint64_t nbytes = uint64_t(t.numel()) * 4;
        entries.push_back(json{{"name", name},
                               {"dtype", "f32"},
                               {"shape", t.shape()},
                               {"offset", offset},
                               {"nbytes", nbytes}});
        offset += nbytes;
    }
    manifest["version"] = 1;
    manifest["entries"] = entries;
    manifest["meta"] = meta;
    std::string mstr = manifest.dump();

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write checkpoint: " + tmp);
        f.write(kMagic, 8);
        uint64_t mlen = mstr.size();
        f.write(reinterpret_cast<const char*>(&mlen), 8);
        f.write(mstr.data(), std::streamsize(mstr.size()));
        for (const auto& [name, t] : tensors) {
            static_assert(sizeof(float) == 4);
            f.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.numel() * 4));
        }
        if (!f) throw DataError("short write while saving checkpoint: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (f.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("not a checkpoint archive: " + path);
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), 8);
    if (f.gcount() != 8) throw DataError("corrupt checkpoint (truncated manifest length)");
    std::string mstr(mlen, '\0');
    f.read(mstr.data(), std::streamsize(mlen));
    if (uint64_t(f.gcount()) != mlen) throw DataError("corrupt checkpoint (truncated manifest)");
    json manifest;
    try {
        manifest = json::parse(mstr);
    } catch (const json::exception& e) {
        throw DataError(std::string("corrupt checkpoint manifest: ") + e.what());
    }

    std::streampos payload_start = f.tellg();
    f.seekg(0, std::ios::end);
    uint64_t payload_size = uint64_t(f.tellg() - payload_start);

    Checkpoint ck;
    ck.meta = manifest.value("meta", json::object());
    for (const json& e : manifest.at("entries")) {
        std::string name = e.at("name");
        if (e.at("dtype") != "f32") throw DataError("unsupported dtype in checkpoint");
        Shape shape = e.at("shape").get<Shape>();
        uint64_t offset = e.at("offset");
        uint64_t nbytes = e.at("nbytes");
        if (offset + nbytes > payload_size)
            throw DataError("corrupt checkpoint (payload truncated for " + name + ")");
        Tensor<float> t(shape);
        if (uint64_t(t.numel()) * 4 != nbytes)
            throw DataError("corrupt checkpoint (shape/nbytes mismatch for " + name + ")");
        f.seekg(payload_start + std::streampos(offset));
        f.read(reinterpret_cast<char*>(t.data()), std::streamsize(nbytes));
        if (uint64_t(f.gcount()) != nbytes) throw DataError("corrupt checkpoint (short payload)");
        ck.tensors.emplace(std::move(name), std::move(t));
    }
    return ck;
}

std::map<std::string, Tensor<float>> Checkpoint::with_prefix(const std::string& prefix) const {
    std::map<std::string, Tensor<float>> out;
    for (const auto& [name, t] : tensors)
        if (name.rfind(prefix, 0) == 0) out.emplace(name, t);
    return out;
}

std::string rng_state_hex(const Rng& rng) {
    char buf[70];
    auto s = rng.state();
    std::snprintf(buf, sizeof(buf), "%016llx%016llx%016llx%016llx", (unsigned long long)s[0],
                  (unsigned long long)s[1], (unsigned long long)s[2], (unsigned long long)s[3]);
    return buf;
}

Rng rng_from_hex(const std::string& hex) {
    if (hex.size() != 64) throw DataError("bad RNG state string");
    std::array<uint64_t, 4> s;
    for (int i = 0; i < 4; ++i) s[size_t(i)] = std::stoull(hex.substr(size_t(i) * 16, 16), nullptr, 16);
    Rng rng;
    rng.set_state(s);
    return rng;
}

}  // namespace miniwm
