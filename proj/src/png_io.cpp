#include "miniwm/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "miniwm/errors.hpp"

namespace miniwm {

namespace {

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(uint8_t(x >> 24));
    v.push_back(uint8_t(x >> 16));
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x));
}

uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 8 | uint32_t(p[3]);
}

void write_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32(out, uint32_t(data.size()));
    size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = uint32_t(crc32(0, out.data() + crc_start, uInt(out.size() - crc_start)));
    put_u32(out, crc);
}

std::vector<uint8_t> zlib_compress(const std::vector<uint8_t>& in) {
    uLongf bound = compressBound(uLong(in.size()));
    std::vector<uint8_t> out(bound);
    if (compress2(out.data(), &bound, in.data(), uLong(in.size()), 6) != Z_OK)
        throw DataError("zlib compression failed");
    out.resize(bound);
    return out;
}

std::vector<uint8_t> zlib_decompress(const uint8_t* in, size_t len, size_t expected) {
    std::vector<uint8_t> out(expected);
    uLongf dst = uLongf(expected);
    if (uncompress(out.data(), &dst, in, uLong(len)) != Z_OK || dst != expected)
        throw DataError("zlib decompression failed");
    return out;
}

void write_png(const std::string& path, int width, int height, int channels, const uint8_t* pix,
               const std::vector<std::array<uint8_t, 3>>* palette) {
    std::vector<uint8_t> out{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

    std::vector<uint8_t> ihdr;
    put_u32(ihdr, uint32_t(width));
    put_u32(ihdr, uint32_t(height));
    ihdr.push_back(8);                               // bit depth
    ihdr.push_back(palette ? 3 : (channels == 3 ? 2 : 0));  // color type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);

    if (palette) {
        std::vector<uint8_t> plte;
        for (const auto& c : *palette) {
            plte.push_back(c[0]);
            plte.push_back(c[1]);
            plte.push_back(c[2]);
        }
        write_chunk(out, "PLTE", plte);
    }

    // filter byte 0 (None) per scanline
    std::vector<uint8_t> raw;
    raw.reserve(size_t(height) * (size_t(width) * channels + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), pix + size_t(y) * width * channels,
                   pix + size_t(y + 1) * width * channels);
    }
    write_chunk(out, "IDAT", zlib_compress(raw));
    write_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw DataError("short write to " + path);
}

}  // namespace

void write_png_rgb(const std::string& path, int width, int height, const uint8_t* rgb) {
    write_png(path, width, height, 3, rgb, nullptr);
}

void write_png_indexed(const std::string& path, int width, int height, const uint8_t* idx,
                       const std::vector<std::array<uint8_t, 3>>& palette) {
    write_png(path, width, height, 1, idx, &palette);
}

PngImage read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (data.size() < 8 || std::memcmp(data.data(), sig, 8) != 0)
        throw DataError("not a PNG file: " + path);

    PngImage img;
    int color_type = -1;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= data.size()) {
        uint32_t len = get_u32(&data[pos]);
        if (pos + 12 + len > data.size()) throw DataError("truncated PNG: " + path);
        const char* type = reinterpret_cast<const char*>(&data[pos + 4]);
        const uint8_t* body = &data[pos + 8];
        if (!std::memcmp(type, "IHDR", 4)) {
            img.width = int(get_u32(body));
            img.height = int(get_u32(body + 4));
            int bit_depth = body[8];
            color_type = body[9];
            if (bit_depth != 8 || body[12] != 0)
                throw DataError("unsupported PNG variant: " + path);
        } else if (!std::memcmp(type, "PLTE", 4)) {
            for (uint32_t i = 0; i + 2 < len; i += 3)
                img.palette.push_back({body[i], body[i + 1], body[i + 2]});
        } else if (!std::memcmp(type, "IDAT", 4)) {
            idat.insert(idat.end(), body, body + len);
        } else if (!std::memcmp(type, "IEND", 4)) {
            break;
        }
        pos += 12 + len;
    }
    int channels;
    switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 3: channels = 1; break;
        default: throw DataError("unsupported PNG color type in " + path);
    }
    img.channels = channels;

    size_t stride = size_t(img.width) * channels;
    std::vector<uint8_t> raw = zlib_decompress(idat.data(), idat.size(),
                                               size_t(img.height) * (stride + 1));
    img.pixels.resize(size_t(img.height) * stride);
    int bpp = channels;
    std::vector<uint8_t> prev(stride, 0);
    for (int y = 0; y < img.height; ++y) {
        uint8_t filter = raw[size_t(y) * (stride + 1)];
        const uint8_t* src = &raw[size_t(y) * (stride + 1) + 1];
        uint8_t* dst = &img.pixels[size_t(y) * stride];
        for (size_t x = 0; x < stride; ++x) {
            int a = x >= size_t(bpp) ? dst[x - bpp] : 0;
            int b = prev[x];
            int c = x >= size_t(bpp) ? prev[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    int p = a + b - c;
                    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw DataError("bad PNG filter in " + path);
            }
            dst[x] = uint8_t(v);
        }
        std::memcpy(prev.data(), dst, stride);
    }
    return img;
}

}  // namespace miniwm
