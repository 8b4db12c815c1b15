#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vecsketch/common.hpp"
#include "vecsketch/raster.hpp"

namespace vecsketch {

// Minimal 8-bit PNG I/O (grayscale / RGB, no interlace). The writer always emits
// filter 0 scanlines; the reader handles filters 0-4.

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(std::uint8_t(x >> 24));
    v.push_back(std::uint8_t(x >> 16));
    v.push_back(std::uint8_t(x >> 8));
    v.push_back(std::uint8_t(x));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& data) {
    put_be32(out, std::uint32_t(data.size()));
    std::vector<std::uint8_t> td(type, type + 4);
    td.insert(td.end(), data.begin(), data.end());
    out.insert(out.end(), td.begin(), td.end());
    put_be32(out, std::uint32_t(crc32(0, td.data(), uInt(td.size()))));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const RasterImage& img) {
    const int bpp = img.channels;
    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(img.height) * (1 + std::size_t(img.width) * bpp));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter: none
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < bpp; ++c) {
                const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
                raw.push_back(std::uint8_t(std::lround(v * 255.0)));
            }
    }
    uLongf comp_len = compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 9) != Z_OK)
        throw NumericError("encode_png: compression failed");
    comp.resize(comp_len);

    std::vector<std::uint8_t> out{137, 80, 78, 71, 13, 10, 26, 10};
    std::vector<std::uint8_t> ihdr;
    detail::put_be32(ihdr, std::uint32_t(img.width));
    detail::put_be32(ihdr, std::uint32_t(img.height));
    ihdr.push_back(8);                                  // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);          // color type
    ihdr.insert(ihdr.end(), {0, 0, 0});                 // compression, filter, interlace
    detail::png_chunk(out, "IHDR", ihdr);
    detail::png_chunk(out, "IDAT", comp);
    detail::png_chunk(out, "IEND", {});
    return out;
}

inline void write_png(const std::string& path, const RasterImage& img) {
    const auto bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("write_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

inline RasterImage decode_png(const std::vector<std::uint8_t>& bytes) {
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw ConfigError("decode_png: not a PNG file");
    auto be32 = [&](std::size_t o) {
        return (std::uint32_t(bytes[o]) << 24) | (std::uint32_t(bytes[o + 1]) << 16) |
               (std::uint32_t(bytes[o + 2]) << 8) | std::uint32_t(bytes[o + 3]);
    };
    int w = 0, h = 0, channels = 0;
    std::vector<std::uint8_t> idat;
    std::size_t off = 8;
    while (off + 8 <= bytes.size()) {
        const std::uint32_t len = be32(off);
        const std::string type(reinterpret_cast<const char*>(&bytes[off + 4]), 4);
        const std::size_t data = off + 8;
        if (data + len > bytes.size()) throw ConfigError("decode_png: truncated chunk");
        if (type == "IHDR") {
            w = int(be32(data));
            h = int(be32(data + 4));
            const int depth = bytes[data + 8], color = bytes[data + 9], interlace = bytes[data + 12];
            if (depth != 8 || (color != 0 && color != 2) || interlace != 0)
                throw ConfigError("decode_png: unsupported PNG variant (need 8-bit gray/RGB, no interlace)");
            channels = color == 0 ? 1 : 3;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), bytes.begin() + std::ptrdiff_t(data), bytes.begin() + std::ptrdiff_t(data + len));
        } else if (type == "IEND") {
            break;
        }
        off = data + len + 4;
    }
    if (w <= 0 || h <= 0 || idat.empty()) throw ConfigError("decode_png: missing IHDR/IDAT");

    const std::size_t stride = std::size_t(w) * channels;
    std::vector<std::uint8_t> raw(std::size_t(h) * (stride + 1));
    uLongf raw_len = uLongf(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK || raw_len != raw.size())
        throw ConfigError("decode_png: inflate failed");

    RasterImage img(h, w, channels);
    std::vector<std::uint8_t> prev(stride, 0), cur(stride);
    for (int y = 0; y < h; ++y) {
        const std::uint8_t filter = raw[std::size_t(y) * (stride + 1)];
        const std::uint8_t* line = &raw[std::size_t(y) * (stride + 1) + 1];
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= std::size_t(channels) ? cur[i - channels] : 0;
            const int b = prev[i];
            const int c = i >= std::size_t(channels) ? prev[i - channels] : 0;
            int v = line[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw ConfigError("decode_png: bad filter byte");
            }
            cur[i] = std::uint8_t(v & 0xff);
        }
        for (std::size_t i = 0; i < stride; ++i) img.data[std::size_t(y) * stride + i] = cur[i] / 255.0;
        std::swap(prev, cur);
    }
    return img;
}

inline RasterImage read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("read_png: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

}  // namespace vecsketch
