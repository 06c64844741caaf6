#ifndef SSCE_IMAGE_HPP
#define SSCE_IMAGE_HPP

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ssce/checkpoint.hpp"  // IoError

namespace ssce {

// CHW, values in [0,1]
struct Image {
    std::int64_t channels = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<double> pixels;

    double at(std::int64_t c, std::int64_t y, std::int64_t x) const {
        return pixels[static_cast<std::size_t>((c * height + y) * width + x)];
    }
    double& at(std::int64_t c, std::int64_t y, std::int64_t x) {
        return pixels[static_cast<std::size_t>((c * height + y) * width + x)];
    }
};

namespace detail {

inline int pnm_next_token(std::istream& in, std::string& tok) {
    tok.clear();
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (!std::isspace(ch)) break;
    }
    if (ch == EOF) return 0;
    tok.push_back(static_cast<char>(ch));
    while ((ch = in.get()) != EOF && !std::isspace(ch)) tok.push_back(static_cast<char>(ch));
    return 1;
}

}  // namespace detail

inline Image decode_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    if (!detail::pnm_next_token(in, magic) || (magic != "P5" && magic != "P6"))
        throw IoError("not a binary PGM/PPM file: " + path);
    std::string tok;
    std::int64_t vals[3];
    for (int i = 0; i < 3; ++i) {
        if (!detail::pnm_next_token(in, tok)) throw IoError("truncated PNM header: " + path);
        try {
            vals[i] = std::stoll(tok);
        } catch (const std::exception&) {
            throw IoError("bad PNM header token '" + tok + "' in " + path);
        }
    }
    std::int64_t w = vals[0], h = vals[1], maxval = vals[2];
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw IoError("unsupported PNM geometry or depth in " + path);
    std::int64_t c = magic == "P5" ? 1 : 3;
    std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * c));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw IoError("truncated PNM pixel data in " + path);
    Image img;
    img.channels = c;
    img.height = h;
    img.width = w;
    img.pixels.resize(raw.size());
    // interleaved -> planar
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t ch = 0; ch < c; ++ch)
                img.at(ch, y, x) =
                    raw[static_cast<std::size_t>((y * w + x) * c + ch)] / static_cast<double>(maxval);
    return img;
}

inline Image decode_png(const std::string& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str()))
        throw IoError("cannot decode PNG " + path + ": " + png.message);
    bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
    png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::int64_t c = gray ? 1 : 3;
    std::int64_t w = png.width, h = png.height;
    std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * c));
    if (!png_image_finish_read(&png, nullptr, raw.data(), 0, nullptr)) {
        std::string msg = png.message;
        png_image_free(&png);
        throw IoError("cannot decode PNG " + path + ": " + msg);
    }
    Image img;
    img.channels = c;
    img.height = h;
    img.width = w;
    img.pixels.resize(raw.size());
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t ch = 0; ch < c; ++ch)
                img.at(ch, y, x) = raw[static_cast<std::size_t>((y * w + x) * c + ch)] / 255.0;
    return img;
}

inline void encode_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw IoError("encode_png: channels must be 1 or 3");
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<unsigned char> raw(
        static_cast<std::size_t>(img.width * img.height * img.channels));
    for (std::int64_t y = 0; y < img.height; ++y)
        for (std::int64_t x = 0; x < img.width; ++x)
            for (std::int64_t ch = 0; ch < img.channels; ++ch)
                raw[static_cast<std::size_t>((y * img.width + x) * img.channels + ch)] =
                    static_cast<unsigned char>(
                        std::lround(std::clamp(img.at(ch, y, x), 0.0, 1.0) * 255.0));
    if (!png_image_write_to_file(&png, path.c_str(), 0, raw.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path + ": " + png.message);
}

inline void encode_pgm(const std::string& path, const Image& img) {
    if (img.channels != 1) throw IoError("encode_pgm: grayscale only");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    for (std::int64_t y = 0; y < img.height; ++y)
        for (std::int64_t x = 0; x < img.width; ++x)
            out.put(static_cast<char>(
                std::lround(std::clamp(img.at(0, y, x), 0.0, 1.0) * 255.0)));
    if (!out) throw IoError("failed writing " + path);
}

// dispatch by extension
inline Image decode_image(const std::string& path) {
    std::string ext = std::filesystem::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") return decode_png(path);
    if (ext == ".pgm" || ext == ".ppm") return decode_pnm(path);
    throw IoError("unsupported image extension '" + ext + "' for " + path);
}

// rgb <-> gray; gray replicates, rgb collapses by ITU-R 601 luma
inline Image convert_channels(const Image& img, std::int64_t channels) {
    if (channels != 1 && channels != 3) throw IoError("convert_channels: target must be 1 or 3");
    if (img.channels == channels) return img;
    Image out;
    out.channels = channels;
    out.height = img.height;
    out.width = img.width;
    out.pixels.resize(static_cast<std::size_t>(channels * img.height * img.width));
    for (std::int64_t y = 0; y < img.height; ++y)
        for (std::int64_t x = 0; x < img.width; ++x) {
            if (channels == 1) {
                out.at(0, y, x) =
                    0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
            } else {
                for (std::int64_t c = 0; c < 3; ++c) out.at(c, y, x) = img.at(0, y, x);
            }
        }
    return out;
}

inline Image bilinear_resize(const Image& img, std::int64_t height, std::int64_t width) {
    if (height <= 0 || width <= 0) throw IoError("bilinear_resize: non-positive target size");
    if (img.height == height && img.width == width) return img;
    Image out;
    out.channels = img.channels;
    out.height = height;
    out.width = width;
    out.pixels.resize(static_cast<std::size_t>(img.channels * height * width));
    double sy = static_cast<double>(img.height) / static_cast<double>(height);
    double sx = static_cast<double>(img.width) / static_cast<double>(width);
    for (std::int64_t y = 0; y < height; ++y) {
        double fy = std::max(0.0, (static_cast<double>(y) + 0.5) * sy - 0.5);
        std::int64_t y0 = std::min<std::int64_t>(static_cast<std::int64_t>(fy), img.height - 1);
        std::int64_t y1 = std::min<std::int64_t>(y0 + 1, img.height - 1);
        double wy = fy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < width; ++x) {
            double fx = std::max(0.0, (static_cast<double>(x) + 0.5) * sx - 0.5);
            std::int64_t x0 = std::min<std::int64_t>(static_cast<std::int64_t>(fx), img.width - 1);
            std::int64_t x1 = std::min<std::int64_t>(x0 + 1, img.width - 1);
            double wx = fx - static_cast<double>(x0);
            for (std::int64_t c = 0; c < img.channels; ++c) {
                double top = (1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1);
                double bot = (1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1);
                out.at(c, y, x) = (1 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

}  // namespace ssce

#endif  // SSCE_IMAGE_HPP
