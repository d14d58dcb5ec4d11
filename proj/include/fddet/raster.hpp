#pragma once

// 8-bit RGB raster grid plus binary PPM (P6) I/O. P6 is the one required
// format: codec-free, byte-exact, so round-trips can be compared bit for
// bit in tests.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fddet/core.hpp"

namespace fddet {

struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, 3 bytes (r,g,b) per pixel

    static Raster filled(int w, int h, std::array<std::uint8_t, 3> rgb) {
        if (w < 1 || h < 1) {
            throw ValidationError("Raster::filled: dimensions must be positive");
        }
        Raster r;
        r.width = w;
        r.height = h;
        r.pixels.resize(static_cast<std::size_t>(w) * h * 3);
        for (std::size_t i = 0; i < r.pixels.size(); i += 3) {
            r.pixels[i] = rgb[0];
            r.pixels[i + 1] = rgb[1];
            r.pixels[i + 2] = rgb[2];
        }
        return r;
    }

    std::uint8_t* at(int x, int y) {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    bool operator==(const Raster&) const = default;
};

namespace detail {

/// Writes bytes to a temp file next to `path` and renames it into place, so
/// a failed write never leaves a partial file behind.
inline void write_bytes_atomic(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.parent_path().empty()
                                          ? std::filesystem::path(path.string() + ".tmp")
                                          : path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw IoError("short write to '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot rename temp file into '" + path.string() + "'");
    }
}

}  // namespace detail

/// Loads a binary PPM (P6, maxval 255). Format violations report the byte
/// offset where parsing stopped.
inline Raster load_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open raster file '" + path.string() + "'");
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    std::size_t pos = 0;
    auto fail = [&](const std::string& what) -> FormatError {
        return FormatError("'" + path.string() + "': " + what + " at byte offset " +
                           std::to_string(pos));
    };

    if (bytes.size() < 2 || bytes[0] != 'P') {
        throw fail("not a PPM file (missing magic number)");
    }
    if (bytes[1] == '3') {
        throw fail("unsupported PPM variant P3 (ASCII); only binary P6 is supported");
    }
    if (bytes[1] != '6') {
        throw fail(std::string("unsupported PPM magic 'P") + bytes[1] + "'");
    }
    pos = 2;

    auto skip_space = [&]() {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&](const char* name) -> long {
        skip_space();
        if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') {
            throw fail(std::string("expected ") + name);
        }
        long v = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1000000000L) throw fail(std::string(name) + " out of range");
            ++pos;
        }
        return v;
    };

    const long w = read_int("width");
    const long h = read_int("height");
    const long maxval = read_int("maxval");
    if (w < 1 || h < 1) {
        throw fail("dimensions must be positive");
    }
    if (maxval != 255) {
        throw fail("maxval must be 255, got " + std::to_string(maxval));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if (pos >= bytes.size() ||
        !(bytes[pos] == ' ' || bytes[pos] == '\t' || bytes[pos] == '\r' || bytes[pos] == '\n')) {
        throw fail("expected single whitespace byte after maxval");
    }
    ++pos;

    const std::size_t expected = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
    if (bytes.size() - pos < expected) {
        throw fail("truncated pixel payload: expected " + std::to_string(expected) +
                   " bytes, got " + std::to_string(bytes.size() - pos));
    }
    if (bytes.size() - pos > expected) {
        throw fail("trailing data after pixel payload: expected " + std::to_string(expected) +
                   " bytes, got " + std::to_string(bytes.size() - pos));
    }

    Raster r;
    r.width = static_cast<int>(w);
    r.height = static_cast<int>(h);
    r.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return r;
}

inline void save_ppm(const Raster& r, const std::filesystem::path& path) {
    if (r.width < 1 || r.height < 1) {
        throw ValidationError("save_ppm: raster dimensions must be positive");
    }
    if (r.pixels.size() != static_cast<std::size_t>(r.width) * r.height * 3) {
        throw ValidationError("save_ppm: pixel buffer size does not match dimensions");
    }
    std::string bytes = "P6\n" + std::to_string(r.width) + " " + std::to_string(r.height) +
                        "\n255\n";
    bytes.append(reinterpret_cast<const char*>(r.pixels.data()), r.pixels.size());
    detail::write_bytes_atomic(path, bytes);
}

}  // namespace fddet
