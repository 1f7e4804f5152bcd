#pragma once

// Minimal raster plotting: a PNG encoder over zlib, a mel heatmap, and
// line plots for the guidance sweeps. Consumers must link against zlib.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "emodub/core_types.hpp"

namespace emodub::plot {

struct Image {
    int w = 0, h = 0;
    std::vector<unsigned char> rgb;  // 3 bytes per pixel, row major

    Image(int width, int height, unsigned char fill = 255)
        : w(width), h(height), rgb(static_cast<size_t>(width) * height * 3, fill) {}

    void set(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        size_t i = (static_cast<size_t>(y) * w + x) * 3;
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }

    void line(int x0, int y0, int x1, int y1, unsigned char r, unsigned char g, unsigned char b) {
        int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            set(x0, y0, r, g, b);
            if (x0 == x1 && y0 == y1) break;
            int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
};

inline void write_png(const std::string& path, const Image& img) {
    // scanlines with filter byte 0
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<size_t>(img.h) * (img.w * 3 + 1));
    for (int y = 0; y < img.h; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), img.rgb.begin() + static_cast<size_t>(y) * img.w * 3,
                   img.rgb.begin() + static_cast<size_t>(y + 1) * img.w * 3);
    }
    uLongf comp_bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_bound);
    if (compress2(comp.data(), &comp_bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png: deflate failed");
    comp.resize(comp_bound);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    auto be32 = [](uint32_t v) {
        return std::array<unsigned char, 4>{static_cast<unsigned char>(v >> 24),
                                            static_cast<unsigned char>(v >> 16),
                                            static_cast<unsigned char>(v >> 8),
                                            static_cast<unsigned char>(v)};
    };
    auto chunk = [&out, &be32](const char* type, const unsigned char* data, size_t n) {
        auto len = be32(static_cast<uint32_t>(n));
        out.write(reinterpret_cast<const char*>(len.data()), 4);
        uLong crc = crc32(0, reinterpret_cast<const Bytef*>(type), 4);
        if (n) crc = crc32(crc, data, static_cast<uInt>(n));
        out.write(type, 4);
        if (n) out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
        auto c = be32(static_cast<uint32_t>(crc));
        out.write(reinterpret_cast<const char*>(c.data()), 4);
    };

    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    out.write(reinterpret_cast<const char*>(sig), 8);
    unsigned char ihdr[13];
    auto wbe = be32(static_cast<uint32_t>(img.w));
    auto hbe = be32(static_cast<uint32_t>(img.h));
    std::copy(wbe.begin(), wbe.end(), ihdr);
    std::copy(hbe.begin(), hbe.end(), ihdr + 4);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // truecolor
    ihdr[10] = ihdr[11] = ihdr[12] = 0;
    chunk("IHDR", ihdr, 13);
    chunk("IDAT", comp.data(), comp.size());
    chunk("IEND", nullptr, 0);
    if (!out) throw IoError("short write to '" + path + "'");
}

// 3x5 glyphs for axis labels; enough for signed decimal numbers and the
// greek-less names of the sweep parameters.
inline const unsigned char* tiny_glyph(char c) {
    // each glyph: 5 rows of 3 bits, msb left
    static const unsigned char digits[10][5] = {
        {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
        {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 2, 2}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7}};
    static const unsigned char dot[5] = {0, 0, 0, 0, 2};
    static const unsigned char minus[5] = {0, 0, 7, 0, 0};
    static const unsigned char eq[5] = {0, 7, 0, 7, 0};
    static const unsigned char a_[5] = {0, 3, 5, 5, 3};
    static const unsigned char b_[5] = {4, 7, 5, 5, 7};
    static const unsigned char sp[5] = {0, 0, 0, 0, 0};
    if (c >= '0' && c <= '9') return digits[c - '0'];
    switch (c) {
        case '.': return dot;
        case '-': return minus;
        case '=': return eq;
        case 'a': return a_;
        case 'b': return b_;
        default: return sp;
    }
}

inline void draw_text(Image& img, int x, int y, const std::string& text, unsigned char r = 0,
                      unsigned char g = 0, unsigned char b = 0) {
    for (char c : text) {
        const unsigned char* glyph = tiny_glyph(c);
        for (int row = 0; row < 5; ++row)
            for (int col = 0; col < 3; ++col)
                if (glyph[row] & (4 >> col)) img.set(x + col, y + row, r, g, b);
        x += 4;
    }
}

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

inline void viridis(double t, unsigned char* rgb) {
    static const double anchors[5][3] = {{0.267, 0.005, 0.329},
                                         {0.229, 0.322, 0.546},
                                         {0.128, 0.567, 0.551},
                                         {0.369, 0.789, 0.383},
                                         {0.993, 0.906, 0.144}};
    t = std::min(1.0, std::max(0.0, t)) * 4.0;
    int i = std::min(3, static_cast<int>(t));
    double f = t - i;
    for (int c = 0; c < 3; ++c)
        rgb[c] = static_cast<unsigned char>(255.0 * (anchors[i][c] + f * (anchors[i + 1][c] - anchors[i][c])));
}

// Mel heatmap: time left to right, low bins at the bottom.
inline void save_mel_heatmap(const Mat& mel, const std::string& path, int cell = 3) {
    const int T = static_cast<int>(mel.rows());
    const int B = static_cast<int>(mel.cols());
    if (T == 0 || B == 0) throw ShapeError("heatmap: empty mel");
    double lo = mel.minCoeff(), hi = mel.maxCoeff();
    double span = hi - lo > 1e-12 ? hi - lo : 1.0;
    Image img(T * cell, B * cell);
    for (int t = 0; t < T; ++t) {
        for (int b = 0; b < B; ++b) {
            unsigned char rgb[3];
            viridis((mel(t, b) - lo) / span, rgb);
            for (int dy = 0; dy < cell; ++dy)
                for (int dx = 0; dx < cell; ++dx)
                    img.set(t * cell + dx, (B - 1 - b) * cell + dy, rgb[0], rgb[1], rgb[2]);
        }
    }
    write_png(path, img);
}

struct Series {
    std::string label;
    std::vector<double> x, y;
};

// Simple line chart with ticks and a swatch legend.
inline void save_line_plot(const std::vector<Series>& series, const std::string& path,
                           int width = 480, int height = 320) {
    static const unsigned char palette[6][3] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                                                {214, 39, 40},  {148, 103, 189}, {140, 86, 75}};
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymax = ymin + 1;
    const int ml = 42, mr = 12, mt = 12, mb = 26;
    Image img(width, height);
    auto px = [&](double x) {
        return ml + static_cast<int>((x - xmin) / (xmax - xmin) * (width - ml - mr));
    };
    auto py = [&](double y) {
        return height - mb - static_cast<int>((y - ymin) / (ymax - ymin) * (height - mt - mb));
    };
    img.line(ml, mt, ml, height - mb, 0, 0, 0);
    img.line(ml, height - mb, width - mr, height - mb, 0, 0, 0);
    for (int k = 0; k <= 4; ++k) {
        double xv = xmin + (xmax - xmin) * k / 4.0;
        double yv = ymin + (ymax - ymin) * k / 4.0;
        img.line(px(xv), height - mb, px(xv), height - mb + 3, 0, 0, 0);
        draw_text(img, px(xv) - 6, height - mb + 6, format_number(xv));
        img.line(ml - 3, py(yv), ml, py(yv), 0, 0, 0);
        draw_text(img, 4, py(yv) - 2, format_number(yv));
    }
    for (size_t si = 0; si < series.size(); ++si) {
        const auto* c = palette[si % 6];
        const auto& s = series[si];
        for (size_t i = 1; i < s.x.size(); ++i)
            img.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), c[0], c[1], c[2]);
        int ly = mt + 4 + static_cast<int>(si) * 9;
        for (int dx = 0; dx < 6; ++dx)
            for (int dy = 0; dy < 6; ++dy) img.set(width - mr - 70 + dx, ly + dy, c[0], c[1], c[2]);
        draw_text(img, width - mr - 60, ly, s.label);
    }
    write_png(path, img);
}

}  // namespace emodub::plot
