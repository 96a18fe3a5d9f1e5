#pragma once

#include "saldet/tensor.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace saldet {

// Binary PGM (P5, maxval 255) of a [h, w] tensor; values clamped to [0,1].
inline void write_pgm(const std::string& path, const Tensor& img) {
    if (img.ndim() != 2)
        throw std::invalid_argument("write_pgm: expected a rank-2 tensor, got " + shape_str(img.shape()));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
    int h = img.size(0), w = img.size(1);
    f << "P5\n" << w << " " << h << "\n255\n";
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double v = std::clamp(img(i, j), 0.0, 1.0);
            unsigned char byte = static_cast<unsigned char>(v * 255.0 + 0.5);
            f.write(reinterpret_cast<const char*>(&byte), 1);
        }
    if (!f) throw std::runtime_error("write_pgm: write failed for " + path);
}

// Same, but rescaled so the tensor maximum maps to 255 (attention fields are
// tiny per-cell masses; absolute scale would render them black).
inline void write_pgm_scaled(const std::string& path, const Tensor& img) {
    if (img.ndim() != 2)
        throw std::invalid_argument("write_pgm_scaled: expected a rank-2 tensor, got " + shape_str(img.shape()));
    double mx = 0.0;
    for (std::int64_t i = 0; i < img.numel(); ++i) mx = std::max(mx, img[i]);
    Tensor scaled(img.shape());
    for (std::int64_t i = 0; i < img.numel(); ++i) scaled[i] = mx > 0.0 ? img[i] / mx : 0.0;
    write_pgm(path, scaled);
}

inline void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw std::runtime_error("ensure_dir: cannot create " + path + ": " + ec.message());
}

} // namespace saldet
