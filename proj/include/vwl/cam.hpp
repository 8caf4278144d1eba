#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "vwl/core.hpp"
#include "vwl/image_io.hpp"

namespace vwl {

template <class T>
struct ClassActivationMaps {
    int L = 0, h = 0, w = 0;
    Tensor<T> raw;         // L x h x w weighted feature sums
    Tensor<T> rectified;   // max(raw, 0)
    Tensor<T> normalized;  // rectified / per-class max (zeros if the max is 0)
};

// raw[c] = sum_i W_img[i][c] * F[:,:,i]
template <class T>
ClassActivationMaps<T> compute_cams(const Tensor<T>& F, const std::vector<T>& W_img, int L) {
    if (F.dims.size() != 3) throw ShapeError("feature map must be h x w x d");
    const int h = F.dim(0), w = F.dim(1), d = F.dim(2);
    if (W_img.size() != static_cast<size_t>(d) * L)
        throw ShapeError("weight matrix size " + std::to_string(W_img.size()) + " != d*L = " +
                         std::to_string(static_cast<size_t>(d) * L));
    ClassActivationMaps<T> cams;
    cams.L = L;
    cams.h = h;
    cams.w = w;
    cams.raw = Tensor<T>({L, h, w});
    cams.rectified = Tensor<T>({L, h, w});
    cams.normalized = Tensor<T>({L, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const T* f = F.data() + (static_cast<size_t>(y) * w + x) * d;
            for (int c = 0; c < L; ++c) {
                T acc = T(0);
                for (int i = 0; i < d; ++i) acc += W_img[static_cast<size_t>(i) * L + c] * f[i];
                cams.raw(c, y, x) = acc;
            }
        }
    for (int c = 0; c < L; ++c) {
        T mx = T(0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                T r = std::max(cams.raw(c, y, x), T(0));
                cams.rectified(c, y, x) = r;
                mx = std::max(mx, r);
            }
        if (mx > T(0)) {
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) cams.normalized(c, y, x) = cams.rectified(c, y, x) / mx;
        }  // else: normalized stays all zero
    }
    return cams;
}

// Per-pixel argmax over the image-level-present classes; background wherever
// every present-class score falls below theta_bg. Ties go to the lowest
// class id.
template <class T>
std::vector<uint8_t> pseudo_labels(const ClassActivationMaps<T>& cams,
                                   const std::vector<int>& present, double theta_bg) {
    if (present.empty()) throw ParamError("present class set must be nonempty");
    std::vector<int> cls(present);
    std::sort(cls.begin(), cls.end());
    cls.erase(std::unique(cls.begin(), cls.end()), cls.end());
    for (int c : cls)
        if (c < 0 || c >= cams.L) throw ParamError("present class id out of range");
    std::vector<uint8_t> mask(static_cast<size_t>(cams.h) * cams.w, 0);
    const T th = static_cast<T>(theta_bg);
    for (int y = 0; y < cams.h; ++y)
        for (int x = 0; x < cams.w; ++x) {
            int best = -1;
            T best_v = T(0);
            for (int c : cls) {
                T v = cams.normalized(c, y, x);
                if (best < 0 || v > best_v) {
                    best = c;
                    best_v = v;
                }
            }
            if (best_v >= th) mask[static_cast<size_t>(y) * cams.w + x] = static_cast<uint8_t>(best + 1);
        }
    return mask;
}

// bilinear, half-pixel-centered sampling; output values stay inside the
// input's range because every sample is a convex combination
template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& map, int H, int W) {
    if (map.dims.size() != 2) throw ShapeError("upsample_bilinear expects a 2-d map");
    const int h = map.dim(0), w = map.dim(1);
    if (h == H && w == W) return map;
    Tensor<T> out({H, W});
    const double sy = static_cast<double>(h) / H;
    const double sx = static_cast<double>(w) / W;
    for (int y = 0; y < H; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y1 = std::min(std::max(y0 + 1, 0), h - 1);
        y0 = std::min(std::max(y0, 0), h - 1);
        for (int x = 0; x < W; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x1 = std::min(std::max(x0 + 1, 0), w - 1);
            x0 = std::min(std::max(x0, 0), w - 1);
            double v = (1 - wy) * ((1 - wx) * map(y0, x0) + wx * map(y0, x1)) +
                       wy * ((1 - wx) * map(y1, x0) + wx * map(y1, x1));
            out(y, x) = static_cast<T>(v);
        }
    }
    return out;
}

inline std::vector<uint8_t> upsample_nearest(const std::vector<uint8_t>& mask, int h, int w, int H,
                                             int W) {
    if (static_cast<long long>(mask.size()) != static_cast<long long>(h) * w)
        throw ShapeError("mask size mismatch");
    if (h == H && w == W) return mask;
    std::vector<uint8_t> out(static_cast<size_t>(H) * W);
    for (int y = 0; y < H; ++y) {
        int sy = std::min(static_cast<int>((y + 0.5) * h / H), h - 1);
        for (int x = 0; x < W; ++x) {
            int sx = std::min(static_cast<int>((x + 0.5) * w / W), w - 1);
            out[static_cast<size_t>(y) * W + x] = mask[static_cast<size_t>(sy) * w + sx];
        }
    }
    return out;
}

// upsample normalized maps of every class to image resolution
template <class T>
ClassActivationMaps<T> upsample_cams(const ClassActivationMaps<T>& cams, int H, int W) {
    ClassActivationMaps<T> out;
    out.L = cams.L;
    out.h = H;
    out.w = W;
    out.raw = Tensor<T>({cams.L, H, W});
    out.rectified = Tensor<T>({cams.L, H, W});
    out.normalized = Tensor<T>({cams.L, H, W});
    for (int c = 0; c < cams.L; ++c) {
        Tensor<T> plane({cams.h, cams.w});
        auto lift = [&](const Tensor<T>& src, Tensor<T>& dst) {
            for (int y = 0; y < cams.h; ++y)
                for (int x = 0; x < cams.w; ++x) plane(y, x) = src(c, y, x);
            Tensor<T> up = upsample_bilinear(plane, H, W);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) dst(c, y, x) = up(y, x);
        };
        lift(cams.raw, out.raw);
        lift(cams.rectified, out.rectified);
        lift(cams.normalized, out.normalized);
    }
    return out;
}

namespace detail {
// compact blue->cyan->yellow->red ramp
inline void heat_color(double v, double& r, double& g, double& b) {
    v = std::min(std::max(v, 0.0), 1.0);
    r = std::min(std::max(1.5 - std::fabs(4.0 * v - 3.0), 0.0), 1.0);
    g = std::min(std::max(1.5 - std::fabs(4.0 * v - 2.0), 0.0), 1.0);
    b = std::min(std::max(1.5 - std::fabs(4.0 * v - 1.0), 0.0), 1.0);
}
}  // namespace detail

// One blended image per present class; zero activation leaves the input
// pixel untouched. Returns the written paths in class order.
template <class T>
std::vector<std::string> export_heatmaps(const Tensor<T>& image, const ClassActivationMaps<T>& cams,
                                         const std::vector<int>& present,
                                         const std::vector<std::string>& class_names,
                                         const std::string& out_dir, const std::string& base_name) {
    namespace fs = std::filesystem;
    if (image.dims.size() != 3 || image.dim(2) != 3) throw ShapeError("image must be H x W x 3");
    const int H = image.dim(0), W = image.dim(1);
    fs::create_directories(out_dir);
    ClassActivationMaps<T> up = (cams.h == H && cams.w == W) ? cams : upsample_cams(cams, H, W);
    std::vector<std::string> paths;
    const double alpha = 0.6;
    for (int c : present) {
        Tensor<T> blend({H, W, 3});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double v = static_cast<double>(up.normalized(c, y, x));
                double r, g, b;
                detail::heat_color(v, r, g, b);
                double a = alpha * v;
                blend(y, x, 0) = static_cast<T>((1 - a) * image(y, x, 0) + a * r);
                blend(y, x, 1) = static_cast<T>((1 - a) * image(y, x, 1) + a * g);
                blend(y, x, 2) = static_cast<T>((1 - a) * image(y, x, 2) + a * b);
            }
        std::string cname =
            c < static_cast<int>(class_names.size()) ? class_names[static_cast<size_t>(c)]
                                                     : std::to_string(c);
        std::string path = (fs::path(out_dir) / (base_name + "_cam_" + cname + ".ppm")).string();
        write_ppm(path, blend);
        paths.push_back(path);
    }
    return paths;
}

}  // namespace vwl
