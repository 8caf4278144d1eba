#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "vwl/config.hpp"
#include "vwl/core.hpp"
#include "vwl/image_io.hpp"

namespace vwl {

enum class ShapeKind { disk = 0, square, triangle, ring, cross };
enum class FillStyle { solid = 0, two_tone };
enum class BackgroundKind { flat = 0, gradient, speckle, mix };

inline const char* shape_kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::disk: return "disk";
        case ShapeKind::square: return "square";
        case ShapeKind::triangle: return "triangle";
        case ShapeKind::ring: return "ring";
        case ShapeKind::cross: return "cross";
    }
    return "?";
}

inline BackgroundKind background_from_string(const std::string& s) {
    if (s == "flat") return BackgroundKind::flat;
    if (s == "gradient") return BackgroundKind::gradient;
    if (s == "speckle") return BackgroundKind::speckle;
    if (s == "mix") return BackgroundKind::mix;
    throw ConfigError("unknown background family: " + s + " (expected flat|gradient|speckle|mix)");
}

inline const char* background_name(BackgroundKind b) {
    switch (b) {
        case BackgroundKind::flat: return "flat";
        case BackgroundKind::gradient: return "gradient";
        case BackgroundKind::speckle: return "speckle";
        case BackgroundKind::mix: return "mix";
    }
    return "?";
}

struct ShapeSpec {
    int class_id = 0;
    ShapeKind shape_kind = ShapeKind::disk;
    FillStyle fill_style = FillStyle::solid;
    double center_x = 0.5, center_y = 0.5;  // normalized image coordinates
    double size = 0.15;                     // normalized half-extent
    double rotation = 0.0;                  // radians
};

template <class T>
struct Sample {
    Tensor<T> image;               // H x W x 3, values on the 1/255 grid
    std::vector<uint8_t> gt_mask;  // H*W over {0..L}, 0 = background
    std::vector<uint8_t> y_img;    // length L, 0/1
};

struct DataConfig {
    int n = 2200;
    int image_size = 64;
    int num_classes = 5;
    int min_shapes = 1;
    int max_shapes = 3;
    BackgroundKind background = BackgroundKind::mix;
    int total_stride = 4;  // backbone stride the image size must divide by
    double two_tone_prob = 0.7;
    double size_min = 0.11;
    double size_max = 0.22;
    // probability that the background tint drifts toward the hue of a class
    // present in the image; this is the background-leakage knob that makes
    // global average pooling overestimate object extents
    double context_tint_prob = 0.65;

    void validate() const {
        if (n < 1) throw ConfigError("dataset size must be >= 1");
        if (num_classes < 2 || num_classes > 8)
            throw ConfigError("num_classes must be in [2, 8], got " + std::to_string(num_classes));
        if (image_size < 8) throw ConfigError("image_size too small");
        if (total_stride < 1 || image_size % total_stride != 0)
            throw ConfigError("image size " + std::to_string(image_size) +
                              " is not divisible by total stride " + std::to_string(total_stride));
        if (min_shapes < 1 || max_shapes < min_shapes)
            throw ConfigError("invalid shapes-per-image range");
        if (size_min <= 0 || size_max < size_min || size_max > 0.35)
            throw ConfigError("invalid shape size range");
        if (two_tone_prob < 0 || two_tone_prob > 1) throw ConfigError("two_tone_prob must be in [0,1]");
        if (context_tint_prob < 0 || context_tint_prob > 1)
            throw ConfigError("context_tint_prob must be in [0,1]");
    }

    KeyValueConfig to_kv() const {
        KeyValueConfig kv;
        kv.set_int("data.n", n);
        kv.set_int("data.image_size", image_size);
        kv.set_int("data.num_classes", num_classes);
        kv.set_int("data.min_shapes", min_shapes);
        kv.set_int("data.max_shapes", max_shapes);
        kv.set("data.background", background_name(background));
        kv.set_int("data.total_stride", total_stride);
        kv.set_real("data.two_tone_prob", two_tone_prob);
        kv.set_real("data.size_min", size_min);
        kv.set_real("data.size_max", size_max);
        kv.set_real("data.context_tint_prob", context_tint_prob);
        return kv;
    }

    static DataConfig from_kv(const KeyValueConfig& kv) {
        DataConfig c;
        c.n = static_cast<int>(kv.get_int("data.n"));
        c.image_size = static_cast<int>(kv.get_int("data.image_size"));
        c.num_classes = static_cast<int>(kv.get_int("data.num_classes"));
        c.min_shapes = static_cast<int>(kv.get_int("data.min_shapes"));
        c.max_shapes = static_cast<int>(kv.get_int("data.max_shapes"));
        c.background = background_from_string(kv.get("data.background"));
        c.total_stride = static_cast<int>(kv.get_int("data.total_stride"));
        c.two_tone_prob = kv.get_real("data.two_tone_prob");
        c.size_min = kv.get_real("data.size_min");
        c.size_max = kv.get_real("data.size_max");
        c.context_tint_prob = kv.get_real("data.context_tint_prob");
        return c;
    }

    uint64_t hash() const { return to_kv().hash(); }
};

template <class T>
struct Dataset {
    std::vector<Sample<T>> samples;
    uint64_t seed = 0;
    std::vector<std::string> class_names;
    int image_size = 0;
    int num_classes = 0;
    uint64_t config_hash = 0;
};

namespace detail {

// circumradius of each shape in its local unit frame; placement keeps
// center +- size*radius inside the canvas for any rotation
inline double bounding_radius(ShapeKind k) {
    switch (k) {
        case ShapeKind::square: return 1.4142135623730951;
        case ShapeKind::cross: return 1.0537551497929028;  // sqrt(1 + 0.33^2)
        default: return 1.0;
    }
}

// membership of a local-frame point; shapes are star-shaped around the
// origin so scaling the point probes an eroded copy
inline bool inside_shape(ShapeKind k, double px, double py) {
    switch (k) {
        case ShapeKind::disk:
            return px * px + py * py <= 1.0;
        case ShapeKind::square:
            return std::fabs(px) <= 1.0 && std::fabs(py) <= 1.0;
        case ShapeKind::triangle: {
            // vertices (0,1), (-s3,-1/2), (s3,-1/2) with s3 = sqrt(3)/2
            const double s3 = 0.8660254037844386;
            auto side = [](double ax, double ay, double bx, double by, double x, double y) {
                return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
            };
            double d0 = side(0, 1, -s3, -0.5, px, py);
            double d1 = side(-s3, -0.5, s3, -0.5, px, py);
            double d2 = side(s3, -0.5, 0, 1, px, py);
            return (d0 <= 0 && d1 <= 0 && d2 <= 0) || (d0 >= 0 && d1 >= 0 && d2 >= 0);
        }
        case ShapeKind::ring: {
            double r2 = px * px + py * py;
            return r2 >= 0.55 * 0.55 && r2 <= 1.0;
        }
        case ShapeKind::cross:
            return (std::fabs(px) <= 0.33 && std::fabs(py) <= 1.0) ||
                   (std::fabs(py) <= 0.33 && std::fabs(px) <= 1.0);
    }
    return false;
}

// two-tone split: border band vs. interior core
inline bool in_interior_core(ShapeKind k, double px, double py) {
    if (k == ShapeKind::ring) {
        double r = std::sqrt(px * px + py * py);
        return r < 0.775;  // inner half of the band
    }
    const double core = 0.62;
    return inside_shape(k, px / core, py / core);
}

struct Rgb {
    double r, g, b;
};

inline Rgb hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    double c = v * s;
    double hp = h * 6.0;
    double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    double m = v - c;
    return {r + m, g + m, b + m};
}

}  // namespace detail

// Generates n samples, each with 1-3 non-overlapping shapes on a
// low-contrast background. Every sample is a pure function of
// (config, seed, index).
template <class T>
Dataset<T> generate_dataset(const DataConfig& cfg, uint64_t seed) {
    cfg.validate();
    const int H = cfg.image_size, W = cfg.image_size, L = cfg.num_classes;

    Dataset<T> ds;
    ds.seed = seed;
    ds.image_size = cfg.image_size;
    ds.num_classes = L;
    ds.config_hash = cfg.hash();
    for (int c = 0; c < L; ++c) {
        std::string name = shape_kind_name(static_cast<ShapeKind>(c % 5));
        if (c >= 5) name += std::to_string(c / 5 + 1);
        ds.class_names.push_back(name);
    }

    ds.samples.reserve(static_cast<size_t>(cfg.n));
    for (int idx = 0; idx < cfg.n; ++idx) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(idx)));
        Sample<T> s;
        s.image = Tensor<T>({H, W, 3});
        s.gt_mask.assign(static_cast<size_t>(H) * W, 0);
        s.y_img.assign(static_cast<size_t>(L), 0);

        // shapes: rejection-sampled non-overlapping placements
        int want = cfg.min_shapes + rng.uniform_int(cfg.max_shapes - cfg.min_shapes + 1);
        std::vector<ShapeSpec> placed;
        const double px_margin = 1.0 / cfg.image_size;
        for (int si = 0; si < want; ++si) {
            bool ok = false;
            ShapeSpec spec;
            for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
                spec.class_id = rng.uniform_int(L);
                spec.shape_kind = static_cast<ShapeKind>(spec.class_id % 5);
                spec.fill_style =
                    rng.uniform() < cfg.two_tone_prob ? FillStyle::two_tone : FillStyle::solid;
                spec.size = rng.uniform(cfg.size_min, cfg.size_max);
                spec.rotation = rng.uniform(0, 6.283185307179586);
                double bound = spec.size * detail::bounding_radius(spec.shape_kind);
                double m = bound + px_margin;
                if (m >= 0.5) continue;
                spec.center_x = rng.uniform(m, 1.0 - m);
                spec.center_y = rng.uniform(m, 1.0 - m);
                ok = true;
                for (const ShapeSpec& o : placed) {
                    double ob = o.size * detail::bounding_radius(o.shape_kind);
                    double dx = spec.center_x - o.center_x, dy = spec.center_y - o.center_y;
                    double min_dist = bound + ob + 2.0 * px_margin;
                    if (dx * dx + dy * dy < min_dist * min_dist) {
                        ok = false;
                        break;
                    }
                }
            }
            if (!ok) break;  // canvas is crowded; keep what fits
            placed.push_back(spec);
        }

        // background; with probability context_tint_prob its hue drifts
        // toward a present class, planting class-correlated context
        BackgroundKind bg = cfg.background;
        if (bg == BackgroundKind::mix)
            bg = static_cast<BackgroundKind>(rng.uniform_int(3));
        double bh = rng.uniform();
        double bs = rng.uniform(0.04, 0.10);
        double bv = rng.uniform(0.45, 0.62);
        if (!placed.empty() && rng.uniform() < cfg.context_tint_prob) {
            const ShapeSpec& anchor = placed[static_cast<size_t>(rng.uniform_int(
                static_cast<int>(placed.size())))];
            bh = (anchor.class_id + 0.35) / L + rng.uniform(-0.02, 0.02);
            bs = rng.uniform(0.10, 0.18);
        }
        detail::Rgb base = detail::hsv_to_rgb(bh, bs, bv);
        double gx = 0, gy = 0, gamp = 0;
        if (bg == BackgroundKind::gradient) {
            double ang = rng.uniform(0, 6.283185307179586);
            gx = std::cos(ang);
            gy = std::sin(ang);
            gamp = rng.uniform(0.05, 0.10);
        }
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double r = base.r, g = base.g, b = base.b;
                if (bg == BackgroundKind::gradient) {
                    double t = (x + 0.5) / W * gx + (y + 0.5) / H * gy - 0.5 * (gx + gy);
                    r += gamp * t;
                    g += gamp * t;
                    b += gamp * t;
                } else if (bg == BackgroundKind::speckle) {
                    double nse = rng.uniform(-0.035, 0.035);
                    r += nse;
                    g += nse;
                    b += nse;
                }
                s.image(y, x, 0) = static_cast<T>(r);
                s.image(y, x, 1) = static_cast<T>(g);
                s.image(y, x, 2) = static_cast<T>(b);
            }
        }

        for (const ShapeSpec& spec : placed) {
            double hue = (spec.class_id + 0.35) / L;
            // solid fills carry the class hue everywhere; two-tone fills
            // carry it only on the border band while interiors share a
            // light desaturated palette, so class evidence lives in parts
            detail::Rgb inner =
                spec.fill_style == FillStyle::two_tone
                    ? detail::hsv_to_rgb(hue + rng.uniform(-0.05, 0.05), rng.uniform(0.04, 0.14),
                                         rng.uniform(0.78, 0.92))
                    : detail::hsv_to_rgb(hue + rng.uniform(-0.03, 0.03), rng.uniform(0.55, 0.85),
                                         rng.uniform(0.62, 0.88));
            detail::Rgb border = detail::hsv_to_rgb(hue + 0.02 * rng.uniform(-1, 1),
                                                    rng.uniform(0.75, 0.95), rng.uniform(0.45, 0.70));
            const double ct = std::cos(-spec.rotation), st = std::sin(-spec.rotation);
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    double dx = ((x + 0.5) / W - spec.center_x) / spec.size;
                    double dy = ((y + 0.5) / H - spec.center_y) / spec.size;
                    double px = ct * dx - st * dy;
                    double py = st * dx + ct * dy;
                    if (!detail::inside_shape(spec.shape_kind, px, py)) continue;
                    const detail::Rgb& col =
                        (spec.fill_style == FillStyle::two_tone &&
                         !detail::in_interior_core(spec.shape_kind, px, py))
                            ? border
                            : inner;
                    s.image(y, x, 0) = static_cast<T>(col.r);
                    s.image(y, x, 1) = static_cast<T>(col.g);
                    s.image(y, x, 2) = static_cast<T>(col.b);
                    s.gt_mask[static_cast<size_t>(y) * W + x] =
                        static_cast<uint8_t>(spec.class_id + 1);
                }
            }
        }

        // y_img derived from the rendered mask, never from intent
        for (uint8_t m : s.gt_mask)
            if (m > 0) s.y_img[m - 1] = 1;

        for (auto& px : s.image.v) px = snap_to_byte_grid(px);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// Ordered disjoint partition at index n_first.
template <class T>
std::pair<Dataset<T>, Dataset<T>> split_at(const Dataset<T>& ds, int n_first) {
    const int n = static_cast<int>(ds.samples.size());
    if (n_first < 0 || n_first > n) throw ConfigError("split point out of range");
    Dataset<T> a, b;
    a.seed = b.seed = ds.seed;
    a.class_names = b.class_names = ds.class_names;
    a.image_size = b.image_size = ds.image_size;
    a.num_classes = b.num_classes = ds.num_classes;
    a.config_hash = b.config_hash = ds.config_hash;
    a.samples.assign(ds.samples.begin(), ds.samples.begin() + n_first);
    b.samples.assign(ds.samples.begin() + n_first, ds.samples.end());
    return {std::move(a), std::move(b)};
}

// Partition into ceil(n*f) / n - ceil(n*f) pieces, order preserved.
template <class T>
std::pair<Dataset<T>, Dataset<T>> split(const Dataset<T>& ds, double train_fraction) {
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
        throw ConfigError("train fraction must be in (0, 1), got " + std::to_string(train_fraction));
    const int n = static_cast<int>(ds.samples.size());
    int n_first = static_cast<int>(std::ceil(static_cast<double>(n) * train_fraction));
    if (n_first > n) n_first = n;
    return split_at(ds, n_first);
}

// ---- Directory persistence: one PPM + one PGM per sample + manifest.txt ----

template <class T>
void save_dataset(const Dataset<T>& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream man(fs::path(dir) / "manifest.txt");
    if (!man) throw FormatError("cannot write manifest in " + dir);
    man << "format vwl-dataset\n";
    man << "version 1\n";
    man << "seed " << ds.seed << "\n";
    man << "config_hash " << hex64(ds.config_hash) << "\n";
    man << "image_size " << ds.image_size << "\n";
    man << "num_classes " << ds.num_classes << "\n";
    man << "class_names ";
    for (size_t i = 0; i < ds.class_names.size(); ++i) man << (i ? "," : "") << ds.class_names[i];
    man << "\n";
    man << "count " << ds.samples.size() << "\n";
    char img_name[32], mask_name[32];
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        std::snprintf(img_name, sizeof img_name, "img_%05zu.ppm", i);
        std::snprintf(mask_name, sizeof mask_name, "mask_%05zu.pgm", i);
        const Sample<T>& s = ds.samples[i];
        write_ppm((fs::path(dir) / img_name).string(), s.image);
        write_pgm((fs::path(dir) / mask_name).string(), s.gt_mask, ds.image_size, ds.image_size);
        man << "sample " << i << " " << img_name << " " << mask_name << " ";
        for (uint8_t b : s.y_img) man << static_cast<int>(b);
        man << "\n";
    }
}

template <class T>
Dataset<T> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream man(fs::path(dir) / "manifest.txt");
    if (!man) throw FormatError("no manifest.txt in " + dir);
    Dataset<T> ds;
    std::string key;
    size_t count = 0;
    while (man >> key) {
        if (key == "format") {
            std::string fmt;
            man >> fmt;
            if (fmt != "vwl-dataset") throw FormatError("unexpected dataset format: " + fmt);
        } else if (key == "version") {
            int v;
            man >> v;
            if (v != 1) throw FormatError("unsupported dataset version " + std::to_string(v));
        } else if (key == "seed") {
            man >> ds.seed;
        } else if (key == "config_hash") {
            std::string h;
            man >> h;
            ds.config_hash = std::stoull(h, nullptr, 16);
        } else if (key == "image_size") {
            man >> ds.image_size;
        } else if (key == "num_classes") {
            man >> ds.num_classes;
        } else if (key == "class_names") {
            std::string names;
            man >> names;
            ds.class_names.clear();
            std::istringstream is(names);
            std::string tok;
            while (std::getline(is, tok, ',')) ds.class_names.push_back(tok);
        } else if (key == "count") {
            man >> count;
        } else if (key == "sample") {
            size_t idx;
            std::string img_file, mask_file, bits;
            man >> idx >> img_file >> mask_file >> bits;
            Sample<T> s;
            s.image = read_ppm<T>((fs::path(dir) / img_file).string());
            int h = 0, w = 0;
            s.gt_mask = read_pgm((fs::path(dir) / mask_file).string(), h, w);
            if (h != ds.image_size || w != ds.image_size)
                throw FormatError("mask resolution mismatch in " + mask_file);
            if (static_cast<int>(bits.size()) != ds.num_classes)
                throw FormatError("y_img width mismatch in manifest for sample " + std::to_string(idx));
            s.y_img.resize(bits.size());
            for (size_t c = 0; c < bits.size(); ++c) s.y_img[c] = bits[c] == '1' ? 1 : 0;
            // cross-check the label invariant against the stored mask
            std::vector<uint8_t> from_mask(bits.size(), 0);
            for (uint8_t m : s.gt_mask) {
                if (m > ds.num_classes) throw FormatError("mask value out of range in " + mask_file);
                if (m > 0) from_mask[m - 1] = 1;
            }
            if (from_mask != s.y_img)
                throw FormatError("manifest y_img disagrees with mask for sample " + std::to_string(idx));
            ds.samples.push_back(std::move(s));
        } else {
            throw FormatError("unknown manifest key: " + key);
        }
    }
    if (ds.samples.size() != count)
        throw FormatError("manifest count " + std::to_string(count) + " != samples " +
                          std::to_string(ds.samples.size()));
    return ds;
}

}  // namespace vwl
