#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vwl/config.hpp"
#include "vwl/core.hpp"

namespace vwl {

// Four stages of conv3x3 -> batchnorm -> relu with two stride-2
// downsamplings; features are tapped after the final stage's nonlinearity.
struct BackboneConfig {
    int in_channels = 3;
    int image_size = 64;
    std::vector<int> widths{16, 32, 48, 64};
    std::vector<int> strides{1, 2, 2, 1};

    int stages() const { return static_cast<int>(widths.size()); }
    int d() const { return widths.back(); }
    int total_stride() const {
        int s = 1;
        for (int x : strides) s *= x;
        return s;
    }
    int feature_size() const { return image_size / total_stride(); }

    void validate() const {
        if (widths.empty() || widths.size() != strides.size())
            throw ConfigError("backbone widths/strides length mismatch");
        for (int s : strides)
            if (s != 1 && s != 2) throw ConfigError("stage strides must be 1 or 2");
        for (int w : widths)
            if (w < 1) throw ConfigError("stage widths must be positive");
        if (d() < 8) throw ConfigError("output channels d must be >= 8");
        const int ts = total_stride();
        if (image_size % ts != 0)
            throw ConfigError("image size " + std::to_string(image_size) +
                              " is not divisible by total stride " + std::to_string(ts));
        const int f = image_size / ts;
        if (f % 4 != 0)
            throw ConfigError("feature map " + std::to_string(f) + "x" + std::to_string(f) +
                              " must be divisible by 4");
    }

    KeyValueConfig to_kv() const {
        KeyValueConfig kv;
        kv.set_int("backbone.in_channels", in_channels);
        kv.set_int("backbone.image_size", image_size);
        kv.set("backbone.widths", KeyValueConfig::join_ints(widths));
        kv.set("backbone.strides", KeyValueConfig::join_ints(strides));
        return kv;
    }

    static BackboneConfig from_kv(const KeyValueConfig& kv) {
        BackboneConfig c;
        c.in_channels = static_cast<int>(kv.get_int("backbone.in_channels"));
        c.image_size = static_cast<int>(kv.get_int("backbone.image_size"));
        c.widths = kv.get_int_list("backbone.widths");
        c.strides = kv.get_int_list("backbone.strides");
        return c;
    }
};

template <class T>
struct ConvParams {
    int in_c = 0, out_c = 0, stride = 1;
    std::vector<T> w;  // [ky][kx][in_c][out_c]
};

template <class T>
struct BnParams {
    int c = 0;
    std::vector<T> gamma, beta;
    std::vector<T> run_mean, run_var;  // inference statistics, momentum 0.1
};

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

template <class T>
struct BackboneParams {
    BackboneConfig cfg;
    std::vector<ConvParams<T>> convs;
    std::vector<BnParams<T>> bns;

    long long param_count() const {
        long long n = 0;
        for (const auto& c : convs) n += static_cast<long long>(c.w.size());
        for (const auto& b : bns) n += 2ll * b.c;
        return n;
    }

    uint64_t checksum() const {
        uint64_t h = 14695981039346656037ull;
        for (const auto& c : convs) h = fnv1a64(c.w.data(), c.w.size() * sizeof(T), h);
        for (const auto& b : bns) {
            h = fnv1a64(b.gamma.data(), b.gamma.size() * sizeof(T), h);
            h = fnv1a64(b.beta.data(), b.beta.size() * sizeof(T), h);
        }
        return h;
    }
};

template <class T>
BackboneParams<T> init_backbone(const BackboneConfig& cfg, uint64_t seed) {
    cfg.validate();
    BackboneParams<T> p;
    p.cfg = cfg;
    int in_c = cfg.in_channels;
    for (int s = 0; s < cfg.stages(); ++s) {
        ConvParams<T> conv;
        conv.in_c = in_c;
        conv.out_c = cfg.widths[static_cast<size_t>(s)];
        conv.stride = cfg.strides[static_cast<size_t>(s)];
        conv.w.resize(static_cast<size_t>(9) * in_c * conv.out_c);
        Rng rng(mix_seed(seed, 0xbbu, static_cast<uint64_t>(s)));
        const double std = std::sqrt(2.0 / (9.0 * in_c));  // He fan-in
        for (auto& x : conv.w) x = static_cast<T>(rng.normal() * std);
        p.convs.push_back(std::move(conv));

        BnParams<T> bn;
        bn.c = cfg.widths[static_cast<size_t>(s)];
        bn.gamma.assign(static_cast<size_t>(bn.c), T(1));
        bn.beta.assign(static_cast<size_t>(bn.c), T(0));
        bn.run_mean.assign(static_cast<size_t>(bn.c), T(0));
        bn.run_var.assign(static_cast<size_t>(bn.c), T(1));
        p.bns.push_back(std::move(bn));
        in_c = conv.out_c;
    }
    return p;
}

// Cached intermediates of one training-mode forward pass.
template <class T>
struct StageActs {
    Tensor<T> conv_out;  // pre-normalization
    Tensor<T> xhat;      // normalized, pre-scale
    Tensor<T> out;       // post-relu
    std::vector<double> mean, var;
};

template <class T>
struct BackboneActs {
    Tensor<T> input;
    std::vector<StageActs<T>> stages;
};

namespace detail {

template <class T>
void conv3x3_forward(const ConvParams<T>& conv, const Tensor<T>& in, Tensor<T>& out) {
    const int B = in.dim(0), H = in.dim(1), W = in.dim(2), IC = in.dim(3);
    const int s = conv.stride, OC = conv.out_c;
    const int OH = H / s, OW = W / s;
    out = Tensor<T>({B, OH, OW, OC});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int b = 0; b < B; ++b) {
        std::vector<T> acc(static_cast<size_t>(OC));
        const T* ip = in.data() + static_cast<size_t>(b) * H * W * IC;
        T* op = out.data() + static_cast<size_t>(b) * OH * OW * OC;
        for (int yo = 0; yo < OH; ++yo)
            for (int xo = 0; xo < OW; ++xo) {
                std::fill(acc.begin(), acc.end(), T(0));
                for (int ky = 0; ky < 3; ++ky) {
                    const int yi = yo * s + ky - 1;
                    if (yi < 0 || yi >= H) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int xi = xo * s + kx - 1;
                        if (xi < 0 || xi >= W) continue;
                        const T* irow = ip + (static_cast<size_t>(yi) * W + xi) * IC;
                        const T* wrow = conv.w.data() + static_cast<size_t>(ky * 3 + kx) * IC * OC;
                        for (int ic = 0; ic < IC; ++ic) {
                            const T v = irow[ic];
                            const T* wr = wrow + static_cast<size_t>(ic) * OC;
                            for (int oc = 0; oc < OC; ++oc) acc[static_cast<size_t>(oc)] += v * wr[oc];
                        }
                    }
                }
                T* orow = op + (static_cast<size_t>(yo) * OW + xo) * OC;
                for (int oc = 0; oc < OC; ++oc) orow[oc] = acc[static_cast<size_t>(oc)];
            }
    }
}

// d_in accumulation is per-sample sequential, so parallelism over the batch
// cannot reorder sums; per-sample weight-gradient slabs are reduced in
// sample order afterwards for a thread-count-independent result.
template <class T>
void conv3x3_backward(const ConvParams<T>& conv, const Tensor<T>& in, const Tensor<T>& dout,
                      Tensor<T>* din, std::vector<T>& dw) {
    const int B = in.dim(0), H = in.dim(1), W = in.dim(2), IC = in.dim(3);
    const int s = conv.stride, OC = conv.out_c;
    const int OH = dout.dim(1), OW = dout.dim(2);
    std::vector<std::vector<T>> slabs(static_cast<size_t>(B));
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int b = 0; b < B; ++b) {
        std::vector<T>& wg = slabs[static_cast<size_t>(b)];
        wg.assign(conv.w.size(), T(0));
        const T* ip = in.data() + static_cast<size_t>(b) * H * W * IC;
        const T* gp = dout.data() + static_cast<size_t>(b) * OH * OW * OC;
        T* dp = din ? din->data() + static_cast<size_t>(b) * H * W * IC : nullptr;
        for (int yo = 0; yo < OH; ++yo)
            for (int xo = 0; xo < OW; ++xo) {
                const T* grow = gp + (static_cast<size_t>(yo) * OW + xo) * OC;
                for (int ky = 0; ky < 3; ++ky) {
                    const int yi = yo * s + ky - 1;
                    if (yi < 0 || yi >= H) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int xi = xo * s + kx - 1;
                        if (xi < 0 || xi >= W) continue;
                        const T* irow = ip + (static_cast<size_t>(yi) * W + xi) * IC;
                        T* drow = dp ? dp + (static_cast<size_t>(yi) * W + xi) * IC : nullptr;
                        const size_t wbase = static_cast<size_t>(ky * 3 + kx) * IC * OC;
                        for (int ic = 0; ic < IC; ++ic) {
                            const T v = irow[ic];
                            const T* wr = conv.w.data() + wbase + static_cast<size_t>(ic) * OC;
                            T* wgr = wg.data() + wbase + static_cast<size_t>(ic) * OC;
                            T dacc = T(0);
                            for (int oc = 0; oc < OC; ++oc) {
                                wgr[oc] += v * grow[oc];
                                dacc += wr[oc] * grow[oc];
                            }
                            if (drow) drow[ic] += dacc;
                        }
                    }
                }
            }
    }
    for (int b = 0; b < B; ++b)
        for (size_t i = 0; i < dw.size(); ++i) dw[i] += slabs[static_cast<size_t>(b)][i];
}

// training-mode batchnorm + relu; per-channel reductions run in a fixed
// order inside one thread
template <class T>
void bn_relu_forward(const BnParams<T>& bn, const Tensor<T>& x, StageActs<T>& acts, bool training,
                     BnParams<T>* running_update) {
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const long long N = static_cast<long long>(B) * H * W;
    acts.xhat = Tensor<T>({B, H, W, C});
    acts.out = Tensor<T>({B, H, W, C});
    acts.mean.assign(static_cast<size_t>(C), 0.0);
    acts.var.assign(static_cast<size_t>(C), 0.0);
    const T* xp = x.data();
    if (training) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int c = 0; c < C; ++c) {
            double sum = 0.0, sq = 0.0;
            for (long long i = 0; i < N; ++i) {
                const double v = static_cast<double>(xp[i * C + c]);
                sum += v;
                sq += v * v;
            }
            const double mean = sum / static_cast<double>(N);
            double var = sq / static_cast<double>(N) - mean * mean;
            if (var < 0) var = 0;
            acts.mean[static_cast<size_t>(c)] = mean;
            acts.var[static_cast<size_t>(c)] = var;
        }
        if (running_update) {
            for (int c = 0; c < C; ++c) {
                auto& rm = running_update->run_mean[static_cast<size_t>(c)];
                auto& rv = running_update->run_var[static_cast<size_t>(c)];
                rm = static_cast<T>((1.0 - kBnMomentum) * static_cast<double>(rm) +
                                    kBnMomentum * acts.mean[static_cast<size_t>(c)]);
                rv = static_cast<T>((1.0 - kBnMomentum) * static_cast<double>(rv) +
                                    kBnMomentum * acts.var[static_cast<size_t>(c)]);
            }
        }
    } else {
        for (int c = 0; c < C; ++c) {
            acts.mean[static_cast<size_t>(c)] = static_cast<double>(bn.run_mean[static_cast<size_t>(c)]);
            acts.var[static_cast<size_t>(c)] = static_cast<double>(bn.run_var[static_cast<size_t>(c)]);
        }
    }
    std::vector<T> scale(static_cast<size_t>(C)), shift(static_cast<size_t>(C)),
        inv_sigma(static_cast<size_t>(C)), meanv(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
        inv_sigma[static_cast<size_t>(c)] =
            static_cast<T>(1.0 / std::sqrt(acts.var[static_cast<size_t>(c)] + kBnEps));
        meanv[static_cast<size_t>(c)] = static_cast<T>(acts.mean[static_cast<size_t>(c)]);
        scale[static_cast<size_t>(c)] = bn.gamma[static_cast<size_t>(c)];
        shift[static_cast<size_t>(c)] = bn.beta[static_cast<size_t>(c)];
    }
    T* hp = acts.xhat.data();
    T* op = acts.out.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) {
            const T xh = (xp[i * C + c] - meanv[static_cast<size_t>(c)]) * inv_sigma[static_cast<size_t>(c)];
            hp[i * C + c] = xh;
            const T y = scale[static_cast<size_t>(c)] * xh + shift[static_cast<size_t>(c)];
            op[i * C + c] = y > T(0) ? y : T(0);
        }
}

template <class T>
void bn_relu_backward(const BnParams<T>& bn, const StageActs<T>& acts, const Tensor<T>& dout,
                      Tensor<T>& dx, std::vector<T>& dgamma, std::vector<T>& dbeta) {
    const int B = dout.dim(0), H = dout.dim(1), W = dout.dim(2), C = dout.dim(3);
    const long long N = static_cast<long long>(B) * H * W;
    dx = Tensor<T>({B, H, W, C});
    const T* gp = dout.data();
    const T* hp = acts.xhat.data();
    const T* op = acts.out.data();
    T* dp = dx.data();
    std::vector<double> sum_dy(static_cast<size_t>(C), 0.0), sum_dyx(static_cast<size_t>(C), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int c = 0; c < C; ++c) {
        double sdy = 0.0, sdyx = 0.0;
        for (long long i = 0; i < N; ++i) {
            // relu gate: gradient flows only where the activation fired
            const double dy = op[i * C + c] > T(0) ? static_cast<double>(gp[i * C + c]) : 0.0;
            sdy += dy;
            sdyx += dy * static_cast<double>(hp[i * C + c]);
        }
        sum_dy[static_cast<size_t>(c)] = sdy;
        sum_dyx[static_cast<size_t>(c)] = sdyx;
    }
    for (int c = 0; c < C; ++c) {
        dgamma[static_cast<size_t>(c)] += static_cast<T>(sum_dyx[static_cast<size_t>(c)]);
        dbeta[static_cast<size_t>(c)] += static_cast<T>(sum_dy[static_cast<size_t>(c)]);
    }
    std::vector<T> k1(static_cast<size_t>(C)), mdy(static_cast<size_t>(C)), mdyx(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
        k1[static_cast<size_t>(c)] = static_cast<T>(
            static_cast<double>(bn.gamma[static_cast<size_t>(c)]) /
            std::sqrt(acts.var[static_cast<size_t>(c)] + kBnEps));
        mdy[static_cast<size_t>(c)] = static_cast<T>(sum_dy[static_cast<size_t>(c)] / static_cast<double>(N));
        mdyx[static_cast<size_t>(c)] =
            static_cast<T>(sum_dyx[static_cast<size_t>(c)] / static_cast<double>(N));
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) {
            const T dy = op[i * C + c] > T(0) ? gp[i * C + c] : T(0);
            dp[i * C + c] = k1[static_cast<size_t>(c)] *
                            (dy - mdy[static_cast<size_t>(c)] -
                             hp[i * C + c] * mdyx[static_cast<size_t>(c)]);
        }
}

}  // namespace detail

// Forward pass. In training mode batch statistics are used (and the running
// averages updated when `update_running`); in inference mode the stored
// running statistics are used and no activations need to be kept.
template <class T>
Tensor<T> extract_features(BackboneParams<T>& params, const Tensor<T>& images, bool training,
                           BackboneActs<T>* acts = nullptr, bool update_running = true) {
    if (images.dims.size() != 4 || images.dim(3) != params.cfg.in_channels ||
        images.dim(1) != params.cfg.image_size || images.dim(2) != params.cfg.image_size)
        throw ShapeError("expected image batch (B," + std::to_string(params.cfg.image_size) + "," +
                         std::to_string(params.cfg.image_size) + "," +
                         std::to_string(params.cfg.in_channels) + "), got " + shape_str(images.dims));
    BackboneActs<T> local;
    BackboneActs<T>& a = acts ? *acts : local;
    a.input = images;
    a.stages.assign(static_cast<size_t>(params.cfg.stages()), StageActs<T>{});
    const Tensor<T>* cur = &a.input;
    for (int s = 0; s < params.cfg.stages(); ++s) {
        StageActs<T>& sa = a.stages[static_cast<size_t>(s)];
        detail::conv3x3_forward(params.convs[static_cast<size_t>(s)], *cur, sa.conv_out);
        detail::bn_relu_forward(params.bns[static_cast<size_t>(s)], sa.conv_out, sa, training,
                                training && update_running ? &params.bns[static_cast<size_t>(s)]
                                                           : nullptr);
        cur = &sa.out;
    }
    return *cur;
}

template <class T>
struct BackboneGrads {
    std::vector<std::vector<T>> conv_w;
    std::vector<std::vector<T>> bn_gamma, bn_beta;

    void init_like(const BackboneParams<T>& p) {
        conv_w.clear();
        bn_gamma.clear();
        bn_beta.clear();
        for (const auto& c : p.convs) conv_w.emplace_back(c.w.size(), T(0));
        for (const auto& b : p.bns) {
            bn_gamma.emplace_back(static_cast<size_t>(b.c), T(0));
            bn_beta.emplace_back(static_cast<size_t>(b.c), T(0));
        }
    }
    void zero() {
        for (auto& v : conv_w) std::fill(v.begin(), v.end(), T(0));
        for (auto& v : bn_gamma) std::fill(v.begin(), v.end(), T(0));
        for (auto& v : bn_beta) std::fill(v.begin(), v.end(), T(0));
    }
};

// Backward through every stage; gradients accumulate into `grads`.
// `dimages` (optional) receives the gradient with respect to the input batch.
template <class T>
void backbone_backward(const BackboneParams<T>& params, const BackboneActs<T>& acts,
                       const Tensor<T>& dF, BackboneGrads<T>& grads, Tensor<T>* dimages = nullptr) {
    const int S = params.cfg.stages();
    Tensor<T> d_out = dF;
    for (int s = S - 1; s >= 0; --s) {
        const StageActs<T>& sa = acts.stages[static_cast<size_t>(s)];
        Tensor<T> d_conv;
        detail::bn_relu_backward(params.bns[static_cast<size_t>(s)], sa, d_out, d_conv,
                                 grads.bn_gamma[static_cast<size_t>(s)],
                                 grads.bn_beta[static_cast<size_t>(s)]);
        const Tensor<T>& stage_in = s == 0 ? acts.input : acts.stages[static_cast<size_t>(s - 1)].out;
        if (s == 0) {
            Tensor<T>* din = nullptr;
            Tensor<T> din_store;
            if (dimages) {
                din_store = Tensor<T>(stage_in.dims);
                din = &din_store;
            }
            detail::conv3x3_backward(params.convs[0], stage_in, d_conv, din,
                                     grads.conv_w[0]);
            if (dimages) *dimages = std::move(din_store);
        } else {
            Tensor<T> din(stage_in.dims);
            detail::conv3x3_backward(params.convs[static_cast<size_t>(s)], stage_in, d_conv, &din,
                                     grads.conv_w[static_cast<size_t>(s)]);
            d_out = std::move(din);
        }
    }
}

// ---- standalone backbone checkpoint ----

namespace detail {
constexpr char kBackboneMagic[4] = {'V', 'W', 'B', 'B'};
constexpr uint32_t kBackboneVersion = 1;
// where features are tapped relative to normalization, recorded in every
// checkpoint header
inline const char* kFeatureTap = "stage_final.post_relu";

template <class T>
void write_vec(std::ostream& out, const std::vector<T>& v) {
    uint64_t n = v.size();
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
}

template <class T>
void read_vec(std::istream& in, std::vector<T>& v) {
    uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), 8);
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(T)))
        throw FormatError("truncated tensor payload");
}

inline void write_str(std::ostream& out, const std::string& s) {
    uint64_t n = s.size();
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(s.data(), static_cast<std::streamsize>(n));
}

inline std::string read_str(std::istream& in) {
    uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), 8);
    if (n > (1ull << 30)) throw FormatError("corrupted string length");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) throw FormatError("truncated string");
    return s;
}
}  // namespace detail

template <class T>
void save_backbone_stream(const BackboneParams<T>& p, std::ostream& out, uint64_t config_hash) {
    out.write(detail::kBackboneMagic, 4);
    uint32_t version = detail::kBackboneVersion, scalar = sizeof(T);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&scalar), 4);
    out.write(reinterpret_cast<const char*>(&config_hash), 8);
    detail::write_str(out, detail::kFeatureTap);
    detail::write_str(out, p.cfg.to_kv().serialize());
    for (const auto& c : p.convs) detail::write_vec(out, c.w);
    for (const auto& b : p.bns) {
        detail::write_vec(out, b.gamma);
        detail::write_vec(out, b.beta);
        detail::write_vec(out, b.run_mean);
        detail::write_vec(out, b.run_var);
    }
    uint64_t csum = p.checksum();
    out.write(reinterpret_cast<const char*>(&csum), 8);
    if (!out) throw FormatError("short write while saving backbone");
}

template <class T>
void save_backbone(const BackboneParams<T>& p, const std::string& path, uint64_t config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    save_backbone_stream(p, out, config_hash);
}

template <class T>
BackboneParams<T> load_backbone_stream(std::istream& in, const std::string& path,
                                       uint64_t* config_hash = nullptr,
                                       std::string* feature_tap = nullptr) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, detail::kBackboneMagic, 4) != 0)
        throw FormatError("not a backbone checkpoint: " + path);
    uint32_t version = 0, scalar = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&scalar), 4);
    if (version != detail::kBackboneVersion)
        throw FormatError("backbone checkpoint version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(detail::kBackboneVersion) + ")");
    if (scalar != sizeof(T)) throw FormatError("scalar width mismatch in " + path);
    uint64_t chash = 0;
    in.read(reinterpret_cast<char*>(&chash), 8);
    if (config_hash) *config_hash = chash;
    std::string tap = detail::read_str(in);
    if (feature_tap) *feature_tap = tap;
    std::istringstream cfg_text(detail::read_str(in));
    KeyValueConfig kv;
    {
        std::string line;
        while (std::getline(cfg_text, line)) {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto trim = [](std::string s) {
                size_t a = s.find_first_not_of(" \t");
                size_t b = s.find_last_not_of(" \t");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    BackboneParams<T> p;
    p.cfg = BackboneConfig::from_kv(kv);
    p.cfg.validate();
    int in_c = p.cfg.in_channels;
    for (int s = 0; s < p.cfg.stages(); ++s) {
        ConvParams<T> c;
        c.in_c = in_c;
        c.out_c = p.cfg.widths[static_cast<size_t>(s)];
        c.stride = p.cfg.strides[static_cast<size_t>(s)];
        p.convs.push_back(std::move(c));
        BnParams<T> b;
        b.c = p.cfg.widths[static_cast<size_t>(s)];
        p.bns.push_back(std::move(b));
        in_c = p.cfg.widths[static_cast<size_t>(s)];
    }
    for (auto& c : p.convs) detail::read_vec(in, c.w);
    for (auto& b : p.bns) {
        detail::read_vec(in, b.gamma);
        detail::read_vec(in, b.beta);
        detail::read_vec(in, b.run_mean);
        detail::read_vec(in, b.run_var);
    }
    uint64_t want = 0;
    in.read(reinterpret_cast<char*>(&want), 8);
    if (p.checksum() != want) throw FormatError("backbone checksum mismatch in " + path);
    return p;
}

template <class T>
BackboneParams<T> load_backbone(const std::string& path, uint64_t* config_hash = nullptr,
                                std::string* feature_tap = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    return load_backbone_stream<T>(in, path, config_hash, feature_tap);
}

}  // namespace vwl
