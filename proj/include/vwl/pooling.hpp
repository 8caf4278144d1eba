#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "vwl/core.hpp"

namespace vwl {

enum class PoolKind { gap = 0, gmp, lse, gwrp, hp };

inline PoolKind pool_kind_from_string(const std::string& s) {
    if (s == "gap") return PoolKind::gap;
    if (s == "gmp") return PoolKind::gmp;
    if (s == "lse") return PoolKind::lse;
    if (s == "gwrp") return PoolKind::gwrp;
    if (s == "hp") return PoolKind::hp;
    throw ConfigError("unknown pooling: " + s + " (expected gap|gmp|lse|gwrp|hp)");
}

inline const char* pool_kind_name(PoolKind k) {
    switch (k) {
        case PoolKind::gap: return "gap";
        case PoolKind::gmp: return "gmp";
        case PoolKind::lse: return "lse";
        case PoolKind::gwrp: return "gwrp";
        case PoolKind::hp: return "hp";
    }
    return "?";
}

struct PoolConfig {
    std::vector<int> split_sizes{1, 2, 4};  // ordered set R
    double gamma = 2.0;

    void validate(int h, int w) const {
        if (gamma < 0) throw ConfigError("gamma must be nonnegative");
        if (split_sizes.empty()) throw ConfigError("split size set is empty");
        int prev = 0;
        bool has_one = false;
        for (int r : split_sizes) {
            if (r <= 0) throw ConfigError("split sizes must be positive");
            if (r <= prev) throw ConfigError("split sizes must be strictly increasing");
            prev = r;
            if (r == 1) has_one = true;
            if (h % r != 0 || w % r != 0)
                throw ShapeError("split size " + std::to_string(r) + " does not divide feature map " +
                                 std::to_string(h) + "x" + std::to_string(w));
        }
        if (!has_one) throw ConfigError("split size set must contain 1");
    }
};

namespace detail {
template <class T>
inline void check_feature_map(const Tensor<T>& F) {
    if (F.dims.size() != 3) throw ShapeError("feature map must be h x w x d, got " + shape_str(F.dims));
}
}  // namespace detail

// spatial mean per channel
template <class T>
std::vector<T> gap(const Tensor<T>& F) {
    detail::check_feature_map(F);
    const int h = F.dim(0), w = F.dim(1), d = F.dim(2);
    std::vector<T> out(static_cast<size_t>(d), T(0));
    const T* p = F.data();
    for (long long i = 0; i < static_cast<long long>(h) * w; ++i)
        for (int c = 0; c < d; ++c) out[c] += p[i * d + c];
    const T inv = T(1) / static_cast<T>(h * w);
    for (int c = 0; c < d; ++c) out[c] *= inv;
    return out;
}

template <class T>
void gap_backward(const std::vector<T>& df, Tensor<T>& dF) {
    detail::check_feature_map(dF);
    const int h = dF.dim(0), w = dF.dim(1), d = dF.dim(2);
    const T inv = T(1) / static_cast<T>(h * w);
    T* p = dF.data();
    for (long long i = 0; i < static_cast<long long>(h) * w; ++i)
        for (int c = 0; c < d; ++c) p[i * d + c] += df[c] * inv;
}

// partition into an r x r grid and reduce each bin by channel-wise max
template <class T>
Tensor<T> local_max_pool(const Tensor<T>& F, int r) {
    detail::check_feature_map(F);
    const int h = F.dim(0), w = F.dim(1), d = F.dim(2);
    if (r <= 0 || h % r != 0 || w % r != 0)
        throw ShapeError("split size " + std::to_string(r) + " does not divide feature map " +
                         std::to_string(h) + "x" + std::to_string(w));
    const int bh = h / r, bw = w / r;
    Tensor<T> out({r, r, d});
    for (int by = 0; by < r; ++by)
        for (int bx = 0; bx < r; ++bx)
            for (int c = 0; c < d; ++c) {
                T best = F(by * bh, bx * bw, c);
                for (int y = by * bh; y < (by + 1) * bh; ++y)
                    for (int x = bx * bw; x < (bx + 1) * bw; ++x)
                        if (F(y, x, c) > best) best = F(y, x, c);
                out(by, bx, c) = best;
            }
    return out;
}

// mean over the r x r grid of local maxima
template <class T>
std::vector<T> branch_pool(const Tensor<T>& F, int r) {
    Tensor<T> fm = local_max_pool(F, r);
    const int d = fm.dim(2);
    std::vector<T> out(static_cast<size_t>(d), T(0));
    for (int by = 0; by < r; ++by)
        for (int bx = 0; bx < r; ++bx)
            for (int c = 0; c < d; ++c) out[c] += fm(by, bx, c);
    const T inv = T(1) / static_cast<T>(r * r);
    for (int c = 0; c < d; ++c) out[c] *= inv;
    return out;
}

// gradient routes to the first maximal element of each bin in row-major
// scan order (ties to the lowest flat index)
template <class T>
void branch_pool_backward(const Tensor<T>& F, int r, const std::vector<T>& df, Tensor<T>& dF) {
    detail::check_feature_map(F);
    const int h = F.dim(0), w = F.dim(1), d = F.dim(2);
    if (r <= 0 || h % r != 0 || w % r != 0)
        throw ShapeError("split size " + std::to_string(r) + " does not divide feature map");
    const int bh = h / r, bw = w / r;
    const T inv = T(1) / static_cast<T>(r * r);
    for (int by = 0; by < r; ++by)
        for (int bx = 0; bx < r; ++bx)
            for (int c = 0; c < d; ++c) {
                int best_y = by * bh, best_x = bx * bw;
                T best = F(best_y, best_x, c);
                for (int y = by * bh; y < (by + 1) * bh; ++y)
                    for (int x = bx * bw; x < (bx + 1) * bw; ++x)
                        if (F(y, x, c) > best) {
                            best = F(y, x, c);
                            best_y = y;
                            best_x = x;
                        }
                dF(best_y, best_x, c) += df[c] * inv;
            }
}

// weighted average of the split branches and GAP
template <class T>
std::vector<T> hybrid_pool(const Tensor<T>& F, const PoolConfig& cfg) {
    detail::check_feature_map(F);
    cfg.validate(F.dim(0), F.dim(1));
    const int d = F.dim(2);
    std::vector<T> acc(static_cast<size_t>(d), T(0));
    for (int r : cfg.split_sizes) {
        std::vector<T> fr = branch_pool(F, r);
        for (int c = 0; c < d; ++c) acc[c] += fr[c];
    }
    std::vector<T> fg = gap(F);
    const T g = static_cast<T>(cfg.gamma);
    const T inv = T(1) / (g + static_cast<T>(cfg.split_sizes.size()));
    for (int c = 0; c < d; ++c) acc[c] = (acc[c] + g * fg[c]) * inv;
    return acc;
}

template <class T>
void hybrid_pool_backward(const Tensor<T>& F, const PoolConfig& cfg, const std::vector<T>& df,
                          Tensor<T>& dF) {
    cfg.validate(F.dim(0), F.dim(1));
    const int d = F.dim(2);
    const T g = static_cast<T>(cfg.gamma);
    const T inv = T(1) / (g + static_cast<T>(cfg.split_sizes.size()));
    std::vector<T> scaled(static_cast<size_t>(d));
    for (int c = 0; c < d; ++c) scaled[c] = df[c] * inv;
    for (int r : cfg.split_sizes) branch_pool_backward(F, r, scaled, dF);
    for (int c = 0; c < d; ++c) scaled[c] = df[c] * inv * g;
    gap_backward(scaled, dF);
}

// global weighted rank pooling: per channel, pixels sorted descending and
// weighted decay^(t-1), normalized; equal values rank by flat index
template <class T>
std::vector<T> gwrp(const Tensor<T>& F, double decay) {
    detail::check_feature_map(F);
    if (!(decay > 0.0) || !(decay < 1.0)) throw ParamError("gwrp decay must be in (0, 1)");
    const int h = F.dim(0), w = F.dim(1), d = F.dim(2);
    const long long n = static_cast<long long>(h) * w;
    std::vector<T> out(static_cast<size_t>(d), T(0));
    std::vector<long long> order(static_cast<size_t>(n));
    double z = 0.0, wt = 1.0;
    for (long long t = 0; t < n; ++t, wt *= decay) z += wt;
    const T* p = F.data();
    for (int c = 0; c < d; ++c) {
        std::iota(order.begin(), order.end(), 0ll);
        std::stable_sort(order.begin(), order.end(),
                         [&](long long a, long long b) { return p[a * d + c] > p[b * d + c]; });
        double acc = 0.0;
        wt = 1.0;
        for (long long t = 0; t < n; ++t, wt *= decay)
            acc += wt * static_cast<double>(p[order[static_cast<size_t>(t)] * d + c]);
        out[c] = static_cast<T>(acc / z);
    }
    return out;
}

template <class T>
void gwrp_backward(const Tensor<T>& F, double decay, const std::vector<T>& df, Tensor<T>& dF) {
    detail::check_feature_map(F);
    if (!(decay > 0.0) || !(decay < 1.0)) throw ParamError("gwrp decay must be in (0, 1)");
    const int h = F.dim(0), w = F.dim(1), d = F.dim(2);
    const long long n = static_cast<long long>(h) * w;
    std::vector<long long> order(static_cast<size_t>(n));
    double z = 0.0, wt = 1.0;
    for (long long t = 0; t < n; ++t, wt *= decay) z += wt;
    const T* p = F.data();
    T* q = dF.data();
    for (int c = 0; c < d; ++c) {
        std::iota(order.begin(), order.end(), 0ll);
        std::stable_sort(order.begin(), order.end(),
                         [&](long long a, long long b) { return p[a * d + c] > p[b * d + c]; });
        wt = 1.0;
        for (long long t = 0; t < n; ++t, wt *= decay)
            q[order[static_cast<size_t>(t)] * d + c] += df[c] * static_cast<T>(wt / z);
    }
}

// log-sum-exp pooling with max subtraction
template <class T>
std::vector<T> lse(const Tensor<T>& F, double sharpness) {
    detail::check_feature_map(F);
    if (!(sharpness > 0.0)) throw ParamError("lse sharpness must be positive");
    const int h = F.dim(0), w = F.dim(1), d = F.dim(2);
    const long long n = static_cast<long long>(h) * w;
    const T s = static_cast<T>(sharpness);
    std::vector<T> out(static_cast<size_t>(d));
    const T* p = F.data();
    for (int c = 0; c < d; ++c) {
        T m = p[c];
        for (long long i = 1; i < n; ++i) m = std::max(m, p[i * d + c]);
        double acc = 0.0;
        for (long long i = 0; i < n; ++i) acc += std::exp(static_cast<double>(s * (p[i * d + c] - m)));
        out[c] = m + static_cast<T>(std::log(acc / static_cast<double>(n)) / static_cast<double>(s));
    }
    return out;
}

template <class T>
void lse_backward(const Tensor<T>& F, double sharpness, const std::vector<T>& df, Tensor<T>& dF) {
    detail::check_feature_map(F);
    if (!(sharpness > 0.0)) throw ParamError("lse sharpness must be positive");
    const int h = F.dim(0), w = F.dim(1), d = F.dim(2);
    const long long n = static_cast<long long>(h) * w;
    const T s = static_cast<T>(sharpness);
    const T* p = F.data();
    T* q = dF.data();
    for (int c = 0; c < d; ++c) {
        T m = p[c];
        for (long long i = 1; i < n; ++i) m = std::max(m, p[i * d + c]);
        double z = 0.0;
        for (long long i = 0; i < n; ++i) z += std::exp(static_cast<double>(s * (p[i * d + c] - m)));
        for (long long i = 0; i < n; ++i)
            q[i * d + c] += df[c] * static_cast<T>(std::exp(static_cast<double>(s * (p[i * d + c] - m))) / z);
    }
}

// dispatch used by the training loop's image-label branch
template <class T>
std::vector<T> pool_forward(PoolKind kind, const Tensor<T>& F, const PoolConfig& cfg,
                            double gwrp_decay, double lse_sharpness) {
    switch (kind) {
        case PoolKind::gap: return gap(F);
        case PoolKind::gmp: return branch_pool(F, 1);
        case PoolKind::lse: return lse(F, lse_sharpness);
        case PoolKind::gwrp: return gwrp(F, gwrp_decay);
        case PoolKind::hp: return hybrid_pool(F, cfg);
    }
    throw ParamError("bad pool kind");
}

template <class T>
void pool_backward(PoolKind kind, const Tensor<T>& F, const PoolConfig& cfg, double gwrp_decay,
                   double lse_sharpness, const std::vector<T>& df, Tensor<T>& dF) {
    switch (kind) {
        case PoolKind::gap: gap_backward(df, dF); return;
        case PoolKind::gmp: branch_pool_backward(F, 1, df, dF); return;
        case PoolKind::lse: lse_backward(F, lse_sharpness, df, dF); return;
        case PoolKind::gwrp: gwrp_backward(F, gwrp_decay, df, dF); return;
        case PoolKind::hp: hybrid_pool_backward(F, cfg, df, dF); return;
    }
    throw ParamError("bad pool kind");
}

}  // namespace vwl
