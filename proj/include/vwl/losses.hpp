#pragma once

#include <cmath>
#include <vector>

#include "vwl/codebook.hpp"
#include "vwl/core.hpp"

namespace vwl {

// Bias-free 1x1 projection heads. Keeping them bias-free means the class
// activation maps depend on W_img alone.
template <class T>
struct PredictionHeads {
    int d = 0, k = 0, L = 0;
    std::vector<T> W_img;   // d x L
    std::vector<T> W_word;  // d x k
    std::vector<T> W_w2i;   // k x L (learning strategy only; empty otherwise)
};

template <class T>
PredictionHeads<T> init_heads(int d, int k, int L, uint64_t seed, bool with_w2i) {
    PredictionHeads<T> h;
    h.d = d;
    h.k = k;
    h.L = L;
    Rng rng(mix_seed(seed, 0x68656164ull));
    auto fill = [&](std::vector<T>& w, size_t n, double fan_in) {
        w.resize(n);
        const double s = std::sqrt(1.0 / fan_in);
        for (auto& x : w) x = static_cast<T>(rng.normal() * s);
    };
    fill(h.W_img, static_cast<size_t>(d) * L, d);
    fill(h.W_word, static_cast<size_t>(d) * k, d);
    if (with_w2i) fill(h.W_w2i, static_cast<size_t>(k) * L, k);
    return h;
}

// p[c] = sum_i W[i][c] * f[i] for a (d_in x d_out) weight matrix
template <class T>
std::vector<T> head_forward(const std::vector<T>& W, const std::vector<T>& f, int d_in, int d_out) {
    if (W.size() != static_cast<size_t>(d_in) * d_out || f.size() != static_cast<size_t>(d_in))
        throw ShapeError("head weight/input size mismatch");
    std::vector<T> p(static_cast<size_t>(d_out), T(0));
    for (int i = 0; i < d_in; ++i) {
        const T fi = f[static_cast<size_t>(i)];
        const T* w = W.data() + static_cast<size_t>(i) * d_out;
        for (int c = 0; c < d_out; ++c) p[static_cast<size_t>(c)] += w[c] * fi;
    }
    return p;
}

template <class T>
void head_backward(const std::vector<T>& W, const std::vector<T>& f, const std::vector<T>& dp,
                   int d_in, int d_out, std::vector<T>& dW, std::vector<T>& df) {
    for (int i = 0; i < d_in; ++i) {
        const T fi = f[static_cast<size_t>(i)];
        const T* w = W.data() + static_cast<size_t>(i) * d_out;
        T* dwi = dW.data() + static_cast<size_t>(i) * d_out;
        T acc = T(0);
        for (int c = 0; c < d_out; ++c) {
            dwi[c] += dp[static_cast<size_t>(c)] * fi;
            acc += dp[static_cast<size_t>(c)] * w[c];
        }
        df[static_cast<size_t>(i)] += acc;
    }
}

template <class T>
inline T softplus(T x) {
    // log(1 + e^x) without overflow
    return std::max(x, T(0)) + std::log1p(std::exp(-std::fabs(x)));
}

template <class T>
inline T sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// Multi-label soft margin loss, negated log-likelihood mean over classes:
//   (1/L) * sum_i [ y_i * softplus(-p_i) + (1 - y_i) * softplus(p_i) ]
template <class T>
T soft_margin_loss(const std::vector<T>& logits, const std::vector<uint8_t>& y) {
    if (logits.size() != y.size()) throw ShapeError("logit/label length mismatch");
    if (logits.empty()) throw ShapeError("empty logit vector");
    T acc = T(0);
    for (size_t i = 0; i < logits.size(); ++i) {
        if (y[i] > 1) throw ParamError("labels must be binary");
        acc += y[i] ? softplus(-logits[i]) : softplus(logits[i]);
    }
    return acc / static_cast<T>(logits.size());
}

// d loss / d p_i = (sigmoid(p_i) - y_i) / L, scaled by `scale`
template <class T>
std::vector<T> soft_margin_loss_backward(const std::vector<T>& logits, const std::vector<uint8_t>& y,
                                         T scale) {
    std::vector<T> dp(logits.size());
    const T inv = scale / static_cast<T>(logits.size());
    for (size_t i = 0; i < logits.size(); ++i)
        dp[i] = (sigmoid(logits[i]) - static_cast<T>(y[i])) * inv;
    return dp;
}

// Covariance between codebook rows across the d feature dimensions:
//   Chat_ij = (1/d) * sum_m (C_im - mu_i)(C_jm - mu_j)
// loss = 1/2 * sum_{i != j} Chat_ij^2
template <class T>
T decov_loss(const std::vector<T>& words, int k, int d) {
    if (k < 2) throw ParamError("decov needs k >= 2");
    if (words.size() != static_cast<size_t>(k) * d) throw ShapeError("codebook size mismatch");
    std::vector<double> mu(static_cast<size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) {
        for (int m = 0; m < d; ++m) mu[static_cast<size_t>(i)] += words[static_cast<size_t>(i) * d + m];
        mu[static_cast<size_t>(i)] /= d;
    }
    double loss = 0.0;
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) {
            double cov = 0.0;
            for (int m = 0; m < d; ++m)
                cov += (words[static_cast<size_t>(i) * d + m] - mu[static_cast<size_t>(i)]) *
                       (words[static_cast<size_t>(j) * d + m] - mu[static_cast<size_t>(j)]);
            cov /= d;
            // 1/2 * sum_{i != j} = sum_{i < j} by symmetry
            loss += cov * cov;
        }
    return static_cast<T>(loss);
}

// d loss / d C_im = (2/d) * sum_{j != i} Chat_ij * (C_jm - mu_j); the
// mean-centering terms cancel exactly because centered rows sum to zero
template <class T>
void decov_backward(const std::vector<T>& words, int k, int d, T scale, std::vector<T>& dC) {
    if (dC.size() != words.size()) throw ShapeError("dC size mismatch");
    std::vector<double> mu(static_cast<size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) {
        for (int m = 0; m < d; ++m) mu[static_cast<size_t>(i)] += words[static_cast<size_t>(i) * d + m];
        mu[static_cast<size_t>(i)] /= d;
    }
    std::vector<double> cov(static_cast<size_t>(k) * k, 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) {
            double c = 0.0;
            for (int m = 0; m < d; ++m)
                c += (words[static_cast<size_t>(i) * d + m] - mu[static_cast<size_t>(i)]) *
                     (words[static_cast<size_t>(j) * d + m] - mu[static_cast<size_t>(j)]);
            c /= d;
            cov[static_cast<size_t>(i) * k + j] = cov[static_cast<size_t>(j) * k + i] = c;
        }
    for (int i = 0; i < k; ++i)
        for (int m = 0; m < d; ++m) {
            double g = 0.0;
            for (int j = 0; j < k; ++j) {
                if (j == i) continue;
                g += cov[static_cast<size_t>(i) * k + j] *
                     (words[static_cast<size_t>(j) * d + m] - mu[static_cast<size_t>(j)]);
            }
            dC[static_cast<size_t>(i) * d + m] += scale * static_cast<T>(2.0 * g / d);
        }
}

template <class T>
struct LossBundle {
    T cls_img = T(0);
    T cls_word = T(0);
    T cls_w2i = T(0);
    T decov = T(0);
    T total = T(0);
};

// memory-bank objective: image loss + word loss
template <class T>
LossBundle<T> loss_memory(const std::vector<T>& p_img, const std::vector<uint8_t>& y_img,
                          const std::vector<T>& p_word, const std::vector<uint8_t>& y_word) {
    LossBundle<T> b;
    b.cls_img = soft_margin_loss(p_img, y_img);
    b.cls_word = soft_margin_loss(p_word, y_word);
    b.total = b.cls_img + b.cls_word;
    return b;
}

// learning-strategy objective: image + word + word-frequency-to-image + decov
template <class T>
LossBundle<T> loss_learning(const std::vector<T>& p_img, const std::vector<uint8_t>& y_img,
                            const std::vector<T>& p_word, const std::vector<uint8_t>& y_word,
                            const std::vector<T>& p_w2i, const Codebook<T>& C) {
    if (p_w2i.empty())
        throw ParamError("learning-strategy loss needs the word-frequency prediction p_w2i");
    LossBundle<T> b;
    b.cls_img = soft_margin_loss(p_img, y_img);
    b.cls_word = soft_margin_loss(p_word, y_word);
    b.cls_w2i = soft_margin_loss(p_w2i, y_img);
    b.decov = decov_loss(C.words, C.k, C.d);
    b.total = b.cls_img + b.cls_word + b.cls_w2i + b.decov;
    return b;
}

}  // namespace vwl
