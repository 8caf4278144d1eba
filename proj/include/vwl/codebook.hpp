#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "vwl/core.hpp"

namespace vwl {

enum class CodebookMode : uint8_t { learnable = 0, memory_bank = 1 };
enum class CodebookInit { random = 0, random_sample = 1 };

inline CodebookInit codebook_init_from_string(const std::string& s) {
    if (s == "random") return CodebookInit::random;
    if (s == "random_sample") return CodebookInit::random_sample;
    throw ConfigError("unknown codebook init: " + s + " (expected random|random_sample)");
}

template <class T>
struct Codebook {
    int k = 0, d = 0;
    CodebookMode mode = CodebookMode::learnable;
    int64_t update_count = 0;
    std::vector<T> words;  // k x d row-major

    T* row(int j) { return words.data() + static_cast<size_t>(j) * d; }
    const T* row(int j) const { return words.data() + static_cast<size_t>(j) * d; }
};

// Everything derived from encoding one feature map against a codebook.
template <class T>
struct WordAssignment {
    int hw = 0, k = 0;
    Tensor<T> S;                  // hw x k cosine similarities
    Tensor<T> P;                  // hw x k row-softmax probabilities
    std::vector<int> Y;           // hw hard labels
    std::vector<uint8_t> W;       // hw x k one-hot expansion of Y
    std::vector<uint8_t> y_word;  // k word-presence bits
    std::vector<T> f_word;        // k soft frequencies
};

namespace detail {
template <class T>
inline std::pair<long long, int> unfold_hw(const Tensor<T>& F) {
    if (F.dims.size() < 2) throw ShapeError("feature map needs at least 2 dims");
    int d = F.dims.back();
    long long hw = 1;
    for (size_t i = 0; i + 1 < F.dims.size(); ++i) hw *= F.dims[i];
    return {hw, d};
}
}  // namespace detail

template <class T>
Codebook<T> init_codebook(int k, int d, uint64_t seed, CodebookInit method,
                          const Tensor<T>* feature_pool = nullptr,
                          CodebookMode mode = CodebookMode::learnable) {
    if (k < 2 || d < 2) throw ParamError("codebook needs k >= 2 and d >= 2");
    Codebook<T> cb;
    cb.k = k;
    cb.d = d;
    cb.mode = mode;
    cb.words.assign(static_cast<size_t>(k) * d, T(0));
    Rng rng(mix_seed(seed, 0x636f6465626f6f6bull));
    if (method == CodebookInit::random) {
        // zero-mean gaussian rows, renormalized to unit length
        for (int j = 0; j < k; ++j) {
            T* r = cb.row(j);
            double nrm2 = 0.0;
            do {
                nrm2 = 0.0;
                for (int m = 0; m < d; ++m) {
                    r[m] = static_cast<T>(rng.normal());
                    nrm2 += static_cast<double>(r[m]) * static_cast<double>(r[m]);
                }
            } while (nrm2 == 0.0);
            const T inv = static_cast<T>(1.0 / std::sqrt(nrm2));
            for (int m = 0; m < d; ++m) r[m] *= inv;
        }
    } else {
        if (feature_pool == nullptr) throw ParamError("random_sample init needs a feature pool");
        auto [n, pd] = detail::unfold_hw(*feature_pool);
        if (pd != d) throw ShapeError("feature pool dimension " + std::to_string(pd) +
                                      " != codebook d " + std::to_string(d));
        if (n < k)
            throw ParamError("initialization error: pool has " + std::to_string(n) +
                             " pixel features, need at least " + std::to_string(k));
        std::vector<long long> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), 0ll);
        rng.shuffle(idx.begin(), idx.end());
        const T* pool = feature_pool->data();
        for (int j = 0; j < k; ++j)
            for (int m = 0; m < d; ++m) cb.row(j)[m] = pool[idx[static_cast<size_t>(j)] * d + m];
    }
    return cb;
}

// S[i][j] = cos(F_i, C_j); zero-norm vectors map to similarity 0
template <class T>
Tensor<T> similarity(const Tensor<T>& F, const Codebook<T>& C) {
    auto [hw, d] = detail::unfold_hw(F);
    if (d != C.d)
        throw ShapeError("feature dimension " + std::to_string(d) + " != codebook d " +
                         std::to_string(C.d));
    Tensor<T> S({static_cast<int>(hw), C.k});
    std::vector<double> cn(static_cast<size_t>(C.k));
    for (int j = 0; j < C.k; ++j) {
        double n2 = 0.0;
        const T* r = C.row(j);
        for (int m = 0; m < d; ++m) n2 += static_cast<double>(r[m]) * static_cast<double>(r[m]);
        cn[static_cast<size_t>(j)] = std::sqrt(n2);
    }
    const T* f = F.data();
    for (long long i = 0; i < hw; ++i) {
        double fn2 = 0.0;
        for (int m = 0; m < d; ++m)
            fn2 += static_cast<double>(f[i * d + m]) * static_cast<double>(f[i * d + m]);
        const double fn = std::sqrt(fn2);
        for (int j = 0; j < C.k; ++j) {
            if (fn == 0.0 || cn[static_cast<size_t>(j)] == 0.0) {
                S(static_cast<int>(i), j) = T(0);
                continue;
            }
            double dot = 0.0;
            const T* r = C.row(j);
            for (int m = 0; m < d; ++m)
                dot += static_cast<double>(f[i * d + m]) * static_cast<double>(r[m]);
            S(static_cast<int>(i), j) = static_cast<T>(dot / (fn * cn[static_cast<size_t>(j)]));
        }
    }
    return S;
}

// row-wise softmax of tau * S with per-row max subtraction
template <class T>
Tensor<T> assign_probabilities(const Tensor<T>& S, double tau) {
    if (!(tau > 0.0)) throw ParamError("temperature must be positive");
    if (S.dims.size() != 2) throw ShapeError("similarity matrix must be hw x k");
    const int hw = S.dim(0), k = S.dim(1);
    Tensor<T> P({hw, k});
    const T t = static_cast<T>(tau);
    for (int i = 0; i < hw; ++i) {
        T m = S(i, 0) * t;
        for (int j = 1; j < k; ++j) m = std::max(m, S(i, j) * t);
        T z = T(0);
        for (int j = 0; j < k; ++j) {
            P(i, j) = std::exp(S(i, j) * t - m);
            z += P(i, j);
        }
        for (int j = 0; j < k; ++j) P(i, j) /= z;
    }
    return P;
}

// argmax labels with ties to the lowest index; presence bits; one-hot matrix
template <class T>
void hard_labels(const Tensor<T>& P, std::vector<int>& Y, std::vector<uint8_t>& y_word,
                 std::vector<uint8_t>& W) {
    if (P.dims.size() != 2) throw ShapeError("probability matrix must be hw x k");
    const int hw = P.dim(0), k = P.dim(1);
    Y.assign(static_cast<size_t>(hw), 0);
    y_word.assign(static_cast<size_t>(k), 0);
    W.assign(static_cast<size_t>(hw) * k, 0);
    for (int i = 0; i < hw; ++i) {
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (P(i, j) > P(i, best)) best = j;
        Y[static_cast<size_t>(i)] = best;
        y_word[static_cast<size_t>(best)] = 1;
        W[static_cast<size_t>(i) * k + best] = 1;
    }
}

// f_word[j] = mean over rows of P[:, j]
template <class T>
std::vector<T> soft_frequency(const Tensor<T>& P) {
    if (P.dims.size() != 2) throw ShapeError("probability matrix must be hw x k");
    const int hw = P.dim(0), k = P.dim(1);
    std::vector<T> f(static_cast<size_t>(k), T(0));
    for (int i = 0; i < hw; ++i)
        for (int j = 0; j < k; ++j) f[static_cast<size_t>(j)] += P(i, j);
    for (int j = 0; j < k; ++j) f[static_cast<size_t>(j)] /= static_cast<T>(hw);
    return f;
}

template <class T>
WordAssignment<T> encode(const Tensor<T>& F, const Codebook<T>& C, double tau) {
    WordAssignment<T> wa;
    auto [hw, d] = detail::unfold_hw(F);
    (void)d;
    wa.hw = static_cast<int>(hw);
    wa.k = C.k;
    wa.S = similarity(F, C);
    wa.P = assign_probabilities(wa.S, tau);
    hard_labels(wa.P, wa.Y, wa.y_word, wa.W);
    wa.f_word = soft_frequency(wa.P);
    return wa;
}

// Per-word mean of the assigned pixel features; words with no pixels keep
// their current representation.
template <class T>
std::vector<T> reconstruct_codebook(const std::vector<int>& Y, const Tensor<T>& F,
                                    const Codebook<T>& C) {
    if (C.mode != CodebookMode::memory_bank)
        throw ParamError("reconstruct_codebook requires a memory-bank codebook");
    auto [hw, d] = detail::unfold_hw(F);
    if (d != C.d) throw ShapeError("feature dimension mismatch in reconstruction");
    if (static_cast<long long>(Y.size()) != hw)
        throw ShapeError("label count " + std::to_string(Y.size()) + " != pixel count " +
                         std::to_string(hw));
    std::vector<double> acc(static_cast<size_t>(C.k) * d, 0.0);
    std::vector<long long> counts(static_cast<size_t>(C.k), 0);
    const T* f = F.data();
    for (long long i = 0; i < hw; ++i) {
        int j = Y[static_cast<size_t>(i)];
        if (j < 0 || j >= C.k) throw ShapeError("label out of range");
        ++counts[static_cast<size_t>(j)];
        double* a = acc.data() + static_cast<size_t>(j) * d;
        for (int m = 0; m < d; ++m) a[m] += static_cast<double>(f[i * d + m]);
    }
    std::vector<T> cp(static_cast<size_t>(C.k) * d);
    for (int j = 0; j < C.k; ++j) {
        const long long n = counts[static_cast<size_t>(j)];
        for (int m = 0; m < d; ++m)
            cp[static_cast<size_t>(j) * d + m] =
                n > 0 ? static_cast<T>(acc[static_cast<size_t>(j) * d + m] / static_cast<double>(n))
                      : C.row(j)[m];
    }
    return cp;
}

// C <- rho * C' + (1 - rho) * C, outside any gradient path
template <class T>
void ema_update(Codebook<T>& C, const std::vector<T>& c_prime, double rho) {
    if (C.mode != CodebookMode::memory_bank)
        throw ParamError("ema_update requires a memory-bank codebook");
    if (!(rho > 0.0) || rho > 1.0) throw ParamError("momentum rho must be in (0, 1]");
    if (c_prime.size() != C.words.size()) throw ShapeError("reconstructed codebook shape mismatch");
    const T r = static_cast<T>(rho);
    for (size_t i = 0; i < C.words.size(); ++i)
        C.words[i] = r * c_prime[i] + (T(1) - r) * C.words[i];
    ++C.update_count;
}

// ---- gradients for the learnable strategy ----

// dP -> dS for the row-softmax with temperature tau
template <class T>
Tensor<T> assign_probabilities_backward(const Tensor<T>& P, double tau, const Tensor<T>& dP) {
    if (!P.same_shape(dP)) throw ShapeError("dP shape mismatch");
    const int hw = P.dim(0), k = P.dim(1);
    Tensor<T> dS({hw, k});
    const T t = static_cast<T>(tau);
    for (int i = 0; i < hw; ++i) {
        T dot = T(0);
        for (int j = 0; j < k; ++j) dot += dP(i, j) * P(i, j);
        for (int j = 0; j < k; ++j) dS(i, j) = t * P(i, j) * (dP(i, j) - dot);
    }
    return dS;
}

// dS -> (dF, dC). Pairs involving a zero-norm vector contribute nothing.
template <class T>
void similarity_backward(const Tensor<T>& F, const Codebook<T>& C, const Tensor<T>& S,
                         const Tensor<T>& dS, Tensor<T>& dF, std::vector<T>& dC) {
    auto [hw, d] = detail::unfold_hw(F);
    if (d != C.d) throw ShapeError("feature dimension mismatch");
    if (!F.same_shape(dF)) throw ShapeError("dF shape mismatch");
    if (dC.size() != C.words.size()) throw ShapeError("dC shape mismatch");
    std::vector<double> cn(static_cast<size_t>(C.k));
    for (int j = 0; j < C.k; ++j) {
        double n2 = 0.0;
        const T* r = C.row(j);
        for (int m = 0; m < d; ++m) n2 += static_cast<double>(r[m]) * static_cast<double>(r[m]);
        cn[static_cast<size_t>(j)] = std::sqrt(n2);
    }
    const T* f = F.data();
    T* df = dF.data();
    for (long long i = 0; i < hw; ++i) {
        double fn2 = 0.0;
        for (int m = 0; m < d; ++m)
            fn2 += static_cast<double>(f[i * d + m]) * static_cast<double>(f[i * d + m]);
        const double fn = std::sqrt(fn2);
        if (fn == 0.0) continue;
        for (int j = 0; j < C.k; ++j) {
            const double cnj = cn[static_cast<size_t>(j)];
            if (cnj == 0.0) continue;
            const double g = static_cast<double>(dS(static_cast<int>(i), j));
            if (g == 0.0) continue;
            const double s = static_cast<double>(S(static_cast<int>(i), j));
            const double a = g / (fn * cnj);
            const double bf = g * s / fn2;
            const double bc = g * s / (cnj * cnj);
            const T* r = C.row(j);
            T* dcj = dC.data() + static_cast<size_t>(j) * d;
            for (int m = 0; m < d; ++m) {
                df[i * d + m] += static_cast<T>(a * static_cast<double>(r[m]) -
                                                bf * static_cast<double>(f[i * d + m]));
                dcj[m] += static_cast<T>(a * static_cast<double>(f[i * d + m]) -
                                         bc * static_cast<double>(r[m]));
            }
        }
    }
}

// df_word -> dP (every row shares the same df / hw contribution)
template <class T>
Tensor<T> soft_frequency_backward(const std::vector<T>& df_word, int hw) {
    const int k = static_cast<int>(df_word.size());
    Tensor<T> dP({hw, k});
    const T inv = T(1) / static_cast<T>(hw);
    for (int i = 0; i < hw; ++i)
        for (int j = 0; j < k; ++j) dP(i, j) = df_word[static_cast<size_t>(j)] * inv;
    return dP;
}

// ---- persistence ----

namespace detail {
constexpr char kCodebookMagic[4] = {'V', 'W', 'C', 'B'};
constexpr uint32_t kCodebookVersion = 1;
}  // namespace detail

template <class T>
void save_codebook_stream(const Codebook<T>& C, std::ostream& out) {
    out.write(detail::kCodebookMagic, 4);
    auto put_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    put_u32(detail::kCodebookVersion);
    put_u32(static_cast<uint32_t>(sizeof(T)));
    put_u32(static_cast<uint32_t>(C.k));
    put_u32(static_cast<uint32_t>(C.d));
    put_u32(static_cast<uint32_t>(C.mode));
    put_u64(static_cast<uint64_t>(C.update_count));
    put_u64(checksum_values(C.words));
    out.write(reinterpret_cast<const char*>(C.words.data()),
              static_cast<std::streamsize>(C.words.size() * sizeof(T)));
    if (!out) throw FormatError("short write while saving codebook");
}

template <class T>
void save_codebook(const Codebook<T>& C, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    save_codebook_stream(C, out);
}

template <class T>
Codebook<T> load_codebook_stream(std::istream& in, const std::string& origin) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, detail::kCodebookMagic, 4) != 0)
        throw FormatError("not a codebook file: " + origin);
    auto get_u32 = [&]() {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_u64 = [&]() {
        uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    const uint32_t version = get_u32();
    if (version != detail::kCodebookVersion)
        throw FormatError("codebook version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(detail::kCodebookVersion) + ")");
    const uint32_t scalar = get_u32();
    if (scalar != sizeof(T))
        throw FormatError("codebook scalar width " + std::to_string(scalar) + " != " +
                          std::to_string(sizeof(T)));
    Codebook<T> C;
    C.k = static_cast<int>(get_u32());
    C.d = static_cast<int>(get_u32());
    C.mode = static_cast<CodebookMode>(get_u32());
    C.update_count = static_cast<int64_t>(get_u64());
    const uint64_t want = get_u64();
    if (C.k < 2 || C.d < 2) throw FormatError("corrupted codebook header");
    C.words.resize(static_cast<size_t>(C.k) * C.d);
    in.read(reinterpret_cast<char*>(C.words.data()),
            static_cast<std::streamsize>(C.words.size() * sizeof(T)));
    if (in.gcount() != static_cast<std::streamsize>(C.words.size() * sizeof(T)))
        throw FormatError("truncated codebook payload");
    if (checksum_values(C.words) != want) throw FormatError("codebook checksum mismatch");
    return C;
}

template <class T>
Codebook<T> load_codebook(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    return load_codebook_stream<T>(in, path);
}

}  // namespace vwl
