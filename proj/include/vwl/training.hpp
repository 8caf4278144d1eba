#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vwl/backbone.hpp"
#include "vwl/cam.hpp"
#include "vwl/codebook.hpp"
#include "vwl/config.hpp"
#include "vwl/core.hpp"
#include "vwl/losses.hpp"
#include "vwl/pooling.hpp"
#include "vwl/synth_data.hpp"

namespace vwl {

enum class Strategy { learning = 0, memory_bank = 1 };

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "learning") return Strategy::learning;
    if (s == "memory_bank") return Strategy::memory_bank;
    throw ConfigError("unknown strategy: " + s + " (expected learning|memory_bank)");
}

inline const char* strategy_name(Strategy s) {
    return s == Strategy::learning ? "learning" : "memory_bank";
}

struct TrainConfig {
    Strategy strategy = Strategy::learning;
    bool vwl = true;  // word supervision on/off (ablation switch)
    PoolKind pooling = PoolKind::hp;
    int k = 32;
    double gamma = 2.0;
    double tau = 1.0;
    double rho = 0.001;
    std::vector<int> split_sizes{1, 2, 4};
    int epochs = 6;
    int batch_size = 16;
    double lr_backbone = 0.01;
    double lr_heads = 0.1;
    double momentum = 0.9;
    double lr_power = 0.9;
    uint64_t seed = 0;
    std::string dataset_path;
    std::vector<double> theta_grid{0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50,
                                   0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
    double theta_bg = 0.3;
    bool hflip = false;
    bool decov = true;
    CodebookInit codebook_init = CodebookInit::random;
    double gwrp_decay = 0.996;
    double lse_sharpness = 5.0;
    BackboneConfig backbone;

    void validate() const {
        backbone.validate();
        if (k < 2) throw ConfigError("k must be >= 2");
        if (gamma < 0) throw ConfigError("gamma must be nonnegative");
        if (!(tau > 0)) throw ConfigError("tau must be positive");
        if (strategy == Strategy::memory_bank && (!(rho > 0) || rho > 1))
            throw ConfigError("rho must be in (0, 1] for the memory-bank strategy");
        if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
        if (lr_backbone < 0 || lr_heads < 0) throw ConfigError("learning rates must be nonnegative");
        if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
        if (theta_grid.empty()) throw ConfigError("theta grid must be nonempty");
        PoolConfig pc{split_sizes, gamma};
        pc.validate(backbone.feature_size(), backbone.feature_size());
    }

    PoolConfig pool_config() const { return PoolConfig{split_sizes, gamma}; }

    KeyValueConfig to_kv() const {
        KeyValueConfig kv = backbone.to_kv();
        kv.set("train.strategy", strategy_name(strategy));
        kv.set_bool("train.vwl", vwl);
        kv.set("train.pooling", pool_kind_name(pooling));
        kv.set_int("train.k", k);
        kv.set_real("train.gamma", gamma);
        kv.set_real("train.tau", tau);
        kv.set_real("train.rho", rho);
        kv.set("train.split_sizes", KeyValueConfig::join_ints(split_sizes));
        kv.set_int("train.epochs", epochs);
        kv.set_int("train.batch_size", batch_size);
        kv.set_real("train.lr_backbone", lr_backbone);
        kv.set_real("train.lr_heads", lr_heads);
        kv.set_real("train.momentum", momentum);
        kv.set_real("train.lr_power", lr_power);
        kv.set_int("train.seed", static_cast<long long>(seed));
        kv.set("train.dataset", dataset_path);
        kv.set("train.theta_grid", KeyValueConfig::join_reals(theta_grid));
        kv.set_real("train.theta_bg", theta_bg);
        kv.set_bool("train.hflip", hflip);
        kv.set_bool("train.decov", decov);
        kv.set("train.codebook_init",
               codebook_init == CodebookInit::random ? "random" : "random_sample");
        kv.set_real("train.gwrp_decay", gwrp_decay);
        kv.set_real("train.lse_sharpness", lse_sharpness);
        return kv;
    }

    static TrainConfig from_kv(const KeyValueConfig& kv) {
        TrainConfig c;
        c.backbone = BackboneConfig::from_kv(kv);
        c.strategy = strategy_from_string(kv.get("train.strategy"));
        c.vwl = kv.get_bool("train.vwl");
        c.pooling = pool_kind_from_string(kv.get("train.pooling"));
        c.k = static_cast<int>(kv.get_int("train.k"));
        c.gamma = kv.get_real("train.gamma");
        c.tau = kv.get_real("train.tau");
        c.rho = kv.get_real("train.rho");
        c.split_sizes = kv.get_int_list("train.split_sizes");
        c.epochs = static_cast<int>(kv.get_int("train.epochs"));
        c.batch_size = static_cast<int>(kv.get_int("train.batch_size"));
        c.lr_backbone = kv.get_real("train.lr_backbone");
        c.lr_heads = kv.get_real("train.lr_heads");
        c.momentum = kv.get_real("train.momentum");
        c.lr_power = kv.get_real("train.lr_power");
        c.seed = static_cast<uint64_t>(kv.get_int("train.seed"));
        c.dataset_path = kv.get_or("train.dataset", "");
        c.theta_grid = kv.get_real_list("train.theta_grid");
        c.theta_bg = kv.get_real("train.theta_bg");
        c.hflip = kv.get_bool("train.hflip");
        c.decov = kv.get_bool("train.decov");
        c.codebook_init = codebook_init_from_string(kv.get("train.codebook_init"));
        c.gwrp_decay = kv.get_real("train.gwrp_decay");
        c.lse_sharpness = kv.get_real("train.lse_sharpness");
        return c;
    }

    uint64_t hash() const { return to_kv().hash(); }
};

// polynomial decay: base * (1 - iter/max_iter)^power
inline double lr_at(long long iter, long long max_iter, double base, double power) {
    if (iter < 0 || iter >= max_iter)
        throw TrainError("schedule error: iter " + std::to_string(iter) + " outside [0, " +
                         std::to_string(max_iter) + ")");
    return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

template <class T>
struct TrainState {
    TrainConfig cfg;
    BackboneParams<T> backbone;
    PredictionHeads<T> heads;
    Codebook<T> codebook;

    // heavy-ball momentum buffers
    BackboneGrads<T> vel_backbone;
    std::vector<T> vel_W_img, vel_W_word, vel_W_w2i, vel_codebook;

    long long step = 0;
    long long max_iter = 0;
    int epochs_done = 0;

    // reusable workspaces
    BackboneActs<T> acts;
    BackboneGrads<T> grads;
};

namespace detail {

template <class T>
Tensor<T> slice_sample(const Tensor<T>& batch, int b) {
    std::vector<int> d(batch.dims.begin() + 1, batch.dims.end());
    Tensor<T> out(d);
    const long long n = out.size();
    std::copy(batch.data() + static_cast<long long>(b) * n,
              batch.data() + static_cast<long long>(b + 1) * n, out.data());
    return out;
}

template <class T>
void sgd_update(std::vector<T>& p, const std::vector<T>& g, std::vector<T>& vel, T mom, T lr) {
    for (size_t i = 0; i < p.size(); ++i) {
        vel[i] = mom * vel[i] + g[i];
        p[i] -= lr * vel[i];
    }
}

template <class T>
void check_finite(T v, const char* name, long long step) {
    if (!std::isfinite(static_cast<double>(v)))
        throw TrainError("non-finite loss component '" + std::string(name) + "' at step " +
                         std::to_string(step));
}

}  // namespace detail

template <class T>
TrainState<T> init_train_state(const TrainConfig& cfg, const Dataset<T>* train_set = nullptr) {
    cfg.validate();
    TrainState<T> st;
    st.cfg = cfg;
    st.backbone = init_backbone<T>(cfg.backbone, cfg.seed);
    const bool learning = cfg.strategy == Strategy::learning;
    // heads are sized once the label space is known (attach_label_space)

    if (cfg.codebook_init == CodebookInit::random_sample) {
        if (!train_set || train_set->samples.empty())
            throw ParamError("random_sample codebook init needs training samples");
        // pool pixel features of the first batch through the fresh backbone
        const int B = std::min<int>(cfg.batch_size, static_cast<int>(train_set->samples.size()));
        Tensor<T> images({B, cfg.backbone.image_size, cfg.backbone.image_size, 3});
        for (int b = 0; b < B; ++b) {
            const auto& img = train_set->samples[static_cast<size_t>(b)].image;
            std::copy(img.data(), img.data() + img.size(), images.data() + static_cast<long long>(b) * img.size());
        }
        Tensor<T> F = extract_features(st.backbone, images, /*training=*/true,
                                       static_cast<BackboneActs<T>*>(nullptr),
                                       /*update_running=*/false);
        st.codebook = init_codebook<T>(cfg.k, cfg.backbone.d(), cfg.seed, CodebookInit::random_sample,
                                       &F,
                                       learning ? CodebookMode::learnable : CodebookMode::memory_bank);
    } else {
        st.codebook = init_codebook<T>(cfg.k, cfg.backbone.d(), cfg.seed, CodebookInit::random,
                                       nullptr,
                                       learning ? CodebookMode::learnable : CodebookMode::memory_bank);
    }

    st.vel_backbone.init_like(st.backbone);
    st.vel_codebook.assign(st.codebook.words.size(), T(0));
    st.grads.init_like(st.backbone);
    return st;
}

template <class T>
void attach_label_space(TrainState<T>& st, int L) {
    st.heads = init_heads<T>(st.cfg.backbone.d(), st.cfg.k, L,
                             st.cfg.seed, st.cfg.vwl && st.cfg.strategy == Strategy::learning);
    st.vel_W_img.assign(st.heads.W_img.size(), T(0));
    st.vel_W_word.assign(st.heads.W_word.size(), T(0));
    st.vel_W_w2i.assign(st.heads.W_w2i.size(), T(0));
}

// One optimization step following the per-batch schedule: features, word
// labels from the live codebook, pooling, heads, strategy loss, parameter
// update, and (memory-bank) codebook reconstruction + EMA.
template <class T>
LossBundle<T> train_step(TrainState<T>& st, const Tensor<T>& images,
                         const std::vector<uint8_t>& y_img) {
    const TrainConfig& cfg = st.cfg;
    const int B = images.dim(0);
    const int L = st.heads.L;
    const int k = cfg.k;
    const int d = cfg.backbone.d();
    const int fh = cfg.backbone.feature_size(), fw = fh;
    const int hw = fh * fw;
    if (static_cast<int>(y_img.size()) != B * L) throw ShapeError("label batch size mismatch");
    const bool learning = cfg.strategy == Strategy::learning;
    const bool use_words = cfg.vwl;
    const PoolConfig pc = cfg.pool_config();

    Tensor<T> F = extract_features(st.backbone, images, /*training=*/true, &st.acts);

    // per-sample forward products
    std::vector<Tensor<T>> Fb(static_cast<size_t>(B)), dFb(static_cast<size_t>(B));
    std::vector<WordAssignment<T>> wa(static_cast<size_t>(B));
    std::vector<std::vector<T>> f_pool(static_cast<size_t>(B)), f_gap_v(static_cast<size_t>(B)),
        p_img(static_cast<size_t>(B)), p_word(static_cast<size_t>(B)), p_w2i(static_cast<size_t>(B));

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int b = 0; b < B; ++b) {
        Fb[static_cast<size_t>(b)] = detail::slice_sample(F, b);
        const Tensor<T>& fb = Fb[static_cast<size_t>(b)];
        if (use_words) wa[static_cast<size_t>(b)] = encode(fb, st.codebook, cfg.tau);
        f_pool[static_cast<size_t>(b)] =
            pool_forward(cfg.pooling, fb, pc, cfg.gwrp_decay, cfg.lse_sharpness);
        p_img[static_cast<size_t>(b)] = head_forward(st.heads.W_img, f_pool[static_cast<size_t>(b)], d, L);
        if (use_words) {
            f_gap_v[static_cast<size_t>(b)] = gap(fb);
            p_word[static_cast<size_t>(b)] =
                head_forward(st.heads.W_word, f_gap_v[static_cast<size_t>(b)], d, k);
            if (learning)
                p_w2i[static_cast<size_t>(b)] =
                    head_forward(st.heads.W_w2i, wa[static_cast<size_t>(b)].f_word, k, L);
        }
    }

    // batch-mean loss components
    LossBundle<T> bundle;
    for (int b = 0; b < B; ++b) {
        std::vector<uint8_t> yb(y_img.begin() + static_cast<size_t>(b) * L,
                                y_img.begin() + static_cast<size_t>(b + 1) * L);
        bundle.cls_img += soft_margin_loss(p_img[static_cast<size_t>(b)], yb);
        if (use_words) {
            bundle.cls_word +=
                soft_margin_loss(p_word[static_cast<size_t>(b)], wa[static_cast<size_t>(b)].y_word);
            if (learning) bundle.cls_w2i += soft_margin_loss(p_w2i[static_cast<size_t>(b)], yb);
        }
    }
    bundle.cls_img /= static_cast<T>(B);
    bundle.cls_word /= static_cast<T>(B);
    bundle.cls_w2i /= static_cast<T>(B);
    if (use_words && learning && cfg.decov)
        bundle.decov = decov_loss(st.codebook.words, st.codebook.k, st.codebook.d);
    bundle.total = bundle.cls_img + bundle.cls_word + bundle.cls_w2i + bundle.decov;
    detail::check_finite(bundle.cls_img, "cls_img", st.step);
    detail::check_finite(bundle.cls_word, "cls_word", st.step);
    detail::check_finite(bundle.cls_w2i, "cls_w2i", st.step);
    detail::check_finite(bundle.decov, "decov", st.step);

    // backward: per-sample slabs first, then an order-fixed reduction
    st.grads.zero();
    std::vector<std::vector<T>> dWimg_slab(static_cast<size_t>(B)), dWword_slab(static_cast<size_t>(B)),
        dWw2i_slab(static_cast<size_t>(B)), dC_slab(static_cast<size_t>(B));
    const T inv_b = T(1) / static_cast<T>(B);

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int b = 0; b < B; ++b) {
        const Tensor<T>& fb = Fb[static_cast<size_t>(b)];
        Tensor<T>& dfb = dFb[static_cast<size_t>(b)];
        dfb = Tensor<T>(fb.dims);
        std::vector<uint8_t> yb(y_img.begin() + static_cast<size_t>(b) * L,
                                y_img.begin() + static_cast<size_t>(b + 1) * L);
        auto& dwi = dWimg_slab[static_cast<size_t>(b)];
        dwi.assign(st.heads.W_img.size(), T(0));

        std::vector<T> dp_img = soft_margin_loss_backward(p_img[static_cast<size_t>(b)], yb, inv_b);
        std::vector<T> df_pool(static_cast<size_t>(d), T(0));
        head_backward(st.heads.W_img, f_pool[static_cast<size_t>(b)], dp_img, d, L, dwi, df_pool);
        pool_backward(cfg.pooling, fb, pc, cfg.gwrp_decay, cfg.lse_sharpness, df_pool, dfb);

        if (use_words) {
            auto& dww = dWword_slab[static_cast<size_t>(b)];
            dww.assign(st.heads.W_word.size(), T(0));
            std::vector<T> dp_word = soft_margin_loss_backward(
                p_word[static_cast<size_t>(b)], wa[static_cast<size_t>(b)].y_word, inv_b);
            std::vector<T> df_gap(static_cast<size_t>(d), T(0));
            head_backward(st.heads.W_word, f_gap_v[static_cast<size_t>(b)], dp_word, d, k, dww, df_gap);
            gap_backward(df_gap, dfb);

            if (learning) {
                auto& dw2 = dWw2i_slab[static_cast<size_t>(b)];
                dw2.assign(st.heads.W_w2i.size(), T(0));
                auto& dcb = dC_slab[static_cast<size_t>(b)];
                dcb.assign(st.codebook.words.size(), T(0));
                std::vector<T> dp_w2i =
                    soft_margin_loss_backward(p_w2i[static_cast<size_t>(b)], yb, inv_b);
                std::vector<T> df_word(static_cast<size_t>(k), T(0));
                head_backward(st.heads.W_w2i, wa[static_cast<size_t>(b)].f_word, dp_w2i, k, L, dw2,
                              df_word);
                Tensor<T> dP = soft_frequency_backward(df_word, hw);
                Tensor<T> dS =
                    assign_probabilities_backward(wa[static_cast<size_t>(b)].P, cfg.tau, dP);
                similarity_backward(fb, st.codebook, wa[static_cast<size_t>(b)].S, dS, dfb, dcb);
            }
        }
    }

    // reductions in sample order
    std::vector<T> dW_img(st.heads.W_img.size(), T(0)), dW_word(st.heads.W_word.size(), T(0)),
        dW_w2i(st.heads.W_w2i.size(), T(0)), dC(st.codebook.words.size(), T(0));
    Tensor<T> dF(F.dims);
    for (int b = 0; b < B; ++b) {
        for (size_t i = 0; i < dW_img.size(); ++i) dW_img[i] += dWimg_slab[static_cast<size_t>(b)][i];
        if (use_words) {
            for (size_t i = 0; i < dW_word.size(); ++i)
                dW_word[i] += dWword_slab[static_cast<size_t>(b)][i];
            if (learning) {
                for (size_t i = 0; i < dW_w2i.size(); ++i)
                    dW_w2i[i] += dWw2i_slab[static_cast<size_t>(b)][i];
                for (size_t i = 0; i < dC.size(); ++i) dC[i] += dC_slab[static_cast<size_t>(b)][i];
            }
        }
        std::copy(dFb[static_cast<size_t>(b)].data(),
                  dFb[static_cast<size_t>(b)].data() + dFb[static_cast<size_t>(b)].size(),
                  dF.data() + static_cast<long long>(b) * dFb[static_cast<size_t>(b)].size());
    }
    if (use_words && learning && cfg.decov)
        decov_backward(st.codebook.words, st.codebook.k, st.codebook.d, T(1), dC);

    backbone_backward(st.backbone, st.acts, dF, st.grads);

    // parameter update
    const T lr_b = static_cast<T>(lr_at(st.step, st.max_iter, cfg.lr_backbone, cfg.lr_power));
    const T lr_h = static_cast<T>(lr_at(st.step, st.max_iter, cfg.lr_heads, cfg.lr_power));
    const T mom = static_cast<T>(cfg.momentum);
    for (size_t s = 0; s < st.backbone.convs.size(); ++s) {
        detail::sgd_update(st.backbone.convs[s].w, st.grads.conv_w[s], st.vel_backbone.conv_w[s], mom,
                           lr_b);
        detail::sgd_update(st.backbone.bns[s].gamma, st.grads.bn_gamma[s], st.vel_backbone.bn_gamma[s],
                           mom, lr_b);
        detail::sgd_update(st.backbone.bns[s].beta, st.grads.bn_beta[s], st.vel_backbone.bn_beta[s],
                           mom, lr_b);
    }
    detail::sgd_update(st.heads.W_img, dW_img, st.vel_W_img, mom, lr_h);
    if (use_words) {
        detail::sgd_update(st.heads.W_word, dW_word, st.vel_W_word, mom, lr_h);
        if (learning) {
            detail::sgd_update(st.heads.W_w2i, dW_w2i, st.vel_W_w2i, mom, lr_h);
            detail::sgd_update(st.codebook.words, dC, st.vel_codebook, mom, lr_h);
            ++st.codebook.update_count;
        } else {
            // memory-bank: gradient-free codebook update from this batch's
            // detached assignments, pooled across the whole batch
            std::vector<int> y_all;
            y_all.reserve(static_cast<size_t>(B) * hw);
            for (int b = 0; b < B; ++b)
                y_all.insert(y_all.end(), wa[static_cast<size_t>(b)].Y.begin(),
                             wa[static_cast<size_t>(b)].Y.end());
            std::vector<T> c_prime = reconstruct_codebook(y_all, F, st.codebook);
            ema_update(st.codebook, c_prime, cfg.rho);
        }
    }

    ++st.step;
    return bundle;
}

template <class T>
struct TrainedModel {
    TrainConfig cfg;
    uint64_t config_hash = 0;
    BackboneParams<T> backbone;
    PredictionHeads<T> heads;
    Codebook<T> codebook;
    std::map<std::string, double> metrics;
};

// ---- full-state checkpoints (parameters + optimizer state + counters) ----

namespace detail {
constexpr char kModelMagic[4] = {'V', 'W', 'M', 'D'};
constexpr uint32_t kModelVersion = 1;
}  // namespace detail

template <class T>
void save_checkpoint(const TrainState<T>& st, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    out.write(detail::kModelMagic, 4);
    uint32_t version = detail::kModelVersion, scalar = sizeof(T);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&scalar), 4);
    const uint64_t chash = st.cfg.hash();
    out.write(reinterpret_cast<const char*>(&chash), 8);
    detail::write_str(out, st.cfg.to_kv().serialize());
    int64_t step = st.step, max_iter = st.max_iter;
    int32_t epochs_done = st.epochs_done, L = st.heads.L;
    out.write(reinterpret_cast<const char*>(&step), 8);
    out.write(reinterpret_cast<const char*>(&max_iter), 8);
    out.write(reinterpret_cast<const char*>(&epochs_done), 4);
    out.write(reinterpret_cast<const char*>(&L), 4);
    save_backbone_stream(st.backbone, out, chash);
    detail::write_vec(out, st.heads.W_img);
    detail::write_vec(out, st.heads.W_word);
    detail::write_vec(out, st.heads.W_w2i);
    save_codebook_stream(st.codebook, out);
    for (const auto& v : st.vel_backbone.conv_w) detail::write_vec(out, v);
    for (const auto& v : st.vel_backbone.bn_gamma) detail::write_vec(out, v);
    for (const auto& v : st.vel_backbone.bn_beta) detail::write_vec(out, v);
    detail::write_vec(out, st.vel_W_img);
    detail::write_vec(out, st.vel_W_word);
    detail::write_vec(out, st.vel_W_w2i);
    detail::write_vec(out, st.vel_codebook);
    if (!out) throw FormatError("short write: " + path);
}

template <class T>
TrainState<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, detail::kModelMagic, 4) != 0)
        throw FormatError("not a model checkpoint: " + path);
    uint32_t version = 0, scalar = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&scalar), 4);
    if (version != detail::kModelVersion)
        throw FormatError("model checkpoint version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(detail::kModelVersion) + ")");
    if (scalar != sizeof(T)) throw FormatError("scalar width mismatch in " + path);
    uint64_t chash = 0;
    in.read(reinterpret_cast<char*>(&chash), 8);
    std::string cfg_text = detail::read_str(in);
    int64_t step = 0, max_iter = 0;
    int32_t epochs_done = 0, L = 0;
    in.read(reinterpret_cast<char*>(&step), 8);
    in.read(reinterpret_cast<char*>(&max_iter), 8);
    in.read(reinterpret_cast<char*>(&epochs_done), 4);
    in.read(reinterpret_cast<char*>(&L), 4);

    KeyValueConfig kv;
    {
        std::istringstream is(cfg_text);
        std::string line;
        while (std::getline(is, line)) {
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
    TrainState<T> st;
    st.cfg = TrainConfig::from_kv(kv);
    if (st.cfg.hash() != chash) throw FormatError("config hash mismatch in " + path);
    st.step = step;
    st.max_iter = max_iter;
    st.epochs_done = epochs_done;
    st.backbone = load_backbone_stream<T>(in, path);
    st.heads.d = st.cfg.backbone.d();
    st.heads.k = st.cfg.k;
    st.heads.L = L;
    detail::read_vec(in, st.heads.W_img);
    detail::read_vec(in, st.heads.W_word);
    detail::read_vec(in, st.heads.W_w2i);
    st.codebook = load_codebook_stream<T>(in, path);
    st.vel_backbone.init_like(st.backbone);
    for (auto& v : st.vel_backbone.conv_w) detail::read_vec(in, v);
    for (auto& v : st.vel_backbone.bn_gamma) detail::read_vec(in, v);
    for (auto& v : st.vel_backbone.bn_beta) detail::read_vec(in, v);
    detail::read_vec(in, st.vel_W_img);
    detail::read_vec(in, st.vel_W_word);
    detail::read_vec(in, st.vel_W_w2i);
    detail::read_vec(in, st.vel_codebook);
    st.grads.init_like(st.backbone);
    return st;
}

// Runs epochs * ceil(n / batch) steps with SGD + momentum under the
// polynomial schedule; logs one record per step; checkpoints each epoch.
template <class T>
TrainedModel<T> train(const TrainConfig& cfg, const Dataset<T>& train_set,
                      const std::string& log_path = "", const std::string& checkpoint_dir = "",
                      const std::string& resume_from = "") {
    cfg.validate();
    const int n = static_cast<int>(train_set.samples.size());
    if (n == 0) throw ConfigError("training set is empty");
    const int L = train_set.num_classes;
    const int B = cfg.batch_size;
    const long long steps_per_epoch = (n + B - 1) / B;

    TrainState<T> st;
    if (!resume_from.empty()) {
        st = load_checkpoint<T>(resume_from);
        if (st.cfg.hash() != cfg.hash())
            throw ConfigError("resume checkpoint was produced by a different config");
    } else {
        st = init_train_state(cfg, &train_set);
        attach_label_space(st, L);
        st.max_iter = steps_per_epoch * cfg.epochs;
    }

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, resume_from.empty() ? std::ios::trunc : std::ios::app);
        if (!log) throw ConfigError("cannot open training log: " + log_path);
        if (resume_from.empty()) log << "step,lr,cls_img,cls_word,cls_w2i,decov,total\n";
    }

    const int H = cfg.backbone.image_size;
    for (int epoch = st.epochs_done; epoch < cfg.epochs; ++epoch) {
        // deterministic per-epoch order and flip coins, derived statelessly
        // from (seed, epoch) so resumed runs see identical batches
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        Rng rng(mix_seed(cfg.seed, 0xda7a, static_cast<uint64_t>(epoch)));
        rng.shuffle(order.begin(), order.end());
        std::vector<uint8_t> flip(static_cast<size_t>(n), 0);
        if (cfg.hflip)
            for (int i = 0; i < n; ++i) flip[static_cast<size_t>(i)] = rng.uniform() < 0.5 ? 1 : 0;

        for (long long bi = 0; bi < steps_per_epoch; ++bi) {
            const int lo = static_cast<int>(bi) * B;
            const int hi = std::min(lo + B, n);
            const int bs = hi - lo;
            Tensor<T> images({bs, H, H, 3});
            std::vector<uint8_t> yb(static_cast<size_t>(bs) * L);
            for (int j = 0; j < bs; ++j) {
                const Sample<T>& s = train_set.samples[static_cast<size_t>(order[static_cast<size_t>(lo + j)])];
                const bool fl = flip[static_cast<size_t>(order[static_cast<size_t>(lo + j)])] != 0;
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < H; ++x)
                        for (int c = 0; c < 3; ++c)
                            images(j, y, x, c) = fl ? s.image(y, H - 1 - x, c) : s.image(y, x, c);
                std::copy(s.y_img.begin(), s.y_img.end(), yb.begin() + static_cast<size_t>(j) * L);
            }
            const double lr_now = lr_at(st.step, st.max_iter, cfg.lr_backbone, cfg.lr_power);
            LossBundle<T> lb = train_step(st, images, yb);
            if (log) {
                char line[256];
                std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                              static_cast<long long>(st.step - 1), lr_now,
                              static_cast<double>(lb.cls_img), static_cast<double>(lb.cls_word),
                              static_cast<double>(lb.cls_w2i), static_cast<double>(lb.decov),
                              static_cast<double>(lb.total));
                log << line;
            }
        }
        st.epochs_done = epoch + 1;
        if (!checkpoint_dir.empty()) {
            std::filesystem::create_directories(checkpoint_dir);
            char name[64];
            std::snprintf(name, sizeof name, "model_epoch%03d.ckpt", epoch + 1);
            save_checkpoint(st, (std::filesystem::path(checkpoint_dir) / name).string());
        }
    }

    TrainedModel<T> model;
    model.cfg = st.cfg;
    model.config_hash = st.cfg.hash();
    model.backbone = std::move(st.backbone);
    model.heads = std::move(st.heads);
    model.codebook = std::move(st.codebook);
    return model;
}

// inference-time feature extraction for one image (running statistics)
template <class T>
Tensor<T> infer_features(BackboneParams<T>& backbone, const Tensor<T>& image) {
    Tensor<T> batch({1, image.dim(0), image.dim(1), image.dim(2)});
    std::copy(image.data(), image.data() + image.size(), batch.data());
    Tensor<T> F = extract_features(backbone, batch, /*training=*/false);
    Tensor<T> out({F.dim(1), F.dim(2), F.dim(3)});
    std::copy(F.data(), F.data() + out.size(), out.data());
    return out;
}

}  // namespace vwl
