#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "vwl/cam.hpp"
#include "vwl/core.hpp"
#include "vwl/training.hpp"

namespace vwl {

struct IoUReport {
    std::vector<double> per_class_iou;  // L+1 entries, background first
    double miou = 0.0;
    std::vector<long long> confusion;  // (L+1) x (L+1), rows = ground truth

    long long conf(int gt, int pred, int L) const {
        return confusion[static_cast<size_t>(gt) * (L + 1) + pred];
    }
};

// Accumulates one confusion matrix over the whole split, then derives
// per-class IoU. A class absent from both prediction and ground truth
// scores 1 so the mean stays total.
inline IoUReport miou_report(const std::vector<std::vector<uint8_t>>& preds,
                             const std::vector<std::vector<uint8_t>>& gts, int L) {
    if (preds.size() != gts.size()) throw ShapeError("prediction/ground-truth count mismatch");
    const int C = L + 1;
    IoUReport rep;
    rep.confusion.assign(static_cast<size_t>(C) * C, 0);
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].size() != gts[i].size())
            throw ShapeError("mask resolution mismatch at sample " + std::to_string(i));
        for (size_t p = 0; p < preds[i].size(); ++p) {
            const int g = gts[i][p], q = preds[i][p];
            if (g >= C || q >= C) throw ShapeError("mask label out of range");
            ++rep.confusion[static_cast<size_t>(g) * C + q];
        }
    }
    rep.per_class_iou.assign(static_cast<size_t>(C), 0.0);
    double acc = 0.0;
    for (int c = 0; c < C; ++c) {
        long long tp = rep.confusion[static_cast<size_t>(c) * C + c];
        long long fp = 0, fn = 0;
        for (int o = 0; o < C; ++o) {
            if (o == c) continue;
            fp += rep.confusion[static_cast<size_t>(o) * C + c];
            fn += rep.confusion[static_cast<size_t>(c) * C + o];
        }
        const long long denom = tp + fp + fn;
        rep.per_class_iou[static_cast<size_t>(c)] =
            denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
        acc += rep.per_class_iou[static_cast<size_t>(c)];
    }
    rep.miou = acc / C;
    return rep;
}

namespace detail {
template <class T>
std::vector<int> present_classes(const Sample<T>& s) {
    std::vector<int> out;
    for (size_t c = 0; c < s.y_img.size(); ++c)
        if (s.y_img[c]) out.push_back(static_cast<int>(c));
    return out;
}
}  // namespace detail

// Normalized CAMs of every sample, bilinearly upsampled to image
// resolution. The heavy part of evaluation; computed once per model and
// shared across the theta grid.
template <class T>
std::vector<ClassActivationMaps<T>> compute_eval_cams(TrainedModel<T>& model,
                                                      const Dataset<T>& eval_set) {
    const int n = static_cast<int>(eval_set.samples.size());
    const int H = eval_set.image_size;
    std::vector<ClassActivationMaps<T>> cams(static_cast<size_t>(n));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int i = 0; i < n; ++i) {
        Tensor<T> F = infer_features(model.backbone, eval_set.samples[static_cast<size_t>(i)].image);
        ClassActivationMaps<T> c = compute_cams(F, model.heads.W_img, model.heads.L);
        cams[static_cast<size_t>(i)] = upsample_cams(c, H, H);
    }
    return cams;
}

struct ThetaSweepResult {
    double best_theta = 0.0;
    double best_miou = 0.0;
    std::vector<std::pair<double, double>> per_theta;  // (theta, miou), grid order
    IoUReport best_report;
};

// Grid search over the background threshold; ties resolve to the smallest
// theta because only a strictly better mIoU replaces the incumbent.
template <class T>
ThetaSweepResult sweep_theta(const std::vector<ClassActivationMaps<T>>& cams,
                             const Dataset<T>& eval_set, const std::vector<double>& grid) {
    if (grid.empty()) throw ParamError("theta grid must be nonempty");
    std::vector<double> sorted(grid);
    std::sort(sorted.begin(), sorted.end());
    const int n = static_cast<int>(eval_set.samples.size());
    const int L = eval_set.num_classes;
    ThetaSweepResult res;
    std::vector<std::vector<uint8_t>> gts;
    gts.reserve(static_cast<size_t>(n));
    for (const auto& s : eval_set.samples) gts.push_back(s.gt_mask);
    bool first = true;
    for (double theta : sorted) {
        std::vector<std::vector<uint8_t>> preds(static_cast<size_t>(n));
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int i = 0; i < n; ++i) {
            const auto& s = eval_set.samples[static_cast<size_t>(i)];
            std::vector<int> present = detail::present_classes(s);
            preds[static_cast<size_t>(i)] =
                present.empty()
                    ? std::vector<uint8_t>(s.gt_mask.size(), 0)
                    : pseudo_labels(cams[static_cast<size_t>(i)], present, theta);
        }
        IoUReport rep = miou_report(preds, gts, L);
        res.per_theta.emplace_back(theta, rep.miou);
        if (first || rep.miou > res.best_miou) {
            first = false;
            res.best_miou = rep.miou;
            res.best_theta = theta;
            res.best_report = rep;
        }
    }
    return res;
}

template <class T>
ThetaSweepResult evaluate_model(TrainedModel<T>& model, const Dataset<T>& eval_set,
                                const std::vector<double>& grid) {
    auto cams = compute_eval_cams(model, eval_set);
    return sweep_theta(cams, eval_set, grid);
}

// ---- word-frequency diagnostics ----

template <class T>
std::vector<T> image_word_frequency(TrainedModel<T>& model, const Sample<T>& s) {
    Tensor<T> F = infer_features(model.backbone, s.image);
    WordAssignment<T> wa = encode(F, model.codebook, model.cfg.tau);
    return wa.f_word;
}

// Linear probe used for memory-bank models, which have no trained w2i head.
// Deterministic full-batch gradient descent on the multi-label objective.
template <class T>
struct WordProbe {
    int k = 0, L = 0;
    std::vector<T> W;  // k x L
    std::vector<T> bias;
};

template <class T>
WordProbe<T> fit_word_probe(const std::vector<std::vector<T>>& freqs,
                            const std::vector<std::vector<uint8_t>>& labels, int k, int L,
                            int iters = 400, double lr = 2.0) {
    WordProbe<T> probe;
    probe.k = k;
    probe.L = L;
    probe.W.assign(static_cast<size_t>(k) * L, T(0));
    probe.bias.assign(static_cast<size_t>(L), T(0));
    const int n = static_cast<int>(freqs.size());
    std::vector<T> dW(probe.W.size()), db(probe.bias.size());
    for (int it = 0; it < iters; ++it) {
        std::fill(dW.begin(), dW.end(), T(0));
        std::fill(db.begin(), db.end(), T(0));
        for (int i = 0; i < n; ++i) {
            std::vector<T> p = head_forward(probe.W, freqs[static_cast<size_t>(i)], k, L);
            for (int c = 0; c < L; ++c) p[static_cast<size_t>(c)] += probe.bias[static_cast<size_t>(c)];
            std::vector<T> dp = soft_margin_loss_backward(p, labels[static_cast<size_t>(i)],
                                                          T(1) / static_cast<T>(n));
            std::vector<T> unused(static_cast<size_t>(k), T(0));
            head_backward(probe.W, freqs[static_cast<size_t>(i)], dp, k, L, dW, unused);
            for (int c = 0; c < L; ++c) db[static_cast<size_t>(c)] += dp[static_cast<size_t>(c)];
        }
        for (size_t j = 0; j < probe.W.size(); ++j) probe.W[j] -= static_cast<T>(lr) * dW[j];
        for (size_t j = 0; j < probe.bias.size(); ++j) probe.bias[j] -= static_cast<T>(lr) * db[j];
    }
    return probe;
}

// Per-class accuracy of predicting image labels from word frequencies,
// averaged over classes. Learning-strategy models use their trained w2i
// head; memory-bank models get a fresh probe fit on the probe split.
template <class T>
double word_frequency_accuracy(TrainedModel<T>& model, const Dataset<T>& eval_set,
                               const Dataset<T>* probe_train = nullptr) {
    const int L = model.heads.L;
    const int k = model.cfg.k;
    const int n = static_cast<int>(eval_set.samples.size());
    if (n == 0) throw ParamError("empty evaluation set");

    std::vector<std::vector<T>> freqs(static_cast<size_t>(n));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int i = 0; i < n; ++i)
        freqs[static_cast<size_t>(i)] = image_word_frequency(model, eval_set.samples[static_cast<size_t>(i)]);

    const bool has_head = !model.heads.W_w2i.empty();
    WordProbe<T> probe;
    if (!has_head) {
        if (!probe_train)
            throw ParamError("memory-bank model needs a probe training split for word accuracy");
        const int m = static_cast<int>(probe_train->samples.size());
        std::vector<std::vector<T>> tf(static_cast<size_t>(m));
        std::vector<std::vector<uint8_t>> tl(static_cast<size_t>(m));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
        for (int i = 0; i < m; ++i)
            tf[static_cast<size_t>(i)] =
                image_word_frequency(model, probe_train->samples[static_cast<size_t>(i)]);
        for (int i = 0; i < m; ++i) tl[static_cast<size_t>(i)] = probe_train->samples[static_cast<size_t>(i)].y_img;
        probe = fit_word_probe(tf, tl, k, L);
    }

    long long correct = 0;
    for (int i = 0; i < n; ++i) {
        std::vector<T> p = has_head ? head_forward(model.heads.W_w2i, freqs[static_cast<size_t>(i)], k, L)
                                    : head_forward(probe.W, freqs[static_cast<size_t>(i)], k, L);
        if (!has_head)
            for (int c = 0; c < L; ++c) p[static_cast<size_t>(c)] += probe.bias[static_cast<size_t>(c)];
        const auto& y = eval_set.samples[static_cast<size_t>(i)].y_img;
        for (int c = 0; c < L; ++c) {
            const bool pred = sigmoid(p[static_cast<size_t>(c)]) >= T(0.5);
            if (pred == (y[static_cast<size_t>(c)] != 0)) ++correct;
        }
    }
    return static_cast<double>(correct) / (static_cast<double>(n) * L);
}

// ---- ablation grid ----

struct AblationRow {
    std::string variant;
    uint64_t seed = 0;
    uint64_t config_hash = 0;
    double miou = 0.0;
    double best_theta = 0.0;
    double wall_seconds = 0.0;
    bool failed = false;
    std::string error;
};

using VariantPatch = std::function<void(TrainConfig&)>;

// The default grid mirrors the module-ablation table: a plain GAP
// classifier, hybrid pooling alone, then hybrid pooling plus each
// visual-word strategy.
inline std::vector<std::pair<std::string, VariantPatch>> main_ablation_variants() {
    return {
        {"baseline-gap",
         [](TrainConfig& c) {
             c.pooling = PoolKind::gap;
             c.vwl = false;
         }},
        {"hp",
         [](TrainConfig& c) {
             c.pooling = PoolKind::hp;
             c.vwl = false;
         }},
        {"hp+vwl-l",
         [](TrainConfig& c) {
             c.pooling = PoolKind::hp;
             c.vwl = true;
             c.strategy = Strategy::learning;
         }},
        {"hp+vwl-m",
         [](TrainConfig& c) {
             c.pooling = PoolKind::hp;
             c.vwl = true;
             c.strategy = Strategy::memory_bank;
         }},
    };
}

struct PoolVariantPatch {
    PoolKind kind;
    void operator()(TrainConfig& c) const {
        c.pooling = kind;
        c.vwl = false;
    }
};

inline std::vector<std::pair<std::string, VariantPatch>> pooling_ablation_variants() {
    std::vector<std::pair<std::string, VariantPatch>> out;
    for (PoolKind kind : {PoolKind::gap, PoolKind::gmp, PoolKind::lse, PoolKind::gwrp, PoolKind::hp})
        out.emplace_back(pool_kind_name(kind), PoolVariantPatch{kind});
    return out;
}

// Trains and evaluates every (variant, seed) pair on freshly generated
// data; a variant that throws is recorded as failed and the grid continues.
// When `keep_models` is set the trained models are returned alongside the
// rows keyed "variant/seed".
template <class T>
std::vector<AblationRow> run_ablation(
    const TrainConfig& base, const DataConfig& dcfg, int n_train, int n_eval,
    const std::vector<uint64_t>& seeds,
    const std::vector<std::pair<std::string, VariantPatch>>& variants,
    std::ostream* progress = nullptr,
    std::map<std::string, TrainedModel<T>>* keep_models = nullptr) {
    std::vector<AblationRow> rows;
    DataConfig dc = dcfg;
    dc.n = n_train + n_eval;
    for (uint64_t seed : seeds) {
        Dataset<T> full = generate_dataset<T>(dc, seed);
        auto [train_set, eval_set] = split_at(full, n_train);
        for (const auto& [name, patch] : variants) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            patch(cfg);
            AblationRow row;
            row.variant = name;
            row.seed = seed;
            row.config_hash = cfg.hash();
            const auto t0 = std::chrono::steady_clock::now();
            try {
                TrainedModel<T> model = train(cfg, train_set);
                ThetaSweepResult sweep = evaluate_model(model, eval_set, cfg.theta_grid);
                row.miou = sweep.best_miou;
                row.best_theta = sweep.best_theta;
                if (keep_models)
                    (*keep_models)[name + "/" + std::to_string(seed)] = std::move(model);
            } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
            }
            row.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (progress) {
                (*progress) << "[ablate] " << name << " seed=" << seed;
                if (row.failed)
                    (*progress) << " FAILED: " << row.error;
                else
                    (*progress) << " miou=" << row.miou << " theta=" << row.best_theta << " ("
                                << static_cast<long long>(row.wall_seconds) << "s)";
                (*progress) << std::endl;
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

// ---- per-word crop tiles (codebook evidence export) ----

// For each word, the `tiles` highest-probability assigned pixels across the
// dataset are cropped around their receptive-field centers and pasted into
// a tile grid image. Words never assigned are listed in words_index.txt
// with count 0 and get no image.
template <class T>
std::vector<std::string> export_word_tiles(TrainedModel<T>& model, const Dataset<T>& ds,
                                           const std::string& out_dir, int tiles = 9,
                                           int patch = 17) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const int k = model.cfg.k;
    const int stride = model.cfg.backbone.total_stride();
    const int fh = model.cfg.backbone.feature_size();
    const int H = ds.image_size;
    const int n = static_cast<int>(ds.samples.size());

    struct Hit {
        double p;
        int sample, py, px;
    };
    std::vector<std::vector<Hit>> hits(static_cast<size_t>(k));
    std::vector<WordAssignment<T>> was(static_cast<size_t>(n));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int i = 0; i < n; ++i) {
        Tensor<T> F = infer_features(model.backbone, ds.samples[static_cast<size_t>(i)].image);
        was[static_cast<size_t>(i)] = encode(F, model.codebook, model.cfg.tau);
    }
    for (int i = 0; i < n; ++i) {
        const WordAssignment<T>& wa = was[static_cast<size_t>(i)];
        for (int p = 0; p < wa.hw; ++p) {
            const int j = wa.Y[static_cast<size_t>(p)];
            hits[static_cast<size_t>(j)].push_back(
                {static_cast<double>(wa.P(p, j)), i, p / fh, p % fh});
        }
    }

    const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(tiles))));
    const int cell = patch + 1;
    std::vector<std::string> paths;
    std::ofstream index(fs::path(out_dir) / "words_index.txt");
    index << "word count file\n";
    for (int j = 0; j < k; ++j) {
        auto& h = hits[static_cast<size_t>(j)];
        std::stable_sort(h.begin(), h.end(), [](const Hit& a, const Hit& b) {
            if (a.p != b.p) return a.p > b.p;
            if (a.sample != b.sample) return a.sample < b.sample;
            return a.py * 1000 + a.px < b.py * 1000 + b.px;
        });
        char name[32];
        std::snprintf(name, sizeof name, "word_%03d.ppm", j);
        index << j << " " << h.size() << " " << (h.empty() ? "-" : name) << "\n";
        if (h.empty()) continue;
        const int m = std::min<int>(tiles, static_cast<int>(h.size()));
        Tensor<T> sheet({grid * cell + 1, grid * cell + 1, 3});
        sheet.fill(T(1));
        for (int t = 0; t < m; ++t) {
            const Hit& hit = h[static_cast<size_t>(t)];
            const auto& img = ds.samples[static_cast<size_t>(hit.sample)].image;
            const int cy = hit.py * stride + stride / 2;
            const int cx = hit.px * stride + stride / 2;
            const int oy = (t / grid) * cell + 1, ox = (t % grid) * cell + 1;
            for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx) {
                    int sy = std::min(std::max(cy - patch / 2 + dy, 0), H - 1);
                    int sx = std::min(std::max(cx - patch / 2 + dx, 0), H - 1);
                    for (int c = 0; c < 3; ++c) sheet(oy + dy, ox + dx, c) = img(sy, sx, c);
                }
        }
        std::string path = (fs::path(out_dir) / name).string();
        write_ppm(path, sheet);
        paths.push_back(path);
    }
    return paths;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw ParamError("median of empty set");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double median_miou(const std::vector<AblationRow>& rows, const std::string& variant) {
    std::vector<double> v;
    for (const auto& r : rows)
        if (r.variant == variant && !r.failed) v.push_back(r.miou);
    return median(std::move(v));
}

// Deterministic machine-readable table. Wall-clock time is intentionally
// left to the human-readable summary so identical runs emit identical
// bytes here.
inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "variant,seed,config_hash,miou,best_theta,status\n";
    char line[256];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%s,%llu,%s,%.9g,%.9g,%s\n", r.variant.c_str(),
                      static_cast<unsigned long long>(r.seed), hex64(r.config_hash).c_str(),
                      r.miou, r.best_theta, r.failed ? "failed" : "ok");
        out << line;
    }
}

inline void write_ablation_summary(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "ablation summary\n================\n\n";
    std::vector<std::string> names;
    for (const auto& r : rows)
        if (std::find(names.begin(), names.end(), r.variant) == names.end())
            names.push_back(r.variant);
    for (const auto& name : names) {
        out << name << "\n";
        std::vector<double> mious;
        double wall = 0.0;
        for (const auto& r : rows) {
            if (r.variant != name) continue;
            if (r.failed) {
                out << "  seed " << r.seed << ": FAILED (" << r.error << ")\n";
                continue;
            }
            char line[160];
            std::snprintf(line, sizeof line, "  seed %llu: miou %.4f  best_theta %.2f  wall %.1fs\n",
                          static_cast<unsigned long long>(r.seed), r.miou, r.best_theta,
                          r.wall_seconds);
            out << line;
            mious.push_back(r.miou);
            wall += r.wall_seconds;
        }
        if (!mious.empty()) {
            char line[120];
            std::snprintf(line, sizeof line, "  median miou %.4f over %zu seeds, total wall %.1fs\n",
                          median(mious), mious.size(), wall);
            out << line;
        }
        out << "\n";
    }
}

}  // namespace vwl
