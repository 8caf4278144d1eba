#pragma once

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "vwl/eval.hpp"
#include "vwl/synth_data.hpp"
#include "vwl/training.hpp"

namespace vwl {

// CLI exit codes by diagnostic category.
enum ExitCode {
    kExitOk = 0,
    kExitUsage = 1,
    kExitConfig = 2,
    kExitContract = 3,
    kExitFormat = 4,
    kExitTraining = 5,
    kExitOther = 6,
};

namespace cli_detail {

using Scalar = float;  // training/inference scalar for the command line

inline std::string make_run_dir(const std::string& out_root) {
    namespace fs = std::filesystem;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "run-%Y%m%d-%H%M%S", &tm);
    fs::path dir = fs::path(out_root) / stamp;
    // disambiguate if two runs land in the same second
    int suffix = 1;
    fs::path candidate = dir;
    while (fs::exists(candidate)) candidate = dir.string() + "-" + std::to_string(suffix++);
    fs::create_directories(candidate);
    return candidate.string();
}

struct TrainOptions {
    std::string config_file;
    std::vector<std::string> overrides;  // key=value pairs
    TrainConfig base;

    // dedicated flags write through these; CLI11 tracks which were set
    std::string strategy = "learning", pooling = "hp", codebook_init = "random";
    int k = 32, epochs = 6, batch_size = 16;
    double gamma = 2.0, tau = 1.0, rho = 0.001, lr_backbone = 0.01, lr_heads = 0.1,
           momentum = 0.9, power = 0.9, theta_bg = 0.3;
    uint64_t seed = 0;
    bool no_vwl = false, no_decov = false, hflip = false;
    std::string split_sizes, theta_grid;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "key-value config file (see README reference)");
        cmd->add_option("--set", overrides, "override a single config key, key=value")
            ->type_name("KEY=VALUE");
        cmd->add_option("--strategy", strategy, "codebook strategy: learning|memory_bank");
        cmd->add_option("--pooling", pooling, "image-head pooling: gap|gmp|lse|gwrp|hp");
        cmd->add_flag("--no-vwl", no_vwl, "disable visual-word supervision");
        cmd->add_flag("--no-decov", no_decov, "drop the decov regularizer (learning strategy)");
        cmd->add_flag("--hflip", hflip, "random horizontal flip augmentation");
        cmd->add_option("--k", k, "number of visual words");
        cmd->add_option("--gamma", gamma, "hybrid pooling GAP weight");
        cmd->add_option("--tau", tau, "softmax temperature");
        cmd->add_option("--rho", rho, "memory-bank EMA momentum");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--batch-size", batch_size, "mini-batch size");
        cmd->add_option("--lr-backbone", lr_backbone, "base learning rate, backbone");
        cmd->add_option("--lr-heads", lr_heads, "base learning rate, heads and codebook");
        cmd->add_option("--momentum", momentum, "SGD momentum coefficient");
        cmd->add_option("--power", power, "polynomial decay power");
        cmd->add_option("--seed", seed, "training seed");
        cmd->add_option("--theta", theta_bg, "default background threshold");
        cmd->add_option("--split-sizes", split_sizes, "comma list of HP split sizes, e.g. 1,2,4");
        cmd->add_option("--theta-grid", theta_grid, "comma list of thresholds for grid search");
        cmd->add_option("--codebook-init", codebook_init, "codebook init: random|random_sample");
    }

    TrainConfig resolve(CLI::App* cmd) const {
        KeyValueConfig kv = base.to_kv();
        if (!config_file.empty()) {
            KeyValueConfig file_kv = KeyValueConfig::from_file(config_file);
            for (const auto& [key, val] : file_kv.items()) kv.set(key, val);
        }
        auto seen = [&](const std::string& flag) { return cmd->count(flag) > 0; };
        if (seen("--strategy")) kv.set("train.strategy", strategy);
        if (seen("--pooling")) kv.set("train.pooling", pooling);
        if (seen("--no-vwl")) kv.set_bool("train.vwl", !no_vwl);
        if (seen("--no-decov")) kv.set_bool("train.decov", !no_decov);
        if (seen("--hflip")) kv.set_bool("train.hflip", hflip);
        if (seen("--k")) kv.set_int("train.k", k);
        if (seen("--gamma")) kv.set_real("train.gamma", gamma);
        if (seen("--tau")) kv.set_real("train.tau", tau);
        if (seen("--rho")) kv.set_real("train.rho", rho);
        if (seen("--epochs")) kv.set_int("train.epochs", epochs);
        if (seen("--batch-size")) kv.set_int("train.batch_size", batch_size);
        if (seen("--lr-backbone")) kv.set_real("train.lr_backbone", lr_backbone);
        if (seen("--lr-heads")) kv.set_real("train.lr_heads", lr_heads);
        if (seen("--momentum")) kv.set_real("train.momentum", momentum);
        if (seen("--power")) kv.set_real("train.lr_power", power);
        if (seen("--seed")) kv.set_int("train.seed", static_cast<long long>(seed));
        if (seen("--theta")) kv.set_real("train.theta_bg", theta_bg);
        if (seen("--split-sizes")) kv.set("train.split_sizes", split_sizes);
        if (seen("--theta-grid")) kv.set("train.theta_grid", theta_grid);
        if (seen("--codebook-init")) kv.set("train.codebook_init", codebook_init);
        for (const std::string& pair : overrides) {
            auto eq = pair.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--set expects key=value, got: " + pair);
            kv.set(pair.substr(0, eq), pair.substr(eq + 1));
        }
        TrainConfig cfg = TrainConfig::from_kv(kv);
        cfg.validate();
        return cfg;
    }
};

struct DataOptions {
    int n_train = 2000, n_eval = 200, image_size = 64, classes = 5, min_shapes = 1, max_shapes = 3;
    double two_tone_prob = 0.7, size_min = 0.10, size_max = 0.20;
    std::string background = "mix";
    uint64_t seed = 0;

    void add_flags(CLI::App* cmd, bool with_seed = true) {
        cmd->add_option("--n-train", n_train, "training sample count");
        cmd->add_option("--n-eval", n_eval, "evaluation sample count");
        cmd->add_option("--image-size", image_size, "canvas size in pixels");
        cmd->add_option("--classes", classes, "number of foreground classes (2..8)");
        cmd->add_option("--min-shapes", min_shapes, "minimum shapes per image");
        cmd->add_option("--max-shapes", max_shapes, "maximum shapes per image");
        cmd->add_option("--background", background, "background family: flat|gradient|speckle|mix");
        cmd->add_option("--two-tone-prob", two_tone_prob, "probability of two-tone fill");
        cmd->add_option("--size-min", size_min, "minimum shape half-extent (normalized)");
        cmd->add_option("--size-max", size_max, "maximum shape half-extent (normalized)");
        if (with_seed) cmd->add_option("--data-seed", seed, "dataset generation seed");
    }

    DataConfig resolve(int total_stride) const {
        DataConfig dc;
        dc.n = n_train + n_eval;
        dc.image_size = image_size;
        dc.num_classes = classes;
        dc.min_shapes = min_shapes;
        dc.max_shapes = max_shapes;
        dc.background = background_from_string(background);
        dc.two_tone_prob = two_tone_prob;
        dc.size_min = size_min;
        dc.size_max = size_max;
        dc.total_stride = total_stride;
        dc.validate();
        return dc;
    }
};

template <class T>
TrainedModel<T> model_from_checkpoint(const std::string& path) {
    TrainState<T> st = load_checkpoint<T>(path);
    TrainedModel<T> m;
    m.cfg = st.cfg;
    m.config_hash = st.cfg.hash();
    m.backbone = std::move(st.backbone);
    m.heads = std::move(st.heads);
    m.codebook = std::move(st.codebook);
    return m;
}

inline std::vector<uint64_t> parse_seeds(const std::string& csv) {
    std::vector<uint64_t> out;
    std::istringstream is(csv);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) out.push_back(std::stoull(tok));
    if (out.empty()) throw ConfigError("empty seed list");
    return out;
}

inline void write_eval_outputs(const std::string& run_dir, const ThetaSweepResult& sweep,
                               const std::vector<std::string>& class_names, double word_acc,
                               bool have_word_acc, uint64_t config_hash) {
    namespace fs = std::filesystem;
    {
        std::ofstream csv(fs::path(run_dir) / "metrics.csv");
        csv << "theta,miou\n";
        char line[64];
        for (auto [theta, miou] : sweep.per_theta) {
            std::snprintf(line, sizeof line, "%.9g,%.9g\n", theta, miou);
            csv << line;
        }
    }
    {
        std::ofstream txt(fs::path(run_dir) / "summary.txt");
        txt << "evaluation summary\n==================\n";
        txt << "config_hash " << hex64(config_hash) << "\n";
        char line[128];
        std::snprintf(line, sizeof line, "best_theta %.4f\nbest_miou %.6f\n", sweep.best_theta,
                      sweep.best_miou);
        txt << line;
        txt << "per_class_iou:\n";
        for (size_t c = 0; c < sweep.best_report.per_class_iou.size(); ++c) {
            std::string name = c == 0 ? "background"
                               : (c - 1 < class_names.size() ? class_names[c - 1]
                                                             : std::to_string(c - 1));
            std::snprintf(line, sizeof line, "  %-12s %.6f\n", name.c_str(),
                          sweep.best_report.per_class_iou[c]);
            txt << line;
        }
        if (have_word_acc) {
            std::snprintf(line, sizeof line, "word_frequency_accuracy %.6f\n", word_acc);
            txt << line;
        }
    }
}

}  // namespace cli_detail

// Parses argv and runs one subcommand; never calls exit(). Returns a
// category-coded status suitable for a process exit code.
inline int run_cli(int argc, const char* const* argv) {
    using cli_detail::Scalar;
    namespace fs = std::filesystem;

    CLI::App app{"vwlcam: visual-word CAM training and evaluation on synthetic shape scenes"};
    app.require_subcommand(1);

    // ---- generate-data ----
    auto* gen = app.add_subcommand("generate-data", "generate a synthetic dataset directory");
    cli_detail::DataOptions gen_data;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen_data.add_flags(gen);

    // ---- train ----
    auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
    cli_detail::TrainOptions tr_opts;
    std::string tr_data, tr_out, tr_resume;
    tr->add_option("--data", tr_data, "dataset directory (a train split)")->required();
    tr->add_option("--out", tr_out, "output directory for checkpoints and logs")->required();
    tr->add_option("--resume", tr_resume, "resume from a checkpoint file");
    tr_opts.add_flags(tr);

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "evaluate CAM pseudo labels against ground truth");
    std::string ev_model, ev_data, ev_out, ev_probe, ev_grid;
    ev->add_option("--model", ev_model, "model checkpoint")->required();
    ev->add_option("--data", ev_data, "evaluation dataset directory")->required();
    ev->add_option("--out", ev_out, "output directory")->required();
    ev->add_option("--probe-data", ev_probe,
                   "train split used to fit the word probe for memory-bank models");
    ev->add_option("--theta-grid", ev_grid, "comma list of thresholds (default: model config)");

    // ---- ablate ----
    auto* ab = app.add_subcommand("ablate", "run the module or pooling ablation grid");
    cli_detail::TrainOptions ab_opts;
    cli_detail::DataOptions ab_data;
    std::string ab_out, ab_grid = "main", ab_seeds = "0,1,2";
    ab->add_option("--out", ab_out, "output directory")->required();
    ab->add_option("--grid", ab_grid, "grid to run: main|pooling");
    ab->add_option("--seeds", ab_seeds, "comma list of seeds");
    ab_data.add_flags(ab, /*with_seed=*/false);
    ab_opts.add_flags(ab);

    // ---- sweep ----
    auto* sw = app.add_subcommand("sweep", "sweep one hyperparameter across values");
    cli_detail::TrainOptions sw_opts;
    cli_detail::DataOptions sw_data;
    std::string sw_out, sw_param, sw_values, sw_seeds = "0";
    sw->add_option("--out", sw_out, "output directory")->required();
    sw->add_option("--param", sw_param, "one of: k, gamma, tau, rho, theta_bg")->required();
    sw->add_option("--values", sw_values, "comma list of values")->required();
    sw->add_option("--seeds", sw_seeds, "comma list of seeds");
    sw_data.add_flags(sw, /*with_seed=*/false);
    sw_opts.add_flags(sw);

    // ---- export-heatmaps ----
    auto* hm = app.add_subcommand("export-heatmaps", "write CAM heatmap blends for a dataset");
    std::string hm_model, hm_data, hm_out;
    int hm_limit = 16;
    double hm_theta = -1.0;
    hm->add_option("--model", hm_model, "model checkpoint")->required();
    hm->add_option("--data", hm_data, "dataset directory")->required();
    hm->add_option("--out", hm_out, "output directory")->required();
    hm->add_option("--limit", hm_limit, "number of samples to export");
    hm->add_option("--theta", hm_theta, "also export pseudo-label masks at this threshold");

    // ---- export-words ----
    auto* wd = app.add_subcommand("export-words", "write per-word assigned-pixel crop tiles");
    std::string wd_model, wd_data, wd_out;
    int wd_tiles = 9, wd_patch = 17;
    wd->add_option("--model", wd_model, "model checkpoint")->required();
    wd->add_option("--data", wd_data, "dataset directory")->required();
    wd->add_option("--out", wd_out, "output directory")->required();
    wd->add_option("--tiles", wd_tiles, "crops per word");
    wd->add_option("--patch", wd_patch, "crop side length in pixels");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            DataConfig dc = gen_data.resolve(BackboneConfig().total_stride());
            Dataset<Scalar> full = generate_dataset<Scalar>(dc, gen_data.seed);
            auto [train_set, eval_set] = split_at(full, gen_data.n_train);
            fs::create_directories(gen_out);
            dc.to_kv().to_file((fs::path(gen_out) / "data_config.txt").string());
            save_dataset(train_set, (fs::path(gen_out) / "train").string());
            save_dataset(eval_set, (fs::path(gen_out) / "eval").string());
            std::cout << "wrote " << train_set.samples.size() << " train / "
                      << eval_set.samples.size() << " eval samples under " << gen_out << "\n";
        } else if (tr->parsed()) {
            TrainConfig cfg = tr_opts.resolve(tr);
            cfg.dataset_path = tr_data;
            Dataset<Scalar> train_set = load_dataset<Scalar>(tr_data);
            cfg.backbone.image_size = train_set.image_size;
            cfg.validate();
            fs::create_directories(tr_out);
            cfg.to_kv().to_file((fs::path(tr_out) / "config.txt").string());
            TrainedModel<Scalar> model = train(cfg, train_set,
                                               (fs::path(tr_out) / "train_log.csv").string(),
                                               tr_out, tr_resume);
            std::cout << "trained " << strategy_name(cfg.strategy) << " model, config_hash "
                      << hex64(model.config_hash) << ", checkpoints under " << tr_out << "\n";
        } else if (ev->parsed()) {
            auto model = cli_detail::model_from_checkpoint<Scalar>(ev_model);
            Dataset<Scalar> eval_set = load_dataset<Scalar>(ev_data);
            std::vector<double> grid = model.cfg.theta_grid;
            if (!ev_grid.empty()) {
                KeyValueConfig kv;
                kv.set("g", ev_grid);
                grid = kv.get_real_list("g");
            }
            ThetaSweepResult sweep = evaluate_model(model, eval_set, grid);
            double word_acc = 0.0;
            bool have_acc = false;
            if (model.cfg.vwl) {
                if (!model.heads.W_w2i.empty()) {
                    word_acc = word_frequency_accuracy(model, eval_set);
                    have_acc = true;
                } else if (!ev_probe.empty()) {
                    Dataset<Scalar> probe_set = load_dataset<Scalar>(ev_probe);
                    word_acc = word_frequency_accuracy(model, eval_set, &probe_set);
                    have_acc = true;
                }
            }
            std::string run_dir = cli_detail::make_run_dir(ev_out);
            cli_detail::write_eval_outputs(run_dir, sweep, eval_set.class_names, word_acc, have_acc,
                                           model.config_hash);
            char line[128];
            std::snprintf(line, sizeof line, "best_theta %.4f best_miou %.6f", sweep.best_theta,
                          sweep.best_miou);
            std::cout << line << (have_acc ? " word_acc " + std::to_string(word_acc) : "")
                      << "\ntables under " << run_dir << "\n";
        } else if (ab->parsed()) {
            TrainConfig base = ab_opts.resolve(ab);
            DataConfig dc = ab_data.resolve(base.backbone.total_stride());
            base.backbone.image_size = dc.image_size;
            auto variants = ab_grid == "pooling" ? pooling_ablation_variants()
                                                 : main_ablation_variants();
            if (ab_grid != "pooling" && ab_grid != "main")
                throw ConfigError("unknown grid: " + ab_grid + " (expected main|pooling)");
            auto rows = run_ablation<Scalar>(base, dc, ab_data.n_train, ab_data.n_eval,
                                             cli_detail::parse_seeds(ab_seeds), variants,
                                             &std::cout);
            std::string run_dir = cli_detail::make_run_dir(ab_out);
            write_ablation_csv(rows, (fs::path(run_dir) / "ablation.csv").string());
            write_ablation_summary(rows, (fs::path(run_dir) / "ablation_summary.txt").string());
            std::cout << "tables under " << run_dir << "\n";
        } else if (sw->parsed()) {
            TrainConfig base = sw_opts.resolve(sw);
            DataConfig dc = sw_data.resolve(base.backbone.total_stride());
            base.backbone.image_size = dc.image_size;
            KeyValueConfig vk;
            vk.set("v", sw_values);
            std::vector<double> values = vk.get_real_list("v");
            std::vector<std::pair<std::string, VariantPatch>> variants;
            for (double v : values) {
                std::string name = sw_param + "=" + std::to_string(v);
                if (sw_param == "k")
                    variants.emplace_back(name, [v](TrainConfig& c) { c.k = static_cast<int>(v); });
                else if (sw_param == "gamma")
                    variants.emplace_back(name, [v](TrainConfig& c) { c.gamma = v; });
                else if (sw_param == "tau")
                    variants.emplace_back(name, [v](TrainConfig& c) { c.tau = v; });
                else if (sw_param == "rho")
                    variants.emplace_back(name, [v](TrainConfig& c) {
                        c.strategy = Strategy::memory_bank;
                        c.rho = v;
                    });
                else if (sw_param == "theta_bg")
                    variants.emplace_back(name, [v](TrainConfig& c) { c.theta_grid = {v}; });
                else
                    throw ConfigError("unknown sweep parameter: " + sw_param);
            }
            auto rows = run_ablation<Scalar>(base, dc, sw_data.n_train, sw_data.n_eval,
                                             cli_detail::parse_seeds(sw_seeds), variants,
                                             &std::cout);
            std::string run_dir = cli_detail::make_run_dir(sw_out);
            write_ablation_csv(rows, (fs::path(run_dir) / "sweep.csv").string());
            write_ablation_summary(rows, (fs::path(run_dir) / "sweep_summary.txt").string());
            std::cout << "tables under " << run_dir << "\n";
        } else if (hm->parsed()) {
            auto model = cli_detail::model_from_checkpoint<Scalar>(hm_model);
            Dataset<Scalar> ds = load_dataset<Scalar>(hm_data);
            fs::create_directories(hm_out);
            const int n = std::min<int>(hm_limit, static_cast<int>(ds.samples.size()));
            int written = 0;
            for (int i = 0; i < n; ++i) {
                const auto& s = ds.samples[static_cast<size_t>(i)];
                std::vector<int> present;
                for (size_t c = 0; c < s.y_img.size(); ++c)
                    if (s.y_img[c]) present.push_back(static_cast<int>(c));
                if (present.empty()) continue;
                Tensor<Scalar> F = infer_features(model.backbone, s.image);
                auto cams = compute_cams(F, model.heads.W_img, model.heads.L);
                char base[32];
                std::snprintf(base, sizeof base, "sample_%04d", i);
                auto paths = export_heatmaps(s.image, cams, present, ds.class_names, hm_out, base);
                written += static_cast<int>(paths.size());
                if (hm_theta > 0.0) {
                    auto up = upsample_cams(cams, ds.image_size, ds.image_size);
                    auto mask = pseudo_labels(up, present, hm_theta);
                    write_pgm((fs::path(hm_out) / (std::string(base) + "_pseudo.pgm")).string(),
                              mask, ds.image_size, ds.image_size);
                }
            }
            std::cout << "wrote " << written << " heatmaps under " << hm_out << "\n";
        } else if (wd->parsed()) {
            auto model = cli_detail::model_from_checkpoint<Scalar>(wd_model);
            Dataset<Scalar> ds = load_dataset<Scalar>(wd_data);
            auto paths = export_word_tiles(model, ds, wd_out, wd_tiles, wd_patch);
            std::cout << "wrote " << paths.size() << " word sheets under " << wd_out << "\n";
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << e.what() << "\n";
        return kExitContract;
    } catch (const ParamError& e) {
        std::cerr << e.what() << "\n";
        return kExitContract;
    } catch (const FormatError& e) {
        std::cerr << e.what() << "\n";
        return kExitFormat;
    } catch (const TrainError& e) {
        std::cerr << e.what() << "\n";
        return kExitTraining;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitOther;
    }
}

}  // namespace vwl
