#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "test_util.hpp"
#include "vwl/eval.hpp"

using namespace vwl;

TEST_CASE("perfect prediction scores miou 1", "[eval]") {
    std::vector<std::vector<uint8_t>> masks = {{0, 1, 2, 0}, {2, 2, 0, 1}};
    auto rep = miou_report(masks, masks, 2);
    REQUIRE(rep.miou == Catch::Approx(1.0));
    for (double v : rep.per_class_iou) REQUIRE(v == Catch::Approx(1.0));
}

TEST_CASE("all-background prediction on a 2x2 fixture", "[eval]") {
    // gt: one foreground pixel of class 1, three background
    std::vector<std::vector<uint8_t>> gt = {{1, 0, 0, 0}};
    std::vector<std::vector<uint8_t>> pred = {{0, 0, 0, 0}};
    auto rep = miou_report(pred, gt, 1);
    REQUIRE(rep.per_class_iou[1] == Catch::Approx(0.0));
    REQUIRE(rep.per_class_iou[0] == Catch::Approx(3.0 / 4.0));
    REQUIRE(rep.miou == Catch::Approx(0.5 * (0.0 + 0.75)));
}

TEST_CASE("classes absent from both sides score 1", "[eval]") {
    std::vector<std::vector<uint8_t>> gt = {{0, 1, 1, 0}};
    std::vector<std::vector<uint8_t>> pred = {{0, 1, 0, 0}};
    auto rep = miou_report(pred, gt, 3);  // classes 2 and 3 appear nowhere
    REQUIRE(rep.per_class_iou[2] == Catch::Approx(1.0));
    REQUIRE(rep.per_class_iou[3] == Catch::Approx(1.0));
}

TEST_CASE("miou matches the counting oracle on random masks", "[eval]") {
    Rng rng(51);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 3, px = 25, L = 4;
        std::vector<std::vector<uint8_t>> pred(n), gt(n);
        std::vector<std::vector<int>> predo(n), gto(n);
        for (int s = 0; s < n; ++s) {
            pred[static_cast<size_t>(s)].resize(px);
            gt[static_cast<size_t>(s)].resize(px);
            predo[static_cast<size_t>(s)].resize(px);
            gto[static_cast<size_t>(s)].resize(px);
            for (int i = 0; i < px; ++i) {
                int p = rng.uniform_int(L + 1), g = rng.uniform_int(L + 1);
                pred[static_cast<size_t>(s)][static_cast<size_t>(i)] = static_cast<uint8_t>(p);
                gt[static_cast<size_t>(s)][static_cast<size_t>(i)] = static_cast<uint8_t>(g);
                predo[static_cast<size_t>(s)][static_cast<size_t>(i)] = p;
                gto[static_cast<size_t>(s)][static_cast<size_t>(i)] = g;
            }
        }
        auto rep = miou_report(pred, gt, L);
        REQUIRE(rep.miou == Catch::Approx(oracle::miou(predo, gto, L)).margin(1e-12));
    }
}

TEST_CASE("miou is invariant to sample order", "[eval][property]") {
    Rng rng(52);
    std::vector<std::vector<uint8_t>> pred(5), gt(5);
    for (int s = 0; s < 5; ++s) {
        pred[static_cast<size_t>(s)].resize(16);
        gt[static_cast<size_t>(s)].resize(16);
        for (int i = 0; i < 16; ++i) {
            pred[static_cast<size_t>(s)][static_cast<size_t>(i)] = static_cast<uint8_t>(rng.uniform_int(3));
            gt[static_cast<size_t>(s)][static_cast<size_t>(i)] = static_cast<uint8_t>(rng.uniform_int(3));
        }
    }
    auto a = miou_report(pred, gt, 2);
    std::reverse(pred.begin(), pred.end());
    std::reverse(gt.begin(), gt.end());
    auto b = miou_report(pred, gt, 2);
    REQUIRE(a.miou == b.miou);
    REQUIRE(a.confusion == b.confusion);
}

TEST_CASE("resolution mismatch is a shape error", "[eval]") {
    std::vector<std::vector<uint8_t>> pred = {{0, 0}};
    std::vector<std::vector<uint8_t>> gt = {{0, 0, 0}};
    REQUIRE_THROWS_AS(miou_report(pred, gt, 1), ShapeError);
}

TEST_CASE("theta grid search is deterministic with ties to the smallest theta", "[eval]") {
    // build a trivial model whose CAMs are constant: every theta <= 1 gives
    // the same miou, so the sweep must return the smallest grid point
    DataConfig dc;
    dc.n = 4;
    dc.image_size = 32;
    dc.num_classes = 2;
    auto ds = generate_dataset<float>(dc, 3);

    TrainConfig cfg;
    cfg.backbone.image_size = 32;
    cfg.backbone.widths = {8, 8, 8, 8};
    cfg.backbone.strides = {1, 2, 2, 1};
    cfg.k = 4;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    TrainState<float> st = init_train_state(cfg, &ds);
    attach_label_space(st, 2);
    TrainedModel<float> model;
    model.cfg = cfg;
    model.backbone = st.backbone;
    model.heads = st.heads;
    model.codebook = st.codebook;
    std::fill(model.heads.W_img.begin(), model.heads.W_img.end(), 0.0f);

    // zero weights -> all-zero CAMs -> all-background predictions at any theta
    auto sweep = evaluate_model(model, ds, {0.7, 0.3, 0.5});
    REQUIRE(sweep.best_theta == Catch::Approx(0.3));
    REQUIRE(sweep.per_theta.size() == 3);
    REQUIRE(sweep.per_theta.front().first == Catch::Approx(0.3));  // sorted ascending
    for (auto [theta, miou] : sweep.per_theta) REQUIRE(miou == Catch::Approx(sweep.best_miou));
}

TEST_CASE("word probe reaches perfect accuracy on separable frequencies", "[eval]") {
    // toy: class c present iff frequency mass sits on word c
    const int k = 4, L = 2, n = 40;
    Rng rng(53);
    std::vector<std::vector<double>> freqs;
    std::vector<std::vector<uint8_t>> labels;
    for (int i = 0; i < n; ++i) {
        std::vector<double> f(k, 0.05);
        std::vector<uint8_t> y(L, 0);
        for (int c = 0; c < L; ++c) {
            if (rng.uniform() < 0.5) {
                y[static_cast<size_t>(c)] = 1;
                f[static_cast<size_t>(c)] += 0.4;
            }
        }
        double s = 0;
        for (double v : f) s += v;
        for (double& v : f) v /= s;
        freqs.push_back(f);
        labels.push_back(y);
    }
    auto probe = fit_word_probe(freqs, labels, k, L);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        auto p = head_forward(probe.W, freqs[static_cast<size_t>(i)], k, L);
        for (int c = 0; c < L; ++c) {
            p[static_cast<size_t>(c)] += probe.bias[static_cast<size_t>(c)];
            bool pred = sigmoid(p[static_cast<size_t>(c)]) >= 0.5;
            correct += pred == (labels[static_cast<size_t>(i)][static_cast<size_t>(c)] != 0);
        }
    }
    REQUIRE(correct == n * L);
}

TEST_CASE("label-shuffled probe collapses to the class-prior baseline", "[eval]") {
    // frequencies carry no signal: accuracy ~ per-class majority fraction
    const int k = 6, L = 3, n = 300;
    Rng rng(54);
    std::vector<std::vector<double>> freqs;
    std::vector<std::vector<uint8_t>> labels;
    std::vector<int> pos(L, 0);
    for (int i = 0; i < n; ++i) {
        std::vector<double> f(k);
        double s = 0;
        for (auto& v : f) {
            v = rng.uniform(0.0, 1.0);
            s += v;
        }
        for (auto& v : f) v /= s;
        std::vector<uint8_t> y(L);
        for (int c = 0; c < L; ++c) {
            y[static_cast<size_t>(c)] = rng.uniform() < 0.3 ? 1 : 0;
            pos[static_cast<size_t>(c)] += y[static_cast<size_t>(c)];
        }
        freqs.push_back(f);
        labels.push_back(y);
    }
    auto probe = fit_word_probe(freqs, labels, k, L);
    double correct = 0;
    for (int i = 0; i < n; ++i) {
        auto p = head_forward(probe.W, freqs[static_cast<size_t>(i)], k, L);
        for (int c = 0; c < L; ++c) {
            p[static_cast<size_t>(c)] += probe.bias[static_cast<size_t>(c)];
            bool pred = sigmoid(p[static_cast<size_t>(c)]) >= 0.5;
            correct += pred == (labels[static_cast<size_t>(i)][static_cast<size_t>(c)] != 0);
        }
    }
    const double acc = correct / (n * L);
    double prior = 0;
    for (int c = 0; c < L; ++c) {
        const double p = static_cast<double>(pos[static_cast<size_t>(c)]) / n;
        prior += std::max(p, 1 - p) / L;
    }
    REQUIRE(std::fabs(acc - prior) < 0.08);
}

TEST_CASE("ablation grid emits one row per variant and survives failures", "[eval]") {
    TrainConfig base;
    base.backbone.image_size = 32;
    base.backbone.widths = {8, 8, 8, 8};
    base.backbone.strides = {1, 2, 2, 1};
    base.k = 4;
    base.epochs = 1;
    base.batch_size = 8;
    base.theta_grid = {0.3, 0.5};

    DataConfig dc;
    dc.image_size = 32;
    dc.num_classes = 2;

    std::vector<std::pair<std::string, VariantPatch>> variants = {
        {"ok", [](TrainConfig&) {}},
        {"broken", [](TrainConfig& c) { c.k = -1; }},
    };
    auto rows = run_ablation<float>(base, dc, 8, 4, {0}, variants);
    REQUIRE(rows.size() == 2);
    REQUIRE_FALSE(rows[0].failed);
    REQUIRE(rows[1].failed);
    REQUIRE(!rows[1].error.empty());

    // rerunning reproduces the metric exactly
    auto rows2 = run_ablation<float>(base, dc, 8, 4, {0}, variants);
    REQUIRE(rows2[0].miou == rows[0].miou);
    REQUIRE(rows2[0].config_hash == rows[0].config_hash);

    // table writers
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "vwl_ablate_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_ablation_csv(rows, (dir / "t.csv").string());
    write_ablation_summary(rows, (dir / "t.txt").string());
    REQUIRE(fs::exists(dir / "t.csv"));
    std::ifstream in(dir / "t.csv");
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "variant,seed,config_hash,miou,best_theta,status");
    // csv bytes identical across reruns
    write_ablation_csv(rows2, (dir / "t2.csv").string());
    std::ifstream a(dir / "t.csv"), b(dir / "t2.csv");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    REQUIRE(sa.str() == sb.str());
    fs::remove_all(dir);
}

TEST_CASE("median helper", "[eval]") {
    REQUIRE(median({3.0, 1.0, 2.0}) == Catch::Approx(2.0));
    REQUIRE(median({4.0, 1.0}) == Catch::Approx(2.5));
    REQUIRE_THROWS_AS(median({}), ParamError);
}

TEST_CASE("word tile export writes one sheet per represented word", "[eval]") {
    DataConfig dc;
    dc.n = 6;
    dc.image_size = 32;
    dc.num_classes = 3;
    auto ds = generate_dataset<float>(dc, 9);
    TrainConfig cfg;
    cfg.backbone.image_size = 32;
    cfg.backbone.widths = {8, 8, 8, 8};
    cfg.backbone.strides = {1, 2, 2, 1};
    cfg.k = 4;
    cfg.epochs = 1;
    cfg.batch_size = 6;
    auto model = train(cfg, ds);

    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "vwl_words_test";
    fs::remove_all(dir);
    auto paths = export_word_tiles(model, ds, dir.string());
    REQUIRE(fs::exists(dir / "words_index.txt"));
    REQUIRE(!paths.empty());
    for (const auto& p : paths) {
        auto img = read_ppm<float>(p);
        REQUIRE(img.dim(0) > 0);
    }
    fs::remove_all(dir);
}
