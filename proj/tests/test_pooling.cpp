#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"
#include "vwl/pooling.hpp"

using namespace vwl;
using testutil::random_tensor;
using testutil::to_vol;

TEST_CASE("gap basics", "[pooling]") {
    Tensor<double> f({2, 2, 1});
    f(0, 0, 0) = 1;
    f(0, 1, 0) = 2;
    f(1, 0, 0) = 3;
    f(1, 1, 0) = 4;
    REQUIRE(gap(f)[0] == Catch::Approx(2.5));

    Tensor<double> c({4, 4, 3});
    c.fill(0.7);
    for (double v : gap(c)) REQUIRE(v == Catch::Approx(0.7));
}

TEST_CASE("gap is linear", "[pooling]") {
    Rng rng(1);
    auto f = random_tensor<double>(rng, {4, 8, 3});
    auto g = random_tensor<double>(rng, {4, 8, 3});
    const double a = 1.7, b = -0.4;
    Tensor<double> mix({4, 8, 3});
    for (long long i = 0; i < mix.size(); ++i) mix.v[static_cast<size_t>(i)] = a * f.v[static_cast<size_t>(i)] + b * g.v[static_cast<size_t>(i)];
    auto gm = gap(mix);
    auto gf = gap(f);
    auto gg = gap(g);
    for (size_t c = 0; c < gm.size(); ++c)
        REQUIRE(gm[c] == Catch::Approx(a * gf[c] + b * gg[c]).margin(1e-12));
}

TEST_CASE("local max pooling against a nested-loop oracle", "[pooling]") {
    Rng rng(2);
    auto f = random_tensor<double>(rng, {8, 8, 3});
    auto vol = to_vol(f);

    SECTION("r=1 is the global max") {
        auto m = local_max_pool(f, 1);
        auto o = oracle::local_max(vol, 1);
        for (int c = 0; c < 3; ++c) REQUIRE(m(0, 0, c) == o[0][0][static_cast<size_t>(c)]);
    }
    SECTION("r=h=w is the identity") {
        auto m = local_max_pool(f, 8);
        REQUIRE(m.v == f.v);
    }
    SECTION("r=2 matches exactly") {
        auto m = local_max_pool(f, 2);
        auto o = oracle::local_max(vol, 2);
        for (int by = 0; by < 2; ++by)
            for (int bx = 0; bx < 2; ++bx)
                for (int c = 0; c < 3; ++c)
                    REQUIRE(m(by, bx, c) == o[static_cast<size_t>(by)][static_cast<size_t>(bx)][static_cast<size_t>(c)]);
    }
    SECTION("non-divisible split size is a shape error") {
        REQUIRE_THROWS_WITH(local_max_pool(f, 3), Catch::Matchers::ContainsSubstring("3") &&
                                                      Catch::Matchers::ContainsSubstring("8"));
    }
}

TEST_CASE("branch pooling matches the two-stage oracle", "[pooling]") {
    Rng rng(3);
    auto f = random_tensor<double>(rng, {8, 8, 2});
    auto o = oracle::branch(to_vol(f), 4);
    auto b = branch_pool(f, 4);
    for (size_t c = 0; c < b.size(); ++c) REQUIRE(b[c] == Catch::Approx(o[c]).margin(1e-6));

    // r=1 equals GMP
    auto b1 = branch_pool(f, 1);
    auto m = local_max_pool(f, 1);
    for (int c = 0; c < 2; ++c) REQUIRE(b1[static_cast<size_t>(c)] == m(0, 0, c));

    // constants are fixed points
    Tensor<double> cst({8, 8, 2});
    cst.fill(-1.25);
    for (int r : {1, 2, 4, 8})
        for (double v : branch_pool(cst, r)) REQUIRE(v == Catch::Approx(-1.25));
}

TEST_CASE("hybrid pooling composes branches and gap", "[pooling]") {
    Rng rng(4);
    auto f = random_tensor<double>(rng, {8, 8, 3});
    PoolConfig cfg;

    SECTION("matches oracle") {
        auto o = oracle::hybrid(to_vol(f), cfg.split_sizes, cfg.gamma);
        auto h = hybrid_pool(f, cfg);
        for (size_t c = 0; c < h.size(); ++c) REQUIRE(h[c] == Catch::Approx(o[c]).margin(1e-9));
    }
    SECTION("constant maps are fixed points") {
        Tensor<double> cst({8, 8, 3});
        cst.fill(0.3);
        for (double v : hybrid_pool(cst, cfg)) REQUIRE(v == Catch::Approx(0.3));
    }
    SECTION("gamma limits") {
        PoolConfig big = cfg;
        big.gamma = 1e6;
        auto h = hybrid_pool(f, big);
        auto g = gap(f);
        for (size_t c = 0; c < h.size(); ++c) REQUIRE(std::fabs(h[c] - g[c]) < 1e-3);

        PoolConfig zero = cfg;
        zero.gamma = 0.0;
        auto hz = hybrid_pool(f, zero);
        std::vector<double> mean_branches(3, 0.0);
        for (int r : cfg.split_sizes) {
            auto b = branch_pool(f, r);
            for (size_t c = 0; c < b.size(); ++c) mean_branches[c] += b[c] / 3.0;
        }
        for (size_t c = 0; c < hz.size(); ++c)
            REQUIRE(hz[c] == Catch::Approx(mean_branches[c]).margin(1e-9));
    }
    SECTION("config validation") {
        PoolConfig bad;
        bad.split_sizes = {2, 4};  // missing 1
        REQUIRE_THROWS_AS(hybrid_pool(f, bad), ConfigError);
        PoolConfig nodiv;
        nodiv.split_sizes = {1, 3};
        REQUIRE_THROWS_AS(hybrid_pool(f, nodiv), ShapeError);
        PoolConfig neg;
        neg.gamma = -1;
        REQUIRE_THROWS_AS(hybrid_pool(f, neg), ConfigError);
    }
}

TEST_CASE("gwrp and lse match their oracles and limits", "[pooling]") {
    Rng rng(5);
    auto f = random_tensor<double>(rng, {4, 4, 1});
    auto vol = to_vol(f);

    auto gw = gwrp(f, 0.9);
    auto gwo = oracle::gwrp(vol, 0.9);
    REQUIRE(gw[0] == Catch::Approx(gwo[0]).margin(1e-6));

    auto ls = lse(f, 5.0);
    auto lso = oracle::lse(vol, 5.0);
    REQUIRE(ls[0] == Catch::Approx(lso[0]).margin(1e-6));

    // limits: gwrp(decay -> 1) -> gap, lse(s -> inf) -> gmp
    auto g = gap(f);
    REQUIRE(std::fabs(gwrp(f, 0.999)[0] - g[0]) < 1e-2);
    auto m = branch_pool(f, 1);
    REQUIRE(std::fabs(lse(f, 1e3)[0] - m[0]) < 1e-2);

    // constants
    Tensor<double> cst({4, 4, 2});
    cst.fill(0.125);
    for (double v : gwrp(cst, 0.9)) REQUIRE(v == Catch::Approx(0.125));
    for (double v : lse(cst, 5.0)) REQUIRE(v == Catch::Approx(0.125).margin(1e-12));

    REQUIRE_THROWS_AS(gwrp(f, 0.0), ParamError);
    REQUIRE_THROWS_AS(gwrp(f, 1.0), ParamError);
    REQUIRE_THROWS_AS(lse(f, 0.0), ParamError);
}

TEST_CASE("order sandwich: branch outputs sit between gap and global max", "[pooling][property]") {
    Rng rng(6);
    for (int trial = 0; trial < 25; ++trial) {
        auto f = random_tensor<double>(rng, {8, 8, 4}, -2.0, 2.0);
        auto g = gap(f);
        auto top = branch_pool(f, 1);
        PoolConfig cfg;
        auto hp = hybrid_pool(f, cfg);
        std::vector<std::vector<double>> branches;
        for (int r : cfg.split_sizes) branches.push_back(branch_pool(f, r));
        for (int c = 0; c < 4; ++c) {
            double lo = g[static_cast<size_t>(c)], hi = top[static_cast<size_t>(c)];
            for (const auto& b : branches) {
                REQUIRE(b[static_cast<size_t>(c)] >= lo - 1e-12);
                REQUIRE(b[static_cast<size_t>(c)] <= hi + 1e-12);
            }
            // hp is a convex combination of branches and gap
            double mn = lo, mx = hi;
            for (const auto& b : branches) {
                mn = std::min(mn, b[static_cast<size_t>(c)]);
                mx = std::max(mx, b[static_cast<size_t>(c)]);
            }
            REQUIRE(hp[static_cast<size_t>(c)] >= mn - 1e-12);
            REQUIRE(hp[static_cast<size_t>(c)] <= mx + 1e-12);
        }
    }
}

TEST_CASE("translation and positive scaling behave as expected", "[pooling][property]") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        auto f = random_tensor<double>(rng, {4, 8, 2});
        const double shift = rng.uniform(-3, 3);
        const double scale = rng.uniform(0.1, 4.0);
        Tensor<double> fs(f.dims), fm(f.dims);
        for (long long i = 0; i < f.size(); ++i) {
            fs.v[static_cast<size_t>(i)] = f.v[static_cast<size_t>(i)] + shift;
            fm.v[static_cast<size_t>(i)] = f.v[static_cast<size_t>(i)] * scale;
        }
        PoolConfig cfg{{1, 2, 4}, 2.0};
        auto check_shift = [&](auto&& op) {
            auto a = op(f);
            auto b = op(fs);
            for (size_t c = 0; c < a.size(); ++c) REQUIRE(b[c] == Catch::Approx(a[c] + shift).margin(1e-9));
        };
        check_shift([&](const Tensor<double>& t) { return gap(t); });
        check_shift([&](const Tensor<double>& t) { return branch_pool(t, 2); });
        check_shift([&](const Tensor<double>& t) { return hybrid_pool(t, cfg); });
        check_shift([&](const Tensor<double>& t) { return gwrp(t, 0.95); });
        check_shift([&](const Tensor<double>& t) { return lse(t, 4.0); });

        auto check_scale = [&](auto&& op) {
            auto a = op(f);
            auto b = op(fm);
            for (size_t c = 0; c < a.size(); ++c) REQUIRE(b[c] == Catch::Approx(a[c] * scale).margin(1e-9));
        };
        check_scale([&](const Tensor<double>& t) { return gap(t); });
        check_scale([&](const Tensor<double>& t) { return branch_pool(t, 1); });
        check_scale([&](const Tensor<double>& t) { return branch_pool(t, 4); });
        check_scale([&](const Tensor<double>& t) { return hybrid_pool(t, cfg); });
        check_scale([&](const Tensor<double>& t) { return gwrp(t, 0.95); });
        // lse is deliberately excluded: it is not positively homogeneous
    }
}

TEST_CASE("pooling gradients agree with finite differences", "[pooling][grad]") {
    Rng rng(8);
    PoolConfig cfg{{1, 2, 4}, 2.0};
    for (int trial = 0; trial < 20; ++trial) {
        auto f = random_tensor<double>(rng, {4, 4, 2}, -1.0, 1.0);
        auto w = random_tensor<double>(rng, {2});  // random readout weights

        auto scalar_of = [&](auto&& pool_fn) {
            return [&, pool_fn]() {
                auto p = pool_fn(f);
                double s = 0;
                for (size_t c = 0; c < p.size(); ++c) s += p[c] * w.v[c];
                return s;
            };
        };

        struct Case {
            std::function<std::vector<double>(const Tensor<double>&)> fwd;
            std::function<void(const Tensor<double>&, const std::vector<double>&, Tensor<double>&)> bwd;
        };
        std::vector<Case> cases = {
            {[&](const Tensor<double>& t) { return hybrid_pool(t, cfg); },
             [&](const Tensor<double>& t, const std::vector<double>& df, Tensor<double>& dF) {
                 hybrid_pool_backward(t, cfg, df, dF);
             }},
            {[&](const Tensor<double>& t) { return gwrp(t, 0.9); },
             [&](const Tensor<double>& t, const std::vector<double>& df, Tensor<double>& dF) {
                 gwrp_backward(t, 0.9, df, dF);
             }},
            {[&](const Tensor<double>& t) { return lse(t, 3.0); },
             [&](const Tensor<double>& t, const std::vector<double>& df, Tensor<double>& dF) {
                 lse_backward(t, 3.0, df, dF);
             }},
        };

        for (auto& cse : cases) {
            Tensor<double> dF(f.dims);
            std::vector<double> df(w.v.begin(), w.v.end());
            cse.bwd(f, df, dF);
            auto fs = scalar_of(cse.fwd);
            // probe a handful of coordinates per instance; redraw probes that
            // straddle a max/sort tie
            int good = 0, attempts = 0;
            while (good < 6 && attempts < 30) {
                ++attempts;
                const auto idx = static_cast<size_t>(rng.uniform_int(static_cast<int>(f.size())));
                auto [fd, reliable] = oracle::fd_central_checked(fs, f.v[idx], 1e-6);
                if (!reliable) continue;
                REQUIRE(oracle::rel_close(dF.v[idx], fd, 1e-4, 1e-7));
                ++good;
            }
            REQUIRE(good == 6);
        }
    }
}
