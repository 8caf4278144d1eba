#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "vwl/config.hpp"
#include "vwl/core.hpp"

using namespace vwl;

TEST_CASE("rng streams are reproducible and seed-separated", "[core]") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        double x = a.uniform();
        REQUIRE(x == b.uniform());
        REQUIRE(x >= 0.0);
        REQUIRE(x < 1.0);
    }
    bool differs = false;
    Rng a2(42);
    for (int i = 0; i < 16 && !differs; ++i) differs = a2.uniform() != c.uniform();
    REQUIRE(differs);
}

TEST_CASE("rng normal draws have sane moments", "[core]") {
    Rng rng(7);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    REQUIRE(std::fabs(sum / n) < 0.05);
    REQUIRE(std::fabs(sq / n - 1.0) < 0.05);
}

TEST_CASE("tensor indexing is row-major", "[core]") {
    Tensor<float> t({2, 3, 4});
    REQUIRE(t.size() == 24);
    t(1, 2, 3) = 5.0f;
    REQUIRE(t.v[23] == 5.0f);
    t(0, 0, 0) = 1.0f;
    REQUIRE(t.v[0] == 1.0f);
}

TEST_CASE("key-value config round-trips through file with stable hash", "[config]") {
    KeyValueConfig kv;
    kv.set("train.k", "32");
    kv.set_real("train.gamma", 2.0);
    kv.set_bool("train.hflip", false);
    kv.set("train.split_sizes", "1,2,4");
    const uint64_t h = kv.hash();

    auto path = std::filesystem::temp_directory_path() / "vwl_cfg_test.txt";
    kv.to_file(path.string());
    KeyValueConfig back = KeyValueConfig::from_file(path.string());
    REQUIRE(back.hash() == h);
    REQUIRE(back.get_int("train.k") == 32);
    REQUIRE(back.get_real("train.gamma") == 2.0);
    REQUIRE(back.get_bool("train.hflip") == false);
    REQUIRE(back.get_int_list("train.split_sizes") == std::vector<int>{1, 2, 4});
    std::filesystem::remove(path);

    // insertion order must not matter
    KeyValueConfig kv2;
    kv2.set("train.split_sizes", "1,2,4");
    kv2.set_bool("train.hflip", false);
    kv2.set_real("train.gamma", 2.0);
    kv2.set("train.k", "32");
    REQUIRE(kv2.hash() == h);
}

TEST_CASE("config errors carry the offending key", "[config]") {
    KeyValueConfig kv;
    kv.set("a", "notanumber");
    REQUIRE_THROWS_WITH(kv.get_int("a"), Catch::Matchers::ContainsSubstring("a"));
    REQUIRE_THROWS_AS(kv.get("missing"), ConfigError);
}

TEST_CASE("config file rejects malformed lines", "[config]") {
    auto path = std::filesystem::temp_directory_path() / "vwl_cfg_bad.txt";
    {
        std::ofstream out(path);
        out << "# comment\nvalid = 1\nbroken-line-without-equals\n";
    }
    REQUIRE_THROWS_AS(KeyValueConfig::from_file(path.string()), ConfigError);
    std::filesystem::remove(path);
}
