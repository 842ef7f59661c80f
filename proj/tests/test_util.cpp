#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "scalpel/checkpoint.hpp"
#include "scalpel/hash.hpp"
#include "scalpel/rng.hpp"
#include "scalpel/tokenizer.hpp"

using namespace scalpel;
using Catch::Approx;

TEST_CASE("rng is reproducible per seed and differs across seeds") {
    Rng a(42), b(42), c(43);
    bool all_same = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const u64 x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
        all_same = all_same && (x == y);
        any_diff = any_diff || (x != z);
    }
    CHECK(all_same);
    CHECK(any_diff);
}

TEST_CASE("rng uniform stays in the half-open unit interval") {
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("rng uniform_below respects the bound and covers values") {
    Rng rng(9);
    std::set<u64> seen;
    for (int i = 0; i < 3000; ++i) {
        const u64 v = rng.uniform_below(7);
        REQUIRE(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("rng gaussian has roughly standard moments") {
    Rng rng(123);
    const int n = 20000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        s += g;
        s2 += g * g;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);       // ~4 sigma of the sample mean
    CHECK(std::abs(var - 1.0) < 0.05);  // generous band for sample variance
}

TEST_CASE("rng shuffle yields a permutation and is seed-stable") {
    std::vector<int> v1{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    auto v2 = v1;
    Rng a(5), b(5);
    a.shuffle(v1);
    b.shuffle(v2);
    CHECK(v1 == v2);
    std::set<int> s(v1.begin(), v1.end());
    CHECK(s.size() == 10);
}

TEST_CASE("derive_seed separates streams") {
    const u64 base = 1234;
    CHECK(derive_seed(base, 0) != derive_seed(base, 1));
    CHECK(derive_seed(base, 1) != derive_seed(base + 1, 1));
    CHECK(derive_seed(base, 7) == derive_seed(base, 7));
}

TEST_CASE("sha256 matches published vectors") {
    CHECK(sha256_hex(std::string("")) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex(std::string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("tokenizer assigns reserved ids then sorted characters") {
    auto tk = Tokenizer::fit({"cab", "bad"});
    // distinct chars: a b c d -> ids 3 4 5 6
    CHECK(tk.vocab_size() == 7);
    CHECK(tk.alphabet() == "abcd");
    auto ids = tk.encode("cab");
    REQUIRE(ids == std::vector<i64>{5, 3, 4});
}

TEST_CASE("tokenizer round trips and rejects unknown characters") {
    auto tk = Tokenizer::fit({"hello world", "42?"});
    const std::string text = "hold 42?";
    auto ids = tk.encode(text);
    CHECK(tk.decode(ids) == text);
    REQUIRE_THROWS_AS(tk.encode("xyz!"), InputError);

    // reserved ids are silently dropped on decode
    std::vector<i64> padded{Tokenizer::kBos};
    for (i64 id : ids) padded.push_back(id);
    padded.push_back(Tokenizer::kEos);
    padded.push_back(Tokenizer::kPad);
    CHECK(tk.decode(padded) == text);
}

TEST_CASE("tokenizer rebuilds identically from its alphabet") {
    auto tk = Tokenizer::fit({"some corpus text."});
    auto tk2 = Tokenizer::from_alphabet(tk.alphabet());
    CHECK(tk2.vocab_size() == tk.vocab_size());
    CHECK(tk2.encode("some text") == tk.encode("some text"));
}

TEST_CASE("checkpoint round trips bit-exactly") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "sclp_roundtrip_test.bin";

    Checkpoint ck;
    ck.meta["model"] = "tiny";
    ck.meta["vocab"] = "abc";
    ck.meta["n_layers"] = 2;
    ck.add("embed", {3, 2}, {1.0f, -2.5f, 3.25f, 0.0f, -0.0f, 1e-30f});
    ck.add("gain", {4}, {0.1f, 0.2f, 0.3f, 0.4f});
    ck.save(path);

    auto back = Checkpoint::load(path);
    CHECK(back.meta["model"] == "tiny");
    CHECK(back.meta["n_layers"] == 2);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].name == "embed");
    CHECK(back.tensors[1].name == "gain");
    const auto& emb = back.require("embed");
    REQUIRE(emb.shape == std::vector<i64>{3, 2});
    for (std::size_t i = 0; i < 6; ++i) {
        const std::uint32_t orig = std::bit_cast<std::uint32_t>(ck.tensors[0].data[i]);
        const std::uint32_t got = std::bit_cast<std::uint32_t>(emb.data[i]);
        CHECK(orig == got);  // bit-for-bit, including signed zero
    }
    CHECK_FALSE(back.find("missing"));
    REQUIRE_THROWS_AS(back.require("missing"), CorruptionError);
    fs::remove(path);
}

TEST_CASE("checkpoint save then save again is byte-identical") {
    namespace fs = std::filesystem;
    const fs::path p1 = fs::temp_directory_path() / "sclp_det_a.bin";
    const fs::path p2 = fs::temp_directory_path() / "sclp_det_b.bin";
    Checkpoint ck;
    ck.meta["seed"] = 17;
    ck.add("w", {2, 2}, {1, 2, 3, 4});
    ck.save(p1);
    ck.save(p2);
    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("checkpoint loader rejects corruption") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "sclp_corrupt_test.bin";
    Checkpoint ck;
    ck.add("w", {2}, {1.0f, 2.0f});
    ck.save(path);

    SECTION("bad magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
        f.close();
        REQUIRE_THROWS_AS(Checkpoint::load(path), CorruptionError);
    }
    SECTION("truncated blob") {
        auto sz = fs::file_size(path);
        fs::resize_file(path, sz - 4);
        REQUIRE_THROWS_AS(Checkpoint::load(path), CorruptionError);
    }
    SECTION("bad version") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char v[2] = {9, 0};
        f.write(v, 2);
        f.close();
        REQUIRE_THROWS_AS(Checkpoint::load(path), CorruptionError);
    }
    SECTION("garbage manifest") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(10);
        f.write("!!!!", 4);
        f.close();
        REQUIRE_THROWS_AS(Checkpoint::load(path), CorruptionError);
    }
    fs::remove(path);
}

TEST_CASE("checkpoint missing file raises input error") {
    REQUIRE_THROWS_AS(Checkpoint::load("/nonexistent/nope.bin"), InputError);
}
