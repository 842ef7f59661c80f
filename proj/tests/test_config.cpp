#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "scalpel/manifest.hpp"

using namespace scalpel;

namespace {

Config parse_text(const std::string& text) {
    std::istringstream is(text);
    return Config::parse(is, "test.cfg");
}

std::filesystem::path scratch_dir() {
    auto dir = std::filesystem::temp_directory_path() / "scalpel_config_test";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("config parses keys, comments, and whitespace") {
    Config cfg = parse_text(
        "# a comment\n"
        "\n"
        "lr = 0.001\n"
        "epochs=20\n"
        "  name =  mapping  \n"
        "flag = true\n"
        "ranks = 1, 2, 4, 8\n");
    REQUIRE(cfg.get_f64("lr") == 0.001);
    REQUIRE(cfg.get_i64("epochs") == 20);
    REQUIRE(cfg.get_string("name") == "mapping");
    REQUIRE(cfg.get_bool("flag"));
    REQUIRE(cfg.get_i64_list("ranks") == std::vector<i64>{1, 2, 4, 8});
    REQUIRE(cfg.has("lr"));
    REQUIRE_FALSE(cfg.has("missing"));
}

TEST_CASE("config rejects malformed lines with file and line position") {
    try {
        parse_text("lr = 1\nnot a pair\n");
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        REQUIRE(std::string(e.what()).find("test.cfg:2") != std::string::npos);
    }
    REQUIRE_THROWS_AS(parse_text("a = 1\na = 2\n"), FormatError);
    REQUIRE_THROWS_AS(parse_text("= 3\n"), FormatError);
}

TEST_CASE("typed getters validate and fall back") {
    Config cfg = parse_text("n = twelve\nx = 1.5.2\nb = maybe\nok = 7\n");
    REQUIRE_THROWS_AS(cfg.get_i64("n"), ConfigError);
    REQUIRE_THROWS_AS(cfg.get_f64("x"), ConfigError);
    REQUIRE_THROWS_AS(cfg.get_bool("b"), ConfigError);
    REQUIRE_THROWS_AS(cfg.get_string("missing"), ConfigError);
    REQUIRE(cfg.get_i64("ok", 3) == 7);
    REQUIRE(cfg.get_i64("missing", 3) == 3);
    REQUIRE(cfg.get_f64("missing", 2.5) == 2.5);
    REQUIRE(cfg.get_string("missing", "d") == "d");
    REQUIRE(cfg.get_bool("missing", true));
    REQUIRE(cfg.get_u64("missing", 9) == 9);
}

TEST_CASE("overrides win and the canonical dump is sorted") {
    Config cfg = parse_text("b = 2\na = 1\n");
    cfg.set("b", "20");
    cfg.set("c", "3");
    REQUIRE(cfg.get_i64("b") == 20);
    REQUIRE(cfg.canonical() == "a = 1\nb = 20\nc = 3\n");
}

TEST_CASE("file hashing matches the known digest of a fixed string") {
    auto path = scratch_dir() / "abc.txt";
    {
        std::ofstream os(path, std::ios::binary);
        os << "abc";
    }
    REQUIRE(sha256_file(path) ==
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    REQUIRE(sha256_file(path) == sha256_hex("abc"));
    std::filesystem::remove(path);
}

TEST_CASE("manifest identity depends on exactly the command and its configuration") {
    RunManifest a;
    a.command = "ablate";
    a.config.set("task", "mapping");
    a.config.set("lr", "0.001");

    RunManifest b = a;
    REQUIRE(a.run_id() == b.run_id());
    REQUIRE(a.run_id() == sha256_hex("ablate\nlr = 0.001\ntask = mapping\n"));

    b.config.set("lr", "0.002");
    REQUIRE(a.run_id() != b.run_id());
    RunManifest c = a;
    c.command = "sweep";
    REQUIRE(a.run_id() != c.run_id());
}

TEST_CASE("manifest serializes inputs, outputs, and config without timestamps") {
    auto dir = scratch_dir();
    auto in_path = dir / "input.bin";
    auto out_path = dir / "output.csv";
    {
        std::ofstream os(in_path, std::ios::binary);
        os << "payload";
        std::ofstream os2(out_path);
        os2 << "col\n";
    }

    RunManifest man;
    man.command = "eval";
    man.config.set("split", "test");
    man.add_input(in_path);
    man.add_output(out_path);

    auto man_path = dir / "manifest.json";
    man.save(man_path);

    std::ifstream is(man_path);
    nlohmann::json j = nlohmann::json::parse(is);
    REQUIRE(j["command"] == "eval");
    REQUIRE(j["run_id"] == man.run_id());
    REQUIRE(j["version"] == std::string(kVersionString));
    REQUIRE(j["config"]["split"] == "test");
    REQUIRE(j["inputs"].size() == 1);
    REQUIRE(j["inputs"][0]["path"] == in_path.string());
    REQUIRE(j["inputs"][0]["sha256"] == sha256_hex("payload"));
    REQUIRE(j["outputs"][0] == out_path.string());
    REQUIRE_FALSE(j.contains("time"));
    REQUIRE_FALSE(j.contains("timestamp"));

    // rewriting produces identical bytes
    std::ifstream first(man_path, std::ios::binary);
    std::stringstream buf1;
    buf1 << first.rdbuf();
    man.save(man_path);
    std::ifstream second(man_path, std::ios::binary);
    std::stringstream buf2;
    buf2 << second.rdbuf();
    REQUIRE(buf1.str() == buf2.str());

    std::filesystem::remove_all(dir);
}

TEST_CASE("manifest refuses to record outputs that do not exist") {
    RunManifest man;
    man.command = "eval";
    man.add_output("/nonexistent/path/file.csv");
    REQUIRE_THROWS_AS(man.save(scratch_dir() / "bad.json"), InternalError);
}

TEST_CASE("hashing a missing input fails loudly") {
    RunManifest man;
    man.command = "eval";
    REQUIRE_THROWS_AS(man.add_input("/nonexistent/input.bin"), InputError);
}
