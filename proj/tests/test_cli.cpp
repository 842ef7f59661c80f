#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "scalpel/cli.hpp"

using namespace scalpel;

namespace {

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "scalpel");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string read_all(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream is(path);
    REQUIRE(is);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(is, line)) out.push_back(line);
    return out;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

}  // namespace

TEST_CASE("the full command pipeline runs end to end") {
    const auto root = std::filesystem::temp_directory_path() / "scalpel_cli_e2e";
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root);
    const auto data = (root / "data").string();
    const auto ckpt = (root / "model.ckpt").string();
    const auto adapter = (root / "mapping.adapter.ckpt").string();

    // ---------------- data generation
    REQUIRE(run_cli({"--seed", "11", "gen-data", "--size", "60", "--out-dir", data}) == 0);
    for (const char* task : {"mapping", "ioi", "analogy", "parity", "agreement"})
        for (const char* split : {"train", "dev", "test"})
            REQUIRE(std::filesystem::exists(root / "data" /
                                            (std::string(task) + "." + split + ".jsonl")));
    for (const char* split : {"train", "dev", "test"})
        REQUIRE(std::filesystem::exists(root / "data" /
                                        ("general." + std::string(split) + ".txt")));

    std::ifstream mis(root / "data" / "gen-data.manifest.json");
    nlohmann::json man = nlohmann::json::parse(mis);
    REQUIRE(man["command"] == "gen-data");
    REQUIRE(man["outputs"].size() == 18);
    for (const auto& out : man["outputs"])
        REQUIRE(std::filesystem::exists(out.get<std::string>()));

    // identical seed in a fresh directory → identical dataset bytes
    const auto data2 = (root / "data2").string();
    REQUIRE(run_cli({"--seed", "11", "gen-data", "--size", "60", "--out-dir", data2}) == 0);
    REQUIRE(read_all(root / "data" / "mapping.train.jsonl") ==
            read_all(root / "data2" / "mapping.train.jsonl"));
    REQUIRE(read_all(root / "data" / "general.train.txt") ==
            read_all(root / "data2" / "general.train.txt"));

    // ---------------- pretraining (a mastery bar low enough for a quick exit)
    REQUIRE(run_cli({"--seed", "11", "pretrain", "--data-dir", data, "--out", ckpt,
                     "--d-model", "32", "--n-layers", "2", "--n-heads", "2", "--d-ff", "64",
                     "--batch-size", "16", "--lr", "0.002", "--max-steps", "400",
                     "--eval-every", "50", "--mastery", "0.2"}) == 0);
    REQUIRE(std::filesystem::exists(ckpt));
    REQUIRE(std::filesystem::exists(ckpt + ".manifest.json"));

    // ---------------- adapter training, repeated for byte-level determinism
    const std::vector<std::string> ablate_args = {
        "--seed", "11", "ablate", "--checkpoint", ckpt, "--task", "mapping",
        "--data-dir", data, "--out", adapter, "--epochs", "2", "--batch-size", "16",
        "--lr", "0.01"};
    REQUIRE(run_cli(ablate_args) == 0);
    const std::string adapter_bytes = read_all(adapter);
    const std::string steps_bytes = read_all(adapter + ".steps.csv");
    const std::string manifest_bytes = read_all(adapter + ".manifest.json");
    REQUIRE(run_cli(ablate_args) == 0);
    REQUIRE(read_all(adapter) == adapter_bytes);
    REQUIRE(read_all(adapter + ".steps.csv") == steps_bytes);
    REQUIRE(read_all(adapter + ".manifest.json") == manifest_bytes);

    REQUIRE(read_lines(adapter + ".steps.csv")[0] ==
            "step,target,textreg,normreg,sparsityreg,total,mean_abs_gap");
    REQUIRE(read_lines(adapter + ".epochs.csv")[0] == "epoch,acc,accd,cap,product");

    // ---------------- evaluation: the bare model must report zero drops
    const auto base_csv = (root / "base.csv").string();
    REQUIRE(run_cli({"--seed", "11", "eval", "--checkpoint", ckpt, "--data-dir", data,
                     "--split", "test", "--out", base_csv}) == 0);
    auto base_lines = read_lines(base_csv);
    REQUIRE(base_lines.size() == 6);  // header + five tasks
    REQUIRE(base_lines[0] == "task,acc,accd,ppl,cap");
    for (std::size_t i = 1; i < base_lines.size(); ++i)
        REQUIRE(split_csv(base_lines[i])[2] == "0");

    const auto ad_csv = (root / "adapter.csv").string();
    REQUIRE(run_cli({"--seed", "11", "eval", "--checkpoint", ckpt, "--adapter", adapter,
                     "--data-dir", data, "--split", "test", "--out", ad_csv}) == 0);
    REQUIRE(read_lines(ad_csv).size() == 6);

    // the 64-bit path loads the same artifacts
    REQUIRE(run_cli({"--seed", "11", "--precision", "f64", "eval", "--checkpoint", ckpt,
                     "--data-dir", data, "--split", "dev",
                     "--out", (root / "f64.csv").string()}) == 0);

    // ---------------- analysis over two labeled adapters
    const auto an_dir = root / "analysis";
    REQUIRE(run_cli({"--seed", "11", "analyze", "--checkpoint", ckpt,
                     "--adapter", "mapping-a=" + adapter, "--adapter", "mapping-b=" + adapter,
                     "--out-dir", an_dir.string()}) == 0);
    for (const char* f : {"mapping-a.importance.csv", "mapping-a.importance.svg",
                          "mapping-b.importance.csv", "similarity.csv", "mds.csv", "mds.svg",
                          "clusters.json", "analyze.manifest.json"})
        REQUIRE(std::filesystem::exists(an_dir / f));
    {
        std::ifstream cj(an_dir / "clusters.json");
        nlohmann::json j = nlohmann::json::parse(cj);
        // same-kind duplicates: intra distance 0, no second kind to compare against
        REQUIRE(j["intra"].get<double>() == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(j["inter"].is_null());
        REQUIRE(j["ratio"].is_null());
    }

    // ---------------- method comparison with the cheap scoring methods
    const auto cmp_csv = (root / "compare.csv").string();
    REQUIRE(run_cli({"--seed", "11", "compare", "--checkpoint", ckpt, "--adapter", adapter,
                     "--task", "mapping", "--data-dir", data,
                     "--methods", "diffmean,logitlens", "--eps-grid", "0.0,0.5",
                     "--top-k", "5", "--out", cmp_csv}) == 0);
    auto cmp_lines = read_lines(cmp_csv);
    REQUIRE(cmp_lines[0] == "method,accd,ppl,cap,product,eps");
    REQUIRE(cmp_lines.size() == 5);  // base, scalpel, two methods
    REQUIRE(split_csv(cmp_lines[1])[0] == "base");
    REQUIRE(split_csv(cmp_lines[2])[0] == "scalpel");
    REQUIRE(std::filesystem::exists(cmp_csv + ".svg"));

    // ---------------- rank sweep
    const auto sweep_csv = (root / "sweep.csv").string();
    REQUIRE(run_cli({"--seed", "11", "sweep", "--checkpoint", ckpt, "--task", "mapping",
                     "--data-dir", data, "--ranks", "1,2", "--epochs", "1",
                     "--batch-size", "16", "--out", sweep_csv}) == 0);
    auto sweep_lines = read_lines(sweep_csv);
    REQUIRE(sweep_lines[0] == "label,accd,cap,product,error");
    REQUIRE(sweep_lines.size() == 3);
    bool saw1 = false, saw2 = false;
    for (std::size_t i = 1; i < sweep_lines.size(); ++i) {
        const auto cells = split_csv(sweep_lines[i]);
        if (cells[0] == "rank1") saw1 = true;
        if (cells[0] == "rank2") saw2 = true;
    }
    REQUIRE(saw1);
    REQUIRE(saw2);

    std::filesystem::remove_all(root);
}

TEST_CASE("a config file fills parameters and explicit flags beat it") {
    const auto root = std::filesystem::temp_directory_path() / "scalpel_cli_cfg";
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root);
    const auto data = (root / "data").string();
    const auto ckpt = (root / "model.ckpt").string();

    REQUIRE(run_cli({"--seed", "3", "gen-data", "--size", "60", "--out-dir", data}) == 0);
    REQUIRE(run_cli({"--seed", "3", "pretrain", "--data-dir", data, "--out", ckpt,
                     "--d-model", "16", "--n-layers", "1", "--n-heads", "2", "--d-ff", "24",
                     "--batch-size", "16", "--max-steps", "100", "--eval-every", "50",
                     "--mastery", "0.05"}) == 0);

    const auto cfg_path = root / "ablate.cfg";
    {
        std::ofstream os(cfg_path);
        os << "epochs = 1\n";
        os << "batch_size = 16\n";
        os << "lr = 0.5\n";  // overridden by the flag below
    }
    const auto adapter = (root / "a.ckpt").string();
    REQUIRE(run_cli({"--seed", "3", "ablate", "--checkpoint", ckpt, "--task", "mapping",
                     "--data-dir", data, "--out", adapter, "--config", cfg_path.string(),
                     "--lr", "0.01"}) == 0);

    std::ifstream mis(adapter + ".manifest.json");
    nlohmann::json man = nlohmann::json::parse(mis);
    REQUIRE(man["config"]["epochs"] == "1");       // from the file
    REQUIRE(man["config"]["lr"] == "0.01");        // flag wins
    REQUIRE(man["config"]["batch_size"] == "16");  // from the file
    REQUIRE(man["config"]["seed"] == "3");

    std::filesystem::remove_all(root);
}

TEST_CASE("failures exit with their documented categories") {
    // configuration problems → 2
    REQUIRE(run_cli({"gen-data", "--kind", "bogus"}) == 2);
    REQUIRE(run_cli({"eval", "--checkpoint", "x", "--split", "bogus", "--out", "y"}) == 2);
    REQUIRE(run_cli({"sweep", "--checkpoint", "x", "--task", "mapping", "--jobs", "0",
                     "--out", "y"}) == 2);
    REQUIRE(run_cli({"eval", "--checkpoint", "x"}) == 2);  // missing required --out
    REQUIRE(run_cli({"not-a-command"}) == 2);
    REQUIRE(run_cli({"--help"}) == 0);

    // missing data → 3
    REQUIRE(run_cli({"eval", "--checkpoint", "/nonexistent/model.ckpt", "--out",
                     "/tmp/scalpel_cli_never.csv"}) == 3);

    // training budget exhaustion → 4
    const auto root = std::filesystem::temp_directory_path() / "scalpel_cli_fail";
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root);
    const auto data = (root / "data").string();
    REQUIRE(run_cli({"--seed", "5", "gen-data", "--size", "60", "--out-dir", data}) == 0);
    REQUIRE(run_cli({"--seed", "5", "pretrain", "--data-dir", data,
                     "--out", (root / "m.ckpt").string(), "--d-model", "16", "--n-layers", "1",
                     "--n-heads", "2", "--d-ff", "24", "--batch-size", "16", "--max-steps", "3",
                     "--eval-every", "1", "--mastery", "1.0"}) == 4);
    std::filesystem::remove_all(root);
}

TEST_CASE("the data root comes from the environment when flags omit it") {
    const auto root = std::filesystem::temp_directory_path() / "scalpel_cli_root";
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root);
    setenv("SCALPEL_ROOT", root.string().c_str(), 1);
    REQUIRE(run_cli({"--seed", "9", "gen-data", "--kind", "mapping", "--size", "60"}) == 0);
    unsetenv("SCALPEL_ROOT");
    REQUIRE(std::filesystem::exists(root / "data" / "mapping.train.jsonl"));
    std::filesystem::remove_all(root);
}
