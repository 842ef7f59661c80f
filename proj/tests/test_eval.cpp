#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "reference_model.hpp"
#include "scalpel/eval.hpp"

using namespace scalpel;
using Catch::Approx;

namespace {

struct Fixture {
    Model<double> model;
    Adapter<double> adapter;

    static Fixture make(u64 seed = 301) {
        auto tk = Tokenizer::fit({"abcdefgh "});
        ModelConfig cfg;
        cfg.d_model = 16;
        cfg.n_layers = 2;
        cfg.n_heads = 2;
        cfg.d_ff = 20;
        cfg.max_seq_len = 16;
        auto m = Model<double>::init(cfg, tk, seed);
        m.set_requires_grad(false);
        auto ad = Adapter<double>::init(cfg, 2, 16.0, derive_seed(seed, 1));
        Rng rng(derive_seed(seed, 2));
        for (auto& layer : ad.layers)
            for (auto& p : layer)
                for (auto& v : p.B.data()) v = rng.gaussian(0.0, 0.05);
        return {std::move(m), std::move(ad)};
    }

    Dataset token_ds() const {
        Dataset ds;
        ds.kind = TaskKind::token;
        ds.token_examples = {{"ab", "c", "d"}, {"bc", "d", "e"}, {"cd", "e", "f"},
                             {"de", "f", "g"}, {"ef", "g", "h"}};
        return ds;
    }
};

}  // namespace

TEST_CASE("accuracy counts strict preference for the correct answer") {
    auto fx = Fixture::make();
    Dataset ds = fx.token_ds();
    auto pairs = pair_logprobs(fx.model, &fx.adapter, ds);
    std::size_t hits = 0;
    for (const auto& p : pairs)
        if (p.first > p.second) ++hits;
    const double want = static_cast<double>(hits) / 5.0;
    CHECK(task_accuracy(fx.model, &fx.adapter, ds) == Approx(want).margin(1e-15));
}

TEST_CASE("ties count as incorrect") {
    auto fx = Fixture::make();
    // correct == wrong forces exactly equal logprobs at every example
    Dataset ds;
    ds.kind = TaskKind::token;
    ds.token_examples = {{"ab", "c", "c"}, {"bc", "d", "d"}};
    CHECK(task_accuracy(fx.model, &fx.adapter, ds) == 0.0);
}

TEST_CASE("uniform model has perplexity equal to vocab size") {
    auto tk = Tokenizer::fit({"abc "});
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 12;
    cfg.max_seq_len = 16;
    auto m = Model<double>::init(cfg, tk, 3);
    for (auto& v : m.unembed.data()) v = 0.0;
    std::vector<std::string> corpus = {"abc", "cab a", "bb"};
    CHECK(perplexity(m, static_cast<const Adapter<double>*>(nullptr), corpus) ==
          Approx(static_cast<double>(m.cfg.vocab_size)).margin(1e-9));
}

TEST_CASE("single-sequence perplexity recomposes from the sentence log prob") {
    auto fx = Fixture::make(11);
    std::vector<std::string> corpus = {"abcde"};
    // lm evaluation appends EOS, so compare against a per-token mean computed
    // over the same extended sequence
    std::vector<i64> ids{Tokenizer::kBos};
    for (i64 id : fx.model.tokenizer.encode(corpus[0])) ids.push_back(id);
    ids.push_back(Tokenizer::kEos);
    auto logits = refmodel::forward(fx.model, nullptr, ids);
    double nll = 0;
    for (std::size_t j = 0; j + 1 < ids.size(); ++j) {
        const auto& row = logits[j];
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double z = 0;
        for (double v : row) z += std::exp(v - mx);
        nll -= row[ids[j + 1]] - mx - std::log(z);
    }
    const double want = std::exp(nll / static_cast<double>(ids.size() - 1));
    CHECK(perplexity(fx.model, static_cast<const Adapter<double>*>(nullptr), corpus) ==
          Approx(want).margin(1e-9));
}

TEST_CASE("capability is the unweighted mean of held-out accuracies") {
    auto fx = Fixture::make(13);
    Dataset a = fx.token_ds();
    Dataset b;
    b.kind = TaskKind::token;
    b.token_examples = {{"fa", "b", "c"}, {"gb", "c", "d"}};
    std::vector<const Dataset*> held = {&a, &b};
    const double want = (task_accuracy(fx.model, &fx.adapter, a) +
                         task_accuracy(fx.model, &fx.adapter, b)) /
                        2.0;
    CHECK(overall_capability(fx.model, &fx.adapter, held) == Approx(want).margin(1e-15));

    std::vector<const Dataset*> one = {&b};
    CHECK(overall_capability(fx.model, &fx.adapter, one) ==
          Approx(task_accuracy(fx.model, &fx.adapter, b)).margin(1e-15));
}

TEST_CASE("zero-init adapters reproduce the base metrics exactly") {
    auto fx = Fixture::make(17);
    auto fresh = Adapter<double>::init(fx.model.cfg, 2, 16.0, 99);
    Dataset ds = fx.token_ds();
    std::vector<std::string> corpus = {"abc", "hgf e"};
    const Adapter<double>* none = nullptr;

    CHECK(task_accuracy(fx.model, &fresh, ds) == task_accuracy(fx.model, none, ds));
    CHECK(perplexity(fx.model, &fresh, corpus) == perplexity(fx.model, none, corpus));

    auto rows = gap_report(fx.model, fresh, ds);
    for (const auto& r : rows) CHECK(r.base_gap == r.ablated_gap);
}

TEST_CASE("gap report recomposes from independent log probabilities") {
    auto fx = Fixture::make(19);
    Dataset ds = fx.token_ds();
    auto rows = gap_report(fx.model, fx.adapter, ds);
    REQUIRE(rows.size() == ds.size());
    auto base = pair_logprobs(fx.model, static_cast<const Adapter<double>*>(nullptr), ds);
    auto abl = pair_logprobs(fx.model, &fx.adapter, ds);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].base_gap ==
              Approx(std::exp(base[i].first) - std::exp(base[i].second)).margin(1e-6));
        CHECK(rows[i].ablated_gap ==
              Approx(std::exp(abl[i].first) - std::exp(abl[i].second)).margin(1e-6));
        CHECK(std::abs(rows[i].base_gap) <= 1.0);
    }

    // sentence mode: geometric-mean character probabilities
    Dataset sd;
    sd.kind = TaskKind::sentence;
    sd.sentence_examples = {{"abc d", "abd c"}, {"hg", "gh"}};
    auto srows = gap_report(fx.model, fx.adapter, sd);
    auto sbase = pair_logprobs(fx.model, static_cast<const Adapter<double>*>(nullptr), sd);
    for (std::size_t i = 0; i < srows.size(); ++i)
        CHECK(srows[i].base_gap ==
              Approx(std::exp(sbase[i].first) - std::exp(sbase[i].second)).margin(1e-6));
}

TEST_CASE("metric report row wires the four numbers together") {
    auto fx = Fixture::make(23);
    Dataset target = fx.token_ds();
    Dataset other;
    other.kind = TaskKind::token;
    other.token_examples = {{"fa", "b", "c"}, {"gb", "c", "d"}};
    std::vector<const Dataset*> held = {&other};
    std::vector<std::string> corpus = {"abc", "fgh"};
    const double base_acc =
        task_accuracy(fx.model, static_cast<const Adapter<double>*>(nullptr), target);

    auto rep = metric_report(fx.model, &fx.adapter, "toy", target, base_acc, corpus, held);
    CHECK(rep.task == "toy");
    CHECK(rep.accuracy_drop == Approx(base_acc - rep.accuracy).margin(1e-9));
    CHECK(rep.perplexity == Approx(perplexity(fx.model, &fx.adapter, corpus)).margin(1e-12));
    CHECK(rep.capability == Approx(task_accuracy(fx.model, &fx.adapter, other)).margin(1e-12));

    CHECK(MetricReport::csv_header() == "task,acc,accd,ppl,cap");
    const std::string row = rep.csv_row();
    CHECK(row.substr(0, 4) == "toy,");
    CHECK(std::count(row.begin(), row.end(), ',') == 4);

    auto j = rep.to_json();
    CHECK(j["task"] == "toy");
    CHECK(j["acc"].get<double>() == Approx(rep.accuracy));

    // the untouched model drops nothing
    auto base_rep =
        metric_report(fx.model, static_cast<const Adapter<double>*>(nullptr), "toy", target,
                      base_acc, corpus, held);
    CHECK(base_rep.accuracy_drop == 0.0);
}

TEST_CASE("empty inputs are contract violations") {
    auto fx = Fixture::make(29);
    Dataset empty;
    CHECK_THROWS_AS(task_accuracy(fx.model, &fx.adapter, empty), ContractError);
    std::vector<std::string> none;
    CHECK_THROWS_AS(perplexity(fx.model, &fx.adapter, none), ContractError);
    std::vector<const Dataset*> no_tasks;
    CHECK_THROWS_AS(overall_capability(fx.model, &fx.adapter, no_tasks), ContractError);
}
