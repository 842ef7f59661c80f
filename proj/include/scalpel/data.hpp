#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scalpel/common.hpp"
#include "scalpel/rng.hpp"

// Synthetic capability tasks and the general text corpus.
//
// Every generator enumerates its full combination space in a fixed order,
// shuffles it with the caller's seed and keeps the first `size` entries, so
// a (name, size, seed) triple always reproduces the same dataset. Splits are
// coverage-constrained: each coverage key (e.g. each mapping source symbol)
// contributes at least one training example, and dev/test hold unseen
// combinations.

namespace scalpel {

enum class TaskKind { token, sentence };

struct TokenExample {
    std::string prompt, correct, wrong;
};

struct SentenceExample {
    std::string good, bad;
};

struct Dataset {
    TaskKind kind = TaskKind::token;
    std::vector<TokenExample> token_examples;
    std::vector<SentenceExample> sentence_examples;

    std::size_t size() const {
        return kind == TaskKind::token ? token_examples.size() : sentence_examples.size();
    }

    // Every string in the dataset, for vocabulary fitting.
    std::vector<std::string> all_texts() const {
        std::vector<std::string> out;
        if (kind == TaskKind::token) {
            for (const auto& e : token_examples) {
                out.push_back(e.prompt + e.correct);
                out.push_back(e.prompt + e.wrong);
            }
        } else {
            for (const auto& e : sentence_examples) {
                out.push_back(e.good);
                out.push_back(e.bad);
            }
        }
        return out;
    }
};

struct TaskSpec {
    std::string name;
    TaskKind kind;
};

inline const std::vector<TaskSpec>& task_registry() {
    static const std::vector<TaskSpec> specs = {
        {"mapping", TaskKind::token},   {"ioi", TaskKind::token},
        {"analogy", TaskKind::token},   {"parity", TaskKind::token},
        {"agreement", TaskKind::sentence},
    };
    return specs;
}

inline const TaskSpec& task_spec(const std::string& name) {
    for (const auto& s : task_registry())
        if (s.name == name) return s;
    throw ConfigError("unknown task '" + name + "'");
}

struct GeneratedTask {
    std::string name;
    TaskKind kind = TaskKind::token;
    Dataset full;
    std::vector<std::string> coverage_keys;  // parallel to examples
};

namespace gen_detail {

// Shuffle-select `size` indices out of `space`, complaining when the space
// is too small to supply distinct examples.
inline std::vector<std::size_t> pick(std::size_t space, i64 size, Rng& rng,
                                     const std::string& task) {
    if (size < 1) throw ConfigError("dataset size must be positive");
    if (static_cast<std::size_t>(size) > space)
        throw ConfigError("task '" + task + "' has only " + std::to_string(space) +
                          " distinct examples, requested " + std::to_string(size));
    std::vector<std::size_t> idx(space);
    for (std::size_t i = 0; i < space; ++i) idx[i] = i;
    rng.shuffle(idx);
    idx.resize(static_cast<std::size_t>(size));
    return idx;
}

inline GeneratedTask gen_mapping(i64 size, u64 seed) {
    Rng rng(seed);
    const std::string sources = "abcdefghijklmnopqrst";
    const std::string targets = "uvwxyz";
    // fixed symbol map, one draw per source
    std::vector<char> image;
    for (char s : sources) {
        (void)s;
        image.push_back(targets[rng.uniform_below(targets.size())]);
    }
    const std::vector<std::string> prefixes = {"", "Task: ", "Q: ", "Now, "};
    const std::vector<std::string> cores = {" maps to ", " goes to ", " becomes ",
                                            " turns into ", " links to "};

    struct Combo {
        std::size_t src, pre, core, wrong;
    };
    std::vector<Combo> combos;
    for (std::size_t si = 0; si < sources.size(); ++si)
        for (std::size_t p = 0; p < prefixes.size(); ++p)
            for (std::size_t c = 0; c < cores.size(); ++c)
                for (std::size_t w = 0; w < targets.size() - 1; ++w)
                    combos.push_back({si, p, c, w});

    GeneratedTask task;
    task.name = "mapping";
    task.kind = TaskKind::token;
    task.full.kind = TaskKind::token;
    for (std::size_t i : pick(combos.size(), size, rng, "mapping")) {
        const Combo& cb = combos[i];
        const char src = sources[cb.src];
        const char correct = image[cb.src];
        // wrong answers skip over the correct one
        std::string pool;
        for (char t : targets)
            if (t != correct) pool.push_back(t);
        const char wrong = pool[cb.wrong];
        TokenExample e;
        e.prompt = prefixes[cb.pre] + std::string(1, src) + cores[cb.core];
        e.correct = std::string(1, correct);
        e.wrong = std::string(1, wrong);
        task.full.token_examples.push_back(std::move(e));
        task.coverage_keys.push_back(std::string(1, src));
    }
    return task;
}

inline GeneratedTask gen_ioi(i64 size, u64 seed) {
    Rng rng(seed);
    const std::string names = "ABCDEFGHIJKL";
    const std::vector<std::string> verbs = {"gave", "passed", "sent", "handed"};
    const std::vector<std::string> objects = {"book", "ball", "rose", "cake", "coin", "pear"};
    const std::vector<std::string> frames = {
        "When % and % went to the store, % $ a @ to ",
        "Once % and % met at noon, % $ a @ to ",
        "Then % and % played, and % $ a @ to ",
    };

    struct Combo {
        std::size_t x, y, giver, verb, obj, frame;
    };
    std::vector<Combo> combos;
    for (std::size_t x = 0; x < names.size(); ++x)
        for (std::size_t y = 0; y < names.size(); ++y) {
            if (x == y) continue;
            for (std::size_t g = 0; g < 2; ++g)
                for (std::size_t v = 0; v < verbs.size(); ++v)
                    for (std::size_t o = 0; o < objects.size(); ++o)
                        for (std::size_t f = 0; f < frames.size(); ++f)
                            combos.push_back({x, y, g, v, o, f});
        }

    GeneratedTask task;
    task.name = "ioi";
    task.kind = TaskKind::token;
    task.full.kind = TaskKind::token;
    for (std::size_t i : pick(combos.size(), size, rng, "ioi")) {
        const Combo& cb = combos[i];
        const char xc = names[cb.x], yc = names[cb.y];
        const char giver = cb.giver == 0 ? xc : yc;
        const char receiver = cb.giver == 0 ? yc : xc;
        std::string prompt;
        std::size_t slot = 0;
        for (char ch : frames[cb.frame]) {
            if (ch == '%') {
                prompt.push_back(slot == 0 ? xc : (slot == 1 ? yc : giver));
                ++slot;
            } else if (ch == '$') {
                prompt += verbs[cb.verb];
            } else if (ch == '@') {
                prompt += objects[cb.obj];
            } else {
                prompt.push_back(ch);
            }
        }
        TokenExample e;
        e.prompt = std::move(prompt);
        e.correct = std::string(1, receiver);
        e.wrong = std::string(1, giver);
        task.full.token_examples.push_back(std::move(e));
        task.coverage_keys.push_back(std::string(1, receiver));
    }
    return task;
}

inline GeneratedTask gen_analogy(i64 size, u64 seed) {
    Rng rng(seed);
    const std::string letters = "MNOPQRSTUVWXYZ";
    // cyclic shift by a random non-zero offset: a fixed-point-free relation
    const std::size_t shift = 1 + rng.uniform_below(letters.size() - 1);
    auto rel = [&](std::size_t i) { return letters[(i + shift) % letters.size()]; };
    const std::vector<std::string> frames = {
        "% is to % as % is to ",
        "Like % to %, % goes to ",
        "%:% :: %:",
        "If % maps to %, % maps to ",
    };

    struct Combo {
        std::size_t a, c, frame;
        char wrong;
    };
    std::vector<Combo> combos;
    for (std::size_t a = 0; a < letters.size(); ++a)
        for (std::size_t c = 0; c < letters.size(); ++c) {
            if (a == c) continue;
            for (std::size_t f = 0; f < frames.size(); ++f) {
                std::string pool;
                for (char ch : letters)
                    if (ch != rel(c) && ch != letters[c]) pool.push_back(ch);
                combos.push_back({a, c, f, pool[rng.uniform_below(pool.size())]});
            }
        }

    GeneratedTask task;
    task.name = "analogy";
    task.kind = TaskKind::token;
    task.full.kind = TaskKind::token;
    for (std::size_t i : pick(combos.size(), size, rng, "analogy")) {
        const Combo& cb = combos[i];
        const char a = letters[cb.a], b = rel(cb.a), c = letters[cb.c];
        std::string prompt;
        std::size_t slot = 0;
        for (char ch : frames[cb.frame]) {
            if (ch == '%') {
                prompt.push_back(slot == 0 ? a : (slot == 1 ? b : c));
                ++slot;
            } else {
                prompt.push_back(ch);
            }
        }
        TokenExample e;
        e.prompt = std::move(prompt);
        e.correct = std::string(1, rel(cb.c));
        e.wrong = std::string(1, cb.wrong);
        task.full.token_examples.push_back(std::move(e));
        task.coverage_keys.push_back(std::string(1, c));
    }
    return task;
}

inline GeneratedTask gen_parity(i64 size, u64 seed) {
    Rng rng(seed);
    const std::vector<std::string> frames = {
        "Is # even (e) or odd (o)? Answer: ",
        "# is even (e) or odd (o)? It is ",
        "Parity of # (e or o): ",
        "Tell parity of #, e or o: ",
        "Q: # even or odd? (e/o) A: ",
        "The number # is (e/o): ",
    };

    struct Combo {
        int n;
        std::size_t frame;
    };
    std::vector<Combo> combos;
    for (int n = 10; n <= 99; ++n)
        for (std::size_t f = 0; f < frames.size(); ++f) combos.push_back({n, f});

    GeneratedTask task;
    task.name = "parity";
    task.kind = TaskKind::token;
    task.full.kind = TaskKind::token;
    for (std::size_t i : pick(combos.size(), size, rng, "parity")) {
        const Combo& cb = combos[i];
        std::string prompt;
        for (char ch : frames[cb.frame]) {
            if (ch == '#')
                prompt += std::to_string(cb.n);
            else
                prompt.push_back(ch);
        }
        const bool even = cb.n % 2 == 0;
        TokenExample e;
        e.prompt = std::move(prompt);
        e.correct = even ? "e" : "o";
        e.wrong = even ? "o" : "e";
        task.full.token_examples.push_back(std::move(e));
        task.coverage_keys.push_back(std::string(1, char('0' + cb.n % 10)));
    }
    return task;
}

inline GeneratedTask gen_agreement(i64 size, u64 seed) {
    Rng rng(seed);
    const std::vector<std::string> nouns = {"cat", "dog",  "bird", "frog",
                                            "bear", "duck", "hen",  "pig"};
    const std::vector<std::string> verbs = {"runs", "naps",  "sings", "jumps",
                                            "digs", "hides", "barks", "swims"};
    const std::vector<std::string> preps = {"near", "by", "with"};

    auto plural_noun = [](const std::string& n) { return n + "s"; };
    auto plural_verb = [](const std::string& v) { return v.substr(0, v.size() - 1); };

    // pp = 0 means no prepositional phrase; otherwise (prep, distractor noun)
    struct Combo {
        std::size_t subj, verb, pp;
        bool subj_plural;
    };
    std::vector<Combo> combos;
    const std::size_t pp_options = 1 + preps.size() * nouns.size();
    for (std::size_t s = 0; s < nouns.size(); ++s)
        for (int pl = 0; pl < 2; ++pl)
            for (std::size_t v = 0; v < verbs.size(); ++v)
                for (std::size_t pp = 0; pp < pp_options; ++pp)
                    combos.push_back({s, v, pp, pl == 1});

    GeneratedTask task;
    task.name = "agreement";
    task.kind = TaskKind::sentence;
    task.full.kind = TaskKind::sentence;
    for (std::size_t i : pick(combos.size(), size, rng, "agreement")) {
        const Combo& cb = combos[i];
        const std::string subj =
            cb.subj_plural ? plural_noun(nouns[cb.subj]) : nouns[cb.subj];
        std::string middle;
        if (cb.pp > 0) {
            const std::size_t p = (cb.pp - 1) / nouns.size();
            const std::size_t dn = (cb.pp - 1) % nouns.size();
            // distractor carries the opposite number to maximize interference
            const std::string dist =
                cb.subj_plural ? nouns[dn] : plural_noun(nouns[dn]);
            middle = " " + preps[p] + " the " + dist;
        }
        const std::string good_verb = cb.subj_plural ? plural_verb(verbs[cb.verb]) : verbs[cb.verb];
        const std::string bad_verb = cb.subj_plural ? verbs[cb.verb] : plural_verb(verbs[cb.verb]);
        SentenceExample e;
        e.good = "the " + subj + middle + " " + good_verb + ".";
        e.bad = "the " + subj + middle + " " + bad_verb + ".";
        task.full.sentence_examples.push_back(std::move(e));
        task.coverage_keys.push_back(verbs[cb.verb] + (cb.subj_plural ? "/pl" : "/sg"));
    }
    return task;
}

}  // namespace gen_detail

inline GeneratedTask generate_task(const std::string& name, i64 size, u64 seed) {
    if (name == "mapping") return gen_detail::gen_mapping(size, seed);
    if (name == "ioi") return gen_detail::gen_ioi(size, seed);
    if (name == "analogy") return gen_detail::gen_analogy(size, seed);
    if (name == "parity") return gen_detail::gen_parity(size, seed);
    if (name == "agreement") return gen_detail::gen_agreement(size, seed);
    throw ConfigError("unknown task '" + name + "'");
}

// Short declarative sentences over a vocabulary disjoint from the tasks'
// symbol sets; used for the language-modeling regularizer and perplexity.
inline std::vector<std::string> generate_general(i64 size, u64 seed) {
    const std::vector<std::string> nouns = {"river", "cloud", "stone", "wind", "leaf",
                                            "moon",  "star",  "rain",  "snow", "hill"};
    const std::vector<std::string> verbs = {"drifts", "settles", "glows",  "fades",
                                            "turns",  "falls",   "rests",  "shines"};
    const std::vector<std::string> advs = {"slowly", "gently", "softly", "quietly"};
    const std::vector<std::string> adjs = {"pale", "cold", "bright", "still"};

    std::vector<std::string> space;
    for (const auto& n : nouns)
        for (const auto& v : verbs) space.push_back("the " + n + " " + v + ".");
    for (const auto& a : adjs)
        for (const auto& n : nouns)
            for (const auto& v : verbs) space.push_back("the " + a + " " + n + " " + v + ".");
    for (const auto& n : nouns)
        for (const auto& v : verbs)
            for (const auto& a : advs) space.push_back("the " + n + " " + v + " " + a + ".");
    for (const auto& n : nouns)
        for (const auto& v : verbs)
            for (const auto& n2 : nouns)
                for (const auto& v2 : verbs)
                    space.push_back("the " + n + " " + v + " and the " + n2 + " " + v2 + ".");

    Rng rng(seed);
    if (size < 1) throw ConfigError("general corpus size must be positive");
    if (static_cast<std::size_t>(size) > space.size())
        throw ConfigError("general corpus space has " + std::to_string(space.size()) +
                          " sentences, requested " + std::to_string(size));
    rng.shuffle(space);
    space.resize(static_cast<std::size_t>(size));
    return space;
}

// ------------------------------------------------------------------ splits

struct DataSplits {
    Dataset train, dev, test;
};

// Pass 1 pins one example per coverage key into train; pass 2 shuffles the
// rest into test and dev (each floor(n/10)) with the remainder in train.
inline DataSplits split_dataset(const Dataset& all, const std::vector<std::string>& coverage,
                                u64 seed) {
    const std::size_t n = all.size();
    if (coverage.size() != n) throw ContractError("coverage keys do not match dataset size");
    const std::size_t n_dev = n / 10, n_test = n / 10;
    if (n_dev == 0 || n_test == 0)
        throw ConfigError("dataset too small to split (need at least 10 examples)");

    Rng rng(seed);
    std::map<std::string, std::vector<std::size_t>> by_key;
    for (std::size_t i = 0; i < n; ++i) by_key[coverage[i]].push_back(i);
    if (by_key.size() > n - n_dev - n_test)
        throw ConfigError("too many coverage keys for the train budget");

    std::vector<bool> pinned(n, false);
    for (auto& [key, idxs] : by_key) pinned[idxs[rng.uniform_below(idxs.size())]] = true;

    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
        if (!pinned[i]) rest.push_back(i);
    rng.shuffle(rest);

    std::vector<std::size_t> test_idx(rest.begin(), rest.begin() + n_test);
    std::vector<std::size_t> dev_idx(rest.begin() + n_test, rest.begin() + n_test + n_dev);
    std::vector<std::size_t> train_idx(rest.begin() + n_test + n_dev, rest.end());
    for (std::size_t i = 0; i < n; ++i)
        if (pinned[i]) train_idx.push_back(i);
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(dev_idx.begin(), dev_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    auto emit = [&](const std::vector<std::size_t>& idxs) {
        Dataset d;
        d.kind = all.kind;
        for (std::size_t i : idxs) {
            if (all.kind == TaskKind::token)
                d.token_examples.push_back(all.token_examples[i]);
            else
                d.sentence_examples.push_back(all.sentence_examples[i]);
        }
        return d;
    };
    return {emit(train_idx), emit(dev_idx), emit(test_idx)};
}

// One task's name plus its three splits; the unit the harness works with.
struct TaskData {
    std::string name;
    TaskKind kind = TaskKind::token;
    Dataset train, dev, test;
};

inline TaskData prepare_task(const std::string& name, i64 size, u64 seed) {
    GeneratedTask g = generate_task(name, size, seed);
    DataSplits sp = split_dataset(g.full, g.coverage_keys, derive_seed(seed, 909));
    return {g.name, g.kind, std::move(sp.train), std::move(sp.dev), std::move(sp.test)};
}

// ------------------------------------------------------------------ JSONL

namespace jsonl_detail {

inline nlohmann::json parse_line(const std::string& line, const std::filesystem::path& path,
                                 std::size_t lineno) {
    try {
        auto j = nlohmann::json::parse(line);
        if (!j.is_object())
            throw FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": expected a JSON object");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
}

inline std::string need_string(const nlohmann::json& j, const char* key,
                               const std::filesystem::path& path, std::size_t lineno) {
    if (!j.contains(key) || !j[key].is_string())
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": missing string field '" +
                          key + "'");
    return j[key].get<std::string>();
}

}  // namespace jsonl_detail

inline void save_jsonl(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
    if (ds.kind == TaskKind::token) {
        for (const auto& e : ds.token_examples) {
            nlohmann::json j{{"prompt", e.prompt}, {"correct", e.correct}, {"wrong", e.wrong}};
            out << j.dump() << "\n";
        }
    } else {
        for (const auto& e : ds.sentence_examples) {
            nlohmann::json j{{"good", e.good}, {"bad", e.bad}};
            out << j.dump() << "\n";
        }
    }
    if (!out) throw InputError("write failed for '" + path.string() + "'");
}

inline Dataset load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path.string() + "' for reading");
    Dataset ds;
    bool kind_known = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = jsonl_detail::parse_line(line, path, lineno);
        const bool looks_token = j.contains("prompt");
        if (!kind_known) {
            ds.kind = looks_token ? TaskKind::token : TaskKind::sentence;
            kind_known = true;
        } else if ((ds.kind == TaskKind::token) != looks_token) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": mixed example schemas in one file");
        }
        if (ds.kind == TaskKind::token) {
            TokenExample e;
            e.prompt = jsonl_detail::need_string(j, "prompt", path, lineno);
            e.correct = jsonl_detail::need_string(j, "correct", path, lineno);
            e.wrong = jsonl_detail::need_string(j, "wrong", path, lineno);
            if (e.correct.empty() || e.wrong.empty())
                throw FormatError(path.string() + ":" + std::to_string(lineno) +
                                  ": empty answer field");
            ds.token_examples.push_back(std::move(e));
        } else {
            SentenceExample e;
            e.good = jsonl_detail::need_string(j, "good", path, lineno);
            e.bad = jsonl_detail::need_string(j, "bad", path, lineno);
            if (e.good.empty() || e.bad.empty())
                throw FormatError(path.string() + ":" + std::to_string(lineno) +
                                  ": empty sentence field");
            ds.sentence_examples.push_back(std::move(e));
        }
    }
    if (ds.size() == 0) throw FormatError(path.string() + ": no examples");
    return ds;
}

inline void save_text_jsonl(const std::filesystem::path& path,
                            const std::vector<std::string>& texts) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
    for (const auto& t : texts) {
        nlohmann::json j{{"text", t}};
        out << j.dump() << "\n";
    }
    if (!out) throw InputError("write failed for '" + path.string() + "'");
}

inline std::vector<std::string> load_text_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path.string() + "' for reading");
    std::vector<std::string> texts;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = jsonl_detail::parse_line(line, path, lineno);
        texts.push_back(jsonl_detail::need_string(j, "text", path, lineno));
    }
    if (texts.empty()) throw FormatError(path.string() + ": no text lines");
    return texts;
}

}  // namespace scalpel
