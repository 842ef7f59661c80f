#pragma once

// Metrics over a frozen model + optional adapter: probability-preference
// accuracy, accuracy drop against a base value, corpus perplexity, overall
// capability (mean accuracy over held-out tasks), and per-example answer-gap
// reports in probability space.

#include <cmath>
#include <iomanip>
#include <sstream>

#include "scalpel/objective.hpp"

namespace scalpel {

// Fraction of examples whose correct continuation gets strictly higher
// probability than the wrong one; ties score as incorrect.
template <typename S>
double task_accuracy(const Model<S>& m, const Adapter<S>* ad, const Dataset& ds) {
    if (ds.size() == 0) throw ContractError("task_accuracy: empty split");
    auto pairs = pair_logprobs(m, ad, ds);
    std::size_t hits = 0;
    for (const auto& p : pairs)
        if (p.first > p.second) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

// exp(total NLL / predicted-token count), natural base.
template <typename S>
double perplexity(const Model<S>& m, const Adapter<S>* ad,
                  std::span<const std::string> texts, std::size_t batch_size = 32) {
    if (texts.empty()) throw ContractError("perplexity: empty corpus");
    auto [nll, count] = lm_nll_sum(m, ad, texts, batch_size);
    return std::exp(nll / static_cast<double>(count));
}

// Unweighted mean accuracy over held-out tasks; the caller is responsible for
// excluding the target task from the list.
template <typename S>
double overall_capability(const Model<S>& m, const Adapter<S>* ad,
                          std::span<const Dataset* const> held_out) {
    if (held_out.empty()) throw ContractError("overall_capability: no held-out tasks");
    double acc = 0;
    for (const Dataset* ds : held_out) acc += task_accuracy(m, ad, *ds);
    return acc / static_cast<double>(held_out.size());
}

namespace detail {

inline std::string fmt_metric(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

}  // namespace detail

struct MetricReport {
    std::string task;
    double accuracy = 0;
    double accuracy_drop = 0;
    double perplexity = 0;
    double capability = 0;

    static std::string csv_header() { return "task,acc,accd,ppl,cap"; }

    std::string csv_row() const {
        return task + "," + detail::fmt_metric(accuracy) + "," +
               detail::fmt_metric(accuracy_drop) + "," + detail::fmt_metric(perplexity) + "," +
               detail::fmt_metric(capability);
    }

    nlohmann::json to_json() const {
        return {{"task", task},
                {"acc", accuracy},
                {"accd", accuracy_drop},
                {"ppl", perplexity},
                {"cap", capability}};
    }
};

// One task's full metric row. `base_accuracy` is the frozen model's accuracy
// on the same split, so accuracy_drop is base - current by construction.
template <typename S>
MetricReport metric_report(const Model<S>& m, const Adapter<S>* ad, const std::string& name,
                           const Dataset& split, double base_accuracy,
                           std::span<const std::string> corpus,
                           std::span<const Dataset* const> held_out) {
    MetricReport r;
    r.task = name;
    r.accuracy = task_accuracy(m, ad, split);
    r.accuracy_drop = base_accuracy - r.accuracy;
    r.perplexity = perplexity(m, ad, corpus);
    r.capability = overall_capability(m, ad, held_out);
    return r;
}

// ------------------------------------------------------------- gap report

struct GapRow {
    double base_gap = 0;     // p(correct) - p(wrong) under the frozen model
    double ablated_gap = 0;  // same quantity with the adapter active
};

// Probability-space gaps. Token tasks exponentiate the answer log
// probabilities directly; sentence tasks exponentiate the per-character mean
// log probability (a geometric-mean character probability), keeping both
// columns in [-1, 1].
template <typename S>
std::vector<GapRow> gap_report(const Model<S>& m, const Adapter<S>& ad, const Dataset& ds) {
    if (ds.size() == 0) throw ContractError("gap_report: empty split");
    auto base = pair_logprobs(m, static_cast<const Adapter<S>*>(nullptr), ds);
    auto ablated = pair_logprobs(m, &ad, ds);
    std::vector<GapRow> rows(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        rows[i].base_gap = std::exp(base[i].first) - std::exp(base[i].second);
        rows[i].ablated_gap = std::exp(ablated[i].first) - std::exp(ablated[i].second);
    }
    return rows;
}

inline double mean_abs_base_gap(std::span<const GapRow> rows) {
    double acc = 0;
    for (const auto& r : rows) acc += std::abs(r.base_gap);
    return acc / static_cast<double>(rows.size());
}

inline double mean_abs_ablated_gap(std::span<const GapRow> rows) {
    double acc = 0;
    for (const auto& r : rows) acc += std::abs(r.ablated_gap);
    return acc / static_cast<double>(rows.size());
}

}  // namespace scalpel
