#pragma once

// Post-training adapter analysis: per-site importance from the Frobenius norm
// of the effective update (alpha/r)BA, weight-space task similarity via
// Pearson correlation, and a 2-D classical MDS embedding of the resulting
// distance matrix.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

#include "scalpel/eval.hpp"
#include "scalpel/model.hpp"

namespace scalpel {

// ------------------------------------------------------------- importance

struct SiteScore {
    i64 layer = 0;
    std::string site;
    double score = 0;
};

struct ImportanceReport {
    std::vector<SiteScore> sites;      // layer-major, declared site order
    std::vector<double> layer_totals;  // sum over each layer's sites
    i64 peak_layer = 0;                // argmax total, smallest index on ties

    void save_csv(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw InputError("cannot write " + path.string());
        os << "layer,site,score\n";
        for (const auto& s : sites)
            os << s.layer << ',' << s.site << ',' << detail::fmt_metric(s.score) << '\n';
    }
};

namespace detail {

// Entries of the effective update (alpha/r) * B * A, materialized.
template <typename S>
std::vector<double> materialize_update(const LoraPair<S>& p, double scaling) {
    const i64 rank = p.A.shape()[0], d_in = p.A.shape()[1], d_out = p.B.shape()[0];
    std::vector<double> m(static_cast<std::size_t>(d_out * d_in), 0.0);
    auto a = p.A.data();
    auto b = p.B.data();
    for (i64 o = 0; o < d_out; ++o)
        for (i64 r = 0; r < rank; ++r) {
            const double bv = static_cast<double>(b[o * rank + r]);
            if (bv == 0) continue;
            for (i64 i = 0; i < d_in; ++i)
                m[o * d_in + i] += bv * static_cast<double>(a[r * d_in + i]);
        }
    for (double& v : m) v *= scaling;
    return m;
}

}  // namespace detail

template <typename S>
ImportanceReport layer_importance(const Adapter<S>& ad) {
    ImportanceReport rep;
    const double scaling = static_cast<double>(ad.scaling());
    for (std::size_t l = 0; l < ad.layers.size(); ++l) {
        double total = 0;
        for (int s = 0; s < kSitesPerLayer; ++s) {
            auto m = detail::materialize_update(ad.layers[l][s], scaling);
            double sq = 0;
            for (double v : m) sq += v * v;
            const double score = std::sqrt(sq);
            rep.sites.push_back({static_cast<i64>(l), kSiteNames[s], score});
            total += score;
        }
        rep.layer_totals.push_back(total);
    }
    rep.peak_layer = 0;
    for (std::size_t l = 1; l < rep.layer_totals.size(); ++l)
        if (rep.layer_totals[l] > rep.layer_totals[rep.peak_layer]) rep.peak_layer = static_cast<i64>(l);
    return rep;
}

// Copy of the adapter with every site outside the top-k by importance zeroed,
// used to hold interventions to a fixed component budget.
template <typename S>
Adapter<S> truncate_to_top_sites(const Adapter<S>& ad, std::size_t k) {
    auto rep = layer_importance(ad);
    std::vector<std::size_t> order(rep.sites.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return rep.sites[a].score > rep.sites[b].score;
    });
    std::vector<bool> keep(order.size(), false);
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i) keep[order[i]] = true;

    Adapter<S> out = ad.clone();
    for (std::size_t l = 0; l < out.layers.size(); ++l)
        for (int s = 0; s < kSitesPerLayer; ++s)
            if (!keep[l * kSitesPerLayer + static_cast<std::size_t>(s)]) {
                for (S& v : out.layers[l][s].A.data()) v = S(0);
                for (S& v : out.layers[l][s].B.data()) v = S(0);
            }
    return out;
}

// ------------------------------------------------------------- similarity

struct SimilarityMatrix {
    std::vector<std::string> names;
    std::vector<double> rho;  // n x n, row-major

    std::size_t size() const { return names.size(); }
    double rho_at(std::size_t i, std::size_t j) const { return rho[i * size() + j]; }
    double distance(std::size_t i, std::size_t j) const { return 1.0 - rho_at(i, j); }

    void save_csv(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw InputError("cannot write " + path.string());
        os << "task";
        for (const auto& n : names) os << ',' << n;
        os << '\n';
        for (std::size_t i = 0; i < size(); ++i) {
            os << names[i];
            for (std::size_t j = 0; j < size(); ++j) os << ',' << detail::fmt_metric(rho_at(i, j));
            os << '\n';
        }
    }
};

// Pearson correlation matrix of the given vectors (two-pass, 64-bit).
inline SimilarityMatrix similarity_from_vectors(std::vector<std::string> names,
                                                const std::vector<std::vector<double>>& vectors) {
    const std::size_t n = vectors.size();
    if (n < 2) throw ContractError("similarity: need at least two tasks");
    if (names.size() != n) throw ContractError("similarity: name/vector count mismatch");
    const std::size_t dim = vectors[0].size();
    for (const auto& v : vectors)
        if (v.size() != dim)
            throw ConfigError("similarity: adapter flatten lengths differ (" +
                              std::to_string(v.size()) + " vs " + std::to_string(dim) + ")");

    std::vector<double> mean(n, 0.0), sd(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (double v : vectors[i]) mean[i] += v;
        mean[i] /= static_cast<double>(dim);
        double var = 0;
        for (double v : vectors[i]) var += (v - mean[i]) * (v - mean[i]);
        if (var == 0)
            throw InputError("similarity: '" + names[i] +
                             "' is a constant vector; correlation undefined");
        sd[i] = std::sqrt(var);
    }

    SimilarityMatrix sm;
    sm.names = std::move(names);
    sm.rho.assign(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double cov = 0;
            for (std::size_t t = 0; t < dim; ++t)
                cov += (vectors[i][t] - mean[i]) * (vectors[j][t] - mean[j]);
            const double r = std::clamp(cov / (sd[i] * sd[j]), -1.0, 1.0);
            sm.rho[i * n + j] = r;
            sm.rho[j * n + i] = r;
        }
    return sm;
}

template <typename S>
SimilarityMatrix task_similarity(const std::vector<std::pair<std::string, const Adapter<S>*>>& sets) {
    std::vector<std::string> names;
    std::vector<std::vector<double>> vectors;
    for (const auto& [name, ad] : sets) {
        names.push_back(name);
        vectors.push_back(ad->flatten());
    }
    return similarity_from_vectors(std::move(names), vectors);
}

// ------------------------------------------------------------ eigensolver

namespace detail {

// Cyclic Jacobi sweeps on a symmetric matrix; eigenvectors come back as the
// columns of `vectors`. Matrices here are tiny (task count), so simplicity
// beats speed.
inline void jacobi_eigen(std::vector<double> a, std::size_t n, std::vector<double>& values,
                         std::vector<double>& vectors, double tol = 1e-10) {
    vectors.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) vectors[i * n + i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (std::sqrt(2 * off) <= tol) break;

        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (apq == 0) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1.0 / std::sqrt(t * t + 1);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = vectors[k * n + p], vkq = vectors[k * n + q];
                    vectors[k * n + p] = c * vkp - s * vkq;
                    vectors[k * n + q] = s * vkp + c * vkq;
                }
            }
    }
    values.resize(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = a[i * n + i];
}

}  // namespace detail

// -------------------------------------------------------------------- MDS

struct Embedding2D {
    std::vector<std::string> names;
    std::vector<std::array<double, 2>> coords;
    std::array<double, 2> eigenvalues{0, 0};  // the two used, after clamping
    double stress = 0;

    void save_csv(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw InputError("cannot write " + path.string());
        os << "task,x,y\n";
        for (std::size_t i = 0; i < names.size(); ++i)
            os << names[i] << ',' << detail::fmt_metric(coords[i][0]) << ','
               << detail::fmt_metric(coords[i][1]) << '\n';
    }
};

// Classical MDS: double-center the squared distances, take the top two
// eigenpairs, scale eigenvectors by sqrt(eigenvalue). Axis signs are fixed by
// making the first nonzero coordinate of each axis positive so repeated runs
// emit identical bytes.
inline Embedding2D mds_embed(const SimilarityMatrix& sm) {
    const std::size_t n = sm.size();
    if (n < 2) throw InputError("mds: need at least two points");

    std::vector<double> d2(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double d = sm.distance(i, j);
            d2[i * n + j] = d * d;
        }

    std::vector<double> rowm(n, 0.0);
    double grand = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) rowm[i] += d2[i * n + j];
        rowm[i] /= static_cast<double>(n);
        grand += rowm[i];
    }
    grand /= static_cast<double>(n);

    std::vector<double> b(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            b[i * n + j] = -0.5 * (d2[i * n + j] - rowm[i] - rowm[j] + grand);

    std::vector<double> values, vectors;
    detail::jacobi_eigen(b, n, values, vectors);

    std::array<std::size_t, 2> top{0, 0};
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return values[x] > values[y]; });
    top = {order[0], order[1]};

    Embedding2D emb;
    emb.names = sm.names;
    emb.coords.assign(n, {0.0, 0.0});
    for (int k = 0; k < 2; ++k) {
        const double lambda = std::max(values[top[static_cast<std::size_t>(k)]], 0.0);
        emb.eigenvalues[static_cast<std::size_t>(k)] = lambda;
        const double scale = std::sqrt(lambda);
        for (std::size_t i = 0; i < n; ++i)
            emb.coords[i][static_cast<std::size_t>(k)] =
                vectors[i * n + top[static_cast<std::size_t>(k)]] * scale;
    }

    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs(emb.coords[i][k]) < 1e-12) continue;
            if (emb.coords[i][k] < 0)
                for (std::size_t j = 0; j < n; ++j) emb.coords[j][k] = -emb.coords[j][k];
            break;
        }

    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = emb.coords[i][0] - emb.coords[j][0];
            const double dy = emb.coords[i][1] - emb.coords[j][1];
            const double dhat = std::sqrt(dx * dx + dy * dy);
            const double d = sm.distance(i, j);
            num += (d - dhat) * (d - dhat);
            den += d * d;
        }
    emb.stress = den > 0 ? std::sqrt(num / den) : 0.0;
    return emb;
}

// -------------------------------------------------------------- clustering

struct ClusterReport {
    std::optional<double> intra;  // mean distance within a category
    std::optional<double> inter;  // mean distance across categories
    std::optional<double> ratio;  // intra / inter when both are defined
};

// Distances given as a full n x n row-major matrix.
inline ClusterReport cluster_distances(const std::vector<double>& dist, std::size_t n,
                                       const std::vector<std::string>& labels) {
    if (labels.size() != n) throw ContractError("cluster: label count mismatch");
    if (dist.size() != n * n) throw ContractError("cluster: distance matrix shape mismatch");
    double intra_sum = 0, inter_sum = 0;
    std::size_t intra_n = 0, inter_n = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            if (labels[i] == labels[j]) {
                intra_sum += dist[i * n + j];
                ++intra_n;
            } else {
                inter_sum += dist[i * n + j];
                ++inter_n;
            }
        }
    ClusterReport rep;
    if (intra_n > 0) rep.intra = intra_sum / static_cast<double>(intra_n);
    if (inter_n > 0) rep.inter = inter_sum / static_cast<double>(inter_n);
    if (rep.intra && rep.inter && *rep.inter > 0) rep.ratio = *rep.intra / *rep.inter;
    return rep;
}

inline ClusterReport cluster_report(const SimilarityMatrix& sm,
                                    const std::vector<std::string>& labels) {
    const std::size_t n = sm.size();
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) dist[i * n + j] = sm.distance(i, j);
    return cluster_distances(dist, n, labels);
}

inline ClusterReport cluster_report(const Embedding2D& emb,
                                    const std::vector<std::string>& labels) {
    const std::size_t n = emb.names.size();
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double dx = emb.coords[i][0] - emb.coords[j][0];
            const double dy = emb.coords[i][1] - emb.coords[j][1];
            dist[i * n + j] = std::sqrt(dx * dx + dy * dy);
        }
    return cluster_distances(dist, n, labels);
}

}  // namespace scalpel
