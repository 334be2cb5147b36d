#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "tten/common.hpp"
#include "tten/dataset.hpp"
#include "tten/scoring.hpp"

namespace tten {

struct EvalReport {
    double recall = 0.0;
    double ndcg = 0.0;
    int k = 0;
    double p = 1.0;
    int64_t users_evaluated = 0;
    std::vector<double> group_frequency;  // fraction of top-k slots per group
    std::vector<double> group_recall;     // NaN where a group has no test items
};

constexpr int kCosineHistogramBins = 50;

/// Per-user mean cosine between the user's final embedding and each of the
/// four item quadrants (popularity x test membership). NaN marks an empty
/// quadrant for that user.
struct CosineQuadrantStats {
    std::vector<double> positive_popular;
    std::vector<double> negative_popular;
    std::vector<double> positive_unpopular;
    std::vector<double> negative_unpopular;
    // Histograms over users with a non-empty quadrant, 50 uniform bins on [-1,1].
    std::array<std::vector<int64_t>, 4> histograms;
};

inline double recall_at_k(const RankedList& ranked, const std::vector<int32_t>& test_items,
                          int k) {
    if (test_items.empty()) throw std::invalid_argument("recall_at_k: empty test set");
    int64_t hits = 0;
    const size_t top = std::min<size_t>(ranked.items.size(), static_cast<size_t>(k));
    for (size_t r = 0; r < top; ++r)
        if (std::binary_search(test_items.begin(), test_items.end(), ranked.items[r])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(test_items.size());
}

/// Binary-relevance NDCG: DCG over hit positions with 1/log2(rank+1) gains,
/// ideal DCG truncated at min(|test|, k).
inline double ndcg_at_k(const RankedList& ranked, const std::vector<int32_t>& test_items, int k) {
    if (test_items.empty()) throw std::invalid_argument("ndcg_at_k: empty test set");
    double dcg = 0.0;
    const size_t top = std::min<size_t>(ranked.items.size(), static_cast<size_t>(k));
    for (size_t r = 0; r < top; ++r)
        if (std::binary_search(test_items.begin(), test_items.end(), ranked.items[r]))
            dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    double idcg = 0.0;
    const size_t ideal = std::min<size_t>(test_items.size(), static_cast<size_t>(k));
    for (size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    return dcg / idcg;
}

/// Share of all top-k slots occupied by each popularity group (Fig. 1(a) style).
inline std::vector<double> group_frequency(const std::vector<RankedList>& lists,
                                           const PopularityGroups& groups) {
    std::vector<int64_t> slots(groups.num_groups, 0);
    int64_t total = 0;
    for (const auto& l : lists)
        for (int32_t i : l.items) {
            slots[groups.assignment[i] - 1]++;
            total++;
        }
    std::vector<double> out(groups.num_groups, 0.0);
    if (total > 0)
        for (int g = 0; g < groups.num_groups; ++g)
            out[g] = static_cast<double>(slots[g]) / static_cast<double>(total);
    return out;
}

/// Per-group recall: retrieved group-g test items over all group-g test items.
/// Groups with no test items anywhere are reported as NaN.
inline std::vector<double> group_recall(const std::vector<RankedList>& lists,
                                        const std::vector<std::vector<int32_t>>& test_sets,
                                        const PopularityGroups& groups, int k) {
    std::vector<int64_t> hits(groups.num_groups, 0), totals(groups.num_groups, 0);
    for (const auto& l : lists) {
        const auto& test_u = test_sets[l.user];
        for (int32_t i : test_u) totals[groups.assignment[i] - 1]++;
        const size_t top = std::min<size_t>(l.items.size(), static_cast<size_t>(k));
        for (size_t r = 0; r < top; ++r)
            if (std::binary_search(test_u.begin(), test_u.end(), l.items[r]))
                hits[groups.assignment[l.items[r]] - 1]++;
    }
    std::vector<double> out(groups.num_groups);
    for (int g = 0; g < groups.num_groups; ++g)
        out[g] = totals[g] == 0 ? std::numeric_limits<double>::quiet_NaN()
                                : static_cast<double>(hits[g]) / static_cast<double>(totals[g]);
    return out;
}

/// Pearson r between per-item final-embedding norm and train popularity.
inline double magnitude_popularity_correlation(const Mat& final_emb, int32_t num_users,
                                               int32_t num_items,
                                               const std::vector<int64_t>& popularity) {
    if (num_items < 2)
        throw std::invalid_argument("magnitude_popularity_correlation: need >= 2 items");
    double mx = 0.0, my = 0.0;
    std::vector<double> norms(num_items);
    for (int32_t i = 0; i < num_items; ++i) {
        norms[i] = final_emb.row(num_users + i).norm();
        mx += norms[i];
        my += static_cast<double>(popularity[i]);
    }
    mx /= num_items;
    my /= num_items;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (int32_t i = 0; i < num_items; ++i) {
        const double dx = norms[i] - mx;
        const double dy = static_cast<double>(popularity[i]) - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

namespace detail {

inline std::vector<RankedList> rank_all_users(const Mat& final_emb,
                                              const InteractionDataset& ds, int k, double p) {
    const int32_t U = ds.num_users, I = ds.num_items;
    std::vector<double> item_norm(I), item_scale(I);
    for (int32_t i = 0; i < I; ++i) {
        item_norm[i] = final_emb.row(U + i).norm();
        item_scale[i] = item_norm[i] == 0.0 ? 0.0 : std::pow(item_norm[i], -p);
    }
    std::vector<RankedList> lists;
    lists.reserve(U);
    std::vector<double> scores(I);
    for (int32_t u = 0; u < U; ++u) {
        if (ds.test[u].empty()) continue;  // users without test items are skipped
        const auto user_row = final_emb.row(u);
        const double nu = user_row.norm();
        for (int32_t i = 0; i < I; ++i)
            scores[i] = (nu == 0.0 || item_norm[i] == 0.0)
                            ? 0.0
                            : user_row.dot(final_emb.row(U + i)) / nu * item_scale[i];
        for (int32_t i : ds.train[u]) scores[i] = -std::numeric_limits<double>::infinity();
        lists.push_back(tten::detail::topk_from_scores(u, scores, k));
    }
    return lists;
}

}  // namespace detail

/// Full unbiased-test evaluation at one normalization strength.
inline EvalReport evaluate(const Mat& final_emb, const InteractionDataset& ds,
                           const PopularityGroups& groups, int k, double p) {
    auto lists = detail::rank_all_users(final_emb, ds, k, p);
    EvalReport rep;
    rep.k = k;
    rep.p = p;
    rep.users_evaluated = static_cast<int64_t>(lists.size());
    for (const auto& l : lists) {
        rep.recall += recall_at_k(l, ds.test[l.user], k);
        rep.ndcg += ndcg_at_k(l, ds.test[l.user], k);
    }
    if (!lists.empty()) {
        rep.recall /= static_cast<double>(lists.size());
        rep.ndcg /= static_cast<double>(lists.size());
    }
    rep.group_frequency = group_frequency(lists, groups);
    rep.group_recall = group_recall(lists, ds.test, groups, k);
    return rep;
}

/// Re-evaluates the same embeddings across a grid of p values (no retraining).
inline std::vector<EvalReport> p_sweep(const Mat& final_emb, const InteractionDataset& ds,
                                       const PopularityGroups& groups,
                                       const std::vector<double>& p_grid, int k) {
    if (p_grid.empty()) throw std::invalid_argument("p_sweep: empty grid");
    std::vector<EvalReport> out;
    out.reserve(p_grid.size());
    for (double p : p_grid) out.push_back(evaluate(final_emb, ds, groups, k, p));
    return out;
}

/// Cosine-similarity breakdown by popularity (top popular_fraction of items)
/// and preference (test membership). Train items are excluded from the
/// negative quadrants.
inline CosineQuadrantStats cosine_quadrant_analysis(const Mat& final_emb,
                                                    const InteractionDataset& ds,
                                                    double popular_fraction = 0.2) {
    if (popular_fraction <= 0.0 || popular_fraction >= 1.0)
        throw std::invalid_argument("cosine_quadrant_analysis: popular_fraction in (0,1)");
    const int32_t U = ds.num_users, I = ds.num_items;

    std::vector<int32_t> order(I);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        if (ds.popularity[a] != ds.popularity[b]) return ds.popularity[a] > ds.popularity[b];
        return a < b;
    });
    const int32_t num_popular =
        std::max<int32_t>(1, static_cast<int32_t>(std::ceil(popular_fraction * I)));
    std::vector<char> popular(I, 0);
    for (int32_t r = 0; r < num_popular; ++r) popular[order[r]] = 1;

    std::vector<double> item_norm(I);
    for (int32_t i = 0; i < I; ++i) item_norm[i] = final_emb.row(U + i).norm();

    CosineQuadrantStats stats;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (auto* v : {&stats.positive_popular, &stats.negative_popular,
                    &stats.positive_unpopular, &stats.negative_unpopular})
        v->assign(U, nan);
    for (auto& h : stats.histograms) h.assign(kCosineHistogramBins, 0);

    for (int32_t u = 0; u < U; ++u) {
        const auto user_row = final_emb.row(u);
        const double nu = user_row.norm();
        double sum[4] = {0, 0, 0, 0};
        int64_t cnt[4] = {0, 0, 0, 0};
        for (int32_t i = 0; i < I; ++i) {
            const bool positive = std::binary_search(ds.test[u].begin(), ds.test[u].end(), i);
            if (!positive && std::binary_search(ds.train[u].begin(), ds.train[u].end(), i))
                continue;
            const int q = (positive ? 0 : 1) + (popular[i] ? 0 : 2);
            const double c = (nu == 0.0 || item_norm[i] == 0.0)
                                 ? 0.0
                                 : user_row.dot(final_emb.row(U + i)) / (nu * item_norm[i]);
            sum[q] += c;
            cnt[q]++;
        }
        double* means[4] = {&stats.positive_popular[u], &stats.negative_popular[u],
                            &stats.positive_unpopular[u], &stats.negative_unpopular[u]};
        for (int q = 0; q < 4; ++q) {
            if (cnt[q] == 0) continue;
            const double m = sum[q] / static_cast<double>(cnt[q]);
            *means[q] = m;
            int bin = static_cast<int>((m + 1.0) / 2.0 * kCosineHistogramBins);
            bin = std::clamp(bin, 0, kCosineHistogramBins - 1);
            stats.histograms[q][bin]++;
        }
    }
    return stats;
}

}  // namespace tten
