#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "tten/common.hpp"

namespace tten {

struct RankedList {
    int32_t user = 0;
    std::vector<int32_t> items;   // descending score, ties by ascending item id
    std::vector<double> scores;
    bool truncated = false;       // fewer than k unmasked items existed
};

/// Relevance score cos(e_u, e_i) * ||e_i||^(1-p). p=1 is pure cosine, p=0 the
/// plain inner product. Zero-norm vectors score 0.
inline double tten_score(Eigen::Ref<const Eigen::RowVectorXd> user_emb,
                         Eigen::Ref<const Eigen::RowVectorXd> item_emb, double p) {
    if (user_emb.size() != item_emb.size())
        throw std::invalid_argument("tten_score: dimension mismatch");
    const double nu = user_emb.norm();
    const double ni = item_emb.norm();
    if (nu == 0.0 || ni == 0.0) return 0.0;
    return user_emb.dot(item_emb) / (nu * ni) * std::pow(ni, 1.0 - p);
}

namespace detail {

inline RankedList topk_from_scores(int32_t user, std::vector<double>& scores, int k) {
    const int32_t num_items = static_cast<int32_t>(scores.size());
    std::vector<int32_t> order;
    order.reserve(num_items);
    for (int32_t i = 0; i < num_items; ++i)
        if (scores[i] != -std::numeric_limits<double>::infinity()) order.push_back(i);
    const size_t take = std::min<size_t>(static_cast<size_t>(k), order.size());
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      [&](int32_t a, int32_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    RankedList out;
    out.user = user;
    out.truncated = take < static_cast<size_t>(k);
    out.items.assign(order.begin(), order.begin() + take);
    out.scores.reserve(take);
    for (int32_t i : out.items) out.scores.push_back(scores[i]);
    return out;
}

}  // namespace detail

/// Top-k items for one user from the final embedding table (users in rows
/// [0,U), items in [U,U+I)), with the user's train items masked out.
inline RankedList recommend_topk(const Mat& final_emb, int32_t num_users, int32_t num_items,
                                 int32_t user, int k, double p,
                                 const std::vector<int32_t>& train_items) {
    if (k < 1) throw std::invalid_argument("recommend_topk: k must be >= 1");
    if (user < 0 || user >= num_users) throw std::invalid_argument("recommend_topk: bad user id");

    const auto user_row = final_emb.row(user);
    const double nu = user_row.norm();
    std::vector<double> scores(num_items);
    for (int32_t i = 0; i < num_items; ++i) {
        const auto item_row = final_emb.row(num_users + i);
        const double ni = item_row.norm();
        scores[i] = (nu == 0.0 || ni == 0.0)
                        ? 0.0
                        : user_row.dot(item_row) / (nu * ni) * std::pow(ni, 1.0 - p);
    }
    for (int32_t i : train_items) scores[i] = -std::numeric_limits<double>::infinity();
    return detail::topk_from_scores(user, scores, k);
}

}  // namespace tten
