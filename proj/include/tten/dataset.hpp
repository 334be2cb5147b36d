#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tten/common.hpp"

namespace tten {

/// Implicit-feedback interactions split into train / validation / test.
/// Item sets are kept sorted; user and item ids are dense in [0, U) / [0, I).
struct InteractionDataset {
    int32_t num_users = 0;
    int32_t num_items = 0;
    std::vector<std::vector<int32_t>> train;
    std::vector<std::vector<int32_t>> validation;
    std::vector<std::vector<int32_t>> test;
    std::vector<int64_t> popularity;  // per-item train interaction count

    // Dense id -> original file id. Identity unless the input files had gaps.
    std::vector<int64_t> original_user_ids;
    std::vector<int64_t> original_item_ids;

    int64_t train_interactions() const {
        int64_t n = 0;
        for (const auto& s : train) n += static_cast<int64_t>(s.size());
        return n;
    }
};

/// Equal-size popularity buckets; group num_groups holds the most popular items.
struct PopularityGroups {
    int num_groups = 0;
    std::vector<int> assignment;  // per item, in [1, num_groups]
};

struct SyntheticSpec {
    int32_t num_users = 2000;
    int32_t num_items = 1000;
    int32_t latent_dim = 16;
    double popularity_exponent = 1.0;
    double popularity_mix = 0.5;  // weight of the popularity prior in train sampling
    int32_t interactions_per_user = 40;
    int32_t test_items_per_user = 5;
    uint64_t seed = 0;
};

struct SyntheticGroundTruth {
    Mat user_latents;            // U x latent_dim, rows on the unit sphere
    Mat item_latents;            // I x latent_dim
    std::vector<double> item_prior;  // pi, sums to 1
};

inline std::vector<int64_t> compute_popularity(const InteractionDataset& ds) {
    std::vector<int64_t> pop(ds.num_items, 0);
    for (const auto& items : ds.train)
        for (int32_t i : items) pop[i]++;
    return pop;
}

namespace detail {

template <typename T>
inline std::vector<int> assign_groups_impl(const std::vector<T>& popularity, int num_groups) {
    const int n = static_cast<int>(popularity.size());
    if (num_groups < 1 || num_groups > n)
        throw std::invalid_argument("assign_groups: num_groups must be in [1, num_items]");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (popularity[a] != popularity[b]) return popularity[a] > popularity[b];
        return a < b;
    });
    std::vector<int> assignment(n);
    const int base = n / num_groups;
    const int rem = n % num_groups;
    int pos = 0;
    // Block 0 is the most popular and becomes group G; the first `rem`
    // blocks take one extra item.
    for (int block = 0; block < num_groups; ++block) {
        const int size = base + (block < rem ? 1 : 0);
        for (int j = 0; j < size; ++j) assignment[order[pos++]] = num_groups - block;
    }
    return assignment;
}

}  // namespace detail

inline PopularityGroups assign_groups(const std::vector<int64_t>& popularity, int num_groups) {
    return {num_groups, detail::assign_groups_impl(popularity, num_groups)};
}

inline PopularityGroups assign_groups(const std::vector<double>& popularity, int num_groups) {
    return {num_groups, detail::assign_groups_impl(popularity, num_groups)};
}

namespace detail {

struct RawInteractions {
    std::vector<std::pair<int64_t, int64_t>> pairs;  // (user, item) original ids
};

inline RawInteractions parse_interaction_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open interaction file: " + path);
    RawInteractions raw;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        int64_t user;
        if (!(ss >> user) || user < 0)
            throw std::runtime_error(path + ":" + std::to_string(line_no)
                                     + ": expected non-negative user id");
        int64_t item;
        while (ss >> item) {
            if (item < 0)
                throw std::runtime_error(path + ":" + std::to_string(line_no)
                                         + ": negative item id");
            raw.pairs.emplace_back(user, item);
        }
        if (!ss.eof())
            throw std::runtime_error(path + ":" + std::to_string(line_no)
                                     + ": malformed token");
    }
    return raw;
}

// Dense remap: identity when observed ids already cover [0, max], otherwise
// sorted-unique ids are packed and the map retained.
inline std::vector<int64_t> dense_id_map(std::vector<int64_t> ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

// Seeded uniform draw of `count` elements without replacement (partial
// Fisher-Yates over the sorted item list). Used for the validation carve-out.
inline std::vector<int32_t> draw_without_replacement(std::vector<int32_t> items, size_t count,
                                                     Rng& rng) {
    for (size_t k = 0; k < count; ++k) {
        std::uniform_int_distribution<size_t> d(k, items.size() - 1);
        std::swap(items[k], items[d(rng)]);
    }
    items.resize(count);
    return items;
}

}  // namespace detail

/// Moves floor(fraction * |test_u|) items per user from test to validation.
/// Draws are seeded and independent per user so user order does not matter.
inline void carve_validation(InteractionDataset& ds, double fraction, uint64_t seed) {
    if (fraction < 0.0 || fraction >= 1.0)
        throw std::invalid_argument("validation fraction must be in [0, 1)");
    for (int32_t u = 0; u < ds.num_users; ++u) {
        const size_t take = static_cast<size_t>(fraction * ds.test[u].size());
        if (take == 0) continue;
        Rng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(u) + 1);
        auto moved = detail::draw_without_replacement(ds.test[u], take, rng);
        std::sort(moved.begin(), moved.end());
        std::vector<int32_t> remaining;
        std::set_difference(ds.test[u].begin(), ds.test[u].end(), moved.begin(), moved.end(),
                            std::back_inserter(remaining));
        ds.validation[u] = std::move(moved);
        ds.test[u] = std::move(remaining);
    }
}

inline InteractionDataset load_dataset(const std::string& train_path, const std::string& test_path,
                                       double validation_fraction, uint64_t seed) {
    auto train_raw = detail::parse_interaction_file(train_path);
    auto test_raw = detail::parse_interaction_file(test_path);

    std::vector<int64_t> user_ids, item_ids;
    for (const auto* raw : {&train_raw, &test_raw})
        for (auto [u, i] : raw->pairs) {
            user_ids.push_back(u);
            item_ids.push_back(i);
        }
    if (user_ids.empty()) throw std::runtime_error("no interactions found");

    InteractionDataset ds;
    ds.original_user_ids = detail::dense_id_map(std::move(user_ids));
    ds.original_item_ids = detail::dense_id_map(std::move(item_ids));
    ds.num_users = static_cast<int32_t>(ds.original_user_ids.size());
    ds.num_items = static_cast<int32_t>(ds.original_item_ids.size());

    auto dense = [](const std::vector<int64_t>& map, int64_t id) {
        return static_cast<int32_t>(std::lower_bound(map.begin(), map.end(), id) - map.begin());
    };

    ds.train.resize(ds.num_users);
    ds.validation.resize(ds.num_users);
    ds.test.resize(ds.num_users);
    for (auto [u, i] : train_raw.pairs)
        ds.train[dense(ds.original_user_ids, u)].push_back(dense(ds.original_item_ids, i));
    for (auto [u, i] : test_raw.pairs)
        ds.test[dense(ds.original_user_ids, u)].push_back(dense(ds.original_item_ids, i));

    for (auto* split : {&ds.train, &ds.test})
        for (auto& items : *split) {
            std::sort(items.begin(), items.end());
            items.erase(std::unique(items.begin(), items.end()), items.end());
        }

    for (int32_t u = 0; u < ds.num_users; ++u)
        for (int32_t i : ds.test[u])
            if (std::binary_search(ds.train[u].begin(), ds.train[u].end(), i))
                throw std::runtime_error(
                    "item in both train and test for the same user: user "
                    + std::to_string(ds.original_user_ids[u]) + ", item "
                    + std::to_string(ds.original_item_ids[i]));

    carve_validation(ds, validation_fraction, seed);
    ds.popularity = compute_popularity(ds);
    return ds;
}

/// One line per user: `<user> <item> <item> ...`, every user gets a line.
inline void write_interactions(const std::string& path,
                               const std::vector<std::vector<int32_t>>& per_user) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write interaction file: " + path);
    for (size_t u = 0; u < per_user.size(); ++u) {
        out << u;
        for (int32_t i : per_user[u]) out << ' ' << i;
        out << '\n';
    }
}

namespace detail {

// Categorical draw by inverse CDF over unnormalized weights.
inline int32_t draw_categorical(const std::vector<double>& cdf, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double x = unit(rng) * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), x);
    return static_cast<int32_t>(std::min<size_t>(it - cdf.begin(), cdf.size() - 1));
}

}  // namespace detail

/// Synthetic implicit-feedback generator. Train interactions follow a mixture
/// of latent-affinity softmax and a power-law popularity prior; the test set
/// takes each user's highest-affinity unseen items spread uniformly over
/// popularity groups, so the test distribution is unbiased by construction.
inline std::pair<InteractionDataset, SyntheticGroundTruth> generate_synthetic(
    const SyntheticSpec& spec) {
    if (spec.num_users <= 0 || spec.num_items <= 0 || spec.latent_dim <= 0
        || spec.interactions_per_user <= 0 || spec.test_items_per_user <= 0)
        throw std::invalid_argument("synthetic spec: all counts must be positive");
    if (spec.popularity_mix < 0.0 || spec.popularity_mix > 1.0)
        throw std::invalid_argument("synthetic spec: popularity_mix must be in [0,1]");
    if (spec.interactions_per_user + spec.test_items_per_user > spec.num_items)
        throw std::invalid_argument(
            "synthetic spec: interactions_per_user + test_items_per_user exceeds num_items");

    const int32_t U = spec.num_users, I = spec.num_items, d = spec.latent_dim;
    Rng rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SyntheticGroundTruth gt;
    gt.user_latents.resize(U, d);
    gt.item_latents.resize(I, d);
    for (auto* m : {&gt.user_latents, &gt.item_latents})
        for (Eigen::Index r = 0; r < m->rows(); ++r) {
            for (Eigen::Index c = 0; c < d; ++c) (*m)(r, c) = gauss(rng);
            m->row(r).normalize();
        }

    gt.item_prior.resize(I);
    double prior_sum = 0.0;
    for (int32_t i = 0; i < I; ++i) {
        gt.item_prior[i] = std::pow(static_cast<double>(i + 1), -spec.popularity_exponent);
        prior_sum += gt.item_prior[i];
    }
    for (double& p : gt.item_prior) p /= prior_sum;

    constexpr double kAffinitySharpness = 8.0;
    constexpr int kTestGroups = 5;
    const PopularityGroups prior_groups = assign_groups(gt.item_prior, kTestGroups);

    InteractionDataset ds;
    ds.num_users = U;
    ds.num_items = I;
    ds.train.resize(U);
    ds.validation.resize(U);
    ds.test.resize(U);

    std::vector<double> affinity(I), mix_cdf(I);
    std::uniform_int_distribution<int> pick_group(1, kTestGroups);
    for (int32_t u = 0; u < U; ++u) {
        double aff_sum = 0.0;
        for (int32_t i = 0; i < I; ++i) {
            affinity[i] = std::exp(kAffinitySharpness * gt.user_latents.row(u).dot(
                                                            gt.item_latents.row(i)));
            aff_sum += affinity[i];
        }
        double acc = 0.0;
        for (int32_t i = 0; i < I; ++i) {
            acc += (1.0 - spec.popularity_mix) * affinity[i] / aff_sum
                   + spec.popularity_mix * gt.item_prior[i];
            mix_cdf[i] = acc;
        }

        std::vector<char> in_train(I, 0);
        auto& train_u = ds.train[u];
        while (static_cast<int32_t>(train_u.size()) < spec.interactions_per_user) {
            const int32_t i = detail::draw_categorical(mix_cdf, rng);
            if (in_train[i]) continue;
            in_train[i] = 1;
            train_u.push_back(i);
        }
        std::sort(train_u.begin(), train_u.end());

        auto& test_u = ds.test[u];
        std::vector<char> in_test(I, 0);
        for (int32_t t = 0; t < spec.test_items_per_user; ++t) {
            // Try a uniformly drawn group first; fall back to scanning all
            // groups so the draw always succeeds.
            int32_t best = -1;
            for (int attempt = 0; attempt < kTestGroups + 1 && best < 0; ++attempt) {
                const int g = attempt == 0 ? pick_group(rng) : 1 + (attempt - 1);
                double best_aff = -1.0;
                for (int32_t i = 0; i < I; ++i) {
                    if (prior_groups.assignment[i] != g || in_train[i] || in_test[i]) continue;
                    const double a = gt.user_latents.row(u).dot(gt.item_latents.row(i));
                    if (best < 0 || a > best_aff) {
                        best = i;
                        best_aff = a;
                    }
                }
            }
            in_test[best] = 1;
            test_u.push_back(best);
        }
        std::sort(test_u.begin(), test_u.end());
    }

    ds.popularity = compute_popularity(ds);
    return {std::move(ds), std::move(gt)};
}

}  // namespace tten
