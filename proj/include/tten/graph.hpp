#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tten/common.hpp"
#include "tten/dataset.hpp"

namespace tten {

/// Symmetric-normalized bipartite adjacency D^(-1/2) A D^(-1/2) in CSR form
/// over U+I nodes (users first). Degree-0 nodes simply have empty rows.
struct NormalizedAdjacency {
    int32_t node_count = 0;
    std::vector<int64_t> row_ptr;
    std::vector<int32_t> col;
    std::vector<double> weight;
};

inline NormalizedAdjacency build_norm_adjacency(const InteractionDataset& ds) {
    const int32_t U = ds.num_users, I = ds.num_items;
    NormalizedAdjacency adj;
    adj.node_count = U + I;
    adj.row_ptr.assign(adj.node_count + 1, 0);

    const auto item_deg = compute_popularity(ds);
    for (int32_t u = 0; u < U; ++u) adj.row_ptr[u + 1] = ds.train[u].size();
    for (int32_t i = 0; i < I; ++i) adj.row_ptr[U + i + 1] = item_deg[i];
    for (int32_t n = 0; n < adj.node_count; ++n) adj.row_ptr[n + 1] += adj.row_ptr[n];

    adj.col.resize(adj.row_ptr.back());
    adj.weight.resize(adj.row_ptr.back());
    std::vector<int64_t> fill(adj.node_count, 0);
    for (int32_t u = 0; u < U; ++u) {
        const double du = static_cast<double>(ds.train[u].size());
        for (int32_t i : ds.train[u]) {
            const double w = 1.0 / std::sqrt(du * static_cast<double>(item_deg[i]));
            const int64_t pu = adj.row_ptr[u] + fill[u]++;
            adj.col[pu] = U + i;
            adj.weight[pu] = w;
            const int64_t pi = adj.row_ptr[U + i] + fill[U + i]++;
            adj.col[pi] = u;
            adj.weight[pi] = w;
        }
    }
    return adj;
}

/// One propagation layer: out = A_norm * in. Row accumulation order is fixed
/// by the CSR layout, so parallel and sequential runs match bitwise.
inline Mat propagate(const NormalizedAdjacency& adj, const Mat& embeddings) {
    if (embeddings.rows() != adj.node_count)
        throw std::invalid_argument("propagate: embedding row count != node count");
    Mat out = Mat::Zero(embeddings.rows(), embeddings.cols());
#pragma omp parallel for schedule(static)
    for (int32_t r = 0; r < adj.node_count; ++r)
        for (int64_t p = adj.row_ptr[r]; p < adj.row_ptr[r + 1]; ++p)
            out.row(r) += adj.weight[p] * embeddings.row(adj.col[p]);
    return out;
}

}  // namespace tten
