#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tten/common.hpp"
#include "tten/graph.hpp"

namespace tten {

/// Trainable base embeddings: rows [0, U) are users, rows [U, U+I) items.
struct EmbeddingModel {
    Mat base;
    int32_t num_users = 0;
    int32_t num_items = 0;
    int num_layers = 0;  // K
    int dim = 0;
};

struct FinalEmbeddings {
    Mat final;                // mean of layers 0..K
    std::vector<Mat> layers;  // populated only when keep_cache was set
};

/// Xavier-uniform with fan_in = fan_out = d, i.e. entries on [-sqrt(3/d), sqrt(3/d)].
inline EmbeddingModel init_xavier(int32_t num_users, int32_t num_items, int dim, int num_layers,
                                  uint64_t seed) {
    if (num_users <= 0 || num_items <= 0 || dim < 1 || num_layers < 0)
        throw std::invalid_argument("init_xavier: invalid sizes");
    EmbeddingModel m;
    m.num_users = num_users;
    m.num_items = num_items;
    m.num_layers = num_layers;
    m.dim = dim;
    m.base.resize(num_users + num_items, dim);
    const double bound = std::sqrt(3.0 / dim);
    Rng rng(seed);
    std::uniform_real_distribution<double> uni(-bound, bound);
    for (Eigen::Index r = 0; r < m.base.rows(); ++r)
        for (Eigen::Index c = 0; c < dim; ++c) m.base(r, c) = uni(rng);
    return m;
}

inline FinalEmbeddings forward(const EmbeddingModel& model, const NormalizedAdjacency& adj,
                               bool keep_cache = false) {
    if (model.base.rows() != adj.node_count)
        throw std::invalid_argument("forward: model/adjacency node count mismatch");
    FinalEmbeddings out;
    Mat layer = model.base;
    Mat sum = layer;
    if (keep_cache) out.layers.push_back(layer);
    for (int k = 0; k < model.num_layers; ++k) {
        layer = propagate(adj, layer);
        sum += layer;
        if (keep_cache) out.layers.push_back(layer);
    }
    out.final = sum / static_cast<double>(model.num_layers + 1);
    return out;
}

/// Adjoint of `forward` w.r.t. the base table. The propagation operator is
/// symmetric, so the gradient is the same layer-mean of propagated copies.
inline Mat backward(const Mat& grad_final, const NormalizedAdjacency& adj, int num_layers) {
    if (grad_final.rows() != adj.node_count)
        throw std::invalid_argument("backward: gradient/adjacency node count mismatch");
    Mat layer = grad_final;
    Mat sum = layer;
    for (int k = 0; k < num_layers; ++k) {
        layer = propagate(adj, layer);
        sum += layer;
    }
    return sum / static_cast<double>(num_layers + 1);
}

/// Text format, 9 significant digits:
///   TTEN-EMB 1 <num_users> <num_items> <dim>
///   <row_index> <v_1> ... <v_d>
inline void save_embeddings(const Mat& table, int32_t num_users, int32_t num_items,
                            const std::string& path) {
    if (table.rows() != static_cast<Eigen::Index>(num_users) + num_items)
        throw std::invalid_argument("save_embeddings: row count != num_users + num_items");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write embedding file: " + path);
    out << "TTEN-EMB 1 " << num_users << ' ' << num_items << ' ' << table.cols() << '\n';
    char buf[64];
    for (Eigen::Index r = 0; r < table.rows(); ++r) {
        out << r;
        for (Eigen::Index c = 0; c < table.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), " %.9g", table(r, c));
            out << buf;
        }
        out << '\n';
    }
}

struct LoadedEmbeddings {
    Mat table;
    int32_t num_users = 0;
    int32_t num_items = 0;
};

inline LoadedEmbeddings load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    std::istringstream header(line);
    std::string magic;
    int version = 0, num_users = 0, num_items = 0, dim = 0;
    if (!(header >> magic >> version >> num_users >> num_items >> dim) || magic != "TTEN-EMB"
        || version != 1 || num_users < 0 || num_items < 0 || dim < 0)
        throw std::runtime_error(path + ": bad header");

    LoadedEmbeddings out;
    out.num_users = num_users;
    out.num_items = num_items;
    out.table.resize(static_cast<Eigen::Index>(num_users) + num_items, dim);
    for (Eigen::Index r = 0; r < out.table.rows(); ++r) {
        if (!std::getline(in, line))
            throw std::runtime_error(path + ": truncated at row " + std::to_string(r));
        std::istringstream ss(line);
        Eigen::Index idx = -1;
        if (!(ss >> idx) || idx != r)
            throw std::runtime_error(path + ": bad row index at row " + std::to_string(r));
        for (Eigen::Index c = 0; c < dim; ++c)
            if (!(ss >> out.table(r, c)))
                throw std::runtime_error(path + ": bad value at row " + std::to_string(r));
        double extra;
        if (ss >> extra)
            throw std::runtime_error(path + ": too many values at row " + std::to_string(r));
    }
    return out;
}

}  // namespace tten
