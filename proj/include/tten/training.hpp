#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "tten/common.hpp"
#include "tten/dataset.hpp"
#include "tten/evaluation.hpp"
#include "tten/graph.hpp"
#include "tten/model.hpp"
#include "tten/scoring.hpp"

namespace tten {

enum class LossKind { BPR, SSM };

struct TrainConfig {
    LossKind loss_kind = LossKind::SSM;
    double learning_rate = 1e-3;
    int batch_size = 4096;
    int max_epochs = 300;
    int early_stop_min_epoch = 50;
    int patience = 5;
    int eval_every = 5;
    double temperature = 0.1;
    double l2_coeff = 1e-7;  // 1e-5 for BPR, 1e-7 for SSM by convention
    int num_layers = 3;
    int dim = 64;
    int eval_k = 20;
    double eval_p = 1.0;  // TTEN strength for validation evaluation
    uint64_t seed = 0;

    void validate() const {
        if (learning_rate <= 0.0 || batch_size < 1 || temperature <= 0.0 || l2_coeff < 0.0
            || patience < 1 || max_epochs < 1 || eval_every < 1 || dim < 1 || num_layers < 0)
            throw std::invalid_argument("invalid train config");
    }
};

struct AdamState {
    Mat m, v;
    int64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(Eigen::Index rows, Eigen::Index cols)
        : m(Mat::Zero(rows, cols)), v(Mat::Zero(rows, cols)) {}
};

struct EvalPoint {
    int epoch = 0;
    double recall = 0.0;
    double loss_mean = 0.0;
};

struct TrainReport {
    std::vector<EvalPoint> history;    // one entry per validation evaluation
    std::vector<double> epoch_losses;  // mean batch loss per epoch
    int best_epoch = 0;
    double best_recall = 0.0;
    std::string stop_reason;  // "early" or "max_epochs"
    int64_t zero_norm_warnings = 0;
};

struct BprTriple {
    int32_t user;
    int32_t pos;
    int32_t neg;
};

struct SsmEntry {
    int32_t user;
    int32_t pos;
};

namespace detail {

struct InteractionIndex {
    std::vector<int64_t> user_offset;  // prefix sums of per-user train sizes
    int64_t total = 0;

    explicit InteractionIndex(const InteractionDataset& ds) {
        user_offset.resize(ds.num_users + 1, 0);
        for (int32_t u = 0; u < ds.num_users; ++u)
            user_offset[u + 1] = user_offset[u] + static_cast<int64_t>(ds.train[u].size());
        total = user_offset.back();
    }

    std::pair<int32_t, int32_t> pair_at(const InteractionDataset& ds, int64_t flat) const {
        const auto it = std::upper_bound(user_offset.begin(), user_offset.end(), flat);
        const int32_t u = static_cast<int32_t>(it - user_offset.begin() - 1);
        return {u, ds.train[u][flat - user_offset[u]]};
    }
};

}  // namespace detail

/// (u, i+) uniform over train interactions, j- uniform over items the user
/// has not interacted with. Users who interacted with every item are skipped.
inline std::vector<BprTriple> sample_bpr_batch(const InteractionDataset& ds, int batch_size,
                                               Rng& rng) {
    detail::InteractionIndex index(ds);
    if (index.total == 0) throw std::invalid_argument("sample_bpr_batch: no train interactions");
    std::uniform_int_distribution<int64_t> flat(0, index.total - 1);
    std::uniform_int_distribution<int32_t> item(0, ds.num_items - 1);
    std::vector<BprTriple> batch;
    batch.reserve(batch_size);
    while (static_cast<int>(batch.size()) < batch_size) {
        auto [u, pos] = index.pair_at(ds, flat(rng));
        if (static_cast<int32_t>(ds.train[u].size()) >= ds.num_items) continue;
        int32_t neg;
        do {
            neg = item(rng);
        } while (std::binary_search(ds.train[u].begin(), ds.train[u].end(), neg));
        batch.push_back({u, pos, neg});
    }
    return batch;
}

/// (u, i+) uniform over train interactions; each entry's negatives are the
/// positives of the other batch entries (shared in-batch negatives).
inline std::vector<SsmEntry> sample_ssm_batch(const InteractionDataset& ds, int batch_size,
                                              Rng& rng) {
    if (batch_size < 2) throw std::invalid_argument("sample_ssm_batch: batch_size must be >= 2");
    detail::InteractionIndex index(ds);
    if (index.total == 0) throw std::invalid_argument("sample_ssm_batch: no train interactions");
    std::uniform_int_distribution<int64_t> flat(0, index.total - 1);
    std::vector<SsmEntry> batch(batch_size);
    for (auto& e : batch) {
        auto [u, pos] = index.pair_at(ds, flat(rng));
        e = {u, pos};
    }
    return batch;
}

namespace detail {

// L2 term: lambda/B * sum of squared base norms over the distinct rows in the
// batch; the matching gradient goes straight to the base table.
inline double apply_l2(const Mat& base, const std::vector<int32_t>& rows, double lambda,
                       int batch_size, Mat& grad_base) {
    if (lambda == 0.0) return 0.0;
    std::vector<int32_t> distinct = rows;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    double reg = 0.0;
    const double scale = lambda / static_cast<double>(batch_size);
    for (int32_t r : distinct) {
        reg += base.row(r).squaredNorm();
        grad_base.row(r) += 2.0 * scale * base.row(r);
    }
    return scale * reg;
}

}  // namespace detail

/// Mean BPR loss over the batch with analytic gradient on the base table.
/// Scores are inner products of final (propagated) embeddings.
inline std::pair<double, Mat> bpr_loss_and_grad(const EmbeddingModel& model,
                                                const NormalizedAdjacency& adj,
                                                const std::vector<BprTriple>& batch,
                                                double lambda) {
    const auto fe = forward(model, adj);
    const int32_t U = model.num_users;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    Mat grad_final = Mat::Zero(fe.final.rows(), fe.final.cols());
    double loss = 0.0;
    for (const auto& t : batch) {
        const auto fu = fe.final.row(t.user);
        const auto fp = fe.final.row(U + t.pos);
        const auto fn = fe.final.row(U + t.neg);
        const double x = fu.dot(fp) - fu.dot(fn);
        // -ln sigmoid(x) = softplus(-x), stabilized for large |x|
        loss += x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
        const double coef = -inv_b / (1.0 + std::exp(x));  // d loss / d x, averaged
        grad_final.row(t.user) += coef * (fp - fn);
        grad_final.row(U + t.pos) += coef * fu;
        grad_final.row(U + t.neg) -= coef * fu;
    }
    loss *= inv_b;

    Mat grad_base = backward(grad_final, adj, model.num_layers);
    std::vector<int32_t> rows;
    rows.reserve(batch.size() * 3);
    for (const auto& t : batch) {
        rows.push_back(t.user);
        rows.push_back(U + t.pos);
        rows.push_back(U + t.neg);
    }
    loss += detail::apply_l2(model.base, rows, lambda, static_cast<int>(batch.size()), grad_base);
    return {loss, std::move(grad_base)};
}

/// Mean sampled-softmax loss with cosine logits at temperature tau. Negatives
/// are the other batch entries' positives; collisions are kept as-is.
/// Returns (loss, grad on base table); zero_norm_count reports degenerate rows.
inline std::pair<double, Mat> ssm_loss_and_grad(const EmbeddingModel& model,
                                                const NormalizedAdjacency& adj,
                                                const std::vector<SsmEntry>& batch, double tau,
                                                double lambda,
                                                int64_t* zero_norm_count = nullptr) {
    if (tau <= 0.0) throw std::invalid_argument("ssm_loss_and_grad: tau must be positive");
    const auto fe = forward(model, adj);
    const int32_t U = model.num_users;
    const int B = static_cast<int>(batch.size());
    const double inv_b = 1.0 / static_cast<double>(B);

    // Normalized copies of the batch rows; zero-norm rows stay zero (cos = 0).
    Mat un(B, model.dim), in(B, model.dim);
    Vec u_norm(B), i_norm(B);
    int64_t zero_norms = 0;
    for (int b = 0; b < B; ++b) {
        u_norm(b) = fe.final.row(batch[b].user).norm();
        i_norm(b) = fe.final.row(U + batch[b].pos).norm();
        if (u_norm(b) == 0.0 || i_norm(b) == 0.0) ++zero_norms;
        un.row(b) = u_norm(b) == 0.0 ? Eigen::RowVectorXd::Zero(model.dim).eval()
                                     : (fe.final.row(batch[b].user) / u_norm(b)).eval();
        in.row(b) = i_norm(b) == 0.0 ? Eigen::RowVectorXd::Zero(model.dim).eval()
                                     : (fe.final.row(U + batch[b].pos) / i_norm(b)).eval();
    }
    if (zero_norm_count) *zero_norm_count += zero_norms;
    if (zero_norms > 0)
        std::cerr << "warning: " << zero_norms << " zero-norm final embeddings in SSM batch\n";

    Mat logits = (un * in.transpose()) / tau;  // B x B, diagonal holds positives

    // Row-wise stabilized softmax; loss_b = logsumexp_j - logit_bb.
    double loss = 0.0;
    Mat grad_logits(B, B);
    for (int b = 0; b < B; ++b) {
        const double mx = logits.row(b).maxCoeff();
        double z = 0.0;
        for (int j = 0; j < B; ++j) z += std::exp(logits(b, j) - mx);
        loss += mx + std::log(z) - logits(b, b);
        for (int j = 0; j < B; ++j) grad_logits(b, j) = std::exp(logits(b, j) - mx) / z;
        grad_logits(b, b) -= 1.0;
    }
    loss *= inv_b;
    grad_logits *= inv_b / tau;

    Mat grad_un = grad_logits * in;
    Mat grad_in = grad_logits.transpose() * un;

    // Chain through the row normalization and scatter into the node table.
    Mat grad_final = Mat::Zero(fe.final.rows(), fe.final.cols());
    for (int b = 0; b < B; ++b) {
        if (u_norm(b) != 0.0)
            grad_final.row(batch[b].user) +=
                (grad_un.row(b) - grad_un.row(b).dot(un.row(b)) * un.row(b)) / u_norm(b);
        if (i_norm(b) != 0.0)
            grad_final.row(U + batch[b].pos) +=
                (grad_in.row(b) - grad_in.row(b).dot(in.row(b)) * in.row(b)) / i_norm(b);
    }

    Mat grad_base = backward(grad_final, adj, model.num_layers);
    std::vector<int32_t> rows;
    rows.reserve(batch.size() * 2);
    for (const auto& e : batch) {
        rows.push_back(e.user);
        rows.push_back(U + e.pos);
    }
    loss += detail::apply_l2(model.base, rows, lambda, B, grad_base);
    return {loss, std::move(grad_base)};
}

/// Bias-corrected Adam with sparse row updates: rows whose gradient is all
/// zero keep both parameters and moments untouched.
inline void adam_step(Mat& base, const Mat& grad, AdamState& state, double lr) {
    if (base.rows() != grad.rows() || base.cols() != grad.cols())
        throw std::invalid_argument("adam_step: shape mismatch");
    if (!grad.allFinite()) {
        throw std::runtime_error("adam_step: non-finite gradient (max |g| = "
                                 + std::to_string(grad.cwiseAbs().maxCoeff()) + ")");
    }
    state.t++;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (Eigen::Index r = 0; r < base.rows(); ++r) {
        if ((grad.row(r).array() == 0.0).all()) continue;
        state.m.row(r) = state.beta1 * state.m.row(r) + (1.0 - state.beta1) * grad.row(r);
        state.v.row(r) =
            state.beta2 * state.v.row(r) + (1.0 - state.beta2) * grad.row(r).cwiseAbs2();
        base.row(r).array() -=
            lr * (state.m.row(r).array() / bc1)
            / ((state.v.row(r).array() / bc2).sqrt() + state.eps);
    }
}

namespace detail {

inline double validation_recall(const Mat& final_emb, const InteractionDataset& ds, int k,
                                double p) {
    const int32_t U = ds.num_users, I = ds.num_items;
    std::vector<double> item_norm(I), item_scale(I);
    for (int32_t i = 0; i < I; ++i) {
        item_norm[i] = final_emb.row(U + i).norm();
        item_scale[i] = item_norm[i] == 0.0 ? 0.0 : std::pow(item_norm[i], -p);
    }
    double total = 0.0;
    int64_t users = 0;
    std::vector<double> scores(I);
    for (int32_t u = 0; u < U; ++u) {
        if (ds.validation[u].empty()) continue;
        const auto user_row = final_emb.row(u);
        const double nu = user_row.norm();
        for (int32_t i = 0; i < I; ++i)
            scores[i] = (nu == 0.0 || item_norm[i] == 0.0)
                            ? 0.0
                            : user_row.dot(final_emb.row(U + i)) / nu * item_scale[i];
        for (int32_t i : ds.train[u]) scores[i] = -std::numeric_limits<double>::infinity();
        const auto ranked = tten::detail::topk_from_scores(u, scores, k);
        total += recall_at_k(ranked, ds.validation[u], k);
        users++;
    }
    return users == 0 ? 0.0 : total / static_cast<double>(users);
}

}  // namespace detail

/// Full training loop: Adam over sampled batches, validation Recall@k with
/// TTEN applied every eval_every epochs from early_stop_min_epoch on, early
/// stop after `patience` evaluations without improvement. Returns the model
/// snapshot with the best validation recall.
inline std::pair<EmbeddingModel, TrainReport> train(const InteractionDataset& ds,
                                                    const TrainConfig& config) {
    config.validate();
    if (ds.train_interactions() == 0) throw std::invalid_argument("train: empty train split");

    const bool has_validation =
        std::any_of(ds.validation.begin(), ds.validation.end(),
                    [](const auto& v) { return !v.empty(); });
    if (!has_validation)
        std::cerr << "warning: empty validation set, early stopping disabled\n";

    const auto adj = build_norm_adjacency(ds);
    EmbeddingModel model =
        init_xavier(ds.num_users, ds.num_items, config.dim, config.num_layers, config.seed);
    AdamState adam(model.base.rows(), model.base.cols());
    Rng rng(config.seed + 1);

    const int64_t batches_per_epoch =
        (ds.train_interactions() + config.batch_size - 1) / config.batch_size;

    TrainReport report;
    EmbeddingModel best = model;
    double best_recall = -1.0;
    int best_epoch = 0;
    int evals_without_improvement = 0;
    report.stop_reason = "max_epochs";

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        double loss_sum = 0.0;
        for (int64_t b = 0; b < batches_per_epoch; ++b) {
            double loss;
            Mat grad;
            if (config.loss_kind == LossKind::BPR) {
                const auto batch = sample_bpr_batch(ds, config.batch_size, rng);
                std::tie(loss, grad) = bpr_loss_and_grad(model, adj, batch, config.l2_coeff);
            } else {
                const auto batch = sample_ssm_batch(ds, config.batch_size, rng);
                std::tie(loss, grad) = ssm_loss_and_grad(model, adj, batch, config.temperature,
                                                         config.l2_coeff,
                                                         &report.zero_norm_warnings);
            }
            adam_step(model.base, grad, adam, config.learning_rate);
            loss_sum += loss;
        }
        const double loss_mean = loss_sum / static_cast<double>(batches_per_epoch);
        report.epoch_losses.push_back(loss_mean);

        if (has_validation && epoch >= config.early_stop_min_epoch
            && epoch % config.eval_every == 0) {
            const auto fe = forward(model, adj);
            const double recall =
                detail::validation_recall(fe.final, ds, config.eval_k, config.eval_p);
            report.history.push_back({epoch, recall, loss_mean});
            if (recall > best_recall) {
                best_recall = recall;
                best = model;
                best_epoch = epoch;
                evals_without_improvement = 0;
            } else if (++evals_without_improvement >= config.patience) {
                report.stop_reason = "early";
                break;
            }
        }
    }

    if (best_recall < 0.0) {  // no evaluation happened: return the final model
        best = model;
        best_epoch = static_cast<int>(report.epoch_losses.size());
        best_recall = 0.0;
    }
    report.best_epoch = best_epoch;
    report.best_recall = best_recall;
    return {std::move(best), std::move(report)};
}

}  // namespace tten
