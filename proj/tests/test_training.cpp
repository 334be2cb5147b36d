#include <doctest.h>

#include <map>

#include "oracles.hpp"
#include "tten/training.hpp"

using namespace tten;

namespace {

InteractionDataset tiny_dataset(int32_t users, int32_t items, int max_train, uint64_t seed) {
    Rng rng(seed);
    auto ds = oracle::random_dataset(users, items, max_train, 2, rng);
    return ds;
}

}  // namespace

TEST_CASE("bpr sampling") {
    SUBCASE("forced negative with two items") {
        InteractionDataset ds;
        ds.num_users = 1;
        ds.num_items = 2;
        ds.train = {{0}};
        ds.validation.resize(1);
        ds.test.resize(1);
        ds.popularity = compute_popularity(ds);
        Rng rng(1);
        for (const auto& t : sample_bpr_batch(ds, 50, rng)) {
            CHECK(t.pos == 0);
            CHECK(t.neg == 1);
        }
    }
    SUBCASE("batch size contract with replacement") {
        auto ds = tiny_dataset(3, 5, 3, 2);
        Rng rng(2);
        CHECK(sample_bpr_batch(ds, 4096, rng).size() == 4096);
    }
    SUBCASE("positive pairs uniform over train interactions (chi-square)") {
        auto ds = tiny_dataset(5, 8, 4, 3);
        const auto total = ds.train_interactions();
        std::map<std::pair<int32_t, int32_t>, int64_t> counts;
        Rng rng(3);
        const int64_t draws = 200000;
        for (const auto& t : sample_bpr_batch(ds, draws, rng)) counts[{t.user, t.pos}]++;
        CHECK(static_cast<int64_t>(counts.size()) == total);
        const double expected = static_cast<double>(draws) / static_cast<double>(total);
        double chi2 = 0.0;
        for (const auto& [pair, c] : counts)
            chi2 += (c - expected) * (c - expected) / expected;
        const double df = static_cast<double>(total - 1);
        CHECK(chi2 < df + 4.0 * std::sqrt(2.0 * df));  // ~p > 1e-4
    }
    SUBCASE("negatives never collide with the user's train set") {
        auto ds = tiny_dataset(4, 6, 3, 4);
        Rng rng(4);
        for (const auto& t : sample_bpr_batch(ds, 2000, rng))
            CHECK_FALSE(std::binary_search(ds.train[t.user].begin(), ds.train[t.user].end(),
                                           t.neg));
    }
}

TEST_CASE("ssm sampling") {
    SUBCASE("batch of 2: each entry's negative is the other's positive") {
        auto ds = tiny_dataset(3, 5, 3, 5);
        Rng rng(5);
        auto batch = sample_ssm_batch(ds, 2, rng);
        REQUIRE(batch.size() == 2);  // negatives are implicit: the other entry
    }
    SUBCASE("item frequency proportional to train count") {
        InteractionDataset ds;
        ds.num_users = 3;
        ds.num_items = 3;
        ds.train = {{0, 1}, {0}, {0, 2}};  // counts: item0=3, item1=1, item2=1
        ds.validation.resize(3);
        ds.test.resize(3);
        ds.popularity = compute_popularity(ds);
        Rng rng(6);
        std::vector<int64_t> freq(3, 0);
        const int64_t draws = 100000;
        for (const auto& e : sample_ssm_batch(ds, draws, rng)) freq[e.pos]++;
        CHECK(static_cast<double>(freq[0]) / draws == doctest::Approx(0.6).epsilon(0.05));
        CHECK(static_cast<double>(freq[1]) / draws == doctest::Approx(0.2).epsilon(0.08));
    }
    SUBCASE("batch_size below 2 rejected") {
        auto ds = tiny_dataset(2, 4, 2, 7);
        Rng rng(7);
        CHECK_THROWS_AS(sample_ssm_batch(ds, 1, rng), std::invalid_argument);
    }
}

TEST_CASE("bpr loss fixtures") {
    // K=0 so final == base; equal scores give per-triple loss ln 2.
    InteractionDataset ds;
    ds.num_users = 1;
    ds.num_items = 2;
    ds.train = {{0}};
    ds.validation.resize(1);
    ds.test.resize(1);
    auto adj = build_norm_adjacency(ds);
    EmbeddingModel model;
    model.num_users = 1;
    model.num_items = 2;
    model.num_layers = 0;
    model.dim = 2;
    model.base = Mat::Zero(3, 2);
    model.base.row(0) << 1.0, 0.0;
    model.base.row(1) << 0.0, 1.0;  // score 0
    model.base.row(2) << 0.0, 2.0;  // score 0

    auto [loss, grad] = bpr_loss_and_grad(model, adj, {{0, 0, 1}}, 0.0);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    SUBCASE("large positive margin drives loss to zero") {
        model.base.row(1) << 50.0, 0.0;
        auto [l2, g2] = bpr_loss_and_grad(model, adj, {{0, 0, 1}}, 0.0);
        CHECK(l2 < 1e-20);
        CHECK(std::isfinite(l2));
    }
    SUBCASE("adding a user-constant to both scores leaves the loss unchanged") {
        // shift both item embeddings by the same delta along the user direction
        auto [base_loss, g0] = bpr_loss_and_grad(model, adj, {{0, 0, 1}}, 0.0);
        model.base.row(1) += Eigen::RowVector2d(3.5, 0.0);
        model.base.row(2) += Eigen::RowVector2d(3.5, 0.0);
        auto [shifted, g1] = bpr_loss_and_grad(model, adj, {{0, 0, 1}}, 0.0);
        CHECK(shifted == base_loss);
    }
}

TEST_CASE("ssm loss fixtures") {
    InteractionDataset ds;
    ds.num_users = 2;
    ds.num_items = 2;
    ds.train = {{0}, {1}};
    ds.validation.resize(2);
    ds.test.resize(2);
    auto adj = build_norm_adjacency(ds);
    EmbeddingModel model;
    model.num_users = 2;
    model.num_items = 2;
    model.num_layers = 0;
    model.dim = 2;
    model.base.resize(4, 2);
    model.base.row(0) << 1, 0;  // u0
    model.base.row(1) << 0, 1;  // u1
    model.base.row(2) << 2, 0;  // item 0: cos(u0,i0)=1, cos(u1,i0)=0
    model.base.row(3) << 0, 3;  // item 1: cos(u1,i1)=1, cos(u0,i1)=0

    SUBCASE("hand-evaluated two-entry batch at tau=1") {
        std::vector<SsmEntry> batch{{0, 0}, {1, 1}};
        auto [loss, grad] = ssm_loss_and_grad(model, adj, batch, 1.0, 0.0);
        CHECK(loss == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
    }
    SUBCASE("all-equal cosines give ln B") {
        model.base.row(1) << 1, 0;
        model.base.row(3) << 4, 0;
        std::vector<SsmEntry> batch{{0, 0}, {1, 1}, {0, 0}, {1, 1}};
        auto [loss, grad] = ssm_loss_and_grad(model, adj, batch, 0.3, 0.0);
        CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SUBCASE("scale invariance of a single embedding at lambda=0") {
        std::vector<SsmEntry> batch{{0, 0}, {1, 1}};
        auto [loss, g] = ssm_loss_and_grad(model, adj, batch, 0.5, 0.0);
        model.base.row(2) *= 17.0;
        auto [scaled, g2] = ssm_loss_and_grad(model, adj, batch, 0.5, 0.0);
        CHECK(std::abs(loss - scaled) <= 1e-10);
    }
    SUBCASE("zero-norm embedding counted, not fatal") {
        model.base.row(2).setZero();
        std::vector<SsmEntry> batch{{0, 0}, {1, 1}};
        int64_t zero_norms = 0;
        auto [loss, g] = ssm_loss_and_grad(model, adj, batch, 1.0, 0.0, &zero_norms);
        CHECK(zero_norms == 1);
        CHECK(std::isfinite(loss));
    }
}

TEST_CASE("analytic gradients match finite differences") {
    Rng rng(51);
    auto ds = oracle::random_dataset(5, 7, 4, 2, rng);
    auto adj = build_norm_adjacency(ds);

    for (int K : {0, 2}) {
        auto model = init_xavier(5, 7, 4, K, 60 + K);

        SUBCASE(("bpr K=" + std::to_string(K)).c_str()) {
            Rng srng(8);
            auto batch = sample_bpr_batch(ds, 6, srng);
            const double lambda = 0.01;
            auto [loss, analytic] = bpr_loss_and_grad(model, adj, batch, lambda);
            auto f = [&](const Mat& base) {
                EmbeddingModel m = model;
                m.base = base;
                return bpr_loss_and_grad(m, adj, batch, lambda).first;
            };
            Mat numeric = oracle::finite_difference_grad(f, model.base);
            CHECK(oracle::max_relative_grad_error(analytic, numeric) <= 1e-5);
        }

        SUBCASE(("ssm K=" + std::to_string(K)).c_str()) {
            Rng srng(9);
            auto batch = sample_ssm_batch(ds, 5, srng);
            const double tau = 0.1, lambda = 0.001;
            auto [loss, analytic] = ssm_loss_and_grad(model, adj, batch, tau, lambda);
            auto f = [&](const Mat& base) {
                EmbeddingModel m = model;
                m.base = base;
                return ssm_loss_and_grad(m, adj, batch, tau, lambda).first;
            };
            Mat numeric = oracle::finite_difference_grad(f, model.base);
            CHECK(oracle::max_relative_grad_error(analytic, numeric) <= 1e-4);
        }
    }
}

TEST_CASE("ssm loss near ln B at xavier init") {
    Rng rng(55);
    auto ds = oracle::random_dataset(30, 40, 8, 2, rng);
    auto adj = build_norm_adjacency(ds);
    auto model = init_xavier(30, 40, 16, 2, 77);
    Rng srng(10);
    auto batch = sample_ssm_batch(ds, 32, srng);
    auto [loss, grad] = ssm_loss_and_grad(model, adj, batch, 0.1, 0.0);
    CHECK(loss == doctest::Approx(std::log(32.0)).epsilon(0.20));
}

TEST_CASE("adam") {
    SUBCASE("hand-evaluated first step") {
        Mat base = Mat::Zero(1, 1);
        Mat grad = Mat::Ones(1, 1);
        AdamState state(1, 1);
        adam_step(base, grad, state, 1e-3);
        CHECK(base(0, 0) == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
        CHECK(state.t == 1);
    }
    SUBCASE("zero-gradient rows untouched, including moments") {
        Mat base(2, 2);
        base << 1, 2, 3, 4;
        Mat grad = Mat::Zero(2, 2);
        grad(1, 0) = 0.5;
        AdamState state(2, 2);
        state.m(0, 0) = 0.7;
        adam_step(base, grad, state, 1e-2);
        CHECK(base(0, 0) == 1.0);
        CHECK(base(0, 1) == 2.0);
        CHECK(state.m(0, 0) == 0.7);
        CHECK(base(1, 0) != 3.0);
    }
    SUBCASE("purity: identical inputs give identical outputs") {
        Rng rng(61);
        Mat base = oracle::random_matrix(3, 2, rng);
        Mat grad = oracle::random_matrix(3, 2, rng);
        Mat b1 = base, b2 = base;
        AdamState s1(3, 2), s2(3, 2);
        adam_step(b1, grad, s1, 1e-3);
        adam_step(b2, grad, s2, 1e-3);
        CHECK(b1 == b2);
        CHECK(s1.m == s2.m);
        CHECK(s1.v == s2.v);
    }
    SUBCASE("non-finite gradient aborts") {
        Mat base = Mat::Zero(1, 1);
        Mat grad = Mat::Ones(1, 1) * std::numeric_limits<double>::quiet_NaN();
        AdamState state(1, 1);
        CHECK_THROWS_AS(adam_step(base, grad, state, 1e-3), std::runtime_error);
    }
}

TEST_CASE("train loop") {
    Rng rng(71);
    auto ds = oracle::random_dataset(30, 25, 6, 0, rng);
    // give every user a validation item disjoint from train
    for (int32_t u = 0; u < ds.num_users; ++u)
        for (int32_t i = 0; i < ds.num_items; ++i)
            if (!std::binary_search(ds.train[u].begin(), ds.train[u].end(), i)) {
                ds.validation[u] = {i};
                break;
            }

    TrainConfig cfg;
    cfg.loss_kind = LossKind::BPR;
    cfg.batch_size = 32;
    cfg.dim = 8;
    cfg.num_layers = 1;
    cfg.seed = 5;

    SUBCASE("max_epochs=1 runs one epoch without early stop") {
        cfg.max_epochs = 1;
        auto [model, report] = train(ds, cfg);
        CHECK(report.epoch_losses.size() == 1);
        CHECK(report.stop_reason == "max_epochs");
    }

    SUBCASE("early stopping respects patience and returns the best snapshot") {
        cfg.max_epochs = 60;
        cfg.early_stop_min_epoch = 2;
        cfg.eval_every = 1;
        cfg.patience = 3;
        auto [model, report] = train(ds, cfg);
        REQUIRE(!report.history.empty());
        double best = -1.0;
        for (const auto& e : report.history) best = std::max(best, e.recall);
        CHECK(report.best_recall == best);
        if (report.stop_reason == "early") {
            // the last `patience` evaluations did not improve on the best
            const size_t n = report.history.size();
            for (size_t i = n - cfg.patience; i < n; ++i)
                CHECK(report.history[i].recall <= best);
        }
    }

    SUBCASE("determinism: identical config gives identical report and model") {
        cfg.max_epochs = 4;
        auto [m1, r1] = train(ds, cfg);
        auto [m2, r2] = train(ds, cfg);
        CHECK(m1.base == m2.base);
        CHECK(r1.epoch_losses == r2.epoch_losses);
    }

    SUBCASE("empty validation disables early stopping") {
        for (auto& v : ds.validation) v.clear();
        cfg.max_epochs = 3;
        cfg.early_stop_min_epoch = 1;
        cfg.eval_every = 1;
        auto [model, report] = train(ds, cfg);
        CHECK(report.epoch_losses.size() == 3);
        CHECK(report.history.empty());
        CHECK(report.stop_reason == "max_epochs");
    }
}

TEST_CASE("ssm training loss decreases on synthetic data") {
    SyntheticSpec spec;
    spec.num_users = 200;
    spec.num_items = 100;
    spec.interactions_per_user = 12;
    spec.test_items_per_user = 2;

    int successes = 0;
    for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        spec.seed = seed;
        auto [ds, gt] = generate_synthetic(spec);
        TrainConfig cfg;
        cfg.loss_kind = LossKind::SSM;
        cfg.batch_size = 256;
        cfg.dim = 16;
        cfg.max_epochs = 5;
        cfg.seed = seed;
        auto [model, report] = train(ds, cfg);
        REQUIRE(report.epoch_losses.size() == 5);
        bool decreasing = true;
        for (size_t e = 1; e < report.epoch_losses.size(); ++e)
            decreasing = decreasing && report.epoch_losses[e] < report.epoch_losses[e - 1];
        if (decreasing) successes++;
    }
    CHECK(successes >= 2);
}
