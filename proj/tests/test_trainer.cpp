#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "dualclvsa/errors.h"
#include "dualclvsa/trainer.h"
#include "test_helpers.h"

namespace dualclvsa::train {
namespace {

using data::Movement;

model::ModelConfig tiny(model::Variant v) {
    model::ModelConfig cfg;
    cfg.variant = v;
    cfg.conv_channels = 2;
    cfg.hidden = 4;
    cfg.latent = 2;
    cfg.head_hidden = 6;
    cfg.cell_width = 3;
    return cfg;
}

TrainConfig quick() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.learning_rate = 5e-3;
    return cfg;
}

double eval_loss(const std::vector<double>& logits, std::size_t label, double kld, double beta) {
    ad::Graph g;
    const ad::Var l = g.constant(ad::Tensor({1, logits.size()}, logits));
    return loss(l, label, g.constant(ad::Tensor::scalar(kld)), beta).value().data[0];
}

TEST(Loss, UniformLogits) { EXPECT_NEAR(eval_loss({0.3, 0.3, 0.3}, 1, 0.0, 0.1), std::log(3.0), 1e-12); }

TEST(Loss, SaturatedLogits) { EXPECT_NEAR(eval_loss({0.0, 0.0, 30.0}, 2, 0.0, 0.1), 0.0, 1e-12); }

TEST(Loss, BetaTimesKld) {
    // CE = 1 exactly when the true-class probability is 1/e.
    const double a = std::log((std::exp(1.0) - 1.0) / 2.0);
    EXPECT_NEAR(eval_loss({0.0, a, a}, 0, 0.0, 0.1), 1.0, 1e-12);
    EXPECT_NEAR(eval_loss({0.0, a, a}, 0, 2.0, 0.1), 1.2, 1e-12);
}

TEST(Loss, ZeroBetaIsPureCrossEntropy) {
    ad::Graph g;
    const ad::Var l = g.constant(ad::Tensor({1, 3}, std::vector<double>{0.2, -1.0, 0.7}));
    const ad::Var kld = g.constant(ad::Tensor::scalar(3.5));
    EXPECT_EQ(loss(l, 1, kld, warmup_beta(0.1, 0, 10)).value().data[0],
              ad::cross_entropy(l, 1).value().data[0]);
}

TEST(Warmup, LinearRamp) {
    EXPECT_EQ(warmup_beta(0.1, 0, 10), 0.0);
    EXPECT_NEAR(warmup_beta(0.1, 5, 10), 0.05, 1e-15);
    EXPECT_EQ(warmup_beta(0.1, 10, 10), 0.1);
    EXPECT_EQ(warmup_beta(0.1, 50, 10), 0.1);
    EXPECT_EQ(warmup_beta(0.1, 0, 0), 0.1);
}

TEST(Clip, GlobalNormBounded) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        model::ParameterStore ps;
        for (int i = 0; i < 4; ++i) {
            auto& t = ps.add("w" + std::to_string(i), {3, 2});
            t.grad = testing::random_tensor(rng, {3, 2}, -5.0, 5.0).data;
        }
        double before = 0.0;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            for (double g : ps.at(i).grad) before += g * g;
        }
        const double max_norm = 0.5 + trial * 0.1;
        EXPECT_NEAR(clip_gradients(ps, max_norm), std::sqrt(before), 1e-12);
        double after = 0.0;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            for (double g : ps.at(i).grad) after += g * g;
        }
        EXPECT_LE(std::sqrt(after), max_norm + 1e-9);
        if (std::sqrt(before) <= max_norm) {
            EXPECT_NEAR(after, before, 1e-12);
        }
    }
}

TEST(Adam, FirstStepMovesByLearningRate) {
    model::ParameterStore ps;
    auto& w = ps.add("w", {1, 3});
    w.data = {1.0, 2.0, 3.0};
    w.grad = {0.5, -2.0, 0.0};
    Adam opt(0.01);
    opt.step(ps);
    // Bias-corrected moments make the first update lr * sign(g).
    EXPECT_NEAR(w.data[0], 0.99, 1e-9);
    EXPECT_NEAR(w.data[1], 2.01, 1e-9);
    EXPECT_EQ(w.data[2], 3.0);
    EXPECT_EQ(opt.steps(), 1u);
}

const std::vector<data::AlignedSample>& dataset() {
    static const auto s = testing::synthetic_samples(40, 3, data::SignalChannel::Both);
    return s;
}

TEST(TrainFold, ZeroLearningRateKeepsParametersBitIdentical) {
    model::Model m(tiny(model::Variant::DualClvsa), 4);
    std::vector<std::vector<double>> before;
    for (std::size_t i = 0; i < m.parameters().size(); ++i) before.push_back(m.parameters().at(i).data);
    auto cfg = quick();
    cfg.learning_rate = 0.0;
    const auto examples = make_examples(dataset());
    const auto r = train_fold(m, std::span(examples).first(12), cfg);
    EXPECT_EQ(r.epoch_loss.size(), 2u);
    for (std::size_t i = 0; i < m.parameters().size(); ++i) EXPECT_EQ(m.parameters().at(i).data, before[i]);
}

TEST(TrainFold, SameSeedSameLossCurve) {
    const auto examples = make_examples(dataset());
    for (auto v : {model::Variant::LstmS, model::Variant::Clvsa, model::Variant::DualClvsa}) {
        model::Model a(tiny(v), 5);
        model::Model b(tiny(v), 5);
        const auto ra = train_fold(a, std::span(examples).first(12), quick());
        const auto rb = train_fold(b, std::span(examples).first(12), quick());
        EXPECT_EQ(ra.epoch_loss, rb.epoch_loss);
        EXPECT_EQ(ra.steps, 6u);
        for (double l : ra.epoch_loss) EXPECT_TRUE(std::isfinite(l));
    }
}

std::string non_finite_message(const std::string& weight, double weight_value) {
    model::Model m(tiny(model::Variant::Clvsa), 6);
    auto& w = m.parameters().get(weight);
    std::fill(w.data.begin(), w.data.end(), weight_value);
    const auto examples = make_examples(dataset());
    try {
        train_fold(m, std::span(examples).first(4), quick());
    } catch (const NumericError& e) {
        return e.what();
    }
    return "";
}

TEST(TrainFold, NonFiniteLossNamesTheOp) {
    const auto overflow = non_finite_message("head.hidden.weight", 1e308);
    EXPECT_NE(overflow.find("'matmul'"), std::string::npos) << overflow;
    const auto nan_weight = non_finite_message("trading.cdt.prices.kernel", std::numeric_limits<double>::quiet_NaN());
    EXPECT_NE(nan_weight.find("'leaf'"), std::string::npos) << nan_weight;
}

TEST(TrainFold, FitsSmallSet) {
    model::Model m(tiny(model::Variant::Clvsa), 7);
    auto cfg = quick();
    cfg.epochs = 60;
    cfg.learning_rate = 2e-2;
    const auto examples = make_examples(dataset());
    const auto subset = std::span(examples).first(8);
    const auto r = train_fold(m, subset, cfg);
    EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
    EXPECT_GE(accuracy(predict_all(m, subset)), 0.75);
}

Prediction pred(std::array<double, 3> scores, Movement label) {
    Prediction p;
    p.scores = scores;
    p.label = label;
    return p;
}

// Direct definition: precision at each positive's rank, scores assumed distinct.
double map_oracle(const std::vector<Prediction>& preds) {
    double total = 0.0;
    int classes = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        double sum = 0.0;
        int positives = 0;
        for (const auto& p : preds) {
            if (static_cast<std::size_t>(p.label) != c) continue;
            ++positives;
            int above = 0, above_pos = 0;
            for (const auto& q : preds) {
                if (q.scores[c] >= p.scores[c]) {
                    ++above;
                    above_pos += static_cast<std::size_t>(q.label) == c;
                }
            }
            sum += static_cast<double>(above_pos) / above;
        }
        if (positives == 0) continue;
        total += sum / positives;
        ++classes;
    }
    return total / classes;
}

std::vector<Prediction> random_predictions(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Prediction> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(pred({u(rng), u(rng), u(rng)}, static_cast<Movement>(rng() % 3)));
    }
    return out;
}

TEST(Map, PerfectRanking) {
    std::vector<Prediction> p = {pred({1, 0, 0}, Movement::Down), pred({0, 1, 0}, Movement::Flat),
                                 pred({0, 0, 1}, Movement::Up), pred({0, 0, 1}, Movement::Up)};
    EXPECT_DOUBLE_EQ(mean_average_precision(p), 1.0);
    EXPECT_DOUBLE_EQ(accuracy(p), 1.0);
}

TEST(Map, MatchesOracle) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = random_predictions(rng, 5 + trial);
        EXPECT_NEAR(mean_average_precision(p), map_oracle(p), 1e-12);
    }
}

TEST(Map, RandomScoresGiveOneThird) {
    std::mt19937_64 rng(10);
    const auto p = random_predictions(rng, 10000);
    EXPECT_NEAR(mean_average_precision(p), 1.0 / 3.0, 0.05);
}

TEST(Map, SingleClassIsItsAveragePrecision) {
    std::vector<Prediction> p = {pred({0.1, 0.2, 0.9}, Movement::Up), pred({0.1, 0.2, 0.5}, Movement::Up),
                                 pred({0.1, 0.2, 0.7}, Movement::Up)};
    EXPECT_DOUBLE_EQ(mean_average_precision(p), 1.0);
    EXPECT_NEAR(mean_average_precision(p), map_oracle(p), 1e-15);
    EXPECT_THROW(mean_average_precision(std::vector<Prediction>{}), ContractError);
}

TEST(Map, MonotoneTransformInvariant) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        auto p = random_predictions(rng, 50);
        const double base = mean_average_precision(p);
        for (auto& x : p) {
            x.scores[0] = std::exp(3.0 * x.scores[0]);
            x.scores[1] = std::log(x.scores[1] + 0.01) * 7.0 - 2.0;
            x.scores[2] = std::pow(x.scores[2], 3.0);
        }
        EXPECT_EQ(mean_average_precision(p), base);
    }
}

TEST(Folds, WindowArithmetic) {
    TrainConfig cfg;
    cfg.train_months = 6;
    cfg.test_months = 2;
    cfg.step_months = 2;
    const auto w = fold_windows(100, 111, cfg);
    ASSERT_EQ(w.size(), 3u);
    EXPECT_EQ(w[0].train_month, 100);
    EXPECT_EQ(w[0].test_month, 106);
    EXPECT_EQ(w[2].end_month, 112);
    for (std::size_t i = 1; i < w.size(); ++i) EXPECT_GE(w[i].test_month, w[i - 1].end_month);
    EXPECT_THROW(fold_windows(100, 106, cfg), ConfigurationError);
}

TEST(Folds, ConfigValidation) {
    for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
             [](TrainConfig& c) { c.epochs = 0; }, [](TrainConfig& c) { c.batch_size = 0; },
             [](TrainConfig& c) { c.learning_rate = -1; }, [](TrainConfig& c) { c.test_months = 0; },
             [](TrainConfig& c) { c.step_months = 0; }, [](TrainConfig& c) { c.jobs = 0; }}) {
        TrainConfig c;
        mutate(c);
        EXPECT_THROW(c.validate(), ConfigurationError);
    }
}

struct WalkForwardFixture : ::testing::Test {
    static const std::vector<FoldResult>& folds() {
        static const auto f = [] {
            static const auto samples = testing::synthetic_samples(130, 12, data::SignalChannel::Both);
            auto cfg = quick();
            cfg.epochs = 1;
            cfg.train_months = 2;
            cfg.test_months = 1;
            cfg.step_months = 1;
            return walk_forward(samples, tiny(model::Variant::Clvsa), cfg);
        }();
        return f;
    }
};

TEST_F(WalkForwardFixture, NoLookahead) {
    ASSERT_GE(folds().size(), 3u);
    for (const auto& f : folds()) {
        ASSERT_FALSE(f.predictions.empty());
        EXPECT_GT(f.train_count, 1u);
        EXPECT_LT(f.last_train_label_timestamp, f.test_start);
        for (const auto& p : f.predictions) {
            EXPECT_GT(p.timestamp, f.last_train_timestamp);
            EXPECT_GE(p.timestamp, f.test_start);
            EXPECT_LT(p.timestamp, f.test_end);
        }
        EXPECT_GE(f.map, 0.0);
        EXPECT_LE(f.map, 1.0);
    }
}

TEST_F(WalkForwardFixture, TestSetsDoNotOverlap) {
    std::set<Timestamp> seen;
    for (const auto& f : folds()) {
        for (const auto& p : f.predictions) EXPECT_TRUE(seen.insert(p.timestamp).second);
    }
}

TEST_F(WalkForwardFixture, ParallelFoldsMatchSequential) {
    const auto samples = testing::synthetic_samples(130, 12, data::SignalChannel::Both);
    auto cfg = quick();
    cfg.epochs = 1;
    cfg.train_months = 2;
    cfg.test_months = 1;
    cfg.step_months = 1;
    cfg.jobs = 3;
    const auto parallel = walk_forward(samples, tiny(model::Variant::Clvsa), cfg);
    ASSERT_EQ(parallel.size(), folds().size());
    for (std::size_t f = 0; f < parallel.size(); ++f) {
        EXPECT_EQ(parallel[f].epoch_loss, folds()[f].epoch_loss);
        ASSERT_EQ(parallel[f].predictions.size(), folds()[f].predictions.size());
        for (std::size_t i = 0; i < parallel[f].predictions.size(); ++i) {
            EXPECT_EQ(parallel[f].predictions[i].scores, folds()[f].predictions[i].scores);
        }
    }
}

TEST_F(WalkForwardFixture, PredictionsCsvRoundTrip) {
    std::stringstream ss;
    write_predictions_csv(ss, folds());
    const auto back = read_predictions_csv(ss);
    std::size_t k = 0;
    for (const auto& f : folds()) {
        for (const auto& p : f.predictions) {
            ASSERT_LT(k, back.size());
            EXPECT_EQ(back[k].timestamp, p.timestamp);
            EXPECT_EQ(back[k].label, p.label);
            EXPECT_EQ(back[k].scores, p.scores);
            ++k;
        }
    }
    EXPECT_EQ(k, back.size());
}

TEST(WalkForward, SpanTooShort) {
    const auto samples = testing::synthetic_samples(30, 2);
    auto cfg = quick();
    EXPECT_THROW(walk_forward(samples, tiny(model::Variant::Clvsa), cfg), ConfigurationError);
}

}  // namespace
}  // namespace dualclvsa::train
