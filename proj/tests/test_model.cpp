#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "dualclvsa/errors.h"
#include "dualclvsa/model.h"
#include "dualclvsa/trainer.h"
#include "test_helpers.h"

namespace dualclvsa::model {
namespace {

using testing::random_tensor;

ModelConfig small_config(Variant v) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.conv_channels = 3;
    cfg.hidden = 6;
    cfg.latent = 3;
    cfg.head_hidden = 8;
    return cfg;
}

const std::vector<data::AlignedSample>& samples() {
    static const auto s = testing::synthetic_samples(6, 31);
    return s;
}

void fill(Tensor& t, double v) { std::fill(t.data.begin(), t.data.end(), v); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

void expect_rows_sum_to_one(const Tensor& w) {
    const std::size_t cols = w.shape.back();
    for (std::size_t r = 0; r < w.size() / cols; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            EXPECT_GE(w.data[r * cols + c], 0.0);
            s += w.data[r * cols + c];
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(Config, VariantNamesRoundTrip) {
    for (Variant v : {Variant::LstmS, Variant::Clvsa, Variant::ClvsaInputFusion, Variant::DualClvsa}) {
        EXPECT_EQ(parse_variant(variant_name(v)), v);
    }
    EXPECT_THROW(parse_variant("transformer"), ConfigurationError);
}

TEST(Config, SentimentVariantsRequireSentiment) {
    for (Variant v : {Variant::ClvsaInputFusion, Variant::DualClvsa}) {
        auto cfg = small_config(v);
        cfg.use_sentiment = false;
        EXPECT_THROW(cfg.validate(), ConfigurationError);
        EXPECT_THROW(Model(cfg, 1), ConfigurationError);
    }
    auto cfg = small_config(Variant::Clvsa);
    cfg.use_sentiment = false;
    EXPECT_NO_THROW(cfg.validate());
    cfg.conv_width = 2;
    EXPECT_THROW(cfg.validate(), ConfigurationError);
}

TEST(CdtConv, IdentityKernelPassesPricesThrough) {
    ParameterStore ps;
    Initializer init(1);
    CdtConv conv(ps, init, "c", trading_groups(false), 4, 3);
    auto kernels = conv.kernels();
    ASSERT_EQ(kernels.size(), 2u);
    for (std::size_t i = 0; i < ps.size(); ++i) fill(ps.at(i), 0.0);
    Tensor& k = *kernels[0];  // [4 x 4 x 3]
    for (std::size_t j = 0; j < 4; ++j) k.data[(j * 4 + j) * 3 + 1] = 1.0;

    const Tensor& frame = samples()[0].trading_frame;
    Graph g;
    Binder b(g);
    const Tensor out = conv(b, g.constant(frame)).value();
    ASSERT_EQ(out.shape, (ad::Shape{8, 13}));
    for (std::size_t j = 0; j < 4; ++j) {
        for (std::size_t t = 0; t < 13; ++t) EXPECT_DOUBLE_EQ(out(j, t), frame(j, t));
    }
    for (std::size_t j = 4; j < 8; ++j) {
        for (std::size_t t = 0; t < 13; ++t) EXPECT_EQ(out(j, t), 0.0);
    }
}

TEST(CdtConv, ChannelCountAndParameterSharing) {
    ParameterStore ps;
    Initializer init(2);
    CdtConv grouped(ps, init, "g", trading_groups(false), 8, 3, true);
    EXPECT_EQ(grouped.out_channels(), 16u);
    ParameterStore ps2;
    Initializer init2(2);
    CdtConv dense(ps2, init2, "d", trading_groups(false), 8, 3, false);
    EXPECT_EQ(dense.out_channels(), 16u);
    // Prices bank 8x4x3 + 8, volume bank 8x1x3 + 8; the dense bank is 16x5x3 + 16.
    EXPECT_EQ(grouped.parameter_count(), 8u * 4 * 3 + 8 + 8u * 1 * 3 + 8);
    EXPECT_EQ(dense.parameter_count(), 16u * 5 * 3 + 16);
    EXPECT_LT(grouped.parameter_count(), dense.parameter_count());
}

TEST(CdtConv, FeatureCountMismatch) {
    ParameterStore ps;
    Initializer init(3);
    CdtConv conv(ps, init, "c", trading_groups(false), 2, 3);
    Graph g;
    Binder b(g);
    EXPECT_THROW(conv(b, g.constant(Tensor({6, 13}, 0.5))), ConfigurationError);
    EXPECT_THROW(CdtConv(ps, init, "bad", {{"a", 0, 2}, {"b", 3, 1}}, 2, 3), ConfigurationError);
}

struct CellFixture {
    ParameterStore ps;
    Initializer init{4};
    ConvLstmCell cell{ps, init, "cell", 3, 5, 3};
};

TEST(ConvLstm, ZeroWeightsHalveTheCell) {
    CellFixture f;
    fill(*f.cell.input_kernel, 0.0);
    fill(*f.cell.state_kernel, 0.0);
    fill(*f.cell.bias, 0.0);
    std::mt19937_64 rng(1);
    Graph g;
    Binder b(g);
    const Tensor c = random_tensor(rng, {5, 4}, -2.0, 2.0);
    const auto out = f.cell.step(b, g.constant(random_tensor(rng, {3, 4})),
                                 {g.constant(random_tensor(rng, {5, 4})), g.constant(c)});
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_NEAR(out.c.value().data[i], 0.5 * c.data[i], 1e-15);
        EXPECT_NEAR(out.h.value().data[i], 0.5 * std::tanh(0.5 * c.data[i]), 1e-15);
    }
}

TEST(ConvLstm, ZeroEverythingIsFixedPoint) {
    CellFixture f;
    fill(*f.cell.input_kernel, 0.0);
    fill(*f.cell.state_kernel, 0.0);
    fill(*f.cell.bias, 0.0);
    Graph g;
    Binder b(g);
    const auto out = f.cell.step(b, g.constant(Tensor({3, 4}, 0.0)), f.cell.zero_state(g, 4));
    for (double v : out.h.value().data) EXPECT_EQ(v, 0.0);
}

TEST(ConvLstm, SaturatedForgetGateKeepsCell) {
    CellFixture f;
    fill(*f.cell.input_kernel, 0.0);
    fill(*f.cell.state_kernel, 0.0);
    fill(*f.cell.bias, 0.0);
    for (std::size_t i = 5; i < 10; ++i) f.cell.bias->data[i] = 10.0;  // forget rows
    std::mt19937_64 rng(2);
    Graph g;
    Binder b(g);
    const Tensor c = random_tensor(rng, {5, 4});
    const auto out = f.cell.step(b, g.constant(random_tensor(rng, {3, 4})),
                                 {g.constant(random_tensor(rng, {5, 4})), g.constant(c)});
    const double sigma10 = 1.0 / (1.0 + std::exp(-10.0));
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_NEAR(out.c.value().data[i], sigma10 * c.data[i], 1e-15);
        EXPECT_NEAR(out.c.value().data[i], c.data[i], 1e-4);
    }
}

TEST(ConvLstm, ForgetBiasStartsAtOne) {
    CellFixture f;
    for (std::size_t i = 0; i < 20; ++i) {
        if (i >= 5 && i < 10) {
            EXPECT_EQ(f.cell.bias->data[i], 1.0);
        }
    }
}

TEST(SelfAttention, SingleStep) {
    ParameterStore ps;
    Initializer init(5);
    SelfAttention att(ps, init, "sa", 4);
    std::mt19937_64 rng(3);
    Graph g;
    Binder b(g);
    const Tensor s = random_tensor(rng, {1, 4});
    Var sv = g.constant(s);
    const auto r = att(b, sv);
    ASSERT_EQ(r.weights.value().size(), 1u);
    EXPECT_EQ(r.weights.value().data[0], 1.0);
    const Tensor v = att.value(b, sv).value();
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.output.value().data[i], s.data[i] + v.data[i], 1e-14);
}

TEST(SelfAttention, ZeroQueryKeyIsUniform) {
    ParameterStore ps;
    Initializer init(6);
    SelfAttention att(ps, init, "sa", 4);
    fill(*att.query.weight, 0.0);
    fill(*att.key.weight, 0.0);
    std::mt19937_64 rng(4);
    Graph g;
    Binder b(g);
    const auto r = att(b, g.constant(random_tensor(rng, {5, 4})));
    for (double w : r.weights.value().data) EXPECT_NEAR(w, 0.2, 1e-15);
}

TEST(SelfAttention, RowsSumToOne) {
    ParameterStore ps;
    Initializer init(7);
    SelfAttention att(ps, init, "sa", 6);
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Graph g;
        Binder b(g);
        const auto r = att(b, g.constant(random_tensor(rng, {3, 6}, -3.0, 3.0)));
        expect_rows_sum_to_one(r.weights.value());
    }
}

TEST(InterAttention, SingleEncoderState) {
    ParameterStore ps;
    Initializer init(8);
    InterAttention att(ps, init, "ia", 4);
    std::mt19937_64 rng(6);
    Graph g;
    Binder b(g);
    const Tensor enc = random_tensor(rng, {1, 4});
    const auto r = att(b, g.constant(enc), g.constant(random_tensor(rng, {1, 4})));
    EXPECT_EQ(r.weights.value().data[0], 1.0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(r.output.value().data[i], enc.data[i]);
}

TEST(InterAttention, EqualScoresAverage) {
    ParameterStore ps;
    Initializer init(9);
    InterAttention att(ps, init, "ia", 4);
    fill(*att.score.weight, 0.0);
    std::mt19937_64 rng(7);
    Graph g;
    Binder b(g);
    const Tensor enc = random_tensor(rng, {5, 4});
    const auto r = att(b, g.constant(enc), g.constant(random_tensor(rng, {1, 4})));
    for (std::size_t i = 0; i < 4; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < 5; ++j) mean += enc(j, i) / 5.0;
        EXPECT_NEAR(r.output.value().data[i], mean, 1e-14);
    }
}

TEST(InterAttention, DominantScoreSelectsState) {
    ParameterStore ps;
    Initializer init(10);
    InterAttention att(ps, init, "ia", 4);
    fill(*att.enc_proj.weight, 0.0);
    fill(*att.dec_proj.weight, 0.0);
    fill(*att.dec_proj.bias, 0.0);
    fill(*att.score.weight, 0.0);
    att.enc_proj.weight->data[0] = 100.0;  // hidden unit 0 reads coordinate 0
    att.score.weight->data[0] = 10.0;      // tanh(+-50) = +-1, so scores differ by 20
    std::mt19937_64 rng(8);
    Tensor enc = random_tensor(rng, {4, 4});
    for (std::size_t j = 0; j < 4; ++j) enc(j, 0) = j == 2 ? 0.7 : -0.6;
    Graph g;
    Binder b(g);
    const auto r = att(b, g.constant(enc), g.constant(random_tensor(rng, {1, 4})));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.output.value().data[i], enc(2, i), 1e-6);
}

struct VariationalFixture {
    ParameterStore ps;
    Initializer init{11};
    VariationalPath path{ps, init, "vp", 5, 3};
    std::mt19937_64 rng{12};
};

TEST(Variational, KldZeroAtInitialization) {
    VariationalFixture f;
    Graph g;
    Binder b(g);
    const auto out = f.path(b, g.constant(random_tensor(f.rng, {4, 5})),
                            g.constant(random_tensor(f.rng, {4, 5})), Mode::Train, 3);
    EXPECT_EQ(out.kld.value().data[0], 0.0);
    EXPECT_EQ(out.latent.z.shape(), (ad::Shape{4, 3}));
}

TEST(Variational, KldNonNegativeOnRandomParameters) {
    VariationalFixture f;
    for (int trial = 0; trial < 50; ++trial) {
        for (std::size_t i = 0; i < f.ps.size(); ++i) f.ps.at(i) = random_tensor(f.rng, f.ps.at(i).shape);
        Graph g;
        Binder b(g);
        const auto out = f.path(b, g.constant(random_tensor(f.rng, {4, 5})),
                                g.constant(random_tensor(f.rng, {4, 5})), Mode::Train, trial);
        EXPECT_GE(out.kld.value().data[0], 0.0);
    }
}

TEST(Variational, SamplingAndEvalPaths) {
    VariationalFixture f;
    for (std::size_t i = 0; i < f.ps.size(); ++i) f.ps.at(i) = random_tensor(f.rng, f.ps.at(i).shape);
    const Tensor hf = random_tensor(f.rng, {4, 5});
    const Tensor hb = random_tensor(f.rng, {4, 5});
    Graph g;
    Binder b(g);
    const auto train = f.path(b, g.constant(hf), g.constant(hb), Mode::Train, 9);
    const auto again = f.path(b, g.constant(hf), g.constant(hb), Mode::Train, 9);
    EXPECT_EQ(train.latent.z.value().data, again.latent.z.value().data);
    EXPECT_GT(max_abs_diff(train.latent.z.value(), train.latent.mu_q.value()), 0.0);
    const auto eval = f.path(b, g.constant(hf), g.constant(hb), Mode::Eval, 9);
    EXPECT_EQ(eval.latent.z.value().data, eval.latent.mu_q.value().data);
    const auto prior_only = f.path(b, g.constant(hf), std::nullopt, Mode::Eval, 9);
    EXPECT_EQ(prior_only.latent.z.value().data, prior_only.latent.mu_p.value().data);
    EXPECT_THROW(f.path(b, g.constant(hf), std::nullopt, Mode::Train, 9), ContractError);
}

TEST(Variational, KldGradientWrtPosteriorMean) {
    std::mt19937_64 rng(13);
    const Tensor lq = random_tensor(rng, {4, 3});
    const Tensor mp = random_tensor(rng, {4, 3});
    const Tensor lp = random_tensor(rng, {4, 3});
    const ad::ScalarFn f = [&](Graph& g, Var mu) {
        return ad::gaussian_kl(mu, g.constant(lq), g.constant(mp), g.constant(lp));
    };
    EXPECT_LE(ad::finite_difference_check(f, random_tensor(rng, {4, 3})), 1e-4);
}

const std::vector<Variant> kVariants = {Variant::LstmS, Variant::Clvsa, Variant::ClvsaInputFusion,
                                        Variant::DualClvsa};

TEST(Model, ParameterCountOrdering) {
    ModelConfig cfg;  // default sizes
    cfg.variant = Variant::LstmS;
    const auto lstm = Model(cfg, 1).parameter_count();
    cfg.variant = Variant::Clvsa;
    const auto clvsa = Model(cfg, 1).parameter_count();
    cfg.variant = Variant::DualClvsa;
    const auto dual = Model(cfg, 1).parameter_count();
    EXPECT_GT(dual, clvsa);
    EXPECT_GT(clvsa, lstm);
}

TEST(Model, ForwardShapesKldAndAttention) {
    for (Variant v : kVariants) {
        Model m(small_config(v), 5);
        for (Mode mode : {Mode::Train, Mode::Eval}) {
            Graph g;
            const auto r = m.forward(g, samples()[1], samples()[0], mode, 17);
            EXPECT_EQ(r.logits.value().size(), 3u);
            const double kld = r.kld.value().data[0];
            EXPECT_GE(kld, 0.0);
            if (v == Variant::LstmS) {
                EXPECT_EQ(kld, 0.0);
                EXPECT_TRUE(r.attention.empty());
            } else {
                EXPECT_FALSE(r.attention.empty());
            }
            for (const Var& a : r.attention) expect_rows_sum_to_one(a.value());
        }
    }
}

TEST(Model, EvalIsDeterministicAndSeedReproducible) {
    for (Variant v : kVariants) {
        Model a(small_config(v), 9);
        Model b(small_config(v), 9);
        Model c(small_config(v), 10);
        Graph g1, g2, g3, g4;
        const auto l1 = a.forward(g1, samples()[2], samples()[1], Mode::Eval).logits.value();
        const auto l2 = a.forward(g2, samples()[2], samples()[1], Mode::Eval).logits.value();
        const auto l3 = b.forward(g3, samples()[2], samples()[1], Mode::Eval).logits.value();
        const auto l4 = c.forward(g4, samples()[2], samples()[1], Mode::Eval).logits.value();
        EXPECT_EQ(l1.data, l2.data);
        EXPECT_EQ(l1.data, l3.data);
        EXPECT_NE(l1.data, l4.data);
    }
}

TEST(Model, ClvsaIgnoresSentimentAndFusionDoesNot) {
    auto changed = samples()[2];
    auto prev = samples()[1];
    for (double& x : changed.sentiment_frame.data) x = -x + 0.3;
    for (Variant v : kVariants) {
        Model m(small_config(v), 2);
        Graph g1, g2;
        const auto a = m.forward(g1, samples()[2], prev, Mode::Eval).logits.value();
        const auto b = m.forward(g2, changed, prev, Mode::Eval).logits.value();
        if (v == Variant::Clvsa) {
            EXPECT_EQ(a.data, b.data);
        } else {
            EXPECT_GT(max_abs_diff(a, b), 0.0) << variant_name(v);
        }
    }
}

TEST(Model, LstmSWithoutSentimentIgnoresIt) {
    auto cfg = small_config(Variant::LstmS);
    cfg.use_sentiment = false;
    Model m(cfg, 2);
    auto changed = samples()[2];
    for (double& x : changed.sentiment_frame.data) x += 1.0;
    Graph g1, g2;
    EXPECT_EQ(m.forward(g1, samples()[2], samples()[1], Mode::Eval).logits.value().data,
              m.forward(g2, changed, samples()[1], Mode::Eval).logits.value().data);
}

TEST(Model, DualChannelSeparationOnPaddedSentiment) {
    Model m(small_config(Variant::DualClvsa), 3);
    auto cur = samples()[3];
    auto prev = samples()[2];
    for (auto* s : {&cur, &prev}) {
        std::fill(s->sentiment_frame.data.begin(), s->sentiment_frame.data.end(), 0.0);
        std::fill(s->sentiment_mask.begin(), s->sentiment_mask.end(), 0);
    }
    const auto kernels = m.sentiment_conv_kernels();
    ASSERT_EQ(kernels.size(), data::kSentimentFeatures);
    m.parameters().zero_grad();
    Graph g;
    const auto r = m.forward(g, cur, prev, Mode::Train, 4);
    const Var l = train::loss(r.logits, static_cast<std::size_t>(cur.label), r.kld, 0.1);
    g.backward(l);
    const Tensor before = r.logits.value();
    for (Tensor* k : kernels) {
        ASSERT_TRUE(k->has_grad());
        for (double v : k->grad) EXPECT_EQ(v, 0.0);
    }
    // Perturbing the kernels leaves the logits untouched.
    for (Tensor* k : kernels) {
        for (double& v : k->data) v += 0.25;
    }
    Graph g2;
    EXPECT_EQ(m.forward(g2, cur, prev, Mode::Train, 4).logits.value().data, before.data);
}

TEST(Model, EndToEndGradientCheck) {
    for (Variant v : kVariants) {
        Model m(small_config(v), 21);
        const auto& cur = samples()[4];
        const auto& prev = samples()[3];
        const auto loss = [&](bool with_backward) {
            Graph g;
            const auto r = m.forward(g, cur, prev, Mode::Train, 8);
            const Var l = train::loss(r.logits, static_cast<std::size_t>(cur.label), r.kld, 0.1);
            if (with_backward) g.backward(l);
            return l.value().data[0];
        };
        std::mt19937_64 rng(100 + static_cast<int>(v));
        std::vector<ad::WeightCoordinate> coords;
        auto& ps = m.parameters();
        while (coords.size() < 32) {
            Tensor& t = ps.at(rng() % ps.size());
            coords.push_back({&t, static_cast<std::size_t>(rng() % t.size())});
        }
        ps.zero_grad();
        EXPECT_LE(ad::finite_difference_check(loss, coords), 1e-3) << variant_name(v);
    }
}

TEST(Model, CheckpointRoundTrip) {
    for (Variant v : kVariants) {
        Model a(small_config(v), 40);
        Model b(small_config(v), 41);
        std::stringstream ss;
        a.save(ss);
        b.load(ss);
        Graph g1, g2;
        EXPECT_EQ(a.forward(g1, samples()[2], samples()[1], Mode::Eval).logits.value().data,
                  b.forward(g2, samples()[2], samples()[1], Mode::Eval).logits.value().data);
    }
}

TEST(Model, CheckpointMismatchIsDataError) {
    Model a(small_config(Variant::Clvsa), 1);
    Model b(small_config(Variant::DualClvsa), 1);
    std::stringstream ss;
    a.save(ss);
    EXPECT_THROW(b.load(ss), DataError);
    auto big = small_config(Variant::Clvsa);
    big.hidden = 7;
    Model c(big, 1);
    std::stringstream ss2;
    a.save(ss2);
    EXPECT_THROW(c.load(ss2), DataError);
    std::stringstream junk("not a checkpoint");
    EXPECT_THROW(a.load(junk), DataError);
}

TEST(Model, ProbabilitiesSumToOne) {
    const auto p = probabilities(Tensor({1, 3}, std::vector<double>{1.0, 2.0, 3.0}));
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
    EXPECT_NEAR(p[2] / p[1], std::exp(1.0), 1e-12);
}

}  // namespace
}  // namespace dualclvsa::model
