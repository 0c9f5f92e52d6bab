#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dualclvsa/errors.h"
#include "dualclvsa/model.h"
#include "dualclvsa/run_config.h"

namespace fs = std::filesystem;
using namespace dualclvsa;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t line_count(const fs::path& p) {
    const std::string text = slurp(p);
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("dualclvsa_cli_") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    // Exit status of the CLI; stdout and stderr go to files in the work dir.
    int run(const std::string& args) {
        const std::string cmd = std::string("cd '") + dir_.string() + "' && '" + DUALCLVSA_CLI + "' " + args +
                                " > stdout.txt 2> stderr.txt";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
    std::string out() const { return slurp(dir_ / "stdout.txt"); }
    std::string err() const { return slurp(dir_ / "stderr.txt"); }

    void write(const std::string& name, const std::string& text) {
        std::ofstream(dir_ / name, std::ios::binary) << text;
    }

    fs::path dir_;
};

const char* kSmallTrain =
    "--train-months 2 --test-months 1 --step-months 1 --epochs 1 --hidden 4 --head-hidden 4 "
    "--conv-channels 2 --latent 2";

}  // namespace

// ---- RunConfig ---------------------------------------------------------------

TEST(RunConfig, DefaultsAreTradingOnly) {
    RunConfig cfg;
    EXPECT_EQ(cfg.model.variant, model::Variant::LstmS);
    EXPECT_FALSE(cfg.model.use_sentiment);
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_NO_THROW(cfg.validate());
}

TEST(RunConfig, FileOverridesDefaultsAndFlagsOverrideFile) {
    RunConfig cfg;
    std::istringstream file("# comment\n\ndays = 30\nepochs=3\n  variant = clvsa  \n");
    apply_config_text(cfg, file, "run.cfg");
    EXPECT_EQ(cfg.synth.days, 30u);
    EXPECT_EQ(cfg.train.epochs, 3u);
    EXPECT_EQ(cfg.model.variant, model::Variant::Clvsa);
    EXPECT_EQ(cfg.train.batch_size, train::TrainConfig{}.batch_size);

    apply_setting(cfg, "days", "40");
    EXPECT_EQ(cfg.synth.days, 40u);
    EXPECT_EQ(cfg.train.epochs, 3u);
}

TEST(RunConfig, SeedAndJobsReachEveryStage) {
    RunConfig cfg;
    apply_setting(cfg, "seed", "9");
    apply_setting(cfg, "jobs", "3");
    EXPECT_EQ(cfg.train.seed, 9u);
    EXPECT_EQ(cfg.experiment.seed, 9u);
    EXPECT_EQ(cfg.experiment.train.seed, 9u);
    EXPECT_EQ(cfg.train.jobs, 3u);
    EXPECT_EQ(cfg.experiment.train.jobs, 3u);
}

TEST(RunConfig, IndicatorsSetModelAndFrames) {
    RunConfig cfg;
    apply_setting(cfg, "indicators", "true");
    EXPECT_TRUE(cfg.model.use_indicators);
    EXPECT_TRUE(cfg.frames.use_indicators);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
    RunConfig cfg;
    EXPECT_THROW(apply_setting(cfg, "epoch", "3"), ConfigurationError);
    EXPECT_THROW(apply_setting(cfg, "epochs", "-3"), ConfigurationError);
    EXPECT_THROW(apply_setting(cfg, "epochs", "3x"), ConfigurationError);
    EXPECT_THROW(apply_setting(cfg, "density", "dense"), ConfigurationError);
    EXPECT_THROW(apply_setting(cfg, "sentiment", "maybe"), ConfigurationError);
    EXPECT_THROW(apply_setting(cfg, "variant", "transformer"), ConfigurationError);
    EXPECT_THROW(apply_setting(cfg, "from", "yesterday"), ConfigurationError);

    std::istringstream bad("days 30\n");
    try {
        apply_config_text(cfg, bad, "run.cfg");
        FAIL() << "expected ConfigurationError";
    } catch (const ConfigurationError& e) {
        EXPECT_NE(std::string(e.what()).find("run.cfg:1"), std::string::npos);
    }
}

TEST(RunConfig, ValidateCatchesRanges) {
    RunConfig cfg;
    cfg.synth.days = 0;
    EXPECT_THROW(cfg.validate(), ConfigurationError);
    cfg = RunConfig{};
    cfg.synth.sentiment_density = 1.5;
    EXPECT_THROW(cfg.validate(), ConfigurationError);
    cfg = RunConfig{};
    apply_setting(cfg, "from", "2011-02-01");
    apply_setting(cfg, "to", "2011-01-01");
    EXPECT_THROW(cfg.validate(), ConfigurationError);
}

TEST(RunConfig, WrittenConfigReadsBackIdentically) {
    RunConfig cfg;
    apply_setting(cfg, "seed", "5");
    apply_setting(cfg, "variant", "dual_clvsa");
    apply_setting(cfg, "sentiment", "true");
    apply_setting(cfg, "learning_rate", "0.003");
    apply_setting(cfg, "from", "2011-01-03");
    apply_setting(cfg, "experiment.densities", "1, 0.25,0");
    apply_setting(cfg, "predictions", "a.csv,b.csv");
    std::ostringstream first;
    write_config(first, cfg);

    RunConfig back;
    std::istringstream in(first.str());
    apply_config_text(back, in, "dump");
    std::ostringstream second;
    write_config(second, back);
    EXPECT_EQ(first.str(), second.str());
    EXPECT_EQ(back.experiment.densities, (std::vector<double>{1.0, 0.25, 0.0}));
    EXPECT_EQ(back.prediction_paths.size(), 2u);
}

TEST(RunConfig, EveryKeyIsSettableFromItsOwnDump) {
    RunConfig cfg;
    std::ostringstream dump;
    write_config(dump, cfg);
    std::istringstream in(dump.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) ++n;
    EXPECT_EQ(n, setting_keys().size());
}

// ---- command line ------------------------------------------------------------

TEST_F(CliTest, GenDataIsByteIdenticalForTheSameSeed) {
    ASSERT_EQ(run("gen-data --days 100 --density 1.0 --seed 7 --out-dir a"), 0) << err();
    EXPECT_NE(out().find("seed 7"), std::string::npos);
    ASSERT_EQ(run("gen-data --days 100 --density 1.0 --seed 7 --out-dir b"), 0) << err();
    EXPECT_EQ(slurp(dir_ / "a/bars.csv"), slurp(dir_ / "b/bars.csv"));
    EXPECT_EQ(slurp(dir_ / "a/trmi.csv"), slurp(dir_ / "b/trmi.csv"));
    EXPECT_EQ(line_count(dir_ / "a/bars.csv"), 100u * 13u + 1u);

    ASSERT_EQ(run("gen-data --days 100 --seed 8 --out-dir c"), 0) << err();
    EXPECT_NE(slurp(dir_ / "a/bars.csv"), slurp(dir_ / "c/bars.csv"));
}

TEST_F(CliTest, ZeroDensityWritesHeaderOnly) {
    ASSERT_EQ(run("gen-data --days 20 --density 0 --out-dir o"), 0) << err();
    EXPECT_EQ(line_count(dir_ / "o/trmi.csv"), 1u);
}

TEST_F(CliTest, ZeroDaysIsAUsageError) {
    EXPECT_EQ(run("gen-data --days 0"), 2);
    const std::string e = err();
    EXPECT_NE(e.find("days"), std::string::npos);
    EXPECT_EQ(std::count(e.begin(), e.end(), '\n'), 1);
}

TEST_F(CliTest, MalformedFlagsAreSingleLineUsageErrors) {
    for (const char* args : {"gen-data --days ten", "gen-data --no-such-flag"}) {
        EXPECT_EQ(run(args), 2) << args;
        const std::string e = err();
        EXPECT_EQ(std::count(e.begin(), e.end(), '\n'), 1) << args;
    }
    EXPECT_EQ(run("experiment nonsense"), 2);
    EXPECT_EQ(run("--help"), 0);
}

TEST_F(CliTest, ConfigFileSitsBetweenDefaultsAndFlags) {
    write("run.cfg", "days = 3\ndensity = 0\nseed = 4\n");
    ASSERT_EQ(run("--config run.cfg gen-data --out-dir f"), 0) << err();
    EXPECT_EQ(line_count(dir_ / "f/bars.csv"), 3u * 13u + 1u);
    EXPECT_EQ(line_count(dir_ / "f/trmi.csv"), 1u);
    EXPECT_NE(out().find("seed 4"), std::string::npos);

    ASSERT_EQ(run("--config run.cfg gen-data --days 5 --out-dir g"), 0) << err();
    EXPECT_EQ(line_count(dir_ / "g/bars.csv"), 5u * 13u + 1u);

    write("bad.cfg", "dayz = 3\n");
    EXPECT_EQ(run("--config bad.cfg gen-data"), 2);
    EXPECT_NE(err().find("dayz"), std::string::npos);
    EXPECT_EQ(run("--config missing.cfg gen-data"), 2);
}

TEST_F(CliTest, UnwritableOutputNamesThePath) {
    write("blocker", "x");
    EXPECT_EQ(run("gen-data --days 3 --out-dir blocker/sub"), 1);
    EXPECT_NE(err().find("blocker/sub"), std::string::npos);
}

TEST_F(CliTest, DualWithoutSentimentIsAUsageError) {
    ASSERT_EQ(run("gen-data --days 80 --out-dir o"), 0) << err();
    EXPECT_EQ(run("train --variant dual_clvsa --out-dir o"), 2);
    EXPECT_NE(err().find("sentiment"), std::string::npos);
    EXPECT_EQ(run("train --variant clvsa_input_fusion --out-dir o"), 2);
    EXPECT_FALSE(fs::exists(dir_ / "o/predictions_dual_clvsa.csv"));
}

TEST_F(CliTest, PreprocessLeavesInputsUntouched) {
    ASSERT_EQ(run("gen-data --days 30 --psychvars --out-dir o"), 0) << err();
    const std::string bars = slurp(dir_ / "o/bars.csv");
    const std::string trmi = slurp(dir_ / "o/trmi.csv");
    const auto stamp = fs::last_write_time(dir_ / "o/bars.csv");
    ASSERT_EQ(run("preprocess --out-dir o"), 0) << err();
    EXPECT_EQ(slurp(dir_ / "o/bars.csv"), bars);
    EXPECT_EQ(slurp(dir_ / "o/trmi.csv"), trmi);
    EXPECT_EQ(fs::last_write_time(dir_ / "o/bars.csv"), stamp);
    EXPECT_EQ(line_count(dir_ / "o/aligned.csv"), 30u * 13u + 1u);
    EXPECT_TRUE(fs::exists(dir_ / "o/buzz_stats.csv"));

    // TRMI recomputed from raw psychvars aligns the same way.
    ASSERT_EQ(run("preprocess --out-dir p --bars o/bars.csv --psychvars o/psychvars.csv --polarity o/polarity.csv"),
              0)
        << err();
    EXPECT_EQ(line_count(dir_ / "p/aligned.csv"), 30u * 13u + 1u);
}

TEST_F(CliTest, TrainIsDeterministicAndWritesCheckpoints) {
    ASSERT_EQ(run("gen-data --days 130 --seed 3 --out-dir o"), 0) << err();
    const std::string args = std::string("train --variant dual_clvsa --sentiment --seed 3 ") + kSmallTrain;
    ASSERT_EQ(run(args + " --out-dir o"), 0) << err();
    EXPECT_NE(out().find("MAP"), std::string::npos);
    const std::string first = slurp(dir_ / "o/predictions_dual_clvsa.csv");
    const std::string log = slurp(dir_ / "o/training_log_dual_clvsa.csv");
    ASSERT_EQ(run(args + " --out-dir o --jobs 2"), 0) << err();
    EXPECT_EQ(slurp(dir_ / "o/predictions_dual_clvsa.csv"), first);
    EXPECT_EQ(slurp(dir_ / "o/training_log_dual_clvsa.csv"), log);
    EXPECT_TRUE(fs::exists(dir_ / "o/checkpoints/dual_clvsa/fold_0.ckpt"));
}

TEST_F(CliTest, LstmSWithIndicatorsTrainsOnIndicatorFeatures) {
    ASSERT_EQ(run("gen-data --days 130 --out-dir o"), 0) << err();
    ASSERT_EQ(run(std::string("train --variant lstm_s --indicators --out-dir o ") + kSmallTrain), 0) << err();

    model::ModelConfig mc;
    mc.variant = model::Variant::LstmS;
    mc.use_sentiment = false;
    mc.use_indicators = true;
    mc.hidden = 4;
    mc.head_hidden = 4;
    mc.conv_channels = 2;
    mc.latent = 2;
    model::Model with(mc, 1);
    std::ifstream ckpt(dir_ / "o/checkpoints/lstm_s/fold_0.ckpt", std::ios::binary);
    EXPECT_NO_THROW(with.load(ckpt));

    mc.use_indicators = false;
    model::Model without(mc, 1);
    std::ifstream again(dir_ / "o/checkpoints/lstm_s/fold_0.ckpt", std::ios::binary);
    EXPECT_THROW(without.load(again), DataError);
}

TEST_F(CliTest, BacktestPrintsOneRowPerPredictionFile) {
    ASSERT_EQ(run("gen-data --days 130 --out-dir o"), 0) << err();
    ASSERT_EQ(run(std::string("train --variant lstm_s --out-dir o ") + kSmallTrain), 0) << err();
    ASSERT_EQ(run(std::string("train --variant clvsa --out-dir o ") + kSmallTrain), 0) << err();
    ASSERT_EQ(run("backtest --out-dir o"), 0) << err();
    const std::string text = out();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
    EXPECT_EQ(text.rfind("model", 0), 0u);
    EXPECT_LT(text.find("MAP"), text.find("AAR"));
    EXPECT_NE(text.find("\nclvsa "), std::string::npos);
    EXPECT_NE(text.find("\nlstm_s "), std::string::npos);
    for (const char* f : {"equity", "monthly", "trades"}) {
        EXPECT_TRUE(fs::exists(dir_ / ("o/backtest_clvsa_" + std::string(f) + ".csv"))) << f;
    }
    const std::string equity = slurp(dir_ / "o/backtest_clvsa_equity.csv");
    ASSERT_EQ(run("backtest --out-dir o o/predictions_clvsa.csv"), 0) << err();
    const std::string single = out();
    EXPECT_EQ(std::count(single.begin(), single.end(), '\n'), 2);
    EXPECT_EQ(slurp(dir_ / "o/backtest_clvsa_equity.csv"), equity);
}

TEST_F(CliTest, BacktestRangeOutsideDataIsAnError) {
    ASSERT_EQ(run("gen-data --days 130 --out-dir o"), 0) << err();
    ASSERT_EQ(run(std::string("train --out-dir o ") + kSmallTrain), 0) << err();
    EXPECT_EQ(run("backtest --out-dir o --from 1999-01-01 --to 1999-02-01"), 1);
    EXPECT_NE(err().find("span"), std::string::npos);
    EXPECT_EQ(run("backtest --out-dir o --from 2010-03-01 --to 2010-04-01"), 0) << err();
}

TEST_F(CliTest, ZeroSignalPredictionsNeverTrade) {
    ASSERT_EQ(run("gen-data --days 10 --out-dir o"), 0) << err();
    std::ostringstream preds;
    preds << "timestamp,score_down,score_flat,score_up,label\n";
    for (int d : {4, 5, 6, 7, 8}) {
        preds << "2010-01-0" << d << "T20:30:00Z,0.1,0.8,0.1,flat\n";
    }
    write("o/predictions_flat.csv", preds.str());
    ASSERT_EQ(run("backtest --out-dir o o/predictions_flat.csv"), 0) << err();
    EXPECT_EQ(line_count(dir_ / "o/backtest_flat_trades.csv"), 1u);
    EXPECT_NE(slurp(dir_ / "o/backtest_flat_report.txt").find("trades: 0"), std::string::npos);
    EXPECT_NE(out().find("0.00%"), std::string::npos);
}

TEST_F(CliTest, ExperimentCsvIsDeterministic) {
    write("tiny.cfg",
          "experiment.days = 130\nexperiment.epochs = 1\nexperiment.train_months = 2\n"
          "experiment.test_months = 1\nexperiment.step_months = 2\nexperiment.hidden = 4\n"
          "experiment.head_hidden = 4\nexperiment.conv_channels = 2\nexperiment.latent = 2\n");
    ASSERT_EQ(run("--config tiny.cfg experiment fusion_benefit --out-dir a"), 0) << err();
    EXPECT_NE(out().find("gap dual_clvsa - clvsa"), std::string::npos);
    ASSERT_EQ(run("--config tiny.cfg experiment fusion_benefit --out-dir b"), 0) << err();
    EXPECT_EQ(slurp(dir_ / "a/experiment_fusion_benefit.csv"), slurp(dir_ / "b/experiment_fusion_benefit.csv"));
    EXPECT_EQ(line_count(dir_ / "a/experiment_fusion_benefit.csv"), 3u);
}
