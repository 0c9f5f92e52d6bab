#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dualclvsa/backtest.h"
#include "dualclvsa/csv.h"
#include "dualclvsa/data.h"
#include "dualclvsa/errors.h"
#include "dualclvsa/experiment.h"
#include "dualclvsa/run_config.h"
#include "dualclvsa/trainer.h"

namespace fs = std::filesystem;
using namespace dualclvsa;

namespace {

// Flag values captured by CLI11, applied on top of defaults and the config file.
class FlagSettings {
public:
    void option(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        auto* opt = app->add_option(flag, values_[key], help);
        options_.push_back({key, opt, ""});
    }
    // --name sets the key to true, --no-name to false.
    void toggle(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
        options_.push_back({key, app->add_flag("--" + name)->description(help), "true"});
        options_.push_back({key, app->add_flag("--no-" + name)->description("disable --" + name), "false"});
    }

    void apply(RunConfig& cfg) const {
        for (const auto& o : options_) {
            if (o.opt->count() == 0) continue;
            apply_setting(cfg, o.key, o.fixed.empty() ? values_.at(o.key) : o.fixed);
        }
    }

private:
    struct Entry {
        std::string key;
        CLI::Option* opt;
        std::string fixed;
    };
    std::map<std::string, std::string> values_;
    std::vector<Entry> options_;
};

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

template <class Writer>
void write_file(const std::string& path, Writer&& writer) {
    auto out = open_output(path);
    writer(out);
    out.flush();
    if (!out) throw IoError("failed writing '" + path + "'");
}

std::string pct(double v) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(1);
    s << 100.0 * v << '%';
    return s.str();
}

std::vector<data::TrmiRecord> load_sentiment(const RunConfig& cfg, bool required) {
    if (!cfg.psychvar_path.empty()) {
        auto pin = open_input(cfg.psychvar_path);
        const auto records = data::read_psychvar_csv(pin);
        auto polarity = data::synthetic_polarity();
        if (!cfg.polarity_path.empty()) {
            auto in = open_input(cfg.polarity_path);
            polarity = data::read_polarity_csv(in);
        }
        std::vector<data::TrmiRecord> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back(data::trmi_record_from_psychvars(r, polarity));
        return out;
    }
    const std::string path = cfg.path_or_default(cfg.trmi_path, "trmi.csv");
    if (!required && cfg.trmi_path.empty() && !fs::exists(path)) return {};
    return data::load_trmi(path);
}

std::vector<data::AlignedPoint> load_aligned(const RunConfig& cfg, bool sentiment_required) {
    const auto bars = data::load_bars(cfg.path_or_default(cfg.bars_path, "bars.csv"));
    const auto trmi = load_sentiment(cfg, sentiment_required);
    return data::bind_align(bars, trmi, cfg.synth.interval_seconds);
}

// ---- commands ----------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, bool with_psychvars) {
    ensure_dir(cfg.out_dir);
    const auto d = data::generate_synthetic(cfg.synth, cfg.seed);
    const std::string bars = cfg.out_dir + "/bars.csv";
    const std::string trmi = cfg.out_dir + "/trmi.csv";
    write_file(bars, [&](std::ostream& o) { data::write_bars_csv(o, d.bars); });
    write_file(trmi, [&](std::ostream& o) { data::write_trmi_csv(o, d.trmi); });
    if (with_psychvars) {
        write_file(cfg.out_dir + "/psychvars.csv",
                   [&](std::ostream& o) { data::write_psychvar_csv(o, d.psychvars, d.psychvar_names); });
        write_file(cfg.out_dir + "/polarity.csv", [&](std::ostream& o) { data::write_polarity_csv(o, d.polarity); });
    }
    std::cout << "gen-data: " << d.bars.size() << " bars -> " << bars << ", " << d.trmi.size()
              << " trmi records -> " << trmi << " (seed " << cfg.seed << ", signal "
              << data::signal_channel_name(cfg.synth.signal_channel) << ", density "
              << format_double(cfg.synth.sentiment_density, 6) << ")\n";
    return 0;
}

int cmd_preprocess(const RunConfig& cfg) {
    const auto trmi = load_sentiment(cfg, true);
    const auto bars = data::load_bars(cfg.path_or_default(cfg.bars_path, "bars.csv"));
    const auto aligned = data::bind_align(bars, trmi, cfg.synth.interval_seconds);
    std::size_t covered = 0;
    for (const auto& p : aligned) covered += p.trmi.any_present() ? 1 : 0;

    ensure_dir(cfg.out_dir);
    const std::string aligned_path = cfg.out_dir + "/aligned.csv";
    const std::string buzz_path = cfg.out_dir + "/buzz_stats.csv";
    write_file(aligned_path, [&](std::ostream& o) { data::write_aligned_csv(o, aligned); });
    const auto hourly = backtest::buzz_stats(trmi, backtest::BuzzGrouping::HourOfDay);
    const auto monthly = backtest::buzz_stats(trmi, backtest::BuzzGrouping::CalendarMonth);
    write_file(buzz_path, [&](std::ostream& o) { backtest::write_buzz_stats_csv(o, hourly, monthly); });
    std::cout << "preprocess: " << aligned.size() << " intervals, " << covered << " with sentiment ("
              << pct(aligned.empty() ? 0.0 : double(covered) / double(aligned.size())) << ") -> "
              << aligned_path << ", buzz stats -> " << buzz_path << '\n';
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    cfg.model.validate();
    cfg.train.validate();
    const std::string variant = model::variant_name(cfg.model.variant);
    const auto aligned = load_aligned(cfg, cfg.model.use_sentiment);
    const auto samples = data::build_day_frames(aligned, cfg.frames);

    const std::string ckpt_dir = cfg.out_dir + "/checkpoints/" + variant;
    ensure_dir(ckpt_dir);
    const auto folds = train::walk_forward(samples, cfg.model, cfg.train,
                                           [&](const train::FoldResult& f, const model::Model& m) {
                                               write_file(ckpt_dir + "/fold_" + std::to_string(f.fold) + ".ckpt",
                                                          [&](std::ostream& o) { m.save(o); });
                                           });

    const std::string pred_path = cfg.out_dir + "/predictions_" + variant + ".csv";
    const std::string log_path = cfg.out_dir + "/training_log_" + variant + ".csv";
    write_file(pred_path, [&](std::ostream& o) { train::write_predictions_csv(o, folds); });
    write_file(log_path, [&](std::ostream& o) { train::write_training_log_csv(o, folds); });

    std::vector<train::Prediction> all;
    for (const auto& f : folds) all.insert(all.end(), f.predictions.begin(), f.predictions.end());
    std::cout << "train " << variant << (cfg.model.use_indicators ? " +indicators" : "")
              << (cfg.model.use_sentiment ? " +sentiment" : "") << ": " << folds.size() << " folds, " << all.size()
              << " predictions, accuracy " << pct(train::accuracy(all)) << ", MAP "
              << pct(train::mean_average_precision(all)) << " -> " << pred_path << '\n';
    return 0;
}

std::string row_name(const std::string& path) {
    std::string stem = fs::path(path).stem().string();
    const std::string prefix = "predictions_";
    if (stem.rfind(prefix, 0) == 0 && stem.size() > prefix.size()) stem = stem.substr(prefix.size());
    return stem;
}

int cmd_backtest(const RunConfig& cfg) {
    std::vector<std::string> files = cfg.prediction_paths;
    if (files.empty()) {
        if (fs::is_directory(cfg.out_dir)) {
            for (const auto& e : fs::directory_iterator(cfg.out_dir)) {
                const std::string name = e.path().filename().string();
                if (name.rfind("predictions_", 0) == 0 && e.path().extension() == ".csv") {
                    files.push_back(e.path().string());
                }
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw ConfigurationError("no prediction files given and none found in " + cfg.out_dir);
    }
    const auto bars = data::load_bars(cfg.path_or_default(cfg.bars_path, "bars.csv"));

    // Run everything first so a bad file leaves no partial table behind.
    std::vector<std::pair<std::string, backtest::BacktestReport>> reports;
    for (const auto& file : files) {
        auto in = open_input(file);
        const auto predictions = train::read_predictions_csv(in);
        reports.emplace_back(row_name(file), backtest::run_backtest(predictions, bars, cfg.backtest));
    }

    ensure_dir(cfg.out_dir);
    std::cout << backtest::metrics_table_header() << '\n';
    for (const auto& [name, report] : reports) {
        const std::string base = cfg.out_dir + "/backtest_" + name;
        write_file(base + "_equity.csv", [&](std::ostream& o) { backtest::write_equity_csv(o, report); });
        write_file(base + "_monthly.csv", [&](std::ostream& o) { backtest::write_monthly_csv(o, report); });
        write_file(base + "_trades.csv", [&](std::ostream& o) { backtest::write_trades_csv(o, report); });
        write_file(base + "_report.txt", [&](std::ostream& o) { backtest::write_report(o, name, report); });
        std::cout << backtest::metrics_table_row(name, report) << '\n';
    }
    return 0;
}

int cmd_experiment(const RunConfig& cfg, const std::string& name) {
    const auto kind = experiment::parse_kind(name);
    const auto result = experiment::run(kind, cfg.experiment);
    ensure_dir(cfg.out_dir);
    const std::string base = cfg.out_dir + "/experiment_" + name;
    write_file(base + ".csv", [&](std::ostream& o) { experiment::write_csv(o, result); });
    write_file(base + ".txt", [&](std::ostream& o) { experiment::write_summary(o, result); });
    experiment::write_summary(std::cout, result);
    std::cout << "-> " << base << ".csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-channel sentiment/price movement forecasting: data, training, backtests"};
    app.require_subcommand(1);
    app.fallthrough();

    FlagSettings flags;
    std::string config_path;
    app.add_option("--config", config_path, "key = value settings file (flags take precedence)");
    flags.option(&app, "--seed", "seed", "seed for every stochastic step");
    flags.option(&app, "--out-dir", "out_dir", "output directory (also the default input location)");
    flags.option(&app, "--jobs", "jobs", "walk-forward folds trained concurrently");

    auto* gen = app.add_subcommand("gen-data", "write synthetic bars.csv and trmi.csv");
    flags.option(gen, "--days", "days", "trading days");
    flags.option(gen, "--density", "density", "share of intervals carrying sentiment records");
    flags.option(gen, "--signal", "signal", "planted signal: price, sentiment, both or none");
    flags.option(gen, "--strength", "strength", "planted signal strength");
    flags.option(gen, "--intervals-per-day", "intervals_per_day", "intervals per trading day");
    bool with_psychvars = false;
    gen->add_flag("--psychvars", with_psychvars, "also write psychvars.csv and polarity.csv");

    auto* pre = app.add_subcommand("preprocess", "align sentiment onto bars; buzz statistics");
    flags.option(pre, "--bars", "bars", "bars CSV (default <out-dir>/bars.csv)");
    flags.option(pre, "--trmi", "trmi", "TRMI CSV (default <out-dir>/trmi.csv)");
    flags.option(pre, "--psychvars", "psychvars", "raw PsychVar CSV; TRMI is computed from it");
    flags.option(pre, "--polarity", "polarity", "polarity table CSV for --psychvars");
    flags.option(pre, "--interval-seconds", "interval_seconds", "bar interval in seconds");

    auto* tr = app.add_subcommand("train", "walk-forward training and out-of-sample predictions");
    flags.option(tr, "--variant", "variant", "lstm_s, clvsa, clvsa_input_fusion or dual_clvsa");
    flags.toggle(tr, "sentiment", "sentiment", "feed TRMI sentiment features");
    flags.toggle(tr, "indicators", "indicators", "add technical indicators to the trading features");
    flags.option(tr, "--bars", "bars", "bars CSV (default <out-dir>/bars.csv)");
    flags.option(tr, "--trmi", "trmi", "TRMI CSV (default <out-dir>/trmi.csv)");
    flags.option(tr, "--psychvars", "psychvars", "raw PsychVar CSV; TRMI is computed from it");
    flags.option(tr, "--polarity", "polarity", "polarity table CSV for --psychvars");
    flags.option(tr, "--epochs", "epochs", "epochs per fold");
    flags.option(tr, "--batch-size", "batch_size", "mini-batch size");
    flags.option(tr, "--lr", "learning_rate", "Adam learning rate");
    flags.option(tr, "--kld-weight", "kld_weight", "KL weight after warm-up");
    flags.option(tr, "--train-months", "train_months", "training window in months");
    flags.option(tr, "--test-months", "test_months", "test window in months");
    flags.option(tr, "--step-months", "step_months", "fold step in months");
    flags.option(tr, "--hidden", "hidden", "ConvLSTM hidden width");
    flags.option(tr, "--latent", "latent", "latent width");
    flags.option(tr, "--conv-channels", "conv_channels", "kernels per convolution group");
    flags.option(tr, "--head-hidden", "head_hidden", "classifier hidden width");
    flags.toggle(tr, "warm-start", "warm_start", "carry weights from the previous fold");

    auto* bt = app.add_subcommand("backtest", "trade predictions against bars; metrics table");
    std::vector<std::string> prediction_files;
    bt->add_option("predictions", prediction_files, "prediction CSVs (default <out-dir>/predictions_*.csv)");
    flags.option(bt, "--bars", "bars", "bars CSV (default <out-dir>/bars.csv)");
    flags.option(bt, "--threshold", "threshold", "minimum winning probability to take a position");
    flags.option(bt, "--cost", "cost", "cost per side as a fraction of notional");
    flags.option(bt, "--risk-free", "risk_free", "annual risk-free rate");
    flags.option(bt, "--from", "from", "first date of the sub-period (inclusive)");
    flags.option(bt, "--to", "to", "end date of the sub-period (exclusive)");

    auto* ex = app.add_subcommand("experiment", "canned comparisons on planted-signal synthetic data");
    std::string experiment_name;
    ex->add_option("name", experiment_name, "fusion_benefit, input_fusion_harm or sparsity_sweep")->required();
    flags.option(ex, "--days", "experiment.days", "trading days of synthetic data");
    flags.option(ex, "--epochs", "experiment.epochs", "epochs per fold");
    flags.option(ex, "--strength", "experiment.strength", "planted signal strength");
    flags.option(ex, "--densities", "experiment.densities", "comma-separated sentiment densities");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "dualclvsa: usage error: " << one_line(e.what()) << " (see --help)\n";
        return 2;
    }

    RunConfig cfg;
    try {
        if (!config_path.empty()) apply_config_file(cfg, config_path);
        flags.apply(cfg);
        if (!prediction_files.empty()) cfg.prediction_paths = prediction_files;
        cfg.validate();
    } catch (const std::exception& e) {
        std::cerr << "dualclvsa: usage error: " << one_line(e.what()) << '\n';
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(cfg, with_psychvars);
        if (pre->parsed()) return cmd_preprocess(cfg);
        if (tr->parsed()) return cmd_train(cfg);
        if (bt->parsed()) return cmd_backtest(cfg);
        return cmd_experiment(cfg, experiment_name);
    } catch (const ConfigurationError& e) {
        std::cerr << "dualclvsa: usage error: " << one_line(e.what()) << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "dualclvsa: error: " << one_line(e.what()) << '\n';
        return 1;
    }
}
