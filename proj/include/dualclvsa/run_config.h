#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dualclvsa/backtest.h"
#include "dualclvsa/data.h"
#include "dualclvsa/experiment.h"
#include "dualclvsa/model.h"
#include "dualclvsa/trainer.h"

namespace dualclvsa {

// Everything one CLI invocation needs. Defaults, then a key=value file, then flags.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "out";
    std::size_t jobs = 1;

    data::SynthConfig synth;
    data::FrameConfig frames;
    model::ModelConfig model;
    train::TrainConfig train;
    backtest::BacktestConfig backtest;
    experiment::ExperimentConfig experiment;

    // Inputs; empty means "<out_dir>/<default file name>".
    std::string bars_path;
    std::string trmi_path;
    std::string psychvar_path;
    std::string polarity_path;
    std::vector<std::string> prediction_paths;

    RunConfig();

    // Checks shared by every command; train also validates the model and trainer settings.
    void validate() const;  // throws ConfigurationError

    std::string path_or_default(const std::string& path, const std::string& file_name) const;
};

// Sets one key; throws ConfigurationError on an unknown key or a malformed value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// Lines are `key = value`; blank lines and lines starting with '#' are ignored.
void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& source);
void apply_config_file(RunConfig& cfg, const std::string& path);

const std::vector<std::string>& setting_keys();

// Every key with its current value, in setting_keys() order.
void write_config(std::ostream& out, const RunConfig& cfg);

}  // namespace dualclvsa
