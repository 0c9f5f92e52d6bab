#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dualclvsa/data.h"
#include "dualclvsa/model.h"
#include "dualclvsa/trainer.h"

namespace dualclvsa::experiment {

enum class Kind { FusionBenefit, InputFusionHarm, SparsitySweep };

const char* kind_name(Kind k);
Kind parse_kind(const std::string& text);  // throws ConfigurationError

struct ExperimentConfig {
    std::size_t days = 1000;
    double signal_strength = 1.0;
    std::vector<double> densities = {1.0, 0.5, 0.2, 0.05, 0.0};
    data::FrameConfig frames;
    model::ModelConfig model;  // variant and use_sentiment are set per arm
    train::TrainConfig train;
    std::uint64_t seed = 42;

    ExperimentConfig();
};

struct Arm {
    std::string name;
    model::Variant variant = model::Variant::DualClvsa;
    data::SignalChannel channel = data::SignalChannel::Sentiment;
    double density = 1.0;
    double accuracy = 0.0;
    double map = 0.0;
    std::size_t predictions = 0;
    std::size_t folds = 0;
};

struct Result {
    Kind kind = Kind::FusionBenefit;
    std::vector<Arm> arms;

    const Arm& arm(const std::string& name) const;  // throws ContractError
};

// Planted-signal dataset: sentiment channel for the fusion experiments; the sweep
// plants a blend of sentiment and price cues so the trading-only model has a signal too.
data::SignalChannel signal_channel_for(Kind k);

std::vector<data::AlignedSample> make_dataset(const ExperimentConfig& cfg, data::SignalChannel channel,
                                              double density);

Arm run_arm(const std::string& name, model::Variant variant, std::span<const data::AlignedSample> samples,
            const ExperimentConfig& cfg, data::SignalChannel channel, double density);

// fusion_benefit: clvsa vs dual_clvsa. input_fusion_harm: clvsa_input_fusion vs dual_clvsa.
// sparsity_sweep: dual_clvsa per density plus a trading-only clvsa baseline.
Result run(Kind kind, const ExperimentConfig& cfg);

void write_csv(std::ostream& out, const Result& result);
void write_summary(std::ostream& out, const Result& result);

}  // namespace dualclvsa::experiment
