#include "dualclvsa/experiment.h"

#include <cstdio>
#include <ostream>

#include "dualclvsa/csv.h"
#include "dualclvsa/errors.h"

namespace dualclvsa::experiment {

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::FusionBenefit: return "fusion_benefit";
        case Kind::InputFusionHarm: return "input_fusion_harm";
        case Kind::SparsitySweep: return "sparsity_sweep";
    }
    return "?";
}

Kind parse_kind(const std::string& text) {
    for (Kind k : {Kind::FusionBenefit, Kind::InputFusionHarm, Kind::SparsitySweep}) {
        if (text == kind_name(k)) return k;
    }
    throw ConfigurationError("unknown experiment '" + text +
                             "' (expected fusion_benefit, input_fusion_harm or sparsity_sweep)");
}

ExperimentConfig::ExperimentConfig() {
    model.conv_channels = 4;
    model.hidden = 16;
    model.latent = 4;
    model.head_hidden = 32;
    train.epochs = 10;
    train.batch_size = 8;
    train.train_months = 24;
    train.test_months = 4;
    train.step_months = 4;
}

const Arm& Result::arm(const std::string& name) const {
    for (const auto& a : arms) {
        if (a.name == name) return a;
    }
    throw ContractError("experiment has no arm '" + name + "'");
}

data::SignalChannel signal_channel_for(Kind k) {
    return k == Kind::SparsitySweep ? data::SignalChannel::Both : data::SignalChannel::Sentiment;
}

std::vector<data::AlignedSample> make_dataset(const ExperimentConfig& cfg, data::SignalChannel channel,
                                              double density) {
    data::SynthConfig sc;
    sc.days = cfg.days;
    sc.intervals_per_day = cfg.frames.intervals_per_day;
    sc.signal_channel = channel;
    sc.signal_strength = cfg.signal_strength;
    sc.sentiment_density = density;
    const auto d = data::generate_synthetic(sc, cfg.seed);
    const auto aligned = data::bind_align(d.bars, d.trmi, sc.interval_seconds);
    return data::build_day_frames(aligned, cfg.frames);
}

Arm run_arm(const std::string& name, model::Variant variant, std::span<const data::AlignedSample> samples,
            const ExperimentConfig& cfg, data::SignalChannel channel, double density) {
    model::ModelConfig mc = cfg.model;
    mc.variant = variant;
    mc.use_sentiment = variant != model::Variant::Clvsa;
    const auto folds = train::walk_forward(samples, mc, cfg.train);
    std::vector<train::Prediction> all;
    for (const auto& f : folds) all.insert(all.end(), f.predictions.begin(), f.predictions.end());
    Arm a;
    a.name = name;
    a.variant = variant;
    a.channel = channel;
    a.density = density;
    a.accuracy = train::accuracy(all);
    a.map = train::mean_average_precision(all);
    a.predictions = all.size();
    a.folds = folds.size();
    return a;
}

Result run(Kind kind, const ExperimentConfig& cfg) {
    Result r;
    r.kind = kind;
    const auto channel = signal_channel_for(kind);
    switch (kind) {
        case Kind::FusionBenefit:
        case Kind::InputFusionHarm: {
            const auto samples = make_dataset(cfg, channel, 1.0);
            const auto other = kind == Kind::FusionBenefit ? model::Variant::Clvsa : model::Variant::ClvsaInputFusion;
            r.arms.push_back(run_arm(model::variant_name(other), other, samples, cfg, channel, 1.0));
            r.arms.push_back(run_arm("dual_clvsa", model::Variant::DualClvsa, samples, cfg, channel, 1.0));
            break;
        }
        case Kind::SparsitySweep: {
            // Density only thins the sentiment stream; prices are identical across densities.
            const auto base = make_dataset(cfg, channel, 0.0);
            r.arms.push_back(run_arm("clvsa", model::Variant::Clvsa, base, cfg, channel, 0.0));
            for (double density : cfg.densities) {
                const auto samples = density == 0.0 ? base : make_dataset(cfg, channel, density);
                r.arms.push_back(run_arm("dual_clvsa@" + format_double(density, 6), model::Variant::DualClvsa,
                                         samples, cfg, channel, density));
            }
            break;
        }
    }
    return r;
}

void write_csv(std::ostream& out, const Result& result) {
    out << "experiment,arm,variant,signal,density,folds,predictions,accuracy,map\n";
    for (const auto& a : result.arms) {
        out << kind_name(result.kind) << ',' << a.name << ',' << model::variant_name(a.variant) << ','
            << data::signal_channel_name(a.channel) << ',' << format_double(a.density, 6) << ',' << a.folds
            << ',' << a.predictions << ',' << format_double(a.accuracy, 10) << ',' << format_double(a.map, 10)
            << '\n';
    }
}

namespace {

std::string points(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.1f", 100.0 * fraction);
    return buf;
}

std::string pct(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * fraction);
    return buf;
}

}  // namespace

void write_summary(std::ostream& out, const Result& result) {
    out << "experiment " << kind_name(result.kind) << '\n';
    out << "arm                      accuracy    MAP\n";
    for (const auto& a : result.arms) {
        char line[128];
        std::snprintf(line, sizeof line, "%-24s %8s %8s\n", a.name.c_str(), pct(a.accuracy).c_str(),
                      pct(a.map).c_str());
        out << line;
    }
    switch (result.kind) {
        case Kind::FusionBenefit: {
            const auto& dual = result.arm("dual_clvsa");
            const auto& base = result.arm("clvsa");
            out << "gap dual_clvsa - clvsa: accuracy " << points(dual.accuracy - base.accuracy) << " pts, MAP "
                << points(dual.map - base.map) << " pts\n";
            break;
        }
        case Kind::InputFusionHarm: {
            const auto& dual = result.arm("dual_clvsa");
            const auto& fused = result.arm("clvsa_input_fusion");
            out << "gap dual_clvsa - clvsa_input_fusion: accuracy " << points(dual.accuracy - fused.accuracy)
                << " pts, MAP " << points(dual.map - fused.map) << " pts\n";
            break;
        }
        case Kind::SparsitySweep: {
            const auto& base = result.arm("clvsa");
            for (const auto& a : result.arms) {
                if (a.variant != model::Variant::DualClvsa) continue;
                out << "density " << format_double(a.density, 6) << ": dual_clvsa - clvsa accuracy "
                    << points(a.accuracy - base.accuracy) << " pts\n";
            }
            break;
        }
    }
}

}  // namespace dualclvsa::experiment
