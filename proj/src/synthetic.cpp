#include <cmath>
#include <random>

#include "dualclvsa/data.h"
#include "dualclvsa/errors.h"

namespace dualclvsa::data {

namespace {

// Portable draws on top of mt19937_64 (whose output sequence is fixed by the standard),
// so generated files are byte-identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    int sign() { return uniform() < 0.5 ? -1 : 1; }

private:
    std::mt19937_64 engine_;
};

int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

// Mean |aggregated sentiment| and mean |return| / volatility of the generator.
constexpr double kTypicalSentiment = 0.224;
constexpr double kTypicalReturnScale = 1.3;

}  // namespace

const char* signal_channel_name(SignalChannel c) {
    switch (c) {
        case SignalChannel::Price: return "price";
        case SignalChannel::Sentiment: return "sentiment";
        case SignalChannel::Both: return "both";
        case SignalChannel::None: return "none";
    }
    return "none";
}

SignalChannel parse_signal_channel(const std::string& text) {
    if (text == "price") return SignalChannel::Price;
    if (text == "sentiment") return SignalChannel::Sentiment;
    if (text == "both") return SignalChannel::Both;
    if (text == "none") return SignalChannel::None;
    throw ConfigurationError("unknown signal channel '" + text + "'");
}

const std::vector<std::string>& synthetic_psychvar_names() {
    static const std::vector<std::string> names = {
        "AccountingBad", "AccountingGood", "Ambiguity", "Anger",
        "Fear",          "Gloom",          "Joy",       "Optimism",
    };
    return names;
}

TrmiPolarity synthetic_polarity() {
    TrmiPolarity p;
    for (const auto& index : kIndexNames) {
        for (const auto& name : synthetic_psychvar_names()) p.set(index, name, 0);
    }
    p.set("sentiment", "AccountingGood", +1);
    p.set("sentiment", "AccountingBad", -1);
    p.set("sentiment", "Joy", +1);
    p.set("sentiment", "Gloom", -1);
    p.set("sentiment", "Optimism", +1);
    p.set("sentiment", "Fear", -1);
    p.set("optimism", "Optimism", +1);
    p.set("optimism", "Gloom", -1);
    p.set("optimism", "AccountingGood", +1);
    p.set("fear", "Fear", +1);
    p.set("fear", "Ambiguity", +1);
    p.set("fear", "Joy", -1);
    p.set("joy", "Joy", +1);
    p.set("joy", "Anger", -1);
    return p;
}

SyntheticData generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
    if (!(cfg.sentiment_density >= 0.0 && cfg.sentiment_density <= 1.0)) {
        throw ConfigurationError("sentiment density must lie in [0, 1]");
    }
    if (!(cfg.signal_strength >= 0.0 && cfg.signal_strength <= 1.0)) {
        throw ConfigurationError("signal strength must lie in [0, 1]");
    }
    if (cfg.days == 0 || cfg.intervals_per_day == 0 || cfg.interval_seconds <= 0 ||
        cfg.records_per_interval == 0) {
        throw ConfigurationError("days, intervals_per_day, interval_seconds and "
                                 "records_per_interval must be positive");
    }
    if (cfg.session_open + static_cast<Timestamp>(cfg.intervals_per_day) * cfg.interval_seconds >
        kSecondsPerDay) {
        throw ConfigurationError("session does not fit in one UTC day");
    }

    SyntheticData out;
    out.polarity = synthetic_polarity();
    out.psychvar_names = synthetic_psychvar_names();

    // Market and sentiment draws come from one stream; the density drop has its own,
    // so changing the density leaves prices and the planted signal untouched.
    Rng rng(seed);
    Rng keep_rng(seed ^ 0x9E3779B97F4A7C15ULL);

    std::int64_t day = days_from_civil(cfg.start);
    double close = cfg.initial_price;
    double last_return = rng.normal() * cfg.volatility;
    std::int64_t current_month = -1;
    double month_activity = 1.0;
    const Timestamp sub_step =
        cfg.interval_seconds / static_cast<Timestamp>(cfg.records_per_interval);

    for (std::size_t d = 0; d < cfg.days; ++d) {
        while (weekday(day) >= 5) ++day;
        const Timestamp midnight = day * kSecondsPerDay;
        const std::int64_t month = month_index(midnight);
        if (month != current_month) {
            current_month = month;
            month_activity = std::exp(0.4 * rng.normal());
        }
        for (std::size_t slot = 0; slot < cfg.intervals_per_day; ++slot) {
            const Timestamp ts =
                midnight + cfg.session_open + static_cast<Timestamp>(slot) * cfg.interval_seconds;

            // Sentiment for this interval: activity is lowest at the open.
            const double intraday =
                0.4 + 0.6 * static_cast<double>(slot + 1) / static_cast<double>(cfg.intervals_per_day);
            std::vector<TrmiRecord> full;
            for (std::size_t j = 0; j < cfg.records_per_interval; ++j) {
                PsychVarRecord rec;
                rec.timestamp = ts + static_cast<Timestamp>(j) * sub_step;
                rec.asset = "SYN";
                const double level = month_activity * intraday * std::exp(0.5 * rng.normal());
                for (const auto& name : out.psychvar_names) rec.values[name] = level * rng.normal();
                TrmiRecord trmi = trmi_record_from_psychvars(rec, out.polarity);
                full.push_back(trmi);
                if (keep_rng.uniform() < cfg.sentiment_density) {
                    out.psychvars.push_back(std::move(rec));
                    out.trmi.push_back(trmi);
                }
            }
            const TrmiRecord interval_view = aggregate_trmi(full, ts);
            const int sentiment_sign = sign_of(interval_view.values[0]);

            // Bar for this interval; its return was decided by the previous interval.
            Bar bar;
            bar.timestamp = ts;
            bar.open = close;
            const double ret = last_return;
            bar.close = close * (1.0 + ret);
            const double spread = cfg.volatility * 0.25;
            bar.high = std::max(bar.open, bar.close) * (1.0 + spread * std::abs(rng.normal()));
            bar.low = std::min(bar.open, bar.close) * (1.0 - spread * std::abs(rng.normal()));
            bar.volume = std::floor(1000.0 * std::exp(0.4 * rng.normal()));
            out.bars.push_back(bar);
            close = bar.close;

            // Direction of the next interval's return.
            const bool planted = rng.uniform() < cfg.signal_strength;
            int direction = rng.sign();
            if (planted) {
                switch (cfg.signal_channel) {
                    case SignalChannel::Sentiment:
                        if (sentiment_sign != 0) direction = sentiment_sign;
                        break;
                    case SignalChannel::Price:
                        if (sign_of(ret) != 0) direction = sign_of(ret);
                        break;
                    case SignalChannel::Both: {
                        // Equal-weight blend of both cues, each scaled by its typical magnitude.
                        const double score = interval_view.values[0] / kTypicalSentiment +
                                             ret / (kTypicalReturnScale * cfg.volatility);
                        if (sign_of(score) != 0) direction = sign_of(score);
                        break;
                    }
                    case SignalChannel::None: break;
                }
            }
            last_return = direction * cfg.volatility * (0.5 + std::abs(rng.normal()));
        }
        ++day;
    }
    return out;
}

}  // namespace dualclvsa::data
