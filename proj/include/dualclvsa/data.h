#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualclvsa/autodiff.h"
#include "dualclvsa/calendar.h"

namespace dualclvsa::data {

struct Bar {
    Timestamp timestamp = 0;
    double open = 0.0;
    double high = 0.0;
    double low = 0.0;
    double close = 0.0;
    double volume = 0.0;
};

inline constexpr std::size_t kIndexCount = 4;
inline constexpr std::array<const char*, kIndexCount> kIndexNames = {"sentiment", "optimism",
                                                                     "fear", "joy"};
// buzz + the four indices.
inline constexpr std::size_t kSentimentFeatures = kIndexCount + 1;

std::size_t index_position(const std::string& name);  // throws ConfigurationError

struct PsychVarRecord {
    Timestamp timestamp = 0;
    std::string asset;
    std::map<std::string, double> values;
};

// I(index, psychvar) in {+1, -1, 0}; psychvars absent from an index's row are irrelevant to it.
struct TrmiPolarity {
    std::map<std::string, std::map<std::string, int>> table;

    void set(const std::string& index, const std::string& psychvar, int polarity);
    int polarity(const std::string& index, const std::string& psychvar) const;
    bool has_index(const std::string& index) const { return table.count(index) != 0; }
};

struct TrmiRecord {
    Timestamp timestamp = 0;
    double buzz = 0.0;
    std::array<double, kIndexCount> values{};
    std::array<bool, kIndexCount> present{};

    static TrmiRecord missing(Timestamp ts) { return TrmiRecord{ts, 0.0, {}, {}}; }
    bool any_present() const;
};

struct TrmiValue {
    std::optional<double> trmi;
    double buzz = 0.0;
};

// Buzz is the sum of |PsychVar| over the record; the index is the polarity-signed
// sum divided by buzz. Zero buzz leaves the index missing.
TrmiValue compute_trmi_from_psychvars(const PsychVarRecord& rec, const TrmiPolarity& polarity,
                                      const std::string& index);

// All four indices for one record.
TrmiRecord trmi_record_from_psychvars(const PsychVarRecord& rec, const TrmiPolarity& polarity);

// Buzz-weighted mean of each index over the records where it is present.
// The result is independent of record order.
TrmiRecord aggregate_trmi(std::span<const TrmiRecord> records, Timestamp window_start);

// Aggregates records into [k*interval, (k+1)*interval) windows; empty windows are skipped.
std::vector<TrmiRecord> aggregate_to_intervals(std::span<const TrmiRecord> records,
                                               Timestamp interval);

// Coarsens finer-grained bars onto an interval grid (first open, max high, min low,
// last close, summed volume).
std::vector<Bar> resample_bars(std::span<const Bar> bars, Timestamp interval);

struct AlignedPoint {
    Bar bar;
    TrmiRecord trmi;
};

// Right-joins sentiment onto bars: each bar keeps its interval's aggregated record,
// or a zero-buzz fully missing record when none falls in [bar.ts, bar.ts + interval).
std::vector<AlignedPoint> bind_align(std::span<const Bar> bars, std::span<const TrmiRecord> trmi,
                                     Timestamp interval);

enum class Movement : std::uint8_t { Down = 0, Flat = 1, Up = 2 };
inline constexpr std::size_t kClassCount = 3;

const char* movement_name(Movement m);
Movement parse_movement(const std::string& text);
Movement classify_return(double ret, double flat_band);

// ---- indicators ------------------------------------------------------------

inline constexpr std::size_t kIndicatorCount = 5;
inline constexpr std::size_t kIndicatorWarmup = 26;

std::vector<double> simple_moving_average(std::span<const double> values, std::size_t window);
std::vector<double> exponential_moving_average(std::span<const double> values, std::size_t window);
// Wilder RSI; rows before `window` changes are available are NaN. Zero movement yields 50.
std::vector<double> relative_strength_index(std::span<const double> values, std::size_t window);
// %B over a `window` SMA with +/- k standard deviations; bandwidth floored at 1e-12.
std::vector<double> bollinger_percent_b(std::span<const double> values, std::size_t window,
                                        double k);

struct IndicatorRow {
    // SMA(10)/close - 1, EMA(10)/close - 1, RSI(14)/100 - 0.5, MACD(12,26,9) histogram/close,
    // %B(20,2) - 0.5.
    std::array<double, kIndicatorCount> values{};
    bool warmup = true;
};

std::vector<IndicatorRow> compute_indicators(std::span<const Bar> bars);

// ---- day frames ------------------------------------------------------------

struct FrameConfig {
    std::size_t intervals_per_day = 13;
    std::size_t horizon = 1;
    double flat_band = 0.0005;
    bool use_indicators = false;
    double max_fill_fraction = 0.2;
};

struct AlignedSample {
    std::size_t day_index = 0;
    Timestamp timestamp = 0;        // last interval of the day: the decision time
    Timestamp label_timestamp = 0;  // bar whose close resolves the label
    ad::Tensor trading_frame;       // [trading features x intervals]
    ad::Tensor sentiment_frame;     // [5 x intervals]: log1p(buzz), sentiment, optimism, fear, joy
    std::vector<std::uint8_t> sentiment_mask;
    Movement label = Movement::Flat;
    std::vector<double> close_prices;
    std::vector<Timestamp> interval_timestamps;
};

std::size_t trading_feature_count(bool use_indicators);

std::vector<AlignedSample> build_day_frames(std::span<const AlignedPoint> aligned,
                                            const FrameConfig& cfg);

// ---- synthetic data --------------------------------------------------------

enum class SignalChannel { Price, Sentiment, Both, None };

const char* signal_channel_name(SignalChannel c);
SignalChannel parse_signal_channel(const std::string& text);

struct SynthConfig {
    std::size_t days = 250;
    std::size_t intervals_per_day = 13;
    Timestamp interval_seconds = 1800;
    Timestamp session_open = 14 * 3600 + 30 * 60;  // seconds after UTC midnight
    CivilDate start{2010, 1, 4};
    double sentiment_density = 1.0;
    SignalChannel signal_channel = SignalChannel::Sentiment;
    double signal_strength = 1.0;
    std::size_t records_per_interval = 2;
    double volatility = 0.002;
    double initial_price = 100.0;
};

struct SyntheticData {
    std::vector<Bar> bars;
    std::vector<TrmiRecord> trmi;
    std::vector<PsychVarRecord> psychvars;
    TrmiPolarity polarity;
    std::vector<std::string> psychvar_names;
};

const std::vector<std::string>& synthetic_psychvar_names();
TrmiPolarity synthetic_polarity();

SyntheticData generate_synthetic(const SynthConfig& cfg, std::uint64_t seed);

// ---- CSV -------------------------------------------------------------------

void write_bars_csv(std::ostream& out, std::span<const Bar> bars);
std::vector<Bar> read_bars_csv(std::istream& in);
void write_trmi_csv(std::ostream& out, std::span<const TrmiRecord> records);
std::vector<TrmiRecord> read_trmi_csv(std::istream& in);
void write_psychvar_csv(std::ostream& out, std::span<const PsychVarRecord> records,
                        const std::vector<std::string>& names);
std::vector<PsychVarRecord> read_psychvar_csv(std::istream& in);
void write_polarity_csv(std::ostream& out, const TrmiPolarity& polarity);
TrmiPolarity read_polarity_csv(std::istream& in);
void write_aligned_csv(std::ostream& out, std::span<const AlignedPoint> aligned);

std::vector<Bar> load_bars(const std::string& path);
std::vector<TrmiRecord> load_trmi(const std::string& path);

}  // namespace dualclvsa::data
