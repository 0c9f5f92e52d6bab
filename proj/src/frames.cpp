#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "dualclvsa/data.h"
#include "dualclvsa/errors.h"

namespace dualclvsa::data {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::vector<double> simple_moving_average(std::span<const double> values, std::size_t window) {
    std::vector<double> out(values.size(), kNaN);
    if (window == 0) throw ConfigurationError("SMA window must be positive");
    double running = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        running += values[i];
        if (i >= window) running -= values[i - window];
        if (i + 1 >= window) out[i] = running / static_cast<double>(window);
    }
    return out;
}

std::vector<double> exponential_moving_average(std::span<const double> values, std::size_t window) {
    std::vector<double> out(values.size(), kNaN);
    if (values.empty()) return out;
    const double alpha = 2.0 / (static_cast<double>(window) + 1.0);
    out[0] = values[0];
    for (std::size_t i = 1; i < values.size(); ++i) {
        out[i] = alpha * values[i] + (1.0 - alpha) * out[i - 1];
    }
    return out;
}

std::vector<double> relative_strength_index(std::span<const double> values, std::size_t window) {
    std::vector<double> out(values.size(), kNaN);
    if (values.size() <= window) return out;
    const auto rsi = [](double gain, double loss) {
        if (loss == 0.0) return gain == 0.0 ? 50.0 : 100.0;
        return 100.0 - 100.0 / (1.0 + gain / loss);
    };
    double gain = 0.0, loss = 0.0;
    for (std::size_t i = 1; i <= window; ++i) {
        const double d = values[i] - values[i - 1];
        gain += std::max(d, 0.0);
        loss += std::max(-d, 0.0);
    }
    const auto n = static_cast<double>(window);
    gain /= n;
    loss /= n;
    out[window] = rsi(gain, loss);
    for (std::size_t i = window + 1; i < values.size(); ++i) {
        const double d = values[i] - values[i - 1];
        gain = (gain * (n - 1.0) + std::max(d, 0.0)) / n;
        loss = (loss * (n - 1.0) + std::max(-d, 0.0)) / n;
        out[i] = rsi(gain, loss);
    }
    return out;
}

std::vector<double> bollinger_percent_b(std::span<const double> values, std::size_t window,
                                        double k) {
    std::vector<double> out(values.size(), kNaN);
    for (std::size_t i = window == 0 ? values.size() : window - 1; i < values.size(); ++i) {
        const std::size_t begin = i + 1 - window;
        double mean = 0.0;
        for (std::size_t j = begin; j <= i; ++j) mean += values[j];
        mean /= static_cast<double>(window);
        double var = 0.0;
        for (std::size_t j = begin; j <= i; ++j) var += (values[j] - mean) * (values[j] - mean);
        const double sd = std::sqrt(var / static_cast<double>(window));
        // Centered form of (p - lower) / (upper - lower), defined when the band collapses.
        const double width = std::max(2.0 * k * sd, ad::kEpsilon);
        out[i] = 0.5 + (values[i] - mean) / width;
    }
    return out;
}

std::vector<IndicatorRow> compute_indicators(std::span<const Bar> bars) {
    if (bars.size() < kIndicatorWarmup) {
        throw DatasetError("indicators need at least " + std::to_string(kIndicatorWarmup) +
                           " bars, got " + std::to_string(bars.size()));
    }
    std::vector<double> close(bars.size());
    for (std::size_t i = 0; i < bars.size(); ++i) close[i] = bars[i].close;
    const auto sma = simple_moving_average(close, 10);
    const auto ema = exponential_moving_average(close, 10);
    const auto rsi = relative_strength_index(close, 14);
    const auto fast = exponential_moving_average(close, 12);
    const auto slow = exponential_moving_average(close, 26);
    std::vector<double> macd(close.size());
    for (std::size_t i = 0; i < close.size(); ++i) macd[i] = fast[i] - slow[i];
    const auto signal = exponential_moving_average(macd, 9);
    const auto pctb = bollinger_percent_b(close, 20, 2.0);

    std::vector<IndicatorRow> rows(bars.size());
    for (std::size_t i = 0; i < bars.size(); ++i) {
        IndicatorRow& r = rows[i];
        r.warmup = i + 1 < kIndicatorWarmup;
        if (r.warmup) continue;
        const double c = close[i];
        r.values = {sma[i] / c - 1.0, ema[i] / c - 1.0, rsi[i] / 100.0 - 0.5,
                    (macd[i] - signal[i]) / c, pctb[i] - 0.5};
    }
    return rows;
}

std::size_t trading_feature_count(bool use_indicators) {
    return 5 + (use_indicators ? kIndicatorCount : 0);
}

namespace {

struct DaySlice {
    std::size_t begin = 0;  // into the filled series
    std::size_t count = 0;
};

void zscore_rows(ad::Tensor& frame) {
    const std::size_t rows = frame.shape[0], cols = frame.shape[1];
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mean += frame(r, c);
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (frame(r, c) - mean) * (frame(r, c) - mean);
        const double sd = std::sqrt(var / static_cast<double>(cols));
        for (std::size_t c = 0; c < cols; ++c) {
            frame(r, c) = sd > ad::kEpsilon ? (frame(r, c) - mean) / sd : 0.0;
        }
    }
}

}  // namespace

std::vector<AlignedSample> build_day_frames(std::span<const AlignedPoint> aligned,
                                            const FrameConfig& cfg) {
    const std::size_t ipd = cfg.intervals_per_day;
    if (ipd == 0) throw ConfigurationError("intervals_per_day must be positive");
    if (cfg.horizon == 0) throw ConfigurationError("horizon must be positive");
    if (cfg.flat_band < 0.0) throw ConfigurationError("flat_band must be non-negative");
    for (std::size_t i = 1; i < aligned.size(); ++i) {
        if (aligned[i].bar.timestamp <= aligned[i - 1].bar.timestamp) {
            throw ContractError("aligned series is not strictly increasing in time");
        }
    }

    // Group by UTC calendar day.
    std::vector<std::pair<std::size_t, std::size_t>> days;  // [begin, end)
    for (std::size_t i = 0; i < aligned.size(); ++i) {
        if (i == 0 || day_number(aligned[i].bar.timestamp) != day_number(aligned[i - 1].bar.timestamp)) {
            days.emplace_back(i, i);
        }
        days.back().second = i + 1;
    }

    // The session grid comes from the first day with a full set of intervals.
    std::vector<Timestamp> grid;
    for (const auto& [b, e] : days) {
        if (e - b == ipd) {
            for (std::size_t i = b; i < e; ++i) grid.push_back(seconds_of_day(aligned[i].bar.timestamp));
            break;
        }
    }
    if (grid.empty()) throw DatasetError("no day has exactly " + std::to_string(ipd) + " intervals");

    const auto max_missing =
        static_cast<std::size_t>(std::floor(cfg.max_fill_fraction * static_cast<double>(ipd) + 1e-9));
    std::vector<AlignedPoint> series;
    std::vector<DaySlice> kept;
    for (const auto& [b, e] : days) {
        std::map<Timestamp, std::size_t> by_offset;
        for (std::size_t i = b; i < e; ++i) by_offset[seconds_of_day(aligned[i].bar.timestamp)] = i;
        std::size_t matched = 0;
        for (Timestamp off : grid) matched += by_offset.count(off);
        if (ipd - matched > max_missing) continue;

        const Timestamp midnight = day_number(aligned[b].bar.timestamp) * kSecondsPerDay;
        std::vector<AlignedPoint> filled;
        bool usable = true;
        for (Timestamp off : grid) {
            const auto hit = by_offset.find(off);
            if (hit != by_offset.end()) {
                filled.push_back(aligned[hit->second]);
                continue;
            }
            double prev_close = 0.0;
            if (!filled.empty()) {
                prev_close = filled.back().bar.close;
            } else if (!series.empty()) {
                prev_close = series.back().bar.close;
            } else {
                usable = false;
                break;
            }
            const Timestamp ts = midnight + off;
            filled.push_back({Bar{ts, prev_close, prev_close, prev_close, prev_close, 0.0},
                              TrmiRecord::missing(ts)});
        }
        if (!usable) continue;
        kept.push_back({series.size(), filled.size()});
        series.insert(series.end(), filled.begin(), filled.end());
    }
    if (kept.size() < 2) {
        throw DatasetError("fewer than 2 complete days (" + std::to_string(kept.size()) + ")");
    }

    std::vector<IndicatorRow> indicators;
    if (cfg.use_indicators) {
        std::vector<Bar> bars;
        bars.reserve(series.size());
        for (const auto& p : series) bars.push_back(p.bar);
        indicators = compute_indicators(bars);
    }

    const std::size_t features = trading_feature_count(cfg.use_indicators);
    std::vector<AlignedSample> samples;
    for (std::size_t d = 0; d < kept.size(); ++d) {
        const DaySlice& day = kept[d];
        const std::size_t last = day.begin + day.count - 1;
        if (last + cfg.horizon >= series.size()) continue;
        if (cfg.use_indicators &&
            std::any_of(indicators.begin() + static_cast<std::ptrdiff_t>(day.begin),
                        indicators.begin() + static_cast<std::ptrdiff_t>(last + 1),
                        [](const IndicatorRow& r) { return r.warmup; })) {
            continue;
        }
        AlignedSample s;
        s.day_index = d;
        s.timestamp = series[last].bar.timestamp;
        s.label_timestamp = series[last + cfg.horizon].bar.timestamp;
        s.trading_frame = ad::Tensor({features, ipd}, 0.0);
        s.sentiment_frame = ad::Tensor({kSentimentFeatures, ipd}, 0.0);
        s.sentiment_mask.assign(ipd, 0);
        for (std::size_t t = 0; t < ipd; ++t) {
            const AlignedPoint& p = series[day.begin + t];
            s.trading_frame(0, t) = p.bar.open;
            s.trading_frame(1, t) = p.bar.high;
            s.trading_frame(2, t) = p.bar.low;
            s.trading_frame(3, t) = p.bar.close;
            s.trading_frame(4, t) = std::log1p(std::max(p.bar.volume, 0.0));
            if (cfg.use_indicators) {
                for (std::size_t k = 0; k < kIndicatorCount; ++k) {
                    s.trading_frame(5 + k, t) = indicators[day.begin + t].values[k];
                }
            }
            if (p.trmi.buzz > 0.0 && p.trmi.any_present()) {
                s.sentiment_mask[t] = 1;
                s.sentiment_frame(0, t) = std::log1p(p.trmi.buzz);
                for (std::size_t k = 0; k < kIndexCount; ++k) {
                    if (p.trmi.present[k]) s.sentiment_frame(1 + k, t) = p.trmi.values[k];
                }
            }
            s.close_prices.push_back(p.bar.close);
            s.interval_timestamps.push_back(p.bar.timestamp);
        }
        zscore_rows(s.trading_frame);
        const double now = series[last].bar.close;
        const double later = series[last + cfg.horizon].bar.close;
        s.label = classify_return(later / now - 1.0, cfg.flat_band);
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace dualclvsa::data
