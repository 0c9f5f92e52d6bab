#include <algorithm>
#include <cmath>
#include <tuple>

#include "dualclvsa/data.h"
#include "dualclvsa/errors.h"

namespace dualclvsa::data {

std::size_t index_position(const std::string& name) {
    for (std::size_t i = 0; i < kIndexCount; ++i) {
        if (name == kIndexNames[i]) return i;
    }
    throw ConfigurationError("unknown sentiment index '" + name + "'");
}

void TrmiPolarity::set(const std::string& index, const std::string& psychvar, int polarity) {
    if (polarity < -1 || polarity > 1) {
        throw ConfigurationError("polarity for (" + index + ", " + psychvar + ") must be -1, 0 or +1");
    }
    table[index][psychvar] = polarity;
}

int TrmiPolarity::polarity(const std::string& index, const std::string& psychvar) const {
    const auto row = table.find(index);
    if (row == table.end()) throw ConfigurationError("index '" + index + "' missing from polarity table");
    const auto cell = row->second.find(psychvar);
    return cell == row->second.end() ? 0 : cell->second;
}

bool TrmiRecord::any_present() const {
    return std::any_of(present.begin(), present.end(), [](bool p) { return p; });
}

TrmiValue compute_trmi_from_psychvars(const PsychVarRecord& rec, const TrmiPolarity& polarity,
                                      const std::string& index) {
    if (!polarity.has_index(index)) {
        throw ConfigurationError("index '" + index + "' missing from polarity table");
    }
    if (rec.values.empty()) throw ContractError("psychvar record is empty");
    double buzz = 0.0;
    double signed_sum = 0.0;
    for (const auto& [name, value] : rec.values) {
        buzz += std::abs(value);
        signed_sum += polarity.polarity(index, name) * value;
    }
    if (buzz == 0.0) return {std::nullopt, 0.0};
    return {std::clamp(signed_sum / buzz, -1.0, 1.0), buzz};
}

TrmiRecord trmi_record_from_psychvars(const PsychVarRecord& rec, const TrmiPolarity& polarity) {
    TrmiRecord out = TrmiRecord::missing(rec.timestamp);
    for (std::size_t i = 0; i < kIndexCount; ++i) {
        const TrmiValue v = compute_trmi_from_psychvars(rec, polarity, kIndexNames[i]);
        out.buzz = v.buzz;
        if (v.trmi) {
            out.values[i] = *v.trmi;
            out.present[i] = true;
        }
    }
    return out;
}

TrmiRecord aggregate_trmi(std::span<const TrmiRecord> records, Timestamp window_start) {
    TrmiRecord out = TrmiRecord::missing(window_start);
    if (records.empty()) return out;

    // Canonical order makes the floating-point sums permutation invariant.
    std::vector<TrmiRecord> sorted(records.begin(), records.end());
    std::sort(sorted.begin(), sorted.end(), [](const TrmiRecord& a, const TrmiRecord& b) {
        return std::tie(a.timestamp, a.buzz, a.values, a.present) <
               std::tie(b.timestamp, b.buzz, b.values, b.present);
    });

    double total_buzz = 0.0;
    std::array<double, kIndexCount> weighted{};
    std::array<double, kIndexCount> weight{};
    for (const TrmiRecord& r : sorted) {
        total_buzz += r.buzz;
        for (std::size_t i = 0; i < kIndexCount; ++i) {
            if (!r.present[i]) continue;
            weighted[i] += r.buzz * r.values[i];
            weight[i] += r.buzz;
        }
    }
    if (total_buzz <= 0.0) return out;
    out.buzz = total_buzz;
    for (std::size_t i = 0; i < kIndexCount; ++i) {
        if (weight[i] > 0.0) {
            out.values[i] = std::clamp(weighted[i] / weight[i], -1.0, 1.0);
            out.present[i] = true;
        }
    }
    return out;
}

namespace {

Timestamp floor_to(Timestamp ts, Timestamp interval) {
    const Timestamp q = ts >= 0 ? ts / interval : (ts - interval + 1) / interval;
    return q * interval;
}

}  // namespace

std::vector<TrmiRecord> aggregate_to_intervals(std::span<const TrmiRecord> records,
                                               Timestamp interval) {
    if (interval <= 0) throw ConfigurationError("interval must be positive");
    std::vector<TrmiRecord> out;
    std::size_t begin = 0;
    while (begin < records.size()) {
        const Timestamp window = floor_to(records[begin].timestamp, interval);
        std::size_t end = begin;
        while (end < records.size() && floor_to(records[end].timestamp, interval) == window) {
            if (end > begin && records[end].timestamp < records[end - 1].timestamp) {
                throw ContractError("sentiment records are not time-ordered");
            }
            ++end;
        }
        out.push_back(aggregate_trmi(records.subspan(begin, end - begin), window));
        begin = end;
    }
    return out;
}

std::vector<Bar> resample_bars(std::span<const Bar> bars, Timestamp interval) {
    if (interval <= 0) throw ConfigurationError("interval must be positive");
    std::vector<Bar> out;
    for (std::size_t i = 0; i < bars.size(); ++i) {
        if (i > 0 && bars[i].timestamp <= bars[i - 1].timestamp) {
            throw ContractError("bars are not strictly increasing in time");
        }
        const Timestamp window = floor_to(bars[i].timestamp, interval);
        if (out.empty() || out.back().timestamp != window) {
            Bar b = bars[i];
            b.timestamp = window;
            out.push_back(b);
            continue;
        }
        Bar& b = out.back();
        b.high = std::max(b.high, bars[i].high);
        b.low = std::min(b.low, bars[i].low);
        b.close = bars[i].close;
        b.volume += bars[i].volume;
    }
    return out;
}

std::vector<AlignedPoint> bind_align(std::span<const Bar> bars, std::span<const TrmiRecord> trmi,
                                     Timestamp interval) {
    if (interval <= 0) throw ConfigurationError("interval must be positive");
    for (std::size_t i = 1; i < bars.size(); ++i) {
        if (bars[i].timestamp <= bars[i - 1].timestamp) {
            throw ContractError("bars are not strictly increasing in time");
        }
    }
    for (std::size_t i = 1; i < trmi.size(); ++i) {
        if (trmi[i].timestamp < trmi[i - 1].timestamp) {
            throw ContractError("sentiment records are not time-ordered");
        }
    }
    std::vector<AlignedPoint> out;
    out.reserve(bars.size());
    std::size_t cursor = 0;
    for (const Bar& bar : bars) {
        while (cursor < trmi.size() && trmi[cursor].timestamp < bar.timestamp) ++cursor;
        std::size_t end = cursor;
        while (end < trmi.size() && trmi[end].timestamp < bar.timestamp + interval) ++end;
        out.push_back({bar, aggregate_trmi(trmi.subspan(cursor, end - cursor), bar.timestamp)});
        cursor = end;
    }
    return out;
}

const char* movement_name(Movement m) {
    switch (m) {
        case Movement::Down: return "down";
        case Movement::Flat: return "flat";
        case Movement::Up: return "up";
    }
    return "flat";
}

Movement parse_movement(const std::string& text) {
    if (text == "down" || text == "0") return Movement::Down;
    if (text == "flat" || text == "1") return Movement::Flat;
    if (text == "up" || text == "2") return Movement::Up;
    throw DataError("unknown movement label '" + text + "'");
}

Movement classify_return(double ret, double flat_band) {
    if (std::abs(ret) <= flat_band) return Movement::Flat;
    return ret > 0.0 ? Movement::Up : Movement::Down;
}

}  // namespace dualclvsa::data
