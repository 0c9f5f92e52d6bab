#include "dualclvsa/backtest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "dualclvsa/csv.h"
#include "dualclvsa/errors.h"

namespace dualclvsa::backtest {

namespace {

double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

std::string day_label(Timestamp ts) { return format_iso8601(ts).substr(0, 10); }

template <typename KeyFn>
std::vector<PeriodReturn> compound_by(std::span<const Timestamp> timestamps, std::span<const double> returns,
                                      KeyFn key) {
    if (timestamps.size() != returns.size()) {
        throw ContractError("period returns: timestamps and returns differ in length");
    }
    std::vector<PeriodReturn> out;
    double growth = 1.0;
    for (std::size_t i = 0; i < returns.size(); ++i) {
        const std::string k = key(timestamps[i]);
        if (out.empty() || out.back().period != k) {
            if (!out.empty()) out.back().ret = growth - 1.0;
            out.push_back({k, 0.0});
            growth = 1.0;
        }
        growth *= 1.0 + returns[i];
    }
    if (!out.empty()) out.back().ret = growth - 1.0;
    return out;
}

std::vector<double> values_of(const std::vector<PeriodReturn>& periods) {
    std::vector<double> v;
    v.reserve(periods.size());
    for (const auto& p : periods) v.push_back(p.ret);
    return v;
}

std::string percent(std::optional<double> v, int decimals = 2) {
    if (!v) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f%%", decimals, *v * 100.0);
    return buf;
}

std::string fixed(std::optional<double> v, int decimals = 2) {
    if (!v) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
    return buf;
}

}  // namespace

const char* direction_name(Direction d) { return d == Direction::Long ? "long" : "short"; }

int position_from_scores(const std::array<double, data::kClassCount>& scores, double threshold) {
    const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    if (scores[best] < threshold) return 0;
    if (best == static_cast<std::size_t>(data::Movement::Up)) return 1;
    if (best == static_cast<std::size_t>(data::Movement::Down)) return -1;
    return 0;
}

std::vector<int> signals_to_positions(std::span<const train::Prediction> predictions, double threshold) {
    std::vector<int> out;
    out.reserve(predictions.size());
    for (const auto& p : predictions) out.push_back(position_from_scores(p.scores, threshold));
    return out;
}

Simulation simulate(std::span<const int> positions, std::span<const double> closes,
                    std::span<const Timestamp> timestamps, double cost_per_side) {
    if (positions.size() != closes.size() || closes.size() != timestamps.size()) {
        throw ContractError("simulate: positions, closes and timestamps must have equal lengths");
    }
    if (cost_per_side < 0.0) throw ConfigurationError("cost per side must be non-negative");
    for (double c : closes) {
        if (!(c > 0.0)) throw DataError("simulate: non-positive close price " + format_double(c));
    }
    Simulation sim;
    sim.equity.push_back(0.0);
    int prev = 0;
    Trade open;
    for (std::size_t t = 0; t < positions.size(); ++t) {
        const int pos = positions[t];
        if (pos < -1 || pos > 1) throw ContractError("simulate: positions must be -1, 0 or +1");
        if (pos != prev) {
            if (prev != 0) {
                open.exit_time = timestamps[t];
                open.exit_price = closes[t];
                open.return_fraction = static_cast<double>(prev) * (open.exit_price - open.entry_price) /
                                           open.entry_price -
                                       2.0 * cost_per_side;
                sim.trades.push_back(open);
            }
            if (pos != 0) {
                open = Trade{};
                open.entry_time = timestamps[t];
                open.entry_price = closes[t];
                open.direction = pos > 0 ? Direction::Long : Direction::Short;
            }
        }
        double r = -cost_per_side * std::abs(pos - prev);
        if (t + 1 < positions.size()) r += static_cast<double>(pos) * (closes[t + 1] / closes[t] - 1.0);
        sim.returns.push_back(r);
        sim.equity.push_back((1.0 + sim.equity.back()) * (1.0 + r) - 1.0);
        prev = pos;
    }
    return sim;
}

double cumulative_return(std::span<const double> returns) {
    double growth = 1.0;
    for (double r : returns) growth *= 1.0 + r;
    return growth - 1.0;
}

double annualized_return(double cumulative, double years) {
    if (!(years > 0.0)) throw UndefinedMetricError("annualized return over a non-positive span");
    if (cumulative <= -1.0) return -1.0;
    return std::pow(1.0 + cumulative, 1.0 / years) - 1.0;
}

namespace {

bool constant(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace

double sharpe(std::span<const double> returns, double periods_per_year, double risk_free_annual) {
    if (returns.size() < 2) throw UndefinedMetricError("Sharpe ratio needs at least 2 returns");
    const double rf = std::pow(1.0 + risk_free_annual, 1.0 / periods_per_year) - 1.0;
    std::vector<double> excess(returns.begin(), returns.end());
    for (double& x : excess) x -= rf;
    const double m = mean(excess);
    double ss = 0.0;
    for (double x : excess) ss += (x - m) * (x - m);
    const double sd = std::sqrt(ss / static_cast<double>(excess.size() - 1));
    if (!(sd > 0.0) || constant(excess)) throw UndefinedMetricError("Sharpe ratio undefined for zero-variance returns");
    return m / sd * std::sqrt(periods_per_year);
}

JensenResult jensen_alpha(std::span<const double> strategy, std::span<const double> benchmark,
                          double risk_free_per_period) {
    if (strategy.size() != benchmark.size()) {
        throw ContractError("jensen_alpha: strategy and benchmark series differ in length");
    }
    if (strategy.size() < 3) throw UndefinedMetricError("Jensen alpha needs at least 3 periods");
    std::vector<double> s(strategy.begin(), strategy.end()), b(benchmark.begin(), benchmark.end());
    for (double& x : s) x -= risk_free_per_period;
    for (double& x : b) x -= risk_free_per_period;
    const double ms = mean(s), mb = mean(b);
    double cov = 0.0, var = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        cov += (s[i] - ms) * (b[i] - mb);
        var += (b[i] - mb) * (b[i] - mb);
    }
    if (!(var > 0.0) || constant(b)) {
        throw UndefinedMetricError("Jensen alpha undefined for zero benchmark variance");
    }
    JensenResult r;
    r.beta = cov / var;
    r.alpha = ms - r.beta * mb;
    return r;
}

double yearly_alpha(double daily_alpha) { return std::pow(1.0 + daily_alpha, kTradingDaysPerYear) - 1.0; }

std::vector<PeriodReturn> daily_returns(std::span<const Timestamp> timestamps, std::span<const double> returns) {
    return compound_by(timestamps, returns, day_label);
}

std::vector<PeriodReturn> monthly_returns(std::span<const Timestamp> timestamps,
                                          std::span<const double> returns) {
    return compound_by(timestamps, returns, [](Timestamp ts) { return month_label(month_index(ts)); });
}

BacktestReport aggregate_report(const Simulation& sim, std::span<const Timestamp> timestamps,
                                std::span<const double> benchmark_returns,
                                std::span<const train::Prediction> predictions, const BacktestConfig& cfg) {
    if (sim.returns.empty() || timestamps.empty()) throw DataError("backtest: empty span");
    if (sim.returns.size() != timestamps.size() || benchmark_returns.size() != timestamps.size()) {
        throw ContractError("aggregate_report: inconsistent series lengths");
    }
    BacktestReport r;
    r.config = cfg;
    r.start = timestamps.front();
    r.end = timestamps.back();
    r.prediction_count = predictions.size();
    r.equity = sim.equity;
    r.equity_times.assign(timestamps.begin(), timestamps.end());
    r.trades = sim.trades;
    for (const auto& t : r.trades) (t.return_fraction > 0.0 ? r.winning_trades : r.losing_trades)++;
    r.monthly = monthly_returns(timestamps, sim.returns);
    r.cumulative_return = sim.equity.back();
    r.benchmark_return = cumulative_return(benchmark_returns);

    const auto daily = daily_returns(timestamps, sim.returns);
    const auto bench_daily = daily_returns(timestamps, benchmark_returns);
    r.trading_days = daily.size();
    r.aar = annualized_return(r.cumulative_return, static_cast<double>(r.trading_days) / kTradingDaysPerYear);
    const auto strat = values_of(daily), bench = values_of(bench_daily);
    try {
        r.sharpe = sharpe(strat, kTradingDaysPerYear, cfg.risk_free_annual);
    } catch (const UndefinedMetricError&) {
    }
    try {
        const double rf_day = std::pow(1.0 + cfg.risk_free_annual, 1.0 / kTradingDaysPerYear) - 1.0;
        const JensenResult j = jensen_alpha(strat, bench, rf_day);
        r.daily_jensen_alpha = j.alpha;
        r.yearly_jensen_alpha = yearly_alpha(j.alpha);
        r.beta = j.beta;
    } catch (const UndefinedMetricError&) {
    }
    if (!predictions.empty()) {
        r.map = train::mean_average_precision(predictions);
        r.accuracy = train::accuracy(predictions);
    }
    return r;
}

BacktestReport run_backtest(std::span<const train::Prediction> predictions, std::span<const data::Bar> bars,
                            const BacktestConfig& cfg) {
    if (bars.empty()) throw DataError("backtest: no bars");
    if (predictions.empty()) throw DataError("backtest: no predictions");
    for (std::size_t i = 1; i < bars.size(); ++i) {
        if (bars[i].timestamp <= bars[i - 1].timestamp) throw DataError("backtest: bars not time-ordered");
    }
    const Timestamp lo = cfg.from.value_or(bars.front().timestamp);
    const Timestamp hi = cfg.to.value_or(bars.back().timestamp + 1);
    if (lo >= hi) throw DataError("backtest: empty date range");
    if (cfg.from && (*cfg.from < bars.front().timestamp || *cfg.from > bars.back().timestamp)) {
        throw DataError("backtest: --from " + format_iso8601(*cfg.from) + " lies outside the data span");
    }
    if (cfg.to && (*cfg.to <= bars.front().timestamp || *cfg.to > bars.back().timestamp + kSecondsPerDay)) {
        throw DataError("backtest: --to " + format_iso8601(*cfg.to) + " lies outside the data span");
    }

    std::vector<train::Prediction> preds;
    for (const auto& p : predictions) {
        if (p.timestamp >= lo && p.timestamp < hi) preds.push_back(p);
    }
    if (preds.empty()) throw DataError("backtest: no predictions inside the selected range");

    const auto bar_index = [&](Timestamp ts) {
        const auto it = std::lower_bound(bars.begin(), bars.end(), ts,
                                         [](const data::Bar& b, Timestamp t) { return b.timestamp < t; });
        if (it == bars.end() || it->timestamp != ts) {
            throw DataError("backtest: prediction at " + format_iso8601(ts) + " has no matching bar");
        }
        return static_cast<std::size_t>(it - bars.begin());
    };
    std::vector<std::size_t> at;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        at.push_back(bar_index(preds[i].timestamp));
        if (i > 0 && at[i] <= at[i - 1]) throw DataError("backtest: predictions not time-ordered");
    }
    std::size_t first = at.front();
    std::size_t last = std::min(at.back() + 1, bars.size() - 1);
    while (last > first && bars[last].timestamp >= hi) --last;

    std::vector<int> positions;
    std::vector<double> closes, bench;
    std::vector<Timestamp> times;
    int current = 0;
    std::size_t next = 0;
    for (std::size_t i = first; i <= last; ++i) {
        if (next < at.size() && at[next] == i) current = position_from_scores(preds[next++].scores, cfg.threshold);
        positions.push_back(current);
        closes.push_back(bars[i].close);
        times.push_back(bars[i].timestamp);
        bench.push_back(i < last ? bars[i + 1].close / bars[i].close - 1.0 : 0.0);
    }
    const Simulation sim = simulate(positions, closes, times, cfg.cost_per_side);
    return aggregate_report(sim, times, bench, preds, cfg);
}

double quantile(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw ContractError("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

FiveNumberSummary five_number_summary(std::vector<double> values) {
    if (values.empty()) throw ContractError("five-number summary of an empty sample");
    std::sort(values.begin(), values.end());
    return {values.front(), quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75), values.back()};
}

std::vector<BuzzGroup> buzz_stats(std::span<const data::TrmiRecord> records, BuzzGrouping grouping) {
    if (records.empty()) throw DataError("buzz statistics need at least one record");
    std::map<std::string, std::vector<double>> groups;
    for (const auto& r : records) {
        std::string key;
        if (grouping == BuzzGrouping::HourOfDay) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "%02d", hour_of_day(r.timestamp));
            key = buf;
        } else {
            key = month_label(month_index(r.timestamp));
        }
        groups[key].push_back(r.buzz);
    }
    std::vector<BuzzGroup> out;
    for (auto& [key, values] : groups) {
        const std::size_t n = values.size();
        out.push_back({key, n, five_number_summary(std::move(values))});
    }
    return out;
}

void write_equity_csv(std::ostream& out, const BacktestReport& report) {
    out << "timestamp,cumret\n";
    for (std::size_t t = 0; t < report.equity_times.size(); ++t) {
        out << format_iso8601(report.equity_times[t]) << ',' << format_double(report.equity[t + 1]) << '\n';
    }
}

void write_monthly_csv(std::ostream& out, const BacktestReport& report) {
    out << "month,ret\n";
    for (const auto& m : report.monthly) out << m.period << ',' << format_double(m.ret) << '\n';
}

void write_trades_csv(std::ostream& out, const BacktestReport& report) {
    out << "entry_time,entry_price,exit_time,exit_price,direction,return\n";
    for (const auto& t : report.trades) {
        out << format_iso8601(t.entry_time) << ',' << format_double(t.entry_price) << ','
            << format_iso8601(t.exit_time) << ',' << format_double(t.exit_price) << ','
            << direction_name(t.direction) << ',' << format_double(t.return_fraction) << '\n';
    }
}

void write_buzz_stats_csv(std::ostream& out, std::span<const BuzzGroup> hourly,
                          std::span<const BuzzGroup> monthly) {
    out << "grouping,group,count,min,q1,median,q3,max\n";
    const auto emit = [&](const char* grouping, std::span<const BuzzGroup> groups) {
        for (const auto& g : groups) {
            out << grouping << ',' << g.key << ',' << g.count << ',' << format_double(g.stats.min) << ','
                << format_double(g.stats.q1) << ',' << format_double(g.stats.median) << ','
                << format_double(g.stats.q3) << ',' << format_double(g.stats.max) << '\n';
        }
    };
    emit("hour_of_day", hourly);
    emit("calendar_month", monthly);
}

std::string metrics_table_header() {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-24s %9s %9s %7s %9s %9s", "model", "MAP", "AAR", "SR", "DJA", "YJA");
    return buf;
}

std::string metrics_table_row(const std::string& name, const BacktestReport& report) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-24s %9s %9s %7s %9s %9s", name.c_str(), percent(report.map).c_str(),
                  percent(report.aar).c_str(), fixed(report.sharpe).c_str(),
                  percent(report.daily_jensen_alpha, 4).c_str(), percent(report.yearly_jensen_alpha).c_str());
    return buf;
}

void write_report(std::ostream& out, const std::string& name, const BacktestReport& report) {
    const auto& c = report.config;
    out << "backtest report: " << name << '\n';
    out << "span: " << format_iso8601(report.start) << " .. " << format_iso8601(report.end) << " ("
        << report.trading_days << " trading days, " << report.prediction_count << " predictions)\n";
    out << "assumptions: threshold " << format_double(c.threshold) << ", cost per side "
        << format_double(c.cost_per_side) << ", risk-free " << format_double(c.risk_free_annual)
        << " annual, benchmark buy-and-hold, shorting allowed, "
        << (c.cost_per_side > 0.0 ? "returns net of costs" : "returns without transaction costs") << '\n';
    out << '\n' << metrics_table_header() << '\n' << metrics_table_row(name, report) << "\n\n";
    out << "cumulative return: " << percent(report.cumulative_return) << '\n';
    out << "benchmark return: " << percent(report.benchmark_return) << '\n';
    out << "beta: " << fixed(report.beta, 4) << '\n';
    out << "accuracy: " << percent(report.accuracy) << '\n';
    out << "trades: " << report.trades.size() << " (won " << report.winning_trades << ", lost "
        << report.losing_trades << ")\n";
    std::size_t positive = 0;
    for (const auto& m : report.monthly) positive += m.ret > 0.0 ? 1 : 0;
    out << "positive months: " << positive << " of " << report.monthly.size() << '\n';
}

}  // namespace dualclvsa::backtest
