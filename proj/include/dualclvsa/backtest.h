#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualclvsa/calendar.h"
#include "dualclvsa/data.h"
#include "dualclvsa/trainer.h"

namespace dualclvsa::backtest {

inline constexpr double kTradingDaysPerYear = 252.0;

enum class Direction { Long, Short };
const char* direction_name(Direction d);

struct Trade {
    Timestamp entry_time = 0;
    double entry_price = 0.0;
    Timestamp exit_time = 0;
    double exit_price = 0.0;
    Direction direction = Direction::Long;
    double return_fraction = 0.0;  // dir * (exit - entry) / entry - round-trip cost
};

// +1 / -1 when up / down is the argmax and reaches the threshold, else 0.
int position_from_scores(const std::array<double, data::kClassCount>& scores, double threshold);
std::vector<int> signals_to_positions(std::span<const train::Prediction> predictions, double threshold);

struct Simulation {
    std::vector<double> returns;  // one per interval: position_t * (close_{t+1}/close_t - 1) - costs
    std::vector<double> equity;   // cumulative return, returns.size() + 1 points starting at 0
    std::vector<Trade> trades;
};

// The last interval carries no price return but still pays for its position change.
Simulation simulate(std::span<const int> positions, std::span<const double> closes,
                    std::span<const Timestamp> timestamps, double cost_per_side);

double cumulative_return(std::span<const double> returns);
double annualized_return(double cumulative, double years);

// mean(excess) / sd(excess, n-1) * sqrt(periods_per_year).
double sharpe(std::span<const double> returns, double periods_per_year, double risk_free_annual = 0.0);

struct JensenResult {
    double alpha = 0.0;  // per period
    double beta = 0.0;
};
JensenResult jensen_alpha(std::span<const double> strategy, std::span<const double> benchmark,
                          double risk_free_per_period = 0.0);
double yearly_alpha(double daily_alpha);

struct PeriodReturn {
    std::string period;  // "YYYY-MM-DD" for days, "YYYY-MM" for months
    double ret = 0.0;
};

// Compounds interval returns by UTC day / calendar month of their timestamps.
std::vector<PeriodReturn> daily_returns(std::span<const Timestamp> timestamps, std::span<const double> returns);
std::vector<PeriodReturn> monthly_returns(std::span<const Timestamp> timestamps,
                                          std::span<const double> returns);

struct BacktestConfig {
    double threshold = 0.34;
    double cost_per_side = 0.0;
    double risk_free_annual = 0.0;
    std::optional<Timestamp> from;  // inclusive
    std::optional<Timestamp> to;    // exclusive
};

struct BacktestReport {
    Timestamp start = 0;
    Timestamp end = 0;
    std::size_t prediction_count = 0;
    std::size_t trading_days = 0;
    std::vector<Timestamp> equity_times;  // one per equity point after the first
    std::vector<double> equity;
    std::vector<Trade> trades;
    std::size_t winning_trades = 0;
    std::size_t losing_trades = 0;
    std::vector<PeriodReturn> monthly;
    double cumulative_return = 0.0;
    double benchmark_return = 0.0;
    std::optional<double> map;
    std::optional<double> accuracy;
    double aar = 0.0;
    std::optional<double> sharpe;
    std::optional<double> daily_jensen_alpha;
    std::optional<double> yearly_jensen_alpha;
    std::optional<double> beta;
    BacktestConfig config;
};

BacktestReport aggregate_report(const Simulation& sim, std::span<const Timestamp> timestamps,
                                std::span<const double> benchmark_returns,
                                std::span<const train::Prediction> predictions, const BacktestConfig& cfg);

// Maps predictions onto bars, trades them and builds the report.
BacktestReport run_backtest(std::span<const train::Prediction> predictions, std::span<const data::Bar> bars,
                            const BacktestConfig& cfg);

struct FiveNumberSummary {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

// Linear interpolation between order statistics; `sorted` must be ascending and non-empty.
double quantile(std::span<const double> sorted, double p);
FiveNumberSummary five_number_summary(std::vector<double> values);

enum class BuzzGrouping { HourOfDay, CalendarMonth };

struct BuzzGroup {
    std::string key;
    std::size_t count = 0;
    FiveNumberSummary stats;
};

std::vector<BuzzGroup> buzz_stats(std::span<const data::TrmiRecord> records, BuzzGrouping grouping);

void write_equity_csv(std::ostream& out, const BacktestReport& report);
void write_monthly_csv(std::ostream& out, const BacktestReport& report);
void write_trades_csv(std::ostream& out, const BacktestReport& report);
void write_buzz_stats_csv(std::ostream& out, std::span<const BuzzGroup> hourly,
                          std::span<const BuzzGroup> monthly);

// Header and row of the MAP, AAR, SR, DJA, YJA table.
std::string metrics_table_header();
std::string metrics_table_row(const std::string& name, const BacktestReport& report);
void write_report(std::ostream& out, const std::string& name, const BacktestReport& report);

}  // namespace dualclvsa::backtest
