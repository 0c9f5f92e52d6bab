#include "dualclvsa/run_config.h"

#include <algorithm>
#include <charconv>
#include <functional>
#include <istream>
#include <ostream>

#include "dualclvsa/csv.h"
#include "dualclvsa/errors.h"

namespace dualclvsa {

RunConfig::RunConfig() {
    // Trading-only baseline unless told otherwise.
    model.variant = model::Variant::LstmS;
    model.use_sentiment = false;
}

void RunConfig::validate() const {
    if (synth.days == 0) throw ConfigurationError("days must be positive");
    if (!(synth.sentiment_density >= 0.0 && synth.sentiment_density <= 1.0)) {
        throw ConfigurationError("density must lie in [0, 1]");
    }
    if (synth.intervals_per_day != frames.intervals_per_day) {
        throw ConfigurationError("intervals_per_day differs between generator and frames");
    }
    if (jobs == 0) throw ConfigurationError("jobs must be positive");
    if (backtest.from && backtest.to && *backtest.from >= *backtest.to) {
        throw ConfigurationError("from must precede to");
    }
}

std::string RunConfig::path_or_default(const std::string& path, const std::string& file_name) const {
    if (!path.empty()) return path;
    return out_dir + "/" + file_name;
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigurationError("invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
    return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(to_u64(key, v));
}

double to_double(const std::string& key, const std::string& v) {
    try {
        return parse_double(v, key);
    } catch (const std::exception&) {
        bad_value(key, v, "a number");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, v, "true or false");
}

std::optional<Timestamp> to_time(const std::string& key, const std::string& v) {
    if (v.empty()) return std::nullopt;
    try {
        return parse_iso8601(v);
    } catch (const std::exception&) {
        bad_value(key, v, "an ISO-8601 UTC date or time");
    }
}

std::vector<std::string> to_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::string from_time(const std::optional<Timestamp>& t) { return t ? format_iso8601(*t) : ""; }

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
    return out;
}

struct Setting {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SIZE_SETTING(name, field)                                                                    \
    Setting {                                                                                        \
        name, [](RunConfig& c, const std::string& v) { c.field = to_size(name, v); },                \
            [](const RunConfig& c) { return std::to_string(c.field); }                               \
    }
#define DOUBLE_SETTING(name, field)                                                                  \
    Setting {                                                                                        \
        name, [](RunConfig& c, const std::string& v) { c.field = to_double(name, v); },              \
            [](const RunConfig& c) { return format_double(c.field); }                                \
    }
#define BOOL_SETTING(name, field)                                                                    \
    Setting {                                                                                        \
        name, [](RunConfig& c, const std::string& v) { c.field = to_bool(name, v); },                \
            [](const RunConfig& c) { return from_bool(c.field); }                                    \
    }
#define STRING_SETTING(name, field)                                                                  \
    Setting {                                                                                        \
        name, [](RunConfig& c, const std::string& v) { c.field = v; },                               \
            [](const RunConfig& c) { return c.field; }                                               \
    }

const std::vector<Setting>& settings() {
    static const std::vector<Setting> table = {
        {"seed",
         [](RunConfig& c, const std::string& v) {
             c.seed = to_u64("seed", v);
             c.train.seed = c.seed;
             c.experiment.seed = c.seed;
             c.experiment.train.seed = c.seed;
         },
         [](const RunConfig& c) { return std::to_string(c.seed); }},
        STRING_SETTING("out_dir", out_dir),
        {"jobs",
         [](RunConfig& c, const std::string& v) {
             c.jobs = to_size("jobs", v);
             c.train.jobs = c.jobs;
             c.experiment.train.jobs = c.jobs;
         },
         [](const RunConfig& c) { return std::to_string(c.jobs); }},

        SIZE_SETTING("days", synth.days),
        DOUBLE_SETTING("density", synth.sentiment_density),
        {"signal", [](RunConfig& c, const std::string& v) { c.synth.signal_channel = data::parse_signal_channel(v); },
         [](const RunConfig& c) { return std::string(data::signal_channel_name(c.synth.signal_channel)); }},
        DOUBLE_SETTING("strength", synth.signal_strength),
        DOUBLE_SETTING("volatility", synth.volatility),
        SIZE_SETTING("records_per_interval", synth.records_per_interval),
        {"intervals_per_day",
         [](RunConfig& c, const std::string& v) {
             c.synth.intervals_per_day = to_size("intervals_per_day", v);
             c.frames.intervals_per_day = c.synth.intervals_per_day;
             c.experiment.frames.intervals_per_day = c.synth.intervals_per_day;
         },
         [](const RunConfig& c) { return std::to_string(c.frames.intervals_per_day); }},
        {"interval_seconds",
         [](RunConfig& c, const std::string& v) {
             c.synth.interval_seconds = static_cast<Timestamp>(to_u64("interval_seconds", v));
         },
         [](const RunConfig& c) { return std::to_string(c.synth.interval_seconds); }},

        SIZE_SETTING("horizon", frames.horizon),
        DOUBLE_SETTING("flat_band", frames.flat_band),
        DOUBLE_SETTING("max_fill_fraction", frames.max_fill_fraction),

        {"variant", [](RunConfig& c, const std::string& v) { c.model.variant = model::parse_variant(v); },
         [](const RunConfig& c) { return std::string(model::variant_name(c.model.variant)); }},
        {"indicators",
         [](RunConfig& c, const std::string& v) {
             c.model.use_indicators = to_bool("indicators", v);
             c.frames.use_indicators = c.model.use_indicators;
         },
         [](const RunConfig& c) { return from_bool(c.model.use_indicators); }},
        BOOL_SETTING("sentiment", model.use_sentiment),
        BOOL_SETTING("sentiment_latent", model.sentiment_latent),
        SIZE_SETTING("conv_channels", model.conv_channels),
        SIZE_SETTING("conv_width", model.conv_width),
        SIZE_SETTING("cell_width", model.cell_width),
        SIZE_SETTING("hidden", model.hidden),
        SIZE_SETTING("latent", model.latent),
        SIZE_SETTING("layers", model.layers),
        SIZE_SETTING("head_hidden", model.head_hidden),

        SIZE_SETTING("epochs", train.epochs),
        SIZE_SETTING("batch_size", train.batch_size),
        DOUBLE_SETTING("learning_rate", train.learning_rate),
        DOUBLE_SETTING("kld_weight", train.kld_weight),
        DOUBLE_SETTING("warmup_fraction", train.warmup_fraction),
        SIZE_SETTING("train_months", train.train_months),
        SIZE_SETTING("test_months", train.test_months),
        SIZE_SETTING("step_months", train.step_months),
        DOUBLE_SETTING("clip_norm", train.clip_norm),
        BOOL_SETTING("warm_start", train.warm_start),

        DOUBLE_SETTING("threshold", backtest.threshold),
        DOUBLE_SETTING("cost", backtest.cost_per_side),
        DOUBLE_SETTING("risk_free", backtest.risk_free_annual),
        {"from", [](RunConfig& c, const std::string& v) { c.backtest.from = to_time("from", v); },
         [](const RunConfig& c) { return from_time(c.backtest.from); }},
        {"to", [](RunConfig& c, const std::string& v) { c.backtest.to = to_time("to", v); },
         [](const RunConfig& c) { return from_time(c.backtest.to); }},

        SIZE_SETTING("experiment.days", experiment.days),
        DOUBLE_SETTING("experiment.strength", experiment.signal_strength),
        {"experiment.densities",
         [](RunConfig& c, const std::string& v) {
             std::vector<double> ds;
             for (const auto& item : to_list(v)) ds.push_back(to_double("experiment.densities", item));
             if (ds.empty()) bad_value("experiment.densities", v, "a comma-separated list of numbers");
             c.experiment.densities = ds;
         },
         [](const RunConfig& c) {
             std::vector<std::string> items;
             for (double d : c.experiment.densities) items.push_back(format_double(d, 6));
             return join(items);
         }},
        SIZE_SETTING("experiment.epochs", experiment.train.epochs),
        SIZE_SETTING("experiment.batch_size", experiment.train.batch_size),
        SIZE_SETTING("experiment.train_months", experiment.train.train_months),
        SIZE_SETTING("experiment.test_months", experiment.train.test_months),
        SIZE_SETTING("experiment.step_months", experiment.train.step_months),
        SIZE_SETTING("experiment.hidden", experiment.model.hidden),
        SIZE_SETTING("experiment.head_hidden", experiment.model.head_hidden),
        SIZE_SETTING("experiment.conv_channels", experiment.model.conv_channels),
        SIZE_SETTING("experiment.latent", experiment.model.latent),

        STRING_SETTING("bars", bars_path),
        STRING_SETTING("trmi", trmi_path),
        STRING_SETTING("psychvars", psychvar_path),
        STRING_SETTING("polarity", polarity_path),
        {"predictions", [](RunConfig& c, const std::string& v) { c.prediction_paths = to_list(v); },
         [](const RunConfig& c) { return join(c.prediction_paths); }},
    };
    return table;
}

#undef SIZE_SETTING
#undef DOUBLE_SETTING
#undef BOOL_SETTING
#undef STRING_SETTING

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = settings();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Setting& s) { return s.key == key; });
    if (it == table.end()) throw ConfigurationError("unknown setting '" + key + "'");
    it->set(cfg, value);
}

void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& source) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigurationError(source + ":" + std::to_string(lineno) + ": expected key = value");
        }
        try {
            apply_setting(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        } catch (const std::exception& e) {
            throw ConfigurationError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    auto in = open_input(path);
    apply_config_text(cfg, in, path);
}

const std::vector<std::string>& setting_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& s : settings()) out.push_back(s.key);
        return out;
    }();
    return keys;
}

void write_config(std::ostream& out, const RunConfig& cfg) {
    for (const auto& s : settings()) out << s.key << " = " << s.get(cfg) << '\n';
}

}  // namespace dualclvsa
