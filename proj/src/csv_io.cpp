#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "dualclvsa/csv.h"
#include "dualclvsa/data.h"
#include "dualclvsa/errors.h"

namespace dualclvsa {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cell);
            cell.clear();
        } else if (ch != '\r') {
            cell.push_back(ch);
        }
    }
    cells.push_back(cell);
    return cells;
}

std::string format_double(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

double parse_double(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw DataError("invalid number '" + text + "' in " + what);
    }
}

CsvTable read_csv(std::istream& in, const std::string& what) {
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw DataError(what + ": missing header");
    table.header = split_csv_line(line);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = split_csv_line(line);
        if (cells.size() != table.header.size()) {
            throw DataError(what + ": line " + std::to_string(line_no) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(table.header.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    return table;
}

void expect_header(const CsvTable& table, const std::vector<std::string>& expected,
                   const std::string& what) {
    if (table.header != expected) {
        std::string joined;
        for (const auto& h : expected) joined += (joined.empty() ? "" : ",") + h;
        throw DataError(what + ": expected header '" + joined + "'");
    }
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return in;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

}  // namespace dualclvsa

namespace dualclvsa::data {

void write_bars_csv(std::ostream& out, std::span<const Bar> bars) {
    out << "timestamp,open,high,low,close,volume\n";
    for (const Bar& b : bars) {
        out << format_iso8601(b.timestamp) << ',' << format_double(b.open) << ','
            << format_double(b.high) << ',' << format_double(b.low) << ','
            << format_double(b.close) << ',' << format_double(b.volume) << '\n';
    }
}

std::vector<Bar> read_bars_csv(std::istream& in) {
    const CsvTable t = read_csv(in, "bars CSV");
    expect_header(t, {"timestamp", "open", "high", "low", "close", "volume"}, "bars CSV");
    std::vector<Bar> bars;
    bars.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        Bar b;
        b.timestamp = parse_iso8601(r[0]);
        b.open = parse_double(r[1], "bars CSV");
        b.high = parse_double(r[2], "bars CSV");
        b.low = parse_double(r[3], "bars CSV");
        b.close = parse_double(r[4], "bars CSV");
        b.volume = parse_double(r[5], "bars CSV");
        const double lo = std::min(b.open, b.close), hi = std::max(b.open, b.close);
        if (!(b.low <= lo && hi <= b.high) || b.volume < 0.0 || b.low <= 0.0) {
            throw DataError("bars CSV: inconsistent bar at " + r[0]);
        }
        if (!bars.empty() && b.timestamp <= bars.back().timestamp) {
            throw DataError("bars CSV: timestamps not strictly increasing at " + r[0]);
        }
        bars.push_back(b);
    }
    return bars;
}

void write_trmi_csv(std::ostream& out, std::span<const TrmiRecord> records) {
    out << "timestamp,buzz";
    for (const char* name : kIndexNames) out << ',' << name;
    out << '\n';
    for (const TrmiRecord& r : records) {
        out << format_iso8601(r.timestamp) << ',' << format_double(r.buzz);
        for (std::size_t i = 0; i < kIndexCount; ++i) {
            out << ',';
            if (r.present[i]) out << format_double(r.values[i]);
        }
        out << '\n';
    }
}

std::vector<TrmiRecord> read_trmi_csv(std::istream& in) {
    const CsvTable t = read_csv(in, "trmi CSV");
    expect_header(t, {"timestamp", "buzz", "sentiment", "optimism", "fear", "joy"}, "trmi CSV");
    std::vector<TrmiRecord> records;
    records.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        TrmiRecord rec = TrmiRecord::missing(parse_iso8601(r[0]));
        rec.buzz = r[1].empty() ? 0.0 : parse_double(r[1], "trmi CSV");
        if (rec.buzz < 0.0) throw DataError("trmi CSV: negative buzz at " + r[0]);
        for (std::size_t i = 0; i < kIndexCount; ++i) {
            if (r[2 + i].empty() || rec.buzz == 0.0) continue;
            const double v = parse_double(r[2 + i], "trmi CSV");
            if (v < -1.0 || v > 1.0) throw DataError("trmi CSV: index outside [-1, 1] at " + r[0]);
            rec.values[i] = v;
            rec.present[i] = true;
        }
        if (!records.empty() && rec.timestamp < records.back().timestamp) {
            throw DataError("trmi CSV: timestamps not time-ordered at " + r[0]);
        }
        records.push_back(rec);
    }
    return records;
}

void write_psychvar_csv(std::ostream& out, std::span<const PsychVarRecord> records,
                        const std::vector<std::string>& names) {
    out << "timestamp";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (const auto& r : records) {
        out << format_iso8601(r.timestamp);
        for (const auto& n : names) {
            const auto it = r.values.find(n);
            out << ',' << format_double(it == r.values.end() ? 0.0 : it->second);
        }
        out << '\n';
    }
}

std::vector<PsychVarRecord> read_psychvar_csv(std::istream& in) {
    const CsvTable t = read_csv(in, "psychvar CSV");
    if (t.header.empty() || t.header[0] != "timestamp") {
        throw DataError("psychvar CSV: first column must be 'timestamp'");
    }
    std::vector<PsychVarRecord> records;
    for (const auto& r : t.rows) {
        PsychVarRecord rec;
        rec.timestamp = parse_iso8601(r[0]);
        for (std::size_t c = 1; c < r.size(); ++c) {
            if (r[c].empty()) continue;
            rec.values[t.header[c]] = parse_double(r[c], "psychvar CSV");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void write_polarity_csv(std::ostream& out, const TrmiPolarity& polarity) {
    out << "index,psychvar,polarity\n";
    for (const auto& [index, row] : polarity.table) {
        for (const auto& [psychvar, sign] : row) {
            out << index << ',' << psychvar << ',' << (sign > 0 ? "+1" : sign < 0 ? "-1" : "0") << '\n';
        }
    }
}

TrmiPolarity read_polarity_csv(std::istream& in) {
    const CsvTable t = read_csv(in, "polarity CSV");
    expect_header(t, {"index", "psychvar", "polarity"}, "polarity CSV");
    TrmiPolarity p;
    for (const auto& r : t.rows) {
        int sign = 0;
        if (r[2] == "+1" || r[2] == "1") sign = 1;
        else if (r[2] == "-1") sign = -1;
        else if (r[2] != "0") throw DataError("polarity CSV: polarity must be +1, -1 or 0");
        p.set(r[0], r[1], sign);
    }
    return p;
}

void write_aligned_csv(std::ostream& out, std::span<const AlignedPoint> aligned) {
    out << "timestamp,open,high,low,close,volume,buzz";
    for (const char* name : kIndexNames) out << ',' << name;
    out << ",mask\n";
    for (const auto& p : aligned) {
        const Bar& b = p.bar;
        out << format_iso8601(b.timestamp) << ',' << format_double(b.open) << ','
            << format_double(b.high) << ',' << format_double(b.low) << ','
            << format_double(b.close) << ',' << format_double(b.volume) << ','
            << format_double(p.trmi.buzz);
        for (std::size_t i = 0; i < kIndexCount; ++i) {
            out << ',';
            if (p.trmi.present[i]) out << format_double(p.trmi.values[i]);
        }
        out << ',' << (p.trmi.buzz > 0.0 && p.trmi.any_present() ? 1 : 0) << '\n';
    }
}

std::vector<Bar> load_bars(const std::string& path) {
    auto in = open_input(path);
    return read_bars_csv(in);
}

std::vector<TrmiRecord> load_trmi(const std::string& path) {
    auto in = open_input(path);
    return read_trmi_csv(in);
}

}  // namespace dualclvsa::data
