#pragma once

#include <fstream>
#include <iosfwd>
#include <string>
#include <vector>

namespace dualclvsa {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_csv_line(const std::string& line);
CsvTable read_csv(std::istream& in, const std::string& what);
void expect_header(const CsvTable& table, const std::vector<std::string>& expected,
                   const std::string& what);

// %.12g unless told otherwise; stable across runs so outputs compare byte for byte.
std::string format_double(double v, int digits = 12);
double parse_double(const std::string& text, const std::string& what);

std::ifstream open_input(const std::string& path);
std::ofstream open_output(const std::string& path);

}  // namespace dualclvsa
