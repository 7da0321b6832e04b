#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace busdensity::csv {

/// Parsed CSV: header plus string cells. Fields may be double-quoted; quotes
/// inside quoted fields are doubled.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based source line for each row, for error messages.
  std::vector<std::size_t> lines;

  /// Index of a column, or throws Error("header_mismatch").
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

Table read(const std::filesystem::path& path);
Table parse(std::string_view text);

std::vector<std::string> split_line(std::string_view line);
std::string escape(std::string_view field);

/// Requires the header to start with exactly `expected` (extra trailing
/// columns are allowed only when allow_extra is set).
void require_header(const Table& t, const std::vector<std::string>& expected,
                    const std::string& what, bool allow_extra = false);

/// Row-at-a-time writer producing '\n'-terminated lines.
class Writer {
 public:
  explicit Writer(std::vector<std::string> header);
  Writer& row(const std::vector<std::string>& fields);
  const std::string& str() const { return out_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::size_t width_;
  std::string out_;
};

/// Shortest round-trip representation of a double.
std::string fmt_double(double v);
/// Fixed-point with the given number of decimals.
std::string fmt_fixed(double v, int decimals);

double to_double(std::string_view s, const std::string& what);
long to_long(std::string_view s, const std::string& what);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace busdensity::csv
