#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace cxr {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position by name, or -1.
  int column(std::string_view name) const;
};

std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_escape(std::string_view field);

/// Reads a whole CSV file. Throws FormatError on ragged rows.
CsvTable read_csv(const std::filesystem::path& path);

/// Formats a double with 17 significant digits (round-trip exact).
std::string format_double(double v);

/// Writes `content` to `path` only if the bytes differ, creating parents.
void write_file(const std::filesystem::path& path, std::string_view content);

/// Platform-independent uniform integer in [0, bound) from a 64-bit engine.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

/// Fisher-Yates shuffle driven by uniform_below, so results depend only on
/// the engine state and not on the standard library's distributions.
template <class T>
void stable_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = uniform_below(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

} // namespace cxr
