#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fraclap::csv {

/// Shortest representation that round-trips a double (17 significant digits).
inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string num(int v) { return std::to_string(v); }
inline std::string num(long long v) { return std::to_string(v); }

/// Plain comma-separated writer; callers pass fully formatted cells.
class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open output file: " + path.string());
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

}  // namespace fraclap::csv
