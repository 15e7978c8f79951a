// Copyright 2026 The voxrecon Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied. See the License for the specific language governing
// permissions and limitations under the License.

#ifndef VOXRECON_CSV_HPP
#define VOXRECON_CSV_HPP

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "voxrecon/errors.hpp"

namespace voxrecon {

/// Full-precision text form of a double; %.17g round-trips exactly.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Minimal comma-separated writer. No quoting: all emitted fields are
/// numbers or fixed labels.
class CsvWriter {
public:
  explicit CsvWriter(const std::string& path) : os_(path) {
    if (!os_) throw data_error("CsvWriter: cannot open " + path);
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) os_ << ',';
      os_ << fields[i];
    }
    os_ << '\n';
  }

  ~CsvWriter() { os_.flush(); }

private:
  std::ofstream os_;
};

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("read_csv: cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    rows.push_back(std::move(fields));
  }
  return rows;
}

} // namespace voxrecon

#endif // VOXRECON_CSV_HPP
