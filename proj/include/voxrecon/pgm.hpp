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

#ifndef VOXRECON_PGM_HPP
#define VOXRECON_PGM_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "voxrecon/errors.hpp"
#include "voxrecon/tensor.hpp"

namespace voxrecon {

/// Writes one channel as binary PGM (P5, maxval 255). Values are clamped to
/// [0,1] and quantized with rounding. Accepts 1xHxW or HxW tensors.
inline void write_pgm(const Tensor& image, const std::string& path) {
  std::size_t h, w;
  if (image.rank() == 3 && image.extent(0) == 1) {
    h = image.extent(1);
    w = image.extent(2);
  } else if (image.rank() == 2) {
    h = image.extent(0);
    w = image.extent(1);
  } else {
    throw data_error("write_pgm: expected a single-channel image, got " +
                     shape_string(image.shape()));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("write_pgm: cannot open " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w);
  const double* p = image.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = std::clamp(p[y * w + x], 0.0, 1.0);
      row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(w));
  }
  if (!os) throw data_error("write_pgm: write failed for " + path);
}

namespace detail {

inline int pgm_next_token(std::istream& is) {
  // skips whitespace and '#' comment lines within the PGM header
  int c = is.get();
  for (;;) {
    while (c != EOF && std::isspace(c)) c = is.get();
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
      continue;
    }
    break;
  }
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw data_error("read_pgm: malformed header");
  return value;
}

} // namespace detail

/// Reads a binary PGM into a 1xHxW tensor with values mapped to [0,1].
inline Tensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("read_pgm: cannot open " + path);
  char p, five;
  is.get(p);
  is.get(five);
  if (!is || p != 'P' || five != '5') throw data_error("read_pgm: not a P5 file: " + path);
  const int w = detail::pgm_next_token(is);
  const int h = detail::pgm_next_token(is);
  const int maxval = detail::pgm_next_token(is);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw data_error("read_pgm: unsupported header in " + path);
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw data_error("read_pgm: truncated pixel data in " + path);
  Tensor t({1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t i = 0; i < raw.size(); ++i)
    t[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
  return t;
}

} // namespace voxrecon

#endif // VOXRECON_PGM_HPP
