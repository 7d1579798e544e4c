/*
   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

// Trajectory dumps. CSV columns are t, x_1..x_w, norm_r, stopped; the binary
// form stores the same table as little-endian doubles after the magic "SFDE1"
// and two little-endian uint64 (rows, columns). Coupled paths use
// t, x_*, y_*, h_norm, logR, z_norm_r.

#include "sfde/coupling.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace sfde {

namespace io_detail {

inline void header(std::ostream& os, const char* prefix, int width) {
  for (int i = 1; i <= width; ++i) os << ',' << prefix << '_' << i;
}

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(sizeof(T) == 8);
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
  char b[8];
  std::memcpy(b, &u, 8);
  os.write(b, 8);
}

template <class T>
T get_le(std::istream& is) {
  char b[8];
  if (!is.read(b, 8)) throw ConfigError("truncated binary trajectory");
  std::uint64_t u;
  std::memcpy(&u, b, 8);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
  T v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace io_detail

inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  os << "t";
  io_detail::header(os, "x", tr.width());
  os << ",norm_r,stopped\n";
  os << std::setprecision(17);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    os << tr.times[k];
    for (int i = 0; i < tr.width(); ++i) os << ',' << tr.states[k * tr.width() + i];
    const bool last = k + 1 == tr.size();
    os << ',' << tr.norms[k] << ',' << ((tr.stopped && last) ? 1 : 0) << '\n';
  }
}

inline void save_trajectory_csv(const std::string& path, const Trajectory& tr) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  write_trajectory_csv(os, tr);
  if (!os) throw ConfigError("write to " + path + " failed");
}

inline void write_trajectory_binary(std::ostream& os, const Trajectory& tr) {
  os.write("SFDE1", 5);
  const std::uint64_t cols = static_cast<std::uint64_t>(tr.width()) + 3;
  io_detail::put_le<std::uint64_t>(os, tr.size());
  io_detail::put_le<std::uint64_t>(os, cols);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    io_detail::put_le(os, tr.times[k]);
    for (int i = 0; i < tr.width(); ++i) io_detail::put_le(os, tr.states[k * tr.width() + i]);
    io_detail::put_le(os, tr.norms[k]);
    io_detail::put_le(os, (tr.stopped && k + 1 == tr.size()) ? 1.0 : 0.0);
  }
}

/// Table stored in a binary dump, row-major.
struct BinaryTable {
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::vector<double> values;
};

inline BinaryTable read_trajectory_binary(std::istream& is) {
  char magic[5];
  if (!is.read(magic, 5) || std::string(magic, 5) != "SFDE1") throw ConfigError("not an SFDE1 binary trajectory");
  BinaryTable t;
  t.rows = io_detail::get_le<std::uint64_t>(is);
  t.cols = io_detail::get_le<std::uint64_t>(is);
  t.values.reserve(t.rows * t.cols);
  for (std::uint64_t i = 0; i < t.rows * t.cols; ++i) t.values.push_back(io_detail::get_le<double>(is));
  return t;
}

inline void write_coupled_csv(std::ostream& os, const CoupledTrajectory& tr) {
  os << "t";
  io_detail::header(os, "x", tr.width());
  io_detail::header(os, "y", tr.width());
  os << ",h_norm,logR,z_norm_r\n";
  os << std::setprecision(17);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    os << tr.times[k];
    for (int i = 0; i < tr.width(); ++i) os << ',' << tr.x[k * tr.width() + i];
    for (int i = 0; i < tr.width(); ++i) os << ',' << tr.y[k * tr.width() + i];
    os << ',' << tr.h_norm[k] << ',' << tr.log_r[k] << ',' << tr.z_norm[k] << '\n';
  }
}

inline void save_coupled_csv(const std::string& path, const CoupledTrajectory& tr) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  write_coupled_csv(os, tr);
  if (!os) throw ConfigError("write to " + path + " failed");
}

}  // namespace sfde
