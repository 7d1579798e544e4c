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

// Segment files: CSV with a header row "theta,v_1,...,v_d" ordered from
// theta = 0 downwards, plus a JSON sidecar {r, dt, T_hist, tail_mode}.

#include "sfde/segment.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace sfde {

struct SegmentFile {
  Segment segment;
  double r = 0.0;
};

inline std::string sidecar_path(const std::string& csv_path) {
  const auto dot = csv_path.rfind('.');
  const auto slash = csv_path.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return csv_path + ".json";
  return csv_path.substr(0, dot) + ".json";
}

inline void write_segment_csv(std::ostream& os, const Segment& seg) {
  os << "theta";
  for (int i = 1; i <= seg.dim(); ++i) os << ",v_" << i;
  os << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < seg.points(); ++k) {
    os << seg.theta(k);
    for (int i = 0; i < seg.dim(); ++i) os << ',' << seg.component(k, i);
    os << '\n';
  }
}

inline nlohmann::json segment_sidecar(const Segment& seg, double r) {
  return {{"r", r}, {"dt", seg.dt()}, {"T_hist", seg.window()},
          {"tail_mode", to_string(seg.tail_mode())}};
}

inline void save_segment(const std::string& csv_path, const Segment& seg, double r) {
  std::ofstream csv(csv_path);
  if (!csv) throw ConfigError("cannot write " + csv_path);
  write_segment_csv(csv, seg);
  std::ofstream side(sidecar_path(csv_path));
  if (!side) throw ConfigError("cannot write " + sidecar_path(csv_path));
  side << segment_sidecar(seg, r).dump(2) << '\n';
}

/// Parses the CSV body. dt and window are taken from the sidecar when given,
/// otherwise inferred from the theta column.
inline Segment read_segment_csv(std::istream& is, const nlohmann::json& sidecar = {}) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("segment CSV is empty");
  int dim = 0;
  for (char c : line) dim += (c == ',');
  require(dim >= 1, "segment CSV header needs theta plus at least one value column");
  std::vector<double> thetas, values;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      try {
        v = std::stod(cell);
      } catch (const std::exception&) {
        throw ConfigError("segment CSV row " + std::to_string(row + 1) + ": cannot parse '" + cell + "'");
      }
      if (!std::isfinite(v)) throw NonFiniteSample(row, "segment CSV");
      if (col == 0) thetas.push_back(v); else values.push_back(v);
      ++col;
    }
    require(col == dim + 1, "segment CSV row " + std::to_string(row + 1) + " has wrong column count");
    ++row;
  }
  require(thetas.size() >= 2, "segment CSV needs at least two rows");
  double dt = thetas[0] - thetas[1];
  double window = -thetas.back();
  TailMode tail = TailMode::constant_extension;
  if (!sidecar.is_null()) {
    if (sidecar.contains("dt")) dt = sidecar.at("dt").get<double>();
    if (sidecar.contains("T_hist")) window = sidecar.at("T_hist").get<double>();
    if (sidecar.contains("tail_mode")) tail = tail_mode_from_string(sidecar.at("tail_mode").get<std::string>());
  }
  for (std::size_t k = 0; k < thetas.size(); ++k)
    require(std::abs(thetas[k] + static_cast<double>(k) * dt) < 1e-6 * std::max(1.0, window),
            "segment CSV theta column is not the grid 0, -dt, -2dt, ...");
  return Segment(dim, dt, window, std::move(values), tail);
}

inline SegmentFile load_segment(const std::string& csv_path) {
  std::ifstream csv(csv_path);
  if (!csv) throw ConfigError("cannot open segment file " + csv_path);
  nlohmann::json side;
  double r = 0.0;
  std::ifstream sf(sidecar_path(csv_path));
  if (sf) {
    side = nlohmann::json::parse(sf);
    if (side.contains("r")) r = side.at("r").get<double>();
  }
  return {read_segment_csv(csv, side), r};
}

}  // namespace sfde
