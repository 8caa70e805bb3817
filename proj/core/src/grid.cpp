#include "mstdp/grid.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mstdp {

using ordered_json = nlohmann::ordered_json;

AdminId CityGrid::admin_of(CellId c) const {
  if (c < 0 || c >= n_cells()) throw ContractError("grid: cell id out of range");
  return cell_admin[static_cast<std::size_t>(c)];
}

std::pair<double, double> CityGrid::centroid_km(CellId c) const {
  double x = (col(c) + 0.5) * cell_size_km;
  double y = (row(c) + 0.5) * cell_size_km;
  return {x, y};
}

std::pair<double, double> CityGrid::centroid_latlon(CellId c) const {
  auto [x, y] = centroid_km(c);
  double lat = origin_lat + y / 110.574;
  double lon = origin_lon + x / (111.320 * std::cos(origin_lat * M_PI / 180.0));
  return {lat, lon};
}

double CityGrid::distance_km(CellId a, CellId b) const {
  auto [ax, ay] = centroid_km(a);
  auto [bx, by] = centroid_km(b);
  return std::hypot(ax - bx, ay - by);
}

std::vector<std::vector<CellId>> CityGrid::admin_cells() const {
  std::vector<std::vector<CellId>> out(static_cast<std::size_t>(n_admins));
  for (CellId c = 0; c < n_cells(); ++c)
    out[static_cast<std::size_t>(cell_admin[static_cast<std::size_t>(c)])].push_back(c);
  return out;
}

void CityGrid::validate() const {
  if (width <= 0 || height <= 0) throw ContractError("grid: non-positive dimensions");
  if (cell_size_km <= 0) throw ContractError("grid: non-positive cell size");
  if (n_admins <= 0) throw ContractError("grid: non-positive admin count");
  if (cell_admin.size() != static_cast<std::size_t>(n_cells()))
    throw ContractError("grid: cell_admin size mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(n_admins), false);
  for (AdminId a : cell_admin) {
    if (a < 0 || a >= n_admins) throw ContractError("grid: admin id out of range");
    seen[static_cast<std::size_t>(a)] = true;
  }
  for (bool s : seen)
    if (!s) throw ContractError("grid: empty admin region");
}

void save_city(const CityGrid& grid, const std::filesystem::path& file) {
  grid.validate();
  ordered_json j;
  j["width"] = grid.width;
  j["height"] = grid.height;
  j["cell_size_km"] = grid.cell_size_km;
  j["origin_lat"] = grid.origin_lat;
  j["origin_lon"] = grid.origin_lon;
  j["n_admins"] = grid.n_admins;
  j["cell_admin"] = grid.cell_admin;
  std::ofstream out(file);
  if (!out) throw ContractError("grid: cannot write " + file.string());
  out << j.dump(2) << "\n";
}

CityGrid load_city(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ContractError("grid: cannot open " + file.string());
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ContractError("grid: bad json in " + file.string() + ": " + e.what());
  }
  CityGrid g;
  try {
    g.width = j.at("width").get<int>();
    g.height = j.at("height").get<int>();
    g.cell_size_km = j.at("cell_size_km").get<double>();
    g.origin_lat = j.at("origin_lat").get<double>();
    g.origin_lon = j.at("origin_lon").get<double>();
    g.n_admins = j.at("n_admins").get<int>();
    g.cell_admin = j.at("cell_admin").get<std::vector<AdminId>>();
  } catch (const std::exception& e) {
    throw ContractError("grid: missing or bad field in " + file.string() + ": " + e.what());
  }
  g.validate();
  return g;
}

} // namespace mstdp
