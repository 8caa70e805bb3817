#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "mstdp/types.hpp"

namespace mstdp {

// Regular grid of square cells covering the study area. Cell (row r, col c)
// has id r * width + c. Every cell belongs to exactly one admin region.
struct CityGrid {
  int width = 0;
  int height = 0;
  double cell_size_km = 1.0;
  double origin_lat = 0.0; // south-west corner
  double origin_lon = 0.0;
  int n_admins = 0;
  std::vector<AdminId> cell_admin; // size width * height

  int n_cells() const { return width * height; }
  int row(CellId c) const { return c / width; }
  int col(CellId c) const { return c % width; }
  CellId cell_at(int r, int c) const { return static_cast<CellId>(r) * width + c; }

  AdminId admin_of(CellId c) const;

  // Centroid in a local planar frame, km east/north of the origin corner.
  std::pair<double, double> centroid_km(CellId c) const;
  std::pair<double, double> centroid_latlon(CellId c) const;
  double distance_km(CellId a, CellId b) const;

  // Cells of each admin region, ascending.
  std::vector<std::vector<CellId>> admin_cells() const;

  void validate() const; // throws ContractError
};

void save_city(const CityGrid& grid, const std::filesystem::path& file);
CityGrid load_city(const std::filesystem::path& file);

} // namespace mstdp
