#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "stats.hpp"

namespace treatrl {

// Action ids are vaso-major: id = (vaso_bin - 1) * 5 + (fluid_bin - 1).
using ActionId = int;

inline constexpr int kFluidBins = 5;
inline constexpr int kVasoBins = 6;
inline constexpr int kNumActions = kFluidBins * kVasoBins;

struct ActionBins {
  int fluid_bin = 1;  // 1..5
  int vaso_bin = 1;   // 1..6, bin 1 is exactly VIS = 0
  bool operator==(const ActionBins&) const = default;
};

inline ActionId encode_action(int fluid_bin, int vaso_bin) {
  if (fluid_bin < 1 || fluid_bin > kFluidBins || vaso_bin < 1 || vaso_bin > kVasoBins) {
    throw std::out_of_range("action bins out of range: (" + std::to_string(fluid_bin) + ", " +
                            std::to_string(vaso_bin) + ")");
  }
  return (vaso_bin - 1) * kFluidBins + (fluid_bin - 1);
}

inline ActionBins action_components(ActionId id) {
  if (id < 0 || id >= kNumActions) throw std::out_of_range("action id out of range: " + std::to_string(id));
  return {id % kFluidBins + 1, id / kFluidBins + 1};
}

// Bins are left-open / right-closed: fluid bin 1 is [0, c1], bin k is
// (c_{k-1}, c_k], bin 5 is (c4, inf). VIS bin 1 is exactly 0, bin 2 is
// (0, v1], ..., bin 6 is (v4, inf).
struct ActionGrid {
  std::array<double, kFluidBins - 1> fluid_cutoffs{};
  std::array<double, kVasoBins - 1> vis_cutoffs{};

  // Cutoffs fitted on MIMIC-III in the original study.
  static ActionGrid reference() { return ActionGrid{{100.0, 270.0, 500.0, 960.0}, {0.0, 3.0, 6.0, 10.0, 20.0}}; }

  void check() const {
    for (std::size_t i = 1; i < fluid_cutoffs.size(); ++i) {
      if (!(fluid_cutoffs[i] > fluid_cutoffs[i - 1])) throw DataError("fluid cutoffs must be strictly ascending");
    }
    if (fluid_cutoffs[0] < 0.0) throw DataError("fluid cutoffs must be nonnegative");
    if (vis_cutoffs[0] != 0.0) throw DataError("first VIS cutoff must be 0");
    for (std::size_t i = 1; i < vis_cutoffs.size(); ++i) {
      if (!(vis_cutoffs[i] > vis_cutoffs[i - 1])) throw DataError("VIS cutoffs must be strictly ascending");
    }
  }

  ActionBins bins(double fluid_ml, double vis) const {
    if (!(fluid_ml >= 0.0) || !(vis >= 0.0)) throw std::invalid_argument("doses must be nonnegative");
    const int fb = 1 + static_cast<int>(std::count_if(fluid_cutoffs.begin(), fluid_cutoffs.end(),
                                                      [&](double c) { return c < fluid_ml; }));
    const int vb = 1 + static_cast<int>(std::count_if(vis_cutoffs.begin(), vis_cutoffs.end(),
                                                      [&](double c) { return c < vis; }));
    return {fb, vb};
  }

  // A dose pair that discretizes back to `bins`: bin midpoints, with the
  // open-ended top bins at 1.5x their lower cutoff and VIS bin 1 at zero.
  std::pair<double, double> representative_dose(ActionBins b) const {
    double fluid = 0.0;
    if (b.fluid_bin == 1) {
      fluid = fluid_cutoffs[0] / 2.0;
    } else if (b.fluid_bin == kFluidBins) {
      fluid = 1.5 * fluid_cutoffs.back();
    } else {
      fluid = (fluid_cutoffs[b.fluid_bin - 2] + fluid_cutoffs[b.fluid_bin - 1]) / 2.0;
    }
    double vis = 0.0;
    if (b.vaso_bin == kVasoBins) {
      vis = 1.5 * vis_cutoffs.back();
    } else if (b.vaso_bin > 1) {
      vis = (vis_cutoffs[b.vaso_bin - 2] + vis_cutoffs[b.vaso_bin - 1]) / 2.0;
    }
    return {fluid, vis};
  }

  bool operator==(const ActionGrid&) const = default;
};

inline ActionId discretize_action(const ActionGrid& grid, double fluid_ml, double vis) {
  const auto b = grid.bins(fluid_ml, vis);
  return encode_action(b.fluid_bin, b.vaso_bin);
}

// Quintile cutoffs over nonzero doses. Zero fluid falls into fluid bin 1;
// zero VIS is its own bin.
inline ActionGrid fit_action_grid(std::span<const std::pair<double, double>> doses) {
  std::vector<double> fluids, vis;
  for (const auto& [f, v] : doses) {
    if (!(f >= 0.0) || !(v >= 0.0)) throw DataError("negative or missing dose in action grid fit");
    if (f > 0.0) fluids.push_back(f);
    if (v > 0.0) vis.push_back(v);
  }
  std::sort(fluids.begin(), fluids.end());
  std::sort(vis.begin(), vis.end());
  if (fluids.empty()) throw DataError("no nonzero fluid doses to form quintiles");
  if (vis.empty()) throw DataError("no nonzero VIS doses to form quintiles");

  ActionGrid g;
  for (int q = 1; q <= 4; ++q) {
    g.fluid_cutoffs[q - 1] = nearest_rank_percentile(fluids, 20.0 * q);
    g.vis_cutoffs[q] = nearest_rank_percentile(vis, 20.0 * q);
  }
  g.vis_cutoffs[0] = 0.0;
  try {
    g.check();
  } catch (const DataError& e) {
    throw DataError(std::string("insufficient distinct nonzero doses for quintile cutoffs: ") + e.what());
  }
  return g;
}

inline void to_json(nlohmann::json& j, const ActionGrid& g) {
  j = nlohmann::json{{"fluid_cutoffs", g.fluid_cutoffs}, {"vis_cutoffs", g.vis_cutoffs}};
}

inline void from_json(const nlohmann::json& j, ActionGrid& g) {
  j.at("fluid_cutoffs").get_to(g.fluid_cutoffs);
  j.at("vis_cutoffs").get_to(g.vis_cutoffs);
  g.check();
}

}  // namespace treatrl
