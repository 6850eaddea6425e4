#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "solarmap/installations.hpp"
#include "solarmap/vector.hpp"

namespace solarmap {

// Capacity is proportional to array surface area: c_i = gamma * area_i + noise.
// Units are kW and m^2, so gamma is kW/m^2. The noise term is never added to
// predictions; it shows up as per-region residuals in CapacityReport.

enum class CapacityModelKind { kFixed, kColorLinear };

struct CalibrationMeta {
  std::string source;
  double area_sum = 0.0;
  double known_capacity = 0.0;
  std::size_t samples = 0;
};

struct CapacityModel {
  CapacityModelKind kind = CapacityModelKind::kFixed;
  /// kW/m^2, fixed kind.
  double gamma = 0.0;
  /// Per-array gamma = color_weights . mean_color + intercept (color-linear kind).
  Color color_weights{0.0, 0.0, 0.0};
  double intercept = 0.0;
  CalibrationMeta calibration;

  static CapacityModel fixed(double gamma);
};

/// gamma = known_capacity / sum of installation areas.
CapacityModel calibrate_fixed(std::span<const Installation> region_installations,
                              double known_capacity, std::string source = {});

struct CapacitySample {
  Color mean_color{};
  double area = 0.0;      // m^2
  double capacity = 0.0;  // kW
};

/// Least-squares fit of per-array gamma (capacity / area) against mean color,
/// solved through the normal equations. A rank-deficient design throws
/// Error(kSingular) naming the degenerate parameter direction.
CapacityModel fit_color_model(std::span<const CapacitySample> samples);

struct CapacityEstimate {
  double kw = 0.0;
  /// The color model produced a negative gamma, which was clamped to 0.
  bool clamped = false;
};

CapacityEstimate predict(const CapacityModel& m, const Installation& inst);

struct InstallationCapacity {
  std::string id;
  double area = 0.0;
  double kw = 0.0;
  std::optional<std::string> region;
};

struct RegionCapacity {
  std::string name;
  double estimated_kw = 0.0;
  std::optional<double> reported_kw;
  std::size_t installations = 0;
  bool excluded = false;
};

struct ExcludedRegion {
  std::string name;
  std::string reason;
};

struct CapacityReport {
  std::vector<InstallationCapacity> per_installation;
  std::vector<RegionCapacity> per_region;
  /// estimated - reported for every region with a reported value.
  std::vector<std::pair<std::string, double>> residuals;
  /// Over non-excluded regions with a reported value.
  std::optional<double> pearson_r;
  std::vector<ExcludedRegion> excluded;
  std::vector<std::string> unassigned;
  double unassigned_kw = 0.0;
  std::size_t clamped = 0;
};

struct AggregateOptions {
  /// Regions left out of the correlation. Exclusion is only ever explicit.
  std::vector<std::string> excluded_regions;
  int workers = 1;
};

/// Assigns each installation to the region containing its centroid and sums
/// predicted capacity per region. Throws Error(kGeometry) when regions
/// overlap.
CapacityReport aggregate(std::span<const Installation> insts, std::span<const Region> regions,
                         const CapacityModel& m, const AggregateOptions& options = {});

/// Product-moment correlation; std::nullopt when either input is constant.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct OutlierFlag {
  std::string region;
  double studentized_residual = 0.0;
};

/// Regresses reported on estimated capacity over the report's non-excluded
/// regions and flags those whose externally studentized residual exceeds
/// z_threshold in magnitude. Flagging never excludes anything by itself.
std::vector<OutlierFlag> detect_outliers(const CapacityReport& report, double z_threshold = 3.0);

std::string to_json(const CapacityReport& report);
/// region,estimated_kw,reported_kw,residual,excluded
std::string to_csv(const CapacityReport& report);

void save_capacity_model(const CapacityModel& m, const std::filesystem::path& path);
CapacityModel load_capacity_model(const std::filesystem::path& path);
/// NDJSON lines carrying mean_color, area_m2 and capacity_kw.
std::vector<CapacitySample> load_capacity_samples(const std::filesystem::path& path);

}  // namespace solarmap
