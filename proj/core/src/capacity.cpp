#include "solarmap/capacity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "solarmap/error.hpp"
#include "solarmap/parallel.hpp"

namespace solarmap {

namespace {

using nlohmann::json;

struct Bounds {
  double x0, x1, y0, y1;
};

Bounds ring_bounds(const Ring& ring) {
  Bounds b{ring[0].x, ring[0].x, ring[0].y, ring[0].y};
  for (const auto& p : ring) {
    b.x0 = std::min(b.x0, p.x);
    b.x1 = std::max(b.x1, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

// Samples a grid over the shared bounding box of every pair of regions. The
// grid is offset by an irrational fraction so it avoids the round coordinates
// of shared borders.
void require_disjoint(std::span<const Region> regions) {
  constexpr int kGrid = 16;
  constexpr double kOffset = 0.3819660112501051;
  std::vector<Bounds> boxes;
  boxes.reserve(regions.size());
  for (const auto& r : regions) boxes.push_back(ring_bounds(r.boundary.exterior));
  for (std::size_t a = 0; a < regions.size(); ++a) {
    for (std::size_t b = a + 1; b < regions.size(); ++b) {
      const Bounds s{std::max(boxes[a].x0, boxes[b].x0), std::min(boxes[a].x1, boxes[b].x1),
                     std::max(boxes[a].y0, boxes[b].y0), std::min(boxes[a].y1, boxes[b].y1)};
      // Neighbors sharing an edge leave a rounding-level sliver, not an overlap.
      const double scale = std::max({1.0, std::abs(s.x0), std::abs(s.x1), std::abs(s.y0),
                                     std::abs(s.y1)});
      if (s.x1 - s.x0 <= 1e-9 * scale || s.y1 - s.y0 <= 1e-9 * scale) continue;
      for (int i = 0; i < kGrid; ++i) {
        for (int j = 0; j < kGrid; ++j) {
          const WorldPoint p{s.x0 + (s.x1 - s.x0) * (i + kOffset) / kGrid,
                             s.y0 + (s.y1 - s.y0) * (j + kOffset) / kGrid};
          if (point_in_polygon(p, regions[a].boundary) &&
              point_in_polygon(p, regions[b].boundary)) {
            throw Error(ErrorCode::kGeometry, "regions '" + regions[a].name + "' and '" +
                                                  regions[b].name + "' overlap");
          }
        }
      }
    }
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

CapacityModel CapacityModel::fixed(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw Error(ErrorCode::kInvalidArgument, "gamma must be positive and finite");
  }
  CapacityModel m;
  m.kind = CapacityModelKind::kFixed;
  m.gamma = gamma;
  return m;
}

CapacityModel calibrate_fixed(std::span<const Installation> region_installations,
                              double known_capacity, std::string source) {
  if (!(known_capacity > 0.0) || !std::isfinite(known_capacity)) {
    throw Error(ErrorCode::kInvalidArgument, "known capacity must be positive");
  }
  std::vector<double> areas;
  areas.reserve(region_installations.size());
  for (const auto& i : region_installations) areas.push_back(i.area);
  const double area_sum = pairwise_sum(areas);
  if (!(area_sum > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                "calibration region '" + source + "' has no installation area");
  }
  CapacityModel m = CapacityModel::fixed(known_capacity / area_sum);
  m.calibration = {std::move(source), area_sum, known_capacity, region_installations.size()};
  return m;
}

CapacityModel fit_color_model(std::span<const CapacitySample> samples) {
  if (samples.size() < 4) {
    throw Error(ErrorCode::kInvalidArgument,
                "color model needs at least 4 samples, got " + std::to_string(samples.size()));
  }
  Eigen::Matrix4d normal = Eigen::Matrix4d::Zero();
  Eigen::Vector4d rhs = Eigen::Vector4d::Zero();
  for (const auto& s : samples) {
    if (!(s.area > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sample area must be > 0");
    const Eigen::Vector4d row(s.mean_color[0], s.mean_color[1], s.mean_color[2], 1.0);
    const double gamma = s.capacity / s.area;
    normal.noalias() += row * row.transpose();
    rhs.noalias() += gamma * row;
  }

  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(normal);
  const auto& values = eig.eigenvalues();  // ascending
  if (!(values(0) > 1e-12 * values(3))) {
    const Eigen::Vector4d dir = eig.eigenvectors().col(0);
    std::ostringstream msg;
    msg << "color model design is rank deficient; degenerate direction (w_r, w_g, w_b, b) = ("
        << dir(0) << ", " << dir(1) << ", " << dir(2) << ", " << dir(3) << ")";
    throw Error(ErrorCode::kSingular, msg.str());
  }
  const Eigen::Vector4d params = normal.ldlt().solve(rhs);

  CapacityModel m;
  m.kind = CapacityModelKind::kColorLinear;
  m.color_weights = {params(0), params(1), params(2)};
  m.intercept = params(3);
  m.calibration.samples = samples.size();
  m.calibration.source = "color samples";
  return m;
}

CapacityEstimate predict(const CapacityModel& m, const Installation& inst) {
  if (m.kind == CapacityModelKind::kFixed) return {m.gamma * inst.area, false};
  if (!inst.mean_color) {
    throw Error(ErrorCode::kInvalidArgument,
                "color model needs the mean color of installation " + feature_id(inst));
  }
  const Color& c = *inst.mean_color;
  double gamma = m.intercept;
  for (int b = 0; b < 3; ++b) gamma += m.color_weights[b] * c[b];
  if (gamma < 0.0) return {0.0, true};
  return {gamma * inst.area, false};
}

CapacityReport aggregate(std::span<const Installation> insts, std::span<const Region> regions,
                         const CapacityModel& m, const AggregateOptions& options) {
  require_disjoint(regions);
  std::set<std::string> names;
  for (const auto& r : regions) names.insert(r.name);
  for (const auto& ex : options.excluded_regions) {
    if (!names.count(ex)) {
      throw Error(ErrorCode::kNotFound, "excluded region '" + ex + "' is not a known region");
    }
  }

  CapacityReport report;
  report.per_installation.resize(insts.size());
  std::vector<int> region_of(insts.size(), -1);
  std::vector<char> clamped(insts.size(), 0);
  parallel_for(insts.size(), options.workers, [&](std::size_t i) {
    const CapacityEstimate est = predict(m, insts[i]);
    clamped[i] = est.clamped;
    int found = -1;
    for (std::size_t r = 0; r < regions.size(); ++r) {
      if (!point_in_polygon(insts[i].centroid, regions[r].boundary)) continue;
      if (found >= 0) {
        throw Error(ErrorCode::kGeometry,
                    "regions '" + regions[found].name + "' and '" + regions[r].name +
                        "' both contain the centroid of " + feature_id(insts[i]));
      }
      found = static_cast<int>(r);
    }
    region_of[i] = found;
    auto& row = report.per_installation[i];
    row.id = feature_id(insts[i]);
    row.area = insts[i].area;
    row.kw = est.kw;
    if (found >= 0) row.region = regions[found].name;
  });

  std::vector<std::vector<double>> per_region(regions.size());
  std::vector<double> unassigned;
  for (std::size_t i = 0; i < insts.size(); ++i) {
    report.clamped += clamped[i];
    if (region_of[i] < 0) {
      report.unassigned.push_back(report.per_installation[i].id);
      unassigned.push_back(report.per_installation[i].kw);
    } else {
      per_region[region_of[i]].push_back(report.per_installation[i].kw);
    }
  }
  report.unassigned_kw = pairwise_sum(unassigned);

  const std::set<std::string> excluded(options.excluded_regions.begin(),
                                       options.excluded_regions.end());
  std::vector<double> est, rep;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    RegionCapacity rc;
    rc.name = regions[r].name;
    rc.estimated_kw = pairwise_sum(per_region[r]);
    rc.reported_kw = regions[r].reported_capacity;
    rc.installations = per_region[r].size();
    rc.excluded = excluded.count(rc.name) > 0;
    if (rc.excluded) report.excluded.push_back({rc.name, "allowlisted"});
    if (rc.reported_kw) {
      report.residuals.emplace_back(rc.name, rc.estimated_kw - *rc.reported_kw);
      if (!rc.excluded) {
        est.push_back(rc.estimated_kw);
        rep.push_back(*rc.reported_kw);
      }
    }
    report.per_region.push_back(std::move(rc));
  }
  if (est.size() >= 2) report.pearson_r = pearson(est, rep);
  return report;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::kInvalidArgument, "pearson: inputs differ in length");
  }
  if (x.size() < 2) throw Error(ErrorCode::kInvalidArgument, "pearson: need at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<OutlierFlag> detect_outliers(const CapacityReport& report, double z_threshold) {
  std::vector<std::string> names;
  std::vector<double> x, y;
  for (const auto& r : report.per_region) {
    if (r.excluded || !r.reported_kw) continue;
    names.push_back(r.name);
    x.push_back(r.estimated_kw);
    y.push_back(*r.reported_kw);
  }
  const std::size_t n = x.size();
  if (n < 3) {
    throw Error(ErrorCode::kInvalidArgument,
                "outlier detection needs at least 3 regions with reported capacity, got " +
                    std::to_string(n));
  }
  const double dn = static_cast<double>(n);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= dn;
  my /= dn;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) {
    throw Error(ErrorCode::kSingular, "all regions share one estimated capacity");
  }
  const double slope = sxy / sxx;
  const double icept = my - slope * mx;
  std::vector<double> resid(n), lev(n);
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    resid[i] = y[i] - (icept + slope * x[i]);
    lev[i] = 1.0 / dn + (x[i] - mx) * (x[i] - mx) / sxx;
    sse += resid[i] * resid[i];
  }
  // Residuals at rounding level are zero, not evidence of an outlier.
  const double floor_sd = 1e-9 * std::max(std::sqrt(syy / dn), std::abs(my)) + 1e-300;
  const double dof = dn - 3.0;

  std::vector<OutlierFlag> flags;
  for (std::size_t i = 0; i < n; ++i) {
    const double one_minus_h = std::max(1.0 - lev[i], 1e-12);
    double deleted_var = 0.0;
    if (dof > 0.0) {
      deleted_var = std::max(0.0, (sse - resid[i] * resid[i] / one_minus_h) / dof);
    }
    const double sd = std::max(std::sqrt(deleted_var), floor_sd);
    const double t = resid[i] / (sd * std::sqrt(one_minus_h));
    if (std::abs(t) > z_threshold) flags.push_back({names[i], t});
  }
  return flags;
}

std::string to_json(const CapacityReport& report) {
  json insts = json::array();
  for (const auto& i : report.per_installation) {
    insts.push_back({{"id", i.id},
                     {"area_m2", i.area},
                     {"capacity_kw", i.kw},
                     {"region", i.region ? json(*i.region) : json(nullptr)}});
  }
  json regions = json::array();
  for (const auto& r : report.per_region) {
    regions.push_back({{"name", r.name},
                       {"estimated_kw", r.estimated_kw},
                       {"reported_kw", optional_number(r.reported_kw)},
                       {"installations", r.installations},
                       {"excluded", r.excluded}});
  }
  json residuals = json::array();
  for (const auto& [name, v] : report.residuals) {
    residuals.push_back({{"region", name}, {"residual_kw", v}});
  }
  json excluded = json::array();
  for (const auto& e : report.excluded) excluded.push_back({{"region", e.name}, {"reason", e.reason}});
  json j = {{"per_installation", std::move(insts)},
            {"per_region", std::move(regions)},
            {"residuals", std::move(residuals)},
            {"pearson_r", optional_number(report.pearson_r)},
            {"excluded", std::move(excluded)},
            {"unassigned", report.unassigned},
            {"unassigned_kw", report.unassigned_kw},
            {"clamped_gamma_count", report.clamped}};
  return j.dump(2);
}

std::string to_csv(const CapacityReport& report) {
  std::string out = "region,estimated_kw,reported_kw,residual,excluded\n";
  for (const auto& r : report.per_region) {
    out += csv_field(r.name);
    out += ',' + format_double(r.estimated_kw) + ',';
    if (r.reported_kw) {
      out += format_double(*r.reported_kw) + ',' + format_double(r.estimated_kw - *r.reported_kw);
    } else {
      out += ',';
    }
    out += r.excluded ? ",true\n" : ",false\n";
  }
  return out;
}

void save_capacity_model(const CapacityModel& m, const std::filesystem::path& path) {
  json j = {{"kind", m.kind == CapacityModelKind::kFixed ? "fixed" : "color_linear"},
            {"gamma", m.gamma},
            {"color_weights", m.color_weights},
            {"intercept", m.intercept},
            {"calibration",
             {{"source", m.calibration.source},
              {"area_sum", m.calibration.area_sum},
              {"known_capacity", m.calibration.known_capacity},
              {"samples", m.calibration.samples}}}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

CapacityModel load_capacity_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    const json j = json::parse(in);
    CapacityModel m;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "fixed") {
      m.kind = CapacityModelKind::kFixed;
    } else if (kind == "color_linear") {
      m.kind = CapacityModelKind::kColorLinear;
    } else {
      throw Error(ErrorCode::kFormat, "unknown capacity model kind '" + kind + "'");
    }
    m.gamma = j.at("gamma").get<double>();
    m.color_weights = j.at("color_weights").get<Color>();
    m.intercept = j.at("intercept").get<double>();
    const auto& cal = j.at("calibration");
    m.calibration = {cal.value("source", std::string()), cal.value("area_sum", 0.0),
                     cal.value("known_capacity", 0.0), cal.value("samples", std::size_t{0})};
    if (m.kind == CapacityModelKind::kFixed && !(m.gamma > 0.0)) {
      throw Error(ErrorCode::kFormat, "fixed capacity model needs gamma > 0");
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
}

std::vector<CapacitySample> load_capacity_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<CapacitySample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("mean_color").get<Color>(), j.at("area_m2").get<double>(),
                     j.at("capacity_kw").get<double>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kFormat,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace solarmap
