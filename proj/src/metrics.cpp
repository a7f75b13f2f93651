#include "voxseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace voxseg {
namespace {

struct Point {
  std::int64_t x, y, z;
};

// foreground voxels with at least one 6-neighbor background face; volume
// edges count as background
std::vector<Point> boundary_voxels(const Tensor<std::uint8_t>& mask) {
  std::vector<Point> out;
  const std::int64_t nx = mask.shape[0], ny = mask.shape[1], nz = mask.shape[2];
  auto fg = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    if (x < 0 || x >= nx || y < 0 || y >= ny || z < 0 || z >= nz) return false;
    return mask.at3(x, y, z) != 0;
  };
  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        if (!mask.at3(x, y, z)) continue;
        if (!fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) || !fg(x, y + 1, z) ||
            !fg(x, y, z - 1) || !fg(x, y, z + 1))
          out.push_back({x, y, z});
      }
  return out;
}

// nearest-rank percentile of directed nearest-neighbor distances from a to b
double directed_p95(const std::vector<Point>& a, const std::vector<Point>& b,
                    const std::array<double, 3>& sp) {
  std::vector<double> dists;
  dists.reserve(a.size());
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      double dx = (p.x - q.x) * sp[0];
      double dy = (p.y - q.y) * sp[1];
      double dz = (p.z - q.z) * sp[2];
      double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) best = d2;
    }
    dists.push_back(std::sqrt(best));
  }
  std::sort(dists.begin(), dists.end());
  std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(dists.size())));
  if (rank == 0) rank = 1;
  return dists[rank - 1];
}

}  // namespace

double dice_score(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& gt,
                  double both_empty_value) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("dice_score: shape mismatch");
  std::int64_t inter = 0, np = 0, ng = 0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    bool p = pred[i] != 0, g = gt[i] != 0;
    inter += (p && g);
    np += p;
    ng += g;
  }
  if (np + ng == 0) return both_empty_value;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

double hd95(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& gt,
            const std::array<double, 3>& spacing, const Hd95Options& opts) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("hd95: shape mismatch");
  auto bp = boundary_voxels(pred);
  auto bg = boundary_voxels(gt);
  if (bp.empty() && bg.empty()) return 0.0;
  if (bp.empty() || bg.empty()) {
    if (opts.one_empty_sentinel) return *opts.one_empty_sentinel;
    double dx = (pred.shape[0] - 1) * spacing[0];
    double dy = (pred.shape[1] - 1) * spacing[1];
    double dz = (pred.shape[2] - 1) * spacing[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return std::max(directed_p95(bp, bg, spacing), directed_p95(bg, bp, spacing));
}

CaseMetrics evaluate_case(const std::string& case_id, const LabelMap& pred, const LabelMap& gt,
                          const Hd95Options& opts) {
  if (pred.labels.shape != gt.labels.shape)
    throw std::invalid_argument("evaluate_case: prediction/ground-truth shape mismatch");
  auto pr = labels_to_regions(pred);
  auto gr = labels_to_regions(gt);
  const Tensor<std::uint8_t>* pm[kNumRegions] = {&pr.et, &pr.tc, &pr.wt};
  const Tensor<std::uint8_t>* gm[kNumRegions] = {&gr.et, &gr.tc, &gr.wt};
  CaseMetrics cm;
  cm.case_id = case_id;
  for (int r = 0; r < kNumRegions; ++r) {
    cm.dice[static_cast<std::size_t>(r)] = dice_score(*pm[r], *gm[r]);
    cm.hd95[static_cast<std::size_t>(r)] = hd95(*pm[r], *gm[r], gt.geometry.spacing, opts);
  }
  return cm;
}

EvalReport aggregate_report(const std::vector<CaseMetrics>& cases) {
  if (cases.empty()) throw std::invalid_argument("aggregate_report: empty case list");
  EvalReport r;
  r.case_count = cases.size();
  for (const auto& c : cases)
    for (int i = 0; i < kNumRegions; ++i) {
      r.dice_mean[static_cast<std::size_t>(i)] += c.dice[static_cast<std::size_t>(i)];
      r.hd95_mean[static_cast<std::size_t>(i)] += c.hd95[static_cast<std::size_t>(i)];
    }
  for (int i = 0; i < kNumRegions; ++i) {
    r.dice_mean[static_cast<std::size_t>(i)] /= static_cast<double>(cases.size());
    r.hd95_mean[static_cast<std::size_t>(i)] /= static_cast<double>(cases.size());
    r.dice_overall += r.dice_mean[static_cast<std::size_t>(i)] / kNumRegions;
    r.hd95_overall += r.hd95_mean[static_cast<std::size_t>(i)] / kNumRegions;
  }
  return r;
}

std::string metrics_csv(const std::vector<CaseMetrics>& cases) {
  std::ostringstream os;
  os << "case_id,dice_et,dice_tc,dice_wt,hd95_et,hd95_tc,hd95_wt\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& c : cases) {
    os << c.case_id;
    for (double d : c.dice) os << ',' << d;
    for (double d : c.hd95) os << ',' << d;
    os << '\n';
  }
  return os.str();
}

std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ostringstream os;
  os.precision(3);
  os << std::fixed;
  os << "run,dice_et,dice_tc,dice_wt,dice_mean,hd95_et,hd95_tc,hd95_wt,hd95_mean\n";
  for (const auto& [name, r] : rows) {
    os << name;
    for (double d : r.dice_mean) os << ',' << d;
    os << ',' << r.dice_overall;
    for (double d : r.hd95_mean) os << ',' << d;
    os << ',' << r.hd95_overall << '\n';
  }
  return os.str();
}

}  // namespace voxseg
