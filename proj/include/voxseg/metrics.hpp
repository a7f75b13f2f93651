#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

inline constexpr int kNumRegions = 3;
inline constexpr const char* kRegionNames[kNumRegions] = {"et", "tc", "wt"};

// 2|P∩G| / (|P|+|G|); both masks empty -> 1.0 (challenge custom,
// configurable)
double dice_score(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& gt,
                  double both_empty_value = 1.0);

struct Hd95Options {
  // when exactly one mask is empty: return the image diagonal in mm unless a
  // fixed sentinel is configured
  std::optional<double> one_empty_sentinel;
};

// Symmetric 95th-percentile surface distance in mm. Boundary voxels are
// foreground voxels with a 6-neighbor background face (or a volume edge);
// the percentile is nearest-rank over each directed distance list. Both
// empty -> 0.
double hd95(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& gt,
            const std::array<double, 3>& spacing, const Hd95Options& opts = {});

struct CaseMetrics {
  std::string case_id;
  std::array<double, kNumRegions> dice{};
  std::array<double, kNumRegions> hd95{};
};

struct EvalReport {
  std::array<double, kNumRegions> dice_mean{};
  double dice_overall = 0;  // mean of the three region means
  std::array<double, kNumRegions> hd95_mean{};
  double hd95_overall = 0;
  std::size_t case_count = 0;
};

EvalReport aggregate_report(const std::vector<CaseMetrics>& cases);

CaseMetrics evaluate_case(const std::string& case_id, const LabelMap& pred, const LabelMap& gt,
                          const Hd95Options& opts = {});

std::string metrics_csv(const std::vector<CaseMetrics>& cases);

// Table-style summary: one row of region means plus the Mean column, for
// dice and hd95.
std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace voxseg
