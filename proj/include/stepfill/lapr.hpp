#pragma once

#include <array>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "stepfill/core.hpp"
#include "stepfill/nn.hpp"

// Local activity-profile representation (LAPR) and the per-participant
// context that backs it: z-normalized step rates with a day-of-week x
// hour-of-day median fill for everything that cannot be read directly
// (missing, held out, out of range, or deliberately masked).

namespace stepfill {

constexpr int kLaprRadius = 72;
static_assert(2 * kLaprRadius + 1 == kLaprLength);

// Everything derived from one participant's series given a holdout set:
// normalization statistics (holdout excluded), usability per block, and the
// fill table of z-normalized median rates per (day_of_week, hour_of_day)
// cell over all usable hours, with the participant median backing empty
// cells. Build once, share across every imputation call.
struct ParticipantContext {
  const ParticipantSeries* series = nullptr;
  std::unordered_set<std::int64_t> holdout;
  NormStats stats;
  std::vector<std::uint8_t> usable;      // observed and not held out
  std::vector<double> norm_rate;         // z(rate) where usable, else 0
  std::vector<double> norm_hr;           // z(hr) where usable with HR, else 0
  std::vector<std::uint8_t> has_hr;      // usable and HR present
  std::array<double, 168> fill_norm{};   // fill value per dow*24+hod
  int start_dow = 0;                     // calendar at block 0, for
  int start_hod = 0;                     // out-of-range extrapolation

  bool is_usable(std::int64_t t) const {
    return series->in_range(t) && usable[static_cast<std::size_t>(t)];
  }
  // Fill value for any index, in range or not (calendar extrapolated).
  double fill_at(std::int64_t t) const;
};

ParticipantContext build_context(const ParticipantSeries& series,
                                 const std::vector<std::int64_t>& holdout);

struct Lapr {
  std::array<double, kLaprLength> values{};
  std::array<std::uint8_t, kLaprLength> fill_mask{};  // 1 where filled
};

// The 145-hour profile centered at `center`. The center itself is always
// masked to its fill value; `extra_masked` (pass -1 for none) hides one more
// position, used to keep a prediction target invisible to its own context
// features. Missing, held-out and out-of-range entries are filled too.
Lapr build_lapr(const ParticipantContext& ctx, std::int64_t center,
                std::int64_t extra_masked = -1);

}  // namespace stepfill
