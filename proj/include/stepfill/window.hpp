#pragma once

#include <array>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "stepfill/core.hpp"

// The multi-timescale context window around a target hour t: a 9 x 23 grid
// of hour offsets (rows, -4..+4) by day offsets (columns, dense -7..+7 plus
// weekly taps at +/-14, +/-21, +/-28, +/-35), with the center cell (0, 0)
// excluded. 9 * 23 - 1 = 206 cells.

namespace stepfill {

constexpr int kWindowHourRadius = 4;
constexpr int kWindowRows = 2 * kWindowHourRadius + 1;        // 9
constexpr int kWindowCols = 23;
constexpr int kWindowCells = kWindowRows * kWindowCols - 1;   // 206
constexpr int kCenterRow = kWindowHourRadius;                 // 4
constexpr int kCenterCol = 11;                                // day offset 0

constexpr std::array<int, kWindowCols> kDayOffsets = {
    -35, -28, -21, -14, -7, -6, -5, -4, -3, -2, -1, 0,
    1,   2,   3,   4,   5,  6,  7,  14, 21, 28, 35};

struct WindowCell {
  int row = 0;                    // 0..8, hour offset = row - 4
  int col = 0;                    // 0..22, day offset = kDayOffsets[col]
  std::int64_t hour_index = -1;   // absolute index, -1 if out of range
};

// Hour offset of a cell relative to the target: 24 * day + hour.
inline std::int64_t cell_offset_hours(int row, int col) {
  return 24 * static_cast<std::int64_t>(kDayOffsets[col]) +
         (row - kCenterRow);
}

// All 206 non-center cells in row-major order (rows outer, columns inner),
// with hour_index = -1 for cells falling outside [0, series_len).
std::vector<WindowCell> context_window(std::int64_t t, std::int64_t series_len);

// Flat index 0..205 of a non-center cell, row-major with the center skipped.
int relative_index(int row, int col);

// Inverse of relative_index.
WindowCell cell_of_relative_index(int index);

// Attention mask over the window: 1 iff the cell is in range, is not the
// center, its block is observed, and it is not held out.
std::vector<int> attention_mask(const ParticipantSeries& series, std::int64_t t,
                                const std::unordered_set<std::int64_t>& holdout);

}  // namespace stepfill
