#include "stepfill/window.hpp"

#include <stdexcept>

namespace stepfill {

std::vector<WindowCell> context_window(std::int64_t t, std::int64_t series_len) {
  if (t < 0 || t >= series_len) {
    throw std::invalid_argument("context_window: target index out of range");
  }
  std::vector<WindowCell> cells;
  cells.reserve(kWindowCells);
  for (int row = 0; row < kWindowRows; ++row) {
    for (int col = 0; col < kWindowCols; ++col) {
      if (row == kCenterRow && col == kCenterCol) continue;
      WindowCell c;
      c.row = row;
      c.col = col;
      std::int64_t idx = t + cell_offset_hours(row, col);
      c.hour_index = (idx >= 0 && idx < series_len) ? idx : -1;
      cells.push_back(c);
    }
  }
  return cells;
}

int relative_index(int row, int col) {
  if (row < 0 || row >= kWindowRows || col < 0 || col >= kWindowCols) {
    throw std::invalid_argument("relative_index: cell out of grid");
  }
  if (row == kCenterRow && col == kCenterCol) {
    throw std::invalid_argument("relative_index: center cell has no index");
  }
  int flat = row * kWindowCols + col;
  int center_flat = kCenterRow * kWindowCols + kCenterCol;
  return flat < center_flat ? flat : flat - 1;
}

WindowCell cell_of_relative_index(int index) {
  if (index < 0 || index >= kWindowCells) {
    throw std::invalid_argument("cell_of_relative_index: index out of range");
  }
  int center_flat = kCenterRow * kWindowCols + kCenterCol;
  int flat = index < center_flat ? index : index + 1;
  WindowCell c;
  c.row = flat / kWindowCols;
  c.col = flat % kWindowCols;
  return c;
}

std::vector<int> attention_mask(const ParticipantSeries& series, std::int64_t t,
                                const std::unordered_set<std::int64_t>& holdout) {
  auto cells = context_window(t, series.size());
  std::vector<int> mask(cells.size(), 0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::int64_t idx = cells[i].hour_index;
    if (idx < 0) continue;
    if (!response_indicator(series.blocks[idx])) continue;
    if (holdout.count(idx)) continue;
    mask[i] = 1;
  }
  return mask;
}

}  // namespace stepfill
