// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_DELAY_GRID_H_
#define OMNI_DELAY_GRID_H_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "omni/vocab.h"

namespace omni {

// Aligned token matrix: row 0 holds text ids, row k audio layer k ids (global
// ids). Storage is row-major and contiguous.
class TokenGrid {
 public:
  TokenGrid() = default;
  TokenGrid(int rows, int length, TokenId fill = 0);

  static TokenGrid from_rows(const std::vector<std::vector<TokenId>>& rows);

  int rows() const { return rows_; }
  int length() const { return length_; }

  TokenId at(int row, int t) const { return cells_[index(row, t)]; }
  TokenId& at(int row, int t) { return cells_[index(row, t)]; }

  std::span<const TokenId> row(int r) const {
    return {cells_.data() + static_cast<size_t>(r) * length_,
            static_cast<size_t>(length_)};
  }
  std::span<TokenId> row(int r) {
    return {cells_.data() + static_cast<size_t>(r) * length_,
            static_cast<size_t>(length_)};
  }

  std::vector<std::vector<TokenId>> to_rows() const;

  friend bool operator==(const TokenGrid&, const TokenGrid&) = default;

 private:
  size_t index(int row, int t) const {
    return static_cast<size_t>(row) * length_ + t;
  }

  int rows_ = 0;
  int length_ = 0;
  std::vector<TokenId> cells_;
};

// Throws InvalidArgument unless the grid has layout.row_count() rows and every
// cell of row k belongs to layer k.
void validate_grid(const TokenGrid& grid, const VocabLayout& layout);

// A TokenGrid with row k shifted right by k columns. Length is T + L where L is
// the audio layer count; the shifted-out cells hold the row's PAD token. May
// hold an inconsistent pad pattern (e.g. when built from a raw stream); that is
// detected by undo_delay() / validate_delayed().
class DelayedGrid {
 public:
  DelayedGrid() = default;
  // raw must have layout.row_count() rows of a common length >= L.
  DelayedGrid(const VocabLayout& layout, TokenGrid raw);

  const VocabLayout& layout() const { return layout_; }
  int rows() const { return cells_.rows(); }
  int length() const { return cells_.length(); }
  int source_length() const { return cells_.length() - (cells_.rows() - 1); }
  static constexpr int delay_of_row(int row) { return row; }

  TokenId at(int row, int col) const { return cells_.at(row, col); }
  std::span<const TokenId> row(int r) const { return cells_.row(r); }
  const TokenGrid& cells() const { return cells_; }

  friend bool operator==(const DelayedGrid&, const DelayedGrid&) = default;

 private:
  VocabLayout layout_;
  TokenGrid cells_;
};

DelayedGrid apply_delay(const TokenGrid& grid, const VocabLayout& layout);

// Throws InvalidArgument if the pad pattern disagrees with the row delays or a
// cell is outside its row's layer.
void validate_delayed(const DelayedGrid& delayed);

TokenGrid undo_delay(const DelayedGrid& delayed);

// Column t of the delayed grid: the tokens emitted by one generation step.
std::vector<TokenId> step_slice(const DelayedGrid& delayed, int t);

// Per-cell loss mask, row-major rows() x length(); true on non-PAD cells.
struct CellMask {
  int rows = 0;
  int length = 0;
  std::vector<uint8_t> cells;

  bool at(int row, int col) const {
    return cells[static_cast<size_t>(row) * length + col] != 0;
  }
  int64_t count() const;
};

CellMask mask_targets(const DelayedGrid& delayed);

// Binary grid file: "OMG1", u32 version, u64 layout hash, u32 T, then rows x T
// little-endian u32 ids, row-major.
inline constexpr uint32_t kGridFormatVersion = 1;
void write_grid(std::ostream& out, const TokenGrid& grid,
                const VocabLayout& layout);
TokenGrid read_grid(std::istream& in, const VocabLayout& layout);

// JSONL debug form: {"rows": [[...], ...]} on one line.
std::string grid_to_json_line(const TokenGrid& grid);
TokenGrid grid_from_json_line(const std::string& line);

}  // namespace omni

#endif  // OMNI_DELAY_GRID_H_
