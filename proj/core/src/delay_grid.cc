// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/delay_grid.h"

#include <istream>
#include <ostream>
#include <string>

#include "binary_io.h"
#include "json_io.h"
#include "omni/error.h"

namespace omni {
namespace {

bool in_layer(const VocabLayout& layout, int row, TokenId id) {
  const int32_t lo = layout.region_offset(row);
  return id >= lo && id < lo + layout.region_width(row);
}

std::string cell_name(int row, int col) {
  return "row " + std::to_string(row) + " column " + std::to_string(col);
}

}  // namespace

TokenGrid::TokenGrid(int rows, int length, TokenId fill)
    : rows_(rows), length_(length) {
  if (rows < 0 || length < 0) throw InvalidArgument("negative grid shape");
  cells_.assign(static_cast<size_t>(rows) * length, fill);
}

TokenGrid TokenGrid::from_rows(const std::vector<std::vector<TokenId>>& rows) {
  const int length = rows.empty() ? 0 : static_cast<int>(rows.front().size());
  TokenGrid grid(static_cast<int>(rows.size()), length);
  for (size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int>(rows[r].size()) != length) {
      throw InvalidArgument("grid rows have unequal lengths");
    }
    std::copy(rows[r].begin(), rows[r].end(), grid.row(static_cast<int>(r)).begin());
  }
  return grid;
}

std::vector<std::vector<TokenId>> TokenGrid::to_rows() const {
  std::vector<std::vector<TokenId>> out(rows_);
  for (int r = 0; r < rows_; ++r) out[r].assign(row(r).begin(), row(r).end());
  return out;
}

void validate_grid(const TokenGrid& grid, const VocabLayout& layout) {
  if (grid.rows() != layout.row_count()) {
    throw InvalidArgument("grid has " + std::to_string(grid.rows()) +
                          " rows, layout needs " +
                          std::to_string(layout.row_count()));
  }
  for (int r = 0; r < grid.rows(); ++r) {
    const auto row = grid.row(r);
    for (int t = 0; t < grid.length(); ++t) {
      if (!in_layer(layout, r, row[t])) {
        throw InvalidArgument("token " + std::to_string(row[t]) + " at " +
                              cell_name(r, t) + " is outside layer " +
                              std::to_string(r));
      }
    }
  }
}

DelayedGrid::DelayedGrid(const VocabLayout& layout, TokenGrid raw)
    : layout_(layout), cells_(std::move(raw)) {
  if (cells_.rows() != layout_.row_count()) {
    throw InvalidArgument("delayed grid row count does not match layout");
  }
  if (cells_.length() < layout_.audio_layer_count) {
    throw InvalidArgument("delayed grid shorter than the maximum delay");
  }
}

DelayedGrid apply_delay(const TokenGrid& grid, const VocabLayout& layout) {
  validate_grid(grid, layout);
  const int rows = layout.row_count();
  const int source = grid.length();
  TokenGrid out(rows, source + rows - 1);
  for (int r = 0; r < rows; ++r) {
    const TokenId pad = pad_id(layout, r);
    auto dst = out.row(r);
    const auto src = grid.row(r);
    std::fill(dst.begin(), dst.begin() + r, pad);
    std::copy(src.begin(), src.end(), dst.begin() + r);
    std::fill(dst.begin() + r + source, dst.end(), pad);
  }
  return DelayedGrid(layout, std::move(out));
}

void validate_delayed(const DelayedGrid& delayed) {
  const VocabLayout& layout = delayed.layout();
  const int source = delayed.source_length();
  for (int r = 0; r < delayed.rows(); ++r) {
    const TokenId pad = pad_id(layout, r);
    const auto row = delayed.row(r);
    const int shift = DelayedGrid::delay_of_row(r);
    for (int c = 0; c < delayed.length(); ++c) {
      const bool body = c >= shift && c < shift + source;
      if (!body && row[c] != pad) {
        throw InvalidArgument("expected PAD at " + cell_name(r, c));
      }
      if (body && !in_layer(layout, r, row[c])) {
        throw InvalidArgument("token outside layer at " + cell_name(r, c));
      }
    }
  }
}

TokenGrid undo_delay(const DelayedGrid& delayed) {
  validate_delayed(delayed);
  const int source = delayed.source_length();
  TokenGrid out(delayed.rows(), source);
  for (int r = 0; r < delayed.rows(); ++r) {
    const auto row = delayed.row(r);
    const int shift = DelayedGrid::delay_of_row(r);
    std::copy(row.begin() + shift, row.begin() + shift + source,
              out.row(r).begin());
  }
  return out;
}

std::vector<TokenId> step_slice(const DelayedGrid& delayed, int t) {
  if (t < 0 || t >= delayed.length()) {
    throw InvalidArgument("step " + std::to_string(t) + " out of range [0, " +
                          std::to_string(delayed.length()) + ")");
  }
  std::vector<TokenId> column(delayed.rows());
  for (int r = 0; r < delayed.rows(); ++r) column[r] = delayed.at(r, t);
  return column;
}

int64_t CellMask::count() const {
  int64_t n = 0;
  for (uint8_t c : cells) n += c;
  return n;
}

CellMask mask_targets(const DelayedGrid& delayed) {
  CellMask mask{delayed.rows(), delayed.length(), {}};
  mask.cells.resize(static_cast<size_t>(mask.rows) * mask.length);
  for (int r = 0; r < delayed.rows(); ++r) {
    const TokenId pad = pad_id(delayed.layout(), r);
    const auto row = delayed.row(r);
    for (int c = 0; c < delayed.length(); ++c) {
      mask.cells[static_cast<size_t>(r) * mask.length + c] = row[c] != pad;
    }
  }
  return mask;
}

void write_grid(std::ostream& out, const TokenGrid& grid,
                const VocabLayout& layout) {
  validate_grid(grid, layout);
  io::put_magic(out, "OMG1");
  io::put_le<uint32_t>(out, kGridFormatVersion);
  io::put_le<uint64_t>(out, layout_hash(layout));
  io::put_le<uint32_t>(out, static_cast<uint32_t>(grid.length()));
  for (int r = 0; r < grid.rows(); ++r) {
    for (TokenId id : grid.row(r)) io::put_le<uint32_t>(out, static_cast<uint32_t>(id));
  }
  if (!out) throw RuntimeFailure("failed writing grid");
}

TokenGrid read_grid(std::istream& in, const VocabLayout& layout) {
  io::expect_magic(in, "OMG1", "grid file");
  const auto version = io::get_le<uint32_t>(in, "grid version");
  if (version != kGridFormatVersion) {
    throw FormatError("unsupported grid version " + std::to_string(version));
  }
  if (io::get_le<uint64_t>(in, "grid layout hash") != layout_hash(layout)) {
    throw FormatError("grid layout hash does not match");
  }
  const auto length = io::get_le<uint32_t>(in, "grid length");
  if (length > (1u << 24)) throw FormatError("grid length implausibly large");
  TokenGrid grid(layout.row_count(), static_cast<int>(length));
  for (int r = 0; r < grid.rows(); ++r) {
    for (auto& id : grid.row(r)) {
      id = static_cast<TokenId>(io::get_le<uint32_t>(in, "grid cells"));
    }
  }
  try {
    validate_grid(grid, layout);
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  return grid;
}

std::string grid_to_json_line(const TokenGrid& grid) {
  return Json{{"rows", grid.to_rows()}}.dump();
}

TokenGrid grid_from_json_line(const std::string& line) {
  try {
    const Json j = Json::parse(line);
    return TokenGrid::from_rows(j.at("rows").get<std::vector<std::vector<TokenId>>>());
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad grid json: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("bad grid json: ") + e.what());
  }
}

}  // namespace omni
