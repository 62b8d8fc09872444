// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/delay_grid.h"

#include <gtest/gtest.h>

#include <sstream>

#include "omni/error.h"
#include "omni/rng.h"

namespace omni {
namespace {

TokenGrid random_grid(const VocabLayout& v, int length, Rng& rng) {
  TokenGrid g(v.row_count(), length);
  for (int r = 0; r < v.row_count(); ++r) {
    for (int t = 0; t < length; ++t) {
      g.at(r, t) = global_id(v, r, static_cast<int32_t>(rng.below(v.region_width(r))));
    }
  }
  return g;
}

TEST(DelayGridTest, RowKShiftsByK) {
  const VocabLayout v = desk_layout();
  Rng rng(1);
  const TokenGrid g = random_grid(v, 5, rng);
  const DelayedGrid d = apply_delay(g, v);
  ASSERT_EQ(d.length(), 5 + 7);
  EXPECT_EQ(d.source_length(), 5);
  for (int r = 0; r < v.row_count(); ++r) {
    for (int c = 0; c < d.length(); ++c) {
      const int src = c - r;
      const TokenId want = src >= 0 && src < 5 ? g.at(r, src) : pad_id(v, r);
      ASSERT_EQ(d.at(r, c), want) << "row " << r << " col " << c;
    }
  }
}

TEST(DelayGridTest, RandomRoundTrip) {
  const VocabLayout v = desk_layout();
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const TokenGrid g = random_grid(v, static_cast<int>(rng.range(0, 64)), rng);
    ASSERT_EQ(undo_delay(apply_delay(g, v)), g);
  }
}

TEST(DelayGridTest, ExhaustiveTinyLayout) {
  const VocabLayout v = make_layout(24, 2, 8, 5);
  for (int T = 0; T <= 3; ++T) {
    const int cells = v.row_count() * T;
    for (uint32_t bits = 0; bits < (1u << cells); ++bits) {
      TokenGrid g(v.row_count(), T);
      for (int i = 0; i < cells; ++i) {
        g.at(i / T, i % T) = global_id(v, i / T, (bits >> i) & 1);
      }
      ASSERT_EQ(undo_delay(apply_delay(g, v)), g);
    }
  }
}

TEST(DelayGridTest, EmptyGridKeepsPadding) {
  const VocabLayout v = desk_layout();
  const DelayedGrid d = apply_delay(TokenGrid(v.row_count(), 0), v);
  EXPECT_EQ(d.length(), 7);
  EXPECT_EQ(mask_targets(d).count(), 0);
  EXPECT_EQ(undo_delay(d).length(), 0);
}

TEST(DelayGridTest, StepSliceIsAColumn) {
  const VocabLayout v = desk_layout();
  Rng rng(3);
  const DelayedGrid d = apply_delay(random_grid(v, 4, rng), v);
  const std::vector<TokenId> s = step_slice(d, 2);
  ASSERT_EQ(s.size(), 8u);
  for (int r = 0; r < 8; ++r) EXPECT_EQ(s[r], d.at(r, 2));
  EXPECT_EQ(s[5], pad_id(v, 5));
  EXPECT_THROW(step_slice(d, d.length()), InvalidArgument);
}

TEST(DelayGridTest, MaskCoversNonPadCells) {
  const VocabLayout v = desk_layout();
  Rng rng(4);
  TokenGrid g = random_grid(v, 6, rng);
  g.at(0, 5) = pad_id(v, 0);  // an explicit pad inside the data is masked too
  const DelayedGrid d = apply_delay(g, v);
  const CellMask m = mask_targets(d);
  EXPECT_EQ(m.count(), 8 * 6 - 1);
  for (int r = 0; r < d.rows(); ++r) {
    for (int c = 0; c < d.length(); ++c) {
      EXPECT_EQ(m.at(r, c), d.at(r, c) != pad_id(v, r));
    }
  }
}

TEST(DelayGridTest, InconsistentPaddingIsRejected) {
  const VocabLayout v = desk_layout();
  Rng rng(5);
  TokenGrid raw = apply_delay(random_grid(v, 3, rng), v).cells();
  raw.at(4, 0) = global_id(v, 4, 1);  // row 4 must start with 4 pads
  const DelayedGrid bad(v, raw);
  EXPECT_THROW(validate_delayed(bad), InvalidArgument);
  EXPECT_THROW(undo_delay(bad), InvalidArgument);
}

TEST(DelayGridTest, ValidateGridChecksLayers) {
  const VocabLayout v = desk_layout();
  Rng rng(6);
  TokenGrid g = random_grid(v, 3, rng);
  EXPECT_NO_THROW(validate_grid(g, v));
  g.at(2, 1) = global_id(v, 3, 0);
  EXPECT_THROW(validate_grid(g, v), InvalidArgument);
  EXPECT_THROW(validate_grid(TokenGrid(3, 2), v), InvalidArgument);
  EXPECT_THROW(apply_delay(g, v), InvalidArgument);
}

TEST(DelayGridTest, BinaryRoundTrip) {
  const VocabLayout v = desk_layout();
  Rng rng(7);
  const TokenGrid g = random_grid(v, 9, rng);
  std::stringstream buf;
  write_grid(buf, g, v);
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 4 + 4 + 8 + 4 + 8 * 9 * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "OMG1");
  std::stringstream in(bytes);
  EXPECT_EQ(read_grid(in, v), g);
}

TEST(DelayGridTest, BinaryRejectsOtherLayoutAndTruncation) {
  const VocabLayout v = desk_layout();
  Rng rng(8);
  std::stringstream buf;
  write_grid(buf, random_grid(v, 2, rng), v);
  std::stringstream other(buf.str());
  EXPECT_THROW(read_grid(other, default_layout()), FormatError);
  std::stringstream cut(buf.str().substr(0, buf.str().size() - 3));
  EXPECT_THROW(read_grid(cut, v), FormatError);
  std::stringstream magic("XXXX" + buf.str().substr(4));
  EXPECT_THROW(read_grid(magic, v), FormatError);
}

TEST(DelayGridTest, JsonLineRoundTrip) {
  const VocabLayout v = desk_layout();
  Rng rng(9);
  const TokenGrid g = random_grid(v, 3, rng);
  const std::string line = grid_to_json_line(g);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(grid_from_json_line(line), g);
  EXPECT_THROW(grid_from_json_line("{\"rows\": [[1,2],[3]]}"), FormatError);
}

}  // namespace
}  // namespace omni
