// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0
//
// Monotonic alignment search: dynamic program over a (text_len x frames)
// log-likelihood matrix, maximizing the total aligned score among monotone
// surjective alignments. No gradients flow through this.
#pragma once

#include <vector>

#include "moetts/common.hpp"

namespace moetts::model {

struct DurationSequence {
  std::vector<int> d;  // frames per phoneme, all >= 1

  int total() const {
    int s = 0;
    for (int v : d) s += v;
    return s;
  }
  void validate() const {
    check(!d.empty(), "duration", "empty duration sequence");
    for (int v : d) check(v >= 1, "duration", "duration entries must be >= 1");
  }
};

// Compact alignment: each frame is assigned exactly one phoneme index, and
// assignments are monotone non-decreasing with full row coverage.
struct AlignmentMatrix {
  std::vector<int> frame_to_phoneme;
  int text_len = 0;

  int frames() const { return int(frame_to_phoneme.size()); }
  bool valid() const;
  // Dense 0/1 matrix (text_len x frames), one 1 per column.
  Mat to_binary() const;
};

// log_lik is text_len x frames. Requires frames >= text_len. Ties prefer
// keeping the frame on the later phoneme.
AlignmentMatrix mas_align(const Mat& log_lik);

double alignment_score(const Mat& log_lik, const AlignmentMatrix& a);

DurationSequence durations_from_alignment(const AlignmentMatrix& a);
AlignmentMatrix alignment_from_durations(const DurationSequence& d);

}  // namespace moetts::model
