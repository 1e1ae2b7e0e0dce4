// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0

#include "moetts/mas.hpp"

#include <limits>

namespace moetts::model {

bool AlignmentMatrix::valid() const {
  if (text_len < 1 || frame_to_phoneme.empty()) return false;
  if (frame_to_phoneme.front() != 0) return false;
  if (frame_to_phoneme.back() != text_len - 1) return false;
  for (size_t i = 1; i < frame_to_phoneme.size(); ++i) {
    int step = frame_to_phoneme[i] - frame_to_phoneme[i - 1];
    if (step != 0 && step != 1) return false;  // monotone, no skipped phoneme
  }
  return true;
}

Mat AlignmentMatrix::to_binary() const {
  Mat m(text_len, frames());
  for (int t = 0; t < frames(); ++t) m.at(frame_to_phoneme[size_t(t)], t) = 1.0;
  return m;
}

AlignmentMatrix mas_align(const Mat& log_lik) {
  int n = log_lik.rows, T = log_lik.cols;
  check(n >= 1 && T >= 1, "mas", "empty log-likelihood matrix");
  check(T >= n, "mas",
        "no valid alignment: frames (" + std::to_string(T) + ") < text_len (" +
            std::to_string(n) + ")");
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  // q(i, t): best score with frame t assigned to phoneme i.
  Mat q(n, T, kNegInf);
  q.at(0, 0) = log_lik.at(0, 0);
  for (int t = 1; t < T; ++t) {
    int lo = std::max(0, n - (T - t));  // enough frames must remain
    int hi = std::min(n - 1, t);
    for (int i = lo; i <= hi; ++i) {
      double stay = q.at(i, t - 1);
      double advance = i > 0 ? q.at(i - 1, t - 1) : kNegInf;
      double best = std::max(stay, advance);
      q.at(i, t) = best == kNegInf ? kNegInf : log_lik.at(i, t) + best;
    }
  }
  AlignmentMatrix a;
  a.text_len = n;
  a.frame_to_phoneme.assign(size_t(T), 0);
  int i = n - 1;
  for (int t = T - 1; t >= 0; --t) {
    a.frame_to_phoneme[size_t(t)] = i;
    if (t == 0) break;
    double stay = q.at(i, t - 1);
    double advance = i > 0 ? q.at(i - 1, t - 1) : kNegInf;
    // Tie rule: keep the frame on the later phoneme (extend the newer segment).
    if (i > 0 && advance > stay) --i;
  }
  return a;
}

double alignment_score(const Mat& log_lik, const AlignmentMatrix& a) {
  check(a.frames() == log_lik.cols && a.text_len == log_lik.rows, "mas",
        "alignment does not match matrix shape");
  double s = 0.0;
  for (int t = 0; t < a.frames(); ++t)
    s += log_lik.at(a.frame_to_phoneme[size_t(t)], t);
  return s;
}

DurationSequence durations_from_alignment(const AlignmentMatrix& a) {
  check(a.valid(), "mas", "invalid alignment matrix");
  DurationSequence d;
  d.d.assign(size_t(a.text_len), 0);
  for (int t = 0; t < a.frames(); ++t) ++d.d[size_t(a.frame_to_phoneme[size_t(t)])];
  return d;
}

AlignmentMatrix alignment_from_durations(const DurationSequence& d) {
  d.validate();
  AlignmentMatrix a;
  a.text_len = int(d.d.size());
  for (int i = 0; i < a.text_len; ++i)
    for (int k = 0; k < d.d[size_t(i)]; ++k) a.frame_to_phoneme.push_back(i);
  return a;
}

}  // namespace moetts::model
