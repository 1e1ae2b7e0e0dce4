// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0
//
// Near-perfect-reconstruction pseudo-QMF bank: cosine-modulated filters from a
// Kaiser-windowed lowpass prototype. Analysis/synthesis use centered
// correlation, so the round trip has no residual delay.
#pragma once

#include <string>

#include "moetts/common.hpp"
#include "moetts/dsp.hpp"
#include "moetts/tensor.hpp"

namespace moetts::dsp {

struct PqmfConfig {
  int num_bands = 16;
  int taps = 192;            // prototype order; filter length is taps + 1
  double cutoff_ratio = 0.0; // in Nyquist units; 0 = optimize at construction
  double kaiser_beta = 10.0;
};

class PqmfBank {
 public:
  static PqmfBank design(const PqmfConfig& cfg);

  // Input is zero-padded up to a multiple of num_bands; output is
  // num_bands x (padded_len / num_bands), critically decimated.
  Mat analysis(const std::vector<double>& x) const;
  // Exact shape counterpart; output length = bands.cols * num_bands.
  std::vector<double> synthesis(const Mat& bands) const;

  // Differentiable analysis for the sub-band discriminator (linear map).
  ad::Node* analysis_node(ad::Tape& t, ad::Node* wav) const;

  // Raw little-endian doubles: analysis filters then synthesis filters,
  // each num_bands x (taps+1) row-major. For golden-vector tests.
  void save_coefficients(const std::string& path) const;

  int num_bands() const { return cfg_.num_bands; }
  int taps() const { return cfg_.taps; }
  double cutoff_ratio() const { return cfg_.cutoff_ratio; }
  const Mat& analysis_filters() const { return analysis_; }
  const Mat& synthesis_filters() const { return synthesis_; }

 private:
  PqmfConfig cfg_;
  Mat analysis_;   // num_bands x (taps+1)
  Mat synthesis_;  // num_bands x (taps+1)
};

}  // namespace moetts::dsp
