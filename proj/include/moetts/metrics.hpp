// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "moetts/dsp.hpp"

namespace moetts::dsp {

struct MrStftConfig {
  std::vector<StftConfig> resolutions;
  double log_eps = 1e-7;
  // The customary three-resolution set: fft 512/1024/2048, hop 50/120/240,
  // win 240/600/1200.
  static MrStftConfig defaults();
};

struct MrStftTerms {
  double spectral_convergence = 0.0;
  double log_magnitude = 0.0;
};

// Per-resolution terms; reference magnitudes come from `ref`.
MrStftTerms mr_stft_terms(const Waveform& est, const Waveform& ref,
                          const StftConfig& cfg, double log_eps);
// Mean over resolutions of (spectral convergence + log-magnitude L1).
double multi_res_stft_loss(const Waveform& est, const Waveform& ref,
                           const MrStftConfig& cfg = MrStftConfig::defaults());

// Mel cepstra (DCT-II of the log mel spectrum), coefficient 0 dropped.
// Returns frames x n_coeffs.
Mat mel_cepstra(const Waveform& w, const StftConfig& cfg, int n_mels = 40,
                int n_coeffs = 13);
// Mean over frames of (10/ln10) * sqrt(2 * sum_d (a_d - b_d)^2), in dB.
double mcd(const Mat& cep_a, const Mat& cep_b);

struct PeriodicityConfig {
  int frame_length = 1024;
  int hop = 256;
  double f0_min = 50.0;   // Hz
  double f0_max = 550.0;  // Hz
  double voicing_threshold = 0.3;
  double silence_rms = 1e-4;
};

struct PeriodicityResult {
  std::vector<double> periodicity;  // in [0, 1]
  std::vector<bool> voiced;
};

// Normalized-autocorrelation peak within the F0 search range, per frame.
// Silent frames get periodicity 0 and unvoiced, never NaN.
PeriodicityResult periodicity_and_voicing(const Waveform& w,
                                          const PeriodicityConfig& cfg = {});

// F1 of the voiced class; 1.0 when both sequences are all-unvoiced.
double vuv_f1(const std::vector<bool>& pred, const std::vector<bool>& truth);

}  // namespace moetts::dsp
