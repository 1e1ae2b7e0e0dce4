// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic signal primitives shared by the model, the discriminators and
// the evaluation tooling. Everything here is a pure function of its inputs.
#pragma once

#include <string>
#include <vector>

#include "moetts/common.hpp"
#include "moetts/tensor.hpp"

namespace moetts::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 22050;

  double seconds() const { return double(samples.size()) / sample_rate; }
  void validate() const;  // finite samples, positive rate
};

enum class WindowKind { Hann, Rectangular };

struct StftConfig {
  int fft_size = 1024;
  int hop_length = 256;
  int win_length = 1024;
  WindowKind window = WindowKind::Hann;

  void validate() const;           // hop <= win <= fft
  void validate_for_istft() const; // additionally: COLA at this hop, hop <= fft/2
  int bins() const { return fft_size / 2 + 1; }
};

// Centered analysis: the signal is reflection-padded by fft_size/2 on both
// sides, frame t starts at t*hop in the padded signal. Frame count for a
// length-L input is floor(L/hop) + 1.
int stft_frame_count(size_t num_samples, const StftConfig& cfg);

enum class SpecKind { Complex, Magnitude, LogMagnitude, Mel };

struct Spectrogram {
  SpecKind kind = SpecKind::Complex;
  StftConfig cfg;
  Mat re;  // Complex: real part; otherwise the (non-negative) values
  Mat im;  // Complex only

  int bins() const { return re.rows; }
  int frames() const { return re.cols; }
};

// Periodic window of win_length, zero-centered inside an fft_size frame.
std::vector<double> make_window(WindowKind kind, int win_length);

Spectrogram stft(const Waveform& w, const StftConfig& cfg);
Spectrogram magnitude(const Spectrogram& complex_spec);
// |stft| in one call.
Spectrogram linear_spectrogram(const Waveform& w, const StftConfig& cfg);

// Inverse with window-squared overlap-add normalization. Output is exactly
// frames * hop samples; sample j of the output corresponds to sample j of the
// analyzed signal.
Waveform istft(const Spectrogram& complex_spec, const StftConfig& cfg,
               int sample_rate = 22050);

// Triangular mel filterbank, HTK mel scale; rows sum over linear bins.
Mat mel_filterbank(int fft_size, int sample_rate, int n_mels, double fmin, double fmax);
Spectrogram mel_project(const Spectrogram& mag_spec, int sample_rate, int n_mels,
                        double fmin, double fmax);

// FFT of real input; re/im have n/2+1 entries. irfft includes the 1/n factor
// so irfft(rfft(x)) == x. Thread-safe.
void rfft(const double* in, int n, double* re, double* im);
void irfft(const double* re, const double* im, int n, double* out);

// ---- differentiable counterparts used by the training graph ----

// wav is [1 x L]; output [bins x frames] magnitudes.
ad::Node* stft_magnitude_node(ad::Tape& t, ad::Node* wav, const StftConfig& cfg);
// re/im are [bins x frames]; output [1 x frames*hop]. Matches istft() exactly.
ad::Node* istft_node(ad::Tape& t, ad::Node* re, ad::Node* im, const StftConfig& cfg);

}  // namespace moetts::dsp
