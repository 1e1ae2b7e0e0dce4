// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0

#include "moetts/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace moetts::dsp {

MrStftConfig MrStftConfig::defaults() {
  MrStftConfig c;
  c.resolutions = {
      {512, 50, 240, WindowKind::Hann},
      {1024, 120, 600, WindowKind::Hann},
      {2048, 240, 1200, WindowKind::Hann},
  };
  return c;
}

MrStftTerms mr_stft_terms(const Waveform& est, const Waveform& ref,
                          const StftConfig& cfg, double log_eps) {
  check(est.samples.size() == ref.samples.size(), "mstft",
        "length mismatch: " + std::to_string(est.samples.size()) + " vs " +
            std::to_string(ref.samples.size()));
  Spectrogram me = linear_spectrogram(est, cfg);
  Spectrogram mr = linear_spectrogram(ref, cfg);
  double num = 0.0, den = 0.0, l1 = 0.0;
  for (size_t i = 0; i < me.re.d.size(); ++i) {
    double d = mr.re.d[i] - me.re.d[i];
    num += d * d;
    den += mr.re.d[i] * mr.re.d[i];
    l1 += std::abs(std::log(std::max(mr.re.d[i], log_eps)) -
                   std::log(std::max(me.re.d[i], log_eps)));
  }
  MrStftTerms t;
  t.spectral_convergence = den > 0 ? std::sqrt(num) / std::sqrt(den) : 0.0;
  t.log_magnitude = l1 / double(me.re.d.size());
  return t;
}

double multi_res_stft_loss(const Waveform& est, const Waveform& ref,
                           const MrStftConfig& cfg) {
  check(!cfg.resolutions.empty(), "mstft", "no resolutions configured");
  double total = 0.0;
  for (const auto& r : cfg.resolutions) {
    MrStftTerms t = mr_stft_terms(est, ref, r, cfg.log_eps);
    total += t.spectral_convergence + t.log_magnitude;
  }
  return total / double(cfg.resolutions.size());
}

Mat mel_cepstra(const Waveform& w, const StftConfig& cfg, int n_mels, int n_coeffs) {
  check(n_coeffs >= 1 && n_coeffs < n_mels, "mcd", "need 1 <= n_coeffs < n_mels");
  Spectrogram mag = linear_spectrogram(w, cfg);
  Spectrogram mel = mel_project(mag, w.sample_rate, n_mels, 0.0, w.sample_rate / 2.0);
  int T = mel.frames();
  Mat cep(T, n_coeffs);
  constexpr double kPi = 3.14159265358979323846;
  std::vector<double> logv(size_t(n_mels));
  for (int t = 0; t < T; ++t) {
    for (int m = 0; m < n_mels; ++m)
      logv[size_t(m)] = std::log(std::max(mel.re.at(m, t), 1e-10));
    for (int k = 1; k <= n_coeffs; ++k) {
      double s = 0.0;
      for (int m = 0; m < n_mels; ++m)
        s += logv[size_t(m)] * std::cos(kPi * k * (2 * m + 1) / (2.0 * n_mels));
      cep.at(t, k - 1) = s * std::sqrt(2.0 / n_mels);  // orthonormal DCT-II
    }
  }
  return cep;
}

double mcd(const Mat& a, const Mat& b) {
  check(a.same_shape(b), "mcd",
        "shape mismatch: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
            " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  check(a.rows >= 1, "mcd", "no frames");
  double scale = 10.0 / std::log(10.0);
  double acc = 0.0;
  for (int t = 0; t < a.rows; ++t) {
    double s = 0.0;
    for (int d = 0; d < a.cols; ++d) {
      double diff = a.at(t, d) - b.at(t, d);
      s += diff * diff;
    }
    acc += scale * std::sqrt(2.0 * s);
  }
  return acc / a.rows;
}

PeriodicityResult periodicity_and_voicing(const Waveform& w,
                                          const PeriodicityConfig& cfg) {
  w.validate();
  PeriodicityResult res;
  long L = long(w.samples.size());
  int flen = cfg.frame_length;
  if (L < flen) return res;
  int lag_min = std::max(1, int(w.sample_rate / cfg.f0_max));
  int lag_max = std::min(flen - 1, int(w.sample_rate / cfg.f0_min));
  int T = int((L - flen) / cfg.hop) + 1;
  std::vector<double> x(size_t(flen));
  for (int t = 0; t < T; ++t) {
    const double* src = w.samples.data() + size_t(t) * cfg.hop;
    double mean = 0.0;
    for (int i = 0; i < flen; ++i) mean += src[i];
    mean /= flen;
    double energy = 0.0;
    for (int i = 0; i < flen; ++i) {
      x[size_t(i)] = src[i] - mean;
      energy += x[size_t(i)] * x[size_t(i)];
    }
    double rms = std::sqrt(energy / flen);
    double best = 0.0;
    if (rms > cfg.silence_rms && lag_max > lag_min) {
      for (int lag = lag_min; lag <= lag_max; ++lag) {
        double num = 0.0, e0 = 0.0, e1 = 0.0;
        int n = flen - lag;
        for (int i = 0; i < n; ++i) {
          num += x[size_t(i)] * x[size_t(i + lag)];
          e0 += x[size_t(i)] * x[size_t(i)];
          e1 += x[size_t(i + lag)] * x[size_t(i + lag)];
        }
        double den = std::sqrt(e0 * e1);
        if (den > 1e-12) best = std::max(best, num / den);
      }
    }
    best = std::clamp(best, 0.0, 1.0);
    res.periodicity.push_back(best);
    res.voiced.push_back(rms > cfg.silence_rms && best > cfg.voicing_threshold);
  }
  return res;
}

double vuv_f1(const std::vector<bool>& pred, const std::vector<bool>& truth) {
  check(pred.size() == truth.size(), "vuv", "length mismatch");
  long tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && truth[i]) ++tp;
    else if (pred[i] && !truth[i]) ++fp;
    else if (!pred[i] && truth[i]) ++fn;
  }
  if (tp == 0 && fp == 0 && fn == 0) return 1.0;  // trivially perfect agreement
  return 2.0 * tp / double(2 * tp + fp + fn);
}

}  // namespace moetts::dsp
