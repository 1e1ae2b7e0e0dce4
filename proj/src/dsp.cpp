// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0

#include "moetts/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

namespace moetts::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

// FFTW's planner is not thread-safe; plans are created once under a lock and
// then executed through the new-array interface, which is.
struct FftPlans {
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;
  int n = 0;
};

FftPlans& plans_for(int n) {
  static std::mutex mu;
  static std::map<int, FftPlans> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  FftPlans p;
  p.n = n;
  std::vector<double> in(n);
  std::vector<fftw_complex> out(n / 2 + 1);
  unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  p.r2c = fftw_plan_dft_r2c_1d(n, in.data(), out.data(), flags);
  p.c2r = fftw_plan_dft_c2r_1d(n, out.data(), in.data(), flags);
  check(p.r2c && p.c2r, "fft", "plan creation failed for n=" + std::to_string(n));
  return cache.emplace(n, p).first->second;
}

}  // namespace

void rfft(const double* in, int n, double* re, double* im) {
  FftPlans& p = plans_for(n);
  std::vector<double> buf(in, in + n);
  std::vector<fftw_complex> out(size_t(n / 2 + 1));
  fftw_execute_dft_r2c(p.r2c, buf.data(), out.data());
  for (int k = 0; k <= n / 2; ++k) {
    re[k] = out[k][0];
    im[k] = out[k][1];
  }
}

void irfft(const double* re, const double* im, int n, double* out) {
  FftPlans& p = plans_for(n);
  std::vector<fftw_complex> buf(size_t(n / 2 + 1));
  for (int k = 0; k <= n / 2; ++k) {
    buf[k][0] = re[k];
    buf[k][1] = im[k];
  }
  fftw_execute_dft_c2r(p.c2r, buf.data(), out);
  double inv = 1.0 / n;
  for (int i = 0; i < n; ++i) out[i] *= inv;
}

void Waveform::validate() const {
  check(sample_rate > 0, "waveform", "sample_rate must be positive");
  for (double v : samples)
    check(std::isfinite(v), "waveform", "non-finite sample");
}

void StftConfig::validate() const {
  check(fft_size > 0 && hop_length > 0 && win_length > 0, "stft_config",
        "sizes must be positive");
  check(hop_length <= win_length && win_length <= fft_size, "stft_config",
        "require hop <= win <= fft");
}

std::vector<double> make_window(WindowKind kind, int win_length) {
  std::vector<double> w(size_t(win_length), 1.0);
  if (kind == WindowKind::Hann) {
    for (int i = 0; i < win_length; ++i)
      w[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / win_length));
  }
  return w;
}

namespace {

// Steady-state squared-window overlap-add: for a window train at stride hop,
// the sum at position p is the sum of w^2 over the residue class p mod hop.
bool cola_holds(const StftConfig& cfg) {
  auto w = make_window(cfg.window, cfg.win_length);
  int hop = cfg.hop_length;
  std::vector<double> acc(size_t(hop), 0.0);
  for (int i = 0; i < cfg.win_length; ++i) acc[i % hop] += w[i] * w[i];
  double mn = acc[0], mx = acc[0];
  for (double v : acc) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  return mn > 1e-9 && (mx - mn) <= 1e-8 * mx;
}

}  // namespace

void StftConfig::validate_for_istft() const {
  validate();
  check(hop_length <= fft_size / 2, "stft_config",
        "istft requires hop <= fft_size/2");
  check(cola_holds(*this), "stft_config",
        "window does not satisfy constant overlap-add at this hop");
}

int stft_frame_count(size_t num_samples, const StftConfig& cfg) {
  return int(num_samples / size_t(cfg.hop_length)) + 1;
}

namespace {

// Reflection-padded sample access: pad = fft/2 on both sides.
inline double padded_sample(const std::vector<double>& x, long idx) {
  long n = long(x.size());
  if (idx < 0) idx = -idx;
  if (idx >= n) idx = 2 * (n - 1) - idx;
  return x[size_t(idx)];
}

struct FrameLayout {
  int pad_left;  // window offset inside the fft frame
  std::vector<double> window;
};

FrameLayout layout_for(const StftConfig& cfg) {
  FrameLayout fl;
  fl.window = make_window(cfg.window, cfg.win_length);
  fl.pad_left = (cfg.fft_size - cfg.win_length) / 2;
  return fl;
}

}  // namespace

Spectrogram stft(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  w.validate();
  check(w.samples.size() >= size_t(cfg.win_length), "stft",
        "input shorter than one window (" + std::to_string(w.samples.size()) +
            " < " + std::to_string(cfg.win_length) + ")");
  int T = stft_frame_count(w.samples.size(), cfg);
  int nb = cfg.bins();
  Spectrogram s;
  s.kind = SpecKind::Complex;
  s.cfg = cfg;
  s.re = Mat(nb, T);
  s.im = Mat(nb, T);
  FrameLayout fl = layout_for(cfg);
  int half = cfg.fft_size / 2;
  std::vector<double> frame(size_t(cfg.fft_size));
  std::vector<double> re(size_t(nb)), im(size_t(nb));
  for (int t = 0; t < T; ++t) {
    long start = long(t) * cfg.hop_length - half;  // position in the unpadded signal
    std::fill(frame.begin(), frame.end(), 0.0);
    for (int i = 0; i < cfg.win_length; ++i)
      frame[size_t(fl.pad_left + i)] =
          fl.window[i] * padded_sample(w.samples, start + fl.pad_left + i);
    rfft(frame.data(), cfg.fft_size, re.data(), im.data());
    for (int k = 0; k < nb; ++k) {
      s.re.at(k, t) = re[k];
      s.im.at(k, t) = im[k];
    }
  }
  return s;
}

Spectrogram magnitude(const Spectrogram& cs) {
  check(cs.kind == SpecKind::Complex, "spectrogram", "magnitude() wants complex input");
  Spectrogram m;
  m.kind = SpecKind::Magnitude;
  m.cfg = cs.cfg;
  m.re = Mat(cs.re.rows, cs.re.cols);
  for (size_t i = 0; i < m.re.d.size(); ++i)
    m.re.d[i] = std::hypot(cs.re.d[i], cs.im.d[i]);
  return m;
}

Spectrogram linear_spectrogram(const Waveform& w, const StftConfig& cfg) {
  return magnitude(stft(w, cfg));
}

namespace {

// Window-squared OLA denominator for a T-frame synthesis, full (untrimmed)
// length (T-1)*hop + fft.
std::vector<double> ola_denominator(const StftConfig& cfg, int T) {
  FrameLayout fl = layout_for(cfg);
  size_t full = size_t(T - 1) * cfg.hop_length + cfg.fft_size;
  std::vector<double> den(full, 0.0);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < cfg.win_length; ++i) {
      size_t pos = size_t(t) * cfg.hop_length + fl.pad_left + i;
      den[pos] += fl.window[i] * fl.window[i];
    }
  for (double& v : den) v = std::max(v, 1e-11);
  return den;
}

}  // namespace

Waveform istft(const Spectrogram& spec, const StftConfig& cfg, int sample_rate) {
  check(spec.kind == SpecKind::Complex, "istft", "complex spectrogram required");
  cfg.validate_for_istft();
  check(spec.bins() == cfg.bins(), "istft", "bin count does not match config");
  int T = spec.frames();
  check(T >= 1, "istft", "empty spectrogram");
  FrameLayout fl = layout_for(cfg);
  int half = cfg.fft_size / 2;
  size_t full = size_t(T - 1) * cfg.hop_length + cfg.fft_size;
  std::vector<double> acc(full, 0.0);
  std::vector<double> frame(size_t(cfg.fft_size));
  std::vector<double> re(size_t(cfg.bins())), im(size_t(cfg.bins()));
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < cfg.bins(); ++k) {
      re[k] = spec.re.at(k, t);
      im[k] = spec.im.at(k, t);
    }
    irfft(re.data(), im.data(), cfg.fft_size, frame.data());
    for (int i = 0; i < cfg.win_length; ++i)
      acc[size_t(t) * cfg.hop_length + fl.pad_left + i] +=
          fl.window[i] * frame[size_t(fl.pad_left + i)];
  }
  auto den = ola_denominator(cfg, T);
  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(size_t(T) * cfg.hop_length);
  for (size_t j = 0; j < out.samples.size(); ++j) {
    size_t pos = j + size_t(half);
    out.samples[j] = pos < full ? acc[pos] / den[pos] : 0.0;
  }
  return out;
}

Mat mel_filterbank(int fft_size, int sample_rate, int n_mels, double fmin, double fmax) {
  check(n_mels >= 1, "mel", "n_mels must be >= 1");
  check(fmin >= 0 && fmax > fmin, "mel", "need 0 <= fmin < fmax");
  check(fmax <= sample_rate / 2.0 + 1e-9, "mel",
        "fmax " + std::to_string(fmax) + " above Nyquist " +
            std::to_string(sample_rate / 2.0));
  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  int nb = fft_size / 2 + 1;
  double mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
  std::vector<double> centers(size_t(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    centers[i] = mel_to_hz(mlo + (mhi - mlo) * i / (n_mels + 1));
  Mat fb(n_mels, nb);
  for (int m = 0; m < n_mels; ++m) {
    double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
    for (int k = 0; k < nb; ++k) {
      double f = double(k) * sample_rate / fft_size;
      double v = 0.0;
      if (f > lo && f < hi)
        v = f <= mid ? (f - lo) / std::max(mid - lo, 1e-12)
                     : (hi - f) / std::max(hi - mid, 1e-12);
      fb.at(m, k) = std::max(v, 0.0);
    }
  }
  return fb;
}

Spectrogram mel_project(const Spectrogram& mag, int sample_rate, int n_mels,
                        double fmin, double fmax) {
  check(mag.kind == SpecKind::Magnitude, "mel", "mel_project wants linear magnitude");
  Mat fb = mel_filterbank(mag.cfg.fft_size, sample_rate, n_mels, fmin, fmax);
  Spectrogram out;
  out.kind = SpecKind::Mel;
  out.cfg = mag.cfg;
  out.re = Mat(n_mels, mag.frames());
  for (int m = 0; m < n_mels; ++m)
    for (int t = 0; t < mag.frames(); ++t) {
      double s = 0.0;
      for (int k = 0; k < mag.bins(); ++k) s += fb.at(m, k) * mag.re.at(k, t);
      out.re.at(m, t) = s;
    }
  return out;
}

// ---------------------------------------------------------------------------
// differentiable nodes

ad::Node* stft_magnitude_node(ad::Tape& t, ad::Node* wav, const StftConfig& cfg) {
  cfg.validate();
  check(wav->rows() == 1, "stft", "waveform node must be 1 x L");
  size_t L = size_t(wav->cols());
  check(L >= size_t(cfg.win_length), "stft", "input shorter than one window");
  int T = stft_frame_count(L, cfg);
  int nb = cfg.bins();
  FrameLayout fl = layout_for(cfg);
  int half = cfg.fft_size / 2;

  ad::Node* out = t.alloc(nb, T, wav->needs_grad);
  // Intermediate complex values are needed for the magnitude backward pass.
  auto sre = std::make_shared<Mat>(nb, T);
  auto sim = std::make_shared<Mat>(nb, T);
  {
    std::vector<double> frame(size_t(cfg.fft_size));
    std::vector<double> re(size_t(nb)), im(size_t(nb));
    const std::vector<double>& x = wav->val.d;
    for (int ft = 0; ft < T; ++ft) {
      long start = long(ft) * cfg.hop_length - half;
      std::fill(frame.begin(), frame.end(), 0.0);
      for (int i = 0; i < cfg.win_length; ++i) {
        long idx = start + fl.pad_left + i;
        long n = long(L);
        if (idx < 0) idx = -idx;
        if (idx >= n) idx = 2 * (n - 1) - idx;
        frame[size_t(fl.pad_left + i)] = fl.window[i] * x[size_t(idx)];
      }
      rfft(frame.data(), cfg.fft_size, re.data(), im.data());
      for (int k = 0; k < nb; ++k) {
        sre->at(k, ft) = re[k];
        sim->at(k, ft) = im[k];
        out->val.at(k, ft) = std::hypot(re[k], im[k]);
      }
    }
  }
  if (out->needs_grad) {
    out->in = {wav};
    out->back = [wav, cfg, fl, sre, sim, T, nb, half, L](ad::Node& self) {
      int n = cfg.fft_size;
      std::vector<double> gre(size_t(nb)), gim(size_t(nb));
      std::vector<double> gframe(size_t(n));
      Mat& gx = wav->g();
      for (int ft = 0; ft < T; ++ft) {
        for (int k = 0; k < nb; ++k) {
          double m = std::max(self.val.at(k, ft), 1e-12);
          double g = self.grad.at(k, ft) / m;
          gre[k] = g * sre->at(k, ft);
          gim[k] = g * sim->at(k, ft);
        }
        // Adjoint of rfft: dx = Re(sum_{k=0..n/2} G_k e^{+i 2pi k n/N});
        // realized with a c2r transform on half-weighted interior bins.
        for (int k = 1; k < nb - 1; ++k) {
          gre[k] *= 0.5;
          gim[k] *= 0.5;
        }
        irfft(gre.data(), gim.data(), n, gframe.data());
        // irfft includes 1/n; the adjoint needs the unnormalized sum.
        long start = long(ft) * cfg.hop_length - half;
        for (int i = 0; i < cfg.win_length; ++i) {
          long idx = start + fl.pad_left + i;
          long nn = long(L);
          if (idx < 0) idx = -idx;
          if (idx >= nn) idx = 2 * (nn - 1) - idx;
          gx.d[size_t(idx)] +=
              fl.window[i] * gframe[size_t(fl.pad_left + i)] * double(n);
        }
      }
    };
  }
  return out;
}

ad::Node* istft_node(ad::Tape& t, ad::Node* re, ad::Node* im, const StftConfig& cfg) {
  cfg.validate_for_istft();
  check(re->rows() == cfg.bins() && im->rows() == cfg.bins(), "istft",
        "bin count does not match config");
  check(re->cols() == im->cols(), "istft", "re/im frame mismatch");
  int T = re->cols();
  int nb = cfg.bins();
  FrameLayout fl = layout_for(cfg);
  int half = cfg.fft_size / 2;
  size_t full = size_t(T - 1) * cfg.hop_length + cfg.fft_size;
  auto den = std::make_shared<std::vector<double>>(ola_denominator(cfg, T));
  int out_len = T * cfg.hop_length;

  ad::Node* out = t.alloc(1, out_len, re->needs_grad || im->needs_grad);
  {
    std::vector<double> acc(full, 0.0);
    std::vector<double> frame(size_t(cfg.fft_size));
    std::vector<double> vre(size_t(nb)), vim(size_t(nb));
    for (int ft = 0; ft < T; ++ft) {
      for (int k = 0; k < nb; ++k) {
        vre[k] = re->val.at(k, ft);
        vim[k] = im->val.at(k, ft);
      }
      irfft(vre.data(), vim.data(), cfg.fft_size, frame.data());
      for (int i = 0; i < cfg.win_length; ++i)
        acc[size_t(ft) * cfg.hop_length + fl.pad_left + i] +=
            fl.window[i] * frame[size_t(fl.pad_left + i)];
    }
    for (int j = 0; j < out_len; ++j) {
      size_t pos = size_t(j) + size_t(half);
      out->val.d[size_t(j)] = pos < full ? acc[pos] / (*den)[pos] : 0.0;
    }
  }
  if (out->needs_grad) {
    out->in = {re, im};
    out->back = [re, im, cfg, fl, den, T, nb, half, full, out_len](ad::Node& self) {
      // Adjoint: spread output grad into the full buffer (divided by den),
      // gather per-frame windowed slices, then adjoint of irfft.
      std::vector<double> gacc(full, 0.0);
      for (int j = 0; j < out_len; ++j) {
        size_t pos = size_t(j) + size_t(half);
        if (pos < full) gacc[pos] = self.grad.d[size_t(j)] / (*den)[pos];
      }
      int n = cfg.fft_size;
      std::vector<double> gframe(size_t(n));
      std::vector<double> fre(size_t(nb)), fim(size_t(nb));
      bool gr = re->needs_grad, gi = im->needs_grad;
      for (int ft = 0; ft < T; ++ft) {
        std::fill(gframe.begin(), gframe.end(), 0.0);
        for (int i = 0; i < cfg.win_length; ++i)
          gframe[size_t(fl.pad_left + i)] =
              fl.window[i] * gacc[size_t(ft) * cfg.hop_length + fl.pad_left + i];
        // Adjoint of x = irfft(re, im): d(re_k) = w_k/n * Re(rfft(gx)_k),
        // d(im_k) = w_k/n * Im(rfft(gx)_k), w_k = 2 except at DC/Nyquist.
        rfft(gframe.data(), n, fre.data(), fim.data());
        for (int k = 0; k < nb; ++k) {
          double wk = (k == 0 || k == nb - 1) ? 1.0 : 2.0;
          if (gr) re->g().at(k, ft) += wk / n * fre[k];
          if (gi) im->g().at(k, ft) += wk / n * fim[k];
        }
      }
    };
  }
  return out;
}

}  // namespace moetts::dsp
