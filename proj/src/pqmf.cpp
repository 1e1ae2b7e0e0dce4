// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0

#include "moetts/pqmf.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace moetts::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

double bessel_i0(double x) {
  // Power series; converges quickly for the beta range used here.
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 64; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

// Kaiser-windowed sinc lowpass, length taps+1, unity DC gain.
// cutoff is in Nyquist units (1.0 = fs/2), like the usual firwin convention.
std::vector<double> prototype_lowpass(int taps, double cutoff, double beta) {
  int len = taps + 1;
  double center = taps / 2.0;
  std::vector<double> h(size_t(len));
  double i0b = bessel_i0(beta);
  double sum = 0.0;
  for (int i = 0; i < len; ++i) {
    double m = i - center;
    double sinc = m == 0.0 ? cutoff : std::sin(kPi * cutoff * m) / (kPi * m);
    double r = 2.0 * i / taps - 1.0;
    double kais = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[size_t(i)] = sinc * kais;
    sum += h[size_t(i)];
  }
  for (double& v : h) v /= sum;
  return h;
}

void modulate(const std::vector<double>& proto, int bands, Mat& ana, Mat& syn) {
  int len = int(proto.size());
  int taps = len - 1;
  ana = Mat(bands, len);
  syn = Mat(bands, len);
  for (int k = 0; k < bands; ++k) {
    double sign = (k % 2 == 0) ? 1.0 : -1.0;
    for (int i = 0; i < len; ++i) {
      double arg = (2 * k + 1) * (kPi / (2.0 * bands)) * (i - taps / 2.0);
      ana.at(k, i) = 2.0 * proto[size_t(i)] * std::cos(arg + sign * kPi / 4.0);
      syn.at(k, i) = 2.0 * proto[size_t(i)] * std::cos(arg - sign * kPi / 4.0);
    }
  }
}

// Centered valid correlation with zero padding of taps/2 on each side;
// output has the input's length.
void corr_same(const std::vector<double>& x, const double* f, int flen,
               std::vector<double>& out) {
  int pad = (flen - 1) / 2;
  long n = long(x.size());
  out.assign(x.size(), 0.0);
  for (long i = 0; i < n; ++i) {
    double s = 0.0;
    long lo = std::max(0L, pad - i);
    long hi = std::min(long(flen), n + pad - i);
    for (long j = lo; j < hi; ++j) s += x[size_t(i + j - pad)] * f[j];
    out[size_t(i)] = s;
  }
}

double impulse_roundtrip_error(const PqmfConfig& cfg, double cutoff) {
  PqmfConfig c = cfg;
  c.cutoff_ratio = cutoff;
  std::vector<double> proto = prototype_lowpass(c.taps, cutoff, c.kaiser_beta);
  Mat ana, syn;
  modulate(proto, c.num_bands, ana, syn);
  int len = ((4 * (c.taps + 1)) / c.num_bands + 1) * c.num_bands;
  std::vector<double> x(size_t(len), 0.0);
  x[size_t(len / 2)] = 1.0;
  int T = len / c.num_bands;
  std::vector<double> u, y(size_t(len), 0.0), up(size_t(len));
  for (int k = 0; k < c.num_bands; ++k) {
    corr_same(x, &ana.d[size_t(k) * (c.taps + 1)], c.taps + 1, u);
    std::fill(up.begin(), up.end(), 0.0);
    for (int m = 0; m < T; ++m)
      up[size_t(m) * c.num_bands] = u[size_t(m) * c.num_bands] * c.num_bands;
    corr_same(up, &syn.d[size_t(k) * (c.taps + 1)], c.taps + 1, u);
    for (int i = 0; i < len; ++i) y[size_t(i)] += u[size_t(i)];
  }
  double err = 0.0;
  for (int i = 0; i < len; ++i) {
    double d = y[size_t(i)] - x[size_t(i)];
    err += d * d;
  }
  return err;
}

double optimize_cutoff(const PqmfConfig& cfg) {
  // Golden-section search around the critical band edge 1/(2N) Nyquist units.
  double base = 1.0 / (2.0 * cfg.num_bands);
  double lo = 0.6 * base, hi = 1.6 * base;
  const double phi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = impulse_roundtrip_error(cfg, x1);
  double f2 = impulse_roundtrip_error(cfg, x2);
  for (int it = 0; it < 40; ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = impulse_roundtrip_error(cfg, x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = impulse_roundtrip_error(cfg, x2);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

PqmfBank PqmfBank::design(const PqmfConfig& cfg) {
  check(cfg.num_bands >= 2, "pqmf", "need at least 2 bands");
  check(cfg.taps >= 8 && cfg.taps % 2 == 0, "pqmf", "taps must be even and >= 8");
  if ((cfg.num_bands & (cfg.num_bands - 1)) != 0)
    std::fprintf(stderr,
                 "warning: pqmf with %d bands (not a power of two) is a "
                 "supported but untested regime\n",
                 cfg.num_bands);
  PqmfBank bank;
  bank.cfg_ = cfg;
  if (bank.cfg_.cutoff_ratio <= 0.0)
    bank.cfg_.cutoff_ratio = optimize_cutoff(cfg);
  std::vector<double> proto =
      prototype_lowpass(cfg.taps, bank.cfg_.cutoff_ratio, cfg.kaiser_beta);
  modulate(proto, cfg.num_bands, bank.analysis_, bank.synthesis_);
  return bank;
}

Mat PqmfBank::analysis(const std::vector<double>& x) const {
  int N = cfg_.num_bands;
  std::vector<double> xp = x;
  if (xp.size() % size_t(N) != 0) xp.resize(((xp.size() / N) + 1) * N, 0.0);
  int T = int(xp.size()) / N;
  Mat out(N, T);
  std::vector<double> u;
  for (int k = 0; k < N; ++k) {
    corr_same(xp, &analysis_.d[size_t(k) * (cfg_.taps + 1)], cfg_.taps + 1, u);
    for (int m = 0; m < T; ++m) out.at(k, m) = u[size_t(m) * N];
  }
  return out;
}

std::vector<double> PqmfBank::synthesis(const Mat& bands) const {
  check(bands.rows == cfg_.num_bands, "pqmf",
        "band count mismatch: got " + std::to_string(bands.rows) + ", bank has " +
            std::to_string(cfg_.num_bands));
  int N = cfg_.num_bands;
  int T = bands.cols;
  size_t len = size_t(T) * N;
  std::vector<double> y(len, 0.0), up(len), u;
  for (int k = 0; k < N; ++k) {
    std::fill(up.begin(), up.end(), 0.0);
    for (int m = 0; m < T; ++m) up[size_t(m) * N] = bands.at(k, m) * N;
    corr_same(up, &synthesis_.d[size_t(k) * (cfg_.taps + 1)], cfg_.taps + 1, u);
    for (size_t i = 0; i < len; ++i) y[i] += u[i];
  }
  return y;
}

ad::Node* PqmfBank::analysis_node(ad::Tape& t, ad::Node* wav) const {
  check(wav->rows() == 1, "pqmf", "waveform node must be 1 x L");
  int N = cfg_.num_bands;
  int flen = cfg_.taps + 1;
  int pad = cfg_.taps / 2;
  long L = wav->cols();
  long Lp = (L % N == 0) ? L : (L / N + 1) * N;
  int T = int(Lp / N);
  ad::Node* out = t.alloc(N, T, wav->needs_grad);
  const Mat& fil = analysis_;
  for (int k = 0; k < N; ++k) {
    const double* f = &fil.d[size_t(k) * flen];
    for (int m = 0; m < T; ++m) {
      long i = long(m) * N;  // output sample index in the padded signal
      double s = 0.0;
      for (int j = 0; j < flen; ++j) {
        long xi = i + j - pad;
        if (xi >= 0 && xi < L) s += wav->val.d[size_t(xi)] * f[j];
      }
      out->val.at(k, m) = s;
    }
  }
  if (out->needs_grad) {
    const Mat* filters = &analysis_;
    out->in = {wav};
    out->back = [wav, filters, N, flen, pad, L, T](ad::Node& self) {
      Mat& gx = wav->g();
      for (int k = 0; k < N; ++k) {
        const double* f = &filters->d[size_t(k) * flen];
        for (int m = 0; m < T; ++m) {
          double g = self.grad.at(k, m);
          if (g == 0.0) continue;
          long i = long(m) * N;
          for (int j = 0; j < flen; ++j) {
            long xi = i + j - pad;
            if (xi >= 0 && xi < L) gx.d[size_t(xi)] += g * f[j];
          }
        }
      }
    };
  }
  return out;
}

void PqmfBank::save_coefficients(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "io", "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(analysis_.d.data()),
          std::streamsize(analysis_.d.size() * sizeof(double)));
  f.write(reinterpret_cast<const char*>(synthesis_.d.data()),
          std::streamsize(synthesis_.d.size() * sizeof(double)));
  check(f.good(), "io", "write failed for " + path);
}

}  // namespace moetts::dsp
