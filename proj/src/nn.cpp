// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0

#include "moetts/nn.hpp"

#include <cmath>

namespace moetts::nn {

using namespace moetts::ad;

static void init_normal(Mat& m, Rng& rng, double std) {
  for (double& v : m.d) v = rng.normal() * std;
}

Linear::Linear(int in, int out, Rng& rng, bool bias, double scale)
    : W(out, in), b(out, 1), has_bias(bias) {
  init_normal(W.value, rng, scale / std::sqrt(double(in)));
}

void Linear::zero_init() {
  std::fill(W.value.d.begin(), W.value.d.end(), 0.0);
  std::fill(b.value.d.begin(), b.value.d.end(), 0.0);
}

Node* Linear::fwd(Tape& t, Node* x) const {
  Node* y = matmul(t, t.leaf(const_cast<Param&>(W)), x);
  if (has_bias) y = add_colvec(t, y, t.leaf(const_cast<Param&>(b)));
  return y;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".w", W);
  if (has_bias) v(prefix + ".b", b);
}

Conv1d::Conv1d(int in, int out, int kernel, Rng& rng, int stride, int pad,
               int dilation, int groups, bool bias)
    : W(out, (in / groups) * kernel),
      b(out, 1),
      kernel(kernel),
      stride(stride),
      pad(pad >= 0 ? pad : dilation * (kernel - 1) / 2),
      dilation(dilation),
      groups(groups),
      has_bias(bias) {
  check(in % groups == 0 && out % groups == 0, "nn", "conv1d groups mismatch");
  init_normal(W.value, rng, 1.0 / std::sqrt(double(in / groups) * kernel));
}

void Conv1d::zero_init() {
  std::fill(W.value.d.begin(), W.value.d.end(), 0.0);
  std::fill(b.value.d.begin(), b.value.d.end(), 0.0);
}

Node* Conv1d::fwd(Tape& t, Node* x) const {
  Node* bn = has_bias ? t.leaf(const_cast<Param&>(b)) : nullptr;
  return conv1d(t, x, t.leaf(const_cast<Param&>(W)), bn, kernel, stride, pad,
                dilation, groups);
}

void Conv1d::visit(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".w", W);
  if (has_bias) v(prefix + ".b", b);
}

LayerNorm::LayerNorm(int channels) : gamma(channels, 1), beta(channels, 1) {
  std::fill(gamma.value.d.begin(), gamma.value.d.end(), 1.0);
}

Node* LayerNorm::fwd(Tape& t, Node* x) const {
  return layer_norm_cols(t, x, t.leaf(const_cast<Param&>(gamma)),
                         t.leaf(const_cast<Param&>(beta)));
}

void LayerNorm::visit(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".gamma", gamma);
  v(prefix + ".beta", beta);
}

Embedding::Embedding(int vocab, int channels, Rng& rng) : table(vocab, channels) {
  init_normal(table.value, rng, 1.0);
}

Node* Embedding::fwd(Tape& t, const std::vector<int>& ids) const {
  return embedding(t, t.leaf(const_cast<Param&>(table)), ids);
}

void Embedding::visit(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".table", table);
}

MultiHeadAttention::MultiHeadAttention(int channels, int heads, Rng& rng)
    : wq(channels, channels, rng),
      wk(channels, channels, rng),
      wv(channels, channels, rng),
      wo(channels, channels, rng),
      heads(heads),
      channels(channels) {
  check(channels % heads == 0, "nn", "channels must divide by heads");
}

Node* MultiHeadAttention::fwd(Tape& t, Node* x) const {
  int hd = channels / heads;
  Node* q = wq.fwd(t, x);
  Node* k = wk.fwd(t, x);
  Node* v = wv.fwd(t, x);
  std::vector<Node*> outs;
  double scale = 1.0 / std::sqrt(double(hd));
  for (int h = 0; h < heads; ++h) {
    Node* qh = slice_rows(t, q, h * hd, hd);
    Node* kh = slice_rows(t, k, h * hd, hd);
    Node* vh = slice_rows(t, v, h * hd, hd);
    // scores[i][j] = <q_i, k_j> / sqrt(hd), softmax over keys j
    Node* scores = mul_scalar(t, matmul(t, transpose(t, qh), kh), scale);
    Node* att = softmax_rows(t, scores);
    outs.push_back(matmul(t, vh, transpose(t, att)));
  }
  return wo.fwd(t, concat_rows(t, outs));
}

void MultiHeadAttention::visit(const std::string& prefix, const ParamVisitor& v) {
  wq.visit(prefix + ".q", v);
  wk.visit(prefix + ".k", v);
  wv.visit(prefix + ".v", v);
  wo.visit(prefix + ".o", v);
}

Mat sinusoidal_positions(int channels, int length) {
  Mat p(channels, length);
  for (int c = 0; c < channels; ++c) {
    double rate = std::pow(10000.0, -double(c / 2 * 2) / channels);
    for (int i = 0; i < length; ++i)
      p.at(c, i) = (c % 2 == 0) ? std::sin(i * rate) : std::cos(i * rate);
  }
  return p;
}

void AdamW::zero_grad() {
  for (auto* p : params) p->zero_grad();
}

double AdamW::grad_norm() const {
  double s = 0.0;
  for (auto* p : params)
    for (double g : p->grad.d) s += g * g;
  return std::sqrt(s);
}

double AdamW::clip_grad_norm(double max_norm) {
  double n = grad_norm();
  if (n > max_norm && n > 0.0) {
    double scale = max_norm / n;
    for (auto* p : params)
      for (double& g : p->grad.d) g *= scale;
  }
  return n;
}

void AdamW::step() {
  ++step_count;
  double bc1 = 1.0 - std::pow(beta1, double(step_count));
  double bc2 = 1.0 - std::pow(beta2, double(step_count));
  for (auto* p : params) {
    if (p->adam_m.d.empty()) {
      p->adam_m = Mat(p->value.rows, p->value.cols);
      p->adam_v = Mat(p->value.rows, p->value.cols);
    }
    for (size_t i = 0; i < p->value.d.size(); ++i) {
      double g = p->grad.d[i];
      double& m = p->adam_m.d[i];
      double& v = p->adam_v.d[i];
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g * g;
      double update = (m / bc1) / (std::sqrt(v / bc2) + eps);
      p->value.d[i] -= lr * (update + weight_decay * p->value.d[i]);
    }
  }
}

}  // namespace moetts::nn
