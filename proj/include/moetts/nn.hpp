// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0
//
// Layer wrappers over ad::Param plus the AdamW optimizer. Layers are plain
// structs; models visit their parameters by name for checkpointing and
// optimizer registration.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "moetts/tensor.hpp"

namespace moetts::nn {

using ParamVisitor = std::function<void(const std::string&, ad::Param&)>;

struct Linear {
  ad::Param W;  // out x in
  ad::Param b;  // out x 1
  bool has_bias = true;

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true, double scale = 1.0);
  void zero_init();
  ad::Node* fwd(ad::Tape& t, ad::Node* x) const;  // x: in x T
  void visit(const std::string& prefix, const ParamVisitor& v);
};

struct Conv1d {
  ad::Param W;  // Cout x (Cin/groups * K)
  ad::Param b;  // Cout x 1
  int kernel = 1, stride = 1, pad = 0, dilation = 1, groups = 1;
  bool has_bias = true;

  Conv1d() = default;
  Conv1d(int in, int out, int kernel, Rng& rng, int stride = 1, int pad = -1,
         int dilation = 1, int groups = 1, bool bias = true);
  void zero_init();
  ad::Node* fwd(ad::Tape& t, ad::Node* x) const;
  void visit(const std::string& prefix, const ParamVisitor& v);
};

struct LayerNorm {
  ad::Param gamma;  // C x 1, init 1
  ad::Param beta;   // C x 1, init 0

  LayerNorm() = default;
  explicit LayerNorm(int channels);
  ad::Node* fwd(ad::Tape& t, ad::Node* x) const;
  void visit(const std::string& prefix, const ParamVisitor& v);
};

struct Embedding {
  ad::Param table;  // V x C

  Embedding() = default;
  Embedding(int vocab, int channels, Rng& rng);
  ad::Node* fwd(ad::Tape& t, const std::vector<int>& ids) const;  // C x len
  void visit(const std::string& prefix, const ParamVisitor& v);
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 4;
  int channels = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(int channels, int heads, Rng& rng);
  ad::Node* fwd(ad::Tape& t, ad::Node* x) const;  // x: C x T, self-attention
  void visit(const std::string& prefix, const ParamVisitor& v);
};

// Added to transformer inputs; deterministic, parameter-free.
Mat sinusoidal_positions(int channels, int length);

struct AdamW {
  double lr = 2e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-9;
  double weight_decay = 0.01;
  long step_count = 0;

  std::vector<ad::Param*> params;

  void add(ad::Param& p) { params.push_back(&p); }
  void zero_grad();
  double grad_norm() const;
  // Returns the pre-clip norm; scales gradients in place when above max_norm.
  double clip_grad_norm(double max_norm);
  void step();
};

}  // namespace moetts::nn
