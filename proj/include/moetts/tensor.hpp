// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over 2D double matrices. A Tape owns the
// nodes of one forward pass; creation order is the topological order, so
// backward() is a single reverse sweep. Training code builds a fresh tape
// per step; nothing here is thread-safe by design (single training writer).
#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "moetts/common.hpp"

namespace moetts::ad {

// Trainable tensor with persistent gradient and AdamW state.
struct Param {
  std::string name;
  Mat value;
  Mat grad;    // accumulated across backward passes until the optimizer clears it
  Mat adam_m;  // allocated on first optimizer step
  Mat adam_v;

  Param() = default;
  Param(int r, int c) : value(r, c), grad(r, c) {}

  void zero_grad() { std::fill(grad.d.begin(), grad.d.end(), 0.0); }
};

class Tape;

struct Node {
  Mat val;
  Mat grad;  // empty until touched during backward
  bool needs_grad = false;
  Param* param = nullptr;  // set for parameter leaves
  std::vector<Node*> in;
  std::function<void(Node&)> back;  // accumulates into inputs' grads
  int id = 0;

  int rows() const { return val.rows; }
  int cols() const { return val.cols; }
  Mat& g();  // grad, allocated and zeroed on first use
};

class Tape {
 public:
  Node* alloc(int rows, int cols, bool needs_grad);
  Node* constant(Mat m);
  Node* constant_scalar(double v);
  Node* leaf(Param& p);  // copies the current value; grads flow back to p.grad

  // Seeds d(loss)/d(loss) = 1 (loss must be 1x1) and sweeps the tape in
  // reverse creation order, accumulating into Param::grad for leaves.
  void backward(Node* loss);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;  // deque: stable addresses
};

// ---- elementwise ----
Node* add(Tape& t, Node* a, Node* b);
Node* sub(Tape& t, Node* a, Node* b);
Node* mul(Tape& t, Node* a, Node* b);
Node* add_scalar(Tape& t, Node* a, double c);
Node* mul_scalar(Tape& t, Node* a, double c);
Node* square(Tape& t, Node* a);
Node* abs_val(Tape& t, Node* a);
Node* exp_val(Tape& t, Node* a);
Node* log_val(Tape& t, Node* a);
Node* relu(Tape& t, Node* a);
Node* leaky_relu(Tape& t, Node* a, double slope);
Node* gelu(Tape& t, Node* a);
Node* tanh_val(Tape& t, Node* a);
Node* sigmoid(Tape& t, Node* a);
// Pass-through gradient on [lo, hi], zero outside.
Node* clamp(Tape& t, Node* a, double lo, double hi);
// Stops gradient flow; value copy.
Node* detach(Tape& t, Node* a);

// ---- broadcast ----
// a[C x T] + v[C x 1] applied to every column.
Node* add_colvec(Tape& t, Node* a, Node* v);
Node* mul_colvec(Tape& t, Node* a, Node* v);
// a[R x C] with v[1 x C] applied to every row.
Node* add_rowvec(Tape& t, Node* a, Node* v);
Node* mul_rowvec(Tape& t, Node* a, Node* v);

// ---- linear algebra ----
Node* matmul(Tape& t, Node* a, Node* b);  // [m x k] * [k x n]
Node* transpose(Tape& t, Node* a);

// ---- shape ----
Node* slice_cols(Tape& t, Node* a, int c0, int n);
Node* slice_rows(Tape& t, Node* a, int r0, int n);
Node* concat_rows(Tape& t, const std::vector<Node*>& parts);
Node* concat_cols(Tape& t, const std::vector<Node*>& parts);
Node* gather_cols(Tape& t, Node* a, const std::vector<int>& idx);
// Inverse of gather: place columns of a (C x n) at positions idx within T
// zero columns. idx must be unique.
Node* scatter_cols(Tape& t, Node* a, const std::vector<int>& idx, int total_cols);
// Repeat column i reps[i] times (length regulation).
Node* repeat_cols(Tape& t, Node* a, const std::vector<int>& reps);

// ---- reductions ----
Node* sum_all(Tape& t, Node* a);   // -> 1x1
Node* mean_all(Tape& t, Node* a);  // -> 1x1
Node* col_mean(Tape& t, Node* a);  // mean over rows -> 1 x C
Node* row_mean(Tape& t, Node* a);  // mean over cols -> R x 1

// ---- neural net primitives ----
Node* softmax_rows(Tape& t, Node* a);
// Normalizes each column over the channel axis; gamma, beta are [C x 1].
Node* layer_norm_cols(Tape& t, Node* a, Node* gamma, Node* beta, double eps = 1e-5);
// x[Cin x T], w[Cout x (Cin/groups * K)], b[Cout x 1] or nullptr; zero padding.
Node* conv1d(Tape& t, Node* x, Node* w, Node* b, int kernel, int stride, int pad,
             int dilation, int groups);
Node* avg_pool1d(Tape& t, Node* x, int factor);
// Rows of table[V x C] selected by ids, emitted as columns -> [C x len(ids)].
Node* embedding(Tape& t, Node* table, const std::vector<int>& ids);

// Numeric gradient checking helper: relative error between analytic gradient
// and central differences of f at x, max over entries.
double grad_check(const std::function<Node*(Tape&, Node*)>& f, const Mat& x,
                  double step = 1e-5);

}  // namespace moetts::ad
