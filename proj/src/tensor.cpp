// Copyright (c) 2026 moetts contributors
// SPDX-License-Identifier: Apache-2.0

#include "moetts/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace moetts::ad {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

static EMap emap(Mat& m) { return EMap(m.d.data(), m.rows, m.cols); }
static ECMap emap(const Mat& m) { return ECMap(m.d.data(), m.rows, m.cols); }

Mat& Node::g() {
  if (grad.d.empty()) grad = Mat(val.rows, val.cols);
  return grad;
}

Node* Tape::alloc(int rows, int cols, bool needs_grad) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.val = Mat(rows, cols);
  n.needs_grad = needs_grad;
  n.id = int(nodes_.size()) - 1;
  return &n;
}

Node* Tape::constant(Mat m) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.val = std::move(m);
  n.needs_grad = false;
  n.id = int(nodes_.size()) - 1;
  return &n;
}

Node* Tape::constant_scalar(double v) {
  Mat m(1, 1);
  m.d[0] = v;
  return constant(std::move(m));
}

Node* Tape::leaf(Param& p) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.val = p.value;
  n.needs_grad = true;
  n.param = &p;
  n.id = int(nodes_.size()) - 1;
  n.back = [](Node& self) {
    Param& p = *self.param;
    if (p.grad.d.empty()) p.grad = Mat(p.value.rows, p.value.cols);
    for (size_t i = 0; i < self.grad.d.size(); ++i) p.grad.d[i] += self.grad.d[i];
  };
  return &n;
}

void Tape::backward(Node* loss) {
  check(loss->val.rows == 1 && loss->val.cols == 1, "autodiff",
        "backward() requires a scalar loss");
  loss->g().d[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (n.grad.d.empty() || !n.back) continue;
    n.back(n);
  }
}

// ---------------------------------------------------------------------------
// helpers

static Node* unary(Tape& t, Node* a, const std::function<void(const Mat&, Mat&)>& fwd,
                   const std::function<double(double x, double y)>& dydx) {
  Node* out = t.alloc(a->rows(), a->cols(), a->needs_grad);
  fwd(a->val, out->val);
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a, dydx](Node& self) {
      Mat& ga = a->g();
      for (size_t i = 0; i < ga.d.size(); ++i)
        ga.d[i] += self.grad.d[i] * dydx(a->val.d[i], self.val.d[i]);
    };
  }
  return out;
}

static void require_same_shape(Node* a, Node* b, const char* op) {
  check(a->val.same_shape(b->val), "autodiff",
        std::string(op) + ": shape mismatch " + std::to_string(a->rows()) + "x" +
            std::to_string(a->cols()) + " vs " + std::to_string(b->rows()) + "x" +
            std::to_string(b->cols()));
}

// ---------------------------------------------------------------------------
// elementwise

Node* add(Tape& t, Node* a, Node* b) {
  require_same_shape(a, b, "add");
  Node* out = t.alloc(a->rows(), a->cols(), a->needs_grad || b->needs_grad);
  for (size_t i = 0; i < out->val.d.size(); ++i) out->val.d[i] = a->val.d[i] + b->val.d[i];
  if (out->needs_grad) {
    out->in = {a, b};
    out->back = [a, b](Node& self) {
      if (a->needs_grad) {
        Mat& ga = a->g();
        for (size_t i = 0; i < ga.d.size(); ++i) ga.d[i] += self.grad.d[i];
      }
      if (b->needs_grad) {
        Mat& gb = b->g();
        for (size_t i = 0; i < gb.d.size(); ++i) gb.d[i] += self.grad.d[i];
      }
    };
  }
  return out;
}

Node* sub(Tape& t, Node* a, Node* b) {
  require_same_shape(a, b, "sub");
  Node* out = t.alloc(a->rows(), a->cols(), a->needs_grad || b->needs_grad);
  for (size_t i = 0; i < out->val.d.size(); ++i) out->val.d[i] = a->val.d[i] - b->val.d[i];
  if (out->needs_grad) {
    out->in = {a, b};
    out->back = [a, b](Node& self) {
      if (a->needs_grad) {
        Mat& ga = a->g();
        for (size_t i = 0; i < ga.d.size(); ++i) ga.d[i] += self.grad.d[i];
      }
      if (b->needs_grad) {
        Mat& gb = b->g();
        for (size_t i = 0; i < gb.d.size(); ++i) gb.d[i] -= self.grad.d[i];
      }
    };
  }
  return out;
}

Node* mul(Tape& t, Node* a, Node* b) {
  require_same_shape(a, b, "mul");
  Node* out = t.alloc(a->rows(), a->cols(), a->needs_grad || b->needs_grad);
  for (size_t i = 0; i < out->val.d.size(); ++i) out->val.d[i] = a->val.d[i] * b->val.d[i];
  if (out->needs_grad) {
    out->in = {a, b};
    out->back = [a, b](Node& self) {
      if (a->needs_grad) {
        Mat& ga = a->g();
        for (size_t i = 0; i < ga.d.size(); ++i) ga.d[i] += self.grad.d[i] * b->val.d[i];
      }
      if (b->needs_grad) {
        Mat& gb = b->g();
        for (size_t i = 0; i < gb.d.size(); ++i) gb.d[i] += self.grad.d[i] * a->val.d[i];
      }
    };
  }
  return out;
}

Node* add_scalar(Tape& t, Node* a, double c) {
  return unary(
      t, a,
      [c](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = x.d[i] + c;
      },
      [](double, double) { return 1.0; });
}

Node* mul_scalar(Tape& t, Node* a, double c) {
  return unary(
      t, a,
      [c](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = x.d[i] * c;
      },
      [c](double, double) { return c; });
}

Node* square(Tape& t, Node* a) {
  return unary(
      t, a,
      [](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = x.d[i] * x.d[i];
      },
      [](double x, double) { return 2.0 * x; });
}

Node* abs_val(Tape& t, Node* a) {
  return unary(
      t, a,
      [](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = std::abs(x.d[i]);
      },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Node* exp_val(Tape& t, Node* a) {
  return unary(
      t, a,
      [](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = std::exp(x.d[i]);
      },
      [](double, double y) { return y; });
}

Node* log_val(Tape& t, Node* a) {
  return unary(
      t, a,
      [](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = std::log(x.d[i]);
      },
      [](double x, double) { return 1.0 / x; });
}

Node* relu(Tape& t, Node* a) {
  return unary(
      t, a,
      [](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = x.d[i] > 0 ? x.d[i] : 0.0;
      },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Node* leaky_relu(Tape& t, Node* a, double slope) {
  return unary(
      t, a,
      [slope](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i)
          y.d[i] = x.d[i] > 0 ? x.d[i] : slope * x.d[i];
      },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Node* gelu(Tape& t, Node* a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary(
      t, a,
      [](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i)
          y.d[i] = 0.5 * x.d[i] * (1.0 + std::erf(x.d[i] * inv_sqrt2));
      },
      [](double x, double) {
        double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

Node* tanh_val(Tape& t, Node* a) {
  return unary(
      t, a,
      [](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = std::tanh(x.d[i]);
      },
      [](double, double y) { return 1.0 - y * y; });
}

Node* sigmoid(Tape& t, Node* a) {
  return unary(
      t, a,
      [](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = 1.0 / (1.0 + std::exp(-x.d[i]));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Node* clamp(Tape& t, Node* a, double lo, double hi) {
  return unary(
      t, a,
      [lo, hi](const Mat& x, Mat& y) {
        for (size_t i = 0; i < x.d.size(); ++i) y.d[i] = std::clamp(x.d[i], lo, hi);
      },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Node* detach(Tape& t, Node* a) { return t.constant(a->val); }

// ---------------------------------------------------------------------------
// broadcast

Node* add_colvec(Tape& t, Node* a, Node* v) {
  check(v->cols() == 1 && v->rows() == a->rows(), "autodiff", "add_colvec shape");
  Node* out = t.alloc(a->rows(), a->cols(), a->needs_grad || v->needs_grad);
  for (int r = 0; r < a->rows(); ++r)
    for (int c = 0; c < a->cols(); ++c)
      out->val.at(r, c) = a->val.at(r, c) + v->val.d[r];
  if (out->needs_grad) {
    out->in = {a, v};
    out->back = [a, v](Node& self) {
      if (a->needs_grad) {
        Mat& ga = a->g();
        for (size_t i = 0; i < ga.d.size(); ++i) ga.d[i] += self.grad.d[i];
      }
      if (v->needs_grad) {
        Mat& gv = v->g();
        for (int r = 0; r < a->rows(); ++r) {
          double s = 0.0;
          for (int c = 0; c < a->cols(); ++c) s += self.grad.at(r, c);
          gv.d[r] += s;
        }
      }
    };
  }
  return out;
}

Node* mul_colvec(Tape& t, Node* a, Node* v) {
  check(v->cols() == 1 && v->rows() == a->rows(), "autodiff", "mul_colvec shape");
  Node* out = t.alloc(a->rows(), a->cols(), a->needs_grad || v->needs_grad);
  for (int r = 0; r < a->rows(); ++r)
    for (int c = 0; c < a->cols(); ++c)
      out->val.at(r, c) = a->val.at(r, c) * v->val.d[r];
  if (out->needs_grad) {
    out->in = {a, v};
    out->back = [a, v](Node& self) {
      if (a->needs_grad) {
        Mat& ga = a->g();
        for (int r = 0; r < a->rows(); ++r)
          for (int c = 0; c < a->cols(); ++c)
            ga.at(r, c) += self.grad.at(r, c) * v->val.d[r];
      }
      if (v->needs_grad) {
        Mat& gv = v->g();
        for (int r = 0; r < a->rows(); ++r) {
          double s = 0.0;
          for (int c = 0; c < a->cols(); ++c) s += self.grad.at(r, c) * a->val.at(r, c);
          gv.d[r] += s;
        }
      }
    };
  }
  return out;
}

Node* add_rowvec(Tape& t, Node* a, Node* v) {
  check(v->rows() == 1 && v->cols() == a->cols(), "autodiff", "add_rowvec shape");
  Node* out = t.alloc(a->rows(), a->cols(), a->needs_grad || v->needs_grad);
  for (int r = 0; r < a->rows(); ++r)
    for (int c = 0; c < a->cols(); ++c)
      out->val.at(r, c) = a->val.at(r, c) + v->val.d[c];
  if (out->needs_grad) {
    out->in = {a, v};
    out->back = [a, v](Node& self) {
      if (a->needs_grad) {
        Mat& ga = a->g();
        for (size_t i = 0; i < ga.d.size(); ++i) ga.d[i] += self.grad.d[i];
      }
      if (v->needs_grad) {
        Mat& gv = v->g();
        for (int c = 0; c < a->cols(); ++c) {
          double s = 0.0;
          for (int r = 0; r < a->rows(); ++r) s += self.grad.at(r, c);
          gv.d[c] += s;
        }
      }
    };
  }
  return out;
}

Node* mul_rowvec(Tape& t, Node* a, Node* v) {
  check(v->rows() == 1 && v->cols() == a->cols(), "autodiff", "mul_rowvec shape");
  Node* out = t.alloc(a->rows(), a->cols(), a->needs_grad || v->needs_grad);
  for (int r = 0; r < a->rows(); ++r)
    for (int c = 0; c < a->cols(); ++c)
      out->val.at(r, c) = a->val.at(r, c) * v->val.d[c];
  if (out->needs_grad) {
    out->in = {a, v};
    out->back = [a, v](Node& self) {
      if (a->needs_grad) {
        Mat& ga = a->g();
        for (int r = 0; r < a->rows(); ++r)
          for (int c = 0; c < a->cols(); ++c)
            ga.at(r, c) += self.grad.at(r, c) * v->val.d[c];
      }
      if (v->needs_grad) {
        Mat& gv = v->g();
        for (int c = 0; c < a->cols(); ++c) {
          double s = 0.0;
          for (int r = 0; r < a->rows(); ++r) s += self.grad.at(r, c) * a->val.at(r, c);
          gv.d[c] += s;
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra

Node* matmul(Tape& t, Node* a, Node* b) {
  check(a->cols() == b->rows(), "autodiff",
        "matmul: inner dims " + std::to_string(a->cols()) + " vs " +
            std::to_string(b->rows()));
  Node* out = t.alloc(a->rows(), b->cols(), a->needs_grad || b->needs_grad);
  emap(out->val).noalias() = emap(a->val) * emap(b->val);
  if (out->needs_grad) {
    out->in = {a, b};
    out->back = [a, b](Node& self) {
      ECMap gout(self.grad.d.data(), self.grad.rows, self.grad.cols);
      if (a->needs_grad) emap(a->g()).noalias() += gout * emap(b->val).transpose();
      if (b->needs_grad) emap(b->g()).noalias() += emap(a->val).transpose() * gout;
    };
  }
  return out;
}

Node* transpose(Tape& t, Node* a) {
  Node* out = t.alloc(a->cols(), a->rows(), a->needs_grad);
  emap(out->val) = emap(a->val).transpose();
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a](Node& self) {
      emap(a->g()) += ECMap(self.grad.d.data(), self.grad.rows, self.grad.cols).transpose();
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape

Node* slice_cols(Tape& t, Node* a, int c0, int n) {
  check(c0 >= 0 && n >= 1 && c0 + n <= a->cols(), "autodiff", "slice_cols range");
  Node* out = t.alloc(a->rows(), n, a->needs_grad);
  for (int r = 0; r < a->rows(); ++r)
    for (int c = 0; c < n; ++c) out->val.at(r, c) = a->val.at(r, c0 + c);
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a, c0, n](Node& self) {
      Mat& ga = a->g();
      for (int r = 0; r < a->rows(); ++r)
        for (int c = 0; c < n; ++c) ga.at(r, c0 + c) += self.grad.at(r, c);
    };
  }
  return out;
}

Node* slice_rows(Tape& t, Node* a, int r0, int n) {
  check(r0 >= 0 && n >= 1 && r0 + n <= a->rows(), "autodiff", "slice_rows range");
  Node* out = t.alloc(n, a->cols(), a->needs_grad);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < a->cols(); ++c) out->val.at(r, c) = a->val.at(r0 + r, c);
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a, r0, n](Node& self) {
      Mat& ga = a->g();
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < a->cols(); ++c) ga.at(r0 + r, c) += self.grad.at(r, c);
    };
  }
  return out;
}

Node* concat_rows(Tape& t, const std::vector<Node*>& parts) {
  check(!parts.empty(), "autodiff", "concat_rows: empty");
  int cols = parts[0]->cols(), rows = 0;
  bool ng = false;
  for (Node* p : parts) {
    check(p->cols() == cols, "autodiff", "concat_rows: col mismatch");
    rows += p->rows();
    ng = ng || p->needs_grad;
  }
  Node* out = t.alloc(rows, cols, ng);
  int r0 = 0;
  for (Node* p : parts) {
    for (int r = 0; r < p->rows(); ++r)
      for (int c = 0; c < cols; ++c) out->val.at(r0 + r, c) = p->val.at(r, c);
    r0 += p->rows();
  }
  if (ng) {
    out->in = parts;
    out->back = [parts, cols](Node& self) {
      int r0 = 0;
      for (Node* p : parts) {
        if (p->needs_grad) {
          Mat& gp = p->g();
          for (int r = 0; r < p->rows(); ++r)
            for (int c = 0; c < cols; ++c) gp.at(r, c) += self.grad.at(r0 + r, c);
        }
        r0 += p->rows();
      }
    };
  }
  return out;
}

Node* concat_cols(Tape& t, const std::vector<Node*>& parts) {
  check(!parts.empty(), "autodiff", "concat_cols: empty");
  int rows = parts[0]->rows(), cols = 0;
  bool ng = false;
  for (Node* p : parts) {
    check(p->rows() == rows, "autodiff", "concat_cols: row mismatch");
    cols += p->cols();
    ng = ng || p->needs_grad;
  }
  Node* out = t.alloc(rows, cols, ng);
  int c0 = 0;
  for (Node* p : parts) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < p->cols(); ++c) out->val.at(r, c0 + c) = p->val.at(r, c);
    c0 += p->cols();
  }
  if (ng) {
    out->in = parts;
    out->back = [parts, rows](Node& self) {
      int c0 = 0;
      for (Node* p : parts) {
        if (p->needs_grad) {
          Mat& gp = p->g();
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < p->cols(); ++c) gp.at(r, c) += self.grad.at(r, c0 + c);
        }
        c0 += p->cols();
      }
    };
  }
  return out;
}

Node* gather_cols(Tape& t, Node* a, const std::vector<int>& idx) {
  Node* out = t.alloc(a->rows(), int(idx.size()), a->needs_grad);
  for (int j = 0; j < int(idx.size()); ++j) {
    check(idx[j] >= 0 && idx[j] < a->cols(), "autodiff", "gather_cols index");
    for (int r = 0; r < a->rows(); ++r) out->val.at(r, j) = a->val.at(r, idx[j]);
  }
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a, idx](Node& self) {
      Mat& ga = a->g();
      for (int j = 0; j < int(idx.size()); ++j)
        for (int r = 0; r < a->rows(); ++r) ga.at(r, idx[j]) += self.grad.at(r, j);
    };
  }
  return out;
}

Node* scatter_cols(Tape& t, Node* a, const std::vector<int>& idx, int total_cols) {
  check(int(idx.size()) == a->cols(), "autodiff", "scatter_cols: idx size");
  Node* out = t.alloc(a->rows(), total_cols, a->needs_grad);
  for (int j = 0; j < a->cols(); ++j) {
    check(idx[j] >= 0 && idx[j] < total_cols, "autodiff", "scatter_cols index");
    for (int r = 0; r < a->rows(); ++r) out->val.at(r, idx[j]) = a->val.at(r, j);
  }
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a, idx](Node& self) {
      Mat& ga = a->g();
      for (int j = 0; j < a->cols(); ++j)
        for (int r = 0; r < a->rows(); ++r) ga.at(r, j) += self.grad.at(r, idx[j]);
    };
  }
  return out;
}

Node* repeat_cols(Tape& t, Node* a, const std::vector<int>& reps) {
  check(int(reps.size()) == a->cols(), "autodiff", "repeat_cols: reps size");
  int total = 0;
  for (int r : reps) {
    check(r >= 1, "autodiff", "repeat_cols: nonpositive repeat");
    total += r;
  }
  Node* out = t.alloc(a->rows(), total, a->needs_grad);
  int c0 = 0;
  for (int j = 0; j < a->cols(); ++j)
    for (int k = 0; k < reps[j]; ++k, ++c0)
      for (int r = 0; r < a->rows(); ++r) out->val.at(r, c0) = a->val.at(r, j);
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a, reps](Node& self) {
      Mat& ga = a->g();
      int c0 = 0;
      for (int j = 0; j < a->cols(); ++j)
        for (int k = 0; k < reps[j]; ++k, ++c0)
          for (int r = 0; r < a->rows(); ++r) ga.at(r, j) += self.grad.at(r, c0);
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

Node* sum_all(Tape& t, Node* a) {
  Node* out = t.alloc(1, 1, a->needs_grad);
  double s = 0.0;
  for (double v : a->val.d) s += v;
  out->val.d[0] = s;
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a](Node& self) {
      Mat& ga = a->g();
      for (double& g : ga.d) g += self.grad.d[0];
    };
  }
  return out;
}

Node* mean_all(Tape& t, Node* a) {
  Node* out = t.alloc(1, 1, a->needs_grad);
  double s = 0.0;
  for (double v : a->val.d) s += v;
  double inv = 1.0 / double(a->val.size());
  out->val.d[0] = s * inv;
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a, inv](Node& self) {
      Mat& ga = a->g();
      for (double& g : ga.d) g += self.grad.d[0] * inv;
    };
  }
  return out;
}

Node* col_mean(Tape& t, Node* a) {
  Node* out = t.alloc(1, a->cols(), a->needs_grad);
  double inv = 1.0 / double(a->rows());
  for (int c = 0; c < a->cols(); ++c) {
    double s = 0.0;
    for (int r = 0; r < a->rows(); ++r) s += a->val.at(r, c);
    out->val.d[c] = s * inv;
  }
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a, inv](Node& self) {
      Mat& ga = a->g();
      for (int r = 0; r < a->rows(); ++r)
        for (int c = 0; c < a->cols(); ++c) ga.at(r, c) += self.grad.d[c] * inv;
    };
  }
  return out;
}

Node* row_mean(Tape& t, Node* a) {
  Node* out = t.alloc(a->rows(), 1, a->needs_grad);
  double inv = 1.0 / double(a->cols());
  for (int r = 0; r < a->rows(); ++r) {
    double s = 0.0;
    for (int c = 0; c < a->cols(); ++c) s += a->val.at(r, c);
    out->val.d[r] = s * inv;
  }
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a, inv](Node& self) {
      Mat& ga = a->g();
      for (int r = 0; r < a->rows(); ++r)
        for (int c = 0; c < a->cols(); ++c) ga.at(r, c) += self.grad.d[r] * inv;
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// nn primitives

Node* softmax_rows(Tape& t, Node* a) {
  Node* out = t.alloc(a->rows(), a->cols(), a->needs_grad);
  for (int r = 0; r < a->rows(); ++r) {
    double mx = a->val.at(r, 0);
    for (int c = 1; c < a->cols(); ++c) mx = std::max(mx, a->val.at(r, c));
    double s = 0.0;
    for (int c = 0; c < a->cols(); ++c) {
      double e = std::exp(a->val.at(r, c) - mx);
      out->val.at(r, c) = e;
      s += e;
    }
    for (int c = 0; c < a->cols(); ++c) out->val.at(r, c) /= s;
  }
  if (out->needs_grad) {
    out->in = {a};
    out->back = [a](Node& self) {
      Mat& ga = a->g();
      for (int r = 0; r < a->rows(); ++r) {
        double dot = 0.0;
        for (int c = 0; c < a->cols(); ++c) dot += self.grad.at(r, c) * self.val.at(r, c);
        for (int c = 0; c < a->cols(); ++c)
          ga.at(r, c) += self.val.at(r, c) * (self.grad.at(r, c) - dot);
      }
    };
  }
  return out;
}

Node* layer_norm_cols(Tape& t, Node* a, Node* gamma, Node* beta, double eps) {
  int C = a->rows(), T = a->cols();
  check(gamma->rows() == C && gamma->cols() == 1, "autodiff", "layer_norm gamma shape");
  check(beta->rows() == C && beta->cols() == 1, "autodiff", "layer_norm beta shape");
  Node* out = t.alloc(C, T, a->needs_grad || gamma->needs_grad || beta->needs_grad);
  auto xhat = std::make_shared<Mat>(C, T);
  auto inv_std = std::make_shared<std::vector<double>>(T);
  for (int c = 0; c < T; ++c) {
    double mu = 0.0;
    for (int r = 0; r < C; ++r) mu += a->val.at(r, c);
    mu /= C;
    double var = 0.0;
    for (int r = 0; r < C; ++r) {
      double d = a->val.at(r, c) - mu;
      var += d * d;
    }
    var /= C;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[c] = is;
    for (int r = 0; r < C; ++r) {
      double xh = (a->val.at(r, c) - mu) * is;
      xhat->at(r, c) = xh;
      out->val.at(r, c) = gamma->val.d[r] * xh + beta->val.d[r];
    }
  }
  if (out->needs_grad) {
    out->in = {a, gamma, beta};
    out->back = [a, gamma, beta, xhat, inv_std, C, T](Node& self) {
      if (gamma->needs_grad) {
        Mat& gg = gamma->g();
        for (int r = 0; r < C; ++r) {
          double s = 0.0;
          for (int c = 0; c < T; ++c) s += self.grad.at(r, c) * xhat->at(r, c);
          gg.d[r] += s;
        }
      }
      if (beta->needs_grad) {
        Mat& gb = beta->g();
        for (int r = 0; r < C; ++r) {
          double s = 0.0;
          for (int c = 0; c < T; ++c) s += self.grad.at(r, c);
          gb.d[r] += s;
        }
      }
      if (a->needs_grad) {
        Mat& ga = a->g();
        for (int c = 0; c < T; ++c) {
          double sum_dxh = 0.0, sum_dxh_xh = 0.0;
          for (int r = 0; r < C; ++r) {
            double dxh = self.grad.at(r, c) * gamma->val.d[r];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xhat->at(r, c);
          }
          double is = (*inv_std)[c];
          for (int r = 0; r < C; ++r) {
            double dxh = self.grad.at(r, c) * gamma->val.d[r];
            ga.at(r, c) +=
                is * (dxh - sum_dxh / C - xhat->at(r, c) * sum_dxh_xh / C);
          }
        }
      }
    };
  }
  return out;
}

// im2col for one group; M is (Cin_g*K) x To
static void im2col(const Mat& x, int cin0, int cin_g, int K, int stride, int pad,
                   int dil, int To, Mat& M) {
  int T = x.cols;
  for (int ci = 0; ci < cin_g; ++ci) {
    for (int kk = 0; kk < K; ++kk) {
      double* mrow = &M.d[size_t(ci * K + kk) * To];
      const double* xrow = &x.d[size_t(cin0 + ci) * T];
      for (int to = 0; to < To; ++to) {
        int ti = to * stride + kk * dil - pad;
        mrow[to] = (ti >= 0 && ti < T) ? xrow[ti] : 0.0;
      }
    }
  }
}

Node* conv1d(Tape& t, Node* x, Node* w, Node* b, int kernel, int stride, int pad,
             int dilation, int groups) {
  int Cin = x->rows(), T = x->cols();
  check(Cin % groups == 0, "autodiff", "conv1d: Cin % groups");
  int cin_g = Cin / groups;
  check(w->cols() == cin_g * kernel, "autodiff", "conv1d: weight shape");
  int Cout = w->rows();
  check(Cout % groups == 0, "autodiff", "conv1d: Cout % groups");
  int cout_g = Cout / groups;
  int To = (T + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
  check(To >= 1, "autodiff", "conv1d: output length < 1");
  if (b) check(b->rows() == Cout && b->cols() == 1, "autodiff", "conv1d: bias shape");

  bool ng = x->needs_grad || w->needs_grad || (b && b->needs_grad);
  Node* out = t.alloc(Cout, To, ng);

  bool depthwise = (groups == Cin && Cout == Cin && cin_g == 1);
  if (depthwise) {
    for (int c = 0; c < Cin; ++c) {
      const double* xr = &x->val.d[size_t(c) * T];
      const double* wr = &w->val.d[size_t(c) * kernel];
      double* yr = &out->val.d[size_t(c) * To];
      double bias = b ? b->val.d[c] : 0.0;
      for (int to = 0; to < To; ++to) {
        double s = bias;
        int base = to * stride - pad;
        for (int kk = 0; kk < kernel; ++kk) {
          int ti = base + kk * dilation;
          if (ti >= 0 && ti < T) s += wr[kk] * xr[ti];
        }
        yr[to] = s;
      }
    }
  } else {
    Mat M(cin_g * kernel, To);
    for (int g = 0; g < groups; ++g) {
      im2col(x->val, g * cin_g, cin_g, kernel, stride, pad, dilation, To, M);
      ECMap Wg(&w->val.d[size_t(g * cout_g) * w->cols()], cout_g, cin_g * kernel);
      EMap Yg(&out->val.d[size_t(g * cout_g) * To], cout_g, To);
      Yg.noalias() = Wg * emap(M);
    }
    if (b)
      for (int co = 0; co < Cout; ++co)
        for (int to = 0; to < To; ++to) out->val.at(co, to) += b->val.d[co];
  }

  if (ng) {
    out->in = {x, w};
    if (b) out->in.push_back(b);
    out->back = [x, w, b, kernel, stride, pad, dilation, groups, cin_g, cout_g, To,
                 T, depthwise](Node& self) {
      int Cin = x->rows();
      if (b && b->needs_grad) {
        Mat& gb = b->g();
        for (int co = 0; co < self.grad.rows; ++co) {
          double s = 0.0;
          for (int to = 0; to < To; ++to) s += self.grad.at(co, to);
          gb.d[co] += s;
        }
      }
      if (depthwise) {
        for (int c = 0; c < Cin; ++c) {
          const double* xr = &x->val.d[size_t(c) * T];
          const double* wr = &w->val.d[size_t(c) * kernel];
          const double* gy = &self.grad.d[size_t(c) * To];
          double* gw = w->needs_grad ? &w->g().d[size_t(c) * kernel] : nullptr;
          double* gx = x->needs_grad ? &x->g().d[size_t(c) * T] : nullptr;
          for (int to = 0; to < To; ++to) {
            int base = to * stride - pad;
            double g = gy[to];
            for (int kk = 0; kk < kernel; ++kk) {
              int ti = base + kk * dilation;
              if (ti >= 0 && ti < T) {
                if (gw) gw[kk] += g * xr[ti];
                if (gx) gx[ti] += g * wr[kk];
              }
            }
          }
        }
        return;
      }
      Mat M(cin_g * kernel, To);
      Mat dM(cin_g * kernel, To);
      for (int g = 0; g < groups; ++g) {
        ECMap Wg(&w->val.d[size_t(g * cout_g) * w->cols()], cout_g, cin_g * kernel);
        ECMap dYg(&self.grad.d[size_t(g * cout_g) * To], cout_g, To);
        if (w->needs_grad) {
          im2col(x->val, g * cin_g, cin_g, kernel, stride, pad, dilation, To, M);
          EMap dWg(&w->g().d[size_t(g * cout_g) * w->cols()], cout_g, cin_g * kernel);
          dWg.noalias() += dYg * emap(M).transpose();
        }
        if (x->needs_grad) {
          emap(dM).noalias() = Wg.transpose() * dYg;
          Mat& gx = x->g();
          for (int ci = 0; ci < cin_g; ++ci) {
            for (int kk = 0; kk < kernel; ++kk) {
              const double* mrow = &dM.d[size_t(ci * kernel + kk) * To];
              double* xrow = &gx.d[size_t(g * cin_g + ci) * T];
              for (int to = 0; to < To; ++to) {
                int ti = to * stride + kk * dilation - pad;
                if (ti >= 0 && ti < T) xrow[ti] += mrow[to];
              }
            }
          }
        }
      }
    };
  }
  return out;
}

Node* avg_pool1d(Tape& t, Node* x, int factor) {
  check(factor >= 1, "autodiff", "avg_pool1d factor");
  int C = x->rows(), T = x->cols();
  int To = T / factor;
  check(To >= 1, "autodiff", "avg_pool1d: output empty");
  Node* out = t.alloc(C, To, x->needs_grad);
  double inv = 1.0 / factor;
  for (int c = 0; c < C; ++c)
    for (int to = 0; to < To; ++to) {
      double s = 0.0;
      for (int k = 0; k < factor; ++k) s += x->val.at(c, to * factor + k);
      out->val.at(c, to) = s * inv;
    }
  if (out->needs_grad) {
    out->in = {x};
    out->back = [x, factor, inv, To](Node& self) {
      Mat& gx = x->g();
      for (int c = 0; c < x->rows(); ++c)
        for (int to = 0; to < To; ++to) {
          double g = self.grad.at(c, to) * inv;
          for (int k = 0; k < factor; ++k) gx.at(c, to * factor + k) += g;
        }
    };
  }
  return out;
}

Node* embedding(Tape& t, Node* table, const std::vector<int>& ids) {
  int V = table->rows(), C = table->cols();
  Node* out = t.alloc(C, int(ids.size()), table->needs_grad);
  for (int j = 0; j < int(ids.size()); ++j) {
    check(ids[j] >= 0 && ids[j] < V, "vocab", "embedding id out of range");
    for (int c = 0; c < C; ++c) out->val.at(c, j) = table->val.at(ids[j], c);
  }
  if (out->needs_grad) {
    out->in = {table};
    out->back = [table, ids](Node& self) {
      Mat& gt = table->g();
      for (int j = 0; j < int(ids.size()); ++j)
        for (int c = 0; c < table->cols(); ++c)
          gt.at(ids[j], c) += self.grad.at(c, j);
    };
  }
  return out;
}

double grad_check(const std::function<Node*(Tape&, Node*)>& f, const Mat& x,
                  double step) {
  Param p(x.rows, x.cols);
  p.value = x;
  Mat analytic;
  {
    Tape t;
    Node* in = t.leaf(p);
    Node* loss = f(t, in);
    t.backward(loss);
    analytic = p.grad;
  }
  double worst = 0.0;
  for (size_t i = 0; i < x.d.size(); ++i) {
    Mat xp = x, xm = x;
    xp.d[i] += step;
    xm.d[i] -= step;
    double fp, fm;
    {
      Tape t;
      fp = f(t, t.constant(xp))->val.d[0];
    }
    {
      Tape t;
      fm = f(t, t.constant(xm))->val.d[0];
    }
    double num = (fp - fm) / (2 * step);
    double ana = analytic.d[i];
    double rel = std::abs(ana - num) / std::max({1e-8, std::abs(ana), std::abs(num)});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace moetts::ad
