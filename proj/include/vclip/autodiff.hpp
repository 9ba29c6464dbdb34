// SPDX-License-Identifier: Apache-2.0
#pragma once

// Matrix-level reverse-mode differentiation. A Tape records every node of a
// forward pass in topological order (parents always have smaller ids), so
// backward is a single reverse sweep.

#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "vclip/error.hpp"
#include "vclip/tensor.hpp"

namespace vclip::ad {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Mat<T>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Mat<T> v) { return push(std::move(v), false, nullptr); }
  Var<T> variable(Mat<T> v) { return push(std::move(v), true, nullptr); }

  // Backward is kept only if some parent needs a gradient.
  Var<T> record(Mat<T> v, std::initializer_list<Var<T>> parents, Backward fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id].needs_grad;
    return push(std::move(v), needs, needs ? std::move(fn) : nullptr);
  }

  Var<T> record(Mat<T> v, std::span<const Var<T>> parents, Backward fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id].needs_grad;
    return push(std::move(v), needs, needs ? std::move(fn) : nullptr);
  }

  const Mat<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool needs_grad(Var<T> v) const { return nodes_[v.id].needs_grad; }

  void accumulate(Var<T> v, const Mat<T>& g) {
    auto& node = nodes_[v.id];
    if (!node.needs_grad) return;
    if (!node.has_grad) {
      node.grad = g;
      node.has_grad = true;
    } else {
      node.grad += g;
    }
  }

  // Gradient of the last backward() root with respect to v (zeros if v was
  // not reached).
  Mat<T> grad(Var<T> v) const {
    const auto& node = nodes_[v.id];
    if (!node.has_grad) return Mat<T>::Zero(node.value.rows(), node.value.cols());
    return node.grad;
  }

  void backward(Var<T> root) {
    if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward root must be a scalar");
    for (auto& n : nodes_) n.has_grad = false;
    accumulate(root, Mat<T>::Ones(1, 1));
    for (int i = root.id; i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      if (node.has_grad && node.backward) node.backward(*this, node.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool needs_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  Var<T> push(Mat<T> v, bool needs, Backward fn) {
    nodes_.push_back(Node{std::move(v), Mat<T>(), needs, false, std::move(fn)});
    return Var<T>{this, static_cast<int>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
};

namespace detail {
inline void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}
}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat<T> out = a.value() * b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Mat<T> out = a.value() + b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

// a (R x C) + b (1 x C) broadcast over rows.
template <class T>
Var<T> add_row(Var<T> a, Var<T> b) {
  detail::require(b.rows() == 1 && a.cols() == b.cols(), "add_row: shape mismatch");
  Mat<T> out = a.value();
  out.rowwise() += b.value().row(0);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, Mat<T>(g.colwise().sum()));
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Mat<T> out = a.value() * s;
  return a.tape->record(std::move(out), {a},
                        [a, s](Tape<T>& t, const Mat<T>& g) { t.accumulate(a, Mat<T>(g * s)); });
}

template <class T>
Var<T> transpose(Var<T> a) {
  Mat<T> out = a.value().transpose();
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a, Mat<T>(g.transpose()));
  });
}

// tanh approximation of GELU; smooth everywhere, which keeps finite
// difference checks meaningful.
template <class T>
Var<T> gelu(Var<T> a) {
  constexpr T k = T(0.7978845608028654);
  constexpr T c = T(0.044715);
  const Mat<T>& x = a.value();
  Mat<T> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    out.data()[i] = T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v)));
  }
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, const Mat<T>& g) {
    const Mat<T>& xv = t.value(a);
    Mat<T> gx(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const T v = xv.data()[i];
      const T u = k * (v + c * v * v * v);
      const T th = std::tanh(u);
      const T du = k * (T(1) + T(3) * c * v * v);
      const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
      gx.data()[i] = g.data()[i] * d;
    }
    t.accumulate(a, gx);
  });
}

template <class T>
Mat<T> softmax_rows_value(const Mat<T>& x) {
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    T s = T(0);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      y(r, j) = std::exp(x(r, j) - m);
      s += y(r, j);
    }
    y.row(r) /= s;
  }
  return y;
}

template <class T>
Var<T> softmax_rows(Var<T> a) {
  Mat<T> y = softmax_rows_value(a.value());
  return a.tape->record(y, {a}, [a, y](Tape<T>& t, const Mat<T>& g) {
    Mat<T> gx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const T dot = y.row(r).dot(g.row(r));
      gx.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    t.accumulate(a, gx);
  });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  detail::require(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.rows() == 1 &&
                      beta.cols() == x.cols(),
                  "layer_norm: parameter shape mismatch");
  const Mat<T>& xv = x.value();
  const auto n = xv.cols();
  Mat<T> xhat(xv.rows(), n);
  std::vector<T> inv_std(static_cast<std::size_t>(xv.rows()));
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    xhat.row(r) = ((xv.row(r).array() - mean) * is).matrix();
  }
  Mat<T> out = xhat;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r) = out.row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, n](Tape<T>& t, const Mat<T>& g) {
        const Mat<T>& gv = t.value(gamma);
        if (t.needs_grad(x)) {
          Mat<T> gx(g.rows(), n);
          for (Eigen::Index r = 0; r < g.rows(); ++r) {
            Eigen::Matrix<T, 1, Eigen::Dynamic> gh = g.row(r).cwiseProduct(gv.row(0));
            const T m1 = gh.mean();
            const T m2 = gh.dot(xhat.row(r)) / static_cast<T>(n);
            gx.row(r) = ((gh.array() - m1 - xhat.row(r).array() * m2) *
                         inv_std[static_cast<std::size_t>(r)])
                            .matrix();
          }
          t.accumulate(x, gx);
        }
        if (t.needs_grad(gamma)) t.accumulate(gamma, Mat<T>(g.cwiseProduct(xhat).colwise().sum()));
        if (t.needs_grad(beta)) t.accumulate(beta, Mat<T>(g.colwise().sum()));
      });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
  }
  Mat<T> out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return parts.front().tape->record(std::move(out), std::span<const Var<T>>(parts),
                                    [parts, offsets](Tape<T>& t, const Mat<T>& g) {
                                      for (std::size_t i = 0; i < parts.size(); ++i) {
                                        if (!t.needs_grad(parts[i])) continue;
                                        t.accumulate(parts[i],
                                                     Mat<T>(g.middleCols(offsets[i], parts[i].cols())));
                                      }
                                    });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const auto cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == cols, "concat_rows: column count mismatch");
    rows += p.rows();
  }
  Mat<T> out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return parts.front().tape->record(std::move(out), std::span<const Var<T>>(parts),
                                    [parts, offsets](Tape<T>& t, const Mat<T>& g) {
                                      for (std::size_t i = 0; i < parts.size(); ++i) {
                                        if (!t.needs_grad(parts[i])) continue;
                                        t.accumulate(parts[i],
                                                     Mat<T>(g.middleRows(offsets[i], parts[i].rows())));
                                      }
                                    });
}

template <class T>
Var<T> slice_cols(Var<T> a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Mat<T> out = a.value().middleCols(start, count);
  const auto rows = a.rows();
  const auto cols = a.cols();
  return a.tape->record(std::move(out), {a},
                        [a, start, count, rows, cols](Tape<T>& t, const Mat<T>& g) {
                          Mat<T> ga = Mat<T>::Zero(rows, cols);
                          ga.middleCols(start, count) = g;
                          t.accumulate(a, ga);
                        });
}

template <class T>
Var<T> slice_rows(Var<T> a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Mat<T> out = a.value().middleRows(start, count);
  const auto rows = a.rows();
  const auto cols = a.cols();
  return a.tape->record(std::move(out), {a},
                        [a, start, count, rows, cols](Tape<T>& t, const Mat<T>& g) {
                          Mat<T> ga = Mat<T>::Zero(rows, cols);
                          ga.middleRows(start, count) = g;
                          t.accumulate(a, ga);
                        });
}

// Column-wise mean over rows: (R x C) -> (1 x C).
template <class T>
Var<T> mean_rows(Var<T> a) {
  detail::require(a.rows() >= 1, "mean_rows: empty input");
  const auto rows = a.rows();
  Mat<T> out = a.value().colwise().sum() / static_cast<T>(rows);
  return a.tape->record(std::move(out), {a}, [a, rows](Tape<T>& t, const Mat<T>& g) {
    Mat<T> ga = g.replicate(rows, 1) / static_cast<T>(rows);
    t.accumulate(a, ga);
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  Mat<T> out(1, 1);
  out(0, 0) = a.value().sum();
  const auto rows = a.rows();
  const auto cols = a.cols();
  return a.tape->record(std::move(out), {a}, [a, rows, cols](Tape<T>& t, const Mat<T>& g) {
    t.accumulate(a, Mat<T>(Mat<T>::Constant(rows, cols, g(0, 0))));
  });
}

// Sum over rows of -log softmax(logits[r])[targets[r]]; returns 1 x 1.
template <class T>
Var<T> cross_entropy_sum(Var<T> logits, std::vector<int> targets) {
  const Mat<T>& x = logits.value();
  detail::require(static_cast<Eigen::Index>(targets.size()) == x.rows(),
                  "cross_entropy: target count differs from rows");
  Mat<T> probs = softmax_rows_value(x);
  Mat<T> out(1, 1);
  T total = T(0);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    detail::require(y >= 0 && y < x.cols(), "cross_entropy: target out of range");
    const T m = x.row(r).maxCoeff();
    const T lse = m + std::log((x.row(r).array() - m).exp().sum());
    total += lse - x(r, y);
  }
  out(0, 0) = total;
  return logits.tape->record(std::move(out), {logits},
                             [logits, probs, targets](Tape<T>& t, const Mat<T>& g) {
                               Mat<T> gx = probs;
                               for (Eigen::Index r = 0; r < gx.rows(); ++r) {
                                 gx(r, targets[static_cast<std::size_t>(r)]) -= T(1);
                               }
                               t.accumulate(logits, Mat<T>(gx * g(0, 0)));
                             });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_row(matmul(x, w), b);
}

}  // namespace vclip::ad
