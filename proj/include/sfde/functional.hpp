/*
   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

// Coefficient functionals built from point evaluation xi(0), bounded delays
// xi(-tau), fading integrals int e^{kappa theta} xi(theta) dtheta, affine maps
// and tanh saturation. Every piece has an explicit Lipschitz constant with
// respect to ||.||_r, which is what the assumption validators certify against.

#include "sfde/history.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace sfde {

enum class SourceKind { point, delay, fading };

struct Source {
  SourceKind kind = SourceKind::point;
  double tau = 0.0;    // delay
  double kappa = 0.0;  // fading rate
  int block = 0;       // 0 = X, 1 = Y (hamiltonian pairs)
  std::size_t kernel = 0;  // index into the model's kernel list, set on registration

  static Source point(int block = 0) { return {SourceKind::point, 0.0, 0.0, block, 0}; }
  static Source delay(double tau, int block = 0) { return {SourceKind::delay, tau, 0.0, block, 0}; }
  static Source fading(double kappa, int block = 0) { return {SourceKind::fading, 0.0, kappa, block, 0}; }

  /// Lipschitz constant of xi -> source(xi) w.r.t. ||.||_r.
  double lipschitz(double r) const {
    switch (kind) {
      case SourceKind::point: return 1.0;
      case SourceKind::delay: return std::exp(r * tau);
      case SourceKind::fading: return 1.0 / (kappa - r);
    }
    return 0.0;
  }

  template <class View>
  Vec value(const View& v) const {
    switch (kind) {
      case SourceKind::point: return v.current();
      case SourceKind::delay: return v.delayed(tau);
      case SourceKind::fading: return v.fading(kernel);
    }
    return v.current();
  }
};

/// Largest singular value.
inline double operator_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

inline double smallest_singular_value(const Mat& m) {
  if (m.rows() == 1 && m.cols() == 1) return std::abs(m(0, 0));
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

enum class TermKind { linear, saturated, constant };

/// One additive piece of a vector functional:
///   linear:    M * source(xi)
///   saturated: a .* tanh(M * source(xi) + offset)
///   constant:  c
struct Term {
  TermKind kind = TermKind::linear;
  Source source;
  Mat matrix;
  Vec amplitude;
  Vec offset;

  static Term linear(Mat m, Source s) {
    Term t;
    t.kind = TermKind::linear;
    t.matrix = std::move(m);
    t.source = s;
    return t;
  }
  static Term saturated(Vec amp, Mat m, Source s, Vec offset = Vec()) {
    Term t;
    t.kind = TermKind::saturated;
    t.amplitude = std::move(amp);
    t.matrix = std::move(m);
    t.source = s;
    t.offset = offset.size() ? std::move(offset) : zeros(static_cast<int>(t.matrix.rows()));
    return t;
  }
  static Term constant(Vec c) {
    Term t;
    t.kind = TermKind::constant;
    t.offset = std::move(c);
    return t;
  }

  int out_dim() const {
    return kind == TermKind::constant ? static_cast<int>(offset.size()) : static_cast<int>(matrix.rows());
  }

  double lipschitz(double r) const {
    switch (kind) {
      case TermKind::linear: return operator_norm(matrix) * source.lipschitz(r);
      case TermKind::saturated:
        return amplitude.cwiseAbs().maxCoeff() * operator_norm(matrix) * source.lipschitz(r);
      case TermKind::constant: return 0.0;
    }
    return 0.0;
  }

  template <class View>
  void accumulate(Vec& out, const View* const* blocks) const {
    switch (kind) {
      case TermKind::constant: out += offset; return;
      case TermKind::linear: out.noalias() += matrix * source.value(*blocks[source.block]); return;
      case TermKind::saturated: {
        Vec u = matrix * source.value(*blocks[source.block]) + offset;
        for (int i = 0; i < u.size(); ++i) out[i] += amplitude[i] * std::tanh(u[i]);
        return;
      }
    }
  }
};

/// Sum of terms, R^d-valued.
class VectorFunctional {
 public:
  VectorFunctional() = default;
  explicit VectorFunctional(int out_dim, std::vector<Term> terms = {})
      : dim_(out_dim), terms_(std::move(terms)) {
    for (const auto& t : terms_) require(t.out_dim() == dim_, "term output dimension mismatch");
  }

  int dim() const { return dim_; }
  bool empty() const { return terms_.empty(); }
  const std::vector<Term>& terms() const { return terms_; }
  std::vector<Term>& terms() { return terms_; }
  void add(Term t) {
    require(t.out_dim() == dim_, "term output dimension mismatch");
    terms_.push_back(std::move(t));
  }

  /// Sum of term Lipschitz constants, optionally restricted to one block.
  double lipschitz(double r, int block = -1) const {
    double s = 0.0;
    for (const auto& t : terms_)
      if (t.kind != TermKind::constant && (block < 0 || t.source.block == block)) s += t.lipschitz(r);
    return s;
  }

  template <class View>
  Vec eval(const View* const* blocks) const {
    Vec out = zeros(dim_);
    for (const auto& t : terms_) t.accumulate(out, blocks);
    return out;
  }

 private:
  int dim_ = 1;
  std::vector<Term> terms_;
};

/// sigma(xi) = S0 + sum_j eps_j tanh(<w_j, source_j(xi)>) B_j.
class DiffusionFunctional {
 public:
  struct Modulation {
    double epsilon = 0.0;
    Vec weights;
    Source source;
    Mat matrix;
  };

  DiffusionFunctional() = default;
  explicit DiffusionFunctional(Mat base, std::vector<Modulation> mods = {})
      : base_(std::move(base)), mods_(std::move(mods)) {
    require(base_.rows() == base_.cols(), "diffusion base must be square");
    for (const auto& m : mods_)
      require(m.matrix.rows() == base_.rows() && m.matrix.cols() == base_.cols(),
              "diffusion modulation matrix has wrong shape");
  }

  static DiffusionFunctional scalar(int d, double sigma0) {
    return DiffusionFunctional(sigma0 * Mat::Identity(d, d));
  }

  int dim() const { return static_cast<int>(base_.rows()); }
  const Mat& base() const { return base_; }
  const std::vector<Modulation>& modulations() const { return mods_; }
  std::vector<Modulation>& modulations() { return mods_; }
  bool is_constant() const { return mods_.empty(); }

  /// ||sigma||_op <= ||S0|| + sum |eps_j| ||B_j||.
  double operator_bound() const {
    double s = operator_norm(base_);
    for (const auto& m : mods_) s += std::abs(m.epsilon) * operator_norm(m.matrix);
    return s;
  }

  /// Lower bound on the smallest singular value by perturbation of S0.
  double min_singular_bound() const {
    double s = smallest_singular_value(base_);
    for (const auto& m : mods_) s -= std::abs(m.epsilon) * operator_norm(m.matrix);
    return s;
  }

  /// ||sigma(xi) - sigma(eta)||_HS <= (this) * ||xi - eta||_r, per block if asked.
  double hs_lipschitz(double r, int block = -1) const {
    double s = 0.0;
    for (const auto& m : mods_)
      if (block < 0 || m.source.block == block)
        s += std::abs(m.epsilon) * m.weights.norm() * m.source.lipschitz(r) * m.matrix.norm();
    return s;
  }

  template <class View>
  Mat eval(const View* const* blocks) const {
    Mat out = base_;
    for (const auto& m : mods_) {
      const double u = m.weights.dot(m.source.value(*blocks[m.source.block]));
      out += (m.epsilon * std::tanh(u)) * m.matrix;
    }
    return out;
  }

 private:
  Mat base_;
  std::vector<Modulation> mods_;
};

}  // namespace sfde
