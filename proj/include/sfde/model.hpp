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

// Model specifications for the four system classes: non-degenerate SDEs,
// neutral SDEs, Galerkin-truncated semilinear SPDEs (which become
// non-degenerate models on R^N) and stochastic Hamiltonian systems.

#include "sfde/functional.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace sfde {

enum class ModelKind { nondegenerate, neutral, hamiltonian };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::nondegenerate: return "nondegenerate";
    case ModelKind::neutral: return "neutral";
    case ModelKind::hamiltonian: return "hamiltonian";
  }
  return "?";
}

/// Assumption constants declared alongside a model. Unset entries do not apply.
struct DeclaredConstants {
  std::optional<double> K1;             // one-sided monotonicity of b
  std::optional<double> K2;             // HS-Lipschitz of sigma, squared
  std::optional<double> sigma_max;      // sup ||sigma||
  std::optional<double> sigma_inv_max;  // sup ||sigma^{-1}||
  std::optional<double> delta;          // Lipschitz constant of the neutral term
  std::optional<double> L;              // neutral monotonicity
  std::optional<double> L0;             // Galerkin Lipschitz constant
  std::optional<double> L1;             // hamiltonian drift
  std::optional<double> L2;             // hamiltonian diffusion
  std::optional<double> beta;           // hamiltonian Lyapunov weight
};

/// Spectral data kept on a Galerkin-truncated model.
struct GalerkinInfo {
  std::vector<double> eigenvalues;
  double alpha = 0.5;
  // eigenvalue law lambda_i = scale * i^exponent when the sequence is analytic
  std::optional<double> law_scale;
  std::optional<double> law_exponent;
};

class ModelSpec {
 public:
  ModelSpec() = default;

  ModelSpec(ModelKind kind, int dim, double r, VectorFunctional drift, DiffusionFunctional diffusion,
            DeclaredConstants constants = {}, std::optional<VectorFunctional> neutral = std::nullopt,
            double lambda = 1.0, std::string name = {})
      : kind_(kind),
        dim_(dim),
        r_(r),
        lambda_(lambda),
        drift_(std::move(drift)),
        diffusion_(std::move(diffusion)),
        neutral_(std::move(neutral)),
        constants_(constants),
        name_(std::move(name)) {
    require(dim >= 1 && dim <= kMaxDim, "model dimension out of range");
    require(r > 0 && std::isfinite(r), "memory rate r must be positive");
    require(drift_.dim() == dim, "drift dimension does not match the model");
    require(diffusion_.dim() == dim, "diffusion dimension does not match the model");
    if (kind == ModelKind::neutral) {
      require(neutral_.has_value(), "neutral model needs a neutral functional G");
      require(neutral_->dim() == dim, "neutral functional dimension mismatch");
    } else {
      require(!neutral_.has_value(), "only neutral models carry a neutral functional");
    }
    if (kind == ModelKind::hamiltonian) require(lambda > 0, "hamiltonian lambda must be positive");
    register_sources();
  }

  ModelKind kind() const { return kind_; }
  int dim() const { return dim_; }
  int blocks() const { return kind_ == ModelKind::hamiltonian ? 2 : 1; }
  int state_dim() const { return dim_ * blocks(); }
  double r() const { return r_; }
  double lambda() const { return lambda_; }
  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }
  const VectorFunctional& drift_functional() const { return drift_; }
  const DiffusionFunctional& diffusion_functional() const { return diffusion_; }
  const std::optional<VectorFunctional>& neutral_functional() const { return neutral_; }
  const DeclaredConstants& constants() const { return constants_; }
  DeclaredConstants& constants() { return constants_; }
  const std::vector<double>& kernels() const { return kernels_; }
  double max_delay() const { return max_delay_; }
  const std::optional<GalerkinInfo>& galerkin() const { return galerkin_; }
  void set_galerkin(GalerkinInfo g) { galerkin_ = std::move(g); }

  template <class View>
  Vec drift(const View* const* blocks) const {
    return drift_.eval(blocks);
  }
  template <class View>
  Mat diffusion(const View* const* blocks) const {
    return diffusion_.eval(blocks);
  }
  template <class View>
  Vec neutral(const View* const* blocks) const {
    if (!neutral_) throw UsageError("neutral term requested from a " + std::string(to_string(kind_)) + " model");
    return neutral_->eval(blocks);
  }

  /// Preconditions for coupling constructions: ellipticity bounds and, for
  /// neutral models, delta in (0,1).
  void check_for_coupling() const {
    require(constants_.sigma_max && *constants_.sigma_max > 0 && std::isfinite(*constants_.sigma_max),
            "model must declare a positive finite sigma bound");
    require(constants_.sigma_inv_max && *constants_.sigma_inv_max > 0 &&
                std::isfinite(*constants_.sigma_inv_max),
            "model must declare a positive finite sigma-inverse bound");
    check_for_simulation();
    if (kind_ == ModelKind::hamiltonian)
      require(constants_.beta && *constants_.beta > 0, "hamiltonian model must declare beta > 0");
  }

  void check_for_simulation() const {
    if (kind_ == ModelKind::neutral)
      require(constants_.delta && *constants_.delta > 0 && *constants_.delta < 1,
              "neutral model must declare delta in (0,1)");
  }

 private:
  void register_sources() {
    auto reg = [&](Source& s) {
      require(s.block >= 0 && s.block < blocks(), "source refers to a missing block");
      if (s.kind == SourceKind::delay) {
        require(s.tau >= 0 && std::isfinite(s.tau), "delay must be nonnegative");
        max_delay_ = std::max(max_delay_, s.tau);
      } else if (s.kind == SourceKind::fading) {
        require(s.kappa > r_, "fading kernel rate must exceed r");
        auto it = std::find_if(kernels_.begin(), kernels_.end(),
                               [&](double k) { return std::abs(k - s.kappa) < 1e-14; });
        if (it == kernels_.end()) {
          kernels_.push_back(s.kappa);
          s.kernel = kernels_.size() - 1;
        } else {
          s.kernel = static_cast<std::size_t>(it - kernels_.begin());
        }
      }
    };
    for (auto& t : drift_.terms())
      if (t.kind != TermKind::constant) reg(t.source);
    for (auto& m : diffusion_.modulations()) reg(m.source);
    if (neutral_)
      for (auto& t : neutral_->terms())
        if (t.kind != TermKind::constant) reg(t.source);
  }

  ModelKind kind_ = ModelKind::nondegenerate;
  int dim_ = 1;
  double r_ = 1.0;
  double lambda_ = 1.0;
  VectorFunctional drift_;
  DiffusionFunctional diffusion_;
  std::optional<VectorFunctional> neutral_;
  DeclaredConstants constants_;
  std::optional<GalerkinInfo> galerkin_;
  std::string name_;
  std::vector<double> kernels_;
  double max_delay_ = 0.0;
};

/// Initial condition of a system: one segment per block.
struct SystemSegment {
  std::vector<Segment> blocks;

  SystemSegment() = default;
  explicit SystemSegment(Segment s) { blocks.push_back(std::move(s)); }
  SystemSegment(Segment x, Segment y) {
    blocks.push_back(std::move(x));
    blocks.push_back(std::move(y));
  }
  std::size_t size() const { return blocks.size(); }
  const Segment& operator[](std::size_t i) const { return blocks[i]; }

  SystemSegment plus(const SystemSegment& o, double c = 1.0) const {
    require(o.size() == size(), "block count mismatch");
    SystemSegment out;
    for (std::size_t i = 0; i < size(); ++i) out.blocks.push_back(blocks[i].plus(o.blocks[i], c));
    return out;
  }
  SystemSegment minus(const SystemSegment& o) const { return plus(o, -1.0); }
  SystemSegment scaled(double c) const {
    SystemSegment out;
    for (const auto& b : blocks) out.blocks.push_back(b.scaled(c));
    return out;
  }
};

/// sum over blocks of ||a_b - b_b||_r.
inline double block_distance(const SystemSegment& a, const SystemSegment& b, double r) {
  require(a.size() == b.size(), "block count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += weighted_norm(a[i].minus(b[i]), r);
  return s;
}

/// sum over blocks of ||a_b - b_b||_r^2.
inline double block_distance_sq(const SystemSegment& a, const SystemSegment& b, double r) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double n = weighted_norm(a[i].minus(b[i]), r);
    s += n * n;
  }
  return s;
}

/// Path states for every block of a model started from `init`.
inline std::vector<PathState> make_path_states(const ModelSpec& m, const SystemSegment& init, double dt,
                                               double t0 = 0.0) {
  require(static_cast<int>(init.size()) == m.blocks(),
          "model of kind " + std::string(to_string(m.kind())) + " needs " + std::to_string(m.blocks()) +
              " initial segment(s)");
  std::vector<PathState> out;
  for (const auto& s : init.blocks) {
    require(s.dim() == m.dim(), "segment dimension does not match the model");
    out.emplace_back(s, m.r(), dt, m.kernels(), m.max_delay(), t0);
  }
  return out;
}

namespace detail {
inline double system_norm(const std::vector<PathState>& st) {
  double s = 0.0;
  for (const auto& p : st) s += p.norm();
  return s;
}
inline void block_ptrs(const std::vector<PathState>& st, const PathState* out[2]) {
  out[0] = &st[0];
  out[1] = st.size() > 1 ? &st[1] : &st[0];
}
}  // namespace detail

/// Drift at segment(s): b(xi), or b(xi, eta) for hamiltonian models.
inline Vec eval_drift(const ModelSpec& m, const SystemSegment& segs) {
  const auto st = make_path_states(m, segs, segs[0].dt());
  const PathState* b[2];
  detail::block_ptrs(st, b);
  Vec v = m.drift(b);
  if (!v.allFinite()) throw ModelEvaluationError("drift is not finite", detail::system_norm(st));
  return v;
}

inline Mat eval_diffusion(const ModelSpec& m, const SystemSegment& segs) {
  const auto st = make_path_states(m, segs, segs[0].dt());
  const PathState* b[2];
  detail::block_ptrs(st, b);
  Mat s = m.diffusion(b);
  if (!s.allFinite()) throw ModelEvaluationError("diffusion is not finite", detail::system_norm(st));
  return s;
}

inline Vec eval_neutral(const ModelSpec& m, const Segment& seg) {
  if (m.kind() != ModelKind::neutral) throw UsageError("eval_neutral called on a non-neutral model");
  const auto st = make_path_states(m, SystemSegment(seg), seg.dt());
  const PathState* b[2];
  detail::block_ptrs(st, b);
  Vec v = m.neutral(b);
  if (!v.allFinite()) throw ModelEvaluationError("neutral term is not finite", detail::system_norm(st));
  return v;
}

/// Solves sigma * h = u; throws on a (numerically) singular sigma.
inline Vec solve_diffusion(const Mat& sigma, const Vec& u) {
  if (sigma.rows() == 1) {
    if (!(std::abs(sigma(0, 0)) > 1e-300)) throw DiffusionSingularError("diffusion matrix is singular");
    return u / sigma(0, 0);
  }
  Eigen::FullPivLU<Mat> lu(sigma);
  lu.setThreshold(1e-14);
  if (!lu.isInvertible()) throw DiffusionSingularError("diffusion matrix is singular");
  return lu.solve(u);
}

}  // namespace sfde
