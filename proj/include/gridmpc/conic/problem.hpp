#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gridmpc/error.hpp"

namespace gridmpc::conic {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, Index>;
using Triplet = Eigen::Triplet<double, Index>;

/// Sparse affine expression  sum_k coeff_k * x[var_k] + constant.
struct AffineExpr {
  std::vector<std::pair<Index, double>> terms;
  double constant = 0.0;

  AffineExpr() = default;
  explicit AffineExpr(double c) : constant(c) {}

  AffineExpr& add(Index var, double coeff) {
    if (coeff != 0.0) terms.emplace_back(var, coeff);
    return *this;
  }
  AffineExpr& plus(double c) {
    constant += c;
    return *this;
  }
  static AffineExpr var(Index v, double coeff = 1.0) {
    AffineExpr e;
    e.add(v, coeff);
    return e;
  }
  double eval(const Vector& x) const {
    double acc = constant;
    for (const auto& [v, c] : terms) acc += c * x[v];
    return acc;
  }
};

/// Convex program in the canonical form
///
///   minimize    1/2 x' diag(quad) x + linear' x
///   subject to  eq_matrix x = eq_rhs
///               cone_rhs - cone_matrix x  in  R+^orthant_dim x Q^{d_1} x ...
///
/// Cone rows are ordered: all orthant rows first, then each second-order cone
/// slice contiguously, first row of a slice being the norm bound.
struct ConicProblem {
  Vector quad;
  Vector linear;
  SparseMatrix eq_matrix;
  Vector eq_rhs;
  SparseMatrix cone_matrix;
  Vector cone_rhs;
  Index orthant_dim = 0;
  std::vector<Index> soc_dims;

  std::vector<std::string> var_names;
  std::vector<std::string> eq_names;
  std::vector<std::string> orthant_names;
  std::vector<std::string> soc_names;

  Index num_vars() const { return quad.size(); }
  Index num_eq() const { return eq_rhs.size(); }
  Index num_cone_rows() const { return cone_rhs.size(); }
  Index soc_offset(std::size_t k) const {
    Index off = orthant_dim;
    for (std::size_t i = 0; i < k; ++i) off += soc_dims[i];
    return off;
  }

  void validate() const {
    const Index n = num_vars();
    if (linear.size() != n || static_cast<Index>(var_names.size()) != n)
      throw ConfigError("conic problem: objective size mismatch");
    if (eq_matrix.rows() != eq_rhs.size() || eq_matrix.cols() != n)
      throw ConfigError("conic problem: equality block size mismatch");
    if (cone_matrix.rows() != cone_rhs.size() || cone_matrix.cols() != n)
      throw ConfigError("conic problem: cone block size mismatch");
    Index rows = orthant_dim;
    for (Index d : soc_dims) {
      if (d < 2) throw ConfigError("conic problem: cone slice dimension < 2");
      rows += d;
    }
    if (rows != cone_rhs.size())
      throw ConfigError("conic problem: cone dimensions do not cover rows");
    for (Index i = 0; i < n; ++i)
      if (!(quad[i] >= 0.0))
        throw ConfigError("conic problem: quadratic term must be PSD");
  }

  double objective(const Vector& x) const {
    return 0.5 * x.dot(quad.cwiseProduct(x)) + linear.dot(x);
  }
};

/// Incremental construction of a ConicProblem by named variables/constraints.
class ProblemBuilder {
 public:
  Index add_variable(std::string name) {
    names_.push_back(std::move(name));
    quad_.push_back(0.0);
    linear_.push_back(0.0);
    return static_cast<Index>(names_.size()) - 1;
  }

  /// Adds 1/2 * coeff * x_v^2 to the objective.
  void add_quadratic(Index v, double coeff) { quad_.at(v) += coeff; }
  void add_linear(Index v, double coeff) { linear_.at(v) += coeff; }

  /// lhs == 0
  Index add_equality(const AffineExpr& lhs, std::string name) {
    const Index row = static_cast<Index>(eq_rhs_.size());
    for (const auto& [v, c] : lhs.terms) eq_.emplace_back(row, v, c);
    eq_rhs_.push_back(-lhs.constant);
    eq_names_.push_back(std::move(name));
    return row;
  }

  /// lhs <= 0
  Index add_nonpositive(const AffineExpr& lhs, std::string name) {
    const Index row = static_cast<Index>(orth_rhs_.size());
    for (const auto& [v, c] : lhs.terms) orth_.emplace_back(row, v, c);
    orth_rhs_.push_back(-lhs.constant);
    orth_names_.push_back(std::move(name));
    return row;
  }

  /// || (rows[1], ..., rows[d-1]) || <= rows[0]
  Index add_soc(const std::vector<AffineExpr>& rows, std::string name) {
    if (rows.size() < 2) throw ConfigError("second-order cone needs >= 2 rows");
    const Index slice = static_cast<Index>(soc_dims_.size());
    for (const auto& r : rows) {
      const Index row = static_cast<Index>(soc_rhs_.size());
      // cone_rhs - cone_matrix x = r(x)
      for (const auto& [v, c] : r.terms) soc_.emplace_back(row, v, -c);
      soc_rhs_.push_back(r.constant);
    }
    soc_dims_.push_back(static_cast<Index>(rows.size()));
    soc_names_.push_back(std::move(name));
    return slice;
  }

  Index num_vars() const { return static_cast<Index>(names_.size()); }

  ConicProblem build() const {
    ConicProblem p;
    const Index n = num_vars();
    p.quad = Eigen::Map<const Vector>(quad_.data(), n);
    p.linear = Eigen::Map<const Vector>(linear_.data(), n);
    p.var_names = names_;

    p.eq_matrix.resize(static_cast<Index>(eq_rhs_.size()), n);
    p.eq_matrix.setFromTriplets(eq_.begin(), eq_.end());
    p.eq_rhs = Eigen::Map<const Vector>(eq_rhs_.data(),
                                        static_cast<Index>(eq_rhs_.size()));
    p.eq_names = eq_names_;

    const Index l = static_cast<Index>(orth_rhs_.size());
    const Index ms = static_cast<Index>(soc_rhs_.size());
    std::vector<Triplet> cone;
    cone.reserve(orth_.size() + soc_.size());
    for (const auto& t : orth_) cone.push_back(t);
    for (const auto& t : soc_) cone.emplace_back(t.row() + l, t.col(), t.value());
    p.cone_matrix.resize(l + ms, n);
    p.cone_matrix.setFromTriplets(cone.begin(), cone.end());
    p.cone_rhs.resize(l + ms);
    for (Index i = 0; i < l; ++i) p.cone_rhs[i] = orth_rhs_[static_cast<std::size_t>(i)];
    for (Index i = 0; i < ms; ++i) p.cone_rhs[l + i] = soc_rhs_[static_cast<std::size_t>(i)];
    p.orthant_dim = l;
    p.soc_dims = soc_dims_;
    p.orthant_names = orth_names_;
    p.soc_names = soc_names_;
    return p;
  }

 private:
  std::vector<std::string> names_;
  std::vector<double> quad_, linear_;
  std::vector<Triplet> eq_;
  std::vector<double> eq_rhs_;
  std::vector<std::string> eq_names_;
  std::vector<Triplet> orth_;
  std::vector<double> orth_rhs_;
  std::vector<std::string> orth_names_;
  std::vector<Triplet> soc_;
  std::vector<double> soc_rhs_;
  std::vector<Index> soc_dims_;
  std::vector<std::string> soc_names_;
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, MaxIter };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    case SolveStatus::MaxIter: return "MaxIter";
  }
  return "Unknown";
}

struct Tolerances {
  double feas = 1e-6;  ///< primal and dual residual
  double gap = 1e-8;   ///< relative duality gap
};

/// Primal/dual solution. Duals follow the Lagrangian
///   L = f + eq_dual'(eq_matrix x - eq_rhs) + cone_dual'(cone_matrix x - cone_rhs)
/// so cone_dual lies in the (self-dual) cone, i.e. lambda >= 0 on the orthant.
struct ConicSolution {
  SolveStatus status = SolveStatus::MaxIter;
  Vector x;
  Vector eq_dual;
  Vector cone_dual;
  Vector cone_slack;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
  double relative_gap = 0.0;
  double objective = 0.0;
  double solve_time = 0.0;
  int iterations = 0;
  std::string backend;
};

/// Any conforming backend returns duals in the convention above and, when
/// status is Optimal, residuals within the requested tolerances.
class ConicBackend {
 public:
  virtual ~ConicBackend() = default;
  virtual ConicSolution solve(const ConicProblem& problem,
                              const Tolerances& tol) const = 0;
  virtual std::string name() const = 0;
};

}  // namespace gridmpc::conic
