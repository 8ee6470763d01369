#include "twoscale/phasefield.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>

namespace twoscale {

void ChemistryParams::validate() const {
  const auto pos = [](double v, const char* name) {
    if (!(v > 0)) throw SolverError(std::string("ChemistryParams: ") + name +
                                    " must be positive");
  };
  pos(D, "D");
  pos(u_star, "u_star");
  pos(u_eq, "u_eq");
  pos(k, "k");
  pos(gamma, "gamma");
  pos(lambda, "lambda");
  pos(delta, "delta");
  pos(mu_f, "mu_f");
  if (!(u_eq < u_star))
    throw SolverError("ChemistryParams: u_eq must be below u_star");
  if (!(lambda < 1)) throw SolverError("ChemistryParams: lambda must be < 1");
  if (!(delta < 0.1)) throw SolverError("ChemistryParams: delta must be small");
}

double double_well_prime(double phi) {
  return 16.0 * phi * (1.0 - phi) * (1.0 - 2.0 * phi);
}

double reaction_rate(double u, const ChemistryParams& p) {
  const double up = std::max(u, 0.0);
  return p.k * (up * up / (p.u_eq * p.u_eq) - 1.0);
}

double nonlinearity(double phi, double u, const ChemistryParams& p) {
  return -p.gamma * double_well_prime(phi) -
         4.0 * p.lambda * phi * (1.0 - phi) * reaction_rate(u, p) / p.u_star;
}

double nonlinearity_dphi(double phi, double u, const ChemistryParams& p) {
  // -gamma P''(phi) - 4 lambda (1-2 phi) f(u)/u*
  const double c = 4.0 * p.lambda * reaction_rate(u, p) / p.u_star;
  return -16.0 * p.gamma * (1.0 - 6.0 * phi + 6.0 * phi * phi) -
         c * (1.0 - 2.0 * phi);
}

namespace {

// d_phi F written as the quadratic qa z^2 + qb z + qc (qa < 0).
struct DFQuad {
  double qa, qb, qc;
  double operator()(double z) const { return (qa * z + qb) * z + qc; }
  // antiderivative with Q(0) = 0
  double anti(double z) const { return ((qa / 3.0 * z + qb / 2.0) * z + qc) * z; }
};

DFQuad df_quad(double u, const ChemistryParams& p) {
  const double c = 4.0 * p.lambda * reaction_rate(u, p) / p.u_star;
  return DFQuad{-96.0 * p.gamma, 96.0 * p.gamma + 2.0 * c, -16.0 * p.gamma - c};
}

}  // namespace

std::pair<double, double> F_split(double phi, double u, const ChemistryParams& p) {
  const DFQuad q = df_quad(u, p);
  const double total = q.anti(phi);  // = F(phi,u) since F(0,u) = 0

  const double disc = q.qb * q.qb - 4.0 * q.qa * q.qc;
  double plus = 0.0;
  if (disc > 0) {
    // downward parabola: positive strictly between the roots
    const double s = std::sqrt(disc);
    const double r1 = (-q.qb + s) / (2.0 * q.qa);  // qa < 0: r1 < r2
    const double r2 = (-q.qb - s) / (2.0 * q.qa);
    const double lo = std::max(std::min(0.0, phi), r1);
    const double hi = std::min(std::max(0.0, phi), r2);
    if (hi > lo) {
      const double seg = q.anti(hi) - q.anti(lo);
      plus = (phi >= 0 ? seg : -seg);
    }
  }
  return {plus, total - plus};
}

double lipschitz_bound_F1(double u, const ChemistryParams& p) {
  const double a = 2.0 * p.lambda * reaction_rate(u, p) / p.u_star;
  const double b = 8.0 * p.gamma;
  return std::max(std::abs(a + b), std::abs(a - b));
}

double lipschitz_sup_F1(double u, const ChemistryParams& p) {
  const DFQuad q = df_quad(u, p);
  double m = std::max(std::abs(q(0.0)), std::abs(q(1.0)));
  const double zs = -q.qb / (2.0 * q.qa);
  if (zs > 0.0 && zs < 1.0) m = std::max(m, std::abs(q(zs)));
  return m;
}

double l_lin_for(double u, const SolverKnobs& knobs, const ChemistryParams& p) {
  switch (knobs.l_lin_policy) {
    case LinPolicy::dynamic: return lipschitz_bound_F1(u, p);
    case LinPolicy::dynamic_sup: return lipschitz_sup_F1(u, p);
    case LinPolicy::fixed: return knobs.l_lin_value;
  }
  return lipschitz_bound_F1(u, p);
}

double porosity(const ScalarField& phi) { return integrate(phi); }

// ---------------------------------------------------------------------------
// FEM helpers
// ---------------------------------------------------------------------------

Eigen::VectorXd p1_lumped_mass(const TriMesh& mesh) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(mesh.n_vertex_dofs());
  for (int t = 0; t < mesh.n_elems(); ++t)
    for (int k = 0; k < 3; ++k)
      m[mesh.vertex_dof(mesh.tri(t)[k])] += mesh.area(t) / 3.0;
  return m;
}

SpMat p1_stiffness(const TriMesh& mesh, const double* coeff_per_elem) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.n_elems() * 9);
  for (int t = 0; t < mesh.n_elems(); ++t) {
    const auto g = mesh.hat_gradients(t);
    const double w = mesh.area(t) * (coeff_per_elem ? coeff_per_elem[t] : 1.0);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        trip.emplace_back(mesh.vertex_dof(mesh.tri(t)[i]),
                          mesh.vertex_dof(mesh.tri(t)[j]),
                          w * g[i].dot(g[j]));
  }
  SpMat S(mesh.n_vertex_dofs(), mesh.n_vertex_dofs());
  S.setFromTriplets(trip.begin(), trip.end());
  return S;
}

SpMat p1_mass(const TriMesh& mesh) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.n_elems() * 9);
  for (int t = 0; t < mesh.n_elems(); ++t)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        trip.emplace_back(mesh.vertex_dof(mesh.tri(t)[i]),
                          mesh.vertex_dof(mesh.tri(t)[j]),
                          mesh.area(t) / 12.0 * (i == j ? 2.0 : 1.0));
  SpMat M(mesh.n_vertex_dofs(), mesh.n_vertex_dofs());
  M.setFromTriplets(trip.begin(), trip.end());
  return M;
}

// ---------------------------------------------------------------------------
// L-scheme
// ---------------------------------------------------------------------------

namespace {

struct LschemeOp {
  MeshPtr mesh;
  double dt, scale;  // scale = dt / lambda^2
  double l_coup, l_lin;
  Eigen::VectorXd lumped;
  Eigen::SimplicialLDLT<SpMat> solver;

  LschemeOp(const MeshPtr& m, double dt_, const SolverKnobs& knobs, double llin,
            const ChemistryParams& p)
      : mesh(m), dt(dt_), scale(dt_ / (p.lambda * p.lambda)),
        l_coup(knobs.L_coup), l_lin(llin), lumped(p1_lumped_mass(*m)) {
    SpMat A = dt * p.gamma * p1_stiffness(*m);
    const double d = 1.0 + l_coup + scale * l_lin;
    for (int i = 0; i < lumped.size(); ++i) A.coeffRef(i, i) += d * lumped[i];
    solver.compute(A);
    if (solver.info() != Eigen::Success)
      throw SolverError("lscheme: factorization failed");
  }

  // nodal right-hand side r such that the system is A phi = lumped .* r
  Eigen::VectorXd rhs_nodes(const Eigen::VectorXd& prev,
                            const Eigen::VectorXd& outer,
                            const Eigen::VectorXd& inner, double u,
                            const ChemistryParams& p) const {
    Eigen::VectorXd r(prev.size());
    for (int i = 0; i < r.size(); ++i) {
      const auto [fp_prev, fm_prev] = F_split(prev[i], u, p);
      const auto [fp_in, fm_in] = F_split(inner[i], u, p);
      (void)fm_prev;
      (void)fp_in;
      r[i] = prev[i] + scale * fp_prev + l_coup * outer[i] +
             scale * (fm_in + l_lin * inner[i]);
    }
    return r;
  }

  Eigen::VectorXd step(const Eigen::VectorXd& prev, const Eigen::VectorXd& outer,
                       const Eigen::VectorXd& inner, double u,
                       const ChemistryParams& p) const {
    const Eigen::VectorXd r = rhs_nodes(prev, outer, inner, u, p);
    Eigen::VectorXd x = solver.solve(lumped.cwiseProduct(r));
    if (solver.info() != Eigen::Success)
      throw SolverError("lscheme: linear solve failed");
    return x;
  }
};

void require_same_mesh(const ScalarField& a, const ScalarField& b) {
  if (a.mesh != b.mesh || a.family != Family::p1 || b.family != Family::p1)
    throw SolverError("lscheme: fields must be p1 on the same mesh");
}

}  // namespace

ScalarField lscheme_step(const ScalarField& phi_prev_time,
                         const ScalarField& phi_outer,
                         const ScalarField& phi_inner, double u, double dt,
                         const SolverKnobs& knobs, const ChemistryParams& p) {
  require_same_mesh(phi_prev_time, phi_outer);
  require_same_mesh(phi_prev_time, phi_inner);
  const LschemeOp op(phi_prev_time.mesh, dt, knobs, l_lin_for(u, knobs, p), p);
  Eigen::VectorXd x =
      op.step(phi_prev_time.coeffs, phi_outer.coeffs, phi_inner.coeffs, u, p);
  return ScalarField(Family::p1, phi_prev_time.mesh, std::move(x));
}

MicroSolveResult solve_phasefield(const ScalarField& phi_prev_time,
                                  const ScalarField& phi_outer, double u,
                                  double dt, const SolverKnobs& knobs,
                                  const ChemistryParams& p) {
  require_same_mesh(phi_prev_time, phi_outer);
  const double l_lin = l_lin_for(u, knobs, p);
  const LschemeOp op(phi_prev_time.mesh, dt, knobs, l_lin, p);

  MicroSolveResult res;
  res.dt_bound_ok =
      dt <= p.lambda * p.lambda * (1.0 + knobs.L_coup) / lipschitz_sup_F1(u, p);

  Eigen::VectorXd inner = phi_outer.coeffs;  // natural start value
  ScalarField diff(Family::p1, phi_prev_time.mesh,
                   Eigen::VectorXd::Zero(inner.size()));
  for (int j = 1; j <= knobs.max_micro_iters; ++j) {
    Eigen::VectorXd next =
        op.step(phi_prev_time.coeffs, phi_outer.coeffs, inner, u, p);
    diff.coeffs = next - inner;
    const double eps = l2_norm(diff);
    res.eps_history.push_back(eps);
    inner = std::move(next);
    res.iters = j;
    if (eps <= knobs.tol_mu) break;
  }
  if (res.eps_history.back() > knobs.tol_mu) {
    std::string hist;
    for (double e : res.eps_history) hist += " " + std::to_string(e);
    throw SolverError("solve_phasefield: no convergence in " +
                      std::to_string(knobs.max_micro_iters) +
                      " iterations; eps history:" + hist);
  }

  for (int i = 0; i < inner.size(); ++i) {
    const double c = std::clamp(inner[i], 0.0, 1.0);
    res.max_clamp = std::max(res.max_clamp, std::abs(c - inner[i]));
    inner[i] = c;
  }
  if (res.max_clamp > knobs.bound_tol)
    throw SolverError("solve_phasefield: maximum principle violated by " +
                      std::to_string(res.max_clamp));
  res.phi = ScalarField(Family::p1, phi_prev_time.mesh, std::move(inner));
  return res;
}

}  // namespace twoscale
