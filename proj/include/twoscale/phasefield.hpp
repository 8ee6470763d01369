#pragma once

#include <utility>
#include <vector>

#include "twoscale/fem.hpp"
#include "twoscale/fields.hpp"

namespace twoscale {

/// Chemistry and interface constants shared by all scales.
struct ChemistryParams {
  double D = 1.0;        // solute diffusivity
  double u_star = 1.0;   // mineral concentration
  double u_eq = 0.5;     // equilibrium concentration
  double k = 1.0;        // reaction constant
  double gamma = 0.01;   // interface diffusivity
  double lambda = 0.08;  // diffuse-interface width
  double delta = 1e-4;   // regularization of the cell problems
  double mu_f = 1.0;     // fluid viscosity in the permeability cell problem

  void validate() const;
};

/// How the linearization parameter of the micro iteration is chosen.
enum class LinPolicy {
  dynamic,      // max(|2*lambda*f(u)/u* + 8*gamma|, |2*lambda*f(u)/u* - 8*gamma|)
  dynamic_sup,  // sup over [0,1] of |d_phi F|, the constant of the theory
  fixed,
};

struct SolverKnobs {
  double L_coup = 1e-4;                        // coupling stabilization
  LinPolicy l_lin_policy = LinPolicy::dynamic;
  double l_lin_value = 0.0;                    // used by LinPolicy::fixed
  double tol_mu = 1e-8;                        // micro stopping threshold
  int max_micro_iters = 500;
  double bound_tol = 1e-9;                     // allowed clamp past [0,1]
};

/// P'(phi) for the double well P(phi) = 8 phi^2 (1-phi)^2.
double double_well_prime(double phi);

/// Reaction rate f(u) = k ([u]_+^2 / u_eq^2 - 1).
double reaction_rate(double u, const ChemistryParams& p);

/// F(phi, u) = -gamma P'(phi) - 4 lambda phi (1-phi) f(u)/u*.
double nonlinearity(double phi, double u, const ChemistryParams& p);

/// d/dphi of F; a downward parabola in phi.
double nonlinearity_dphi(double phi, double u, const ChemistryParams& p);

/// Closed-form monotone splitting F = F_plus + F_minus where F_plus
/// integrates the positive part of d_phi F from 0 and F_minus the negative
/// part. F_plus is nondecreasing, F_minus nonincreasing, both vanish at 0.
std::pair<double, double> F_split(double phi, double u, const ChemistryParams& p);

/// Linearization parameter used in the experiments, evaluated dynamically
/// from the current concentration.
double lipschitz_bound_F1(double u, const ChemistryParams& p);

/// sup over phi in [0,1] of |d_phi F(phi, u)|; the bound the convergence
/// theory and the discrete maximum principle ask for.
double lipschitz_sup_F1(double u, const ChemistryParams& p);

double l_lin_for(double u, const SolverKnobs& knobs, const ChemistryParams& p);

/// Integral of the phase field over the unit cell.
double porosity(const ScalarField& phi);

/// One linearized micro step: solves
///   (1+L_coup)<phi,psi> + dt*gamma<grad phi,grad psi> + dt/l^2 L_lin<phi,psi>
///     = <phi_prev + dt/l^2 F_plus(phi_prev,u)
///        + L_coup phi_outer + dt/l^2 (F_minus(phi_inner,u) + L_lin phi_inner), psi>
/// over the periodic cell. Mass terms are lumped at the nodes, which is what
/// makes the nodal bounds of the continuous problem carry over exactly.
ScalarField lscheme_step(const ScalarField& phi_prev_time,
                         const ScalarField& phi_outer,
                         const ScalarField& phi_inner, double u, double dt,
                         const SolverKnobs& knobs, const ChemistryParams& p);

struct MicroSolveResult {
  ScalarField phi;
  int iters = 0;
  std::vector<double> eps_history;  // ||phi_j - phi_{j-1}||_Y per iteration
  bool dt_bound_ok = true;          // dt <= lambda^2 (1+L_coup) / M_F1
  double max_clamp = 0.0;           // largest post-solve clamp applied
};

/// Fixed-point iteration of lscheme_step until ||phi_j - phi_{j-1}||_Y <=
/// tol_mu, starting from phi_outer. Nodal values are clamped to [0,1]
/// afterwards; a clamp beyond knobs.bound_tol is reported as a solver error.
MicroSolveResult solve_phasefield(const ScalarField& phi_prev_time,
                                  const ScalarField& phi_outer, double u,
                                  double dt, const SolverKnobs& knobs,
                                  const ChemistryParams& p);

}  // namespace twoscale
