#pragma once

#include <Eigen/Dense>

#include <array>
#include <functional>

#include "twoscale/fem.hpp"
#include "twoscale/fields.hpp"
#include "twoscale/phasefield.hpp"

namespace twoscale {

/// Effective quantities of one micro cell.
struct EffectiveTensors {
  Eigen::Matrix2d A = Eigen::Matrix2d::Zero();  // effective diffusion
  Eigen::Matrix2d K = Eigen::Matrix2d::Zero();  // effective permeability
  double porosity = 0.0;
  bool has_K = false;
};

/// Drag closing the flow problem in the mineral: g(phi,lambda) =
/// 10*25*(1-phi) / (lambda*(phi+10)); g(1,.) = 0 and g decreases in phi.
double drag(double phi, double lambda);

/// Coefficient sampled inside an element (for coefficients that are not
/// finite element fields, e.g. sharp laminates in verification runs).
using CellCoefficient = std::function<double(int elem, const Vec2& y)>;

struct DiffusionCellResult {
  std::array<ScalarField, 2> omega;   // p0, zero mean
  std::array<VectorField, 2> flux;    // face_flux, -phi_delta(grad w + e_s)
  Eigen::Matrix2d A;
  double asymmetry = 0.0;             // |A12 - A21| before symmetrization
};

/// Periodic diffusion cell problem with lowest-order face-flux elements and
/// a single Lagrange multiplier pinning the mean of omega.
DiffusionCellResult solve_diffusion_cell(const MeshPtr& mesh,
                                         const CellCoefficient& phi_delta);
DiffusionCellResult solve_diffusion_cell(const ScalarField& phi, double delta);

struct PermeabilityCellResult {
  std::array<VectorField, 2> w;   // nc1 velocity, x block then y block
  std::array<ScalarField, 2> Pi;  // p0 pressure, zero mean
  Eigen::Matrix2d K;
};

/// Periodic Stokes-like permeability cell problem with nonconforming-linear
/// velocity and piecewise-constant pressure; the viscous term uses
/// mu_f <grad(phi_delta w), grad v> and the drag is evaluated at edge
/// midpoints.
PermeabilityCellResult solve_permeability_cell(const ScalarField& phi,
                                               const ChemistryParams& p);

/// Porosity plus both cell problems; permeability only when requested.
EffectiveTensors effective_update(const ScalarField& phi,
                                  const ChemistryParams& p,
                                  bool with_permeability);

}  // namespace twoscale
