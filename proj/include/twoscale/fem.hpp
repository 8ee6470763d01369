#pragma once

#include <Eigen/Sparse>

#include <stdexcept>

#include "twoscale/fields.hpp"
#include "twoscale/mesh.hpp"

namespace twoscale {

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using SpMat = Eigen::SparseMatrix<double>;

/// Row-sum lumped P1 mass, one entry per vertex dof.
Eigen::VectorXd p1_lumped_mass(const TriMesh& mesh);

/// P1 stiffness matrix over vertex dofs, optionally with a piecewise
/// constant coefficient per element.
SpMat p1_stiffness(const TriMesh& mesh, const double* coeff_per_elem = nullptr);

/// Consistent P1 mass matrix over vertex dofs.
SpMat p1_mass(const TriMesh& mesh);

}  // namespace twoscale
