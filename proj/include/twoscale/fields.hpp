#pragma once

#include <Eigen/Core>

#include "twoscale/mesh.hpp"

namespace twoscale {

/// Finite element family of a discrete field.
enum class Family {
  p0,        // piecewise constant per element
  p1,        // conforming linear, one dof per (periodic) vertex class
  face_flux, // lowest-order face-flux space, one dof per (periodic) edge
  nc1,       // nonconforming linear, one dof per (periodic) edge
};

struct ScalarField {
  Family family = Family::p1;
  MeshPtr mesh;
  Eigen::VectorXd coeffs;

  ScalarField() = default;
  ScalarField(Family fam, MeshPtr m, Eigen::VectorXd c)
      : family(fam), mesh(std::move(m)), coeffs(std::move(c)) {
    check();
  }
  void check() const;
  /// Nodal value at local vertex v (p1 only).
  double at_vertex(int v) const { return coeffs[mesh->vertex_dof(v)]; }
};

/// Vector-valued field; face_flux stores one normal flux per edge, nc1
/// stores the two components per edge midpoint (x block then y block).
struct VectorField {
  Family family = Family::face_flux;
  MeshPtr mesh;
  Eigen::VectorXd coeffs;
};

ScalarField make_p1(MeshPtr mesh, double value = 0.0);
ScalarField make_p0(MeshPtr mesh, double value = 0.0);

/// Expected coefficient count of a family on a mesh.
int dof_count(Family family, const TriMesh& mesh);

/// Exact integral of the field over the mesh.
double integrate(const ScalarField& f);

/// L2 inner product of two fields of the same family on the same mesh.
double l2_product(const ScalarField& a, const ScalarField& b);
double l2_norm(const ScalarField& a);

/// Value at a point (p0/p1); element located within the field's own mesh.
double eval(const ScalarField& f, const Vec2& p);

/// Element means of a p1 field as a p0 field on the same mesh.
ScalarField element_means(const ScalarField& f);

/// Transfer between meshes of the same genealogy: exact interpolation onto
/// finer elements, elementwise L2-orthogonal projection onto coarser ones.
ScalarField project(const ScalarField& f, const MeshPtr& dst);

/// Carry a field across compact_genealogy; vperm maps old local vertex to
/// new local vertex.
ScalarField remap_field(const ScalarField& f, const MeshPtr& new_mesh,
                        const std::vector<int32_t>& vperm);

}  // namespace twoscale
