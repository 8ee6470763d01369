#include "twoscale/fields.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <unordered_set>

namespace twoscale {

namespace {

// integral over a triangle of the product of two linear functions given by
// vertex values f, g:  |T|/12 * f^T [[2,1,1],[1,2,1],[1,1,2]] g
double p1_product_on_tri(double area, const Eigen::Vector3d& f,
                         const Eigen::Vector3d& g) {
  const double s = f.sum() * g.sum();
  return area / 12.0 * (s + f.dot(g));
}

double forest_area(const Forest& f, int32_t e) {
  const auto& v = f.elem(e).v;
  const Vec2 &p0 = f.vert(v[0]).pos, &p1 = f.vert(v[1]).pos, &p2 = f.vert(v[2]).pos;
  return 0.5 * std::abs((p1.x() - p0.x()) * (p2.y() - p0.y()) -
                        (p2.x() - p0.x()) * (p1.y() - p0.y()));
}

// first element of {e, parent(e), ...} contained in the set
int32_t ancestor_in(const Forest& f, int32_t e,
                    const std::unordered_set<int32_t>& set) {
  int32_t x = e;
  while (x >= 0 && !set.count(x)) x = f.elem(x).parent;
  return x;
}

}  // namespace

void ScalarField::check() const {
  if (!mesh) throw MeshError("ScalarField: null mesh");
  if (coeffs.size() != dof_count(family, *mesh))
    throw MeshError("ScalarField: coefficient count does not match family");
}

int dof_count(Family family, const TriMesh& mesh) {
  switch (family) {
    case Family::p0: return mesh.n_elems();
    case Family::p1: return mesh.n_vertex_dofs();
    case Family::face_flux: return mesh.n_edges();
    case Family::nc1: return mesh.n_edges();
  }
  return 0;
}

ScalarField make_p1(MeshPtr mesh, double value) {
  Eigen::VectorXd c = Eigen::VectorXd::Constant(mesh->n_vertex_dofs(), value);
  return ScalarField(Family::p1, std::move(mesh), std::move(c));
}

ScalarField make_p0(MeshPtr mesh, double value) {
  Eigen::VectorXd c = Eigen::VectorXd::Constant(mesh->n_elems(), value);
  return ScalarField(Family::p0, std::move(mesh), std::move(c));
}

double integrate(const ScalarField& f) {
  const TriMesh& m = *f.mesh;
  double s = 0;
  if (f.family == Family::p0) {
    for (int t = 0; t < m.n_elems(); ++t) s += m.area(t) * f.coeffs[t];
  } else if (f.family == Family::p1) {
    for (int t = 0; t < m.n_elems(); ++t) {
      const auto& tv = m.tri(t);
      double v = 0;
      for (int k = 0; k < 3; ++k) v += f.coeffs[m.vertex_dof(tv[k])];
      s += m.area(t) * v / 3.0;
    }
  } else {
    throw MeshError("integrate: unsupported family");
  }
  return s;
}

double l2_product(const ScalarField& a, const ScalarField& b) {
  if (a.mesh != b.mesh || a.family != b.family)
    throw MeshError("l2_product: fields must share mesh and family");
  const TriMesh& m = *a.mesh;
  double s = 0;
  if (a.family == Family::p0) {
    for (int t = 0; t < m.n_elems(); ++t)
      s += m.area(t) * a.coeffs[t] * b.coeffs[t];
  } else if (a.family == Family::p1) {
    for (int t = 0; t < m.n_elems(); ++t) {
      Eigen::Vector3d fa, fb;
      for (int k = 0; k < 3; ++k) {
        fa[k] = a.coeffs[m.vertex_dof(m.tri(t)[k])];
        fb[k] = b.coeffs[m.vertex_dof(m.tri(t)[k])];
      }
      s += p1_product_on_tri(m.area(t), fa, fb);
    }
  } else {
    throw MeshError("l2_product: unsupported family");
  }
  return s;
}

double l2_norm(const ScalarField& a) { return std::sqrt(l2_product(a, a)); }

double eval(const ScalarField& f, const Vec2& p) {
  const int t = f.mesh->locate(p);
  if (t < 0) throw MeshError("eval: point outside mesh");
  if (f.family == Family::p0) return f.coeffs[t];
  if (f.family == Family::p1) {
    const Eigen::Vector3d l = f.mesh->barycentric(t, p);
    double v = 0;
    for (int k = 0; k < 3; ++k)
      v += l[k] * f.coeffs[f.mesh->vertex_dof(f.mesh->tri(t)[k])];
    return v;
  }
  throw MeshError("eval: unsupported family");
}

ScalarField element_means(const ScalarField& f) {
  if (f.family != Family::p1) throw MeshError("element_means: p1 expected");
  const TriMesh& m = *f.mesh;
  Eigen::VectorXd c(m.n_elems());
  for (int t = 0; t < m.n_elems(); ++t) {
    double v = 0;
    for (int k = 0; k < 3; ++k) v += f.coeffs[m.vertex_dof(m.tri(t)[k])];
    c[t] = v / 3.0;
  }
  return ScalarField(Family::p0, f.mesh, std::move(c));
}

namespace {

/// Exact interpolation of a p1 field onto the vertex dofs of a refinement
/// (union) of its mesh: descend the bisection tree averaging refinement-edge
/// endpoints.
Eigen::VectorXd interpolate_to_union(const ScalarField& f, const TriMesh& u) {
  const Forest& forest = *f.mesh->forest();
  const TriMesh& src = *f.mesh;
  std::unordered_set<int32_t> uleaves(u.leaf_ids().begin(), u.leaf_ids().end());

  Eigen::VectorXd out = Eigen::VectorXd::Zero(u.n_vertex_dofs());

  struct Node {
    int32_t e;
    Eigen::Vector3d vals;  // values at forest vertex triple (peak, a, b)
  };
  std::vector<Node> stack;
  for (int t = 0; t < src.n_elems(); ++t) {
    const int32_t e = src.leaf_ids()[t];
    Eigen::Vector3d vals;
    for (int k = 0; k < 3; ++k) vals[k] = f.at_vertex(src.tri(t)[k]);
    stack.push_back({e, vals});
    while (!stack.empty()) {
      const Node nd = stack.back();
      stack.pop_back();
      const ForestElem& el = forest.elem(nd.e);
      if (uleaves.count(nd.e)) {
        for (int k = 0; k < 3; ++k) {
          const int lv = u.local_vid(el.v[k]);
          out[u.vertex_dof(lv)] = nd.vals[k];
        }
        continue;
      }
      if (!el.has_children())
        throw MeshError("project: union mesh is not a refinement");
      const double vm = 0.5 * (nd.vals[1] + nd.vals[2]);
      for (int32_t c : el.child) {
        const ForestElem& ce = forest.elem(c);
        Eigen::Vector3d cv;
        for (int k = 0; k < 3; ++k) {
          const int32_t w = ce.v[k];
          if (w == el.v[0])
            cv[k] = nd.vals[0];
          else if (w == el.v[1])
            cv[k] = nd.vals[1];
          else if (w == el.v[2])
            cv[k] = nd.vals[2];
          else
            cv[k] = vm;
        }
        stack.push_back({c, cv});
      }
    }
  }
  return out;
}

}  // namespace

ScalarField project(const ScalarField& f, const MeshPtr& dst) {
  if (f.mesh == dst) return f;
  if (f.mesh->forest() != dst->forest())
    throw MeshError("project: meshes do not share genealogy");
  const Forest& forest = *f.mesh->forest();

  if (f.family == Family::p0) {
    const MeshPtr u = mesh_union(f.mesh, dst);
    std::unordered_set<int32_t> src_set(f.mesh->leaf_ids().begin(),
                                        f.mesh->leaf_ids().end());
    std::unordered_set<int32_t> dst_set(dst->leaf_ids().begin(),
                                        dst->leaf_ids().end());
    std::unordered_map<int32_t, int> src_idx, dst_idx;
    for (int t = 0; t < f.mesh->n_elems(); ++t)
      src_idx.emplace(f.mesh->leaf_ids()[t], t);
    for (int t = 0; t < dst->n_elems(); ++t)
      dst_idx.emplace(dst->leaf_ids()[t], t);

    Eigen::VectorXd acc = Eigen::VectorXd::Zero(dst->n_elems());
    for (int32_t l : u->leaf_ids()) {
      const int32_t es = ancestor_in(forest, l, src_set);
      const int32_t ed = ancestor_in(forest, l, dst_set);
      if (es < 0 || ed < 0) throw MeshError("project: broken genealogy");
      acc[dst_idx.at(ed)] += forest_area(forest, l) * f.coeffs[src_idx.at(es)];
    }
    for (int t = 0; t < dst->n_elems(); ++t) acc[t] /= dst->area(t);
    return ScalarField(Family::p0, dst, std::move(acc));
  }

  if (f.family != Family::p1) throw MeshError("project: unsupported family");

  const MeshPtr u = mesh_union(f.mesh, dst);
  const Eigen::VectorXd uvals = interpolate_to_union(f, *u);
  if (u == dst || u->leaf_ids() == dst->leaf_ids())
    return ScalarField(Family::p1, dst, uvals);

  // L2-orthogonal projection onto the coarser space.
  std::unordered_set<int32_t> dst_set(dst->leaf_ids().begin(),
                                      dst->leaf_ids().end());
  std::unordered_map<int32_t, int> dst_idx;
  for (int t = 0; t < dst->n_elems(); ++t)
    dst_idx.emplace(dst->leaf_ids()[t], t);

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dst->n_vertex_dofs());
  for (int tu = 0; tu < u->n_elems(); ++tu) {
    const int32_t l = u->leaf_ids()[tu];
    const int td = dst_idx.at(ancestor_in(forest, l, dst_set));
    Eigen::Vector3d fv;
    Eigen::Matrix3d hats;  // hats(i,k): dst hat of vertex i at u-vertex k
    for (int k = 0; k < 3; ++k) {
      fv[k] = uvals[u->vertex_dof(u->tri(tu)[k])];
      hats.col(k) = dst->barycentric(td, u->vertex(u->tri(tu)[k]));
    }
    for (int i = 0; i < 3; ++i) {
      rhs[dst->vertex_dof(dst->tri(td)[i])] +=
          p1_product_on_tri(u->area(tu), hats.row(i).transpose(), fv);
    }
  }

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(dst->n_elems() * 9);
  for (int t = 0; t < dst->n_elems(); ++t) {
    const auto& tv = dst->tri(t);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        trip.emplace_back(dst->vertex_dof(tv[i]), dst->vertex_dof(tv[j]),
                          dst->area(t) / 12.0 * (i == j ? 2.0 : 1.0));
  }
  Eigen::SparseMatrix<double> M(dst->n_vertex_dofs(), dst->n_vertex_dofs());
  M.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(M);
  if (solver.info() != Eigen::Success)
    throw MeshError("project: mass matrix factorization failed");
  Eigen::VectorXd c = solver.solve(rhs);
  return ScalarField(Family::p1, dst, std::move(c));
}

ScalarField remap_field(const ScalarField& f, const MeshPtr& new_mesh,
                        const std::vector<int32_t>& vperm) {
  if (f.family == Family::p0) return ScalarField(Family::p0, new_mesh, f.coeffs);
  if (f.family != Family::p1) throw MeshError("remap_field: unsupported family");
  Eigen::VectorXd c(new_mesh->n_vertex_dofs());
  for (int v = 0; v < f.mesh->n_verts(); ++v)
    c[new_mesh->vertex_dof(vperm[v])] = f.at_vertex(v);
  return ScalarField(Family::p1, new_mesh, std::move(c));
}

}  // namespace twoscale
