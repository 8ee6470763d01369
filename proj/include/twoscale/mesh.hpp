#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace twoscale {

using Vec2 = Eigen::Vector2d;

struct MeshError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Axis-aligned rectangle.
struct Rect {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

/// Which side of the rectangle boundary an edge lies on.
enum class Side : int8_t { none = -1, left = 0, right = 1, bottom = 2, top = 3 };

class Forest;
class TriMesh;
using MeshPtr = std::shared_ptr<const TriMesh>;
using ForestPtr = std::shared_ptr<Forest>;

/// One triangle in the refinement genealogy. Vertices are stored as
/// (peak, a, b); the refinement edge is (a, b) and bisection inserts its
/// midpoint as the peak of both children. Children are memoized so the
/// same element bisected through two different meshes yields identical ids.
struct ForestElem {
  std::array<int32_t, 3> v{-1, -1, -1};  // peak, a, b
  int32_t parent = -1;
  std::array<int32_t, 2> child{-1, -1};
  int16_t level = 0;
  bool has_children() const { return child[0] >= 0; }
};

struct ForestVert {
  Vec2 pos;
  int32_t partner_x = -1;  // periodic partner across left/right faces
  int32_t partner_y = -1;  // periodic partner across bottom/top faces
  int32_t pclass = -1;     // smallest vertex id in the periodic orbit
};

/// Refinement genealogy shared by every mesh of one family. Grows
/// monotonically under a mutex; existing records are never mutated except
/// for the child links of a freshly bisected element, so meshes built
/// earlier can be read concurrently with refinement elsewhere.
class Forest {
 public:
  static MeshPtr make_root(const Rect& domain, int nx, int ny, bool periodic);

  const ForestElem& elem(int32_t e) const { return elems_[e]; }
  const ForestVert& vert(int32_t v) const { return verts_[v]; }
  int32_t n_elems() const { return static_cast<int32_t>(elems_.size()); }
  int32_t n_verts() const { return static_cast<int32_t>(verts_.size()); }
  bool periodic() const { return periodic_; }
  const Rect& domain() const { return domain_; }
  int n_roots() const { return n_roots_; }

  /// Bisect an element (idempotent). Returns its two children.
  std::array<int32_t, 2> bisect(int32_t e);

  /// Canonical key of the (possibly periodic) edge between two vertices.
  uint64_t edge_key(int32_t a, int32_t b) const;

 private:
  friend class TriMesh;
  friend std::pair<MeshPtr, std::vector<int32_t>> compact_genealogy(const MeshPtr&);
  Forest() = default;
  int32_t midpoint(int32_t a, int32_t b);
  int32_t new_vertex(const Vec2& p);
  void set_pclass(int32_t v);

  std::deque<ForestElem> elems_;
  std::deque<ForestVert> verts_;
  std::unordered_map<uint64_t, int32_t> midpoints_;  // geometric edge -> vid
  Rect domain_;
  bool periodic_ = false;
  int n_roots_ = 0;
  std::mutex mu_;
};

struct MeshEdge {
  int32_t va, vb;            // local vertex indices (one geometric trace)
  int32_t elem[2] = {-1, -1};  // adjacent local elements
  Side side = Side::none;    // boundary side (macro meshes only)
  double length = 0;
  Vec2 normal;               // unit normal pointing from elem[0] to elem[1]/outward
};

/// Immutable conforming triangulation, a leaf front of its Forest.
/// P1 degrees of freedom merge periodically paired vertices; edge-based
/// spaces (face fluxes, nonconforming linears) merge paired edges.
class TriMesh {
 public:
  TriMesh(ForestPtr forest, std::vector<int32_t> leaf_ids);

  const ForestPtr& forest() const { return forest_; }
  const std::vector<int32_t>& leaf_ids() const { return leaf_ids_; }

  int n_elems() const { return static_cast<int>(tri_.size()); }
  int n_verts() const { return static_cast<int>(verts_.size()); }
  int n_edges() const { return static_cast<int>(edges_.size()); }
  int n_vertex_dofs() const { return n_vdofs_; }

  const std::array<int32_t, 3>& tri(int t) const { return tri_[t]; }
  const Vec2& vertex(int v) const { return pos_[v]; }
  int32_t global_vid(int v) const { return verts_[v]; }
  int local_vid(int32_t global) const;
  double area(int t) const { return area_[t]; }
  double total_area() const { return total_area_; }
  Vec2 centroid(int t) const;
  int vertex_dof(int v) const { return vdof_[v]; }

  const MeshEdge& edge(int e) const { return edges_[e]; }
  /// Edge indices of element t, opposite to local vertices 0,1,2.
  const std::array<int32_t, 3>& elem_edges(int t) const { return elem_edges_[t]; }
  /// Sign of the global edge normal as the outward normal of element t.
  double edge_sign(int t, int k) const {
    return edges_[elem_edges_[t][k]].elem[0] == t ? 1.0 : -1.0;
  }

  double h_max() const { return h_max_; }
  double h_min() const { return h_min_; }
  /// Longest and shortest edge of one element.
  double elem_diameter(int t) const { return diam_[t]; }
  double elem_min_edge(int t) const { return min_edge_[t]; }

  /// Constant gradients of the three barycentric hats of element t.
  std::array<Vec2, 3> hat_gradients(int t) const;
  /// Barycentric coordinates of p in element t.
  Eigen::Vector3d barycentric(int t, const Vec2& p) const;
  /// Element containing p (-1 if outside); ties broken by lowest index.
  int locate(const Vec2& p) const;

  bool periodic() const { return forest_->periodic(); }
  /// Pairs of periodically identified local vertex indices.
  const std::vector<std::pair<int32_t, int32_t>>& periodic_vertex_pairs() const {
    return periodic_pairs_;
  }

  void check_conforming() const;

 private:
  friend MeshPtr refine_marked(const MeshPtr&, const std::vector<int>&);
  void build();

  ForestPtr forest_;
  std::vector<int32_t> leaf_ids_;

  std::vector<int32_t> verts_;                    // local -> forest vid
  std::unordered_map<int32_t, int32_t> vlocal_;   // forest vid -> local
  std::vector<Vec2> pos_;
  std::vector<std::array<int32_t, 3>> tri_;       // local vertex triples
  std::vector<double> area_, diam_, min_edge_;
  std::vector<MeshEdge> edges_;
  std::vector<std::array<int32_t, 3>> elem_edges_;
  std::vector<int> vdof_;
  std::vector<std::pair<int32_t, int32_t>> periodic_pairs_;
  int n_vdofs_ = 0;
  double h_max_ = 0, h_min_ = 0, total_area_ = 0;

  // locate() acceleration
  int grid_nx_ = 0, grid_ny_ = 0;
  Rect bbox_;
  std::vector<std::vector<int32_t>> grid_;
};

/// Structured triangulation of a rectangle: nx*ny quads, each split along a
/// diagonal (alternating direction so the pattern has the quarter-turn
/// symmetry of the cell). For the periodic unit cell a complete pairing of
/// opposite boundary entities is attached.
MeshPtr build_uniform(const Rect& domain, int nx, int ny, bool periodic = false);

/// Subdivide every marked element into four similar children (two rounds of
/// newest-vertex bisection) plus the closure needed to stay conforming.
/// Marked elements touching a periodic boundary force the mirrored
/// refinement on the paired side.
MeshPtr refine_marked(const MeshPtr& mesh, const std::vector<int>& marked);

/// One newest-vertex bisection of every marked element plus closure. Used by
/// the interface-band loop, where single rounds stop each element exactly at
/// the target edge length.
MeshPtr bisect_marked(const MeshPtr& mesh, const std::vector<int>& marked);

/// Coarsest common refinement of two meshes with shared genealogy.
MeshPtr mesh_union(const MeshPtr& a, const MeshPtr& b);

/// Rebuild mesh on a fresh forest containing only the ancestry of its own
/// leaves, dropping dead branches accumulated by earlier adaptation steps.
/// Returns the rebuilt mesh and the local-vertex permutation old -> new.
std::pair<MeshPtr, std::vector<int32_t>> compact_genealogy(const MeshPtr& mesh);

}  // namespace twoscale
