#include "twoscale/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace twoscale {

namespace {

constexpr double kPairTol = 1e-10;  // periodic coordinate matching tolerance

uint64_t pack_pair(int32_t a, int32_t b) {
  if (a > b) std::swap(a, b);
  return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) |
         static_cast<uint32_t>(b);
}

double signed_area(const Vec2& p0, const Vec2& p1, const Vec2& p2) {
  return 0.5 * ((p1.x() - p0.x()) * (p2.y() - p0.y()) -
                (p2.x() - p0.x()) * (p1.y() - p0.y()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Forest
// ---------------------------------------------------------------------------

int32_t Forest::new_vertex(const Vec2& p) {
  verts_.push_back(ForestVert{p, -1, -1, -1});
  return static_cast<int32_t>(verts_.size()) - 1;
}

void Forest::set_pclass(int32_t v) {
  int32_t c = v;
  const ForestVert& fv = verts_[v];
  for (int32_t w : {fv.partner_x, fv.partner_y}) {
    if (w < 0) continue;
    c = std::min(c, w);
    const ForestVert& fw = verts_[w];
    if (fw.partner_x >= 0) c = std::min(c, fw.partner_x);
    if (fw.partner_y >= 0) c = std::min(c, fw.partner_y);
  }
  verts_[v].pclass = c;
}

uint64_t Forest::edge_key(int32_t a, int32_t b) const {
  return pack_pair(verts_[a].pclass, verts_[b].pclass);
}

int32_t Forest::midpoint(int32_t a, int32_t b) {
  const uint64_t key = pack_pair(a, b);
  auto it = midpoints_.find(key);
  if (it != midpoints_.end()) return it->second;

  const int32_t m = new_vertex(0.5 * (verts_[a].pos + verts_[b].pos));
  midpoints_.emplace(key, m);

  if (periodic_) {
    // An edge whose endpoints both carry an x (or y) partner lies on the
    // corresponding boundary face; its mirrored edge gets the twin midpoint.
    const auto pair_with = [&](int32_t pa, int32_t pb, bool x_dir) {
      const uint64_t pkey = pack_pair(pa, pb);
      auto pit = midpoints_.find(pkey);
      int32_t pm;
      if (pit != midpoints_.end()) {
        pm = pit->second;
      } else {
        pm = new_vertex(0.5 * (verts_[pa].pos + verts_[pb].pos));
        midpoints_.emplace(pkey, pm);
      }
      if (x_dir) {
        verts_[m].partner_x = pm;
        verts_[pm].partner_x = m;
      } else {
        verts_[m].partner_y = pm;
        verts_[pm].partner_y = m;
      }
      set_pclass(pm);
    };
    const ForestVert& va = verts_[a];
    const ForestVert& vb = verts_[b];
    if (va.partner_x >= 0 && vb.partner_x >= 0 &&
        std::abs(va.pos.x() - vb.pos.x()) < kPairTol) {
      pair_with(va.partner_x, vb.partner_x, true);
    }
    if (va.partner_y >= 0 && vb.partner_y >= 0 &&
        std::abs(va.pos.y() - vb.pos.y()) < kPairTol) {
      pair_with(va.partner_y, vb.partner_y, false);
    }
  }
  set_pclass(m);
  return m;
}

std::array<int32_t, 2> Forest::bisect(int32_t e) {
  std::lock_guard<std::mutex> lock(mu_);
  ForestElem& el = elems_[e];
  if (el.has_children()) return el.child;

  const int32_t p = el.v[0], a = el.v[1], b = el.v[2];
  const int32_t m = midpoint(a, b);

  const auto make_child = [&](int32_t ca, int32_t cb) {
    ForestElem c;
    c.v = {m, ca, cb};
    if (signed_area(verts_[m].pos, verts_[ca].pos, verts_[cb].pos) < 0)
      std::swap(c.v[1], c.v[2]);
    c.parent = e;
    c.level = static_cast<int16_t>(el.level + 1);
    elems_.push_back(c);
    return static_cast<int32_t>(elems_.size()) - 1;
  };
  const int32_t c0 = make_child(p, a);
  const int32_t c1 = make_child(b, p);
  elems_[e].child = {c0, c1};
  return elems_[e].child;
}

MeshPtr Forest::make_root(const Rect& domain, int nx, int ny, bool periodic) {
  if (nx < 1 || ny < 1) throw MeshError("build_uniform: counts must be >= 1");
  if (domain.width() <= 0 || domain.height() <= 0)
    throw MeshError("build_uniform: degenerate rectangle");
  if (periodic && (nx < 2 || ny < 2))
    throw MeshError("build_uniform: periodic cell needs at least 2x2 quads");

  ForestPtr f(new Forest());
  f->domain_ = domain;
  f->periodic_ = periodic;

  const double dx = domain.width() / nx;
  const double dy = domain.height() / ny;
  const auto vid = [&](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      f->new_vertex(Vec2(domain.x0 + i * dx, domain.y0 + j * dy));

  if (periodic) {
    for (int j = 0; j <= ny; ++j) {
      f->verts_[vid(0, j)].partner_x = vid(nx, j);
      f->verts_[vid(nx, j)].partner_x = vid(0, j);
    }
    for (int i = 0; i <= nx; ++i) {
      f->verts_[vid(i, 0)].partner_y = vid(i, ny);
      f->verts_[vid(i, ny)].partner_y = vid(i, 0);
    }
  }
  for (int32_t v = 0; v < f->n_verts(); ++v) f->set_pclass(v);

  // Two triangles per quad, hypotenuse as refinement edge; diagonal
  // direction alternates with the quad parity.
  const auto add_root = [&](int32_t p, int32_t a, int32_t b) {
    ForestElem el;
    el.v = {p, a, b};
    if (signed_area(f->verts_[p].pos, f->verts_[a].pos, f->verts_[b].pos) < 0)
      std::swap(el.v[1], el.v[2]);
    f->elems_.push_back(el);
  };
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int32_t v00 = vid(i, j), v10 = vid(i + 1, j);
      const int32_t v01 = vid(i, j + 1), v11 = vid(i + 1, j + 1);
      if ((i + j) % 2 == 0) {
        add_root(v00, v10, v01);
        add_root(v11, v01, v10);
      } else {
        add_root(v10, v11, v00);
        add_root(v01, v00, v11);
      }
    }
  }
  f->n_roots_ = static_cast<int>(f->elems_.size());

  std::vector<int32_t> leaves(f->n_roots_);
  for (int32_t i = 0; i < f->n_roots_; ++i) leaves[i] = i;
  return std::make_shared<TriMesh>(f, std::move(leaves));
}

MeshPtr build_uniform(const Rect& domain, int nx, int ny, bool periodic) {
  return Forest::make_root(domain, nx, ny, periodic);
}

// ---------------------------------------------------------------------------
// TriMesh
// ---------------------------------------------------------------------------

TriMesh::TriMesh(ForestPtr forest, std::vector<int32_t> leaf_ids)
    : forest_(std::move(forest)), leaf_ids_(std::move(leaf_ids)) {
  std::sort(leaf_ids_.begin(), leaf_ids_.end());
  build();
}

int TriMesh::local_vid(int32_t global) const {
  auto it = vlocal_.find(global);
  return it == vlocal_.end() ? -1 : it->second;
}

Vec2 TriMesh::centroid(int t) const {
  const auto& tv = tri_[t];
  return (pos_[tv[0]] + pos_[tv[1]] + pos_[tv[2]]) / 3.0;
}

std::array<Vec2, 3> TriMesh::hat_gradients(int t) const {
  const auto& tv = tri_[t];
  const Vec2 &p0 = pos_[tv[0]], &p1 = pos_[tv[1]], &p2 = pos_[tv[2]];
  const double inv2A = 1.0 / (2.0 * area_[t]);
  return {Vec2(p1.y() - p2.y(), p2.x() - p1.x()) * inv2A,
          Vec2(p2.y() - p0.y(), p0.x() - p2.x()) * inv2A,
          Vec2(p0.y() - p1.y(), p1.x() - p0.x()) * inv2A};
}

Eigen::Vector3d TriMesh::barycentric(int t, const Vec2& p) const {
  const auto& tv = tri_[t];
  const Vec2 &p0 = pos_[tv[0]], &p1 = pos_[tv[1]], &p2 = pos_[tv[2]];
  const double a = area_[t];
  Eigen::Vector3d l;
  l[0] = signed_area(p, p1, p2) / a;
  l[1] = signed_area(p0, p, p2) / a;
  l[2] = signed_area(p0, p1, p) / a;
  return l;
}

int TriMesh::locate(const Vec2& p) const {
  if (grid_nx_ == 0) return -1;
  const double gx = (p.x() - bbox_.x0) / bbox_.width() * grid_nx_;
  const double gy = (p.y() - bbox_.y0) / bbox_.height() * grid_ny_;
  const int ix = std::clamp(static_cast<int>(gx), 0, grid_nx_ - 1);
  const int iy = std::clamp(static_cast<int>(gy), 0, grid_ny_ - 1);
  for (int32_t t : grid_[iy * grid_nx_ + ix]) {
    const Eigen::Vector3d l = barycentric(t, p);
    if (l.minCoeff() >= -1e-12) return t;
  }
  // Fallback with a looser tolerance for points on bin boundaries.
  int best = -1;
  double best_viol = 1e-9;
  for (int t = 0; t < n_elems(); ++t) {
    const double viol = -barycentric(t, p).minCoeff();
    if (viol < best_viol) {
      best_viol = viol;
      best = t;
      if (viol <= 0) break;
    }
  }
  return best;
}

void TriMesh::build() {
  const Forest& f = *forest_;
  const int ne = static_cast<int>(leaf_ids_.size());
  if (ne == 0) throw MeshError("TriMesh: empty leaf set");

  // Local vertex table, ordered by forest id.
  for (int32_t e : leaf_ids_)
    for (int32_t v : f.elem(e).v) vlocal_.emplace(v, -1);
  verts_.reserve(vlocal_.size());
  for (auto& kv : vlocal_) verts_.push_back(kv.first);
  std::sort(verts_.begin(), verts_.end());
  pos_.resize(verts_.size());
  for (size_t i = 0; i < verts_.size(); ++i) {
    vlocal_[verts_[i]] = static_cast<int32_t>(i);
    pos_[i] = f.vert(verts_[i]).pos;
  }

  tri_.resize(ne);
  area_.resize(ne);
  diam_.resize(ne);
  min_edge_.resize(ne);
  elem_edges_.assign(ne, {-1, -1, -1});
  h_max_ = 0;
  h_min_ = std::numeric_limits<double>::max();
  total_area_ = 0;

  std::unordered_map<uint64_t, int32_t> edge_of;
  edge_of.reserve(ne * 2);

  for (int t = 0; t < ne; ++t) {
    const ForestElem& el = f.elem(leaf_ids_[t]);
    for (int k = 0; k < 3; ++k) tri_[t][k] = vlocal_[el.v[k]];
    const Vec2 &p0 = pos_[tri_[t][0]], &p1 = pos_[tri_[t][1]], &p2 = pos_[tri_[t][2]];
    area_[t] = signed_area(p0, p1, p2);
    if (area_[t] <= 0) throw MeshError("TriMesh: nonpositive element area");
    total_area_ += area_[t];
    const double e0 = (p1 - p2).norm(), e1 = (p2 - p0).norm(), e2 = (p0 - p1).norm();
    diam_[t] = std::max({e0, e1, e2});
    min_edge_[t] = std::min({e0, e1, e2});
    h_max_ = std::max(h_max_, diam_[t]);
    h_min_ = std::min(h_min_, diam_[t]);

    for (int k = 0; k < 3; ++k) {
      const int32_t ga = el.v[(k + 1) % 3], gb = el.v[(k + 2) % 3];
      const uint64_t key = f.edge_key(ga, gb);
      auto it = edge_of.find(key);
      if (it == edge_of.end()) {
        MeshEdge ed;
        ed.va = vlocal_[ga];
        ed.vb = vlocal_[gb];
        ed.elem[0] = t;
        const Vec2 tang = pos_[ed.vb] - pos_[ed.va];
        ed.length = tang.norm();
        ed.normal = Vec2(tang.y(), -tang.x()) / ed.length;
        // orient outward with respect to elem[0]
        const Vec2 mid = 0.5 * (pos_[ed.va] + pos_[ed.vb]);
        if (ed.normal.dot(mid - pos_[tri_[t][k]]) < 0) ed.normal = -ed.normal;
        edges_.push_back(ed);
        const int32_t id = static_cast<int32_t>(edges_.size()) - 1;
        edge_of.emplace(key, id);
        elem_edges_[t][k] = id;
      } else {
        MeshEdge& ed = edges_[it->second];
        if (ed.elem[1] != -1) throw MeshError("TriMesh: edge shared by >2 elements");
        ed.elem[1] = t;
        elem_edges_[t][k] = it->second;
      }
    }
  }

  // Boundary side classification (macro meshes).
  const Rect& dom = f.domain();
  const double tol = 1e-12 * std::max(dom.width(), dom.height());
  for (MeshEdge& ed : edges_) {
    if (ed.elem[1] != -1) continue;
    const Vec2 &a = pos_[ed.va], &b = pos_[ed.vb];
    if (std::abs(a.x() - dom.x0) < tol && std::abs(b.x() - dom.x0) < tol)
      ed.side = Side::left;
    else if (std::abs(a.x() - dom.x1) < tol && std::abs(b.x() - dom.x1) < tol)
      ed.side = Side::right;
    else if (std::abs(a.y() - dom.y0) < tol && std::abs(b.y() - dom.y0) < tol)
      ed.side = Side::bottom;
    else if (std::abs(a.y() - dom.y1) < tol && std::abs(b.y() - dom.y1) < tol)
      ed.side = Side::top;
  }

  // P1 dofs: one per periodic vertex class, numbered by first appearance.
  vdof_.assign(verts_.size(), -1);
  std::unordered_map<int32_t, int> class_dof;
  for (size_t i = 0; i < verts_.size(); ++i) {
    const int32_t c = f.vert(verts_[i]).pclass;
    auto it = class_dof.find(c);
    if (it == class_dof.end()) {
      class_dof.emplace(c, n_vdofs_);
      vdof_[i] = n_vdofs_++;
    } else {
      vdof_[i] = it->second;
    }
  }

  if (periodic()) {
    for (size_t i = 0; i < verts_.size(); ++i) {
      const ForestVert& fv = f.vert(verts_[i]);
      for (int32_t w : {fv.partner_x, fv.partner_y}) {
        if (w < 0) continue;
        auto it = vlocal_.find(w);
        if (it != vlocal_.end() && static_cast<int32_t>(i) < it->second)
          periodic_pairs_.emplace_back(static_cast<int32_t>(i), it->second);
      }
    }
  }

  // Locate grid.
  bbox_ = Rect{pos_[0].x(), pos_[0].y(), pos_[0].x(), pos_[0].y()};
  for (const Vec2& p : pos_) {
    bbox_.x0 = std::min(bbox_.x0, p.x());
    bbox_.y0 = std::min(bbox_.y0, p.y());
    bbox_.x1 = std::max(bbox_.x1, p.x());
    bbox_.y1 = std::max(bbox_.y1, p.y());
  }
  grid_nx_ = grid_ny_ = std::max(1, static_cast<int>(std::sqrt(ne / 2.0)));
  grid_.assign(grid_nx_ * grid_ny_, {});
  for (int t = 0; t < ne; ++t) {
    const auto& tv = tri_[t];
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (int k = 0; k < 3; ++k) {
      x0 = std::min(x0, pos_[tv[k]].x());
      y0 = std::min(y0, pos_[tv[k]].y());
      x1 = std::max(x1, pos_[tv[k]].x());
      y1 = std::max(y1, pos_[tv[k]].y());
    }
    const auto bin = [&](double x, double w0, double w1, int n) {
      return std::clamp(static_cast<int>((x - w0) / (w1 - w0) * n), 0, n - 1);
    };
    const int ix0 = bin(x0, bbox_.x0, bbox_.x1, grid_nx_);
    const int ix1 = bin(x1, bbox_.x0, bbox_.x1, grid_nx_);
    const int iy0 = bin(y0, bbox_.y0, bbox_.y1, grid_ny_);
    const int iy1 = bin(y1, bbox_.y0, bbox_.y1, grid_ny_);
    for (int iy = iy0; iy <= iy1; ++iy)
      for (int ix = ix0; ix <= ix1; ++ix)
        grid_[iy * grid_nx_ + ix].push_back(t);
  }

  check_conforming();
}

void TriMesh::check_conforming() const {
  for (const MeshEdge& ed : edges_) {
    if (ed.elem[1] != -1) continue;
    if (periodic())
      throw MeshError("TriMesh: periodic mesh has an unmatched edge");
    if (ed.side == Side::none)
      throw MeshError("TriMesh: interior edge with one element (hanging node)");
  }
}

// ---------------------------------------------------------------------------
// refine_marked
// ---------------------------------------------------------------------------

namespace {

/// Working leaf front during refinement: leaf set plus edge adjacency keyed
/// by the canonical (periodic-aware) edge id.
struct Front {
  Forest& f;
  std::unordered_set<int32_t> leaves;
  std::unordered_map<uint64_t, std::array<int32_t, 2>> adj;

  explicit Front(Forest& forest) : f(forest) {}

  bool is_leaf(int32_t e) const { return leaves.count(e) > 0; }

  void add(int32_t e) {
    leaves.insert(e);
    const auto& v = f.elem(e).v;
    for (int k = 0; k < 3; ++k) {
      const uint64_t key = f.edge_key(v[(k + 1) % 3], v[(k + 2) % 3]);
      auto [it, fresh] = adj.try_emplace(key, std::array<int32_t, 2>{-1, -1});
      auto& slot = it->second;
      if (slot[0] == e || slot[1] == e) continue;
      if (slot[0] == -1)
        slot[0] = e;
      else if (slot[1] == -1)
        slot[1] = e;
      else
        throw MeshError("refine: edge adjacent to >2 leaves");
    }
  }

  void remove(int32_t e) {
    leaves.erase(e);
    const auto& v = f.elem(e).v;
    for (int k = 0; k < 3; ++k) {
      const uint64_t key = f.edge_key(v[(k + 1) % 3], v[(k + 2) % 3]);
      auto it = adj.find(key);
      if (it == adj.end()) continue;
      if (it->second[0] == e) it->second[0] = -1;
      if (it->second[1] == e) it->second[1] = -1;
      if (it->second[0] == -1 && it->second[1] == -1) adj.erase(it);
    }
  }

  int32_t neighbor_at(uint64_t key, int32_t self) const {
    auto it = adj.find(key);
    if (it == adj.end()) return -1;
    if (it->second[0] != self && it->second[0] != -1) return it->second[0];
    if (it->second[1] != self && it->second[1] != -1) return it->second[1];
    return -1;
  }

  uint64_t refedge_key(int32_t e) const {
    const auto& v = f.elem(e).v;
    return f.edge_key(v[1], v[2]);
  }

  void do_bisect(int32_t e) {
    remove(e);
    const auto children = f.bisect(e);
    add(children[0]);
    add(children[1]);
  }

  /// Newest-vertex bisection of leaf e with recursive conformity closure.
  void ensure_bisected(int32_t e) {
    std::vector<int32_t> stack{e};
    size_t guard = 0;
    while (!stack.empty()) {
      if (++guard > 50'000'000) throw MeshError("refine: closure did not terminate");
      const int32_t s = stack.back();
      if (!is_leaf(s)) {
        stack.pop_back();
        continue;
      }
      const uint64_t key = refedge_key(s);
      const int32_t nb = neighbor_at(key, s);
      if (nb >= 0 && refedge_key(nb) != key) {
        stack.push_back(nb);
        continue;
      }
      do_bisect(s);
      if (nb >= 0) do_bisect(nb);
      stack.pop_back();
    }
  }
};

}  // namespace

namespace {

MeshPtr refine_impl(const MeshPtr& mesh, const std::vector<int>& marked,
                    bool quadrisect) {
  if (marked.empty()) return mesh;
  Forest& f = *std::const_pointer_cast<Forest>(
      std::static_pointer_cast<const Forest>(mesh->forest()));

  std::vector<int> order(marked);
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());
  if (order.front() < 0 || order.back() >= mesh->n_elems())
    throw MeshError("refine_marked: marked element out of range");

  Front front(f);
  for (int32_t e : mesh->leaf_ids()) front.add(e);

  for (int local : order) {
    const int32_t e = mesh->leaf_ids()[local];
    if (front.is_leaf(e)) front.ensure_bisected(e);
    if (!quadrisect) continue;
    for (int32_t c : f.elem(e).child) {
      if (c >= 0 && front.is_leaf(c)) front.ensure_bisected(c);
    }
  }

  std::vector<int32_t> leaves(front.leaves.begin(), front.leaves.end());
  return std::make_shared<TriMesh>(mesh->forest(), std::move(leaves));
}

}  // namespace

MeshPtr refine_marked(const MeshPtr& mesh, const std::vector<int>& marked) {
  return refine_impl(mesh, marked, true);
}

MeshPtr bisect_marked(const MeshPtr& mesh, const std::vector<int>& marked) {
  return refine_impl(mesh, marked, false);
}

// ---------------------------------------------------------------------------
// mesh_union
// ---------------------------------------------------------------------------

MeshPtr mesh_union(const MeshPtr& a, const MeshPtr& b) {
  if (a->forest() != b->forest())
    throw MeshError("mesh_union: meshes do not share genealogy");
  if (a == b || a->leaf_ids() == b->leaf_ids()) return a;

  const Forest& f = *a->forest();
  const auto interior_of = [&](const MeshPtr& m) {
    std::unordered_set<int32_t> in;
    for (int32_t e : m->leaf_ids()) {
      int32_t p = f.elem(e).parent;
      while (p >= 0 && in.insert(p).second) p = f.elem(p).parent;
    }
    return in;
  };
  const std::unordered_set<int32_t> ia = interior_of(a);
  const std::unordered_set<int32_t> ib = interior_of(b);

  std::vector<int32_t> leaves;
  std::vector<int32_t> stack;
  for (int32_t r = 0; r < f.n_roots(); ++r) stack.push_back(r);
  while (!stack.empty()) {
    const int32_t e = stack.back();
    stack.pop_back();
    if (ia.count(e) || ib.count(e)) {
      const auto& c = f.elem(e).child;
      if (c[0] < 0) throw MeshError("mesh_union: inconsistent genealogy");
      stack.push_back(c[0]);
      stack.push_back(c[1]);
    } else {
      leaves.push_back(e);
    }
  }
  std::sort(leaves.begin(), leaves.end());
  if (leaves == a->leaf_ids()) return a;
  if (leaves == b->leaf_ids()) return b;
  return std::make_shared<TriMesh>(a->forest(), std::move(leaves));
}

// ---------------------------------------------------------------------------
// compact_genealogy
// ---------------------------------------------------------------------------

std::pair<MeshPtr, std::vector<int32_t>> compact_genealogy(const MeshPtr& mesh) {
  const Forest& f = *mesh->forest();

  // Keep the ancestor closure of the leaf front, in forest order.
  std::unordered_set<int32_t> keep_set;
  for (int32_t e : mesh->leaf_ids()) {
    int32_t x = e;
    while (x >= 0 && keep_set.insert(x).second) x = f.elem(x).parent;
  }
  std::vector<int32_t> keep(keep_set.begin(), keep_set.end());
  std::sort(keep.begin(), keep.end());

  std::unordered_map<int32_t, int32_t> emap;
  emap.reserve(keep.size());
  for (size_t i = 0; i < keep.size(); ++i)
    emap.emplace(keep[i], static_cast<int32_t>(i));

  std::unordered_set<int32_t> leaf_set(mesh->leaf_ids().begin(),
                                       mesh->leaf_ids().end());

  // Referenced vertices, in forest order so interpolation parents precede
  // children.
  std::unordered_set<int32_t> vkeep_set;
  for (int32_t e : keep)
    for (int32_t v : f.elem(e).v) vkeep_set.insert(v);
  std::vector<int32_t> vkeep(vkeep_set.begin(), vkeep_set.end());
  std::sort(vkeep.begin(), vkeep.end());
  std::unordered_map<int32_t, int32_t> vmap;
  vmap.reserve(vkeep.size());
  for (size_t i = 0; i < vkeep.size(); ++i)
    vmap.emplace(vkeep[i], static_cast<int32_t>(i));

  ForestPtr nf(new Forest());
  nf->domain_ = f.domain();
  nf->periodic_ = f.periodic();
  nf->n_roots_ = f.n_roots();

  for (int32_t v : vkeep) {
    const ForestVert& fv = f.vert(v);
    const int32_t nv = nf->new_vertex(fv.pos);
    auto mapped = [&](int32_t w) {
      if (w < 0) return int32_t{-1};
      auto it = vmap.find(w);
      return it == vmap.end() ? int32_t{-1} : it->second;
    };
    nf->verts_[nv].partner_x = mapped(fv.partner_x);
    nf->verts_[nv].partner_y = mapped(fv.partner_y);
  }
  for (int32_t v = 0; v < nf->n_verts(); ++v) nf->set_pclass(v);

  for (int32_t e : keep) {
    const ForestElem& fe = f.elem(e);
    ForestElem ne;
    ne.v = {vmap.at(fe.v[0]), vmap.at(fe.v[1]), vmap.at(fe.v[2])};
    ne.parent = fe.parent < 0 ? -1 : emap.at(fe.parent);
    ne.level = fe.level;
    if (!leaf_set.count(e))
      ne.child = {emap.at(fe.child[0]), emap.at(fe.child[1])};
    nf->elems_.push_back(ne);
  }
  // Rebuild the midpoint table from split elements so later bisections of a
  // preserved edge find the existing vertex.
  for (int32_t e = 0; e < nf->n_elems(); ++e) {
    const ForestElem& ne = nf->elems_[e];
    if (!ne.has_children()) continue;
    const int32_t m = nf->elems_[ne.child[0]].v[0];
    nf->midpoints_.emplace(pack_pair(ne.v[1], ne.v[2]), m);
  }

  std::vector<int32_t> new_leaves;
  new_leaves.reserve(mesh->leaf_ids().size());
  for (int32_t e : mesh->leaf_ids()) new_leaves.push_back(emap.at(e));
  auto nm = std::make_shared<TriMesh>(nf, std::move(new_leaves));

  // Old local vertex index -> new local vertex index.
  std::vector<int32_t> vperm(mesh->n_verts(), -1);
  for (int v = 0; v < mesh->n_verts(); ++v)
    vperm[v] = nm->local_vid(vmap.at(mesh->global_vid(v)));
  return {nm, vperm};
}

}  // namespace twoscale
