#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include <random>
#include <set>
#include <unordered_set>

#include "twoscale/fields.hpp"
#include "twoscale/mesh.hpp"

using namespace twoscale;

namespace {

const Rect kCell{-0.5, -0.5, 0.5, 0.5};

bool is_descendant(const Forest& f, int32_t e, int32_t anc) {
  int32_t x = f.elem(e).parent;
  while (x >= 0) {
    if (x == anc) return true;
    x = f.elem(x).parent;
  }
  return false;
}

// Independent union oracle: for each leaf of a, the union restricted to it
// is either the leaf itself or the b-leaves strictly inside it.
std::set<int32_t> union_oracle(const MeshPtr& a, const MeshPtr& b) {
  const Forest& f = *a->forest();
  std::set<int32_t> out;
  for (int32_t ea : a->leaf_ids()) {
    bool any = false;
    for (int32_t eb : b->leaf_ids()) {
      if (is_descendant(f, eb, ea)) {
        out.insert(eb);
        any = true;
      }
    }
    if (!any) out.insert(ea);
  }
  return out;
}

ScalarField random_p1(const MeshPtr& m, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd c(m->n_vertex_dofs());
  for (int i = 0; i < c.size(); ++i) c[i] = dist(rng);
  return ScalarField(Family::p1, m, std::move(c));
}

}  // namespace

TEST_CASE("uniform cell meshes match expected sizes") {
  const MeshPtr y10 = build_uniform(kCell, 10, 10, true);
  CHECK(y10->n_elems() == 200);
  CHECK(y10->total_area() == doctest::Approx(1.0).epsilon(1e-12));

  const MeshPtr y60 = build_uniform(kCell, 60, 60, true);
  CHECK(y60->n_elems() == 7200);
  CHECK(y60->h_max() == doctest::Approx(2.357e-2).epsilon(2e-3));

  const MeshPtr q = build_uniform(Rect{0, 0, 1, 1}, 1, 1, false);
  REQUIRE(q->n_elems() == 2);
  CHECK(q->area(0) == doctest::Approx(0.5));
  CHECK(q->area(1) == doctest::Approx(0.5));

  CHECK_THROWS_AS(build_uniform(Rect{0, 0, 0, 1}, 2, 2, false), MeshError);
  CHECK_THROWS_AS(build_uniform(Rect{0, 0, 1, 1}, 0, 2, false), MeshError);
}

TEST_CASE("periodic pairing is an involution over boundary vertices") {
  const MeshPtr y = build_uniform(kCell, 4, 4, true);
  const auto& pairs = y->periodic_vertex_pairs();
  CHECK(!pairs.empty());
  std::set<std::pair<int32_t, int32_t>> seen;
  for (auto [a, b] : pairs) {
    CHECK(a < b);
    CHECK(!seen.count({a, b}));
    seen.insert({a, b});
    for (int v : {a, b}) {
      const Vec2 p = y->vertex(v);
      const bool on_bdry = std::abs(std::abs(p.x()) - 0.5) < 1e-12 ||
                           std::abs(std::abs(p.y()) - 0.5) < 1e-12;
      CHECK(on_bdry);
    }
    // paired vertices agree in the tangential coordinate
    const Vec2 d = y->vertex(a) - y->vertex(b);
    CHECK(std::min(std::abs(d.x()), std::abs(d.y())) < 1e-12);
  }
  // every boundary vertex appears in some pair
  int n_bdry = 0;
  for (int v = 0; v < y->n_verts(); ++v) {
    const Vec2 p = y->vertex(v);
    if (std::abs(std::abs(p.x()) - 0.5) < 1e-12 ||
        std::abs(std::abs(p.y()) - 0.5) < 1e-12)
      ++n_bdry;
  }
  std::set<int32_t> in_pairs;
  for (auto [a, b] : pairs) {
    in_pairs.insert(a);
    in_pairs.insert(b);
  }
  CHECK(static_cast<int>(in_pairs.size()) == n_bdry);
}

TEST_CASE("refine_marked basics") {
  const MeshPtr root = build_uniform(Rect{0, 0, 1, 1}, 1, 1, false);

  SUBCASE("empty mark returns the identical mesh") {
    CHECK(refine_marked(root, {}) == root);
  }

  SUBCASE("marking both triangles quadrisects them") {
    const MeshPtr fine = refine_marked(root, {0, 1});
    CHECK(fine->n_elems() == 8);
    CHECK(fine->h_max() == doctest::Approx(0.5 * root->h_max()));
    CHECK(fine->h_min() == doctest::Approx(0.5 * root->h_min()));
    CHECK(fine->total_area() == doctest::Approx(1.0));
  }

  SUBCASE("children never exceed parent diameter") {
    MeshPtr m = root;
    std::mt19937 rng(7);
    for (int round = 0; round < 4; ++round) {
      std::vector<int> marked;
      for (int t = 0; t < m->n_elems(); ++t)
        if (rng() % 3 == 0) marked.push_back(t);
      if (marked.empty()) marked.push_back(0);
      m = refine_marked(m, marked);
    }
    const Forest& f = *m->forest();
    for (int32_t e = 0; e < f.n_elems(); ++e) {
      const auto& el = f.elem(e);
      if (!el.has_children()) continue;
      const auto diam = [&](int32_t id) {
        const auto& v = f.elem(id).v;
        const Vec2 &a = f.vert(v[0]).pos, &b = f.vert(v[1]).pos,
                   &c = f.vert(v[2]).pos;
        return std::max({(a - b).norm(), (b - c).norm(), (c - a).norm()});
      };
      for (int32_t c : el.child) CHECK(diam(c) <= diam(e) + 1e-15);
    }
  }

  SUBCASE("marked element out of range rejected") {
    CHECK_THROWS_AS(refine_marked(root, {5}), MeshError);
  }
}

TEST_CASE("band refinement on the 200-element cell reaches min edge 2.50e-2") {
  MeshPtr m = build_uniform(kCell, 10, 10, true);
  const double lambda = 0.08;
  const double h_min = lambda / 3.0;
  // refine elements crossing an annulus around the initial interface
  for (int round = 0; round < 20; ++round) {
    std::vector<int> marked;
    for (int t = 0; t < m->n_elems(); ++t) {
      const double r = m->centroid(t).norm();
      if (r > 0.25 && r < 0.45 && m->elem_min_edge(t) > h_min)
        marked.push_back(t);
    }
    if (marked.empty()) break;
    m = bisect_marked(m, marked);
  }
  double min_edge = 1e300;
  for (int t = 0; t < m->n_elems(); ++t)
    min_edge = std::min(min_edge, m->elem_min_edge(t));
  CHECK(min_edge == doctest::Approx(2.50e-2).epsilon(1e-9));
  CHECK(m->h_max() == doctest::Approx(std::sqrt(2.0) / 10).epsilon(1e-12));
  CHECK(m->total_area() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("refinement touching the periodic boundary mirrors across") {
  const MeshPtr y = build_uniform(kCell, 4, 4, true);
  // mark an element with an edge on the left boundary
  int pick = -1;
  for (int t = 0; t < y->n_elems() && pick < 0; ++t)
    for (int k = 0; k < 3; ++k)
      if (std::abs(y->vertex(y->tri(t)[k]).x() + 0.5) < 1e-12 &&
          std::abs(y->vertex(y->tri(t)[(k + 1) % 3]).x() + 0.5) < 1e-12)
        pick = t;
  REQUIRE(pick >= 0);
  const MeshPtr r = refine_marked(y, {pick});
  CHECK(r->n_elems() > y->n_elems());
  // boundary traces still match vertex for vertex: every boundary vertex on
  // x=-0.5 has a twin at x=+0.5 with the same y (and vice versa)
  for (int v = 0; v < r->n_verts(); ++v) {
    const Vec2 p = r->vertex(v);
    if (std::abs(p.x() + 0.5) < 1e-12) {
      bool found = false;
      for (int w = 0; w < r->n_verts(); ++w)
        if (std::abs(r->vertex(w).x() - 0.5) < 1e-12 &&
            std::abs(r->vertex(w).y() - p.y()) < 1e-12)
          found = true;
      CHECK(found);
    }
  }
}

TEST_CASE("mesh_union") {
  const MeshPtr root = build_uniform(Rect{0, 0, 1, 1}, 1, 1, false);
  const MeshPtr a = refine_marked(root, {0});
  const MeshPtr b = refine_marked(root, {1});

  SUBCASE("idempotent and refinement-dominant") {
    CHECK(mesh_union(a, a) == a);
    CHECK(mesh_union(root, a)->leaf_ids() == a->leaf_ids());
    CHECK(mesh_union(a, root)->leaf_ids() == a->leaf_ids());
  }

  SUBCASE("disjoint marks agree with the genealogy-walk oracle") {
    const MeshPtr u = mesh_union(a, b);
    CHECK(u->n_elems() == 8);  // |a| + |b| - shared part = 6 + 6 - 4
    const std::set<int32_t> expect = union_oracle(a, b);
    const std::set<int32_t> got(u->leaf_ids().begin(), u->leaf_ids().end());
    CHECK(got == expect);
  }

  SUBCASE("commutative and associative") {
    const MeshPtr c = refine_marked(a, {0, 1});
    CHECK(mesh_union(a, b)->leaf_ids() == mesh_union(b, a)->leaf_ids());
    CHECK(mesh_union(mesh_union(a, b), c)->leaf_ids() ==
          mesh_union(a, mesh_union(b, c))->leaf_ids());
  }

  SUBCASE("incompatible genealogy rejected") {
    const MeshPtr other = build_uniform(Rect{0, 0, 1, 1}, 1, 1, false);
    CHECK_THROWS_AS(mesh_union(a, refine_marked(other, {0})), MeshError);
  }
}

TEST_CASE("project") {
  const MeshPtr coarse = build_uniform(Rect{0, 0, 1, 1}, 1, 1, false);
  const MeshPtr fine = refine_marked(coarse, {0, 1});

  SUBCASE("constants are preserved") {
    const ScalarField c = make_p1(coarse, 0.5);
    const ScalarField pf = project(c, fine);
    CHECK((pf.coeffs.array() - 0.5).abs().maxCoeff() < 1e-14);
    const ScalarField back = project(pf, coarse);
    CHECK((back.coeffs.array() - 0.5).abs().maxCoeff() < 1e-12);
  }

  SUBCASE("coarse-to-fine-to-coarse round trip is the identity") {
    const ScalarField f = random_p1(coarse, 3);
    const ScalarField round = project(project(f, fine), coarse);
    CHECK((round.coeffs - f.coeffs).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("fine-to-coarse matches a dense mass-matrix oracle") {
    const ScalarField f = random_p1(fine, 11);
    const ScalarField proj = project(f, coarse);

    // dense oracle: minimize ||f - sum c_i hat_i||_{L2} via normal equations,
    // quadrature with the 3-edge-midpoint rule (exact for quadratics)
    const int n = coarse->n_vertex_dofs();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (int t = 0; t < fine->n_elems(); ++t) {
      const auto& tv = fine->tri(t);
      const Vec2 p[3] = {fine->vertex(tv[0]), fine->vertex(tv[1]),
                         fine->vertex(tv[2])};
      const Vec2 q[3] = {0.5 * (p[0] + p[1]), 0.5 * (p[1] + p[2]),
                         0.5 * (p[2] + p[0])};
      for (const Vec2& x : q) {
        const double w = fine->area(t) / 3.0;
        const double fx = eval(f, x);
        const int tc = coarse->locate(x);
        const Eigen::Vector3d lam = coarse->barycentric(tc, x);
        for (int i = 0; i < 3; ++i) {
          const int gi = coarse->vertex_dof(coarse->tri(tc)[i]);
          rhs[gi] += w * lam[i] * fx;
          for (int j = 0; j < 3; ++j)
            M(gi, coarse->vertex_dof(coarse->tri(tc)[j])) +=
                w * lam[i] * lam[j];
        }
      }
    }
    const Eigen::VectorXd expect = M.ldlt().solve(rhs);
    CHECK((proj.coeffs - expect).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("p1 projection to coarser preserves the integral") {
    MeshPtr m = fine;
    m = refine_marked(m, {0, 3, 5});
    const ScalarField f = random_p1(m, 5);
    const ScalarField proj = project(f, coarse);
    CHECK(integrate(proj) == doctest::Approx(integrate(f)).epsilon(1e-12));
  }

  SUBCASE("p0 projection preserves element means exactly") {
    std::mt19937 rng(9);
    Eigen::VectorXd c(fine->n_elems());
    for (int i = 0; i < c.size(); ++i) c[i] = rng() % 100 / 10.0;
    const ScalarField f(Family::p0, fine, c);
    const ScalarField proj = project(f, coarse);
    for (int t = 0; t < coarse->n_elems(); ++t) {
      double acc = 0;
      for (int s = 0; s < fine->n_elems(); ++s) {
        if (is_descendant(*fine->forest(), fine->leaf_ids()[s],
                          coarse->leaf_ids()[t]))
          acc += fine->area(s) * c[s];
      }
      CHECK(proj.coeffs[t] == doctest::Approx(acc / coarse->area(t)).epsilon(1e-13));
    }
  }
}

TEST_CASE("projection works on periodic meshes") {
  const MeshPtr y = build_uniform(kCell, 4, 4, true);
  const MeshPtr fy = refine_marked(y, {0, 1, 2});
  const ScalarField f = random_p1(y, 21);
  const ScalarField round = project(project(f, fy), y);
  CHECK((round.coeffs - f.coeffs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("compact_genealogy preserves the mesh and fields") {
  MeshPtr m = build_uniform(kCell, 4, 4, true);
  for (int round = 0; round < 3; ++round) {
    std::vector<int> marked;
    for (int t = 0; t < m->n_elems(); ++t)
      if (m->centroid(t).norm() < 0.3) marked.push_back(t);
    m = refine_marked(m, marked);
  }
  const ScalarField f = random_p1(m, 13);

  auto [cm, vperm] = compact_genealogy(m);
  CHECK(cm->n_elems() == m->n_elems());
  CHECK(cm->n_verts() == m->n_verts());
  CHECK(cm->total_area() == doctest::Approx(m->total_area()).epsilon(1e-14));
  CHECK(cm->forest()->n_elems() <= m->forest()->n_elems());

  const ScalarField g = remap_field(f, cm, vperm);
  CHECK(integrate(g) == doctest::Approx(integrate(f)).epsilon(1e-13));

  // compacted mesh keeps refining and projecting correctly
  const MeshPtr cm2 = refine_marked(cm, {0, 5});
  const ScalarField gf = project(g, cm2);
  CHECK(integrate(gf) == doctest::Approx(integrate(g)).epsilon(1e-12));
  const ScalarField back = project(gf, cm);
  CHECK((back.coeffs - g.coeffs).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("locate and eval") {
  const MeshPtr m = build_uniform(Rect{0, 0, 1, 1}, 8, 8, false);
  ScalarField f = make_p1(m, 0.0);
  for (int v = 0; v < m->n_verts(); ++v)
    f.coeffs[m->vertex_dof(v)] = m->vertex(v).x() + 2.0 * m->vertex(v).y();
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Vec2 p(dist(rng), dist(rng));
    CHECK(eval(f, p) == doctest::Approx(p.x() + 2.0 * p.y()).epsilon(1e-12));
  }
}
