#include "twoscale/cell_problems.hpp"

#include <Eigen/SparseLU>

#include <cmath>

namespace twoscale {

double drag(double phi, double lambda) {
  return 10.0 * 25.0 * (1.0 - phi) / (lambda * (phi + 10.0));
}

namespace {

// Edge midpoints of element t, ordered like elem_edges (opposite vertex k).
std::array<Vec2, 3> edge_midpoints(const TriMesh& m, int t) {
  const auto& tv = m.tri(t);
  const Vec2 p0 = m.vertex(tv[0]), p1 = m.vertex(tv[1]), p2 = m.vertex(tv[2]);
  return {0.5 * (p1 + p2), 0.5 * (p2 + p0), 0.5 * (p0 + p1)};
}

Eigen::VectorXd solve_sparse(const SpMat& A, const Eigen::VectorXd& rhs,
                             const char* what) {
  Eigen::SparseLU<SpMat> lu;
  lu.analyzePattern(A);
  lu.factorize(A);
  if (lu.info() != Eigen::Success)
    throw SolverError(std::string(what) + ": factorization failed");
  Eigen::VectorXd x = lu.solve(rhs);
  if (lu.info() != Eigen::Success)
    throw SolverError(std::string(what) + ": solve failed");
  const double res = (A * x - rhs).norm();
  const double scale = std::max(1.0, rhs.norm());
  if (!(res / scale < 1e-8))
    throw SolverError(std::string(what) +
                      ": residual too large: " + std::to_string(res));
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// Diffusion cell problem (face-flux mixed form)
// ---------------------------------------------------------------------------

DiffusionCellResult solve_diffusion_cell(const MeshPtr& mesh,
                                         const CellCoefficient& phi_delta) {
  const TriMesh& m = *mesh;
  if (!m.periodic()) throw SolverError("diffusion cell: periodic mesh required");
  const int ne = m.n_edges(), nt = m.n_elems();
  const int n = ne + nt + 1;  // fluxes, omega, mean multiplier

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(nt * 16);
  Eigen::Matrix<double, Eigen::Dynamic, 2> rhs = Eigen::MatrixXd::Zero(n, 2);

  for (int t = 0; t < nt; ++t) {
    const auto& tv = m.tri(t);
    const auto& te = m.elem_edges(t);
    const Vec2 pv[3] = {m.vertex(tv[0]), m.vertex(tv[1]), m.vertex(tv[2])};
    const Vec2 cen = (pv[0] + pv[1] + pv[2]) / 3.0;
    const auto mids = edge_midpoints(m, t);
    const double area = m.area(t);

    double sgn[3], elen[3];
    for (int k = 0; k < 3; ++k) {
      sgn[k] = m.edge_sign(t, k);
      elen[k] = m.edge(te[k]).length;
    }
    // local basis psi_k = |e_k|/(2A) (y - p_k), unit outward flux on edge k
    const auto psi = [&](int k, const Vec2& y) -> Vec2 {
      return elen[k] / (2.0 * area) * (y - pv[k]);
    };

    // <phi_delta^{-1} Psi_a, Psi_b> by the edge-midpoint rule
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        double acc = 0;
        for (int q = 0; q < 3; ++q)
          acc += area / 3.0 / phi_delta(t, mids[q]) *
                 psi(a, mids[q]).dot(psi(b, mids[q]));
        trip.emplace_back(te[a], te[b], sgn[a] * sgn[b] * acc);
      }
      // -<omega, div Psi_a> and its transpose in the continuity rows
      const double d = -sgn[a] * elen[a];
      trip.emplace_back(te[a], ne + t, d);
      trip.emplace_back(ne + t, te[a], d);
      // -<e_s, Psi_a>
      for (int s = 0; s < 2; ++s)
        rhs(te[a], s) -= sgn[a] * elen[a] / 2.0 * (cen - pv[a])[s];
    }
    // mean constraint on omega
    trip.emplace_back(ne + t, n - 1, area);
    trip.emplace_back(n - 1, ne + t, area);
  }

  SpMat A(n, n);
  A.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<SpMat> lu;
  lu.analyzePattern(A);
  lu.factorize(A);
  if (lu.info() != Eigen::Success)
    throw SolverError("diffusion cell: singular system");

  DiffusionCellResult res;
  Eigen::Matrix2d Amat;
  for (int s = 0; s < 2; ++s) {
    const Eigen::VectorXd x = lu.solve(rhs.col(s));
    if (lu.info() != Eigen::Success)
      throw SolverError("diffusion cell: solve failed");
    res.flux[s] = VectorField{Family::face_flux, mesh, x.head(ne)};
    res.omega[s] = ScalarField(Family::p0, mesh, x.segment(ne, nt));

    // A_{rs} = int phi_delta (e_s + grad w^s)_r = -int v^s_r
    Eigen::Vector2d col = Eigen::Vector2d::Zero();
    for (int t = 0; t < nt; ++t) {
      const auto& tv = m.tri(t);
      const auto& te = m.elem_edges(t);
      const Vec2 cen = m.centroid(t);
      for (int k = 0; k < 3; ++k) {
        const Vec2 integral = m.edge(te[k]).length / 2.0 * (cen - m.vertex(tv[k]));
        col -= m.edge_sign(t, k) * x[te[k]] * integral;
      }
    }
    Amat.col(s) = col;
  }

  res.asymmetry = std::abs(Amat(0, 1) - Amat(1, 0));
  if (res.asymmetry > 1e-8 * std::max(1.0, Amat.cwiseAbs().maxCoeff()))
    throw SolverError("diffusion cell: unexpected asymmetry " +
                      std::to_string(res.asymmetry));
  res.A = 0.5 * (Amat + Amat.transpose());
  return res;
}

DiffusionCellResult solve_diffusion_cell(const ScalarField& phi, double delta) {
  if (phi.family != Family::p1)
    throw SolverError("diffusion cell: p1 phase field expected");
  const TriMesh& m = *phi.mesh;
  const CellCoefficient coeff = [&phi, &m, delta](int t, const Vec2& y) {
    const Eigen::Vector3d l = m.barycentric(t, y);
    double v = 0;
    for (int k = 0; k < 3; ++k) v += l[k] * phi.at_vertex(m.tri(t)[k]);
    return std::clamp(v, 0.0, 1.0) + delta;
  };
  return solve_diffusion_cell(phi.mesh, coeff);
}

// ---------------------------------------------------------------------------
// Permeability cell problem (nonconforming velocity / constant pressure)
// ---------------------------------------------------------------------------

PermeabilityCellResult solve_permeability_cell(const ScalarField& phi,
                                               const ChemistryParams& p) {
  if (phi.family != Family::p1)
    throw SolverError("permeability cell: p1 phase field expected");
  const TriMesh& m = *phi.mesh;
  if (!m.periodic())
    throw SolverError("permeability cell: periodic mesh required");
  const int ne = m.n_edges(), nt = m.n_elems();
  const int n = 2 * ne + nt + 1;  // w_x, w_y, Pi, mean multiplier

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(nt * 40);
  Eigen::Matrix<double, Eigen::Dynamic, 2> rhs = Eigen::MatrixXd::Zero(n, 2);

  for (int t = 0; t < nt; ++t) {
    const auto& tv = m.tri(t);
    const auto& te = m.elem_edges(t);
    const double area = m.area(t);
    const auto g = m.hat_gradients(t);
    const auto mids = edge_midpoints(m, t);

    double phiv[3];
    for (int k = 0; k < 3; ++k) phiv[k] = std::clamp(phi.at_vertex(tv[k]), 0.0, 1.0);
    const double phid_mean = (phiv[0] + phiv[1] + phiv[2]) / 3.0 + p.delta;
    const Vec2 grad_phid = phiv[0] * g[0] + phiv[1] * g[1] + phiv[2] * g[2];
    double phid_mid[3];
    for (int k = 0; k < 3; ++k) {
      const double pm =
          0.5 * (phiv[(k + 1) % 3] + phiv[(k + 2) % 3]);  // p1 at midpoint k
      phid_mid[k] = pm + p.delta;
    }

    // nonconforming basis theta_k = 1 - 2 lambda_k
    Vec2 gth[3];
    for (int k = 0; k < 3; ++k) gth[k] = -2.0 * g[k];

    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        // mu_f int (phi_d grad th_i + th_i grad phi_d) . grad th_j
        double visc = p.mu_f * (phid_mean * gth[i].dot(gth[j]) * area +
                                grad_phid.dot(gth[j]) * area / 3.0);
        // drag (g(phi)/phi_d) th_i th_j by the midpoint rule: diagonal
        double dr = 0.0;
        if (i == j) {
          const double phim = phid_mid[i] - p.delta;
          dr = area / 3.0 * drag(phim, p.lambda) / phid_mid[i];
        }
        for (int r = 0; r < 2; ++r)
          trip.emplace_back(r * ne + te[i], r * ne + te[j], visc + dr);
      }
      // pressure gradient block: <Pi, div v>
      for (int r = 0; r < 2; ++r) {
        const double d = area * gth[i][r];
        trip.emplace_back(r * ne + te[i], 2 * ne + t, d);
      }
      // continuity: <div(phi_d w), q> = q int (phi_d div w + grad phi_d . w)
      for (int r = 0; r < 2; ++r) {
        const double c =
            phid_mean * gth[i][r] * area + grad_phid[r] * area / 3.0;
        trip.emplace_back(2 * ne + t, r * ne + te[i], c);
      }
      // <e_s, v>
      for (int s = 0; s < 2; ++s) rhs(s * ne + te[i], s) += area / 3.0;
    }
    trip.emplace_back(2 * ne + t, n - 1, area);
    trip.emplace_back(n - 1, 2 * ne + t, area);
  }

  SpMat A(n, n);
  A.setFromTriplets(trip.begin(), trip.end());

  PermeabilityCellResult res;
  for (int s = 0; s < 2; ++s) {
    const Eigen::VectorXd x = solve_sparse(A, rhs.col(s), "permeability cell");
    res.w[s] = VectorField{Family::nc1, phi.mesh, x.head(2 * ne)};
    res.Pi[s] = ScalarField(Family::p0, phi.mesh, x.segment(2 * ne, nt));

    // K_{rs} = int phi_delta w^s_r, exact for the quadratic integrand
    Eigen::Vector2d col = Eigen::Vector2d::Zero();
    for (int t = 0; t < nt; ++t) {
      const auto& tv = m.tri(t);
      const auto& te = m.elem_edges(t);
      for (int k = 0; k < 3; ++k) {
        const double pm =
            0.5 * (std::clamp(phi.at_vertex(tv[(k + 1) % 3]), 0.0, 1.0) +
                   std::clamp(phi.at_vertex(tv[(k + 2) % 3]), 0.0, 1.0)) +
            p.delta;
        for (int r = 0; r < 2; ++r)
          col[r] += m.area(t) / 3.0 * pm * x[r * ne + te[k]];
      }
    }
    res.K.col(s) = col;
  }
  return res;
}

EffectiveTensors effective_update(const ScalarField& phi,
                                  const ChemistryParams& p,
                                  bool with_permeability) {
  EffectiveTensors eff;
  eff.porosity = porosity(phi);
  eff.A = solve_diffusion_cell(phi, p.delta).A;
  if (with_permeability) {
    eff.K = solve_permeability_cell(phi, p).K;
    eff.has_K = true;
  }
  return eff;
}

}  // namespace twoscale
