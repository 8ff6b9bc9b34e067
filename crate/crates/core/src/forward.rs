//! Collocation boundary-element forward solver.
//!
//! The scattered field of a fracture with opening displacement `[u]` is the
//! double-layer potential
//!
//! ```text
//! u~_l(xi) = - int_G Sigma_ij^l(xi, x) [u_i](x) n_j(x) dS_x,
//! ```
//!
//! and its traction on the fracture satisfies the regularized traction
//! boundary integral equation (integration by parts moves one derivative
//! onto the density through the tangential operator `D`):
//!
//! ```text
//! t~_p(xi) = - n_q(xi) C_pqlb  CPV int_G Sigma_ij^l(xi, x) D_jb([u_i]) dS
//!            + rho w^2 n_q(xi) C_pqlb int_G U_il(xi, x) [u_i] n_b(x) dS.
//! ```
//!
//! Coupling with the linear-slip contact law `n.C:grad u~ = K [u] - t^i`
//! yields the dense system `(K' - T') [u] = t^i` on the interior nodal
//! unknowns (edge nodes are pinned to zero), solved by least squares when
//! collocation rows exceed unknowns.
//!
//! The strongly singular self-element integrals use polar coordinates about
//! the collocation point with the `1/rho` part subtracted numerically and
//! reinstated in closed form (the finite-part `ln R + ln A` correction);
//! near-singular element integrals use distance-adaptive subdivision of the
//! parameter domain. Assembly is parallel over collocation points.

use std::sync::OnceLock;

use faer::c64;
use faer::{Col, Mat};
use nalgebra::{Matrix3, Vector2, Vector3};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::kernels::{
    self, greens_displacement, greens_stress, ElasticMedium, FarFieldSample,
    IncidentPlaneWave,
};
use crate::linalg::{self, ComplexSvd};
use crate::mesh::{CollocationPoint, CollocationSet, FodVector, FractureMesh, ParamDomain};
use crate::{Error, Result};

/// Relative distance (in element diameters) beyond which the cached regular
/// quadrature is accurate enough.
const NEAR_FACTOR: f64 = 2.0;
/// Maximum depth of the adaptive parameter-space subdivision.
const MAX_SUBDIV: u32 = 20;
/// Probe radius (parameter units) for the numerical `1/rho` coefficient.
const RHO_PROBE: f64 = 1e-6;

/// Specific-stiffness field sampled at the collocation points, expressed in
/// the local frame `(n, e1, e2)`.
///
/// Matrices are symmetric with `Im(K) <= 0` (energy dissipation).
#[derive(Debug, Clone)]
pub struct StiffnessField {
    k: Vec<Matrix3<Complex64>>,
}

impl StiffnessField {
    pub fn new(k: Vec<Matrix3<Complex64>>) -> Result<Self> {
        for (idx, m) in k.iter().enumerate() {
            let scale = m.norm().max(1e-300);
            for a in 0..3 {
                for b in 0..3 {
                    if (m[(a, b)] - m[(b, a)]).norm() > 1e-10 * scale {
                        return Err(Error::Config(format!(
                            "stiffness matrix {idx} is not symmetric"
                        )));
                    }
                    if m[(a, b)].im > 1e-10 * scale {
                        return Err(Error::Config(format!(
                            "stiffness matrix {idx} has Im(K) > 0 (energy gain)"
                        )));
                    }
                }
            }
        }
        Ok(Self { k })
    }

    /// Traction-free fracture: `K = 0` everywhere.
    pub fn traction_free(n_points: usize) -> Self {
        Self {
            k: vec![Matrix3::zeros(); n_points],
        }
    }

    /// Diagonal field `diag(kappa_n, kappa_s1, kappa_s2)` from a per-point
    /// sampling function.
    pub fn diagonal(
        colloc: &CollocationSet,
        f: impl Fn(&CollocationPoint) -> (Complex64, Complex64, Complex64),
    ) -> Result<Self> {
        let k = colloc
            .points
            .iter()
            .map(|p| {
                let (kn, ks1, ks2) = f(p);
                Matrix3::from_diagonal(&Vector3::new(kn, ks1, ks2))
            })
            .collect();
        Self::new(k)
    }

    /// Normal/shear field `diag(kappa_n, kappa_s, kappa_s)`.
    pub fn normal_shear(
        colloc: &CollocationSet,
        f: impl Fn(&CollocationPoint) -> (Complex64, Complex64),
    ) -> Result<Self> {
        Self::diagonal(colloc, |p| {
            let (kn, ks) = f(p);
            (kn, ks, ks)
        })
    }

    pub fn matrices(&self) -> &[Matrix3<Complex64>] {
        &self.k
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }
}

/// Dense discrete traction operator `T'` (`3 N_col x 3 N_nds`) with its SVD
/// computed on demand.
pub struct TractionSystem {
    pub matrix: Mat<c64>,
    svd: OnceLock<ComplexSvd>,
}

impl TractionSystem {
    pub fn new(matrix: Mat<c64>) -> Self {
        Self {
            matrix,
            svd: OnceLock::new(),
        }
    }

    pub fn n_colloc(&self) -> usize {
        self.matrix.nrows() / 3
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.ncols() / 3
    }

    /// Thin SVD of `T'`, computed once and cached.
    pub fn svd(&self) -> Result<&ComplexSvd> {
        if self.svd.get().is_none() {
            let s = ComplexSvd::new(&self.matrix)?;
            let _ = self.svd.set(s);
        }
        Ok(self.svd.get().expect("svd just initialized"))
    }
}

/// Far-field data of one excitation over a list of observation directions.
#[derive(Debug, Clone)]
pub struct FarFieldDataset {
    pub omega: f64,
    pub samples: Vec<FarFieldSample>,
}

/// `alpha(v)[p][l] = n_q(xi) C_pqlb v_b
///                 = lambda nxi_p v_l + mu (delta_pl (nxi.v) + v_p nxi_l)`
/// — the elasticity tensor contracted with the collocation normal and an
/// arbitrary vector.
fn alpha_contraction(nxi: &Vector3<f64>, v: &Vector3<f64>, med: &ElasticMedium) -> Matrix3<f64> {
    let lambda = med.lambda();
    let mu = med.mu();
    let dot = nxi.dot(v);
    let mut a = Matrix3::zeros();
    for p in 0..3 {
        for l in 0..3 {
            let d_pl = if p == l { 1.0 } else { 0.0 };
            a[(p, l)] = lambda * nxi[p] * v[l] + mu * (d_pl * dot + v[p] * nxi[l]);
        }
    }
    a
}

/// TBIE integrand at one surface quadrature point: per-element-node 3x3
/// blocks `B[c][(p, i)]` (per unit surface area) and the area Jacobian.
fn tbie_integrand(
    mesh: &FractureMesh,
    el: usize,
    u: f64,
    v: f64,
    cp: &CollocationPoint,
    med: &ElasticMedium,
    omega: f64,
) -> Result<([Matrix3<Complex64>; 4], f64, usize)> {
    let element = mesh.element(el);
    let n_nodes = element.nodes().len();
    let g = mesh.element_geometry(el, u, v);
    let (shape, du, dv) = element.shape(u, v);
    let (a_u, a_v) = g.grad_weights();
    let sig = greens_stress(&cp.position, &g.position, med, omega)?;
    let uu = greens_displacement(&cp.position, &g.position, med, omega)?;
    let nx = g.normal;
    let a_n = alpha_contraction(&cp.normal, &nx, med);
    // Sn[i][l] = sum_j Sigma_ij^l n_j(x)
    let mut sn = [[Complex64::default(); 3]; 3];
    for i in 0..3 {
        for l in 0..3 {
            for j in 0..3 {
                sn[i][l] += sig[i][j][l] * nx[j];
            }
        }
    }
    let rw2 = med.rho() * omega * omega;
    let mut blocks = [Matrix3::<Complex64>::zeros(); 4];
    for c in 0..n_nodes {
        let s_c = a_u * du[c] + a_v * dv[c]; // surface gradient of shape c
        let a_s = alpha_contraction(&cp.normal, &s_c, med);
        // Ss[i][l] = sum_j Sigma_ij^l s_c[j]
        let mut ss = [[Complex64::default(); 3]; 3];
        for i in 0..3 {
            for l in 0..3 {
                for j in 0..3 {
                    ss[i][l] += sig[i][j][l] * s_c[j];
                }
            }
        }
        for p in 0..3 {
            for i in 0..3 {
                let mut t1 = Complex64::default();
                let mut t2 = Complex64::default();
                for l in 0..3 {
                    t1 += sn[i][l] * a_s[(p, l)] - ss[i][l] * a_n[(p, l)];
                    t2 += uu[(i, l)] * a_n[(p, l)];
                }
                blocks[c][(p, i)] = -t1 + rw2 * shape[c] * t2;
            }
        }
    }
    Ok((blocks, g.jacobian, n_nodes))
}

/// Reference parameter domain of an element as a triangle fan (adaptive
/// subdivision and polar sectors both work on straight-sided pieces).
fn param_triangles(domain: ParamDomain) -> Vec<[Vector2<f64>; 3]> {
    match domain {
        ParamDomain::Square => vec![
            [
                Vector2::new(-1.0, -1.0),
                Vector2::new(1.0, -1.0),
                Vector2::new(1.0, 1.0),
            ],
            [
                Vector2::new(-1.0, -1.0),
                Vector2::new(1.0, 1.0),
                Vector2::new(-1.0, 1.0),
            ],
        ],
        ParamDomain::Triangle => vec![[
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
        ]],
    }
}

fn domain_corners(domain: ParamDomain) -> Vec<Vector2<f64>> {
    match domain {
        ParamDomain::Square => vec![
            Vector2::new(-1.0, -1.0),
            Vector2::new(1.0, -1.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(-1.0, 1.0),
        ],
        ParamDomain::Triangle => vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
        ],
    }
}

/// Degree-5 rule on the reference triangle (barycentric abscissae and
/// weights summing to the reference area 1/2), shared by the adaptive cells.
const TRI_RULE: [(f64, f64, f64); 7] = {
    const W1: f64 = 0.225 / 2.0;
    const A2: f64 = 0.470_142_064_105_115;
    const W2: f64 = 0.132_394_152_788_506 / 2.0;
    const A3: f64 = 0.101_286_507_323_456;
    const W3: f64 = 0.125_939_180_544_827 / 2.0;
    [
        (1.0 / 3.0, 1.0 / 3.0, W1),
        (A2, A2, W2),
        (1.0 - 2.0 * A2, A2, W2),
        (A2, 1.0 - 2.0 * A2, W2),
        (A3, A3, W3),
        (1.0 - 2.0 * A3, A3, W3),
        (A3, 1.0 - 2.0 * A3, W3),
    ]
};

/// Adaptive integration of `f(u, v, w_param)` over a parameter triangle,
/// subdividing while the cell is close to `target` relative to its size.
fn integrate_adaptive(
    mesh: &FractureMesh,
    el: usize,
    cell: &[Vector2<f64>; 3],
    target: &Vector3<f64>,
    depth: u32,
    f: &mut dyn FnMut(f64, f64, f64) -> Result<()>,
) -> Result<()> {
    let corners3d: Vec<Vector3<f64>> = cell
        .iter()
        .map(|c| mesh.element_geometry(el, c.x, c.y).position)
        .collect();
    let mut diam: f64 = 0.0;
    for a in 0..3 {
        for b in (a + 1)..3 {
            diam = diam.max((corners3d[a] - corners3d[b]).norm());
        }
    }
    let center = (corners3d[0] + corners3d[1] + corners3d[2]) / 3.0;
    let dist = (center - target).norm();
    if depth >= MAX_SUBDIV || dist > NEAR_FACTOR * diam {
        // Jacobian of the map from the reference triangle onto the cell;
        // the rule weights already carry the reference area 1/2
        let e1 = cell[1] - cell[0];
        let e2 = cell[2] - cell[0];
        let jac_cell = (e1.x * e2.y - e1.y * e2.x).abs();
        for &(a, b, w) in &TRI_RULE {
            let p = cell[0] + e1 * a + e2 * b;
            f(p.x, p.y, w * jac_cell)?;
        }
        return Ok(());
    }
    let m01 = (cell[0] + cell[1]) / 2.0;
    let m12 = (cell[1] + cell[2]) / 2.0;
    let m20 = (cell[2] + cell[0]) / 2.0;
    for child in [
        [cell[0], m01, m20],
        [m01, cell[1], m12],
        [m20, m12, cell[2]],
        [m01, m12, m20],
    ] {
        integrate_adaptive(mesh, el, &child, target, depth + 1, f)?;
    }
    Ok(())
}

/// Polar finite-part integration over the collocation point's own element.
///
/// In polar parameter coordinates `(rho, theta)` about the collocation
/// point, the integrand times `Jacobian * rho` behaves as
/// `F_-1(theta)/rho + O(1)`. The `1/rho` coefficient is probed numerically
/// at `rho_0 = 1e-6`, subtracted inside the radial quadrature, and its
/// Cauchy principal value reinstated as `F_-1 (ln R(theta) + ln A(theta))`,
/// where `R` is the parameter distance to the domain boundary and
/// `A(theta) = |t_u cos + t_v sin|` maps parameter to physical radius.
fn singular_element(
    mesh: &FractureMesh,
    cp: &CollocationPoint,
    med: &ElasticMedium,
    omega: f64,
    mut emit: impl FnMut(usize, &Matrix3<Complex64>),
) -> Result<()> {
    let el = cp.element;
    let element = mesh.element(el);
    let n_nodes = element.nodes().len();
    let eta0 = Vector2::new(cp.param.0, cp.param.1);
    let g0 = mesh.element_geometry(el, eta0.x, eta0.y);
    let corners = domain_corners(element.domain());
    let (tq, wq) = linalg::gauss_legendre(12);
    let cross2 = |a: Vector2<f64>, b: Vector2<f64>| a.x * b.y - a.y * b.x;

    let mut acc = vec![Matrix3::<Complex64>::zeros(); n_nodes];
    for k in 0..corners.len() {
        let c0 = corners[k];
        let c1 = corners[(k + 1) % corners.len()];
        let a = c0 - eta0;
        let b = c1 - eta0;
        let theta_a = a.y.atan2(a.x);
        let mut dtheta = b.y.atan2(b.x) - theta_a;
        while dtheta <= 0.0 {
            dtheta += 2.0 * std::f64::consts::PI;
        }
        let edge = c1 - c0;
        for (it, &tn) in tq.iter().enumerate() {
            let theta = theta_a + 0.5 * (tn + 1.0) * dtheta;
            let w_t = wq[it] * 0.5 * dtheta;
            let dir = Vector2::new(theta.cos(), theta.sin());
            let denom = cross2(dir, edge);
            let r_max = cross2(c0 - eta0, edge) / denom;
            if !(r_max > 0.0) {
                return Err(Error::Geometry(
                    "polar sector degenerated during singular integration".into(),
                ));
            }
            let a_theta = (g0.t_u * dir.x + g0.t_v * dir.y).norm();
            // F_-1 blocks from the probe radius
            let p_probe = eta0 + dir * RHO_PROBE;
            let (bl, jac, _) =
                tbie_integrand(mesh, el, p_probe.x, p_probe.y, cp, med, omega)?;
            let f_m1: Vec<Matrix3<Complex64>> = (0..n_nodes)
                .map(|c| bl[c] * Complex64::new(jac * RHO_PROBE * RHO_PROBE, 0.0))
                .collect();
            // radial quadrature of the regularized part
            for (ir, &rn) in tq.iter().enumerate() {
                let rho = 0.5 * (rn + 1.0) * r_max;
                let w_r = wq[ir] * 0.5 * r_max;
                let p = eta0 + dir * rho;
                let (bl, jac, _) = tbie_integrand(mesh, el, p.x, p.y, cp, med, omega)?;
                for c in 0..n_nodes {
                    let khat = bl[c] * Complex64::new(jac * rho, 0.0);
                    acc[c] += (khat - f_m1[c] / Complex64::new(rho, 0.0))
                        * Complex64::new(w_t * w_r, 0.0);
                }
            }
            // finite-part closure
            let fp = (r_max * a_theta).ln();
            for c in 0..n_nodes {
                acc[c] += f_m1[c] * Complex64::new(w_t * fp, 0.0);
            }
        }
    }
    for (c, m) in acc.iter().enumerate() {
        emit(c, m);
    }
    Ok(())
}

/// Assembles the discrete traction operator `T'` (rows: collocation points,
/// columns: nodal FOD components). Parallel over collocation points.
pub fn assemble_t(
    mesh: &FractureMesh,
    colloc: &CollocationSet,
    med: &ElasticMedium,
    omega: f64,
) -> Result<TractionSystem> {
    let nn = mesh.n_nodes();
    let rows: Vec<Result<Vec<Complex64>>> = colloc
        .points
        .par_iter()
        .map(|cp| -> Result<Vec<Complex64>> {
            let mut row = vec![Complex64::default(); 3 * 3 * nn];
            let mut add = |node: usize, m: &Matrix3<Complex64>, w: f64| {
                for p in 0..3 {
                    for i in 0..3 {
                        row[p * 3 * nn + 3 * node + i] += m[(p, i)] * w;
                    }
                }
            };
            for el in 0..mesh.n_elements() {
                let nodes = mesh.element(el).nodes().to_vec();
                if el == cp.element {
                    singular_element(mesh, cp, med, omega, |c, m| add(nodes[c], m, 1.0))?;
                    continue;
                }
                let diam = mesh.element_diameter(el);
                let min_d = mesh
                    .quadrature(el)
                    .iter()
                    .map(|q| (q.position - cp.position).norm())
                    .fold(f64::INFINITY, f64::min);
                if min_d > NEAR_FACTOR * diam {
                    for q in mesh.quadrature(el) {
                        let (bl, _, n_el_nodes) =
                            tbie_integrand(mesh, el, q.param.0, q.param.1, cp, med, omega)?;
                        for c in 0..n_el_nodes {
                            add(nodes[c], &bl[c], q.weight);
                        }
                    }
                } else {
                    for cell in param_triangles(mesh.element(el).domain()) {
                        integrate_adaptive(
                            mesh,
                            el,
                            &cell,
                            &cp.position,
                            0,
                            &mut |u, v, w_param| {
                                let (bl, jac, n_el_nodes) =
                                    tbie_integrand(mesh, el, u, v, cp, med, omega)?;
                                for c in 0..n_el_nodes {
                                    add(nodes[c], &bl[c], w_param * jac);
                                }
                                Ok(())
                            },
                        )?;
                    }
                }
            }
            Ok(row)
        })
        .collect();
    let mut t = Mat::<c64>::zeros(3 * colloc.points.len(), 3 * nn);
    for (ci, row) in rows.into_iter().enumerate() {
        let row = row?;
        for p in 0..3 {
            for col in 0..3 * nn {
                t[(3 * ci + p, col)] = row[p * 3 * nn + col];
            }
        }
    }
    Ok(TractionSystem::new(t))
}

/// Assembles the discrete contact operator `K'`: row block
/// `K_global(xi) * N_c(xi)` per collocation point, with the local-frame
/// stiffness rotated by `R = [n e1 e2]`.
pub fn assemble_k(
    mesh: &FractureMesh,
    colloc: &CollocationSet,
    field: &StiffnessField,
) -> Result<Mat<c64>> {
    if field.len() != colloc.points.len() {
        return Err(Error::Shape(format!(
            "stiffness field has {} entries for {} collocation points",
            field.len(),
            colloc.points.len()
        )));
    }
    let nn = mesh.n_nodes();
    let mut k = Mat::<c64>::zeros(3 * colloc.points.len(), 3 * nn);
    for (ci, cp) in colloc.points.iter().enumerate() {
        let r = Matrix3::from_columns(&[cp.normal, cp.e1, cp.e2]);
        let rc = r.map(|x| Complex64::new(x, 0.0));
        let k_glob = rc * field.k[ci] * rc.transpose();
        let element = mesh.element(cp.element);
        let (shape, _, _) = element.shape(cp.param.0, cp.param.1);
        for (c, &node) in element.nodes().iter().enumerate() {
            for p in 0..3 {
                for i in 0..3 {
                    k[(3 * ci + p, 3 * node + i)] += k_glob[(p, i)] * shape[c];
                }
            }
        }
    }
    Ok(k)
}

/// Incident traction `t^i = n.C:grad u^i` stacked over collocation points.
pub fn incident_traction(
    colloc: &CollocationSet,
    wave: &IncidentPlaneWave,
    med: &ElasticMedium,
) -> Col<c64> {
    let mut t = Col::<c64>::zeros(3 * colloc.points.len());
    for (ci, cp) in colloc.points.iter().enumerate() {
        let (_, grad) = kernels::eval_plane_wave(wave, med, &cp.position);
        let tr = kernels::traction(&grad, &cp.normal, med);
        for p in 0..3 {
            t[3 * ci + p] = tr[p];
        }
    }
    t
}

/// Forward solution: edge-pinned FOD per incident wave, with the relative
/// least-squares residual of each solve.
pub struct ForwardSolution {
    pub fods: Vec<FodVector>,
    pub residuals: Vec<f64>,
}

/// Row weight for collocation points whose host element touches the
/// fracture edge. The opening behaves like the square root of the distance
/// to the edge, which the edge-pinned linear basis cannot reproduce; the
/// traction misfit at those collocation points is irreducible and, at full
/// weight, distorts the least-squares fit everywhere else.
const EDGE_ROW_WEIGHT: f64 = 0.1;

/// Solves `(K' - T') [u] = t^i` on the interior nodes for each incident
/// wave. Uses least squares when collocation rows exceed unknowns, with
/// rows collocated in edge-adjacent elements down-weighted by
/// [`EDGE_ROW_WEIGHT`]; fails with a condition estimate when the system is
/// numerically singular.
pub fn solve_forward(
    mesh: &FractureMesh,
    colloc: &CollocationSet,
    tsys: &TractionSystem,
    field: &StiffnessField,
    incident: &[IncidentPlaneWave],
    med: &ElasticMedium,
) -> Result<ForwardSolution> {
    let kmat = assemble_k(mesh, colloc, field)?;
    let interior = mesh.interior_nodes();
    let n_rows = tsys.matrix.nrows();
    let n_free = 3 * interior.len();
    if n_rows < n_free {
        return Err(Error::Shape(format!(
            "underdetermined forward system: {n_rows} rows < {n_free} unknowns"
        )));
    }
    let edge: std::collections::HashSet<usize> = mesh.edge_nodes().iter().copied().collect();
    let row_weight: Vec<f64> = colloc
        .points
        .iter()
        .map(|cp| {
            if mesh.elements()[cp.element].nodes().iter().any(|n| edge.contains(n)) {
                EDGE_ROW_WEIGHT
            } else {
                1.0
            }
        })
        .collect();
    let mut a = Mat::<c64>::zeros(n_rows, n_free);
    for (jc, &node) in interior.iter().enumerate() {
        for i in 0..3 {
            for r in 0..n_rows {
                a[(r, 3 * jc + i)] = (kmat[(r, 3 * node + i)] - tsys.matrix[(r, 3 * node + i)])
                    * c64::new(row_weight[r / 3], 0.0);
            }
        }
    }
    let mut b = Mat::<c64>::zeros(n_rows, incident.len());
    for (j, w) in incident.iter().enumerate() {
        let t = incident_traction(colloc, w, med);
        for r in 0..n_rows {
            b[(r, j)] = t[r] * c64::new(row_weight[r / 3], 0.0);
        }
    }
    let x = linalg::solve_lstsq(&a, &b);
    let mut fods = Vec::with_capacity(incident.len());
    let mut residuals = Vec::with_capacity(incident.len());
    let resid_mat = &a * &x - &b;
    for j in 0..incident.len() {
        let mut ok = true;
        let mut fod = FodVector::zeros(mesh.n_nodes());
        for (jc, &node) in interior.iter().enumerate() {
            for i in 0..3 {
                let val = x[(3 * jc + i, j)];
                if !val.is_finite() {
                    ok = false;
                }
                fod.values[node][i] = val;
            }
        }
        if !ok {
            let svd = ComplexSvd::new(&a)?;
            let cond = svd.s.first().copied().unwrap_or(f64::NAN)
                / svd.s.last().copied().unwrap_or(f64::NAN);
            return Err(Error::Solver {
                reason: "forward system solve produced non-finite values".into(),
                cond,
            });
        }
        let bn: f64 = (0..n_rows).map(|r| b[(r, j)].norm_sqr()).sum::<f64>().sqrt();
        let rn: f64 = (0..n_rows)
            .map(|r| resid_mat[(r, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        residuals.push(if bn > 0.0 { rn / bn } else { 0.0 });
        fods.push(fod);
    }
    Ok(ForwardSolution { fods, residuals })
}

/// Far-field pattern of a FOD over a list of observation directions
/// (quadrature of the far-field stress-kernel contraction).
pub fn farfield_from_fod(
    mesh: &FractureMesh,
    fod: &FodVector,
    obs: &[Vector3<f64>],
    med: &ElasticMedium,
    omega: f64,
) -> Result<FarFieldDataset> {
    // precompute jump values at the cached quadrature points
    let mut qp_fod = Vec::new();
    for el in 0..mesh.n_elements() {
        for q in mesh.quadrature(el) {
            let f = mesh.fod_at(fod, el, q.param.0, q.param.1)?;
            qp_fod.push((f, q.normal, q.position, q.weight));
        }
    }
    let samples: Vec<FarFieldSample> = obs
        .par_iter()
        .map(|xh| {
            let mut up = Vector3::<Complex64>::zeros();
            let mut us = Vector3::<Complex64>::zeros();
            for (f, n, x, w) in &qp_fod {
                let (dup, dus) = kernels::farfield_integrand(f, n, x, xh, med, omega);
                up += dup * Complex64::new(*w, 0.0);
                us += dus * Complex64::new(*w, 0.0);
            }
            FarFieldSample {
                xi_hat: *xh,
                up,
                us,
            }
        })
        .collect();
    Ok(FarFieldDataset { omega, samples })
}

/// Double-layer potential value at a point off the fracture.
pub fn scattered_field_at(
    mesh: &FractureMesh,
    fod: &FodVector,
    xi: &Vector3<f64>,
    med: &ElasticMedium,
    omega: f64,
) -> Result<Vector3<Complex64>> {
    // reject points on (or numerically on) the surface
    let mut min_d = f64::INFINITY;
    let mut scale: f64 = 0.0;
    for el in 0..mesh.n_elements() {
        scale = scale.max(mesh.element_diameter(el));
        for q in mesh.quadrature(el) {
            min_d = min_d.min((q.position - xi).norm());
        }
    }
    if min_d < 1e-9 * scale {
        return Err(Error::Geometry(
            "evaluation point lies on the fracture surface".into(),
        ));
    }
    let mut val = Vector3::<Complex64>::zeros();
    for el in 0..mesh.n_elements() {
        let mut accumulate = |u: f64, v: f64, w: f64| -> Result<()> {
            let g = mesh.element_geometry(el, u, v);
            let f = mesh.fod_at(fod, el, u, v)?;
            let sig = greens_stress(xi, &g.position, med, omega)?;
            for l in 0..3 {
                let mut s = Complex64::default();
                for i in 0..3 {
                    for j in 0..3 {
                        s += sig[i][j][l] * f[i] * g.normal[j];
                    }
                }
                val[l] -= s * w;
            }
            Ok(())
        };
        let diam = mesh.element_diameter(el);
        let near = mesh
            .quadrature(el)
            .iter()
            .map(|q| (q.position - xi).norm())
            .fold(f64::INFINITY, f64::min)
            <= NEAR_FACTOR * diam;
        if near {
            for cell in param_triangles(mesh.element(el).domain()) {
                integrate_adaptive(mesh, el, &cell, xi, 0, &mut |u, v, w_param| {
                    let jac = mesh.element_geometry(el, u, v).jacobian;
                    accumulate(u, v, w_param * jac)
                })?;
            }
        } else {
            let qps: Vec<_> = mesh.quadrature(el).to_vec();
            for q in qps {
                accumulate(q.param.0, q.param.1, q.weight)?;
            }
        }
    }
    Ok(val)
}

/// Adds i.i.d. complex Gaussian noise to every raw far-field component,
/// scaled so the expected noise RMS is `level` times the data RMS.
/// Deterministic for a fixed seed.
pub fn add_noise(data: &FarFieldDataset, level: f64, seed: u64) -> Result<FarFieldDataset> {
    if level < 0.0 {
        return Err(Error::Config(format!(
            "noise level must be nonnegative, got {level}"
        )));
    }
    if level == 0.0 {
        return Ok(data.clone());
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in &data.samples {
        for c in s.up.iter().chain(s.us.iter()) {
            sum += c.norm_sqr();
            count += 1;
        }
    }
    let rms = (sum / count.max(1) as f64).sqrt();
    let sigma = level * rms;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = data.clone();
    for s in &mut noisy.samples {
        for c in s.up.iter_mut().chain(s.us.iter_mut()) {
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            *c += Complex64::new(x, y) * (sigma / 2.0f64.sqrt());
        }
    }
    Ok(noisy)
}

/// Radiated-energy proxy `sum_obs |up|^2 k_p/(lambda+2mu) + |us|^2 k_s/mu`
/// (monitored dissipativity diagnostic).
pub fn radiated_energy_proxy(data: &FarFieldDataset, med: &ElasticMedium) -> f64 {
    let kp = med.k_p(data.omega);
    let ks = med.k_s(data.omega);
    data.samples
        .iter()
        .map(|s| {
            let up2: f64 = s.up.iter().map(|c| c.norm_sqr()).sum();
            let us2: f64 = s.us.iter().map(|c| c.norm_sqr()).sum();
            up2 * kp / (med.lambda() + 2.0 * med.mu()) + us2 * ks / med.mu()
        })
        .sum()
}
