//! Fracture-opening-displacement recovery from far-field data.
//!
//! The double-layer representation of the scattered field is linear in the
//! FOD, so sampling its far-field pattern on an observation grid yields a
//! dense operator `M` from nodal FOD values on the reconstructed surface to
//! intrinsic far-field amplitudes. `M` is compact (smooth kernel), hence
//! severely ill-conditioned: recovery uses Tikhonov regularization with the
//! penalty weight fixed by the Morozov discrepancy principle, and multiple
//! incident fields can be synthetically recombined so the data radiates
//! minimally into the suppressed (interface-wave) singular subspace of `M`.

use faer::{c64, Col, Mat};
use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::forward::{self, FarFieldDataset};
use crate::glsm::{intrinsic_components, ObservationGrid};
use crate::kernels::{self, ElasticMedium, IncidentPlaneWave};
use crate::linalg::{self, ComplexSvd};
use crate::mesh::{CollocationSet, FodVector, FractureMesh};
use crate::{Error, Result};

/// Default suppression rule: singular values at or below this fraction of
/// the largest one are counted into `Q`.
pub const DEFAULT_Q_FRACTION: f64 = 0.15;

/// Discrete FOD-to-far-field operator with its singular value
/// decomposition and the suppressed-mode count `Q`.
pub struct FodSystem {
    /// `3 N_obs x 3 N_free` operator; columns are ordered free-node major.
    pub m: Mat<c64>,
    pub svd: ComplexSvd,
    /// Number of singular values `<= q_fraction * largest`.
    pub q: usize,
    pub q_fraction: f64,
    /// Interior (non-edge) node indices the columns refer to.
    pub free_nodes: Vec<usize>,
    /// Total node count of the underlying mesh.
    pub n_nodes: usize,
    pub omega: f64,
}

/// Stacks a far-field record into the intrinsic data vector layout used by
/// `FodSystem` rows: radial P then two transverse S amplitudes per
/// observation direction.
pub fn data_vector(dataset: &FarFieldDataset) -> Col<c64> {
    let mut d = Col::<c64>::zeros(3 * dataset.samples.len());
    for (o, s) in dataset.samples.iter().enumerate() {
        let comps = intrinsic_components(s);
        for (r, c) in comps.iter().enumerate() {
            d[3 * o + r] = *c;
        }
    }
    d
}

/// Assembles `M` on the reconstructed surface by the same quadrature as the
/// forward far-field evaluation, applied to each nodal basis function.
pub fn assemble_m(
    mesh: &FractureMesh,
    grid: &ObservationGrid,
    med: &ElasticMedium,
    omega: f64,
    q_fraction: f64,
) -> Result<FodSystem> {
    if !(q_fraction > 0.0 && q_fraction < 1.0) {
        return Err(Error::Config(format!(
            "suppression fraction must lie in (0, 1), got {q_fraction}"
        )));
    }
    let free_nodes = mesh.interior_nodes();
    if free_nodes.is_empty() {
        return Err(Error::Degenerate("mesh has no interior nodes".into()));
    }
    if 3 * grid.len() <= 3 * free_nodes.len() {
        return Err(Error::Config(format!(
            "FOD system must be overdetermined: {} observation rows for {} nodal unknowns",
            3 * grid.len(),
            3 * free_nodes.len()
        )));
    }
    let mut free_index = vec![usize::MAX; mesh.n_nodes()];
    for (k, &nd) in free_nodes.iter().enumerate() {
        free_index[nd] = k;
    }
    // Quadrature points with the nodal shape weights active there.
    struct Qp {
        position: Vector3<f64>,
        normal: Vector3<f64>,
        weight: f64,
        shape: Vec<(usize, f64)>, // (free column block, shape value)
    }
    let mut qps = Vec::new();
    for el in 0..mesh.n_elements() {
        let element = &mesh.elements()[el];
        for q in mesh.quadrature(el) {
            let (n, _, _) = element.shape(q.param.0, q.param.1);
            let shape = element
                .nodes()
                .iter()
                .zip(n.iter())
                .filter(|(nd, _)| free_index[**nd] != usize::MAX)
                .map(|(nd, s)| (free_index[*nd], *s))
                .collect();
            qps.push(Qp {
                position: q.position,
                normal: q.normal,
                weight: q.weight,
                shape,
            });
        }
    }
    let n_free = free_nodes.len();
    let rows: Vec<Vec<c64>> = grid
        .directions()
        .par_iter()
        .map(|xh| {
            let mut block = vec![c64::new(0.0, 0.0); 9 * n_free];
            let basis = [
                Vector3::new(Complex64::new(1.0, 0.0), Complex64::ZERO, Complex64::ZERO),
                Vector3::new(Complex64::ZERO, Complex64::new(1.0, 0.0), Complex64::ZERO),
                Vector3::new(Complex64::ZERO, Complex64::ZERO, Complex64::new(1.0, 0.0)),
            ];
            for qp in &qps {
                for (c, e) in basis.iter().enumerate() {
                    let (dup, dus) =
                        kernels::farfield_integrand(e, &qp.normal, &qp.position, xh, med, omega);
                    let sample = kernels::FarFieldSample {
                        xi_hat: *xh,
                        up: dup,
                        us: dus,
                    };
                    let comps = intrinsic_components(&sample);
                    for &(k, s) in &qp.shape {
                        let w = s * qp.weight;
                        for (r, comp) in comps.iter().enumerate() {
                            block[3 * (3 * k + c) + r] += comp * c64::new(w, 0.0);
                        }
                    }
                }
            }
            block
        })
        .collect();
    let mut m = Mat::<c64>::zeros(3 * grid.len(), 3 * n_free);
    for (o, block) in rows.iter().enumerate() {
        for col in 0..3 * n_free {
            for r in 0..3 {
                m[(3 * o + r, col)] = block[3 * col + r];
            }
        }
    }
    let svd = ComplexSvd::new(&m)?;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let q = svd.s.iter().filter(|&&s| s <= q_fraction * smax).count();
    Ok(FodSystem {
        m,
        svd,
        q,
        q_fraction,
        free_nodes,
        n_nodes: mesh.n_nodes(),
        omega,
    })
}

impl FodSystem {
    /// Columns of `U` spanning the suppressed (smallest-singular-value)
    /// data subspace.
    fn suppressed_left(&self) -> Mat<c64> {
        let k = self.svd.rank();
        let mut u = Mat::<c64>::zeros(self.m.nrows(), self.q);
        for (j, col) in (k - self.q..k).enumerate() {
            for i in 0..self.m.nrows() {
                u[(i, j)] = self.svd.u[(i, col)];
            }
        }
        u
    }

    /// Columns of `U` spanning the retrievable (largest-singular-value)
    /// data subspace.
    fn retrievable_left(&self) -> Mat<c64> {
        let r = self.svd.rank() - self.q;
        let mut u = Mat::<c64>::zeros(self.m.nrows(), r);
        for col in 0..r {
            for i in 0..self.m.nrows() {
                u[(i, col)] = self.svd.u[(i, col)];
            }
        }
        u
    }

    /// Expands a stacked free-node coefficient vector into an edge-pinned
    /// nodal FOD.
    pub fn expand(&self, x: &Col<c64>) -> FodVector {
        let mut fod = FodVector::zeros(self.n_nodes);
        for (k, &nd) in self.free_nodes.iter().enumerate() {
            for c in 0..3 {
                fod.values[nd][c] = x[3 * k + c];
            }
        }
        fod
    }

    /// Energy fraction of a FOD held by the `Q` smallest right-singular
    /// modes of `M`.
    pub fn suppressed_energy_fraction(&self, fod: &FodVector) -> f64 {
        let mut x = Col::<c64>::zeros(3 * self.free_nodes.len());
        for (k, &nd) in self.free_nodes.iter().enumerate() {
            for c in 0..3 {
                x[3 * k + c] = fod.values[nd][c];
            }
        }
        let total: f64 = (0..x.nrows()).map(|i| x[i].norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let k = self.svd.rank();
        let mut small = 0.0;
        for col in k - self.q..k {
            let mut proj = c64::new(0.0, 0.0);
            for i in 0..x.nrows() {
                proj += self.svd.v[(i, col)].conj() * x[i];
            }
            small += proj.norm_sqr();
        }
        small / total
    }
}

/// Outcome of a regularized FOD recovery.
pub struct FodRecovery {
    pub fod: FodVector,
    /// Tikhonov weight selected by the discrepancy principle.
    pub beta: f64,
    /// Achieved relative discrepancy.
    pub achieved: f64,
    /// True when the discrepancy target was unattainable and the
    /// least-norm solution was returned.
    pub fallback: bool,
}

/// Tikhonov/Morozov recovery of the FOD from one far-field data vector.
///
/// The penalty weight is found by root finding on the discrepancy so the
/// relative residual matches `noise_delta`; when even the unregularized
/// residual exceeds the target, the least-norm least-squares solution is
/// returned and flagged.
pub fn recover_fod(sys: &FodSystem, data: &Col<c64>, noise_delta: f64) -> Result<FodRecovery> {
    if data.nrows() != sys.m.nrows() {
        return Err(Error::Shape(format!(
            "data vector has {} rows, system has {}",
            data.nrows(),
            sys.m.nrows()
        )));
    }
    let sol = linalg::tikhonov_morozov(&sys.svd, data, noise_delta)?;
    Ok(FodRecovery {
        fod: sys.expand(&sol.x),
        beta: sol.beta,
        achieved: sol.achieved,
        fallback: sol.fallback,
    })
}

/// Synthetic source recombination (regularization step 1): weights the `P`
/// datasets so the combination radiates as little as possible into the
/// suppressed singular subspace of `M`.
///
/// With `P > Q` the first `Q + 1` datasets give an even-determined
/// homogeneous system solved exactly by its unit-norm null vector; with
/// `P <= Q` the unit-norm least-squares minimizer over all `P` weights is
/// returned.
pub fn recombine_sources(
    sys: &FodSystem,
    datasets: &[Col<c64>],
) -> Result<(Vec<Complex64>, Col<c64>)> {
    let p = datasets.len();
    if p < 2 {
        return Err(Error::Config(format!(
            "source recombination needs at least 2 datasets, got {p}"
        )));
    }
    if sys.q == 0 {
        return Err(Error::Config(
            "no suppressed singular values: recombination is a no-op".into(),
        ));
    }
    for (i, d) in datasets.iter().enumerate() {
        if d.nrows() != sys.m.nrows() {
            return Err(Error::Shape(format!(
                "dataset {i} has {} rows, system has {}",
                d.nrows(),
                sys.m.nrows()
            )));
        }
    }
    // Suppressed-subspace projections of every dataset: the weights must
    // annihilate these q rows.
    let u_small = sys.suppressed_left();
    let mut a = Mat::<c64>::zeros(sys.q, p);
    for (j, d) in datasets.iter().enumerate() {
        let proj = u_small.adjoint() * d;
        for i in 0..sys.q {
            a[(i, j)] = proj[i];
        }
    }
    // Candidate weights: the smallest right-singular directions of the
    // projection matrix. With more datasets than suppressed modes this
    // contains the exact nullspace (dimension p - rank), leaving freedom
    // that is spent maximizing the retrievable signal of the combination;
    // this also keeps the choice well-posed when the projections are
    // degenerate (e.g. noise-free data).
    let svd_a = a.svd().map_err(|e| Error::Solver {
        reason: format!("SVD failed to converge: {e:?}"),
        cond: f64::NAN,
    })?;
    let k_a = sys.q.min(p);
    let smax_a = svd_a.S()[0].re;
    let rank_a = (0..k_a)
        .filter(|&i| svd_a.S()[i].re > smax_a * 1e-10)
        .count();
    let d_null = (p - rank_a).max(1);
    let v_a = svd_a.V();
    let mut null = Mat::<c64>::zeros(p, d_null);
    for j in 0..d_null {
        for i in 0..p {
            null[(i, j)] = v_a[(i, p - d_null + j)];
        }
    }
    // Retrievable-subspace projections, restricted to the candidate space.
    let u_large = sys.retrievable_left();
    let r = sys.svd.rank() - sys.q;
    let mut b = Mat::<c64>::zeros(r, p);
    for (j, d) in datasets.iter().enumerate() {
        let proj = u_large.adjoint() * d;
        for i in 0..r {
            b[(i, j)] = proj[i];
        }
    }
    let m = &b * &null;
    let m_norm: f64 = (0..r)
        .map(|i| (0..d_null).map(|j| m[(i, j)].norm_sqr()).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let mut c = Col::<c64>::zeros(d_null);
    if m_norm > 0.0 {
        // top right-singular direction: maximal retrievable content
        let svd_m = linalg::ComplexSvd::new(&m)?;
        for i in 0..d_null {
            c[i] = svd_m.v[(i, 0)];
        }
    } else {
        c[0] = c64::new(1.0, 0.0);
    }
    let g_col = &null * &c;
    let mut g = vec![Complex64::new(0.0, 0.0); p];
    for j in 0..p {
        g[j] = Complex64::new(g_col[j].re, g_col[j].im);
    }
    let mut combined = Col::<c64>::zeros(sys.m.nrows());
    for (gp, d) in g.iter().zip(datasets) {
        for i in 0..combined.nrows() {
            combined[i] += *gp * d[i];
        }
    }
    if linalg::col_norm(&combined) == 0.0 {
        return Err(Error::Degenerate(
            "recombined data vanishes: degenerate input datasets".into(),
        ));
    }
    Ok((g, combined))
}

/// Incident traction of the recombined source `sum_p g_p t^{i,p}` at the
/// collocation points.
pub fn recombined_incident_traction(
    waves: &[IncidentPlaneWave],
    g: &[Complex64],
    colloc: &CollocationSet,
    med: &ElasticMedium,
) -> Result<Col<c64>> {
    if waves.len() != g.len() {
        return Err(Error::Shape(format!(
            "{} waves but {} weights",
            waves.len(),
            g.len()
        )));
    }
    let mut t = Col::<c64>::zeros(3 * colloc.points.len());
    for (w, gp) in waves.iter().zip(g) {
        let tw = forward::incident_traction(colloc, w, med);
        for i in 0..t.nrows() {
            t[i] += *gp * tw[i];
        }
    }
    Ok(t)
}
