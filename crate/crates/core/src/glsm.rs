//! Geometric fracture reconstruction by generalized linear sampling.
//!
//! The scattered far fields recorded for plane-wave excitations over a
//! direction grid define a discrete far-field operator `F` acting on
//! Herglotz densities. Sampling the medium with the far-field pattern of a
//! vanishing penny-shaped trial fracture `L(z, n)` and minimizing the
//! penalized functional
//!
//! ```text
//! J(g) = ||F g - phi||^2 + alpha (||F#^(1/2) g||^2 + delta ||g||^2)
//! ```
//!
//! yields the characteristic function `C(L) = (||F#^(1/2) g||^2 +
//! delta ||g||^2)^(-1/2)`, which is large exactly when `z` lies on the
//! fracture surface with a compatible normal `n`. Here `F# = |F + F*|/2 +
//! (F - F*)/(2i)` is the self-adjoint surrogate of `F`. The indicator map
//! over a sampling grid is thresholded and regressed into a smooth graph
//! patch to produce the reconstructed surface.

use std::sync::{Arc, Mutex};

use faer::linalg::solvers::{Llt, PartialPivLu, Solve};
use faer::{c64, Col, Mat, Side};
use nalgebra::{DMatrix, DVector, Matrix3 as RMatrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::forward::FarFieldDataset;
use crate::kernels::{penny_test_pattern, ElasticMedium, FarFieldSample};
use crate::linalg::hermitian_abs;
use crate::mesh::{build_graph_patch, FractureMesh, GraphFrame};
use crate::{Error, Result};

/// Directions and quadrature weights on (a subset of) the unit sphere.
#[derive(Debug, Clone)]
pub struct ObservationGrid {
    directions: Vec<Vector3<f64>>,
    weights: Vec<f64>,
}

impl ObservationGrid {
    pub fn new(directions: Vec<Vector3<f64>>, weights: Vec<f64>) -> Result<Self> {
        if directions.len() != weights.len() || directions.is_empty() {
            return Err(Error::Shape(format!(
                "grid needs matching nonempty direction/weight lists, got {}/{}",
                directions.len(),
                weights.len()
            )));
        }
        for d in &directions {
            if (d.norm() - 1.0).abs() > 1e-10 {
                return Err(Error::Geometry(format!("non-unit grid direction {d:?}")));
            }
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Geometry("grid weights must be positive".into()));
        }
        Ok(Self { directions, weights })
    }

    /// Product grid: Gauss–Legendre in `cos(theta)` times a uniform
    /// periodic rule in `phi`, exact for the sphere (weights sum to `4 pi`).
    pub fn full_sphere(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta < 1 || n_phi < 1 {
            return Err(Error::Config("need at least one direction per axis".into()));
        }
        let (ct, wt) = crate::linalg::gauss_legendre(n_theta);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut directions = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (c, w) in ct.iter().zip(&wt) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = dphi * j as f64;
                directions.push(Vector3::new(s * phi.cos(), s * phi.sin(), *c));
                weights.push(w * dphi);
            }
        }
        Self::new(directions, weights)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.directions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Deterministic orthonormal frame `(e1, e2)` transverse to a unit `d`.
pub fn transverse_frame(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let aux = if d.z.abs() < 0.9 {
        Vector3::z()
    } else {
        Vector3::x()
    };
    let e1 = aux.cross(d).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

/// Intrinsic amplitude triplet of a far-field sample: radial P component
/// and the two transverse S components in the frame of the observation
/// direction.
pub fn intrinsic_components(s: &FarFieldSample) -> [Complex64; 3] {
    let (e1, e2) = transverse_frame(&s.xi_hat);
    let dot = |v: &Vector3<Complex64>, w: &Vector3<f64>| {
        v.x * w.x + v.y * w.y + v.z * w.z
    };
    [dot(&s.up, &s.xi_hat), dot(&s.us, &e1), dot(&s.us, &e2)]
}

/// Herglotz density coefficients: one P amplitude (along the source
/// direction) and two transverse S amplitudes per source direction, stored
/// in the local source frame so the polarization constraints hold by
/// construction.
#[derive(Debug, Clone)]
pub struct HerglotzDensity {
    pub amplitudes: Vec<Vector3<Complex64>>,
}

impl HerglotzDensity {
    pub fn from_col(g: &Col<c64>) -> Self {
        let n = g.nrows() / 3;
        let amplitudes = (0..n)
            .map(|q| Vector3::new(g[3 * q], g[3 * q + 1], g[3 * q + 2]))
            .collect();
        Self { amplitudes }
    }

    pub fn to_col(&self) -> Col<c64> {
        let mut g = Col::<c64>::zeros(3 * self.amplitudes.len());
        for (q, a) in self.amplitudes.iter().enumerate() {
            for c in 0..3 {
                g[3 * q + c] = a[c];
            }
        }
        g
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

enum Factor {
    Llt(Llt<c64>),
    Lu(PartialPivLu<c64>),
}

impl Factor {
    fn solve(&self, rhs: &Col<c64>) -> Col<c64> {
        match self {
            Factor::Llt(f) => f.solve(rhs),
            Factor::Lu(f) => f.solve(rhs),
        }
    }
}

/// Discrete far-field operator: maps quadrature-weighted Herglotz density
/// coefficients to intrinsic far-field amplitudes on the observation grid,
/// together with the cached `F#` surrogate (square operators only).
pub struct FarFieldOperator {
    pub omega: f64,
    pub medium: ElasticMedium,
    pub obs: ObservationGrid,
    pub src: ObservationGrid,
    pub f: Mat<c64>,
    f_sharp: Option<Mat<c64>>,
    factor_cache: Mutex<Option<(f64, f64, Arc<Factor>)>>,
}

/// `F# = |F + F*|/2 + (F - F*)/(2 i)` with `|A|` by Hermitian
/// eigendecomposition.
pub fn f_sharp(f: &Mat<c64>) -> Result<Mat<c64>> {
    if f.nrows() != f.ncols() {
        return Err(Error::Shape(format!(
            "F# needs a square operator, got {}x{}",
            f.nrows(),
            f.ncols()
        )));
    }
    let herm = f + f.adjoint();
    let abs = hermitian_abs(&herm)?;
    let n = f.nrows();
    let mut out = Mat::<c64>::zeros(n, n);
    let half_i = c64::new(0.0, -0.5); // 1/(2i)
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = abs[(i, j)] * c64::new(0.5, 0.0)
                + (f[(i, j)] - f[(j, i)].conj()) * half_i;
        }
    }
    Ok(out)
}

/// Builds `F` from the recorded far fields of unit plane-wave excitations.
///
/// `records` must hold one dataset per source excitation in source-major
/// order: for source direction `q` the three records are the P wave along
/// `d_q` and the S waves along the two transverse frame vectors of `d_q`.
/// Column `(q, c)` is the intrinsic-component record scaled by the source
/// quadrature weight, so `F g` is the discrete Herglotz superposition.
pub fn assemble_f(
    records: &[FarFieldDataset],
    src: &ObservationGrid,
    obs: &ObservationGrid,
    medium: &ElasticMedium,
) -> Result<FarFieldOperator> {
    if records.len() != 3 * src.len() {
        return Err(Error::Shape(format!(
            "need {} excitation records, got {}",
            3 * src.len(),
            records.len()
        )));
    }
    let omega = records[0].omega;
    let mut f = Mat::<c64>::zeros(3 * obs.len(), 3 * src.len());
    for (rec_i, rec) in records.iter().enumerate() {
        if (rec.omega - omega).abs() > 1e-12 * omega.abs() {
            return Err(Error::Shape(format!(
                "mixed frequencies in far-field records: {} vs {omega}",
                rec.omega
            )));
        }
        if rec.samples.len() != obs.len() {
            return Err(Error::Shape(format!(
                "record {rec_i} has {} samples, observation grid has {}",
                rec.samples.len(),
                obs.len()
            )));
        }
        let w = src.weights()[rec_i / 3];
        for (o, sample) in rec.samples.iter().enumerate() {
            if (sample.xi_hat - obs.directions()[o]).norm() > 1e-10 {
                return Err(Error::Shape(format!(
                    "record {rec_i} sample {o} direction differs from the observation grid"
                )));
            }
            let comps = intrinsic_components(sample);
            for (r, comp) in comps.iter().enumerate() {
                f[(3 * o + r, rec_i)] = comp * c64::new(w, 0.0);
            }
        }
    }
    let fs = if obs.len() == src.len() {
        Some(f_sharp(&f)?)
    } else {
        None
    };
    Ok(FarFieldOperator {
        omega,
        medium: *medium,
        obs: obs.clone(),
        src: src.clone(),
        f,
        f_sharp: fs,
        factor_cache: Mutex::new(None),
    })
}

/// GLSM parameters: penalization weight, data-perturbation measure,
/// sampling points, and the trial normal sweep.
#[derive(Debug, Clone)]
pub struct GlsmParams {
    pub alpha: f64,
    pub delta: f64,
    pub grid: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
}

impl GlsmParams {
    /// Default parameter rule: `alpha = delta^2` with the 13-direction
    /// trial-normal set.
    pub fn from_noise(delta: f64, grid: Vec<Vector3<f64>>) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Config(format!(
                "data perturbation must be positive, got {delta}"
            )));
        }
        Ok(Self {
            alpha: delta * delta,
            delta,
            grid,
            normals: trial_normals(),
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.delta > 0.0) {
            return Err(Error::Config(format!(
                "alpha and delta must be positive, got {} and {}",
                self.alpha, self.delta
            )));
        }
        Ok(())
    }
}

/// 13 trial normals: the three coordinate (two-fold) axes and the ten
/// three-fold face axes of the icosahedron, one direction per antipodal
/// pair.
pub fn trial_normals() -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut out = vec![Vector3::x(), Vector3::y(), Vector3::z()];
    for (sy, sz) in [(1.0, 1.0), (1.0, -1.0)] {
        out.push(Vector3::new(0.0, sy / phi, sz * phi));
        out.push(Vector3::new(sz * phi, 0.0, sy / phi));
        out.push(Vector3::new(sy / phi, sz * phi, 0.0));
    }
    for (sy, sz) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        out.push(Vector3::new(1.0, sy, sz));
    }
    for v in &mut out {
        v.normalize_mut();
    }
    out
}

/// Uniformly spaced sampling points in an axis-aligned box around `center`.
pub fn sampling_grid(
    center: &Vector3<f64>,
    half_extent: &Vector3<f64>,
    n: [usize; 3],
) -> Vec<Vector3<f64>> {
    let axis = |c: f64, h: f64, n: usize, i: usize| {
        if n <= 1 {
            c
        } else {
            c - h + 2.0 * h * i as f64 / (n - 1) as f64
        }
    };
    let mut pts = Vec::with_capacity(n[0] * n[1] * n[2]);
    for i in 0..n[0].max(1) {
        for j in 0..n[1].max(1) {
            for k in 0..n[2].max(1) {
                pts.push(Vector3::new(
                    axis(center.x, half_extent.x, n[0], i),
                    axis(center.y, half_extent.y, n[1], j),
                    axis(center.z, half_extent.z, n[2], k),
                ));
            }
        }
    }
    pts
}

/// Intrinsic-component far-field vector of the vanishing penny trial
/// fracture at `z` with normal `n`, stacked over the observation grid.
pub fn pattern_vector(
    obs: &ObservationGrid,
    z: &Vector3<f64>,
    n: &Vector3<f64>,
    med: &ElasticMedium,
    omega: f64,
) -> Col<c64> {
    let mut phi = Col::<c64>::zeros(3 * obs.len());
    for (o, xi) in obs.directions().iter().enumerate() {
        let s = penny_test_pattern(xi, z, n, med, omega);
        let comps = intrinsic_components(&s);
        for (r, c) in comps.iter().enumerate() {
            phi[3 * o + r] = *c;
        }
    }
    phi
}

impl FarFieldOperator {
    pub fn f_sharp(&self) -> Result<&Mat<c64>> {
        self.f_sharp.as_ref().ok_or_else(|| {
            Error::Shape("F# requires a square far-field operator".into())
        })
    }

    /// Cholesky factorization of the normal-equation operator
    /// `F*F + alpha F# + alpha delta I`, cached per `(alpha, delta)`.
    fn factor(&self, params: &GlsmParams) -> Result<Arc<Factor>> {
        params.validate()?;
        let fs = self.f_sharp()?;
        let mut cache = self.factor_cache.lock().expect("factor cache poisoned");
        if let Some((a, d, f)) = cache.as_ref() {
            if *a == params.alpha && *d == params.delta {
                return Ok(f.clone());
            }
        }
        let n = self.f.ncols();
        let mut m = self.f.adjoint() * &self.f;
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += fs[(i, j)] * c64::new(params.alpha, 0.0);
            }
            m[(i, i)] += c64::new(params.alpha * params.delta, 0.0);
        }
        let factor = match m.llt(Side::Lower) {
            Ok(llt) => Factor::Llt(llt),
            // F# can carry round-off-level negative eigenvalues; fall back
            // to an LU solve of the same (still nonsingular) system.
            Err(_) => Factor::Lu(m.partial_piv_lu()),
        };
        let factor = Arc::new(factor);
        *cache = Some((params.alpha, params.delta, factor.clone()));
        Ok(factor)
    }
}

/// Exact minimizer of the penalized functional: solves
/// `(F*F + alpha F# + alpha delta I) g = F* phi`.
pub fn glsm_minimizer(
    op: &FarFieldOperator,
    phi: &Col<c64>,
    params: &GlsmParams,
) -> Result<HerglotzDensity> {
    let factor = op.factor(params)?;
    let rhs = op.f.adjoint() * phi;
    Ok(HerglotzDensity::from_col(&factor.solve(&rhs)))
}

fn indicator_from_density(op: &FarFieldOperator, g: &HerglotzDensity, delta: f64) -> Result<f64> {
    let fs = op.f_sharp()?;
    let gc = g.to_col();
    let fg = fs * &gc;
    let quad: f64 = (0..gc.nrows()).map(|i| (gc[i].conj() * fg[i]).re).sum();
    let n2: f64 = (0..gc.nrows()).map(|i| gc[i].norm_sqr()).sum();
    Ok(1.0 / (quad.max(0.0) + delta * n2).sqrt())
}

/// GLSM characteristic function
/// `C(L(z, n)) = (||F#^(1/2) g||^2 + delta ||g||^2)^(-1/2)` for the penny
/// trial fracture at `z` with normal `n`.
pub fn glsm_indicator(
    op: &FarFieldOperator,
    params: &GlsmParams,
    z: &Vector3<f64>,
    n: &Vector3<f64>,
) -> Result<f64> {
    let phi = pattern_vector(&op.obs, z, n, &op.medium, op.omega);
    let g = glsm_minimizer(op, &phi, params)?;
    indicator_from_density(op, &g, params.delta)
}

/// Indicator field on the sampling grid: per point, the maximum of the
/// characteristic function over the trial normals, together with the
/// maximizing normal index.
pub struct IndicatorMap {
    pub values: Vec<f64>,
    pub best_normal: Vec<usize>,
}

pub fn indicator_map(op: &FarFieldOperator, params: &GlsmParams) -> Result<IndicatorMap> {
    params.validate()?;
    if params.normals.is_empty() {
        return Err(Error::Config("empty trial-normal set".into()));
    }
    // Build the factorization once so the parallel sweep only solves.
    op.factor(params)?;
    let per_point: Result<Vec<(f64, usize)>> = params
        .grid
        .par_iter()
        .map(|z| {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (k, n) in params.normals.iter().enumerate() {
                let c = glsm_indicator(op, params, z, n)?;
                if c > best.0 {
                    best = (c, k);
                }
            }
            Ok(best)
        })
        .collect();
    let per_point = per_point?;
    Ok(IndicatorMap {
        values: per_point.iter().map(|p| p.0).collect(),
        best_normal: per_point.iter().map(|p| p.1).collect(),
    })
}

/// Surface reconstructed from an indicator map.
pub struct ExtractedSurface {
    pub mesh: FractureMesh,
    /// Weighted RMS height misfit of the regression over the selected
    /// points (reported; large values flag a poor parametric fit).
    pub fit_rms: f64,
    pub frame: GraphFrame,
}

/// Indices of sampling points with `map >= tau * max(map)`.
pub fn select_support(map: &IndicatorMap, tau: f64) -> Vec<usize> {
    let max = map.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    map.values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= tau * max)
        .map(|(i, _)| i)
        .collect()
}

/// Thresholds the indicator map and regresses the selected points into a
/// quadratic graph patch: weighted PCA fixes the best-fit plane (oriented
/// by the dominant trial normal), a weighted least-squares fit gives the
/// height field, and the patch is meshed with `n_s x n_t` elements.
pub fn extract_surface(
    params: &GlsmParams,
    map: &IndicatorMap,
    tau: f64,
    n_s: usize,
    n_t: usize,
) -> Result<ExtractedSurface> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!(
            "threshold fraction must lie in (0, 1), got {tau}"
        )));
    }
    if map.values.len() != params.grid.len() {
        return Err(Error::Shape(format!(
            "indicator map has {} values for {} sampling points",
            map.values.len(),
            params.grid.len()
        )));
    }
    let sel = select_support(map, tau);
    if sel.is_empty() {
        return Err(Error::Degenerate("empty indicator support selection".into()));
    }
    // Dominant trial normal by accumulated indicator weight.
    let mut normal_weight = vec![0.0; params.normals.len()];
    for &i in &sel {
        normal_weight[map.best_normal[i]] += map.values[i];
    }
    let dom = normal_weight
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| params.normals[k])
        .unwrap_or_else(Vector3::z);

    // Weighted PCA plane through the selection.
    let wsum: f64 = sel.iter().map(|&i| map.values[i]).sum();
    let mut origin = Vector3::zeros();
    for &i in &sel {
        origin += params.grid[i] * (map.values[i] / wsum);
    }
    let mut cov = RMatrix3::<f64>::zeros();
    for &i in &sel {
        let d = params.grid[i] - origin;
        cov += d * d.transpose() * (map.values[i] / wsum);
    }
    let eig = cov.symmetric_eigen();
    let mut kmin = 0;
    for k in 1..3 {
        if eig.eigenvalues[k] < eig.eigenvalues[kmin] {
            kmin = k;
        }
    }
    let mut n = eig.eigenvectors.column(kmin).into_owned();
    if n.dot(&dom) < 0.0 {
        n = -n;
    }
    let (e1, e2) = transverse_frame(&n);

    // In-plane coordinates and weighted polynomial height fit. The basis
    // degree degrades gracefully when the selection is too small to
    // constrain a quadric.
    let coords: Vec<(f64, f64, f64, f64)> = sel
        .iter()
        .map(|&i| {
            let d = params.grid[i] - origin;
            (d.dot(&e1), d.dot(&e2), d.dot(&n), map.values[i].sqrt())
        })
        .collect();
    let ncoef = if sel.len() >= 6 {
        6
    } else if sel.len() >= 3 {
        3
    } else {
        1
    };
    let basis = |s: f64, t: f64| [1.0, s, t, s * s, s * t, t * t];
    let mut a = DMatrix::<f64>::zeros(coords.len(), ncoef);
    let mut b = DVector::<f64>::zeros(coords.len());
    for (r, &(s, t, h, w)) in coords.iter().enumerate() {
        let bs = basis(s, t);
        for c in 0..ncoef {
            a[(r, c)] = w * bs[c];
        }
        b[r] = w * h;
    }
    let svd = a.clone().svd(true, true);
    let coef = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Degenerate(format!("surface height fit failed: {e}")))?;
    let mut c6 = [0.0; 6];
    for (k, v) in coef.iter().enumerate() {
        c6[k] = *v;
    }
    let resid = &a * &coef - &b;
    let fit_rms = (resid.norm_squared() / wsum).sqrt();

    let frame = GraphFrame {
        origin,
        e1,
        e2,
        n,
        c: c6,
    };
    let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(s, t, _, _) in &coords {
        smin = smin.min(s);
        smax = smax.max(s);
        tmin = tmin.min(t);
        tmax = tmax.max(t);
    }
    let scale = (smax - smin).max(tmax - tmin);
    if scale <= 0.0 {
        return Err(Error::Degenerate(
            "indicator support collapses to a point or line".into(),
        ));
    }
    // Widen degenerate directions so the patch always has area.
    let pad = 0.05 * scale;
    if smax - smin < pad {
        smin -= 0.5 * scale;
        smax += 0.5 * scale;
    }
    if tmax - tmin < pad {
        tmin -= 0.5 * scale;
        tmax += 0.5 * scale;
    }
    let mesh = build_graph_patch(frame.clone(), (smin, smax), (tmin, tmax), n_s, n_t)?;
    Ok(ExtractedSurface { mesh, fit_rms, frame })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{
        assemble_t, farfield_from_fod, solve_forward, StiffnessField,
    };
    use crate::kernels::IncidentPlaneWave;
    use crate::mesh::{build_penny, interior_collocation};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn med() -> ElasticMedium {
        ElasticMedium::from_speeds(1.0, 2.08, 1.0).unwrap()
    }

    fn rand_c64(rng: &mut ChaCha8Rng) -> c64 {
        c64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    }

    #[test]
    fn full_sphere_weights_sum_to_4pi() {
        for (nt, np) in [(25, 12), (6, 4), (1, 1)] {
            let g = ObservationGrid::full_sphere(nt, np).unwrap();
            let sum: f64 = g.weights().iter().sum();
            assert_relative_eq!(sum, 4.0 * std::f64::consts::PI, epsilon = 1e-6);
            assert!(g.weights().iter().all(|&w| w > 0.0));
            for d in g.directions() {
                assert_relative_eq!(d.norm(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sphere_grid_integrates_low_order_harmonics() {
        // The product rule integrates polynomials in the direction
        // components exactly up to the Gauss/trapezoid orders.
        let g = ObservationGrid::full_sphere(8, 10).unwrap();
        let int = |f: &dyn Fn(&Vector3<f64>) -> f64| -> f64 {
            g.directions()
                .iter()
                .zip(g.weights())
                .map(|(d, w)| w * f(d))
                .sum()
        };
        assert_relative_eq!(
            int(&|d| d.z * d.z),
            4.0 * std::f64::consts::PI / 3.0,
            epsilon = 1e-10
        );
        assert_relative_eq!(int(&|d| d.x), 0.0, epsilon = 1e-12);
        assert_relative_eq!(int(&|d| d.x * d.y), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn transverse_frames_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let d = Vector3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )
            .normalize();
            let (e1, e2) = transverse_frame(&d);
            assert_relative_eq!(e1.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(e2.norm(), 1.0, epsilon = 1e-12);
            assert!(e1.dot(&d).abs() < 1e-12);
            assert!(e2.dot(&d).abs() < 1e-12);
            assert!((e1.cross(&e2) - d).norm() < 1e-12);
        }
    }

    #[test]
    fn trial_normal_set_has_13_unit_directions() {
        let set = trial_normals();
        assert_eq!(set.len(), 13);
        for (i, a) in set.iter().enumerate() {
            assert_relative_eq!(a.norm(), 1.0, epsilon = 1e-12);
            for b in set.iter().skip(i + 1) {
                // distinct as axes (no duplicates up to sign)
                assert!(a.cross(b).norm() > 1e-6);
            }
        }
    }

    #[test]
    fn f_sharp_fixes_hermitian_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Mat::from_fn(5, 5, |_, _| rand_c64(&mut rng));
        let a = &g * g.adjoint();
        let fs = f_sharp(&a).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((fs[(i, j)] - a[(i, j)]).norm() < 1e-12 * (1.0 + a[(i, j)].norm()));
            }
        }
    }

    #[test]
    fn f_sharp_of_i_times_identity() {
        let n = 4;
        let f = Mat::from_fn(n, n, |i, j| {
            if i == j {
                c64::new(0.0, 1.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        let fs = f_sharp(&f).unwrap();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((fs[(i, j)] - c64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn f_sharp_hand_2x2() {
        // F = [[0, 1], [0, 0]]: |F + F*| = I and (F - F*)/(2i) =
        // [[0, -i/2], [i/2, 0]], so F# = [[1/2, -i/2], [i/2, 1/2]].
        let mut f = Mat::<c64>::zeros(2, 2);
        f[(0, 1)] = c64::new(1.0, 0.0);
        let fs = f_sharp(&f).unwrap();
        let want = [
            [c64::new(0.5, 0.0), c64::new(0.0, -0.5)],
            [c64::new(0.0, 0.5), c64::new(0.5, 0.0)],
        ];
        for i in 0..2 {
            for j in 0..2 {
                assert!((fs[(i, j)] - want[i][j]).norm() < 1e-12, "({i},{j})");
            }
        }
        assert!(f_sharp(&Mat::<c64>::zeros(2, 3)).is_err());
    }

    /// Synthetic far-field records with deterministic pseudo-random
    /// amplitudes on a shared grid.
    fn synthetic_records(
        grid: &ObservationGrid,
        omega: f64,
        seed: u64,
    ) -> Vec<FarFieldDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3 * grid.len())
            .map(|_| FarFieldDataset {
                omega,
                samples: grid
                    .directions()
                    .iter()
                    .map(|xi| {
                        let rv = |rng: &mut ChaCha8Rng| {
                            Vector3::new(
                                Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                                Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                                Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                            )
                        };
                        FarFieldSample {
                            xi_hat: *xi,
                            up: rv(&mut rng),
                            us: rv(&mut rng),
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn assembled_columns_match_weighted_records() {
        let grid = ObservationGrid::full_sphere(3, 4).unwrap();
        let records = synthetic_records(&grid, 2.0, 11);
        let op = assemble_f(&records, &grid, &grid, &med()).unwrap();
        for (col, rec) in records.iter().enumerate() {
            let w = grid.weights()[col / 3];
            for (o, s) in rec.samples.iter().enumerate() {
                let comps = intrinsic_components(s);
                for (r, c) in comps.iter().enumerate() {
                    assert!((op.f[(3 * o + r, col)] - c * c64::new(w, 0.0)).norm() < 1e-14);
                }
            }
        }
        // linearity is inherited from the matrix-vector product
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g1 = Col::from_fn(op.f.ncols(), |_| rand_c64(&mut rng));
        let g2 = Col::from_fn(op.f.ncols(), |_| rand_c64(&mut rng));
        let a = c64::new(0.3, -1.1);
        let b = c64::new(-0.7, 0.2);
        let lhs = &op.f * Col::from_fn(g1.nrows(), |i| g1[i] * a + g2[i] * b);
        let rhs1 = &op.f * &g1;
        let rhs2 = &op.f * &g2;
        for i in 0..lhs.nrows() {
            assert!((lhs[i] - (rhs1[i] * a + rhs2[i] * b)).norm() < 1e-12);
        }
    }

    #[test]
    fn doubling_weights_doubles_f() {
        let grid = ObservationGrid::full_sphere(3, 4).unwrap();
        let doubled = ObservationGrid::new(
            grid.directions().to_vec(),
            grid.weights().iter().map(|w| 2.0 * w).collect(),
        )
        .unwrap();
        let records = synthetic_records(&grid, 2.0, 13);
        let op1 = assemble_f(&records, &grid, &grid, &med()).unwrap();
        let op2 = assemble_f(&records, &doubled, &grid, &med()).unwrap();
        for i in 0..op1.f.nrows() {
            for j in 0..op1.f.ncols() {
                assert!((op2.f[(i, j)] - op1.f[(i, j)] * c64::new(2.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn record_count_and_grid_mismatch_rejected() {
        let grid = ObservationGrid::full_sphere(3, 4).unwrap();
        let records = synthetic_records(&grid, 2.0, 17);
        assert!(assemble_f(&records[..5], &grid, &grid, &med()).is_err());
        let mut bad = records.clone();
        bad[0].samples[0].xi_hat = Vector3::x();
        assert!(assemble_f(&bad, &grid, &grid, &med()).is_err());
    }

    /// Square operator with a known PSD surrogate: `F = U diag(c) U*` with
    /// `Im c > |Re c|` makes `F#` PSD exactly.
    fn normal_operator(n: usize, seed: u64) -> FarFieldOperator {
        let grid = ObservationGrid::full_sphere(n, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 3 * grid.len();
        let g = Mat::from_fn(dim, dim, |_, _| rand_c64(&mut rng));
        let u = g.qr().compute_Q();
        let mut f = Mat::<c64>::zeros(dim, dim);
        for k in 0..dim {
            let c = c64::new(rng.gen::<f64>() - 0.5, 0.6 + rng.gen::<f64>());
            for i in 0..dim {
                for j in 0..dim {
                    f[(i, j)] += u[(i, k)] * c * u[(j, k)].conj();
                }
            }
        }
        let fs = f_sharp(&f).unwrap();
        FarFieldOperator {
            omega: 1.0,
            medium: med(),
            obs: grid.clone(),
            src: grid,
            f,
            f_sharp: Some(fs),
            factor_cache: Mutex::new(None),
        }
    }

    fn functional(op: &FarFieldOperator, g: &Col<c64>, phi: &Col<c64>, p: &GlsmParams) -> f64 {
        let r = &op.f * g - phi;
        let misfit: f64 = (0..r.nrows()).map(|i| r[i].norm_sqr()).sum();
        let fg = op.f_sharp().unwrap() * g;
        let quad: f64 = (0..g.nrows()).map(|i| (g[i].conj() * fg[i]).re).sum();
        let n2: f64 = (0..g.nrows()).map(|i| g[i].norm_sqr()).sum();
        misfit + p.alpha * (quad + p.delta * n2)
    }

    #[test]
    fn minimizer_solves_normal_equations() {
        let op = normal_operator(4, 23);
        let params = GlsmParams::from_noise(0.05, Vec::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let phi = Col::from_fn(op.f.nrows(), |_| rand_c64(&mut rng));
        let g = glsm_minimizer(&op, &phi, &params).unwrap().to_col();
        // residual of (F*F + alpha F# + alpha delta I) g = F* phi
        let fs = op.f_sharp().unwrap();
        let fsg = fs * &g;
        let ffg = op.f.adjoint() * (&op.f * &g);
        let lhs = Col::from_fn(g.nrows(), |i| {
            ffg[i]
                + fsg[i] * c64::new(params.alpha, 0.0)
                + g[i] * c64::new(params.alpha * params.delta, 0.0)
        });
        let rhs = op.f.adjoint() * &phi;
        let num: f64 = (0..g.nrows()).map(|i| (lhs[i] - rhs[i]).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = (0..g.nrows()).map(|i| rhs[i].norm_sqr()).sum::<f64>().sqrt();
        assert!(num / den <= 1e-10, "relative residual {}", num / den);

        // zero data gives the zero minimizer
        let zero = glsm_minimizer(&op, &Col::zeros(op.f.nrows()), &params).unwrap();
        assert!(zero.norm() < 1e-14);

        // convexity probe: J increases in random directions
        let j0 = functional(&op, &g, &phi, &params);
        let gn: f64 = (0..g.nrows()).map(|i| g[i].norm_sqr()).sum::<f64>().sqrt();
        for _ in 0..20 {
            let dir = Col::from_fn(g.nrows(), |_| rand_c64(&mut rng));
            let dn: f64 = (0..dir.nrows()).map(|i| dir[i].norm_sqr()).sum::<f64>().sqrt();
            let eps = 1e-4 * gn / dn;
            for s in [1.0, -1.0] {
                let gp = Col::from_fn(g.nrows(), |i| g[i] + dir[i] * c64::new(s * eps, 0.0));
                assert!(functional(&op, &gp, &phi, &params) >= j0);
            }
        }
    }

    #[test]
    fn minimizer_norm_monotone_in_alpha() {
        let op = normal_operator(3, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let phi = Col::from_fn(op.f.nrows(), |_| rand_c64(&mut rng));
        let mut last = f64::INFINITY;
        let mut alpha = 1e-6;
        for _ in 0..10 {
            let params = GlsmParams {
                alpha,
                delta: 0.05,
                grid: Vec::new(),
                normals: trial_normals(),
            };
            let g = glsm_minimizer(&op, &phi, &params).unwrap();
            assert!(g.norm() <= last * (1.0 + 1e-10));
            last = g.norm();
            alpha *= 10.0;
        }
    }

    #[test]
    fn indicator_positive_and_scaling_preserves_ranking() {
        let op = normal_operator(3, 47);
        let params = GlsmParams::from_noise(0.05, Vec::new()).unwrap();
        let zs: Vec<Vector3<f64>> = (0..6)
            .map(|i| Vector3::new(0.3 * i as f64, -0.1 * i as f64, 0.2))
            .collect();
        let n = Vector3::z();
        let base: Vec<f64> = zs
            .iter()
            .map(|z| glsm_indicator(&op, &params, z, &n).unwrap())
            .collect();
        assert!(base.iter().all(|&c| c > 0.0 && c.is_finite()));

        // scale F and phi by c > 0 with (alpha, delta) -> (c alpha, c delta):
        // the minimizer is unchanged and C rescales by 1/sqrt(c) uniformly,
        // so the ranking over sampling points is preserved exactly
        let c = 3.7;
        let scaled = FarFieldOperator {
            omega: op.omega,
            medium: op.medium,
            obs: op.obs.clone(),
            src: op.src.clone(),
            f: Mat::from_fn(op.f.nrows(), op.f.ncols(), |i, j| op.f[(i, j)] * c64::new(c, 0.0)),
            f_sharp: Some(f_sharp(&Mat::from_fn(op.f.nrows(), op.f.ncols(), |i, j| {
                op.f[(i, j)] * c64::new(c, 0.0)
            })).unwrap()),
            factor_cache: Mutex::new(None),
        };
        let sparams = GlsmParams {
            alpha: c * params.alpha,
            delta: c * params.delta,
            grid: Vec::new(),
            normals: trial_normals(),
        };
        for (z, b) in zs.iter().zip(&base) {
            // pattern_vector scales with F through the shared medium, so
            // scale phi explicitly
            let phi = pattern_vector(&scaled.obs, z, &n, &scaled.medium, scaled.omega);
            let phi = Col::from_fn(phi.nrows(), |i| phi[i] * c64::new(c, 0.0));
            let g = glsm_minimizer(&scaled, &phi, &sparams).unwrap();
            let cs = indicator_from_density(&scaled, &g, sparams.delta).unwrap();
            assert_relative_eq!(cs * c.sqrt(), *b, max_relative = 1e-8);
        }
    }

    #[test]
    fn indicator_map_deterministic_and_permutation_invariant() {
        let grid = ObservationGrid::full_sphere(3, 4).unwrap();
        let records = synthetic_records(&grid, 1.3, 59);
        let op = assemble_f(&records, &grid, &grid, &med()).unwrap();
        let params = GlsmParams::from_noise(
            0.05,
            sampling_grid(&Vector3::zeros(), &Vector3::new(0.5, 0.5, 0.5), [2, 2, 2]),
        )
        .unwrap();
        let m1 = indicator_map(&op, &params).unwrap();
        let m2 = indicator_map(&op, &params).unwrap();
        assert_eq!(m1.values, m2.values);
        assert!(m1.values.iter().all(|&v| v > 0.0));

        // relabel the grid directions (reverse order) consistently in the
        // source records, source/observation grids, and per-record samples
        let ng = grid.len();
        let perm: Vec<usize> = (0..ng).rev().collect();
        let pgrid = ObservationGrid::new(
            perm.iter().map(|&q| grid.directions()[q]).collect(),
            perm.iter().map(|&q| grid.weights()[q]).collect(),
        )
        .unwrap();
        let precords: Vec<FarFieldDataset> = perm
            .iter()
            .flat_map(|&q| (0..3).map(move |c| (q, c)))
            .map(|(q, c)| {
                let rec = &records[3 * q + c];
                FarFieldDataset {
                    omega: rec.omega,
                    samples: perm.iter().map(|&o| rec.samples[o].clone()).collect(),
                }
            })
            .collect();
        let pop = assemble_f(&precords, &pgrid, &pgrid, &med()).unwrap();
        let m3 = indicator_map(&pop, &params).unwrap();
        for (a, b) in m1.values.iter().zip(&m3.values) {
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    #[test]
    fn extract_surface_recovers_a_plane() {
        // indicator mass concentrated on the plane z = 0.25 inside the box
        let grid = sampling_grid(&Vector3::zeros(), &Vector3::new(1.0, 1.0, 1.0), [7, 7, 9]);
        let values: Vec<f64> = grid
            .iter()
            .map(|z| if (z.z - 0.25).abs() < 1e-9 { 1.0 } else { 1e-3 })
            .collect();
        let best_normal = vec![2usize; grid.len()]; // +z axis in trial_normals()
        let params = GlsmParams {
            alpha: 1.0,
            delta: 1.0,
            grid,
            normals: trial_normals(),
        };
        let map = IndicatorMap { values, best_normal };
        let surf = extract_surface(&params, &map, 0.5, 6, 6).unwrap();
        assert!(surf.fit_rms < 1e-9);
        assert!((surf.frame.n - Vector3::z()).norm() < 1e-9);
        for node in surf.mesh.nodes() {
            assert!((node.z - 0.25).abs() < 1e-9, "node off plane: {node:?}");
        }
        // threshold monotonicity: tighter tau selects a subset
        let hi = select_support(&map, 0.99);
        let lo = select_support(&map, 0.5);
        assert!(hi.iter().all(|i| lo.contains(i)));
        assert!(extract_surface(&params, &map, 1.5, 4, 4).is_err());
    }

    #[test]
    fn penny_indicator_contrast_on_vs_off_surface() {
        // Full synthetic experiment on a coarse penny fracture: the
        // characteristic function must be larger on the fracture than half
        // a shear wavelength away from it.
        let a = 1.0;
        let m = med();
        let lambda_s = 1.4 * a;
        let omega = 2.0 * std::f64::consts::PI / lambda_s * m.c_s();
        let mesh = build_penny(a, 3).unwrap();
        let colloc = interior_collocation(&mesh, 1).unwrap();
        let tsys = assemble_t(&mesh, &colloc, &m, omega).unwrap();
        let grid = ObservationGrid::full_sphere(6, 4).unwrap();
        let mut waves = Vec::new();
        for d in grid.directions() {
            let (e1, e2) = transverse_frame(d);
            waves.push(IncidentPlaneWave::p_wave(*d, 1.0, omega).unwrap());
            waves.push(IncidentPlaneWave::s_wave(*d, e1, omega).unwrap());
            waves.push(IncidentPlaneWave::s_wave(*d, e2, omega).unwrap());
        }
        let sol = solve_forward(
            &mesh,
            &colloc,
            &tsys,
            &StiffnessField::traction_free(colloc.points.len()),
            &waves,
            &m,
        )
        .unwrap();
        // records ordered (P, S1, S2) per source direction, but waves were
        // pushed S-major within each direction already
        let records: Vec<FarFieldDataset> = sol
            .fods
            .iter()
            .map(|f| farfield_from_fod(&mesh, f, grid.directions(), &m, omega).unwrap())
            .collect();
        let op = assemble_f(&records, &grid, &grid, &m).unwrap();
        let params = GlsmParams::from_noise(0.05, Vec::new()).unwrap();
        let on: Vec<f64> = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.4, 0.0, 0.0),
            Vector3::new(0.0, -0.4, 0.0),
        ]
        .iter()
        .map(|z| glsm_indicator(&op, &params, z, &Vector3::z()).unwrap())
        .collect();
        let off: Vec<f64> = [
            Vector3::new(0.0, 0.0, 0.7),
            Vector3::new(0.4, 0.0, -0.7),
            Vector3::new(0.0, -0.4, 0.7),
        ]
        .iter()
        .map(|z| glsm_indicator(&op, &params, z, &Vector3::z()).unwrap())
        .collect();
        let min_on = on.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_off = off.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(
            min_on > 2.0 * max_off,
            "insufficient contrast: on {on:?} vs off {off:?}"
        );
    }
}
