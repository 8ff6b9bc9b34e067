//! Specific-stiffness inversion from the recovered opening displacement.
//!
//! On the reconstructed surface the linear-slip contact law couples the
//! recovered FOD to the total traction, `K [u] = t^i + T'[u]`. Two
//! regularization steps stabilize the inversion: the traction operator is
//! spectrally truncated so only the FOD content resolved by its leading
//! right singular modes contributes to the right-hand side, and points
//! where the FOD nearly vanishes (so the coefficient matrix degenerates)
//! are flagged as unreliable rather than trusted. The contact-law system is
//! diagonal per collocation point in the local surface frame when `K` is
//! assumed diagonal, or couples the nodal entries of a full symmetric `K`
//! otherwise; either form is solved by Tikhonov regularization with the
//! Morozov discrepancy principle.

use faer::{c64, Col, Mat};
use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::forward::TractionSystem;
use crate::linalg::{self, ComplexSvd};
use crate::mesh::{CollocationSet, FodVector, FractureMesh};
use crate::{Error, Result};

/// Default designated truncation error for the traction operator.
pub const DEFAULT_DELTA_TRUNC: f64 = 0.001;
/// FOD magnitude below this fraction of the mesh-wide maximum marks a
/// point as unreliable.
pub const RELIABILITY_THRESHOLD: f64 = 0.05;

/// Reliability discount for collocation points hosted in edge-adjacent
/// elements (same rationale as the forward solver's edge-row weight).
pub const EDGE_RELIABILITY_WEIGHT: f64 = 0.1;

/// Spectrally truncated traction action.
pub struct TruncatedAction {
    /// Number of leading singular modes kept.
    pub n_modes: usize,
    /// `T'_N [u]`, stacked over collocation rows in the global frame.
    pub action: Col<c64>,
    /// False when the designated error was unattainable even at full rank
    /// (the full-rank action is returned in that case).
    pub attained: bool,
}

/// Keeps the smallest count `N` of leading right singular vectors of `T'`
/// whose span captures the FOD to within `delta_trunc`, and returns the
/// correspondingly truncated action `T'_N [u]`.
pub fn truncate_t(
    tsys: &TractionSystem,
    fod: &FodVector,
    delta_trunc: f64,
) -> Result<TruncatedAction> {
    if !(delta_trunc > 0.0) {
        return Err(Error::Config(format!(
            "designated truncation error must be positive, got {delta_trunc}"
        )));
    }
    if fod.values.len() != tsys.n_nodes() {
        return Err(Error::Shape(format!(
            "FOD has {} nodes, traction system expects {}",
            fod.values.len(),
            tsys.n_nodes()
        )));
    }
    let svd = tsys.svd()?;
    let x = Col::<c64>::from_fn(3 * fod.values.len(), |i| {
        c64::from(fod.values[i / 3][i % 3])
    });
    let total2: f64 = (0..x.nrows()).map(|i| x[i].norm_sqr()).sum();
    // coefficients of the FOD in the right singular basis
    let coeff = svd.v.adjoint() * &x;
    let k = svd.rank();
    let mut captured = 0.0;
    let mut n_modes = 0;
    let mut attained = total2.sqrt() < delta_trunc;
    for n in 0..k {
        if total2 - captured < delta_trunc * delta_trunc {
            attained = true;
            break;
        }
        captured += coeff[n].norm_sqr();
        n_modes = n + 1;
    }
    if total2 - captured < delta_trunc * delta_trunc {
        attained = true;
    }
    let mut action = Col::<c64>::zeros(tsys.matrix.nrows());
    for n in 0..n_modes {
        let scale = coeff[n] * c64::new(svd.s[n], 0.0);
        for i in 0..action.nrows() {
            action[i] += svd.u[(i, n)] * scale;
        }
    }
    Ok(TruncatedAction {
        n_modes,
        action,
        attained,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StiffnessMode {
    /// Diagonal `K` in the local `(n, e1, e2)` frame, one triplet per
    /// collocation point.
    Diagonal,
    /// Full symmetric `K` (6 parameters, global frame) per mesh node,
    /// interpolated by the element shape functions.
    Full,
}

/// Assembled contact-law system `A kappa = rhs`.
pub struct StiffnessSystem {
    pub mode: StiffnessMode,
    /// Diagonal mode: `3 N_col` square diagonal; full mode:
    /// `3 N_col x 6 N_nds`.
    pub matrix: Mat<c64>,
    pub rhs: Col<c64>,
    /// Per collocation point (diagonal) or per node (full): interpolated
    /// FOD magnitude over the mesh-wide maximum.
    pub reliability: Vec<f64>,
    /// Evaluation positions matching `reliability`.
    pub positions: Vec<Vector3<f64>>,
    /// Diagonal mode: host element per collocation point (used to pool
    /// estimates at the resolution the FOD basis actually carries). Empty
    /// in full mode.
    pub host_element: Vec<usize>,
}

/// Builds the contact-law system from the recovered FOD and the
/// regularized right-hand side `rhs = T'_N [u] + t^i` (global frame,
/// stacked over collocation rows).
pub fn build_system(
    mode: StiffnessMode,
    mesh: &FractureMesh,
    colloc: &CollocationSet,
    fod: &FodVector,
    rhs_global: &Col<c64>,
) -> Result<StiffnessSystem> {
    let nc = colloc.points.len();
    if rhs_global.nrows() != 3 * nc {
        return Err(Error::Shape(format!(
            "right-hand side has {} rows for {} collocation points",
            rhs_global.nrows(),
            nc
        )));
    }
    if fod.values.len() != mesh.n_nodes() {
        return Err(Error::Shape(format!(
            "FOD has {} nodes, mesh has {}",
            fod.values.len(),
            mesh.n_nodes()
        )));
    }
    match mode {
        StiffnessMode::Diagonal => {
            let mut matrix = Mat::<c64>::zeros(3 * nc, 3 * nc);
            let mut rhs = Col::<c64>::zeros(3 * nc);
            let mut fod_mag = vec![0.0; nc];
            let mut positions = Vec::with_capacity(nc);
            let edge: std::collections::HashSet<usize> =
                mesh.edge_nodes().iter().copied().collect();
            let mut edge_hosted = vec![false; nc];
            for (c, cp) in colloc.points.iter().enumerate() {
                let u = mesh.fod_at(fod, cp.element, cp.param.0, cp.param.1)?;
                let frame = [cp.normal, cp.e1, cp.e2];
                for (i, f) in frame.iter().enumerate() {
                    let ul = u.x * f.x + u.y * f.y + u.z * f.z;
                    matrix[(3 * c + i, 3 * c + i)] = ul;
                    rhs[3 * c + i] = rhs_global[3 * c] * c64::new(f.x, 0.0)
                        + rhs_global[3 * c + 1] * c64::new(f.y, 0.0)
                        + rhs_global[3 * c + 2] * c64::new(f.z, 0.0);
                }
                fod_mag[c] = u.norm();
                edge_hosted[c] = mesh.elements()[cp.element]
                    .nodes()
                    .iter()
                    .any(|n| edge.contains(n));
                positions.push(cp.position);
            }
            let max = fod_mag.iter().cloned().fold(0.0, f64::max).max(1e-300);
            // Points hosted in edge-adjacent elements divide by a FOD whose
            // square-root edge behavior the linear basis cannot represent;
            // their traction misfit is irreducible, so their reliability is
            // discounted accordingly.
            let reliability = fod_mag
                .iter()
                .zip(&edge_hosted)
                .map(|(m, &e)| m / max * if e { EDGE_RELIABILITY_WEIGHT } else { 1.0 })
                .collect();
            Ok(StiffnessSystem {
                mode,
                matrix,
                rhs,
                reliability,
                positions,
                host_element: colloc.points.iter().map(|cp| cp.element).collect(),
            })
        }
        StiffnessMode::Full => {
            let nn = mesh.n_nodes();
            if nc < 2 * nn {
                return Err(Error::Config(format!(
                    "full-stiffness mode needs N_col >= 2 N_nds, got {nc} < {}",
                    2 * nn
                )));
            }
            // Parameter order per node: K11 K22 K33 K12 K13 K23. Row block
            // for collocation point c: sum_k s_k K_k u(c) with u the
            // interpolated FOD, all in the global frame.
            let mut matrix = Mat::<c64>::zeros(3 * nc, 6 * nn);
            let mut rhs = Col::<c64>::zeros(3 * nc);
            for (c, cp) in colloc.points.iter().enumerate() {
                let u = mesh.fod_at(fod, cp.element, cp.param.0, cp.param.1)?;
                let element = &mesh.elements()[cp.element];
                let (s, _, _) = element.shape(cp.param.0, cp.param.1);
                for (local, &nd) in element.nodes().iter().enumerate() {
                    let w = s[local];
                    // (K u)_i rows in terms of the 6 parameters
                    let rows: [[(usize, Complex64); 3]; 3] = [
                        [(0, u.x), (3, u.y), (4, u.z)],
                        [(3, u.x), (1, u.y), (5, u.z)],
                        [(4, u.x), (5, u.y), (2, u.z)],
                    ];
                    for (i, row) in rows.iter().enumerate() {
                        for &(p, val) in row {
                            matrix[(3 * c + i, 6 * nd + p)] += val * c64::new(w, 0.0);
                        }
                    }
                }
                for i in 0..3 {
                    rhs[3 * c + i] = rhs_global[3 * c + i];
                }
            }
            let max = fod.max_norm().max(1e-300);
            Ok(StiffnessSystem {
                mode,
                matrix,
                rhs,
                reliability: fod.values.iter().map(|v| v.norm() / max).collect(),
                positions: mesh.nodes().to_vec(),
                host_element: Vec::new(),
            })
        }
    }
}

/// Recovered specific-stiffness profile.
pub struct RecoveredStiffness {
    pub mode: StiffnessMode,
    /// Diagonal mode: `(kappa_n, kappa_s1, kappa_s2)` per collocation
    /// point in the local frame. Full mode: the 6 symmetric parameters per
    /// node are reduced to `(n.K n, e1.K e1, e2.K e2)` equivalents only in
    /// `full`, so this field is empty.
    pub kappa: Vec<Vector3<Complex64>>,
    /// Full mode only: symmetric parameters `K11 K22 K33 K12 K13 K23` per
    /// node.
    pub full: Vec<[Complex64; 6]>,
    pub reliability: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
    /// True where `reliability >= RELIABILITY_THRESHOLD`.
    pub reliable: Vec<bool>,
    pub beta: f64,
    pub achieved: f64,
    pub fallback: bool,
}

impl RecoveredStiffness {
    /// Fraction of reliable points whose recovered `Im(kappa)` exceeds
    /// `+tol` (passivity requires `Im(kappa) <= 0`; monitored, not
    /// enforced).
    pub fn passivity_violation_fraction(&self, tol: f64) -> f64 {
        let mut total = 0usize;
        let mut bad = 0usize;
        for (i, &ok) in self.reliable.iter().enumerate() {
            if !ok {
                continue;
            }
            total += 1;
            let violated = match self.mode {
                StiffnessMode::Diagonal => self.kappa[i].iter().any(|k| k.im > tol),
                StiffnessMode::Full => self.full[i][..3].iter().any(|k| k.im > tol),
            };
            if violated {
                bad += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            bad as f64 / total as f64
        }
    }
}

/// Tikhonov/Morozov solve of the contact-law system with per-point
/// reliability flags.
pub fn solve_stiffness(sys: &StiffnessSystem, noise_delta: f64) -> Result<RecoveredStiffness> {
    let reliable: Vec<bool> = sys
        .reliability
        .iter()
        .map(|&r| r >= RELIABILITY_THRESHOLD)
        .collect();
    if !reliable.iter().any(|&b| b) {
        return Err(Error::Degenerate(
            "no collocation point carries a significant FOD; add incident fields".into(),
        ));
    }
    let svd = ComplexSvd::new(&sys.matrix)?;
    let sol = linalg::tikhonov_morozov(&svd, &sys.rhs, noise_delta)?;
    let x = sol.x;
    let (kappa, full) = match sys.mode {
        StiffnessMode::Diagonal => {
            let nc = sys.positions.len();
            let mut kappa: Vec<Vector3<Complex64>> = (0..nc)
                .map(|c| Vector3::new(x[3 * c], x[3 * c + 1], x[3 * c + 2]))
                .collect();
            // The piecewise-linear FOD basis localizes stiffness
            // information at element scale only; pool the per-point
            // estimates within each host element (reliability-weighted) to
            // remove sub-element oscillation.
            if sys.host_element.len() == nc {
                let n_el = sys.host_element.iter().copied().max().map_or(0, |m| m + 1);
                let mut sums = vec![(Vector3::<Complex64>::zeros(), 0.0); n_el];
                for c in 0..nc {
                    let w = sys.reliability[c];
                    let (acc, tot) = &mut sums[sys.host_element[c]];
                    *acc += kappa[c] * Complex64::new(w, 0.0);
                    *tot += w;
                }
                for c in 0..nc {
                    let (acc, tot) = &sums[sys.host_element[c]];
                    if *tot > 0.0 {
                        kappa[c] = acc / Complex64::new(*tot, 0.0);
                    }
                }
            }
            (kappa, Vec::new())
        }
        StiffnessMode::Full => {
            let nn = sys.positions.len();
            let full = (0..nn)
                .map(|n| {
                    let mut k = [Complex64::new(0.0, 0.0); 6];
                    for (p, kp) in k.iter_mut().enumerate() {
                        *kp = x[6 * n + p];
                    }
                    k
                })
                .collect();
            (Vec::new(), full)
        }
    };
    Ok(RecoveredStiffness {
        mode: sys.mode,
        kappa,
        full,
        reliability: sys.reliability.clone(),
        positions: sys.positions.clone(),
        reliable,
        beta: sol.beta,
        achieved: sol.achieved,
        fallback: sol.fallback,
    })
}

/// Reconstructs the symmetric nodal matrix of a full-mode result.
pub fn full_matrix(k: &[Complex64; 6]) -> Matrix3<Complex64> {
    Matrix3::new(
        k[0], k[3], k[4], //
        k[3], k[1], k[5], //
        k[4], k[5], k[2],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{
        assemble_t, incident_traction, solve_forward, StiffnessField,
    };
    use crate::kernels::{ElasticMedium, IncidentPlaneWave};
    use crate::mesh::{build_penny, interior_collocation};
    use approx::assert_relative_eq;

    fn med() -> ElasticMedium {
        ElasticMedium::from_speeds(1.0, 2.08, 1.0).unwrap()
    }

    fn penny_setup(
        rings: usize,
        omega: f64,
    ) -> (crate::mesh::FractureMesh, CollocationSet, TractionSystem) {
        let mesh = build_penny(1.0, rings).unwrap();
        let colloc = interior_collocation(&mesh, 1).unwrap();
        let tsys = assemble_t(&mesh, &colloc, &med(), omega).unwrap();
        (mesh, colloc, tsys)
    }

    #[test]
    fn truncation_counts_behave() {
        let (mesh, _, tsys) = penny_setup(2, 1.7);
        let svd = tsys.svd().unwrap();

        // FOD equal to the leading right singular vector: one mode suffices
        let mut fod = FodVector::zeros(mesh.n_nodes());
        for i in 0..mesh.n_nodes() {
            for c in 0..3 {
                fod.values[i][c] = svd.v[(3 * i + c, 0)];
            }
        }
        let tr = truncate_t(&tsys, &fod, 1e-8).unwrap();
        assert_eq!(tr.n_modes, 1);
        assert!(tr.attained);
        let x = Col::<c64>::from_fn(3 * mesh.n_nodes(), |i| {
            c64::from(fod.values[i / 3][i % 3])
        });
        let fullact = &tsys.matrix * &x;
        let scale = linalg::col_norm(&fullact);
        for i in 0..fullact.nrows() {
            assert!((tr.action[i] - fullact[i]).norm() <= 1e-10 * scale);
        }

        // over-generous designated error keeps nothing
        let mut generic = FodVector::zeros(mesh.n_nodes());
        for (i, p) in mesh.nodes().iter().enumerate() {
            generic.values[i] = Vector3::new(
                Complex64::new(p.x, 0.1),
                Complex64::new(-p.y, 0.2 * p.x),
                Complex64::new(1.0, p.y),
            );
        }
        let tr0 = truncate_t(&tsys, &generic, 10.0 * generic.norm()).unwrap();
        assert_eq!(tr0.n_modes, 0);
        assert!(linalg::col_norm(&tr0.action) == 0.0);

        // mode count is nonincreasing in the designated error
        let mut last = usize::MAX;
        for delta in [1e-12, 1e-6, 1e-3, 1e-1, 1.0] {
            let t = truncate_t(&tsys, &generic, delta).unwrap();
            assert!(t.n_modes <= last);
            last = t.n_modes;
        }
        assert!(truncate_t(&tsys, &generic, 0.0).is_err());
    }

    #[test]
    fn diagonal_system_with_unit_local_fod_is_identity() {
        // a flat rectangular patch has one local frame everywhere, so a
        // nodal FOD of n + e1 + e2 interpolates to local components
        // (1, 1, 1) at every collocation point
        let frame = crate::mesh::GraphFrame {
            origin: Vector3::zeros(),
            e1: Vector3::x(),
            e2: Vector3::y(),
            n: Vector3::z(),
            c: [0.0; 6],
        };
        let mesh =
            crate::mesh::build_graph_patch(frame, (-1.0, 1.0), (-0.7, 0.7), 4, 3).unwrap();
        let colloc = interior_collocation(&mesh, 1).unwrap();
        let cp0 = &colloc.points[0];
        let dir = cp0.normal + cp0.e1 + cp0.e2;
        let mut fod = FodVector::zeros(mesh.n_nodes());
        for v in &mut fod.values {
            *v = Vector3::new(
                Complex64::new(dir.x, 0.0),
                Complex64::new(dir.y, 0.0),
                Complex64::new(dir.z, 0.0),
            );
        }
        let rhs = Col::<c64>::zeros(3 * colloc.points.len());
        let sys = build_system(StiffnessMode::Diagonal, &mesh, &colloc, &fod, &rhs).unwrap();
        for i in 0..sys.matrix.nrows() {
            for j in 0..sys.matrix.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (sys.matrix[(i, j)] - c64::new(want, 0.0)).norm() < 1e-10,
                    "({i},{j})"
                );
            }
        }
    }

    #[test]
    fn full_system_reproduces_constant_stiffness_action() {
        let mesh = build_penny(1.0, 3).unwrap();
        let colloc = interior_collocation(&mesh, 4).unwrap();
        assert!(colloc.points.len() >= 2 * mesh.n_nodes());
        let mut fod = FodVector::zeros(mesh.n_nodes());
        for (i, p) in mesh.nodes().iter().enumerate() {
            fod.values[i] = Vector3::new(
                Complex64::new(0.3 + p.x, -0.2),
                Complex64::new(p.y, 0.4),
                Complex64::new(1.0 - p.x * p.y, 0.1 * p.x),
            );
        }
        let rhs = Col::<c64>::zeros(3 * colloc.points.len());
        let sys = build_system(StiffnessMode::Full, &mesh, &colloc, &fod, &rhs).unwrap();
        assert_eq!(sys.matrix.nrows(), 3 * colloc.points.len());
        assert_eq!(sys.matrix.ncols(), 6 * mesh.n_nodes());

        // constant symmetric K at every node must reproduce K u(c)
        let kp = [
            Complex64::new(2.0, -0.3),
            Complex64::new(1.5, -0.1),
            Complex64::new(0.8, -0.6),
            Complex64::new(0.3, 0.05),
            Complex64::new(-0.2, 0.1),
            Complex64::new(0.1, -0.2),
        ];
        let kmat = full_matrix(&kp);
        let mut kvec = Col::<c64>::zeros(6 * mesh.n_nodes());
        for n in 0..mesh.n_nodes() {
            for p in 0..6 {
                kvec[6 * n + p] = kp[p];
            }
        }
        let action = &sys.matrix * &kvec;
        for (c, cp) in colloc.points.iter().enumerate() {
            let u = mesh.fod_at(&fod, cp.element, cp.param.0, cp.param.1).unwrap();
            let want = kmat * u;
            for i in 0..3 {
                assert!(
                    (action[3 * c + i] - want[i]).norm() <= 1e-12 * want.norm().max(1.0),
                    "colloc {c} row {i}"
                );
            }
        }

        // under-collocated full mode is rejected
        let (mesh2, colloc2, _) = penny_setup(2, 1.0);
        let fod2 = FodVector::zeros(mesh2.n_nodes());
        let rhs2 = Col::<c64>::zeros(3 * colloc2.points.len());
        assert!(
            build_system(StiffnessMode::Full, &mesh2, &colloc2, &fod2, &rhs2).is_err()
                || colloc2.points.len() >= 2 * mesh2.n_nodes()
        );
    }

    #[test]
    fn single_point_division_matches_solver() {
        // diagonal mode with well-separated magnitudes and loose noise:
        // the unregularized solution is plain per-component division
        let (mesh, colloc, _) = penny_setup(2, 1.0);
        let mut fod = FodVector::zeros(mesh.n_nodes());
        for (i, p) in mesh.nodes().iter().enumerate() {
            fod.values[i] = Vector3::new(
                Complex64::new(1.0 + 0.2 * p.x, 0.1),
                Complex64::new(0.8, -0.3 * p.y),
                Complex64::new(1.3, 0.2),
            );
        }
        let nc = colloc.points.len();
        let rhs = Col::<c64>::from_fn(3 * nc, |i| c64::new(0.3 + i as f64 * 0.01, -0.2));
        let sys = build_system(StiffnessMode::Diagonal, &mesh, &colloc, &fod, &rhs).unwrap();
        let rec = solve_stiffness(&sys, 1e-8).unwrap();
        let c = nc / 2;
        for i in 0..3 {
            let hand = sys.rhs[3 * c + i] / sys.matrix[(3 * c + i, 3 * c + i)];
            assert!(
                (rec.kappa[c][i] - hand).norm() <= 1e-6 * hand.norm(),
                "comp {i}: {} vs {hand}",
                rec.kappa[c][i]
            );
        }
        assert!(solve_stiffness(
            &StiffnessSystem {
                mode: StiffnessMode::Diagonal,
                matrix: Mat::zeros(3, 3),
                rhs: Col::zeros(3),
                reliability: vec![0.0],
                positions: vec![Vector3::zeros()],
                host_element: vec![0],
            },
            0.05
        )
        .is_err());
    }

    #[test]
    fn homogeneous_diagonal_round_trip() {
        // forward solve with a known homogeneous diagonal stiffness, then
        // invert the contact law from the exact discrete FOD
        let m = med();
        let omega = 2.0;
        let (mesh, colloc, tsys) = penny_setup(4, omega);
        let kn = Complex64::new(4.0, -0.8);
        let ks = Complex64::new(2.5, -0.4);
        let field = StiffnessField::normal_shear(&colloc, |_| (kn, ks)).unwrap();
        let wave = IncidentPlaneWave::p_wave(Vector3::new(0.5, 0.3, 0.81)
            .normalize(), 1.0, omega)
        .unwrap();
        let sol = solve_forward(&mesh, &colloc, &tsys, &field, &[wave.clone()], &m).unwrap();
        let fod = &sol.fods[0];

        let tr = truncate_t(&tsys, fod, DEFAULT_DELTA_TRUNC * fod.norm()).unwrap();
        let ti = incident_traction(&colloc, &wave, &m);
        let rhs = Col::<c64>::from_fn(ti.nrows(), |i| tr.action[i] + ti[i]);
        let sys = build_system(StiffnessMode::Diagonal, &mesh, &colloc, fod, &rhs).unwrap();
        let rec = solve_stiffness(&sys, 1e-4).unwrap();

        // compare on reliable points hosted away from the rim (where the
        // collocation rows are accurate) and only for components whose
        // local FOD magnitude is significant — dividing by a vanishing
        // component is exactly the instability the reliability flagging
        // exists for
        let edge: std::collections::HashSet<usize> =
            mesh.edge_nodes().iter().copied().collect();
        let amax = (0..sys.matrix.nrows())
            .map(|i| sys.matrix[(i, i)].norm())
            .fold(0.0f64, f64::max);
        let truth = [kn, ks, ks];
        let mut checked = 0;
        for (c, cp) in colloc.points.iter().enumerate() {
            let touches_edge = mesh.elements()[cp.element]
                .nodes()
                .iter()
                .any(|n| edge.contains(n));
            if touches_edge || rec.reliability[c] < 0.1 {
                continue;
            }
            for i in 0..3 {
                if sys.matrix[(3 * c + i, 3 * c + i)].norm() < 0.1 * amax {
                    continue;
                }
                checked += 1;
                assert!(
                    (rec.kappa[c][i] - truth[i]).norm() <= 0.06 * truth[i].norm(),
                    "component {i} at {c}: {} vs {}",
                    rec.kappa[c][i],
                    truth[i]
                );
            }
        }
        assert!(checked > 30, "only {checked} component samples checked");
        // truth is passive, so violations on the reliable set stay rare
        assert!(rec.passivity_violation_fraction(0.05 * kn.norm()) <= 0.1);

        // truncation consistency: tiny designated error reproduces the
        // untruncated inversion
        let tr_tight = truncate_t(&tsys, fod, 1e-6).unwrap();
        let x = Col::<c64>::from_fn(3 * mesh.n_nodes(), |i| {
            c64::from(fod.values[i / 3][i % 3])
        });
        let full_action = &tsys.matrix * &x;
        let rhs_full = Col::<c64>::from_fn(ti.nrows(), |i| full_action[i] + ti[i]);
        let sys_full =
            build_system(StiffnessMode::Diagonal, &mesh, &colloc, fod, &rhs_full).unwrap();
        let rec_full = solve_stiffness(&sys_full, 0.01).unwrap();
        let rhs_tight = Col::<c64>::from_fn(ti.nrows(), |i| tr_tight.action[i] + ti[i]);
        let sys_tight =
            build_system(StiffnessMode::Diagonal, &mesh, &colloc, fod, &rhs_tight).unwrap();
        let rec_tight = solve_stiffness(&sys_tight, 0.01).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..colloc.points.len() {
            if !rec_full.reliable[c] {
                continue;
            }
            num += (rec_tight.kappa[c] - rec_full.kappa[c]).norm_squared();
            den += rec_full.kappa[c].norm_squared();
        }
        assert!(num.sqrt() <= 0.01 * den.sqrt());
    }

    #[test]
    fn full_matrix_is_symmetric() {
        let k = [
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, -1.0),
            Complex64::new(3.0, 0.5),
            Complex64::new(0.1, 0.2),
            Complex64::new(-0.3, 0.0),
            Complex64::new(0.7, -0.2),
        ];
        let m = full_matrix(&k);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(m[(i, j)].re, m[(j, i)].re);
                assert_relative_eq!(m[(i, j)].im, m[(j, i)].im);
            }
        }
    }
}
