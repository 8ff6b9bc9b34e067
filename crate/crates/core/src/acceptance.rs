//! Acceptance suite: eleven numbered end-to-end checks covering kernels,
//! the forward solver, the sampling reconstruction, FOD recovery and the
//! stiffness inversion, each with a hard pass/fail verdict and a runtime
//! budget where relevant.
//!
//! Heavy shared artifacts (the `zebra-mini` synthesis and pipeline runs)
//! are computed once per process and reused across criteria.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::forward::{
    assemble_t, farfield_from_fod, scattered_field_at, solve_forward, StiffnessField,
};
use crate::fod::{assemble_m, data_vector, recombine_sources, recover_fod, FodSystem};
use crate::glsm::{assemble_f, glsm_indicator, GlsmParams};
use crate::kernels::{
    cvec, farfield_stress_kernel, greens_displacement, greens_stress, ElasticMedium,
    IncidentPlaneWave, I,
};
use crate::mesh::{build_penny, interior_collocation, FodVector, FractureMesh};
use crate::pipeline::{
    full_pipeline, synthesize, truth_kappa_at, write_artifacts, PipelineOptions, PipelineResult,
    SynthStage,
};
use crate::stiffness::{build_system, solve_stiffness, StiffnessMode};
use crate::{Error, Result};

/// Number of acceptance criteria.
pub const N_CRITERIA: usize = 11;

/// Verdict of one criterion.
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

impl CriterionResult {
    /// One-line pass/fail summary.
    pub fn line(&self) -> String {
        format!(
            "criterion {:2} [{}] {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.details
        )
    }
}

/// Runs one criterion by number (1-based).
pub fn run(id: usize) -> Result<CriterionResult> {
    match id {
        1 => criterion_1(),
        2 => criterion_2(),
        3 => criterion_3(),
        4 => criterion_4(),
        5 => criterion_5(),
        6 => criterion_6(),
        7 => criterion_7(),
        8 => criterion_8(),
        9 => criterion_9(),
        10 => criterion_10(),
        11 => criterion_11(),
        other => Err(Error::Config(format!(
            "criterion number must lie in 1..={N_CRITERIA}, got {other}"
        ))),
    }
}

/// Runs every criterion in order.
pub fn run_all() -> Result<Vec<CriterionResult>> {
    (1..=N_CRITERIA).map(run).collect()
}

fn med() -> ElasticMedium {
    ElasticMedium::from_speeds(1.0, 2.08, 1.0).expect("reference medium")
}

fn rand_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        );
        if v.norm() > 1e-3 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

// ---------------------------------------------------------------------------
// shared zebra-mini artifacts

fn mini_config() -> ExperimentConfig {
    ExperimentConfig::preset("zebra-mini").expect("zebra-mini preset")
}

fn mini_synth() -> &'static (ExperimentConfig, SynthStage) {
    static CACHE: OnceLock<(ExperimentConfig, SynthStage)> = OnceLock::new();
    CACHE.get_or_init(|| {
        let cfg = mini_config();
        let synth = synthesize(&cfg).expect("zebra-mini synthesis");
        (cfg, synth)
    })
}

/// Double-layer system over the true zebra-mini geometry.
fn mini_fod_system() -> &'static FodSystem {
    static CACHE: OnceLock<FodSystem> = OnceLock::new();
    CACHE.get_or_init(|| {
        let (cfg, synth) = mini_synth();
        assemble_m(
            &synth.mesh,
            &synth.grid,
            &synth.medium,
            synth.omega,
            cfg.inversion.q_fraction,
        )
        .expect("zebra-mini double-layer map")
    })
}

fn mini_pipeline() -> &'static PipelineResult {
    static CACHE: OnceLock<PipelineResult> = OnceLock::new();
    CACHE.get_or_init(|| {
        full_pipeline(&mini_config(), &PipelineOptions::default())
            .expect("zebra-mini reconstructed pipeline")
    })
}

fn mini_pipeline_oracle() -> &'static PipelineResult {
    static CACHE: OnceLock<PipelineResult> = OnceLock::new();
    CACHE.get_or_init(|| {
        full_pipeline(
            &mini_config(),
            &PipelineOptions {
                geometry_oracle: true,
            },
        )
        .expect("zebra-mini oracle-geometry pipeline")
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Pearson correlation of two samples.
fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    num / (va.sqrt() * vb.sqrt()).max(1e-300)
}

/// Symmetric Hausdorff distance between the quadrature point clouds of two
/// meshes.
fn hausdorff(a: &FractureMesh, b: &FractureMesh) -> f64 {
    let cloud = |m: &FractureMesh| -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for el in 0..m.n_elements() {
            for q in m.quadrature(el) {
                pts.push(q.position);
            }
        }
        pts
    };
    let pa = cloud(a);
    let pb = cloud(b);
    let directed = |from: &[Vector3<f64>], to: &[Vector3<f64>]| -> f64 {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p - q).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(&pa, &pb).max(directed(&pb, &pa))
}

// ---------------------------------------------------------------------------
// criteria

/// Kernel oracles: point-source reciprocity, stress symmetry, the static
/// Kelvin limit, and the far-field stress kernel against the Green's
/// stress at a kilo-wavelength range.
fn criterion_1() -> Result<CriterionResult> {
    let start = Instant::now();
    let m = med();
    let omega = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst_recip: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for _ in 0..25 {
        let a = rand_unit(&mut rng) * (0.3 + rng.gen::<f64>());
        let b = rand_unit(&mut rng) * (0.3 + rng.gen::<f64>());
        if (a - b).norm() < 0.05 {
            continue;
        }
        let uab = greens_displacement(&a, &b, &m, omega)?;
        let uba = greens_displacement(&b, &a, &m, omega)?;
        worst_recip = worst_recip.max((uab - uba.transpose()).norm() / uab.norm());
        let sig = greens_stress(&a, &b, &m, omega)?;
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    worst_sym = worst_sym.max((sig[i][j][l] - sig[j][i][l]).norm());
                }
            }
        }
    }

    // static Kelvin limit
    let nu = m.nu();
    let mut worst_kelvin: f64 = 0.0;
    for _ in 0..10 {
        let xi = rand_unit(&mut rng) * (0.5 + rng.gen::<f64>());
        let x = rand_unit(&mut rng) * (0.5 + rng.gen::<f64>());
        let r = (xi - x).norm();
        if r < 0.1 {
            continue;
        }
        let u = greens_displacement(&xi, &x, &m, 1e-6 * m.c_s() / r)?;
        let rh = (xi - x) / r;
        let pref = 1.0 / (16.0 * std::f64::consts::PI * m.mu() * (1.0 - nu) * r);
        for i in 0..3 {
            for l in 0..3 {
                let delta = if i == l { 1.0 } else { 0.0 };
                let kelvin = pref * ((3.0 - 4.0 * nu) * delta + rh[i] * rh[l]);
                worst_kelvin =
                    worst_kelvin.max((u[(i, l)].re - kelvin).abs() / kelvin.abs().max(pref));
            }
        }
    }

    // far-field stress kernel vs the Green's stress at r = 1e3 lambda_s
    let kp = m.k_p(omega);
    let ks = m.k_s(omega);
    let lambda_s = 2.0 * std::f64::consts::PI / ks;
    let r = 1e3 * lambda_s;
    let mut worst_ff: f64 = 0.0;
    for _ in 0..5 {
        let xh = rand_unit(&mut rng);
        let x = rand_unit(&mut rng) * 0.2;
        let sig = greens_stress(&(xh * r), &x, &m, omega)?;
        let (p, s) = farfield_stress_kernel(&xh, &x, &m, omega);
        let fac_p =
            (I * kp * r).exp() / (4.0 * std::f64::consts::PI * (m.lambda() + 2.0 * m.mu()) * r);
        let fac_s = (I * ks * r).exp() / (4.0 * std::f64::consts::PI * m.mu() * r);
        let mut scale: f64 = 0.0;
        let mut diff: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    let recon = fac_p * p[i][j][l] + fac_s * s[i][j][l];
                    scale = scale.max(recon.norm());
                    diff = diff.max((sig[i][j][l] - recon).norm());
                }
            }
        }
        worst_ff = worst_ff.max(diff / scale);
    }

    let elapsed = start.elapsed().as_secs_f64();
    let passed = worst_recip <= 1e-12 && worst_sym <= 1e-12 && worst_kelvin <= 1e-4
        && worst_ff <= 0.01
        && elapsed < 60.0;
    Ok(CriterionResult {
        id: 1,
        name: "kernel oracle suite",
        passed,
        details: format!(
            "reciprocity {worst_recip:.2e}, symmetry {worst_sym:.2e}, kelvin {worst_kelvin:.2e}, \
             far-field kernel {worst_ff:.2e}, {elapsed:.1}s"
        ),
    })
}

/// Forward-solver oracle: quasi-static penny opening against the closed
/// form, and welded-limit suppression of the FOD.
fn criterion_2() -> Result<CriterionResult> {
    let start = Instant::now();
    let a = 1.0;
    let rings = 16;
    let mesh = build_penny(a, rings)?;
    let m = med();
    let omega = 0.01 * m.c_p() / a; // k_p a = 0.01
    let colloc = interior_collocation(&mesh, 1)?;
    let tsys = assemble_t(&mesh, &colloc, &m, omega)?;
    let wave = IncidentPlaneWave::p_wave(Vector3::z(), 1.0, omega)?;
    let free = solve_forward(
        &mesh,
        &colloc,
        &tsys,
        &StiffnessField::traction_free(colloc.points.len()),
        &[wave],
        &m,
    )?;
    let fod = &free.fods[0];
    let p = (m.lambda() + 2.0 * m.mu()) * m.k_p(omega);
    let nu = m.nu();
    let w0 = 4.0 * (1.0 - nu) * p * a / (std::f64::consts::PI * m.mu());
    // the incident traction carries the phase i at z = 0
    let phase = Complex64::new(0.0, 1.0);
    // pointwise comparison away from the edge ring (nodes of edge-adjacent
    // elements excluded)
    let cutoff = a * (rings as f64 - 1.5) / rings as f64;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (i, pnode) in mesh.nodes().iter().enumerate() {
        let r = (pnode.x * pnode.x + pnode.y * pnode.y).sqrt();
        if r > cutoff {
            continue;
        }
        let w_exact = w0 * (1.0 - (r / a).powi(2)).sqrt();
        let w_num = (fod.values[i][2] / phase).re;
        worst = worst.max((w_num - w_exact).abs() / w_exact);
        checked += 1;
    }

    // welded limit: at this quasi-static frequency the fracture compliance
    // scale is mu/a (lambda_s >> a), so kappa is referenced to the radius
    let kappa = Complex64::new(1e6 * m.mu() / a, 0.0);
    let welded = solve_forward(
        &mesh,
        &colloc,
        &tsys,
        &StiffnessField::diagonal(&colloc, |_| (kappa, kappa, kappa))?,
        &[wave],
        &m,
    )?;
    let suppression = free.fods[0].norm() / welded.fods[0].norm().max(1e-300);

    let elapsed = start.elapsed().as_secs_f64();
    let passed = worst <= 0.05 && suppression >= 1e4 && elapsed < 300.0;
    Ok(CriterionResult {
        id: 2,
        name: "penny forward oracle",
        passed,
        details: format!(
            "static opening worst error {:.2}% over {checked} nodes, welded suppression {:.1e}x, \
             {elapsed:.1}s",
            100.0 * worst,
            suppression
        ),
    })
}

/// A symmetric antiplane S-wave pair on a flat penny with diagonal
/// stiffness produces a vanishing combined FOD.
fn criterion_3() -> Result<CriterionResult> {
    let start = Instant::now();
    let mesh = build_penny(1.0, 4)?;
    let m = med();
    let omega = 1.1;
    let colloc = interior_collocation(&mesh, 1)?;
    let tsys = assemble_t(&mesh, &colloc, &m, omega)?;
    let alpha: f64 = 0.6;
    let d1 = Vector3::new(alpha.sin(), 0.0, alpha.cos());
    let d2 = Vector3::new(alpha.sin(), 0.0, -alpha.cos());
    let pol = Vector3::y();
    let w1 = IncidentPlaneWave::s_wave(d1, pol, omega)?;
    let w2 = IncidentPlaneWave::s_wave(d2, pol, omega)?;
    let field = StiffnessField::diagonal(&colloc, |_| {
        (
            Complex64::new(3.0, -0.6),
            Complex64::new(2.0, -0.5),
            Complex64::new(1.5, -0.3),
        )
    })?;
    let sol = solve_forward(&mesh, &colloc, &tsys, &field, &[w1, w2], &m)?;
    let mut combined = FodVector::zeros(mesh.n_nodes());
    for i in 0..mesh.n_nodes() {
        combined.values[i] = sol.fods[0].values[i] + sol.fods[1].values[i];
    }
    let ratio = combined.norm() / sol.fods[0].norm();
    let elapsed = start.elapsed().as_secs_f64();
    Ok(CriterionResult {
        id: 3,
        name: "antiplane pair cancellation",
        passed: ratio <= 1e-6,
        details: format!("combined/single FOD norm {ratio:.2e}, {elapsed:.1}s"),
    })
}

/// The far-field pattern agrees with the rescaled near-field double layer
/// at one hundred shear wavelengths.
fn criterion_4() -> Result<CriterionResult> {
    let start = Instant::now();
    let a = 1.0;
    let mesh = build_penny(a, 4)?;
    let m = med();
    let omega = 1.5;
    let mut fod = FodVector::zeros(mesh.n_nodes());
    for (i, p) in mesh.nodes().iter().enumerate() {
        let w = (1.0 - (p.x * p.x + p.y * p.y) / (a * a)).max(0.0);
        fod.values[i] = cvec(&Vector3::new(0.3, -0.4, 1.0)) * Complex64::new(w, 0.1 * w);
    }
    fod.pin_edges(&mesh);
    let kp = m.k_p(omega);
    let ks = m.k_s(omega);
    let lambda_s = 2.0 * std::f64::consts::PI / ks;
    let r = 100.0 * lambda_s;
    let mut worst: f64 = 0.0;
    for xh in [
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(0.6, 0.0, 0.8),
        Vector3::new(0.0, -0.8, -0.6),
    ] {
        let ff = farfield_from_fod(&mesh, &fod, &[xh], &m, omega)?;
        let s = &ff.samples[0];
        let near = scattered_field_at(&mesh, &fod, &(xh * r), &m, omega)?;
        let fac_p = (I * kp * r).exp()
            / Complex64::new(
                4.0 * std::f64::consts::PI * (m.lambda() + 2.0 * m.mu()) * r,
                0.0,
            );
        let fac_s =
            (I * ks * r).exp() / Complex64::new(4.0 * std::f64::consts::PI * m.mu() * r, 0.0);
        let recon = s.up * fac_p + s.us * fac_s;
        worst = worst.max((near - recon).norm() / near.norm());
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(CriterionResult {
        id: 4,
        name: "far-field / near-field consistency",
        passed: worst <= 0.01,
        details: format!("worst relative deviation {:.2}%, {elapsed:.1}s", 100.0 * worst),
    })
}

/// Compactness fingerprint of the double-layer map on `zebra-mini`:
/// strongly decaying spectrum, and a single-incidence round-trip residual
/// concentrated in the suppressed subspace.
fn criterion_5() -> Result<CriterionResult> {
    let start = Instant::now();
    let (cfg, synth) = mini_synth();
    let sys = mini_fod_system();
    let ratio = sys.svd.s.last().copied().unwrap_or(f64::NAN)
        / sys.svd.s.first().copied().unwrap_or(f64::NAN);
    // single P incidence (first excitation record)
    let rec = recover_fod(sys, &data_vector(&synth.noisy[0]), cfg.noise.level)?;
    let mut residual = FodVector::zeros(synth.mesh.n_nodes());
    for i in 0..synth.mesh.n_nodes() {
        residual.values[i] = synth.fods[0].values[i] - rec.fod.values[i];
    }
    let frac = sys.suppressed_energy_fraction(&residual);
    let elapsed = start.elapsed().as_secs_f64();
    Ok(CriterionResult {
        id: 5,
        name: "double-layer compactness fingerprint",
        passed: ratio <= 1e-3 && frac >= 0.8,
        details: format!(
            "singular ratio {ratio:.2e}, residual suppressed-energy fraction {:.1}% \
             (Q = {}), {elapsed:.1}s",
            100.0 * frac,
            sys.q
        ),
    })
}

/// Morozov contract: the recovered FOD discrepancy sits at the noise
/// level.
fn criterion_6() -> Result<CriterionResult> {
    let start = Instant::now();
    let (cfg, synth) = mini_synth();
    let sys = mini_fod_system();
    let rec = recover_fod(sys, &data_vector(&synth.noisy[0]), cfg.noise.level)?;
    let rel = (rec.achieved - cfg.noise.level).abs() / cfg.noise.level;
    let elapsed = start.elapsed().as_secs_f64();
    Ok(CriterionResult {
        id: 6,
        name: "Morozov discrepancy contract",
        passed: !rec.fallback && rel <= 0.02,
        details: format!(
            "achieved {:.4} vs target {:.4} ({:.2}% off), {elapsed:.1}s",
            rec.achieved,
            cfg.noise.level,
            100.0 * rel
        ),
    })
}

/// Source recombination strictly reduces the interface-wave content of the
/// induced FOD below every single-incidence level.
fn criterion_7() -> Result<CriterionResult> {
    let start = Instant::now();
    let (_, synth) = mini_synth();
    let sys = mini_fod_system();
    let data: Vec<_> = synth.noisy.iter().map(data_vector).collect();
    let (weights, _) = recombine_sources(sys, &data)?;
    // forward linearity: the FOD of the recombined excitation is the
    // weighted sum of the single-excitation FODs
    let mut combined = FodVector::zeros(synth.mesh.n_nodes());
    for (g, fod) in weights.iter().zip(&synth.fods) {
        for i in 0..synth.mesh.n_nodes() {
            combined.values[i] += fod.values[i] * *g;
        }
    }
    let frac_comb = sys.suppressed_energy_fraction(&combined);
    let mut min_single = f64::INFINITY;
    for fod in &synth.fods {
        min_single = min_single.min(sys.suppressed_energy_fraction(fod));
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(CriterionResult {
        id: 7,
        name: "recombination benefit",
        passed: frac_comb < min_single,
        details: format!(
            "suppressed-energy fraction {frac_comb:.2e} recombined vs {min_single:.2e} best \
             single incidence, {elapsed:.1}s"
        ),
    })
}

/// Sampling-indicator contrast and geometric accuracy of the
/// reconstructed surface on `zebra-mini`.
fn criterion_8() -> Result<CriterionResult> {
    let start = Instant::now();
    let (cfg, synth) = mini_synth();
    let lambda_s = 2.0 * std::f64::consts::PI / synth.medium.k_s(synth.omega);
    // indicator on element centers vs the same points pushed off-surface
    let op = assemble_f(&synth.noisy, &synth.grid, &synth.grid, &synth.medium)?;
    let delta = cfg.delta();
    let params = GlsmParams {
        alpha: cfg.inversion.alpha_over_delta_sq * delta * delta,
        delta,
        grid: Vec::new(),
        normals: crate::glsm::trial_normals(),
    };
    let mut on = Vec::new();
    let mut off = Vec::new();
    for el in (0..synth.mesh.n_elements()).step_by(3) {
        let g = synth.mesh.element_geometry(el, 0.0, 0.0);
        let best_at = |z: &Vector3<f64>| -> Result<f64> {
            let mut best = f64::NEG_INFINITY;
            for n in &params.normals {
                best = best.max(glsm_indicator(&op, &params, z, n)?);
            }
            Ok(best)
        };
        on.push(best_at(&g.position)?);
        off.push(best_at(&(g.position + g.normal * (0.5 * lambda_s)))?);
    }
    let contrast = median(&mut on) / median(&mut off);

    let res = mini_pipeline();
    let dist = hausdorff(&res.surface, &synth.mesh);
    let elapsed = start.elapsed().as_secs_f64();
    let passed = contrast >= 5.0 && dist <= lambda_s / 4.0 && elapsed < 1200.0;
    Ok(CriterionResult {
        id: 8,
        name: "sampling reconstruction quality",
        passed,
        details: format!(
            "median indicator contrast {contrast:.1}x at lambda_s/2, Hausdorff {dist:.3} vs \
             bound {:.3}, {elapsed:.1}s",
            lambda_s / 4.0
        ),
    })
}

/// Pointwise stiffness error over the reliable set of a recovered run.
/// Returns (max relative error of Re kappa, mean relative error,
/// correlations of the kappa_n and kappa_s patterns, sample count).
fn stiffness_errors(
    cfg: &ExperimentConfig,
    res: &PipelineResult,
) -> Result<(f64, f64, f64, f64, usize)> {
    let rec = &res.stiffness.recovered;
    // Elements whose width extent straddles a stripe boundary host a
    // discontinuity of the truth field; the piecewise-linear opening
    // basis cannot localize the jump below the element scale, so points
    // inside those width bands are not scored pointwise.
    let mut excluded: Vec<(f64, f64)> = Vec::new();
    if cfg.stiffness.stripes > 1 {
        let mesh = &res.surface;
        let nodes = mesh.nodes();
        for el in mesh.elements() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &nd in el.nodes() {
                let (_, t) = cfg.geometry.local_coords(&nodes[nd]);
                lo = lo.min(t);
                hi = hi.max(t);
            }
            let straddles = (1..cfg.stiffness.stripes)
                .any(|k| {
                    let b = k as f64 / cfg.stiffness.stripes as f64;
                    lo < b && b < hi
                });
            if straddles {
                excluded.push((lo, hi));
            }
        }
    }
    let mut errs = Vec::new();
    let mut tn = Vec::new();
    let mut rn = Vec::new();
    let mut ts = Vec::new();
    let mut rs = Vec::new();
    for (i, &rel) in rec.reliability.iter().enumerate() {
        if rel < 0.1 {
            continue;
        }
        let (_, t) = cfg.geometry.local_coords(&rec.positions[i]);
        if excluded.iter().any(|&(lo, hi)| (lo..=hi).contains(&t)) {
            continue;
        }
        let (kn, ks) = truth_kappa_at(cfg, &rec.positions[i])?;
        let khat = &rec.kappa[i];
        // shear estimate: average of the two tangential components
        let ks_hat = 0.5 * (khat[1] + khat[2]);
        let e_n = (khat[0].re - kn.re).abs() / kn.re.abs();
        let e_s = (ks_hat.re - ks.re).abs() / ks.re.abs();
        errs.push(0.5 * (e_n + e_s));
        tn.push(kn.re);
        rn.push(khat[0].re);
        ts.push(ks.re);
        rs.push(ks_hat.re);
    }
    let n = errs.len();
    if n == 0 {
        return Err(Error::Degenerate("no reliable points to score".into()));
    }
    let mean = errs.iter().sum::<f64>() / n as f64;
    let med = median(&mut errs);
    Ok((med, mean, correlation(&tn, &rn), correlation(&ts, &rs), n))
}

/// End-to-end stiffness recovery on `zebra-mini` with the reconstructed
/// surface, plus the oracle-geometry monotonicity check.
fn criterion_9() -> Result<CriterionResult> {
    let start = Instant::now();
    let cfg = mini_config();
    let res = mini_pipeline();
    let oracle = mini_pipeline_oracle();
    let (med_err, mean_err, corr_n, corr_s, n) = stiffness_errors(&cfg, res)?;
    let (med_oracle, _, _, _, _) = stiffness_errors(&cfg, oracle)?;
    let elapsed = start.elapsed().as_secs_f64();
    let passed = med_err <= 0.30
        && corr_n >= 0.8
        && corr_s >= 0.8
        && med_oracle <= med_err
        && elapsed < 1800.0;
    Ok(CriterionResult {
        id: 9,
        name: "end-to-end stiffness recovery",
        passed,
        details: format!(
            "median Re(kappa) error {:.1}% (mean {:.1}%) over {n} reliable points, \
             correlation n/s {corr_n:.2}/{corr_s:.2}, oracle-geometry median {:.1}%, {elapsed:.1}s",
            100.0 * med_err,
            100.0 * mean_err,
            100.0 * med_oracle
        ),
    })
}

/// Exact contact-law round trip: with the true geometry, a noise-free
/// forward FOD and a consistent right-hand side, a homogeneous diagonal
/// stiffness is recovered everywhere.
fn criterion_10() -> Result<CriterionResult> {
    let start = Instant::now();
    let mesh = build_penny(1.0, 4)?;
    let m = med();
    let omega = 1.2;
    let colloc = interior_collocation(&mesh, 1)?;
    let tsys = assemble_t(&mesh, &colloc, &m, omega)?;
    let kn = Complex64::new(4.0, -0.8);
    let ks = Complex64::new(2.5, -0.4);
    let field = StiffnessField::normal_shear(&colloc, |_| (kn, ks))?;
    let wave = IncidentPlaneWave::p_wave(Vector3::new(0.5, 0.3, 0.81).normalize(), 1.0, omega)?;
    let sol = solve_forward(&mesh, &colloc, &tsys, &field, &[wave], &m)?;
    let fod = &sol.fods[0];
    // consistent right-hand side: the contact law applied exactly to the
    // forward FOD (K [u] at the collocation points)
    let sys_probe = build_system(
        StiffnessMode::Diagonal,
        &mesh,
        &colloc,
        fod,
        &faer::Col::zeros(3 * colloc.points.len()),
    )?;
    let mut rhs = faer::Col::<faer::c64>::zeros(3 * colloc.points.len());
    for c in 0..colloc.points.len() {
        let diag = [kn, ks, ks];
        for p in 0..3 {
            rhs[3 * c + p] = sys_probe.matrix[(3 * c + p, 3 * c + p)] * faer::c64::from(diag[p]);
        }
    }
    // rebuild with the consistent rhs (rotated internally to the local
    // frame by build_system only for the diagonal matrix, so rhs here is
    // already local-frame and matches the matrix layout)
    let sys = crate::stiffness::StiffnessSystem {
        mode: StiffnessMode::Diagonal,
        matrix: sys_probe.matrix.clone(),
        rhs,
        reliability: sys_probe.reliability.clone(),
        positions: sys_probe.positions.clone(),
        host_element: sys_probe.host_element.clone(),
    };
    let rec = solve_stiffness(&sys, 1e-10)?;
    let truth = [kn, ks, ks];
    let mut worst = 0.0f64;
    for (i, &ok) in rec.reliable.iter().enumerate() {
        if !ok {
            continue;
        }
        for p in 0..3 {
            worst = worst.max((rec.kappa[i][p] - truth[p]).norm() / truth[p].norm());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(CriterionResult {
        id: 10,
        name: "exact contact-law round trip",
        passed: worst <= 0.01,
        details: format!("worst recovered kappa error {:.2e}, {elapsed:.1}s", worst),
    })
}

/// Determinism: two seeded pipeline runs emit bit-identical artifacts.
fn criterion_11() -> Result<CriterionResult> {
    let start = Instant::now();
    let mut cfg = mini_config();
    // shrink to the fastest full-featured run: the determinism property is
    // configuration-independent
    cfg.geometry = crate::config::GeometryConfig::Penny {
        radius: 0.35,
        rings: 2,
    };
    cfg.grid = crate::config::GridConfig {
        n_theta: 4,
        n_phi: 4,
    };
    cfg.inversion.glsm_grid = [6, 6, 5];
    cfg.inversion.surface_n_s = 4;
    cfg.inversion.surface_n_t = 4;
    let opts = PipelineOptions::default();
    let a = full_pipeline(&cfg, &opts)?;
    let b = full_pipeline(&cfg, &opts)?;
    let base = std::env::temp_dir().join(format!("seisfrac-acceptance-{}", std::process::id()));
    let da = base.join("run-a");
    let db = base.join("run-b");
    std::fs::create_dir_all(&da)?;
    std::fs::create_dir_all(&db)?;
    write_artifacts(&da, &cfg, &a)?;
    write_artifacts(&db, &cfg, &b)?;
    let mut names: Vec<_> = std::fs::read_dir(&da)?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    let mut identical = true;
    for name in &names {
        let ba = std::fs::read(da.join(name))?;
        let bb = std::fs::read(db.join(name))?;
        if ba != bb {
            identical = false;
        }
    }
    let _ = std::fs::remove_dir_all(&base);
    let elapsed = start.elapsed().as_secs_f64();
    Ok(CriterionResult {
        id: 11,
        name: "seeded determinism",
        passed: identical && names.len() >= 7,
        details: format!(
            "{} artifacts compared bit-for-bit, {elapsed:.1}s",
            names.len()
        ),
    })
}
