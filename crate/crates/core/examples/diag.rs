//! Scratch diagnostic for the end-to-end stiffness chain (not shipped).

use faer::c64;
use seisfrac::config::ExperimentConfig;
use seisfrac::fod::{data_vector, recombine_sources, recombined_incident_traction, recover_fod};
use seisfrac::forward::assemble_t;
use seisfrac::mesh::FodVector;
use seisfrac::pipeline::{synthesize, truth_kappa_at};
use seisfrac::stiffness::{build_system, solve_stiffness, truncate_t, StiffnessMode};

fn solve_smoothed(
    mesh: &seisfrac::mesh::FractureMesh,
    colloc: &seisfrac::mesh::CollocationSet,
    sys: &seisfrac::stiffness::StiffnessSystem,
    delta: f64,
) -> seisfrac::Result<seisfrac::stiffness::RecoveredStiffness> {
    use faer::linalg::solvers::Solve;
    let nc = colloc.points.len();
    let n = 3 * nc;
    // weighted diagonal data term
    let mut d = vec![0.0f64; n];
    let mut b_re = faer::Mat::<f64>::zeros(n, 2);
    let mut a = vec![num_complex::Complex64::new(0.0, 0.0); n];
    for c in 0..nc {
        let w2 = sys.reliability[c] * sys.reliability[c];
        for p in 0..3 {
            let i = 3 * c + p;
            let ai = sys.matrix[(i, i)];
            a[i] = num_complex::Complex64::new(ai.re, ai.im);
            d[i] = w2 * ai.norm_sqr();
            let bi = a[i].conj() * num_complex::Complex64::new(sys.rhs[i].re, sys.rhs[i].im) * w2;
            b_re[(i, 0)] = bi.re;
            b_re[(i, 1)] = bi.im;
        }
    }
    // neighbor graph: collocation points hosted in node-sharing elements
    let mut node_elems: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_nodes()];
    for (e, el) in mesh.elements().iter().enumerate() {
        for &nd in el.nodes() {
            node_elems[nd].push(e);
        }
    }
    let mut adj: Vec<std::collections::HashSet<usize>> =
        vec![std::collections::HashSet::new(); mesh.n_elements()];
    for elems in &node_elems {
        for &e1 in elems {
            for &e2 in elems {
                adj[e1].insert(e2);
            }
        }
    }
    let mut elem_pts: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_elements()];
    for (c, cp) in colloc.points.iter().enumerate() {
        elem_pts[cp.element].push(c);
    }
    let mut r = faer::Mat::<f64>::zeros(n, n);
    for c in 0..nc {
        let e = colloc.points[c].element;
        for &e2 in &adj[e] {
            for &c2 in &elem_pts[e2] {
                if c2 <= c {
                    continue;
                }
                for p in 0..3 {
                    let (i, j) = (3 * c + p, 3 * c2 + p);
                    r[(i, i)] += 1.0;
                    r[(j, j)] += 1.0;
                    r[(i, j)] -= 1.0;
                    r[(j, i)] -= 1.0;
                }
            }
        }
    }
    let den: f64 = (0..nc)
        .map(|c| {
            let w2 = sys.reliability[c] * sys.reliability[c];
            (0..3).map(|p| w2 * sys.rhs[3 * c + p].norm_sqr()).sum::<f64>()
        })
        .sum();
    let scale = d.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let solve_at = |beta: f64| -> seisfrac::Result<(Vec<num_complex::Complex64>, f64)> {
        let mut nmat = faer::Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                nmat[(i, j)] = beta * r[(i, j)];
            }
            nmat[(i, i)] += d[i] + 1e-14 * scale;
        }
        let llt = nmat.llt(faer::Side::Lower).map_err(|_| {
            seisfrac::Error::Solver {
                reason: "smoothing normal system not positive definite".into(),
                cond: f64::NAN,
            }
        })?;
        let x = llt.solve(&b_re);
        let kappa: Vec<num_complex::Complex64> = (0..n)
            .map(|i| num_complex::Complex64::new(x[(i, 0)], x[(i, 1)]))
            .collect();
        let mut num = 0.0;
        for c in 0..nc {
            let w2 = sys.reliability[c] * sys.reliability[c];
            for p in 0..3 {
                let i = 3 * c + p;
                let rhs_i = num_complex::Complex64::new(sys.rhs[i].re, sys.rhs[i].im);
                num += w2 * (a[i] * kappa[i] - rhs_i).norm_sqr();
            }
        }
        Ok((kappa, (num / den.max(1e-300)).sqrt()))
    };
    let (mut lo, mut hi) = (1e-12 * scale, 1e6 * scale);
    let mut best = solve_at(lo)?;
    if best.1 < delta {
        for _ in 0..40 {
            let mid = (lo * hi).sqrt();
            let cur = solve_at(mid)?;
            if cur.1 < delta {
                lo = mid;
                best = cur;
            } else {
                hi = mid;
            }
        }
    }
    let kappa_v: Vec<nalgebra::Vector3<num_complex::Complex64>> = (0..nc)
        .map(|c| {
            nalgebra::Vector3::new(
                best.0[3 * c],
                best.0[3 * c + 1],
                best.0[3 * c + 2],
            )
        })
        .collect();
    Ok(seisfrac::stiffness::RecoveredStiffness {
        mode: seisfrac::stiffness::StiffnessMode::Diagonal,
        kappa: kappa_v,
        full: Vec::new(),
        reliability: sys.reliability.clone(),
        positions: sys.positions.clone(),
        reliable: sys
            .reliability
            .iter()
            .map(|&x| x >= seisfrac::stiffness::RELIABILITY_THRESHOLD)
            .collect(),
        beta: 0.0,
        achieved: best.1,
        fallback: false,
    })
}

fn main() -> seisfrac::Result<()> {
    let noise: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.0);
    let mut cfg = ExperimentConfig::preset("zebra-mini")?;
    cfg.noise.level = noise;
    let args: Vec<String> = std::env::args().collect();
    if let (Some(nt), Some(np)) = (
        args.get(2).and_then(|s| s.parse().ok()),
        args.get(3).and_then(|s| s.parse().ok()),
    ) {
        cfg.grid.n_theta = nt;
        cfg.grid.n_phi = np;
    }
    let synth = synthesize(&cfg)?;
    let surface = synth.mesh.clone();

    let system = seisfrac::fod::assemble_m(
        &surface,
        &synth.grid,
        &synth.medium,
        synth.omega,
        cfg.inversion.q_fraction,
    )?;
    let data: Vec<_> = synth.noisy.iter().map(data_vector).collect();
    let (weights, combined) = recombine_sources(&system, &data)?;
    let noise2: f64 = weights
        .iter()
        .zip(&data)
        .map(|(g, d)| g.norm_sqr() * (0..d.nrows()).map(|i| d[i].norm_sqr()).sum::<f64>())
        .sum();
    let combined_norm: f64 = (0..combined.nrows())
        .map(|i| combined[i].norm_sqr())
        .sum::<f64>()
        .sqrt();
    let delta_eff = (cfg.delta() * noise2.sqrt() / combined_norm.max(1e-300)).max(1e-12);
    println!("delta_eff = {delta_eff:.4}");
    let rec = recover_fod(&system, &combined, delta_eff)?;

    // truth combined FOD by linearity
    let mut truth = FodVector::zeros(surface.n_nodes());
    for (g, fod) in weights.iter().zip(&synth.fods) {
        for i in 0..surface.n_nodes() {
            truth.values[i] += fod.values[i] * *g;
        }
    }
    let mut diff = FodVector::zeros(surface.n_nodes());
    for i in 0..surface.n_nodes() {
        diff.values[i] = truth.values[i] - rec.fod.values[i];
    }
    println!(
        "fod: |truth|={:.3e} |rec|={:.3e} rel diff={:.3e} achieved={:.4} fallback={} q={} supp(truth)={:.3e}",
        truth.norm(),
        rec.fod.norm(),
        diff.norm() / truth.norm(),
        rec.achieved,
        rec.fallback,
        system.q,
        system.suppressed_energy_fraction(&truth),
    );

    let colloc = cfg.collocation(&surface)?;
    let tsys = assemble_t(&surface, &colloc, &synth.medium, synth.omega)?;
    let t_inc = recombined_incident_traction(&synth.waves, &weights, &colloc, &synth.medium)?;

    let mut cases: Vec<(String, &FodVector, f64, f64, bool)> = vec![
        (
            "truthFOD".into(),
            &truth,
            cfg.inversion.delta_trunc,
            cfg.delta(),
            false,
        ),
        (
            "recFOD".into(),
            &rec.fod,
            cfg.inversion.delta_trunc,
            cfg.delta(),
            false,
        ),
    ];
    for mdelta in [0.02, 0.05, 0.1, 0.2] {
        cases.push((
            format!("rec smooth d={mdelta}"),
            &rec.fod,
            0.03 * rec.fod.norm(),
            mdelta,
            true,
        ));
    }
    for (label, fod, dtrunc, mdelta, weighted) in cases {
        let trunc = truncate_t(&tsys, fod, dtrunc)?;
        let mut rhs = trunc.action.clone();
        for i in 0..rhs.nrows() {
            rhs[i] += t_inc[i];
        }
        let sys = build_system(StiffnessMode::Diagonal, &surface, &colloc, fod, &rhs)?;
        let recov = if weighted {
            solve_smoothed(&surface, &colloc, &sys, mdelta)?
        } else {
            solve_stiffness(&sys, mdelta)?
        };
        // exact contact-law rhs for comparison of the residual
        let mut resid = 0.0f64;
        let mut scale = 0.0f64;
        for c in 0..colloc.points.len() {
            let (kn, ks) = truth_kappa_at(&cfg, &recov.positions[c])?;
            let kd = [kn, ks, ks];
            for p in 0..3 {
                let want = sys.matrix[(3 * c + p, 3 * c + p)] * c64::from(kd[p]);
                resid += (sys.rhs[3 * c + p] - want).norm().powi(2);
                scale += want.norm().powi(2);
            }
        }
        let edge: std::collections::HashSet<usize> =
            surface.edge_nodes().iter().copied().collect();
        let mut interior_errs: Vec<f64> = Vec::new();
        let mut edge_errs: Vec<f64> = Vec::new();
        let mut boundary_errs: Vec<f64> = Vec::new();
        let mut tn = Vec::new();
        let mut rn = Vec::new();
        for (c, &ok) in recov.reliable.iter().enumerate() {
            if !ok || recov.reliability[c] < 0.1 {
                continue;
            }
            let hosted_edge = surface.elements()[colloc.points[c].element]
                .nodes()
                .iter()
                .any(|n| edge.contains(n));
            let (kn, ks) = truth_kappa_at(&cfg, &recov.positions[c])?;
            let e_n = (recov.kappa[c][0].re - kn.re).abs() / kn.re.abs();
            let e_s = (0.5 * (recov.kappa[c][1] + recov.kappa[c][2]).re - ks.re).abs() / ks.re.abs();
            let (_, tloc) = cfg.geometry.local_coords(&recov.positions[c]);
            let near_boundary = (tloc - 0.5).abs() < 0.07;
            if hosted_edge {
                edge_errs.push(0.5 * (e_n + e_s));
            } else if near_boundary {
                boundary_errs.push(0.5 * (e_n + e_s));
            } else {
                interior_errs.push(0.5 * (e_n + e_s));
                tn.push(kn.re);
                rn.push(recov.kappa[c][0].re);
            }
        }
        let stats = |errs: &mut Vec<f64>| -> String {
            errs.sort_by(f64::total_cmp);
            let n = errs.len();
            let rms = (errs.iter().map(|e| e * e).sum::<f64>() / (n.max(1) as f64)).sqrt();
            format!(
                "n={} median={:.3} p90={:.3} max={:.3} rms={:.3}",
                n,
                errs.get(n / 2).copied().unwrap_or(f64::NAN),
                errs.get(9 * n / 10).copied().unwrap_or(f64::NAN),
                errs.last().copied().unwrap_or(f64::NAN),
                rms
            )
        };
        let nn = tn.len() as f64;
        let (ma, mb) = (tn.iter().sum::<f64>() / nn, rn.iter().sum::<f64>() / nn);
        let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
        for (x, y) in tn.iter().zip(&rn) {
            num += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        println!(
            "{label}: rhs resid={:.3e}  interior[{}]  boundary[{}]  edge[{}]  corr_n={:.3}  modes={} attained={}",
            (resid / scale).sqrt(),
            stats(&mut interior_errs),
            stats(&mut boundary_errs),
            stats(&mut edge_errs),
            num / (va.sqrt() * vb.sqrt()).max(1e-300),
            trunc.n_modes,
            trunc.attained,
        );
    }

    // GLSM surface diagnosis
    let glsm = seisfrac::pipeline::reconstruct_geometry(&cfg, &synth)?;
    let cloud = |m: &seisfrac::mesh::FractureMesh| -> Vec<nalgebra::Vector3<f64>> {
        let mut pts = Vec::new();
        for el in 0..m.n_elements() {
            for q in m.quadrature(el) {
                pts.push(q.position);
            }
        }
        pts
    };
    let pa = cloud(&glsm.surface.mesh);
    let pb = cloud(&surface);
    let directed = |from: &[nalgebra::Vector3<f64>], to: &[nalgebra::Vector3<f64>]| -> f64 {
        from.iter()
            .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    let bbox = |pts: &[nalgebra::Vector3<f64>]| -> (nalgebra::Vector3<f64>, nalgebra::Vector3<f64>) {
        let mut lo = nalgebra::Vector3::repeat(f64::INFINITY);
        let mut hi = nalgebra::Vector3::repeat(f64::NEG_INFINITY);
        for p in pts {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    };
    let (rl, rh) = bbox(&pa);
    let (tl, th) = bbox(&pb);
    println!(
        "glsm: rec->true {:.3}  true->rec {:.3}  fit_rms={:.3e}",
        directed(&pa, &pb),
        directed(&pb, &pa),
        glsm.surface.fit_rms
    );
    println!(
        "  rec bbox  [{:.3} {:.3} {:.3}]..[{:.3} {:.3} {:.3}]",
        rl.x, rl.y, rl.z, rh.x, rh.y, rh.z
    );
    println!(
        "  true bbox [{:.3} {:.3} {:.3}]..[{:.3} {:.3} {:.3}]",
        tl.x, tl.y, tl.z, th.x, th.y, th.z
    );
    for tau in [0.5, 0.3, 0.2, 0.1, 0.05, 0.02] {
        let nsel = seisfrac::glsm::select_support(&glsm.map, tau).len();
        match seisfrac::glsm::extract_surface(
            &glsm.params,
            &glsm.map,
            tau,
            cfg.inversion.surface_n_s,
            cfg.inversion.surface_n_t,
        ) {
            Ok(ex) => {
                let pe = cloud(&ex.mesh);
                println!(
                    "  tau={tau:<5} sel={nsel:<5} rec->true {:.3}  true->rec {:.3}  fit_rms={:.2e}",
                    directed(&pe, &pb),
                    directed(&pb, &pe),
                    ex.fit_rms
                );
            }
            Err(e) => println!("  tau={tau:<5} sel={nsel:<5} error: {e}"),
        }
    }
    Ok(())
}
