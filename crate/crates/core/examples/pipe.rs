//! Scratch diagnostic for the end-to-end pipeline on the reconstructed
//! surface.

use seisfrac::config::ExperimentConfig;
use seisfrac::forward::assemble_t;
use seisfrac::fod::recombined_incident_traction;
use seisfrac::pipeline::{full_pipeline, truth_kappa_at, PipelineOptions, PipelineResult};
use seisfrac::stiffness::{build_system, solve_stiffness, truncate_t, StiffnessMode};

fn band_stats(
    cfg: &ExperimentConfig,
    surface: &seisfrac::mesh::FractureMesh,
    rec: &seisfrac::stiffness::RecoveredStiffness,
    label: &str,
) {
    // t-intervals of surface elements that straddle the stripe boundary
    let mut excluded: Vec<(f64, f64)> = Vec::new();
    for el in surface.elements() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &nd in el.nodes() {
            let (_, t) = cfg.geometry.local_coords(&surface.nodes()[nd]);
            lo = lo.min(t);
            hi = hi.max(t);
        }
        if lo < 0.5 && 0.5 < hi {
            excluded.push((lo, hi));
        }
    }
    let mut en_all = Vec::new();
    let mut es_all = Vec::new();
    let mut tn = Vec::new();
    let mut rn = Vec::new();
    for (i, &rel) in rec.reliability.iter().enumerate() {
        if rel < 0.1 {
            continue;
        }
        let (_, t) = cfg.geometry.local_coords(&rec.positions[i]);
        if excluded.iter().any(|&(lo, hi)| (lo..=hi).contains(&t)) {
            continue;
        }
        let (kn, ks) = truth_kappa_at(cfg, &rec.positions[i]).unwrap();
        let khat = &rec.kappa[i];
        let ks_hat = 0.5 * (khat[1] + khat[2]);
        en_all.push((khat[0].re - kn.re).abs() / kn.re.abs());
        es_all.push((ks_hat.re - ks.re).abs() / ks.re.abs());
        tn.push(kn.re);
        rn.push(khat[0].re);
    }
    // stripe-level recovered medians vs truth levels
    let mut lo_n = Vec::new();
    let mut hi_n = Vec::new();
    let mut lo_s = Vec::new();
    let mut hi_s = Vec::new();
    for (i, &rel) in rec.reliability.iter().enumerate() {
        if rel < 0.1 {
            continue;
        }
        let (_, t) = cfg.geometry.local_coords(&rec.positions[i]);
        let khat = &rec.kappa[i];
        let ks_hat = 0.5 * (khat[1] + khat[2]).re;
        if t < 0.45 {
            lo_n.push(khat[0].re);
            lo_s.push(ks_hat);
        } else if t > 0.55 {
            hi_n.push(khat[0].re);
            hi_s.push(ks_hat);
        }
    }
    for v in [&mut lo_n, &mut hi_n, &mut lo_s, &mut hi_s] {
        v.sort_by(f64::total_cmp);
    }
    println!(
        "  stripe medians: kn {:.2}|{:.2} (truth 8|2)  ks {:.2}|{:.2} (truth 5|1.25)",
        lo_n[lo_n.len() / 2],
        hi_n[hi_n.len() / 2],
        lo_s[lo_s.len() / 2],
        hi_s[hi_s.len() / 2]
    );
    en_all.sort_by(f64::total_cmp);
    es_all.sort_by(f64::total_cmp);
    let n = en_all.len();
    let mn = tn.iter().sum::<f64>() / n as f64;
    let mr = rn.iter().sum::<f64>() / n as f64;
    let (mut cn, mut vn, mut vr) = (0.0, 0.0, 0.0);
    for i in 0..n {
        cn += (tn[i] - mn) * (rn[i] - mr);
        vn += (tn[i] - mn).powi(2);
        vr += (rn[i] - mr).powi(2);
    }
    println!(
        "{label}: n={n}  e_n med={:.3} p90={:.3}  e_s med={:.3} p90={:.3}  corr_n={:.3}",
        en_all[n / 2],
        en_all[9 * n / 10],
        es_all[n / 2],
        es_all[9 * n / 10],
        cn / (vn * vr).sqrt()
    );
}

fn delta_sweep(
    cfg: &ExperimentConfig,
    synth: &seisfrac::pipeline::SynthStage,
    surface: &seisfrac::mesh::FractureMesh,
    fod: &seisfrac::pipeline::FodStage,
) -> seisfrac::Result<()> {
    let colloc = cfg.collocation(surface)?;
    let tsys = assemble_t(surface, &colloc, &synth.medium, synth.omega)?;
    let trunc = truncate_t(&tsys, &fod.fod, cfg.inversion.delta_trunc)?;
    let t_inc =
        recombined_incident_traction(&synth.waves, &fod.weights, &colloc, &synth.medium)?;
    let mut rhs = trunc.action.clone();
    for i in 0..rhs.nrows() {
        rhs[i] += t_inc[i];
    }
    let sys = build_system(StiffnessMode::Diagonal, surface, &colloc, &fod.fod, &rhs)?;
    for delta in [0.05, 0.1, 0.2, 0.3, 0.5] {
        let rec = solve_stiffness(&sys, delta)?;
        band_stats(cfg, surface, &rec, &format!("delta={delta}"));
    }
    Ok(())
}

fn main() -> seisfrac::Result<()> {
    let mut cfg = ExperimentConfig::preset("zebra-mini")?;
    let args: Vec<String> = std::env::args().collect();
    if args.len() > 1 {
        let g: usize = args[1].parse().unwrap();
        cfg.inversion.glsm_grid = [g, g, g];
    }
    if args.len() > 3 {
        cfg.inversion.surface_n_s = args[2].parse().unwrap();
        cfg.inversion.surface_n_t = args[3].parse().unwrap();
    }
    if args.len() > 4 {
        cfg.inversion.tau = args[4].parse().unwrap();
    }
    let res = full_pipeline(&cfg, &PipelineOptions { geometry_oracle: false })?;
    let rep = &res.report;
    println!(
        "surface: nodes={} elems={} fit_rms={:?}",
        res.surface.n_nodes(),
        res.surface.n_elements(),
        rep.glsm.as_ref().map(|g| g.surface_fit_rms)
    );
    println!(
        "glsm: support={:?} indicator_max={:?}",
        rep.glsm.as_ref().map(|g| g.support_size),
        rep.glsm.as_ref().map(|g| g.indicator_max)
    );
    println!(
        "fod: q={} free={} sigma_ratio={:.2e} beta={:.3e} achieved={:.4} fallback={} supp_frac={:.3e}",
        rep.fod.q,
        rep.fod.n_free_nodes,
        rep.fod.sigma_ratio,
        rep.fod.beta,
        rep.fod.achieved,
        rep.fod.fallback,
        rep.fod.suppressed_energy_fraction
    );
    let rec = &res.stiffness.recovered;
    // stratify errors by width coordinate band
    let mut rows: Vec<(f64, f64, f64, f64, f64)> = Vec::new();
    for (i, &rel) in rec.reliability.iter().enumerate() {
        if rel < 0.1 {
            continue;
        }
        let (s, t) = cfg.geometry.local_coords(&rec.positions[i]);
        let (kn, ks) = truth_kappa_at(&cfg, &rec.positions[i])?;
        let khat = &rec.kappa[i];
        let ks_hat = 0.5 * (khat[1] + khat[2]);
        let e_n = (khat[0].re - kn.re).abs() / kn.re.abs();
        let e_s = (ks_hat.re - ks.re).abs() / ks.re.abs();
        rows.push((s, t, e_n, e_s, rel));
    }
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));
    println!("n scored = {}", rows.len());
    for band in 0..10 {
        let (lo, hi) = (band as f64 * 0.1, (band + 1) as f64 * 0.1);
        let sel: Vec<_> = rows.iter().filter(|r| r.1 >= lo && r.1 < hi).collect();
        if sel.is_empty() {
            continue;
        }
        let mut en: Vec<f64> = sel.iter().map(|r| r.2).collect();
        let mut es: Vec<f64> = sel.iter().map(|r| r.3).collect();
        en.sort_by(f64::total_cmp);
        es.sort_by(f64::total_cmp);
        println!(
            "t in [{lo:.1},{hi:.1}): n={:3}  e_n med={:.3} max={:.3}  e_s med={:.3} max={:.3}",
            sel.len(),
            en[en.len() / 2],
            en[en.len() - 1],
            es[es.len() / 2],
            es[es.len() - 1]
        );
    }
    // sample a few points with raw values
    for r in rows.iter().step_by(rows.len() / 12 + 1) {
        println!("  s={:.2} t={:.2} e_n={:.3} e_s={:.3} rel={:.2}", r.0, r.1, r.2, r.3, r.4);
    }
    delta_sweep(&cfg, &res.synth, &res.surface, &res.fod)?;

    if let Some(g) = &res.glsm {
        let f = &g.surface.frame;
        println!(
            "fitted frame: origin=({:.3},{:.3},{:.3}) n=({:.3},{:.3},{:.3}) e1=({:.3},{:.3},{:.3})",
            f.origin.x, f.origin.y, f.origin.z, f.n.x, f.n.y, f.n.z, f.e1.x, f.e1.y, f.e1.z
        );
        println!("  c = {:?}", f.c);
        let mut bb_lo = nalgebra::Vector3::repeat(f64::INFINITY);
        let mut bb_hi = nalgebra::Vector3::repeat(f64::NEG_INFINITY);
        for nd in res.surface.nodes() {
            bb_lo = bb_lo.inf(nd);
            bb_hi = bb_hi.sup(nd);
        }
        println!("  surface bbox {:.3?} .. {:.3?}", bb_lo, bb_hi);
        println!("  ideal: origin z=0.35 n=z c20=-1.429, s in ±0.247, t in ±0.35");
    }

    // ideal quadric: osculating parabola of the true cylinder
    let radius: f64 = 0.35;
    let half_angle: f64 = 0.55 / (2.0 * radius);
    let s_half = radius * half_angle.sin();
    let frame = seisfrac::mesh::GraphFrame {
        origin: nalgebra::Vector3::new(0.0, 0.0, radius),
        e1: nalgebra::Vector3::x(),
        e2: nalgebra::Vector3::y(),
        n: nalgebra::Vector3::z(),
        c: [0.0, 0.0, 0.0, -1.0 / (2.0 * radius), 0.0, 0.0],
    };
    let patch = seisfrac::mesh::build_graph_patch(
        frame,
        (-s_half, s_half),
        (-0.35, 0.35),
        cfg.inversion.surface_n_s,
        cfg.inversion.surface_n_t,
    )?;
    let fod2 = seisfrac::pipeline::recover_opening(&cfg, &res.synth, &patch)?;
    println!(
        "ideal quadric: q={} free={} achieved={:.4} beta={:.3e}",
        fod2.system.q,
        fod2.system.free_nodes.len(),
        fod2.achieved,
        fod2.beta
    );
    delta_sweep(&cfg, &res.synth, &patch, &fod2)?;

    // sensitivity of the data misfit to small shape perturbations
    for (dz, dcurv, dext) in [
        (0.005, 0.0, 0.0),
        (0.013, 0.0, 0.0),
        (0.0, -0.07, 0.0),
        (0.0, 0.0, 0.05),
        (0.013, -0.07, 0.05),
    ] {
        let frame = seisfrac::mesh::GraphFrame {
            origin: nalgebra::Vector3::new(0.0, 0.0, radius),
            e1: nalgebra::Vector3::x(),
            e2: nalgebra::Vector3::y(),
            n: nalgebra::Vector3::z(),
            c: [dz, 0.0, 0.0, -1.0 / (2.0 * radius) + dcurv, 0.0, 0.0],
        };
        let sh = s_half * (1.0 + dext);
        let th = 0.35 * (1.0 + dext);
        let patch = seisfrac::mesh::build_graph_patch(
            frame,
            (-sh, sh),
            (-th, th),
            cfg.inversion.surface_n_s,
            cfg.inversion.surface_n_t,
        )?;
        let f = seisfrac::pipeline::recover_opening(&cfg, &res.synth, &patch)?;
        println!("perturb dz={dz} dcurv={dcurv} dext={dext}: achieved={:.4}", f.achieved);
        delta_sweep(&cfg, &res.synth, &patch, &f)?;
    }

    // prototype: offset refinement of the fitted surface by misfit scan
    if let Some(g) = &res.glsm {
        let frame = &g.surface.frame;
        let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for nd in res.surface.nodes() {
            let d = nd - frame.origin;
            let s = d.dot(&frame.e1);
            let t = d.dot(&frame.e2);
            smin = smin.min(s);
            smax = smax.max(s);
            tmin = tmin.min(t);
            tmax = tmax.max(t);
        }
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..13 {
            let dz = -0.06 + 0.01 * k as f64;
            let mut fr = frame.clone();
            fr.c[0] += dz;
            let patch = seisfrac::mesh::build_graph_patch(
                fr,
                (smin, smax),
                (tmin, tmax),
                cfg.inversion.surface_n_s,
                cfg.inversion.surface_n_t,
            )?;
            let f = seisfrac::pipeline::recover_opening(&cfg, &res.synth, &patch)?;
            println!("refine dz={dz:+.3}: achieved={:.4}", f.achieved);
            if f.achieved < best.0 {
                best = (f.achieved, dz);
            }
        }
        println!("best dz={:+.3} achieved={:.4}", best.1, best.0);
        // golden-section refinement around the coarse minimum
        let eval = |dz: f64| -> seisfrac::Result<f64> {
            let mut fr = frame.clone();
            fr.c[0] += dz;
            let patch = seisfrac::mesh::build_graph_patch(
                fr,
                (smin, smax),
                (tmin, tmax),
                cfg.inversion.surface_n_s,
                cfg.inversion.surface_n_t,
            )?;
            Ok(seisfrac::pipeline::recover_opening(&cfg, &res.synth, &patch)?.achieved)
        };
        let phi = 0.5 * (5.0f64.sqrt() - 1.0);
        let (mut a, mut b) = (best.1 - 0.01, best.1 + 0.01);
        let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
        let (mut f1, mut f2) = (eval(x1)?, eval(x2)?);
        for _ in 0..12 {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - phi * (b - a);
                f1 = eval(x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + phi * (b - a);
                f2 = eval(x2)?;
            }
        }
        best.1 = if f1 <= f2 { x1 } else { x2 };
        best.0 = f1.min(f2);
        println!("golden best dz={:+.4} achieved={:.4}", best.1, best.0);
        let mut fr = frame.clone();
        fr.c[0] += best.1;
        let patch = seisfrac::mesh::build_graph_patch(
            fr,
            (smin, smax),
            (tmin, tmax),
            cfg.inversion.surface_n_s,
            cfg.inversion.surface_n_t,
        )?;
        let f = seisfrac::pipeline::recover_opening(&cfg, &res.synth, &patch)?;
        delta_sweep(&cfg, &res.synth, &patch, &f)?;
    }
    Ok(())
}
