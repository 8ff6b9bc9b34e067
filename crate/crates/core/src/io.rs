//! Plain-text persistence of the pipeline artifacts.
//!
//! All files are whitespace-separated text with a one-line typed header.
//! Floating-point values are written in Rust's shortest round-trip decimal
//! form, so `write -> read` reproduces every `f64` bit for bit and a
//! deterministic pipeline emits bit-identical files across runs.
//!
//! Formats:
//! - **Mesh** — `nds <N> els <M>`, then `N` node lines `x y z`, then `M`
//!   element lines `<n> <node indices...> <chart>` where the chart is one
//!   of `linear`, `bilinear`, `cylinder r th0 th1 v0 v1`, or
//!   `graph <origin> <e1> <e2> <n> <c00..c02> s0 s1 t0 t1` (the chart
//!   columns carry the exact parametric geometry that node indices alone
//!   cannot).
//! - **Far field** — `farfield grid <n_theta> <n_phi> omega <w>
//!   incidents <P>`, then per incident a marker line `incident <p>` and one
//!   record per direction, `theta phi Re(up1) Im(up1) .. Re(us3) Im(us3)`.
//!   Directions are canonically reconstructed from the grid header on
//!   read; the angle columns are human-readable labels, validated against
//!   the grid.
//! - **FOD** — `fod <N>`, then `node_index Re(u1) Im(u1) .. Re(u3) Im(u3)`
//!   followed by six derived local-frame columns (normal and two
//!   tangential components against the averaged nodal frame, for
//!   plotting); readers ignore the derived columns.
//! - **Indicator map** — `indicator <N>`, then `x y z value` lines.
//! - **Stiffness** — `stiffness <mode> <N> beta <b> achieved <a>
//!   fallback <0|1>`, then per point `point_index x y z` followed by the
//!   complex stiffness columns (`Re(k_n) Im(k_n) Re(k_s1) Im(k_s1)
//!   Re(k_s2) Im(k_s2)` in diagonal mode, the six symmetric parameters
//!   `K11 K22 K33 K12 K13 K23` as 12 columns in full mode) and the
//!   `reliability` column.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Vector3, U3};
use num_complex::Complex64;

use crate::forward::FarFieldDataset;
use crate::glsm::{transverse_frame, ObservationGrid};
use crate::kernels::FarFieldSample;
use crate::mesh::{Chart, Element, FodVector, FractureMesh, GraphFrame};
use crate::stiffness::{RecoveredStiffness, StiffnessMode, RELIABILITY_THRESHOLD};
use crate::{Error, Result};

/// Agreement required between stored direction labels and the canonical
/// grid directions.
const DIRECTION_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// line-oriented reader with positioned errors

struct Lines<'a> {
    path: &'a str,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(path: &'a str, text: &'a str) -> Self {
        Self {
            path,
            iter: text.lines().enumerate(),
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// Next non-empty line as (1-based line number, token list).
    fn tokens(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (idx, raw) in self.iter.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return Ok((idx + 1, line.split_whitespace().collect()));
        }
        Err(self.err(0, "unexpected end of file"))
    }
}

fn parse_f64(lines: &Lines, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| lines.err(line, format!("expected a number, got `{tok}`")))
}

fn parse_usize(lines: &Lines, line: usize, tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| lines.err(line, format!("expected an index, got `{tok}`")))
}

fn floats(lines: &Lines, line: usize, toks: &[&str]) -> Result<Vec<f64>> {
    toks.iter().map(|t| parse_f64(lines, line, t)).collect()
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------------------
// mesh

fn write_vec3(out: &mut String, v: &Vector3<f64>) {
    let _ = write!(out, " {} {} {}", v.x, v.y, v.z);
}

/// Serializes a mesh to the text format.
pub fn mesh_to_string(mesh: &FractureMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "nds {} els {}", mesh.n_nodes(), mesh.n_elements());
    for n in mesh.nodes() {
        let _ = writeln!(out, "{} {} {}", n.x, n.y, n.z);
    }
    for el in mesh.elements() {
        let _ = write!(out, "{}", el.nodes().len());
        for &i in el.nodes() {
            let _ = write!(out, " {i}");
        }
        match el.chart() {
            Chart::Linear => {
                let _ = write!(out, " linear");
            }
            Chart::Bilinear => {
                let _ = write!(out, " bilinear");
            }
            Chart::Cylinder { r, theta, axial } => {
                let _ = write!(
                    out,
                    " cylinder {} {} {} {} {}",
                    r, theta.0, theta.1, axial.0, axial.1
                );
            }
            Chart::Graph { frame, s, t } => {
                let _ = write!(out, " graph");
                write_vec3(&mut out, &frame.origin);
                write_vec3(&mut out, &frame.e1);
                write_vec3(&mut out, &frame.e2);
                write_vec3(&mut out, &frame.n);
                for c in frame.c {
                    let _ = write!(out, " {c}");
                }
                let _ = write!(out, " {} {} {} {}", s.0, s.1, t.0, t.1);
            }
        }
        let _ = writeln!(out);
    }
    out
}

pub fn write_mesh(path: &Path, mesh: &FractureMesh) -> Result<()> {
    std::fs::write(path, mesh_to_string(mesh))?;
    Ok(())
}

/// Parses a mesh from the text format.
pub fn mesh_from_str(text: &str, path: &str) -> Result<FractureMesh> {
    let mut lines = Lines::new(path, text);
    let (hl, head) = lines.tokens()?;
    if head.len() != 4 || head[0] != "nds" || head[2] != "els" {
        return Err(lines.err(hl, "expected header `nds <N> els <M>`"));
    }
    let n_nodes = parse_usize(&lines, hl, head[1])?;
    let n_els = parse_usize(&lines, hl, head[3])?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (ln, toks) = lines.tokens()?;
        if toks.len() != 3 {
            return Err(lines.err(ln, "node line must hold `x y z`"));
        }
        let v = floats(&lines, ln, &toks)?;
        nodes.push(Vector3::new(v[0], v[1], v[2]));
    }
    let mut elements = Vec::with_capacity(n_els);
    for _ in 0..n_els {
        let (ln, toks) = lines.tokens()?;
        let nn = parse_usize(&lines, ln, toks[0])?;
        if toks.len() < nn + 2 {
            return Err(lines.err(ln, "element line truncated"));
        }
        let idx: Vec<usize> = toks[1..=nn]
            .iter()
            .map(|t| parse_usize(&lines, ln, t))
            .collect::<Result<_>>()?;
        let tag = toks[nn + 1];
        let params = floats(&lines, ln, &toks[nn + 2..])?;
        let want = |n: usize| -> Result<()> {
            if params.len() != n {
                Err(lines.err(ln, format!("chart `{tag}` needs {n} parameters")))
            } else {
                Ok(())
            }
        };
        let chart = match tag {
            "linear" => {
                want(0)?;
                Chart::Linear
            }
            "bilinear" => {
                want(0)?;
                Chart::Bilinear
            }
            "cylinder" => {
                want(5)?;
                Chart::Cylinder {
                    r: params[0],
                    theta: (params[1], params[2]),
                    axial: (params[3], params[4]),
                }
            }
            "graph" => {
                want(22)?;
                let v = |k: usize| Vector3::new(params[k], params[k + 1], params[k + 2]);
                Chart::Graph {
                    frame: Arc::new(GraphFrame {
                        origin: v(0),
                        e1: v(3),
                        e2: v(6),
                        n: v(9),
                        c: [
                            params[12], params[13], params[14], params[15], params[16], params[17],
                        ],
                    }),
                    s: (params[18], params[19]),
                    t: (params[20], params[21]),
                }
            }
            other => return Err(lines.err(ln, format!("unknown chart `{other}`"))),
        };
        elements.push(Element::new(idx, chart).map_err(|e| lines.err(ln, e.to_string()))?);
    }
    FractureMesh::from_parts(nodes, elements)
}

pub fn read_mesh(path: &Path) -> Result<FractureMesh> {
    let text = std::fs::read_to_string(path)?;
    mesh_from_str(&text, &path_str(path))
}

// ---------------------------------------------------------------------------
// far-field records

/// Serializes far-field datasets recorded on a full-sphere grid.
pub fn farfield_to_string(
    n_theta: usize,
    n_phi: usize,
    datasets: &[FarFieldDataset],
) -> Result<String> {
    let grid = ObservationGrid::full_sphere(n_theta, n_phi)?;
    let omega = datasets
        .first()
        .ok_or_else(|| Error::Shape("no far-field datasets to write".into()))?
        .omega;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "farfield grid {} {} omega {} incidents {}",
        n_theta,
        n_phi,
        omega,
        datasets.len()
    );
    for (p, ds) in datasets.iter().enumerate() {
        if (ds.omega - omega).abs() > 0.0 {
            return Err(Error::Shape("datasets mix frequencies".into()));
        }
        if ds.samples.len() != grid.len() {
            return Err(Error::Shape(format!(
                "dataset {p} has {} samples for a {} grid",
                ds.samples.len(),
                grid.len()
            )));
        }
        let _ = writeln!(out, "incident {p}");
        for (s, d) in ds.samples.iter().zip(grid.directions()) {
            if (s.xi_hat - d).norm() > DIRECTION_TOL {
                return Err(Error::Shape(format!(
                    "dataset {p} is not sampled on the {n_theta} x {n_phi} grid"
                )));
            }
            let theta = s.xi_hat.z.clamp(-1.0, 1.0).acos();
            let phi = s.xi_hat.y.atan2(s.xi_hat.x);
            let _ = write!(out, "{theta} {phi}");
            for c in s.up.iter().chain(s.us.iter()) {
                let _ = write!(out, " {} {}", c.re, c.im);
            }
            let _ = writeln!(out);
        }
    }
    Ok(out)
}

pub fn write_farfield(
    path: &Path,
    n_theta: usize,
    n_phi: usize,
    datasets: &[FarFieldDataset],
) -> Result<()> {
    std::fs::write(path, farfield_to_string(n_theta, n_phi, datasets)?)?;
    Ok(())
}

/// Parses far-field datasets; returns the grid shape and the records.
pub fn farfield_from_str(text: &str, path: &str) -> Result<(usize, usize, Vec<FarFieldDataset>)> {
    let mut lines = Lines::new(path, text);
    let (hl, head) = lines.tokens()?;
    if head.len() != 8 || head[0] != "farfield" || head[1] != "grid" || head[4] != "omega" {
        return Err(lines.err(
            hl,
            "expected header `farfield grid <n_theta> <n_phi> omega <w> incidents <P>`",
        ));
    }
    let n_theta = parse_usize(&lines, hl, head[2])?;
    let n_phi = parse_usize(&lines, hl, head[3])?;
    let omega = parse_f64(&lines, hl, head[5])?;
    let n_inc = parse_usize(&lines, hl, head[7])?;
    let grid = ObservationGrid::full_sphere(n_theta, n_phi)?;
    let mut datasets = Vec::with_capacity(n_inc);
    for p in 0..n_inc {
        let (ml, mark) = lines.tokens()?;
        if mark.len() != 2 || mark[0] != "incident" || parse_usize(&lines, ml, mark[1])? != p {
            return Err(lines.err(ml, format!("expected marker `incident {p}`")));
        }
        let mut samples = Vec::with_capacity(grid.len());
        for d in grid.directions() {
            let (ln, toks) = lines.tokens()?;
            if toks.len() != 14 {
                return Err(lines.err(ln, "record must hold `theta phi` and 12 components"));
            }
            let v = floats(&lines, ln, &toks)?;
            let label = Vector3::new(
                v[0].sin() * v[1].cos(),
                v[0].sin() * v[1].sin(),
                v[0].cos(),
            );
            if (label - d).norm() > 1e-6 {
                return Err(lines.err(ln, "direction label disagrees with the grid header"));
            }
            let c = |k: usize| Complex64::new(v[2 + 2 * k], v[3 + 2 * k]);
            samples.push(FarFieldSample {
                xi_hat: *d,
                up: Vector3::new(c(0), c(1), c(2)),
                us: Vector3::new(c(3), c(4), c(5)),
            });
        }
        datasets.push(FarFieldDataset { omega, samples });
    }
    Ok((n_theta, n_phi, datasets))
}

pub fn read_farfield(path: &Path) -> Result<(usize, usize, Vec<FarFieldDataset>)> {
    let text = std::fs::read_to_string(path)?;
    farfield_from_str(&text, &path_str(path))
}

// ---------------------------------------------------------------------------
// FOD

/// Area-averaged orthonormal frame `(n, e1, e2)` at every mesh node.
pub fn nodal_frames(mesh: &FractureMesh) -> Vec<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    let mut acc = vec![Vector3::<f64>::zeros(); mesh.n_nodes()];
    for el in 0..mesh.n_elements() {
        let mut n_el = Vector3::zeros();
        for q in mesh.quadrature(el) {
            n_el += q.normal * q.weight;
        }
        for &nd in mesh.elements()[el].nodes() {
            acc[nd] += n_el;
        }
    }
    acc.into_iter()
        .map(|n| {
            let n = if n.norm() > 0.0 { n.normalize() } else { Vector3::z() };
            let (e1, e2) = transverse_frame(&n);
            (n, e1, e2)
        })
        .collect()
}

/// Serializes a nodal FOD; the trailing six columns are the local-frame
/// components for plotting and are ignored on read.
pub fn fod_to_string(mesh: &FractureMesh, fod: &FodVector) -> Result<String> {
    if fod.values.len() != mesh.n_nodes() {
        return Err(Error::Shape(format!(
            "FOD holds {} nodes, mesh has {}",
            fod.values.len(),
            mesh.n_nodes()
        )));
    }
    let frames = nodal_frames(mesh);
    let mut out = String::new();
    let _ = writeln!(out, "fod {}", fod.values.len());
    for (i, u) in fod.values.iter().enumerate() {
        let _ = write!(out, "{i}");
        for c in u.iter() {
            let _ = write!(out, " {} {}", c.re, c.im);
        }
        let (n, e1, e2) = &frames[i];
        for axis in [n, e1, e2] {
            let proj: Complex64 = u
                .iter()
                .zip(axis.iter())
                .map(|(c, a)| c * Complex64::new(*a, 0.0))
                .sum();
            let _ = write!(out, " {} {}", proj.re, proj.im);
        }
        let _ = writeln!(out);
    }
    Ok(out)
}

pub fn write_fod(path: &Path, mesh: &FractureMesh, fod: &FodVector) -> Result<()> {
    std::fs::write(path, fod_to_string(mesh, fod)?)?;
    Ok(())
}

pub fn fod_from_str(text: &str, path: &str) -> Result<FodVector> {
    let mut lines = Lines::new(path, text);
    let (hl, head) = lines.tokens()?;
    if head.len() != 2 || head[0] != "fod" {
        return Err(lines.err(hl, "expected header `fod <N>`"));
    }
    let n = parse_usize(&lines, hl, head[1])?;
    let mut fod = FodVector::zeros(n);
    for i in 0..n {
        let (ln, toks) = lines.tokens()?;
        if toks.len() < 7 {
            return Err(lines.err(ln, "FOD line must hold an index and 6 components"));
        }
        if parse_usize(&lines, ln, toks[0])? != i {
            return Err(lines.err(ln, format!("expected node index {i}")));
        }
        let v = floats(&lines, ln, &toks[1..7])?;
        fod.values[i] = nalgebra::OVector::<Complex64, U3>::new(
            Complex64::new(v[0], v[1]),
            Complex64::new(v[2], v[3]),
            Complex64::new(v[4], v[5]),
        );
    }
    Ok(fod)
}

pub fn read_fod(path: &Path) -> Result<FodVector> {
    let text = std::fs::read_to_string(path)?;
    fod_from_str(&text, &path_str(path))
}

// ---------------------------------------------------------------------------
// indicator map

pub fn indicator_to_string(points: &[Vector3<f64>], values: &[f64]) -> Result<String> {
    if points.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} sampling points for {} indicator values",
            points.len(),
            values.len()
        )));
    }
    let mut out = String::new();
    let _ = writeln!(out, "indicator {}", points.len());
    for (p, v) in points.iter().zip(values) {
        let _ = writeln!(out, "{} {} {} {}", p.x, p.y, p.z, v);
    }
    Ok(out)
}

pub fn write_indicator(path: &Path, points: &[Vector3<f64>], values: &[f64]) -> Result<()> {
    std::fs::write(path, indicator_to_string(points, values)?)?;
    Ok(())
}

pub fn indicator_from_str(text: &str, path: &str) -> Result<(Vec<Vector3<f64>>, Vec<f64>)> {
    let mut lines = Lines::new(path, text);
    let (hl, head) = lines.tokens()?;
    if head.len() != 2 || head[0] != "indicator" {
        return Err(lines.err(hl, "expected header `indicator <N>`"));
    }
    let n = parse_usize(&lines, hl, head[1])?;
    let mut points = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, toks) = lines.tokens()?;
        if toks.len() != 4 {
            return Err(lines.err(ln, "indicator line must hold `x y z value`"));
        }
        let v = floats(&lines, ln, &toks)?;
        points.push(Vector3::new(v[0], v[1], v[2]));
        values.push(v[3]);
    }
    Ok((points, values))
}

pub fn read_indicator(path: &Path) -> Result<(Vec<Vector3<f64>>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    indicator_from_str(&text, &path_str(path))
}

// ---------------------------------------------------------------------------
// recovered stiffness

pub fn stiffness_to_string(rec: &RecoveredStiffness) -> String {
    let (mode, n) = match rec.mode {
        StiffnessMode::Diagonal => ("diagonal", rec.kappa.len()),
        StiffnessMode::Full => ("full", rec.full.len()),
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "stiffness {} {} beta {} achieved {} fallback {}",
        mode,
        n,
        rec.beta,
        rec.achieved,
        u8::from(rec.fallback)
    );
    for i in 0..n {
        let p = &rec.positions[i];
        let _ = write!(out, "{i} {} {} {}", p.x, p.y, p.z);
        match rec.mode {
            StiffnessMode::Diagonal => {
                for k in rec.kappa[i].iter() {
                    let _ = write!(out, " {} {}", k.re, k.im);
                }
            }
            StiffnessMode::Full => {
                for k in &rec.full[i] {
                    let _ = write!(out, " {} {}", k.re, k.im);
                }
            }
        }
        let _ = writeln!(out, " {}", rec.reliability[i]);
    }
    out
}

pub fn write_stiffness(path: &Path, rec: &RecoveredStiffness) -> Result<()> {
    std::fs::write(path, stiffness_to_string(rec))?;
    Ok(())
}

pub fn stiffness_from_str(text: &str, path: &str) -> Result<RecoveredStiffness> {
    let mut lines = Lines::new(path, text);
    let (hl, head) = lines.tokens()?;
    if head.len() != 9
        || head[0] != "stiffness"
        || head[3] != "beta"
        || head[5] != "achieved"
        || head[7] != "fallback"
    {
        return Err(lines.err(
            hl,
            "expected header `stiffness <mode> <N> beta <b> achieved <a> fallback <0|1>`",
        ));
    }
    let mode = match head[1] {
        "diagonal" => StiffnessMode::Diagonal,
        "full" => StiffnessMode::Full,
        other => return Err(lines.err(hl, format!("unknown stiffness mode `{other}`"))),
    };
    let n = parse_usize(&lines, hl, head[2])?;
    let beta = parse_f64(&lines, hl, head[4])?;
    let achieved = parse_f64(&lines, hl, head[6])?;
    let fallback = match head[8] {
        "0" => false,
        "1" => true,
        other => return Err(lines.err(hl, format!("fallback flag must be 0 or 1, got `{other}`"))),
    };
    let ncomp = match mode {
        StiffnessMode::Diagonal => 3,
        StiffnessMode::Full => 6,
    };
    let mut kappa = Vec::new();
    let mut full = Vec::new();
    let mut positions = Vec::with_capacity(n);
    let mut reliability = Vec::with_capacity(n);
    for i in 0..n {
        let (ln, toks) = lines.tokens()?;
        if toks.len() != 5 + 2 * ncomp {
            return Err(lines.err(ln, format!("stiffness line must hold {} columns", 5 + 2 * ncomp)));
        }
        if parse_usize(&lines, ln, toks[0])? != i {
            return Err(lines.err(ln, format!("expected point index {i}")));
        }
        let v = floats(&lines, ln, &toks[1..])?;
        positions.push(Vector3::new(v[0], v[1], v[2]));
        let c = |k: usize| Complex64::new(v[3 + 2 * k], v[4 + 2 * k]);
        match mode {
            StiffnessMode::Diagonal => kappa.push(Vector3::new(c(0), c(1), c(2))),
            StiffnessMode::Full => full.push([c(0), c(1), c(2), c(3), c(4), c(5)]),
        }
        reliability.push(v[3 + 2 * ncomp]);
    }
    let reliable = reliability
        .iter()
        .map(|&r| r >= RELIABILITY_THRESHOLD)
        .collect();
    Ok(RecoveredStiffness {
        mode,
        kappa,
        full,
        reliability,
        positions,
        reliable,
        beta,
        achieved,
        fallback,
    })
}

pub fn read_stiffness(path: &Path) -> Result<RecoveredStiffness> {
    let text = std::fs::read_to_string(path)?;
    stiffness_from_str(&text, &path_str(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cylindrical_patch, build_graph_patch, build_penny};

    fn mesh_geometry_equal(a: &FractureMesh, b: &FractureMesh) {
        assert_eq!(a.n_nodes(), b.n_nodes());
        assert_eq!(a.n_elements(), b.n_elements());
        for (na, nb) in a.nodes().iter().zip(b.nodes()) {
            assert_eq!(na, nb);
        }
        for el in 0..a.n_elements() {
            assert_eq!(a.elements()[el].nodes(), b.elements()[el].nodes());
            for &(u, v) in &[(0.1, 0.2), (0.3, 0.5)] {
                let ga = a.element_geometry(el, u, v);
                let gb = b.element_geometry(el, u, v);
                assert_eq!(ga.position, gb.position, "element {el} position");
                assert_eq!(ga.normal, gb.normal, "element {el} normal");
            }
        }
    }

    #[test]
    fn mesh_round_trip_exact_for_all_chart_kinds() {
        let cyl = build_cylindrical_patch(0.7, 0.55, 0.35, 4, 5).unwrap();
        let penny = build_penny(1.0, 3).unwrap();
        let frame = GraphFrame {
            origin: Vector3::new(0.1, -0.2, 0.3),
            e1: Vector3::x(),
            e2: Vector3::y(),
            n: Vector3::z(),
            c: [0.05, 0.01, -0.02, 0.2, -0.1, 0.15],
        };
        let graph = build_graph_patch(frame, (-0.4, 0.5), (-0.3, 0.3), 3, 2).unwrap();
        for mesh in [&cyl, &penny, &graph] {
            let text = mesh_to_string(mesh);
            let back = mesh_from_str(&text, "mem").unwrap();
            mesh_geometry_equal(mesh, &back);
            // a second write is byte-identical
            assert_eq!(text, mesh_to_string(&back));
        }
    }

    #[test]
    fn farfield_round_trip_exact() {
        let grid = ObservationGrid::full_sphere(4, 3).unwrap();
        // synthetic transverse-structured samples with awkward values
        let mk = |scale: f64| FarFieldDataset {
            omega: 2.5,
            samples: grid
                .directions()
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let (e1, _) = transverse_frame(d);
                    FarFieldSample {
                        xi_hat: *d,
                        up: crate::kernels::cvec(d) * Complex64::new(scale * (i as f64 + 0.1).sin(), -0.3),
                        us: crate::kernels::cvec(&e1) * Complex64::new(0.7, scale / (i as f64 + 1.0)),
                    }
                })
                .collect(),
        };
        let data = vec![mk(1.0), mk(-2.7)];
        let text = farfield_to_string(4, 3, &data).unwrap();
        let (nt, np, back) = farfield_from_str(&text, "mem").unwrap();
        assert_eq!((nt, np), (4, 3));
        assert_eq!(back.len(), 2);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.omega, b.omega);
            for (sa, sb) in a.samples.iter().zip(&b.samples) {
                assert_eq!(sa.xi_hat, sb.xi_hat);
                assert_eq!(sa.up, sb.up);
                assert_eq!(sa.us, sb.us);
            }
        }
        assert_eq!(text, farfield_to_string(4, 3, &back).unwrap());
    }

    #[test]
    fn farfield_rejects_off_grid_samples() {
        let grid = ObservationGrid::full_sphere(3, 4).unwrap();
        let mut ds = FarFieldDataset {
            omega: 1.0,
            samples: grid
                .directions()
                .iter()
                .map(|d| FarFieldSample {
                    xi_hat: *d,
                    up: Vector3::zeros(),
                    us: Vector3::zeros(),
                })
                .collect(),
        };
        ds.samples[2].xi_hat = Vector3::z();
        assert!(farfield_to_string(3, 4, &[ds]).is_err());
    }

    #[test]
    fn fod_round_trip_exact() {
        let mesh = build_penny(0.8, 2).unwrap();
        let mut fod = FodVector::zeros(mesh.n_nodes());
        for (i, v) in fod.values.iter_mut().enumerate() {
            let x = i as f64;
            *v = nalgebra::OVector::<Complex64, U3>::new(
                Complex64::new((x * 0.37).sin(), -x / 7.0),
                Complex64::new(0.0, x.sqrt()),
                Complex64::new(1.0 / (x + 1.0), 0.0),
            );
        }
        let text = fod_to_string(&mesh, &fod).unwrap();
        let back = fod_from_str(&text, "mem").unwrap();
        assert_eq!(fod.values.len(), back.values.len());
        for (a, b) in fod.values.iter().zip(&back.values) {
            assert_eq!(a, b);
        }
        assert_eq!(text, fod_to_string(&mesh, &back).unwrap());
    }

    #[test]
    fn indicator_round_trip_exact() {
        let points = vec![
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::new(-1.0, 0.5, 2.0e-13),
        ];
        let values = vec![3.14159, 1.0 / 3.0];
        let text = indicator_to_string(&points, &values).unwrap();
        let (p2, v2) = indicator_from_str(&text, "mem").unwrap();
        assert_eq!(points, p2);
        assert_eq!(values, v2);
        assert_eq!(text, indicator_to_string(&p2, &v2).unwrap());
    }

    #[test]
    fn stiffness_round_trip_exact_both_modes() {
        let diag = RecoveredStiffness {
            mode: StiffnessMode::Diagonal,
            kappa: vec![
                Vector3::new(
                    Complex64::new(8.0, -1.6),
                    Complex64::new(5.0, -1.0),
                    Complex64::new(5.0, -0.999_999_999),
                ),
                Vector3::new(
                    Complex64::new(2.0e-8, 0.0),
                    Complex64::new(0.0, -0.4),
                    Complex64::new(1.25, -0.25),
                ),
            ],
            full: Vec::new(),
            reliability: vec![0.9, 0.01],
            positions: vec![Vector3::new(0.0, 0.1, 0.35), Vector3::new(0.2, -0.3, 0.3)],
            reliable: vec![true, false],
            beta: 1.7e-3,
            achieved: 0.0502,
            fallback: false,
        };
        let full = RecoveredStiffness {
            mode: StiffnessMode::Full,
            kappa: Vec::new(),
            full: vec![[
                Complex64::new(1.0, -0.1),
                Complex64::new(2.0, -0.2),
                Complex64::new(3.0, -0.3),
                Complex64::new(0.1, 0.0),
                Complex64::new(0.0, -0.05),
                Complex64::new(-0.2, 0.0),
            ]],
            reliability: vec![0.5],
            positions: vec![Vector3::new(1.0, 2.0, 3.0)],
            reliable: vec![true],
            beta: 0.0,
            achieved: 1.0,
            fallback: true,
        };
        for rec in [&diag, &full] {
            let text = stiffness_to_string(rec);
            let back = stiffness_from_str(&text, "mem").unwrap();
            assert_eq!(back.kappa, rec.kappa);
            assert_eq!(back.full, rec.full);
            assert_eq!(back.reliability, rec.reliability);
            assert_eq!(back.positions, rec.positions);
            assert_eq!(back.reliable, rec.reliable);
            assert_eq!(back.beta, rec.beta);
            assert_eq!(back.achieved, rec.achieved);
            assert_eq!(back.fallback, rec.fallback);
            assert_eq!(text, stiffness_to_string(&back));
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = mesh_from_str("nds 1 els 0\n0.0 bad 0.0\n", "m.txt").unwrap_err();
        match err {
            Error::Parse { path, line, msg } => {
                assert_eq!(path, "m.txt");
                assert_eq!(line, 2);
                assert!(msg.contains("bad"));
            }
            other => panic!("expected parse error, got {other}"),
        }
        assert!(fod_from_str("fod 2\n0 0 0 0 0 0 0\n", "f.txt").is_err());
        assert!(indicator_from_str("indicator 1\n1 2 3\n", "i.txt").is_err());
    }

    #[test]
    fn nodal_frames_are_orthonormal_and_outward() {
        let mesh = build_cylindrical_patch(0.7, 0.55, 0.35, 4, 4).unwrap();
        for (i, (n, e1, e2)) in nodal_frames(&mesh).iter().enumerate() {
            assert!((n.norm() - 1.0).abs() < 1e-12);
            assert!(n.dot(e1).abs() < 1e-12);
            assert!(n.dot(e2).abs() < 1e-12);
            assert!(e1.dot(e2).abs() < 1e-12);
            // outward radial normal on the cylinder (averaged over the
            // adjacent elements, so corners lag the pointwise radial
            // direction by up to half an element)
            let radial = Vector3::new(mesh.nodes()[i].x, 0.0, mesh.nodes()[i].z).normalize();
            assert!(n.dot(&radial) > 0.95, "node {i}: {}", n.dot(&radial));
        }
    }
}
