//! Parametric fracture surfaces and their boundary-element discretization.
//!
//! A [`FractureMesh`] couples a C0 nodal interpolation (bilinear on
//! quadrilaterals, linear on triangles) with an exact per-element geometry
//! chart, so developable surfaces keep machine-precision areas and normals
//! while the opening-displacement field stays a plain nodal vector. Local
//! frames follow the convention `e1` = normalized surface u-tangent,
//! `e2 = n x e1`, so `(n, e1, e2)` is orthonormal and right-handed at every
//! evaluation point.
//!
//! Meshes are immutable after construction; all queries are reentrant.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use num_complex::Complex64;

use crate::kernels::Tensor3;
use crate::{Error, Result};

/// Reference parameter domain of an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamDomain {
    /// `(u, v)` in `[-1, 1]^2`.
    Square,
    /// `u, v >= 0`, `u + v <= 1`.
    Triangle,
}

/// Quadratic height-function frame: the surface is the graph
/// `x(s, t) = origin + s e1 + t e2 + h(s, t) n` with
/// `h = c00 + c10 s + c01 t + c20 s^2 + c11 s t + c02 t^2`.
#[derive(Debug, Clone)]
pub struct GraphFrame {
    pub origin: Vector3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub n: Vector3<f64>,
    /// Height coefficients `[c00, c10, c01, c20, c11, c02]`.
    pub c: [f64; 6],
}

impl GraphFrame {
    /// Height and its two in-plane derivatives at `(s, t)`.
    pub fn height(&self, s: f64, t: f64) -> (f64, f64, f64) {
        let [c00, c10, c01, c20, c11, c02] = self.c;
        let h = c00 + c10 * s + c01 * t + c20 * s * s + c11 * s * t + c02 * t * t;
        let hs = c10 + 2.0 * c20 * s + c11 * t;
        let ht = c01 + c11 * s + 2.0 * c02 * t;
        (h, hs, ht)
    }

    pub fn position(&self, s: f64, t: f64) -> Vector3<f64> {
        let (h, _, _) = self.height(s, t);
        self.origin + self.e1 * s + self.e2 * t + self.n * h
    }
}

/// Per-element geometry map. `Bilinear`/`Linear` take the geometry from the
/// element's own nodes; the parametric charts are exact.
#[derive(Debug, Clone)]
pub enum Chart {
    Bilinear,
    Linear,
    /// Cylindrical sector `(r sin th, v, r cos th)`; `u` spans `theta`,
    /// `v` spans the axial range. Outward radial normal.
    Cylinder {
        r: f64,
        theta: (f64, f64),
        axial: (f64, f64),
    },
    /// Sub-rectangle of a quadratic height-function graph; `u` spans `s`,
    /// `v` spans `t`. Normal points along the frame normal.
    Graph {
        frame: Arc<GraphFrame>,
        s: (f64, f64),
        t: (f64, f64),
    },
}

/// Mesh element: 3 or 4 node indices (counterclockwise about the element
/// normal) plus a geometry chart.
#[derive(Debug, Clone)]
pub struct Element {
    nodes: Vec<usize>,
    chart: Chart,
}

impl Element {
    pub fn new(nodes: Vec<usize>, chart: Chart) -> Result<Self> {
        match (nodes.len(), &chart) {
            (4, Chart::Bilinear | Chart::Cylinder { .. } | Chart::Graph { .. }) => {}
            (3, Chart::Linear) => {}
            (n, _) => {
                return Err(Error::Geometry(format!(
                    "element with {n} nodes does not match its chart"
                )))
            }
        }
        Ok(Self { nodes, chart })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn domain(&self) -> ParamDomain {
        if self.nodes.len() == 3 {
            ParamDomain::Triangle
        } else {
            ParamDomain::Square
        }
    }

    /// Nodal shape functions and parameter derivatives at `(u, v)`.
    ///
    /// Returns `(N, dN/du, dN/dv)` padded to length 4.
    pub fn shape(&self, u: f64, v: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
        match self.domain() {
            ParamDomain::Square => {
                let n = [
                    0.25 * (1.0 - u) * (1.0 - v),
                    0.25 * (1.0 + u) * (1.0 - v),
                    0.25 * (1.0 + u) * (1.0 + v),
                    0.25 * (1.0 - u) * (1.0 + v),
                ];
                let du = [
                    -0.25 * (1.0 - v),
                    0.25 * (1.0 - v),
                    0.25 * (1.0 + v),
                    -0.25 * (1.0 + v),
                ];
                let dv = [
                    -0.25 * (1.0 - u),
                    -0.25 * (1.0 + u),
                    0.25 * (1.0 + u),
                    0.25 * (1.0 - u),
                ];
                (n, du, dv)
            }
            ParamDomain::Triangle => (
                [1.0 - u - v, u, v, 0.0],
                [-1.0, 1.0, 0.0, 0.0],
                [-1.0, 0.0, 1.0, 0.0],
            ),
        }
    }
}

/// Geometry of one element at a parameter point: position, tangents,
/// unit normal, and the area Jacobian `|t_u x t_v|`.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub position: Vector3<f64>,
    pub t_u: Vector3<f64>,
    pub t_v: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub jacobian: f64,
}

impl ElementGeometry {
    /// Local tangent `e1` (normalized u-tangent).
    pub fn e1(&self) -> Vector3<f64> {
        self.t_u.normalize()
    }

    /// Local tangent `e2 = n x e1`.
    pub fn e2(&self) -> Vector3<f64> {
        self.normal.cross(&self.e1())
    }

    /// Vectors `(a_u, a_v)` such that the tangential surface gradient of a
    /// field `f(u, v)` is `grad f = a_u df/du + a_v df/dv`.
    pub fn grad_weights(&self) -> (Vector3<f64>, Vector3<f64>) {
        let g = Matrix2::new(
            self.t_u.dot(&self.t_u),
            self.t_u.dot(&self.t_v),
            self.t_v.dot(&self.t_u),
            self.t_v.dot(&self.t_v),
        );
        let ginv = g.try_inverse().expect("nondegenerate element metric");
        let a_u = self.t_u * ginv[(0, 0)] + self.t_v * ginv[(1, 0)];
        let a_v = self.t_u * ginv[(0, 1)] + self.t_v * ginv[(1, 1)];
        (a_u, a_v)
    }
}

/// Cached quadrature point on an element.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub param: (f64, f64),
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// Quadrature weight including the area Jacobian.
    pub weight: f64,
}

/// Collocation point strictly inside its host element, with local frame.
#[derive(Debug, Clone, Copy)]
pub struct CollocationPoint {
    pub element: usize,
    pub param: (f64, f64),
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
}

/// Interior collocation points, `m` per element.
#[derive(Debug, Clone)]
pub struct CollocationSet {
    pub points: Vec<CollocationPoint>,
    pub per_element: usize,
}

/// Complex 3-vector per mesh node, components in the global frame.
///
/// Solvers keep the edge-node entries exactly zero (extension of the opening
/// displacement by zero outside the fracture).
#[derive(Debug, Clone)]
pub struct FodVector {
    pub values: Vec<Vector3<Complex64>>,
}

impl FodVector {
    pub fn zeros(n_nodes: usize) -> Self {
        Self {
            values: vec![Vector3::zeros(); n_nodes],
        }
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Zeroes all edge-node entries.
    pub fn pin_edges(&mut self, mesh: &FractureMesh) {
        for &i in mesh.edge_nodes() {
            self.values[i] = Vector3::zeros();
        }
    }

    pub fn is_edge_pinned(&self, mesh: &FractureMesh) -> bool {
        mesh.edge_nodes().iter().all(|&i| self.values[i] == Vector3::zeros())
    }
}

/// Boundary-element fracture surface.
#[derive(Debug, Clone)]
pub struct FractureMesh {
    nodes: Vec<Vector3<f64>>,
    elements: Vec<Element>,
    edge_nodes: Vec<usize>,
    quadrature: Vec<Vec<QuadPoint>>,
    diameters: Vec<f64>,
}

/// Degree-5 symmetric quadrature on the reference triangle
/// (weights include the reference area 1/2).
const TRI_QUAD: [(f64, f64, f64); 7] = {
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

impl FractureMesh {
    /// Builds a mesh from raw nodes and elements, computing edge nodes and
    /// the quadrature cache.
    ///
    /// Fails if node indices are out of range, element orientations are
    /// inconsistent (an interior edge traversed the same way twice), or an
    /// element is degenerate (vanishing Jacobian).
    pub fn from_parts(nodes: Vec<Vector3<f64>>, elements: Vec<Element>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Geometry("mesh has no elements".into()));
        }
        for el in &elements {
            for &i in el.nodes() {
                if i >= nodes.len() {
                    return Err(Error::Geometry(format!(
                        "element references node {i} but the mesh has {} nodes",
                        nodes.len()
                    )));
                }
            }
        }
        // Directed edge census: interior edges must appear once per direction.
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for el in &elements {
            let k = el.nodes().len();
            for e in 0..k {
                let a = el.nodes()[e];
                let b = el.nodes()[(e + 1) % k];
                *directed.entry((a, b)).or_insert(0) += 1;
            }
        }
        let mut edge_set = std::collections::BTreeSet::new();
        for (&(a, b), &cnt) in &directed {
            if cnt > 1 {
                return Err(Error::Geometry(format!(
                    "inconsistent element orientation at edge ({a}, {b})"
                )));
            }
            if !directed.contains_key(&(b, a)) {
                edge_set.insert(a);
                edge_set.insert(b);
            }
        }
        let edge_nodes: Vec<usize> = edge_set.into_iter().collect();

        let mut mesh = Self {
            nodes,
            elements,
            edge_nodes,
            quadrature: Vec::new(),
            diameters: Vec::new(),
        };
        mesh.quadrature = (0..mesh.elements.len())
            .map(|el| mesh.element_quadrature(el))
            .collect::<Result<_>>()?;
        mesh.diameters = (0..mesh.elements.len())
            .map(|el| {
                let idx = mesh.elements[el].nodes();
                let mut d: f64 = 0.0;
                for a in 0..idx.len() {
                    for b in (a + 1)..idx.len() {
                        d = d.max((mesh.nodes[idx[a]] - mesh.nodes[idx[b]]).norm());
                    }
                }
                d
            })
            .collect();
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes(&self) -> &[Vector3<f64>] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, el: usize) -> &Element {
        &self.elements[el]
    }

    /// Node indices on the fracture boundary, sorted ascending.
    pub fn edge_nodes(&self) -> &[usize] {
        &self.edge_nodes
    }

    /// Node indices strictly inside the fracture (free FOD unknowns).
    pub fn interior_nodes(&self) -> Vec<usize> {
        let mut edge = vec![false; self.n_nodes()];
        for &i in &self.edge_nodes {
            edge[i] = true;
        }
        (0..self.n_nodes()).filter(|&i| !edge[i]).collect()
    }

    /// Largest inter-node distance within element `el`.
    pub fn element_diameter(&self, el: usize) -> f64 {
        self.diameters[el]
    }

    /// Cached regular quadrature of element `el`.
    pub fn quadrature(&self, el: usize) -> &[QuadPoint] {
        &self.quadrature[el]
    }

    pub fn total_area(&self) -> f64 {
        self.quadrature
            .iter()
            .flatten()
            .map(|q| q.weight)
            .sum()
    }

    /// Exact element geometry at a parameter point.
    pub fn element_geometry(&self, el: usize, u: f64, v: f64) -> ElementGeometry {
        let element = &self.elements[el];
        let (position, t_u, t_v) = match element.chart() {
            Chart::Bilinear | Chart::Linear => {
                let (n, du, dv) = element.shape(u, v);
                let mut p = Vector3::zeros();
                let mut tu = Vector3::zeros();
                let mut tv = Vector3::zeros();
                for (k, &idx) in element.nodes().iter().enumerate() {
                    p += self.nodes[idx] * n[k];
                    tu += self.nodes[idx] * du[k];
                    tv += self.nodes[idx] * dv[k];
                }
                (p, tu, tv)
            }
            Chart::Cylinder { r, theta, axial } => {
                let th = 0.5 * (theta.0 + theta.1) + 0.5 * u * (theta.1 - theta.0);
                let ax = 0.5 * (axial.0 + axial.1) + 0.5 * v * (axial.1 - axial.0);
                let p = Vector3::new(r * th.sin(), ax, r * th.cos());
                let tu = Vector3::new(th.cos(), 0.0, -th.sin()) * (r * 0.5 * (theta.1 - theta.0));
                let tv = Vector3::new(0.0, 0.5 * (axial.1 - axial.0), 0.0);
                (p, tu, tv)
            }
            Chart::Graph { frame, s, t } => {
                let sv = 0.5 * (s.0 + s.1) + 0.5 * u * (s.1 - s.0);
                let tv_ = 0.5 * (t.0 + t.1) + 0.5 * v * (t.1 - t.0);
                let (_, hs, ht) = frame.height(sv, tv_);
                let p = frame.position(sv, tv_);
                let tu = (frame.e1 + frame.n * hs) * (0.5 * (s.1 - s.0));
                let tv = (frame.e2 + frame.n * ht) * (0.5 * (t.1 - t.0));
                (p, tu, tv)
            }
        };
        let cross = t_u.cross(&t_v);
        let jacobian = cross.norm();
        ElementGeometry {
            position,
            t_u,
            t_v,
            normal: cross / jacobian,
            jacobian,
        }
    }

    fn element_quadrature(&self, el: usize) -> Result<Vec<QuadPoint>> {
        let element = &self.elements[el];
        let mut out = Vec::new();
        match element.domain() {
            ParamDomain::Square => {
                let (x, w) = crate::linalg::gauss_legendre(4);
                for (iu, &u) in x.iter().enumerate() {
                    for (iv, &v) in x.iter().enumerate() {
                        let g = self.element_geometry(el, u, v);
                        if !(g.jacobian > 0.0) {
                            return Err(Error::Geometry(format!(
                                "degenerate element {el}: vanishing Jacobian"
                            )));
                        }
                        out.push(QuadPoint {
                            param: (u, v),
                            position: g.position,
                            normal: g.normal,
                            weight: w[iu] * w[iv] * g.jacobian,
                        });
                    }
                }
            }
            ParamDomain::Triangle => {
                for &(u, v, w) in &TRI_QUAD {
                    let g = self.element_geometry(el, u, v);
                    if !(g.jacobian > 0.0) {
                        return Err(Error::Geometry(format!(
                            "degenerate element {el}: vanishing Jacobian"
                        )));
                    }
                    out.push(QuadPoint {
                        param: (u, v),
                        position: g.position,
                        normal: g.normal,
                        weight: w * g.jacobian,
                    });
                }
            }
        }
        Ok(out)
    }

    fn check_param(&self, el: usize, u: f64, v: f64) -> Result<()> {
        if el >= self.n_elements() {
            return Err(Error::Geometry(format!(
                "element index {el} out of range ({} elements)",
                self.n_elements()
            )));
        }
        let tol = 1e-12;
        let inside = match self.elements[el].domain() {
            ParamDomain::Square => u.abs() <= 1.0 + tol && v.abs() <= 1.0 + tol,
            ParamDomain::Triangle => u >= -tol && v >= -tol && u + v <= 1.0 + tol,
        };
        if !inside {
            return Err(Error::Geometry(format!(
                "parameter point ({u}, {v}) outside the reference domain of element {el}"
            )));
        }
        Ok(())
    }

    /// C0-interpolated FOD value at a parameter point of element `el`.
    pub fn fod_at(&self, f: &FodVector, el: usize, u: f64, v: f64) -> Result<Vector3<Complex64>> {
        self.check_param(el, u, v)?;
        let element = &self.elements[el];
        let (n, _, _) = element.shape(u, v);
        let mut val = Vector3::zeros();
        for (k, &idx) in element.nodes().iter().enumerate() {
            val += f.values[idx] * Complex64::new(n[k], 0.0);
        }
        Ok(val)
    }

    /// Tangential surface gradient of the interpolated FOD:
    /// `grad[(m, l)] = d f_m / d xi_l` (a purely tangential matrix).
    pub fn fod_gradient_at(
        &self,
        f: &FodVector,
        el: usize,
        u: f64,
        v: f64,
    ) -> Result<Matrix3<Complex64>> {
        self.check_param(el, u, v)?;
        let element = &self.elements[el];
        let (_, du, dv) = element.shape(u, v);
        let g = self.element_geometry(el, u, v);
        let (a_u, a_v) = g.grad_weights();
        let mut dfu = Vector3::<Complex64>::zeros();
        let mut dfv = Vector3::<Complex64>::zeros();
        for (k, &idx) in element.nodes().iter().enumerate() {
            dfu += f.values[idx] * Complex64::new(du[k], 0.0);
            dfv += f.values[idx] * Complex64::new(dv[k], 0.0);
        }
        let mut grad = Matrix3::zeros();
        for m in 0..3 {
            for l in 0..3 {
                grad[(m, l)] = dfu[m] * a_u[l] + dfv[m] * a_v[l];
            }
        }
        Ok(grad)
    }
}

/// Cylindrical fracture patch `{(R sin th, v, R cos th): |th| <= ell/(2R),
/// |v| <= L/2}` with `n_u x n_v` conforming elements (`u` along the arc) and
/// outward radial normals. Elements are stored row-major with the arc index
/// fastest.
pub fn build_cylindrical_patch(
    width: f64,
    arclength: f64,
    radius: f64,
    n_u: usize,
    n_v: usize,
) -> Result<FractureMesh> {
    if !(width > 0.0 && arclength > 0.0 && radius > 0.0) {
        return Err(Error::Geometry(
            "cylindrical patch dimensions must be positive".into(),
        ));
    }
    if arclength >= 2.0 * std::f64::consts::PI * radius {
        return Err(Error::Geometry(format!(
            "arclength {arclength} must be below the full circumference {}",
            2.0 * std::f64::consts::PI * radius
        )));
    }
    if n_u < 2 || n_v < 2 {
        return Err(Error::Geometry("need at least 2 subdivisions per direction".into()));
    }
    let half_angle = arclength / (2.0 * radius);
    let mut nodes = Vec::with_capacity((n_u + 1) * (n_v + 1));
    for j in 0..=n_v {
        let v = -width / 2.0 + width * j as f64 / n_v as f64;
        for i in 0..=n_u {
            let th = -half_angle + 2.0 * half_angle * i as f64 / n_u as f64;
            nodes.push(Vector3::new(radius * th.sin(), v, radius * th.cos()));
        }
    }
    let node = |i: usize, j: usize| j * (n_u + 1) + i;
    let mut elements = Vec::with_capacity(n_u * n_v);
    for j in 0..n_v {
        let v0 = -width / 2.0 + width * j as f64 / n_v as f64;
        let v1 = -width / 2.0 + width * (j + 1) as f64 / n_v as f64;
        for i in 0..n_u {
            let t0 = -half_angle + 2.0 * half_angle * i as f64 / n_u as f64;
            let t1 = -half_angle + 2.0 * half_angle * (i + 1) as f64 / n_u as f64;
            elements.push(Element::new(
                vec![node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)],
                Chart::Cylinder {
                    r: radius,
                    theta: (t0, t1),
                    axial: (v0, v1),
                },
            )?);
        }
    }
    FractureMesh::from_parts(nodes, elements)
}

/// Flat penny-shaped fracture of radius `a` in the plane `x3 = 0`, normal
/// `+e3`, meshed as concentric hexagonal rings of near-equilateral triangles
/// (`6 rings^2` elements). Edge nodes are the outermost ring.
pub fn build_penny(a: f64, rings: usize) -> Result<FractureMesh> {
    if !(a > 0.0) {
        return Err(Error::Geometry("penny radius must be positive".into()));
    }
    if rings < 2 {
        return Err(Error::Geometry("penny mesh needs at least 2 rings".into()));
    }
    let mut nodes = vec![Vector3::zeros()];
    let mut ring_start = vec![0usize; rings + 1];
    for i in 1..=rings {
        ring_start[i] = nodes.len();
        let r = a * i as f64 / rings as f64;
        for k in 0..(6 * i) {
            let th = 2.0 * std::f64::consts::PI * k as f64 / (6 * i) as f64;
            nodes.push(Vector3::new(r * th.cos(), r * th.sin(), 0.0));
        }
    }
    let mut elements = Vec::with_capacity(6 * rings * rings);
    let mut tri = |a_: usize, b: usize, c: usize| -> Result<()> {
        elements.push(Element::new(vec![a_, b, c], Chart::Linear)?);
        Ok(())
    };
    // innermost fan
    for k in 0..6 {
        tri(0, ring_start[1] + k, ring_start[1] + (k + 1) % 6)?;
    }
    for i in 2..=rings {
        let outer = ring_start[i];
        let inner = ring_start[i - 1];
        let n_out = 6 * i;
        let n_in = 6 * (i - 1);
        for s in 0..6 {
            for t in 0..i {
                let o0 = outer + (s * i + t) % n_out;
                let o1 = outer + (s * i + t + 1) % n_out;
                let i0 = inner + (s * (i - 1) + t) % n_in;
                tri(o0, o1, i0)?;
                if t + 1 < i {
                    let i1 = inner + (s * (i - 1) + t + 1) % n_in;
                    tri(o1, i1, i0)?;
                }
            }
        }
    }
    FractureMesh::from_parts(nodes, elements)
}

/// Mesh of a rectangle of a quadratic height-function graph: `n_s x n_t`
/// quadrilateral elements over `s_range x t_range` in the frame plane.
pub fn build_graph_patch(
    frame: GraphFrame,
    s_range: (f64, f64),
    t_range: (f64, f64),
    n_s: usize,
    n_t: usize,
) -> Result<FractureMesh> {
    if !(s_range.1 > s_range.0 && t_range.1 > t_range.0) {
        return Err(Error::Geometry("empty graph patch parameter ranges".into()));
    }
    if n_s < 2 || n_t < 2 {
        return Err(Error::Geometry("need at least 2 subdivisions per direction".into()));
    }
    let frame = Arc::new(frame);
    let s_at = |i: usize| s_range.0 + (s_range.1 - s_range.0) * i as f64 / n_s as f64;
    let t_at = |j: usize| t_range.0 + (t_range.1 - t_range.0) * j as f64 / n_t as f64;
    let mut nodes = Vec::with_capacity((n_s + 1) * (n_t + 1));
    for j in 0..=n_t {
        for i in 0..=n_s {
            nodes.push(frame.position(s_at(i), t_at(j)));
        }
    }
    let node = |i: usize, j: usize| j * (n_s + 1) + i;
    let mut elements = Vec::with_capacity(n_s * n_t);
    for j in 0..n_t {
        for i in 0..n_s {
            elements.push(Element::new(
                vec![node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)],
                Chart::Graph {
                    frame: frame.clone(),
                    s: (s_at(i), s_at(i + 1)),
                    t: (t_at(j), t_at(j + 1)),
                },
            )?);
        }
    }
    FractureMesh::from_parts(nodes, elements)
}

/// Interior collocation points, `m` per element, for `m` in `{1, 3, 4}`.
///
/// Layouts (reference coordinates): `m = 1` the centroid; `m = 3` a
/// symmetric interior triad; `m = 4` the triad plus the centroid on
/// triangles, the four quarter points on quadrilaterals. All points keep a
/// boundary clearance above a tenth of the element diameter on the meshes
/// built here.
pub fn interior_collocation(mesh: &FractureMesh, m: usize) -> Result<CollocationSet> {
    let square: Vec<Vector2<f64>> = match m {
        1 => vec![Vector2::new(0.0, 0.0)],
        3 => vec![
            Vector2::new(-0.5, -0.5),
            Vector2::new(0.5, -0.5),
            Vector2::new(0.0, 0.5),
        ],
        4 => vec![
            Vector2::new(-0.5, -0.5),
            Vector2::new(0.5, -0.5),
            Vector2::new(0.5, 0.5),
            Vector2::new(-0.5, 0.5),
        ],
        _ => {
            return Err(Error::Config(format!(
                "unsupported collocation count m = {m} (expected 1, 3 or 4)"
            )))
        }
    };
    let third = 1.0 / 3.0;
    let triangle: Vec<Vector2<f64>> = match m {
        1 => vec![Vector2::new(third, third)],
        3 => vec![
            Vector2::new(0.2, 0.2),
            Vector2::new(0.6, 0.2),
            Vector2::new(0.2, 0.6),
        ],
        4 => vec![
            Vector2::new(third, third),
            Vector2::new(0.2, 0.2),
            Vector2::new(0.6, 0.2),
            Vector2::new(0.2, 0.6),
        ],
        _ => unreachable!(),
    };
    let mut points = Vec::with_capacity(m * mesh.n_elements());
    for el in 0..mesh.n_elements() {
        let layout = match mesh.element(el).domain() {
            ParamDomain::Square => &square,
            ParamDomain::Triangle => &triangle,
        };
        for p in layout {
            let g = mesh.element_geometry(el, p.x, p.y);
            points.push(CollocationPoint {
                element: el,
                param: (p.x, p.y),
                position: g.position,
                normal: g.normal,
                e1: g.e1(),
                e2: g.e2(),
            });
        }
    }
    Ok(CollocationSet {
        points,
        per_element: m,
    })
}

/// Tangential differential operator of the interpolated FOD at a parameter
/// point of element `el`:
///
/// ```text
/// D[k][l][m] = n_k f_{m,l} - n_l f_{m,k}
/// ```
///
/// with surface-interpolated derivatives; antisymmetric in `(k, l)` by
/// construction.
pub fn tangential_diff(
    mesh: &FractureMesh,
    f: &FodVector,
    el: usize,
    u: f64,
    v: f64,
) -> Result<Tensor3> {
    let grad = mesh.fod_gradient_at(f, el, u, v)?;
    let n = mesh.element_geometry(el, u, v).normal;
    let mut d = [[[Complex64::default(); 3]; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            for m in 0..3 {
                d[k][l][m] = grad[(m, l)] * n[k] - grad[(m, k)] * n[l];
            }
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> FractureMesh {
        let nodes = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let elements = vec![Element::new(vec![0, 1, 2, 3], Chart::Bilinear).unwrap()];
        FractureMesh::from_parts(nodes, elements).unwrap()
    }

    #[test]
    fn cylindrical_patch_area_exact() {
        let mesh = build_cylindrical_patch(0.7, 0.55, 0.35, 10, 7).unwrap();
        assert!((mesh.total_area() - 0.7 * 0.55).abs() < 1e-10);
        // refinement leaves the area unchanged
        let fine = build_cylindrical_patch(0.7, 0.55, 0.35, 20, 14).unwrap();
        assert!((fine.total_area() - mesh.total_area()).abs() < 1e-12);
    }

    #[test]
    fn cylindrical_patch_normals_radial() {
        let mesh = build_cylindrical_patch(0.7, 0.55, 0.35, 8, 6).unwrap();
        for el in 0..mesh.n_elements() {
            for q in mesh.quadrature(el) {
                let radial = Vector3::new(q.position.x, 0.0, q.position.z).normalize();
                assert!((q.normal - radial).norm() <= 1e-12);
                assert_relative_eq!(q.normal.norm(), 1.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn cylindrical_patch_rejects_full_circumference() {
        assert!(build_cylindrical_patch(0.7, 2.3, 0.35, 4, 4).is_err());
    }

    #[test]
    fn penny_area_converges() {
        let a = 0.9;
        let mesh = build_penny(a, 16).unwrap();
        let exact = std::f64::consts::PI * a * a;
        assert!(
            (mesh.total_area() - exact).abs() / exact < 0.005,
            "area {} vs {}",
            mesh.total_area(),
            exact
        );
        assert_eq!(mesh.n_elements(), 6 * 16 * 16);
        let coarse = build_penny(a, 4).unwrap();
        assert!((coarse.total_area() - exact).abs() > (mesh.total_area() - exact).abs());
    }

    #[test]
    fn penny_normals_and_edge_ring() {
        let a = 1.3;
        let rings = 8;
        let mesh = build_penny(a, rings).unwrap();
        for el in 0..mesh.n_elements() {
            for q in mesh.quadrature(el) {
                assert!((q.normal - Vector3::z()).norm() < 1e-12);
            }
        }
        assert_eq!(mesh.edge_nodes().len(), 6 * rings);
        for &i in mesh.edge_nodes() {
            assert_relative_eq!(mesh.nodes()[i].norm(), a, epsilon = 1e-12);
        }
        // no interior node sits on the rim
        for i in mesh.interior_nodes() {
            assert!(mesh.nodes()[i].norm() < a - 1e-9);
        }
    }

    #[test]
    fn quadrature_exact_for_quadratics() {
        let mesh = unit_square();
        // integral of x^2 + x y over the unit square = 1/3 + 1/4
        let num: f64 = mesh
            .quadrature(0)
            .iter()
            .map(|q| (q.position.x * q.position.x + q.position.x * q.position.y) * q.weight)
            .sum();
        assert_relative_eq!(num, 1.0 / 3.0 + 0.25, epsilon = 1e-12);
        // flat triangle: x^2 over the reference triangle = 1/12
        let nodes = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let tri = FractureMesh::from_parts(
            nodes,
            vec![Element::new(vec![0, 1, 2], Chart::Linear).unwrap()],
        )
        .unwrap();
        let num: f64 = tri
            .quadrature(0)
            .iter()
            .map(|q| q.position.x * q.position.x * q.weight)
            .sum();
        assert_relative_eq!(num, 1.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn collocation_counts_and_centroid() {
        let mesh = unit_square();
        let c = interior_collocation(&mesh, 1).unwrap();
        assert_eq!(c.points.len(), 1);
        assert!((c.points[0].position - Vector3::new(0.5, 0.5, 0.0)).norm() < 1e-14);

        for m in [1, 3, 4] {
            for mesh in [
                build_penny(1.0, 4).unwrap(),
                build_cylindrical_patch(0.7, 0.55, 0.35, 5, 4).unwrap(),
            ] {
                let c = interior_collocation(&mesh, m).unwrap();
                assert_eq!(c.points.len(), m * mesh.n_elements());
            }
        }
        assert!(interior_collocation(&mesh, 2).is_err());
    }

    #[test]
    fn collocation_boundary_clearance() {
        for mesh in [
            build_penny(1.0, 5).unwrap(),
            build_cylindrical_patch(0.7, 0.55, 0.35, 10, 7).unwrap(),
        ] {
            for m in [1, 3, 4] {
                let c = interior_collocation(&mesh, m).unwrap();
                for p in &c.points {
                    // sample the element boundary densely in parameter space
                    let el = p.element;
                    let mut min_d = f64::INFINITY;
                    let boundary: Vec<(f64, f64)> = match mesh.element(el).domain() {
                        ParamDomain::Square => (0..200)
                            .map(|k| {
                                let s = -1.0 + 2.0 * (k % 50) as f64 / 49.0;
                                match k / 50 {
                                    0 => (s, -1.0),
                                    1 => (s, 1.0),
                                    2 => (-1.0, s),
                                    _ => (1.0, s),
                                }
                            })
                            .collect(),
                        ParamDomain::Triangle => (0..150)
                            .map(|k| {
                                let s = (k % 50) as f64 / 49.0;
                                match k / 50 {
                                    0 => (s, 0.0),
                                    1 => (0.0, s),
                                    _ => (s, 1.0 - s),
                                }
                            })
                            .collect(),
                    };
                    for (bu, bv) in boundary {
                        let g = mesh.element_geometry(el, bu, bv);
                        min_d = min_d.min((g.position - p.position).norm());
                    }
                    let diam = mesh.element_diameter(el);
                    assert!(
                        min_d > 0.1 * diam,
                        "clearance {min_d} vs diameter {diam} (m = {m})"
                    );
                }
            }
        }
    }

    #[test]
    fn local_frames_orthonormal_right_handed() {
        let mesh = build_cylindrical_patch(0.7, 0.55, 0.35, 6, 5).unwrap();
        let c = interior_collocation(&mesh, 3).unwrap();
        for p in &c.points {
            assert_relative_eq!(p.e1.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(p.e2.norm(), 1.0, epsilon = 1e-12);
            assert!(p.e1.dot(&p.e2).abs() < 1e-12);
            assert!(p.e1.dot(&p.normal).abs() < 1e-12);
            assert!((p.e1.cross(&p.e2) - p.normal).norm() < 1e-12);
        }
    }

    #[test]
    fn fod_interpolation_continuous_across_edges() {
        let n_u = 6;
        let mesh = build_cylindrical_patch(0.7, 0.55, 0.35, n_u, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut f = FodVector::zeros(mesh.n_nodes());
        for v in &mut f.values {
            *v = Vector3::new(
                Complex64::new(rng.gen(), rng.gen()),
                Complex64::new(rng.gen(), rng.gen()),
                Complex64::new(rng.gen(), rng.gen()),
            );
        }
        // elements (i, j) and (i+1, j) share the edge u = 1 / u = -1
        for j in 0..5 {
            for i in 0..(n_u - 1) {
                let el_a = j * n_u + i;
                let el_b = j * n_u + i + 1;
                for t in [-0.5, 0.0, 0.7] {
                    let pa = mesh.element_geometry(el_a, 1.0, t).position;
                    let pb = mesh.element_geometry(el_b, -1.0, t).position;
                    assert!((pa - pb).norm() < 1e-12);
                    let fa = mesh.fod_at(&f, el_a, 1.0, t).unwrap();
                    let fb = mesh.fod_at(&f, el_b, -1.0, t).unwrap();
                    assert!((fa - fb).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tangential_diff_constant_field_vanishes() {
        let mesh = build_penny(1.0, 3).unwrap();
        let mut f = FodVector::zeros(mesh.n_nodes());
        for v in &mut f.values {
            *v = Vector3::new(
                Complex64::new(1.0, -2.0),
                Complex64::new(0.5, 0.25),
                Complex64::new(-3.0, 1.0),
            );
        }
        let d = tangential_diff(&mesh, &f, 7, 0.25, 0.25).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                for m in 0..3 {
                    assert!(d[k][l][m].norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tangential_diff_antisymmetric() {
        let mesh = build_cylindrical_patch(0.7, 0.55, 0.35, 5, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = FodVector::zeros(mesh.n_nodes());
        for v in &mut f.values {
            *v = Vector3::new(
                Complex64::new(rng.gen(), rng.gen()),
                Complex64::new(rng.gen(), rng.gen()),
                Complex64::new(rng.gen(), rng.gen()),
            );
        }
        let d = tangential_diff(&mesh, &f, 9, 0.3, -0.4).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                for m in 0..3 {
                    assert_eq!(d[k][l][m], -d[l][k][m]);
                }
            }
        }
    }

    #[test]
    fn tangential_diff_linear_field_on_flat_element() {
        // f_m(x) = c_m + a_m x + b_m y on the unit square, normal e3:
        // D[k][l][m] = n_k f_{m,l} - n_l f_{m,k} with grad f_m = (a_m, b_m, 0)
        let mesh = unit_square();
        let coef_a = [0.7, -1.2, 0.4];
        let coef_b = [0.3, 0.9, -0.8];
        let mut f = FodVector::zeros(4);
        for (i, node) in mesh.nodes().iter().enumerate() {
            for m in 0..3 {
                f.values[i][m] =
                    Complex64::new(1.0 + coef_a[m] * node.x + coef_b[m] * node.y, 0.0);
            }
        }
        let d = tangential_diff(&mesh, &f, 0, 0.2, -0.3).unwrap();
        for m in 0..3 {
            let grad = [coef_a[m], coef_b[m], 0.0];
            let n = [0.0, 0.0, 1.0];
            for k in 0..3 {
                for l in 0..3 {
                    let expect = n[k] * grad[l] - n[l] * grad[k];
                    assert!(
                        (d[k][l][m] - Complex64::new(expect, 0.0)).norm() < 1e-12,
                        "({k},{l},{m})"
                    );
                }
            }
        }
    }

    #[test]
    fn graph_patch_matches_height_function() {
        let frame = GraphFrame {
            origin: Vector3::new(0.1, -0.2, 0.3),
            e1: Vector3::x(),
            e2: Vector3::y(),
            n: Vector3::z(),
            c: [0.05, 0.1, -0.08, 0.2, 0.12, -0.15],
        };
        let mesh = build_graph_patch(frame.clone(), (-0.4, 0.4), (-0.3, 0.3), 6, 5).unwrap();
        assert_eq!(mesh.n_elements(), 30);
        for el in 0..mesh.n_elements() {
            for q in mesh.quadrature(el) {
                // position satisfies the graph equation
                let s = (q.position - frame.origin).dot(&frame.e1);
                let t = (q.position - frame.origin).dot(&frame.e2);
                let (h, hs, ht) = frame.height(s, t);
                let expect = frame.origin + frame.e1 * s + frame.e2 * t + frame.n * h;
                assert!((q.position - expect).norm() < 1e-12);
                // normal of a graph: (n - hs e1 - ht e2)/sqrt(1 + hs^2 + ht^2)
                let nrm =
                    (frame.n - frame.e1 * hs - frame.e2 * ht) / (1.0 + hs * hs + ht * ht).sqrt();
                assert!((q.normal - nrm).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn inconsistent_orientation_rejected() {
        let nodes = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(2.0, 1.0, 0.0),
        ];
        // second element flipped: shares edge (1, 2) traversed the same way
        let elements = vec![
            Element::new(vec![0, 1, 2, 3], Chart::Bilinear).unwrap(),
            Element::new(vec![1, 2, 5, 4], Chart::Bilinear).unwrap(),
        ];
        assert!(FractureMesh::from_parts(nodes, elements).is_err());
    }

    #[test]
    fn fod_edge_pinning() {
        let mesh = build_penny(1.0, 3).unwrap();
        let mut f = FodVector::zeros(mesh.n_nodes());
        for v in &mut f.values {
            *v = Vector3::new(
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(1.0, 1.0),
            );
        }
        assert!(!f.is_edge_pinned(&mesh));
        f.pin_edges(&mesh);
        assert!(f.is_edge_pinned(&mesh));
        assert!(f.norm() > 0.0);
    }

    #[test]
    fn param_checks() {
        let mesh = build_penny(1.0, 2).unwrap();
        let f = FodVector::zeros(mesh.n_nodes());
        assert!(mesh.fod_at(&f, 0, 0.9, 0.9).is_err()); // outside triangle
        assert!(mesh.fod_at(&f, 10_000, 0.1, 0.1).is_err());
        assert!(mesh.fod_at(&f, 0, 0.2, 0.3).is_ok());
    }
}
