//! Closed-form elastodynamic quantities for a homogeneous isotropic full
//! space: plane waves, surface tractions, the Kupradze fundamental solutions
//! `U` and `Sigma`, their far-field stress kernel, and the vanishing
//! penny-fracture test pattern.
//!
//! The fundamental displacement tensor is assembled from the two scalar
//! Helmholtz kernels `g_k(r) = e^{ikr}/(4 pi r)`:
//!
//! ```text
//! U_il = [ k_s^2 g_s delta_il + d_i d_l (g_s - g_p) ] / (rho omega^2),
//! ```
//!
//! outgoing at infinity. Stress components `Sigma_ij^l` (Cauchy stress at
//! `xi` from a unit point force `e_l` at `x`) follow by applying the
//! isotropic elasticity tensor to the analytic gradient. Tensors are stored
//! with the **force index last**: `t[i][j][l] = Sigma_ij^l`.
//!
//! All functions here are pure and reentrant.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::{Error, Result};

pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Rank-3 complex tensor, indexed `[i][j][l]` with the force index last.
pub type Tensor3 = [[[Complex64; 3]; 3]; 3];

/// Promote a real 3-vector to complex.
pub fn cvec(v: &Vector3<f64>) -> Vector3<Complex64> {
    v.map(|x| Complex64::new(x, 0.0))
}

/// Homogeneous isotropic elastic background medium.
///
/// Stores material constants only; wavenumbers are derived per frequency so
/// one medium serves any number of frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticMedium {
    rho: f64,
    lambda: f64,
    mu: f64,
}

impl ElasticMedium {
    pub fn new(rho: f64, lambda: f64, mu: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::Config(format!("mass density must be positive, got {rho}")));
        }
        if !(mu > 0.0) {
            return Err(Error::Config(format!("shear modulus must be positive, got {mu}")));
        }
        if !(lambda + 2.0 * mu > 0.0) {
            return Err(Error::Config(format!(
                "lambda + 2 mu must be positive, got {}",
                lambda + 2.0 * mu
            )));
        }
        Ok(Self { rho, lambda, mu })
    }

    /// Medium from wave speeds, with `rho` given (so `mu = rho c_s^2`,
    /// `lambda = rho (c_p^2 - 2 c_s^2)`).
    pub fn from_speeds(rho: f64, c_p: f64, c_s: f64) -> Result<Self> {
        if !(c_p > c_s && c_s > 0.0) {
            return Err(Error::Config(format!(
                "wave speeds must satisfy c_p > c_s > 0, got c_p = {c_p}, c_s = {c_s}"
            )));
        }
        Self::new(rho, rho * (c_p * c_p - 2.0 * c_s * c_s), rho * c_s * c_s)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn c_s(&self) -> f64 {
        (self.mu / self.rho).sqrt()
    }
    pub fn c_p(&self) -> f64 {
        ((self.lambda + 2.0 * self.mu) / self.rho).sqrt()
    }
    pub fn k_s(&self, omega: f64) -> f64 {
        omega / self.c_s()
    }
    pub fn k_p(&self, omega: f64) -> f64 {
        omega / self.c_p()
    }
    /// Poisson ratio.
    pub fn nu(&self) -> f64 {
        self.lambda / (2.0 * (self.lambda + self.mu))
    }
}

/// Combination of compressional and shear plane waves propagating along `d`.
#[derive(Debug, Clone, Copy)]
pub struct IncidentPlaneWave {
    pub d: Vector3<f64>,
    pub q_p: Vector3<f64>,
    pub q_s: Vector3<f64>,
    pub omega: f64,
}

impl IncidentPlaneWave {
    pub fn new(d: Vector3<f64>, q_p: Vector3<f64>, q_s: Vector3<f64>, omega: f64) -> Result<Self> {
        if (d.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("propagation direction must be a unit vector".into()));
        }
        if d.cross(&q_p).norm() > 1e-12 * (1.0 + q_p.norm()) {
            return Err(Error::Config("compressional amplitude must be parallel to d".into()));
        }
        if d.dot(&q_s).abs() > 1e-12 * (1.0 + q_s.norm()) {
            return Err(Error::Config("shear amplitude must be perpendicular to d".into()));
        }
        if !(omega > 0.0) {
            return Err(Error::Config("frequency must be positive".into()));
        }
        Ok(Self { d, q_p, q_s, omega })
    }

    /// Pure P wave of amplitude `amp` along `d`.
    pub fn p_wave(d: Vector3<f64>, amp: f64, omega: f64) -> Result<Self> {
        Self::new(d, d * amp, Vector3::zeros(), omega)
    }

    /// Pure S wave polarized along `pol` (must be orthogonal to `d`).
    pub fn s_wave(d: Vector3<f64>, pol: Vector3<f64>, omega: f64) -> Result<Self> {
        Self::new(d, Vector3::zeros(), pol, omega)
    }
}

/// One multistatic far-field record: P and S patterns seen from `xi_hat`.
///
/// The P pattern is radial and the S pattern transverse by construction of
/// the far-field expansion; producers in this crate preserve that structure
/// exactly.
#[derive(Debug, Clone, Copy)]
pub struct FarFieldSample {
    pub xi_hat: Vector3<f64>,
    pub up: Vector3<Complex64>,
    pub us: Vector3<Complex64>,
}

/// Incident plane-wave displacement and its exact gradient at `xi`.
///
/// `grad[(i, j)] = d u_i / d xi_j`.
pub fn eval_plane_wave(
    w: &IncidentPlaneWave,
    med: &ElasticMedium,
    xi: &Vector3<f64>,
) -> (Vector3<Complex64>, Matrix3<Complex64>) {
    let kp = med.k_p(w.omega);
    let ks = med.k_s(w.omega);
    let phase_p = (I * kp * w.d.dot(xi)).exp();
    let phase_s = (I * ks * w.d.dot(xi)).exp();
    let u = cvec(&w.q_p) * phase_p + cvec(&w.q_s) * phase_s;
    let mut grad = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            grad[(i, j)] = I * kp * w.q_p[i] * w.d[j] * phase_p + I * ks * w.q_s[i] * w.d[j] * phase_s;
        }
    }
    (u, grad)
}

/// Traction `t = n . C : grad_u` for the isotropic elasticity tensor:
/// `t_i = lambda (tr grad_u) n_i + mu n_j (grad_u_ij + grad_u_ji)`.
pub fn traction(
    grad_u: &Matrix3<Complex64>,
    n: &Vector3<f64>,
    med: &ElasticMedium,
) -> Vector3<Complex64> {
    let tr = grad_u[(0, 0)] + grad_u[(1, 1)] + grad_u[(2, 2)];
    let nc = cvec(n);
    let sym = grad_u + grad_u.transpose();
    nc * (tr * med.lambda()) + sym * nc * Complex64::new(med.mu(), 0.0)
}

/// Scalar Helmholtz kernel `g = e^{ikr}/(4 pi r)` and the radial derivative
/// combinations used by the Kupradze tensor.
struct Radial {
    g: Complex64,
    /// g'
    dg: Complex64,
    /// g''
    d2g: Complex64,
    /// g'''
    d3g: Complex64,
}

impl Radial {
    fn new(k: f64, r: f64) -> Self {
        let g = (I * k * r).exp() / (4.0 * std::f64::consts::PI * r);
        let ik = I * k;
        let inv_r = 1.0 / r;
        let dg = g * (ik - inv_r);
        let d2g = g * (-k * k - 2.0 * I * k * inv_r + 2.0 * inv_r * inv_r);
        let d3g = g
            * (-I * k * k * k + 3.0 * k * k * inv_r + 6.0 * I * k * inv_r * inv_r
                - 6.0 * inv_r * inv_r * inv_r);
        Self { g, dg, d2g, d3g }
    }
}

/// Stable evaluation of the shear-minus-compressional kernel differences.
///
/// In `r^n g^{(n)}(r)` form the n-th derivative of `g_k` is
/// `E(x) phi_n(x) / (4 pi r^{n+1})` with `x = i k r`,
/// `phi_1 = x - 1`, `phi_2 = x^2 - 2x + 2`, `phi_3 = x^3 - 3x^2 + 6x - 6`.
/// The differences needed by `U` and its gradient combine two wavenumbers
/// whose leading `1/r^m` parts cancel exactly; evaluating them term by term
/// loses `(k r)^2` relative digits. Below `k_s r = 1/2` the combinations are
/// summed as Taylor series in which the cancelling coefficients vanish
/// identically, keeping full precision down to the static limit.
struct KernelCombos {
    /// g_s
    gs: Complex64,
    /// g_s'
    dgs: Complex64,
    /// (g_s' - g_p') / r
    db: Complex64,
    /// (g_s'' - g_p'') - (g_s' - g_p')/r
    drr: Complex64,
    /// g_s''' - g_p'''
    dg3: Complex64,
}

impl KernelCombos {
    fn new(kp: f64, ks: f64, r: f64) -> Self {
        let s = Radial::new(ks, r);
        if ks * r >= 0.5 {
            let p = Radial::new(kp, r);
            let db = (s.dg - p.dg) / r;
            return Self {
                gs: s.g,
                dgs: s.dg,
                db,
                drr: (s.d2g - p.d2g) - db,
                dg3: s.d3g - p.d3g,
            };
        }
        // Taylor coefficients of E(x) phi(x) = sum_m c_m x^m for the three
        // combinations; c_m = sum_j phi[j] / (m - j)!.
        const PHI_DB: [f64; 4] = [-1.0, 1.0, 0.0, 0.0]; // phi_1
        const PHI_DRR: [f64; 4] = [3.0, -3.0, 1.0, 0.0]; // phi_2 - phi_1
        const PHI_DG3: [f64; 4] = [-6.0, 6.0, -3.0, 1.0]; // phi_3
        let coeff = |phi: &[f64; 4], m: usize| -> f64 {
            let mut c = 0.0;
            for j in 0..=m.min(3) {
                let mut f = 1.0;
                for q in 1..=(m - j) {
                    f *= q as f64;
                }
                c += phi[j] / f;
            }
            c
        };
        let mut db = Complex64::default();
        let mut drr = Complex64::default();
        let mut dg3 = Complex64::default();
        // u_m = (i r)^m (k_s^m - k_p^m); the m = 0 term always vanishes.
        let mut zpow = Complex64::new(1.0, 0.0); // (i r)^m
        let mut kps = 1.0; // k_s^m
        let mut kpp = 1.0; // k_p^m
        for m in 0..=24 {
            if m > 0 {
                let u_m = zpow * (kps - kpp);
                db += coeff(&PHI_DB, m) * u_m;
                drr += coeff(&PHI_DRR, m) * u_m;
                dg3 += coeff(&PHI_DG3, m) * u_m;
            }
            zpow *= I * r;
            kps *= ks;
            kpp *= kp;
        }
        let four_pi = 4.0 * std::f64::consts::PI;
        let r3 = r * r * r;
        Self {
            gs: s.g,
            dgs: s.dg,
            db: db / (four_pi * r3),
            drr: drr / (four_pi * r3),
            dg3: dg3 / (four_pi * r3 * r),
        }
    }
}

fn separation(xi: &Vector3<f64>, x: &Vector3<f64>) -> Result<(f64, Vector3<f64>)> {
    let y = xi - x;
    let r = y.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::CoincidentPoints { sep: r, guard: 0.0 });
    }
    Ok((r, y / r))
}

/// Kupradze fundamental displacement tensor `U_i^l(xi, x)`: displacement
/// component `i` at `xi` due to a unit time-harmonic point force `e_l`
/// at `x`, outgoing at infinity.
pub fn greens_displacement(
    xi: &Vector3<f64>,
    x: &Vector3<f64>,
    med: &ElasticMedium,
    omega: f64,
) -> Result<Matrix3<Complex64>> {
    let (r, rh) = separation(xi, x)?;
    let kp = med.k_p(omega);
    let ks = med.k_s(omega);
    let c = KernelCombos::new(kp, ks, r);
    // second-derivative decomposition of g_s - g_p:
    //   d_i d_l f = A rh_i rh_l + B (delta_il - rh_i rh_l)
    let scale = 1.0 / (med.rho() * omega * omega);
    let coef_delta = (ks * ks * c.gs + c.db) * scale;
    let coef_rr = c.drr * scale;
    let mut u = Matrix3::zeros();
    for i in 0..3 {
        for l in 0..3 {
            let delta = if i == l { 1.0 } else { 0.0 };
            u[(i, l)] = coef_delta * delta + coef_rr * rh[i] * rh[l];
        }
    }
    Ok(u)
}

/// Gradient of the fundamental displacement with respect to the observation
/// point: `grad[a][l][b] = d U_a^l / d xi_b`.
fn greens_displacement_gradient(
    xi: &Vector3<f64>,
    x: &Vector3<f64>,
    med: &ElasticMedium,
    omega: f64,
) -> Result<Tensor3> {
    let (r, rh) = separation(xi, x)?;
    let kp = med.k_p(omega);
    let ks = med.k_s(omega);
    let c = KernelCombos::new(kp, ks, r);
    let scale = 1.0 / (med.rho() * omega * omega);
    // third-derivative decomposition of f = g_s - g_p:
    //   d_a d_l d_b f = f''' rh_a rh_l rh_b
    //     + ((f'' - f'/r)/r) (delta_al rh_b + delta_ab rh_l + delta_lb rh_a
    //                         - 3 rh_a rh_l rh_b)
    let dg3 = c.dg3;
    let dc = c.drr / r;
    let lead = ks * ks * c.dgs;
    let mut grad = [[[Complex64::default(); 3]; 3]; 3];
    for a in 0..3 {
        for l in 0..3 {
            for b in 0..3 {
                let d_al = if a == l { 1.0 } else { 0.0 };
                let d_ab = if a == b { 1.0 } else { 0.0 };
                let d_lb = if l == b { 1.0 } else { 0.0 };
                grad[a][l][b] = scale
                    * (lead * rh[b] * d_al
                        + dg3 * rh[a] * rh[l] * rh[b]
                        + dc * (d_al * rh[b] + d_ab * rh[l] + d_lb * rh[a]
                            - 3.0 * rh[a] * rh[l] * rh[b]));
            }
        }
    }
    Ok(grad)
}

/// Fundamental stress tensor `Sigma_ij^l(xi, x)`: Cauchy stress at `xi` from
/// a unit point force `e_l` at `x`. Symmetric in `(i, j)`; force index last.
pub fn greens_stress(
    xi: &Vector3<f64>,
    x: &Vector3<f64>,
    med: &ElasticMedium,
    omega: f64,
) -> Result<Tensor3> {
    let grad = greens_displacement_gradient(xi, x, med, omega)?;
    let lambda = med.lambda();
    let mu = med.mu();
    let mut sig = [[[Complex64::default(); 3]; 3]; 3];
    for l in 0..3 {
        let div = grad[0][l][0] + grad[1][l][1] + grad[2][l][2];
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == j { 1.0 } else { 0.0 };
                sig[i][j][l] = lambda * delta * div + mu * (grad[i][l][j] + grad[j][l][i]);
            }
        }
    }
    Ok(sig)
}

/// The two far-field summands of the fundamental stress kernel:
///
/// ```text
/// P: i k_p (2 mu xh_i xh_j + lambda delta_ij) xh_l e^{-i k_p xh.x}
/// S: i k_s mu (delta_il xh_j + delta_jl xh_i - 2 xh_i xh_j xh_l) e^{-i k_s xh.x}
/// ```
///
/// Smooth (holomorphic) for all arguments; no singular points.
pub fn farfield_stress_kernel(
    xi_hat: &Vector3<f64>,
    x: &Vector3<f64>,
    med: &ElasticMedium,
    omega: f64,
) -> (Tensor3, Tensor3) {
    let kp = med.k_p(omega);
    let ks = med.k_s(omega);
    let lambda = med.lambda();
    let mu = med.mu();
    let ph_p = (-I * kp * xi_hat.dot(x)).exp();
    let ph_s = (-I * ks * xi_hat.dot(x)).exp();
    let xh = xi_hat;
    let mut p = [[[Complex64::default(); 3]; 3]; 3];
    let mut s = [[[Complex64::default(); 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let d_ij = if i == j { 1.0 } else { 0.0 };
            for l in 0..3 {
                let d_il = if i == l { 1.0 } else { 0.0 };
                let d_jl = if j == l { 1.0 } else { 0.0 };
                p[i][j][l] = I * kp * (2.0 * mu * xh[i] * xh[j] + lambda * d_ij) * xh[l] * ph_p;
                s[i][j][l] =
                    I * ks * mu * (d_il * xh[j] + d_jl * xh[i] - 2.0 * xh[i] * xh[j] * xh[l]) * ph_s;
            }
        }
    }
    (p, s)
}

/// Far-field contribution per unit surface area of a displacement jump
/// `fod` with surface normal `n` at position `x`, observed from `xi_hat`:
///
/// ```text
/// d up = -i k_p xh [ lambda (fod.n) + 2 mu (n.xh)(fod.xh) ] e^{-i k_p xh.x}
/// d us = -i k_s mu [ (n.xh) fod + (fod.xh) n - 2 (fod.xh)(n.xh) xh ] e^{-i k_s xh.x}
/// ```
///
/// Both the double-layer far-field map and the forward far-field evaluation
/// integrate exactly this kernel, so their discrete outputs agree to
/// rounding whenever they share a quadrature.
pub fn farfield_integrand(
    fod: &Vector3<Complex64>,
    n: &Vector3<f64>,
    x: &Vector3<f64>,
    xi_hat: &Vector3<f64>,
    med: &ElasticMedium,
    omega: f64,
) -> (Vector3<Complex64>, Vector3<Complex64>) {
    let kp = med.k_p(omega);
    let ks = med.k_s(omega);
    let lambda = med.lambda();
    let mu = med.mu();
    let xh = cvec(xi_hat);
    let nc = cvec(n);
    let fod_n = fod.dot(&nc);
    let fod_x = fod.dot(&xh);
    let n_x = Complex64::new(n.dot(xi_hat), 0.0);
    let ph_p = (-I * kp * xi_hat.dot(x)).exp();
    let ph_s = (-I * ks * xi_hat.dot(x)).exp();
    let dup = xh * (-I * kp * (lambda * fod_n + 2.0 * mu * n_x * fod_x) * ph_p);
    let dus = (fod * n_x + nc * fod_x - xh * (2.0 * fod_x * n_x)) * (-I * ks * mu * ph_s);
    (dup, dus)
}

/// Far-field pattern of a vanishing penny-shaped fracture at `z` with
/// normal `n` and unit constant mode-I opening.
pub fn penny_test_pattern(
    xi_hat: &Vector3<f64>,
    z: &Vector3<f64>,
    n: &Vector3<f64>,
    med: &ElasticMedium,
    omega: f64,
) -> FarFieldSample {
    let kp = med.k_p(omega);
    let ks = med.k_s(omega);
    let lambda = med.lambda();
    let mu = med.mu();
    let n_x = n.dot(xi_hat);
    let ph_p = (-I * kp * xi_hat.dot(z)).exp();
    let ph_s = (-I * ks * xi_hat.dot(z)).exp();
    let up = cvec(xi_hat) * (-I * kp * (lambda + 2.0 * mu * n_x * n_x) * ph_p);
    // xh x (n x xh) = n - (n.xh) xh
    let trans = n - xi_hat * n_x;
    let us = cvec(&trans) * (-2.0 * I * mu * ks * n_x * ph_s);
    FarFieldSample {
        xi_hat: *xi_hat,
        up,
        us,
    }
}
