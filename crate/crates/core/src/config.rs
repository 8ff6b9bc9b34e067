//! Experiment configuration: structured-text (TOML) parsing, presets, and
//! construction of the concrete objects (mesh, medium, excitation set,
//! stiffness truth field) an experiment runs on.
//!
//! A configuration has seven sections — `geometry`, `medium`, `frequency`,
//! `grid`, `stiffness`, `noise`, `inversion` — all serializable, so every
//! preset can be dumped, edited and re-read. Complex stiffness levels are
//! written as two-element arrays `[re, im]` with `im <= 0` (passivity).

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::forward::StiffnessField;
use crate::glsm::ObservationGrid;
use crate::kernels::{ElasticMedium, IncidentPlaneWave};
use crate::mesh::{
    build_cylindrical_patch, build_penny, interior_collocation, CollocationSet, FractureMesh,
};
use crate::{Error, Result};

/// Complex number in config files, stored as `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexLevel(pub f64, pub f64);

impl ComplexLevel {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.0, self.1)
    }
}

/// Fracture surface geometry and its discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometryConfig {
    /// Open cylindrical patch: `width` along the axis, `arclength` along
    /// the circumference, meshed `n_u x n_v` (arc x axis).
    Cylinder {
        width: f64,
        arclength: f64,
        radius: f64,
        n_u: usize,
        n_v: usize,
    },
    /// Flat penny of the given radius with `rings` concentric rings.
    Penny { radius: f64, rings: usize },
}

impl GeometryConfig {
    pub fn build_mesh(&self) -> Result<FractureMesh> {
        match *self {
            GeometryConfig::Cylinder {
                width,
                arclength,
                radius,
                n_u,
                n_v,
            } => build_cylindrical_patch(width, arclength, radius, n_u, n_v),
            GeometryConfig::Penny { radius, rings } => build_penny(radius, rings),
        }
    }

    /// Reference length `ell` used by the wavelength ratio: the arclength
    /// for a cylinder, the diameter for a penny.
    pub fn reference_length(&self) -> f64 {
        match *self {
            GeometryConfig::Cylinder { arclength, .. } => arclength,
            GeometryConfig::Penny { radius, .. } => 2.0 * radius,
        }
    }

    /// Normalized in-surface coordinates `(s, t)` in `[0, 1]^2` of a point
    /// on (or near) the surface; `t` is the width coordinate that stripe
    /// patterns alternate along.
    pub fn local_coords(&self, p: &Vector3<f64>) -> (f64, f64) {
        match *self {
            GeometryConfig::Cylinder {
                width,
                arclength,
                radius,
                ..
            } => {
                let th = p.x.atan2(p.z);
                let s = (th * radius / arclength + 0.5).clamp(0.0, 1.0);
                let t = (p.y / width + 0.5).clamp(0.0, 1.0);
                (s, t)
            }
            GeometryConfig::Penny { radius, .. } => (
                (p.x / (2.0 * radius) + 0.5).clamp(0.0, 1.0),
                (p.y / (2.0 * radius) + 0.5).clamp(0.0, 1.0),
            ),
        }
    }

    /// Axis-aligned half-extent of a box that encloses the surface with a
    /// margin, used as the default sampling region.
    pub fn bounding_half_extent(&self) -> Vector3<f64> {
        let pad = 1.3;
        match *self {
            GeometryConfig::Cylinder {
                width,
                arclength,
                radius,
                ..
            } => {
                let half_angle = arclength / (2.0 * radius);
                Vector3::new(
                    (radius * half_angle.sin()).max(0.1 * radius) * pad,
                    width / 2.0 * pad,
                    radius * pad,
                )
            }
            GeometryConfig::Penny { radius, .. } => {
                Vector3::new(radius * pad, radius * pad, 0.5 * radius * pad)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        // Constructive validation: the mesh builders check all bounds.
        self.build_mesh().map(|_| ())
    }
}

/// Background medium; `c_p > c_s > 0`, `rho > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    pub rho: f64,
    pub c_p: f64,
    pub c_s: f64,
}

impl Default for MediumConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            c_p: 2.08,
            c_s: 1.0,
        }
    }
}

impl MediumConfig {
    pub fn medium(&self) -> Result<ElasticMedium> {
        ElasticMedium::from_speeds(self.rho, self.c_p, self.c_s)
    }
}

/// Excitation frequency, given either as the shear wavelength over the
/// geometric reference length or as the shear wavenumber directly
/// (exactly one of the two).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    pub lambda_s_over_ell: Option<f64>,
    pub k_s: Option<f64>,
}

impl FrequencyConfig {
    /// Angular frequency `omega = k_s c_s`.
    pub fn omega(&self, geometry: &GeometryConfig, medium: &ElasticMedium) -> Result<f64> {
        let k_s = match (self.lambda_s_over_ell, self.k_s) {
            (Some(ratio), None) => {
                if !(ratio > 0.0) {
                    return Err(Error::Config(format!(
                        "lambda_s_over_ell must be positive, got {ratio}"
                    )));
                }
                2.0 * std::f64::consts::PI / (ratio * geometry.reference_length())
            }
            (None, Some(k_s)) => {
                if !(k_s > 0.0) {
                    return Err(Error::Config(format!("k_s must be positive, got {k_s}")));
                }
                k_s
            }
            _ => {
                return Err(Error::Config(
                    "frequency needs exactly one of lambda_s_over_ell and k_s".into(),
                ))
            }
        };
        Ok(k_s * medium.c_s())
    }
}

/// Full-sphere observation/illumination directions (`n_theta x n_phi`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl GridConfig {
    pub fn observation_grid(&self) -> Result<ObservationGrid> {
        ObservationGrid::full_sphere(self.n_theta, self.n_phi)
    }
}

/// Named truth pattern of the interfacial stiffness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternName {
    Uniform,
    Zebra,
    CheetahLike,
}

/// Ground-truth specific-stiffness profile `K = diag(kappa_n, kappa_s,
/// kappa_s)` in the local `(n, e1, e2)` frame.
///
/// `uniform` uses the primary level everywhere; `zebra` alternates the
/// primary and alternate levels over `stripes` bands of the width
/// coordinate; `cheetah-like` is an analytic smooth-bump field that blends
/// the primary (background) level into the alternate (spot) level on a
/// fixed set of Gaussian spots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StiffnessTruthConfig {
    pub pattern: PatternName,
    pub kappa_n: ComplexLevel,
    pub kappa_s: ComplexLevel,
    #[serde(default)]
    pub kappa_n_alt: Option<ComplexLevel>,
    #[serde(default)]
    pub kappa_s_alt: Option<ComplexLevel>,
    #[serde(default = "default_stripes")]
    pub stripes: usize,
}

fn default_stripes() -> usize {
    2
}

/// Fixed spot centers (normalized coordinates) and width of the
/// cheetah-like bump field.
const CHEETAH_SPOTS: [(f64, f64); 5] = [
    (0.22, 0.25),
    (0.70, 0.18),
    (0.50, 0.55),
    (0.25, 0.78),
    (0.78, 0.72),
];
const CHEETAH_WIDTH: f64 = 0.13;

impl StiffnessTruthConfig {
    fn levels(&self) -> Result<(Complex64, Complex64, Complex64, Complex64)> {
        let need_alt = !matches!(self.pattern, PatternName::Uniform);
        let (kn1, ks1) = (self.kappa_n.value(), self.kappa_s.value());
        let kn2 = self.kappa_n_alt.map(|v| v.value());
        let ks2 = self.kappa_s_alt.map(|v| v.value());
        if need_alt && (kn2.is_none() || ks2.is_none()) {
            return Err(Error::Config(format!(
                "pattern {:?} needs kappa_n_alt and kappa_s_alt",
                self.pattern
            )));
        }
        for k in [Some(kn1), Some(ks1), kn2, ks2].into_iter().flatten() {
            if k.im > 0.0 {
                return Err(Error::Config(format!(
                    "stiffness level {k} has Im > 0 (energy gain)"
                )));
            }
        }
        Ok((kn1, ks1, kn2.unwrap_or(kn1), ks2.unwrap_or(ks1)))
    }

    /// `(kappa_n, kappa_s)` at normalized surface coordinates `(s, t)`.
    pub fn sample(&self, s: f64, t: f64) -> Result<(Complex64, Complex64)> {
        let (kn1, ks1, kn2, ks2) = self.levels()?;
        match self.pattern {
            PatternName::Uniform => Ok((kn1, ks1)),
            PatternName::Zebra => {
                if self.stripes == 0 {
                    return Err(Error::Config("stripe count must be positive".into()));
                }
                let band = ((t * self.stripes as f64).floor() as usize).min(self.stripes - 1);
                if band % 2 == 0 {
                    Ok((kn1, ks1))
                } else {
                    Ok((kn2, ks2))
                }
            }
            PatternName::CheetahLike => {
                let mut w = 0.0;
                for (sc, tc) in CHEETAH_SPOTS {
                    let d2 = (s - sc).powi(2) + (t - tc).powi(2);
                    w += (-d2 / (2.0 * CHEETAH_WIDTH * CHEETAH_WIDTH)).exp();
                }
                let w = w.min(1.0);
                let blend = |a: Complex64, b: Complex64| a + (b - a) * w;
                Ok((blend(kn1, kn2), blend(ks1, ks2)))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if matches!(self.pattern, PatternName::Zebra) && self.stripes == 0 {
            return Err(Error::Config("stripe count must be positive".into()));
        }
        self.levels().map(|_| ())
    }
}

/// Builds the truth [`StiffnessField`] at the collocation points of a mesh
/// generated by `geometry`.
pub fn make_stiffness_pattern(
    truth: &StiffnessTruthConfig,
    geometry: &GeometryConfig,
    colloc: &CollocationSet,
) -> Result<StiffnessField> {
    truth.validate()?;
    let mut k = Vec::with_capacity(colloc.points.len());
    for p in &colloc.points {
        let (s, t) = geometry.local_coords(&p.position);
        let (kn, ks) = truth.sample(s, t)?;
        k.push(Matrix3::from_diagonal(&Vector3::new(kn, ks, ks)));
    }
    StiffnessField::new(k)
}

/// Multiplicative data noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Relative noise level (0 disables noise).
    pub level: f64,
    pub seed: u64,
}

/// Mode of the stiffness inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMode {
    Diagonal,
    Full,
}

/// Regularization and reconstruction parameters for the inverse stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionConfig {
    /// GLSM penalization rule `alpha = alpha_over_delta_sq * delta^2`.
    #[serde(default = "default_one")]
    pub alpha_over_delta_sq: f64,
    /// Data-perturbation measure `delta`; defaults to the noise level.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Suppressed-mode rule: singular values below this fraction of the
    /// largest count toward `Q`.
    #[serde(default = "default_q_fraction")]
    pub q_fraction: f64,
    /// Absolute spectral truncation threshold of the traction operator.
    #[serde(default = "default_delta_trunc")]
    pub delta_trunc: f64,
    /// Indicator support threshold (fraction of the map maximum).
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Morozov discrepancy level for the contact-law (stiffness) solve.
    /// The right-hand side of that system carries the opening-displacement
    /// reconstruction error, which is typically several times larger than
    /// the raw data noise.
    #[serde(default = "default_delta_kappa")]
    pub delta_kappa: f64,
    pub mode: InversionMode,
    /// GLSM sampling grid resolution per axis.
    #[serde(default = "default_glsm_grid")]
    pub glsm_grid: [usize; 3],
    /// Reconstructed-surface mesh resolution (`n_s x n_t`).
    #[serde(default = "default_surface_res")]
    pub surface_n_s: usize,
    #[serde(default = "default_surface_res")]
    pub surface_n_t: usize,
    /// Collocation points per element in the forward/inverse operators.
    #[serde(default = "default_colloc")]
    pub colloc_per_element: usize,
}

fn default_one() -> f64 {
    1.0
}
fn default_q_fraction() -> f64 {
    crate::fod::DEFAULT_Q_FRACTION
}
fn default_delta_trunc() -> f64 {
    crate::stiffness::DEFAULT_DELTA_TRUNC
}
fn default_tau() -> f64 {
    0.2
}
fn default_delta_kappa() -> f64 {
    0.2
}
fn default_glsm_grid() -> [usize; 3] {
    [12, 12, 12]
}
fn default_surface_res() -> usize {
    8
}
fn default_colloc() -> usize {
    4
}

impl InversionConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha_over_delta_sq > 0.0) {
            return Err(Error::Config(format!(
                "alpha_over_delta_sq must be positive, got {}",
                self.alpha_over_delta_sq
            )));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(Error::Config(format!("delta must be positive, got {d}")));
            }
        }
        if !(self.q_fraction > 0.0 && self.q_fraction < 1.0) {
            return Err(Error::Config(format!(
                "q_fraction must lie in (0, 1), got {}",
                self.q_fraction
            )));
        }
        if !(self.delta_trunc > 0.0) {
            return Err(Error::Config(format!(
                "delta_trunc must be positive, got {}",
                self.delta_trunc
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if !(self.delta_kappa > 0.0 && self.delta_kappa < 1.0) {
            return Err(Error::Config(format!(
                "delta_kappa must lie in (0, 1), got {}",
                self.delta_kappa
            )));
        }
        Ok(())
    }
}

/// Complete description of a synthetic sensing experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub medium: MediumConfig,
    pub frequency: FrequencyConfig,
    pub grid: GridConfig,
    pub stiffness: StiffnessTruthConfig,
    pub noise: NoiseConfig,
    pub inversion: InversionConfig,
}

impl ExperimentConfig {
    /// Parses a configuration from structured text, reporting the
    /// offending line and key on failure.
    pub fn from_str(text: &str, path: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0);
            Error::Parse {
                path: path.to_string(),
                line,
                msg: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a configuration file.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text, &path.display().to_string())
    }

    /// Serializes the configuration to structured text.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialization failed: {e}")))
    }

    /// Checks every block for consistency.
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let med = self.medium.medium()?;
        self.frequency.omega(&self.geometry, &med)?;
        self.grid.observation_grid()?;
        self.stiffness.validate()?;
        if !(self.noise.level >= 0.0) {
            return Err(Error::Config(format!(
                "noise level must be nonnegative, got {}",
                self.noise.level
            )));
        }
        self.inversion.validate()?;
        Ok(())
    }

    pub fn medium(&self) -> Result<ElasticMedium> {
        self.medium.medium()
    }

    pub fn omega(&self) -> Result<f64> {
        self.frequency.omega(&self.geometry, &self.medium.medium()?)
    }

    /// Data-perturbation measure for the regularized stages: the explicit
    /// `delta` override, else the noise level, else a small floor for
    /// noise-free runs.
    pub fn delta(&self) -> f64 {
        self.inversion
            .delta
            .unwrap_or(if self.noise.level > 0.0 {
                self.noise.level
            } else {
                1e-6
            })
    }

    /// Builds the true fracture mesh.
    pub fn build_mesh(&self) -> Result<FractureMesh> {
        self.geometry.build_mesh()
    }

    /// Collocation set used on any mesh of this experiment.
    pub fn collocation(&self, mesh: &FractureMesh) -> Result<CollocationSet> {
        interior_collocation(mesh, self.inversion.colloc_per_element)
    }

    /// Illumination set matching the GLSM far-field operator layout: for
    /// each grid direction `d` a P wave along `d` and two S waves along
    /// the transverse frame of `d` (grid-major, P/S1/S2 fastest).
    pub fn incident_waves(&self) -> Result<Vec<IncidentPlaneWave>> {
        let omega = self.omega()?;
        let grid = self.grid.observation_grid()?;
        let mut waves = Vec::with_capacity(3 * grid.len());
        for d in grid.directions() {
            let (e1, e2) = crate::glsm::transverse_frame(d);
            waves.push(IncidentPlaneWave::p_wave(*d, 1.0, omega)?);
            waves.push(IncidentPlaneWave::s_wave(*d, e1, omega)?);
            waves.push(IncidentPlaneWave::s_wave(*d, e2, omega)?);
        }
        Ok(waves)
    }

    /// Truth stiffness field at the collocation points.
    pub fn truth_field(&self, colloc: &CollocationSet) -> Result<StiffnessField> {
        make_stiffness_pattern(&self.stiffness, &self.geometry, colloc)
    }

    /// Named preset configurations.
    pub fn preset(name: &str) -> Result<Self> {
        let cylinder = GeometryConfig::Cylinder {
            width: 0.7,
            arclength: 0.55,
            radius: 0.35,
            n_u: 12,
            n_v: 16,
        };
        let zebra_truth = StiffnessTruthConfig {
            pattern: PatternName::Zebra,
            kappa_n: ComplexLevel(8.0, -1.6),
            kappa_s: ComplexLevel(5.0, -1.0),
            kappa_n_alt: Some(ComplexLevel(2.0, -0.4)),
            kappa_s_alt: Some(ComplexLevel(1.25, -0.25)),
            stripes: 4,
        };
        let inversion = InversionConfig {
            alpha_over_delta_sq: 1.0,
            delta: None,
            q_fraction: default_q_fraction(),
            delta_trunc: default_delta_trunc(),
            tau: 0.2,
            delta_kappa: default_delta_kappa(),
            mode: InversionMode::Diagonal,
            glsm_grid: [14, 14, 14],
            surface_n_s: 10,
            surface_n_t: 12,
            colloc_per_element: 4,
        };
        let full = Self {
            geometry: cylinder.clone(),
            medium: MediumConfig::default(),
            frequency: FrequencyConfig {
                lambda_s_over_ell: Some(0.7),
                k_s: None,
            },
            grid: GridConfig {
                n_theta: 25,
                n_phi: 12,
            },
            stiffness: zebra_truth.clone(),
            noise: NoiseConfig {
                level: 0.05,
                seed: 1,
            },
            inversion: inversion.clone(),
        };
        match name {
            "zebra" => Ok(full),
            "cheetah" => Ok(Self {
                stiffness: StiffnessTruthConfig {
                    pattern: PatternName::CheetahLike,
                    ..zebra_truth
                },
                ..full
            }),
            "zebra-mini" => Ok(Self {
                geometry: GeometryConfig::Cylinder {
                    width: 0.7,
                    arclength: 0.55,
                    radius: 0.35,
                    n_u: 9,
                    n_v: 10,
                },
                grid: GridConfig {
                    n_theta: 12,
                    n_phi: 8,
                },
                stiffness: StiffnessTruthConfig {
                    stripes: 2,
                    ..zebra_truth
                },
                inversion: InversionConfig {
                    glsm_grid: [10, 10, 10],
                    surface_n_s: 8,
                    surface_n_t: 9,
                    ..inversion
                },
                ..full
            }),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected zebra, cheetah or zebra-mini)"
            ))),
        }
    }
}
