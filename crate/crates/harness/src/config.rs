//! Run configuration: TOML with one table per concern.
//!
//! ```toml
//! seed = 7
//! suites = ["group", "strata"]
//!
//! [orbifold]
//! preset = "football"
//! order = 3
//! ```
//!
//! A custom orbifold gives `model`, `dim`, `radius` (flat only) and
//! `generators`, each a row-major square matrix in ambient coordinates.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use orbicore::group::{gens, ORTHO_TOL};
use orbicore::linalg::orthogonality_residual;
use orbicore::orbifold::{product, GoodOrbifold};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const SUITES: [&str; 7] = ["group", "strata", "maps", "tangent", "riemann", "theorem1", "corollary2"];

pub const PRESETS: [&str; 9] = [
    "football",
    "line_mod_reflection",
    "mirror_plane",
    "cyclic_plane",
    "dihedral_plane",
    "square_corner",
    "flat_manifold",
    "sphere_manifold",
    "symmetric3",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "all_suites")]
    pub suites: Vec<String>,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default)]
    pub orbifold: OrbifoldSpec,
    #[serde(default)]
    pub atlas: AtlasSpec,
    #[serde(default)]
    pub grids: GridSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub riemann: RiemannSpec,
    #[serde(default)]
    pub dump: DumpSpec,
}

fn all_suites() -> Vec<String> {
    SUITES.iter().map(|s| s.to_string()).collect()
}

fn default_out() -> String {
    "orbicheck-out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbifoldSpec {
    pub preset: Option<String>,
    /// Group order parameter of the cyclic and dihedral presets.
    pub order: Option<usize>,
    /// `"flat"` or `"sphere"` for custom groups.
    pub model: Option<String>,
    /// Intrinsic dimension.
    pub dim: Option<usize>,
    pub radius: Option<f64>,
    #[serde(default)]
    pub generators: Vec<Vec<f64>>,
    pub name: Option<String>,
}

impl Default for OrbifoldSpec {
    fn default() -> Self {
        OrbifoldSpec {
            preset: Some("football".into()),
            order: Some(3),
            model: None,
            dim: None,
            radius: None,
            generators: Vec::new(),
            name: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasSpec {
    /// Sample points per axis inside each chart.
    pub chart_samples: usize,
}

impl Default for AtlasSpec {
    fn default() -> Self {
        AtlasSpec { chart_samples: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub strata: usize,
    pub cover: usize,
    pub target: usize,
    pub dump: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { strata: 64, cover: 48, target: 16, dump: 24 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub equivariance: f64,
    pub roundtrip: f64,
    pub averaging: f64,
    pub partition: f64,
    pub representative: f64,
    pub idempotence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            equivariance: 1e-9,
            roundtrip: 1e-8,
            averaging: 1e-10,
            partition: 1e-9,
            representative: 1e-9,
            idempotence: 1e-12,
        }
    }
}

impl Tolerances {
    pub fn scaled(&self, s: f64) -> Tolerances {
        Tolerances {
            equivariance: self.equivariance * s,
            roundtrip: self.roundtrip * s,
            averaging: self.averaging * s,
            partition: self.partition * s,
            representative: self.representative * s,
            idempotence: self.idempotence * s,
        }
    }

    fn fields(&self) -> [(&'static str, f64); 6] {
        [
            ("equivariance", self.equivariance),
            ("roundtrip", self.roundtrip),
            ("averaging", self.averaging),
            ("partition", self.partition),
            ("representative", self.representative),
            ("idempotence", self.idempotence),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiemannSpec {
    /// Random orbisections per roundtrip check.
    pub samples: usize,
    /// C¹ seminorm of the random orbisections.
    pub c1_norm: f64,
    /// Radius of the sampled exp homeomorphism check.
    pub exp_radius: f64,
    /// Random `(γ, x, v)` triples for representative independence.
    pub triples: usize,
}

impl Default for RiemannSpec {
    fn default() -> Self {
        RiemannSpec { samples: 50, c1_norm: 0.04, exp_radius: 0.3, triples: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpSpec {
    /// `"random"` or `"zero"`.
    pub orbisection: String,
}

impl Default for DumpSpec {
    fn default() -> Self {
        DumpSpec { orbisection: "random".into() }
    }
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            suites: all_suites(),
            out: default_out(),
            orbifold: OrbifoldSpec::default(),
            atlas: AtlasSpec::default(),
            grids: GridSpec::default(),
            tolerances: Tolerances::default(),
            riemann: RiemannSpec::default(),
            dump: DumpSpec::default(),
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::ConfigInvalid { field: field.to_string(), message: message.into() }
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: SuiteConfig = toml::from_str(text).map_err(|e| invalid("toml", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        for s in &self.suites {
            if !SUITES.contains(&s.as_str()) {
                return Err(invalid("suites", format!("unknown suite `{s}`; expected one of {SUITES:?}")));
            }
        }
        for (name, v) in self.tolerances.fields() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(&format!("tolerances.{name}"), format!("must be positive, got {v}")));
            }
        }
        if self.atlas.chart_samples < 2 {
            return Err(invalid("atlas.chart_samples", "need at least 2 samples per axis"));
        }
        for (name, v) in [
            ("grids.strata", self.grids.strata),
            ("grids.cover", self.grids.cover),
            ("grids.target", self.grids.target),
            ("grids.dump", self.grids.dump),
        ] {
            if v < 2 {
                return Err(invalid(name, format!("resolution must be at least 2, got {v}")));
            }
        }
        if !(self.riemann.c1_norm >= 0.0 && self.riemann.c1_norm < 1.0) {
            return Err(invalid("riemann.c1_norm", "must lie in [0, 1)"));
        }
        if !(self.riemann.exp_radius > 0.0) {
            return Err(invalid("riemann.exp_radius", "must be positive"));
        }
        if !["random", "zero"].contains(&self.dump.orbisection.as_str()) {
            return Err(invalid("dump.orbisection", "expected `random` or `zero`"));
        }
        self.build_orbifold().map(|_| ())
    }

    /// Builds the configured orbifold; every failure names its field.
    pub fn build_orbifold(&self) -> Result<Arc<GoodOrbifold>, HarnessError> {
        let spec = &self.orbifold;
        let radius = spec.radius.unwrap_or(1.0);
        if !(radius > 0.0) {
            return Err(invalid("orbifold.radius", "must be positive"));
        }
        let o = match spec.preset.as_deref() {
            Some(p) => {
                if !spec.generators.is_empty() || spec.model.is_some() {
                    return Err(invalid("orbifold.preset", "a preset cannot be combined with model or generators"));
                }
                let order = |min: usize| -> Result<usize, HarnessError> {
                    let k = spec.order.ok_or_else(|| invalid("orbifold.order", format!("preset `{p}` needs an order")))?;
                    if k < min {
                        return Err(invalid("orbifold.order", format!("must be at least {min}, got {k}")));
                    }
                    Ok(k)
                };
                let dim = spec.dim.unwrap_or(2);
                match p {
                    "football" => GoodOrbifold::football(order(2)?),
                    "line_mod_reflection" => GoodOrbifold::line_mod_reflection(radius),
                    "mirror_plane" => GoodOrbifold::mirror_plane(radius),
                    "cyclic_plane" => GoodOrbifold::cyclic_plane(order(1)?, radius),
                    "dihedral_plane" => GoodOrbifold::dihedral_plane(order(1)?, radius),
                    "square_corner" => {
                        let line = GoodOrbifold::line_mod_reflection(radius);
                        product(&line, &line).map_err(|e| invalid("orbifold.preset", e.to_string()))?
                    }
                    "flat_manifold" => GoodOrbifold::flat_manifold(dim, radius),
                    "sphere_manifold" => GoodOrbifold::sphere_manifold(dim),
                    // S₃ acting on the plane as the symmetries of a triangle
                    "symmetric3" => GoodOrbifold::flat(
                        2,
                        radius,
                        &[gens::rotation2(2.0 * std::f64::consts::PI / 3.0), gens::flip(2, 1)],
                    )
                    .map_err(|e| invalid("orbifold.preset", e.to_string()))?
                    .named("symmetric3"),
                    other => {
                        return Err(invalid("orbifold.preset", format!("unknown builtin `{other}`; expected one of {PRESETS:?}")))
                    }
                }
            }
            None => {
                let model = spec.model.as_deref().ok_or_else(|| invalid("orbifold.model", "missing (or give a preset)"))?;
                let dim = spec.dim.ok_or_else(|| invalid("orbifold.dim", "missing"))?;
                let n = match model {
                    "flat" => dim,
                    "sphere" => dim + 1,
                    other => return Err(invalid("orbifold.model", format!("expected `flat` or `sphere`, got `{other}`"))),
                };
                let mut mats = Vec::new();
                for (k, g) in spec.generators.iter().enumerate() {
                    let field = format!("orbifold.generators[{k}]");
                    if g.len() != n * n {
                        return Err(invalid(&field, format!("expected {} entries ({n}×{n} row-major), got {}", n * n, g.len())));
                    }
                    let m = DMatrix::from_row_slice(n, n, g);
                    let r = orthogonality_residual(&m);
                    if !(r <= ORTHO_TOL) {
                        return Err(invalid(&field, format!("matrix {g:?} is not orthogonal (residual {r:e})")));
                    }
                    mats.push(m);
                }
                let built = if model == "flat" { GoodOrbifold::flat(dim, radius, &mats) } else { GoodOrbifold::sphere(dim, &mats) };
                built.map_err(|e| invalid("orbifold.generators", e.to_string()))?
            }
        };
        Ok(Arc::new(match &spec.name {
            Some(n) => o.named(n),
            None => o,
        }))
    }
}
