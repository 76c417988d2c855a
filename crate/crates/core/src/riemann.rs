//! Equivariant Riemannian structure and the exponential chart
//! `σ ↦ E^σ = exp ∘ σ` of the diffeomorphism group.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::group::{self, GroupHom, GROUP_EPS};
use crate::linalg;
use crate::maps::{compose, enumerate_identity_lifts, identity_lift_assignment, OrbifoldMapData};
use crate::orbifold::{Atlas, DerivedChart, GoodOrbifold, ModelSpace, QuotientPoint};
use crate::tangent::{admissible_space, linear_combination, seminorm, Orbisection, TangentVectorAt};
use crate::{Error, Point, PointMap, Result};

pub type MetricMap = Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>;

/// Weights below this total signal a point outside every chart.
pub const COVER_GAP_TOL: f64 = 1e-12;

fn bump(model: &ModelSpace, chart: &DerivedChart, y: &Point) -> f64 {
    let d = model.distance(&chart.center, y) / chart.radius;
    if d >= 1.0 {
        0.0
    } else {
        let u = 1.0 - d * d;
        u * u * u
    }
}

/// Partition of unity built from radial bumps `(1 − d²/r²)³`, pushed to the
/// quotient and normalized.
#[derive(Clone, Debug)]
pub struct PartitionOfUnity {
    pub orbifold: Arc<GoodOrbifold>,
    pub charts: Vec<DerivedChart>,
}

impl PartitionOfUnity {
    /// Quotient-level bump of chart `i` at the model point `y`.
    fn raw(&self, i: usize, y: &Point) -> f64 {
        let c = &self.charts[i];
        let g = &self.orbifold.group;
        g.labels().map(|l| bump(&self.orbifold.model, c, &g.act(l, y))).fold(0.0, f64::max)
    }

    pub fn total(&self, y: &Point) -> f64 {
        (0..self.charts.len()).map(|i| self.raw(i, y)).sum()
    }

    /// All weights at `y`; `CoverGap` if no chart reaches `y`.
    pub fn weights(&self, y: &Point) -> Result<Vec<f64>> {
        let raw: Vec<f64> = (0..self.charts.len()).map(|i| self.raw(i, y)).collect();
        let total: f64 = raw.iter().sum();
        if total < COVER_GAP_TOL {
            return Err(Error::CoverGap { witness: y.as_slice().to_vec() });
        }
        Ok(raw.into_iter().map(|w| w / total).collect())
    }

    /// Weight of chart `i` lifted to the chart:
    /// `(1/|Γ_i|) Σ_γ w_i(γ·ỹ)`.
    pub fn chart_weight(&self, i: usize, y: &Point) -> f64 {
        let iso = &self.charts[i].isotropy;
        let mut acc = 0.0;
        for l in iso.labels() {
            let z = iso.act(l, y);
            let total = self.total(&z);
            if total >= COVER_GAP_TOL {
                acc += self.raw(i, &z) / total;
            }
        }
        acc / iso.order() as f64
    }

    /// `max |Σ_i w_i − 1|` over the points.
    pub fn sum_residual(&self, points: &[Point]) -> Result<f64> {
        let mut r: f64 = 0.0;
        for y in points {
            let s: f64 = self.weights(y)?.iter().sum();
            r = r.max((s - 1.0).abs());
        }
        Ok(r)
    }

    /// `max |w_i(γỹ) − w_i(ỹ)|` over chart samples and chart isotropy.
    pub fn equivariance_residual(&self, per_axis: usize) -> f64 {
        let mut r: f64 = 0.0;
        for (i, c) in self.charts.iter().enumerate() {
            for y in c.grid(&self.orbifold.model, per_axis, 1.0) {
                let w = self.chart_weight(i, &y);
                for l in c.isotropy.labels() {
                    r = r.max((self.chart_weight(i, &c.isotropy.act(l, &y)) - w).abs());
                }
            }
        }
        r
    }
}

/// Partition of unity subordinate to the atlas; the atlas must reach every
/// point of the verification grid.
pub fn equivariant_partition_of_unity(o: Arc<GoodOrbifold>, atlas: &Atlas, grid: &[Point]) -> Result<PartitionOfUnity> {
    let pu = PartitionOfUnity { orbifold: o, charts: atlas.charts.clone() };
    for y in grid {
        pu.weights(y)?;
    }
    Ok(pu)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricAveraging {
    /// `(1/|Γ|) Σ_γ γᵀ g(γỹ) γ`.
    Diagonal,
    /// `(1/|Γ|²) Σ_{γ,μ} γᵀ g(ỹ) μ`, degenerate off the fixed subspace.
    PairedDoubleSum,
}

/// Averages a raw metric field over the chart isotropy. The raw field must
/// be symmetric positive definite on the chart samples.
pub fn average_metric(
    model: &ModelSpace,
    chart: &DerivedChart,
    raw: MetricMap,
    mode: MetricAveraging,
    per_axis: usize,
) -> Result<MetricMap> {
    for y in chart.grid(model, per_axis, 1.0) {
        let m = raw(&y);
        let asym = (&m - m.transpose()).amax();
        let min = linalg::min_eigenvalue(&(0.5 * (&m + m.transpose())));
        if asym > 1e-12 || !(min > 0.0) {
            return Err(Error::NotSpd { min_eigenvalue: min });
        }
    }
    let iso = chart.isotropy.clone();
    Ok(match mode {
        MetricAveraging::Diagonal => Arc::new(move |y: &Point| {
            let mut acc = DMatrix::<f64>::zeros(y.len(), y.len());
            for l in iso.labels() {
                let g = iso.matrix(l);
                acc += g.transpose() * raw(&iso.act(l, y)) * g;
            }
            let acc = acc / iso.order() as f64;
            0.5 * (&acc + acc.transpose())
        }),
        MetricAveraging::PairedDoubleSum => Arc::new(move |y: &Point| {
            let n = y.len();
            let mut p = DMatrix::<f64>::zeros(n, n);
            for l in iso.labels() {
                p += iso.matrix(l);
            }
            p /= iso.order() as f64;
            p.transpose() * raw(y) * &p
        }),
    })
}

/// `max ‖γᵀ g(γỹ) γ − g(ỹ)‖` over chart samples.
pub fn metric_invariance_residual(model: &ModelSpace, chart: &DerivedChart, g: &MetricMap, per_axis: usize) -> f64 {
    let iso = &chart.isotropy;
    let mut r: f64 = 0.0;
    for y in chart.grid(model, per_axis, 1.0) {
        let base = g(&y);
        for l in iso.labels() {
            let m = iso.matrix(l);
            r = r.max((m.transpose() * g(&iso.act(l, &y)) * m - &base).amax());
        }
    }
    r
}

/// Smallest eigenvalue of the field over chart samples.
pub fn metric_min_eigenvalue(model: &ModelSpace, chart: &DerivedChart, g: &MetricMap, per_axis: usize) -> f64 {
    chart
        .grid(model, per_axis, 1.0)
        .iter()
        .map(|y| linalg::min_eigenvalue(&g(y)))
        .fold(f64::INFINITY, f64::min)
}

/// Model-level exponential map.
pub trait ExpLike: Send + Sync {
    fn orbifold(&self) -> &Arc<GoodOrbifold>;
    fn exp_model(&self, x: &Point, v: &Point) -> Result<Point>;
}

pub const ODE_STEPS: usize = 256;
pub const CHRISTOFFEL_STEP: f64 = 1e-4;

#[derive(Clone)]
pub enum ExpMode {
    Flat,
    Sphere,
    /// Geodesic equation of a metric in flat coordinates, RK4 on `t ∈ [0, 1]`.
    Ode { metric: MetricMap, steps: usize },
}

#[derive(Clone)]
pub struct ExpMap {
    pub orbifold: Arc<GoodOrbifold>,
    pub mode: ExpMode,
}

impl std::fmt::Debug for ExpMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mode = match self.mode {
            ExpMode::Flat => "flat",
            ExpMode::Sphere => "sphere",
            ExpMode::Ode { .. } => "ode",
        };
        f.debug_struct("ExpMap").field("orbifold", &self.orbifold.name).field("mode", &mode).finish()
    }
}

fn christoffel_accel(metric: &MetricMap, x: &Point, v: &Point) -> Point {
    let n = x.len();
    let h = CHRISTOFFEL_STEP;
    let g = metric(x);
    let dg: Vec<DMatrix<f64>> = (0..n)
        .map(|i| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (metric(&xp) - metric(&xm)) / (2.0 * h)
        })
        .collect();
    // Γ_{l,ij} v^i v^j = Σ (∂_i g_jl − ½ ∂_l g_ij) v^i v^j
    let mut lower = Point::zeros(n);
    for l in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += (dg[i][(j, l)] - 0.5 * dg[l][(i, j)]) * v[i] * v[j];
            }
        }
        lower[l] = s;
    }
    let sol = g.lu().solve(&lower).unwrap_or_else(|| Point::from_element(n, f64::NAN));
    -sol
}

impl ExpMap {
    /// Closed form matching the model.
    pub fn closed_form(o: Arc<GoodOrbifold>) -> Self {
        let mode = if o.model.is_flat() { ExpMode::Flat } else { ExpMode::Sphere };
        ExpMap { orbifold: o, mode }
    }

    pub fn ode(o: Arc<GoodOrbifold>, metric: MetricMap, steps: usize) -> Result<Self> {
        if !o.model.is_flat() {
            return Err(Error::UnsupportedModel);
        }
        Ok(ExpMap { orbifold: o, mode: ExpMode::Ode { metric, steps: steps.max(1) } })
    }

    /// Inverse of `v ↦ exp(x, v)` near zero.
    pub fn log_model(&self, x: &Point, y: &Point) -> Result<Point> {
        match &self.mode {
            ExpMode::Flat => Ok(y - x),
            ExpMode::Sphere => {
                let d = self.orbifold.model.distance(x, y);
                if d > PI - 1e-6 {
                    return Err(Error::OutOfDomain("log of an antipodal point".into()));
                }
                let w = y - x * x.dot(y);
                let nw = w.norm();
                if nw == 0.0 {
                    return Ok(Point::zeros(x.len()));
                }
                Ok(w * (d / nw))
            }
            ExpMode::Ode { .. } => {
                let mut v = y - x;
                let mut r = self.exp_model(x, &v)? - y;
                for _ in 0..60 {
                    if r.norm() < 1e-14 {
                        break;
                    }
                    let f = |u: &Point| self.exp_model(x, u).unwrap_or_else(|_| Point::from_element(u.len(), f64::NAN));
                    let jac = linalg::jacobian(&f, &v, 1e-6);
                    let step = jac.lu().solve(&r).ok_or_else(|| Error::OutOfDomain("singular exp differential".into()))?;
                    let mut t = 1.0;
                    loop {
                        let cand = &v - &step * t;
                        let rc = self.exp_model(x, &cand)? - y;
                        if rc.norm() < r.norm() || t < 1e-4 {
                            v = cand;
                            r = rc;
                            break;
                        }
                        t *= 0.5;
                    }
                }
                Ok(v)
            }
        }
    }

    /// `exp(p, v)` on the quotient, `v` based at `p`.
    pub fn exp(&self, p: &QuotientPoint, v: &TangentVectorAt) -> Result<QuotientPoint> {
        if v.base != *p {
            return Err(Error::Invalid("tangent vector is based elsewhere".into()));
        }
        let y = self.exp_model(&v.base.representative, &v.vector)?;
        Ok(QuotientPoint::from_model(&self.orbifold.group, y))
    }
}

impl ExpLike for ExpMap {
    fn orbifold(&self) -> &Arc<GoodOrbifold> {
        &self.orbifold
    }

    fn exp_model(&self, x: &Point, v: &Point) -> Result<Point> {
        match &self.mode {
            ExpMode::Flat => Ok(x + v),
            ExpMode::Sphere => {
                let v = v - x * x.dot(v);
                let nv = v.norm();
                if nv >= PI {
                    return Err(Error::OutOfDomain(format!("|v| = {nv} ≥ π on the sphere")));
                }
                if nv == 0.0 {
                    return Ok(x.clone());
                }
                let y = x * nv.cos() + &v * (nv.sin() / nv);
                Ok(&y / y.norm())
            }
            ExpMode::Ode { metric, steps } => {
                let h = 1.0 / *steps as f64;
                let (mut p, mut q) = (x.clone(), v.clone());
                for _ in 0..*steps {
                    let k1p = q.clone();
                    let k1q = christoffel_accel(metric, &p, &q);
                    let p2 = &p + &k1p * (0.5 * h);
                    let q2 = &q + &k1q * (0.5 * h);
                    let k2p = q2.clone();
                    let k2q = christoffel_accel(metric, &p2, &q2);
                    let p3 = &p + &k2p * (0.5 * h);
                    let q3 = &q + &k2q * (0.5 * h);
                    let k3p = q3.clone();
                    let k3q = christoffel_accel(metric, &p3, &q3);
                    let p4 = &p + &k3p * h;
                    let q4 = &q + &k3q * h;
                    let k4p = q4.clone();
                    let k4q = christoffel_accel(metric, &p4, &q4);
                    p += (k1p + &k2p * 2.0 + &k3p * 2.0 + k4p) * (h / 6.0);
                    q += (k1q + &k2q * 2.0 + &k3q * 2.0 + k4q) * (h / 6.0);
                }
                if p.iter().any(|c| !c.is_finite()) {
                    return Err(Error::OutOfDomain("geodesic integration diverged".into()));
                }
                Ok(p)
            }
        }
    }
}

fn random_model_point<R: Rng>(model: &ModelSpace, rng: &mut R, scale: f64) -> Point {
    let n = model.ambient_dim();
    loop {
        let p = Point::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let norm = p.norm();
        if norm > 1.0 || norm < 1e-3 {
            continue;
        }
        return match model {
            ModelSpace::FlatBall { radius, .. } => p * (radius * scale),
            ModelSpace::Sphere { .. } => p / norm,
        };
    }
}

fn random_tangent<R: Rng>(model: &ModelSpace, x: &Point, rng: &mut R, max_len: f64) -> Point {
    let n = x.len();
    let raw = Point::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let v = model.project_tangent(x, &raw);
    let nv = v.norm();
    if nv == 0.0 {
        return v;
    }
    v * (rng.gen_range(0.0..max_len) / nv)
}

/// `max d(π exp(γx̃, γṽ), π exp(x̃, ṽ))` over random triples.
pub fn exp_representative_residual<R: Rng>(e: &ExpMap, rng: &mut R, count: usize, max_len: f64) -> Result<f64> {
    let o = &e.orbifold;
    let mut r: f64 = 0.0;
    for _ in 0..count {
        let x = random_model_point(&o.model, rng, 0.5);
        let v = random_tangent(&o.model, &x, rng, max_len);
        let g = rng.gen_range(0..o.group.order());
        let a = e.exp_model(&x, &v)?;
        let b = e.exp_model(&o.group.act(g, &x), &o.group.act(g, &v))?;
        r = r.max(o.distance_between(&a, &b));
    }
    Ok(r)
}

#[derive(Clone, Debug, Default)]
pub struct HomeoReport {
    pub injective: bool,
    pub surjective: bool,
    pub pairs_checked: usize,
    pub targets_checked: usize,
    /// Largest distance from a target grid point to the sampled image.
    pub coverage_gap: f64,
    pub coverage_tolerance: f64,
    pub witnesses: Vec<String>,
}

impl HomeoReport {
    pub fn pass(&self) -> bool {
        self.injective && self.surjective
    }
}

/// Tangent-ball grid at `x` with `per_axis` points per axis, radius `eps`.
fn tangent_ball(model: &ModelSpace, x: &Point, eps: f64, per_axis: usize) -> Vec<Point> {
    let basis = model.tangent_basis(x);
    linalg::ball_grid(basis.len(), per_axis)
        .into_iter()
        .map(|u| {
            let mut v = Point::zeros(x.len());
            for (b, c) in basis.iter().zip(u.iter()) {
                v += b * *c;
            }
            v * eps
        })
        .collect()
}

/// Sampled local-homeomorphism check of `exp_p` on the ε-ball: distinct
/// tangent classes have distinct images, and the image covers `B(p, ε)`.
pub fn exp_local_homeo_check<E: ExpLike + ?Sized, R: Rng>(
    e: &E,
    p: &QuotientPoint,
    eps: f64,
    samples: usize,
    rng: &mut R,
) -> Result<HomeoReport> {
    let o = e.orbifold().clone();
    let x = &p.representative;
    let iso = group::stabilizer(&o.group, x);
    let mut report = HomeoReport { injective: true, surjective: true, ..Default::default() };
    let class_dist = |v: &Point, w: &Point| iso.labels().map(|l| (iso.act(l, v) - w).norm()).fold(f64::INFINITY, f64::min);
    for _ in 0..samples {
        let v = random_tangent(&o.model, x, rng, eps);
        let w = random_tangent(&o.model, x, rng, eps);
        if class_dist(&v, &w) < 1e-6 {
            continue;
        }
        let d = o.distance_between(&e.exp_model(x, &v)?, &e.exp_model(x, &w)?);
        report.pairs_checked += 1;
        if d < 1e-9 {
            report.injective = false;
            if report.witnesses.len() < 4 {
                report.witnesses.push(format!("v={:?} w={:?} d={d:e}", v.as_slice(), w.as_slice()));
            }
        }
    }
    // grid pairs catch structured collisions that random pairs miss
    let coarse = tangent_ball(&o.model, x, eps, 13);
    let coarse_images: Vec<Point> = coarse.iter().map(|v| e.exp_model(x, v)).collect::<Result<_>>()?;
    for a in 0..coarse.len() {
        for b in a + 1..coarse.len() {
            if class_dist(&coarse[a], &coarse[b]) < 1e-6 {
                continue;
            }
            report.pairs_checked += 1;
            let d = o.distance_between(&coarse_images[a], &coarse_images[b]);
            if d < 1e-9 {
                report.injective = false;
                if report.witnesses.len() < 4 {
                    report.witnesses.push(format!(
                        "v={:?} w={:?} d={d:e}",
                        coarse[a].as_slice(),
                        coarse[b].as_slice()
                    ));
                }
            }
        }
    }
    let per_axis = 25;
    let images: Vec<Point> = tangent_ball(&o.model, x, eps, per_axis)
        .iter()
        .map(|v| e.exp_model(x, v))
        .collect::<Result<_>>()?;
    let tol = 2.0 * eps / (per_axis - 1) as f64;
    report.coverage_tolerance = tol;
    for v in tangent_ball(&o.model, x, 0.95 * eps, 9) {
        let target = o.model.geodesic_step(x, &v, 1.0);
        let gap = images.iter().map(|y| o.distance_between(y, &target)).fold(f64::INFINITY, f64::min);
        report.targets_checked += 1;
        report.coverage_gap = report.coverage_gap.max(gap);
        if gap > tol {
            report.surjective = false;
            if report.witnesses.len() < 8 {
                report.witnesses.push(format!("uncovered {:?} gap={gap:e}", target.as_slice()));
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct StratumReport {
    pub pass: bool,
    pub signature: Vec<usize>,
    pub witnesses: Vec<String>,
}

/// Checks that `exp(p, t·v)` keeps the isotropy signature of `p` for `t`
/// on a grid of `[0, 1]`; `v` should be admissible.
pub fn exp_stratum_check(e: &ExpMap, p: &QuotientPoint, v: &Point, t_count: usize) -> Result<StratumReport> {
    let o = &e.orbifold;
    let x = &p.representative;
    let signature = group::stabilizer_labels(&o.group, x);
    let mut witnesses = Vec::new();
    for t in linalg::linspace(0.0, 1.0, t_count.max(2)) {
        let y = e.exp_model(x, &(v * t))?;
        let sig = group::stabilizer_labels(&o.group, &y);
        if sig != signature {
            witnesses.push(format!("t={t} signature {sig:?}"));
        }
    }
    Ok(StratumReport { pass: witnesses.is_empty(), signature, witnesses })
}

/// Admissible vector of the given length at `p` (first basis direction), or
/// zero when only the zero vector is admissible.
pub fn admissible_direction(o: &GoodOrbifold, p: &QuotientPoint, len: f64) -> Point {
    admissible_space(o, p)
        .first()
        .map(|b| b * len)
        .unwrap_or_else(|| Point::zeros(o.ambient_dim()))
}

/// `E^σ`: lifts `ỹ ↦ exp(ỹ, σ̃(ỹ))` with Θ the identity on every chart.
pub fn e_apply(sigma: &Orbisection, e: &ExpMap) -> Result<OrbifoldMapData> {
    let o = sigma.orbifold.clone();
    if !o.model.is_flat() {
        let sup = seminorm(sigma, 0, 5);
        if sup >= PI {
            return Err(Error::OutOfDomain(format!("sup |σ| = {sup} ≥ π")));
        }
    }
    let n = o.ambient_dim();
    let lift_of = |field: PointMap| -> PointMap {
        let e = e.clone();
        Arc::new(move |y: &Point| e.exp_model(y, &field(y)).unwrap_or_else(|_| Point::from_element(n, f64::NAN)))
    };
    let lifts: Vec<PointMap> = sigma.fields.iter().map(|f| lift_of(f.clone())).collect();
    let thetas = sigma.charts.iter().map(|c| GroupHom::identity(c.isotropy.clone())).collect();
    let underlying = sigma.global.clone().map(lift_of);
    OrbifoldMapData::new(o.clone(), o, sigma.charts.clone(), sigma.charts.clone(), lifts, thetas, usize::MAX, underlying)
}

/// Per-chart bound on `d₀(f, Id)` accepted by [`e_inverse`].
pub fn injectivity_scale(chart: &DerivedChart) -> f64 {
    0.5 * chart.radius
}

/// `σ̃(ỹ) = exp_ỹ⁻¹(f̃(ỹ))` per chart, for `f` with identity Θ close to the
/// identity.
pub fn e_inverse(f: &OrbifoldMapData, e: &ExpMap) -> Result<Orbisection> {
    let o = f.source.clone();
    let model = o.model.clone();
    for (i, th) in f.thetas.iter().enumerate() {
        if !th.is_identity() {
            return Err(Error::ThetaNotIdentity { chart: i });
        }
    }
    for (i, c) in f.charts.iter().enumerate() {
        let bound = injectivity_scale(c);
        let d = c
            .grid(&model, 7, 1.0)
            .iter()
            .map(|y| model.distance(&f.eval(i, y), y))
            .fold(0.0, f64::max);
        if !(d < bound) {
            return Err(Error::NotCloseToIdentity { distance: d, bound });
        }
    }
    let n = o.ambient_dim();
    let field_of = |lift: PointMap| -> PointMap {
        let e = e.clone();
        Arc::new(move |y: &Point| e.log_model(y, &lift(y)).unwrap_or_else(|_| Point::from_element(n, f64::NAN)))
    };
    let fields: Vec<PointMap> = f.lifts.iter().map(|l| field_of(l.clone())).collect();
    // the underlying representative gives a global field when it matches
    // every chart lift
    let global = f.underlying.as_ref().and_then(|u| {
        let agrees = f.charts.iter().enumerate().all(|(i, c)| {
            c.grid(&model, 5, 1.0).iter().all(|y| (u(y) - f.eval(i, y)).norm() < 1e-12)
        });
        agrees.then(|| field_of(u.clone()))
    });
    Ok(Orbisection { orbifold: o, charts: f.charts.clone(), fields, global })
}

/// Sampled `d₀` between lifts on a common atlas using model distances and
/// target-isotropy matching.
pub fn model_sup_distance(f: &OrbifoldMapData, g: &OrbifoldMapData, per_axis: usize) -> f64 {
    let model = &f.source.model;
    let mut out: f64 = 0.0;
    for (i, c) in f.charts.iter().enumerate() {
        let samples = c.grid(model, per_axis, 1.0);
        let iso = &f.target_charts[i].isotropy;
        let best = iso
            .labels()
            .map(|l| {
                samples
                    .iter()
                    .map(|y| f.target.model.distance(&f.eval(i, y), &iso.act(l, &g.eval(i, y))))
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        out = out.max(best);
    }
    out
}

/// Fractions of the chart radius for the covering `D_i ⊂ C_i`.
pub const INNER_FRACTION: f64 = 0.7;

#[derive(Clone, Debug, Default)]
pub struct DiffeoReport {
    pub injective: bool,
    pub surjective: bool,
    pub margin_ok: bool,
    /// `d₀(f, Id)`.
    pub displacement: f64,
    /// `½ min δ_i`.
    pub margin_bound: f64,
    pub coverage_gap: f64,
    pub coverage_tolerance: f64,
    pub witnesses: Vec<String>,
}

impl DiffeoReport {
    pub fn pass(&self) -> bool {
        self.injective && self.surjective && self.margin_ok
    }
}

/// Sampled diffeomorphism check with covering `D_i` (radius `0.7 r_i`)
/// inside the charts `C_i`: chartwise injectivity, covering of a target
/// grid, and `d₀(f, Id) < ½ min δ_i`.
pub fn verify_diffeo(f: &OrbifoldMapData, per_axis: usize, target_resolution: usize) -> Result<DiffeoReport> {
    let o = f.source.clone();
    let model = &o.model;
    let mut rep = DiffeoReport { injective: true, surjective: true, ..Default::default() };
    let mut images: Vec<Point> = Vec::new();
    let mut spacing: f64 = 0.0;
    for (i, c) in f.charts.iter().enumerate() {
        let samples = c.grid(model, per_axis, 1.0);
        let vals: Vec<Point> = samples.iter().map(|y| f.eval(i, y)).collect();
        for a in 0..samples.len() {
            for b in a + 1..samples.len() {
                if o.distance_between(&samples[a], &samples[b]) < 1e-9 {
                    continue;
                }
                if f.target.distance_between(&vals[a], &vals[b]) < 1e-9 {
                    rep.injective = false;
                    if rep.witnesses.len() < 4 {
                        rep.witnesses.push(format!(
                            "chart {i}: {:?} and {:?} share an image",
                            samples[a].as_slice(),
                            samples[b].as_slice()
                        ));
                    }
                }
            }
        }
        images.extend(vals);
        spacing = spacing.max(2.0 * c.radius / (per_axis - 1) as f64);
    }
    rep.coverage_tolerance = spacing;
    let targets = f.target.model.grid(target_resolution)?.points;
    for z in &targets {
        let gap = images.iter().map(|y| f.target.distance_between(y, z)).fold(f64::INFINITY, f64::min);
        rep.coverage_gap = rep.coverage_gap.max(gap);
        if gap > spacing {
            rep.surjective = false;
            if rep.witnesses.len() < 8 {
                rep.witnesses.push(format!("uncovered {:?} gap={gap:e}", z.as_slice()));
            }
        }
    }
    let id = identity_on(&f.charts, o.clone());
    rep.displacement = model_sup_distance(f, &id, per_axis);
    let min_delta = f.charts.iter().map(|c| (1.0 - INNER_FRACTION) * c.radius).fold(f64::INFINITY, f64::min);
    rep.margin_bound = 0.5 * min_delta;
    rep.margin_ok = rep.displacement < rep.margin_bound;
    if !rep.margin_ok {
        rep.witnesses.push(format!("d0 = {:e} ≥ {:e}", rep.displacement, rep.margin_bound));
    }
    Ok(rep)
}

fn identity_on(charts: &[DerivedChart], o: Arc<GoodOrbifold>) -> OrbifoldMapData {
    OrbifoldMapData::identity(o, &Atlas::new(charts.to_vec()))
}

/// A diffeomorphism together with its inverse.
#[derive(Clone, Debug)]
pub struct Diffeo {
    pub name: String,
    pub forward: OrbifoldMapData,
    pub inverse: OrbifoldMapData,
}

impl Diffeo {
    pub fn from_global(name: &str, o: Arc<GoodOrbifold>, atlas: &Atlas, forward: PointMap, inverse: PointMap) -> Result<Self> {
        Ok(Diffeo {
            name: name.to_string(),
            forward: OrbifoldMapData::from_global(o.clone(), o.clone(), atlas, forward, usize::MAX)?,
            inverse: OrbifoldMapData::from_global(o.clone(), o, atlas, inverse, usize::MAX)?,
        })
    }

    pub fn identity(o: Arc<GoodOrbifold>, atlas: &Atlas) -> Self {
        let id = OrbifoldMapData::identity(o, atlas);
        Diffeo { name: "identity".into(), forward: id.clone(), inverse: id }
    }
}

/// Local chart `σ ↦ f ∘ E^σ` around a diffeomorphism.
#[derive(Clone, Debug)]
pub struct DiffeoChart {
    pub base: Diffeo,
    pub epsilon: f64,
    pub exp: ExpMap,
}

impl DiffeoChart {
    /// Default radius `0.1 ×` the smallest chart radius.
    pub fn new(base: Diffeo, exp: ExpMap) -> Self {
        let epsilon = 0.1 * base.forward.charts.iter().map(|c| c.radius).fold(f64::INFINITY, f64::min);
        DiffeoChart { base, epsilon, exp }
    }

    pub fn apply(&self, sigma: &Orbisection) -> Result<OrbifoldMapData> {
        compose(&e_apply(sigma, &self.exp)?, &self.base.forward)
    }

    /// `σ` with `f ∘ E^σ = g`.
    pub fn coordinates(&self, g: &OrbifoldMapData) -> Result<Orbisection> {
        e_inverse(&compose(g, &self.base.inverse)?, &self.exp)
    }
}

/// Largest `ε ≤ eps_max` (8 bisection steps) such that `E^{εσ̂}` passes
/// [`verify_diffeo`], with `σ̂` the probe rescaled to unit C¹ seminorm.
pub fn largest_passing_epsilon(
    probe: &Orbisection,
    e: &ExpMap,
    eps_max: f64,
    per_axis: usize,
    target_resolution: usize,
) -> Result<f64> {
    let norm = seminorm(probe, 1, per_axis);
    if norm == 0.0 {
        return Ok(eps_max);
    }
    let passes = |eps: f64| -> Result<bool> {
        let s = linear_combination(probe, probe, eps / norm, 0.0)?;
        Ok(verify_diffeo(&e_apply(&s, e)?, per_axis, target_resolution)?.pass())
    };
    if passes(eps_max)? {
        return Ok(eps_max);
    }
    let (mut lo, mut hi) = (0.0, eps_max);
    for _ in 0..8 {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Clone, Debug)]
pub struct TransitionReport {
    pub output: Orbisection,
    /// Sampled modulus `‖T(σ + ησ) − T(σ)‖₀ / ‖ησ‖₀`.
    pub lipschitz: f64,
}

/// `E⁻¹(g⁻¹ ∘ f ∘ E^σ)`.
pub fn transition_map(f: &Diffeo, g: &Diffeo, sigma: &Orbisection, e: &ExpMap) -> Result<TransitionReport> {
    let apply = |s: &Orbisection| -> Result<Orbisection> {
        let fe = compose(&e_apply(s, e)?, &f.forward)?;
        e_inverse(&compose(&fe, &g.inverse)?, e)
    };
    let output = apply(sigma)?;
    let base = seminorm(sigma, 0, 5);
    let lipschitz = if base > 0.0 {
        let eta = 1e-3;
        let moved = apply(&linear_combination(sigma, sigma, 1.0 + eta, 0.0)?)?;
        seminorm(&linear_combination(&moved, &output, 1.0, -1.0)?, 0, 5) / (eta * base)
    } else {
        0.0
    };
    Ok(TransitionReport { output, lipschitz })
}

#[derive(Clone, Debug, Default)]
pub struct QuotientCheckReport {
    pub id_order: usize,
    pub id_closed: bool,
    pub id_abelian: bool,
    pub id_exponent: usize,
    /// Conjugates `g ∘ f ∘ g⁻¹` tested and how many were identity lifts in ID.
    pub conjugates_tested: usize,
    pub conjugates_in_id: usize,
    /// Pairs of lift assignments of one diffeomorphism tested, and how many
    /// differed by an element of ID.
    pub differences_tested: usize,
    pub differences_in_id: usize,
    pub witnesses: Vec<String>,
}

impl QuotientCheckReport {
    pub fn pass(&self) -> bool {
        self.id_closed
            && self.conjugates_tested > 0
            && self.conjugates_in_id == self.conjugates_tested
            && self.differences_in_id == self.differences_tested
    }
}

/// Checks the exact sequence `ID → Diff → reduced Diff` on samples: ID is
/// a finite group, normal under conjugation by sample diffeomorphisms, and
/// two lift choices of one diffeomorphism differ by an element of ID.
pub fn reduced_group_quotient_check(o: Arc<GoodOrbifold>, atlas: &Atlas, diffeos: &[Diffeo]) -> Result<QuotientCheckReport> {
    let id = enumerate_identity_lifts(&o, atlas)?;
    let mut rep = QuotientCheckReport {
        id_order: id.order(),
        id_closed: id.is_closed(),
        id_abelian: id.is_abelian(),
        id_exponent: id.exponent(),
        ..Default::default()
    };
    let per_axis = 5;
    let tol = 1e-8;
    for g in diffeos {
        for a in &id.elements {
            let f = OrbifoldMapData::identity_lift(o.clone(), atlas, a)?;
            let conj = compose(&compose(&g.inverse, &f)?, &g.forward)?;
            rep.conjugates_tested += 1;
            match identity_lift_assignment(&conj, per_axis, tol) {
                Some(asg) if id.contains(&asg) => rep.conjugates_in_id += 1,
                other => rep.witnesses.push(format!("{}: conjugate of {a:?} gave {other:?}", g.name)),
            }
        }
        // twist the lift on every chart whose center g fixes by each isotropy
        // element; the inverse gets the matching precomposition
        for (i, c) in atlas.charts.iter().enumerate() {
            let tc = &g.forward.target_charts[i];
            let j = match atlas.charts.iter().position(|d| (&d.center - &tc.center).amax() < GROUP_EPS) {
                Some(j) => j,
                None => continue,
            };
            if c.isotropy.order() == 1 {
                continue;
            }
            for delta in tc.isotropy.labels().skip(1) {
                let h1 = g.forward.twisted(i, delta);
                let d_in = g.inverse.charts[j].isotropy.find(tc.isotropy.matrix(delta)).expect("same chart");
                let h1_inv = g.inverse.twisted_source(j, d_in);
                let diff = compose(&g.forward, &h1_inv)?;
                let round = compose(&h1_inv, &h1)?;
                // only chart i is twisted; the other entries stay trivial
                let trivial = germ_label(&round, i, per_axis, tol) == Some(0);
                let assignment = germ_label(&diff, i, per_axis, tol).map(|l| {
                    let mut a = id.elements[0].clone();
                    a[i] = l;
                    a
                });
                rep.differences_tested += 1;
                match assignment {
                    Some(asg) if trivial && id.contains(&asg) => rep.differences_in_id += 1,
                    other => rep.witnesses.push(format!("{}: chart {i} twist {delta} gave {other:?}", g.name)),
                }
            }
        }
    }
    Ok(rep)
}

/// Isotropy label `g` with `f̃_i = g` on the central third of chart `i`.
fn germ_label(f: &OrbifoldMapData, i: usize, per_axis: usize, tol: f64) -> Option<usize> {
    let c = &f.charts[i];
    let samples = c.grid(&f.source.model, per_axis, GERM_SCALE);
    c.isotropy.labels().find(|&g| samples.iter().all(|y| (f.eval(i, y) - c.isotropy.act(g, y)).norm() < tol))
}

const GERM_SCALE: f64 = 1.0 / 3.0;

fn rotation_about_z(angle: f64, y: &Point) -> Point {
    let (s, c) = angle.sin_cos();
    Point::from_column_slice(&[c * y[0] - s * y[1], s * y[0] + c * y[1], y[2]])
}

/// `(x, y, z) ↦ R_z(a·z)(x, y, z)`.
pub fn twist_map(a: f64) -> (PointMap, PointMap) {
    (
        Arc::new(move |y: &Point| rotation_about_z(a * y[2], y)),
        Arc::new(move |y: &Point| rotation_about_z(-a * y[2], y)),
    )
}

/// Height change `z ↦ z + ε(1 − z²)` with the horizontal part rescaled to
/// stay on the sphere (|ε| < ½).
pub fn height_map(eps: f64) -> (PointMap, PointMap) {
    let forward: PointMap = Arc::new(move |y: &Point| {
        let z = y[2];
        let s = (1.0 - 2.0 * eps * z - eps * eps * (1.0 - z * z)).sqrt();
        Point::from_column_slice(&[s * y[0], s * y[1], z + eps * (1.0 - z * z)])
    });
    let inverse: PointMap = Arc::new(move |y: &Point| {
        let z = y[2];
        let zp = if eps == 0.0 { z } else { 2.0 * (z - eps) / (1.0 + (1.0 - 4.0 * eps * (z - eps)).sqrt()) };
        let s = (1.0 - 2.0 * eps * zp - eps * eps * (1.0 - zp * zp)).sqrt();
        Point::from_column_slice(&[y[0] / s, y[1] / s, zp])
    });
    (forward, inverse)
}

fn compose_maps(first: PointMap, second: PointMap) -> PointMap {
    Arc::new(move |y: &Point| second(&first(y)))
}

/// Ten diffeomorphisms of a football commuting with its rotation group:
/// twists, height changes, their composites and a rotation.
pub fn football_sample_diffeos(o: Arc<GoodOrbifold>, atlas: &Atlas) -> Result<Vec<Diffeo>> {
    let mut out = Vec::new();
    for a in [0.3, -0.5, 1.0] {
        let (f, g) = twist_map(a);
        out.push(Diffeo::from_global(&format!("twist({a})"), o.clone(), atlas, f, g)?);
    }
    for e in [0.1, -0.2, 0.3] {
        let (f, g) = height_map(e);
        out.push(Diffeo::from_global(&format!("height({e})"), o.clone(), atlas, f, g)?);
    }
    for (a, e) in [(0.4, 0.15), (-0.7, -0.1), (1.2, 0.25)] {
        let (tf, tg) = twist_map(a);
        let (hf, hg) = height_map(e);
        out.push(Diffeo::from_global(
            &format!("twist({a})∘height({e})"),
            o.clone(),
            atlas,
            compose_maps(hf, tf),
            compose_maps(tg, hg),
        )?);
    }
    let angle = 0.37;
    out.push(Diffeo::from_global(
        "rotation(0.37)",
        o.clone(),
        atlas,
        Arc::new(move |y: &Point| rotation_about_z(angle, y)),
        Arc::new(move |y: &Point| rotation_about_z(-angle, y)),
    )?);
    Ok(out)
}

/// `ỹ ↦ ỹ·(1 + c(1 − ‖ỹ‖²/R²))` on a flat ball of radius `R`: fixes the
/// boundary sphere, commutes with every orthogonal action, and is a
/// diffeomorphism of the ball for `|c| < ½`. The inverse solves the radial
/// cubic by Newton's method.
pub fn radial_diffeo(o: Arc<GoodOrbifold>, atlas: &Atlas, c: f64) -> Result<Diffeo> {
    let radius = match o.model {
        ModelSpace::FlatBall { radius, .. } => radius,
        _ => return Err(Error::UnsupportedModel),
    };
    if !(c.abs() < 0.5) {
        return Err(Error::Invalid(format!("radial coefficient {c} outside (-1/2, 1/2)")));
    }
    let k = c / (radius * radius);
    let forward: PointMap = Arc::new(move |y: &Point| y * (1.0 + c - k * y.norm_squared()));
    let inverse: PointMap = Arc::new(move |y: &Point| {
        let r = y.norm();
        if r == 0.0 {
            return y.clone();
        }
        let mut s = r;
        for _ in 0..50 {
            let f = s * (1.0 + c) - k * s * s * s - r;
            let step = f / (1.0 + c - 3.0 * k * s * s);
            s -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        y * (s / r)
    });
    Diffeo::from_global(&format!("radial({c})"), o, atlas, forward, inverse)
}
