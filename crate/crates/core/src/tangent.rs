//! Tangent fibers, admissible vectors, orbisections and curves.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::group::{self, FiniteActionGroup, GROUP_EPS, NULLSPACE_TOL};
use crate::linalg;
use crate::maps::lift_jet;
use crate::orbifold::{Atlas, DerivedChart, GoodOrbifold, ModelSpace, QuotientPoint};
use crate::{Error, Point, PointMap, Result};

/// A tangent vector at a quotient point, up to the isotropy action.
#[derive(Clone, Debug)]
pub struct TangentVectorAt {
    pub base: QuotientPoint,
    /// Representative in the tangent space at `base.representative`.
    pub vector: Point,
    pub isotropy: Arc<FiniteActionGroup>,
}

impl TangentVectorAt {
    /// Sphere vectors are projected onto the tangent plane.
    pub fn new(o: &GoodOrbifold, base: QuotientPoint, v: &Point) -> Result<Self> {
        if v.len() != o.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: o.ambient_dim(), got: v.len() });
        }
        let vector = o.model.project_tangent(&base.representative, v);
        let isotropy = Arc::new(group::stabilizer(&o.group, &base.representative));
        Ok(TangentVectorAt { base, vector, isotropy })
    }

    /// Orbit of the representative under the isotropy group.
    pub fn class(&self) -> Vec<Point> {
        group::orbit(&self.isotropy, &self.vector)
    }

    /// Same base point and isotropy-related vectors.
    pub fn equivalent(&self, o: &GoodOrbifold, other: &TangentVectorAt, tol: f64) -> bool {
        if self.base != other.base {
            return false;
        }
        o.group.labels().any(|g| {
            (o.group.act(g, &self.base.representative) - &other.base.representative).amax() < GROUP_EPS
                && (o.group.act(g, &self.vector) - &other.vector).norm() < tol
        })
    }

    /// Fixed by the whole isotropy group.
    pub fn is_admissible(&self, tol: f64) -> bool {
        self.isotropy.labels().all(|g| (self.isotropy.act(g, &self.vector) - &self.vector).norm() < tol)
    }
}

/// Basis of the admissible vectors at `p`: tangent vectors fixed by the
/// isotropy group.
pub fn admissible_space(o: &GoodOrbifold, p: &QuotientPoint) -> Vec<Point> {
    let iso = group::stabilizer(&o.group, &p.representative);
    let n = o.ambient_dim();
    let mut rows: Vec<DMatrix<f64>> = iso
        .labels()
        .skip(1)
        .map(|l| iso.matrix(l) - DMatrix::<f64>::identity(n, n))
        .collect();
    if let ModelSpace::Sphere { .. } = o.model {
        rows.push(DMatrix::from_row_slice(1, n, p.representative.as_slice()));
    }
    if rows.is_empty() {
        return (0..n).map(|i| linalg::unit(n, i)).collect();
    }
    let total: usize = rows.iter().map(|r| r.nrows()).sum();
    let mut stacked = DMatrix::<f64>::zeros(total, n);
    let mut at = 0;
    for r in rows {
        stacked.view_mut((at, 0), (r.nrows(), n)).copy_from(&r);
        at += r.nrows();
    }
    linalg::null_space(&stacked, NULLSPACE_TOL)
}

/// A section of the tangent orbibundle given by one equivariant field per
/// chart.
#[derive(Clone)]
pub struct Orbisection {
    pub orbifold: Arc<GoodOrbifold>,
    pub charts: Vec<DerivedChart>,
    pub fields: Vec<PointMap>,
    /// Model-level field agreeing with every chart field, when known.
    pub global: Option<PointMap>,
}

impl std::fmt::Debug for Orbisection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orbisection").field("orbifold", &self.orbifold.name).field("charts", &self.charts.len()).finish()
    }
}

/// `s̄(ỹ) = (1/|Γ|) Σ_γ γ⁻¹·s(γ·ỹ)`, after tangent projection on spheres.
pub fn project_equivariant(model: &ModelSpace, group: &Arc<FiniteActionGroup>, raw: PointMap) -> PointMap {
    let group = group.clone();
    let model = model.clone();
    Arc::new(move |y: &Point| {
        let mut acc = Point::zeros(y.len());
        for l in group.labels() {
            let gy = group.act(l, y);
            let s = model.project_tangent(&gy, &raw(&gy));
            acc += group.matrix(l).transpose() * s;
        }
        acc / group.order() as f64
    })
}

impl Orbisection {
    pub fn new(orbifold: Arc<GoodOrbifold>, charts: Vec<DerivedChart>, fields: Vec<PointMap>) -> Result<Self> {
        if charts.len() != fields.len() {
            return Err(Error::DimensionMismatch { expected: charts.len(), got: fields.len() });
        }
        Ok(Orbisection { orbifold, charts, fields, global: None })
    }

    pub fn zero(o: Arc<GoodOrbifold>, atlas: &Atlas) -> Self {
        let n = o.ambient_dim();
        let f: PointMap = Arc::new(move |_: &Point| Point::zeros(n));
        Orbisection { orbifold: o, charts: atlas.charts.clone(), fields: vec![f.clone(); atlas.len()], global: Some(f) }
    }

    /// Restricts a model-level field to every chart, projecting it onto the
    /// tangent space (no averaging).
    pub fn from_global(o: Arc<GoodOrbifold>, atlas: &Atlas, field: PointMap) -> Self {
        let model = o.model.clone();
        let f: PointMap = Arc::new(move |y: &Point| model.project_tangent(y, &field(y)));
        Orbisection { orbifold: o, charts: atlas.charts.clone(), fields: vec![f.clone(); atlas.len()], global: Some(f) }
    }

    /// Averages a raw model-level field over each chart isotropy group.
    pub fn projected(o: Arc<GoodOrbifold>, atlas: &Atlas, raw: PointMap) -> Self {
        let fields = atlas
            .charts
            .iter()
            .map(|c| project_equivariant(&o.model, &c.isotropy, raw.clone()))
            .collect();
        Orbisection { orbifold: o, charts: atlas.charts.clone(), fields, global: None }
    }

    pub fn eval(&self, chart: usize, y: &Point) -> Point {
        (self.fields[chart])(y)
    }

    /// `max ‖s̃(γỹ) − γ·s̃(ỹ)‖` over charts, isotropy and chart samples.
    pub fn equivariance_residual(&self, per_axis: usize) -> f64 {
        let mut r: f64 = 0.0;
        for (i, c) in self.charts.iter().enumerate() {
            for y in c.grid(&self.orbifold.model, per_axis, 1.0) {
                let sy = self.eval(i, &y);
                for l in c.isotropy.labels() {
                    r = r.max((self.eval(i, &c.isotropy.act(l, &y)) - c.isotropy.act(l, &sy)).norm());
                }
            }
        }
        r
    }

    /// Largest distance from `s̃(center)` to the admissible space at the center.
    pub fn center_residual(&self) -> f64 {
        self.charts
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let basis = admissible_space(&self.orbifold, &QuotientPoint::from_model(&self.orbifold.group, c.center.clone()));
                let v = self.eval(i, &c.center);
                let mut r = v.clone();
                for b in &basis {
                    r -= b * b.dot(&v);
                }
                r.norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Chartwise `a·σ + b·τ`.
pub fn linear_combination(sigma: &Orbisection, tau: &Orbisection, a: f64, b: f64) -> Result<Orbisection> {
    if sigma.charts.len() != tau.charts.len()
        || !sigma.charts.iter().zip(&tau.charts).all(|(x, y)| (&x.center - &y.center).amax() < GROUP_EPS)
    {
        return Err(Error::ChartMismatch("orbisections live on different atlases".into()));
    }
    let fields = sigma
        .fields
        .iter()
        .zip(&tau.fields)
        .map(|(s, t)| {
            let (s, t) = (s.clone(), t.clone());
            Arc::new(move |y: &Point| s(y) * a + t(y) * b) as PointMap
        })
        .collect();
    let global = match (&sigma.global, &tau.global) {
        (Some(s), Some(t)) => {
            let (s, t) = (s.clone(), t.clone());
            Some(Arc::new(move |y: &Point| s(y) * a + t(y) * b) as PointMap)
        }
        _ => None,
    };
    Ok(Orbisection { orbifold: sigma.orbifold.clone(), charts: sigma.charts.clone(), fields, global })
}

/// `r = 0`: sup of `|s̃|`; `r = 1`: also the sup of first derivatives along
/// chart coordinates.
pub fn seminorm(sigma: &Orbisection, r: usize, per_axis: usize) -> f64 {
    let model = &sigma.orbifold.model;
    let mut sup: f64 = 0.0;
    for (i, c) in sigma.charts.iter().enumerate() {
        for y in c.grid(model, per_axis, 1.0) {
            for v in lift_jet(model, &sigma.fields[i], &y, r.min(1)) {
                sup = sup.max(v.norm());
            }
        }
    }
    sup
}

/// A Γ-equivariant field with random coefficients up to the given degree
/// (≤ 2), scaled so that its C¹ seminorm equals `c1_norm`.
pub fn random_orbisection<R: Rng>(
    o: Arc<GoodOrbifold>,
    atlas: &Atlas,
    rng: &mut R,
    c1_norm: f64,
    per_axis: usize,
) -> Orbisection {
    let n = o.ambient_dim();
    let a0 = Point::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a1 = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let a2: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let raw: PointMap = Arc::new(move |y: &Point| {
        let mut v = &a0 + &a1 * y;
        for (k, q) in a2.iter().enumerate() {
            v[k] += y.dot(&(q * y));
        }
        v
    });
    let global = project_equivariant(&o.model, &o.group, raw);
    let sigma = Orbisection::from_global(o.clone(), atlas, global.clone());
    let norm = seminorm(&sigma, 1, per_axis);
    let scale = if norm > 0.0 { c1_norm / norm } else { 0.0 };
    let scaled: PointMap = Arc::new(move |y: &Point| global(y) * scale);
    Orbisection::from_global(o, atlas, scaled)
}

/// Scalar expressions for curve coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expr {
    /// `Σ c_k t^k`.
    Poly { coeffs: Vec<f64> },
    Abs { arg: Box<Expr> },
    Sin { arg: Box<Expr> },
    Cos { arg: Box<Expr> },
    Sum { terms: Vec<Expr> },
    Product { factors: Vec<Expr> },
}

impl Expr {
    pub fn t() -> Expr {
        Expr::Poly { coeffs: vec![0.0, 1.0] }
    }

    pub fn poly(coeffs: &[f64]) -> Expr {
        Expr::Poly { coeffs: coeffs.to_vec() }
    }

    pub fn abs(e: Expr) -> Expr {
        Expr::Abs { arg: Box::new(e) }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Expr::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
            Expr::Abs { arg } => arg.eval(t).abs(),
            Expr::Sin { arg } => arg.eval(t).sin(),
            Expr::Cos { arg } => arg.eval(t).cos(),
            Expr::Sum { terms } => terms.iter().map(|e| e.eval(t)).sum(),
            Expr::Product { factors } => factors.iter().map(|e| e.eval(t)).product(),
        }
    }
}

pub type CurveMap = Arc<dyn Fn(f64) -> Point + Send + Sync>;

/// A curve given by model lifts on the segments between crossing times.
#[derive(Clone)]
pub struct CurveInOrbifold {
    pub orbifold: Arc<GoodOrbifold>,
    pub interval: (f64, f64),
    /// Increasing interior times splitting the interval into segments.
    pub crossings: Vec<f64>,
    pub segments: Vec<CurveMap>,
}

impl std::fmt::Debug for CurveInOrbifold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CurveInOrbifold")
            .field("interval", &self.interval)
            .field("crossings", &self.crossings)
            .finish()
    }
}

impl CurveInOrbifold {
    pub fn new(o: Arc<GoodOrbifold>, interval: (f64, f64), crossings: Vec<f64>, segments: Vec<CurveMap>) -> Result<Self> {
        if segments.len() != crossings.len() + 1 {
            return Err(Error::DimensionMismatch { expected: crossings.len() + 1, got: segments.len() });
        }
        let mut last = interval.0;
        for &t in &crossings {
            if !(t > last && t < interval.1) {
                return Err(Error::Invalid("crossing times must be increasing interior points".into()));
            }
            last = t;
        }
        let c = CurveInOrbifold { orbifold: o, interval, crossings, segments };
        for (k, &t) in c.crossings.iter().enumerate() {
            let a = QuotientPoint::from_model(&c.orbifold.group, (c.segments[k])(t));
            let b = QuotientPoint::from_model(&c.orbifold.group, (c.segments[k + 1])(t));
            if a != b {
                return Err(Error::Invalid(format!("segments disagree in the quotient at t = {t}")));
            }
        }
        Ok(c)
    }

    /// Segment lifts given coordinatewise by expressions.
    pub fn from_exprs(o: Arc<GoodOrbifold>, interval: (f64, f64), crossings: Vec<f64>, segments: Vec<Vec<Expr>>) -> Result<Self> {
        let n = o.ambient_dim();
        let mut maps: Vec<CurveMap> = Vec::new();
        for seg in segments {
            if seg.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: seg.len() });
            }
            maps.push(Arc::new(move |t: f64| Point::from_iterator(seg.len(), seg.iter().map(|e| e.eval(t)))));
        }
        Self::new(o, interval, crossings, maps)
    }

    /// Same expressions on every segment.
    pub fn single(o: Arc<GoodOrbifold>, interval: (f64, f64), crossings: Vec<f64>, coords: Vec<Expr>) -> Result<Self> {
        let segs = vec![coords; crossings.len() + 1];
        Self::from_exprs(o, interval, crossings, segs)
    }

    fn segment_at(&self, t: f64) -> usize {
        self.crossings.iter().take_while(|&&c| c <= t).count()
    }

    pub fn eval(&self, t: f64) -> QuotientPoint {
        QuotientPoint::from_model(&self.orbifold.group, (self.segments[self.segment_at(t)])(t))
    }

    /// Reparametrization `t ↦ t/α` (the curve traversed α times faster).
    pub fn reparametrized(&self, alpha: f64) -> Result<Self> {
        let segments = self
            .segments
            .iter()
            .map(|s| {
                let s = s.clone();
                Arc::new(move |t: f64| s(alpha * t)) as CurveMap
            })
            .collect();
        Self::new(
            self.orbifold.clone(),
            (self.interval.0 / alpha, self.interval.1 / alpha),
            self.crossings.iter().map(|t| t / alpha).collect(),
            segments,
        )
    }
}

/// One-sided difference step and derivative tolerance for lift classification.
pub const CURVE_STEP: f64 = 1e-4;
pub const CURVE_TOL: f64 = 1e-6;

/// One-sided derivatives of order `0..=k` (k ≤ 2) with second-order stencils.
fn one_sided_jet(c: &CurveMap, t0: f64, dir: f64, k: usize) -> Vec<Point> {
    let h = CURVE_STEP;
    let f = |j: f64| c(t0 + dir * j * h);
    let f0 = f(0.0);
    let mut out = vec![f0.clone()];
    if k >= 1 {
        let d1 = (&f0 * -3.0 + f(1.0) * 4.0 - f(2.0)) / (2.0 * h);
        out.push(d1 * dir);
    }
    if k >= 2 {
        let d2 = (&f0 * 2.0 - f(1.0) * 5.0 + f(2.0) * 4.0 - f(3.0)) / (h * h);
        out.push(d2);
    }
    out
}

/// A concatenated lift `γ_L·ĉ_L | γ_R·ĉ_R` at a crossing.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveLift {
    pub left: usize,
    pub right: usize,
    /// Largest `j ≤ k` with matching one-sided derivatives up to order `j`;
    /// `None` if not even continuous.
    pub class: Option<usize>,
    /// One-sided first derivatives (left, right).
    pub derivatives: (Point, Point),
}

impl CurveLift {
    pub fn is_c(&self, j: usize) -> bool {
        self.class.is_some_and(|c| c >= j)
    }
}

/// All concatenations over the isotropy of the crossing point, deduplicated,
/// each classified up to order `k` (at most 2).
pub fn enumerate_curve_lifts(c: &CurveInOrbifold, crossing: usize, k: usize) -> Result<Vec<CurveLift>> {
    let t0 = *c
        .crossings
        .get(crossing)
        .ok_or_else(|| Error::Invalid(format!("no crossing with index {crossing}")))?;
    let k = k.min(2);
    let g = &c.orbifold.group;
    let left = c.segments[crossing].clone();
    let right_raw = c.segments[crossing + 1].clone();
    let x = left(t0);
    // align the right segment so that it starts at the same model point
    let align = g
        .labels()
        .find(|&l| (g.act(l, &right_raw(t0)) - &x).amax() < GROUP_EPS)
        .ok_or_else(|| Error::Invalid("segments do not meet at the crossing".into()))?;
    let am = g.matrix(align).clone();
    let right: CurveMap = Arc::new(move |t: f64| &am * right_raw(t));
    let iso = group::stabilizer(g, &x);
    let jl = one_sided_jet(&left, t0, -1.0, k.max(1));
    let jr = one_sided_jet(&right, t0, 1.0, k.max(1));
    let probe = |m: &CurveMap, dir: f64| -> Vec<Point> { (1..=3).map(|j| m(t0 + dir * j as f64 * 0.05 * CURVE_STEP.sqrt())).collect() };
    let pl = probe(&left, -1.0);
    let pr = probe(&right, 1.0);
    let mut seen: Vec<(Vec<Point>, Vec<Point>)> = Vec::new();
    let mut out = Vec::new();
    for a in iso.labels() {
        for b in iso.labels() {
            let key_l: Vec<Point> = pl.iter().map(|p| iso.act(a, p)).collect();
            let key_r: Vec<Point> = pr.iter().map(|p| iso.act(b, p)).collect();
            let dup = seen.iter().any(|(l, r)| {
                l.iter().zip(&key_l).all(|(u, v)| (u - v).norm() < 1e-12)
                    && r.iter().zip(&key_r).all(|(u, v)| (u - v).norm() < 1e-12)
            });
            if dup {
                continue;
            }
            seen.push((key_l, key_r));
            let ma = iso.matrix(a);
            let mb = iso.matrix(b);
            let mut class = None;
            for j in 0..=k {
                let gap = (ma * &jl[j] - mb * &jr[j]).norm();
                if gap < CURVE_TOL * (1.0 + jl[j].norm()) {
                    class = Some(j);
                } else {
                    break;
                }
            }
            out.push(CurveLift { left: a, right: b, class, derivatives: (ma * &jl[1], mb * &jr[1]) });
        }
    }
    Ok(out)
}

/// Tangent class of a curve together with how it arises.
#[derive(Clone, Debug)]
pub struct CurveTangent {
    pub tangent: TangentVectorAt,
    /// Derivatives of all C¹ lifts at `t` (pairwise isotropy-related).
    pub lift_vectors: Vec<Point>,
    pub admissible: bool,
    /// Some C¹ lift is a concatenation that is not C² (it genuinely switches
    /// branches at `t`).
    pub nontrivial_concatenation: bool,
}

/// Tangent vector to `c` at `t`. At a crossing the class is read off the C¹
/// concatenations; `NotDifferentiable` when none exists.
pub fn curve_tangent(c: &CurveInOrbifold, t: f64) -> Result<CurveTangent> {
    let o = &c.orbifold;
    if let Some(k) = c.crossings.iter().position(|&s| (s - t).abs() < 1e-12) {
        let lifts = enumerate_curve_lifts(c, k, 2)?;
        let c1: Vec<&CurveLift> = lifts.iter().filter(|l| l.is_c(1)).collect();
        if c1.is_empty() {
            return Err(Error::NotDifferentiable { t });
        }
        let base_pt = (c.segments[k])(t);
        let base = QuotientPoint::from_model(&o.group, base_pt);
        let v0 = (&c1[0].derivatives.0 + &c1[0].derivatives.1) * 0.5;
        let tangent = TangentVectorAt::new(o, base, &v0)?;
        let lift_vectors: Vec<Point> = c1.iter().map(|l| (&l.derivatives.0 + &l.derivatives.1) * 0.5).collect();
        for v in &lift_vectors {
            if !tangent.isotropy.labels().any(|g| (tangent.isotropy.act(g, &tangent.vector) - v).norm() < 1e-5) {
                return Err(Error::NotDifferentiable { t });
            }
        }
        let admissible = tangent.is_admissible(1e-5);
        let nontrivial_concatenation = c1.iter().any(|l| !l.is_c(2));
        return Ok(CurveTangent { tangent, lift_vectors, admissible, nontrivial_concatenation });
    }
    if t < c.interval.0 || t > c.interval.1 {
        return Err(Error::OutOfDomain(format!("t = {t} outside the curve interval")));
    }
    let seg = c.segments[c.segment_at(t)].clone();
    let h = CURVE_STEP;
    let v = if t - h < c.interval.0 {
        one_sided_jet(&seg, t, 1.0, 1)[1].clone()
    } else if t + h > c.interval.1 {
        one_sided_jet(&seg, t, -1.0, 1)[1].clone()
    } else {
        (seg(t + linalg::FD_STEP) - seg(t - linalg::FD_STEP)) / (2.0 * linalg::FD_STEP)
    };
    let base = QuotientPoint::from_model(&o.group, seg(t));
    let tangent = TangentVectorAt::new(o, base, &v)?;
    let admissible = tangent.is_admissible(1e-5);
    Ok(CurveTangent { lift_vectors: vec![tangent.vector.clone()], tangent, admissible, nontrivial_concatenation: false })
}

/// Tangent obtained through a genuine concatenation at a crossing;
/// `NotDifferentiable` when every C¹ lift is a single smooth branch.
pub fn concatenation_tangent(c: &CurveInOrbifold, t: f64) -> Result<TangentVectorAt> {
    let ct = curve_tangent(c, t)?;
    if ct.nontrivial_concatenation {
        Ok(ct.tangent)
    } else {
        Err(Error::NotDifferentiable { t })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbifold::canonical_atlas;
    use rand::SeedableRng;

    fn mirror() -> Arc<GoodOrbifold> {
        Arc::new(GoodOrbifold::mirror_plane(2.0))
    }

    #[test]
    fn admissible_dimensions() {
        let line = GoodOrbifold::line_mod_reflection(1.0);
        assert_eq!(admissible_space(&line, &line.point_of(&[0.0]).unwrap()).len(), 0);
        assert_eq!(admissible_space(&line, &line.point_of(&[0.5]).unwrap()).len(), 1);
        let m = mirror();
        assert_eq!(admissible_space(&m, &m.point_of(&[0.3, 0.0]).unwrap()).len(), 1);
        assert_eq!(admissible_space(&m, &m.point_of(&[0.3, 0.2]).unwrap()).len(), 2);
        for p in [2, 3, 5] {
            let fb = GoodOrbifold::football(p);
            assert_eq!(admissible_space(&fb, &fb.point_of(&[0.0, 0.0, 1.0]).unwrap()).len(), 0);
            assert_eq!(admissible_space(&fb, &fb.point_of(&[0.0, 0.6, 0.8]).unwrap()).len(), 2);
        }
    }

    #[test]
    fn projection_examples() {
        let line = Arc::new(GoodOrbifold::line_mod_reflection(1.0));
        let atlas = canonical_atlas(&line).unwrap();
        let constant: PointMap = Arc::new(|_: &Point| Point::from_element(1, 0.7));
        let s = Orbisection::projected(line.clone(), &atlas, constant);
        for x in linalg::linspace(-1.0, 1.0, 11) {
            assert_eq!(s.eval(0, &Point::from_element(1, x))[0], 0.0);
        }
        let odd: PointMap = Arc::new(|y: &Point| y * 2.0);
        let p = project_equivariant(&line.model, &atlas.charts[0].isotropy, odd.clone());
        for x in linalg::linspace(-1.0, 1.0, 11) {
            let y = Point::from_element(1, x);
            assert!((p(&y) - odd(&y)).norm() < 1e-12);
        }
    }

    #[test]
    fn projected_cubic_on_c4() {
        let c4 = Arc::new(GoodOrbifold::cyclic_plane(4, 1.0));
        let atlas = canonical_atlas(&c4).unwrap();
        let raw: PointMap = Arc::new(|y: &Point| {
            Point::from_column_slice(&[0.3 + y[0] * y[0] * y[1] - 0.2 * y[1], y[0].powi(3) + 0.5 * y[0] * y[1]])
        });
        let s = Orbisection::projected(c4, &atlas, raw);
        assert!(s.equivariance_residual(11) < 1e-12);
        assert!(s.center_residual() < 1e-12);
    }

    #[test]
    fn seminorms() {
        let o = Arc::new(GoodOrbifold::flat_manifold(2, 1.0));
        let atlas = canonical_atlas(&o).unwrap();
        assert_eq!(seminorm(&Orbisection::zero(o.clone(), &atlas), 1, 9), 0.0);
        let lin: PointMap = Arc::new(|y: &Point| y * 0.3);
        let s = Orbisection::from_global(o.clone(), &atlas, lin);
        assert!((seminorm(&s, 0, 9) - 0.3).abs() < 1e-12);
        let two = linear_combination(&s, &s, 1.0, 1.0).unwrap();
        assert!((seminorm(&two, 0, 9) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn random_sections_are_equivariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let fb = Arc::new(GoodOrbifold::football(3));
        let atlas = canonical_atlas(&fb).unwrap();
        let s = random_orbisection(fb, &atlas, &mut rng, 0.04, 5);
        assert!(s.equivariance_residual(5) < 1e-12);
        assert!(s.center_residual() < 1e-12);
        assert!((seminorm(&s, 1, 5) - 0.04).abs() < 1e-12);
    }

    #[test]
    fn curve_lift_counts() {
        let m = mirror();
        let b = CurveInOrbifold::single(m.clone(), (-1.0, 1.0), vec![0.0], vec![Expr::t(), Expr::abs(Expr::t())]).unwrap();
        let lifts = enumerate_curve_lifts(&b, 0, 2).unwrap();
        assert_eq!(lifts.len(), 4);
        assert_eq!(lifts.iter().filter(|l| l.is_c(0)).count(), 4);
        assert_eq!(lifts.iter().filter(|l| l.is_c(1)).count(), 2);
        assert_eq!(lifts.iter().filter(|l| l.is_c(2)).count(), 2);

        let c = CurveInOrbifold::single(m.clone(), (-1.0, 1.0), vec![0.0], vec![Expr::t(), Expr::poly(&[0.0, 0.0, 1.0])]).unwrap();
        let lifts = enumerate_curve_lifts(&c, 0, 2).unwrap();
        assert_eq!(lifts.len(), 4);
        assert_eq!(lifts.iter().filter(|l| l.is_c(1)).count(), 4);
        assert_eq!(lifts.iter().filter(|l| l.is_c(2)).count(), 2);

        for alpha in [0.5, 3.0] {
            let r = c.reparametrized(alpha).unwrap();
            let lifts = enumerate_curve_lifts(&r, 0, 2).unwrap();
            assert_eq!(lifts.iter().filter(|l| l.is_c(2)).count(), 2);
        }

        let regular =
            CurveInOrbifold::single(m, (-1.0, 1.0), vec![0.0], vec![Expr::t(), Expr::poly(&[0.5, 0.1])]).unwrap();
        let lifts = enumerate_curve_lifts(&regular, 0, 2).unwrap();
        assert_eq!(lifts.len(), 1);
        assert!(lifts[0].is_c(2));
    }

    #[test]
    fn curve_tangents() {
        let m = mirror();
        let c = CurveInOrbifold::single(m.clone(), (-1.0, 1.0), vec![0.0], vec![Expr::t(), Expr::poly(&[0.0, 0.0, 1.0])]).unwrap();
        let ct = curve_tangent(&c, 0.0).unwrap();
        assert!((&ct.tangent.vector - Point::from_column_slice(&[1.0, 0.0])).norm() < 1e-6);
        assert!(ct.admissible && ct.nontrivial_concatenation);
        assert!(concatenation_tangent(&c, 0.0).is_ok());

        let b = CurveInOrbifold::single(m.clone(), (-1.0, 1.0), vec![0.0], vec![Expr::t(), Expr::abs(Expr::t())]).unwrap();
        let bt = curve_tangent(&b, 0.0).unwrap();
        assert!(!bt.admissible && !bt.nontrivial_concatenation);
        assert_eq!(bt.lift_vectors.len(), 2);
        assert!((bt.tangent.vector[1].abs() - 1.0).abs() < 1e-6);
        assert!(matches!(concatenation_tangent(&b, 0.0), Err(Error::NotDifferentiable { .. })));

        let kink = CurveInOrbifold::single(m.clone(), (-1.0, 1.0), vec![0.0], vec![Expr::abs(Expr::t()), Expr::poly(&[0.0, 0.0, 1.0])]).unwrap();
        assert!(matches!(curve_tangent(&kink, 0.0), Err(Error::NotDifferentiable { .. })));

        let t = curve_tangent(&c, 0.5).unwrap();
        assert!((&t.tangent.vector - Point::from_column_slice(&[1.0, 1.0])).norm() < 1e-8);
    }
}
