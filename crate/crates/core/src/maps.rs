//! Orbifold maps: an underlying map with chartwise equivariant lifts and
//! isotropy homomorphisms Θ.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::group::{self, gens, FiniteActionGroup, GroupHom, GROUP_EPS};
use crate::linalg::FD_STEP;
use crate::orbifold::{
    block_diag, build_chart, Atlas, DerivedChart, GoodOrbifold, ModelSpace, SuborbifoldDescriptor,
};
use crate::poly::{self, Polynomial};
use crate::{Error, Point, PointMap, Result};

/// Residual allowed when inferring Θ from samples.
pub const THETA_TOL: f64 = 1e-8;
/// Step for second finite differences.
pub const FD_STEP2: f64 = 1e-4;

#[derive(Clone)]
pub struct OrbifoldMapData {
    pub source: Arc<GoodOrbifold>,
    pub target: Arc<GoodOrbifold>,
    pub charts: Vec<DerivedChart>,
    /// `target_charts[i]` receives the lift on `charts[i]`.
    pub target_charts: Vec<DerivedChart>,
    pub lifts: Vec<PointMap>,
    /// `Θ_i : Γ_{charts[i]} → Γ_{target_charts[i]}`.
    pub thetas: Vec<GroupHom>,
    pub degree: usize,
    /// Model-level representative of the underlying map, when known.
    pub underlying: Option<PointMap>,
}

impl fmt::Debug for OrbifoldMapData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OrbifoldMapData")
            .field("source", &self.source.name)
            .field("target", &self.target.name)
            .field("charts", &self.charts.len())
            .field("degree", &self.degree)
            .field("underlying", &self.underlying.is_some())
            .finish()
    }
}

impl OrbifoldMapData {
    /// Assembles map data after structural checks.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        source: Arc<GoodOrbifold>,
        target: Arc<GoodOrbifold>,
        charts: Vec<DerivedChart>,
        target_charts: Vec<DerivedChart>,
        lifts: Vec<PointMap>,
        thetas: Vec<GroupHom>,
        degree: usize,
        underlying: Option<PointMap>,
    ) -> Result<Self> {
        let m = charts.len();
        for len in [target_charts.len(), lifts.len(), thetas.len()] {
            if len != m {
                return Err(Error::DimensionMismatch { expected: m, got: len });
            }
        }
        for (i, th) in thetas.iter().enumerate() {
            if !th.source.same_elements(&charts[i].isotropy) || !th.target.same_elements(&target_charts[i].isotropy) {
                return Err(Error::ChartMismatch(format!("Θ on chart {i} does not match the chart isotropy groups")));
            }
        }
        Ok(OrbifoldMapData { source, target, charts, target_charts, lifts, thetas, degree, underlying })
    }

    /// Map given by a model-level map `F` that is equivariant along some
    /// homomorphism; each chart gets the lift `F` and a Θ found by matching.
    pub fn from_global(
        source: Arc<GoodOrbifold>,
        target: Arc<GoodOrbifold>,
        atlas: &Atlas,
        map: PointMap,
        degree: usize,
    ) -> Result<Self> {
        let mut target_charts = Vec::with_capacity(atlas.len());
        let mut thetas = Vec::with_capacity(atlas.len());
        for chart in &atlas.charts {
            let image = map(&chart.center);
            let tc = build_chart(&target, &target.point(&image)?, None)?;
            thetas.push(infer_theta(&source.model, chart, &tc, &map)?);
            target_charts.push(tc);
        }
        let lifts = vec![map.clone(); atlas.len()];
        Self::new(source, target, atlas.charts.clone(), target_charts, lifts, thetas, degree, Some(map))
    }

    /// Identity with lifts `ỹ ↦ ỹ` and Θ the identity on every chart.
    pub fn identity(o: Arc<GoodOrbifold>, atlas: &Atlas) -> Self {
        let id: PointMap = Arc::new(|y: &Point| y.clone());
        let thetas = atlas.charts.iter().map(|c| GroupHom::identity(c.isotropy.clone())).collect();
        OrbifoldMapData {
            source: o.clone(),
            target: o,
            charts: atlas.charts.clone(),
            target_charts: atlas.charts.clone(),
            lifts: vec![id.clone(); atlas.len()],
            thetas,
            degree: usize::MAX,
            underlying: Some(id),
        }
    }

    /// Lift of the identity acting by `assignment[i]` (a label of the
    /// isotropy group of chart `i`) with Θ = conjugation.
    pub fn identity_lift(o: Arc<GoodOrbifold>, atlas: &Atlas, assignment: &[usize]) -> Result<Self> {
        if assignment.len() != atlas.len() {
            return Err(Error::DimensionMismatch { expected: atlas.len(), got: assignment.len() });
        }
        let mut lifts: Vec<PointMap> = Vec::new();
        let mut thetas = Vec::new();
        for (chart, &g) in atlas.charts.iter().zip(assignment) {
            if g >= chart.isotropy.order() {
                return Err(Error::Invalid(format!("label {g} outside chart isotropy")));
            }
            let m = chart.isotropy.matrix(g).clone();
            lifts.push(Arc::new(move |y: &Point| &m * y));
            thetas.push(GroupHom::conjugation(chart.isotropy.clone(), g));
        }
        let id: PointMap = Arc::new(|y: &Point| y.clone());
        Ok(OrbifoldMapData {
            source: o.clone(),
            target: o,
            charts: atlas.charts.clone(),
            target_charts: atlas.charts.clone(),
            lifts,
            thetas,
            degree: usize::MAX,
            underlying: Some(id),
        })
    }

    /// Replaces the lift on chart `i` by `δ·f̃` and Θ by `δΘ(·)δ⁻¹`.
    pub fn twisted(&self, chart: usize, delta: usize) -> Self {
        let mut out = self.clone();
        let tg = self.target_charts[chart].isotropy.clone();
        let m = tg.matrix(delta).clone();
        let lift = self.lifts[chart].clone();
        out.lifts[chart] = Arc::new(move |y: &Point| &m * lift(y));
        let conj = GroupHom::conjugation(tg, delta);
        out.thetas[chart] = self.thetas[chart].then(&conj).expect("same target group");
        out
    }

    /// Replaces the lift on chart `i` by `f̃∘δ⁻¹` (δ in the source isotropy)
    /// and Θ by `η ↦ Θ(δ⁻¹ηδ)`.
    pub fn twisted_source(&self, chart: usize, delta: usize) -> Self {
        let mut out = self.clone();
        let sg = self.charts[chart].isotropy.clone();
        let m = sg.matrix(delta).transpose();
        let lift = self.lifts[chart].clone();
        out.lifts[chart] = Arc::new(move |y: &Point| lift(&(&m * y)));
        let conj = GroupHom::conjugation(sg.clone(), sg.inv(delta));
        out.thetas[chart] = conj.then(&self.thetas[chart]).expect("same source group");
        out
    }

    pub fn eval(&self, chart: usize, y: &Point) -> Point {
        (self.lifts[chart])(y)
    }
}

fn chart_samples(model: &ModelSpace, chart: &DerivedChart, per_axis: usize) -> Vec<Point> {
    chart.grid(model, per_axis, 1.0)
}

/// Finds Θ with `lift(δỹ) = Θ(δ)·lift(ỹ)` on chart samples; ties go to the
/// smallest target label, so constant maps get the trivial Θ.
pub fn infer_theta(model: &ModelSpace, chart: &DerivedChart, target: &DerivedChart, lift: &PointMap) -> Result<GroupHom> {
    let options = theta_options(model, chart, target, lift);
    let mut table = Vec::with_capacity(options.len());
    for (d, opts) in options.iter().enumerate() {
        match opts.first() {
            Some(&(eta, _)) => table.push(eta),
            None => {
                let residual = best_residual(model, chart, target, lift, d);
                return Err(Error::EquivarianceViolation { residual, tolerance: THETA_TOL });
            }
        }
    }
    GroupHom::new(chart.isotropy.clone(), target.isotropy.clone(), table)
}

fn equivariance_residual_for(
    samples: &[Point],
    chart: &DerivedChart,
    target: &DerivedChart,
    lift: &PointMap,
    d: usize,
    eta: usize,
) -> f64 {
    samples
        .iter()
        .map(|y| (lift(&chart.isotropy.act(d, y)) - target.isotropy.act(eta, &lift(y))).norm())
        .fold(0.0, f64::max)
}

fn best_residual(model: &ModelSpace, chart: &DerivedChart, target: &DerivedChart, lift: &PointMap, d: usize) -> f64 {
    let samples = chart.grid(model, 5, 0.9);
    target
        .isotropy
        .labels()
        .map(|eta| equivariance_residual_for(&samples, chart, target, lift, d, eta))
        .fold(f64::INFINITY, f64::min)
}

fn theta_options(model: &ModelSpace, chart: &DerivedChart, target: &DerivedChart, lift: &PointMap) -> Vec<Vec<(usize, f64)>> {
    let samples = chart.grid(model, 5, 0.9);
    let scale = samples.iter().map(|y| lift(y).norm()).fold(1.0, f64::max);
    chart
        .isotropy
        .labels()
        .map(|d| {
            target
                .isotropy
                .labels()
                .map(|eta| (eta, equivariance_residual_for(&samples, chart, target, lift, d, eta)))
                .filter(|&(_, r)| r <= THETA_TOL * scale)
                .collect()
        })
        .collect()
}

/// Every homomorphism Θ compatible with the lift (several exist when the
/// image is fixed by part of the target isotropy).
pub fn compatible_thetas(model: &ModelSpace, chart: &DerivedChart, target: &DerivedChart, lift: &PointMap) -> Vec<GroupHom> {
    let options: Vec<Vec<usize>> = theta_options(model, chart, target, lift)
        .into_iter()
        .map(|v| v.into_iter().map(|(e, _)| e).collect())
        .collect();
    let mut out = Vec::new();
    let mut table = vec![0usize; options.len()];
    fn rec(
        k: usize,
        options: &[Vec<usize>],
        table: &mut Vec<usize>,
        chart: &DerivedChart,
        target: &DerivedChart,
        out: &mut Vec<GroupHom>,
    ) {
        if out.len() >= 10_000 {
            return;
        }
        if k == options.len() {
            if let Ok(h) = GroupHom::new(chart.isotropy.clone(), target.isotropy.clone(), table.clone()) {
                out.push(h);
            }
            return;
        }
        for &e in &options[k] {
            table[k] = e;
            rec(k + 1, options, table, chart, target, out);
        }
    }
    rec(0, &options, &mut table, chart, target, &mut out);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivarianceReport {
    /// `max ‖f̃(γỹ) − Θ(γ)f̃(ỹ)‖` over charts, elements, samples.
    pub equivariance: f64,
    /// `max d_target(π f̃(ỹ), π F(ỹ))`; zero when no underlying map is known.
    pub commutation: f64,
    pub commutation_checked: bool,
    pub samples: usize,
}

impl EquivarianceReport {
    pub fn total(&self) -> f64 {
        self.equivariance + self.commutation
    }
}

pub fn check_equivariance(f: &OrbifoldMapData, per_axis: usize) -> EquivarianceReport {
    let mut eq: f64 = 0.0;
    let mut comm: f64 = 0.0;
    let mut count = 0;
    for (i, chart) in f.charts.iter().enumerate() {
        let samples = chart_samples(&f.source.model, chart, per_axis);
        let th = &f.thetas[i];
        for y in &samples {
            let fy = f.eval(i, y);
            for d in chart.isotropy.labels() {
                let lhs = f.eval(i, &chart.isotropy.act(d, y));
                let rhs = th.image_matrix(d) * &fy;
                eq = eq.max((lhs - rhs).norm());
            }
            if let Some(u) = &f.underlying {
                comm = comm.max(f.target.distance_between(&fy, &u(y)));
            }
            count += 1;
        }
    }
    EquivarianceReport { equivariance: eq, commutation: comm, commutation_checked: f.underlying.is_some(), samples: count }
}

/// `|Inn(G)|`, equal to `|G| / |Z(G)|`.
pub fn count_theta_choices(g: &Arc<FiniteActionGroup>) -> usize {
    let n = group::inner_automorphisms(g).len();
    assert_eq!(n * group::center(g).order(), g.order(), "|Inn G| · |Z G| = |G|");
    n
}

/// The finite group of lifts of the identity on a fixed atlas; an element is
/// one isotropy label per chart.
#[derive(Clone, Debug)]
pub struct IdentityLiftGroup {
    pub chart_groups: Vec<Arc<FiniteActionGroup>>,
    /// Sorted; `elements[0]` is the identity assignment.
    pub elements: Vec<Vec<usize>>,
    pub overlaps_checked: usize,
}

impl IdentityLiftGroup {
    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn compose(&self, a: &[usize], b: &[usize]) -> Vec<usize> {
        self.chart_groups.iter().enumerate().map(|(i, g)| g.mul(a[i], b[i])).collect()
    }

    pub fn inverse(&self, a: &[usize]) -> Vec<usize> {
        self.chart_groups.iter().enumerate().map(|(i, g)| g.inv(a[i])).collect()
    }

    pub fn index_of(&self, a: &[usize]) -> Option<usize> {
        self.elements.binary_search_by(|e| e.as_slice().cmp(a)).ok()
    }

    pub fn contains(&self, a: &[usize]) -> bool {
        self.index_of(a).is_some()
    }

    pub fn is_closed(&self) -> bool {
        self.elements.iter().all(|a| {
            self.contains(&self.inverse(a)) && self.elements.iter().all(|b| self.contains(&self.compose(a, b)))
        })
    }

    pub fn is_abelian(&self) -> bool {
        self.elements
            .iter()
            .all(|a| self.elements.iter().all(|b| self.compose(a, b) == self.compose(b, a)))
    }

    pub fn element_order(&self, a: &[usize]) -> usize {
        let id = &self.elements[0];
        let mut cur = a.to_vec();
        let mut k = 1;
        while &cur != id {
            cur = self.compose(&cur, a);
            k += 1;
        }
        k
    }

    pub fn exponent(&self) -> usize {
        fn gcd(a: usize, b: usize) -> usize {
            if b == 0 { a } else { gcd(b, a % b) }
        }
        self.elements.iter().map(|a| self.element_order(a)).fold(1, |acc, k| acc / gcd(acc, k) * k)
    }
}

/// Isotropy labels per chart realizing `f` as a lift of the identity, if
/// every lift agrees with an isotropy element on chart samples.
pub fn identity_lift_assignment(f: &OrbifoldMapData, per_axis: usize, tol: f64) -> Option<Vec<usize>> {
    let mut out = Vec::with_capacity(f.charts.len());
    for (i, chart) in f.charts.iter().enumerate() {
        let samples = chart_samples(&f.source.model, chart, per_axis);
        let found = chart.isotropy.labels().find(|&g| {
            samples.iter().all(|y| (f.eval(i, y) - chart.isotropy.act(g, y)).norm() < tol)
        })?;
        out.push(found);
    }
    Some(out)
}

fn covering_grid(o: &GoodOrbifold) -> Result<Vec<Point>> {
    Ok(match o.model {
        ModelSpace::FlatBall { .. } => o.model.grid(12)?.points,
        ModelSpace::Sphere { .. } => o.model.grid(24)?.points,
    })
}

/// Enumerates assignments `(γ_1, …, γ_M)` of isotropy elements whose lifts
/// agree germwise on every chart overlap.
pub fn enumerate_identity_lifts(o: &GoodOrbifold, atlas: &Atlas) -> Result<IdentityLiftGroup> {
    atlas.check_cover(o, &covering_grid(o)?, 1.0)?;
    let g = &o.group;
    let chart_groups: Vec<Arc<FiniteActionGroup>> = atlas.charts.iter().map(|c| c.isotropy.clone()).collect();

    // overlap samples: ỹ in chart i with g·ỹ in chart j
    struct Link {
        i: usize,
        j: usize,
        element: usize,
        samples: Vec<Point>,
    }
    let mut links: Vec<Link> = Vec::new();
    for ov in atlas.overlaps(o) {
        if ov.i > ov.j {
            continue;
        }
        let ci = &atlas.charts[ov.i];
        let cj = &atlas.charts[ov.j];
        let samples: Vec<Point> = ci
            .grid(&o.model, 7, 0.999)
            .into_iter()
            .filter(|y| cj.contains(&o.model, &g.act(ov.element, y)))
            .take(16)
            .collect();
        if !samples.is_empty() {
            links.push(Link { i: ov.i, j: ov.j, element: ov.element, samples });
        }
    }

    let mut cache: HashMap<(usize, usize, usize), bool> = HashMap::new();
    let mut consistent = |k: usize, a: usize, b: usize| -> bool {
        *cache.entry((k, a, b)).or_insert_with(|| {
            let l = &links[k];
            let ga = chart_groups[l.i].matrix(a);
            let gb = chart_groups[l.j].matrix(b);
            let gm = g.matrix(l.element);
            // the two lifts give the same germ iff some ambient h carries one
            // onto the other on the overlap
            g.labels().any(|h| {
                let hm = g.matrix(h);
                l.samples.iter().all(|y| ((gb * (gm * y)) - hm * (ga * y)).norm() < GROUP_EPS)
            })
        })
    };

    let m = atlas.len();
    let mut elements = Vec::new();
    let mut current = vec![0usize; m];
    let mut stack: Vec<usize> = vec![0];
    // iterative backtracking over charts in order
    'outer: loop {
        let depth = stack.len() - 1;
        let choice = stack[depth];
        if choice >= chart_groups[depth].order() {
            stack.pop();
            if stack.is_empty() {
                break 'outer;
            }
            *stack.last_mut().unwrap() += 1;
            continue;
        }
        current[depth] = choice;
        let ok = links.iter().enumerate().all(|(k, l)| {
            if l.j != depth && l.i != depth {
                return true;
            }
            if l.i > depth || l.j > depth {
                return true;
            }
            consistent(k, current[l.i], current[l.j])
        });
        if !ok {
            stack[depth] += 1;
            continue;
        }
        if depth + 1 == m {
            elements.push(current.clone());
            stack[depth] += 1;
        } else {
            stack.push(0);
        }
    }
    elements.sort();
    Ok(IdentityLiftGroup { chart_groups, elements, overlaps_checked: links.len() })
}

/// A lift extended from a small chart to a concentric bigger one.
#[derive(Clone)]
pub struct ExtendedLift {
    pub chart: DerivedChart,
    pub map: PointMap,
    pub theta: GroupHom,
}

const EXTENSION_STEPS: usize = 64;
const BRANCH_GAP: f64 = 1e-6;

fn model_path(model: &ModelSpace, from: &Point, to: &Point, s: f64) -> Point {
    match model {
        ModelSpace::FlatBall { .. } => from + (to - from) * s,
        ModelSpace::Sphere { .. } => {
            let d = model.distance(from, to);
            if d < 1e-15 {
                return from.clone();
            }
            let v = to - from * from.dot(to);
            let nv = v.norm();
            if nv < 1e-15 {
                return from.clone();
            }
            model.geodesic_step(from, &(v / nv), s * d)
        }
    }
}

fn continue_branch(
    f: &OrbifoldMapData,
    chart: usize,
    underlying: &PointMap,
    small: &DerivedChart,
    y: &Point,
) -> Result<Point> {
    let model = &f.source.model;
    let d = model.distance(&small.center, y);
    if d < small.radius {
        return Ok(f.eval(chart, y));
    }
    let tgt = &f.target.group;
    let s0 = 0.9 * small.radius / d;
    let mut prev = f.eval(chart, &model_path(model, &small.center, y, s0));
    for k in 1..=EXTENSION_STEPS {
        let s = s0 + (1.0 - s0) * k as f64 / EXTENSION_STEPS as f64;
        let z = model_path(model, &small.center, y, s);
        let base = underlying(&z);
        let mut branches: Vec<Point> = Vec::new();
        for l in tgt.labels() {
            let b = tgt.act(l, &base);
            if !branches.iter().any(|c| (c - &b).norm() < 1e-12) {
                branches.push(b);
            }
        }
        branches.sort_by(|a, b| (a - &prev).norm().total_cmp(&(b - &prev).norm()));
        let chosen = branches[0].clone();
        if branches.len() > 1 {
            let gap = (&branches[1] - &chosen).norm();
            if gap < BRANCH_GAP {
                return Err(Error::BranchAmbiguity { gap, witness: z.as_slice().to_vec() });
            }
        }
        prev = chosen;
    }
    let tc = &f.target_charts[chart];
    if !tc.contains(&f.target.model, &prev) {
        return Err(Error::ImageEscapesChart { witness: y.as_slice().to_vec() });
    }
    Ok(prev)
}

/// Extends the lift on chart `chart` to the concentric chart `big` by
/// continuation along radial paths, choosing the nearest branch of the
/// underlying map at each step.
pub fn extend_lift(f: &OrbifoldMapData, chart: usize, big: &DerivedChart, per_axis: usize) -> Result<ExtendedLift> {
    let small = f.charts[chart].clone();
    let model = f.source.model.clone();
    if model.distance(&small.center, &big.center) > GROUP_EPS || big.radius < small.radius {
        return Err(Error::ChartMismatch("extension needs concentric charts U ⊂ W".into()));
    }
    let underlying = f
        .underlying
        .clone()
        .ok_or_else(|| Error::ChartMismatch("extension needs the underlying map".into()))?;
    for y in big.grid(&model, per_axis, 0.999) {
        continue_branch(f, chart, &underlying, &small, &y)?;
    }
    let fc = f.clone();
    let small_c = small.clone();
    let map: PointMap = Arc::new(move |y: &Point| {
        continue_branch(&fc, chart, &underlying, &small_c, y).unwrap_or_else(|_| fc.eval(chart, y))
    });
    Ok(ExtendedLift { chart: big.clone(), map, theta: f.thetas[chart].clone() })
}

fn same_chart(a: &DerivedChart, b: &DerivedChart) -> bool {
    a.center.len() == b.center.len()
        && (&a.center - &b.center).amax() < GROUP_EPS
        && a.isotropy.same_elements(&b.isotropy)
}

/// Lift of `g` near the center of `chart`: the lift of a chart of `g` that
/// contains a translate `h·center`, transported back by `h⁻¹`; otherwise the
/// global representative.
fn refined_lift(g: &OrbifoldMapData, chart: &DerivedChart) -> Option<PointMap> {
    let model = &g.source.model;
    let grp = &g.source.group;
    let mut best: Option<(usize, usize, f64)> = None;
    for (j, c) in g.charts.iter().enumerate() {
        for h in grp.labels() {
            let rel = model.distance(&c.center, &grp.act(h, &chart.center)) / c.radius;
            if rel < 1.0 && best.map_or(true, |(_, _, b)| rel < b - 1e-12) {
                best = Some((j, h, rel));
            }
        }
    }
    match best {
        Some((j, h, _)) => {
            let hm = grp.matrix(h).clone();
            let lift = g.lifts[j].clone();
            Some(Arc::new(move |y: &Point| hm.transpose() * lift(&(&hm * y))))
        }
        None => g.underlying.clone(),
    }
}

/// `g ∘ f`, matching each target chart of `f` with a chart of `g`; when no
/// chart matches, `g` is refined to a chart at the image (see
/// [`refined_lift`]).
pub fn compose(f: &OrbifoldMapData, g: &OrbifoldMapData) -> Result<OrbifoldMapData> {
    if f.target.ambient_dim() != g.source.ambient_dim() || f.target.model != g.source.model {
        return Err(Error::ChartMismatch("target of f differs from source of g".into()));
    }
    let mut lifts: Vec<PointMap> = Vec::new();
    let mut thetas = Vec::new();
    let mut target_charts = Vec::new();
    for (i, tc) in f.target_charts.iter().enumerate() {
        let fl = f.lifts[i].clone();
        let (gl, gt, gth) = match g.charts.iter().position(|c| same_chart(c, tc)) {
            Some(j) => (g.lifts[j].clone(), g.target_charts[j].clone(), g.thetas[j].clone()),
            None => {
                let gl = refined_lift(g, tc).ok_or_else(|| {
                    Error::ChartMismatch(format!("no chart of g contains the image chart of f on chart {i}"))
                })?;
                let image = gl(&tc.center);
                let gt = build_chart(&g.target, &g.target.point(&image)?, None)?;
                let th = infer_theta(&g.source.model, tc, &gt, &gl)?;
                (gl, gt, th)
            }
        };
        thetas.push(f.thetas[i].then(&gth)?);
        lifts.push(Arc::new(move |y: &Point| gl(&fl(y))));
        target_charts.push(gt);
    }
    let underlying = match (&f.underlying, &g.underlying) {
        (Some(a), Some(b)) => {
            let (a, b) = (a.clone(), b.clone());
            Some(Arc::new(move |y: &Point| b(&a(y))) as PointMap)
        }
        _ => None,
    };
    OrbifoldMapData::new(
        f.source.clone(),
        g.target.clone(),
        f.charts.clone(),
        target_charts,
        lifts,
        thetas,
        f.degree.min(g.degree),
        underlying,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapDistanceReport {
    pub s: usize,
    pub value: f64,
    pub per_axis: usize,
    pub per_chart: Vec<f64>,
}

/// Point of the model with normal coordinates `u` around `y`.
fn normal_point(model: &ModelSpace, y: &Point, basis: &[Point], u: &[f64]) -> Point {
    let mut v = Point::zeros(y.len());
    for (b, &c) in basis.iter().zip(u) {
        v += b * c;
    }
    model.geodesic_step(y, &v, 1.0)
}

/// Value followed by finite-difference derivatives up to order `s` along
/// normal coordinates at `y`.
pub fn lift_jet(model: &ModelSpace, lift: &PointMap, y: &Point, s: usize) -> Vec<Point> {
    let basis = model.tangent_basis(y);
    let n = basis.len();
    let at = |u: &[f64]| lift(&normal_point(model, y, &basis, u));
    let mut out = vec![lift(y)];
    if s >= 1 {
        for k in 0..n {
            let mut up = vec![0.0; n];
            let mut um = vec![0.0; n];
            up[k] = FD_STEP;
            um[k] = -FD_STEP;
            out.push((at(&up) - at(&um)) / (2.0 * FD_STEP));
        }
    }
    if s >= 2 {
        let h = FD_STEP2;
        for k in 0..n {
            for l in k..n {
                let mut corners = Vec::with_capacity(4);
                for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let mut u = vec![0.0; n];
                    u[k] += a * h;
                    u[l] += b * h;
                    corners.push(at(&u));
                }
                out.push((&corners[0] - &corners[1] - &corners[2] + &corners[3]) / (4.0 * h * h));
            }
        }
    }
    out
}

fn one_sided(jf: &[Vec<Point>], jg: &[Vec<Point>], gamma: &DMatrix<f64>) -> f64 {
    let mut sup: f64 = 0.0;
    for (a, b) in jf.iter().zip(jg) {
        for (x, y) in a.iter().zip(b) {
            sup = sup.max((x - gamma * y).norm());
        }
    }
    sup
}

/// Sampled `d_s(f, g)`: per chart, the best target-isotropy matching of the
/// lifts measured on values and derivatives up to order `s`.
pub fn cs_distance(f: &OrbifoldMapData, g: &OrbifoldMapData, s: usize, per_axis: usize) -> Result<MapDistanceReport> {
    if s > 2 {
        return Err(Error::Invalid("only orders 0, 1, 2 are supported".into()));
    }
    if f.charts.len() != g.charts.len() || !f.charts.iter().zip(&g.charts).all(|(a, b)| same_chart(a, b)) {
        return Err(Error::ChartMismatch("maps are given on different atlases".into()));
    }
    let model = &f.source.model;
    let mut per_chart = Vec::with_capacity(f.charts.len());
    for (i, chart) in f.charts.iter().enumerate() {
        let samples = chart_samples(model, chart, per_axis);
        let jf: Vec<Vec<Point>> = samples.iter().map(|y| lift_jet(model, &f.lifts[i], y, s)).collect();
        let jg: Vec<Vec<Point>> = samples.iter().map(|y| lift_jet(model, &g.lifts[i], y, s)).collect();
        let iso = &f.target_charts[i].isotropy;
        let best = iso
            .labels()
            .map(|l| {
                let m = iso.matrix(l);
                let mt = m.transpose();
                one_sided(&jf, &jg, m).max(one_sided(&jg, &jf, &mt))
            })
            .fold(f64::INFINITY, f64::min);
        per_chart.push(best);
    }
    let value = per_chart.iter().copied().fold(0.0, f64::max);
    Ok(MapDistanceReport { s, value, per_axis, per_chart })
}

/// An equivariant polynomial lift on a flat chart, in the scaled coordinate
/// `(ỹ − center)/radius`.
#[derive(Clone, Debug)]
pub struct PolynomialLift {
    pub center: Point,
    pub scale: f64,
    pub poly: Polynomial,
    /// Fitted polynomial before averaging.
    pub raw: Polynomial,
    pub fit_error: f64,
}

impl PolynomialLift {
    pub fn eval(&self, y: &Point) -> Point {
        self.poly.eval(&((y - &self.center) / self.scale))
    }

    pub fn as_map(&self) -> PointMap {
        let me = self.clone();
        Arc::new(move |y: &Point| me.eval(y))
    }
}

/// Least-squares polynomial fit of the lift on chart `chart`, then the
/// average `(1/|Γ|) Σ Θ(γ)·p(γ⁻¹z)`.
pub fn equivariant_polynomial_approx(
    f: &OrbifoldMapData,
    chart: usize,
    degree: u32,
    per_axis: usize,
) -> Result<PolynomialLift> {
    if !f.source.model.is_flat() {
        return Err(Error::UnsupportedModel);
    }
    let c = &f.charts[chart];
    let samples: Vec<(Point, Point)> = chart_samples(&f.source.model, c, per_axis)
        .into_iter()
        .map(|y| ((&y - &c.center) / c.radius, f.eval(chart, &y)))
        .collect();
    let raw = poly::fit_polynomial(&samples, degree)?;
    let src: Vec<DMatrix<f64>> = c.isotropy.matrices();
    let out: Vec<DMatrix<f64>> = c.isotropy.labels().map(|l| f.thetas[chart].image_matrix(l).clone()).collect();
    let poly = poly::average_polynomial(&raw, &src, &out);
    let fit_error = samples.iter().map(|(z, v)| (poly.eval(z) - v).norm()).fold(0.0, f64::max);
    Ok(PolynomialLift { center: c.center.clone(), scale: c.radius, poly, raw, fit_error })
}

/// Graph of `f` over chart `chart`: `Γ_Θ = {(γ, Θ(γ))}` acting on sampled
/// points `(ỹ, f̃(ỹ))`.
pub fn graph_suborbifold(f: &OrbifoldMapData, chart: usize, per_axis: usize) -> Result<SuborbifoldDescriptor> {
    let c = &f.charts[chart];
    let th = &f.thetas[chart];
    let n = f.source.ambient_dim();
    let m = f.target.ambient_dim();
    let mats: Vec<DMatrix<f64>> = c.isotropy.labels().map(|l| block_diag(c.isotropy.matrix(l), th.image_matrix(l))).collect();
    let subgroup = Arc::new(FiniteActionGroup::from_matrices(n + m, &mats)?);
    let base = chart_samples(&f.source.model, c, per_axis);
    let samples: Vec<Point> = base
        .iter()
        .map(|y| Point::from_iterator(n + m, y.iter().chain(f.eval(chart, y).iter()).copied()))
        .collect();
    let mut residual: f64 = 0.0;
    for y in &base {
        let fy = f.eval(chart, y);
        for l in c.isotropy.labels() {
            residual = residual.max((th.image_matrix(l) * &fy - f.eval(chart, &c.isotropy.act(l, y))).norm());
        }
    }
    if residual > 1e-9 {
        return Err(Error::EquivarianceViolation { residual, tolerance: 1e-9 });
    }
    Ok(SuborbifoldDescriptor {
        ambient_dim: n + m,
        subgroup,
        subspace: None,
        samples,
        invariance_residual: residual,
        chart_residual: 0.0,
    })
}

/// Named model-level maps usable as global lifts.
#[derive(Clone, Debug, PartialEq)]
pub enum BuiltinMap {
    Identity,
    /// Rotation of the plane, or of the sphere about the z-axis.
    Rotation(f64),
    /// `x ↦ x^k` on a line, `z ↦ z^k` on the complex plane.
    Power(u32),
    Constant(Vec<f64>),
}

impl BuiltinMap {
    pub fn global_map(&self, o: &GoodOrbifold) -> Result<PointMap> {
        let model = &o.model;
        Ok(match self {
            BuiltinMap::Identity => Arc::new(|y: &Point| y.clone()),
            BuiltinMap::Rotation(a) => {
                let m = match model {
                    ModelSpace::FlatBall { dim: 2, .. } => gens::rotation2(*a),
                    ModelSpace::Sphere { dim: 2 } => gens::rotation_z(*a),
                    _ => return Err(Error::UnsupportedModel),
                };
                Arc::new(move |y: &Point| &m * y)
            }
            BuiltinMap::Power(k) => {
                let k = *k;
                match model {
                    ModelSpace::FlatBall { dim: 1, .. } => {
                        Arc::new(move |y: &Point| Point::from_element(1, y[0].powi(k as i32)))
                    }
                    ModelSpace::FlatBall { dim: 2, .. } => Arc::new(move |y: &Point| {
                        let r = y.norm().powi(k as i32);
                        let t = y[1].atan2(y[0]) * k as f64;
                        Point::from_column_slice(&[r * t.cos(), r * t.sin()])
                    }),
                    _ => return Err(Error::UnsupportedModel),
                }
            }
            BuiltinMap::Constant(p) => {
                let p = Point::from_column_slice(p);
                if p.len() != model.ambient_dim() {
                    return Err(Error::DimensionMismatch { expected: model.ambient_dim(), got: p.len() });
                }
                Arc::new(move |_: &Point| p.clone())
            }
        })
    }

    pub fn to_map(&self, o: Arc<GoodOrbifold>, atlas: &Atlas) -> Result<OrbifoldMapData> {
        if *self == BuiltinMap::Identity {
            return Ok(OrbifoldMapData::identity(o, atlas));
        }
        let m = self.global_map(&o)?;
        OrbifoldMapData::from_global(o.clone(), o, atlas, m, usize::MAX)
    }
}

/// Rotation of a football by `2π/p`.
pub fn football_rotation(p: usize) -> BuiltinMap {
    BuiltinMap::Rotation(2.0 * PI / p as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::orbifold::canonical_atlas;

    fn arc(o: GoodOrbifold) -> Arc<GoodOrbifold> {
        Arc::new(o)
    }

    #[test]
    fn identity_lift_equivariance() {
        let d4 = arc(GoodOrbifold::dihedral_plane(4, 1.0));
        let atlas = canonical_atlas(&d4).unwrap();
        for g in 0..8 {
            let f = OrbifoldMapData::identity_lift(d4.clone(), &atlas, &[g]).unwrap();
            let r = check_equivariance(&f, 9);
            assert!(r.total() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn constant_to_pole() {
        let fb = arc(GoodOrbifold::football(3));
        let atlas = canonical_atlas(&fb).unwrap();
        let f = BuiltinMap::Constant(vec![0.0, 0.0, 1.0]).to_map(fb.clone(), &atlas).unwrap();
        assert!(f.thetas.iter().all(|t| t.table().iter().all(|&x| x == 0)));
        assert!(check_equivariance(&f, 5).total() < 1e-12);
        // every Θ into the pole isotropy is compatible for a constant map
        let pole = &atlas.charts[0];
        assert_eq!(pole.isotropy.order(), 3);
        let all = compatible_thetas(&fb.model, pole, &f.target_charts[0], &f.lifts[0]);
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn planted_defect_detected() {
        let c4 = arc(GoodOrbifold::cyclic_plane(4, 1.0));
        let atlas = canonical_atlas(&c4).unwrap();
        let mut f = OrbifoldMapData::identity(c4, &atlas);
        f.lifts[0] = Arc::new(|y: &Point| {
            let mut z = y.clone();
            if y[0] > 0.0 {
                z[0] += 1e-3;
            }
            z
        });
        let r = check_equivariance(&f, 11);
        // perturbations at y and at γy may both be present: ‖e₁ − γe₁‖·1e-3
        assert!(r.equivariance >= 1e-3 && r.equivariance < 1.5e-3, "{r:?}");
    }

    #[test]
    fn twisting_keeps_residual() {
        let fb = arc(GoodOrbifold::football(4));
        let atlas = canonical_atlas(&fb).unwrap();
        let f = football_rotation(8).to_map(fb, &atlas).unwrap();
        let base = check_equivariance(&f, 5).equivariance;
        for d in 0..4 {
            let t = f.twisted(0, d);
            assert!((check_equivariance(&t, 5).equivariance - base).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_counts() {
        let z5 = Arc::new(group::generate_group(&[gens::rotation2(2.0 * PI / 5.0)], 100).unwrap());
        assert_eq!(count_theta_choices(&z5), 1);
        let d8 = Arc::new(group::generate_group(&[gens::rotation2(PI / 2.0), gens::flip(2, 1)], 100).unwrap());
        assert_eq!(count_theta_choices(&d8), 4);
        assert_eq!(count_theta_choices(&Arc::new(FiniteActionGroup::trivial(2))), 1);
    }

    #[test]
    fn identity_lift_groups() {
        for p in [2usize, 3] {
            let fb = GoodOrbifold::football(p);
            let atlas = canonical_atlas(&fb).unwrap();
            let id = enumerate_identity_lifts(&fb, &atlas).unwrap();
            assert_eq!(id.order(), p * p);
            assert!(id.is_abelian() && id.is_closed());
            assert_eq!(id.exponent(), p);
        }
        let line = GoodOrbifold::line_mod_reflection(1.0);
        assert_eq!(enumerate_identity_lifts(&line, &canonical_atlas(&line).unwrap()).unwrap().order(), 2);
        let m = GoodOrbifold::sphere_manifold(2);
        assert_eq!(enumerate_identity_lifts(&m, &canonical_atlas(&m).unwrap()).unwrap().order(), 1);
    }

    #[test]
    fn partial_atlas_rejected() {
        let fb = GoodOrbifold::football(3);
        let mut atlas = canonical_atlas(&fb).unwrap();
        atlas.charts.truncate(2);
        assert!(matches!(enumerate_identity_lifts(&fb, &atlas), Err(Error::AtlasNotCovering { .. })));
    }

    #[test]
    fn extension_of_even_map_keeps_branch() {
        let line = arc(GoodOrbifold::line_mod_reflection(2.0));
        let atlas = canonical_atlas(&line).unwrap();
        let small = build_chart(&line, &line.point_of(&[0.0]).unwrap(), Some(0.3)).unwrap();
        let sq: PointMap = Arc::new(|y: &Point| Point::from_element(1, y[0] * y[0]));
        let f = OrbifoldMapData::from_global(line.clone(), line.clone(), &Atlas::new(vec![small]), sq, 2).unwrap();
        let big = build_chart(&line, &line.point_of(&[0.0]).unwrap(), Some(1.4)).unwrap();
        let ext = extend_lift(&f, 0, &big, 41).unwrap();
        let escape = extend_lift(&f, 0, &atlas.charts[0], 41);
        assert!(matches!(escape, Err(Error::ImageEscapesChart { .. })));
        for x in linalg::linspace(-1.4, 1.4, 57) {
            let v = (ext.map)(&Point::from_element(1, x));
            assert!((v[0] - x * x).abs() < 1e-12);
        }
    }

    #[test]
    fn extension_of_rotation_matches_global() {
        let fb = arc(GoodOrbifold::football(3));
        let atlas = canonical_atlas(&fb).unwrap();
        let pole = atlas.charts[0].clone();
        let small = build_chart(&fb, &fb.point_of(pole.center.as_slice()).unwrap(), Some(0.5 * pole.radius)).unwrap();
        let rot = football_rotation(3).global_map(&fb).unwrap();
        let f = OrbifoldMapData::from_global(fb.clone(), fb.clone(), &Atlas::new(vec![small]), rot.clone(), 5).unwrap();
        let ext = extend_lift(&f, 0, &pole, 9).unwrap();
        for y in pole.grid(&fb.model, 9, 0.99) {
            assert!(((ext.map)(&y) - rot(&y)).norm() < 1e-12);
        }
    }

    #[test]
    fn composition_of_rotations() {
        let fb = arc(GoodOrbifold::football(5));
        let atlas = canonical_atlas(&fb).unwrap();
        let a = BuiltinMap::Rotation(0.3).to_map(fb.clone(), &atlas).unwrap();
        let b = BuiltinMap::Rotation(0.5).to_map(fb.clone(), &atlas).unwrap();
        let ab = compose(&a, &b).unwrap();
        let c = BuiltinMap::Rotation(0.8).global_map(&fb).unwrap();
        for (i, chart) in ab.charts.iter().enumerate() {
            for y in chart.grid(&fb.model, 5, 1.0) {
                assert!((ab.eval(i, &y) - c(&y)).norm() < 1e-12);
            }
        }
        assert!(check_equivariance(&ab, 5).total() < 1e-8);
        let id = OrbifoldMapData::identity(fb.clone(), &atlas);
        let ia = compose(&id, &a).unwrap();
        assert_eq!(cs_distance(&ia, &a, 1, 5).unwrap().value, 0.0);
    }

    #[test]
    fn distance_to_rotation_on_disk_mod_negation() {
        let o = arc(GoodOrbifold::cyclic_plane(2, 1.0));
        let atlas = canonical_atlas(&o).unwrap();
        let theta = 1.1;
        let id = OrbifoldMapData::identity(o.clone(), &atlas);
        let rot = BuiltinMap::Rotation(theta).to_map(o.clone(), &atlas).unwrap();
        let d = cs_distance(&id, &rot, 0, 21).unwrap();
        let rm = gens::rotation2(theta);
        let want = atlas.charts[0]
            .grid(&o.model, 21, 1.0)
            .iter()
            .map(|y| (y - &rm * y).norm().min((y + &rm * y).norm()))
            .fold(0.0, f64::max);
        assert!((d.value - want).abs() < 1e-12);
    }

    #[test]
    fn first_order_distance_sees_wiggles() {
        let o = arc(GoodOrbifold::flat_manifold(1, 1.0));
        let atlas = canonical_atlas(&o).unwrap();
        let id = OrbifoldMapData::identity(o.clone(), &atlas);
        let eps = 1e-3;
        let wiggle: PointMap = Arc::new(move |y: &Point| Point::from_element(1, y[0] + eps * (y[0] / eps).sin()));
        let g = OrbifoldMapData::from_global(o.clone(), o, &atlas, wiggle, 3).unwrap();
        let d0 = cs_distance(&id, &g, 0, 101).unwrap().value;
        let d1 = cs_distance(&id, &g, 1, 101).unwrap().value;
        assert!(d0 <= eps + 1e-15);
        assert!(d1 / d0 > 10.0);
    }

    #[test]
    fn odd_approximation_of_sine() {
        let line = arc(GoodOrbifold::line_mod_reflection(1.0));
        let atlas = canonical_atlas(&line).unwrap();
        let sine: PointMap = Arc::new(|y: &Point| Point::from_element(1, y[0].sin()));
        let f = OrbifoldMapData::from_global(line.clone(), line.clone(), &atlas, sine, 9).unwrap();
        assert!(f.thetas[0].is_identity());
        let mut last = f64::INFINITY;
        for deg in 1..=9 {
            let p = equivariant_polynomial_approx(&f, 0, deg, 201).unwrap();
            assert!(p.fit_error <= last + 1e-12);
            last = p.fit_error;
            assert!(p.poly.terms.iter().all(|(e, c)| e[0] % 2 == 1 || c.amax() == 0.0));
        }
        let p = equivariant_polynomial_approx(&f, 0, 9, 201).unwrap();
        let dense = linalg::linspace(-1.0, 1.0, 2001)
            .into_iter()
            .map(|x| (p.eval(&Point::from_element(1, x))[0] - x.sin()).abs())
            .fold(0.0, f64::max);
        assert!(dense < 1e-5);
    }

    #[test]
    fn graph_of_power_map() {
        let c3 = arc(GoodOrbifold::cyclic_plane(3, 1.0));
        let atlas = canonical_atlas(&c3).unwrap();
        let f = BuiltinMap::Power(2).to_map(c3, &atlas).unwrap();
        let g = graph_suborbifold(&f, 0, 7).unwrap();
        assert_eq!(g.subgroup.order(), 3);
        assert!(g.invariance_residual < 1e-12);
    }
}
