//! Good orbifolds `M/Γ` with `M` a flat ball or a round sphere.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::group::{self, gens, FiniteActionGroup, GROUP_EPS};
use crate::linalg;
use crate::{Error, Point, Result};

/// Default chart radius as a fraction of the orbit separation.
pub const CHART_RADIUS_FACTOR: f64 = 0.4;
/// A model point is covered by a chart of the canonical atlas when it lies
/// within this fraction of the chart radius.
pub const COVER_MARGIN: f64 = 0.6;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpace {
    /// Open ball of the given radius in ℝⁿ.
    FlatBall { dim: usize, radius: f64 },
    /// Unit sphere Sⁿ ⊂ ℝⁿ⁺¹.
    Sphere { dim: usize },
}

impl ModelSpace {
    pub fn ambient_dim(&self) -> usize {
        match self {
            ModelSpace::FlatBall { dim, .. } => *dim,
            ModelSpace::Sphere { dim } => dim + 1,
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self {
            ModelSpace::FlatBall { dim, .. } | ModelSpace::Sphere { dim } => *dim,
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, ModelSpace::FlatBall { .. })
    }

    /// Euclidean distance (flat) or great-circle distance (sphere).
    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        match self {
            ModelSpace::FlatBall { .. } => (a - b).norm(),
            ModelSpace::Sphere { .. } => {
                let chord = (a - b).norm();
                2.0 * (0.5 * chord).min(1.0).asin()
            }
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        if x.len() != self.ambient_dim() {
            return false;
        }
        match self {
            ModelSpace::FlatBall { radius, .. } => x.norm() < *radius,
            ModelSpace::Sphere { .. } => (x.norm() - 1.0).abs() < 1e-12,
        }
    }

    /// Orthonormal basis of the tangent space at `x` in ambient coordinates.
    pub fn tangent_basis(&self, x: &Point) -> Vec<Point> {
        match self {
            ModelSpace::FlatBall { dim, .. } => (0..*dim).map(|i| linalg::unit(*dim, i)).collect(),
            ModelSpace::Sphere { .. } => linalg::complement_basis(x),
        }
    }

    /// Removes the normal component on the sphere; identity on flat models.
    pub fn project_tangent(&self, x: &Point, v: &Point) -> Point {
        match self {
            ModelSpace::FlatBall { .. } => v.clone(),
            ModelSpace::Sphere { .. } => v - x * x.dot(v),
        }
    }

    /// Moves `x` along the model geodesic in direction `v` for parameter `t`
    /// (`v` tangent). Used for finite differences along the model.
    pub fn geodesic_step(&self, x: &Point, v: &Point, t: f64) -> Point {
        match self {
            ModelSpace::FlatBall { .. } => x + v * t,
            ModelSpace::Sphere { .. } => {
                let nv = v.norm();
                if nv == 0.0 {
                    return x.clone();
                }
                let a = nv * t;
                x * a.cos() + v * (a.sin() / nv)
            }
        }
    }

    /// Sampling grid of the model with grid adjacency.
    pub fn grid(&self, resolution: usize) -> Result<ModelGrid> {
        let res = resolution.max(2);
        match self {
            ModelSpace::FlatBall { dim, radius } => {
                let per_axis = res + 1;
                let cube = linalg::cube_grid(*dim, per_axis);
                let mut index = vec![usize::MAX; cube.len()];
                let mut points = Vec::new();
                for (k, p) in cube.iter().enumerate() {
                    let q = p * *radius;
                    if q.norm() < *radius {
                        index[k] = points.len();
                        points.push(q);
                    }
                }
                let mut neighbors = vec![Vec::new(); points.len()];
                for (k, &i) in index.iter().enumerate() {
                    if i == usize::MAX {
                        continue;
                    }
                    let coords = decompose(k, *dim, per_axis);
                    for offset in offsets(*dim) {
                        let mut other = 0usize;
                        let mut stride = 1usize;
                        let mut valid = true;
                        for d in 0..*dim {
                            let c = coords[d] as i64 + offset[d];
                            if c < 0 || c >= per_axis as i64 {
                                valid = false;
                                break;
                            }
                            other += c as usize * stride;
                            stride *= per_axis;
                        }
                        if valid && index[other] != usize::MAX {
                            neighbors[i].push(index[other]);
                        }
                    }
                }
                let spacing = 2.0 * radius / res as f64 * (*dim as f64).sqrt();
                Ok(ModelGrid { points, neighbors, spacing, resolution: res })
            }
            ModelSpace::Sphere { dim: 1 } => {
                let points: Vec<Point> = (0..res)
                    .map(|j| {
                        let phi = 2.0 * PI * j as f64 / res as f64;
                        Point::from_column_slice(&[phi.cos(), phi.sin()])
                    })
                    .collect();
                let neighbors = (0..res).map(|j| vec![(j + 1) % res, (j + res - 1) % res]).collect();
                Ok(ModelGrid { points, neighbors, spacing: 2.0 * PI / res as f64, resolution: res })
            }
            ModelSpace::Sphere { dim: 2 } => {
                let rows = res + 1;
                let cols = res;
                let mut points = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    let theta = PI * i as f64 / res as f64;
                    for j in 0..cols {
                        let phi = 2.0 * PI * j as f64 / cols as f64;
                        points.push(Point::from_column_slice(&[
                            theta.sin() * phi.cos(),
                            theta.sin() * phi.sin(),
                            theta.cos(),
                        ]));
                    }
                }
                let mut neighbors = vec![Vec::new(); points.len()];
                for i in 0..rows as i64 {
                    for j in 0..cols as i64 {
                        let me = (i as usize) * cols + j as usize;
                        for di in -1..=1i64 {
                            for dj in -1..=1i64 {
                                if di == 0 && dj == 0 {
                                    continue;
                                }
                                let ni = i + di;
                                if ni < 0 || ni >= rows as i64 {
                                    continue;
                                }
                                let nj = (j + dj).rem_euclid(cols as i64);
                                neighbors[me].push(ni as usize * cols + nj as usize);
                            }
                        }
                    }
                }
                Ok(ModelGrid { points, neighbors, spacing: 2.0 * PI / res as f64, resolution: res })
            }
            ModelSpace::Sphere { dim } => {
                Err(Error::Invalid(format!("grid sampling of S^{dim} is not supported")))
            }
        }
    }
}

fn decompose(mut k: usize, dim: usize, per_axis: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(dim);
    for _ in 0..dim {
        out.push(k % per_axis);
        k /= per_axis;
    }
    out
}

fn offsets(dim: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|v| (-1..=1).map(move |d| {
                let mut w = v.clone();
                w.push(d);
                w
            }))
            .collect();
    }
    out.retain(|v| v.iter().any(|&d| d != 0));
    out
}

/// Sample points of a model space with grid adjacency.
#[derive(Clone, Debug)]
pub struct ModelGrid {
    pub points: Vec<Point>,
    pub neighbors: Vec<Vec<usize>>,
    /// Upper bound on the distance between adjacent samples.
    pub spacing: f64,
    pub resolution: usize,
}

/// A finite group acting effectively on a flat ball or round sphere.
#[derive(Clone, Debug)]
pub struct GoodOrbifold {
    pub model: ModelSpace,
    pub group: Arc<FiniteActionGroup>,
    pub name: String,
}

impl GoodOrbifold {
    pub fn new(model: ModelSpace, group: FiniteActionGroup) -> Result<Self> {
        if group.dim() != model.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: model.ambient_dim(), got: group.dim() });
        }
        // distinct orthogonal matrices act differently on both model kinds,
        // so effectiveness reduces to the identity being the only element
        // within ε of I.
        let id = DMatrix::<f64>::identity(group.dim(), group.dim());
        for l in group.labels().skip(1) {
            if (group.matrix(l) - &id).amax() < GROUP_EPS {
                return Err(Error::InvalidModel(format!("element {l} acts trivially")));
            }
        }
        if let ModelSpace::FlatBall { radius, .. } = model {
            if !(radius > 0.0) {
                return Err(Error::InvalidModel("flat radius must be positive".into()));
            }
        }
        let name = String::new();
        Ok(GoodOrbifold { model, group: Arc::new(group), name })
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn flat(dim: usize, radius: f64, generators: &[DMatrix<f64>]) -> Result<Self> {
        let g = group::generate_group_in_dim(dim, generators, group::DEFAULT_MAX_ORDER)?;
        Self::new(ModelSpace::FlatBall { dim, radius }, g)
    }

    pub fn sphere(dim: usize, generators: &[DMatrix<f64>]) -> Result<Self> {
        let g = group::generate_group_in_dim(dim + 1, generators, group::DEFAULT_MAX_ORDER)?;
        Self::new(ModelSpace::Sphere { dim }, g)
    }

    /// `S²/ℤ_p` with ℤ_p rotating about the z-axis.
    pub fn football(p: usize) -> Self {
        Self::sphere(2, &[gens::rotation_z(2.0 * PI / p as f64)])
            .expect("football")
            .named(&format!("football-{p}"))
    }

    /// `ℝ/ℤ₂` with `x ↦ −x`.
    pub fn line_mod_reflection(radius: f64) -> Self {
        Self::flat(1, radius, &[gens::negation(1)]).expect("line").named("line-mod-z2")
    }

    /// `ℝ²/ℤ₂` with `(x, y) ↦ (x, −y)`.
    pub fn mirror_plane(radius: f64) -> Self {
        Self::flat(2, radius, &[gens::flip(2, 1)]).expect("mirror").named("mirror-plane")
    }

    pub fn cyclic_plane(k: usize, radius: f64) -> Self {
        Self::flat(2, radius, &[gens::rotation2(2.0 * PI / k as f64)])
            .expect("cyclic")
            .named(&format!("plane-mod-c{k}"))
    }

    /// Dihedral group of order `2k` acting on the plane.
    pub fn dihedral_plane(k: usize, radius: f64) -> Self {
        Self::flat(2, radius, &[gens::rotation2(2.0 * PI / k as f64), gens::flip(2, 1)])
            .expect("dihedral")
            .named(&format!("plane-mod-d{k}"))
    }

    pub fn flat_manifold(dim: usize, radius: f64) -> Self {
        Self::flat(dim, radius, &[]).expect("manifold").named("flat-manifold")
    }

    pub fn sphere_manifold(dim: usize) -> Self {
        Self::sphere(dim, &[]).expect("sphere").named("sphere-manifold")
    }

    pub fn ambient_dim(&self) -> usize {
        self.model.ambient_dim()
    }

    /// Quotient point with representative `x` (sphere points are normalized).
    pub fn point(&self, x: &Point) -> Result<QuotientPoint> {
        if x.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim(), got: x.len() });
        }
        let rep = match self.model {
            ModelSpace::Sphere { .. } => {
                let n = x.norm();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::Invalid(format!("point of norm {n} is not on the unit sphere")));
                }
                x / n
            }
            ModelSpace::FlatBall { radius, .. } => {
                if x.norm() >= radius {
                    return Err(Error::Invalid(format!("point of norm {} outside the model ball", x.norm())));
                }
                x.clone()
            }
        };
        Ok(QuotientPoint::from_model(&self.group, rep))
    }

    pub fn point_of(&self, coords: &[f64]) -> Result<QuotientPoint> {
        self.point(&Point::from_column_slice(coords))
    }

    /// `min_γ d(γ·a, b)`.
    pub fn distance_between(&self, a: &Point, b: &Point) -> f64 {
        self.group
            .labels()
            .map(|l| self.model.distance(&self.group.act(l, a), b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Minimal distance from `x` to an orbit point other than `x` itself;
    /// infinite when the orbit is `{x}`.
    pub fn orbit_separation(&self, x: &Point) -> f64 {
        group::orbit(&self.group, x)
            .iter()
            .map(|y| self.model.distance(x, y))
            .filter(|&d| d > GROUP_EPS)
            .fold(f64::INFINITY, f64::min)
    }

    fn chart_cap(&self) -> f64 {
        match self.model {
            ModelSpace::FlatBall { radius, .. } => radius,
            ModelSpace::Sphere { .. } => CHART_RADIUS_FACTOR * PI,
        }
    }
}

/// A point of the underlying space `M/Γ`.
#[derive(Clone, Debug)]
pub struct QuotientPoint {
    pub representative: Point,
    /// Lexicographically least orbit member; decides equality.
    pub canonical: Point,
}

impl QuotientPoint {
    pub fn from_model(group: &FiniteActionGroup, representative: Point) -> Self {
        let canonical = group::canonical_representative(group, &representative);
        QuotientPoint { representative, canonical }
    }
}

impl PartialEq for QuotientPoint {
    fn eq(&self, other: &Self) -> bool {
        self.canonical.len() == other.canonical.len()
            && (&self.canonical - &other.canonical).amax() < GROUP_EPS
    }
}

/// Quotient metric `d([a], [b]) = min_γ d(γ·ã, b̃)`.
pub fn quotient_distance(o: &GoodOrbifold, a: &QuotientPoint, b: &QuotientPoint) -> f64 {
    o.distance_between(&a.representative, &b.representative)
}

/// Stabilizer of the representative.
pub fn isotropy_at(o: &GoodOrbifold, p: &QuotientPoint) -> FiniteActionGroup {
    group::stabilizer(&o.group, &p.representative)
}

/// A chart `(Ũ, Γ_x)`: the model ball of radius `radius` around `center`,
/// acted on by the stabilizer of `center`.
#[derive(Clone, Debug)]
pub struct DerivedChart {
    pub center: Point,
    pub radius: f64,
    pub isotropy: Arc<FiniteActionGroup>,
    /// Distance from the center to the nearest orbit point outside the
    /// isotropy orbit (infinite if none).
    pub separation: f64,
}

impl DerivedChart {
    pub fn contains(&self, model: &ModelSpace, y: &Point) -> bool {
        model.distance(&self.center, y) < self.radius
    }

    /// Point of the chart with normal coordinates `u` (|u| ≤ 1 maps into the
    /// closed chart ball).
    pub fn from_unit(&self, model: &ModelSpace, u: &Point) -> Point {
        match model {
            ModelSpace::FlatBall { .. } => &self.center + u * self.radius,
            ModelSpace::Sphere { .. } => {
                let basis = model.tangent_basis(&self.center);
                let mut v = Point::zeros(self.center.len());
                for (k, b) in basis.iter().enumerate() {
                    v += b * u[k];
                }
                model.geodesic_step(&self.center, &v, self.radius)
            }
        }
    }

    /// Sample points on the closed chart ball scaled by `scale ≤ 1`.
    pub fn grid(&self, model: &ModelSpace, per_axis: usize, scale: f64) -> Vec<Point> {
        linalg::ball_grid(model.intrinsic_dim(), per_axis)
            .into_iter()
            .map(|u| self.from_unit(model, &(u * scale)))
            .collect()
    }
}

/// Builds the chart at `p`; default radius is `0.4 ×` the orbit separation
/// (capped by the model), explicit radii must stay below half of it.
pub fn build_chart(o: &GoodOrbifold, p: &QuotientPoint, radius: Option<f64>) -> Result<DerivedChart> {
    let center = p.representative.clone();
    let separation = o.orbit_separation(&center);
    let cap = o.chart_cap();
    let radius = match radius {
        Some(r) => {
            if !(r > 0.0) {
                return Err(Error::Invalid("chart radius must be positive".into()));
            }
            if r >= 0.5 * separation {
                return Err(Error::RadiusTooLarge { radius: r, bound: 0.5 * separation });
            }
            if !o.model.is_flat() && r >= 0.5 * PI {
                return Err(Error::RadiusTooLarge { radius: r, bound: 0.5 * PI });
            }
            r
        }
        None => (CHART_RADIUS_FACTOR * separation).min(cap),
    };
    let isotropy = Arc::new(group::stabilizer(&o.group, &center));
    Ok(DerivedChart { center, radius, isotropy, separation })
}

/// A finite list of charts covering the orbifold.
#[derive(Clone, Debug)]
pub struct Atlas {
    pub charts: Vec<DerivedChart>,
}

/// A pair of charts whose balls meet after moving chart `j` by `element`.
#[derive(Clone, Debug, PartialEq)]
pub struct Overlap {
    pub i: usize,
    pub j: usize,
    /// Ambient label `g` with `Ũ_i ∩ g⁻¹Ũ_j ≠ ∅`.
    pub element: usize,
}

impl Atlas {
    pub fn new(charts: Vec<DerivedChart>) -> Self {
        Atlas { charts }
    }

    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    /// Chart index and ambient label `g` with `g·y` inside the chart at
    /// `margin ×` its radius, preferring the chart whose center is nearest.
    pub fn locate(&self, o: &GoodOrbifold, y: &Point, margin: f64) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, chart) in self.charts.iter().enumerate() {
            for g in o.group.labels() {
                let d = o.model.distance(&chart.center, &o.group.act(g, y));
                let rel = d / chart.radius;
                if rel < margin && best.map_or(true, |(_, _, b)| rel < b - 1e-12) {
                    best = Some((i, g, rel));
                }
            }
        }
        best.map(|(i, g, _)| (i, g))
    }

    /// Checks that every grid point lies in some chart (at `margin`).
    pub fn check_cover(&self, o: &GoodOrbifold, grid: &[Point], margin: f64) -> Result<()> {
        for y in grid {
            if self.locate(o, y, margin).is_none() {
                return Err(Error::AtlasNotCovering { witness: y.as_slice().to_vec() });
            }
        }
        Ok(())
    }

    pub fn overlaps(&self, o: &GoodOrbifold) -> Vec<Overlap> {
        let mut out = Vec::new();
        for (i, a) in self.charts.iter().enumerate() {
            for (j, b) in self.charts.iter().enumerate() {
                if i == j {
                    continue;
                }
                for g in o.group.labels() {
                    // g⁻¹ moves chart j next to chart i
                    let moved = o.group.act(o.group.inv(g), &b.center);
                    if o.model.distance(&a.center, &moved) < a.radius + b.radius {
                        out.push(Overlap { i, j, element: g });
                    }
                }
            }
        }
        out
    }
}

/// Canonical atlas: one chart at the origin for flat models; for spheres,
/// charts at isolated singular points followed by a greedy regular cover.
pub fn canonical_atlas(o: &GoodOrbifold) -> Result<Atlas> {
    match o.model {
        ModelSpace::FlatBall { radius, .. } => {
            let origin = o.point(&Point::zeros(o.ambient_dim()))?;
            Ok(Atlas::new(vec![build_chart(o, &origin, Some(radius).filter(|_| false))?]))
        }
        ModelSpace::Sphere { .. } => {
            let mut charts: Vec<DerivedChart> = Vec::new();
            let mut seeds: Vec<Point> = Vec::new();
            for l in o.group.labels().skip(1) {
                let sub = o.group.subgroup(&[l])?;
                let fixed = group::fixed_subspace(&sub);
                if fixed.len() == 1 {
                    seeds.push(fixed[0].clone());
                    seeds.push(-&fixed[0]);
                }
            }
            seeds.sort_by(|a, b| linalg::lex_cmp(b.as_slice(), a.as_slice(), GROUP_EPS));
            let grid = o.model.grid(24)?.points;
            let covered = |charts: &[DerivedChart], y: &Point| {
                charts.iter().any(|c| {
                    o.group.labels().any(|g| o.model.distance(&c.center, &o.group.act(g, y)) < COVER_MARGIN * c.radius)
                })
            };
            for s in seeds {
                if !covered(&charts, &s) {
                    charts.push(build_chart(o, &o.point(&s)?, None)?);
                }
            }
            for y in &grid {
                if !covered(&charts, y) {
                    charts.push(build_chart(o, &o.point(y)?, None)?);
                }
            }
            Ok(Atlas::new(charts))
        }
    }
}

/// A connected set of points with a common isotropy group.
#[derive(Clone, Debug)]
pub struct Stratum {
    /// Ambient labels of the isotropy group of the first sample.
    pub isotropy_signature: Vec<usize>,
    pub isotropy_order: usize,
    /// Distinct quotient points sampled in this stratum.
    pub sample_points: Vec<QuotientPoint>,
    pub component: usize,
}

#[derive(Clone, Debug)]
pub struct Stratification {
    pub resolution: usize,
    pub strata: Vec<Stratum>,
}

impl Stratification {
    pub fn len(&self) -> usize {
        self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut k = i;
        while self.0[k] != r {
            let next = self.0[k];
            self.0[k] = r;
            k = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Strata sampled on the model grid: samples with equal isotropy are joined
/// along grid adjacency, then components related by the group are merged.
pub fn strata(o: &GoodOrbifold, resolution: usize) -> Result<Stratification> {
    let grid = o.model.grid(resolution)?;
    let g = &o.group;
    let sigs: Vec<Vec<usize>> = grid.points.iter().map(|x| group::stabilizer_labels(g, x)).collect();
    let mut uf = UnionFind((0..grid.points.len()).collect());
    for (i, nbrs) in grid.neighbors.iter().enumerate() {
        for &j in nbrs {
            if sigs[i] == sigs[j] {
                uf.union(i, j);
            }
        }
    }

    // spatial hash for orbit matching
    let cell = grid.spacing;
    let key = |p: &Point| -> Vec<i64> { p.iter().map(|c| (c / cell).floor() as i64).collect() };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, p) in grid.points.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let near_offsets = offsets(o.ambient_dim());
    for (i, x) in grid.points.iter().enumerate() {
        for l in g.labels().skip(1) {
            let y = g.act(l, x);
            let conj: Vec<usize> = {
                let mut v: Vec<usize> = sigs[i].iter().map(|&s| g.mul(g.mul(l, s), g.inv(l))).collect();
                v.sort_unstable();
                v
            };
            let base = key(&y);
            let mut best: Option<(usize, f64)> = None;
            for off in near_offsets.iter().map(|o| o.as_slice()).chain(std::iter::once(&[][..])) {
                let k: Vec<i64> = if off.is_empty() {
                    base.clone()
                } else {
                    base.iter().zip(off).map(|(a, b)| a + b).collect()
                };
                if let Some(cands) = buckets.get(&k) {
                    for &j in cands {
                        let d = (&grid.points[j] - &y).norm();
                        if d < cell && best.map_or(true, |(_, bd)| d < bd) {
                            best = Some((j, d));
                        }
                    }
                }
            }
            if let Some((j, _)) = best {
                if sigs[j] == conj {
                    uf.union(i, j);
                }
            }
        }
    }

    let mut roots: Vec<usize> = Vec::new();
    let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..grid.points.len() {
        let r = uf.find(i);
        if !members.contains_key(&r) {
            roots.push(r);
        }
        members.entry(r).or_default().push(i);
    }
    let mut out = Vec::with_capacity(roots.len());
    for (component, r) in roots.into_iter().enumerate() {
        let idx = &members[&r];
        let mut samples: Vec<QuotientPoint> = Vec::new();
        for &i in idx {
            let q = QuotientPoint::from_model(g, grid.points[i].clone());
            if !samples.iter().any(|s| *s == q) {
                samples.push(q);
            }
        }
        let sig = sigs[idx[0]].clone();
        out.push(Stratum { isotropy_order: sig.len(), isotropy_signature: sig, sample_points: samples, component });
    }
    Ok(Stratification { resolution: grid.resolution, strata: out })
}

pub(crate) fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = DMatrix::<f64>::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((n, n), (m, m)).copy_from(b);
    out
}

/// Product of two flat orbifolds with the block-diagonal action of
/// `Γ₁ × Γ₂`; the model ball has radius `√(R₁² + R₂²)`.
pub fn product(o1: &GoodOrbifold, o2: &GoodOrbifold) -> Result<GoodOrbifold> {
    let (n1, r1) = match o1.model {
        ModelSpace::FlatBall { dim, radius } => (dim, radius),
        _ => return Err(Error::UnsupportedModel),
    };
    let (n2, r2) = match o2.model {
        ModelSpace::FlatBall { dim, radius } => (dim, radius),
        _ => return Err(Error::UnsupportedModel),
    };
    let id1 = DMatrix::<f64>::identity(n1, n1);
    let id2 = DMatrix::<f64>::identity(n2, n2);
    let mut generators: Vec<DMatrix<f64>> = o1.group.matrices().iter().skip(1).map(|m| block_diag(m, &id2)).collect();
    generators.extend(o2.group.matrices().iter().skip(1).map(|m| block_diag(&id1, m)));
    let radius = (r1 * r1 + r2 * r2).sqrt();
    Ok(GoodOrbifold::flat(n1 + n2, radius, &generators)?.named(&format!("{}x{}", o1.name, o2.name)))
}

/// A suborbifold presented in one chart: a subgroup `Λ` and either an
/// invariant linear subspace or a sampled invariant set.
#[derive(Clone, Debug)]
pub struct SuborbifoldDescriptor {
    pub ambient_dim: usize,
    pub subgroup: Arc<FiniteActionGroup>,
    /// Orthonormal basis of `Ṽ` when the suborbifold chart is linear.
    pub subspace: Option<Vec<Point>>,
    pub samples: Vec<Point>,
    /// `max ‖λ·s − (nearest point of the set)‖` over samples and `λ ∈ Λ`.
    pub invariance_residual: f64,
    /// Chart condition residual: points of `U ∩ X_P` reached from `Ṽ` by the
    /// ambient group (zero when not applicable).
    pub chart_residual: f64,
}

impl SuborbifoldDescriptor {
    /// Isotropy of a point of `Ṽ` inside the suborbifold: its stabilizer in `Λ`.
    pub fn isotropy_at(&self, x: &Point) -> FiniteActionGroup {
        group::stabilizer(&self.subgroup, x)
    }
}

fn distance_to_subspace(basis: &[Point], x: &Point) -> f64 {
    let mut r = x.clone();
    for b in basis {
        r -= b * b.dot(x);
    }
    r.norm()
}

/// `diag(O) ⊂ O × O` with `Λ = {(γ, γ)}` and `Ṽ = {(x, x)}`.
pub fn diagonal_suborbifold(o: &GoodOrbifold) -> Result<SuborbifoldDescriptor> {
    let radius = match o.model {
        ModelSpace::FlatBall { radius, .. } => radius,
        _ => return Err(Error::UnsupportedModel),
    };
    let n = o.ambient_dim();
    let prod = product(o, o)?;
    let lambda_mats: Vec<DMatrix<f64>> = o.group.matrices().iter().map(|m| block_diag(m, m)).collect();
    let subgroup = Arc::new(FiniteActionGroup::from_matrices(2 * n, &lambda_mats)?);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let subspace: Vec<Point> = (0..n)
        .map(|i| {
            let mut v = Point::zeros(2 * n);
            v[i] = s;
            v[n + i] = s;
            v
        })
        .collect();
    let base: Vec<Point> = linalg::ball_grid(n, 9).into_iter().map(|u| u * (0.9 * radius)).collect();
    let samples: Vec<Point> = base
        .iter()
        .map(|a| Point::from_iterator(2 * n, a.iter().chain(a.iter()).copied()))
        .collect();
    let mut invariance_residual: f64 = 0.0;
    for x in &samples {
        for l in subgroup.labels() {
            invariance_residual = invariance_residual.max(distance_to_subspace(&subspace, &subgroup.act(l, x)));
        }
    }
    // points (a, γa) of the diagonal in the quotient come from Ṽ via Γ × Γ
    let mut chart_residual: f64 = 0.0;
    for a in &base {
        for l in o.group.labels() {
            let x = Point::from_iterator(2 * n, a.iter().chain(o.group.act(l, a).iter()).copied());
            let best = prod
                .group
                .labels()
                .map(|k| distance_to_subspace(&subspace, &prod.group.act(k, &x)))
                .fold(f64::INFINITY, f64::min);
            chart_residual = chart_residual.max(best);
        }
    }
    Ok(SuborbifoldDescriptor {
        ambient_dim: 2 * n,
        subgroup,
        subspace: Some(subspace),
        samples,
        invariance_residual,
        chart_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotient_distance_examples() {
        let o = GoodOrbifold::flat_manifold(2, 5.0);
        let a = o.point_of(&[1.0, 0.0]).unwrap();
        let b = o.point_of(&[0.0, 2.0]).unwrap();
        assert!((quotient_distance(&o, &a, &b) - 5f64.sqrt()).abs() < 1e-15);

        let line = GoodOrbifold::line_mod_reflection(3.0);
        let a = line.point_of(&[1.0]).unwrap();
        let b = line.point_of(&[-2.0]).unwrap();
        assert!((quotient_distance(&line, &a, &b) - 1.0).abs() < 1e-15);

        let fb = GoodOrbifold::football(3);
        let n = fb.point_of(&[0.0, 0.0, 1.0]).unwrap();
        let s = fb.point_of(&[0.0, 0.0, -1.0]).unwrap();
        assert!((quotient_distance(&fb, &n, &s) - PI).abs() < 1e-12);
        assert_eq!(quotient_distance(&fb, &n, &n), 0.0);
    }

    #[test]
    fn quotient_points_compare_by_orbit() {
        let line = GoodOrbifold::line_mod_reflection(3.0);
        assert_eq!(line.point_of(&[1.5]).unwrap(), line.point_of(&[-1.5]).unwrap());
        assert_ne!(line.point_of(&[1.5]).unwrap(), line.point_of(&[1.4]).unwrap());
    }

    #[test]
    fn isotropy_examples() {
        let fb = GoodOrbifold::football(4);
        assert_eq!(isotropy_at(&fb, &fb.point_of(&[0.0, 0.0, -1.0]).unwrap()).order(), 4);
        assert_eq!(isotropy_at(&fb, &fb.point_of(&[0.6, 0.0, 0.8]).unwrap()).order(), 1);
        let line = GoodOrbifold::line_mod_reflection(1.0);
        let sq = product(&line, &line).unwrap();
        assert_eq!(isotropy_at(&sq, &sq.point_of(&[0.0, 0.0]).unwrap()).order(), 4);
    }

    #[test]
    fn charts() {
        let fb = GoodOrbifold::football(5);
        let pole = build_chart(&fb, &fb.point_of(&[0.0, 0.0, 1.0]).unwrap(), None).unwrap();
        assert_eq!(pole.isotropy.order(), 5);
        let reg = build_chart(&fb, &fb.point_of(&[1.0, 0.0, 0.0]).unwrap(), None).unwrap();
        assert_eq!(reg.isotropy.order(), 1);
        assert!((reg.separation - 2.0 * PI / 5.0).abs() < 1e-12);
        assert!(reg.radius < 0.5 * reg.separation);
        let err = build_chart(&fb, &fb.point_of(&[1.0, 0.0, 0.0]).unwrap(), Some(0.7)).unwrap_err();
        assert!(matches!(err, Error::RadiusTooLarge { .. }));

        let d4 = GoodOrbifold::dihedral_plane(4, 1.0);
        let c = build_chart(&d4, &d4.point_of(&[0.0, 0.0]).unwrap(), None).unwrap();
        assert_eq!(c.isotropy.order(), 8);
    }

    #[test]
    fn canonical_atlas_covers_football() {
        for p in [2, 3, 5] {
            let fb = GoodOrbifold::football(p);
            let atlas = canonical_atlas(&fb).unwrap();
            let singular = atlas.charts.iter().filter(|c| c.isotropy.order() > 1).count();
            assert_eq!(singular, 2);
            let grid = fb.model.grid(40).unwrap().points;
            atlas.check_cover(&fb, &grid, COVER_MARGIN).unwrap();
            for c in &atlas.charts {
                assert!(c.radius < 0.5 * c.separation);
            }
        }
    }

    #[test]
    fn strata_examples() {
        let fb = GoodOrbifold::football(3);
        let s = strata(&fb, 64).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.strata.iter().filter(|t| t.sample_points.len() == 1).count(), 2);

        let m = GoodOrbifold::flat_manifold(2, 1.0);
        assert_eq!(strata(&m, 16).unwrap().len(), 1);

        let mirror = GoodOrbifold::mirror_plane(1.0);
        let s = strata(&mirror, 20).unwrap();
        assert_eq!(s.len(), 2);
        let orders: Vec<usize> = s.strata.iter().map(|t| t.isotropy_order).collect();
        assert!(orders.contains(&1) && orders.contains(&2));
    }

    #[test]
    fn products() {
        let a = GoodOrbifold::line_mod_reflection(1.0);
        let b = GoodOrbifold::flat(1, 1.0, &[]).unwrap();
        let ab = product(&a, &b).unwrap();
        assert_eq!(isotropy_at(&ab, &ab.point_of(&[0.0, 0.3]).unwrap()).order(), 2);
        assert_eq!(isotropy_at(&ab, &ab.point_of(&[0.2, 0.3]).unwrap()).order(), 1);

        let z3 = GoodOrbifold::cyclic_plane(3, 1.0);
        let lz3 = product(&a, &z3).unwrap();
        assert_eq!(isotropy_at(&lz3, &lz3.point_of(&[0.0, 0.0, 0.0]).unwrap()).order(), 6);

        assert!(matches!(product(&a, &GoodOrbifold::football(2)), Err(Error::UnsupportedModel)));
    }

    #[test]
    fn diagonal_examples() {
        let line = GoodOrbifold::line_mod_reflection(1.0);
        let d = diagonal_suborbifold(&line).unwrap();
        assert_eq!(d.isotropy_at(&Point::zeros(2)).order(), 2);
        assert!(d.invariance_residual < 1e-12);
        assert!(d.chart_residual < 1e-12);

        let m = GoodOrbifold::flat_manifold(2, 1.0);
        let d = diagonal_suborbifold(&m).unwrap();
        assert_eq!(d.subgroup.order(), 1);

        let c4 = GoodOrbifold::cyclic_plane(4, 1.0);
        let d = diagonal_suborbifold(&c4).unwrap();
        assert_eq!(d.subgroup.order(), 4);
        assert_eq!(d.subspace.as_ref().unwrap().len(), 2);
        assert!(d.invariance_residual < 1e-12);
    }
}
