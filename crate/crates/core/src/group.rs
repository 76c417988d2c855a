//! Finite subgroups of the orthogonal group.
//!
//! Groups are enumerated explicitly from generators. Labels are assigned
//! breadth-first from the identity, ties inside a layer broken by
//! lexicographic order on the row-major matrix entries, so the Cayley table
//! of a given generator list is identical across runs.

use std::cmp::Ordering;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::linalg::{self, lex_cmp};
use crate::{Error, Point, PointMap, Result};

/// Two group elements are the same when their matrices agree to this tolerance.
pub const GROUP_EPS: f64 = 1e-9;
/// Generators must satisfy `‖MᵀM − I‖_∞` below this.
pub const ORTHO_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ORDER: usize = 4096;

#[derive(Clone, Debug)]
pub struct OrthogonalElement {
    pub matrix: DMatrix<f64>,
    pub label: usize,
}

/// A finite group of orthogonal `n × n` matrices with its Cayley table.
#[derive(Clone, Debug)]
pub struct FiniteActionGroup {
    dim: usize,
    elements: Vec<OrthogonalElement>,
    cayley: Vec<Vec<usize>>,
    inverses: Vec<usize>,
}

fn matrices_close(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    (a - b).amax() < GROUP_EPS
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Closure of `generators` under multiplication.
pub fn generate_group(generators: &[DMatrix<f64>], max_order: usize) -> Result<FiniteActionGroup> {
    let dim = match generators.first() {
        Some(g) => g.nrows(),
        None => return Err(Error::Invalid("at least one generator is required".into())),
    };
    generate_group_in_dim(dim, generators, max_order)
}

/// Like [`generate_group`] but accepts an empty generator list (trivial group).
pub fn generate_group_in_dim(
    dim: usize,
    generators: &[DMatrix<f64>],
    max_order: usize,
) -> Result<FiniteActionGroup> {
    if max_order == 0 {
        return Err(Error::Invalid("max_order must be at least 1".into()));
    }
    for (index, g) in generators.iter().enumerate() {
        if g.nrows() != dim || g.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: g.nrows().max(g.ncols()) });
        }
        let residual = linalg::orthogonality_residual(g);
        if !(residual < ORTHO_TOL) {
            return Err(Error::NotOrthogonal { index, residual });
        }
    }

    let identity = DMatrix::<f64>::identity(dim, dim);
    let mut all = vec![identity.clone()];
    let mut layer = vec![identity];
    while !layer.is_empty() {
        let mut next: Vec<DMatrix<f64>> = Vec::new();
        for x in &layer {
            for g in generators {
                let prod = linalg::polar_orthogonal(&(x * g));
                let known = all.iter().chain(next.iter()).any(|m| matrices_close(m, &prod));
                if !known {
                    next.push(prod);
                    if all.len() + next.len() > max_order {
                        return Err(Error::ClosureExceeded { max_order });
                    }
                }
            }
        }
        next.sort_by(|a, b| lex_cmp(&row_major(a), &row_major(b), GROUP_EPS));
        all.extend(next.iter().cloned());
        layer = next;
    }
    Ok(FiniteActionGroup::from_closed_list(dim, all))
}

impl FiniteActionGroup {
    fn from_closed_list(dim: usize, matrices: Vec<DMatrix<f64>>) -> Self {
        let elements: Vec<OrthogonalElement> = matrices
            .into_iter()
            .enumerate()
            .map(|(label, matrix)| OrthogonalElement { matrix, label })
            .collect();
        let mut group = FiniteActionGroup { dim, elements, cayley: Vec::new(), inverses: Vec::new() };
        let n = group.elements.len();
        let mut cayley = vec![vec![0usize; n]; n];
        for i in 0..n {
            for j in 0..n {
                let prod = &group.elements[i].matrix * &group.elements[j].matrix;
                cayley[i][j] = group.find(&prod).expect("closed element list");
            }
        }
        let inverses = (0..n)
            .map(|i| (0..n).find(|&j| cayley[i][j] == 0).expect("inverse exists"))
            .collect();
        group.cayley = cayley;
        group.inverses = inverses;
        group
    }

    /// Group generated by an explicit list of matrices (e.g. a subgroup).
    pub fn from_matrices(dim: usize, matrices: &[DMatrix<f64>]) -> Result<Self> {
        generate_group_in_dim(dim, matrices, DEFAULT_MAX_ORDER)
    }

    pub fn trivial(dim: usize) -> Self {
        Self::from_closed_list(dim, vec![DMatrix::identity(dim, dim)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn identity(&self) -> usize {
        0
    }

    pub fn elements(&self) -> &[OrthogonalElement] {
        &self.elements
    }

    pub fn matrix(&self, label: usize) -> &DMatrix<f64> {
        &self.elements[label].matrix
    }

    pub fn matrices(&self) -> Vec<DMatrix<f64>> {
        self.elements.iter().map(|e| e.matrix.clone()).collect()
    }

    pub fn labels(&self) -> std::ops::Range<usize> {
        0..self.elements.len()
    }

    pub fn cayley(&self) -> &[Vec<usize>] {
        &self.cayley
    }

    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.cayley[a][b]
    }

    pub fn inv(&self, a: usize) -> usize {
        self.inverses[a]
    }

    pub fn act(&self, label: usize, x: &Point) -> Point {
        &self.elements[label].matrix * x
    }

    /// Label of the element equal to `m` within [`GROUP_EPS`].
    pub fn find(&self, m: &DMatrix<f64>) -> Option<usize> {
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return None;
        }
        self.elements.iter().position(|e| matrices_close(&e.matrix, m))
    }

    pub fn contains(&self, m: &DMatrix<f64>) -> bool {
        self.find(m).is_some()
    }

    /// Every element of `self` is an element of `other`.
    pub fn is_subset_of(&self, other: &FiniteActionGroup) -> bool {
        self.elements.iter().all(|e| other.contains(&e.matrix))
    }

    /// Equality as sets of matrices.
    pub fn same_elements(&self, other: &FiniteActionGroup) -> bool {
        self.order() == other.order() && self.is_subset_of(other)
    }

    pub fn is_abelian(&self) -> bool {
        let n = self.order();
        (0..n).all(|a| (0..n).all(|b| self.cayley[a][b] == self.cayley[b][a]))
    }

    pub fn element_order(&self, label: usize) -> usize {
        let mut k = 1;
        let mut x = label;
        while x != 0 {
            x = self.mul(x, label);
            k += 1;
        }
        k
    }

    /// Least common multiple of the element orders.
    pub fn exponent(&self) -> usize {
        fn gcd(a: usize, b: usize) -> usize {
            if b == 0 { a } else { gcd(b, a % b) }
        }
        self.labels().map(|l| self.element_order(l)).fold(1, |acc, k| acc / gcd(acc, k) * k)
    }

    /// `g H g⁻¹` for an ambient orthogonal `g`.
    pub fn conjugated_by(&self, g: &DMatrix<f64>) -> Result<Self> {
        let g_inv = g.transpose();
        let mats: Vec<_> = self.elements.iter().map(|e| g * &e.matrix * &g_inv).collect();
        Self::from_matrices(self.dim, &mats)
    }

    /// Subgroup consisting of the given labels, relabeled canonically.
    pub fn subgroup(&self, labels: &[usize]) -> Result<Self> {
        let mats: Vec<_> = labels.iter().map(|&l| self.matrix(l).clone()).collect();
        Self::from_matrices(self.dim, &mats)
    }
}

/// A homomorphism between two finite action groups, stored as a label table.
#[derive(Clone, Debug)]
pub struct GroupHom {
    pub source: Arc<FiniteActionGroup>,
    pub target: Arc<FiniteActionGroup>,
    table: Vec<usize>,
}

impl GroupHom {
    /// Validates the homomorphism property exhaustively.
    pub fn new(
        source: Arc<FiniteActionGroup>,
        target: Arc<FiniteActionGroup>,
        table: Vec<usize>,
    ) -> Result<Self> {
        if table.len() != source.order() {
            return Err(Error::DimensionMismatch { expected: source.order(), got: table.len() });
        }
        if table.iter().any(|&t| t >= target.order()) {
            return Err(Error::Invalid("homomorphism table refers to a missing label".into()));
        }
        if table[source.identity()] != target.identity() {
            return Err(Error::NotHomomorphism { a: 0, b: 0 });
        }
        for a in source.labels() {
            for b in source.labels() {
                if table[source.mul(a, b)] != target.mul(table[a], table[b]) {
                    return Err(Error::NotHomomorphism { a, b });
                }
            }
        }
        Ok(GroupHom { source, target, table })
    }

    pub fn identity(group: Arc<FiniteActionGroup>) -> Self {
        let table = group.labels().collect();
        GroupHom { source: group.clone(), target: group, table }
    }

    pub fn trivial(source: Arc<FiniteActionGroup>, target: Arc<FiniteActionGroup>) -> Self {
        let table = vec![target.identity(); source.order()];
        GroupHom { source, target, table }
    }

    /// Conjugation `δ ↦ γ δ γ⁻¹` inside one group.
    pub fn conjugation(group: Arc<FiniteActionGroup>, gamma: usize) -> Self {
        let g_inv = group.inv(gamma);
        let table = group.labels().map(|d| group.mul(group.mul(gamma, d), g_inv)).collect();
        GroupHom { source: group.clone(), target: group, table }
    }

    pub fn table(&self) -> &[usize] {
        &self.table
    }

    pub fn apply(&self, label: usize) -> usize {
        self.table[label]
    }

    pub fn image_matrix(&self, label: usize) -> &DMatrix<f64> {
        self.target.matrix(self.table[label])
    }

    /// True when source and target hold the same matrices and every element
    /// maps to itself.
    pub fn is_identity(&self) -> bool {
        self.source.labels().all(|l| {
            let a = self.source.matrix(l);
            let b = self.image_matrix(l);
            (a - b).amax() < GROUP_EPS
        })
    }

    /// `other ∘ self`.
    pub fn then(&self, other: &GroupHom) -> Result<GroupHom> {
        if !self.target.same_elements(&other.source) {
            return Err(Error::Invalid("homomorphisms do not compose".into()));
        }
        let table = self
            .source
            .labels()
            .map(|l| {
                let mid = other.source.find(self.image_matrix(l)).expect("same elements");
                other.apply(mid)
            })
            .collect();
        GroupHom::new(self.source.clone(), other.target.clone(), table)
    }
}

/// Subgroup of elements commuting with every element.
pub fn center(group: &FiniteActionGroup) -> FiniteActionGroup {
    let labels: Vec<usize> = group
        .labels()
        .filter(|&a| group.labels().all(|b| group.mul(a, b) == group.mul(b, a)))
        .collect();
    group.subgroup(&labels).expect("center is a subgroup")
}

/// Distinct inner automorphisms `δ ↦ γδγ⁻¹`, deduplicated by table.
pub fn inner_automorphisms(group: &Arc<FiniteActionGroup>) -> Vec<GroupHom> {
    let mut out: Vec<GroupHom> = Vec::new();
    for gamma in group.labels() {
        let hom = GroupHom::conjugation(group.clone(), gamma);
        if !out.iter().any(|h| h.table == hom.table) {
            out.push(hom);
        }
    }
    out
}

/// Singular values below this count as zero in fixed-subspace computations.
pub const NULLSPACE_TOL: f64 = 1e-9;

/// Orthonormal basis of `⋂_γ ker(ρ(γ) − I)`.
pub fn fixed_subspace(group: &FiniteActionGroup) -> Vec<Point> {
    let n = group.dim();
    let mut stacked = DMatrix::<f64>::zeros(n * group.order(), n);
    for (k, e) in group.elements().iter().enumerate() {
        let block = &e.matrix - DMatrix::<f64>::identity(n, n);
        stacked.view_mut((k * n, 0), (n, n)).copy_from(&block);
    }
    linalg::null_space(&stacked, NULLSPACE_TOL)
}

/// `{γ : ‖γx − x‖ < ε_grp}` as a group of its own.
pub fn stabilizer(group: &FiniteActionGroup, x: &Point) -> FiniteActionGroup {
    group.subgroup(&stabilizer_labels(group, x)).expect("stabilizer is a subgroup")
}

pub fn stabilizer_labels(group: &FiniteActionGroup, x: &Point) -> Vec<usize> {
    group.labels().filter(|&l| (group.act(l, x) - x).amax() < GROUP_EPS).collect()
}

/// Orbit of `x`, deduplicated, in label order of first occurrence.
pub fn orbit(group: &FiniteActionGroup, x: &Point) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::new();
    for l in group.labels() {
        let y = group.act(l, x);
        if !out.iter().any(|z| (z - &y).amax() < GROUP_EPS) {
            out.push(y);
        }
    }
    out
}

/// Lexicographically least member of the orbit.
pub fn canonical_representative(group: &FiniteActionGroup, x: &Point) -> Point {
    let mut best = x.clone();
    for l in group.labels() {
        let y = group.act(l, x);
        if lex_cmp(y.as_slice(), best.as_slice(), GROUP_EPS) == Ordering::Less {
            best = y;
        }
    }
    best
}

/// A finite group acting near the origin by smooth, possibly nonlinear maps.
#[derive(Clone)]
pub struct NonlinearActionSample {
    /// Linear representation indexing the maps; its matrices must equal the
    /// linearizations of the maps at the origin.
    pub group: Arc<FiniteActionGroup>,
    pub maps: Vec<PointMap>,
    pub linearizations: Vec<DMatrix<f64>>,
    pub chart_radius: f64,
}

/// Tolerance between a finite-difference Jacobian and the declared matrix.
pub const LINEARIZATION_TOL: f64 = 1e-6;

impl NonlinearActionSample {
    pub fn new(group: Arc<FiniteActionGroup>, maps: Vec<PointMap>, chart_radius: f64) -> Result<Self> {
        if maps.len() != group.order() {
            return Err(Error::DimensionMismatch { expected: group.order(), got: maps.len() });
        }
        let origin = Point::zeros(group.dim());
        let mut linearizations = Vec::with_capacity(maps.len());
        for (label, map) in maps.iter().enumerate() {
            let moved = map(&origin).norm();
            if moved >= 1e-12 {
                return Err(Error::Invalid(format!("map {label} moves the origin by {moved:e}")));
            }
            let jac = linalg::jacobian(map.as_ref(), &origin, linalg::FD_STEP);
            let gap = (&jac - group.matrix(label)).amax();
            if gap >= LINEARIZATION_TOL {
                return Err(Error::Invalid(format!(
                    "map {label} has linearization differing from its group matrix by {gap:e}"
                )));
            }
            linearizations.push(jac);
        }
        Ok(NonlinearActionSample { group, maps, linearizations, chart_radius })
    }

    pub fn act(&self, label: usize, y: &Point) -> Point {
        (self.maps[label])(y)
    }
}

/// The averaged chart `F(y) = (1/|Γ|) Σ_η L_η(η⁻¹·y)` conjugating the action
/// to its linearization.
#[derive(Clone)]
pub struct LinearizingChart {
    sample: NonlinearActionSample,
}

impl LinearizingChart {
    pub fn eval(&self, y: &Point) -> Point {
        let g = &self.sample.group;
        let mut acc = Point::zeros(y.len());
        for eta in g.labels() {
            let moved = self.sample.act(g.inv(eta), y);
            acc += &self.sample.linearizations[eta] * moved;
        }
        acc / g.order() as f64
    }
}

#[derive(Clone, Debug)]
pub struct LinearizationReport {
    /// `max ‖F(γ·y) − L_γ F(y)‖` over samples and group elements.
    pub conjugacy_residual: f64,
    /// `‖dF(0) − I‖_∞` by central differences.
    pub differential_residual: f64,
    /// `max ‖F(y) − y‖` over samples.
    pub identity_distance: f64,
    pub samples: usize,
}

pub fn linearize_action(
    action: &NonlinearActionSample,
    samples: &[Point],
) -> Result<(LinearizingChart, LinearizationReport)> {
    for y in samples {
        if y.norm() >= action.chart_radius {
            return Err(Error::SampleOutOfChart { radius: y.norm(), chart_radius: action.chart_radius });
        }
    }
    let chart = LinearizingChart { sample: action.clone() };
    let g = &action.group;
    let mut conjugacy_residual: f64 = 0.0;
    let mut identity_distance: f64 = 0.0;
    for y in samples {
        let fy = chart.eval(y);
        identity_distance = identity_distance.max((&fy - y).norm());
        for gamma in g.labels() {
            let lhs = chart.eval(&action.act(gamma, y));
            let rhs = &action.linearizations[gamma] * &fy;
            conjugacy_residual = conjugacy_residual.max((lhs - rhs).norm());
        }
    }
    let n = g.dim();
    let jac = linalg::jacobian(&|y: &Point| chart.eval(y), &Point::zeros(n), linalg::FD_STEP);
    let differential_residual = (jac - DMatrix::<f64>::identity(n, n)).amax();
    Ok((
        chart,
        LinearizationReport { conjugacy_residual, differential_residual, identity_distance, samples: samples.len() },
    ))
}

/// Frequently used generators.
pub mod gens {
    use nalgebra::DMatrix;

    pub fn rotation2(angle: f64) -> DMatrix<f64> {
        let (s, c) = angle.sin_cos();
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    }

    /// Rotation about the z-axis in ℝ³.
    pub fn rotation_z(angle: f64) -> DMatrix<f64> {
        let (s, c) = angle.sin_cos();
        DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
    }

    /// Reflection negating coordinate `axis`.
    pub fn flip(dim: usize, axis: usize) -> DMatrix<f64> {
        let mut m = DMatrix::identity(dim, dim);
        m[(axis, axis)] = -1.0;
        m
    }

    pub fn negation(dim: usize) -> DMatrix<f64> {
        -DMatrix::<f64>::identity(dim, dim)
    }
}
