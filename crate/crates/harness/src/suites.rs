//! The seven verification suites. Each produces check records and optional
//! CSV tables; library errors become failing records.

use std::sync::Arc;

use nalgebra::DMatrix;
use orbicore::group::{self, gens};
use orbicore::maps::{check_equivariance, compose, count_theta_choices, cs_distance, enumerate_identity_lifts, BuiltinMap};
use orbicore::orbifold::{isotropy_at, strata, Atlas, GoodOrbifold};
use orbicore::poly::{average_polynomial, Polynomial};
use orbicore::report::CheckRecord;
use orbicore::riemann::{
    admissible_direction, average_metric, e_apply, e_inverse, equivariant_partition_of_unity, exp_local_homeo_check,
    exp_representative_residual, exp_stratum_check, football_sample_diffeos, metric_invariance_residual,
    metric_min_eigenvalue, radial_diffeo, reduced_group_quotient_check, transition_map, verify_diffeo, Diffeo, ExpMap,
    MetricAveraging, MetricMap,
};
use orbicore::tangent::{admissible_space, linear_combination, project_equivariant, random_orbisection, seminorm, Orbisection};
use orbicore::{Point, PointMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{SuiteConfig, Tolerances};

/// A CSV table emitted next to the report.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteOutput {
    pub records: Vec<CheckRecord>,
    pub tables: Vec<Table>,
}

/// Shared read-only inputs of every suite.
pub struct Context {
    pub config: SuiteConfig,
    pub orbifold: Arc<GoodOrbifold>,
    pub atlas: Atlas,
    pub tol: Tolerances,
}

impl Context {
    fn per_axis(&self) -> usize {
        self.config.atlas.chart_samples
    }
}

pub fn suite_seed(seed: u64, suite: &str) -> u64 {
    let idx = crate::config::SUITES.iter().position(|s| *s == suite).unwrap_or(0) as u64;
    seed ^ (idx + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn run_one(ctx: &Context, suite: &str) -> SuiteOutput {
    let mut out = SuiteOutput::default();
    let mut rng = ChaCha8Rng::seed_from_u64(suite_seed(ctx.config.seed, suite));
    let res = match suite {
        "group" => group_suite(ctx, &mut out),
        "strata" => strata_suite(ctx, &mut out),
        "maps" => maps_suite(ctx, &mut out),
        "tangent" => tangent_suite(ctx, &mut out, &mut rng),
        "riemann" => riemann_suite(ctx, &mut out, &mut rng),
        "theorem1" => theorem1_suite(ctx, &mut out, &mut rng),
        "corollary2" => corollary2_suite(ctx, &mut out),
        other => Err(orbicore::Error::Invalid(format!("unknown suite {other}"))),
    };
    if let Err(e) = res {
        out.records.push(
            CheckRecord::flag(&format!("{suite}.completed"), "suite ran without a library error", false)
                .with_witness(e.to_string()),
        );
    }
    out
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn coords(p: &Point) -> Vec<String> {
    p.iter().map(|c| fmt(*c)).collect()
}

fn group_suite(ctx: &Context, out: &mut SuiteOutput) -> orbicore::Result<()> {
    let g = &ctx.orbifold.group;
    let mut table_err: f64 = 0.0;
    for a in g.labels() {
        for b in g.labels() {
            table_err = table_err.max((g.matrix(g.mul(a, b)) - g.matrix(a) * g.matrix(b)).amax());
        }
    }
    out.records.push(
        CheckRecord::at_most("group.cayley", "the generated set is closed under multiplication", table_err, ctx.tol.equivariance)
            .with_witness(format!("order {}", g.order())),
    );
    let z = group::center(g).order();
    out.records.push(CheckRecord::count(
        "group.theta_choices",
        "inner automorphisms number |Γ|/|Z(Γ)|",
        count_theta_choices(g),
        g.order() / z,
    ));
    let mut mismatches = Vec::new();
    for (i, c) in ctx.atlas.charts.iter().enumerate() {
        let want = c.isotropy.order() / group::center(&c.isotropy).order();
        let got = count_theta_choices(&c.isotropy);
        if got != want {
            mismatches.push(format!("chart {i}: {got} choices, want {want}"));
        }
    }
    out.records.push(
        CheckRecord::count(
            "group.chart_theta_choices",
            "inner automorphisms of each chart isotropy number |Γ_x|/|Z(Γ_x)|",
            mismatches.len(),
            0,
        )
        .with_witnesses(mismatches),
    );
    Ok(())
}

fn strata_suite(ctx: &Context, out: &mut SuiteOutput) -> orbicore::Result<()> {
    let o = &ctx.orbifold;
    let s = strata(o, ctx.config.grids.strata)?;
    let singletons = s.strata.iter().filter(|t| t.sample_points.len() == 1).count();
    let mut mismatches = 0;
    let mut rows = Vec::new();
    for (k, t) in s.strata.iter().enumerate() {
        for p in &t.sample_points {
            if isotropy_at(o, p).order() != t.isotropy_order {
                mismatches += 1;
            }
            let mut row = vec![k.to_string(), t.isotropy_order.to_string()];
            row.extend(coords(&p.representative));
            rows.push(row);
        }
    }
    out.records.push(
        CheckRecord::flag("strata.count", "the stratification is finite and nonempty", !s.is_empty())
            .with_witness(format!("{} strata, {singletons} singletons", s.len())),
    );
    out.records.push(CheckRecord::count(
        "strata.isotropy_consistent",
        "isotropy is constant along each stratum",
        mismatches,
        0,
    ));
    let grid = o.model.grid(ctx.config.grids.cover)?.points;
    let cover = ctx.atlas.check_cover(o, &grid, 1.0);
    out.records.push(
        CheckRecord::flag("strata.atlas_cover", "the canonical atlas covers the orbifold", cover.is_ok())
            .with_witness(format!("{} charts", ctx.atlas.len())),
    );
    let mut header = vec!["stratum".to_string(), "isotropy_order".to_string()];
    header.extend((0..o.ambient_dim()).map(|i| format!("x{i}")));
    out.tables.push(Table { file: "strata.csv".into(), header, rows });
    Ok(())
}

/// Diffeomorphisms commuting with the group: radial maps on flat models,
/// twists and height changes on spheres with a rotation group about the
/// last axis, otherwise only the identity.
pub fn sample_diffeos(o: &Arc<GoodOrbifold>, atlas: &Atlas) -> orbicore::Result<Vec<Diffeo>> {
    if o.model.is_flat() {
        return [0.02, -0.02, 0.05, -0.05, 0.08, -0.08, 0.1, -0.1, 0.12, -0.12]
            .iter()
            .map(|&c| radial_diffeo(o.clone(), atlas, c))
            .collect();
    }
    let rz = gens::rotation_z(0.7);
    let commutes = o.ambient_dim() == 3
        && o.group.labels().all(|l| {
            let m = o.group.matrix(l);
            (m * &rz - &rz * m).amax() < 1e-12
        });
    if commutes {
        football_sample_diffeos(o.clone(), atlas)
    } else {
        Ok(vec![Diffeo::identity(o.clone(), atlas)])
    }
}

fn maps_suite(ctx: &Context, out: &mut SuiteOutput) -> orbicore::Result<()> {
    let o = &ctx.orbifold;
    let n = ctx.per_axis();
    let id = BuiltinMap::Identity.to_map(o.clone(), &ctx.atlas)?;
    out.records.push(CheckRecord::at_most(
        "maps.identity_equivariance",
        "the identity is an orbifold map",
        check_equivariance(&id, n).total(),
        ctx.tol.equivariance,
    ));
    let mut worst_eq: f64 = 0.0;
    let mut worst_round: f64 = 0.0;
    let diffeos = sample_diffeos(o, &ctx.atlas)?;
    for d in &diffeos {
        worst_eq = worst_eq.max(check_equivariance(&d.forward, n).total());
        let round = compose(&d.forward, &d.inverse)?;
        worst_round = worst_round.max(cs_distance(&round, &id, 0, n)?.value);
    }
    out.records.push(
        CheckRecord::at_most(
            "maps.sample_equivariance",
            "lifts of sample diffeomorphisms are Θ-equivariant",
            worst_eq,
            ctx.tol.equivariance,
        )
        .with_witness(format!("{} samples", diffeos.len())),
    );
    out.records.push(CheckRecord::at_most(
        "maps.sample_inverse",
        "sample diffeomorphisms compose with their inverses to the identity",
        worst_round,
        ctx.tol.roundtrip,
    ));
    let idg = enumerate_identity_lifts(o, &ctx.atlas)?;
    let want: usize = ctx.atlas.charts.iter().map(|c| c.isotropy.order()).product();
    out.records.push(CheckRecord::count(
        "maps.id_order",
        "lifts of the identity: one isotropy element per chart",
        idg.order(),
        want,
    ));
    Ok(())
}

fn tangent_suite(ctx: &Context, out: &mut SuiteOutput, rng: &mut ChaCha8Rng) -> orbicore::Result<()> {
    let o = &ctx.orbifold;
    let n = ctx.per_axis();
    let mut mismatches = Vec::new();
    for (i, c) in ctx.atlas.charts.iter().enumerate() {
        let p = o.point(&c.center)?;
        let fixed = group::fixed_subspace(&c.isotropy).len();
        let want = if o.model.is_flat() { fixed } else { fixed - 1 };
        let got = admissible_space(o, &p).len();
        if got != want {
            mismatches.push(format!("chart {i}: dim {got}, fixed {want}"));
        }
    }
    out.records.push(
        CheckRecord::count(
            "tangent.admissible_dims",
            "admissible vectors form the fixed subspace of the isotropy",
            mismatches.len(),
            0,
        )
        .with_witnesses(mismatches),
    );
    let sigma = random_orbisection(o.clone(), &ctx.atlas, rng, 0.5, n);
    out.records.push(CheckRecord::at_most(
        "tangent.orbisection_equivariance",
        "averaged fields are equivariant orbisections",
        sigma.equivariance_residual(n),
        ctx.tol.equivariance,
    ));
    let zero = Orbisection::zero(o.clone(), &ctx.atlas);
    out.records.push(CheckRecord::at_most("tangent.zero_seminorm", "the zero orbisection has norm zero", seminorm(&zero, 1, n), 0.0));

    let dim = o.ambient_dim();
    let a = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    let raw: PointMap = Arc::new(move |y: &Point| &a * y + y.map(|c| c * c));
    let mut idem: f64 = 0.0;
    for c in &ctx.atlas.charts {
        let once = project_equivariant(&o.model, &c.isotropy, raw.clone());
        let twice = project_equivariant(&o.model, &c.isotropy, once.clone());
        for y in c.grid(&o.model, n, 1.0) {
            idem = idem.max((twice(&y) - once(&y)).amax());
        }
    }
    out.records.push(CheckRecord::at_most(
        "tangent.projection_idempotence",
        "averaging an equivariant field returns it",
        idem,
        ctx.tol.idempotence,
    ));

    let terms: Vec<(Vec<u32>, Vec<f64>)> = orbicore::poly::monomials(dim as usize, 3)
        .into_iter()
        .map(|e| (e, (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    let p = Polynomial::from_terms(dim, dim, &terms)?;
    let mats = o.group.matrices();
    let once = average_polynomial(&p, &mats, &mats);
    let twice = average_polynomial(&once, &mats, &mats);
    out.records.push(CheckRecord::at_most(
        "tangent.polynomial_idempotence",
        "coefficient averaging is a projection",
        twice.coefficient_distance(&once),
        ctx.tol.idempotence,
    ));
    Ok(())
}

/// Non-invariant positive definite field used to exercise the averaging.
pub fn raw_metric(dim: usize) -> MetricMap {
    Arc::new(move |y: &Point| {
        let mut m = DMatrix::<f64>::identity(dim, dim);
        for i in 0..dim {
            m[(i, i)] += 0.25 * (i + 1) as f64 * (1.0 + 0.5 * y[0].tanh());
        }
        if dim > 1 {
            let off = 0.1 * y[1].tanh();
            m[(0, 1)] += off;
            m[(1, 0)] += off;
        }
        m
    })
}

/// The point with the largest isotropy among chart centers.
fn most_singular_point(ctx: &Context) -> orbicore::Result<orbicore::orbifold::QuotientPoint> {
    let c = ctx
        .atlas
        .charts
        .iter()
        .max_by_key(|c| c.isotropy.order())
        .ok_or_else(|| orbicore::Error::Invalid("empty atlas".into()))?;
    ctx.orbifold.point(&c.center)
}

fn riemann_suite(ctx: &Context, out: &mut SuiteOutput, rng: &mut ChaCha8Rng) -> orbicore::Result<()> {
    let o = &ctx.orbifold;
    let n = ctx.per_axis();
    let grid = o.model.grid(ctx.config.grids.cover)?.points;
    let pu = equivariant_partition_of_unity(o.clone(), &ctx.atlas, &grid)?;
    out.records.push(CheckRecord::at_most(
        "riemann.partition_sum",
        "partition weights sum to one",
        pu.sum_residual(&grid)?,
        ctx.tol.partition,
    ));
    out.records.push(CheckRecord::at_most(
        "riemann.partition_invariance",
        "partition weights are invariant in each chart",
        pu.equivariance_residual(n),
        ctx.tol.partition,
    ));
    let raw = raw_metric(o.ambient_dim());
    let mut inv: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    for c in &ctx.atlas.charts {
        let g = average_metric(&o.model, c, raw.clone(), MetricAveraging::Diagonal, n)?;
        inv = inv.max(metric_invariance_residual(&o.model, c, &g, n));
        min_eig = min_eig.min(metric_min_eigenvalue(&o.model, c, &g, n));
    }
    out.records.push(CheckRecord::at_most(
        "riemann.metric_invariance",
        "the averaged metric is invariant",
        inv,
        ctx.tol.averaging,
    ));
    out.records.push(
        CheckRecord::flag("riemann.metric_positive", "the averaged metric is positive definite", min_eig > 0.0)
            .with_witness(format!("min eigenvalue {min_eig:e}")),
    );
    let e = ExpMap::closed_form(o.clone());
    let max_len = match o.model {
        orbicore::orbifold::ModelSpace::FlatBall { radius, .. } => 0.3 * radius,
        _ => 1.0,
    };
    out.records.push(CheckRecord::at_most(
        "riemann.exp_representative",
        "exp does not depend on the representative",
        exp_representative_residual(&e, rng, ctx.config.riemann.triples, max_len)?,
        ctx.tol.representative,
    ));
    let p = most_singular_point(ctx)?;
    let eps = match o.model {
        orbicore::orbifold::ModelSpace::FlatBall { radius, .. } => ctx.config.riemann.exp_radius.min(0.5 * radius),
        _ => ctx.config.riemann.exp_radius,
    };
    let h = exp_local_homeo_check(&e, &p, eps, 200, rng)?;
    out.records.push(
        CheckRecord::flag("riemann.exp_homeomorphism", "exp is a local homeomorphism at a singular point", h.pass())
            .with_witness(format!(
                "{} pairs, {} targets, coverage gap {:e} <= {:e}",
                h.pairs_checked, h.targets_checked, h.coverage_gap, h.coverage_tolerance
            ))
            .with_witnesses(h.witnesses),
    );
    let v = admissible_direction(o, &p, eps);
    let st = exp_stratum_check(&e, &p, &v, 11)?;
    out.records.push(
        CheckRecord::flag("riemann.exp_stratum", "geodesics with admissible initial vector stay in the stratum", st.pass)
            .with_witnesses(st.witnesses),
    );
    Ok(())
}

fn theorem1_suite(ctx: &Context, out: &mut SuiteOutput, rng: &mut ChaCha8Rng) -> orbicore::Result<()> {
    let o = &ctx.orbifold;
    let n = ctx.per_axis();
    let e = ExpMap::closed_form(o.clone());
    let zero = Orbisection::zero(o.clone(), &ctx.atlas);
    let e0 = e_apply(&zero, &e)?;
    let mut dev: f64 = 0.0;
    for (i, c) in e0.charts.iter().enumerate() {
        for y in c.grid(&o.model, n, 1.0) {
            dev = dev.max((e0.eval(i, &y) - &y).amax());
        }
    }
    out.records.push(CheckRecord::at_most("theorem1.zero_is_identity", "E of the zero section is the identity", dev, 0.0));

    let mut rows = Vec::new();
    let (mut worst_sigma, mut worst_map): (f64, f64) = (0.0, 0.0);
    let mut diffeo_failures = Vec::new();
    for k in 0..ctx.config.riemann.samples {
        let s = random_orbisection(o.clone(), &ctx.atlas, rng, ctx.config.riemann.c1_norm, n);
        let f = e_apply(&s, &e)?;
        let back = e_inverse(&f, &e)?;
        let r_sigma = seminorm(&linear_combination(&back, &s, 1.0, -1.0)?, 0, n);
        let r_map = cs_distance(&e_apply(&back, &e)?, &f, 0, n)?.value;
        worst_sigma = worst_sigma.max(r_sigma);
        worst_map = worst_map.max(r_map);
        if k < 3 {
            let v = verify_diffeo(&f, 7, ctx.config.grids.target)?;
            if !v.pass() {
                diffeo_failures.push(format!("sample {k}: {:?}", v.witnesses));
            }
        }
        rows.push(vec![k.to_string(), fmt(seminorm(&s, 1, n)), fmt(r_sigma), fmt(r_map)]);
    }
    out.records.push(CheckRecord::at_most(
        "theorem1.section_roundtrip",
        "E⁻¹ ∘ E is the identity on small orbisections",
        worst_sigma,
        ctx.tol.roundtrip,
    ));
    out.records.push(CheckRecord::at_most(
        "theorem1.map_roundtrip",
        "E ∘ E⁻¹ is the identity near the identity map",
        worst_map,
        ctx.tol.roundtrip,
    ));
    out.records.push(
        CheckRecord::flag(
            "theorem1.small_sections_give_diffeos",
            "E of a C¹-small orbisection is a diffeomorphism",
            diffeo_failures.is_empty(),
        )
        .with_witnesses(diffeo_failures),
    );
    out.tables.push(Table {
        file: "theorem1_roundtrips.csv".into(),
        header: ["sample", "c1_seminorm", "section_residual", "map_residual"].iter().map(|s| s.to_string()).collect(),
        rows,
    });

    let diffeos = sample_diffeos(o, &ctx.atlas)?;
    let s = random_orbisection(o.clone(), &ctx.atlas, rng, ctx.config.riemann.c1_norm, n);
    let mut self_residual: f64 = 0.0;
    let mut lipschitz: f64 = 0.0;
    for d in diffeos.iter().take(3) {
        let t = transition_map(d, d, &s, &e)?;
        self_residual = self_residual.max(seminorm(&linear_combination(&t.output, &s, 1.0, -1.0)?, 0, n));
        lipschitz = lipschitz.max(t.lipschitz);
    }
    out.records.push(CheckRecord::at_most(
        "theorem1.transition_self",
        "the transition map from a chart to itself is the identity",
        self_residual,
        ctx.tol.roundtrip,
    ));
    out.records.push(
        CheckRecord::flag("theorem1.transition_lipschitz", "transition maps are locally Lipschitz", lipschitz.is_finite())
            .with_witness(format!("sampled modulus {lipschitz:.6}")),
    );
    Ok(())
}

fn corollary2_suite(ctx: &Context, out: &mut SuiteOutput) -> orbicore::Result<()> {
    let o = &ctx.orbifold;
    let diffeos = sample_diffeos(o, &ctx.atlas)?;
    let r = reduced_group_quotient_check(o.clone(), &ctx.atlas, &diffeos)?;
    let want: usize = ctx.atlas.charts.iter().map(|c| c.isotropy.order()).product();
    out.records.push(
        CheckRecord::count("corollary2.id_order", "ID is the product of the chart isotropy groups", r.id_order, want)
            .with_witness(format!("abelian {}, exponent {}", r.id_abelian, r.id_exponent)),
    );
    out.records.push(CheckRecord::flag("corollary2.id_closed", "ID is closed under composition", r.id_closed));
    out.records.push(
        CheckRecord::count(
            "corollary2.conjugates_in_id",
            "ID is normal in the diffeomorphism group",
            r.conjugates_in_id,
            r.conjugates_tested,
        )
        .with_witnesses(r.witnesses.clone()),
    );
    out.records.push(CheckRecord::count(
        "corollary2.lift_differences_in_id",
        "two lifts of one diffeomorphism differ by an element of ID",
        r.differences_in_id,
        r.differences_tested,
    ));
    Ok(())
}
