//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use orbicheck::{evaluate, SuiteConfig};
use orbicore::group::{center, generate_group, gens, DEFAULT_MAX_ORDER};
use orbicore::maps::{count_theta_choices, cs_distance, enumerate_identity_lifts, BuiltinMap};
use orbicore::orbifold::{canonical_atlas, diagonal_suborbifold, isotropy_at, product, strata, GoodOrbifold};
use orbicore::poly::{average_polynomial, monomials, Polynomial};
use orbicore::riemann::{
    average_metric, e_apply, e_inverse, equivariant_partition_of_unity, exp_local_homeo_check,
    exp_representative_residual, football_sample_diffeos, metric_invariance_residual, metric_min_eigenvalue,
    radial_diffeo, reduced_group_quotient_check, ExpMap, MetricAveraging, MetricMap,
};
use orbicore::tangent::{
    admissible_space, enumerate_curve_lifts, linear_combination, project_equivariant, random_orbisection, seminorm,
    CurveInOrbifold, Expr, Orbisection,
};
use orbicore::{Point, PointMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn core<T>(r: orbicore::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn football_id_group() -> Outcome {
    let mut parts = Vec::new();
    for p in [2usize, 3, 5] {
        let start = Instant::now();
        let o = GoodOrbifold::football(p);
        let atlas = core(canonical_atlas(&o))?;
        let id = core(enumerate_identity_lifts(&o, &atlas))?;
        let elapsed = start.elapsed();
        ensure(id.order() == p * p, format!("p={p}: |ID| = {}", id.order()))?;
        ensure(id.is_closed() && id.is_abelian(), format!("p={p}: not an abelian group"))?;
        ensure(id.elements.iter().all(|a| p % id.element_order(a) == 0), format!("p={p}: element order not dividing p"))?;
        ensure(elapsed < Duration::from_secs(5), format!("p={p}: took {elapsed:?}"))?;
        parts.push(format!("p={p}: {} in {:.2?}", id.order(), elapsed));
    }
    Ok(parts.join(", "))
}

/// Number of distinct maps `h ↦ g h g⁻¹`, by brute force on matrices.
fn inner_automorphism_oracle(mats: &[DMatrix<f64>]) -> usize {
    let mut seen: Vec<Vec<usize>> = Vec::new();
    for g in mats {
        let image: Vec<usize> = mats
            .iter()
            .map(|h| {
                let c = g * h * g.transpose();
                mats.iter().position(|m| (m - &c).amax() < 1e-9).expect("closed")
            })
            .collect();
        if !seen.contains(&image) {
            seen.push(image);
        }
    }
    seen.len()
}

fn theta_choices() -> Outcome {
    let cases: Vec<(&str, Vec<DMatrix<f64>>, usize)> = vec![
        ("Z_2", vec![gens::rotation2(PI)], 1),
        ("Z_3", vec![gens::rotation2(2.0 * PI / 3.0)], 1),
        ("Z_5", vec![gens::rotation2(2.0 * PI / 5.0)], 1),
        ("D_4 (order 8)", vec![gens::rotation2(PI / 2.0), gens::flip(2, 1)], 4),
        ("S_3 in O(2)", vec![gens::rotation2(2.0 * PI / 3.0), gens::flip(2, 1)], 6),
    ];
    let mut parts = Vec::new();
    for (name, g, want) in cases {
        let group = Arc::new(core(generate_group(&g, DEFAULT_MAX_ORDER))?);
        let got = count_theta_choices(&group);
        let formula = group.order() / center(&group).order();
        let oracle = inner_automorphism_oracle(&group.matrices());
        ensure(got == want && formula == want && oracle == want, format!("{name}: got {got}, formula {formula}, oracle {oracle}"))?;
        parts.push(format!("{name}={got}"));
    }
    Ok(parts.join(", "))
}

fn admissible_spaces() -> Outcome {
    let line = GoodOrbifold::line_mod_reflection(1.0);
    let at_zero = admissible_space(&line, &core(line.point_of(&[0.0]))?).len();
    ensure(at_zero == 0, format!("[0] of R/Z2: dim {at_zero}"))?;
    let mirror = GoodOrbifold::mirror_plane(2.0);
    let on_mirror = admissible_space(&mirror, &core(mirror.point_of(&[0.3, 0.0]))?).len();
    ensure(on_mirror == 1, format!("mirror stratum: dim {on_mirror}"))?;
    let regular = admissible_space(&mirror, &core(mirror.point_of(&[0.3, 0.4]))?).len();
    ensure(regular == 2, format!("regular plane point: dim {regular}"))?;
    let line_regular = admissible_space(&line, &core(line.point_of(&[0.5]))?).len();
    ensure(line_regular == 1, format!("regular line point: dim {line_regular}"))?;
    let fb = GoodOrbifold::football(3);
    let fb_regular = admissible_space(&fb, &core(fb.point_of(&[0.6, 0.0, 0.8]))?).len();
    ensure(fb_regular == 2, format!("regular football point: dim {fb_regular}"))?;
    Ok(format!("0 / {on_mirror} / {regular}"))
}

fn curve_lift_counts() -> Outcome {
    let m = Arc::new(GoodOrbifold::mirror_plane(2.0));
    let count = |c: &CurveInOrbifold, k: usize| -> Result<(usize, usize), String> {
        let lifts = core(enumerate_curve_lifts(c, 0, 2))?;
        Ok((lifts.iter().filter(|l| l.is_c(k - 1)).count(), lifts.iter().filter(|l| l.is_c(k)).count()))
    };
    let b = core(CurveInOrbifold::single(m.clone(), (-1.0, 1.0), vec![0.0], vec![Expr::t(), Expr::abs(Expr::t())]))?;
    let (b0, b1) = count(&b, 1)?;
    ensure((b0, b1) == (4, 2), format!("b: {b0} C0 / {b1} C1"))?;
    let c = core(CurveInOrbifold::single(m, (-1.0, 1.0), vec![0.0], vec![Expr::t(), Expr::poly(&[0.0, 0.0, 1.0])]))?;
    let (c1, c2) = count(&c, 2)?;
    ensure((c1, c2) == (4, 2), format!("c: {c1} C1 / {c2} C2"))?;
    Ok(format!("b: {b0} C0 / {b1} C1; c: {c1} C1 / {c2} C2"))
}

fn product_and_diagonal() -> Outcome {
    let line = GoodOrbifold::line_mod_reflection(1.0);
    let sq = core(product(&line, &line))?;
    let corner = isotropy_at(&sq, &core(sq.point_of(&[0.0, 0.0]))?).order();
    ensure(corner == 4, format!("product corner order {corner}"))?;
    let diag = core(diagonal_suborbifold(&line))?;
    let d = diag.isotropy_at(&Point::zeros(2)).order();
    ensure(d == 2, format!("diagonal corner order {d}"))?;
    Ok(format!("product corner {corner}, diagonal corner {d}"))
}

fn football_strata() -> Outcome {
    let mut parts = Vec::new();
    for p in [2usize, 3, 5] {
        let s = core(strata(&GoodOrbifold::football(p), 64))?;
        let singletons = s.strata.iter().filter(|t| t.sample_points.len() == 1).count();
        ensure(s.len() == 3 && singletons == 2, format!("p={p}: {} strata, {singletons} singletons", s.len()))?;
        parts.push(format!("p={p}: 3 strata"));
    }
    Ok(parts.join(", "))
}

fn e_chart_roundtrips() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_sigma, mut worst_map): (f64, f64) = (0.0, 0.0);
    let cases = [Arc::new(GoodOrbifold::cyclic_plane(3, 1.0)), Arc::new(GoodOrbifold::football(3))];
    for o in cases {
        let atlas = core(canonical_atlas(&o))?;
        let e = ExpMap::closed_form(o.clone());
        let e0 = core(e_apply(&Orbisection::zero(o.clone(), &atlas), &e))?;
        for (i, c) in e0.charts.iter().enumerate() {
            for y in c.grid(&o.model, 5, 1.0) {
                ensure(e0.eval(i, &y) == y, format!("{}: E(0) moves {:?}", o.name, y.as_slice()))?;
            }
        }
        for _ in 0..50 {
            let s = random_orbisection(o.clone(), &atlas, &mut rng, 0.045, 5);
            ensure(seminorm(&s, 1, 5) < 0.05, "sample above the C1 bound")?;
            let f = core(e_apply(&s, &e))?;
            let back = core(e_inverse(&f, &e))?;
            worst_sigma = worst_sigma.max(seminorm(&core(linear_combination(&back, &s, 1.0, -1.0))?, 0, 5));
            worst_map = worst_map.max(core(cs_distance(&core(e_apply(&back, &e))?, &f, 0, 5))?.value);
        }
        // maps not built from an orbisection
        let near_id = if o.model.is_flat() {
            core(radial_diffeo(o.clone(), &atlas, 0.03))?.forward
        } else {
            core(BuiltinMap::Rotation(0.04).to_map(o.clone(), &atlas))?
        };
        let back = core(e_apply(&core(e_inverse(&near_id, &e))?, &e))?;
        worst_map = worst_map.max(core(cs_distance(&back, &near_id, 0, 5))?.value);
    }
    let elapsed = start.elapsed();
    ensure(worst_sigma < 1e-8, format!("section residual {worst_sigma:e}"))?;
    ensure(worst_map < 1e-8, format!("map residual {worst_map:e}"))?;
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!("section {worst_sigma:.2e}, map {worst_map:.2e}, {elapsed:.2?}"))
}

fn exp_checks() -> Outcome {
    let o = Arc::new(GoodOrbifold::football(3));
    let e = ExpMap::closed_form(o.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let r = core(exp_representative_residual(&e, &mut rng, 50, 1.0))?;
    ensure(r < 1e-9, format!("representative residual {r:e}"))?;
    let pole = core(o.point_of(&[0.0, 0.0, 1.0]))?;
    let h = core(exp_local_homeo_check(&e, &pole, 0.3, 200, &mut rng))?;
    ensure(h.injective, format!("not injective: {:?}", h.witnesses))?;
    ensure(h.surjective, format!("not surjective: {:?}", h.witnesses))?;
    Ok(format!("residual {r:.2e}, {} pairs, coverage gap {:.3e}", h.pairs_checked, h.coverage_gap))
}

fn averaging_battery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut inv, mut min_eig, mut pu_err, mut poly_err, mut proj_err) = (0.0f64, f64::INFINITY, 0.0f64, 0.0f64, 0.0f64);
    for o in [Arc::new(GoodOrbifold::football(3)), Arc::new(GoodOrbifold::dihedral_plane(4, 1.0))] {
        let atlas = core(canonical_atlas(&o))?;
        let n = o.ambient_dim();
        let raw: MetricMap = Arc::new(move |y: &Point| {
            let mut m = DMatrix::<f64>::identity(n, n);
            m[(0, 0)] += 0.5 + 0.3 * y[0];
            m[(0, 1)] += 0.1 * y[1];
            m[(1, 0)] += 0.1 * y[1];
            m
        });
        for c in &atlas.charts {
            let g = core(average_metric(&o.model, c, raw.clone(), MetricAveraging::Diagonal, 7))?;
            inv = inv.max(metric_invariance_residual(&o.model, c, &g, 7));
            min_eig = min_eig.min(metric_min_eigenvalue(&o.model, c, &g, 7));
        }
        let grid = core(o.model.grid(40))?.points;
        let pu = core(equivariant_partition_of_unity(o.clone(), &atlas, &grid))?;
        pu_err = pu_err.max(core(pu.sum_residual(&grid))?);

        let terms: Vec<(Vec<u32>, Vec<f64>)> =
            monomials(n, 3).into_iter().map(|e| (e, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect();
        let p = core(Polynomial::from_terms(n, n, &terms))?;
        let mats = o.group.matrices();
        let once = average_polynomial(&p, &mats, &mats);
        poly_err = poly_err.max(average_polynomial(&once, &mats, &mats).coefficient_distance(&once));

        let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let field: PointMap = Arc::new(move |y: &Point| &a * y + y.map(|c| c * c * c));
        for c in &atlas.charts {
            let once = project_equivariant(&o.model, &c.isotropy, field.clone());
            let twice = project_equivariant(&o.model, &c.isotropy, once.clone());
            for y in c.grid(&o.model, 7, 1.0) {
                proj_err = proj_err.max((twice(&y) - once(&y)).amax());
            }
        }
    }
    ensure(inv < 1e-10 && min_eig > 0.0, format!("metric invariance {inv:e}, min eigenvalue {min_eig:e}"))?;
    ensure(pu_err <= 1e-9, format!("partition sum off by {pu_err:e}"))?;
    ensure(poly_err < 1e-12, format!("polynomial idempotence {poly_err:e}"))?;
    ensure(proj_err < 1e-12, format!("projection idempotence {proj_err:e}"))?;
    Ok(format!(
        "metric {inv:.1e} (min eig {min_eig:.3}), partition {pu_err:.1e}, poly {poly_err:.1e}, projection {proj_err:.1e}"
    ))
}

fn quotient_checks() -> Outcome {
    let mut parts = Vec::new();
    for p in [3usize, 5] {
        let o = Arc::new(GoodOrbifold::football(p));
        let atlas = core(canonical_atlas(&o))?;
        let diffeos = core(football_sample_diffeos(o.clone(), &atlas))?;
        ensure(diffeos.len() == 10, "expected 10 sample diffeomorphisms")?;
        let r = core(reduced_group_quotient_check(o, &atlas, &diffeos))?;
        ensure(r.conjugates_in_id == r.conjugates_tested, format!("p={p}: conjugates {:?}", r.witnesses))?;
        ensure(r.differences_tested > 0 && r.differences_in_id == r.differences_tested, format!("p={p}: differences {:?}", r.witnesses))?;
        parts.push(format!("p={p}: {} conjugates, {} differences", r.conjugates_tested, r.differences_tested));
    }
    let line = Arc::new(GoodOrbifold::line_mod_reflection(1.0));
    let la = core(canonical_atlas(&line))?;
    let d = (1..=10).map(|k| radial_diffeo(line.clone(), &la, 0.03 * k as f64 - 0.15)).collect::<Result<Vec<_>, _>>();
    let r = core(reduced_group_quotient_check(line, &la, &core(d)?))?;
    ensure(r.pass(), format!("R/Z2: {:?}", r.witnesses))?;
    Ok(parts.join(", "))
}

fn default_suite() -> Outcome {
    let cfg = SuiteConfig::default();
    let start = Instant::now();
    let (a, _) = evaluate(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (b, _) = evaluate(&cfg).map_err(|e| e.to_string())?;
    ensure(a.to_json() == b.to_json(), "reports differ between runs")?;
    ensure(a.pass(), format!("{} checks failed", a.summary.failed))?;
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!("{} checks in {elapsed:.2?}, deterministic", a.summary.checks))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 identity-lift group of the football", football_id_group),
        ("2 theta-choice counts", theta_choices),
        ("3 admissible space dimensions", admissible_spaces),
        ("4 curve-lift counts", curve_lift_counts),
        ("5 product and diagonal isotropy", product_and_diagonal),
        ("6 football strata", football_strata),
        ("7 E-chart roundtrips", e_chart_roundtrips),
        ("8 exp well-defined and local homeomorphism", exp_checks),
        ("9 equivariant averaging battery", averaging_battery),
        ("10 identity lifts under conjugation and lift changes", quotient_checks),
        ("11 default suite runtime and determinism", default_suite),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 11 acceptance criteria passed");
}
