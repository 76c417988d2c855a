use std::f64::consts::PI;
use std::sync::Arc;

use approx::assert_abs_diff_eq;
use orbicore::group::{canonical_representative, generate_group, gens, DEFAULT_MAX_ORDER};
use orbicore::orbifold::{canonical_atlas, GoodOrbifold};
use orbicore::poly::{average_polynomial, monomials, Polynomial};
use orbicore::riemann::{e_apply, e_inverse, equivariant_partition_of_unity, ExpLike, ExpMap};
use orbicore::tangent::{linear_combination, random_orbisection, seminorm};
use orbicore::Point;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sphere_point() -> impl Strategy<Value = Point> {
    (-1.0f64..1.0, 0.0f64..2.0 * PI).prop_map(|(z, phi)| {
        let r = (1.0 - z * z).sqrt();
        Point::from_column_slice(&[r * phi.cos(), r * phi.sin(), z])
    })
}

fn disk_point(radius: f64) -> impl Strategy<Value = Point> {
    (0.0f64..0.95, 0.0f64..2.0 * PI).prop_map(move |(r, phi)| Point::from_column_slice(&[radius * r * phi.cos(), radius * r * phi.sin()]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dihedral_groups_have_order_2k(k in 1usize..9) {
        let g = generate_group(&[gens::rotation2(2.0 * PI / k as f64), gens::flip(2, 1)], DEFAULT_MAX_ORDER).unwrap();
        prop_assert_eq!(g.order(), 2 * k);
        for a in g.labels() {
            prop_assert_eq!(g.mul(a, g.inv(a)), g.identity());
        }
    }

    #[test]
    fn quotient_distance_is_invariant(p in 2usize..6, x in sphere_point(), y in sphere_point(), l in 0usize..6) {
        let o = GoodOrbifold::football(p);
        let l = l % p;
        let gx = o.group.act(l, &x);
        let d = o.distance_between(&x, &y);
        prop_assert!((o.distance_between(&gx, &y) - d).abs() < 1e-12);
        prop_assert!(o.distance_between(&x, &gx) < 1e-7);
        prop_assert!(d <= o.model.distance(&x, &y) + 1e-12);
    }

    #[test]
    fn canonical_representative_is_constant_on_orbits(x in disk_point(1.0), l in 0usize..8) {
        let o = GoodOrbifold::dihedral_plane(4, 1.0);
        let c = canonical_representative(&o.group, &x);
        let c2 = canonical_representative(&o.group, &o.group.act(l, &x));
        prop_assert!((c - c2).amax() < 1e-12);
    }

    #[test]
    fn exp_commutes_with_the_group(x in sphere_point(), t in 0.0f64..2.0, phi in 0.0f64..2.0 * PI, l in 0usize..3) {
        let o = Arc::new(GoodOrbifold::football(3));
        let e = ExpMap::closed_form(o.clone());
        let raw = Point::from_column_slice(&[phi.cos(), phi.sin(), 0.3]) * t;
        let v = o.model.project_tangent(&x, &raw);
        let a = o.group.act(l, &e.exp_model(&x, &v).unwrap());
        let b = e.exp_model(&o.group.act(l, &x), &o.group.act(l, &v)).unwrap();
        prop_assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn averaged_polynomials_are_equivariant(seed in 0u64..1000, z in disk_point(1.0)) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms: Vec<(Vec<u32>, Vec<f64>)> = monomials(2, 3)
            .into_iter()
            .map(|e| (e, vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let p = Polynomial::from_terms(2, 2, &terms).unwrap();
        let g = generate_group(&[gens::rotation2(PI / 3.0), gens::flip(2, 0)], DEFAULT_MAX_ORDER).unwrap();
        let mats = g.matrices();
        let avg = average_polynomial(&p, &mats, &mats);
        for m in &mats {
            prop_assert!((avg.eval(&(m * &z)) - m * avg.eval(&z)).amax() < 1e-12);
        }
    }

    #[test]
    fn partition_sums_to_one(x in sphere_point()) {
        let o = Arc::new(GoodOrbifold::football(4));
        let atlas = canonical_atlas(&o).unwrap();
        let pu = equivariant_partition_of_unity(o, &atlas, &[]).unwrap();
        let w = pu.weights(&x).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&c| (0.0..=1.0 + 1e-15).contains(&c)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn e_chart_roundtrip(seed in 0u64..10_000, c1 in 0.001f64..0.05) {
        let o = Arc::new(GoodOrbifold::football(3));
        let atlas = canonical_atlas(&o).unwrap();
        let e = ExpMap::closed_form(o.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_orbisection(o.clone(), &atlas, &mut rng, c1, 5);
        prop_assert!(s.equivariance_residual(5) < 1e-12);
        let back = e_inverse(&e_apply(&s, &e).unwrap(), &e).unwrap();
        prop_assert!(seminorm(&linear_combination(&back, &s, 1.0, -1.0).unwrap(), 0, 5) < 1e-10);
    }
}

#[test]
fn random_orbisection_has_requested_seminorm() {
    let o = Arc::new(GoodOrbifold::dihedral_plane(3, 1.0));
    let atlas = canonical_atlas(&o).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = random_orbisection(o, &atlas, &mut rng, 0.03, 5);
    assert_abs_diff_eq!(seminorm(&s, 1, 5), 0.03, epsilon = 1e-12);
}
