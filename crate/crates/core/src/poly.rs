//! Vector-valued multivariate polynomials with exact coefficient-level
//! group averaging.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Point, Result};

type Scalar = BTreeMap<Vec<u32>, f64>;

/// `p: ℝ^nvars → ℝ^nout`, stored as exponent vector ↦ coefficient vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub nvars: usize,
    pub nout: usize,
    pub terms: BTreeMap<Vec<u32>, DVector<f64>>,
}

/// Exponent vectors of total degree ≤ `degree`, graded then lexicographic.
pub fn monomials(nvars: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for d in 0..=degree {
        let mut cur = vec![0u32; nvars];
        push_with_total(&mut out, &mut cur, 0, d);
    }
    out
}

fn push_with_total(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, k: usize, remaining: u32) {
    if k + 1 == cur.len() {
        cur[k] = remaining;
        out.push(cur.clone());
        return;
    }
    if cur.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for e in (0..=remaining).rev() {
        cur[k] = e;
        push_with_total(out, cur, k + 1, remaining - e);
    }
    cur[k] = 0;
}

fn monomial_value(exp: &[u32], z: &Point) -> f64 {
    exp.iter().zip(z.iter()).map(|(&e, &x)| x.powi(e as i32)).product()
}

fn scalar_mul(a: &Scalar, b: &Scalar) -> Scalar {
    let mut out = Scalar::new();
    for (ea, ca) in a {
        for (eb, cb) in b {
            let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            *out.entry(e).or_insert(0.0) += ca * cb;
        }
    }
    out
}

impl Polynomial {
    pub fn zero(nvars: usize, nout: usize) -> Self {
        Polynomial { nvars, nout, terms: BTreeMap::new() }
    }

    /// Builds from `(exponents, coefficients)` pairs, summing repeats.
    pub fn from_terms(nvars: usize, nout: usize, terms: &[(Vec<u32>, Vec<f64>)]) -> Result<Self> {
        let mut p = Polynomial::zero(nvars, nout);
        for (e, c) in terms {
            if e.len() != nvars {
                return Err(Error::DimensionMismatch { expected: nvars, got: e.len() });
            }
            if c.len() != nout {
                return Err(Error::DimensionMismatch { expected: nout, got: c.len() });
            }
            p.add_term(e.clone(), &DVector::from_column_slice(c));
        }
        Ok(p)
    }

    fn add_term(&mut self, e: Vec<u32>, c: &DVector<f64>) {
        let nout = self.nout;
        let slot = self.terms.entry(e).or_insert_with(|| DVector::zeros(nout));
        *slot += c;
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, z: &Point) -> Point {
        let mut out = Point::zeros(self.nout);
        for (e, c) in &self.terms {
            out += c * monomial_value(e, z);
        }
        out
    }

    /// `p(A z)`.
    pub fn substitute_linear(&self, a: &DMatrix<f64>) -> Polynomial {
        let n = self.nvars;
        let forms: Vec<Scalar> = (0..n)
            .map(|k| {
                let mut s = Scalar::new();
                for j in 0..n {
                    if a[(k, j)] != 0.0 {
                        let mut e = vec![0u32; n];
                        e[j] = 1;
                        s.insert(e, a[(k, j)]);
                    }
                }
                s
            })
            .collect();
        let mut powers: Vec<Vec<Scalar>> = forms
            .iter()
            .map(|f| {
                let mut one = Scalar::new();
                one.insert(vec![0u32; n], 1.0);
                vec![one, f.clone()]
            })
            .collect();
        let mut out = Polynomial::zero(n, self.nout);
        for (e, c) in &self.terms {
            let mut prod = Scalar::new();
            prod.insert(vec![0u32; n], 1.0);
            for (k, &ek) in e.iter().enumerate() {
                while powers[k].len() <= ek as usize {
                    let next = scalar_mul(powers[k].last().unwrap(), &forms[k]);
                    powers[k].push(next);
                }
                prod = scalar_mul(&prod, &powers[k][ek as usize]);
            }
            for (pe, pc) in prod {
                out.add_term(pe, &(c * pc));
            }
        }
        out
    }

    /// `M · p(z)`.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars, m.nrows());
        for (e, c) in &self.terms {
            out.terms.insert(e.clone(), m * c);
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Polynomial {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= s;
        }
        out
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), c);
        }
        out
    }

    /// Largest absolute coefficient difference.
    pub fn coefficient_distance(&self, other: &Polynomial) -> f64 {
        let mut d: f64 = 0.0;
        for (e, c) in &self.terms {
            d = match other.terms.get(e) {
                Some(o) => d.max((c - o).amax()),
                None => d.max(c.amax()),
            };
        }
        for (e, c) in &other.terms {
            if !self.terms.contains_key(e) {
                d = d.max(c.amax());
            }
        }
        d
    }
}

/// `(1/N) Σ_i out_i · p(src_iᵀ z)` for orthogonal `src_i`.
pub fn average_polynomial(p: &Polynomial, src: &[DMatrix<f64>], out: &[DMatrix<f64>]) -> Polynomial {
    let mut acc = Polynomial::zero(p.nvars, p.nout);
    for (s, o) in src.iter().zip(out) {
        acc = acc.add(&p.substitute_linear(&s.transpose()).left_mul(o));
    }
    acc.scaled(1.0 / src.len() as f64)
}

/// Least-squares fit of total degree ≤ `degree` to `(z, value)` samples.
pub fn fit_polynomial(samples: &[(Point, Point)], degree: u32) -> Result<Polynomial> {
    let (z0, v0) = samples.first().ok_or_else(|| Error::Invalid("no samples to fit".into()))?;
    let (nvars, nout) = (z0.len(), v0.len());
    let basis = monomials(nvars, degree);
    let a = DMatrix::from_fn(samples.len(), basis.len(), |r, c| monomial_value(&basis[c], &samples[r].0));
    let b = DMatrix::from_fn(samples.len(), nout, |r, c| samples[r].1[c]);
    let coeffs = a.svd(true, true).solve(&b, 1e-12).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut p = Polynomial::zero(nvars, nout);
    for (k, e) in basis.into_iter().enumerate() {
        p.terms.insert(e, coeffs.row(k).transpose());
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(1, 3).len(), 4);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(3, 2).len(), 10);
    }

    #[test]
    fn substitution_matches_evaluation() {
        let p = Polynomial::from_terms(
            2,
            1,
            &[(vec![2, 1], vec![1.5]), (vec![0, 3], vec![-0.5]), (vec![1, 0], vec![2.0])],
        )
        .unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        let q = p.substitute_linear(&a);
        let z = Point::from_column_slice(&[0.3, -0.7]);
        assert!((q.eval(&z) - p.eval(&(&a * &z))).amax() < 1e-14);
    }

    #[test]
    fn odd_part_under_reflection() {
        // q(z) = 1 + 2z + 3z² + 4z³; averaging with Θ(γ)=γ keeps 2z + 4z³
        let q = Polynomial::from_terms(
            1,
            1,
            &[(vec![0], vec![1.0]), (vec![1], vec![2.0]), (vec![2], vec![3.0]), (vec![3], vec![4.0])],
        )
        .unwrap();
        let g = vec![DMatrix::identity(1, 1), -DMatrix::identity(1, 1)];
        let avg = average_polynomial(&q, &g, &g);
        let odd = Polynomial::from_terms(1, 1, &[(vec![1], vec![2.0]), (vec![3], vec![4.0])]).unwrap();
        assert!(avg.coefficient_distance(&odd) < 1e-15);
    }

    #[test]
    fn fit_recovers_polynomial() {
        let samples: Vec<(Point, Point)> = (0..20)
            .map(|i| {
                let x = -1.0 + 0.1 * i as f64;
                (Point::from_column_slice(&[x]), Point::from_column_slice(&[1.0 - x + 0.5 * x * x]))
            })
            .collect();
        let p = fit_polynomial(&samples, 2).unwrap();
        assert!((p.terms[&vec![2]][0] - 0.5).abs() < 1e-12);
    }
}
