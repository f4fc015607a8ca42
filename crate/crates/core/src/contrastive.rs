//! The hybrid-supervised contrastive constraint used as the validation
//! objective for the loss search.
//!
//! A fused image is pulled toward positive samples (the dataset reference
//! and a natural-light image) and pushed from the source exposures, measured
//! in the feature space of a frozen extractor. Per extractor layer the term
//! is the positive distance divided by the summed negative distances, with a
//! small epsilon guarding the denominator; distances are mean square errors.

use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::extractor::FeatureExtractor;
use crate::tensor::Tensor;

/// Denominator guard; the ratio stays finite when the fused image collapses
/// onto every negative at some layer.
pub const GAMMA_EPS: f64 = 1e-8;

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.len() as f64;
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// The contrastive ratio evaluated directly on feature stacks.
///
/// `f_feats`, `pos_feats`: one tensor per layer. `neg_feats`: per negative
/// pair, the under- and over-exposure feature stacks.
pub fn gamma_from_features(
    f_feats: &[Tensor],
    pos_feats: &[Tensor],
    neg_feats: &[(Vec<Tensor>, Vec<Tensor>)],
) -> CoreResult<f64> {
    if neg_feats.is_empty() {
        return Err(CoreError::EmptyNegatives);
    }
    let mut total = 0.0;
    for i in 0..f_feats.len() {
        let num = mse(&f_feats[i], &pos_feats[i]);
        let mut den = GAMMA_EPS;
        for (u, o) in neg_feats {
            den += mse(&f_feats[i], &u[i]) + mse(&f_feats[i], &o[i]);
        }
        total += num / den;
    }
    Ok(total)
}

/// Contrastive constraint of `f` against one positive and the negative pairs.
pub fn gamma_p(
    extractor: &FeatureExtractor,
    f: &Tensor,
    positive: &Tensor,
    negatives: &[(&Tensor, &Tensor)],
) -> CoreResult<f64> {
    if negatives.is_empty() {
        return Err(CoreError::EmptyNegatives);
    }
    let ff = extractor.extract(f)?;
    let pf = extractor.extract(positive)?;
    let mut nf = Vec::with_capacity(negatives.len());
    for (u, o) in negatives {
        nf.push((extractor.extract(u)?, extractor.extract(o)?));
    }
    gamma_from_features(&ff, &pf, &nf)
}

/// [`gamma_p`] plus its gradient with respect to `f`.
pub fn gamma_p_with_grad(
    extractor: &FeatureExtractor,
    f: &Tensor,
    positive: &Tensor,
    negatives: &[(&Tensor, &Tensor)],
) -> CoreResult<(f64, Tensor)> {
    if negatives.is_empty() {
        return Err(CoreError::EmptyNegatives);
    }
    let (ff, cache) = extractor.extract_cached(f)?;
    let pf = extractor.extract(positive)?;
    let mut nf = Vec::with_capacity(negatives.len());
    for (u, o) in negatives {
        nf.push((extractor.extract(u)?, extractor.extract(o)?));
    }
    let mut total = 0.0;
    let mut dtaps = Vec::with_capacity(ff.len());
    for i in 0..ff.len() {
        let n = ff[i].len() as f64;
        let num = mse(&ff[i], &pf[i]);
        let mut den = GAMMA_EPS;
        for (u, o) in &nf {
            den += mse(&ff[i], &u[i]) + mse(&ff[i], &o[i]);
        }
        total += num / den;
        // d(num/den)/dF = (num' * den - num * den') / den^2, elementwise:
        // num' = 2 (F - P)/n, den' = sum_m 2 (F - u)/n + 2 (F - o)/n.
        let mut dden = Tensor::zeros(ff[i].channels(), ff[i].height(), ff[i].width());
        for (u, o) in &nf {
            dden.add_scaled(&ff[i].zip(&u[i], |a, b| 2.0 * (a - b) / n), 1.0);
            dden.add_scaled(&ff[i].zip(&o[i], |a, b| 2.0 * (a - b) / n), 1.0);
        }
        let dnum = ff[i].zip(&pf[i], |a, b| 2.0 * (a - b) / n);
        let inv_den2 = 1.0 / (den * den);
        let mut d = dnum;
        d.scale(den * inv_den2);
        d.add_scaled(&dden, -num * inv_den2);
        dtaps.push(d);
    }
    let grad = extractor.backward(&cache, &dtaps);
    Ok((total, grad))
}

/// The hybrid constraint: the reference term (skipped when no reference is
/// available) plus the natural-image term, as a plain sum with equal weight.
pub fn gamma_h(
    extractor: &FeatureExtractor,
    f: &Tensor,
    reference: Option<&Tensor>,
    natural: &Tensor,
    negatives: &[(&Tensor, &Tensor)],
) -> CoreResult<f64> {
    let mut total = 0.0;
    if let Some(r) = reference {
        total += gamma_p(extractor, f, r, negatives)?;
    }
    total += gamma_p(extractor, f, natural, negatives)?;
    Ok(total)
}

/// [`gamma_h`] plus its gradient with respect to `f`.
pub fn gamma_h_with_grad(
    extractor: &FeatureExtractor,
    f: &Tensor,
    reference: Option<&Tensor>,
    natural: &Tensor,
    negatives: &[(&Tensor, &Tensor)],
) -> CoreResult<(f64, Tensor)> {
    let (mut total, mut grad) = gamma_p_with_grad(extractor, f, natural, negatives)?;
    if let Some(r) = reference {
        let (v, g) = gamma_p_with_grad(extractor, f, r, negatives)?;
        total += v;
        grad.add_scaled(&g, 1.0);
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradient;
    use crate::rng;
    use alloc::vec;
    use rand::Rng as _;

    fn noise(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "gamma-test", &[]);
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    fn scalar(v: f64) -> Tensor {
        Tensor::filled(1, 1, 1, v)
    }

    #[test]
    fn scalar_stub_fixture_returns_one_eighth() {
        // Single layer, F = 2, P = 1, one negative (u = 0, o = 4):
        // (2-1)^2 / ((2-0)^2 + (2-4)^2) = 1/8.
        let e = FeatureExtractor::linear_stub();
        let f = scalar(2.0);
        let p = scalar(1.0);
        let u = scalar(0.0);
        let o = scalar(4.0);
        let v = gamma_p(&e, &f, &p, &[(&u, &o)]).unwrap();
        assert!((v - 0.125).abs() < 1e-9, "{v}");
    }

    #[test]
    fn zero_numerator_when_fused_equals_positive() {
        let e = FeatureExtractor::fallback();
        let f = noise(3, 9, 9, 1);
        let u = noise(3, 9, 9, 2);
        let o = noise(3, 9, 9, 3);
        let v = gamma_p(&e, &f, &f, &[(&u, &o)]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn fused_equal_to_one_negative_stays_finite() {
        let e = FeatureExtractor::linear_stub();
        let f = noise(1, 6, 6, 4);
        let p = noise(1, 6, 6, 5);
        let o = noise(1, 6, 6, 6);
        let v = gamma_p(&e, &f, &p, &[(&f, &o)]).unwrap();
        assert!(v.is_finite());
        // Even against both negatives the epsilon keeps it finite.
        let v2 = gamma_p(&e, &f, &p, &[(&f, &f)]).unwrap();
        assert!(v2.is_finite());
    }

    #[test]
    fn empty_negatives_error() {
        let e = FeatureExtractor::linear_stub();
        let f = noise(1, 6, 6, 7);
        assert!(matches!(
            gamma_p(&e, &f, &f, &[]),
            Err(CoreError::EmptyNegatives)
        ));
    }

    #[test]
    fn gamma_is_nonnegative_and_zero_only_at_positive() {
        let e = FeatureExtractor::linear_stub();
        let f = noise(1, 8, 8, 8);
        let p = noise(1, 8, 8, 9);
        let u = noise(1, 8, 8, 10);
        let o = noise(1, 8, 8, 11);
        let v = gamma_p(&e, &f, &p, &[(&u, &o)]).unwrap();
        assert!(v > 0.0);
    }

    #[test]
    fn gamma_h_without_reference_is_natural_term_alone() {
        let e = FeatureExtractor::fallback();
        let f = noise(3, 9, 9, 12);
        let nat = noise(3, 9, 9, 13);
        let u = noise(3, 9, 9, 14);
        let o = noise(3, 9, 9, 15);
        let negs = [(&u, &o)];
        let h = gamma_h(&e, &f, None, &nat, &negs).unwrap();
        let n = gamma_p(&e, &f, &nat, &negs).unwrap();
        assert_eq!(h, n);
    }

    #[test]
    fn gamma_h_with_duplicated_positive_doubles() {
        let e = FeatureExtractor::fallback();
        let f = noise(3, 9, 9, 16);
        let nat = noise(3, 9, 9, 17);
        let u = noise(3, 9, 9, 18);
        let o = noise(3, 9, 9, 19);
        let negs = [(&u, &o)];
        let h = gamma_h(&e, &f, Some(&nat), &nat, &negs).unwrap();
        let single = gamma_p(&e, &f, &nat, &negs).unwrap();
        assert_eq!(h, 2.0 * single);
    }

    #[test]
    fn gamma_h_is_sum_of_independent_gamma_p_values() {
        let e = FeatureExtractor::linear_stub();
        let f = noise(1, 8, 8, 20);
        let r = noise(1, 8, 8, 21);
        let nat = noise(1, 8, 8, 22);
        let u = noise(1, 8, 8, 23);
        let o = noise(1, 8, 8, 24);
        let negs = [(&u, &o)];
        let h = gamma_h(&e, &f, Some(&r), &nat, &negs).unwrap();
        let a = gamma_p(&e, &f, &r, &negs).unwrap();
        let b = gamma_p(&e, &f, &nat, &negs).unwrap();
        assert!((h - (a + b)).abs() < 1e-15);
    }

    #[test]
    fn line_interpolation_toward_positive_is_monotone() {
        let e = FeatureExtractor::linear_stub();
        let f = noise(1, 8, 8, 25);
        let p = noise(1, 8, 8, 26);
        let u = noise(1, 8, 8, 27);
        let o = noise(1, 8, 8, 28);
        let negs = [(&u, &o)];
        let mut prev = f64::INFINITY;
        for k in 0..=4 {
            let t = k as f64 * 0.25;
            let ft = f.zip(&p, |a, b| (1.0 - t) * a + t * b);
            let v = gamma_p(&e, &ft, &p, &negs).unwrap();
            assert!(
                v <= prev + 1e-12,
                "gamma increased at t={t}: {v} > {prev}"
            );
            prev = v;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences_with_stub_and_fallback() {
        for (name, e) in [
            ("stub", FeatureExtractor::linear_stub()),
            ("fallback", FeatureExtractor::fallback()),
        ] {
            let c = if name == "stub" { 1 } else { 3 };
            let f = noise(c, 8, 8, 29);
            let r = noise(c, 8, 8, 30);
            let nat = noise(c, 8, 8, 31);
            let u = noise(c, 8, 8, 32);
            let o = noise(c, 8, 8, 33);
            let negs = [(&u, &o)];
            let (_, g) = gamma_h_with_grad(&e, &f, Some(&r), &nat, &negs).unwrap();
            let res = check_gradient(f.data(), g.data(), 1e-6, 1e-3, |vals| {
                let ft = Tensor::from_vec(c, 8, 8, vals.to_vec()).unwrap();
                gamma_h(&e, &ft, Some(&r), &nat, &negs).unwrap()
            });
            assert!(res.max_rel_err <= 1e-4, "{name}: {res:?}");
        }
    }

    #[test]
    fn feature_level_entry_checks_empty_negatives() {
        let f = vec![scalar(1.0)];
        let p = vec![scalar(1.0)];
        assert!(matches!(
            gamma_from_features(&f, &p, &[]),
            Err(CoreError::EmptyNegatives)
        ));
    }
}
