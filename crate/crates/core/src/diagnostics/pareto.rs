use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::IterateChains;
use crate::error::{Error, Result};
use crate::families::VariationalParams;
use crate::models::Model;

/// Minimum number of positive excesses accepted by [`gpd_fit`].
pub const MIN_EXCESSES: usize = 20;

/// Iterate tail indices above this value mark averaging as unreliable.
pub const KHAT_PROBLEM_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GpdFit {
    pub k: f64,
    pub sigma: f64,
}

/// Generalized Pareto fit to threshold excesses.
///
/// Zhang and Stephens' posterior-mean estimator of `b = −k/σ` over a quadrature grid of
/// the profile likelihood, followed by a weak shrinkage of `k` toward 0.5 worth ten
/// pseudo-observations.
pub fn gpd_fit(excesses: &[f64]) -> Result<GpdFit> {
    if excesses.len() < MIN_EXCESSES {
        return Err(Error::InsufficientSamples { needed: MIN_EXCESSES, got: excesses.len() });
    }
    if let Some(x) = excesses.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("excesses must be positive and finite, got {x}")));
    }
    let mut x = excesses.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let nf = n as f64;

    let m = 30 + (nf.sqrt() as usize);
    let quartile = x[((nf / 4.0 + 0.5) as usize).max(1) - 1];
    let x_max = x[n - 1];
    let b: Vec<f64> = (1..=m)
        .map(|i| (1.0 - (m as f64 / (i as f64 - 0.5)).sqrt()) / (3.0 * quartile) + 1.0 / x_max)
        .collect();
    let k_of = |b: f64| x.iter().map(|v| (-b * v).ln_1p()).sum::<f64>() / nf;
    let profile: Vec<f64> = b
        .iter()
        .map(|&bi| {
            let k = k_of(bi);
            nf * ((-bi / k).ln() - k - 1.0)
        })
        .collect();
    let mut weights: Vec<f64> = profile
        .iter()
        .map(|li| 1.0 / profile.iter().map(|lj| (lj - li).exp()).sum::<f64>())
        .collect();
    for w in weights.iter_mut() {
        if !(*w >= 10.0 * f64::EPSILON) {
            *w = 0.0;
        }
    }
    let total: f64 = weights.iter().sum();
    let b_post = b.iter().zip(&weights).map(|(bi, w)| bi * w).sum::<f64>() / total;
    let k = k_of(b_post);
    let sigma = -k / b_post;
    let k = (nf * k + 10.0 * 0.5) / (nf + 10.0);
    if !k.is_finite() || !sigma.is_finite() {
        return Err(Error::NonFinite("generalized Pareto fit".into()));
    }
    Ok(GpdFit { k, sigma })
}

/// Number of tail draws used out of `n`.
pub fn tail_size(n: usize) -> usize {
    let nf = n as f64;
    (nf / 5.0).min(3.0 * nf.sqrt()).ceil() as usize
}

/// Shape estimate for the upper tail of a sample.
///
/// The largest `tail_size(n)` values are taken as excesses over the next-largest value.
/// Samples whose tail has fewer than [`MIN_EXCESSES`] distinct positive excesses (for
/// example constant data) have no tail to speak of and return `−∞`.
pub fn upper_tail_khat(sample: &[f64]) -> f64 {
    let n = sample.len();
    let m = tail_size(n);
    if m < MIN_EXCESSES || m >= n {
        return f64::NEG_INFINITY;
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[n - m - 1];
    let excesses: Vec<f64> = sorted[n - m..].iter().map(|v| v - threshold).filter(|e| *e > 0.0).collect();
    match gpd_fit(&excesses) {
        Ok(fit) => fit.k,
        Err(_) => f64::NEG_INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailIndices {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub max: f64,
    pub problematic: bool,
}

/// Lower- and upper-tail shape estimates for every component, pooling the last
/// `window` iterates of all chains.
pub fn khat_iterates(chains: &IterateChains, window: usize) -> Result<TailIndices> {
    chains.check_window(window, 100)?;
    let mut lower = Vec::with_capacity(chains.num_params());
    let mut upper = Vec::with_capacity(chains.num_params());
    for k in 0..chains.num_params() {
        let mut pooled: Vec<f64> = (0..chains.num_chains()).flat_map(|j| chains.component_tail(j, k, window)).collect();
        upper.push(upper_tail_khat(&pooled));
        pooled.iter_mut().for_each(|v| *v = -*v);
        lower.push(upper_tail_khat(&pooled));
    }
    let max = lower.iter().chain(&upper).copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(TailIndices { lower, upper, max, problematic: max > KHAT_PROBLEM_THRESHOLD })
}

/// Shape estimate of the importance weights `p(θ, y) / q(θ)` over `num_draws` draws from `q`.
pub fn psis_khat<R: Rng + ?Sized>(
    model: &dyn Model,
    params: &VariationalParams,
    num_draws: usize,
    rng: &mut R,
) -> Result<f64> {
    Error::check_dim(model.dim(), params.dim())?;
    if num_draws < 100 {
        return Err(Error::InsufficientSamples { needed: 100, got: num_draws });
    }
    let p = params.dim();
    let mut noise = vec![0.0; p];
    let mut theta = vec![0.0; p];
    let mut log_w = Vec::with_capacity(num_draws);
    for s in 0..num_draws {
        noise.iter_mut().for_each(|z| *z = rng.sample(StandardNormal));
        params.sample_into(&noise, &mut theta);
        let lw = model.log_joint(&theta) - params.log_density(&theta)?;
        if !lw.is_finite() {
            return Err(Error::NonFinite(format!("log importance weight of draw {s}")));
        }
        log_w.push(lw);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = log_w.iter().copied().fold(f64::INFINITY, f64::min);
    if max - min < 1e-8 {
        return Ok(f64::NEG_INFINITY);
    }
    let weights: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    Ok(upper_tail_khat(&weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::FamilyKind;
    use crate::models::GaussianTarget;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1, StudentT};

    fn gpd_sample(rng: &mut ChaCha8Rng, k: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                if k == 0.0 { -(1.0 - u).ln() } else { ((1.0 - u).powf(-k) - 1.0) / k }
            })
            .collect()
    }

    #[test]
    fn exponential_is_shape_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..2000).map(|_| Exp1.sample(&mut rng)).collect();
        let fit = gpd_fit(&x).unwrap();
        assert!(fit.k.abs() < 0.1, "{fit:?}");
        assert!((fit.sigma - 1.0).abs() < 0.15);
    }

    #[test]
    fn recovers_positive_and_negative_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let heavy = gpd_fit(&gpd_sample(&mut rng, 0.5, 2000)).unwrap();
        assert!((heavy.k - 0.5).abs() < 0.1, "{heavy:?}");
        let uniform: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).filter(|u| *u > 0.0).collect();
        let bounded = gpd_fit(&uniform).unwrap();
        assert!((bounded.k + 1.0).abs() < 0.15, "{bounded:?}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(gpd_fit(&[1.0; 19]), Err(Error::InsufficientSamples { .. })));
        let mut x = vec![1.0; 25];
        x[3] = 0.0;
        assert!(gpd_fit(&x).is_err());
    }

    #[test]
    fn tail_size_convention() {
        assert_eq!(tail_size(100), 20);
        assert_eq!(tail_size(10_000), 300);
        assert_eq!(tail_size(2000), 135);
    }

    fn single_component(xs: &[f64]) -> IterateChains {
        let its: Vec<Vec<f64>> = xs.iter().map(|v| vec![*v]).collect();
        IterateChains::from_iterates(&[its], 0).unwrap()
    }

    #[test]
    fn gaussian_and_student_tails() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g: Vec<f64> = (0..10_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let t = khat_iterates(&single_component(&g), 10_000).unwrap();
        assert!(t.max < 0.3, "{t:?}");
        assert!(!t.problematic);

        let dist = StudentT::new(2.0).unwrap();
        let s: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        let t = khat_iterates(&single_component(&s), 10_000).unwrap();
        assert!((t.upper[0] - 0.5).abs() < 0.15, "{t:?}");
    }

    #[test]
    fn constant_iterates_have_no_tail() {
        let t = khat_iterates(&single_component(&[1.0; 200]), 200).unwrap();
        assert_eq!(t.max, f64::NEG_INFINITY);
        assert!(khat_iterates(&single_component(&[1.0; 99]), 99).is_err());
    }

    #[test]
    fn importance_weight_screen() {
        let target = GaussianTarget::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let exact = VariationalParams::standard(FamilyKind::MeanField, 1);
        assert!(psis_khat(&target, &exact, 2000, &mut rng).unwrap() < 0.0);
        let narrow = VariationalParams::mean_field(vec![0.0], &[0.5]).unwrap();
        assert!(psis_khat(&target, &narrow, 4000, &mut rng).unwrap() > 0.5);
        let wide = VariationalParams::mean_field(vec![0.0], &[2.0]).unwrap();
        assert!(psis_khat(&target, &wide, 4000, &mut rng).unwrap() < 0.5);
        assert!(psis_khat(&target, &wide, 50, &mut rng).is_err());
    }
}
