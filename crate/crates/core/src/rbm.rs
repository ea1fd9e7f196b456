//! Single-hidden-unit RBM over the claims of one statement.
//!
//! The visible layer holds one unit per claim, the hidden unit is the latent
//! truth. Besides the conditionals and contrastive divergence this module has
//! an exact likelihood and gradient by enumeration, used as a test oracle, and
//! the per-source trainer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, logistic, softplus};
use crate::model::{Dataset, RbmParameters, StatementBundle, TrainingConfig, TruthEstimate};
use crate::scalar::Real;

/// Largest statement the exact oracle will enumerate.
pub const MAX_EXACT_CLAIMS: usize = 20;

/// RNG stream ids split from the master seed.
pub(crate) mod stream {
    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const GIBBS: u64 = 2;
}

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The RBM of one statement: per-claim visible biases and weights, the
/// effective hidden bias `b0 + sum(b_i)` and the observed claims.
#[derive(Debug, Clone, PartialEq)]
pub struct StatementRbmView<T> {
    a: Vec<T>,
    w: Vec<T>,
    b: T,
    claims: Vec<bool>,
}

impl<T: Real> StatementRbmView<T> {
    pub fn new(a: Vec<T>, w: Vec<T>, b: T, claims: Vec<bool>) -> Result<Self> {
        let n = claims.len();
        for len in [a.len(), w.len()] {
            if len != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(StatementRbmView { a, w, b, claims })
    }

    /// View for an empty statement; only the hidden bias remains.
    pub fn empty(b: T) -> Self {
        StatementRbmView {
            a: Vec::new(),
            w: Vec::new(),
            b,
            claims: Vec::new(),
        }
    }

    pub fn a(&self) -> &[T] {
        &self.a
    }

    pub fn w(&self) -> &[T] {
        &self.w
    }

    pub fn b(&self) -> T {
        self.b
    }

    pub fn claims(&self) -> &[bool] {
        &self.claims
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    /// Same parameters, different visible state.
    pub fn with_claims(&self, claims: Vec<bool>) -> Result<Self> {
        Self::new(self.a.clone(), self.w.clone(), self.b, claims)
    }

    fn hidden_input(&self, v: &[bool]) -> T {
        let mut x = self.b;
        for (&wi, &vi) in self.w.iter().zip(v) {
            if vi {
                x += wi;
            }
        }
        x
    }

    fn hidden_prob(&self, v: &[bool]) -> T {
        logistic(self.hidden_input(v))
    }

    fn visible_probs(&self, h: T) -> impl Iterator<Item = T> + '_ {
        self.a
            .iter()
            .zip(&self.w)
            .map(move |(&a, &w)| logistic(a + w * h))
    }
}

/// `P(h = 1 | v)` for the view's claim vector.
pub fn hidden_activation<T: Real>(view: &StatementRbmView<T>) -> T {
    view.hidden_prob(&view.claims)
}

/// `P(v_i = 1 | h)` for every visible unit.
pub fn visible_activation<T: Real>(view: &StatementRbmView<T>, h: bool) -> Vec<T> {
    let h = if h { T::one() } else { T::zero() };
    view.visible_probs(h).collect()
}

/// Probability that the statement is true given its claims.
pub fn plausibility<T: Real>(view: &StatementRbmView<T>) -> T {
    hidden_activation(view)
}

/// True and false positive rate of an indexed source.
pub fn source_reliability<T: Real>(params: &RbmParameters<T>, source: usize) -> Result<(T, T)> {
    let (a, w) = match (params.a.get(source), params.w.get(source)) {
        (Some(&a), Some(&w)) => (a, w),
        _ => {
            return Err(Error::UnknownSource {
                index: source,
                len: params.n_sources(),
            })
        }
    };
    Ok((logistic(w + a), logistic(a)))
}

/// Log-likelihood gradient (or an estimate of it) for one statement.
///
/// The hidden-bias gradient is shared: every per-claim share `b_i` and the
/// global `b0` receive the same `d_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate<T> {
    d_a: Vec<T>,
    d_w: Vec<T>,
    d_b: T,
    d_b_src: Vec<T>,
}

impl<T: Real> GradientEstimate<T> {
    pub fn new(d_a: Vec<T>, d_w: Vec<T>, d_b: T) -> Result<Self> {
        if d_a.len() != d_w.len() {
            return Err(Error::Dimension {
                expected: d_a.len(),
                actual: d_w.len(),
            });
        }
        let d_b_src = vec![d_b; d_a.len()];
        Ok(GradientEstimate {
            d_a,
            d_w,
            d_b,
            d_b_src,
        })
    }

    pub fn d_a(&self) -> &[T] {
        &self.d_a
    }

    pub fn d_w(&self) -> &[T] {
        &self.d_w
    }

    pub fn d_b(&self) -> T {
        self.d_b
    }

    pub fn d_b_src(&self) -> &[T] {
        &self.d_b_src
    }

    pub fn d_b0(&self) -> T {
        self.d_b
    }

    pub fn len(&self) -> usize {
        self.d_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_a.is_empty()
    }

    /// Upstream triple `(d_a_i, d_w_i, d_b_i)` for claim `i`.
    pub fn claim(&self, i: usize) -> [T; 3] {
        [self.d_a[i], self.d_w[i], self.d_b_src[i]]
    }

    /// `(d_a, d_w, d_b)` concatenated.
    pub fn to_vec(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(2 * self.len() + 1);
        out.extend_from_slice(&self.d_a);
        out.extend_from_slice(&self.d_w);
        out.push(self.d_b);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CdOptions {
    /// Number of Gibbs reconstruction steps, at least 1.
    pub steps: usize,
    /// Use `P(h=1|v_k)` for the last hidden state instead of a sample.
    pub final_hidden_prob: bool,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions {
            steps: 1,
            final_hidden_prob: false,
        }
    }
}

impl CdOptions {
    pub fn from_config(config: &TrainingConfig) -> Self {
        CdOptions {
            steps: config.cd_steps.max(1),
            final_hidden_prob: config.cd_final_hidden_prob,
        }
    }
}

fn bernoulli<T: Real, R: Rng + ?Sized>(p: T, rng: &mut R) -> bool {
    rng.random::<f64>() < p.as_f64()
}

/// CD-k estimate of the log-likelihood gradient at the observed claims.
pub fn contrastive_divergence<T: Real, R: Rng + ?Sized>(
    view: &StatementRbmView<T>,
    k: usize,
    rng: &mut R,
) -> GradientEstimate<T> {
    contrastive_divergence_with(
        view,
        CdOptions {
            steps: k,
            ..CdOptions::default()
        },
        rng,
    )
}

pub fn contrastive_divergence_with<T: Real, R: Rng + ?Sized>(
    view: &StatementRbmView<T>,
    opts: CdOptions,
    rng: &mut R,
) -> GradientEstimate<T> {
    let v0 = &view.claims;
    let h0 = bernoulli(view.hidden_prob(v0), rng);

    let mut h = h0;
    let mut v = Vec::with_capacity(v0.len());
    let mut h_last = T::zero();
    for step in 0..opts.steps.max(1) {
        let hv = if h { T::one() } else { T::zero() };
        v.clear();
        v.extend(view.visible_probs(hv).map(|p| bernoulli(p, rng)));
        let p = view.hidden_prob(&v);
        let last = step + 1 == opts.steps.max(1);
        if last && opts.final_hidden_prob {
            h_last = p;
        } else {
            h = bernoulli(p, rng);
            h_last = if h { T::one() } else { T::zero() };
        }
    }

    gradient_from_samples(v0, h0, &v, h_last)
}

/// `d_b = h0 - h1`, `d_a_i = v0_i - v1_i`, `d_w_i = v0_i h0 - v1_i h1`.
pub(crate) fn gradient_from_samples<T: Real>(
    v0: &[bool],
    h0: bool,
    v1: &[bool],
    h1: T,
) -> GradientEstimate<T> {
    let ind = |b: bool| if b { T::one() } else { T::zero() };
    let h0 = ind(h0);
    let d_a = v0.iter().zip(v1).map(|(&x, &y)| ind(x) - ind(y)).collect();
    let d_w = v0
        .iter()
        .zip(v1)
        .map(|(&x, &y)| ind(x) * h0 - ind(y) * h1)
        .collect();
    GradientEstimate {
        d_b_src: vec![h0 - h1; v0.len()],
        d_a,
        d_w,
        d_b: h0 - h1,
    }
}

fn check_exact_size(n: usize) -> Result<()> {
    if n > MAX_EXACT_CLAIMS {
        return Err(Error::TooManyClaims {
            n,
            max: MAX_EXACT_CLAIMS,
        });
    }
    Ok(())
}

fn bits(mask: usize, n: usize) -> impl Iterator<Item = bool> {
    (0..n).map(move |i| mask >> i & 1 == 1)
}

/// Unnormalized log marginal of every visible state, indexed by bit mask.
fn log_marginals<T: Real>(view: &StatementRbmView<T>) -> Vec<T> {
    let n = view.len();
    (0..1usize << n)
        .map(|mask| {
            let mut visible = T::zero();
            let mut hidden = view.b;
            for (i, on) in bits(mask, n).enumerate() {
                if on {
                    visible += view.a[i];
                    hidden += view.w[i];
                }
            }
            visible + softplus(hidden)
        })
        .collect()
}

fn mask_of(v: &[bool]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |m, (i, &on)| if on { m | 1 << i } else { m })
}

/// Exact `log P(v)` of the observed claims, with the hidden unit summed out
/// and the partition function enumerated over all `2^n` visible states.
pub fn exact_log_likelihood<T: Real>(view: &StatementRbmView<T>) -> Result<T> {
    check_exact_size(view.len())?;
    let logs = log_marginals(view);
    Ok(logs[mask_of(&view.claims)] - log_sum_exp(&logs))
}

/// Exact gradient of [`exact_log_likelihood`]: data term minus model
/// expectation.
pub fn exact_gradient<T: Real>(view: &StatementRbmView<T>) -> Result<GradientEstimate<T>> {
    check_exact_size(view.len())?;
    let n = view.len();
    let logs = log_marginals(view);
    let log_z = log_sum_exp(&logs);

    let mut mean_v = vec![T::zero(); n];
    let mut mean_hv = vec![T::zero(); n];
    let mut mean_h = T::zero();
    for (mask, &l) in logs.iter().enumerate() {
        let p = (l - log_z).exp();
        let state: Vec<bool> = bits(mask, n).collect();
        let ph = view.hidden_prob(&state);
        mean_h += p * ph;
        for (i, &on) in state.iter().enumerate() {
            if on {
                mean_v[i] += p;
                mean_hv[i] += p * ph;
            }
        }
    }

    let ph_data = view.hidden_prob(&view.claims);
    let d_a = (0..n)
        .map(|i| if view.claims[i] { T::one() } else { T::zero() } - mean_v[i])
        .collect();
    let d_w = (0..n)
        .map(|i| if view.claims[i] { ph_data } else { T::zero() } - mean_hv[i])
        .collect();
    GradientEstimate::new(d_a, d_w, ph_data - mean_h)
}

/// View of a statement under per-source parameters, plus the source index of
/// each claim.
pub fn baseline_view<T: Real>(
    params: &RbmParameters<T>,
    dataset: &Dataset,
    bundle: &StatementBundle,
) -> Result<(StatementRbmView<T>, Vec<usize>)> {
    let mut idx = Vec::with_capacity(bundle.len());
    for (i, claim) in bundle.claims().iter().enumerate() {
        let s = claim
            .source_id
            .as_ref()
            .ok_or_else(|| Error::AnonymousClaim {
                statement: bundle.statement_id().to_string(),
                claim: i,
            })?;
        let k = dataset
            .index_of(s)
            .filter(|&k| k < params.n_sources())
            .ok_or_else(|| Error::InvalidDataset(format!("source {s} is not indexed")))?;
        idx.push(k);
    }
    let a = idx.iter().map(|&k| params.a[k]).collect();
    let w = idx.iter().map(|&k| params.w[k]).collect();
    let b = idx.iter().fold(params.b0, |acc, &k| acc + params.b_src[k]);
    let view = StatementRbmView::new(a, w, b, bundle.claim_values())?;
    Ok((view, idx))
}

fn clamp<T: Real>(x: T, bound: T) -> T {
    x.max(-bound).min(bound)
}

fn mean_abs_change<T: Real>(before: &[T], after: impl Iterator<Item = T>) -> f64 {
    let n = before.len().max(1) as f64;
    before
        .iter()
        .zip(after)
        .map(|(&x, y)| (y - x).abs().as_f64())
        .sum::<f64>()
        / n
}

/// Trains per-source parameters with CD-based stochastic gradient ascent.
///
/// Sources start at `(pretrain_tpr, pretrain_fpr)` with zero hidden biases.
/// Each epoch visits statements in a freshly shuffled order. Identical seed
/// and config give bit-identical parameters.
pub fn train_baseline<T: Real>(dataset: &Dataset, config: &TrainingConfig) -> Result<RbmParameters<T>> {
    config.validate()?;
    for bundle in dataset.bundles() {
        if let Some(i) = bundle.claims().iter().position(|c| c.source_id.is_none()) {
            return Err(Error::AnonymousClaim {
                statement: bundle.statement_id().to_string(),
                claim: i,
            });
        }
    }

    let mut params = RbmParameters::<T>::from_rates(
        dataset.n_sources(),
        config.pretrain_tpr,
        config.pretrain_fpr,
    )?;
    let lr = T::lit(config.learning_rate);
    let bound = T::lit(config.param_clamp);
    let cd = CdOptions::from_config(config);
    let mut order: Vec<usize> = (0..dataset.bundles().len()).collect();
    let mut shuffle_rng = seeded(config.rng_seed, stream::SHUFFLE);
    let mut gibbs_rng = seeded(config.rng_seed, stream::GIBBS);

    for epoch in 0..config.epochs {
        let before: Vec<T> = params.flat().collect();
        order.shuffle(&mut shuffle_rng);
        for &fi in &order {
            let bundle = &dataset.bundles()[fi];
            let (view, idx) = baseline_view(&params, dataset, bundle)?;
            let grad = contrastive_divergence_with(&view, cd, &mut gibbs_rng);
            for (i, &s) in idx.iter().enumerate() {
                params.a[s] = clamp(params.a[s] + lr * grad.d_a()[i], bound);
                params.w[s] = clamp(params.w[s] + lr * grad.d_w()[i], bound);
                params.b_src[s] = clamp(params.b_src[s] + lr * grad.d_b_src()[i], bound);
            }
            params.b0 = clamp(params.b0 + lr * grad.d_b0(), bound);
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    statement: bundle.statement_id().to_string(),
                    detail: format!("b0 = {}", params.b0),
                });
            }
        }
        let change = mean_abs_change(&before, params.flat());
        log::debug!("baseline epoch {epoch}: mean |delta| = {change:.3e}");
        if change < config.convergence_tol {
            log::info!("baseline converged after {} epochs", epoch + 1);
            break;
        }
    }
    Ok(params)
}

/// Plausibility of every statement under trained per-source parameters.
pub fn baseline_estimates<T: Real>(
    params: &RbmParameters<T>,
    dataset: &Dataset,
) -> Result<Vec<TruthEstimate>> {
    dataset
        .bundles()
        .par_iter()
        .map(|bundle| {
            let (view, _) = baseline_view(params, dataset, bundle)?;
            Ok(TruthEstimate::new(
                bundle.statement_id(),
                plausibility(&view).as_f64(),
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClaimRecord, SourceId, StatementId};
    use proptest::prelude::*;

    /// Always yields zero bits, so `random::<f64>()` is 0.0.
    struct Zeros;

    impl rand::RngCore for Zeros {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }

    fn view(a: &[f64], w: &[f64], b: f64, v: &[u8]) -> StatementRbmView<f64> {
        StatementRbmView::new(a.to_vec(), w.to_vec(), b, v.iter().map(|&x| x == 1).collect()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn view_rejects_length_mismatch() {
        assert!(StatementRbmView::new(vec![0.0], vec![0.0, 1.0], 0.0, vec![true]).is_err());
    }

    #[test]
    fn hidden_activation_examples() {
        assert!(close(hidden_activation(&view(&[0., 0.], &[2., -1.], 0.0, &[1, 1])), 0.731_058_578_630_004_9, 1e-12));
        assert_eq!(hidden_activation(&view(&[0., 0., 0.], &[3., -7., 1.], 0.0, &[0, 0, 0])), 0.5);
        assert!(close(hidden_activation(&view(&[0.], &[2.], 0.4, &[1])), 0.916_827_303_506_077_6, 1e-12));
    }

    #[test]
    fn visible_activation_examples() {
        assert_eq!(visible_activation(&view(&[0., 0.], &[1., 2.], 0.0, &[0, 0]), false), vec![0.5, 0.5]);
        let v = view(&[-1.386_294_361_1], &[3.583_518_938_5], 0.0, &[1]);
        assert!(close(visible_activation(&v, true)[0], 0.9, 1e-10));
        assert!(close(visible_activation(&v, false)[0], 0.2, 1e-10));
    }

    #[test]
    fn plausibility_examples() {
        assert_eq!(plausibility(&StatementRbmView::<f64>::empty(0.0)), 0.5);
        assert!(close(plausibility(&view(&[0., 0.], &[2., -1.], 0.0, &[1, 1])), 0.731_058_578_630_004_9, 1e-12));
        assert!(close(plausibility(&view(&[0.; 3], &[2., 2., 2.], 0.0, &[1, 1, 0])), 0.982_013_790_037_908_4, 1e-12));
    }

    #[test]
    fn source_reliability_examples() {
        let params = RbmParameters {
            a: vec![0.0, -1.386_294_361_1, -0.847_297_860_4],
            w: vec![0.0, 3.583_518_938_5, 1.694_595_720_8],
            b_src: vec![0.0; 3],
            b0: 0.0,
        };
        assert_eq!(source_reliability(&params, 0).unwrap(), (0.5, 0.5));
        let (tpr, fpr) = source_reliability(&params, 1).unwrap();
        assert!(close(tpr, 0.9, 1e-10) && close(fpr, 0.2, 1e-10));
        let (tpr, fpr) = source_reliability(&params, 2).unwrap();
        assert!(close(tpr, 0.7, 1e-10) && close(fpr, 0.3, 1e-10));
        assert!(matches!(source_reliability(&params, 3), Err(Error::UnknownSource { index: 3, len: 3 })));
    }

    #[test]
    fn cd_formulas_on_fixed_samples() {
        let g = gradient_from_samples::<f64>(&[true, false], true, &[true, true], 0.0);
        assert_eq!(g.d_b(), 1.0);
        assert_eq!(g.d_a(), &[0.0, -1.0]);
        assert_eq!(g.d_w(), &[1.0, 0.0]);
        assert_eq!(g.d_b_src(), &[1.0, 1.0]);
        assert_eq!(g.d_b0(), 1.0);

        let g = gradient_from_samples::<f64>(&[true, false, true], false, &[true, false, true], 0.0);
        assert!(g.to_vec().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cd_with_all_zero_draws_is_deterministic() {
        // Every Bernoulli with p > 0 fires.
        let v = view(&[0.0, 0.0], &[1.0, 1.0], 0.0, &[1, 0]);
        let mut rng = Zeros;
        let g = contrastive_divergence(&v, 1, &mut rng);
        assert_eq!(g.d_b(), 0.0);
        assert_eq!(g.d_a(), &[0.0, -1.0]);
        assert_eq!(g.d_w(), &[0.0, -1.0]);
    }

    #[test]
    fn cd_is_reproducible_from_seed() {
        let v = view(&[0.3, -0.2, 1.0], &[1.0, -0.5, 0.7], 0.1, &[1, 0, 1]);
        let run = |seed| {
            let mut rng = seeded(seed, stream::GIBBS);
            (0..50).map(|_| contrastive_divergence(&v, 2, &mut rng).to_vec()).collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn cd_mean_field_final_state() {
        let v = view(&[0.0], &[0.0], 0.0, &[1]);
        let mut rng = seeded(1, 0);
        let g = contrastive_divergence_with(&v, CdOptions { steps: 1, final_hidden_prob: true }, &mut rng);
        // h1 is exactly P(h=1|v1) = 0.5 regardless of v1.
        assert!(g.d_b() == 0.5 || g.d_b() == -0.5);
    }

    fn brute_force_log_likelihood(a: &[f64], w: &[f64], b: f64, v: &[u8]) -> f64 {
        // Sum over every joint (v, h) state of exp(-E).
        let n = a.len();
        let energy = |vs: &[u8], h: f64| {
            let mut e = b * h;
            for i in 0..n {
                e += a[i] * vs[i] as f64 + h * w[i] * vs[i] as f64;
            }
            e
        };
        let mut z = 0.0;
        let mut num = 0.0;
        for mask in 0..1usize << n {
            let vs: Vec<u8> = (0..n).map(|i| (mask >> i & 1) as u8).collect();
            for h in [0.0, 1.0] {
                let p = f64::exp(energy(&vs, h));
                z += p;
                if vs == v {
                    num += p;
                }
            }
        }
        (num / z).ln()
    }

    #[test]
    fn exact_log_likelihood_examples() {
        let ll = exact_log_likelihood(&view(&[0., 0.], &[0., 0.], 0.0, &[1, 0])).unwrap();
        assert!(close(ll, -1.386_294_361_119_890_6, 1e-12));
        for b in [-3.0, 0.0, 2.5] {
            for v in [0, 1] {
                let ll = exact_log_likelihood(&view(&[0.], &[0.], b, &[v])).unwrap();
                assert!(close(ll, 0.5_f64.ln(), 1e-12));
            }
        }
        // Frozen from an independent high-precision enumeration of all 8 (v, h) states.
        let ll = exact_log_likelihood(&view(&[1., 0.], &[2., -1.], 0.5, &[1, 0])).unwrap();
        assert!(close(ll, -0.428_257_279_187_884_05, 1e-12));
    }

    #[test]
    fn exact_log_likelihood_size_limit() {
        let n = MAX_EXACT_CLAIMS + 1;
        let v = StatementRbmView::new(vec![0.0; n], vec![0.0; n], 0.0, vec![false; n]).unwrap();
        assert!(matches!(exact_log_likelihood(&v), Err(Error::TooManyClaims { .. })));
        assert!(matches!(exact_gradient(&v), Err(Error::TooManyClaims { .. })));
    }

    #[test]
    fn exact_gradient_symmetric_model() {
        let g = exact_gradient(&view(&[0., 0.], &[0., 0.], 0.0, &[1, 1])).unwrap();
        assert!(close(g.d_a()[0], 0.5, 1e-14) && close(g.d_a()[1], 0.5, 1e-14));
        assert!(close(g.d_b(), 0.0, 1e-14));
        assert!(g.d_b_src().iter().all(|&x| x == g.d_b()));
    }

    #[test]
    fn gradient_ascent_increases_likelihood() {
        let mut a = vec![0.4, -1.1, 0.3];
        let mut w = vec![-0.5, 0.9, 1.2];
        let mut b = -0.3;
        let claims = [1, 0, 1];
        let mut last = f64::NEG_INFINITY;
        for _ in 0..200 {
            let v = view(&a, &w, b, &claims);
            let ll = exact_log_likelihood(&v).unwrap();
            assert!(ll >= last - 1e-12, "{ll} < {last}");
            last = ll;
            let g = exact_gradient(&v).unwrap();
            for i in 0..3 {
                a[i] += 0.05 * g.d_a()[i];
                w[i] += 0.05 * g.d_w()[i];
            }
            b += 0.05 * g.d_b();
        }
    }

    fn cosine(x: &[f64], y: &[f64]) -> f64 {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        dot / (nx * ny)
    }

    #[test]
    fn averaged_cd_points_along_exact_gradient() {
        let v = view(&[0.5, -1.0, 0.2], &[1.5, 0.8, -0.6], -0.4, &[1, 0, 1]);
        let exact = exact_gradient(&v).unwrap().to_vec();
        let mut rng = seeded(11, stream::GIBBS);
        let draws = 100_000;
        let mut mean = vec![0.0; exact.len()];
        for _ in 0..draws {
            for (m, x) in mean.iter_mut().zip(contrastive_divergence(&v, 1, &mut rng).to_vec()) {
                *m += x / draws as f64;
            }
        }
        assert!(cosine(&mean, &exact) >= 0.8, "{}", cosine(&mean, &exact));
    }

    proptest! {
        #[test]
        fn exact_gradient_matches_finite_differences(
            n in 1usize..=6,
            raw in proptest::collection::vec(-2.0f64..2.0, 13),
            mask in 0usize..64,
        ) {
            let a = raw[..n].to_vec();
            let w = raw[6..6 + n].to_vec();
            let b = raw[12];
            let claims: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let v = StatementRbmView::new(a.clone(), w.clone(), b, claims.clone()).unwrap();
            let g = exact_gradient(&v).unwrap().to_vec();

            let h = 1e-5;
            let ll = |a: &[f64], w: &[f64], b: f64| {
                exact_log_likelihood(&StatementRbmView::new(a.to_vec(), w.to_vec(), b, claims.clone()).unwrap()).unwrap()
            };
            let mut fd = Vec::new();
            for i in 0..n {
                let (mut ap, mut am) = (a.clone(), a.clone());
                ap[i] += h;
                am[i] -= h;
                fd.push((ll(&ap, &w, b) - ll(&am, &w, b)) / (2.0 * h));
            }
            for i in 0..n {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[i] += h;
                wm[i] -= h;
                fd.push((ll(&a, &wp, b) - ll(&a, &wm, b)) / (2.0 * h));
            }
            fd.push((ll(&a, &w, b + h) - ll(&a, &w, b - h)) / (2.0 * h));
            for (x, y) in g.iter().zip(&fd) {
                prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(y.abs()).max(1.0), "{} vs {}", x, y);
            }
        }

        #[test]
        fn marginal_likelihood_matches_joint_enumeration(
            n in 1usize..=4,
            raw in proptest::collection::vec(-2.0f64..2.0, 9),
            mask in 0usize..16,
        ) {
            let a = raw[..n].to_vec();
            let w = raw[4..4 + n].to_vec();
            let v: Vec<u8> = (0..n).map(|i| (mask >> i & 1) as u8).collect();
            let ours = exact_log_likelihood(&view(&a, &w, raw[8], &v)).unwrap();
            let oracle = brute_force_log_likelihood(&a, &w, raw[8], &v);
            prop_assert!((ours - oracle).abs() <= 1e-12);
        }

        #[test]
        fn cd_estimate_respects_shared_hidden_gradient(seed in any::<u64>(), mask in 0usize..32) {
            let claims: Vec<bool> = (0..5).map(|i| mask >> i & 1 == 1).collect();
            let v = StatementRbmView::new(vec![0.1; 5], vec![0.7; 5], -0.2, claims).unwrap();
            let g = contrastive_divergence(&v, 1, &mut seeded(seed, 0));
            prop_assert!(g.d_b_src().iter().all(|&x| x == g.d_b0() && x == g.d_b()));
        }

        #[test]
        fn relabeling_hidden_unit_complements_plausibility(
            n in 0usize..8,
            raw in proptest::collection::vec(-3.0f64..3.0, 9),
            mask in 0usize..256,
        ) {
            let w = raw[..n].to_vec();
            let b = raw[8];
            let claims: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let p = plausibility(&StatementRbmView::new(vec![0.0; n], w.clone(), b, claims.clone()).unwrap());
            let neg: Vec<f64> = w.iter().map(|x| -x).collect();
            let q = plausibility(&StatementRbmView::new(vec![0.0; n], neg, -b, claims.clone()).unwrap());
            prop_assert!((q - (1.0 - p)).abs() <= 1e-14);

            // Flipping every claim with hidden bias -b - sum(w) also complements p.
            let flipped: Vec<bool> = claims.iter().map(|c| !c).collect();
            let shifted = -b - w.iter().sum::<f64>();
            let r = plausibility(&StatementRbmView::new(vec![0.0; n], w, shifted, flipped).unwrap());
            prop_assert!((r - (1.0 - p)).abs() <= 1e-12);
        }
    }

    fn tiny_dataset() -> Dataset {
        let c = |f, s: &str, v| ClaimRecord::new(StatementId(f), Some(SourceId::new(s)), v);
        let bundles = vec![
            StatementBundle::new(StatementId(0), vec![c(0, "x", true), c(0, "y", true)]).unwrap(),
            StatementBundle::new(StatementId(1), vec![c(1, "x", false), c(1, "y", false), c(1, "z", true)]).unwrap(),
        ];
        Dataset::new(bundles, vec![]).unwrap()
    }

    #[test]
    fn baseline_rejects_anonymous_claims() {
        let b = StatementBundle::new(StatementId(0), vec![ClaimRecord::new(StatementId(0), None, true)]).unwrap();
        let d = Dataset::new(vec![b], vec![]).unwrap();
        let err = train_baseline::<f64>(&d, &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::AnonymousClaim { .. }));
    }

    #[test]
    fn baseline_single_claim_stays_finite() {
        let b = StatementBundle::new(
            StatementId(0),
            vec![ClaimRecord::new(StatementId(0), Some(SourceId::new("only")), true)],
        )
        .unwrap();
        let d = Dataset::new(vec![b], vec![]).unwrap();
        let params = train_baseline::<f64>(&d, &TrainingConfig::default()).unwrap();
        assert!(params.is_finite());
        let p = baseline_estimates(&params, &d).unwrap()[0].plausibility;
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn baseline_zero_epochs_is_the_prior() {
        let d = tiny_dataset();
        let config = TrainingConfig {
            epochs: 0,
            ..TrainingConfig::default()
        };
        let params = train_baseline::<f64>(&d, &config).unwrap();
        for s in 0..3 {
            let (tpr, fpr) = source_reliability(&params, s).unwrap();
            assert!(close(tpr, 0.7, 1e-12) && close(fpr, 0.3, 1e-12));
        }
    }

    #[test]
    fn baseline_is_bit_reproducible() {
        let d = tiny_dataset();
        let config = TrainingConfig {
            epochs: 30,
            ..TrainingConfig::default()
        };
        let p1 = train_baseline::<f64>(&d, &config).unwrap();
        let p2 = train_baseline::<f64>(&d, &config).unwrap();
        assert_eq!(p1, p2);
        let p3 = train_baseline::<f64>(&d, &TrainingConfig { rng_seed: 99, ..config }).unwrap();
        assert_ne!(p1, p3);
    }

    #[test]
    fn baseline_respects_clamp() {
        let d = tiny_dataset();
        let config = TrainingConfig {
            epochs: 100,
            learning_rate: 5.0,
            param_clamp: 2.0,
            ..TrainingConfig::default()
        };
        let params = train_baseline::<f64>(&d, &config).unwrap();
        assert!(params.flat().all(|x| x.abs() <= 2.0));
    }

    #[test]
    fn works_in_single_precision() {
        let v = StatementRbmView::<f32>::new(vec![0.0, 0.0], vec![2.0, -1.0], 0.0, vec![true, true]).unwrap();
        assert!((plausibility(&v) - 0.731_058_6).abs() < 1e-6);
        let params = train_baseline::<f32>(&tiny_dataset(), &TrainingConfig { epochs: 5, ..Default::default() }).unwrap();
        assert!(params.is_finite());
    }
}
