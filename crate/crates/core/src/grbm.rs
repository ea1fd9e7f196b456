//! Generalized model: the per-claim RBM parameters come from the reliability
//! network, and CD error terms are backpropagated into it.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::logistic;
use crate::model::{Dataset, RbmParameters, StatementBundle, TrainingConfig, TruthEstimate};
use crate::network::{pretrain, DenseLayer, NetworkDocument, NetworkGrad, NetworkParams, NetworkSpec, PretrainReport, Theta};
use crate::rbm::{contrastive_divergence_with, plausibility, seeded, stream, CdOptions, StatementRbmView};
use crate::scalar::Real;

pub const GRBM_FORMAT_VERSION: u32 = 1;

/// Pretraining uses at most this many claims, taken at an even stride.
pub const MAX_PRETRAIN_SAMPLES: usize = 4096;

/// Reliability network plus global hidden bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GrbmModel<T> {
    pub net: NetworkParams<T>,
    pub b0: T,
    pub config: TrainingConfig,
}

impl<T: Real> GrbmModel<T> {
    pub fn new(net: NetworkParams<T>, b0: T, config: TrainingConfig) -> Self {
        GrbmModel { net, b0, config }
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.net.spec()
    }

    /// Linear network reproducing per-source parameters exactly when each
    /// claim's features are the one-hot indicator of its source.
    pub fn from_source_parameters(params: &RbmParameters<T>, config: TrainingConfig) -> Result<Self> {
        let n = params.n_sources();
        let mut layer = DenseLayer::zeros(3, n);
        for s in 0..n {
            layer.weights[s] = params.a[s];
            layer.weights[n + s] = params.w[s];
            layer.weights[2 * n + s] = params.b_src[s];
        }
        let net = NetworkParams::from_layers(NetworkSpec::linear(n), vec![layer])?;
        Ok(GrbmModel::new(net, params.b0, config))
    }

    pub fn is_finite(&self) -> bool {
        self.b0.is_finite() && self.net.is_finite()
    }

    pub fn to_document(&self) -> GrbmDocument<T> {
        GrbmDocument {
            format_version: GRBM_FORMAT_VERSION,
            network: self.net.to_document(),
            b0: self.b0,
            config: self.config.clone(),
        }
    }

    pub fn from_document(doc: GrbmDocument<T>) -> Result<Self> {
        if doc.format_version != GRBM_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        let net = NetworkParams::from_document(doc.network)?;
        let model = GrbmModel::new(net, doc.b0, doc.config);
        if !model.is_finite() {
            return Err(Error::ModelFormat("model contains non-finite parameters".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GrbmDocument<T> {
    pub format_version: u32,
    pub network: NetworkDocument<T>,
    pub b0: T,
    pub config: TrainingConfig,
}

fn claim_features<T: Real>(bundle: &StatementBundle, i: usize, dim: usize) -> Result<Vec<T>> {
    let x = &bundle.claims()[i].features;
    if x.len() != dim || dim == 0 {
        return Err(Error::MissingFeatures {
            statement: bundle.statement_id().to_string(),
            claim: i,
            expected: dim,
            actual: x.len(),
        });
    }
    Ok(x.iter().map(|&v| T::lit(v)).collect())
}

/// RBM of one statement with `(a_i, w_i, b_i) = g(x_i)` and hidden bias
/// `b0 + sum(b_i)`.
pub fn synthesize_view<T: Real>(model: &GrbmModel<T>, bundle: &StatementBundle) -> Result<StatementRbmView<T>> {
    let dim = model.net.input_dim();
    let n = bundle.len();
    let (mut a, mut w) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut b = model.b0;
    for i in 0..n {
        let theta = model.net.forward(&claim_features::<T>(bundle, i, dim)?)?;
        a.push(theta.a);
        w.push(theta.w);
        b += theta.b;
    }
    StatementRbmView::new(a, w, b, bundle.claim_values())
}

/// Plausibility of a statement from its claims and their features. Source
/// ids are never consulted.
pub fn plausibility_generalized<T: Real>(model: &GrbmModel<T>, bundle: &StatementBundle) -> Result<TruthEstimate> {
    let view = synthesize_view(model, bundle)?;
    Ok(TruthEstimate::new(bundle.statement_id(), plausibility(&view).as_f64()))
}

/// `(tpr, fpr)` of a claim with features `x`.
pub fn reliability_at<T: Real>(model: &GrbmModel<T>, x: &[T]) -> Result<(T, T)> {
    let theta = model.net.forward(x)?;
    Ok((logistic(theta.w + theta.a), logistic(theta.a)))
}

pub fn grbm_estimates<T: Real>(model: &GrbmModel<T>, dataset: &Dataset) -> Result<Vec<TruthEstimate>> {
    dataset
        .bundles()
        .par_iter()
        .map(|b| plausibility_generalized(model, b))
        .collect()
}

fn check_features(dataset: &Dataset, spec: &NetworkSpec) -> Result<()> {
    for bundle in dataset.bundles() {
        for i in 0..bundle.len() {
            claim_features::<f64>(bundle, i, spec.input_dim)?;
        }
    }
    if dataset.feature_dim() != spec.input_dim {
        return Err(Error::Dimension {
            expected: spec.input_dim,
            actual: dataset.feature_dim(),
        });
    }
    Ok(())
}

/// Trains with constant pretraining targets from `config`.
pub fn train_grbm<T: Real>(dataset: &Dataset, spec: &NetworkSpec, config: &TrainingConfig) -> Result<GrbmModel<T>> {
    let theta = config.pretrain_target()?.theta();
    train_grbm_with_targets(dataset, spec, config, |_| theta).map(|(m, _)| m)
}

/// Pretrains the network towards `target(x)` for every claim, then runs CD
/// with backpropagation, one network update per statement.
pub fn train_grbm_with_targets<T, F>(
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &TrainingConfig,
    target: F,
) -> Result<(GrbmModel<T>, PretrainReport)>
where
    T: Real,
    F: Fn(&[f64]) -> [f64; 3],
{
    config.validate()?;
    spec.validate()?;
    check_features(dataset, spec)?;

    let net = NetworkParams::<T>::init(spec.clone(), &mut seeded(config.rng_seed, stream::INIT))?;
    let claims: Vec<&[f64]> = dataset
        .bundles()
        .iter()
        .flat_map(|b| b.claims().iter().map(|c| c.features.as_slice()))
        .collect();
    let stride = claims.len().div_ceil(MAX_PRETRAIN_SAMPLES).max(1);
    let samples: Vec<(Vec<T>, Theta<T>)> = claims
        .iter()
        .step_by(stride)
        .map(|x| {
            let [a, w, b] = target(x);
            (
                x.iter().map(|&v| T::lit(v)).collect(),
                Theta::new(T::lit(a), T::lit(w), T::lit(b)),
            )
        })
        .collect();
    let (net, report) = pretrain(
        net,
        &samples,
        config.pretrain_epochs,
        T::lit(config.pretrain_learning_rate),
        T::lit(config.weight_decay),
    )?;
    log::info!(
        "pretraining: mse {:.3e} -> {:.3e}, mean |error| {:.3e}",
        report.initial_mse,
        report.final_mse,
        report.mean_abs_error
    );

    let mut model = GrbmModel::new(net, T::zero(), config.clone());
    let lr = T::lit(config.learning_rate);
    let decay = T::lit(config.learning_rate * config.weight_decay);
    let clip = T::lit(config.grad_clip);
    let cd = CdOptions::from_config(config);
    let dim = spec.input_dim;
    let mut order: Vec<usize> = (0..dataset.bundles().len()).collect();
    let mut shuffle_rng = seeded(config.rng_seed, stream::SHUFFLE);
    let mut gibbs_rng = seeded(config.rng_seed, stream::GIBBS);
    let n_params = (model.net.n_params() + 1) as f64;

    for epoch in 0..config.epochs {
        let before = model.net.flat();
        let b0_before = model.b0;
        order.shuffle(&mut shuffle_rng);
        for &fi in &order {
            let bundle = &dataset.bundles()[fi];
            let view = synthesize_view(&model, bundle)?;
            let grad = contrastive_divergence_with(&view, cd, &mut gibbs_rng);
            let mut dpsi = NetworkGrad::zeros_like(&model.net);
            for i in 0..bundle.len() {
                let x = claim_features::<T>(bundle, i, dim)?;
                model.net.accumulate_backward(&x, grad.claim(i), &mut dpsi)?;
            }
            dpsi.clip_norm(clip);
            model.net.decay_weights(decay);
            model.net.apply(&dpsi, lr);
            model.b0 += lr * grad.d_b0();
            if !model.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    statement: bundle.statement_id().to_string(),
                    detail: format!("b0 = {}, |dpsi| = {}", model.b0, dpsi.norm()),
                });
            }
        }
        let change = before
            .iter()
            .zip(model.net.flat())
            .map(|(&x, y)| (y - x).abs().as_f64())
            .sum::<f64>()
            + (model.b0 - b0_before).abs().as_f64();
        let change = change / n_params;
        log::debug!("grbm epoch {epoch}: mean |delta| = {change:.3e}, b0 = {}", model.b0);
        if change < config.convergence_tol {
            log::info!("grbm converged after {} epochs", epoch + 1);
            break;
        }
    }
    Ok((model, report))
}
