//! Negative sampling, the logistic loss, the optimization loop and
//! checkpoints.
//!
//! Each step minimizes `loss_batch + λ · penalty_batch` over one shuffled
//! batch of training triples. Only rows touched by the batch are updated.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate_detailed, EvalOptions, MetricsRecord, RankMode};
use crate::graph_data::{build_filter_index, Dataset, FilterIndex, Split, Triple};
use crate::models::{score_grad, score_unchecked, ModelGradients, ModelKind, ModelParams, Table, TableId};
use crate::regularizers::{penalty_batch_into, RegularizerSpec};

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointExpectation};

/// Adagrad denominator offset.
pub const ADAGRAD_EPS: f64 = 1e-10;
/// Training triples ranked for each train-split curve point.
pub const TRAIN_EVAL_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adagrad,
    Sgd,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Adagrad => "adagrad",
            Optimizer::Sgd => "sgd",
        }
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adagrad" => Ok(Optimizer::Adagrad),
            "sgd" => Ok(Optimizer::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sign convention of the logistic loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossOrientation {
    /// `softplus(-f)` for positives, `softplus(f)` for negatives.
    #[default]
    Standard,
    /// `softplus(f)` for positives, `softplus(-f)` for negatives, exactly as
    /// the objective is sometimes printed. Only useful for auditing.
    Literal,
}

impl LossOrientation {
    pub fn as_str(self) -> &'static str {
        match self {
            LossOrientation::Standard => "standard",
            LossOrientation::Literal => "literal",
        }
    }

    fn positive_sign(self) -> f64 {
        match self {
            LossOrientation::Standard => -1.0,
            LossOrientation::Literal => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub negatives: usize,
    pub seed: u64,
    pub regularizer: RegularizerSpec,
    pub eval_every: usize,
    pub patience: usize,
    pub reciprocal: bool,
    pub rank_mode: RankMode,
    pub loss_orientation: LossOrientation,
    /// Half-width of the uniform initialization; `None` means `0.1/√d`.
    pub init_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Cp,
            dim: 100,
            epochs: 100,
            batch_size: 512,
            learning_rate: 0.1,
            optimizer: Optimizer::Adagrad,
            negatives: 10,
            seed: 0,
            regularizer: RegularizerSpec::none(),
            eval_every: 5,
            patience: 10,
            reciprocal: false,
            rank_mode: RankMode::Filtered,
            loss_orientation: LossOrientation::Standard,
            init_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if let Some(s) = self.init_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("init_scale must be > 0, got {s}")));
            }
        }
        self.regularizer.validate()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveSplit {
    Train,
    Valid,
}

impl CurveSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveSplit::Train => "train",
            CurveSplit::Valid => "valid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub split: CurveSplit,
    pub loss: f64,
    pub mrr: f64,
    pub mr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl CurvePoint {
    fn new(epoch: usize, split: CurveSplit, loss: f64, m: &MetricsRecord) -> Self {
        CurvePoint {
            epoch,
            split,
            loss,
            mrr: m.mrr,
            mr: m.mr,
            hits1: m.hits1,
            hits3: m.hits3,
            hits10: m.hits10,
        }
    }
}

/// Parameters plus everything needed to resume optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    /// Running squared-gradient sums, shaped like `params.tables()`.
    pub accumulators: Option<Vec<Table>>,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub best_valid_mrr: Option<f64>,
    pub config_digest: String,
}

impl TrainState {
    /// Seeds the generator and draws the initial parameters from it.
    pub fn initialize(config: &TrainConfig, num_entities: usize, num_relations: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let half_width = config
            .init_scale
            .unwrap_or_else(|| crate::models::init_half_width(config.dim));
        let params = ModelParams::random_scaled(
            config.model,
            num_entities,
            num_relations,
            config.dim,
            half_width,
            &mut rng,
        );
        let accumulators = (config.optimizer == Optimizer::Adagrad).then(|| {
            params
                .tables()
                .iter()
                .map(|(_, t)| Table::zeros(t.rows(), t.width()))
                .collect()
        });
        TrainState {
            params,
            accumulators,
            epoch: 0,
            rng,
            best_valid_mrr: None,
            config_digest: config.digest(),
        }
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `k` corruptions of `triple`, each replacing the head or the tail (fair
/// coin) with a uniformly drawn entity. Accidental positives are kept.
pub fn sample_negatives<R: Rng + ?Sized>(
    triple: Triple,
    num_entities: usize,
    k: usize,
    rng: &mut R,
) -> Vec<Triple> {
    (0..k)
        .map(|_| corrupt(triple, num_entities, rng))
        .collect()
}

#[inline]
fn corrupt<R: Rng + ?Sized>(triple: Triple, num_entities: usize, rng: &mut R) -> Triple {
    let replace_head: bool = rng.gen();
    let e = rng.gen_range(0..num_entities) as u32;
    if replace_head {
        Triple::new(e, triple.relation, triple.tail)
    } else {
        Triple::new(triple.head, triple.relation, e)
    }
}

/// Summed logistic loss over `positives` and `k` sampled negatives per
/// positive. Adds `scale · ∇loss` into `grads`.
pub fn loss_batch_into<R: Rng + ?Sized>(
    params: &ModelParams,
    positives: &[Triple],
    k: usize,
    rng: &mut R,
    orientation: LossOrientation,
    grads: &mut ModelGradients,
    scale: f64,
) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let pos_sign = orientation.positive_sign();
    let n = params.num_entities();
    let mut loss = 0.0;
    let mut term = |triple: Triple, sign: f64, grads: &mut ModelGradients| -> Result<()> {
        let f = score_unchecked(params, triple);
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("score of {triple:?} is {f}")));
        }
        loss += softplus(sign * f);
        let dldf = sign * sigmoid(sign * f);
        let g = score_grad(params, triple)?;
        grads.add_triple(&g, scale * dldf);
        Ok(())
    };
    for &positive in positives {
        params.check(positive)?;
        term(positive, pos_sign, grads)?;
        for _ in 0..k {
            let negative = corrupt(positive, n, rng);
            term(negative, -pos_sign, grads)?;
        }
    }
    Ok(loss)
}

pub fn loss_batch<R: Rng + ?Sized>(
    params: &ModelParams,
    positives: &[Triple],
    k: usize,
    rng: &mut R,
    orientation: LossOrientation,
) -> Result<(f64, ModelGradients)> {
    let mut grads = ModelGradients::for_params(params);
    let loss = loss_batch_into(params, positives, k, rng, orientation, &mut grads, 1.0)?;
    Ok((loss, grads))
}

fn table_index(params: &ModelParams, id: TableId) -> usize {
    params
        .tables()
        .iter()
        .position(|(t, _)| *t == id)
        .expect("table exists")
}

fn apply_update(
    state: &mut TrainState,
    grads: &ModelGradients,
    lr: f64,
) -> Result<()> {
    for (id, rows) in grads.tables() {
        let slot = table_index(&state.params, id);
        for &row in rows.touched() {
            let g = rows.row(row);
            match &mut state.accumulators {
                Some(acc) => {
                    let acc_row = acc[slot].row_mut(row as usize);
                    let param_row = state.params.table_mut(id).row_mut(row as usize);
                    for ((x, a), gv) in param_row.iter_mut().zip(acc_row.iter_mut()).zip(g) {
                        *a += gv * gv;
                        *x -= lr * gv / (*a + ADAGRAD_EPS).sqrt();
                    }
                }
                None => {
                    let param_row = state.params.table_mut(id).row_mut(row as usize);
                    for (x, gv) in param_row.iter_mut().zip(g) {
                        *x -= lr * gv;
                    }
                }
            }
            if state
                .params
                .table(id)
                .row(row as usize)
                .iter()
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFiniteParameter {
                    table: id.name(),
                    epoch: state.epoch + 1,
                });
            }
        }
    }
    Ok(())
}

/// One pass over `triples`: shuffle with the state's generator, then step on
/// each batch. With `update = false` nothing but the generator changes.
fn run_pass(
    state: &mut TrainState,
    triples: &[Triple],
    config: &TrainConfig,
    grads: &mut ModelGradients,
    update: bool,
) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut order = triples.to_vec();
    order.shuffle(&mut state.rng);
    let spec = config.regularizer;
    let mut data_loss = 0.0;
    let mut penalty = 0.0;
    for batch in order.chunks(config.batch_size) {
        grads.clear();
        data_loss += loss_batch_into(
            &state.params,
            batch,
            config.negatives,
            &mut state.rng,
            config.loss_orientation,
            grads,
            1.0,
        )?;
        if spec.is_active() {
            let mean = penalty_batch_into(&spec, &state.params, batch, grads, spec.lambda)?;
            penalty += mean * batch.len() as f64;
        }
        if update {
            apply_update(state, grads, config.learning_rate)?;
        }
    }
    let n = triples.len() as f64;
    Ok(data_loss / n + spec.lambda * penalty / n)
}

/// One optimization epoch; returns the mean per-triple objective.
pub fn train_epoch(state: &mut TrainState, train: &[Triple], config: &TrainConfig) -> Result<f64> {
    let mut grads = ModelGradients::for_params(&state.params);
    train_epoch_with(state, train, config, &mut grads)
}

fn train_epoch_with(
    state: &mut TrainState,
    train: &[Triple],
    config: &TrainConfig,
    grads: &mut ModelGradients,
) -> Result<f64> {
    let loss = run_pass(state, train, config, grads, true)?;
    state.epoch += 1;
    Ok(loss)
}

/// Mean objective of one epoch from the current state without updating it;
/// uses a clone of the state's generator.
pub fn epoch_loss(state: &TrainState, triples: &[Triple], config: &TrainConfig) -> Result<f64> {
    let mut probe = state.clone();
    let mut grads = ModelGradients::for_params(&probe.params);
    run_pass(&mut probe, triples, config, &mut grads, false)
}

/// Everything about a dataset that training and evaluation need.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Triples the optimizer iterates over (augmented when reciprocal).
    pub train: Vec<Triple>,
    /// Original, unaugmented splits used for ranking.
    pub eval: crate::graph_data::DatasetSplits,
    pub filter: FilterIndex,
    pub num_entities: usize,
    pub num_relations: usize,
    pub options: EvalOptions,
}

impl PreparedData {
    pub fn new(dataset: &Dataset, reciprocal: bool, mode: RankMode) -> Result<Self> {
        if reciprocal {
            let aug = dataset.with_reciprocals()?;
            Ok(PreparedData {
                train: aug.splits.train.clone(),
                eval: dataset.splits.clone(),
                filter: build_filter_index(&aug.splits),
                num_entities: aug.vocab.num_entities(),
                num_relations: aug.vocab.num_relations(),
                options: EvalOptions {
                    mode,
                    reciprocal_base: Some(dataset.vocab.num_relations() as u32),
                },
            })
        } else {
            Ok(PreparedData {
                train: dataset.splits.train.clone(),
                eval: dataset.splits.clone(),
                filter: build_filter_index(&dataset.splits),
                num_entities: dataset.vocab.num_entities(),
                num_relations: dataset.vocab.num_relations(),
                options: EvalOptions {
                    mode,
                    reciprocal_base: None,
                },
            })
        }
    }

    pub fn evaluate(&self, params: &ModelParams, split: Split) -> Result<crate::evaluation::EvaluationReport> {
        evaluate_detailed(params, self.eval.get(split), &self.filter, self.options)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Snapshot with the best validation MRR (the initial state if no
    /// validation ran).
    pub best: TrainState,
    pub curves: Vec<CurvePoint>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

fn seeded(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

const SUBSAMPLE_SALT: u64 = 0x7472_6169_6e5f_7376;
const VALID_LOSS_SALT: u64 = 0x7661_6c69_645f_6c73;

/// Fixed training subsample used for train-split curve points.
pub fn train_subsample(train: &[Triple], seed: u64) -> Vec<Triple> {
    if train.len() <= TRAIN_EVAL_CAP {
        return train.to_vec();
    }
    let mut rng = seeded(seed, SUBSAMPLE_SALT);
    let mut picked = rand::seq::index::sample(&mut rng, train.len(), TRAIN_EVAL_CAP).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| train[i]).collect()
}

/// Trains with periodic validation, keeping the best-validation snapshot
/// and stopping after `patience` validations without improvement.
pub fn fit(config: &TrainConfig, dataset: &Dataset) -> Result<FitOutcome> {
    let data = PreparedData::new(dataset, config.reciprocal, config.rank_mode)?;
    fit_prepared(config, &data)
}

pub fn fit_prepared(config: &TrainConfig, data: &PreparedData) -> Result<FitOutcome> {
    config.validate()?;
    let mut state = TrainState::initialize(config, data.num_entities, data.num_relations);
    let mut best = state.clone();
    let mut curves = Vec::new();
    if config.epochs == 0 {
        return Ok(FitOutcome {
            best,
            curves,
            epochs_run: 0,
            stopped_early: false,
        });
    }

    let subsample = train_subsample(&data.eval.train, config.seed);
    let mut grads = ModelGradients::for_params(&state.params);
    let mut best_mrr = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        let train_loss = train_epoch_with(&mut state, &data.train, config, &mut grads)?;
        if epoch % config.eval_every != 0 && epoch != config.epochs {
            continue;
        }
        let train_metrics = evaluate_detailed(&state.params, &subsample, &data.filter, data.options)?.both;
        let valid_metrics = data.evaluate(&state.params, Split::Valid)?.both;
        let valid_loss = {
            let mut probe = TrainState {
                rng: seeded(config.seed, VALID_LOSS_SALT),
                ..state.clone()
            };
            run_pass(&mut probe, &data.eval.valid, config, &mut grads, false)?
        };
        curves.push(CurvePoint::new(epoch, CurveSplit::Train, train_loss, &train_metrics));
        curves.push(CurvePoint::new(epoch, CurveSplit::Valid, valid_loss, &valid_metrics));

        if valid_metrics.mrr > best_mrr {
            best_mrr = valid_metrics.mrr;
            state.best_valid_mrr = Some(best_mrr);
            best = state.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = epoch < config.epochs;
                break;
            }
        }
    }
    Ok(FitOutcome {
        best,
        curves,
        epochs_run: state.epoch,
        stopped_early,
    })
}
