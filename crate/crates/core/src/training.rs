//! Mini-batch Adam training for every variant: auxiliary pre-training, the
//! joint `Σ loss_aux + α Σ loss_main` objective, single-task training,
//! seeded ensembles, and JSON checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::datasets::{Dataset, ScInstance, TargetedInstance};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Estimate, EvaluationReport};
use crate::models::{
    aux_backward, aux_forward, main_backward, main_forward, tdft_init, tdgru_backward,
    tdgru_forward, AuxModel, Head, ModelBundle, MttdscModel, Predictor, TargetSpan, TdgruModel,
    Variant,
};
use crate::numerics::{AdamConfig, Label, Parameter, Parameterized, ProbabilityTriple, Tensor};
use crate::recurrent::{Dropout, GruParameters, DEFAULT_HIDDEN};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Hyperparameters; defaults are the published settings where one exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub recurrent_dropout: f64,
    pub head_dropout: f64,
    /// Weight of the main-task loss in the joint objective.
    pub alpha: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub ensemble_size: usize,
    pub seed: u64,
    /// Auxiliary batches per main batch; `None` derives it from dataset sizes.
    pub aux_batch_ratio: Option<usize>,
    /// Upper bound for the derived ratio.
    pub aux_ratio_cap: usize,
    /// Gradient workers per batch; 1 is bitwise reproducible across machines.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: DEFAULT_HIDDEN,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch: 64,
            recurrent_dropout: 0.2,
            head_dropout: 0.2,
            alpha: 1.0,
            epochs: 10,
            pretrain_epochs: 1,
            ensemble_size: 5,
            seed: 0,
            aux_batch_ratio: None,
            aux_ratio_cap: 8,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("recurrent_dropout", self.recurrent_dropout),
            ("head_dropout", self.head_dropout),
        ];
        for (name, v) in rates {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")));
            }
        }
        if self.hidden == 0
            || self.batch == 0
            || self.ensemble_size == 0
            || self.workers == 0
            || self.aux_ratio_cap == 0
        {
            return Err(Error::Config(
                "hidden, batch, ensemble_size, workers and aux_ratio_cap must be positive".into(),
            ));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0)
            || self.adam_eps.is_nan()
            || self.adam_eps <= 0.0
        {
            return Err(Error::Config(
                "alpha must be finite and non-negative, adam_eps positive".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// prepared data
// ---------------------------------------------------------------------------

/// Embedded passage ready for training.
#[derive(Clone, Debug)]
pub struct PreparedPassage {
    pub tokens: Tensor,
    pub label: Label,
}

/// Embedded targeted instance ready for training.
#[derive(Clone, Debug)]
pub struct PreparedTargeted {
    pub tokens: Tensor,
    pub target: TargetSpan,
    pub label: Label,
}

pub fn prepare_passages(
    items: &[ScInstance],
    table: &EmbeddingTable,
) -> Result<Vec<PreparedPassage>> {
    items
        .iter()
        .map(|p| {
            p.validate()?;
            Ok(PreparedPassage {
                tokens: table.embed_sequence(&p.tokens),
                label: p.label,
            })
        })
        .collect()
}

pub fn prepare_targeted(
    items: &[TargetedInstance],
    table: &EmbeddingTable,
) -> Result<Vec<PreparedTargeted>> {
    items
        .iter()
        .map(|t| {
            t.validate()?;
            Ok(PreparedTargeted {
                tokens: table.embed_sequence(&t.tokens),
                target: t.span(),
                label: t.label,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// history
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sum of auxiliary cross-entropies over the epoch's auxiliary batches.
    pub aux_loss: f64,
    /// Sum of main cross-entropies over the epoch's main batches (unweighted).
    pub main_loss: f64,
    pub aux_instances: usize,
    pub main_instances: usize,
    /// `aux_loss + alpha * main_loss`.
    pub objective: f64,
    pub validation: Option<EvaluationReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub alpha: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (by validation macro-F1), if validation was used.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    fn push(
        &mut self,
        aux_loss: f64,
        main_loss: f64,
        aux_n: usize,
        main_n: usize,
    ) -> &mut EpochRecord {
        let epoch = self.epochs.len() + 1;
        self.epochs.push(EpochRecord {
            epoch,
            aux_loss,
            main_loss,
            aux_instances: aux_n,
            main_instances: main_n,
            objective: aux_loss + self.alpha * main_loss,
            validation: None,
        });
        self.epochs.last_mut().expect("just pushed")
    }
}

// ---------------------------------------------------------------------------
// batch machinery
// ---------------------------------------------------------------------------

fn instance_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn collect_grads<M: Parameterized>(m: &M) -> Vec<Tensor> {
    let mut out = Vec::new();
    m.visit_params(&mut |_, p| out.push(p.gradient.clone()));
    out
}

fn add_grads<M: Parameterized>(m: &mut M, grads: &[Tensor]) {
    let mut k = 0;
    m.visit_params_mut(&mut |_, p| {
        for (g, d) in p.gradient.values_mut().iter_mut().zip(grads[k].values()) {
            *g += d;
        }
        k += 1;
    });
}

/// Runs `f` for each `(index, dropout seed)` and returns the summed loss.
/// With several workers, gradients are computed on per-worker clones and
/// merged in chunk order.
fn accumulate<M, F>(model: &mut M, items: &[(usize, u64)], workers: usize, f: F) -> Result<f64>
where
    M: Parameterized + Clone + Send + Sync,
    F: Fn(&mut M, usize, &mut ChaCha8Rng) -> Result<f64> + Sync,
{
    if workers <= 1 || items.len() < 2 {
        let mut total = 0.0;
        for &(i, seed) in items {
            total += f(model, i, &mut instance_rng(seed))?;
        }
        return Ok(total);
    }
    let chunk = items.len().div_ceil(workers);
    let base: &M = model;
    let parts: Vec<Result<(Vec<Tensor>, f64)>> = items
        .par_chunks(chunk)
        .map(|part| {
            let mut local = base.clone();
            local.zero_grads();
            let mut total = 0.0;
            for &(i, seed) in part {
                total += f(&mut local, i, &mut instance_rng(seed))?;
            }
            Ok((collect_grads(&local), total))
        })
        .collect();
    let mut total = 0.0;
    for part in parts {
        let (grads, loss) = part?;
        add_grads(model, &grads);
        total += loss;
    }
    Ok(total)
}

fn step_all<'a>(
    params: impl IntoIterator<Item = (String, &'a mut Parameter)>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params {
        p.adam_step(cfg)
            .map_err(|e| Error::Numeric(format!("parameter `{name}`: {e}")))?;
    }
    Ok(())
}

fn step_model<M: Parameterized + ?Sized>(m: &mut M, cfg: &AdamConfig) -> Result<()> {
    let mut failure = None;
    m.visit_params_mut(&mut |name, p| {
        if failure.is_none() {
            if let Err(e) = p.adam_step(cfg) {
                failure = Some(Error::Numeric(format!("parameter `{name}`: {e}")));
            }
        }
    });
    failure.map_or(Ok(()), Err)
}

fn gru_named<'a>(prefix: &str, g: &'a mut GruParameters) -> Vec<(String, &'a mut Parameter)> {
    g.tensors_mut()
        .into_iter()
        .map(|(n, p)| (format!("{prefix}.{n}"), p))
        .collect()
}

fn head_named<'a>(prefix: &str, h: &'a mut Head) -> Vec<(String, &'a mut Parameter)> {
    vec![
        (format!("{prefix}.W"), &mut h.w),
        (format!("{prefix}.b"), &mut h.b),
    ]
}

fn check_loss(loss: f64, what: &str) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss} in {what}")));
    }
    Ok(())
}

fn seeded_batch(rng: &mut ChaCha8Rng, indices: &[usize]) -> Vec<(usize, u64)> {
    indices.iter().map(|&i| (i, rng.next_u64())).collect()
}

/// One Adam step of the auxiliary objective over `batch` (indices into `data`).
/// Returns the summed cross-entropy.
pub fn aux_batch_step(
    aux: &mut AuxModel,
    data: &[PreparedPassage],
    batch: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / batch.len() as f64;
    let items = seeded_batch(rng, batch);
    let loss = accumulate(aux, &items, cfg.workers, |m, i, r| {
        let mut d = Dropout {
            rng: r,
            recurrent: cfg.recurrent_dropout,
            head: cfg.head_dropout,
        };
        let (_, trace) = aux_forward(m, &data[i].tokens, Some(&mut d))?;
        aux_backward(m, &trace, data[i].label, scale)?;
        Ok(trace.head.loss(data[i].label))
    })?;
    check_loss(loss, "auxiliary batch")?;
    step_model(aux, &cfg.adam())?;
    Ok(loss)
}

/// One Adam step of `α · loss_main` through the main head, the main GRUs and
/// the auxiliary GRUs. The auxiliary head is not part of this graph.
pub fn main_batch_step(
    model: &mut MttdscModel,
    data: &[PreparedTargeted],
    batch: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let scale = cfg.alpha / batch.len() as f64;
    let items = seeded_batch(rng, batch);
    let loss = accumulate(model, &items, cfg.workers, |m, i, r| {
        let mut d = Dropout {
            rng: r,
            recurrent: cfg.recurrent_dropout,
            head: cfg.head_dropout,
        };
        let (_, trace) = main_forward(m, &data[i].tokens, data[i].target, Some(&mut d))?;
        main_backward(m, &trace, data[i].label, scale)?;
        Ok(trace.head.loss(data[i].label))
    })?;
    check_loss(loss, "main batch")?;
    let mut params = gru_named("aux.lr", &mut model.aux.gru_lr);
    params.extend(gru_named("aux.rl", &mut model.aux.gru_rl));
    if let Some((lr, rl)) = model.main_grus.as_mut() {
        params.extend(gru_named("main.lr", lr));
        params.extend(gru_named("main.rl", rl));
    }
    params.extend(head_named("main.head", &mut model.head));
    step_all(params, &cfg.adam())?;
    Ok(loss)
}

/// One Adam step of the single-task target-dependent objective.
pub fn tdgru_batch_step(
    model: &mut TdgruModel,
    data: &[PreparedTargeted],
    batch: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / batch.len() as f64;
    let items = seeded_batch(rng, batch);
    let loss = accumulate(model, &items, cfg.workers, |m, i, r| {
        let mut d = Dropout {
            rng: r,
            recurrent: cfg.recurrent_dropout,
            head: cfg.head_dropout,
        };
        let (_, trace) = tdgru_forward(m, &data[i].tokens, data[i].target, Some(&mut d))?;
        tdgru_backward(m, &trace, data[i].label, scale)?;
        Ok(trace.head.loss(data[i].label))
    })?;
    check_loss(loss, "target-dependent batch")?;
    step_model(model, &cfg.adam())?;
    Ok(loss)
}

fn shuffled_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Endless reshuffled stream of auxiliary batches.
struct AuxStream {
    n: usize,
    batch: usize,
    order: Vec<usize>,
    pos: usize,
}

impl AuxStream {
    fn new(n: usize, batch: usize) -> Self {
        AuxStream {
            n,
            batch,
            order: Vec::new(),
            pos: 0,
        }
    }

    fn next_batch(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let b = self.order[self.pos..end].to_vec();
        self.pos = end;
        b
    }
}

// ---------------------------------------------------------------------------
// training procedures
// ---------------------------------------------------------------------------

/// Auxiliary-only passes over `aux_data`, returning the summed loss of each epoch.
pub fn train_aux_epochs(
    aux: &mut AuxModel,
    aux_data: &[PreparedPassage],
    epochs: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if aux_data.is_empty() {
        return Err(Error::Input("auxiliary training data is empty".into()));
    }
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut total = 0.0;
        for b in shuffled_batches(aux_data.len(), cfg.batch, rng) {
            total += aux_batch_step(aux, aux_data, &b, cfg, rng)?;
        }
        losses.push(total);
    }
    Ok(losses)
}

/// Auxiliary-only warm-up for `cfg.pretrain_epochs` epochs. Main-only parameters are untouched.
pub fn pretrain_aux(
    model: &mut MttdscModel,
    aux_data: &[PreparedPassage],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let losses = train_aux_epochs(&mut model.aux, aux_data, cfg.pretrain_epochs, cfg, rng)?;
    model.aux_pretrained = true;
    Ok(losses)
}

/// Derived number of auxiliary batches per main batch.
pub fn aux_ratio(cfg: &TrainConfig, n_aux: usize, n_main: usize) -> usize {
    cfg.aux_batch_ratio.unwrap_or_else(|| {
        let aux_batches = n_aux.div_ceil(cfg.batch);
        let main_batches = n_main.div_ceil(cfg.batch).max(1);
        aux_batches
            .div_ceil(main_batches)
            .clamp(1, cfg.aux_ratio_cap)
    })
}

fn validate_and_keep_best<M, P>(
    model: &mut M,
    as_predictor: P,
    history: &mut TrainHistory,
    validation: Option<&Validation<'_>>,
    best: &mut Option<(f64, usize, M)>,
) -> Result<()>
where
    M: Clone,
    P: Fn(&M) -> ModelBundle,
{
    let Some(v) = validation else { return Ok(()) };
    let report = evaluate(&as_predictor(model), v.data, v.table, Estimate::Discrete)?;
    let epoch = history.epochs.len();
    let f1 = report.macro_f1;
    history
        .epochs
        .last_mut()
        .expect("epoch recorded")
        .validation = Some(report);
    if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
        *best = Some((f1, epoch, model.clone()));
    }
    Ok(())
}

/// Held-out data for best-epoch selection.
pub struct Validation<'a> {
    pub data: &'a Dataset,
    pub table: &'a EmbeddingTable,
}

/// Joint training of the auxiliary and main objectives. Each epoch walks the
/// shuffled main batches; before each main batch, `aux_ratio` auxiliary
/// batches are drawn from an endless reshuffled auxiliary stream.
pub fn joint_train(
    model: &mut MttdscModel,
    aux_data: &[PreparedPassage],
    main_data: &[PreparedTargeted],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    validation: Option<&Validation<'_>>,
) -> Result<TrainHistory> {
    if aux_data.is_empty() || main_data.is_empty() {
        return Err(Error::Input(
            "joint training needs auxiliary and main data".into(),
        ));
    }
    if !model.aux_pretrained {
        return Err(Error::Usage(
            "joint training requires auxiliary pre-training first".into(),
        ));
    }
    let ratio = aux_ratio(cfg, aux_data.len(), main_data.len());
    let mut stream = AuxStream::new(aux_data.len(), cfg.batch);
    let mut history = TrainHistory {
        alpha: cfg.alpha,
        ..Default::default()
    };
    let mut best = None;
    for epoch in 1..=cfg.epochs {
        let (mut aux_loss, mut main_loss, mut aux_n, mut main_n) = (0.0, 0.0, 0, 0);
        for b in shuffled_batches(main_data.len(), cfg.batch, rng) {
            for _ in 0..ratio {
                let ab = stream.next_batch(rng);
                aux_n += ab.len();
                aux_loss += aux_batch_step(&mut model.aux, aux_data, &ab, cfg, rng)?;
            }
            main_n += b.len();
            main_loss += main_batch_step(model, main_data, &b, cfg, rng)?;
        }
        history.push(aux_loss, main_loss, aux_n, main_n);
        log::info!("epoch {epoch}: aux {aux_loss:.4}, main {main_loss:.4}");
        validate_and_keep_best(
            model,
            |m| ModelBundle::Mttdsc(m.clone()),
            &mut history,
            validation,
            &mut best,
        )?;
    }
    if let Some((_, epoch, m)) = best {
        *model = m;
        history.best_epoch = Some(epoch);
    }
    Ok(history)
}

/// Single-task training of a target-dependent model (TDGRU or TDFT).
pub fn train_single(
    model: &mut TdgruModel,
    main_data: &[PreparedTargeted],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    validation: Option<&Validation<'_>>,
    fine_tuned: bool,
) -> Result<TrainHistory> {
    if main_data.is_empty() {
        return Err(Error::Input("main training data is empty".into()));
    }
    let mut history = TrainHistory {
        alpha: 1.0,
        ..Default::default()
    };
    let mut best = None;
    for _ in 0..cfg.epochs {
        let (mut loss, mut n) = (0.0, 0);
        for b in shuffled_batches(main_data.len(), cfg.batch, rng) {
            n += b.len();
            loss += tdgru_batch_step(model, main_data, &b, cfg, rng)?;
        }
        history.push(0.0, loss, 0, n);
        let wrap = |m: &TdgruModel| ModelBundle::Tdgru {
            model: m.clone(),
            fine_tuned,
        };
        validate_and_keep_best(model, wrap, &mut history, validation, &mut best)?;
    }
    if let Some((_, epoch, m)) = best {
        *model = m;
        history.best_epoch = Some(epoch);
    }
    Ok(history)
}

/// Training inputs for [`train_variant`].
pub struct TrainData<'a> {
    pub table: &'a EmbeddingTable,
    pub aux: Option<&'a [ScInstance]>,
    pub main: Option<&'a [TargetedInstance]>,
    pub validation: Option<&'a Dataset>,
}

/// Seed-derived generators: stream 0 initializes weights, stream 1 drives training.
pub fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let init = ChaCha8Rng::seed_from_u64(seed);
    let mut train = ChaCha8Rng::seed_from_u64(seed);
    train.set_stream(1);
    (init, train)
}

/// Fresh model for `variant` from `cfg.seed`. TDFT starts as its auxiliary model.
pub fn init_model(variant: Variant, input_dim: usize, cfg: &TrainConfig) -> ModelBundle {
    let (mut init, _) = rngs(cfg.seed);
    ModelBundle::init(variant, input_dim, cfg.hidden, &mut init)
}

/// The full pipeline for one variant and one seed.
///
/// * `aux`: auxiliary epochs.
/// * `tdgru`: single-task epochs.
/// * `tdft`: auxiliary epochs, then single-task fine-tuning from the auxiliary GRUs with a new head.
/// * `mttdsc` / `naive-mtl`: auxiliary pre-training, then joint epochs.
pub fn train_variant(
    variant: Variant,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let (mut init, mut rng) = rngs(cfg.seed);
    let e = data.table.dim();
    fn required<'b, T>(x: Option<&'b [T]>, variant: Variant, what: &str) -> Result<&'b [T]> {
        match x {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::Input(format!(
                "{variant} training needs {what} data"
            ))),
        }
    }
    let aux_data = if variant.uses_aux_data() {
        prepare_passages(required(data.aux, variant, "auxiliary")?, data.table)?
    } else {
        Vec::new()
    };
    let main_data = if variant.is_targeted() {
        prepare_targeted(required(data.main, variant, "main")?, data.table)?
    } else {
        Vec::new()
    };
    let validation = data.validation.map(|d| Validation {
        data: d,
        table: data.table,
    });
    let (model, history) = match variant {
        Variant::Aux => {
            let mut m = AuxModel::init(e, cfg.hidden, &mut init);
            let losses = train_aux_epochs(&mut m, &aux_data, cfg.epochs, cfg, &mut rng)?;
            let mut history = TrainHistory {
                alpha: 0.0,
                ..Default::default()
            };
            let mut best = None;
            for l in losses.iter() {
                history.push(*l, 0.0, aux_data.len(), 0);
            }
            // validation for the auxiliary variant scores the final model only
            if let Some(v) = validation.as_ref() {
                validate_and_keep_best(
                    &mut m,
                    |m| ModelBundle::Aux(m.clone()),
                    &mut history,
                    Some(v),
                    &mut best,
                )?;
                history.best_epoch = Some(history.epochs.len());
            }
            (ModelBundle::Aux(m), history)
        }
        Variant::Tdgru => {
            let mut m = TdgruModel::init(e, cfg.hidden, &mut init);
            let h = train_single(
                &mut m,
                &main_data,
                cfg,
                &mut rng,
                validation.as_ref(),
                false,
            )?;
            (
                ModelBundle::Tdgru {
                    model: m,
                    fine_tuned: false,
                },
                h,
            )
        }
        Variant::Tdft => {
            let mut aux = AuxModel::init(e, cfg.hidden, &mut init);
            let aux_losses = train_aux_epochs(&mut aux, &aux_data, cfg.epochs, cfg, &mut rng)?;
            let mut m = tdft_init(&aux, cfg.hidden, &mut init)?;
            let mut h = train_single(&mut m, &main_data, cfg, &mut rng, validation.as_ref(), true)?;
            for (rec, l) in h.epochs.iter_mut().zip(aux_losses) {
                rec.aux_loss = l;
                rec.aux_instances = aux_data.len();
                rec.objective = rec.aux_loss + h.alpha * rec.main_loss;
            }
            (
                ModelBundle::Tdgru {
                    model: m,
                    fine_tuned: true,
                },
                h,
            )
        }
        Variant::Mttdsc | Variant::NaiveMtl => {
            let mut m = MttdscModel::init(e, cfg.hidden, variant == Variant::NaiveMtl, &mut init);
            pretrain_aux(&mut m, &aux_data, cfg, &mut rng)?;
            let h = joint_train(
                &mut m,
                &aux_data,
                &main_data,
                cfg,
                &mut rng,
                validation.as_ref(),
            )?;
            (ModelBundle::Mttdsc(m), h)
        }
    };
    Ok(Checkpoint {
        variant,
        config: cfg.clone(),
        model,
        rng: RngState::capture(cfg.seed, &rng),
        history,
    })
}

/// `ensemble_size` members; member `k` uses seed `cfg.seed + k`.
pub fn ensemble_train(
    variant: Variant,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
) -> Result<Vec<Checkpoint>> {
    cfg.validate()?;
    let member_cfg = |k: usize| TrainConfig {
        seed: cfg.seed + k as u64,
        ..cfg.clone()
    };
    if cfg.workers > 1 {
        (0..cfg.ensemble_size)
            .into_par_iter()
            .map(|k| {
                let c = TrainConfig {
                    workers: 1,
                    ..member_cfg(k)
                };
                train_variant(variant, data, &c).map(|mut ck| {
                    ck.config.workers = cfg.workers;
                    ck
                })
            })
            .collect()
    } else {
        (0..cfg.ensemble_size)
            .map(|k| train_variant(variant, data, &member_cfg(k)))
            .collect()
    }
}

/// Members of one variant whose distributions are averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: Vec<ModelBundle>,
    variant: Variant,
}

impl Ensemble {
    pub fn new(members: Vec<ModelBundle>) -> Result<Self> {
        let variant = members
            .first()
            .ok_or_else(|| Error::Usage("an ensemble needs at least one member".into()))?
            .variant();
        if let Some(m) = members.iter().find(|m| m.variant() != variant) {
            return Err(Error::Usage(format!(
                "ensemble mixes variants {variant} and {}",
                m.variant()
            )));
        }
        Ok(Ensemble { members, variant })
    }

    pub fn members(&self) -> &[ModelBundle] {
        &self.members
    }
}

impl Predictor for Ensemble {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn predict_targeted(&self, tokens: &Tensor, target: TargetSpan) -> Result<ProbabilityTriple> {
        let dists = self
            .members
            .iter()
            .map(|m| m.predict_targeted(tokens, target))
            .collect::<Result<Vec<_>>>()?;
        ProbabilityTriple::mean(&dists)
    }

    fn predict_passage(&self, tokens: &Tensor) -> Result<ProbabilityTriple> {
        let dists = self
            .members
            .iter()
            .map(|m| m.predict_passage(tokens))
            .collect::<Result<Vec<_>>>()?;
        ProbabilityTriple::mean(&dists)
    }
}

/// Mean member distribution for one targeted instance.
pub fn ensemble_predict(
    members: &[ModelBundle],
    tokens: &Tensor,
    target: TargetSpan,
) -> Result<ProbabilityTriple> {
    Ensemble::new(members.to_vec())?.predict_targeted(tokens, target)
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

/// Position of a ChaCha8 generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position as a decimal string (128-bit).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::load("rng_state.word_pos", "not an unsigned integer"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// A trained model with everything needed to reproduce or resume it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub config: TrainConfig,
    pub model: ModelBundle,
    pub rng: RngState,
    pub history: TrainHistory,
}

#[derive(Serialize)]
struct TensorOut {
    name: String,
    shape: Vec<usize>,
    values: Vec<Box<RawValue>>,
}

#[derive(Serialize)]
struct OptimizerOut {
    name: String,
    step_count: u64,
    adam_m: Vec<Box<RawValue>>,
    adam_v: Vec<Box<RawValue>>,
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    version: u32,
    variant: Variant,
    input_dim: usize,
    aux_pretrained: bool,
    config: &'a TrainConfig,
    tensors: Vec<TensorOut>,
    optimizer: Vec<OptimizerOut>,
    rng_state: &'a RngState,
    history: &'a TrainHistory,
}

#[derive(Deserialize)]
struct TensorIn {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct OptimizerIn {
    name: String,
    step_count: u64,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
}

#[derive(Deserialize)]
struct CheckpointIn {
    version: u32,
    variant: Variant,
    input_dim: usize,
    aux_pretrained: bool,
    config: TrainConfig,
    tensors: Vec<TensorIn>,
    optimizer: Vec<OptimizerIn>,
    rng_state: RngState,
    history: TrainHistory,
}

/// 17 significant digits: enough for an exact f64 round trip.
fn exact_decimals(values: &[f64]) -> Vec<Box<RawValue>> {
    values
        .iter()
        .map(|v| RawValue::from_string(format!("{v:.16e}")).expect("a decimal float is valid JSON"))
        .collect()
}

fn skeleton(variant: Variant, input_dim: usize, hidden: usize) -> ModelBundle {
    match variant {
        Variant::Aux => ModelBundle::Aux(AuxModel::zeros(input_dim, hidden)),
        Variant::Tdgru | Variant::Tdft => ModelBundle::Tdgru {
            model: TdgruModel::zeros(input_dim, hidden),
            fine_tuned: variant == Variant::Tdft,
        },
        Variant::NaiveMtl | Variant::Mttdsc => ModelBundle::Mttdsc(MttdscModel::zeros(
            input_dim,
            hidden,
            variant == Variant::NaiveMtl,
        )),
    }
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let mut tensors = Vec::new();
        let mut optimizer = Vec::new();
        self.model.visit_params(&mut |name, p| {
            tensors.push(TensorOut {
                name: name.to_string(),
                shape: p.shape().to_vec(),
                values: exact_decimals(p.value.values()),
            });
            optimizer.push(OptimizerOut {
                name: name.to_string(),
                step_count: p.step_count,
                adam_m: exact_decimals(p.adam_m.values()),
                adam_v: exact_decimals(p.adam_v.values()),
            });
        });
        let aux_pretrained = matches!(&self.model, ModelBundle::Mttdsc(m) if m.aux_pretrained);
        let out = CheckpointOut {
            version: CHECKPOINT_VERSION,
            variant: self.variant,
            input_dim: self.model.input_dim(),
            aux_pretrained,
            config: &self.config,
            tensors,
            optimizer,
            rng_state: &self.rng,
            history: &self.history,
        };
        let mut s = serde_json::to_string(&out)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::load("<document>", e.to_string()))?;
        match probe.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => return Err(Error::load("version", format!("unsupported version {v}"))),
            None => return Err(Error::load("version", "missing")),
        }
        let raw: CheckpointIn =
            serde_json::from_value(probe).map_err(|e| Error::load("<document>", e.to_string()))?;
        debug_assert_eq!(raw.version, CHECKPOINT_VERSION);
        raw.config
            .validate()
            .map_err(|e| Error::load("config", e.to_string()))?;
        let mut model = skeleton(raw.variant, raw.input_dim, raw.config.hidden);
        let mut tensors: BTreeMap<String, TensorIn> = raw
            .tensors
            .into_iter()
            .map(|t| (t.name.clone(), t))
            .collect();
        let mut optim: BTreeMap<String, OptimizerIn> = raw
            .optimizer
            .into_iter()
            .map(|o| (o.name.clone(), o))
            .collect();
        let mut failure: Option<Error> = None;
        model.visit_params_mut(&mut |name, p| {
            if failure.is_some() {
                return;
            }
            let result = (|| -> Result<()> {
                let t = tensors
                    .remove(name)
                    .ok_or_else(|| Error::load(format!("tensors.{name}"), "missing"))?;
                if t.shape != p.shape() {
                    return Err(Error::load(
                        format!("tensors.{name}.shape"),
                        format!("expected {:?}, found {:?}", p.shape(), t.shape),
                    ));
                }
                p.value = Tensor::new(t.shape.clone(), t.values)
                    .map_err(|e| Error::load(format!("tensors.{name}.values"), e.to_string()))?;
                let o = optim
                    .remove(name)
                    .ok_or_else(|| Error::load(format!("optimizer.{name}"), "missing"))?;
                p.adam_m = Tensor::new(t.shape.clone(), o.adam_m)
                    .map_err(|e| Error::load(format!("optimizer.{name}.adam_m"), e.to_string()))?;
                p.adam_v = Tensor::new(t.shape, o.adam_v)
                    .map_err(|e| Error::load(format!("optimizer.{name}.adam_v"), e.to_string()))?;
                p.step_count = o.step_count;
                p.zero_grad();
                Ok(())
            })();
            if let Err(e) = result {
                failure = Some(e);
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::load(
                format!("tensors.{extra}"),
                "not part of this variant",
            ));
        }
        if let ModelBundle::Mttdsc(m) = &mut model {
            m.aux_pretrained = raw.aux_pretrained;
        }
        model
            .validate()
            .map_err(|e| Error::load("tensors", e.to_string()))?;
        raw.rng_state.restore()?;
        Ok(Checkpoint {
            variant: raw.variant,
            config: raw.config,
            model,
            rng: raw.rng_state,
            history: raw.history,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    Checkpoint::from_json(&text)
}

/// Loads a single checkpoint file, or every `*.json` checkpoint in a directory (sorted by name).
pub fn load_checkpoints(path: &Path) -> Result<Vec<Checkpoint>> {
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Input(format!(
                "no checkpoints in {}",
                path.display()
            )));
        }
        files.iter().map(|f| load_checkpoint(f)).collect()
    } else {
        Ok(vec![load_checkpoint(path)?])
    }
}
