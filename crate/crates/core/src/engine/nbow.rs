//! Neural bag-of-words dual encoder trained with an in-batch softmax
//! contrastive loss.
//!
//! A sequence is encoded as the L2-normalized mean of its token rows. For a
//! batch of B pairs the logits are `s_ij = <q_i, c_j> / temperature - offset`
//! and the loss is `mean_i( logsumexp_j s_ij - s_ii )`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, UNK_ID};
use super::{dot, prepare_encoded, Embedding, Encoder, EngineError, PreparedScores, ScoreError, Scorer};
use crate::scenario::AugmentedRecord;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Xavier-uniform fill in `[-a, a]`, `a = sqrt(6 / (rows + cols))`.
    pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.random_range(-a..a)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub temperature: f64,
    pub margin_offset: f64,
    pub min_frequency: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            epochs: 10,
            batch_size: 64,
            lr: 0.1,
            optimizer: Optimizer::Sgd,
            temperature: 0.07,
            margin_offset: 0.0,
            min_frequency: 2,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be a positive real");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be a positive real");
        }
        if !self.margin_offset.is_finite() {
            return bad("margin_offset must be finite");
        }
        if let Optimizer::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return bad("momentum beta must lie in [0, 1)");
            }
        }
        Ok(())
    }
}

/// Trained dual-encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalModel {
    pub vocab_x: Vocabulary,
    pub vocab_y: Vocabulary,
    pub emb_x: Matrix,
    pub emb_y: Matrix,
    pub config: TrainConfig,
}

impl RetrievalModel {
    /// Fresh parameters; the query table is drawn before the code table.
    pub fn initialize(vocab_x: Vocabulary, vocab_y: Vocabulary, config: TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let emb_x = Matrix::xavier_uniform(vocab_x.len(), config.dim, &mut rng);
        let emb_y = Matrix::xavier_uniform(vocab_y.len(), config.dim, &mut rng);
        Self {
            vocab_x,
            vocab_y,
            emb_x,
            emb_y,
            config,
        }
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn embed_query(&self, tokens: &[String]) -> Vec<f64> {
        embed_bag(tokens, &self.vocab_x, &self.emb_x)
    }

    pub fn embed_code(&self, tokens: &[String]) -> Vec<f64> {
        embed_bag(tokens, &self.vocab_y, &self.emb_y)
    }
}

impl Encoder for RetrievalModel {
    fn encode_query(&self, tokens: &[String]) -> Embedding {
        Embedding::Dense(self.embed_query(tokens))
    }

    fn encode_code(&self, tokens: &[String]) -> Embedding {
        Embedding::Dense(self.embed_code(tokens))
    }

    fn similarity(&self, query: &Embedding, code: &Embedding) -> f64 {
        query.dot(code) / self.config.temperature - self.config.margin_offset
    }
}

impl Scorer for RetrievalModel {
    fn prepare<'s>(
        &'s self,
        queries: &[&[String]],
        codes: &[&[String]],
    ) -> Result<Box<dyn PreparedScores + 's>, ScoreError> {
        Ok(prepare_encoded(self, queries, codes))
    }
}

struct Bag {
    /// Mean of the token rows before normalization.
    norm: f64,
    unit: Vec<f64>,
}

fn bag_forward(ids: &[u32], emb: &Matrix) -> Bag {
    let mut mean = vec![0.0; emb.cols];
    let mut ids: Vec<u32> = if ids.is_empty() { vec![UNK_ID] } else { ids.to_vec() };
    // Summing in id order makes the bag exactly permutation invariant.
    ids.sort_unstable();
    for &id in &ids {
        for (m, e) in mean.iter_mut().zip(emb.row(id as usize)) {
            *m += e;
        }
    }
    let n = ids.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm = dot(&mean, &mean).sqrt();
    if norm > 0.0 {
        mean.iter_mut().for_each(|m| *m /= norm);
    }
    Bag { norm, unit: mean }
}

/// Mean of the token rows (unknown row for out-of-vocabulary tokens),
/// L2-normalized. Empty input encodes as the unknown row.
pub fn embed_bag(tokens: &[String], vocab: &Vocabulary, emb: &Matrix) -> Vec<f64> {
    bag_forward(&vocab.ids(tokens), emb).unit
}

/// Sparse per-row gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub x: BTreeMap<u32, Vec<f64>>,
    pub y: BTreeMap<u32, Vec<f64>>,
}

fn logits(model: &RetrievalModel, qs: &[Bag], cs: &[Bag]) -> Vec<Vec<f64>> {
    let t = model.config.temperature;
    let off = model.config.margin_offset;
    qs.iter()
        .map(|q| cs.iter().map(|c| dot(&q.unit, &c.unit) / t - off).collect())
        .collect()
}

fn check_batch(xs: &[Vec<u32>], ys: &[Vec<u32>]) -> Result<(), EngineError> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(EngineError::EmptyBatch);
    }
    Ok(())
}

/// In-batch softmax loss for aligned query/code id lists.
pub fn batch_loss(model: &RetrievalModel, xs: &[Vec<u32>], ys: &[Vec<u32>]) -> Result<f64, EngineError> {
    Ok(batch_loss_and_grad(model, xs, ys)?.0)
}

pub fn batch_loss_and_grad(
    model: &RetrievalModel,
    xs: &[Vec<u32>],
    ys: &[Vec<u32>],
) -> Result<(f64, Gradients), EngineError> {
    check_batch(xs, ys)?;
    let b = xs.len();
    let d = model.dim();
    let qs: Vec<Bag> = xs.iter().map(|ids| bag_forward(ids, &model.emb_x)).collect();
    let cs: Vec<Bag> = ys.iter().map(|ids| bag_forward(ids, &model.emb_y)).collect();
    let s = logits(model, &qs, &cs);

    let mut loss = 0.0;
    // dL/ds_ij
    let mut g = vec![vec![0.0; b]; b];
    for i in 0..b {
        let max = s[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = s[i].iter().map(|v| (v - max).exp()).sum();
        loss += max + sum.ln() - s[i][i];
        for j in 0..b {
            let p = (s[i][j] - max).exp() / sum;
            g[i][j] = (p - if i == j { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    loss /= b as f64;

    let t = model.config.temperature;
    let mut grads = Gradients::default();
    for i in 0..b {
        let mut du = vec![0.0; d];
        for j in 0..b {
            for (acc, v) in du.iter_mut().zip(&cs[j].unit) {
                *acc += g[i][j] * v / t;
            }
        }
        scatter(&mut grads.x, &xs[i], &qs[i], &du);
    }
    for j in 0..b {
        let mut dv = vec![0.0; d];
        for i in 0..b {
            for (acc, u) in dv.iter_mut().zip(&qs[i].unit) {
                *acc += g[i][j] * u / t;
            }
        }
        scatter(&mut grads.y, &ys[j], &cs[j], &dv);
    }
    Ok((loss, grads))
}

/// Backpropagates through normalization and the mean into token rows.
fn scatter(rows: &mut BTreeMap<u32, Vec<f64>>, ids: &[u32], bag: &Bag, d_unit: &[f64]) {
    if bag.norm == 0.0 {
        return;
    }
    let proj = dot(&bag.unit, d_unit);
    let ids: &[u32] = if ids.is_empty() { &[UNK_ID] } else { ids };
    let per_token = 1.0 / (ids.len() as f64 * bag.norm);
    let d_mean: Vec<f64> = d_unit
        .iter()
        .zip(&bag.unit)
        .map(|(g, u)| (g - u * proj) * per_token)
        .collect();
    for &id in ids {
        let row = rows.entry(id).or_insert_with(|| vec![0.0; d_unit.len()]);
        for (r, g) in row.iter_mut().zip(&d_mean) {
            *r += g;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RetrievalModel,
    pub trace: Vec<EpochStats>,
}

struct Velocity {
    x: Matrix,
    y: Matrix,
}

fn apply_update(model: &mut RetrievalModel, grads: &Gradients, velocity: &mut Option<Velocity>) {
    let lr = model.config.lr;
    match (model.config.optimizer, velocity) {
        (Optimizer::Momentum { beta }, Some(v)) => {
            for (emb, vel, rows) in [(&mut model.emb_x, &mut v.x, &grads.x), (&mut model.emb_y, &mut v.y, &grads.y)] {
                vel.data.iter_mut().for_each(|x| *x *= beta);
                for (&id, g) in rows {
                    for (x, gi) in vel.row_mut(id as usize).iter_mut().zip(g) {
                        *x += gi;
                    }
                }
                for (w, x) in emb.data.iter_mut().zip(&vel.data) {
                    *w -= lr * x;
                }
            }
        }
        _ => {
            for (emb, rows) in [(&mut model.emb_x, &grads.x), (&mut model.emb_y, &grads.y)] {
                for (&id, g) in rows {
                    for (w, gi) in emb.row_mut(id as usize).iter_mut().zip(g) {
                        *w -= lr * gi;
                    }
                }
            }
        }
    }
}

/// MRR of each query against every code in the set; ties go to the lower index.
pub fn self_retrieval_mrr(model: &RetrievalModel, pairs: &[(&[String], &[String])]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let qs: Vec<Vec<f64>> = pairs.iter().map(|(x, _)| model.embed_query(x)).collect();
    let cs: Vec<Vec<f64>> = pairs.iter().map(|(_, y)| model.embed_code(y)).collect();
    let total: f64 = qs
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let own = dot(q, &cs[i]);
            let better = cs
                .iter()
                .enumerate()
                .filter(|(j, c)| {
                    let s = dot(q, c);
                    s > own || (s == own && *j < i)
                })
                .count();
            1.0 / (better + 1) as f64
        })
        .sum();
    total / pairs.len() as f64
}

pub fn pairs_of(records: &[AugmentedRecord]) -> Vec<(&[String], &[String])> {
    records
        .iter()
        .map(|r| (r.x_tokens.tokens.as_slice(), r.y_tokens.tokens.as_slice()))
        .collect()
}

/// Trains from scratch. Same data, config and seed give bit-identical parameters.
pub fn train(
    train_pairs: &[(&[String], &[String])],
    valid_pairs: &[(&[String], &[String])],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, EngineError> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(EngineError::EmptyTrainSet);
    }
    let vocab_x = Vocabulary::build(train_pairs.iter().map(|p| p.0), cfg.min_frequency);
    let vocab_y = Vocabulary::build(train_pairs.iter().map(|p| p.1), cfg.min_frequency);
    let mut model = RetrievalModel::initialize(vocab_x, vocab_y, cfg.clone());
    let xs: Vec<Vec<u32>> = train_pairs.iter().map(|p| model.vocab_x.ids(p.0)).collect();
    let ys: Vec<Vec<u32>> = train_pairs.iter().map(|p| model.vocab_y.ids(p.1)).collect();

    let mut velocity = match cfg.optimizer {
        Optimizer::Momentum { .. } => Some(Velocity {
            x: Matrix::zeros(model.emb_x.rows, cfg.dim),
            y: Matrix::zeros(model.emb_y.rows, cfg.dim),
        }),
        Optimizer::Sgd => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let bx: Vec<Vec<u32>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<Vec<u32>> = chunk.iter().map(|&i| ys[i].clone()).collect();
            let (loss, grads) = batch_loss_and_grad(&model, &bx, &by)?;
            if !loss.is_finite() {
                return Err(EngineError::NonFiniteLoss { epoch, batch: bi });
            }
            apply_update(&mut model, &grads, &mut velocity);
            loss_sum += loss;
            batches += 1;
        }
        let valid_mrr = (!valid_pairs.is_empty()).then(|| self_retrieval_mrr(&model, valid_pairs));
        trace.push(EpochStats {
            epoch,
            mean_loss: loss_sum / batches as f64,
            valid_mrr,
        });
    }
    Ok(TrainOutcome { model, trace })
}
