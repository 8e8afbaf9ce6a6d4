//! Central finite differences over every embedding entry of a toy model.

use augcode_core::engine::nbow::{batch_loss, batch_loss_and_grad, Matrix};
use augcode_core::engine::{RetrievalModel, TrainConfig, Vocabulary};

pub struct GradCheck {
    /// `|analytic - numeric| / max(|analytic| + |numeric|, floor)`, worst entry.
    pub max_entry_error: f64,
    /// `||analytic - numeric|| / (||analytic|| + ||numeric||)`.
    pub global_error: f64,
    pub entries: usize,
}

fn vocab(words: &[&str]) -> Vocabulary {
    let mut tokens = vec!["<unk>".to_string()];
    tokens.extend(words.iter().map(|w| w.to_string()));
    Vocabulary::from_tokens(tokens, 1)
}

/// Batch of two pairs over a 3-dim model with shared and repeated ids.
pub fn run(seed: u64, temperature: f64, eps: f64) -> GradCheck {
    let cfg = TrainConfig {
        dim: 3,
        temperature,
        seed,
        ..TrainConfig::default()
    };
    let model = RetrievalModel::initialize(vocab(&["a", "b", "c"]), vocab(&["p", "q", "r"]), cfg);
    let xs = vec![vec![1, 2], vec![3, 3, 1]];
    let ys = vec![vec![1], vec![2, 3, 0]];
    let (_, grads) = batch_loss_and_grad(&model, &xs, &ys).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for side in 0..2 {
        let (emb, rows) = if side == 0 { (&model.emb_x, &grads.x) } else { (&model.emb_y, &grads.y) };
        for k in 0..emb.data.len() {
            let (r, c) = (k / emb.cols, k % emb.cols);
            analytic.push(rows.get(&(r as u32)).map_or(0.0, |g| g[c]));
            let at = |delta: f64| {
                let mut m = model.clone();
                let target: &mut Matrix = if side == 0 { &mut m.emb_x } else { &mut m.emb_y };
                target.data[k] += delta;
                batch_loss(&m, &xs, &ys).unwrap()
            };
            numeric.push((at(eps) - at(-eps)) / (2.0 * eps));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let max_entry_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-6))
        .fold(0.0, f64::max);
    GradCheck {
        max_entry_error,
        global_error: norm(&diff) / (norm(&analytic) + norm(&numeric)),
        entries: analytic.len(),
    }
}
