//! Linear SVM, recursive feature elimination by weight magnitude, and the
//! validation F1-versus-k curve used to pick a feature subset.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    /// Inverse regularization strength.
    pub c: f64,
    pub epochs: usize,
    /// Initial step size; step t uses `learning_rate / sqrt(t + 1)`.
    pub learning_rate: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 300,
            learning_rate: 2.0,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid("svm C must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("svm epochs must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("svm learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective after every epoch; never increases.
    pub loss_history: Vec<f64>,
}

impl LinearSvm {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.bias + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<u8> {
        (0..x.n_rows).map(|r| u8::from(self.decision(x.row(r)) > 0.0)).collect()
    }
}

/// Objective value and subgradient at (w, b): L2 penalty plus the
/// class-balanced mean hinge loss.
fn objective(x: &FeatureMatrix, sign: &[f64], cw: &[f64], lambda: f64, w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
    let d = x.n_cols();
    let mut gw: Vec<f64> = w.iter().map(|wi| lambda * wi).collect();
    let mut gb = 0.0;
    let mut loss = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    for r in 0..x.n_rows {
        let row = x.row(r);
        let f = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        let m = 1.0 - sign[r] * f;
        if m > 0.0 {
            loss += cw[r] * m;
            let g = -cw[r] * sign[r];
            for j in 0..d {
                gw[j] += g * row[j];
            }
            gb += g;
        }
    }
    (loss, gw, gb)
}

/// Trains a linear SVM by deterministic full-batch subgradient descent from
/// w = 0. A step that raises the objective is rejected and the step scale
/// halved, so the recorded loss is monotone.
pub fn train_linear_svm(x: &FeatureMatrix, y: &[u8], params: &SvmParams) -> Result<LinearSvm> {
    params.validate()?;
    if y.len() != x.n_rows {
        return Err(Error::DimensionMismatch(format!("{} labels for {} rows", y.len(), x.n_rows)));
    }
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    let n = y.len();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }
    // Each class carries half the total weight.
    let cw: Vec<f64> = y
        .iter()
        .map(|&v| if v == 1 { 0.5 / n_pos as f64 } else { 0.5 / (n - n_pos) as f64 })
        .collect();
    let sign: Vec<f64> = y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect();
    let lambda = 1.0 / (params.c * n as f64);

    let mut w = vec![0.0; x.n_cols()];
    let mut b = 0.0;
    let (mut loss, mut gw, mut gb) = objective(x, &sign, &cw, lambda, &w, b);
    let mut scale = params.learning_rate;
    let mut history = Vec::with_capacity(params.epochs);
    for t in 0..params.epochs {
        let eta = scale / ((t + 1) as f64).sqrt();
        let w_new: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - eta * gi).collect();
        let b_new = b - eta * gb;
        let (l_new, gw_new, gb_new) = objective(x, &sign, &cw, lambda, &w_new, b_new);
        if l_new <= loss {
            w = w_new;
            b = b_new;
            loss = l_new;
            gw = gw_new;
            gb = gb_new;
        } else {
            scale *= 0.5;
        }
        history.push(loss);
    }
    Ok(LinearSvm {
        weights: w,
        bias: b,
        loss_history: history,
    })
}

/// F1 of the positive class; 0 when there are no positives at all.
pub fn f1_score(pred: &[u8], truth: &[u8]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Column indices, best first.
    pub order: Vec<usize>,
    /// Per round: the surviving columns and their weights.
    pub rounds: Vec<(Vec<usize>, Vec<f64>)>,
}

/// SVM-RFE removing one column per round: the surviving column with the
/// smallest |w|, ties to the lower column index.
pub fn rfe_rank(x: &FeatureMatrix, y: &[u8], params: &SvmParams) -> Result<Ranking> {
    let d = x.n_cols();
    if d == 0 {
        return Err(Error::invalid("no columns to rank"));
    }
    let mut alive: Vec<usize> = (0..d).collect();
    let mut eliminated = Vec::with_capacity(d);
    let mut rounds = Vec::with_capacity(d);
    while alive.len() > 1 {
        let svm = train_linear_svm(&x.select_columns(&alive), y, params)?;
        let mut worst = 0;
        for i in 1..alive.len() {
            if svm.weights[i].abs() < svm.weights[worst].abs() {
                worst = i;
            }
        }
        rounds.push((alive.clone(), svm.weights));
        eliminated.push(alive.remove(worst));
    }
    eliminated.push(alive[0]);
    eliminated.reverse();
    Ok(Ranking {
        order: eliminated,
        rounds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Curve {
    /// `f1[k - 1]` is the validation F1 using the top k columns.
    pub f1: Vec<f64>,
    pub selected_k: usize,
}

/// Smallest k whose F1 is within `tolerance` of the curve maximum.
pub fn select_k(f1: &[f64], tolerance: f64) -> usize {
    let best = f1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    f1.iter().position(|&v| v >= best - tolerance).map_or(1, |i| i + 1)
}

pub fn f1_curve(
    ranking: &Ranking,
    x_train: &FeatureMatrix,
    y_train: &[u8],
    x_val: &FeatureMatrix,
    y_val: &[u8],
    params: &SvmParams,
    tolerance: f64,
) -> Result<F1Curve> {
    use rayon::prelude::*;
    if x_train.columns != x_val.columns {
        return Err(Error::DimensionMismatch("train and validation columns differ".into()));
    }
    if y_val.len() != x_val.n_rows {
        return Err(Error::DimensionMismatch("validation labels".into()));
    }
    let f1 = (1..=ranking.order.len())
        .into_par_iter()
        .map(|k| {
            let cols = &ranking.order[..k];
            let svm = train_linear_svm(&x_train.select_columns(cols), y_train, params)?;
            Ok(f1_score(&svm.predict(&x_val.select_columns(cols)), y_val))
        })
        .collect::<Result<Vec<f64>>>()?;
    let selected_k = select_k(&f1, tolerance);
    Ok(F1Curve { f1, selected_k })
}

/// `rank,column,name` rows, best first.
pub fn write_ranking_csv(ranking: &Ranking, names: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "column", "name"])?;
    for (rank, &c) in ranking.order.iter().enumerate() {
        w.write_record([(rank + 1).to_string(), c.to_string(), names[c].clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// `k,f1,selected` rows.
pub fn write_f1_csv(curve: &F1Curve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "f1", "selected"])?;
    for (i, f) in curve.f1.iter().enumerate() {
        w.write_record([(i + 1).to_string(), f.to_string(), u8::from(i + 1 == curve.selected_k).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let d = rows[0].len();
        let n = rows.len();
        FeatureMatrix::new((0..d).map(|i| format!("c[{i}]")).collect(), n, rows.concat()).unwrap()
    }

    #[test]
    fn separable_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..200 {
            let x0: f64 = rng.random_range(-1.0..1.0);
            let x0 = x0.signum() * (0.3 + 0.7 * x0.abs());
            rows.push(vec![x0, rng.random_range(-1.0..1.0)]);
            y.push(u8::from(x0 > 0.0));
        }
        let x = matrix(rows);
        let svm = train_linear_svm(&x, &y, &SvmParams::default()).unwrap();
        assert!(svm.weights[0].abs() > 5.0 * svm.weights[1].abs(), "{:?}", svm.weights);
        assert_eq!(f1_score(&svm.predict(&x), &y), 1.0);
        assert!(svm.loss_history.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn duplicated_columns_get_equal_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..150 {
            let a: f64 = rng.random_range(0.0..1.0);
            rows.push(vec![a, a, rng.random_range(0.0..1.0)]);
            y.push(u8::from(a + rng.random_range(-0.2..0.2) > 0.5));
        }
        let svm = train_linear_svm(&matrix(rows), &y, &SvmParams::default()).unwrap();
        assert!((svm.weights[0] - svm.weights[1]).abs() <= 1e-3);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = matrix(vec![vec![0.0], vec![1.0]]);
        assert!(matches!(train_linear_svm(&x, &[1, 1], &SvmParams::default()), Err(Error::SingleClass)));
    }

    #[test]
    fn rfe_on_informative_noise_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..300 {
            let a: f64 = rng.random_range(0.0..1.0);
            rows.push(vec![a, rng.random_range(0.0..1.0), 0.0]);
            y.push(u8::from(a > 0.5));
        }
        let r = rfe_rank(&matrix(rows), &y, &SvmParams::default()).unwrap();
        assert_eq!(r.order, vec![0, 1, 2]);
        assert_eq!(r.rounds.len(), 2);
    }

    #[test]
    fn rfe_single_column() {
        let x = matrix(vec![vec![0.0], vec![1.0]]);
        assert_eq!(rfe_rank(&x, &[0, 1], &SvmParams::default()).unwrap().order, vec![0]);
    }

    #[test]
    fn selection_uses_curve_maximum() {
        assert_eq!(select_k(&[0.5, 0.8, 0.897, 0.9, 0.7], 0.005), 3);
        assert_eq!(select_k(&[0.6, 0.6, 0.6], 0.005), 1);
    }

    #[test]
    fn f1_edge_cases() {
        assert_eq!(f1_score(&[0, 0], &[0, 0]), 0.0);
        assert_eq!(f1_score(&[1, 0], &[1, 0]), 1.0);
        assert!((f1_score(&[1, 1, 0, 0], &[1, 0, 1, 0]) - 0.5).abs() < 1e-12);
    }
}
