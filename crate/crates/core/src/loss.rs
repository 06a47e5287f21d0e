//! Distillation losses over a candidate list.
//!
//! Each loss compares teacher scores `t` (inner products under the original
//! embeddings) against student scores `s` (inner products under the
//! quantized/transformed model) for the same candidate documents, and returns
//! both the loss value and its gradient with respect to `s`:
//!
//! ```text
//! mse         sum_d (s_d - t_d)^2
//! margin_mse  sum_{d1 != d2} ((t_d1 - t_d2) - (s_d1 - s_d2))^2
//! ranknet     -sum_{d1 != d2} (t_d1 - t_d2) * log sigmoid(s_d1 - s_d2)
//! kl          KL(softmax(s) || softmax(t))
//! listnet     -sum_d softmax(t)_d * log softmax(s)_d
//! ```
//!
//! Pair sums run over ordered pairs with `d1 != d2`. The score losses (mse,
//! margin_mse) match score values; the ranking losses (ranknet, kl, listnet)
//! only care about score order or distribution, so they are invariant to
//! shifting every student score by a constant. All math is f64.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillLoss {
    Mse,
    MarginMse,
    RankNet,
    Kl,
    ListNet,
}

impl DistillLoss {
    pub const ALL: [DistillLoss; 5] = [
        DistillLoss::Mse,
        DistillLoss::MarginMse,
        DistillLoss::RankNet,
        DistillLoss::Kl,
        DistillLoss::ListNet,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DistillLoss::Mse => "mse",
            DistillLoss::MarginMse => "margin_mse",
            DistillLoss::RankNet => "ranknet",
            DistillLoss::Kl => "kl",
            DistillLoss::ListNet => "listnet",
        }
    }
}

impl fmt::Display for DistillLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistillLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "mse" => Ok(DistillLoss::Mse),
            "margin_mse" => Ok(DistillLoss::MarginMse),
            "ranknet" => Ok(DistillLoss::RankNet),
            "kl" => Ok(DistillLoss::Kl),
            "listnet" => Ok(DistillLoss::ListNet),
            other => Err(Error::Config(format!(
                "unknown loss '{other}' (expected mse, margin_mse, ranknet, kl, listnet)"
            ))),
        }
    }
}

/// Loss value and gradient d(loss)/d(student scores).
pub fn loss_and_grad(kind: DistillLoss, teacher: &[f64], student: &[f64]) -> (f64, Vec<f64>) {
    match kind {
        DistillLoss::Mse => loss_mse(teacher, student),
        DistillLoss::MarginMse => loss_margin_mse(teacher, student),
        DistillLoss::RankNet => loss_ranknet(teacher, student),
        DistillLoss::Kl => loss_kl(teacher, student),
        DistillLoss::ListNet => loss_listnet(teacher, student),
    }
}

pub fn loss_mse(teacher: &[f64], student: &[f64]) -> (f64, Vec<f64>) {
    check_lens(teacher, student);
    let mut loss = 0.0;
    let mut grad = vec![0.0; student.len()];
    for i in 0..student.len() {
        let d = student[i] - teacher[i];
        loss += d * d;
        grad[i] = 2.0 * d;
    }
    (loss, grad)
}

/// Margin MSE over ordered pairs, computed through the identity
/// `sum_{d1 != d2} (e_d1 - e_d2)^2 = 2n * sum e^2 - 2 (sum e)^2` with
/// `e = t - s`, which avoids the quadratic pair loop.
pub fn loss_margin_mse(teacher: &[f64], student: &[f64]) -> (f64, Vec<f64>) {
    check_lens(teacher, student);
    let n = student.len();
    let mut sum_e = 0.0;
    let mut sum_e2 = 0.0;
    for i in 0..n {
        let e = teacher[i] - student[i];
        sum_e += e;
        sum_e2 += e * e;
    }
    let loss = 2.0 * n as f64 * sum_e2 - 2.0 * sum_e * sum_e;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let e = teacher[i] - student[i];
        grad[i] = 4.0 * sum_e - 4.0 * n as f64 * e;
    }
    (loss, grad)
}

pub fn loss_ranknet(teacher: &[f64], student: &[f64]) -> (f64, Vec<f64>) {
    check_lens(teacher, student);
    let n = student.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let w = teacher[a] - teacher[b];
            let x = student[a] - student[b];
            loss -= w * log_sigmoid(x);
            // d/dx log sigmoid(x) = sigmoid(-x)
            let g = -w * sigmoid(-x);
            grad[a] += g;
            grad[b] -= g;
        }
    }
    (loss, grad)
}

/// KL(student distribution || teacher distribution), both through softmax.
/// Non-negative, zero exactly when the distributions coincide.
pub fn loss_kl(teacher: &[f64], student: &[f64]) -> (f64, Vec<f64>) {
    check_lens(teacher, student);
    if student.is_empty() {
        return (0.0, Vec::new());
    }
    let ls = log_softmax(student);
    let lt = log_softmax(teacher);
    let p: Vec<f64> = ls.iter().map(|v| v.exp()).collect();
    let mut loss = 0.0;
    for i in 0..p.len() {
        loss += p[i] * (ls[i] - lt[i]);
    }
    let grad = (0..p.len())
        .map(|j| p[j] * ((ls[j] - lt[j]) - loss))
        .collect();
    (loss, grad)
}

/// ListNet cross entropy `-sum softmax(t) * log softmax(s)`. Its minimum over
/// `s` is the teacher distribution's entropy, reached at `softmax(s) ==
/// softmax(t)`; the gradient is the softmax difference.
pub fn loss_listnet(teacher: &[f64], student: &[f64]) -> (f64, Vec<f64>) {
    check_lens(teacher, student);
    if student.is_empty() {
        return (0.0, Vec::new());
    }
    let q = softmax_dist(teacher);
    let ls = log_softmax(student);
    let mut loss = 0.0;
    for i in 0..q.len() {
        loss -= q[i] * ls[i];
    }
    let grad = (0..q.len()).map(|j| ls[j].exp() - q[j]).collect();
    (loss, grad)
}

/// Softmax with max-subtraction; no temperature.
pub fn softmax_dist(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scores
        .iter()
        .map(|s| (s - max).exp())
        .sum::<f64>()
        .ln();
    scores.iter().map(|s| s - max - log_sum).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    // log sigmoid(x) = -softplus(-x)
    if x >= 0.0 {
        -((-x).exp().ln_1p())
    } else {
        x - x.exp().ln_1p()
    }
}

fn check_lens(teacher: &[f64], student: &[f64]) {
    assert_eq!(
        teacher.len(),
        student.len(),
        "teacher/student length mismatch: {} vs {}",
        teacher.len(),
        student.len()
    );
}
