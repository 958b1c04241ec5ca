//! Scalar training objectives.
//!
//! Every loss reduces over the batch with the arithmetic mean. The
//! representations of the global and previous models are always detached
//! inside these functions: local training only optimizes the model being
//! updated, so nothing upstream of `z_glob` or `z_prev` receives gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::tensor::{Tape, Tensor, Var};

pub use crate::tensor::cosine_similarity as cosine_sim;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub mu: f64,
    pub max_negative_pairs: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            mu: 1.0,
            max_negative_pairs: 1,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if self.mu < 0.0 || !self.mu.is_finite() {
            return Err(Error::Config(format!("mu must be finite and >= 0, got {}", self.mu)));
        }
        if self.max_negative_pairs == 0 {
            return Err(Error::Config("max_negative_pairs must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {tau}")))
    }
}

fn check_same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(Error::dim(op, sa, sb));
    }
    Ok(())
}

/// Mean cross-entropy of `logits` (`batch x C`) against class indices.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

/// Model-contrastive loss with one negative:
/// `softplus((sim(z, z_prev) - sim(z, z_glob)) / tau)` per row, averaged.
pub fn model_contrastive_loss(tape: &mut Tape, z: Var, z_glob: Var, z_prev: Var, tau: f64) -> Result<Var> {
    check_temperature(tau)?;
    check_same_shape(tape, "model_contrastive_loss", z, z_glob)?;
    check_same_shape(tape, "model_contrastive_loss", z, z_prev)?;
    let z_glob = tape.detach(z_glob);
    let z_prev = tape.detach(z_prev);
    let pos = tape.row_cosine(z, z_glob)?;
    let neg = tape.row_cosine(z, z_prev)?;
    let gap = tape.sub(neg, pos)?;
    let logit = tape.scale(gap, 1.0 / tau);
    let per_row = tape.softplus(logit);
    tape.mean(per_row)
}

/// Model-contrastive loss with `k = z_prevs.len()` negatives:
/// `softplus(logsumexp_i((sim(z, z_prev_i) - sim(z, z_glob)) / tau))`
/// per row, averaged. With one negative this is bit-identical to
/// [`model_contrastive_loss`].
pub fn multi_negative_contrastive(tape: &mut Tape, z: Var, z_glob: Var, z_prevs: &[Var], tau: f64) -> Result<Var> {
    check_temperature(tau)?;
    if z_prevs.is_empty() {
        return Err(Error::Contract(
            "multi_negative_contrastive needs at least one previous representation".into(),
        ));
    }
    check_same_shape(tape, "multi_negative_contrastive", z, z_glob)?;
    for &p in z_prevs {
        check_same_shape(tape, "multi_negative_contrastive", z, p)?;
    }
    let z_glob = tape.detach(z_glob);
    let pos = tape.row_cosine(z, z_glob)?;
    let mut logits = Vec::with_capacity(z_prevs.len());
    for &prev in z_prevs {
        let prev = tape.detach(prev);
        let neg = tape.row_cosine(z, prev)?;
        let gap = tape.sub(neg, pos)?;
        logits.push(tape.scale(gap, 1.0 / tau));
    }
    let stacked = tape.stack_cols(&logits)?;
    let lse = tape.logsumexp_rows(stacked)?;
    let per_row = tape.softplus(lse);
    tape.mean(per_row)
}

/// Mean over rows of `||z - z_glob||_2` (the norm, not its square).
pub fn l2_rep_penalty(tape: &mut Tape, z: Var, z_glob: Var) -> Result<Var> {
    check_same_shape(tape, "l2_rep_penalty", z, z_glob)?;
    let z_glob = tape.detach(z_glob);
    let diff = tape.sub(z, z_glob)?;
    let norms = tape.row_norm(diff)?;
    tape.mean(norms)
}

/// `0.5 * ||w - anchor||^2` where `w` is the concatenation of `params`
/// in order and `anchor` is held fixed.
pub fn proximal_term(tape: &mut Tape, params: &[Var], anchor: &ParamVector) -> Result<Var> {
    let total: usize = params.iter().map(|&p| tape.value(p).len()).sum();
    if total != anchor.len() {
        return Err(Error::dim("proximal_term", &[total], &[anchor.len()]));
    }
    let mut offset = 0;
    let mut acc: Option<Var> = None;
    for &p in params {
        let shape = tape.value(p).shape().to_vec();
        let n = tape.value(p).len();
        let fixed = Tensor::new(shape, anchor.as_slice()[offset..offset + n].to_vec())?;
        offset += n;
        let fixed = tape.constant(fixed);
        let diff = tape.sub(p, fixed)?;
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let sum = match acc {
        Some(a) => a,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    Ok(tape.scale(sum, 0.5))
}

/// `cross_entropy + mu * model_contrastive_loss`. With `mu == 0` the
/// contrastive term is not evaluated and the cross-entropy node is
/// returned as is.
pub fn combined_local_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    z: Var,
    z_glob: Var,
    z_prev: Var,
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    cfg.validate()?;
    let sup = cross_entropy(tape, logits, labels)?;
    if cfg.mu == 0.0 {
        return Ok(sup);
    }
    let con = model_contrastive_loss(tape, z, z_glob, z_prev, cfg.temperature)?;
    let weighted = tape.scale(con, cfg.mu);
    tape.add(sup, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use std::f64::consts::LN_2;

    fn rows(data: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&data.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| 4.0 * rng.uniform() - 2.0).collect()).unwrap()
    }

    /// Independent scalar softplus for oracles: log(1 + e^x) in the naive form.
    fn naive_softplus(x: f64) -> f64 {
        (1.0 + x.exp()).ln()
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[4, 10]));
        let l = cross_entropy(&mut tape, z, &[0, 3, 9, 5]).unwrap();
        assert!((tape.value(l).item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_gives_tiny_loss() {
        let mut tape = Tape::new();
        let z = tape.constant(rows(&[&[0.0, 50.0, 0.0]]));
        let l = cross_entropy(&mut tape, z, &[1]).unwrap();
        assert!(tape.value(l).item() < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_direct_evaluation() {
        let logits = random(&[6, 5], 3);
        let labels = [0, 4, 2, 2, 1, 3];
        let mut tape = Tape::new();
        let z = tape.constant(logits.clone());
        let l = cross_entropy(&mut tape, z, &labels).unwrap();
        let direct: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let row = logits.row(i);
                -(row[y].exp() / row.iter().map(|x| x.exp()).sum::<f64>()).ln()
            })
            .sum::<f64>()
            / 6.0;
        assert!((tape.value(l).item() - direct).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_extreme_logits_are_finite() {
        let mut tape = Tape::new();
        let z = tape.param(rows(&[&[1e3, -1e3, 0.0], &[-1e3, -1e3, 1e3]]));
        let l = cross_entropy(&mut tape, z, &[1, 0]).unwrap();
        assert!(tape.value(l).item().is_finite());
        tape.backward(l).unwrap();
        assert!(tape.grad(z).unwrap().data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn cosine_cases() {
        let v = [0.3, -1.2, 2.0];
        assert!((cosine_sim(&v, &v) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_sim(&v, &neg) + 1.0).abs() < 1e-15);
        assert!(cosine_sim(&v, &v) <= 1.0);
    }

    /// Rows `z = e1` with chosen partners so sim(z, glob) and sim(z, prev)
    /// take exact values.
    fn contrastive_value(sim_glob_partner: [f64; 2], sim_prev_partner: [f64; 2], tau: f64) -> f64 {
        let mut tape = Tape::new();
        let z = tape.constant(rows(&[&[1.0, 0.0]]));
        let g = tape.constant(rows(&[&sim_glob_partner]));
        let p = tape.constant(rows(&[&sim_prev_partner]));
        let l = model_contrastive_loss(&mut tape, z, g, p, tau).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn equal_negatives_give_log_two() {
        let z = random(&[5, 4], 1);
        let g = random(&[5, 4], 2);
        let mut tape = Tape::new();
        let (zv, gv, pv) = (tape.constant(z), tape.constant(g.clone()), tape.constant(g));
        let l = model_contrastive_loss(&mut tape, zv, gv, pv, 0.5).unwrap();
        assert!((tape.value(l).item() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn contrastive_closed_form_values() {
        let low = contrastive_value([2.0, 0.0], [-3.0, 0.0], 0.5);
        assert!((low - naive_softplus(-4.0)).abs() < 1e-12);
        assert!((low - 0.018_149_927_917_809_9).abs() < 1e-12);
        let high = contrastive_value([-2.0, 0.0], [3.0, 0.0], 0.5);
        assert!((high - naive_softplus(4.0)).abs() < 1e-12);
        assert!((high - 4.018_149_927_917_81).abs() < 1e-12);
    }

    #[test]
    fn contrastive_small_temperature_is_finite() {
        let v = contrastive_value([-1.0, 0.0], [1.0, 0.0], 1e-3);
        assert!((v - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn contrastive_rejects_bad_temperature() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(
            model_contrastive_loss(&mut tape, z, z, z, 0.0),
            Err(Error::Config(_))
        ));
        assert!(model_contrastive_loss(&mut tape, z, z, z, -1.0).is_err());
    }

    #[test]
    fn multi_negative_reduces_to_single() {
        let z = random(&[7, 3], 4);
        let g = random(&[7, 3], 5);
        let p = random(&[7, 3], 6);
        for tau in [0.1, 0.5, 1.0] {
            let mut tape = Tape::new();
            let (zv, gv, pv) = (
                tape.constant(z.clone()),
                tape.constant(g.clone()),
                tape.constant(p.clone()),
            );
            let single = model_contrastive_loss(&mut tape, zv, gv, pv, tau).unwrap();
            let multi = multi_negative_contrastive(&mut tape, zv, gv, &[pv], tau).unwrap();
            assert_eq!(tape.value(single).item(), tape.value(multi).item());
        }
    }

    #[test]
    fn multi_negative_all_equal_gives_log_k_plus_one() {
        let z = random(&[4, 3], 7);
        let g = random(&[4, 3], 8);
        for k in 1..=6 {
            let mut tape = Tape::new();
            let zv = tape.constant(z.clone());
            let gv = tape.constant(g.clone());
            let prevs = vec![gv; k];
            let l = multi_negative_contrastive(&mut tape, zv, gv, &prevs, 0.5).unwrap();
            assert!((tape.value(l).item() - ((k + 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_negative_two_pairs_closed_form() {
        let mut tape = Tape::new();
        let z = tape.constant(rows(&[&[1.0, 0.0]]));
        let g = tape.constant(rows(&[&[1.0, 0.0]]));
        let p = tape.constant(rows(&[&[-1.0, 0.0]]));
        let l = multi_negative_contrastive(&mut tape, z, g, &[p, p], 0.5).unwrap();
        let e = std::f64::consts::E;
        let expected = -(e.powi(2) / (e.powi(2) + 2.0 * e.powi(-2))).ln();
        assert!((tape.value(l).item() - expected).abs() < 1e-12);
        assert!((expected - 0.035_976_3).abs() < 1e-7);
    }

    #[test]
    fn multi_negative_empty_list_is_contract_error() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(
            multi_negative_contrastive(&mut tape, z, z, &[], 0.5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn l2_rep_cases() {
        let mut tape = Tape::new();
        let z = tape.param(rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let l = l2_rep_penalty(&mut tape, z, z).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        tape.backward(l).unwrap();
        assert!(tape.grad(z).unwrap().data().iter().all(|g| g.is_finite()));

        let mut tape = Tape::new();
        let z = tape.constant(rows(&[&[3.0, 4.0]]));
        let g = tape.constant(rows(&[&[0.0, 0.0]]));
        let l = l2_rep_penalty(&mut tape, z, g).unwrap();
        assert_eq!(tape.value(l).item(), 5.0);
    }

    #[test]
    fn l2_rep_matches_direct_sum() {
        let z = random(&[5, 6], 9);
        let g = random(&[5, 6], 10);
        let mut tape = Tape::new();
        let (zv, gv) = (tape.constant(z.clone()), tape.constant(g.clone()));
        let l = l2_rep_penalty(&mut tape, zv, gv).unwrap();
        let direct = (0..5)
            .map(|i| {
                z.row(i)
                    .iter()
                    .zip(g.row(i))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / 5.0;
        assert!((tape.value(l).item() - direct).abs() < 1e-12);
    }

    #[test]
    fn proximal_cases() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let same = proximal_term(&mut tape, &[w], &ParamVector::new(vec![1.0, 2.0])).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);

        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![2.0, 0.0]));
        let l = proximal_term(&mut tape, &[w], &ParamVector::zeros(2)).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 0.0]);

        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![2.0, 0.0]));
        assert!(matches!(
            proximal_term(&mut tape, &[w], &ParamVector::zeros(3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn proximal_spans_several_leaves() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.param(Tensor::vector(vec![5.0]));
        let anchor = ParamVector::new(vec![0.0, 2.0, 3.0, 3.0, 7.0]);
        let l = proximal_term(&mut tape, &[a, b], &anchor).unwrap();
        assert_eq!(tape.value(l).item(), 0.5 * (1.0 + 1.0 + 4.0));
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[-2.0]);
    }

    #[test]
    fn combined_loss_mu_zero_is_cross_entropy() {
        let logits = random(&[3, 4], 11);
        let z = random(&[3, 2], 12);
        let labels = [1, 0, 3];
        let mut tape = Tape::new();
        let lv = tape.constant(logits);
        let zv = tape.constant(z);
        let cfg = ContrastiveConfig {
            mu: 0.0,
            ..Default::default()
        };
        let combined = combined_local_loss(&mut tape, lv, &labels, zv, zv, zv, &cfg).unwrap();
        let sup = cross_entropy(&mut tape, lv, &labels).unwrap();
        assert_eq!(tape.value(combined).item(), tape.value(sup).item());
    }

    #[test]
    fn combined_loss_constant_contrastive_case() {
        let logits = random(&[3, 4], 13);
        let z = random(&[3, 2], 14);
        let g = random(&[3, 2], 15);
        let labels = [2, 2, 0];
        let mut tape = Tape::new();
        let (lv, zv, gv) = (tape.constant(logits), tape.constant(z), tape.constant(g));
        let cfg = ContrastiveConfig {
            mu: 1.0,
            ..Default::default()
        };
        let combined = combined_local_loss(&mut tape, lv, &labels, zv, gv, gv, &cfg).unwrap();
        let sup = cross_entropy(&mut tape, lv, &labels).unwrap();
        assert!((tape.value(combined).item() - tape.value(sup).item() - LN_2).abs() < 1e-9);
    }

    #[test]
    fn combined_loss_mu_five_by_hand() {
        // logits [0, ln 3] with label 1: CE = ln(4/3); sims (1, -1) at tau 0.5
        let mut tape = Tape::new();
        let lv = tape.constant(rows(&[&[0.0, 3f64.ln()]]));
        let z = tape.constant(rows(&[&[1.0, 1.0]]));
        let g = tape.constant(rows(&[&[2.0, 2.0]]));
        let p = tape.constant(rows(&[&[-1.0, -1.0]]));
        let cfg = ContrastiveConfig {
            mu: 5.0,
            temperature: 0.5,
            max_negative_pairs: 1,
        };
        let l = combined_local_loss(&mut tape, lv, &[1], z, g, p, &cfg).unwrap();
        let expected = (4.0f64 / 3.0).ln() + 5.0 * naive_softplus(-4.0);
        assert!((tape.value(l).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn frozen_inputs_get_no_gradient() {
        let mut tape = Tape::new();
        let z = tape.param(random(&[3, 4], 16));
        let g = tape.param(random(&[3, 4], 17));
        let p = tape.param(random(&[3, 4], 18));
        let a = model_contrastive_loss(&mut tape, z, g, p, 0.5).unwrap();
        let b = multi_negative_contrastive(&mut tape, z, g, &[p, p], 0.5).unwrap();
        let c = l2_rep_penalty(&mut tape, z, g).unwrap();
        let ab = tape.add(a, b).unwrap();
        let total = tape.add(ab, c).unwrap();
        tape.backward(total).unwrap();
        assert!(tape.grad(z).is_some());
        assert!(tape.grad(g).is_none());
        assert!(tape.grad(p).is_none());
    }
}
