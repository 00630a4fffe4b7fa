//! Batch objectives of the imputation model (θ) and the prediction model (φ).

use std::fmt;

use crate::error::{Error, Result};
use crate::models::FmParams;
use crate::numeric::{clamp_prob, cross_entropy};

/// Per-example weight of clicked events in the imputation objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputationWeight {
    /// `1/p̂`.
    Inverse,
    /// `(1−p̂)/p̂²`, the variance-reducing weighting.
    Mrdr,
}

impl ImputationWeight {
    #[inline]
    pub fn weight(self, p: f64) -> f64 {
        match self {
            Self::Inverse => 1.0 / p,
            Self::Mrdr => (1.0 - p) / (p * p),
        }
    }
}

impl fmt::Display for ImputationWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Inverse => "inverse",
            Self::Mrdr => "mrdr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputationObjective {
    /// `CE(r, g_θ(x))`.
    CrossEntropy,
    /// `(ê − e)²` with `ê = CE(g_θ(x), g_φ(x))`, `e = CE(r, g_φ(x))`.
    Squared,
}

/// A clicked cell with its conversion label and (floored) propensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickedCell {
    pub user: usize,
    pub item: usize,
    pub label: f64,
    pub propensity: f64,
}

/// Any grid cell; `label` and `propensity` are read only when clicked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub user: usize,
    pub item: usize,
    pub clicked: bool,
    pub label: f64,
    pub propensity: f64,
}

impl From<ClickedCell> for Cell {
    fn from(c: ClickedCell) -> Self {
        Self {
            user: c.user,
            item: c.item,
            clicked: true,
            label: c.label,
            propensity: c.propensity,
        }
    }
}

/// Frozen snapshot of θ producing soft pseudo labels `r̃ = g_θ(x)`.
#[derive(Debug, Clone)]
pub struct PseudoLabeler {
    theta: FmParams,
    binarize: bool,
}

impl PseudoLabeler {
    pub fn new(theta: &FmParams, binarize: bool) -> Self {
        Self {
            theta: theta.clone(),
            binarize,
        }
    }

    /// `r̃` clamped into `[1e-7, 1−1e-7]`; hard 0/1 (clamped) when binarized.
    #[inline]
    pub fn label(&self, user: usize, item: usize) -> f64 {
        let p = self.theta.predict_unchecked(user, item);
        if self.binarize {
            clamp_prob(if p >= 0.5 { 1.0 } else { 0.0 })
        } else {
            clamp_prob(p)
        }
    }
}

fn check_batch<T>(batch: &[T]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    Ok(())
}

/// `scale · Σ w(p̂)·ℓ + λ‖θ‖²` and its gradient in θ. With the squared
/// objective `ŷ = g_φ(x)` is held fixed.
pub fn imputation_batch_loss(
    theta: &FmParams,
    phi: &FmParams,
    batch: &[ClickedCell],
    weight: ImputationWeight,
    objective: ImputationObjective,
    lambda: f64,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    check_batch(batch)?;
    let mut grad = theta.zeros_like();
    let mut loss = 0.0;
    for c in batch {
        theta.logit(c.user, c.item)?;
        let w = scale * weight.weight(c.propensity);
        let r_tilde = theta.predict_unchecked(c.user, c.item);
        match objective {
            ImputationObjective::CrossEntropy => {
                loss += w * cross_entropy(c.label, r_tilde);
                theta.backprop_logit(c.user, c.item, w * (r_tilde - c.label), &mut grad);
            }
            ImputationObjective::Squared => {
                let y = clamp_prob(phi.predict(c.user, c.item)?);
                let e_hat = cross_entropy(r_tilde, y);
                let e = cross_entropy(c.label, y);
                loss += w * (e_hat - e) * (e_hat - e);
                // ∂ê/∂r̃ = −logit(ŷ), ∂r̃/∂z = r̃(1−r̃)
                let logit_y = (y / (1.0 - y)).ln();
                let dz = 2.0 * w * (e_hat - e) * (-logit_y) * r_tilde * (1.0 - r_tilde);
                theta.backprop_logit(c.user, c.item, dz, &mut grad);
            }
        }
    }
    loss += theta.add_l2(lambda, &mut grad);
    Ok((loss, grad))
}

/// `scale · Σ [ê + o(e−ê)/p̂] + μ‖φ‖²` with `ê = CE(r̃, g_φ)`,
/// `e = CE(r, g_φ)`; `r̃` comes from the frozen labeler and carries no
/// gradient.
pub fn prediction_batch_loss(
    phi: &FmParams,
    batch: &[Cell],
    pseudo: &PseudoLabeler,
    mu: f64,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    check_batch(batch)?;
    let mut grad = phi.zeros_like();
    let mut loss = 0.0;
    for c in batch {
        phi.logit(c.user, c.item)?;
        let y = phi.predict_unchecked(c.user, c.item);
        let r_tilde = pseudo.label(c.user, c.item);
        let e_hat = cross_entropy(r_tilde, y);
        let (term, dz) = if c.clicked {
            let inv = 1.0 / c.propensity;
            let e = cross_entropy(c.label, y);
            (e_hat + (e - e_hat) * inv, (y - r_tilde) + inv * (r_tilde - c.label))
        } else {
            (e_hat, y - r_tilde)
        };
        loss += scale * term;
        phi.backprop_logit(c.user, c.item, scale * dz, &mut grad);
    }
    loss += phi.add_l2(mu, &mut grad);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cells() -> Vec<ClickedCell> {
        vec![
            ClickedCell { user: 0, item: 1, label: 1.0, propensity: 0.5 },
            ClickedCell { user: 1, item: 0, label: 0.0, propensity: 0.5 },
            ClickedCell { user: 1, item: 2, label: 1.0, propensity: 0.5 },
        ]
    }

    #[test]
    fn weights() {
        assert_eq!(ImputationWeight::Mrdr.weight(0.25), 12.0);
        assert_eq!(ImputationWeight::Inverse.weight(0.25), 4.0);
        assert_eq!(ImputationWeight::Mrdr.weight(0.5), ImputationWeight::Inverse.weight(0.5));
    }

    #[test]
    fn half_propensity_makes_mrdr_and_dr_identical() {
        let theta = FmParams::init(2, 3, 4, 1, 0).unwrap();
        let phi = FmParams::init(2, 3, 4, 2, 0).unwrap();
        for obj in [ImputationObjective::CrossEntropy, ImputationObjective::Squared] {
            let a = imputation_batch_loss(&theta, &phi, &cells(), ImputationWeight::Mrdr, obj, 0.1, 1.0).unwrap();
            let b = imputation_batch_loss(&theta, &phi, &cells(), ImputationWeight::Inverse, obj, 0.1, 1.0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn perfect_imputation_fit() {
        let mut theta = FmParams::zeros(2, 3, 1).unwrap();
        *theta.w_mut(0) = 40.0;
        *theta.w_mut(1) = -40.0;
        let batch = [
            ClickedCell { user: 0, item: 0, label: 1.0, propensity: 0.3 },
            ClickedCell { user: 1, item: 2, label: 0.0, propensity: 0.3 },
        ];
        let (loss, _) = imputation_batch_loss(
            &theta, &theta, &batch, ImputationWeight::Mrdr, ImputationObjective::CrossEntropy, 0.0, 1.0,
        )
        .unwrap();
        assert!(loss < 1e-5);
        assert!(imputation_batch_loss(
            &theta, &theta, &[], ImputationWeight::Mrdr, ImputationObjective::CrossEntropy, 0.0, 1.0
        )
        .is_err());
    }

    #[test]
    fn prediction_terms() {
        let phi = FmParams::zeros(1, 2, 1).unwrap();
        let pseudo = PseudoLabeler::new(&FmParams::zeros(1, 2, 1).unwrap(), false);
        // r = 1, r̃ = 0.5, g_φ = 0.5, p̂ = 0.5 → ln 2
        let clicked = Cell { user: 0, item: 0, clicked: true, label: 1.0, propensity: 0.5 };
        let (l, _) = prediction_batch_loss(&phi, &[clicked], &pseudo, 0.0, 1.0).unwrap();
        assert_relative_eq!(l, 2f64.ln(), epsilon = 1e-15);
        let unclicked = Cell { clicked: false, label: f64::NAN, propensity: f64::NAN, ..clicked };
        let (l, _) = prediction_batch_loss(&phi, &[unclicked], &pseudo, 0.0, 1.0).unwrap();
        assert_relative_eq!(l, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn unit_propensity_cancels_imputed_error() {
        let phi = FmParams::init(2, 2, 3, 4, 0).unwrap();
        let pseudo = PseudoLabeler::new(&FmParams::init(2, 2, 3, 9, 0).unwrap(), false);
        for (u, i, r) in [(0, 0, 1.0), (1, 1, 0.0)] {
            let c = Cell { user: u, item: i, clicked: true, label: r, propensity: 1.0 };
            let (l, _) = prediction_batch_loss(&phi, &[c], &pseudo, 0.0, 1.0).unwrap();
            let e = cross_entropy(r, phi.predict(u, i).unwrap());
            assert!((l - e).abs() <= 4.0 * f64::EPSILON * e.max(1.0));
        }
    }

    #[test]
    fn pseudo_labels() {
        let zero = FmParams::zeros(2, 2, 2).unwrap();
        let p = PseudoLabeler::new(&zero, false);
        assert_eq!(p.label(1, 1), 0.5);
        let mut hot = zero.clone();
        hot.set_w0(100.0);
        let p = PseudoLabeler::new(&hot, false);
        assert!(p.label(0, 0) < 1.0);
        let b = PseudoLabeler::new(&hot, true);
        assert_eq!(b.label(0, 0), 1.0 - 1e-7);
    }

    #[test]
    fn frozen_snapshot_ignores_later_theta_changes() {
        let phi = FmParams::init(2, 2, 3, 4, 0).unwrap();
        let mut theta = FmParams::init(2, 2, 3, 5, 0).unwrap();
        let pseudo = PseudoLabeler::new(&theta, false);
        let batch = [
            Cell { user: 0, item: 1, clicked: true, label: 1.0, propensity: 0.2 },
            Cell { user: 1, item: 0, clicked: false, label: 0.0, propensity: 1.0 },
        ];
        let before = prediction_batch_loss(&phi, &batch, &pseudo, 0.01, 0.5).unwrap();
        theta.as_mut_slice().iter_mut().for_each(|x| *x += 1.0);
        assert_eq!(prediction_batch_loss(&phi, &batch, &pseudo, 0.01, 0.5).unwrap(), before);
    }
}
