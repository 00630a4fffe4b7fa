use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{cross_entropy, sigmoid};
use crate::rng::stream_rng;

/// Second-order FM restricted to one active user feature and one active
/// item feature. Parameters live in a single flat buffer laid out as
/// `[w0 | w (users + items) | V (features × dim)]` so the optimizer can
/// treat them uniformly. Item features are offset by `num_users`.
#[derive(Debug, Clone, PartialEq)]
pub struct FmParams {
    num_users: usize,
    num_items: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FmParams {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        let features = num_users + num_items;
        Ok(Self {
            num_users,
            num_items,
            dim,
            data: vec![0.0; 1 + features + features * dim],
        })
    }

    /// `w0 = 0`, `w = 0`, `V ~ U(−0.01, 0.01)` from the given stream.
    pub fn init(num_users: usize, num_items: usize, dim: usize, seed: u64, stream: u64) -> Result<Self> {
        let mut p = Self::zeros(num_users, num_items, dim)?;
        let mut rng = stream_rng(seed, stream);
        let start = p.v_offset();
        for x in &mut p.data[start..] {
            *x = rng.random_range(-0.01..0.01);
        }
        Ok(p)
    }

    pub fn from_raw(num_users: usize, num_items: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let p = Self::zeros(num_users, num_items, dim)?;
        if data.len() != p.data.len() {
            return Err(Error::Shape(format!(
                "{} values for an FM with {} parameters",
                data.len(),
                p.data.len()
            )));
        }
        Ok(Self { data, ..p })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_features(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &FmParams) -> bool {
        (self.num_users, self.num_items, self.dim) == (other.num_users, other.num_items, other.dim)
    }

    pub fn w0(&self) -> f64 {
        self.data[0]
    }

    pub fn set_w0(&mut self, v: f64) {
        self.data[0] = v;
    }

    pub fn w(&self, feature: usize) -> f64 {
        self.data[1 + feature]
    }

    pub fn w_mut(&mut self, feature: usize) -> &mut f64 {
        &mut self.data[1 + feature]
    }

    pub fn v(&self, feature: usize) -> &[f64] {
        let s = self.v_offset() + feature * self.dim;
        &self.data[s..s + self.dim]
    }

    pub fn v_mut(&mut self, feature: usize) -> &mut [f64] {
        let s = self.v_offset() + feature * self.dim;
        &mut self.data[s..s + self.dim]
    }

    fn v_offset(&self) -> usize {
        1 + self.num_features()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.num_users || item >= self.num_items {
            return Err(Error::Lookup(format!(
                "pair ({user}, {item}) outside a {}x{} model",
                self.num_users, self.num_items
            )));
        }
        Ok(())
    }

    /// `w0 + w_u + w_i + ⟨V_u, V_i⟩`.
    pub fn logit(&self, user: usize, item: usize) -> Result<f64> {
        self.check(user, item)?;
        Ok(self.logit_unchecked(user, item))
    }

    #[inline]
    pub(crate) fn logit_unchecked(&self, user: usize, item: usize) -> f64 {
        let j = self.num_users + item;
        let dot: f64 = self.v(user).iter().zip(self.v(j)).map(|(a, b)| a * b).sum();
        self.w0() + self.w(user) + self.w(j) + dot
    }

    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        Ok(sigmoid(self.logit(user, item)?))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, user: usize, item: usize) -> f64 {
        sigmoid(self.logit_unchecked(user, item))
    }

    /// Adds `dz · ∂z/∂params` for the pair's logit `z` into `grad`.
    #[inline]
    pub(crate) fn backprop_logit(&self, user: usize, item: usize, dz: f64, grad: &mut [f64]) {
        let j = self.num_users + item;
        grad[0] += dz;
        grad[1 + user] += dz;
        grad[1 + j] += dz;
        let off = self.v_offset();
        let (vu, vi) = (self.v(user), self.v(j));
        for f in 0..self.dim {
            grad[off + user * self.dim + f] += dz * vi[f];
            grad[off + j * self.dim + f] += dz * vu[f];
        }
    }

    /// `λ‖params‖²`, adding its gradient `2λ·params` into `grad`.
    pub fn add_l2(&self, lambda: f64, grad: &mut [f64]) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        let mut sq = 0.0;
        for (g, &x) in grad.iter_mut().zip(&self.data) {
            sq += x * x;
            *g += 2.0 * lambda * x;
        }
        lambda * sq
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }
}

/// One weighted soft-label example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub user: usize,
    pub item: usize,
    pub weight: f64,
    pub label: f64,
}

/// `Σ weight·CE(label, ŷ) + λ‖params‖²` and its exact gradient. The logit
/// gradient of sigmoid + CE is `weight·(ŷ − label)`.
pub fn fm_gradients(params: &FmParams, batch: &[Example], l2: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for ex in batch {
        params.check(ex.user, ex.item)?;
        let y = params.predict_unchecked(ex.user, ex.item);
        loss += ex.weight * cross_entropy(ex.label, y);
        params.backprop_logit(ex.user, ex.item, ex.weight * (y - ex.label), &mut grad);
    }
    loss += params.add_l2(l2, &mut grad);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_params_predict_half() {
        let p = FmParams::zeros(2, 3, 4).unwrap();
        assert_eq!(p.predict(1, 2).unwrap(), 0.5);
        assert!(matches!(p.predict(2, 0), Err(Error::Lookup(_))));
        assert!(FmParams::zeros(2, 3, 0).is_err());
    }

    #[test]
    fn inner_product_hand_value() {
        let mut p = FmParams::zeros(1, 1, 2).unwrap();
        p.v_mut(0)[0] = 1.0;
        p.v_mut(1)[0] = 1.0;
        assert_relative_eq!(p.predict(0, 0).unwrap(), 0.731_058_578_630_004_9, epsilon = 1e-15);
    }

    #[test]
    fn zero_padding_is_inert() {
        let p = FmParams::init(3, 4, 2, 7, 0).unwrap();
        let mut wide = FmParams::zeros(3, 4, 5).unwrap();
        wide.set_w0(p.w0());
        for f in 0..p.num_features() {
            *wide.w_mut(f) = p.w(f);
            wide.v_mut(f)[..2].copy_from_slice(p.v(f));
        }
        for u in 0..3 {
            for i in 0..4 {
                assert_eq!(p.logit(u, i).unwrap(), wide.logit(u, i).unwrap());
            }
        }
    }

    #[test]
    fn init_ranges() {
        let p = FmParams::init(5, 6, 8, 1, 2).unwrap();
        assert_eq!(p.w0(), 0.0);
        assert!((0..11).all(|f| p.w(f) == 0.0));
        assert!((0..11).all(|f| p.v(f).iter().all(|x| x.abs() < 0.01)));
        assert_eq!(p, FmParams::init(5, 6, 8, 1, 2).unwrap());
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let p = FmParams::init(2, 2, 3, 4, 0).unwrap();
        let batch: Vec<Example> = (0..2)
            .flat_map(|u| (0..2).map(move |i| (u, i)))
            .map(|(u, i)| Example { user: u, item: i, weight: 1.3, label: p.predict(u, i).unwrap() })
            .collect();
        let (_, g) = fm_gradients(&p, &batch, 0.0).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn single_example_logit_gradient() {
        let mut p = FmParams::zeros(1, 1, 1).unwrap();
        p.v_mut(0)[0] = 0.5;
        p.v_mut(1)[0] = 0.0;
        // ŷ = 0.5, label 1, weight 2 → dz = −1
        let ex = Example { user: 0, item: 0, weight: 2.0, label: 1.0 };
        let (loss, g) = fm_gradients(&p, &[ex], 0.0).unwrap();
        assert_relative_eq!(loss, 2.0 * 2f64.ln(), epsilon = 1e-12);
        assert_eq!(&g[..3], &[-1.0, -1.0, -1.0]);
        // ∂z/∂V_u = V_i = 0, ∂z/∂V_i = V_u = 0.5
        assert_eq!(&g[3..], &[0.0, -0.5]);
    }

    #[test]
    fn l2_term() {
        let p = FmParams::init(2, 2, 2, 3, 0).unwrap();
        let mut g = p.zeros_like();
        let v = p.add_l2(0.5, &mut g);
        assert_relative_eq!(v, 0.5 * p.l2_norm_sq());
        for (gi, xi) in g.iter().zip(p.as_slice()) {
            assert_relative_eq!(*gi, xi);
        }
    }
}
