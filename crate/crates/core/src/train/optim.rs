//! Adam for Euclidean parameters, plain gradient descent for curvatures.

use crate::autodiff::{AutodiffError, Tensor};
use crate::model::{KgcnParams, SlotKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), AutodiffError> {
        if params.len() != grads.len() {
            return Err(AutodiffError::Shape(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(AutodiffError::Shape(format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(AutodiffError::Shape("parameter set changed between steps".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let pd = p.data_mut();
            for (((w, &gi), mi), vi) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Routes gradients to Adam (Euclidean slots) or gradient descent (curvature slots).
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub adam: Adam,
    pub lr_curvature: f64,
}

impl Optimizer {
    pub fn new(lr_euclidean: f64, lr_curvature: f64) -> Self {
        Self { adam: Adam::new(lr_euclidean), lr_curvature }
    }

    /// `grads` follows the order of [`KgcnParams::slots`].
    pub fn step(&mut self, params: &mut KgcnParams, grads: &[Tensor]) -> Result<(), AutodiffError> {
        let slots = params.slots_mut();
        if slots.len() != grads.len() {
            return Err(AutodiffError::Shape(format!("{} slots but {} gradients", slots.len(), grads.len())));
        }
        let mut euclid = Vec::new();
        let mut euclid_grads = Vec::new();
        for ((kind, p), g) in slots.into_iter().zip(grads) {
            match kind {
                SlotKind::Curvature => {
                    for (w, gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr_curvature * gi;
                    }
                }
                SlotKind::Euclidean => {
                    euclid.push(p);
                    euclid_grads.push(g.clone());
                }
            }
        }
        self.adam.step(&mut euclid, &euclid_grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Family, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_by_hand() {
        let mut adam = Adam::new(0.1);
        let mut p = Tensor::vector(vec![1.0]);
        adam.step(&mut [&mut p], &[Tensor::vector(vec![2.0])]).unwrap();
        let expect = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(0.1);
        let mut p = Tensor::vector(vec![0.3, -0.2]);
        let mut q = Tensor::vector(vec![5.0]);
        for _ in 0..3 {
            adam.step(&mut [&mut p, &mut q], &[Tensor::vector(vec![0.0, 0.0]), Tensor::vector(vec![1.0])]).unwrap();
        }
        assert_eq!(p.data(), &[0.3, -0.2]);
        assert!(q.data()[0] < 5.0);
        assert!(adam.step(&mut [&mut p], &[Tensor::vector(vec![1.0])]).is_err());
    }

    #[test]
    fn learning_rates_are_routed_by_slot_kind() {
        let cfg = ModelConfig::distortion(Family::Hyperbolic);
        let mut params = KgcnParams::init(&cfg, 3, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = params.clone();
        let grads: Vec<Tensor> = params.slots().iter().map(|(_, t)| Tensor::full(t.shape(), 1.0)).collect();
        let mut opt = Optimizer::new(0.01, 1e-4);
        opt.step(&mut params, &grads).unwrap();
        for ((kind, a), (_, b)) in params.slots().iter().zip(before.slots()) {
            let step = (b.data()[0] - a.data()[0]).abs();
            match kind {
                SlotKind::Curvature => assert!((step - 1e-4).abs() < 1e-15),
                SlotKind::Euclidean => assert!((step - 0.01).abs() < 1e-9),
            }
        }
    }
}
