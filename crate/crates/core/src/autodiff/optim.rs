//! SGD with momentum and L2 weight decay.

use crate::autodiff::graph::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0) {
            return Err(Error::config(format!("learning rate must be >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    /// `v <- momentum*v + grad + weight_decay*param; param <- param - lr*v`
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape("gradient count does not match parameters"));
        }
        if self.velocity.is_empty() {
            self.velocity = params.ids().map(|id| Tensor::zeros(params.get(id).dims())).collect();
        }
        for id in params.ids() {
            let g = grads.get(id);
            let p = params.get_mut(id);
            if g.dims() != p.dims() {
                return Err(Error::shape(format!(
                    "gradient {:?} vs parameter {:?}",
                    g.dims(),
                    p.dims()
                )));
            }
            let v = &mut self.velocity[id.0];
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = self.momentum * *vv + gv + self.weight_decay * *pv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParamStore, crate::autodiff::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(v));
        (s, id)
    }

    fn grads_of(s: &ParamStore, id: crate::autodiff::ParamId, g: f64) -> Gradients {
        let mut gr = s.zeros_like();
        gr.get_mut(id).data_mut()[0] = g;
        gr
    }

    #[test]
    fn zero_lr_is_noop() {
        let (mut s, id) = one_param(1.5);
        let g = grads_of(&s, id, 3.0);
        let mut opt = Sgd::new(0.0, 0.9, 4e-5).unwrap();
        for _ in 0..5 {
            opt.step(&mut s, &g).unwrap();
        }
        assert_eq!(s.get(id).data(), &[1.5]);
    }

    #[test]
    fn plain_step() {
        let (mut s, id) = one_param(1.5);
        let g = grads_of(&s, id, 0.25);
        Sgd::new(1.0, 0.0, 0.0).unwrap().step(&mut s, &g).unwrap();
        assert_eq!(s.get(id).data(), &[1.25]);
    }

    #[test]
    fn three_step_recurrence() {
        let (lr, mu, wd) = (0.1, 0.9, 4e-5);
        let (mut s, id) = one_param(2.0);
        let gs = [0.5, -1.0, 0.25];
        let mut opt = Sgd::new(lr, mu, wd).unwrap();
        for g in gs {
            let gr = grads_of(&s, id, g);
            opt.step(&mut s, &gr).unwrap();
        }
        // Hand-unrolled.
        let p0 = 2.0;
        let v1 = 0.5 + wd * p0;
        let p1 = p0 - lr * v1;
        let v2 = mu * v1 - 1.0 + wd * p1;
        let p2 = p1 - lr * v2;
        let v3 = mu * v2 + 0.25 + wd * p2;
        let p3 = p2 - lr * v3;
        assert!((s.get(id).data()[0] - p3).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Sgd::new(-0.1, 0.9, 0.0).is_err());
        assert!(Sgd::new(0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let (mut s, _) = one_param(1.0);
        let mut other = ParamStore::new();
        other.add("p", Tensor::from_vec(vec![1.0, 2.0]));
        let g = other.zeros_like();
        assert!(matches!(
            Sgd::new(0.1, 0.0, 0.0).unwrap().step(&mut s, &g),
            Err(Error::Shape(_))
        ));
    }
}
