use crate::error::{Result, TensorError};
use crate::params::ParamRegistry;

/// SGD with heavy-ball momentum and L2 weight decay folded into the
/// velocity:
///
/// ```text
/// v <- momentum * v + grad + weight_decay * param
/// param <- param - lr * v
/// ```
///
/// Velocity buffers are keyed by registry position and persist across
/// steps. A parameter without a gradient is treated as having a zero one.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Applies one update to every parameter, then clears all gradients.
    pub fn step(&mut self, params: &ParamRegistry) -> Result<()> {
        if self.velocity.len() > params.len() {
            return Err(TensorError::invalid(
                "sgd",
                "registry shrank since the optimizer was created",
            ));
        }
        for (i, (_, p)) in params.iter().enumerate() {
            if self.velocity.len() <= i {
                self.velocity.push(vec![0.0; p.numel()]);
            }
            let v = &mut self.velocity[i];
            if v.len() != p.numel() {
                return Err(TensorError::invalid("sgd", "parameter size changed"));
            }
            let grad = p.grad();
            let mut data = p.data_mut();
            for (j, (vj, pj)) in v.iter_mut().zip(data.iter_mut()).enumerate() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                *vj = self.momentum * *vj + g + self.weight_decay * *pj;
                *pj -= self.lr * *vj;
            }
        }
        params.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn registry(value: f64) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        reg.register("p", Tensor::full(&[1], value)).unwrap();
        reg
    }

    fn set_grad(reg: &ParamRegistry, g: f64) {
        let p = reg.get("p").unwrap();
        let y = crate::ops::scale(p, g);
        y.backward().unwrap();
    }

    #[test]
    fn vanilla_step() {
        let reg = registry(1.0);
        set_grad(&reg, 0.5);
        Sgd::new(0.1, 0.0, 0.0).step(&reg).unwrap();
        assert!((reg.get("p").unwrap().item() - 0.95).abs() < 1e-15);
        assert_eq!(reg.get("p").unwrap().grad(), None);
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let reg = registry(2.0);
        Sgd::new(0.1, 0.9, 0.0).step(&reg).unwrap();
        assert_eq!(reg.get("p").unwrap().item(), 2.0);
    }

    #[test]
    fn missing_grad_still_decays() {
        let reg = registry(2.0);
        Sgd::new(0.5, 0.0, 0.1).step(&reg).unwrap();
        assert!((reg.get("p").unwrap().item() - 1.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_unrolls() {
        // v1 = g, v2 = 0.9 g + g: total displacement -(1 + 1.9) g.
        let g = 0.25;
        let reg = registry(0.0);
        let mut opt = Sgd::new(1.0, 0.9, 0.0);
        for _ in 0..2 {
            set_grad(&reg, g);
            opt.step(&reg).unwrap();
        }
        assert!((reg.get("p").unwrap().item() + 2.9 * g).abs() < 1e-15);
    }
}
