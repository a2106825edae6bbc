//! Convolution and fully connected layers whose weights live in a
//! [`ParamRegistry`] under `<name>.weight` / `<name>.bias`.

use icpe_tensor::{ops, ParamRegistry, Tensor};
use rand::Rng;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±1/√fan_in.
    FanIn,
    /// Uniform in ±√(6/fan_in), for layers followed by relu.
    Kaiming,
    Zero,
}

impl Init {
    fn bound(self, fan_in: usize) -> f64 {
        match self {
            Init::FanIn => 1.0 / (fan_in as f64).sqrt(),
            Init::Kaiming => (6.0 / fan_in as f64).sqrt(),
            Init::Zero => 0.0,
        }
    }
}

fn register_pair<R: Rng + ?Sized>(
    reg: &mut ParamRegistry,
    name: &str,
    weight_shape: &[usize],
    bias_len: usize,
    fan_in: usize,
    init: Init,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    let weight = match init {
        Init::Zero => reg.zeros(format!("{name}.weight"), weight_shape)?,
        _ => reg.uniform(format!("{name}.weight"), weight_shape, init.bound(fan_in), rng)?,
    };
    let bias = reg.zeros(format!("{name}.bias"), &[bias_len])?;
    Ok((weight, bias))
}

fn lookup(reg: &ParamRegistry, name: &str) -> Result<(Tensor, Tensor)> {
    Ok((
        reg.get(&format!("{name}.weight"))?.clone(),
        reg.get(&format!("{name}.bias"))?.clone(),
    ))
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv {
    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParamRegistry,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let (weight, bias) =
            register_pair(reg, name, &[cout, cin, k, k], cout, cin * k * k, init, rng)?;
        Ok(Conv { weight, bias })
    }

    pub fn lookup(reg: &ParamRegistry, name: &str) -> Result<Self> {
        let (weight, bias) = lookup(reg, name)?;
        Ok(Conv { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::conv2d(x, &self.weight, &self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParamRegistry,
        name: &str,
        cin: usize,
        cout: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let (weight, bias) = register_pair(reg, name, &[cout, cin], cout, cin, init, rng)?;
        Ok(Linear { weight, bias })
    }

    pub fn lookup(reg: &ParamRegistry, name: &str) -> Result<Self> {
        let (weight, bias) = lookup(reg, name)?;
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::linear(x, &self.weight, &self.bias)?)
    }
}
