use icpe_tensor::{ops, ParamRegistry, Tensor};
use rand::Rng;

use crate::error::{IcpeError, Result};
use crate::layers::{Conv, Init};

/// RGB plus the support-mask channel.
pub const INPUT_CHANNELS: usize = 4;
pub const STRIDE: usize = 8;

/// Fixed input normalization of the RGB channels (pixels are in `[0, 1]`).
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// Three stages of conv3x3, relu, 2x2 average pooling.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub stages: Vec<Conv>,
}

impl Backbone {
    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParamRegistry,
        prefix: &str,
        widths: [usize; 3],
        rng: &mut R,
    ) -> Result<Self> {
        let mut cin = INPUT_CHANNELS;
        let mut stages = Vec::with_capacity(3);
        for (i, &cout) in widths.iter().enumerate() {
            let name = format!("{prefix}.conv{}", i + 1);
            stages.push(Conv::register(reg, &name, cin, cout, 3, Init::Kaiming, rng)?);
            cin = cout;
        }
        Ok(Backbone { stages })
    }

    pub fn lookup(reg: &ParamRegistry, prefix: &str) -> Result<Self> {
        let stages = (1..=3)
            .map(|i| Conv::lookup(reg, &format!("{prefix}.conv{i}")))
            .collect::<Result<_>>()?;
        Ok(Backbone { stages })
    }

    /// `image: [3, H, W]`, `mask: [1, H, W]`. The query branch passes no
    /// mask and gets a zero fourth channel.
    pub fn forward(&self, image: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (h, w) = match *image.shape() {
            [3, h, w] => (h, w),
            ref s => return Err(IcpeError::invalid(format!("image must be [3, H, W], got {s:?}"))),
        };
        if h % STRIDE != 0 || w % STRIDE != 0 {
            return Err(IcpeError::invalid(format!(
                "image size {h}x{w} is not divisible by {STRIDE}"
            )));
        }
        let fourth = match mask {
            Some(m) if m.shape() == [1, h, w] => m.clone(),
            Some(m) => {
                return Err(IcpeError::invalid(format!(
                    "mask must be [1, {h}, {w}], got {:?}",
                    m.shape()
                )))
            }
            None => Tensor::zeros(&[1, h, w]),
        };
        let centered = ops::add(image, &Tensor::full(&[3, h, w], -PIXEL_MEAN))?;
        let rgb = ops::scale(&centered, 1.0 / PIXEL_STD);
        let mut x = ops::concat(&[rgb, fourth], 0)?;
        for stage in &self.stages {
            x = ops::avg_pool2(&ops::relu(&stage.forward(&x)?))?;
        }
        Ok(x)
    }
}
