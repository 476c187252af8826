use crate::error::{dim_err, Error, Result};
use crate::tensor::{Tensor, Var};

/// Luma weights for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Planar image with 1 or 3 channels and pixels in `[0, 1]`, stored as
/// `[channels, height, width]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return dim_err(format!("image must have 1 or 3 channels, got {channels}"));
        }
        if height == 0 || width == 0 {
            return dim_err("image dimensions must be at least 1");
        }
        if data.len() != channels * height * width {
            return dim_err(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            ));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Builds an image from a `[C, H, W]` tensor, clamping values into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        t.expect_rank(3, "image tensor")?;
        t.expect_finite("image tensor")?;
        let s = t.shape();
        Self::new(s[0], s[1], s[2], t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.channels, self.height, self.width], self.data.clone())
            .expect("image dims are valid")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Corner-aligned bilinear resize.
    pub fn resized(&self, height: usize, width: usize) -> Result<Image> {
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let tape = crate::tensor::Tape::new();
        let out = tape.constant(self.to_tensor()).resize_to(height, width)?;
        Image::from_tensor(&out.value())
    }
}

/// `0.299 R + 0.587 G + 0.114 B` on a `[3, H, W]` var, giving `[1, H, W]`.
pub fn to_grayscale<'t>(rgb: Var<'t>) -> Result<Var<'t>> {
    let shape = rgb.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return dim_err(format!("grayscale expects [3, H, W], got {shape:?}"));
    }
    let tape = rgb.tape();
    let w = tape.constant(Tensor::new(&[1, 3, 1, 1], LUMA_WEIGHTS.to_vec())?);
    rgb.conv2d(w, tape.constant(Tensor::zeros(&[1])), 1, 0)
}

impl Image {
    /// Luma of a 3-channel image.
    pub fn grayscale(&self) -> Result<Image> {
        let tape = crate::tensor::Tape::new();
        let g = to_grayscale(tape.constant(self.to_tensor()))?;
        Image::from_tensor(&g.value())
    }
}
