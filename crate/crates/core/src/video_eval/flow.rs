use std::path::Path;

use crate::error::{dim_err, Error, Result};
use crate::tensor::bilinear_taps;

/// Sanity value at the start of every `.flo` file.
pub const FLO_MAGIC: f32 = 202021.25;

/// Dense per-pixel displacement `(u, v)` in pixels, row-major, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return dim_err("flow field dimensions must be at least 1");
        }
        if data.len() != 2 * height * width {
            return dim_err(format!(
                "flow {height}x{width} needs {} values, got {}",
                2 * height * width,
                data.len()
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("flow field contains non-finite vectors".into()));
        }
        Ok(FlowField { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::uniform(height, width, 0.0, 0.0)
    }

    pub fn uniform(height: usize, width: usize, u: f32, v: f32) -> Result<Self> {
        Self::from_fn(height, width, |_, _| (u, v))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Result<Self> {
        let mut data = Vec::with_capacity(2 * height * width);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(y, x);
                data.push(u);
                data.push(v);
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        let i = 2 * (y * self.width + x);
        (self.data[i], self.data[i + 1])
    }

    /// Sample positions `p + flow(p)` as `(x, y)`, row-major.
    pub fn targets(&self) -> Vec<(f64, f64)> {
        (0..self.height * self.width)
            .map(|i| {
                let (y, x) = (i / self.width, i % self.width);
                let (u, v) = self.get(y, x);
                (x as f64 + u as f64, y as f64 + v as f64)
            })
            .collect()
    }

    /// Bilinear sample of the flow at a continuous position; `None` outside.
    pub fn sample(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let taps = bilinear_taps(x, y, self.height, self.width)?;
        let mut out = (0.0, 0.0);
        for (i, w) in taps {
            out.0 += w * self.data[2 * i] as f64;
            out.1 += w * self.data[2 * i + 1] as f64;
        }
        Some(out)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        out.extend_from_slice(&(self.width as i32).to_le_bytes());
        out.extend_from_slice(&(self.height as i32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Truncated {
                offset: bytes.len(),
                msg: "flo header needs 12 bytes".into(),
            });
        }
        let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
        if f32::from_le_bytes(word(0)) != FLO_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad .flo magic".into(),
            });
        }
        let (w, h) = (i32::from_le_bytes(word(4)), i32::from_le_bytes(word(8)));
        if w <= 0 || h <= 0 {
            return Err(Error::Format {
                offset: 4,
                msg: format!("invalid .flo dimensions {w}x{h}"),
            });
        }
        let (w, h) = (w as usize, h as usize);
        let expected = 12 + 8 * w * h;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                offset: bytes.len().min(expected),
                msg: format!("{w}x{h} flow needs {expected} bytes, file has {}", bytes.len()),
            });
        }
        let data = bytes[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(h, w, data)
    }
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    FlowField::decode(&std::fs::read(path)?)
}

pub fn write_flo(field: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, field.encode())?;
    Ok(())
}

/// Chains consecutive backward flows into flows to the first frame.
///
/// `short[k]` maps the grid of frame `k` to frame `k + 1` (0-based), i.e.
/// it is the flow used to warp frame `k + 1` onto frame `k`. The result's
/// entry `k` maps frame 0 to frame `k + 1`, with a validity mask that is false
/// wherever the chain left the frame.
pub fn compose_flows(short: &[FlowField]) -> Result<Vec<(FlowField, Vec<bool>)>> {
    let Some(first) = short.first() else {
        return Ok(Vec::new());
    };
    let (h, w) = (first.height, first.width);
    let mut acc = vec![(0.0f64, 0.0f64); h * w];
    let mut valid = vec![true; h * w];
    let mut out = Vec::with_capacity(short.len());
    for f in short {
        if (f.height, f.width) != (h, w) {
            return dim_err("compose_flows: flows differ in size");
        }
        for (i, (d, ok)) in acc.iter_mut().zip(valid.iter_mut()).enumerate() {
            if !*ok {
                continue;
            }
            let (x, y) = ((i % w) as f64 + d.0, (i / w) as f64 + d.1);
            match f.sample(x, y) {
                Some((u, v)) => {
                    d.0 += u;
                    d.1 += v;
                    let (tx, ty) = ((i % w) as f64 + d.0, (i / w) as f64 + d.1);
                    *ok = tx >= 0.0 && ty >= 0.0 && tx <= (w - 1) as f64 && ty <= (h - 1) as f64;
                }
                None => *ok = false,
            }
        }
        let data = acc.iter().flat_map(|&(u, v)| [u as f32, v as f32]).collect();
        out.push((FlowField::new(h, w, data)?, valid.clone()));
    }
    Ok(out)
}
