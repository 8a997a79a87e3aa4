//! Stochastic view generation for positive pairs.
//!
//! Images are `[c, h, w]` tensors with values in `[0, 1]`. Geometric
//! transforms resample every channel with the same bilinear map and fill
//! out-of-bounds samples with zero; all transforms clamp their output to
//! `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Uniform draws consumed by one [`augment`] call, whatever the outcome.
pub const DRAWS_PER_VIEW: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation_max_deg: f64,
    pub shift_max_frac: f64,
    pub zoom_range: [f64; 2],
    pub gamma_range: [f64; 2],
    pub brightness_delta_max: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub rotate: bool,
    pub shift: bool,
    pub zoom: bool,
    pub gamma: bool,
    pub brightness: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_max_deg: 25.0,
            shift_max_frac: 0.1,
            zoom_range: [0.9, 1.1],
            gamma_range: [0.8, 1.2],
            brightness_delta_max: 0.1,
            flip_horizontal: true,
            flip_vertical: true,
            rotate: true,
            shift: true,
            zoom: true,
            gamma: true,
            brightness: true,
        }
    }
}

impl AugmentConfig {
    /// Same ranges, every transform switched off.
    pub fn disabled() -> Self {
        Self {
            flip_horizontal: false,
            flip_vertical: false,
            rotate: false,
            shift: false,
            zoom: false,
            gamma: false,
            brightness: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, [lo, hi]) in [("zoom_range", self.zoom_range), ("gamma_range", self.gamma_range)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::config(field, format!("need 0 < lower <= upper, got [{lo}, {hi}]")));
            }
        }
        for (field, v) in [
            ("rotation_max_deg", self.rotation_max_deg),
            ("shift_max_frac", self.shift_max_frac),
            ("brightness_delta_max", self.brightness_delta_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Mirror left-right (reverse columns).
    Horizontal,
    /// Mirror top-bottom (reverse rows).
    Vertical,
}

fn dims(image: &Tensor) -> (usize, usize, usize) {
    let s = image.shape();
    assert_eq!(s.len(), 3, "images are [c, h, w]");
    (s[0], s[1], s[2])
}

fn from_fn(image: &Tensor, f: impl Fn(&[f64], usize, usize) -> f64) -> Tensor {
    let (c, h, w) = dims(image);
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                out.push(f(plane, y, x).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("same shape")
}

pub fn flip(image: &Tensor, axis: Axis) -> Tensor {
    let (_, h, w) = dims(image);
    from_fn(image, |p, y, x| match axis {
        Axis::Horizontal => p[y * w + (w - 1 - x)],
        Axis::Vertical => p[(h - 1 - y) * w + x],
    })
}

fn bilinear(plane: &[f64], h: usize, w: usize, sy: f64, sx: f64) -> f64 {
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0);
    let bottom = (1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0);
    (1.0 - fy) * top + fy * bottom
}

/// Resamples through `map`, which sends an output `(y, x)` to a source position.
fn resample(image: &Tensor, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor {
    let (_, h, w) = dims(image);
    from_fn(image, |p, y, x| {
        let (sy, sx) = map(y as f64, x as f64);
        bilinear(p, h, w, sy, sx)
    })
}

fn center(image: &Tensor) -> (f64, f64) {
    let (_, h, w) = dims(image);
    ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0)
}

/// Counterclockwise rotation about the image center. Quarter turns of a
/// square image are exact index permutations.
pub fn rotate(image: &Tensor, degrees: f64) -> Tensor {
    let (_, h, w) = dims(image);
    let turns = degrees / 90.0;
    if turns == turns.round() && h == w {
        let n = h;
        return match (turns as i64).rem_euclid(4) {
            0 => image.clone(),
            1 => from_fn(image, |p, y, x| p[(n - 1 - x) * n + y]),
            2 => from_fn(image, |p, y, x| p[(n - 1 - y) * n + (n - 1 - x)]),
            _ => from_fn(image, |p, y, x| p[x * n + (n - 1 - y)]),
        };
    }
    if degrees == 0.0 {
        return image.clone();
    }
    let (cy, cx) = center(image);
    let (s, c) = degrees.to_radians().sin_cos();
    resample(image, |y, x| {
        let (u, v) = (x - cx, y - cy);
        // inverse rotation of the output coordinate
        (cy - u * s + v * c, cx + u * c + v * s)
    })
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn check_bound(field: &'static str, value: f64, max: f64) -> Result<()> {
    if !(value.abs() <= max) {
        return Err(Error::config(field, format!("|{value}| exceeds bound {max}")));
    }
    Ok(())
}

fn check_range(field: &'static str, value: f64, [lo, hi]: [f64; 2]) -> Result<()> {
    if !(lo..=hi).contains(&value) {
        return Err(Error::config(field, format!("{value} outside [{lo}, {hi}]")));
    }
    Ok(())
}

/// Translation by fractions of the width (`dx_frac`) and height (`dy_frac`).
pub fn shift(image: &Tensor, dx_frac: f64, dy_frac: f64, config: &AugmentConfig) -> Result<Tensor> {
    check_bound("shift dx", dx_frac, config.shift_max_frac)?;
    check_bound("shift dy", dy_frac, config.shift_max_frac)?;
    Ok(shift_unchecked(image, dx_frac, dy_frac))
}

fn shift_unchecked(image: &Tensor, dx_frac: f64, dy_frac: f64) -> Tensor {
    if dx_frac == 0.0 && dy_frac == 0.0 {
        return image.clone();
    }
    let (_, h, w) = dims(image);
    let (dx, dy) = (dx_frac * w as f64, dy_frac * h as f64);
    resample(image, |y, x| (y - dy, x - dx))
}

/// Central scaling; `factor > 1` magnifies.
pub fn zoom(image: &Tensor, factor: f64, config: &AugmentConfig) -> Result<Tensor> {
    check_range("zoom factor", factor, config.zoom_range)?;
    Ok(zoom_unchecked(image, factor))
}

fn zoom_unchecked(image: &Tensor, factor: f64) -> Tensor {
    if factor == 1.0 {
        return image.clone();
    }
    let (cy, cx) = center(image);
    resample(image, |y, x| (cy + (y - cy) / factor, cx + (x - cx) / factor))
}

pub fn adjust_gamma(image: &Tensor, gamma: f64, config: &AugmentConfig) -> Result<Tensor> {
    check_range("gamma", gamma, config.gamma_range)?;
    Ok(gamma_unchecked(image, gamma))
}

fn gamma_unchecked(image: &Tensor, gamma: f64) -> Tensor {
    if gamma == 1.0 {
        return image.clone();
    }
    let (_, _, w) = dims(image);
    from_fn(image, |p, y, x| p[y * w + x].powf(gamma))
}

pub fn adjust_brightness(image: &Tensor, delta: f64, config: &AugmentConfig) -> Result<Tensor> {
    check_bound("brightness delta", delta, config.brightness_delta_max)?;
    Ok(brightness_unchecked(image, delta))
}

fn brightness_unchecked(image: &Tensor, delta: f64) -> Tensor {
    let (_, _, w) = dims(image);
    from_fn(image, |p, y, x| p[y * w + x] + delta)
}

/// One sampled set of transform parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub rotation_deg: f64,
    pub shift_dx: f64,
    pub shift_dy: f64,
    pub zoom: f64,
    pub gamma: f64,
    pub brightness: f64,
}

impl AugmentParams {
    /// Draws exactly [`DRAWS_PER_VIEW`] uniforms from `rng`, in field order.
    pub fn sample<R: Rng + ?Sized>(config: &AugmentConfig, rng: &mut R) -> Self {
        let mut u = [0.0f64; DRAWS_PER_VIEW];
        for slot in &mut u {
            *slot = rng.random::<f64>();
        }
        let symmetric = |u: f64, max: f64| (2.0 * u - 1.0) * max;
        let within = |u: f64, [lo, hi]: [f64; 2]| lo + u * (hi - lo);
        Self {
            flip_horizontal: u[0] < 0.5,
            flip_vertical: u[1] < 0.5,
            rotation_deg: symmetric(u[2], config.rotation_max_deg),
            shift_dx: symmetric(u[3], config.shift_max_frac),
            shift_dy: symmetric(u[4], config.shift_max_frac),
            zoom: within(u[5], config.zoom_range),
            gamma: within(u[6], config.gamma_range),
            brightness: symmetric(u[7], config.brightness_delta_max),
        }
    }

    /// Applies the enabled transforms in the fixed pipeline order.
    pub fn apply(&self, image: &Tensor, config: &AugmentConfig) -> Tensor {
        let mut out = image.clone();
        if config.flip_horizontal && self.flip_horizontal {
            out = flip(&out, Axis::Horizontal);
        }
        if config.flip_vertical && self.flip_vertical {
            out = flip(&out, Axis::Vertical);
        }
        if config.rotate {
            out = rotate(&out, self.rotation_deg);
        }
        if config.shift {
            out = shift_unchecked(&out, self.shift_dx, self.shift_dy);
        }
        if config.zoom {
            out = zoom_unchecked(&out, self.zoom);
        }
        if config.gamma {
            out = gamma_unchecked(&out, self.gamma);
        }
        if config.brightness {
            out = brightness_unchecked(&out, self.brightness);
        }
        out
    }
}

/// Random view of `image`: flip-h, flip-v, rotate, shift, zoom, gamma, brightness.
pub fn augment<R: Rng + ?Sized>(image: &Tensor, config: &AugmentConfig, rng: &mut R) -> Tensor {
    AugmentParams::sample(config, rng).apply(image, config)
}
