//! Synthetic phantoms `I = b * J + n` with known truth, bias and noise.
//!
//! A phantom spec is a plain `key = value` text file:
//!
//! ```text
//! width = 128
//! height = 128
//! # one row per region, channels separated by commas
//! constants = 160; 60
//! # disk <center col> <center row> <radius> <region>
//! shape = disk 64 64 32 1
//! # one weight list per channel
//! bias = 1.0, 0.25, 0, 0, 0.2
//! noise_sigma = 5
//! seed = 7
//! ```
//!
//! Other shapes are `rect <col0> <row0> <col1> <row1> <region>` (half-open)
//! and `halfplane <a> <b> <c> <region>` covering `a*col + b*row >= c`.
//! Later shapes override earlier ones; uncovered pixels belong to
//! `background`, which defaults to the last region.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::basis::{build_basis, eval_bias, MAX_BASIS};
use crate::error::{Error, Result};
use crate::imagegrid::{LabelMap, RasterImage, ScalarField};

/// Smallest bias value a phantom may contain.
pub const MIN_BIAS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disk { col: f64, row: f64, radius: f64 },
    Rect { col0: f64, row0: f64, col1: f64, row1: f64 },
    HalfPlane { a: f64, b: f64, c: f64 },
}

impl Shape {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        let (r, c) = (row as f64, col as f64);
        match *self {
            Shape::Disk { col, row, radius } => (c - col).hypot(r - row) <= radius,
            Shape::Rect { col0, row0, col1, row1 } => c >= col0 && c < col1 && r >= row0 && r < row1,
            Shape::HalfPlane { a, b, c: off } => a * c + b * r >= off,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    /// `(shape, region)`, one-based regions.
    pub shapes: Vec<(Shape, usize)>,
    /// `constants[i][j]` is the true intensity of region `i + 1` in channel `j`.
    pub constants: Vec<Vec<f64>>,
    /// One weight column per channel.
    pub bias_coeffs: Vec<Vec<f64>>,
    pub noise_sigma: Vec<f64>,
    pub seed: u64,
    pub background: usize,
}

impl PhantomSpec {
    pub fn phases(&self) -> usize {
        self.constants.len()
    }

    pub fn channels(&self) -> usize {
        self.constants.first().map_or(0, Vec::len)
    }

    /// A two-phase single-channel spec with a centered disk as region 1.
    pub fn centered_disk(width: usize, height: usize, inside: f64, outside: f64, radius: f64) -> Self {
        Self {
            width,
            height,
            shapes: vec![(
                Shape::Disk {
                    col: (width as f64 - 1.0) / 2.0,
                    row: (height as f64 - 1.0) / 2.0,
                    radius,
                },
                1,
            )],
            constants: vec![vec![inside], vec![outside]],
            bias_coeffs: vec![vec![1.0]],
            noise_sigma: vec![0.0],
            seed: 0,
            background: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::Spec(format!("grid {}x{} is too small", self.width, self.height)));
        }
        let n = self.phases();
        let l = self.channels();
        if n < 2 || n > u8::MAX as usize {
            return Err(Error::Spec(format!("need 2..=255 regions in constants, got {n}")));
        }
        if l == 0 || self.constants.iter().any(|r| r.len() != l) {
            return Err(Error::Spec("constants rows must share one positive channel count".into()));
        }
        if self.constants.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Spec("constants must be finite".into()));
        }
        for j in 0..l {
            for a in 0..n {
                for b in a + 1..n {
                    if self.constants[a][j] == self.constants[b][j] {
                        return Err(Error::Spec(format!(
                            "regions {} and {} share constant {} in channel {}",
                            a + 1,
                            b + 1,
                            self.constants[a][j],
                            j + 1
                        )));
                    }
                }
            }
        }
        if self.bias_coeffs.len() != l {
            return Err(Error::Spec(format!("{} bias columns for {} channels", self.bias_coeffs.len(), l)));
        }
        let m = self.bias_coeffs[0].len();
        if m == 0 || m > MAX_BASIS || self.bias_coeffs.iter().any(|w| w.len() != m) {
            return Err(Error::Spec(format!("bias columns need a common length in 1..={MAX_BASIS}")));
        }
        if self.bias_coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Spec("bias coefficients must be finite".into()));
        }
        if self.noise_sigma.len() != l || self.noise_sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Spec("noise_sigma needs one nonnegative value per channel".into()));
        }
        if self.background == 0 || self.background > n {
            return Err(Error::Spec(format!("background region {} outside 1..={n}", self.background)));
        }
        for (shape, region) in &self.shapes {
            if *region == 0 || *region > n {
                return Err(Error::Spec(format!("shape region {region} outside 1..={n}")));
            }
            let ok = match *shape {
                Shape::Disk { col, row, radius } => col.is_finite() && row.is_finite() && radius.is_finite() && radius > 0.0,
                Shape::Rect { col0, row0, col1, row1 } => col1 > col0 && row1 > row0,
                Shape::HalfPlane { a, b, c } => (a != 0.0 || b != 0.0) && c.is_finite(),
            };
            if !ok {
                return Err(Error::Spec(format!("invalid shape parameters {shape:?}")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut width = None;
        let mut height = None;
        let mut constants = None;
        let mut shapes = Vec::new();
        let mut bias = None;
        let mut noise = None;
        let mut seed = 0;
        let mut background = None;
        for (line, key, value) in parse_key_values(text)? {
            let at = |e: Error| Error::Spec(format!("line {line}: {e}"));
            match key.as_str() {
                "width" => width = Some(parse_num::<usize>(&value).map_err(at)?),
                "height" => height = Some(parse_num::<usize>(&value).map_err(at)?),
                "constants" => constants = Some(parse_rows(&value).map_err(at)?),
                "bias" => bias = Some(parse_rows(&value).map_err(at)?),
                "noise_sigma" => noise = Some(parse_list(&value).map_err(at)?),
                "seed" => seed = parse_num::<u64>(&value).map_err(at)?,
                "background" => background = Some(parse_num::<usize>(&value).map_err(at)?),
                "shape" => shapes.push(parse_shape(&value).map_err(at)?),
                other => return Err(Error::Spec(format!("line {line}: unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Spec(format!("missing required field `{k}`"));
        let constants: Vec<Vec<f64>> = constants.ok_or_else(|| missing("constants"))?;
        let l = constants.first().map_or(1, Vec::len);
        let noise_sigma = match noise {
            None => vec![0.0; l],
            Some(v) if v.len() == 1 => vec![v[0]; l],
            Some(v) => v,
        };
        let spec = Self {
            width: width.ok_or_else(|| missing("width"))?,
            height: height.ok_or_else(|| missing("height"))?,
            shapes,
            background: background.unwrap_or(constants.len()),
            bias_coeffs: bias.unwrap_or_else(|| vec![vec![1.0]; l]),
            constants,
            noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// `(line number, key, value)` triples from `key = value` text with `#`
/// comments and blank lines ignored.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Spec(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((n + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("cannot parse `{}`", s.trim())))
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_num::<f64>).collect()
}

fn parse_rows(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(';').map(parse_list).collect()
}

fn parse_shape(s: &str) -> Result<(Shape, usize)> {
    let mut parts = s.split_whitespace();
    let kind = parts.next().unwrap_or("");
    let nums = parts.map(parse_num::<f64>).collect::<Result<Vec<_>>>()?;
    let arity = match kind {
        "disk" => 4,
        "rect" => 5,
        "halfplane" => 4,
        _ => return Err(Error::InvalidArgument(format!("unknown shape `{kind}`"))),
    };
    if nums.len() != arity {
        return Err(Error::InvalidArgument(format!("shape `{kind}` takes {arity} numbers")));
    }
    let region = nums[arity - 1];
    if region < 1.0 || region.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!("bad region index {region}")));
    }
    let shape = match kind {
        "disk" => Shape::Disk {
            col: nums[0],
            row: nums[1],
            radius: nums[2],
        },
        "rect" => Shape::Rect {
            col0: nums[0],
            row0: nums[1],
            col1: nums[2],
            row1: nums[3],
        },
        _ => Shape::HalfPlane {
            a: nums[0],
            b: nums[1],
            c: nums[2],
        },
    };
    Ok((shape, region as usize))
}

#[derive(Debug, Clone)]
pub struct Phantom {
    /// Observed image including noise.
    pub image: RasterImage,
    pub truth: LabelMap,
    /// True bias per channel.
    pub bias: Vec<ScalarField>,
    /// Piecewise-constant true image.
    pub clean: RasterImage,
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let l = spec.channels();
    let basis = build_basis(w, h, spec.bias_coeffs[0].len())?;
    let bias = spec
        .bias_coeffs
        .iter()
        .map(|c| eval_bias(c, &basis))
        .collect::<Result<Vec<_>>>()?;
    for (j, b) in bias.iter().enumerate() {
        let lo = b.data().iter().copied().fold(f64::INFINITY, f64::min);
        if lo <= MIN_BIAS {
            return Err(Error::Spec(format!(
                "bias of channel {} drops to {lo:.4}, must stay above {MIN_BIAS}",
                j + 1
            )));
        }
    }

    let mut labels = vec![spec.background as u8; w * h];
    for row in 0..h {
        for col in 0..w {
            if let Some((_, r)) = spec.shapes.iter().rev().find(|(s, _)| s.contains(row, col)) {
                labels[row * w + col] = *r as u8;
            }
        }
    }
    let truth = LabelMap::new(w, h, spec.phases(), labels)?;

    let noise = spec
        .noise_sigma
        .iter()
        .map(|&s| Normal::new(0.0, s).map_err(|e| Error::Spec(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut clean = Vec::with_capacity(w * h * l);
    let mut image = Vec::with_capacity(w * h * l);
    for (p, &label) in truth.labels().iter().enumerate() {
        for j in 0..l {
            let c = spec.constants[label as usize - 1][j];
            clean.push(c);
            let n = if spec.noise_sigma[j] > 0.0 {
                noise[j].sample(&mut rng)
            } else {
                0.0
            };
            image.push(bias[j].data()[p] * c + n);
        }
    }
    Ok(Phantom {
        image: RasterImage::new(w, h, l, image)?,
        truth,
        bias,
        clean: RasterImage::new(w, h, l, clean)?,
    })
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub noise_sigma: f64,
    pub bias_scale: f64,
    pub spec: PhantomSpec,
    pub phantom: Phantom,
}

/// Every combination of noise level and bias scale over `template`.
///
/// A bias scale multiplies all coefficients after the constant term.
pub fn sweep(template: &PhantomSpec, noise_levels: &[f64], bias_scales: &[f64]) -> Result<Vec<PhantomCase>> {
    if noise_levels.is_empty() || bias_scales.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one noise level and one bias scale".into()));
    }
    let mut out = Vec::with_capacity(noise_levels.len() * bias_scales.len());
    for &sigma in noise_levels {
        for &scale in bias_scales {
            let mut spec = template.clone();
            spec.noise_sigma = vec![sigma; template.channels()];
            for col in &mut spec.bias_coeffs {
                for w in col.iter_mut().skip(1) {
                    *w *= scale;
                }
            }
            let phantom = make_phantom(&spec)?;
            out.push(PhantomCase {
                noise_sigma: sigma,
                bias_scale: scale,
                spec,
                phantom,
            });
        }
    }
    Ok(out)
}
