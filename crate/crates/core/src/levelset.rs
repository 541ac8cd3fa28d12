//! Level set stacks, smoothed step functions, region memberships and the
//! finite-difference operators of the gradient flow.
//!
//! `N` regions are encoded with `Q = ceil(log2 N)` level set functions. Region
//! `i` (one-based) gets the binary code of `i - 1` with `phi_1` as the most
//! significant bit, a `0` bit meaning "inside" (`phi < 0`, factor `1 - H`) and
//! a `1` bit "outside" (factor `H`). Codes `>= N - 1` all belong to region
//! `N`; they are merged into aligned blocks so that a block's trailing bits
//! are ignored. For `N = 2` this gives `M_1 = 1 - H(phi)`, `M_2 = H(phi)` and
//! for `N = 3`
//!
//! ```text
//! M_1 = (1 - H(phi_1)) (1 - H(phi_2))
//! M_2 = (1 - H(phi_1)) H(phi_2)
//! M_3 = H(phi_1)
//! ```

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::imagegrid::{LabelMap, RasterImage, ScalarField};

/// Floor added to `|grad phi|` before normalizing.
pub const GRADIENT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothStep {
    epsilon: f64,
}

impl Default for SmoothStep {
    fn default() -> Self {
        Self { epsilon: 1.0 }
    }
}

impl SmoothStep {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `H(x) = (1 + (2/pi) atan(x/eps)) / 2`
    #[inline]
    pub fn heaviside(&self, x: f64) -> f64 {
        0.5 * (1.0 + (2.0 / PI) * (x / self.epsilon).atan())
    }

    /// `delta(x) = H'(x) = eps / (pi (eps^2 + x^2))`
    #[inline]
    pub fn dirac(&self, x: f64) -> f64 {
        self.epsilon / (PI * (self.epsilon * self.epsilon + x * x))
    }
}

pub fn heaviside(x: f64, step: SmoothStep) -> f64 {
    step.heaviside(x)
}

pub fn dirac(x: f64, step: SmoothStep) -> f64 {
    step.dirac(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Inside,
    Outside,
}

/// One product term of a membership: a side per level set, `None` = ignored.
pub type Cube = Vec<Option<Side>>;

/// Region to level-set-code assignment for `N` phases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseEncoding {
    phases: usize,
    levels: usize,
    cubes: Vec<Vec<Cube>>,
}

fn bit_side(code: usize, q: usize, levels: usize) -> Side {
    if (code >> (levels - 1 - q)) & 1 == 0 {
        Side::Inside
    } else {
        Side::Outside
    }
}

impl PhaseEncoding {
    pub fn new(phases: usize) -> Result<Self> {
        if phases < 2 || phases > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "phase count must be in 2..=255, got {phases}"
            )));
        }
        let levels = (usize::BITS - (phases - 1).leading_zeros()) as usize;
        let codes = 1usize << levels;
        let mut cubes: Vec<Vec<Cube>> = (0..phases - 1)
            .map(|r| vec![(0..levels).map(|q| Some(bit_side(r, q, levels))).collect()])
            .collect();

        let mut last = Vec::new();
        let mut start = phases - 1;
        while start < codes {
            let mut k = 0;
            while start.is_multiple_of(1 << (k + 1)) && start + (1 << (k + 1)) <= codes {
                k += 1;
            }
            last.push(
                (0..levels)
                    .map(|q| (q < levels - k).then(|| bit_side(start, q, levels)))
                    .collect(),
            );
            start += 1 << k;
        }
        cubes.push(last);
        Ok(Self {
            phases,
            levels,
            cubes,
        })
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    /// Number of level set functions `Q`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Product terms of region `i` (zero-based).
    pub fn cubes(&self, region: usize) -> &[Cube] {
        &self.cubes[region]
    }

    /// All memberships at one pixel given the level set values there.
    #[inline]
    pub fn memberships_at(&self, phi: &[f64], step: SmoothStep, out: &mut [f64]) {
        let mut h = [0.0f64; 8];
        for (hq, &v) in h.iter_mut().zip(phi) {
            *hq = step.heaviside(v);
        }
        for (o, region) in out.iter_mut().zip(&self.cubes) {
            *o = region
                .iter()
                .map(|cube| {
                    cube.iter()
                        .zip(&h)
                        .map(|(side, &hq)| match side {
                            Some(Side::Inside) => 1.0 - hq,
                            Some(Side::Outside) => hq,
                            None => 1.0,
                        })
                        .product::<f64>()
                })
                .sum();
        }
    }

    /// `dM_i / dphi_q` at one pixel, written to `out[i * Q + q]`.
    #[inline]
    pub fn partials_at(&self, phi: &[f64], step: SmoothStep, out: &mut [f64]) {
        let mut h = [0.0f64; 8];
        let mut d = [0.0f64; 8];
        for q in 0..self.levels {
            h[q] = step.heaviside(phi[q]);
            d[q] = step.dirac(phi[q]);
        }
        let q_count = self.levels;
        for (i, region) in self.cubes.iter().enumerate() {
            for q in 0..q_count {
                let mut total = 0.0;
                for cube in region {
                    let Some(side) = cube[q] else { continue };
                    let mut term = match side {
                        Side::Inside => -d[q],
                        Side::Outside => d[q],
                    };
                    for (r, s) in cube.iter().enumerate() {
                        if r == q {
                            continue;
                        }
                        term *= match s {
                            Some(Side::Inside) => 1.0 - h[r],
                            Some(Side::Outside) => h[r],
                            None => 1.0,
                        };
                    }
                    total += term;
                }
                out[i * q_count + q] = total;
            }
        }
    }

    /// A code for region `i` (zero-based); ignored levels read as outside.
    pub fn representative_sides(&self, region: usize) -> Vec<Side> {
        self.cubes[region][0]
            .iter()
            .map(|s| s.unwrap_or(Side::Outside))
            .collect()
    }
}

/// `Q` level set functions together with the encoding of `N` regions.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetStack {
    encoding: PhaseEncoding,
    fields: Vec<ScalarField>,
}

impl LevelSetStack {
    pub fn new(phases: usize, fields: Vec<ScalarField>) -> Result<Self> {
        let encoding = PhaseEncoding::new(phases)?;
        if fields.len() != encoding.levels() {
            return Err(Error::Dimension(format!(
                "{} phases need {} level set functions, got {}",
                phases,
                encoding.levels(),
                fields.len()
            )));
        }
        let dims = fields[0].dims();
        if fields.iter().any(|f| f.dims() != dims) {
            return Err(Error::Dimension("level set fields differ in size".into()));
        }
        Ok(Self { encoding, fields })
    }

    pub fn phases(&self) -> usize {
        self.encoding.phases()
    }

    pub fn levels(&self) -> usize {
        self.encoding.levels()
    }

    pub fn encoding(&self) -> &PhaseEncoding {
        &self.encoding
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn fields_mut(&mut self) -> &mut [ScalarField] {
        &mut self.fields
    }

    pub fn field(&self, q: usize) -> &ScalarField {
        &self.fields[q]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.fields[0].dims()
    }

    pub fn pixel_count(&self) -> usize {
        self.fields[0].len()
    }

    /// Level set values at pixel `p`, one per function.
    #[inline]
    pub fn values_at(&self, p: usize, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.fields) {
            *o = f.data()[p];
        }
    }

    /// All `N` membership fields.
    pub fn memberships(&self, step: SmoothStep) -> Vec<ScalarField> {
        let n = self.phases();
        let (w, h) = self.dims();
        let np = self.pixel_count();
        let mut out = vec![vec![0.0; np]; n];
        let mut phi = vec![0.0; self.levels()];
        let mut m = vec![0.0; n];
        for p in 0..np {
            self.values_at(p, &mut phi);
            self.encoding.memberships_at(&phi, step, &mut m);
            for i in 0..n {
                out[i][p] = m[i];
            }
        }
        out.into_iter()
            .map(|d| ScalarField::from_vec_unchecked(w, h, d))
            .collect()
    }

    /// Hard labels `argmax_i M_i` (lowest index wins ties).
    pub fn labels(&self, step: SmoothStep) -> LabelMap {
        let n = self.phases();
        let (w, h) = self.dims();
        let mut phi = vec![0.0; self.levels()];
        let mut m = vec![0.0; n];
        let labels = (0..self.pixel_count())
            .map(|p| {
                self.values_at(p, &mut phi);
                self.encoding.memberships_at(&phi, step, &mut m);
                let mut best = 0;
                for i in 1..n {
                    if m[i] > m[best] {
                        best = i;
                    }
                }
                (best + 1) as u8
            })
            .collect();
        LabelMap::new(w, h, n, labels).expect("argmax labels are in range")
    }
}

/// Membership field of region `i` (one-based).
pub fn membership(stack: &LevelSetStack, i: usize, step: SmoothStep) -> Result<ScalarField> {
    check_region(stack, i)?;
    Ok(stack.memberships(step).swap_remove(i - 1))
}

/// `dM_i / dphi_q` as a field (both indices one-based).
pub fn membership_derivative(
    stack: &LevelSetStack,
    i: usize,
    q: usize,
    step: SmoothStep,
) -> Result<ScalarField> {
    check_region(stack, i)?;
    if q == 0 || q > stack.levels() {
        return Err(Error::InvalidArgument(format!(
            "level set index {q} outside 1..={}",
            stack.levels()
        )));
    }
    let (w, h) = stack.dims();
    let nq = stack.levels();
    let mut phi = vec![0.0; nq];
    let mut parts = vec![0.0; stack.phases() * nq];
    let data = (0..stack.pixel_count())
        .map(|p| {
            stack.values_at(p, &mut phi);
            stack.encoding().partials_at(&phi, step, &mut parts);
            parts[(i - 1) * nq + (q - 1)]
        })
        .collect();
    Ok(ScalarField::from_vec_unchecked(w, h, data))
}

fn check_region(stack: &LevelSetStack, i: usize) -> Result<()> {
    if i == 0 || i > stack.phases() {
        return Err(Error::InvalidArgument(format!(
            "region index {i} outside 1..={}",
            stack.phases()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// finite differences, replicate boundaries

fn check_grid(f: &ScalarField) -> Result<()> {
    if f.width() < 3 || f.height() < 3 {
        return Err(Error::InvalidArgument(format!(
            "differential operators need a 3x3 grid, got {}x{}",
            f.width(),
            f.height()
        )));
    }
    Ok(())
}

/// Central-difference gradient `(d/dcol, d/drow)`.
pub fn gradient(phi: &ScalarField) -> (ScalarField, ScalarField) {
    let (w, h) = phi.dims();
    let d = phi.data();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for i in 0..h {
        let up = i.saturating_sub(1);
        let down = (i + 1).min(h - 1);
        for j in 0..w {
            let left = j.saturating_sub(1);
            let right = (j + 1).min(w - 1);
            gx[i * w + j] = 0.5 * (d[i * w + right] - d[i * w + left]);
            gy[i * w + j] = 0.5 * (d[down * w + j] - d[up * w + j]);
        }
    }
    (
        ScalarField::from_vec_unchecked(w, h, gx),
        ScalarField::from_vec_unchecked(w, h, gy),
    )
}

/// `|grad phi|` from central differences.
pub fn gradient_magnitude(phi: &ScalarField) -> ScalarField {
    let (gx, gy) = gradient(phi);
    let data = gx.data().iter().zip(gy.data()).map(|(a, b)| a.hypot(*b)).collect();
    ScalarField::from_vec_unchecked(phi.width(), phi.height(), data)
}

/// `div(grad phi / |grad phi|)`.
pub fn curvature(phi: &ScalarField) -> Result<ScalarField> {
    check_grid(phi)?;
    let (gx, gy) = gradient(phi);
    let (w, h) = phi.dims();
    let mut nx = vec![0.0; w * h];
    let mut ny = vec![0.0; w * h];
    for p in 0..w * h {
        let mag = gx.data()[p].hypot(gy.data()[p]) + GRADIENT_FLOOR;
        nx[p] = gx.data()[p] / mag;
        ny[p] = gy.data()[p] / mag;
    }
    let (nxx, _) = gradient(&ScalarField::from_vec_unchecked(w, h, nx));
    let (_, nyy) = gradient(&ScalarField::from_vec_unchecked(w, h, ny));
    let data = nxx.data().iter().zip(nyy.data()).map(|(a, b)| a + b).collect();
    Ok(ScalarField::from_vec_unchecked(w, h, data))
}

/// Five-point Laplacian.
pub fn laplacian(phi: &ScalarField) -> Result<ScalarField> {
    check_grid(phi)?;
    let (w, h) = phi.dims();
    let d = phi.data();
    let mut out = vec![0.0; w * h];
    for i in 0..h {
        let up = i.saturating_sub(1);
        let down = (i + 1).min(h - 1);
        for j in 0..w {
            let left = j.saturating_sub(1);
            let right = (j + 1).min(w - 1);
            out[i * w + j] = d[up * w + j] + d[down * w + j] + d[i * w + left] + d[i * w + right]
                - 4.0 * d[i * w + j];
        }
    }
    Ok(ScalarField::from_vec_unchecked(w, h, out))
}

// ---------------------------------------------------------------------------
// initialization

/// `-a` where `inside(row, col)` holds, `+a` elsewhere.
pub fn init_binary_step(
    width: usize,
    height: usize,
    a: f64,
    mut inside: impl FnMut(usize, usize) -> bool,
) -> Result<ScalarField> {
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("step magnitude must be positive, got {a}")));
    }
    Ok(ScalarField::from_fn(width, height, |i, j| if inside(i, j) { -a } else { a }))
}

/// Binary steps reproducing a label map under the encoding of its phase count.
pub fn init_from_labels(labels: &LabelMap, a: f64) -> Result<LevelSetStack> {
    let enc = PhaseEncoding::new(labels.phases())?;
    let (w, h) = labels.dims();
    let sides: Vec<Vec<Side>> = (0..enc.phases()).map(|r| enc.representative_sides(r)).collect();
    let fields = (0..enc.levels())
        .map(|q| {
            init_binary_step(w, h, a, |i, j| {
                sides[labels.labels()[i * w + j] as usize - 1][q] == Side::Inside
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LevelSetStack::new(enc.phases(), fields)
}

/// Centered disks; level set `q` (zero-based) uses radius `0.3 min(w, h) / 2^q`
/// so nested disks give every region an initial area.
pub fn init_disks(width: usize, height: usize, phases: usize, a: f64) -> Result<LevelSetStack> {
    let enc = PhaseEncoding::new(phases)?;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let base = 0.3 * width.min(height) as f64;
    let fields = (0..enc.levels())
        .map(|q| {
            let r = base / (1u32 << q) as f64;
            init_binary_step(width, height, a, |i, j| {
                let (dy, dx) = (i as f64 - cy, j as f64 - cx);
                dx * dx + dy * dy <= r * r
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LevelSetStack::new(phases, fields)
}

/// Default threshold fractions `(high, low)` of the maximal intensity.
pub const THRESHOLD_FRACTIONS: (f64, f64) = (0.8, 0.3);

/// Three-phase initialization from two intensity thresholds.
///
/// `phi_1` is inside where the intensity exceeds `low * max`, `phi_2` where
/// it exceeds `high * max`, so `M_1` starts on the brightest class and `M_3`
/// on the darkest.
pub fn threshold_init(image: &RasterImage, fractions: (f64, f64), a: f64) -> Result<LevelSetStack> {
    let (high, low) = fractions;
    let t = thresholds(image, &[high, low])?;
    let (t_high, t_low) = (t[0], t[1]);
    let (w, h) = image.dims();
    let phi1 = init_binary_step(w, h, a, |i, j| image.at(i * w + j, 0) > t_low)?;
    let phi2 = init_binary_step(w, h, a, |i, j| image.at(i * w + j, 0) > t_high)?;
    LevelSetStack::new(3, vec![phi1, phi2])
}

/// Two-phase initialization: inside where intensity exceeds `fraction * max`.
pub fn threshold_init_two_phase(image: &RasterImage, fraction: f64, a: f64) -> Result<LevelSetStack> {
    let t = thresholds(image, &[fraction])?[0];
    let (w, h) = image.dims();
    let phi = init_binary_step(w, h, a, |i, j| image.at(i * w + j, 0) > t)?;
    LevelSetStack::new(2, vec![phi])
}

fn thresholds(image: &RasterImage, fractions: &[f64]) -> Result<Vec<f64>> {
    if image.channels() != 1 {
        return Err(Error::InvalidArgument(
            "threshold initialization needs a single-channel image".into(),
        ));
    }
    let max = image.max_value();
    let min = image.data().iter().copied().fold(f64::INFINITY, f64::min);
    if max == min {
        return Err(Error::InvalidArgument(
            "constant image: thresholds do not separate any region".into(),
        ));
    }
    Ok(fractions.iter().map(|f| f * max).collect())
}
