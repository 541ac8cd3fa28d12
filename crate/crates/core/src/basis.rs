//! Orthogonal Legendre basis for smooth bias fields.
//!
//! The supported basis is the ten tensor products of Legendre polynomials
//! up to total degree three, ordered
//!
//! ```text
//! 1, x1, P2(x1), P3(x1), x2, x1 x2, P2(x1) x2, P2(x2), x1 P2(x2), P3(x2)
//! ```
//!
//! with `(x1, x2)` the pixel position mapped onto `[-1, 1]^2` (see
//! [`to_domain_coords`]). A bias field is `b(x) = w^T G(x)` for a weight
//! column `w`.

use crate::error::{Error, Result};
use crate::imagegrid::{to_domain_coords, RasterImage, ScalarField};

/// Largest supported basis size.
pub const MAX_BASIS: usize = 10;

/// `(degree in x1, degree in x2)` of each basis function, in order.
const DEGREES: [(usize, usize); MAX_BASIS] = [
    (0, 0),
    (1, 0),
    (2, 0),
    (3, 0),
    (0, 1),
    (1, 1),
    (2, 1),
    (0, 2),
    (1, 2),
    (0, 3),
];

/// Legendre polynomial `P_k(t)` for `k <= 3`.
pub fn legendre_1d(k: usize, t: f64) -> Result<f64> {
    Ok(match k {
        0 => 1.0,
        1 => t,
        2 => (3.0 * t * t - 1.0) / 2.0,
        3 => (5.0 * t * t * t - 3.0 * t) / 2.0,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "Legendre order {k} not supported (0..=3)"
            )))
        }
    })
}

/// Value of basis function `k` (zero-based) at domain point `(x1, x2)`.
pub fn basis_value(k: usize, x1: f64, x2: f64) -> Result<f64> {
    let &(d1, d2) = DEGREES
        .get(k)
        .ok_or_else(|| Error::InvalidArgument(format!("basis index {k} >= {MAX_BASIS}")))?;
    Ok(legendre_1d(d1, x1)? * legendre_1d(d2, x2)?)
}

/// The first `count` basis functions sampled on a `width x height` grid.
#[derive(Debug, Clone)]
pub struct BasisSet {
    width: usize,
    height: usize,
    samples: Vec<ScalarField>,
}

impl BasisSet {
    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> &[ScalarField] {
        &self.samples
    }

    pub fn sample(&self, k: usize) -> &ScalarField {
        &self.samples[k]
    }

    /// `G(x)` at flat pixel index `p`, written into `out`.
    #[inline]
    pub fn vector_at(&self, p: usize, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(&self.samples) {
            *o = s.data()[p];
        }
    }
}

pub fn build_basis(width: usize, height: usize, count: usize) -> Result<BasisSet> {
    if count == 0 || count > MAX_BASIS {
        return Err(Error::InvalidArgument(format!(
            "basis count {count} outside supported range 1..={MAX_BASIS}"
        )));
    }
    // validates the grid once; per-pixel calls below cannot fail
    to_domain_coords(0, 0, width, height)?;
    let samples = (0..count)
        .map(|k| {
            if k == 0 {
                return ScalarField::filled(width, height, 1.0);
            }
            ScalarField::from_fn(width, height, |i, j| {
                let (x1, x2) = to_domain_coords(i, j, width, height).unwrap();
                basis_value(k, x1, x2).unwrap()
            })
        })
        .collect();
    Ok(BasisSet {
        width,
        height,
        samples,
    })
}

/// `M x L` weight matrix, one column per image channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    count: usize,
    channels: usize,
    // column-major
    entries: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let count = columns.first().map(Vec::len).unwrap_or(0);
        if count == 0 || columns.iter().any(|c| c.len() != count) {
            return Err(Error::Dimension("weight columns must be nonempty and equal length".into()));
        }
        let channels = columns.len();
        let entries: Vec<f64> = columns.into_iter().flatten().collect();
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        Ok(Self {
            count,
            channels,
            entries,
        })
    }

    /// Every column equal to `e_1`, i.e. a unit bias in each channel.
    pub fn unit(count: usize, channels: usize) -> Self {
        let mut entries = vec![0.0; count * channels];
        for j in 0..channels {
            entries[j * count] = 1.0;
        }
        Self {
            count,
            channels,
            entries,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.entries[j * self.count..(j + 1) * self.count]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.entries[j * self.count..(j + 1) * self.count]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            count: self.count,
            channels: self.channels,
            entries: self.entries.iter().map(|v| v * s).collect(),
        }
    }
}

/// `b(x) = w^T G(x)` over the grid.
pub fn eval_bias(w: &[f64], basis: &BasisSet) -> Result<ScalarField> {
    if w.len() != basis.count() {
        return Err(Error::Dimension(format!(
            "weight vector has {} entries, basis has {}",
            w.len(),
            basis.count()
        )));
    }
    let (width, height) = basis.dims();
    let mut data = vec![0.0; basis.pixel_count()];
    for (wk, g) in w.iter().zip(basis.samples()) {
        for (d, &gv) in data.iter_mut().zip(g.data()) {
            *d += wk * gv;
        }
    }
    Ok(ScalarField::from_vec_unchecked(width, height, data))
}

/// Number of entries in the upper triangle of an `m x m` matrix.
pub fn triangle_len(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Per-pixel quantities of the weight solve that depend only on the image and
/// the basis: the upper triangle of `G(x) G(x)^T` and the vectors
/// `I_j(x) G(x)`. They are computed once per run.
#[derive(Debug, Clone)]
pub struct Moments {
    count: usize,
    channels: usize,
    pixels: usize,
    // [p * T + t], t walks (k, l) with k <= l row by row
    outer: Vec<f64>,
    // [(p * L + j) * M + k]
    image_basis: Vec<f64>,
}

impl Moments {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    /// Upper triangle of `G(x_p) G(x_p)^T`.
    pub fn outer_at(&self, p: usize) -> &[f64] {
        let t = triangle_len(self.count);
        &self.outer[p * t..(p + 1) * t]
    }

    /// `I_j(x_p) G(x_p)`.
    pub fn image_basis_at(&self, p: usize, j: usize) -> &[f64] {
        let m = self.count;
        let off = (p * self.channels + j) * m;
        &self.image_basis[off..off + m]
    }

    /// Assemble `A = sum_p a_p G G^T` and `v = sum_p v_p I_j G` for channel `j`.
    ///
    /// `a_weights` and `v_weights` hold one scalar per pixel. Returns `A` as a
    /// dense row-major `M x M` matrix. Summation runs over pixels in index
    /// order.
    pub fn assemble(&self, j: usize, a_weights: &[f64], v_weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.count;
        let t = triangle_len(m);
        let mut tri = vec![0.0; t];
        let mut v = vec![0.0; m];
        for p in 0..self.pixels {
            let a = a_weights[p];
            for (acc, &o) in tri.iter_mut().zip(self.outer_at(p)) {
                *acc += a * o;
            }
            let s = v_weights[p];
            for (acc, &ig) in v.iter_mut().zip(self.image_basis_at(p, j)) {
                *acc += s * ig;
            }
        }
        (expand_triangle(&tri, m), v)
    }
}

pub(crate) fn expand_triangle(tri: &[f64], m: usize) -> Vec<f64> {
    let mut full = vec![0.0; m * m];
    let mut t = 0;
    for k in 0..m {
        for l in k..m {
            full[k * m + l] = tri[t];
            full[l * m + k] = tri[t];
            t += 1;
        }
    }
    full
}

pub fn precompute_moments(basis: &BasisSet, image: &RasterImage) -> Result<Moments> {
    if basis.dims() != image.dims() {
        return Err(Error::Dimension(format!(
            "basis grid {:?} differs from image grid {:?}",
            basis.dims(),
            image.dims()
        )));
    }
    let m = basis.count();
    let l = image.channels();
    let n = basis.pixel_count();
    let mut outer = Vec::with_capacity(n * triangle_len(m));
    let mut image_basis = Vec::with_capacity(n * l * m);
    let mut g = vec![0.0; m];
    for p in 0..n {
        basis.vector_at(p, &mut g);
        for k in 0..m {
            for l2 in k..m {
                outer.push(g[k] * g[l2]);
            }
        }
        for j in 0..l {
            let ij = image.at(p, j);
            image_basis.extend(g.iter().map(|&gk| ij * gk));
        }
    }
    Ok(Moments {
        count: m,
        channels: l,
        pixels: n,
        outer,
        image_basis,
    })
}

/// Gram matrix `int g_k g_l` over `[-1, 1]^2`, approximated on the sampling
/// grid with the tensor trapezoid rule. Row-major `M x M`.
pub fn gram_matrix(basis: &BasisSet) -> Vec<f64> {
    let (w, h) = basis.dims();
    let m = basis.count();
    let hx = 2.0 / (w - 1) as f64;
    let hy = 2.0 / (h - 1) as f64;
    let edge = |idx: usize, len: usize| if idx == 0 || idx == len - 1 { 0.5 } else { 1.0 };
    let weights: Vec<f64> = (0..h)
        .flat_map(|i| (0..w).map(move |j| edge(i, h) * edge(j, w) * hx * hy))
        .collect();
    let mut gram = vec![0.0; m * m];
    for k in 0..m {
        for l in k..m {
            let s: f64 = basis.samples[k]
                .data()
                .iter()
                .zip(basis.samples[l].data())
                .zip(&weights)
                .map(|((a, b), q)| a * b * q)
                .sum();
            gram[k * m + l] = s;
            gram[l * m + k] = s;
        }
    }
    gram
}

/// Largest `|G_kl| / min(G_kk, G_ll)` over `k != l`.
pub fn max_off_diagonal_ratio(gram: &[f64], m: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..m {
        for l in 0..m {
            if k != l {
                let d = gram[k * m + k].min(gram[l * m + l]);
                worst = worst.max(gram[k * m + l].abs() / d);
            }
        }
    }
    worst
}
