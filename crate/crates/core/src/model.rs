//! Energy of the joint segmentation / bias model.
//!
//! With bias fields `b_j = w_j^T G` the residual of region `i` is
//! `e_i = sum_j gamma_j (I_j - b_j c_ij)^2` and the energy is
//! `E = sum_i lambda_i sum_x e_i M_i + nu L + mu P`. Integrals are unweighted
//! pixel sums.

use crate::basis::{eval_bias, BasisSet, WeightMatrix};
use crate::error::{Error, Result};
use crate::imagegrid::{RasterImage, ScalarField};
use crate::levelset::{gradient, LevelSetStack, SmoothStep};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Region weights, one per phase.
    pub lambdas: Vec<f64>,
    /// Channel weights, one per image channel.
    pub gammas: Vec<f64>,
    /// Distance regularizer weight.
    pub mu: f64,
    /// Arc length weight.
    pub nu: f64,
    pub epsilon: f64,
    pub dt: f64,
    /// Magnitude of the initial binary step.
    pub a: f64,
    pub basis_count: usize,
    pub max_iters: usize,
    /// Threshold on `sum |c_new - c_old|`.
    pub tol: f64,
}

impl ModelParams {
    pub fn defaults(phases: usize, channels: usize) -> Self {
        Self {
            lambdas: vec![1.0; phases],
            gammas: vec![1.0; channels],
            mu: 1.0,
            nu: 0.005 * 255.0 * 255.0,
            epsilon: 1.0,
            dt: 0.1,
            a: 2.0,
            basis_count: 10,
            max_iters: 200,
            tol: 1e-3,
        }
    }

    pub fn phases(&self) -> usize {
        self.lambdas.len()
    }

    pub fn channels(&self) -> usize {
        self.gammas.len()
    }

    pub fn step(&self) -> SmoothStep {
        SmoothStep::new(self.epsilon).expect("validated epsilon")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if self.lambdas.len() < 2 {
            return bad("need at least two region weights");
        }
        if self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("region weights must be positive");
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return bad("channel weights must be positive");
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) || !(self.nu >= 0.0 && self.nu.is_finite()) {
            return bad("mu and nu must be nonnegative");
        }
        if !(self.epsilon > 0.0) || !(self.dt > 0.0) || !(self.a > 0.0) || !(self.tol > 0.0) {
            return bad("epsilon, dt, a and tol must be positive");
        }
        if self.basis_count == 0 || self.basis_count > crate::basis::MAX_BASIS {
            return bad("basis count outside 1..=10");
        }
        Ok(())
    }
}

/// `N x L` cluster centers, row-major (`c[i][j]` is region `i`, channel `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMatrix {
    phases: usize,
    channels: usize,
    entries: Vec<f64>,
}

impl ClusterMatrix {
    pub fn zeros(phases: usize, channels: usize) -> Self {
        Self {
            phases,
            channels,
            entries: vec![0.0; phases * channels],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let channels = rows.first().map(Vec::len).unwrap_or(0);
        if channels == 0 || rows.iter().any(|r| r.len() != channels) {
            return Err(Error::Dimension("cluster rows must be nonempty and equal length".into()));
        }
        let phases = rows.len();
        let entries: Vec<f64> = rows.into_iter().flatten().collect();
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite cluster center".into()));
        }
        Ok(Self {
            phases,
            channels,
            entries,
        })
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.channels + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.channels + j] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            phases: self.phases,
            channels: self.channels,
            entries: self.entries.iter().map(|v| v * s).collect(),
        }
    }

    /// `sum_ij |self_ij - other_ij|`
    pub fn abs_diff_sum(&self, other: &ClusterMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

pub(crate) fn check_dims(
    image: &RasterImage,
    basis: &BasisSet,
    weights: &WeightMatrix,
    centers: &ClusterMatrix,
    params: &ModelParams,
) -> Result<()> {
    let l = image.channels();
    if basis.dims() != image.dims() {
        return Err(Error::Dimension("basis and image grids differ".into()));
    }
    if weights.count() != basis.count() || weights.channels() != l {
        return Err(Error::Dimension(format!(
            "weights are {}x{}, expected {}x{}",
            weights.count(),
            weights.channels(),
            basis.count(),
            l
        )));
    }
    if centers.channels() != l || centers.phases() != params.phases() || params.channels() != l {
        return Err(Error::Dimension(format!(
            "centers {}x{}, {} region and {} channel weights for a {}-channel image",
            centers.phases(),
            centers.channels(),
            params.phases(),
            params.channels(),
            l
        )));
    }
    Ok(())
}

/// Bias field of every channel.
pub fn bias_fields(basis: &BasisSet, weights: &WeightMatrix) -> Result<Vec<ScalarField>> {
    (0..weights.channels())
        .map(|j| eval_bias(weights.column(j), basis))
        .collect()
}

/// All residual fields `e_1..e_N` from precomputed bias fields.
pub fn residuals_from_bias(
    image: &RasterImage,
    biases: &[ScalarField],
    centers: &ClusterMatrix,
    gammas: &[f64],
) -> Vec<ScalarField> {
    let (w, h) = image.dims();
    let np = image.pixel_count();
    (0..centers.phases())
        .map(|i| {
            let data = (0..np)
                .map(|p| {
                    let mut e = 0.0;
                    for (j, (b, g)) in biases.iter().zip(gammas).enumerate() {
                        let r = image.at(p, j) - b.data()[p] * centers.get(i, j);
                        e += g * r * r;
                    }
                    e
                })
                .collect();
            ScalarField::from_vec_unchecked(w, h, data)
        })
        .collect()
}

/// `e_i(x)` for region `i` (one-based).
pub fn residual(
    image: &RasterImage,
    basis: &BasisSet,
    weights: &WeightMatrix,
    centers: &ClusterMatrix,
    params: &ModelParams,
    i: usize,
) -> Result<ScalarField> {
    check_dims(image, basis, weights, centers, params)?;
    if i == 0 || i > centers.phases() {
        return Err(Error::InvalidArgument(format!("region index {i} out of range")));
    }
    let biases = bias_fields(basis, weights)?;
    Ok(residuals_from_bias(image, &biases, centers, &params.gammas).swap_remove(i - 1))
}

/// `sum_i lambda_i sum_x e_i M_i` from precomputed residuals and memberships.
pub fn data_energy_from_parts(residuals: &[ScalarField], memberships: &[ScalarField], lambdas: &[f64]) -> f64 {
    residuals
        .iter()
        .zip(memberships)
        .zip(lambdas)
        .map(|((e, m), l)| l * e.data().iter().zip(m.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

pub fn data_energy(
    image: &RasterImage,
    basis: &BasisSet,
    weights: &WeightMatrix,
    centers: &ClusterMatrix,
    stack: &LevelSetStack,
    params: &ModelParams,
) -> Result<f64> {
    check_dims(image, basis, weights, centers, params)?;
    check_stack(image, stack, params)?;
    let biases = bias_fields(basis, weights)?;
    let res = residuals_from_bias(image, &biases, centers, &params.gammas);
    let mems = stack.memberships(params.step());
    Ok(data_energy_from_parts(&res, &mems, &params.lambdas))
}

pub(crate) fn check_stack(image: &RasterImage, stack: &LevelSetStack, params: &ModelParams) -> Result<()> {
    if stack.dims() != image.dims() {
        return Err(Error::Dimension("level set and image grids differ".into()));
    }
    if stack.phases() != params.phases() {
        return Err(Error::Dimension(format!(
            "level set stack encodes {} phases, parameters have {}",
            stack.phases(),
            params.phases()
        )));
    }
    Ok(())
}

/// `sum_q sum_x delta(phi_q) |grad phi_q|`
pub fn length_term(stack: &LevelSetStack, step: SmoothStep) -> f64 {
    stack
        .fields()
        .iter()
        .map(|phi| {
            let (gx, gy) = gradient(phi);
            phi.data()
                .iter()
                .zip(gx.data().iter().zip(gy.data()))
                .map(|(&v, (a, b))| step.dirac(v) * a.hypot(*b))
                .sum::<f64>()
        })
        .sum()
}

/// `sum_q sum_x (|grad phi_q| - 1)^2 / 2`
pub fn regularizer(stack: &LevelSetStack) -> f64 {
    stack
        .fields()
        .iter()
        .map(|phi| {
            let (gx, gy) = gradient(phi);
            gx.data()
                .iter()
                .zip(gy.data())
                .map(|(a, b)| {
                    let d = a.hypot(*b) - 1.0;
                    0.5 * d * d
                })
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTerms {
    pub data: f64,
    pub length: f64,
    pub regularizer: f64,
}

impl EnergyTerms {
    pub fn total(&self, params: &ModelParams) -> f64 {
        self.data + params.nu * self.length + params.mu * self.regularizer
    }
}

pub fn energy_terms(
    image: &RasterImage,
    basis: &BasisSet,
    weights: &WeightMatrix,
    centers: &ClusterMatrix,
    stack: &LevelSetStack,
    params: &ModelParams,
) -> Result<EnergyTerms> {
    Ok(EnergyTerms {
        data: data_energy(image, basis, weights, centers, stack, params)?,
        length: length_term(stack, params.step()),
        regularizer: regularizer(stack),
    })
}

pub fn total_energy(
    image: &RasterImage,
    basis: &BasisSet,
    weights: &WeightMatrix,
    centers: &ClusterMatrix,
    stack: &LevelSetStack,
    params: &ModelParams,
) -> Result<f64> {
    Ok(energy_terms(image, basis, weights, centers, stack, params)?.total(params))
}
