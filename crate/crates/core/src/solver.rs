//! Alternating minimization of the model energy.
//!
//! Each outer iteration updates the cluster centers in closed form, takes one
//! explicit Euler step of the level set gradient flow and then solves the
//! normal equations for the bias weights. Iteration stops once
//! `sum_ij |c_ij(n) - c_ij(n-1)| < tol` or after `max_iters` iterations.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{build_basis, precompute_moments, BasisSet, Moments, WeightMatrix};
use crate::error::{Error, Result};
use crate::imagegrid::{LabelMap, RasterImage, ScalarField};
use crate::levelset::{
    curvature, init_disks, init_from_labels, laplacian, threshold_init, threshold_init_two_phase,
    LevelSetStack, THRESHOLD_FRACTIONS,
};
use crate::model::{
    bias_fields, check_dims, check_stack, data_energy_from_parts, length_term, regularizer,
    residuals_from_bias, ClusterMatrix, ModelParams,
};

/// Below this, a center's denominator counts as a vanished region.
pub const EMPTY_REGION_EPS: f64 = 1e-12;
/// Largest accepted condition estimate of a weight system.
pub const MAX_CONDITION: f64 = 1e12;
/// Floor on the bias when dividing it out of the image.
pub const BIAS_FLOOR: f64 = 1e-6;
/// Intensity fraction used by the two-phase threshold initialization.
pub const TWO_PHASE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    /// Alternate over centers, level sets and bias weights.
    Full,
    /// Bias pinned to the unit constant; weights are never updated.
    BiasFrozen,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    /// Intensity thresholds at fractions of the maximum.
    Threshold,
    /// Centered (nested) disks.
    Disk,
    /// Binary steps reproducing a label map.
    Labels(LabelMap),
    /// An explicit starting stack.
    Stack(LevelSetStack),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightInit {
    /// Uniform `[0, 1)` entries from a seeded generator.
    Random,
    /// `e_1` in every column.
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub phases: usize,
    pub mode: SolveMode,
    pub init: InitStrategy,
    pub weight_init: WeightInit,
    pub seed: u64,
}

impl SolveConfig {
    pub fn new(phases: usize) -> Self {
        Self {
            phases,
            mode: SolveMode::Full,
            init: InitStrategy::Disk,
            weight_init: WeightInit::Random,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub energy: f64,
    pub centers: ClusterMatrix,
    pub sum_dc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveTrace {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations_run: usize,
}

impl SolveTrace {
    /// `iter,energy,sum_dc,c_11,...,c_NL`, one row per iteration.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,energy,sum_dc");
        if let Some(first) = self.iterations.first() {
            for i in 0..first.centers.phases() {
                for j in 0..first.centers.channels() {
                    out.push_str(&format!(",c_{}{}", i + 1, j + 1));
                }
            }
        }
        out.push('\n');
        for r in &self.iterations {
            out.push_str(&format!("{},{},{}", r.iter, r.energy, r.sum_dc));
            for c in r.centers.entries() {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub labels: LabelMap,
    pub levelsets: LevelSetStack,
    pub bias: Vec<ScalarField>,
    pub corrected: Vec<ScalarField>,
    pub weights: WeightMatrix,
    pub centers: ClusterMatrix,
    pub trace: SolveTrace,
}

/// Solver state visible to a run observer after each iteration.
pub struct IterationState<'a> {
    pub iter: usize,
    pub stack: &'a LevelSetStack,
    pub weights: &'a WeightMatrix,
    pub centers: &'a ClusterMatrix,
    pub energy: f64,
}

/// Image, basis and precomputed moments for one segmentation problem.
pub struct Problem<'a> {
    image: &'a RasterImage,
    basis: BasisSet,
    moments: Moments,
    params: &'a ModelParams,
}

impl<'a> Problem<'a> {
    pub fn new(image: &'a RasterImage, params: &'a ModelParams) -> Result<Self> {
        params.validate()?;
        if params.channels() != image.channels() {
            return Err(Error::Dimension(format!(
                "{} channel weights for a {}-channel image",
                params.channels(),
                image.channels()
            )));
        }
        let basis = build_basis(image.width(), image.height(), params.basis_count)?;
        Self::with_basis(image, basis, params)
    }

    pub fn with_basis(image: &'a RasterImage, basis: BasisSet, params: &'a ModelParams) -> Result<Self> {
        let moments = precompute_moments(&basis, image)?;
        Ok(Self {
            image,
            basis,
            moments,
            params,
        })
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn moments(&self) -> &Moments {
        &self.moments
    }

    fn check(&self, weights: &WeightMatrix, centers: &ClusterMatrix, stack: &LevelSetStack) -> Result<()> {
        check_dims(self.image, &self.basis, weights, centers, self.params)?;
        check_stack(self.image, stack, self.params)
    }

    /// Closed-form centers for fixed level sets and weights.
    ///
    /// Returns the new centers and the `(region, channel)` pairs whose
    /// denominator vanished; those keep their `previous` value.
    pub fn update_centers(
        &self,
        weights: &WeightMatrix,
        stack: &LevelSetStack,
        previous: &ClusterMatrix,
    ) -> Result<(ClusterMatrix, Vec<(usize, usize)>)> {
        self.check(weights, previous, stack)?;
        let biases = bias_fields(&self.basis, weights)?;
        let mems = stack.memberships(self.params.step());
        let mut centers = previous.clone();
        let mut frozen = Vec::new();
        for (i, m) in mems.iter().enumerate() {
            for (j, b) in biases.iter().enumerate() {
                let mut num = 0.0;
                let mut den = 0.0;
                for p in 0..self.image.pixel_count() {
                    let bm = b.data()[p] * m.data()[p];
                    num += self.image.at(p, j) * bm;
                    den += b.data()[p] * bm;
                }
                if den.abs() < EMPTY_REGION_EPS {
                    warn!("region {} channel {}: vanished membership, keeping previous center", i + 1, j + 1);
                    frozen.push((i, j));
                } else {
                    centers.set(i, j, num / den);
                }
            }
        }
        Ok((centers, frozen))
    }

    /// Right-hand side of the level set flow for every `phi_q`.
    pub fn level_set_flow(
        &self,
        stack: &LevelSetStack,
        weights: &WeightMatrix,
        centers: &ClusterMatrix,
    ) -> Result<Vec<ScalarField>> {
        self.check(weights, centers, stack)?;
        let p = self.params;
        let step = p.step();
        let biases = bias_fields(&self.basis, weights)?;
        let res = residuals_from_bias(self.image, &biases, centers, &p.gammas);
        let mut flows = data_flow(stack, &res, &p.lambdas, step);
        for (flow, phi) in flows.iter_mut().zip(stack.fields()) {
            let kappa = curvature(phi)?;
            let lap = laplacian(phi)?;
            for (px, f) in flow.data_mut().iter_mut().enumerate() {
                let k = kappa.data()[px];
                *f += p.mu * (lap.data()[px] - k) + p.nu * step.dirac(phi.data()[px]) * k;
            }
        }
        Ok(flows)
    }

    /// One explicit Euler step `phi_q += dt * flow_q`.
    pub fn update_levelsets(
        &self,
        stack: &LevelSetStack,
        weights: &WeightMatrix,
        centers: &ClusterMatrix,
    ) -> Result<LevelSetStack> {
        let flows = self.level_set_flow(stack, weights, centers)?;
        let mut next = stack.clone();
        for (q, (phi, flow)) in next.fields_mut().iter_mut().zip(&flows).enumerate() {
            for (px, (v, f)) in phi.data_mut().iter_mut().zip(flow.data()).enumerate() {
                *v += self.params.dt * f;
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        iteration: 0,
                        field: q + 1,
                        pixel: px,
                    });
                }
            }
        }
        Ok(next)
    }

    /// Normal equations `A_j w_j = v_j` for every channel.
    pub fn normal_equations(&self, centers: &ClusterMatrix, stack: &LevelSetStack) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mems = stack.memberships(self.params.step());
        let np = self.image.pixel_count();
        (0..self.image.channels())
            .map(|j| {
                let mut a_w = vec![0.0; np];
                let mut v_w = vec![0.0; np];
                for (i, m) in mems.iter().enumerate() {
                    let lc = self.params.lambdas[i] * centers.get(i, j);
                    let lcc = lc * centers.get(i, j);
                    for p in 0..np {
                        a_w[p] += lcc * m.data()[p];
                        v_w[p] += lc * m.data()[p];
                    }
                }
                self.moments.assemble(j, &a_w, &v_w)
            })
            .collect()
    }

    /// Exact minimizer in the weights for fixed centers and level sets.
    pub fn update_weights(&self, centers: &ClusterMatrix, stack: &LevelSetStack) -> Result<WeightMatrix> {
        let probe = WeightMatrix::unit(self.basis.count(), self.image.channels());
        self.check(&probe, centers, stack)?;
        let m = self.basis.count();
        let columns = self
            .normal_equations(centers, stack)
            .into_iter()
            .enumerate()
            .map(|(j, (a, v))| solve_symmetric(&a, &v, m, j + 1))
            .collect::<Result<Vec<_>>>()?;
        WeightMatrix::from_columns(columns)
    }

    pub fn total_energy(&self, weights: &WeightMatrix, centers: &ClusterMatrix, stack: &LevelSetStack) -> Result<f64> {
        self.check(weights, centers, stack)?;
        let p = self.params;
        let biases = bias_fields(&self.basis, weights)?;
        let res = residuals_from_bias(self.image, &biases, centers, &p.gammas);
        let mems = stack.memberships(p.step());
        let data = data_energy_from_parts(&res, &mems, &p.lambdas);
        Ok(data + p.nu * length_term(stack, p.step()) + p.mu * regularizer(stack))
    }
}

/// `-sum_i lambda_i e_i dM_i/dphi_q` for every level set function.
pub fn data_flow(
    stack: &LevelSetStack,
    residuals: &[ScalarField],
    lambdas: &[f64],
    step: crate::levelset::SmoothStep,
) -> Vec<ScalarField> {
    let n = stack.phases();
    let nq = stack.levels();
    let (w, h) = stack.dims();
    let np = stack.pixel_count();
    let mut out = vec![vec![0.0; np]; nq];
    let mut phi = vec![0.0; nq];
    let mut parts = vec![0.0; n * nq];
    for p in 0..np {
        stack.values_at(p, &mut phi);
        stack.encoding().partials_at(&phi, step, &mut parts);
        for (q, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..n {
                s += parts[i * nq + q] * lambdas[i] * residuals[i].data()[p];
            }
            o[p] = -s;
        }
    }
    out.into_iter()
        .map(|d| ScalarField::from_vec_unchecked(w, h, d))
        .collect()
}

fn solve_symmetric(a: &[f64], v: &[f64], m: usize, channel: usize) -> Result<Vec<f64>> {
    let mat = DMatrix::from_row_slice(m, m, a);
    let eig = SymmetricEigen::new(mat.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { channel, condition });
    }
    let rhs = DVector::from_column_slice(v);
    let w = mat
        .clone()
        .cholesky()
        .ok_or(Error::IllConditioned { channel, condition })?
        .solve(&rhs);
    let resid = (&mat * &w - &rhs).amax();
    if resid > 1e-8 * (1.0 + rhs.amax()) {
        return Err(Error::IllConditioned { channel, condition });
    }
    Ok(w.iter().copied().collect())
}

pub fn update_centers(
    image: &RasterImage,
    basis: &BasisSet,
    weights: &WeightMatrix,
    stack: &LevelSetStack,
    params: &ModelParams,
    previous: &ClusterMatrix,
) -> Result<ClusterMatrix> {
    let problem = Problem::with_basis(image, basis.clone(), params)?;
    Ok(problem.update_centers(weights, stack, previous)?.0)
}

pub fn update_levelsets(
    stack: &LevelSetStack,
    image: &RasterImage,
    basis: &BasisSet,
    weights: &WeightMatrix,
    centers: &ClusterMatrix,
    params: &ModelParams,
) -> Result<LevelSetStack> {
    Problem::with_basis(image, basis.clone(), params)?.update_levelsets(stack, weights, centers)
}

pub fn update_weights(
    image: &RasterImage,
    basis: &BasisSet,
    centers: &ClusterMatrix,
    stack: &LevelSetStack,
    params: &ModelParams,
) -> Result<WeightMatrix> {
    Problem::with_basis(image, basis.clone(), params)?.update_weights(centers, stack)
}

pub fn initial_weights(kind: WeightInit, seed: u64, count: usize, channels: usize) -> WeightMatrix {
    match kind {
        WeightInit::Unit => WeightMatrix::unit(count, channels),
        WeightInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cols = (0..channels)
                .map(|_| (0..count).map(|_| rng.random::<f64>()).collect())
                .collect();
            WeightMatrix::from_columns(cols).expect("finite random weights")
        }
    }
}

pub fn initial_levelsets(image: &RasterImage, config: &SolveConfig, a: f64) -> Result<LevelSetStack> {
    let (w, h) = image.dims();
    let stack = match &config.init {
        InitStrategy::Disk => init_disks(w, h, config.phases, a)?,
        InitStrategy::Labels(labels) => {
            if labels.phases() != config.phases {
                return Err(Error::InvalidArgument(format!(
                    "initial label map has {} phases, expected {}",
                    labels.phases(),
                    config.phases
                )));
            }
            if labels.dims() != image.dims() {
                return Err(Error::Dimension("initial label map and image grids differ".into()));
            }
            init_from_labels(labels, a)?
        }
        InitStrategy::Stack(s) => s.clone(),
        InitStrategy::Threshold => {
            let gray = channel_mean(image)?;
            match config.phases {
                2 => threshold_init_two_phase(&gray, TWO_PHASE_THRESHOLD, a)?,
                3 => threshold_init(&gray, THRESHOLD_FRACTIONS, a)?,
                n => {
                    return Err(Error::InvalidArgument(format!(
                        "threshold initialization supports 2 or 3 phases, got {n}"
                    )))
                }
            }
        }
    };
    if stack.phases() != config.phases || stack.dims() != image.dims() {
        return Err(Error::Dimension("initial level sets do not match the problem".into()));
    }
    Ok(stack)
}

fn channel_mean(image: &RasterImage) -> Result<RasterImage> {
    if image.channels() == 1 {
        return Ok(image.clone());
    }
    let l = image.channels() as f64;
    let data = image.data().chunks_exact(image.channels()).map(|px| px.iter().sum::<f64>() / l).collect();
    RasterImage::new(image.width(), image.height(), 1, data)
}

pub fn run(image: &RasterImage, config: &SolveConfig, params: &ModelParams) -> Result<Segmentation> {
    run_with_observer(image, config, params, |_| {})
}

/// [`run`], calling `observer` with the state at the end of every iteration.
pub fn run_with_observer(
    image: &RasterImage,
    config: &SolveConfig,
    params: &ModelParams,
    mut observer: impl FnMut(&IterationState),
) -> Result<Segmentation> {
    if params.phases() != config.phases {
        return Err(Error::InvalidArgument(format!(
            "{} region weights for {} phases",
            params.phases(),
            config.phases
        )));
    }
    let problem = Problem::new(image, params)?;
    let m = params.basis_count;
    let l = image.channels();
    let mut weights = match config.mode {
        SolveMode::Full => initial_weights(config.weight_init, config.seed, m, l),
        SolveMode::BiasFrozen => WeightMatrix::unit(m, l),
    };
    let mut stack = initial_levelsets(image, config, params.a)?;
    let mut centers = ClusterMatrix::zeros(config.phases, l);
    let mut trace = SolveTrace::default();

    for iter in 1..=params.max_iters {
        let (next, _) = problem.update_centers(&weights, &stack, &centers)?;
        let sum_dc = next.abs_diff_sum(&centers);
        centers = next;
        stack = problem
            .update_levelsets(&stack, &weights, &centers)
            .map_err(|e| match e {
                Error::NonFinite { field, pixel, .. } => Error::NonFinite {
                    iteration: iter,
                    field,
                    pixel,
                },
                other => other,
            })?;
        if config.mode == SolveMode::Full {
            weights = problem.update_weights(&centers, &stack)?;
        }
        let energy = problem.total_energy(&weights, &centers, &stack)?;
        debug!("iter {iter}: energy {energy:.6e}, sum |dc| {sum_dc:.3e}");
        trace.iterations.push(IterationRecord {
            iter,
            energy,
            centers: centers.clone(),
            sum_dc,
        });
        trace.iterations_run = iter;
        observer(&IterationState {
            iter,
            stack: &stack,
            weights: &weights,
            centers: &centers,
            energy,
        });
        if sum_dc < params.tol {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        warn!("no convergence after {} iterations", params.max_iters);
    }

    let bias = bias_fields(problem.basis(), &weights)?;
    let corrected = bias
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let data = (0..image.pixel_count())
                .map(|p| image.at(p, j) / b.data()[p].max(BIAS_FLOOR))
                .collect();
            ScalarField::new(image.width(), image.height(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Segmentation {
        labels: stack.labels(params.step()),
        levelsets: stack,
        bias,
        corrected,
        weights,
        centers,
        trace,
    })
}

/// Piecewise-constant two-phase segmentation: the same iteration with the
/// bias fixed to one.
pub fn run_chan_vese(image: &RasterImage, config: &SolveConfig, params: &ModelParams) -> Result<Segmentation> {
    if image.channels() != 1 || config.phases != 2 {
        return Err(Error::InvalidArgument(
            "the piecewise-constant reduction needs a single-channel image and two phases".into(),
        ));
    }
    let config = SolveConfig {
        mode: SolveMode::BiasFrozen,
        ..config.clone()
    };
    run(image, &config, params)
}
