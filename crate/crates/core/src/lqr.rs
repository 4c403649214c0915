//! Finite-horizon tracking LQR for one layer.
//!
//! Per layer the reduced model is discretized with a zero-order hold,
//!
//! ```text
//! x[l+1] = Ā x[l] + B̄[l] u[l] + d̄,   y[l] = C̄[l] x[l],
//! ```
//!
//! and the cost `Σ_{l=0}^{N} Q (y[l] - r[l])² + R u[l]²` is minimized by the
//! affine law
//!
//! ```text
//! u[l] = -K[l] x[l] + Kᵛ[l] v[l+1] - Kᵈ[l] d̄
//! K[l]  = (R + B̄ᵀP⁺B̄)⁻¹ B̄ᵀ P⁺ Ā          Kᵛ[l] = (R + B̄ᵀP⁺B̄)⁻¹ B̄ᵀ
//! P[l]  = Āᵀ P⁺ (Ā - B̄K) + C̄ᵀQC̄           P[N]  = C̄ᵀQC̄
//! v[l]  = (Ā - B̄K)ᵀ v⁺ + C̄ᵀQ r[l]          v[N]  = C̄ᵀQ r[N]
//! V[l]  = (Ā - B̄K)ᵀ (P⁺ + V⁺)              V[N]  = 0
//! Kᵈ[l] = Kᵛ[l] (P⁺ + V⁺)
//! ```
//!
//! where `⁺` marks index `l+1`. The last line equals
//! `K (P - C̄ᵀQC̄)⁻¹ V` whenever that inverse exists; [`DisturbanceGain`]
//! selects between the two.
//!
//! Two synthesis routes share the recursion. [`synthesize`] works on a dense
//! [`DiscreteLayerModel`]. [`synthesize_modal`] exploits `A = -C⁻¹(L+H)` with
//! symmetric `L+H`: in the coordinates `z = Uᵀ C^{1/2} x` the state matrix is
//! diagonal, so every Riccati step is a rank-one update costing `O(n²)`.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beam::{BeamPath, OutputWeights};
use crate::error::{Error, Result};
use crate::fom::{assemble_for_layer, LtvSystem, Record, SimResult};
use crate::grid::{Solidify, ThermalGraph};
use crate::params::{horizon, MaterialParams, ProcessParams};
use crate::plant::{run_build, MaterialMode, Plant, PlantKind, Policy};
use crate::rom::{explicit_slabs, RomConfig};
use crate::Real;

/// Relative singular-value cutoff of the pseudo-inverse in the literal
/// disturbance gain.
pub const PINV_CUTOFF: f64 = 1e-12;

/// Reference and weights of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSpec<T> {
    /// `y^d[l]` for `l = 0..=N` [K].
    pub reference: Vec<T>,
    pub q: T,
    pub r: T,
    pub p_max: T,
}

impl<T: Real> TrackingSpec<T> {
    pub fn constant(setpoint: T, horizon: usize, q: T, r: T, p_max: T) -> Self {
        Self { reference: vec![setpoint; horizon + 1], q, r, p_max }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(self.q >= T::zero()) || !self.q.is_finite() {
            return Err(Error::InvalidParameter(format!("Q must be finite and non-negative, got {}", self.q)));
        }
        if !(self.r > T::zero()) {
            return Err(Error::InvalidParameter(format!("R must be positive, got {}", self.r)));
        }
        if !(self.p_max > T::zero()) {
            return Err(Error::InvalidParameter(format!("p_max must be positive, got {}", self.p_max)));
        }
        if self.reference.len() < horizon + 1 {
            return Err(Error::DimensionMismatch { expected: horizon + 1, found: self.reference.len() });
        }
        Ok(())
    }
}

/// Dense zero-order-hold model of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLayerModel<T: Real> {
    pub a: DMatrix<T>,
    /// `B̄[l]`, `l = 0..N`.
    pub b: Vec<DVector<T>>,
    /// `C̄[l]`, `l = 0..=N`.
    pub c: Vec<DVector<T>>,
    pub d: DVector<T>,
    pub h: T,
}

impl<T: Real> DiscreteLayerModel<T> {
    pub fn new(a: DMatrix<T>, b: Vec<DVector<T>>, c: Vec<DVector<T>>, d: DVector<T>, h: T) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: a.ncols() });
        }
        if b.is_empty() || c.len() != b.len() + 1 {
            return Err(Error::DimensionMismatch { expected: b.len() + 1, found: c.len() });
        }
        for v in b.iter().chain(&c).chain(std::iter::once(&d)) {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: v.len() });
            }
        }
        Ok(Self { a, b, c, d, h })
    }

    /// Exact discretization of `sys` over `tau` with sample period `h`.
    pub fn from_system(sys: &LtvSystem<T>, tau: f64, h: f64) -> Result<Self> {
        let steps = horizon(tau, h)?;
        let n = sys.dim();
        let hh = T::lit(h);
        let mut dense = DMatrix::zeros(n, n);
        for (i, row) in sys.a().row_iter().enumerate() {
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                dense[(i, j)] = v;
            }
        }
        // exp([[Ah, hI], [0, 0]]) = [[Ā, ∫₀ʰ e^{As} ds], [0, I]]
        let mut aug = DMatrix::zeros(2 * n, 2 * n);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&dense * hh));
        aug.view_mut((0, n), (n, n)).fill_diagonal(hh);
        let e = aug.exp();
        let a = e.view((0, 0), (n, n)).into_owned();
        let gamma = e.view((0, n), (n, n)).into_owned();
        let b = (0..steps).map(|l| &gamma * sys.input(hh * T::count(l))).collect();
        let c = (0..=steps).map(|l| sys.output_weights(hh * T::count(l))).collect::<Result<_>>()?;
        let d = &gamma * sys.drift();
        Self::new(a, b, c, d, hh)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.b.len()
    }

    pub fn step(&self, x: &DVector<T>, u: T, l: usize) -> DVector<T> {
        &self.a * x + &self.b[l] * u + &self.d
    }

    pub fn output(&self, x: &DVector<T>, l: usize) -> T {
        self.c[l].dot(x)
    }

    pub fn spectral_radius(&self) -> T {
        self.a.complex_eigenvalues().iter().fold(T::zero(), |m, z| m.max((z.re * z.re + z.im * z.im).sqrt()))
    }
}

/// Zero-order-hold model of one layer in modal coordinates `z = Uᵀ C^{1/2} x`.
#[derive(Debug, Clone)]
pub struct ModalLayerModel<T: Real> {
    /// `C^{1/2}`.
    scale: DVector<T>,
    /// Orthonormal eigenvectors of `C^{-1/2}(L+H)C^{-1/2}`.
    basis: DMatrix<T>,
    /// Its eigenvalues, so `A` has eigenvalues `-lambda`.
    lambda: DVector<T>,
    /// Diagonal of `Ā`.
    decay: DVector<T>,
    b: Vec<DVector<T>>,
    c: Vec<DVector<T>>,
    d: DVector<T>,
    h: T,
}

impl<T: Real> ModalLayerModel<T> {
    pub fn discretize(sys: &LtvSystem<T>, tau: f64, h: f64) -> Result<Self> {
        let steps = horizon(tau, h)?;
        let n = sys.dim();
        let scale = sys.capacity().map(|c| c.sqrt());
        let mut w = DMatrix::zeros(n, n);
        for (i, row) in sys.stiffness().row_iter().enumerate() {
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                w[(i, j)] = v / (scale[i] * scale[j]);
            }
        }
        let asym = (&w - w.transpose()).amax();
        if asym > T::lit(1e-12) * w.amax() {
            return Err(Error::Singular(format!("conductance matrix is not symmetric ({asym:e})")));
        }
        let eig = SymmetricEigen::new(w);
        let hh = T::lit(h);
        let lambda = eig.eigenvalues;
        let basis = eig.eigenvectors;
        let decay = lambda.map(|l| (-l * hh).exp());
        // h φ₁(-λh) = (1 - e^{-λh}) / λ
        let gain = lambda.map(|l| {
            let z = l * hh;
            if z.abs() < T::lit(1e-300) {
                hh
            } else {
                -(-z).exp_m1() / l
            }
        });
        let project = |v: DVector<T>| basis.tr_mul(&v).component_mul(&gain);
        let b = (0..steps)
            .map(|l| project(sys.input_weights(hh * T::count(l)).component_div(&scale)))
            .collect();
        let c = (0..=steps)
            .map(|l| Ok(basis.tr_mul(&sys.output_weights(hh * T::count(l))?.component_div(&scale))))
            .collect::<Result<_>>()?;
        let d = project(sys.drift().component_mul(&scale));
        Ok(Self { scale, basis, lambda, decay, b, c, d, h: hh })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn horizon(&self) -> usize {
        self.b.len()
    }

    /// Eigenvalues of the continuous-time state matrix.
    pub fn continuous_eigenvalues(&self) -> DVector<T> {
        -&self.lambda
    }

    pub fn to_modal(&self, x: &DVector<T>) -> DVector<T> {
        self.basis.tr_mul(&x.component_mul(&self.scale))
    }

    pub fn from_modal(&self, z: &DVector<T>) -> DVector<T> {
        (&self.basis * z).component_div(&self.scale)
    }

    /// Maps a modal row vector `k` (acting on `z`) to the row acting on `x`.
    fn row_to_state(&self, k: &DVector<T>) -> DVector<T> {
        (&self.basis * k).component_mul(&self.scale)
    }

    /// The same model in state coordinates.
    pub fn to_dense(&self) -> Result<DiscreteLayerModel<T>> {
        let left = DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.basis[(i, j)] / self.scale[i]);
        let right = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.basis[(j, i)] * self.decay[i] * self.scale[j]
        });
        let a = left * right;
        let b = self.b.iter().map(|v| self.from_modal(v)).collect();
        let c = self.c.iter().map(|v| self.row_to_state(v)).collect();
        DiscreteLayerModel::new(a, b, c, self.from_modal(&self.d), self.h)
    }
}

/// How `Kᵈ` is evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceGain {
    /// `Kᵛ[l](P[l+1] + V[l+1])`; optimal at every step.
    #[default]
    Identity,
    /// `K[l](P[l] - C̄ᵀQC̄)⁺V[l]` with a pseudo-inverse; agrees with the
    /// identity form wherever the bracket is invertible.
    Literal,
}

/// Gains of one layer in state coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule<T: Real> {
    /// `K[l]`, `l = 0..N`.
    pub k: Vec<DVector<T>>,
    /// `Kᵛ[l]`, `l = 0..N`.
    pub kv: Vec<DVector<T>>,
    /// `Kᵈ[l]`, `l = 0..N`.
    pub kd: Vec<DVector<T>>,
    /// `v[l]`, `l = 0..=N`.
    pub v: Vec<DVector<T>>,
    /// `P[l]`, `l = 0..=N`; empty unless retained.
    pub p: Vec<DMatrix<T>>,
    /// `V[l]`, `l = 0..=N`; empty unless retained.
    pub vmat: Vec<DMatrix<T>>,
    pub dbar: DVector<T>,
    pub p_max: T,
}

/// Projection onto `[0, p_max]`.
pub fn saturate<T: Real>(u: T, p_max: T) -> T {
    if u > p_max {
        p_max
    } else if u > T::zero() {
        u
    } else {
        T::zero()
    }
}

impl<T: Real> GainSchedule<T> {
    pub fn horizon(&self) -> usize {
        self.k.len()
    }

    pub fn dim(&self) -> usize {
        self.dbar.len()
    }

    /// Unconstrained optimal input.
    pub fn raw_input(&self, x: &DVector<T>, l: usize) -> T {
        -self.k[l].dot(x) + self.kv[l].dot(&self.v[l + 1]) - self.kd[l].dot(&self.dbar)
    }

    pub fn control_input(&self, x: &DVector<T>, l: usize) -> T {
        saturate(self.raw_input(x, l), self.p_max)
    }
}

fn check_weights<T: Real>(spec: &TrackingSpec<T>, horizon: usize) -> Result<()> {
    spec.validate(horizon)
}

/// Dense synthesis with `P` and `V` retained.
pub fn synthesize<T: Real>(model: &DiscreteLayerModel<T>, spec: &TrackingSpec<T>) -> Result<GainSchedule<T>> {
    synthesize_with(model, spec, DisturbanceGain::Identity)
}

pub fn synthesize_with<T: Real>(
    model: &DiscreteLayerModel<T>,
    spec: &TrackingSpec<T>,
    rule: DisturbanceGain,
) -> Result<GainSchedule<T>> {
    let big_n = model.horizon();
    check_weights(spec, big_n)?;
    let n = model.dim();
    let (q, r) = (spec.q, spec.r);
    let a = &model.a;
    let c_n = &model.c[big_n];
    let mut p = vec![DMatrix::zeros(n, n); big_n + 1];
    let mut vm = vec![DMatrix::zeros(n, n); big_n + 1];
    let mut v = vec![DVector::zeros(n); big_n + 1];
    p[big_n] = c_n * c_n.transpose() * q;
    v[big_n] = c_n * (q * spec.reference[big_n]);
    let mut k = vec![DVector::zeros(n); big_n];
    let mut kv = vec![DVector::zeros(n); big_n];
    let mut kd = vec![DVector::zeros(n); big_n];
    for l in (0..big_n).rev() {
        let b = &model.b[l];
        let c = &model.c[l];
        let g = &p[l + 1] * b;
        let sigma = r + b.dot(&g);
        kv[l] = b / sigma;
        k[l] = a.tr_mul(&g) / sigma;
        let f = a - b * k[l].transpose();
        let mut pl = a.tr_mul(&(&p[l + 1] * &f)) + c * c.transpose() * q;
        pl = (&pl + pl.transpose()) * T::lit(0.5);
        let sum = &p[l + 1] + &vm[l + 1];
        v[l] = f.tr_mul(&v[l + 1]) + c * (q * spec.reference[l]);
        vm[l] = f.tr_mul(&sum);
        kd[l] = sum.tr_mul(&kv[l]);
        p[l] = pl;
    }
    if rule == DisturbanceGain::Literal {
        for l in 0..big_n {
            let c = &model.c[l];
            let bracket = &p[l] - c * c.transpose() * q;
            let svd = bracket.svd(true, true);
            let smax = svd.singular_values.max();
            let cutoff = smax * T::lit(PINV_CUTOFF);
            let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
            if rank < n {
                log::debug!("step {l}: P - CᵀQC has rank {rank} of {n}; using pseudo-inverse");
            }
            let pinv = svd.pseudo_inverse(cutoff).map_err(|e| Error::Singular(e.to_string()))?;
            kd[l] = (&pinv * &vm[l]).tr_mul(&k[l]);
        }
    }
    Ok(GainSchedule { k, kv, kd, v, p, vmat: vm, dbar: model.d.clone(), p_max: spec.p_max })
}

/// Modal synthesis; `P` and `V` are not retained.
pub fn synthesize_modal<T: Real>(model: &ModalLayerModel<T>, spec: &TrackingSpec<T>) -> Result<GainSchedule<T>> {
    let big_n = model.horizon();
    check_weights(spec, big_n)?;
    let n = model.dim();
    let (q, r) = (spec.q, spec.r);
    let a = &model.decay;
    let c_n = &model.c[big_n];
    let mut p = c_n * c_n.transpose() * q;
    let mut vm: DMatrix<T> = DMatrix::zeros(n, n);
    let mut vz = c_n * (q * spec.reference[big_n]);
    let mut v = vec![DVector::zeros(n); big_n + 1];
    v[big_n] = model.row_to_state(&vz);
    let mut k = vec![DVector::zeros(n); big_n];
    let mut kv = vec![DVector::zeros(n); big_n];
    let mut kd = vec![DVector::zeros(n); big_n];
    let mut sum = DMatrix::zeros(n, n);
    for l in (0..big_n).rev() {
        let b = &model.b[l];
        let c = &model.c[l];
        let g = &p * b;
        let sigma = r + b.dot(&g);
        let kz = g.component_mul(a) / sigma;
        sum.copy_from(&p);
        sum += &vm;
        let bs = sum.tr_mul(b);
        let kdz = &bs / sigma;
        // P = Ā P⁺ Ā - σ KᵀK + q cᵀc
        for j in 0..n {
            for i in 0..n {
                p[(i, j)] = a[i] * a[j] * p[(i, j)] - sigma * kz[i] * kz[j] + q * c[i] * c[j];
            }
        }
        // V = (Ā - B̄K)ᵀ (P⁺ + V⁺)
        for j in 0..n {
            for i in 0..n {
                vm[(i, j)] = a[i] * sum[(i, j)] - kz[i] * bs[j];
            }
        }
        let bv = b.dot(&vz);
        vz = vz.component_mul(a) - &kz * bv + c * (q * spec.reference[l]);
        k[l] = model.row_to_state(&kz);
        kd[l] = model.row_to_state(&kdz);
        kv[l] = model.from_modal(b) / sigma;
        v[l] = model.row_to_state(&vz);
    }
    Ok(GainSchedule {
        k,
        kv,
        kd,
        v,
        p: Vec::new(),
        vmat: Vec::new(),
        dbar: model.from_modal(&model.d),
        p_max: spec.p_max,
    })
}

/// Input, output and final state of a rollout on the discrete model.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T: Real> {
    pub inputs: Vec<T>,
    pub outputs: Vec<T>,
    pub final_state: DVector<T>,
}

pub fn rollout<T: Real>(
    model: &DiscreteLayerModel<T>,
    sched: &GainSchedule<T>,
    x0: &DVector<T>,
    saturated: bool,
) -> Rollout<T> {
    let mut x = x0.clone();
    let mut inputs = Vec::with_capacity(model.horizon());
    let mut outputs = Vec::with_capacity(model.horizon() + 1);
    for l in 0..model.horizon() {
        outputs.push(model.output(&x, l));
        let u = if saturated { sched.control_input(&x, l) } else { sched.raw_input(&x, l) };
        inputs.push(u);
        x = model.step(&x, u, l);
    }
    outputs.push(model.output(&x, model.horizon()));
    Rollout { inputs, outputs, final_state: x }
}

/// Open-loop rollout of a given input sequence.
pub fn simulate_inputs<T: Real>(model: &DiscreteLayerModel<T>, x0: &DVector<T>, inputs: &[T]) -> Vec<T> {
    let mut x = x0.clone();
    let mut outputs = Vec::with_capacity(inputs.len() + 1);
    for (l, &u) in inputs.iter().enumerate() {
        outputs.push(model.output(&x, l));
        x = model.step(&x, u, l);
    }
    outputs.push(model.output(&x, inputs.len()));
    outputs
}

/// Tracking cost of `inputs` (length `N`; `u[N] = 0`).
pub fn tracking_cost<T: Real>(model: &DiscreteLayerModel<T>, spec: &TrackingSpec<T>, x0: &DVector<T>, inputs: &[T]) -> T {
    let y = simulate_inputs(model, x0, inputs);
    let track = y.iter().zip(&spec.reference).fold(T::zero(), |s, (y, r)| s + spec.q * (*y - *r) * (*y - *r));
    inputs.iter().fold(track, |s, u| s + spec.r * *u * *u)
}

/// Largest instance accepted by [`batch_qp_oracle`].
pub const ORACLE_MAX: usize = 50;

/// Unconstrained optimum by one stacked least-squares solve.
pub fn batch_qp_oracle<T: Real>(model: &DiscreteLayerModel<T>, spec: &TrackingSpec<T>, x0: &DVector<T>) -> Result<Vec<T>> {
    let (n, big_n) = (model.dim(), model.horizon());
    if n > ORACLE_MAX || big_n > ORACLE_MAX {
        return Err(Error::TooLarge(format!("oracle limited to {ORACLE_MAX} states and steps, got {n} and {big_n}")));
    }
    spec.validate(big_n)?;
    // y = G u + y_free
    let free = simulate_inputs(model, x0, &vec![T::zero(); big_n]);
    let mut g = DMatrix::zeros(big_n + 1, big_n);
    for j in 0..big_n {
        let mut x = model.b[j].clone();
        for l in j + 1..=big_n {
            g[(l, j)] = model.c[l].dot(&x);
            x = &model.a * x;
        }
    }
    let sq = spec.q.sqrt();
    let sr = spec.r.sqrt();
    let mut m = DMatrix::zeros(2 * big_n + 1, big_n);
    m.view_mut((0, 0), (big_n + 1, big_n)).copy_from(&(g * sq));
    m.view_mut((big_n + 1, 0), (big_n, big_n)).fill_diagonal(sr);
    let mut rhs = DVector::zeros(2 * big_n + 1);
    for l in 0..=big_n {
        rhs[l] = sq * (spec.reference[l] - free[l]);
    }
    let svd = m.svd(true, true);
    let u = svd.solve(&rhs, T::lit(1e-15) * svd.singular_values.max()).map_err(|e| Error::Singular(e.to_string()))?;
    Ok(u.iter().copied().collect())
}

/// Reduced-model graphs the controller uses for layers `1..=layers` when
/// material fuses along the path at the end of every layer.
pub fn controller_graphs<T: Real>(
    params: &ProcessParams,
    mat: &MaterialParams,
    path: &BeamPath<T>,
    layers: usize,
    cfg: RomConfig,
) -> Result<Vec<ThermalGraph<T>>> {
    cfg.validate()?;
    let mut g = ThermalGraph::build(params, mat, 1)?;
    let mut out = Vec::with_capacity(layers);
    for k in 1..=layers {
        out.push(g.clone());
        if k == layers {
            break;
        }
        g.update_materials(Solidify::Geometric {
            path,
            until: T::lit(params.tau_layer),
            radius: T::lit(params.beam_radius),
        });
        if explicit_slabs(&g) >= cfg.gamma {
            g.merge_bottom();
        }
        g.add_layer();
    }
    Ok(out)
}

/// Offline phase: one gain schedule per graph, computed concurrently.
pub fn synthesize_layers<T: Real + Send + Sync>(
    params: &ProcessParams,
    path: &BeamPath<T>,
    graphs: &[ThermalGraph<T>],
    spec: &TrackingSpec<T>,
    output: OutputWeights,
) -> Result<Vec<GainSchedule<T>>> {
    graphs
        .par_iter()
        .map(|g| {
            let sys = assemble_for_layer(g, params, path, output)?;
            let model = ModalLayerModel::discretize(&sys, params.tau_layer, params.sample_period)?;
            synthesize_modal(&model, spec)
        })
        .collect()
}

/// Online phase: measure, project onto the controller's model, apply the law.
#[derive(Debug, Clone)]
pub struct LqrPolicy<T: Real> {
    pub schedules: Vec<GainSchedule<T>>,
    pub cfg: RomConfig,
}

impl<T: Real> Policy<T> for LqrPolicy<T> {
    fn input(&mut self, plant: &Plant<T>, layer: usize, sample: usize) -> Result<T> {
        let sched = self
            .schedules
            .get(layer - 1)
            .ok_or_else(|| Error::InvalidParameter(format!("no gains for layer {layer}")))?;
        let x = plant.reduced_state(self.cfg)?;
        if x.len() != sched.dim() {
            return Err(Error::DimensionMismatch { expected: sched.dim(), found: x.len() });
        }
        Ok(sched.control_input(&x, sample))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoopOptions {
    pub plant: PlantKind,
    pub mode: MaterialMode,
    pub output: OutputWeights,
    pub layers: usize,
    pub record: Record,
}

impl Default for ClosedLoopOptions {
    fn default() -> Self {
        Self {
            plant: PlantKind::Fom,
            mode: MaterialMode::Geometric,
            output: OutputWeights::Normalized,
            layers: 1,
            record: Record::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun<T: Real> {
    pub sim: SimResult<T>,
    pub schedules: Vec<GainSchedule<T>>,
    /// Wall time of the offline phase [s].
    pub synthesis_seconds: f64,
}

pub fn run_closed_loop<T: Real + Send + Sync>(
    params: &ProcessParams,
    mat: &MaterialParams,
    path: &BeamPath<T>,
    spec: &TrackingSpec<T>,
    cfg: RomConfig,
    opts: ClosedLoopOptions,
) -> Result<ClosedLoopRun<T>> {
    let start = Instant::now();
    let graphs = controller_graphs(params, mat, path, opts.layers, cfg)?;
    let schedules = synthesize_layers(params, path, &graphs, spec, opts.output)?;
    let synthesis_seconds = start.elapsed().as_secs_f64();
    let reduction = (opts.plant == PlantKind::Rom).then_some(cfg);
    let mut plant = Plant::new(params, mat, path, opts.output, opts.mode, reduction)?;
    let mut policy = LqrPolicy { schedules, cfg };
    let sim = run_build(&mut plant, &mut policy, path, opts.layers, opts.record)?;
    Ok(ClosedLoopRun { sim, schedules: policy.schedules, synthesis_seconds })
}

const GAIN_MAGIC: &[u8; 8] = b"SLMGAIN\0";
const GAIN_VERSION: u32 = 1;

/// Metadata written next to an exported gain schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSidecar {
    pub layer: usize,
    pub horizon: usize,
    pub dim: usize,
    pub q: f64,
    pub r: f64,
    pub p_max: f64,
    pub gamma: usize,
    pub config_hash: String,
}

fn put_f64(w: &mut impl Write, v: &DVector<f64>) -> std::io::Result<()> {
    for x in v.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_f64(r: &mut impl Read, n: usize) -> std::io::Result<DVector<f64>> {
    let mut buf = [0u8; 8];
    let mut out = DVector::zeros(n);
    for i in 0..n {
        r.read_exact(&mut buf)?;
        out[i] = f64::from_le_bytes(buf);
    }
    Ok(out)
}

/// Binary layout (little-endian): magic, `u32` version, `u32` zero,
/// `u64` n, `u64` N, `f64` p_max, d̄ (n), then `K[l] Kᵛ[l] Kᵈ[l]` for
/// `l = 0..N` and finally `v[l]` for `l = 0..=N`.
pub fn write_gains(path: &Path, sched: &GainSchedule<f64>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(GAIN_MAGIC)?;
    w.write_all(&GAIN_VERSION.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&(sched.dim() as u64).to_le_bytes())?;
    w.write_all(&(sched.horizon() as u64).to_le_bytes())?;
    w.write_all(&sched.p_max.to_le_bytes())?;
    put_f64(&mut w, &sched.dbar)?;
    for l in 0..sched.horizon() {
        put_f64(&mut w, &sched.k[l])?;
        put_f64(&mut w, &sched.kv[l])?;
        put_f64(&mut w, &sched.kd[l])?;
    }
    for v in &sched.v {
        put_f64(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gains(path: &Path) -> Result<GainSchedule<f64>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != GAIN_MAGIC {
        return Err(Error::Format("not a gain schedule file".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    if u32::from_le_bytes(word) != GAIN_VERSION {
        return Err(Error::Format(format!("unsupported gain file version {}", u32::from_le_bytes(word))));
    }
    r.read_exact(&mut word)?;
    let mut long = [0u8; 8];
    r.read_exact(&mut long)?;
    let n = u64::from_le_bytes(long) as usize;
    r.read_exact(&mut long)?;
    let big_n = u64::from_le_bytes(long) as usize;
    r.read_exact(&mut long)?;
    let p_max = f64::from_le_bytes(long);
    let dbar = get_f64(&mut r, n)?;
    let (mut k, mut kv, mut kd) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..big_n {
        k.push(get_f64(&mut r, n)?);
        kv.push(get_f64(&mut r, n)?);
        kd.push(get_f64(&mut r, n)?);
    }
    let v = (0..=big_n).map(|_| get_f64(&mut r, n)).collect::<std::io::Result<_>>()?;
    if r.read(&mut long)? != 0 {
        return Err(Error::Format("trailing bytes after gain schedule".into()));
    }
    Ok(GainSchedule { k, kv, kd, v, p: Vec::new(), vmat: Vec::new(), dbar, p_max })
}
