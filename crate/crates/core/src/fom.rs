//! Linear time-varying thermal dynamics of a graph, exact sampled stepping,
//! and the layer-to-layer transition.
//!
//! With diagonal capacities `C`, Laplacian `L` and boundary matrix `H`
//!
//! ```text
//! C ẋ = -(L + H) x + h∞ A_f σ T∞ + κs A_f δ Ts + b̃(t) u
//! ```
//!
//! where `A_f` is the cell footprint, `σ`/`δ` the top/bottom indicators and
//! `b̃(t)` the absorbed-power weights of the beam. The same assembly serves
//! the full graph and any reduced graph.

use std::ops::Range;

use nalgebra::DVector;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::Serialize;

use crate::beam::{BeamModel, BeamPath, OutputWeights};
use crate::error::{Error, Result};
use crate::expm;
use crate::grid::ThermalGraph;
use crate::params::ProcessParams;
use crate::Real;

pub type StateVector<T> = DVector<T>;

/// Relative truncation tolerance of the propagator series.
const STEP_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct LtvSystem<T: Real> {
    a: CsrMatrix<T>,
    stiffness: CsrMatrix<T>,
    capacity: DVector<T>,
    drift: DVector<T>,
    a_norm: T,
    nonsingular: bool,
    top: Range<usize>,
    centers: Vec<[T; 2]>,
    footprint: T,
    beam: BeamModel<T>,
    path: BeamPath<T>,
    output: OutputWeights,
}

impl<T: Real> LtvSystem<T> {
    /// Builds `A = -C⁻¹(L + H)`, the drift `d` and the beam-dependent maps.
    pub fn assemble(
        g: &ThermalGraph<T>,
        params: &ProcessParams,
        beam: BeamModel<T>,
        path: BeamPath<T>,
        output: OutputWeights,
    ) -> Result<Self> {
        let n = g.node_count();
        let footprint = g.geometry().footprint();
        let h_node = T::lit(params.h_conv) * footprint;
        let ks_node = T::lit(params.kappa_s_areal) * footprint;
        let (t_inf, t_s) = (T::lit(params.t_ambient), T::lit(params.t_plate));

        let mut diag = DVector::<T>::zeros(n);
        let mut forcing = DVector::<T>::zeros(n);
        let mut coo = CooMatrix::new(n, n);
        for e in g.edges() {
            coo.push(e.a, e.b, -e.conductance);
            coo.push(e.b, e.a, -e.conductance);
            diag[e.a] += e.conductance;
            diag[e.b] += e.conductance;
        }
        for i in 0..n {
            if g.sigma(i) {
                diag[i] += h_node;
                forcing[i] += h_node * t_inf;
            }
            if g.delta(i) {
                diag[i] += ks_node;
                forcing[i] += ks_node * t_s;
            }
            coo.push(i, i, diag[i]);
        }
        let stiffness = CsrMatrix::from(&coo);
        let capacity = DVector::from_iterator(n, g.capacities());
        let mut a = stiffness.clone();
        for (i, mut row) in a.row_iter_mut().enumerate() {
            let inv = -T::one() / capacity[i];
            for v in row.values_mut() {
                *v *= inv;
            }
        }
        let drift = forcing.component_div(&capacity);
        let a_norm = expm::norm_inf(&a);
        let top = g.top_layer();
        let centers = top.clone().map(|i| g.center(i)).collect();
        Ok(Self {
            a,
            stiffness,
            capacity,
            drift,
            a_norm,
            nonsingular: params.h_conv > 0.0 || params.kappa_s_areal > 0.0,
            top,
            centers,
            footprint,
            beam,
            path,
            output,
        })
    }

    pub fn dim(&self) -> usize {
        self.capacity.len()
    }

    pub fn a(&self) -> &CsrMatrix<T> {
        &self.a
    }

    /// `L + H` [W/K].
    pub fn stiffness(&self) -> &CsrMatrix<T> {
        &self.stiffness
    }

    pub fn capacity(&self) -> &DVector<T> {
        &self.capacity
    }

    pub fn drift(&self) -> &DVector<T> {
        &self.drift
    }

    /// Whether some boundary term anchors the temperature level, making `A` invertible.
    pub fn is_nonsingular(&self) -> bool {
        self.nonsingular
    }

    pub fn beam(&self) -> &BeamModel<T> {
        &self.beam
    }

    pub fn path(&self) -> &BeamPath<T> {
        &self.path
    }

    pub fn output_mode(&self) -> OutputWeights {
        self.output
    }

    /// Absorbed-power weights `b̃(t)` [W/W].
    pub fn input_weights(&self, t: T) -> DVector<T> {
        let mu = self.path.position(t);
        let mut b = DVector::zeros(self.dim());
        for (k, i) in self.top.clone().enumerate() {
            b[i] = self.beam.intensity_at(self.centers[k], mu) * self.footprint;
        }
        b
    }

    /// `B(t) = C⁻¹ b̃(t)` [K/(s·W)].
    pub fn input(&self, t: T) -> DVector<T> {
        self.input_weights(t).component_div(&self.capacity)
    }

    /// Output row `C(t)`.
    pub fn output_weights(&self, t: T) -> Result<DVector<T>> {
        let mut w = self.input_weights(t);
        if self.output == OutputWeights::Raw {
            return Ok(w);
        }
        let total = w.sum();
        if !(total > T::zero()) || !total.is_finite() {
            let mu = self.path.position(t);
            return Err(Error::DegenerateOutput { x: mu[0].as_f64(), y: mu[1].as_f64() });
        }
        w /= total;
        Ok(w)
    }

    pub fn output(&self, x: &DVector<T>, t: T) -> Result<T> {
        Ok(self.output_weights(t)?.dot(x))
    }

    /// One sample of length `h` with the input held at its value at `t`.
    pub fn step(&self, x: &DVector<T>, u: T, t: T, h: T) -> DVector<T> {
        let mut w = self.drift.clone();
        if u != T::zero() {
            w += self.input(t) * u;
        }
        expm::zoh_step(&self.a, self.a_norm, x, &w, h, T::lit(STEP_TOL))
    }

    /// Right-hand side `A x + B(t) u + d`.
    pub fn derivative(&self, x: &DVector<T>, u: T, t: T) -> DVector<T> {
        let mut out = DVector::zeros(self.dim());
        expm::spmv(&self.a, x, &mut out);
        out += &self.drift;
        if u != T::zero() {
            out += self.input(t) * u;
        }
        out
    }
}

/// Stored thermal energy `Σ C_i T_i` [J].
pub fn total_energy<T: Real>(g: &ThermalGraph<T>, x: &DVector<T>) -> T {
    g.capacities().zip(x.iter()).fold(T::zero(), |s, (c, t)| s + c * *t)
}

/// Recorded samples of one layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LayerTrace<T> {
    pub layer: usize,
    /// `N + 1` sample times measured from the layer start.
    pub times: Vec<T>,
    /// `N` applied inputs; the laser is off at the final sample.
    pub inputs: Vec<T>,
    /// `N + 1` outputs.
    pub outputs: Vec<T>,
    /// Top-layer temperatures per sample, when recorded.
    #[serde(skip)]
    pub top_temperatures: Vec<DVector<T>>,
    /// Full state per sample, when recorded.
    #[serde(skip)]
    pub states: Vec<DVector<T>>,
    pub solid_cells: usize,
    /// Stored energy at the end of the layer [J].
    pub energy: T,
}

impl<T: Real> LayerTrace<T> {
    pub fn mean_output(&self) -> T {
        mean(&self.outputs)
    }

    pub fn mean_input(&self) -> T {
        mean(&self.inputs)
    }

    pub fn mean_abs_error(&self, reference: T) -> T {
        let dev: Vec<T> = self.outputs.iter().map(|y| (*y - reference).abs()).collect();
        mean(&dev)
    }
}

fn mean<T: Real>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    v.iter().fold(T::zero(), |s, x| s + *x) / T::count(v.len())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimResult<T> {
    pub layers: Vec<LayerTrace<T>>,
}

impl<T: Real> SimResult<T> {
    pub fn layer(&self, k: usize) -> Option<&LayerTrace<T>> {
        self.layers.iter().find(|l| l.layer == k)
    }

    /// Every applied input across all layers.
    pub fn inputs(&self) -> impl Iterator<Item = T> + '_ {
        self.layers.iter().flat_map(|l| l.inputs.iter().copied())
    }
}

/// What to keep per sample besides `(t, u, y)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Record {
    pub top: bool,
    pub states: bool,
}

/// Steps a fixed system through one layer under a given input profile.
pub fn simulate_layer<T: Real>(
    sys: &LtvSystem<T>,
    g: &ThermalGraph<T>,
    x0: &DVector<T>,
    inputs: &[T],
    h: T,
    p_max: T,
    record: Record,
) -> Result<(LayerTrace<T>, DVector<T>)> {
    if x0.len() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), found: x0.len() });
    }
    if let Some((sample, &u)) = inputs.iter().enumerate().find(|(_, &u)| !(u >= T::zero() && u <= p_max)) {
        return Err(Error::InputOutOfRange { sample, value: u.as_f64(), p_max: p_max.as_f64() });
    }
    let mut trace = LayerTrace { layer: g.layer_count(), ..Default::default() };
    let top = g.top_layer();
    let mut x = x0.clone();
    for l in 0..=inputs.len() {
        let t = h * T::count(l);
        trace.times.push(t);
        trace.outputs.push(sys.output(&x, t)?);
        if record.top {
            trace.top_temperatures.push(x.rows(top.start, top.len()).into_owned());
        }
        if record.states {
            trace.states.push(x.clone());
        }
        if let Some(&u) = inputs.get(l) {
            trace.inputs.push(u);
            x = sys.step(&x, u, t, h);
        }
    }
    trace.solid_cells = g.solid_count();
    trace.energy = total_energy(g, &x);
    Ok((trace, x))
}

/// Recoating: cool for `tau_recoat` with the laser off, then spread a powder
/// layer at the plate temperature on top.
pub fn layer_transition<T: Real>(
    g: &ThermalGraph<T>,
    sys: &LtvSystem<T>,
    x_end: &DVector<T>,
    params: &ProcessParams,
) -> Result<(ThermalGraph<T>, DVector<T>)> {
    if x_end.len() != g.node_count() {
        return Err(Error::DimensionMismatch { expected: g.node_count(), found: x_end.len() });
    }
    let cooled = cool(sys, x_end, params);
    let mut next = g.clone();
    next.add_layer();
    let x = append_fresh_layer(&cooled, g.cells_per_layer(), T::lit(params.t_plate));
    Ok((next, x))
}

pub(crate) fn cool<T: Real>(sys: &LtvSystem<T>, x: &DVector<T>, params: &ProcessParams) -> DVector<T> {
    if params.tau_recoat > 0.0 {
        sys.step(x, T::zero(), T::zero(), T::lit(params.tau_recoat))
    } else {
        x.clone()
    }
}

pub(crate) fn append_fresh_layer<T: Real>(x: &DVector<T>, cells: usize, t_plate: T) -> DVector<T> {
    let n = x.len();
    let mut out = DVector::from_element(n + cells, t_plate);
    out.rows_mut(0, n).copy_from(x);
    out
}

/// Convenience constructor used throughout tests and the harness.
pub fn assemble_for_layer<T: Real>(
    g: &ThermalGraph<T>,
    params: &ProcessParams,
    path: &BeamPath<T>,
    output: OutputWeights,
) -> Result<LtvSystem<T>> {
    let beam = BeamModel::from_params(params, g.material());
    LtvSystem::assemble(g, params, beam, path.clone(), output)
}
