//! Layer-merging reduction.
//!
//! The reduced model keeps the top `gamma` layers explicit and lumps
//! everything beneath them into one merged layer with one node per column.
//! When a layer is added, the lowest explicit layer is folded into the merged
//! layer with a capacity-weighted mean, which conserves each column's stored
//! energy exactly.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beam::{BeamPath, OutputWeights};
use crate::error::{Error, Result};
use crate::fom::{self, LayerTrace, LtvSystem, Record};
use crate::grid::ThermalGraph;
use crate::params::{MaterialParams, ProcessParams};
use crate::plant::{run_build, ConstantPower, MaterialMode, Plant};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RomConfig {
    /// Number of explicitly modelled top layers.
    pub gamma: usize,
}

impl RomConfig {
    pub fn new(gamma: usize) -> Result<Self> {
        let cfg = Self { gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma == 0 {
            return Err(Error::InvalidParameter("gamma must be at least 1".into()));
        }
        Ok(())
    }
}

/// Reduced graph with its temperatures; merged entries come first.
#[derive(Debug, Clone, PartialEq)]
pub struct RomState<T: Real> {
    pub graph: ThermalGraph<T>,
    pub state: DVector<T>,
}

impl<T: Real> RomState<T> {
    pub fn new(graph: ThermalGraph<T>, state: DVector<T>) -> Result<Self> {
        if graph.node_count() != state.len() {
            return Err(Error::DimensionMismatch { expected: graph.node_count(), found: state.len() });
        }
        Ok(Self { graph, state })
    }

    /// Temperatures of the merged layer, if any.
    pub fn merged(&self) -> Option<nalgebra::DVectorView<'_, T>> {
        self.graph.has_merged().then(|| self.state.rows(0, self.graph.cells_per_layer()))
    }

    /// Temperatures of ROI layer `i` (1 = lowest explicit layer).
    pub fn roi_layer(&self, i: usize) -> nalgebra::DVectorView<'_, T> {
        let cells = self.graph.cells_per_layer();
        let slab = i - 1 + usize::from(self.graph.has_merged());
        self.state.rows(slab * cells, cells)
    }
}

pub fn reduce_graph<T: Real>(g: &ThermalGraph<T>, cfg: RomConfig) -> Result<ThermalGraph<T>> {
    g.reduce(cfg.gamma)
}

/// Capacity-weighted mean of two temperatures: the merge that keeps
/// `c0 t0 + c1 t1` unchanged.
pub fn merge_temperature<T: Real>(c0: T, t0: T, c1: T, t1: T) -> T {
    (c0 * t0 + c1 * t1) / (c0 + c1)
}

pub(crate) fn explicit_slabs<T: Real>(g: &ThermalGraph<T>) -> usize {
    g.slab_count() - usize::from(g.has_merged())
}

/// Temperatures after [`ThermalGraph::merge_bottom`] is applied to `g`.
fn merge_bottom_state<T: Real>(g: &ThermalGraph<T>, x: &DVector<T>) -> DVector<T> {
    let cells = g.cells_per_layer();
    if !g.has_merged() {
        return x.clone();
    }
    let nodes = g.nodes();
    let mut out = DVector::zeros(x.len() - cells);
    for c in 0..cells {
        out[c] = merge_temperature(nodes[c].capacity, x[c], nodes[cells + c].capacity, x[cells + c]);
    }
    out.rows_mut(cells, x.len() - 2 * cells).copy_from(&x.rows(2 * cells, x.len() - 2 * cells));
    out
}

/// Temperatures of the reduced model seen from a full (or less reduced)
/// state: ROI layers are copied, each merged node gets the capacity-weighted
/// mean of everything below the ROI in its column.
pub fn project_state<T: Real>(x: &DVector<T>, g: &ThermalGraph<T>, cfg: RomConfig) -> Result<DVector<T>> {
    cfg.validate()?;
    if x.len() != g.node_count() {
        return Err(Error::DimensionMismatch { expected: g.node_count(), found: x.len() });
    }
    if explicit_slabs(g) <= cfg.gamma {
        return Ok(x.clone());
    }
    let cells = g.cells_per_layer();
    let lumped = g.slab_count() - cfg.gamma;
    let nodes = g.nodes();
    let mut out = DVector::zeros((cfg.gamma + 1) * cells);
    for c in 0..cells {
        let (mut energy, mut cap) = (T::zero(), T::zero());
        for s in 0..lumped {
            let i = s * cells + c;
            energy += nodes[i].capacity * x[i];
            cap += nodes[i].capacity;
        }
        out[c] = energy / cap;
    }
    out.rows_mut(cells, cfg.gamma * cells).copy_from(&x.rows(lumped * cells, cfg.gamma * cells));
    Ok(out)
}

/// Graph and state of the reduced model with region of interest `cfg`.
pub fn project_fom_to_rom<T: Real>(x: &DVector<T>, g: &ThermalGraph<T>, cfg: RomConfig) -> Result<RomState<T>> {
    let state = project_state(x, g, cfg)?;
    let mut graph = g.clone();
    while explicit_slabs(&graph) > cfg.gamma {
        graph.merge_bottom();
    }
    Ok(RomState { graph, state })
}

/// Recoat transition of the reduced model: cool, fold the lowest ROI layer
/// into the merged layer once the ROI is full, shift, and add powder on top.
pub fn rom_transition<T: Real>(
    rom: &RomState<T>,
    sys: &LtvSystem<T>,
    params: &ProcessParams,
    cfg: RomConfig,
) -> Result<RomState<T>> {
    cfg.validate()?;
    if sys.dim() != rom.state.len() {
        return Err(Error::DimensionMismatch { expected: rom.state.len(), found: sys.dim() });
    }
    let cooled = fom::cool(sys, &rom.state, params);
    let mut graph = rom.graph.clone();
    let mut state = cooled;
    if explicit_slabs(&graph) >= cfg.gamma {
        state = merge_bottom_state(&graph, &state);
        graph.merge_bottom();
    }
    let cells = graph.cells_per_layer();
    graph.add_layer();
    let state = fom::append_fresh_layer(&state, cells, T::lit(params.t_plate));
    Ok(RomState { graph, state })
}

/// Time-averaged relative error of the top-layer temperatures:
/// mean over samples of `mean|T_fom - T_rom| / mean T_fom`.
pub fn rom_error<T: Real>(fom: &LayerTrace<T>, rom: &LayerTrace<T>) -> Result<T> {
    if fom.times.len() != rom.times.len()
        || fom.times.iter().zip(&rom.times).any(|(a, b)| *a != *b)
    {
        return Err(Error::SamplingMismatch(format!(
            "{} vs {} samples",
            fom.times.len(),
            rom.times.len()
        )));
    }
    if fom.top_temperatures.len() != fom.times.len() || rom.top_temperatures.len() != rom.times.len() {
        return Err(Error::SamplingMismatch("top-layer temperatures were not recorded".into()));
    }
    let mut total = T::zero();
    for (tf, tr) in fom.top_temperatures.iter().zip(&rom.top_temperatures) {
        if tf.len() != tr.len() {
            return Err(Error::DimensionMismatch { expected: tf.len(), found: tr.len() });
        }
        let n = T::count(tf.len());
        let diff = tf.iter().zip(tr.iter()).fold(T::zero(), |s, (a, b)| s + (*a - *b).abs()) / n;
        let level = tf.sum() / n;
        total += diff / level;
    }
    Ok(total / T::count(fom.top_temperatures.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub layer: usize,
    pub gamma: usize,
    pub relative_error: f64,
}

/// Paired open-loop builds of the full model and one reduced model per
/// `gamma`; reports the error on the top layer of every layer count up to
/// `max_layers`. Rows are ordered by layer, then by `gamma`.
#[allow(clippy::too_many_arguments)]
pub fn error_sweep(
    params: &ProcessParams,
    mat: &MaterialParams,
    path: &BeamPath<f64>,
    gammas: &[usize],
    max_layers: usize,
    power: f64,
    mode: MaterialMode,
) -> Result<Vec<SweepRow>> {
    let record = Record { top: true, states: false };
    let run = |reduction: Option<RomConfig>| -> Result<Vec<LayerTrace<f64>>> {
        let mut plant = Plant::new(params, mat, path, OutputWeights::Normalized, mode, reduction)?;
        Ok(run_build(&mut plant, &mut ConstantPower { power }, path, max_layers, record)?.layers)
    };
    let configs: Vec<Option<RomConfig>> = std::iter::once(None)
        .chain(gammas.iter().map(|&g| RomConfig::new(g).map(Some)).collect::<Result<Vec<_>>>()?)
        .collect();
    let runs: Vec<Vec<LayerTrace<f64>>> = configs.par_iter().map(|c| run(*c)).collect::<Result<_>>()?;
    let (full, reduced) = runs.split_first().expect("full run present");
    let mut rows = Vec::with_capacity(max_layers * gammas.len());
    for layer in 1..=max_layers {
        for (gi, &gamma) in gammas.iter().enumerate() {
            let e = rom_error(&full[layer - 1], &reduced[gi][layer - 1])?;
            rows.push(SweepRow { layer, gamma, relative_error: e });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &std::path::Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
