//! Layer-by-layer build simulation shared by open- and closed-loop runs.
//!
//! A [`Plant`] owns a graph (full or reduced), its temperatures and the
//! system assembled for the current layer. A [`Policy`] chooses the laser
//! power at each sample.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::beam::{BeamModel, BeamPath, OutputWeights};
use crate::error::{Error, Result};
use crate::fom::{self, LayerTrace, LtvSystem, Record, SimResult};
use crate::grid::{Solidify, ThermalGraph};
use crate::params::{MaterialParams, ProcessParams};
use crate::rom::{self, RomConfig, RomState};
use crate::Real;

/// When powder turns solid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialMode {
    /// Top-layer cells within one beam radius of the path fuse when the layer ends.
    #[default]
    Geometric,
    /// Cells fuse after any sample that leaves them at or above the melt temperature.
    Thermal,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    #[default]
    Fom,
    Rom,
}

#[derive(Debug, Clone)]
pub struct Plant<T: Real> {
    params: ProcessParams,
    beam: BeamModel<T>,
    output: OutputWeights,
    mode: MaterialMode,
    /// Region of interest when the plant is itself a reduced model.
    reduction: Option<RomConfig>,
    graph: ThermalGraph<T>,
    state: DVector<T>,
    system: LtvSystem<T>,
}

impl<T: Real> Plant<T> {
    /// First layer of fresh powder at the plate temperature.
    pub fn new(
        params: &ProcessParams,
        mat: &MaterialParams,
        path: &BeamPath<T>,
        output: OutputWeights,
        mode: MaterialMode,
        reduction: Option<RomConfig>,
    ) -> Result<Self> {
        params.validate()?;
        if let Some(cfg) = reduction {
            cfg.validate()?;
        }
        let graph = ThermalGraph::build(params, mat, 1)?;
        let state = DVector::from_element(graph.node_count(), T::lit(params.t_plate));
        let beam = BeamModel::from_params(params, mat);
        let system = LtvSystem::assemble(&graph, params, beam, path.clone(), output)?;
        Ok(Self { params: params.clone(), beam, output, mode, reduction, graph, state, system })
    }

    pub fn graph(&self) -> &ThermalGraph<T> {
        &self.graph
    }

    pub fn state(&self) -> &DVector<T> {
        &self.state
    }

    pub fn system(&self) -> &LtvSystem<T> {
        &self.system
    }

    pub fn params(&self) -> &ProcessParams {
        &self.params
    }

    pub fn reduction(&self) -> Option<RomConfig> {
        self.reduction
    }

    fn reassemble(&mut self, path: BeamPath<T>) -> Result<()> {
        self.system = LtvSystem::assemble(&self.graph, &self.params, self.beam, path, self.output)?;
        Ok(())
    }

    /// Installs the path for the layer about to be printed.
    pub fn begin_layer(&mut self, path: &BeamPath<T>) -> Result<()> {
        self.reassemble(path.clone())
    }

    pub fn output(&self, t: T) -> Result<T> {
        self.system.output(&self.state, t)
    }

    /// Applies `u` over the sample starting at `t`.
    pub fn advance(&mut self, u: T, t: T) -> Result<()> {
        let h = T::lit(self.params.sample_period);
        self.state = self.system.step(&self.state, u, t, h);
        if self.mode == MaterialMode::Thermal {
            let temps: Vec<T> = self.state.iter().copied().collect();
            let changed = self.graph.update_materials(Solidify::Thermal { temperatures: &temps });
            if !changed.is_empty() {
                self.reassemble(self.system.path().clone())?;
            }
        }
        Ok(())
    }

    /// Ends the layer: geometric fusing, recoat cooling and a fresh powder layer.
    pub fn finish_layer(&mut self) -> Result<()> {
        if self.mode == MaterialMode::Geometric {
            let path = self.system.path().clone();
            let changed = self.graph.update_materials(Solidify::Geometric {
                path: &path,
                until: T::lit(self.params.tau_layer),
                radius: T::lit(self.params.beam_radius),
            });
            if !changed.is_empty() {
                self.reassemble(path)?;
            }
        }
        let (graph, state) = match self.reduction {
            None => fom::layer_transition(&self.graph, &self.system, &self.state, &self.params)?,
            Some(cfg) => {
                let current = RomState::new(self.graph.clone(), self.state.clone())?;
                let next = rom::rom_transition(&current, &self.system, &self.params, cfg)?;
                (next.graph, next.state)
            }
        };
        self.graph = graph;
        self.state = state;
        let path = self.system.path().clone();
        self.reassemble(path)
    }

    /// State seen by a controller built on a reduced model with region of interest `cfg`.
    pub fn reduced_state(&self, cfg: RomConfig) -> Result<DVector<T>> {
        if self.reduction == Some(cfg) {
            return Ok(self.state.clone());
        }
        rom::project_state(&self.state, &self.graph, cfg)
    }
}

/// Chooses the laser power for each sample.
pub trait Policy<T: Real> {
    fn input(&mut self, plant: &Plant<T>, layer: usize, sample: usize) -> Result<T>;
}

/// Constant power while the beam is still on its path, off afterwards.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPower<T> {
    pub power: T,
}

impl<T: Real> Policy<T> for ConstantPower<T> {
    fn input(&mut self, plant: &Plant<T>, _layer: usize, sample: usize) -> Result<T> {
        let t = T::lit(plant.params().sample_period) * T::count(sample);
        let duration = plant.system().path().duration();
        Ok(if t < duration { self.power } else { T::zero() })
    }
}

/// Prints `layers` layers along `path`, one policy decision per sample.
pub fn run_build<T: Real, P: Policy<T>>(
    plant: &mut Plant<T>,
    policy: &mut P,
    path: &BeamPath<T>,
    layers: usize,
    record: Record,
) -> Result<SimResult<T>> {
    let params = plant.params().clone();
    let samples = params.samples_per_layer()?;
    let h = T::lit(params.sample_period);
    let p_max = T::lit(params.p_max);
    let mut result = SimResult::default();
    for k in 1..=layers {
        if k > 1 {
            plant.finish_layer()?;
        }
        plant.begin_layer(path)?;
        let top = plant.graph().top_layer();
        let mut trace = LayerTrace { layer: k, ..Default::default() };
        for l in 0..=samples {
            let t = h * T::count(l);
            trace.times.push(t);
            trace.outputs.push(plant.output(t)?);
            if record.top {
                trace.top_temperatures.push(plant.state().rows(top.start, top.len()).into_owned());
            }
            if record.states {
                trace.states.push(plant.state().clone());
            }
            if l == samples {
                break;
            }
            let u = policy.input(plant, k, l)?;
            if !(u >= T::zero() && u <= p_max) {
                return Err(Error::InputOutOfRange { sample: l, value: u.as_f64(), p_max: params.p_max });
            }
            trace.inputs.push(u);
            plant.advance(u, t)?;
        }
        trace.solid_cells = plant.graph().solid_count();
        trace.energy = fom::total_energy(plant.graph(), plant.state());
        log::debug!(
            "layer {k}: mean y {:.2} K, mean u {:.3} W, {} nodes",
            trace.mean_output().as_f64(),
            trace.mean_input().as_f64(),
            plant.graph().node_count()
        );
        result.layers.push(trace);
    }
    Ok(result)
}
