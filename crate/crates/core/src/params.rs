//! Process and material parameters in SI units.
//!
//! Defaults reproduce the 316L stainless steel case study: a 500 µm × 500 µm
//! footprint split into 25 × 25 cells, 50 µm layers and a 10 µs sample period.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Build geometry, boundary conditions, timing and laser limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessParams {
    /// Footprint along x [m].
    pub lx: f64,
    /// Footprint along y [m].
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    /// Layer thickness [m].
    pub dz: f64,
    /// Number of layers in the build.
    pub layers: usize,
    /// Ambient temperature [K].
    pub t_ambient: f64,
    /// Build plate and fresh powder temperature [K].
    pub t_plate: f64,
    /// Top-surface convection coefficient [W/(m²K)].
    pub h_conv: f64,
    /// Plate contact conductance per unit area [W/(m²K)].
    pub kappa_s_areal: f64,
    /// Layer print time [s].
    pub tau_layer: f64,
    /// Recoating time [s].
    pub tau_recoat: f64,
    /// Sample period [s].
    pub sample_period: f64,
    /// Laser power limit [W].
    pub p_max: f64,
    /// Beam radius [m].
    pub beam_radius: f64,
    /// Scan speed [m/s].
    pub scan_speed: f64,
}

impl Default for ProcessParams {
    fn default() -> Self {
        Self::case_study()
    }
}

impl ProcessParams {
    pub fn case_study() -> Self {
        Self {
            lx: 500e-6,
            ly: 500e-6,
            nx: 25,
            ny: 25,
            dz: 50e-6,
            layers: 20,
            t_ambient: 300.0,
            t_plate: 900.0,
            h_conv: 10.0,
            // solid half-cell contact: k_d / (dz / 2)
            kappa_s_areal: 20.0 / 25e-6,
            tau_layer: 1.25e-3,
            tau_recoat: 1.25e-3,
            sample_period: 10e-6,
            p_max: 50.0,
            beam_radius: 60e-6,
            scan_speed: 1.2,
        }
    }

    /// Same physical build on a coarser or finer footprint grid.
    pub fn with_grid(mut self, nx: usize, ny: usize) -> Self {
        self.nx = nx;
        self.ny = ny;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lx", self.lx),
            ("ly", self.ly),
            ("dz", self.dz),
            ("t_ambient", self.t_ambient),
            ("t_plate", self.t_plate),
            ("h_conv", self.h_conv),
            ("kappa_s_areal", self.kappa_s_areal),
            ("tau_layer", self.tau_layer),
            ("tau_recoat", self.tau_recoat),
            ("sample_period", self.sample_period),
            ("p_max", self.p_max),
            ("beam_radius", self.beam_radius),
            ("scan_speed", self.scan_speed),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 2x2, got {}x{}",
                self.nx, self.ny
            )));
        }
        if self.layers == 0 {
            return Err(Error::InvalidParameter("layers must be at least 1".into()));
        }
        self.samples_per_layer().map(|_| ())
    }

    /// Number of samples `N_k = tau_layer / h`; must be an integer to 1e-9.
    pub fn samples_per_layer(&self) -> Result<usize> {
        horizon(self.tau_layer, self.sample_period)
    }

    pub fn cell_dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn cell_dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn cell_footprint(&self) -> f64 {
        self.cell_dx() * self.cell_dy()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_footprint() * self.dz
    }

    pub fn cells_per_layer(&self) -> usize {
        self.nx * self.ny
    }
}

/// Integer number of steps of length `h` in `tau`.
pub fn horizon(tau: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && tau > 0.0) {
        return Err(Error::InfeasibleHorizon { tau, h });
    }
    let ratio = tau / h;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * n.max(1.0) || n < 1.0 {
        return Err(Error::InfeasibleHorizon { tau, h });
    }
    Ok(n as usize)
}

/// Thermophysical properties of the printed alloy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialParams {
    /// Volumetric heat capacity of the solid [J/(m³K)].
    pub c_p: f64,
    /// Powder conductivity [W/(mK)].
    pub k_powder: f64,
    /// Solid conductivity [W/(mK)].
    pub k_solid: f64,
    /// Powder porosity.
    pub porosity: f64,
    /// Absorbed fraction of laser power.
    pub absorptivity: f64,
    /// Temperature at or above which powder fuses [K].
    pub t_melt: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self::ss316l()
    }
}

impl MaterialParams {
    pub fn ss316l() -> Self {
        Self {
            c_p: 4.25e6,
            k_powder: 0.5,
            k_solid: 20.0,
            porosity: 0.5,
            absorptivity: 0.42,
            t_melt: 1673.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_p", self.c_p), ("k_powder", self.k_powder), ("k_solid", self.k_solid)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.porosity) {
            return Err(Error::InvalidParameter(format!(
                "porosity must lie in [0, 1), got {}",
                self.porosity
            )));
        }
        if !(self.absorptivity > 0.0 && self.absorptivity < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "absorptivity must lie in (0, 1), got {}",
                self.absorptivity
            )));
        }
        if !(self.t_melt.is_finite() && self.t_melt > 0.0) {
            return Err(Error::InvalidParameter(format!("t_melt must be positive, got {}", self.t_melt)));
        }
        Ok(())
    }
}
