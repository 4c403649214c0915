//! Gaussian beam, scan paths and the time-varying input/output weights.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ThermalGraph;
use crate::params::{MaterialParams, ProcessParams};
use crate::Real;

/// Isotropic Gaussian beam with covariance `(R²/9) I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamModel<T> {
    pub radius: T,
    pub absorptivity: T,
    /// Optional truncation distance in standard deviations; `None` keeps the full Gaussian.
    pub cutoff_sigmas: Option<T>,
}

impl<T: Real> BeamModel<T> {
    pub fn new(radius: T, absorptivity: T) -> Self {
        Self { radius, absorptivity, cutoff_sigmas: None }
    }

    pub fn from_params(p: &ProcessParams, m: &MaterialParams) -> Self {
        Self::new(T::lit(p.beam_radius), T::lit(m.absorptivity))
    }

    pub fn with_cutoff(mut self, sigmas: T) -> Self {
        self.cutoff_sigmas = Some(sigmas);
        self
    }

    /// Per-axis variance `R²/9` [m²].
    pub fn variance(&self) -> T {
        self.radius * self.radius / T::lit(9.0)
    }

    /// Absorbed flux per watt of laser power at `x` for a beam centred at `mu` [1/m²].
    pub fn intensity_at(&self, x: [T; 2], mu: [T; 2]) -> T {
        let var = self.variance();
        let (dx, dy) = (x[0] - mu[0], x[1] - mu[1]);
        let r2 = dx * dx + dy * dy;
        if let Some(c) = self.cutoff_sigmas {
            if r2 > c * c * var {
                return T::zero();
            }
        }
        self.absorptivity / (T::two_pi() * var) * (-(r2 / (T::lit(2.0) * var))).exp()
    }
}

/// How the scalar output weights the top-layer temperatures.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputWeights {
    /// Intensity-weighted average; weights sum to one so `y` is in kelvin.
    #[default]
    Normalized,
    /// The absorbed-power weights themselves (`y = b̃ᵀ x`).
    Raw,
}

/// Absorbed power per watt delivered to each node: intensity at the node
/// centre times the cell footprint, nonzero on the top layer only.
pub fn input_vector<T: Real>(g: &ThermalGraph<T>, beam: &BeamModel<T>, mu: [T; 2]) -> DVector<T> {
    let mut b = DVector::zeros(g.node_count());
    let area = g.geometry().footprint();
    for n in g.top_layer() {
        b[n] = beam.intensity_at(g.center(n), mu) * area;
    }
    b
}

/// Output weights for a beam at `mu`.
pub fn output_vector<T: Real>(
    g: &ThermalGraph<T>,
    beam: &BeamModel<T>,
    mu: [T; 2],
    mode: OutputWeights,
) -> Result<DVector<T>> {
    let mut w = input_vector(g, beam, mu);
    if mode == OutputWeights::Raw {
        return Ok(w);
    }
    let total = w.sum();
    if !(total > T::zero()) || !total.is_finite() {
        return Err(Error::DegenerateOutput { x: mu[0].as_f64(), y: mu[1].as_f64() });
    }
    w /= total;
    Ok(w)
}

/// Beam centre trajectory parameterized by arc length at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamPath<T> {
    waypoints: Vec<[T; 2]>,
    speed: T,
    /// Cumulative arc length at each waypoint.
    arc: Vec<T>,
    duration: T,
}

impl<T: Real> BeamPath<T> {
    /// Polyline through `waypoints`, each of which must lie in `[0, lx] × [0, ly]`.
    pub fn from_waypoints(waypoints: Vec<[T; 2]>, speed: T, bounds: [f64; 2]) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::EmptyPath);
        }
        if !(speed > T::zero()) {
            return Err(Error::InvalidParameter(format!("scan speed must be positive, got {speed}")));
        }
        let tol = 1e-12 * bounds[0].max(bounds[1]);
        for w in &waypoints {
            let (x, y) = (w[0].as_f64(), w[1].as_f64());
            if !(x >= -tol && x <= bounds[0] + tol && y >= -tol && y <= bounds[1] + tol) {
                return Err(Error::WaypointOutOfBounds { x, y });
            }
        }
        let mut arc = Vec::with_capacity(waypoints.len());
        let mut s = T::zero();
        arc.push(s);
        for pair in waypoints.windows(2) {
            s += distance(pair[0], pair[1]);
            arc.push(s);
        }
        let duration = s / speed;
        Ok(Self { waypoints, speed, arc, duration })
    }

    /// Beam parked at `point` for `duration` seconds.
    pub fn stationary(point: [T; 2], duration: T) -> Self {
        Self { waypoints: vec![point], speed: T::one(), arc: vec![T::zero()], duration }
    }

    /// Straight segment between two points at the process scan speed.
    pub fn line(params: &ProcessParams, from: [T; 2], to: [T; 2]) -> Result<Self> {
        Self::from_waypoints(vec![from, to], T::lit(params.scan_speed), [params.lx, params.ly])
    }

    /// Inward square spiral starting at corner `(margin, margin)`: three full
    /// sides, then pairs of sides shortened by `pitch` until the side length
    /// runs out.
    pub fn square_spiral(params: &ProcessParams, margin: T, pitch: T) -> Result<Self> {
        if !(pitch > T::zero()) || margin < T::zero() {
            return Err(Error::InvalidParameter(format!("spiral margin {margin}, pitch {pitch}")));
        }
        let (lx, ly) = (T::lit(params.lx), T::lit(params.ly));
        let side_x = lx - margin - margin;
        let side_y = ly - margin - margin;
        if !(side_x > T::zero() && side_y > T::zero()) {
            return Err(Error::EmptyPath);
        }
        let mut pts = vec![[margin, margin]];
        let (mut x, mut y) = (margin, margin);
        // directions: +x, +y, -x, -y
        let dirs = [(1i8, 0i8), (0, 1), (-1, 0), (0, -1)];
        let (mut len_x, mut len_y) = (side_x, side_y);
        let mut leg = 0usize;
        loop {
            let (dx, dy) = dirs[leg % 4];
            let len = if dx != 0 { len_x } else { len_y };
            if len <= T::lit(1e-12) * (lx + ly) {
                break;
            }
            x += T::lit(f64::from(dx)) * len;
            y += T::lit(f64::from(dy)) * len;
            pts.push([x, y]);
            // every leg after the first shortens the next leg along its axis
            if leg >= 1 {
                if dx != 0 {
                    len_x -= pitch;
                } else {
                    len_y -= pitch;
                }
            }
            leg += 1;
        }
        if pts.len() < 2 {
            return Err(Error::EmptyPath);
        }
        Self::from_waypoints(pts, T::lit(params.scan_speed), [params.lx, params.ly])
    }

    /// Loads a waypoint CSV with columns `x`, `y` in metres.
    pub fn load_csv(path: &Path, params: &ProcessParams) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            x: f64,
            y: f64,
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let mut pts = Vec::new();
        for row in rdr.deserialize() {
            let r: Row = row?;
            pts.push([T::lit(r.x), T::lit(r.y)]);
        }
        Self::from_waypoints(pts, T::lit(params.scan_speed), [params.lx, params.ly])
    }

    /// Writes the sampled trajectory `(t, x, y)` at multiples of `h` over `[0, horizon]`.
    pub fn write_csv(&self, path: &Path, h: T, samples: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "x", "y"])?;
        for l in 0..=samples {
            let t = h * T::count(l);
            let [x, y] = self.position(t);
            w.write_record([crate::io::fmt(t), crate::io::fmt(x), crate::io::fmt(y)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn waypoints(&self) -> &[[T; 2]] {
        &self.waypoints
    }

    pub fn speed(&self) -> T {
        self.speed
    }

    pub fn length(&self) -> T {
        *self.arc.last().expect("path has at least one waypoint")
    }

    pub fn duration(&self) -> T {
        self.duration
    }

    /// Beam centre at time `t`, clamped to the path ends.
    pub fn position(&self, t: T) -> [T; 2] {
        if self.waypoints.len() == 1 {
            return self.waypoints[0];
        }
        let s = (t * self.speed).max(T::zero()).min(self.length());
        self.at_arc(s)
    }

    fn at_arc(&self, s: T) -> [T; 2] {
        let seg = match self.arc.iter().position(|&a| a > s) {
            Some(0) => 0,
            Some(k) => k - 1,
            None => return *self.waypoints.last().expect("non-empty"),
        };
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        let len = self.arc[seg + 1] - self.arc[seg];
        if len <= T::zero() {
            return a;
        }
        let f = (s - self.arc[seg]) / len;
        [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
    }

    /// Same geometry traversed backwards.
    pub fn reversed(&self) -> Self {
        let mut pts = self.waypoints.clone();
        pts.reverse();
        if pts.len() == 1 {
            return Self::stationary(pts[0], self.duration);
        }
        let mut arc = Vec::with_capacity(pts.len());
        let total = self.length();
        for a in self.arc.iter().rev() {
            arc.push(total - *a);
        }
        Self { waypoints: pts, speed: self.speed, arc, duration: self.duration }
    }

    /// Shortest distance from `p` to the part of the path traversed by time `until`.
    pub fn distance_to_traversed(&self, p: [T; 2], until: T) -> T {
        if self.waypoints.len() == 1 {
            return distance(p, self.waypoints[0]);
        }
        let s_end = (until * self.speed).max(T::zero()).min(self.length());
        let mut best = distance(p, self.waypoints[0]);
        for k in 0..self.waypoints.len() - 1 {
            if self.arc[k] > s_end {
                break;
            }
            let a = self.waypoints[k];
            let b = if self.arc[k + 1] <= s_end { self.waypoints[k + 1] } else { self.at_arc(s_end) };
            best = best.min(segment_distance(p, a, b));
        }
        best
    }
}

fn distance<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}

fn segment_distance<T: Real>(p: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    if len2 <= T::zero() {
        return distance(p, a);
    }
    let f = (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).max(T::zero()).min(T::one());
    distance(p, [a[0] + f * abx, a[1] + f * aby])
}
