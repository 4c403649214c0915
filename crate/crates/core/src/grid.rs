//! Voxel grid of the build volume and its weighted thermal graph.
//!
//! Nodes are stored slab by slab, bottom first: node `s * nx * ny + j * nx + i`
//! is cell `(i, j)` of slab `s`. In a full-order graph slab `s` is layer
//! `s + 1`. A reduced graph may carry a merged slab at position 0 that lumps
//! every layer below the region of interest into one node per column.
//!
//! Edges follow the same slab order: slab 0 holds only its lateral edges,
//! every later slab holds its vertical edges to the slab beneath followed by
//! its own lateral edges.

use serde::{Deserialize, Serialize};

use crate::beam::BeamPath;
use crate::error::{Error, Result};
use crate::params::{MaterialParams, ProcessParams};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Powder,
    Solid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialState {
    Powder,
    Solid,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node<T> {
    pub cell: (usize, usize),
    /// 1-based layer number; 0 for the merged layer.
    pub layer: usize,
    /// For a merged node, the phase of the topmost cell it absorbed.
    pub phase: Phase,
    pub merged: bool,
    /// Heat capacity [J/K].
    pub capacity: T,
}

impl<T> Node<T> {
    pub fn state(&self) -> MaterialState {
        match (self.merged, self.phase) {
            (true, _) => MaterialState::Merged,
            (false, Phase::Powder) => MaterialState::Powder,
            (false, Phase::Solid) => MaterialState::Solid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Lateral,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge<T> {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
    /// Conductance [W/K].
    pub conductance: T,
}

/// Cell dimensions shared by every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry<T> {
    pub nx: usize,
    pub ny: usize,
    pub dx: T,
    pub dy: T,
    pub dz: T,
}

impl<T: Real> Geometry<T> {
    pub fn from_params(p: &ProcessParams) -> Self {
        Self {
            nx: p.nx,
            ny: p.ny,
            dx: T::lit(p.cell_dx()),
            dy: T::lit(p.cell_dy()),
            dz: T::lit(p.dz),
        }
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn footprint(&self) -> T {
        self.dx * self.dy
    }

    pub fn volume(&self) -> T {
        self.dx * self.dy * self.dz
    }

    /// Centre of cell `(i, j)` in the build plane [m].
    pub fn center(&self, i: usize, j: usize) -> [T; 2] {
        let half = T::lit(0.5);
        [(T::count(i) + half) * self.dx, (T::count(j) + half) * self.dy]
    }

    fn lateral_count(&self) -> usize {
        self.ny * (self.nx - 1) + self.nx * (self.ny - 1)
    }

    /// Local lateral cell pairs of one slab with their face area and centre distance.
    fn lateral_pairs(&self) -> impl Iterator<Item = (usize, usize, T, T)> + '_ {
        let (nx, ny) = (self.nx, self.ny);
        let x_faces = (0..ny).flat_map(move |j| {
            (0..nx - 1).map(move |i| (j * nx + i, j * nx + i + 1, self.dy * self.dz, self.dx))
        });
        let y_faces = (0..ny - 1).flat_map(move |j| {
            (0..nx).map(move |i| (j * nx + i, (j + 1) * nx + i, self.dx * self.dz, self.dy))
        });
        x_faces.chain(y_faces)
    }
}

/// Heat capacity of one cell [J/K]. Powder scales the solid value by `1 - porosity`.
pub fn cell_capacity<T: Real>(mat: &MaterialParams, phase: Phase, volume: T) -> T {
    let c = T::lit(mat.c_p) * volume;
    match phase {
        Phase::Solid => c,
        Phase::Powder => T::lit(1.0 - mat.porosity) * c,
    }
}

pub fn conductivity(mat: &MaterialParams, phase: Phase) -> f64 {
    match phase {
        Phase::Powder => mat.k_powder,
        Phase::Solid => mat.k_solid,
    }
}

/// Conductance between two cells [W/K]: two half-cell resistances in series,
/// i.e. the harmonic-mean conductivity times face area over centre distance.
pub fn edge_conductance<T: Real>(
    mat: &MaterialParams,
    a: Phase,
    b: Phase,
    area: T,
    distance: T,
) -> T {
    let (ka, kb) = (T::lit(conductivity(mat, a)), T::lit(conductivity(mat, b)));
    let k_eff = T::lit(2.0) * ka * kb / (ka + kb);
    k_eff * area / distance
}

/// What causes powder to fuse in [`ThermalGraph::update_materials`].
#[derive(Debug, Clone, Copy)]
pub enum Solidify<'a, T: Real> {
    /// Top-layer cells whose centre came within `radius` of the beam centre
    /// while it travelled the path over `[0, until]`.
    Geometric {
        path: &'a BeamPath<T>,
        until: T,
        radius: T,
    },
    /// Cells at or above the melt temperature.
    Thermal { temperatures: &'a [T] },
}

/// Per-slab description used to (re)build the node and edge lists.
#[derive(Debug, Clone)]
struct Slab<T> {
    layer: usize,
    merged: bool,
    phases: Vec<Phase>,
    capacities: Vec<T>,
    /// Frozen lateral conductances; only merged slabs carry them.
    lateral: Option<Vec<T>>,
}

/// Multi-layer weighted graph with capacities and material states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalGraph<T> {
    geometry: Geometry<T>,
    material: MaterialParams,
    layer_count: usize,
    nodes: Vec<Node<T>>,
    edges: Vec<Edge<T>>,
}

impl<T: Real> ThermalGraph<T> {
    /// Full-order graph of `layers` powder layers.
    pub fn build(params: &ProcessParams, mat: &MaterialParams, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidParameter("graph needs at least one layer".into()));
        }
        let positive = [params.lx, params.ly, params.dz];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || params.nx < 2 || params.ny < 2
        {
            return Err(Error::InvalidParameter(format!(
                "grid {}x{} over {} x {} x {} m",
                params.nx, params.ny, params.lx, params.ly, params.dz
            )));
        }
        mat.validate()?;
        let geometry = Geometry::from_params(params);
        let cells = geometry.cells();
        let powder = cell_capacity(mat, Phase::Powder, geometry.volume());
        let slabs = (1..=layers)
            .map(|layer| Slab {
                layer,
                merged: false,
                phases: vec![Phase::Powder; cells],
                capacities: vec![powder; cells],
                lateral: None,
            })
            .collect();
        Ok(Self::from_slabs(geometry, mat.clone(), layers, slabs))
    }

    fn from_slabs(geometry: Geometry<T>, material: MaterialParams, layer_count: usize, slabs: Vec<Slab<T>>) -> Self {
        let cells = geometry.cells();
        let mut nodes = Vec::with_capacity(slabs.len() * cells);
        for slab in &slabs {
            for c in 0..cells {
                nodes.push(Node {
                    cell: (c % geometry.nx, c / geometry.nx),
                    layer: slab.layer,
                    phase: slab.phases[c],
                    merged: slab.merged,
                    capacity: slab.capacities[c],
                });
            }
        }
        let mut edges = Vec::with_capacity(slabs.len() * (cells + geometry.lateral_count()));
        let vertical_area = geometry.footprint();
        for (s, slab) in slabs.iter().enumerate() {
            let base = s * cells;
            if s > 0 {
                for c in 0..cells {
                    let (a, b) = (base - cells + c, base + c);
                    edges.push(Edge {
                        a,
                        b,
                        kind: EdgeKind::Vertical,
                        conductance: edge_conductance(
                            &material,
                            nodes[a].phase,
                            nodes[b].phase,
                            vertical_area,
                            geometry.dz,
                        ),
                    });
                }
            }
            for (e, (la, lb, area, dist)) in geometry.lateral_pairs().enumerate() {
                let (a, b) = (base + la, base + lb);
                let conductance = match &slab.lateral {
                    Some(frozen) => frozen[e],
                    None => edge_conductance(&material, nodes[a].phase, nodes[b].phase, area, dist),
                };
                edges.push(Edge { a, b, kind: EdgeKind::Lateral, conductance });
            }
        }
        Self { geometry, material, layer_count, nodes, edges }
    }

    fn to_slabs(&self) -> Vec<Slab<T>> {
        let cells = self.cells_per_layer();
        let nl = self.geometry.lateral_count();
        (0..self.slab_count())
            .map(|s| {
                let nodes = &self.nodes[s * cells..(s + 1) * cells];
                let merged = nodes[0].merged;
                let lateral = merged.then(|| {
                    let start = self.lateral_start(s);
                    self.edges[start..start + nl].iter().map(|e| e.conductance).collect()
                });
                Slab {
                    layer: nodes[0].layer,
                    merged,
                    phases: nodes.iter().map(|n| n.phase).collect(),
                    capacities: nodes.iter().map(|n| n.capacity).collect(),
                    lateral,
                }
            })
            .collect()
    }

    fn lateral_start(&self, slab: usize) -> usize {
        slab * (self.geometry.lateral_count() + self.cells_per_layer())
    }

    pub fn geometry(&self) -> &Geometry<T> {
        &self.geometry
    }

    pub fn material(&self) -> &MaterialParams {
        &self.material
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge<T>] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Current layer count `k` of the build (not the number of slabs).
    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn slab_count(&self) -> usize {
        self.nodes.len() / self.cells_per_layer()
    }

    pub fn cells_per_layer(&self) -> usize {
        self.geometry.cells()
    }

    pub fn has_merged(&self) -> bool {
        self.nodes.first().is_some_and(|n| n.merged)
    }

    pub fn index(&self, slab: usize, i: usize, j: usize) -> usize {
        slab * self.cells_per_layer() + j * self.geometry.nx + i
    }

    /// Top-layer indicator.
    pub fn sigma(&self, node: usize) -> bool {
        let n = &self.nodes[node];
        !n.merged && n.layer == self.layer_count
    }

    /// Bottom-layer indicator: layer 1, or the merged layer when present.
    pub fn delta(&self, node: usize) -> bool {
        let n = &self.nodes[node];
        n.merged || n.layer == 1
    }

    /// Node index range of the top layer.
    pub fn top_layer(&self) -> std::ops::Range<usize> {
        let cells = self.cells_per_layer();
        self.nodes.len() - cells..self.nodes.len()
    }

    pub fn center(&self, node: usize) -> [T; 2] {
        let (i, j) = self.nodes[node].cell;
        self.geometry.center(i, j)
    }

    pub fn capacities(&self) -> impl Iterator<Item = T> + '_ {
        self.nodes.iter().map(|n| n.capacity)
    }

    pub fn solid_count(&self) -> usize {
        self.nodes.iter().filter(|n| !n.merged && n.phase == Phase::Solid).count()
    }

    /// Appends a powder layer on top; the new layer becomes the top layer.
    pub fn add_layer(&mut self) {
        let cells = self.cells_per_layer();
        let powder = cell_capacity(&self.material, Phase::Powder, self.geometry.volume());
        let mut slabs = self.to_slabs();
        self.layer_count += 1;
        slabs.push(Slab {
            layer: self.layer_count,
            merged: false,
            phases: vec![Phase::Powder; cells],
            capacities: vec![powder; cells],
            lateral: None,
        });
        *self = Self::from_slabs(self.geometry.clone(), self.material.clone(), self.layer_count, slabs);
    }

    /// Fuses powder cells selected by `trigger`. Returns the indices of the
    /// cells that changed; capacities and incident conductances are updated.
    pub fn update_materials(&mut self, trigger: Solidify<'_, T>) -> Vec<usize> {
        let changed: Vec<usize> = match trigger {
            Solidify::Geometric { path, until, radius } => self
                .top_layer()
                .filter(|&n| self.nodes[n].phase == Phase::Powder)
                .filter(|&n| path.distance_to_traversed(self.center(n), until) <= radius)
                .collect(),
            Solidify::Thermal { temperatures } => {
                let t_melt = T::lit(self.material.t_melt);
                (0..self.nodes.len())
                    .filter(|&n| !self.nodes[n].merged && self.nodes[n].phase == Phase::Powder)
                    .filter(|&n| temperatures.get(n).is_some_and(|&t| t >= t_melt))
                    .collect()
            }
        };
        if changed.is_empty() {
            return changed;
        }
        let solid = cell_capacity(&self.material, Phase::Solid, self.geometry.volume());
        for &n in &changed {
            self.nodes[n].phase = Phase::Solid;
            self.nodes[n].capacity = solid;
        }
        self.refresh_conductances();
        changed
    }

    /// Recomputes conductances from node phases, leaving frozen merged
    /// lateral conductances untouched.
    fn refresh_conductances(&mut self) {
        let g = &self.geometry;
        for e in &mut self.edges {
            let (a, b) = (&self.nodes[e.a], &self.nodes[e.b]);
            if a.merged && b.merged {
                continue;
            }
            let (area, dist) = match e.kind {
                EdgeKind::Vertical => (g.footprint(), g.dz),
                EdgeKind::Lateral if a.cell.1 == b.cell.1 => (g.dy * g.dz, g.dx),
                EdgeKind::Lateral => (g.dx * g.dz, g.dy),
            };
            e.conductance = edge_conductance(&self.material, a.phase, b.phase, area, dist);
        }
    }

    /// Reduced graph keeping the top `gamma` layers and lumping every layer
    /// below them into one merged layer. Identity when `layer_count <= gamma`.
    pub fn reduce(&self, gamma: usize) -> Result<Self> {
        if gamma == 0 {
            return Err(Error::InvalidParameter("region of interest must hold at least one layer".into()));
        }
        let mut reduced = self.clone();
        while reduced.slab_count() - usize::from(reduced.has_merged()) > gamma {
            reduced.merge_bottom();
        }
        Ok(reduced)
    }

    /// Lumps the lowest explicit layer into the merged layer (or turns it
    /// into the merged layer when none exists yet). Column capacities and
    /// lateral conductances add; the merged node takes the phase of the cell
    /// it absorbed, which sets the interface conductance to the layer above.
    pub fn merge_bottom(&mut self) {
        let mut slabs = self.to_slabs();
        if slabs.len() < 2 && slabs[0].merged {
            return;
        }
        if !slabs[0].merged {
            let nl = self.geometry.lateral_count();
            let start = self.lateral_start(0);
            let slab = &mut slabs[0];
            slab.lateral = Some(self.edges[start..start + nl].iter().map(|e| e.conductance).collect());
            slab.merged = true;
            slab.layer = 0;
        } else {
            let absorbed = slabs.remove(1);
            let nl = self.geometry.lateral_count();
            let start = self.lateral_start(1);
            let merged = &mut slabs[0];
            for (c, cap) in merged.capacities.iter_mut().enumerate() {
                *cap += absorbed.capacities[c];
            }
            let lateral = merged.lateral.as_mut().expect("merged slab carries lateral conductances");
            for (e, k) in lateral.iter_mut().enumerate() {
                *k += self.edges[start + e].conductance;
            }
            debug_assert_eq!(lateral.len(), nl);
            merged.phases = absorbed.phases;
        }
        *self = Self::from_slabs(self.geometry.clone(), self.material.clone(), self.layer_count, slabs);
    }

    /// Neighbour lists built from the edge list.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        adj
    }

    pub fn to_json(&self) -> Result<String>
    where
        T: Serialize,
    {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
