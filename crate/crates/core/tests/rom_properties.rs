use nalgebra::DVector;
use proptest::prelude::*;
use slm_core::beam::{BeamPath, OutputWeights};
use slm_core::fom::{assemble_for_layer, layer_transition, total_energy};
use slm_core::grid::{Solidify, ThermalGraph};
use slm_core::rom::{project_fom_to_rom, project_state, reduce_graph, rom_transition, RomConfig, RomState};
use slm_core::{MaterialParams, ProcessParams};

fn graph(nx: usize, layers: usize, fused: f64) -> (ProcessParams, ThermalGraph<f64>, BeamPath<f64>) {
    let p = ProcessParams::case_study().with_grid(nx, nx);
    let path = BeamPath::square_spiral(&p, 100e-6, 100e-6).unwrap();
    let mut g = ThermalGraph::build(&p, &MaterialParams::ss316l(), 1).unwrap();
    for _ in 1..layers {
        g.update_materials(Solidify::Geometric { path: &path, until: fused, radius: p.beam_radius });
        g.add_layer();
    }
    (p, g, path)
}

fn temperatures(n: usize, seed: &[f64]) -> DVector<f64> {
    DVector::from_fn(n, |i, _| seed[i % seed.len()])
}

fn column_bounds(x: &DVector<f64>, cells: usize, slabs: usize, c: usize) -> (f64, f64) {
    (0..slabs).map(|s| x[s * cells + c]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_conserves_energy(
        nx in 2usize..5,
        layers in 1usize..7,
        gamma in 1usize..5,
        fused in 0.0f64..1e-3,
        seed in prop::collection::vec(300.0f64..2500.0, 7..13),
    ) {
        let (_, g, _) = graph(nx, layers, fused);
        let cfg = RomConfig::new(gamma).unwrap();
        let x = temperatures(g.node_count(), &seed);
        let rom = project_fom_to_rom(&x, &g, cfg).unwrap();
        let before = total_energy(&g, &x);
        let after = total_energy(&rom.graph, &rom.state);
        prop_assert!((before - after).abs() <= 1e-12 * before);
        prop_assert_eq!(rom.graph.node_count(), rom.state.len());
        prop_assert_eq!(rom.graph.node_count(), reduce_graph(&g, cfg).unwrap().node_count());
    }

    #[test]
    fn roi_is_copied_and_merged_layer_is_bounded(
        nx in 2usize..5,
        layers in 2usize..7,
        gamma in 1usize..4,
        seed in prop::collection::vec(300.0f64..2500.0, 5..11),
    ) {
        let (_, g, _) = graph(nx, layers, 6e-4);
        let cfg = RomConfig::new(gamma).unwrap();
        let x = temperatures(g.node_count(), &seed);
        let z = project_state(&x, &g, cfg).unwrap();
        let cells = g.cells_per_layer();
        let kept = gamma.min(layers);
        let lumped = layers - kept;
        let tail = kept * cells;
        prop_assert_eq!(z.rows(z.len() - tail, tail), x.rows(x.len() - tail, tail));
        if lumped == 0 {
            prop_assert_eq!(&z, &x);
        } else {
            for c in 0..cells {
                let (lo, hi) = column_bounds(&x, cells, lumped, c);
                prop_assert!(z[c] >= lo - 1e-9 && z[c] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn transition_conserves_energy_without_cooling(
        nx in 2usize..4,
        layers in 1usize..6,
        gamma in 1usize..4,
        seed in prop::collection::vec(300.0f64..2500.0, 5..11),
    ) {
        let (mut p, g, path) = graph(nx, layers, 8e-4);
        p.tau_recoat = 0.0;
        let cfg = RomConfig::new(gamma).unwrap();
        let rom = project_fom_to_rom(&temperatures(g.node_count(), &seed), &g, cfg).unwrap();
        let sys = assemble_for_layer(&rom.graph, &p, &path, OutputWeights::Normalized).unwrap();
        let next = rom_transition(&rom, &sys, &p, cfg).unwrap();
        let cells = g.cells_per_layer();
        let fresh: f64 = next.graph.capacities().skip(next.graph.node_count() - cells).map(|c| c * p.t_plate).sum();
        let before = total_energy(&rom.graph, &rom.state) + fresh;
        let after = total_energy(&next.graph, &next.state);
        prop_assert!((before - after).abs() <= 1e-12 * before);
        prop_assert!(next.graph.slab_count() - usize::from(next.graph.has_merged()) <= gamma.max(1) + 1);
    }
}

#[test]
fn rom_matches_full_model_until_the_roi_fills() {
    let (p, mut g, path) = graph(4, 1, 0.0);
    let cfg = RomConfig::new(4).unwrap();
    let mut x = DVector::from_element(g.node_count(), p.t_plate);
    let mut rom = RomState::new(g.clone(), x.clone()).unwrap();
    for _ in 0..3 {
        let sys = assemble_for_layer(&g, &p, &path, OutputWeights::Normalized).unwrap();
        let hot = sys.step(&x, 30.0, 0.0, p.tau_layer);
        let (ng, nx) = layer_transition(&g, &sys, &hot, &p).unwrap();
        let rsys = assemble_for_layer(&rom.graph, &p, &path, OutputWeights::Normalized).unwrap();
        let rhot = rsys.step(&rom.state, 30.0, 0.0, p.tau_layer);
        rom = rom_transition(&RomState::new(rom.graph.clone(), rhot).unwrap(), &rsys, &p, cfg).unwrap();
        g = ng;
        x = nx;
        assert_eq!(rom.graph, g);
        assert_eq!(rom.state, x);
    }
}
