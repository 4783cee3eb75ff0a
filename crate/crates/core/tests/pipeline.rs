use std::sync::Arc;

use qexp_core::bsde::{solve_lattice, solve_mc, LatticeSolverConfig, McSolverConfig, Storage, Terminal};
use qexp_core::generators::{Generator, GeneratorKind, StructureParams};
use qexp_core::jump_model::{simulate_paths, JumpModel, Lattice, MarkSpace, PathBundle, TimeGrid};

fn jump_model() -> Arc<JumpModel> {
    Arc::new(JumpModel::with_constant_intensity(MarkSpace::new(vec![1.0], vec![1.0]).unwrap(), 0.8).unwrap())
}

fn upper(model: &Arc<JumpModel>) -> Generator {
    let params = StructureParams::constant(0.1, 0.2, 1.0).unwrap();
    Generator::new(GeneratorKind::UpperBound, params, model.clone()).unwrap()
}

#[test]
fn lattice_and_monte_carlo_roots_agree() {
    let model = jump_model();
    let grid = TimeGrid::new(1.0, 40).unwrap();
    let gen = upper(&model);
    let eta = Terminal::Affine { constant: 0.2, brownian: vec![0.5], counts: vec![0.3] };

    let lat = Lattice::build(&model, &grid, 3, 1).unwrap();
    let cfg = LatticeSolverConfig { storage: Storage::RootOnly, ..Default::default() };
    let on_lattice = solve_lattice(&gen, &eta, &lat, &cfg).unwrap();

    let paths = simulate_paths(&model, &grid, 40_000, 3).unwrap();
    let by_mc = solve_mc(&gen, &eta, &paths, &McSolverConfig::default()).unwrap();
    let se = by_mc.y0_standard_error.unwrap();
    let diff = (on_lattice.y0 - by_mc.y0).abs();
    assert!(diff <= 4.0 * se + 0.02, "lattice {} vs MC {} ± {se}", on_lattice.y0, by_mc.y0);
}

#[test]
fn path_bundle_survives_a_file_round_trip() {
    let model = Arc::new(
        JumpModel::with_constant_intensity(MarkSpace::new(vec![0.5, 1.5], vec![0.4, 0.6]).unwrap(), 1.3).unwrap(),
    );
    let paths = simulate_paths(&model, &TimeGrid::new(0.5, 7).unwrap(), 33, 17).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("paths.bin");
    paths.write_to(&file).unwrap();
    let back = PathBundle::read_from(&file).unwrap();
    assert_eq!(back, paths);
    assert_eq!(back.seed(), 17);
}

#[test]
fn truncated_file_is_rejected() {
    let model = jump_model();
    let paths = simulate_paths(&model, &TimeGrid::new(1.0, 4).unwrap(), 5, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("paths.bin");
    paths.write_to(&file).unwrap();
    let bytes = std::fs::read(&file).unwrap();
    std::fs::write(&file, &bytes[..bytes.len() - 3]).unwrap();
    assert!(PathBundle::read_from(&file).is_err());
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let model = jump_model();
    let grid = TimeGrid::new(1.0, 12).unwrap();
    let gen = upper(&model);
    let eta = Terminal::Affine { constant: 0.0, brownian: vec![0.7], counts: vec![-0.4] };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let paths = simulate_paths(&model, &grid, 5_000, 99).unwrap();
            let sol = solve_mc(&gen, &eta, &paths, &McSolverConfig::default()).unwrap();
            (paths, sol)
        })
    };
    let (p1, s1) = run(1);
    let (p4, s4) = run(4);
    assert_eq!(p1, p4);
    assert_eq!(s1.y0.to_bits(), s4.y0.to_bits());
    assert_eq!(s1, s4);
}
