//! Experiment configs shipped with the binary.

use bridgelab_core::potential::DescriptorKind;
use bridgelab_core::{PotentialDescriptor, SolverOptions};

use crate::config::{Endpoints, ExperimentConfig, Mode, Outputs};

pub const BUILTIN_NAMES: [&str; 8] = [
    "quadratic-3.1.1",
    "neglog-A.1",
    "flow-neglog",
    "gaussian-gamma",
    "verify-neglog",
    "verify-quadratic",
    "sweep-neglog",
    "sweep-quadratic",
];

fn config(name: &str, mode: Mode, kind: Option<DescriptorKind>, x: f64, y: f64, horizons: &[f64]) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        mode,
        potential: kind.map(|kind| PotentialDescriptor { kind, dim: 1, matrix: None }),
        endpoints: Endpoints { x: vec![x], y: vec![y] },
        horizons: horizons.to_vec(),
        theta_values: (1..10).map(|i| i as f64 / 10.0).collect(),
        solver: SolverOptions::default(),
        outputs: Outputs { csv_dir: format!("bridgelab-out/{name}").into(), json_path: None },
    }
}

pub fn builtin(name: &str) -> Option<ExperimentConfig> {
    use DescriptorKind::{NegLog, Quadratic};
    let decades = [10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0, 10000.0];
    let c = match name {
        "quadratic-3.1.1" => config(name, Mode::Bridge, Some(Quadratic), 2.0, 1.0, &[1.0, 2.0, 5.0, 10.0]),
        "neglog-A.1" => config(name, Mode::Bridge, Some(NegLog), 1.0, 1.0, &[2.0, 5.0, 10.0, 50.0]),
        "flow-neglog" => config(name, Mode::Flow, Some(NegLog), 1.0, 1.0, &[10.0]),
        "gaussian-gamma" => config(name, Mode::Gaussian, None, 0.0, 3.0, &decades),
        "verify-neglog" => config(name, Mode::Verify, Some(NegLog), 1.0, 2.0, &[2.0, 5.0, 10.0, 20.0]),
        "verify-quadratic" => config(name, Mode::Verify, Some(Quadratic), 2.0, 1.0, &[2.0, 5.0, 10.0, 20.0]),
        "sweep-neglog" => config(name, Mode::Sweep, Some(NegLog), 1.0, 1.0, &decades),
        "sweep-quadratic" => config(name, Mode::Sweep, Some(Quadratic), 1.0, 1.0, &[2.0, 4.0, 6.0, 8.0, 10.0]),
        _ => return None,
    };
    Some(c)
}
