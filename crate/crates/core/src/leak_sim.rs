//! Synthetic "measured" pressures: a ground-truth leak simulated on noisy
//! demands, with bounded noise added to the resulting pressures.
//!
//! Noise is a zero-mean Gaussian with σ = bound · sigma_fraction, clipped to
//! [-bound, bound]. Every demand entry and every step of the leak pattern is
//! scaled by its own (1 + ε), the bound read as a relative fraction;
//! pressures get ε added in metres.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::{DemandMatrix, HeadSeries, HydraulicModel, MatrixError, NodeId, PressureMatrix};
use crate::seed;
use crate::solver::{HydraulicSolver, SolverError, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Upper limit l of every noise sample.
    pub bound: f64,
    pub sigma_fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(bound: f64, seed: u64) -> Self {
        NoiseSpec {
            bound,
            sigma_fraction: 0.5,
            seed,
        }
    }

    pub fn noiseless() -> Self {
        Self::new(0.0, 0)
    }

    pub fn sigma(&self) -> f64 {
        self.bound * self.sigma_fraction
    }

    pub fn validate(&self) -> Result<(), LeakSimError> {
        if !(self.bound.is_finite() && self.bound >= 0.0)
            || !(self.sigma_fraction > 0.0 && self.sigma_fraction <= 1.0)
        {
            return Err(LeakSimError::InvalidNoise(*self));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.bound == 0.0 {
            return 0.0;
        }
        let z: f64 = rng.sample(StandardNormal);
        (z * self.sigma()).clamp(-self.bound, self.bound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub leak_node: NodeId,
    /// m³/h
    pub leak_size: f64,
    pub noise: NoiseSpec,
}

#[derive(Debug, Error, PartialEq)]
pub enum LeakSimError {
    #[error("invalid noise specification {0:?}")]
    InvalidNoise(NoiseSpec),
    #[error("leak size must be positive, got {0}")]
    InvalidLeakSize(f64),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Output of [`noised_measurement`] with each noise stage exposed.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedMeasurement {
    /// Final pressures over all nodes.
    pub pressures: PressureMatrix,
    /// Pressures simulated from the perturbed demands, before output noise.
    pub clean: PressureMatrix,
    /// Additive output noise, row-major like `pressures.values()`.
    pub output_noise: Vec<f64>,
    /// The perturbed leak flow actually simulated at each step, m³/h.
    pub leak_pattern: Vec<f64>,
}

/// Simulates `truth` on `demands` with noisy inputs and outputs.
pub fn noised_measurement_with(
    solver: &HydraulicSolver<'_>,
    demands: &DemandMatrix,
    heads: &HeadSeries,
    truth: &GroundTruth,
) -> Result<NoisedMeasurement, LeakSimError> {
    let noise = truth.noise;
    noise.validate()?;
    if !(truth.leak_size.is_finite() && truth.leak_size > 0.0) {
        return Err(LeakSimError::InvalidLeakSize(truth.leak_size));
    }

    let mut demand_rng = seed::stream(noise.seed, "noise/demand", &[]);
    let perturbed = demands.map_junctions(|_, _, v| v * (1.0 + noise.sample(&mut demand_rng)));

    let mut leak_rng = seed::stream(noise.seed, "noise/leak", &[]);
    let leak_pattern: Vec<f64> = (0..demands.steps())
        .map(|_| truth.leak_size * (1.0 + noise.sample(&mut leak_rng)))
        .collect();
    let leaky = perturbed.add_leak_pattern(truth.leak_node, &leak_pattern)?;

    let clean = solver.pressures(&leaky, heads)?;

    let mut output_rng = seed::stream(noise.seed, "noise/output", &[]);
    let output_noise: Vec<f64> = (0..clean.values().len())
        .map(|_| noise.sample(&mut output_rng))
        .collect();
    let pressures = clean.map_values(|k, v| v + output_noise[k]);

    Ok(NoisedMeasurement {
        pressures,
        clean,
        output_noise,
        leak_pattern,
    })
}

/// Noisy leak measurement over all nodes; deterministic in `truth.noise.seed`.
pub fn noised_measurement(
    model: &HydraulicModel,
    demands: &DemandMatrix,
    heads: &HeadSeries,
    truth: &GroundTruth,
    settings: &SolverSettings,
) -> Result<PressureMatrix, LeakSimError> {
    let solver = HydraulicSolver::new(model, *settings)?;
    Ok(noised_measurement_with(&solver, demands, heads, truth)?.pressures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelBuilder, PipeStatus, TimeConfig};

    fn small() -> HydraulicModel {
        let mut b = ModelBuilder::new();
        b.reservoir("R", 60.0, None)
            .junction("A", 5.0, 3.0, None)
            .junction("B", 4.0, 2.0, None)
            .junction("C", 6.0, 4.0, None)
            .pipe("1", "R", "A", 200.0, 150.0, 120.0, PipeStatus::Open)
            .pipe("2", "A", "B", 150.0, 100.0, 120.0, PipeStatus::Open)
            .pipe("3", "B", "C", 150.0, 100.0, 120.0, PipeStatus::Open)
            .pipe("4", "C", "A", 180.0, 80.0, 120.0, PipeStatus::Open)
            .times(TimeConfig { steps: 4, step_seconds: 3600 });
        b.build().unwrap()
    }

    fn truth(bound: f64, seed: u64) -> GroundTruth {
        GroundTruth {
            leak_node: NodeId(2),
            leak_size: 6.38,
            noise: NoiseSpec::new(bound, seed),
        }
    }

    #[test]
    fn zero_noise_equals_plain_leak_simulation() {
        let m = small();
        let d = m.demand_matrix();
        let h = m.reservoir_heads();
        let s = SolverSettings::default();
        let p = noised_measurement(&m, &d, &h, &truth(0.0, 99), &s).unwrap();
        let expected = crate::solver::simulate(&m, &d.add_leak(NodeId(2), 6.38).unwrap(), &h, &s)
            .unwrap()
            .pressures;
        assert_eq!(p, expected);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let m = small();
        let (d, h) = (m.demand_matrix(), m.reservoir_heads());
        let s = SolverSettings::default();
        let a = noised_measurement(&m, &d, &h, &truth(0.1, 5), &s).unwrap();
        let b = noised_measurement(&m, &d, &h, &truth(0.1, 5), &s).unwrap();
        assert_eq!(a.values(), b.values());
        let c = noised_measurement(&m, &d, &h, &truth(0.1, 6), &s).unwrap();
        assert!(a.values().iter().zip(c.values()).any(|(x, y)| x != y));
    }

    #[test]
    fn output_noise_stage_is_bounded() {
        let m = small();
        let solver = HydraulicSolver::new(&m, SolverSettings::default()).unwrap();
        let r = noised_measurement_with(&solver, &m.demand_matrix(), &m.reservoir_heads(), &truth(0.1, 17))
            .unwrap();
        for (k, (&noisy, &clean)) in r.pressures.values().iter().zip(r.clean.values()).enumerate() {
            assert!(r.output_noise[k].abs() <= 0.1);
            assert!((noisy - clean).abs() <= 0.1 + 1e-12);
        }
        assert_eq!(r.leak_pattern.len(), 4);
        assert!(r.leak_pattern.iter().all(|l| (l / 6.38 - 1.0).abs() <= 0.1));
        assert!(r.leak_pattern.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn samples_are_clipped() {
        let spec = NoiseSpec {
            bound: 0.1,
            sigma_fraction: 1.0,
            seed: 0,
        };
        let mut rng = seed::stream(1, "t", &[]);
        let draws: Vec<f64> = (0..20_000).map(|_| spec.sample(&mut rng)).collect();
        assert!(draws.iter().all(|d| d.abs() <= 0.1));
        // With σ = l about a third of the draws hit the clip.
        assert!(draws.iter().any(|d| d.abs() == 0.1));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(NoiseSpec { bound: -1.0, sigma_fraction: 0.5, seed: 0 }.validate().is_err());
        assert!(NoiseSpec { bound: 0.1, sigma_fraction: 0.0, seed: 0 }.validate().is_err());
        assert!(NoiseSpec { bound: 0.1, sigma_fraction: 1.5, seed: 0 }.validate().is_err());
    }
}
