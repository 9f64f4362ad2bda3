//! Synthetic networks: a rectangular grid and a random looped network.
//!
//! Both generators are deterministic in their seed. Base demands and
//! elevations are jittered around their nominal values so that no two
//! junctions are hydraulically interchangeable.

use rand::Rng;

use crate::model::{HydraulicModel, ModelBuilder, ModelError, PipeStatus, TimeConfig};
use crate::seed;

/// A smooth 24-hour demand curve with a morning and an evening peak, mean 1,
/// sampled every `step_seconds`.
pub fn diurnal_pattern(step_seconds: u64) -> Vec<f64> {
    let n = (86_400 / step_seconds.clamp(1, 86_400)) as usize;
    let raw: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 * 24.0 / n as f64;
            let morning = (-(t - 7.5).powi(2) / 6.0).exp();
            let evening = 0.8 * (-(t - 19.0).powi(2) / 8.0).exp();
            0.45 + morning + evening
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.iter().map(|v| v / mean).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Pipe length between neighbouring junctions, m.
    pub spacing: f64,
    /// mm
    pub diameter: f64,
    pub roughness: f64,
    /// Mean base demand per junction, m³/h.
    pub base_demand: f64,
    /// Relative spread of base demands around the mean, in [0, 1).
    pub demand_jitter: f64,
    /// Elevations are drawn from [0, elevation_range] m.
    pub elevation_range: f64,
    pub reservoir_head: f64,
    pub steps: usize,
    pub step_seconds: u64,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 10,
            cols: 10,
            spacing: 100.0,
            diameter: 65.0,
            roughness: 110.0,
            base_demand: 0.3,
            demand_jitter: 0.5,
            elevation_range: 5.0,
            reservoir_head: 60.0,
            steps: 24,
            step_seconds: 3600,
            seed: 1,
        }
    }
}

/// Junction labels run n1, n2, … row by row.
pub fn grid_label(cols: usize, r: usize, c: usize) -> String {
    format!("n{}", r * cols + c + 1)
}

/// R×C junctions with 4-neighbour pipes; a reservoir feeds junction (0, 0)
/// through one short wide pipe, so the grid has R(C-1) + C(R-1) + 1 pipes.
pub fn grid(spec: &GridSpec) -> Result<HydraulicModel, ModelError> {
    let mut rng = seed::stream(spec.seed, "generate/grid", &[]);
    let mut b = ModelBuilder::new();
    b.title_line(format!("{}x{} grid, seed {}", spec.rows, spec.cols, spec.seed));
    b.pattern("diurnal", &diurnal_pattern(spec.step_seconds));
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let label = grid_label(spec.cols, r, c);
            let demand = spec.base_demand * (1.0 + spec.demand_jitter * rng.random_range(-1.0..1.0));
            let elevation = spec.elevation_range * rng.random::<f64>();
            b.junction(&label, round3(elevation), round6(demand), Some("diurnal"));
            b.coordinates(&label, c as f64 * spec.spacing, r as f64 * spec.spacing);
        }
    }
    b.reservoir("R1", spec.reservoir_head, None);
    b.coordinates("R1", -spec.spacing, 0.0);
    b.pipe("feed", "R1", grid_label(spec.cols, 0, 0), 10.0, 2.0 * spec.diameter, spec.roughness, PipeStatus::Open);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            if c + 1 < spec.cols {
                b.pipe(
                    format!("h{}_{}", r, c),
                    grid_label(spec.cols, r, c),
                    grid_label(spec.cols, r, c + 1),
                    spec.spacing,
                    spec.diameter,
                    spec.roughness,
                    PipeStatus::Open,
                );
            }
            if r + 1 < spec.rows {
                b.pipe(
                    format!("v{}_{}", r, c),
                    grid_label(spec.cols, r, c),
                    grid_label(spec.cols, r + 1, c),
                    spec.spacing,
                    spec.diameter,
                    spec.roughness,
                    PipeStatus::Open,
                );
            }
        }
    }
    b.times(TimeConfig {
        steps: spec.steps,
        step_seconds: spec.step_seconds,
    });
    b.build()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopedSpec {
    pub junctions: usize,
    /// Extra pipes on top of the spanning tree.
    pub chords: usize,
    /// Side of the square the junctions are scattered in, m.
    pub extent: f64,
    pub base_demand: f64,
    pub reservoir_head: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for LoopedSpec {
    fn default() -> Self {
        LoopedSpec {
            junctions: 30,
            chords: 10,
            extent: 1000.0,
            base_demand: 1.0,
            reservoir_head: 60.0,
            steps: 24,
            seed: 1,
        }
    }
}

const DIAMETERS: [f64; 5] = [80.0, 100.0, 125.0, 150.0, 200.0];

/// Random spanning tree (each junction joins its nearest earlier one) plus
/// random chords between distinct, not yet adjacent junctions.
pub fn random_looped(spec: &LoopedSpec) -> Result<HydraulicModel, ModelError> {
    let n = spec.junctions;
    let mut rng = seed::stream(spec.seed, "generate/looped", &[]);
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            (
                round3(rng.random::<f64>() * spec.extent),
                round3(rng.random::<f64>() * spec.extent),
            )
        })
        .collect();
    let dist = |a: usize, b: usize| {
        let (dx, dy) = (pts[a].0 - pts[b].0, pts[a].1 - pts[b].1);
        round3((dx * dx + dy * dy).sqrt().max(10.0))
    };
    let label = |i: usize| format!("j{}", i + 1);

    let mut b = ModelBuilder::new();
    b.title_line(format!("random looped network, {} junctions, seed {}", n, spec.seed));
    b.pattern("diurnal", &diurnal_pattern(3600));
    for (i, &(x, y)) in pts.iter().enumerate() {
        let demand = spec.base_demand * rng.random_range(0.2..1.8);
        b.junction(label(i), round3(rng.random_range(0.0..10.0)), round6(demand), Some("diurnal"));
        b.coordinates(label(i), x, y);
    }
    b.reservoir("R1", spec.reservoir_head, None);
    b.coordinates("R1", -50.0, -50.0);
    if n > 0 {
        b.pipe("p0", "R1", label(0), 10.0, 300.0, 120.0, PipeStatus::Open);
    }

    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 1..n {
        let j = (0..i)
            .min_by(|&a, &c| dist(i, a).total_cmp(&dist(i, c)).then(a.cmp(&c)))
            .unwrap_or(0);
        edges.push((j, i));
    }
    let mut attempts = 0;
    let mut added = 0;
    while added < spec.chords && n > 2 && attempts < 100 * (spec.chords + 1) {
        attempts += 1;
        let a = rng.random_range(0..n);
        let c = rng.random_range(0..n);
        if a == c || edges.iter().any(|&(x, y)| (x, y) == (a, c) || (x, y) == (c, a)) {
            continue;
        }
        edges.push((a, c));
        added += 1;
    }
    for (k, &(a, c)) in edges.iter().enumerate() {
        let d = DIAMETERS[rng.random_range(0..DIAMETERS.len())];
        let roughness = rng.random_range(90.0..140.0_f64).round();
        b.pipe(format!("p{}", k + 1), label(a), label(c), dist(a, c), d, roughness, PipeStatus::Open);
    }
    b.times(TimeConfig {
        steps: spec.steps,
        step_seconds: 3600,
    });
    b.build()
}

fn round3(v: f64) -> f64 {
    (v * 1e3).round() / 1e3
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}
