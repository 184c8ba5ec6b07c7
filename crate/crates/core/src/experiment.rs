//! Monte Carlo ensembles and `(N_s, rho)` sweeps.
//!
//! Runs are independent work items executed on a bounded rayon pool. Results
//! are reduced in run-index order, so every aggregate is bit-identical for any
//! worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::diffusion::{check_consistency, simulate_lanes, SimulationConfig, SystemModel};
use crate::error::{Error, Result};
use crate::network::{
    select_sparsity_set_with, CombinationMatrix, SetSearch, SparsityProfile, Topology,
};
use crate::rng;
use crate::theory::{RunSnapshots, SteadyStatePredictor};

/// Flag threshold on the trailing-window slope.
pub const SLOPE_FLAG_DB_PER_ITER: f64 = 1e-4;

/// Runs dispatched to the pool at a time; bounds memory held by unreduced runs.
const RUN_CHUNK: usize = 32;

/// Network MSD after each iteration of one realization, starting at `n = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MsdTrace {
    pub values: Vec<f64>,
    pub run_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyState {
    pub msd: f64,
    /// Least-squares slope of the window in dB per iteration.
    pub slope_db_per_iter: f64,
    pub converged: bool,
}

pub fn extract_steady_state(values: &[f64], window: usize) -> Result<SteadyState> {
    if window < 2 {
        return Err(Error::InvalidArgument(
            "steady window must be at least 2".into(),
        ));
    }
    if window > values.len() {
        return Err(Error::WindowTooLong {
            window,
            len: values.len(),
        });
    }
    let tail = &values[values.len() - window..];
    let msd = tail.iter().sum::<f64>() / window as f64;
    let xm = (window - 1) as f64 / 2.0;
    let db: Vec<f64> = tail.iter().map(|&v| to_db(v)).collect();
    let ym = db.iter().sum::<f64>() / window as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in db.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (y - ym);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    Ok(SteadyState {
        msd,
        slope_db_per_iter: slope,
        converged: slope.abs() <= SLOPE_FLAG_DB_PER_ITER,
    })
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    #[serde(skip)]
    pub mean_trace: Vec<f64>,
    pub steady_msd: f64,
    pub steady_msd_db: f64,
    pub run_count: usize,
    /// 95% normal-approximation half-width on `steady_msd`.
    pub confidence_halfwidth: f64,
    pub slope_db_per_iter: f64,
    pub converged: bool,
}

/// Ordered accumulator for one lane.
struct LaneAccumulator {
    sum: Vec<f64>,
    run_means: Vec<f64>,
}

impl LaneAccumulator {
    fn new(len: usize) -> Self {
        LaneAccumulator {
            sum: vec![0.0; len],
            run_means: Vec::new(),
        }
    }

    fn push(&mut self, trace: &[f64], window: usize) {
        for (s, v) in self.sum.iter_mut().zip(trace) {
            *s += v;
        }
        let tail = &trace[trace.len() - window..];
        self.run_means
            .push(tail.iter().sum::<f64>() / window as f64);
    }

    fn finish(self, window: usize) -> Result<EnsembleResult> {
        let runs = self.run_means.len();
        let scale = 1.0 / runs as f64;
        let mean_trace: Vec<f64> = self.sum.into_iter().map(|s| s * scale).collect();
        let steady = extract_steady_state(&mean_trace, window)?;
        let confidence_halfwidth = if runs > 1 {
            let m = self.run_means.iter().sum::<f64>() * scale;
            let var = self
                .run_means
                .iter()
                .map(|x| (x - m) * (x - m))
                .sum::<f64>()
                / (runs - 1) as f64;
            1.96 * (var / runs as f64).sqrt()
        } else {
            0.0
        };
        Ok(EnsembleResult {
            mean_trace,
            steady_msd: steady.msd,
            steady_msd_db: to_db(steady.msd),
            run_count: runs,
            confidence_halfwidth,
            slope_db_per_iter: steady.slope_db_per_iter,
            converged: steady.converged,
        })
    }
}

/// Evaluates `job` for runs `0..runs` on `workers` threads and hands the
/// results to `fold` in run order.
fn for_each_run<T, F, G>(runs: usize, workers: usize, job: F, mut fold: G) -> Result<()>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
    G: FnMut(T),
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()?;
    let mut start = 0;
    while start < runs {
        let end = (start + RUN_CHUNK).min(runs);
        let batch: Vec<Result<T>> =
            pool.install(|| (start..end).into_par_iter().map(&job).collect());
        for item in batch {
            fold(item?);
        }
        start = end;
    }
    Ok(())
}

fn check_window(config: &SimulationConfig) -> Result<()> {
    if config.steady_window < 2 || config.steady_window > config.iterations + 1 {
        return Err(Error::WindowTooLong {
            window: config.steady_window,
            len: config.iterations + 1,
        });
    }
    Ok(())
}

/// `runs` independent realizations of one profile; run `r` is seeded with
/// `rng::run_seed(config.seed, r)`.
pub fn run_ensemble(
    model: &SystemModel,
    topology: &Topology,
    cmat: &CombinationMatrix,
    profile: &SparsityProfile,
    config: &SimulationConfig,
    runs: usize,
    workers: usize,
) -> Result<EnsembleResult> {
    if runs == 0 {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    check_consistency(model, topology, cmat, profile)?;
    config.validate(model)?;
    check_window(config)?;
    let mut acc = LaneAccumulator::new(config.iterations + 1);
    let rho = [profile.rho_vector()];
    for_each_run(
        runs,
        workers,
        |r| {
            let seed = rng::run_seed(config.seed, r as u64);
            simulate_lanes(model, cmat, &rho, config, seed, &[]).map(|o| o.traces)
        },
        |traces| acc.push(&traces[0], config.steady_window),
    )?;
    acc.finish(config.steady_window)
}

/// Weight snapshots over the trailing steady window of `runs` realizations,
/// for moment estimation. `per_run` snapshots are spread evenly over the
/// window, ending at the final iteration.
#[allow(clippy::too_many_arguments)]
pub fn pilot_snapshots(
    model: &SystemModel,
    topology: &Topology,
    cmat: &CombinationMatrix,
    profile: &SparsityProfile,
    config: &SimulationConfig,
    runs: usize,
    per_run: usize,
    workers: usize,
) -> Result<Vec<RunSnapshots>> {
    check_consistency(model, topology, cmat, profile)?;
    config.validate(model)?;
    check_window(config)?;
    let per_run = per_run.clamp(1, config.steady_window);
    let stride = config.steady_window / per_run;
    let at: Vec<usize> = (0..per_run)
        .map(|i| config.iterations - i * stride)
        .rev()
        .collect();
    let rho = [profile.rho_vector()];
    let mut out = Vec::with_capacity(runs);
    for_each_run(
        runs,
        workers,
        |r| {
            let seed = rng::run_seed(config.seed, r as u64);
            simulate_lanes(model, cmat, &rho, config, seed, &at)
                .map(|o| o.snapshots.into_iter().next().expect("one lane"))
        },
        |snaps| out.push(snaps),
    )?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub ns: usize,
    pub rho: f64,
    pub aware_set: Vec<usize>,
    pub ib_residual: f64,
    pub result: EnsembleResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoMinimizer {
    pub rho: f64,
    pub ns_star: usize,
    pub min_steady_msd_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub ns_list: Vec<usize>,
    pub rho_list: Vec<f64>,
    /// Cells in `ns`-major order: `cells[i * rho_list.len() + j]`.
    pub cells: Vec<SweepCell>,
    pub minimizers: Vec<RhoMinimizer>,
    pub runs: usize,
}

impl SweepResult {
    pub fn cell(&self, ns: usize, rho: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.ns == ns && c.rho == rho)
    }

    /// Spread (max - min) of the per-rho minima in dB.
    pub fn minima_span_db(&self) -> f64 {
        let (lo, hi) = self
            .minimizers
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
                (lo.min(m.min_steady_msd_db), hi.max(m.min_steady_msd_db))
            });
        hi - lo
    }
}

/// Sweep over every `(N_s, rho)` pair with common random numbers: the
/// placement for each `N_s` is chosen once and every cell consumes the same
/// per-run measurement streams.
#[allow(clippy::too_many_arguments)]
pub fn sweep_ns_rho(
    model: &SystemModel,
    topology: &Topology,
    cmat: &CombinationMatrix,
    ns_list: &[usize],
    rho_list: &[f64],
    config: &SimulationConfig,
    runs: usize,
    workers: usize,
    search: SetSearch,
) -> Result<SweepResult> {
    let n = topology.node_count();
    if runs == 0 {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    if let Some(&bad) = ns_list.iter().find(|&&ns| ns > n) {
        return Err(Error::InvalidArgument(format!(
            "N_s = {bad} exceeds N = {n}"
        )));
    }
    if rho_list.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::InvalidArgument(
            "rho values must be non-negative".into(),
        ));
    }
    config.validate(model)?;
    check_window(config)?;

    let placements: Vec<SparsityProfile> = ns_list
        .iter()
        .map(|&ns| {
            select_sparsity_set_with(cmat, ns, 0.0, rng::mix64(config.seed ^ ns as u64), search)
        })
        .collect::<Result<_>>()?;
    for p in &placements {
        check_consistency(model, topology, cmat, p)?;
    }

    // cells sharing an identical rho vector share a lane
    let mut lanes: Vec<Vec<f64>> = Vec::new();
    let mut cell_lane = Vec::new();
    let mut profiles = Vec::new();
    for p in &placements {
        for &rho in rho_list {
            let profile = p.with_rho(rho)?;
            let lane = match lanes
                .iter()
                .position(|l| l.as_slice() == profile.rho_vector())
            {
                Some(i) => i,
                None => {
                    lanes.push(profile.rho_vector().to_vec());
                    lanes.len() - 1
                }
            };
            cell_lane.push(lane);
            profiles.push(profile);
        }
    }
    let lane_refs: Vec<&[f64]> = lanes.iter().map(Vec::as_slice).collect();
    let mut accs: Vec<LaneAccumulator> = (0..lanes.len())
        .map(|_| LaneAccumulator::new(config.iterations + 1))
        .collect();
    for_each_run(
        runs,
        workers,
        |r| {
            let seed = rng::run_seed(config.seed, r as u64);
            simulate_lanes(model, cmat, &lane_refs, config, seed, &[]).map(|o| o.traces)
        },
        |traces| {
            for (acc, t) in accs.iter_mut().zip(&traces) {
                acc.push(t, config.steady_window);
            }
        },
    )?;
    let lane_results: Vec<EnsembleResult> = accs
        .into_iter()
        .map(|a| a.finish(config.steady_window))
        .collect::<Result<_>>()?;

    let cells: Vec<SweepCell> = profiles
        .iter()
        .zip(&cell_lane)
        .map(|(p, &lane)| SweepCell {
            ns: p.aware_count(),
            rho: p.rho(),
            aware_set: p.aware_set().to_vec(),
            ib_residual: p.ib_residual(),
            result: lane_results[lane].clone(),
        })
        .collect();
    let minimizers = minimizers(&cells, ns_list, rho_list);
    Ok(SweepResult {
        ns_list: ns_list.to_vec(),
        rho_list: rho_list.to_vec(),
        cells,
        minimizers,
        runs,
    })
}

fn minimizers(cells: &[SweepCell], ns_list: &[usize], rho_list: &[f64]) -> Vec<RhoMinimizer> {
    let width = rho_list.len();
    rho_list
        .iter()
        .enumerate()
        .filter(|_| !ns_list.is_empty())
        .map(|(j, &rho)| {
            let mut best = &cells[j];
            for i in 1..ns_list.len() {
                let c = &cells[i * width + j];
                if c.result.steady_msd_db < best.result.steady_msd_db {
                    best = c;
                }
            }
            RhoMinimizer {
                rho,
                ns_star: best.ns,
                min_steady_msd_db: best.result.steady_msd_db,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub ns: usize,
    pub rho: f64,
    pub predicted_db: f64,
    pub simulated_db: f64,
    pub abs_error_db: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub tolerance_db: f64,
    pub rows: Vec<ComparisonRow>,
    pub pass_fraction: f64,
}

pub const DEFAULT_COMPARISON_TOL_DB: f64 = 1.5;

/// Predicted against simulated steady-state MSD for every sweep cell.
pub fn compare_to_theory(
    sweep: &SweepResult,
    predictor: &SteadyStatePredictor,
    tolerance_db: f64,
) -> Comparison {
    let rows: Vec<ComparisonRow> = sweep
        .cells
        .iter()
        .map(|c| {
            let predicted_db = to_db(predictor.predict(c.ns, c.rho));
            let simulated_db = c.result.steady_msd_db;
            let abs_error_db = (predicted_db - simulated_db).abs();
            ComparisonRow {
                ns: c.ns,
                rho: c.rho,
                predicted_db,
                simulated_db,
                abs_error_db,
                pass: abs_error_db <= tolerance_db,
            }
        })
        .collect();
    let passed = rows.iter().filter(|r| r.pass).count();
    let pass_fraction = if rows.is_empty() {
        0.0
    } else {
        passed as f64 / rows.len() as f64
    };
    Comparison {
        tolerance_db,
        rows,
        pass_fraction,
    }
}
