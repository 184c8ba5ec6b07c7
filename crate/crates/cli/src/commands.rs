//! The subcommands. Each one writes its artifacts under the output directory
//! and returns what it computed so callers can inspect it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use zadiff::experiment::{
    compare_to_theory, pilot_snapshots, run_ensemble, sweep_ns_rho, to_db, Comparison,
};
use zadiff::network::{
    build_combiner, generate_geometric_topology, select_sparsity_set_with, validate_assumption_i,
    AssumptionReport, NetworkDocument,
};
use zadiff::theory::{
    check_stability, estimate_homogeneous_coefficients, estimate_moments, msd_floor_structured,
    phi_curve, rho_opt_heterogeneous, HeterogeneousParams, HomogeneousCoefficients, RunSnapshots,
    SteadyStatePredictor,
};
use zadiff::{
    rng, CombinationMatrix, EnsembleResult, MomentEstimates, SimulationConfig, SparsityProfile,
    SweepResult, SystemModel, TheoryContext, TheoryReport, Topology,
};

use crate::config::ExperimentConfig;
use crate::output::{write_json, write_text, Cell, Csv, Provenance};
use crate::plot;

/// Network, model and simulation settings resolved from a config.
pub struct Setup {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub model: SystemModel,
    pub topology: Topology,
    pub cmat: CombinationMatrix,
    pub sim: SimulationConfig,
    pub workers: usize,
}

impl Setup {
    pub fn new(config: ExperimentConfig, workers: usize) -> anyhow::Result<Self> {
        config.check()?;
        let (topology, cmat) = match &config.network_file {
            Some(path) => load_network(path)?,
            None => {
                let topology =
                    generate_geometric_topology(config.nodes, config.radius, config.seed)?;
                let cmat = build_combiner(&topology, config.rule);
                (topology, cmat)
            }
        };
        if topology.node_count() != config.nodes {
            bail!(
                "network has {} nodes but the config says nodes = {}",
                topology.node_count(),
                config.nodes
            );
        }
        let model = config.model()?;
        let sim = config.simulation();
        Ok(Setup {
            provenance: Provenance::of(&config),
            config,
            model,
            topology,
            cmat,
            sim,
            workers: workers.max(1),
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir().join(name)
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    /// Placement used for `ns` aware nodes; the same seed as the sweep.
    pub fn profile(&self, ns: usize, rho: f64) -> zadiff::Result<SparsityProfile> {
        select_sparsity_set_with(
            &self.cmat,
            ns,
            rho,
            rng::mix64(self.config.seed ^ ns as u64),
            self.config.set_search(),
        )
    }

    pub fn network_document(&self) -> NetworkDocument {
        let mut doc = NetworkDocument::new(&self.topology, &self.cmat);
        doc.provenance = Some(serde_json::to_value(&self.provenance).expect("serializable"));
        doc
    }

    fn theory_context(&self) -> zadiff::Result<TheoryContext> {
        TheoryContext::new(
            self.cmat.clone(),
            self.model.taps(),
            self.config.mu,
            self.config.sigma_u_sq,
            self.config.sigma_v_sq,
        )
    }
}

fn load_network(path: &Path) -> anyhow::Result<(Topology, CombinationMatrix)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading network {}", path.display()))?;
    let doc: NetworkDocument = serde_json::from_str(&text)
        .with_context(|| format!("parsing network {}", path.display()))?;
    Ok(doc.into_network()?)
}

#[derive(Debug, Clone, Serialize)]
pub struct PlacementCheck {
    pub ns: usize,
    pub aware_set: Vec<usize>,
    pub report: AssumptionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Validation {
    pub provenance: Provenance,
    pub nodes: usize,
    pub doubly_stochastic: bool,
    pub symmetric: bool,
    pub placements: Vec<PlacementCheck>,
}

fn validation(setup: &Setup) -> anyhow::Result<Validation> {
    let placements = setup
        .config
        .ns_list
        .iter()
        .map(|&ns| {
            let profile = setup.profile(ns, 0.0)?;
            Ok(PlacementCheck {
                ns,
                aware_set: profile.aware_set().to_vec(),
                report: validate_assumption_i(&setup.cmat, &profile, setup.config.assumption_tol),
            })
        })
        .collect::<anyhow::Result<_>>()?;
    Ok(Validation {
        provenance: setup.provenance.clone(),
        nodes: setup.node_count(),
        doubly_stochastic: setup.cmat.is_doubly_stochastic(),
        symmetric: setup.cmat.is_symmetric(),
        placements,
    })
}

fn log_validation(v: &Validation) {
    let ia = v.placements.first().map(|p| p.report.ia_pass);
    log::info!(
        "{} nodes, doubly stochastic: {}, symmetric: {}",
        v.nodes,
        v.doubly_stochastic,
        v.symmetric
    );
    for p in &v.placements {
        log::info!(
            "N_s = {:>3}: I.B residual {:.3e} ({})",
            p.ns,
            p.report.ib_residual,
            if p.report.ib_pass { "pass" } else { "fail" }
        );
    }
    if ia == Some(false) {
        log::warn!("combiner is not doubly stochastic; the theory does not apply");
    }
}

/// Writes `network.json` and `validation.json`.
pub fn generate(setup: &Setup) -> anyhow::Result<NetworkDocument> {
    let doc = setup.network_document();
    write_json(&setup.out("network.json"), &doc)?;
    let v = validation(setup)?;
    write_json(&setup.out("validation.json"), &v)?;
    log_validation(&v);
    Ok(doc)
}

/// Writes `validation.json` with the Assumption I checks for every `N_s`.
pub fn validate(setup: &Setup) -> anyhow::Result<Validation> {
    let v = validation(setup)?;
    write_json(&setup.out("validation.json"), &v)?;
    log_validation(&v);
    Ok(v)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleReport {
    pub provenance: Provenance,
    pub ns: usize,
    pub rho: f64,
    pub aware_set: Vec<usize>,
    pub ib_residual: f64,
    pub msd_floor: f64,
    #[serde(flatten)]
    pub result: EnsembleResult,
}

/// Writes `ensemble.json`, `ensemble_trace.csv` and `learning_curve.svg`.
pub fn ensemble(setup: &Setup) -> anyhow::Result<EnsembleReport> {
    let c = &setup.config;
    let ns = c.ensemble_ns.unwrap_or(setup.node_count());
    let profile = setup.profile(ns, c.ensemble_rho)?;
    let result = run_ensemble(
        &setup.model,
        &setup.topology,
        &setup.cmat,
        &profile,
        &setup.sim,
        c.runs,
        setup.workers,
    )?;
    let msd_floor = msd_floor_structured(&setup.theory_context()?)?;
    let mut csv = Csv::new(&setup.provenance, &["iteration", "msd"]);
    for (i, &v) in result.mean_trace.iter().enumerate() {
        csv.row([Cell::from(i), Cell::from(v)]);
    }
    write_text(&setup.out("ensemble_trace.csv"), &csv.finish())?;
    write_text(
        &setup.out("learning_curve.svg"),
        &plot::learning_curve_plot(&result.mean_trace, &setup.provenance),
    )?;
    let report = EnsembleReport {
        provenance: setup.provenance.clone(),
        ns,
        rho: c.ensemble_rho,
        aware_set: profile.aware_set().to_vec(),
        ib_residual: profile.ib_residual(),
        msd_floor,
        result,
    };
    write_json(&setup.out("ensemble.json"), &report)?;
    log::info!(
        "steady MSD {:.3} dB over {} runs (floor {:.3} dB)",
        report.result.steady_msd_db,
        report.result.run_count,
        to_db(msd_floor)
    );
    if !report.result.converged {
        log::warn!("learning curve still moving over the steady window");
    }
    Ok(report)
}

/// Moments from the config or from a homogeneous pilot ensemble at
/// `pilot_rho`. The pilot snapshots are returned for the homogeneous
/// coefficient estimate.
fn moments(setup: &Setup) -> anyhow::Result<(MomentEstimates, Option<Vec<RunSnapshots>>)> {
    let c = &setup.config;
    if let Some([tr_theta, tr_psi]) = c.moments {
        let m = MomentEstimates {
            tr_theta,
            tr_psi,
            sample_count: 0,
            se_theta: 0.0,
            se_psi: 0.0,
            self_pair: [tr_theta, tr_psi],
            cross_pair: [tr_theta, tr_psi],
            consistent: true,
        };
        return Ok((m, None));
    }
    let profile = SparsityProfile::new(
        &setup.cmat,
        &(0..setup.node_count()).collect::<Vec<_>>(),
        c.pilot_rho,
    )?;
    log::info!(
        "pilot ensemble: {} runs at rho = {:e}",
        c.pilot_runs,
        c.pilot_rho
    );
    let snaps = pilot_snapshots(
        &setup.model,
        &setup.topology,
        &setup.cmat,
        &profile,
        &setup.sim,
        c.pilot_runs,
        c.pilot_snapshots,
        setup.workers,
    )?;
    let m = estimate_moments(&snaps, setup.model.w0(), &setup.topology)?;
    Ok((m, Some(snaps)))
}

#[derive(Debug, Clone, Serialize)]
pub struct HomogeneousSection {
    pub coefficients: HomogeneousCoefficients,
    pub report: Option<TheoryReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryOutput {
    pub provenance: Provenance,
    pub msd_floor: f64,
    pub msd_floor_db: f64,
    pub moments: MomentEstimates,
    pub homogeneous: Option<HomogeneousSection>,
    pub reports: Vec<TheoryReport>,
}

/// Writes `theory.json` and one `phi_curve_ns{N_s}.csv` per nonzero `N_s`.
/// The `rho` column is in theory units (simulator attraction divided by mu).
pub fn theory(setup: &Setup) -> anyhow::Result<TheoryOutput> {
    let c = &setup.config;
    check_stability(c.mu, c.sigma_u_sq)?;
    let ctx = setup.theory_context()?;
    let msd_floor = msd_floor_structured(&ctx)?;
    let (moments, snaps) = moments(setup)?;
    let n = setup.node_count();
    let params = HeterogeneousParams::from_moments(&moments, c.mu, c.sigma_u_sq, n);

    let homogeneous = match &snaps {
        Some(snaps) => {
            let coefficients = estimate_homogeneous_coefficients(
                snaps,
                setup.model.w0(),
                &setup.cmat,
                c.mu,
                c.sigma_u_sq,
            )?;
            let report = TheoryReport::homogeneous(msd_floor, coefficients, n, c.mu)
                .map_err(|e| log::warn!("homogeneous optimum unavailable: {e}"))
                .ok();
            Some(HomogeneousSection {
                coefficients,
                report,
            })
        }
        None => None,
    };

    let mut reports = Vec::new();
    for &ns in c.ns_list.iter().filter(|&&ns| ns > 0) {
        let report = match TheoryReport::heterogeneous(msd_floor, &params, ns) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("no optimum for N_s = {ns}: {e}");
                None
            }
        };
        let grid = match &c.phi_grid {
            Some(g) => g.clone(),
            None => default_phi_grid(c, &params, ns),
        };
        let mut csv = Csv::new(&setup.provenance, &["rho", "phi", "predicted_total_msd"]);
        for p in phi_curve(&params, ns, &grid)? {
            csv.row([
                Cell::from(p.rho),
                Cell::from(p.phi),
                Cell::from(msd_floor + p.phi),
            ]);
        }
        write_text(&setup.out(&format!("phi_curve_ns{ns}.csv")), &csv.finish())?;
        if let Some(r) = report {
            log::info!(
                "N_s = {:>3}: rho_opt {:.4e} (simulator {:.4e}), predicted minimum {:.3} dB",
                ns,
                r.rho_opt,
                r.rho_opt_simulation,
                to_db(r.predicted_min_msd)
            );
            reports.push(r);
        }
    }

    let out = TheoryOutput {
        provenance: setup.provenance.clone(),
        msd_floor,
        msd_floor_db: to_db(msd_floor),
        moments,
        homogeneous,
        reports,
    };
    write_json(&setup.out("theory.json"), &out)?;
    log::info!("MSD floor {:.4e} ({:.3} dB)", msd_floor, out.msd_floor_db);
    Ok(out)
}

/// Evenly spaced over `[0, 2.5 rho_opt]`, or over the simulated attraction
/// range when there is no positive optimum.
fn default_phi_grid(c: &ExperimentConfig, p: &HeterogeneousParams, ns: usize) -> Vec<f64> {
    let opt = rho_opt_heterogeneous(p, ns)
        .map(|o| o.rho_opt)
        .unwrap_or(0.0);
    let top = if opt > 0.0 {
        2.5 * opt
    } else {
        c.rho_list.iter().copied().fold(0.0, f64::max) / c.mu
    };
    let points = c.phi_grid_points.max(2);
    (0..points)
        .map(|i| top * i as f64 / (points - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct SweepDocument<'a> {
    provenance: &'a Provenance,
    config: ExperimentConfig,
    w0: &'a [f64],
    network: NetworkDocument,
    minima_span_db: f64,
    #[serde(flatten)]
    sweep: &'a SweepResult,
}

#[derive(Debug, Clone, Serialize)]
struct ComparisonDocument<'a> {
    provenance: &'a Provenance,
    msd_floor: f64,
    moments: &'a MomentEstimates,
    #[serde(flatten)]
    comparison: &'a Comparison,
}

pub struct SweepOutput {
    pub sweep: SweepResult,
    pub comparison: Option<Comparison>,
}

/// Writes `sweep.csv`, `sweep.json`, `sweep.svg`, optional per-cell traces,
/// and the theory comparison (`comparison.csv`, `comparison.json`).
pub fn sweep(setup: &Setup) -> anyhow::Result<SweepOutput> {
    let c = &setup.config;
    let sweep = sweep_ns_rho(
        &setup.model,
        &setup.topology,
        &setup.cmat,
        &c.ns_list,
        &c.rho_list,
        &setup.sim,
        c.runs,
        setup.workers,
        c.set_search(),
    )?;

    let mut csv = Csv::new(
        &setup.provenance,
        &[
            "ns",
            "rho",
            "steady_msd",
            "steady_msd_db",
            "ci_halfwidth",
            "runs",
        ],
    );
    for cell in &sweep.cells {
        let r = &cell.result;
        csv.row([
            Cell::from(cell.ns),
            Cell::from(cell.rho),
            Cell::from(r.steady_msd),
            Cell::from(r.steady_msd_db),
            Cell::from(r.confidence_halfwidth),
            Cell::from(r.run_count),
        ]);
    }
    write_text(&setup.out("sweep.csv"), &csv.finish())?;
    write_json(
        &setup.out("sweep.json"),
        &SweepDocument {
            provenance: &setup.provenance,
            // the output location is not part of the experiment
            config: ExperimentConfig {
                out: None,
                ..c.clone()
            },
            w0: setup.model.w0(),
            network: setup.network_document(),
            minima_span_db: sweep.minima_span_db(),
            sweep: &sweep,
        },
    )?;
    write_text(
        &setup.out("sweep.svg"),
        &plot::sweep_plot(&sweep, &setup.provenance),
    )?;
    if c.write_traces {
        for (idx, cell) in sweep.cells.iter().enumerate() {
            let mut t = Csv::new(&setup.provenance, &["iteration", "msd"]);
            for (i, &v) in cell.result.mean_trace.iter().enumerate() {
                t.row([Cell::from(i), Cell::from(v)]);
            }
            let name = format!("traces/cell{idx:03}_ns{}_rho{:e}.csv", cell.ns, cell.rho);
            write_text(&setup.out(&name), &t.finish())?;
        }
    }
    for m in &sweep.minimizers {
        log::info!(
            "rho = {:e}: minimum {:.3} dB at N_s = {}",
            m.rho,
            m.min_steady_msd_db,
            m.ns_star
        );
    }
    log::info!("spread of the minima: {:.3} dB", sweep.minima_span_db());
    if sweep.cells.iter().any(|cell| !cell.result.converged) {
        log::warn!("some cells have not reached steady state; consider more iterations");
    }

    let comparison = match comparison(setup, &sweep) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("skipping the theory comparison: {e:#}");
            None
        }
    };
    Ok(SweepOutput { sweep, comparison })
}

fn comparison(setup: &Setup, sweep: &SweepResult) -> anyhow::Result<Comparison> {
    let c = &setup.config;
    let msd_floor = msd_floor_structured(&setup.theory_context()?)?;
    let (moments, _) = moments(setup)?;
    let predictor = SteadyStatePredictor {
        msd_floor,
        params: HeterogeneousParams::from_moments(&moments, c.mu, c.sigma_u_sq, setup.node_count()),
    };
    let cmp = compare_to_theory(sweep, &predictor, c.comparison_tol_db);
    let mut csv = Csv::new(
        &setup.provenance,
        &["ns", "rho", "predicted_db", "simulated_db", "abs_error_db"],
    );
    for r in &cmp.rows {
        csv.row([
            Cell::from(r.ns),
            Cell::from(r.rho),
            Cell::from(r.predicted_db),
            Cell::from(r.simulated_db),
            Cell::from(r.abs_error_db),
        ]);
    }
    write_text(&setup.out("comparison.csv"), &csv.finish())?;
    write_json(
        &setup.out("comparison.json"),
        &ComparisonDocument {
            provenance: &setup.provenance,
            msd_floor,
            moments: &moments,
            comparison: &cmp,
        },
    )?;
    log::info!(
        "theory within {} dB on {:.0}% of cells",
        cmp.tolerance_db,
        100.0 * cmp.pass_fraction
    );
    Ok(cmp)
}
