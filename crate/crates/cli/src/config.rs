use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zadiff::network::{CombinerRule, SetSearch};
use zadiff::{rng, SimulationConfig, SystemModel};

pub const REFERENCE_RHO_LIST: [f64; 6] = [2e-6, 4e-6, 6e-6, 1e-5, 2e-5, 4e-5];

/// Every knob of an experiment. An empty JSON object yields the desk-scale
/// reproduction: 30 nodes, 128 taps, one unit tap, six attraction values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub nodes: usize,
    pub radius: f64,
    pub rule: CombinerRule,
    /// Load the network from a document instead of generating it.
    pub network_file: Option<PathBuf>,

    pub taps: usize,
    /// Explicit parameter vector; by default a single unit tap at a seeded position.
    pub w0: Option<Vec<f64>>,
    pub sigma_u_sq: f64,
    pub sigma_v_sq: f64,

    pub mu: f64,
    pub iterations: usize,
    pub steady_window: usize,
    pub seed: u64,

    pub runs: usize,
    pub ns_list: Vec<usize>,
    pub rho_list: Vec<f64>,
    pub set_search_budget: u64,
    pub set_search_restarts: usize,

    /// Profile simulated by the `ensemble` command; `None` means all nodes.
    pub ensemble_ns: Option<usize>,
    pub ensemble_rho: f64,

    /// Known `Tr[theta]` and `Tr[psi]`; when absent a pilot ensemble estimates them.
    pub moments: Option<[f64; 2]>,
    pub pilot_runs: usize,
    pub pilot_rho: f64,
    pub pilot_snapshots: usize,
    /// Explicit phi grid (theory units); by default spans `[0, 2.5 rho_opt]`.
    pub phi_grid: Option<Vec<f64>>,
    pub phi_grid_points: usize,

    pub assumption_tol: f64,
    pub comparison_tol_db: f64,
    pub write_traces: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            nodes: 30,
            radius: 0.35,
            rule: CombinerRule::Metropolis,
            network_file: None,
            taps: 128,
            w0: None,
            sigma_u_sq: 1.0,
            sigma_v_sq: 1e-4,
            mu: 6e-3,
            iterations: 3000,
            steady_window: 200,
            seed: 42,
            runs: 100,
            ns_list: (0..=10).map(|i| 3 * i).collect(),
            rho_list: REFERENCE_RHO_LIST.to_vec(),
            set_search_budget: SetSearch::default().budget,
            set_search_restarts: SetSearch::default().restarts,
            ensemble_ns: None,
            ensemble_rho: 2e-6,
            moments: None,
            pilot_runs: 30,
            pilot_rho: 2e-6,
            pilot_snapshots: 10,
            phi_grid: None,
            phi_grid_points: 101,
            assumption_tol: 1e-12,
            comparison_tol_db: 1.5,
            write_traces: false,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Full-grid settings: 1000 runs over every `N_s` in `0..=N`.
    pub fn paper_scale(&mut self) {
        self.runs = 1000;
        self.ns_list = (0..=self.nodes).collect();
    }

    pub fn check(&self) -> anyhow::Result<()> {
        if self.nodes == 0 || self.taps == 0 {
            bail!("nodes and taps must be positive");
        }
        if let Some(w0) = &self.w0 {
            if w0.len() != self.taps {
                bail!("w0 has {} entries but taps = {}", w0.len(), self.taps);
            }
        }
        if self.runs == 0 {
            bail!("runs must be positive");
        }
        if self.pilot_runs == 0 {
            bail!("pilot_runs must be positive");
        }
        if self.steady_window < 2 || self.steady_window > self.iterations {
            bail!(
                "steady_window must lie in [2, iterations], got {}",
                self.steady_window
            );
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    pub fn w0_seed(&self) -> u64 {
        rng::mix64(self.seed.wrapping_add(1))
    }

    pub fn model(&self) -> zadiff::Result<SystemModel> {
        match &self.w0 {
            Some(w0) => SystemModel::new(w0.clone(), self.sigma_u_sq, self.sigma_v_sq),
            None => {
                SystemModel::single_tap(self.taps, self.w0_seed(), self.sigma_u_sq, self.sigma_v_sq)
            }
        }
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            mu: self.mu,
            iterations: self.iterations,
            seed: self.seed,
            steady_window: self.steady_window,
        }
    }

    pub fn set_search(&self) -> SetSearch {
        SetSearch {
            budget: self.set_search_budget,
            restarts: self.set_search_restarts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_desk_scale() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.nodes, 30);
        assert_eq!(c.taps, 128);
        assert_eq!(c.ns_list, vec![0, 3, 6, 9, 12, 15, 18, 21, 24, 27, 30]);
        assert_eq!(c.rho_list, REFERENCE_RHO_LIST.to_vec());
        let m = c.model().unwrap();
        assert_eq!(m.nonzero_count(), 1);
        assert_eq!(m.energy(), 1.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"nodse": 3}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out = Some("/tmp/elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn paper_scale_switch() {
        let mut c = ExperimentConfig::default();
        c.paper_scale();
        assert_eq!(c.runs, 1000);
        assert_eq!(c.ns_list, (0..=30).collect::<Vec<_>>());
    }
}
