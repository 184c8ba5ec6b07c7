//! Network topologies, combination rules and placement of sparsity-aware nodes.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on row and column sums of a combination matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Regeneration bound for random geometric graphs.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Undirected connected graph over `n` nodes.
///
/// Neighbor lists are open (no self loops) and sorted; the closed
/// neighborhood of `k` is its neighbor list plus `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    neighbors: Vec<Vec<usize>>,
    positions: Option<Vec<[f64; 2]>>,
}

impl Topology {
    pub fn from_edges(
        n: usize,
        edges: &[[usize; 2]],
        positions: Option<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "topology needs at least one node".into(),
            ));
        }
        if let Some(p) = &positions {
            if p.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{} positions given for {n} nodes",
                    p.len()
                )));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for &[a, b] in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) out of range"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self edge at node {a}")));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let topology = Topology {
            neighbors,
            positions,
        };
        if !topology.is_connected() {
            return Err(Error::NotConnected);
        }
        Ok(topology)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<[usize; 2]> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| [a, b]))
            .collect();
        Self::from_edges(n, &edges, None)
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<[usize; 2]> = (1..n).map(|b| [b - 1, b]).collect();
        Self::from_edges(n, &edges, None)
    }

    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Self::path(n);
        }
        let edges: Vec<[usize; 2]> = (0..n).map(|a| [a, (a + 1) % n]).collect();
        Self::from_edges(n, &edges, None)
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.neighbors[k].len()
    }

    /// Sorted closed neighborhood of `k`.
    pub fn closed_neighborhood(&self, k: usize) -> Vec<usize> {
        let mut hood = self.neighbors[k].clone();
        let at = hood.partition_point(|&j| j < k);
        hood.insert(at, k);
        hood
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Edges as `[a, b]` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, list)| list.iter().filter(move |&&b| b > a).map(move |&b| [a, b]))
            .collect()
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(k) = queue.pop_front() {
            for &j in &self.neighbors[k] {
                if !seen[j] {
                    seen[j] = true;
                    reached += 1;
                    queue.push_back(j);
                }
            }
        }
        reached == n
    }

    /// Whether the closed neighborhoods of `a` and `b` intersect, i.e. the
    /// nodes are at most two hops apart.
    pub fn neighborhoods_overlap(&self, a: usize, b: usize) -> bool {
        if a == b || self.is_adjacent(a, b) {
            return true;
        }
        let (na, nb) = (&self.neighbors[a], &self.neighbors[b]);
        let (mut i, mut j) = (0, 0);
        while i < na.len() && j < nb.len() {
            match na[i].cmp(&nb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

/// Places `n` nodes uniformly in the unit square and links every pair within
/// `radius`, redrawing until the graph is connected.
pub fn generate_geometric_topology(n: usize, radius: f64, seed: u64) -> Result<Topology> {
    if n == 0 {
        return Err(Error::InvalidArgument("node count must be positive".into()));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let r2 = radius * radius;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let dx = positions[a][0] - positions[b][0];
                let dy = positions[a][1] - positions[b][1];
                if dx * dx + dy * dy <= r2 {
                    edges.push([a, b]);
                }
            }
        }
        match Topology::from_edges(n, &edges, Some(positions)) {
            Ok(t) => return Ok(t),
            Err(Error::NotConnected) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Disconnected {
        nodes: n,
        radius,
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinerRule {
    Metropolis,
    Uniform,
}

/// Weights `c[(l, k)]` applied by node `k` to the estimate of node `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    coefficients: DMatrix<f64>,
    rule: CombinerRule,
    doubly_stochastic: bool,
}

impl CombinationMatrix {
    /// Wraps raw coefficients after checking non-negativity and column sums.
    pub fn from_coefficients(coefficients: DMatrix<f64>, rule: CombinerRule) -> Result<Self> {
        if !coefficients.is_square() || coefficients.nrows() == 0 {
            return Err(Error::InvalidCombiner(
                "matrix must be square and non-empty".into(),
            ));
        }
        if coefficients.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidCombiner(
                "negative or non-finite entry".into(),
            ));
        }
        let column_dev = max_column_deviation(&coefficients);
        if column_dev > STOCHASTIC_TOL {
            return Err(Error::InvalidCombiner(format!(
                "column sums deviate from 1 by {column_dev:e}"
            )));
        }
        let doubly_stochastic = max_row_deviation(&coefficients) <= STOCHASTIC_TOL;
        Ok(CombinationMatrix {
            coefficients,
            rule,
            doubly_stochastic,
        })
    }

    pub fn node_count(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.coefficients[(from, to)]
    }

    pub fn rule(&self) -> CombinerRule {
        self.rule
    }

    pub fn is_doubly_stochastic(&self) -> bool {
        self.doubly_stochastic
    }

    pub fn is_symmetric(&self) -> bool {
        self.coefficients == self.coefficients.transpose()
    }

    /// Nonzero weights feeding node `k`, in ascending source index.
    pub fn column_support(&self, k: usize) -> Vec<(usize, f64)> {
        self.coefficients
            .column(k)
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(l, &c)| (l, c))
            .collect()
    }

    /// Whether the nonzero pattern is exactly the closed neighborhoods.
    pub fn matches_support(&self, topology: &Topology) -> bool {
        let n = self.node_count();
        if topology.node_count() != n {
            return false;
        }
        (0..n).all(|l| {
            (0..n).all(|k| {
                let linked = l == k || topology.is_adjacent(l, k);
                (self.coefficients[(l, k)] > 0.0) == linked
            })
        })
    }

    pub fn max_row_deviation(&self) -> f64 {
        max_row_deviation(&self.coefficients)
    }

    pub fn max_column_deviation(&self) -> f64 {
        max_column_deviation(&self.coefficients)
    }
}

fn max_row_deviation(c: &DMatrix<f64>) -> f64 {
    c.row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn max_column_deviation(c: &DMatrix<f64>) -> f64 {
    c.column_iter()
        .map(|col| (col.sum() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Metropolis weights: `1 / (1 + max(deg_l, deg_k))` between neighbors and
/// the remaining mass on the diagonal.
pub fn build_metropolis(topology: &Topology) -> CombinationMatrix {
    let n = topology.node_count();
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        for &l in topology.neighbors(k) {
            let deg = topology.degree(l).max(topology.degree(k));
            c[(l, k)] = 1.0 / (1.0 + deg as f64);
        }
    }
    for k in 0..n {
        let off: f64 = topology.neighbors(k).iter().map(|&l| c[(l, k)]).sum();
        c[(k, k)] = 1.0 - off;
    }
    let doubly_stochastic = max_row_deviation(&c) <= STOCHASTIC_TOL;
    debug_assert!(doubly_stochastic);
    CombinationMatrix {
        coefficients: c,
        rule: CombinerRule::Metropolis,
        doubly_stochastic,
    }
}

/// Uniform weights `1 / |closed neighborhood of k|` over each column.
pub fn build_uniform(topology: &Topology) -> CombinationMatrix {
    let n = topology.node_count();
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        let hood = topology.closed_neighborhood(k);
        let w = 1.0 / hood.len() as f64;
        for l in hood {
            c[(l, k)] = w;
        }
    }
    let doubly_stochastic = max_row_deviation(&c) <= STOCHASTIC_TOL;
    CombinationMatrix {
        coefficients: c,
        rule: CombinerRule::Uniform,
        doubly_stochastic,
    }
}

pub fn build_combiner(topology: &Topology, rule: CombinerRule) -> CombinationMatrix {
    match rule {
        CombinerRule::Metropolis => build_metropolis(topology),
        CombinerRule::Uniform => build_uniform(topology),
    }
}

/// Which nodes run the zero-attracting update, and with what coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityProfile {
    aware: Vec<usize>,
    rho: f64,
    rho_vector: Vec<f64>,
    ib_residual: f64,
}

impl SparsityProfile {
    pub fn new(cmat: &CombinationMatrix, aware: &[usize], rho: f64) -> Result<Self> {
        let n = cmat.node_count();
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rho must be >= 0, got {rho}"
            )));
        }
        let mut aware = aware.to_vec();
        aware.sort_unstable();
        aware.dedup();
        if aware.last().is_some_and(|&k| k >= n) {
            return Err(Error::InvalidArgument(
                "aware node index out of range".into(),
            ));
        }
        let mut rho_vector = vec![0.0; n];
        for &k in &aware {
            rho_vector[k] = rho;
        }
        let ib_residual = ib_residual(cmat, &aware);
        Ok(SparsityProfile {
            aware,
            rho,
            rho_vector,
            ib_residual,
        })
    }

    /// Every node sparsity-agnostic.
    pub fn agnostic(cmat: &CombinationMatrix) -> Self {
        Self::new(cmat, &[], 0.0).expect("empty profile is valid")
    }

    pub fn aware_set(&self) -> &[usize] {
        &self.aware
    }

    pub fn aware_count(&self) -> usize {
        self.aware.len()
    }

    pub fn node_count(&self) -> usize {
        self.rho_vector.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn rho_vector(&self) -> &[f64] {
        &self.rho_vector
    }

    pub fn ib_residual(&self) -> f64 {
        self.ib_residual
    }

    /// Same placement with a different coefficient.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rho must be >= 0, got {rho}"
            )));
        }
        let mut p = self.clone();
        p.rho = rho;
        for &k in &p.aware {
            p.rho_vector[k] = rho;
        }
        Ok(p)
    }
}

/// Largest deviation over columns `j` of the in-set combiner mass
/// `sum_{i in S} c[i, j]` from `|S| / N`.
pub fn ib_residual(cmat: &CombinationMatrix, aware: &[usize]) -> f64 {
    let n = cmat.node_count();
    let target = aware.len() as f64 / n as f64;
    let c = cmat.coefficients();
    (0..n)
        .map(|j| {
            let mass: f64 = aware.iter().map(|&i| c[(i, j)]).sum();
            (mass - target).abs()
        })
        .fold(0.0, f64::max)
}

/// Knobs of the placement search.
#[derive(Debug, Clone, Copy)]
pub struct SetSearch {
    /// Largest number of candidate sets enumerated exhaustively.
    pub budget: u64,
    /// Random starts of the swap heuristic when enumeration is too large.
    pub restarts: usize,
}

impl Default for SetSearch {
    fn default() -> Self {
        SetSearch {
            budget: 1_000_000,
            restarts: 64,
        }
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| {
        acc.saturating_mul((n - i) as u128) / (i as u128 + 1)
    })
}

/// Chooses `ns` sparsity-aware nodes spreading their influence as evenly as
/// possible over the network (smallest I.B residual).
pub fn select_sparsity_set(
    cmat: &CombinationMatrix,
    ns: usize,
    rho: f64,
    seed: u64,
) -> Result<SparsityProfile> {
    select_sparsity_set_with(cmat, ns, rho, seed, SetSearch::default())
}

pub fn select_sparsity_set_with(
    cmat: &CombinationMatrix,
    ns: usize,
    rho: f64,
    seed: u64,
    search: SetSearch,
) -> Result<SparsityProfile> {
    let n = cmat.node_count();
    if ns > n {
        return Err(Error::InvalidArgument(format!(
            "N_s = {ns} exceeds N = {n}"
        )));
    }
    let set = if binomial(n, ns) <= search.budget as u128 {
        exhaustive_search(cmat, ns)
    } else {
        swap_search(cmat, ns, seed, search.restarts.max(1))
    };
    SparsityProfile::new(cmat, &set, rho)
}

/// Scans all `ns`-subsets in lexicographic order; only a strictly smaller
/// residual replaces the incumbent, so the lowest set wins ties.
fn exhaustive_search(cmat: &CombinationMatrix, ns: usize) -> Vec<usize> {
    let n = cmat.node_count();
    if ns == 0 || ns == n {
        return (0..ns).collect();
    }
    let c = cmat.coefficients();
    let target = ns as f64 / n as f64;
    let mut combo: Vec<usize> = (0..ns).collect();
    let mut best = combo.clone();
    let mut best_res = f64::INFINITY;
    loop {
        let mut res = 0.0f64;
        for j in 0..n {
            let mass: f64 = combo.iter().map(|&i| c[(i, j)]).sum();
            res = res.max((mass - target).abs());
            if res >= best_res {
                break;
            }
        }
        if res < best_res {
            best_res = res;
            best.copy_from_slice(&combo);
        }
        // advance to the next combination
        let mut i = ns;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if combo[i] < n - ns + i {
                break;
            }
        }
        combo[i] += 1;
        for t in i + 1..ns {
            combo[t] = combo[t - 1] + 1;
        }
    }
}

fn swap_search(cmat: &CombinationMatrix, ns: usize, seed: u64, restarts: usize) -> Vec<usize> {
    let n = cmat.node_count();
    let c = cmat.coefficients();
    let target = ns as f64 / n as f64;
    let mut rng = rng::seeded(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut nodes: Vec<usize> = (0..n).collect();

    for _ in 0..restarts {
        nodes.shuffle(&mut rng);
        let mut member = vec![false; n];
        for &k in &nodes[..ns] {
            member[k] = true;
        }
        let mut mass: Vec<f64> = (0..n)
            .map(|j| (0..n).filter(|&i| member[i]).map(|i| c[(i, j)]).sum())
            .collect();
        let mut res = mass.iter().map(|m| (m - target).abs()).fold(0.0, f64::max);
        loop {
            let mut improvement: Option<(f64, usize, usize)> = None;
            for out in (0..n).filter(|&i| member[i]) {
                for inn in (0..n).filter(|&i| !member[i]) {
                    let r = (0..n)
                        .map(|j| (mass[j] - c[(out, j)] + c[(inn, j)] - target).abs())
                        .fold(0.0, f64::max);
                    if r < improvement.map_or(res, |(b, _, _)| b) {
                        improvement = Some((r, out, inn));
                    }
                }
            }
            let Some((r, out, inn)) = improvement else {
                break;
            };
            member[out] = false;
            member[inn] = true;
            for (j, m) in mass.iter_mut().enumerate() {
                *m = *m - c[(out, j)] + c[(inn, j)];
            }
            res = r;
        }
        let set: Vec<usize> = (0..n).filter(|&i| member[i]).collect();
        // recompute exactly; the incremental masses drift
        let res = ib_residual(cmat, &set);
        let better = match &best {
            None => true,
            Some((b, s)) => res < *b || (res == *b && set < *s),
        };
        if better {
            best = Some((res, set));
        }
    }
    best.map(|(_, s)| s).unwrap_or_default()
}

/// Outcome of checking Assumptions I.A and I.B.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub tolerance: f64,
    pub column_sum_deviation: f64,
    pub row_sum_deviation: f64,
    pub ib_residual: f64,
    pub ia_pass: bool,
    pub ib_pass: bool,
    pub pass: bool,
}

pub fn validate_assumption_i(
    cmat: &CombinationMatrix,
    profile: &SparsityProfile,
    tol: f64,
) -> AssumptionReport {
    let row_sum_deviation = cmat.max_row_deviation();
    let ib_residual = profile.ib_residual();
    let ia_pass = row_sum_deviation <= tol;
    let ib_pass = ib_residual <= tol;
    AssumptionReport {
        tolerance: tol,
        column_sum_deviation: cmat.max_column_deviation(),
        row_sum_deviation,
        ib_residual,
        ia_pass,
        ib_pass,
        pass: ia_pass && ib_pass,
    }
}

/// Serialized form of a topology together with its combiner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default)]
    pub positions: Vec<[f64; 2]>,
    pub rule: CombinerRule,
    pub c: Vec<Vec<f64>>,
    /// Free-form origin record (config hash, seed); ignored on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl NetworkDocument {
    pub fn new(topology: &Topology, cmat: &CombinationMatrix) -> Self {
        let n = cmat.node_count();
        NetworkDocument {
            n,
            edges: topology.edges(),
            positions: topology.positions().map(<[_]>::to_vec).unwrap_or_default(),
            rule: cmat.rule(),
            c: (0..n)
                .map(|l| (0..n).map(|k| cmat.weight(l, k)).collect())
                .collect(),
            provenance: None,
        }
    }

    pub fn into_network(self) -> Result<(Topology, CombinationMatrix)> {
        let positions = (!self.positions.is_empty()).then_some(self.positions);
        let topology = Topology::from_edges(self.n, &self.edges, positions)?;
        if self.c.len() != self.n || self.c.iter().any(|row| row.len() != self.n) {
            return Err(Error::InvalidCombiner(format!("c must be {0}x{0}", self.n)));
        }
        let flat: Vec<f64> = self.c.iter().flatten().copied().collect();
        let coefficients = DMatrix::from_row_slice(self.n, self.n, &flat);
        let cmat = CombinationMatrix::from_coefficients(coefficients, self.rule)?;
        if !cmat.matches_support(&topology) {
            return Err(Error::InvalidCombiner(
                "nonzero pattern differs from closed neighborhoods".into(),
            ));
        }
        Ok((topology, cmat))
    }
}
