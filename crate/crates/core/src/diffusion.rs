//! Adapt-then-combine diffusion with optional zero attraction at each node.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::experiment::MsdTrace;
use crate::network::{CombinationMatrix, SparsityProfile, Topology};
use crate::rng;

/// Linear data model `d = u^T w0 + v` with white Gaussian `u` and `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    w0: Vec<f64>,
    sigma_u_sq: f64,
    sigma_v_sq: f64,
}

impl SystemModel {
    pub fn new(w0: Vec<f64>, sigma_u_sq: f64, sigma_v_sq: f64) -> Result<Self> {
        if w0.is_empty() {
            return Err(Error::InvalidArgument("w0 needs at least one tap".into()));
        }
        if w0.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("w0 must be finite".into()));
        }
        if !(sigma_u_sq > 0.0) || !sigma_u_sq.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "input variance must be positive, got {sigma_u_sq}"
            )));
        }
        if !(sigma_v_sq >= 0.0) || !sigma_v_sq.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be non-negative, got {sigma_v_sq}"
            )));
        }
        Ok(SystemModel {
            w0,
            sigma_u_sq,
            sigma_v_sq,
        })
    }

    /// `taps`-long vector with a single unit coefficient at a seeded position.
    pub fn single_tap(taps: usize, seed: u64, sigma_u_sq: f64, sigma_v_sq: f64) -> Result<Self> {
        if taps == 0 {
            return Err(Error::InvalidArgument("w0 needs at least one tap".into()));
        }
        let mut w0 = vec![0.0; taps];
        w0[rng::seeded(seed).gen_range(0..taps)] = 1.0;
        Self::new(w0, sigma_u_sq, sigma_v_sq)
    }

    pub fn taps(&self) -> usize {
        self.w0.len()
    }

    pub fn w0(&self) -> &[f64] {
        &self.w0
    }

    pub fn sigma_u_sq(&self) -> f64 {
        self.sigma_u_sq
    }

    pub fn sigma_v_sq(&self) -> f64 {
        self.sigma_v_sq
    }

    pub fn nonzero_count(&self) -> usize {
        self.w0.iter().filter(|&&x| x != 0.0).count()
    }

    pub fn energy(&self) -> f64 {
        self.w0.iter().map(|x| x * x).sum()
    }
}

/// One sample of the data model at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub d: f64,
    pub u: Vec<f64>,
    pub v: f64,
}

pub fn draw_measurement<R: Rng + ?Sized>(model: &SystemModel, rng: &mut R) -> Measurement {
    let mut u = vec![0.0; model.taps()];
    let (d, v) = draw_into(model, rng, &mut u);
    Measurement { d, u, v }
}

/// Fills `u` with a fresh regressor and returns `(d, v)`.
fn draw_into<R: Rng + ?Sized>(model: &SystemModel, rng: &mut R, u: &mut [f64]) -> (f64, f64) {
    let su = model.sigma_u_sq.sqrt();
    for x in u.iter_mut() {
        *x = su * rng.sample::<f64, _>(StandardNormal);
    }
    let v = model.sigma_v_sq.sqrt() * rng.sample::<f64, _>(StandardNormal);
    (dot(u, &model.w0) + v, v)
}

/// Element sign with `sgn(0) = 0`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Inner product accumulated in four interleaved partial sums, combined as
/// `(s0 + s1) + (s2 + s3)`, then the tail in order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        for j in 0..4 {
            acc[j] += ca[j] * cb[j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `sum_i (a_i - b_i)^2` in the same accumulation order as [`dot`].
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        for j in 0..4 {
            let t = ca[j] - cb[j];
            acc[j] += t * t;
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        let t = a[i] - b[i];
        s += t * t;
    }
    s
}

/// Zero-attracting LMS step on raw slices; returns the a priori error.
#[inline]
fn adapt_slices(w: &[f64], u: &[f64], d: f64, mu: f64, rho: f64, out: &mut [f64]) -> f64 {
    let e = d - dot(w, u);
    let step = mu * e;
    if rho == 0.0 {
        for ((o, &wi), &ui) in out.iter_mut().zip(w).zip(u) {
            *o = wi + step * ui;
        }
    } else {
        for ((o, &wi), &ui) in out.iter_mut().zip(w).zip(u) {
            *o = wi + step * ui - rho * sgn(wi);
        }
    }
    e
}

/// `out = sum_j c_j * src_j` over `support`, accumulated in listed order.
#[inline]
fn combine_slices(support: &[(usize, f64)], src: &[f64], m: usize, out: &mut [f64]) {
    let (&(j0, c0), rest) = support
        .split_first()
        .expect("closed neighborhood is never empty");
    for (o, &x) in out.iter_mut().zip(&src[j0 * m..(j0 + 1) * m]) {
        *o = c0 * x;
    }
    for &(j, c) in rest {
        for (o, &x) in out.iter_mut().zip(&src[j * m..(j + 1) * m]) {
            *o += c * x;
        }
    }
}

/// Estimate held by one node, plus its post-adaptation value while a
/// combination step is pending.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub w: Vec<f64>,
    pub intermediate: Vec<f64>,
    pending: bool,
}

impl NodeState {
    pub fn zeros(taps: usize) -> Self {
        Self::from_weights(vec![0.0; taps])
    }

    pub fn from_weights(w: Vec<f64>) -> Self {
        let intermediate = vec![0.0; w.len()];
        NodeState {
            w,
            intermediate,
            pending: false,
        }
    }

    /// Whether `intermediate` holds this iteration's adapted estimate.
    pub fn is_pending(&self) -> bool {
        self.pending
    }
}

/// Local update `w + mu u e - rho_k sgn(w)`, written into `intermediate`.
/// Returns the a priori error `e = d - w^T u`.
pub fn adapt(state: &mut NodeState, m: &Measurement, mu: f64, rho_k: f64) -> f64 {
    assert_eq!(
        state.w.len(),
        m.u.len(),
        "regressor length differs from filter length"
    );
    assert!(
        rho_k >= 0.0,
        "zero-attraction coefficient must be non-negative"
    );
    let e = adapt_slices(&state.w, &m.u, m.d, mu, rho_k, &mut state.intermediate);
    state.pending = true;
    e
}

/// Replaces every `w_k` with `sum_j c[j, k] * intermediate_j`, summing over
/// ascending `j`.
pub fn combine(states: &mut [NodeState], cmat: &CombinationMatrix) {
    let n = states.len();
    assert_eq!(
        n,
        cmat.node_count(),
        "node count differs from combiner size"
    );
    let m = states.first().map_or(0, |s| s.w.len());
    let mut flat = Vec::with_capacity(n * m);
    for s in states.iter() {
        assert!(s.pending, "combine called before adapt");
        assert_eq!(s.intermediate.len(), m, "ragged node states");
        flat.extend_from_slice(&s.intermediate);
    }
    for (k, s) in states.iter_mut().enumerate() {
        combine_slices(&cmat.column_support(k), &flat, m, &mut s.w);
        s.pending = false;
    }
}

/// Step size, horizon and seeding of one realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub mu: f64,
    pub iterations: usize,
    pub seed: u64,
    pub steady_window: usize,
}

impl SimulationConfig {
    pub fn validate(&self, model: &SystemModel) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if self.steady_window > self.iterations {
            return Err(Error::InvalidArgument(format!(
                "steady window {} exceeds {} iterations",
                self.steady_window, self.iterations
            )));
        }
        let ms = self.mu * model.sigma_u_sq();
        if !(ms < 2.0) {
            log::warn!(
                "mu * sigma_u^2 = {ms} is outside (0, 2); the recursion will likely diverge"
            );
        }
        Ok(())
    }
}

/// MSD traces (and optional weight snapshots) of several zero-attraction
/// profiles driven by one shared set of measurement streams.
#[derive(Debug, Clone)]
pub struct LaneOutput {
    /// `traces[lane][n]` is the network MSD after `n` iterations.
    pub traces: Vec<Vec<f64>>,
    /// `snapshots[lane][s]` holds all node estimates (node-major, `N * M`)
    /// after the `s`-th requested snapshot iteration.
    pub snapshots: Vec<Vec<Vec<f64>>>,
}

/// Runs one realization for every per-node `rho` vector in `lanes`.
///
/// Node `k` draws its measurements from its own stream of `run_seed`, so each
/// lane evolves exactly as it would if simulated alone.
pub fn simulate_lanes(
    model: &SystemModel,
    cmat: &CombinationMatrix,
    lanes: &[&[f64]],
    config: &SimulationConfig,
    run_seed: u64,
    snapshot_iterations: &[usize],
) -> Result<LaneOutput> {
    let n = cmat.node_count();
    let m = model.taps();
    for rho in lanes {
        if rho.len() != n {
            return Err(Error::InvalidArgument(format!(
                "profile covers {} nodes, network has {n}",
                rho.len()
            )));
        }
    }
    let supports: Vec<Vec<(usize, f64)>> = (0..n).map(|k| cmat.column_support(k)).collect();
    let mut streams: Vec<_> = (0..n).map(|k| rng::node_stream(run_seed, k)).collect();
    let w0 = model.w0();
    let start_msd = model.energy();
    let inv_n = 1.0 / n as f64;

    let mut weights = vec![vec![0.0; n * m]; lanes.len()];
    let mut scratch = vec![0.0; n * m];
    let mut regressors = vec![0.0; n * m];
    let mut desired = vec![0.0; n];

    let mut traces: Vec<Vec<f64>> = (0..lanes.len())
        .map(|_| {
            let mut t = Vec::with_capacity(config.iterations + 1);
            t.push(start_msd);
            t
        })
        .collect();
    let mut snapshots = vec![Vec::new(); lanes.len()];
    let take_snapshot = |it: usize| snapshot_iterations.contains(&it);
    if take_snapshot(0) {
        for (lane, snaps) in snapshots.iter_mut().enumerate() {
            snaps.push(weights[lane].clone());
        }
    }

    for it in 1..=config.iterations {
        for (k, stream) in streams.iter_mut().enumerate() {
            desired[k] = draw_into(model, stream, &mut regressors[k * m..(k + 1) * m]).0;
        }
        for (lane, rho) in lanes.iter().enumerate() {
            let w = &mut weights[lane];
            for k in 0..n {
                let r = k * m..(k + 1) * m;
                adapt_slices(
                    &w[r.clone()],
                    &regressors[r.clone()],
                    desired[k],
                    config.mu,
                    rho[k],
                    &mut scratch[r],
                );
            }
            let mut msd = 0.0;
            for (k, support) in supports.iter().enumerate() {
                let wk = &mut w[k * m..(k + 1) * m];
                combine_slices(support, &scratch, m, wk);
                msd += squared_distance(w0, wk);
            }
            let msd = msd * inv_n;
            if !msd.is_finite() {
                return Err(Error::Diverged {
                    seed: run_seed,
                    iteration: it,
                });
            }
            traces[lane].push(msd);
        }
        if take_snapshot(it) {
            for (lane, snaps) in snapshots.iter_mut().enumerate() {
                snaps.push(weights[lane].clone());
            }
        }
    }
    Ok(LaneOutput { traces, snapshots })
}

/// One realization of the heterogeneous network from zero initial estimates,
/// seeded by `config.seed`.
pub fn run_realization(
    model: &SystemModel,
    topology: &Topology,
    cmat: &CombinationMatrix,
    profile: &SparsityProfile,
    config: &SimulationConfig,
) -> Result<MsdTrace> {
    check_consistency(model, topology, cmat, profile)?;
    config.validate(model)?;
    let out = simulate_lanes(
        model,
        cmat,
        &[profile.rho_vector()],
        config,
        config.seed,
        &[],
    )?;
    let values = out.traces.into_iter().next().expect("one lane");
    Ok(MsdTrace {
        values,
        run_seed: config.seed,
    })
}

pub(crate) fn check_consistency(
    model: &SystemModel,
    topology: &Topology,
    cmat: &CombinationMatrix,
    profile: &SparsityProfile,
) -> Result<()> {
    let n = topology.node_count();
    if cmat.node_count() != n || profile.node_count() != n {
        return Err(Error::InvalidArgument(format!(
            "inconsistent node counts: topology {n}, combiner {}, profile {}",
            cmat.node_count(),
            profile.node_count()
        )));
    }
    if !cmat.matches_support(topology) {
        return Err(Error::InvalidCombiner(
            "combiner support does not match the topology".into(),
        ));
    }
    if model.taps() == 0 {
        return Err(Error::InvalidArgument("model has no taps".into()));
    }
    Ok(())
}
