//! Closed-form steady-state network MSD.
//!
//! The floor term is the steady-state MSD of plain adapt-then-combine
//! diffusion LMS. The zero-attraction excess `phi(rho)` is a parabola in
//! `rho` whose coefficients come from the sign/deviation cross-moments
//! `Tr[theta]` and `Tr[psi]`, estimated here from pilot simulations.
//!
//! Every `rho` in this module uses the convention in which the attraction
//! enters the deviation recursion as `mu * rho * sgn(w)`. The simulator
//! applies `rho * sgn(w)` directly, so a simulated coefficient corresponds to
//! `rho_sim / mu` here; [`SteadyStatePredictor`] performs that conversion.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::diffusion::sgn;
use crate::error::{Error, Result};
use crate::network::{CombinationMatrix, Topology};

/// Largest `M * N` accepted by the dense oracle.
pub const ORACLE_LIMIT: usize = 12;

const SERIES_REL_TOL: f64 = 1e-14;
const SERIES_MAX_TERMS: usize = 10_000_000;

/// Everything the floor term depends on.
#[derive(Debug, Clone)]
pub struct TheoryContext {
    cmat: CombinationMatrix,
    taps: usize,
    mu: f64,
    sigma_u_sq: f64,
    sigma_v_sq: f64,
}

impl TheoryContext {
    pub fn new(
        cmat: CombinationMatrix,
        taps: usize,
        mu: f64,
        sigma_u_sq: f64,
        sigma_v_sq: f64,
    ) -> Result<Self> {
        check_stability(mu, sigma_u_sq)?;
        if taps == 0 {
            return Err(Error::InvalidArgument("taps must be positive".into()));
        }
        if !(sigma_v_sq >= 0.0) {
            return Err(Error::InvalidArgument("noise variance must be >= 0".into()));
        }
        Ok(TheoryContext {
            cmat,
            taps,
            mu,
            sigma_u_sq,
            sigma_v_sq,
        })
    }

    pub fn cmat(&self) -> &CombinationMatrix {
        &self.cmat
    }

    pub fn node_count(&self) -> usize {
        self.cmat.node_count()
    }

    /// Per-step contraction `1 - 2 mu su^2 + mu^2 su^4`.
    pub fn contraction(&self) -> f64 {
        let ms = self.mu * self.sigma_u_sq;
        1.0 - 2.0 * ms + ms * ms
    }

    fn prefactor(&self) -> f64 {
        self.mu * self.mu * self.sigma_v_sq * self.sigma_u_sq / self.node_count() as f64
    }
}

/// Rejects step sizes outside the mean-square stable range `0 < mu su^2 < 2`.
pub fn check_stability(mu: f64, sigma_u_sq: f64) -> Result<()> {
    let ms = mu * sigma_u_sq;
    if !(ms > 0.0 && ms < 2.0) {
        return Err(Error::Unstable { mu_sigma: ms });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloorMethod {
    /// Eigenvalues when the combiner is symmetric, series otherwise.
    Auto,
    Eigen,
    Series,
}

/// Floor term of the steady-state network MSD, evaluated without forming any
/// `MN`-sized matrix.
pub fn msd_floor_structured(ctx: &TheoryContext) -> Result<f64> {
    msd_floor_with(ctx, FloorMethod::Auto)
}

pub fn msd_floor_with(ctx: &TheoryContext, method: FloorMethod) -> Result<f64> {
    let method = match method {
        FloorMethod::Auto if ctx.cmat.is_symmetric() => FloorMethod::Eigen,
        FloorMethod::Auto => FloorMethod::Series,
        m => m,
    };
    let sum = match method {
        FloorMethod::Eigen => {
            if !ctx.cmat.is_symmetric() {
                return Err(Error::InvalidArgument(
                    "eigenvalue evaluation needs a symmetric combiner".into(),
                ));
            }
            eigen_sum(ctx.cmat.coefficients(), ctx.contraction())
        }
        _ => series_sum(ctx.cmat.coefficients(), ctx.contraction())?,
    };
    Ok(ctx.prefactor() * ctx.taps as f64 * sum)
}

/// `sum_i l_i^2 / (1 - s l_i^2)` over the eigenvalues of a symmetric `c`.
fn eigen_sum(c: &DMatrix<f64>, s: f64) -> f64 {
    SymmetricEigen::new(c.clone())
        .eigenvalues
        .iter()
        .map(|l| l * l / (1.0 - s * l * l))
        .sum()
}

/// `sum_k s^k Tr(c^T c c^k (c^k)^T)`, stopped once the geometric tail bound
/// drops below the relative tolerance.
fn series_sum(c: &DMatrix<f64>, s: f64) -> Result<f64> {
    let n = c.nrows();
    let gram = c.transpose() * c;
    let ct = c.transpose();
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut weight = 1.0;
    let mut sum = 0.0;
    for _ in 0..SERIES_MAX_TERMS {
        let term = weight * gram.dot(&power.transpose());
        sum += term;
        if term.abs() * s / (1.0 - s) <= SERIES_REL_TOL * sum.abs() || sum == 0.0 {
            return Ok(sum);
        }
        power = c * power * &ct;
        weight *= s;
    }
    Err(Error::SeriesDiverged(SERIES_MAX_TERMS))
}

/// Dense evaluation of the floor: builds `C = C' (x) I_M`,
/// `F = s (C (x) C)` and solves `(I - F) x = vec(I)` directly.
/// Only for tiny networks.
pub fn msd_floor_oracle(ctx: &TheoryContext) -> Result<f64> {
    let n = ctx.node_count();
    let size = n * ctx.taps;
    if size > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            size,
            limit: ORACLE_LIMIT,
        });
    }
    let big_c = ctx
        .cmat
        .coefficients()
        .kronecker(&DMatrix::<f64>::identity(ctx.taps, ctx.taps));
    let f = big_c.kronecker(&big_c) * ctx.contraction();
    let system = DMatrix::<f64>::identity(size * size, size * size) - f;
    let q = DVector::from_column_slice(DMatrix::<f64>::identity(size, size).as_slice());
    let x = system
        .lu()
        .solve(&q)
        .ok_or_else(|| Error::InvalidArgument("I - F is singular".into()))?;
    let gram = big_c.transpose() * &big_c;
    let weight = DVector::from_column_slice(gram.as_slice());
    Ok(ctx.prefactor() * weight.dot(&x))
}

/// Traces of the steady-state cross-moments between node pairs with
/// overlapping neighborhoods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimates {
    /// `E[sgn(w_i)^T (w0 - w_m)]`.
    pub tr_theta: f64,
    /// `E[sgn(w_i)^T sgn(w_m)]`.
    pub tr_psi: f64,
    pub sample_count: usize,
    pub se_theta: f64,
    pub se_psi: f64,
    /// Estimates restricted to `i = m`.
    pub self_pair: [f64; 2],
    /// Estimates restricted to `i != m`; equal to `self_pair` on one node.
    pub cross_pair: [f64; 2],
    /// Whether self and cross estimates agree within three standard errors.
    pub consistent: bool,
}

/// Weight snapshots of one pilot run: each entry holds all node estimates,
/// node-major (`N * M`).
pub type RunSnapshots = Vec<Vec<f64>>;

pub fn estimate_moments(
    runs: &[RunSnapshots],
    w0: &[f64],
    topology: &Topology,
) -> Result<MomentEstimates> {
    let n = topology.node_count();
    let m = w0.len();
    if runs.is_empty() || runs.iter().any(|r| r.is_empty()) {
        return Err(Error::BadEstimate(
            "every pilot run needs a snapshot".into(),
        ));
    }
    if runs.len() < 30 {
        log::warn!("moment estimates from only {} runs", runs.len());
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |k| (i, k)))
        .filter(|&(i, k)| topology.neighborhoods_overlap(i, k))
        .collect();

    // per run: [theta, psi, theta_self, psi_self, theta_cross, psi_cross]
    let mut per_run = Vec::with_capacity(runs.len());
    for snaps in runs {
        let mut acc = [0.0; 6];
        let mut cross_pairs = 0usize;
        for flat in snaps {
            if flat.len() != n * m {
                return Err(Error::BadEstimate(format!(
                    "snapshot has {} entries, expected {}",
                    flat.len(),
                    n * m
                )));
            }
            let signs: Vec<f64> = flat.iter().map(|&x| sgn(x)).collect();
            let dev: Vec<f64> = flat
                .chunks_exact(m)
                .flat_map(|wk| w0.iter().zip(wk).map(|(a, b)| a - b))
                .collect();
            cross_pairs = 0;
            let mut snap = [0.0; 6];
            for &(i, k) in &pairs {
                let si = &signs[i * m..(i + 1) * m];
                let th: f64 = si
                    .iter()
                    .zip(&dev[k * m..(k + 1) * m])
                    .map(|(a, b)| a * b)
                    .sum();
                let ps: f64 = si
                    .iter()
                    .zip(&signs[k * m..(k + 1) * m])
                    .map(|(a, b)| a * b)
                    .sum();
                snap[0] += th;
                snap[1] += ps;
                if i == k {
                    snap[2] += th;
                    snap[3] += ps;
                } else {
                    snap[4] += th;
                    snap[5] += ps;
                    cross_pairs += 1;
                }
            }
            let counts = [pairs.len(), pairs.len(), n, n, cross_pairs, cross_pairs];
            for j in 0..6 {
                if counts[j] > 0 {
                    acc[j] += snap[j] / counts[j] as f64;
                }
            }
        }
        let per_snap = 1.0 / snaps.len() as f64;
        let mut row = acc.map(|a| a * per_snap);
        if cross_pairs == 0 {
            row[4] = row[2];
            row[5] = row[3];
        }
        per_run.push(row);
    }

    let stats: Vec<(f64, f64)> = (0..6)
        .map(|j| mean_and_se(per_run.iter().map(|r| r[j])))
        .collect();
    let consistent = (0..2).all(|j| {
        let (a, sa) = stats[2 + j];
        let (b, sb) = stats[4 + j];
        let spread = 3.0 * (sa * sa + sb * sb).sqrt();
        (a - b).abs() <= spread.max(1e-12 * a.abs().max(b.abs()))
    });
    if !consistent {
        log::warn!(
            "self-pair and cross-pair moments disagree beyond 3 standard errors; \
             the equal-moment assumption is weak on this network"
        );
    }
    Ok(MomentEstimates {
        tr_theta: stats[0].0,
        tr_psi: stats[1].0,
        sample_count: runs.len(),
        se_theta: stats[0].1,
        se_psi: stats[1].1,
        self_pair: [stats[2].0, stats[3].0],
        cross_pair: [stats[4].0, stats[5].0],
        consistent,
    })
}

fn mean_and_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical `alpha'` and `beta'` of the fully sparsity-aware network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomogeneousCoefficients {
    pub alpha: f64,
    pub beta: f64,
}

pub fn estimate_homogeneous_coefficients(
    runs: &[RunSnapshots],
    w0: &[f64],
    cmat: &CombinationMatrix,
    mu: f64,
    sigma_u_sq: f64,
) -> Result<HomogeneousCoefficients> {
    let n = cmat.node_count();
    let m = w0.len();
    let c = cmat.coefficients();
    let b = c * c.transpose();
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut samples = 0usize;
    for flat in runs.iter().flatten() {
        if flat.len() != n * m {
            return Err(Error::BadEstimate("snapshot size mismatch".into()));
        }
        let signs: Vec<f64> = flat.iter().map(|&x| sgn(x)).collect();
        let dev: Vec<f64> = flat
            .chunks_exact(m)
            .flat_map(|wk| w0.iter().zip(wk).map(|(a, b)| a - b))
            .collect();
        let (mut sa, mut sb) = (0.0, 0.0);
        for i in 0..n {
            let si = &signs[i * m..(i + 1) * m];
            for j in 0..n {
                let bij = b[(i, j)];
                if bij == 0.0 {
                    continue;
                }
                let dj = &dev[j * m..(j + 1) * m];
                let sj = &signs[j * m..(j + 1) * m];
                sa += bij * si.iter().zip(dj).map(|(x, y)| x * y).sum::<f64>();
                sb += bij * si.iter().zip(sj).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        alpha += sa;
        beta += sb;
        samples += 1;
    }
    if samples == 0 {
        return Err(Error::BadEstimate("no snapshots".into()));
    }
    let scale = 1.0 / samples as f64;
    Ok(HomogeneousCoefficients {
        alpha: -2.0 * mu * (1.0 - mu * sigma_u_sq) * alpha * scale,
        beta: mu * mu * beta * scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Optimum {
    pub rho_opt: f64,
    pub phi_min: f64,
}

/// Optimum of `phi(rho) = -alpha rho + beta rho^2` restricted to `rho >= 0`,
/// with the minimum reported per node (divided by `n`).
pub fn rho_opt_homogeneous(alpha: f64, beta: f64, n: usize) -> Result<Optimum> {
    if !(beta > 0.0) {
        return Err(Error::BadEstimate(format!(
            "beta' must be positive, got {beta}"
        )));
    }
    let rho_opt = (alpha / (2.0 * beta)).max(0.0);
    let phi_min = if rho_opt > 0.0 {
        -(alpha * alpha) / (4.0 * n as f64 * beta)
    } else {
        0.0
    };
    Ok(Optimum { rho_opt, phi_min })
}

/// Moment inputs of the heterogeneous formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeterogeneousParams {
    pub tr_theta: f64,
    pub tr_psi: f64,
    pub mu: f64,
    pub sigma_u_sq: f64,
    pub n: usize,
}

impl HeterogeneousParams {
    pub fn from_moments(m: &MomentEstimates, mu: f64, sigma_u_sq: f64, n: usize) -> Self {
        HeterogeneousParams {
            tr_theta: m.tr_theta,
            tr_psi: m.tr_psi,
            mu,
            sigma_u_sq,
            n,
        }
    }

    fn leak(&self) -> f64 {
        1.0 - self.mu * self.sigma_u_sq
    }

    /// `(a, b)` with `phi(rho) = -a rho + b rho^2` for `ns` aware nodes.
    pub fn phi_coefficients(&self, ns: usize) -> (f64, f64) {
        let n = self.n as f64;
        let ns = ns as f64;
        let a = -2.0 * self.mu * self.leak() * self.tr_theta * ns / n;
        let b = self.mu * self.mu * self.tr_psi * ns * ns / (n * n);
        (a, b)
    }

    /// `phi(rho) = (beta_1 - alpha_1) / N`.
    pub fn phi(&self, ns: usize, rho: f64) -> f64 {
        let n = self.n as f64;
        let nsf = ns as f64;
        let alpha1 = -2.0 * rho * self.mu * self.leak() * self.tr_theta * nsf;
        let beta1 = self.mu * self.mu * rho * rho * self.tr_psi * nsf * nsf / n;
        (beta1 - alpha1) / n
    }
}

/// Optimal coefficient for `ns` aware nodes and the attained minimum of
/// `phi`, which does not depend on `ns`.
pub fn rho_opt_heterogeneous(p: &HeterogeneousParams, ns: usize) -> Result<Optimum> {
    if ns == 0 {
        return Err(Error::InvalidArgument(
            "no sparsity-aware nodes: phi vanishes identically".into(),
        ));
    }
    if !(p.tr_psi > 0.0) {
        return Err(Error::BadEstimate(format!(
            "Tr[psi] must be positive, got {}",
            p.tr_psi
        )));
    }
    let rho_opt = (-(p.leak() * p.tr_theta * p.n as f64) / (p.mu * p.tr_psi * ns as f64)).max(0.0);
    let phi_min = if rho_opt > 0.0 {
        -(p.leak() * p.leak() * p.tr_theta * p.tr_theta) / p.tr_psi
    } else {
        0.0
    };
    Ok(Optimum { rho_opt, phi_min })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiPoint {
    pub rho: f64,
    pub phi: f64,
}

pub fn phi_curve(p: &HeterogeneousParams, ns: usize, rho_grid: &[f64]) -> Result<Vec<PhiPoint>> {
    if rho_grid.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::InvalidArgument(
            "rho grid must be non-negative".into(),
        ));
    }
    Ok(rho_grid
        .iter()
        .map(|&rho| PhiPoint {
            rho,
            phi: p.phi(ns, rho),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Homogeneous,
    Heterogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub msd_floor: f64,
    /// `(a, b)` with `phi(rho) = -a rho + b rho^2`.
    pub phi_coefficients: [f64; 2],
    pub rho_opt: f64,
    /// `rho_opt` expressed as the per-iteration attraction of the simulator.
    pub rho_opt_simulation: f64,
    pub phi_min: f64,
    pub predicted_min_msd: f64,
    pub regime: Regime,
    pub ns: usize,
}

impl TheoryReport {
    pub fn heterogeneous(msd_floor: f64, p: &HeterogeneousParams, ns: usize) -> Result<Self> {
        let opt = rho_opt_heterogeneous(p, ns)?;
        let (a, b) = p.phi_coefficients(ns);
        Ok(TheoryReport {
            msd_floor,
            phi_coefficients: [a, b],
            rho_opt: opt.rho_opt,
            rho_opt_simulation: opt.rho_opt * p.mu,
            phi_min: opt.phi_min,
            predicted_min_msd: msd_floor + opt.phi_min,
            regime: if ns == p.n {
                Regime::Homogeneous
            } else {
                Regime::Heterogeneous
            },
            ns,
        })
    }

    pub fn homogeneous(
        msd_floor: f64,
        coeffs: HomogeneousCoefficients,
        n: usize,
        mu: f64,
    ) -> Result<Self> {
        let opt = rho_opt_homogeneous(coeffs.alpha, coeffs.beta, n)?;
        let nf = n as f64;
        Ok(TheoryReport {
            msd_floor,
            phi_coefficients: [coeffs.alpha / nf, coeffs.beta / nf],
            rho_opt: opt.rho_opt,
            rho_opt_simulation: opt.rho_opt * mu,
            phi_min: opt.phi_min,
            predicted_min_msd: msd_floor + opt.phi_min,
            regime: Regime::Homogeneous,
            ns: n,
        })
    }
}

/// Predicted steady-state network MSD for a simulated `(N_s, rho)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyStatePredictor {
    pub msd_floor: f64,
    pub params: HeterogeneousParams,
}

impl SteadyStatePredictor {
    /// `rho_sim` is the per-iteration attraction used by the simulator.
    pub fn predict(&self, ns: usize, rho_sim: f64) -> f64 {
        if ns == 0 || rho_sim == 0.0 {
            return self.msd_floor;
        }
        self.msd_floor + self.params.phi(ns, rho_sim / self.params.mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_metropolis, build_uniform, generate_geometric_topology, Topology};

    fn ctx(cmat: CombinationMatrix, taps: usize, sigma_v_sq: f64) -> TheoryContext {
        TheoryContext::new(cmat, taps, 6e-3, 1.0, sigma_v_sq).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn single_node_floor_is_classical_lms() {
        let cmat = build_metropolis(&Topology::complete(1).unwrap());
        let c = ctx(cmat, 128, 1e-4);
        let want = 6e-3 * 1e-4 * 128.0 / (2.0 - 6e-3);
        let got = msd_floor_structured(&c).unwrap();
        assert!(rel(got, want) < 1e-12);
        assert!((got - 3.85e-5).abs() < 5e-8);
        let series = msd_floor_with(&c, FloorMethod::Series).unwrap();
        assert!(rel(series, want) < 1e-12);
    }

    #[test]
    fn two_node_floor_keeps_only_consensus_mode() {
        let cmat = build_metropolis(&Topology::complete(2).unwrap());
        let c = ctx(cmat, 4, 1e-3);
        let s = c.contraction();
        let want = (6e-3f64).powi(2) * 1e-3 * 4.0 / 2.0 / (1.0 - s);
        assert!(rel(msd_floor_structured(&c).unwrap(), want) < 1e-12);
    }

    #[test]
    fn noiseless_floor_is_zero() {
        let t = generate_geometric_topology(8, 0.5, 1).unwrap();
        for cmat in [build_metropolis(&t), build_uniform(&t)] {
            let c = ctx(cmat, 3, 0.0);
            assert_eq!(msd_floor_structured(&c).unwrap(), 0.0);
        }
        let small = ctx(build_metropolis(&Topology::complete(2).unwrap()), 2, 0.0);
        assert_eq!(msd_floor_oracle(&small).unwrap(), 0.0);
    }

    #[test]
    fn oracle_scalar_case() {
        let cmat = build_metropolis(&Topology::complete(1).unwrap());
        let c = ctx(cmat, 1, 1e-2);
        let s = c.contraction();
        let want = (6e-3f64).powi(2) * 1e-2 / (1.0 - s);
        assert!(rel(msd_floor_oracle(&c).unwrap(), want) < 1e-12);
    }

    #[test]
    fn oracle_matches_structured_on_pair() {
        let cmat = build_metropolis(&Topology::complete(2).unwrap());
        let c = ctx(cmat, 2, 1e-3);
        let a = msd_floor_oracle(&c).unwrap();
        let b = msd_floor_structured(&c).unwrap();
        assert!(rel(a, b) < 1e-10);
    }

    #[test]
    fn eigen_and_series_agree_on_metropolis() {
        let t = generate_geometric_topology(20, 0.35, 4).unwrap();
        let c = ctx(build_metropolis(&t), 16, 1e-4);
        let e = msd_floor_with(&c, FloorMethod::Eigen).unwrap();
        let s = msd_floor_with(&c, FloorMethod::Series).unwrap();
        assert!(rel(e, s) < 1e-10, "{e} vs {s}");
    }

    #[test]
    fn eigen_rejects_asymmetric() {
        let c = ctx(build_uniform(&Topology::path(3).unwrap()), 2, 1e-3);
        assert!(msd_floor_with(&c, FloorMethod::Eigen).is_err());
        assert!(msd_floor_structured(&c).is_ok());
    }

    #[test]
    fn oracle_size_guard() {
        let c = ctx(build_metropolis(&Topology::path(3).unwrap()), 5, 1e-3);
        assert!(matches!(
            msd_floor_oracle(&c),
            Err(Error::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn stability_violation() {
        let cmat = build_metropolis(&Topology::complete(1).unwrap());
        assert!(matches!(
            TheoryContext::new(cmat.clone(), 2, 2.5, 1.0, 1e-3),
            Err(Error::Unstable { .. })
        ));
        assert!(TheoryContext::new(cmat, 2, 0.0, 1.0, 1e-3).is_err());
    }

    #[test]
    fn metropolis_spectrum_has_perron_root() {
        let t = generate_geometric_topology(15, 0.4, 6).unwrap();
        let cmat = build_metropolis(&t);
        let eig = SymmetricEigen::new(cmat.coefficients().clone()).eigenvalues;
        assert!(eig.iter().all(|l| l.abs() <= 1.0 + 1e-12));
        assert!(eig.iter().any(|l| (l - 1.0).abs() < 1e-12));
    }

    #[test]
    fn moments_at_exact_solution() {
        let t = Topology::path(3).unwrap();
        let w0 = vec![0.0, 2.0, -1.0, 0.0];
        let snap: Vec<f64> = w0.iter().cycle().take(12).copied().collect();
        let m = estimate_moments(&[vec![snap]], &w0, &t).unwrap();
        assert_eq!(m.tr_theta, 0.0);
        assert_eq!(m.tr_psi, 2.0);
        assert_eq!(m.sample_count, 1);
    }

    #[test]
    fn moments_on_constant_vectors() {
        let t = Topology::ring(5).unwrap();
        let delta = 0.125;
        let x = [0.5, 1.0, 2.0];
        let w0: Vec<f64> = x.iter().map(|v| v + delta).collect();
        let snap: Vec<f64> = x.iter().cycle().take(15).copied().collect();
        let runs = vec![vec![snap.clone(), snap.clone()], vec![snap]];
        let m = estimate_moments(&runs, &w0, &t).unwrap();
        assert!((m.tr_theta - 3.0 * delta).abs() < 1e-15);
        assert_eq!(m.tr_psi, 3.0);
        assert_eq!(m.se_theta, 0.0);
        assert!(m.consistent);
    }

    #[test]
    fn homogeneous_optimum_cases() {
        let o = rho_opt_homogeneous(-1.0, 2.0, 5).unwrap();
        assert_eq!(
            o,
            Optimum {
                rho_opt: 0.0,
                phi_min: 0.0
            }
        );
        let o = rho_opt_homogeneous(2.0, 1.0, 1).unwrap();
        assert_eq!(
            o,
            Optimum {
                rho_opt: 1.0,
                phi_min: -1.0
            }
        );
        let o = rho_opt_homogeneous(4e-6, 0.1, 30).unwrap();
        assert!(rel(o.rho_opt, 2e-5) < 1e-12);
        assert!(rel(o.phi_min, -(4e-6f64).powi(2) / 12.0) < 1e-12);
        assert!((o.phi_min + 1.333e-12).abs() < 1e-15);
        assert!(rho_opt_homogeneous(1.0, 0.0, 3).is_err());
    }

    fn params(theta: f64, psi: f64) -> HeterogeneousParams {
        HeterogeneousParams {
            tr_theta: theta,
            tr_psi: psi,
            mu: 6e-3,
            sigma_u_sq: 1.0,
            n: 30,
        }
    }

    #[test]
    fn heterogeneous_worked_example() {
        let o = rho_opt_heterogeneous(&params(-0.01, 2.0), 10).unwrap();
        assert!(rel(o.rho_opt, 0.994 * 0.01 * 30.0 / 0.12) < 1e-12);
        assert!(rel(o.rho_opt, 2.485) < 1e-12);
        assert!(rel(o.phi_min, -(0.994f64 * 0.01).powi(2) / 2.0) < 1e-12);
    }

    #[test]
    fn heterogeneous_non_sparse_and_rejections() {
        let o = rho_opt_heterogeneous(&params(0.3, 2.0), 10).unwrap();
        assert_eq!(
            o,
            Optimum {
                rho_opt: 0.0,
                phi_min: 0.0
            }
        );
        assert!(rho_opt_heterogeneous(&params(-0.3, 2.0), 0).is_err());
        assert!(rho_opt_heterogeneous(&params(-0.3, 0.0), 3).is_err());
    }

    #[test]
    fn halving_aware_nodes_doubles_rho() {
        let p = params(-0.02, 3.0);
        let a = rho_opt_heterogeneous(&p, 20).unwrap();
        let b = rho_opt_heterogeneous(&p, 10).unwrap();
        assert_eq!(b.rho_opt, 2.0 * a.rho_opt);
        assert_eq!(a.phi_min.to_bits(), b.phi_min.to_bits());
    }

    #[test]
    fn phi_curve_shape() {
        let p = params(-0.02, 3.0);
        let ns = 12;
        let o = rho_opt_heterogeneous(&p, ns).unwrap();
        assert_eq!(p.phi(ns, 0.0), 0.0);
        assert!(p.phi(ns, 2.0 * o.rho_opt).abs() <= 1e-12 * o.phi_min.abs());
        assert!(rel(p.phi(ns, o.rho_opt), o.phi_min) < 1e-12);

        // grid-search oracle around the vertex
        let step = o.rho_opt / 500.0;
        let grid: Vec<f64> = (0..=1000).map(|i| i as f64 * step).collect();
        let curve = phi_curve(&p, ns, &grid).unwrap();
        let best = curve.iter().min_by(|a, b| a.phi.total_cmp(&b.phi)).unwrap();
        assert!((best.rho - o.rho_opt).abs() <= step);
        assert!(phi_curve(&p, ns, &[-1.0]).is_err());
    }

    #[test]
    fn predictor_converts_simulation_units() {
        let p = params(-0.02, 3.0);
        let pred = SteadyStatePredictor {
            msd_floor: 1e-6,
            params: p,
        };
        assert_eq!(pred.predict(0, 1e-5), 1e-6);
        assert_eq!(pred.predict(10, 0.0), 1e-6);
        let o = rho_opt_heterogeneous(&p, 10).unwrap();
        let at_opt = pred.predict(10, o.rho_opt * p.mu);
        assert!(rel(at_opt, 1e-6 + o.phi_min) < 1e-9);
    }

    #[test]
    fn report_fields() {
        let p = params(-0.02, 3.0);
        let r = TheoryReport::heterogeneous(2e-6, &p, 15).unwrap();
        assert_eq!(r.regime, Regime::Heterogeneous);
        assert!(r.predicted_min_msd <= r.msd_floor);
        let [a, b] = r.phi_coefficients;
        assert!(rel(a * a / (4.0 * b), -r.phi_min) < 1e-12);
        assert!(rel(r.rho_opt_simulation, r.rho_opt * 6e-3) < 1e-15);
        let full = TheoryReport::heterogeneous(2e-6, &p, 30).unwrap();
        assert_eq!(full.regime, Regime::Homogeneous);
    }
}
