//! Monte Carlo simulator of pilot reception and downlink transmission.
//!
//! Trials are split into [`JACKKNIFE_GROUPS`] contiguous groups. Each group is
//! summed sequentially and groups are combined pairwise, so estimates are
//! bit-identical for any thread count. Both oscillator branches are evaluated
//! on the same draws; they differ only in how phase increments are shared.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LargeScaleMap;
use crate::performance::{FrameConfig, HardwareProfile, LoArchitecture, MrtEvaluator};
use crate::pilots::PilotBook;
use crate::rng::{stream, Domain};

pub const JACKKNIFE_GROUPS: usize = 50;
pub const MIN_TRIALS: usize = 1000;

fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One realization of everything random in a coherence block.
#[derive(Debug, Clone)]
pub struct TrialDraw {
    cells: usize,
    ues: usize,
    /// `h_jlk`, laid out `(j * L + l) * K + k`.
    pub channels: Vec<DVector<Complex64>>,
    /// Standard normal phase increments per cell, `times × N`, row `t - 1`.
    pub increments: Vec<DMatrix<f64>>,
    /// Unit-variance UL distortion draws per cell, `B × N`.
    pub ul_distortion: Vec<DMatrix<Complex64>>,
    /// Unit-variance BS receiver noise per cell, `B × N`.
    pub ul_noise: Vec<DMatrix<Complex64>>,
}

/// Draws channels, phase increments and pilot-phase noise in a fixed order.
pub fn draw_trial<R: Rng + ?Sized>(map: &LargeScaleMap, frame: &FrameConfig, rng: &mut R) -> TrialDraw {
    let cells = map.num_cells();
    let ues = map.ues_per_cell();
    let n_ant = map.num_antennas();
    let b = frame.pilot_symbols;
    let times = frame.pilot_symbols + frame.dl_symbols;
    let mut channels = Vec::with_capacity(cells * cells * ues);
    for j in 0..cells {
        for l in 0..cells {
            for k in 0..ues {
                let row = map.lambda_row(j, l, k);
                channels.push(DVector::from_iterator(n_ant, row.iter().map(|lam| cn01(rng) * lam.sqrt())));
            }
        }
    }
    let increments = (0..cells)
        .map(|_| DMatrix::from_fn(times, n_ant, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let ul_distortion = (0..cells).map(|_| DMatrix::from_fn(b, n_ant, |_, _| cn01(rng))).collect();
    let ul_noise = (0..cells).map(|_| DMatrix::from_fn(b, n_ant, |_, _| cn01(rng))).collect();
    TrialDraw { cells, ues, channels, increments, ul_distortion, ul_noise }
}

/// [`draw_trial`] on the keystream of trial `index`.
pub fn draw_indexed_trial(map: &LargeScaleMap, frame: &FrameConfig, seed: u64, index: u64) -> TrialDraw {
    draw_trial(map, frame, &mut stream(seed, Domain::Trial, index))
}

impl TrialDraw {
    pub fn channel(&self, j: usize, l: usize, k: usize) -> &DVector<Complex64> {
        &self.channels[(j * self.cells + l) * self.ues + k]
    }

    /// Wiener trajectories `φ_jn(t)` of BS `cell`, `times × N`. CLO reuses the
    /// first antenna's increments for every antenna.
    pub fn phases(&self, cell: usize, lo: LoArchitecture, delta: f64) -> DMatrix<f64> {
        let inc = &self.increments[cell];
        let (times, n_ant) = inc.shape();
        let scale = delta.sqrt();
        let mut out = DMatrix::zeros(times, n_ant);
        for n in 0..n_ant {
            let src = match lo {
                LoArchitecture::Clo => 0,
                LoArchitecture::Slo => n,
            };
            let mut acc = 0.0;
            for t in 0..times {
                acc += scale * inc[(t, src)];
                out[(t, n)] = acc;
            }
        }
        out
    }
}

/// Received pilot signal of every BS, `B × N` with row `b - 1` holding time `b`.
pub fn simulate_pilot_phase(
    trial: &TrialDraw,
    book: &PilotBook,
    profile: &HardwareProfile,
) -> Vec<DMatrix<Complex64>> {
    (0..trial.cells)
        .map(|j| {
            let phases = trial.phases(j, profile.lo, profile.delta);
            pilot_observation(trial, book, profile, j, &phases)
        })
        .collect()
}

fn pilot_observation(
    trial: &TrialDraw,
    book: &PilotBook,
    profile: &HardwareProfile,
    j: usize,
    phases: &DMatrix<f64>,
) -> DMatrix<Complex64> {
    let b_len = book.pilot_len();
    let n_ant = trial.increments[j].ncols();
    let kul2 = profile.kappa_ul * profile.kappa_ul;
    let sigma = profile.sigma2_bs.sqrt();
    let mut y = DMatrix::<Complex64>::zeros(b_len, n_ant);
    for n in 0..n_ant {
        let mut received_power = 0.0;
        for l in 0..trial.cells {
            for k in 0..trial.ues {
                received_power += book.power(l, k) * trial.channel(j, l, k)[n].norm_sqr();
            }
        }
        let distortion = (kul2 * received_power).sqrt();
        for b in 0..b_len {
            let mut sum = Complex64::new(0.0, 0.0);
            for l in 0..trial.cells {
                for k in 0..trial.ues {
                    sum += trial.channel(j, l, k)[n] * book.sequence(l, k)[b];
                }
            }
            y[(b, n)] = Complex64::from_polar(1.0, phases[(b, n)]) * sum
                + trial.ul_distortion[j][(b, n)] * distortion
                + trial.ul_noise[j][(b, n)] * sigma;
        }
    }
    y
}

/// Maps the own-cell estimates `ĥ_jj1 … ĥ_jjK` of one BS to precoders.
pub trait Precoder: Sync {
    fn name(&self) -> &'static str;
    fn precode(&self, estimates: &[DVector<Complex64>]) -> Vec<DVector<Complex64>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Mrt;

impl Precoder for Mrt {
    fn name(&self) -> &'static str {
        "mrt"
    }

    fn precode(&self, estimates: &[DVector<Complex64>]) -> Vec<DVector<Complex64>> {
        estimates.to_vec()
    }
}

/// `Ĥ (Ĥ^H Ĥ)^(-1)`; zero precoders when the Gram matrix is singular.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroForcing;

impl Precoder for ZeroForcing {
    fn name(&self) -> &'static str {
        "zf"
    }

    fn precode(&self, estimates: &[DVector<Complex64>]) -> Vec<DVector<Complex64>> {
        let h = DMatrix::from_columns(estimates);
        match (h.adjoint() * &h).try_inverse() {
            Some(inv) => {
                let w = h * inv;
                (0..estimates.len()).map(|k| w.column(k).into_owned()).collect()
            }
            None => estimates.iter().map(|e| DVector::zeros(e.len())).collect(),
        }
    }
}

/// Received samples and the data symbols behind them, laid out `j * K + k`.
#[derive(Debug, Clone)]
pub struct DownlinkSample {
    pub received: Vec<Complex64>,
    pub symbols: Vec<Complex64>,
}

/// Received DL samples `z_jk(t)` for unit-free precoders `w_lm(t)`.
///
/// The effective channel `D_φl(t) h_ljk` enters conjugated, which keeps the
/// reciprocal TDD link coherent with precoders built from UL estimates.
/// Data symbols are complex Gaussian with power `dl_powers`; distortion at
/// antenna `n` of BS `l` has variance `κ²_DL Σ_m p_lm |w_lm^(n)|²`.
pub fn simulate_downlink<R: Rng + ?Sized>(
    trial: &TrialDraw,
    precoders: &[DVector<Complex64>],
    dl_powers: &[f64],
    profile: &HardwareProfile,
    t: i64,
    rng: &mut R,
) -> DownlinkSample {
    let cells = trial.cells;
    let ues = trial.ues;
    let kdl2 = profile.kappa_dl * profile.kappa_dl;
    let symbols: Vec<Complex64> = dl_powers.iter().map(|p| cn01(rng) * p.sqrt()).collect();
    let mut transmitted = Vec::with_capacity(cells);
    let mut distortion = Vec::with_capacity(cells);
    for l in 0..cells {
        let n_ant = trial.increments[l].ncols();
        let mut x = DVector::<Complex64>::zeros(n_ant);
        let mut var = vec![0.0; n_ant];
        for m in 0..ues {
            let w = &precoders[l * ues + m];
            x.axpy(symbols[l * ues + m], w, Complex64::new(1.0, 0.0));
            for n in 0..n_ant {
                var[n] += kdl2 * dl_powers[l * ues + m] * w[n].norm_sqr();
            }
        }
        transmitted.push(x);
        distortion.push(DVector::from_iterator(n_ant, var.iter().map(|v| cn01(rng) * v.sqrt())));
    }
    let noise = profile.sigma2_ue.sqrt();
    let mut received = Vec::with_capacity(cells * ues);
    for j in 0..cells {
        for k in 0..ues {
            let mut z = cn01(rng) * noise;
            for l in 0..cells {
                let phases = trial.phases(l, profile.lo, profile.delta);
                let h = trial.channel(l, j, k);
                for n in 0..h.len() {
                    let eff = Complex64::from_polar(1.0, phases[((t - 1) as usize, n)]) * h[n];
                    z += eff.conj() * transmitted[l][n] + h[n].conj() * distortion[l][n];
                }
            }
            received.push(z);
        }
    }
    DownlinkSample { received, symbols }
}

/// Expectations estimated by the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// `E{h_jjk^H(t) ω_jk(t)}`.
    Signal,
    /// `E‖ω_lm(t)‖²`.
    Norm,
    /// `E|h_ljk^H(t) ω_lm(t)|²`.
    SecondMoment,
    /// `Σ_n E|h_ljk^(n)|² |ω_lm^(n)(t)|²`.
    PerAntenna,
    /// `SecondMoment + κ²_DL PerAntenna`.
    Interference,
}

impl Expectation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Signal => "signal",
            Self::Norm => "norm",
            Self::SecondMoment => "second_moment",
            Self::PerAntenna => "per_antenna",
            Self::Interference => "interference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub expectation: Expectation,
    pub l: usize,
    pub m: usize,
    pub j: usize,
    pub k: usize,
    pub t: i64,
    pub lo: LoArchitecture,
    pub closed_form: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleReport {
    pub trials: usize,
    pub entries: Vec<OracleEntry>,
}

impl OracleReport {
    /// Share of entries with `|z| ≤ bound`.
    pub fn fraction_within(&self, bound: f64) -> f64 {
        if self.entries.is_empty() {
            return 1.0;
        }
        self.entries.iter().filter(|e| e.z.abs() <= bound).count() as f64 / self.entries.len() as f64
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_oracle_csv(writer, &self.entries)
    }
}

pub const ORACLE_CSV_HEADER: [&str; 11] =
    ["expectation", "l", "m", "j", "k", "t", "lo", "closed_form", "estimate", "std_error", "z"];

pub fn write_oracle_csv<W: Write>(writer: W, entries: &[OracleEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ORACLE_CSV_HEADER)?;
    for e in entries {
        w.write_record([
            e.expectation.as_str().to_string(),
            e.l.to_string(),
            e.m.to_string(),
            e.j.to_string(),
            e.k.to_string(),
            e.t.to_string(),
            e.lo.to_string(),
            e.closed_form.to_string(),
            e.estimate.to_string(),
            e.std_error.to_string(),
            e.z.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sum of a slice of equal-length vectors, split recursively in halves.
fn pairwise_sum(parts: &[Vec<f64>]) -> Vec<f64> {
    match parts.len() {
        0 => Vec::new(),
        1 => parts[0].clone(),
        n => {
            let (a, b) = parts.split_at(n / 2);
            let mut left = pairwise_sum(a);
            for (x, y) in left.iter_mut().zip(pairwise_sum(b)) {
                *x += y;
            }
            left
        }
    }
}

/// Grouped jackknife of per-trial sums. Returns the overall means and their
/// standard errors for each accumulated quantity.
pub struct GroupedMeans {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Runs `trials` evaluations of `per_trial` (which writes one value per slot)
/// and returns jackknife means and standard errors.
pub fn grouped_jackknife<F>(trials: usize, slots: usize, per_trial: F) -> GroupedMeans
where
    F: Fn(u64, &mut [f64]) + Sync,
{
    let groups = JACKKNIFE_GROUPS.min(trials.max(1));
    let bounds: Vec<(usize, usize)> = (0..groups)
        .map(|g| (g * trials / groups, (g + 1) * trials / groups))
        .collect();
    let sums: Vec<Vec<f64>> = bounds
        .par_iter()
        .map(|&(start, end)| {
            let mut acc = vec![0.0; slots];
            let mut buf = vec![0.0; slots];
            for i in start..end {
                buf.iter_mut().for_each(|v| *v = 0.0);
                per_trial(i as u64, &mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += b;
                }
            }
            acc
        })
        .collect();
    let total = pairwise_sum(&sums);
    let n = trials as f64;
    let mean: Vec<f64> = total.iter().map(|s| s / n).collect();
    let g = groups as f64;
    let mut std_error = vec![0.0; slots];
    if groups > 1 {
        for s in 0..slots {
            let mut acc = 0.0;
            for (gi, &(start, end)) in bounds.iter().enumerate() {
                let leave_out = (total[s] - sums[gi][s]) / (n - (end - start) as f64);
                acc += (leave_out - mean[s]).powi(2);
            }
            std_error[s] = ((g - 1.0) / g * acc).sqrt();
        }
    }
    GroupedMeans { mean, std_error }
}

/// Per-(l, m) estimator weights at one symbol time.
struct EstimatorPlan {
    /// `[i_t][l * K + m][g]`.
    solved: Vec<Vec<Vec<DVector<Complex64>>>>,
}

impl EstimatorPlan {
    fn new(evaluator: &MrtEvaluator, times: &[i64]) -> Result<Self> {
        let ues = evaluator.map().ues_per_cell();
        let count = evaluator.map().num_cells() * ues;
        let solved = times
            .iter()
            .map(|&t| {
                let slice = evaluator.slice(t)?;
                Ok((0..count).map(|i| slice.solved(i / ues, i % ues, ues).to_vec()).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { solved })
    }
}

const PAIR_SLOTS: usize = 5;

/// Slot layout of the per-trial accumulator for one branch.
#[derive(Clone, Copy)]
struct Layout {
    users: usize,
    times: usize,
}

impl Layout {
    // per (t, lm, jk): re, im, |a|², per-antenna, |a|² + κ² per-antenna;
    // then the norm per (t, lm)
    fn pair(&self, it: usize, lm: usize, jk: usize) -> usize {
        ((it * self.users + lm) * self.users + jk) * PAIR_SLOTS
    }

    fn norm(&self, it: usize, lm: usize) -> usize {
        self.times * self.users * self.users * PAIR_SLOTS + it * self.users + lm
    }

    fn len(&self) -> usize {
        self.times * self.users * (self.users * PAIR_SLOTS + 1)
    }
}

fn accumulate_branch(
    trial: &TrialDraw,
    map: &LargeScaleMap,
    book: &PilotBook,
    profile: &HardwareProfile,
    plan: &EstimatorPlan,
    times: &[i64],
    precoder: &dyn Precoder,
    layout: Layout,
    out: &mut [f64],
) {
    let cells = map.num_cells();
    let ues = map.ues_per_cell();
    let users = cells * ues;
    let kdl2 = profile.kappa_dl * profile.kappa_dl;
    let phases: Vec<DMatrix<f64>> = (0..cells).map(|l| trial.phases(l, profile.lo, profile.delta)).collect();
    let psi: Vec<DMatrix<Complex64>> =
        (0..cells).map(|l| pilot_observation(trial, book, profile, l, &phases[l])).collect();
    for (it, &t) in times.iter().enumerate() {
        let row = (t - 1) as usize;
        let mut omegas = Vec::with_capacity(users);
        for l in 0..cells {
            let estimates: Vec<DVector<Complex64>> = (0..ues)
                .map(|m| {
                    let lambda = map.lambda_row(l, l, m);
                    let solved = &plan.solved[it][l * ues + m];
                    DVector::from_iterator(
                        lambda.len(),
                        lambda.iter().enumerate().map(|(n, lam)| {
                            *lam * solved[map.group_of(n)].dotc(&psi[l].column(n))
                        }),
                    )
                })
                .collect();
            omegas.extend(precoder.precode(&estimates));
        }
        for l in 0..cells {
            for m in 0..ues {
                let lm = l * ues + m;
                let w = &omegas[lm];
                out[layout.norm(it, lm)] += w.norm_squared();
                for jk in 0..users {
                    let h = trial.channel(l, jk / ues, jk % ues);
                    let mut a = Complex64::new(0.0, 0.0);
                    let mut per_antenna = 0.0;
                    for n in 0..h.len() {
                        let eff = Complex64::from_polar(1.0, phases[l][(row, n)]) * h[n];
                        a += eff.conj() * w[n];
                        per_antenna += h[n].norm_sqr() * w[n].norm_sqr();
                    }
                    let base = layout.pair(it, lm, jk);
                    out[base] += a.re;
                    out[base + 1] += a.im;
                    out[base + 2] += a.norm_sqr();
                    out[base + 3] += per_antenna;
                    out[base + 4] += a.norm_sqr() + kdl2 * per_antenna;
                }
            }
        }
    }
}

/// Empirical means for all expectations of one precoder, both branches.
struct EmpiricalRun {
    layout: Layout,
    branches: Vec<LoArchitecture>,
    means: GroupedMeans,
}

#[allow(clippy::too_many_arguments)]
fn run_trials(
    map: &LargeScaleMap,
    book: &PilotBook,
    profile: &HardwareProfile,
    frame: &FrameConfig,
    times: &[i64],
    branches: &[LoArchitecture],
    trials: usize,
    seed: u64,
    precoder: &dyn Precoder,
) -> Result<EmpiricalRun> {
    for &t in times {
        frame.check_dl(t)?;
    }
    let evaluator = MrtEvaluator::new(map, book, *profile, *frame)?;
    let plan = EstimatorPlan::new(&evaluator, times)?;
    let layout = Layout { users: map.num_cells() * map.ues_per_cell(), times: times.len() };
    let span = layout.len();
    let means = grouped_jackknife(trials, span * branches.len(), |index, out| {
        let trial = draw_indexed_trial(map, frame, seed, index);
        for (bi, &lo) in branches.iter().enumerate() {
            let hw = profile.with_lo(lo);
            accumulate_branch(&trial, map, book, &hw, &plan, times, precoder, layout, &mut out[bi * span..(bi + 1) * span]);
        }
    });
    Ok(EmpiricalRun { layout, branches: branches.to_vec(), means })
}

/// Monte Carlo estimates of every expectation in the SINR with MRT, next to
/// their closed forms, for each branch in `branches`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_sinr_terms(
    map: &LargeScaleMap,
    book: &PilotBook,
    profile: &HardwareProfile,
    frame: &FrameConfig,
    times: &[i64],
    branches: &[LoArchitecture],
    trials: usize,
    seed: u64,
) -> Result<OracleReport> {
    if trials < MIN_TRIALS {
        return Err(Error::InsufficientTrials { needed: MIN_TRIALS, got: trials });
    }
    let run = run_trials(map, book, profile, frame, times, branches, trials, seed, &Mrt)?;
    let ues = map.ues_per_cell();
    let users = run.layout.users;
    let span = run.layout.len();
    let kdl2 = profile.kappa_dl * profile.kappa_dl;
    let mut entries = Vec::new();
    for (bi, &lo) in run.branches.iter().enumerate() {
        let evaluator = MrtEvaluator::new(map, book, profile.with_lo(lo), *frame)?;
        let mean = &run.means.mean[bi * span..(bi + 1) * span];
        let se = &run.means.std_error[bi * span..(bi + 1) * span];
        for (it, &t) in times.iter().enumerate() {
            let slice = evaluator.slice(t)?;
            let mut push = |expectation, lm: usize, jk: usize, closed: f64, estimate: f64, std_error: f64| {
                let diff = estimate - closed;
                let z = if std_error > 0.0 {
                    diff / std_error
                } else if diff.abs() <= 1e-12 * closed.abs().max(1e-300) {
                    0.0
                } else {
                    f64::INFINITY
                };
                entries.push(OracleEntry {
                    expectation,
                    l: lm / ues,
                    m: lm % ues,
                    j: jk / ues,
                    k: jk % ues,
                    t,
                    lo,
                    closed_form: closed,
                    estimate,
                    std_error,
                    z,
                });
            };
            for lm in 0..users {
                let ex = evaluator.expectations_at(&slice, lm / ues, lm % ues, lm / ues, lm % ues);
                let slot = run.layout.pair(it, lm, lm);
                push(Expectation::Signal, lm, lm, ex.cross_mean.re, mean[slot], se[slot]);
                let slot = run.layout.norm(it, lm);
                push(Expectation::Norm, lm, lm, ex.norm, mean[slot], se[slot]);
            }
            for lm in 0..users {
                for jk in 0..users {
                    let ex = evaluator.expectations_at(&slice, lm / ues, lm % ues, jk / ues, jk % ues);
                    let slot = run.layout.pair(it, lm, jk);
                    push(Expectation::SecondMoment, lm, jk, ex.second_moment, mean[slot + 2], se[slot + 2]);
                    push(Expectation::PerAntenna, lm, jk, ex.per_antenna, mean[slot + 3], se[slot + 3]);
                    let closed = ex.second_moment + kdl2 * ex.per_antenna;
                    push(Expectation::Interference, lm, jk, closed, mean[slot + 4], se[slot + 4]);
                }
            }
        }
    }
    Ok(OracleReport { trials, entries })
}

/// SINR from Monte Carlo expectations for an arbitrary precoder, laid out
/// `[t][j * K + k]`. The expression is invariant to precoder scaling.
#[allow(clippy::too_many_arguments)]
pub fn empirical_sinr(
    map: &LargeScaleMap,
    book: &PilotBook,
    profile: &HardwareProfile,
    frame: &FrameConfig,
    times: &[i64],
    dl_powers: &[f64],
    trials: usize,
    seed: u64,
    precoder: &dyn Precoder,
) -> Result<Vec<Vec<f64>>> {
    if trials < MIN_TRIALS {
        return Err(Error::InsufficientTrials { needed: MIN_TRIALS, got: trials });
    }
    let run = run_trials(map, book, profile, frame, times, &[profile.lo], trials, seed, precoder)?;
    let users = run.layout.users;
    let mean = &run.means.mean;
    let mut out = Vec::with_capacity(times.len());
    for it in 0..times.len() {
        let mut row = Vec::with_capacity(users);
        for jk in 0..users {
            let slot = run.layout.pair(it, jk, jk);
            let norm = mean[run.layout.norm(it, jk)];
            let signal = if norm > 0.0 {
                dl_powers[jk] * (mean[slot].powi(2) + mean[slot + 1].powi(2)) / norm
            } else {
                0.0
            };
            let mut total = 0.0;
            for lm in 0..users {
                let n_lm = mean[run.layout.norm(it, lm)];
                if n_lm > 0.0 {
                    let s = run.layout.pair(it, lm, jk);
                    total += dl_powers[lm] * mean[s + 4] / n_lm;
                }
            }
            row.push(crate::performance::sinr(signal, total, profile.sigma2_ue)?);
        }
        out.push(row);
    }
    Ok(out)
}
