//! Closed-form downlink SINR and spectral efficiency with MRT precoding.
//!
//! All Kronecker-structured traces reduce to sums of `B`-dimensional
//! quadratic forms over antenna groups. For a group `g` of BS `l` and a UE
//! `(l, m)` let `s_g = (Φ_l^(g))^(-1) D_δ(t) x̃_lm` and
//! `α_g = λ_llm^(g) λ_ljk^(g)`. With `|g|` antennas per group:
//!
//! * precoder norm: `E‖ω_lm‖² = Σ_g |g| (λ_llm^(g))² v_lm^H s_g`
//! * coherent part: `u = Σ_g |g| α_g s_g`; CLO uses `u^H (X_jk - κ²_UL p I) u`,
//!   SLO uses `|u^H v_jk|²`
//! * per-antenna part: `Σ_g |g| α_g² s_g^H Q s_g` with the branch matrix `Q`
//!
//! so the CLO double sum over antenna pairs costs `O(groups)` rather than
//! `O(N²)`. [`Evaluation::Literal`] keeps the antenna-pair double sum as a
//! cross-check.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{assemble_phi, phase_decay, PhiBlocks};
use crate::geometry::LargeScaleMap;
use crate::pilots::{all_grams, PilotBook, PilotGram};

/// Oscillator architecture at the BS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoArchitecture {
    /// One oscillator shared by all antennas of a BS.
    Clo,
    /// One oscillator per antenna.
    Slo,
}

impl LoArchitecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Clo => "clo",
            Self::Slo => "slo",
        }
    }
}

impl std::fmt::Display for LoArchitecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Transceiver impairments, in linear units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub kappa_ul: f64,
    pub kappa_dl: f64,
    /// Variance of the phase-noise increments per symbol (rad²).
    pub delta: f64,
    pub sigma2_bs: f64,
    pub sigma2_ue: f64,
    pub lo: LoArchitecture,
}

impl HardwareProfile {
    pub fn ideal(sigma2_bs: f64, sigma2_ue: f64, lo: LoArchitecture) -> Self {
        Self { kappa_ul: 0.0, kappa_dl: 0.0, delta: 0.0, sigma2_bs, sigma2_ue, lo }
    }

    pub fn with_lo(self, lo: LoArchitecture) -> Self {
        Self { lo, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.kappa_ul, self.kappa_dl, self.delta, self.sigma2_bs, self.sigma2_ue];
        if fields.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("hardware profile has invalid entries: {self:?}")));
        }
        Ok(())
    }
}

/// Coherence block layout: `T = τ_UL + B + τ_DL` symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub coherence_symbols: usize,
    pub pilot_symbols: usize,
    pub ul_symbols: usize,
    pub dl_symbols: usize,
}

impl FrameConfig {
    pub fn new(coherence_symbols: usize, pilot_symbols: usize, ul_symbols: usize, dl_symbols: usize) -> Result<Self> {
        let frame = Self { coherence_symbols, pilot_symbols, ul_symbols, dl_symbols };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pilot_symbols == 0 {
            return Err(Error::Config("need at least one pilot symbol".into()));
        }
        if self.coherence_symbols != self.ul_symbols + self.pilot_symbols + self.dl_symbols {
            return Err(Error::Config(format!(
                "T = {} but tau_ul + B + tau_dl = {}",
                self.coherence_symbols,
                self.ul_symbols + self.pilot_symbols + self.dl_symbols
            )));
        }
        Ok(())
    }

    pub fn first_dl(&self) -> i64 {
        self.pilot_symbols as i64 + 1
    }

    pub fn last_dl(&self) -> i64 {
        (self.pilot_symbols + self.dl_symbols) as i64
    }

    /// DL data symbol times `B+1 ..= B+τ_DL`.
    pub fn dl_times(&self) -> impl Iterator<Item = i64> + Clone {
        self.first_dl()..=self.last_dl()
    }

    pub fn check_dl(&self, t: i64) -> Result<()> {
        if t < self.first_dl() || t > self.last_dl() {
            return Err(Error::OutOfWindow { t, first: self.first_dl(), last: self.last_dl() });
        }
        Ok(())
    }
}

/// The three parts of `E|h_ljk^H(t) ω_lm(t)|² + κ²_DL Σ_n E|h_ljk^(n)|²|ω_lm^(n)(t)|²`,
/// together with the norm `E‖ω_lm(t)‖²` they are divided by.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InterferenceTerms {
    /// `(1 + κ²_DL) tr(Λ_ljk (…) Φ_l^(-1) (…))`.
    pub trace: f64,
    /// Coherent (pilot-contamination) part, branch dependent.
    pub coherent: f64,
    /// Per-antenna correction, branch dependent.
    pub correction: f64,
    pub norm: f64,
}

impl InterferenceTerms {
    /// Unnormalized numerator of the interference term.
    pub fn total(&self) -> f64 {
        self.trace + self.coherent + self.correction
    }

    /// Interference power per unit DL power, `total / norm`.
    pub fn normalized(&self) -> f64 {
        if self.norm > 0.0 {
            self.total() / self.norm
        } else {
            0.0
        }
    }
}

/// Closed-form expectations for one `(l, m, j, k, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectations {
    pub cross_mean: Complex64,
    pub second_moment: f64,
    pub per_antenna: f64,
    pub norm: f64,
}

/// Strategy for the antenna-pair sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Evaluation {
    /// Accumulate per antenna group (`O(groups)`).
    #[default]
    Grouped,
    /// Expand every antenna and evaluate the `O(N²)` double sum.
    Literal,
}

/// Which DL symbols are evaluated when summing rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSampling {
    #[default]
    Every,
    /// Evaluate every `stride`-th symbol (plus the last) and linearly
    /// interpolate `log2(1 + SINR)` in between. Approximate.
    Coarse { stride: usize },
}

/// Signal, interference and noise parts of `SINR_jk(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrPoint {
    pub cell: usize,
    pub ue: usize,
    pub t: i64,
    /// `p_jk |E{h^H ω}|² / E‖ω‖²`.
    pub signal: f64,
    /// `p_lm (…)/E‖ω_lm‖²` per interferer, laid out `l * K + m`.
    pub interference: Vec<f64>,
    pub terms: Vec<InterferenceTerms>,
    /// The subtracted mean-channel term; equal to `signal`.
    pub self_term: f64,
    pub noise: f64,
    pub sinr: f64,
}

impl SinrPoint {
    pub fn interference_total(&self) -> f64 {
        self.interference.iter().sum()
    }
}

/// Assembles `SINR = S / (Σ I - S + σ²)` from already normalized parts.
pub fn sinr(signal: f64, interference_total: f64, sigma2_ue: f64) -> Result<f64> {
    if signal <= 0.0 {
        return Ok(0.0);
    }
    let denom = interference_total - signal + sigma2_ue;
    if !(denom > 0.0) {
        return Err(Error::NonPositiveDenominator(denom));
    }
    Ok(signal / denom)
}

/// `R = (1/T) Σ_t log2(1 + SINR(t))` in bit/symbol.
pub fn rate(frame: &FrameConfig, sinr_per_t: &[f64]) -> f64 {
    sinr_per_t.iter().map(|g| (1.0 + g).log2()).sum::<f64>() / frame.coherence_symbols as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeRate {
    pub cell: usize,
    pub ue: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SinrReport {
    pub points: Vec<SinrPoint>,
    pub rates: Vec<UeRate>,
}

impl SinrReport {
    /// CSV with one `point` row per `(cell, ue, t)` followed by one `rate`
    /// row per UE.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "kind", "cell", "ue", "t", "signal", "interference_total", "self_term", "noise", "sinr", "rate",
        ])?;
        for p in &self.points {
            w.write_record([
                "point".to_string(),
                p.cell.to_string(),
                p.ue.to_string(),
                p.t.to_string(),
                p.signal.to_string(),
                p.interference_total().to_string(),
                p.self_term.to_string(),
                p.noise.to_string(),
                p.sinr.to_string(),
                String::new(),
            ])?;
        }
        for r in &self.rates {
            w.write_record([
                "rate".to_string(),
                r.cell.to_string(),
                r.ue.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                r.rate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything that depends on the symbol time `t`.
pub struct TimeSlice {
    pub t: i64,
    /// `D_δ(t) x̃_lk`, laid out `l * K + k`.
    decayed: Vec<DVector<Complex64>>,
    /// `(Φ_l^(g))^(-1) D_δ(t) x̃_lm` for the own UEs of each BS, `[l * K + m][g]`.
    solved: Vec<Vec<DVector<Complex64>>>,
    /// `v^H s` per `[l * K + m][g]`.
    pilot_quad: Vec<Vec<f64>>,
    /// `E‖ω_lm(t)‖²`.
    norms: Vec<f64>,
}

impl TimeSlice {
    pub fn norm(&self, l: usize, m: usize, ues: usize) -> f64 {
        self.norms[l * ues + m]
    }

    /// Per-group solves `(Φ_l^(g))^(-1) D_δ(t) x̃_lm`.
    pub fn solved(&self, l: usize, m: usize, ues: usize) -> &[DVector<Complex64>] {
        &self.solved[l * ues + m]
    }
}

fn quad_form(s: &DVector<Complex64>, a: &DMatrix<Complex64>) -> f64 {
    s.dotc(&(a * s)).re
}

/// Closed-form MRT evaluator for one scenario and hardware profile.
#[derive(Debug, Clone)]
pub struct MrtEvaluator {
    map: LargeScaleMap,
    book: PilotBook,
    profile: HardwareProfile,
    frame: FrameConfig,
    grams: Vec<PilotGram>,
    phi: Vec<PhiBlocks>,
    /// `X_jk - κ²_UL p_jk I = E[u u^H]` for the rotated pilot `u`.
    rotated_gram: Vec<DMatrix<Complex64>>,
    evaluation: Evaluation,
}

impl MrtEvaluator {
    pub fn new(map: &LargeScaleMap, book: &PilotBook, profile: HardwareProfile, frame: FrameConfig) -> Result<Self> {
        profile.validate()?;
        frame.validate()?;
        if map.num_cells() != book.num_cells() || map.ues_per_cell() != book.ues_per_cell() {
            return Err(Error::DimensionMismatch("pilot book and large-scale map disagree on L or K".into()));
        }
        if book.pilot_len() != frame.pilot_symbols {
            return Err(Error::DimensionMismatch(format!(
                "pilots have length {} but the frame has B = {}",
                book.pilot_len(),
                frame.pilot_symbols
            )));
        }
        let grams = all_grams(book, profile.delta, profile.kappa_ul);
        let phi = (0..map.num_cells())
            .into_par_iter()
            .map(|j| assemble_phi(map, &grams, profile.sigma2_bs, j))
            .collect::<Result<Vec<_>>>()?;
        let b = book.pilot_len();
        let k2 = profile.kappa_ul * profile.kappa_ul;
        let rotated_gram = grams
            .iter()
            .map(|g| &g.matrix - DMatrix::<Complex64>::identity(b, b) * Complex64::new(k2 * g.power, 0.0))
            .collect();
        Ok(Self { map: map.clone(), book: book.clone(), profile, frame, grams, phi, rotated_gram, evaluation: Evaluation::Grouped })
    }

    pub fn with_evaluation(mut self, evaluation: Evaluation) -> Self {
        self.evaluation = evaluation;
        self
    }

    pub fn map(&self) -> &LargeScaleMap {
        &self.map
    }

    pub fn book(&self) -> &PilotBook {
        &self.book
    }

    pub fn profile(&self) -> &HardwareProfile {
        &self.profile
    }

    pub fn frame(&self) -> &FrameConfig {
        &self.frame
    }

    pub fn phi(&self, cell: usize) -> &PhiBlocks {
        &self.phi[cell]
    }

    pub fn grams(&self) -> &[PilotGram] {
        &self.grams
    }

    /// Precomputes the solves shared by every expectation at time `t`.
    pub fn slice(&self, t: i64) -> Result<TimeSlice> {
        self.frame.check_dl(t)?;
        Ok(self.slice_unchecked(t))
    }

    pub(crate) fn slice_unchecked(&self, t: i64) -> TimeSlice {
        let cells = self.map.num_cells();
        let ues = self.map.ues_per_cell();
        let decay = phase_decay(t, self.book.pilot_len(), self.profile.delta);
        let decayed: Vec<_> = (0..cells * ues)
            .map(|i| decay.apply(self.book.sequence(i / ues, i % ues)))
            .collect();
        let mut solved = Vec::with_capacity(cells * ues);
        let mut pilot_quad = Vec::with_capacity(cells * ues);
        let mut norms = Vec::with_capacity(cells * ues);
        let mult = self.map.group_size() as f64;
        for l in 0..cells {
            for m in 0..ues {
                let v = &decayed[l * ues + m];
                let s: Vec<_> = (0..self.map.num_groups()).map(|g| self.phi[l].solve(g, v)).collect();
                let q: Vec<f64> = s.iter().map(|sg| v.dotc(sg).re).collect();
                let norm = self
                    .map
                    .group_gains(l, l, m)
                    .iter()
                    .zip(&q)
                    .map(|(lam, qg)| mult * lam * lam * qg)
                    .sum();
                solved.push(s);
                pilot_quad.push(q);
                norms.push(norm);
            }
        }
        TimeSlice { t, decayed, solved, pilot_quad, norms }
    }

    /// `E‖ω_jk(t)‖² = E{h_jjk^H(t) ω_jk(t)}`.
    pub fn mrt_signal(&self, j: usize, k: usize, t: i64) -> Result<f64> {
        Ok(self.slice(t)?.norm(j, k, self.map.ues_per_cell()))
    }

    /// Interference numerator of UE `(l, m)`'s precoder at UE `(j, k)`.
    pub fn mrt_interference(&self, l: usize, m: usize, j: usize, k: usize, t: i64) -> Result<InterferenceTerms> {
        let slice = self.slice(t)?;
        Ok(self.interference_at(&slice, l, m, j, k))
    }

    pub fn interference_at(&self, slice: &TimeSlice, l: usize, m: usize, j: usize, k: usize) -> InterferenceTerms {
        match self.evaluation {
            Evaluation::Grouped => self.interference_grouped(slice, l, m, j, k),
            Evaluation::Literal => self.interference_literal(slice, l, m, j, k),
        }
    }

    fn interference_grouped(&self, slice: &TimeSlice, l: usize, m: usize, j: usize, k: usize) -> InterferenceTerms {
        let ues = self.map.ues_per_cell();
        let b = self.book.pilot_len();
        let mult = self.map.group_size() as f64;
        let kdl2 = self.profile.kappa_dl * self.profile.kappa_dl;
        let kul2 = self.profile.kappa_ul * self.profile.kappa_ul;
        let lm = l * ues + m;
        let jk = j * ues + k;
        let own = self.map.group_gains(l, l, m);
        let cross = self.map.group_gains(l, j, k);
        let solved = &slice.solved[lm];
        let x_jk = &self.grams[jk].matrix;
        let v_jk = &slice.decayed[jk];

        let mut trace = 0.0;
        let mut u = DVector::<Complex64>::zeros(b);
        let mut correction = 0.0;
        for g in 0..self.map.num_groups() {
            let alpha = own[g] * cross[g];
            if alpha == 0.0 && own[g] == 0.0 {
                continue;
            }
            trace += mult * cross[g] * own[g] * own[g] * slice.pilot_quad[lm][g];
            u.axpy(Complex64::new(mult * alpha, 0.0), &solved[g], Complex64::new(1.0, 0.0));
            let s = &solved[g];
            let per_antenna = match self.profile.lo {
                LoArchitecture::Clo => kul2 * self.grams[jk].power * s.norm_squared() + kdl2 * quad_form(s, x_jk),
                LoArchitecture::Slo => (1.0 + kdl2) * quad_form(s, x_jk) - v_jk.dotc(s).norm_sqr(),
            };
            correction += mult * alpha * alpha * per_antenna;
        }
        let coherent = match self.profile.lo {
            LoArchitecture::Clo => quad_form(&u, &self.rotated_gram[jk]),
            LoArchitecture::Slo => u.dotc(v_jk).norm_sqr(),
        };
        InterferenceTerms { trace: (1.0 + kdl2) * trace, coherent, correction, norm: slice.norms[lm] }
    }

    /// The individual expectations behind [`InterferenceTerms`]: the cross
    /// mean `E{h_ljk^H(t) ω_lm(t)}`, `E|h_ljk^H(t) ω_lm(t)|²` and the
    /// per-antenna sum `Σ_n E|h_ljk^(n)|² |ω_lm^(n)(t)|²`.
    pub fn expectations_at(&self, slice: &TimeSlice, l: usize, m: usize, j: usize, k: usize) -> Expectations {
        let ues = self.map.ues_per_cell();
        let b = self.book.pilot_len();
        let mult = self.map.group_size() as f64;
        let lm = l * ues + m;
        let jk = j * ues + k;
        let own = self.map.group_gains(l, l, m);
        let cross = self.map.group_gains(l, j, k);
        let x_jk = &self.grams[jk].matrix;
        let mut u = DVector::<Complex64>::zeros(b);
        let mut per_antenna = 0.0;
        for g in 0..self.map.num_groups() {
            let alpha = own[g] * cross[g];
            let s = &slice.solved[lm][g];
            u.axpy(Complex64::new(mult * alpha, 0.0), s, Complex64::new(1.0, 0.0));
            per_antenna += mult * (cross[g] * own[g] * own[g] * slice.pilot_quad[lm][g] + alpha * alpha * quad_form(s, x_jk));
        }
        let terms = self.interference_grouped(slice, l, m, j, k);
        let kdl2 = self.profile.kappa_dl * self.profile.kappa_dl;
        Expectations {
            cross_mean: u.dotc(&slice.decayed[jk]),
            second_moment: terms.total() - kdl2 * per_antenna,
            per_antenna,
            norm: slice.norms[lm],
        }
    }

    /// Same expectation with every antenna expanded and the antenna-pair sum
    /// written out explicitly.
    fn interference_literal(&self, slice: &TimeSlice, l: usize, m: usize, j: usize, k: usize) -> InterferenceTerms {
        let ues = self.map.ues_per_cell();
        let kdl2 = self.profile.kappa_dl * self.profile.kappa_dl;
        let kul2 = self.profile.kappa_ul * self.profile.kappa_ul;
        let lm = l * ues + m;
        let jk = j * ues + k;
        let n_ant = self.map.num_antennas();
        let own = self.map.lambda_row(l, l, m);
        let cross = self.map.lambda_row(l, j, k);
        let p_jk = self.grams[jk].power;
        let x_jk = &self.grams[jk].matrix;
        let v_jk = &slice.decayed[jk];
        let v_lm = &slice.decayed[lm];
        let s: Vec<&DVector<Complex64>> = (0..n_ant).map(|n| &slice.solved[lm][self.map.group_of(n)]).collect();

        let mut trace = 0.0;
        let mut norm = 0.0;
        for n in 0..n_ant {
            let q = v_lm.dotc(s[n]).re;
            trace += cross[n] * own[n] * own[n] * q;
            norm += own[n] * own[n] * q;
        }
        let mut coherent = 0.0;
        for n1 in 0..n_ant {
            for n2 in 0..n_ant {
                let w = own[n1] * cross[n1] * own[n2] * cross[n2];
                if w == 0.0 {
                    continue;
                }
                let pair = match self.profile.lo {
                    LoArchitecture::Clo => s[n1].dotc(&(&self.rotated_gram[jk] * s[n2])).re,
                    LoArchitecture::Slo => (s[n1].dotc(v_jk) * v_jk.dotc(s[n2])).re,
                };
                coherent += w * pair;
            }
        }
        let q_matrix = match self.profile.lo {
            LoArchitecture::Clo => {
                DMatrix::<Complex64>::identity(x_jk.nrows(), x_jk.nrows()) * Complex64::new(kul2 * p_jk, 0.0)
                    + x_jk * Complex64::new(kdl2, 0.0)
            }
            LoArchitecture::Slo => x_jk * Complex64::new(1.0 + kdl2, 0.0) - v_jk * v_jk.adjoint(),
        };
        let mut correction = 0.0;
        for n in 0..n_ant {
            let a = own[n] * cross[n];
            correction += a * a * quad_form(s[n], &q_matrix);
        }
        InterferenceTerms { trace: (1.0 + kdl2) * trace, coherent, correction, norm }
    }

    fn check_powers(&self, dl_powers: &[f64]) -> Result<()> {
        let count = self.map.num_cells() * self.map.ues_per_cell();
        if dl_powers.len() != count {
            return Err(Error::DimensionMismatch(format!("expected {count} DL powers, got {}", dl_powers.len())));
        }
        Ok(())
    }

    /// `SINR_jk(t)` from a precomputed slice, without the per-term breakdown.
    pub fn sinr_at(&self, slice: &TimeSlice, j: usize, k: usize, dl_powers: &[f64]) -> Result<f64> {
        let ues = self.map.ues_per_cell();
        let signal = dl_powers[j * ues + k] * slice.norms[j * ues + k];
        let mut total = 0.0;
        for l in 0..self.map.num_cells() {
            for m in 0..ues {
                let p = dl_powers[l * ues + m];
                if p != 0.0 {
                    total += p * self.interference_at(slice, l, m, j, k).normalized();
                }
            }
        }
        sinr(signal, total, self.profile.sigma2_ue)
    }

    pub fn point_at(&self, slice: &TimeSlice, j: usize, k: usize, dl_powers: &[f64]) -> Result<SinrPoint> {
        let ues = self.map.ues_per_cell();
        let signal = dl_powers[j * ues + k] * slice.norms[j * ues + k];
        let mut terms = Vec::with_capacity(self.map.num_cells() * ues);
        let mut interference = Vec::with_capacity(self.map.num_cells() * ues);
        for l in 0..self.map.num_cells() {
            for m in 0..ues {
                let it = self.interference_at(slice, l, m, j, k);
                interference.push(dl_powers[l * ues + m] * it.normalized());
                terms.push(it);
            }
        }
        let total: f64 = interference.iter().sum();
        let value = sinr(signal, total, self.profile.sigma2_ue)?;
        Ok(SinrPoint {
            cell: j,
            ue: k,
            t: slice.t,
            signal,
            interference,
            terms,
            self_term: signal,
            noise: self.profile.sigma2_ue,
            sinr: value,
        })
    }

    pub fn sinr_point(&self, j: usize, k: usize, t: i64, dl_powers: &[f64]) -> Result<SinrPoint> {
        self.check_powers(dl_powers)?;
        let slice = self.slice(t)?;
        self.point_at(&slice, j, k, dl_powers)
    }

    /// Full breakdown for every `(j, k, t)` plus per-UE rates.
    pub fn report(&self, dl_powers: &[f64]) -> Result<SinrReport> {
        self.check_powers(dl_powers)?;
        let cells = self.map.num_cells();
        let ues = self.map.ues_per_cell();
        let times: Vec<i64> = self.frame.dl_times().collect();
        let per_t = times
            .par_iter()
            .map(|&t| {
                let slice = self.slice_unchecked(t);
                (0..cells * ues)
                    .map(|i| self.point_at(&slice, i / ues, i % ues, dl_powers))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut points = Vec::with_capacity(times.len() * cells * ues);
        for i in 0..cells * ues {
            for row in &per_t {
                points.push(row[i].clone());
            }
        }
        let rates = (0..cells * ues)
            .map(|i| {
                let series: Vec<f64> = per_t.iter().map(|row| row[i].sinr).collect();
                UeRate { cell: i / ues, ue: i % ues, rate: rate(&self.frame, &series) }
            })
            .collect();
        Ok(SinrReport { points, rates })
    }

    /// `SINR_jk(t)` for every UE at the given times, laid out `[t][j * K + k]`.
    pub fn sinr_grid(&self, times: &[i64], dl_powers: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_powers(dl_powers)?;
        for &t in times {
            self.frame.check_dl(t)?;
        }
        let count = self.map.num_cells() * self.map.ues_per_cell();
        let ues = self.map.ues_per_cell();
        times
            .par_iter()
            .map(|&t| {
                let slice = self.slice_unchecked(t);
                (0..count).map(|i| self.sinr_at(&slice, i / ues, i % ues, dl_powers)).collect()
            })
            .collect()
    }

    /// Per-UE rates `R_jk`, laid out `j * K + k`.
    pub fn rates(&self, dl_powers: &[f64], sampling: TimeSampling) -> Result<Vec<f64>> {
        let first = self.frame.first_dl();
        let last = self.frame.last_dl();
        let count = self.map.num_cells() * self.map.ues_per_cell();
        if self.frame.dl_symbols == 0 {
            return Ok(vec![0.0; count]);
        }
        let times: Vec<i64> = match sampling {
            TimeSampling::Every => (first..=last).collect(),
            TimeSampling::Coarse { stride } => {
                let stride = stride.max(1) as i64;
                let mut ts: Vec<i64> = (first..=last).step_by(stride as usize).collect();
                if *ts.last().unwrap() != last {
                    ts.push(last);
                }
                ts
            }
        };
        let grid = self.sinr_grid(&times, dl_powers)?;
        let t_norm = self.frame.coherence_symbols as f64;
        Ok((0..count)
            .map(|i| {
                let se: Vec<f64> = grid.iter().map(|row| (1.0 + row[i]).log2()).collect();
                let mut sum = 0.0;
                for w in 0..times.len() {
                    sum += se[w];
                    if w + 1 < times.len() {
                        let gap = times[w + 1] - times[w];
                        for step in 1..gap {
                            let f = step as f64 / gap as f64;
                            sum += (1.0 - f) * se[w] + f * se[w + 1];
                        }
                    }
                }
                sum / t_norm
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilots::{fourier_pilot_book, PilotReuse};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, cells: usize, ues: usize, groups: usize, per_group: usize, b: usize) -> (LargeScaleMap, PilotBook) {
        let gains = (0..cells * cells * ues * groups).map(|_| rng.random_range(0.02..1.0)).collect();
        let map = LargeScaleMap::factorized(cells, ues, groups, per_group, gains).unwrap();
        let powers: Vec<f64> = (0..cells * ues).map(|_| rng.random_range(0.5..2.0)).collect();
        let seqs = powers
            .iter()
            .map(|&p| (0..b).map(|_| Complex64::from_polar(p.sqrt(), rng.random_range(0.0..6.3))).collect())
            .collect();
        (map, PilotBook::from_sequences(cells, ues, seqs, powers).unwrap())
    }

    fn profile(lo: LoArchitecture) -> HardwareProfile {
        HardwareProfile { kappa_ul: 0.2, kappa_dl: 0.15, delta: 0.03, sigma2_bs: 0.3, sigma2_ue: 0.2, lo }
    }

    #[test]
    fn frame_invariant() {
        assert!(FrameConfig::new(300, 15, 0, 285).is_ok());
        assert!(FrameConfig::new(300, 15, 1, 285).is_err());
        let f = FrameConfig::new(10, 2, 3, 5).unwrap();
        assert_eq!(f.dl_times().collect::<Vec<_>>(), vec![3, 4, 5, 6, 7]);
        assert!(matches!(f.check_dl(2), Err(Error::OutOfWindow { .. })));
        assert!(matches!(f.check_dl(8), Err(Error::OutOfWindow { .. })));
    }

    #[test]
    fn scalar_signal_matches_hand_formula() {
        let (lambda, p, kappa, sigma2, delta) = (0.7, 1.3, 0.1, 0.4, 0.02);
        let map = LargeScaleMap::flat(1, 1, 1, vec![lambda]).unwrap();
        let book = fourier_pilot_book(1, 1, 1, &[p], &PilotReuse::Full).unwrap();
        let hw = HardwareProfile { kappa_ul: kappa, kappa_dl: 0.0, delta, sigma2_bs: sigma2, sigma2_ue: 1.0, lo: LoArchitecture::Clo };
        let frame = FrameConfig::new(6, 1, 0, 5).unwrap();
        let ev = MrtEvaluator::new(&map, &book, hw, frame).unwrap();
        for t in 2..=6 {
            let expected = lambda * lambda * p * (-delta * (t - 1) as f64).exp() / (lambda * p * (1.0 + kappa * kappa) + sigma2);
            assert_relative_eq!(ev.mrt_signal(0, 0, t).unwrap(), expected, max_relative = 1e-13);
        }
        assert!(matches!(ev.mrt_signal(0, 0, 1), Err(Error::OutOfWindow { .. })));
    }

    #[test]
    fn zero_channel_gives_zero_signal() {
        let map = LargeScaleMap::flat(1, 1, 3, vec![0.0; 3]).unwrap();
        let book = fourier_pilot_book(2, 1, 1, &[1.0], &PilotReuse::Full).unwrap();
        let frame = FrameConfig::new(4, 2, 0, 2).unwrap();
        let ev = MrtEvaluator::new(&map, &book, profile(LoArchitecture::Slo), frame).unwrap();
        assert_eq!(ev.mrt_signal(0, 0, 3).unwrap(), 0.0);
        assert_eq!(ev.sinr_point(0, 0, 3, &[1.0]).unwrap().sinr, 0.0);
    }

    #[test]
    fn grouped_equals_literal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for lo in [LoArchitecture::Clo, LoArchitecture::Slo] {
            let (map, book) = random_instance(&mut rng, 2, 2, 3, 2, 3);
            let frame = FrameConfig::new(10, 3, 0, 7).unwrap();
            let grouped = MrtEvaluator::new(&map, &book, profile(lo), frame).unwrap();
            let literal = grouped.clone().with_evaluation(Evaluation::Literal);
            let flat = MrtEvaluator::new(&map.to_flat(), &book, profile(lo), frame).unwrap();
            for t in [4, 10] {
                let s = grouped.slice(t).unwrap();
                let sf = flat.slice(t).unwrap();
                for (l, m, j, k) in [(0, 0, 0, 0), (0, 1, 1, 0), (1, 1, 0, 1), (1, 0, 1, 0)] {
                    let a = grouped.interference_at(&s, l, m, j, k);
                    let b = literal.interference_at(&s, l, m, j, k);
                    let c = flat.interference_at(&sf, l, m, j, k);
                    for (x, y, z) in [
                        (a.trace, b.trace, c.trace),
                        (a.coherent, b.coherent, c.coherent),
                        (a.correction, b.correction, c.correction),
                        (a.norm, b.norm, c.norm),
                    ] {
                        assert_relative_eq!(x, y, max_relative = 1e-12);
                        assert_relative_eq!(x, z, max_relative = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn branches_coincide_without_phase_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (map, book) = random_instance(&mut rng, 2, 2, 2, 3, 2);
        let frame = FrameConfig::new(6, 2, 0, 4).unwrap();
        let hw = HardwareProfile { delta: 0.0, ..profile(LoArchitecture::Clo) };
        let clo = MrtEvaluator::new(&map, &book, hw, frame).unwrap();
        let slo = MrtEvaluator::new(&map, &book, hw.with_lo(LoArchitecture::Slo), frame).unwrap();
        let powers = [1.0, 0.5, 2.0, 1.0];
        for t in frame.dl_times() {
            for j in 0..2 {
                for k in 0..2 {
                    let a = clo.sinr_point(j, k, t, &powers).unwrap();
                    let b = slo.sinr_point(j, k, t, &powers).unwrap();
                    assert_relative_eq!(a.sinr, b.sinr, max_relative = 1e-12);
                    for (x, y) in a.terms.iter().zip(&b.terms) {
                        assert_relative_eq!(x.total(), y.total(), max_relative = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn no_contamination_without_pilot_reuse() {
        // two cells, orthogonal pilots across cells, ideal hardware
        let map = LargeScaleMap::factorized(2, 1, 2, 8, vec![0.9, 0.5, 0.1, 0.2, 0.3, 0.05, 0.7, 0.6]).unwrap();
        let book = fourier_pilot_book(2, 1, 2, &[1.0, 1.0], &PilotReuse::Assigned(vec![0, 1])).unwrap();
        let frame = FrameConfig::new(5, 2, 0, 3).unwrap();
        let hw = HardwareProfile::ideal(0.1, 0.1, LoArchitecture::Clo);
        let ev = MrtEvaluator::new(&map, &book, hw, frame).unwrap();
        let it = ev.mrt_interference(1, 0, 0, 0, 3).unwrap();
        assert!(it.coherent.abs() < 1e-12 * it.trace);
        assert!(it.correction.abs() < 1e-12 * it.trace);
        // the trace term is the only survivor
        assert_relative_eq!(it.total(), it.trace, max_relative = 1e-12);
    }

    #[test]
    fn denominator_positive_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for lo in [LoArchitecture::Clo, LoArchitecture::Slo] {
            let (map, book) = random_instance(&mut rng, 2, 2, 2, 4, 3);
            let frame = FrameConfig::new(8, 3, 0, 5).unwrap();
            let powers = [1.0; 4];
            let base = profile(lo);
            let mut prev = f64::INFINITY;
            for kdl in [0.0, 0.1, 0.3, 0.9] {
                let ev = MrtEvaluator::new(&map, &book, HardwareProfile { kappa_dl: kdl, ..base }, frame).unwrap();
                let p = ev.sinr_point(1, 0, 8, &powers).unwrap();
                let own = &p.terms[2];
                assert!(own.total() / own.norm >= p.signal / powers[2] * (1.0 - 1e-12));
                assert!(p.sinr <= prev);
                prev = p.sinr;
            }
            let mut prev = f64::INFINITY;
            for s2 in [0.0, 0.01, 1.0, 10.0] {
                let ev = MrtEvaluator::new(&map, &book, HardwareProfile { sigma2_ue: s2, ..base }, frame).unwrap();
                let v = ev.sinr_point(0, 1, 6, &powers).unwrap().sinr;
                assert!(v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn rate_examples() {
        let frame = FrameConfig::new(10, 2, 0, 8).unwrap();
        assert_relative_eq!(rate(&frame, &[3.0; 8]), 0.8 * 2.0);
        let empty = FrameConfig::new(2, 2, 0, 0).unwrap();
        assert_eq!(rate(&empty, &[]), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (map, book) = random_instance(&mut rng, 2, 2, 2, 2, 2);
        let frame = FrameConfig::new(12, 2, 0, 10).unwrap();
        let hw = HardwareProfile { delta: 0.0, ..profile(LoArchitecture::Clo) };
        let ev = MrtEvaluator::new(&map, &book, hw, frame).unwrap();
        let powers = [1.0; 4];
        let grid = ev.sinr_grid(&frame.dl_times().collect::<Vec<_>>(), &powers).unwrap();
        for row in &grid {
            for (a, b) in row.iter().zip(&grid[0]) {
                assert_relative_eq!(a, b, max_relative = 1e-13);
            }
        }
        let rates = ev.rates(&powers, TimeSampling::Every).unwrap();
        for (i, r) in rates.iter().enumerate() {
            assert_relative_eq!(*r, 10.0 / 12.0 * (1.0 + grid[0][i]).log2(), max_relative = 1e-12);
        }
        let coarse = ev.rates(&powers, TimeSampling::Coarse { stride: 4 }).unwrap();
        for (a, b) in coarse.iter().zip(&rates) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_powers_give_zero_sinr() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (map, book) = random_instance(&mut rng, 2, 2, 2, 2, 2);
        let frame = FrameConfig::new(4, 2, 0, 2).unwrap();
        let ev = MrtEvaluator::new(&map, &book, profile(LoArchitecture::Slo), frame).unwrap();
        assert_eq!(ev.sinr_point(1, 1, 3, &[0.0; 4]).unwrap().sinr, 0.0);
    }

    #[test]
    fn single_ue_sinr_grows_with_antennas() {
        let book = fourier_pilot_book(1, 1, 1, &[1.0], &PilotReuse::Full).unwrap();
        let frame = FrameConfig::new(3, 1, 0, 2).unwrap();
        let hw = HardwareProfile::ideal(0.5, 0.5, LoArchitecture::Clo);
        let mut prev = 0.0;
        for n in [1, 2, 4, 16, 64, 256, 1024] {
            let map = LargeScaleMap::factorized(1, 1, 1, n, vec![0.3]).unwrap();
            let ev = MrtEvaluator::new(&map, &book, hw, frame).unwrap();
            let v = ev.sinr_point(0, 0, 2, &[1.0]).unwrap().sinr;
            assert!(v > prev);
            prev = v;
        }
        assert!(prev > 50.0);
    }

    #[test]
    fn report_csv_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (map, book) = random_instance(&mut rng, 1, 2, 1, 2, 2);
        let frame = FrameConfig::new(5, 2, 0, 3).unwrap();
        let ev = MrtEvaluator::new(&map, &book, profile(LoArchitecture::Clo), frame).unwrap();
        let report = ev.report(&[1.0, 1.0]).unwrap();
        assert_eq!(report.points.len(), 6);
        assert_eq!(report.rates.len(), 2);
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 6 + 2);
        assert!(text.lines().last().unwrap().starts_with("rate,0,1,"));
    }
}
