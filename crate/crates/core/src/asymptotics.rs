//! Large-array limits, hardware-quality scaling and trend classification.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LargeScaleMap;
use crate::performance::{FrameConfig, HardwareProfile, LoArchitecture, MrtEvaluator};
use crate::pilots::PilotBook;

/// Growth exponents of the impairments with the antenna count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingExponents {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
    /// Profile at `N = 1`.
    pub base: HardwareProfile,
}

impl ScalingExponents {
    pub fn fixed(base: HardwareProfile) -> Self {
        Self { z1: 0.0, z2: 0.0, z3: 0.0, base }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.z1, self.z2, self.z3].iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
            return Err(Error::Config(format!("scaling exponents must be nonnegative: {self:?}")));
        }
        self.base.validate()
    }

    pub fn is_fixed(&self) -> bool {
        self.z1 == 0.0 && self.z2 == 0.0 && self.z3 == 0.0
    }
}

/// `κ² = κ₀² N^z1`, `σ² = σ₀² N^z2`, `δ = δ₀ (1 + z3 ln N)`.
pub fn scale_hardware(ex: &ScalingExponents, antennas: usize) -> HardwareProfile {
    assert!(antennas >= 1, "antenna count must be positive");
    let n = antennas as f64;
    let b = ex.base;
    HardwareProfile {
        kappa_ul: b.kappa_ul * n.powf(ex.z1 / 2.0),
        kappa_dl: b.kappa_dl * n.powf(ex.z1 / 2.0),
        delta: b.delta * (1.0 + ex.z3 * n.ln()),
        sigma2_bs: b.sigma2_bs * n.powf(ex.z2),
        sigma2_ue: b.sigma2_ue * n.powf(ex.z2),
        lo: b.lo,
    }
}

/// Time offset entering the SLO condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetConvention {
    /// `|τ_DL - B|`.
    #[default]
    Verbatim,
    /// Largest distance between a pilot and a DL symbol, `B + τ_DL - 1`.
    MaxPilotToData,
}

impl OffsetConvention {
    pub fn offset(self, frame: &FrameConfig) -> f64 {
        match self {
            Self::Verbatim => (frame.dl_symbols as f64 - frame.pilot_symbols as f64).abs(),
            Self::MaxPilotToData => (frame.pilot_symbols + frame.dl_symbols) as f64 - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawVerdict {
    pub holds: bool,
    /// Slack of the binding inequality; negative when violated.
    pub margin: f64,
}

const LAW_TOLERANCE: f64 = 1e-12;

pub fn scaling_law_check(
    ex: &ScalingExponents,
    frame: &FrameConfig,
    lo: LoArchitecture,
    convention: OffsetConvention,
) -> LawVerdict {
    let zmax = ex.z1.max(ex.z2);
    let margin = match lo {
        LoArchitecture::Clo if ex.z3 == 0.0 => 0.5 - zmax,
        LoArchitecture::Clo => (0.5 - zmax).min(-ex.z3),
        LoArchitecture::Slo => 0.5 - zmax - ex.z3 * ex.base.delta * convention.offset(frame) / 2.0,
    };
    LawVerdict { holds: margin >= -LAW_TOLERANCE, margin }
}

/// Limit of `SINR_jk(t)` when every subarray grows without bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPoint {
    pub cell: usize,
    pub ue: usize,
    pub t: i64,
    pub lo: LoArchitecture,
    pub signal: f64,
    /// Per interferer, laid out `l * K + m`.
    pub interference: Vec<f64>,
    /// `f64::INFINITY` when nothing in the limit bounds the SINR.
    pub sinr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub points: Vec<AsymptoticPoint>,
}

/// Evaluates the limit on the collapsed (one antenna per subarray) map.
///
/// Only the estimator-side entries of `profile` (`κ_UL`, `δ`, `σ²_BS`) are
/// read; they shape the per-subarray LMMSE blocks. `κ_DL` and `σ²_UE` vanish
/// in the limit and are ignored.
pub struct AsymptoticEvaluator {
    collapsed: MrtEvaluator,
}

impl AsymptoticEvaluator {
    pub fn new(map: &LargeScaleMap, book: &PilotBook, frame: FrameConfig, profile: &HardwareProfile) -> Result<Self> {
        if !map.is_factorized() {
            return Err(Error::NotFactorized);
        }
        let collapsed_map = map.with_antennas_per_subarray(1)?;
        let estimator_side = HardwareProfile { kappa_dl: 0.0, sigma2_ue: 0.0, ..*profile };
        Ok(Self { collapsed: MrtEvaluator::new(&collapsed_map, book, estimator_side, frame)? })
    }

    pub fn point(&self, j: usize, k: usize, t: i64, dl_powers: &[f64]) -> Result<AsymptoticPoint> {
        let slice = self.collapsed.slice(t)?;
        let map = self.collapsed.map();
        let ues = map.ues_per_cell();
        if dl_powers.len() != map.num_cells() * ues {
            return Err(Error::DimensionMismatch("DL power vector has the wrong length".into()));
        }
        let signal = slice.norm(j, k, ues);
        let mut interference = Vec::with_capacity(map.num_cells() * ues);
        for l in 0..map.num_cells() {
            for m in 0..ues {
                let terms = self.collapsed.interference_at(&slice, l, m, j, k);
                interference.push(if terms.norm > 0.0 { terms.coherent / terms.norm } else { 0.0 });
            }
        }
        let p = dl_powers[j * ues + k];
        let numerator = p * signal;
        let denom: f64 = interference.iter().zip(dl_powers).map(|(i, q)| q * i).sum::<f64>() - numerator;
        let sinr = if numerator == 0.0 {
            0.0
        } else if denom <= 1e-13 * numerator {
            f64::INFINITY
        } else {
            numerator / denom
        };
        Ok(AsymptoticPoint { cell: j, ue: k, t, lo: self.collapsed.profile().lo, signal, interference, sinr })
    }

    pub fn report(&self, times: &[i64], dl_powers: &[f64]) -> Result<AsymptoticReport> {
        let map = self.collapsed.map();
        let mut points = Vec::new();
        for j in 0..map.num_cells() {
            for k in 0..map.ues_per_cell() {
                for &t in times {
                    points.push(self.point(j, k, t, dl_powers)?);
                }
            }
        }
        Ok(AsymptoticReport { points })
    }
}

/// One-shot form of [`AsymptoticEvaluator::point`].
pub fn asymptotic_sinr(
    map: &LargeScaleMap,
    book: &PilotBook,
    frame: FrameConfig,
    profile: &HardwareProfile,
    j: usize,
    k: usize,
    t: i64,
    dl_powers: &[f64],
) -> Result<AsymptoticPoint> {
    AsymptoticEvaluator::new(map, book, frame, profile)?.point(j, k, t, dl_powers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    NonVanishing,
    Vanishing,
    Inconclusive,
}

impl Trend {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NonVanishing => "non-vanishing",
            Self::Vanishing => "vanishing",
            Self::Inconclusive => "inconclusive",
        }
    }
}

/// Ratio above which the last doubling counts as non-vanishing.
pub const NON_VANISHING_RATIO: f64 = 0.9;
/// Number of trailing ratios that must all be below one for a vanishing call.
pub const VANISHING_TAIL: usize = 3;

/// Classifies a SINR sequence sampled on a geometric grid of `N`.
///
/// With `r_i = s_{i+1} / s_i`: non-vanishing if the last ratio is at least
/// [`NON_VANISHING_RATIO`]; vanishing if the last [`VANISHING_TAIL`] ratios
/// are each below one and the last one is below the threshold; otherwise
/// inconclusive. A sequence decaying like `N^-a` per doubling ends with
/// ratio `2^-a`, so anything faster than `N^-0.152` is caught.
pub fn trend_classifier(sequence: &[f64]) -> Result<Trend> {
    if sequence.len() < VANISHING_TAIL + 1 {
        return Err(Error::TooFewPoints { needed: VANISHING_TAIL + 1, got: sequence.len() });
    }
    let ratios: Vec<f64> = sequence.windows(2).map(|w| w[1] / w[0]).collect();
    let last = *ratios.last().unwrap();
    if !last.is_finite() && sequence.last().unwrap().is_infinite() {
        return Ok(Trend::NonVanishing);
    }
    if last >= NON_VANISHING_RATIO {
        return Ok(Trend::NonVanishing);
    }
    let tail = &ratios[ratios.len() - VANISHING_TAIL..];
    if tail.iter().all(|r| *r < 1.0) {
        Ok(Trend::Vanishing)
    } else {
        Ok(Trend::Inconclusive)
    }
}

/// Geometric grid `first, 2 first, …` with `points` entries.
pub fn doubling_grid(first: usize, points: usize) -> Vec<usize> {
    (0..points).map(|i| first << i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub antennas: usize,
    pub lo: LoArchitecture,
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
    pub sinr: f64,
    pub asymptote: Option<f64>,
    pub classification: Trend,
    pub law_holds: bool,
    pub law_margin: f64,
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["N", "lo", "z1", "z2", "z3", "sinr", "asymptote", "classification", "law_verdict", "law_margin"])?;
    for r in rows {
        w.write_record([
            r.antennas.to_string(),
            r.lo.to_string(),
            r.z1.to_string(),
            r.z2.to_string(),
            r.z3.to_string(),
            r.sinr.to_string(),
            r.asymptote.map(|a| a.to_string()).unwrap_or_default(),
            r.classification.as_str().to_string(),
            r.law_holds.to_string(),
            r.law_margin.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
