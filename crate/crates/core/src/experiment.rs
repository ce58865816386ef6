//! Experiment configuration and runners.
//!
//! Power and noise levels are configured as densities in dBm/Hz. SINRs are
//! ratios of densities, so no bandwidth enters anywhere. The conversion to
//! W/Hz happens in [`dbm_per_hz_to_watts`] and nowhere else.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    doubling_grid, scale_hardware, scaling_law_check, trend_classifier, write_sweep_csv, AsymptoticEvaluator,
    AsymptoticPoint, OffsetConvention, ScalingExponents, SweepRow, Trend,
};
use crate::error::{Error, Result};
use crate::geometry::{assemble_large_scale, build_wraparound_layout, drop_ues, LargeScaleMap, NetworkLayout};
use crate::oracle::{empirical_sinr_terms, write_oracle_csv, OracleReport};
use crate::performance::{FrameConfig, HardwareProfile, LoArchitecture, MrtEvaluator, SinrPoint, TimeSampling};
use crate::pilots::{fourier_pilot_book, PilotBook, PilotReuse};
use crate::rng::{child_seed, stream, Domain};

pub fn dbm_per_hz_to_watts(dbm_per_hz: f64) -> f64 {
    10f64.powf((dbm_per_hz - 30.0) / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub cells_per_side: usize,
    /// Cell side in meters.
    pub cell_size: f64,
    pub subarrays: usize,
    /// Distance of each subarray from its cell center in meters.
    pub subarray_radius: f64,
    pub ues_per_cell: usize,
    pub min_ue_distance: f64,
    /// Variance of the shadowing exponent `s` in `10^(s - 1.53)`.
    pub shadow_variance: f64,
    /// Total antennas per BS for the figure sweep; multiples of `subarrays`.
    pub antennas: Vec<usize>,
    pub pilot_reuse: PilotReuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub ul_dbm_per_hz: f64,
    pub dl_dbm_per_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    pub kappa_ul: f64,
    pub kappa_dl: f64,
    /// Phase-noise increment variance per symbol (rad²).
    pub delta: f64,
    pub noise_bs_dbm_per_hz: f64,
    pub noise_ue_dbm_per_hz: f64,
    /// Receiver noise of the ideal-hardware reference curve.
    pub ideal_noise_dbm_per_hz: f64,
}

/// Exponents of one scaled-hardware curve; SLO curves also grow `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveExponents {
    pub z1: f64,
    pub z2: f64,
    pub z3_slo: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCase {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
    pub lo: LoArchitecture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub within_law: CurveExponents,
    pub beyond_law: CurveExponents,
    pub offset: OffsetConvention,
    pub sweep_first_antennas: usize,
    pub sweep_points: usize,
    pub sweep_drops: usize,
    pub sweep: Vec<SweepCase>,
}

/// Small synthetic instance for the oracle comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub cells: usize,
    pub ues_per_cell: usize,
    pub subarrays: usize,
    pub antennas: usize,
    pub pilot_symbols: usize,
    pub dl_symbols: usize,
    /// Channel gains are drawn uniformly in this dB range.
    pub gain_db_min: f64,
    pub gain_db_max: f64,
    pub z_bound: f64,
    /// Minimum share of entries with `|z| <= z_bound`.
    pub gate: f64,
}

pub const VALIDATION_MAX_ANTENNAS: usize = 8;
pub const VALIDATION_MAX_PILOTS: usize = 4;
pub const VALIDATION_MAX_CELLS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub drops: usize,
    pub trials: usize,
    pub output_dir: PathBuf,
    pub scenario: ScenarioConfig,
    pub frame: FrameConfig,
    pub power: PowerConfig,
    pub hardware: HardwareConfig,
    pub scaling: ScalingConfig,
    pub validation: ValidationConfig,
}

/// Linear-unit view of a configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub ul_power: f64,
    pub dl_power: f64,
    /// Impaired profile with the configured LO set to CLO.
    pub hardware: HardwareProfile,
    pub ideal: HardwareProfile,
}

fn default_sweep() -> Vec<SweepCase> {
    let case = |z1, z2, z3, lo| SweepCase { z1, z2, z3, lo };
    use LoArchitecture::{Clo, Slo};
    vec![
        case(0.0, 0.0, 0.0, Clo),
        case(0.0, 0.0, 0.0, Slo),
        case(0.48, 0.48, 0.0, Clo),
        case(0.48, 0.48, 0.48, Slo),
        case(0.5, 0.5, 0.0, Clo),
        case(0.6, 0.6, 0.0, Clo),
        case(0.6, 0.6, 0.48, Slo),
        case(0.48, 0.48, 0.48, Clo),
    ]
}

impl ExperimentConfig {
    /// Four-cell preset that runs in seconds.
    pub fn desk() -> Self {
        Self {
            seed: 2016,
            drops: 20,
            trials: 100_000,
            output_dir: PathBuf::from("out"),
            scenario: ScenarioConfig {
                cells_per_side: 2,
                cell_size: 400.0,
                subarrays: 4,
                subarray_radius: 100.0,
                ues_per_cell: 3,
                min_ue_distance: 25.0,
                shadow_variance: crate::geometry::DEFAULT_SHADOW_VARIANCE,
                antennas: vec![16, 32, 64, 128, 256],
                pilot_reuse: PilotReuse::Full,
            },
            frame: FrameConfig { coherence_symbols: 300, pilot_symbols: 3, ul_symbols: 0, dl_symbols: 297 },
            power: PowerConfig { ul_dbm_per_hz: -50.0, dl_dbm_per_hz: -50.0 },
            hardware: HardwareConfig {
                kappa_ul: 0.03,
                kappa_dl: 0.03,
                delta: 1e-5,
                noise_bs_dbm_per_hz: -169.0,
                noise_ue_dbm_per_hz: -169.0,
                ideal_noise_dbm_per_hz: -174.0,
            },
            scaling: ScalingConfig {
                within_law: CurveExponents { z1: 0.48, z2: 0.48, z3_slo: 0.48 },
                beyond_law: CurveExponents { z1: 1.5, z2: 1.5, z3_slo: 1.5 },
                offset: OffsetConvention::Verbatim,
                sweep_first_antennas: 16,
                sweep_points: 20,
                sweep_drops: 4,
                sweep: default_sweep(),
            },
            validation: ValidationConfig {
                cells: 2,
                ues_per_cell: 2,
                subarrays: 2,
                antennas: 4,
                pilot_symbols: 2,
                dl_symbols: 4,
                gain_db_min: -10.0,
                gain_db_max: 0.0,
                z_bound: 3.0,
                gate: 0.95,
            },
        }
    }

    /// Sixteen cells with fifteen UEs each; meant for offline runs.
    pub fn large() -> Self {
        let mut c = Self::desk();
        c.scenario.cells_per_side = 4;
        c.scenario.ues_per_cell = 15;
        c.scenario.antennas = vec![16, 32, 64, 128, 256, 512];
        c.frame = FrameConfig { coherence_symbols: 300, pilot_symbols: 15, ul_symbols: 0, dl_symbols: 285 };
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "large" => Ok(Self::large()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or large)"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        let s = &self.scenario;
        if s.antennas.is_empty() {
            return Err(Error::Config("antenna list is empty".into()));
        }
        if let Some(n) = s.antennas.iter().find(|&&n| n == 0 || n % s.subarrays != 0) {
            return Err(Error::Config(format!("N = {n} is not a positive multiple of A = {}", s.subarrays)));
        }
        if s.ues_per_cell > self.frame.pilot_symbols {
            return Err(Error::TooManyUes { ues: s.ues_per_cell, pilot_len: self.frame.pilot_symbols });
        }
        if self.scaling.sweep_points < 4 {
            return Err(Error::TooFewPoints { needed: 4, got: self.scaling.sweep_points });
        }
        let dbm = [
            self.power.ul_dbm_per_hz,
            self.power.dl_dbm_per_hz,
            self.hardware.noise_bs_dbm_per_hz,
            self.hardware.noise_ue_dbm_per_hz,
            self.hardware.ideal_noise_dbm_per_hz,
        ];
        if dbm.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("power and noise levels must be finite dBm/Hz values".into()));
        }
        self.resolve().hardware.validate()
    }

    pub fn resolve(&self) -> Resolved {
        let h = &self.hardware;
        let hardware = HardwareProfile {
            kappa_ul: h.kappa_ul,
            kappa_dl: h.kappa_dl,
            delta: h.delta,
            sigma2_bs: dbm_per_hz_to_watts(h.noise_bs_dbm_per_hz),
            sigma2_ue: dbm_per_hz_to_watts(h.noise_ue_dbm_per_hz),
            lo: LoArchitecture::Clo,
        };
        let ideal_noise = dbm_per_hz_to_watts(h.ideal_noise_dbm_per_hz);
        Resolved {
            ul_power: dbm_per_hz_to_watts(self.power.ul_dbm_per_hz),
            dl_power: dbm_per_hz_to_watts(self.power.dl_dbm_per_hz),
            hardware,
            ideal: HardwareProfile::ideal(ideal_noise, ideal_noise, LoArchitecture::Clo),
        }
    }
}

/// One drop: layout, factorized large-scale map (one antenna per subarray)
/// and pilots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub layout: NetworkLayout,
    pub map: LargeScaleMap,
    pub pilots: PilotBook,
}

impl Scenario {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        s.map.validate()?;
        s.pilots.validate()?;
        Ok(s)
    }

    /// Map with `antennas` per BS, split evenly over the subarrays.
    pub fn map_for(&self, antennas: usize) -> Result<LargeScaleMap> {
        let groups = self.map.num_groups();
        if antennas == 0 || antennas % groups != 0 {
            return Err(Error::Config(format!("N = {antennas} is not a positive multiple of A = {groups}")));
        }
        self.map.with_antennas_per_subarray(antennas / groups)
    }

    pub fn dl_powers(&self, dl_power: f64) -> Vec<f64> {
        vec![dl_power; self.map.num_cells() * self.map.ues_per_cell()]
    }
}

pub fn build_drop(config: &ExperimentConfig, drop: usize) -> Result<Scenario> {
    let s = &config.scenario;
    let seed = child_seed(config.seed, Domain::Drop, drop as u64);
    let layout = build_wraparound_layout(s.cells_per_side, s.cell_size, s.subarrays, s.subarray_radius)?;
    let layout = drop_ues(layout, s.ues_per_cell, s.min_ue_distance, seed)?;
    let map = assemble_large_scale(&layout, seed, s.shadow_variance)?;
    let cells = layout.num_cells();
    let ul = config.resolve().ul_power;
    let pilots = fourier_pilot_book(
        config.frame.pilot_symbols,
        s.ues_per_cell,
        cells,
        &vec![ul; cells * s.ues_per_cell],
        &s.pilot_reuse,
    )?;
    Ok(Scenario { layout, map, pilots })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// validation

/// The synthetic oracle instance described by `config.validation`.
pub fn synthetic_instance(config: &ExperimentConfig) -> Result<(LargeScaleMap, PilotBook, FrameConfig)> {
    let v = &config.validation;
    if v.antennas > VALIDATION_MAX_ANTENNAS || v.pilot_symbols > VALIDATION_MAX_PILOTS || v.cells > VALIDATION_MAX_CELLS {
        return Err(Error::ConfigTooLarge(format!(
            "N = {}, B = {}, L = {} (limits {VALIDATION_MAX_ANTENNAS}, {VALIDATION_MAX_PILOTS}, {VALIDATION_MAX_CELLS})",
            v.antennas, v.pilot_symbols, v.cells
        )));
    }
    if v.subarrays == 0 || v.antennas % v.subarrays != 0 {
        return Err(Error::Config("validation antennas must split evenly over subarrays".into()));
    }
    if !(v.gain_db_min <= v.gain_db_max) {
        return Err(Error::Config("validation gain range is empty".into()));
    }
    let mut rng = stream(config.seed, Domain::Synthetic, 0);
    let count = v.cells * v.cells * v.ues_per_cell * v.subarrays;
    let gains = (0..count)
        .map(|_| {
            let db = if v.gain_db_max > v.gain_db_min { rng.random_range(v.gain_db_min..v.gain_db_max) } else { v.gain_db_min };
            10f64.powf(db / 10.0)
        })
        .collect();
    let map = LargeScaleMap::factorized(v.cells, v.ues_per_cell, v.subarrays, v.antennas / v.subarrays, gains)?;
    let ul = config.resolve().ul_power;
    let book = fourier_pilot_book(
        v.pilot_symbols,
        v.ues_per_cell,
        v.cells,
        &vec![ul; v.cells * v.ues_per_cell],
        &config.scenario.pilot_reuse_for(v.cells, v.ues_per_cell),
    )?;
    let frame = FrameConfig::new(v.pilot_symbols + v.dl_symbols, v.pilot_symbols, 0, v.dl_symbols)?;
    Ok((map, book, frame))
}

impl ScenarioConfig {
    /// The reuse pattern for a different `(L, K)`; explicit assignments only
    /// carry over when the shape matches.
    fn pilot_reuse_for(&self, cells: usize, ues: usize) -> PilotReuse {
        match &self.pilot_reuse {
            PilotReuse::Assigned(cols) if cols.len() == cells * ues => self.pilot_reuse.clone(),
            _ => PilotReuse::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutcome {
    pub report: OracleReport,
    pub fraction_within: f64,
    /// `None` for a dry run.
    pub passed: Option<bool>,
    pub csv_path: PathBuf,
}

pub const VALIDATION_CSV: &str = "validation.csv";
pub const CONFIG_ECHO: &str = "config.toml";

/// Compares every closed-form expectation with the Monte Carlo oracle on the
/// synthetic instance. With `trials == 0` only the header and the config
/// echo are written.
pub fn run_validation(config: &ExperimentConfig) -> Result<ValidationOutcome> {
    let (map, book, frame) = synthetic_instance(config)?;
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    write_file(&dir.join(CONFIG_ECHO), config.to_toml_string()?.as_bytes())?;
    let csv_path = dir.join(VALIDATION_CSV);
    if config.trials == 0 {
        write_oracle_csv(fs::File::create(&csv_path)?, &[])?;
        return Ok(ValidationOutcome { report: OracleReport::default(), fraction_within: 1.0, passed: None, csv_path });
    }
    let hw = config.resolve().hardware;
    let times: Vec<i64> = frame.dl_times().collect();
    let report = empirical_sinr_terms(
        &map,
        &book,
        &hw,
        &frame,
        &times,
        &[LoArchitecture::Clo, LoArchitecture::Slo],
        config.trials,
        config.seed,
    )?;
    report.write_csv(fs::File::create(&csv_path)?)?;
    let fraction_within = report.fraction_within(config.validation.z_bound);
    Ok(ValidationOutcome {
        passed: Some(fraction_within >= config.validation.gate),
        fraction_within,
        report,
        csv_path,
    })
}

// ---------------------------------------------------------------------------
// figure sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curve {
    Ideal,
    Fixed,
    WithinLaw,
    BeyondLaw,
}

impl Curve {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ideal => "ideal",
            Self::Fixed => "fixed",
            Self::WithinLaw => "within_law",
            Self::BeyondLaw => "beyond_law",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub curve: Curve,
    pub lo: LoArchitecture,
    pub exponents: ScalingExponents,
}

/// Curves of the figure sweep in output order. The ideal curve is evaluated
/// once (both branches coincide without phase noise).
pub fn figure_curves(config: &ExperimentConfig) -> Vec<CurveSpec> {
    let r = config.resolve();
    let mut out = vec![CurveSpec { curve: Curve::Ideal, lo: LoArchitecture::Clo, exponents: ScalingExponents::fixed(r.ideal) }];
    for lo in [LoArchitecture::Clo, LoArchitecture::Slo] {
        let base = r.hardware.with_lo(lo);
        out.push(CurveSpec { curve: Curve::Fixed, lo, exponents: ScalingExponents::fixed(base) });
        for (curve, e) in [(Curve::WithinLaw, config.scaling.within_law), (Curve::BeyondLaw, config.scaling.beyond_law)] {
            let z3 = if lo == LoArchitecture::Slo { e.z3_slo } else { 0.0 };
            out.push(CurveSpec { curve, lo, exponents: ScalingExponents { z1: e.z1, z2: e.z2, z3, base } });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub curve: Curve,
    pub lo: LoArchitecture,
    pub antennas: usize,
    /// Mean of `R_jk` over all UEs, cells and drops (bit/s/Hz).
    pub spectral_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FigureResult {
    pub rows: Vec<FigureRow>,
}

impl FigureResult {
    pub fn value(&self, curve: Curve, lo: LoArchitecture, antennas: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.curve == curve && (r.lo == lo || curve == Curve::Ideal) && r.antennas == antennas)
            .map(|r| r.spectral_efficiency)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["curve", "lo", "N", "spectral_efficiency"])?;
        for r in &self.rows {
            let lo = if r.curve == Curve::Ideal { "any".to_string() } else { r.lo.to_string() };
            w.write_record([r.curve.as_str().to_string(), lo, r.antennas.to_string(), r.spectral_efficiency.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const FIGURE_CSV: &str = "figure3.csv";
pub const FIGURE_SCRIPT: &str = "plot_figure3.py";

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot average DL spectral efficiency per UE against N from figure3.csv."""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "figure3.csv"
curves = defaultdict(list)
with open(path, newline="") as f:
    for row in csv.DictReader(f):
        curves[(row["curve"], row["lo"])].append((int(row["N"]), float(row["spectral_efficiency"])))

styles = {"clo": "--", "slo": "-", "any": ":"}
fig, ax = plt.subplots(figsize=(6, 4))
for (curve, lo), pts in sorted(curves.items()):
    pts.sort()
    ax.plot([p[0] for p in pts], [p[1] for p in pts], styles.get(lo, "-"), marker="o", label=f"{curve} ({lo})")
ax.set_xscale("log", base=2)
ax.set_xlabel("Number of BS antennas N")
ax.set_ylabel("Average spectral efficiency per UE [bit/s/Hz]")
ax.grid(True, alpha=0.3)
ax.legend(fontsize=8)
fig.tight_layout()
out = path.rsplit(".", 1)[0] + ".png"
fig.savefig(out, dpi=150)
print(out)
"#;

/// Mean per-UE spectral efficiency for every curve and `N`, over all drops.
pub fn figure3(config: &ExperimentConfig) -> Result<FigureResult> {
    config.validate()?;
    if config.drops == 0 {
        return Err(Error::Config("need at least one drop".into()));
    }
    let curves = figure_curves(config);
    let dl = config.resolve().dl_power;
    let antennas = &config.scenario.antennas;
    // [drop][curve][n] → mean rate over UEs
    let per_drop = (0..config.drops)
        .into_par_iter()
        .map(|d| {
            let scenario = build_drop(config, d)?;
            let powers = scenario.dl_powers(dl);
            curves
                .iter()
                .map(|c| {
                    antennas
                        .iter()
                        .map(|&n| {
                            let hw = scale_hardware(&c.exponents, n);
                            let ev = MrtEvaluator::new(&scenario.map_for(n)?, &scenario.pilots, hw, config.frame)?;
                            let rates = ev.rates(&powers, TimeSampling::Every)?;
                            Ok(rates.iter().sum::<f64>() / rates.len() as f64)
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(curves.len() * antennas.len());
    for (ci, c) in curves.iter().enumerate() {
        for (ni, &n) in antennas.iter().enumerate() {
            let total: f64 = per_drop.iter().map(|d| d[ci][ni]).sum();
            rows.push(FigureRow { curve: c.curve, lo: c.lo, antennas: n, spectral_efficiency: total / config.drops as f64 });
        }
    }
    Ok(FigureResult { rows })
}

/// [`figure3`] plus its CSV and a standalone plot script.
pub fn run_figure3(config: &ExperimentConfig) -> Result<FigureResult> {
    let result = figure3(config)?;
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    result.write_csv(fs::File::create(dir.join(FIGURE_CSV))?)?;
    write_file(&dir.join(FIGURE_SCRIPT), PLOT_SCRIPT.as_bytes())?;
    Ok(result)
}

// ---------------------------------------------------------------------------
// scaling sweep

pub const SCALING_CSV: &str = "scaling.csv";

/// Mean SINR over all UEs at the last DL symbol.
fn mean_sinr_last(ev: &MrtEvaluator, powers: &[f64]) -> Result<f64> {
    let grid = ev.sinr_grid(&[ev.frame().last_dl()], powers)?;
    Ok(grid[0].iter().sum::<f64>() / grid[0].len() as f64)
}

/// SINR trajectories over a doubling grid of `N` for each configured case,
/// averaged over `sweep_drops` drops, with trend and scaling-law verdicts.
pub fn scaling_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let sc = &config.scaling;
    let a = config.scenario.subarrays;
    let first = sc.sweep_first_antennas.div_ceil(a) * a;
    let grid = doubling_grid(first, sc.sweep_points);
    let drops = sc.sweep_drops.max(1);
    let dl = config.resolve().dl_power;
    let base = config.resolve().hardware;
    let scenarios = (0..drops).map(|d| build_drop(config, d)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for case in &sc.sweep {
        let ex = ScalingExponents { z1: case.z1, z2: case.z2, z3: case.z3, base: base.with_lo(case.lo) };
        ex.validate()?;
        let trajectory = grid
            .par_iter()
            .map(|&n| {
                let hw = scale_hardware(&ex, n);
                let mut total = 0.0;
                for s in &scenarios {
                    let ev = MrtEvaluator::new(&s.map_for(n)?, &s.pilots, hw, config.frame)?;
                    total += mean_sinr_last(&ev, &s.dl_powers(dl))?;
                }
                Ok(total / drops as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        let asymptote = if ex.is_fixed() {
            let mut total = 0.0;
            for s in &scenarios {
                let asym = AsymptoticEvaluator::new(&s.map, &s.pilots, config.frame, &ex.base)?;
                let t = config.frame.last_dl();
                let powers = s.dl_powers(dl);
                let users = s.map.num_cells() * s.map.ues_per_cell();
                let ues = s.map.ues_per_cell();
                let mut sum = 0.0;
                for i in 0..users {
                    sum += asym.point(i / ues, i % ues, t, &powers)?.sinr;
                }
                total += sum / users as f64;
            }
            Some(total / drops as f64)
        } else {
            None
        };
        let classification = trend_classifier(&trajectory)?;
        let verdict = scaling_law_check(&ex, &config.frame, case.lo, sc.offset);
        for (&n, &sinr) in grid.iter().zip(&trajectory) {
            rows.push(SweepRow {
                antennas: n,
                lo: case.lo,
                z1: case.z1,
                z2: case.z2,
                z3: case.z3,
                sinr,
                asymptote,
                classification,
                law_holds: verdict.holds,
                law_margin: verdict.margin,
            });
        }
    }
    Ok(rows)
}

pub fn run_scaling_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let rows = scaling_sweep(config)?;
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    write_sweep_csv(fs::File::create(dir.join(SCALING_CSV))?, &rows)?;
    Ok(rows)
}

/// Classification of each sweep case, in configuration order.
pub fn sweep_classifications(rows: &[SweepRow]) -> Vec<(SweepCase, Trend, bool)> {
    let mut out: Vec<(SweepCase, Trend, bool)> = Vec::new();
    for r in rows {
        let case = SweepCase { z1: r.z1, z2: r.z2, z3: r.z3, lo: r.lo };
        if out.last().map(|(c, _, _)| *c != case).unwrap_or(true) {
            out.push((case, r.classification, r.law_holds));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// single-point query

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateQuery {
    pub drop: usize,
    pub antennas: usize,
    pub cell: usize,
    pub ue: usize,
    pub t: i64,
    pub lo: LoArchitecture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutcome {
    pub query: EstimateQuery,
    pub hardware: HardwareProfile,
    pub point: SinrPoint,
    pub rate: f64,
    pub asymptote: AsymptoticPoint,
}

pub const ESTIMATE_JSON: &str = "estimate.json";

/// Closed-form SINR breakdown, rate and large-array limit for one UE on
/// `scenario` (or on `config`'s drop when `None`).
pub fn estimate(config: &ExperimentConfig, query: &EstimateQuery, scenario: Option<&Scenario>) -> Result<EstimateOutcome> {
    config.validate()?;
    let owned;
    let scenario = match scenario {
        Some(s) => s,
        None => {
            owned = build_drop(config, query.drop)?;
            &owned
        }
    };
    let map = &scenario.map;
    if query.cell >= map.num_cells() || query.ue >= map.ues_per_cell() {
        return Err(Error::DimensionMismatch(format!("UE ({}, {}) does not exist", query.cell, query.ue)));
    }
    let hardware = config.resolve().hardware.with_lo(query.lo);
    let powers = scenario.dl_powers(config.resolve().dl_power);
    let ev = MrtEvaluator::new(&scenario.map_for(query.antennas)?, &scenario.pilots, hardware, config.frame)?;
    let point = ev.sinr_point(query.cell, query.ue, query.t, &powers)?;
    let rate = ev.rates(&powers, TimeSampling::Every)?[query.cell * map.ues_per_cell() + query.ue];
    let asymptote = AsymptoticEvaluator::new(map, &scenario.pilots, config.frame, &hardware)?.point(
        query.cell,
        query.ue,
        query.t,
        &powers,
    )?;
    Ok(EstimateOutcome { query: *query, hardware, point, rate, asymptote })
}

pub fn run_estimate(config: &ExperimentConfig, query: &EstimateQuery, scenario: Option<&Scenario>) -> Result<EstimateOutcome> {
    let outcome = estimate(config, query, scenario)?;
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    write_file(&dir.join(ESTIMATE_JSON), serde_json::to_string_pretty(&outcome)?.as_bytes())?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tmp_config(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::desk();
        c.output_dir = dir.to_path_buf();
        c.drops = 2;
        c.scenario.antennas = vec![16, 32];
        c
    }

    #[test]
    fn unit_conversion_golden() {
        assert_relative_eq!(dbm_per_hz_to_watts(-50.0), 1e-8, max_relative = 1e-12);
        assert_relative_eq!(dbm_per_hz_to_watts(-169.0), 1.2589e-20, max_relative = 1e-4);
        assert_relative_eq!(dbm_per_hz_to_watts(30.0), 1.0);
    }

    #[test]
    fn config_round_trip() {
        for c in [ExperimentConfig::desk(), ExperimentConfig::large()] {
            let text = c.to_toml_string().unwrap();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_toml_string().unwrap(), text);
        }
    }

    #[test]
    fn config_rejects_broken_frames_and_unknown_keys() {
        let mut c = ExperimentConfig::desk();
        c.frame.dl_symbols += 1;
        assert!(c.validate().is_err());
        let text = ExperimentConfig::desk().to_toml_string().unwrap().replace("seed =", "sede =");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let mut c = ExperimentConfig::desk();
        c.scenario.antennas = vec![18];
        assert!(c.validate().is_err());
    }

    #[test]
    fn validation_guard() {
        let mut c = ExperimentConfig::desk();
        c.validation.antennas = 16;
        c.validation.subarrays = 2;
        assert!(matches!(synthetic_instance(&c), Err(Error::ConfigTooLarge(_))));
        let mut c = ExperimentConfig::desk();
        c.validation.cells = 3;
        assert!(matches!(synthetic_instance(&c), Err(Error::ConfigTooLarge(_))));
    }

    #[test]
    fn dry_run_writes_header_and_echo() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tmp_config(dir.path());
        c.trials = 0;
        let out = run_validation(&c).unwrap();
        assert_eq!(out.passed, None);
        let csv = fs::read_to_string(dir.path().join(VALIDATION_CSV)).unwrap();
        assert_eq!(csv.trim(), "expectation,l,m,j,k,t,lo,closed_form,estimate,std_error,z");
        let echo = ExperimentConfig::load(&dir.path().join(CONFIG_ECHO)).unwrap();
        assert_eq!(echo, c);
    }

    #[test]
    fn zero_delta_branches_identical_in_closed_form() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tmp_config(dir.path());
        c.hardware.delta = 0.0;
        c.trials = 1000;
        let out = run_validation(&c).unwrap();
        let half = out.report.entries.len() / 2;
        let (clo, slo) = out.report.entries.split_at(half);
        for (a, b) in clo.iter().zip(slo) {
            assert_eq!((a.expectation, a.l, a.m, a.j, a.k, a.t), (b.expectation, b.l, b.m, b.j, b.k, b.t));
            assert_relative_eq!(a.closed_form, b.closed_form, max_relative = 1e-12);
        }
    }

    #[test]
    fn scenario_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = tmp_config(dir.path());
        let s = build_drop(&c, 1).unwrap();
        let path = dir.path().join("scenario.json");
        s.save_json(&path).unwrap();
        assert_eq!(Scenario::load_json(&path).unwrap(), s);
        let q = EstimateQuery { drop: 1, antennas: 32, cell: 2, ue: 1, t: 100, lo: LoArchitecture::Slo };
        assert_eq!(estimate(&c, &q, Some(&s)).unwrap(), estimate(&c, &q, None).unwrap());
    }

    #[test]
    fn figure_curves_order_and_ideal_dominates() {
        let dir = tempfile::tempdir().unwrap();
        let c = tmp_config(dir.path());
        let res = run_figure3(&c).unwrap();
        assert_eq!(res.rows.len(), 7 * 2);
        for &n in &c.scenario.antennas {
            let ideal = res.value(Curve::Ideal, LoArchitecture::Clo, n).unwrap();
            for lo in [LoArchitecture::Clo, LoArchitecture::Slo] {
                assert!(ideal >= res.value(Curve::Fixed, lo, n).unwrap());
            }
        }
        assert!(dir.path().join(FIGURE_SCRIPT).exists());
    }

    #[test]
    fn estimate_rejects_bad_queries() {
        let dir = tempfile::tempdir().unwrap();
        let c = tmp_config(dir.path());
        let q = EstimateQuery { drop: 0, antennas: 16, cell: 9, ue: 0, t: 10, lo: LoArchitecture::Clo };
        assert!(estimate(&c, &q, None).is_err());
        let q = EstimateQuery { cell: 0, t: 1, ..q };
        assert!(matches!(estimate(&c, &q, None), Err(Error::OutOfWindow { .. })));
    }
}
