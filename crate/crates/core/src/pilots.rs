//! Pilot sequences and their gram matrices `X_ℓm`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How DFT columns are handed out to `(cell, UE)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotReuse {
    /// UE `k` of every cell uses column `k`.
    Full,
    /// Explicit column per `(l, k)`, laid out `l * K + k`.
    Assigned(Vec<usize>),
}

/// Constant-modulus pilot sequences, one `B`-vector per `(cell, UE)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotBook {
    pilot_len: usize,
    cells: usize,
    ues_per_cell: usize,
    sequences: Vec<Vec<Complex64>>,
    powers: Vec<f64>,
}

impl PilotBook {
    /// Builds a book from explicit sequences laid out `l * K + k`. Every
    /// symbol of a sequence must have energy equal to its UE's power.
    pub fn from_sequences(
        cells: usize,
        ues_per_cell: usize,
        sequences: Vec<Vec<Complex64>>,
        powers: Vec<f64>,
    ) -> Result<Self> {
        let pilot_len = sequences.first().map_or(0, Vec::len);
        let book = Self { pilot_len, cells, ues_per_cell, sequences, powers };
        book.validate()?;
        Ok(book)
    }

    pub fn validate(&self) -> Result<()> {
        let count = self.cells * self.ues_per_cell;
        if count == 0 || self.pilot_len == 0 {
            return Err(Error::DimensionMismatch("empty pilot book".into()));
        }
        if self.sequences.len() != count || self.powers.len() != count {
            return Err(Error::DimensionMismatch(format!(
                "expected {count} sequences and powers, got {} and {}",
                self.sequences.len(),
                self.powers.len()
            )));
        }
        for (seq, &p) in self.sequences.iter().zip(&self.powers) {
            if seq.len() != self.pilot_len {
                return Err(Error::DimensionMismatch("pilot sequences differ in length".into()));
            }
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::Config(format!("invalid pilot power {p}")));
            }
            if seq.iter().any(|x| (x.norm_sqr() - p).abs() > 1e-9 * p.max(f64::MIN_POSITIVE)) {
                return Err(Error::Config("pilot symbols must have constant energy".into()));
            }
        }
        Ok(())
    }

    pub fn pilot_len(&self) -> usize {
        self.pilot_len
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    pub fn ues_per_cell(&self) -> usize {
        self.ues_per_cell
    }

    /// `x̃_lk`.
    pub fn sequence(&self, l: usize, k: usize) -> &[Complex64] {
        &self.sequences[l * self.ues_per_cell + k]
    }

    /// `p_lk^UL`.
    pub fn power(&self, l: usize, k: usize) -> f64 {
        self.powers[l * self.ues_per_cell + k]
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }
}

/// Scaled DFT columns as pilots: UE `(l, k)` sends `√p_lk` times column
/// `reuse(l, k)` of the `B`-point DFT matrix.
pub fn fourier_pilot_book(
    pilot_len: usize,
    ues_per_cell: usize,
    cells: usize,
    powers: &[f64],
    reuse: &PilotReuse,
) -> Result<PilotBook> {
    if pilot_len == 0 || ues_per_cell == 0 || cells == 0 {
        return Err(Error::DimensionMismatch("pilot book needs B, K, L >= 1".into()));
    }
    if ues_per_cell > pilot_len {
        return Err(Error::TooManyUes { ues: ues_per_cell, pilot_len });
    }
    let count = cells * ues_per_cell;
    if powers.len() != count {
        return Err(Error::DimensionMismatch(format!("expected {count} powers, got {}", powers.len())));
    }
    let columns: Vec<usize> = match reuse {
        PilotReuse::Full => (0..cells).flat_map(|_| 0..ues_per_cell).collect(),
        PilotReuse::Assigned(cols) => {
            if cols.len() != count {
                return Err(Error::DimensionMismatch(format!(
                    "expected {count} pilot assignments, got {}",
                    cols.len()
                )));
            }
            if let Some(c) = cols.iter().find(|&&c| c >= pilot_len) {
                return Err(Error::Config(format!("pilot column {c} out of range")));
            }
            cols.clone()
        }
    };
    let sequences = columns
        .iter()
        .zip(powers)
        .map(|(&c, &p)| {
            let amp = p.sqrt();
            (0..pilot_len)
                .map(|b| {
                    let angle = -std::f64::consts::TAU * ((b * c) % pilot_len) as f64 / pilot_len as f64;
                    Complex64::from_polar(amp, angle)
                })
                .collect()
        })
        .collect();
    PilotBook::from_sequences(cells, ues_per_cell, sequences, powers.to_vec())
}

/// Gram matrix `X_ℓm` of one UE's pilot under phase noise and UL distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotGram {
    pub matrix: DMatrix<Complex64>,
    pub kappa_ul: f64,
    pub delta: f64,
    pub power: f64,
}

/// Builds `X_ℓm`: diagonal `p(1 + κ²)`, off-diagonal
/// `x(b1) x*(b2) e^(-δ|b1 - b2|/2)`, with pilot `b` sent at symbol time `b`.
pub fn pilot_gram(book: &PilotBook, cell: usize, ue: usize, delta: f64, kappa_ul: f64) -> PilotGram {
    let x = book.sequence(cell, ue);
    let p = book.power(cell, ue);
    let b = x.len();
    let matrix = DMatrix::from_fn(b, b, |r, c| {
        if r == c {
            Complex64::new(p * (1.0 + kappa_ul * kappa_ul), 0.0)
        } else {
            let decay = (-delta * r.abs_diff(c) as f64 / 2.0).exp();
            x[r] * x[c].conj() * decay
        }
    });
    PilotGram { matrix, kappa_ul, delta, power: p }
}

/// Grams of every `(ℓ, m)` in the book, laid out `ℓ * K + m`.
pub fn all_grams(book: &PilotBook, delta: f64, kappa_ul: f64) -> Vec<PilotGram> {
    (0..book.num_cells())
        .flat_map(|l| (0..book.ues_per_cell()).map(move |m| (l, m)))
        .map(|(l, m)| pilot_gram(book, l, m, delta, kappa_ul))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramDiagnostics {
    /// `max |X - κ² p I - x x^H|`; zero exactly when δ = 0.
    pub rank_one_deviation: f64,
    /// `max |X - X^H|`.
    pub hermitian_residual: f64,
}

pub fn gram_identities(gram: &PilotGram, book: &PilotBook, cell: usize, ue: usize) -> GramDiagnostics {
    let x = book.sequence(cell, ue);
    let b = x.len();
    let mut rank_one_deviation = 0f64;
    let mut hermitian_residual = 0f64;
    for r in 0..b {
        for c in 0..b {
            let mut expected = x[r] * x[c].conj();
            if r == c {
                expected += gram.kappa_ul * gram.kappa_ul * gram.power;
            }
            rank_one_deviation = rank_one_deviation.max((gram.matrix[(r, c)] - expected).norm());
            hermitian_residual =
                hermitian_residual.max((gram.matrix[(r, c)] - gram.matrix[(c, r)].conj()).norm());
        }
    }
    GramDiagnostics { rank_one_deviation, hermitian_residual }
}
