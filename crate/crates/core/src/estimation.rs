//! LMMSE estimation of the phase-rotated effective channels.
//!
//! With diagonal channel covariances the `BN × BN` pilot covariance `Φ_j` is
//! block diagonal after reordering to antenna-major, so it is kept as one
//! `B × B` block per antenna group and never materialised. Each block is
//! factored once with Cholesky; antennas of the same group share the factor
//! and every solve against it.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::LargeScaleMap;
use crate::pilots::PilotGram;

/// `D_δ(t) = diag(e^(-δ|t-1|/2), …, e^(-δ|t-B|/2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDecay {
    pub t: i64,
    pub delta: f64,
    pub d: Vec<f64>,
}

impl PhaseDecay {
    /// `D_δ(t) x̃` for a pilot sequence.
    pub fn apply(&self, pilot: &[Complex64]) -> DVector<Complex64> {
        debug_assert_eq!(pilot.len(), self.d.len());
        DVector::from_iterator(pilot.len(), pilot.iter().zip(&self.d).map(|(x, d)| x * *d))
    }
}

/// Symbol times are 1-based: pilots occupy `1..=B`.
pub fn phase_decay(t: i64, pilot_len: usize, delta: f64) -> PhaseDecay {
    let d = (1..=pilot_len as i64)
        .map(|b| (-delta * (t - b).unsigned_abs() as f64 / 2.0).exp())
        .collect();
    PhaseDecay { t, delta, d }
}

/// Per-group blocks of `Φ_j = Σ_ℓm X_ℓm ⊗ Λ_jℓm + σ²_BS I`.
#[derive(Debug, Clone)]
pub struct PhiBlocks {
    pub cell: usize,
    group_size: usize,
    blocks: Vec<DMatrix<Complex64>>,
    factors: Vec<Cholesky<Complex64, Dyn>>,
}

impl PhiBlocks {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn pilot_len(&self) -> usize {
        self.blocks[0].nrows()
    }

    /// Antennas sharing each block.
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn block(&self, g: usize) -> &DMatrix<Complex64> {
        &self.blocks[g]
    }

    pub fn block_of_antenna(&self, n: usize) -> usize {
        n / self.group_size
    }

    /// `(Φ_j^(g))^(-1) rhs`.
    pub fn solve(&self, g: usize, rhs: &DVector<Complex64>) -> DVector<Complex64> {
        self.factors[g].solve(rhs)
    }
}

/// Assembles the pilot covariance blocks of BS `cell`. `grams` is laid out
/// `ℓ * K + m` like [`crate::pilots::all_grams`].
pub fn assemble_phi(
    map: &LargeScaleMap,
    grams: &[PilotGram],
    sigma2_bs: f64,
    cell: usize,
) -> Result<PhiBlocks> {
    let cells = map.num_cells();
    let ues = map.ues_per_cell();
    if grams.len() != cells * ues {
        return Err(Error::DimensionMismatch(format!(
            "expected {} pilot grams, got {}",
            cells * ues,
            grams.len()
        )));
    }
    let b = grams[0].matrix.nrows();
    if grams.iter().any(|g| g.matrix.nrows() != b || g.matrix.ncols() != b) {
        return Err(Error::DimensionMismatch("pilot grams differ in size".into()));
    }
    let mut blocks = Vec::with_capacity(map.num_groups());
    let mut factors = Vec::with_capacity(map.num_groups());
    for g in 0..map.num_groups() {
        let mut block = DMatrix::<Complex64>::identity(b, b) * Complex64::new(sigma2_bs, 0.0);
        for l in 0..cells {
            for m in 0..ues {
                let lambda = map.group_gain(cell, l, m, g);
                if lambda != 0.0 {
                    block += &grams[l * ues + m].matrix * Complex64::new(lambda, 0.0);
                }
            }
        }
        let factor = Cholesky::new(block.clone()).ok_or(Error::SingularPhi { cell, block: g })?;
        blocks.push(block);
        factors.push(factor);
    }
    Ok(PhiBlocks { cell, group_size: map.group_size(), blocks, factors })
}

fn check_row(phi: &PhiBlocks, lambda_row: &[f64], pilot: &[Complex64]) -> Result<()> {
    if lambda_row.len() != phi.num_blocks() * phi.group_size {
        return Err(Error::DimensionMismatch(format!(
            "{} attenuations for {} antennas",
            lambda_row.len(),
            phi.num_blocks() * phi.group_size
        )));
    }
    if pilot.len() != phi.pilot_len() {
        return Err(Error::DimensionMismatch("pilot length does not match Φ".into()));
    }
    Ok(())
}

/// Per-group `Φ^(-1) D_δ(t) x̃`.
fn solved_pilots(phi: &PhiBlocks, decay: &PhaseDecay, pilot: &[Complex64]) -> (DVector<Complex64>, Vec<DVector<Complex64>>) {
    let v = decay.apply(pilot);
    let solved = (0..phi.num_blocks()).map(|g| phi.solve(g, &v)).collect();
    (v, solved)
}

/// LMMSE estimate of `h_jlk(t)` from the pilot observation `psi` (`B × N`,
/// column `n` holds the `B` pilot samples of antenna `n`):
/// `ĥ^(n)(t) = λ^(n) (D_δ(t) x̃)^H (Φ^(n))^(-1) ψ^(n)`.
pub fn lmmse_estimate(
    psi: &DMatrix<Complex64>,
    phi: &PhiBlocks,
    decay: &PhaseDecay,
    lambda_row: &[f64],
    pilot: &[Complex64],
) -> Result<Vec<Complex64>> {
    check_row(phi, lambda_row, pilot)?;
    if psi.nrows() != pilot.len() || psi.ncols() != lambda_row.len() {
        return Err(Error::DimensionMismatch(format!(
            "pilot observation is {}x{}, expected {}x{}",
            psi.nrows(),
            psi.ncols(),
            pilot.len(),
            lambda_row.len()
        )));
    }
    let (_, solved) = solved_pilots(phi, decay, pilot);
    Ok(lambda_row
        .iter()
        .enumerate()
        .map(|(n, &lambda)| {
            if lambda == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let s = &solved[phi.block_of_antenna(n)];
            lambda * s.dotc(&psi.column(n))
        })
        .collect())
}

/// Second moments `q^(n)(t) = E|ĥ^(n)(t)|²` and error variances
/// `c^(n)(t) = λ^(n) - q^(n)(t)` of the LMMSE estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateStats {
    pub q: Vec<f64>,
    pub c: Vec<f64>,
}

pub fn estimate_stats(
    phi: &PhiBlocks,
    decay: &PhaseDecay,
    lambda_row: &[f64],
    pilot: &[Complex64],
) -> Result<EstimateStats> {
    check_row(phi, lambda_row, pilot)?;
    let (v, solved) = solved_pilots(phi, decay, pilot);
    let quad: Vec<f64> = solved.iter().map(|s| v.dotc(s).re.max(0.0)).collect();
    let mut q = Vec::with_capacity(lambda_row.len());
    let mut c = Vec::with_capacity(lambda_row.len());
    for (n, &lambda) in lambda_row.iter().enumerate() {
        let qn = (lambda * lambda * quad[phi.block_of_antenna(n)]).min(lambda);
        q.push(qn);
        c.push(lambda - qn);
    }
    Ok(EstimateStats { q, c })
}

/// Diagonal of the error covariance `C_jlk(t)`.
pub fn error_covariance(
    phi: &PhiBlocks,
    decay: &PhaseDecay,
    lambda_row: &[f64],
    pilot: &[Complex64],
) -> Result<Vec<f64>> {
    estimate_stats(phi, decay, lambda_row, pilot).map(|s| s.c)
}

/// Writes per-antenna `q` and `c` values as CSV for triage.
/// Each entry is `(j, l, k, t, stats)`.
pub fn write_estimate_stats_csv<W: Write>(
    writer: W,
    entries: &[(usize, usize, usize, i64, EstimateStats)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cell", "ue_cell", "ue", "t", "antenna", "q", "c"])?;
    for (j, l, k, t, stats) in entries {
        for (n, (q, c)) in stats.q.iter().zip(&stats.c).enumerate() {
            w.write_record([
                j.to_string(),
                l.to_string(),
                k.to_string(),
                t.to_string(),
                n.to_string(),
                q.to_string(),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilots::{all_grams, fourier_pilot_book, PilotBook, PilotReuse};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, cells: usize, ues: usize, antennas: usize) -> LargeScaleMap {
        let gains = (0..cells * cells * ues * antennas).map(|_| rng.random_range(0.05..1.0)).collect();
        LargeScaleMap::flat(cells, ues, antennas, gains).unwrap()
    }

    fn random_book(rng: &mut ChaCha8Rng, cells: usize, ues: usize, b: usize) -> PilotBook {
        let powers: Vec<f64> = (0..cells * ues).map(|_| rng.random_range(0.5..2.0)).collect();
        let seqs = powers
            .iter()
            .map(|&p| (0..b).map(|_| Complex64::from_polar(p.sqrt(), rng.random_range(0.0..6.3))).collect())
            .collect();
        PilotBook::from_sequences(cells, ues, seqs, powers).unwrap()
    }

    /// Literal `Φ_j` in `b * N + n` ordering.
    fn literal_phi(map: &LargeScaleMap, grams: &[PilotGram], sigma2: f64, j: usize) -> DMatrix<Complex64> {
        let n = map.num_antennas();
        let b = grams[0].matrix.nrows();
        let mut phi = DMatrix::<Complex64>::identity(b * n, b * n) * Complex64::new(sigma2, 0.0);
        for l in 0..map.num_cells() {
            for m in 0..map.ues_per_cell() {
                let lam = DMatrix::from_diagonal(&DVector::from_iterator(
                    n,
                    map.lambda_row(j, l, m).into_iter().map(|x| Complex64::new(x, 0.0)),
                ));
                phi += grams[l * map.ues_per_cell() + m].matrix.kronecker(&lam);
            }
        }
        phi
    }

    #[test]
    fn decay_examples() {
        assert!(phase_decay(17, 5, 0.0).d.iter().all(|&d| d == 1.0));
        let d = phase_decay(1, 2, 1e-5).d;
        assert_eq!(d[0], 1.0);
        assert_relative_eq!(d[1], (-5e-6f64).exp(), max_relative = 1e-15);
        let far = phase_decay(40, 4, 0.01).d;
        assert!(far.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn scalar_phi_and_noise_only() {
        let book = fourier_pilot_book(1, 1, 1, &[2.0], &PilotReuse::Full).unwrap();
        let grams = all_grams(&book, 0.0, 0.1);
        let map = LargeScaleMap::flat(1, 1, 1, vec![1.0]).unwrap();
        let phi = assemble_phi(&map, &grams, 0.3, 0).unwrap();
        assert_relative_eq!(phi.block(0)[(0, 0)].re, 2.0 * 1.01 + 0.3, max_relative = 1e-15);

        let book = fourier_pilot_book(3, 2, 2, &[1.0; 4], &PilotReuse::Full).unwrap();
        let grams = all_grams(&book, 1e-3, 0.1);
        let map = LargeScaleMap::flat(2, 2, 2, vec![0.0; 16]).unwrap();
        let phi = assemble_phi(&map, &grams, 0.7, 1).unwrap();
        for g in 0..2 {
            assert_eq!(phi.block(g), &(DMatrix::identity(3, 3) * Complex64::new(0.7, 0.0)));
        }
    }

    #[test]
    fn blocks_match_kronecker_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = random_map(&mut rng, 2, 2, 2);
        let book = random_book(&mut rng, 2, 2, 2);
        let grams = all_grams(&book, 0.02, 0.1);
        for j in 0..2 {
            let phi = assemble_phi(&map, &grams, 0.4, j).unwrap();
            let lit = literal_phi(&map, &grams, 0.4, j);
            for b1 in 0..2 {
                for b2 in 0..2 {
                    for n1 in 0..2 {
                        for n2 in 0..2 {
                            let l = lit[(b1 * 2 + n1, b2 * 2 + n2)];
                            let blk = if n1 == n2 { phi.block(n1)[(b1, b2)] } else { Complex64::new(0.0, 0.0) };
                            assert!((l - blk).norm() < 1e-14);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn scalar_lmmse_matches_hand_formula() {
        let (lambda, p, kappa, sigma2) = (0.8, 1.5, 0.1, 0.2);
        let book = fourier_pilot_book(1, 1, 1, &[p], &PilotReuse::Full).unwrap();
        let grams = all_grams(&book, 0.0, kappa);
        let map = LargeScaleMap::flat(1, 1, 1, vec![lambda]).unwrap();
        let phi = assemble_phi(&map, &grams, sigma2, 0).unwrap();
        let decay = phase_decay(3, 1, 0.0);
        let y = Complex64::new(0.3, -1.1);
        let psi = DMatrix::from_element(1, 1, y);
        let x = book.sequence(0, 0)[0];
        let est = lmmse_estimate(&psi, &phi, &decay, &[lambda], book.sequence(0, 0)).unwrap();
        let expected = lambda * x.conj() * y / (lambda * p * (1.0 + kappa * kappa) + sigma2);
        assert!((est[0] - expected).norm() < 1e-15);

        let zero = lmmse_estimate(&DMatrix::zeros(1, 1), &phi, &decay, &[lambda], book.sequence(0, 0)).unwrap();
        assert_eq!(zero[0], Complex64::new(0.0, 0.0));
        let dead = lmmse_estimate(&psi, &phi, &decay, &[0.0], book.sequence(0, 0)).unwrap();
        assert_eq!(dead[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn classical_mmse_error_without_impairments() {
        let (lambda, p, sigma2, b) = (0.6, 2.0, 0.5, 4);
        let book = fourier_pilot_book(b, 3, 1, &[p; 3], &PilotReuse::Full).unwrap();
        let grams = all_grams(&book, 0.0, 0.0);
        let map = LargeScaleMap::flat(1, 3, 2, vec![lambda, lambda, 0.3, 0.9, 0.2, 0.4]).unwrap();
        let phi = assemble_phi(&map, &grams, sigma2, 0).unwrap();
        let c = error_covariance(&phi, &phase_decay(9, b, 0.0), &[lambda, lambda], book.sequence(0, 0)).unwrap();
        let bf = b as f64;
        let expected = lambda - lambda * lambda * p * bf / (lambda * p * bf + sigma2);
        for cn in c {
            assert_relative_eq!(cn, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn noise_limit_and_distance_from_pilots() {
        let book = fourier_pilot_book(3, 1, 1, &[1.0], &PilotReuse::Full).unwrap();
        let grams = all_grams(&book, 0.01, 0.05);
        let map = LargeScaleMap::flat(1, 1, 1, vec![0.7]).unwrap();
        let phi = assemble_phi(&map, &grams, 1e12, 0).unwrap();
        let c = error_covariance(&phi, &phase_decay(4, 3, 0.01), &[0.7], book.sequence(0, 0)).unwrap();
        assert_relative_eq!(c[0], 0.7, max_relative = 1e-9);

        let phi = assemble_phi(&map, &grams, 0.1, 0).unwrap();
        let sweep: Vec<f64> = (4..60)
            .map(|t| error_covariance(&phi, &phase_decay(t, 3, 0.01), &[0.7], book.sequence(0, 0)).unwrap()[0])
            .collect();
        assert!(sweep.windows(2).all(|w| w[1] >= w[0]));
        for s in &sweep {
            assert!((0.0..=0.7).contains(s));
        }
    }

    #[test]
    fn estimates_match_literal_kronecker_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (b, n) in [(1, 1), (2, 3), (3, 4), (4, 3), (2, 6)] {
            let map = random_map(&mut rng, 2, 2, n);
            let book = random_book(&mut rng, 2, 2, b);
            let grams = all_grams(&book, 0.05, 0.2);
            let phi = assemble_phi(&map, &grams, 0.3, 0).unwrap();
            let lit = literal_phi(&map, &grams, 0.3, 0).try_inverse().unwrap();
            let psi = DMatrix::from_fn(b, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let psi_vec = DVector::from_fn(b * n, |i, _| psi[(i / n, i % n)]);
            let decay = phase_decay(b as i64 + 3, b, 0.05);
            for l in 0..2 {
                for k in 0..2 {
                    let row = map.lambda_row(0, l, k);
                    let est = lmmse_estimate(&psi, &phi, &decay, &row, book.sequence(l, k)).unwrap();
                    let v = decay.apply(book.sequence(l, k));
                    // (x̃^H D ⊗ Λ) as an N × BN matrix
                    let left = DMatrix::from_fn(n, b * n, |r, c| {
                        if c % n == r { v[c / n].conj() * row[r] } else { Complex64::new(0.0, 0.0) }
                    });
                    let expected = &left * &lit * &psi_vec;
                    let cov = DMatrix::from_diagonal(&DVector::from_iterator(n, row.iter().map(|&x| Complex64::new(x, 0.0))))
                        - &left * &lit * left.adjoint();
                    let c = error_covariance(&phi, &decay, &row, book.sequence(l, k)).unwrap();
                    for r in 0..n {
                        assert!((est[r] - expected[r]).norm() <= 1e-12 * expected[r].norm().max(1e-300));
                        assert!((cov[(r, r)].re - c[r]).abs() <= 1e-12 * c[r].max(1e-300));
                        for s in 0..n {
                            if s != r {
                                assert!(cov[(r, s)].norm() < 1e-14);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn second_moment_shrinks_with_phase_noise_outside_pilots() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = random_map(&mut rng, 2, 2, 3);
        let book = random_book(&mut rng, 2, 2, 3);
        let mut last = f64::INFINITY;
        for delta in [0.0, 0.001, 0.01, 0.05, 0.2] {
            let grams = all_grams(&book, delta, 0.1);
            let phi = assemble_phi(&map, &grams, 0.2, 1).unwrap();
            let s = estimate_stats(&phi, &phase_decay(8, 3, delta), &map.lambda_row(1, 1, 0), book.sequence(1, 0)).unwrap();
            assert!(s.q[0] <= last + 1e-15);
            last = s.q[0];
        }
    }

    #[test]
    fn csv_dump_has_one_row_per_antenna() {
        let stats = EstimateStats { q: vec![0.1, 0.2], c: vec![0.3, 0.4] };
        let mut out = Vec::new();
        write_estimate_stats_csv(&mut out, &[(0, 1, 2, 5, stats)]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().starts_with("0,1,2,5,1,0.2,0.4"));
    }
}
