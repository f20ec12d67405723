//! Dense linear algebra for rank control: thin SVD, best rank-r projection,
//! the spectrum-based rank criteria, and the two-factor bottleneck split.

mod matrix;
mod svd;

pub use matrix::Matrix;
pub use svd::{thin_svd, SvdFactors, NUMERICAL_RANK_RTOL};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which spectrum rule proposes the new rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankCriterion {
    /// Largest prefix whose share of the singular-value mass stays within beta.
    Energy,
    /// First index whose singular value drops to beta times the largest.
    Hard,
}

impl RankCriterion {
    pub fn select(self, spectrum: &[f64], beta: f64) -> Result<usize> {
        match self {
            RankCriterion::Energy => select_rank_energy(spectrum, beta),
            RankCriterion::Hard => select_rank_hard(spectrum, beta),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RankCriterion::Energy => "energy",
            RankCriterion::Hard => "hard",
        }
    }
}

/// Outcome of one rank-adaptation decision for a single layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDecision {
    pub chosen_rank: usize,
    /// Raw output of the criterion before the retain and quality rules.
    pub proposed_rank: usize,
    pub criterion: RankCriterion,
    pub beta: f64,
    pub spectrum: Vec<f64>,
    pub previous_rank: usize,
}

fn check_rank(r: usize, m: &Matrix) -> Result<()> {
    let max = m.rows().min(m.cols());
    if r == 0 || r > max {
        return Err(Error::RankBounds { rank: r, max });
    }
    Ok(())
}

fn check_spectrum(spectrum: &[f64], beta: f64) -> Result<()> {
    if spectrum.is_empty() {
        return Err(Error::InvalidSpectrum("empty spectrum".into()));
    }
    if spectrum.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidSpectrum(
            "singular values must be finite and positive".into(),
        ));
    }
    if spectrum.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidSpectrum(
            "singular values must be non-increasing".into(),
        ));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidSpectrum(format!(
            "beta {beta} outside (0, 1)"
        )));
    }
    Ok(())
}

/// Best rank-`r` approximation of `m` in Frobenius norm.
pub fn project_rank(m: &Matrix, r: usize) -> Result<Matrix> {
    check_rank(r, m)?;
    Ok(thin_svd(m)?.reconstruct(r))
}

/// `max { l : sum(sigma[..l]) / sum(sigma) <= beta }`, or 1 when no prefix qualifies.
pub fn select_rank_energy(spectrum: &[f64], beta: f64) -> Result<usize> {
    check_spectrum(spectrum, beta)?;
    let total: f64 = spectrum.iter().sum();
    let mut acc = 0.0;
    let mut best = None;
    for (l, s) in spectrum.iter().enumerate() {
        acc += s;
        if acc / total <= beta {
            best = Some(l + 1);
        } else {
            break;
        }
    }
    Ok(best.unwrap_or(1))
}

/// `min { l : sigma[l] / sigma[0] <= beta }`, or the full length when none qualifies.
pub fn select_rank_hard(spectrum: &[f64], beta: f64) -> Result<usize> {
    check_spectrum(spectrum, beta)?;
    let top = spectrum[0];
    Ok(spectrum
        .iter()
        .position(|s| s / top <= beta)
        .map_or(spectrum.len(), |i| i + 1))
}

/// Split `w` into `(w1, w2)` with `w1 = U[:, :r] sqrt(S)` and
/// `w2 = sqrt(S) Vt[:r, :]`, so that `w1 w2` is the rank-`r` projection.
///
/// When `w` has numerical rank below `r_hat` the surplus columns of `w1`
/// (and rows of `w2`) are zero.
pub fn factorize_bottleneck(w: &Matrix, r_hat: usize) -> Result<(Matrix, Matrix)> {
    check_rank(r_hat, w)?;
    Ok(factorize_from_svd(&thin_svd(w)?, w.shape(), r_hat))
}

pub(crate) fn factorize_from_svd(
    f: &SvdFactors,
    shape: (usize, usize),
    r_hat: usize,
) -> (Matrix, Matrix) {
    let (d1, d2) = shape;
    let kept = r_hat.min(f.rank());
    let mut w1 = Matrix::zeros(d1, r_hat);
    let mut w2 = Matrix::zeros(r_hat, d2);
    for k in 0..kept {
        let root = f.sigma[k].sqrt();
        for i in 0..d1 {
            w1[(i, k)] = f.u[(i, k)] * root;
        }
        for (dst, src) in w2.row_mut(k).iter_mut().zip(f.vt.row(k)) {
            *dst = src * root;
        }
    }
    (w1, w2)
}

/// Relative Frobenius error of truncating `spectrum` to its first `r` values.
pub fn truncation_error(spectrum: &[f64], r: usize) -> f64 {
    let total: f64 = spectrum.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    let tail: f64 = spectrum.iter().skip(r).map(|s| s * s).sum();
    (tail / total).sqrt()
}

/// Limits on how far a single decision may move a layer's rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankGate {
    /// Largest relative Frobenius error a truncation may introduce.
    pub max_truncation_error: f64,
    /// Cuts smaller than this fraction of the current rank are skipped.
    pub min_relative_reduction: f64,
}

impl RankGate {
    /// Leaves the criterion unconstrained.
    pub const OPEN: RankGate = RankGate {
        max_truncation_error: 1.0,
        min_relative_reduction: 0.0,
    };
}

/// Greedy rank decision for one layer.
///
/// The criterion proposes a rank; proposals above `previous_rank` are
/// ignored. The smallest rank whose relative truncation error stays within
/// `gate.max_truncation_error` acts as a floor, so a proposal that would
/// discard too much of the layer falls back to that floor, and to
/// `previous_rank` when no lower rank is accurate enough. A cut that removes
/// less than `gate.min_relative_reduction` of the current rank is not made.
pub fn decide_rank(
    spectrum: &[f64],
    previous_rank: usize,
    criterion: RankCriterion,
    beta: f64,
    gate: RankGate,
) -> Result<RankDecision> {
    let proposed = criterion.select(spectrum, beta)?;
    let floor = (1..=spectrum.len())
        .find(|&r| truncation_error(spectrum, r) <= gate.max_truncation_error)
        .unwrap_or(spectrum.len());
    let mut chosen = proposed.max(floor).min(previous_rank).max(1);
    if ((previous_rank - chosen) as f64) < gate.min_relative_reduction * previous_rank as f64 {
        chosen = previous_rank;
    }
    Ok(RankDecision {
        chosen_rank: chosen,
        proposed_rank: proposed,
        criterion,
        beta,
        spectrum: spectrum.to_vec(),
        previous_rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn energy_criterion_cases() {
        assert_eq!(select_rank_energy(&[1.0, 1.0, 1.0, 1.0], 0.6).unwrap(), 2);
        assert_eq!(select_rank_energy(&[3.0, 1.0], 0.8).unwrap(), 1);
        assert_eq!(select_rank_energy(&[9.0, 0.5, 0.5], 0.5).unwrap(), 1);
    }

    #[test]
    fn hard_criterion_cases() {
        assert_eq!(select_rank_hard(&[10.0, 5.0, 0.5], 0.1).unwrap(), 3);
        assert_eq!(select_rank_hard(&[10.0, 5.0, 0.5], 0.6).unwrap(), 2);
        assert_eq!(select_rank_hard(&[4.0, 4.0, 4.0], 0.5).unwrap(), 3);
    }

    #[test]
    fn criteria_reject_bad_input() {
        assert!(matches!(
            select_rank_energy(&[], 0.5),
            Err(Error::InvalidSpectrum(_))
        ));
        assert!(matches!(
            select_rank_hard(&[], 0.5),
            Err(Error::InvalidSpectrum(_))
        ));
        assert!(select_rank_energy(&[1.0, 2.0], 0.5).is_err());
        assert!(select_rank_energy(&[1.0], 1.0).is_err());
        assert!(select_rank_hard(&[1.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn project_rank_truncates_diagonal() {
        let p = project_rank(&Matrix::from_diag(&[3.0, 1.0]), 1).unwrap();
        assert!(p.sub(&Matrix::from_diag(&[3.0, 0.0])).max_abs() < 1e-15);
        assert!(matches!(
            project_rank(&Matrix::identity(2), 3),
            Err(Error::RankBounds { rank: 3, max: 2 })
        ));
        assert!(project_rank(&Matrix::identity(2), 0).is_err());
    }

    #[test]
    fn project_rank_at_full_rank_is_identity_map() {
        let m = Matrix::random_normal(5, 4, 1.0, &mut seeded(2));
        let p = project_rank(&m, 4).unwrap();
        assert!(p.sub(&m).frobenius_norm() < 1e-12 * m.frobenius_norm());
    }

    #[test]
    fn bottleneck_of_outer_product_is_exact() {
        let u = Matrix::column(&[1.0, -2.0, 0.5]);
        let v = Matrix::column(&[2.0, 1.0]);
        let w = u.matmul_nt(&v);
        let (w1, w2) = factorize_bottleneck(&w, 1).unwrap();
        assert_eq!(w1.shape(), (3, 1));
        assert_eq!(w2.shape(), (1, 2));
        assert!(w1.matmul(&w2).sub(&w).max_abs() < 1e-14);

        let (w1, w2) = factorize_bottleneck(&Matrix::from_diag(&[3.0, 1.0]), 1).unwrap();
        assert!(
            w1.matmul(&w2)
                .sub(&Matrix::from_diag(&[3.0, 0.0]))
                .max_abs()
                < 1e-15
        );
    }

    #[test]
    fn bottleneck_pads_when_rank_deficient() {
        let w = Matrix::column(&[1.0, 2.0]).matmul_nt(&Matrix::column(&[1.0, 1.0, 1.0]));
        let (w1, w2) = factorize_bottleneck(&w, 2).unwrap();
        assert_eq!(w1.shape(), (2, 2));
        assert_eq!(w1.col(1), vec![0.0, 0.0]);
        assert!(w1.matmul(&w2).sub(&w).max_abs() < 1e-14);
    }

    #[test]
    fn decide_rank_never_increases() {
        let d = decide_rank(
            &[1.0, 1.0, 1.0, 1.0],
            2,
            RankCriterion::Hard,
            0.5,
            RankGate::OPEN,
        )
        .unwrap();
        assert_eq!(d.proposed_rank, 4);
        assert_eq!(d.chosen_rank, 2);
    }

    #[test]
    fn decide_rank_quality_floor() {
        // energy with beta 0.6 proposes 2; dropping two equal values loses
        // sqrt(1/2) of the norm, above the 0.55 budget, so rank 3 is the floor
        let s = [1.0, 1.0, 1.0, 1.0];
        let d = decide_rank(&s, 4, RankCriterion::Energy, 0.6, gate(0.55, 0.0)).unwrap();
        assert_eq!(d.proposed_rank, 2);
        assert_eq!(d.chosen_rank, 3);
        // no lower rank is accurate enough: retain
        let d = decide_rank(&s, 4, RankCriterion::Energy, 0.6, gate(0.1, 0.0)).unwrap();
        assert_eq!(d.chosen_rank, 4);
        // budget of 1 disables the floor
        let d = decide_rank(&s, 4, RankCriterion::Energy, 0.6, RankGate::OPEN).unwrap();
        assert_eq!(d.chosen_rank, 2);
    }

    fn gate(max_truncation_error: f64, min_relative_reduction: f64) -> RankGate {
        RankGate {
            max_truncation_error,
            min_relative_reduction,
        }
    }

    #[test]
    fn decide_rank_skips_small_cuts() {
        // truncation error of this spectrum at rank r is about 0.5^r
        let s: Vec<f64> = (0..20).map(|i| 0.5_f64.powi(i)).collect();
        let d = decide_rank(&s, 20, RankCriterion::Energy, 0.9, gate(1.0, 0.1)).unwrap();
        assert_eq!((d.proposed_rank, d.chosen_rank), (3, 3));
        let d = decide_rank(&s, 20, RankCriterion::Energy, 0.9, gate(0.01, 0.1)).unwrap();
        assert_eq!(d.chosen_rank, 7);
        // floor at 19: a 5% cut, below the 10% threshold
        let d = decide_rank(&s, 20, RankCriterion::Energy, 0.9, gate(3e-6, 0.1)).unwrap();
        assert_eq!(d.chosen_rank, 20);
        let d = decide_rank(&s, 20, RankCriterion::Energy, 0.9, gate(3e-6, 0.0)).unwrap();
        assert_eq!(d.chosen_rank, 19);
    }

    #[test]
    fn truncation_error_matches_tail_energy() {
        let s = [3.0, 4.0];
        assert!((truncation_error(&s, 1) - 0.8).abs() < 1e-15);
        assert_eq!(truncation_error(&s, 2), 0.0);
    }
}
