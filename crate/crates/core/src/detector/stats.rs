//! Chi-square comparison of two histograms and its upper-tail probability.

use std::sync::OnceLock;

use super::histogram::{HistogramError, OnlineHistogram};

/// Stand-in expected count for cells the historic histogram has never seen.
pub const EMPTY_CELL_PSEUDOCOUNT: f64 = 0.5;

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-16;
const FPMIN: f64 = 1e-300;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// ln Γ(dof/2), cached for the dof range histograms produce.
fn ln_gamma_half(dof: u32) -> f64 {
    const CACHED: usize = 1024;
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| (0..CACHED).map(|k| if k == 0 { 0.0 } else { ln_gamma(k as f64 / 2.0) }).collect());
    match table.get(dof as usize) {
        Some(&v) if dof > 0 => v,
        _ => ln_gamma(f64::from(dof) / 2.0),
    }
}

/// Regularized upper incomplete gamma function Q(a, x) = Γ(a, x) / Γ(a).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    gamma_q_with_ln_gamma(a, x, ln_gamma(a))
}

fn gamma_q_with_ln_gamma(a: f64, x: f64, lng: f64) -> f64 {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return 1.0;
    }
    let prefactor = (-x + a * x.ln() - lng).exp();
    if x < a + 1.0 {
        // Series for P(a, x).
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (1.0 - sum * prefactor).clamp(0.0, 1.0)
    } else {
        // Modified Lentz continued fraction for Q(a, x).
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = b + an / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        (prefactor * h).clamp(0.0, 1.0)
    }
}

/// Upper-tail probability of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_pvalue(stat: f64, dof: u32) -> f64 {
    assert!(dof >= 1, "chi-square needs at least one degree of freedom");
    if stat <= 0.0 {
        return 1.0;
    }
    gamma_q_with_ln_gamma(f64::from(dof) / 2.0, stat / 2.0, ln_gamma_half(dof))
}

/// Result of comparing an observed histogram against an expected one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub stat: f64,
    /// Contributing cells minus one, never below one.
    pub dof: u32,
}

/// Pearson statistic of `observed` against `expected` rescaled to the observed total.
///
/// Cells empty in both histograms are skipped and do not count towards the
/// degrees of freedom. Cells empty only in `expected` use
/// [`EMPTY_CELL_PSEUDOCOUNT`] as their expected count.
pub fn chi_square_statistic(
    observed: &OnlineHistogram,
    expected: &OnlineHistogram,
) -> Result<ChiSquare, HistogramError> {
    if !observed.same_layout(expected) {
        return Err(HistogramError::LayoutMismatch);
    }
    chi_square_cells(observed.cells(), observed.total(), expected.cells(), expected.total())
}

pub(crate) fn chi_square_cells(
    observed: &[u32],
    observed_total: u64,
    expected: &[u32],
    expected_total: u64,
) -> Result<ChiSquare, HistogramError> {
    if observed_total == 0 || expected_total == 0 {
        return Err(HistogramError::EmptyHistogram);
    }
    let scale = observed_total as f64 / expected_total as f64;
    let mut stat = 0.0;
    let mut contributing = 0u32;
    for (&o, &e) in observed.iter().zip(expected) {
        if o == 0 && e == 0 {
            continue;
        }
        contributing += 1;
        let e = if e == 0 {
            EMPTY_CELL_PSEUDOCOUNT
        } else {
            f64::from(e) * scale
        };
        let diff = f64::from(o) - e;
        stat += diff * diff / e;
    }
    Ok(ChiSquare {
        stat,
        dof: contributing.saturating_sub(1).max(1),
    })
}
