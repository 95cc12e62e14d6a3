//! Random spectrogram slices for labelling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::model::Millis;

/// Half-open `[start, end)` interval in stream-relative milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slice {
    pub start: Millis,
    pub end: Millis,
}

/// Draws non-overlapping slices of length `d` whose starts are on average `st` apart.
///
/// The idle gap between consecutive slices is exponential with mean `st - d`.
/// Slices that would not fit entirely inside the stream are dropped. With a
/// `budget_ms`, extraction stops once the slices total that much spectrogram.
pub fn extract_slices(
    stream_length: Millis,
    d: Millis,
    st: Millis,
    seed: u64,
    budget_ms: Option<Millis>,
) -> Vec<Slice> {
    assert!(d > 0 && st > d, "need 0 < d < st");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(1.0 / (st - d) as f64).expect("positive rate");
    let mut out = Vec::new();
    let mut covered = 0;
    let mut cursor = gap.sample(&mut rng).round() as Millis;
    while cursor + d <= stream_length {
        if budget_ms.is_some_and(|b| covered + d > b) {
            break;
        }
        out.push(Slice {
            start: cursor,
            end: cursor + d,
        });
        covered += d;
        cursor += d + gap.sample(&mut rng).round() as Millis;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_shorter_than_slice_is_empty() {
        assert!(extract_slices(5_000, 10_000, 120_000, 1, None).is_empty());
    }

    #[test]
    fn slices_do_not_overlap_and_fit() {
        let s = extract_slices(3_600_000, 10_000, 120_000, 9, None);
        assert!(!s.is_empty());
        for w in s.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
        assert!(s.iter().all(|x| x.end - x.start == 10_000 && x.end <= 3_600_000));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            extract_slices(86_400_000, 10_000, 120_000, 4, None),
            extract_slices(86_400_000, 10_000, 120_000, 4, None)
        );
    }

    #[test]
    fn day_yields_about_720_slices() {
        // Renewal process: E[count] ~ length / st.
        let day = 24 * 3_600_000;
        let mean = (0..20)
            .map(|seed| extract_slices(day, 10_000, 120_000, seed, None).len() as f64)
            .sum::<f64>()
            / 20.0;
        assert!((mean - 720.0).abs() <= 72.0, "mean {mean}");
    }

    #[test]
    fn budget_limits_total_duration() {
        let s = extract_slices(24 * 3_600_000, 7_500, 120_000, 0, Some(20 * 60_000));
        assert_eq!(s.len(), 160);
        assert_eq!(s.iter().map(|x| x.end - x.start).sum::<Millis>(), 20 * 60_000);
    }
}
