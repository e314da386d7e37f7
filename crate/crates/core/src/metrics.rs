//! Edit distance and word/character error rates.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::text::{graphemes, normalize_text};

/// Unit-cost edit distance between two sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ErrorRateReport {
    pub distance: usize,
    pub reference_length: usize,
}

impl ErrorRateReport {
    /// Percentage; may exceed 100.
    pub fn rate(&self) -> Result<f64> {
        if self.reference_length == 0 {
            if self.distance == 0 {
                return Ok(0.0);
            }
            return Err(Error::EmptyReference {
                distance: self.distance,
            });
        }
        Ok(100.0 * self.distance as f64 / self.reference_length as f64)
    }
}

impl std::ops::Add for ErrorRateReport {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            distance: self.distance + o.distance,
            reference_length: self.reference_length + o.reference_length,
        }
    }
}

impl std::iter::Sum for ErrorRateReport {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

pub fn wer(reference: &str, hypothesis: &str) -> ErrorRateReport {
    let (r, h) = (normalize_text(reference), normalize_text(hypothesis));
    let rw: Vec<&str> = r.split_whitespace().collect();
    let hw: Vec<&str> = h.split_whitespace().collect();
    ErrorRateReport {
        distance: levenshtein(&rw, &hw),
        reference_length: rw.len(),
    }
}

pub fn cer(reference: &str, hypothesis: &str) -> ErrorRateReport {
    let (r, h) = (normalize_text(reference), normalize_text(hypothesis));
    let (rg, hg) = (graphemes(&r), graphemes(&h));
    ErrorRateReport {
        distance: levenshtein(&rg, &hg),
        reference_length: rg.len(),
    }
}

/// Corpus rate: summed distances over summed reference lengths.
pub fn corpus_rate<'a>(reports: impl IntoIterator<Item = &'a ErrorRateReport>) -> Result<f64> {
    reports.into_iter().copied().sum::<ErrorRateReport>().rate()
}
