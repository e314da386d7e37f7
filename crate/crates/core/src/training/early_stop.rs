/// Patience-based stopping on a metric where lower is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping<K> {
    patience: usize,
    best: Option<K>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    /// No improvement; carries the number of consecutive stagnant epochs.
    Stale(usize),
    Stop,
}

impl<K: PartialOrd + Copy> EarlyStopping<K> {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<K> {
        self.best
    }

    /// Records one epoch's metric. Strictly lower counts as improvement.
    pub fn observe(&mut self, metric: K) -> Verdict {
        if self.best.is_none_or(|b| metric < b) {
            self.best = Some(metric);
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Stale(self.stale)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stops_after_exactly_patience() {
        let mut es = EarlyStopping::new(3);
        let seq = [50.0, 40.0, 40.0, 41.0, 39.0, 39.5, 39.0, 45.0];
        let verdicts: Vec<Verdict> = seq.iter().map(|&m| es.observe(m)).collect();
        use Verdict::*;
        assert_eq!(
            verdicts,
            vec![Improved, Improved, Stale(1), Stale(2), Improved, Stale(1), Stale(2), Stop]
        );
        assert_eq!(es.best(), Some(39.0));
    }

    #[test]
    fn lexicographic_keys() {
        let mut es = EarlyStopping::new(2);
        assert_eq!(es.observe((0.0, 1.0)), Verdict::Improved);
        assert_eq!(es.observe((0.0, 0.5)), Verdict::Improved);
        assert_eq!(es.observe((0.0, 0.7)), Verdict::Stale(1));
    }

    proptest! {
        #[test]
        fn fires_on_the_patience_th_stagnant_epoch(
            prefix in proptest::collection::vec(0.0f64..100.0, 1..20),
            patience in 1usize..8,
        ) {
            let mut es = EarlyStopping::new(patience);
            let mut stopped = false;
            for &m in &prefix {
                stopped = es.observe(m) == Verdict::Stop;
                if stopped { break; }
            }
            prop_assume!(!stopped);
            let best = es.best().unwrap() - 1.0;
            prop_assert_eq!(es.observe(best), Verdict::Improved);
            for i in 1..=patience {
                let v = es.observe(best + (i % 3) as f64);
                if i < patience {
                    prop_assert!(matches!(v, Verdict::Stale(_)));
                } else {
                    prop_assert_eq!(v, Verdict::Stop);
                }
            }
        }
    }
}
