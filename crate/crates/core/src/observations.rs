//! Empirical checks of how fusion moves the ego map: true-to-false flips and
//! wrong-direction updates larger than a threshold.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::map::{BinaryMap, ConfidenceMap};

/// Ego maps of one episode: `maps[0]` before the first slot, `maps[t + 1]`
/// after slot `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub gt: BinaryMap,
    pub maps: Vec<ConfidenceMap>,
}

/// Running event counts. A cell update is any slot in which a cell's ego
/// confidence changed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationCounter {
    pub zeta: f64,
    pub xis: Vec<f64>,
    pub updates: u64,
    pub positive_updates: u64,
    /// Updates that started on the correct side of `zeta`.
    pub correct_before: u64,
    pub correct_before_positive: u64,
    pub true_to_false: u64,
    pub true_to_false_positive: u64,
    /// Per `xi`: wrong-direction updates with `Δ² > xi`.
    pub violations: Vec<u64>,
    pub violations_positive: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationStats {
    pub updates: u64,
    pub true_to_false_prob: f64,
    pub true_to_false_prob_positive: f64,
    /// `(xi, probability)` pairs.
    pub violation_prob: Vec<(f64, f64)>,
    pub violation_prob_positive: Vec<(f64, f64)>,
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

impl ObservationCounter {
    pub fn new(zeta: f64, xis: &[f64]) -> Self {
        Self {
            zeta,
            xis: xis.to_vec(),
            violations: vec![0; xis.len()],
            violations_positive: vec![0; xis.len()],
            ..Self::default()
        }
    }

    /// Counts every changed cell between two consecutive ego maps.
    pub fn record(&mut self, prev: &ConfidenceMap, next: &ConfidenceMap, gt: &BinaryMap) -> Result<()> {
        prev.check_dims(next.dims())?;
        prev.check_dims(gt.dims())?;
        let z = self.zeta;
        for ((&a, &b), &g) in prev.values().iter().zip(next.values()).zip(gt.bits()) {
            let d = b - a;
            if d == 0.0 {
                continue;
            }
            let label = if g { 1.0 } else { 0.0 };
            let ok_before = (a - z) * (label - z) > 0.0;
            let ok_after = (b - z) * (label - z) > 0.0;
            let wrong_way = if g { d < 0.0 } else { d > 0.0 };
            self.updates += 1;
            if g {
                self.positive_updates += 1;
            }
            if ok_before {
                self.correct_before += 1;
                if g {
                    self.correct_before_positive += 1;
                }
                if !ok_after {
                    self.true_to_false += 1;
                    if g {
                        self.true_to_false_positive += 1;
                    }
                }
            }
            if wrong_way {
                for (k, &xi) in self.xis.iter().enumerate() {
                    if d * d > xi {
                        self.violations[k] += 1;
                        if g {
                            self.violations_positive[k] += 1;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        self.updates += other.updates;
        self.positive_updates += other.positive_updates;
        self.correct_before += other.correct_before;
        self.correct_before_positive += other.correct_before_positive;
        self.true_to_false += other.true_to_false;
        self.true_to_false_positive += other.true_to_false_positive;
        for (a, b) in self.violations.iter_mut().zip(&other.violations) {
            *a += b;
        }
        for (a, b) in self.violations_positive.iter_mut().zip(&other.violations_positive) {
            *a += b;
        }
    }

    pub fn stats(&self) -> ObservationStats {
        let zip = |v: &[u64], d: u64| -> Vec<(f64, f64)> {
            self.xis.iter().zip(v).map(|(&xi, &n)| (xi, ratio(n, d))).collect()
        };
        ObservationStats {
            updates: self.updates,
            true_to_false_prob: ratio(self.true_to_false, self.correct_before),
            true_to_false_prob_positive: ratio(self.true_to_false_positive, self.correct_before_positive),
            violation_prob: zip(&self.violations, self.updates),
            violation_prob_positive: zip(&self.violations_positive, self.positive_updates),
        }
    }
}

/// True-to-false probability: among cell updates that start on the correct
/// side of `zeta`, the share that ends on the wrong side. Violation
/// probability: among all cell updates, the share moving away from the label
/// by more than `sqrt(xi)`.
pub fn measure_observations(traces: &[EpisodeTrace], zeta: f64, xis: &[f64]) -> Result<ObservationStats> {
    let mut c = ObservationCounter::new(zeta, xis);
    for tr in traces {
        for w in tr.maps.windows(2) {
            c.record(&w[0], &w[1], &tr.gt)?;
        }
    }
    Ok(c.stats())
}

pub const OBS_COLLABORATOR_COUNTS: [usize; 4] = [2, 3, 4, 5];
pub const OBS_XIS: [f64; 4] = [0.001, 0.005, 0.01, 0.05];

/// Table rows: one true-to-false row per collaborator count, then one
/// violation row per threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRow {
    pub quantity: String,
    pub parameter: String,
    pub all_cells: f64,
    pub gt_positive_cells: f64,
}

pub const OBS_CSV_HEADER: &str = "quantity,parameter,all_cells,gt_positive_cells";

pub fn write_observation_csv<W: Write>(mut out: W, rows: &[ObservationRow]) -> std::io::Result<()> {
    writeln!(out, "{OBS_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.9},{:.9}",
            r.quantity, r.parameter, r.all_cells, r.gt_positive_cells
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[f64]) -> ConfidenceMap {
        ConfidenceMap::from_values(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn counts_by_hand() {
        // cells: positive rising, positive falling across ζ, negative rising
        // across ζ, negative unchanged
        let gt = BinaryMap::from_bits(1, 4, vec![true, true, false, false]).unwrap();
        let tr = EpisodeTrace {
            gt,
            maps: vec![map(&[0.3, 0.8, 0.2, 0.1]), map(&[0.9, 0.4, 0.6, 0.1])],
        };
        let s = measure_observations(&[tr], 0.5, &[0.001, 0.1, 0.2]).unwrap();
        assert_eq!(s.updates, 3);
        // correct before: cell 1 (0.8 on positive) and cell 2 (0.2 on negative); both flip
        assert_eq!(s.true_to_false_prob, 1.0);
        assert_eq!(s.true_to_false_prob_positive, 1.0);
        // wrong-way: cell 1 (Δ²=0.16), cell 2 (Δ²=0.16)
        assert_eq!(s.violation_prob[0].1, 2.0 / 3.0);
        assert_eq!(s.violation_prob[1].1, 2.0 / 3.0);
        assert_eq!(s.violation_prob[2].1, 0.0);
        assert_eq!(s.violation_prob_positive[0].1, 0.5);
    }

    #[test]
    fn monotone_fusion_never_flips_positives() {
        let gt = BinaryMap::from_bits(1, 3, vec![true, true, true]).unwrap();
        let tr = EpisodeTrace {
            gt,
            maps: vec![map(&[0.6, 0.2, 0.9]), map(&[0.7, 0.6, 0.9]), map(&[0.8, 0.6, 0.95])],
        };
        let s = measure_observations(&[tr], 0.5, &OBS_XIS).unwrap();
        assert_eq!(s.true_to_false_prob_positive, 0.0);
        assert!(s.violation_prob.iter().all(|(_, p)| *p == 0.0));
    }

    #[test]
    fn violation_nonincreasing_in_xi() {
        let gt = BinaryMap::from_bits(1, 5, vec![false; 5]).unwrap();
        let tr = EpisodeTrace {
            gt,
            maps: vec![map(&[0.0, 0.0, 0.0, 0.0, 0.0]), map(&[0.04, 0.08, 0.1, 0.3, 0.02])],
        };
        let s = measure_observations(&[tr], 0.5, &OBS_XIS).unwrap();
        let p: Vec<f64> = s.violation_prob.iter().map(|x| x.1).collect();
        assert_eq!(p, vec![0.8, 0.6, 0.4, 0.2]);
    }

    #[test]
    fn csv_rows() {
        let rows = vec![ObservationRow {
            quantity: "violation_prob".into(),
            parameter: "0.05".into(),
            all_cells: 0.25,
            gt_positive_cells: 0.0,
        }];
        let mut buf = Vec::new();
        write_observation_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "quantity,parameter,all_cells,gt_positive_cells\nviolation_prob,0.05,0.250000000,0.000000000\n"
        );
    }
}
