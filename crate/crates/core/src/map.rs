//! Row-major H×W grids: real-valued confidence maps and binary masks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-cell occupancy confidence in `[0, 1]`, stored row-major (`y * w + x`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn filled(h: usize, w: usize, value: f64) -> Self {
        Self {
            h,
            w,
            values: vec![value.clamp(0.0, 1.0); h * w],
        }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self::filled(h, w, 0.0)
    }

    /// Builds a map from raw values, clamping every entry into `[0, 1]`.
    pub fn from_values(h: usize, w: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::LengthMismatch {
                expected: h * w,
                got: values.len(),
            });
        }
        for v in &mut values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self { h, w, values })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.w + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.w + x] = v.clamp(0.0, 1.0);
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn check_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other,
            });
        }
        Ok(())
    }

    /// Row-major CSV, one grid row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 8);
        for row in self.values.chunks(self.w.max(1)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Plain (ASCII) PGM dump with 255 grey levels.
    pub fn to_pgm(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "P2\n{} {}\n255", self.w, self.h);
        for row in self.values.chunks(self.w.max(1)) {
            let line: Vec<String> = row
                .iter()
                .map(|v| ((v * 255.0).round() as u8).to_string())
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Binary H×W map (ground truth, visibility, selection masks).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMap {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl BinaryMap {
    pub fn empty(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            bits: vec![false; h * w],
        }
    }

    pub fn full(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            bits: vec![true; h * w],
        }
    }

    pub fn from_bits(h: usize, w: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != h * w {
            return Err(Error::LengthMismatch {
                expected: h * w,
                got: bits.len(),
            });
        }
        Ok(Self { h, w, bits })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.w + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.w + x] = v;
    }

    pub(crate) fn set_index(&mut self, idx: usize, v: bool) {
        self.bits[idx] = v;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }
}

/// Cells a collaborator transmits in one slot.
pub type SelectionMask = BinaryMap;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_values_clamps() {
        let m = ConfidenceMap::from_values(1, 3, vec![-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(m.values(), &[0.0, 0.5, 1.0]);
        assert!(ConfidenceMap::from_values(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let mut m = ConfidenceMap::zeros(2, 3);
        m.set(2, 1, 0.25);
        assert_eq!(m.values()[5], 0.25);
        assert_eq!(m.get(2, 1), 0.25);
        let csv = m.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().ends_with("0.250000"));
    }

    #[test]
    fn pgm_header() {
        let m = ConfidenceMap::filled(2, 2, 1.0);
        let pgm = m.to_pgm();
        assert!(pgm.starts_with("P2\n2 2\n255\n"));
        assert!(pgm.contains("255 255"));
    }
}
