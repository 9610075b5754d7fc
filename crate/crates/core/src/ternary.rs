//! Ternary action decisions and the row-major grids that hold them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One categorical delta: move negative, hold, or move positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Ternary {
    Neg,
    #[default]
    Zero,
    Pos,
}

impl Ternary {
    pub const ALL: [Ternary; 3] = [Ternary::Neg, Ternary::Zero, Ternary::Pos];

    pub fn to_i8(self) -> i8 {
        match self {
            Ternary::Neg => -1,
            Ternary::Zero => 0,
            Ternary::Pos => 1,
        }
    }

    pub fn from_i8(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(Ternary::Neg),
            0 => Ok(Ternary::Zero),
            1 => Ok(Ternary::Pos),
            other => Err(invalid(format!("ternary value must be -1, 0 or +1, got {other}"))),
        }
    }

    /// Index into a `(p_minus, p_zero, p_plus)` probability triple.
    pub fn class_index(self) -> usize {
        match self {
            Ternary::Neg => 0,
            Ternary::Zero => 1,
            Ternary::Pos => 2,
        }
    }

    pub fn from_class_index(i: usize) -> Self {
        match i {
            0 => Ternary::Neg,
            1 => Ternary::Zero,
            2 => Ternary::Pos,
            _ => panic!("class index {i} out of range"),
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.to_i8())
    }
}

impl std::ops::Neg for Ternary {
    type Output = Ternary;
    fn neg(self) -> Ternary {
        match self {
            Ternary::Neg => Ternary::Pos,
            Ternary::Zero => Ternary::Zero,
            Ternary::Pos => Ternary::Neg,
        }
    }
}

impl From<Ternary> for i8 {
    fn from(t: Ternary) -> i8 {
        t.to_i8()
    }
}

impl TryFrom<i8> for Ternary {
    type Error = crate::error::Error;
    fn try_from(v: i8) -> Result<Self> {
        Ternary::from_i8(v)
    }
}

/// Row-major `rows × cols` grid of ternary values (time × dimension).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TernaryGrid {
    rows: usize,
    cols: usize,
    data: Vec<Ternary>,
}

impl TernaryGrid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Ternary::Zero; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Ternary>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "grid data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_i8_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(invalid(format!("row {t} has {} columns, expected {cols}", row.len())));
            }
            for &v in row {
                data.push(Ternary::from_i8(v)?);
            }
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Ternary {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Ternary) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Ternary] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Ternary] {
        &self.data
    }

    pub fn to_i8_rows(&self) -> Vec<Vec<i8>> {
        (0..self.rows).map(|r| self.row(r).iter().map(|t| t.to_i8()).collect()).collect()
    }
}
