//! Dense bit matrices over GF(2).
//!
//! Every row is packed into one `u64`, so matrices are limited to 64 columns
//! and 64 rows. Address mappings never get close to that bound: the widest
//! supported physical address is 63 bits.

use std::fmt;

/// A matrix over GF(2) with at most 64 rows and 64 columns.
///
/// Bit `j` of `rows[i]` is the entry at row `i`, column `j`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: Vec<u64>,
    cols: usize,
}

/// Outcome of row-reducing a matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Elimination {
    pub rank: usize,
    /// Set of row indices (as a bitmask) whose XOR is zero. Present iff the
    /// rows are linearly dependent. The highest index in the set is the first
    /// row, in input order, that reduced to zero.
    pub dependency: Option<u64>,
}

#[inline]
fn col_mask(cols: usize) -> u64 {
    if cols == 64 {
        u64::MAX
    } else {
        (1u64 << cols) - 1
    }
}

impl BitMatrix {
    pub fn new(rows: Vec<u64>, cols: usize) -> Self {
        assert!(cols <= 64, "at most 64 columns");
        assert!(rows.len() <= 64, "at most 64 rows");
        let mask = col_mask(cols);
        assert!(
            rows.iter().all(|r| r & !mask == 0),
            "row has bits beyond column {cols}"
        );
        Self { rows, cols }
    }

    pub fn identity(n: usize) -> Self {
        Self::new((0..n).map(|i| 1u64 << i).collect(), n)
    }

    pub fn rows(&self) -> &[u64] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn col_count(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.rows[row] >> col & 1 == 1
    }

    /// Matrix-vector product: bit `i` of the result is the parity of
    /// `rows[i] & v`.
    pub fn mul_vec(&self, v: u64) -> u64 {
        self.rows.iter().enumerate().fold(0, |acc, (i, r)| {
            acc | (((r & v).count_ones() as u64) & 1) << i
        })
    }

    /// `self * other` where `other` has `self.cols` rows.
    pub fn mul(&self, other: &BitMatrix) -> BitMatrix {
        assert_eq!(self.cols, other.row_count(), "dimension mismatch");
        let rows = self
            .rows
            .iter()
            .map(|&r| {
                let mut acc = 0;
                let mut bits = r;
                while bits != 0 {
                    let j = bits.trailing_zeros() as usize;
                    acc ^= other.rows[j];
                    bits &= bits - 1;
                }
                acc
            })
            .collect();
        BitMatrix::new(rows, other.cols)
    }

    pub fn rank(&self) -> usize {
        self.eliminate().rank
    }

    /// Row-reduces the matrix, tracking which original rows were combined so
    /// that a dependency can be reported as a witness.
    pub fn eliminate(&self) -> Elimination {
        // basis[p] holds a reduced row whose highest set bit is p, together
        // with the set of original rows it is the XOR of.
        let mut basis: [Option<(u64, u64)>; 64] = [None; 64];
        let mut rank = 0;
        let mut dependency = None;
        for (i, &row) in self.rows.iter().enumerate() {
            let mut value = row;
            let mut history = 1u64 << i;
            loop {
                if value == 0 {
                    if dependency.is_none() {
                        dependency = Some(history);
                    }
                    break;
                }
                let pivot = 63 - value.leading_zeros() as usize;
                match basis[pivot] {
                    Some((v, h)) => {
                        value ^= v;
                        history ^= h;
                    }
                    None => {
                        basis[pivot] = Some((value, history));
                        rank += 1;
                        break;
                    }
                }
            }
        }
        Elimination { rank, dependency }
    }

    /// Gauss-Jordan inverse. Returns `None` for non-square or singular input.
    pub fn inverse(&self) -> Option<BitMatrix> {
        let n = self.cols;
        if self.rows.len() != n {
            return None;
        }
        let mut work: Vec<(u64, u64)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, 1u64 << i))
            .collect();
        for col in 0..n {
            let pivot = (col..n).find(|&r| work[r].0 >> col & 1 == 1)?;
            work.swap(col, pivot);
            let (pv, pi) = work[col];
            for (r, row) in work.iter_mut().enumerate() {
                if r != col && row.0 >> col & 1 == 1 {
                    row.0 ^= pv;
                    row.1 ^= pi;
                }
            }
        }
        Some(BitMatrix::new(
            work.into_iter().map(|(_, inv)| inv).collect(),
            n,
        ))
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{} [", self.rows.len(), self.cols)?;
        for r in &self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{}", r >> j & 1)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}
