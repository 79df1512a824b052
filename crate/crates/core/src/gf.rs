//! Arithmetic over GF(2^m), 1 <= m <= 8, and dense matrices of field symbols.
//!
//! Multiplication is table driven: the exp/log tables over the multiplicative
//! group are built once per field and a full product table is derived from
//! them, so the row operations used by elimination are a lookup plus an XOR.
//!
//! Symbols are stored one per `u8`. On the wire they are bit-packed MSB first
//! (see [`Field::pack`]); for m = 4 this is two symbols per byte, high nibble
//! first.

use std::fmt;

use thiserror::Error;

/// A field element. Always strictly less than `2^m` for its field.
pub type Symbol = u8;

/// Default reduction polynomials, indexed by bit width. Each is primitive.
const PRIMITIVE_POLYS: [u16; 9] = [
    0, 0x3,   // x + 1
    0x7,      // x^2 + x + 1
    0xB,      // x^3 + x + 1
    0x13,     // x^4 + x + 1
    0x25,     // x^5 + x^2 + 1
    0x43,     // x^6 + x + 1
    0x83,     // x^7 + x + 1
    0x11D,    // x^8 + x^4 + x^3 + x^2 + 1
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GfError {
    #[error("field bit width {0} outside 1..=8")]
    BitWidth(u8),
    #[error("polynomial {poly:#x} is not primitive of degree {bits}")]
    NotPrimitive { bits: u8, poly: u16 },
    #[error("matrix is singular (rank {rank} of {size})")]
    Singular { rank: usize, size: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// GF(2^m) with precomputed exp/log and product tables.
///
/// Immutable after construction; share it behind an `Arc`.
#[derive(Clone)]
pub struct Field {
    bits: u8,
    poly: u16,
    exp: Vec<Symbol>,
    log: Vec<u16>,
    mul: Vec<Symbol>,
    inv: Vec<Symbol>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GF(2^{}) poly={:#x}", self.bits, self.poly)
    }
}

impl Default for Field {
    fn default() -> Self {
        Field::new(4).expect("GF(16) is valid")
    }
}

impl Field {
    /// GF(2^bits) under the default primitive polynomial (x^4 + x + 1 for m = 4).
    pub fn new(bits: u8) -> Result<Self, GfError> {
        if !(1..=8).contains(&bits) {
            return Err(GfError::BitWidth(bits));
        }
        Self::with_poly(bits, PRIMITIVE_POLYS[bits as usize])
    }

    pub fn with_poly(bits: u8, poly: u16) -> Result<Self, GfError> {
        if !(1..=8).contains(&bits) {
            return Err(GfError::BitWidth(bits));
        }
        if poly >> bits != 1 {
            return Err(GfError::NotPrimitive { bits, poly });
        }
        let order = 1usize << bits;
        let group = order - 1;
        let mut exp = vec![0; 2 * group];
        let mut log = vec![0u16; order];
        let mut x: u16 = 1;
        for (i, slot) in exp.iter_mut().take(group).enumerate() {
            if i > 0 && x == 1 {
                // generator cycled early
                return Err(GfError::NotPrimitive { bits, poly });
            }
            *slot = x as Symbol;
            log[x as usize] = i as u16;
            x <<= 1;
            if x & (1 << bits) != 0 {
                x ^= poly;
            }
        }
        if x != 1 {
            return Err(GfError::NotPrimitive { bits, poly });
        }
        for i in 0..group {
            exp[group + i] = exp[i];
        }
        let mut mul = vec![0; order * order];
        for a in 1..order {
            for b in 1..order {
                let l = log[a] as usize + log[b] as usize;
                mul[a * order + b] = exp[l];
            }
        }
        let mut inv = vec![0; order];
        for a in 1..order {
            inv[a] = exp[(group - log[a] as usize) % group];
        }
        Ok(Field { bits, poly, exp, log, mul, inv })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn poly(&self) -> u16 {
        self.poly
    }

    /// Number of field elements, `2^m`.
    pub fn order(&self) -> usize {
        1 << self.bits
    }

    #[inline]
    pub fn contains(&self, a: Symbol) -> bool {
        (a as usize) < self.order()
    }

    #[inline]
    pub fn add(&self, a: Symbol, b: Symbol) -> Symbol {
        a ^ b
    }

    #[inline]
    pub fn mul(&self, a: Symbol, b: Symbol) -> Symbol {
        self.mul[((a as usize) << self.bits) | b as usize]
    }

    /// Multiplicative inverse. `inv(0)` is `None`.
    #[inline]
    pub fn inv(&self, a: Symbol) -> Option<Symbol> {
        if a == 0 {
            None
        } else {
            Some(self.inv[a as usize])
        }
    }

    pub fn div(&self, a: Symbol, b: Symbol) -> Option<Symbol> {
        self.inv(b).map(|ib| self.mul(a, ib))
    }

    /// `alpha^i` for the generator `alpha = x`.
    pub fn exp(&self, i: usize) -> Symbol {
        self.exp[i % (self.order() - 1)]
    }

    /// Discrete log of a nonzero element.
    pub fn log(&self, a: Symbol) -> Option<usize> {
        (a != 0).then(|| self.log[a as usize] as usize)
    }

    /// Product row for a fixed multiplier: `row[b] = c * b`.
    #[inline]
    pub fn mul_row(&self, c: Symbol) -> &[Symbol] {
        let n = self.order();
        let start = (c as usize) * n;
        &self.mul[start..start + n]
    }

    /// `dst += c * src`, element-wise.
    #[inline]
    pub fn axpy(&self, dst: &mut [Symbol], src: &[Symbol], c: Symbol) {
        debug_assert_eq!(dst.len(), src.len());
        match c {
            0 => {}
            1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d ^= *s),
            _ => {
                let t = self.mul_row(c);
                dst.iter_mut().zip(src).for_each(|(d, s)| *d ^= t[*s as usize]);
            }
        }
    }

    /// `row *= c`, element-wise.
    #[inline]
    pub fn scale(&self, row: &mut [Symbol], c: Symbol) {
        if c != 1 {
            let t = self.mul_row(c);
            row.iter_mut().for_each(|x| *x = t[*x as usize]);
        }
    }

    /// Dot product of two symbol vectors.
    pub fn dot(&self, a: &[Symbol], b: &[Symbol]) -> Symbol {
        a.iter().zip(b).fold(0, |acc, (x, y)| acc ^ self.mul(*x, *y))
    }

    /// Number of symbols needed to carry `nbytes` bytes.
    pub fn symbols_for_bytes(&self, nbytes: usize) -> usize {
        (nbytes * 8).div_ceil(self.bits as usize)
    }

    /// Split bytes into symbols, MSB first. A trailing partial symbol is
    /// zero-filled on the right.
    pub fn unpack(&self, bytes: &[u8]) -> Vec<Symbol> {
        let m = self.bits as usize;
        let n = self.symbols_for_bytes(bytes.len());
        let mut out = Vec::with_capacity(n);
        match m {
            8 => out.extend_from_slice(bytes),
            4 => {
                for b in bytes {
                    out.push(b >> 4);
                    out.push(b & 0x0F);
                }
            }
            _ => {
                let mut acc: u32 = 0;
                let mut have = 0usize;
                for &b in bytes {
                    acc = (acc << 8) | b as u32;
                    have += 8;
                    while have >= m {
                        have -= m;
                        out.push(((acc >> have) & ((1 << m) - 1)) as Symbol);
                    }
                }
                if have > 0 {
                    out.push(((acc << (m - have)) & ((1 << m) - 1)) as Symbol);
                }
            }
        }
        out
    }

    /// Inverse of [`Field::unpack`]: bit-pack symbols MSB first into
    /// `ceil(len * m / 8)` bytes, zero-filling the last byte.
    pub fn pack(&self, symbols: &[Symbol]) -> Vec<u8> {
        let m = self.bits as usize;
        let nbytes = (symbols.len() * m).div_ceil(8);
        let mut out = Vec::with_capacity(nbytes);
        match m {
            8 => out.extend_from_slice(symbols),
            4 => {
                for pair in symbols.chunks(2) {
                    let hi = pair[0] & 0x0F;
                    let lo = pair.get(1).copied().unwrap_or(0) & 0x0F;
                    out.push((hi << 4) | lo);
                }
            }
            _ => {
                let mut acc: u32 = 0;
                let mut have = 0usize;
                for &s in symbols {
                    acc = (acc << m) | (s as u32 & ((1 << m) - 1));
                    have += m;
                    while have >= 8 {
                        have -= 8;
                        out.push((acc >> have) as u8);
                    }
                }
                if have > 0 {
                    out.push((acc << (8 - have)) as u8);
                }
            }
        }
        out
    }
}

/// Row-major matrix of field symbols.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Symbol>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:x?}", self.row(r))?;
        }
        Ok(())
    }
}

/// Result of Gauss-Jordan elimination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Echelon {
    /// Reduced row-echelon form. Zero rows sit at the bottom.
    pub rref: Matrix,
    pub rank: usize,
    /// Pivot column of each of the first `rank` rows, ascending.
    pub pivot_cols: Vec<usize>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1);
        }
        m
    }

    pub fn diagonal(d: &[Symbol]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_rows<R: AsRef<[Symbol]>>(rows: &[R]) -> Result<Self, GfError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(GfError::Dimension(format!("ragged rows: {} vs {}", r.len(), cols)));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Symbol>) -> Result<Self, GfError> {
        if data.len() != rows * cols {
            return Err(GfError::Dimension(format!(
                "{} symbols for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn random<R: rand::Rng + ?Sized>(field: &Field, rows: usize, cols: usize, rng: &mut R) -> Self {
        let order = field.order() as u16;
        let data = (0..rows * cols).map(|_| rng.gen_range(0..order) as Symbol).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Symbol {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Symbol) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Symbol] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Symbol] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Symbol] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[Symbol]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn push_row(&mut self, row: &[Symbol]) -> Result<(), GfError> {
        if self.rows == 0 && self.cols == 0 {
            self.cols = row.len();
        }
        if row.len() != self.cols {
            return Err(GfError::Dimension(format!("row of {} into {} columns", row.len(), self.cols)));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// First `n` rows.
    pub fn top(&self, n: usize) -> Matrix {
        let n = n.min(self.rows);
        Matrix { rows: n, cols: self.cols, data: self.data[..n * self.cols].to_vec() }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let c = self.cols;
        let (lo, hi) = (a.min(b), a.max(b));
        let (head, tail) = self.data.split_at_mut(hi * c);
        head[lo * c..(lo + 1) * c].swap_with_slice(&mut tail[..c]);
    }

    pub fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for r in 0..self.rows {
            self.data.swap(r * self.cols + a, r * self.cols + b);
        }
    }

    /// `[self | other]`.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix, GfError> {
        if self.rows != other.rows {
            return Err(GfError::Dimension(format!("hconcat {} vs {} rows", self.rows, other.rows)));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix { rows: self.rows, cols, data })
    }

    /// Columns `[start, end)`.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix { rows: self.rows, cols, data }
    }

    pub fn mul(&self, field: &Field, rhs: &Matrix) -> Result<Matrix, GfError> {
        if self.cols != rhs.rows {
            return Err(GfError::Dimension(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for k in 0..self.cols {
                field.axpy(dst, rhs.row(k), self.get(r, k));
            }
        }
        Ok(out)
    }

    /// Row vector times matrix: `coeffs^T * self`.
    pub fn combine_rows(&self, field: &Field, coeffs: &[Symbol]) -> Vec<Symbol> {
        let mut out = vec![0; self.cols];
        for (r, &c) in coeffs.iter().enumerate().take(self.rows) {
            field.axpy(&mut out, self.row(r), c);
        }
        out
    }

    pub fn all_in_field(&self, field: &Field) -> bool {
        self.data.iter().all(|&s| field.contains(s))
    }

    /// Gauss-Jordan elimination into reduced row-echelon form.
    pub fn gaussian_eliminate(&self, field: &Field) -> Echelon {
        let mut m = self.clone();
        let pivot_cols = m.eliminate_in_place(field, self.cols);
        Echelon { rank: pivot_cols.len(), pivot_cols, rref: m }
    }

    /// Reduce in place using pivots drawn only from the first `pivot_limit`
    /// columns; the remaining columns ride along (augmented part). Returns the
    /// pivot columns in row order.
    pub fn eliminate_in_place(&mut self, field: &Field, pivot_limit: usize) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..pivot_limit.min(self.cols) {
            if r == self.rows {
                break;
            }
            let Some(p) = (r..self.rows).find(|&i| self.get(i, c) != 0) else {
                continue;
            };
            self.swap_rows(r, p);
            let inv = field.inv(self.get(r, c)).expect("pivot is nonzero");
            field.scale(self.row_mut(r), inv);
            let pivot_row = self.row(r).to_vec();
            for i in 0..self.rows {
                if i != r {
                    let f = self.get(i, c);
                    if f != 0 {
                        field.axpy(self.row_mut(i), &pivot_row, f);
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        pivots
    }

    pub fn rank(&self, field: &Field) -> usize {
        self.gaussian_eliminate(field).rank
    }

    /// Inverse of a square matrix, or [`GfError::Singular`].
    pub fn invert(&self, field: &Field) -> Result<Matrix, GfError> {
        if !self.is_square() {
            return Err(GfError::Dimension(format!("invert {}x{}", self.rows, self.cols)));
        }
        let n = self.rows;
        let mut aug = self.hconcat(&Matrix::identity(n))?;
        let pivots = aug.eliminate_in_place(field, n);
        if pivots.len() < n {
            return Err(GfError::Singular { rank: pivots.len(), size: n });
        }
        Ok(aug.columns(n, 2 * n))
    }
}
