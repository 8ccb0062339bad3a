//! Orthonormal type-II DCT, its inverse, and zigzag coefficient ordering.
//!
//! The 2D transform is separable and orthonormal, so the inverse is the
//! transpose; gradients through the transform are the inverse applied to
//! the coefficient gradient.

/// Precomputed cosine basis for one dimension of size `n`.
pub struct CosTable {
    n: usize,
    /// basis[k * n + i] = alpha_k * cos(pi * (2i + 1) * k / (2n))
    basis: Vec<f64>,
}

impl CosTable {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            let alpha = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for i in 0..n {
                basis[k * n + i] =
                    alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
            }
        }
        Self { n, basis }
    }

    fn forward_1d(&self, input: &[f64], output: &mut [f64]) {
        for k in 0..self.n {
            let row = &self.basis[k * self.n..(k + 1) * self.n];
            output[k] = row.iter().zip(input).map(|(b, x)| b * x).sum();
        }
    }

    fn inverse_1d(&self, input: &[f64], output: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in 0..self.n {
                acc += self.basis[k * self.n + i] * input[k];
            }
            output[i] = acc;
        }
    }
}

/// 2D forward DCT of a square `n x n` grid (row-major).
pub fn dct2(table: &CosTable, grid: &[f64]) -> Vec<f64> {
    apply_separable(table, grid, CosTable::forward_1d)
}

/// 2D inverse DCT (transpose of [`dct2`]).
pub fn idct2(table: &CosTable, coeffs: &[f64]) -> Vec<f64> {
    apply_separable(table, coeffs, CosTable::inverse_1d)
}

fn apply_separable(
    table: &CosTable,
    grid: &[f64],
    op: impl Fn(&CosTable, &[f64], &mut [f64]),
) -> Vec<f64> {
    let n = table.n;
    assert_eq!(grid.len(), n * n);
    let mut tmp = vec![0.0; n * n];
    let mut row_out = vec![0.0; n];
    // rows
    for y in 0..n {
        op(table, &grid[y * n..(y + 1) * n], &mut row_out);
        tmp[y * n..(y + 1) * n].copy_from_slice(&row_out);
    }
    // columns
    let mut out = vec![0.0; n * n];
    let mut col_in = vec![0.0; n];
    let mut col_out = vec![0.0; n];
    for x in 0..n {
        for y in 0..n {
            col_in[y] = tmp[y * n + x];
        }
        op(table, &col_in, &mut col_out);
        for y in 0..n {
            out[y * n + x] = col_out[y];
        }
    }
    out
}

/// Zigzag scan order for an `n x n` grid: indices of (row-major) positions
/// visited along anti-diagonals, alternating direction, starting at DC.
pub fn zigzag_order(n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n * n);
    for s in 0..(2 * n - 1) {
        if s % 2 == 0 {
            // walk up-right: row decreasing
            let mut y = s.min(n - 1);
            let mut x = s - y;
            loop {
                order.push(y * n + x);
                if y == 0 || x == n - 1 {
                    break;
                }
                y -= 1;
                x += 1;
            }
        } else {
            // walk down-left: row increasing
            let mut x = s.min(n - 1);
            let mut y = s - x;
            loop {
                order.push(y * n + x);
                if x == 0 || y == n - 1 {
                    break;
                }
                x -= 1;
                y += 1;
            }
        }
    }
    order
}
