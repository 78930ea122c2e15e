use super::CsrMatrix;

/// Band Cholesky factor `L` of a permuted SPD matrix, stored row-wise:
/// row `i` holds columns `i - band ..= i`.
#[derive(Debug)]
pub struct BandCholesky {
    n: usize,
    band: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    /// Returns `None` if a nonpositive pivot shows up.
    pub fn factor(a: &CsrMatrix, perm: &[usize], band: usize) -> Option<Self> {
        let n = a.nrows();
        let w = band + 1;
        let mut data = vec![0.0; n * w];
        for r in 0..n {
            for (c, v) in a.row(r) {
                let (i, j) = (perm[r], perm[c]);
                if j <= i {
                    data[i * w + j + band - i] += v;
                }
            }
        }

        for i in 0..n {
            let first = i.saturating_sub(band);
            for j in first..=i {
                let k0 = first.max(j.saturating_sub(band));
                let row_i = &data[i * w + k0 + band - i..i * w + j + band - i];
                let row_j = &data[j * w + k0 + band - j..j * w + band];
                let dot: f64 = row_i.iter().zip(row_j).map(|(x, y)| x * y).sum();
                let s = data[i * w + j + band - i] - dot;
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    data[i * w + band] = s.sqrt();
                } else {
                    data[i * w + j + band - i] = s / data[j * w + band];
                }
            }
        }
        Some(Self { n, band, data })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, b, w) = (self.n, self.band, self.band + 1);
        for i in 0..n {
            let first = i.saturating_sub(b);
            let row = &self.data[i * w + first + b - i..i * w + b];
            let dot: f64 = row.iter().zip(&x[first..i]).map(|(l, y)| l * y).sum();
            x[i] = (x[i] - dot) / self.data[i * w + b];
        }
        for i in (0..n).rev() {
            x[i] /= self.data[i * w + b];
            let xi = x[i];
            let first = i.saturating_sub(b);
            let row = &self.data[i * w + first + b - i..i * w + b];
            for (y, l) in x[first..i].iter_mut().zip(row) {
                *y -= l * xi;
            }
        }
    }
}

/// Band LU with partial pivoting of a permuted matrix. Row `r` holds columns
/// `r - lower ..= r + lower + upper`: the strictly lower part keeps the
/// multipliers, the rest the (pivot-widened) upper factor.
#[derive(Debug)]
pub struct BandLu {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    /// On a (numerically) zero pivot returns the permuted row index.
    pub fn factor(a: &CsrMatrix, perm: &[usize], lower: usize, upper: usize) -> Result<Self, usize> {
        let n = a.nrows();
        let w = 2 * lower + upper + 1;
        let mut data = vec![0.0; n * w];
        let at = |r: usize, c: usize| r * w + c + lower - r;
        for r in 0..n {
            for (c, v) in a.row(r) {
                data[at(perm[r], perm[c])] += v;
            }
        }
        let tiny = 1e-13 * a.max_abs().max(f64::MIN_POSITIVE);
        let reach = lower + upper;

        let mut pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + lower).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let p = (k..=last_row)
                .max_by(|&r, &s| data[at(r, k)].abs().total_cmp(&data[at(s, k)].abs()).then(s.cmp(&r)))
                .unwrap();
            if !(data[at(p, k)].abs() > tiny) {
                return Err(k);
            }
            pivots[k] = p;
            if p != k {
                for c in k..=last_col {
                    data.swap(at(k, c), at(p, c));
                }
            }
            let pivot = data[at(k, k)];
            for r in k + 1..=last_row {
                let m = data[at(r, k)] / pivot;
                data[at(r, k)] = m;
                if m != 0.0 {
                    for c in k + 1..=last_col {
                        data[at(r, c)] -= m * data[at(k, c)];
                    }
                }
            }
        }
        Ok(Self {
            n,
            lower,
            upper,
            data,
            pivots,
        })
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        let w = 2 * self.lower + self.upper + 1;
        self.data[r * w + c + self.lower - r]
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        let reach = self.lower + self.upper;
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let xk = x[k];
            for r in k + 1..=(k + self.lower).min(n - 1) {
                x[r] -= self.at(r, k) * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for c in k + 1..=(k + reach).min(n - 1) {
                s -= self.at(k, c) * x[c];
            }
            x[k] = s / self.at(k, k);
        }
    }

    pub fn solve_transpose_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        let reach = self.lower + self.upper;
        for k in 0..n {
            x[k] /= self.at(k, k);
            let xk = x[k];
            for c in k + 1..=(k + reach).min(n - 1) {
                x[c] -= self.at(k, c) * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for r in k + 1..=(k + self.lower).min(n - 1) {
                s -= self.at(r, k) * x[r];
            }
            x[k] = s;
            x.swap(k, self.pivots[k]);
        }
    }
}
