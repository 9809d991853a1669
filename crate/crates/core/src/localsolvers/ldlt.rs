//! Dense symmetric indefinite `P A Pᵀ = L D Lᵀ` factorization with
//! Bunch–Kaufman partial pivoting (1x1 and 2x2 diagonal blocks).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pivot {
    One(f64),
    /// Symmetric 2x2 block `[[a, b], [b, c]]` starting at this row.
    Two(f64, f64, f64),
    /// Second row of a 2x2 block.
    Skip,
}

#[derive(Debug, Clone)]
pub struct Ldlt {
    n: usize,
    /// Unit lower triangular factor (strict lower part used).
    l: DMatrix<f64>,
    pivots: Vec<Pivot>,
    /// Row `i` of the permuted matrix is row `perm[i]` of the original.
    perm: Vec<usize>,
}

/// Numbers of positive, negative and zero eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl Ldlt {
    /// Factors a symmetric matrix. Only the lower triangle is read.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        let alpha = (1.0 + 17f64.sqrt()) / 8.0;
        let mut w = DMatrix::from_fn(n, n, |i, j| if i >= j { a[(i, j)] } else { a[(j, i)] });
        let scale = w.amax().max(f64::MIN_POSITIVE);
        let tiny = scale * f64::EPSILON * (n as f64).max(1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = vec![Pivot::Skip; n];

        let swap = |w: &mut DMatrix<f64>, perm: &mut Vec<usize>, i: usize, j: usize| {
            if i != j {
                w.swap_rows(i, j);
                w.swap_columns(i, j);
                perm.swap(i, j);
            }
        };

        let mut k = 0;
        while k < n {
            let akk = w[(k, k)].abs();
            let (imax, colmax) = ((k + 1)..n)
                .map(|i| (i, w[(i, k)].abs()))
                .fold((k, 0.0), |best, x| if x.1 > best.1 { x } else { best });
            if akk.max(colmax) <= tiny {
                return Err(Error::Factorization(format!(
                    "zero pivot column {k} of {n}"
                )));
            }
            let two_by_two = if akk >= alpha * colmax {
                false
            } else {
                let rowmax = (k..n)
                    .filter(|&j| j != imax)
                    .map(|j| w[(imax, j)].abs())
                    .fold(0.0, f64::max);
                if akk * rowmax >= alpha * colmax * colmax {
                    false
                } else if w[(imax, imax)].abs() >= alpha * rowmax {
                    swap(&mut w, &mut perm, k, imax);
                    false
                } else {
                    swap(&mut w, &mut perm, k + 1, imax);
                    true
                }
            };

            if !two_by_two {
                let d = w[(k, k)];
                if d.abs() <= tiny {
                    return Err(Error::Factorization(format!("zero pivot at {k}")));
                }
                for i in (k + 1)..n {
                    w[(i, k)] /= d;
                }
                for j in (k + 1)..n {
                    let ljk = w[(j, k)] * d;
                    if ljk == 0.0 {
                        continue;
                    }
                    for i in j..n {
                        let v = w[(i, k)] * ljk;
                        w[(i, j)] -= v;
                    }
                }
                for j in (k + 1)..n {
                    for i in (j + 1)..n {
                        w[(j, i)] = w[(i, j)];
                    }
                }
                pivots[k] = Pivot::One(d);
                k += 1;
            } else {
                let (da, db, dc) = (w[(k, k)], w[(k + 1, k)], w[(k + 1, k + 1)]);
                let det = da * dc - db * db;
                if det.abs() <= tiny * scale {
                    return Err(Error::Factorization(format!("singular 2x2 pivot at {k}")));
                }
                // rows i > k+1: [l_ik, l_i,k+1] = [w_ik, w_i,k+1] D^{-1}
                let mut lrows = Vec::with_capacity(n - k - 2);
                for i in (k + 2)..n {
                    let (x, y) = (w[(i, k)], w[(i, k + 1)]);
                    lrows.push((x, y, (x * dc - y * db) / det, (y * da - x * db) / det));
                }
                for (jj, j) in ((k + 2)..n).enumerate() {
                    let (xj, yj, _, _) = lrows[jj];
                    for (ii, i) in (j..n).enumerate() {
                        let (_, _, li0, li1) = lrows[jj + ii];
                        w[(i, j)] -= li0 * xj + li1 * yj;
                    }
                }
                for (ii, i) in ((k + 2)..n).enumerate() {
                    w[(i, k)] = lrows[ii].2;
                    w[(i, k + 1)] = lrows[ii].3;
                }
                for j in (k + 2)..n {
                    for i in (j + 1)..n {
                        w[(j, i)] = w[(i, j)];
                    }
                }
                pivots[k] = Pivot::Two(da, db, dc);
                pivots[k + 1] = Pivot::Skip;
                k += 2;
            }
        }
        Ok(Ldlt {
            n,
            l: w,
            pivots,
            perm,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn inertia(&self) -> Inertia {
        let mut out = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        for p in &self.pivots {
            match *p {
                Pivot::One(d) => {
                    if d > 0.0 {
                        out.positive += 1
                    } else if d < 0.0 {
                        out.negative += 1
                    } else {
                        out.zero += 1
                    }
                }
                Pivot::Two(a, b, c) => {
                    let det = a * c - b * b;
                    if det < 0.0 {
                        out.positive += 1;
                        out.negative += 1;
                    } else if a + c > 0.0 {
                        out.positive += 2;
                    } else {
                        out.negative += 2;
                    }
                }
                Pivot::Skip => {}
            }
        }
        out
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n, "right-hand side length");
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // L z = y; the (k+1, k) entry of a 2x2 block belongs to D
        for j in 0..n {
            let yj = y[j];
            if yj != 0.0 {
                for i in self.l_start(j)..n {
                    y[i] -= self.l[(i, j)] * yj;
                }
            }
        }
        // D w = z
        let mut k = 0;
        while k < n {
            match self.pivots[k] {
                Pivot::One(d) => {
                    y[k] /= d;
                    k += 1;
                }
                Pivot::Two(a, bb, c) => {
                    let det = a * c - bb * bb;
                    let (x0, x1) = (y[k], y[k + 1]);
                    y[k] = (c * x0 - bb * x1) / det;
                    y[k + 1] = (a * x1 - bb * x0) / det;
                    k += 2;
                }
                Pivot::Skip => unreachable!("2x2 block second row"),
            }
        }
        // Lᵀ v = w
        for j in (0..n).rev() {
            let s: f64 = (self.l_start(j)..n).map(|i| self.l[(i, j)] * y[i]).sum();
            y[j] -= s;
        }
        for (i, &p) in self.perm.iter().enumerate() {
            b[p] = y[i];
        }
    }

    fn l_start(&self, j: usize) -> usize {
        match self.pivots[j] {
            Pivot::Two(..) => j + 2,
            _ => j + 1,
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        x
    }
}
