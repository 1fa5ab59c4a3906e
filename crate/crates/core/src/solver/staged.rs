//! Symmetric indefinite factorization for block-tridiagonal matrices with a
//! dense border.
//!
//! Unknowns are grouped into stages `0..B` forming a chain, plus a final
//! border stage `B` that may couple to every other stage. Each chain block is
//! factored densely with Bunch-Kaufman pivoting, the next block receives the
//! Schur complement, and the border is factored last. By Haynsworth's inertia
//! additivity the inertia of the whole matrix is the sum over the blocks.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl std::ops::AddAssign for Inertia {
    fn add_assign(&mut self, o: Self) {
        self.positive += o.positive;
        self.negative += o.negative;
        self.zero += o.zero;
    }
}

const BK_ALPHA: f64 = 0.640_388_203_202_208_4; // (1 + sqrt(17)) / 8

/// Dense symmetric `P A P^T = L D L^T` with 1x1 and 2x2 pivots.
#[derive(Debug, Clone, Default)]
pub struct DenseLdl {
    n: usize,
    /// Row-major working matrix; `L` below the diagonal blocks, `D` on them.
    a: Vec<f64>,
    perm: Vec<usize>,
    /// Size of the pivot block starting at each position (0 inside a 2x2).
    block: Vec<u8>,
}

impl DenseLdl {
    /// Factors the full symmetric `n x n` row-major matrix `a`. A pivot
    /// column counts as zero when elimination has cancelled it to at most
    /// `rel_tol` times its original magnitude; the factorization then stops
    /// and the remaining dimensions are reported as zero.
    pub fn factor(n: usize, a: Vec<f64>, rel_tol: f64) -> (Self, Inertia) {
        assert_eq!(a.len(), n * n);
        let col_scale: Vec<f64> = (0..n)
            .map(|i| {
                a[i * n..(i + 1) * n]
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .collect();
        let mut f = Self {
            n,
            a,
            perm: (0..n).collect(),
            block: vec![0; n],
        };
        let mut inertia = Inertia::default();
        let mut k = 0;
        while k < n {
            let akk = f.at(k, k).abs();
            let (imax, colmax) = (k + 1..n).fold((k, 0.0f64), |(im, cm), i| {
                let v = f.at(i, k).abs();
                if v > cm {
                    (i, v)
                } else {
                    (im, cm)
                }
            });
            if akk.max(colmax) <= rel_tol * col_scale[f.perm[k]].max(f64::MIN_POSITIVE) {
                inertia.zero += n - k;
                return (f, inertia);
            }
            let (kp, step) = if akk >= BK_ALPHA * colmax {
                (k, 1)
            } else {
                let rowmax = (k..n)
                    .filter(|&j| j != imax)
                    .fold(0.0f64, |m, j| m.max(f.at(imax, j).abs()));
                if akk >= BK_ALPHA * colmax * (colmax / rowmax) {
                    (k, 1)
                } else if f.at(imax, imax).abs() >= BK_ALPHA * rowmax {
                    (imax, 1)
                } else {
                    (imax, 2)
                }
            };
            let kk = k + step - 1;
            if kp != kk {
                f.swap(kk, kp);
            }
            if step == 1 {
                let d = f.at(k, k);
                for i in k + 1..n {
                    let l = f.at(i, k) / d;
                    for j in k + 1..=i {
                        let v = f.at(i, j) - l * f.at(j, k);
                        f.set(i, j, v);
                        f.set(j, i, v);
                    }
                }
                for i in k + 1..n {
                    let l = f.at(i, k) / d;
                    f.set(i, k, l);
                }
                f.block[k] = 1;
                if d > 0.0 {
                    inertia.positive += 1;
                } else {
                    inertia.negative += 1;
                }
            } else {
                let (d11, d21, d22) = (f.at(k, k), f.at(k + 1, k), f.at(k + 1, k + 1));
                let det = d11 * d22 - d21 * d21;
                // rows of the two pivot columns, before scaling
                let c1: Vec<f64> = (k + 2..n).map(|i| f.at(i, k)).collect();
                let c2: Vec<f64> = (k + 2..n).map(|i| f.at(i, k + 1)).collect();
                let l1: Vec<f64> = c1
                    .iter()
                    .zip(&c2)
                    .map(|(a, b)| (d22 * a - d21 * b) / det)
                    .collect();
                let l2: Vec<f64> = c1
                    .iter()
                    .zip(&c2)
                    .map(|(a, b)| (d11 * b - d21 * a) / det)
                    .collect();
                for ii in 0..n - k - 2 {
                    let i = k + 2 + ii;
                    for jj in 0..=ii {
                        let j = k + 2 + jj;
                        let v = f.at(i, j) - l1[ii] * c1[jj] - l2[ii] * c2[jj];
                        f.set(i, j, v);
                        f.set(j, i, v);
                    }
                    f.set(i, k, l1[ii]);
                    f.set(i, k + 1, l2[ii]);
                }
                f.block[k] = 2;
                if det < 0.0 {
                    inertia.positive += 1;
                    inertia.negative += 1;
                } else if d11 + d22 > 0.0 {
                    inertia.positive += 2;
                } else {
                    inertia.negative += 2;
                }
            }
            k += step;
        }
        (f, inertia)
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    fn swap(&mut self, p: usize, q: usize) {
        let n = self.n;
        for j in 0..n {
            self.a.swap(p * n + j, q * n + j);
        }
        for i in 0..n {
            self.a.swap(i * n + p, i * n + q);
        }
        self.perm.swap(p, q);
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        let mut k = 0;
        while k < n {
            // a partial factorization leaves trailing zeros; never loop on them
            let s = (self.block[k] as usize).max(1);
            for i in k + s..n {
                let mut v = x[i];
                for c in k..k + s {
                    v -= self.at(i, c) * x[c];
                }
                x[i] = v;
            }
            k += s;
        }
        let mut k = 0;
        while k < n {
            if self.block[k] == 1 {
                x[k] /= self.at(k, k);
                k += 1;
            } else {
                let (d11, d21, d22) = (self.at(k, k), self.at(k + 1, k), self.at(k + 1, k + 1));
                let det = d11 * d22 - d21 * d21;
                let (b1, b2) = (x[k], x[k + 1]);
                x[k] = (d22 * b1 - d21 * b2) / det;
                x[k + 1] = (d11 * b2 - d21 * b1) / det;
                k += 2;
            }
        }
        let mut k = n;
        while k > 0 {
            let start = if k >= 2 && self.block[k - 2] == 2 {
                k - 2
            } else {
                k - 1
            };
            let s = k - start;
            for c in start..start + s {
                let mut v = x[c];
                for i in k..n {
                    v -= self.at(i, c) * x[i];
                }
                x[c] = v;
            }
            k = start;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }
}

/// Where one symmetric entry lives in the block storage; `mirror` is the
/// transposed position inside a diagonal block (equal to `first` otherwise).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    first: usize,
    mirror: usize,
}

#[derive(Debug, Clone)]
pub struct StagedMatrix {
    dim: usize,
    /// Original indices of every stage; the last stage is the border.
    members: Vec<Vec<usize>>,
    diag_off: Vec<usize>,
    /// `sub[s]`: rows of stage `s + 1`, columns of stage `s`.
    sub_off: Vec<usize>,
    /// `bord[s]`: rows of stage `s`, columns of the border.
    bord_off: Vec<usize>,
    values: Vec<f64>,
}

impl StagedMatrix {
    /// Lays out a symmetric matrix from the stage of every index and the
    /// structurally nonzero entries `(i, j)` (either triangle). Entries may
    /// only couple equal or adjacent stages, or any stage with the border.
    pub fn new(dim: usize, stage_of: &[usize], entries: &[(usize, usize)]) -> (Self, Vec<Slot>) {
        assert_eq!(stage_of.len(), dim);
        let stages = stage_of.iter().max().map_or(1, |m| m + 1);
        let mut members = vec![Vec::new(); stages];
        let mut local = vec![0; dim];
        for (i, &s) in stage_of.iter().enumerate() {
            local[i] = members[s].len();
            members[s].push(i);
        }
        let border = stages - 1;
        let size: Vec<usize> = members.iter().map(Vec::len).collect();
        let mut cursor = 0;
        let mut diag_off = Vec::with_capacity(stages);
        for s in 0..stages {
            diag_off.push(cursor);
            cursor += size[s] * size[s];
        }
        let mut sub_off = Vec::new();
        for s in 0..border.saturating_sub(1) {
            sub_off.push(cursor);
            cursor += size[s + 1] * size[s];
        }
        let mut bord_off = Vec::new();
        for s in 0..border {
            bord_off.push(cursor);
            cursor += size[s] * size[border];
        }

        let nb = size[border];
        let slots = entries
            .iter()
            .map(|&(i, j)| {
                let (si, sj) = (stage_of[i], stage_of[j]);
                let (li, lj) = (local[i], local[j]);
                if si == sj {
                    let n = size[si];
                    Slot {
                        first: diag_off[si] + li * n + lj,
                        mirror: diag_off[si] + lj * n + li,
                    }
                } else if sj == border {
                    let p = bord_off[si] + li * nb + lj;
                    Slot {
                        first: p,
                        mirror: p,
                    }
                } else if si == border {
                    let p = bord_off[sj] + lj * nb + li;
                    Slot {
                        first: p,
                        mirror: p,
                    }
                } else if si == sj + 1 {
                    let p = sub_off[sj] + li * size[sj] + lj;
                    Slot {
                        first: p,
                        mirror: p,
                    }
                } else if sj == si + 1 {
                    let p = sub_off[si] + lj * size[si] + li;
                    Slot {
                        first: p,
                        mirror: p,
                    }
                } else {
                    panic!("entry ({i}, {j}) couples non-adjacent stages {si} and {sj}");
                }
            })
            .collect();
        (
            Self {
                dim,
                members,
                diag_off,
                sub_off,
                bord_off,
                values: vec![0.0; cursor],
            },
            slots,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stored_values(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn add(&mut self, slot: Slot, v: f64) {
        self.values[slot.first] += v;
        if slot.mirror != slot.first {
            self.values[slot.mirror] += v;
        }
    }

    fn border(&self) -> usize {
        self.members.len() - 1
    }

    fn size(&self, s: usize) -> usize {
        self.members[s].len()
    }

    fn diag(&self, s: usize) -> &[f64] {
        let n = self.size(s);
        &self.values[self.diag_off[s]..self.diag_off[s] + n * n]
    }

    fn sub(&self, s: usize) -> &[f64] {
        let len = self.size(s + 1) * self.size(s);
        &self.values[self.sub_off[s]..self.sub_off[s] + len]
    }

    fn bord(&self, s: usize) -> &[f64] {
        let len = self.size(s) * self.size(self.border());
        &self.values[self.bord_off[s]..self.bord_off[s] + len]
    }

    fn gather(&self, s: usize, x: &[f64]) -> Vec<f64> {
        self.members[s].iter().map(|&i| x[i]).collect()
    }

    /// `y = A x`.
    pub fn multiply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let b = self.border();
        let xs: Vec<Vec<f64>> = (0..=b).map(|s| self.gather(s, x)).collect();
        let nb = self.size(b);
        for s in 0..=b {
            let n = self.size(s);
            let d = self.diag(s);
            for (r, &gi) in self.members[s].iter().enumerate() {
                y[gi] += (0..n).map(|c| d[r * n + c] * xs[s][c]).sum::<f64>();
            }
        }
        for s in 0..b.saturating_sub(1) {
            let (nr, nc) = (self.size(s + 1), self.size(s));
            let e = self.sub(s);
            for r in 0..nr {
                for c in 0..nc {
                    let v = e[r * nc + c];
                    y[self.members[s + 1][r]] += v * xs[s][c];
                    y[self.members[s][c]] += v * xs[s + 1][r];
                }
            }
        }
        for s in 0..b {
            let n = self.size(s);
            let g = self.bord(s);
            for r in 0..n {
                for c in 0..nb {
                    let v = g[r * nb + c];
                    y[self.members[s][r]] += v * xs[b][c];
                    y[self.members[b][c]] += v * xs[s][r];
                }
            }
        }
    }
}

/// Block factorization of a [`StagedMatrix`].
#[derive(Debug, Clone, Default)]
pub struct StagedFactor {
    chain: Vec<DenseLdl>,
    /// Border coupling of each chain block after the preceding eliminations.
    coupling: Vec<Vec<f64>>,
    border: DenseLdl,
}

impl StagedFactor {
    pub fn factor(&mut self, m: &StagedMatrix, rel_tol: f64) -> Inertia {
        let b = m.border();
        let nb = m.size(b);
        let mut inertia = Inertia::default();
        self.chain.clear();
        self.coupling.clear();
        let mut schur = m.diag(0).to_vec();
        let mut g = if b > 0 {
            m.bord(0).to_vec()
        } else {
            Vec::new()
        };
        let mut db = m.diag(b).to_vec();
        for s in 0..b {
            let n = m.size(s);
            let (f, part) = DenseLdl::factor(n, std::mem::take(&mut schur), rel_tol);
            inertia += part;
            if part.zero > 0 {
                inertia.zero += m.dim() - (inertia.positive + inertia.negative + inertia.zero);
                return inertia;
            }
            // X = S^-1 G, column by column (G is n x nb, row-major)
            let x = solve_columns(&f, &g, n, nb);
            for r in 0..nb {
                for c in 0..nb {
                    db[r * nb + c] -= (0..n).map(|i| g[i * nb + r] * x[i * nb + c]).sum::<f64>();
                }
            }
            if s + 1 < b {
                let nn = m.size(s + 1);
                let e = m.sub(s);
                // Y = S^-1 E^T  (n x nn)
                let mut et = vec![0.0; n * nn];
                for r in 0..nn {
                    for c in 0..n {
                        et[c * nn + r] = e[r * n + c];
                    }
                }
                let y = solve_columns(&f, &et, n, nn);
                let mut next = m.diag(s + 1).to_vec();
                for r in 0..nn {
                    let er = &e[r * n..(r + 1) * n];
                    for c in 0..nn {
                        next[r * nn + c] -= (0..n).map(|i| er[i] * y[i * nn + c]).sum::<f64>();
                    }
                }
                let mut gn = m.bord(s + 1).to_vec();
                for r in 0..nn {
                    let er = &e[r * n..(r + 1) * n];
                    for c in 0..nb {
                        gn[r * nb + c] -= (0..n).map(|i| er[i] * x[i * nb + c]).sum::<f64>();
                    }
                }
                schur = next;
                self.coupling.push(std::mem::replace(&mut g, gn));
            } else {
                self.coupling.push(std::mem::take(&mut g));
            }
            self.chain.push(f);
        }
        let (f, part) = DenseLdl::factor(nb, db, rel_tol);
        inertia += part;
        self.border = f;
        inertia
    }

    /// Solves `A x = b` in place with the last successful factorization.
    pub fn solve(&self, m: &StagedMatrix, rhs: &mut [f64]) {
        let b = m.border();
        let nb = m.size(b);
        let mut z: Vec<Vec<f64>> = (0..=b).map(|s| m.gather(s, rhs)).collect();
        let mut w: Vec<Vec<f64>> = Vec::with_capacity(b);
        for s in 0..b {
            let n = m.size(s);
            let mut ws = z[s].clone();
            self.chain[s].solve(&mut ws);
            let g = &self.coupling[s];
            for c in 0..nb {
                z[b][c] -= (0..n).map(|i| g[i * nb + c] * ws[i]).sum::<f64>();
            }
            if s + 1 < b {
                let e = m.sub(s);
                for r in 0..m.size(s + 1) {
                    z[s + 1][r] -= (0..n).map(|i| e[r * n + i] * ws[i]).sum::<f64>();
                }
            }
            w.push(ws);
        }
        let mut xb = z[b].clone();
        self.border.solve(&mut xb);
        let mut next: Vec<f64> = Vec::new();
        let mut xs: Vec<Vec<f64>> = vec![Vec::new(); b];
        for s in (0..b).rev() {
            let n = m.size(s);
            let g = &self.coupling[s];
            let mut t: Vec<f64> = (0..n)
                .map(|i| (0..nb).map(|c| g[i * nb + c] * xb[c]).sum::<f64>())
                .collect();
            if s + 1 < b {
                let e = m.sub(s);
                for (r, xr) in next.iter().enumerate() {
                    for i in 0..n {
                        t[i] += e[r * n + i] * xr;
                    }
                }
            }
            self.chain[s].solve(&mut t);
            let x: Vec<f64> = w[s].iter().zip(&t).map(|(a, b)| a - b).collect();
            next = x.clone();
            xs[s] = x;
        }
        for s in 0..b {
            for (k, &i) in m.members[s].iter().enumerate() {
                rhs[i] = xs[s][k];
            }
        }
        for (k, &i) in m.members[b].iter().enumerate() {
            rhs[i] = xb[k];
        }
    }
}

/// `S^-1 R` for a row-major `n x cols` right-hand side.
fn solve_columns(f: &DenseLdl, r: &[f64], n: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * cols];
    let mut col = vec![0.0; n];
    for c in 0..cols {
        for i in 0..n {
            col[i] = r[i * cols + c];
        }
        f.solve(&mut col);
        for i in 0..n {
            out[i * cols + c] = col[i];
        }
    }
    out
}
