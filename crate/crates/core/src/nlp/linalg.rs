//! Damped linear least-squares steps for the inner solver, either dense or
//! exploiting a bordered block-banded pattern (independent blocks coupled
//! only through a few trailing variables).

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use super::sparse::SparseRows;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Structure {
    Dense,
    /// `blocks` and `border` partition `0..n`, blocks in increasing order and
    /// the border last. Every Jacobian row may touch at most one block plus
    /// the border.
    BorderedBanded {
        blocks: Vec<Range<usize>>,
        border: Range<usize>,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("rank deficient at column {0}")]
    RankDeficient(usize),
    #[error("curvature-corrected system is not positive definite")]
    Indefinite,
    #[error("{0}")]
    Structure(String),
}

impl Structure {
    pub fn check(&self, n: usize) -> Result<(), LinalgError> {
        let Structure::BorderedBanded { blocks, border } = self else {
            return Ok(());
        };
        let mut next = 0;
        for b in blocks {
            if b.start != next || b.end < b.start {
                return Err(LinalgError::Structure(format!(
                    "block {b:?} does not continue at {next}"
                )));
            }
            next = b.end;
        }
        if border.start != next || border.end != n {
            return Err(LinalgError::Structure(format!(
                "border {border:?} must cover {next}..{n}"
            )));
        }
        Ok(())
    }
}

/// Upper-triangular band factor built row by row with Givens rotations.
/// Row `j` holds columns `j ..= j + bw`, its border coefficients and the
/// rotated right-hand side.
struct GivensBand {
    n: usize,
    w: usize,
    nbd: usize,
    band: Vec<f64>,
    bord: Vec<f64>,
    rhs: Vec<f64>,
    occupied: Vec<bool>,
}

impl GivensBand {
    fn new(n: usize, bw: usize, nbd: usize) -> Self {
        let w = bw + 1;
        Self {
            n,
            w,
            nbd,
            band: vec![0.0; n * w],
            bord: vec![0.0; n * nbd],
            rhs: vec![0.0; n],
            occupied: vec![false; n],
        }
    }

    /// Rotates a row whose band part starts at column `lo` into the factor.
    /// Returns false when the band part was annihilated, leaving the reduced
    /// border part and right-hand side in `bord` and `rhs`.
    fn absorb(&mut self, mut lo: usize, win: &mut [f64], bord: &mut [f64], rhs: &mut f64) -> bool {
        let (w, nbd) = (self.w, self.nbd);
        loop {
            if lo >= self.n {
                return false;
            }
            if win[0] == 0.0 {
                if win.iter().all(|v| *v == 0.0) {
                    return false;
                }
                win.copy_within(1.., 0);
                win[w - 1] = 0.0;
                lo += 1;
                continue;
            }
            let rb = &mut self.band[lo * w..(lo + 1) * w];
            let rd = &mut self.bord[lo * nbd..(lo + 1) * nbd];
            if !self.occupied[lo] {
                rb.copy_from_slice(win);
                rd.copy_from_slice(bord);
                self.rhs[lo] = *rhs;
                self.occupied[lo] = true;
                return true;
            }
            let (a, b) = (rb[0], win[0]);
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for (x, y) in rb.iter_mut().zip(win.iter_mut()) {
                let (u, v) = (*x, *y);
                *x = c * u + s * v;
                *y = c * v - s * u;
            }
            for (x, y) in rd.iter_mut().zip(bord.iter_mut()) {
                let (u, v) = (*x, *y);
                *x = c * u + s * v;
                *y = c * v - s * u;
            }
            let u = self.rhs[lo];
            self.rhs[lo] = c * u + s * *rhs;
            *rhs = c * *rhs - s * u;
            win.copy_within(1.., 0);
            win[w - 1] = 0.0;
            lo += 1;
        }
    }

    /// Back substitution with the border unknowns already known; `adjust` is
    /// subtracted from the right-hand side.
    fn back_substitute(
        &self,
        border: &[f64],
        offset: usize,
        adjust: Option<&[f64]>,
    ) -> Result<Vec<f64>, LinalgError> {
        let (n, w, nbd) = (self.n, self.w, self.nbd);
        let mut x = vec![0.0; n];
        for j in (0..n).rev() {
            let d = self.band[j * w];
            if !self.occupied[j] || d == 0.0 {
                return Err(LinalgError::RankDeficient(offset + j));
            }
            let mut s = self.rhs[j] - adjust.map_or(0.0, |a| a[j]);
            for t in 1..w.min(n - j) {
                s -= self.band[j * w + t] * x[j + t];
            }
            for t in 0..nbd {
                s -= self.bord[j * nbd + t] * border[t];
            }
            x[j] = s / d;
        }
        Ok(x)
    }

    /// Solves `R^T g = k` in place.
    fn solve_transposed(&self, k: &mut [f64], offset: usize) -> Result<(), LinalgError> {
        let (n, w) = (self.n, self.w);
        for j in 0..n {
            let d = self.band[j * w];
            if !self.occupied[j] || d == 0.0 {
                return Err(LinalgError::RankDeficient(offset + j));
            }
            let mut s = k[j];
            for t in 1..w.min(j + 1) {
                s -= self.band[(j - t) * w + t] * k[j - t];
            }
            k[j] = s / d;
        }
        Ok(())
    }
}

/// Entries `(i, j, v)` of a symmetric matrix, each off-diagonal pair given
/// once; repeated entries add.
pub type Curvature = [(usize, usize, f64)];

/// Minimizes `||J d + r||^2 + d^T K d + sum_i shift_i d_i^2` with `d_i = 0`
/// wherever `fixed[i]`. The least-squares part is factorized orthogonally
/// (the normal equations are never formed); `K` only enters a reduced system
/// on the border, so in the banded case it may couple a block with the border
/// but not two block variables.
pub fn solve_damped(
    structure: &Structure,
    jac: &SparseRows,
    r: &[f64],
    shift: &[f64],
    fixed: &[bool],
    curvature: &Curvature,
) -> Result<Vec<f64>, LinalgError> {
    match structure {
        Structure::Dense if curvature.is_empty() => solve_dense(jac, r, shift, fixed),
        Structure::Dense => solve_dense_curved(jac, r, shift, fixed, curvature),
        Structure::BorderedBanded { blocks, border } => {
            solve_bordered(blocks, border.clone(), jac, r, shift, fixed, curvature)
        }
    }
}

fn solve_dense_curved(
    jac: &SparseRows,
    r: &[f64],
    shift: &[f64],
    fixed: &[bool],
    curvature: &Curvature,
) -> Result<Vec<f64>, LinalgError> {
    let n = jac.ncols();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);
    for (i, row) in jac.rows().enumerate() {
        for &(a, va) in row.iter().filter(|e| !fixed[e.0]) {
            g[a] -= va * r[i];
            for &(b, vb) in row.iter().filter(|e| !fixed[e.0]) {
                m[(a, b)] += va * vb;
            }
        }
    }
    for &(i, j, v) in curvature {
        if fixed[i] || fixed[j] {
            continue;
        }
        m[(i, j)] += v;
        if i != j {
            m[(j, i)] += v;
        }
    }
    for i in 0..n {
        m[(i, i)] += if fixed[i] { 1.0 } else { shift[i] };
    }
    let ch = m.cholesky().ok_or(LinalgError::Indefinite)?;
    Ok(ch.solve(&g).iter().copied().collect())
}

fn solve_dense(
    jac: &SparseRows,
    r: &[f64],
    shift: &[f64],
    fixed: &[bool],
) -> Result<Vec<f64>, LinalgError> {
    let (m, n) = (jac.nrows(), jac.ncols());
    let mut a = DMatrix::<f64>::zeros(m + n, n);
    let mut b = DVector::<f64>::zeros(m + n);
    for (i, row) in jac.rows().enumerate() {
        for &(c, v) in row {
            if !fixed[c] {
                a[(i, c)] += v;
            }
        }
        b[i] = -r[i];
    }
    for i in 0..n {
        a[(m + i, i)] = if fixed[i] { 1.0 } else { shift[i].sqrt() };
    }
    let qr = a.qr();
    qr.q_tr_mul(&mut b);
    let rr = qr.r();
    if let Some(i) = (0..n).find(|&i| rr[(i, i)] == 0.0 || !rr[(i, i)].is_finite()) {
        return Err(LinalgError::RankDeficient(i));
    }
    let x = rr
        .solve_upper_triangular(&b.rows(0, n).into_owned())
        .ok_or(LinalgError::RankDeficient(0))?;
    Ok(x.iter().copied().collect())
}

fn solve_bordered(
    blocks: &[Range<usize>],
    border: Range<usize>,
    jac: &SparseRows,
    r: &[f64],
    shift: &[f64],
    fixed: &[bool],
    curvature: &Curvature,
) -> Result<Vec<f64>, LinalgError> {
    let n = jac.ncols();
    let nbd = border.len();
    let in_border = |c: usize| c >= border.start;
    let starts: Vec<usize> = blocks.iter().map(|b| b.start).collect();
    let block_of = |c: usize| starts.partition_point(|&s| s <= c) - 1;
    let border_part = |row: &[(usize, f64)]| {
        let mut bd = vec![0.0; nbd];
        for &(c, v) in row {
            if in_border(c) && !fixed[c] {
                bd[c - border.start] += v;
            }
        }
        bd
    };

    // rows grouped by the block they touch; border-only rows apart
    let mut grouped: Vec<Vec<usize>> = vec![Vec::new(); blocks.len()];
    let mut border_rows = Vec::new();
    for (i, row) in jac.rows().enumerate() {
        let mut owner = None;
        for &(c, _) in row {
            if in_border(c) {
                continue;
            }
            let b = block_of(c);
            match owner {
                None => owner = Some(b),
                Some(o) if o != b => {
                    return Err(LinalgError::Structure(format!(
                        "row {i} couples blocks {o} and {b}"
                    )));
                }
                _ => {}
            }
        }
        match owner {
            Some(b) => grouped[b].push(i),
            None => border_rows.push(i),
        }
    }

    // per block: triangular band factor plus the rows left on the border
    let parts: Vec<(GivensBand, Vec<(Vec<f64>, f64)>)> = blocks
        .par_iter()
        .zip(grouped.par_iter())
        .map(|(range, rows)| {
            let (base, nb) = (range.start, range.len());
            let mut bw = 0;
            for &i in rows {
                let cols = jac.row(i).iter().filter(|e| !in_border(e.0)).map(|e| e.0);
                let (lo, hi) = cols.fold((usize::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)));
                bw = bw.max(hi - lo);
            }
            // rows in order of their first column keep rotations within the band
            let first = |i: usize| {
                jac.row(i)
                    .iter()
                    .filter(|e| !in_border(e.0))
                    .map(|e| e.0 - base)
                    .min()
                    .unwrap_or(0)
            };
            let mut order: Vec<(usize, Option<usize>)> =
                rows.iter().map(|&i| (first(i), Some(i))).collect();
            order.extend((0..nb).map(|la| (la, None)));
            order.sort_by_key(|e| e.0);
            let mut fac = GivensBand::new(nb, bw, nbd);
            let mut leftover = Vec::new();
            let mut win = vec![0.0; bw + 1];
            for (lo, item) in order {
                win.fill(0.0);
                let (mut bd, mut rhs) = match item {
                    Some(i) => {
                        let row = jac.row(i);
                        for &(c, v) in row {
                            if !in_border(c) && !fixed[c] {
                                win[c - base - lo] += v;
                            }
                        }
                        (border_part(row), -r[i])
                    }
                    None => {
                        let i = base + lo;
                        win[0] = if fixed[i] { 1.0 } else { shift[i].sqrt() };
                        (vec![0.0; nbd], 0.0)
                    }
                };
                if !fac.absorb(lo, &mut win, &mut bd, &mut rhs) {
                    leftover.push((bd, rhs));
                }
            }
            (fac, leftover)
        })
        .collect();

    // border stage, rows taken in block order
    let mut top = GivensBand::new(nbd, nbd.saturating_sub(1), 0);
    let mut none: [f64; 0] = [];
    let mut feed = |mut bd: Vec<f64>, mut rhs: f64| {
        if nbd > 0 {
            top.absorb(0, &mut bd, &mut none, &mut rhs);
        }
    };
    for (_, leftover) in &parts {
        for (bd, rhs) in leftover {
            feed(bd.clone(), *rhs);
        }
    }
    for &i in &border_rows {
        feed(border_part(jac.row(i)), -r[i]);
    }
    for t in 0..nbd {
        let i = border.start + t;
        let mut bd = vec![0.0; nbd];
        bd[t] = if fixed[i] { 1.0 } else { shift[i].sqrt() };
        feed(bd, 0.0);
    }
    if curvature.is_empty() {
        let dtheta = top.back_substitute(&[], border.start, None)?;
        let pieces: Vec<Vec<f64>> = parts
            .par_iter()
            .zip(blocks.par_iter())
            .map(|((fac, _), range)| fac.back_substitute(&dtheta, range.start, None))
            .collect::<Result<_, _>>()?;
        return Ok(assemble(n, blocks, border, pieces, dtheta));
    }

    // K split into block-border columns and the border corner
    let mut corner = DMatrix::<f64>::zeros(nbd, nbd);
    let mut coupling: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); blocks.len()];
    for &(i, j, v) in curvature {
        if fixed[i] || fixed[j] {
            continue;
        }
        match (in_border(i), in_border(j)) {
            (true, true) => {
                let (a, b) = (i - border.start, j - border.start);
                corner[(a, b)] += v;
                if a != b {
                    corner[(b, a)] += v;
                }
            }
            (false, true) | (true, false) => {
                let (c, t) = if in_border(j) { (i, j) } else { (j, i) };
                let b = block_of(c);
                coupling[b].push((c - blocks[b].start, t - border.start, v));
            }
            (false, false) => {
                return Err(LinalgError::Structure(format!(
                    "curvature couples block variables {i} and {j}"
                )));
            }
        }
    }

    // with R d_b = rho - E dt - R^-T K_b dt, the border system becomes
    // (T^T T + K_tt - E^T G - G^T E - G^T G) dt = T^T tau - G^T rho, G = R^-T K_b
    let mut reduced = corner;
    let mut rhs = DVector::<f64>::zeros(nbd);
    for j in 0..nbd {
        if !top.occupied[j] {
            continue;
        }
        for a in j..nbd {
            let ta = top.band[j * nbd + (a - j)];
            rhs[a] += ta * top.rhs[j];
            for b in j..nbd {
                reduced[(a, b)] += ta * top.band[j * nbd + (b - j)];
            }
        }
    }
    let gs: Vec<Option<DMatrix<f64>>> = parts
        .par_iter()
        .zip(coupling.par_iter())
        .zip(blocks.par_iter())
        .map(|(((fac, _), kb), range)| {
            if kb.is_empty() {
                return Ok(None);
            }
            let nb = fac.n;
            let mut g = DMatrix::<f64>::zeros(nb, nbd);
            for &(c, t, v) in kb {
                g[(c, t)] += v;
            }
            for t in 0..nbd {
                fac.solve_transposed(g.column_mut(t).as_mut_slice(), range.start)?;
            }
            Ok(Some(g))
        })
        .collect::<Result<_, LinalgError>>()?;
    for ((fac, _), g) in parts.iter().zip(&gs) {
        let Some(g) = g else { continue };
        let e = DMatrix::from_row_slice(fac.n, nbd, &fac.bord);
        let rho = DVector::from_column_slice(&fac.rhs);
        let gt = g.transpose();
        let eg = e.transpose() * g;
        reduced -= &eg + eg.transpose() + &gt * g;
        rhs -= gt * rho;
    }
    let dtheta: Vec<f64> = reduced
        .cholesky()
        .ok_or(LinalgError::Indefinite)?
        .solve(&rhs)
        .iter()
        .copied()
        .collect();
    let pieces: Vec<Vec<f64>> = parts
        .par_iter()
        .zip(gs.par_iter())
        .zip(blocks.par_iter())
        .map(|(((fac, _), g), range)| match g {
            None => fac.back_substitute(&dtheta, range.start, None),
            Some(g) => {
                let adj = g * DVector::from_column_slice(&dtheta);
                fac.back_substitute(&dtheta, range.start, Some(adj.as_slice()))
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(assemble(n, blocks, border, pieces, dtheta))
}

fn assemble(
    n: usize,
    blocks: &[Range<usize>],
    border: Range<usize>,
    pieces: Vec<Vec<f64>>,
    dtheta: Vec<f64>,
) -> Vec<f64> {
    let mut d = vec![0.0; n];
    for (piece, range) in pieces.into_iter().zip(blocks) {
        d[range.clone()].copy_from_slice(&piece);
    }
    d[border].copy_from_slice(&dtheta);
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `(J^T J + diag(shift)) d = -J^T r` on the free variables.
    fn normal_equations(j: &SparseRows, r: &[f64], shift: &[f64], fixed: &[bool]) -> Vec<f64> {
        let n = j.ncols();
        let jd = DMatrix::from_fn(j.nrows(), n, |i, c| {
            if fixed[c] {
                0.0
            } else {
                j.to_dense()[i][c]
            }
        });
        let mut m = jd.transpose() * &jd;
        for i in 0..n {
            m[(i, i)] += if fixed[i] { 1.0 } else { shift[i] };
        }
        let g = jd.transpose() * DVector::from_column_slice(r);
        m.cholesky().unwrap().solve(&(-g)).iter().copied().collect()
    }

    fn random_bordered(seed: u64) -> (SparseRows, Structure) {
        // 3 blocks of 7, border of 2; rows couple neighbours inside a block
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut j = SparseRows::new(23);
        for b in 0..3 {
            for k in 0..9 {
                let c = b * 7 + (k % 6);
                let mut row = vec![
                    (c, rng.random_range(-2.0..2.0)),
                    (c + 1, rng.random_range(-2.0..2.0)),
                ];
                if k % 3 == 0 {
                    row.push((21 + k % 2, rng.random_range(-1.0..1.0)));
                }
                j.push(row);
            }
        }
        j.push(vec![(21, 1.0), (22, -0.5)]);
        let s = Structure::BorderedBanded {
            blocks: vec![0..7, 7..14, 14..21],
            border: 21..23,
        };
        (j, s)
    }

    #[test]
    fn bordered_matches_dense() {
        let (j, s) = random_bordered(4);
        let r: Vec<f64> = (0..j.nrows()).map(|i| (i as f64 * 0.7).sin()).collect();
        let shift: Vec<f64> = (0..23).map(|i| 0.1 + 0.02 * i as f64).collect();
        let mut fixed = vec![false; 23];
        for _ in 0..2 {
            let want = normal_equations(&j, &r, &shift, &fixed);
            let a = solve_damped(&Structure::Dense, &j, &r, &shift, &fixed, &[]).unwrap();
            let b = solve_damped(&s, &j, &r, &shift, &fixed, &[]).unwrap();
            for ((x, y), z) in a.iter().zip(&b).zip(&want) {
                assert!((x - z).abs() < 1e-10, "{x} {z}");
                assert!((y - z).abs() < 1e-10, "{y} {z}");
            }
            fixed[3] = true;
            fixed[22] = true;
        }
        let b = solve_damped(&s, &j, &r, &shift, &fixed, &[]).unwrap();
        assert_eq!(b[3], 0.0);
        assert_eq!(b[22], 0.0);
    }

    #[test]
    fn border_curvature_matches_normal_equations() {
        let (j, s) = random_bordered(9);
        let r: Vec<f64> = (0..j.nrows()).map(|i| (i as f64 * 1.3).cos()).collect();
        let shift = vec![0.3; 23];
        let k = [
            (2, 21, 0.4),
            (21, 9, -0.3),
            (16, 22, 0.25),
            (21, 22, 0.1),
            (22, 22, -0.05),
        ];
        let mut fixed = vec![false; 23];
        for _ in 0..2 {
            let n = 23;
            let mut m = DMatrix::<f64>::zeros(n, n);
            let jd = j.to_dense();
            let mut g = DVector::<f64>::zeros(n);
            for (i, row) in jd.iter().enumerate() {
                for a in (0..n).filter(|&a| !fixed[a]) {
                    g[a] -= row[a] * r[i];
                    for b in (0..n).filter(|&b| !fixed[b]) {
                        m[(a, b)] += row[a] * row[b];
                    }
                }
            }
            for &(a, b, v) in k.iter().filter(|e| !fixed[e.0] && !fixed[e.1]) {
                m[(a, b)] += v;
                if a != b {
                    m[(b, a)] += v;
                }
            }
            for i in 0..n {
                m[(i, i)] += if fixed[i] { 1.0 } else { shift[i] };
            }
            let want = m.lu().solve(&g).unwrap();
            for st in [Structure::Dense, s.clone()] {
                let d = solve_damped(&st, &j, &r, &shift, &fixed, &k).unwrap();
                for (x, y) in d.iter().zip(want.iter()) {
                    assert!((x - y).abs() < 1e-10, "{st:?} {x} {y}");
                }
            }
            fixed[2] = true;
            fixed[22] = true;
        }
    }

    #[test]
    fn indefinite_curvature_is_reported() {
        let (j, s) = random_bordered(2);
        let r = vec![0.1; j.nrows()];
        let k = [(21, 21, -1e6)];
        for st in [Structure::Dense, s] {
            let e = solve_damped(&st, &j, &r, &[0.1; 23], &[false; 23], &k);
            assert_eq!(e, Err(LinalgError::Indefinite));
        }
    }

    #[test]
    fn ill_conditioned_rows_keep_precision() {
        // one row scaled by 1e8 on top of unit rows: squaring the condition
        // number would lose the small-scale components entirely
        let mut j = SparseRows::new(3);
        j.push(vec![(0, 1e8), (1, 1e8)]);
        j.push(vec![(0, 1.0)]);
        j.push(vec![(1, 1.0), (2, 1.0)]);
        j.push(vec![(2, 1.0)]);
        let r = [0.0, -1.0, -2.0, -1.0];
        // the first row forces d1 = -d0; the rest is solved by hand
        let want = [1.0 / 3.0, -1.0 / 3.0, 5.0 / 3.0];
        let (blocks, border) = (vec![0..2], 2..3);
        for s in [
            Structure::Dense,
            Structure::BorderedBanded { blocks, border },
        ] {
            let d = solve_damped(&s, &j, &r, &[0.0; 3], &[false; 3], &[]).unwrap();
            for (x, y) in d.iter().zip(&want) {
                assert!((x - y).abs() < 1e-9, "{s:?} {d:?}");
            }
        }
    }

    #[test]
    fn coupling_rows_are_rejected() {
        let (mut j, s) = random_bordered(1);
        j.push(vec![(2, 1.0), (9, 1.0)]);
        let r = solve_damped(&s, &j, &vec![0.0; j.nrows()], &[1.0; 23], &[false; 23], &[]);
        assert!(matches!(r, Err(LinalgError::Structure(_))));
    }

    #[test]
    fn structure_must_partition() {
        let s = Structure::BorderedBanded {
            blocks: vec![0..3, 4..6],
            border: 6..8,
        };
        assert!(s.check(8).is_err());
        let s = Structure::BorderedBanded {
            blocks: vec![0..3, 3..6],
            border: 6..8,
        };
        assert!(s.check(8).is_ok());
    }
}
