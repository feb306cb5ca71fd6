//! Low-level dense kernels shared by the graph ops.

/// `c (+)= op(a) · op(b)` for row-major operands.
///
/// `a` is `m×k` (or `k×m` when `ta`), `b` is `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds asserted above cover every element addressed by
    // these strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a `[B, T, F, C]` activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Grid {
    pub batch: usize,
    pub time: usize,
    pub freq: usize,
    pub chans: usize,
}

impl Grid {
    pub fn positions(&self) -> usize {
        self.batch * self.time * self.freq
    }
}

/// Positions unfolded at a time; keeps the column buffer cache-resident.
const CONV_BLOCK: usize = 256;

/// Unfolds the 3×3 neighbourhoods of flat positions `start..end` into
/// `cols` with zero padding. Column order is `(dt, df, channel)`.
fn unfold(x: &[f64], g: Grid, start: usize, end: usize, cols: &mut [f64]) {
    let c = g.chans;
    let width = 9 * c;
    for (p, row) in (start..end).zip(cols.chunks_exact_mut(width)) {
        let f = p % g.freq;
        let t = (p / g.freq) % g.time;
        let b = p / (g.freq * g.time);
        for dt in 0..3 {
            let tt = t + dt;
            for df in 0..3 {
                let ff = f + df;
                let dst = &mut row[(dt * 3 + df) * c..(dt * 3 + df + 1) * c];
                if tt == 0 || tt > g.time || ff == 0 || ff > g.freq {
                    dst.fill(0.0);
                } else {
                    let src = ((b * g.time + tt - 1) * g.freq + ff - 1) * c;
                    dst.copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
}

/// Adjoint of [`unfold`]: scatter-adds `cols` back onto `x`.
fn fold(cols: &[f64], g: Grid, start: usize, end: usize, x: &mut [f64]) {
    let c = g.chans;
    let width = 9 * c;
    for (p, row) in (start..end).zip(cols.chunks_exact(width)) {
        let f = p % g.freq;
        let t = (p / g.freq) % g.time;
        let b = p / (g.freq * g.time);
        for dt in 0..3 {
            let tt = t + dt;
            if tt == 0 || tt > g.time {
                continue;
            }
            for df in 0..3 {
                let ff = f + df;
                if ff == 0 || ff > g.freq {
                    continue;
                }
                let dst = ((b * g.time + tt - 1) * g.freq + ff - 1) * c;
                let src = &row[(dt * 3 + df) * c..(dt * 3 + df + 1) * c];
                x[dst..dst + c].iter_mut().zip(src).for_each(|(a, v)| *a += v);
            }
        }
    }
}

/// 3×3 "same" convolution, `x: [B, T, F, C]`, `w: [3, 3, C, O]`.
pub(crate) fn conv3(x: &[f64], w: &[f64], g: Grid, o: usize) -> Vec<f64> {
    let width = 9 * g.chans;
    let total = g.positions();
    let mut out = vec![0.0; total * o];
    let mut cols = vec![0.0; CONV_BLOCK * width];
    for start in (0..total).step_by(CONV_BLOCK) {
        let end = (start + CONV_BLOCK).min(total);
        unfold(x, g, start, end, &mut cols);
        gemm(end - start, width, o, &cols, false, w, false, &mut out[start * o..end * o], false);
    }
    out
}

/// Gradients of [`conv3`] with respect to `w` and `x`; either may be
/// skipped, in which case an empty vector is returned for it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    g: Grid,
    o: usize,
    want_w: bool,
    want_x: bool,
) -> (Vec<f64>, Vec<f64>) {
    let width = 9 * g.chans;
    let total = g.positions();
    let mut dw = if want_w { vec![0.0; width * o] } else { Vec::new() };
    let mut dx = if want_x { vec![0.0; total * g.chans] } else { Vec::new() };
    let mut cols = vec![0.0; CONV_BLOCK * width];
    for start in (0..total).step_by(CONV_BLOCK) {
        let end = (start + CONV_BLOCK).min(total);
        let m = end - start;
        let d = &dout[start * o..end * o];
        if want_w {
            unfold(x, g, start, end, &mut cols);
            gemm(width, m, o, &cols, true, d, false, &mut dw, true);
        }
        if want_x {
            gemm(m, o, width, d, false, w, true, &mut cols, false);
            fold(&cols, g, start, end, &mut dx);
        }
    }
    (dw, dx)
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        out
    }

    #[test]
    fn gemm_matches_naive_for_all_transpose_flags() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if ta { &at } else { &a };
            let bb = if tb { &bt } else { &b };
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, aa, ta, bb, tb, &mut c, false);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fold_is_adjoint_of_unfold() {
        let g = Grid {
            batch: 2,
            time: 4,
            freq: 3,
            chans: 2,
        };
        let n = g.positions();
        let x: Vec<f64> = (0..n * g.chans).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..n * 9 * g.chans).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; n * 9 * g.chans];
        unfold(&x, g, 0, n, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        fold(&y, g, 0, n, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
