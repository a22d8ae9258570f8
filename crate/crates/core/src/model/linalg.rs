//! Dense row-major helpers for the scorer.

/// `out = w x + b` with `w` of shape `[b.len(), x.len()]`.
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), b.len() * cols);
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o = b[i] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Accumulates gradients of `y = w x + b` given `dy`. `dx`, when present,
/// receives `w^T dy` (added, not assigned).
pub(crate) fn affine_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let cols = x.len();
    for (i, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[i] += g;
        let drow = &mut dw[i * cols..(i + 1) * cols];
        for (d, v) in drow.iter_mut().zip(x) {
            *d += g * v;
        }
    }
    if let Some(dx) = dx {
        for (i, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[i * cols..(i + 1) * cols];
            for (d, a) in dx.iter_mut().zip(row) {
                *d += g * a;
            }
        }
    }
}

pub(crate) fn add_scaled(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}
