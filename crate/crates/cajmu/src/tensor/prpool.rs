//! Exact integrals of the bilinear interpolant for precise ROI pooling.
//!
//! Lattice points sit at integer coordinates; the interpolant is defined
//! on `[0, W-1] x [0, H-1]` and is zero outside. The bilinear surface is a
//! tensor product of 1-D hat functions, so every bin integral reduces to a
//! pair of 1-D hat-integral weight vectors.

/// Integral of each hat basis function over `[a, b]` clipped to `[0, n-1]`.
fn weights_1d(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    if n < 2 {
        if n == 1 {
            // Single lattice point: the domain is degenerate.
            return w;
        }
        return w;
    }
    let lo = a.max(0.0);
    let hi = b.min((n - 1) as f64);
    if hi <= lo {
        return w;
    }
    let first_cell = lo.floor() as usize;
    let last_cell = (hi.ceil() as usize).min(n - 1).saturating_sub(1);
    for c in first_cell..=last_cell.max(first_cell) {
        let c0 = c as f64;
        let t0 = (lo - c0).max(0.0);
        let t1 = (hi - c0).min(1.0);
        if t1 <= t0 {
            continue;
        }
        let lin = (t1 * t1 - t0 * t0) / 2.0;
        w[c] += (t1 - t0) - lin;
        w[c + 1] += lin;
    }
    w
}

/// Hat basis values at point `x`: the interpolation weights of the two
/// neighbouring lattice points, empty if `x` lies outside the domain.
fn point_weights_1d(x: f64, n: usize) -> Vec<(usize, f64)> {
    if n < 2 || x < 0.0 || x > (n - 1) as f64 {
        return vec![];
    }
    let c = (x.floor() as usize).min(n - 2);
    let t = x - c as f64;
    vec![(c, 1.0 - t), (c + 1, t)]
}

fn bin_edges(lo: f64, hi: f64, idx: usize, bins: usize) -> (f64, f64) {
    let step = (hi - lo) / bins as f64;
    (lo + step * idx as f64, lo + step * (idx + 1) as f64)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward(
    feat: &[f64],
    c: usize,
    h: usize,
    w: usize,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    bh: usize,
    bw: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c * bh * bw];
    for p in 0..bh {
        let (ay, by) = bin_edges(y0, y1, p, bh);
        let wy = weights_1d(ay, by, h);
        for q in 0..bw {
            let (ax, bx) = bin_edges(x0, x1, q, bw);
            let wx = weights_1d(ax, bx, w);
            let area = (bx - ax) * (by - ay);
            for ch in 0..c {
                let plane = &feat[ch * h * w..(ch + 1) * h * w];
                let mut acc = 0.0;
                for (j, &vy) in wy.iter().enumerate() {
                    if vy == 0.0 {
                        continue;
                    }
                    let row = &plane[j * w..(j + 1) * w];
                    let mut racc = 0.0;
                    for (i, &vx) in wx.iter().enumerate() {
                        racc += vx * row[i];
                    }
                    acc += vy * racc;
                }
                out[ch * bh * bw + p * bw + q] = acc / area;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn grad_feat(
    g: &[f64],
    c: usize,
    h: usize,
    w: usize,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    bh: usize,
    bw: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    for p in 0..bh {
        let (ay, by) = bin_edges(y0, y1, p, bh);
        let wy = weights_1d(ay, by, h);
        for q in 0..bw {
            let (ax, bx) = bin_edges(x0, x1, q, bw);
            let wx = weights_1d(ax, bx, w);
            let inv_area = 1.0 / ((bx - ax) * (by - ay));
            for ch in 0..c {
                let gv = g[ch * bh * bw + p * bw + q] * inv_area;
                if gv == 0.0 {
                    continue;
                }
                let plane = &mut out[ch * h * w..(ch + 1) * h * w];
                for (j, &vy) in wy.iter().enumerate() {
                    if vy == 0.0 {
                        continue;
                    }
                    for (i, &vx) in wx.iter().enumerate() {
                        if vx != 0.0 {
                            plane[j * w + i] += gv * vy * vx;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of the pooled output w.r.t. the four box corner coordinates,
/// contracted with the upstream gradient. Returns `[dx0, dy0, dx1, dy1]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grad_coords(
    g: &[f64],
    feat: &[f64],
    c: usize,
    h: usize,
    w: usize,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    bh: usize,
    bw: usize,
) -> Vec<f64> {
    // Line integral of the interpolant along x = xs over [ay, by], per
    // channel. Zero when xs is outside the domain.
    let line_y = |xs: f64, ay: f64, by: f64, ch: usize| -> f64 {
        let px = point_weights_1d(xs, w);
        if px.is_empty() {
            return 0.0;
        }
        let wy = weights_1d(ay, by, h);
        let plane = &feat[ch * h * w..(ch + 1) * h * w];
        wy.iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, vy)| {
                vy * px
                    .iter()
                    .map(|&(i, vx)| vx * plane[j * w + i])
                    .sum::<f64>()
            })
            .sum()
    };
    let line_x = |ys: f64, ax: f64, bx: f64, ch: usize| -> f64 {
        let py = point_weights_1d(ys, h);
        if py.is_empty() {
            return 0.0;
        }
        let wx = weights_1d(ax, bx, w);
        let plane = &feat[ch * h * w..(ch + 1) * h * w];
        py.iter()
            .map(|&(j, vy)| {
                vy * wx
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, vx)| vx * plane[j * w + i])
                    .sum::<f64>()
            })
            .sum()
    };

    let mut d = [0.0; 4];
    for p in 0..bh {
        let (ay, by) = bin_edges(y0, y1, p, bh);
        let dy = by - ay;
        // Edge sensitivities to the box corners.
        let day_dy0 = 1.0 - p as f64 / bh as f64;
        let day_dy1 = p as f64 / bh as f64;
        let dby_dy0 = 1.0 - (p + 1) as f64 / bh as f64;
        let dby_dy1 = (p + 1) as f64 / bh as f64;
        for q in 0..bw {
            let (ax, bx) = bin_edges(x0, x1, q, bw);
            let dx = bx - ax;
            let dax_dx0 = 1.0 - q as f64 / bw as f64;
            let dax_dx1 = q as f64 / bw as f64;
            let dbx_dx0 = 1.0 - (q + 1) as f64 / bw as f64;
            let dbx_dx1 = (q + 1) as f64 / bw as f64;
            let inv_area = 1.0 / (dx * dy);
            let wy = weights_1d(ay, by, h);
            let wx = weights_1d(ax, bx, w);
            for ch in 0..c {
                let gv = g[ch * bh * bw + p * bw + q];
                if gv == 0.0 {
                    continue;
                }
                let plane = &feat[ch * h * w..(ch + 1) * h * w];
                let mut integral = 0.0;
                for (j, &vy) in wy.iter().enumerate() {
                    if vy == 0.0 {
                        continue;
                    }
                    for (i, &vx) in wx.iter().enumerate() {
                        integral += vy * vx * plane[j * w + i];
                    }
                }
                let out = integral * inv_area;
                let d_ax = -line_y(ax, ay, by, ch) * inv_area + out / dx;
                let d_bx = line_y(bx, ay, by, ch) * inv_area - out / dx;
                let d_ay = -line_x(ay, ax, bx, ch) * inv_area + out / dy;
                let d_by = line_x(by, ax, bx, ch) * inv_area - out / dy;
                d[0] += gv * (d_ax * dax_dx0 + d_bx * dbx_dx0);
                d[1] += gv * (d_ay * day_dy0 + d_by * dby_dy0);
                d[2] += gv * (d_ax * dax_dx1 + d_bx * dbx_dx1);
                d[3] += gv * (d_ay * day_dy1 + d_by * dby_dy1);
            }
        }
    }
    d.to_vec()
}
