//! Raw forward/backward kernels on `[C, H, W]` row-major buffers.

/// `c[m×n] = alpha·a[m×k]·b[k×n] + beta·c` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers size `a`, `b`, `c` for the given dimensions and strides;
    // the asserts below guard the extreme element of each operand.
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    let mut cols = vec![0.0; g.patch() * hw];
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and the im2col buffer needed by the backward pass.
pub fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    g: &ConvGeometry,
) -> (Vec<f64>, Vec<f64>) {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    let cols = im2col(x, g);
    let mut out = vec![0.0; g.cout * hw];
    for (c, row) in out.chunks_mut(hw).enumerate() {
        row.fill(bias[c]);
    }
    let kk = g.patch();
    gemm(g.cout, kk, hw, weight, kk, 1, &cols, hw, 1, 1.0, &mut out);
    (out, cols)
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub fn conv2d_backward(
    dy: &[f64],
    weight: &[f64],
    cols: &[f64],
    g: &ConvGeometry,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    let kk = g.patch();
    for (c, row) in dy.chunks(hw).enumerate() {
        db[c] += row.iter().sum::<f64>();
    }
    // dW[cout×kk] += dY[cout×hw] · colsᵀ[hw×kk]
    gemm(g.cout, hw, kk, dy, hw, 1, cols, 1, hw, 1.0, dw);
    if !need_dx {
        return None;
    }
    // dcols[kk×hw] = Wᵀ[kk×cout] · dY[cout×hw]
    let mut dcols = vec![0.0; kk * hw];
    gemm(kk, g.cout, hw, weight, 1, kk, dy, hw, 1, 0.0, &mut dcols);
    let mut dx = vec![0.0; g.cin * g.h * g.w];
    col2im(&dcols, g, &mut dx);
    Some(dx)
}

/// Per-position L2 normalization over channels: `x / sqrt(|x|² + eps²)`.
/// Returns the output and the per-position norms.
pub fn channel_normalize(x: &[f64], c: usize, hw: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut norms = vec![eps * eps; hw];
    for ch in 0..c {
        for (n, v) in norms.iter_mut().zip(&x[ch * hw..(ch + 1) * hw]) {
            *n += v * v;
        }
    }
    norms.iter_mut().for_each(|n| *n = n.sqrt());
    let mut y = x.to_vec();
    for ch in 0..c {
        for (v, n) in y[ch * hw..(ch + 1) * hw].iter_mut().zip(&norms) {
            *v /= n;
        }
    }
    (y, norms)
}

pub fn channel_normalize_backward(dy: &[f64], y: &[f64], norms: &[f64], c: usize) -> Vec<f64> {
    let hw = norms.len();
    let mut dot = vec![0.0; hw];
    for ch in 0..c {
        for i in 0..hw {
            dot[i] += y[ch * hw + i] * dy[ch * hw + i];
        }
    }
    let mut dx = vec![0.0; c * hw];
    for ch in 0..c {
        for i in 0..hw {
            let k = ch * hw + i;
            dx[k] = (dy[k] - y[k] * dot[i]) / norms[i];
        }
    }
    dx
}

/// Number of displacement slots for a square search window.
pub fn correlation_channels(radius: usize) -> usize {
    (2 * radius + 1) * (2 * radius + 1)
}

/// Local correlation `out[d, y, x] = Σ_c a[c, y, x] · b[c, y+dy, x+dx]` over
/// displacements `dy, dx ∈ [-r, r]` (slot `d = (dy+r)(2r+1) + (dx+r)`);
/// out-of-bounds positions contribute zero.
pub fn correlation_forward(
    a: &[f64],
    b: &[f64],
    c: usize,
    h: usize,
    w: usize,
    r: usize,
) -> Vec<f64> {
    let side = 2 * r + 1;
    let hw = h * w;
    let mut out = vec![0.0; side * side * hw];
    for dy in -(r as isize)..=r as isize {
        for dx in -(r as isize)..=r as isize {
            let d = ((dy + r as isize) as usize) * side + (dx + r as isize) as usize;
            let slot = &mut out[d * hw..(d + 1) * hw];
            let (y0, y1) = valid_range(h, dy);
            let (x0, x1) = valid_range(w, dx);
            for ch in 0..c {
                let pa = &a[ch * hw..(ch + 1) * hw];
                let pb = &b[ch * hw..(ch + 1) * hw];
                for y in y0..y1 {
                    let yb = (y as isize + dy) as usize;
                    let ra = &pa[y * w..(y + 1) * w];
                    let rb = &pb[yb * w..(yb + 1) * w];
                    let ro = &mut slot[y * w..(y + 1) * w];
                    for x in x0..x1 {
                        ro[x] += ra[x] * rb[(x as isize + dx) as usize];
                    }
                }
            }
        }
    }
    out
}

/// Rows/cols `i` with `0 <= i + d < n`.
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    (lo.min(n), hi.max(lo.min(n)))
}

pub fn correlation_backward(
    g: &[f64],
    a: &[f64],
    b: &[f64],
    c: usize,
    h: usize,
    w: usize,
    r: usize,
) -> (Vec<f64>, Vec<f64>) {
    let side = 2 * r + 1;
    let hw = h * w;
    let mut da = vec![0.0; c * hw];
    let mut db = vec![0.0; c * hw];
    for dy in -(r as isize)..=r as isize {
        for dx in -(r as isize)..=r as isize {
            let d = ((dy + r as isize) as usize) * side + (dx + r as isize) as usize;
            let slot = &g[d * hw..(d + 1) * hw];
            let (y0, y1) = valid_range(h, dy);
            let (x0, x1) = valid_range(w, dx);
            for ch in 0..c {
                let base = ch * hw;
                for y in y0..y1 {
                    let yb = (y as isize + dy) as usize;
                    for x in x0..x1 {
                        let xb = (x as isize + dx) as usize;
                        let go = slot[y * w + x];
                        da[base + y * w + x] += go * b[base + yb * w + xb];
                        db[base + yb * w + xb] += go * a[base + y * w + x];
                    }
                }
            }
        }
    }
    (da, db)
}

/// Bilinear warp: `out[c, y, x] = x(c, y + flow_y, x + flow_x)`, zero outside.
/// Flow channel 0 is horizontal, channel 1 vertical.
pub fn warp_forward(x: &[f64], flow: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for y in 0..h {
        for xx in 0..w {
            let i = y * w + xx;
            let taps = bilinear_taps(xx as f64 + flow[i], y as f64 + flow[hw + i], h, w);
            for ch in 0..c {
                let plane = &x[ch * hw..(ch + 1) * hw];
                out[ch * hw + i] = taps.iter().map(|&(k, wt)| wt * plane[k]).sum();
            }
        }
    }
    out
}

/// In-bounds `(index, weight)` taps for sampling at `(sx, sy)`.
fn bilinear_taps(sx: f64, sy: f64, h: usize, w: usize) -> Vec<(usize, f64)> {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let ax = sx - x0;
    let ay = sy - y0;
    let mut taps = Vec::with_capacity(4);
    for (oy, wy) in [(0.0, 1.0 - ay), (1.0, ay)] {
        for (ox, wx) in [(0.0, 1.0 - ax), (1.0, ax)] {
            let yy = y0 + oy;
            let xx = x0 + ox;
            if yy >= 0.0 && yy < h as f64 && xx >= 0.0 && xx < w as f64 {
                taps.push((yy as usize * w + xx as usize, wy * wx));
            }
        }
    }
    taps
}

pub fn warp_backward(
    g: &[f64],
    x: &[f64],
    flow: &[f64],
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let mut dx = vec![0.0; c * hw];
    let mut dflow = vec![0.0; 2 * hw];
    let at = |plane: &[f64], yy: f64, xx: f64| -> f64 {
        if yy >= 0.0 && yy < h as f64 && xx >= 0.0 && xx < w as f64 {
            plane[yy as usize * w + xx as usize]
        } else {
            0.0
        }
    };
    for y in 0..h {
        for xx in 0..w {
            let i = y * w + xx;
            let sx = xx as f64 + flow[i];
            let sy = y as f64 + flow[hw + i];
            let taps = bilinear_taps(sx, sy, h, w);
            let x0 = sx.floor();
            let y0 = sy.floor();
            let ax = sx - x0;
            let ay = sy - y0;
            let (mut gx, mut gy) = (0.0, 0.0);
            for ch in 0..c {
                let go = g[ch * hw + i];
                if go == 0.0 {
                    continue;
                }
                let plane = &x[ch * hw..(ch + 1) * hw];
                for &(k, wt) in &taps {
                    dx[ch * hw + k] += go * wt;
                }
                let v00 = at(plane, y0, x0);
                let v01 = at(plane, y0, x0 + 1.0);
                let v10 = at(plane, y0 + 1.0, x0);
                let v11 = at(plane, y0 + 1.0, x0 + 1.0);
                gx += go * ((1.0 - ay) * (v01 - v00) + ay * (v11 - v10));
                gy += go * ((1.0 - ax) * (v10 - v00) + ax * (v11 - v01));
            }
            dflow[i] = gx;
            dflow[hw + i] = gy;
        }
    }
    (dx, dflow)
}

/// Half-pixel-centered linear interpolation taps `(i0, i1, frac)` mapping
/// `n_out` samples onto `n_in`.
pub fn linear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = if i0 == n_in - 1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

pub fn resize_forward(x: &[f64], c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
    let ty = linear_taps(h, ho);
    let tx = linear_taps(w, wo);
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = (1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
                let bot = (1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
                dst[oy * wo + ox] = (1.0 - fy) * top + fy * bot;
            }
        }
    }
    out
}

pub fn resize_backward(g: &[f64], c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<f64> {
    let ty = linear_taps(h, ho);
    let tx = linear_taps(w, wo);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let src = &g[ch * ho * wo..(ch + 1) * ho * wo];
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let go = src[oy * wo + ox];
                plane[y0 * w + x0] += go * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += go * (1.0 - fy) * fx;
                plane[y1 * w + x0] += go * fy * (1.0 - fx);
                plane[y1 * w + x1] += go * fy * fx;
            }
        }
    }
    dx
}

/// Per-channel softmax over all spatial positions of `h`.
pub fn spatial_softmax(h: &[f64], c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * hw];
    for ch in 0..c {
        let src = &h[ch * hw..(ch + 1) * hw];
        let dst = &mut out[ch * hw..(ch + 1) * hw];
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        dst.iter_mut().for_each(|d| *d /= sum);
    }
    out
}
