//! Compute kernels for the network layers. Convolutions are row-fused:
//! each output row is accumulated in a small buffer and written once,
//! keeping the working set inside L1 and the inner loops vectorizable.

/// dst += a * src, elementwise.
#[inline]
pub fn axpy(dst: &mut [f32], src: &[f32], a: f32) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

/// Dot product with a fixed lane-wise reduction order so results are
/// reproducible run to run.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 16;
    let mut lanes = [0.0f32; LANES];
    let mut chunks_a = a.chunks_exact(LANES);
    let mut chunks_b = b.chunks_exact(LANES);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        for l in 0..LANES {
            lanes[l] += ca[l] * cb[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    let mut sum = tail;
    for l in lanes {
        sum += l;
    }
    sum
}

#[inline]
fn sum(values: &[f32]) -> f32 {
    const LANES: usize = 16;
    let mut lanes = [0.0f32; LANES];
    let mut chunks = values.chunks_exact(LANES);
    for c in &mut chunks {
        for l in 0..LANES {
            lanes[l] += c[l];
        }
    }
    let mut acc = chunks.remainder().iter().sum::<f32>();
    for l in lanes {
        acc += l;
    }
    acc
}

/// acc += w0*src[x-1] + w1*src[x] + w2*src[x+1] with clamped edges.
#[inline(always)]
fn row3(acc: &mut [f32], src: &[f32], w0: f32, w1: f32, w2: f32) {
    let w = acc.len();
    debug_assert_eq!(src.len(), w);
    if w == 1 {
        acc[0] += w1 * src[0];
        return;
    }
    acc[0] += w1 * src[0] + w2 * src[1];
    let inner = &mut acc[1..w - 1];
    let s0 = &src[..w - 2];
    let s1 = &src[1..w - 1];
    let s2 = &src[2..];
    for i in 0..inner.len() {
        inner[i] += w0 * s0[i] + w1 * s1[i] + w2 * s2[i];
    }
    acc[w - 1] += w0 * src[w - 2] + w1 * src[w - 1];
}

/// Three simultaneous shifted dot products of a gradient row against a
/// source row: returns (sum g*src[x-1], sum g*src[x], sum g*src[x+1]).
#[inline(always)]
fn dot3(g: &[f32], src: &[f32]) -> (f32, f32, f32) {
    let w = g.len();
    debug_assert_eq!(src.len(), w);
    if w == 1 {
        return (0.0, g[0] * src[0], 0.0);
    }
    let mut s0 = 0.0f32;
    let mut s1 = g[0] * src[0];
    let mut s2 = g[0] * src[1];
    const LANES: usize = 16;
    let mut l0 = [0.0f32; LANES];
    let mut l1 = [0.0f32; LANES];
    let mut l2 = [0.0f32; LANES];
    let gi = &g[1..w - 1];
    let v0 = &src[..w - 2];
    let v1 = &src[1..w - 1];
    let v2 = &src[2..];
    let chunks = gi.len() / LANES;
    for c in 0..chunks {
        let b = c * LANES;
        let bg = &gi[b..b + LANES];
        let b0 = &v0[b..b + LANES];
        let b1 = &v1[b..b + LANES];
        let b2 = &v2[b..b + LANES];
        for l in 0..LANES {
            l0[l] += bg[l] * b0[l];
            l1[l] += bg[l] * b1[l];
            l2[l] += bg[l] * b2[l];
        }
    }
    for x in chunks * LANES..gi.len() {
        s0 += gi[x] * v0[x];
        s1 += gi[x] * v1[x];
        s2 += gi[x] * v2[x];
    }
    for l in 0..LANES {
        s0 += l0[l];
        s1 += l1[l];
        s2 += l2[l];
    }
    s0 += g[w - 1] * src[w - 2];
    s1 += g[w - 1] * src[w - 1];
    (s0, s1, s2)
}

/// 3x3 convolution, stride 1, same padding, over one sample laid out as
/// `ic` contiguous `h*w` planes. Weights are `[oc][ic][3][3]` row-major.
pub fn conv3x3_forward(
    input: &[f32],
    ic: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    bias: &[f32],
    oc: usize,
    out: &mut [f32],
) {
    let plane = h * w;
    debug_assert_eq!(input.len(), ic * plane);
    debug_assert_eq!(out.len(), oc * plane);
    const BLOCK: usize = 4;
    let mut acc = vec![0.0f32; BLOCK * w];
    let mut ob = 0usize;
    while ob < oc {
        let obn = BLOCK.min(oc - ob);
        for y in 0..h {
            for (j, row) in acc.chunks_exact_mut(w).take(obn).enumerate() {
                row.fill(bias[ob + j]);
            }
            for i in 0..ic {
                let in_plane = &input[i * plane..(i + 1) * plane];
                for ky in 0..3usize {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                    for j in 0..obn {
                        let wb = ((ob + j) * ic + i) * 9 + ky * 3;
                        row3(
                            &mut acc[j * w..(j + 1) * w],
                            src,
                            weights[wb],
                            weights[wb + 1],
                            weights[wb + 2],
                        );
                    }
                }
            }
            for j in 0..obn {
                out[(ob + j) * plane + y * w..(ob + j) * plane + (y + 1) * w]
                    .copy_from_slice(&acc[j * w..(j + 1) * w]);
            }
        }
        ob += obn;
    }
}

/// Weight and bias gradients of the 3x3 convolution for one sample,
/// accumulated into `dweights`/`dbias`.
pub fn conv3x3_grad_weights(
    input: &[f32],
    ic: usize,
    h: usize,
    w: usize,
    oc: usize,
    dout: &[f32],
    dweights: &mut [f32],
    dbias: &mut [f32],
) {
    let plane = h * w;
    for o in 0..oc {
        let dout_plane = &dout[o * plane..(o + 1) * plane];
        dbias[o] += sum(dout_plane);
        for i in 0..ic {
            let in_plane = &input[i * plane..(i + 1) * plane];
            let wbase = (o * ic + i) * 9;
            for ky in 0..3usize {
                let dy = ky as isize - 1;
                let mut acc = (0.0f32, 0.0f32, 0.0f32);
                for y in 0..h {
                    let iy = y as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let g = &dout_plane[y * w..(y + 1) * w];
                    let src = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                    let (a0, a1, a2) = dot3(g, src);
                    acc.0 += a0;
                    acc.1 += a1;
                    acc.2 += a2;
                }
                dweights[wbase + ky * 3] += acc.0;
                dweights[wbase + ky * 3 + 1] += acc.1;
                dweights[wbase + ky * 3 + 2] += acc.2;
            }
        }
    }
}

/// Reorders `[oc][ic][3][3]` weights into the flipped `[ic][oc][3][3]`
/// layout with which the input gradient is itself a forward convolution
/// of the output gradient.
pub fn flip_weights(weights: &[f32], oc: usize, ic: usize) -> Vec<f32> {
    let mut flipped = vec![0.0f32; weights.len()];
    for o in 0..oc {
        for i in 0..ic {
            for ky in 0..3 {
                for kx in 0..3 {
                    flipped[((i * oc + o) * 9) + (2 - ky) * 3 + (2 - kx)] =
                        weights[((o * ic + i) * 9) + ky * 3 + kx];
                }
            }
        }
    }
    flipped
}

/// 2x2 max pooling with stride 2 over `c` planes; floors odd extents.
/// Records the winning quadrant (dy*2+dx) for the backward scatter.
pub fn maxpool2x2_forward(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    out: &mut [f32],
    idx: &mut [u8],
) {
    let oh = h / 2;
    let ow = w / 2;
    let in_plane = h * w;
    let out_plane = oh * ow;
    for ch in 0..c {
        let src = &input[ch * in_plane..(ch + 1) * in_plane];
        let dst = &mut out[ch * out_plane..(ch + 1) * out_plane];
        let didx = &mut idx[ch * out_plane..(ch + 1) * out_plane];
        for py in 0..oh {
            let r0 = 2 * py * w;
            let r1 = r0 + w;
            for px in 0..ow {
                let x0 = 2 * px;
                let quad = [src[r0 + x0], src[r0 + x0 + 1], src[r1 + x0], src[r1 + x0 + 1]];
                let mut best = 0usize;
                for q in 1..4 {
                    if quad[q] > quad[best] {
                        best = q;
                    }
                }
                dst[py * ow + px] = quad[best];
                didx[py * ow + px] = best as u8;
            }
        }
    }
}

pub fn maxpool2x2_backward(
    dout: &[f32],
    idx: &[u8],
    c: usize,
    h: usize,
    w: usize,
    dinput: &mut [f32],
) {
    let oh = h / 2;
    let ow = w / 2;
    let in_plane = h * w;
    let out_plane = oh * ow;
    dinput.fill(0.0);
    for ch in 0..c {
        let g = &dout[ch * out_plane..(ch + 1) * out_plane];
        let gi = &idx[ch * out_plane..(ch + 1) * out_plane];
        let din = &mut dinput[ch * in_plane..(ch + 1) * in_plane];
        for py in 0..oh {
            for px in 0..ow {
                let o = py * ow + px;
                let quad = gi[o] as usize;
                let y = 2 * py + quad / 2;
                let x = 2 * px + quad % 2;
                din[y * w + x] += g[o];
            }
        }
    }
}

/// Dense forward for one sample: `y = W x + b` with `W` stored `[out][in]`.
pub fn dense_forward(x: &[f32], weights: &[f32], bias: &[f32], out: &mut [f32]) {
    let in_len = x.len();
    for (o, slot) in out.iter_mut().enumerate() {
        *slot = bias[o] + dot(&weights[o * in_len..(o + 1) * in_len], x);
    }
}

/// Accumulates weight/bias gradients and writes the input gradient
/// (overwriting `dx`).
pub fn dense_backward(
    x: &[f32],
    weights: &[f32],
    grad_out: &[f32],
    dweights: &mut [f32],
    dbias: &mut [f32],
    dx: &mut [f32],
) {
    let in_len = x.len();
    dx.fill(0.0);
    for (o, &g) in grad_out.iter().enumerate() {
        dbias[o] += g;
        axpy(&mut dweights[o * in_len..(o + 1) * in_len], x, g);
        axpy(dx, &weights[o * in_len..(o + 1) * in_len], g);
    }
}

pub fn relu_forward(input: &[f32], out: &mut [f32]) {
    for (o, &v) in out.iter_mut().zip(input) {
        *o = if v > 0.0 { v } else { 0.0 };
    }
}

/// Zeroes gradients where the forward output was clamped.
pub fn relu_backward(output: &[f32], grad: &mut [f32]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(data: &mut [f32], rows: usize, cols: usize) {
    for row in data.chunks_exact_mut(cols).take(rows) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}
