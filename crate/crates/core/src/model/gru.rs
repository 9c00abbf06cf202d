//! Gated recurrent cell with a hand-written backward pass.
//!
//! `z = σ(Wz x + Uz h + bz)`, `r = σ(Wr x + Ur h + br)`,
//! `n = tanh(Wn x + bn + r ⊙ (Un h))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
//! `W` is `3H × in`, `U` is `3H × H` and `b` is `3H × 1`, stacked `[z; r; n]`.

use super::tensor::{sigmoid, Tensor};

/// Indices of one cell's blocks in the parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruIdx {
    pub w: usize,
    pub u: usize,
    pub b: usize,
}

/// Values saved by the forward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    /// `Un h`, needed for the reset-gate gradient.
    pub un: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn forward(p: &[Tensor], idx: GruIdx, x: &[f64], h_prev: &[f64]) -> GruCache {
    let hs = h_prev.len();
    let (w, u, b) = (&p[idx.w], &p[idx.u], &p[idx.b]);
    let mut a = b.data.clone();
    w.matvec_add(x, &mut a);
    let mut uh = vec![0.0; 3 * hs];
    u.matvec_add(h_prev, &mut uh);
    let mut z = vec![0.0; hs];
    let mut r = vec![0.0; hs];
    let mut n = vec![0.0; hs];
    let mut h = vec![0.0; hs];
    for k in 0..hs {
        z[k] = sigmoid(a[k] + uh[k]);
        r[k] = sigmoid(a[hs + k] + uh[hs + k]);
        n[k] = (a[2 * hs + k] + r[k] * uh[2 * hs + k]).tanh();
        h[k] = (1.0 - z[k]) * n[k] + z[k] * h_prev[k];
    }
    GruCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        un: uh[2 * hs..].to_vec(),
        h,
    }
}

/// Forward pass without keeping a cache.
pub fn step(p: &[Tensor], idx: GruIdx, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    forward(p, idx, x, h_prev).h
}

/// Accumulate parameter gradients for `dh` flowing into the cell output and
/// return `(dx, dh_prev)`.
pub fn backward(p: &[Tensor], g: &mut [Tensor], idx: GruIdx, c: &GruCache, dh: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hs = dh.len();
    let mut da = vec![0.0; 3 * hs];
    let mut du = vec![0.0; 3 * hs];
    let mut dh_prev = vec![0.0; hs];
    for k in 0..hs {
        let dz = dh[k] * (c.h_prev[k] - c.n[k]);
        let dn = dh[k] * (1.0 - c.z[k]);
        dh_prev[k] = dh[k] * c.z[k];
        let dn_pre = dn * (1.0 - c.n[k] * c.n[k]);
        let dr_pre = dn_pre * c.un[k] * c.r[k] * (1.0 - c.r[k]);
        let dz_pre = dz * c.z[k] * (1.0 - c.z[k]);
        da[k] = dz_pre;
        da[hs + k] = dr_pre;
        da[2 * hs + k] = dn_pre;
        du[k] = dz_pre;
        du[hs + k] = dr_pre;
        du[2 * hs + k] = dn_pre * c.r[k];
    }
    g[idx.w].outer_add(&da, &c.x);
    for (gb, d) in g[idx.b].data.iter_mut().zip(&da) {
        *gb += d;
    }
    g[idx.u].outer_add(&du, &c.h_prev);
    let mut dx = vec![0.0; c.x.len()];
    p[idx.w].matvec_t_add(&da, &mut dx);
    p[idx.u].matvec_t_add(&du, &mut dh_prev);
    (dx, dh_prev)
}
