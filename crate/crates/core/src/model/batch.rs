//! Batched forward/backward pass of the pricing network.
//!
//! Activations are stored as `HIDDEN × (nc·n)` row-major matrices whose
//! column blocks hold the value, d1 and d2 channels of each sample, so the
//! 50×50 layer is a single GEMM for all channels. The backward pass is the
//! same reverse-over-forward sweep as [`crate::autodiff::Tape`], fused.

use super::{B1, B2, B3, HIDDEN, N_PARAMS, W1, W2, W3};
use crate::autodiff::{sigmoid, softplus};
use crate::error::{Error, Result};

/// How many jet channels to propagate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Channels {
    Value = 1,
    Delta = 2,
    Gamma = 3,
}

#[derive(Debug, Clone, Default)]
pub struct BatchPass {
    n: usize,
    nc: usize,
    m: Vec<f64>,
    tau: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    z3: Vec<f64>,
    /// Per-sample `[g, ∂g/∂m, ∂²g/∂m²]`; channels beyond the requested ones are 0.
    pub out: Vec<[f64; 3]>,
    z2_bar: Vec<f64>,
    a1_bar: Vec<f64>,
}

/// In-place `tanh`, branch-free so the loop vectorises; agrees with
/// `f64::tanh` to a few ulp in absolute terms. Dominates the hidden layers
/// otherwise.
fn tanh_in_place(xs: &mut [f64]) {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const MAGIC: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    for x in xs.iter_mut() {
        // e = exp(-2|x|) with the argument clamped where tanh saturates anyway.
        let y = -2.0 * x.abs();
        let y = if y < -40.0 { -40.0 } else { y };
        let shifted = y * LOG2E + MAGIC;
        let n = shifted - MAGIC;
        let k = shifted.to_bits().wrapping_sub(MAGIC.to_bits());
        let r = (y - n * LN2_HI) - n * LN2_LO;
        let mut p = 1.0 / 6_227_020_800.0;
        for c in [
            1.0 / 479_001_600.0,
            1.0 / 39_916_800.0,
            1.0 / 3_628_800.0,
            1.0 / 362_880.0,
            1.0 / 40_320.0,
            1.0 / 5_040.0,
            1.0 / 720.0,
            1.0 / 120.0,
            1.0 / 24.0,
            1.0 / 6.0,
            0.5,
            1.0,
            1.0,
        ] {
            p = p * r + c;
        }
        let e = p * f64::from_bits(k.wrapping_add(1023) << 52);
        *x = ((1.0 - e) / (1.0 + e)).copysign(*x);
    }
}

#[allow(clippy::too_many_arguments)]
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
    assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches; c is
    // row-major m×n and does not alias a or b.
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

fn check(layer: usize, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            location: format!("network layer {layer}"),
        })
    }
}

impl BatchPass {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&mut self, theta: &[f64], m: &[f64], tau: &[f64], ch: Channels) -> Result<()> {
        assert_eq!(theta.len(), N_PARAMS);
        assert_eq!(m.len(), tau.len());
        let n = m.len();
        let nc = ch as usize;
        let cols = nc * n;
        self.n = n;
        self.nc = nc;
        self.m.clear();
        self.m.extend_from_slice(m);
        self.tau.clear();
        self.tau.extend_from_slice(tau);
        self.out.clear();
        self.out.resize(n, [0.0; 3]);
        if n == 0 {
            return Ok(());
        }
        for buf in [&mut self.a1, &mut self.z2, &mut self.a2] {
            buf.clear();
            buf.resize(HIDDEN * cols, 0.0);
        }
        self.z3.clear();
        self.z3.resize(cols, 0.0);

        for j in 0..HIDDEN {
            let (w0, w1, b) = (theta[W1 + 2 * j], theta[W1 + 2 * j + 1], theta[B1 + j]);
            let row = &mut self.a1[j * cols..(j + 1) * cols];
            for i in 0..n {
                row[i] = w0 * m[i] + w1 * tau[i] + b;
            }
            tanh_in_place(&mut row[..n]);
            for i in 0..n {
                let t = row[i];
                if nc >= 2 {
                    let s = 1.0 - t * t;
                    row[n + i] = s * w0;
                    if nc >= 3 {
                        row[2 * n + i] = -2.0 * t * s * w0 * w0;
                    }
                }
            }
        }
        check(1, &self.a1)?;

        gemm(HIDDEN, HIDDEN, cols, &theta[W2..B2], HIDDEN, 1, &self.a1, cols, 1, 0.0, &mut self.z2);
        for j in 0..HIDDEN {
            let b = theta[B2 + j];
            let z = &mut self.z2[j * cols..(j + 1) * cols];
            z[..n].iter_mut().for_each(|v| *v += b);
            let a = &mut self.a2[j * cols..(j + 1) * cols];
            a[..n].copy_from_slice(&z[..n]);
            tanh_in_place(&mut a[..n]);
            for i in 0..n {
                let t = a[i];
                if nc >= 2 {
                    let s = 1.0 - t * t;
                    let x1 = z[n + i];
                    a[n + i] = s * x1;
                    if nc >= 3 {
                        a[2 * n + i] = -2.0 * t * s * x1 * x1 + s * z[2 * n + i];
                    }
                }
            }
        }
        check(2, &self.a2)?;

        gemm(1, HIDDEN, cols, &theta[W3..B3], HIDDEN, 1, &self.a2, cols, 1, 0.0, &mut self.z3);
        let b3 = theta[B3];
        for i in 0..n {
            let z = self.z3[i] + b3;
            self.z3[i] = z;
            let sg = sigmoid(z);
            let o = &mut self.out[i];
            o[0] = softplus(z);
            if nc >= 2 {
                let x1 = self.z3[n + i];
                o[1] = sg * x1;
                if nc >= 3 {
                    o[2] = sg * (1.0 - sg) * x1 * x1 + sg * self.z3[2 * n + i];
                }
            }
        }
        let flat: Vec<f64> = self.out.iter().flatten().copied().collect();
        check(3, &flat)?;
        Ok(())
    }

    /// Accumulate `Σ_i out_bar[i] · ∂out[i]/∂θ` into `grad`.
    pub fn backward(&mut self, theta: &[f64], out_bar: &[[f64; 3]], grad: &mut [f64]) {
        let (n, nc) = (self.n, self.nc);
        assert_eq!(out_bar.len(), n);
        assert_eq!(grad.len(), N_PARAMS);
        if n == 0 {
            return;
        }
        let cols = nc * n;

        // Softplus head.
        let mut z3_bar = vec![0.0; cols];
        for i in 0..n {
            let [ov, o1, o2] = out_bar[i];
            debug_assert!(nc >= 2 || o1 == 0.0);
            debug_assert!(nc >= 3 || o2 == 0.0);
            let sg = sigmoid(self.z3[i]);
            let f2 = sg * (1.0 - sg);
            let f3 = f2 * (1.0 - 2.0 * sg);
            let x1 = if nc >= 2 { self.z3[n + i] } else { 0.0 };
            let x2 = if nc >= 3 { self.z3[2 * n + i] } else { 0.0 };
            z3_bar[i] = ov * sg + o1 * f2 * x1 + o2 * (f3 * x1 * x1 + f2 * x2);
            if nc >= 2 {
                z3_bar[n + i] = o1 * sg + 2.0 * o2 * f2 * x1;
            }
            if nc >= 3 {
                z3_bar[2 * n + i] = o2 * sg;
            }
        }
        grad[B3] += z3_bar[..n].iter().sum::<f64>();
        // w3 gradient: a2 (50×cols) · z3_bar.
        {
            let mut gw3 = [0.0; HIDDEN];
            gemm(HIDDEN, cols, 1, &self.a2, cols, 1, &z3_bar, 1, 1, 0.0, &mut gw3);
            for (g, v) in grad[W3..B3].iter_mut().zip(gw3) {
                *g += v;
            }
        }

        // Second tanh layer, with a2_bar = w3 ⊗ z3_bar formed on the fly.
        self.z2_bar.clear();
        self.z2_bar.resize(HIDDEN * cols, 0.0);
        for j in 0..HIDDEN {
            let w = theta[W3 + j];
            let a = &self.a2[j * cols..(j + 1) * cols];
            let z = &self.z2[j * cols..(j + 1) * cols];
            let zb = &mut self.z2_bar[j * cols..(j + 1) * cols];
            for i in 0..n {
                let t = a[i];
                let s = 1.0 - t * t;
                let f2 = -2.0 * t * s;
                let f3 = s * (6.0 * t * t - 2.0);
                let bv = w * z3_bar[i];
                let (b1, x1) = if nc >= 2 { (w * z3_bar[n + i], z[n + i]) } else { (0.0, 0.0) };
                let (b2, x2) = if nc >= 3 {
                    (w * z3_bar[2 * n + i], z[2 * n + i])
                } else {
                    (0.0, 0.0)
                };
                zb[i] = bv * s + b1 * f2 * x1 + b2 * (f3 * x1 * x1 + f2 * x2);
                if nc >= 2 {
                    zb[n + i] = b1 * s + 2.0 * b2 * f2 * x1;
                }
                if nc >= 3 {
                    zb[2 * n + i] = b2 * s;
                }
            }
            grad[B2 + j] += zb[..n].iter().sum::<f64>();
        }
        // W2 gradient: z2_bar (50×cols) · a1ᵀ (cols×50).
        gemm(
            HIDDEN,
            cols,
            HIDDEN,
            &self.z2_bar,
            cols,
            1,
            &self.a1,
            1,
            cols,
            1.0,
            &mut grad[W2..B2],
        );
        // a1_bar = W2ᵀ · z2_bar.
        self.a1_bar.clear();
        self.a1_bar.resize(HIDDEN * cols, 0.0);
        gemm(
            HIDDEN,
            HIDDEN,
            cols,
            &theta[W2..B2],
            1,
            HIDDEN,
            &self.z2_bar,
            cols,
            1,
            0.0,
            &mut self.a1_bar,
        );

        // First tanh layer: z1 = (w0·m + w1·τ + b, w0, 0).
        for j in 0..HIDDEN {
            let w0 = theta[W1 + 2 * j];
            let a = &self.a1[j * cols..(j + 1) * cols];
            let ab = &self.a1_bar[j * cols..(j + 1) * cols];
            let (mut g_w0, mut g_w1, mut g_b) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let t = a[i];
                let s = 1.0 - t * t;
                let f2 = -2.0 * t * s;
                let f3 = s * (6.0 * t * t - 2.0);
                let bv = ab[i];
                let b1 = if nc >= 2 { ab[n + i] } else { 0.0 };
                let b2 = if nc >= 3 { ab[2 * n + i] } else { 0.0 };
                let zv = bv * s + b1 * f2 * w0 + b2 * f3 * w0 * w0;
                let zd1 = b1 * s + 2.0 * b2 * f2 * w0;
                g_w0 += zv * self.m[i] + zd1;
                g_w1 += zv * self.tau[i];
                g_b += zv;
            }
            grad[W1 + 2 * j] += g_w0;
            grad[W1 + 2 * j + 1] += g_w1;
            grad[B1 + j] += g_b;
        }
    }
}
