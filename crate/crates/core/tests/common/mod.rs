//! Direct-definition reference implementations used as test oracles.
//!
//! Everything here works on plain row-major `Vec<f64>` grids with explicit
//! window loops and shares no code with the library beyond reading tensors.

#![allow(dead_code)]

use std::collections::HashMap;

use fmamba::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Grid {
    pub fn of(t: &Tensor) -> Grid {
        let s = t.shape();
        Grid { h: s[0], w: s[1], v: t.data().to_vec() }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.v[y * self.w + x]
    }

    /// Index-clamped read.
    pub fn clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.at(y, x)
    }
}

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(&[h, w], |_| rng.random::<f64>())
}

/// Random image with some spatial correlation (sum of a coarse and a fine
/// random field).
pub fn textured_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse: Vec<f64> = (0..((h / 4 + 1) * (w / 4 + 1))).map(|_| rng.random::<f64>()).collect();
    Tensor::from_fn(&[h, w], |i| {
        let (y, x) = (i / w, i % w);
        0.7 * coarse[(y / 4) * (w / 4 + 1) + x / 4] + 0.3 * rng.random::<f64>()
    })
}

/// 2-D Gaussian window of side `n`, normalized over all `n²` taps.
pub fn window(n: usize, sigma: f64) -> Vec<Vec<f64>> {
    let c = (n as f64 - 1.0) / 2.0;
    let mut w = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            *v = (-d2 / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for row in &mut w {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

/// Weighted window sum of `f(a, b)` at top-left corner `(y, x)`.
fn wsum(win: &[Vec<f64>], a: &Grid, b: &Grid, y: usize, x: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut s = 0.0;
    for (i, row) in win.iter().enumerate() {
        for (j, wt) in row.iter().enumerate() {
            s += wt * f(a.at(y + i, x + j), b.at(y + i, x + j));
        }
    }
    s
}

/// Valid-region correlation of a grid with a square window.
fn filter(win: &[Vec<f64>], g: &Grid) -> Grid {
    let n = win.len();
    if g.h < n || g.w < n {
        return Grid { h: 0, w: 0, v: vec![] };
    }
    let (h, w) = (g.h - n + 1, g.w - n + 1);
    let mut v = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            v.push(wsum(win, g, g, y, x, |p, _| p));
        }
    }
    Grid { h, w, v }
}

const C1: f64 = 1e-4;
const C2: f64 = 9e-4;

/// Mean SSIM and mean contrast-structure over valid 11x11 windows.
pub fn ssim_cs(a: &Grid, b: &Grid) -> (f64, f64) {
    let win = window(11, 1.5);
    let (mut s, mut c, mut n) = (0.0, 0.0, 0.0);
    for y in 0..=a.h - 11 {
        for x in 0..=a.w - 11 {
            let ma = wsum(&win, a, b, y, x, |p, _| p);
            let mb = wsum(&win, a, b, y, x, |_, q| q);
            let va = wsum(&win, a, b, y, x, |p, _| p * p) - ma * ma;
            let vb = wsum(&win, a, b, y, x, |_, q| q * q) - mb * mb;
            let cov = wsum(&win, a, b, y, x, |p, q| p * q) - ma * mb;
            let cs = (2.0 * cov + C2) / (va + vb + C2);
            let l = (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1);
            s += l * cs;
            c += cs;
            n += 1.0;
        }
    }
    (s / n, c / n)
}

fn halve(g: &Grid) -> Grid {
    let (h, w) = (g.h / 2, g.w / 2);
    let mut v = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            v.push(0.25 * (g.at(2 * y, 2 * x) + g.at(2 * y, 2 * x + 1) + g.at(2 * y + 1, 2 * x) + g.at(2 * y + 1, 2 * x + 1)));
        }
    }
    Grid { h, w, v }
}

const MS_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

pub fn ms_ssim(a: &Grid, b: &Grid) -> f64 {
    let mut scales = 0;
    let mut side = a.h.min(a.w);
    while scales < 5 && side >= 11 {
        scales += 1;
        side /= 2;
    }
    let norm: f64 = MS_WEIGHTS[..scales].iter().sum();
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut out = 1.0;
    for s in 0..scales {
        let (ssim, cs) = ssim_cs(&a, &b);
        let term = if s == scales - 1 { ssim } else { cs };
        out *= term.max(0.0).powf(MS_WEIGHTS[s] / norm);
        a = halve(&a);
        b = halve(&b);
    }
    out
}

pub fn ms_ssim_fused(a: &Grid, b: &Grid, f: &Grid) -> f64 {
    0.5 * (ms_ssim(a, f) + ms_ssim(b, f))
}

/// Two-pass Pearson correlation, 0 for a zero-variance operand.
pub fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let da: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let db: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if da == 0.0 || db == 0.0 {
        0.0
    } else {
        num / (da * db).sqrt()
    }
}

pub fn scd(a: &Grid, b: &Grid, f: &Grid) -> f64 {
    let d1: Vec<f64> = f.v.iter().zip(&b.v).map(|(x, y)| x - y).collect();
    let d2: Vec<f64> = f.v.iter().zip(&a.v).map(|(x, y)| x - y).collect();
    corr(&d1, &a.v) + corr(&d2, &b.v)
}

/// Horizontal and vertical 3x3 Sobel responses with replicated borders.
pub fn sobel(g: &Grid) -> (Vec<f64>, Vec<f64>) {
    let mut gx = Vec::with_capacity(g.v.len());
    let mut gy = Vec::with_capacity(g.v.len());
    for y in 0..g.h as isize {
        for x in 0..g.w as isize {
            let p = |dy: isize, dx: isize| g.clamped(y + dy, x + dx);
            let right = p(-1, 1) + 2.0 * p(0, 1) + p(1, 1);
            let left = p(-1, -1) + 2.0 * p(0, -1) + p(1, -1);
            let down = p(1, -1) + 2.0 * p(1, 0) + p(1, 1);
            let up = p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1);
            gx.push(right - left);
            gy.push(down - up);
        }
    }
    (gx, gy)
}

pub fn qabf(a: &Grid, b: &Grid, f: &Grid) -> f64 {
    let pi = std::f64::consts::PI;
    let edge = |g: &Grid| {
        let (gx, gy) = sobel(g);
        let s: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| (x * x + y * y).sqrt()).collect();
        let o: Vec<f64> = gx.iter().zip(&gy).map(|(&x, &y)| if x == 0.0 { pi / 2.0 } else { (y / x).atan() }).collect();
        (s, o)
    };
    let (sa, oa) = edge(a);
    let (sb, ob) = edge(b);
    let (sf, of) = edge(f);
    let q = |gs: f64, gf: f64, os: f64, ofu: f64| {
        let g = if gs == 0.0 && gf == 0.0 {
            0.0
        } else if gs > gf {
            gf / gs
        } else {
            gs / gf
        };
        let mut d = (os - ofu).abs();
        if d > pi / 2.0 {
            d = pi - d;
        }
        let al = 1.0 - d / (pi / 2.0);
        let qg = 0.9994 / (1.0 + (-15.0 * (g - 0.5)).exp());
        let qa = 0.9879 / (1.0 + (-22.0 * (al - 0.8)).exp());
        qg * qa
    };
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..sf.len() {
        num += q(sa[i], sf[i], oa[i], of[i]) * sa[i] + q(sb[i], sf[i], ob[i], of[i]) * sb[i];
        den += sa[i] + sb[i];
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn bins(v: &[f64]) -> Option<Vec<usize>> {
    let lo = v.iter().cloned().fold(f64::MAX, f64::min);
    let hi = v.iter().cloned().fold(f64::MIN, f64::max);
    if hi <= lo {
        return None;
    }
    Some(v.iter().map(|x| (((x - lo) / (hi - lo) * 256.0).floor() as usize).min(255)).collect())
}

fn entropy<K: std::hash::Hash + Eq>(items: impl Iterator<Item = K>, n: f64) -> f64 {
    let mut counts: HashMap<K, usize> = HashMap::new();
    for k in items {
        *counts.entry(k).or_default() += 1;
    }
    counts.values().map(|&c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

/// Normalized mutual information from a brute-force joint histogram.
pub fn nmi(a: &[f64], f: &[f64]) -> f64 {
    let (Some(qa), Some(qf)) = (bins(a), bins(f)) else {
        return 0.0;
    };
    let n = qa.len() as f64;
    let ha = entropy(qa.iter().copied(), n);
    let hf = entropy(qf.iter().copied(), n);
    let hj = entropy(qa.iter().copied().zip(qf.iter().copied()), n);
    2.0 * (ha + hf - hj) / (ha + hf)
}

pub fn fmi(a: &Grid, b: &Grid, f: &Grid) -> f64 {
    let feat = |g: &Grid| {
        let (gx, gy) = sobel(g);
        gx.iter().zip(&gy).map(|(x, y)| x.abs() + y.abs()).collect::<Vec<f64>>()
    };
    let ff = feat(f);
    0.5 * (nmi(&feat(a), &ff) + nmi(&feat(b), &ff))
}

/// Pixel-domain VIF of `dist` against `reference`, both scaled to 8-bit range.
pub fn vif(reference: &Grid, dist: &Grid) -> f64 {
    let scale = |g: &Grid| Grid { h: g.h, w: g.w, v: g.v.iter().map(|x| x * 255.0).collect() };
    let (mut r, mut d) = (scale(reference), scale(dist));
    let (sn, eps) = (2.0, 1e-10);
    let (mut num, mut den) = (0.0, 0.0);
    for s in 1..=4 {
        let n = (1usize << (4 - s + 1)) + 1;
        let win = window(n, n as f64 / 5.0);
        if s > 1 {
            let keep = |g: Grid| {
                let (h, w) = (g.h.div_ceil(2), g.w.div_ceil(2));
                let v = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| g.at(2 * y, 2 * x)).collect();
                Grid { h, w, v }
            };
            r = keep(filter(&win, &r));
            d = keep(filter(&win, &d));
        }
        if r.h < n || r.w < n {
            continue;
        }
        for y in 0..=r.h - n {
            for x in 0..=r.w - n {
                let m1 = wsum(&win, &r, &d, y, x, |p, _| p);
                let m2 = wsum(&win, &r, &d, y, x, |_, q| q);
                let mut s1 = wsum(&win, &r, &d, y, x, |p, _| p * p) - m1 * m1;
                let s2 = wsum(&win, &r, &d, y, x, |_, q| q * q) - m2 * m2;
                let s12 = wsum(&win, &r, &d, y, x, |p, q| p * q) - m1 * m2;
                let mut g = s12 / (s1 + eps);
                let mut sv = s2 - g * s12;
                if s1 < eps {
                    g = 0.0;
                    sv = s2;
                    s1 = 0.0;
                }
                if s2 < eps {
                    g = 0.0;
                    sv = 0.0;
                }
                if g < 0.0 {
                    sv = s2;
                    g = 0.0;
                }
                if sv <= eps {
                    sv = eps;
                }
                num += (1.0 + g * g * s1 / (sv + sn)).log10();
                den += (1.0 + s1 / sn).log10();
            }
        }
    }
    num / den
}

pub fn vif_fused(a: &Grid, b: &Grid, f: &Grid) -> f64 {
    0.5 * (vif(a, f) + vif(b, f))
}
