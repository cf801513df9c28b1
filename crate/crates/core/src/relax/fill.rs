//! Differentiable hole filling by ray enclosure.
//!
//! Stage one casts rays. Along each of 16 lattice directions (the 8 king
//! moves and the 8 knight moves) a ray's blocking value is a soft maximum of
//! a barrier strength `a` over the pixels it visits, and a pixel's openness
//! `r` is one minus the soft minimum of its 16 blocking values: high when
//! some straight ray reaches the border without meeting foreground. The
//! barrier may be the indicator itself or any other map of the same field
//! that is 0 on background and 1 on foreground.
//!
//! Stage two spreads openness into background that no straight ray leaves,
//! such as pockets shadowed by a wall. With passability `b = 1 - a`, sweeps
//! of `o(p) = min(b(p), max(r(p), o(N4(p))))`, off-grid neighbours held at 1,
//! give the reachability `o`. The filled indicator is the soft union of
//! foreground and enclosed background, `f = s + (1 - s)(1 - o)`.
//!
//! A ray's blocking follows its strongest pixel rather than accumulating, so
//! faint background never fakes enclosure, and every pixel on an escape ray
//! receives gradient directly without decaying over distance.
//!
//! Soft maxima and minima are exponentially weighted means with temperature
//! `T`. Ray sums obey `W(p) = w(p) + W(p + d)`, so the ray stage costs
//! `O(16 N)`; the sweeps record their partial derivatives, so
//! [`SoftFillOutput::backward`] is the exact adjoint of the computation.

use crate::raster::GridShape;

use super::RelaxError;

pub const DIRECTIONS: [(isize, isize); 16] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (1, 2),
    (2, 1),
    (2, -1),
    (1, -2),
    (-1, -2),
    (-2, -1),
    (-2, 1),
    (-1, 2),
];
const K: usize = DIRECTIONS.len();

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftFill {
    temperature: f64,
}

impl Default for SoftFill {
    fn default() -> Self {
        Self { temperature: 0.02 }
    }
}

impl SoftFill {
    pub fn new(temperature: f64) -> Result<Self, RelaxError> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(RelaxError::InvalidTemperature(temperature));
        }
        Ok(Self { temperature })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

#[derive(Debug, Clone)]
pub struct SoftFillOutput {
    /// Filled indicator `f = s + (1 - s)(1 - o)`.
    pub values: Vec<f64>,
    /// Ray openness `r` of every pixel.
    pub openness: Vec<f64>,
    /// Reachability `o` of every pixel.
    pub reach: Vec<f64>,
    s: Vec<f64>,
    shape: GridShape,
    temperature: f64,
    barrier: Vec<f64>,
    /// Ray weights `exp((a - 1) / T)`.
    w: Vec<f64>,
    /// Per direction, `sum w` and `sum w a` over the ray starting at each pixel.
    ray_w: Vec<Vec<f64>>,
    ray_ws: Vec<Vec<f64>>,
    /// Per pixel, `d r / d blocked_k`.
    dr: Vec<[f64; K]>,
    tape: Vec<Step>,
}

/// One recorded update `o[pixel] = min(b, max(r, o[N4]))`.
#[derive(Debug, Clone)]
struct Step {
    pixel: usize,
    d_b: f64,
    d_r: f64,
    /// Partials with respect to the N4 neighbours (0 when off-grid).
    d_n: [f64; 4],
}

/// Sweep orders, as (rows top-down, columns left-right).
const SWEEPS: [(bool, bool); 4] = [(true, true), (false, false), (true, false), (false, true)];
const OFF_GRID: f64 = 1.0;

fn neighbours(shape: GridShape, i: usize) -> [Option<usize>; 4] {
    let (r, c) = shape.coords(i);
    let (r, c) = (r as isize, c as isize);
    [
        shape.checked_index(r - 1, c),
        shape.checked_index(r, c - 1),
        shape.checked_index(r, c + 1),
        shape.checked_index(r + 1, c),
    ]
}

/// Visits every pixel so that `p + d` comes before `p`.
fn upstream_order(shape: GridShape, d: (isize, isize), mut visit: impl FnMut(usize, usize)) {
    let (h, w) = (shape.height(), shape.width());
    for rr in 0..h {
        let r = if d.0 > 0 { h - 1 - rr } else { rr };
        for cc in 0..w {
            let c = if d.0 == 0 && d.1 > 0 { w - 1 - cc } else { cc };
            visit(r, c);
        }
    }
}

fn step(shape: GridShape, r: usize, c: usize, d: (isize, isize)) -> Option<usize> {
    shape.checked_index(r as isize + d.0, c as isize + d.1)
}

/// Mean weighted by `exp(sign * x / t)`, with its partial derivatives:
/// a soft maximum for `sign = 1` and a soft minimum for `sign = -1`.
fn soft_extreme<const N: usize>(x: &[f64; N], sign: f64, t: f64) -> (f64, [f64; N]) {
    let peak = x.iter().map(|v| sign * v).fold(f64::NEG_INFINITY, f64::max);
    let mut u = [0.0; N];
    let mut total = 0.0;
    let mut mean = 0.0;
    for k in 0..N {
        u[k] = ((sign * x[k] - peak) / t).exp();
        total += u[k];
        mean += u[k] * x[k];
    }
    mean /= total;
    let mut d = [0.0; N];
    for k in 0..N {
        d[k] = u[k] / total * (1.0 + sign * (x[k] - mean) / t);
    }
    (mean, d)
}

/// Fills holes in the soft indicator `s`, with rays blocked by `barrier`.
/// Both take values in `[0, 1]`.
pub fn soft_fill(shape: GridShape, s: &[f64], barrier: &[f64], cfg: &SoftFill) -> SoftFillOutput {
    assert_eq!(s.len(), shape.len(), "indicator length matches grid");
    assert_eq!(barrier.len(), shape.len(), "barrier length matches grid");
    let n = shape.len();
    let t = cfg.temperature;
    let w: Vec<f64> = barrier.iter().map(|v| ((v - 1.0) / t).exp()).collect();
    let mut ray_w = vec![vec![0.0; n]; K];
    let mut ray_ws = vec![vec![0.0; n]; K];
    for (k, &d) in DIRECTIONS.iter().enumerate() {
        let (rw, rws) = (&mut ray_w[k], &mut ray_ws[k]);
        upstream_order(shape, d, |r, c| {
            let i = shape.index(r, c);
            let (tail_w, tail_ws) = step(shape, r, c, d).map_or((0.0, 0.0), |j| (rw[j], rws[j]));
            rw[i] = w[i] + tail_w;
            rws[i] = w[i] * barrier[i] + tail_ws;
        });
    }
    let mut openness = vec![0.0; n];
    let mut dr = vec![[0.0; K]; n];
    for i in 0..n {
        let (r, c) = shape.coords(i);
        let mut blocked = [0.0; K];
        for (k, &d) in DIRECTIONS.iter().enumerate() {
            if let Some(j) = step(shape, r, c, d) {
                blocked[k] = ray_ws[k][j] / ray_w[k][j];
            }
        }
        let (e, d) = soft_extreme(&blocked, -1.0, t);
        openness[i] = 1.0 - e;
        dr[i] = d.map(|v| -v);
    }
    let (h, wd) = (shape.height(), shape.width());
    let mut o = vec![0.0; n];
    let mut tape = Vec::with_capacity(SWEEPS.len() * n);
    for (rows_down, cols_right) in SWEEPS {
        for rr in 0..h {
            let r = if rows_down { rr } else { h - 1 - rr };
            for cc in 0..wd {
                let c = if cols_right { cc } else { wd - 1 - cc };
                let i = r * wd + c;
                let nb = neighbours(shape, i);
                let x = [
                    openness[i],
                    nb[0].map_or(OFF_GRID, |q| o[q]),
                    nb[1].map_or(OFF_GRID, |q| o[q]),
                    nb[2].map_or(OFF_GRID, |q| o[q]),
                    nb[3].map_or(OFF_GRID, |q| o[q]),
                ];
                let (m, dm) = soft_extreme(&x, 1.0, t);
                let (v, dv) = soft_extreme(&[1.0 - barrier[i], m], -1.0, t);
                o[i] = v;
                let mut d_n = [0.0; 4];
                for k in 0..4 {
                    if nb[k].is_some() {
                        d_n[k] = dv[1] * dm[k + 1];
                    }
                }
                tape.push(Step {
                    pixel: i,
                    d_b: dv[0],
                    d_r: dv[1] * dm[0],
                    d_n,
                });
            }
        }
    }
    SoftFillOutput {
        values: (0..n).map(|i| s[i] + (1.0 - s[i]) * (1.0 - o[i])).collect(),
        openness,
        reach: o,
        s: s.to_vec(),
        shape,
        temperature: t,
        barrier: barrier.to_vec(),
        w,
        ray_w,
        ray_ws,
        dr,
        tape,
    }
}

impl SoftFillOutput {
    /// Pulls a gradient with respect to the filled values back to the
    /// indicator and the barrier, returned in that order.
    pub fn backward(&self, grad_f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let shape = self.shape;
        let n = shape.len();
        assert_eq!(grad_f.len(), n, "gradient length matches grid");
        let t = self.temperature;
        let grad: Vec<f64> = (0..n).map(|i| grad_f[i] * self.reach[i]).collect();
        let mut go: Vec<f64> = (0..n).map(|i| -grad_f[i] * (1.0 - self.s[i])).collect();
        let mut grad_a = vec![0.0; n];
        let mut grad_r = vec![0.0; n];
        for st in self.tape.iter().rev() {
            let g = std::mem::take(&mut go[st.pixel]);
            if g == 0.0 {
                continue;
            }
            grad_a[st.pixel] -= g * st.d_b;
            grad_r[st.pixel] += g * st.d_r;
            for (q, d) in neighbours(shape, st.pixel).into_iter().zip(st.d_n) {
                if let Some(q) = q {
                    go[q] += g * d;
                }
            }
        }
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for (k, &d) in DIRECTIONS.iter().enumerate() {
            let back = (-d.0, -d.1);
            let (rw, rws) = (&self.ray_w[k], &self.ray_ws[k]);
            // For every pixel q, gather the adjoints g of all rays through it:
            // a(q) = sum g / W and b(q) = sum g M / W, with M the ray's mean.
            upstream_order(shape, back, |r, c| {
                let q = shape.index(r, c);
                let (mut acc_a, mut acc_b) = (0.0, 0.0);
                if let Some(p) = step(shape, r, c, back) {
                    let g = grad_r[p] * self.dr[p][k];
                    let wp = rw[q];
                    acc_a = a[p] + g / wp;
                    acc_b = b[p] + g * rws[q] / (wp * wp);
                }
                a[q] = acc_a;
                b[q] = acc_b;
                grad_a[q] += self.w[q] * ((1.0 + self.barrier[q] / t) * acc_a - acc_b / t);
            });
        }
        (grad, grad_a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fill_holes;
    use crate::raster::BinaryMask;
    use crate::synth::{rasterize, ShapeSpec};

    fn indicator(m: &BinaryMask) -> Vec<f64> {
        m.values().iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn closed_ring_matches_hard_fill() {
        let ring = rasterize(&ShapeSpec::annulus(40, 40, (20.0, 20.0), 15.0, 9.0).unwrap()).unwrap();
        let hard = fill_holes(&ring);
        let s = indicator(&ring);
        let soft = soft_fill(ring.shape(), &s, &s, &SoftFill::default());
        for (f, &h) in soft.values.iter().zip(hard.values()) {
            assert!((f - if h { 1.0 } else { 0.0 }).abs() < 0.01, "{f} vs {h}");
        }
    }

    #[test]
    fn gap_leaves_most_of_the_hole_open() {
        let spec = ShapeSpec::broken_annulus(40, 40, (20.0, 20.0), 15.0, 9.0, 60.0, 100.0).unwrap();
        let m = rasterize(&spec).unwrap();
        let s = indicator(&m);
        let soft = soft_fill(m.shape(), &s, &s, &SoftFill::default());
        for (f, &v) in soft.values.iter().zip(m.values()) {
            if v {
                assert!(*f > 0.99);
            }
        }
        assert!(soft.values[m.shape().index(1, 1)] < 0.02);
        let hole: Vec<f64> = (0..m.shape().len())
            .filter(|&i| {
                let (r, c) = m.shape().coords(i);
                ((r as f64 + 0.5 - 20.0).powi(2) + (c as f64 + 0.5 - 20.0).powi(2)).sqrt() < 8.0
            })
            .map(|i| soft.values[i])
            .collect();
        let mean = hole.iter().sum::<f64>() / hole.len() as f64;
        assert!(mean < 0.1, "{mean}");
    }

    #[test]
    fn faint_background_does_not_enclose() {
        let shape = GridShape::new(30, 30).unwrap();
        let s = vec![0.03; shape.len()];
        let out = soft_fill(shape, &s, &s, &SoftFill::default());
        assert!(out.values.iter().all(|&v| v < 0.07));
    }

    #[test]
    fn backward_matches_differences() {
        let shape = GridShape::new(7, 8).unwrap();
        let n = shape.len();
        // Indicator and barrier side by side in one vector.
        let x: Vec<f64> = (0..2 * n).map(|i| (i * 37 % 17) as f64 / 17.0).collect();
        let cfg = SoftFill::new(0.1).unwrap();
        let weights: Vec<f64> = (0..n).map(|i| ((i * 11 % 7) as f64 - 3.0) / 3.0).collect();
        let objective = |x: &[f64]| -> f64 {
            soft_fill(shape, &x[..n], &x[n..], &cfg)
                .values
                .iter()
                .zip(&weights)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (gs, ga) = soft_fill(shape, &x[..n], &x[n..], &cfg).backward(&weights);
        let grad: Vec<f64> = gs.into_iter().chain(ga).collect();
        let h = 1e-6;
        for i in 0..2 * n {
            let mut p = x.clone();
            let mut m = x.clone();
            p[i] += h;
            m[i] -= h;
            let d = (objective(&p) - objective(&m)) / (2.0 * h);
            assert!((grad[i] - d).abs() < 1e-6 * d.abs().max(1.0), "{i}: {} vs {d}", grad[i]);
        }
    }

    #[test]
    fn shadowed_pocket_stays_open() {
        // A wall with a bend: the pocket behind it sees no straight escape
        // in any lattice direction but connects to the open region.
        let m = BinaryMask::from_rows(&[
            "............",
            "............",
            "..########..",
            "..#......#..",
            "..#.####.#..",
            "..#.#..#.#..",
            "..#.#....#..",
            "..#.######..",
            "..#.........",
            "..#.........",
            "............",
            "............",
        ])
        .unwrap();
        let hard = fill_holes(&m);
        let s = indicator(&m);
        let soft = soft_fill(m.shape(), &s, &s, &SoftFill::default());
        for (f, &h) in soft.values.iter().zip(hard.values()) {
            assert!((f - if h { 1.0 } else { 0.0 }).abs() < 0.05, "{f} vs {h}");
        }
    }

    #[test]
    fn values_stay_in_unit_interval() {
        let shape = GridShape::new(9, 9).unwrap();
        let s: Vec<f64> = (0..81).map(|i| (i * 29 % 13) as f64 / 12.0).collect();
        let out = soft_fill(shape, &s, &s, &SoftFill::default());
        assert!(out.values.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn rejects_bad_temperature() {
        assert!(SoftFill::new(0.0).is_err());
        assert!(SoftFill::new(f64::NAN).is_err());
    }
}
