//! Dice coefficient and Hausdorff distance between binary masks.
//!
//! Hausdorff distance is taken between boundary pixels (foreground pixels
//! with a background or off-grid 4-neighbour), in pixel units. Distances are
//! compared as exact integer squares and only the final maximum is passed
//! through `sqrt`, so results are bitwise reproducible.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::fmt::real;
use crate::geometry::N4;
use crate::raster::{read_pgm, PgmError};
use crate::raster::{BinaryMask, RasterError, Threshold};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Shape(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Pgm { path: PathBuf, source: PgmError },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricsError> {
    pred.shape().ensure_same(&gt.shape())?;
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.values().iter().zip(gt.values()) {
        inter += usize::from(a && b);
        p += usize::from(a);
        g += usize::from(b);
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// Foreground pixels with at least one background or off-grid 4-neighbour.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let shape = mask.shape();
    BinaryMask::from_fn(shape, |r, c| {
        mask.get(r, c)
            && N4
                .iter()
                .any(|&(dr, dc)| !mask.get_or_background(r as isize + dr, c as isize + dc))
    })
}

const FAR: i64 = i64::MAX / 4;

/// Exact squared Euclidean distance from every pixel to the nearest set
/// pixel of `mask` (Meijster, Roerdink and Hesselink). Entries are `FAR`
/// when the mask is empty.
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<i64> {
    let shape = mask.shape();
    let (h, w) = (shape.height(), shape.width());
    let v = mask.values();
    // Column pass: vertical distance to the nearest set pixel.
    let mut g = vec![FAR; h * w];
    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if v[r * w + c] {
                last = Some(r);
            }
            if let Some(l) = last {
                g[r * w + c] = (r - l) as i64;
            }
        }
        let mut next: Option<usize> = None;
        for r in (0..h).rev() {
            if v[r * w + c] {
                next = Some(r);
            }
            if let Some(n) = next {
                let d = (n - r) as i64;
                if d < g[r * w + c] {
                    g[r * w + c] = d;
                }
            }
        }
    }
    // Row pass: lower envelope of parabolas (c - q)^2 + g(q)^2.
    let mut out = vec![FAR; h * w];
    let mut sites: Vec<i64> = Vec::with_capacity(w);
    let mut starts: Vec<i64> = Vec::with_capacity(w);
    for r in 0..h {
        let row = &g[r * w..(r + 1) * w];
        let f = |q: i64| {
            let d = row[q as usize];
            d * d
        };
        // Intersection abscissa of the parabolas at u and q (u < q), floored.
        let sep = |u: i64, q: i64| (q * q - u * u + f(q) - f(u)).div_euclid(2 * (q - u));
        sites.clear();
        starts.clear();
        for q in 0..w as i64 {
            if row[q as usize] == FAR {
                continue;
            }
            while let (Some(&u), Some(&s)) = (sites.last(), starts.last()) {
                let fu = (s - u) * (s - u) + f(u);
                let fq = (s - q) * (s - q) + f(q);
                if fu > fq {
                    sites.pop();
                    starts.pop();
                } else {
                    break;
                }
            }
            match sites.last() {
                None => {
                    sites.push(q);
                    starts.push(0);
                }
                Some(&u) => {
                    let x = sep(u, q) + 1;
                    if x < w as i64 {
                        sites.push(q);
                        starts.push(x);
                    }
                }
            }
        }
        if sites.is_empty() {
            continue;
        }
        let mut k = sites.len() - 1;
        for c in (0..w as i64).rev() {
            let q = sites[k];
            out[r * w + c as usize] = (c - q) * (c - q) + f(q);
            if c == starts[k] && k > 0 {
                k -= 1;
            }
        }
    }
    out
}

fn directed_sq(from: &BinaryMask, to_dist: &[i64]) -> i64 {
    from.foreground().map(|i| to_dist[i]).max().unwrap_or(0)
}

/// Symmetric Hausdorff distance between boundary sets; `None` when either
/// mask is empty.
pub fn hausdorff(pred: &BinaryMask, gt: &BinaryMask) -> Result<Option<f64>, MetricsError> {
    pred.shape().ensure_same(&gt.shape())?;
    if pred.is_empty() || gt.is_empty() {
        return Ok(None);
    }
    let bp = boundary(pred);
    let bg = boundary(gt);
    let dp = squared_distance_transform(&bp);
    let dg = squared_distance_transform(&bg);
    let worst = directed_sq(&bp, &dg).max(directed_sq(&bg, &dp));
    Ok(Some((worst as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hausdorff: Option<f64>,
    pub pred_area: usize,
    pub gt_area: usize,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{{\"dice\":{},\"hausdorff\":{},\"pred_area\":{},\"gt_area\":{}}}",
            real(self.dice),
            self.hausdorff.map_or("null".to_string(), real),
            self.pred_area,
            self.gt_area
        );
        s
    }

    /// `dice,hausdorff` fields of a batch CSV row.
    pub fn csv_fields(&self) -> String {
        format!(
            "{},{}",
            real(self.dice),
            self.hausdorff.map_or("undefined".to_string(), real)
        )
    }
}

pub fn evaluate(pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricReport, MetricsError> {
    Ok(MetricReport {
        dice: dice(pred, gt)?,
        hausdorff: hausdorff(pred, gt)?,
        pred_area: pred.count(),
        gt_area: gt.count(),
    })
}

/// Reads a PGM and binarizes it at `threshold`.
pub fn load_mask(path: &Path, threshold: Threshold) -> Result<BinaryMask, MetricsError> {
    let bytes = std::fs::read(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let field = read_pgm(&bytes).map_err(|source| MetricsError::Pgm {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(field.threshold(threshold))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub pred: PathBuf,
    pub gt: PathBuf,
}

/// Parses a two-column manifest (comma or whitespace separated). Blank
/// lines and lines starting with `#` are skipped, as is a leading
/// `pred,gt` header. Relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, MetricsError> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 2 {
            return Err(MetricsError::Manifest {
                line: n + 1,
                reason: format!("expected 2 columns, found {}", fields.len()),
            });
        }
        if entries.is_empty() && fields[0] == "pred" && fields[1] == "gt" {
            continue;
        }
        entries.push(ManifestEntry {
            pred: base.join(fields[0]),
            gt: base.join(fields[1]),
        });
    }
    Ok(entries)
}

/// Evaluates every manifest pair; results follow manifest order.
pub fn evaluate_manifest(
    entries: &[ManifestEntry],
    threshold: Threshold,
    exec: Execution,
) -> Vec<Result<MetricReport, MetricsError>> {
    exec::map_slice(exec, entries, |e| {
        let pred = load_mask(&e.pred, threshold)?;
        let gt = load_mask(&e.gt, threshold)?;
        evaluate(&pred, &gt)
    })
}

/// Metric reports for in-memory pairs, in input order.
pub fn evaluate_pairs(
    pairs: &[(BinaryMask, BinaryMask)],
    exec: Execution,
) -> Vec<Result<MetricReport, MetricsError>> {
    exec::map_slice(exec, pairs, |(p, g)| evaluate(p, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GridShape;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive pairwise search over boundary pixels.
    pub(crate) fn hausdorff_brute(a: &BinaryMask, b: &BinaryMask) -> Option<f64> {
        if a.is_empty() || b.is_empty() {
            return None;
        }
        let shape = a.shape();
        let pa: Vec<usize> = boundary(a).foreground().collect();
        let pb: Vec<usize> = boundary(b).foreground().collect();
        let dist = |i: usize, j: usize| {
            let (r1, c1) = shape.coords(i);
            let (r2, c2) = shape.coords(j);
            let dr = r1 as f64 - r2 as f64;
            let dc = c1 as f64 - c2 as f64;
            (dr * dr + dc * dc).sqrt()
        };
        let directed = |x: &[usize], y: &[usize]| {
            x.iter()
                .map(|&i| y.iter().map(|&j| dist(i, j)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        Some(directed(&pa, &pb).max(directed(&pb, &pa)))
    }

    fn random_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> BinaryMask {
        BinaryMask::from_fn(GridShape::new(n, n).unwrap(), |_, _| rng.gen_bool(p))
    }

    #[test]
    fn dice_examples() {
        let a = BinaryMask::from_rows(&["110", "110", "000"]).unwrap();
        let b = BinaryMask::from_rows(&["100", "100", "000"]).unwrap();
        assert!((dice(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let c = BinaryMask::from_rows(&["001", "001", "000"]).unwrap();
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        let z = BinaryMask::zeros(a.shape());
        assert_eq!(dice(&z, &z).unwrap(), 1.0);
        assert!(dice(&a, &BinaryMask::zeros(GridShape::new(2, 2).unwrap())).is_err());
    }

    #[test]
    fn hausdorff_examples() {
        let s = GridShape::new(5, 5).unwrap();
        let a = BinaryMask::from_fn(s, |r, c| r == 0 && c == 0);
        let b = BinaryMask::from_fn(s, |r, c| r == 3 && c == 4);
        assert_eq!(hausdorff(&a, &b).unwrap(), Some(5.0));
        assert_eq!(hausdorff(&a, &a).unwrap(), Some(0.0));
        let g = GridShape::new(8, 8).unwrap();
        let sq = BinaryMask::from_fn(g, |r, c| (1..5).contains(&r) && (1..5).contains(&c));
        assert_eq!(hausdorff(&sq, &sq.shifted(0, 2)).unwrap(), Some(2.0));
        assert_eq!(hausdorff(&sq, &BinaryMask::zeros(g)).unwrap(), None);
    }

    #[test]
    fn boundary_of_block() {
        let m = BinaryMask::from_rows(&["0000", "0111", "0111", "0111"]).unwrap();
        let b = boundary(&m);
        // Only (2,2) has four foreground neighbours; the grid edge counts as
        // background.
        assert_eq!(b.count(), 8);
        assert!(!b.get(2, 2));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn distance_transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let h = rng.gen_range(1..12);
            let w = rng.gen_range(1..12);
            let m = BinaryMask::from_fn(GridShape::new(h, w).unwrap(), |_, _| rng.gen_bool(0.1));
            let d = squared_distance_transform(&m);
            for i in 0..h * w {
                let (r, c) = (i / w, i % w);
                let best = m
                    .foreground()
                    .map(|j| {
                        let (r2, c2) = (j / w, j % w);
                        let dr = r as i64 - r2 as i64;
                        let dc = c as i64 - c2 as i64;
                        dr * dr + dc * dc
                    })
                    .min()
                    .unwrap_or(FAR);
                assert_eq!(d[i], best);
            }
        }
    }

    #[test]
    fn hausdorff_bitwise_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..200 {
            let p = [0.05, 0.2, 0.5, 0.9][k % 4];
            let a = random_mask(&mut rng, 16, p);
            let b = random_mask(&mut rng, 16, p);
            let fast = hausdorff(&a, &b).unwrap();
            let slow = hausdorff_brute(&a, &b);
            assert_eq!(fast.map(f64::to_bits), slow.map(f64::to_bits));
        }
    }

    #[test]
    fn report_formats() {
        let r = MetricReport {
            dice: 2.0 / 3.0,
            hausdorff: None,
            pred_area: 4,
            gt_area: 0,
        };
        assert_eq!(r.to_json(), "{\"dice\":0.666667,\"hausdorff\":null,\"pred_area\":4,\"gt_area\":0}");
        assert_eq!(r.csv_fields(), "0.666667,undefined");
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back.hausdorff, None);
    }

    #[test]
    fn manifest_parsing() {
        let base = Path::new("/data");
        let text = "pred,gt\n# comment\n\na.pgm, b.pgm\n/abs/c.pgm\td.pgm\n";
        let e = parse_manifest(text, base).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].pred, PathBuf::from("/data/a.pgm"));
        assert_eq!(e[1].pred, PathBuf::from("/abs/c.pgm"));
        assert!(matches!(
            parse_manifest("a.pgm\n", base),
            Err(MetricsError::Manifest { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn dice_symmetric_and_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(&mut rng, 9, 0.3);
            let b = random_mask(&mut rng, 9, 0.3);
            let d = dice(&a, &b).unwrap();
            prop_assert_eq!(d, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn hausdorff_symmetric_and_triangle(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(&mut rng, 10, 0.3);
            let b = random_mask(&mut rng, 10, 0.3);
            let c = random_mask(&mut rng, 10, 0.3);
            if let (Some(ab), Some(bc), Some(ac)) = (
                hausdorff(&a, &b).unwrap(),
                hausdorff(&b, &c).unwrap(),
                hausdorff(&a, &c).unwrap(),
            ) {
                prop_assert_eq!(Some(ab), hausdorff(&b, &a).unwrap());
                prop_assert!(ac <= ab + bc + 1e-12);
                prop_assert_eq!(ab == 0.0, boundary(&a) == boundary(&b));
            }
        }
    }
}
