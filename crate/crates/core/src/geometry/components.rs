//! Connected-component labelling and hole filling.
//!
//! Foreground is 8-connected and background 4-connected, the complementary
//! pair under which a closed ring always separates its hole from the outside.

use std::collections::VecDeque;

use crate::raster::{BinaryMask, GridShape};

const N8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];
pub(crate) const N4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

/// A maximal 8-connected set of foreground pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// 1-based label in first-encounter scan order.
    pub label: u32,
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
    pub area_px: usize,
    /// Exposed pixel sides (edge estimator).
    pub perimeter_px: f64,
}

impl Component {
    /// Mask holding only this component.
    pub fn to_mask(&self, shape: GridShape) -> BinaryMask {
        let mut values = vec![false; shape.len()];
        for &i in &self.pixels {
            values[i] = true;
        }
        BinaryMask::new(shape, values).expect("component pixels lie on the grid")
    }

    /// Inclusive bounding box `(row_min, col_min, row_max, col_max)`.
    pub fn bounding_box(&self, shape: GridShape) -> (usize, usize, usize, usize) {
        let mut bb = (usize::MAX, usize::MAX, 0, 0);
        for &i in &self.pixels {
            let (r, c) = shape.coords(i);
            bb.0 = bb.0.min(r);
            bb.1 = bb.1.min(c);
            bb.2 = bb.2.max(r);
            bb.3 = bb.3.max(c);
        }
        bb
    }
}

/// Per-pixel labels (0 = background) and the number of components.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, u32) {
    let shape = mask.shape();
    let values = mask.values();
    let mut labels = vec![0u32; shape.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..shape.len() {
        if !values[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = shape.coords(i);
            for (dr, dc) in N8 {
                if let Some(j) = shape.checked_index(r as isize + dr, c as isize + dc) {
                    if values[j] && labels[j] == 0 {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    (labels, next)
}

/// Partitions the foreground into maximal 8-connected components.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let shape = mask.shape();
    let (labels, count) = label_components(mask);
    let mut pixels: Vec<Vec<usize>> = vec![Vec::new(); count as usize];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            pixels[l as usize - 1].push(i);
        }
    }
    pixels
        .into_iter()
        .enumerate()
        .map(|(k, px)| {
            let perimeter_px = edge_perimeter_of(shape, &labels, k as u32 + 1, &px);
            Component {
                label: k as u32 + 1,
                area_px: px.len(),
                pixels: px,
                perimeter_px,
            }
        })
        .collect()
}

fn edge_perimeter_of(shape: GridShape, labels: &[u32], label: u32, pixels: &[usize]) -> f64 {
    let mut sides = 0usize;
    for &i in pixels {
        let (r, c) = shape.coords(i);
        for (dr, dc) in N4 {
            match shape.checked_index(r as isize + dr, c as isize + dc) {
                Some(j) if labels[j] == label => {}
                _ => sides += 1,
            }
        }
    }
    sides as f64
}

/// Background pixels 4-connected to the grid border through background.
pub(crate) fn outside_region(mask: &BinaryMask) -> Vec<bool> {
    let shape = mask.shape();
    let (h, w) = (shape.height(), shape.width());
    let values = mask.values();
    let mut outside = vec![false; shape.len()];
    let mut queue = VecDeque::new();
    let seed = |i: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if !values[i] && !outside[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for c in 0..w {
        seed(shape.index(0, c), &mut outside, &mut queue);
        seed(shape.index(h - 1, c), &mut outside, &mut queue);
    }
    for r in 0..h {
        seed(shape.index(r, 0), &mut outside, &mut queue);
        seed(shape.index(r, w - 1), &mut outside, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = shape.coords(i);
        for (dr, dc) in N4 {
            if let Some(j) = shape.checked_index(r as isize + dr, c as isize + dc) {
                if !values[j] && !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    outside
}

/// Sets every background pixel that cannot reach the border through
/// background to foreground, leaving the region bounded by its external
/// contours.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let outside = outside_region(mask);
    BinaryMask::new(mask.shape(), outside.into_iter().map(|o| !o).collect())
        .expect("same shape")
}
