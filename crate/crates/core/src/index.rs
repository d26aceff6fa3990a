//! Uniform-grid bounding-box index for candidate pruning.

use std::collections::HashMap;

use crate::geom::{BBox, Point};

#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    boxes: Vec<BBox>,
}

impl GridIndex {
    /// Builds an index over item bounding boxes. `cell` is the grid spacing in metres.
    pub fn new(boxes: Vec<BBox>, cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, bb) in boxes.iter().enumerate() {
            let (x0, y0) = Self::key(cell, bb.min);
            let (x1, y1) = Self::key(cell, bb.max);
            for gx in x0..=x1 {
                for gy in y0..=y1 {
                    cells.entry((gx, gy)).or_default().push(i);
                }
            }
        }
        GridIndex { cell, cells, boxes }
    }

    fn key(cell: f64, p: Point) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Items whose bounding box intersects `query`, ascending and unique.
    pub fn query(&self, query: &BBox) -> Vec<usize> {
        let (x0, y0) = Self::key(self.cell, query.min);
        let (x1, y1) = Self::key(self.cell, query.max);
        let mut out = Vec::new();
        // Large queries fall back to a linear scan over the boxes.
        let span = (x1 - x0 + 1).saturating_mul(y1 - y0 + 1);
        if span > self.cells.len() as i64 {
            out.extend((0..self.boxes.len()).filter(|&i| self.boxes[i].intersects(query)));
            return out;
        }
        for gx in x0..=x1 {
            for gy in y0..=y1 {
                if let Some(items) = self.cells.get(&(gx, gy)) {
                    out.extend(items.iter().copied().filter(|&i| self.boxes[i].intersects(query)));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_matches_linear_scan() {
        let boxes: Vec<BBox> = (0..50)
            .map(|i| {
                let x = (i * 37 % 200) as f64;
                let y = (i * 53 % 170) as f64;
                BBox { min: Point::new(x, y), max: Point::new(x + 12.0, y + 7.0) }
            })
            .collect();
        let idx = GridIndex::new(boxes.clone(), 25.0);
        let q = BBox { min: Point::new(30.0, 20.0), max: Point::new(90.0, 110.0) };
        let expect: Vec<usize> = (0..boxes.len()).filter(|&i| boxes[i].intersects(&q)).collect();
        assert_eq!(idx.query(&q), expect);
    }
}
