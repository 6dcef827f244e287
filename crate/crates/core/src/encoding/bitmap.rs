use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EncodingError;

/// Square occupancy grid, row-major, `true` = solid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bitmap {
    resolution: usize,
    cells: Vec<bool>,
}

impl Bitmap {
    pub fn empty(resolution: usize) -> Self {
        Self {
            resolution,
            cells: vec![false; resolution * resolution],
        }
    }

    pub fn full(resolution: usize) -> Self {
        Self {
            resolution,
            cells: vec![true; resolution * resolution],
        }
    }

    pub fn from_cells(resolution: usize, cells: Vec<bool>) -> Result<Self, EncodingError> {
        if resolution == 0 || cells.len() != resolution * resolution {
            return Err(EncodingError::CellCount {
                resolution,
                cells: cells.len(),
            });
        }
        Ok(Self { resolution, cells })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.resolution + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, solid: bool) {
        self.cells[y * self.resolution + x] = solid;
    }

    pub fn solid_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Labels the 4-connected solid components; returns per-cell labels
    /// (`usize::MAX` for empty cells) and component sizes.
    fn components(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.resolution;
        let mut label = vec![usize::MAX; n * n];
        let mut sizes = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..n * n {
            if !self.cells[start] || label[start] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            let mut size = 0;
            label[start] = id;
            queue.push_back(start);
            while let Some(idx) = queue.pop_front() {
                size += 1;
                let (x, y) = (idx % n, idx / n);
                let mut visit = |nx: usize, ny: usize| {
                    let j = ny * n + nx;
                    if self.cells[j] && label[j] == usize::MAX {
                        label[j] = id;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    visit(x - 1, y);
                }
                if x + 1 < n {
                    visit(x + 1, y);
                }
                if y > 0 {
                    visit(x, y - 1);
                }
                if y + 1 < n {
                    visit(x, y + 1);
                }
            }
            sizes.push(size);
        }
        (label, sizes)
    }

    pub fn component_count(&self) -> usize {
        self.components().1.len()
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    /// Non-empty and a single 4-connected solid region.
    pub fn is_valid_shape(&self) -> bool {
        self.is_connected()
    }

    /// Keeps only the largest 4-connected component (first one on ties).
    pub fn largest_component(&self) -> Bitmap {
        let (label, sizes) = self.components();
        let Some(best) = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
        else {
            return self.clone();
        };
        Bitmap {
            resolution: self.resolution,
            cells: label.iter().map(|&l| l == best).collect(),
        }
    }

    /// Intersection over union; two empty bitmaps count as identical.
    pub fn iou(&self, other: &Bitmap) -> f64 {
        assert_eq!(self.resolution, other.resolution);
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.cells.iter().zip(&other.cells) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn to_pbm(&self) -> String {
        let n = self.resolution;
        let mut out = format!("P1\n{n} {n}\n");
        for row in self.cells.chunks(n) {
            let line: Vec<&str> = row.iter().map(|&c| if c { "1" } else { "0" }).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_pbm(text: &str) -> Result<Self, EncodingError> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        if tokens.next() != Some("P1") {
            return Err(EncodingError::Format("missing P1 magic".into()));
        }
        let mut dim = || -> Result<usize, EncodingError> {
            tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| EncodingError::Format("bad PBM dimensions".into()))
        };
        let (w, h) = (dim()?, dim()?);
        if w != h {
            return Err(EncodingError::Format(format!("non-square PBM {w}x{h}")));
        }
        // Pixel tokens may also be packed without separators.
        let cells: Vec<bool> = tokens
            .flat_map(str::chars)
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(EncodingError::Format(format!("bad PBM pixel {other:?}"))),
            })
            .collect::<Result<_, _>>()?;
        Self::from_cells(w, cells)
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.cells
            .chunks(self.resolution)
            .map(|row| row.iter().map(|&c| c as u8).collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self, EncodingError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(EncodingError::Format("rows must form a square grid".into()));
        }
        let cells = rows
            .iter()
            .flatten()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(EncodingError::Format(format!(
                    "cell value {other} is not 0/1"
                ))),
            })
            .collect::<Result<_, _>>()?;
        Self::from_cells(n, cells)
    }

    /// Run-length encoding of the row-major cells: comma-separated run
    /// lengths alternating empty/solid, always starting with an empty run
    /// (possibly of length zero).
    pub fn to_rle(&self) -> String {
        let mut out = String::new();
        let mut current = false;
        let mut run = 0usize;
        for &c in &self.cells {
            if c == current {
                run += 1;
            } else {
                let _ = write!(out, "{run},");
                current = c;
                run = 1;
            }
        }
        let _ = write!(out, "{run}");
        out
    }

    pub fn from_rle(resolution: usize, rle: &str) -> Result<Self, EncodingError> {
        let mut cells = Vec::with_capacity(resolution * resolution);
        let mut solid = false;
        for token in rle.split(',') {
            let run: usize = token
                .trim()
                .parse()
                .map_err(|_| EncodingError::Format(format!("bad run length {token:?}")))?;
            cells.extend(std::iter::repeat_n(solid, run));
            solid = !solid;
        }
        Self::from_cells(resolution, cells)
    }
}

/// Normalized footprint area: solid cells over total cells.
pub fn area(bitmap: &Bitmap) -> f64 {
    bitmap.solid_count() as f64 / (bitmap.resolution * bitmap.resolution) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blobs() -> Bitmap {
        let mut b = Bitmap::empty(8);
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2), (3, 2), (6, 6)] {
            b.set(x, y, true);
        }
        b
    }

    #[test]
    fn area_of_full_and_single_cell() {
        assert_eq!(area(&Bitmap::full(64)), 1.0);
        let mut b = Bitmap::empty(64);
        b.set(10, 20, true);
        assert!((area(&b) - 1.0 / 4096.0).abs() < 1e-15);
        assert!((area(&b) - 2.4414e-4).abs() < 1e-8);
    }

    #[test]
    fn connectivity_is_four_neighbour() {
        let mut b = Bitmap::empty(4);
        b.set(0, 0, true);
        b.set(1, 1, true);
        assert_eq!(b.component_count(), 2);
        b.set(1, 0, true);
        assert!(b.is_connected());
        assert!(!Bitmap::empty(4).is_valid_shape());
    }

    #[test]
    fn largest_component_drops_islands() {
        let kept = two_blobs().largest_component();
        assert_eq!(kept.solid_count(), 5);
        assert!(!kept.get(6, 6));
        assert!(kept.is_connected());
    }

    #[test]
    fn pbm_and_rows_round_trip() {
        let b = two_blobs();
        assert_eq!(Bitmap::from_pbm(&b.to_pbm()).unwrap(), b);
        assert_eq!(Bitmap::from_rows(&b.to_rows()).unwrap(), b);
        assert!(b.to_pbm().starts_with("P1\n8 8\n0 0 0 0 0 0 0 0\n0 1 1 0"));
    }

    #[test]
    fn packed_pbm_is_accepted() {
        let b = Bitmap::from_pbm("P1\n# comment\n2 2\n10\n01\n").unwrap();
        assert!(b.get(0, 0) && b.get(1, 1) && !b.get(1, 0));
    }

    #[test]
    fn rle_round_trip_and_leading_solid() {
        let b = two_blobs();
        assert_eq!(Bitmap::from_rle(8, &b.to_rle()).unwrap(), b);
        let full = Bitmap::full(3);
        assert_eq!(full.to_rle(), "0,9");
        assert_eq!(Bitmap::from_rle(3, "0,9").unwrap(), full);
        assert!(Bitmap::from_rle(3, "0,8").is_err());
    }

    #[test]
    fn iou_basics() {
        let b = two_blobs();
        assert_eq!(b.iou(&b), 1.0);
        assert_eq!(b.iou(&Bitmap::empty(8)), 0.0);
    }
}
