//! Region geometry: bounding boxes, Sobol QMC volume estimates and 2-D masks.

mod sobol;

use serde::{Deserialize, Serialize};

pub use sobol::{sobol_points, SobolGenerator, MAX_DIM};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::invalid(
                "box bounds must be non-empty and of equal length",
            ));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::invalid(format!(
                    "box dimension {j} has bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(BoundingBox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Translate a box by `offset`.
    pub fn shifted(&self, offset: &[f64]) -> BoundingBox {
        BoundingBox {
            lower: self.lower.iter().zip(offset).map(|(l, o)| l + o).collect(),
            upper: self.upper.iter().zip(offset).map(|(u, o)| u + o).collect(),
        }
    }

    /// Map points of the unit cube (flat, row-major) into the box.
    pub fn map_unit(&self, unit: &[f64]) -> Vec<f64> {
        let d = self.dim();
        unit.iter()
            .enumerate()
            .map(|(i, u)| {
                let j = i % d;
                self.lower[j] + u * (self.upper[j] - self.lower[j])
            })
            .collect()
    }
}

/// Coordinate-wise hull of `points`, widened by `pad_fraction` of the range on each side.
/// A zero-range dimension is widened by `pad_fraction` of 1.0 instead.
pub fn bounding_box(points: &[Vec<f64>], pad_fraction: f64) -> Result<BoundingBox> {
    if points.len() < 2 {
        return Err(Error::invalid("bounding box needs at least 2 points"));
    }
    if !(pad_fraction >= 0.0) {
        return Err(Error::invalid("pad fraction must be non-negative"));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("points must share a non-zero dimension"));
    }
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    for p in points {
        for j in 0..d {
            lower[j] = lower[j].min(p[j]);
            upper[j] = upper[j].max(p[j]);
        }
    }
    for j in 0..d {
        let range = upper[j] - lower[j];
        let pad = if range > 0.0 {
            pad_fraction * range
        } else {
            pad_fraction
        };
        // A zero pad on a degenerate axis would give an empty box.
        let pad = if range == 0.0 && pad == 0.0 { 0.5 } else { pad };
        lower[j] -= pad;
        upper[j] += pad;
    }
    BoundingBox::new(lower, upper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub value: f64,
    pub n_points: usize,
    pub bbox: BoundingBox,
}

/// Mapped QMC points for `bbox`, flat row-major.
pub fn qmc_points(
    bbox: &BoundingBox,
    n_points: usize,
    shift_seed: Option<u64>,
) -> Result<Vec<f64>> {
    let mut gen = match shift_seed {
        Some(seed) => SobolGenerator::with_shift(bbox.dim(), seed)?,
        None => SobolGenerator::new(bbox.dim())?,
    };
    Ok(bbox.map_unit(&gen.take(n_points)))
}

/// Box volume times the fraction of mapped Sobol points inside the region.
///
/// `membership` receives all points at once (flat, row-major, `n_points * dim`)
/// and returns one flag per point, so batched scorers can evaluate them together.
pub fn estimate_volume_batched<F>(
    membership: F,
    bbox: &BoundingBox,
    n_points: usize,
    shift_seed: Option<u64>,
) -> Result<VolumeEstimate>
where
    F: FnOnce(&[f64]) -> Result<Vec<bool>>,
{
    if n_points == 0 {
        return Err(Error::invalid("volume estimation needs at least one point"));
    }
    let pts = qmc_points(bbox, n_points, shift_seed)?;
    let inside = membership(&pts)?;
    if inside.len() != n_points {
        return Err(Error::invalid(
            "membership returned the wrong number of flags",
        ));
    }
    let hits = inside.iter().filter(|&&b| b).count();
    Ok(VolumeEstimate {
        value: bbox.volume() * hits as f64 / n_points as f64,
        n_points,
        bbox: bbox.clone(),
    })
}

/// Pointwise variant of [`estimate_volume_batched`] using the unshifted sequence.
pub fn estimate_volume(
    membership: impl Fn(&[f64]) -> bool,
    bbox: &BoundingBox,
    n_points: usize,
) -> Result<VolumeEstimate> {
    let d = bbox.dim();
    estimate_volume_batched(
        |pts| Ok(pts.chunks_exact(d).map(&membership).collect()),
        bbox,
        n_points,
        None,
    )
}

/// Membership at the cell centres of a `resolution × resolution` grid over a 2-D box.
/// Row-major with the first coordinate varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub resolution: usize,
    pub bbox: BoundingBox,
    pub inside: Vec<bool>,
}

impl RegionMask {
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        let r = self.resolution as f64;
        let b = &self.bbox;
        [
            b.lower[0] + (i as f64 + 0.5) / r * (b.upper[0] - b.lower[0]),
            b.lower[1] + (j as f64 + 0.5) / r * (b.upper[1] - b.lower[1]),
        ]
    }

    pub fn fraction_inside(&self) -> f64 {
        self.inside.iter().filter(|&&b| b).count() as f64 / self.inside.len() as f64
    }

    /// Rows `x1,x2,inside` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,x2,inside\n");
        for i in 0..self.resolution {
            for j in 0..self.resolution {
                let c = self.cell_center(i, j);
                let v = self.inside[i * self.resolution + j] as u8;
                out.push_str(&format!("{:?},{:?},{v}\n", c[0], c[1]));
            }
        }
        out
    }

    /// Plain PGM (P2) image, white inside.
    pub fn to_pgm(&self) -> String {
        let r = self.resolution;
        let mut out = format!("P2\n{r} {r}\n1\n");
        // Image rows run top to bottom in decreasing second coordinate.
        for j in (0..r).rev() {
            let row: Vec<&str> = (0..r)
                .map(|i| if self.inside[i * r + j] { "1" } else { "0" })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

pub fn region_mask_batched<F>(
    membership: F,
    bbox: &BoundingBox,
    resolution: usize,
) -> Result<RegionMask>
where
    F: FnOnce(&[f64]) -> Result<Vec<bool>>,
{
    if bbox.dim() != 2 {
        return Err(Error::invalid(format!(
            "region masks need a 2-D box, got {}",
            bbox.dim()
        )));
    }
    if resolution < 2 {
        return Err(Error::invalid("mask resolution must be at least 2"));
    }
    let mut mask = RegionMask {
        resolution,
        bbox: bbox.clone(),
        inside: Vec::new(),
    };
    let mut pts = Vec::with_capacity(resolution * resolution * 2);
    for i in 0..resolution {
        for j in 0..resolution {
            pts.extend_from_slice(&mask.cell_center(i, j));
        }
    }
    let inside = membership(&pts)?;
    if inside.len() != resolution * resolution {
        return Err(Error::invalid(
            "membership returned the wrong number of flags",
        ));
    }
    mask.inside = inside;
    Ok(mask)
}

pub fn region_mask(
    membership: impl Fn(&[f64]) -> bool,
    bbox: &BoundingBox,
    resolution: usize,
) -> Result<RegionMask> {
    region_mask_batched(
        |pts| Ok(pts.chunks_exact(2).map(&membership).collect()),
        bbox,
        resolution,
    )
}
