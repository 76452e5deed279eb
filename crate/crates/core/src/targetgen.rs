//! Training-target generation from dot annotations.
//!
//! Two rasters are derived from each annotated region:
//!
//! * the **reference image** `R`: 1 on every pixel whose Euclidean distance to
//!   the nearest cell center is `< r`, 0 elsewhere — a disk of radius `r`
//!   around each dot;
//! * the **weight image** `W`: a per-pixel loss multiplier. Pixels inside a
//!   class-`k` disk carry that class's abundance weight, all other pixels
//!   carry the background weight.
//!
//! Three weighting functions are provided, each monotone decreasing in the
//! class count `N^k` (rarer class ⇒ larger weight), with `M = max(N)`:
//!
//! | kind             | class weight        | background |
//! |------------------|---------------------|------------|
//! | `RatioWeight`    | `M / N^k`           | `1`        |
//! | `ExpWeightType1` | `exp(-N^k / M)`     | `exp(-1)`  |
//! | `ExpWeightType2` | `exp(-(N^k / M)^2)` | `exp(-1)`  |
//! | `Unweighted`     | `1`                 | `1`        |
//!
//! Note the two exponential kinds give the *most abundant* class the same
//! value as the background, `exp(-1)`; they re-weight rare cells relative to
//! everything else rather than foreground relative to background. This is the
//! weighting as published, implemented verbatim.
//!
//! Both rasters share the same radius (default 4 px); wherever `R` is 1 the
//! weight is a class weight, never background. Where disks of different
//! classes overlap, the nearest dot wins; exact ties go to the larger weight
//! so overlap never erodes rare-class signal.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::annotations::{ClassCensus, DotAnnotationSet};
use crate::error::{Error, Result};
use crate::npy::{self, NpyData};
use crate::par;

/// Disk radius in pixels shared by reference and weight generation (1.768 µm
/// at the default scale).
pub const DEFAULT_RADIUS_PX: f64 = 4.0;

/// Default training patch side length.
pub const DEFAULT_PATCH_SIZE: usize = 256;

/// Binary target raster; `pixels` is row-major `(height, width)` in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceImage {
    pub pixels: Array2<u8>,
}

impl ReferenceImage {
    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }
}

/// Per-pixel loss multiplier raster, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightImage {
    pub pixels: Array2<f32>,
}

/// Which abundance-weighting formula to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    RatioWeight,
    ExpWeightType1,
    ExpWeightType2,
    /// All-ones weight image; the unweighted baseline model.
    Unweighted,
}

impl WeightKind {
    pub const ALL: [WeightKind; 4] = [
        WeightKind::RatioWeight,
        WeightKind::ExpWeightType1,
        WeightKind::ExpWeightType2,
        WeightKind::Unweighted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightKind::RatioWeight => "RatioWeight",
            WeightKind::ExpWeightType1 => "ExpWeightType1",
            WeightKind::ExpWeightType2 => "ExpWeightType2",
            WeightKind::Unweighted => "Unweighted",
        }
    }
}

/// A weighting function bound to a class census and disk radius.
#[derive(Debug, Clone)]
pub struct WeightStrategy {
    pub kind: WeightKind,
    pub census: ClassCensus,
    pub radius_px: f64,
}

impl WeightStrategy {
    pub fn new(kind: WeightKind, census: ClassCensus) -> Self {
        Self {
            kind,
            census,
            radius_px: DEFAULT_RADIUS_PX,
        }
    }

    pub fn with_radius(mut self, radius_px: f64) -> Result<Self> {
        if radius_px <= 0.0 || !radius_px.is_finite() {
            return Err(Error::InvalidInput(format!(
                "disk radius must be positive, got {radius_px}"
            )));
        }
        self.radius_px = radius_px;
        Ok(self)
    }

    /// Weight applied inside disks of the given class.
    pub fn class_weight(&self, class_index: usize) -> Result<f64> {
        if class_index >= self.census.n_classes() {
            return Err(Error::Schema(format!(
                "class index {class_index} outside census of {} classes",
                self.census.n_classes()
            )));
        }
        let n_k = self.census.count(class_index) as f64;
        let max_n = self.census.max_count() as f64;
        Ok(match self.kind {
            WeightKind::RatioWeight => max_n / n_k,
            WeightKind::ExpWeightType1 => (-n_k / max_n).exp(),
            WeightKind::ExpWeightType2 => (-(n_k / max_n).powi(2)).exp(),
            WeightKind::Unweighted => 1.0,
        })
    }

    /// Weight applied outside every disk.
    pub fn background_weight(&self) -> f64 {
        match self.kind {
            WeightKind::RatioWeight | WeightKind::Unweighted => 1.0,
            WeightKind::ExpWeightType1 | WeightKind::ExpWeightType2 => (-1.0f64).exp(),
        }
    }

    /// All class weights ordered by class index.
    pub fn class_weights(&self) -> Vec<f64> {
        (0..self.census.n_classes())
            .map(|i| self.class_weight(i).expect("index in range"))
            .collect()
    }
}

/// Internal per-dot render record.
struct Disk {
    x: f64,
    y: f64,
    weight: f64,
}

fn disks_overlapping_row(disks: &[Disk], row: usize, radius: f64) -> impl Iterator<Item = &Disk> {
    let rowf = row as f64;
    disks
        .iter()
        .filter(move |d| (rowf - d.y).abs() < radius)
}

/// Render the binary reference raster: 1 iff distance to the nearest dot < r.
pub fn make_reference(dots: &DotAnnotationSet, radius_px: f64) -> Result<ReferenceImage> {
    if radius_px <= 0.0 || !radius_px.is_finite() {
        return Err(Error::InvalidInput(format!(
            "disk radius must be positive, got {radius_px}"
        )));
    }
    let (h, w) = (dots.height as usize, dots.width as usize);
    let disks: Vec<Disk> = dots
        .dots
        .iter()
        .map(|d| Disk {
            x: d.x,
            y: d.y,
            weight: 1.0,
        })
        .collect();
    let r2 = radius_px * radius_px;

    let mut pixels = vec![0u8; h * w];
    par::for_each_chunk(&mut pixels, w, |row, out| {
        for d in disks_overlapping_row(&disks, row, radius_px) {
            let dy = row as f64 - d.y;
            let span = (r2 - dy * dy).sqrt();
            let lo = (d.x - span).ceil().max(0.0) as usize;
            let hi = ((d.x + span).floor() as isize).min(w as isize - 1);
            for col in lo as isize..=hi {
                let dx = col as f64 - d.x;
                if dx * dx + dy * dy < r2 {
                    out[col as usize] = 1;
                }
            }
        }
    });

    Ok(ReferenceImage {
        pixels: Array2::from_shape_vec((h, w), pixels).expect("shape matches"),
    })
}

/// Render the weight raster for a region under the given strategy.
pub fn make_weight(dots: &DotAnnotationSet, strategy: &WeightStrategy) -> Result<WeightImage> {
    if dots.classes != strategy.census.classes {
        return Err(Error::Schema(format!(
            "region {} uses a different class schema than the census",
            dots.region_id
        )));
    }
    let (h, w) = (dots.height as usize, dots.width as usize);
    let class_weights = strategy.class_weights();
    let background = strategy.background_weight() as f32;
    let radius = strategy.radius_px;
    let r2 = radius * radius;

    let disks: Vec<Disk> = dots
        .dots
        .iter()
        .map(|d| Disk {
            x: d.x,
            y: d.y,
            weight: class_weights[d.class_index],
        })
        .collect();

    let mut pixels = vec![background; h * w];
    // Each row resolves its own pixels: nearest dot wins, distance ties take
    // the larger weight. The per-pixel result is order-independent, so rows
    // can be computed in parallel.
    par::for_each_chunk(&mut pixels, w, |row, out| {
        let mut best = vec![f64::INFINITY; w];
        for d in disks_overlapping_row(&disks, row, radius) {
            let dy = row as f64 - d.y;
            let span = (r2 - dy * dy).sqrt();
            let lo = (d.x - span).ceil().max(0.0) as usize;
            let hi = ((d.x + span).floor() as isize).min(w as isize - 1);
            for col in lo as isize..=hi {
                let col = col as usize;
                let dx = col as f64 - d.x;
                let dist2 = dx * dx + dy * dy;
                if dist2 >= r2 {
                    continue;
                }
                if dist2 < best[col]
                    || (dist2 == best[col] && d.weight as f32 > out[col])
                {
                    best[col] = dist2;
                    out[col] = d.weight as f32;
                }
            }
        }
    });

    Ok(WeightImage {
        pixels: Array2::from_shape_vec((h, w), pixels).expect("shape matches"),
    })
}

/// An aligned (input, reference, weight) patch triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `(patch, patch, 3)` RGB in [0, 1].
    pub image: Array3<f32>,
    /// `(patch, patch)` in {0, 1}.
    pub reference: Array2<u8>,
    /// `(patch, patch)`, zero only on padding introduced at region borders.
    pub weight: Array2<f32>,
    /// Patch-grid coordinates within the source region (row-major order).
    pub grid_row: usize,
    pub grid_col: usize,
}

/// Cut a region into aligned patch triples, row-major by top-left corner.
///
/// Regions that are not a multiple of the grid are covered by letting the
/// last patches run past the border; image and reference pad with zeros and
/// the weight pads with 0 so padded pixels contribute nothing to the loss.
pub fn extract_patches(
    image: &Array3<f32>,
    reference: &ReferenceImage,
    weight: &WeightImage,
    patch_size: usize,
    stride: usize,
) -> Result<Vec<TrainingSample>> {
    let (h, w, ch) = image.dim();
    if ch != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected 3-channel image, got {ch}"
        )));
    }
    if reference.pixels.dim() != (h, w) || weight.pixels.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "image {h}x{w} vs reference {:?} vs weight {:?}",
            reference.pixels.dim(),
            weight.pixels.dim()
        )));
    }
    if patch_size == 0 || stride == 0 {
        return Err(Error::InvalidInput(
            "patch_size and stride must be positive".into(),
        ));
    }

    let steps = |dim: usize| -> usize {
        if dim <= patch_size {
            1
        } else {
            (dim - patch_size).div_ceil(stride) + 1
        }
    };
    let (rows, cols) = (steps(h), steps(w));

    let mut samples = Vec::with_capacity(rows * cols);
    for gr in 0..rows {
        for gc in 0..cols {
            let top = gr * stride;
            let left = gc * stride;
            let mut img = Array3::<f32>::zeros((patch_size, patch_size, 3));
            let mut rf = Array2::<u8>::zeros((patch_size, patch_size));
            let mut wt = Array2::<f32>::zeros((patch_size, patch_size));
            for py in 0..patch_size.min(h.saturating_sub(top)) {
                for px in 0..patch_size.min(w.saturating_sub(left)) {
                    let (sy, sx) = (top + py, left + px);
                    for c in 0..3 {
                        img[[py, px, c]] = image[[sy, sx, c]];
                    }
                    rf[[py, px]] = reference.pixels[[sy, sx]];
                    wt[[py, px]] = weight.pixels[[sy, sx]];
                }
            }
            samples.push(TrainingSample {
                image: img,
                reference: rf,
                weight: wt,
                grid_row: gr,
                grid_col: gc,
            });
        }
    }
    Ok(samples)
}

/// Write samples as `dir/region_id/patch_{row}_{col}.{img,ref,w}`.
///
/// Each file is an NPY array (see [`crate::npy`]): `.img` is `(P, P, 3)` f32,
/// `.ref` is `(P, P)` u8, `.w` is `(P, P)` f32.
pub fn write_samples(dir: &Path, region_id: &str, samples: &[TrainingSample]) -> Result<()> {
    let region_dir = dir.join(region_id);
    fs::create_dir_all(&region_dir).map_err(|e| Error::io(&region_dir, e))?;
    for s in samples {
        let stem = format!("patch_{}_{}", s.grid_row, s.grid_col);
        let (p, _) = s.reference.dim();
        npy::write_f32(
            &region_dir.join(format!("{stem}.img")),
            &[p, p, 3],
            s.image.as_slice().expect("standard layout"),
        )?;
        npy::write_u8(
            &region_dir.join(format!("{stem}.ref")),
            &[p, p],
            s.reference.as_slice().expect("standard layout"),
        )?;
        npy::write_f32(
            &region_dir.join(format!("{stem}.w")),
            &[p, p],
            s.weight.as_slice().expect("standard layout"),
        )?;
    }
    Ok(())
}

/// Read back everything `write_samples` produced for one region, in
/// deterministic row-major grid order.
pub fn read_samples(dir: &Path, region_id: &str) -> Result<Vec<TrainingSample>> {
    let region_dir = dir.join(region_id);
    let mut stems: Vec<(usize, usize)> = Vec::new();
    for entry in fs::read_dir(&region_dir).map_err(|e| Error::io(&region_dir, e))? {
        let entry = entry.map_err(|e| Error::io(&region_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".img") {
            if let Some(rc) = stem.strip_prefix("patch_") {
                let mut it = rc.splitn(2, '_');
                if let (Some(r), Some(c)) = (it.next(), it.next()) {
                    if let (Ok(r), Ok(c)) = (r.parse(), c.parse()) {
                        stems.push((r, c));
                    }
                }
            }
        }
    }
    stems.sort_unstable();

    let mut samples = Vec::with_capacity(stems.len());
    for (r, c) in stems {
        let stem = region_dir.join(format!("patch_{r}_{c}"));
        let load = |ext: &str| npy::read(&PathBuf::from(format!("{}.{ext}", stem.display())));

        let (ishape, idata) = load("img")?;
        let img = match (ishape.as_slice(), idata) {
            ([h, w, 3], NpyData::F32(v)) => Array3::from_shape_vec((*h, *w, 3), v).unwrap(),
            _ => {
                return Err(Error::Npy {
                    path: PathBuf::from(format!("{}.img", stem.display())),
                    msg: "expected (P, P, 3) f32".into(),
                })
            }
        };
        let (rshape, rdata) = load("ref")?;
        let rf = match (rshape.as_slice(), rdata) {
            ([h, w], NpyData::U8(v)) => Array2::from_shape_vec((*h, *w), v).unwrap(),
            _ => {
                return Err(Error::Npy {
                    path: PathBuf::from(format!("{}.ref", stem.display())),
                    msg: "expected (P, P) u8".into(),
                })
            }
        };
        let (wshape, wdata) = load("w")?;
        let wt = match (wshape.as_slice(), wdata) {
            ([h, w], NpyData::F32(v)) => Array2::from_shape_vec((*h, *w), v).unwrap(),
            _ => {
                return Err(Error::Npy {
                    path: PathBuf::from(format!("{}.w", stem.display())),
                    msg: "expected (P, P) f32".into(),
                })
            }
        };
        samples.push(TrainingSample {
            image: img,
            reference: rf,
            weight: wt,
            grid_row: r,
            grid_col: c,
        });
    }
    Ok(samples)
}
