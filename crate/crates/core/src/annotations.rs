//! Dot annotations: parsing, validation, class census, and region splits.
//!
//! Ground truth is one dot per cell center plus a class label. A region is a
//! rectangular crop of a slide, stored on disk as a CSV of dots
//! (`x,y,class`, header required) next to a JSON metadata sidecar carrying
//! `region_id`, `width`, `height`, `micron_per_pixel`.
//!
//! The class census (per-class cell counts over the training regions) is the
//! single input that drives every abundance-weighting formula downstream.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical scale used when none is given in region metadata: 10 px = 4.42 µm.
pub const DEFAULT_MICRON_PER_PIXEL: f64 = 0.442;

/// One cell phenotype, e.g. `CD8+` or `CD4+/FOXP3+`.
///
/// `index` is the class's stable position in its [`ClassSet`]; all per-class
/// vectors (census counts, weights, classifier outputs) are ordered by it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellClass {
    pub name: String,
    pub index: usize,
}

/// Ordered set of unique cell classes. Acts as the annotation schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    classes: Vec<CellClass>,
}

impl ClassSet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Schema("class list is empty".into()));
        }
        let mut classes = Vec::with_capacity(names.len());
        for (index, name) in names.iter().enumerate() {
            let name = name.as_ref();
            if classes.iter().any(|c: &CellClass| c.name == name) {
                return Err(Error::Schema(format!("duplicate class name {name:?}")));
            }
            classes.push(CellClass {
                name: name.to_string(),
                index,
            });
        }
        Ok(Self { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&CellClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn by_index(&self, index: usize) -> Option<&CellClass> {
        self.classes.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CellClass> {
        self.classes.iter()
    }

    pub fn names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }
}

/// A single expert dot: cell center in pixel coordinates plus class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotAnnotation {
    /// Pixel column (non-negative, within region width).
    pub x: f64,
    /// Pixel row (non-negative, within region height).
    pub y: f64,
    /// Index into the owning set's [`ClassSet`].
    pub class_index: usize,
}

/// Region metadata sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionMeta {
    pub region_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_mpp")]
    pub micron_per_pixel: f64,
}

fn default_mpp() -> f64 {
    DEFAULT_MICRON_PER_PIXEL
}

/// All dots of one annotated region, validated against its schema and bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotAnnotationSet {
    pub region_id: String,
    pub width: u32,
    pub height: u32,
    pub micron_per_pixel: f64,
    pub classes: ClassSet,
    pub dots: Vec<DotAnnotation>,
}

impl DotAnnotationSet {
    pub fn new(meta: &RegionMeta, classes: ClassSet, dots: Vec<DotAnnotation>) -> Result<Self> {
        if meta.width == 0 || meta.height == 0 {
            return Err(Error::InvalidInput(format!(
                "region {} has zero extent",
                meta.region_id
            )));
        }
        if meta.micron_per_pixel <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "region {} has non-positive micron_per_pixel",
                meta.region_id
            )));
        }
        for d in &dots {
            if d.class_index >= classes.len() {
                return Err(Error::Schema(format!(
                    "dot references class index {} outside schema",
                    d.class_index
                )));
            }
        }
        Ok(Self {
            region_id: meta.region_id.clone(),
            width: meta.width,
            height: meta.height,
            micron_per_pixel: meta.micron_per_pixel,
            classes,
            dots,
        })
    }

    pub fn class_name(&self, class_index: usize) -> &str {
        &self.classes.by_index(class_index).expect("valid index").name
    }

    /// Dots of one class as `(x, y)` points.
    pub fn points_of_class(&self, class_index: usize) -> Vec<(f64, f64)> {
        self.dots
            .iter()
            .filter(|d| d.class_index == class_index)
            .map(|d| (d.x, d.y))
            .collect()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.dots.iter().map(|d| (d.x, d.y)).collect()
    }
}

/// Per-class cell counts over a collection of regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCensus {
    pub classes: ClassSet,
    /// Count per class, ordered by class index. Every entry is >= 1.
    pub counts: Vec<u64>,
}

impl ClassCensus {
    /// Build a census directly from known counts (e.g. published dataset
    /// tables). Rejects zero counts.
    pub fn from_counts(classes: ClassSet, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes.len() {
            return Err(Error::Schema(format!(
                "{} counts for {} classes",
                counts.len(),
                classes.len()
            )));
        }
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                return Err(Error::EmptyClass {
                    name: classes.by_index(i).unwrap().name.clone(),
                });
            }
        }
        Ok(Self { classes, counts })
    }

    pub fn count(&self, class_index: usize) -> u64 {
        self.counts[class_index]
    }

    pub fn max_count(&self) -> u64 {
        *self.counts.iter().max().expect("census is never empty")
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }
}

/// Count class multiplicities across all sets.
///
/// Every set must share the same schema, and every class must occur at least
/// once: the weighting formulas divide by counts, so a zero-count class is
/// rejected here rather than producing infinite or degenerate weights later.
pub fn census(sets: &[DotAnnotationSet]) -> Result<ClassCensus> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidInput("census of zero regions".into()))?;
    let classes = first.classes.clone();
    let mut counts = vec![0u64; classes.len()];
    for set in sets {
        if set.classes != classes {
            return Err(Error::Schema(format!(
                "region {} uses a different class schema",
                set.region_id
            )));
        }
        for dot in &set.dots {
            counts[dot.class_index] += 1;
        }
    }
    ClassCensus::from_counts(classes, counts)
}

/// Parse one region's annotation CSV (`x,y,class`, header required) against
/// its metadata and schema.
pub fn parse_annotations(
    csv_path: &Path,
    meta: &RegionMeta,
    classes: &ClassSet,
) -> Result<DotAnnotationSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(csv_path, std::io::Error::other(e.to_string())),
            _ => Error::AnnotationParse {
                path: csv_path.to_path_buf(),
                line: 1,
                msg: e.to_string(),
            },
        })?;

    {
        let headers = reader.headers().map_err(|e| Error::AnnotationParse {
            path: csv_path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })?;
        let expected = ["x", "y", "class"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::AnnotationParse {
                path: csv_path.to_path_buf(),
                line: 1,
                msg: format!("expected header `x,y,class`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
    }

    let mut dots = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::AnnotationParse {
            path: csv_path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(Error::AnnotationParse {
                path: csv_path.to_path_buf(),
                line,
                msg: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let parse_coord = |field: &str, name: &str| -> Result<f64> {
            field.parse::<f64>().map_err(|_| Error::AnnotationParse {
                path: csv_path.to_path_buf(),
                line,
                msg: format!("invalid {name} coordinate {field:?}"),
            })
        };
        let x = parse_coord(&record[0], "x")?;
        let y = parse_coord(&record[1], "y")?;
        let class = classes.get(&record[2]).ok_or_else(|| Error::UnknownClass {
            path: csv_path.to_path_buf(),
            line,
            name: record[2].to_string(),
        })?;
        let in_bounds = x.is_finite()
            && y.is_finite()
            && x >= 0.0
            && y >= 0.0
            && x < meta.width as f64
            && y < meta.height as f64;
        if !in_bounds {
            return Err(Error::DotOutOfBounds {
                path: csv_path.to_path_buf(),
                line,
                x,
                y,
                width: meta.width,
                height: meta.height,
            });
        }
        dots.push(DotAnnotation {
            x,
            y,
            class_index: class.index,
        });
    }

    DotAnnotationSet::new(meta, classes.clone(), dots)
}

/// Serialize a set back to the CSV schema. Coordinates are written with
/// shortest-roundtrip formatting, so parse → write → parse is exact.
pub fn write_annotations(set: &DotAnnotationSet, csv_path: &Path) -> Result<()> {
    let mut out = String::from("x,y,class\n");
    for dot in &set.dots {
        let name = set.class_name(dot.class_index);
        let quoted = if name.contains(',') || name.contains('"') {
            format!("\"{}\"", name.replace('"', "\"\""))
        } else {
            name.to_string()
        };
        writeln!(out, "{},{},{}", dot.x, dot.y, quoted).expect("string write");
    }
    fs::write(csv_path, out).map_err(|e| Error::io(csv_path, e))
}

pub fn write_meta(meta: &RegionMeta, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_meta(path: &Path) -> Result<RegionMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!(
        "bad region metadata {}: {e}",
        path.display()
    )))
}

/// Load `{region_id}.csv` + `{region_id}.json` from a dataset directory.
pub fn load_region(dir: &Path, region_id: &str, classes: &ClassSet) -> Result<DotAnnotationSet> {
    let meta = read_meta(&dir.join(format!("{region_id}.json")))?;
    parse_annotations(&dir.join(format!("{region_id}.csv")), &meta, classes)
}

/// Split regions into train/validation/test by region, never by dot.
///
/// Counts per split come from largest-remainder rounding of `fractions`
/// (which must be non-negative and sum to 1); the assignment is a seeded
/// shuffle, so the same seed always yields the same split.
pub fn split_regions(
    sets: Vec<DotAnnotationSet>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(
    Vec<DotAnnotationSet>,
    Vec<DotAnnotationSet>,
    Vec<DotAnnotationSet>,
)> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(Error::SplitFractions(format!(
            "fractions must lie in [0, 1], got {fr:?}"
        )));
    }
    let sum: f64 = fr.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::SplitFractions(format!(
            "fractions must sum to 1, got {sum}"
        )));
    }
    let n = sets.len();
    let nonzero = fr.iter().filter(|&&f| f > 0.0).count();
    if n < nonzero {
        return Err(Error::SplitFractions(format!(
            "{n} regions cannot fill {nonzero} non-empty splits"
        )));
    }

    // Largest-remainder apportionment of n regions over the three splits.
    let mut counts = [0usize; 3];
    let mut remainders = [0f64; 3];
    let mut assigned = 0;
    for i in 0..3 {
        let exact = fr[i] * n as f64;
        counts[i] = exact.floor() as usize;
        remainders[i] = exact - exact.floor();
        assigned += counts[i];
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| remainders[b].partial_cmp(&remainders[a]).unwrap());
    for &i in order.iter().cycle().take(n - assigned) {
        counts[i] += 1;
    }
    // Every non-empty split gets at least one region when possible.
    for i in 0..3 {
        if fr[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut sets: Vec<Option<DotAnnotationSet>> = sets.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<DotAnnotationSet> {
        idx.iter().map(|&i| sets[i].take().unwrap()).collect()
    };
    let train = take(&order[..counts[0]]);
    let val = take(&order[counts[0]..counts[0] + counts[1]]);
    let test = take(&order[counts[0] + counts[1]..]);
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    pub(crate) fn three_classes() -> ClassSet {
        ClassSet::new(&["CD8+", "CD4+/FOXP3-", "CD4+/FOXP3+"]).unwrap()
    }

    fn meta(id: &str, w: u32, h: u32) -> RegionMeta {
        RegionMeta {
            region_id: id.into(),
            width: w,
            height: h,
            micron_per_pixel: DEFAULT_MICRON_PER_PIXEL,
        }
    }

    fn write_csv(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_single_row() {
        let dir = tempdir().unwrap();
        let p = write_csv(dir.path(), "r.csv", "x,y,class\n10.0,12.0,CD8+\n");
        let set = parse_annotations(&p, &meta("r", 64, 64), &three_classes()).unwrap();
        assert_eq!(set.dots.len(), 1);
        assert_eq!(set.dots[0], DotAnnotation { x: 10.0, y: 12.0, class_index: 0 });
    }

    #[test]
    fn parses_header_only_file_as_empty() {
        let dir = tempdir().unwrap();
        let p = write_csv(dir.path(), "r.csv", "x,y,class\n");
        let set = parse_annotations(&p, &meta("r", 64, 64), &three_classes()).unwrap();
        assert!(set.dots.is_empty());
    }

    #[test]
    fn rejects_unknown_class_with_line() {
        let dir = tempdir().unwrap();
        let p = write_csv(dir.path(), "r.csv", "x,y,class\n1,1,CD8+\n10.0,12.0,CD99+\n");
        let err = parse_annotations(&p, &meta("r", 64, 64), &three_classes()).unwrap_err();
        match err {
            Error::UnknownClass { line, name, .. } => {
                assert_eq!(line, 3);
                assert_eq!(name, "CD99+");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_row_with_line() {
        let dir = tempdir().unwrap();
        let p = write_csv(dir.path(), "r.csv", "x,y,class\nnotanumber,2,CD8+\n");
        let err = parse_annotations(&p, &meta("r", 64, 64), &three_classes()).unwrap_err();
        match err {
            Error::AnnotationParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_bounds_dot() {
        let dir = tempdir().unwrap();
        let p = write_csv(dir.path(), "r.csv", "x,y,class\n64.0,1.0,CD8+\n");
        let err = parse_annotations(&p, &meta("r", 64, 64), &three_classes()).unwrap_err();
        assert!(matches!(err, Error::DotOutOfBounds { line: 2, .. }));
    }

    #[test]
    fn rejects_missing_header() {
        let dir = tempdir().unwrap();
        let p = write_csv(dir.path(), "r.csv", "a,b,c\n1,1,CD8+\n");
        assert!(matches!(
            parse_annotations(&p, &meta("r", 64, 64), &three_classes()),
            Err(Error::AnnotationParse { line: 1, .. })
        ));
    }

    fn set_with(counts: [usize; 3]) -> DotAnnotationSet {
        let classes = three_classes();
        let mut dots = Vec::new();
        for (ci, &n) in counts.iter().enumerate() {
            for k in 0..n {
                dots.push(DotAnnotation {
                    x: (k % 60) as f64,
                    y: (k / 60) as f64 + ci as f64,
                    class_index: ci,
                });
            }
        }
        DotAnnotationSet::new(&meta("m", 64, 64), classes, dots).unwrap()
    }

    #[test]
    fn census_counts_published_training_distribution() {
        // Training-split counts from the source dataset: 2244 / 997 / 243.
        let set = set_with([2244, 997, 243]);
        let c = census(std::slice::from_ref(&set)).unwrap();
        assert_eq!(c.counts, vec![2244, 997, 243]);
        assert_eq!(c.total(), 3484);
        assert_eq!(c.max_count(), 2244);
    }

    #[test]
    fn census_one_dot_per_class() {
        let c = census(&[set_with([1, 1, 1])]).unwrap();
        assert_eq!(c.counts, vec![1, 1, 1]);
        assert_eq!(c.total(), 3);
    }

    #[test]
    fn census_is_linear_in_duplicated_sets() {
        let set = set_with([5, 3, 2]);
        let single = census(std::slice::from_ref(&set)).unwrap();
        let double = census(&[set.clone(), set]).unwrap();
        let doubled: Vec<u64> = single.counts.iter().map(|c| c * 2).collect();
        assert_eq!(double.counts, doubled);
    }

    #[test]
    fn census_rejects_empty_class_by_name() {
        let err = census(&[set_with([4, 2, 0])]).unwrap_err();
        match err {
            Error::EmptyClass { name } => assert_eq!(name, "CD4+/FOXP3+"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn census_is_permutation_invariant() {
        let a = set_with([3, 1, 2]);
        let b = set_with([1, 4, 1]);
        let mut b_rev = b.clone();
        b_rev.dots.reverse();
        let c1 = census(&[a.clone(), b]).unwrap();
        let c2 = census(&[b_rev, a]).unwrap();
        assert_eq!(c1.counts, c2.counts);
    }

    #[test]
    fn split_eleven_regions_five_three_three() {
        let sets: Vec<_> = (0..11)
            .map(|i| {
                let mut s = set_with([1, 1, 1]);
                s.region_id = format!("slide_{i}");
                s
            })
            .collect();
        let (tr, va, te) =
            split_regions(sets, (5.0 / 11.0, 3.0 / 11.0, 3.0 / 11.0), 7).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (5, 3, 3));

        let mut ids: Vec<_> = tr.iter().chain(&va).chain(&te).map(|s| s.region_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 11, "splits must partition the regions");
    }

    #[test]
    fn split_single_region_all_train() {
        let (tr, va, te) = split_regions(vec![set_with([1, 0, 0])], (1.0, 0.0, 0.0), 0).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (1, 0, 0));
    }

    #[test]
    fn split_rejects_fractions_over_one() {
        let sets = vec![set_with([1, 0, 0]), set_with([1, 0, 0])];
        assert!(matches!(
            split_regions(sets, (0.5, 0.5, 0.5), 0),
            Err(Error::SplitFractions(_))
        ));
    }

    #[test]
    fn split_rejects_too_few_regions() {
        let sets = vec![set_with([1, 0, 0])];
        assert!(matches!(
            split_regions(sets, (0.4, 0.3, 0.3), 0),
            Err(Error::SplitFractions(_))
        ));
    }

    #[test]
    fn split_is_reproducible() {
        let mk = || {
            (0..9)
                .map(|i| {
                    let mut s = set_with([1, 1, 1]);
                    s.region_id = format!("r{i}");
                    s
                })
                .collect::<Vec<_>>()
        };
        let a = split_regions(mk(), (0.5, 0.25, 0.25), 42).unwrap();
        let b = split_regions(mk(), (0.5, 0.25, 0.25), 42).unwrap();
        let ids = |v: &[DotAnnotationSet]| v.iter().map(|s| s.region_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.0), ids(&b.0));
        assert_eq!(ids(&a.1), ids(&b.1));
        assert_eq!(ids(&a.2), ids(&b.2));
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(coords in proptest::collection::vec((0f64..63.0, 0f64..63.0, 0usize..3), 0..40)) {
            let classes = three_classes();
            let dots: Vec<_> = coords
                .iter()
                .map(|&(x, y, c)| DotAnnotation { x, y, class_index: c })
                .collect();
            let set = DotAnnotationSet::new(&meta("rt", 64, 64), classes.clone(), dots).unwrap();
            let dir = tempdir().unwrap();
            let p = dir.path().join("rt.csv");
            write_annotations(&set, &p).unwrap();
            let parsed = parse_annotations(&p, &meta("rt", 64, 64), &classes).unwrap();
            prop_assert_eq!(parsed.dots, set.dots);
        }

        #[test]
        fn splits_partition_input(n in 3usize..24, seed in 0u64..1000) {
            let sets: Vec<_> = (0..n)
                .map(|i| {
                    let mut s = set_with([1, 1, 1]);
                    s.region_id = format!("r{i}");
                    s
                })
                .collect();
            let (tr, va, te) = split_regions(sets, (0.6, 0.2, 0.2), seed).unwrap();
            prop_assert_eq!(tr.len() + va.len() + te.len(), n);
            let mut ids: Vec<_> = tr.iter().chain(&va).chain(&te).map(|s| s.region_id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }
    }
}
