//! Labeled-sample enumeration and stratified train/test splitting.

use std::fs;
use std::path::Path;

use crate::data::labels::LabelRaster;
use crate::error::{io_context, Error, Result};
use crate::rng::{Pcg32, STREAM_SPLIT};

/// One labeled pixel with its compacted class index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub x: usize,
    pub y: usize,
    /// 0-based class index (not the raw raster label).
    pub class: usize,
}

/// Every labeled pixel of a raster, in scan order, with raw labels
/// compacted to contiguous 0-based class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    records: Vec<Sample>,
    /// Raw raster label for each class index, ascending.
    class_labels: Vec<u8>,
}

impl SampleSet {
    pub fn records(&self) -> &[Sample] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Raw raster label of a class index.
    pub fn raw_label(&self, class: usize) -> u8 {
        self.class_labels[class]
    }

    pub fn class_labels(&self) -> &[u8] {
        &self.class_labels
    }

    /// Records selected by index, in the order given.
    pub fn select(&self, indices: &[usize]) -> Vec<Sample> {
        indices.iter().map(|&i| self.records[i]).collect()
    }

    /// Per-class record counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes()];
        for r in &self.records {
            counts[r.class] += 1;
        }
        counts
    }
}

/// Collects every pixel with a nonzero label, in scan order (row by row).
/// Raw labels are remapped to 0-based indices in ascending raw order and
/// the mapping is recorded on the returned set.
pub fn enumerate_samples(labels: &LabelRaster) -> Result<SampleSet> {
    let mut present = [false; 256];
    for &l in labels.labels() {
        present[l as usize] = true;
    }
    let class_labels: Vec<u8> = (1..=255u16)
        .filter(|&l| present[l as usize])
        .map(|l| l as u8)
        .collect();
    if class_labels.is_empty() {
        return Err(Error::Data(
            "label raster has no labeled pixels (every entry is 0)".into(),
        ));
    }
    let mut class_of = [usize::MAX; 256];
    for (idx, &raw) in class_labels.iter().enumerate() {
        class_of[raw as usize] = idx;
    }
    let mut records = Vec::new();
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            let raw = labels.label(x, y);
            if raw != 0 {
                records.push(Sample {
                    x,
                    y,
                    class: class_of[raw as usize],
                });
            }
        }
    }
    Ok(SampleSet {
        records,
        class_labels,
    })
}

/// Disjoint train/test index lists into a [`SampleSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

/// Splits each class independently: `floor(ratio * n)` records go to the
/// train side, clamped so both sides keep at least one record. Selection is
/// uniform without replacement from the seeded generator; the same seed
/// always produces the same lists.
pub fn stratified_split(samples: &SampleSet, ratio: f64, seed: u64) -> Result<SplitIndices> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Usage(format!(
            "split ratio must be inside (0, 1), got {ratio}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); samples.n_classes()];
    for (i, r) in samples.records().iter().enumerate() {
        by_class[r.class].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "class {} (raw label {}) has {} sample(s); need at least 2 to split",
                class,
                samples.raw_label(class),
                members.len()
            )));
        }
    }

    let mut rng = Pcg32::new(seed, STREAM_SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for members in &mut by_class {
        rng.shuffle(members);
        let n = members.len();
        let take = ((ratio * n as f64).floor() as usize).clamp(1, n - 1);
        train.extend_from_slice(&members[..take]);
        test.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        test,
        seed,
        ratio,
    })
}

impl SplitIndices {
    /// Plain-text manifest: seed, ratio, then the two index lists.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("seed={}\n", self.seed));
        out.push_str(&format!("ratio={}\n", self.ratio));
        out.push_str("train=");
        push_indices(&mut out, &self.train);
        out.push_str("test=");
        push_indices(&mut out, &self.test);
        fs::write(path, out).map_err(|e| io_context(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
        let mut seed = None;
        let mut ratio = None;
        let mut train = None;
        let mut test = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!(
                    "{}: line {} is not key=value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            match key {
                "seed" => seed = Some(parse(path, key, value)?),
                "ratio" => ratio = Some(parse(path, key, value)?),
                "train" => train = Some(parse_indices(path, value)?),
                "test" => test = Some(parse_indices(path, value)?),
                other => {
                    return Err(Error::Format(format!(
                        "{}: unknown split key '{other}'",
                        path.display()
                    )))
                }
            }
        }
        let missing = |what: &str| Error::Format(format!("{}: missing {what}", path.display()));
        Ok(SplitIndices {
            seed: seed.ok_or_else(|| missing("seed"))?,
            ratio: ratio.ok_or_else(|| missing("ratio"))?,
            train: train.ok_or_else(|| missing("train list"))?,
            test: test.ok_or_else(|| missing("test list"))?,
        })
    }

    /// Checks the lists against a sample set: disjoint, in range, covering.
    pub fn validate(&self, samples: &SampleSet) -> Result<()> {
        let n = samples.len();
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n {
                return Err(Error::Data(format!(
                    "split references sample {i}, set has only {n}"
                )));
            }
            if seen[i] {
                return Err(Error::Data(format!(
                    "split mentions sample {i} more than once"
                )));
            }
            seen[i] = true;
        }
        if self.train.len() + self.test.len() != n {
            return Err(Error::Data(format!(
                "split covers {} samples, set has {n}",
                self.train.len() + self.test.len()
            )));
        }
        Ok(())
    }
}

fn push_indices(out: &mut String, indices: &[usize]) {
    for (i, idx) in indices.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&idx.to_string());
    }
    out.push('\n');
}

fn parse<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Format(format!(
            "{}: cannot parse {key}={value}",
            path.display()
        ))
    })
}

fn parse_indices(path: &Path, value: &str) -> Result<Vec<usize>> {
    value
        .split_whitespace()
        .map(|tok| {
            tok.parse().map_err(|_| {
                Error::Format(format!("{}: bad index '{tok}'", path.display()))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(width: usize, height: usize, labels: Vec<u8>) -> LabelRaster {
        LabelRaster::new(width, height, labels).unwrap()
    }

    #[test]
    fn enumerates_nonzero_pixels_in_scan_order_with_compaction() {
        let set = enumerate_samples(&raster(2, 2, vec![0, 1, 2, 1])).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.n_classes(), 2);
        assert_eq!(set.class_labels(), &[1, 2]);
        assert_eq!(set.records()[0], Sample { x: 1, y: 0, class: 0 });
        assert_eq!(set.records()[1], Sample { x: 0, y: 1, class: 1 });
        assert_eq!(set.records()[2], Sample { x: 1, y: 1, class: 0 });
    }

    #[test]
    fn all_zero_raster_is_an_error() {
        assert!(matches!(
            enumerate_samples(&raster(2, 2, vec![0; 4])),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn count_matches_nonzero_entries() {
        let labels: Vec<u8> = (0..36).map(|i| (i % 3) as u8).collect();
        let set = enumerate_samples(&raster(6, 6, labels.clone())).unwrap();
        assert_eq!(set.len(), labels.iter().filter(|&&l| l != 0).count());
    }

    fn tenth_class_set(counts: &[usize]) -> SampleSet {
        // Builds a raster with `counts[c]` pixels of raw label c+1.
        let total: usize = counts.iter().sum();
        let mut labels = vec![0u8; total];
        let mut pos = 0;
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                labels[pos] = (c + 1) as u8;
                pos += 1;
            }
        }
        enumerate_samples(&raster(total, 1, labels)).unwrap()
    }

    #[test]
    fn split_counts_follow_floor_and_clamp() {
        let set = tenth_class_set(&[10, 7]);
        let split = stratified_split(&set, 0.8, 3).unwrap();
        let train_by_class: Vec<usize> = {
            let mut counts = vec![0; 2];
            for &i in &split.train {
                counts[set.records()[i].class] += 1;
            }
            counts
        };
        assert_eq!(train_by_class, vec![8, 5]); // floor(8.0)=8, floor(5.6)=5
        assert_eq!(split.train.len() + split.test.len(), set.len());
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let set = tenth_class_set(&[25, 13, 40]);
        let a = stratified_split(&set, 0.8, 7).unwrap();
        let b = stratified_split(&set, 0.8, 7).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&set, 0.8, 8).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_rejects_singleton_class() {
        let set = tenth_class_set(&[5, 1]);
        let err = stratified_split(&set, 0.8, 1).unwrap_err();
        assert!(err.to_string().contains("raw label 2"), "{err}");
    }

    #[test]
    fn both_sides_contain_every_class() {
        let set = tenth_class_set(&[2, 3, 50]);
        let split = stratified_split(&set, 0.9, 5).unwrap();
        for side in [&split.train, &split.test] {
            let mut present = vec![false; set.n_classes()];
            for &i in side {
                present[set.records()[i].class] = true;
            }
            assert!(present.iter().all(|&p| p), "side missing a class");
        }
    }

    #[test]
    fn manifest_round_trip() {
        let set = tenth_class_set(&[6, 6]);
        let split = stratified_split(&set, 0.75, 11).unwrap();
        let dir = std::env::temp_dir().join("hsicnn_split_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("split.txt");
        split.save(&path).unwrap();
        let back = SplitIndices::load(&path).unwrap();
        assert_eq!(split, back);
        back.validate(&set).unwrap();
        std::fs::remove_file(&path).unwrap();
    }
}
