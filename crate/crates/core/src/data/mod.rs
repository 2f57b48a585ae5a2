//! Datasets, file loaders, synthetic generators and augmentation.

mod augment;
mod idx;
mod synthetic;

pub use augment::{augment, crop_image, effective_n, AugmentationSpec, CropChoice};
pub use idx::{IdxArray, IdxData};
pub use synthetic::{make_synthetic, SyntheticKind};

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{RngStream, Tensor};

/// Labelled examples with inputs `[N, feature-shape...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub validation: Dataset,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rank() < 2 || inputs.rows() != labels.len() {
            return shape_err(
                "Dataset::new",
                format!("inputs {:?} with {} labels", inputs.shape(), labels.len()),
            );
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return invalid(format!("label {bad} outside [0, {num_classes})"));
        }
        Ok(Self {
            name: name.into(),
            inputs,
            labels,
            num_classes,
        })
    }

    /// Number of examples before augmentation.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn num_features(&self) -> usize {
        self.inputs.row_len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Inputs and labels at `idx`, in that order.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.inputs.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return invalid(format!("index {bad} outside dataset of {}", self.len()));
        }
        let (inputs, labels) = self.batch(idx);
        Dataset::new(self.name.clone(), inputs, labels, self.num_classes)
    }

    /// Shuffle once and hold out `round(fraction * N)` examples.
    pub fn split(&self, validation_fraction: f64, seed: u64) -> Result<DatasetSplits> {
        if !(0.0..1.0).contains(&validation_fraction) {
            return invalid(format!("validation fraction {validation_fraction} outside [0, 1)"));
        }
        let mut rng = RngStream::new(seed, 0x5_9117);
        let order = rng.permutation(self.len());
        let n_val = (validation_fraction * self.len() as f64).round() as usize;
        let (val, train) = order.split_at(n_val);
        let mut train = self.subset(train)?;
        let mut validation = self.subset(val)?;
        train.name = format!("{}-train", self.name);
        validation.name = format!("{}-validation", self.name);
        Ok(DatasetSplits { train, validation })
    }

    /// Reorder the flattened features of every example: output feature `j`
    /// is input feature `perm[j]`.
    pub fn permute_features(&self, perm: &[usize]) -> Result<Dataset> {
        let f = self.num_features();
        let mut seen = vec![false; f];
        if perm.len() != f || !perm.iter().all(|&p| p < f && !std::mem::replace(&mut seen[p], true)) {
            return invalid(format!("not a permutation of {f} features"));
        }
        let mut values = Vec::with_capacity(self.inputs.len());
        for i in 0..self.len() {
            let row = self.inputs.row(i);
            values.extend(perm.iter().map(|&p| row[p]));
        }
        Dataset::new(
            self.name.clone(),
            Tensor::new(self.inputs.shape().to_vec(), values)?,
            self.labels.clone(),
            self.num_classes,
        )
    }
}

/// Minibatch index lists for one epoch, sampled without replacement. A
/// trailing batch of a single example is merged into the one before it so
/// batch normalization always sees at least two examples.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || n == 0 {
        return invalid(format!("cannot batch {n} examples in batches of {batch_size}"));
    }
    let order = rng.permutation(n);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    Ok(batches)
}

/// Images from an unsigned-byte IDX file scaled to `[0, 1]`, with labels
/// from a second IDX file. Rank-3 image files gain a channel axis.
pub fn load_idx(images: &Path, labels: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let img = IdxArray::read(images)?;
    let IdxData::U8(pixels) = &img.data else {
        return invalid(format!("{}: images must be unsigned bytes", images.display()));
    };
    let lab = IdxArray::read(labels)?;
    if lab.dims.len() != 1 {
        return invalid(format!("{}: labels must be one-dimensional", labels.display()));
    }
    let ys: Vec<usize> = match &lab.data {
        IdxData::U8(v) => v.iter().map(|&y| y as usize).collect(),
        IdxData::I8(_) | IdxData::I16(_) | IdxData::I32(_) => lab
            .data
            .to_f64()
            .into_iter()
            .map(|y| {
                if y < 0.0 {
                    Err(Error::InvalidArgument(format!("negative label {y}")))
                } else {
                    Ok(y as usize)
                }
            })
            .collect::<Result<_>>()?,
        _ => return invalid(format!("{}: labels must be integers", labels.display())),
    };
    let mut shape = img.dims.clone();
    if shape.len() == 3 {
        shape.insert(1, 1);
    }
    let inputs = Tensor::new(shape, pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let k = num_classes.unwrap_or_else(|| ys.iter().max().map_or(0, |m| m + 1));
    let name = images
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, inputs, ys, k)
}

/// CSV with a header row; `label_column` names the class column and every
/// other column is a numeric feature.
pub fn load_csv(path: &Path, label_column: &str, num_classes: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let Some(label_at) = headers.iter().position(|h| h == label_column) else {
        return invalid(format!("{}: no column named {label_column:?}", path.display()));
    };
    let (mut values, mut labels) = (Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            let bad = || {
                Error::InvalidArgument(format!(
                    "{} row {}: bad value {field:?} in column {j}",
                    path.display(),
                    line + 1
                ))
            };
            if j == label_at {
                labels.push(field.trim().parse::<usize>().map_err(|_| bad())?);
            } else {
                values.push(field.trim().parse::<f64>().map_err(|_| bad())?);
            }
        }
    }
    let n = labels.len();
    let f = headers.len() - 1;
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, Tensor::new(vec![n, f], values)?, labels, k)
}

/// Directory holding the bundled 8x8 handwritten-digits IDX files.
pub fn digits_fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("digits")
}

/// The bundled 8x8 digits as `[1797, 1, 8, 8]` images in `[0, 1]`, after
/// checking the fixture checksums.
pub fn load_digits() -> Result<Dataset> {
    let dir = digits_fixture_dir();
    verify_manifest(&dir.join("MANIFEST.sha256"))?;
    let mut d = load_idx(&dir.join("digits-images.idx"), &dir.join("digits-labels.idx"), Some(10))?;
    d.name = "digits".into();
    Ok(d)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Check every `<hex digest>  <file>` line of a manifest against the files
/// next to it.
pub fn verify_manifest(manifest: &Path) -> Result<()> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(manifest)?;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let Some((digest, file)) = line.split_once("  ") else {
            return invalid(format!("{}: malformed line {line:?}", manifest.display()));
        };
        let actual = sha256_hex(&std::fs::read(dir.join(file))?);
        if actual != digest {
            return invalid(format!("{file}: checksum {actual} does not match {digest}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let x = Tensor::new(vec![6, 2], (0..12).map(f64::from).collect()).unwrap();
        Dataset::new("tiny", x, vec![0, 1, 2, 0, 1, 2], 3).unwrap()
    }

    #[test]
    fn labels_must_be_in_range() {
        let x = Tensor::zeros(&[2, 1]);
        assert!(Dataset::new("bad", x.clone(), vec![0, 3], 3).is_err());
        assert!(Dataset::new("bad", x, vec![0], 3).is_err());
    }

    #[test]
    fn four_image_idx_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..4 * 3 * 2).map(|i| (i * 11) as u8).collect();
        IdxArray::new(vec![4, 3, 2], IdxData::U8(pixels.clone()))
            .unwrap()
            .write(&dir.path().join("img.idx"))
            .unwrap();
        IdxArray::new(vec![4], IdxData::U8(vec![1, 0, 1, 2]))
            .unwrap()
            .write(&dir.path().join("lab.idx"))
            .unwrap();
        let d = load_idx(&dir.path().join("img.idx"), &dir.path().join("lab.idx"), None).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.inputs.shape(), &[4, 1, 3, 2]);
        assert_eq!(d.num_classes, 3);
        assert_eq!(d.inputs.values()[5], 55.0 / 255.0);
        assert!(d.inputs.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn digits_fixture_checksums_and_shape() {
        let d = load_digits().unwrap();
        assert_eq!(d.inputs.shape(), &[1797, 1, 8, 8]);
        assert_eq!(d.num_classes, 10);
        assert_eq!(d.class_counts(), vec![178, 182, 177, 183, 181, 182, 181, 179, 174, 180]);
        let img = std::fs::read(digits_fixture_dir().join("digits-images.idx")).unwrap();
        assert_eq!(
            sha256_hex(&img),
            "d224a90b51e21e5d1332d34effc46c3a7d6244906f07c292c24213770d11ca7b"
        );
    }

    #[test]
    fn manifest_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.bin"), b"abc").unwrap();
        let good = format!("{}  a.bin\n", sha256_hex(b"abc"));
        std::fs::write(dir.path().join("M"), &good).unwrap();
        verify_manifest(&dir.path().join("M")).unwrap();
        std::fs::write(dir.path().join("a.bin"), b"abd").unwrap();
        assert!(verify_manifest(&dir.path().join("M")).is_err());
    }

    #[test]
    fn csv_loader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x0,class,x1\n0.5,1,2\n-1,0,3.5\n").unwrap();
        let d = load_csv(&p, "class", None).unwrap();
        assert_eq!(d.inputs, Tensor::from_rows(&[vec![0.5, 2.0], vec![-1.0, 3.5]]).unwrap());
        assert_eq!(d.labels, vec![1, 0]);
        assert!(load_csv(&p, "label", None).is_err());
        std::fs::write(&p, "x0,class\nfoo,1\n").unwrap();
        assert!(load_csv(&p, "class", None).unwrap_err().to_string().contains("row 1"));
    }

    #[test]
    fn split_partitions_examples() {
        let d = tiny();
        let s = d.split(1.0 / 3.0, 9).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (4, 2));
        let mut all: Vec<f64> = s
            .train
            .inputs
            .values()
            .iter()
            .chain(s.validation.inputs.values())
            .copied()
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, d.inputs.values());
    }

    #[test]
    fn epoch_batches_cover_without_replacement() {
        let mut rng = RngStream::new(1, 0);
        let b = epoch_batches(10, 3, &mut rng).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 4]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let b = epoch_batches(11, 3, &mut rng).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 2]);
    }

    #[test]
    fn feature_permutation_round_trip() {
        let d = tiny();
        let p = d.permute_features(&[1, 0]).unwrap();
        assert_eq!(p.inputs.row(0), &[1.0, 0.0]);
        assert_eq!(p.permute_features(&[1, 0]).unwrap(), d);
        assert!(d.permute_features(&[0, 0]).is_err());
    }
}
