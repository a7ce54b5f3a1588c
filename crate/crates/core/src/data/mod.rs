//! Labeled image sets, dataset ingestion (directories, label CSVs, synthetic
//! corpora), deterministic 80/10/10 splits, batching and augmentation.

pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::initkit::tensor_rng;
use crate::metrics::check_metric_id;
use crate::netlab::InputBatch;
use crate::nn::Fmap;

pub use synth::{generate, GeneratorSpec, SOURCE_CORPUS, TARGET_CORPUS};

/// Per-channel normalization applied to `[0, 1]` pixels.
pub const PIXEL_MEAN: f32 = 0.5;
pub const PIXEL_SCALE: f32 = 0.25;

/// Images with dense class labels and stable sample ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub images: Fmap,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
    pub class_count: usize,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledSet {
        let per = self.images.per_sample();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.images.data[i * per..(i + 1) * per]);
        }
        LabeledSet {
            images: Fmap { n: idx.len(), c: self.images.c, h: self.images.h, w: self.images.w, data },
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Contiguous `[start, end)` slice as a network input batch.
    pub fn batch(&self, start: usize, end: usize) -> InputBatch {
        let per = self.images.per_sample();
        InputBatch {
            images: Fmap {
                n: end - start,
                c: self.images.c,
                h: self.images.h,
                w: self.images.w,
                data: self.images.data[start * per..end * per].to_vec(),
            },
            sample_ids: self.ids[start..end].to_vec(),
        }
    }

    /// `[start, end)` ranges of at most `size` samples.
    pub fn chunks(&self, size: usize) -> Vec<(usize, usize)> {
        (0..self.len()).step_by(size.max(1)).map(|s| (s, (s + size.max(1)).min(self.len()))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Directory { path: PathBuf },
    Synthetic { spec: GeneratorSpec },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub id: String,
    pub source: DatasetSource,
    pub class_names: Vec<String>,
    pub class_count: usize,
    pub sample_count: usize,
    pub image_size: usize,
    pub split_seed: u64,
    pub splits: Splits,
    pub metric_id: String,
    #[serde(default)]
    pub fid_to_source: Option<f64>,
}

impl DatasetManifest {
    /// Content hash over everything except the optional FID annotation.
    pub fn content_hash(&self) -> String {
        let mut m = self.clone();
        m.fid_to_source = None;
        let bytes = serde_json::to_vec(&m).expect("manifest serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(Error::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A dataset with its three splits materialized.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&LabeledSet> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// 80/10/10 train/test/val assignment of `0..n` from a shuffle seeded by `split_seed`.
pub fn split_indices(n: usize, split_seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = tensor_rng(split_seed, "split", "");
    idx.shuffle(&mut rng);
    let n_train = n * 8 / 10;
    let n_test = n / 10;
    let train = idx[..n_train].to_vec();
    let test = idx[n_train..n_train + n_test].to_vec();
    let val = idx[n_train + n_test..].to_vec();
    (train, val, test)
}

fn normalize(pixels: &mut [f32]) {
    pixels.iter_mut().for_each(|v| *v = (*v - PIXEL_MEAN) / PIXEL_SCALE);
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    id: &str,
    source: DatasetSource,
    class_names: Vec<String>,
    image_size: usize,
    mut pixels: Vec<f32>,
    labels: Vec<usize>,
    split_seed: u64,
    metric_id: &str,
) -> Result<Dataset> {
    check_metric_id(metric_id)?;
    let class_count = class_names.len();
    if class_count < 2 {
        return Err(Error::Data(format!("dataset `{id}` has {class_count} classes; at least 2 required")));
    }
    for (k, name) in class_names.iter().enumerate() {
        if !labels.contains(&k) {
            return Err(Error::Data(format!("class `{name}` has no samples")));
        }
    }
    normalize(&mut pixels);
    let n = labels.len();
    let all = LabeledSet {
        images: Fmap { n, c: 3, h: image_size, w: image_size, data: pixels },
        labels,
        ids: (0..n as u64).collect(),
        class_count,
    };
    let (tr, va, te) = split_indices(n, split_seed);
    let ids = |v: &[usize]| v.iter().map(|&i| i as u64).collect::<Vec<_>>();
    let manifest = DatasetManifest {
        id: id.to_string(),
        source,
        class_names,
        class_count,
        sample_count: n,
        image_size,
        split_seed,
        splits: Splits { train: ids(&tr), val: ids(&va), test: ids(&te) },
        metric_id: metric_id.to_string(),
        fid_to_source: None,
    };
    Ok(Dataset { manifest, train: all.subset(&tr), val: all.subset(&va), test: all.subset(&te) })
}

/// Generates a registered synthetic corpus and splits it.
pub fn ingest_synthetic(id: &str, spec: &GeneratorSpec, split_seed: u64, metric_id: &str) -> Result<Dataset> {
    let (pixels, labels) = generate(spec)?;
    assemble(
        id,
        DatasetSource::Synthetic { spec: spec.clone() },
        spec.class_names()?,
        spec.image_size,
        pixels,
        labels,
        split_seed,
        metric_id,
    )
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png")
    )
}

fn load_image(path: &Path, size: usize) -> std::result::Result<Vec<f32>, String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?.to_rgb8();
    let img = if img.width() as usize != size || img.height() as usize != size {
        image::imageops::resize(&img, size as u32, size as u32, image::imageops::FilterType::Triangle)
    } else {
        img
    };
    let plane = size * size;
    let mut out = vec![0.0; 3 * plane];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Reads either one subdirectory per class or a `labels.csv` (`filename,label`)
/// at the root, resizes images to `image_size` and writes `manifest.json`
/// beside the data.
pub fn ingest_directory(id: &str, dir: &Path, image_size: usize, split_seed: u64, metric_id: &str) -> Result<Dataset> {
    let mut entries: Vec<(PathBuf, String)> = Vec::new();
    let csv_path = dir.join("labels.csv");
    let mut class_set: BTreeMap<String, usize> = BTreeMap::new();
    if csv_path.exists() {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(&csv_path)?;
        for rec in rdr.records() {
            let rec = rec?;
            let (file, label) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
            if file.is_empty() || label.is_empty() {
                return Err(Error::Data(format!("malformed row in {}", csv_path.display())));
            }
            entries.push((dir.join(file), label.to_string()));
            *class_set.entry(label.to_string()).or_default() += 1;
        }
    } else {
        let mut classes: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(Error::io(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        classes.sort();
        for cdir in classes {
            let name = cdir.file_name().unwrap().to_string_lossy().to_string();
            let mut files: Vec<PathBuf> = fs::read_dir(&cdir)
                .map_err(Error::io(&cdir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image(p))
                .collect();
            if files.is_empty() {
                return Err(Error::Data(format!("class directory `{name}` contains no images")));
            }
            files.sort();
            class_set.insert(name.clone(), files.len());
            entries.extend(files.into_iter().map(|f| (f, name.clone())));
        }
    }
    if entries.is_empty() {
        return Err(Error::Data(format!("no images found under {}", dir.display())));
    }
    let class_names: Vec<String> = class_set.keys().cloned().collect();
    let mut pixels = Vec::with_capacity(entries.len() * 3 * image_size * image_size);
    let mut labels = Vec::with_capacity(entries.len());
    let mut bad = Vec::new();
    for (path, label) in &entries {
        match load_image(path, image_size) {
            Ok(px) => {
                pixels.extend(px);
                labels.push(class_names.iter().position(|c| c == label).unwrap());
            }
            Err(e) => bad.push(e),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Ingestion(bad));
    }
    let ds = assemble(
        id,
        DatasetSource::Directory { path: dir.to_path_buf() },
        class_names,
        image_size,
        pixels,
        labels,
        split_seed,
        metric_id,
    )?;
    ds.manifest.write(&dir.join("manifest.json"))?;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Training-time sampling

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augmentation {
    pub color_jitter: f32,
    pub hflip: bool,
    pub vflip: bool,
    /// Zero padding before a random crop back to the input size; 0 disables cropping.
    pub crop_pad: usize,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self { color_jitter: 0.2, hflip: true, vflip: true, crop_pad: 4 }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self { color_jitter: 0.0, hflip: false, vflip: false, crop_pad: 0 }
    }

    /// Augments one `[c, h, w]` normalized image in place.
    pub fn apply(&self, rng: &mut ChaCha8Rng, img: &mut [f32], c: usize, h: usize, w: usize) {
        let plane = h * w;
        if self.color_jitter > 0.0 {
            let j = self.color_jitter;
            let bright = rng.random_range(-j..j) / PIXEL_SCALE;
            let contrast = 1.0 + rng.random_range(-j..j);
            for ch in 0..c {
                let gain = 1.0 + rng.random_range(-j..j) * 0.5;
                img[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v = *v * contrast * gain + bright);
            }
        }
        if self.hflip && rng.random::<bool>() {
            for row in img.chunks_mut(w) {
                row.reverse();
            }
        }
        if self.vflip && rng.random::<bool>() {
            for ch in 0..c {
                let p = &mut img[ch * plane..(ch + 1) * plane];
                for y in 0..h / 2 {
                    for x in 0..w {
                        p.swap(y * w + x, (h - 1 - y) * w + x);
                    }
                }
            }
        }
        if self.crop_pad > 0 {
            let pad = self.crop_pad as i64;
            let dy = rng.random_range(-pad..=pad);
            let dx = rng.random_range(-pad..=pad);
            if dx != 0 || dy != 0 {
                let src = img.to_vec();
                for ch in 0..c {
                    for y in 0..h as i64 {
                        for x in 0..w as i64 {
                            let (sy, sx) = (y + dy, x + dx);
                            let v = if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                                src[ch * plane + (sy as usize) * w + sx as usize]
                            } else {
                                0.0
                            };
                            img[ch * plane + (y as usize) * w + x as usize] = v;
                        }
                    }
                }
            }
        }
    }
}

/// Epoch-wise shuffled minibatches with augmentation, driven by one seeded stream.
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    rng: ChaCha8Rng,
    aug: Augmentation,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64, aug: Augmentation) -> Self {
        let mut rng = tensor_rng(seed, "sampler", "");
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, cursor: 0, batch: batch.min(n).max(1), rng, aug }
    }

    pub fn next_batch(&mut self, set: &LabeledSet) -> (Fmap, Vec<usize>) {
        let mut idx = Vec::with_capacity(self.batch);
        while idx.len() < self.batch {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            idx.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        let mut sub = set.subset(&idx);
        let (c, h, w) = (sub.images.c, sub.images.h, sub.images.w);
        let per = sub.images.per_sample();
        for img in sub.images.data.chunks_mut(per) {
            self.aug.apply(&mut self.rng, img, c, h, w);
        }
        (sub.images, sub.labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_split_sizes_and_determinism() {
        let spec = GeneratorSpec::source(200, 16, 3);
        let a = ingest_synthetic("src", &spec, 7, "accuracy").unwrap();
        assert_eq!((a.train.len(), a.test.len(), a.val.len()), (160, 20, 20));
        let b = ingest_synthetic("src", &spec, 7, "accuracy").unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.train.images.data, b.train.images.data);
        let c = ingest_synthetic("src", &spec, 8, "accuracy").unwrap();
        assert_ne!(a.manifest.splits, c.manifest.splits);
        let mut all: Vec<u64> = a.manifest.splits.train.clone();
        all.extend(&a.manifest.splits.val);
        all.extend(&a.manifest.splits.test);
        all.sort();
        assert_eq!(all, (0..200).collect::<Vec<u64>>());
    }

    #[test]
    fn split_arithmetic_at_20k() {
        let (tr, va, te) = split_indices(20_000, 0);
        assert_eq!((tr.len(), va.len(), te.len()), (16_000, 2_000, 2_000));
    }

    #[test]
    fn shift_changes_pixels_not_labels() {
        let a = generate(&GeneratorSpec::target(50, 16, 0.0, 1)).unwrap();
        let b = generate(&GeneratorSpec::target(50, 16, 1.0, 1)).unwrap();
        assert_eq!(a.1, b.1);
        assert_ne!(a.0, b.0);
        assert!(a.0.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn unknown_corpus_and_metric_rejected() {
        let mut spec = GeneratorSpec::source(20, 16, 0);
        spec.corpus = "faces".into();
        assert!(matches!(ingest_synthetic("x", &spec, 0, "accuracy"), Err(Error::Config(_))));
        let spec = GeneratorSpec::source(20, 16, 0);
        assert!(matches!(ingest_synthetic("x", &spec, 0, "f1"), Err(Error::Config(_))));
    }

    #[test]
    fn directory_ingestion_counts_and_errors() {
        let tmp = tempfile::tempdir().unwrap();
        for class in ["a", "b"] {
            let d = tmp.path().join(class);
            fs::create_dir_all(&d).unwrap();
            for i in 0..10 {
                let img = image::RgbImage::from_pixel(8, 8, image::Rgb([i * 20, 100, if class == "a" { 0 } else { 255 }]));
                img.save(d.join(format!("{i}.png"))).unwrap();
            }
        }
        let ds = ingest_directory("dir", tmp.path(), 8, 0, "accuracy").unwrap();
        assert_eq!((ds.manifest.class_count, ds.manifest.sample_count), (2, 20));
        assert!(tmp.path().join("manifest.json").exists());
        let again = ingest_directory("dir", tmp.path(), 8, 0, "accuracy").unwrap();
        assert_eq!(ds.manifest.splits, again.manifest.splits);

        fs::write(tmp.path().join("b").join("broken.png"), b"not a png").unwrap();
        match ingest_directory("dir", tmp.path(), 8, 0, "accuracy") {
            Err(Error::Ingestion(files)) => assert!(files[0].contains("broken.png")),
            other => panic!("{other:?}"),
        }
        fs::create_dir_all(tmp.path().join("c")).unwrap();
        assert!(matches!(ingest_directory("dir", tmp.path(), 8, 0, "accuracy"), Err(Error::Data(_))));
    }

    #[test]
    fn labels_csv_ingestion() {
        let tmp = tempfile::tempdir().unwrap();
        let mut rows = String::from("filename,label\n");
        for i in 0..6u8 {
            image::RgbImage::from_pixel(4, 4, image::Rgb([i, i, i])).save(tmp.path().join(format!("{i}.png"))).unwrap();
            rows.push_str(&format!("{i}.png,{}\n", if i % 2 == 0 { "even" } else { "odd" }));
        }
        fs::write(tmp.path().join("labels.csv"), rows).unwrap();
        let ds = ingest_directory("csv", tmp.path(), 4, 1, "auc").unwrap();
        assert_eq!(ds.manifest.class_names, vec!["even", "odd"]);
        assert_eq!(ds.manifest.sample_count, 6);
    }

    #[test]
    fn sampler_is_seeded() {
        let ds = ingest_synthetic("s", &GeneratorSpec::source(100, 16, 0), 0, "accuracy").unwrap();
        let mut a = BatchSampler::new(ds.train.len(), 16, 5, Augmentation::default());
        let mut b = BatchSampler::new(ds.train.len(), 16, 5, Augmentation::default());
        for _ in 0..7 {
            let (x, y) = a.next_batch(&ds.train);
            let (x2, y2) = b.next_batch(&ds.train);
            assert_eq!(y, y2);
            assert_eq!(x.data, x2.data);
        }
    }
}
