//! Point-cloud datasets: synthetic generation, OFF mesh ingestion,
//! normalization, translation augmentation, batching, and on-disk storage.

pub mod off;
pub mod pcd;
pub mod sample;
pub mod shapes;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv::{parse_list, parse_scalar, KvFile};
use crate::rng::{stream, PURPOSE_MESH, PURPOSE_SAMPLE, PURPOSE_SPLIT};
use crate::tensor::Tensor;
use shapes::ShapeFamily;

/// Per-axis translation magnitude for train-time augmentation.
pub const AUGMENT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub label: usize,
}

/// Center at the centroid and scale so the farthest point has norm 1.
pub fn normalize(points: &mut [[f64; 3]]) {
    if points.is_empty() {
        return;
    }
    let n = points.len() as f64;
    let mut centroid = [0.0; 3];
    for p in points.iter() {
        for k in 0..3 {
            centroid[k] += p[k];
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    let mut max_norm: f64 = 0.0;
    for p in points.iter_mut() {
        for k in 0..3 {
            p[k] -= centroid[k];
        }
        max_norm = max_norm.max((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
    }
    if max_norm > 0.0 {
        for p in points.iter_mut() {
            for k in 0..3 {
                p[k] /= max_norm;
            }
        }
    }
}

pub fn translate(points: &mut [[f64; 3]], offset: [f64; 3]) {
    for p in points.iter_mut() {
        for k in 0..3 {
            p[k] += offset[k];
        }
    }
}

/// One independent uniform draw from [-0.1, 0.1] per coordinate axis.
pub fn random_translation(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.gen_range(-AUGMENT_RANGE..=AUGMENT_RANGE),
        rng.gen_range(-AUGMENT_RANGE..=AUGMENT_RANGE),
        rng.gen_range(-AUGMENT_RANGE..=AUGMENT_RANGE),
    ]
}

/// Random-translation augmentation; the label is untouched.
pub fn augment(pc: &PointCloud, rng: &mut ChaCha8Rng) -> PointCloud {
    let mut points = pc.points.clone();
    translate(&mut points, random_translation(rng));
    PointCloud {
        points,
        label: pc.label,
    }
}

/// A training batch: coordinates as a `[B, N, 3]` tensor plus labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub coords: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_clouds(clouds: &[&PointCloud]) -> Batch {
        assert!(!clouds.is_empty());
        let n = clouds[0].points.len();
        let mut data = Vec::with_capacity(clouds.len() * n * 3);
        let mut labels = Vec::with_capacity(clouds.len());
        for pc in clouds {
            assert_eq!(pc.points.len(), n, "ragged batch");
            for p in &pc.points {
                data.extend_from_slice(p);
            }
            labels.push(pc.label);
        }
        Batch {
            coords: Tensor::new(data, &[clouds.len(), n, 3]).unwrap(),
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Inverse of `from_clouds`; exact per-sample reconstruction.
    pub fn clouds(&self) -> Vec<PointCloud> {
        let shape = self.coords.shape();
        let (b, n) = (shape[0], shape[1]);
        let data = self.coords.data();
        (0..b)
            .map(|i| {
                let points = (0..n)
                    .map(|j| {
                        let base = (i * n + j) * 3;
                        [data[base], data[base + 1], data[base + 2]]
                    })
                    .collect();
                PointCloud {
                    points,
                    label: self.labels[i],
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub n_points: usize,
    pub seed: u64,
    pub source: String,
}

impl DatasetManifest {
    pub fn render(&self) -> String {
        let mut kv = KvFile::new();
        kv.set("", "format", "PCD1");
        kv.set("", "source", &self.source);
        kv.set("", "seed", self.seed);
        kv.set("", "points", self.n_points);
        kv.set("", "classes", self.class_names.join(","));
        kv.set(
            "",
            "train_counts",
            self.train_counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.set(
            "",
            "test_counts",
            self.test_counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.render()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        let class_names: Vec<String> = parse_list(kv.require("", "classes")?)?;
        Ok(DatasetManifest {
            class_names,
            train_counts: parse_list(kv.require("", "train_counts")?)?,
            test_counts: parse_list(kv.require("", "test_counts")?)?,
            n_points: parse_scalar(kv.require("", "points")?, "points")?,
            seed: parse_scalar(kv.require("", "seed")?, "seed")?,
            source: kv.require("", "source")?.to_string(),
        })
    }
}

/// An in-memory dataset with disjoint train/test splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub n_points: usize,
    pub seed: u64,
    pub source: String,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Dataset {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn manifest(&self) -> DatasetManifest {
        let mut train_counts = vec![0usize; self.classes()];
        let mut test_counts = vec![0usize; self.classes()];
        for pc in &self.train {
            train_counts[pc.label] += 1;
        }
        for pc in &self.test {
            test_counts[pc.label] += 1;
        }
        DatasetManifest {
            class_names: self.class_names.clone(),
            train_counts,
            test_counts,
            n_points: self.n_points,
            seed: self.seed,
            source: self.source.clone(),
        }
    }

    /// Write `train.pcd`, `test.pcd`, and `manifest.txt` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        pcd::write_split(&dir.join("train.pcd"), &self.train, self.classes(), self.n_points)?;
        pcd::write_split(&dir.join("test.pcd"), &self.test, self.classes(), self.n_points)?;
        std::fs::write(dir.join("manifest.txt"), self.manifest().render())?;
        Ok(())
    }

    /// Load a dataset directory, cross-checking the manifest against the
    /// split files.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_text = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let manifest = DatasetManifest::parse(&manifest_text)?;
        let (train, c1, n1) = pcd::read_split(&dir.join("train.pcd"))?;
        let (test, c2, n2) = pcd::read_split(&dir.join("test.pcd"))?;
        if c1 != manifest.class_names.len() || c2 != manifest.class_names.len() {
            return Err(Error::Dataset(format!(
                "manifest lists {} classes but split files carry {c1}/{c2}",
                manifest.class_names.len()
            )));
        }
        if n1 != manifest.n_points || n2 != manifest.n_points {
            return Err(Error::Dataset("points-per-sample mismatch with manifest".into()));
        }
        let ds = Dataset {
            class_names: manifest.class_names.clone(),
            n_points: manifest.n_points,
            seed: manifest.seed,
            source: manifest.source.clone(),
            train,
            test,
        };
        let actual = ds.manifest();
        if actual.train_counts != manifest.train_counts || actual.test_counts != manifest.test_counts {
            return Err(Error::Dataset("manifest counts do not match on-disk records".into()));
        }
        Ok(ds)
    }
}

/// 80/20 stratified split: returns (train, test) index lists into a
/// per-class block of `count` samples.
fn split_indices(count: usize, class: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut stream(seed, PURPOSE_SPLIT, class as u64));
    let n_test = if count >= 2 { (count / 5).max(1) } else { 0 };
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Build a synthetic dataset: one class per shape family, reproducible from
/// the seed, stratified 80/20 split.
pub fn generate_synthetic(
    families: &[ShapeFamily],
    samples_per_class: usize,
    n_points: usize,
    seed: u64,
) -> Result<Dataset> {
    if families.len() < 2 {
        return Err(Error::Dataset(format!(
            "need at least 2 shape families, got {}",
            families.len()
        )));
    }
    if n_points < 8 {
        return Err(Error::Dataset(format!("n_points must be at least 8, got {n_points}")));
    }
    if samples_per_class < 5 {
        return Err(Error::Dataset(format!(
            "samples_per_class must be at least 5 to split 80/20, got {samples_per_class}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, family) in families.iter().enumerate() {
        let clouds: Vec<PointCloud> = (0..samples_per_class)
            .map(|s| {
                let sample_id = (class * samples_per_class + s) as u64;
                let mut rng = stream(seed, PURPOSE_SAMPLE, sample_id);
                let mut points = shapes::raw_cloud(*family, n_points, &mut rng);
                normalize(&mut points);
                PointCloud { points, label: class }
            })
            .collect();
        let (tr, te) = split_indices(samples_per_class, class, seed);
        train.extend(tr.into_iter().map(|i| clouds[i].clone()));
        test.extend(te.into_iter().map(|i| clouds[i].clone()));
    }
    Ok(Dataset {
        class_names: families.iter().map(|f| f.name().to_string()).collect(),
        n_points,
        seed,
        source: format!(
            "synthetic:{}",
            families.iter().map(|f| f.name()).collect::<Vec<_>>().join(",")
        ),
        train,
        test,
    })
}

/// Build a dataset from a directory of OFF meshes: one sample per valid
/// file. Subdirectories become classes (sorted by name); a flat directory
/// becomes a single class. Unparseable files are skipped and reported.
pub fn dataset_from_meshes(
    dir: &Path,
    n_points: usize,
    seed: u64,
) -> Result<(Dataset, Vec<(PathBuf, Error)>)> {
    let mut class_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            class_dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    class_dirs.sort();
    if class_dirs.is_empty() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "mesh".into());
        class_dirs.push((name, dir.to_path_buf()));
    }

    let mut failures = Vec::new();
    let mut per_class: Vec<Vec<PointCloud>> = Vec::new();
    let mut file_index = 0u64;
    for (class, (_, class_dir)) in class_dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(class_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .map(|e| e.eq_ignore_ascii_case("off"))
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        let mut clouds = Vec::new();
        for path in files {
            file_index += 1;
            let result = (|| -> Result<PointCloud> {
                let bytes = std::fs::read(&path)?;
                let mesh = off::parse_off(&bytes)?;
                let mut rng = stream(seed, PURPOSE_MESH, file_index);
                let mut points = sample::sample_surface(&mesh, n_points, &mut rng)?;
                normalize(&mut points);
                Ok(PointCloud { points, label: class })
            })();
            match result {
                Ok(pc) => clouds.push(pc),
                Err(e) => failures.push((path, e)),
            }
        }
        per_class.push(clouds);
    }
    if per_class.iter().all(|c| c.is_empty()) {
        return Err(Error::Dataset(format!(
            "no valid OFF meshes found under {}",
            dir.display()
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, clouds) in per_class.iter().enumerate() {
        let (tr, te) = split_indices(clouds.len(), class, seed);
        train.extend(tr.into_iter().map(|i| clouds[i].clone()));
        test.extend(te.into_iter().map(|i| clouds[i].clone()));
    }
    let ds = Dataset {
        class_names: class_dirs.iter().map(|(n, _)| n.clone()).collect(),
        n_points,
        seed,
        source: format!("mesh:{}", dir.display()),
        train,
        test,
    };
    Ok((ds, failures))
}
