//! Dataset manifests, subject-disjoint fold planning, feature
//! precomputation, and batch assembly.
//!
//! Subject identity is load-bearing: folds are planned over subjects, not
//! frames, so no patient can contribute images to both the train and test
//! partition of any fold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::enhance::{enhanced_pair, EnhanceParams};
use crate::frst::{radial_symmetry_pair, FrstParams};
use crate::imgcore::{crop_center, load_image, resize_bilinear, save_image, GrayImage, ImageFormat};
use crate::net::{BatchInput, FeatureKind, FusionMode, FusionSpec, Tensor};
use crate::phasefilt::{local_phase_energy, AssdParams};
use crate::{Error, Result};

/// Binary classification target; the positive class is `Covid`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NonCovid,
    Covid,
}

impl Label {
    pub fn class_id(&self) -> usize {
        match self {
            Label::NonCovid => 0,
            Label::Covid => 1,
        }
    }
}

/// Label as recorded in the source datasets; pneumonia and regular scans
/// are joined into the non-COVID class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLabel {
    Covid,
    Pneumonia,
    Regular,
}

impl SourceLabel {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "covid" => Ok(SourceLabel::Covid),
            "pneumonia" => Ok(SourceLabel::Pneumonia),
            "regular" => Ok(SourceLabel::Regular),
            other => Err(Error::Format(format!(
                "unknown source label '{other}' (expected covid, pneumonia or regular)"
            ))),
        }
    }

    pub fn label(&self) -> Label {
        match self {
            SourceLabel::Covid => Label::Covid,
            SourceLabel::Pneumonia | SourceLabel::Regular => Label::NonCovid,
        }
    }
}

impl fmt::Display for SourceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SourceLabel::Covid => "covid",
            SourceLabel::Pneumonia => "pneumonia",
            SourceLabel::Regular => "regular",
        };
        f.write_str(s)
    }
}

/// One labeled frame of the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image_path: PathBuf,
    pub subject_id: String,
    pub source_label: SourceLabel,
    pub label: Label,
}

/// Anything carrying a subject identity and a class label.
pub trait SubjectLabeled {
    fn subject_id(&self) -> &str;
    fn label(&self) -> Label;
}

impl SubjectLabeled for Sample {
    fn subject_id(&self) -> &str {
        &self.subject_id
    }

    fn label(&self) -> Label {
        self.label
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Parses and validates the dataset manifest.
///
/// The CSV must carry the exact header `id,image_path,subject_id,source_label`
/// followed by one plain (unquoted) four-field row per frame; image paths
/// resolve relative to `root`.
pub fn build_manifest(root: impl AsRef<Path>, mapping: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let root = root.as_ref();
    let mapping = mapping.as_ref();
    let text = fs::read_to_string(mapping).map_err(|e| Error::io(mapping, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "id,image_path,subject_id,source_label" => {}
        Some((_, header)) => {
            return Err(Error::Format(format!(
                "manifest header '{header}' must be 'id,image_path,subject_id,source_label'"
            )))
        }
        None => return Err(Error::Format("manifest is empty".into())),
    }
    let mut samples = Vec::new();
    let mut seen = BTreeSet::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "manifest line {}: expected 4 fields, found {}",
                line_no + 1,
                fields.len()
            )));
        }
        let id = fields[0].to_string();
        if !valid_id(&id) {
            return Err(Error::Format(format!(
                "manifest line {}: id '{id}' must be non-empty and use [A-Za-z0-9_.-]",
                line_no + 1
            )));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Format(format!("duplicate sample id '{id}'")));
        }
        if fields[2].is_empty() {
            return Err(Error::Format(format!(
                "manifest line {}: subject_id must be non-empty",
                line_no + 1
            )));
        }
        let source_label = SourceLabel::parse(fields[3])?;
        let image_path = root.join(fields[1]);
        if !image_path.is_file() {
            return Err(Error::io(
                &image_path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "listed image is missing"),
            ));
        }
        samples.push(Sample {
            id,
            image_path,
            subject_id: fields[2].to_string(),
            source_label,
            label: source_label.label(),
        });
    }
    Ok(samples)
}

/// Assignment of every subject to exactly one of `k` folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, subject_id: &str) -> Option<usize> {
        self.assignments.get(subject_id).copied()
    }

    /// Splits samples into the train and test partitions of one fold.
    pub fn split<'a, S: SubjectLabeled>(
        &self,
        samples: &'a [S],
        fold: usize,
    ) -> Result<(Vec<&'a S>, Vec<&'a S>)> {
        if fold >= self.k {
            return Err(Error::Config(format!(
                "fold {fold} out of range for k={}",
                self.k
            )));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for sample in samples {
            let assigned = self.fold_of(sample.subject_id()).ok_or_else(|| {
                Error::Config(format!(
                    "subject '{}' is not covered by the fold plan",
                    sample.subject_id()
                ))
            })?;
            if assigned == fold {
                test.push(sample);
            } else {
                train.push(sample);
            }
        }
        Ok((train, test))
    }

    /// Checks subject disjointness and the greedy stratification bound:
    /// per class, each fold deviates from the even share by at most the
    /// largest single subject's sample count of that class.
    pub fn verify<S: SubjectLabeled>(&self, samples: &[S]) -> Result<()> {
        for fold in 0..self.k {
            let (train, test) = self.split(samples, fold)?;
            let train_subjects: BTreeSet<&str> =
                train.iter().map(|s| s.subject_id()).collect();
            for sample in &test {
                if train_subjects.contains(sample.subject_id()) {
                    return Err(Error::Domain(format!(
                        "subject '{}' appears in both train and test of fold {fold}",
                        sample.subject_id()
                    )));
                }
            }
        }
        for class in [Label::Covid, Label::NonCovid] {
            let mut subject_counts: BTreeMap<&str, usize> = BTreeMap::new();
            for s in samples.iter().filter(|s| s.label() == class) {
                *subject_counts.entry(s.subject_id()).or_default() += 1;
            }
            let total: usize = subject_counts.values().sum();
            if total == 0 {
                continue;
            }
            let largest = subject_counts.values().copied().max().unwrap_or(0) as f64;
            let mean = total as f64 / self.k as f64;
            let mut fold_counts = vec![0usize; self.k];
            for s in samples.iter().filter(|s| s.label() == class) {
                if let Some(f) = self.fold_of(s.subject_id()) {
                    fold_counts[f] += 1;
                }
            }
            for (fold, &count) in fold_counts.iter().enumerate() {
                if (count as f64 - mean).abs() > largest + 1e-9 {
                    return Err(Error::Domain(format!(
                        "fold {fold} holds {count} {class:?} samples against a mean of {mean:.2} (largest subject {largest})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Plans a subject-disjoint k-fold split.
///
/// Subjects are shuffled by the seeded generator, then greedily assigned
/// to the fold with the fewest samples of the subject's dominant class
/// (total samples, then subject count, then index break ties).
pub fn subject_kfold<S: SubjectLabeled>(samples: &[S], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("fold count {k} must be at least 2")));
    }
    let mut per_subject: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for s in samples {
        let entry = per_subject.entry(s.subject_id()).or_default();
        match s.label() {
            Label::Covid => entry.0 += 1,
            Label::NonCovid => entry.1 += 1,
        }
    }
    if per_subject.len() < k {
        return Err(Error::Config(format!(
            "{} distinct subjects cannot fill {k} folds",
            per_subject.len()
        )));
    }
    let mut subjects: Vec<(&str, (usize, usize))> = per_subject.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);

    let mut covid = vec![0usize; k];
    let mut non_covid = vec![0usize; k];
    let mut members = vec![0usize; k];
    let mut assignments = BTreeMap::new();
    for (subject, (n_covid, n_non)) in subjects {
        let dominant_covid = n_covid >= n_non;
        let fold = (0..k)
            .min_by_key(|&f| {
                let class_count = if dominant_covid { covid[f] } else { non_covid[f] };
                (class_count, covid[f] + non_covid[f], members[f], f)
            })
            .expect("k >= 2");
        covid[fold] += n_covid;
        non_covid[fold] += n_non;
        members[fold] += 1;
        assignments.insert(subject.to_string(), fold);
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
    })
}

/// Parameters of the feature precomputation chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizeConfig {
    /// Side of the centered square crop applied before filtering.
    pub crop_side: usize,
    /// Side the feature rasters are resized to for the network.
    pub network_side: usize,
    pub phase: AssdParams,
    pub enhance: EnhanceParams,
    pub frst: FrstParams,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        FeaturizeConfig {
            crop_side: 334,
            network_side: 512,
            phase: AssdParams::default(),
            enhance: EnhanceParams::default(),
            frst: FrstParams::default(),
        }
    }
}

impl FeaturizeConfig {
    /// Stable digest of the configuration, used to detect stale features.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(json.as_bytes())
    }
}

/// A sample with its five precomputed feature rasters on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturizedSample {
    pub id: String,
    pub subject_id: String,
    pub source_label: SourceLabel,
    pub label: Label,
    pub source_path: PathBuf,
    pub source_sha256: String,
    /// Feature name (us, e1, e2, s1, s2) to file and content hash.
    pub features: BTreeMap<String, FeatureFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl SubjectLabeled for FeaturizedSample {
    fn subject_id(&self) -> &str {
        &self.subject_id
    }

    fn label(&self) -> Label {
        self.label
    }
}

/// Enriched manifest written next to the feature rasters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub network_side: usize,
    pub config_fingerprint: String,
    pub samples: Vec<FeaturizedSample>,
}

impl FeatureManifest {
    /// Reads the manifest, resolving feature paths (stored relative so
    /// the feature directory can be relocated) against its location.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: FeatureManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            for sample in &mut manifest.samples {
                for file in sample.features.values_mut() {
                    if file.path.is_relative() {
                        file.path = dir.join(&file.path);
                    }
                }
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut portable = self.clone();
        if let Some(dir) = path.parent() {
            for sample in &mut portable.samples {
                for file in sample.features.values_mut() {
                    if let Ok(rel) = file.path.strip_prefix(dir) {
                        file.path = rel.to_path_buf();
                    }
                }
            }
        }
        let json = serde_json::to_string_pretty(&portable)
            .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Runs the full feature chain for one sample and writes the five PFM
/// rasters; temporary files are cleaned up on failure so a sample is
/// either fully featurized or absent.
pub fn featurize(
    sample: &Sample,
    cfg: &FeaturizeConfig,
    out_dir: &Path,
) -> Result<FeaturizedSample> {
    let source = load_image(&sample.image_path)?;
    let source_sha256 = hash_file(&sample.image_path)?;
    let cropped = crop_center(&source, cfg.crop_side)?;
    let lpe = local_phase_energy(&cropped, &cfg.phase)?;
    let (e1, e2) = enhanced_pair(&lpe, &cfg.enhance)?;
    let (s1, s2) = radial_symmetry_pair(&e1, &e2, &cfg.frst)?;

    let side = cfg.network_side;
    let rasters: [(&str, GrayImage); 5] = [
        ("us", resize_bilinear(&cropped, side, side)?),
        ("e1", resize_bilinear(&e1, side, side)?),
        ("e2", resize_bilinear(&e2, side, side)?),
        ("s1", resize_bilinear(&s1, side, side)?),
        ("s2", resize_bilinear(&s2, side, side)?),
    ];

    let mut written: Vec<PathBuf> = Vec::new();
    let mut features = BTreeMap::new();
    for (name, raster) in &rasters {
        let final_path = out_dir.join(format!("{}_{name}.pfm", sample.id));
        let tmp_path = out_dir.join(format!("{}_{name}.pfm.tmp", sample.id));
        let result = save_image(raster, &tmp_path, ImageFormat::Pfm)
            .and_then(|()| fs::rename(&tmp_path, &final_path).map_err(|e| Error::io(&final_path, e)));
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp_path);
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(e);
        }
        written.push(final_path.clone());
        features.insert(
            name.to_string(),
            FeatureFile {
                sha256: hash_file(&final_path)?,
                path: final_path,
            },
        );
    }
    Ok(FeaturizedSample {
        id: sample.id.clone(),
        subject_id: sample.subject_id.clone(),
        source_label: sample.source_label,
        label: sample.label,
        source_path: sample.image_path.clone(),
        source_sha256,
        features,
    })
}

/// Featurizes every sample, reusing on-disk features whose configuration
/// fingerprint, source hash and file hashes are unchanged. Returns the
/// enriched manifest (also written to `features.json` in `out_dir`).
pub fn featurize_all(
    samples: &[Sample],
    cfg: &FeaturizeConfig,
    out_dir: impl AsRef<Path>,
) -> Result<FeatureManifest> {
    use rayon::prelude::*;

    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let fingerprint = cfg.fingerprint();
    let manifest_path = out_dir.join("features.json");
    let previous: BTreeMap<String, FeaturizedSample> = match FeatureManifest::load(&manifest_path)
    {
        Ok(m) if m.config_fingerprint == fingerprint => {
            m.samples.into_iter().map(|s| (s.id.clone(), s)).collect()
        }
        _ => BTreeMap::new(),
    };

    let reusable = |sample: &Sample| -> Option<FeaturizedSample> {
        let prior = previous.get(&sample.id)?;
        let source_hash = hash_file(&sample.image_path).ok()?;
        if prior.source_sha256 != source_hash {
            return None;
        }
        for file in prior.features.values() {
            if hash_file(&file.path).ok()? != file.sha256 {
                return None;
            }
        }
        Some(prior.clone())
    };

    let featurized: Vec<FeaturizedSample> = samples
        .par_iter()
        .map(|sample| match reusable(sample) {
            Some(ready) => Ok(ready),
            None => featurize(sample, cfg, out_dir),
        })
        .collect::<Result<_>>()?;

    let manifest = FeatureManifest {
        network_side: cfg.network_side,
        config_fingerprint: fingerprint,
        samples: featurized,
    };
    manifest.save(&manifest_path)?;
    Ok(manifest)
}

/// Which partition of a fold the iterator serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Lazy batch stream over featurized samples.
///
/// Train batches are shuffled per `(seed, epoch)`; test batches follow
/// manifest order. Early fusion yields channel-stacked tensors, mid/late
/// fusion per-stream single-channel tensors.
pub struct BatchStream<'a> {
    samples: Vec<&'a FeaturizedSample>,
    fusion: &'a FusionSpec,
    batch_size: usize,
    side: usize,
    cursor: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(
        samples: &[&'a FeaturizedSample],
        fusion: &'a FusionSpec,
        batch_size: usize,
        side: usize,
        split: Split,
        seed: u64,
        epoch: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut ordered: Vec<&FeaturizedSample> = samples.to_vec();
        if split == Split::Train {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch);
            ordered.shuffle(&mut rng);
        }
        Ok(BatchStream {
            samples: ordered,
            fusion,
            batch_size,
            side,
            cursor: 0,
        })
    }

    fn load_feature(&self, sample: &FeaturizedSample, kind: FeatureKind) -> Result<GrayImage> {
        let file = sample.features.get(kind.name()).ok_or_else(|| {
            Error::io(
                PathBuf::from(format!("{}_{}.pfm", sample.id, kind.name())),
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("sample '{}' has no '{}' feature", sample.id, kind.name()),
                ),
            )
        })?;
        let img = load_image(&file.path).map_err(|e| match e {
            Error::Io { path, source } => Error::Io {
                path,
                source: std::io::Error::new(
                    source.kind(),
                    format!(
                        "feature '{}' of sample '{}': {source}",
                        kind.name(),
                        sample.id
                    ),
                ),
            },
            other => other,
        })?;
        if img.width() != self.side || img.height() != self.side {
            return Err(Error::Shape(format!(
                "feature '{}' of sample '{}' is {}x{}, expected {}x{}",
                kind.name(),
                sample.id,
                img.width(),
                img.height(),
                self.side,
                self.side
            )));
        }
        Ok(img)
    }

    fn assemble(&self, chunk: &[&FeaturizedSample]) -> Result<(BatchInput, Vec<usize>)> {
        let n = chunk.len();
        let side = self.side;
        let plane = side * side;
        let labels = chunk.iter().map(|s| s.label.class_id()).collect();
        let input = match self.fusion.mode {
            FusionMode::Early => {
                let channels = self.fusion.inputs.len();
                let mut t = Tensor::zeros(&[n, channels, side, side]);
                for (i, sample) in chunk.iter().enumerate() {
                    for (c, kind) in self.fusion.inputs.iter().enumerate() {
                        let img = self.load_feature(sample, *kind)?;
                        let base = (i * channels + c) * plane;
                        t.data_mut()[base..base + plane].copy_from_slice(img.data());
                    }
                }
                BatchInput::Stacked(t)
            }
            FusionMode::Mid | FusionMode::Late => {
                let mut streams = Vec::with_capacity(self.fusion.inputs.len());
                for kind in &self.fusion.inputs {
                    let mut t = Tensor::zeros(&[n, 1, side, side]);
                    for (i, sample) in chunk.iter().enumerate() {
                        let img = self.load_feature(sample, *kind)?;
                        t.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(img.data());
                    }
                    streams.push(t);
                }
                BatchInput::Streams(streams)
            }
        };
        Ok((input, labels))
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<(BatchInput, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.samples.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.samples.len());
        let chunk: Vec<&FeaturizedSample> = self.samples[self.cursor..end].to_vec();
        self.cursor = end;
        Some(self.assemble(&chunk))
    }
}
