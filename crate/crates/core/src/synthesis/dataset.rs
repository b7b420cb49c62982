use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{synthesize_mixture, ClassVocabulary, MixturePreset, MixtureSample};
use crate::audio::{AudioClip, SAMPLE_RATE};
use crate::error::{Result, TseError};
use crate::query::derive_seed;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn id(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Seed of sample `index` in `split`. Each split owns the contiguous range
/// `[split_id·2^40 + base, split_id·2^40 + base + count)` with `base < 2^39`,
/// so ranges never overlap across splits.
pub fn split_seed(master_seed: u64, split: Split, index: usize) -> u64 {
    let base = derive_seed(master_seed, &[]) & ((1 << 39) - 1);
    (split.id() << 40) + base + index as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub vocabulary: ClassVocabulary,
    #[serde(default)]
    pub preset: Option<MixturePreset>,
    #[serde(default)]
    pub master_seed: Option<u64>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub split: Split,
    pub mixture: String,
    pub background: String,
    /// Class index → stem path.
    #[serde(with = "index_keys")]
    pub stems: BTreeMap<usize, String>,
    pub activity: Vec<bool>,
    pub snr_db: f64,
    pub seed: u64,
}

/// Integer-keyed maps survive the buffering done by tagged records only as string keys.
mod index_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, String>, s: S) -> Result<S::Ok, S::Error> {
        map.iter().map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, String>, D::Error> {
        BTreeMap::<String, String>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(|_| D::Error::custom(format!("class key {k:?} is not an index"))))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Header(ManifestHeader),
    Sample(ManifestEntry),
}

/// Line-delimited JSON manifest: one header record, then one record per sample.
/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Builds a manifest for externally prepared audio (already mixed, mono, 16 kHz).
    /// Resampling and licensing are the caller's responsibility.
    pub fn external(vocabulary: ClassVocabulary, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            header: ManifestHeader {
                schema_version: MANIFEST_SCHEMA_VERSION,
                vocabulary,
                preset: None,
                master_seed: None,
                sample_rate: SAMPLE_RATE,
            },
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.header.vocabulary.len();
        let mut ids = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(e.sample_id.as_str()) {
                return Err(TseError::ConfigInvalid(format!("duplicate sample id {}", e.sample_id)));
            }
            if e.activity.len() != classes {
                return Err(TseError::ShapeMismatch(format!(
                    "{}: activity has {} entries, vocabulary has {classes}",
                    e.sample_id,
                    e.activity.len()
                )));
            }
            for (i, &a) in e.activity.iter().enumerate() {
                if a != e.stems.contains_key(&i) {
                    return Err(TseError::ConfigInvalid(format!("{}: activity/stem mismatch at class {i}", e.sample_id)));
                }
            }
        }
        Ok(())
    }

    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&Record::Header(self.header.clone()))?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(&Record::Sample(e.clone()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_jsonl()?.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(TseError::MissingArtifact(path.to_path_buf()));
        }
        let reader = BufReader::new(File::open(path)?);
        let mut header = None;
        let mut entries = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Record>(&line)? {
                Record::Header(h) if header.is_none() => header = Some(h),
                Record::Header(_) => return Err(TseError::ConfigInvalid("manifest has two header records".into())),
                Record::Sample(e) => entries.push(e),
            }
        }
        let header = header.ok_or_else(|| TseError::ConfigInvalid("manifest has no header record".into()))?;
        if header.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(TseError::ConfigInvalid(format!("unsupported manifest schema {}", header.schema_version)));
        }
        let m = Self { header, entries };
        m.validate()?;
        Ok(m)
    }
}

/// Synthesizes every split, writes 32-bit float WAVs under `out_dir/<split>/` and
/// `out_dir/manifest.jsonl`. Samples are generated in parallel; the manifest is
/// written once, in order.
pub fn build_dataset(
    vocab: &ClassVocabulary,
    preset: &MixturePreset,
    counts: DatasetCounts,
    master_seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    preset.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut entries = Vec::new();
    for split in Split::ALL {
        let n = counts.get(split);
        if n == 0 {
            continue;
        }
        fs::create_dir_all(out_dir.join(split.name()))?;
        let split_entries: Vec<ManifestEntry> = (0..n)
            .into_par_iter()
            .map(|i| {
                let seed = split_seed(master_seed, split, i);
                let sample = synthesize_mixture(vocab, preset, seed)?;
                write_sample(out_dir, split, i, &sample)
            })
            .collect::<Result<_>>()?;
        entries.extend(split_entries);
    }
    let manifest = DatasetManifest {
        header: ManifestHeader {
            schema_version: MANIFEST_SCHEMA_VERSION,
            vocabulary: vocab.clone(),
            preset: Some(*preset),
            master_seed: Some(master_seed),
            sample_rate: preset.sample_rate,
        },
        entries,
    };
    manifest.validate()?;
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

fn write_sample(root: &Path, split: Split, index: usize, sample: &MixtureSample) -> Result<ManifestEntry> {
    let id = format!("{}-{index:06}", split.name());
    let rel = |suffix: &str| format!("{}/{id}.{suffix}.wav", split.name());
    let mixture = rel("mix");
    sample.mixture.write_wav(&root.join(&mixture))?;
    let background = rel("bg");
    sample.background.write_wav(&root.join(&background))?;
    let mut stems = BTreeMap::new();
    for (&c, clip) in &sample.stems {
        let p = rel(&format!("c{c}"));
        clip.write_wav(&root.join(&p))?;
        stems.insert(c, p);
    }
    Ok(ManifestEntry {
        sample_id: id,
        split,
        mixture,
        background,
        stems,
        activity: sample.activity.clone(),
        snr_db: sample.snr_db,
        seed: sample.seed,
    })
}

/// Random-access view over one split of a dataset.
pub trait SampleSource: Sync {
    fn vocabulary(&self) -> &ClassVocabulary;
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> Result<MixtureSample>;
    /// Stable per-sample key used to seed paired query draws.
    fn sample_key(&self, index: usize) -> u64;
    /// Content hash identifying the sample set.
    fn fingerprint(&self) -> String;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples read lazily from WAV files listed in a manifest.
pub struct ManifestSource {
    root: PathBuf,
    header: ManifestHeader,
    entries: Vec<ManifestEntry>,
    fingerprint: String,
}

impl ManifestSource {
    pub fn open(manifest_path: &Path, split: Split) -> Result<Self> {
        let manifest = DatasetManifest::read(manifest_path)?;
        Ok(Self::from_manifest(manifest, manifest_path.parent().unwrap_or(Path::new(".")), split))
    }

    pub fn from_manifest(manifest: DatasetManifest, root: &Path, split: Split) -> Self {
        let entries: Vec<ManifestEntry> = manifest.entries_for(split).cloned().collect();
        let mut h = Sha256::new();
        h.update(manifest.header.vocabulary.fingerprint().as_bytes());
        for e in &entries {
            h.update(e.sample_id.as_bytes());
            h.update(e.seed.to_le_bytes());
        }
        let fingerprint = h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect();
        Self { root: root.to_path_buf(), header: manifest.header, entries, fingerprint }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn load(&self, rel: &str) -> Result<AudioClip> {
        let path = self.root.join(rel);
        if !path.exists() {
            return Err(TseError::MissingArtifact(path));
        }
        let clip = AudioClip::read_wav(&path)?;
        if clip.sample_rate() != self.header.sample_rate {
            return Err(TseError::InvalidAudio(format!(
                "{}: sample rate {} differs from dataset rate {}; resample before importing",
                path.display(),
                clip.sample_rate(),
                self.header.sample_rate
            )));
        }
        Ok(clip)
    }
}

impl SampleSource for ManifestSource {
    fn vocabulary(&self) -> &ClassVocabulary {
        &self.header.vocabulary
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn sample(&self, index: usize) -> Result<MixtureSample> {
        let e = &self.entries[index];
        let mixture = self.load(&e.mixture)?;
        let background = self.load(&e.background)?;
        let mut stems = BTreeMap::new();
        for (&c, rel) in &e.stems {
            let stem = self.load(rel)?;
            if stem.len() != mixture.len() {
                return Err(TseError::LengthMismatch { expected: mixture.len(), actual: stem.len() });
            }
            stems.insert(c, stem);
        }
        Ok(MixtureSample { mixture, stems, background, activity: e.activity.clone(), snr_db: e.snr_db, seed: e.seed })
    }

    fn sample_key(&self, index: usize) -> u64 {
        self.entries[index].seed
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

/// Samples regenerated on demand from their seeds; identical to what
/// [`build_dataset`] writes for the same master seed, without touching disk.
pub struct SyntheticSource {
    vocab: ClassVocabulary,
    preset: MixturePreset,
    seeds: Vec<u64>,
}

impl SyntheticSource {
    pub fn new(vocab: ClassVocabulary, preset: MixturePreset, seeds: Vec<u64>) -> Self {
        Self { vocab, preset, seeds }
    }

    pub fn split(vocab: ClassVocabulary, preset: MixturePreset, master_seed: u64, split: Split, count: usize) -> Self {
        let seeds = (0..count).map(|i| split_seed(master_seed, split, i)).collect();
        Self::new(vocab, preset, seeds)
    }

    pub fn preset(&self) -> &MixturePreset {
        &self.preset
    }
}

impl SampleSource for SyntheticSource {
    fn vocabulary(&self) -> &ClassVocabulary {
        &self.vocab
    }

    fn len(&self) -> usize {
        self.seeds.len()
    }

    fn sample(&self, index: usize) -> Result<MixtureSample> {
        synthesize_mixture(&self.vocab, &self.preset, self.seeds[index])
    }

    fn sample_key(&self, index: usize) -> u64 {
        self.seeds[index]
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.vocab.fingerprint().as_bytes());
        h.update(serde_json::to_string(&self.preset).unwrap_or_default().as_bytes());
        for s in &self.seeds {
            h.update(s.to_le_bytes());
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
