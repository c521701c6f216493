//! Dataset entities and the on-disk dataset directory format.
//!
//! A dataset directory holds four files:
//!
//! ```text
//! meta.json        counts, dimensions, kind, generator echo
//! uploaders.jsonl  {"uploader_id", "topic_histogram"}      sorted by uploader_id
//! ugcs.jsonl       {"ugc_id", "uploader_id", "topic", "features"}  sorted by ugc_id
//! triplets.jsonl   {"uploader_id", "ugc_id", "tag_id"}     sorted by (ugc_id, tag_id)
//! ```
//!
//! Floats are written with 17 significant digits so a save/load cycle is
//! lossless and a second save is byte-identical to the first.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "tagcausal-dataset/v1";

const HISTOGRAM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub uploader_id: u32,
    pub ugc_id: u32,
    pub tag_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UgcRecord {
    pub ugc_id: u32,
    pub uploader_id: u32,
    pub topic: u32,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploaderProfile {
    pub uploader_id: u32,
    pub topic_histogram: Vec<f64>,
}

/// Whether a dataset is a complete population or one split of it.
///
/// Splits keep the parent's ids and the parent's (population) topic
/// histograms, so the ownership and histogram-recomputation checks only
/// apply to `Full` datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Full,
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub uploaders: Vec<UploaderProfile>,
    pub ugcs: Vec<UgcRecord>,
    pub triplets: Vec<Triplet>,
    pub n_topics: usize,
    pub feature_dim: usize,
    pub tag_count: usize,
    /// Upper bounds on uploader and UGC ids (the parent's counts for a split).
    pub id_space: IdSpace,
    /// Echo of whatever produced the dataset (generator config, split spec).
    pub provenance: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdSpace {
    pub uploaders: usize,
    pub ugcs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: String,
    kind: DatasetKind,
    n_topics: usize,
    feature_dim: usize,
    tag_count: usize,
    n_uploaders: usize,
    n_ugcs: usize,
    n_triplets: usize,
    id_space: IdSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

/// Fraction of the given UGCs falling in each topic.
pub fn compute_topic_histogram<'a>(
    ugcs: impl IntoIterator<Item = &'a UgcRecord>,
    n_topics: usize,
) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; n_topics];
    let mut total = 0usize;
    for u in ugcs {
        let topic = u.topic as usize;
        if topic >= n_topics {
            return Err(Error::Invariant(format!(
                "ugc {} has topic {} >= n_topics {}",
                u.ugc_id, topic, n_topics
            )));
        }
        counts[topic] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::Empty("uploader has no UGCs".into()));
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

impl Dataset {
    pub fn uploader_position(&self, uploader_id: u32) -> Option<usize> {
        self.uploaders.binary_search_by_key(&uploader_id, |u| u.uploader_id).ok()
    }

    pub fn ugc_position(&self, ugc_id: u32) -> Option<usize> {
        self.ugcs.binary_search_by_key(&ugc_id, |u| u.ugc_id).ok()
    }

    pub fn histogram_of(&self, uploader_id: u32) -> Option<&[f64]> {
        self.uploader_position(uploader_id)
            .map(|p| self.uploaders[p].topic_histogram.as_slice())
    }

    /// Tag ids attached to each UGC, aligned with `self.ugcs`.
    pub fn tags_by_ugc(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.ugcs.len()];
        for t in &self.triplets {
            if let Some(p) = self.ugc_position(t.ugc_id) {
                out[p].push(t.tag_id);
            }
        }
        out
    }

    /// Number of UGCs per topic.
    pub fn topic_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_topics];
        for u in &self.ugcs {
            counts[u.topic as usize] += 1;
        }
        counts
    }

    /// Put entities into canonical order (by primary id, triplets by (ugc, tag)).
    pub fn canonicalize(&mut self) {
        self.uploaders.sort_by_key(|u| u.uploader_id);
        self.ugcs.sort_by_key(|u| u.ugc_id);
        self.triplets.sort_by_key(|t| (t.ugc_id, t.tag_id));
    }

    /// Check every dataset invariant; the first violation is reported.
    pub fn validate(&self) -> Result<()> {
        let inv = |m: String| Err(Error::Invariant(m));
        if self.n_topics == 0 || self.feature_dim == 0 || self.tag_count == 0 {
            return inv("n_topics, feature_dim and tag_count must be >= 1".into());
        }
        let full = self.kind == DatasetKind::Full;
        if full
            && (self.id_space.uploaders != self.uploaders.len()
                || self.id_space.ugcs != self.ugcs.len())
        {
            return inv("full dataset id_space must equal entity counts".into());
        }

        for (i, u) in self.uploaders.iter().enumerate() {
            if i > 0 && self.uploaders[i - 1].uploader_id >= u.uploader_id {
                return inv(format!("uploader ids not strictly increasing at {}", u.uploader_id));
            }
            if full && u.uploader_id as usize != i {
                return inv(format!("uploader ids must be dense, found {} at {}", u.uploader_id, i));
            }
            if u.uploader_id as usize >= self.id_space.uploaders {
                return inv(format!("uploader id {} outside id space", u.uploader_id));
            }
            let h = &u.topic_histogram;
            if h.len() != self.n_topics {
                return inv(format!(
                    "uploader {} histogram has length {} (n_topics {})",
                    u.uploader_id,
                    h.len(),
                    self.n_topics
                ));
            }
            let sum: f64 = h.iter().sum();
            if h.iter().any(|&x| !(0.0..=1.0 + HISTOGRAM_TOL).contains(&x))
                || (sum - 1.0).abs() > HISTOGRAM_TOL
            {
                return inv(format!(
                    "uploader {} topic_histogram is not a probability vector",
                    u.uploader_id
                ));
            }
        }

        let mut owned = vec![0usize; self.uploaders.len()];
        for (i, c) in self.ugcs.iter().enumerate() {
            if i > 0 && self.ugcs[i - 1].ugc_id >= c.ugc_id {
                return inv(format!("ugc ids not strictly increasing at {}", c.ugc_id));
            }
            if full && c.ugc_id as usize != i {
                return inv(format!("ugc ids must be dense, found {} at {}", c.ugc_id, i));
            }
            if c.ugc_id as usize >= self.id_space.ugcs {
                return inv(format!("ugc id {} outside id space", c.ugc_id));
            }
            if c.features.len() != self.feature_dim {
                return inv(format!(
                    "ugc {} has feature dimension {} (expected {})",
                    c.ugc_id,
                    c.features.len(),
                    self.feature_dim
                ));
            }
            if c.features.iter().any(|x| !x.is_finite()) {
                return inv(format!("ugc {} has non-finite features", c.ugc_id));
            }
            if c.topic as usize >= self.n_topics {
                return inv(format!("ugc {} topic {} >= n_topics", c.ugc_id, c.topic));
            }
            match self.uploader_position(c.uploader_id) {
                Some(p) => owned[p] += 1,
                None => {
                    return inv(format!(
                        "ugc {} references unknown uploader {}",
                        c.ugc_id, c.uploader_id
                    ))
                }
            }
        }

        for (i, t) in self.triplets.iter().enumerate() {
            if t.tag_id as usize >= self.tag_count {
                return inv(format!(
                    "triplet references tag_id {} >= tag_count {}",
                    t.tag_id, self.tag_count
                ));
            }
            if i > 0 {
                let prev = &self.triplets[i - 1];
                let (a, b) = ((prev.ugc_id, prev.tag_id), (t.ugc_id, t.tag_id));
                if a == b {
                    return inv(format!("duplicate (ugc_id, tag_id) pair {:?}", b));
                }
                if a > b {
                    return inv("triplets not sorted by (ugc_id, tag_id)".into());
                }
            }
            let Some(p) = self.ugc_position(t.ugc_id) else {
                return inv(format!("triplet references unknown ugc {}", t.ugc_id));
            };
            if self.ugcs[p].uploader_id != t.uploader_id {
                return inv(format!(
                    "triplet uploader {} does not own ugc {}",
                    t.uploader_id, t.ugc_id
                ));
            }
        }

        if full {
            let mut by_uploader: Vec<Vec<&UgcRecord>> = vec![Vec::new(); self.uploaders.len()];
            for c in &self.ugcs {
                by_uploader[c.uploader_id as usize].push(c);
            }
            for (u, n) in self.uploaders.iter().zip(&owned) {
                if *n < 2 {
                    return inv(format!(
                        "uploader has < 2 UGCs (uploader {} owns {})",
                        u.uploader_id, n
                    ));
                }
                let expected =
                    compute_topic_histogram(by_uploader[u.uploader_id as usize].iter().copied(), self.n_topics)?;
                if expected
                    .iter()
                    .zip(&u.topic_histogram)
                    .any(|(a, b)| (a - b).abs() > HISTOGRAM_TOL)
                {
                    return inv(format!(
                        "uploader {} stored topic_histogram disagrees with its UGCs",
                        u.uploader_id
                    ));
                }
            }
        }
        Ok(())
    }

    fn meta(&self) -> Meta {
        Meta {
            format: DATASET_FORMAT.to_string(),
            kind: self.kind,
            n_topics: self.n_topics,
            feature_dim: self.feature_dim,
            tag_count: self.tag_count,
            n_uploaders: self.uploaders.len(),
            n_ugcs: self.ugcs.len(),
            n_triplets: self.triplets.len(),
            id_space: self.id_space,
            provenance: self.provenance.clone(),
        }
    }

    /// Serialized file contents in canonical form, `(file name, bytes)`.
    pub fn serialize_files(&self) -> Result<Vec<(&'static str, String)>> {
        let mut meta = serde_json::to_string_pretty(&self.meta())?;
        meta.push('\n');

        let mut uploaders = String::new();
        for u in &self.uploaders {
            uploaders.push_str(&format!("{{\"uploader_id\":{},\"topic_histogram\":", u.uploader_id));
            push_floats(&mut uploaders, &u.topic_histogram);
            uploaders.push_str("}\n");
        }

        let mut ugcs = String::new();
        for c in &self.ugcs {
            let _ = write!(
                ugcs,
                "{{\"ugc_id\":{},\"uploader_id\":{},\"topic\":{},\"features\":",
                c.ugc_id, c.uploader_id, c.topic
            );
            push_floats(&mut ugcs, &c.features);
            ugcs.push_str("}\n");
        }

        let mut triplets = String::new();
        for t in &self.triplets {
            let _ = writeln!(
                triplets,
                "{{\"uploader_id\":{},\"ugc_id\":{},\"tag_id\":{}}}",
                t.uploader_id, t.ugc_id, t.tag_id
            );
        }

        Ok(vec![
            ("meta.json", meta),
            ("uploaders.jsonl", uploaders),
            ("ugcs.jsonl", ugcs),
            ("triplets.jsonl", triplets),
        ])
    }

    /// SHA-256 over the canonical serialized form.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, body) in self.serialize_files()? {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update(body.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// Format with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

fn push_floats(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*x));
    }
    out.push(']');
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in dataset.serialize_files()? {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(line).map_err(|e| Error::Parse {
            file: name.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UploaderRow {
    uploader_id: u32,
    topic_histogram: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UgcRow {
    ugc_id: u32,
    uploader_id: u32,
    topic: u32,
    features: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TripletRow {
    uploader_id: u32,
    ugc_id: u32,
    tag_id: u32,
}

/// Load and validate a dataset directory. Invariant violations are rejected.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&meta_text).map_err(|e| Error::Parse {
        file: "meta.json".into(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if meta.format != DATASET_FORMAT {
        return Err(Error::Parse {
            file: "meta.json".into(),
            line: 1,
            msg: format!("unsupported format tag {:?}", meta.format),
        });
    }

    let uploaders: Vec<UploaderProfile> = read_jsonl::<UploaderRow>(dir, "uploaders.jsonl")?
        .into_iter()
        .map(|r| UploaderProfile { uploader_id: r.uploader_id, topic_histogram: r.topic_histogram })
        .collect();
    let ugcs: Vec<UgcRecord> = read_jsonl::<UgcRow>(dir, "ugcs.jsonl")?
        .into_iter()
        .map(|r| UgcRecord {
            ugc_id: r.ugc_id,
            uploader_id: r.uploader_id,
            topic: r.topic,
            features: r.features,
        })
        .collect();
    let triplets: Vec<Triplet> = read_jsonl::<TripletRow>(dir, "triplets.jsonl")?
        .into_iter()
        .map(|r| Triplet { uploader_id: r.uploader_id, ugc_id: r.ugc_id, tag_id: r.tag_id })
        .collect();

    if uploaders.len() != meta.n_uploaders
        || ugcs.len() != meta.n_ugcs
        || triplets.len() != meta.n_triplets
    {
        return Err(Error::Invariant("entity counts disagree with meta.json".into()));
    }

    let ds = Dataset {
        kind: meta.kind,
        uploaders,
        ugcs,
        triplets,
        n_topics: meta.n_topics,
        feature_dim: meta.feature_dim,
        tag_count: meta.tag_count,
        id_space: meta.id_space,
        provenance: meta.provenance,
    };
    ds.validate()?;
    Ok(ds)
}
