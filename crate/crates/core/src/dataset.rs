//! JSON Lines dataset formats, validated ingestion, and atomic file output.
//!
//! A samples file starts with a header object declaring the box convention
//! (`{"format": "pixel_xywh"}` or `{"format": "norm_xyxy"}`), followed by
//! one sample object per line. Relevance maps live in a separate JSONL file
//! joined by id; samples without a map fall back to the neutral visual
//! prior with a counted warning.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::BoxN;
use crate::priors::RelevanceGrid;
use crate::sample::{Candidate, Sample};

/// Box convention of a samples file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxFormat {
    /// `[x, y, w, h]` in pixels, converted at ingestion.
    PixelXywh,
    /// `[x1, y1, x2, y2]` in normalized coordinates.
    NormXyxy,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: BoxFormat,
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    w: u32,
    h: u32,
    phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt: Option<[f64; 4]>,
    category: String,
    candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelmapRecord {
    id: String,
    w: usize,
    h: usize,
    values: Vec<f64>,
}

#[derive(Debug)]
pub enum DatasetError {
    Io(std::io::Error),
    /// Malformed or invalid line; 1-based line number.
    Parse { line: usize, message: String },
    DuplicateId(String),
    /// Relevance map whose value count disagrees with its dimensions.
    DimensionMismatch(String),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "io error: {e}"),
            Self::Parse { line, message } => write!(f, "line {line}: {message}"),
            Self::DuplicateId(id) => write!(f, "duplicate id {id}"),
            Self::DimensionMismatch(id) => {
                write!(f, "relevance map {id}: values do not match w*h")
            }
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

/// Ingestion warning counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestWarnings {
    /// Relevance values clamped into [0, 1].
    pub clamped_values: usize,
    /// Detector scores clamped into [0, 1].
    pub clamped_scores: usize,
    /// Samples with no relevance map (counted only when a map file was given).
    pub missing_relmaps: usize,
    /// Relevance maps whose id matches no sample.
    pub orphan_relmaps: usize,
}

impl IngestWarnings {
    pub fn total(&self) -> usize {
        self.clamped_values + self.clamped_scores + self.missing_relmaps + self.orphan_relmaps
    }
}

/// Validated in-memory dataset.
#[derive(Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub relmaps: HashMap<String, RelevanceGrid>,
    pub warnings: IngestWarnings,
}

impl Dataset {
    pub fn relmap_for(&self, id: &str) -> Option<&RelevanceGrid> {
        self.relmaps.get(id)
    }
}

fn parse_box(
    raw: [f64; 4],
    format: BoxFormat,
    img_w: u32,
    img_h: u32,
) -> Result<BoxN, String> {
    match format {
        BoxFormat::PixelXywh => BoxN::from_pixel_xywh(raw[0], raw[1], raw[2], raw[3], img_w, img_h),
        BoxFormat::NormXyxy => BoxN::new(raw[0], raw[1], raw[2], raw[3]),
    }
    .map_err(|e| e.to_string())
}

/// Read and validate a samples file.
pub fn read_samples(path: &Path) -> Result<(Vec<Sample>, IngestWarnings), DatasetError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let format = loop {
        match lines.next() {
            Some((idx, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let header: Header =
                    serde_json::from_str(line.trim()).map_err(|e| DatasetError::Parse {
                        line: idx + 1,
                        message: format!(
                            "expected format header {{\"format\": \"pixel_xywh\" | \"norm_xyxy\"}}: {e}"
                        ),
                    })?;
                break header.format;
            }
            None => {
                return Err(DatasetError::Parse {
                    line: 1,
                    message: "empty samples file".into(),
                })
            }
        }
    };

    let mut warnings = IngestWarnings::default();
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let record: SampleRecord =
            serde_json::from_str(trimmed).map_err(|e| DatasetError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId(record.id));
        }
        let fail = |message: String| DatasetError::Parse { line: lineno, message };
        if crate::phrase::tokenize(&record.phrase).is_err() {
            return Err(fail(format!("sample {}: empty phrase", record.id)));
        }
        let gt = match record.gt {
            Some(raw) => {
                let b = parse_box(raw, format, record.w, record.h)
                    .map_err(|e| fail(format!("sample {}: gt {e}", record.id)))?;
                if b.area() <= 0.0 {
                    return Err(fail(format!(
                        "sample {}: ground truth must have positive area",
                        record.id
                    )));
                }
                Some(b)
            }
            None => None,
        };
        let mut candidates = Vec::with_capacity(record.candidates.len());
        for (j, cand) in record.candidates.iter().enumerate() {
            let bbox = parse_box(cand.bbox, format, record.w, record.h)
                .map_err(|e| fail(format!("sample {} candidate {j}: {e}", record.id)))?;
            if !cand.score.is_finite() {
                return Err(fail(format!(
                    "sample {} candidate {j}: non-finite score",
                    record.id
                )));
            }
            let score = if (0.0..=1.0).contains(&cand.score) {
                cand.score
            } else {
                warnings.clamped_scores += 1;
                cand.score.clamp(0.0, 1.0)
            };
            candidates.push(Candidate { bbox, score });
        }
        samples.push(Sample {
            id: record.id,
            phrase: record.phrase,
            candidates,
            gt,
            category: record.category,
        });
    }
    Ok((samples, warnings))
}

/// Read a relevance map file.
pub fn read_relmaps(
    path: &Path,
) -> Result<(HashMap<String, RelevanceGrid>, usize), DatasetError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut maps = HashMap::new();
    let mut clamped = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let record: RelmapRecord =
            serde_json::from_str(trimmed).map_err(|e| DatasetError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        let id = record.id.clone();
        let (grid, n_clamped) = RelevanceGrid::from_values(record.w, record.h, record.values)
            .map_err(|_| DatasetError::DimensionMismatch(id.clone()))?;
        clamped += n_clamped;
        if maps.insert(id.clone(), grid).is_some() {
            return Err(DatasetError::DuplicateId(id));
        }
    }
    Ok((maps, clamped))
}

/// Ingest a samples file and an optional relevance map file into a validated
/// dataset. Missing maps are counted, not fatal.
pub fn ingest(samples_path: &Path, relmaps_path: Option<&Path>) -> Result<Dataset, DatasetError> {
    let (samples, mut warnings) = read_samples(samples_path)?;
    let mut relmaps = HashMap::new();
    if let Some(path) = relmaps_path {
        let (maps, clamped) = read_relmaps(path)?;
        warnings.clamped_values = clamped;
        relmaps = maps;
        let ids: HashSet<&String> = samples.iter().map(|s| &s.id).collect();
        warnings.missing_relmaps = samples
            .iter()
            .filter(|s| !relmaps.contains_key(&s.id))
            .count();
        warnings.orphan_relmaps = relmaps.keys().filter(|id| !ids.contains(id)).count();
    }
    Ok(Dataset { samples, relmaps, warnings })
}

/// Serialize samples as JSONL in normalized xyxy, header line first.
pub fn samples_to_jsonl(samples: &[Sample]) -> String {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&Header { format: BoxFormat::NormXyxy }).unwrap());
    out.push('\n');
    for s in samples {
        let record = SampleRecord {
            id: s.id.clone(),
            w: 1000,
            h: 1000,
            phrase: s.phrase.clone(),
            gt: s.gt.as_ref().map(BoxN::as_array),
            category: s.category.clone(),
            candidates: s
                .candidates
                .iter()
                .map(|c| CandidateRecord { bbox: c.bbox.as_array(), score: c.score })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&record).unwrap());
        out.push('\n');
    }
    out
}

/// Serialize relevance grids as JSONL, one `{id, w, h, values}` per line.
pub fn relmaps_to_jsonl<'a>(
    grids: impl IntoIterator<Item = (&'a str, &'a RelevanceGrid)>,
) -> String {
    let mut out = String::new();
    for (id, grid) in grids {
        let record = RelmapRecord {
            id: id.to_owned(),
            w: grid.width(),
            h: grid.height(),
            values: grid.values().to_vec(),
        };
        out.push_str(&serde_json::to_string(&record).unwrap());
        out.push('\n');
    }
    out
}

/// Prediction file payload: mode plus an id-to-index map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub mode: String,
    pub predictions: BTreeMap<String, usize>,
}

/// Write a file atomically: the target never holds partial output.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let tmp = match path.file_name() {
        Some(name) => {
            let mut n = name.to_os_string();
            n.push(".tmp");
            path.with_file_name(n)
        }
        None => {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "path has no file name",
            ))
        }
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
