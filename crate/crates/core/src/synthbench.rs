//! Synthetic desk-scale benchmark: scenes with colored objects, referring
//! phrases, detector-style candidate scores, and relevance grids, built so
//! that spatial phrasing is the only reliable signal whenever detector
//! scores are ambiguous.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BoxN};
use crate::phrase;
use crate::priors::RelevanceGrid;
use crate::rng::SplitMix64;
use crate::sample::{Candidate, Sample};

/// Corpus generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub objects_min: usize,
    pub objects_max: usize,
    pub colors: Vec<String>,
    pub classes: Vec<String>,
    /// Fraction of scenes with two same-class same-color objects told apart
    /// only by a spatial phrase.
    pub ambiguity_rate: f64,
    /// Standard deviation of the detector score noise.
    pub detector_noise: f64,
    /// Probability that the relevance bump lands on the referred object.
    pub relevance_fidelity: f64,
    pub grid_resolution: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            objects_min: 3,
            objects_max: 6,
            colors: ["red", "blue", "green", "yellow"]
                .map(String::from)
                .to_vec(),
            classes: ["mug", "book", "plant", "lamp", "person"]
                .map(String::from)
                .to_vec(),
            ambiguity_rate: 0.5,
            detector_noise: 0.05,
            relevance_fidelity: 0.9,
            grid_resolution: 32,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return Err(SynthError::InvalidSpec(format!(
                "object count range {}..={} invalid",
                self.objects_min, self.objects_max
            )));
        }
        if self.colors.is_empty() || self.classes.len() < 2 {
            return Err(SynthError::InvalidSpec(
                "need at least one color and two classes".into(),
            ));
        }
        for (name, v) in [
            ("ambiguity_rate", self.ambiguity_rate),
            ("relevance_fidelity", self.relevance_fidelity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::InvalidSpec(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !self.detector_noise.is_finite() || self.detector_noise < 0.0 {
            return Err(SynthError::InvalidSpec("detector noise must be >= 0".into()));
        }
        if self.grid_resolution == 0 {
            return Err(SynthError::InvalidSpec("grid resolution must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthError {
    InvalidSpec(String),
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidSpec(msg) => write!(f, "invalid scene spec: {msg}"),
        }
    }
}

impl std::error::Error for SynthError {}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    MissingPrediction(String),
    PredictionOutOfRange { id: String, index: usize, candidates: usize },
    MissingGroundTruth(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingPrediction(id) => write!(f, "no prediction for sample {id}"),
            Self::PredictionOutOfRange { id, index, candidates } => {
                write!(f, "sample {id}: index {index} outside {candidates} candidates")
            }
            Self::MissingGroundTruth(id) => write!(f, "sample {id} has no ground truth"),
        }
    }
}

impl std::error::Error for EvalError {}

/// One generated scene: the sample plus its relevance grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub sample: Sample,
    pub grid: RelevanceGrid,
}

const SPATIAL_OPTIONS: [&str; 8] = [
    "left",
    "right",
    "top",
    "bottom",
    "top left",
    "top right",
    "bottom left",
    "bottom right",
];

/// Center band near the named edge (lo) and its opposite (hi).
const BAND_LO: (f64, f64) = (0.15, 0.30);
const BAND_HI: (f64, f64) = (0.70, 0.85);
const BAND_FREE: (f64, f64) = (0.25, 0.75);

fn band_for(direction: &str, axis_x: bool) -> (f64, f64) {
    match (direction, axis_x) {
        ("left", true) | ("top", false) => BAND_LO,
        ("right", true) | ("bottom", false) => BAND_HI,
        _ => BAND_FREE,
    }
}

fn opposite(direction: &str) -> &'static str {
    match direction {
        "left" => "right",
        "right" => "left",
        "top" => "bottom",
        "bottom" => "top",
        "top left" => "bottom right",
        "top right" => "bottom left",
        "bottom left" => "top right",
        "bottom right" => "top left",
        other => unreachable!("unknown direction {other}"),
    }
}

fn bands(direction: &str) -> ((f64, f64), (f64, f64)) {
    let parts: Vec<&str> = direction.split(' ').collect();
    match parts.as_slice() {
        [single] => (band_for(single, true), band_for(single, false)),
        [vertical, horizontal] => (band_for(horizontal, true), band_for(vertical, false)),
        _ => unreachable!("unknown direction {direction}"),
    }
}

fn place_box(rng: &mut SplitMix64, x_band: (f64, f64), y_band: (f64, f64)) -> BoxN {
    let cx = rng.next_range(x_band.0, x_band.1);
    let cy = rng.next_range(y_band.0, y_band.1);
    let hw = rng.next_range(0.06, 0.12);
    let hh = rng.next_range(0.06, 0.12);
    BoxN::new(cx - hw, cy - hh, cx + hw, cy + hh).expect("bands keep boxes inside the image")
}

fn noisy(base: f64, sigma: f64, rng: &mut SplitMix64) -> f64 {
    if sigma == 0.0 {
        // Skip the draw would change the stream; keep call order fixed.
        let _ = rng.next_gaussian();
        base
    } else {
        (base + sigma * rng.next_gaussian()).clamp(0.0, 1.0)
    }
}

fn relevance_bump(center: (f64, f64), radius: f64, resolution: usize) -> RelevanceGrid {
    let mut values = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        let py = (iy as f64 + 0.5) / resolution as f64;
        for ix in 0..resolution {
            let px = (ix as f64 + 0.5) / resolution as f64;
            let d2 = (px - center.0) * (px - center.0) + (py - center.1) * (py - center.1);
            values.push(0.1 + 0.8 * (-d2 / (2.0 * radius * radius)).exp());
        }
    }
    let (grid, clamped) = RelevanceGrid::from_values(resolution, resolution, values)
        .expect("bump values are well-formed");
    debug_assert_eq!(clamped, 0);
    grid
}

struct SceneObject {
    bbox: BoxN,
    score: f64,
    same_class_distractor: bool,
}

/// Generate `n_scenes` scenes. Ambiguous scenes hold two same-class,
/// same-color objects in opposite image regions with symmetric detector
/// scores; the phrase carries the spatial term that tells them apart. The
/// relevance grid peaks on the referred object with the spec's fidelity,
/// otherwise on the distractor.
pub fn generate(spec: &SceneSpec, n_scenes: usize) -> Result<Vec<Scene>, SynthError> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let mut scenes = Vec::with_capacity(n_scenes);
    for idx in 0..n_scenes {
        let ambiguous = rng.next_f64() < spec.ambiguity_rate;
        let class = spec.classes[rng.next_below(spec.classes.len() as u64) as usize].clone();
        let color = spec.colors[rng.next_below(spec.colors.len() as u64) as usize].clone();
        let span = (spec.objects_max - spec.objects_min + 1) as u64;
        let mut count = spec.objects_min + rng.next_below(span) as usize;

        let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
        let phrase_text;
        if ambiguous {
            count = count.max(2);
            let direction = SPATIAL_OPTIONS
                [rng.next_below(SPATIAL_OPTIONS.len() as u64) as usize];
            let (gx, gy) = bands(direction);
            let (dx, dy) = bands(opposite(direction));
            let gt_box = place_box(&mut rng, gx, gy);
            let distractor_box = place_box(&mut rng, dx, dy);
            let gt_score = noisy(0.55, spec.detector_noise, &mut rng);
            let distractor_score = noisy(0.55, spec.detector_noise, &mut rng);
            objects.push(SceneObject {
                bbox: gt_box,
                score: gt_score,
                same_class_distractor: false,
            });
            objects.push(SceneObject {
                bbox: distractor_box,
                score: distractor_score,
                same_class_distractor: true,
            });
            phrase_text = if direction.contains(' ') {
                format!("the {color} {class} at the {direction}")
            } else {
                format!("the {color} {class} on the {direction}")
            };
        } else {
            let gt_box = place_box(&mut rng, BAND_FREE, BAND_FREE);
            let gt_score = noisy(0.8, spec.detector_noise, &mut rng);
            objects.push(SceneObject {
                bbox: gt_box,
                score: gt_score,
                same_class_distractor: false,
            });
            phrase_text = format!("the {color} {class}");
        }

        // Filler objects of other classes, kept clear of the referents.
        while objects.len() < count {
            let mut placed = false;
            for _ in 0..20 {
                let bbox = place_box(&mut rng, (0.15, 0.85), (0.15, 0.85));
                let clear = objects[..objects.len().min(2)]
                    .iter()
                    .all(|o| iou(&o.bbox, &bbox) <= 0.25);
                if clear {
                    let score = noisy(0.3, spec.detector_noise, &mut rng);
                    objects.push(SceneObject { bbox, score, same_class_distractor: false });
                    placed = true;
                    break;
                }
            }
            if !placed {
                break;
            }
        }

        // The referred object is always object 0 before shuffling.
        let gt_box = objects[0].bbox;
        let mut order: Vec<usize> = (0..objects.len()).collect();
        rng.shuffle(&mut order);
        let candidates: Vec<Candidate> = order
            .iter()
            .map(|&i| Candidate { bbox: objects[i].bbox, score: objects[i].score })
            .collect();

        // Relevance bump target: referred object with probability fidelity,
        // otherwise the same-class distractor (or any other object).
        let on_target = rng.next_f64() < spec.relevance_fidelity;
        let bump_obj = if on_target {
            &objects[0]
        } else if let Some(d) = objects.iter().find(|o| o.same_class_distractor) {
            d
        } else if objects.len() > 1 {
            &objects[1]
        } else {
            &objects[0]
        };
        let radius = 0.5 * bump_obj.bbox.width().max(bump_obj.bbox.height());
        let grid = relevance_bump(bump_obj.bbox.center(), radius, spec.grid_resolution);

        scenes.push(Scene {
            sample: Sample {
                id: format!("s{idx:06}"),
                phrase: phrase_text,
                candidates,
                gt: Some(gt_box),
                category: class,
            },
            grid,
        });
    }
    Ok(scenes)
}

/// Per-subset accuracy counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl SubsetReport {
    fn from_counts(n: usize, correct: usize) -> Self {
        let accuracy = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
        Self { n, correct, accuracy }
    }
}

/// Top-1 evaluation report, with the spatial-phrase subset broken out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub spatial: SubsetReport,
    pub non_spatial: SubsetReport,
}

/// Fraction of samples whose selected candidate overlaps the ground truth at
/// IoU >= 0.5. Every sample needs a prediction and a ground truth.
pub fn evaluate(
    samples: &[Sample],
    predictions: &BTreeMap<String, usize>,
) -> Result<EvalReport, EvalError> {
    let mut correct = 0usize;
    let mut spatial = (0usize, 0usize);
    let mut non_spatial = (0usize, 0usize);
    for sample in samples {
        let &index = predictions
            .get(&sample.id)
            .ok_or_else(|| EvalError::MissingPrediction(sample.id.clone()))?;
        let cand = sample.candidates.get(index).ok_or_else(|| {
            EvalError::PredictionOutOfRange {
                id: sample.id.clone(),
                index,
                candidates: sample.candidates.len(),
            }
        })?;
        let gt = sample
            .gt
            .as_ref()
            .ok_or_else(|| EvalError::MissingGroundTruth(sample.id.clone()))?;
        let hit = iou(&cand.bbox, gt) >= 0.5;
        if hit {
            correct += 1;
        }
        let has_spatial = phrase::tokenize(&sample.phrase)
            .map(|p| !phrase::extract_spatial_terms(&p).is_empty())
            .unwrap_or(false);
        let bucket = if has_spatial { &mut spatial } else { &mut non_spatial };
        bucket.0 += 1;
        if hit {
            bucket.1 += 1;
        }
    }
    let n = samples.len();
    Ok(EvalReport {
        n,
        correct,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        spatial: SubsetReport::from_counts(spatial.0, spatial.1),
        non_spatial: SubsetReport::from_counts(non_spatial.0, non_spatial.1),
    })
}

/// Argmax of detector scores alone, ties to the lower index. The baseline
/// the priors are measured against.
pub fn detector_only_prediction(sample: &Sample) -> usize {
    let mut best = 0;
    for (j, cand) in sample.candidates.iter().enumerate().skip(1) {
        if cand.score > sample.candidates[best].score {
            best = j;
        }
    }
    best
}

/// Index of the candidate with maximal IoU against the ground truth; the
/// upper bound any selection strategy can reach.
pub fn oracle_prediction(sample: &Sample) -> Option<usize> {
    let gt = sample.gt.as_ref()?;
    let mut best = 0;
    let mut best_iou = -1.0;
    for (j, cand) in sample.candidates.iter().enumerate() {
        let v = iou(&cand.bbox, gt);
        if v > best_iou {
            best_iou = v;
            best = j;
        }
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{predict, PredictMode};
    use crate::phrase::SpatialVocab;
    use crate::priors::{Decay, PriorBundle};

    fn predictions_by(
        scenes: &[Scene],
        mut chooser: impl FnMut(&Scene) -> usize,
    ) -> BTreeMap<String, usize> {
        scenes
            .iter()
            .map(|s| (s.sample.id.clone(), chooser(s)))
            .collect()
    }

    #[test]
    fn unambiguous_noise_free_scenes_are_solved_by_detector_score() {
        let spec = SceneSpec {
            ambiguity_rate: 0.0,
            detector_noise: 0.0,
            seed: 5,
            ..SceneSpec::default()
        };
        let scenes = generate(&spec, 300).unwrap();
        let preds = predictions_by(&scenes, |s| detector_only_prediction(&s.sample));
        let samples: Vec<Sample> = scenes.iter().map(|s| s.sample.clone()).collect();
        let report = evaluate(&samples, &preds).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.spatial.n, 0);
    }

    #[test]
    fn symmetric_ambiguous_scores_leave_detector_at_chance() {
        let spec = SceneSpec {
            ambiguity_rate: 1.0,
            detector_noise: 0.0,
            objects_min: 2,
            objects_max: 2,
            seed: 6,
            ..SceneSpec::default()
        };
        let scenes = generate(&spec, 1000).unwrap();
        let preds = predictions_by(&scenes, |s| detector_only_prediction(&s.sample));
        let samples: Vec<Sample> = scenes.iter().map(|s| s.sample.clone()).collect();
        let report = evaluate(&samples, &preds).unwrap();
        // Exact score ties break by candidate order, which is shuffled:
        // binomial around one half, three sigma is under five points.
        assert!((report.accuracy - 0.5).abs() < 0.05, "accuracy {}", report.accuracy);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec { seed: 77, ..SceneSpec::default() };
        let a = generate(&spec, 40).unwrap();
        let b = generate(&spec, 40).unwrap();
        assert_eq!(a, b);
        let c = generate(&SceneSpec { seed: 78, ..spec }, 40).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_phrases_parse_to_discriminating_terms() {
        let spec = SceneSpec { ambiguity_rate: 1.0, seed: 9, ..SceneSpec::default() };
        let scenes = generate(&spec, 200).unwrap();
        let vocab = SpatialVocab::default();
        for scene in &scenes {
            let bundle =
                PriorBundle::compute(&scene.sample, None, &vocab, Decay::Linear).unwrap();
            let tokens = crate::phrase::tokenize(&scene.sample.phrase).unwrap();
            let terms = crate::phrase::extract_spatial_terms(&tokens);
            assert!(!terms.is_empty(), "phrase {:?} lost its term", scene.sample.phrase);
            // The spatial prior ranks the referred box above every candidate
            // sharing its detector score.
            let gt = scene.sample.gt.unwrap();
            let gt_idx = scene
                .sample
                .candidates
                .iter()
                .position(|c| c.bbox == gt)
                .expect("ground truth is a candidate");
            for (j, cand) in scene.sample.candidates.iter().enumerate() {
                if j != gt_idx && cand.score == scene.sample.candidates[gt_idx].score {
                    assert!(
                        bundle.h_s[gt_idx] > bundle.h_s[j],
                        "phrase {:?} does not separate the pair",
                        scene.sample.phrase
                    );
                }
            }
        }
    }

    #[test]
    fn evaluate_counts_matches() {
        let spec = SceneSpec { seed: 3, ..SceneSpec::default() };
        let scenes = generate(&spec, 4).unwrap();
        let samples: Vec<Sample> = scenes.iter().map(|s| s.sample.clone()).collect();

        let oracle = predictions_by(&scenes, |s| oracle_prediction(&s.sample).unwrap());
        assert_eq!(evaluate(&samples, &oracle).unwrap().accuracy, 1.0);

        // Deliberately wrong: pick the lowest-IoU candidate.
        let wrong = predictions_by(&scenes, |s| {
            let gt = s.sample.gt.unwrap();
            (0..s.sample.candidates.len())
                .min_by(|&a, &b| {
                    iou(&s.sample.candidates[a].bbox, &gt)
                        .partial_cmp(&iou(&s.sample.candidates[b].bbox, &gt))
                        .unwrap()
                })
                .unwrap()
        });
        assert_eq!(evaluate(&samples, &wrong).unwrap().accuracy, 0.0);

        // Three of four right.
        let mut mixed = oracle.clone();
        let flip_id = samples[0].id.clone();
        mixed.insert(flip_id, wrong[&samples[0].id]);
        assert_eq!(evaluate(&samples, &mixed).unwrap().accuracy, 0.75);
    }

    #[test]
    fn evaluate_requires_complete_predictions() {
        let spec = SceneSpec { seed: 3, ..SceneSpec::default() };
        let scenes = generate(&spec, 2).unwrap();
        let samples: Vec<Sample> = scenes.iter().map(|s| s.sample.clone()).collect();
        let mut preds = predictions_by(&scenes, |_| 0);
        preds.remove(&samples[1].id);
        assert_eq!(
            evaluate(&samples, &preds),
            Err(EvalError::MissingPrediction(samples[1].id.clone()))
        );
        let mut bad = predictions_by(&scenes, |_| 0);
        bad.insert(samples[0].id.clone(), 99);
        assert!(matches!(
            evaluate(&samples, &bad),
            Err(EvalError::PredictionOutOfRange { .. })
        ));
    }

    #[test]
    fn oracle_bounds_every_strategy() {
        let spec = SceneSpec { ambiguity_rate: 1.0, seed: 15, ..SceneSpec::default() };
        let scenes = generate(&spec, 300).unwrap();
        let samples: Vec<Sample> = scenes.iter().map(|s| s.sample.clone()).collect();
        let vocab = SpatialVocab::default();

        let oracle = predictions_by(&scenes, |s| oracle_prediction(&s.sample).unwrap());
        let detector = predictions_by(&scenes, |s| detector_only_prediction(&s.sample));
        let zeroshot = predictions_by(&scenes, |s| {
            let bundle =
                PriorBundle::compute(&s.sample, Some(&s.grid), &vocab, Decay::Linear).unwrap();
            predict(&bundle, &PredictMode::ZeroShot).unwrap()
        });

        let acc_oracle = evaluate(&samples, &oracle).unwrap().accuracy;
        let acc_detector = evaluate(&samples, &detector).unwrap().accuracy;
        let acc_zeroshot = evaluate(&samples, &zeroshot).unwrap().accuracy;
        assert!(acc_oracle >= acc_detector);
        assert!(acc_oracle >= acc_zeroshot);
        // The construction makes priors genuinely informative here.
        assert!(acc_zeroshot > acc_detector);
    }

    #[test]
    fn spec_validation_rejects_nonsense() {
        let bad = SceneSpec { ambiguity_rate: 1.5, ..SceneSpec::default() };
        assert!(bad.validate().is_err());
        let bad = SceneSpec { objects_min: 0, ..SceneSpec::default() };
        assert!(bad.validate().is_err());
        let bad = SceneSpec { classes: vec!["mug".into()], ..SceneSpec::default() };
        assert!(bad.validate().is_err());
        let bad = SceneSpec { grid_resolution: 0, ..SceneSpec::default() };
        assert!(bad.validate().is_err());
    }
}
