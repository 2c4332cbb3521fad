//! Curriculum learning and confusion-driven class selection.
//!
//! Easiness of a sample is the evaluation-mode softmax probability of its
//! own label after a short pre-training run (a tenth of the epochs, rounded
//! up). Training then walks through the samples from easiest to hardest
//! with a step pacing whose later steps last longer.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{build_model, ModelConfig, StGcn};
use crate::sequence::Dataset;
use crate::train::{fit, fit_subsets, true_class_probabilities, History, TrainConfig};

/// Geometric growth of step durations.
pub const DEFAULT_PACING_RATIO: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacingStep {
    pub start_epoch: usize,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub scores: Vec<f64>,
    /// Sample indices from easiest to hardest (ties: lower index first).
    pub order: Vec<usize>,
    pub pacing: Vec<PacingStep>,
}

impl Curriculum {
    pub fn new(scores: Vec<f64>, pacing: Vec<PacingStep>) -> Result<Self> {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let c = Curriculum { scores, order, pacing };
        c.validate()?;
        Ok(c)
    }

    /// Every sample from the first epoch on: plain training.
    pub fn trivial(num_samples: usize) -> Self {
        Curriculum {
            scores: vec![1.0; num_samples],
            order: (0..num_samples).collect(),
            pacing: vec![PacingStep {
                start_epoch: 0,
                sample_count: num_samples,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.scores.len();
        if self.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid("curriculum scores must lie in [0, 1]"));
        }
        let mut seen = vec![false; n];
        for &i in &self.order {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid("curriculum order is not a permutation of the samples"));
            }
        }
        if self.order.len() != n {
            return Err(Error::invalid("curriculum order does not cover every sample"));
        }
        let first = self.pacing.first().ok_or_else(|| Error::invalid("pacing is empty"))?;
        if first.start_epoch != 0 {
            return Err(Error::invalid("pacing must start at epoch 0"));
        }
        for w in self.pacing.windows(2) {
            if w[1].start_epoch <= w[0].start_epoch || w[1].sample_count < w[0].sample_count {
                return Err(Error::invalid(
                    "pacing start epochs must increase and sample counts must not decrease",
                ));
            }
        }
        if self.pacing.last().map(|s| s.sample_count) != Some(n) {
            return Err(Error::invalid("the last pacing step must cover every sample"));
        }
        Ok(())
    }

    /// Samples exposed during `epoch`.
    pub fn count_at(&self, epoch: usize) -> usize {
        pacing_count(&self.pacing, epoch)
    }

    /// The first `count_at(epoch)` samples of the easiness order.
    pub fn subset_at(&self, epoch: usize) -> Vec<usize> {
        self.order[..self.count_at(epoch).min(self.order.len())].to_vec()
    }
}

pub fn pacing_count(pacing: &[PacingStep], epoch: usize) -> usize {
    pacing
        .iter()
        .take_while(|s| s.start_epoch <= epoch)
        .last()
        .map_or(0, |s| s.sample_count)
}

/// Epochs per step: proportional to `ratio^s`, rounded, at least one each,
/// summing to `total_epochs`.
pub fn step_durations(num_steps: usize, total_epochs: usize, ratio: f64) -> Result<Vec<usize>> {
    if num_steps == 0 {
        return Err(Error::invalid("pacing needs at least one step"));
    }
    if total_epochs < num_steps {
        return Err(Error::invalid(format!(
            "{total_epochs} epochs cannot hold {num_steps} pacing steps"
        )));
    }
    if !(ratio >= 1.0) {
        return Err(Error::invalid("pacing ratio must be at least 1"));
    }
    let weights: Vec<f64> = (0..num_steps).map(|s| ratio.powi(s as i32)).collect();
    let total_w: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| total_epochs as f64 * w / total_w).collect();
    let mut d: Vec<usize> = ideal.iter().map(|a| (a.round() as usize).max(1)).collect();
    let mut sum: usize = d.iter().sum();
    while sum > total_epochs {
        // Shrink the step that overshoots most; later steps on ties.
        let i = (0..num_steps)
            .filter(|&i| d[i] > 1)
            .max_by(|&a, &b| (d[a] as f64 - ideal[a]).total_cmp(&(d[b] as f64 - ideal[b])).then(a.cmp(&b)))
            .unwrap_or(num_steps - 1);
        d[i] -= 1;
        sum -= 1;
    }
    while sum < total_epochs {
        let i = (0..num_steps)
            .max_by(|&a, &b| (ideal[a] - d[a] as f64).total_cmp(&(ideal[b] - d[b] as f64)).then(a.cmp(&b)))
            .unwrap_or(num_steps - 1);
        d[i] += 1;
        sum += 1;
    }
    Ok(d)
}

/// Step `s` exposes `⌈N(s+1)/steps⌉` samples for a geometrically growing
/// number of epochs.
pub fn make_pacing_with_ratio(
    num_samples: usize,
    num_steps: usize,
    total_epochs: usize,
    ratio: f64,
) -> Result<Vec<PacingStep>> {
    let durations = step_durations(num_steps, total_epochs, ratio)?;
    let mut start = 0;
    Ok(durations
        .iter()
        .enumerate()
        .map(|(s, &d)| {
            let step = PacingStep {
                start_epoch: start,
                sample_count: (num_samples * (s + 1)).div_ceil(num_steps),
            };
            start += d;
            step
        })
        .collect())
}

pub fn make_pacing(num_samples: usize, num_steps: usize, total_epochs: usize) -> Result<Vec<PacingStep>> {
    make_pacing_with_ratio(num_samples, num_steps, total_epochs, DEFAULT_PACING_RATIO)
}

fn content_key(data: &Dataset, i: usize) -> [u8; 32] {
    let s = &data.samples[i];
    let mut h = Sha256::new();
    h.update((s.label as u64).to_le_bytes());
    h.update((s.frames() as u64).to_le_bytes());
    for x in s.coords() {
        h.update(x.to_le_bytes());
    }
    h.finalize().into()
}

/// Epochs of the scoring run: a tenth of `epochs`, rounded up.
pub fn scoring_epochs(epochs: usize) -> usize {
    epochs.div_ceil(10).max(1)
}

/// Trains a fresh model (seed `train_config.seed`) for
/// [`scoring_epochs`] epochs and returns each sample's true-class
/// probability. Samples are put in a content-hash order first, so the
/// scores do not depend on how the dataset is ordered.
pub fn score_samples(config: &ModelConfig, train: &Dataset, train_config: &TrainConfig) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::Empty("cannot score an empty training set".into()));
    }
    let mut canonical: Vec<usize> = (0..train.len()).collect();
    let keys: Vec<[u8; 32]> = (0..train.len()).map(|i| content_key(train, i)).collect();
    canonical.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));
    let ordered = train.subset(&canonical);
    let mut short = train_config.clone();
    short.epochs = scoring_epochs(train_config.epochs);
    let mut model = build_model(config, train_config.seed)?;
    fit(&mut model, &ordered, &ordered.subset(&[]), &short)?;
    let probs = true_class_probabilities(&model, &ordered)?;
    let mut scores = vec![0.0; train.len()];
    for (pos, &i) in canonical.iter().enumerate() {
        scores[i] = probs[pos].clamp(0.0, 1.0);
    }
    Ok(scores)
}

/// Like [`crate::train::fit`], but epoch `e` only trains on
/// `curriculum.subset_at(e)`.
pub fn curriculum_fit(
    model: &mut StGcn,
    train: &Dataset,
    val: &Dataset,
    curriculum: &Curriculum,
    config: &TrainConfig,
) -> Result<History> {
    curriculum.validate()?;
    if curriculum.scores.len() != train.len() {
        return Err(Error::invalid(format!(
            "curriculum covers {} samples, training set has {}",
            curriculum.scores.len(),
            train.len()
        )));
    }
    fit_subsets(model, train, val, config, |epoch| curriculum.subset_at(epoch))
}

/// Per-class accuracy (diagonal over row sum; 0 for empty rows).
pub fn per_class_accuracy(confusion: &[Vec<f64>]) -> Vec<f64> {
    confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.get(i).copied().unwrap_or(0.0) / total
            } else {
                0.0
            }
        })
        .collect()
}

/// Picks the `target_count` best-recognised classes. From every exclusion
/// pair only the better-ranked class stays eligible. Result is in rank
/// order; ties go to the lower index.
pub fn select_classes(confusion: &[Vec<f64>], target_count: usize, exclusion_pairs: &[(usize, usize)]) -> Result<Vec<usize>> {
    let k = confusion.len();
    if confusion.iter().any(|r| r.len() != k) {
        return Err(Error::shape("confusion matrix must be square"));
    }
    if target_count > k {
        return Err(Error::invalid(format!("cannot pick {target_count} of {k} classes")));
    }
    let acc = per_class_accuracy(confusion);
    let mut ranking: Vec<usize> = (0..k).collect();
    ranking.sort_by(|&a, &b| acc[b].total_cmp(&acc[a]).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (r, &c) in ranking.iter().enumerate() {
        rank[c] = r;
    }
    let mut eligible = vec![true; k];
    for &(a, b) in exclusion_pairs {
        if a >= k || b >= k {
            return Err(Error::invalid(format!("exclusion pair ({a}, {b}) outside {k} classes")));
        }
        if a != b {
            eligible[if rank[a] < rank[b] { b } else { a }] = false;
        }
    }
    let chosen: Vec<usize> = ranking.into_iter().filter(|&c| eligible[c]).take(target_count).collect();
    if chosen.len() < target_count {
        return Err(Error::invalid(format!(
            "only {} classes are eligible, {target_count} requested",
            chosen.len()
        )));
    }
    Ok(chosen)
}

/// `sample_id,score` rows in dataset order.
pub fn scores_csv(curriculum: &Curriculum) -> String {
    let mut out = String::from("sample_id,score\n");
    for (i, s) in curriculum.scores.iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    out
}

#[derive(Serialize, Deserialize)]
struct PacingFile {
    steps: Vec<PacingStep>,
}

pub fn pacing_json(curriculum: &Curriculum) -> Result<String> {
    Ok(serde_json::to_string_pretty(&PacingFile {
        steps: curriculum.pacing.clone(),
    })?)
}

/// Reads a curriculum written by [`scores_csv`] and [`pacing_json`].
pub fn load_curriculum(scores_path: &Path, pacing_path: &Path) -> Result<Curriculum> {
    let text = std::fs::read_to_string(scores_path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "sample_id,score" => {}
        _ => {
            return Err(Error::Parse {
                path: scores_path.to_path_buf(),
                line: 1,
                message: "expected header `sample_id,score`".into(),
            })
        }
    }
    let mut scores = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: &str| Error::Parse {
            path: scores_path.to_path_buf(),
            line: i + 1,
            message: msg.to_string(),
        };
        let (id, score) = line.split_once(',').ok_or_else(|| parse("expected two fields"))?;
        let id: usize = id.trim().parse().map_err(|_| parse("sample_id is not an integer"))?;
        if id != scores.len() {
            return Err(parse("sample ids must be listed in order"));
        }
        scores.push(score.trim().parse::<f64>().map_err(|_| parse("score is not a number"))?);
    }
    let pacing: PacingFile = serde_json::from_str(&std::fs::read_to_string(pacing_path)?)?;
    Curriculum::new(scores, pacing.steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pacing_counts_and_durations() {
        let p = make_pacing(100, 4, 30).unwrap();
        let counts: Vec<usize> = p.iter().map(|s| s.sample_count).collect();
        assert_eq!(counts, vec![25, 50, 75, 100]);
        let d = step_durations(4, 30, 1.5).unwrap();
        assert_eq!(d, vec![4, 6, 8, 12]);
        let starts: Vec<usize> = p.iter().map(|s| s.start_epoch).collect();
        assert_eq!(starts, vec![0, 4, 10, 18]);
        assert!(make_pacing(10, 5, 4).is_err());
        assert_eq!(
            make_pacing(7, 1, 9).unwrap(),
            vec![PacingStep {
                start_epoch: 0,
                sample_count: 7
            }]
        );
    }

    #[test]
    fn identity_confusion_keeps_order() {
        let eye: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| (i == j) as u8 as f64).collect()).collect();
        assert_eq!(select_classes(&eye, 4, &[]).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn zero_diagonal_ranks_last() {
        let m = vec![vec![0.0, 5.0], vec![1.0, 4.0]];
        assert_eq!(select_classes(&m, 1, &[]).unwrap(), vec![1]);
        assert!(select_classes(&m, 2, &[(0, 1)]).is_err());
    }

    #[test]
    fn curriculum_rejects_bad_pacing() {
        let bad = vec![PacingStep {
            start_epoch: 0,
            sample_count: 2,
        }];
        assert!(Curriculum::new(vec![0.5, 0.2, 0.9], bad).is_err());
        let c = Curriculum::new(vec![0.5, 0.2, 0.9], make_pacing(3, 3, 6).unwrap()).unwrap();
        assert_eq!(c.order, vec![2, 0, 1]);
        assert_eq!(c.subset_at(0), vec![2]);
    }
}
