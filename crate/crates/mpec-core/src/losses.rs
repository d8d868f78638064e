//! The two contrastive objectives and their combination.
//!
//! Point-to-entity: each point is pulled toward its own entity's pooled
//! similarity column and away from other entities and sampled background
//! points, symmetrically across the two views. Entity-to-language: texts are
//! classified over entity columns with a temperature softmax, and entities
//! are matched against all sampled texts with a binary cross-entropy on raw
//! similarities (several texts may describe one entity).
//!
//! Entity columns pool per-point cosines (not features); the feature-mean
//! variant is available behind `pool_features` for the oracle suite.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, NORM_EPS};
use crate::error::{Error, Result};
use crate::pipeline::{View, ViewPair};
use crate::rng::rng_from_seed;
use crate::scene::BACKGROUND;
use crate::text::TextEmbeddingSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Softmax temperature for the cross-entropy terms.
    pub tau: f64,
    /// Weight of the text-to-entity cross-entropy.
    pub alpha: f64,
    /// Weight of the entity-to-text BCE.
    pub beta: f64,
    /// Cap on sampled background columns per view per step.
    pub bg_cap: usize,
    /// Pool entity features before the cosine instead of pooling cosines.
    pub pool_features: bool,
    /// Scale BCE logits by 1/tau (off: raw similarities, as printed).
    pub bce_temperature_scaled: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            tau: 0.07,
            alpha: 1.0,
            beta: 6.0,
            bg_cap: 256,
            pool_features: false,
            bce_temperature_scaled: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Validation(format!(
                "loss.tau must be positive, got {}",
                self.tau
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Validation(
                "loss.alpha and loss.beta must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Sorted background rows of a view used as similarity columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BgSample {
    pub rows: Vec<usize>,
}

/// Draw at most `cap` background rows of a view, seeded, sorted ascending.
pub fn sample_background(view: &View, cap: usize, seed: u64) -> BgSample {
    let bg: Vec<usize> = (0..view.len())
        .filter(|&i| view.entity_mask[i] == BACKGROUND)
        .collect();
    let rows = if bg.len() <= cap {
        bg
    } else {
        let mut rng = rng_from_seed(seed);
        let mut picked: Vec<usize> = index::sample(&mut rng, bg.len(), cap)
            .into_iter()
            .map(|i| bg[i])
            .collect();
        picked.sort_unstable();
        picked
    };
    BgSample { rows }
}

/// Similarity columns of one direction: entity-pooled columns (ascending
/// entity id) then per-point background columns.
pub struct SimilarityBlock {
    /// n_src x (K' + L') similarity matrix on the tape.
    pub sims: Var,
    /// Entity id per entity column.
    pub entity_cols: Vec<u32>,
    /// Target-view row per background column (sorted).
    pub bg_cols: Vec<usize>,
}

impl SimilarityBlock {
    pub fn num_cols(&self) -> usize {
        self.entity_cols.len() + self.bg_cols.len()
    }

    fn entity_col(&self, entity: u32) -> Option<usize> {
        self.entity_cols.binary_search(&entity).ok()
    }

    fn bg_col(&self, row: usize) -> Option<usize> {
        self.bg_cols
            .binary_search(&row)
            .ok()
            .map(|p| self.entity_cols.len() + p)
    }
}

/// Entity rows (ascending) of a label vector together with dense segment ids.
fn entity_segments(labels: &[u32]) -> (Vec<u32>, Vec<usize>, Vec<usize>) {
    let mut ids: Vec<u32> = labels.iter().copied().filter(|&l| l != BACKGROUND).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rows = Vec::new();
    let mut segments = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != BACKGROUND {
            rows.push(i);
            segments.push(ids.binary_search(&l).unwrap());
        }
    }
    (ids, rows, segments)
}

/// Entity-pooled columns of a transposed similarity matrix `t` (n_tgt x
/// n_src): gather entity rows, segment-mean per entity, transpose back.
fn pooled_entity_cols(
    tape: &mut Tape,
    t: Var,
    rows: &[usize],
    segments: &[usize],
    num_entities: usize,
) -> Result<Var> {
    let gathered = tape.gather_rows(t, rows)?;
    let (pooled, empty) = tape.segment_mean(gathered, segments, num_entities)?;
    debug_assert!(empty.is_empty(), "present entities cannot pool empty");
    Ok(tape.transpose(pooled)?)
}

/// Build the entity-aware similarity block from source features to a target
/// view's features: cosine similarities pooled per entity (or cosine to the
/// pooled feature under `pool_features`), then per-point background columns.
pub fn point_entity_similarities(
    tape: &mut Tape,
    f_src: Var,
    f_tgt: Var,
    labels_tgt: &[u32],
    bg: &BgSample,
    weights: &LossWeights,
) -> Result<SimilarityBlock> {
    let (entity_ids, rows, segments) = entity_segments(labels_tgt);
    let src_n = tape.l2_normalize_rows(f_src, NORM_EPS)?;
    let tgt_n = tape.l2_normalize_rows(f_tgt, NORM_EPS)?;
    let tgt_t = tape.transpose(tgt_n)?;
    let all = tape.matmul(src_n, tgt_t)?; // n_src x n_tgt cosines
    let all_t = tape.transpose(all)?;

    let entity_cols_var = if weights.pool_features {
        // Mean raw feature per entity, then cosine against it.
        let gathered = tape.gather_rows(f_tgt, &rows)?;
        let (pooled, empty) = tape.segment_mean(gathered, &segments, entity_ids.len())?;
        debug_assert!(empty.is_empty());
        let pooled_n = tape.l2_normalize_rows(pooled, NORM_EPS)?;
        let pooled_t = tape.transpose(pooled_n)?;
        tape.matmul(src_n, pooled_t)?
    } else {
        pooled_entity_cols(tape, all_t, &rows, &segments, entity_ids.len())?
    };

    let bg_rows = tape.gather_rows(all_t, &bg.rows)?;
    let bg_cols_var = tape.transpose(bg_rows)?;

    let sims = tape.concat_cols(entity_cols_var, bg_cols_var)?;
    Ok(SimilarityBlock {
        sims,
        entity_cols: entity_ids,
        bg_cols: bg.rows.clone(),
    })
}

/// Exclusion accounting for one p2e direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DirectionDiag {
    pub included: usize,
    /// Entity points whose entity is absent from the target view.
    pub excluded_entity_points: usize,
    /// Background points without a matched, sampled target column.
    pub excluded_bg_points: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct P2eDiag {
    pub u_to_v: DirectionDiag,
    pub v_to_u: DirectionDiag,
}

pub struct P2eOutcome {
    pub loss: Var,
    pub diag: P2eDiag,
}

fn direction_loss(
    tape: &mut Tape,
    f_src: Var,
    labels_src: &[u32],
    f_tgt: Var,
    labels_tgt: &[u32],
    src_to_tgt: &[Option<usize>],
    bg_tgt: &BgSample,
    weights: &LossWeights,
) -> Result<(Var, DirectionDiag)> {
    let block = point_entity_similarities(tape, f_src, f_tgt, labels_tgt, bg_tgt, weights)?;
    let mut included = Vec::new();
    let mut targets = Vec::new();
    let mut diag = DirectionDiag::default();
    for (i, &label) in labels_src.iter().enumerate() {
        let col = if label != BACKGROUND {
            let col = block.entity_col(label);
            if col.is_none() {
                diag.excluded_entity_points += 1;
            }
            col
        } else {
            let col = src_to_tgt[i].and_then(|j| block.bg_col(j));
            if col.is_none() {
                diag.excluded_bg_points += 1;
            }
            col
        };
        if let Some(col) = col {
            included.push(i);
            targets.push(col);
        }
    }
    if included.is_empty() {
        return Err(Error::Validation(
            "degenerate pair: no includable points in a contrast direction".into(),
        ));
    }
    diag.included = included.len();
    let selected = tape.gather_rows(block.sims, &included)?;
    let logits = tape.scale(selected, 1.0 / weights.tau)?;
    let loss = tape.cross_entropy_from_logits(logits, &targets)?;
    Ok((loss, diag))
}

/// Symmetric point-to-entity contrastive loss: half the sum of the two
/// direction means. Each view's background sample is attached to that view,
/// so swapping the views leaves the value unchanged.
pub fn p2e_loss(
    tape: &mut Tape,
    pair: &ViewPair,
    f_u: Var,
    f_v: Var,
    bg_u: &BgSample,
    bg_v: &BgSample,
    weights: &LossWeights,
) -> Result<P2eOutcome> {
    weights.validate()?;
    let mut u_to_v = vec![None; pair.u.len()];
    let mut v_to_u = vec![None; pair.v.len()];
    for &(i, j) in &pair.correspondence {
        u_to_v[i] = Some(j);
        v_to_u[j] = Some(i);
    }
    let (loss_uv, diag_uv) = direction_loss(
        tape,
        f_u,
        &pair.u.entity_mask,
        f_v,
        &pair.v.entity_mask,
        &u_to_v,
        bg_v,
        weights,
    )?;
    let (loss_vu, diag_vu) = direction_loss(
        tape,
        f_v,
        &pair.v.entity_mask,
        f_u,
        &pair.u.entity_mask,
        &v_to_u,
        bg_u,
        weights,
    )?;
    let sum = tape.add(loss_uv, loss_vu)?;
    let loss = tape.scale(sum, 0.5)?;
    Ok(P2eOutcome {
        loss,
        diag: P2eDiag {
            u_to_v: diag_uv,
            v_to_u: diag_vu,
        },
    })
}

/// Text/entity similarity matrices over entities with at least one point.
pub struct TextEntityBlock {
    /// N_T x K' text-to-entity similarities.
    pub t2e: Var,
    /// K' x N_T entity-to-text similarities (the transpose).
    pub e2t: Var,
    /// Entity id per column (ascending).
    pub entity_cols: Vec<u32>,
}

/// Pooled cosine similarities between frozen text embeddings and adapted
/// point features, grouped by entity.
pub fn text_entity_similarities(
    tape: &mut Tape,
    f_t: Var,
    f_vl: Var,
    labels: &[u32],
    weights: &LossWeights,
) -> Result<TextEntityBlock> {
    let (entity_ids, rows, segments) = entity_segments(labels);
    if entity_ids.is_empty() {
        return Err(Error::Validation(
            "no entity points available for text-entity similarities".into(),
        ));
    }
    let ft_n = tape.l2_normalize_rows(f_t, NORM_EPS)?;
    let fvl_n = tape.l2_normalize_rows(f_vl, NORM_EPS)?;
    let e2t = if weights.pool_features {
        let gathered = tape.gather_rows(f_vl, &rows)?;
        let (pooled, empty) = tape.segment_mean(gathered, &segments, entity_ids.len())?;
        debug_assert!(empty.is_empty());
        let pooled_n = tape.l2_normalize_rows(pooled, NORM_EPS)?;
        let ft_t = tape.transpose(ft_n)?;
        tape.matmul(pooled_n, ft_t)? // K' x N_T
    } else {
        let fvl_t = tape.transpose(fvl_n)?;
        let sims = tape.matmul(ft_n, fvl_t)?; // N_T x n
        let sims_t = tape.transpose(sims)?; // n x N_T
        let gathered = tape.gather_rows(sims_t, &rows)?;
        let (pooled, empty) = tape.segment_mean(gathered, &segments, entity_ids.len())?;
        debug_assert!(empty.is_empty());
        pooled
    };
    let t2e = tape.transpose(e2t)?;
    Ok(TextEntityBlock {
        t2e,
        e2t,
        entity_cols: entity_ids,
    })
}

/// Text-to-entity cross-entropy: mean over texts of -log softmax(s/tau) at
/// the text's target entity column.
pub fn t2e_loss(
    tape: &mut Tape,
    block: &TextEntityBlock,
    text_targets: &[u32],
    tau: f64,
) -> Result<Var> {
    let mut targets = Vec::with_capacity(text_targets.len());
    for &entity in text_targets {
        let col = block
            .entity_cols
            .binary_search(&entity)
            .map_err(|_| {
                Error::Validation(format!(
                    "text targets entity {} which has no similarity column",
                    entity
                ))
            })?;
        targets.push(col);
    }
    let logits = tape.scale(block.t2e, 1.0 / tau)?;
    tape.cross_entropy_from_logits(logits, &targets)
        .map_err(Error::from)
}

/// Entity-to-text BCE: per entity, mean over all sampled texts of the stable
/// BCE between the raw similarity and the describes-indicator; mean over
/// entities with at least one positive text. Returns the loss and the count
/// of skipped (no-positive) entities.
pub fn e2t_bce_loss(
    tape: &mut Tape,
    block: &TextEntityBlock,
    texts: &TextEmbeddingSet,
    weights: &LossWeights,
) -> Result<(Var, usize)> {
    let n_t = texts.len();
    let mut kept_rows = Vec::new();
    let mut labels = Vec::new();
    for (row, &entity) in block.entity_cols.iter().enumerate() {
        let row_labels: Vec<f64> = texts
            .texts
            .iter()
            .map(|t| if t.describes(entity) { 1.0 } else { 0.0 })
            .collect();
        if row_labels.iter().any(|&l| l == 1.0) {
            kept_rows.push(row);
            labels.extend(row_labels);
        }
    }
    let skipped = block.entity_cols.len() - kept_rows.len();
    if kept_rows.is_empty() {
        return Err(Error::Validation(
            "every entity lacks a positive text; entity-to-text BCE undefined".into(),
        ));
    }
    let mut logits = tape.gather_rows(block.e2t, &kept_rows)?;
    if weights.bce_temperature_scaled {
        logits = tape.scale(logits, 1.0 / weights.tau)?;
    }
    debug_assert_eq!(labels.len(), kept_rows.len() * n_t);
    let loss = tape.binary_cross_entropy_from_logits(logits, &labels)?;
    Ok((loss, skipped))
}

/// Weighted entity-to-language combination: alpha * t2e + beta * e2t.
pub fn e2l_loss(tape: &mut Tape, t2e: Var, e2t: Var, alpha: f64, beta: f64) -> Result<Var> {
    let a = tape.scale(t2e, alpha)?;
    let b = tape.scale(e2t, beta)?;
    tape.add(a, b).map_err(Error::from)
}

/// Unweighted sum of the enabled objectives.
pub fn overall_loss(tape: &mut Tape, p2e: Option<Var>, e2l: Option<Var>) -> Result<Var> {
    match (p2e, e2l) {
        (Some(a), Some(b)) => tape.add(a, b).map_err(Error::from),
        (Some(a), None) => Ok(a),
        (None, Some(b)) => Ok(b),
        (None, None) => Err(Error::Validation(
            "at least one loss term must be enabled".into(),
        )),
    }
}
