//! Brute-force reference implementations of the contrastive losses and the
//! neighbor search, written as plain scalar loops with sequential summation.
//!
//! These functions share no code with the optimized training paths; they are
//! the ground truth that the vectorized implementations are tested against.

const EPS: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity with the same small-norm guard as the training path.
fn d_cos(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a).max(EPS);
    let nb = norm(b).max(EPS);
    dot(a, b) / (na * nb)
}

/// Stable binary cross-entropy for a single logit.
pub fn bce_scalar(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// Ascending entity ids (label > 0) present in a label vector.
fn present_entities(labels: &[u32]) -> Vec<u32> {
    let mut ids: Vec<u32> = labels.iter().copied().filter(|&l| l > 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// A small frozen point-to-entity instance: per-view features, labels
/// (0 = background), the cross-view correspondence, and the sampled
/// background columns per view.
#[derive(Debug, Clone)]
pub struct P2eInstance {
    pub f_u: Vec<Vec<f64>>,
    pub f_v: Vec<Vec<f64>>,
    pub labels_u: Vec<u32>,
    pub labels_v: Vec<u32>,
    /// Pairs (i, j): row i of u and row j of v are the same original point.
    pub correspondence: Vec<(usize, usize)>,
    /// Sorted background rows of u used as columns in the v->u direction.
    pub bg_sample_u: Vec<usize>,
    /// Sorted background rows of v used as columns in the u->v direction.
    pub bg_sample_v: Vec<usize>,
    /// Pool entity features before the cosine instead of pooling cosines.
    pub pool_features: bool,
}

/// One direction of the point-to-entity loss; `None` when no source point
/// has a valid target column.
pub fn naive_p2e_direction(
    f_src: &[Vec<f64>],
    labels_src: &[u32],
    f_tgt: &[Vec<f64>],
    labels_tgt: &[u32],
    src_to_tgt: &[Option<usize>],
    bg_sample_tgt: &[usize],
    pool_features: bool,
    tau: f64,
) -> Option<f64> {
    let entities = present_entities(labels_tgt);
    let n_cols = entities.len() + bg_sample_tgt.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, src) in f_src.iter().enumerate() {
        // Target column for this source point, if any.
        let target = if labels_src[i] > 0 {
            entities.iter().position(|&e| e == labels_src[i])
        } else {
            match src_to_tgt[i] {
                Some(j) => bg_sample_tgt
                    .iter()
                    .position(|&b| b == j)
                    .map(|p| entities.len() + p),
                None => None,
            }
        };
        let Some(target) = target else { continue };

        // Column similarities in order: entities ascending, then bg samples.
        let mut sims = Vec::with_capacity(n_cols);
        for &e in &entities {
            if pool_features {
                let mut pooled = vec![0.0; f_tgt[0].len()];
                let mut m = 0usize;
                for (j, tgt) in f_tgt.iter().enumerate() {
                    if labels_tgt[j] == e {
                        for (p, t) in pooled.iter_mut().zip(tgt) {
                            *p += t;
                        }
                        m += 1;
                    }
                }
                for p in pooled.iter_mut() {
                    *p /= m as f64;
                }
                sims.push(d_cos(src, &pooled));
            } else {
                let mut acc = 0.0;
                let mut m = 0usize;
                for (j, tgt) in f_tgt.iter().enumerate() {
                    if labels_tgt[j] == e {
                        acc += d_cos(src, tgt);
                        m += 1;
                    }
                }
                sims.push(acc / m as f64);
            }
        }
        for &b in bg_sample_tgt {
            sims.push(d_cos(src, &f_tgt[b]));
        }

        // -log softmax(sims / tau)[target], direct summation.
        let mut denom = 0.0;
        for &s in &sims {
            denom += (s / tau).exp();
        }
        total += -((sims[target] / tau).exp() / denom).ln();
        count += 1;
    }
    if count == 0 {
        None
    } else {
        Some(total / count as f64)
    }
}

/// The symmetric point-to-entity loss: half the sum of both direction means.
pub fn naive_p2e(inst: &P2eInstance, tau: f64) -> Option<f64> {
    let mut u_to_v = vec![None; inst.f_u.len()];
    let mut v_to_u = vec![None; inst.f_v.len()];
    for &(i, j) in &inst.correspondence {
        u_to_v[i] = Some(j);
        v_to_u[j] = Some(i);
    }
    let uv = naive_p2e_direction(
        &inst.f_u,
        &inst.labels_u,
        &inst.f_v,
        &inst.labels_v,
        &u_to_v,
        &inst.bg_sample_v,
        inst.pool_features,
        tau,
    )?;
    let vu = naive_p2e_direction(
        &inst.f_v,
        &inst.labels_v,
        &inst.f_u,
        &inst.labels_u,
        &v_to_u,
        &inst.bg_sample_u,
        inst.pool_features,
        tau,
    )?;
    Some(0.5 * (uv + vu))
}

/// A small frozen entity-to-language instance.
#[derive(Debug, Clone)]
pub struct E2lInstance {
    /// Text embeddings (frozen).
    pub f_t: Vec<Vec<f64>>,
    /// Target entity id per text.
    pub text_targets: Vec<u32>,
    /// Adapted per-point features.
    pub f_vl: Vec<Vec<f64>>,
    /// Entity label per point (0 = background).
    pub labels: Vec<u32>,
    pub pool_features: bool,
}

fn text_entity_matrix(inst: &E2lInstance) -> (Vec<u32>, Vec<Vec<f64>>) {
    let entities = present_entities(&inst.labels);
    let mut sims = vec![vec![0.0; entities.len()]; inst.f_t.len()];
    for (i, text) in inst.f_t.iter().enumerate() {
        for (c, &e) in entities.iter().enumerate() {
            if inst.pool_features {
                let mut pooled = vec![0.0; inst.f_vl[0].len()];
                let mut m = 0usize;
                for (j, f) in inst.f_vl.iter().enumerate() {
                    if inst.labels[j] == e {
                        for (p, v) in pooled.iter_mut().zip(f) {
                            *p += v;
                        }
                        m += 1;
                    }
                }
                for p in pooled.iter_mut() {
                    *p /= m as f64;
                }
                sims[i][c] = d_cos(text, &pooled);
            } else {
                let mut acc = 0.0;
                let mut m = 0usize;
                for (j, f) in inst.f_vl.iter().enumerate() {
                    if inst.labels[j] == e {
                        acc += d_cos(text, f);
                        m += 1;
                    }
                }
                sims[i][c] = acc / m as f64;
            }
        }
    }
    (entities, sims)
}

/// Text-to-entity cross-entropy; `None` when a text's target entity has no
/// points.
pub fn naive_t2e(inst: &E2lInstance, tau: f64) -> Option<f64> {
    let (entities, sims) = text_entity_matrix(inst);
    let mut total = 0.0;
    for (i, row) in sims.iter().enumerate() {
        let target = entities.iter().position(|&e| e == inst.text_targets[i])?;
        let mut denom = 0.0;
        for &s in row {
            denom += (s / tau).exp();
        }
        total += -((row[target] / tau).exp() / denom).ln();
    }
    Some(total / sims.len() as f64)
}

/// Entity-to-text BCE on raw similarities, averaged over texts per entity
/// and then over entities with at least one positive text.
pub fn naive_e2t(inst: &E2lInstance) -> Option<f64> {
    let (entities, sims) = text_entity_matrix(inst);
    let n_t = inst.f_t.len();
    let mut total = 0.0;
    let mut kept = 0usize;
    for (c, &e) in entities.iter().enumerate() {
        let mut has_positive = false;
        for &t in &inst.text_targets {
            if t == e {
                has_positive = true;
                break;
            }
        }
        if !has_positive {
            continue;
        }
        let mut entity_loss = 0.0;
        for t in 0..n_t {
            let label = if inst.text_targets[t] == e { 1.0 } else { 0.0 };
            entity_loss += bce_scalar(sims[t][c], label);
        }
        total += entity_loss / n_t as f64;
        kept += 1;
    }
    if kept == 0 {
        None
    } else {
        Some(total / kept as f64)
    }
}

/// Weighted entity-to-language combination.
pub fn naive_e2l(inst: &E2lInstance, tau: f64, alpha: f64, beta: f64) -> Option<f64> {
    Some(alpha * naive_t2e(inst, tau)? + beta * naive_e2t(inst)?)
}

/// Exhaustive k nearest neighbors (excluding self) with ties broken by index.
pub fn naive_knn(points: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut cands: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut d = 0.0;
            for a in 0..3 {
                let diff = points[i][a] - points[j][a];
                d += diff * diff;
            }
            cands.push((d, j));
        }
        cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.push(cands[..k].iter().map(|&(_, j)| j).collect());
    }
    out
}
