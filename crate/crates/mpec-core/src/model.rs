//! Point encoder, learnable mask token, cross-view feature merging, and the
//! vision-language adapter.
//!
//! The encoder is a per-point MLP with k-NN mean-aggregation blocks: enough
//! spatial context for the contrastive objectives at desk scale, behind the
//! same interface a heavier backbone would use. Masked points have their
//! color replaced by the learnable token before encoding; coordinates pass
//! through untouched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::pipeline::{augment_view, AugmentationConfig, View, ViewPair};
use crate::rng::{hash_str, stream_rng, Stream};
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Encoder hidden width H.
    pub hidden: usize,
    /// Encoder output feature width D.
    pub feat_dim: usize,
    /// Number of k-NN aggregation blocks.
    pub blocks: usize,
    /// Neighbors per point in aggregation blocks.
    pub k_neighbors: usize,
    /// Adapter hidden width.
    pub adapter_hidden: usize,
    /// Adapter output width D'; must equal the vocabulary embedding dim.
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            feat_dim: 64,
            blocks: 2,
            k_neighbors: 16,
            adapter_hidden: 64,
            embed_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("model.hidden", self.hidden),
            ("model.feat_dim", self.feat_dim),
            ("model.k_neighbors", self.k_neighbors),
            ("model.adapter_hidden", self.adapter_hidden),
            ("model.embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("{} must be positive", name)));
            }
        }
        Ok(())
    }
}

/// Parameter names in canonical set order.
fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, f64)> {
    let h = cfg.hidden;
    let mut specs = vec![
        ("enc.input.w".to_string(), vec![6, h], (2.0 / 6.0_f64).sqrt()),
        ("enc.input.b".to_string(), vec![h], 0.0),
    ];
    for l in 0..cfg.blocks {
        specs.push((
            format!("enc.block{}.w", l),
            vec![2 * h, h],
            (2.0 / (2 * h) as f64).sqrt(),
        ));
        specs.push((format!("enc.block{}.b", l), vec![h], 0.0));
    }
    specs.push((
        "enc.head.w".to_string(),
        vec![h, cfg.feat_dim],
        (1.0 / h as f64).sqrt(),
    ));
    specs.push(("enc.head.b".to_string(), vec![cfg.feat_dim], 0.0));
    specs.push(("mask_token".to_string(), vec![1, 3], 0.0));
    specs.push((
        "adapter.fc1.w".to_string(),
        vec![cfg.feat_dim, cfg.adapter_hidden],
        (2.0 / cfg.feat_dim as f64).sqrt(),
    ));
    specs.push(("adapter.fc1.b".to_string(), vec![cfg.adapter_hidden], 0.0));
    specs.push((
        "adapter.fc2.w".to_string(),
        vec![cfg.adapter_hidden, cfg.embed_dim],
        (1.0 / cfg.adapter_hidden as f64).sqrt(),
    ));
    specs.push(("adapter.fc2.b".to_string(), vec![cfg.embed_dim], 0.0));
    specs
}

/// Seeded Gaussian initialization; biases and the mask token start at zero.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    for (name, shape, std) in param_specs(cfg) {
        let numel: usize = shape.iter().product();
        let data = if std == 0.0 {
            vec![0.0; numel]
        } else {
            let mut rng = stream_rng(seed, Stream::ParamInit, &[hash_str(&name)]);
            (0..numel)
                .map(|_| {
                    use rand::Rng;
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * std
                })
                .collect()
        };
        params.add(name, Tensor::new(shape, data).map_err(Error::from)?)?;
    }
    Ok(params)
}

/// Tape handles for all model parameters, bound in set order.
pub struct ModelVars {
    /// Leaf vars in `ParamSet` order, for gradient extraction.
    pub ordered: Vec<Var>,
    pub input_w: Var,
    pub input_b: Var,
    pub block_w: Vec<Var>,
    pub block_b: Vec<Var>,
    pub head_w: Var,
    pub head_b: Var,
    pub token: Var,
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

/// Bind every parameter onto the tape as a gradient-tracked leaf.
pub fn bind_params(tape: &mut Tape, params: &ParamSet, cfg: &ModelConfig) -> Result<ModelVars> {
    let mut by_name: BTreeMap<String, Var> = BTreeMap::new();
    let mut ordered = Vec::with_capacity(params.len());
    for p in params.iter() {
        let v = tape.leaf(p.tensor.clone(), true).map_err(Error::from)?;
        ordered.push(v);
        by_name.insert(p.name.clone(), v);
    }
    let lookup = |name: &str| -> Result<Var> {
        by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Validation(format!("missing parameter {}", name)))
    };
    let mut block_w = Vec::with_capacity(cfg.blocks);
    let mut block_b = Vec::with_capacity(cfg.blocks);
    for l in 0..cfg.blocks {
        block_w.push(lookup(&format!("enc.block{}.w", l))?);
        block_b.push(lookup(&format!("enc.block{}.b", l))?);
    }
    Ok(ModelVars {
        input_w: lookup("enc.input.w")?,
        input_b: lookup("enc.input.b")?,
        block_w,
        block_b,
        head_w: lookup("enc.head.w")?,
        head_b: lookup("enc.head.b")?,
        token: lookup("mask_token")?,
        fc1_w: lookup("adapter.fc1.w")?,
        fc1_b: lookup("adapter.fc1.b")?,
        fc2_w: lookup("adapter.fc2.w")?,
        fc2_b: lookup("adapter.fc2.b")?,
        ordered,
    })
}

/// Brute-force k nearest neighbors (excluding self) on view coordinates,
/// ties broken by original point index so the result is permutation-stable.
pub fn knn_indices(points: &[[f64; 3]], origin_index: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    let mut result = Vec::with_capacity(n);
    let mut scratch: Vec<(f64, usize, usize)> = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n {
        scratch.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let dz = points[i][2] - points[j][2];
            scratch.push((dx * dx + dy * dy + dz * dz, origin_index[j], j));
        }
        let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        };
        if k > 0 && k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, cmp);
            scratch.truncate(k);
        }
        scratch.sort_by(cmp);
        result.push(scratch.iter().map(|&(_, _, j)| j).collect());
    }
    result
}

/// Encode one view: masked points get the token color, coordinates pass
/// through, then input projection, k-NN blocks, output head.
pub fn encode_view(
    tape: &mut Tape,
    view: &View,
    vars: &ModelVars,
    cfg: &ModelConfig,
) -> Result<Var> {
    if view.is_empty() {
        return Err(Error::Validation("cannot encode an empty view".into()));
    }
    let n = view.len();
    let mut coords = Vec::with_capacity(n * 3);
    let mut colors = Vec::with_capacity(n * 3);
    let mut mask_flat = Vec::with_capacity(n * 3);
    let mut inv_flat = Vec::with_capacity(n * 3);
    for i in 0..n {
        coords.extend_from_slice(&view.points[i]);
        colors.extend_from_slice(&view.colors[i]);
        let m = if view.masked[i] { 1.0 } else { 0.0 };
        for _ in 0..3 {
            mask_flat.push(m);
            inv_flat.push(1.0 - m);
        }
    }
    let coords = tape.constant(Tensor::new(vec![n, 3], coords)?)?;
    let colors = tape.constant(Tensor::new(vec![n, 3], colors)?)?;
    let mask = tape.constant(Tensor::new(vec![n, 3], mask_flat)?)?;
    let inv = tape.constant(Tensor::new(vec![n, 3], inv_flat)?)?;

    let token_rows = tape.broadcast_rows(vars.token, n)?;
    let kept = tape.mul(colors, inv)?;
    let injected = tape.mul(token_rows, mask)?;
    let masked_colors = tape.add(kept, injected)?;

    let x = tape.concat_cols(coords, masked_colors)?;
    let mut h = tape.matmul(x, vars.input_w)?;
    h = tape.add_bias(h, vars.input_b)?;
    h = tape.relu(h)?;

    let neighbors = knn_indices(&view.points, &view.origin_index, cfg.k_neighbors);
    for l in 0..cfg.blocks {
        let pooled = tape.knn_mean(h, &neighbors)?;
        let cat = tape.concat_cols(pooled, h)?;
        let mut z = tape.matmul(cat, vars.block_w[l])?;
        z = tape.add_bias(z, vars.block_b[l])?;
        h = tape.relu(z)?;
    }

    let mut f = tape.matmul(h, vars.head_w)?;
    f = tape.add_bias(f, vars.head_b)?;
    Ok(f)
}

/// Merged per-point features over the union of surviving original points.
pub struct MergedCloud {
    pub features: Var,
    /// Original scene point index per merged row (ascending).
    pub origin_ids: Vec<usize>,
    /// Entity label per merged row.
    pub labels: Vec<u32>,
}

/// Eq-style merge: matched points average their two view features, points
/// surviving in only one view pass through.
pub fn merge_features(
    tape: &mut Tape,
    f_u: Var,
    f_v: Var,
    pair: &ViewPair,
) -> Result<MergedCloud> {
    use crate::autodiff::MergeSource;
    let mut plan_by_origin: BTreeMap<usize, (MergeSource, u32)> = BTreeMap::new();
    let mut matched_u = vec![false; pair.u.len()];
    let mut matched_v = vec![false; pair.v.len()];
    for &(i, j) in &pair.correspondence {
        matched_u[i] = true;
        matched_v[j] = true;
        plan_by_origin.insert(
            pair.u.origin_index[i],
            (MergeSource::Both(i, j), pair.u.entity_mask[i]),
        );
    }
    for i in 0..pair.u.len() {
        if !matched_u[i] {
            plan_by_origin.insert(
                pair.u.origin_index[i],
                (MergeSource::First(i), pair.u.entity_mask[i]),
            );
        }
    }
    for j in 0..pair.v.len() {
        if !matched_v[j] {
            plan_by_origin.insert(
                pair.v.origin_index[j],
                (MergeSource::Second(j), pair.v.entity_mask[j]),
            );
        }
    }
    let mut plan = Vec::with_capacity(plan_by_origin.len());
    let mut origin_ids = Vec::with_capacity(plan_by_origin.len());
    let mut labels = Vec::with_capacity(plan_by_origin.len());
    for (origin, (src, label)) in plan_by_origin {
        origin_ids.push(origin);
        labels.push(label);
        plan.push(src);
    }
    let features = tape.merge_rows(f_u, f_v, &plan)?;
    Ok(MergedCloud {
        features,
        origin_ids,
        labels,
    })
}

/// Two-layer adapter with a ReLU between: D -> adapter_hidden -> D'.
pub fn project_vl(tape: &mut Tape, f_p: Var, vars: &ModelVars) -> Result<Var> {
    let mut a = tape.matmul(f_p, vars.fc1_w)?;
    a = tape.add_bias(a, vars.fc1_b)?;
    a = tape.relu(a)?;
    let mut out = tape.matmul(a, vars.fc2_w)?;
    out = tape.add_bias(out, vars.fc2_b)?;
    Ok(out)
}

/// Inference path: one unaugmented, unmasked pass through encoder and
/// adapter. Row i of the output corresponds to scene point i.
pub fn encode_inference(scene: &Scene, params: &ParamSet, cfg: &ModelConfig) -> Result<Tensor> {
    let view = augment_view(scene, &AugmentationConfig::identity(), 0)?;
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, cfg)?;
    let features = encode_view(&mut tape, &view, &vars, cfg)?;
    let projected = project_vl(&mut tape, features, &vars)?;
    Ok(tape.value(projected).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::pipeline::GridMaskConfig;
    use crate::scene::{generate_scene, SceneSetConfig};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            feat_dim: 8,
            blocks: 2,
            k_neighbors: 3,
            adapter_hidden: 8,
            embed_dim: 4,
        }
    }

    fn tiny_view(n: usize, seed: u64) -> View {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(seed);
        View {
            points: (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.0..1.0),
                    ]
                })
                .collect(),
            colors: (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect(),
            entity_mask: (0..n).map(|i| (i % 3) as u32).collect(),
            origin_index: (0..n).collect(),
            masked: vec![false; n],
        }
    }

    #[test]
    fn token_gradient_is_zero_without_masks() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 3).unwrap();
        let view = tiny_view(10, 4);
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &params, &cfg).unwrap();
        let f = encode_view(&mut tape, &view, &vars, &cfg).unwrap();
        let loss = tape.sum(f).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(vars.token).unwrap();
        assert!(g.iter().all(|&v| v == 0.0), "token grad {:?}", g);
    }

    #[test]
    fn fully_masked_view_ignores_input_colors() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 3).unwrap();
        let mut a = tiny_view(10, 4);
        a.masked = vec![true; 10];
        let mut b = a.clone();
        for c in b.colors.iter_mut() {
            *c = [0.9, -0.9, 0.3];
        }
        let run = |view: &View| {
            let mut tape = Tape::new();
            let vars = bind_params(&mut tape, &params, &cfg).unwrap();
            let f = encode_view(&mut tape, view, &vars, &cfg).unwrap();
            tape.value(f).data().to_vec()
        };
        assert_eq!(run(&a), run(&b));
    }

    #[test]
    fn masked_token_gradient_flows_only_through_masked_points() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 5).unwrap();
        let mut view = tiny_view(10, 6);
        view.masked[3] = true;
        view.masked[7] = true;
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &params, &cfg).unwrap();
        let f = encode_view(&mut tape, &view, &vars, &cfg).unwrap();
        let loss = tape.sum(f).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(vars.token).unwrap();
        assert!(g.iter().any(|&v| v != 0.0), "token should receive gradient");
    }

    #[test]
    fn equidistant_neighborhood_mean_equals_global_mean() {
        // Regular tetrahedron: 4 mutually equidistant points, k = 3.
        let pts = vec![
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        let origins: Vec<usize> = (0..4).collect();
        let nbrs = knn_indices(&pts, &origins, 3);
        for (i, list) in nbrs.iter().enumerate() {
            assert_eq!(list.len(), 3);
            assert!(!list.contains(&i));
        }
        let mut tape = Tape::new();
        let x = tape
            .leaf(
                Tensor::from_rows(&[
                    vec![1.0, 2.0],
                    vec![3.0, 5.0],
                    vec![-1.0, 0.5],
                    vec![0.25, -2.0],
                ])
                .unwrap(),
                false,
            )
            .unwrap();
        let pooled = tape.knn_mean(x, &nbrs).unwrap();
        let global = [
            (1.0 + 3.0 - 1.0 + 0.25) / 4.0,
            (2.0 + 5.0 + 0.5 - 2.0) / 4.0,
        ];
        for i in 0..4 {
            assert!((tape.value(pooled).at2(i, 0) - global[0]).abs() < 1e-15);
            assert!((tape.value(pooled).at2(i, 1) - global[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn knn_matches_naive_oracle_including_ties() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(9);
        for case in 0..100 {
            let n = rng.random_range(3..20);
            let k = rng.random_range(1..n);
            let mut pts: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect();
            if case % 3 == 0 && n >= 4 {
                // Inject duplicates to exercise tie-breaking.
                pts[1] = pts[0];
                pts[3] = pts[2];
            }
            let origins: Vec<usize> = (0..n).collect();
            let ours = knn_indices(&pts, &origins, k);
            let oracle = mpec_oracle::naive_knn(&pts, k);
            assert_eq!(ours, oracle, "case {} n {} k {}", case, n, k);
        }
    }

    #[test]
    fn knn_with_k_equals_n_minus_one_lists_all_others() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let origins: Vec<usize> = (0..3).collect();
        let nbrs = knn_indices(&pts, &origins, 2);
        assert_eq!(nbrs[0], vec![1, 2]);
        assert_eq!(nbrs[1].len(), 2);
    }

    #[test]
    fn merge_mixes_matched_rows_and_passes_unmatched() {
        let scene_pair = ViewPair {
            u: View {
                points: vec![[0.0; 3]; 2],
                colors: vec![[0.0; 3]; 2],
                entity_mask: vec![1, 2],
                origin_index: vec![0, 1],
                masked: vec![false; 2],
            },
            v: View {
                points: vec![[0.0; 3]; 2],
                colors: vec![[0.0; 3]; 2],
                entity_mask: vec![1, 0],
                origin_index: vec![0, 2],
                masked: vec![false; 2],
            },
            correspondence: vec![(0, 0)],
        };
        let mut tape = Tape::new();
        let fu = tape
            .leaf(
                Tensor::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap(),
                false,
            )
            .unwrap();
        let fv = tape
            .leaf(
                Tensor::from_rows(&[vec![0.0, 1.0], vec![-1.0, 2.0]]).unwrap(),
                false,
            )
            .unwrap();
        let merged = merge_features(&mut tape, fu, fv, &scene_pair).unwrap();
        assert_eq!(merged.origin_ids, vec![0, 1, 2]);
        assert_eq!(merged.labels, vec![1, 2, 0]);
        let m = tape.value(merged.features);
        assert_eq!(m.row(0), [0.5, 0.5]);
        assert_eq!(m.row(1), [0.5, 0.5]);
        assert_eq!(m.row(2), [-1.0, 2.0]);
    }

    #[test]
    fn merge_gradient_splits_half_half() {
        let pair = ViewPair {
            u: View {
                points: vec![[0.0; 3]; 2],
                colors: vec![[0.0; 3]; 2],
                entity_mask: vec![1, 1],
                origin_index: vec![0, 1],
                masked: vec![false; 2],
            },
            v: View {
                points: vec![[0.0; 3]; 2],
                colors: vec![[0.0; 3]; 2],
                entity_mask: vec![1, 1],
                origin_index: vec![0, 1],
                masked: vec![false; 2],
            },
            correspondence: vec![(0, 0), (1, 1)],
        };
        let base = Tensor::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.2]]).unwrap();
        let err = grad_check(
            |tape, v| {
                let fv = tape.leaf(
                    Tensor::from_rows(&[vec![0.9, 0.1], vec![-0.4, 0.6]]).unwrap(),
                    false,
                )?;
                let merged = tape.merge_rows(
                    v,
                    fv,
                    &[
                        crate::autodiff::MergeSource::Both(0, 0),
                        crate::autodiff::MergeSource::Both(1, 1),
                    ],
                )?;
                let sq = tape.mul(merged, merged)?;
                tape.sum(sq)
            },
            &base,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {}", err);
        let _ = pair;
    }

    #[test]
    fn zero_adapter_maps_everything_to_zero() {
        let cfg = tiny_cfg();
        let mut params = init_params(&cfg, 1).unwrap();
        for name in ["adapter.fc1.w", "adapter.fc1.b", "adapter.fc2.w", "adapter.fc2.b"] {
            let p = params.get_mut(name).unwrap();
            let shape = p.tensor.shape().to_vec();
            p.tensor = Tensor::zeros(shape);
        }
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &params, &cfg).unwrap();
        let x = tape
            .leaf(Tensor::from_rows(&[vec![1.0; 8], vec![-2.0; 8]]).unwrap(), false)
            .unwrap();
        let out = project_vl(&mut tape, x, &vars).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adapter_gradient_check() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 11).unwrap();
        for name in ["adapter.fc1.w", "adapter.fc1.b", "adapter.fc2.w", "adapter.fc2.b"] {
            let x = params.get(name).unwrap().tensor.clone();
            let err = grad_check(
                |tape, v| {
                    // Rebuild the adapter with `v` substituted for `name`.
                    let mut handles = BTreeMap::new();
                    for p in params.iter() {
                        if p.name == name {
                            handles.insert(p.name.clone(), v);
                        } else {
                            let h = tape.leaf(p.tensor.clone(), false)?;
                            handles.insert(p.name.clone(), h);
                        }
                    }
                    let inp = tape.leaf(
                        Tensor::from_rows(&[vec![0.4; 8], vec![-0.2; 8], vec![1.3; 8]]).unwrap(),
                        false,
                    )?;
                    let mut a = tape.matmul(inp, handles["adapter.fc1.w"])?;
                    a = tape.add_bias(a, handles["adapter.fc1.b"])?;
                    a = tape.relu(a)?;
                    let mut out = tape.matmul(a, handles["adapter.fc2.w"])?;
                    out = tape.add_bias(out, handles["adapter.fc2.b"])?;
                    let sq = tape.mul(out, out)?;
                    tape.sum(sq)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{} rel err {}", name, err);
        }
    }

    #[test]
    fn inference_is_definitional_and_deterministic() {
        let scfg = SceneSetConfig {
            num_scenes: 1,
            entities_per_scene: [2, 3],
            points_per_entity: [25, 30],
            floor_points: 50,
            wall_points: 20,
            master_seed: 15,
            ..Default::default()
        };
        let scene = generate_scene(&scfg, 0).unwrap();
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 2).unwrap();

        let a = encode_inference(&scene, &params, &cfg).unwrap();
        let b = encode_inference(&scene, &params, &cfg).unwrap();
        assert_eq!(a, b);

        // Definitional: identity view, no masks, encoder then adapter.
        let view = augment_view(&scene, &AugmentationConfig::identity(), 0).unwrap();
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &params, &cfg).unwrap();
        let f = encode_view(&mut tape, &view, &vars, &cfg).unwrap();
        let p = project_vl(&mut tape, f, &vars).unwrap();
        assert_eq!(a.data(), tape.value(p).data());
        let _ = GridMaskConfig::default();
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 8).unwrap();
        let view = tiny_view(12, 21);
        let perm: Vec<usize> = vec![5, 0, 11, 3, 8, 1, 9, 2, 7, 10, 4, 6];
        let permuted = View {
            points: perm.iter().map(|&i| view.points[i]).collect(),
            colors: perm.iter().map(|&i| view.colors[i]).collect(),
            entity_mask: perm.iter().map(|&i| view.entity_mask[i]).collect(),
            origin_index: perm.iter().map(|&i| view.origin_index[i]).collect(),
            masked: perm.iter().map(|&i| view.masked[i]).collect(),
        };
        let run = |v: &View| {
            let mut tape = Tape::new();
            let vars = bind_params(&mut tape, &params, &cfg).unwrap();
            let f = encode_view(&mut tape, v, &vars, &cfg).unwrap();
            tape.value(f).clone()
        };
        let base = run(&view);
        let shuffled = run(&permuted);
        for (new_row, &old_row) in perm.iter().enumerate() {
            assert_eq!(
                shuffled.row(new_row),
                base.row(old_row),
                "row {} mismatched",
                new_row
            );
        }
    }
}
