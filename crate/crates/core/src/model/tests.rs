use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn config(variant: TemporalVariant, attention: AttentionMode) -> ModelConfig {
    ModelConfig {
        frames: 4,
        input_dim: 3,
        feature_dim: 4,
        classes: 3,
        variant,
        attention,
        max_subsets_per_scale: DEFAULT_MAX_SUBSETS,
        seed: 11,
    }
}

fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn relu_affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..w.cols())
        .map(|j| {
            let v: f64 = x.iter().enumerate().map(|(i, xi)| xi * w.get(i, j)).sum::<f64>() + b.get(0, j);
            v.max(0.0)
        })
        .collect()
}

#[test]
fn spatial_identity_and_zero_layers() {
    let mut params = ParamStore::new();
    params.insert("spatial.weight", Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    params.insert("spatial.bias", Tensor::row(&[0.0, 0.0]));
    let mut tape = Tape::new();
    let bound = tape.bind(&params);
    let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
    let y = spatial_forward(&mut tape, &bound, x).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0]);

    params.insert("spatial.weight", Tensor::zeros(2, 2));
    let mut tape = Tape::new();
    let bound = tape.bind(&params);
    let x = tape.leaf(Tensor::row(&[5.0, -3.0]));
    let y = spatial_forward(&mut tape, &bound, x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
}

#[test]
fn spatial_rows_are_independent() {
    let model = Ta3nModel::new(config(TemporalVariant::TemPooling, AttentionMode::None)).unwrap();
    let x = random_tensor(4, 3, 1);
    let perm = [2usize, 0, 3, 1];
    let permuted = Tensor::from_rows(&perm.iter().map(|&i| x.row_slice(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let run = |t: &Tensor| {
        let mut tape = Tape::new();
        let bound = tape.bind(&model.params);
        let v = tape.leaf(t.clone());
        let y = spatial_forward(&mut tape, &bound, v).unwrap();
        tape.value(y).clone()
    };
    let (a, b) = (run(&x), run(&permuted));
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(b.row_slice(row), a.row_slice(src));
    }
}

#[test]
fn temporal_pool_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap());
    let p = temporal_pool(&mut tape, x, 2).unwrap();
    assert_eq!(tape.value(p).data(), &[2.0, 2.0]);

    let v = [0.3, -1.7, 2.5];
    let x = tape.leaf(Tensor::from_rows(&vec![v.to_vec(); 5]).unwrap());
    let p = temporal_pool(&mut tape, x, 5).unwrap();
    for (a, b) in tape.value(p).data().iter().zip(v) {
        assert!((a - b).abs() < 1e-15);
    }

    let frames = random_tensor(5, 6, 3);
    let x = tape.leaf(frames.clone());
    let p = temporal_pool(&mut tape, x, 5).unwrap();
    for c in 0..6 {
        let mut oracle = 0.0;
        for r in 0..5 {
            oracle += frames.get(r, c);
        }
        oracle /= 5.0;
        assert!((tape.value(p).get(0, c) - oracle).abs() < 1e-12);
    }
}

#[test]
fn relation_with_identity_picks_earliest_frame() {
    let f = 3;
    let mut w = Tensor::zeros(2 * f, f);
    for i in 0..f {
        w.data_mut()[i * f + i] = 1.0;
    }
    let frames = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6], vec![0.7, 0.8, 0.9]]).unwrap();
    let subset = vec![RelationSubset { scale: 2, indices: vec![1, 2], subset_id: 0 }];
    let mut tape = Tape::new();
    let x = tape.leaf(frames.clone());
    let wv = tape.leaf(w);
    let bv = tape.leaf(Tensor::zeros(1, f));
    let r = temporal_relation(&mut tape, x, 3, &subset, wv, bv).unwrap();
    assert_eq!(tape.value(r).data(), frames.row_slice(1));

    let zw = tape.leaf(Tensor::zeros(2 * f, f));
    let r = temporal_relation(&mut tape, x, 3, &subset, zw, bv).unwrap();
    assert!(tape.value(r).data().iter().all(|&v| v == 0.0));

    let bad = vec![RelationSubset { scale: 2, indices: vec![1, 3], subset_id: 0 }];
    assert!(temporal_relation(&mut tape, x, 3, &bad, wv, bv).is_err());
}

#[test]
fn relation_matches_brute_force_pairs() {
    let (k, f) = (4, 3);
    let frames = random_tensor(k, f, 5);
    let w = random_tensor(2 * f, f, 6);
    let b = random_tensor(1, f, 7);
    let subsets = enumerate_subsets(k, 2, 32, 0).unwrap();
    assert_eq!(subsets.len(), 6);
    let mut tape = Tape::new();
    let x = tape.leaf(frames.clone());
    let wv = tape.leaf(w.clone());
    let bv = tape.leaf(b.clone());
    let r = temporal_relation(&mut tape, x, k, &subsets, wv, bv).unwrap();

    let mut oracle = vec![0.0; f];
    for a in 0..k {
        for c in a + 1..k {
            let mut cat = frames.row_slice(a).to_vec();
            cat.extend_from_slice(frames.row_slice(c));
            for (o, v) in oracle.iter_mut().zip(relu_affine(&cat, &w, &b)) {
                *o += v;
            }
        }
    }
    for (got, want) in tape.value(r).data().iter().zip(&oracle) {
        assert!((got - want).abs() < 1e-10);
    }
}

#[test]
fn pooling_forward_matches_straight_line_evaluation() {
    let cfg = config(TemporalVariant::TemPooling, AttentionMode::None);
    let model = Ta3nModel::new(cfg.clone()).unwrap();
    let clip = random_tensor(cfg.frames, cfg.input_dim, 9);
    let mut tape = Tape::new();
    let (_, out) = model.forward_on(&mut tape, &[&clip]).unwrap();

    let p = &model.params;
    let (ws, bs) = (p.get("spatial.weight").unwrap(), p.get("spatial.bias").unwrap());
    let mut pooled = vec![0.0; cfg.feature_dim];
    for r in 0..cfg.frames {
        for (acc, v) in pooled.iter_mut().zip(relu_affine(clip.row_slice(r), ws, bs)) {
            *acc += v / cfg.frames as f64;
        }
    }
    let (wy, by) = (p.get("classifier.weight").unwrap(), p.get("classifier.bias").unwrap());
    for c in 0..cfg.classes {
        let logit: f64 = pooled.iter().enumerate().map(|(i, h)| h * wy.get(i, c)).sum::<f64>() + by.get(0, c);
        assert!((tape.value(out.class_logits).get(0, c) - logit).abs() < 1e-12);
    }
}

fn uniform_relation_discriminators(model: &mut Ta3nModel) {
    for n in model.config().scales() {
        for suffix in ["fc2.weight", "fc2.bias"] {
            let t = model.params.get_mut(&format!("relation_disc.{n}.{suffix}")).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[test]
fn uniform_discriminators_reduce_attention_to_plain_sum() {
    let mut with_attention = Ta3nModel::new(config(TemporalVariant::TemRelation, AttentionMode::Domain)).unwrap();
    uniform_relation_discriminators(&mut with_attention);
    let plain =
        Ta3nModel::from_parts(config(TemporalVariant::TemRelation, AttentionMode::None), with_attention.params.clone())
            .unwrap();
    let clips = [random_tensor(4, 3, 1), random_tensor(4, 3, 2)];
    let refs: Vec<&Tensor> = clips.iter().collect();
    let a = with_attention.infer(&refs).unwrap();
    let b = plain.infer(&refs).unwrap();
    assert!(a.attention_weights.unwrap().data().iter().all(|&w| w == 0.0));
    assert_eq!(a.video_features, b.video_features);
    assert_eq!(a.class_logits, b.class_logits);
}

#[test]
fn batching_does_not_couple_videos() {
    for (variant, attention) in [
        (TemporalVariant::TemRelation, AttentionMode::Domain),
        (TemporalVariant::TemRelation, AttentionMode::General),
        (TemporalVariant::TemPooling, AttentionMode::Domain),
        (TemporalVariant::TemPooling, AttentionMode::General),
    ] {
        let model = Ta3nModel::new(config(variant, attention)).unwrap();
        let (c1, c2) = (random_tensor(4, 3, 21), random_tensor(4, 3, 22));
        let both = model.infer(&[&c1, &c2]).unwrap();
        let one = model.infer(&[&c1]).unwrap();
        let two = model.infer(&[&c2]).unwrap();
        let joined = Tensor::vstack(&[&one.class_logits, &two.class_logits]).unwrap();
        for (a, b) in both.class_logits.data().iter().zip(joined.data()) {
            assert!((a - b).abs() < 1e-12, "{variant:?}/{attention:?}");
        }
    }
}

#[test]
fn scale_count_and_residual_bounds() {
    let model =
        Ta3nModel::new(ModelConfig { frames: 5, ..config(TemporalVariant::TemRelation, AttentionMode::Domain) })
            .unwrap();
    let clip = random_tensor(5, 3, 4);
    let mut tape = Tape::new();
    let (_, out) = model.forward_on(&mut tape, &[&clip]).unwrap();
    assert_eq!(out.relation_features.len(), 4);
    assert_eq!(out.relation_domain_logits.len(), 4);
    let w = out.attention_weights.unwrap();
    assert_eq!(w.shape(), [1, 4]);
    assert!(w.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn parameter_layout_follows_variant() {
    let rel = Ta3nModel::new(config(TemporalVariant::TemRelation, AttentionMode::None)).unwrap();
    for n in 2..=4 {
        assert!(rel.params.contains(&format!("relation.{n}.weight")));
        assert!(rel.params.contains(&format!("relation_disc.{n}.fc2.bias")));
    }
    assert!(!rel.params.contains("relation.5.weight"));
    let pool = Ta3nModel::new(config(TemporalVariant::TemPooling, AttentionMode::None)).unwrap();
    assert!(pool.params.names().all(|n| !n.starts_with("relation")));
    assert!(Ta3nModel::from_parts(config(TemporalVariant::TemRelation, AttentionMode::None), pool.params).is_err());
}

#[test]
fn domain_attention_weight_examples() {
    assert_eq!(domain_attention_weight(&[0.0, 0.0]), 0.0);
    assert!((domain_attention_weight(&[20.0, -20.0]) - 1.0).abs() < 1e-15);
    let logits = [0.9f64.ln(), 0.1f64.ln()];
    assert!((domain_attention_weight(&logits) - 0.5310044064107188).abs() < 1e-12);
}

#[test]
fn attend_and_aggregate_examples() {
    let feats: Vec<Tensor> = (0..4).map(|i| random_tensor(1, 5, 30 + i)).collect();
    let plain: Vec<f64> = (0..5).map(|c| feats.iter().map(|f| f.get(0, c)).sum()).collect();
    let run = |w: &[f64]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = feats.iter().map(|f| tape.leaf(f.clone())).collect();
        let h = attend_and_aggregate(&mut tape, &vars, &Tensor::row(w)).unwrap();
        tape.value(h).clone().into_data()
    };
    for (a, b) in run(&[0.0; 4]).iter().zip(&plain) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in run(&[1.0; 4]).iter().zip(&plain) {
        assert!((a - 2.0 * b).abs() < 1e-12);
    }
    let w = [0.2, 0.7, 0.5, 1.0];
    let oracle: Vec<f64> = (0..5).map(|c| (0..4).map(|n| (w[n] + 1.0) * feats[n].get(0, c)).sum()).collect();
    for (a, b) in run(&w).iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = feats.iter().map(|f| tape.leaf(f.clone())).collect();
    assert!(attend_and_aggregate(&mut tape, &vars, &Tensor::row(&[0.5; 3])).is_err());
}

#[test]
fn general_attention_weights() {
    let cfg = config(TemporalVariant::TemRelation, AttentionMode::General);
    let mut model = Ta3nModel::new(cfg).unwrap();
    let feats: Vec<Tensor> = (0..3).map(|i| random_tensor(2, 4, 40 + i)).collect();
    let run = |model: &Ta3nModel, feats: &[Tensor]| {
        let mut tape = Tape::new();
        let bound = tape.bind(&model.params);
        let vars: Vec<Var> = feats.iter().map(|f| tape.leaf(f.clone())).collect();
        let w = general_attention(&mut tape, &bound, &vars).unwrap();
        tape.value(w).clone()
    };
    let w = run(&model, &feats);
    for r in 0..2 {
        assert!((w.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    let tied = vec![feats[0].clone(); 3];
    model.params.get_mut("attention.fc1.bias").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    let w = run(&model, &tied);
    assert!(w.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));

    for (_, t) in model.params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let w = run(&model, &feats);
    assert!(w.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn frame_order_matters_for_relations_only() {
    let clip = random_tensor(4, 3, 50);
    let reversed = Tensor::from_rows(&(0..4).rev().map(|r| clip.row_slice(r).to_vec()).collect::<Vec<_>>()).unwrap();

    let rel = Ta3nModel::new(config(TemporalVariant::TemRelation, AttentionMode::None)).unwrap();
    let mut tape = Tape::new();
    let (_, a) = rel.forward_on(&mut tape, &[&clip]).unwrap();
    let (_, b) = rel.forward_on(&mut tape, &[&reversed]).unwrap();
    assert_ne!(tape.value(a.relation_features[0]), tape.value(b.relation_features[0]));

    let pool = Ta3nModel::new(config(TemporalVariant::TemPooling, AttentionMode::None)).unwrap();
    let x = pool.infer(&[&clip]).unwrap();
    let y = pool.infer(&[&reversed]).unwrap();
    for (p, q) in x.video_features.data().iter().zip(y.video_features.data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn predicted_class_survives_positive_scaling() {
    let model = Ta3nModel::new(config(TemporalVariant::TemRelation, AttentionMode::None)).unwrap();
    let logits = model.infer(&[&random_tensor(4, 3, 60)]).unwrap().class_logits;
    let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best });
    let scaled: Vec<f64> = logits.data().iter().map(|v| v * 3.7).collect();
    assert_eq!(argmax(logits.data()), argmax(&scaled));
}

#[test]
fn wrong_clip_shape_is_rejected() {
    let model = Ta3nModel::new(config(TemporalVariant::TemRelation, AttentionMode::None)).unwrap();
    assert!(model.infer(&[&random_tensor(3, 3, 1)]).is_err());
    assert!(model.infer(&[&random_tensor(4, 2, 1)]).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut model = Ta3nModel::new(config(TemporalVariant::TemRelation, AttentionMode::General)).unwrap();
    model.grl = GrlConfig::new(0.37).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, model);
    for ((_, a), (_, b)) in loaded.params.iter().zip(model.params.iter()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
