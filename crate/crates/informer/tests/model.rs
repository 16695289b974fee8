mod common;

use common::{micro_config, random_batch, spec};
use stratlab_autodiff::{Graph, Tensor};
use stratlab_informer::model::{distilled_len, positional_encoding};
use stratlab_informer::{Batch, InformerConfig, InformerModel, InputSpec, LossKind};

#[test]
fn output_shapes_per_loss() {
    for (loss, width) in [(LossKind::Rmse, 1), (LossKind::Gmadl, 1), (LossKind::Quantile, 13)] {
        let cfg = micro_config(loss);
        let model = InformerModel::<f64>::new(cfg, spec()).unwrap();
        let batch = random_batch(5, 6, 1);
        let mut g = Graph::new(0, false);
        let b = model.params.bind_frozen(&mut g);
        let out = model.forward(&mut g, &b, &batch).unwrap();
        assert_eq!(g.shape(out), &[5, width]);
    }
}

#[test]
fn encoder_length_law() {
    for layers in 1..=3 {
        let cfg = InformerConfig {
            d_model: 2,
            d_ff: 2,
            n_heads: 1,
            encoder_layers: layers,
            ..micro_config(LossKind::Rmse)
        };
        let model = InformerModel::<f64>::new(cfg, InputSpec { n_real: 1, cardinalities: vec![] }).unwrap();
        for n in 20..=120 {
            let mut g = Graph::new(0, false);
            let b = model.params.bind_frozen(&mut g);
            let x = g.constant(Tensor::zeros(&[1, n, 2]));
            let z = model.encode(&mut g, &b, x).unwrap();
            let expect = n.div_ceil(1 << layers);
            assert_eq!(g.shape(z)[1], expect, "n={n} layers={layers}");
            let mut l = n;
            for _ in 0..layers {
                l = distilled_len(l);
            }
            assert_eq!(l, expect);
        }
    }
    let model = InformerModel::<f64>::new(micro_config(LossKind::Rmse), spec()).unwrap();
    let mut g = Graph::new(0, false);
    let b = model.params.bind_frozen(&mut g);
    let x = g.constant(Tensor::zeros(&[1, 1, 8]));
    assert!(model.encoder_layer(&mut g, &b, 0, x).is_err());
}

#[test]
fn embedding_decomposes_additively() {
    let cfg = micro_config(LossKind::Rmse);
    let mut model = InformerModel::<f64>::new(cfg, spec()).unwrap();
    for name in ["embed.real.b", "embed.cat.b", "embed.cat0.table", "embed.cat1.table"] {
        let t = model.params.get_mut(name).unwrap();
        *t = Tensor::zeros(t.shape());
    }
    let mut batch = random_batch(2, 6, 3);
    batch.real.iter_mut().for_each(|v| *v = 0.0);
    let mut g = Graph::new(0, false);
    let b = model.params.bind_frozen(&mut g);
    let e = model.embed(&mut g, &b, &batch).unwrap();
    let pe = positional_encoding(6, 8);
    let want: Vec<f64> = pe.iter().chain(pe.iter()).copied().collect();
    assert_eq!(g.value(e).data(), &want[..]);

    // linearity in the real inputs once the positional code is removed
    let base = random_batch(2, 6, 4);
    let mut double = base.clone();
    double.real.iter_mut().for_each(|v| *v *= 2.0);
    let mut g = Graph::new(0, false);
    let b = model.params.bind_frozen(&mut g);
    let e1 = model.embed(&mut g, &b, &base).unwrap();
    let e2 = model.embed(&mut g, &b, &double).unwrap();
    let e0 = model.embed(&mut g, &b, &batch_with_real(&base, 0.0)).unwrap();
    for ((a1, a2), a0) in g.value(e1).data().iter().zip(g.value(e2).data()).zip(g.value(e0).data()) {
        assert!(((a2 - a0) - 2.0 * (a1 - a0)).abs() < 1e-12);
    }
}

fn batch_with_real(b: &Batch, v: f64) -> Batch {
    let mut out = b.clone();
    out.real.iter_mut().for_each(|x| *x = v);
    out
}

#[test]
fn embedding_rejects_bad_ids_and_shapes() {
    let model = InformerModel::<f64>::new(micro_config(LossKind::Rmse), spec()).unwrap();
    let mut batch = random_batch(2, 6, 5);
    batch.cats[0][3] = 24;
    let mut g = Graph::new(0, false);
    let b = model.params.bind_frozen(&mut g);
    assert!(model.embed(&mut g, &b, &batch).is_err());
    let mut batch = random_batch(2, 6, 5);
    batch.n_real = 2;
    assert!(model.embed(&mut g, &b, &batch).is_err());
}

#[test]
fn decoder_with_zero_ffn_is_normalised_attention_sum() {
    let cfg = micro_config(LossKind::Rmse);
    let mut model = InformerModel::<f64>::new(cfg, spec()).unwrap();
    for name in ["dec0.ffn.w1", "dec0.ffn.b1", "dec0.ffn.w2", "dec0.ffn.b2"] {
        let t = model.params.get_mut(name).unwrap();
        *t = Tensor::zeros(t.shape());
    }
    let batch = random_batch(3, 6, 6);
    let mut g = Graph::new(0, false);
    let b = model.params.bind_frozen(&mut g);
    let x = model.embed(&mut g, &b, &batch).unwrap();
    let z = model.encode(&mut g, &b, x).unwrap();
    let y = model.decoder_input(&mut g, x).unwrap();
    let out = model.decoder_layer(&mut g, &b, 0, y, z).unwrap();
    assert_eq!(g.shape(out), &[3, 4, 8]);

    // rebuild the two attention branches by hand and normalise their sum
    use stratlab_informer::attention::{multi_head, AttentionKind, HeadWeights};
    let hw = |p: &str| HeadWeights {
        wq: b.var(&format!("{p}.wq")).unwrap(),
        wk: b.var(&format!("{p}.wk")).unwrap(),
        wv: b.var(&format!("{p}.wv")).unwrap(),
    };
    let ln = |g: &mut Graph<f64>, n: u8, x| {
        let gain = b.var(&format!("dec0.ln{n}.g")).unwrap();
        let bias = b.var(&format!("dec0.ln{n}.b")).unwrap();
        g.layer_norm(x, gain, bias).unwrap()
    };
    let s = multi_head(&mut g, y, y, hw("dec0.self"), 2, AttentionKind::ProbSparse { factor: 5.0 }).unwrap();
    let s = g.add(s, y).unwrap();
    let y1 = ln(&mut g, 1, s);
    let c = multi_head(&mut g, y1, z, hw("dec0.cross"), 2, AttentionKind::Dense).unwrap();
    let c = g.add(c, y1).unwrap();
    let y2 = ln(&mut g, 2, c);
    let sum = g.add(y1, y2).unwrap();
    let want = ln(&mut g, 3, sum);
    assert!(g.value(out).max_abs_diff(g.value(want)) < 1e-12);
}

#[test]
fn inference_is_deterministic_and_batch_equivariant() {
    let cfg = InformerConfig {
        dropout: 0.3,
        ..micro_config(LossKind::Quantile)
    };
    let model = InformerModel::<f64>::new(cfg, spec()).unwrap();
    let batch = random_batch(4, 6, 8);
    let a = model.predict_batch(&batch).unwrap();
    assert_eq!(a, model.predict_batch(&batch).unwrap());

    let perm = [2usize, 0, 3, 1];
    let mut shuffled = batch.clone();
    let (n, r) = (6, 3);
    for (dst, &src) in perm.iter().enumerate() {
        shuffled.real[dst * n * r..(dst + 1) * n * r].copy_from_slice(&batch.real[src * n * r..(src + 1) * n * r]);
        for j in 0..2 {
            shuffled.cats[j][dst * n..(dst + 1) * n].copy_from_slice(&batch.cats[j][src * n..(src + 1) * n]);
        }
        shuffled.targets[dst] = batch.targets[src];
    }
    let b = model.predict_batch(&shuffled).unwrap();
    for (dst, &src) in perm.iter().enumerate() {
        for q in 0..13 {
            assert!((b[dst * 13 + q] - a[src * 13 + q]).abs() < 1e-14);
        }
    }
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let model = InformerModel::<f64>::new(micro_config(LossKind::Gmadl), spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    model.save(&path, serde_json::json!({"window": 1})).unwrap();
    let (back, extra) = InformerModel::<f64>::load(&path).unwrap();
    assert_eq!(extra["window"], 1);
    assert_eq!(back.config, model.config);
    let batch = random_batch(3, 6, 9);
    assert_eq!(back.predict_batch(&batch).unwrap(), model.predict_batch(&batch).unwrap());
}

#[test]
fn runs_in_single_precision() {
    let model = InformerModel::<f32>::new(micro_config(LossKind::Rmse), spec()).unwrap();
    let out = model.predict_batch(&random_batch(2, 6, 10)).unwrap();
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|v| v.is_finite()));
}
