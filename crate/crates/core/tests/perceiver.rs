mod common;

use common::{param_gradcheck, random_sample};
use latentfuse::gradcheck::{five_point, relative_error, step_for};
use latentfuse::nn::CrossAttention;
use latentfuse::perceiver::PerceiverModel;
use latentfuse::training::sample_loss;
use latentfuse::{BackboneConfig, Classifier, Graph, InputSpec, MaskingStrategy, PerceiverConfig, PreparedSample};

fn toy_config() -> PerceiverConfig {
    PerceiverConfig {
        backbone: BackboneConfig { image_size: 8, patch_size: 4, sat_channels: 3, street_channels: 3, token_dim: 16 },
        num_latents: 4,
        latent_dim: 16,
        blocks: 2,
        layers: 2,
        out_dim: 16,
        mlp_ratio: 2,
        latent_heads: 4,
    }
}

fn full_input(patch: usize) -> InputSpec {
    InputSpec { mask_sat: MaskingStrategy::Full, mask_street: MaskingStrategy::Full, patch_size: patch }
}

#[test]
fn toy_model_gradients_match_finite_differences() {
    let model = PerceiverModel::<f64>::new(toy_config(), 11).unwrap();
    let x: PreparedSample<f64> = full_input(4).prepare(&random_sample(5, 2, 8)).unwrap();
    let worst = param_gradcheck(&model.params, |g| sample_loss(&model, g, &x));
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn every_street_count_gives_fixed_shapes() {
    let config = PerceiverConfig::default();
    let model = PerceiverModel::<f32>::new(config, 0).unwrap();
    for n in 0..=8 {
        let x: PreparedSample<f32> = full_input(8).prepare(&random_sample(n as u64, n, 32)).unwrap();
        let mut g = Graph::inference(&model.params);
        let out = model.forward_traced(&mut g, &x).unwrap();
        assert_eq!(g.value(out.logits.elements).shape(), &[1, 6]);
        assert_eq!(g.value(out.logits.materials).shape(), &[1, 7]);
        assert_eq!(out.latent_shape, [config.num_latents, config.latent_dim]);
        assert_eq!(out.trace.encoder.as_ref().unwrap().shape(), &[config.num_latents, 16 * (n + 1)]);
        assert_eq!(out.trace.latent.len(), config.blocks * config.layers);
    }
}

#[test]
fn consistent_street_permutation_leaves_logits_unchanged() {
    let model = PerceiverModel::<f64>::new(toy_config(), 3).unwrap();
    let x: PreparedSample<f64> = full_input(4).prepare(&random_sample(9, 4, 8)).unwrap();
    let logits = |x: &PreparedSample<f64>| {
        let mut g = Graph::inference(&model.params);
        let l = model.forward(&mut g, x).unwrap();
        (g.value(l.elements).clone(), g.value(l.materials).clone())
    };
    let (e0, m0) = logits(&x);
    let mut y = x.clone();
    y.street.reverse();
    y.street.swap(0, 2);
    let (e1, m1) = logits(&y);
    assert!(e0.max_abs_diff(&e1) < 1e-12);
    assert!(m0.max_abs_diff(&m1) < 1e-12);
}

#[test]
fn zero_blocks_equals_two_cross_attentions() {
    let config = PerceiverConfig { blocks: 0, ..toy_config() };
    let model = PerceiverModel::<f64>::new(config, 4).unwrap();
    assert!(model.net.block.is_empty());
    let x: PreparedSample<f64> = full_input(4).prepare(&random_sample(2, 3, 8)).unwrap();
    let mut g = Graph::inference(&model.params);
    let out = model.forward_traced(&mut g, &x).unwrap();
    let expected = out.trace.latent.len();
    assert_eq!(expected, 0);

    let mut h = Graph::inference(&model.params);
    let seq = model.embed_tokens(&mut h, &x).unwrap();
    let zq = h.param(model.net.latents);
    let manual_cross = |h: &mut Graph<'_, f64>, ca: &CrossAttention, q, kv| ca.forward(h, q, kv).unwrap().0;
    let z0 = manual_cross(&mut h, &model.net.encoder, zq, seq.tokens);
    let q = h.param(model.net.query);
    let y = manual_cross(&mut h, &model.net.decoder, q, z0);
    let e = model.net.heads.forward(&mut h, y).unwrap().elements;
    assert_eq!(g.value(out.logits.elements).data(), h.value(e).data());
}

#[test]
fn shared_block_gradient_collects_every_application() {
    // With B=2 the shared weights receive two contributions; freezing the
    // second application's effect by using B=1 must change the gradient.
    let x: PreparedSample<f64> = full_input(4).prepare(&random_sample(7, 1, 8)).unwrap();
    let grad_of = |blocks: usize| {
        let model = PerceiverModel::<f64>::new(PerceiverConfig { blocks, ..toy_config() }, 21).unwrap();
        let id = model.params.find("block.0.attn.q.weight").unwrap();
        let mut g = Graph::new(&model.params);
        let loss = sample_loss(&model, &mut g, &x).unwrap();
        let grads = g.backward(loss).unwrap();
        (model.params.len(), grads.get(id).unwrap().to_vec())
    };
    let (n1, g1) = grad_of(1);
    let (n2, g2) = grad_of(2);
    assert_eq!(n1, n2, "block count must not add parameters");
    assert!(g1.iter().zip(&g2).any(|(a, b)| (a - b).abs() > 1e-12));
}

#[test]
fn empty_token_sequence_is_contract_error() {
    let model = PerceiverModel::<f64>::new(toy_config(), 1).unwrap();
    let mut g = Graph::inference(&model.params);
    let tokens = g.input(latentfuse::Tensor::zeros(&[1, 16]));
    let seq = latentfuse::tokenizer::TokenSequence { tokens, meta: vec![] };
    assert!(matches!(model.forward_tokens(&mut g, &seq), Err(latentfuse::Error::Contract(_))));
}

#[test]
fn single_precision_gradients_track_double_precision_differences() {
    let model32 = PerceiverModel::<f32>::new(toy_config(), 13).unwrap();
    let mut model64 = PerceiverModel::<f64>::new(toy_config(), 13).unwrap();
    model64.params = model32.params.cast();
    let sample = random_sample(6, 2, 8);
    let x32: PreparedSample<f32> = full_input(4).prepare(&sample).unwrap();
    let x64: PreparedSample<f64> = full_input(4).prepare(&sample).unwrap();

    let mut g = Graph::new(&model32.params);
    let loss = sample_loss(&model32, &mut g, &x32).unwrap();
    let grads = g.backward(loss).unwrap();

    let mut probe = model64.params.clone();
    let mut worst = 0.0f64;
    for (id, p) in model64.params.iter() {
        for j in 0..p.value.numel() {
            let x = p.value.data()[j];
            let numeric = five_point(
                |v| {
                    probe.value_mut(id).data_mut()[j] = v;
                    let mut g = Graph::inference(&probe);
                    let out = sample_loss(&model64, &mut g, &x64)?;
                    g.value(out).item()
                },
                x,
                step_for(x),
            )
            .unwrap();
            probe.value_mut(id).data_mut()[j] = x;
            let analytic = grads.get(id).map_or(0.0, |g| g[j] as f64);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}
