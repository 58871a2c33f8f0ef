mod common;

use common::random_sample;
use latentfuse::{AnyModel, BackboneConfig, Classifier, Error, Graph, InputSpec, MaskingStrategy, ModelKind, ModelSpec, PreparedSample};

fn spec(kind: ModelKind) -> ModelSpec {
    let backbone = BackboneConfig { image_size: 8, patch_size: 4, sat_channels: 4, street_channels: 3, token_dim: 16 };
    ModelSpec::new(kind, backbone)
}

fn logits(model: &AnyModel<f32>, x: &PreparedSample<f32>) -> Vec<f32> {
    let mut g = Graph::inference(model.params());
    let l = model.forward(&mut g, x).unwrap();
    [g.value(l.elements).data(), g.value(l.materials).data()].concat()
}

#[test]
fn every_architecture_roundtrips_bit_exact() {
    let input = InputSpec { mask_sat: MaskingStrategy::Rgbm, mask_street: MaskingStrategy::Crop, patch_size: 4 };
    let x: PreparedSample<f32> = input.prepare(&random_sample(3, 2, 8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut magics = Vec::new();
    for kind in ModelKind::ALL {
        let model = AnyModel::<f32>::build(&spec(kind), 17).unwrap();
        let bytes = model.to_bytes();
        magics.push(bytes[..4].to_vec());
        let path = dir.path().join(format!("{kind}.ckpt"));
        model.save(&path).unwrap();
        let back = AnyModel::<f32>::load(&path).unwrap();
        assert_eq!(back.kind(), kind);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.params().flatten(), model.params().flatten());
        assert_eq!(logits(&back, &x), logits(&model, &x));
    }
    magics.dedup();
    assert_eq!(magics.len(), 4, "satellite and street share the unimodal magic");
}

#[test]
fn different_seeds_give_different_weights() {
    let a = AnyModel::<f32>::build(&spec(ModelKind::Perceiver), 1).unwrap();
    let b = AnyModel::<f32>::build(&spec(ModelKind::Perceiver), 2).unwrap();
    assert_ne!(a.to_bytes(), b.to_bytes());
    assert_eq!(a.to_bytes(), AnyModel::<f32>::build(&spec(ModelKind::Perceiver), 1).unwrap().to_bytes());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = AnyModel::<f32>::build(&spec(ModelKind::Fvt), 0).unwrap().to_bytes();
    assert!(AnyModel::<f32>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut wrong = bytes.clone();
    wrong[..4].copy_from_slice(b"XXXX");
    assert!(matches!(AnyModel::<f32>::from_bytes(&wrong), Err(Error::Validation(_))));
}
