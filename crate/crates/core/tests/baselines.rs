mod common;

use common::random_sample;
use latentfuse::baselines::{pool_views, Branch};
use latentfuse::tensor::Tensor;
use latentfuse::{
    BackboneConfig, Classifier, ConcatConfig, ConcatModel, Error, FvtConfig, FvtModel, Graph, InputSpec,
    MaskingStrategy, ParamStore, PoolMode, PreparedSample, UnimodalConfig, UnimodalModel,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

fn input() -> InputSpec {
    InputSpec { mask_sat: MaskingStrategy::Full, mask_street: MaskingStrategy::Full, patch_size: 8 }
}

fn prepared(seed: u64, n: usize) -> PreparedSample<f64> {
    input().prepare(&random_sample(seed, n, 32)).unwrap()
}

fn pooled(rows: &[Vec<f64>], mode: PoolMode) -> Vec<f64> {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::inference(&store);
    let flat: Vec<f64> = rows.concat();
    let x = g.input(Tensor::new(&[rows.len(), rows[0].len()], flat).unwrap());
    let y = pool_views(&mut g, x, mode, None).unwrap();
    g.value(y).data().to_vec()
}

fn logits<M: Classifier<f64>>(model: &M, x: &PreparedSample<f64>) -> Vec<f64> {
    let mut g = Graph::inference(model.params());
    let l = model.forward(&mut g, x).unwrap();
    let mut v = g.value(l.elements).data().to_vec();
    v.extend_from_slice(g.value(l.materials).data());
    v
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn max_and_mean_hand_values() {
    let rows = vec![vec![1.0, -2.0], vec![0.0, 5.0]];
    assert_eq!(pooled(&rows, PoolMode::Max), vec![1.0, 5.0]);
    assert_eq!(pooled(&rows, PoolMode::Mean), vec![0.5, 1.5]);
}

#[test]
fn single_view_is_identity_for_every_mode() {
    let mut store = ParamStore::<f64>::new();
    let scorer = store.add("scorer", Tensor::from_f64(&[3, 1], &[0.3, -1.0, 2.0]).unwrap(), latentfuse::ParamGroup::Heads);
    let row = [0.25, -4.0, 7.5];
    for mode in [PoolMode::Max, PoolMode::Mean, PoolMode::Attention] {
        let mut g = Graph::inference(&store);
        let x = g.input(Tensor::from_f64(&[1, 3], &row).unwrap());
        let y = pool_views(&mut g, x, mode, Some(scorer)).unwrap();
        assert_eq!(g.value(y).data(), &row, "{mode}");
    }
}

#[test]
fn max_and_mean_are_invariant_under_all_120_orderings() {
    let mut rng = SplitMix64::seed_from_u64(4);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let perms = permutations(5);
    assert_eq!(perms.len(), 120);
    for mode in [PoolMode::Max, PoolMode::Mean] {
        let base = pooled(&rows, mode);
        for p in &perms {
            let shuffled: Vec<Vec<f64>> = p.iter().map(|&i| rows[i].clone()).collect();
            assert_eq!(pooled(&shuffled, mode), base, "{mode} {p:?}");
        }
    }
}

#[test]
fn empty_pool_is_contract_error() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::inference(&store);
    assert!(matches!(
        latentfuse::baselines::pool_feature_list(&mut g, &[], PoolMode::Max, None),
        Err(Error::Contract(_))
    ));
}

proptest! {
    #[test]
    fn max_pool_ignores_duplicates(rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..6), dup in 0usize..6) {
        let mut with_dup = rows.clone();
        with_dup.push(rows[dup % rows.len()].clone());
        prop_assert_eq!(pooled(&rows, PoolMode::Max), pooled(&with_dup, PoolMode::Max));
    }
}

#[test]
fn satellite_branch_ignores_street_views() {
    let model = UnimodalModel::<f64>::new(
        UnimodalConfig { backbone: BackboneConfig::default(), branch: Branch::Satellite, pool: PoolMode::Max },
        1,
    )
    .unwrap();
    let x = prepared(3, 2);
    let mut y = x.clone();
    y.street = prepared(99, 5).street;
    assert_eq!(logits(&model, &x), logits(&model, &y));
    let mut z = x.clone();
    z.street.clear();
    assert_eq!(logits(&model, &x), logits(&model, &z));
}

#[test]
fn street_branch_single_view_and_duplicate_view() {
    let model = UnimodalModel::<f64>::new(
        UnimodalConfig { backbone: BackboneConfig::default(), branch: Branch::Street, pool: PoolMode::Max },
        2,
    )
    .unwrap();
    let one = prepared(5, 1);
    let mut two = one.clone();
    let mut copy = one.street[0].clone();
    copy.view_index = 2;
    two.street.push(copy);
    assert_eq!(logits(&model, &one), logits(&model, &two));

    // N=1 equals heads applied to that view's mean-pooled tokens.
    let mut g = Graph::inference(&model.params);
    let tokens = g.input(one.street[0].patches.clone());
    let tokens = model.tokenizer.forward(&mut g, tokens).unwrap();
    let f = g.tape.mean_rows(tokens).unwrap();
    let l = model.heads.forward(&mut g, f).unwrap();
    let manual = g.value(l.elements).data().to_vec();
    for (a, b) in manual.iter().zip(&logits(&model, &one)[..6]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn street_branch_without_views_is_contract_error() {
    let model = UnimodalModel::<f64>::new(
        UnimodalConfig { backbone: BackboneConfig::default(), branch: Branch::Street, pool: PoolMode::Mean },
        2,
    )
    .unwrap();
    let x = prepared(5, 0);
    let mut g = Graph::inference(&model.params);
    match model.forward(&mut g, &x) {
        Err(Error::Contract(msg)) => assert!(msg.contains("N=0"), "{msg}"),
        other => panic!("expected contract error, got {other:?}"),
    }
}

#[test]
fn concat_uses_placeholder_without_street_views() {
    let model = ConcatModel::<f64>::new(ConcatConfig { backbone: BackboneConfig::default(), pool: PoolMode::Max }, 3).unwrap();
    let x = prepared(8, 0);
    let mut g = Graph::inference(&model.params);
    let fused = model.fused(&mut g, &x).unwrap();
    let d = BackboneConfig::default().token_dim;
    assert_eq!(g.value(fused).shape(), &[1, 2 * d]);
    assert_eq!(&g.value(fused).data()[d..], model.params.value(model.placeholder).data());
}

#[test]
fn concat_with_zero_street_path_depends_only_on_satellite() {
    let mut model =
        ConcatModel::<f64>::new(ConcatConfig { backbone: BackboneConfig::default(), pool: PoolMode::Mean }, 3).unwrap();
    let d = BackboneConfig::default().token_dim;
    let w = model.params.find("head.elements.weight").unwrap();
    let wm = model.params.find("head.materials.weight").unwrap();
    // Zero the placeholder and the head rows that read the street half.
    model.params.value_mut(model.placeholder).data_mut().fill(0.0);
    for id in [w, wm] {
        let cols = model.params.value(id).cols();
        model.params.value_mut(id).data_mut()[d * cols..].fill(0.0);
    }
    let base = logits(&model, &prepared(4, 0));
    for n in 1..=4 {
        let mut x = prepared(40 + n as u64, n);
        x.satellite = prepared(4, 0).satellite;
        assert_eq!(logits(&model, &x), base);
    }
}

#[test]
fn concat_adds_only_placeholder_and_wider_heads() {
    let b = BackboneConfig::default();
    let concat = ConcatModel::<f64>::new(ConcatConfig { backbone: b, pool: PoolMode::Max }, 0).unwrap();
    let sat = UnimodalModel::<f64>::new(UnimodalConfig { backbone: b, branch: Branch::Satellite, pool: PoolMode::Max }, 0)
        .unwrap();
    let d = b.token_dim;
    let extra = concat.params.num_scalars() - sat.params.num_scalars();
    assert_eq!(extra, d + d * 13);
}

#[test]
fn fvt_runs_with_no_street_views() {
    let model = FvtModel::<f64>::new(FvtConfig::default(), 5).unwrap();
    let out = logits(&model, &prepared(2, 0));
    assert_eq!(out.len(), 13);
}

#[test]
fn fvt_with_zeroed_value_and_output_keeps_only_mlp_path() {
    let mut model = FvtModel::<f64>::new(FvtConfig::default(), 6).unwrap();
    let ids: Vec<_> = model
        .params
        .iter()
        .filter(|(_, p)| p.name.contains(".attn.v.") || p.name.contains(".attn.o."))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        model.params.value_mut(id).data_mut().fill(0.0);
    }
    let x = prepared(12, 3);
    let mut g = Graph::inference(&model.params);
    let cls = model.cls_output(&mut g, &x).unwrap();
    let got = g.value(cls).clone();

    let mut h = Graph::inference(&model.params);
    let mut z = h.param(model.cls);
    for layer in &model.layers {
        let n = layer.ln2.forward(&mut h, z).unwrap();
        let m = layer.mlp.forward(&mut h, n).unwrap();
        z = h.tape.add(z, m).unwrap();
    }
    assert!(got.max_abs_diff(h.value(z)) < 1e-12);
}

#[test]
fn fvt_logits_ignore_street_order() {
    let model = FvtModel::<f64>::new(FvtConfig::default(), 7).unwrap();
    let x = prepared(21, 3);
    let base = logits(&model, &x);
    for p in permutations(3) {
        let mut y = x.clone();
        y.street = p.iter().map(|&i| x.street[i].clone()).collect();
        for (a, b) in logits(&model, &y).iter().zip(&base) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn fused_models_accept_every_street_count() {
    let concat = ConcatModel::<f32>::new(ConcatConfig { backbone: BackboneConfig::default(), pool: PoolMode::Attention }, 1)
        .unwrap();
    let fvt = FvtModel::<f32>::new(FvtConfig::default(), 1).unwrap();
    for n in 0..=8 {
        let x: PreparedSample<f32> = input().prepare(&random_sample(n as u64, n, 32)).unwrap();
        for model in [&concat as &dyn Classifier<f32>, &fvt] {
            let mut g = Graph::inference(model.params());
            let l = model.forward(&mut g, &x).unwrap();
            assert_eq!(g.value(l.elements).shape(), &[1, 6]);
            assert_eq!(g.value(l.materials).shape(), &[1, 7]);
        }
    }
}
