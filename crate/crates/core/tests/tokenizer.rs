use latentfuse::tokenizer::{augment_tokens, view_meta, EmbeddingTables, Modality, TokenSequence};
use latentfuse::{Error, Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

const GRID: usize = 4;
const DIM: usize = 8;

fn tables(seed: u64) -> (ParamStore<f64>, EmbeddingTables) {
    let mut store = ParamStore::new();
    let mut rng = SplitMix64::seed_from_u64(seed);
    let t = EmbeddingTables::new(&mut store, GRID, DIM, &mut rng);
    (store, t)
}

fn random_tokens(rows: usize, seed: u64) -> Tensor<f64> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    Tensor::new(&[rows, DIM], (0..rows * DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Satellite in slot 0 followed by `n` street views.
fn meta_for(n: usize) -> Vec<latentfuse::tokenizer::TokenMeta> {
    let mut meta = view_meta(0, Modality::Satellite, GRID);
    for v in 1..=n {
        meta.extend(view_meta(v, Modality::Street, GRID));
    }
    meta
}

fn augmented(store: &ParamStore<f64>, t: &EmbeddingTables, tokens: Tensor<f64>, meta: Vec<latentfuse::tokenizer::TokenMeta>) -> Tensor<f64> {
    let mut g = Graph::inference(store);
    let tokens = g.input(tokens);
    let out = augment_tokens(&mut g, &TokenSequence { tokens, meta }, t).unwrap();
    g.value(out.tokens).clone()
}

#[test]
fn zero_tables_leave_tokens_unchanged() {
    let (mut store, t) = tables(1);
    for id in [t.pos_row, t.pos_col, t.modality, t.view] {
        store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = random_tokens(3 * GRID * GRID, 2);
    assert_eq!(augmented(&store, &t, x.clone(), meta_for(2)), x);
}

#[test]
fn tokens_differing_only_in_view_differ_by_view_rows() {
    let (store, t) = tables(3);
    let row = random_tokens(1, 4);
    let x = Tensor::new(&[2, DIM], [row.data(), row.data()].concat()).unwrap();
    let meta = vec![
        latentfuse::tokenizer::TokenMeta { view_index: 2, modality: Modality::Street, grid_pos: (1, 3) },
        latentfuse::tokenizer::TokenMeta { view_index: 5, modality: Modality::Street, grid_pos: (1, 3) },
    ];
    let out = augmented(&store, &t, x, meta);
    let view = store.value(t.view);
    for k in 0..DIM {
        let got = out.at(0, k) - out.at(1, k);
        let want = view.at(2, k) - view.at(5, k);
        assert!((got - want).abs() < 1e-15, "column {k}: {got} vs {want}");
    }
}

#[test]
fn three_street_views_give_sixty_four_tokens_with_modality_rows() {
    let (store, t) = tables(5);
    let meta = meta_for(3);
    assert_eq!(meta.len(), 64);
    let zeros = Tensor::zeros(&[64, DIM]);
    let out = augmented(&store, &t, zeros, meta.clone());
    assert_eq!(out.shape(), &[64, DIM]);
    let (pr, pc, md, vw) = (store.value(t.pos_row), store.value(t.pos_col), store.value(t.modality), store.value(t.view));
    for (i, m) in meta.iter().enumerate() {
        let want_row = if m.view_index == 0 { 0 } else { 1 };
        assert_eq!(m.modality.row(), want_row);
        for k in 0..DIM {
            let want = pr.at(m.grid_pos.0, k) + pc.at(m.grid_pos.1, k) + md.at(want_row, k) + vw.at(m.view_index, k);
            assert!((out.at(i, k) - want).abs() < 1e-15);
        }
    }
}

#[test]
fn view_index_beyond_table_is_config_error() {
    let (store, t) = tables(6);
    let mut g = Graph::inference(&store);
    let tokens = g.input(random_tokens(GRID * GRID, 7));
    let seq = TokenSequence { tokens, meta: view_meta(9, Modality::Street, GRID) };
    assert!(matches!(augment_tokens(&mut g, &seq, &t), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn augmentation_commutes_with_token_perturbations(n in 0usize..=8, seed in any::<u64>()) {
        let (store, t) = tables(seed);
        let rows = (n + 1) * GRID * GRID;
        let a = random_tokens(rows, seed ^ 1);
        let b = random_tokens(rows, seed ^ 2);
        let sum = Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap();
        let lhs = augmented(&store, &t, sum, meta_for(n));
        let base = augmented(&store, &t, a, meta_for(n));
        for (l, (r, d)) in lhs.data().iter().zip(base.data().iter().zip(b.data())) {
            prop_assert!((l - (r + d)).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_street_data_and_indices_keeps_token_multiset(n in 2usize..=8, seed in any::<u64>()) {
        let (store, t) = tables(seed);
        let mut rng = SplitMix64::seed_from_u64(seed);
        let (i, j) = (rng.gen_range(1..=n), rng.gen_range(1..=n));
        let p = GRID * GRID;
        let x = random_tokens((n + 1) * p, seed ^ 3);
        let meta = meta_for(n);

        let mut swapped = x.data().to_vec();
        let mut swapped_meta = meta.clone();
        for r in 0..p {
            let (a, b) = (i * p + r, j * p + r);
            for k in 0..DIM {
                swapped.swap(a * DIM + k, b * DIM + k);
            }
            swapped_meta.swap(a, b);
        }
        let out1 = augmented(&store, &t, x, meta);
        let out2 = augmented(&store, &t, Tensor::new(&[(n + 1) * p, DIM], swapped).unwrap(), swapped_meta);
        let rows = |o: &Tensor<f64>| {
            let mut v: Vec<Vec<u64>> = (0..o.rows()).map(|r| o.row(r).iter().map(|x| x.to_bits()).collect()).collect();
            v.sort();
            v
        };
        prop_assert_eq!(rows(&out1), rows(&out2));
    }
}
