//! Attention rollout through encoder, latent refinement and decoder.

use crate::error::{Error, Result};
use crate::perceiver::AttentionTrace;
use crate::tensor::Tensor;

/// Weight of the raw attention map when mixed with the identity.
pub const ROLLOUT_MIX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Attribution of the output to every input token; sums to 1.
    pub token_scores: Vec<f64>,
    /// Distinct view indices, ascending.
    pub views: Vec<usize>,
    /// Importance of each entry of `views`; sums to 1.
    pub importance: Vec<f64>,
}

impl Rollout {
    /// View with the largest importance (first on ties).
    pub fn top_view(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.importance.iter().enumerate() {
            if s > self.importance[best] {
                best = i;
            }
        }
        self.views[best]
    }
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// `r · A` for a row vector `r` and a matrix `A`.
fn row_times(r: &[f64], a: &Tensor<f64>) -> Vec<f64> {
    let mut out = vec![0.0; a.cols()];
    for (i, &ri) in r.iter().enumerate() {
        if ri != 0.0 {
            for (o, &w) in out.iter_mut().zip(a.row(i)) {
                *o += ri * w;
            }
        }
    }
    out
}

/// `A_dec · Π normalize(m·A + (1−m)·I) · A_enc`, then summed per view.
pub fn attention_rollout(trace: &AttentionTrace) -> Result<Rollout> {
    let enc = trace.encoder.as_ref().ok_or_else(|| Error::contract("rollout trace lacks encoder attention"))?;
    let dec = trace.decoder.as_ref().ok_or_else(|| Error::contract("rollout trace lacks decoder attention"))?;
    if trace.latent.len() != trace.expected_latent {
        return Err(Error::contract(format!(
            "rollout trace holds {} latent maps, expected {}",
            trace.latent.len(),
            trace.expected_latent
        )));
    }
    if enc.cols() != trace.token_views.len() {
        return Err(Error::contract("encoder attention width differs from token count"));
    }
    let nz = enc.rows();
    let mut r = dec.row(0).to_vec();
    if r.len() != nz {
        return Err(Error::contract("decoder attention width differs from latent count"));
    }
    // The decoder reads the last latent state, so the product is applied
    // from the last layer back to the first.
    for a in trace.latent.iter().rev() {
        let mut mixed = vec![0.0; nz * nz];
        for i in 0..nz {
            let row = &mut mixed[i * nz..(i + 1) * nz];
            for (j, m) in row.iter_mut().enumerate() {
                *m = ROLLOUT_MIX * a.at(i, j) + if i == j { 1.0 - ROLLOUT_MIX } else { 0.0 };
            }
            normalize(row);
        }
        r = row_times(&r, &Tensor::new(&[nz, nz], mixed)?);
    }
    let mut token_scores = row_times(&r, enc);
    normalize(&mut token_scores);

    let mut views = trace.token_views.clone();
    views.sort_unstable();
    views.dedup();
    let mut importance = vec![0.0; views.len()];
    for (&v, &s) in trace.token_views.iter().zip(&token_scores) {
        let slot = views.binary_search(&v).expect("view collected above");
        importance[slot] += s;
    }
    normalize(&mut importance);
    Ok(Rollout { token_scores, views, importance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(rows: usize, cols: usize) -> Tensor<f64> {
        Tensor::full(&[rows, cols], 1.0 / cols as f64)
    }

    #[test]
    fn uniform_attention_weights_views_by_token_count() {
        let trace = AttentionTrace {
            encoder: Some(uniform(4, 12)),
            latent: vec![uniform(4, 4); 4],
            decoder: Some(uniform(1, 4)),
            expected_latent: 4,
            token_views: (0..12).map(|t| t / 4).collect(),
        };
        let r = attention_rollout(&trace).unwrap();
        assert_eq!(r.views, vec![0, 1, 2]);
        for s in &r.importance {
            assert!((s - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_stage_is_contract_error() {
        let trace = AttentionTrace {
            encoder: Some(uniform(2, 4)),
            latent: vec![uniform(2, 2)],
            decoder: None,
            expected_latent: 1,
            token_views: vec![0; 4],
        };
        assert!(matches!(attention_rollout(&trace), Err(Error::Contract(_))));
        let trace = AttentionTrace { decoder: Some(uniform(1, 2)), expected_latent: 2, ..trace };
        assert!(matches!(attention_rollout(&trace), Err(Error::Contract(_))));
    }
}
