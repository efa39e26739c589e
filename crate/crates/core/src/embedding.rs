//! Tensor-product token embeddings.
//!
//! Each token owns `order` small factor vectors of length `site_dim`; its
//! embedding is their Kronecker product, a vector of length
//! `site_dim^order` that costs only `order * site_dim` parameters. Token
//! embeddings are projected to `d_model` and mean-pooled into a single
//! sequence vector; the unpooled rows are kept for attention.

use rand::Rng;

use crate::corpus::PAD;
use crate::nn::{Dense, Graph, NnError, ParamId, ParamSet, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KetEmbedding {
    /// `(vocab * order) x site_dim`; row `t * order + j` is site `j` of token `t`.
    pub factors: ParamId,
    pub projection: Dense,
    pub vocab_size: usize,
    pub order: usize,
    pub site_dim: usize,
    pub d_model: usize,
}

/// Pooled vector plus the per-position rows it was pooled from.
#[derive(Debug, Clone)]
pub struct SequenceEmbedding {
    /// `1 x d_model`.
    pub pooled: Var,
    /// `L x d_model`.
    pub rows: Var,
    /// `false` for PAD positions.
    pub keep: Vec<bool>,
}

impl KetEmbedding {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        vocab_size: usize,
        order: usize,
        site_dim: usize,
        d_model: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if order == 0 || site_dim == 0 {
            return Err(NnError::Shape(format!(
                "embedding order {order} and site dimension {site_dim} must be positive"
            )));
        }
        let bound = 1.0 / (site_dim as f64).sqrt();
        let factors = params.add(
            "embedding.factors",
            Tensor::uniform(vocab_size * order, site_dim, bound, rng),
        );
        let full = site_dim.pow(order as u32);
        let projection = Dense::new(
            params,
            "embedding.projection",
            full,
            d_model,
            1.0 / (full as f64).sqrt(),
            rng,
        );
        Ok(KetEmbedding {
            factors,
            projection,
            vocab_size,
            order,
            site_dim,
            d_model,
        })
    }

    /// Length of one token's product vector.
    pub fn token_dim(&self) -> usize {
        self.site_dim.pow(self.order as u32)
    }

    /// Stored factor parameters per token.
    pub fn params_per_token(&self) -> usize {
        self.order * self.site_dim
    }

    pub fn site_factor<'a>(&self, params: &'a ParamSet, token: usize, site: usize) -> &'a [f64] {
        params.get(self.factors).row_slice(token * self.order + site)
    }

    /// Product vector of one token, without a tape.
    pub fn embed_token(&self, params: &ParamSet, token: usize) -> Result<Vec<f64>, NnError> {
        if token >= self.vocab_size {
            return Err(NnError::Shape(format!(
                "token {token} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        let mut acc = vec![1.0];
        for site in 0..self.order {
            let f = self.site_factor(params, token, site);
            acc = acc
                .iter()
                .flat_map(|a| f.iter().map(move |b| a * b))
                .collect();
        }
        Ok(acc)
    }

    /// `L x site_dim^order` product vectors on the tape.
    pub fn embed_tokens(&self, g: &mut Graph, params: &ParamSet, ids: &[usize]) -> Result<Var, NnError> {
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.vocab_size) {
            return Err(NnError::Shape(format!(
                "token {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        let table = g.param(params, self.factors);
        let mut acc: Option<Var> = None;
        for site in 0..self.order {
            let rows: Vec<usize> = ids.iter().map(|&t| t * self.order + site).collect();
            let s = g.gather(table, &rows)?;
            acc = Some(match acc {
                None => s,
                Some(prev) => g.row_kron(prev, s)?,
            });
        }
        Ok(acc.expect("order >= 1"))
    }

    /// Project every token and mean-pool over non-PAD positions.
    pub fn embed_sequence(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        ids: &[usize],
    ) -> Result<SequenceEmbedding, NnError> {
        if ids.is_empty() {
            return Err(NnError::Degenerate("empty sequence".into()));
        }
        let keep: Vec<bool> = ids.iter().map(|&t| t != PAD).collect();
        if !keep.iter().any(|&k| k) {
            return Err(NnError::Degenerate("sequence is all padding".into()));
        }
        let products = self.embed_tokens(g, params, ids)?;
        let rows = self.projection.forward(g, params, products)?;
        let pooled = g.mean_rows(rows, &keep)?;
        Ok(SequenceEmbedding { pooled, rows, keep })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_differences, first_mismatch};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(vocab: usize, order: usize, site: usize, d_model: usize, seed: u64) -> (ParamSet, KetEmbedding) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let e = KetEmbedding::new(&mut params, vocab, order, site, d_model, &mut rng).unwrap();
        (params, e)
    }

    fn set_factors(params: &mut ParamSet, e: &KetEmbedding, token: usize, sites: &[&[f64]]) {
        let t = params.get_mut(e.factors);
        for (j, f) in sites.iter().enumerate() {
            let r = token * e.order + j;
            t.data_mut()[r * e.site_dim..(r + 1) * e.site_dim].copy_from_slice(f);
        }
    }

    /// Independent Kronecker product: index digits in base `site_dim`,
    /// most significant digit = first site.
    fn kron_oracle(sites: &[Vec<f64>]) -> Vec<f64> {
        let d = sites[0].len();
        let n = d.pow(sites.len() as u32);
        (0..n)
            .map(|mut idx| {
                let mut digits = vec![0; sites.len()];
                for slot in digits.iter_mut().rev() {
                    *slot = idx % d;
                    idx /= d;
                }
                digits
                    .iter()
                    .zip(sites)
                    .map(|(&k, f)| f[k])
                    .product()
            })
            .collect()
    }

    #[test]
    fn basis_and_ones() {
        let (mut params, e) = layer(5, 2, 2, 3, 0);
        set_factors(&mut params, &e, 4, &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(e.embed_token(&params, 4).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
        set_factors(&mut params, &e, 4, &[&[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(e.embed_token(&params, 4).unwrap(), vec![1.0; 4]);
        assert!(e.embed_token(&params, 5).is_err());
    }

    #[test]
    fn matches_kronecker_oracle() {
        for order in 1..=3 {
            for site in 2..=4 {
                let (params, e) = layer(6, order, site, 2, (order * 10 + site) as u64);
                for token in 0..6 {
                    let sites: Vec<Vec<f64>> = (0..order)
                        .map(|j| e.site_factor(&params, token, j).to_vec())
                        .collect();
                    let expected = kron_oracle(&sites);
                    let got = e.embed_token(&params, token).unwrap();
                    assert_eq!(got.len(), site.pow(order as u32));
                    for (a, b) in got.iter().zip(&expected) {
                        assert!((a - b).abs() <= 1e-12);
                    }

                    let mut g = Graph::new();
                    let rows = e.embed_tokens(&mut g, &params, &[token]).unwrap();
                    for (a, b) in g.value(rows).data().iter().zip(&expected) {
                        assert!((a - b).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn parameter_count_is_linear_in_order() {
        let (params, e) = layer(7, 4, 4, 8, 1);
        assert_eq!(params.get(e.factors).len(), 7 * 4 * 4);
        assert_eq!(e.params_per_token(), 16);
        assert_eq!(e.token_dim(), 256);
    }

    #[test]
    fn site_scaling_is_linear() {
        let (mut params, e) = layer(4, 3, 3, 2, 2);
        let before = e.embed_token(&params, 2).unwrap();
        let c = -2.0;
        let r = 2 * e.order + 1;
        params.get_mut(e.factors).data_mut()[r * 3..r * 3 + 3]
            .iter_mut()
            .for_each(|v| *v *= c);
        let after = e.embed_token(&params, 2).unwrap();
        for (a, b) in after.iter().zip(&before) {
            assert_eq!(*a, b * c);
        }
    }

    #[test]
    fn init_is_bounded() {
        let (params, e) = layer(10, 4, 4, 8, 3);
        assert!(params.get(e.factors).data().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn single_token_pool_equals_row() {
        let (params, e) = layer(6, 2, 3, 5, 4);
        let mut g = Graph::new();
        let s = e.embed_sequence(&mut g, &params, &[3]).unwrap();
        assert_eq!(g.value(s.pooled).data(), g.value(s.rows).data());
    }

    #[test]
    fn pooling_is_permutation_invariant() {
        let (params, e) = layer(8, 2, 3, 5, 5);
        let mut g = Graph::new();
        let a = e.embed_sequence(&mut g, &params, &[1, 4, 5, 6, 2]).unwrap();
        let b = e.embed_sequence(&mut g, &params, &[1, 6, 5, 4, 2]).unwrap();
        for (x, y) in g.value(a.pooled).data().iter().zip(g.value(b.pooled).data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(g.value(a.rows).row_slice(1), g.value(b.rows).row_slice(3));
    }

    #[test]
    fn padding_is_ignored_and_all_pad_fails() {
        let (params, e) = layer(8, 2, 3, 5, 6);
        let mut g = Graph::new();
        let a = e.embed_sequence(&mut g, &params, &[1, 4, 2]).unwrap();
        let b = e.embed_sequence(&mut g, &params, &[1, 4, 2, PAD, PAD]).unwrap();
        for (x, y) in g.value(a.pooled).data().iter().zip(g.value(b.pooled).data()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(matches!(
            e.embed_sequence(&mut g, &params, &[PAD, PAD]),
            Err(NnError::Degenerate(_))
        ));
    }

    #[test]
    fn factor_gradient_matches_finite_differences() {
        let (params, e) = layer(7, 3, 2, 4, 8);
        let ids = [1, 5, 6, 5, 2];
        let readout = [0.3, -1.1, 0.7, 2.0];
        let f = |p: &ParamSet| {
            let mut g = Graph::new();
            let s = e.embed_sequence(&mut g, p, &ids).unwrap();
            let t = g.tanh(s.pooled);
            g.value(t).data().iter().zip(readout).map(|(a, b)| a * b).sum::<f64>()
        };

        let mut g = Graph::new();
        let s = e.embed_sequence(&mut g, &params, &ids).unwrap();
        let t = g.tanh(s.pooled);
        let r = g.constant(Tensor::row(readout.to_vec()));
        let w = g.mul(t, r).unwrap();
        let root = g.sum(w);
        let grads = g.backward(root).unwrap();
        let analytic = g.param_grads(&grads, &params);

        for id in [e.factors, e.projection.weight] {
            let base = params.get(id).data().to_vec();
            let numeric = central_differences(&base, 1e-5, |x| {
                let mut p = params.clone();
                p.get_mut(id).data_mut().copy_from_slice(x);
                f(&p)
            });
            let a = analytic[id.index()].data();
            assert!(first_mismatch(a, &numeric, 1e-4, 1e-6).is_none());
        }
    }
}
