use serde::{Deserialize, Serialize};

/// Post-warmup draws, chain-major: `values[(chain * draws + d) * n_params + p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawMatrix {
    chains: usize,
    draws: usize,
    names: Vec<String>,
    values: Vec<f64>,
    pub stats: Vec<ChainStats>,
}

/// Per-chain sampler bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub divergences: usize,
    pub mean_accept: f64,
    pub mean_leapfrog: f64,
    pub inv_metric: Vec<f64>,
}

impl DrawMatrix {
    pub fn new(chains: usize, draws: usize, names: Vec<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), chains * draws * names.len());
        Self { chains, draws, names, values, stats: Vec::new() }
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    /// Draws per chain.
    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn total_draws(&self) -> usize {
        self.chains * self.draws
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, chain: usize, draw: usize, param: usize) -> f64 {
        self.values[(chain * self.draws + draw) * self.names.len() + param]
    }

    /// Full parameter vector of one draw.
    pub fn row(&self, chain: usize, draw: usize) -> &[f64] {
        let p = self.names.len();
        let start = (chain * self.draws + draw) * p;
        &self.values[start..start + p]
    }

    /// Iterator over all draws, chain by chain.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.names.len().max(1))
    }

    /// One chain's trace of `param`.
    pub fn chain_trace(&self, chain: usize, param: usize) -> Vec<f64> {
        (0..self.draws).map(|d| self.get(chain, d, param)).collect()
    }

    /// All chains' traces of `param`.
    pub fn traces(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.chains).map(|c| self.chain_trace(c, param)).collect()
    }

    /// Pooled draws of `param`, chain by chain.
    pub fn column(&self, param: usize) -> Vec<f64> {
        self.rows().map(|r| r[param]).collect()
    }

    pub fn total_divergences(&self) -> usize {
        self.stats.iter().map(|s| s.divergences).sum()
    }

    /// Derives a new matrix with one value per name from each draw.
    pub fn map_rows<F>(&self, names: Vec<String>, mut f: F) -> DrawMatrix
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let k = names.len();
        let mut values = vec![0.0; self.total_draws() * k];
        for (row, out) in self.rows().zip(values.chunks_exact_mut(k.max(1))) {
            f(row, out);
        }
        let mut dm = DrawMatrix::new(self.chains, self.draws, names, values);
        dm.stats = self.stats.clone();
        dm
    }
}
