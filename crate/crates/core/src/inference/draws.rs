use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::InferenceError;

/// Per-chain sampler statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    /// Mean acceptance probability (HMC) or MH acceptance rate (Gibbs).
    pub accept_rate: f64,
    pub divergences: usize,
    pub step_size: f64,
    pub n_leapfrog: usize,
    #[serde(skip)]
    pub inv_metric: Vec<f64>,
}

/// Named draws stored as `chains x iterations x dim`.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    names: Vec<String>,
    index: HashMap<String, usize>,
    iterations: usize,
    chains: Vec<Vec<f64>>,
    stats: Vec<ChainStats>,
}

impl PosteriorDraws {
    /// `chains[c]` holds `iterations * names.len()` values, iteration-major.
    pub fn new(
        names: Vec<String>,
        chains: Vec<Vec<f64>>,
        iterations: usize,
        stats: Vec<ChainStats>,
    ) -> Result<Self, InferenceError> {
        let dim = names.len();
        if chains.is_empty() || iterations == 0 {
            return Err(InferenceError::EmptyDraws);
        }
        if let Some(c) = chains.iter().position(|c| c.len() != iterations * dim) {
            return Err(InferenceError::Shape(format!("chain {c} has {} values, expected {}", chains[c].len(), iterations * dim)));
        }
        let mut index = HashMap::with_capacity(dim);
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(InferenceError::Shape(format!("duplicate parameter `{n}`")));
            }
        }
        let stats = if stats.len() == chains.len() { stats } else { vec![ChainStats::default(); chains.len()] };
        Ok(Self { names, index, iterations, chains, stats })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_iterations(&self) -> usize {
        self.iterations
    }

    pub fn stats(&self) -> &[ChainStats] {
        &self.stats
    }

    pub fn total_divergences(&self) -> usize {
        self.stats.iter().map(|s| s.divergences).sum()
    }

    pub fn index_of(&self, name: &str) -> Result<usize, InferenceError> {
        self.index.get(name).copied().ok_or_else(|| InferenceError::UnknownParameter(name.to_owned()))
    }

    /// Indices of parameters whose name starts with `prefix` (e.g. `"pi["`), in order.
    pub fn indices_with_prefix(&self, prefix: &str) -> Vec<usize> {
        self.names.iter().enumerate().filter(|(_, n)| n.starts_with(prefix)).map(|(i, _)| i).collect()
    }

    /// Full parameter vector of one draw.
    pub fn draw(&self, chain: usize, iteration: usize) -> &[f64] {
        let d = self.dim();
        &self.chains[chain][iteration * d..(iteration + 1) * d]
    }

    /// All draws, chain after chain.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        let d = self.dim();
        self.chains.iter().flat_map(move |c| c.chunks_exact(d))
    }

    pub fn chain_values(&self, chain: usize, param: usize) -> Vec<f64> {
        let d = self.dim();
        self.chains[chain].iter().skip(param).step_by(d).copied().collect()
    }

    pub fn param_chains(&self, name: &str) -> Result<Vec<Vec<f64>>, InferenceError> {
        let k = self.index_of(name)?;
        Ok((0..self.n_chains()).map(|c| self.chain_values(c, k)).collect())
    }

    pub fn pooled(&self, name: &str) -> Result<Vec<f64>, InferenceError> {
        Ok(self.param_chains(name)?.concat())
    }

    pub fn pooled_index(&self, param: usize) -> Vec<f64> {
        (0..self.n_chains()).flat_map(|c| self.chain_values(c, param)).collect()
    }

    /// Keeps only the listed parameters.
    pub fn select(&self, params: &[usize]) -> PosteriorDraws {
        let d = self.dim();
        let names = params.iter().map(|&i| self.names[i].clone()).collect();
        let chains = self
            .chains
            .iter()
            .map(|c| c.chunks_exact(d).flat_map(|row| params.iter().map(move |&i| row[i])).collect())
            .collect();
        PosteriorDraws::new(names, chains, self.iterations, self.stats.clone()).expect("selection keeps shape")
    }

    /// Long format: `chain,iteration,parameter,value`.
    pub fn write_csv(&self, writer: impl Write) -> Result<(), InferenceError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["chain", "iteration", "parameter", "value"]).map_err(io_err)?;
        for c in 0..self.n_chains() {
            for it in 0..self.iterations {
                let (cs, is) = (c.to_string(), it.to_string());
                for (name, v) in self.names.iter().zip(self.draw(c, it)) {
                    w.write_record([cs.as_str(), is.as_str(), name.as_str(), &v.to_string()]).map_err(io_err)?;
                }
            }
        }
        w.flush().map_err(|e| InferenceError::Io(e.to_string()))
    }

    /// Reads the long format; parameters keep first-appearance order.
    pub fn read_csv(reader: impl Read) -> Result<Self, InferenceError> {
        #[derive(Deserialize)]
        struct Row {
            chain: usize,
            iteration: usize,
            parameter: String,
            value: f64,
        }
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut rows = Vec::new();
        for r in csv::Reader::from_reader(reader).deserialize::<Row>() {
            let r = r.map_err(io_err)?;
            let k = *index.entry(r.parameter.clone()).or_insert_with(|| {
                names.push(r.parameter.clone());
                names.len() - 1
            });
            rows.push((r.chain, r.iteration, k, r.value));
        }
        let n_chains = rows.iter().map(|r| r.0 + 1).max().ok_or(InferenceError::EmptyDraws)?;
        let iterations = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let d = names.len();
        let mut chains = vec![vec![f64::NAN; iterations * d]; n_chains];
        for (c, it, k, v) in rows {
            chains[c][it * d + k] = v;
        }
        if chains.iter().flatten().any(|v| v.is_nan()) {
            return Err(InferenceError::Shape("draws file is not rectangular".into()));
        }
        PosteriorDraws::new(names, chains, iterations, Vec::new())
    }
}

fn io_err(e: csv::Error) -> InferenceError {
    InferenceError::Io(e.to_string())
}
