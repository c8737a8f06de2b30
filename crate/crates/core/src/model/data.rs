use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::config::DataConfig;

/// Training and held-out token streams.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab_size: usize,
    pub train: Vec<u32>,
    pub eval: Vec<u32>,
}

impl Dataset {
    pub fn new(vocab_size: usize, train: Vec<u32>, eval: Vec<u32>) -> Result<Self> {
        if let Some(&bad) = train.iter().chain(&eval).find(|&&t| t as usize >= vocab_size) {
            return Err(Error::Input(format!("token {bad} outside vocabulary of {vocab_size}")));
        }
        Ok(Self { vocab_size, train, eval })
    }

    /// Synthesizes (or reads) the corpus a config describes. Synthetic
    /// corpora draw from a stream derived from `seed`.
    pub fn from_config(cfg: &DataConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed).split(7);
        match cfg {
            DataConfig::Repeat {
                pattern_len,
                train_tokens,
                eval_tokens,
            } => {
                if *pattern_len == 0 || *pattern_len > vocab_size {
                    return Err(Error::Config(format!(
                        "pattern_len={pattern_len} must be in 1..={vocab_size}"
                    )));
                }
                let mut ids: Vec<u32> = (0..vocab_size as u32).collect();
                rng.shuffle(&mut ids);
                let pattern = &ids[..*pattern_len];
                let cycle = |n: usize, phase: usize| (0..n).map(|i| pattern[(i + phase) % pattern.len()]).collect();
                Self::new(vocab_size, cycle(*train_tokens, 0), cycle(*eval_tokens, *train_tokens))
            }
            DataConfig::Markov {
                branching,
                order,
                train_tokens,
                eval_tokens,
            } => {
                if *branching == 0 || *branching > vocab_size {
                    return Err(Error::Config(format!("branching={branching} must be in 1..={vocab_size}")));
                }
                let chain = MarkovChain::random_order(vocab_size, *order, *branching, &mut rng)?;
                let mut stream = chain.sample(train_tokens + eval_tokens, &mut rng);
                let eval = stream.split_off(*train_tokens);
                Self::new(vocab_size, stream, eval)
            }
            DataConfig::Bytes { path, eval_fraction } => Self::from_bytes_file(path, vocab_size, *eval_fraction),
        }
    }

    /// Raw bytes as tokens; the last `eval_fraction` is held out.
    pub fn from_bytes_file(path: &Path, vocab_size: usize, eval_fraction: f64) -> Result<Self> {
        if vocab_size < 256 {
            return Err(Error::Config(format!("byte data needs vocab_size >= 256, got {vocab_size}")));
        }
        let bytes = std::fs::read(path)?;
        Self::split(vocab_size, bytes.into_iter().map(u32::from).collect(), eval_fraction)
    }

    /// Whitespace-separated token ids; the last `eval_fraction` is held out.
    pub fn from_token_file(path: &Path, vocab_size: usize, eval_fraction: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let tokens = text
            .split_whitespace()
            .map(|w| w.parse::<u32>().map_err(|_| Error::Input(format!("bad token id `{w}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::split(vocab_size, tokens, eval_fraction)
    }

    /// `.tok` files hold token ids, anything else is read as bytes.
    pub fn from_file(path: &Path, vocab_size: usize, eval_fraction: f64) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tok") => Self::from_token_file(path, vocab_size, eval_fraction),
            _ => Self::from_bytes_file(path, vocab_size, eval_fraction),
        }
    }

    fn split(vocab_size: usize, mut tokens: Vec<u32>, eval_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::Config(format!("eval_fraction={eval_fraction} must be in [0, 1)")));
        }
        if tokens.is_empty() {
            return Err(Error::EmptyInput("data file holds no tokens".into()));
        }
        let n_eval = (tokens.len() as f64 * eval_fraction).round() as usize;
        let eval = tokens.split_off(tokens.len() - n_eval);
        Self::new(vocab_size, tokens, eval)
    }

    /// `batch_size` windows of `seq_len` tokens at random offsets of the
    /// training stream.
    pub fn sample_batch(&self, batch_size: usize, seq_len: usize, rng: &mut Rng) -> Result<Vec<Vec<u32>>> {
        if self.train.len() < 2 {
            return Err(Error::EmptyInput("training stream shorter than two tokens".into()));
        }
        let len = seq_len.min(self.train.len());
        let starts = self.train.len() - len + 1;
        Ok((0..batch_size)
            .map(|_| {
                let s = rng.below(starts);
                self.train[s..s + len].to_vec()
            })
            .collect())
    }

    /// Held-out stream cut into consecutive windows.
    pub fn eval_sequences(&self, seq_len: usize) -> Vec<Vec<u32>> {
        windows(&self.eval, seq_len)
    }
}

/// Consecutive non-overlapping windows of at most `seq_len` tokens; a
/// trailing window shorter than two tokens is dropped.
pub fn windows(tokens: &[u32], seq_len: usize) -> Vec<Vec<u32>> {
    tokens
        .chunks(seq_len.max(2))
        .filter(|c| c.len() >= 2)
        .map(<[u32]>::to_vec)
        .collect()
}

/// Sparse Markov chain of order `order`: each context of the last `order`
/// tokens moves to one of `branching` successors with fixed random
/// probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain {
    pub vocab_size: usize,
    pub order: usize,
    /// Indexed by context, `Σ_j token[t−j]·V^(j−1)` for `j = 1..=order`.
    pub successors: Vec<Vec<(u32, f64)>>,
}

/// Largest number of contexts a chain may enumerate.
pub const MAX_CONTEXTS: usize = 1 << 20;

impl MarkovChain {
    pub fn random(vocab_size: usize, branching: usize, rng: &mut Rng) -> Self {
        Self::random_order(vocab_size, 1, branching, rng).expect("order 1 always fits")
    }

    pub fn random_order(vocab_size: usize, order: usize, branching: usize, rng: &mut Rng) -> Result<Self> {
        let contexts = (order > 0)
            .then(|| vocab_size.checked_pow(order as u32))
            .flatten()
            .filter(|&c| c <= MAX_CONTEXTS)
            .ok_or_else(|| Error::Config(format!("markov order {order} over {vocab_size} tokens is out of range")))?;
        let successors = (0..contexts)
            .map(|_| {
                let mut ids: Vec<u32> = (0..vocab_size as u32).collect();
                rng.shuffle(&mut ids);
                let w: Vec<f64> = (0..branching).map(|_| 0.25 + rng.uniform()).collect();
                let z: f64 = w.iter().sum();
                ids[..branching].iter().zip(w).map(|(&s, p)| (s, p / z)).collect()
            })
            .collect();
        Ok(Self {
            vocab_size,
            order,
            successors,
        })
    }

    /// Context index of the `order` tokens ending `history`.
    pub fn context(&self, history: &[u32]) -> usize {
        history[history.len() - self.order..]
            .iter()
            .rev()
            .fold((0usize, 1usize), |(acc, scale), &t| (acc + t as usize * scale, scale * self.vocab_size))
            .0
    }

    /// `n` tokens starting from an all-zero context.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<u32> {
        let mut out = vec![0u32; self.order.min(n)];
        while out.len() < n {
            let u = rng.uniform();
            let succ = &self.successors[self.context(&out)];
            let mut next = succ[succ.len() - 1].0;
            let mut acc = 0.0;
            for &(s, p) in succ {
                acc += p;
                if u < acc {
                    next = s;
                    break;
                }
            }
            out.push(next);
        }
        out
    }

    /// Entropy rate in nats under the empirical context frequencies of `stream`.
    pub fn entropy_rate(&self, stream: &[u32]) -> f64 {
        if stream.len() < self.order {
            return 0.0;
        }
        let mut counts = vec![0usize; self.successors.len()];
        for end in self.order..=stream.len() {
            counts[self.context(&stream[..end])] += 1;
        }
        let n = (stream.len() - self.order + 1) as f64;
        counts
            .iter()
            .zip(&self.successors)
            .map(|(&c, succ)| c as f64 / n * succ.iter().map(|(_, p)| -p * p.ln()).sum::<f64>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeat_pattern_is_periodic_and_distinct() {
        let d = Dataset::from_config(
            &DataConfig::Repeat {
                pattern_len: 5,
                train_tokens: 20,
                eval_tokens: 7,
            },
            8,
            1,
        )
        .unwrap();
        for i in 5..20 {
            assert_eq!(d.train[i], d.train[i - 5]);
        }
        let mut p = d.train[..5].to_vec();
        p.sort();
        p.dedup();
        assert_eq!(p.len(), 5);
        assert_eq!(d.eval[0], d.train[0]);
    }

    #[test]
    fn markov_stream_follows_chain() {
        let cfg = DataConfig::Markov {
            branching: 2,
            order: 1,
            train_tokens: 500,
            eval_tokens: 100,
        };
        let a = Dataset::from_config(&cfg, 10, 4).unwrap();
        assert_eq!(a, Dataset::from_config(&cfg, 10, 4).unwrap());
        assert_ne!(a, Dataset::from_config(&cfg, 10, 5).unwrap());
        let mut rng = Rng::new(4).split(7);
        let chain = MarkovChain::random(10, 2, &mut rng);
        for w in a.train.windows(2) {
            assert!(chain.successors[w[0] as usize].iter().any(|(s, _)| *s == w[1]));
        }
        let h = chain.entropy_rate(&a.train);
        assert!(h > 0.0 && h <= 2f64.ln() + 1e-12);
    }

    #[test]
    fn second_order_stream_follows_pairs() {
        let cfg = DataConfig::Markov {
            branching: 2,
            order: 2,
            train_tokens: 2000,
            eval_tokens: 10,
        };
        let d = Dataset::from_config(&cfg, 6, 9).unwrap();
        let chain = MarkovChain::random_order(6, 2, 2, &mut Rng::new(9).split(7)).unwrap();
        assert_eq!(chain.successors.len(), 36);
        assert_eq!(chain.context(&[4, 1, 3]), 1 * 6 + 3);
        for w in d.train.windows(3) {
            assert!(chain.successors[chain.context(&w[..2])].iter().any(|(s, _)| *s == w[2]));
        }
        let h = chain.entropy_rate(&d.train);
        assert!(h > 0.0 && h <= 2f64.ln() + 1e-12);
        assert!(MarkovChain::random_order(1000, 3, 2, &mut Rng::new(0)).is_err());
        assert!(MarkovChain::random_order(5, 0, 2, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn windows_and_batches() {
        assert_eq!(windows(&[1, 2, 3, 4, 5], 2), vec![vec![1, 2], vec![3, 4]]);
        assert_eq!(windows(&[1, 2, 3, 4, 5], 3), vec![vec![1, 2, 3], vec![4, 5]]);
        let d = Dataset::new(10, (0..10).collect(), vec![]).unwrap();
        let b = d.sample_batch(3, 4, &mut Rng::new(0)).unwrap();
        assert_eq!(b.len(), 3);
        for s in &b {
            assert_eq!(s.len(), 4);
            assert!(s.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }

    #[test]
    fn file_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tok");
        std::fs::write(&p, "1 2 3\n4 5 6 7 8 9 0").unwrap();
        let d = Dataset::from_file(&p, 10, 0.2).unwrap();
        assert_eq!(d.train, vec![1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(d.eval, vec![9, 0]);
        let q = dir.path().join("x.txt");
        std::fs::write(&q, "ab").unwrap();
        assert_eq!(Dataset::from_file(&q, 256, 0.0).unwrap().train, vec![97, 98]);
        assert!(matches!(Dataset::from_file(&q, 64, 0.0), Err(Error::Config(_))));
        std::fs::write(&p, "1 x").unwrap();
        assert!(matches!(Dataset::from_file(&p, 10, 0.0), Err(Error::Input(_))));
        std::fs::write(&p, "1 12").unwrap();
        assert!(matches!(Dataset::from_file(&p, 10, 0.0), Err(Error::Input(_))));
    }
}
