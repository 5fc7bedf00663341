//! Per-input diversity-rate selection learned with REINFORCE.
//!
//! A source is mapped to a fixed feature vector `x`, projected to
//! `h = W x`, and scored against one embedding per grid value:
//! `pi(j | x) = softmax_j(h . e_j)`. The policy is trained with the
//! likelihood-ratio gradient `(R - b) * grad log pi(a | x)`, where the
//! baseline `b` is a separate linear regressor fitted by squared error.

mod train;

pub use train::{
    train_policy, PolicyEnv, RerankSetup, RetuneEvent, RewardRecord, TrainSchedule, TrainedPolicy, TrainingLog,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{sequence_logprob, NGramLM};
use crate::vocab::TokenId;

/// Candidate diversity rates, strictly increasing and non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GammaGrid {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for GammaGrid {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        GammaGrid::new(values)
    }
}

impl From<GammaGrid> for Vec<f64> {
    fn from(g: GammaGrid) -> Self {
        g.values
    }
}

impl GammaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("gamma grid is empty"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("gamma grid values must be finite and >= 0"));
        }
        if !values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::param("gamma grid must be strictly increasing"));
        }
        Ok(GammaGrid { values })
    }

    /// `{0, 0.05, ..., 1.0}`.
    pub fn regular(steps: usize, max: f64) -> Result<Self> {
        GammaGrid::new((0..=steps).map(|i| max * i as f64 / steps as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }
}

impl Default for GammaGrid {
    fn default() -> Self {
        GammaGrid::regular(20, 1.0).expect("regular grid is valid")
    }
}

pub const SOURCE_FEATURE_DIM: usize = 6;

/// Per-feature affine standardization; column 0 (bias) is left alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::input("no rows to standardize"))?;
        let n = rows.len() as f64;
        let mut s = Standardizer::identity(dim);
        for j in 1..dim {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            s.mean[j] = mean;
            s.scale[j] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(s)
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Hand-designed source representation standing in for an encoder state:
/// `[1, |X|, |X|^2, mean LM log-prob per token, type/token ratio,
///   fraction of tokens in the top frequency decile]`, then standardized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFeaturizer {
    /// Token ids in the top decile of LM training frequency.
    pub top_band: Vec<TokenId>,
    pub standardizer: Standardizer,
}

impl SourceFeaturizer {
    /// Builds the frequency band from `lm` and standardization stats from `sources`.
    pub fn fit<S: AsRef<[TokenId]>>(lm: &NGramLM, sources: &[S]) -> Result<Self> {
        let mut f = SourceFeaturizer {
            top_band: top_decile(lm),
            standardizer: Standardizer::identity(SOURCE_FEATURE_DIM),
        };
        if !sources.is_empty() {
            let rows: Vec<Vec<f64>> = sources.iter().map(|s| f.raw(s.as_ref(), lm)).collect::<Result<_>>()?;
            f.standardizer = Standardizer::fit(&rows)?;
        }
        Ok(f)
    }

    pub fn raw(&self, source: &[TokenId], lm: &NGramLM) -> Result<Vec<f64>> {
        let n = source.len() as f64;
        if source.is_empty() {
            return Ok(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        }
        let mean_lp = sequence_logprob(lm, &[], source)? / n;
        let mut types = source.to_vec();
        types.sort_unstable();
        types.dedup();
        let in_band = source.iter().filter(|t| self.top_band.binary_search(t).is_ok()).count() as f64;
        Ok(vec![1.0, n, n * n, mean_lp, types.len() as f64 / n, in_band / n])
    }

    pub fn featurize(&self, source: &[TokenId], lm: &NGramLM) -> Result<Vec<f64>> {
        Ok(self.standardizer.apply(&self.raw(source, lm)?))
    }
}

/// The `ceil(10%)` most frequent token types seen in LM training, sorted by id.
fn top_decile(lm: &NGramLM) -> Vec<TokenId> {
    let mut seen: Vec<(u64, TokenId)> = lm
        .unigram_counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(t, &c)| (c, t as TokenId))
        .collect();
    seen.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let k = seen.len().div_ceil(10);
    let mut band: Vec<TokenId> = seen[..k].iter().map(|&(_, t)| t).collect();
    band.sort_unstable();
    band
}

/// Softmax policy over grid indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityPolicy {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// `hidden_dim x feature_dim`, row-major.
    pub projection: Vec<f64>,
    /// `actions x hidden_dim`, row-major; one embedding per grid value.
    pub embeddings: Vec<f64>,
}

impl DiversityPolicy {
    /// Identity projection and zero embeddings: the uniform policy.
    pub fn new(feature_dim: usize, actions: usize) -> Self {
        let mut projection = vec![0.0; feature_dim * feature_dim];
        for i in 0..feature_dim {
            projection[i * feature_dim + i] = 1.0;
        }
        DiversityPolicy {
            feature_dim,
            hidden_dim: feature_dim,
            projection,
            embeddings: vec![0.0; actions * feature_dim],
        }
    }

    pub fn actions(&self) -> usize {
        self.embeddings.len() / self.hidden_dim
    }

    pub fn param_count(&self) -> usize {
        self.projection.len() + self.embeddings.len()
    }

    /// Flat parameter vector: projection then embeddings.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.projection.clone();
        p.extend_from_slice(&self.embeddings);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (w, e) = p.split_at(self.projection.len());
        self.projection.copy_from_slice(w);
        self.embeddings.copy_from_slice(e);
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::input(format!(
                "feature vector has {} entries, policy expects {}",
                x.len(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        self.projection
            .chunks(self.feature_dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let h = self.hidden(x);
        Ok(self
            .embeddings
            .chunks(self.hidden_dim)
            .map(|e| e.iter().zip(&h).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Greedy action, ties to the lower index.
    pub fn argmax(&self, x: &[f64]) -> Result<usize> {
        let l = self.logits(x)?;
        let mut best = 0;
        for (i, v) in l.iter().enumerate() {
            if *v > l[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// `grad_theta log pi(action | x)` in the layout of [`params`](Self::params).
    pub fn grad_log_prob(&self, x: &[f64], action: usize) -> Result<Vec<f64>> {
        self.check(x)?;
        if action >= self.actions() {
            return Err(Error::input(format!("action {action} out of range")));
        }
        let probs = policy_probs(self, x)?;
        let h = self.hidden(x);
        let hd = self.hidden_dim;
        // d log pi_a / d logit_j = [j = a] - pi_j
        let coef: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, p)| if j == action { 1.0 - p } else { -p })
            .collect();
        let mut g = vec![0.0; self.param_count()];
        let (gw, ge) = g.split_at_mut(self.projection.len());
        // d/dW = (sum_j coef_j e_j) x^T
        let mut mix = vec![0.0; hd];
        for (j, e) in self.embeddings.chunks(hd).enumerate() {
            for (m, v) in mix.iter_mut().zip(e) {
                *m += coef[j] * v;
            }
        }
        for (r, row) in gw.chunks_mut(self.feature_dim).enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = mix[r] * x[c];
            }
        }
        // d/de_j = coef_j h
        for (j, row) in ge.chunks_mut(hd).enumerate() {
            for (v, hv) in row.iter_mut().zip(&h) {
                *v = coef[j] * hv;
            }
        }
        Ok(g)
    }
}

/// Softmax of the policy logits.
pub fn policy_probs(policy: &DiversityPolicy, x: &[f64]) -> Result<Vec<f64>> {
    let logits = policy.logits(x)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / z).collect())
}

/// Draws a grid index from the policy.
pub fn sample_action<R: Rng + ?Sized>(policy: &DiversityPolicy, x: &[f64], rng: &mut R) -> Result<usize> {
    let probs = policy_probs(policy, x)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1))
}

pub fn sample_action_seeded(policy: &DiversityPolicy, x: &[f64], seed: u64) -> Result<usize> {
    sample_action(policy, x, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Linear reward predictor `b = v . x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub weights: Vec<f64>,
}

impl Baseline {
    pub fn new(feature_dim: usize) -> Self {
        Baseline {
            weights: vec![0.0; feature_dim],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// One gradient step on `(reward - b)^2`.
    pub fn update(&mut self, x: &[f64], reward: f64, lr: f64) {
        let err = reward - self.predict(x);
        for (w, v) in self.weights.iter_mut().zip(x) {
            *w += lr * 2.0 * err * v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Baseline prediction used for this step (before its own update).
    pub baseline: f64,
    pub advantage: f64,
}

/// One REINFORCE update. The policy moves along `(R - b) grad log pi(a|x)`;
/// the baseline takes its own squared-error step and shares no parameters
/// with the policy.
pub fn reinforce_step(
    policy: &mut DiversityPolicy,
    baseline: &mut Baseline,
    x: &[f64],
    action: usize,
    reward: f64,
    lr_policy: f64,
    lr_baseline: f64,
) -> Result<StepOutcome> {
    if !reward.is_finite() {
        return Err(Error::NonFinite(format!("reward {reward} rejected")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("source features".into()));
    }
    if baseline.weights.len() != x.len() {
        return Err(Error::input("baseline dimension mismatch"));
    }
    let b = baseline.predict(x);
    let advantage = reward - b;
    let grad = policy.grad_log_prob(x, action)?;
    if advantage != 0.0 {
        let mut p = policy.params();
        for (pv, g) in p.iter_mut().zip(&grad) {
            *pv += lr_policy * advantage * g;
        }
        policy.set_params(&p);
    }
    baseline.update(x, reward, lr_baseline);
    Ok(StepOutcome { baseline: b, advantage })
}
