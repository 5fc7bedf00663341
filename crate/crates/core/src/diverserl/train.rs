use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{reinforce_step, sample_action, Baseline, DiversityPolicy, GammaGrid, SourceFeaturizer};
use crate::decoder::{decode, DecodeParams, NBestList};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::metrics::{sentence_bleu_smoothed, BleuStats};
use crate::rerank::{featurize_nbest, mert_tune, rerank_order, DevList, FeatureModels, FeatureWeights, MertConfig};
use crate::seqmodel::{NGramLM, SequenceModel};
use crate::vocab::{Sequence, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub num_instances: usize,
    /// Re-tune reranker weights after this many instances; 0 disables.
    pub retune_every: usize,
    pub lr_policy: f64,
    pub lr_baseline: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            num_instances: 1000,
            retune_every: 10_000,
            lr_policy: 0.1,
            lr_baseline: 0.05,
            seed: 0,
        }
    }
}

/// Reranking used to pick each instance's output.
pub struct RerankSetup<'a> {
    pub models: FeatureModels<'a>,
    /// Dev `(source, reference)` pairs for periodic weight re-tuning.
    pub dev: &'a [(Sequence, Sequence)],
    pub mert: MertConfig,
    pub init_weights: FeatureWeights,
}

pub struct PolicyEnv<'a> {
    /// Frozen generator.
    pub forward: &'a dyn SequenceModel,
    /// LM used for source featurization.
    pub source_lm: &'a NGramLM,
    pub train: &'a [(Sequence, Sequence)],
    pub grid: GammaGrid,
    /// `gamma` is overridden per instance by the sampled grid value.
    pub decode: DecodeParams,
    pub rerank: Option<RerankSetup<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub instance: usize,
    pub source_id: usize,
    pub action: usize,
    pub gamma: f64,
    pub reward: f64,
    pub baseline: f64,
    /// Selected output, EOS stripped.
    pub output: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetuneEvent {
    pub after_instance: usize,
    pub dev_bleu: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<RewardRecord>,
    pub retunes: Vec<RetuneEvent>,
    /// `(instance, diagnostic)` for instances that produced no output.
    pub skipped: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub grid: GammaGrid,
    pub featurizer: SourceFeaturizer,
    pub policy: DiversityPolicy,
    pub baseline: Baseline,
    pub rerank_weights: Option<FeatureWeights>,
}

impl TrainedPolicy {
    pub fn fresh(grid: GammaGrid, featurizer: SourceFeaturizer) -> Self {
        let dim = featurizer.standardizer.mean.len();
        TrainedPolicy {
            policy: DiversityPolicy::new(dim, grid.len()),
            baseline: Baseline::new(dim),
            grid,
            featurizer,
            rerank_weights: None,
        }
    }

    /// Greedy grid index for a source.
    pub fn choose(&self, source: &[TokenId], lm: &NGramLM) -> Result<usize> {
        self.policy.argmax(&self.featurizer.featurize(source, lm)?)
    }

    pub fn choose_gamma(&self, source: &[TokenId], lm: &NGramLM) -> Result<f64> {
        Ok(self.grid.get(self.choose(source, lm)?))
    }
}

fn pick_output(
    nbest: &NBestList,
    source: &[TokenId],
    rerank: Option<(&FeatureModels, &FeatureWeights)>,
) -> Result<Vec<TokenId>> {
    let chosen = match rerank {
        None => nbest.best().ok_or(Error::DecodeFailure)?,
        Some((models, w)) => {
            let entries = featurize_nbest(source, nbest, models)?;
            let rows: Vec<Vec<f64>> = entries.iter().map(|e| e.features.values()).collect();
            &nbest.entries[rerank_order(&rows, &w.values)?[0]]
        }
    };
    Ok(strip(&chosen.tokens, nbest_eos(chosen)))
}

fn nbest_eos(h: &crate::decoder::Hypothesis) -> Option<TokenId> {
    h.finished
        .then(|| *h.tokens.last().expect("finished hypotheses end in EOS"))
}

fn strip(tokens: &[TokenId], eos: Option<TokenId>) -> Vec<TokenId> {
    match (tokens.split_last(), eos) {
        (Some((&last, body)), Some(e)) if last == e => body.to_vec(),
        _ => tokens.to_vec(),
    }
}

fn retune(
    env: &PolicyEnv,
    setup: &RerankSetup,
    state: &TrainedPolicy,
    current: &FeatureWeights,
) -> Result<(FeatureWeights, f64)> {
    let mut dev = Vec::with_capacity(setup.dev.len());
    for (src, reference) in setup.dev {
        let gamma = state.choose_gamma(src, env.source_lm)?;
        let params = DecodeParams { gamma, ..env.decode };
        let Ok(nbest) = decode(env.forward, src, &params) else {
            continue;
        };
        let entries = featurize_nbest(src, &nbest, &setup.models)?;
        let eos = env.forward.eos_id();
        let stats = nbest
            .entries
            .iter()
            .map(|h| BleuStats::compute(&strip(&h.tokens, Some(eos)), &[reference.ids()], setup.mert.max_n))
            .collect();
        dev.push(DevList::new(
            entries.iter().map(|e| e.features.values()).collect(),
            stats,
        )?);
    }
    if dev.is_empty() {
        return Err(Error::DecodeFailure);
    }
    let r = mert_tune(&dev, &current.values, &setup.mert)?;
    Ok((FeatureWeights::new(current.names.clone(), r.weights)?, r.bleu))
}

/// Trains a diversity policy with the generator frozen. Instance `i` uses
/// training pair `i mod |train|` and an RNG seeded from `(seed, i)`.
pub fn train_policy(
    env: &PolicyEnv,
    init: TrainedPolicy,
    schedule: &TrainSchedule,
) -> Result<(TrainedPolicy, TrainingLog)> {
    if env.train.is_empty() {
        return Err(Error::input("no training pairs"));
    }
    if init.grid.len() != init.policy.actions() {
        return Err(Error::input("policy action count does not match the grid"));
    }
    env.decode.validate()?;
    let mut state = init;
    let mut weights = env
        .rerank
        .as_ref()
        .map(|r| state.rerank_weights.clone().unwrap_or_else(|| r.init_weights.clone()));
    let mut log = TrainingLog::default();

    for i in 0..schedule.num_instances {
        let source_id = i % env.train.len();
        let (src, reference) = &env.train[source_id];
        let x = state.featurizer.featurize(src, env.source_lm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(schedule.seed, i as u64));
        let action = sample_action(&state.policy, &x, &mut rng)?;
        let gamma = state.grid.get(action);
        let params = DecodeParams { gamma, ..env.decode };

        let outcome = decode(env.forward, src, &params).and_then(|nb| {
            let rr = env.rerank.as_ref().zip(weights.as_ref()).map(|(r, w)| (&r.models, w));
            pick_output(&nb, src, rr)
        });
        match outcome {
            Ok(output) => {
                let reward = sentence_bleu_smoothed(&output, reference.ids(), 4);
                let step = reinforce_step(
                    &mut state.policy,
                    &mut state.baseline,
                    &x,
                    action,
                    reward,
                    schedule.lr_policy,
                    schedule.lr_baseline,
                )?;
                log.records.push(RewardRecord {
                    instance: i,
                    source_id,
                    action,
                    gamma,
                    reward,
                    baseline: step.baseline,
                    output,
                });
            }
            Err(e) => log.skipped.push((i, e.to_string())),
        }

        if schedule.retune_every > 0 && (i + 1) % schedule.retune_every == 0 {
            if let (Some(setup), Some(w)) = (env.rerank.as_ref(), weights.as_ref()) {
                let (tuned, dev_bleu) = retune(env, setup, &state, w)?;
                log.retunes.push(RetuneEvent {
                    after_instance: i + 1,
                    dev_bleu,
                    weights: tuned.values.clone(),
                });
                weights = Some(tuned);
            }
        }
    }
    state.rerank_weights = weights;
    Ok((state, log))
}
