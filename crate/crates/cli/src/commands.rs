use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use divbeam_core::corpus::{ingest, CorpusFormat, ParallelCorpus};
use divbeam_core::decoder::{batch_decode_with, decode_with, exhaustive_argmax};
use divbeam_core::diverserl::{
    train_policy, GammaGrid, PolicyEnv, RerankSetup, SourceFeaturizer, TrainSchedule, TrainedPolicy,
};
use divbeam_core::formats::{
    feature_records, format_idf, format_weights, from_jsonl, group_by_source, nbest_records, parse_idf, parse_weights,
    to_jsonl, FeatureRecord, NBestRecord,
};
use divbeam_core::metrics::{corpus_bleu, distinct_n, rouge2, BleuStats, EvalPair};
use divbeam_core::rerank::{
    featurize_nbest, mert_tune, rerank_order, DevList, FeatureModels, FeatureWeights, IdfTable, MertConfig,
    FEATURE_NAMES,
};
use divbeam_core::seqmodel::{train_backward, train_fusion, train_lm, FusionConfig};
use divbeam_core::synth::random_tabular;
use divbeam_core::{
    derive_seed, DecodeParams, FusionModel, Hypothesis, LengthBounds, NBestList, NGramLM, Selection, Sequence,
    SequenceModel, TabularModel, Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{
    Cmd, Common, CorpusArgs, DecodeArgs, EvalArgs, FeatureModelArgs, Format, IdfArgs, Metric, OracleCheckArgs,
    RerankArgs, SearchArgs, Side, TrainLmArgs, TrainModelArgs, TrainPolicyArgs, TuneWeightsArgs,
};

pub fn run(cmd: &Cmd) -> Result<()> {
    match cmd {
        Cmd::TrainModel(a) => echo("train-model", a, &a.common).and_then(|_| train_model(a)),
        Cmd::TrainLm(a) => echo("train-lm", a, &a.common).and_then(|_| train_lm_cmd(a)),
        Cmd::Idf(a) => echo("idf", a, &a.common).and_then(|_| idf(a)),
        Cmd::Decode(a) => echo("decode", a, &a.common).and_then(|_| decode(a)),
        Cmd::Rerank(a) => echo("rerank", a, &a.common).and_then(|_| rerank(a)),
        Cmd::TuneWeights(a) => echo("tune-weights", a, &a.common).and_then(|_| tune_weights(a)),
        Cmd::TrainPolicy(a) => echo("train-policy", a, &a.common).and_then(|_| train_policy_cmd(a)),
        Cmd::Eval(a) => echo("eval", a, &a.common).and_then(|_| eval(a)),
        Cmd::OracleCheck(a) => echo("oracle-check", a, &a.common).and_then(|_| oracle_check(a)),
    }
}

fn echo<T: Serialize>(name: &str, args: &T, common: &Common) -> Result<()> {
    eprintln!("divbeam {name} config: {}", serde_json::to_string(args)?);
    eprintln!("divbeam {name} seed: {}", common.seed);
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_or_stdout(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn words(line: &str, lowercase: bool) -> Vec<String> {
    line.split_whitespace()
        .map(|w| if lowercase { w.to_lowercase() } else { w.to_string() })
        .collect()
}

fn read_lines(path: &Path, lowercase: bool) -> Result<Vec<Vec<String>>> {
    Ok(read(path)?.lines().map(|l| words(l, lowercase)).collect())
}

fn encode(vocab: &Vocabulary, w: &[String]) -> divbeam_core::Result<Sequence> {
    vocab.encode(w.iter().map(String::as_str))
}

fn encode_lines(vocab: &Vocabulary, path: &Path, lowercase: bool) -> Result<Vec<Sequence>> {
    read_lines(path, lowercase)?
        .iter()
        .enumerate()
        .map(|(i, w)| encode(vocab, w).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn same_vocab(a: &Vocabulary, b: &Vocabulary, what: &str) -> Result<()> {
    ensure!(
        a.tokens() == b.tokens() && a.eos_id() == b.eos_id(),
        "{what}: vocabularies differ"
    );
    Ok(())
}

enum Model {
    Fusion(FusionModel),
    Tabular(TabularModel),
}

impl Model {
    fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        match FusionModel::from_json(&text) {
            Ok(m) => Ok(Model::Fusion(m)),
            Err(fusion_err) => TabularModel::from_json(&text)
                .map(Model::Tabular)
                .map_err(|_| anyhow!("{}: not a model file ({fusion_err})", path.display())),
        }
    }

    fn seq(&self) -> &dyn SequenceModel {
        match self {
            Model::Fusion(m) => m,
            Model::Tabular(m) => m,
        }
    }

    fn source_vocab(&self) -> &Vocabulary {
        match self {
            Model::Fusion(m) => m.source_vocab(),
            Model::Tabular(m) => m.vocab(),
        }
    }

    fn target_vocab(&self) -> &Vocabulary {
        match self {
            Model::Fusion(m) => m.target_vocab(),
            Model::Tabular(m) => m.vocab(),
        }
    }
}

fn load_lm(path: &Path) -> Result<NGramLM> {
    NGramLM::from_json(&read(path)?).with_context(|| format!("{}: not a language model", path.display()))
}

fn load_corpus(c: &CorpusArgs) -> Result<ParallelCorpus> {
    let format = match c.format {
        Format::Tsv => CorpusFormat::Tsv,
        Format::Jsonl => CorpusFormat::Jsonl,
    };
    Ok(ingest(&c.corpus, format, c.lowercase)?)
}

/// The vocabulary shared by every artifact trained from one corpus file:
/// all words of all splits, both sides, plus EOS and `<unk>`.
fn corpus_vocab(corpus: &ParallelCorpus) -> Vocabulary {
    Vocabulary::from_words(corpus.words())
}

fn encoded_pairs(corpus: &ParallelCorpus, src: &Vocabulary, tgt: &Vocabulary) -> Result<Vec<(Sequence, Sequence)>> {
    corpus
        .pairs
        .iter()
        .map(|p| Ok((encode(src, &p.source)?, encode(tgt, &p.target)?)))
        .collect()
}

fn split_pairs(c: &CorpusArgs, split: &str) -> Result<(Vocabulary, Vec<(Sequence, Sequence)>)> {
    let corpus = load_corpus(c)?;
    let vocab = corpus_vocab(&corpus);
    let part = corpus.split(split);
    ensure!(!part.pairs.is_empty(), "no pairs in split {split:?}");
    let pairs = encoded_pairs(&part, &vocab, &vocab)?;
    Ok((vocab, pairs))
}

fn side(pairs: Vec<(Sequence, Sequence)>, side: Side) -> Vec<Sequence> {
    pairs
        .into_iter()
        .map(|(s, t)| match side {
            Side::Source => s,
            Side::Target => t,
        })
        .collect()
}

fn train_model(a: &TrainModelArgs) -> Result<()> {
    let (vocab, pairs) = split_pairs(&a.corpus, &a.corpus.split)?;
    let cfg = FusionConfig {
        order: a.order,
        lambda: a.lambda,
        alpha: a.alpha,
    };
    let model = if a.backward {
        train_backward(&pairs, &vocab, &vocab, cfg)?
    } else {
        train_fusion(&pairs, &vocab, &vocab, cfg)?
    };
    eprintln!("trained on {} pairs, vocabulary {}", pairs.len(), vocab.size());
    write(&a.out, &model.to_json()?)
}

fn train_lm_cmd(a: &TrainLmArgs) -> Result<()> {
    let (vocab, pairs) = split_pairs(&a.corpus, &a.corpus.split)?;
    let lm = train_lm(&side(pairs, a.side), &vocab, a.order, a.alpha)?;
    write(&a.out, &lm.to_json()?)
}

fn idf(a: &IdfArgs) -> Result<()> {
    let (vocab, pairs) = split_pairs(&a.corpus, &a.corpus.split)?;
    let table = IdfTable::from_documents(&side(pairs, a.side));
    write(&a.out, &format_idf(&table, &vocab))
}

fn decode_params(s: &SearchArgs, gamma: f64) -> DecodeParams {
    let lengths = match (s.min_len, s.max_len) {
        (Some(min), Some(max)) => LengthBounds::Fixed { min, max },
        _ => LengthBounds::Ratio {
            min_ratio: s.min_ratio,
            max_ratio: s.max_ratio,
        },
    };
    DecodeParams {
        beam: s.beam,
        gamma,
        lengths,
        nbest_cap: s.nbest,
    }
}

fn decode(a: &DecodeArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let sources = encode_lines(model.source_vocab(), &a.input, a.lowercase)?;
    let params = decode_params(&a.search, a.gamma);
    let results = match (&a.policy, &a.source_lm) {
        (Some(policy), Some(lm)) => {
            let policy: TrainedPolicy =
                serde_json::from_str(&read(policy)?).with_context(|| format!("{}: not a policy", policy.display()))?;
            let lm = load_lm(lm)?;
            // Sources sharing a gamma are decoded as one batch.
            let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, s) in sources.iter().enumerate() {
                groups
                    .entry(policy.choose_gamma(s, &lm)?.to_bits())
                    .or_default()
                    .push(i);
            }
            let mut results: Vec<Option<_>> = vec![None; sources.len()];
            for (bits, idx) in groups {
                let gamma = f64::from_bits(bits);
                let batch: Vec<Sequence> = idx.iter().map(|&i| sources[i].clone()).collect();
                let p = DecodeParams { gamma, ..params };
                let out = batch_decode_with(model.seq(), &batch, &p, Selection::Diverse { gamma }, a.batch)?;
                for (i, r) in idx.into_iter().zip(out) {
                    results[i] = Some(r);
                }
            }
            results
                .into_iter()
                .map(|r| r.expect("every source is in a group"))
                .collect()
        }
        _ => {
            let selection = if a.vanilla {
                ensure!(a.gamma == 0.0, "--vanilla needs gamma 0, got {}", a.gamma);
                Selection::Vanilla
            } else {
                Selection::Diverse { gamma: a.gamma }
            };
            batch_decode_with(model.seq(), &sources, &params, selection, a.batch)?
        }
    };
    let mut out = String::new();
    for (i, r) in results.into_iter().enumerate() {
        let nb = r.with_context(|| format!("source line {}", i + 1))?;
        out.push_str(&to_jsonl(&nbest_records(i, &nb, model.target_vocab())));
    }
    write_or_stdout(a.out.as_deref(), &out)
}

struct LoadedFeatureModels {
    forward: Model,
    backward: Model,
    lm: NGramLM,
    idf: Option<IdfTable>,
}

impl LoadedFeatureModels {
    fn load(forward: &Path, backward: &Path, lm: &Path, idf: Option<&Path>) -> Result<Self> {
        let forward = Model::load(forward)?;
        let backward = Model::load(backward)?;
        let lm = load_lm(lm)?;
        same_vocab(
            forward.target_vocab(),
            backward.source_vocab(),
            "forward target / backward source",
        )?;
        same_vocab(
            forward.source_vocab(),
            backward.target_vocab(),
            "forward source / backward target",
        )?;
        same_vocab(forward.target_vocab(), lm.vocab(), "forward target / language model")?;
        let idf = match idf {
            Some(p) => Some(parse_idf(&read(p)?, forward.target_vocab())?),
            None => None,
        };
        Ok(LoadedFeatureModels {
            forward,
            backward,
            lm,
            idf,
        })
    }

    fn view(&self) -> FeatureModels<'_> {
        FeatureModels {
            forward: self.forward.seq(),
            backward: self.backward.seq(),
            lm: &self.lm,
            idf: self.idf.as_ref(),
            use_tfidf: self.idf.is_some(),
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow!("{flag} is required here"))
}

fn featurize_file(a: &RerankArgs, nbest: &Path, m: &FeatureModelArgs) -> Result<Vec<FeatureRecord>> {
    let models = LoadedFeatureModels::load(
        required(&m.model, "--model")?,
        required(&m.backward, "--backward")?,
        required(&m.lm, "--lm")?,
        m.idf.as_deref(),
    )?;
    let sources = encode_lines(
        models.forward.source_vocab(),
        required(&a.input, "--input")?,
        a.lowercase,
    )?;
    let eos = models.forward.seq().eos_id();
    let records: Vec<NBestRecord> = from_jsonl(&read(nbest)?).with_context(|| nbest.display().to_string())?;
    let mut out = Vec::new();
    for (id, group) in group_by_source(records, |r| r.source) {
        let src = sources
            .get(id)
            .ok_or_else(|| anyhow!("N-best source {id} has no input line"))?;
        let nb = NBestList {
            entries: group
                .into_iter()
                .map(|r| Hypothesis {
                    finished: r.ids.last() == Some(&eos),
                    tokens: r.ids,
                    score: r.score,
                    ranks: Vec::new(),
                })
                .collect(),
        };
        let entries = featurize_nbest(src, &nb, &models.view()).with_context(|| format!("source {id}"))?;
        out.extend(feature_records(id, &entries, models.forward.target_vocab()));
    }
    Ok(out)
}

fn feature_row(r: &FeatureRecord, names: &[String]) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|n| {
            r.features
                .get(n)
                .copied()
                .ok_or_else(|| anyhow!("source {} rank {}: missing feature {n:?}", r.source, r.rank))
        })
        .collect()
}

fn default_weights(records: &[FeatureRecord]) -> FeatureWeights {
    FeatureWeights::forward_only(records.first().is_some_and(|r| r.features.contains_key("tfidf_avg")))
}

fn rerank(a: &RerankArgs) -> Result<()> {
    let records = match (&a.nbest, &a.features) {
        (Some(nbest), _) => featurize_file(a, nbest, &a.models)?,
        (None, Some(f)) => from_jsonl(&read(f)?).with_context(|| f.display().to_string())?,
        (None, None) => bail!("one of --nbest or --features is required"),
    };
    if let Some(p) = &a.features_out {
        write(p, &to_jsonl(&records))?;
    }
    let weights = match &a.weights {
        Some(p) => parse_weights(&read(p)?)?,
        None => default_weights(&records),
    };
    let mut out = String::new();
    for (_, group) in group_by_source(records, |r| r.source) {
        let rows = group
            .iter()
            .map(|r| feature_row(r, &weights.names))
            .collect::<Result<Vec<_>>>()?;
        let best = rerank_order(&rows, &weights.values)?[0];
        writeln!(out, "{}", group[best].text)?;
    }
    write_or_stdout(a.out.as_deref(), &out)
}

fn tune_weights(a: &TuneWeightsArgs) -> Result<()> {
    let records: Vec<FeatureRecord> =
        from_jsonl(&read(&a.features)?).with_context(|| a.features.display().to_string())?;
    let refs = read_lines(&a.references, a.lowercase)?;
    let init = match &a.init {
        Some(p) => parse_weights(&read(p)?)?,
        None => default_weights(&records),
    };
    let max_n = MertConfig::default().max_n;
    let mut dev = Vec::new();
    for (id, group) in group_by_source(records, |r| r.source) {
        let reference = refs
            .get(id)
            .ok_or_else(|| anyhow!("source {id} has no reference line"))?;
        let rows = group
            .iter()
            .map(|r| feature_row(r, &init.names))
            .collect::<Result<Vec<_>>>()?;
        let stats = group
            .iter()
            .map(|r| BleuStats::compute(&words(&r.text, a.lowercase), &[reference], max_n))
            .collect();
        dev.push(DevList::new(rows, stats)?);
    }
    ensure!(!dev.is_empty(), "no featurized records");
    let cfg = MertConfig {
        restarts: a.restarts,
        max_iters: a.max_iters,
        seed: a.common.seed,
        ..MertConfig::default()
    };
    let r = mert_tune(&dev, &init.values, &cfg)?;
    eprintln!("dev BLEU {:.4} -> {:.4} over {} lists", r.init_bleu, r.bleu, dev.len());
    write(&a.out, &format_weights(&FeatureWeights::new(init.names, r.weights)?))
}

fn train_policy_cmd(a: &TrainPolicyArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let source_lm = load_lm(&a.source_lm)?;
    same_vocab(
        model.source_vocab(),
        source_lm.vocab(),
        "forward source / source language model",
    )?;
    let corpus = load_corpus(&a.corpus)?;
    let train = encoded_pairs(
        &corpus.split(&a.corpus.split),
        model.source_vocab(),
        model.target_vocab(),
    )?;
    ensure!(!train.is_empty(), "no pairs in split {:?}", a.corpus.split);
    let dev = match &a.dev_split {
        Some(s) => encoded_pairs(&corpus.split(s), model.source_vocab(), model.target_vocab())?,
        None => Vec::new(),
    };

    let grid = match &a.grid {
        Some(g) => GammaGrid::new(
            g.split(',')
                .map(|v| v.trim().parse::<f64>().with_context(|| format!("grid value {v:?}")))
                .collect::<Result<_>>()?,
        )?,
        None => GammaGrid::regular(a.grid_steps, a.grid_max)?,
    };
    let sources: Vec<&Sequence> = train.iter().map(|(s, _)| s).collect();
    let featurizer = SourceFeaturizer::fit(&source_lm, &sources)?;

    let feature_models = match (&a.backward, &a.lm) {
        (Some(b), Some(l)) => Some(LoadedFeatureModels::load(&a.model, b, l, a.idf.as_deref())?),
        _ => None,
    };
    let rerank = match &feature_models {
        Some(m) => {
            if a.retune_every > 0 {
                ensure!(!dev.is_empty(), "re-tuning needs a non-empty --dev-split");
            }
            let init_weights = match &a.weights {
                Some(p) => parse_weights(&read(p)?)?,
                None => FeatureWeights::forward_only(m.idf.is_some()),
            };
            let expected: Vec<&str> = FEATURE_NAMES[..init_weights.dim()].to_vec();
            ensure!(
                init_weights
                    .names
                    .iter()
                    .map(String::as_str)
                    .eq(expected.iter().copied())
                    && (init_weights.dim() == 5) == m.idf.is_some(),
                "weights must name {:?} in order ({} with --idf)",
                &FEATURE_NAMES[..4],
                FEATURE_NAMES[4]
            );
            Some(RerankSetup {
                models: m.view(),
                dev: &dev,
                mert: MertConfig {
                    restarts: a.restarts,
                    max_iters: a.max_iters,
                    seed: a.common.seed,
                    ..MertConfig::default()
                },
                init_weights,
            })
        }
        None => None,
    };

    let env = PolicyEnv {
        forward: model.seq(),
        source_lm: &source_lm,
        train: &train,
        grid: grid.clone(),
        decode: decode_params(&a.search, 0.0),
        rerank,
    };
    let schedule = TrainSchedule {
        num_instances: a.instances,
        retune_every: a.retune_every,
        lr_policy: a.lr_policy,
        lr_baseline: a.lr_baseline,
        seed: a.common.seed,
    };
    let (trained, log) = train_policy(&env, TrainedPolicy::fresh(grid, featurizer), &schedule)?;

    let n = log.records.len();
    let mean =
        |r: &[divbeam_core::diverserl::RewardRecord]| r.iter().map(|x| x.reward).sum::<f64>() / r.len().max(1) as f64;
    eprintln!(
        "{n} updates, {} skipped, mean reward {:.4} (last 10%: {:.4}), {} re-tunes",
        log.skipped.len(),
        mean(&log.records),
        mean(&log.records[n - n / 10..]),
        log.retunes.len()
    );
    for r in &log.retunes {
        eprintln!("retune after {}: dev BLEU {:.4}", r.after_instance, r.dev_bleu);
    }
    write(&a.out, &serde_json::to_string_pretty(&trained)?)?;
    if let Some(p) = &a.log {
        write(p, &to_jsonl(&log.records))?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let hyps = read_lines(&a.hyp, a.lowercase)?;
    let refs = || -> Result<Vec<Vec<String>>> {
        let p = a
            .reference
            .as_deref()
            .ok_or_else(|| anyhow!("--ref is required for this metric"))?;
        let r = read_lines(p, a.lowercase)?;
        ensure!(
            r.len() == hyps.len(),
            "{} hypotheses but {} references",
            hyps.len(),
            r.len()
        );
        Ok(r)
    };
    let (name, value) = match a.metric {
        Metric::Bleu => {
            let pairs: Vec<EvalPair<String>> = hyps
                .iter()
                .zip(refs()?)
                .map(|(h, r)| EvalPair::single(h.clone(), r))
                .collect();
            ("bleu", corpus_bleu(&pairs, 4)?)
        }
        Metric::Rouge2 => {
            let r = refs()?;
            ensure!(!hyps.is_empty(), "no hypotheses");
            let total: f64 = hyps.iter().zip(&r).map(|(h, r)| rouge2(h, r)).sum();
            ("rouge2", total / hyps.len() as f64)
        }
        Metric::Distinct1 => ("distinct1", distinct_n(&hyps, 1)),
        Metric::Distinct2 => ("distinct2", distinct_n(&hyps, 2)),
    };
    println!("{name}\t{value:.4}");
    Ok(())
}

fn oracle_check(a: &OracleCheckArgs) -> Result<()> {
    ensure!(a.vocab >= 2 && a.maxlen >= 1, "need --vocab >= 2 and --maxlen >= 1");
    // Enough slots to keep every live prefix: at most (V-1)^(maxlen-1) of them.
    let beam = (a.vocab - 1)
        .checked_pow(a.maxlen as u32 - 1)
        .filter(|&k| k <= 1_000_000)
        .ok_or_else(|| anyhow!("--vocab {} --maxlen {} needs too wide a beam", a.vocab, a.maxlen))?;
    let fixed = |k: usize| DecodeParams {
        beam: k,
        gamma: 0.0,
        lengths: LengthBounds::Fixed { min: 1, max: a.maxlen },
        nbest_cap: 1000,
    };
    let (mut exact, mut same, mut runs) = (0, 0, 0);
    for i in 0..a.models {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.common.seed, i as u64));
        let sharpness = rng.gen_range(1.0..6.0);
        let model = random_tabular(&mut rng, a.vocab, a.maxlen, 10_000, sharpness);
        let (seq, score) = exhaustive_argmax(&model, &[], a.maxlen, 1)?;
        let nb = decode_with(&model, &[], &fixed(beam), Selection::Vanilla)?;
        let top = nb.best().expect("decode returns a non-empty list");
        if top.tokens == seq.0 && (top.score - score).abs() <= 1e-9 {
            exact += 1;
        } else {
            eprintln!(
                "model {i}: beam {:?} ({}) vs exhaustive {:?} ({score})",
                top.tokens, top.score, seq.0
            );
        }
        for k in [2, 5, 10] {
            let show = |r: divbeam_core::Result<NBestList>| serde_json::to_vec(&r.map_err(|e| e.to_string()));
            let v = show(decode_with(&model, &[], &fixed(k), Selection::Vanilla))?;
            let d = show(decode_with(&model, &[], &fixed(k), Selection::Diverse { gamma: 0.0 }))?;
            runs += 1;
            if v == d {
                same += 1;
            } else {
                eprintln!("model {i}: beam {k} differs between vanilla and gamma=0");
            }
        }
    }
    println!("oracle: {exact}/{} exact matches", a.models);
    println!("gamma=0: {same}/{runs} identical");
    ensure!(exact == a.models && same == runs, "oracle-check found mismatches");
    Ok(())
}
