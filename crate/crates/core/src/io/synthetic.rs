//! Seeded synthetic citation graphs with a plantable trend signal.
//!
//! Every document carries a hidden trending flag. Trending documents are
//! cited more (fitness) and sometimes write about a designated hot topic
//! (marked documents). Trending citers strongly prefer trending documents
//! that are marked (homophily), so what a document cites says more about its
//! flag than its own text does. All effects scale with
//! `trend_signal_strength`; at zero the flag has no influence on anything
//! observable.
//!
//! Citation counts are realized in-degrees, including citations from a few
//! simulated years after the last emitted year, plus a little noise. Those
//! later documents are not part of the bundle, which mirrors how a target
//! year's counts accrue after publication.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::DocumentNode;

use super::bundle::GraphBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabularyModel {
    /// Ordinary topics; one extra hot topic is added on top.
    pub topics: usize,
    pub words_per_topic: usize,
    pub background_words: usize,
    pub doc_length: usize,
    /// Share of a document's words drawn from its own topic, the rest coming
    /// from the shared background.
    pub topic_share: f64,
    /// Share of words replaced by hot-topic words in a marked document.
    pub hot_share: f64,
}

impl Default for VocabularyModel {
    fn default() -> Self {
        Self {
            topics: 20,
            words_per_topic: 60,
            background_words: 300,
            doc_length: 60,
            topic_share: 0.6,
            hot_share: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub corpus: String,
    pub n_nodes: usize,
    pub start_year: i32,
    pub end_year: i32,
    /// Unemitted years whose citations still count.
    pub future_years: usize,
    /// Mean number of references per document; every document after the
    /// first year cites at least one earlier document.
    pub out_degree: f64,
    /// Mean references of the unemitted later documents.
    pub future_out_degree: f64,
    pub trend_signal_strength: f64,
    pub trending_fraction: f64,
    /// Citation weight boost of trending documents at full strength.
    pub fitness: f64,
    /// Extra weight a trending citer gives marked trending documents at full
    /// strength.
    pub homophily: f64,
    /// Per-year exponential decay of citation weight with age.
    pub recency_decay: f64,
    /// Chance that any document writes about the hot topic.
    pub base_mark_rate: f64,
    /// Extra chance for trending documents at full strength.
    pub mark_signal: f64,
    pub affiliations: usize,
    pub max_affiliations_per_doc: usize,
    /// Citation counts get `uniform(0..=citation_noise)` added.
    pub citation_noise: u64,
    pub vocabulary: VocabularyModel,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            corpus: "synthetic".into(),
            n_nodes: 2669,
            start_year: 2005,
            end_year: 2015,
            future_years: 4,
            out_degree: 1.9,
            future_out_degree: 8.0,
            trend_signal_strength: 1.0,
            trending_fraction: 0.1,
            fitness: 3.0,
            homophily: 30.0,
            recency_decay: 0.3,
            base_mark_rate: 0.05,
            mark_signal: 0.45,
            affiliations: 120,
            max_affiliations_per_doc: 3,
            citation_noise: 0,
            vocabulary: VocabularyModel::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid synthetic config: {0}")]
pub struct SyntheticConfigError(pub String);

impl SyntheticConfig {
    /// Node and edge counts in the range of a mid-sized conference.
    pub fn icml_scale(seed: u64) -> Self {
        Self {
            corpus: "icml-scale".into(),
            seed,
            ..Self::default()
        }
    }

    /// Fast graph for tests and examples.
    pub fn small(seed: u64) -> Self {
        Self {
            corpus: "small".into(),
            n_nodes: 300,
            start_year: 2010,
            end_year: 2015,
            seed,
            ..Self::default()
        }
    }

    /// The same generator with the trend flag disconnected from everything.
    pub fn no_signal(self) -> Self {
        Self {
            trend_signal_strength: 0.0,
            ..self
        }
    }

    pub fn years(&self) -> usize {
        (self.end_year - self.start_year + 1).max(0) as usize
    }

    pub fn validate(&self) -> Result<(), SyntheticConfigError> {
        let bad = |m: &str| Err(SyntheticConfigError(m.to_owned()));
        if self.end_year < self.start_year {
            return bad("end year precedes start year");
        }
        if self.n_nodes < self.years() {
            return bad("need at least one document per year");
        }
        if !(self.out_degree >= 1.0 && self.future_out_degree >= 1.0) {
            return bad("out-degree must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.trend_signal_strength) {
            return bad("signal strength must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.trending_fraction) {
            return bad("trending fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&(self.base_mark_rate + self.mark_signal)) || self.base_mark_rate < 0.0 {
            return bad("mark rates must stay within [0, 1]");
        }
        if self.fitness < 0.0 || self.homophily < 0.0 || self.recency_decay < 0.0 {
            return bad("attachment boosts must be non-negative");
        }
        let v = &self.vocabulary;
        if v.topics == 0 || v.words_per_topic == 0 || v.background_words == 0 || v.doc_length == 0 {
            return bad("vocabulary model needs topics, words and a document length");
        }
        if self.affiliations == 0 || self.max_affiliations_per_doc == 0 {
            return bad("need at least one affiliation");
        }
        Ok(())
    }
}

/// Zipf-like weights `1 / (rank + 1)`.
fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 1.0))).expect("non-empty")
}

struct TextModel {
    topic_words: Vec<Vec<String>>,
    hot_words: Vec<String>,
    background: Vec<String>,
    topic_rank: WeightedIndex<f64>,
    background_rank: WeightedIndex<f64>,
}

impl TextModel {
    fn new(v: &VocabularyModel) -> Self {
        let words = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i:03}")).collect::<Vec<_>>();
        Self {
            topic_words: (0..v.topics).map(|t| words(&format!("t{t:02}w"), v.words_per_topic)).collect(),
            hot_words: words("hotw", v.words_per_topic),
            background: words("bg", v.background_words),
            topic_rank: zipf(v.words_per_topic),
            background_rank: zipf(v.background_words),
        }
    }

    fn document<R: Rng>(&self, v: &VocabularyModel, topic: usize, marked: bool, rng: &mut R) -> String {
        let mut out = Vec::with_capacity(v.doc_length);
        for _ in 0..v.doc_length {
            let word = if marked && rng.gen_bool(v.hot_share) {
                &self.hot_words[self.topic_rank.sample(rng)]
            } else if rng.gen_bool(v.topic_share) {
                &self.topic_words[topic][self.topic_rank.sample(rng)]
            } else {
                &self.background[self.background_rank.sample(rng)]
            };
            out.push(word.as_str());
        }
        out.join(" ")
    }
}

/// Per-document facts the bundle does not record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenState {
    pub trending: Vec<bool>,
    pub marked: Vec<bool>,
    pub topic: Vec<usize>,
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<GraphBundle, SyntheticConfigError> {
    generate_with_state(cfg).map(|(b, _)| b)
}

/// Generator that also returns the hidden per-document state of the emitted
/// documents, for diagnostics and tests.
pub fn generate_with_state(cfg: &SyntheticConfig) -> Result<(GraphBundle, HiddenState), SyntheticConfigError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = cfg.trend_signal_strength;
    let text = TextModel::new(&cfg.vocabulary);
    let aff_rank = zipf(cfg.affiliations);

    let span = cfg.years();
    let per_year = cfg.n_nodes / span;
    let mut years = Vec::new();
    for (k, year) in (cfg.start_year..=cfg.end_year).enumerate() {
        let n = per_year + usize::from(k < cfg.n_nodes % span);
        years.extend(std::iter::repeat(year).take(n));
    }
    let emitted = years.len();
    for f in 1..=cfg.future_years as i32 {
        years.extend(std::iter::repeat(cfg.end_year + f).take(per_year));
    }
    let total = years.len();

    let trending: Vec<bool> = (0..total).map(|_| rng.gen_bool(cfg.trending_fraction)).collect();
    let mark_rate = |z: bool| cfg.base_mark_rate + if z { cfg.mark_signal * s } else { 0.0 };
    let marked: Vec<bool> = trending.iter().map(|&z| rng.gen_bool(mark_rate(z))).collect();
    let topic: Vec<usize> = (0..total).map(|_| rng.gen_range(0..cfg.vocabulary.topics)).collect();

    let mut nodes = Vec::with_capacity(emitted);
    for i in 0..emitted {
        let body = text.document(&cfg.vocabulary, topic[i], marked[i], &mut rng);
        let k = rng.gen_range(1..=cfg.max_affiliations_per_doc);
        let mut affs: Vec<String> = (0..k).map(|_| format!("Institute {:03}", aff_rank.sample(&mut rng))).collect();
        affs.sort();
        affs.dedup();
        nodes.push(
            DocumentNode::new(format!("p{i:05}"), years[i], 0)
                .with_text(body)
                .with_affiliations(affs),
        );
    }

    let mut in_degree = vec![0u64; total];
    let mut edges = Vec::new();
    // Documents are sorted by year, so the earlier ones form a prefix.
    let mut earlier = 0;
    let mut weights = Vec::with_capacity(total);
    for i in 0..total {
        while years[earlier] < years[i] {
            earlier += 1;
        }
        if earlier == 0 {
            continue;
        }
        let mean = if i < emitted { cfg.out_degree } else { cfg.future_out_degree };
        let wanted = (mean.floor() as usize + usize::from(rng.gen_bool(mean.fract()))).min(earlier);
        weights.clear();
        weights.extend((0..earlier).map(|j| {
            let age = f64::from(years[i] - years[j] - 1);
            let mut w = (in_degree[j] as f64 + 1.0) * (-cfg.recency_decay * age).exp();
            if trending[j] {
                w *= 1.0 + cfg.fitness * s;
                if trending[i] && marked[j] {
                    w *= 1.0 + cfg.homophily * s;
                }
            }
            w
        }));
        for _ in 0..wanted {
            let pick = WeightedIndex::new(&weights).expect("positive weights").sample(&mut rng);
            weights[pick] = 0.0;
            in_degree[pick] += 1;
            if i < emitted {
                edges.push((nodes[i].id.clone(), nodes[pick].id.clone()));
            }
        }
    }

    for (i, node) in nodes.iter_mut().enumerate() {
        node.citation_count = in_degree[i] + rng.gen_range(0..=cfg.citation_noise);
    }
    let state = HiddenState {
        trending: trending[..emitted].to_vec(),
        marked: marked[..emitted].to_vec(),
        topic: topic[..emitted].to_vec(),
    };
    Ok((GraphBundle::new(cfg.corpus.clone(), nodes, edges), state))
}
