// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end stages driven by a [`RunConfig`]: build the model and
//! corpora, analyze attention, search the caption query, probe heads and
//! evaluate the intervention.

use crate::analysis::{change_rates, ChangeRateReport, VisualAttentionProfile};
use crate::config::{derive_seed, RunConfig};
use crate::error::{config, Error, Result};
use crate::harness::{
    build_planted_model, default_caption_candidates, evaluate, generate_corpus, load_corpus, sweep,
    CorpusEntry, EvalResult, PlantedModelSpec, SweepTable,
};
use crate::intervention::{build_gate, InterventionConfig};
use crate::model::{forward, CaptureFlags, DecoderWeights, SequenceInput};
use crate::probe::{build_probe_dataset, probe_heads, ProbeArtifact};
use crate::report::{csv_string, sig9};
use crate::search::{best_query_search, QueryCandidateSet, ShiftScore};

/// Model and corpora for one run.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub spec: PlantedModelSpec,
    pub weights: DecoderWeights,
    pub probe_corpus: Vec<CorpusEntry>,
    pub eval_corpus: Vec<CorpusEntry>,
    pub search_corpus: Vec<CorpusEntry>,
}

impl Workspace {
    /// Builds or loads everything `cfg` describes.
    ///
    /// # Errors
    ///
    /// Config, I/O and parse errors; [`crate::Error::Config`] when a
    /// weights file does not match the configured shape.
    pub fn prepare(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.planted_spec()?;
        let weights = match &cfg.model.weights {
            Some(path) => {
                let w = DecoderWeights::from_json_slice(&std::fs::read(path)?)?;
                if *w.config() != spec.config {
                    return Err(config(format!(
                        "weights file {} does not match the configured model shape",
                        path.display()
                    )));
                }
                w
            }
            None => build_planted_model(&spec, derive_seed(cfg.seed, "model"))?,
        };
        let c = &cfg.corpus;
        let probe_corpus = generate_corpus(derive_seed(cfg.seed, "probe-corpus"), c.probe_scenes, &spec)?;
        let search_corpus = generate_corpus(derive_seed(cfg.seed, "search-corpus"), c.search_scenes, &spec)?;
        let eval_corpus = match &c.eval_corpus {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                load_corpus(&text, &spec)?
            }
            None => generate_corpus(derive_seed(cfg.seed, "eval-corpus"), c.eval_scenes, &spec)?,
        };
        Ok(Self {
            spec,
            weights,
            probe_corpus,
            eval_corpus,
            search_corpus,
        })
    }

    /// Configured or built-in caption candidates with rendered labels.
    ///
    /// # Errors
    ///
    /// [`crate::Error::Config`] for tokens outside the vocabulary.
    pub fn candidates(&self, cfg: &RunConfig) -> Result<QueryCandidateSet> {
        let list = cfg
            .corpus
            .candidates
            .clone()
            .unwrap_or_else(default_caption_candidates);
        let v = self.spec.vocab.vocab_size();
        if list.iter().flatten().any(|&t| t >= v) {
            return Err(config("caption candidate token out of vocabulary"));
        }
        let labels = list.iter().map(|c| self.spec.vocab.render(c)).collect();
        QueryCandidateSet::new(list, labels)
    }

    /// Probe corpus with its caption queries replaced by `caption`.
    pub fn probe_pairs(&self, caption: &[usize]) -> Result<Vec<(SequenceInput, SequenceInput)>> {
        self.probe_corpus
            .iter()
            .map(|e| e.with_caption(caption).probe_pair())
            .collect()
    }
}

/// Result of the caption query search.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub candidates: QueryCandidateSet,
    pub best: usize,
    pub score: ShiftScore,
}

impl SearchOutcome {
    pub fn best_caption(&self) -> &[usize] {
        &self.candidates.candidates()[self.best]
    }
}

/// Runs the caption query search on the search corpus.
///
/// # Errors
///
/// As [`best_query_search`].
pub fn run_search(ws: &Workspace, cfg: &RunConfig) -> Result<SearchOutcome> {
    let candidates = ws.candidates(cfg)?;
    let images: Vec<_> = ws.search_corpus.iter().map(|e| e.scene.embeddings()).collect();
    let questions: Vec<_> = ws
        .search_corpus
        .iter()
        .map(|e| e.query.non_caption.clone())
        .collect();
    let (best, score) = best_query_search(&ws.weights, &images, &questions, &candidates, cfg.shift_mode)?;
    Ok(SearchOutcome {
        candidates,
        best,
        score,
    })
}

/// Change rates of the last token's visual attention, caption over
/// non-caption, on the probe corpus.
///
/// # Errors
///
/// Forward-pass and shape errors.
pub fn run_analysis(ws: &Workspace, caption: &[usize]) -> Result<ChangeRateReport> {
    let c = ws.weights.config();
    let mut cap = VisualAttentionProfile::empty(c.num_layers, c.num_heads);
    let mut non = VisualAttentionProfile::empty(c.num_layers, c.num_heads);
    for (ci, ni) in ws.probe_pairs(caption)? {
        cap.add_trace(
            &forward(&ws.weights, &ci, CaptureFlags::ATTENTION, None)?,
            ci.visual_len(),
        )?;
        non.add_trace(
            &forward(&ws.weights, &ni, CaptureFlags::ATTENTION, None)?,
            ni.visual_len(),
        )?;
    }
    change_rates(&cap, &non)
}

/// Probes every head with `caption` as the caption query.
///
/// # Errors
///
/// As [`probe_heads`].
pub fn run_probe(ws: &Workspace, cfg: &RunConfig, caption: &[usize]) -> Result<ProbeArtifact> {
    let dataset = build_probe_dataset(&ws.weights, &ws.probe_pairs(caption)?)?;
    probe_heads(&dataset, &cfg.classifier_params(), cfg.effective_top_k())
}

/// Intervention at the configured `alpha` and `top_k`.
///
/// # Errors
///
/// As [`build_gate`].
pub fn intervention_from(artifact: &ProbeArtifact, cfg: &RunConfig) -> Result<InterventionConfig> {
    let ranking = artifact.ranking(Some(cfg.effective_top_k()))?;
    Ok(build_gate(&ranking, &artifact.bank()?, cfg.alpha)?.with_positions(cfg.positions))
}

/// Baseline and intervened evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub baseline: EvalResult,
    pub intervened: EvalResult,
}

/// Evaluates the eval corpus with and without the intervention.
///
/// # Errors
///
/// [`Error::Provenance`] for an artifact probed on other weights, plus
/// the errors of [`evaluate`] and [`intervention_from`].
pub fn run_eval(ws: &Workspace, cfg: &RunConfig, artifact: &ProbeArtifact) -> Result<EvalPair> {
    if artifact.model_hash != ws.weights.model_hash() {
        return Err(Error::Provenance(
            "probe artifact was produced for different weights".into(),
        ));
    }
    let gate = intervention_from(artifact, cfg)?;
    Ok(EvalPair {
        baseline: evaluate(&ws.weights, &ws.eval_corpus, None)?,
        intervened: evaluate(&ws.weights, &ws.eval_corpus, Some(&gate))?,
    })
}

impl EvalPair {
    /// `condition,alpha,k,accuracy,f1,yes_rate` with a baseline and an
    /// intervened row.
    ///
    /// # Errors
    ///
    /// Only on writer failure.
    pub fn summary_csv(&self, alpha: f64, k: usize) -> Result<String> {
        let row = |name: &str, a: f64, k: usize, r: &EvalResult| {
            vec![
                name.to_owned(),
                sig9(a),
                k.to_string(),
                sig9(r.accuracy),
                sig9(r.f1),
                sig9(r.yes_rate),
            ]
        };
        csv_string(
            &["condition", "alpha", "k", "accuracy", "f1", "yes_rate"],
            [
                row("baseline", 0.0, 0, &self.baseline),
                row("intervened", alpha, k, &self.intervened),
            ],
        )
    }

    /// Per-question logits, `index,gold,baseline_logit,intervened_logit`.
    ///
    /// # Errors
    ///
    /// Only on writer failure.
    pub fn records_csv(&self) -> Result<String> {
        let yn = |b: bool| if b { "yes" } else { "no" }.to_owned();
        csv_string(
            &["index", "gold", "baseline_logit", "intervened_logit"],
            self.baseline
                .records
                .iter()
                .zip(&self.intervened.records)
                .enumerate()
                .map(|(i, (b, v))| vec![i.to_string(), yn(b.gold), sig9(b.logit), sig9(v.logit)]),
        )
    }
}

/// Sweeps the configured grids.
///
/// # Errors
///
/// As [`sweep`].
pub fn run_sweep(ws: &Workspace, cfg: &RunConfig, artifact: &ProbeArtifact) -> Result<SweepTable> {
    sweep(
        &ws.weights,
        &ws.eval_corpus,
        artifact,
        &cfg.alpha_grid,
        &cfg.effective_k_grid(),
        cfg.positions,
    )
}

/// Outputs of search, probe and evaluation in order.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub search: SearchOutcome,
    pub artifact: ProbeArtifact,
    pub eval: EvalPair,
}

/// Search, then probe with the selected caption, then evaluate.
///
/// # Errors
///
/// The first failing stage's error.
pub fn run_pipeline(ws: &Workspace, cfg: &RunConfig) -> Result<PipelineOutcome> {
    let search = run_search(ws, cfg)?;
    let artifact = run_probe(ws, cfg, search.best_caption())?;
    let eval = run_eval(ws, cfg, &artifact)?;
    Ok(PipelineOutcome {
        search,
        artifact,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::with_seed(3);
        cfg.corpus.probe_scenes = 20;
        cfg.corpus.eval_scenes = 20;
        cfg.corpus.search_scenes = 4;
        cfg
    }

    #[test]
    fn zero_k_leaves_accuracy_unchanged() {
        let mut cfg = small();
        cfg.top_k = Some(0);
        let ws = Workspace::prepare(&cfg).unwrap();
        let out = run_pipeline(&ws, &cfg).unwrap();
        assert_eq!(out.eval.baseline, out.eval.intervened);
    }

    #[test]
    fn prepare_is_deterministic() {
        let cfg = small();
        let a = Workspace::prepare(&cfg).unwrap();
        let b = Workspace::prepare(&cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.eval_corpus, b.eval_corpus);
    }

    #[test]
    fn mismatched_weights_file_rejected() {
        let dir = std::env::temp_dir().join(format!("capattn-ws-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut other = small();
        other.model.num_layers = 5;
        let w = Workspace::prepare(&other).unwrap().weights;
        let path = dir.join("w.json");
        std::fs::write(&path, w.to_json_bytes()).unwrap();
        let mut cfg = small();
        cfg.model.weights = Some(path);
        assert!(Workspace::prepare(&cfg).is_err());
        std::fs::remove_dir_all(dir).ok();
    }
}
