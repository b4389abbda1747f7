// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use capattn_core::analysis::dense_grid_csv;
use capattn_core::config::RunConfig;
use capattn_core::harness::{write_corpus_jsonl, CorpusEntry, CorpusRecord};
use capattn_core::manifest::ArtifactWriter;
use capattn_core::model::ShiftPositions;
use capattn_core::pipeline::{
    run_analysis, run_eval, run_probe, run_search, run_sweep, SearchOutcome, Workspace,
};
use capattn_core::probe::ProbeArtifact;
use capattn_core::report::sig9;
use capattn_core::search::ShiftMode;
use serde_json::json;

use crate::{ArtifactArg, Command, Common, Positions};

/// Resolved config plus an output directory.
struct Run {
    cfg: RunConfig,
    out: ArtifactWriter,
}

impl Run {
    fn new(common: &Common, argv: Vec<String>) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => {
                RunConfig::load(path).with_context(|| format!("config: cannot load {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(alpha) = common.alpha {
            cfg.alpha = alpha;
        }
        if let Some(k) = common.top_k {
            cfg.top_k = Some(k);
        }
        if let Some(p) = common.positions {
            cfg.positions = match p {
                Positions::LastToken => ShiftPositions::LastToken,
                Positions::AllPositions => ShiftPositions::AllPositions,
            };
        }
        let dir = common
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        cfg.out_dir = None;
        cfg.validate().context("config")?;
        let mut out = ArtifactWriter::create(&dir, argv)
            .with_context(|| format!("output: cannot create {}", dir.display()))?;
        out.write("run_config.json", &cfg.to_json_bytes())?;
        Ok(Self { cfg, out })
    }

    fn workspace(&self) -> Result<Workspace> {
        Workspace::prepare(&self.cfg).context("gen")
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        self.out
            .write(name, bytes.as_ref())
            .with_context(|| format!("output: cannot write {name}"))?;
        Ok(())
    }

    fn write_corpora(&mut self, ws: &Workspace) -> Result<()> {
        self.write("weights.json", ws.weights.to_json_bytes())?;
        let mut spec = serde_json::to_vec_pretty(&ws.spec)?;
        spec.push(b'\n');
        self.write("planted_spec.json", spec)?;
        for (name, corpus) in [
            ("corpus_probe.jsonl", &ws.probe_corpus),
            ("corpus_eval.jsonl", &ws.eval_corpus),
            ("corpus_search.jsonl", &ws.search_corpus),
        ] {
            self.write(name, jsonl(corpus)?)?;
        }
        Ok(())
    }

    fn search(&mut self, ws: &Workspace) -> Result<SearchOutcome> {
        let s = run_search(ws, &self.cfg).context("search-query")?;
        self.write("query_scores.csv", s.score.to_csv(&s.candidates)?)?;
        println!(
            "best_query index={} label=\"{}\" shift={}",
            s.best,
            s.candidates.labels()[s.best],
            sig9(s.score.aggregate()[s.best])
        );
        Ok(s)
    }

    fn probe(&mut self, ws: &Workspace, caption: &[usize]) -> Result<ProbeArtifact> {
        let artifact = run_probe(ws, &self.cfg, caption).context("probe")?;
        self.write("probe_artifact.json", artifact.to_json_bytes())?;
        let ranking = artifact.ranking(None)?;
        self.write("head_accuracies.csv", dense_grid_csv(ranking.accuracies())?)?;
        let top: Vec<String> = ranking.top_k().iter().map(ToString::to_string).collect();
        println!("top_k k={} heads={}", ranking.k(), top.join(" "));
        Ok(artifact)
    }

    /// Loads `--probe-artifact` or probes inline.
    fn artifact(&mut self, ws: &Workspace, arg: &ArtifactArg) -> Result<ProbeArtifact> {
        match &arg.probe_artifact {
            Some(path) => read_artifact(path),
            None => {
                let s = self.search(ws)?;
                self.probe(ws, s.best_caption())
            }
        }
    }

    fn eval(&mut self, ws: &Workspace, artifact: &ProbeArtifact) -> Result<()> {
        let pair = run_eval(ws, &self.cfg, artifact).context("intervene")?;
        let k = artifact.ranking(Some(self.cfg.effective_top_k()))?.k();
        self.write("eval_summary.csv", pair.summary_csv(self.cfg.alpha, k)?)?;
        self.write("eval_records.csv", pair.records_csv()?)?;
        println!(
            "eval baseline_accuracy={} intervened_accuracy={} alpha={} k={k}",
            sig9(pair.baseline.accuracy),
            sig9(pair.intervened.accuracy),
            sig9(self.cfg.alpha)
        );
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let dir = self.out.dir().to_path_buf();
        self.out
            .finish()
            .with_context(|| format!("output: cannot write manifest in {}", dir.display()))?;
        Ok(())
    }
}

fn jsonl(corpus: &[CorpusEntry]) -> Result<Vec<u8>> {
    let records: Vec<CorpusRecord> = corpus.iter().map(CorpusRecord::from_entry).collect();
    let mut buf = Vec::new();
    write_corpus_jsonl(&mut buf, &records)?;
    Ok(buf)
}

fn read_artifact(path: &Path) -> Result<ProbeArtifact> {
    let bytes =
        std::fs::read(path).with_context(|| format!("probe artifact: cannot read {}", path.display()))?;
    ProbeArtifact::from_json_slice(&bytes)
        .with_context(|| format!("probe artifact: invalid {}", path.display()))
}

fn pretty(v: &serde_json::Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("json value serializes");
    out.push(b'\n');
    out
}

pub(crate) fn run(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::Gen(c) => {
            let mut run = Run::new(&c, argv)?;
            let ws = run.workspace()?;
            run.write_corpora(&ws)?;
            let planted: Vec<String> = ws.spec.planted.iter().map(ToString::to_string).collect();
            println!(
                "gen model_hash={} planted={}",
                ws.weights.model_hash(),
                planted.join(" ")
            );
            run.finish()
        }
        Command::Analyze(c) => {
            let mut run = Run::new(&c, argv)?;
            let ws = run.workspace()?;
            let caption = ws.candidates(&run.cfg).context("analyze")?.candidates()[0].clone();
            let report = run_analysis(&ws, &caption).context("analyze")?;
            run.write("head_rates.csv", report.head_csv()?)?;
            run.write("layer_rates.csv", report.layer_csv()?)?;
            run.write("head_deltas.csv", dense_grid_csv(report.deltas())?)?;
            let summary = json!({
                "fraction_enhanced": report.fraction_enhanced(),
                "enhanced_layers": report.enhanced_layers(),
                "num_layers": report.layer_rates().len(),
                "top_decile": report.top_decile().iter().map(ToString::to_string).collect::<Vec<_>>(),
            });
            run.write("analysis_summary.json", pretty(&summary))?;
            println!(
                "fraction_enhanced={} enhanced_layers={}/{}",
                sig9(report.fraction_enhanced()),
                report.enhanced_layers(),
                report.layer_rates().len()
            );
            run.finish()
        }
        Command::SearchQuery { common, signed } => {
            let mut run = Run::new(&common, argv)?;
            if signed {
                run.cfg.shift_mode = ShiftMode::Signed;
            }
            let ws = run.workspace()?;
            run.search(&ws)?;
            run.finish()
        }
        Command::Probe(c) => {
            let mut run = Run::new(&c, argv)?;
            let ws = run.workspace()?;
            let s = run.search(&ws)?;
            run.probe(&ws, s.best_caption())?;
            run.finish()
        }
        Command::Eval { common, artifact } => {
            let mut run = Run::new(&common, argv)?;
            let ws = run.workspace()?;
            let artifact = run.artifact(&ws, &artifact)?;
            run.eval(&ws, &artifact)?;
            run.finish()
        }
        Command::Sweep {
            common,
            artifact,
            alpha_grid,
            k_grid,
        } => {
            let mut run = Run::new(&common, argv)?;
            if let Some(g) = alpha_grid {
                if g.is_empty() {
                    bail!("usage: --alpha-grid must list at least one value");
                }
                run.cfg.alpha_grid = g;
            }
            if let Some(g) = k_grid {
                if g.is_empty() {
                    bail!("usage: --k-grid must list at least one value");
                }
                run.cfg.k_grid = Some(g);
            }
            run.cfg.validate().context("config")?;
            let ws = run.workspace()?;
            let artifact = run.artifact(&ws, &artifact)?;
            let table = run_sweep(&ws, &run.cfg, &artifact).context("sweep")?;
            run.write("sweep.csv", table.to_csv()?)?;
            let best = table.argmax();
            let summary = json!({
                "argmax": {
                    "alpha": best.alpha,
                    "k": best.k,
                    "accuracy": best.result.accuracy,
                    "f1": best.result.f1,
                    "yes_rate": best.result.yes_rate,
                },
                "cells": table.cells.len(),
            });
            run.write("sweep_summary.json", pretty(&summary))?;
            println!(
                "argmax alpha={} k={} accuracy={}",
                sig9(best.alpha),
                best.k,
                sig9(best.result.accuracy)
            );
            run.finish()
        }
        Command::Pipeline(c) => {
            let mut run = Run::new(&c, argv)?;
            let ws = run.workspace()?;
            run.write_corpora(&ws)?;
            let s = run.search(&ws)?;
            let artifact = run.probe(&ws, s.best_caption())?;
            run.eval(&ws, &artifact)?;
            run.finish()
        }
    }
}
