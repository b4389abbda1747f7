// SPDX-License-Identifier: MIT OR Apache-2.0

//! Planted model, corpus and evaluation behaviour.

use capattn_core::analysis::visual_attention_sum;
use capattn_core::config::{default_top_k, RunConfig};
use capattn_core::harness::{
    build_planted_model, evaluate, generate_corpus, mention_summary, sweep, CorpusEntry, PlantedModelSpec,
};
use capattn_core::intervention::build_gate;
use capattn_core::model::{forward, CaptureFlags, DecoderWeights, ShiftPositions};
use capattn_core::pipeline::{run_probe, run_search, Workspace};
use capattn_core::probe::build_probe_dataset;
use capattn_core::tensor::Vector;
use capattn_core::{Error, HeadGrid, HeadId};

fn planted() -> (PlantedModelSpec, DecoderWeights, Vec<CorpusEntry>) {
    let spec = PlantedModelSpec::default();
    let w = build_planted_model(&spec, 7).unwrap();
    let corpus = generate_corpus(8, 100, &spec).unwrap();
    (spec, w, corpus)
}

/// Mean over the corpus of caption minus non-caption visual attention.
fn mean_deltas(w: &DecoderWeights, corpus: &[CorpusEntry]) -> HeadGrid<f64> {
    let c = w.config();
    let mut acc = HeadGrid::filled(c.num_layers, c.num_heads, 0.0);
    for e in corpus {
        let (ci, ni) = e.probe_pair().unwrap();
        let m = ci.visual_len();
        let sc = visual_attention_sum(&forward(w, &ci, CaptureFlags::ATTENTION, None).unwrap(), m).unwrap();
        let sn = visual_attention_sum(&forward(w, &ni, CaptureFlags::ATTENTION, None).unwrap(), m).unwrap();
        acc = acc.map(|id, a| a + sc.get(id) - sn.get(id));
    }
    acc.map(|_, a| a / corpus.len() as f64)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

#[test]
fn planted_heads_gain_visual_attention() {
    let (spec, w, corpus) = planted();
    let deltas = mean_deltas(&w, &corpus);
    let (mut on, mut off): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    for (id, &d) in deltas.iter() {
        if spec.planted.contains(&id) {
            on.push(d);
        } else {
            off.push(d);
        }
    }
    assert!(on.iter().all(|&d| d >= 0.1), "planted deltas {on:?}");
    let mut sorted = off.clone();
    sorted.sort_by(f64::total_cmp);
    let p90 = sorted[(0.9 * (sorted.len() - 1) as f64).round() as usize];
    let planted_mean = on.iter().sum::<f64>() / on.len() as f64;
    assert!(
        planted_mean > p90,
        "planted mean {planted_mean}, 90th percentile {p90}"
    );
    let med = median(on);
    assert!(
        off.iter().all(|d| d.abs() < med),
        "planted median {med}, others {off:?}"
    );
}

#[test]
fn planted_head_gains_on_a_single_scene() {
    let (spec, w, corpus) = planted();
    let (ci, ni) = corpus[0].probe_pair().unwrap();
    let m = ci.visual_len();
    let sc = visual_attention_sum(&forward(&w, &ci, CaptureFlags::ATTENTION, None).unwrap(), m).unwrap();
    let sn = visual_attention_sum(&forward(&w, &ni, CaptureFlags::ATTENTION, None).unwrap(), m).unwrap();
    for id in &spec.planted {
        assert!(sc.get(*id) > sn.get(*id), "head {id}");
    }
}

#[test]
fn strength_must_be_positive() {
    let spec = PlantedModelSpec {
        strength: 0.0,
        ..PlantedModelSpec::default()
    };
    assert!(matches!(build_planted_model(&spec, 0), Err(Error::Config(_))));
}

#[test]
fn marker_appears_only_in_caption_queries() {
    let (spec, _, corpus) = planted();
    let marker = capattn_core::harness::tokens::MARKER;
    assert!(corpus.iter().all(|e| e.query.caption.contains(&marker)));
    assert!(corpus.iter().all(|e| !e.query.non_caption.contains(&marker)));
    assert_eq!(corpus.iter().filter(|e| e.query.gold.is_yes()).count(), 50);
    assert_eq!(spec.planted.len(), 4);
}

#[test]
fn zero_readout_answers_no() {
    let (_, w, corpus) = planted();
    let dim = w.config().model_dim;
    let mute = w.with_readout(Vector::zeros(dim)).unwrap();
    let r = evaluate(&mute, &corpus, None).unwrap();
    let no = corpus.iter().filter(|e| !e.query.gold.is_yes()).count() as f64 / corpus.len() as f64;
    assert_eq!(r.accuracy, no);
    assert_eq!(r.yes_rate, 0.0);
    assert_eq!(r.f1, 0.0);
}

#[test]
fn noise_free_circuit_is_perfect() {
    let mut spec = PlantedModelSpec::default();
    let c = &mut spec.circuit;
    (c.qk_sigma, c.v_sigma, c.o_sigma, c.answer_leak) = (0.0, 0.0, 0.0, 0.0);
    c.match_gain = 10.0;
    spec.scene.noise_scale = 0.0;
    spec.scene.amplitude_jitter = 0.0;
    let w = build_planted_model(&spec, 1).unwrap();
    let corpus = generate_corpus(2, 200, &spec).unwrap();
    let r = evaluate(&w, &corpus, None).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.f1, 1.0);
}

fn small_run(seed: u64) -> (RunConfig, Workspace) {
    let mut cfg = RunConfig::with_seed(seed);
    cfg.corpus.probe_scenes = 60;
    cfg.corpus.eval_scenes = 60;
    cfg.corpus.search_scenes = 6;
    let ws = Workspace::prepare(&cfg).unwrap();
    (cfg, ws)
}

#[test]
fn sweep_cells_match_direct_evaluation() {
    let (cfg, ws) = small_run(4);
    let s = run_search(&ws, &cfg).unwrap();
    let artifact = run_probe(&ws, &cfg, s.best_caption()).unwrap();
    let table = sweep(
        &ws.weights,
        &ws.eval_corpus,
        &artifact,
        &[0.0],
        &[0],
        ShiftPositions::LastToken,
    )
    .unwrap();
    assert_eq!(table.cells.len(), 1);
    let base = evaluate(&ws.weights, &ws.eval_corpus, None).unwrap();
    assert_eq!(table.cells[0].result, base);

    let table = sweep(
        &ws.weights,
        &ws.eval_corpus,
        &artifact,
        &[-0.5, 1.5],
        &[2, 5],
        ShiftPositions::LastToken,
    )
    .unwrap();
    let bank = artifact.bank().unwrap();
    for cell in &table.cells {
        let gate = build_gate(&artifact.ranking(Some(cell.k as i64)).unwrap(), &bank, cell.alpha).unwrap();
        assert_eq!(
            cell.result,
            evaluate(&ws.weights, &ws.eval_corpus, Some(&gate)).unwrap()
        );
    }
    assert!(table.get(1.5, 5).is_some());
    assert!(sweep(
        &ws.weights,
        &ws.eval_corpus,
        &artifact,
        &[],
        &[0],
        ShiftPositions::LastToken
    )
    .is_err());
}

#[test]
fn planted_heads_separate_their_classes() {
    let (cfg, ws) = small_run(5);
    let caption = ws.candidates(&cfg).unwrap().candidates()[0].clone();
    let ds = build_probe_dataset(&ws.weights, &ws.probe_pairs(&caption).unwrap()).unwrap();
    let mean = |vs: &[Vector]| -> Vec<f64> {
        let mut acc = vec![0.0; vs[0].dim()];
        for v in vs {
            for (a, x) in acc.iter_mut().zip(v.as_slice()) {
                *a += x / vs.len() as f64;
            }
        }
        acc
    };
    let sep = |id: HeadId| {
        let (a, b) = (
            mean(ds.caption_masked().get(id)),
            mean(ds.non_caption_masked().get(id)),
        );
        a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for (id, _) in ds.caption_masked().iter() {
        if ws.spec.planted.contains(&id) {
            on.push(sep(id));
        } else {
            off.push(sep(id));
        }
    }
    let ratio = median(on) / median(off);
    assert!(ratio > 2.0, "separation ratio {ratio}");

    let swapped: Vec<_> = ws
        .probe_pairs(&caption)
        .unwrap()
        .into_iter()
        .map(|(c, n)| (n, c))
        .collect();
    let flipped = build_probe_dataset(&ws.weights, &swapped).unwrap();
    assert_eq!(flipped.caption_masked(), ds.non_caption_masked());
    assert_eq!(flipped.non_caption_masked(), ds.caption_masked());
}

#[test]
fn mention_summary_is_well_formed() {
    let (spec, w, corpus) = planted();
    let s = mention_summary(&w, &corpus[..10], &spec.vocab, 3, None).unwrap();
    assert!((0.0..=1.0).contains(&s.instance_rate));
    assert!((0.0..=1.0).contains(&s.scene_rate));
    assert!((0.0..=3.0).contains(&s.mentions_per_scene));
    assert!(mention_summary(&w, &[], &spec.vocab, 3, None).is_err());
}

#[test]
fn defaults_follow_the_reference_settings() {
    let cfg = RunConfig::default();
    assert_eq!(cfg.alpha, 1.5);
    // 100 of 1024 heads, rounded up.
    assert_eq!(default_top_k(1024), 101);
    assert_eq!(default_top_k(48), 5);
    assert_eq!(cfg.effective_k_grid(), vec![0, 5, 12, 24, 48]);
    assert!(cfg.alpha_grid.contains(&-0.5) && cfg.alpha_grid.contains(&0.0));
}
