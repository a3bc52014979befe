//! End-to-end acceptance checks.
//!
//! Prints one `PASS`/`FAIL` line per criterion and exits non-zero if any
//! criterion fails. Pass a substring as the first argument to run a subset.

use std::collections::BTreeSet;
use std::ops::ControlFlow;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ianmt::data::{encode_corpus, gen_toy_task, EncodedPair, ParallelCorpus, TaskKind, Vocabulary, BOS, EOS, PAD};
use ianmt::eval::{bleu4, length_bucket_report, BUCKET_THRESHOLDS};
use ianmt::gradcheck::random_instance;
use ianmt::memory::{self, SourceMemory, WriteVars, FORGET_NAME, UPDATE_NAME};
use ianmt::model::{ModelConfig, ModelParams, StepOptions, Variant};
use ianmt::search::{beam_search, greedy_decode};
use ianmt::tensor::{log_softmax, Tape, Tensor};
use ianmt::train::{
    default_max_len, init_params_with_std, train, transfer_init, AdaDelta, Checkpoint, DevSet, TrainConfig, TrainOutcome,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 9] = [
    ("gradient-correctness", gradient_correctness),
    ("attention-memory-invariants", attention_memory_invariants),
    ("adadelta-closed-form", adadelta_closed_form),
    ("bleu-oracle", bleu_oracle),
    ("copy-task-learning", copy_task_learning),
    ("numword-directional-comparison", numword_directional_comparison),
    ("beam-search-oracle", beam_search_oracle),
    ("determinism-and-persistence", determinism_and_persistence),
    ("length-bucket-report", length_bucket_report_shape),
];

fn main() -> ExitCode {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let v = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "{} {}. {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// Shared helpers

fn toy_data(kind: TaskKind, n: usize, lens: std::ops::RangeInclusive<usize>, vocab: usize, seed: u64) -> ParallelCorpus {
    gen_toy_task(kind, n, lens, vocab, seed).unwrap()
}

struct Task {
    pairs: Vec<EncodedPair>,
    dev: DevSet,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
}

fn task(train: &ParallelCorpus, dev: &ParallelCorpus) -> Task {
    let src_vocab = Vocabulary::build(train.sources(), 1000).unwrap();
    let tgt_vocab = Vocabulary::build(train.targets(), 1000).unwrap();
    let pairs = encode_corpus(train, &src_vocab, &tgt_vocab);
    let dev_pairs = encode_corpus(dev, &src_vocab, &tgt_vocab);
    let dev = DevSet {
        sources: dev_pairs.into_iter().map(|p| p.src).collect(),
        references: dev.targets().cloned().collect(),
        vocab: tgt_vocab.clone(),
    };
    Task {
        pairs,
        dev,
        src_vocab,
        tgt_vocab,
    }
}

fn config(variant: Variant, t: &Task, d: usize) -> ModelConfig {
    ModelConfig {
        variant,
        src_vocab: t.src_vocab.len(),
        tgt_vocab: t.tgt_vocab.len(),
        d_emb: d,
        d_enc: d,
        d_s: 2 * d,
        d_a: d,
        d_readout: 2 * d,
    }
}

fn fresh(cfg: ModelConfig, std: f64, seed: u64) -> ModelParams {
    init_params_with_std(cfg, std, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients against central differences.

fn gradient_correctness() -> Verdict {
    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    // Relative-error denominator floor; see the gradient check note in the README.
    const FLOOR: f64 = 1e-5;
    let start = Instant::now();
    let mut summary = Vec::new();
    let mut pass = true;
    for variant in Variant::ALL {
        let mut worst = 0.0f64;
        let mut worst_unfloored = 0.0f64;
        for seed in 0..20 {
            let inst = random_instance(variant, seed, 8, 12).unwrap();
            assert!(inst.src.len() <= 5 && inst.tgt.len() <= 5);
            let (_, analytic) = inst.params.loss_and_gradients(&inst.src, &inst.tgt, None).unwrap();
            let names: Vec<String> = inst.params.store.names().map(str::to_string).collect();
            let mut probe = inst.params.clone();
            for (k, name) in names.iter().enumerate() {
                for i in 0..analytic[k].len() {
                    let original = probe.store.get(name).unwrap().data()[i];
                    probe.store.get_mut(name).unwrap().data_mut()[i] = original + STEP;
                    let up = probe.sentence_loss_value(&inst.src, &inst.tgt).unwrap();
                    probe.store.get_mut(name).unwrap().data_mut()[i] = original - STEP;
                    let down = probe.sentence_loss_value(&inst.src, &inst.tgt).unwrap();
                    probe.store.get_mut(name).unwrap().data_mut()[i] = original;
                    let numeric = (up - down) / (2.0 * STEP);
                    let a = analytic[k][i];
                    let diff = (a - numeric).abs();
                    let scale = a.abs().max(numeric.abs());
                    worst = worst.max(diff / scale.max(FLOOR));
                    worst_unfloored = worst_unfloored.max(diff / scale.max(1e-12));
                }
            }
        }
        pass &= worst <= TOL;
        summary.push(format!("{variant} {worst:.2e} (unfloored {worst_unfloored:.1e})"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    verdict(pass, format!("max rel error {}; {:.1}s (limit 120s, tol {TOL:e}, floor {FLOOR:e})", summary.join(", "), elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 2. Read/write invariants over randomized trials.

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Weights with at least one exact zero unless `n == 1`.
fn sparse_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    if n > 1 {
        let zeros = rng.random_range(1..n);
        for _ in 0..zeros {
            let i = rng.random_range(0..n);
            w[i] = 0.0;
        }
        if w.iter().all(|&x| x == 0.0) {
            w[0] = 1.0;
        }
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direct write on random memory; checks zero-weight rows are untouched
/// bit-for-bit and the rest match the gate formulas.
fn write_trial(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    let n = rng.random_range(1..=7);
    let m = rng.random_range(1..=6);
    let d = rng.random_range(1..=6);
    let cells = random_tensor(rng, vec![n, m], 2.0);
    let w = sparse_weights(rng, n);
    let wt = Tensor::vector(w.clone()).unwrap();
    let s = random_tensor(rng, vec![d], 1.0);
    let wf = random_tensor(rng, vec![m, d], 1.5);
    let wu = random_tensor(rng, vec![m, d], 1.5);

    let mut tape = Tape::new();
    let c = tape.leaf(&cells);
    let wv = tape.leaf(&wt);
    let sv = tape.leaf(&s);
    let params = WriteVars {
        w_f: tape.leaf(&wf),
        w_u: tape.leaf(&wu),
    };
    let mem = SourceMemory::new(&tape, c).unwrap();
    let out = memory::write(&mut tape, &mem, wv, sv, &params).unwrap();
    let after = tape.value(out.cells);

    let gate = |mat: &Tensor, i: usize| sigmoid((0..d).map(|j| mat.data()[i * d + j] * s.data()[j]).sum());
    for (i, &wi) in w.iter().enumerate() {
        for k in 0..m {
            let before = cells.data()[i * m + k];
            let got = after[i * m + k];
            if wi == 0.0 {
                if got.to_bits() != before.to_bits() {
                    return Err(format!("zero-weight cell ({i},{k}) changed {before} -> {got}"));
                }
            } else {
                let want = before * (1.0 - wi * gate(&wf, k)) + wi * gate(&wu, k);
                if (got - want).abs() > 1e-12 {
                    return Err(format!("cell ({i},{k}) is {got}, formula gives {want}"));
                }
            }
        }
    }
    Ok(())
}

/// Teacher-forced decode; checks the weight simplex and, for variants that
/// never write, a constant memory.
fn decode_trial(params: &ModelParams, src: &[usize], tgt: &[usize]) -> std::result::Result<(), String> {
    let mut tape = Tape::new();
    let model = params.bind(&mut tape, false).unwrap();
    let mut state = model.start(&mut tape, src).unwrap();
    let initial = bits(tape.value(state.memory.cells));
    let mut y_prev = BOS;
    for (t, &y) in tgt.iter().enumerate() {
        let out = model.decode_step(&mut tape, &state, y_prev, &mut StepOptions::inference()).unwrap();
        let w = tape.value(out.weights);
        if w.iter().any(|&x| !(x >= 0.0)) {
            return Err(format!("step {t}: negative weight in {w:?}"));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("step {t}: weights sum to {total}"));
        }
        state = out.state;
        if !params.config.variant.writes() && bits(tape.value(state.memory.cells)) != initial {
            return Err(format!("step {t}: {} memory changed", params.config.variant));
        }
        y_prev = y;
    }
    Ok(())
}

/// An interactive model built from `improved` with its write switched off
/// must reproduce the improved model bit for bit.
fn disabled_write_trial(improved: &ModelParams, src: &[usize], tgt: &[usize], seed: u64) -> std::result::Result<(), String> {
    let (interactive, _) = transfer_init(improved, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let run = |params: &ModelParams, opts: fn() -> StepOptions<'static>| {
        let mut tape = Tape::new();
        let model = params.bind(&mut tape, false).unwrap();
        let mut state = model.start(&mut tape, src).unwrap();
        let mut y_prev = BOS;
        let mut trace = Vec::new();
        for &y in tgt {
            let out = model.decode_step(&mut tape, &state, y_prev, &mut opts()).unwrap();
            trace.extend(bits(tape.value(out.logits)));
            trace.extend(bits(tape.value(out.weights)));
            trace.extend(bits(tape.value(out.state.s)));
            state = out.state;
            y_prev = y;
        }
        trace
    };
    if run(improved, StepOptions::inference) != run(&interactive, StepOptions::without_write) {
        return Err("write-disabled interactive output differs from improved".into());
    }
    Ok(())
}

fn attention_memory_invariants() -> Verdict {
    const TRIALS: u64 = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0;
    for trial in 0..TRIALS {
        let variant = Variant::ALL[(trial % 3) as usize];
        let inst = random_instance(variant, 50_000 + trial, 6, 10).unwrap();
        let result = write_trial(&mut rng)
            .and_then(|_| decode_trial(&inst.params, &inst.src, &inst.tgt))
            .and_then(|_| {
                if variant == Variant::Improved {
                    compared += 1;
                    disabled_write_trial(&inst.params, &inst.src, &inst.tgt, trial)
                } else {
                    Ok(())
                }
            });
        if let Err(e) = result {
            return verdict(false, format!("trial {trial} ({variant}): {e}"));
        }
    }
    verdict(
        true,
        format!("{TRIALS} trials: simplex weights, zero-weight cells bit-stable, constant memory without writes; {compared} bitwise write-disabled comparisons"),
    )
}

// ---------------------------------------------------------------------------
// 3. First AdaDelta step in closed form.

fn adadelta_closed_form() -> Verdict {
    const RHO: f64 = 0.95;
    const EPS: f64 = 1e-6;
    let shape = [0.0];
    let mut opt = AdaDelta::new([&shape[..]], RHO, EPS);
    let got = opt.step(&[vec![1.0]]).unwrap()[0][0];
    // E[g²] = (1 − ρ)g², Δ = −√(0 + ε) / √(E[g²] + ε) · g
    let g = 1.0f64;
    let sq = (1.0 - RHO) * g * g;
    let oracle = -(EPS).sqrt() / (sq + EPS).sqrt() * g;
    let pass = (got - (-4.4721e-3)).abs() <= 1e-7 && (got - oracle).abs() <= 1e-15;
    verdict(pass, format!("delta {got:.10e}, recurrence {oracle:.10e}, target -4.4721e-3 ± 1e-7"))
}

// ---------------------------------------------------------------------------
// 4. BLEU on a hand-counted example and on identical corpora.

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn bleu_oracle() -> Verdict {
    let hyp = vec![words("the cat sat on mat")];
    let reference = vec![words("the cat sat on the mat")];
    let got = bleu4(&hyp, &reference).unwrap();
    let manual = 100.0 * (1.0f64 * 3.0 / 4.0 * 2.0 / 3.0 * 1.0 / 2.0).powf(0.25) * (1.0f64 - 6.0 / 5.0).exp();
    let corpus = toy_data(TaskKind::NumWord, 50, 3..=12, 14, 4);
    let refs: Vec<Vec<String>> = corpus.targets().cloned().collect();
    let same = bleu4(&refs, &refs).unwrap();
    let pass = (got - 57.89).abs() <= 0.01 && (got - manual).abs() <= 1e-9 && same == 100.0;
    verdict(pass, format!("hand example {got:.4} (manual {manual:.4}, want 57.89 ± 0.01); identical corpora {same}"))
}

// ---------------------------------------------------------------------------
// 5. Copy task reaches high exact-match accuracy.

const TOY_INIT_STD: f64 = 0.1;

fn copy_task_learning() -> Verdict {
    let start = Instant::now();
    let t = task(
        &toy_data(TaskKind::Copy, 5000, 5..=15, 20, 1),
        &toy_data(TaskKind::Copy, 500, 5..=15, 20, 2),
    );
    let cfg = TrainConfig {
        batch_size: 32,
        max_epochs: 30,
        patience: 30,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut parts = Vec::new();
    let mut pass = true;
    for variant in [Variant::Improved, Variant::Interactive] {
        let model = ModelConfig {
            variant,
            src_vocab: t.src_vocab.len(),
            tgt_vocab: t.tgt_vocab.len(),
            d_emb: 32,
            d_enc: 32,
            d_s: 64,
            d_a: 32,
            d_readout: 64,
        };
        let mut reached = None;
        let mut best = 0.0f64;
        train(fresh(model, TOY_INIT_STD, 0), &t.pairs, &t.dev, &cfg, |r, _| {
            best = best.max(r.dev_accuracy);
            if r.dev_accuracy >= 0.95 {
                reached = Some(r.epoch);
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        pass &= reached.is_some();
        parts.push(match reached {
            Some(e) => format!("{variant} ≥95% at epoch {e}"),
            None => format!("{variant} best {:.1}% in 30 epochs", 100.0 * best),
        });
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(15 * 60);
    verdict(pass, format!("{}; {:.0}s (limit 900s)", parts.join(", "), elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 6. Interactive vs improved on numword, and pre-training speed-up.

const NUMWORD_DIM: usize = 16;
const NUMWORD_EPOCHS: usize = 8;

fn test_bleu(params: &ModelParams, t: &Task, test: &ParallelCorpus) -> f64 {
    let hyps: Vec<Vec<String>> = encode_corpus(test, &t.src_vocab, &t.tgt_vocab)
        .iter()
        .map(|p| {
            let h = greedy_decode(params, &p.src, default_max_len(p.src.len())).unwrap();
            t.tgt_vocab.decode(&h.tokens)
        })
        .collect();
    let refs: Vec<Vec<String>> = test.targets().cloned().collect();
    bleu4(&hyps, &refs).unwrap()
}

fn numword_directional_comparison() -> Verdict {
    let cfg = |seed| TrainConfig {
        batch_size: 8,
        max_epochs: NUMWORD_EPOCHS,
        patience: NUMWORD_EPOCHS,
        seed,
        ..TrainConfig::default()
    };
    let run = |p: ModelParams, t: &Task, seed| -> TrainOutcome {
        train(p, &t.pairs, &t.dev, &cfg(seed), |_, _| ControlFlow::Continue(())).unwrap()
    };
    let mut improved_scores = Vec::new();
    let mut interactive_scores = Vec::new();
    let mut speedup_ok = true;
    let mut speedups = Vec::new();
    for seed in 1..=3u64 {
        let t = task(
            &toy_data(TaskKind::NumWord, 2000, 15..=30, 14, 100 + seed),
            &toy_data(TaskKind::NumWord, 200, 15..=30, 14, 200 + seed),
        );
        let test = toy_data(TaskKind::NumWord, 200, 15..=30, 14, 300 + seed);
        let imp = run(fresh(config(Variant::Improved, &t, NUMWORD_DIM), TOY_INIT_STD, seed), &t, seed);
        let ia = run(fresh(config(Variant::Interactive, &t, NUMWORD_DIM), TOY_INIT_STD, seed), &t, seed);
        improved_scores.push(test_bleu(&imp.best.params, &t, &test));
        interactive_scores.push(test_bleu(&ia.best.params, &t, &test));

        // Fine-tune from the trained improved model until its dev BLEU is matched.
        let target = imp.best.dev_bleu;
        let (init, _) = transfer_init(&imp.best.params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let xfer = train(init, &t.pairs, &t.dev, &cfg(seed), |r, _| {
            if r.dev_bleu >= target {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        let warm = xfer.log.epochs_to_reach(target);
        let cold = ia.log.epochs_to_reach(target);
        speedup_ok &= match (warm, cold) {
            (Some(w), Some(c)) => 2 * w <= c,
            (Some(_), None) => true,
            (None, _) => false,
        };
        let show = |e: Option<usize>| e.map_or(format!(">{NUMWORD_EPOCHS}"), |e| e.to_string());
        speedups.push(format!("seed {seed}: target {target:.2}, warm {} vs cold {}", show(warm), show(cold)));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mi, mr) = (mean(&interactive_scores), mean(&improved_scores));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/");
    verdict(
        mi >= mr - 0.5 && speedup_ok,
        format!(
            "test BLEU interactive {mi:.2} [{}] vs improved {mr:.2} [{}] (need ≥ improved − 0.5); transfer epochs: {}",
            fmt(&interactive_scores),
            fmt(&improved_scores),
            speedups.join("; ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Beam search against brute force.

fn sequence_log_prob(params: &ModelParams, src: &[usize], tokens: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let model = params.bind(&mut tape, false).unwrap();
    let mut state = model.start(&mut tape, src).unwrap();
    let mut y_prev = BOS;
    let mut total = 0.0;
    for &y in tokens {
        let out = model.decode_step(&mut tape, &state, y_prev, &mut StepOptions::inference()).unwrap();
        total += log_softmax(tape.value(out.logits))[y];
        state = out.state;
        y_prev = y;
    }
    total
}

/// Best sequence of at most `max_len` emittable tokens by length-normalized
/// log-probability: finished (EOS-terminated) ones if any, else full-length.
fn enumerate_best(params: &ModelParams, src: &[usize], max_len: usize) -> (Vec<usize>, f64) {
    let alphabet: Vec<usize> = (0..params.config.tgt_vocab).filter(|&k| k != PAD && k != BOS).collect();
    let mut finished = Vec::new();
    let mut open = Vec::new();
    let mut frontier = vec![Vec::new()];
    for len in 1..=max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            for &k in &alphabet {
                let mut seq: Vec<usize> = prefix.clone();
                seq.push(k);
                match (k == EOS, len == max_len) {
                    (true, _) => finished.push(seq),
                    (false, true) => open.push(seq),
                    (false, false) => next.push(seq),
                }
            }
        }
        frontier = next;
    }
    let pool = if finished.is_empty() { open } else { finished };
    pool.into_iter()
        .map(|s| {
            let lp = sequence_log_prob(params, src, &s);
            (s, lp)
        })
        .max_by(|a, b| (a.1 / a.0.len() as f64).total_cmp(&(b.1 / b.0.len() as f64)))
        .unwrap()
}

fn beam_search_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for model in 0..50u64 {
        let variant = Variant::ALL[(model % 3) as usize];
        let mut params = ModelParams::zeros(ModelConfig {
            variant,
            src_vocab: 8,
            tgt_vocab: 4,
            d_emb: 3,
            d_enc: 3,
            d_s: 4,
            d_a: 3,
            d_readout: 4,
        })
        .unwrap();
        params.fill_uniform(&mut rng, 1.5);
        let len = rng.random_range(1..=4);
        let mut src: Vec<usize> = (0..len).map(|_| rng.random_range(3..8)).collect();
        src.push(EOS);
        let got = beam_search(&params, &src, 4, 3).unwrap().best;
        let (tokens, lp) = enumerate_best(&params, &src, 3);
        if got.tokens != tokens || (got.log_prob - lp).abs() > 1e-12 {
            return verdict(
                false,
                format!("model {model} ({variant}): beam {:?} ({}) vs exhaustive {tokens:?} ({lp})", got.tokens, got.log_prob),
            );
        }
    }
    verdict(true, "50 random models, V=4, max_len 3, beam 4: beam result equals exhaustive enumeration")
}

// ---------------------------------------------------------------------------
// 8. Reproducible training, lossless checkpoints, exact transfer sets.

fn forward_fingerprint(params: &ModelParams, pairs: &[EncodedPair]) -> Vec<u64> {
    let mut out = Vec::new();
    for p in pairs {
        out.push(params.sentence_loss_value(&p.src, &p.tgt).unwrap().to_bits());
        out.extend(greedy_decode(params, &p.src, 12).unwrap().tokens.iter().map(|&t| t as u64));
    }
    out
}

fn determinism_and_persistence() -> Verdict {
    let t = task(
        &toy_data(TaskKind::Copy, 200, 2..=6, 10, 11),
        &toy_data(TaskKind::Copy, 30, 2..=6, 10, 12),
    );
    let cfg = TrainConfig {
        batch_size: 16,
        max_epochs: 2,
        seed: 99,
        ..TrainConfig::default()
    };
    let run = |variant| {
        let p = fresh(config(variant, &t, 6), TOY_INIT_STD, 5);
        train(p, &t.pairs, &t.dev, &cfg, |_, _| ControlFlow::Continue(())).unwrap()
    };
    let mut problems = Vec::new();
    for variant in Variant::ALL {
        let a = run(variant).best.to_bytes().unwrap();
        let b = run(variant).best.to_bytes().unwrap();
        if a != b {
            problems.push(format!("{variant}: checkpoints differ between identical runs"));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let original = Checkpoint::from_bytes(&a).unwrap();
        original.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        if loaded.to_bytes().unwrap() != a {
            problems.push(format!("{variant}: save/load/save not byte-identical"));
        }
        let probe = &t.pairs[..10];
        if forward_fingerprint(&loaded.params, probe) != forward_fingerprint(&original.params, probe) {
            problems.push(format!("{variant}: forward outputs changed across a round trip"));
        }
    }

    let base = run(Variant::Improved).best.params;
    let (ia, report) = transfer_init(&base, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let base_names: BTreeSet<String> = base.store.names().map(str::to_string).collect();
    let ia_names: BTreeSet<String> = ia.store.names().map(str::to_string).collect();
    let copied: BTreeSet<String> = report.copied.iter().cloned().collect();
    let added: BTreeSet<String> = report.fresh.iter().cloned().collect();
    let want_fresh: BTreeSet<String> = [FORGET_NAME, UPDATE_NAME].iter().map(|s| s.to_string()).collect();
    if copied != base_names {
        problems.push("copied set differs from the base tensor set".into());
    }
    if added != want_fresh || ia_names.difference(&base_names).cloned().collect::<BTreeSet<_>>() != want_fresh {
        problems.push(format!("fresh set is {added:?}"));
    }
    for name in &base_names {
        if bits(base.store.get(name).unwrap().data()) != bits(ia.store.get(name).unwrap().data()) {
            problems.push(format!("{name} not copied bit-exactly"));
        }
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "identical bytes for repeated runs of all variants; lossless round trip; transfer copied {} tensors, fresh {:?}",
                copied.len(),
                want_fresh
            )
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------
// 9. Length-bucket report shape.

fn length_bucket_report_shape() -> Verdict {
    let corpus = toy_data(TaskKind::NumWord, 400, 1..=70, 14, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];
    // Hypotheses are references with seeded substitutions and deletions.
    let hyps: Vec<Vec<String>> = corpus
        .targets()
        .map(|r| {
            let mut h = Vec::with_capacity(r.len());
            for w in r {
                match rng.random_range(0.0..1.0) {
                    x if x < 0.1 => {}
                    x if x < 0.25 => h.push(words[rng.random_range(0..words.len())].to_string()),
                    _ => h.push(w.clone()),
                }
            }
            h
        })
        .collect();
    let refs: Vec<Vec<String>> = corpus.targets().cloned().collect();
    let lengths: Vec<usize> = corpus.sources().map(Vec::len).collect();
    let report = length_bucket_report(&lengths, &hyps, &refs).unwrap();
    let overall = bleu4(&hyps, &refs).unwrap();

    let mut problems = Vec::new();
    let thresholds: Vec<usize> = report.buckets.iter().map(|b| b.threshold).collect();
    if thresholds != BUCKET_THRESHOLDS || thresholds != [0, 10, 20, 30, 40, 50, 60] {
        problems.push(format!("buckets {thresholds:?}"));
    }
    if report.buckets[0].bleu.to_bits() != overall.to_bits() || report.overall.to_bits() != overall.to_bits() {
        problems.push(format!("bucket >0 {} vs overall {overall}", report.buckets[0].bleu));
    }
    for b in &report.buckets {
        let idx: Vec<usize> = (0..lengths.len()).filter(|&i| lengths[i] > b.threshold).collect();
        if b.n_sentences != idx.len() {
            problems.push(format!(">{}: {} sentences, expected {}", b.threshold, b.n_sentences, idx.len()));
        }
        let sub_h: Vec<&Vec<String>> = idx.iter().map(|&i| &hyps[i]).collect();
        let sub_r: Vec<&Vec<String>> = idx.iter().map(|&i| &refs[i]).collect();
        let want = if idx.is_empty() { 0.0 } else { bleu4(&sub_h, &sub_r).unwrap() };
        if (b.bleu - want).abs() > 1e-9 {
            problems.push(format!(">{}: bleu {} vs direct {want}", b.threshold, b.bleu));
        }
    }
    // Disjoint bands between consecutive thresholds partition the corpus.
    let counts: Vec<usize> = report.buckets.iter().map(|b| b.n_sentences).collect();
    let bands: usize = counts.windows(2).map(|w| w[0] - w[1]).sum::<usize>() + counts[6];
    if bands != lengths.len() {
        problems.push(format!("band counts sum to {bands}, corpus has {}", lengths.len()));
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!("7 buckets, counts {counts:?} of {}, bucket >0 = overall {overall:.4}", lengths.len())
        } else {
            problems.join("; ")
        },
    )
}
