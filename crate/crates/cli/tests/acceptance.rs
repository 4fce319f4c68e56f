//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any failed. Tolerances are the constants
//! named next to each check.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use advrepair_cli::{run, EXIT_OK};
use advrepair_core::batch::{calibrate_items, InputItem, RepairBatch};
use advrepair_core::classifier::{ClassifierHandle, LabelSet};
use advrepair_core::detector::{
    calibrate_epsilon, golden_section_max, kl_divergence, CalibrationParams, Detector, ScoredSample,
};
use advrepair_core::fixtures::{fixture_embedding, FixtureWorld, GreedyAttack, LabeledText, CLUSTERS, LABELS};
use advrepair_core::perturb::{tb_perturb, PerturbConfig};
use advrepair_core::repair::{voting_hypothesis_rate, RepairConfig, Resources};
use advrepair_core::report::{Decision, Verdict};
use advrepair_core::testing::{FixedClassifier, FnClassifier};
use advrepair_core::text::{detokenize, split_sentences, tokenize, Token};
use advrepair_core::voting::{decision_bounds, hyp_test, simulate, SprtOutcome, SprtParams, SprtState};
use advrepair_core::Method;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn labels() -> LabelSet {
    LabelSet::new(["pos", "neg"])
}

// ---------------------------------------------------------------- 1

const KL_TOL: f64 = 1e-3;

fn kl_worked_example() -> Outcome {
    let got = kl_divergence(&[0.9656, 0.03438], &[0.68090, 0.3191]).map_err(|e| e.to_string())?;
    check(
        (got - 0.2608).abs() <= KL_TOL,
        format!("D_KL = {got:.5}, want 0.2608 +/- {KL_TOL}"),
    )
}

// ---------------------------------------------------------------- 2

const BOUND_TOL: f64 = 1e-3;

fn sprt_bounds() -> Outcome {
    let params = SprtParams::new(0.001, 0.001, 0.8, 0.15).map_err(|e| e.to_string())?;
    let (a, b) = decision_bounds(&params);
    check(
        (a + 6.9068).abs() <= BOUND_TOL && (b - 6.9068).abs() <= BOUND_TOL,
        format!("bounds = ({a:.5}, {b:.5}), want (-6.9068, 6.9068) +/- {BOUND_TOL}"),
    )
}

// ---------------------------------------------------------------- 3

fn unanimous_threshold() -> Outcome {
    let params = SprtParams::new(0.001, 0.001, 0.8, 0.15).map_err(|e| e.to_string())?;
    // oracle: first k where k * ln(p1/p0) drops to ln(beta / (1 - alpha))
    let (p0, p1) = (0.95f64, 0.65f64);
    let lower = (0.001f64 / 0.999).ln();
    let mut oracle = 0u64;
    let mut sum = 0.0;
    while sum > lower {
        oracle += 1;
        sum += (p1 / p0).ln();
    }
    let mut state = SprtState::new(2);
    let mut first_accept = None;
    for k in 1..=40u64 {
        state.observe(0);
        if hyp_test(0, &state, &params) == SprtOutcome::AcceptH0 {
            first_accept = Some(k);
            break;
        }
    }
    check(
        oracle == 19 && first_accept == Some(19),
        format!("accepts at k = {first_accept:?}, oracle k = {oracle}, want 19 (not 18)"),
    )
}

// ---------------------------------------------------------------- 4

const STREAMS: u64 = 5000;
const STREAM_CAP: u64 = 100_000;

fn error_calibration() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (alpha, beta, rho, sigma) in [
        (0.1, 0.1, 0.8, 0.16),
        (0.001, 0.001, 0.8, 0.15),
        (0.05, 0.05, 0.75, 0.1),
    ] {
        let params = SprtParams::new(alpha, beta, rho, sigma).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let at_p0 = simulate(&params, params.p0(), STREAMS, STREAM_CAP, &mut rng).map_err(|e| e.to_string())?;
        let at_p1 = simulate(&params, params.p1(), STREAMS, STREAM_CAP, &mut rng).map_err(|e| e.to_string())?;
        let reject_limit = alpha + 3.0 * (alpha / STREAMS as f64).sqrt();
        let accept_limit = beta + 3.0 * (beta / STREAMS as f64).sqrt();
        ok &= at_p0.reject_rate <= reject_limit && at_p1.accept_rate <= accept_limit;
        details.push(format!(
            "a={alpha} b={beta}: reject@p0 {:.4} <= {:.4}, accept@p1 {:.4} <= {:.4}",
            at_p0.reject_rate, reject_limit, at_p1.accept_rate, accept_limit
        ));
    }
    check(ok, details.join("; "))
}

// ---------------------------------------------------------------- 5

const GOLDEN_TOL: f64 = 1e-3;
const BIMODAL_SETS: usize = 100;

/// Exhaustive oracle: best number of correct samples over a grid of step
/// `tol / 10` across `[lo, hi]`, flagging `d >= eps`.
fn grid_best(scores: &[ScoredSample], params: &CalibrationParams) -> usize {
    let step = params.tol / 10.0;
    let n = ((params.hi - params.lo) / step).round() as usize;
    (0..=n)
        .map(|i| {
            let eps = params.lo + i as f64 * step;
            scores.iter().filter(|s| (s.d_kl >= eps) == s.adversarial).count()
        })
        .max()
        .unwrap_or(0)
}

fn golden_section() -> Outcome {
    let params = CalibrationParams::default();
    let peak = golden_section_max(|e| 1.0 - ((e - 3.0) / 10.0).powi(2), 0.0, 10.0, GOLDEN_TOL, 200)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut mismatches = 0;
    for _ in 0..BIMODAL_SETS {
        let n = rng.random_range(10..60);
        let (mu_n, mu_a) = (rng.random_range(0.0..1.5), rng.random_range(1.0..4.0));
        let scores: Vec<ScoredSample> = (0..n)
            .map(|i| {
                let adversarial = i % 2 == 0;
                let centre = if adversarial { mu_a } else { mu_n };
                // scores on a 0.005 lattice so every plateau is wider than the grid step
                let raw: f64 = centre + rng.random_range(-1.0..1.0);
                let d_kl = ((raw.max(0.0) * 200.0).round() / 200.0).min(9.5);
                ScoredSample { d_kl, adversarial }
            })
            .collect();
        let cal = calibrate_epsilon(&scores, &params).map_err(|e| e.to_string())?;
        let got = scores
            .iter()
            .filter(|s| (s.d_kl >= cal.epsilon) == s.adversarial)
            .count();
        if got != grid_best(&scores, &params) {
            mismatches += 1;
        }
    }
    check(
        (peak.x - 3.0).abs() <= GOLDEN_TOL && mismatches == 0,
        format!(
            "peak at {:.5} (want 3 +/- {GOLDEN_TOL}); {mismatches}/{BIMODAL_SETS} sets differ from grid search",
            peak.x
        ),
    )
}

// ---------------------------------------------------------------- 6

fn detector_of(p: &[f64], q: &[f64], eps: f64) -> Detector {
    let models: Vec<ClassifierHandle> = vec![
        Arc::new(FixedClassifier::new("f1", labels(), p)),
        Arc::new(FixedClassifier::new("f2", labels(), q)),
    ];
    Detector::new(eps, models).unwrap()
}

fn truth_table_and_monotonicity() -> Outcome {
    let differ = detector_of(&[0.7, 0.3], &[0.4, 0.6], 10.0)
        .check("x")
        .map_err(|e| e.to_string())?;
    let below = detector_of(&[0.7, 0.3], &[0.68, 0.32], 0.1)
        .check("x")
        .map_err(|e| e.to_string())?;
    let above = detector_of(&[0.99, 0.01], &[0.55, 0.45], 0.1)
        .check("x")
        .map_err(|e| e.to_string())?;
    let table = (differ.adversarial, below.adversarial, above.adversarial);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut flips = 0;
    for _ in 0..2000 {
        let a: f64 = rng.random_range(0.01..0.99);
        let b: f64 = rng.random_range(0.01..0.99);
        let (e1, e2) = {
            let x: f64 = rng.random_range(0.0..2.0);
            let y: f64 = rng.random_range(0.0..2.0);
            (x.min(y), x.max(y))
        };
        let lo = detector_of(&[a, 1.0 - a], &[b, 1.0 - b], e1).check("x").unwrap();
        let hi = detector_of(&[a, 1.0 - a], &[b, 1.0 - b], e2).check("x").unwrap();
        if !lo.adversarial && hi.adversarial {
            flips += 1;
        }
    }
    check(
        table == (true, false, true) && flips == 0,
        format!("truth table {table:?} (want (true, false, true)); {flips} false->true flips over 2000 pairs"),
    )
}

// ---------------------------------------------------------------- 7

const SUBW_INSTANCES: usize = 400;

/// Vocabulary index of each word, in canonical order, so that texts with
/// the same multiset of words get bit-identical scores.
fn bag(vocab: &[String], words: &[&str]) -> Vec<usize> {
    let mut idx: Vec<usize> = words.iter().filter_map(|w| vocab.iter().position(|v| v == w)).collect();
    idx.sort_unstable();
    idx
}

fn softmax2(logit: f64) -> [f64; 2] {
    let e = (-logit).exp();
    [1.0 / (1.0 + e), e / (1.0 + e)]
}

fn ref_kl(p: &[f64; 2], q: &[f64; 2]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| if *a == 0.0 { 0.0 } else { a * (a / b.max(1e-12)).ln() })
        .sum()
}

fn subw_oracle_equivalence() -> Outcome {
    let store = fixture_embedding().map_err(|e| e.to_string())?;
    let mut vocab: Vec<String> = CLUSTERS
        .iter()
        .flat_map(|(_, ws)| ws.iter().map(|w| w.to_string()))
        .collect();
    // words without synonyms must be skipped by the selection
    vocab.extend(["zork", "quux", "blorp"].map(String::from));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = Vec::new();
    for case in 0..SUBW_INSTANCES {
        let w1: Arc<Vec<f64>> = Arc::new((0..vocab.len()).map(|_| rng.random_range(-1.5..1.5)).collect());
        let w2: Arc<Vec<f64>> = Arc::new((0..vocab.len()).map(|_| rng.random_range(-1.5..1.5)).collect());
        let sentences: Vec<Vec<&str>> = (0..rng.random_range(1..=3))
            .map(|_| {
                (0..rng.random_range(1..=8))
                    .map(|_| vocab[rng.random_range(0..vocab.len())].as_str())
                    .collect()
            })
            .collect();
        let g = rng.random_range(1..=4);
        let text = sentences
            .iter()
            .map(|s| s.join(" ") + ".")
            .collect::<Vec<_>>()
            .join(" ");

        let make = |id: &str, w: Arc<Vec<f64>>| {
            let vocab = vocab.clone();
            FnClassifier::new(id, labels(), move |t: &str| {
                let toks = tokenize(t);
                let words: Vec<&str> = toks
                    .iter()
                    .filter(|x| x.is_word)
                    .map(|x| x.normalized.as_str())
                    .collect();
                let logit: f64 = bag(&vocab, &words).iter().map(|&i| w[i]).sum();
                softmax2(logit).to_vec()
            })
        };
        let f1 = make("f1", w1.clone());
        let f2 = make("f2", w2.clone());

        // brute-force ranking straight from the word lists
        let score = |ws: &[&str]| {
            let b = bag(&vocab, ws);
            let l1: f64 = b.iter().map(|&i| w1[i]).sum();
            let l2: f64 = b.iter().map(|&i| w2[i]).sum();
            ref_kl(&softmax2(l1), &softmax2(l2))
        };
        let sentence_scores: Vec<f64> = sentences.iter().map(|s| score(s)).collect();
        let mut s_order: Vec<usize> = (0..sentences.len()).collect();
        s_order.sort_by(|a, b| sentence_scores[*b].total_cmp(&sentence_scores[*a]));
        let mut offsets = Vec::new();
        let mut acc = 0;
        for s in &sentences {
            offsets.push(acc);
            acc += s.len() + 1;
        }
        let mut expected = BTreeSet::new();
        'outer: for &si in &s_order {
            let s = &sentences[si];
            let mut w_scores: Vec<(usize, f64)> = (0..s.len())
                .map(|j| {
                    let mut rest = s.clone();
                    rest.remove(j);
                    (j, sentence_scores[si] - score(&rest))
                })
                .collect();
            w_scores.sort_by(|a, b| b.1.total_cmp(&a.1));
            for (j, _) in w_scores {
                if expected.len() == g {
                    break 'outer;
                }
                if store.contains(s[j]) {
                    expected.insert(offsets[si] + j);
                }
            }
        }

        let doc = split_sentences(&text);
        let config = PerturbConfig {
            method: Method::Subw,
            max_words: g,
            synonyms: 5,
            ..Default::default()
        };
        let out = match tb_perturb(&doc, &config, &f1, &f2, &store, &mut rng) {
            Ok(out) => out,
            Err(_) if expected.is_empty() => continue,
            Err(e) => {
                mismatches.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let before = tokenize(&text);
        let after = tokenize(&out);
        let changed: BTreeSet<usize> = before
            .iter()
            .zip(&after)
            .enumerate()
            .filter(|(_, (a, b))| a.normalized != b.normalized)
            .map(|(i, _)| i)
            .collect();
        if before.len() != after.len() || changed != expected {
            mismatches.push(format!("case {case}: {text:?} g={g} got {changed:?} want {expected:?}"));
        }
    }
    check(
        mismatches.is_empty(),
        format!(
            "{} of {SUBW_INSTANCES} instances disagree with the ranking oracle{}",
            mismatches.len(),
            mismatches.first().map(|m| format!(" (first: {m})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- 8, 9

const CORPUS: usize = 400;
const MIN_ADVERSARIALS: usize = 50;
const REPAIR_TARGET: f64 = 0.70;
const HYPOTHESIS_SHARE: f64 = 0.80;
const HYPOTHESIS_CANDIDATES: usize = 100;

struct Scenario {
    world: FixtureWorld,
    detector: Detector,
    /// Held-out adversarials (not used for calibration) with truth labels.
    eval: Vec<LabeledText>,
    epsilon: f64,
    generated: usize,
}

fn scenario() -> Result<Scenario, String> {
    let world = FixtureWorld::build(CORPUS, 1, [1, 2]).map_err(|e| e.to_string())?;
    let corpus: Vec<LabeledText> = world.train.iter().chain(&world.test).cloned().collect();
    let adversarial = world
        .adversarials(&corpus, GreedyAttack::default())
        .map_err(|e| e.to_string())?;
    let generated = adversarial.len();
    // calibrate on odd-indexed adversarials plus clean texts; evaluate on the rest
    let mut cal_items: Vec<InputItem> = adversarial
        .iter()
        .skip(1)
        .step_by(2)
        .map(|x| InputItem {
            adversarial: Some(true),
            ..InputItem::new(&x.text)
        })
        .collect();
    cal_items.extend(corpus.iter().map(|x| InputItem {
        adversarial: Some(false),
        ..InputItem::new(&x.text)
    }));
    let probe = world.detector(0.0).map_err(|e| e.to_string())?;
    let report = calibrate_items(&cal_items, &probe, &CalibrationParams::default(), 1).map_err(|e| e.to_string())?;
    let detector = world.detector(report.epsilon).map_err(|e| e.to_string())?;
    let eval = adversarial.into_iter().step_by(2).collect();
    Ok(Scenario {
        world,
        detector,
        eval,
        epsilon: report.epsilon,
        generated,
    })
}

fn workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(2)
        .min(8)
}

fn end_to_end(s: &Scenario) -> Outcome {
    let models = s.detector.models();
    let mut kl_flags = 0;
    let mut baseline_flags = 0;
    for x in &s.eval {
        let v = s.detector.check(&x.text).map_err(|e| e.to_string())?;
        kl_flags += v.adversarial as usize;
        let a = models[0].classify(&x.text).map_err(|e| e.to_string())?;
        let b = models[1].classify(&x.text).map_err(|e| e.to_string())?;
        baseline_flags += (a.label() != b.label()) as usize;
    }

    let config = RepairConfig {
        detector: s.detector.clone(),
        perturb: PerturbConfig {
            method: Method::Subw,
            seed: 3,
            ..Default::default()
        },
        sprt: SprtParams::default(),
    };
    let lines: Vec<_> = s
        .eval
        .iter()
        .enumerate()
        .map(|(i, x)| advrepair_core::batch::ParsedLine {
            line: i + 1,
            item: Ok(InputItem {
                label: Some(x.label.clone()),
                ..InputItem::new(&x.text)
            }),
        })
        .collect();
    let batch = RepairBatch {
        config: &config,
        resources: Resources {
            store: &s.world.store,
            translator: None,
        },
        workers: workers(),
        reproducible: true,
    };
    let records = batch.run(&lines);
    let detected: Vec<_> = records.iter().filter(|r| r.verdict == Verdict::Adversarial).collect();
    let restored = detected
        .iter()
        .filter(|r| r.decision == Some(Decision::Accepted) && r.label_after == r.truth)
        .count();
    let errors = records.iter().filter(|r| r.verdict == Verdict::Error).count();
    let share = restored as f64 / detected.len().max(1) as f64;
    check(
        s.generated >= MIN_ADVERSARIALS && kl_flags > baseline_flags && share >= REPAIR_TARGET && errors == 0,
        format!(
            "{} adversarials generated, eps={:.4}; on {} held out: KL flags {kl_flags} vs baseline {baseline_flags}; \
             restored {restored}/{} = {share:.3} (want >= {REPAIR_TARGET})",
            s.generated,
            s.epsilon,
            s.eval.len(),
            detected.len()
        ),
    )
}

fn hypothesis_harness(s: &Scenario) -> Outcome {
    let config = RepairConfig {
        detector: s.detector.clone(),
        perturb: PerturbConfig {
            method: Method::Subw,
            seed: 11,
            ..Default::default()
        },
        sprt: SprtParams::default(),
    };
    let res = Resources {
        store: &s.world.store,
        translator: None,
    };
    let detected: Vec<&LabeledText> = s
        .eval
        .iter()
        .filter(|x| s.detector.check(&x.text).map(|v| v.adversarial).unwrap_or(false))
        .collect();
    let rates: Vec<Option<f64>> = advrepair_core::batch::run_ordered(&detected, workers(), |i, x| {
        let truth = LABELS.iter().position(|l| *l == x.label).expect("fixture label");
        let mut cfg = config.clone();
        cfg.perturb.seed += i as u64;
        voting_hypothesis_rate(&x.text, truth, &cfg, &res, HYPOTHESIS_CANDIDATES)
            .ok()
            .and_then(|h| h.rate)
    });
    let above = rates.iter().filter(|r| r.is_some_and(|r| r > 0.5)).count();
    let share = above as f64 / rates.len().max(1) as f64;
    check(
        !rates.is_empty() && share >= HYPOTHESIS_SHARE,
        format!(
            "rate > 0.5 on {above}/{} detected inputs = {share:.3} (want >= {HYPOTHESIS_SHARE})",
            rates.len()
        ),
    )
}

// ---------------------------------------------------------------- 10

const FUZZ_CASES: usize = 10_000;

fn fuzz_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "word", "Cap", "x", "don't", "U.S.", "3.14", "naïve", "日本", "e-mail", "...", "!", "?", ",", "\"", "'", "(",
        ")", "--", "é", "😀", "a1b2", "#tag", "@", ";", ":",
    ];
    const SEPS: &[&str] = &[" ", "  ", "\n", "\t", "", " \u{a0}", "\r\n"];
    let n = rng.random_range(0..30);
    (0..n)
        .map(|_| {
            let p = PIECES[rng.random_range(0..PIECES.len())];
            let s = SEPS[rng.random_range(0..SEPS.len())];
            format!("{p}{s}")
        })
        .collect()
}

fn determinism_and_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut broken = None;
    for _ in 0..FUZZ_CASES {
        let text = fuzz_text(&mut rng);
        let doc = split_sentences(&text);
        let tokens: Vec<Token> = doc.tokens().cloned().collect();
        if detokenize(&tokens, &doc).ok().as_deref() != Some(text.as_str()) {
            broken = Some(text);
            break;
        }
    }

    let world = FixtureWorld::build(200, 1, [1, 2]).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let emb = root.join("emb.txt");
    fs::write(&emb, world.store.to_text()).map_err(|e| e.to_string())?;
    let mut model_paths = Vec::new();
    for (i, m) in world.models.iter().enumerate() {
        let mut m = m.clone();
        m.embedding_ref = emb.display().to_string();
        let path = root.join(format!("m{i}.json"));
        fs::write(&path, serde_json::to_string(&m).unwrap()).map_err(|e| e.to_string())?;
        model_paths.push(path.display().to_string());
    }
    let adversarial = world
        .adversarials(&world.test, GreedyAttack::default())
        .map_err(|e| e.to_string())?;
    let input = root.join("in.jsonl");
    let rows: String = adversarial
        .iter()
        .chain(&world.test[..10])
        .map(|x| serde_json::json!({"text": x.text, "label": x.label}).to_string() + "\n")
        .collect();
    fs::write(&input, rows).map_err(|e| e.to_string())?;
    let models = model_paths.join(",");
    let replay = |out: &str| {
        let out = root.join(out);
        let args = [
            "advrepair",
            "repair",
            "--input",
            input.to_str().unwrap(),
            "--models",
            &models,
            "--epsilon",
            "0.03",
            "--seed",
            "5",
            "--workers",
            "4",
            "--reproducible",
            "--out",
            out.to_str().unwrap(),
        ];
        let code = run(args, &mut Vec::new(), &mut Vec::new());
        (code, fs::read(&out).unwrap_or_default())
    };
    let (c1, first) = replay("a.jsonl");
    let (c2, second) = replay("b.jsonl");
    let identical = c1 == EXIT_OK && c2 == EXIT_OK && !first.is_empty() && first == second;
    check(
        broken.is_none() && identical,
        format!(
            "{FUZZ_CASES} fuzz round trips {}; repair replay of {} bytes {}",
            match &broken {
                None => "hold".to_string(),
                Some(t) => format!("broke on {t:?}"),
            },
            first.len(),
            if identical { "byte-identical" } else { "differs" }
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut scenario_cache: Option<Result<Scenario, String>> = None;
    let mut failures = 0;
    let criteria: [(&str, &str); 10] = [
        ("1", "KL worked example"),
        ("2", "SPRT decision bounds"),
        ("3", "SPRT unanimous acceptance threshold"),
        ("4", "SPRT error calibration"),
        ("5", "golden-section calibration"),
        ("6", "detection truth table and monotonicity"),
        ("7", "SubW ranking oracle equivalence"),
        ("8", "end-to-end detection and repair"),
        ("9", "voting hypothesis harness"),
        ("10", "determinism and round trips"),
    ];
    for (id, name) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| match id {
            "1" => kl_worked_example(),
            "2" => sprt_bounds(),
            "3" => unanimous_threshold(),
            "4" => error_calibration(),
            "5" => golden_section(),
            "6" => truth_table_and_monotonicity(),
            "7" => subw_oracle_equivalence(),
            "8" | "9" => {
                let s = scenario_cache.get_or_insert_with(scenario);
                match s {
                    Ok(s) if id == "8" => end_to_end(s),
                    Ok(s) => hypothesis_harness(s),
                    Err(e) => Err(format!("scenario setup failed: {e}")),
                }
            }
            _ => determinism_and_round_trip(),
        }))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {id:>2} FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed in {:.1}s",
        10 - failures,
        started.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
