//! Acceptance suite. Each test prints one PASS/FAIL (or SKIPPED) line for
//! its criterion; run with `--nocapture` to see them. Criterion 9 is an
//! informational integration band: its result is reported but it only
//! fails on machinery errors, never on the band itself.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tpan_core::checkpoint;
use tpan_core::corpus::{load_semeval, Example, Stance, Vocab};
use tpan_core::eval::{accuracy3, f1, macro_f_fa, report, ConfusionMatrix};
use tpan_core::gradcheck::run_suite;
use tpan_core::model::{argmax, ModelConfig, PhaseModel};
use tpan_core::optim::OptimizerKind;
use tpan_core::pipeline::{train_all, TrainConfig, TrainedModel, TwoPhaseModel};
use tpan_core::tensor::{Tape, Tensor};

fn bits(t: &Tensor) -> Vec<u64> {
    t.values().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn acceptance_01_gradient_correctness() {
    let start = Instant::now();
    let outcomes = run_suite(7).expect("gradcheck suite runs");
    let mut all_ok = true;
    for o in &outcomes {
        if !o.passed {
            all_ok = false;
            println!("  gradcheck {} FAILED: max rel err {:.3e}", o.name, o.max_rel_err);
        }
    }
    let elapsed = start.elapsed();
    assert!(all_ok, "gradient checks failed");
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "gradcheck took {elapsed:?}, budget is 30 s"
    );
    println!(
        "ACCEPTANCE 1 (gradient correctness): PASS — {} checks, worst rel err {:.3e}, {:.1?}",
        outcomes.len(),
        outcomes.iter().map(|o| o.max_rel_err).fold(0.0, f64::max),
        elapsed
    );
}

#[test]
fn acceptance_02_attention_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for round in 0..1000u64 {
        let cfg = ModelConfig {
            embed_dim: rng.random_range(2..8),
            hidden: rng.random_range(2..6),
            seed: round,
            init_scale: rng.random_range(0.3..2.5),
            attention: true,
        };
        let vocab_size = rng.random_range(5..25);
        let model = PhaseModel::init(&cfg, vocab_size);
        let m = rng.random_range(1..14);
        let tweet: Vec<usize> = (0..m).map(|_| rng.random_range(0..vocab_size)).collect();
        let target: Vec<usize> = (0..rng.random_range(1..4))
            .map(|_| rng.random_range(0..vocab_size))
            .collect();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &tweet, &target).unwrap();
        let attn = out.attention.values();
        let sum: f64 = attn.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "round {round}: weights sum to {sum}");
        assert!(
            attn.iter().all(|&w| w > 0.0 && w < 1.0 + 1e-15),
            "round {round}: weight outside (0,1): {attn:?}"
        );
    }

    // zero attention parameters -> exactly uniform 1/m
    for m in 1..10usize {
        let cfg = ModelConfig {
            embed_dim: 4,
            hidden: 3,
            seed: 5,
            init_scale: 1.0,
            attention: true,
        };
        let mut model = PhaseModel::init(&cfg, 12);
        model.attn_weight = Tensor::param(&[8, 1], vec![0.0; 8]).unwrap();
        model.attn_bias = Tensor::param(&[1], vec![0.0]).unwrap();
        let tweet: Vec<usize> = (0..m).map(|i| (i % 11) + 1).collect();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &tweet, &[3]).unwrap();
        let expect = 1.0 / m as f64;
        for w in out.attention.values() {
            assert_eq!(w.to_bits(), expect.to_bits(), "m={m}: weight {w} != 1/{m}");
        }
    }
    println!("ACCEPTANCE 2 (attention normalization): PASS — 1000 random models + uniform case");
}

#[test]
fn acceptance_03_target_query_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for round in 0..200u64 {
        let cfg = ModelConfig {
            embed_dim: rng.random_range(2..8),
            hidden: rng.random_range(2..6),
            seed: round,
            init_scale: 1.0,
            attention: true,
        };
        let vocab_size = 18;
        let model = PhaseModel::init(&cfg, vocab_size);
        let tweet: Vec<usize> = (0..rng.random_range(1..9))
            .map(|_| rng.random_range(0..vocab_size))
            .collect();
        let mut target: Vec<usize> = (0..rng.random_range(1..6))
            .map(|_| rng.random_range(0..vocab_size))
            .collect();

        let mut tape = Tape::new();
        let base = model.forward(&mut tape, &tweet, &target).unwrap();
        let base_probs = bits(&base.probs);
        let base_attn = bits(&base.attention);

        target.reverse();
        let mut tape_r = Tape::new();
        let rev = model.forward(&mut tape_r, &tweet, &target).unwrap();
        assert_eq!(base_probs, bits(&rev.probs), "round {round}: reversal changed output");

        for _ in 0..3 {
            for i in (1..target.len()).rev() {
                let j = rng.random_range(0..=i);
                target.swap(i, j);
            }
            let mut tape_s = Tape::new();
            let out = model.forward(&mut tape_s, &tweet, &target).unwrap();
            assert_eq!(base_probs, bits(&out.probs), "round {round}: shuffle changed probs");
            assert_eq!(base_attn, bits(&out.attention), "round {round}: shuffle changed attention");
        }
    }
    println!("ACCEPTANCE 3 (target-query invariance): PASS — outputs bit-identical under shuffles");
}

fn toy_vocab(size: usize) -> Vocab {
    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    for i in 2..size {
        tokens.push(format!("w{i}"));
    }
    Vocab::from_ordered_tokens(tokens).unwrap()
}

fn random_two_phase(rng: &mut ChaCha8Rng, vocab_size: usize) -> TwoPhaseModel {
    let cfg1 = ModelConfig {
        embed_dim: 5,
        hidden: 4,
        seed: rng.random(),
        init_scale: rng.random_range(0.5..2.0),
        attention: true,
    };
    let cfg2 = ModelConfig {
        seed: rng.random(),
        ..cfg1.clone()
    };
    TwoPhaseModel {
        phase1: PhaseModel::init(&cfg1, vocab_size),
        phase2: PhaseModel::init(&cfg2, vocab_size),
        vocab: toy_vocab(vocab_size),
        config: TrainConfig::default(),
    }
}

#[test]
fn acceptance_04_routing_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vocab_size = 16;
    for round in 0..200 {
        let two = random_two_phase(&mut rng, vocab_size);
        let tweet: Vec<usize> = (0..rng.random_range(1..10))
            .map(|_| rng.random_range(0..vocab_size))
            .collect();
        let target: Vec<usize> = (0..rng.random_range(1..3))
            .map(|_| rng.random_range(0..vocab_size))
            .collect();

        let mut tape = Tape::new();
        let out1 = two.phase1.forward(&mut tape, &tweet, &target).unwrap();
        let neutral = argmax(&out1.probs.values()) == 1;

        let pred = two.predict_ids(&tweet, &target).unwrap();
        assert!(matches!(pred, Stance::Favor | Stance::Against | Stance::None));
        assert_eq!(
            pred == Stance::None,
            neutral,
            "round {round}: NONE iff phase-1 argmax is NEUTRAL"
        );

        // scrambling phase 2 cannot touch NONE-routed examples
        if pred == Stance::None {
            let mut scrambled = two.clone();
            scrambled.phase2 = PhaseModel::init(
                &ModelConfig {
                    embed_dim: 5,
                    hidden: 4,
                    seed: rng.random(),
                    init_scale: 5.0,
                    attention: true,
                },
                vocab_size,
            );
            assert_eq!(scrambled.predict_ids(&tweet, &target).unwrap(), Stance::None);
        }
    }

    // exact tie in phase 1 breaks toward SUBJECTIVE, so phase 2 decides
    let mut two = random_two_phase(&mut rng, vocab_size);
    two.phase1.class_weight = Tensor::param(&[8, 2], vec![0.0; 16]).unwrap();
    two.phase1.class_bias = Tensor::param(&[2], vec![0.0; 2]).unwrap();
    let pred = two.predict_ids(&[2, 3, 4], &[5]).unwrap();
    assert_ne!(pred, Stance::None, "tied phase-1 probabilities must route to phase 2");

    println!("ACCEPTANCE 4 (routing contract): PASS — 200 random models + tie case");
}

#[test]
fn acceptance_05_loss_isolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab_size = 14;
    let mut probes = 0;
    while probes < 100 {
        let two = random_two_phase(&mut rng, vocab_size);
        let tweet: Vec<usize> = (0..rng.random_range(1..8))
            .map(|_| rng.random_range(0..vocab_size))
            .collect();
        let target = vec![rng.random_range(0..vocab_size)];
        let label = rng.random_range(0..2);

        // phase-1 loss must leave every phase-2 gradient untouched
        let mut tape = Tape::new();
        let out = two.phase1.forward(&mut tape, &tweet, &target).unwrap();
        let loss = tape.cross_entropy(&out.logits, label).unwrap();
        tape.backward(&loss).unwrap();
        for _ in 0..3 {
            let params = two.phase2.params();
            let param = &params[rng.random_range(0..params.len())];
            let zeroed = param
                .grad()
                .map(|g| g.iter().all(|&x| x == 0.0))
                .unwrap_or(true);
            assert!(zeroed, "phase-1 backward leaked into a phase-2 gradient");
            probes += 1;
        }
        for p in two.phase1.params() {
            p.zero_grad();
        }

        // and the other direction
        let mut tape2 = Tape::new();
        let out2 = two.phase2.forward(&mut tape2, &tweet, &target).unwrap();
        let loss2 = tape2.cross_entropy(&out2.logits, label).unwrap();
        tape2.backward(&loss2).unwrap();
        for _ in 0..3 {
            let params = two.phase1.params();
            let param = &params[rng.random_range(0..params.len())];
            let zeroed = param
                .grad()
                .map(|g| g.iter().all(|&x| x == 0.0))
                .unwrap_or(true);
            assert!(zeroed, "phase-2 backward leaked into a phase-1 gradient");
            probes += 1;
        }
    }
    println!("ACCEPTANCE 5 (loss isolation): PASS — {probes} cross-phase probes, all exact zeros");
}

/// The 16-example corpus: 8 subjective (4 FAVOR / 4 AGAINST with
/// distinctive cue words) and 8 neutral.
fn overfit_corpus() -> Vec<Example> {
    let mut out = Vec::new();
    let favor = [
        "wonderful blessing we fully support this cause",
        "great joy and hope this movement is wonderful",
        "proudly support the blessing it brings joy",
        "hope and support make this wonderful cause great",
    ];
    let against = [
        "terrible disaster we strongly oppose this harm",
        "awful ruin and harm this movement is terrible",
        "strongly oppose the disaster it brings ruin",
        "harm and ruin make this terrible cause awful",
    ];
    let neutral = [
        "the weather report said tuesday may rain",
        "meeting agenda includes schedule and room notes",
        "the bus timetable changed on thursday morning",
        "lunch menu lists soup salad and bread",
        "the library opens at nine on weekdays",
        "update the calendar entry for next week",
        "platform nine departs for the city center",
        "the printer manual covers paper tray setup",
    ];
    for (i, t) in favor.iter().enumerate() {
        out.push(Example {
            id: format!("f{i}"),
            target: "Synthetic Topic".into(),
            tweet: t.to_string(),
            stance: Stance::Favor,
        });
    }
    for (i, t) in against.iter().enumerate() {
        out.push(Example {
            id: format!("a{i}"),
            target: "Synthetic Topic".into(),
            tweet: t.to_string(),
            stance: Stance::Against,
        });
    }
    for (i, t) in neutral.iter().enumerate() {
        out.push(Example {
            id: format!("n{i}"),
            target: "Synthetic Topic".into(),
            tweet: t.to_string(),
            stance: Stance::None,
        });
    }
    out
}

#[test]
fn acceptance_06_overfit_smoke_test() {
    let start = Instant::now();
    let examples = overfit_corpus();
    assert_eq!(examples.len(), 16);
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Adam,
        learning_rate: 0.01,
        epochs: 500,
        seed: 7,
        per_target: false,
        embed_dim: 16,
        hidden: 8,
        ..TrainConfig::default()
    };
    let outcome = train_all(&examples, &cfg).expect("training succeeds");
    let prep = cfg.preprocessor();
    let correct = examples
        .iter()
        .filter(|ex| outcome.model.predict(ex, &prep).unwrap() == ex.stance)
        .count();
    let elapsed = start.elapsed();
    assert_eq!(
        correct,
        examples.len(),
        "training accuracy {}/{} after {} epochs",
        correct,
        examples.len(),
        cfg.epochs
    );
    assert!(elapsed.as_secs_f64() < 60.0, "overfit test took {elapsed:?}, budget 60 s");
    println!(
        "ACCEPTANCE 6 (overfit smoke test): PASS — 16/16 within {} epochs, {:.1?}",
        cfg.epochs, elapsed
    );
}

/// Independent per-example recount, no confusion matrix involved.
fn brute_force_metrics(gold: &[Stance], pred: &[Stance]) -> (f64, f64) {
    fn f1_of(gold: &[Stance], pred: &[Stance], class: Stance) -> f64 {
        let tp = gold
            .iter()
            .zip(pred)
            .filter(|(&g, &p)| g == class && p == class)
            .count() as f64;
        let fp = gold
            .iter()
            .zip(pred)
            .filter(|(&g, &p)| g != class && p == class)
            .count() as f64;
        let fn_ = gold
            .iter()
            .zip(pred)
            .filter(|(&g, &p)| g == class && p != class)
            .count() as f64;
        let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }
    let macro_fa = (f1_of(gold, pred, Stance::Favor) + f1_of(gold, pred, Stance::Against)) / 2.0;
    let acc = gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / gold.len() as f64;
    (macro_fa, acc)
}

#[test]
fn acceptance_07_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let stances = [Stance::Favor, Stance::Against, Stance::None];
    for round in 0..1000 {
        let n = rng.random_range(1..60);
        let gold: Vec<Stance> = (0..n).map(|_| stances[rng.random_range(0..3)]).collect();
        let pred: Vec<Stance> = (0..n).map(|_| stances[rng.random_range(0..3)]).collect();
        let cm = ConfusionMatrix::from_pairs(&gold, &pred).unwrap();
        let (bf_macro, bf_acc) = brute_force_metrics(&gold, &pred);
        assert_eq!(macro_f_fa(&cm), bf_macro, "round {round}: macro-F mismatch");
        assert_eq!(accuracy3(&cm).unwrap(), bf_acc, "round {round}: accuracy mismatch");
    }

    // hand case: FAVOR tp=2 fp=1 fn=1 -> F1 = 2/3 exactly
    use Stance::{Against as A, Favor as F};
    let gold = [F, F, F, A];
    let pred = [F, F, A, F];
    let cm = ConfusionMatrix::from_pairs(&gold, &pred).unwrap();
    assert_eq!(f1(&cm, Stance::Favor), 2.0 / 3.0);

    println!("ACCEPTANCE 7 (metric oracle): PASS — 1000 random sets exact, hand case exact");
}

struct Table2Row {
    target: &'static str,
    train: usize,
    train_pct: [f64; 3], // favor, against, none
    test: usize,
    test_pct: [f64; 3],
}

const TABLE2: [Table2Row; 5] = [
    Table2Row {
        target: "Atheism",
        train: 513,
        train_pct: [17.9, 59.3, 22.8],
        test: 220,
        test_pct: [14.5, 72.7, 12.7],
    },
    Table2Row {
        target: "Climate Change is a Real Concern",
        train: 395,
        train_pct: [53.7, 3.8, 42.5],
        test: 169,
        test_pct: [72.8, 6.5, 20.7],
    },
    Table2Row {
        target: "Feminist Movement",
        train: 664,
        train_pct: [31.6, 49.4, 19.0],
        test: 285,
        test_pct: [20.4, 64.2, 15.4],
    },
    Table2Row {
        target: "Hillary Clinton",
        train: 689,
        train_pct: [17.1, 57.0, 25.8],
        test: 295,
        test_pct: [15.3, 58.3, 26.4],
    },
    Table2Row {
        target: "Legalization of Abortion",
        train: 653,
        train_pct: [18.5, 54.4, 27.1],
        test: 280,
        test_pct: [16.4, 67.5, 16.1],
    },
];

const TRAIN_TOTAL: usize = 2914;
const TEST_TOTAL: usize = 1249;

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn official_file(env_key: &str, candidates: &[&str]) -> Option<PathBuf> {
    if let Ok(path) = std::env::var(env_key) {
        let p = PathBuf::from(path);
        if p.exists() {
            return Some(p);
        }
    }
    let root = workspace_root().join("data/semeval2016");
    candidates.iter().map(|c| root.join(c)).find(|p| p.exists())
}

fn official_train() -> Option<PathBuf> {
    official_file(
        "TPAN_SEMEVAL_TRAIN",
        &["train.tsv", "trainingdata-all-annotations.txt"],
    )
}

fn official_test() -> Option<PathBuf> {
    official_file(
        "TPAN_SEMEVAL_TEST",
        &["test.tsv", "SemEval2016-Task6-subtaskA-testdata-gold.txt"],
    )
}

fn stance_percentages(examples: &[Example]) -> [f64; 3] {
    let total = examples.len() as f64;
    let mut counts = [0usize; 3];
    for ex in examples {
        counts[ex.stance.index()] += 1;
    }
    [
        100.0 * counts[0] as f64 / total,
        100.0 * counts[1] as f64 / total,
        100.0 * counts[2] as f64 / total,
    ]
}

#[test]
fn acceptance_08_data_ingestion() {
    let (train_path, test_path) = match (official_train(), official_test()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            println!(
                "ACCEPTANCE 8 (data ingestion): SKIPPED — official files not found \
                 (set TPAN_SEMEVAL_TRAIN/TPAN_SEMEVAL_TEST or place them under data/semeval2016/)"
            );
            return;
        }
    };
    let train = load_semeval(&train_path).expect("train file parses");
    let test = load_semeval(&test_path).expect("test file parses");
    assert_eq!(train.len(), TRAIN_TOTAL, "train example count");
    assert_eq!(test.len(), TEST_TOTAL, "test example count");

    for row in &TABLE2 {
        let tr: Vec<Example> = train.iter().filter(|e| e.target == row.target).cloned().collect();
        let te: Vec<Example> = test.iter().filter(|e| e.target == row.target).cloned().collect();
        assert_eq!(tr.len(), row.train, "{} train count", row.target);
        assert_eq!(te.len(), row.test, "{} test count", row.target);
        let tr_pct = stance_percentages(&tr);
        let te_pct = stance_percentages(&te);
        for i in 0..3 {
            assert!(
                (tr_pct[i] - row.train_pct[i]).abs() <= 0.1,
                "{} train pct class {i}: {:.2} vs {:.1}",
                row.target,
                tr_pct[i],
                row.train_pct[i]
            );
            assert!(
                (te_pct[i] - row.test_pct[i]).abs() <= 0.1,
                "{} test pct class {i}: {:.2} vs {:.1}",
                row.target,
                te_pct[i],
                row.test_pct[i]
            );
        }
    }
    let all_train_pct = stance_percentages(&train);
    let all_test_pct = stance_percentages(&test);
    for (i, (expect_tr, expect_te)) in [(25.8, 24.3), (47.9, 57.3), (26.3, 18.4)].iter().enumerate() {
        assert!((all_train_pct[i] - expect_tr).abs() <= 0.1);
        assert!((all_test_pct[i] - expect_te).abs() <= 0.1);
    }
    println!("ACCEPTANCE 8 (data ingestion): PASS — all counts and percentages match");
}

#[test]
fn acceptance_09_integration_band() {
    let (train_path, test_path) = match (official_train(), official_test()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            println!(
                "ACCEPTANCE 9 (integration band): SKIPPED — official files not found \
                 (informational band; reference ceiling macro-F 0.6884, accuracy 0.6024)"
            );
            return;
        }
    };
    let start = Instant::now();
    let train = load_semeval(&train_path).expect("train file parses");
    let test = load_semeval(&test_path).expect("test file parses");

    let cfg = TrainConfig {
        cleaning: true,
        per_target: true,
        seed: 7,
        ..TrainConfig::default()
    };
    let outcome = train_all(&train, &cfg).expect("full training succeeds");
    let prep = cfg.preprocessor();

    let mut gold = Vec::new();
    let mut pred = Vec::new();
    let mut targets = Vec::new();
    for ex in &test {
        gold.push(ex.stance);
        pred.push(outcome.model.predict(ex, &prep).expect("prediction succeeds"));
        targets.push(ex.target.clone());
    }
    let rep = report(&gold, &pred, &targets).unwrap();
    let elapsed = start.elapsed();

    println!("{}", rep.render_table(true));
    let band_ok = rep.macro_f_fa >= 0.55 && rep.accuracy3 >= 0.50;
    println!(
        "ACCEPTANCE 9 (integration band, informational): {} — macro-F {:.4} (>= 0.55), \
         accuracy {:.4} (>= 0.50); reference ceiling 0.6884 / 0.6024; took {:.1?}",
        if band_ok { "BAND PASS" } else { "BAND FAIL" },
        rep.macro_f_fa,
        rep.accuracy3,
        elapsed
    );
    assert!(
        elapsed.as_secs_f64() < 1800.0,
        "integration run took {elapsed:?}, budget 30 min"
    );
}

#[test]
fn acceptance_10_checkpoint_roundtrip() {
    // train a small per-target model on synthetic data
    let mut examples = Vec::new();
    for (t_idx, target) in ["Topic One", "Topic Two"].iter().enumerate() {
        for i in 0..3 {
            examples.push(Example {
                id: format!("f{t_idx}{i}"),
                target: target.to_string(),
                tweet: format!("great support wonderful thing {i}"),
                stance: Stance::Favor,
            });
            examples.push(Example {
                id: format!("a{t_idx}{i}"),
                target: target.to_string(),
                tweet: format!("terrible oppose awful thing {i}"),
                stance: Stance::Against,
            });
            examples.push(Example {
                id: format!("n{t_idx}{i}"),
                target: target.to_string(),
                tweet: format!("schedule notes calendar thing {i}"),
                stance: Stance::None,
            });
        }
    }
    let cfg = TrainConfig {
        epochs: 4,
        embed_dim: 10,
        hidden: 5,
        per_target: true,
        ..TrainConfig::default()
    };
    let outcome = train_all(&examples, &cfg).expect("training succeeds");
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&outcome.model, dir.path()).expect("save succeeds");
    let loaded = checkpoint::load(dir.path()).expect("load succeeds");

    let (mem_map, load_map): (&BTreeMap<_, _>, &BTreeMap<_, _>) =
        match (&outcome.model, &loaded) {
            (TrainedModel::PerTarget(a), TrainedModel::PerTarget(b)) => (a, b),
            _ => panic!("checkpoint changed model mode"),
        };
    assert_eq!(mem_map.len(), load_map.len());

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let vocab_size = outcome.model.vocab().size();
    let mut checked = 0;
    'outer: loop {
        for (target, mem) in mem_map {
            let load = &load_map[target];
            let tweet: Vec<usize> = (0..rng.random_range(1..9))
                .map(|_| rng.random_range(0..vocab_size))
                .collect();
            let tgt: Vec<usize> = (0..rng.random_range(1..3))
                .map(|_| rng.random_range(0..vocab_size))
                .collect();

            let mut t1 = Tape::new();
            let mem1 = mem.phase1.forward(&mut t1, &tweet, &tgt).unwrap();
            let mut t2 = Tape::new();
            let load1 = load.phase1.forward(&mut t2, &tweet, &tgt).unwrap();
            assert_eq!(bits(&mem1.probs), bits(&load1.probs), "phase-1 probabilities differ");

            let mut t3 = Tape::new();
            let mem2 = mem.phase2.forward(&mut t3, &tweet, &tgt).unwrap();
            let mut t4 = Tape::new();
            let load2 = load.phase2.forward(&mut t4, &tweet, &tgt).unwrap();
            assert_eq!(bits(&mem2.probs), bits(&load2.probs), "phase-2 probabilities differ");

            assert_eq!(
                mem.predict_ids(&tweet, &tgt).unwrap(),
                load.predict_ids(&tweet, &tgt).unwrap()
            );
            checked += 1;
            if checked >= 100 {
                break 'outer;
            }
        }
    }
    println!("ACCEPTANCE 10 (checkpoint round-trip): PASS — {checked} examples bit-identical");
}
