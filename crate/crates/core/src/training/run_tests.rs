use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::data::{build_vocab, gen_synthetic, Batch, Dataset, Example, LabeledText, Split, SynthSpec};
use crate::model::{init_model, DomainPath, EncoderConfig, EncoderModel, Forward};
use crate::Error;

struct Fixture {
    model: EncoderModel,
    train: Dataset,
    val: Dataset,
    test: Dataset,
    aux: Dataset,
}

impl Fixture {
    fn splits(&self) -> MainSplits<'_> {
        MainSplits { train: &self.train, validation: &self.val, test: Some(&self.test) }
    }
}

fn labeled(v: &[LabeledText]) -> impl Iterator<Item = (&str, usize)> {
    v.iter().map(|t| (t.text.as_str(), t.label))
}

fn fixture() -> Fixture {
    let spec = SynthSpec {
        sentence_len: 10,
        main_train: 60,
        main_val: 20,
        main_test: 20,
        aux: 80,
        pretrain: 20,
        ..SynthSpec::default()
    };
    let c = gen_synthetic(&spec).unwrap();
    let all: Vec<&str> = c.pretrain.iter().map(|s| s.as_str()).collect();
    let vocab = build_vocab(&all, 400).unwrap();
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        max_len: 16,
        dropout_p: 0.1,
        n_task_classes: 2,
        seed: 1,
    };
    Fixture {
        model: init_model(&cfg).unwrap(),
        train: vocab.main_dataset("main", Split::Train, labeled(&c.main_train), 16).unwrap(),
        val: vocab.main_dataset("main", Split::Validation, labeled(&c.main_val), 16).unwrap(),
        test: vocab.main_dataset("main", Split::Test, labeled(&c.main_test), 16).unwrap(),
        aux: vocab.aux_dataset("aux", c.aux.iter().map(|s| s.as_str()), 16).unwrap(),
    }
}

fn quick(mode: Mode) -> TrainConfig {
    TrainConfig { mode, batch_size: 8, lr_peak: 1e-2, ..TrainConfig::default() }
}

#[test]
fn four_epochs_five_evals_give_twenty_records() {
    let f = fixture();
    let out = finetune(&f.model, f.splits(), None, &quick(Mode::Sft), 1).unwrap();
    let r = &out.result;
    assert_eq!(r.evals.len(), 20);
    // 60 Main rows in batches of 8: 8 steps per epoch, evals at ⌈8k/5⌉.
    assert_eq!(r.steps_per_epoch, 8);
    let steps: Vec<usize> = r.evals.iter().take(5).map(|e| e.step).collect();
    assert_eq!(steps, vec![2, 4, 5, 7, 8]);
    assert_eq!(r.evals.last().unwrap().step, r.total_steps);
    assert!(r.evals.iter().all(|e| e.train_domain_loss.is_none()));
    assert_eq!(r.lambda, None);
}

#[test]
fn selection_takes_lowest_validation_loss() {
    let f = fixture();
    let out = finetune(&f.model, f.splits(), Some(&f.aux), &quick(Mode::After), 2).unwrap();
    let r = &out.result;
    assert!(r.evals.iter().all(|e| r.selected_val_loss <= e.val_loss));
    let first_min = r.evals.iter().find(|e| e.val_loss == r.selected_val_loss).unwrap();
    assert_eq!(first_min.step, r.selected_step);
    // The returned snapshot reproduces the recorded validation loss.
    let again = evaluate(&out.best, &f.val).unwrap();
    assert_eq!(again.loss, r.selected_val_loss);
    assert_eq!(r.test, Some(evaluate(&out.best, &f.test).unwrap().scores));
    assert!(r.evals.iter().all(|e| e.train_domain_loss.is_some()));
}

#[test]
fn finetune_is_reproducible() {
    let f = fixture();
    let a = finetune(&f.model, f.splits(), Some(&f.aux), &quick(Mode::Multitask), 3).unwrap();
    let b = finetune(&f.model, f.splits(), Some(&f.aux), &quick(Mode::Multitask), 3).unwrap();
    assert_eq!(a.result, b.result);
    assert_eq!(a.best, b.best);
    let c = finetune(&f.model, f.splits(), Some(&f.aux), &quick(Mode::Multitask), 4).unwrap();
    assert_ne!(a.result, c.result);
}

#[test]
fn finetune_preconditions() {
    let f = fixture();
    let err = |mode, aux| finetune(&f.model, f.splits(), aux, &quick(mode), 1).err().unwrap();
    assert!(matches!(err(Mode::Sft, Some(&f.aux)), Error::Config(_)));
    assert!(matches!(err(Mode::After, None), Error::Config(_)));
    assert!(matches!(err(Mode::Multitask, None), Error::Config(_)));
    let bad = TrainConfig { lambda: 0.0, ..quick(Mode::After) };
    assert!(matches!(finetune(&f.model, f.splits(), Some(&f.aux), &bad, 1), Err(Error::Config(_))));
    let odd = TrainConfig { batch_size: 7, ..quick(Mode::Sft) };
    assert!(matches!(finetune(&f.model, f.splits(), None, &odd, 1), Err(Error::Config(_))));
    let swapped = MainSplits { train: &f.aux, validation: &f.val, test: None };
    assert!(finetune(&f.model, swapped, None, &quick(Mode::Sft), 1).is_err());
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let f = fixture();
    let mut broken = f.model.clone();
    broken.ln1_gamma.data_mut()[0] = f64::NAN;
    match finetune(&broken, f.splits(), Some(&f.aux), &quick(Mode::After), 1) {
        Err(Error::NonFiniteLoss { step, main, domain }) => {
            assert_eq!(step, 0);
            assert!(main.is_nan());
            assert!(domain.is_some());
        }
        other => panic!("expected a non-finite loss error, got {:?}", other.map(|o| o.result)),
    }
}

/// The same Main rows trained with SFT on main-only batches and with the
/// zero-weight regularized objective on batches padded out with Auxiliary rows.
#[test]
fn zero_lambda_reproduces_sft_bit_for_bit() {
    let f = fixture();
    let mut sft = f.model.clone();
    sft.config.dropout_p = 0.0;
    sft.reinit_heads(2, 9).unwrap();
    let mut reg = sft.clone();
    let adam = AdamConfig::default();
    let mut s_state = AdamState::for_model(&sft);
    let mut r_state = AdamState::for_model(&reg);
    for step in 0..6 {
        let main: Vec<&Example> = f.train.examples[step * 4..step * 4 + 4].iter().collect();
        let mixed: Vec<&Example> = main.iter().copied().chain(&f.aux.examples[step * 4..step * 4 + 4]).collect();
        let lr = lr_at(step + 1, 6, 0.1, 1e-2).unwrap();
        let a = train_step(&mut sft, &mut s_state, &adam, &Batch::from_examples(&main), Objective::Sft, lr, None)
            .unwrap();
        let obj = Objective::Regularized { weight: 0.0, path: DomainPath::Adversarial };
        let b = train_step(&mut reg, &mut r_state, &adam, &Batch::from_examples(&mixed), obj, lr, None).unwrap();
        assert_eq!(a.main, b.main);
    }
    for ((name, _, a), (_, _, b)) in sft.params().iter().zip(reg.params()) {
        if name.starts_with("domain_head") {
            continue;
        }
        assert_eq!(**a, *b, "{name}");
    }
}

#[test]
fn after_step_moves_domain_head_down_its_loss() {
    let f = fixture();
    let mut model = f.model.clone();
    model.reinit_heads(2, 5).unwrap();
    let mixed: Vec<&Example> = f.train.examples[..4].iter().chain(&f.aux.examples[..4]).collect();
    let batch = Batch::from_examples(&mixed);
    let g_dom = {
        let mut fw = Forward::new(&model);
        let l = fw.regularized_losses(&batch, 1.0, DomainPath::Plain, None).unwrap();
        fw.backward(l.domain).unwrap();
        fw.graph.grad(fw.vars.domain_w).unwrap().clone()
    };
    let before = model.domain_w.clone();
    let mut state = AdamState::for_model(&model);
    let obj = Objective::Regularized { weight: 0.1, path: DomainPath::Adversarial };
    train_step(&mut model, &mut state, &AdamConfig::default(), &batch, obj, 1e-4, None).unwrap();
    let dot: f64 = model
        .domain_w
        .data()
        .iter()
        .zip(before.data())
        .zip(g_dom.data())
        .map(|((a, b), g)| (a - b) * g)
        .sum();
    assert!(dot < 0.0, "{dot}");
}

#[test]
fn aggregate_examples() {
    assert_eq!(aggregate(&[1.0; 5]).unwrap(), MeanStd { mean: 1.0, std: 0.0 });
    assert_eq!(aggregate(&[55.5]).unwrap(), MeanStd { mean: 55.5, std: 0.0 });
    let a = aggregate(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
    assert_eq!(a.mean, 5.0);
    // Sum of squared deviations is 32, so std = sqrt(32 / 7).
    assert!((a.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    assert!((a.std - 2.138).abs() < 1e-3);
    assert!(matches!(aggregate(&[]), Err(Error::Empty(_))));
}

#[test]
fn sweep_runs_every_cell_and_is_deterministic() {
    let f = fixture();
    let cfg = TrainConfig {
        epochs: 1,
        evals_per_epoch: 2,
        seeds: vec![1, 2],
        lambda_grid: vec![0.1, 0.01],
        ..quick(Mode::After)
    };
    let a = lambda_sweep(&f.model, f.splits(), &f.aux, &cfg).unwrap();
    assert_eq!(a.cells.len(), 4);
    assert!(a.cells.iter().all(|c| c.result.is_some()));
    assert_eq!(a.per_lambda.len(), 2);
    let best = a.best_lambda.unwrap();
    let score = |l: f64| {
        a.per_lambda.iter().find(|s| s.lambda == l).unwrap().aggregate.as_ref().unwrap().val.accuracy.mean
    };
    assert!(score(best) >= score(0.1) && score(best) >= score(0.01));
    assert_eq!(a, lambda_sweep(&f.model, f.splits(), &f.aux, &cfg).unwrap());

    // Assembly does not depend on completion order.
    let mut shuffled = a.cells.clone();
    shuffled.reverse();
    assert_eq!(assemble_sweep(&cfg, shuffled).unwrap(), a);

    // Aggregates are plain mean/std of the per-cell numbers.
    let accs: Vec<f64> = a.cells[..2].iter().map(|c| c.result.as_ref().unwrap().selected_val.accuracy).collect();
    assert_eq!(a.per_lambda[0].aggregate.as_ref().unwrap().val.accuracy, aggregate(&accs).unwrap());
}

#[test]
fn single_lambda_sweep_is_multi_seed_finetune() {
    let f = fixture();
    let cfg = TrainConfig { epochs: 1, seeds: vec![3, 4], lambda_grid: vec![0.05], ..quick(Mode::After) };
    let s = lambda_sweep(&f.model, f.splits(), &f.aux, &cfg).unwrap();
    assert_eq!(s.best_lambda, Some(0.05));
    for (cell, seed) in s.cells.iter().zip([3, 4]) {
        let direct = finetune(&f.model, f.splits(), Some(&f.aux), &TrainConfig { lambda: 0.05, ..cfg.clone() }, seed)
            .unwrap();
        assert_eq!(cell.result.as_ref(), Some(&direct.result));
    }
}

fn fake_run(lambda: f64, seed: u64, acc: f64) -> CellOutcome {
    let scores = crate::metrics::Scores { accuracy: acc, f1: acc, mcc: 0.0 };
    CellOutcome {
        lambda,
        seed,
        result: Some(RunResult {
            seed,
            mode: Mode::After,
            lambda: Some(lambda),
            steps_per_epoch: 1,
            total_steps: 1,
            evals: Vec::new(),
            selected_step: 1,
            selected_val_loss: 0.5,
            selected_val: scores,
            test_loss: None,
            test: None,
        }),
        error: None,
    }
}

#[test]
fn best_lambda_ties_and_failures() {
    let cfg = TrainConfig { mode: Mode::After, seeds: vec![1, 2], lambda_grid: vec![0.1, 0.01, 0.001], ..TrainConfig::default() };
    let mut cells = vec![
        fake_run(0.1, 1, 0.7),
        fake_run(0.1, 2, 0.9),
        fake_run(0.01, 1, 0.8),
        fake_run(0.01, 2, 0.8),
        fake_run(0.001, 1, 0.99),
    ];
    cells.push(CellOutcome { lambda: 0.001, seed: 2, result: None, error: Some("boom".into()) });
    let s = assemble_sweep(&cfg, cells.clone()).unwrap();
    assert_eq!(s.best_lambda, Some(0.001));
    assert_eq!(s.per_lambda[2].failed, 1);
    assert_eq!(s.per_lambda[2].aggregate.as_ref().unwrap().runs, 1);

    // 0.1 and 0.01 tie at 0.8; the first grid value wins.
    cells[4].result = None;
    let s = assemble_sweep(&cfg, cells.clone()).unwrap();
    assert_eq!(s.best_lambda, Some(0.1));
    assert!(s.per_lambda[2].aggregate.is_none());

    cells.pop();
    assert!(matches!(assemble_sweep(&cfg, cells), Err(Error::Config(_))));
}

#[test]
fn sweep_rejects_sft_mode() {
    let f = fixture();
    assert!(matches!(lambda_sweep(&f.model, f.splits(), &f.aux, &quick(Mode::Sft)), Err(Error::Config(_))));
}
