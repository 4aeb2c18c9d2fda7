//! Acceptance suite: `cargo test -p after --test acceptance`.
//!
//! Runs without the libtest harness so the criteria execute one after another
//! (wall-clock budgets assume a single core) and every `[PASS]`/`[FAIL]` line
//! is printed. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use after::cli::run_args;
use after_core::analysis::js_divergence_probs;
use after_core::autodiff::{grad_check, AttentionLayout, Graph, GradCheckReport, Var};
use after_core::data::{special, BalancedBatcher, Batch, Dataset, Domain, Example, Row, Split};
use after_core::metrics::matthews_corr;
use after_core::model::{init_model, DomainPath, EncoderConfig, EncoderModel, Forward, ParamKind};
use after_core::rng::{standard_normal, sub_rng, RunRng};
use after_core::training::{EvalRecord, RunResult};
use after_core::{Result as CoreResult, Tensor};
use rand::Rng;
use serde_json::Value;

const H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Verdict lines printed so far.
static LINES: AtomicUsize = AtomicUsize::new(0);

fn verdict(n: u32, ok: bool, detail: &str) {
    LINES.fetch_add(1, Ordering::SeqCst);
    println!("[{}] criterion {n}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn main() -> ExitCode {
    let criteria: [(u32, fn()); 9] = [
        (1, criterion_1_gradients_match_finite_differences),
        (2, criterion_2_gradient_reversal_algebra),
        (3, criterion_3_batcher_contract),
        (4, criterion_4_jensen_shannon_oracle),
        (5, criterion_5_mcc_matches_pearson),
        (6, criterion_6_synthetic_end_to_end),
        (7, criterion_7_multitask_contrast),
        (8, criterion_8_reporting_fidelity),
        (9, criterion_9_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (n, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == &n.to_string()) {
            continue;
        }
        ran += 1;
        let before = LINES.load(Ordering::SeqCst);
        if catch_unwind(AssertUnwindSafe(f)).is_err() {
            if LINES.load(Ordering::SeqCst) == before {
                verdict(n, false, "panicked before reaching a verdict");
            }
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: {ran} criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of {ran} criteria failed: {failed:?}", failed.len());
        ExitCode::FAILURE
    }
}

fn work_dir(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn cli(args: &[&str]) {
    let mut full = vec!["after".to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    let code = run_args(&full);
    assert_eq!(code, 0, "command failed: {}", full.join(" "));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn randn(rng: &mut RunRng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| standard_normal(rng)).collect()).unwrap()
}

// ---------------------------------------------------------------- criterion 1

/// `sum(out ⊙ w)` for a fixed random weight, so every output coordinate
/// contributes a distinct amount to the scalar.
fn weighted_sum(g: &mut Graph, out: Var, w: &Tensor) -> CoreResult<Var> {
    let wv = g.constant(w.clone());
    let prod = g.mul(out, wv)?;
    Ok(g.sum(prod))
}

struct OpChecks {
    checks: usize,
    worst: f64,
    failures: Vec<String>,
}

impl OpChecks {
    fn record(&mut self, name: &str, report: GradCheckReport) {
        self.checks += 1;
        self.worst = self.worst.max(report.max_rel_error);
        if !report.passed {
            self.failures.push(format!("{name}: rel {:.3e}", report.max_rel_error));
        }
    }
}

fn check_ops(inst: u64, out: &mut OpChecks) {
    let mut rng = sub_rng(1000 + inst, 0);
    let m = rng.gen_range(1..=4);
    let k = rng.gen_range(2..=5);
    let n = rng.gen_range(1..=4);
    let a = randn(&mut rng, m, k);
    let b = randn(&mut rng, k, n);
    let wmn = randn(&mut rng, m, n);
    let wmk = randn(&mut rng, m, k);
    let bias = randn(&mut rng, 1, k);
    let other = randn(&mut rng, m, k);
    let run = |f: &dyn Fn(&mut Graph, Var) -> CoreResult<Var>, x: &Tensor| grad_check(f, x, H, FD_TOL).unwrap();

    out.record("matmul/a", run(&|g, x| { let bv = g.constant(b.clone()); let y = g.matmul(x, bv)?; weighted_sum(g, y, &wmn) }, &a));
    out.record("matmul/b", run(&|g, x| { let av = g.constant(a.clone()); let y = g.matmul(av, x)?; weighted_sum(g, y, &wmn) }, &b));
    out.record("add_bias/x", run(&|g, x| { let bv = g.constant(bias.clone()); let y = g.add_bias(x, bv)?; weighted_sum(g, y, &wmk) }, &a));
    out.record("add_bias/b", run(&|g, x| { let av = g.constant(a.clone()); let y = g.add_bias(av, x)?; weighted_sum(g, y, &wmk) }, &bias));
    out.record("add", run(&|g, x| { let o = g.constant(other.clone()); let y = g.add(x, o)?; let y = g.add(y, x)?; weighted_sum(g, y, &wmk) }, &a));
    out.record("mul", run(&|g, x| { let o = g.constant(other.clone()); let y = g.mul(x, o)?; let y = g.mul(y, x)?; weighted_sum(g, y, &wmk) }, &a));
    out.record("scale", run(&|g, x| { let y = g.scale(x, -1.7); weighted_sum(g, y, &wmk) }, &a));
    out.record("sum", run(&|g, x| { let y = g.mul(x, x)?; Ok(g.sum(y)) }, &a));
    out.record("gelu", run(&|g, x| { let y = g.gelu(x); weighted_sum(g, y, &wmk) }, &a));

    let gamma = randn(&mut rng, 1, k);
    let beta = randn(&mut rng, 1, k);
    out.record("layer_norm/x", run(&|g, x| {
        let (gv, bv) = (g.constant(gamma.clone()), g.constant(beta.clone()));
        let y = g.layer_norm(x, gv, bv, 1e-5)?;
        weighted_sum(g, y, &wmk)
    }, &a));
    out.record("layer_norm/gamma", run(&|g, x| {
        let (av, bv) = (g.constant(a.clone()), g.constant(beta.clone()));
        let y = g.layer_norm(av, x, bv, 1e-5)?;
        weighted_sum(g, y, &wmk)
    }, &gamma));
    out.record("layer_norm/beta", run(&|g, x| {
        let (av, gv) = (g.constant(a.clone()), g.constant(gamma.clone()));
        let y = g.layer_norm(av, gv, x, 1e-5)?;
        weighted_sum(g, y, &wmk)
    }, &beta));
    out.record("softmax_rows", run(&|g, x| { let y = g.softmax_rows(x); weighted_sum(g, y, &wmk) }, &a));

    let targets: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();
    let mut mask: Vec<bool> = (0..m).map(|_| rng.gen_bool(0.7)).collect();
    mask[0] = true;
    out.record("cross_entropy_logits", run(&|g, x| g.cross_entropy_logits(x, &targets, &mask), &a));

    let vocab = rng.gen_range(2..=6);
    let table = randn(&mut rng, vocab, k);
    let ids: Vec<usize> = (0..m + 1).map(|_| rng.gen_range(0..vocab)).collect();
    let wids = randn(&mut rng, ids.len(), k);
    out.record("embedding_gather", run(&|g, x| { let y = g.embedding_gather(x, &ids)?; weighted_sum(g, y, &wids) }, &table));
    let picks: Vec<usize> = (0..m + 1).map(|_| rng.gen_range(0..m)).collect();
    let wpicks = randn(&mut rng, picks.len(), k);
    out.record("select_rows", run(&|g, x| { let y = g.select_rows(x, &picks)?; weighted_sum(g, y, &wpicks) }, &a));

    // Identity forward, negated backward: the analytic gradient must equal
    // minus the finite difference.
    let grl = run(&|g, x| { let y = g.grad_reverse(x); weighted_sum(g, y, &wmk) }, &a);
    let flipped = grl.analytic.iter().zip(&grl.numeric).all(|(an, fd)| (an + fd).abs() <= FD_TOL * an.abs().max(fd.abs()).max(1e-3));
    out.checks += 1;
    if !flipped {
        out.failures.push("grad_reverse: gradient is not the negated finite difference".into());
    }

    let dseed = rng.gen::<u64>();
    out.record("dropout", run(&|g, x| {
        let mut r = sub_rng(dseed, 0);
        let y = g.dropout(x, 0.3, &mut r)?;
        weighted_sum(g, y, &wmk)
    }, &a));

    let batch = rng.gen_range(1..=2);
    let seq = rng.gen_range(1..=4);
    let heads = rng.gen_range(1..=2);
    let d = heads * rng.gen_range(1..=3);
    let key_mask: Vec<bool> = (0..batch * seq).map(|i| i % seq == 0 || rng.gen_bool(0.7)).collect();
    let layout = AttentionLayout { batch, seq, heads, key_mask };
    let qkv: Vec<Tensor> = (0..3).map(|_| randn(&mut rng, batch * seq, d)).collect();
    let watt = randn(&mut rng, batch * seq, d);
    for which in 0..3 {
        let f = |g: &mut Graph, x: Var| {
            let vars: Vec<Var> = (0..3).map(|i| if i == which { x } else { g.constant(qkv[i].clone()) }).collect();
            let y = g.masked_attention(vars[0], vars[1], vars[2], layout.clone())?;
            weighted_sum(g, y, &watt)
        };
        out.record(["attention/q", "attention/k", "attention/v"][which], grad_check(f, &qkv[which], H, FD_TOL).unwrap());
    }
}

/// A random small encoder with weights large enough for gradients to matter.
fn random_model(rng: &mut RunRng, seed: u64) -> EncoderModel {
    let heads = rng.gen_range(1..=2);
    let config = EncoderConfig {
        vocab_size: rng.gen_range(10..=16),
        d_model: heads * rng.gen_range(2..=3),
        n_heads: heads,
        d_ff: rng.gen_range(4..=8),
        max_len: 6,
        dropout_p: 0.1,
        n_task_classes: 2,
        seed,
    };
    let mut m = init_model(&config).unwrap();
    scale_weights(&mut m, rng);
    m
}

fn scale_weights(m: &mut EncoderModel, rng: &mut RunRng) {
    for (name, kind, t) in m.params_mut() {
        if kind != ParamKind::Bias {
            for x in t.data_mut() {
                *x = if kind == ParamKind::Norm { 1.0 + 0.3 * standard_normal(rng) } else { 0.5 * standard_normal(rng) };
            }
        }
        if name == "token_embedding" {
            t.row_mut(special::PAD).fill(0.0);
        }
    }
}

fn random_batch(rng: &mut RunRng, vocab: usize, max_len: usize) -> Batch {
    let rows = rng.gen_range(2..=4);
    let examples: Vec<Example> = (0..rows)
        .map(|i| {
            let len = rng.gen_range(1..=max_len);
            let mut ids = vec![special::CLS];
            ids.extend((1..len).map(|_| rng.gen_range(special::COUNT..vocab)));
            if i == 0 || rng.gen_bool(0.5) {
                Example::main(ids, rng.gen_range(0..2))
            } else {
                Example::auxiliary(ids)
            }
        })
        .collect();
    let refs: Vec<&Example> = examples.iter().collect();
    Batch::from_examples(&refs)
}

fn check_encoder(inst: u64, out: &mut OpChecks) {
    let mut rng = sub_rng(5000 + inst, 0);
    let m = random_model(&mut rng, inst);
    let batch = random_batch(&mut rng, m.config.vocab_size, m.config.max_len);
    let n_tokens = batch.token_ids.len();
    let selected: Vec<bool> = (0..n_tokens).map(|i| batch.pad_mask[i] && (i % batch.seq_len == 1 || rng.gen_bool(0.3))).collect();
    let selected = if selected.iter().any(|&s| s) { selected } else { batch.pad_mask.clone() };
    let targets: Vec<usize> = (0..n_tokens).map(|_| rng.gen_range(0..m.config.vocab_size)).collect();
    let dropout_seed = rng.gen::<u64>();
    let mlm = inst % 2 == 1;
    let n_params = m.params().len();
    for slot in 0..n_params {
        let x = m.params()[slot].2.clone();
        let f = |g: &mut Graph, x: Var| -> CoreResult<Var> {
            let mut fw = Forward::on_graph(std::mem::take(g), &m, false);
            *fw.vars.slot_mut(slot).unwrap() = x;
            let mut r = sub_rng(dropout_seed, 0);
            let loss = if mlm {
                fw.mlm_loss(&batch, &targets, &selected, Some(&mut r))?
            } else {
                fw.multitask_losses(&batch, 0.7, Some(&mut r))?.total
            };
            *g = fw.into_graph();
            Ok(loss)
        };
        let name = m.params()[slot].0;
        out.record(&format!("encoder/{name}"), grad_check(f, &x, H, FD_TOL).unwrap());
    }
}

fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut ops = OpChecks { checks: 0, worst: 0.0, failures: Vec::new() };
    const INSTANCES: u64 = 100;
    for inst in 0..INSTANCES {
        check_ops(inst, &mut ops);
        check_encoder(inst, &mut ops);
    }
    let elapsed = start.elapsed();
    let ok = ops.failures.is_empty() && elapsed < Duration::from_secs(60);
    verdict(
        1,
        ok,
        &format!(
            "{INSTANCES} instances, {} gradient checks, worst rel error {:.2e}, {} failures, {:.1}s",
            ops.checks,
            ops.worst,
            ops.failures.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(ops.failures.is_empty(), "{:?}", &ops.failures[..ops.failures.len().min(10)]);
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
}

// ---------------------------------------------------------------- criterion 2

fn fixed_tiny_model() -> EncoderModel {
    let config = EncoderConfig {
        vocab_size: 16,
        d_model: 4,
        n_heads: 2,
        d_ff: 8,
        max_len: 8,
        dropout_p: 0.0,
        n_task_classes: 2,
        seed: 11,
    };
    let mut m = init_model(&config).unwrap();
    scale_weights(&mut m, &mut sub_rng(99, 0));
    m
}

fn fixed_mixed_batch() -> Batch {
    let ex = [
        Example::main(vec![2, 5, 6, 7], 1),
        Example::main(vec![2, 9, 10], 0),
        Example::auxiliary(vec![2, 11, 12, 13, 14]),
        Example::auxiliary(vec![2, 15]),
    ];
    let refs: Vec<&Example> = ex.iter().collect();
    Batch::from_examples(&refs)
}

fn dense(grads: Vec<Option<Tensor>>, m: &EncoderModel) -> Vec<Tensor> {
    grads
        .into_iter()
        .zip(m.params())
        .map(|(g, (_, _, t))| g.unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect()
}

fn criterion_2_gradient_reversal_algebra() {
    let m = fixed_tiny_model();
    let batch = fixed_mixed_batch();
    let single = |pick_domain: bool| {
        let mut fw = Forward::new(&m);
        let l = fw.regularized_losses(&batch, 1.0, DomainPath::Plain, None).unwrap();
        fw.backward(if pick_domain { l.domain } else { l.main }).unwrap();
        dense(fw.param_grads(), &m)
    };
    let g_main = single(false);
    let g_dom = single(true);
    let names: Vec<&str> = m.params().iter().map(|p| p.0).collect();
    let encoder_dom_norm: f64 = names
        .iter()
        .zip(&g_dom)
        .filter(|(n, _)| !n.starts_with("domain_head"))
        .map(|(_, t)| t.data().iter().map(|x| x * x).sum::<f64>())
        .sum();
    assert!(encoder_dom_norm > 1e-12, "domain loss does not reach the encoder");

    let mut worst = 0.0f64;
    let mut forward_identical = true;
    for lambda in [0.1, 0.01, 0.001, 0.0001] {
        let mut fw = Forward::new(&m);
        let l = fw.after_losses(&batch, lambda, None).unwrap();
        fw.backward(l.total).unwrap();
        let g_after = dense(fw.param_grads(), &m);

        let mut plain = Forward::new(&m);
        let p = plain.multitask_losses(&batch, lambda, None).unwrap();
        forward_identical &= l.main_value.to_bits() == p.main_value.to_bits()
            && l.domain_value.to_bits() == p.domain_value.to_bits()
            && l.total_value.to_bits() == p.total_value.to_bits();

        for (i, name) in names.iter().enumerate() {
            let expected: Vec<f64> = if name.starts_with("domain_head") {
                g_dom[i].data().iter().map(|d| lambda * d).collect()
            } else {
                g_main[i].data().iter().zip(g_dom[i].data()).map(|(a, d)| a - lambda * d).collect()
            };
            for (x, e) in g_after[i].data().iter().zip(&expected) {
                worst = worst.max((x - e).abs());
            }
        }
    }
    let ok = worst <= 1e-10 && forward_identical;
    verdict(
        2,
        ok,
        &format!("max |grad - oracle| = {worst:.2e} over 4 lambdas, forward values identical: {forward_identical}"),
    );
    assert!(worst <= 1e-10);
    assert!(forward_identical);
}

// ---------------------------------------------------------------- criterion 3

fn toy_dataset(domain: Domain, n: usize) -> Dataset {
    let examples = (0..n)
        .map(|i| {
            let ids = vec![special::CLS, special::COUNT + i % 7];
            match domain {
                Domain::Main => Example::main(ids, i % 2),
                Domain::Auxiliary => Example::auxiliary(ids),
            }
        })
        .collect();
    Dataset::new("toy", domain, Split::Train, examples).unwrap()
}

fn criterion_3_batcher_contract() {
    let main = toy_dataset(Domain::Main, 1400);
    let aux = toy_dataset(Domain::Auxiliary, 5000);
    let mut batcher = BalancedBatcher::new(&main, Some(&aux), 28, 17).unwrap();
    let mut batches = 0;
    let mut bad_batches = 0;
    let mut bad_epochs = 0;
    let mut epochs = 0;
    while batches < 1000 {
        let plans = batcher.next_epoch();
        epochs += 1;
        let mut seen_main = Vec::new();
        let mut seen_aux = Vec::new();
        for plan in &plans {
            batches += 1;
            if plan.rows.len() != 28 || plan.main_count() != 14 || plan.aux_count() != 14 {
                bad_batches += 1;
            }
            for r in &plan.rows {
                match *r {
                    Row::Main(i) => seen_main.push(i),
                    Row::Aux(i) => seen_aux.push(i),
                }
            }
        }
        seen_main.sort_unstable();
        let covered = seen_main == (0..main.len()).collect::<Vec<_>>();
        seen_aux.sort_unstable();
        seen_aux.dedup();
        if !covered || seen_aux.len() != main.len() {
            bad_epochs += 1;
        }
    }
    let ok = bad_batches == 0 && bad_epochs == 0;
    verdict(
        3,
        ok,
        &format!("{batches} batches over {epochs} epochs of 1400 Main rows: {bad_batches} unbalanced batches, {bad_epochs} epochs not covering Main once"),
    );
    assert_eq!(bad_batches, 0);
    assert_eq!(bad_epochs, 0);
}

// ---------------------------------------------------------------- criterion 4

/// `H(M) − (H(P) + H(Q)) / 2` in bits, an independent route to the same value.
fn jsd_via_entropies(p: &[f64], q: &[f64]) -> f64 {
    let h = |v: &mut dyn Iterator<Item = f64>| -> f64 { v.filter(|&x| x > 0.0).map(|x| -x * x.log2()).sum() };
    let hm = h(&mut p.iter().zip(q).map(|(a, b)| (a + b) / 2.0));
    hm - (h(&mut p.iter().copied()) + h(&mut q.iter().copied())) / 2.0
}

fn random_distribution(rng: &mut RunRng, n: usize, zero_prob: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| if rng.gen_bool(zero_prob) { 0.0 } else { rng.gen::<f64>().powi(3) }).collect();
    if v.iter().all(|&x| x == 0.0) {
        v[rng.gen_range(0..n)] = 1.0;
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

fn criterion_4_jensen_shannon_oracle() {
    let mut rng = sub_rng(4, 0);
    let mut worst = 0.0f64;
    let mut asym = 0.0f64;
    let mut out_of_bounds = 0;
    const PAIRS: usize = 2000;
    for _ in 0..PAIRS {
        let n = rng.gen_range(1..=50);
        let zp = rng.gen_range(0.0..0.5);
        let p = random_distribution(&mut rng, n, zp);
        let q = random_distribution(&mut rng, n, zp);
        let d = js_divergence_probs(&p, &q).unwrap();
        worst = worst.max((d - jsd_via_entropies(&p, &q)).abs());
        asym = asym.max((d - js_divergence_probs(&q, &p).unwrap()).abs());
        if !(0.0..=1.0).contains(&d) {
            out_of_bounds += 1;
        }
    }
    let mut disjoint_ok = true;
    for _ in 0..200 {
        let n = rng.gen_range(2..=50);
        let cut = rng.gen_range(1..n);
        let mut p = random_distribution(&mut rng, n, 0.2);
        let mut q = random_distribution(&mut rng, n, 0.2);
        p[cut..].fill(0.0);
        q[..cut].fill(0.0);
        if p.iter().all(|&x| x == 0.0) {
            p[0] = 1.0;
        }
        if q.iter().all(|&x| x == 0.0) {
            q[n - 1] = 1.0;
        }
        disjoint_ok &= js_divergence_probs(&p, &q).unwrap() == 1.0;
    }
    let ok = worst <= 1e-10 && asym <= 1e-12 && out_of_bounds == 0 && disjoint_ok;
    verdict(
        4,
        ok,
        &format!("{PAIRS} pairs: max |jsd - oracle| = {worst:.2e}, max asymmetry {asym:.2e}, {out_of_bounds} out of [0,1], disjoint support exactly 1: {disjoint_ok}"),
    );
    assert!(worst <= 1e-10);
    assert!(asym <= 1e-12);
    assert_eq!(out_of_bounds, 0);
    assert!(disjoint_ok);
}

// ---------------------------------------------------------------- criterion 5

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn criterion_5_mcc_matches_pearson() {
    let gold = [0usize, 1, 1, 0, 1, 0, 0, 1];
    let gf: Vec<f64> = gold.iter().map(|&g| g as f64).collect();
    let mut worst = 0.0f64;
    let mut zero_cases = 0;
    let mut zero_ok = true;
    for bits in 0u32..256 {
        let preds: Vec<usize> = (0..8).map(|i| ((bits >> i) & 1) as usize).collect();
        let pf: Vec<f64> = preds.iter().map(|&x| x as f64).collect();
        let m = matthews_corr(&preds, &gold).unwrap();
        match pearson(&pf, &gf) {
            Some(r) => worst = worst.max((m - r).abs()),
            None => {
                zero_cases += 1;
                zero_ok &= m == 0.0;
            }
        }
    }
    let ok = worst <= 1e-10 && zero_ok;
    verdict(5, ok, &format!("256 vectors: max |mcc - pearson| = {worst:.2e}, {zero_cases} zero-variance cases all 0: {zero_ok}"));
    assert!(worst <= 1e-10);
    assert!(zero_ok);
}

// ------------------------------------------------------------ criteria 6 and 7

struct Pipeline {
    root: PathBuf,
    ckpt: PathBuf,
    data: PathBuf,
    /// Time spent on data generation, vocabulary and pretraining.
    setup: Duration,
}

static PIPELINE: OnceLock<Pipeline> = OnceLock::new();

fn pipeline() -> &'static Pipeline {
    PIPELINE.get_or_init(|| {
        let start = Instant::now();
        let root = work_dir("synthetic");
        let data = root.join("data");
        let vocab = root.join("vocab.txt");
        let ckpt = root.join("pretrained.ckpt");
        cli(&["gen-synth", "--out", p(&data), "--seed", "7"]);
        cli(&["build-vocab", "--corpus", p(&data.join("pretrain.txt")), "--out", p(&vocab)]);
        cli(&["pretrain", "--corpus", p(&data.join("pretrain.txt")), "--vocab", p(&vocab), "--out", p(&ckpt)]);
        Pipeline { root, ckpt, data, setup: start.elapsed() }
    })
}

fn finetune(pl: &Pipeline, mode: &str) -> PathBuf {
    let out = pl.root.join(mode);
    let _ = fs::remove_dir_all(&out);
    let mut args = vec![
        "finetune", "--ckpt", p(&pl.ckpt), "--main", p(&pl.data), "--mode", mode, "--seeds", "1,2,3,4,5", "--epochs", "2",
        "--jobs", "1", "--out", p(&out),
    ];
    let aux = pl.data.join("aux.jsonl");
    if mode != "sft" {
        args.extend(["--aux", p(&aux), "--lambda", "0.1"]);
    }
    if mode != "multitask" {
        args.push("--save-models");
    }
    cli(&args);
    out
}

fn runs(dir: &Path) -> Vec<RunResult> {
    SEEDS.iter().map(|s| read_json(&dir.join(format!("run_seed{s}.json")))).collect()
}

fn criterion_6_synthetic_end_to_end() {
    let pl = pipeline();
    let start = Instant::now();
    let sft_dir = finetune(pl, "sft");
    let after_dir = finetune(pl, "after");
    let mut probes: Vec<(f64, f64)> = Vec::new();
    for s in SEEDS {
        let out = pl.root.join("probe").join(format!("seed{s}"));
        let (a, b) = (sft_dir.join(format!("model_seed{s}.ckpt")), after_dir.join(format!("model_seed{s}.ckpt")));
        cli(&[
            "analyze", "probe", "--ckpt", p(&a), p(&b), "--main", p(&pl.data.join("main_test.jsonl")), "--aux",
            p(&pl.data.join("aux.jsonl")), "--seed", &s.to_string(), "--out", p(&out),
        ]);
        let rows: Vec<Value> = read_json(&out.join("probe.json"));
        probes.push((rows[0]["accuracy"].as_f64().unwrap(), rows[1]["accuracy"].as_f64().unwrap()));
    }
    let elapsed = pl.setup + start.elapsed();

    let sft = runs(&sft_dir);
    let after = runs(&after_dir);
    let mut votes = [0usize; 3];
    for i in 0..SEEDS.len() {
        let (s_acc, a_acc) = (sft[i].selected_val.accuracy, after[i].selected_val.accuracy);
        let (s_probe, a_probe) = probes[i];
        println!(
            "  seed {}: sft val acc {s_acc:.4}, after val acc {a_acc:.4}, probe sft {s_probe:.4}, probe after {a_probe:.4}",
            SEEDS[i]
        );
        votes[0] += usize::from(s_acc >= 0.90);
        votes[1] += usize::from(a_acc >= s_acc - 0.02);
        votes[2] += usize::from(a_probe <= s_probe - 0.15);
    }
    let majority = SEEDS.len() / 2 + 1;
    let parts = [
        ("(a) SFT val acc >= 0.90", votes[0] >= majority),
        ("(b) AFTER val acc >= SFT - 0.02", votes[1] >= majority),
        ("(c) AFTER probe <= SFT probe - 0.15", votes[2] >= majority),
    ];
    let in_time = elapsed < Duration::from_secs(300);
    for ((label, ok), v) in parts.iter().zip(votes) {
        verdict(6, *ok, &format!("{label}: {v}/5 seeds"));
    }
    verdict(6, in_time, &format!("runtime {:.1}s (budget 300s)", elapsed.as_secs_f64()));

    // Pipeline sanity checks behind the criterion: pretraining cut the MLM
    // loss and SFT representations remain domain-separable.
    let log: Vec<Value> = fs::read_to_string(pl.ckpt.with_file_name("pretrained.ckpt.log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let loss = |v: &Value| v["loss"].as_f64().unwrap();
    let tail = &log[log.len() - 100..];
    let ratio = tail.iter().map(loss).sum::<f64>() / tail.len() as f64 / loss(&log[0]);
    let sft_probe_ok = probes.iter().filter(|(s, _)| *s >= 0.85).count() >= majority;
    println!("  pretraining: {} steps, final/initial MLM loss {ratio:.3} (< 0.7); SFT probe >= 0.85 on a majority: {sft_probe_ok}", log.len());

    assert_eq!(log.len(), 2000);
    assert!(ratio < 0.7, "{ratio}");
    assert!(sft_probe_ok);
    let failed: Vec<&str> = parts.iter().filter(|(_, ok)| !ok).map(|(l, _)| *l).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
    assert!(in_time);
}

fn domain_losses(dir: &Path, seed: u64) -> Vec<EvalRecord> {
    fs::read_to_string(dir.join(format!("log_seed{seed}.jsonl")))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn criterion_7_multitask_contrast() {
    let pl = pipeline();
    let multi_dir = finetune(pl, "multitask");
    let after_dir = pl.root.join("after");
    if !after_dir.join("run_seed5.json").exists() {
        finetune(pl, "after");
    }
    let mut multi_ok = 0;
    let mut after_ok = 0;
    for s in SEEDS {
        let m = domain_losses(&multi_dir, s);
        let first_epoch_min = m.iter().filter(|e| e.epoch == 0).filter_map(|e| e.train_domain_loss).fold(f64::INFINITY, f64::min);
        let a = domain_losses(&after_dir, s);
        let after_min = a.iter().filter_map(|e| e.train_domain_loss).fold(f64::INFINITY, f64::min);
        println!("  seed {s}: multitask epoch-1 min L_domain {first_epoch_min:.4}, after min L_domain {after_min:.4}");
        multi_ok += usize::from(first_epoch_min < 0.1);
        after_ok += usize::from(after_min > 0.4 && a.iter().all(|e| e.train_domain_loss.is_some()));
    }
    verdict(7, multi_ok == 5, &format!("MULTITASK L_domain < 0.1 within epoch 1: {multi_ok}/5 seeds"));
    verdict(7, after_ok == 5, &format!("AFTER L_domain > 0.4 at every evaluation: {after_ok}/5 seeds"));
    assert_eq!(multi_ok, 5);
    assert_eq!(after_ok, 5);
}

// ------------------------------------------------------------ criteria 8 and 9

const SMALL_SYNTH: &str = r#"{"main_train": 120, "main_val": 60, "main_test": 60, "aux": 300, "pretrain": 400, "sentence_len": 10}"#;
const SMALL_MODEL: &str = r#"{"model": {"d_model": 8, "n_heads": 2, "d_ff": 16, "max_len": 16}, "pretrain": {"steps": 10, "batch_size": 8}}"#;

struct Small {
    root: PathBuf,
    data: PathBuf,
    vocab: PathBuf,
    ckpt: PathBuf,
}

fn small_setup(root: &Path) -> Small {
    fs::write(root.join("synth.json"), SMALL_SYNTH).unwrap();
    fs::write(root.join("model.json"), SMALL_MODEL).unwrap();
    let s = Small {
        root: root.to_path_buf(),
        data: root.join("data"),
        vocab: root.join("vocab.txt"),
        ckpt: root.join("pre.ckpt"),
    };
    cli(&["gen-synth", "--out", p(&s.data), "--config", p(&root.join("synth.json")), "--force"]);
    cli(&["build-vocab", "--corpus", p(&s.data.join("pretrain.txt")), "--size", "300", "--out", p(&s.vocab)]);
    cli(&[
        "pretrain", "--config", p(&root.join("model.json")), "--corpus", p(&s.data.join("pretrain.txt")), "--vocab",
        p(&s.vocab), "--out", p(&s.ckpt),
    ]);
    s
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn criterion_8_reporting_fidelity() {
    let root = work_dir("reporting");
    let s = small_setup(&root);
    let out = root.join("sweep");
    cli(&[
        "sweep", "--ckpt", p(&s.ckpt), "--main", p(&s.data), "--aux", p(&s.data.join("aux.jsonl")), "--epochs", "3",
        "--lr", "0.01", "--out", p(&out),
    ]);
    let run_files: Vec<PathBuf> = fs::read_dir(out.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    let count_ok = run_files.len() == 20;

    let report: Value = read_json(&out.join("sweep.json"));
    let grid = [0.1, 0.01, 0.001, 0.0001];
    let mut worst = 0.0f64;
    let mut best: Option<(f64, f64)> = None;
    for (i, &lambda) in grid.iter().enumerate() {
        let results: Vec<RunResult> = SEEDS
            .iter()
            .map(|seed| read_json(&out.join("runs").join(format!("lambda{lambda}_seed{seed}.json"))))
            .collect();
        let agg = &report["sweep"]["per_lambda"][i]["aggregate"];
        let fields: [(&str, Vec<f64>); 5] = [
            ("val_loss", results.iter().map(|r| r.selected_val_loss).collect()),
            ("val.accuracy", results.iter().map(|r| r.selected_val.accuracy).collect()),
            ("val.f1", results.iter().map(|r| r.selected_val.f1).collect()),
            ("val.mcc", results.iter().map(|r| r.selected_val.mcc).collect()),
            ("test.accuracy", results.iter().map(|r| r.test.unwrap().accuracy).collect()),
        ];
        for (path, values) in fields {
            let node = path.split('.').fold(agg, |v, k| &v[k]);
            let (mean, std) = mean_std(&values);
            worst = worst.max((node["mean"].as_f64().unwrap() - mean).abs());
            worst = worst.max((node["std"].as_f64().unwrap() - std).abs());
            if path == "val.accuracy" && best.is_none_or(|(_, b)| mean > b) {
                best = Some((lambda, mean));
            }
        }
    }
    let best_lambda = best.unwrap().0;
    let best_ok = report["sweep"]["best_lambda"].as_f64() == Some(best_lambda);
    // Guard against a degenerate sweep where every run scores the same.
    let spread = report["sweep"]["per_lambda"].as_array().unwrap().iter().any(|l| l["aggregate"]["val"]["accuracy"]["std"].as_f64().unwrap() > 0.0);

    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    let cells = |l: &str| l.trim_matches('|').split('|').map(|c| c.trim().to_string()).collect::<Vec<_>>();
    let header_at = lines.iter().position(|l| l.starts_with("| Auxiliary")).unwrap();
    let layout_ok = cells(lines[header_at]) == ["Auxiliary", "data"]
        && lines[header_at + 1].chars().all(|c| c == '|' || c == '-')
        && cells(lines[header_at + 2]) == ["aux", best_lambda.to_string().as_str()]
        && lines[header_at + 3].is_empty();

    let ok = count_ok && worst <= 1e-9 && best_ok && layout_ok && spread;
    verdict(
        8,
        ok,
        &format!(
            "{} run files, max aggregate error {worst:.2e}, best lambda {best_lambda} matches: {best_ok}, table layout ok: {layout_ok}",
            run_files.len()
        ),
    );
    assert!(count_ok);
    assert!(worst <= 1e-9);
    assert!(best_ok);
    assert!(layout_ok, "{table}");
    assert!(spread, "every run has the same validation accuracy");
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).unwrap();
                let bytes = if path.to_string_lossy().ends_with("manifest.json") { strip_timestamps(&bytes) } else { bytes };
                files.insert(path, bytes);
            }
        }
    }
    files
}

fn strip_timestamps(bytes: &[u8]) -> Vec<u8> {
    let mut v: Value = serde_json::from_slice(bytes).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("started_unix");
    obj.remove("finished_unix");
    serde_json::to_vec(&v).unwrap()
}

fn all_commands(root: &Path) {
    let s = small_setup(root);
    let aux = s.data.join("aux.jsonl");
    let train = s.data.join("main_train.jsonl");
    cli(&[
        "finetune", "--ckpt", p(&s.ckpt), "--main", p(&s.data), "--aux", p(&aux), "--mode", "after", "--seeds", "1,2",
        "--epochs", "1", "--lr", "0.01", "--save-models", "--out", p(&s.root.join("ft")),
    ]);
    cli(&[
        "sweep", "--ckpt", p(&s.ckpt), "--main", p(&s.data), "--aux", p(&aux), "--seeds", "1,2", "--grid", "0.1,0.01",
        "--epochs", "1", "--lr", "0.01", "--jobs", "2", "--out", p(&s.root.join("sw")),
    ]);
    cli(&["table", "--sweep", p(&s.root.join("sw")), "--out", p(&s.root.join("table.txt"))]);
    cli(&["analyze", "jsd", "--corpus", p(&train), p(&aux), "--out", p(&s.root.join("jsd"))]);
    cli(&["analyze", "overlap", "--rows", p(&train), p(&aux), "--out", p(&s.root.join("overlap"))]);
    cli(&["analyze", "mlm", "--ckpt", p(&s.ckpt), "--data", p(&train), p(&aux), "--out", p(&s.root.join("mlm"))]);
    cli(&[
        "analyze", "probe", "--ckpt", p(&s.root.join("ft/model_seed1.ckpt")), "--main", p(&train), "--aux", p(&aux),
        "--out", p(&s.root.join("probe")),
    ]);
}

fn criterion_9_determinism() {
    let root = work_dir("determinism");
    all_commands(&root);
    let first = snapshot(&root);
    all_commands(&root);
    let second = snapshot(&root);
    let differing: Vec<String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.strip_prefix(&root).unwrap().display().to_string())
        .collect();
    let ok = differing.is_empty();
    verdict(9, ok, &format!("{} output files compared across two runs of every command, {} differ", first.len(), differing.len()));
    assert!(ok, "{differing:?}");
}
