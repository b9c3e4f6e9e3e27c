//! Exit criteria. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `--nocapture` to see them.

mod common;

use std::time::{Duration, Instant};

use common::*;
use p3_core::aggregation::{classify, AggregationPolicy, CalibrationCache};
use p3_core::backend::{argmax, CountingBackend, LanguageModel, TabularLm};
use p3_core::baselines::{generate_classify, self_consistency, Decoding};
use p3_core::engine::{
    calibrate, exact_marginal, ntp_scores, p3_matrix, psp_scores, CalibrationVariant,
    CalibrationVector,
};
use p3_core::harness::{
    cross_prompt_std, evaluate, flops_estimate, parse_report, render_report, EvalOptions,
    FlopsParams, Method, ReportFormat,
};
use p3_core::types::{PromptTemplate, Sample, TokenId};
use rand::Rng;

const EQUIV_TOL: f64 = 1e-6;
const ORACLE_TOL: f64 = 1e-9;

fn report(id: &str, ok: bool, detail: String) {
    let mark = if ok { "PASS" } else { "FAIL" };
    println!("[{mark}] criterion {id}: {detail}");
    assert!(ok, "criterion {id} failed: {detail}");
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest |p3 row i - psp(x, i)| over 200 inputs and m in 0..=8.
fn single_pass_gap<B: LanguageModel>(backend: &B, seed: u64) -> f64 {
    let labels = toy_labels();
    let v = backend.vocab().size();
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let x = random_tokens(&mut r, v, 1, 40);
        let psp: Vec<Vec<f64>> = (0..=8)
            .map(|i| psp_scores(backend, &x, i, &labels).unwrap())
            .collect();
        for m in 0..=8 {
            let matrix = p3_matrix(backend, &x, m, &labels).unwrap();
            assert_eq!(matrix.positions(), m + 1);
            for (i, expected) in psp.iter().enumerate().take(m + 1) {
                worst = worst.max(max_abs_diff(matrix.row(i), expected));
            }
        }
    }
    worst
}

#[test]
fn criterion_1_single_pass_equivalence() {
    let start = Instant::now();
    let toy_gap = single_pass_gap(&toy(1), 100);
    let tab_gap = single_pass_gap(&random_tabular(2, 16, 2).with_max_len(64), 101);
    let elapsed = start.elapsed();
    report(
        "1",
        toy_gap <= EQUIV_TOL && tab_gap <= EQUIV_TOL && elapsed < Duration::from_secs(10),
        format!("max |p3 - psp| toy={toy_gap:.3e} tabular={tab_gap:.3e} (tol {EQUIV_TOL:e}), {elapsed:.2?} (< 10 s)"),
    );
}

fn prefix_gap<B: LanguageModel>(backend: &B, seed: u64) -> f64 {
    let v = backend.vocab().size();
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let x = random_tokens(&mut r, v, 1, 32);
        let y = random_tokens(&mut r, v, 1, 32);
        let xy: Vec<TokenId> = x.iter().chain(&y).copied().collect();
        let short = backend.forward_full(&x).unwrap();
        let long = backend.forward_full(&xy).unwrap();
        assert_eq!(long.len(), xy.len());
        for i in 0..x.len() {
            worst = worst.max(max_abs_diff(short.row(i), long.row(i)));
        }
    }
    worst
}

#[test]
fn criterion_2_prefix_stability() {
    let start = Instant::now();
    let toy_gap = prefix_gap(&toy(3), 200);
    let tab_gap = prefix_gap(&random_tabular(4, 16, 3), 201);
    let elapsed = start.elapsed();
    report(
        "2",
        toy_gap <= EQUIV_TOL && tab_gap <= EQUIV_TOL && elapsed < Duration::from_secs(10),
        format!("max prefix drift toy={toy_gap:.3e} tabular={tab_gap:.3e} (tol {EQUIV_TOL:e}), {elapsed:.2?} (< 10 s)"),
    );
}

#[test]
fn criterion_3_ntp_degeneracy() {
    let model = toy(5);
    let labels = toy_labels();
    let template = PromptTemplate::null(false);
    let cache = CalibrationCache::new();
    let policies = [
        AggregationPolicy::NextToken,
        AggregationPolicy::SkipPosition { skip: 0 },
        AggregationPolicy::SlopePosition {
            eta_degrees: 0.0,
            intercept: 0.0,
        },
        AggregationPolicy::range_vote(1, CalibrationVariant::None),
    ];
    let mut r = rng(300);
    let mut score_mismatch = 0;
    let mut decision_mismatch = 0;
    for _ in 0..500 {
        let x = random_tokens(&mut r, 16, 1, 30);
        if psp_scores(&model, &x, 0, &labels).unwrap() != ntp_scores(&model, &x, &labels).unwrap() {
            score_mismatch += 1;
        }
        let prompt = model.detokenize(&x);
        assert_eq!(model.tokenize(&prompt).unwrap(), x);
        let ntp = argmax(&ntp_scores(&model, &x, &labels).unwrap());
        for p in &policies {
            if classify(&model, &prompt, &template, &labels, p, &cache)
                .unwrap()
                .class
                != ntp
            {
                decision_mismatch += 1;
            }
        }
    }
    report(
        "3",
        score_mismatch == 0 && decision_mismatch == 0,
        format!("500 inputs: psp(x,0) != ntp in {score_mismatch}, policy decisions != NTP in {decision_mismatch}"),
    );
}

#[test]
fn criterion_4_exact_marginal_oracle() {
    let start = Instant::now();
    let mut worst_dp = 0.0_f64;
    let mut worst_total = 0.0_f64;
    let mut cases = 0;
    for v in 2..=6usize {
        for trial in 0..4u64 {
            let lm: TabularLm = random_tabular(1000 + 10 * v as u64 + trial, v, 1);
            let labels = full_vocab_labels(v);
            let mut r = rng(2000 + trial);
            for skip in 1..=3 {
                let x = random_tokens(&mut r, v, 1, 5);
                let brute = exact_marginal(&lm, &x, skip, &labels).unwrap();
                let dp = markov_forward_oracle(&lm, &x, skip, &labels);
                worst_dp = worst_dp.max(max_abs_diff(&brute, &dp));
                worst_total = worst_total.max((brute.iter().sum::<f64>() - 1.0).abs());
                cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        "4",
        worst_dp <= ORACLE_TOL && worst_total <= ORACLE_TOL && elapsed < Duration::from_secs(30),
        format!(
            "{cases} cases V<=6 i<=3: |brute - forward algorithm| {worst_dp:.3e}, |total - 1| {worst_total:.3e} (tol {ORACLE_TOL:e}), {elapsed:.2?} (< 30 s)"
        ),
    );
}

#[test]
fn criterion_5_calibration() {
    let mut r = rng(500);
    let mut violations = 0;
    for _ in 0..1000 {
        let k = r.gen_range(2..=6);
        let scores: Vec<f64> = (0..k).map(|_| r.gen::<f64>()).collect();
        let cal = CalibrationVector::new(
            (0..k).map(|_| r.gen_range(1e-6..1.0)).collect(),
            CalibrationVariant::Na,
        );
        let lambda = 10f64.powf(r.gen_range(-6.0..6.0));
        let scaled: Vec<f64> = scores.iter().map(|s| s * lambda).collect();
        if argmax(&calibrate(&scores, &cal)) != argmax(&calibrate(&scaled, &cal)) {
            violations += 1;
        }
    }
    let hand = calibrate(
        &[0.2, 0.2],
        &CalibrationVector::new(vec![0.8, 0.2], CalibrationVariant::Na),
    );
    let hand_ok = hand == vec![0.2, 0.8] && argmax(&hand) == 1;
    report(
        "5",
        violations == 0 && hand_ok,
        format!(
            "argmax changed under rescaling in {violations}/1000; (0.2,0.2)/(0.8,0.2) -> {hand:?}"
        ),
    );
}

#[test]
fn criterion_6_flops_golden() {
    let p = |s| FlopsParams {
        batch: 1,
        seq_len: s,
        hidden: 8,
        layers: 2,
        vocab: 16,
    };
    let golden = flops_estimate(p(4));
    let super_linear = (1..=256u64).all(|s| flops_estimate(p(2 * s)) > 2 * flops_estimate(p(s)));
    let monotone = (1..=512u64).all(|s| flops_estimate(p(s + 1)) > flops_estimate(p(s)));
    report(
        "6",
        golden == 14336 && super_linear && monotone,
        format!("flops(l=2,B=1,s=4,h=8,V=16) = {golden} (expect 14336); monotone={monotone} super-linear={super_linear}"),
    );
}

#[test]
fn criterion_7_run_accounting() {
    let labels = chain_labels();
    let mut problems = Vec::new();

    for k in 1..=12usize {
        let lm = CountingBackend::new(scripted_chain(Some(k)));
        let prompt = [1];
        let out = generate_classify(&lm, &prompt, &labels, 50, Decoding::Greedy).unwrap();
        if out.tokens_consumed != k || lm.pass_count() != k || out.matched_class != Some(0) {
            problems.push(format!(
                "k={k}: consumed {} passes {}",
                out.tokens_consumed,
                lm.pass_count()
            ));
        }
        lm.reset();
        let sc = self_consistency(&lm, &prompt, &labels, 1.0, &[1, 2, 3], 50).unwrap();
        if sc.total_runs != 3 * k || lm.pass_count() != 3 * k {
            problems.push(format!("k={k}: sc runs {}", sc.total_runs));
        }
    }

    let stuck = CountingBackend::new(scripted_chain(None));
    let out = generate_classify(&stuck, &[1], &labels, 50, Decoding::Greedy).unwrap();
    if out.tokens_consumed != 50
        || !out.truncated
        || out.matched_class.is_some()
        || stuck.pass_count() != 50
    {
        problems.push(format!("unreachable: consumed {}", out.tokens_consumed));
    }

    // stochastic stopping: 3-way runs ~= 3x single-way runs
    let geo = geometric_chain(0.2);
    let n = 300u64;
    let single: usize = (0..n)
        .map(|s| {
            generate_classify(
                &geo,
                &[1],
                &labels,
                50,
                Decoding::Sampled {
                    temperature: 1.0,
                    seed: 10_000 + s,
                },
            )
            .unwrap()
            .tokens_consumed
        })
        .sum();
    let triple: usize = (0..n)
        .map(|s| {
            self_consistency(&geo, &[1], &labels, 1.0, &[3 * s, 3 * s + 1, 3 * s + 2], 50)
                .unwrap()
                .total_runs
        })
        .sum();
    let ratio = triple as f64 / single as f64;
    if !(2.7..=3.3).contains(&ratio) {
        problems.push(format!("sc/gen ratio {ratio:.3}"));
    }

    // P3 and NTP: exactly one pass each
    let lm = CountingBackend::new(scripted_chain(Some(5)));
    let template = PromptTemplate::null(false);
    let cache = CalibrationCache::new();
    classify(
        &lm,
        "review",
        &template,
        &labels,
        &AggregationPolicy::range_vote(5, CalibrationVariant::None),
        &cache,
    )
    .unwrap();
    let p3_runs = lm.pass_count();
    lm.reset();
    ntp_scores(&lm, &[1], &labels).unwrap();
    let ntp_runs = lm.pass_count();
    lm.reset();
    let gen_runs = generate_classify(&lm, &[1], &labels, 50, Decoding::Greedy)
        .unwrap()
        .tokens_consumed;
    let sc_runs = self_consistency(&lm, &[1], &labels, 1.0, &[7, 8, 9], 50)
        .unwrap()
        .total_runs;
    if !(p3_runs == 1 && ntp_runs == 1 && 1 < gen_runs && gen_runs < sc_runs) {
        problems.push(format!(
            "p3 {p3_runs} ntp {ntp_runs} gen {gen_runs} sc {sc_runs}"
        ));
    }

    report(
        "7",
        problems.is_empty(),
        format!(
            "gen consumes k runs for k=1..12, 50 when unreachable; sc(3)/gen ratio {ratio:.3}; P3={p3_runs} NTP={ntp_runs} < Gen={gen_runs} < 3w-SC={sc_runs}; problems: {problems:?}"
        ),
    );
}

#[test]
fn criterion_8_metrics_fixtures() {
    let std_ok = (cross_prompt_std(&[0.5, 0.7]) - 0.1).abs() < 1e-12
        && cross_prompt_std(&[0.0, 1.0]) == 0.5
        && cross_prompt_std(&[0.6, 0.6, 0.6]) == 0.0;

    let model = toy(8);
    let labels = toy_labels();
    let templates = vec![
        PromptTemplate::null(false),
        PromptTemplate::parse("{text} t5 t6").unwrap(),
        PromptTemplate::parse("t2 {text} t9").unwrap(),
    ];
    let mut r = rng(800);
    let names = ["alpha", "beta", "gamma"];
    let samples: Vec<Sample> = (0..24)
        .map(|i| {
            Sample::new(model.detokenize(&random_tokens(&mut r, 16, 2, 10)))
                .with_label(names[i % 3])
        })
        .collect();
    let methods = [
        Method::Ntp,
        Method::P3 {
            policy: AggregationPolicy::range_vote(4, CalibrationVariant::Unk5),
        },
        Method::Sc {
            ways: 3,
            temperature: 1.0,
            seed: 9,
            max_tokens: 8,
        },
    ];
    let mut identical = true;
    let mut round_trip = true;
    for method in &methods {
        let run = |jobs| {
            evaluate(
                &model,
                &templates,
                &samples,
                &labels,
                method,
                EvalOptions {
                    jobs,
                    ..Default::default()
                },
            )
            .unwrap()
        };
        let a = run(1);
        let b = run(1);
        let c = run(4);
        for format in [ReportFormat::Json, ReportFormat::Csv] {
            let ta = render_report(&a, format).unwrap();
            identical &= ta == render_report(&b, format).unwrap()
                && ta == render_report(&c, format).unwrap();
            let parsed = parse_report(&ta, format).unwrap();
            round_trip &= parsed == a && render_report(&parsed, format).unwrap() == ta;
        }
    }
    report(
        "8",
        std_ok && identical && round_trip,
        format!("std fixtures {std_ok}; report round-trip byte-identical {round_trip}; pipeline deterministic (jobs 1 vs 1 vs 4) {identical}"),
    );
}

#[test]
fn criterion_9_brittleness_fixture() {
    let lm = brittle_lm();
    let labels = brittle_labels();
    let templates = brittle_templates();
    let samples = brittle_samples();
    let ntp = evaluate(
        &lm,
        &templates,
        &samples,
        &labels,
        &Method::Ntp,
        EvalOptions::default(),
    )
    .unwrap();
    let vote = evaluate(
        &lm,
        &templates,
        &samples,
        &labels,
        &Method::P3 {
            policy: AggregationPolicy::range_vote(3, CalibrationVariant::None),
        },
        EvalOptions::default(),
    )
    .unwrap();
    let ntp_accs: Vec<f64> = ntp.per_prompt.iter().map(|p| p.accuracy).collect();
    let vote_accs: Vec<f64> = vote.per_prompt.iter().map(|p| p.accuracy).collect();
    report(
        "9",
        templates.len() >= 5
            && ntp.cross_prompt_std > 0.0
            && vote.cross_prompt_std < ntp.cross_prompt_std,
        format!(
            "NTP accs {ntp_accs:?} std {:.4}; RangeVote(eta=3) accs {vote_accs:?} std {:.4}",
            ntp.cross_prompt_std, vote.cross_prompt_std
        ),
    );
}
