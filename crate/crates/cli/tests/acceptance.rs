//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use mvfusion::benchmark::{run_benchmark, BenchmarkConfig, BenchmarkSummary, DEFAULT_FRACTIONS};
use mvfusion::combiner::{bmc, bmc_weights, naive_vote, wmv, wmv_bmc, Combined, DiscountWeights};
use mvfusion::datagen::{generate, split, GenConfig, SplitMode};
use mvfusion::evaluator::{loso_crossval, ExperimentConfig};
use mvfusion::fusion::{fusion_gradient_check, FusionArch, FusionModel};
use mvfusion::inducer::InducerModel;
use mvfusion::nn::{gradient_check, softmax};
use mvfusion::temporal::{lowpass, threshold_alerts, Cascade, Classifier, StreamConfig, StreamProcessor};
use mvfusion::types::OBJECT_NONE;
use mvfusion::{Collection, Labels, ProbVector, Split, TaskId, ViewObservation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_probs(rng: &mut ChaCha8Rng, m: usize) -> ProbVector {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.001..1.0)).collect();
    let total: f64 = raw.iter().sum();
    ProbVector::new(raw.iter().map(|x| x / total).collect()).unwrap()
}

// Brute-force combiner: class-major loops, explicit per-view weights.
fn oracle(probs: &[ProbVector], weights: &[f64]) -> (usize, Vec<f64>, Vec<f64>) {
    let m = probs[0].len();
    let mut scores = Vec::with_capacity(m);
    for i in 0..m {
        let mut s = 0.0;
        for j in 0..probs.len() {
            s += weights[j] * probs[j].values()[i];
        }
        scores.push(s);
    }
    let mut class = 0;
    for i in 1..m {
        if scores[i] > scores[class] {
            class = i;
        }
    }
    let mut total = 0.0;
    for s in &scores {
        total += s;
    }
    let fused = if total > 0.0 { scores.iter().map(|s| s / total).collect() } else { vec![1.0 / m as f64; m] };
    (class, scores, fused)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn same(got: &Combined, want: &(usize, Vec<f64>, Vec<f64>)) -> bool {
    got.class == want.0 && bits(&got.scores) == bits(&want.1) && bits(got.fused.values()) == bits(&want.2)
}

fn combiner_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(2..=5);
        let probs: Vec<ProbVector> = (0..n).map(|_| random_probs(&mut rng, m)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let mistakes: Vec<usize> = (0..n).map(|_| rng.random_range(0..20)).collect();

        let total: usize = mistakes.iter().sum();
        let d: Vec<f64> =
            mistakes.iter().map(|&k| if total == 0 { 1.0 } else { 1.0 - k as f64 / total as f64 }).collect();
        let present = mask.iter().filter(|&&x| x).count();
        let p: Vec<f64> = mask
            .iter()
            .map(|&x| match (present, x) {
                (0, _) => 1.0 / n as f64,
                (_, true) => 1.0 / present as f64,
                (_, false) => 0.0,
            })
            .collect();
        let dp: Vec<f64> = d.iter().zip(&p).map(|(a, b)| a * b).collect();

        let discounts = DiscountWeights::from_mistakes(mistakes);
        let avail = bmc_weights(&mask);
        ensure(bits(&discounts.d) == bits(&d), || format!("case {case}: discounts differ"))?;
        ensure(bits(&avail.p) == bits(&p), || format!("case {case}: availability weights differ"))?;
        let checks = [
            ("naive_vote", naive_vote(&probs).map_err(err)?, oracle(&probs, &vec![1.0 / n as f64; n])),
            ("wmv", wmv(&probs, &discounts).map_err(err)?, oracle(&probs, &d)),
            ("bmc", bmc(&probs, &avail).map_err(err)?, oracle(&probs, &p)),
            ("wmv_bmc", wmv_bmc(&probs, &discounts, &avail).map_err(err)?, oracle(&probs, &dp)),
        ];
        for (name, got, want) in &checks {
            ensure(same(got, want), || format!("case {case}: {name} differs from oracle"))?;
        }
    }
    Ok("200 instances bit-equal for nv, wmv, bmc, wmv_bmc".into())
}

fn random_collection(rng: &mut ChaCha8Rng, id: u64, num_views: usize, dim: usize) -> Collection {
    let views = (0..num_views)
        .map(|j| {
            if rng.random_bool(0.7) {
                ViewObservation::present(j, (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            } else {
                ViewObservation::missing(j, dim)
            }
        })
        .collect();
    let mut labels = Labels::new(0, 0, 0, 0);
    for task in TaskId::ALL {
        labels.set(task, rng.random_range(0..task.num_classes()));
    }
    Collection { id, subject: 0, views, labels, timestamp: id }
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for config in 0..10 {
        let task = TaskId::ALL[config % 4];
        let dim = rng.random_range(2..=8);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=10)).collect();
        let model = InducerModel::new(0, task, dim, &hidden, &mut rng);
        let batch = rng.random_range(1..=6);
        let xs: Vec<Vec<f64>> = (0..batch).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<usize> = (0..batch).map(|_| rng.random_range(0..task.num_classes())).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let e = gradient_check(&model, &refs, &ys).map_err(err)?;
        ensure(e < 1e-4, || format!("inducer config {config}: relative error {e:.2e}"))?;
        worst = worst.max(e);

        let num_views = rng.random_range(2..=4);
        let dim = rng.random_range(2..=5);
        let arch = FusionArch {
            trunk_hidden: vec![rng.random_range(2..=6)],
            view_width: rng.random_range(2..=6),
            fusion_width: rng.random_range(3..=8),
        };
        let model = FusionModel::new(task, num_views, dim, arch, &mut rng);
        let collections: Vec<Collection> =
            (0..rng.random_range(1..=5)).map(|i| random_collection(&mut rng, i, num_views, dim)).collect();
        let refs: Vec<&Collection> = collections.iter().collect();
        let e = fusion_gradient_check(&model, &refs).map_err(err)?;
        ensure(e < 1e-4, || format!("fusion config {config}: relative error {e:.2e}"))?;
        worst = worst.max(e);
    }
    Ok(format!("10 inducer + 10 fusion configs, max relative error {worst:.2e}"))
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let m = rng.random_range(2..=6);
        let scale = 10f64.powi(rng.random_range(-2..=3));
        let logits: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        worst = worst.max((softmax(&logits).iter().sum::<f64>() - 1.0).abs());
    }
    let mut frames = 0;
    while frames < 10_000 {
        let m = rng.random_range(2..=5);
        let len = rng.random_range(1..=200);
        let w = rng.random_range(1..=20);
        let stream: Vec<ProbVector> = (0..len).map(|_| random_probs(&mut rng, m)).collect();
        for out in lowpass(&stream, w).map_err(err)? {
            worst = worst.max((out.sum() - 1.0).abs());
        }
        frames += len;
    }
    ensure(worst <= 1e-6, || format!("sum off by {worst:.2e}"))?;
    Ok(format!("10k softmax + {frames} lowpass outputs, max |sum - 1| = {worst:.2e}"))
}

fn benchmark_orderings(summary: &BenchmarkSummary) -> Outcome {
    let mut lines = Vec::new();
    for name in ["fusion_over_voting", "fusion_complete_gap", "voting_drop"] {
        let checks: Vec<_> = summary.checks.iter().filter(|c| c.name == name).collect();
        ensure(checks.len() == 4, || format!("{name}: expected 4 tasks"))?;
        let values: Vec<String> = checks.iter().map(|c| format!("{:+.3}", c.value)).collect();
        ensure(checks.iter().all(|c| c.pass), || format!("{name} failed: {}", values.join(" ")))?;
        lines.push(format!("{name} [{}]", values.join(" ")));
    }
    Ok(lines.join("; "))
}

fn single_view_order(summary: &BenchmarkSummary) -> Outcome {
    let mut parts = Vec::new();
    for t in &summary.tasks {
        let sv = &t.single_views;
        ensure(sv.best > sv.average && sv.average > sv.worst, || {
            format!("{}: best {:.3} avg {:.3} worst {:.3}", t.task, sv.best, sv.average, sv.worst)
        })?;
        parts.push(format!("{} {:.3}>{:.3}>{:.3}", t.task, sv.best, sv.average, sv.worst));
    }
    Ok(parts.join("; "))
}

fn complete_fraction(summary: &BenchmarkSummary) -> Outcome {
    let f = summary.generation.complete_fraction;
    ensure((0.01..=0.10).contains(&f), || format!("complete fraction {f:.4}"))?;
    Ok(format!("complete fraction {f:.4}"))
}

fn crossval() -> Outcome {
    let dataset = generate(&GenConfig::default()).map_err(err)?;
    let k = 6;
    for &subject in dataset.subjects.iter().take(k) {
        let tagged = split(dataset.clone(), DEFAULT_FRACTIONS, SplitMode::BySubject(subject), 0).map_err(err)?;
        let subjects = |s: Split| tagged.split_collections(s).iter().map(|c| c.subject).collect::<BTreeSet<u32>>();
        let test = subjects(Split::Test);
        ensure(test == BTreeSet::from([subject]), || format!("fold for subject {subject}: test holds {test:?}"))?;
        for s in [Split::Train, Split::Val] {
            ensure(!subjects(s).contains(&subject), || format!("subject {subject} leaks into {s:?}"))?;
        }
    }
    let experiment = ExperimentConfig::default();
    let mut parts = Vec::new();
    for task in TaskId::ALL {
        let report = loso_crossval(&dataset, task, k, None, DEFAULT_FRACTIONS, &experiment, 42).map_err(err)?;
        let lf = report.stat("lf").ok_or("missing lf")?.mean;
        let avg = report.stat("average_of_n").ok_or("missing average_of_n")?.mean;
        ensure(report.folds.len() == k, || format!("{task}: {} folds", report.folds.len()))?;
        ensure(lf >= avg, || format!("{task}: lf {lf:.3} < average_of_n {avg:.3}"))?;
        parts.push(format!("{task} {lf:.3}>={avg:.3}"));
    }
    Ok(format!("k=6, no leakage; {}", parts.join("; ")))
}

/// Object model reading its class from the first feature of view 0.
struct Stub(TaskId, u64);

impl Classifier for Stub {
    fn task(&self) -> TaskId {
        self.0
    }

    fn classify(&self, c: &Collection) -> mvfusion::Result<ProbVector> {
        let m = self.0.num_classes();
        let class = if self.0.is_location() { self.1 as usize } else { c.views[0].features[0] as usize };
        let mut v = vec![0.0; m];
        v[class] = 1.0;
        ProbVector::new(v)
    }
}

fn temporal() -> Outcome {
    let pv = |v: &[f64]| ProbVector::new(v.to_vec()).unwrap();
    let out = lowpass(&[pv(&[1.0, 0.0]), pv(&[0.0, 1.0]), pv(&[0.0, 1.0])], 2).map_err(err)?;
    let got: Vec<Vec<f64>> = out.into_iter().map(ProbVector::into_inner).collect();
    ensure(got == [vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]], || format!("moving average trace {got:?}"))?;

    let stream = vec![pv(&[0.2, 0.3, 0.5]), pv(&[0.6, 0.1, 0.3]), pv(&[0.1, 0.1, 0.8])];
    ensure(lowpass(&stream, 1).map_err(err)? == stream, || "window of one is not the identity".into())?;

    // lh_loc: Air (2) is a distraction class, SteeringWheel (0) is not
    let (d, n) = (2, 0);
    let t3 = StreamConfig { sustain_threshold: 3, ..Default::default() };
    let alerts = threshold_alerts(&[d, d, n, d, d, d], TaskId::LeftHandLocation, &t3).map_err(err)?;
    let frames: Vec<u64> = alerts.iter().map(|a| a.timestamp).collect();
    ensure(frames == [5], || format!("T=3 trace alerts at {frames:?}"))?;
    ensure(threshold_alerts(&[n; 10], TaskId::LeftHandLocation, &t3).map_err(err)?.is_empty(), || {
        "alert without distraction".into()
    })?;
    let t1 = StreamConfig { sustain_threshold: 1, ..Default::default() };
    let alerts = threshold_alerts(&[n, d, n], TaskId::LeftHandLocation, &t1).map_err(err)?;
    ensure(alerts.len() == 1 && alerts[0].timestamp == 1, || format!("T=1 trace {alerts:?}"))?;

    let obj = Stub(TaskId::RightHandObject, 0);
    let loc = Stub(TaskId::RightHandLocation, 3);
    let mut cascade = Cascade::new(&obj, &loc).map_err(err)?;
    let mut nones = 0;
    for i in 0..12u64 {
        let object = (i % 4) as f64;
        let c = Collection {
            id: i,
            subject: 0,
            views: vec![ViewObservation::present(0, vec![object])],
            labels: Labels::new(0, 0, 0, 0),
            timestamp: i,
        };
        let out = cascade.run(&c).map_err(err)?;
        let expected = if out.object == OBJECT_NONE { Some(3) } else { None };
        ensure(out.location == expected, || format!("cascade frame {i}: {out:?}"))?;
        nones += u64::from(out.object == OBJECT_NONE);
    }
    ensure(cascade.evaluations() == 12 + nones, || format!("cascade evaluated {} models", cascade.evaluations()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for round in 0..20 {
        let task = TaskId::ALL[round % 4];
        let config = StreamConfig {
            window_size: rng.random_range(1..=8),
            sustain_threshold: rng.random_range(1..=20),
            ..Default::default()
        };
        // long runs of one dominant class so sustained episodes occur
        let mut stream = Vec::with_capacity(1000);
        while stream.len() < 1000 {
            let class = rng.random_range(0..task.num_classes());
            for _ in 0..rng.random_range(1..=40) {
                let mut v: Vec<f64> = (0..task.num_classes()).map(|_| rng.random_range(0.0..0.3)).collect();
                v[class] += 1.0;
                let s: f64 = v.iter().sum();
                stream.push(ProbVector::new(v.iter().map(|x| x / s).collect()).unwrap());
            }
        }
        stream.truncate(1000);
        let mut proc = StreamProcessor::new(task, &config).map_err(err)?;
        let mut streamed = Vec::new();
        for (i, p) in stream.iter().enumerate() {
            streamed.extend(proc.push(i as u64, p).map_err(err)?.alert);
        }
        let classes: Vec<usize> =
            lowpass(&stream, config.window_size).map_err(err)?.iter().map(ProbVector::argmax).collect();
        let batch = threshold_alerts(&classes, task, &config).map_err(err)?;
        ensure(streamed == batch, || format!("round {round}: streaming and batch alerts differ"))?;
    }
    Ok("hand traces match; streaming == batch on 20 x 1000-frame streams".into())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let run = |out: &Path| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_mvfusion"))
            .args(["bench", "--seed", "42", "--out"])
            .arg(out)
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(err)?;
        ensure(status.success(), || format!("bench exited with {status}"))
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a)?;
    run(&b)?;
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&a).map_err(err)? {
        let name = entry.map_err(err)?.file_name();
        let left = std::fs::read(a.join(&name)).map_err(err)?;
        let right = std::fs::read(b.join(&name)).map_err(err)?;
        ensure(left == right, || format!("{} differs between runs", name.to_string_lossy()))?;
        names.push(name.to_string_lossy().into_owned());
    }
    names.sort();
    ensure(!names.is_empty(), || "bench wrote no files".into())?;
    Ok(format!("byte-identical: {}", names.join(", ")))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n} {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n} {name} ({secs:.1}s): {detail}");
            }
        }
    };
    report(1, "combiner oracle", &mut combiner_oracle);
    report(2, "gradients", &mut gradients);
    report(3, "normalization", &mut normalization);
    let start = Instant::now();
    let bench = run_benchmark(&BenchmarkConfig::with_seed(42)).map(|(_, s)| s).map_err(err);
    println!("benchmark seed 42 trained and evaluated in {:.1}s", start.elapsed().as_secs_f64());
    let with_bench = |f: fn(&BenchmarkSummary) -> Outcome| {
        let bench = bench.clone();
        move || bench.as_ref().map_err(Clone::clone).and_then(f)
    };
    report(4, "benchmark orderings", &mut with_bench(benchmark_orderings));
    report(5, "single-view order", &mut with_bench(single_view_order));
    report(6, "subject cross-validation", &mut crossval);
    report(7, "complete fraction", &mut with_bench(complete_fraction));
    report(8, "temporal", &mut temporal);
    report(9, "determinism", &mut determinism);
    if failed == 0 {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
