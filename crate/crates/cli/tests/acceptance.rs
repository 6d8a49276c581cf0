//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 5 reuse the core property suites, 6 and 7 train on the
//! synthetic B1 family, 8 drives the `deflicker` binary.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use deflicker::flow::{mean_nonoccluded_error, occlusion_mask, warp, FlowProvider};
use deflicker::metrics::{score_sequences, temporal_average_baseline, FeatureDistance, FlowSource};
use deflicker::net::{ConsistencyNet, NetConfig};
use deflicker::synth::{export, generate, FlickerKind, SynthSpec};
use deflicker::trainer::{fit, FitOptions, TrainConfig, TrainState, TrainingVideo};
use deflicker::video::{load_frame_folder, FrameSequence};
use deflicker::Error;

const TRAIN_VIDEOS: u64 = 16;
const TRAIN_SEED_BASE: u64 = 1000;
const HELD_OUT_SEEDS: [u64; 4] = [9000, 9001, 9002, 9003];
const TRAIN_STEPS: usize = 1000;
const LEARNING_RATE: f64 = 1e-3;
/// First adjacent pair (0-based) after the B1 direction reversal.
const REVERSAL_PAIR: usize = 9;

/// Criteria expected to fail, with the reason printed next to the FAIL line.
const KNOWN_FAILURES: &[(usize, &str)] = &[(
    7,
    "the style terms increase drift at desk scale with the fixed_random extractor; see README",
)];

fn family(kind: FlickerKind, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::b1_variant(seed);
    spec.flicker.kind = kind;
    spec
}

fn train_family(kind: FlickerKind, lambda_sp: f64) -> ConsistencyNet {
    let data: Vec<TrainingVideo> = (0..TRAIN_VIDEOS)
        .map(|i| {
            let v = generate(&family(kind, TRAIN_SEED_BASE + i)).unwrap();
            TrainingVideo {
                triplet: v.triplet,
                flows: Arc::new(v.flows) as Arc<dyn FlowProvider>,
            }
        })
        .collect();
    let mut config = TrainConfig {
        epochs: 1,
        batches_per_epoch: TRAIN_STEPS,
        batch_size: 1,
        learning_rate: LEARNING_RATE,
        net: NetConfig::with_base(16),
        checkpoint_every: 0,
        ..Default::default()
    };
    config.weights.lambda_sp = lambda_sp;
    let started = Instant::now();
    let out = fit(
        &data,
        &config,
        TrainState::new(&config).unwrap(),
        &FitOptions::default(),
        |_| {},
    )
    .unwrap();
    println!(
        "    trained {TRAIN_STEPS} steps (lambda_SP = {lambda_sp}) in {:.0} s",
        started.elapsed().as_secs_f64()
    );
    out.state.net
}

/// Masked error of each adjacent output pair, `None` where the mask is empty.
fn pair_errors(
    o: &FrameSequence,
    raw: &FrameSequence,
    flows: &dyn FlowProvider,
) -> Vec<Option<f64>> {
    (0..o.len() - 1)
        .map(|t| {
            let fwd = flows.flow(raw, t, t + 1).unwrap();
            let bwd = flows.flow(raw, t + 1, t).unwrap();
            let mask = occlusion_mask(&fwd, &bwd).unwrap();
            match mean_nonoccluded_error(&o[t], &warp(&o[t + 1], &fwd).unwrap(), &mask) {
                Ok(e) => Some(e),
                Err(Error::EmptyMask) => None,
                Err(e) => panic!("{e}"),
            }
        })
        .collect()
}

fn mean_of(values: &[Option<f64>]) -> f64 {
    let kept: Vec<f64> = values.iter().flatten().copied().collect();
    assert!(
        !kept.is_empty(),
        "every pair in the segment is fully occluded"
    );
    kept.iter().sum::<f64>() / kept.len() as f64
}

fn criterion_6() {
    let net = train_family(FlickerKind::GlobalBrightness, 10.0);
    let embedder = FeatureDistance::fixed_random(7);
    let (mut w_o, mut w_p, mut d_o, mut d_base) = (0.0, 0.0, 0.0, 0.0);
    let (mut seg_uniform, mut seg_reversal) = (0.0, 0.0);
    for seed in HELD_OUT_SEEDS {
        let v = generate(&SynthSpec::b1_variant(seed)).unwrap();
        let (raw, processed) = (&v.triplet.raw, &v.triplet.processed);
        let o = net.rollout(&v.triplet).unwrap();
        let baseline = temporal_average_baseline(processed, 1).unwrap();
        let s_o =
            score_sequences(raw, processed, &o, &v.flows, FlowSource::Raw, &embedder).unwrap();
        let s_p = score_sequences(
            raw,
            processed,
            processed,
            &v.flows,
            FlowSource::Raw,
            &embedder,
        )
        .unwrap();
        let s_b = score_sequences(
            raw,
            processed,
            &baseline,
            &v.flows,
            FlowSource::Raw,
            &embedder,
        )
        .unwrap();
        let pairs = pair_errors(&o, raw, &v.flows);
        let (u, r) = (
            mean_of(&pairs[..REVERSAL_PAIR]),
            mean_of(&pairs[REVERSAL_PAIR..]),
        );
        println!(
            "    held-out {seed}: w(O) {:.3e} w(P) {:.3e} D(O) {:.4} D(baseline) {:.4} w uniform {u:.3e} w reversal {r:.3e}",
            s_o.warping_error, s_p.warping_error, s_o.perceptual_distance, s_b.perceptual_distance
        );
        w_o += s_o.warping_error;
        w_p += s_p.warping_error;
        d_o += s_o.perceptual_distance;
        d_base += s_b.perceptual_distance;
        seg_uniform += u;
        seg_reversal += r;
    }
    println!(
        "    w(O)/w(P) = {:.3}, D(O)/D(baseline) = {:.3}, reversal/uniform = {:.3}",
        w_o / w_p,
        d_o / d_base,
        seg_reversal / seg_uniform
    );
    assert!(w_o <= 0.5 * w_p, "w(O) {w_o} exceeds half of w(P) {w_p}");
    assert!(
        d_o <= 2.0 * d_base,
        "D(O) {d_o} exceeds twice the baseline {d_base}"
    );
    assert!(
        seg_reversal <= 1.5 * seg_uniform,
        "reversal-segment error {seg_reversal} exceeds 1.5x uniform-segment error {seg_uniform}"
    );
}

fn final_frame_drift(net: &ConsistencyNet) -> f64 {
    let seeds = [SynthSpec::b1().scene.seed]
        .into_iter()
        .chain(HELD_OUT_SEEDS)
        .collect::<Vec<_>>();
    let drift: f64 = seeds
        .iter()
        .map(|&s| {
            let v = generate(&family(FlickerKind::HueShift, s)).unwrap();
            let o = net.rollout(&v.triplet).unwrap();
            let t = o.len() - 1;
            (o[t].mean() - v.triplet.processed[t].mean()).abs()
        })
        .sum();
    drift / seeds.len() as f64
}

fn criterion_7() {
    let with_sp = final_frame_drift(&train_family(FlickerKind::HueShift, 10.0));
    let without_sp = final_frame_drift(&train_family(FlickerKind::HueShift, 0.0));
    println!("    mean |mean(O_T) - mean(P_T)|: lambda_SP = 10 -> {with_sp:.5}, lambda_SP = 0 -> {without_sp:.5}");
    assert!(
        with_sp <= without_sp,
        "drift with the style loss ({with_sp:.5}) exceeds drift without it ({without_sp:.5})"
    );
}

fn deflicker(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_deflicker"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "deflicker {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn criterion_8() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("tree").join("b1");
    let v = generate(&SynthSpec::b1()).unwrap();
    export(&v, &video).unwrap();
    let output = video.join("output");
    std::fs::create_dir_all(&output).unwrap();
    for entry in std::fs::read_dir(video.join("processed")).unwrap() {
        let name = entry.unwrap().file_name();
        std::fs::copy(video.join("processed").join(&name), output.join(&name)).unwrap();
    }
    let eval_dir = dir.path().join("eval");
    deflicker(&[
        "eval",
        "--tree",
        s(&dir.path().join("tree")),
        "--out",
        s(&eval_dir),
    ]);

    let raw = load_frame_folder(&video.join("raw"), "*.png").unwrap();
    let processed = load_frame_folder(&video.join("processed"), "*.png").unwrap();
    let w_p = score_sequences(
        &raw,
        &processed,
        &processed,
        &v.flows,
        FlowSource::Raw,
        &FeatureDistance::fixed_random(7),
    )
    .unwrap()
    .warping_error;
    let mut reader = csv::Reader::from_path(eval_dir.join("metrics.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let w_o: f64 = rows[0][2].parse().unwrap();
    let d: f64 = rows[0][3].parse().unwrap();
    println!("    eval on O == P: D = {d}, w(O) = {w_o:e}, w(P) = {w_p:e}");
    assert_eq!(d, 0.0);
    assert_eq!(w_o.to_bits(), w_p.to_bits());

    let csv_path = dir.path().join("ours.csv");
    std::fs::write(
        &csv_path,
        "video_id,task,warping_error,perceptual_distance,frames_counted,skipped_pairs\n\
         a,dehazing,0.1,0.2,19,0\nb,dehazing,0.3,0.4,19,0\nc,style,0.5,0.6,19,0\n",
    )
    .unwrap();
    let report_dir = dir.path().join("report");
    deflicker(&[
        "report",
        s(&csv_path),
        "--label",
        "ours",
        "--out",
        s(&report_dir),
    ]);
    let md = std::fs::read_to_string(report_dir.join("report.md")).unwrap();
    let table: Vec<&str> = md.lines().filter(|l| l.starts_with('|')).collect();
    for line in &table {
        println!("    {line}");
    }
    assert_eq!(
        &table[2..],
        [
            "| dehazing | 0.200000 | 0.300000 |",
            "| style | 0.500000 | 0.600000 |",
            "| **Average** | 0.350000 | 0.450000 |"
        ]
    );
}

fn main() {
    let criteria: [(usize, &str, fn()); 8] = [
        (1, "loss oracles", common::suites::criterion_1),
        (
            2,
            "finite-difference gradients",
            common::suites::criterion_2,
        ),
        (3, "identity at initialisation", common::suites::criterion_3),
        (4, "ping pong construction", common::suites::criterion_4),
        (5, "mask correctness", common::suites::criterion_5),
        (6, "desk-scale training on the B1 family", criterion_6),
        (7, "style-preservation ablation", criterion_7),
        (8, "metric plumbing", criterion_8),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            println!("criterion {id} ({name}): SKIPPED");
            continue;
        }
        let started = Instant::now();
        let passed = catch_unwind(AssertUnwindSafe(check)).is_ok();
        let secs = started.elapsed().as_secs_f64();
        let known = KNOWN_FAILURES
            .iter()
            .find(|(k, _)| *k == id)
            .map(|(_, why)| *why);
        let verdict = match (passed, known) {
            (true, None) => "PASS".to_string(),
            (true, Some(_)) => "PASS (listed as a known failure)".to_string(),
            (false, Some(why)) => format!("FAIL (known: {why})"),
            (false, None) => {
                unexpected += 1;
                "FAIL".to_string()
            }
        };
        println!("criterion {id} ({name}): {verdict} [{secs:.1} s]");
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
