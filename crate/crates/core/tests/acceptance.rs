//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use irisswap::gaze::{accuracy, precision, GazeSample, GazeTrace, TargetSchedule};
use irisswap::harness::{run_experiment, AttackReport, ExperimentConfig};
use irisswap::iriscode::{encode, hamming_distance, GaborParams};
use irisswap::liveness::{
    attack_success_rate, gradient_check, make_windows, Label, LivenessError, LstmModel, UserPrediction,
    VelocitySignal, VelocityWindow, WindowPrediction, WINDOW_LEN,
};
use irisswap::rubbersheet::{swap_iris, unwrap, SwapOptions};
use irisswap::segmentation::{dice_score, geometry_to_mask, segment, BinaryMask, SegmentationParams};
use irisswap::synth::{generate_subject_texture, render_frame, texture_for_profile, AttackMode, SubjectProfile};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn random_gaze(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.random_range(-8.0..8.0), rng.random_range(-6.0..6.0))
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for m in 0..20 {
        let hidden = [2, 4, 16][m % 3];
        let n = 4 * hidden * (2 + hidden + 1) + hidden + 1;
        let params: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = LstmModel::from_params(hidden, params).unwrap();
        let batch: Vec<VelocityWindow> = (0..8)
            .map(|i| VelocityWindow {
                subject: i,
                label: if rng.random_bool(0.5) { Label::Spoof } else { Label::Real },
                index: 0,
                samples: std::array::from_fn(|_| [rng.random::<f64>(), rng.random::<f64>()]),
            })
            .collect();
        worst = worst.max(gradient_check(&model, &batch, 1e-5).unwrap());
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 30.0,
        format!("max relative error {worst:.2e} over 20 models, {secs:.1} s"),
    )
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let sp = SegmentationParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_mae, mut changed_outside, mut worst_max) = (0.0f64, 0usize, 0u8);
    for eye in 0..50u64 {
        let profile = SubjectProfile::from_seed(5000 + eye);
        let texture = texture_for_profile(&profile);
        let (h, v) = random_gaze(&mut rng);
        let img = render_frame(h, v, &profile, &texture, eye).unwrap().image;
        let geom = segment(&img, &sp).unwrap();
        let own = unwrap(&img, &geom, 64, 512).unwrap();
        let out = swap_iris(&img, &geom, &own, &SwapOptions::default()).unwrap().image;
        let (p, l) = (geom.pupil, geom.limbus);
        let (mut sum, mut count) = (0.0, 0usize);
        for y in 0..img.height() {
            for x in 0..img.width() {
                let (xf, yf) = (x as f64, y as f64);
                let dp = (xf - p.center.x).hypot(yf - p.center.y);
                let dl = (xf - l.center.x).hypot(yf - l.center.y);
                let (a, b) = (img.get(x, y), out.get(x, y));
                if dp < p.radius || dl >= l.radius {
                    changed_outside += (a != b) as usize;
                    continue;
                }
                // distance to the limbus along the ray from the pupil centre
                let (ux, uy) = ((xf - p.center.x) / dp, (yf - p.center.y) / dp);
                let (ox, oy) = (p.center.x - l.center.x, p.center.y - l.center.y);
                let bq = ux * ox + uy * oy;
                let to_limbus = -bq + (bq * bq - (ox * ox + oy * oy - l.radius * l.radius)).sqrt();
                if dp >= p.radius + 1.0 && dp <= to_limbus - 1.0 {
                    let e = a.abs_diff(b);
                    sum += e as f64;
                    count += 1;
                    worst_max = worst_max.max(e);
                }
            }
        }
        worst_mae = worst_mae.max(sum / count as f64);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst_mae <= 2.0 && changed_outside == 0 && worst_max <= 16 && secs < 60.0,
        format!(
            "worst per-eye interior MAE {worst_mae:.3}, max error {worst_max}, {changed_outside} non-annulus pixels changed, {secs:.1} s"
        ),
    )
}

fn criterion_3() -> Verdict {
    let p = GaborParams::default();
    let mut impostor = Vec::new();
    for k in 0..200u64 {
        let a = encode(&generate_subject_texture(9000 + 2 * k), &p).unwrap();
        let b = encode(&generate_subject_texture(9001 + 2 * k), &p).unwrap();
        impostor.push(hamming_distance(&a, &b, 8).unwrap());
    }
    let imp_mean = impostor.iter().sum::<f64>() / impostor.len() as f64;
    let sp = SegmentationParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut below = 0;
    for s in 0..100u64 {
        let profile = SubjectProfile::from_seed(7000 + s);
        let texture = texture_for_profile(&profile);
        let mut codes = Vec::new();
        for k in 0..2 {
            let (h, v) = random_gaze(&mut rng);
            let img = render_frame(h, v, &profile, &texture, 10 * s + k).unwrap().image;
            let geom = segment(&img, &sp).unwrap();
            codes.push(encode(&unwrap(&img, &geom, 64, 512).unwrap(), &p).unwrap());
        }
        below += (hamming_distance(&codes[0], &codes[1], 8).unwrap() < 0.37) as usize;
    }
    verdict(
        (0.45..=0.55).contains(&imp_mean) && below >= 90,
        format!("impostor mean HD {imp_mean:.4} (200 pairs), genuine HD < 0.37 in {below}/100 pairs"),
    )
}

fn criterion_4() -> Verdict {
    let sp = SegmentationParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut scores = Vec::new();
    for s in 0..100u64 {
        let profile = SubjectProfile::from_seed(3000 + s);
        let texture = texture_for_profile(&profile);
        let (h, v) = random_gaze(&mut rng);
        let frame = render_frame(h, v, &profile, &texture, s).unwrap();
        let geom = segment(&frame.image, &sp).unwrap();
        scores.push(dice_score(&geometry_to_mask(&geom), &frame.mask).unwrap());
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let min = scores.iter().cloned().fold(1.0, f64::min);
    verdict(mean >= 0.95, format!("mean Dice {mean:.4}, min {min:.4} over 100 renders"))
}

fn full_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig::load(None, &[("output_dir".into(), out.display().to_string())]).unwrap()
}

fn criterion_5(report: &AttackReport, secs: f64) -> Verdict {
    let m = report.mode(AttackMode::Offline).unwrap();
    let frac = m.authenticated as f64 / m.subjects.len() as f64;
    let ten = m.subjects.iter().all(|s| s.hd.len() == 10);
    verdict(
        m.subjects.len() == 20 && ten && frac >= 0.7 && secs < 600.0,
        format!(
            "{}/{} offline attackers authenticate as the victim (mean HD {:.3}), ten frames each: {ten}; full run {secs:.0} s",
            m.authenticated,
            m.subjects.len(),
            m.hd.mean
        ),
    )
}

fn criterion_6(report: &AttackReport) -> Verdict {
    let off = report.mode(AttackMode::Offline).unwrap();
    let on = report.mode(AttackMode::Online).unwrap();
    let frac = off.swapped_not_better as f64 / off.subjects.len() as f64;
    let aggregate = on.swapped_accuracy.mean >= off.swapped_accuracy.mean;
    verdict(
        frac >= 0.8 && aggregate,
        format!(
            "offline swapped error >= unswapped for {}/{} subjects ({:.4} vs {:.4} deg); online {:.4} vs offline {:.4} deg swapped error",
            off.swapped_not_better,
            off.subjects.len(),
            off.swapped_accuracy.mean,
            off.unswapped_accuracy.mean,
            on.swapped_accuracy.mean,
            off.swapped_accuracy.mean
        ),
    )
}

fn criterion_7(report: &AttackReport) -> Verdict {
    let st = &report.mode(AttackMode::Offline).unwrap().static_baseline;
    verdict(
        st.detection_rate.mean >= 0.95,
        format!(
            "static spoof window detection {:.3} ± {:.3} over {} splits",
            st.detection_rate.mean, st.detection_rate.std, st.detection_rate.n
        ),
    )
}

fn criterion_8(report: &AttackReport) -> Verdict {
    let mut ok = report.attackers.len() == 20;
    let mut parts = Vec::new();
    for m in &report.modes {
        ok &= m.splits.len() == 10 && m.asr_window.n == 10 && m.asr_user.n == 10;
        ok &= m.asr_window.std.is_finite() && m.asr_user.std.is_finite();
        parts.push(format!(
            "{} ASR window {:.3} ± {:.3}, user {:.3} ± {:.3}",
            m.mode.as_str(),
            m.asr_window.mean,
            m.asr_window.std,
            m.asr_user.mean,
            m.asr_user.std
        ));
    }
    let off = report.mode(AttackMode::Offline).unwrap();
    ok &= report.modes.len() == 2;
    ok &= off.asr_user.mean > off.static_baseline.asr_user.mean;
    parts.push(format!("static user ASR {:.3}", off.static_baseline.asr_user.mean));
    verdict(ok, parts.join("; "))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9(a: &Path, b: &Path) -> Verdict {
    let (ta, tb) = (tree(a), tree(b));
    let frames = ta.keys().filter(|k| k.extension().is_some_and(|e| e == "pgm")).count();
    let report_same = ta.get(Path::new("report.json")) == tb.get(Path::new("report.json"));
    let differing = ta.keys().chain(tb.keys()).filter(|k| ta.get(*k) != tb.get(*k)).count();
    verdict(
        report_same && differing == 0 && frames > 0 && ta.contains_key(Path::new("report.json")),
        format!(
            "report identical: {report_same}; {} files compared ({frames} spoofed frames), {differing} differ",
            ta.len()
        ),
    )
}

fn criterion_10() -> Verdict {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    // attack success rate
    let wp = |predicted| WindowPrediction {
        subject: 1,
        label: Label::Spoof,
        index: 0,
        probability: 0.5,
        predicted,
    };
    let up = |predicted| UserPrediction {
        subject: 1,
        label: Label::Spoof,
        predicted,
    };
    let all_real = attack_success_rate(&[wp(Label::Real), wp(Label::Real)], &[up(Label::Real)]).unwrap();
    check("ASR all real", (all_real.window, all_real.user) == (1.0, 1.0));
    let all_spoof = attack_success_rate(&[wp(Label::Spoof), wp(Label::Spoof)], &[up(Label::Spoof)]).unwrap();
    check("ASR all spoof", (all_spoof.window, all_spoof.user) == (0.0, 0.0));

    // Dice
    let mask = |f: &dyn Fn(usize) -> bool| BinaryMask::new(20, 10, (0..200).map(f).collect()).unwrap();
    let a = mask(&|i| i < 100);
    check("Dice identical", dice_score(&a, &a).unwrap() == 1.0);
    check("Dice disjoint", dice_score(&a, &mask(&|i| i >= 100)).unwrap() == 0.0);
    check("Dice half", dice_score(&a, &mask(&|i| (50..150).contains(&i))).unwrap() == 0.5);

    // accuracy and precision
    let sched = TargetSchedule::challenge((10.0, 8.0), (5.0, 4.0), &[2.0; 9]).unwrap();
    let trace = |f: &dyn Fn(usize, f64, f64) -> (f64, f64)| {
        let samples = (0..(sched.span() * 30.0) as usize)
            .map(|i| {
                let t = sched.start() + i as f64 / 30.0;
                let tg = sched.targets().iter().find(|g| t >= g.onset && t < g.offset).unwrap();
                let (h, v) = f(i, tg.h, tg.v);
                GazeSample { t, h, v, confidence: 1.0 }
            })
            .collect();
        GazeTrace::new(samples).unwrap()
    };
    let on = trace(&|_, h, v| (h, v));
    check("accuracy on target", accuracy(&on, &sched).unwrap().abs() < 1e-12);
    let offset = trace(&|_, h, v| (h + 1.0, v));
    check("accuracy 1 deg offset", (accuracy(&offset, &sched).unwrap() - 1.0).abs() < 1e-12);
    check("precision constant", precision(&trace(&|_, _, _| (2.0, 1.0)), &sched).unwrap().abs() < 1e-12);
    let alt = trace(&|i, h, v| (h + (i % 2) as f64, v));
    check("precision alternating", (precision(&alt, &sched).unwrap() - 1.0).abs() < 1e-12);

    // window counts
    let sig = |n: usize| VelocitySignal::new((0..n).map(|i| i as f64).collect(), vec![0.0; n], vec![0.0; n]);
    check("windows n=7", make_windows(&sig(7), WINDOW_LEN, 3, Label::Real, 0).unwrap().len() == 1);
    check("windows n=16", make_windows(&sig(16), WINDOW_LEN, 3, Label::Real, 0).unwrap().len() == 4);
    check(
        "windows n=6",
        matches!(
            make_windows(&sig(6), WINDOW_LEN, 3, Label::Real, 0),
            Err(LivenessError::SignalTooShort { .. })
        ),
    );

    let detail = if failures.is_empty() {
        "ASR, Dice, accuracy, precision and window-count tables match".to_string()
    } else {
        format!("mismatched: {}", failures.join(", "))
    };
    verdict(failures.is_empty(), detail)
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report_line = |n: usize, name: &str, v: Verdict| {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} [{tag}] {name}: {}", v.detail);
        let _ = std::io::stdout().flush();
        failed += (!v.pass) as usize;
    };
    report_line(1, "BPTT correctness", criterion_1());
    report_line(2, "rubber-sheet round trip", criterion_2());
    report_line(3, "iris-code statistics", criterion_3());
    report_line(4, "segmentation quality", criterion_4());

    let tmp = tempfile::tempdir().unwrap();
    let (dir_a, dir_b) = (tmp.path().join("run-a"), tmp.path().join("run-b"));
    let t = Instant::now();
    let report = run_experiment(&full_config(&dir_a)).unwrap();
    let secs = t.elapsed().as_secs_f64();
    report_line(5, "end-to-end authentication spoof", criterion_5(&report, secs));
    report_line(6, "gaze degradation direction", criterion_6(&report));
    report_line(7, "liveness against static spoof", criterion_7(&report));
    report_line(8, "swap against liveness, ten splits", criterion_8(&report));
    run_experiment(&full_config(&dir_b)).unwrap();
    report_line(9, "determinism", criterion_9(&dir_a, &dir_b));
    report_line(10, "metric formula tables", criterion_10());

    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
