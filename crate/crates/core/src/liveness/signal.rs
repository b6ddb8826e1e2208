use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Label, LivenessError};
use crate::gaze::{GazeSample, GazeTrace};

pub const WINDOW_LEN: usize = 7;
pub const WINDOW_STEP: usize = 3;

/// Two-channel angular velocity, deg/s (or [0, 1] after normalisation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocitySignal {
    pub t: Vec<f64>,
    pub vh: Vec<f64>,
    pub vv: Vec<f64>,
}

impl VelocitySignal {
    pub fn new(t: Vec<f64>, vh: Vec<f64>, vv: Vec<f64>) -> Self {
        assert!(t.len() == vh.len() && t.len() == vv.len(), "channel lengths differ");
        Self { t, vh, vv }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Forward difference, stamped at the leading sample.
pub fn compute_velocity(trace: &GazeTrace) -> Result<VelocitySignal, LivenessError> {
    let s = trace.samples();
    if s.len() < 2 {
        return Err(LivenessError::TooFewSamples { needed: 2, got: s.len() });
    }
    let n = s.len() - 1;
    let (mut t, mut vh, mut vv) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (i, w) in s.windows(2).enumerate() {
        let dt = w[1].t - w[0].t;
        if !(dt > 0.0) {
            return Err(LivenessError::NonMonotonicTime { index: i + 1 });
        }
        t.push(w[0].t);
        vh.push((w[1].h - w[0].h) / dt);
        vv.push((w[1].v - w[0].v) / dt);
    }
    Ok(VelocitySignal { t, vh, vv })
}

fn repair_capped(t: &[f64], v: &[f64], cap: f64, channel: &'static str) -> Result<Vec<f64>, LivenessError> {
    let keep: Vec<usize> = (0..v.len()).filter(|&i| v[i].abs() <= cap).collect();
    if keep.is_empty() {
        return Err(LivenessError::AllSamplesCapped { channel });
    }
    let mut out = v.to_vec();
    let mut k = 0;
    for i in 0..v.len() {
        while k < keep.len() && keep[k] < i {
            k += 1;
        }
        if k < keep.len() && keep[k] == i {
            continue;
        }
        let prev = k.checked_sub(1).map(|j| keep[j]);
        let next = keep.get(k).copied();
        out[i] = match (prev, next) {
            (Some(a), Some(b)) => v[a] + (v[b] - v[a]) * (t[i] - t[a]) / (t[b] - t[a]),
            (Some(a), None) => v[a],
            (None, Some(b)) => v[b],
            (None, None) => unreachable!("keep is non-empty"),
        };
    }
    Ok(out)
}

fn resample(t: &[f64], v: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut j = 0;
    grid.iter()
        .map(|&g| {
            while j + 2 < t.len() && t[j + 1] <= g {
                j += 1;
            }
            if t.len() == 1 || g <= t[0] {
                return v[0];
            }
            let (a, b) = (j, j + 1);
            if g >= t[b] {
                return v[b];
            }
            v[a] + (v[b] - v[a]) * (g - t[a]) / (t[b] - t[a])
        })
        .collect()
}

/// Resamples gaze positions onto a uniform grid starting at the first
/// sample, by linear interpolation.
pub fn downsample_trace(trace: &GazeTrace, rate: f64) -> Result<GazeTrace, LivenessError> {
    let s = trace.samples();
    if s.len() < 2 {
        return Err(LivenessError::TooFewSamples { needed: 2, got: s.len() });
    }
    let t: Vec<f64> = s.iter().map(|x| x.t).collect();
    if let Some(i) = t.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(LivenessError::NonMonotonicTime { index: i + 1 });
    }
    let steps = ((t[t.len() - 1] - t[0]) * rate + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| t[0] + k as f64 / rate).collect();
    let channel = |f: fn(&GazeSample) -> f64| resample(&t, &s.iter().map(f).collect::<Vec<_>>(), &grid);
    let (h, v, c) = (channel(|x| x.h), channel(|x| x.v), channel(|x| x.confidence));
    let samples = (0..grid.len())
        .map(|k| GazeSample {
            t: grid[k],
            h: h[k],
            v: v[k],
            confidence: c[k],
        })
        .collect();
    Ok(GazeTrace::new(samples).expect("grid is increasing"))
}

fn min_max(v: &mut [f64]) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for x in v.iter_mut() {
        *x = if span > 0.0 { ((*x - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
}

/// Caps and interpolates outliers, resamples onto a uniform grid and
/// min-max normalises each channel over the whole signal.
pub fn preprocess(sig: &VelocitySignal, cap: f64, target_rate: f64) -> Result<VelocitySignal, LivenessError> {
    if sig.len() < 4 {
        return Err(LivenessError::TooFewSamples { needed: 4, got: sig.len() });
    }
    if let Some(i) = sig.t.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(LivenessError::NonMonotonicTime { index: i + 1 });
    }
    let vh = repair_capped(&sig.t, &sig.vh, cap, "horizontal")?;
    let vv = repair_capped(&sig.t, &sig.vv, cap, "vertical")?;
    let (t0, t1) = (sig.t[0], sig.t[sig.len() - 1]);
    let steps = ((t1 - t0) * target_rate + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| t0 + k as f64 / target_rate).collect();
    let mut rh = resample(&sig.t, &vh, &grid);
    let mut rv = resample(&sig.t, &vv, &grid);
    assert!(rh.iter().chain(&rv).all(|x| x.abs() <= cap), "capped signal exceeds {cap}");
    min_max(&mut rh);
    min_max(&mut rv);
    Ok(VelocitySignal { t: grid, vh: rh, vv: rv })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityWindow {
    pub subject: u32,
    pub label: Label,
    pub index: usize,
    /// `[timestep][channel]`, channel 0 horizontal.
    pub samples: [[f64; 2]; WINDOW_LEN],
}

impl VelocityWindow {
    pub fn mean(&self) -> f64 {
        self.samples.iter().flatten().sum::<f64>() / (2 * WINDOW_LEN) as f64
    }
}

pub fn make_windows(
    sig: &VelocitySignal,
    len: usize,
    step: usize,
    label: Label,
    subject: u32,
) -> Result<Vec<VelocityWindow>, LivenessError> {
    assert_eq!(len, WINDOW_LEN, "window length is fixed at {WINDOW_LEN}");
    assert!(step > 0, "window step must be positive");
    let n = sig.len();
    if n < len {
        return Err(LivenessError::SignalTooShort { got: n, len });
    }
    let count = (n - len) / step + 1;
    Ok((0..count)
        .map(|w| {
            let mut samples = [[0.0; 2]; WINDOW_LEN];
            for (k, s) in samples.iter_mut().enumerate() {
                *s = [sig.vh[w * step + k], sig.vv[w * step + k]];
            }
            VelocityWindow {
                subject,
                label,
                index: w,
                samples,
            }
        })
        .collect())
}

/// One row per window and channel: `subject,label,window_index,ch,s0..s6`.
pub fn windows_to_csv(windows: &[VelocityWindow]) -> String {
    let mut out = String::from("subject,label,window_index,ch,s0,s1,s2,s3,s4,s5,s6\n");
    for w in windows {
        for ch in 0..2 {
            write!(out, "{},{},{},{}", w.subject, w.label.as_str(), w.index, ch).unwrap();
            for s in &w.samples {
                write!(out, ",{:?}", s[ch]).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn windows_from_csv(text: &str) -> Result<Vec<VelocityWindow>, LivenessError> {
    let err = |line: usize, msg: &str| LivenessError::Csv { line, msg: msg.to_string() };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "subject,label,window_index,ch,s0,s1,s2,s3,s4,s5,s6" => {}
        _ => return Err(err(1, "missing header")),
    }
    let mut out: Vec<VelocityWindow> = Vec::new();
    for (no, line) in lines {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 4 + WINDOW_LEN {
            return Err(err(no + 1, "wrong field count"));
        }
        let subject: u32 = f[0].parse().map_err(|_| err(no + 1, "bad subject"))?;
        let label: Label = f[1].parse().map_err(|e: String| err(no + 1, &e))?;
        let index: usize = f[2].parse().map_err(|_| err(no + 1, "bad window index"))?;
        let ch: usize = f[3].parse().map_err(|_| err(no + 1, "bad channel"))?;
        let mut vals = [0.0; WINDOW_LEN];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = f[4 + k].parse().map_err(|_| err(no + 1, "bad sample"))?;
        }
        match ch {
            0 => {
                let mut samples = [[0.0; 2]; WINDOW_LEN];
                for k in 0..WINDOW_LEN {
                    samples[k][0] = vals[k];
                }
                out.push(VelocityWindow { subject, label, index, samples });
            }
            1 => {
                let w = out
                    .last_mut()
                    .filter(|w| w.subject == subject && w.label == label && w.index == index)
                    .ok_or_else(|| err(no + 1, "channel 1 without matching channel 0"))?;
                for k in 0..WINDOW_LEN {
                    w.samples[k][1] = vals[k];
                }
            }
            _ => return Err(err(no + 1, "channel must be 0 or 1")),
        }
    }
    Ok(out)
}
