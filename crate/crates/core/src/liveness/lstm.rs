use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ddfloat::{DoubleDouble, Real};
use super::{LivenessError, VelocityWindow};

pub const INPUT_SIZE: usize = 2;

/// Single-layer LSTM with a logistic readout on the last hidden state.
///
/// Parameters live in one flat vector laid out as
/// `w_in (4H x 2) | w_rec (4H x H) | bias (4H) | w_out (H) | b_out`,
/// gate blocks ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    hidden: usize,
    params: Vec<f64>,
}

struct Layout {
    w_in: usize,
    w_rec: usize,
    bias: usize,
    w_out: usize,
    b_out: usize,
    len: usize,
}

fn layout(h: usize) -> Layout {
    let w_in = 0;
    let w_rec = w_in + 4 * h * INPUT_SIZE;
    let bias = w_rec + 4 * h * h;
    let w_out = bias + 4 * h;
    let b_out = w_out + h;
    Layout {
        w_in,
        w_rec,
        bias,
        w_out,
        b_out,
        len: b_out + 1,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct Trace {
    // per step, 4H activated gates and the resulting cell/hidden state
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
    logit: f64,
}

impl LstmModel {
    pub fn zeros(hidden: usize) -> Self {
        assert!(hidden > 0, "hidden size must be positive");
        Self {
            hidden,
            params: vec![0.0; layout(hidden).len],
        }
    }

    /// Uniform ±1/sqrt(H) weights, forget-gate bias +1.
    pub fn init(hidden: usize, seed: u64) -> Self {
        let mut m = Self::zeros(hidden);
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in m.params.iter_mut() {
            *p = rng.random_range(-bound..bound);
        }
        let l = layout(hidden);
        for k in 0..hidden {
            m.params[l.bias + hidden + k] = 1.0;
        }
        m
    }

    pub fn from_params(hidden: usize, params: Vec<f64>) -> Result<Self, LivenessError> {
        let want = layout(hidden).len;
        if hidden == 0 || params.len() != want {
            return Err(LivenessError::MalformedModel(format!(
                "hidden {hidden} needs {want} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(LivenessError::MalformedModel("non-finite parameter".into()));
        }
        Ok(Self { hidden, params })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Index range of the forget-gate parameters (input weights,
    /// recurrent weights and bias).
    pub fn forget_gate_indices(&self) -> Vec<usize> {
        let h = self.hidden;
        let l = layout(h);
        let mut idx = Vec::new();
        idx.extend(l.w_in + h * INPUT_SIZE..l.w_in + 2 * h * INPUT_SIZE);
        idx.extend(l.w_rec + h * h..l.w_rec + 2 * h * h);
        idx.extend(l.bias + h..l.bias + 2 * h);
        idx
    }

    fn run(&self, window: &VelocityWindow) -> Trace {
        self.run_steps(&window.samples)
    }

    fn run_steps(&self, xs: &[[f64; INPUT_SIZE]]) -> Trace {
        let h = self.hidden;
        let l = layout(h);
        let p = &self.params;
        let steps = xs.len();
        let mut gates = Vec::with_capacity(steps);
        let mut cells = Vec::with_capacity(steps);
        let mut hiddens = Vec::with_capacity(steps);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for x in xs {
            let mut z = vec![0.0; 4 * h];
            for (r, zr) in z.iter_mut().enumerate() {
                let wi = &p[l.w_in + r * INPUT_SIZE..l.w_in + (r + 1) * INPUT_SIZE];
                let wr = &p[l.w_rec + r * h..l.w_rec + (r + 1) * h];
                let mut acc = p[l.bias + r] + wi[0] * x[0] + wi[1] * x[1];
                for k in 0..h {
                    acc += wr[k] * h_prev[k];
                }
                *zr = acc;
            }
            for r in 0..4 * h {
                z[r] = if (2 * h..3 * h).contains(&r) { z[r].tanh() } else { sigmoid(z[r]) };
            }
            let mut c = vec![0.0; h];
            let mut hn = vec![0.0; h];
            for k in 0..h {
                c[k] = z[h + k] * c_prev[k] + z[k] * z[2 * h + k];
                hn[k] = z[3 * h + k] * c[k].tanh();
            }
            gates.push(z);
            cells.push(c.clone());
            hiddens.push(hn.clone());
            h_prev = hn;
            c_prev = c;
        }
        let mut logit = p[l.b_out];
        for k in 0..h {
            logit += p[l.w_out + k] * h_prev[k];
        }
        Trace {
            gates,
            cells,
            hiddens,
            logit,
        }
    }

    /// Mean loss with every operation carried out in `T`.
    fn loss_in<T: Real>(&self, params: &[T], batch: &[VelocityWindow]) -> T {
        let h = self.hidden;
        let l = layout(h);
        let mut total = T::from_f64(0.0);
        for w in batch {
            let mut hs = vec![T::from_f64(0.0); h];
            let mut cs = vec![T::from_f64(0.0); h];
            for x in &w.samples {
                let (x0, x1) = (T::from_f64(x[0]), T::from_f64(x[1]));
                let z: Vec<T> = (0..4 * h)
                    .map(|r| {
                        let mut acc = params[l.bias + r]
                            + params[l.w_in + r * INPUT_SIZE] * x0
                            + params[l.w_in + r * INPUT_SIZE + 1] * x1;
                        for k in 0..h {
                            acc = acc + params[l.w_rec + r * h + k] * hs[k];
                        }
                        acc
                    })
                    .collect();
                for k in 0..h {
                    let (i, f, g, o) = (z[k].sigmoid(), z[h + k].sigmoid(), z[2 * h + k].tanh(), z[3 * h + k].sigmoid());
                    cs[k] = f * cs[k] + i * g;
                    hs[k] = o * cs[k].tanh();
                }
            }
            let mut logit = params[l.b_out];
            for k in 0..h {
                logit = logit + params[l.w_out + k] * hs[k];
            }
            let y = w.label.target();
            total = total + T::from_f64(y) * (-logit).softplus() + T::from_f64(1.0 - y) * logit.softplus();
        }
        total / T::from_f64(batch.len().max(1) as f64)
    }

    fn check_input(window: &VelocityWindow) -> Result<(), LivenessError> {
        if window.samples.iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(LivenessError::NonFiniteInput)
        }
    }

    pub fn logit(&self, window: &VelocityWindow) -> Result<f64, LivenessError> {
        Self::check_input(window)?;
        Ok(self.run(window).logit)
    }

    /// Probability that the window is a spoof.
    pub fn forward(&self, window: &VelocityWindow) -> Result<f64, LivenessError> {
        self.logit(window).map(sigmoid)
    }

    /// Mean binary cross-entropy over the batch.
    pub fn loss(&self, batch: &[VelocityWindow]) -> Result<f64, LivenessError> {
        let mut total = 0.0;
        for w in batch {
            let z = self.logit(w)?;
            let y = w.label.target();
            total += y * softplus(-z) + (1.0 - y) * softplus(z);
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Mean loss and its gradient by backpropagation through time.
    pub fn loss_and_gradient(&self, batch: &[VelocityWindow]) -> Result<(f64, Vec<f64>), LivenessError> {
        let h = self.hidden;
        let l = layout(h);
        let p = &self.params;
        let mut grad = vec![0.0; p.len()];
        let mut total = 0.0;
        for w in batch {
            Self::check_input(w)?;
            let tr = self.run(w);
            let y = w.label.target();
            total += y * softplus(-tr.logit) + (1.0 - y) * softplus(tr.logit);
            let dlogit = sigmoid(tr.logit) - y;

            let steps = tr.hiddens.len();
            let last = &tr.hiddens[steps - 1];
            grad[l.b_out] += dlogit;
            let mut dh = vec![0.0; h];
            for k in 0..h {
                grad[l.w_out + k] += dlogit * last[k];
                dh[k] = dlogit * p[l.w_out + k];
            }
            let mut dc = vec![0.0; h];
            let mut dz = vec![0.0; 4 * h];
            let zeros = vec![0.0; h];
            for t in (0..steps).rev() {
                let g = &tr.gates[t];
                let c = &tr.cells[t];
                let c_prev = if t > 0 { &tr.cells[t - 1] } else { &zeros };
                let h_prev = if t > 0 { &tr.hiddens[t - 1] } else { &zeros };
                for k in 0..h {
                    let (ig, fg, cg, og) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                    let tc = c[k].tanh();
                    dc[k] += dh[k] * og * (1.0 - tc * tc);
                    dz[k] = dc[k] * cg * ig * (1.0 - ig);
                    dz[h + k] = dc[k] * c_prev[k] * fg * (1.0 - fg);
                    dz[2 * h + k] = dc[k] * ig * (1.0 - cg * cg);
                    dz[3 * h + k] = dh[k] * tc * og * (1.0 - og);
                    dc[k] *= fg;
                }
                let x = &w.samples[t];
                let mut dh_prev = vec![0.0; h];
                for r in 0..4 * h {
                    let d = dz[r];
                    grad[l.bias + r] += d;
                    grad[l.w_in + r * INPUT_SIZE] += d * x[0];
                    grad[l.w_in + r * INPUT_SIZE + 1] += d * x[1];
                    let row = l.w_rec + r * h;
                    for k in 0..h {
                        grad[row + k] += d * h_prev[k];
                        dh_prev[k] += d * p[row + k];
                    }
                }
                dh = dh_prev;
            }
        }
        let n = batch.len().max(1) as f64;
        for g in grad.iter_mut() {
            *g /= n;
        }
        Ok((total / n, grad))
    }

    /// Plain-text dump: a header line, then one `key value...` line per
    /// parameter block. Floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let h = self.hidden;
        let l = layout(h);
        let mut out = format!("lstm-model 1\ninput {INPUT_SIZE}\nhidden {h}\n");
        for (name, lo, hi) in [
            ("w_in", l.w_in, l.w_rec),
            ("w_rec", l.w_rec, l.bias),
            ("bias", l.bias, l.w_out),
            ("w_out", l.w_out, l.b_out),
            ("b_out", l.b_out, l.len),
        ] {
            out.push_str(name);
            for v in &self.params[lo..hi] {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LivenessError> {
        let bad = |m: &str| LivenessError::MalformedModel(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("lstm-model 1") {
            return Err(bad("missing header"));
        }
        let mut field = |key: &str| -> Result<Vec<String>, LivenessError> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {key}")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(&format!("expected {key}")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let input = field("input")?;
        if input != [INPUT_SIZE.to_string()] {
            return Err(bad("input size must be 2"));
        }
        let hidden: usize = field("hidden")?
            .first()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad hidden size"))?;
        let mut params = Vec::new();
        for key in ["w_in", "w_rec", "bias", "w_out", "b_out"] {
            for v in field(key)? {
                params.push(v.parse::<f64>().map_err(|_| bad(&format!("bad number in {key}")))?);
            }
        }
        Self::from_params(hidden, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LivenessError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LivenessError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Largest relative disagreement between the analytic gradient and
/// central finite differences of the loss.
pub fn gradient_check(model: &LstmModel, batch: &[VelocityWindow], epsilon: f64) -> Result<f64, LivenessError> {
    gradient_check_with(model, batch, epsilon, |m, b| m.loss_and_gradient(b).map(|(_, g)| g))
}

/// Like [`gradient_check`] with a caller-supplied analytic gradient.
pub fn gradient_check_with<F>(
    model: &LstmModel,
    batch: &[VelocityWindow],
    epsilon: f64,
    analytic: F,
) -> Result<f64, LivenessError>
where
    F: Fn(&LstmModel, &[VelocityWindow]) -> Result<Vec<f64>, LivenessError>,
{
    let ga = analytic(model, batch)?;
    for w in batch {
        LstmModel::check_input(w)?;
    }
    // f64 differences carry an absolute rounding error near 1e-11 times
    // the loss; components too small for that are redone in double-double
    let loss = model.loss_in(&model.params, batch);
    let floor = 1e-3 * loss.abs().max(1.0);
    let mut probe = model.params.clone();
    let mut probe_dd: Vec<DoubleDouble> = model.params.iter().map(|&p| DoubleDouble::new(p)).collect();
    let eps = DoubleDouble::new(epsilon);
    let mut worst = 0.0f64;
    for i in 0..model.param_count() {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let up = model.loss_in(&probe, batch);
        probe[i] = orig - epsilon;
        let down = model.loss_in(&probe, batch);
        probe[i] = orig;
        let mut gn = (up - down) / ((orig + epsilon) - (orig - epsilon));
        if gn.abs() < floor {
            let orig = probe_dd[i];
            probe_dd[i] = orig + eps;
            let up = model.loss_in(&probe_dd, batch);
            probe_dd[i] = orig - eps;
            let down = model.loss_in(&probe_dd, batch);
            probe_dd[i] = orig;
            gn = ((up - down) / (eps + eps)).to_f64();
        }
        let err = (ga[i] - gn).abs() / ga[i].abs().max(gn.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liveness::{Label, WINDOW_LEN};

    fn window(seed: u64, label: Label) -> VelocityWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = [[0.0; 2]; WINDOW_LEN];
        for s in samples.iter_mut() {
            *s = [rng.random(), rng.random()];
        }
        VelocityWindow { subject: 0, label, index: 0, samples }
    }

    fn batch(seed: u64, n: usize) -> Vec<VelocityWindow> {
        (0..n)
            .map(|i| window(seed * 100 + i as u64, if i % 2 == 0 { Label::Real } else { Label::Spoof }))
            .collect()
    }

    #[test]
    fn zero_model_is_half() {
        let m = LstmModel::zeros(8);
        for s in 0..5 {
            assert_eq!(m.forward(&window(s, Label::Real)).unwrap(), 0.5);
        }
    }

    #[test]
    fn forward_is_pure() {
        let m = LstmModel::init(16, 3);
        let w = window(9, Label::Spoof);
        assert_eq!(m.forward(&w).unwrap().to_bits(), m.forward(&w).unwrap().to_bits());
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let m = LstmModel::init(4, 1);
        let l = layout(4);
        assert!(m.params[l.bias + 4..l.bias + 8].iter().all(|&b| b == 1.0));
        let bound = 0.5;
        assert!(m.params[..l.bias].iter().all(|p| p.abs() <= bound));
    }

    #[test]
    fn single_unit_matches_hand_recurrence() {
        // w_in rows (i, f, g, o), w_rec, bias, w_out, b_out
        let wi = [[0.3, -0.2], [0.1, 0.4], [-0.5, 0.25], [0.2, 0.2]];
        let wr = [0.7, -0.3, 0.45, 0.1];
        let b = [0.05, 1.0, -0.1, 0.2];
        let (wo, bo) = (1.3, -0.4);
        let mut params = Vec::new();
        for r in wi {
            params.extend(r);
        }
        params.extend(wr);
        params.extend(b);
        params.extend([wo, bo]);
        let m = LstmModel::from_params(1, params).unwrap();

        let xs = [[0.2, 0.9], [0.6, 0.1]];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        for x in xs {
            let pre = |g: usize| wi[g][0] * x[0] + wi[g][1] * x[1] + wr[g] * h + b[g];
            let (i, f, g, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
            c = f * c + i * g;
            h = o * c.tanh();
        }
        let expected = sig(wo * h + bo);
        let got = sigmoid(m.run_steps(&xs).logit);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (k, h) in [2usize, 4, 16].into_iter().enumerate() {
            let m = LstmModel::init(h, 40 + k as u64);
            let err = gradient_check(&m, &batch(k as u64, 4), 1e-5).unwrap();
            assert!(err < 1e-4, "H={h}: {err}");
        }
    }

    #[test]
    fn corrupted_forget_gradient_is_caught() {
        let m = LstmModel::init(4, 7);
        let forget = m.forget_gate_indices();
        let err = gradient_check_with(&m, &batch(2, 4), 1e-5, |m, b| {
            let (_, mut g) = m.loss_and_gradient(b)?;
            for &i in &forget {
                g[i] *= 2.0;
            }
            Ok(g)
        })
        .unwrap();
        assert!(err > 0.1, "{err}");
    }

    #[test]
    fn zero_model_gradient_check_is_finite() {
        let err = gradient_check(&LstmModel::zeros(4), &batch(5, 4), 1e-5).unwrap();
        assert!(err.is_finite(), "{err}");
    }

    #[test]
    fn precise_loss_agrees_with_f64_loss() {
        let m = LstmModel::init(6, 2);
        let b = batch(3, 5);
        let dd: Vec<DoubleDouble> = m.params.iter().map(|&p| DoubleDouble::new(p)).collect();
        let precise = m.loss_in(&dd, &b).to_f64();
        assert!((precise - m.loss(&b).unwrap()).abs() < 1e-14);
        assert_eq!(m.loss_in(&m.params, &b), m.loss(&b).unwrap());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = LstmModel::init(5, 11);
        let back = LstmModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(LstmModel::from_text("lstm-model 1\ninput 2\nhidden 3\nw_in 1 2\n").is_err());
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut w = window(1, Label::Real);
        w.samples[3][1] = f64::NAN;
        assert!(matches!(LstmModel::init(2, 0).forward(&w), Err(LivenessError::NonFiniteInput)));
    }
}
