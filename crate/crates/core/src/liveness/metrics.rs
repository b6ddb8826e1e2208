use serde::{Deserialize, Serialize};

use super::{Label, LivenessError, LstmModel, VelocityWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub subject: u32,
    pub label: Label,
    pub index: usize,
    pub probability: f64,
    pub predicted: Label,
}

/// Majority verdict over one subject's windows of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPrediction {
    pub subject: u32,
    pub label: Label,
    pub predicted: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSuccess {
    pub window: f64,
    pub user: f64,
}

pub fn predict_windows(
    model: &LstmModel,
    windows: &[VelocityWindow],
    threshold: f64,
) -> Result<Vec<WindowPrediction>, LivenessError> {
    windows
        .iter()
        .map(|w| {
            let probability = model.forward(w)?;
            Ok(WindowPrediction {
                subject: w.subject,
                label: w.label,
                index: w.index,
                probability,
                predicted: Label::from_probability(probability, threshold),
            })
        })
        .collect()
}

/// Majority vote of per-window decisions; a tie counts as spoof.
pub fn majority_vote(labels: &[Label]) -> Result<Label, LivenessError> {
    if labels.is_empty() {
        return Err(LivenessError::NoWindows);
    }
    let real = labels.iter().filter(|&&l| l == Label::Real).count();
    Ok(if 2 * real > labels.len() { Label::Real } else { Label::Spoof })
}

/// Classifies one subject's windows and returns the majority label.
pub fn predict_user(model: &LstmModel, windows: &[VelocityWindow], threshold: f64) -> Result<Label, LivenessError> {
    let labels: Vec<Label> = predict_windows(model, windows, threshold)?
        .into_iter()
        .map(|p| p.predicted)
        .collect();
    majority_vote(&labels)
}

/// Fractions of spoofed windows and spoofed users that were accepted as
/// real.
pub fn attack_success_rate(
    windows: &[WindowPrediction],
    users: &[UserPrediction],
) -> Result<AttackSuccess, LivenessError> {
    let frac = |total: usize, fooled: usize| fooled as f64 / total as f64;
    let spoof_w: Vec<_> = windows.iter().filter(|w| w.label == Label::Spoof).collect();
    let spoof_u: Vec<_> = users.iter().filter(|u| u.label == Label::Spoof).collect();
    if spoof_w.is_empty() || spoof_u.is_empty() {
        return Err(LivenessError::NoSpoofedSamples);
    }
    Ok(AttackSuccess {
        window: frac(spoof_w.len(), spoof_w.iter().filter(|w| w.predicted == Label::Real).count()),
        user: frac(spoof_u.len(), spoof_u.iter().filter(|u| u.predicted == Label::Real).count()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Real, Spoof};

    fn wp(label: Label, predicted: Label) -> WindowPrediction {
        WindowPrediction {
            subject: 1,
            label,
            index: 0,
            probability: if predicted == Spoof { 0.9 } else { 0.1 },
            predicted,
        }
    }

    fn up(label: Label, predicted: Label) -> UserPrediction {
        UserPrediction { subject: 1, label, predicted }
    }

    #[test]
    fn majority_vote_breaks_ties_toward_spoof() {
        assert_eq!(majority_vote(&[Real, Real, Spoof]).unwrap(), Real);
        assert_eq!(majority_vote(&[Real, Spoof]).unwrap(), Spoof);
        assert_eq!(majority_vote(&[Real]).unwrap(), Real);
        assert_eq!(majority_vote(&[Spoof]).unwrap(), Spoof);
        assert!(matches!(majority_vote(&[]), Err(LivenessError::NoWindows)));
        assert!(matches!(predict_user(&LstmModel::zeros(2), &[], 0.5), Err(LivenessError::NoWindows)));
    }

    #[test]
    fn asr_extremes() {
        let all_real = attack_success_rate(&[wp(Spoof, Real), wp(Spoof, Real), wp(Real, Real)], &[up(Spoof, Real)]).unwrap();
        assert_eq!(all_real, AttackSuccess { window: 1.0, user: 1.0 });
        let all_spoof = attack_success_rate(&[wp(Spoof, Spoof), wp(Real, Spoof)], &[up(Spoof, Spoof)]).unwrap();
        assert_eq!(all_spoof, AttackSuccess { window: 0.0, user: 0.0 });
        let mixed = attack_success_rate(
            &[wp(Spoof, Real), wp(Spoof, Spoof), wp(Spoof, Spoof), wp(Spoof, Real)],
            &[up(Spoof, Real), up(Spoof, Spoof), up(Real, Real)],
        )
        .unwrap();
        assert_eq!(mixed, AttackSuccess { window: 0.5, user: 0.5 });
        assert!(matches!(
            attack_success_rate(&[wp(Real, Real)], &[up(Real, Real)]),
            Err(LivenessError::NoSpoofedSamples)
        ));
    }
}
