use serde::{Deserialize, Serialize};

use super::{DialogState, DstError};

fn check_lengths(predicted: &[DialogState], gold: &[DialogState]) -> Result<(), DstError> {
    if predicted.len() != gold.len() {
        return Err(DstError::LengthMismatch {
            predicted: predicted.len(),
            gold: gold.len(),
        });
    }
    Ok(())
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

/// Fraction of turns whose whole goal map equals gold. An empty list scores 1.
pub fn joint_goal_accuracy(predicted: &[DialogState], gold: &[DialogState]) -> Result<f64, DstError> {
    check_lengths(predicted, gold)?;
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p.goals == g.goals).count();
    Ok(fraction(hits, gold.len()))
}

/// Fraction of turns whose request set equals gold. An empty list scores 1.
pub fn turn_request_accuracy(predicted: &[DialogState], gold: &[DialogState]) -> Result<f64, DstError> {
    check_lengths(predicted, gold)?;
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p.requests == g.requests).count();
    Ok(fraction(hits, gold.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogScore {
    pub dialog_id: String,
    pub turns: usize,
    pub joint_goal: f64,
    pub turn_request: f64,
}

/// Corpus-level metrics (pooled over all turns) with a per-dialog breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub joint_goal: f64,
    pub turn_request: f64,
    pub turns: usize,
    pub dialogs: Vec<DialogScore>,
}

/// Scores `(dialog id, predicted states, gold states)` triples.
pub fn evaluate_dialogs<'a, I>(items: I) -> Result<MetricsReport, DstError>
where
    I: IntoIterator<Item = (&'a str, &'a [DialogState], &'a [DialogState])>,
{
    let mut all_pred = Vec::new();
    let mut all_gold = Vec::new();
    let mut dialogs = Vec::new();
    for (id, predicted, gold) in items {
        dialogs.push(DialogScore {
            dialog_id: id.to_string(),
            turns: gold.len(),
            joint_goal: joint_goal_accuracy(predicted, gold)?,
            turn_request: turn_request_accuracy(predicted, gold)?,
        });
        all_pred.extend_from_slice(predicted);
        all_gold.extend_from_slice(gold);
    }
    Ok(MetricsReport {
        joint_goal: joint_goal_accuracy(&all_pred, &all_gold)?,
        turn_request: turn_request_accuracy(&all_pred, &all_gold)?,
        turns: all_gold.len(),
        dialogs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn goals(food: &str) -> DialogState {
        let mut s = DialogState::default();
        s.goals.insert("food".into(), food.into());
        s
    }

    fn requests(r: &[&str]) -> DialogState {
        DialogState {
            requests: r.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn joint_goal_examples() {
        let gold = vec![goals("a"), goals("b"), goals("c"), goals("d")];
        assert_eq!(joint_goal_accuracy(&gold, &gold).unwrap(), 1.0);
        let pred = vec![goals("a"), goals("b"), goals("x"), goals("d")];
        assert_eq!(joint_goal_accuracy(&pred, &gold).unwrap(), 0.75);
        assert_eq!(joint_goal_accuracy(&[], &[]).unwrap(), 1.0);
        assert!(matches!(
            joint_goal_accuracy(&pred[..1], &gold),
            Err(DstError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn request_examples() {
        let empty = vec![DialogState::default(); 5];
        assert_eq!(turn_request_accuracy(&empty, &empty).unwrap(), 1.0);
        assert_eq!(
            turn_request_accuracy(&[requests(&["phone"])], &[requests(&["phone", "address"])]).unwrap(),
            0.0
        );
        let gold: Vec<DialogState> = (0..10).map(|_| requests(&["phone"])).collect();
        let mut pred = gold.clone();
        pred[4] = requests(&[]);
        assert_eq!(turn_request_accuracy(&pred, &gold).unwrap(), 0.9);
    }

    #[test]
    fn report_pools_turns() {
        let g1 = vec![goals("a"), goals("b")];
        let p1 = vec![goals("a"), goals("x")];
        let g2 = vec![goals("c")];
        let report = evaluate_dialogs([("d1", &p1[..], &g1[..]), ("d2", &g2[..], &g2[..])]).unwrap();
        assert!((report.joint_goal - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.dialogs[0].joint_goal, 0.5);
        assert_eq!(report.turns, 3);
    }
}
