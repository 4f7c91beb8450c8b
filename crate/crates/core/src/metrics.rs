//! Segmentation metrics: pixel accuracy, mean IoU, and foreground Dice.

use crate::error::{Error, Result};
use crate::tensor::LabelMask;

/// Metric values for one prediction/truth pair.
///
/// `miou` averages IoU over the classes present in either mask; `dice` is
/// the overlap coefficient of foreground class 1, with the both-empty
/// case scored as a perfect 1.0 (the masks agree everywhere).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub pa: f64,
    pub miou: f64,
    pub dice: f64,
    pub per_class_iou: Vec<(usize, f64)>,
}

pub fn evaluate(pred: &LabelMask, truth: &LabelMask, num_classes: usize) -> Result<MetricsReport> {
    if pred.h != truth.h || pred.w != truth.w {
        return Err(Error::shape(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.h, pred.w, truth.h, truth.w
        )));
    }
    if num_classes < 2 {
        return Err(Error::contract(
            "metrics need at least two classes".to_string(),
        ));
    }
    for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
        if p as usize >= num_classes || t as usize >= num_classes {
            return Err(Error::contract(format!(
                "label out of range: pred {p} / truth {t} with {num_classes} classes"
            )));
        }
    }
    // Confusion matrix indexed [truth][pred].
    let mut confusion = vec![0u64; num_classes * num_classes];
    for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
        confusion[t as usize * num_classes + p as usize] += 1;
    }
    let total = pred.labels.len() as u64;
    let correct: u64 = (0..num_classes)
        .map(|c| confusion[c * num_classes + c])
        .sum();
    let mut per_class_iou = Vec::new();
    let mut iou_sum = 0f64;
    for c in 0..num_classes {
        let tp = confusion[c * num_classes + c];
        let fn_: u64 = (0..num_classes)
            .filter(|&p| p != c)
            .map(|p| confusion[c * num_classes + p])
            .sum();
        let fp: u64 = (0..num_classes)
            .filter(|&t| t != c)
            .map(|t| confusion[t * num_classes + c])
            .sum();
        let denom = tp + fp + fn_;
        if denom > 0 {
            let iou = tp as f64 / denom as f64;
            per_class_iou.push((c, iou));
            iou_sum += iou;
        }
    }
    let miou = if per_class_iou.is_empty() {
        1.0
    } else {
        iou_sum / per_class_iou.len() as f64
    };
    let fg = 1usize;
    let tp = confusion[fg * num_classes + fg];
    let fn_: u64 = (0..num_classes)
        .filter(|&p| p != fg)
        .map(|p| confusion[fg * num_classes + p])
        .sum();
    let fp: u64 = (0..num_classes)
        .filter(|&t| t != fg)
        .map(|t| confusion[t * num_classes + fg])
        .sum();
    let dice_denom = 2 * tp + fp + fn_;
    let dice = if dice_denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / dice_denom as f64
    };
    Ok(MetricsReport {
        pa: correct as f64 / total as f64,
        miou,
        dice,
        per_class_iou,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, labels: Vec<u8>) -> LabelMask {
        LabelMask::new(h, w, labels).unwrap()
    }

    #[test]
    fn identical_masks_are_perfect() {
        let m = mask(2, 2, vec![0, 1, 1, 0]);
        let r = evaluate(&m, &m, 2).unwrap();
        assert_eq!((r.pa, r.miou, r.dice), (1.0, 1.0, 1.0));
    }

    #[test]
    fn disjoint_equal_foregrounds_have_zero_dice() {
        let a = mask(1, 4, vec![1, 1, 0, 0]);
        let b = mask(1, 4, vec![0, 0, 1, 1]);
        let r = evaluate(&a, &b, 2).unwrap();
        assert_eq!(r.dice, 0.0);
        assert_eq!(r.pa, 0.0);
    }

    #[test]
    fn both_empty_foreground_scores_one() {
        let a = mask(1, 3, vec![0, 0, 0]);
        let r = evaluate(&a, &a, 2).unwrap();
        assert_eq!(r.dice, 1.0);
        // Only the background class is present.
        assert_eq!(r.per_class_iou, vec![(0, 1.0)]);
        assert_eq!(r.miou, 1.0);
    }

    #[test]
    fn dim_mismatch_is_a_shape_error() {
        let a = mask(1, 3, vec![0, 0, 0]);
        let b = mask(1, 2, vec![0, 0]);
        assert!(matches!(evaluate(&a, &b, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn dice_iou_identity_for_binary_masks() {
        let a = mask(2, 3, vec![0, 1, 1, 0, 0, 1]);
        let b = mask(2, 3, vec![1, 1, 0, 0, 1, 1]);
        let r = evaluate(&a, &b, 2).unwrap();
        let iou_fg = r
            .per_class_iou
            .iter()
            .find(|(c, _)| *c == 1)
            .map(|(_, v)| *v)
            .unwrap();
        assert!((r.dice - 2.0 * iou_fg / (1.0 + iou_fg)).abs() < 1e-12);
    }
}
