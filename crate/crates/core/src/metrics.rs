//! Ranking and overlap metrics.

use crate::error::{Error, Result};

fn check_nonempty(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() {
        return Err(Error::MetricUndefined("no positive scores"));
    }
    if neg.is_empty() {
        return Err(Error::MetricUndefined("no negative scores"));
    }
    Ok(())
}

/// Mann-Whitney AUC with ties counted as one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_nonempty(pos, neg)?;
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &p in pos {
        let below = sorted.partition_point(|&n| n < p);
        let at_most = sorted.partition_point(|&n| n <= p);
        wins += below as f64 + 0.5 * (at_most - below) as f64;
    }
    Ok(wins / (pos.len() as f64 * neg.len() as f64))
}

/// Average precision. Items with equal scores enter together and the
/// precision is taken at the group boundary.
pub fn aupr(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_nonempty(pos, neg)?;
    let mut items: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp, mut sum) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < items.len() {
        let s = items[i].0;
        let mut gp = 0usize;
        while i < items.len() && items[i].0 == s {
            if items[i].1 {
                gp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        tp += gp;
        if gp > 0 {
            sum += gp as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(sum / pos.len() as f64)
}

fn check_shapes(pred: &[bool], gt: &[bool]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("prediction has {} cells, ground truth {}", pred.len(), gt.len())));
    }
    Ok(())
}

/// `(dice, iou)`; the ground truth needs at least one positive cell.
pub fn dice_iou(pred: &[bool], gt: &[bool]) -> Result<(f64, f64)> {
    check_shapes(pred, gt)?;
    let g = gt.iter().filter(|x| **x).count();
    if g == 0 {
        return Err(Error::UndefinedMask);
    }
    let p = pred.iter().filter(|x| **x).count();
    let inter = pred.iter().zip(gt).filter(|(a, b)| **a && **b).count();
    let union = p + g - inter;
    Ok((2.0 * inter as f64 / (p + g) as f64, inter as f64 / union as f64))
}

/// Fraction of cells predicted negative, for slides without positives.
pub fn tnr(pred: &[bool]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::MetricUndefined("empty mask"));
    }
    Ok(pred.iter().filter(|x| !**x).count() as f64 / pred.len() as f64)
}
