use serde::Serialize;

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub n_examples: usize,
    pub n_parse_failures: usize,
}

/// Macro-averaged F1 over every declared class.
///
/// A class with no true positives scores 0, including classes that never
/// occur. A prediction of `-1` (unparseable answer) is a miss for the gold
/// class and a false positive for none.
pub fn macro_f1(preds: &[i64], golds: &[i64], num_classes: usize) -> Result<ClassificationReport, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if num_classes == 0 {
        return Err(EvalError::InvalidLabel { label: 0, num_classes });
    }
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fn_ = vec![0u64; num_classes];
    let mut failures = 0;
    for (&p, &g) in preds.iter().zip(golds) {
        if g < 0 || g as usize >= num_classes {
            return Err(EvalError::InvalidLabel { label: g, num_classes });
        }
        if p == -1 {
            failures += 1;
            fn_[g as usize] += 1;
            continue;
        }
        if p < 0 || p as usize >= num_classes {
            return Err(EvalError::InvalidLabel { label: p, num_classes });
        }
        if p == g {
            tp[g as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[g as usize] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 {
                0.0
            } else {
                (2 * tp[c]) as f64 / denom as f64
            }
        })
        .collect();
    let macro_f1 = per_class_f1.iter().sum::<f64>() / num_classes as f64;
    Ok(ClassificationReport {
        macro_f1,
        per_class_f1,
        n_examples: golds.len(),
        n_parse_failures: failures,
    })
}
