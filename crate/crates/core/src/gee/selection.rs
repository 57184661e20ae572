use serde::{Deserialize, Serialize};

use super::{fit_gee_logistic, term_order, Design, GeeError, GeeSettings, ModelFit, INTERCEPT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionSettings {
    pub alpha: f64,
    /// Keep the intercept out of the drop candidates.
    pub protect_intercept: bool,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings { alpha: 0.05, protect_intercept: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropStep {
    pub term: String,
    pub p_value: f64,
    pub qicc_before: f64,
    pub qicc_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chosen {
    SubModel,
    NullModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub steps: Vec<DropStep>,
    pub final_terms: Vec<String>,
    pub submodel_qicc: Option<f64>,
    pub null_qicc: Option<f64>,
    pub chosen: Chosen,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub fit: ModelFit,
    pub trace: SelectionTrace,
}

/// Drop candidates, least significant first. Ties go to higher-order
/// interactions, then to the lexicographically smaller name.
fn drop_candidates(fit: &ModelFit, settings: &SelectionSettings) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = fit
        .terms
        .iter()
        .zip(&fit.p_values)
        .filter(|(t, _)| !(settings.protect_intercept && t.as_str() == INTERCEPT))
        .map(|(t, &p)| (t.clone(), if p.is_nan() { 1.0 } else { p }))
        .filter(|(_, p)| *p > settings.alpha)
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| term_order(&b.0).cmp(&term_order(&a.0))).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Backward elimination by QICC starting from `full_terms`, followed by a
/// comparison against the intercept-only model (ties go to the null model).
///
/// Each pass walks the insignificant terms from least significant down and
/// keeps the first removal that lowers QICC; the loop stops when no
/// insignificant term remains or none of the removals helps.
pub fn backward_eliminate(
    design: &Design,
    full_terms: &[String],
    gee: &GeeSettings,
    settings: &SelectionSettings,
) -> Result<Selection, GeeError> {
    let crit = |f: &ModelFit| f.criterion(gee.criterion);
    let null_terms = vec![INTERCEPT.to_string()];
    let null_fit = fit_gee_logistic(design, &null_terms, gee);
    let mut notes = Vec::new();

    let mut current = match fit_gee_logistic(design, full_terms, gee) {
        Ok(f) => f,
        Err(e) => {
            notes.push(format!("full model failed: {e}"));
            let fit = null_fit?;
            let q = crit(&fit);
            return Ok(Selection {
                trace: SelectionTrace {
                    steps: Vec::new(),
                    final_terms: fit.terms.clone(),
                    submodel_qicc: None,
                    null_qicc: Some(q),
                    chosen: Chosen::NullModel,
                    notes,
                },
                fit,
            });
        }
    };

    let mut steps = Vec::new();
    'outer: loop {
        let before = crit(&current);
        for (term, p_value) in drop_candidates(&current, settings) {
            let reduced: Vec<String> = current.terms.iter().filter(|t| **t != term).cloned().collect();
            if reduced.is_empty() {
                continue;
            }
            match fit_gee_logistic(design, &reduced, gee) {
                Ok(f) if crit(&f) < before => {
                    steps.push(DropStep { term, p_value, qicc_before: before, qicc_after: crit(&f) });
                    current = f;
                    continue 'outer;
                }
                Ok(_) => {}
                Err(e) => notes.push(format!("dropping {term} failed: {e}")),
            }
        }
        break;
    }

    let sub_q = crit(&current);
    let (fit, chosen, null_qicc) = match null_fit {
        Ok(null) if crit(&null) <= sub_q => {
            let q = crit(&null);
            (null, Chosen::NullModel, Some(q))
        }
        Ok(null) => {
            let q = crit(&null);
            (current, Chosen::SubModel, Some(q))
        }
        Err(e) => {
            notes.push(format!("null model failed: {e}"));
            (current, Chosen::SubModel, None)
        }
    };
    Ok(Selection {
        trace: SelectionTrace { steps, final_terms: fit.terms.clone(), submodel_qicc: Some(sub_q), null_qicc, chosen, notes },
        fit,
    })
}
