//! HOMA-IR, TyG and METS-IR surrogate indices.
//!
//! Inputs use the units laboratories report in NHANES: glucose, triglycerides
//! and HDL cholesterol in mg/dL, insulin in µU/mL (= mIU/L). HOMA-IR is the
//! only formula that needs glucose in mmol/L; use [`glucose_mgdl_to_mmol`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// mg/dL per mmol/L of glucose.
pub const GLUCOSE_MGDL_PER_MMOL: f64 = 18.0;
/// Molar-mass based alternative to [`GLUCOSE_MGDL_PER_MMOL`].
pub const GLUCOSE_MGDL_PER_MMOL_PRECISE: f64 = 18.016;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("domain error: {arg} = {value} ({reason})")]
    Domain {
        arg: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("singularity: hdl = {hdl} mg/dL gives ln(hdl) <= 0")]
    Singularity { hdl: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    HomaIr,
    Tyg,
    MetsIr,
}

impl IndexKind {
    pub const ALL: [IndexKind; 3] = [IndexKind::HomaIr, IndexKind::Tyg, IndexKind::MetsIr];

    /// Cut-off separating the IR-negative (≤) and IR-positive (>) classes.
    pub const fn threshold(self) -> f64 {
        match self {
            IndexKind::HomaIr => 2.5,
            IndexKind::Tyg => 8.85,
            IndexKind::MetsIr => 41.33,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            IndexKind::HomaIr => "HOMA-IR",
            IndexKind::Tyg => "TyG",
            IndexKind::MetsIr => "METS-IR",
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexValue {
    pub kind: IndexKind,
    pub value: f64,
}

impl IndexValue {
    pub fn new(kind: IndexKind, value: f64) -> Result<Self, IndexError> {
        if !value.is_finite() {
            return Err(IndexError::Domain {
                arg: "value",
                value,
                reason: "must be finite",
            });
        }
        Ok(Self { kind, value })
    }
}

impl fmt::Display for IndexValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:.4}", self.kind, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrLabel {
    pub kind: IndexKind,
    pub positive: bool,
}

fn finite(arg: &'static str, value: f64) -> Result<f64, IndexError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(IndexError::Domain {
            arg,
            value,
            reason: "must be finite",
        })
    }
}

fn non_negative(arg: &'static str, value: f64) -> Result<f64, IndexError> {
    if finite(arg, value)? < 0.0 {
        return Err(IndexError::Domain {
            arg,
            value,
            reason: "must be >= 0",
        });
    }
    Ok(value)
}

fn positive(arg: &'static str, value: f64) -> Result<f64, IndexError> {
    if finite(arg, value)? <= 0.0 {
        return Err(IndexError::Domain {
            arg,
            value,
            reason: "must be > 0",
        });
    }
    Ok(value)
}

/// HOMA-IR = FPG (mmol/L) × fasting insulin (mIU/L) / 22.5.
pub fn homa_ir(fpg_mmol_per_l: f64, insulin_miu_per_l: f64) -> Result<IndexValue, IndexError> {
    let fpg = non_negative("fpg_mmol_per_l", fpg_mmol_per_l)?;
    let ins = non_negative("insulin_miu_per_l", insulin_miu_per_l)?;
    IndexValue::new(IndexKind::HomaIr, fpg * ins / 22.5)
}

/// TyG = ln(TG × FPG / 2), both in mg/dL.
pub fn tyg(tg_mg_per_dl: f64, fpg_mg_per_dl: f64) -> Result<IndexValue, IndexError> {
    let tg = positive("tg_mg_per_dl", tg_mg_per_dl)?;
    let fpg = positive("fpg_mg_per_dl", fpg_mg_per_dl)?;
    IndexValue::new(IndexKind::Tyg, (tg * fpg / 2.0).ln())
}

/// METS-IR = ln(2·FPG + TG) · BMI / ln(HDL-C), lipids and glucose in mg/dL.
pub fn mets_ir(
    fpg_mg_per_dl: f64,
    tg_mg_per_dl: f64,
    bmi_kg_per_m2: f64,
    hdl_mg_per_dl: f64,
) -> Result<IndexValue, IndexError> {
    let fpg = finite("fpg_mg_per_dl", fpg_mg_per_dl)?;
    let tg = finite("tg_mg_per_dl", tg_mg_per_dl)?;
    let bmi = positive("bmi_kg_per_m2", bmi_kg_per_m2)?;
    let hdl = finite("hdl_mg_per_dl", hdl_mg_per_dl)?;
    if fpg < 0.0 {
        return Err(IndexError::Domain {
            arg: "fpg_mg_per_dl",
            value: fpg,
            reason: "must be >= 0",
        });
    }
    if tg < 0.0 {
        return Err(IndexError::Domain {
            arg: "tg_mg_per_dl",
            value: tg,
            reason: "must be >= 0",
        });
    }
    let glyc = 2.0 * fpg + tg;
    if glyc <= 0.0 {
        return Err(IndexError::Domain {
            arg: "2*fpg+tg",
            value: glyc,
            reason: "must be > 0",
        });
    }
    if hdl <= 1.0 {
        return Err(IndexError::Singularity { hdl });
    }
    IndexValue::new(IndexKind::MetsIr, glyc.ln() * bmi / hdl.ln())
}

/// Positive iff the value is strictly above the kind's cut-off.
pub fn classify(idx: IndexValue) -> Result<IrLabel, IndexError> {
    let value = finite("value", idx.value)?;
    Ok(IrLabel {
        kind: idx.kind,
        positive: value > idx.kind.threshold(),
    })
}

pub fn glucose_mgdl_to_mmol(fpg_mg_per_dl: f64) -> Result<f64, IndexError> {
    glucose_mgdl_to_mmol_with(fpg_mg_per_dl, GLUCOSE_MGDL_PER_MMOL)
}

pub fn glucose_mgdl_to_mmol_with(fpg_mg_per_dl: f64, mgdl_per_mmol: f64) -> Result<f64, IndexError> {
    let fpg = non_negative("fpg_mg_per_dl", fpg_mg_per_dl)?;
    let factor = positive("mgdl_per_mmol", mgdl_per_mmol)?;
    Ok(fpg / factor)
}

/// Body-mass index from weight (kg) and height (cm).
pub fn bmi(weight_kg: f64, height_cm: f64) -> Result<f64, IndexError> {
    let w = positive("weight_kg", weight_kg)?;
    let h = positive("height_cm", height_cm)? / 100.0;
    Ok(w / (h * h))
}
