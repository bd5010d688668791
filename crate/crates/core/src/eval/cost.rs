use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("{name} must be {requirement}, got {value}")]
    InvalidParam { name: &'static str, requirement: &'static str, value: f64 },
}

/// Inputs of the per-form cost model. Defaults reproduce the reference
/// scenario: €40,000 gross per year, 40 h × 52 weeks, 15 minutes manual
/// entry, 5 minutes supervision and €0.10 cloud cost per form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub annual_salary_eur: f64,
    pub hours_per_week: f64,
    pub weeks_per_year: f64,
    pub manual_minutes: f64,
    pub supervision_minutes: f64,
    pub cloud_cost_eur: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            annual_salary_eur: 40_000.0,
            hours_per_week: 40.0,
            weeks_per_year: 52.0,
            manual_minutes: 15.0,
            supervision_minutes: 5.0,
            cloud_cost_eur: 0.10,
        }
    }
}

impl CostParams {
    fn validate(&self) -> Result<(), CostError> {
        let positive = [
            ("annual_salary_eur", self.annual_salary_eur),
            ("hours_per_week", self.hours_per_week),
            ("weeks_per_year", self.weeks_per_year),
            ("manual_minutes", self.manual_minutes),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(CostError::InvalidParam { name, requirement: "strictly positive", value });
            }
        }
        let non_negative =
            [("supervision_minutes", self.supervision_minutes), ("cloud_cost_eur", self.cloud_cost_eur)];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CostError::InvalidParam { name, requirement: "non-negative", value });
            }
        }
        Ok(())
    }
}

/// Unrounded cost figures. `savings_pct` is a fraction in [0, 1] for any
/// system cheaper than manual entry; rounding happens in `Display` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub hourly_wage_eur: f64,
    pub manual_minutes: f64,
    pub system_minutes: f64,
    pub manual_cost_eur: f64,
    pub system_cost_eur: f64,
    pub savings_eur: f64,
    pub savings_pct: f64,
}

pub fn cost_model(params: &CostParams) -> Result<CostReport, CostError> {
    params.validate()?;
    let hourly_wage_eur = params.annual_salary_eur / (params.hours_per_week * params.weeks_per_year);
    let manual_cost_eur = params.manual_minutes / 60.0 * hourly_wage_eur;
    let system_cost_eur = params.cloud_cost_eur + params.supervision_minutes / 60.0 * hourly_wage_eur;
    let savings_eur = manual_cost_eur - system_cost_eur;
    Ok(CostReport {
        hourly_wage_eur,
        manual_minutes: params.manual_minutes,
        system_minutes: params.supervision_minutes,
        manual_cost_eur,
        system_cost_eur,
        savings_eur,
        savings_pct: savings_eur / manual_cost_eur,
    })
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Hourly wage: €{:.2}", self.hourly_wage_eur)?;
        writeln!(f, "{:<22}  {:>10}  {:>8}", "Method", "Time [min]", "Cost [€]")?;
        writeln!(f, "{:<22}  {:>10}  {:>8.2}", "Manual Completion", fmt_minutes(self.manual_minutes), self.manual_cost_eur)?;
        writeln!(
            f,
            "{:<22}  {:>10}  {:>8.2}",
            "System + Supervision",
            fmt_minutes(self.system_minutes),
            self.system_cost_eur
        )?;
        write!(f, "Savings: €{:.2} per form ({:.1}%)", self.savings_eur, self.savings_pct * 100.0)
    }
}

fn fmt_minutes(m: f64) -> String {
    if m.fract() == 0.0 {
        format!("{m:.0}")
    } else {
        format!("{m:.1}")
    }
}
