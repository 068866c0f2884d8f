use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row of a training run's metrics CSV. `margin` and `win_rate` are
/// only meaningful for DPO steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub margin: Option<f64>,
    pub win_rate: Option<f64>,
}

/// `step,lr,loss,margin,win_rate`; empty cells for missing values.
pub fn write_metrics_csv(rows: &[StepMetrics], w: &mut impl Write) -> Result<()> {
    writeln!(w, "step,lr,loss,margin,win_rate")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        writeln!(w, "{},{:.8},{:.6},{},{}", r.step, r.lr, r.loss, opt(r.margin), opt(r.win_rate))?;
    }
    Ok(())
}
