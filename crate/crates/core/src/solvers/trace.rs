use std::fmt::Write as _;

use crate::complex::ComplexGrid;
use crate::error::Result;
use crate::metrics::nrmse_masked;

/// Ground truth used to score iterates, optionally restricted to a mask.
#[derive(Clone, Debug)]
pub struct Reference {
    pub image: ComplexGrid,
    pub mask: Option<Vec<bool>>,
}

impl Reference {
    pub fn nrmse(&self, est: &ComplexGrid) -> Result<f64> {
        nrmse_masked(est, &self.image, self.mask.as_deref())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: Option<f64>,
    pub nrmse: Option<f64>,
    /// Wall time since the solver started.
    pub seconds: f64,
}

/// One row per iterate, initialization included.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReconTrace {
    pub rows: Vec<TraceRow>,
}

impl ReconTrace {
    pub(crate) fn push(&mut self, iteration: usize, objective: Option<f64>, nrmse: Option<f64>, seconds: f64) {
        self.rows.push(TraceRow {
            iteration,
            objective,
            nrmse,
            seconds,
        });
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.objective).collect()
    }

    pub fn nrmse(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.nrmse).collect()
    }

    /// First iteration whose NRMSE is below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.nrmse.is_some_and(|v| v < threshold))
            .map(|r| r.iteration)
    }

    /// `iteration,objective,nrmse,seconds`; unrecorded values are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective,nrmse,seconds\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.6}",
                r.iteration,
                opt(r.objective),
                opt(r.nrmse),
                r.seconds
            )
            .expect("write to string");
        }
        out
    }
}
