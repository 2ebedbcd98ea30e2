use std::collections::VecDeque;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, Vector6};
use serde::{Deserialize, Serialize};

use super::kernel::ENCODING_DIM;
use super::{GpError, OUTPUTS};

/// Column names for CSV import/export of vehicle-state datasets.
pub const CSV_HEADER: [&str; ENCODING_DIM + OUTPUTS + 1] = [
    "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "px", "py", "pz", "wx", "wy", "wz", "vx",
    "vy", "vz", "fvx", "fvy", "fvz", "fwx", "fwy", "fwz", "t",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPoint {
    pub input: DVector<f64>,
    /// `(f_v, f_ω)`
    pub output: Vector6<f64>,
    /// Time the sample was recorded, s.
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UpdatePolicy {
    #[default]
    Grow,
    SlidingWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome {
    Appended,
    /// The window was full; these oldest points were dropped.
    Evicted(usize),
    /// The switch budget is spent; the dataset is frozen.
    Refused,
}

/// Training set `D_n` with a switch budget.
///
/// Every accepted update (single point or batch) advances the index `n` and
/// spends one switch. When `max_switches` is reached, further updates are
/// refused and the set stays frozen at `D_{n_end}`.
#[derive(Debug, Clone)]
pub struct Dataset {
    index: u64,
    points: VecDeque<TrainingPoint>,
    capacity: usize,
    policy: UpdatePolicy,
    switches: u64,
    max_switches: Option<u64>,
    dim: Option<usize>,
}

impl Dataset {
    pub fn new(capacity: usize, policy: UpdatePolicy, max_switches: Option<u64>) -> Self {
        Self {
            index: 0,
            points: VecDeque::new(),
            capacity: capacity.max(1),
            policy,
            switches: 0,
            max_switches,
            dim: None,
        }
    }

    pub fn unbounded() -> Self {
        Self::new(usize::MAX, UpdatePolicy::Grow, None)
    }

    pub fn index(&self) -> u64 {
        self.index
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn capacity(&self) -> usize {
        self.capacity
    }
    pub fn policy(&self) -> UpdatePolicy {
        self.policy
    }
    pub fn switches(&self) -> u64 {
        self.switches
    }
    pub fn max_switches(&self) -> Option<u64> {
        self.max_switches
    }
    pub fn is_frozen(&self) -> bool {
        self.max_switches.is_some_and(|m| self.switches >= m)
    }
    pub fn input_dim(&self) -> Option<usize> {
        self.dim
    }
    pub fn points(&self) -> impl ExactSizeIterator<Item = &TrainingPoint> {
        self.points.iter()
    }

    pub fn update(&mut self, point: TrainingPoint) -> Result<UpdateOutcome, GpError> {
        self.update_batch(vec![point])
    }

    /// Adds several points as a single switch.
    pub fn update_batch(&mut self, batch: Vec<TrainingPoint>) -> Result<UpdateOutcome, GpError> {
        if self.is_frozen() {
            return Ok(UpdateOutcome::Refused);
        }
        for p in &batch {
            self.check_point(p)?;
        }
        let mut evicted = 0;
        for p in batch {
            self.dim.get_or_insert(p.input.len());
            self.points.push_back(p);
        }
        match self.policy {
            UpdatePolicy::Grow => {
                // a growing set silently stops at capacity by dropping the newest
                while self.points.len() > self.capacity {
                    self.points.pop_back();
                    evicted += 1;
                }
            }
            UpdatePolicy::SlidingWindow => {
                while self.points.len() > self.capacity {
                    self.points.pop_front();
                    evicted += 1;
                }
            }
        }
        self.index += 1;
        self.switches += 1;
        Ok(if evicted > 0 { UpdateOutcome::Evicted(evicted) } else { UpdateOutcome::Appended })
    }

    /// Forgets all points. Counts as a switch.
    pub fn clear(&mut self) -> UpdateOutcome {
        if self.is_frozen() {
            return UpdateOutcome::Refused;
        }
        self.points.clear();
        self.index += 1;
        self.switches += 1;
        UpdateOutcome::Appended
    }

    fn check_point(&self, p: &TrainingPoint) -> Result<(), GpError> {
        if let Some(d) = self.dim {
            if p.input.len() != d {
                return Err(GpError::DimensionMismatch { expected: d, got: p.input.len() });
            }
        }
        if p.input.is_empty() || !p.input.iter().chain(p.output.iter()).all(|x| x.is_finite()) {
            return Err(GpError::Domain("training point has empty or non-finite entries".into()));
        }
        Ok(())
    }

    pub fn inputs(&self) -> Vec<DVector<f64>> {
        self.points.iter().map(|p| p.input.clone()).collect()
    }

    /// Outputs as an `N × 6` matrix.
    pub fn outputs(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), OUTPUTS, |i, j| self.points[i].output[j])
    }

    /// `max_i |y_ij|` per output channel.
    pub fn sup_abs_outputs(&self) -> Vector6<f64> {
        self.points.iter().fold(Vector6::zeros(), |acc, p| acc.zip_map(&p.output, |a, y| a.max(y.abs())))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), GpError> {
        if let Some(d) = self.dim {
            if d != ENCODING_DIM {
                return Err(GpError::DimensionMismatch { expected: ENCODING_DIM, got: d });
            }
        }
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for p in &self.points {
            let row: Vec<String> =
                p.input.iter().chain(p.output.iter()).chain(std::iter::once(&p.t)).map(|x| format!("{x:e}")).collect();
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Loads points into an unbounded, grow-policy dataset as one switch.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, GpError> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(GpError::Csv(format!("unexpected header: {:?}", header.iter().collect::<Vec<_>>())));
        }
        let mut batch = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| GpError::Csv(format!("{s:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            batch.push(TrainingPoint {
                input: DVector::from_column_slice(&vals[..ENCODING_DIM]),
                output: Vector6::from_column_slice(&vals[ENCODING_DIM..ENCODING_DIM + OUTPUTS]),
                t: vals[ENCODING_DIM + OUTPUTS],
            });
        }
        let mut ds = Self::unbounded();
        if !batch.is_empty() {
            ds.update_batch(batch)?;
        }
        Ok(ds)
    }
}
