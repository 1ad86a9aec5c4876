use serde::{Deserialize, Serialize};

/// Per-column min-max scaling onto `[-1, 1]`.
///
/// A constant column (`max == min`) maps to 0 and inverts back to its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Learns the column ranges of row-major `data` with `width` columns.
    pub fn fit(data: &[f64], width: usize) -> Self {
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for row in data.chunks_exact(width) {
            for (j, v) in row.iter().enumerate() {
                min[j] = min[j].min(*v);
                max[j] = max[j].max(*v);
            }
        }
        if data.is_empty() {
            min.fill(0.0);
            max.fill(0.0);
        }
        Self { min, max }
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span == 0.0 {
            0.0
        } else {
            2.0 * (v - self.min[j]) / span - 1.0
        }
    }

    pub fn inverse_value(&self, j: usize, s: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span == 0.0 {
            self.min[j]
        } else {
            (s + 1.0) * 0.5 * span + self.min[j]
        }
    }

    pub fn transform(&self, row: &[f64], out: &mut [f64]) {
        for (j, (o, v)) in out.iter_mut().zip(row).enumerate() {
            *o = self.transform_value(j, *v);
        }
    }

    pub fn inverse(&self, row: &[f64], out: &mut [f64]) {
        for (j, (o, v)) in out.iter_mut().zip(row).enumerate() {
            *o = self.inverse_value(j, *v);
        }
    }

    /// Scales a whole row-major block.
    pub fn transform_all(&self, data: &[f64]) -> Vec<f64> {
        let w = self.width();
        let mut out = vec![0.0; data.len()];
        for (src, dst) in data.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
            self.transform(src, dst);
        }
        out
    }

    pub fn inverse_all(&self, data: &[f64]) -> Vec<f64> {
        let w = self.width();
        let mut out = vec![0.0; data.len()];
        for (src, dst) in data.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
            self.inverse(src, dst);
        }
        out
    }
}
