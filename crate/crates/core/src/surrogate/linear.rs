use serde::{Deserialize, Serialize};

use super::SurrogateError;
use crate::linalg;

/// Ordinary least squares `y = b + W x`, one coefficient row per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub n_inputs: usize,
    /// Per output: intercept followed by one weight per input.
    pub coefficients: Vec<Vec<f64>>,
}

impl LinearModel {
    /// Solves the centred normal equations. Collinear inputs (such as
    /// exchanger columns that always sum to the capacity) get zero weight
    /// instead of an ill-determined one.
    pub fn fit(x: &[f64], n_inputs: usize, y: &[f64], n_outputs: usize) -> Result<Self, SurrogateError> {
        let n = n_inputs;
        let rows = x.len() / n_inputs.max(1);
        if rows == 0 {
            return Err(SurrogateError::DegenerateData("no rows to fit".into()));
        }
        let mean_of = |data: &[f64], w: usize| {
            let mut m = vec![0.0; w];
            for r in data.chunks_exact(w) {
                m.iter_mut().zip(r).for_each(|(a, v)| *a += v);
            }
            m.iter_mut().for_each(|a| *a /= rows as f64);
            m
        };
        let (mx, my) = (mean_of(x, n), mean_of(y, n_outputs));
        let mut gram = vec![0.0; n * n];
        let mut rhs = vec![vec![0.0; n]; n_outputs];
        let mut dx = vec![0.0; n];
        for r in 0..rows {
            for j in 0..n {
                dx[j] = x[r * n + j] - mx[j];
            }
            for i in 0..n {
                for j in i..n {
                    gram[i * n + j] += dx[i] * dx[j];
                }
                for (o, b) in rhs.iter_mut().enumerate() {
                    b[i] += dx[i] * (y[r * n_outputs + o] - my[o]);
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                gram[i * n + j] = gram[j * n + i];
            }
        }
        let l = linalg::cholesky_psd(&gram, n)
            .ok_or_else(|| SurrogateError::DegenerateData("normal equations are not positive semi-definite".into()))?;
        let coefficients = rhs
            .into_iter()
            .zip(&my)
            .map(|(mut w, ybar)| {
                linalg::solve_cholesky(&l, &mut w, n);
                let b = ybar - w.iter().zip(&mx).map(|(a, m)| a * m).sum::<f64>();
                std::iter::once(b).chain(w).collect()
            })
            .collect();
        Ok(Self { n_inputs, coefficients })
    }

    pub fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.coefficients) {
            *o = c[0] + c[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_linear_map() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..50 {
            let a = (i as f64 * 0.37).sin();
            let b = (i as f64 * 0.11).cos();
            x.extend([a, b]);
            y.extend([1.5 + 2.0 * a - 3.0 * b, -0.5 * a]);
        }
        let m = LinearModel::fit(&x, 2, &y, 2).unwrap();
        let mut out = [0.0; 2];
        let mut sq = 0.0;
        for (r, t) in x.chunks(2).zip(y.chunks(2)) {
            m.predict_into(r, &mut out);
            sq += (out[0] - t[0]).powi(2) + (out[1] - t[1]).powi(2);
        }
        assert!(sq / 100.0 < 1e-20, "{sq}");
        assert!((m.coefficients[0][1] - 2.0).abs() < 1e-9);
    }
}
