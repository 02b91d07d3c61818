use serde::{Deserialize, Serialize};

/// Running per-coordinate mean and variance (Chan et al. parallel update).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMoments {
    pub count: f64,
    pub mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    pub m2: Vec<f64>,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fold in a row-major batch of `dim`-wide rows.
    pub fn update(&mut self, rows: &[f64]) {
        let d = self.dim();
        if d == 0 || rows.is_empty() {
            return;
        }
        let n = (rows.len() / d) as f64;
        let mut batch = RunningMoments::new(d);
        batch.count = n;
        for row in rows.chunks_exact(d) {
            for (m, x) in batch.mean.iter_mut().zip(row) {
                *m += x / n;
            }
        }
        for row in rows.chunks_exact(d) {
            for ((s, m), x) in batch.m2.iter_mut().zip(&batch.mean).zip(row) {
                *s += (x - m) * (x - m);
            }
        }
        self.merge(&batch);
    }

    pub fn merge(&mut self, other: &RunningMoments) {
        if other.count == 0.0 {
            return;
        }
        let total = self.count + other.count;
        for i in 0..self.dim() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * other.count / total;
            self.m2[i] += other.m2[i] + delta * delta * self.count * other.count / total;
        }
        self.count = total;
    }

    /// Population variance per coordinate (zero before any data).
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0.0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|s| s / self.count).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_two_pass_statistics() {
        let rows: Vec<f64> = (0..30).map(|i| ((i * 7919) % 13) as f64 * 0.37 - 1.0).collect();
        let mut m = RunningMoments::new(3);
        m.update(&rows[..12]);
        m.update(&rows[12..21]);
        m.update(&rows[21..]);
        for c in 0..3 {
            let col: Vec<f64> = rows.iter().skip(c).step_by(3).copied().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((m.mean[c] - mean).abs() < 1e-12);
            assert!((m.variance()[c] - var).abs() < 1e-12);
        }
        assert_eq!(m.count, 10.0);
    }
}
