/// Population moments of a slice: mean, variance, skewness and excess
/// kurtosis. Constant input yields zero variance, skewness and kurtosis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn moments(x: &[f64]) -> Moments {
    if x.is_empty() {
        return Moments { mean: 0.0, variance: 0.0, skewness: 0.0, kurtosis: 0.0 };
    }
    let n = x.len() as f64;
    if x.iter().all(|&v| v == x[0]) {
        return Moments { mean: x[0], variance: 0.0, skewness: 0.0, kurtosis: 0.0 };
    }
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let c = v - mean;
        let c2 = c * c;
        m2 += c2;
        m3 += c2 * c;
        m4 += c2 * c2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    // relative floor: rounding noise on nearly-constant data must not blow up the ratios
    if m2 <= 1e-24 * (1.0 + mean * mean) {
        return Moments { mean, variance: m2, skewness: 0.0, kurtosis: 0.0 };
    }
    Moments {
        mean,
        variance: m2,
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2) - 3.0,
    }
}

/// Moments of a distribution over integer positions `0..w.len()` with
/// non-negative weights `w`: centroid, spread, skewness, excess kurtosis.
pub fn weighted_position_moments(w: &[f64]) -> (f64, f64, f64, f64) {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let centroid = w.iter().enumerate().map(|(k, &p)| k as f64 * p).sum::<f64>() / total;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for (k, &p) in w.iter().enumerate() {
        let c = k as f64 - centroid;
        let c2 = c * c;
        m2 += p * c2;
        m3 += p * c2 * c;
        m4 += p * c2 * c2;
    }
    m2 /= total;
    m3 /= total;
    m4 /= total;
    if m2 <= 1e-24 {
        return (centroid, 0.0, 0.0, 0.0);
    }
    (centroid, m2.sqrt(), m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}
