//! Orthonormal Daubechies-4 (8-tap, four vanishing moments) multilevel DWT
//! with periodic boundary extension.

/// Scaling (low-pass) filter.
pub const DB4_LO: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

/// Wavelet (high-pass) filter, the quadrature mirror of [`DB4_LO`].
pub fn db4_hi() -> [f64; 8] {
    let mut g = [0.0; 8];
    for (m, v) in g.iter_mut().enumerate() {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        *v = sign * DB4_LO[7 - m];
    }
    g
}

/// Number of decomposition levels for a length-`n` signal: halve while the
/// current length is even and the next approximation keeps at least 4 samples.
pub fn max_level(n: usize) -> usize {
    let mut cur = n;
    let mut level = 0;
    while cur.is_multiple_of(2) && cur / 2 >= 4 {
        cur /= 2;
        level += 1;
    }
    level
}

/// One analysis step: `(approximation, detail)`, each of length `x.len() / 2`.
pub fn analysis_step(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = n / 2;
    let hi = db4_hi();
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for k in 0..half {
        let (mut sa, mut sd) = (0.0, 0.0);
        for m in 0..8 {
            let v = x[(2 * k + m) % n];
            sa += DB4_LO[m] * v;
            sd += hi[m] * v;
        }
        a[k] = sa;
        d[k] = sd;
    }
    (a, d)
}

/// Inverse of [`analysis_step`].
pub fn synthesis_step(a: &[f64], d: &[f64]) -> Vec<f64> {
    let half = a.len();
    let n = 2 * half;
    let hi = db4_hi();
    let mut x = vec![0.0; n];
    for k in 0..half {
        for m in 0..8 {
            x[(2 * k + m) % n] += DB4_LO[m] * a[k] + hi[m] * d[k];
        }
    }
    x
}

/// Band of a coefficient in the flattened layout `[A_L, D_L, D_{L-1}, ..., D_1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoefficientSlot {
    /// Decomposition level (1 = finest detail).
    pub level: usize,
    /// `true` for the coarsest approximation band.
    pub approximation: bool,
    /// Position inside its band.
    pub position: usize,
}

/// Full decomposition flattened as `[A_L, D_L, D_{L-1}, ..., D_1]`;
/// the output has the same length as `x`.
pub fn decompose(x: &[f64], levels: usize) -> Vec<f64> {
    let mut details = Vec::with_capacity(levels);
    let mut approx = x.to_vec();
    for _ in 0..levels {
        let (a, d) = analysis_step(&approx);
        details.push(d);
        approx = a;
    }
    let mut out = approx;
    for d in details.into_iter().rev() {
        out.extend(d);
    }
    out
}

pub fn reconstruct(coeffs: &[f64], levels: usize) -> Vec<f64> {
    let n = coeffs.len();
    let mut len = n >> levels;
    let mut approx = coeffs[..len].to_vec();
    let mut off = len;
    for _ in 0..levels {
        let d = &coeffs[off..off + len];
        approx = synthesis_step(&approx, d);
        off += len;
        len *= 2;
    }
    approx
}

/// Maps a flattened coefficient index back to its band.
pub fn slot(n: usize, levels: usize, index: usize) -> CoefficientSlot {
    let coarse = n >> levels;
    if index < coarse {
        return CoefficientSlot {
            level: levels,
            approximation: true,
            position: index,
        };
    }
    let mut off = coarse;
    let mut len = coarse;
    for level in (1..=levels).rev() {
        if index < off + len {
            return CoefficientSlot {
                level,
                approximation: false,
                position: index - off,
            };
        }
        off += len;
        len *= 2;
    }
    panic!("coefficient index {index} out of range for length {n}");
}

/// Inclusive sample range influencing a coefficient, ignoring wrap-around
/// and clipped to the signal end.
pub fn support(n: usize, s: CoefficientSlot) -> (usize, usize) {
    let step = 1usize << s.level;
    // support length of a level-j atom: S_1 = 8, S_j = S_{j-1} + 7 * 2^(j-1)
    let width = 7 * (step - 1) + 1;
    let start = (s.position * step).min(n.saturating_sub(1));
    (start, (start + width - 1).min(n - 1))
}
