//! Adaptive linear approximation: greedy top-down piecewise-linear
//! segmentation.
//!
//! The segmentation is chosen on a set of signals by minimizing the summed
//! least-squares line residual over all of them, so every signal of a corpus
//! is described by the same segment boundaries.

/// Half-open sample range `[start, end)`.
pub type Span = (usize, usize);

/// Prefix sums of `y`, `t*y`, `y^2` for one signal.
struct Prefix {
    y: Vec<f64>,
    ty: Vec<f64>,
    yy: Vec<f64>,
}

impl Prefix {
    fn new(x: &[f64]) -> Self {
        let n = x.len();
        let (mut y, mut ty, mut yy) = (vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]);
        for (t, &v) in x.iter().enumerate() {
            y[t + 1] = y[t] + v;
            ty[t + 1] = ty[t] + t as f64 * v;
            yy[t + 1] = yy[t] + v * v;
        }
        Self { y, ty, yy }
    }

    fn sse(&self, a: usize, b: usize) -> f64 {
        let m = (b - a) as f64;
        if b - a < 2 {
            return 0.0;
        }
        let sy = self.y[b] - self.y[a];
        let sty = self.ty[b] - self.ty[a];
        let syy = self.yy[b] - self.yy[a];
        let (a_f, b_f) = (a as f64, (b - 1) as f64);
        let st = (a_f + b_f) * m / 2.0;
        let stt = sum_sq_to(b_f) - if a == 0 { 0.0 } else { sum_sq_to(a_f - 1.0) };
        let ctt = stt - st * st / m;
        let cty = sty - st * sy / m;
        let cyy = syy - sy * sy / m;
        (cyy - cty * cty / ctt).max(0.0)
    }

    fn scale(&self, a: usize, b: usize) -> f64 {
        self.yy[b] - self.yy[a]
    }
}

fn sum_sq_to(k: f64) -> f64 {
    k * (k + 1.0) * (2.0 * k + 1.0) / 6.0
}

struct Corpus {
    prefixes: Vec<Prefix>,
}

impl Corpus {
    fn cost(&self, a: usize, b: usize) -> f64 {
        self.prefixes.iter().map(|p| p.sse(a, b)).sum()
    }

    fn scale(&self, a: usize, b: usize) -> f64 {
        self.prefixes.iter().map(|p| p.scale(a, b)).sum()
    }
}

/// Segments `d`-sample signals into `n_segments` spans.
///
/// Starting from one span, repeatedly picks the span with the largest summed
/// residual and splits it at the point minimizing the residual of its halves.
/// Near-equal candidates are resolved towards the span midpoint; spans are
/// kept at least two samples long while `2 * n_segments <= d`.
pub fn segment<'a, I>(signals: I, d: usize, n_segments: usize) -> Vec<Span>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let corpus = Corpus {
        prefixes: signals.into_iter().map(Prefix::new).collect(),
    };
    let n_segments = n_segments.clamp(1, d);
    let mut spans: Vec<Span> = vec![(0, d)];
    let mut costs = vec![corpus.cost(0, d)];
    let preferred_min = if 2 * n_segments <= d { 2 } else { 1 };

    while spans.len() < n_segments {
        let mut chosen = None;
        for min_len in [preferred_min, 1] {
            chosen = pick_span(&spans, &costs, min_len).map(|i| (i, min_len));
            if chosen.is_some() {
                break;
            }
        }
        let Some((i, min_len)) = chosen else { break };
        let (a, b) = spans[i];
        let s = best_split(&corpus, a, b, min_len);
        spans.splice(i..=i, [(a, s), (s, b)]);
        costs.splice(i..=i, [corpus.cost(a, s), corpus.cost(s, b)]);
    }
    spans
}

fn pick_span(spans: &[Span], costs: &[f64], min_len: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(a, b)) in spans.iter().enumerate() {
        if b - a < 2 * min_len {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(j) => {
                let (cj, ci) = (costs[j], costs[i]);
                let tol = 1e-9 * cj.max(ci).max(1e-300);
                let longer = (b - a) > (spans[j].1 - spans[j].0);
                if ci > cj + tol || ((ci - cj).abs() <= tol && longer) {
                    Some(i)
                } else {
                    Some(j)
                }
            }
        };
    }
    best
}

fn best_split(corpus: &Corpus, a: usize, b: usize, min_len: usize) -> usize {
    let candidates: Vec<(usize, f64)> = (a + min_len..=b - min_len)
        .map(|s| (s, corpus.cost(a, s) + corpus.cost(s, b)))
        .collect();
    let best = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * best + 1e-12 * corpus.scale(a, b);
    let mid2 = a + b; // twice the midpoint
    candidates
        .iter()
        .filter(|c| c.1 <= best + tol)
        .min_by_key(|c| (2 * c.0).abs_diff(mid2))
        .map(|c| c.0)
        .expect("span has at least one split point")
}

/// Least-squares line over `x[a..b)`: (mean, slope per sample, residual sum of squares).
pub fn line_fit(x: &[f64], span: Span) -> (f64, f64, f64) {
    let seg = &x[span.0..span.1];
    let m = seg.len() as f64;
    let mean = seg.iter().sum::<f64>() / m;
    if seg.len() < 2 {
        return (mean, 0.0, 0.0);
    }
    let tc = (m - 1.0) / 2.0;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, &v) in seg.iter().enumerate() {
        let dt = t as f64 - tc;
        sxy += dt * (v - mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    let rss = seg
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            let r = v - (mean + slope * (t as f64 - tc));
            r * r
        })
        .sum();
    (mean, slope, rss)
}

/// Summed residual of a segmentation on one signal.
pub fn total_residual(x: &[f64], spans: &[Span]) -> f64 {
    spans.iter().map(|&s| line_fit(x, s).2).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact optimum by dynamic programming over all split positions, under
    /// the same minimum span length as the greedy search.
    fn dp_optimum(x: &[f64], k: usize) -> f64 {
        let d = x.len();
        let min_len = if 2 * k <= d { 2 } else { 1 };
        let mut best = vec![vec![f64::INFINITY; d + 1]; k + 1];
        best[0][0] = 0.0;
        for j in 1..=k {
            for end in 1..=d {
                for start in (j - 1)..end {
                    if end - start < min_len {
                        continue;
                    }
                    let prev = best[j - 1][start];
                    if prev.is_finite() {
                        let c = prev + line_fit(x, (start, end)).2;
                        if c < best[j][end] {
                            best[j][end] = c;
                        }
                    }
                }
            }
        }
        best[k][d]
    }

    fn wiggly(d: usize) -> Vec<f64> {
        (0..d).map(|t| ((t * t) % 7) as f64 + 0.3 * (t as f64).sin()).collect()
    }

    #[test]
    fn linear_signal_has_zero_residual_and_common_slope() {
        let x: Vec<f64> = (0..40).map(|t| 0.5 * t as f64 - 3.0).collect();
        let spans = segment([x.as_slice()], x.len(), 6);
        assert_eq!(spans.len(), 6);
        for &s in &spans {
            let (_, slope, rss) = line_fit(&x, s);
            assert!(rss < 1e-18);
            assert!((slope - 0.5).abs() < 1e-12);
            assert!(s.1 - s.0 >= 2);
        }
    }

    #[test]
    fn spans_partition_the_signal() {
        let x = wiggly(33);
        let spans = segment([x.as_slice()], 33, 9);
        assert_eq!(spans.first().unwrap().0, 0);
        assert_eq!(spans.last().unwrap().1, 33);
        for w in spans.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }

    #[test]
    fn residual_non_increasing_in_segment_count() {
        let x = wiggly(50);
        let mut prev = f64::INFINITY;
        for k in 1..=20 {
            let r = total_residual(&x, &segment([x.as_slice()], 50, k));
            assert!(r <= prev + 1e-9, "k={k}: {r} > {prev}");
            prev = r;
        }
    }

    #[test]
    fn greedy_matches_dp_for_two_segments_and_bounds_it_above() {
        for d in [8usize, 11, 14] {
            let x = wiggly(d);
            let opt2 = dp_optimum(&x, 2);
            let g2 = total_residual(&x, &segment([x.as_slice()], d, 2));
            assert!((g2 - opt2).abs() < 1e-9 * (1.0 + opt2), "d={d}: {g2} vs {opt2}");
            for k in 3..=4 {
                let opt = dp_optimum(&x, k);
                let g = total_residual(&x, &segment([x.as_slice()], d, k));
                assert!(g >= opt - 1e-9, "greedy below optimum");
            }
        }
    }

    #[test]
    fn prefix_cost_matches_direct_fit() {
        let x = wiggly(20);
        let p = Prefix::new(&x);
        for (a, b) in [(0, 20), (3, 9), (5, 7), (10, 19)] {
            assert!((p.sse(a, b) - line_fit(&x, (a, b)).2).abs() < 1e-9);
        }
    }
}
