//! Paired statistics for modality comparisons plus the flow-phantom ANCOVA.
//!
//! Pipeline per comparison: Shapiro-Wilk on the paired differences gates the
//! choice between a two-sided paired t-test (analytic CI) and a Wilcoxon
//! signed-rank test (seeded percentile-bootstrap CI). Cohen's d_z is always
//! reported. Families of raw p-values are adjusted with Holm-Bonferroni.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::{MleError, Result};

/// Bootstrap resample count used for Wilcoxon-branch confidence intervals.
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Normality gate: t-test when the Shapiro-Wilk p exceeds this.
pub const SW_GATE: f64 = 0.05;

/// Largest n for which the Wilcoxon null distribution is enumerated exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Two paired measurement vectors with group labels.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub label_a: String,
    pub label_b: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedSample {
    pub fn new(label_a: &str, label_b: &str, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(MleError::InvalidInput(format!(
                "paired sample lengths differ: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        if a.len() < 3 {
            return Err(MleError::InvalidInput(format!(
                "paired sample needs at least 3 pairs, got {}",
                a.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(MleError::InvalidInput("non-finite value in paired sample".into()));
        }
        Ok(Self { label_a: label_a.to_string(), label_b: label_b.to_string(), a, b })
    }

    /// Pairwise differences b - a (comparison minus baseline).
    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| y - x).collect()
    }

    /// Builds a paired sample from long-format records, keeping only sample
    /// ids present in both groups.
    pub fn from_records(records: &[LongRecord], group_a: &str, group_b: &str) -> Result<Self> {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for r in records.iter().filter(|r| r.group == group_a) {
            if let Some(m) = records.iter().find(|s| s.group == group_b && s.sample_id == r.sample_id) {
                a.push(r.value);
                b.push(m.value);
            }
        }
        Self::new(group_a, group_b, a, b)
    }
}

/// One row of long-format input (`sample_id,group,value`).
#[derive(Debug, Clone, PartialEq)]
pub struct LongRecord {
    pub sample_id: String,
    pub group: String,
    pub value: f64,
}

/// Parses long-format CSV with a `sample_id,group,value` header.
pub fn parse_long_csv(text: &str) -> Result<Vec<LongRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| MleError::InvalidInput("empty CSV".into()))?;
    if header.trim() != "sample_id,group,value" {
        return Err(MleError::InvalidInput(format!("unexpected CSV header: {header}")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(MleError::InvalidInput(format!("CSV row {} has {} fields", i + 2, parts.len())));
        }
        let value: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|_| MleError::InvalidInput(format!("bad value on CSV row {}", i + 2)))?;
        out.push(LongRecord {
            sample_id: parts[0].trim().to_string(),
            group: parts[1].trim().to_string(),
            value,
        });
    }
    Ok(out)
}

/// Shapiro-Wilk normality test (Royston's AS R94 approximation).
///
/// Returns (W, p). Requires 3 <= n <= 5000 and non-constant data.
pub fn shapiro_wilk(d: &[f64]) -> Result<(f64, f64)> {
    let n = d.len();
    if n < 3 {
        return Err(MleError::InvalidInput(format!("Shapiro-Wilk needs n >= 3, got {n}")));
    }
    if n > 5000 {
        return Err(MleError::InvalidInput(format!("Shapiro-Wilk approximation limited to n <= 5000, got {n}")));
    }
    let mut x = d.to_vec();
    x.sort_by(|p, q| p.partial_cmp(q).unwrap());
    if x[n - 1] - x[0] < 1e-300 {
        return Err(MleError::InvalidInput("Shapiro-Wilk undefined for constant data".into()));
    }

    let norm = Normal::new(0.0, 1.0).unwrap();
    let nf = n as f64;
    // Blom scores for the expected normal order statistics.
    let m: Vec<f64> = (1..=n)
        .map(|i| norm.inverse_cdf((i as f64 - 0.375) / (nf + 0.25)))
        .collect();
    let ssumm2: f64 = m.iter().map(|v| v * v).sum();
    let rsn = 1.0 / nf.sqrt();

    // Polynomial-corrected tail weights, interior weights rescaled to keep
    // the coefficient vector unit norm.
    let mut a = vec![0.0; n];
    let cn = m[n - 1] / ssumm2.sqrt();
    let an = poly(&[-2.706056, 4.434685, -2.071190, -0.147981, 0.221157, cn], rsn);
    let (fac, i_first) = if n > 5 {
        let cn1 = m[n - 2] / ssumm2.sqrt();
        let an1 = poly(&[-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, cn1], rsn);
        a[n - 1] = an;
        a[n - 2] = an1;
        let phi = (ssumm2 - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2])
            / (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
        (phi.sqrt(), n - 2)
    } else {
        a[n - 1] = an;
        let phi = (ssumm2 - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * an * an);
        (phi.sqrt(), n - 1)
    };
    for i in (n / 2)..i_first {
        a[i] = m[i] / fac;
    }
    if n == 3 {
        a[2] = (0.5f64).sqrt();
    }
    for i in 0..n / 2 {
        a[i] = -a[n - 1 - i];
    }

    let mean = x.iter().sum::<f64>() / nf;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let num: f64 = a.iter().zip(&x).map(|(ai, xi)| ai * xi).sum();
    let w = (num * num / ss).min(1.0);

    let p = if n == 3 {
        let pw = 6.0 / std::f64::consts::PI * ((w.sqrt()).asin() - (0.75f64.sqrt()).asin());
        pw.clamp(0.0, 1.0)
    } else if n <= 11 {
        let gamma = -2.273 + 0.459 * nf;
        let xx = -(gamma - (1.0 - w).ln()).ln();
        let mu = poly(&[-0.0006714, 0.025054, -0.39978, 0.5440], nf);
        let sigma = poly(&[-0.0020322, 0.062767, -0.77857, 1.3822], nf).exp();
        1.0 - norm.cdf((xx - mu) / sigma)
    } else {
        let y = nf.ln();
        let xx = (1.0 - w).ln();
        let mu = poly(&[0.0038915, -0.083751, -0.31082, -1.5861], y);
        let sigma = poly(&[0.0030302, -0.082676, -0.4803], y).exp();
        1.0 - norm.cdf((xx - mu) / sigma)
    };
    Ok((w, p))
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, c| acc * x + c)
}

/// Wilcoxon signed-rank test on a difference vector, two-sided.
///
/// Zero differences are dropped. The null distribution is enumerated exactly
/// when there are no ties and n <= 25; otherwise a normal approximation with
/// continuity and tie corrections is used. Returns (statistic, p) where the
/// statistic is min(rank-sum of positives, rank-sum of negatives).
pub fn wilcoxon_signed_rank(d: &[f64]) -> Result<(f64, f64)> {
    let nz: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let n = nz.len();
    if n < 1 {
        return Err(MleError::InvalidInput("Wilcoxon: all differences are zero".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| nz[i].abs().partial_cmp(&nz[j].abs()).unwrap());

    // Average ranks across ties; accumulate the tie correction.
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[idx[j + 1]].abs() == nz[idx[i]].abs() {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let has_ties = tie_term > 0.0;

    let r_plus: f64 = (0..n).filter(|&k| nz[k] > 0.0).map(|k| ranks[k]).sum();
    let total = (n * (n + 1) / 2) as f64;
    let w_min = r_plus.min(total - r_plus);

    let p = if !has_ties && n <= WILCOXON_EXACT_MAX_N {
        // Exact: count rank subsets with sum <= w_min.
        let max_sum = n * (n + 1) / 2;
        let mut counts = vec![0.0f64; max_sum + 1];
        counts[0] = 1.0;
        for r in 1..=n {
            for s in (r..=max_sum).rev() {
                counts[s] += counts[s - r];
            }
        }
        let cum: f64 = counts[..=(w_min as usize)].iter().sum();
        (2.0 * cum / 2.0f64.powi(n as i32)).min(1.0)
    } else {
        let nf = n as f64;
        let mn = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        if var <= 0.0 {
            return Err(MleError::InvalidInput("Wilcoxon: zero variance after tie correction".into()));
        }
        let diff = w_min - mn;
        let cc = 0.5 * diff.signum();
        let z = (diff - cc) / var.sqrt();
        let norm = Normal::new(0.0, 1.0).unwrap();
        (2.0 * (1.0 - norm.cdf(z.abs()))).min(1.0)
    };
    Ok((w_min, p))
}

/// Test chosen by the normality gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    PairedT,
    Wilcoxon,
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestKind::PairedT => write!(f, "paired t-test"),
            TestKind::Wilcoxon => write!(f, "Wilcoxon"),
        }
    }
}

/// Result of a gated paired comparison.
#[derive(Debug, Clone)]
pub struct PairedComparison {
    pub n: usize,
    /// Mean of (b - a).
    pub delta_mu: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_sw: f64,
    pub test: TestKind,
    pub p_raw: f64,
    pub d_z: f64,
}

/// Runs the full gated comparison on a paired sample.
///
/// Shapiro-Wilk p > 0.05 selects a two-sided paired t-test with an analytic
/// (1 - alpha) CI; otherwise a Wilcoxon signed-rank p with a seeded
/// percentile-bootstrap CI of the mean difference (10,000 resamples).
pub fn paired_compare(s: &PairedSample, alpha: f64, seed: u64) -> Result<PairedComparison> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(MleError::InvalidInput(format!("alpha must be in (0,1), got {alpha}")));
    }
    let d = s.differences();
    let n = d.len();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let ss: f64 = d.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (nf - 1.0)).sqrt();

    if sd == 0.0 {
        if mean == 0.0 {
            // Identical vectors: no effect, no evidence.
            return Ok(PairedComparison {
                n,
                delta_mu: 0.0,
                ci_low: 0.0,
                ci_high: 0.0,
                p_sw: 1.0,
                test: TestKind::PairedT,
                p_raw: 1.0,
                d_z: 0.0,
            });
        }
        return Err(MleError::InvalidInput("zero variance in nonzero paired differences".into()));
    }

    let (_, p_sw) = shapiro_wilk(&d)?;
    let d_z = mean / sd;
    let se = sd / nf.sqrt();

    if p_sw > SW_GATE {
        let t_dist = StudentsT::new(0.0, 1.0, nf - 1.0).unwrap();
        let t = mean / se;
        let p = 2.0 * (1.0 - t_dist.cdf(t.abs()));
        let tcrit = t_dist.inverse_cdf(1.0 - alpha / 2.0);
        Ok(PairedComparison {
            n,
            delta_mu: mean,
            ci_low: mean - tcrit * se,
            ci_high: mean + tcrit * se,
            p_sw,
            test: TestKind::PairedT,
            p_raw: p.min(1.0),
            d_z,
        })
    } else {
        let (_, p) = wilcoxon_signed_rank(&d)?;
        let (lo, hi) = bootstrap_mean_ci(&d, alpha, seed);
        Ok(PairedComparison {
            n,
            delta_mu: mean,
            ci_low: lo,
            ci_high: hi,
            p_sw,
            test: TestKind::Wilcoxon,
            p_raw: p,
            d_z,
        })
    }
}

/// Percentile bootstrap CI of the mean with a seeded generator.
fn bootstrap_mean_ci(d: &[f64], alpha: f64, seed: u64) -> (f64, f64) {
    let n = d.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += d[rng.gen_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (quantile_sorted(&means, alpha / 2.0), quantile_sorted(&means, 1.0 - alpha / 2.0))
}

/// Linear-interpolated quantile of an ascending-sorted slice.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] * (1.0 - frac) + v[hi] * frac
}

/// Holm-Bonferroni step-down adjustment, capped at 1.
///
/// Output keeps input order, is elementwise >= the raw values, and is
/// monotone in the raw ordering.
pub fn holm_bonferroni(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].partial_cmp(&p[j]).unwrap());
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64) * p[i]).min(1.0);
        adjusted[i] = running;
    }
    adjusted
}

/// ANCOVA interaction test result.
#[derive(Debug, Clone)]
pub struct AncovaResult {
    pub f: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p: f64,
    pub r_squared: f64,
    pub n_groups: usize,
}

/// Tests the velocity x exposure-group interaction in
/// `contrast ~ velocity * exposure`.
///
/// Fits the full OLS model (intercept, velocity, group dummies, per-group
/// velocity slopes) against the parallel-slope reduction and F-tests the
/// interaction block. `exposure` holds the categorical group label of each
/// observation.
pub fn ancova_interaction(contrast: &[f64], velocity: &[f64], exposure: &[String]) -> Result<AncovaResult> {
    let n = contrast.len();
    if velocity.len() != n || exposure.len() != n {
        return Err(MleError::InvalidInput("ANCOVA inputs must have equal lengths".into()));
    }
    let mut groups: Vec<&String> = Vec::new();
    for g in exposure {
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    let g = groups.len();
    if g < 2 {
        return Err(MleError::InvalidInput("ANCOVA needs at least 2 exposure groups".into()));
    }
    let p_full = 2 * g;
    if n <= p_full {
        return Err(MleError::InvalidInput(format!(
            "ANCOVA needs more than {p_full} observations for {g} groups, got {n}"
        )));
    }

    // Full design: intercept, velocity, g-1 dummies, g-1 interaction columns.
    let mut x_full = vec![vec![0.0; p_full]; n];
    let mut x_red = vec![vec![0.0; g + 1]; n];
    for i in 0..n {
        let gi = groups.iter().position(|s| **s == exposure[i]).unwrap();
        x_full[i][0] = 1.0;
        x_full[i][1] = velocity[i];
        x_red[i][0] = 1.0;
        x_red[i][1] = velocity[i];
        if gi > 0 {
            x_full[i][1 + gi] = 1.0;
            x_full[i][g + gi] = velocity[i];
            x_red[i][1 + gi] = 1.0;
        }
    }

    let rss_full = ols_rss(&x_full, contrast)?;
    let rss_red = ols_rss(&x_red, contrast)?;
    let df_num = g - 1;
    let df_den = n - p_full;
    let f = ((rss_red - rss_full) / df_num as f64) / (rss_full / df_den as f64);

    let mean = contrast.iter().sum::<f64>() / n as f64;
    let tss: f64 = contrast.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss_full / tss } else { 0.0 };

    let fdist = FisherSnedecor::new(df_num as f64, df_den as f64)
        .map_err(|e| MleError::InvalidInput(format!("F distribution: {e}")))?;
    let p = 1.0 - fdist.cdf(f.max(0.0));
    Ok(AncovaResult { f, df_num, df_den, p, r_squared, n_groups: g })
}

/// Residual sum of squares of an OLS fit via normal equations.
fn ols_rss(x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let n = x.len();
    let p = x[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for i in 0..n {
        for a in 0..p {
            xty[a] += x[i][a] * y[i];
            for b in a..p {
                xtx[a][b] += x[i][a] * x[i][b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[a][b] = xtx[b][a];
        }
    }
    let beta = solve_linear(xtx, xty)
        .ok_or_else(|| MleError::InvalidInput("singular design matrix in OLS".into()))?;
    let mut rss = 0.0;
    for i in 0..n {
        let pred: f64 = (0..p).map(|a| beta[a] * x[i][a]).sum();
        let r = y[i] - pred;
        rss += r * r;
    }
    Ok(rss)
}

/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let s: f64 = ((col + 1)..n).map(|k| a[col][k] * x[k]).sum();
        x[col] = (b[col] - s) / a[col][col];
    }
    Some(x)
}

/// One output row of a comparison family.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub baseline: String,
    pub comparison: String,
    pub result: PairedComparison,
    pub p_adj: f64,
}

/// Runs all comparisons of one family against a baseline group and applies
/// Holm-Bonferroni within the family.
pub fn compare_family(
    records: &[LongRecord],
    baseline: &str,
    comparisons: &[&str],
    alpha: f64,
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(comparisons.len());
    for (k, comp) in comparisons.iter().enumerate() {
        let s = PairedSample::from_records(records, baseline, comp)?;
        let result = paired_compare(&s, alpha, seed.wrapping_add(k as u64))?;
        rows.push(ComparisonRow {
            baseline: baseline.to_string(),
            comparison: comp.to_string(),
            result,
            p_adj: 0.0,
        });
    }
    let raws: Vec<f64> = rows.iter().map(|r| r.result.p_raw).collect();
    for (row, adj) in rows.iter_mut().zip(holm_bonferroni(&raws)) {
        row.p_adj = adj;
    }
    Ok(rows)
}

/// Serializes comparison rows as CSV.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out =
        String::from("baseline,comparison,n,delta_mu,ci_low,ci_high,p_sw,test,p_raw,p_adj,d_z\n");
    for r in rows {
        let c = &r.result;
        out.push_str(&format!(
            "{},{},{},{:.5},{:.3},{:.3},{:.3},{},{},{},{:.3}\n",
            r.baseline,
            r.comparison,
            c.n,
            c.delta_mu,
            c.ci_low,
            c.ci_high,
            c.p_sw,
            c.test,
            fmt_p(c.p_raw),
            fmt_p(r.p_adj),
            c.d_z
        ));
    }
    out
}

/// Fixed-point p-value formatting with a scientific fallback below 1e-3.
fn fmt_p(p: f64) -> String {
    if p >= 1e-3 {
        format!("{p:.3}")
    } else {
        format!("{p:.3e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen reference values from an independent statistics package.
    const SW_NORMAL_N12: [f64; 12] = [
        0.3047, -1.04, 0.7505, 0.9406, -1.951, -1.3022, 0.1278, -0.3162, -0.0168, -0.853, 0.8794,
        0.7778,
    ];
    const SW_NORMAL_N20: [f64; 20] = [
        2.033, 2.5636, 2.2338, 1.5704, 2.1844, 1.5206, 2.4392, 1.975, 1.9076, 1.6595, 2.6113,
        1.9227, 1.7858, 1.8239, 2.2662, 2.1827, 2.2064, 2.2154, 3.0708, 1.7968,
    ];
    const SW_BIMODAL_N30: [f64; 30] = [
        -3.1537, -3.2441, -2.8152, -2.6613, -3.0342, -3.252, -3.2473, -2.8048, -2.777, -2.8371,
        -3.1997, -2.9304, -2.965, -2.9344, -2.7386, 3.0671, 3.2037, 3.0203, 3.0867, 3.1894,
        2.5629, 2.9041, 2.8589, 2.8083, 2.9175, 3.4485, 2.7403, 3.2905, 2.4951, 2.8995,
    ];
    const SW_EXP_N25: [f64; 25] = [
        2.1067, 1.6449, 1.0435, 0.5925, 0.0445, 0.9566, 0.6214, 1.508, 2.028, 0.3321, 0.0498,
        0.9248, 2.5534, 0.8211, 2.1309, 0.753, 1.314, 0.2888, 0.1344, 0.1425, 0.1177, 0.0547,
        1.7166, 0.4486, 0.3861,
    ];

    #[test]
    fn shapiro_wilk_matches_reference() {
        let cases: [(&[f64], f64, f64); 4] = [
            (&SW_NORMAL_N12, 0.9212514215, 0.2964475333),
            (&SW_NORMAL_N20, 0.9571795582, 0.4891577493),
            (&SW_BIMODAL_N30, 0.7047096490, 0.0000018282),
            (&SW_EXP_N25, 0.9065493223, 0.0255464131),
        ];
        for (v, w_ref, p_ref) in cases {
            let (w, p) = shapiro_wilk(v).unwrap();
            assert!((w - w_ref).abs() < 1e-6, "W {w} vs {w_ref}");
            assert!((p - p_ref).abs() < 2e-5, "p {p} vs {p_ref}");
        }
    }

    #[test]
    fn shapiro_wilk_rejects_degenerate_input() {
        assert!(shapiro_wilk(&[1.0, 2.0]).is_err());
        assert!(shapiro_wilk(&[3.0; 10]).is_err());
    }

    #[test]
    fn wilcoxon_exact_matches_reference() {
        let d1 = [
            0.5125, 0.9807, 0.9465, 1.1654, 0.4015, 0.0767, 0.4203, -1.1873, -0.9471, -0.8227,
            -0.4972, 0.8998,
        ];
        let (w, p) = wilcoxon_signed_rank(&d1).unwrap();
        assert_eq!(w, 31.0);
        assert!((p - 0.5693359375).abs() < 1e-12, "p {p}");

        let d2 = [
            -0.7055, -0.1782, 1.4992, -0.1563, 0.9375, -0.7336, -0.0054, -0.75, -0.139, 1.0403,
            -1.5273, 0.6344, 0.4377, -0.3941, -1.2461, 0.2721, -0.3295, 0.4327,
        ];
        let (w, p) = wilcoxon_signed_rank(&d2).unwrap();
        assert_eq!(w, 78.0);
        assert!((p - 0.76602935791).abs() < 1e-10, "p {p}");
    }

    #[test]
    fn wilcoxon_normal_approx_matches_reference() {
        let d3 = [
            0.3219, 1.9018, 0.0606, -0.7235, 0.4793, 0.52, 1.6592, 1.1351, 0.6569, 1.7633,
            -0.8888, -0.3398, -0.6266, -0.0898, -1.0767, 0.9352, 0.0778, -1.1708, -0.7156, 0.6135,
            1.1381, 2.2967, 3.2139, 0.7144, -0.6895, -1.832, 0.5677, -0.5129, -0.1154, -0.3121,
        ];
        let (w, p) = wilcoxon_signed_rank(&d3).unwrap();
        assert_eq!(w, 182.0);
        assert!((p - 0.303753730350).abs() < 1e-9, "p {p}");
    }

    #[test]
    fn paired_t_branch_matches_closed_form() {
        let a: Vec<f64> = vec![1.2, 0.8, 1.5, 1.1, 0.9, 1.3, 1.0, 1.4, 0.7, 1.6];
        let d: Vec<f64> = vec![
            0.5305, 0.396, 0.5751, 0.5941, 0.3049, 0.3698, 0.5128, 0.4684, 0.4983, 0.4147,
        ];
        let b: Vec<f64> = a.iter().zip(&d).map(|(x, dd)| x + dd).collect();
        let s = PairedSample::new("a", "b", a.clone(), b.clone()).unwrap();
        let r = paired_compare(&s, 0.05, 7).unwrap();
        assert_eq!(r.test, TestKind::PairedT);

        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y - x).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let se = sd / n.sqrt();
        let t_dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
        let t = mean / se;
        let p = 2.0 * (1.0 - t_dist.cdf(t.abs()));
        let tcrit = t_dist.inverse_cdf(0.975);

        assert!((r.delta_mu - mean).abs() < 1e-10);
        assert!((r.p_raw - p).abs() < 1e-10);
        assert!((r.ci_low - (mean - tcrit * se)).abs() < 1e-10);
        assert!((r.ci_high - (mean + tcrit * se)).abs() < 1e-10);
        assert!((r.d_z - mean / sd).abs() < 1e-10);
    }

    #[test]
    fn identical_vectors_are_trivial() {
        let v = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let s = PairedSample::new("a", "b", v.clone(), v).unwrap();
        let r = paired_compare(&s, 0.05, 0).unwrap();
        assert_eq!(r.delta_mu, 0.0);
        assert_eq!(r.d_z, 0.0);
        assert_eq!(r.p_raw, 1.0);
    }

    #[test]
    fn paired_compare_is_antisymmetric() {
        // Normal-ish differences: t branch.
        let a = vec![0.3, 0.8, 0.5, 0.9, 0.2, 0.7, 0.4, 0.6, 0.55, 0.35];
        let b = vec![0.9, 1.1, 0.8, 1.5, 0.6, 1.2, 0.7, 1.3, 0.95, 0.85];
        let fwd = PairedSample::new("a", "b", a.clone(), b.clone()).unwrap();
        let rev = PairedSample::new("b", "a", b, a).unwrap();
        let rf = paired_compare(&fwd, 0.05, 3).unwrap();
        let rr = paired_compare(&rev, 0.05, 3).unwrap();
        assert!((rf.delta_mu + rr.delta_mu).abs() < 1e-12);
        assert!((rf.d_z + rr.d_z).abs() < 1e-12);
        assert!((rf.p_raw - rr.p_raw).abs() < 1e-12);
        assert_eq!(rf.test, rr.test);

        // Bimodal differences: Wilcoxon branch; p symmetric there too.
        let a2: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        let b2: Vec<f64> =
            a2.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 3.0 + 0.01 * i as f64 } else { -3.0 + 0.013 * i as f64 }).collect();
        let fwd = PairedSample::new("a", "b", a2.clone(), b2.clone()).unwrap();
        let rev = PairedSample::new("b", "a", b2, a2).unwrap();
        let rf = paired_compare(&fwd, 0.05, 3).unwrap();
        let rr = paired_compare(&rev, 0.05, 3).unwrap();
        assert_eq!(rf.test, TestKind::Wilcoxon);
        assert!((rf.delta_mu + rr.delta_mu).abs() < 1e-12);
        assert!((rf.p_raw - rr.p_raw).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_ci_is_seed_deterministic() {
        let a2: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        let b2: Vec<f64> = a2
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 3.0 + 0.01 * i as f64 } else { -3.0 + 0.013 * i as f64 })
            .collect();
        let s = PairedSample::new("a", "b", a2, b2).unwrap();
        let r1 = paired_compare(&s, 0.05, 11).unwrap();
        let r2 = paired_compare(&s, 0.05, 11).unwrap();
        let r3 = paired_compare(&s, 0.05, 12).unwrap();
        assert_eq!(r1.test, TestKind::Wilcoxon);
        assert_eq!(r1.ci_low, r2.ci_low);
        assert_eq!(r1.ci_high, r2.ci_high);
        assert!(r1.ci_low != r3.ci_low || r1.ci_high != r3.ci_high);
        assert!(r1.ci_low < r1.delta_mu && r1.delta_mu < r1.ci_high);
    }

    #[test]
    fn holm_basics() {
        assert_eq!(holm_bonferroni(&[0.03]), vec![0.03]);
        let adj = holm_bonferroni(&[0.01, 0.04]);
        assert!((adj[0] - 0.02).abs() < 1e-15);
        assert!((adj[1] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn holm_seven_way_family() {
        // Seven raw p-values from one comparison family; expected adjusted
        // values at 3 decimals after step-down with capping.
        let raw = [0.516, 0.653, 0.001143, 0.032, 0.0015, 0.005, 0.072];
        let expected = [1.000, 1.000, 0.008, 0.128, 0.009, 0.025, 0.216];
        let adj = holm_bonferroni(&raw);
        for (i, (a, e)) in adj.iter().zip(&expected).enumerate() {
            assert!(
                ((a * 1000.0).round() / 1000.0 - e).abs() < 1e-12,
                "index {i}: adjusted {a} rounds away from {e}"
            );
        }
        // Order-preserving and elementwise >= raw.
        for i in 0..raw.len() {
            assert!(adj[i] >= raw[i]);
            for j in 0..raw.len() {
                if raw[i] < raw[j] {
                    assert!(adj[i] <= adj[j]);
                }
            }
        }
    }

    #[test]
    fn ancova_parallel_vs_divergent_slopes() {
        let groups = ["g1", "g2", "g3", "g4", "g5", "g6"];
        let mut vel = Vec::new();
        let mut exp = Vec::new();
        let mut y_par = Vec::new();
        let mut y_div = Vec::new();
        for (gi, g) in groups.iter().enumerate() {
            for k in 0..10 {
                let v = 1.0 + k as f64;
                // Shared jitter pattern: nonzero residuals without any
                // group-by-velocity structure in the parallel case.
                let noise = 0.05 * (k as f64 * 0.7).sin();
                vel.push(v);
                exp.push(g.to_string());
                y_par.push(2.0 * v + gi as f64 * 0.5 + noise);
                y_div.push((1.0 + gi as f64) * v + noise);
            }
        }
        let par = ancova_interaction(&y_par, &vel, &exp).unwrap();
        assert_eq!((par.df_num, par.df_den), (5, 48));
        assert!(par.p > 0.5, "parallel p {}", par.p);

        let div = ancova_interaction(&y_div, &vel, &exp).unwrap();
        assert!(div.p < 1e-6, "divergent p {}", div.p);
        assert!(div.f > 100.0);
        assert!(div.r_squared > 0.99);
    }

    #[test]
    fn long_csv_pairing_keeps_mutual_ids_only() {
        let csv = "sample_id,group,value\n\
                   s1,wle,0.10\ns2,wle,0.20\ns3,wle,0.30\ns4,wle,0.40\n\
                   s1,se,0.35\ns2,se,0.45\ns4,se,0.55\ns5,se,0.65\n";
        let records = parse_long_csv(csv).unwrap();
        assert_eq!(records.len(), 8);
        let s = PairedSample::from_records(&records, "wle", "se").unwrap();
        assert_eq!(s.a, vec![0.10, 0.20, 0.40]);
        assert_eq!(s.b, vec![0.35, 0.45, 0.55]);
        assert!(parse_long_csv("bad,header\n").is_err());
    }

    #[test]
    fn family_csv_output_shape() {
        let mut records = Vec::new();
        for i in 0..10 {
            let base = 0.3 + 0.02 * i as f64;
            records.push(LongRecord { sample_id: format!("s{i}"), group: "wle".into(), value: base });
            records.push(LongRecord {
                sample_id: format!("s{i}"),
                group: "se".into(),
                value: base + 0.15 + 0.01 * ((i as f64) * 1.3).sin(),
            });
            records.push(LongRecord {
                sample_id: format!("s{i}"),
                group: "nbi".into(),
                value: base + 0.01 * ((i as f64) * 2.1).cos(),
            });
        }
        let rows = compare_family(&records, "wle", &["se", "nbi"], 0.05, 42).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.p_adj >= r.result.p_raw));
        let csv = comparison_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "baseline,comparison,n,delta_mu,ci_low,ci_high,p_sw,test,p_raw,p_adj,d_z"
        );
        assert_eq!(lines.count(), 2);
    }
}
