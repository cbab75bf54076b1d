//! Trace and interpolation-regression operators.
//!
//! A [`GridFunction`] turns a cloud of `(site, value)` pairs into a callable
//! function. Three reconstructions are available:
//!
//! * `Linear1d`: piecewise-linear through sorted scalar sites;
//! * `Nearest`: value of the closest site (lowest sorted site on ties);
//! * `Kernel`: Nadaraya-Watson mean with a Gaussian kernel.
//!
//! Queries outside the sites' bounding box are clamped onto it. Duplicate
//! sites are merged by averaging their values for the interpolating methods.

use std::cmp::Ordering;
use std::path::Path;

use crate::csvio::{fmt_f64, CsvDoc, CsvTable};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpMethod {
    Linear1d,
    Nearest,
    Kernel,
}

impl InterpMethod {
    pub fn name(self) -> &'static str {
        match self {
            InterpMethod::Linear1d => "linear-1d",
            InterpMethod::Nearest => "nearest",
            InterpMethod::Kernel => "kernel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear-1d" | "linear" => Ok(InterpMethod::Linear1d),
            "nearest" | "nearest-neighbor" => Ok(InterpMethod::Nearest),
            "kernel" => Ok(InterpMethod::Kernel),
            other => Err(Error::invalid(format!("unknown interpolation method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpConfig {
    pub method: InterpMethod,
    /// Kernel bandwidth; `None` selects the rule `1.06 * sigma * n^(-1/5)`.
    pub bandwidth: Option<f64>,
}

impl InterpConfig {
    pub const LINEAR: InterpConfig = InterpConfig {
        method: InterpMethod::Linear1d,
        bandwidth: None,
    };
    pub const NEAREST: InterpConfig = InterpConfig {
        method: InterpMethod::Nearest,
        bandwidth: None,
    };
    pub const KERNEL: InterpConfig = InterpConfig {
        method: InterpMethod::Kernel,
        bandwidth: None,
    };

    pub fn kernel(bandwidth: f64) -> Self {
        InterpConfig {
            method: InterpMethod::Kernel,
            bandwidth: Some(bandwidth),
        }
    }

    fn validate(&self) -> Result<()> {
        match self.bandwidth {
            Some(h) if !(h > 0.0 && h.is_finite()) => {
                Err(Error::invalid(format!("kernel bandwidth must be positive, got {h}")))
            }
            _ => Ok(()),
        }
    }
}

/// Kernel weights below `exp(-KERNEL_CUTOFF)` relative to the nearest site
/// are dropped.
const KERNEL_CUTOFF: f64 = 37.0;

/// A function reconstructed from sampled sites.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    site_dim: usize,
    value_dim: usize,
    /// Sorted (lexicographically) site coordinates, row-major.
    sites: Vec<f64>,
    values: Vec<f64>,
    config: InterpConfig,
    bandwidth: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    degenerate: bool,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Silverman-style bandwidth `1.06 * sigma * n^(-1/5)`, with `sigma` the
/// root-mean per-coordinate variance of the sites. Returns `None` when all
/// sites coincide.
pub fn default_bandwidth(sites: &[f64], site_dim: usize) -> Option<f64> {
    let n = sites.len() / site_dim;
    if n < 2 {
        return None;
    }
    let mut var_sum = 0.0;
    for c in 0..site_dim {
        let mean = (0..n).map(|i| sites[i * site_dim + c]).sum::<f64>() / n as f64;
        var_sum += (0..n)
            .map(|i| (sites[i * site_dim + c] - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
    }
    let sigma = (var_sum / site_dim as f64).sqrt();
    if sigma > 0.0 {
        Some(1.06 * sigma * (n as f64).powf(-0.2))
    } else {
        None
    }
}

impl GridFunction {
    /// Fits a grid function to `n = sites.len() / site_dim` pairs.
    pub fn fit(
        sites: &[f64],
        site_dim: usize,
        values: &[f64],
        value_dim: usize,
        config: InterpConfig,
    ) -> Result<Self> {
        config.validate()?;
        if site_dim == 0 || value_dim == 0 {
            return Err(Error::invalid("site and value dimensions must be positive"));
        }
        if sites.is_empty() || sites.len() % site_dim != 0 {
            return Err(Error::invalid("grid needs at least one site"));
        }
        let n = sites.len() / site_dim;
        check_dim(n * value_dim, values.len())?;
        if config.method == InterpMethod::Linear1d && site_dim != 1 {
            return Err(Error::invalid("linear-1d interpolation needs scalar sites"));
        }
        if sites.iter().any(|v| !v.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite grid data".into()));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            lex_cmp(
                &sites[a * site_dim..(a + 1) * site_dim],
                &sites[b * site_dim..(b + 1) * site_dim],
            )
            .then(a.cmp(&b))
        });

        let merge = config.method != InterpMethod::Kernel;
        let mut s_out: Vec<f64> = Vec::with_capacity(sites.len());
        let mut v_out: Vec<f64> = Vec::with_capacity(values.len());
        let mut i = 0;
        while i < n {
            let a = order[i];
            let site = &sites[a * site_dim..(a + 1) * site_dim];
            let mut j = i + 1;
            if merge {
                while j < n {
                    let b = order[j];
                    if lex_cmp(site, &sites[b * site_dim..(b + 1) * site_dim]) != Ordering::Equal {
                        break;
                    }
                    j += 1;
                }
            }
            s_out.extend_from_slice(site);
            let count = (j - i) as f64;
            for c in 0..value_dim {
                let sum: f64 = order[i..j].iter().map(|&k| values[k * value_dim + c]).sum();
                v_out.push(if j - i == 1 { sum } else { sum / count });
            }
            i = j;
        }

        let mut lo = vec![f64::INFINITY; site_dim];
        let mut hi = vec![f64::NEG_INFINITY; site_dim];
        for row in s_out.chunks(site_dim) {
            for c in 0..site_dim {
                lo[c] = lo[c].min(row[c]);
                hi[c] = hi[c].max(row[c]);
            }
        }
        let auto = default_bandwidth(&s_out, site_dim);
        let degenerate = lo == hi;
        let bandwidth = config.bandwidth.or(auto).unwrap_or(1.0);
        Ok(GridFunction {
            site_dim,
            value_dim,
            sites: s_out,
            values: v_out,
            config,
            bandwidth,
            lo,
            hi,
            degenerate,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len() / self.site_dim
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site_dim(&self) -> usize {
        self.site_dim
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn config(&self) -> InterpConfig {
        self.config
    }

    /// Bandwidth actually used by the kernel method.
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// All sites coincide, so the function is the constant mean value.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn site(&self, i: usize) -> &[f64] {
        &self.sites[i * self.site_dim..(i + 1) * self.site_dim]
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.value_dim..(i + 1) * self.value_dim]
    }

    /// Evaluates at `x`, rejecting non-finite or mis-sized queries.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.site_dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite query {x:?}")));
        }
        let mut out = vec![0.0; self.value_dim];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into `out` (length `value_dim`).
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        if self.site_dim == 1 {
            let q = x[0].clamp(self.lo[0], self.hi[0]);
            match self.config.method {
                InterpMethod::Linear1d => self.linear_1d(q, out),
                InterpMethod::Nearest => {
                    let i = self.nearest_scalar(q);
                    out.copy_from_slice(self.value(i));
                }
                InterpMethod::Kernel => self.kernel_scalar(q, out),
            }
        } else {
            let q: Vec<f64> = x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .map(|(v, (l, h))| v.clamp(*l, *h))
                .collect();
            match self.config.method {
                InterpMethod::Nearest => {
                    let i = self.nearest_brute(&q);
                    out.copy_from_slice(self.value(i));
                }
                InterpMethod::Kernel => self.kernel_brute(&q, out),
                InterpMethod::Linear1d => unreachable!("rejected at fit"),
            }
        }
    }

    /// Index of the first site `>= q` (scalar sites).
    fn lower_bound(&self, q: f64) -> usize {
        self.sites.partition_point(|s| *s < q)
    }

    fn linear_1d(&self, q: f64, out: &mut [f64]) {
        let n = self.len();
        let i = self.lower_bound(q);
        if i < n && self.sites[i] == q {
            out.copy_from_slice(self.value(i));
            return;
        }
        // q lies strictly inside (s[i-1], s[i]) after clamping
        let (a, b) = (self.sites[i - 1], self.sites[i]);
        let theta = (q - a) / (b - a);
        let (va, vb) = (self.value(i - 1), self.value(i));
        for c in 0..self.value_dim {
            out[c] = va[c] + theta * (vb[c] - va[c]);
        }
    }

    fn nearest_scalar(&self, q: f64) -> usize {
        let n = self.len();
        let i = self.lower_bound(q);
        if i == 0 {
            return 0;
        }
        if i == n {
            return n - 1;
        }
        if q - self.sites[i - 1] <= self.sites[i] - q {
            i - 1
        } else {
            i
        }
    }

    fn nearest_brute(&self, q: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.len() {
            let d = sq_dist(self.site(i), q);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn kernel_scalar(&self, q: f64, out: &mut [f64]) {
        let n = self.len();
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let i = self.lower_bound(q);
        let dmin = {
            let mut d = f64::INFINITY;
            if i < n {
                d = d.min((self.sites[i] - q).abs());
            }
            if i > 0 {
                d = d.min((q - self.sites[i - 1]).abs());
            }
            d * d
        };
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut wsum = 0.0;
        let mut add = |j: usize, out: &mut [f64]| -> bool {
            let d = self.sites[j] - q;
            let e = (d * d - dmin) * inv;
            if e > KERNEL_CUTOFF {
                return false;
            }
            let w = (-e).exp();
            wsum += w;
            for (o, v) in out.iter_mut().zip(self.value(j)) {
                *o += w * v;
            }
            true
        };
        // left side in decreasing site order, then right side ascending;
        // both runs stop once the weight drops below the cutoff
        let mut j = i;
        while j > 0 {
            j -= 1;
            if !add(j, out) {
                break;
            }
        }
        for j in i..n {
            if !add(j, out) {
                break;
            }
        }
        for o in out.iter_mut() {
            *o /= wsum;
        }
    }

    fn kernel_brute(&self, q: &[f64], out: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let d2: Vec<f64> = (0..self.len()).map(|i| sq_dist(self.site(i), q)).collect();
        let dmin = d2.iter().copied().fold(f64::INFINITY, f64::min);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut wsum = 0.0;
        for (i, d) in d2.iter().enumerate() {
            let e = (d - dmin) * inv;
            if e > KERNEL_CUTOFF {
                continue;
            }
            let w = (-e).exp();
            wsum += w;
            for (o, v) in out.iter_mut().zip(self.value(i)) {
                *o += w * v;
            }
        }
        for o in out.iter_mut() {
            *o /= wsum;
        }
    }

    /// Grid CSV with one `site*` column per coordinate and one `value*`
    /// column per output component.
    pub fn to_csv(&self) -> CsvDoc {
        let mut header = Vec::new();
        header.extend(column_names("site", self.site_dim));
        header.extend(column_names("value", self.value_dim));
        let mut doc = CsvDoc::with_header(
            &format!(
                "grid/v1 method={} bandwidth={}",
                self.config.method.name(),
                fmt_f64(self.bandwidth)
            ),
            header,
        );
        for i in 0..self.len() {
            let row: Vec<String> = self
                .site(i)
                .iter()
                .chain(self.value(i))
                .map(|v| fmt_f64(*v))
                .collect();
            doc.row(&row);
        }
        doc
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = CsvTable::read(path)?;
        let meta = table.comments.first().cloned().unwrap_or_default();
        let field = |key: &str| -> Option<String> {
            meta.split_whitespace()
                .find_map(|tok| tok.strip_prefix(key).map(str::to_string))
        };
        let method = InterpMethod::parse(&field("method=").ok_or_else(|| table.error(1, "missing method"))?)?;
        let bandwidth = match field("bandwidth=") {
            Some(b) => Some(table.f64_at(1, &b)?),
            None => None,
        };
        let site_dim = table.header.iter().filter(|h| h.starts_with("site")).count();
        let value_dim = table.header.iter().filter(|h| h.starts_with("value")).count();
        if site_dim == 0 || value_dim == 0 || site_dim + value_dim != table.header.len() {
            return Err(table.error(1, "expected site and value columns"));
        }
        let mut sites = Vec::new();
        let mut values = Vec::new();
        for (line, row) in &table.rows {
            for (i, f) in row.iter().enumerate() {
                let v = table.f64_at(*line, f)?;
                if i < site_dim {
                    sites.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        let config = InterpConfig {
            method,
            bandwidth: if method == InterpMethod::Kernel { bandwidth } else { None },
        };
        GridFunction::fit(&sites, site_dim, &values, value_dim, config)
    }
}

/// `["x"]` for one component, `["x0", "x1", ...]` otherwise.
pub fn column_names(prefix: &str, dim: usize) -> Vec<String> {
    if dim == 1 {
        vec![prefix.to_string()]
    } else {
        (0..dim).map(|i| format!("{prefix}{i}")).collect()
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Trace of `f` on `sites`: the grid function whose values are `f(site)`.
pub fn trace(
    f: impl Fn(&[f64]) -> Vec<f64>,
    sites: &[f64],
    site_dim: usize,
    config: InterpConfig,
) -> Result<GridFunction> {
    if sites.is_empty() || site_dim == 0 || sites.len() % site_dim != 0 {
        return Err(Error::invalid("trace needs at least one site"));
    }
    let mut values = Vec::new();
    let mut value_dim = None;
    for s in sites.chunks(site_dim) {
        let v = f(s);
        match value_dim {
            None => value_dim = Some(v.len()),
            Some(d) => check_dim(d, v.len())?,
        }
        values.extend(v);
    }
    GridFunction::fit(sites, site_dim, &values, value_dim.unwrap_or(1), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn eval1(g: &GridFunction, x: f64) -> f64 {
        g.eval(&[x]).unwrap()[0]
    }

    #[test]
    fn trace_examples() {
        let id = trace(|x| x.to_vec(), &[0.0, 1.0, 2.0], 1, InterpConfig::LINEAR).unwrap();
        assert_eq!((0..3).map(|i| id.value(i)[0]).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
        let k = trace(|x| vec![12.0 * (x[0] - 2.0).powi(2)], &[0.0, 2.0], 1, InterpConfig::LINEAR).unwrap();
        assert_eq!(k.value(0)[0], 48.0);
        assert_eq!(k.value(1)[0], 0.0);
        let seven = trace(|_| vec![7.0], &[0.3, -1.0, 4.0, 0.3], 1, InterpConfig::NEAREST).unwrap();
        assert!((0..seven.len()).all(|i| seven.value(i)[0] == 7.0));
        assert!(trace(|x| x.to_vec(), &[], 1, InterpConfig::LINEAR).is_err());
    }

    #[test]
    fn linear_midpoint_and_clamp() {
        let g = GridFunction::fit(&[0.0, 2.0], 1, &[0.0, 4.0], 1, InterpConfig::LINEAR).unwrap();
        assert_eq!(eval1(&g, 1.0), 2.0);
        assert_eq!(eval1(&g, 3.0), 4.0);
        assert_eq!(eval1(&g, -3.0), 0.0);
        assert!(g.eval(&[f64::NAN]).is_err());
        assert!(g.eval(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn linear_rejects_vector_sites() {
        assert!(GridFunction::fit(&[0.0, 1.0], 2, &[1.0], 1, InterpConfig::LINEAR).is_err());
        assert!(GridFunction::fit(&[0.0], 1, &[1.0], 1, InterpConfig::kernel(0.0)).is_err());
    }

    #[test]
    fn duplicates_are_averaged() {
        let g = GridFunction::fit(&[1.0, 0.0, 1.0], 1, &[2.0, 0.0, 4.0], 1, InterpConfig::LINEAR).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(eval1(&g, 1.0), 3.0);
        let single = GridFunction::fit(&[1.0, 1.0], 1, &[2.0, 4.0], 1, InterpConfig::LINEAR).unwrap();
        assert!(single.is_degenerate());
        assert_eq!(eval1(&single, -5.0), 3.0);
        let kern = GridFunction::fit(&[1.0, 1.0], 1, &[2.0, 4.0], 1, InterpConfig::KERNEL).unwrap();
        assert_eq!(eval1(&kern, 0.0), 3.0);
    }

    #[test]
    fn nearest_ties_pick_lower_site() {
        let g = GridFunction::fit(&[2.0, 0.0], 1, &[20.0, 0.0], 1, InterpConfig::NEAREST).unwrap();
        assert_eq!(eval1(&g, 1.0), 0.0);
        assert_eq!(eval1(&g, 1.0 + 1e-12), 20.0);
        let g2 = GridFunction::fit(&[0.0, 0.0, 2.0, 0.0], 2, &[1.0, 2.0], 1, InterpConfig::NEAREST).unwrap();
        assert_eq!(g2.eval(&[1.0, 0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn kernel_with_vanishing_bandwidth_is_nearest_neighbor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let dim = rng.gen_range(1..=3);
            let n = rng.gen_range(1..30);
            let sites: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let nn = GridFunction::fit(&sites, dim, &values, 1, InterpConfig::NEAREST).unwrap();
            let kn = GridFunction::fit(&sites, dim, &values, 1, InterpConfig::kernel(1e-9)).unwrap();
            let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.2..1.2)).collect();
            assert_eq!(nn.eval(&q).unwrap(), kn.eval(&q).unwrap());
        }
    }

    #[test]
    fn kernel_window_matches_full_sum() {
        // the scalar fast path agrees with brute-force summation
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let sites: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..2.0)).collect();
        let values: Vec<f64> = sites.iter().map(|s| (3.0 * s).sin()).collect();
        let g = GridFunction::fit(&sites, 1, &values, 1, InterpConfig::kernel(0.05)).unwrap();
        for _ in 0..100 {
            let q: f64 = rng.gen_range(0.0..2.0);
            let (mut num, mut den) = (0.0, 0.0);
            for (s, v) in sites.iter().zip(&values) {
                let w = (-(s - q).powi(2) / (2.0 * 0.05 * 0.05)).exp();
                num += w * v;
                den += w;
            }
            assert!((eval1(&g, q) - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn default_bandwidth_rule() {
        let sites = [0.0, 1.0, 2.0, 3.0];
        let sigma = (5.0f64 / 3.0).sqrt();
        let h = default_bandwidth(&sites, 1).unwrap();
        assert!((h - 1.06 * sigma * 4f64.powf(-0.2)).abs() < 1e-15);
        assert_eq!(default_bandwidth(&[1.0, 1.0], 1), None);
    }

    #[test]
    fn csv_round_trip() {
        let g = GridFunction::fit(&[0.0, 0.5, 2.0], 1, &[1.0, -1.0, 0.25], 1, InterpConfig::kernel(0.3)).unwrap();
        let dir = std::env::temp_dir().join(format!("stochctl-grid-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("g.csv");
        g.to_csv().write(&p).unwrap();
        assert_eq!(GridFunction::read_csv(&p).unwrap(), g);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().nth(1), Some("site,value"));
        std::fs::remove_dir_all(&dir).ok();
    }

    fn sorted_grid() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..20)
    }

    proptest! {
        #[test]
        fn interpolating_methods_reproduce_trace(pairs in sorted_grid()) {
            let mut sites: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            sites.sort_by(f64::total_cmp);
            sites.dedup();
            let values: Vec<f64> = sites.iter().zip(&pairs).map(|(_, p)| p.1).collect();
            for cfg in [InterpConfig::LINEAR, InterpConfig::NEAREST] {
                let g = GridFunction::fit(&sites, 1, &values, 1, cfg).unwrap();
                for (s, v) in sites.iter().zip(&values) {
                    prop_assert_eq!(eval1(&g, *s), *v);
                }
            }
        }

        #[test]
        fn linear_preserves_monotonicity(pairs in sorted_grid(), qs in proptest::collection::vec(-12.0..12.0f64, 2..30)) {
            let mut sites: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            sites.sort_by(f64::total_cmp);
            sites.dedup();
            let mut values: Vec<f64> = sites.iter().zip(&pairs).map(|(_, p)| p.1).collect();
            values.sort_by(f64::total_cmp);
            let g = GridFunction::fit(&sites, 1, &values, 1, InterpConfig::LINEAR).unwrap();
            let mut qs = qs;
            qs.sort_by(f64::total_cmp);
            let ev: Vec<f64> = qs.iter().map(|q| eval1(&g, *q)).collect();
            prop_assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn positively_homogeneous_in_values(pairs in sorted_grid(), alpha in 0.0..5.0f64, q in -12.0..12.0f64) {
            let sites: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let values: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let scaled: Vec<f64> = values.iter().map(|v| alpha * v).collect();
            for cfg in [InterpConfig::LINEAR, InterpConfig::NEAREST, InterpConfig::KERNEL] {
                let g = GridFunction::fit(&sites, 1, &values, 1, cfg).unwrap();
                let h = GridFunction::fit(&sites, 1, &scaled, 1, cfg).unwrap();
                let (a, b) = (alpha * eval1(&g, q), eval1(&h, q));
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}
