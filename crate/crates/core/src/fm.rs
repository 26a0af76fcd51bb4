//! Fortet–Mourier distance between finitely supported measures on
//! `(X, ρ_{X,c})`.
//!
//! `d_FM(μ, ν) = sup { ⟨f, μ − ν⟩ : 0 ≤ f ≤ 1, |f(x) − f(z)| ≤ ρ(x, z) }` is a
//! linear program in the values of `f` on the joint support. Since `f ↦ 1 − f`
//! preserves the constraint set and flips the sign of the objective, the
//! signed supremum already equals the supremum of the absolute value.
//!
//! The solver only keeps constraints that are not implied by others:
//! pairs with `ρ ≥ 1` are implied by the box, and in dimension one a chain of
//! neighbouring atoms implies every longer constraint. The constraint graph
//! then splits into connected components that are solved independently. A
//! component that is a path is solved exactly by a dynamic program over
//! concave piecewise-linear value functions. Any other component goes to a
//! simplex solver.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::io::Read;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::state::{EmpiricalMeasure, HybridMetric, HybridState};

/// Joint support of two measures with the thinned constraint graph.
#[derive(Debug, Clone)]
pub struct FmProblem<T> {
    support: Vec<HybridState<T>>,
    mu: Vec<f64>,
    nu: Vec<f64>,
    metric: HybridMetric<T>,
    /// `(k, l, ρ(x_k, x_l))` with `k < l` and `ρ < 1`.
    edges: Vec<(usize, usize, f64)>,
}

impl<T: Real> FmProblem<T> {
    pub fn new(mu: &EmpiricalMeasure<T>, nu: &EmpiricalMeasure<T>, metric: &HybridMetric<T>) -> Result<Self> {
        if mu.is_empty() || nu.is_empty() {
            return Err(Error::Input("FM distance needs two nonempty measures".into()));
        }
        let d = mu.dim();
        crate::error::check_dim(d, nu.dim())?;
        metric.base.validate(d)?;

        let mut tagged: Vec<(&HybridState<T>, usize, f64)> = mu
            .atoms()
            .iter()
            .map(|(x, w)| (x, 0, w.as_f64()))
            .chain(nu.atoms().iter().map(|(x, w)| (x, 1, w.as_f64())))
            .collect();
        tagged.sort_by(|a, b| a.0.canonical_cmp(b.0));
        let mut support: Vec<HybridState<T>> = Vec::new();
        let mut w = [Vec::new(), Vec::new()];
        for (x, tag, wt) in tagged {
            if support.last().is_none_or(|s| s.canonical_cmp(x) != Ordering::Equal) {
                support.push(x.clone());
                w[0].push(0.0);
                w[1].push(0.0);
            }
            *w[tag].last_mut().unwrap() += wt;
        }
        let [mu_w, nu_w] = w;
        let mut p = Self { support, mu: mu_w, nu: nu_w, metric: metric.clone(), edges: Vec::new() };
        p.edges = p.build_edges();
        Ok(p)
    }

    pub fn support(&self) -> &[HybridState<T>] {
        &self.support
    }

    pub fn mu_weights(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu_weights(&self) -> &[f64] {
        &self.nu
    }

    pub fn metric(&self) -> &HybridMetric<T> {
        &self.metric
    }

    /// Constraint pairs kept after thinning.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    fn rho(&self, k: usize, l: usize) -> f64 {
        self.metric.eval(&self.support[k], &self.support[l]).as_f64()
    }

    /// Signed weights `μ − ν`, oriented canonically so that swapping the two
    /// measures yields the same program and hence the same value bit for bit.
    fn objective(&self) -> Vec<f64> {
        let flip = self
            .mu
            .iter()
            .zip(&self.nu)
            .find_map(|(a, b)| match a.total_cmp(b) {
                Ordering::Equal => None,
                o => Some(o == Ordering::Less),
            })
            .unwrap_or(false);
        let (a, b) = if flip { (&self.nu, &self.mu) } else { (&self.mu, &self.nu) };
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    fn build_edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.support.len();
        let mut edges = Vec::new();
        let mut push = |k: usize, l: usize, r: f64| {
            if r < 1.0 {
                edges.push((k.min(l), k.max(l), r));
            }
        };
        if self.support[0].dim() == 1 {
            // Support is sorted by regime then position: regimes are contiguous blocks.
            let mut blocks: Vec<(usize, usize)> = Vec::new();
            let mut start = 0;
            for k in 1..=n {
                if k == n || self.support[k].regime != self.support[start].regime {
                    blocks.push((start, k));
                    start = k;
                }
            }
            for &(a, b) in &blocks {
                for k in a..b.saturating_sub(1) {
                    push(k, k + 1, self.rho(k, k + 1));
                }
            }
            if blocks.len() > 1 && self.metric.c.as_f64() < 1.0 {
                // Across regimes the nearest atom on either side implies the rest.
                for &(a, b) in &blocks {
                    for &(oa, ob) in &blocks {
                        if (oa, ob) == (a, b) {
                            continue;
                        }
                        let other = &self.support[oa..ob];
                        for k in a..b {
                            let y = self.support[k].y[0];
                            let pos = other.partition_point(|s| s.y[0] < y);
                            for idx in [pos.checked_sub(1), (pos < other.len()).then_some(pos)].into_iter().flatten() {
                                push(k, oa + idx, self.rho(k, oa + idx));
                            }
                        }
                    }
                }
                edges.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
                edges.dedup_by(|x, y| (x.0, x.1) == (y.0, y.1));
            }
        } else {
            for k in 0..n {
                for l in (k + 1)..n {
                    push(k, l, self.rho(k, l));
                }
            }
        }
        edges
    }
}

/// Solves the FM linear program.
pub fn fm_distance<T: Real>(p: &FmProblem<T>) -> Result<T> {
    let g = p.objective();
    if g.iter().all(|&v| v == 0.0) {
        return Ok(T::zero());
    }
    let n = p.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(k, l, r) in &p.edges {
        adj[k].push((l, r));
        adj[l].push((k, r));
    }
    let mut seen = vec![false; n];
    let mut total = 0.0;
    let mut comp = Vec::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        comp.clear();
        comp.push(root);
        seen[root] = true;
        let mut head = 0;
        let mut n_edges = 0;
        while head < comp.len() {
            let k = comp[head];
            head += 1;
            n_edges += adj[k].len();
            for &(l, _) in &adj[k] {
                if !seen[l] {
                    seen[l] = true;
                    comp.push(l);
                }
            }
        }
        n_edges /= 2;
        let value = if comp.len() == 1 {
            g[root].max(0.0)
        } else if n_edges + 1 == comp.len() && comp.iter().all(|&k| adj[k].len() <= 2) {
            solve_path(&comp, &adj, &g)
        } else {
            solve_lp(&comp, &adj, &g)?
        };
        total += value;
    }
    if total > 1.0 + 1e-9 || !total.is_finite() {
        return Err(Error::Internal(format!("FM objective {total} outside [0, 1]")));
    }
    Ok(T::of(total.clamp(0.0, 1.0)))
}

/// `d_FM(μ, ν)` in one call.
pub fn fm_distance_between<T: Real>(
    mu: &EmpiricalMeasure<T>,
    nu: &EmpiricalMeasure<T>,
    metric: &HybridMetric<T>,
) -> Result<T> {
    fm_distance(&FmProblem::new(mu, nu, metric)?)
}

#[derive(Debug, Clone, Copy)]
struct Seg {
    slope: f64,
    len: f64,
}

/// Exact maximum of `Σ g_k f_k` over `f ∈ [0,1]^n` with
/// `|f_{k+1} − f_k| ≤ w_k` along a path.
///
/// `V_k(x)`, the best value of the first `k` nodes with `f_k = x`, is concave
/// and piecewise linear on `[0, 1]`. It is stored as slope segments split at
/// its argmax `m`: `left` holds the increasing part, `right` the rest, and all
/// stored slopes share the lazy offset `add`. `best` is `V_k(m)`.
fn solve_path(comp: &[usize], adj: &[Vec<(usize, f64)>], g: &[f64]) -> f64 {
    let start = *comp.iter().find(|&&k| adj[k].len() == 1).expect("a path has an endpoint");
    let (mut left, mut right) = (VecDeque::new(), VecDeque::new());
    let mut add = 0.0;
    let mut len_left = 0.0;
    let mut best = 0.0;
    let (mut prev, mut cur) = (usize::MAX, start);
    let mut window = None;
    loop {
        if let Some(w) = window {
            widen(&mut left, &mut right, &mut len_left, add, w);
        }
        let gk = g[cur];
        best += gk * len_left;
        add += gk;
        if window.is_none() {
            right.push_back(Seg { slope: 0.0, len: 1.0 });
        }
        while let Some(&s) = right.front() {
            if s.slope + add <= 0.0 {
                break;
            }
            best += (s.slope + add) * s.len;
            len_left += s.len;
            left.push_back(right.pop_front().unwrap());
        }
        while let Some(&s) = left.back() {
            if s.slope + add > 0.0 {
                break;
            }
            best -= (s.slope + add) * s.len;
            len_left -= s.len;
            right.push_front(left.pop_back().unwrap());
        }
        let next = adj[cur].iter().find(|&&(l, _)| l != prev);
        match next {
            Some(&(l, w)) => {
                window = Some(w.min(1.0));
                prev = cur;
                cur = l;
            }
            None => break,
        }
    }
    best
}

/// `V ↦ max_{|y − x| ≤ w} V(y)` restricted to `[0, 1]`: the increasing part
/// moves left by `w`, the rest moves right by `w`, a flat piece of length
/// `2w` fills the gap, and the overhang at both ends is cut.
fn widen(left: &mut VecDeque<Seg>, right: &mut VecDeque<Seg>, len_left: &mut f64, add: f64, w: f64) {
    if w <= 0.0 {
        return;
    }
    right.push_front(Seg { slope: -add, len: 2.0 * w });
    let mut rem = w;
    while rem > 0.0 {
        let from_left = !left.is_empty();
        let q = if from_left { left.front_mut() } else { right.front_mut() };
        let Some(s) = q else { break };
        let cut = s.len.min(rem);
        s.len -= cut;
        rem -= cut;
        let empty = s.len <= 0.0;
        if from_left {
            *len_left -= cut;
            if empty {
                left.pop_front();
            }
        } else if empty {
            right.pop_front();
        }
    }
    if left.is_empty() {
        *len_left = 0.0;
    }
    let mut rem = w;
    while rem > 0.0 {
        let from_right = !right.is_empty();
        let q = if from_right { right.back_mut() } else { left.back_mut() };
        let Some(s) = q else { break };
        let cut = s.len.min(rem);
        s.len -= cut;
        rem -= cut;
        let empty = s.len <= 0.0;
        if from_right {
            if empty {
                right.pop_back();
            }
        } else {
            *len_left -= cut;
            if empty {
                left.pop_back();
            }
        }
    }
}

fn solve_lp(comp: &[usize], adj: &[Vec<(usize, f64)>], g: &[f64]) -> Result<f64> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let mut local = std::collections::HashMap::with_capacity(comp.len());
    let vars: Vec<_> = comp
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            local.insert(k, i);
            lp.add_var(g[k], (0.0, 1.0))
        })
        .collect();
    for &k in comp {
        for &(l, r) in &adj[k] {
            if k < l {
                let (a, b) = (vars[local[&k]], vars[local[&l]]);
                lp.add_constraint([(a, 1.0), (b, -1.0)], ComparisonOp::Le, r);
                lp.add_constraint([(a, -1.0), (b, 1.0)], ComparisonOp::Le, r);
            }
        }
    }
    let sol = lp.solve().map_err(|e| Error::Internal(format!("FM linear program failed: {e}")))?;
    Ok(sol.objective().max(0.0))
}

/// Largest support the grid oracle accepts.
pub const ORACLE_MAX_SUPPORT: usize = 4;
/// Grid step of the oracle.
pub const ORACLE_STEP: f64 = 1e-3;

/// Brute-force FM distance for tiny supports.
///
/// Enumerates `f` on the grid `{0, h, …, 1}` for all but the last two atoms,
/// using every pairwise constraint relaxed by `h` so that rounding an optimal
/// `f` to the grid stays feasible. The last two values are chosen by scanning
/// the vertices of their feasible polygon. The result is within `h` of the
/// exact value.
pub fn fm_distance_oracle<T: Real>(p: &FmProblem<T>) -> Result<T> {
    let n = p.len();
    if n > ORACLE_MAX_SUPPORT {
        return Err(Error::Input(format!("oracle handles at most {ORACLE_MAX_SUPPORT} support points, got {n}")));
    }
    let h = ORACLE_STEP;
    let g = p.objective();
    let mut rho = vec![vec![0.0; n]; n];
    for (k, row) in rho.iter_mut().enumerate() {
        for (l, r) in row.iter_mut().enumerate() {
            *r = p.metric.eval(&p.support[k], &p.support[l]).as_f64() + h;
        }
    }
    let steps = (1.0 / h).round() as i64;
    let mut f = vec![0.0; n];
    let mut best = f64::NEG_INFINITY;
    oracle_rec(0, &mut f, &g, &rho, steps, h, &mut best);
    Ok(T::of(best.max(0.0)))
}

fn oracle_rec(k: usize, f: &mut [f64], g: &[f64], rho: &[Vec<f64>], steps: i64, h: f64, best: &mut f64) {
    let n = f.len();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for l in 0..k {
        lo = lo.max(f[l] - rho[k][l]);
        hi = hi.min(f[l] + rho[k][l]);
    }
    if lo > hi {
        return;
    }
    if k + 1 == n {
        f[k] = if g[k] > 0.0 { hi } else { lo };
        let v: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
        *best = best.max(v);
        return;
    }
    if k + 2 == n {
        last_two(k, f, g, rho, (lo, hi), best);
        return;
    }
    let first = ((lo / h).ceil() as i64).max(0);
    let last = ((hi / h).floor() as i64).min(steps);
    for s in first..=last {
        f[k] = s as f64 * h;
        oracle_rec(k + 1, f, g, rho, steps, h, best);
    }
}

/// Best `(f_k, f_{k+1})` given the earlier values, by checking every pairwise
/// intersection of the lines bounding the feasible polygon.
fn last_two(k: usize, f: &mut [f64], g: &[f64], rho: &[Vec<f64>], (lo, hi): (f64, f64), best: &mut f64) {
    let (mut lo2, mut hi2) = (0.0f64, 1.0f64);
    for l in 0..k {
        lo2 = lo2.max(f[l] - rho[k + 1][l]);
        hi2 = hi2.min(f[l] + rho[k + 1][l]);
    }
    let r = rho[k][k + 1];
    // Lines a·x + b·y = c.
    let lines = [(1.0, 0.0, lo), (1.0, 0.0, hi), (0.0, 1.0, lo2), (0.0, 1.0, hi2), (-1.0, 1.0, r), (1.0, -1.0, r)];
    let base: f64 = f[..k].iter().zip(g).map(|(a, b)| a * b).sum();
    let tol = 1e-12;
    for (i, &(a1, b1, c1)) in lines.iter().enumerate() {
        for &(a2, b2, c2) in &lines[i + 1..] {
            let det = a1 * b2 - a2 * b1;
            if det == 0.0 {
                continue;
            }
            let x = (c1 * b2 - c2 * b1) / det;
            let y = (a1 * c2 - a2 * c1) / det;
            let feasible =
                x >= lo - tol && x <= hi + tol && y >= lo2 - tol && y <= hi2 + tol && (x - y).abs() <= r + tol;
            if feasible {
                *best = best.max(base + g[k] * x + g[k + 1] * y);
            }
        }
    }
}

/// Which columns of an exported trajectory CSV hold a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvCoordinate {
    /// Columns `y_*` and `regime` of a chain or process export.
    Single,
    /// Columns `y1_*, i1` or `y2_*, i2` of a coupled export.
    Coupled(u8),
}

/// Equal-weight measure of the rows of an exported CSV whose `column`
/// equals `value` (for example the step `n` or a grid time).
pub fn measure_from_csv<T: Real, R: Read>(
    input: R,
    column: &str,
    value: f64,
    coordinate: CsvCoordinate,
) -> Result<EmpiricalMeasure<T>> {
    let bad = |e: csv::Error| Error::Input(format!("cannot read measure CSV: {e}"));
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header = rd.headers().map_err(bad)?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let key = find(column).ok_or_else(|| Error::Input(format!("CSV has no column `{column}`")))?;
    let (prefix, regime) = match coordinate {
        CsvCoordinate::Single => ("y_".to_string(), "regime".to_string()),
        CsvCoordinate::Coupled(c @ (1 | 2)) => (format!("y{c}_"), format!("i{c}")),
        CsvCoordinate::Coupled(c) => return Err(Error::Input(format!("coupled coordinate must be 1 or 2, got {c}"))),
    };
    let mut ys = Vec::new();
    while let Some(k) = find(&format!("{prefix}{}", ys.len())) {
        ys.push(k);
    }
    let reg = find(&regime).ok_or_else(|| Error::Input(format!("CSV has no column `{regime}`")))?;
    if ys.is_empty() {
        return Err(Error::Input(format!("CSV has no `{prefix}0` column")));
    }
    let num = |rec: &csv::StringRecord, k: usize| -> Result<f64> {
        rec[k].trim().parse::<f64>().map_err(|e| Error::Input(format!("bad number `{}`: {e}", &rec[k])))
    };
    let mut samples = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(bad)?;
        if num(&rec, key)? != value {
            continue;
        }
        let y = ys.iter().map(|&k| num(&rec, k).map(T::of)).collect::<Result<Vec<T>>>()?;
        let i =
            rec[reg].trim().parse::<usize>().map_err(|e| Error::Input(format!("bad regime `{}`: {e}", &rec[reg])))?;
        samples.push(HybridState::new(y, i)?);
    }
    if samples.is_empty() {
        return Err(Error::Input(format!("no rows with {column} = {value}")));
    }
    EmpiricalMeasure::from_samples(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngStream};
    use crate::state::BaseMetric;
    use proptest::prelude::*;

    fn s(y: f64, i: usize) -> HybridState<f64> {
        HybridState::scalar(y, i)
    }

    fn fm(mu: &EmpiricalMeasure<f64>, nu: &EmpiricalMeasure<f64>, c: f64) -> f64 {
        fm_distance_between(mu, nu, &HybridMetric::euclidean(c).unwrap()).unwrap()
    }

    fn random_measure(r: &mut RngStream, n: usize, d: usize, regimes: usize, spread: f64) -> EmpiricalMeasure<f64> {
        EmpiricalMeasure::new(
            (0..n)
                .map(|_| {
                    let y = (0..d).map(|_| spread * (r.uniform() - 0.5)).collect();
                    (HybridState::new(y, r.below(regimes)).unwrap(), 0.05 + r.uniform())
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn diracs() {
        let a = EmpiricalMeasure::dirac(s(0.0, 0));
        assert_eq!(fm(&a, &a, 1.0), 0.0);
        assert!((fm(&a, &EmpiricalMeasure::dirac(s(0.4, 0)), 1.0) - 0.4).abs() < 1e-12);
        assert_eq!(fm(&a, &EmpiricalMeasure::dirac(s(3.0, 0)), 1.0), 1.0);
        assert!((fm(&a, &EmpiricalMeasure::dirac(s(0.1, 1)), 0.5) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn two_atoms_by_hand() {
        // μ = δ_0, ν = ½δ_0.3 + ½δ_2: f = (1, 0.7, 0) gives 1 − 0.35.
        let mu = EmpiricalMeasure::dirac(s(0.0, 0));
        let nu = EmpiricalMeasure::from_samples(vec![s(0.3, 0), s(2.0, 0)]).unwrap();
        assert!((fm(&mu, &nu, 1.0) - 0.65).abs() < 1e-12);
    }

    #[test]
    fn duplicate_atoms_merge() {
        let mu = EmpiricalMeasure::from_samples(vec![s(1.0, 0), s(1.0, 0), s(2.0, 1)]).unwrap();
        let p =
            FmProblem::new(&mu, &EmpiricalMeasure::dirac(s(1.0, 0)), &HybridMetric::euclidean(2.0).unwrap()).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p.mu_weights()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((fm_distance(&p).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_refuses_large_support() {
        let mu = EmpiricalMeasure::from_samples((0..5).map(|k| s(k as f64, 0)).collect()).unwrap();
        let p = FmProblem::new(&mu, &mu, &HybridMetric::euclidean(1.0).unwrap()).unwrap();
        assert!(matches!(fm_distance_oracle(&p), Err(Error::Input(_))));
    }

    #[test]
    fn path_dp_and_simplex_agree() {
        // The same 1-D chain solved both ways.
        let mut r = RngStream::for_task(3, 0, Purpose::Check);
        for _ in 0..30 {
            let mu = random_measure(&mut r, 12, 1, 1, 3.0);
            let nu = random_measure(&mut r, 9, 1, 1, 3.0);
            let p = FmProblem::new(&mu, &nu, &HybridMetric::euclidean(2.0).unwrap()).unwrap();
            let g = p.objective();
            let n = p.len();
            let mut adj = vec![Vec::new(); n];
            for &(k, l, w) in p.edges() {
                adj[k].push((l, w));
                adj[l].push((k, w));
            }
            let all: Vec<usize> = (0..n).collect();
            let lp = solve_lp(&all, &adj, &g).unwrap();
            let dp = fm_distance(&p).unwrap();
            assert!((lp - dp).abs() < 1e-9, "{lp} vs {dp}");
        }
    }

    #[test]
    fn thinned_graph_matches_full_program() {
        // Thinning in 1-D with cross-regime edges must not change the value.
        let mut r = RngStream::for_task(4, 0, Purpose::Check);
        for _ in 0..30 {
            let mu = random_measure(&mut r, 8, 1, 3, 2.0);
            let nu = random_measure(&mut r, 8, 1, 3, 2.0);
            let metric = HybridMetric::euclidean(0.3).unwrap();
            let p = FmProblem::new(&mu, &nu, &metric).unwrap();
            let n = p.len();
            let mut adj = vec![Vec::new(); n];
            for k in 0..n {
                for l in 0..n {
                    if k != l {
                        adj[k].push((l, p.rho(k, l)));
                    }
                }
            }
            let all: Vec<usize> = (0..n).collect();
            let full = solve_lp(&all, &adj, &p.objective()).unwrap();
            let thin = fm_distance(&p).unwrap();
            assert!((full - thin).abs() < 1e-9, "{full} vs {thin}");
        }
    }

    #[test]
    fn weighted_l1_in_two_dimensions_matches_oracle() {
        let mut r = RngStream::for_task(5, 0, Purpose::Check);
        let metric = HybridMetric::new(0.7, BaseMetric::WeightedL1(vec![1.0, 0.5])).unwrap();
        for _ in 0..5 {
            let mu = random_measure(&mut r, 2, 2, 2, 1.5);
            let nu = random_measure(&mut r, 2, 2, 2, 1.5);
            let p = FmProblem::new(&mu, &nu, &metric).unwrap();
            let a = fm_distance(&p).unwrap();
            let b = fm_distance_oracle(&p).unwrap();
            assert!((a - b).abs() <= 2e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn bounded_by_total_variation() {
        let mut r = RngStream::for_task(6, 0, Purpose::Check);
        for _ in 0..50 {
            let mu = random_measure(&mut r, 6, 1, 2, 1.0);
            let nu = random_measure(&mut r, 6, 1, 2, 1.0);
            let p = FmProblem::new(&mu, &nu, &HybridMetric::euclidean(0.5).unwrap()).unwrap();
            let tv: f64 = p.mu_weights().iter().zip(p.nu_weights()).map(|(a, b)| (a - b).abs()).sum();
            let d = fm_distance(&p).unwrap();
            assert!(d <= tv + 1e-12 && d <= 1.0);
        }
    }

    #[test]
    fn shifts_shrink_monotonically() {
        let mut r = RngStream::for_task(7, 0, Purpose::Check);
        let mu = random_measure(&mut r, 50, 1, 2, 4.0);
        let mut last = f64::INFINITY;
        for m in [1.0, 2.0, 4.0, 8.0] {
            let nu = mu.map(|x| s(x.y[0] + 1.0 / m, x.regime)).unwrap();
            let d = fm(&mu, &nu, 3.0);
            assert!(d < last && d <= 1.0 / m + 1e-12 && d > 0.0);
            last = d;
        }
    }

    #[test]
    fn csv_slice() {
        let text = "# schema_version: 1\nn,tau,y_0,regime\n0,0,1.5,0\n1,0.3,2.5,1\n0,0,3.5,1\n";
        let m: EmpiricalMeasure<f64> = measure_from_csv(text.as_bytes(), "n", 0.0, CsvCoordinate::Single).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.atoms()[1].0, s(3.5, 1));
        let coupled = "n,tau,y1_0,i1,y2_0,i2,branch,rho_bar\n0,0,0,0,3,1,,1\n";
        let m: EmpiricalMeasure<f64> =
            measure_from_csv(coupled.as_bytes(), "n", 0.0, CsvCoordinate::Coupled(2)).unwrap();
        assert_eq!(m.atoms()[0].0, s(3.0, 1));
        assert!(measure_from_csv::<f64, _>(text.as_bytes(), "n", 7.0, CsvCoordinate::Single).is_err());
    }

    fn small_measure() -> impl Strategy<Value = EmpiricalMeasure<f64>> {
        prop::collection::vec(((-2.0f64..2.0), 0usize..2, 0.1f64..1.0), 1..6).prop_map(|v| {
            EmpiricalMeasure::new(v.into_iter().map(|(y, i, w)| (s((y * 8.0).round() / 8.0, i), w)).collect()).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn metric_axioms(a in small_measure(), b in small_measure(), c in small_measure(), w in 0.2f64..2.0) {
            let dab = fm(&a, &b, w);
            let dba = fm(&b, &a, w);
            prop_assert_eq!(dab, dba);
            prop_assert!(fm(&a, &a, w) == 0.0);
            prop_assert!(dab <= fm(&a, &c, w) + fm(&c, &b, w) + 1e-8);
        }
    }
}
