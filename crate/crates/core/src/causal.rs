//! Exact inference on the four-variable structural causal model
//! `C → X → F → Y ← C`.
//!
//! Every query is answered by enumerating the full joint, so the results
//! are exact up to floating-point rounding. This module serves as the oracle
//! for the backdoor adjustment `P(y | do(f)) = Σ_c P(y | f, c) P(c)` and for
//! the do-calculus steps that justify it.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

/// Largest admissible domain for any variable.
pub const MAX_DOMAIN: usize = 8;
/// Row-normalisation tolerance for conditional probability tables.
pub const ROW_TOL: f64 = 1e-12;
/// Agreement required between the two sides of every do-calculus check.
pub const DOCALC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    C,
    X,
    F,
    Y,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::C => "C",
            Var::X => "X",
            Var::F => "F",
            Var::Y => "Y",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScmError {
    #[error("domain of {var} has size {size}; expected 1..={MAX_DOMAIN}", var = .var.name())]
    DomainSize { var: Var, size: usize },
    #[error("table {table} has {actual} rows; expected {expected}")]
    TableRows {
        table: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("table {table} row {row} has {actual} entries; expected {expected}")]
    RowLength {
        table: &'static str,
        row: usize,
        expected: usize,
        actual: usize,
    },
    #[error("table {table} row {row} sums to {sum}, not 1")]
    NotNormalized {
        table: &'static str,
        row: usize,
        sum: f64,
    },
    #[error("table {table} row {row} has a negative or non-finite entry")]
    InvalidEntry { table: &'static str, row: usize },
    #[error("edge {0} is not part of the model (F depends on X alone)")]
    ForbiddenEdge(&'static str),
    #[error("value {value} is outside the domain of {var}", var = .var.name())]
    OutOfDomain { var: Var, value: usize },
    #[error("P({var} = {value}) = 0, conditional is undefined", var = .var.name())]
    UndefinedConditional { var: Var, value: usize },
    #[error("positivity violated: P(F = {f}, C = {c}) = 0 while P(C = {c}) > 0")]
    Positivity { c: usize, f: usize },
}

/// A probability table over named discrete variables, stored row-major in
/// the order the variables are listed.
#[derive(Debug, Clone, PartialEq)]
pub struct DistTable {
    names: Vec<String>,
    sizes: Vec<usize>,
    values: Vec<f64>,
}

impl DistTable {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn offset(&self, assignment: &[usize]) -> usize {
        assignment
            .iter()
            .zip(&self.sizes)
            .fold(0, |acc, (&a, &s)| acc * s + a)
    }

    pub fn get(&self, assignment: &[usize]) -> f64 {
        self.values[self.offset(assignment)]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Sums out every variable not listed in `keep` (positions into the
    /// table's variable list, kept in the given order).
    pub fn marginal(&self, keep: &[usize]) -> DistTable {
        let sizes: Vec<usize> = keep.iter().map(|&i| self.sizes[i]).collect();
        let mut values = vec![0.0; sizes.iter().product()];
        let mut idx = vec![0usize; self.sizes.len()];
        for &v in &self.values {
            let off = keep
                .iter()
                .fold(0, |acc, &i| acc * self.sizes[i] + idx[i]);
            values[off] += v;
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.sizes[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        DistTable {
            names: keep.iter().map(|&i| self.names[i].clone()).collect(),
            sizes,
            values,
        }
    }
}

/// A finite-domain SCM with the fixed graph `C → X`, `X → F`, `(C, F) → Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteScm {
    sizes: [usize; 4],
    prior: Vec<f64>,
    cpt_x: Vec<Vec<f64>>,
    cpt_f: Vec<Vec<f64>>,
    cpt_y: Vec<Vec<f64>>,
}

/// Raw tables handed to [`DiscreteScm::new`].
///
/// `cpt_x` has one row per value of `C`, `cpt_f` one row per value of `X`
/// and `cpt_y` one row per `(c, f)` pair in `c`-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmTables {
    pub prior: Vec<f64>,
    pub cpt_x: Vec<Vec<f64>>,
    pub cpt_f: Vec<Vec<f64>>,
    pub cpt_y: Vec<Vec<f64>>,
}

fn check_rows(
    table: &'static str,
    rows: &[Vec<f64>],
    n_rows: usize,
    width: usize,
) -> Result<(), ScmError> {
    if rows.len() != n_rows {
        return Err(ScmError::TableRows {
            table,
            expected: n_rows,
            actual: rows.len(),
        });
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(ScmError::RowLength {
                table,
                row: r,
                expected: width,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ScmError::InvalidEntry { table, row: r });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(ScmError::NotNormalized { table, row: r, sum });
        }
    }
    Ok(())
}

impl DiscreteScm {
    /// Validates and assembles an SCM. `sizes` are `[|C|, |X|, |F|, |Y|]`.
    pub fn new(sizes: [usize; 4], tables: ScmTables) -> Result<Self, ScmError> {
        let [c, x, f, y] = sizes;
        for (var, s) in [(Var::C, c), (Var::X, x), (Var::F, f), (Var::Y, y)] {
            if s == 0 || s > MAX_DOMAIN {
                return Err(ScmError::DomainSize { var, size: s });
            }
        }
        check_rows("prior", core::slice::from_ref(&tables.prior), 1, c)?;
        check_rows("cpt_x", &tables.cpt_x, c, x)?;
        if c > 1 && tables.cpt_f.len() == c * x && tables.cpt_f.len() != x {
            return Err(ScmError::ForbiddenEdge("C → F"));
        }
        check_rows("cpt_f", &tables.cpt_f, x, f)?;
        check_rows("cpt_y", &tables.cpt_y, c * f, y)?;
        Ok(Self {
            sizes,
            prior: tables.prior,
            cpt_x: tables.cpt_x,
            cpt_f: tables.cpt_f,
            cpt_y: tables.cpt_y,
        })
    }

    /// An SCM whose rows are independent draws from a flat Dirichlet.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, sizes: [usize; 4]) -> Result<Self, ScmError> {
        let [c, x, f, y] = sizes;
        let mut row = |n: usize| -> Vec<f64> {
            // exponential spacings give a flat Dirichlet
            let raw: Vec<f64> = (0..n)
                .map(|_| -libm::log(1.0 - rng.random::<f64>()))
                .collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        };
        let tables = ScmTables {
            prior: row(c),
            cpt_x: (0..c).map(|_| row(x)).collect(),
            cpt_f: (0..x).map(|_| row(f)).collect(),
            cpt_y: (0..c * f).map(|_| row(y)).collect(),
        };
        Self::new(sizes, tables)
    }

    pub fn sizes(&self) -> [usize; 4] {
        self.sizes
    }

    pub fn tables(&self) -> ScmTables {
        ScmTables {
            prior: self.prior.clone(),
            cpt_x: self.cpt_x.clone(),
            cpt_f: self.cpt_f.clone(),
            cpt_y: self.cpt_y.clone(),
        }
    }

    pub fn p_c(&self, c: usize) -> f64 {
        self.prior[c]
    }

    pub fn p_x_given_c(&self, x: usize, c: usize) -> f64 {
        self.cpt_x[c][x]
    }

    pub fn p_f_given_x(&self, f: usize, x: usize) -> f64 {
        self.cpt_f[x][f]
    }

    pub fn p_y_given_cf(&self, y: usize, c: usize, f: usize) -> f64 {
        self.cpt_y[c * self.sizes[2] + f][y]
    }

    /// Full joint `P(c, x, f, y)` by enumeration, variables ordered C, X, F, Y.
    pub fn joint(&self) -> DistTable {
        let [nc, nx, nf, ny] = self.sizes;
        let mut values = Vec::with_capacity(nc * nx * nf * ny);
        for c in 0..nc {
            for x in 0..nx {
                for f in 0..nf {
                    for y in 0..ny {
                        values.push(
                            self.prior[c]
                                * self.cpt_x[c][x]
                                * self.cpt_f[x][f]
                                * self.p_y_given_cf(y, c, f),
                        );
                    }
                }
            }
        }
        DistTable {
            names: ["C", "X", "F", "Y"].iter().map(|s| String::from(*s)).collect(),
            sizes: self.sizes.to_vec(),
            values,
        }
    }

    fn check(&self, var: Var, value: usize) -> Result<(), ScmError> {
        let idx = var as usize;
        if value >= self.sizes[idx] {
            return Err(ScmError::OutOfDomain { var, value });
        }
        Ok(())
    }

    /// `P(Y = y | F = f)` from the observational joint.
    pub fn observational(&self, y: usize, f: usize) -> Result<f64, ScmError> {
        self.check(Var::Y, y)?;
        self.check(Var::F, f)?;
        let fy = self.joint().marginal(&[2, 3]);
        let pf: f64 = (0..self.sizes[3]).map(|yy| fy.get(&[f, yy])).sum();
        if pf <= 0.0 {
            return Err(ScmError::UndefinedConditional { var: Var::F, value: f });
        }
        Ok(fy.get(&[f, y]) / pf)
    }

    /// `P(Y = y | F = f, C = c)` from the observational joint.
    pub fn conditional_y_given_fc(&self, y: usize, f: usize, c: usize) -> Result<f64, ScmError> {
        self.check(Var::Y, y)?;
        self.check(Var::F, f)?;
        self.check(Var::C, c)?;
        let cfy = self.joint().marginal(&[0, 2, 3]);
        let pfc: f64 = (0..self.sizes[3]).map(|yy| cfy.get(&[c, f, yy])).sum();
        if pfc <= 0.0 {
            return Err(ScmError::Positivity { c, f });
        }
        Ok(cfy.get(&[c, f, y]) / pfc)
    }

    /// Graph surgery for `do(F = f)`: `P(F | X)` becomes a point mass on `f`.
    pub fn intervene(&self, f: usize) -> Result<DiscreteScm, ScmError> {
        self.check(Var::F, f)?;
        let nf = self.sizes[2];
        let point: Vec<f64> = (0..nf).map(|i| if i == f { 1.0 } else { 0.0 }).collect();
        Ok(DiscreteScm {
            cpt_f: vec![point; self.sizes[1]],
            ..self.clone()
        })
    }

    /// `Σ_c P(y | f, c) P(c)` computed from observational quantities only.
    pub fn backdoor_adjust(&self, y: usize, f: usize) -> Result<f64, ScmError> {
        self.check(Var::Y, y)?;
        self.check(Var::F, f)?;
        let cfy = self.joint().marginal(&[0, 2, 3]);
        let ny = self.sizes[3];
        let mut acc = 0.0;
        for c in 0..self.sizes[0] {
            if self.prior[c] <= 0.0 {
                continue;
            }
            let pfc: f64 = (0..ny).map(|yy| cfy.get(&[c, f, yy])).sum();
            if pfc <= 0.0 {
                return Err(ScmError::Positivity { c, f });
            }
            acc += cfy.get(&[c, f, y]) / pfc * self.prior[c];
        }
        Ok(acc)
    }

    /// Marginal `P(Y = y)` of this (possibly intervened) model.
    pub fn marginal_y(&self, y: usize) -> Result<f64, ScmError> {
        self.check(Var::Y, y)?;
        Ok(self.joint().marginal(&[3]).get(&[y]))
    }
}

/// Outcome of [`verify_docalc`]: the largest absolute deviation observed
/// for each identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoCalcReport {
    /// `max |P(c | do(f)) - P(c)|`.
    pub a2_max_dev: f64,
    /// `max |P(y | do(f), c) - P(y | f, c)|`.
    pub a3_max_dev: f64,
    /// `max |Σ_c P(y | f, c) P(c) - P(y | do(f))|`, the right side by graph surgery.
    pub eq1_max_dev: f64,
}

impl DoCalcReport {
    pub fn a2_pass(&self) -> bool {
        self.a2_max_dev <= DOCALC_TOL
    }

    pub fn a3_pass(&self) -> bool {
        self.a3_max_dev <= DOCALC_TOL
    }

    pub fn eq1_pass(&self) -> bool {
        self.eq1_max_dev <= DOCALC_TOL
    }

    pub fn all_pass(&self) -> bool {
        self.a2_pass() && self.a3_pass() && self.eq1_pass()
    }

    pub fn max_dev(&self) -> f64 {
        self.a2_max_dev.max(self.a3_max_dev).max(self.eq1_max_dev)
    }
}

/// Checks each step of the backdoor derivation by enumerating both sides.
pub fn verify_docalc(scm: &DiscreteScm) -> Result<DoCalcReport, ScmError> {
    let [nc, _, nf, ny] = scm.sizes();
    let mut report = DoCalcReport {
        a2_max_dev: 0.0,
        a3_max_dev: 0.0,
        eq1_max_dev: 0.0,
    };
    let observed = scm.joint();
    let p_c = observed.marginal(&[0]);
    let cfy = observed.marginal(&[0, 2, 3]);

    for f in 0..nf {
        let surgery = scm.intervene(f)?;
        let joint_do = surgery.joint();
        let c_do = joint_do.marginal(&[0]);
        let cy_do = joint_do.marginal(&[0, 3]);
        let y_do = joint_do.marginal(&[3]);

        for c in 0..nc {
            report.a2_max_dev = report
                .a2_max_dev
                .max(libm::fabs(c_do.get(&[c]) - p_c.get(&[c])));
            if p_c.get(&[c]) <= 0.0 {
                continue;
            }
            let pfc: f64 = (0..ny).map(|y| cfy.get(&[c, f, y])).sum();
            if pfc <= 0.0 {
                return Err(ScmError::Positivity { c, f });
            }
            let pc_do = c_do.get(&[c]);
            for y in 0..ny {
                let lhs = cy_do.get(&[c, y]) / pc_do;
                let rhs = cfy.get(&[c, f, y]) / pfc;
                report.a3_max_dev = report.a3_max_dev.max(libm::fabs(lhs - rhs));
            }
        }
        for y in 0..ny {
            let adjusted = scm.backdoor_adjust(y, f)?;
            report.eq1_max_dev = report
                .eq1_max_dev
                .max(libm::fabs(adjusted - y_do.get(&[y])));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_hot(n: usize, i: usize) -> Vec<f64> {
        (0..n).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
    }

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    fn deterministic() -> DiscreteScm {
        DiscreteScm::new(
            [2, 2, 2, 2],
            ScmTables {
                prior: one_hot(2, 1),
                cpt_x: vec![one_hot(2, 0), one_hot(2, 1)],
                cpt_f: vec![one_hot(2, 1), one_hot(2, 0)],
                cpt_y: vec![one_hot(2, 0), one_hot(2, 1), one_hot(2, 1), one_hot(2, 0)],
            },
        )
        .unwrap()
    }

    #[test]
    fn deterministic_joint_is_unit_mass() {
        let j = deterministic().joint();
        let nonzero: Vec<_> = j.values().iter().filter(|v| **v > 0.0).collect();
        assert_eq!(nonzero, vec![&1.0]);
        // c=1 → x=1 → f=0 → y = cpt_y[1*2+0] = one_hot(1)
        assert_eq!(j.get(&[1, 1, 0, 1]), 1.0);
    }

    #[test]
    fn uniform_joint_entries() {
        let scm = DiscreteScm::new(
            [2, 2, 2, 2],
            ScmTables {
                prior: uniform(2),
                cpt_x: vec![uniform(2); 2],
                cpt_f: vec![uniform(2); 2],
                cpt_y: vec![uniform(2); 4],
            },
        )
        .unwrap();
        assert!(scm.joint().values().iter().all(|v| *v == 1.0 / 16.0));
    }

    #[test]
    fn random_joint_marginals_match_chain_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let sizes = [3, 4, 2, 5];
            let scm = DiscreteScm::random(&mut rng, sizes).unwrap();
            let j = scm.joint();
            assert!((j.total() - 1.0).abs() < 1e-12);
            // P(c, x) = P(c) P(x | c)
            let cx = j.marginal(&[0, 1]);
            for c in 0..3 {
                for x in 0..4 {
                    let direct = scm.p_c(c) * scm.p_x_given_c(x, c);
                    assert!((cx.get(&[c, x]) - direct).abs() < 1e-14);
                }
            }
            // P(f) = Σ_c Σ_x P(c) P(x|c) P(f|x)
            let pf = j.marginal(&[2]);
            for f in 0..2 {
                let mut direct = 0.0;
                for c in 0..3 {
                    for x in 0..4 {
                        direct += scm.p_c(c) * scm.p_x_given_c(x, c) * scm.p_f_given_x(f, x);
                    }
                }
                assert!((pf.get(&[f]) - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn observational_equals_interventional_when_f_ignores_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = DiscreteScm::random(&mut rng, [3, 3, 2, 3]).unwrap().tables();
        let row = t.cpt_f[0].clone();
        t.cpt_f = vec![row; 3];
        let scm = DiscreteScm::new([3, 3, 2, 3], t).unwrap();
        for f in 0..2 {
            for y in 0..3 {
                let adj = scm.backdoor_adjust(y, f).unwrap();
                assert!((scm.observational(y, f).unwrap() - adj).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn observational_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let scm = DiscreteScm::random(&mut rng, [2, 3, 4, 3]).unwrap();
        for f in 0..4 {
            for y in 0..3 {
                let (mut num, mut den) = (0.0, 0.0);
                for c in 0..2 {
                    for x in 0..3 {
                        for yy in 0..3 {
                            let p = scm.p_c(c)
                                * scm.p_x_given_c(x, c)
                                * scm.p_f_given_x(f, x)
                                * scm.p_y_given_cf(yy, c, f);
                            den += p;
                            if yy == y {
                                num += p;
                            }
                        }
                    }
                }
                assert!((scm.observational(y, f).unwrap() - num / den).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn observational_deterministic_and_undefined() {
        let scm = deterministic();
        assert_eq!(scm.observational(1, 0).unwrap(), 1.0);
        assert_eq!(scm.observational(0, 0).unwrap(), 0.0);
        assert_eq!(
            scm.observational(0, 1),
            Err(ScmError::UndefinedConditional { var: Var::F, value: 1 })
        );
    }

    #[test]
    fn intervene_is_surgery() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scm = DiscreteScm::random(&mut rng, [3, 2, 4, 2]).unwrap();
        let s = scm.intervene(2).unwrap();
        let j = s.joint();
        assert!((j.marginal(&[2]).get(&[2]) - 1.0).abs() < 1e-14);
        let (a, b) = (scm.joint().marginal(&[0]), j.marginal(&[0]));
        for c in 0..3 {
            assert!((a.get(&[c]) - b.get(&[c])).abs() < 1e-15);
        }
        assert_eq!(s.intervene(2).unwrap(), s);
        assert_eq!(
            scm.intervene(4),
            Err(ScmError::OutOfDomain { var: Var::F, value: 4 })
        );
    }

    #[test]
    fn backdoor_single_context_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scm = DiscreteScm::random(&mut rng, [1, 3, 3, 2]).unwrap();
        for f in 0..3 {
            for y in 0..2 {
                let direct = scm.p_y_given_cf(y, 0, f);
                assert!((scm.backdoor_adjust(y, f).unwrap() - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backdoor_without_confounding_equals_observational() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut t = DiscreteScm::random(&mut rng, [3, 3, 3, 3]).unwrap().tables();
        for c in 1..3 {
            for f in 0..3 {
                t.cpt_y[c * 3 + f] = t.cpt_y[f].clone();
            }
        }
        let scm = DiscreteScm::new([3, 3, 3, 3], t).unwrap();
        for f in 0..3 {
            for y in 0..3 {
                let a = scm.backdoor_adjust(y, f).unwrap();
                let o = scm.observational(y, f).unwrap();
                assert!((a - o).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backdoor_equals_surgery() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let sizes = [
                rng.random_range(2..=5),
                rng.random_range(2..=5),
                rng.random_range(2..=5),
                rng.random_range(2..=5),
            ];
            let scm = DiscreteScm::random(&mut rng, sizes).unwrap();
            for f in 0..sizes[2] {
                let s = scm.intervene(f).unwrap();
                let mut total = 0.0;
                for y in 0..sizes[3] {
                    let a = scm.backdoor_adjust(y, f).unwrap();
                    assert!((a - s.marginal_y(y).unwrap()).abs() < 1e-12);
                    assert!(a >= 0.0);
                    total += a;
                }
                assert!((total - 1.0).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn positivity_violation_names_context() {
        let scm = DiscreteScm::new(
            [2, 2, 2, 2],
            ScmTables {
                prior: uniform(2),
                cpt_x: vec![one_hot(2, 0), one_hot(2, 1)],
                cpt_f: vec![one_hot(2, 0), uniform(2)],
                cpt_y: vec![uniform(2); 4],
            },
        )
        .unwrap();
        // c = 0 forces x = 0 forces f = 0, so P(F = 1, C = 0) = 0
        assert_eq!(
            scm.backdoor_adjust(0, 1),
            Err(ScmError::Positivity { c: 0, f: 1 })
        );
    }

    #[test]
    fn docalc_passes_on_deterministic_with_exact_equality() {
        // Positivity fails for the degenerate model, so use a deterministic
        // C with a full-support F instead.
        let scm = DiscreteScm::new(
            [2, 2, 2, 2],
            ScmTables {
                prior: one_hot(2, 0),
                cpt_x: vec![one_hot(2, 1), one_hot(2, 0)],
                cpt_f: vec![one_hot(2, 0), uniform(2)],
                cpt_y: vec![one_hot(2, 1), one_hot(2, 0), one_hot(2, 0), one_hot(2, 1)],
            },
        )
        .unwrap();
        let rep = verify_docalc(&scm).unwrap();
        assert_eq!(rep.max_dev(), 0.0);
        assert!(rep.all_pass());
    }

    #[test]
    fn docalc_random_models_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..100 {
            let sizes = [
                rng.random_range(2..=4),
                rng.random_range(2..=4),
                rng.random_range(2..=4),
                rng.random_range(2..=4),
            ];
            let scm = DiscreteScm::random(&mut rng, sizes).unwrap();
            assert!(verify_docalc(&scm).unwrap().all_pass());
        }
    }

    #[test]
    fn direct_c_to_f_table_rejected() {
        let t = ScmTables {
            prior: uniform(2),
            cpt_x: vec![uniform(3); 2],
            cpt_f: vec![uniform(2); 6],
            cpt_y: vec![uniform(2); 4],
        };
        assert_eq!(
            DiscreteScm::new([2, 3, 2, 2], t),
            Err(ScmError::ForbiddenEdge("C → F"))
        );
    }

    #[test]
    fn non_normalized_row_reported() {
        let t = ScmTables {
            prior: uniform(2),
            cpt_x: vec![uniform(2), vec![0.5, 0.6]],
            cpt_f: vec![uniform(2); 2],
            cpt_y: vec![uniform(2); 4],
        };
        assert!(matches!(
            DiscreteScm::new([2, 2, 2, 2], t),
            Err(ScmError::NotNormalized { table: "cpt_x", row: 1, .. })
        ));
    }
}
