//! Loss/parsimony Pareto front and single-model selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{format_expr, parse_with_names, Expr, FeatureNames};
use crate::loss::QuantileLevel;

#[derive(Debug, Clone, PartialEq)]
pub struct FrontEntry {
    pub complexity: u32,
    pub expr: Expr,
    pub loss: f64,
}

/// Invariant: sorted by complexity, losses strictly decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront {
    entries: BTreeMap<u32, (Expr, f64)>,
    tau: QuantileLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    BestLoss,
    Elbow,
}

impl ParetoFront {
    pub fn new(tau: QuantileLevel) -> Self {
        Self {
            entries: BTreeMap::new(),
            tau,
        }
    }

    pub fn tau(&self) -> QuantileLevel {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in increasing complexity order.
    pub fn entries(&self) -> Vec<FrontEntry> {
        self.entries
            .iter()
            .map(|(&complexity, (expr, loss))| FrontEntry {
                complexity,
                expr: expr.clone(),
                loss: *loss,
            })
            .collect()
    }

    pub fn get(&self, complexity: u32) -> Option<(&Expr, f64)> {
        self.entries.get(&complexity).map(|(e, l)| (e, *l))
    }

    /// Inserts the candidate when no entry of lower-or-equal complexity has
    /// lower-or-equal loss, then drops entries it dominates. Returns whether
    /// the front changed. Non-finite losses are ignored.
    pub fn update(&mut self, expr: &Expr, complexity: u32, loss: f64) -> bool {
        if !loss.is_finite() {
            return false;
        }
        if self
            .entries
            .range(..=complexity)
            .any(|(_, (_, l))| *l <= loss)
        {
            return false;
        }
        let dominated: Vec<u32> = self
            .entries
            .range(complexity..)
            .filter(|(_, (_, l))| *l >= loss)
            .map(|(&c, _)| c)
            .collect();
        for c in dominated {
            self.entries.remove(&c);
        }
        self.entries.insert(complexity, (expr.clone(), loss));
        true
    }

    /// Picks one entry. Ties in either mode go to the lower complexity.
    pub fn select(&self, mode: Selection) -> Result<FrontEntry> {
        let entries = self.entries();
        let idx = match mode {
            Selection::BestLoss => best_loss_index(&entries),
            Selection::Elbow => elbow_index(&entries),
        }
        .ok_or_else(|| Error::EmptyInput("Pareto front is empty".into()))?;
        Ok(entries[idx].clone())
    }

    /// One `complexity,loss,expression` record per entry, with a header.
    /// Expressions are quoted; losses print in round-trip form.
    pub fn to_csv(&self, names: Option<&FeatureNames>) -> String {
        let mut out = String::from("complexity,loss,expression\n");
        for (c, (e, l)) in &self.entries {
            let text = format_expr(e, names).replace('"', "\"\"");
            let _ = writeln!(out, "{c},{l:?},\"{text}\"");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, names: Option<&FeatureNames>) -> Result<()> {
        std::fs::write(path, self.to_csv(names))?;
        Ok(())
    }

    /// Reads a front written by [`ParetoFront::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>, tau: QuantileLevel, names: &FeatureNames) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut front = Self::new(tau);
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = r + 2;
            let bad = |msg: &str| Error::Parse {
                line,
                msg: msg.to_string(),
            };
            if rec.len() != 3 {
                return Err(bad("expected complexity,loss,expression"));
            }
            let complexity: u32 = rec[0].parse().map_err(|_| bad("bad complexity"))?;
            let loss: f64 = rec[1].parse().map_err(|_| bad("bad loss"))?;
            let expr = parse_with_names(&rec[2], names)?;
            front.entries.insert(complexity, (expr, loss));
        }
        Ok(front)
    }
}

fn best_loss_index(entries: &[FrontEntry]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        // Entries are in complexity order, so strict < keeps the simpler tie.
        if best.is_none_or(|b| e.loss < entries[b].loss) {
            best = Some(i);
        }
    }
    best
}

/// Maximum perpendicular distance to the chord between the endpoints, after
/// min-max scaling both axes to [0, 1].
fn elbow_index(entries: &[FrontEntry]) -> Option<usize> {
    match entries.len() {
        0 => return None,
        // Every point lies on the chord; the tie goes to the simplest.
        1 | 2 => return Some(0),
        _ => {}
    }
    let cs: Vec<f64> = entries.iter().map(|e| f64::from(e.complexity)).collect();
    let ls: Vec<f64> = entries.iter().map(|e| e.loss).collect();
    let scale = |v: &[f64]| -> Vec<f64> {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        v.iter().map(|x| if span > 0.0 { (x - lo) / span } else { 0.0 }).collect()
    };
    let (u, w) = (scale(&cs), scale(&ls));
    let last = entries.len() - 1;
    let (x0, y0, x1, y1) = (u[0], w[0], u[last], w[last]);
    let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for i in 0..entries.len() {
        let d = ((y1 - y0) * u[i] - (x1 - x0) * w[i] + x1 * y0 - y1 * x0).abs() / len;
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tau() -> QuantileLevel {
        QuantileLevel::new(0.5).unwrap()
    }

    fn leaf() -> Expr {
        Expr::feature(0)
    }

    fn front_of(points: &[(u32, f64)]) -> ParetoFront {
        let mut f = ParetoFront::new(tau());
        for &(c, l) in points {
            f.update(&Expr::constant(l), c, l);
        }
        f
    }

    fn pairs(f: &ParetoFront) -> Vec<(u32, f64)> {
        f.entries().iter().map(|e| (e.complexity, e.loss)).collect()
    }

    #[test]
    fn first_insert() {
        let mut f = ParetoFront::new(tau());
        assert!(f.update(&leaf(), 4, 1.0));
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn dominated_candidate_is_rejected() {
        assert_eq!(pairs(&front_of(&[(5, 0.1), (7, 0.2)])), vec![(5, 0.1)]);
        // Reverse order: the simpler, better entry evicts the other.
        assert_eq!(pairs(&front_of(&[(7, 0.2), (5, 0.1)])), vec![(5, 0.1)]);
    }

    #[test]
    fn reinsert_is_idempotent() {
        let mut f = front_of(&[(1, 1.0), (3, 0.5), (9, 0.1)]);
        let before = f.clone();
        assert!(!f.update(&Expr::constant(0.5), 3, 0.5));
        assert_eq!(f, before);
    }

    #[test]
    fn elbow_example() {
        let f = front_of(&[(1, 1.0), (2, 0.2), (20, 0.19)]);
        assert_eq!(f.select(Selection::Elbow).unwrap().complexity, 2);
        assert_eq!(f.select(Selection::BestLoss).unwrap().complexity, 20);
    }

    #[test]
    fn singleton_and_empty() {
        let f = front_of(&[(3, 0.4)]);
        assert_eq!(f.select(Selection::Elbow).unwrap().complexity, 3);
        assert_eq!(f.select(Selection::BestLoss).unwrap().complexity, 3);
        assert!(ParetoFront::new(tau()).select(Selection::Elbow).is_err());
    }

    #[test]
    fn best_loss_tie_goes_to_simpler() {
        let f = front_of(&[(3, 0.5), (9, 0.5)]);
        assert_eq!(f.select(Selection::BestLoss).unwrap().complexity, 3);
    }

    #[test]
    fn elbow_ignores_affine_loss_rescaling() {
        let pts = [(1, 3.0), (3, 1.1), (5, 0.9), (8, 0.5), (12, 0.45)];
        let base = front_of(&pts).select(Selection::Elbow).unwrap().complexity;
        let scaled: Vec<(u32, f64)> = pts.iter().map(|&(c, l)| (c, 7.0 * l + 2.0)).collect();
        assert_eq!(front_of(&scaled).select(Selection::Elbow).unwrap().complexity, base);
    }

    #[test]
    fn csv_round_trip() {
        let names = FeatureNames::new(&["a", "b"]);
        let mut f = ParetoFront::new(tau());
        f.update(&parse("x0").unwrap(), 1, 2.5);
        f.update(&parse("x0 + 0.1*x1").unwrap(), 5, 0.125);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("front.csv");
        f.write_csv(&p, Some(&names)).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("complexity,loss,expression\n1,2.5,\"a\"\n"), "{text}");
        assert_eq!(ParetoFront::read_csv(&p, tau(), &names).unwrap(), f);
    }

    /// Per complexity keep the minimum loss; a level survives when it is
    /// strictly better than every simpler level.
    fn brute_force(all: &[(u32, f64)]) -> Vec<(u32, f64)> {
        let mut out: Vec<(u32, f64)> = Vec::new();
        for &(c, l) in all {
            let dominated = all.iter().any(|&(c2, l2)| (c2 < c && l2 <= l) || (c2 == c && l2 < l));
            if !dominated && !out.contains(&(c, l)) {
                out.push((c, l));
            }
        }
        out.sort_by_key(|p| p.0);
        out
    }

    #[test]
    fn matches_brute_force_on_random_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut f = ParetoFront::new(tau());
        let mut seen = Vec::new();
        for _ in 0..1_000 {
            let c = rng.random_range(1..=20);
            let l = (rng.random_range(0..50) as f64) / 10.0;
            seen.push((c, l));
            f.update(&leaf(), c, l);
            let p = pairs(&f);
            assert!(p.windows(2).all(|w| w[0].1 > w[1].1));
        }
        assert_eq!(pairs(&f), brute_force(&seen));
    }
}
