//! CSV writers. Matrices are flattened row-major into columns named
//! `NAME_r_c` (1-based); floats use the shortest representation that
//! round-trips, so equal values always produce equal bytes.

use std::io::Write;

use nalgebra::DMatrix;

use crate::equilibrium::FeedbackPair;
use crate::follower::FollowerSolution;
use crate::leader::{CaseGains, InversionPath, LeaderCase, LeaderSolution, SCHUR_COND_LIMIT};
use crate::linalg::row_major;
use crate::simulate::{MonteCarloEstimate, PathSummary, SimulatedPath};
use crate::verify::TestReport;

pub type CsvResult = std::result::Result<(), csv::Error>;

fn names(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (1..=rows)
        .flat_map(|r| (1..=cols).map(move |c| format!("{prefix}_{r}_{c}")))
        .collect()
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn push_matrix(row: &mut Vec<String>, m: &DMatrix<f64>) {
    row.extend(row_major(m).into_iter().map(num));
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// `s, P_*, Rhat2_*, Shat2_*, Shat1_*`.
pub fn write_follower<W: Write>(sol: &FollowerSolution, out: W) -> CsvResult {
    let m = &sol.model;
    let mut w = writer(out);
    let mut header = vec!["s".to_string()];
    header.extend(names("P", m.n, m.n));
    header.extend(names("Rhat2", m.m2, m.m2));
    header.extend(names("Shat2", m.n, m.m2));
    header.extend(names("Shat1", m.m2, m.m1));
    w.write_record(&header)?;
    for (i, s) in m.grid.nodes().into_iter().enumerate() {
        let g = &sol.nodes[i].gains;
        let mut row = vec![num(s)];
        push_matrix(&mut row, &sol.p.values[i]);
        push_matrix(&mut row, &g.rhat2);
        push_matrix(&mut row, &g.shat2);
        push_matrix(&mut row, &g.shat1);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `s, Pcal_*, max_cond, r1_cond, near_singular, path, <R>_*, <H>_*` where
/// `<R>, <H>` are `R1cal, H1cal` in Case I and `R1hat, B1hat` in Case II.
/// `max_cond` is the largest condition number among the inverted blocks;
/// `near_singular` is 1 when it exceeds the Schur-path limit.
pub fn write_leader<W: Write>(sol: &LeaderSolution, out: W) -> CsvResult {
    let k = 2 * sol.n();
    let m1 = sol.nodes[0].r1cal.nrows();
    let (rn, hn) = match sol.case {
        LeaderCase::CaseI => ("R1cal", "H1cal"),
        LeaderCase::CaseII => ("R1hat", "B1hat"),
    };
    let mut w = writer(out);
    let mut header: Vec<String> = vec!["s".into()];
    header.extend(names("Pcal", k, k));
    header.extend(["max_cond", "r1_cond", "near_singular", "path"].map(String::from));
    header.extend(names(rn, m1, m1));
    header.extend(names(hn, m1, k));
    w.write_record(&header)?;
    for (i, s) in sol.pcal.grid.nodes().into_iter().enumerate() {
        let node = &sol.nodes[i];
        let (cond, path) = match &node.detail {
            CaseGains::CaseI(g) => (
                g.block_conds.iter().copied().fold(0.0, f64::max),
                match g.path {
                    InversionPath::Schur => "schur",
                    InversionPath::Dense => "dense",
                },
            ),
            CaseGains::CaseII(g) => (g.cond, "direct"),
        };
        let mut row = vec![num(s)];
        push_matrix(&mut row, &sol.pcal.values[i]);
        row.push(num(cond));
        row.push(num(node.r1cal_cond));
        row.push(u8::from(cond > SCHUR_COND_LIMIT).to_string());
        row.push(path.into());
        push_matrix(&mut row, &node.r1cal);
        push_matrix(&mut row, &node.h1cal);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `s, K1_*, K2_*`.
pub fn write_gains<W: Write>(pair: &FeedbackPair, out: W) -> CsvResult {
    let (k1, k2) = (&pair.k1[0], &pair.k2[0]);
    let mut w = writer(out);
    let mut header = vec!["s".to_string()];
    header.extend(names("K1", k1.nrows(), k1.ncols()));
    header.extend(names("K2", k2.nrows(), k2.ncols()));
    w.write_record(&header)?;
    for (i, s) in pair.grid.nodes().into_iter().enumerate() {
        let mut row = vec![num(s)];
        push_matrix(&mut row, &pair.k1[i]);
        push_matrix(&mut row, &pair.k2[i]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `path, J1, J2, jumps_1.., aborted`.
pub fn write_ensemble<W: Write>(paths: &[PathSummary], marks: usize, out: W) -> CsvResult {
    let mut w = writer(out);
    let mut header: Vec<String> = ["path", "J1", "J2"].map(String::from).to_vec();
    header.extend((1..=marks).map(|k| format!("jumps_{k}")));
    header.push("aborted".into());
    w.write_record(&header)?;
    for (i, p) in paths.iter().enumerate() {
        let mut row = vec![i.to_string(), num(p.j1), num(p.j2)];
        row.extend(p.jumps.iter().map(u64::to_string));
        row.push(u8::from(p.aborted).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `path, node, s, x_*, u1_*, u2_*` for stored trajectories; `x` is the
/// original state (the first `n` components of the stored state).
pub fn write_trajectories<W: Write>(paths: &[SimulatedPath], n: usize, out: W) -> CsvResult {
    let mut w = writer(out);
    let Some(first) = paths.first() else {
        w.write_record(["path", "node", "s"])?;
        w.flush()?;
        return Ok(());
    };
    let (m1, m2) = (first.u1[0].len(), first.u2[0].len());
    let mut header: Vec<String> = ["path", "node", "s"].map(String::from).to_vec();
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m1).map(|i| format!("u1_{i}")));
    header.extend((1..=m2).map(|i| format!("u2_{i}")));
    w.write_record(&header)?;
    for (p, path) in paths.iter().enumerate() {
        for (i, x) in path.states.iter().enumerate() {
            let mut row = vec![p.to_string(), i.to_string(), num(path.times[i])];
            row.extend(x.rows(0, n).iter().copied().map(num));
            row.extend(path.u1[i].iter().copied().map(num));
            row.extend(path.u2[i].iter().copied().map(num));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One line of `estimates.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub quantity: String,
    pub estimate: MonteCarloEstimate,
    pub formula: f64,
}

/// `quantity, mc_mean, se, paths, seed, formula, difference`.
pub fn write_estimates<W: Write>(rows: &[EstimateRow], out: W) -> CsvResult {
    let mut w = writer(out);
    w.write_record(["quantity", "mc_mean", "se", "paths", "seed", "formula", "difference"])?;
    for r in rows {
        let e = &r.estimate;
        w.write_record([
            r.quantity.clone(),
            num(e.mean),
            num(e.se),
            e.count.to_string(),
            e.seed.to_string(),
            num(r.formula),
            num(e.mean - r.formula),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `test, status, statistic, band, se, dt, seed, paths, detail`.
pub fn write_verify_report<W: Write>(reports: &[TestReport], out: W) -> CsvResult {
    let mut w = writer(out);
    w.write_record(["test", "status", "statistic", "band", "se", "dt", "seed", "paths", "detail"])?;
    for r in reports {
        w.write_record([
            r.name.clone(),
            r.status.label().into(),
            num(r.statistic),
            num(r.band),
            num(r.se),
            num(r.dt),
            r.seed.map_or(String::new(), |s| s.to_string()),
            r.paths.to_string(),
            r.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::synthesize;
    use crate::follower::solve_follower_isrde;
    use crate::leader::solve_leader;
    use crate::model::reference;

    fn text(f: impl FnOnce(&mut Vec<u8>) -> CsvResult) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn schemas_and_row_counts() {
        let (m, c) = reference::two_state(10);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let l = solve_leader(&f, LeaderCase::CaseI).unwrap();
        let pair = synthesize(&f, &l);

        let fo = text(|b| write_follower(&f, b));
        let lines: Vec<&str> = fo.lines().collect();
        assert_eq!(lines.len(), 12);
        assert_eq!(lines[0], "s,P_1_1,P_1_2,P_2_1,P_2_2,Rhat2_1_1,Shat2_1_1,Shat2_2_1,Shat1_1_1");
        assert!(lines[11].starts_with("1,"));

        let le = text(|b| write_leader(&l, b));
        let header: Vec<&str> = le.lines().next().unwrap().split(',').collect();
        assert_eq!(header.len(), 1 + 16 + 4 + 1 + 4);
        assert_eq!(header[17], "max_cond");
        assert!(le.lines().nth(1).unwrap().contains(",schur,"));

        let g = text(|b| write_gains(&pair, b));
        assert_eq!(g.lines().next().unwrap(), "s,K1_1_1,K1_1_2,K1_1_3,K1_1_4,K2_1_1,K2_1_2,K2_1_3,K2_1_4");
        assert_eq!(g.lines().count(), 12);
    }

    #[test]
    fn row_major_flattening() {
        let (m, c) = reference::two_state(4);
        let f = solve_follower_isrde(&m, &c).unwrap();
        let fo = text(|b| write_follower(&f, b));
        let last: Vec<f64> = fo.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        let p = f.p.last();
        assert_eq!(&last[1..5], &[p[(0, 0)], p[(0, 1)], p[(1, 0)], p[(1, 1)]]);
    }

    #[test]
    fn ensemble_and_estimates() {
        let rows = vec![
            PathSummary { j1: 1.5, j2: 0.25, jumps: vec![2, 0], aborted: false },
            PathSummary { j1: 0.1, j2: 3.0, jumps: vec![0, 1], aborted: true },
        ];
        let e = text(|b| write_ensemble(&rows, 2, b));
        assert_eq!(e, "path,J1,J2,jumps_1,jumps_2,aborted\n0,1.5,0.25,2,0,0\n1,0.1,3,0,1,1\n");
        let est = EstimateRow {
            quantity: "J1".into(),
            estimate: MonteCarloEstimate { mean: 1.0, se: 0.5, count: 2, seed: 9 },
            formula: 0.75,
        };
        let t = text(|b| write_estimates(&[est], b));
        assert_eq!(t.lines().nth(1).unwrap(), "J1,1,0.5,2,9,0.75,0.25");
    }
}
