//! Static connectedness tables and spillover-network exports.
//!
//! Edge direction follows the sign of the pairwise measure: a positive
//! `npdc[(i, j)]` means series `j` dominates series `i`, so the edge runs
//! from `j` (transmitter) to `i` (receiver) with that value as its weight.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::connectedness::{raw_measures, ConnectednessTable, TciDenominator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub net: f64,
    pub to: f64,
    pub from: f64,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub tau: f64,
    pub band: String,
    pub threshold: f64,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

/// Edges for every ordered pair with net pairwise spillover above
/// `threshold` (and strictly positive).
pub fn network(table: &ConnectednessTable, labels: &[String], threshold: f64) -> Result<Network> {
    let n = table.n();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {n} series", labels.len())));
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("edge threshold {threshold} must be nonnegative")));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let w = table.npdc[(i, j)];
            if w > 0.0 && w >= threshold {
                edges.push(Edge {
                    source: labels[j].clone(),
                    target: labels[i].clone(),
                    weight: w,
                });
            }
        }
    }
    let nodes = (0..n)
        .map(|i| Node {
            id: labels[i].clone(),
            net: table.net[i],
            to: table.to[i],
            from: table.from[i],
            role: if table.net[i] >= 0.0 { "transmitter" } else { "receiver" }.into(),
        })
        .collect();
    Ok(Network {
        tau: table.tau,
        band: table.band.clone(),
        threshold,
        nodes,
        edges,
    })
}

impl Network {
    pub fn write_edges_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["source", "target", "weight"])?;
        for e in &self.edges {
            w.write_record([e.source.clone(), e.target.clone(), e.weight.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("edge output", e))?;
        Ok(())
    }

    pub fn write_nodes_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "net", "to", "from", "role"])?;
        for n in &self.nodes {
            w.write_record([
                n.id.clone(),
                n.net.to_string(),
                n.to.to_string(),
                n.from.to_string(),
                n.role.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("node output", e))?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)
            .map_err(|e| Error::io("network json", std::io::Error::other(e)))
    }
}

fn write_matrix_long<W: Write>(
    w: &mut csv::Writer<W>,
    table: &ConnectednessTable,
    labels: &[String],
    m: &DMatrix<f64>,
) -> Result<()> {
    let tau = table.tau.to_string();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_record([&tau, &table.band, &labels[i], &labels[j], &m[(i, j)].to_string()])?;
        }
    }
    Ok(())
}

/// Writes `tau,band,row,column,value` with the normalized shares.
pub fn write_theta_csv<W: Write>(out: W, tables: &[ConnectednessTable], labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "band", "row", "column", "value"])?;
    for t in tables {
        write_matrix_long(&mut w, t, labels, &t.theta_tilde)?;
    }
    w.flush().map_err(|e| Error::io("theta output", e))?;
    Ok(())
}

/// Writes `tau,band,row,column,value` with net pairwise spillovers.
pub fn write_npdc_csv<W: Write>(out: W, tables: &[ConnectednessTable], labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "band", "row", "column", "value"])?;
    for t in tables {
        write_matrix_long(&mut w, t, labels, &t.npdc)?;
    }
    w.flush().map_err(|e| Error::io("npdc output", e))?;
    Ok(())
}

/// Writes `tau,band,series,TO,FROM,NET` plus one `ALL` row per table whose
/// `TO` and `FROM` cells carry the two TCI computations.
pub fn write_measures_csv<W: Write>(out: W, tables: &[ConnectednessTable], labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "band", "series", "TO", "FROM", "NET"])?;
    for t in tables {
        let tau = t.tau.to_string();
        for (i, label) in labels.iter().enumerate() {
            w.write_record([
                &tau,
                &t.band,
                label,
                &t.to[i].to_string(),
                &t.from[i].to_string(),
                &t.net[i].to_string(),
            ])?;
        }
        w.write_record([&tau, &t.band, "ALL", &t.tci.to_string(), &t.tci_from.to_string(), "0"])?;
    }
    w.flush().map_err(|e| Error::io("measures output", e))?;
    Ok(())
}

/// Rebuilds one table from a share file written by [`write_theta_csv`].
pub fn read_theta_table<R: Read>(
    input: R,
    tau: f64,
    band: &str,
    denominator: TciDenominator,
    horizon: usize,
) -> Result<(Vec<String>, ConnectednessTable)> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["tau", "band", "row", "column", "value"] {
        return Err(Error::InvalidArgument(
            "share file must have columns tau,band,row,column,value".into(),
        ));
    }
    let mut labels: Vec<String> = Vec::new();
    let mut cells: Vec<(String, String, f64)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let parse = |c: usize, name: &str| -> Result<f64> {
            rec[c].trim().parse::<f64>().map_err(|_| Error::BadNumber {
                row,
                column: name.into(),
                value: rec[c].to_string(),
            })
        };
        if parse(0, "tau")? != tau || &rec[1] != band {
            continue;
        }
        if !labels.iter().any(|l| l == &rec[2]) {
            labels.push(rec[2].to_string());
        }
        cells.push((rec[2].to_string(), rec[3].to_string(), parse(4, "value")?));
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::InsufficientData(format!("no shares for tau={tau}, band={band}")));
    }
    if cells.len() != n * n {
        return Err(Error::Malformed(format!("{} cells for {n} series", cells.len())));
    }
    let index = |l: &str| {
        labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| Error::Malformed(format!("column label {l:?} has no row")))
    };
    let mut theta = DMatrix::from_element(n, n, f64::NAN);
    for (r, c, v) in &cells {
        theta[(index(r)?, index(c)?)] = *v;
    }
    if theta.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Malformed("shares must be finite, nonnegative and complete".into()));
    }
    let table = raw_measures(&theta, denominator, horizon, tau, band);
    Ok((labels, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectedness::measures_with;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{i}")).collect()
    }

    fn sample() -> ConnectednessTable {
        let th = DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.1, 0.1, 0.8, 0.1, 0.2, 0.2, 0.6]);
        measures_with(&th, TciDenominator::N, 20, 0.5, "total").unwrap()
    }

    #[test]
    fn edges_point_from_transmitter_to_receiver() {
        let t = sample();
        let net = network(&t, &labels(3), 0.0).unwrap();
        // S1 pushes 0.3 into S0 and receives 0.1 back: S1 -> S0 with weight 20
        let e = net.edges.iter().find(|e| e.source == "S1" && e.target == "S0").unwrap();
        assert!((e.weight - 20.0).abs() < 1e-12);
        for e in &net.edges {
            assert!(e.weight > 0.0);
        }
        // one edge per positive ordered pair
        let positive = t.npdc.iter().filter(|v| **v > 0.0).count();
        assert_eq!(net.edges.len(), positive);
        let s1 = net.nodes.iter().find(|n| n.id == "S1").unwrap();
        assert_eq!(s1.role, "transmitter");
        assert!(s1.net > 0.0);
    }

    #[test]
    fn threshold_prunes_small_edges() {
        let net = network(&sample(), &labels(3), 15.0).unwrap();
        assert!(net.edges.iter().all(|e| e.weight >= 15.0));
        assert!(network(&sample(), &labels(3), -1.0).is_err());
        assert!(network(&sample(), &labels(2), 0.0).is_err());
    }

    #[test]
    fn theta_round_trip_rebuilds_the_table() {
        let t = sample();
        let mut buf = Vec::new();
        write_theta_csv(&mut buf, std::slice::from_ref(&t), &labels(3)).unwrap();
        let (l, back) = read_theta_table(buf.as_slice(), t.tau, &t.band, TciDenominator::N, t.horizon).unwrap();
        assert_eq!(l, labels(3));
        assert_eq!(back, t);
        assert!(read_theta_table(buf.as_slice(), 0.3, &t.band, TciDenominator::N, 0).is_err());
    }

    #[test]
    fn json_has_nodes_and_edges() {
        let net = network(&sample(), &labels(3), 0.0).unwrap();
        let mut buf = Vec::new();
        net.write_json(&mut buf).unwrap();
        let back: Network = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, net);
        let mut e = Vec::new();
        net.write_edges_csv(&mut e).unwrap();
        assert!(String::from_utf8(e).unwrap().starts_with("source,target,weight\n"));
    }
}
