//! Undirected interference network over panel units and the neighborhood
//! exposure summaries built from it.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::panel::PanelDataset;

/// Undirected simple graph on unit indices, stored as sorted adjacency
/// lists. Indices refer to positions in a companion dataset's unit list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    neighbors: Vec<Vec<usize>>,
}

impl Network {
    /// Builds a network on `n_units` nodes from an undirected edge list.
    /// Edges may repeat and may arrive in either orientation; self loops
    /// are rejected.
    pub fn from_edges(n_units: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_units];
        for &(a, b) in edges {
            if a >= n_units || b >= n_units {
                return Err(Error::InvalidInput(format!(
                    "edge ({a}, {b}) is out of range for {n_units} units"
                )));
            }
            if a == b {
                return Err(Error::SelfLoop(a.to_string()));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        Ok(Network { neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect() })
    }

    pub fn n_units(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.neighbors[i].is_empty()
    }

    /// Ascending indices of units with no neighbors.
    pub fn isolated_units(&self) -> Vec<usize> {
        (0..self.n_units()).filter(|&i| self.is_isolated(i)).collect()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(|n| n.len()).sum::<usize>() / 2
    }

    /// Induced subgraph on `keep` (ascending node indices), with nodes
    /// renumbered to their positions in `keep`.
    pub fn subset(&self, keep: &[usize]) -> Result<Network> {
        if !keep.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("node subset must be ascending".into()));
        }
        if let Some(&last) = keep.last() {
            if last >= self.n_units() {
                return Err(Error::InvalidInput("node subset out of range".into()));
            }
        }
        let mut renumber = vec![usize::MAX; self.n_units()];
        for (new, &old) in keep.iter().enumerate() {
            renumber[old] = new;
        }
        let neighbors = keep
            .iter()
            .map(|&old| {
                self.neighbors[old]
                    .iter()
                    .filter(|&&j| renumber[j] != usize::MAX)
                    .map(|&j| renumber[j])
                    .collect()
            })
            .collect();
        Ok(Network { neighbors })
    }
}

/// Loads an undirected edge list CSV with header `src,dst` whose entries
/// are unit ids resolved against `ds`.
pub fn load_network(path: impl AsRef<Path>, ds: &PanelDataset) -> Result<Network> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let src_col = headers
        .iter()
        .position(|h| h == "src")
        .ok_or_else(|| Error::SchemaMismatch("edge file lacks column `src`".into()))?;
    let dst_col = headers
        .iter()
        .position(|h| h == "dst")
        .ok_or_else(|| Error::SchemaMismatch("edge file lacks column `dst`".into()))?;
    let index: std::collections::BTreeMap<&str, usize> = ds
        .unit_ids()
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let mut edges = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let lookup = |col: usize| -> Result<usize> {
            let id = record
                .get(col)
                .ok_or_else(|| Error::SchemaMismatch(format!("edge row {} too short", line + 2)))?;
            index
                .get(id.trim())
                .copied()
                .ok_or_else(|| Error::UnknownUnit(id.trim().to_string()))
        };
        edges.push((lookup(src_col)?, lookup(dst_col)?));
    }
    Network::from_edges(ds.n_units(), &edges)
}

/// Writes the edge list as `src,dst` unit-id pairs, each undirected edge
/// once with src < dst in unit order.
pub fn write_network(net: &Network, ds: &PanelDataset, path: impl AsRef<Path>) -> Result<()> {
    if net.n_units() != ds.n_units() {
        return Err(Error::InvalidInput("network and dataset unit counts differ".into()));
    }
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["src", "dst"])?;
    for i in 0..net.n_units() {
        for &j in net.neighbors(i) {
            if i < j {
                w.write_record([&ds.unit_ids()[i], &ds.unit_ids()[j]])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// How neighborhood treatment is summarized into a scalar exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborhoodKind {
    /// log2(1 + number of treated neighbors): a diminishing-returns dose.
    Public,
    /// 1 if any neighbor is treated, else 0.
    Private,
}

/// Exposure of unit `i` at one time, given that its neighbors' treated
/// indicators sum to `treated_neighbors`. Isolated units have no exposure
/// and are excluded upstream.
fn exposure(kind: NeighborhoodKind, treated_neighbors: usize) -> f64 {
    match kind {
        NeighborhoodKind::Public => (1.0 + treated_neighbors as f64).log2(),
        NeighborhoodKind::Private => (treated_neighbors > 0) as u8 as f64,
    }
}

/// Neighborhood treatment exposure for every unit at time index `t`.
/// Isolated units get `None`.
pub fn neighborhood_treatment(
    ds: &PanelDataset,
    net: &Network,
    kind: NeighborhoodKind,
    t: usize,
) -> Result<Vec<Option<f64>>> {
    if net.n_units() != ds.n_units() {
        return Err(Error::InvalidInput("network and dataset unit counts differ".into()));
    }
    let treated = ds.treated_at(t);
    Ok((0..ds.n_units())
        .map(|i| {
            if net.is_isolated(i) {
                None
            } else {
                let count = net.neighbors(i).iter().filter(|&&j| treated[j] == 1).count();
                Some(exposure(kind, count))
            }
        })
        .collect())
}

/// Unit-major `n_units x n_times` exposure matrix; `None` rows for
/// isolated units.
pub fn neighborhood_treatment_matrix(
    ds: &PanelDataset,
    net: &Network,
    kind: NeighborhoodKind,
) -> Result<Vec<Option<f64>>> {
    let mut out = Vec::with_capacity(ds.n_units() * ds.n_times());
    for t in 0..ds.n_times() {
        let col = neighborhood_treatment(ds, net, kind, t)?;
        out.push(col);
    }
    // Transpose from time-major to unit-major.
    let t_count = ds.n_times();
    let mut flat = Vec::with_capacity(ds.n_units() * t_count);
    for i in 0..ds.n_units() {
        for (_, col) in out.iter().enumerate().take(t_count) {
            flat.push(col[i]);
        }
    }
    Ok(flat)
}

/// Aggregation applied over each unit's neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryStat {
    Mean,
    Sum,
}

/// Summarizes covariate `k` over each unit's neighborhood at time `t`.
/// Isolated units get `None`; under `Mean` the denominator is the degree.
pub fn neighborhood_covariate_summary(
    ds: &PanelDataset,
    net: &Network,
    k: usize,
    stat: SummaryStat,
    t: usize,
) -> Result<Vec<Option<f64>>> {
    if net.n_units() != ds.n_units() {
        return Err(Error::InvalidInput("network and dataset unit counts differ".into()));
    }
    if k >= ds.n_covariates() {
        return Err(Error::InvalidInput(format!("covariate index {k} out of range")));
    }
    Ok((0..ds.n_units())
        .map(|i| {
            if net.is_isolated(i) {
                None
            } else {
                let sum: f64 = net.neighbors(i).iter().map(|&j| ds.covariate(j, t, k)).sum();
                Some(match stat {
                    SummaryStat::Sum => sum,
                    SummaryStat::Mean => sum / net.degree(i) as f64,
                })
            }
        })
        .collect())
}

/// Column name used for neighborhood summaries of covariate `col`.
pub fn neighborhood_column_name(col: &str, stat: SummaryStat) -> String {
    match stat {
        SummaryStat::Mean => format!("{col}_nbr_mean"),
        SummaryStat::Sum => format!("{col}_nbr_sum"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{ArmScheme, PanelDataset, PanelParts, WindowConfig};

    fn dataset(n: usize, treatment: Vec<i64>, covariates: Vec<f64>) -> PanelDataset {
        let t = treatment.len() / n;
        PanelDataset::from_parts(PanelParts {
            unit_ids: (0..n).map(|i| format!("u{i}")).collect(),
            times: (1..=t as i64).collect(),
            outcome: vec![0.0; n * t],
            treatment,
            covariate_names: vec!["x1".into()],
            covariates,
            baseline_names: vec![],
            baseline: vec![],
            arm_scheme: ArmScheme::binary(),
            window: WindowConfig::default(),
        })
        .unwrap()
    }

    #[test]
    fn from_edges_dedups_and_symmetrizes() {
        let net = Network::from_edges(4, &[(0, 1), (1, 0), (0, 1), (2, 3)]).unwrap();
        assert_eq!(net.neighbors(0), &[1]);
        assert_eq!(net.neighbors(1), &[0]);
        assert_eq!(net.n_edges(), 2);
        assert!(!net.is_isolated(3));
    }

    #[test]
    fn self_loop_rejected() {
        let err = Network::from_edges(3, &[(1, 1)]).unwrap_err();
        assert!(matches!(err, Error::SelfLoop(_)), "{err:?}");
    }

    #[test]
    fn public_exposure_is_log2_of_one_plus_count() {
        // Star: unit 0 has neighbors 1..=4, three of them treated.
        let edges: Vec<(usize, usize)> = (1..5).map(|j| (0, j)).collect();
        let net = Network::from_edges(6, &edges).unwrap();
        let ds = dataset(6, vec![0, 1, 1, 1, 0, 1], vec![0.0; 6]);
        let z = neighborhood_treatment(&ds, &net, NeighborhoodKind::Public, 0).unwrap();
        assert_eq!(z[0], Some(2.0)); // log2(1 + 3)
        assert_eq!(z[1], Some(0.0)); // only neighbor is unit 0, untreated
        assert_eq!(z[5], None); // isolated
    }

    #[test]
    fn private_exposure_is_any_treated_indicator() {
        let net = Network::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let ds = dataset(4, vec![0, 1, 0, 0], vec![0.0; 4]);
        let z = neighborhood_treatment(&ds, &net, NeighborhoodKind::Private, 0).unwrap();
        assert_eq!(z, vec![Some(1.0), Some(0.0), Some(0.0), Some(0.0)]);
    }

    #[test]
    fn covariate_summary_mean_and_sum() {
        let net = Network::from_edges(3, &[(0, 1), (0, 2)]).unwrap();
        let ds = dataset(3, vec![0, 0, 0], vec![10.0, 2.0, 4.0]);
        let mean =
            neighborhood_covariate_summary(&ds, &net, 0, SummaryStat::Mean, 0).unwrap();
        let sum = neighborhood_covariate_summary(&ds, &net, 0, SummaryStat::Sum, 0).unwrap();
        assert_eq!(mean[0], Some(3.0));
        assert_eq!(sum[0], Some(6.0));
        assert_eq!(mean[1], Some(10.0));
    }

    #[test]
    fn subset_renumbers_and_drops_external_edges() {
        let net = Network::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let sub = net.subset(&[1, 2, 4]).unwrap();
        assert_eq!(sub.n_units(), 3);
        assert_eq!(sub.neighbors(0), &[1]); // old 1 keeps old 2
        assert_eq!(sub.neighbors(1), &[0]); // old 2 loses old 3
        assert!(sub.is_isolated(2)); // old 4 loses old 3
    }

    #[test]
    fn edge_roundtrip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(4, vec![0, 1, 0, 0], vec![0.0; 4]);
        let net = Network::from_edges(4, &[(2, 0), (1, 3)]).unwrap();
        let path = dir.path().join("edges.csv");
        write_network(&net, &ds, &path).unwrap();
        let back = load_network(&path, &ds).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn unknown_unit_in_edge_file() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(2, vec![0, 1], vec![0.0; 2]);
        let path = dir.path().join("edges.csv");
        std::fs::write(&path, "src,dst\nu0,zz\n").unwrap();
        let err = load_network(&path, &ds).unwrap_err();
        assert!(matches!(err, Error::UnknownUnit(_)), "{err:?}");
    }
}
