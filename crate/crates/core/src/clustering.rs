//! BS serving sets for the four cooperation regimes.
//!
//! Every serving set is ordered by descending RSRP (ties to the lower BS
//! index), so `serving[k][0]` is always the master BS of UE `k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::GridShape;

/// RSRP table indexed `[bs][ue]`, dBm.
pub type RsrpTable = [Vec<f64>];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "single")]
    SingleNode,
    #[serde(rename = "static")]
    StaticCoop,
    #[serde(rename = "central")]
    NetworkCoopCentralized,
    #[serde(rename = "distributed")]
    NetworkCoopDistributed,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::SingleNode,
        Scheme::StaticCoop,
        Scheme::NetworkCoopCentralized,
        Scheme::NetworkCoopDistributed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::SingleNode => "single",
            Scheme::StaticCoop => "static",
            Scheme::NetworkCoopCentralized => "central",
            Scheme::NetworkCoopDistributed => "distributed",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = ClusteringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Scheme::SingleNode),
            "static" => Ok(Scheme::StaticCoop),
            "central" => Ok(Scheme::NetworkCoopCentralized),
            "distributed" => Ok(Scheme::NetworkCoopDistributed),
            other => Err(ClusteringError::UnknownScheme(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ClusteringError {
    #[error("unknown scheme `{0}` (expected single|static|central|distributed)")]
    UnknownScheme(String),
    #[error("group count {groups} does not divide {n_bs} BSs")]
    GroupCount { groups: usize, n_bs: usize },
    #[error("cluster size {l} outside 1..={n_bs}")]
    ClusterSize { l: usize, n_bs: usize },
    #[error("RSRP table is empty")]
    Empty,
}

/// One precoding solve unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub master: usize,
    /// Union of the members' serving sets, ascending.
    pub bss: Vec<usize>,
    /// UEs whose precoders this cluster designs, ascending.
    pub ues: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub scheme: Scheme,
    pub n_bs: usize,
    pub serving: Vec<Vec<usize>>,
    pub master: Vec<usize>,
    pub clusters: Vec<Cluster>,
}

impl ClusterAssignment {
    pub fn n_ue(&self) -> usize {
        self.serving.len()
    }

    /// BSs serving at least one UE.
    pub fn active_bs(&self) -> Vec<usize> {
        let mut used = vec![false; self.n_bs];
        for s in &self.serving {
            for &b in s {
                used[b] = true;
            }
        }
        (0..self.n_bs).filter(|&b| used[b]).collect()
    }

    /// Writes rows `drop,ue,rank,bs`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W, drop: usize) -> std::io::Result<()> {
        for (ue, set) in self.serving.iter().enumerate() {
            for (rank, bs) in set.iter().enumerate() {
                writeln!(out, "{drop},{ue},{rank},{bs}")?;
            }
        }
        Ok(())
    }
}

pub const ASSIGNMENT_CSV_HEADER: &str = "drop,ue,rank,bs";

fn dims(rsrp: &RsrpTable) -> Result<(usize, usize), ClusteringError> {
    let n_bs = rsrp.len();
    let n_ue = rsrp.first().map_or(0, |r| r.len());
    if n_bs == 0 || n_ue == 0 {
        return Err(ClusteringError::Empty);
    }
    Ok((n_bs, n_ue))
}

/// `candidates` sorted by descending RSRP for `ue`, ties to lower index.
fn rank_by_rsrp(
    rsrp: &RsrpTable,
    ue: usize,
    candidates: impl IntoIterator<Item = usize>,
) -> Vec<usize> {
    let mut v: Vec<usize> = candidates.into_iter().collect();
    v.sort_by(|&a, &b| rsrp[b][ue].total_cmp(&rsrp[a][ue]).then(a.cmp(&b)));
    v
}

fn build(
    scheme: Scheme,
    n_bs: usize,
    serving: Vec<Vec<usize>>,
    clusters: Vec<Cluster>,
) -> ClusterAssignment {
    let master = serving.iter().map(|s| s[0]).collect();
    ClusterAssignment {
        scheme,
        n_bs,
        serving,
        master,
        clusters,
    }
}

/// Groups UEs by a key and turns each group into a cluster whose BS set is
/// the union of the members' serving sets.
fn clusters_by<F: Fn(usize) -> usize>(
    serving: &[Vec<usize>],
    n_keys: usize,
    key: F,
    master_of: impl Fn(usize) -> usize,
) -> Vec<Cluster> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_keys];
    for ue in 0..serving.len() {
        groups[key(ue)].push(ue);
    }
    groups
        .into_iter()
        .enumerate()
        .filter(|(_, ues)| !ues.is_empty())
        .map(|(k, ues)| {
            let mut bss: Vec<usize> = ues
                .iter()
                .flat_map(|&u| serving[u].iter().copied())
                .collect();
            bss.sort_unstable();
            bss.dedup();
            Cluster {
                master: master_of(k),
                bss,
                ues,
            }
        })
        .collect()
}

pub fn assign_single_node(rsrp: &RsrpTable) -> Result<ClusterAssignment, ClusteringError> {
    let (n_bs, n_ue) = dims(rsrp)?;
    let serving: Vec<Vec<usize>> = (0..n_ue)
        .map(|ue| vec![rank_by_rsrp(rsrp, ue, 0..n_bs)[0]])
        .collect();
    let clusters = clusters_by(&serving, n_bs, |ue| serving[ue][0], |bs| bs);
    Ok(build(Scheme::SingleNode, n_bs, serving, clusters))
}

/// Every UE served by every BS; one global cluster.
pub fn assign_centralized(rsrp: &RsrpTable) -> Result<ClusterAssignment, ClusteringError> {
    let (n_bs, n_ue) = dims(rsrp)?;
    let serving: Vec<Vec<usize>> = (0..n_ue)
        .map(|ue| rank_by_rsrp(rsrp, ue, 0..n_bs))
        .collect();
    let clusters = vec![Cluster {
        master: 0,
        bss: (0..n_bs).collect(),
        ues: (0..n_ue).collect(),
    }];
    Ok(build(
        Scheme::NetworkCoopCentralized,
        n_bs,
        serving,
        clusters,
    ))
}

/// Partitions BS indices into `groups` contiguous grid blocks. Uses the most
/// square block shape that tiles the grid; falls back to contiguous index
/// runs when the grid is ragged or no tiling exists.
pub fn static_groups(
    grid: GridShape,
    n_bs: usize,
    groups: usize,
) -> Result<Vec<Vec<usize>>, ClusteringError> {
    if groups == 0 || !n_bs.is_multiple_of(groups) {
        return Err(ClusteringError::GroupCount { groups, n_bs });
    }
    let size = n_bs / groups;
    let mut best: Option<(usize, usize)> = None;
    if grid.rows * grid.cols == n_bs {
        for br in 1..=size {
            if !size.is_multiple_of(br) {
                continue;
            }
            let bc = size / br;
            if grid.rows.is_multiple_of(br) && grid.cols.is_multiple_of(bc) {
                let better = match best {
                    None => true,
                    Some((r, c)) => br.abs_diff(bc) < r.abs_diff(c),
                };
                if better {
                    best = Some((br, bc));
                }
            }
        }
    }
    let Some((br, bc)) = best else {
        return Ok((0..groups)
            .map(|g| (g * size..(g + 1) * size).collect())
            .collect());
    };
    let blocks_per_row = grid.cols / bc;
    let mut out = vec![Vec::with_capacity(size); groups];
    for bs in 0..n_bs {
        let (r, c) = grid.cell(bs);
        out[(r / br) * blocks_per_row + c / bc].push(bs);
    }
    Ok(out)
}

/// Each UE is served by the whole fixed group containing its best-RSRP BS.
pub fn assign_static_clusters(
    grid: GridShape,
    group_count: usize,
    rsrp: &RsrpTable,
) -> Result<ClusterAssignment, ClusteringError> {
    let (n_bs, n_ue) = dims(rsrp)?;
    let groups = static_groups(grid, n_bs, group_count)?;
    let mut group_of = vec![0; n_bs];
    for (g, members) in groups.iter().enumerate() {
        for &b in members {
            group_of[b] = g;
        }
    }
    let best: Vec<usize> = (0..n_ue)
        .map(|ue| rank_by_rsrp(rsrp, ue, 0..n_bs)[0])
        .collect();
    let serving: Vec<Vec<usize>> = (0..n_ue)
        .map(|ue| rank_by_rsrp(rsrp, ue, groups[group_of[best[ue]]].iter().copied()))
        .collect();
    let clusters = clusters_by(
        &serving,
        groups.len(),
        |ue| group_of[best[ue]],
        |g| groups[g][0],
    );
    Ok(build(Scheme::StaticCoop, n_bs, serving, clusters))
}

/// Top-`l` BSs by RSRP per UE. UEs sharing a master BS form one cluster.
pub fn assign_user_centric(
    rsrp: &RsrpTable,
    l: usize,
) -> Result<ClusterAssignment, ClusteringError> {
    let (n_bs, n_ue) = dims(rsrp)?;
    if l == 0 || l > n_bs {
        return Err(ClusteringError::ClusterSize { l, n_bs });
    }
    let serving: Vec<Vec<usize>> = (0..n_ue)
        .map(|ue| {
            let mut ranked = rank_by_rsrp(rsrp, ue, 0..n_bs);
            ranked.truncate(l);
            ranked
        })
        .collect();
    let clusters = clusters_by(&serving, n_bs, |ue| serving[ue][0], |bs| bs);
    Ok(build(
        Scheme::NetworkCoopDistributed,
        n_bs,
        serving,
        clusters,
    ))
}

/// Dispatches on the scheme with the configured parameters.
pub fn assign(
    scheme: Scheme,
    grid: GridShape,
    rsrp: &RsrpTable,
    static_groups: usize,
    l: usize,
) -> Result<ClusterAssignment, ClusteringError> {
    match scheme {
        Scheme::SingleNode => assign_single_node(rsrp),
        Scheme::StaticCoop => assign_static_clusters(grid, static_groups, rsrp),
        Scheme::NetworkCoopCentralized => assign_centralized(rsrp),
        Scheme::NetworkCoopDistributed => assign_user_centric(rsrp, l),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(cols: &[&[f64]]) -> Vec<Vec<f64>> {
        // cols[ue][bs] -> [bs][ue]
        let n_bs = cols[0].len();
        (0..n_bs)
            .map(|b| cols.iter().map(|c| c[b]).collect())
            .collect()
    }

    #[test]
    fn single_node_picks_argmax() {
        let r = table(&[&[-60.0, -70.0, -80.0]]);
        let a = assign_single_node(&r).unwrap();
        assert_eq!(a.serving, vec![vec![0]]);
        assert_eq!(a.master, vec![0]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let r = table(&[&[-90.0, -65.0, -65.0]]);
        assert_eq!(assign_single_node(&r).unwrap().serving, vec![vec![1]]);
        assert_eq!(
            assign_user_centric(&r, 2).unwrap().serving,
            vec![vec![1, 2]]
        );
    }

    #[test]
    fn permuting_bs_rows_permutes_assignment() {
        let r = table(&[&[-61.0, -75.0, -58.0], &[-90.0, -52.0, -70.0]]);
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let base = assign_single_node(&r).unwrap();
        for p in perms {
            // row i of the permuted table is row p[i] of the original
            let permuted: Vec<Vec<f64>> = p.iter().map(|&i| r[i].clone()).collect();
            let a = assign_single_node(&permuted).unwrap();
            for ue in 0..2 {
                assert_eq!(p[a.serving[ue][0]], base.serving[ue][0]);
            }
        }
    }

    #[test]
    fn sixteen_grid_four_groups_are_two_by_two() {
        let g = static_groups(GridShape { rows: 4, cols: 4 }, 16, 4).unwrap();
        assert_eq!(
            g,
            vec![
                vec![0, 1, 4, 5],
                vec![2, 3, 6, 7],
                vec![8, 9, 12, 13],
                vec![10, 11, 14, 15]
            ]
        );
        assert!(matches!(
            static_groups(GridShape { rows: 4, cols: 4 }, 16, 3),
            Err(ClusteringError::GroupCount { .. })
        ));
    }

    #[test]
    fn static_extremes_degenerate() {
        let r: Vec<Vec<f64>> = (0..4)
            .map(|b| (0..3).map(|u| -((b * 7 + u * 3) % 11) as f64).collect())
            .collect();
        let grid = GridShape { rows: 2, cols: 2 };
        let one = assign_static_clusters(grid, 1, &r).unwrap();
        assert_eq!(one.serving, assign_centralized(&r).unwrap().serving);
        let all = assign_static_clusters(grid, 4, &r).unwrap();
        assert_eq!(all.serving, assign_single_node(&r).unwrap().serving);
    }

    #[test]
    fn user_centric_top_two_matches_exhaustive_sort() {
        let r = table(&[&[-70.0, -55.0, -80.0, -62.0], &[-50.0, -95.0, -51.0, -66.0]]);
        let a = assign_user_centric(&r, 2).unwrap();
        assert_eq!(a.serving, vec![vec![1, 3], vec![0, 2]]);
        assert_eq!(a.master, vec![1, 0]);
        assert_eq!(a.clusters.len(), 2);
        assert!(assign_user_centric(&r, 5).is_err());
        assert!(assign_user_centric(&r, 0).is_err());
    }

    #[test]
    fn shared_master_merges_clusters() {
        let r = table(&[
            &[-50.0, -60.0, -70.0],
            &[-52.0, -80.0, -61.0],
            &[-90.0, -40.0, -70.0],
        ]);
        let a = assign_user_centric(&r, 2).unwrap();
        assert_eq!(a.clusters.len(), 2);
        assert_eq!(
            a.clusters[0],
            Cluster {
                master: 0,
                bss: vec![0, 1, 2],
                ues: vec![0, 1]
            }
        );
        assert_eq!(
            a.clusters[1],
            Cluster {
                master: 1,
                bss: vec![1, 2],
                ues: vec![2]
            }
        );
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("cell-free".parse::<Scheme>().is_err());
    }

    fn rsrp_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..7, 1usize..6).prop_flat_map(|(n_bs, n_ue)| {
            prop::collection::vec(prop::collection::vec(-120.0f64..-40.0, n_ue), n_bs)
        })
    }

    proptest! {
        #[test]
        fn degeneracy_chain(r in rsrp_strategy()) {
            let n_bs = r.len();
            let single = assign_single_node(&r).unwrap();
            prop_assert_eq!(&assign_user_centric(&r, 1).unwrap().serving, &single.serving);
            prop_assert_eq!(&assign_user_centric(&r, n_bs).unwrap().serving, &assign_centralized(&r).unwrap().serving);
            let grid = GridShape::for_count(n_bs);
            prop_assert_eq!(&assign_static_clusters(grid, 1, &r).unwrap().serving, &assign_centralized(&r).unwrap().serving);
        }

        #[test]
        fn master_is_best_member(r in rsrp_strategy(), l in 1usize..7) {
            let n_bs = r.len();
            let l = l.min(n_bs);
            let grid = GridShape::for_count(n_bs);
            for a in [
                assign_single_node(&r).unwrap(),
                assign_centralized(&r).unwrap(),
                assign_user_centric(&r, l).unwrap(),
                assign_static_clusters(grid, 1, &r).unwrap(),
            ] {
                for (ue, set) in a.serving.iter().enumerate() {
                    prop_assert!(set.contains(&a.master[ue]));
                    for &b in set {
                        prop_assert!(r[a.master[ue]][ue] >= r[b][ue]);
                    }
                }
                let covered: usize = a.clusters.iter().map(|c| c.ues.len()).sum();
                prop_assert_eq!(covered, a.n_ue());
            }
            let uc = assign_user_centric(&r, l).unwrap();
            prop_assert!(uc.serving.iter().all(|s| s.len() == l));
        }

        #[test]
        fn invariant_to_common_offset(r in rsrp_strategy(), offset in -30.0f64..30.0, l in 1usize..7) {
            let shifted: Vec<Vec<f64>> = r.iter().map(|row| row.iter().map(|v| v + offset).collect()).collect();
            let l = l.min(r.len());
            prop_assert_eq!(assign_single_node(&r).unwrap(), assign_single_node(&shifted).unwrap());
            prop_assert_eq!(assign_user_centric(&r, l).unwrap(), assign_user_centric(&shifted, l).unwrap());
        }
    }
}
