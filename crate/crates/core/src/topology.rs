//! Structural inputs of the lane-graph attention: reciprocal-distance RPE
//! matrices, the lateral connection-type tensor, and shortest-path hop counts.

use std::collections::HashMap;
use std::path::Path;

use lgt_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lane_graph::{LaneId, LateralLink, Scenario};

/// Smallest midpoint distance used in the reciprocal fill, meters.
pub const MIN_DISTANCE: f64 = 0.1;

pub const DEFAULT_CONNECTION_TYPES: [&str; 4] = ["solid", "dashed", "double_solid", "none"];

pub fn default_categories() -> Vec<String> {
    DEFAULT_CONNECTION_TYPES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RpeMatrices {
    pub m_p: Tensor,
    pub m_s: Tensor,
    pub m_l: Tensor,
    pub m_r: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionTypeTensor {
    /// `[n, n, C]`
    pub m_c: Tensor,
    pub categories: Vec<String>,
}

/// Dense `n × n` hop counts; 0 marks both the diagonal and unreachable pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopMatrix {
    pub n: usize,
    pub hops: Vec<i64>,
}

impl HopMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, hops: vec![0; n * n] }
    }

    pub fn at(&self, i: usize, j: usize) -> i64 {
        self.hops[i * self.n + j]
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        Self {
            n,
            hops: (0..n * n).map(|k| self.hops[(k % n) * n + k / n]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopologyMatrices {
    pub rpe: RpeMatrices,
    pub types: ConnectionTypeTensor,
    pub pre_spd: HopMatrix,
    pub suc_spd: HopMatrix,
    pub pre_bias: Tensor,
    pub suc_bias: Tensor,
}

impl TopologyMatrices {
    pub fn num_lanes(&self) -> usize {
        self.pre_spd.n
    }

    pub fn num_categories(&self) -> usize {
        self.types.categories.len()
    }

    /// Relabels lanes so that new lane `i` is old lane `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.num_lanes();
        let c = self.num_categories();
        let mat = |t: &Tensor| Tensor::from_fn(&[n, n], |k| t.data()[perm[k / n] * n + perm[k % n]]);
        let hops = |h: &HopMatrix| HopMatrix {
            n,
            hops: (0..n * n).map(|k| h.at(perm[k / n], perm[k % n])).collect(),
        };
        Self {
            rpe: RpeMatrices {
                m_p: mat(&self.rpe.m_p),
                m_s: mat(&self.rpe.m_s),
                m_l: mat(&self.rpe.m_l),
                m_r: mat(&self.rpe.m_r),
            },
            types: ConnectionTypeTensor {
                m_c: Tensor::from_fn(&[n, n, c], |k| {
                    let (ij, ch) = (k / c, k % c);
                    self.types.m_c.data()[(perm[ij / n] * n + perm[ij % n]) * c + ch]
                }),
                categories: self.types.categories.clone(),
            },
            pre_spd: hops(&self.pre_spd),
            suc_spd: hops(&self.suc_spd),
            pre_bias: mat(&self.pre_bias),
            suc_bias: mat(&self.suc_bias),
        }
    }
}

fn indexed_pairs(
    pairs: impl Iterator<Item = (LaneId, LaneId)>,
    index: &HashMap<LaneId, usize>,
) -> Result<Vec<(usize, usize)>> {
    pairs
        .map(|(a, b)| match (index.get(&a), index.get(&b)) {
            (Some(&i), Some(&j)) => Ok((i, j)),
            _ => Err(Error::validation("unknown lane", format!("pair ({a}, {b})"))),
        })
        .collect()
}

fn reciprocal_fill(n: usize, pairs: &[(usize, usize)], mids: &[crate::geometry::Point2]) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    for &(i, j) in pairs {
        if i != j {
            m.set(&[i, j], 1.0 / mids[i].distance(mids[j]).max(MIN_DISTANCE));
        }
    }
    m
}

/// Each connected pair gets `1 / max(d, 0.1)` with `d` the distance between
/// lane midpoints; all other entries are 0.
pub fn build_rpe_matrices(s: &Scenario) -> Result<RpeMatrices> {
    let n = s.num_lanes();
    let index = s.lane_index();
    let mids = s.lane_midpoints();
    let c = &s.connectivity;
    let lat = |l: &[LateralLink]| indexed_pairs(l.iter().map(|x| (x.a, x.b)), &index);
    Ok(RpeMatrices {
        m_p: reciprocal_fill(n, &indexed_pairs(c.predecessors.iter().copied(), &index)?, &mids),
        m_s: reciprocal_fill(n, &indexed_pairs(c.successors.iter().copied(), &index)?, &mids),
        m_l: reciprocal_fill(n, &lat(&c.left)?, &mids),
        m_r: reciprocal_fill(n, &lat(&c.right)?, &mids),
    })
}

/// One-hot connection type for every stored lateral pair, in `categories` order.
pub fn build_connection_type_tensor(s: &Scenario, categories: &[String]) -> Result<ConnectionTypeTensor> {
    let n = s.num_lanes();
    let c = categories.len();
    let index = s.lane_index();
    let mut m_c = Tensor::zeros(&[n, n, c]);
    for link in s.connectivity.left.iter().chain(&s.connectivity.right) {
        let cat = categories
            .iter()
            .position(|k| *k == link.connection_type)
            .ok_or_else(|| Error::UnknownConnectionType(link.connection_type.clone()))?;
        let [(i, j)] = indexed_pairs(std::iter::once((link.a, link.b)), &index)?[..] else {
            unreachable!()
        };
        let slot = &mut m_c.data_mut()[(i * n + j) * c..(i * n + j + 1) * c];
        slot.fill(0.0);
        slot[cat] = 1.0;
    }
    Ok(ConnectionTypeTensor {
        m_c,
        categories: categories.to_vec(),
    })
}

/// Hop counts along a directed relation by expanding frontiers from each lane.
///
/// `pairs` holds `(i, j)` when lane `j` is directly reachable from lane `i`.
/// Each new frontier keeps only lanes not seen before, and every lane in the
/// k-th frontier is filled with k.
pub fn build_spd_matrix(pairs: &[(usize, usize)], n: usize) -> Result<HopMatrix> {
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
        return Err(Error::Argument(format!("pair ({a}, {b}) out of range for {n} lanes")));
    }
    let mut reach: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in pairs {
        if !reach[a].contains(&b) {
            reach[a].push(b);
        }
    }
    let mut spd = HopMatrix::zeros(n);
    for i in 0..n {
        let mut appeared = vec![false; n];
        appeared[i] = true;
        let mut neighbors = vec![i];
        let mut level = 1;
        while !neighbors.is_empty() {
            let mut next = Vec::new();
            for &j in &neighbors {
                for &k in &reach[j] {
                    if !appeared[k] {
                        appeared[k] = true;
                        next.push(k);
                    }
                }
            }
            for &k in &next {
                spd.hops[i * n + k] = level;
            }
            level += 1;
            neighbors = next;
        }
    }
    Ok(spd)
}

/// `1/h` for `h ≥ 1`, 0 for `h = 0`.
pub fn distance_to_bias(hops: &HopMatrix) -> Result<Tensor> {
    if let Some(pos) = hops.hops.iter().position(|&h| h < 0) {
        return Err(Error::Argument(format!(
            "negative hop count {} at ({}, {})",
            hops.hops[pos],
            pos / hops.n,
            pos % hops.n
        )));
    }
    Ok(Tensor::from_fn(&[hops.n, hops.n], |k| match hops.hops[k] {
        0 => 0.0,
        h => 1.0 / h as f64,
    }))
}

pub fn build_topology(s: &Scenario, categories: &[String]) -> Result<TopologyMatrices> {
    let n = s.num_lanes();
    let index = s.lane_index();
    let pre_spd = build_spd_matrix(&indexed_pairs(s.connectivity.predecessors.iter().copied(), &index)?, n)?;
    let suc_spd = build_spd_matrix(&indexed_pairs(s.connectivity.successors.iter().copied(), &index)?, n)?;
    Ok(TopologyMatrices {
        rpe: build_rpe_matrices(s)?,
        types: build_connection_type_tensor(s, categories)?,
        pre_bias: distance_to_bias(&pre_spd)?,
        suc_bias: distance_to_bias(&suc_spd)?,
        pre_spd,
        suc_spd,
    })
}

#[derive(Serialize, Deserialize)]
struct ArchivedMatrix {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ArchivedHops {
    shape: [usize; 2],
    data: Vec<i64>,
}

/// JSON archive; every matrix is row-major with an explicit shape.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Archive {
    format: String,
    version: u32,
    categories: Vec<String>,
    m_p: ArchivedMatrix,
    m_s: ArchivedMatrix,
    m_l: ArchivedMatrix,
    m_r: ArchivedMatrix,
    m_c: ArchivedMatrix,
    pre_spd: ArchivedHops,
    suc_spd: ArchivedHops,
}

const ARCHIVE_FORMAT: &str = "lgt-topology";

fn archived(t: &Tensor) -> ArchivedMatrix {
    ArchivedMatrix {
        shape: t.shape().to_vec(),
        data: t.data().to_vec(),
    }
}

impl TopologyMatrices {
    pub fn to_json(&self) -> String {
        let hops = |h: &HopMatrix| ArchivedHops {
            shape: [h.n, h.n],
            data: h.hops.clone(),
        };
        let archive = Archive {
            format: ARCHIVE_FORMAT.into(),
            version: 1,
            categories: self.types.categories.clone(),
            m_p: archived(&self.rpe.m_p),
            m_s: archived(&self.rpe.m_s),
            m_l: archived(&self.rpe.m_l),
            m_r: archived(&self.rpe.m_r),
            m_c: archived(&self.types.m_c),
            pre_spd: hops(&self.pre_spd),
            suc_spd: hops(&self.suc_spd),
        };
        serde_json::to_string(&archive).expect("archive serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Archive = serde_json::from_str(text).map_err(|e| Error::Argument(format!("matrix archive: {e}")))?;
        if a.format != ARCHIVE_FORMAT || a.version != 1 {
            return Err(Error::Argument(format!("unsupported archive {} v{}", a.format, a.version)));
        }
        let tensor = |m: ArchivedMatrix| Tensor::new(m.shape, m.data);
        let hops = |h: ArchivedHops| -> Result<HopMatrix> {
            if h.shape[0] != h.shape[1] || h.data.len() != h.shape[0] * h.shape[1] {
                return Err(Error::Argument(format!("bad hop matrix shape {:?}", h.shape)));
            }
            Ok(HopMatrix { n: h.shape[0], hops: h.data })
        };
        let pre_spd = hops(a.pre_spd)?;
        let suc_spd = hops(a.suc_spd)?;
        Ok(Self {
            rpe: RpeMatrices {
                m_p: tensor(a.m_p)?,
                m_s: tensor(a.m_s)?,
                m_l: tensor(a.m_l)?,
                m_r: tensor(a.m_r)?,
            },
            types: ConnectionTypeTensor {
                m_c: tensor(a.m_c)?,
                categories: a.categories,
            },
            pre_bias: distance_to_bias(&pre_spd)?,
            suc_bias: distance_to_bias(&suc_spd)?,
            pre_spd,
            suc_spd,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use crate::lane_graph::{Lane, LaneConnectivity, LaneType};
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn bfs_oracle(pairs: &[(usize, usize)], n: usize) -> Vec<i64> {
        let mut out = vec![0; n * n];
        for s in 0..n {
            let mut dist = vec![-1i64; n];
            dist[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &(a, b) in pairs {
                    if a == u && dist[b] < 0 {
                        dist[b] = dist[u] + 1;
                        q.push_back(b);
                    }
                }
            }
            for t in 0..n {
                out[s * n + t] = dist[t].max(0);
            }
        }
        out
    }

    fn lanes_at(xs: &[f64]) -> Vec<Lane> {
        xs.iter()
            .enumerate()
            .map(|(i, &x)| Lane::new(i as u64, LaneType::Vehicle, &[Point2::new(x, -1.0), Point2::new(x, 1.0)]))
            .collect()
    }

    fn scene(lanes: Vec<Lane>, connectivity: LaneConnectivity) -> Scenario {
        Scenario {
            lanes,
            connectivity,
            agents: vec![],
            target_ids: vec![0],
            ground_truth: None,
        }
    }

    fn link(a: u64, b: u64, t: &str) -> LateralLink {
        LateralLink {
            a,
            b,
            connection_type: t.into(),
        }
    }

    #[test]
    fn chain_example() {
        // Lane 1 has predecessor 0, lane 2 has predecessor 1.
        let spd = build_spd_matrix(&[(1, 0), (2, 1)], 3).unwrap();
        assert_eq!(spd.hops, vec![0, 0, 0, 1, 0, 0, 2, 1, 0]);
    }

    #[test]
    fn diamond_example() {
        let spd = build_spd_matrix(&[(3, 1), (3, 2), (1, 0), (2, 0)], 4).unwrap();
        assert_eq!((spd.at(3, 1), spd.at(3, 2), spd.at(3, 0), spd.at(3, 3)), (1, 1, 2, 0));
    }

    #[test]
    fn empty_relation_gives_zero_matrix() {
        assert_eq!(build_spd_matrix(&[], 4).unwrap(), HopMatrix::zeros(4));
        assert!(matches!(build_spd_matrix(&[(0, 4)], 4), Err(Error::Argument(_))));
    }

    #[test]
    fn reciprocal_bias_values() {
        let h = HopMatrix { n: 2, hops: vec![0, 1, 2, 0] };
        assert_eq!(distance_to_bias(&h).unwrap().data(), &[0.0, 1.0, 0.5, 0.0]);
        let bad = HopMatrix { n: 1, hops: vec![-1] };
        assert!(matches!(distance_to_bias(&bad), Err(Error::Argument(_))));
    }

    #[test]
    fn rpe_fill_rules() {
        let empty = build_rpe_matrices(&scene(lanes_at(&[0.0, 4.0]), LaneConnectivity::default())).unwrap();
        for m in [&empty.m_p, &empty.m_s, &empty.m_l, &empty.m_r] {
            assert!(m.data().iter().all(|&v| v == 0.0));
        }
        let conn = LaneConnectivity {
            left: vec![link(0, 1, "dashed")],
            right: vec![link(2, 0, "solid")],
            ..Default::default()
        };
        let rpe = build_rpe_matrices(&scene(lanes_at(&[0.0, 4.0, 0.0]), conn)).unwrap();
        assert_eq!(rpe.m_l.at(&[0, 1]), 0.25);
        assert_eq!(rpe.m_r.at(&[2, 0]), 10.0);
        assert_eq!(rpe.m_l.at(&[1, 0]), 0.0);
    }

    #[test]
    fn connection_type_one_hot() {
        let conn = LaneConnectivity {
            left: vec![link(0, 1, "dashed")],
            ..Default::default()
        };
        let s = scene(lanes_at(&[0.0, 4.0]), conn);
        let t = build_connection_type_tensor(&s, &default_categories()).unwrap();
        assert_eq!(&t.m_c.data()[4..8], &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(t.m_c.data().iter().sum::<f64>(), 1.0);

        let none = build_connection_type_tensor(&scene(lanes_at(&[0.0]), LaneConnectivity::default()), &default_categories()).unwrap();
        assert!(none.m_c.data().iter().all(|&v| v == 0.0));

        let conn = LaneConnectivity {
            right: vec![link(1, 0, "xyz")],
            ..Default::default()
        };
        let err = build_connection_type_tensor(&scene(lanes_at(&[0.0, 4.0]), conn), &default_categories()).unwrap_err();
        assert!(err.to_string().contains("unknown connection type"), "{err}");
    }

    #[test]
    fn archive_round_trip() {
        let conn = LaneConnectivity {
            predecessors: vec![(1, 0)],
            successors: vec![(0, 1)],
            left: vec![link(1, 2, "solid")],
            right: vec![link(2, 1, "none")],
        };
        let tm = build_topology(&scene(lanes_at(&[0.0, 3.0, 7.5]), conn), &default_categories()).unwrap();
        assert_eq!(TopologyMatrices::from_json(&tm.to_json()).unwrap(), tm);
    }

    fn random_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1usize..=20, 0.0..0.5f64, any::<u64>()).prop_map(|(n, density, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut pairs = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    if a != b && rng.random_bool(density) {
                        pairs.push((a, b));
                    }
                }
            }
            (n, pairs)
        })
    }

    proptest! {
        #[test]
        fn spd_matches_bfs((n, pairs) in random_graph()) {
            prop_assert_eq!(build_spd_matrix(&pairs, n).unwrap().hops, bfs_oracle(&pairs, n));
        }

        #[test]
        fn successor_spd_is_transposed_predecessor_spd((n, pairs) in random_graph()) {
            let reversed: Vec<_> = pairs.iter().map(|&(a, b)| (b, a)).collect();
            let suc = build_spd_matrix(&pairs, n).unwrap();
            let pre = build_spd_matrix(&reversed, n).unwrap();
            prop_assert_eq!(suc, pre.transpose());
        }

        #[test]
        fn relabeling_permutes_every_matrix((n, pairs) in random_graph(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..n).map(|i| i as f64 * 1.7).collect();
            let lat: Vec<LateralLink> = pairs.iter().take(5)
                .map(|&(a, b)| link(a as u64, b as u64, DEFAULT_CONNECTION_TYPES[(a + b) % 4])).collect();
            let conn = LaneConnectivity {
                predecessors: pairs.iter().map(|&(a, b)| (b as u64, a as u64)).collect(),
                successors: pairs.iter().map(|&(a, b)| (a as u64, b as u64)).collect(),
                left: lat.clone(),
                right: lat.iter().map(|l| link(l.b, l.a, &l.connection_type)).collect(),
            };
            let original = scene(lanes_at(&xs), conn);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut relabeled = original.clone();
            relabeled.lanes = perm.iter().map(|&p| original.lanes[p].clone()).collect();

            let a = build_topology(&original, &default_categories()).unwrap();
            let b = build_topology(&relabeled, &default_categories()).unwrap();
            prop_assert_eq!(a.permuted(&perm), b);
            for m in [&a.rpe.m_p, &a.rpe.m_s, &a.rpe.m_l, &a.rpe.m_r, &a.pre_bias, &a.suc_bias] {
                prop_assert!(m.data().iter().all(|&v| v == 0.0 || (v > 0.0 && v <= 1.0 / MIN_DISTANCE)));
            }
        }
    }
}
