//! Deterministic synthetic lane graphs with lane-following agents.

mod templates;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{cumulative_lengths, point_at_arc_length, Point2};
use crate::lane_graph::{write_scenario, AgentHistory, AgentState, AgentType, Scenario, ScenarioShape};

pub use templates::LaneGraph;

/// Sampling interval of generated trajectories (10 Hz).
pub const DT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Straight,
    Fork,
    Merge,
    Intersection,
    Grid,
    /// Picks one of the others per scenario.
    Mixed,
}

impl Template {
    pub const CONCRETE: [Template; 5] =
        [Template::Straight, Template::Fork, Template::Merge, Template::Intersection, Template::Grid];

    pub fn name(self) -> &'static str {
        match self {
            Template::Straight => "straight",
            Template::Fork => "fork",
            Template::Merge => "merge",
            Template::Intersection => "intersection",
            Template::Grid => "grid",
            Template::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::CONCRETE
            .into_iter()
            .chain([Template::Mixed])
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown template {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedProfile {
    /// 10 m/s throughout.
    Constant,
    /// 10 m/s, then braking at 2.5 m/s² to a stop from the reference time on.
    RapidDecel,
    /// 2 m/s, then accelerating at 2 m/s² up to 12 m/s from the reference time on.
    RapidAccel,
    /// One of the above per agent.
    Mixed,
}

impl SpeedProfile {
    const CONCRETE: [SpeedProfile; 3] = [SpeedProfile::Constant, SpeedProfile::RapidDecel, SpeedProfile::RapidAccel];

    /// Initial speed, acceleration after the reference time, final speed.
    fn kinematics(self) -> (f64, f64, f64) {
        match self {
            SpeedProfile::Constant => (10.0, 0.0, 10.0),
            SpeedProfile::RapidDecel => (10.0, -2.5, 0.0),
            SpeedProfile::RapidAccel => (2.0, 2.0, 12.0),
            SpeedProfile::Mixed => unreachable!("mixed resolves per agent"),
        }
    }

    fn resolve<R: Rng + ?Sized>(self, rng: &mut R) -> SpeedProfile {
        match self {
            SpeedProfile::Mixed => SpeedProfile::CONCRETE[rng.random_range(0..3)],
            p => p,
        }
    }

    /// Distance covered `t` seconds after the first sample, with the speed
    /// change starting at `t_change`. Speeds are multiplied by `scale`.
    pub fn distance(self, t: f64, t_change: f64, scale: f64) -> f64 {
        let (v0, a, v1) = self.kinematics();
        let (v0, a, v1) = (v0 * scale, a * scale, v1 * scale);
        if t <= t_change {
            return v0 * t;
        }
        let dt = t - t_change;
        let ramp = if a == 0.0 { 0.0 } else { (v1 - v0) / a };
        let base = v0 * t_change;
        if dt <= ramp {
            base + v0 * dt + 0.5 * a * dt * dt
        } else {
            base + v0 * ramp + 0.5 * a * ramp * ramp + v1 * (dt - ramp)
        }
    }
}

impl FromStr for SpeedProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(SpeedProfile::Constant),
            "rapid_decel" => Ok(SpeedProfile::RapidDecel),
            "rapid_accel" => Ok(SpeedProfile::RapidAccel),
            "mixed" => Ok(SpeedProfile::Mixed),
            _ => Err(Error::Argument(format!("unknown speed profile {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub template: Template,
    pub profile: SpeedProfile,
    /// Parallel lanes for the straight and grid templates.
    pub lanes: usize,
    /// Longitudinal lane segments per road.
    pub segments: usize,
    pub lane_length: f64,
    pub lane_spacing: f64,
    pub agent_count: usize,
    /// Gaussian position noise on histories, meters.
    pub noise_sigma: f64,
    pub history: usize,
    pub future: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            template: Template::Mixed,
            profile: SpeedProfile::Mixed,
            lanes: 2,
            segments: 4,
            lane_length: 40.0,
            lane_spacing: 3.5,
            agent_count: 4,
            noise_sigma: 0.0,
            history: 50,
            future: 60,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("generator: {m}")));
        if !(self.lane_length > 0.0 && self.lane_spacing > 0.0) {
            return bad("lane length and spacing must be > 0");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be >= 0");
        }
        if self.lanes == 0 || self.segments == 0 || self.agent_count == 0 {
            return bad("lanes, segments and agent count must be positive");
        }
        if self.history < 2 || self.future == 0 {
            return bad("history must be >= 2 and future >= 1");
        }
        Ok(())
    }

    pub fn shape(&self) -> ScenarioShape {
        ScenarioShape {
            history: self.history,
            future: self.future,
        }
    }

    /// Config of the `index`-th scenario of a dataset.
    pub fn for_scenario(&self, index: usize) -> GeneratorConfig {
        GeneratorConfig {
            seed: sub_seed(self.seed, index as u64),
            ..self.clone()
        }
    }
}

/// SplitMix64 of the pair; distinct indices give unrelated streams.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_lane_graph(cfg: &GeneratorConfig) -> Result<LaneGraph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let template = match cfg.template {
        Template::Mixed => Template::CONCRETE[rng.random_range(0..Template::CONCRETE.len())],
        t => t,
    };
    Ok(templates::build(template, cfg, &mut rng))
}

/// Agent histories with noise-free futures; agent 0 is the target.
pub struct GeneratedAgents {
    pub agents: Vec<AgentHistory>,
    pub ground_truth: Vec<Vec<Point2>>,
}

struct Route {
    points: Vec<Point2>,
    cumulative: Vec<f64>,
}

/// Random walk along successors until the route is long enough for
/// `needed` meters from some start offset inside the first lane.
fn pick_route<R: Rng + ?Sized>(graph: &LaneGraph, needed: f64, rng: &mut R) -> Option<(Route, f64)> {
    for _ in 0..64 {
        let mut lane = rng.random_range(0..graph.lanes.len());
        let first_len = graph.lanes[lane].length();
        let mut points = graph.lanes[lane].points();
        loop {
            let total = *cumulative_lengths(&points).last().unwrap();
            if total - first_len >= needed {
                break;
            }
            let next = graph.successors_of(lane);
            if next.is_empty() {
                break;
            }
            lane = next[rng.random_range(0..next.len())];
            let more = graph.lanes[lane].points();
            let skip = usize::from(more.first() == points.last());
            points.extend_from_slice(&more[skip..]);
        }
        let cumulative = cumulative_lengths(&points);
        let slack = cumulative.last().unwrap() - needed;
        if slack >= 0.0 {
            let start = rng.random_range(0.0..=slack.min(first_len));
            return Some((Route { points, cumulative }, start));
        }
    }
    None
}

pub fn generate_agents(cfg: &GeneratorConfig, graph: &LaneGraph) -> Result<GeneratedAgents> {
    cfg.validate()?;
    if graph.lanes.is_empty() {
        return Err(Error::NoLanes);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A_C3C3_3C3C);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let (t_hist, t_fut) = (cfg.history, cfg.future);
    // Samples k = -1 ..= T + T' so every stored step has a central difference.
    let samples = t_hist + t_fut + 2;
    let t_change = t_hist as f64 * DT;
    let t_end = (samples - 1) as f64 * DT;

    let mut agents = Vec::with_capacity(cfg.agent_count);
    let mut ground_truth = Vec::new();
    for a in 0..cfg.agent_count {
        let profile = cfg.profile.resolve(&mut rng);
        let scale = if a == 0 { 1.0 } else { rng.random_range(0.6..1.0) };
        let needed = profile.distance(t_end, t_change, scale);
        let (route, s0) = pick_route(graph, needed, &mut rng).ok_or_else(|| {
            Error::ExitsMap(format!(
                "{profile:?} needs {needed:.1} m; no route on the {} graph is that long",
                graph.template
            ))
        })?;
        let sampled: Vec<(Point2, Point2)> = (0..samples)
            .map(|k| {
                let s = s0 + profile.distance(k as f64 * DT, t_change, scale);
                point_at_arc_length(&route.points, &route.cumulative, s)
            })
            .collect();
        let padded = if a > 0 && rng.random_bool(0.25) { rng.random_range(1..=t_hist / 2) } else { 0 };
        let category = if a == 0 { 3 } else { 2 };
        let states = (1..=t_hist)
            .map(|k| {
                if k - 1 < padded {
                    return AgentState::padded(AgentType::Vehicle, category);
                }
                let (p, dir) = sampled[k];
                let v = (sampled[k + 1].0 - sampled[k - 1].0) * (1.0 / (2.0 * DT));
                let jitter = if cfg.noise_sigma > 0.0 {
                    Point2::new(noise.sample(&mut rng), noise.sample(&mut rng))
                } else {
                    Point2::ORIGIN
                };
                AgentState {
                    x: p.x + jitter.x,
                    y: p.y + jitter.y,
                    observed: true,
                    category,
                    agent_type: AgentType::Vehicle,
                    heading: dir.y.atan2(dir.x),
                    vx: v.x,
                    vy: v.y,
                }
            })
            .collect();
        ground_truth.push(sampled[t_hist + 1..=t_hist + t_fut].iter().map(|s| s.0).collect());
        agents.push(AgentHistory { states });
    }
    Ok(GeneratedAgents { agents, ground_truth })
}

pub fn generate_scenario(cfg: &GeneratorConfig) -> Result<(Scenario, Template)> {
    let graph = generate_lane_graph(cfg)?;
    let gen = generate_agents(cfg, &graph)?;
    let scenario = Scenario {
        lanes: graph.lanes,
        connectivity: graph.connectivity,
        agents: gen.agents,
        target_ids: vec![0],
        ground_truth: Some(gen.ground_truth),
    };
    scenario.validate(&cfg.shape())?;
    Ok((scenario, graph.template))
}

/// In-memory dataset: scenario `i` uses sub-seed `i` of `cfg.seed`.
pub fn generate_dataset(n: usize, cfg: &GeneratorConfig) -> Result<Vec<Scenario>> {
    (0..n)
        .into_par_iter()
        .map(|i| generate_scenario(&cfg.for_scenario(i)).map(|(s, _)| s))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
    pub template: Template,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub template: Template,
    pub generator: GeneratorConfig,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn scenario_file_name(i: usize) -> String {
    format!("scenario_{i:05}.json")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `n` scenario files and `manifest.json` into `out_dir`.
pub fn emit_dataset(n: usize, cfg: &GeneratorConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let generated: Vec<(Scenario, Template, u64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sub = cfg.for_scenario(i);
            generate_scenario(&sub).map(|(s, t)| (s, t, sub.seed))
        })
        .collect::<Result<_>>()?;
    let mut files = Vec::with_capacity(n);
    for (i, (scenario, template, seed)) in generated.into_iter().enumerate() {
        let name = scenario_file_name(i);
        let path: PathBuf = out_dir.join(&name);
        write_scenario(&path, &scenario)?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.push(ManifestEntry {
            file: name,
            seed,
            template,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = DatasetManifest {
        seed: cfg.seed,
        template: cfg.template,
        generator: cfg.clone(),
        files,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads every scenario listed in a dataset manifest, in order.
pub fn load_dataset(dir: &Path, shape: &ScenarioShape) -> Result<(DatasetManifest, Vec<Scenario>)> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })?;
    let scenes = manifest
        .files
        .iter()
        .map(|f| crate::lane_graph::parse_scenario(&dir.join(&f.file), shape))
        .collect::<Result<_>>()?;
    Ok((manifest, scenes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::distance_to_polyline;
    use crate::topology::build_spd_matrix;
    use proptest::prelude::*;

    fn cfg(template: Template, profile: SpeedProfile) -> GeneratorConfig {
        GeneratorConfig {
            template,
            profile,
            seed: 11,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn straight_chain_matches_hop_counts() {
        let c = GeneratorConfig {
            lanes: 1,
            segments: 3,
            ..cfg(Template::Straight, SpeedProfile::Constant)
        };
        let g = generate_lane_graph(&c).unwrap();
        assert_eq!(g.lanes.len(), 3);
        assert_eq!(g.connectivity.predecessors.len(), 2);
        // Row i holds hops from lane i back to its predecessors.
        let pairs: Vec<(usize, usize)> =
            g.connectivity.predecessors.iter().map(|&(a, b)| (a as usize, b as usize)).collect();
        let spd = build_spd_matrix(&pairs, 3).unwrap();
        let expect = [[0, 0, 0], [1, 0, 0], [2, 1, 0]];
        for (i, row) in expect.iter().enumerate() {
            for (j, &h) in row.iter().enumerate() {
                assert_eq!(spd.at(i, j), h, "({i},{j})");
            }
        }
    }

    #[test]
    fn fork_and_merge_shapes() {
        let g = generate_lane_graph(&cfg(Template::Fork, SpeedProfile::Constant)).unwrap();
        let branching = (0..g.lanes.len()).filter(|&i| g.successors_of(i).len() == 2).count();
        assert_eq!(branching, 1);
        let g = generate_lane_graph(&cfg(Template::Merge, SpeedProfile::Constant)).unwrap();
        let ids: Vec<u64> = g.lanes.iter().map(|l| l.lane_id).collect();
        let joined = ids
            .iter()
            .filter(|&&id| g.connectivity.predecessors.iter().filter(|p| p.0 == id).count() == 2)
            .count();
        assert_eq!(joined, 1);
    }

    #[test]
    fn unknown_template_is_an_argument_error() {
        assert!(matches!("roundabout".parse::<Template>(), Err(Error::Argument(_))));
        assert_eq!("grid".parse::<Template>().unwrap(), Template::Grid);
    }

    #[test]
    fn every_template_generates_valid_scenes() {
        for t in Template::CONCRETE {
            for p in SpeedProfile::CONCRETE {
                let (s, used) = generate_scenario(&cfg(t, p)).unwrap();
                assert_eq!(used, t);
                assert_eq!(s.agents.len(), 4);
            }
        }
    }

    #[test]
    fn constant_speed_on_straight_lane_steps_one_meter() {
        let c = GeneratorConfig {
            lanes: 1,
            agent_count: 1,
            ..cfg(Template::Straight, SpeedProfile::Constant)
        };
        let (s, _) = generate_scenario(&c).unwrap();
        let pts: Vec<Point2> = s.agents[0].states.iter().map(AgentState::position).collect();
        for w in pts.windows(2) {
            assert!((w[0].distance(w[1]) - 1.0).abs() < 1e-9);
        }
        let gt = &s.ground_truth.as_ref().unwrap()[0];
        assert!((pts.last().unwrap().distance(gt[0]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deceleration_never_speeds_up() {
        let c = GeneratorConfig {
            agent_count: 1,
            ..cfg(Template::Straight, SpeedProfile::RapidDecel)
        };
        let (s, _) = generate_scenario(&c).unwrap();
        let mut pts: Vec<Point2> = s.agents[0].states.iter().map(AgentState::position).collect();
        pts.extend(s.ground_truth.unwrap().remove(0));
        let speeds: Vec<f64> = pts.windows(2).map(|w| w[0].distance(w[1]) / DT).collect();
        assert!(speeds.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{speeds:?}");
        assert!(*speeds.last().unwrap() < 1e-9);
    }

    #[test]
    fn short_map_is_rejected() {
        let c = GeneratorConfig {
            segments: 1,
            lane_length: 20.0,
            ..cfg(Template::Straight, SpeedProfile::Constant)
        };
        match generate_scenario(&c) {
            Err(e @ Error::ExitsMap(_)) => assert!(e.to_string().contains("trajectory exits map")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn emitted_dataset_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let c = GeneratorConfig {
            seed: 5,
            noise_sigma: 0.0,
            ..GeneratorConfig::default()
        };
        let a = emit_dataset(8, &c, &dir.path().join("a")).unwrap();
        let b = emit_dataset(8, &c, &dir.path().join("b")).unwrap();
        assert_eq!(a.files.len(), 8);
        assert_eq!(a, b);
        let empty = emit_dataset(0, &c, &dir.path().join("e")).unwrap();
        assert!(empty.files.is_empty());
        let (m, scenes) = load_dataset(&dir.path().join("a"), &c.shape()).unwrap();
        assert_eq!((m, scenes.len()), (a, 8));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn agents_stay_on_lanes_with_consistent_velocities(seed in any::<u64>(), t in 0usize..5) {
            let c = GeneratorConfig { seed, template: Template::CONCRETE[t], ..GeneratorConfig::default() };
            let graph = generate_lane_graph(&c).unwrap();
            let gen = generate_agents(&c, &graph).unwrap();
            let lanes: Vec<Vec<Point2>> = graph.lanes.iter().map(|l| l.points()).collect();
            for agent in &gen.agents {
                let observed: Vec<&AgentState> = agent.states.iter().filter(|s| s.observed).collect();
                for s in &observed {
                    let d = lanes.iter().map(|l| distance_to_polyline(s.position(), l)).fold(f64::INFINITY, f64::min);
                    prop_assert!(d <= c.lane_spacing / 2.0);
                }
                // Interior steps: velocity is the central difference of stored positions.
                for w in observed.windows(3) {
                    let v = (w[2].position() - w[0].position()) * (1.0 / (2.0 * DT));
                    prop_assert!((v.x - w[1].vx).abs() < 1e-6 && (v.y - w[1].vy).abs() < 1e-6);
                }
            }
        }
    }
}
