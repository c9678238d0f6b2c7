use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use crate::geometry::Point2;
use crate::lane_graph::{Lane, LaneConnectivity, LaneId, LaneType, LateralLink};
use crate::synth::{GeneratorConfig, Template};

/// Lanes plus connectivity, with the template that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct LaneGraph {
    pub template: Template,
    pub lanes: Vec<Lane>,
    pub connectivity: LaneConnectivity,
}

impl LaneGraph {
    /// Successor lane indices of lane index `i`.
    pub fn successors_of(&self, i: usize) -> Vec<usize> {
        let id = self.lanes[i].lane_id;
        self.connectivity
            .successors
            .iter()
            .filter(|&&(a, _)| a == id)
            .filter_map(|&(_, b)| self.lanes.iter().position(|l| l.lane_id == b))
            .collect()
    }
}

#[derive(Default)]
struct Builder {
    lanes: Vec<Lane>,
    conn: LaneConnectivity,
}

impl Builder {
    fn lane(&mut self, lane_type: LaneType, points: Vec<Point2>) -> LaneId {
        let id = self.lanes.len() as LaneId;
        self.lanes.push(Lane::new(id, lane_type, &points));
        id
    }

    fn chain(&mut self, lane_type: LaneType, from: Point2, to: Point2, segments: usize) -> Vec<LaneId> {
        let ids: Vec<LaneId> = (0..segments)
            .map(|s| {
                let a = from.lerp(to, s as f64 / segments as f64);
                let b = from.lerp(to, (s + 1) as f64 / segments as f64);
                self.lane(lane_type, vec![a, b])
            })
            .collect();
        for w in ids.windows(2) {
            self.connect(w[0], w[1]);
        }
        ids
    }

    /// `to` follows `from`.
    fn connect(&mut self, from: LaneId, to: LaneId) {
        self.conn.successors.push((from, to));
        self.conn.predecessors.push((to, from));
    }

    /// `left` is the left neighbor of `lane`, and `lane` the right neighbor of `left`.
    fn lateral(&mut self, lane: LaneId, left: LaneId, connection_type: &str) {
        self.conn.left.push(LateralLink {
            a: lane,
            b: left,
            connection_type: connection_type.into(),
        });
        self.conn.right.push(LateralLink {
            a: left,
            b: lane,
            connection_type: connection_type.into(),
        });
    }

    fn finish(self, template: Template) -> LaneGraph {
        LaneGraph {
            template,
            lanes: self.lanes,
            connectivity: self.conn,
        }
    }
}

fn boundary<R: Rng + ?Sized>(rng: &mut R) -> &'static str {
    if rng.random_bool(0.7) {
        "dashed"
    } else {
        "solid"
    }
}

fn bezier(p0: Point2, c: Point2, p1: Point2, n: usize) -> Vec<Point2> {
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            p0 * ((1.0 - t) * (1.0 - t)) + c * (2.0 * (1.0 - t) * t) + p1 * (t * t)
        })
        .collect()
}

/// Smooth lateral shift of `offset` over `length`, starting at `start`.
fn lane_change_curve(start: Point2, length: f64, offset: f64) -> Vec<Point2> {
    (0..=12)
        .map(|i| {
            let t = i as f64 / 12.0;
            let smooth = t * t * (3.0 - 2.0 * t);
            start + Point2::new(length * t, offset * smooth)
        })
        .collect()
}

pub(crate) fn build<R: Rng + ?Sized>(template: Template, cfg: &GeneratorConfig, rng: &mut R) -> LaneGraph {
    match template {
        Template::Straight => straight(cfg, rng),
        Template::Fork => fork(cfg, rng),
        Template::Merge => merge(cfg, rng),
        Template::Intersection => intersection(cfg),
        Template::Grid => grid(cfg, rng),
        Template::Mixed => unreachable!("mixed resolves to a concrete template first"),
    }
}

/// Parallel eastbound rows; row `r + 1` lies left of row `r`.
fn parallel_rows<R: Rng + ?Sized>(b: &mut Builder, cfg: &GeneratorConfig, rng: &mut R) -> Vec<Vec<LaneId>> {
    let (len, w, segs) = (cfg.lane_length, cfg.lane_spacing, cfg.segments);
    let bus_row = cfg.lanes > 1 && rng.random_bool(0.25);
    let rows: Vec<Vec<LaneId>> = (0..cfg.lanes)
        .map(|r| {
            let lane_type = if bus_row && r + 1 == cfg.lanes { LaneType::Bus } else { LaneType::Vehicle };
            let y = r as f64 * w;
            b.chain(lane_type, Point2::new(0.0, y), Point2::new(segs as f64 * len, y), segs)
        })
        .collect();
    for r in 1..rows.len() {
        for s in 0..segs {
            let t = boundary(rng);
            b.lateral(rows[r - 1][s], rows[r][s], t);
        }
    }
    rows
}

fn straight<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> LaneGraph {
    let mut b = Builder::default();
    parallel_rows(&mut b, cfg, rng);
    b.finish(Template::Straight)
}

/// A trunk whose last lane has two successors: one continues straight, the
/// other shifts one lane to the left and runs parallel.
fn fork<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> LaneGraph {
    let (len, w, segs) = (cfg.lane_length, cfg.lane_spacing, cfg.segments);
    let mut b = Builder::default();
    let x0 = segs as f64 * len;
    let trunk = b.chain(LaneType::Vehicle, Point2::ORIGIN, Point2::new(x0, 0.0), segs);
    let straight = b.chain(LaneType::Vehicle, Point2::new(x0, 0.0), Point2::new(2.0 * x0, 0.0), segs);
    let curve = b.lane(LaneType::Vehicle, lane_change_curve(Point2::new(x0, 0.0), len, w));
    let mut branch = vec![curve];
    if segs > 1 {
        let rest = b.chain(LaneType::Vehicle, Point2::new(x0 + len, w), Point2::new(2.0 * x0, w), segs - 1);
        b.connect(curve, rest[0]);
        branch.extend(rest);
    }
    let last = *trunk.last().unwrap();
    b.connect(last, straight[0]);
    b.connect(last, curve);
    for s in 1..segs {
        let t = boundary(rng);
        b.lateral(straight[s], branch[s], t);
    }
    b.finish(Template::Fork)
}

/// Mirror of [`fork`]: a left lane shifts right and joins, so the first
/// trunk lane has two predecessors.
fn merge<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> LaneGraph {
    let (len, w, segs) = (cfg.lane_length, cfg.lane_spacing, cfg.segments);
    let mut b = Builder::default();
    let x0 = segs as f64 * len;
    let main = b.chain(LaneType::Vehicle, Point2::ORIGIN, Point2::new(x0, 0.0), segs);
    let mut side = Vec::new();
    if segs > 1 {
        side = b.chain(LaneType::Vehicle, Point2::new(0.0, w), Point2::new(x0 - len, w), segs - 1);
    }
    let curve = b.lane(LaneType::Vehicle, lane_change_curve(Point2::new(x0 - len, w), len, -w));
    if let Some(&l) = side.last() {
        b.connect(l, curve);
    }
    side.push(curve);
    let trunk = b.chain(LaneType::Vehicle, Point2::new(x0, 0.0), Point2::new(2.0 * x0, 0.0), segs);
    b.connect(*main.last().unwrap(), trunk[0]);
    b.connect(curve, trunk[0]);
    for s in 0..segs - 1 {
        let t = boundary(rng);
        b.lateral(main[s], side[s], t);
    }
    b.finish(Template::Merge)
}

/// Four two-way arms around a box; every inbound lane connects to the
/// outbound lanes of the other three arms.
fn intersection(cfg: &GeneratorConfig) -> LaneGraph {
    let (len, w, segs) = (cfg.lane_length, cfg.lane_spacing, cfg.segments);
    let mut b = Builder::default();
    let r0 = 2.0 * w;
    let far = r0 + segs as f64 * len;
    let mut arms = Vec::new();
    for arm in 0..4 {
        let u = Point2::from_heading(arm as f64 * FRAC_PI_2);
        // Right of the inbound heading (-u).
        let n_in = u.rotate(FRAC_PI_2);
        let inbound = b.chain(LaneType::Vehicle, u * far + n_in * (w / 2.0), u * r0 + n_in * (w / 2.0), segs);
        let outbound = b.chain(LaneType::Vehicle, u * r0 - n_in * (w / 2.0), u * far - n_in * (w / 2.0), segs);
        for s in 0..segs {
            let (i, o) = (inbound[segs - 1 - s], outbound[s]);
            b.lateral(i, o, "double_solid");
            b.lateral(o, i, "double_solid");
        }
        arms.push((u, n_in, inbound, outbound));
    }
    for (i, (ui, ni, inbound, _)) in arms.iter().enumerate() {
        for (j, (uj, nj, _, outbound)) in arms.iter().enumerate() {
            if i == j {
                continue;
            }
            let start = *ui * r0 + *ni * (w / 2.0);
            let end = *uj * r0 - *nj * (w / 2.0);
            let control = if (i + 2) % 4 == j {
                start.lerp(end, 0.5)
            } else {
                // Intersection of the inbound and outbound heading lines.
                let d = -*ui;
                let perp = uj.rotate(FRAC_PI_2);
                let t = (end - start).dot(perp) / d.dot(perp);
                start + d * t
            };
            let connector = b.lane(LaneType::Vehicle, bezier(start, control, end, 12));
            b.connect(*inbound.last().unwrap(), connector);
            b.connect(connector, outbound[0]);
        }
    }
    b.finish(Template::Intersection)
}

/// Parallel eastbound rows crossed by southbound roads at each interior
/// segment boundary; the rightmost row can turn right onto each of them.
fn grid<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> LaneGraph {
    let (len, w, segs) = (cfg.lane_length, cfg.lane_spacing, cfg.segments);
    let mut b = Builder::default();
    let rows = parallel_rows(&mut b, cfg, rng);
    let top = (cfg.lanes.max(1) - 1) as f64 * w + 2.0 * w;
    let bottom = -2.0 * w;
    for s in 1..segs {
        let x = s as f64 * len + 2.0 * w;
        let approach = b.chain(LaneType::Vehicle, Point2::new(x, top + len), Point2::new(x, top), 1)[0];
        let crossing = b.lane(LaneType::Vehicle, vec![Point2::new(x, top), Point2::new(x, bottom)]);
        let exit = b.chain(LaneType::Vehicle, Point2::new(x, bottom), Point2::new(x, bottom - segs as f64 * len), segs);
        b.connect(approach, crossing);
        b.connect(crossing, exit[0]);
        let from = Point2::new(s as f64 * len, 0.0);
        let turn = b.lane(LaneType::Vehicle, bezier(from, Point2::new(x, 0.0), Point2::new(x, bottom), 12));
        b.connect(rows[0][s - 1], turn);
        b.connect(turn, exit[0]);
    }
    b.finish(Template::Grid)
}
