use super::{Scenario, LaneNode};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point2};

/// Re-expresses the scene in the frame of agent `target` at the reference time:
/// its position becomes the origin and its heading becomes 0.
///
/// Padded states are left untouched.
pub fn normalize_scenario(s: &Scenario, target: usize) -> Result<Scenario> {
    let agent = s
        .agents
        .get(target)
        .ok_or_else(|| Error::Argument(format!("target {target} out of range for {} agents", s.agents.len())))?;
    let reference = match agent.states.last() {
        Some(st) if st.observed => st.clone(),
        _ => return Err(Error::TargetUnobserved(target)),
    };
    let origin = reference.position();
    let angle = -reference.heading;
    let to_frame = |p: Point2| (p - origin).rotate(angle);

    let mut out = s.clone();
    for lane in &mut out.lanes {
        for LaneNode { position, .. } in &mut lane.centerline {
            *position = to_frame(*position);
        }
    }
    for agent in &mut out.agents {
        for st in agent.states.iter_mut().filter(|st| st.observed) {
            let p = to_frame(st.position());
            let v = Point2::new(st.vx, st.vy).rotate(angle);
            st.x = p.x;
            st.y = p.y;
            st.vx = v.x;
            st.vy = v.y;
            st.heading = wrap_angle(st.heading + angle);
        }
    }
    if let Some(gt) = &mut out.ground_truth {
        for p in gt.iter_mut().flatten() {
            *p = to_frame(*p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane_graph::tests::{state, two_lane_scene};
    use crate::lane_graph::AgentState;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn scene_with_target(x: f64, y: f64, heading: f64) -> Scenario {
        let mut s = two_lane_scene(3);
        s.agents[0].states[2] = state(x, y, heading);
        s
    }

    #[test]
    fn translation_moves_target_to_origin() {
        let s = scene_with_target(10.0, -3.0, 0.0);
        let n = normalize_scenario(&s, 0).unwrap();
        assert_eq!(n.agents[0].states[2].position(), Point2::ORIGIN);
        assert_eq!(n.lanes[1].centerline[1].position, Point2::new(10.0, 3.0));
    }

    #[test]
    fn rotation_aligns_heading_with_x() {
        let s = scene_with_target(0.0, 0.0, FRAC_PI_2);
        let mut s = s;
        // A point 1 m ahead along the old heading.
        s.lanes[0].centerline[1].position = Point2::new(0.0, 1.0);
        let n = normalize_scenario(&s, 0).unwrap();
        assert_eq!(n.agents[0].states[2].heading, 0.0);
        let ahead = n.lanes[0].centerline[1].position;
        assert!((ahead.x - 1.0).abs() < 1e-12 && ahead.y.abs() < 1e-12, "{ahead:?}");
    }

    #[test]
    fn unobserved_target_is_rejected() {
        let mut s = two_lane_scene(3);
        s.agents[0].states[2] = AgentState::padded(s.agents[0].agent_type(), 3);
        let err = normalize_scenario(&s, 0).unwrap_err();
        assert!(err.to_string().contains("target unobserved at reference time"));
    }

    proptest! {
        #[test]
        fn normalization_is_rigid_and_idempotent(
            x in -100.0..100.0f64, y in -100.0..100.0f64, h in -3.1..3.1f64,
            px in -50.0..50.0f64, py in -50.0..50.0f64,
        ) {
            let mut s = scene_with_target(x, y, h);
            s.agents[0].states[0] = state(px, py, h * 0.5);
            let n = normalize_scenario(&s, 0).unwrap();
            let before: Vec<Point2> = s.lanes.iter().flat_map(|l| l.points())
                .chain(s.agents[0].states.iter().map(AgentState::position)).collect();
            let after: Vec<Point2> = n.lanes.iter().flat_map(|l| l.points())
                .chain(n.agents[0].states.iter().map(AgentState::position)).collect();
            for i in 0..before.len() {
                for j in 0..before.len() {
                    let d0 = before[i].distance(before[j]);
                    let d1 = after[i].distance(after[j]);
                    prop_assert!((d0 - d1).abs() < 1e-9);
                }
            }
            let twice = normalize_scenario(&n, 0).unwrap();
            for (a, b) in after.iter().zip(twice.lanes.iter().flat_map(|l| l.points())
                .chain(twice.agents[0].states.iter().map(AgentState::position)))
            {
                prop_assert!(a.distance(b) < 1e-12);
            }
            for (a, b) in n.agents[0].states.iter().zip(&twice.agents[0].states) {
                prop_assert!((a.heading - b.heading).abs() < 1e-12);
            }
        }
    }
}
