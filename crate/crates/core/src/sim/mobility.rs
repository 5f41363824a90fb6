//! Straight-line waypoint mobility.

use super::channel::distance;
use super::topology::Point;

#[derive(Debug, Clone, PartialEq)]
pub struct Mobility {
    pub start: Point,
    pub waypoints: Vec<Point>,
    /// Meters per second.
    pub speed: f64,
    /// Seconds before the node starts moving.
    pub depart: f64,
}

impl Mobility {
    pub fn stationary(p: Point) -> Self {
        Self { start: p, waypoints: Vec::new(), speed: 0.0, depart: 0.0 }
    }

    pub fn is_static(&self) -> bool {
        self.waypoints.is_empty() || self.speed <= 0.0
    }

    /// Position at time `t`; the node stops at its last waypoint.
    pub fn position(&self, t: f64) -> Point {
        if self.is_static() || t <= self.depart {
            return self.start;
        }
        let mut budget = (t - self.depart) * self.speed;
        let mut here = self.start;
        for &wp in &self.waypoints {
            let leg = distance(here, wp);
            if budget <= leg {
                let f = if leg > 0.0 { budget / leg } else { 0.0 };
                return (here.0 + f * (wp.0 - here.0), here.1 + f * (wp.1 - here.1));
            }
            budget -= leg;
            here = wp;
        }
        here
    }
}
