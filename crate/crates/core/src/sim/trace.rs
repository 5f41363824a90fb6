//! Line-oriented event trace: `t=<seconds> node=<id> <EVENT> [key=value ...]`.

use std::fmt;

use super::event::{secs, Time};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceLine {
    pub t: Time,
    pub node: NodeId,
    pub event: &'static str,
    pub attrs: Vec<(&'static str, String)>,
}

impl TraceLine {
    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={:.6} node={} {}", secs(self.t), self.node, self.event)?;
        for (k, v) in &self.attrs {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    enabled: bool,
    lines: Vec<TraceLine>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Self { enabled, lines: Vec::new() }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn push(&mut self, t: Time, node: NodeId, event: &'static str, attrs: Vec<(&'static str, String)>) {
        if self.enabled {
            self.lines.push(TraceLine { t, node, event, attrs });
        }
    }

    pub fn lines(&self) -> &[TraceLine] {
        &self.lines
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(&l.to_string());
            s.push('\n');
        }
        s
    }
}
