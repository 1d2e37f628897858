// SPDX-License-Identifier: Apache-2.0

//! Switched-capacitor solver.
//!
//! A [`CapState`] holds capacitor nodes partitioned into connected islands.
//! Settling is ideal and instantaneous: every island sits at one voltage and
//! connecting islands redistributes their charge, `v = sum(C_i V_i) / sum(C_i)`.
//! Islands are addressed by any node they contain, so schedules can be written
//! against a fixed node layout without tracking island identities.

use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChargeError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("capacitance of node {node} must be finite and > 0 (got {value})")]
    BadCapacitance { node: NodeId, value: f64 },
    #[error("voltage {0} is not finite")]
    BadVoltage(f64),
    #[error("connect needs at least one island")]
    EmptyIslandSet,
    #[error("island of node {0} referenced more than once")]
    DuplicateIsland(NodeId),
    #[error("split of island {island} is not a partition: {reason}")]
    NotAPartition { island: NodeId, reason: String },
    #[error("schedule event {index} ({label}): {source}")]
    Schedule {
        index: usize,
        label: &'static str,
        #[source]
        source: Box<ChargeError>,
    },
}

/// A capacitor and its settled voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapNode {
    pub capacitance_ff: f64,
    pub voltage: f64,
}

impl CapNode {
    /// Stored charge in fC.
    pub fn charge_fc(&self) -> f64 {
        self.capacitance_ff * self.voltage
    }
}

/// How an island is split by [`CapState::disconnect`].
#[derive(Debug, Clone, PartialEq)]
pub enum Split {
    /// Every node becomes its own island.
    Singletons,
    /// Explicit parts; together they must cover the island exactly once.
    Parts(Vec<Vec<NodeId>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Drive { island: NodeId, volts: f64 },
    Connect { islands: Vec<NodeId> },
    Disconnect { island: NodeId, split: Split },
    Discharge { island: NodeId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchEvent {
    pub kind: EventKind,
    /// Phase tag carried into the trace.
    pub label: &'static str,
}

impl SwitchEvent {
    pub fn drive(label: &'static str, island: NodeId, volts: f64) -> Self {
        Self {
            kind: EventKind::Drive { island, volts },
            label,
        }
    }

    pub fn connect(label: &'static str, islands: Vec<NodeId>) -> Self {
        Self {
            kind: EventKind::Connect { islands },
            label,
        }
    }

    pub fn disconnect(label: &'static str, island: NodeId, split: Split) -> Self {
        Self {
            kind: EventKind::Disconnect { island, split },
            label,
        }
    }

    pub fn discharge(label: &'static str, island: NodeId) -> Self {
        Self {
            kind: EventKind::Discharge { island },
            label,
        }
    }
}

/// Post-event voltage of one island touched by an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub event: usize,
    pub label: &'static str,
    /// Smallest node index in the island.
    pub anchor: NodeId,
    pub voltage: f64,
}

/// Summary of one island.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IslandView {
    pub anchor: NodeId,
    pub size: usize,
    pub capacitance_ff: f64,
    pub voltage: f64,
}

#[derive(Debug, Clone)]
struct Island {
    members: Vec<NodeId>,
    capacitance: f64,
    voltage: f64,
    anchor: NodeId,
}

#[derive(Debug, Clone)]
pub struct CapState {
    caps: Vec<f64>,
    island_of: Vec<u32>,
    islands: Vec<Option<Island>>,
    free: Vec<u32>,
}

impl CapState {
    /// All nodes discharged, each in its own island.
    pub fn new(capacitances_ff: Vec<f64>) -> Result<Self, ChargeError> {
        for (node, &c) in capacitances_ff.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                return Err(ChargeError::BadCapacitance { node, value: c });
            }
        }
        let islands = capacitances_ff
            .iter()
            .enumerate()
            .map(|(n, &c)| {
                Some(Island {
                    members: vec![n],
                    capacitance: c,
                    voltage: 0.0,
                    anchor: n,
                })
            })
            .collect();
        Ok(Self {
            island_of: (0..capacitances_ff.len() as u32).collect(),
            caps: capacitances_ff,
            islands,
            free: Vec::new(),
        })
    }

    /// Singleton islands at the given voltages.
    pub fn from_nodes(nodes: &[CapNode]) -> Result<Self, ChargeError> {
        let mut s = Self::new(nodes.iter().map(|n| n.capacitance_ff).collect())?;
        for (i, n) in nodes.iter().enumerate() {
            s.drive(i, n.voltage)?;
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.caps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.caps.is_empty()
    }

    pub fn island_count(&self) -> usize {
        self.islands.len() - self.free.len()
    }

    fn island_id(&self, node: NodeId) -> Result<u32, ChargeError> {
        self.island_of
            .get(node)
            .copied()
            .ok_or(ChargeError::UnknownNode(node))
    }

    fn island(&self, id: u32) -> &Island {
        self.islands[id as usize].as_ref().expect("live island")
    }

    fn island_mut(&mut self, id: u32) -> &mut Island {
        self.islands[id as usize].as_mut().expect("live island")
    }

    pub fn node(&self, node: NodeId) -> Result<CapNode, ChargeError> {
        let id = self.island_id(node)?;
        Ok(CapNode {
            capacitance_ff: self.caps[node],
            voltage: self.island(id).voltage,
        })
    }

    pub fn voltage(&self, node: NodeId) -> Result<f64, ChargeError> {
        Ok(self.island(self.island_id(node)?).voltage)
    }

    pub fn island_of(&self, node: NodeId) -> Result<IslandView, ChargeError> {
        let isl = self.island(self.island_id(node)?);
        Ok(IslandView {
            anchor: isl.anchor,
            size: isl.members.len(),
            capacitance_ff: isl.capacitance,
            voltage: isl.voltage,
        })
    }

    pub fn members(&self, node: NodeId) -> Result<&[NodeId], ChargeError> {
        Ok(&self.island(self.island_id(node)?).members)
    }

    /// All live islands ordered by anchor.
    pub fn islands(&self) -> Vec<IslandView> {
        let mut v: Vec<_> = self
            .islands
            .iter()
            .flatten()
            .map(|i| IslandView {
                anchor: i.anchor,
                size: i.members.len(),
                capacitance_ff: i.capacitance,
                voltage: i.voltage,
            })
            .collect();
        v.sort_by_key(|i| i.anchor);
        v
    }

    pub fn total_charge_fc(&self) -> f64 {
        self.islands
            .iter()
            .flatten()
            .map(|i| i.capacitance * i.voltage)
            .sum()
    }

    fn alloc(&mut self, island: Island) -> u32 {
        match self.free.pop() {
            Some(id) => {
                self.islands[id as usize] = Some(island);
                id
            }
            None => {
                self.islands.push(Some(island));
                (self.islands.len() - 1) as u32
            }
        }
    }

    /// Forces every node of the island to `volts`.
    pub fn drive(&mut self, island: NodeId, volts: f64) -> Result<(), ChargeError> {
        if !volts.is_finite() {
            return Err(ChargeError::BadVoltage(volts));
        }
        let id = self.island_id(island)?;
        self.island_mut(id).voltage = volts;
        Ok(())
    }

    /// Grounds the island.
    pub fn discharge(&mut self, island: NodeId) -> Result<(), ChargeError> {
        self.drive(island, 0.0)
    }

    /// Merges the islands containing the given nodes and returns the shared
    /// voltage. Total charge is conserved.
    pub fn connect(&mut self, islands: &[NodeId]) -> Result<f64, ChargeError> {
        if islands.is_empty() {
            return Err(ChargeError::EmptyIslandSet);
        }
        let mut ids = Vec::with_capacity(islands.len());
        for &n in islands {
            let id = self.island_id(n)?;
            if ids.contains(&id) {
                return Err(ChargeError::DuplicateIsland(n));
            }
            ids.push(id);
        }
        let (mut charge, mut cap) = (0.0, 0.0);
        for &id in &ids {
            let isl = self.island(id);
            charge += isl.capacitance * isl.voltage;
            cap += isl.capacitance;
        }
        let v = charge / cap;

        // Grow the largest island in place.
        let base = *ids
            .iter()
            .max_by_key(|&&id| self.island(id).members.len())
            .expect("non-empty");
        let mut moved = Vec::new();
        let mut anchor = self.island(base).anchor;
        for &id in &ids {
            if id == base {
                continue;
            }
            let isl = self.islands[id as usize].take().expect("live island");
            self.free.push(id);
            anchor = anchor.min(isl.anchor);
            moved.extend(isl.members);
        }
        for &n in &moved {
            self.island_of[n] = base;
        }
        let b = self.island_mut(base);
        b.members.extend(moved);
        b.capacitance = cap;
        b.voltage = v;
        b.anchor = anchor;
        Ok(v)
    }

    /// Splits an island; each part keeps the pre-split voltage. Returns the
    /// anchors of the resulting islands.
    pub fn disconnect(&mut self, island: NodeId, split: &Split) -> Result<Vec<NodeId>, ChargeError> {
        let id = self.island_id(island)?;
        let voltage = self.island(id).voltage;
        let parts: Vec<Vec<NodeId>> = match split {
            Split::Singletons => self.island(id).members.iter().map(|&n| vec![n]).collect(),
            Split::Parts(parts) => {
                self.check_partition(id, island, parts)?;
                parts.clone()
            }
        };
        self.islands[id as usize] = None;
        self.free.push(id);
        let mut anchors = Vec::with_capacity(parts.len());
        for members in parts {
            let capacitance = members.iter().map(|&n| self.caps[n]).sum();
            let anchor = *members.iter().min().expect("non-empty part");
            let new_id = self.alloc(Island {
                members: Vec::new(),
                capacitance,
                voltage,
                anchor,
            });
            for &n in &members {
                self.island_of[n] = new_id;
            }
            self.island_mut(new_id).members = members;
            anchors.push(anchor);
        }
        Ok(anchors)
    }

    fn check_partition(&self, id: u32, island: NodeId, parts: &[Vec<NodeId>]) -> Result<(), ChargeError> {
        let fail = |reason: String| ChargeError::NotAPartition { island, reason };
        let mut all: Vec<NodeId> = Vec::new();
        for p in parts {
            if p.is_empty() {
                return Err(fail("empty part".into()));
            }
            for &n in p {
                if self.island_id(n)? != id {
                    return Err(fail(format!("node {n} is not in the island")));
                }
                all.push(n);
            }
        }
        all.sort_unstable();
        if let Some(w) = all.windows(2).find(|w| w[0] == w[1]) {
            return Err(fail(format!("node {} appears twice", w[0])));
        }
        let size = self.island(id).members.len();
        if all.len() != size {
            return Err(fail(format!("covers {} of {size} nodes", all.len())));
        }
        Ok(())
    }

    /// Applies one event, returning the anchors of the islands it touched.
    pub fn apply(&mut self, event: &SwitchEvent) -> Result<Vec<NodeId>, ChargeError> {
        match &event.kind {
            EventKind::Drive { island, volts } => {
                self.drive(*island, *volts)?;
                Ok(vec![self.island_of(*island)?.anchor])
            }
            EventKind::Discharge { island } => {
                self.discharge(*island)?;
                Ok(vec![self.island_of(*island)?.anchor])
            }
            EventKind::Connect { islands } => {
                self.connect(islands)?;
                Ok(vec![self.island_of(islands[0])?.anchor])
            }
            EventKind::Disconnect { island, split } => self.disconnect(*island, split),
        }
    }

    /// Applies events in order. The first invalid event aborts the run; the
    /// state then reflects every event before it.
    pub fn run_schedule(&mut self, events: &[SwitchEvent]) -> Result<Vec<TraceEntry>, ChargeError> {
        let mut trace = Vec::with_capacity(events.len());
        for (index, ev) in events.iter().enumerate() {
            let touched = self.apply(ev).map_err(|e| ChargeError::Schedule {
                index,
                label: ev.label,
                source: Box::new(e),
            })?;
            for anchor in touched {
                trace.push(TraceEntry {
                    event: index,
                    label: ev.label,
                    anchor,
                    voltage: self.voltage(anchor).expect("anchor exists"),
                });
            }
        }
        Ok(trace)
    }
}
