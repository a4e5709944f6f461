//! Ring overlay used for failure detection. Instances are ordered by a
//! hash of their name; each pings its successor and watches its
//! predecessor.

use sha2::{Digest, Sha256};

use super::instance_ref;
use crate::simnet::ProcessId;

/// First 64 bits of SHA-256 of the instance name.
pub fn ring_hash(instance_name: &str) -> u64 {
    let d = Sha256::digest(instance_name.as_bytes());
    u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
}

fn key(p: ProcessId) -> (u64, u32) {
    (ring_hash(&instance_ref(p).instance_name), p.0)
}

/// Members in ring order.
fn ordered(members: &[ProcessId]) -> Vec<ProcessId> {
    let mut v = members.to_vec();
    v.sort_by_key(|p| key(*p));
    v.dedup();
    v
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingPosition {
    pub node_hash: u64,
    pub successor: Option<ProcessId>,
    pub predecessor: Option<ProcessId>,
    pub successor_list: Vec<ProcessId>,
}

impl RingPosition {
    /// Position of `me` among `members`; the successor list holds up to
    /// `k` distinct others.
    pub fn of(members: &[ProcessId], me: ProcessId, k: usize) -> Self {
        let mut all = members.to_vec();
        all.push(me);
        let ring = ordered(&all);
        let i = ring.iter().position(|p| *p == me).expect("member");
        let n = ring.len();
        let successor_list: Vec<ProcessId> = (1..n).map(|d| ring[(i + d) % n]).take(k).collect();
        RingPosition {
            node_hash: key(me).0,
            successor: successor_list.first().copied(),
            predecessor: (n > 1).then(|| ring[(i + n - 1) % n]),
            successor_list,
        }
    }
}

pub(super) fn successor(members: &[ProcessId], me: ProcessId) -> Option<ProcessId> {
    RingPosition::of(members, me, 1).successor
}

pub(super) fn predecessor(members: &[ProcessId], me: ProcessId) -> Option<ProcessId> {
    RingPosition::of(members, me, 1).predecessor
}

/// True when `x` lies strictly between `a` and `b` going clockwise.
fn between(a: u64, x: u64, b: u64) -> bool {
    if a < b {
        a < x && x < b
    } else {
        x > a || x < b
    }
}

/// Predecessor change seen by `me`. If the old predecessor still sits
/// between the new one and `me`, the new one was reached by skipping it:
/// the old predecessor left and is reported. A new node joining between
/// the old predecessor and `me` is not suspicious.
pub fn ring_event(me: ProcessId, old_pred: ProcessId, new_pred: ProcessId) -> Option<ProcessId> {
    if old_pred == new_pred || old_pred == me {
        return None;
    }
    let (m, o, n) = (key(me).0, key(old_pred).0, key(new_pred).0);
    (new_pred == me || between(n, o, m)).then_some(old_pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable() {
        assert_eq!(ring_hash("m01"), ring_hash("m01"));
        assert_ne!(ring_hash("m01"), ring_hash("m02"));
    }

    #[test]
    fn successor_list_wraps() {
        let members: Vec<ProcessId> = (0..5).map(ProcessId).collect();
        let ring = ordered(&members);
        for (i, p) in ring.iter().enumerate() {
            let pos = RingPosition::of(&members, *p, 3);
            assert_eq!(pos.successor_list.len(), 3);
            assert_eq!(pos.successor, Some(ring[(i + 1) % 5]));
            assert_eq!(pos.predecessor, Some(ring[(i + 4) % 5]));
        }
    }

    #[test]
    fn lone_member_has_no_neighbours() {
        let pos = RingPosition::of(&[], ProcessId(3), 3);
        assert_eq!(pos.successor, None);
        assert_eq!(pos.predecessor, None);
    }

    #[test]
    fn departure_is_reported_and_join_is_not() {
        let members: Vec<ProcessId> = (0..6).map(ProcessId).collect();
        let ring = ordered(&members);
        let (a, b, me) = (ring[1], ring[2], ring[3]);
        // b left: me's predecessor falls back to a.
        assert_eq!(ring_event(me, b, a), Some(b));
        // b joined between a and me.
        assert_eq!(ring_event(me, a, b), None);
    }
}
