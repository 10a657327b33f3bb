use std::collections::BTreeMap;

use crate::ids::MnId;
use crate::mmapp::{MmAppError, RunMode};
use crate::mobility::MobilityProfile;
use crate::resources::{ComputeLedger, InstanceInterval};
use crate::time::Micros;

pub const DEFAULT_LINGER_MS: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityInstance {
    pub mn_id: MnId,
    pub created_at: Micros,
    pub closed_at: Option<Micros>,
    pub compute_weight: f64,
}

#[derive(Debug, Clone)]
struct Live {
    instance: MobilityInstance,
    holds: usize,
    close_at: Option<Micros>,
}

/// Per-MN mobility instances.
///
/// On-demand mode keeps an instance while the MN is held by at least one
/// transaction and for `linger` after the last release; a new hold inside the
/// linger window revives the same instance. Legacy mode opens at attach and
/// closes only at run end.
#[derive(Debug, Clone)]
pub struct InstanceTable {
    mode: RunMode,
    linger: Micros,
    weight: f64,
    live: BTreeMap<MnId, Live>,
    ledger: ComputeLedger,
}

impl InstanceTable {
    pub fn new(mode: RunMode, linger: Micros, weight: f64) -> Self {
        InstanceTable { mode, linger, weight, live: BTreeMap::new(), ledger: ComputeLedger::new() }
    }

    fn retire_expired(&mut self, mn: &MnId, now: Micros) {
        if let Some(l) = self.live.get(mn) {
            if l.holds == 0 && l.close_at.is_some_and(|c| c <= now) {
                let l = self.live.remove(mn).unwrap();
                let close = l.close_at.unwrap();
                self.ledger
                    .record(mn, InstanceInterval { open: l.instance.created_at, close, weight: l.instance.compute_weight })
                    .expect("instances of one MN never overlap");
            }
        }
    }

    /// Opens (or holds on to) the instance for `mn`.
    ///
    /// Static nodes are refused an on-demand instance.
    pub fn open_instance(&mut self, mn: &MnId, profile: MobilityProfile, now: Micros) -> Result<MobilityInstance, MmAppError> {
        if self.mode == RunMode::Mmaas && profile == MobilityProfile::Static {
            return Err(MmAppError::InstanceRefusedStatic(mn.0.clone()));
        }
        self.retire_expired(mn, now);
        let weight = self.weight;
        let entry = self.live.entry(mn.clone()).or_insert_with(|| Live {
            instance: MobilityInstance { mn_id: mn.clone(), created_at: now, closed_at: None, compute_weight: weight },
            holds: 0,
            close_at: None,
        });
        if self.mode == RunMode::Mmaas {
            entry.holds += 1;
            entry.close_at = None;
        }
        Ok(entry.instance.clone())
    }

    /// Drops one transaction hold; the instance closes `linger` later unless
    /// held again before then. No effect in legacy mode.
    pub fn release(&mut self, mn: &MnId, now: Micros) {
        if self.mode != RunMode::Mmaas {
            return;
        }
        if let Some(l) = self.live.get_mut(mn) {
            l.holds = l.holds.saturating_sub(1);
            if l.holds == 0 {
                l.close_at = Some(now + self.linger);
            }
        }
    }

    /// Number of instances alive at `now`.
    pub fn live_count(&self, now: Micros) -> usize {
        self.live.values().filter(|l| l.holds > 0 || l.close_at.is_none_or(|c| c > now)).count()
    }

    /// Closes everything at `run_end` and returns the lifetime ledger.
    pub fn finish(mut self, run_end: Micros) -> ComputeLedger {
        let live = std::mem::take(&mut self.live);
        for (mn, l) in live {
            let close = l.close_at.map_or(run_end, |c| c.min(run_end));
            self.ledger
                .record(&mn, InstanceInterval { open: l.instance.created_at, close, weight: l.instance.compute_weight })
                .expect("instances of one MN never overlap");
        }
        self.ledger
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resources::instance_compute_hours;

    const LINGER: Micros = Micros::from_ms_int(100);

    #[test]
    fn static_sensor_refused_on_demand() {
        let mut t = InstanceTable::new(RunMode::Mmaas, LINGER, 1.0);
        assert!(matches!(
            t.open_instance(&"s".into(), MobilityProfile::Static, Micros::ZERO),
            Err(MmAppError::InstanceRefusedStatic(_))
        ));
        assert_eq!(instance_compute_hours(&t.finish(Micros::from_ms_int(1000))).total, 0.0);
    }

    #[test]
    fn legacy_static_sensor_lives_whole_run() {
        let mut t = InstanceTable::new(RunMode::LegacyCentralized, LINGER, 1.0);
        t.open_instance(&"s".into(), MobilityProfile::Static, Micros::ZERO).unwrap();
        t.release(&"s".into(), Micros::from_ms_int(10));
        assert_eq!(instance_compute_hours(&t.finish(Micros::from_ms_int(60_000))).total, 60_000.0);
    }

    #[test]
    fn on_demand_lifetime_is_transaction_plus_linger() {
        let mut t = InstanceTable::new(RunMode::Mmaas, LINGER, 1.0);
        let mn = MnId::from("p");
        let start = Micros::from_ms_int(1_000);
        let done = start + Micros(15_500);
        t.open_instance(&mn, MobilityProfile::Pedestrian, start).unwrap();
        assert_eq!(t.live_count(start), 1);
        t.release(&mn, done);
        assert_eq!(t.live_count(done + Micros::from_ms_int(99)), 1);
        assert_eq!(t.live_count(done + LINGER), 0);
        let it = instance_compute_hours(&t.finish(Micros::from_ms_int(60_000)));
        assert_eq!(it.total, 115.5);
    }

    #[test]
    fn hold_within_linger_revives_instance() {
        let mut t = InstanceTable::new(RunMode::Mmaas, LINGER, 1.0);
        let mn = MnId::from("p");
        t.open_instance(&mn, MobilityProfile::Pedestrian, Micros::from_ms_int(0)).unwrap();
        t.release(&mn, Micros::from_ms_int(10));
        let again = t.open_instance(&mn, MobilityProfile::Pedestrian, Micros::from_ms_int(50)).unwrap();
        assert_eq!(again.created_at, Micros::ZERO);
        t.release(&mn, Micros::from_ms_int(60));
        // separate instance after the window
        t.open_instance(&mn, MobilityProfile::Pedestrian, Micros::from_ms_int(500)).unwrap();
        t.release(&mn, Micros::from_ms_int(510));
        let ledger = t.finish(Micros::from_ms_int(10_000));
        let spans: Vec<_> = ledger.intervals().map(|(_, i)| (i.open.0 / 1000, i.close.0 / 1000)).collect();
        assert_eq!(spans, vec![(0, 160), (500, 610)]);
    }
}
