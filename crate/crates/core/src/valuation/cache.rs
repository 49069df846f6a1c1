//! Concurrent coalition-utility cache with at-most-once evaluation per key.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::Result;

/// Canonical cache key for a coalition: the sorted identifier list rendered
/// as a JSON array, so arbitrary identifiers never collide.
pub fn canonical_coalition_key<I, S>(ids: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut sorted: Vec<String> = ids.into_iter().map(|s| s.as_ref().to_string()).collect();
    sorted.sort();
    serde_json::to_string(&sorted).expect("a vector of strings always serializes")
}

type Slot = Arc<Mutex<Option<Vec<f64>>>>;

/// Maps canonical coalition keys to per-reward-dimension utility vectors.
///
/// Concurrent callers asking for the same key are serialized on a per-key
/// lock, so the compute closure runs at most once per key even under
/// contention; distinct keys proceed in parallel. A failed computation
/// leaves the slot empty and can be retried.
#[derive(Debug, Default)]
pub struct UtilityCache {
    slots: Mutex<HashMap<String, Slot>>,
    oracle_calls: AtomicU64,
}

impl UtilityCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a cache from persisted entries, restoring the call counter.
    pub fn restore(entries: BTreeMap<String, Vec<f64>>, oracle_calls: u64) -> Self {
        let slots = entries
            .into_iter()
            .map(|(k, v)| (k, Arc::new(Mutex::new(Some(v)))))
            .collect();
        UtilityCache {
            slots: Mutex::new(slots),
            oracle_calls: AtomicU64::new(oracle_calls),
        }
    }

    pub fn get_or_compute(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let slot = {
            let mut slots = self.slots.lock().expect("cache map lock");
            slots.entry(key.to_string()).or_default().clone()
        };
        let mut guard = slot.lock().expect("cache slot lock");
        if let Some(values) = guard.as_ref() {
            return Ok(values.clone());
        }
        let values = compute()?;
        self.oracle_calls.fetch_add(1, Ordering::SeqCst);
        *guard = Some(values.clone());
        Ok(values)
    }

    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        let slot = self.slots.lock().expect("cache map lock").get(key).cloned()?;
        let guard = slot.lock().expect("cache slot lock");
        guard.clone()
    }

    /// Number of times a compute closure actually ran.
    pub fn oracle_calls(&self) -> u64 {
        self.oracle_calls.load(Ordering::SeqCst)
    }

    /// Number of populated entries.
    pub fn len(&self) -> usize {
        let slots = self.slots.lock().expect("cache map lock");
        slots
            .values()
            .filter(|slot| slot.lock().expect("cache slot lock").is_some())
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Populated entries in key order, for persistence.
    pub fn snapshot(&self) -> BTreeMap<String, Vec<f64>> {
        let slots = self.slots.lock().expect("cache map lock");
        slots
            .iter()
            .filter_map(|(k, slot)| {
                slot.lock()
                    .expect("cache slot lock")
                    .as_ref()
                    .map(|v| (k.clone(), v.clone()))
            })
            .collect()
    }
}
