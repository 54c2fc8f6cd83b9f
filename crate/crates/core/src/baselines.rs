//! Write-everything admission with the classic eviction orderings.

use serde::{Deserialize, Serialize};

use crate::cache::{Access, CacheState, FileKey, Node};
use crate::error::Result;
use crate::policy::{Admission, Policy, PolicyId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvictionOrdering {
    Lru,
    Lfu,
    SizeBig,
    SizeSmall,
}

/// Cached files in eviction order for `kind`; ties go to the earlier insertion.
pub fn order_for_eviction(cache: &CacheState, kind: EvictionOrdering) -> Vec<FileKey> {
    let mut files: Vec<_> = cache.iter().map(|(k, f)| (k, *f)).collect();
    // `iter` yields insertion order, so a stable sort keeps the tie-break.
    match kind {
        EvictionOrdering::Lru => files.sort_by_key(|(_, f)| f.last_access_tick),
        EvictionOrdering::Lfu => files.sort_by_key(|(_, f)| f.access_count),
        EvictionOrdering::SizeBig => files.sort_by(|a, b| b.1.size.cmp(&a.1.size)),
        EvictionOrdering::SizeSmall => files.sort_by_key(|(_, f)| f.size),
    }
    files.into_iter().map(|(k, _)| k).collect()
}

pub fn admit_always(_access: &Access) -> Admission {
    Admission::Store
}

#[derive(Debug, Clone)]
pub struct WriteEverything {
    ordering: EvictionOrdering,
}

impl WriteEverything {
    pub fn new(ordering: EvictionOrdering) -> Self {
        WriteEverything { ordering }
    }
}

impl Policy for WriteEverything {
    fn id(&self) -> PolicyId {
        match self.ordering {
            EvictionOrdering::Lru => PolicyId::WeLru,
            EvictionOrdering::Lfu => PolicyId::WeLfu,
            EvictionOrdering::SizeBig => PolicyId::WeSizeBig,
            EvictionOrdering::SizeSmall => PolicyId::WeSizeSmall,
        }
    }

    fn admit(&mut self, access: &Access, _node: &Node) -> Admission {
        admit_always(access)
    }

    fn free_space(&mut self, node: &mut Node, needed: u64) -> Result<()> {
        let order = order_for_eviction(&node.cache, self.ordering);
        node.evict_to_low_watermark(&order, needed)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{NodeConfig, Outcome, Simulator};
    use crate::trace::Request;

    fn req(tick: u64, id: &str, size: u64) -> Request {
        Request {
            tick,
            day: 0,
            file_id: id.into(),
            size,
            data_type: "data".into(),
            user_id: "u".into(),
            site_id: "s".into(),
        }
    }

    fn sim_with(kind: EvictionOrdering, reqs: &[Request]) -> Simulator {
        let mut sim = Simulator::new(&NodeConfig::new(1000), Box::new(WriteEverything::new(kind))).unwrap();
        for r in reqs {
            sim.process(r).unwrap();
        }
        sim
    }

    fn names(sim: &Simulator, order: &[FileKey]) -> Vec<String> {
        order.iter().map(|k| sim.node().file_name(*k).to_string()).collect()
    }

    #[test]
    fn lru_orders_by_last_access() {
        // A inserted first but touched last.
        let sim = sim_with(EvictionOrdering::Lru, &[req(0, "A", 10), req(1, "B", 10), req(5, "A", 10)]);
        let order = order_for_eviction(&sim.node().cache, EvictionOrdering::Lru);
        assert_eq!(names(&sim, &order), ["B", "A"]);
    }

    #[test]
    fn lfu_orders_by_access_count() {
        let sim = sim_with(
            EvictionOrdering::Lfu,
            &[req(0, "A", 10), req(1, "B", 10), req(2, "A", 10), req(3, "A", 10)],
        );
        let order = order_for_eviction(&sim.node().cache, EvictionOrdering::Lfu);
        assert_eq!(names(&sim, &order), ["B", "A"]);
    }

    #[test]
    fn size_orders() {
        let sim = sim_with(EvictionOrdering::SizeBig, &[req(0, "A", 10), req(1, "B", 99), req(2, "C", 10)]);
        let big = order_for_eviction(&sim.node().cache, EvictionOrdering::SizeBig);
        assert_eq!(names(&sim, &big), ["B", "A", "C"]);
        let small = order_for_eviction(&sim.node().cache, EvictionOrdering::SizeSmall);
        assert_eq!(names(&sim, &small), ["A", "C", "B"]);
    }

    #[test]
    fn one_shot_files_are_all_written() {
        let reqs: Vec<_> = (0..20).map(|i| req(i, &format!("f{i}"), 10)).collect();
        let sim = sim_with(EvictionOrdering::Lru, &reqs);
        assert_eq!(sim.node().accounting.totals.wd, 200);
    }

    #[test]
    fn oversized_file_overrides_admission() {
        let mut sim = Simulator::new(&NodeConfig::new(50), Box::new(WriteEverything::new(EvictionOrdering::Lru))).unwrap();
        assert_eq!(sim.process(&req(0, "huge", 51)).unwrap(), Outcome::MissProxied);
    }
}
