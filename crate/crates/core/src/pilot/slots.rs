use std::collections::VecDeque;

use crate::state::SlotIds;

/// What one unit needs from its pilot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Request {
    pub cpus: u32,
    pub gpus: u32,
    pub memory_mb: u64,
}

impl Request {
    pub fn cpus(cpus: u32) -> Self {
        Self {
            cpus,
            ..Self::default()
        }
    }
}

/// Core and GPU slots of one pilot, each either free or held by one unit.
///
/// Memory is only tracked when a limit is configured.
#[derive(Debug, Clone)]
pub struct SlotMap<K> {
    cpu: Vec<Option<K>>,
    gpu: Vec<Option<K>>,
    memory_limit_mb: Option<u64>,
    memory_held: Vec<(K, u64)>,
}

impl<K: Clone + PartialEq> SlotMap<K> {
    pub fn new(cpus: u32, gpus: u32) -> Self {
        Self {
            cpu: vec![None; cpus as usize],
            gpu: vec![None; gpus as usize],
            memory_limit_mb: None,
            memory_held: Vec::new(),
        }
    }

    pub fn with_memory_limit(mut self, memory_mb: u64) -> Self {
        self.memory_limit_mb = Some(memory_mb);
        self
    }

    pub fn total_cpus(&self) -> u32 {
        self.cpu.len() as u32
    }

    pub fn total_gpus(&self) -> u32 {
        self.gpu.len() as u32
    }

    pub fn free_cpus(&self) -> u32 {
        self.cpu.iter().filter(|s| s.is_none()).count() as u32
    }

    pub fn free_gpus(&self) -> u32 {
        self.gpu.iter().filter(|s| s.is_none()).count() as u32
    }

    pub fn memory_used_mb(&self) -> u64 {
        self.memory_held.iter().map(|(_, m)| m).sum()
    }

    pub fn cpu_holder(&self, slot: usize) -> Option<&K> {
        self.cpu.get(slot).and_then(Option::as_ref)
    }

    pub fn gpu_holder(&self, slot: usize) -> Option<&K> {
        self.gpu.get(slot).and_then(Option::as_ref)
    }

    /// Could `request` ever be placed on an empty map?
    pub fn can_ever_fit(&self, request: &Request) -> bool {
        request.cpus <= self.total_cpus()
            && request.gpus <= self.total_gpus()
            && self.memory_limit_mb.is_none_or(|m| request.memory_mb <= m)
    }

    pub fn fits(&self, request: &Request) -> bool {
        request.cpus <= self.free_cpus()
            && request.gpus <= self.free_gpus()
            && self
                .memory_limit_mb
                .is_none_or(|m| self.memory_used_mb() + request.memory_mb <= m)
    }

    /// Take the lowest-index free slots for `holder`.
    pub fn allocate(&mut self, holder: &K, request: &Request) -> Option<SlotIds> {
        if !self.fits(request) {
            return None;
        }
        let take = |slots: &mut Vec<Option<K>>, n: u32| {
            let mut ids = Vec::with_capacity(n as usize);
            for (i, slot) in slots.iter_mut().enumerate() {
                if ids.len() == n as usize {
                    break;
                }
                if slot.is_none() {
                    *slot = Some(holder.clone());
                    ids.push(i);
                }
            }
            ids
        };
        let cpu = take(&mut self.cpu, request.cpus);
        let gpu = take(&mut self.gpu, request.gpus);
        if self.memory_limit_mb.is_some() && request.memory_mb > 0 {
            self.memory_held.push((holder.clone(), request.memory_mb));
        }
        Some(SlotIds { cpu, gpu })
    }

    /// Free everything `holder` has. Returns the number of cpu slots freed.
    pub fn release(&mut self, holder: &K) -> u32 {
        let mut freed = 0;
        for slot in self.cpu.iter_mut().filter(|s| s.as_ref() == Some(holder)) {
            *slot = None;
            freed += 1;
        }
        for slot in self.gpu.iter_mut().filter(|s| s.as_ref() == Some(holder)) {
            *slot = None;
        }
        self.memory_held.retain(|(k, _)| k != holder);
        freed
    }
}

/// FIFO first-fit scheduling of queued units onto a [`SlotMap`].
///
/// Without backfill the scan stops at the first unit that does not fit; with
/// backfill it continues past it.
#[derive(Debug, Clone)]
pub struct UnitScheduler<K> {
    slots: SlotMap<K>,
    queue: VecDeque<(K, Request)>,
    backfill: bool,
}

impl<K: Clone + PartialEq> UnitScheduler<K> {
    pub fn new(slots: SlotMap<K>, backfill: bool) -> Self {
        Self {
            slots,
            queue: VecDeque::new(),
            backfill,
        }
    }

    pub fn slots(&self) -> &SlotMap<K> {
        &self.slots
    }

    pub fn backfill(&self) -> bool {
        self.backfill
    }

    /// Queue a unit. Fails, returning the request, when it could never fit.
    pub fn enqueue(&mut self, unit: K, request: Request) -> Result<(), Request> {
        if !self.slots.can_ever_fit(&request) {
            return Err(request);
        }
        self.queue.push_back((unit, request));
        Ok(())
    }

    pub fn queued(&self) -> impl Iterator<Item = &K> {
        self.queue.iter().map(|(k, _)| k)
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Drop a unit from the queue. False when it was not queued.
    pub fn dequeue(&mut self, unit: &K) -> bool {
        let before = self.queue.len();
        self.queue.retain(|(k, _)| k != unit);
        self.queue.len() != before
    }

    /// Assign slots to every unit the policy allows right now.
    pub fn tick(&mut self) -> Vec<(K, SlotIds)> {
        let mut assigned = Vec::new();
        let mut i = 0;
        while i < self.queue.len() {
            let (unit, request) = &self.queue[i];
            match self.slots.allocate(unit, request) {
                Some(ids) => {
                    let (unit, _) = self.queue.remove(i).expect("index in range");
                    assigned.push((unit, ids));
                }
                None if self.backfill => i += 1,
                None => break,
            }
        }
        assigned
    }

    pub fn release(&mut self, unit: &K) -> u32 {
        self.slots.release(unit)
    }
}
