use thiserror::Error;
use zeroize::Zeroize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionOwner {
    Enclave,
    Os,
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionId(pub u64);

/// Raised whenever the normal world touches locked enclave memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("access denied to locked region {0:?}")]
pub struct AccessDenied(pub RegionId);

/// A block of simulated physical memory. Every normal-world access goes
/// through [`MemoryRegion::os_read`] / [`MemoryRegion::os_write`].
#[derive(Debug)]
pub struct MemoryRegion {
    id: RegionId,
    owner: RegionOwner,
    locked: bool,
    contents: Vec<u8>,
    zeroized: bool,
}

impl MemoryRegion {
    pub(crate) fn new(id: RegionId, owner: RegionOwner, contents: Vec<u8>) -> Self {
        Self { id, owner, locked: false, contents, zeroized: false }
    }

    pub fn id(&self) -> RegionId {
        self.id
    }

    pub fn owner(&self) -> RegionOwner {
        self.owner
    }

    pub fn is_locked(&self) -> bool {
        self.locked
    }

    pub fn is_zeroized(&self) -> bool {
        self.zeroized
    }

    pub fn len(&self) -> usize {
        self.contents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contents.is_empty()
    }

    fn os_accessible(&self) -> bool {
        !self.locked || matches!(self.owner, RegionOwner::Os | RegionOwner::Shared)
    }

    pub fn os_read(&self) -> Result<Vec<u8>, AccessDenied> {
        if self.os_accessible() {
            Ok(self.contents.clone())
        } else {
            Err(AccessDenied(self.id))
        }
    }

    /// Writes `bytes` at `offset`, growing the region if needed.
    pub fn os_write(&mut self, offset: usize, bytes: &[u8]) -> Result<(), AccessDenied> {
        if !self.os_accessible() {
            return Err(AccessDenied(self.id));
        }
        self.write(offset, bytes);
        Ok(())
    }

    pub(crate) fn lock(&mut self) {
        self.locked = true;
    }

    pub(crate) fn unlock(&mut self) {
        self.locked = false;
    }

    pub(crate) fn zeroize(&mut self) {
        self.contents.as_mut_slice().zeroize();
        self.zeroized = true;
    }

    pub(crate) fn bytes(&self) -> &[u8] {
        &self.contents
    }

    pub(crate) fn write(&mut self, offset: usize, bytes: &[u8]) {
        let end = offset + bytes.len();
        if end > self.contents.len() {
            self.contents.resize(end, 0);
        }
        self.contents[offset..end].copy_from_slice(bytes);
        self.zeroized = false;
    }

    /// Zeroizes everything from `offset` on and shrinks the region to `offset`.
    pub(crate) fn truncate_wiped(&mut self, offset: usize) {
        if offset < self.contents.len() {
            self.contents[offset..].zeroize();
            self.contents.truncate(offset);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locked_enclave_region_denies_os() {
        let mut r = MemoryRegion::new(RegionId(1), RegionOwner::Enclave, vec![1, 2, 3]);
        r.lock();
        assert_eq!(r.os_read(), Err(AccessDenied(RegionId(1))));
        assert_eq!(r.os_write(0, &[9]), Err(AccessDenied(RegionId(1))));
        r.zeroize();
        r.unlock();
        assert_eq!(r.os_read().unwrap(), vec![0, 0, 0]);
        assert!(r.is_zeroized());
    }

    #[test]
    fn shared_and_os_regions_stay_accessible_when_locked() {
        for owner in [RegionOwner::Shared, RegionOwner::Os] {
            let mut r = MemoryRegion::new(RegionId(2), owner, vec![]);
            r.lock();
            r.os_write(2, &[7]).unwrap();
            assert_eq!(r.os_read().unwrap(), vec![0, 0, 7]);
        }
    }

    #[test]
    fn truncate_wipes_tail() {
        let mut r = MemoryRegion::new(RegionId(3), RegionOwner::Enclave, vec![5; 10]);
        r.truncate_wiped(4);
        assert_eq!(r.bytes(), &[5, 5, 5, 5]);
    }
}
