use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CloudError;
use crate::node::task::validate_task_set;
use crate::node::{NodeId, TaskConfig};

/// Target configuration held by the cloud for one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesiredConfig {
    pub node_id: NodeId,
    pub version: u32,
    #[serde(default)]
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub params: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, Default)]
pub struct ConfigRegistry {
    desired: BTreeMap<NodeId, DesiredConfig>,
}

impl ConfigRegistry {
    /// Stores a new desired configuration under the next version number.
    /// Unknown nodes are enrolled on first use.
    pub fn set(
        &mut self,
        node_id: NodeId,
        tasks: Vec<TaskConfig>,
        params: BTreeMap<String, i64>,
    ) -> Result<u32, CloudError> {
        validate_task_set(&tasks).map_err(CloudError::InvalidTaskConfig)?;
        let version = self.desired.get(&node_id).map_or(0, |d| d.version) + 1;
        let mut tasks = tasks;
        tasks.sort_by_key(|t| t.task_id);
        self.desired.insert(
            node_id,
            DesiredConfig {
                node_id,
                version,
                tasks,
                params,
            },
        );
        Ok(version)
    }

    pub(crate) fn restore(&mut self, cfg: DesiredConfig) {
        self.desired.insert(cfg.node_id, cfg);
    }

    pub fn get(&self, node_id: NodeId) -> Option<&DesiredConfig> {
        self.desired.get(&node_id)
    }

    pub fn all(&self) -> impl Iterator<Item = &DesiredConfig> {
        self.desired.values()
    }
}

pub fn image_checksum(image: &[u8]) -> u32 {
    crc32fast::hash(image)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirmwareImage {
    pub version: u32,
    pub image: Vec<u8>,
    pub checksum: u32,
    pub chunk_size: usize,
}

impl FirmwareImage {
    pub fn new(version: u32, image: Vec<u8>, chunk_size: usize) -> Self {
        let checksum = image_checksum(&image);
        Self {
            version,
            image,
            checksum,
            chunk_size,
        }
    }

    pub fn chunks(&self) -> impl Iterator<Item = &[u8]> {
        self.image.chunks(self.chunk_size.max(1))
    }

    pub fn chunk_count(&self) -> usize {
        self.image.len().div_ceil(self.chunk_size.max(1))
    }
}

#[derive(Debug, Clone, Default)]
pub struct FirmwareRegistry {
    images: BTreeMap<u32, FirmwareImage>,
    desired: BTreeMap<NodeId, u32>,
}

impl FirmwareRegistry {
    pub fn register(&mut self, image: FirmwareImage) -> Result<u32, CloudError> {
        if image.image.is_empty() || image.chunk_size == 0 || image.chunk_size > u8::MAX as usize {
            return Err(CloudError::InvalidImage);
        }
        if image.chunk_count() > u16::MAX as usize {
            return Err(CloudError::InvalidImage);
        }
        if image_checksum(&image.image) != image.checksum {
            return Err(CloudError::ChecksumMismatch);
        }
        match self.images.get(&image.version) {
            Some(existing) if *existing != image => Err(CloudError::VersionExists(image.version)),
            _ => {
                let v = image.version;
                self.images.insert(v, image);
                Ok(v)
            }
        }
    }

    pub fn image(&self, version: u32) -> Option<&FirmwareImage> {
        self.images.get(&version)
    }

    pub fn chunks(&self, version: u32) -> Option<Vec<Vec<u8>>> {
        self.images
            .get(&version)
            .map(|img| img.chunks().map(<[u8]>::to_vec).collect())
    }

    pub fn set_desired(&mut self, node_id: NodeId, version: u32) -> Result<(), CloudError> {
        if !self.images.contains_key(&version) {
            return Err(CloudError::UnknownFirmware(version));
        }
        self.desired.insert(node_id, version);
        Ok(())
    }

    pub(crate) fn restore_desired(&mut self, node_id: NodeId, version: u32) {
        self.desired.insert(node_id, version);
    }

    pub fn desired(&self, node_id: NodeId) -> Option<u32> {
        self.desired.get(&node_id).copied()
    }

    pub fn all_desired(&self) -> impl Iterator<Item = (NodeId, u32)> + '_ {
        self.desired.iter().map(|(k, v)| (*k, *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::{Activity, Condition};

    fn task(id: u16) -> TaskConfig {
        TaskConfig {
            task_id: id,
            type_id: 2,
            sample_period_s: 300,
            entry: vec![Condition::Motion { moving: true }],
            exit: vec![],
            priority: 0,
            activity: Activity::GpsLow,
        }
    }

    #[test]
    fn versions_increase() {
        let mut r = ConfigRegistry::default();
        assert_eq!(r.set(1, vec![task(1)], BTreeMap::new()).unwrap(), 1);
        assert_eq!(r.set(1, vec![task(2)], BTreeMap::new()).unwrap(), 2);
        assert_eq!(r.get(1).unwrap().version, 2);
        assert_eq!(r.get(1).unwrap().tasks, vec![task(2)]);
        // Enrollment before first contact.
        assert_eq!(r.set(99, vec![], BTreeMap::new()).unwrap(), 1);
    }

    #[test]
    fn invalid_tasks_rejected() {
        let mut r = ConfigRegistry::default();
        let mut bad = task(1);
        bad.sample_period_s = 0;
        assert!(matches!(r.set(1, vec![bad], BTreeMap::new()), Err(CloudError::InvalidTaskConfig(_))));
        assert!(r.get(1).is_none());
    }

    #[test]
    fn chunking() {
        let mut r = FirmwareRegistry::default();
        let v = r.register(FirmwareImage::new(1, vec![7; 4096], 64)).unwrap();
        assert_eq!(r.chunks(v).unwrap().len(), 64);
        r.register(FirmwareImage::new(2, vec![7; 4100], 64)).unwrap();
        let c = r.chunks(2).unwrap();
        assert_eq!(c.len(), 65);
        assert_eq!(c.last().unwrap().len(), 4);
    }

    #[test]
    fn bad_images() {
        let mut r = FirmwareRegistry::default();
        assert_eq!(r.register(FirmwareImage::new(1, vec![], 64)), Err(CloudError::InvalidImage));
        let mut img = FirmwareImage::new(1, vec![1, 2, 3], 64);
        img.checksum ^= 1;
        assert_eq!(r.register(img), Err(CloudError::ChecksumMismatch));
        assert_eq!(r.set_desired(1, 5), Err(CloudError::UnknownFirmware(5)));
    }
}
