use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-instance request token, allocated from a monotonically increasing
/// counter at submission.
pub type RequestId = u64;

/// Default block size in bytes.
pub const DEFAULT_BLOCK_SIZE: u32 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoKind {
    Read,
    Write,
    Fsync,
    Nop,
}

impl IoKind {
    pub fn moves_data(self) -> bool {
        matches!(self, IoKind::Read | IoKind::Write)
    }

    pub fn code(self) -> u8 {
        match self {
            IoKind::Read => 0,
            IoKind::Write => 1,
            IoKind::Fsync => 2,
            IoKind::Nop => 3,
        }
    }
}

/// Block size and size of the target a request addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub block_size: u32,
    pub capacity_bytes: u64,
}

impl Geometry {
    pub fn blocks(&self) -> u64 {
        self.capacity_bytes / self.block_size as u64
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            block_size: DEFAULT_BLOCK_SIZE,
            capacity_bytes: 1 << 40,
        }
    }
}

/// One I/O operation travelling through a submission queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IoRequest {
    /// Assigned by [`super::ApiInstance::sq_push`].
    pub request_id: RequestId,
    pub kind: IoKind,
    pub offset: u64,
    pub length: u32,
    /// Index into a caller-owned buffer registry; unused by Fsync/Nop.
    pub buffer_id: u32,
    /// The next request in the SQ must not start before this one completes.
    pub link: bool,
    pub user_data: u64,
    /// Stamped at submission; echoed into the completion.
    pub submit_time: u64,
}

impl IoRequest {
    fn new(kind: IoKind, offset: u64, length: u32) -> Self {
        IoRequest {
            request_id: 0,
            kind,
            offset,
            length,
            buffer_id: 0,
            link: false,
            user_data: 0,
            submit_time: 0,
        }
    }

    pub fn read(offset: u64, length: u32) -> Self {
        Self::new(IoKind::Read, offset, length)
    }

    pub fn write(offset: u64, length: u32) -> Self {
        Self::new(IoKind::Write, offset, length)
    }

    pub fn fsync() -> Self {
        Self::new(IoKind::Fsync, 0, 0)
    }

    pub fn nop() -> Self {
        Self::new(IoKind::Nop, 0, 0)
    }

    pub fn with_user_data(mut self, user_data: u64) -> Self {
        self.user_data = user_data;
        self
    }

    pub fn with_buffer(mut self, buffer_id: u32) -> Self {
        self.buffer_id = buffer_id;
        self
    }

    pub fn linked(mut self) -> Self {
        self.link = true;
        self
    }

    pub fn validate(&self, geometry: &Geometry) -> Result<(), RequestError> {
        match self.kind {
            IoKind::Read | IoKind::Write => {
                let bs = geometry.block_size as u64;
                if self.length == 0 {
                    return Err(RequestError::EmptyTransfer);
                }
                if self.offset % bs != 0 || self.length as u64 % bs != 0 {
                    return Err(RequestError::Misaligned {
                        offset: self.offset,
                        length: self.length,
                        block_size: geometry.block_size,
                    });
                }
                if self.offset + self.length as u64 > geometry.capacity_bytes {
                    return Err(RequestError::OutOfRange {
                        offset: self.offset,
                        length: self.length,
                        capacity: geometry.capacity_bytes,
                    });
                }
            }
            IoKind::Fsync | IoKind::Nop => {
                if self.length != 0 {
                    return Err(RequestError::UnexpectedLength(self.length));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IoResult {
    Ok(u32),
    Error(i32),
    Canceled,
}

impl IoResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, IoResult::Ok(_))
    }
}

/// Error code used by the simulator for injected faults (EIO).
pub const EIO: i32 = 5;
/// Error code for a request the device refused (EINVAL).
pub const EINVAL: i32 = 22;

/// Completion notification for one accepted request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Completion {
    pub request_id: RequestId,
    pub user_data: u64,
    pub result: IoResult,
    pub submit_time: u64,
    pub complete_time: u64,
}

impl Completion {
    pub fn latency_ns(&self) -> u64 {
        self.complete_time.saturating_sub(self.submit_time)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RequestError {
    #[error("read/write of zero bytes")]
    EmptyTransfer,
    #[error("offset {offset} / length {length} not aligned to block size {block_size}")]
    Misaligned {
        offset: u64,
        length: u32,
        block_size: u32,
    },
    #[error("range {offset}+{length} exceeds capacity {capacity}")]
    OutOfRange {
        offset: u64,
        length: u32,
        capacity: u64,
    },
    #[error("fsync/nop must have length 0, got {0}")]
    UnexpectedLength(u32),
    #[error("linked chain of {len} exceeds SQ capacity {capacity}")]
    ChainTooLong { len: usize, capacity: usize },
    #[error("linked chain: every request but the last must carry the link flag")]
    BrokenChain,
    #[error("empty chain")]
    EmptyChain,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let g = Geometry {
            block_size: 4096,
            capacity_bytes: 1 << 20,
        };
        assert!(IoRequest::read(0, 4096).validate(&g).is_ok());
        assert!(IoRequest::nop().validate(&g).is_ok());
        assert_eq!(
            IoRequest::read(0, 0).validate(&g),
            Err(RequestError::EmptyTransfer)
        );
        assert!(matches!(
            IoRequest::write(100, 4096).validate(&g),
            Err(RequestError::Misaligned { .. })
        ));
        assert!(matches!(
            IoRequest::read((1 << 20) - 4096, 8192).validate(&g),
            Err(RequestError::OutOfRange { .. })
        ));
        let mut bad = IoRequest::fsync();
        bad.length = 4096;
        assert_eq!(bad.validate(&g), Err(RequestError::UnexpectedLength(4096)));
    }
}
