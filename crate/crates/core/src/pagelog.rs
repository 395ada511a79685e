//! Append-only page log with monotone page numbers.
//!
//! Records are packed into a fixed-size open buffer. When the next record
//! does not fit, the buffer is padded with `0xFF` and finalized under the
//! next page number. Records never span pages, so every page decodes on its
//! own. When the retained window exceeds `capacity_pages` the oldest page is
//! evicted.

use std::collections::VecDeque;
use std::io::{self, Read, Write};

use thiserror::Error;

pub const DEFAULT_PAGE_SIZE: usize = 256;
pub const DEFAULT_CAPACITY_PAGES: u32 = 8192;

const DUMP_MAGIC: &[u8; 4] = b"PLOG";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PageLogError {
    #[error("record of {len} bytes exceeds page size {page_size}")]
    RecordTooLarge { len: usize, page_size: usize },
    #[error("page {page_no} expired (oldest retained page is {head})")]
    PageExpired { page_no: u32, head: u32 },
    #[error("page {0} not finalized")]
    PageNotReady(u32),
}

#[derive(Debug, Error)]
pub enum DumpError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad page log dump: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Page {
    pub page_no: u32,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct PageLog {
    page_size: usize,
    capacity_pages: u32,
    pages: VecDeque<Page>,
    head_page_no: u32,
    next_page_no: u32,
    open: Vec<u8>,
    open_records: u32,
    evicted: u64,
}

impl Default for PageLog {
    fn default() -> Self {
        Self::new(DEFAULT_PAGE_SIZE, DEFAULT_CAPACITY_PAGES)
    }
}

impl PageLog {
    pub fn new(page_size: usize, capacity_pages: u32) -> Self {
        assert!(page_size > 0 && capacity_pages > 0);
        Self {
            page_size,
            capacity_pages,
            pages: VecDeque::new(),
            head_page_no: 0,
            next_page_no: 0,
            open: Vec::with_capacity(page_size),
            open_records: 0,
            evicted: 0,
        }
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn capacity_pages(&self) -> u32 {
        self.capacity_pages
    }

    pub fn head_page_no(&self) -> u32 {
        self.head_page_no
    }

    pub fn next_page_no(&self) -> u32 {
        self.next_page_no
    }

    /// Bytes accumulated for the page that is not yet finalized.
    pub fn open_buffer(&self) -> &[u8] {
        &self.open
    }

    /// Records sitting in the open buffer.
    pub fn open_records(&self) -> u32 {
        self.open_records
    }

    /// Pages dropped by capacity eviction over the log's lifetime.
    pub fn evicted_pages(&self) -> u64 {
        self.evicted
    }

    pub fn retained(&self) -> impl Iterator<Item = &Page> {
        self.pages.iter()
    }

    /// Appends one encoded record. Returns the page number finalized to make
    /// room for it, if any.
    pub fn append(&mut self, record: &[u8]) -> Result<Option<u32>, PageLogError> {
        if record.len() > self.page_size {
            return Err(PageLogError::RecordTooLarge {
                len: record.len(),
                page_size: self.page_size,
            });
        }
        let mut finalized = None;
        if self.open.len() + record.len() > self.page_size {
            finalized = Some(self.finalize_open());
        }
        self.open.extend_from_slice(record);
        self.open_records += 1;
        Ok(finalized)
    }

    /// Pads and finalizes the open buffer if it holds anything.
    pub fn flush(&mut self) -> Option<u32> {
        if self.open.is_empty() {
            None
        } else {
            Some(self.finalize_open())
        }
    }

    fn finalize_open(&mut self) -> u32 {
        let mut data = std::mem::replace(&mut self.open, Vec::with_capacity(self.page_size));
        data.resize(self.page_size, 0xFF);
        let page_no = self.next_page_no;
        self.pages.push_back(Page { page_no, data });
        self.next_page_no += 1;
        self.open_records = 0;
        while self.next_page_no - self.head_page_no > self.capacity_pages {
            self.pages.pop_front();
            self.head_page_no += 1;
            self.evicted += 1;
        }
        page_no
    }

    pub fn read_page(&self, page_no: u32) -> Result<&Page, PageLogError> {
        if page_no < self.head_page_no {
            return Err(PageLogError::PageExpired {
                page_no,
                head: self.head_page_no,
            });
        }
        if page_no >= self.next_page_no {
            return Err(PageLogError::PageNotReady(page_no));
        }
        Ok(&self.pages[(page_no - self.head_page_no) as usize])
    }

    pub fn max_page(&self) -> Option<u32> {
        self.next_page_no.checked_sub(1)
    }

    /// Writes retained finalized pages as
    /// `"PLOG" | page_size u32 | head_page_no u32 | count u32 | pages...`, all little-endian.
    pub fn dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&(self.page_size as u32).to_le_bytes())?;
        w.write_all(&self.head_page_no.to_le_bytes())?;
        w.write_all(&(self.pages.len() as u32).to_le_bytes())?;
        for p in &self.pages {
            w.write_all(&p.data)?;
        }
        Ok(())
    }

    /// Loads a dump. Capacity is set to the number of pages present (at least one).
    pub fn load<R: Read>(mut r: R) -> Result<Self, DumpError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|_| DumpError::Format("short header".into()))?;
        if &header[..4] != DUMP_MAGIC {
            return Err(DumpError::Format("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let page_size = word(4) as usize;
        let head = word(8);
        let count = word(12);
        if page_size == 0 {
            return Err(DumpError::Format("zero page size".into()));
        }
        let mut log = PageLog::new(page_size, count.max(1));
        log.head_page_no = head;
        log.next_page_no = head;
        for i in 0..count {
            let mut data = vec![0u8; page_size];
            r.read_exact(&mut data)
                .map_err(|_| DumpError::Format(format!("truncated at page {i} of {count}")))?;
            log.pages.push_back(Page {
                page_no: head + i,
                data,
            });
            log.next_page_no += 1;
        }
        Ok(log)
    }
}
