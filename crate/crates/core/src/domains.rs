//! Security domains, page ownership and the cross-domain page duplication rule.
//!
//! Every page carries a one-bit security domain identifier. An access takes
//! its logical associativity from the domain of the page it touches, so a
//! given line is always inserted and looked up with the same window size.
//! A page requested by the other domain is duplicated rather than shared.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use crate::cipher::LineAddress;
use crate::error::{Error, Result};

/// Default page size in lines (4 KiB of 64 B lines).
pub const DEFAULT_PAGE_LINES: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Sdid {
    /// Normal protection; the attacker's domain in the security experiments.
    #[default]
    Normal = 0,
    /// High protection; the victim's domain.
    High = 1,
}

impl Sdid {
    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Sdid::Normal),
            1 => Some(Sdid::High),
            _ => None,
        }
    }
}

impl fmt::Display for Sdid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bit())
    }
}

/// A domain and the logical associativity its accesses use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecurityDomain {
    pub sdid: Sdid,
    pub h: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PageId(pub u64);

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Page {
    pub id: PageId,
    pub sdid: Sdid,
}

#[derive(Debug, Clone, Copy)]
struct Region {
    first: u64,
    count: u64,
    sdid: Sdid,
}

impl Region {
    fn contains(&self, page: u64) -> bool {
        page >= self.first && page - self.first < self.count
    }
}

/// The two security domains and the page table that binds pages to them.
#[derive(Debug, Clone)]
pub struct DomainTable {
    normal: SecurityDomain,
    high: SecurityDomain,
    page_lines: u64,
    num_pages: u64,
    pages: HashMap<u64, Sdid>,
    regions: Vec<Region>,
    duplicates: HashMap<(u64, Sdid), u64>,
    next_duplicate: u64,
}

impl DomainTable {
    /// Table with the given window sizes, default page size and a 40-bit
    /// line-address space.
    pub fn new(h_normal: u32, h_high: u32) -> Result<Self> {
        Self::with_layout(h_normal, h_high, DEFAULT_PAGE_LINES, 40)
    }

    pub fn with_layout(
        h_normal: u32,
        h_high: u32,
        page_lines: u64,
        line_address_bits: u32,
    ) -> Result<Self> {
        if h_normal == 0 {
            return Err(Error::config("ah", "logical associativity must be at least 1"));
        }
        if h_high == 0 {
            return Err(Error::config("vh", "logical associativity must be at least 1"));
        }
        if page_lines == 0 {
            return Err(Error::config("page_lines", "must be at least 1"));
        }
        if line_address_bits == 0 || line_address_bits > 64 {
            return Err(Error::config("address_bits", "line address width out of range"));
        }
        let space = if line_address_bits == 64 { u64::MAX } else { (1u64 << line_address_bits) - 1 };
        let num_pages = space / page_lines + u64::from(line_address_bits < 64);
        Ok(DomainTable {
            normal: SecurityDomain { sdid: Sdid::Normal, h: h_normal },
            high: SecurityDomain { sdid: Sdid::High, h: h_high },
            page_lines,
            num_pages,
            pages: HashMap::new(),
            regions: Vec::new(),
            duplicates: HashMap::new(),
            next_duplicate: num_pages - 1,
        })
    }

    pub fn domain(&self, sdid: Sdid) -> &SecurityDomain {
        match sdid {
            Sdid::Normal => &self.normal,
            Sdid::High => &self.high,
        }
    }

    pub fn page_lines(&self) -> u64 {
        self.page_lines
    }

    pub fn num_pages(&self) -> u64 {
        self.num_pages
    }

    fn lookup(&self, page: u64) -> Option<Sdid> {
        if let Some(&sdid) = self.pages.get(&page) {
            return Some(sdid);
        }
        self.regions.iter().find(|r| r.contains(page)).map(|r| r.sdid)
    }

    /// Binds one page to a domain. Re-registering with the same domain is a no-op.
    pub fn register_page(&mut self, id: PageId, sdid: Sdid) -> Result<Page> {
        if id.0 >= self.num_pages {
            return Err(Error::config("page", format!("page {id} outside the address space")));
        }
        match self.lookup(id.0) {
            Some(existing) if existing != sdid => Err(Error::config(
                "page",
                format!("page {id} already belongs to domain {existing}"),
            )),
            Some(_) => Ok(Page { id, sdid }),
            None => {
                self.pages.insert(id.0, sdid);
                Ok(Page { id, sdid })
            }
        }
    }

    /// Binds `count` consecutive pages starting at `first` to one domain.
    pub fn register_region(&mut self, first: PageId, count: u64, sdid: Sdid) -> Result<()> {
        let end = first.0.checked_add(count).filter(|&e| e <= self.num_pages);
        let Some(end) = end else {
            return Err(Error::config("page", "region outside the address space"));
        };
        let overlaps = self
            .regions
            .iter()
            .any(|r| first.0 < r.first + r.count && r.first < end)
            || self.pages.keys().any(|&p| p >= first.0 && p < end);
        if overlaps {
            return Err(Error::config("page", "region overlaps registered pages"));
        }
        self.regions.push(Region { first: first.0, count, sdid });
        Ok(())
    }

    pub fn page(&self, id: PageId) -> Result<Page> {
        self.lookup(id.0)
            .map(|sdid| Page { id, sdid })
            .ok_or(Error::UnknownPage(id.0))
    }

    pub fn page_of(&self, addr: LineAddress) -> PageId {
        PageId(addr.0 / self.page_lines)
    }

    pub fn lines_of(&self, id: PageId) -> Range<u64> {
        let start = id.0 * self.page_lines;
        start..start + self.page_lines
    }

    /// Logical associativity for accesses to `page`, taken from the page table.
    pub fn resolve_h(&self, page: &Page) -> Result<u32> {
        let sdid = self.lookup(page.id.0).ok_or(Error::UnknownPage(page.id.0))?;
        Ok(self.domain(sdid).h)
    }

    pub fn domain_of(&self, addr: LineAddress) -> Result<&SecurityDomain> {
        let id = self.page_of(addr);
        let sdid = self.lookup(id.0).ok_or(Error::UnknownPage(id.0))?;
        Ok(self.domain(sdid))
    }

    /// Page the requester must use to reach the contents of `page`.
    ///
    /// Within a domain the page is shared as is. Across domains a duplicate
    /// bound to the requester is minted once and reused on later requests.
    /// Duplicates are allocated downwards from the top of the address space.
    pub fn share_page(&mut self, page: &Page, requester: Sdid) -> Result<Page> {
        let owner = self.lookup(page.id.0).ok_or(Error::UnknownPage(page.id.0))?;
        if owner == requester {
            return Ok(Page { id: page.id, sdid: owner });
        }
        if let Some(&dup) = self.duplicates.get(&(page.id.0, requester)) {
            return Ok(Page { id: PageId(dup), sdid: requester });
        }
        let dup = loop {
            let candidate = self.next_duplicate;
            if candidate == 0 {
                return Err(Error::config("page", "address space exhausted by duplicates"));
            }
            self.next_duplicate -= 1;
            if self.lookup(candidate).is_none() {
                break candidate;
            }
        };
        self.pages.insert(dup, requester);
        self.duplicates.insert((page.id.0, requester), dup);
        Ok(Page { id: PageId(dup), sdid: requester })
    }

    /// The line at the same offset of `to` as `addr` has within its own page.
    pub fn translate(&self, addr: LineAddress, to: PageId) -> LineAddress {
        LineAddress(to.0 * self.page_lines + addr.0 % self.page_lines)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(h_normal: u32, h_high: u32) -> DomainTable {
        let mut t = DomainTable::new(h_normal, h_high).unwrap();
        t.register_page(PageId(1), Sdid::Normal).unwrap();
        t.register_page(PageId(2), Sdid::High).unwrap();
        t
    }

    #[test]
    fn resolve_per_domain() {
        let t = table(1, 16);
        assert_eq!(t.resolve_h(&t.page(PageId(1)).unwrap()).unwrap(), 1);
        assert_eq!(t.resolve_h(&t.page(PageId(2)).unwrap()).unwrap(), 16);
    }

    #[test]
    fn equal_windows_in_both_domains() {
        let t = table(8, 8);
        for id in [1, 2] {
            assert_eq!(t.resolve_h(&t.page(PageId(id)).unwrap()).unwrap(), 8);
        }
    }

    #[test]
    fn unknown_page_is_rejected() {
        let t = table(1, 16);
        let ghost = Page { id: PageId(99), sdid: Sdid::High };
        assert!(matches!(t.resolve_h(&ghost), Err(Error::UnknownPage(99))));
        assert!(t.domain_of(LineAddress(99 * DEFAULT_PAGE_LINES)).is_err());
    }

    #[test]
    fn zero_window_is_rejected() {
        assert!(DomainTable::new(0, 4).is_err());
        assert!(DomainTable::new(1, 0).is_err());
    }

    #[test]
    fn same_domain_shares() {
        let mut t = table(1, 16);
        let p = t.page(PageId(1)).unwrap();
        assert_eq!(t.share_page(&p, Sdid::Normal).unwrap(), p);
    }

    #[test]
    fn cross_domain_duplicates_once() {
        let mut t = table(1, 16);
        let p = t.page(PageId(1)).unwrap();
        let dup = t.share_page(&p, Sdid::High).unwrap();
        assert_ne!(dup.id, p.id);
        assert_eq!(dup.sdid, Sdid::High);
        assert_eq!(t.resolve_h(&dup).unwrap(), 16);
        assert_eq!(t.share_page(&p, Sdid::High).unwrap(), dup);

        let a = t.lines_of(p.id);
        let b = t.lines_of(dup.id);
        assert!(a.end <= b.start || b.end <= a.start);
        let x = LineAddress(a.start + 5);
        assert_eq!(t.translate(x, dup.id).0, b.start + 5);
    }

    #[test]
    fn page_cannot_change_domain() {
        let mut t = table(1, 16);
        assert!(t.register_page(PageId(1), Sdid::High).is_err());
        assert!(t.register_page(PageId(1), Sdid::Normal).is_ok());
    }

    #[test]
    fn regions() {
        let mut t = DomainTable::new(1, 4).unwrap();
        t.register_region(PageId(0), 1000, Sdid::Normal).unwrap();
        t.register_page(PageId(5000), Sdid::High).unwrap();
        assert!(t.register_region(PageId(999), 2, Sdid::High).is_err());
        assert_eq!(t.domain_of(LineAddress(64 * 999)).unwrap().h, 1);
        assert_eq!(t.domain_of(LineAddress(64 * 5000 + 3)).unwrap().h, 4);
        assert!(t.domain_of(LineAddress(64 * 1000)).is_err());
    }
}
