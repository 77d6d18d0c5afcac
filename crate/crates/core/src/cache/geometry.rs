use crate::error::{Error, Result};

/// Structural parameters of the last-level cache. Every other size is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheGeometry {
    line_size_bytes: u64,
    total_size_bytes: u64,
    num_ways: usize,
    num_banks: usize,
    address_bits: u32,
}

impl Default for CacheGeometry {
    /// 8 MiB, 64 B lines, 16 ways, 8 banks, 46-bit physical addresses.
    fn default() -> Self {
        CacheGeometry {
            line_size_bytes: 64,
            total_size_bytes: 8 << 20,
            num_ways: 16,
            num_banks: 8,
            address_bits: 46,
        }
    }
}

impl CacheGeometry {
    pub fn new(
        line_size_bytes: u64,
        total_size_bytes: u64,
        num_ways: usize,
        num_banks: usize,
        address_bits: u32,
    ) -> Result<Self> {
        let g = CacheGeometry {
            line_size_bytes,
            total_size_bytes,
            num_ways,
            num_banks,
            address_bits,
        };
        g.validate()?;
        Ok(g)
    }

    /// Geometry with `sets_per_way` sets in each of `num_ways` ways and default
    /// line size and address width. Handy for small test caches.
    pub fn with_sets(num_ways: usize, sets_per_way: usize, num_banks: usize) -> Result<Self> {
        let line = 64;
        Self::new(line, line * (num_ways * sets_per_way) as u64, num_ways, num_banks, 46)
    }

    fn validate(&self) -> Result<()> {
        if self.line_size_bytes == 0 || !self.line_size_bytes.is_power_of_two() {
            return Err(Error::config("line_size_bytes", "must be a power of two"));
        }
        if self.total_size_bytes == 0 || self.total_size_bytes % self.line_size_bytes != 0 {
            return Err(Error::config(
                "total_size_bytes",
                "must be a positive multiple of line_size_bytes",
            ));
        }
        if self.num_ways == 0 {
            return Err(Error::config("num_ways", "must be at least 1"));
        }
        let lines = self.total_size_bytes / self.line_size_bytes;
        if lines % self.num_ways as u64 != 0 {
            return Err(Error::config(
                "num_ways",
                format!("{lines} lines do not split evenly into {} ways", self.num_ways),
            ));
        }
        let sets = lines / self.num_ways as u64;
        if !sets.is_power_of_two() {
            return Err(Error::config(
                "num_ways",
                format!("sets per way ({sets}) is not a power of two"),
            ));
        }
        if self.num_banks == 0 || sets % self.num_banks as u64 != 0 {
            return Err(Error::config(
                "num_banks",
                format!("must be positive and divide the {sets} sets per way"),
            ));
        }
        let used = self.offset_bits() + self.index_bits();
        if self.address_bits < used || self.address_bits - self.offset_bits() > 64 {
            return Err(Error::config(
                "address_bits",
                format!("must cover {used} offset+index bits and leave at most 64 line-address bits"),
            ));
        }
        Ok(())
    }

    /// The same organisation with the capacity divided by `factor`.
    ///
    /// Ways, banks and line size are kept, so only the number of sets shrinks.
    pub fn scaled(&self, factor: u64) -> Result<Self> {
        if factor == 0 || self.total_size_bytes % factor != 0 {
            return Err(Error::config("scale", format!("cannot shrink by {factor}")));
        }
        let mut g = *self;
        g.total_size_bytes /= factor;
        g.validate().map_err(|e| match e {
            Error::Config { key, reason } => {
                Error::config("scale", format!("scaled geometry invalid ({key}: {reason})"))
            }
            other => other,
        })?;
        Ok(g)
    }

    pub fn line_size_bytes(&self) -> u64 {
        self.line_size_bytes
    }

    pub fn total_size_bytes(&self) -> u64 {
        self.total_size_bytes
    }

    pub fn num_ways(&self) -> usize {
        self.num_ways
    }

    pub fn num_banks(&self) -> usize {
        self.num_banks
    }

    pub fn address_bits(&self) -> u32 {
        self.address_bits
    }

    /// N, the number of lines in the cache.
    pub fn num_lines(&self) -> u64 {
        self.total_size_bytes / self.line_size_bytes
    }

    pub fn sets_per_way(&self) -> usize {
        (self.num_lines() / self.num_ways as u64) as usize
    }

    pub fn offset_bits(&self) -> u32 {
        self.line_size_bytes.trailing_zeros()
    }

    pub fn index_bits(&self) -> u32 {
        (self.sets_per_way() as u64).trailing_zeros()
    }

    /// Tag width of a conventional (unencrypted-index) cache.
    pub fn tag_bits(&self) -> u32 {
        self.address_bits - self.offset_bits() - self.index_bits()
    }

    /// Width of a line address, which is also the full stored tag.
    pub fn line_address_bits(&self) -> u32 {
        self.address_bits - self.offset_bits()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_derived_fields() {
        let g = CacheGeometry::default();
        assert_eq!(g.num_lines(), 131_072);
        assert_eq!(g.sets_per_way(), 8192);
        assert_eq!(g.offset_bits(), 6);
        assert_eq!(g.index_bits(), 13);
        assert_eq!(g.tag_bits(), 27);
        assert_eq!(g.line_address_bits(), 40);
        assert_eq!(g.offset_bits() + g.index_bits() + g.tag_bits(), g.address_bits());
    }

    #[test]
    fn rejects_non_power_of_two_sets() {
        let err = CacheGeometry::new(64, 8 << 20, 3, 8, 46).unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "num_ways"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_banks_not_dividing_sets() {
        assert!(CacheGeometry::with_sets(2, 4, 8).is_err());
        assert!(CacheGeometry::with_sets(2, 4, 3).is_err());
        assert!(CacheGeometry::with_sets(2, 4, 4).is_ok());
    }

    #[test]
    fn scale_sixteen_gives_8192_lines() {
        let g = CacheGeometry::default().scaled(16).unwrap();
        assert_eq!(g.num_lines(), 8192);
        assert_eq!(g.sets_per_way(), 512);
        assert_eq!(g.num_ways(), 16);
        assert!(CacheGeometry::default().scaled(3).is_err());
    }

    #[test]
    fn degenerate_single_line() {
        let g = CacheGeometry::new(64, 64, 1, 1, 7).unwrap();
        assert_eq!(g.index_bits(), 0);
        assert_eq!(g.tag_bits(), 1);
        assert!(CacheGeometry::new(64, 64, 1, 1, 5).is_err());
    }
}
