//! Low-order-interleaved address map.
//!
//! Field layout from the least significant bit upwards:
//! `block offset | vault (4 bits) | bank (4 bits) | row`. Consecutive blocks
//! therefore land in consecutive vaults first and only then advance the bank.
//! The two high-order bits of the 34-bit request address are ignored by a
//! 4 GiB cube.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::protocol::ADDRESS_MASK;

pub const PAGE_BYTES: u64 = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AddressError {
    #[error("invalid address map: {0}")]
    Config(String),
    #[error("field out of range: {0}")]
    OutOfRange(String),
    #[error("address {0:#x} is not 4 KiB aligned")]
    Misaligned(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressMapConfig {
    pub block_size: u64,
    pub vaults: u32,
    pub banks_per_vault: u32,
    pub capacity: u64,
}

impl Default for AddressMapConfig {
    fn default() -> Self {
        Self {
            block_size: 128,
            vaults: 16,
            banks_per_vault: 16,
            capacity: 4 << 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DecodedAddress {
    pub vault: u8,
    pub bank: u8,
    /// Byte offset of the block within its bank.
    pub row_offset: u64,
    /// Byte offset within the block.
    pub block_offset: u64,
}

/// A validated address map with precomputed field positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressMap {
    cfg: AddressMapConfig,
    offset_bits: u32,
    vault_bits: u32,
    bank_bits: u32,
}

fn log2_exact(v: u64, what: &str) -> Result<u32, AddressError> {
    if v == 0 || !v.is_power_of_two() {
        return Err(AddressError::Config(format!("{what} = {v} is not a power of two")));
    }
    Ok(v.trailing_zeros())
}

impl AddressMap {
    pub fn new(cfg: AddressMapConfig) -> Result<Self, AddressError> {
        if !matches!(cfg.block_size, 32 | 64 | 128) {
            return Err(AddressError::Config(format!("block size {} not in {{32, 64, 128}}", cfg.block_size)));
        }
        let offset_bits = log2_exact(cfg.block_size, "block size")?;
        let vault_bits = log2_exact(u64::from(cfg.vaults), "vaults")?;
        let bank_bits = log2_exact(u64::from(cfg.banks_per_vault), "banks per vault")?;
        let cap_bits = log2_exact(cfg.capacity, "capacity")?;
        if cap_bits > 34 || offset_bits + vault_bits + bank_bits > cap_bits {
            return Err(AddressError::Config("capacity inconsistent with field widths".into()));
        }
        Ok(Self { cfg, offset_bits, vault_bits, bank_bits })
    }

    pub fn config(&self) -> &AddressMapConfig {
        &self.cfg
    }

    pub fn bank_size(&self) -> u64 {
        self.cfg.capacity / u64::from(self.cfg.vaults * self.cfg.banks_per_vault)
    }

    pub fn capacity_mask(&self) -> u64 {
        (self.cfg.capacity - 1) & ADDRESS_MASK
    }

    pub fn vault_shift(&self) -> u32 {
        self.offset_bits
    }

    pub fn bank_shift(&self) -> u32 {
        self.offset_bits + self.vault_bits
    }

    fn row_shift(&self) -> u32 {
        self.bank_shift() + self.bank_bits
    }

    /// Address bits selecting the vault.
    pub fn vault_field_mask(&self) -> u64 {
        ((1u64 << self.vault_bits) - 1) << self.vault_shift()
    }

    /// Address bits selecting the bank.
    pub fn bank_field_mask(&self) -> u64 {
        ((1u64 << self.bank_bits) - 1) << self.bank_shift()
    }

    pub fn decode(&self, addr: u64) -> DecodedAddress {
        let a = addr & self.capacity_mask();
        let block_offset = a & (self.cfg.block_size - 1);
        let vault = ((a >> self.vault_shift()) & ((1 << self.vault_bits) - 1)) as u8;
        let bank = ((a >> self.bank_shift()) & ((1 << self.bank_bits) - 1)) as u8;
        let row = a >> self.row_shift();
        DecodedAddress {
            vault,
            bank,
            row_offset: row << self.offset_bits,
            block_offset,
        }
    }

    pub fn encode(&self, d: &DecodedAddress) -> Result<u64, AddressError> {
        if u32::from(d.vault) >= self.cfg.vaults {
            return Err(AddressError::OutOfRange(format!("vault {}", d.vault)));
        }
        if u32::from(d.bank) >= self.cfg.banks_per_vault {
            return Err(AddressError::OutOfRange(format!("bank {}", d.bank)));
        }
        if d.block_offset >= self.cfg.block_size {
            return Err(AddressError::OutOfRange(format!("block offset {}", d.block_offset)));
        }
        if !d.row_offset.is_multiple_of(self.cfg.block_size) || d.row_offset >= self.bank_size() {
            return Err(AddressError::OutOfRange(format!("row offset {:#x}", d.row_offset)));
        }
        let row = d.row_offset >> self.offset_bits;
        Ok(row << self.row_shift()
            | u64::from(d.bank) << self.bank_shift()
            | u64::from(d.vault) << self.vault_shift()
            | d.block_offset)
    }

    /// Distinct (vault, bank) pairs touched by the blocks of one 4 KiB page.
    pub fn page_footprint(&self, page_addr: u64) -> Result<BTreeSet<(u8, u8)>, AddressError> {
        if !page_addr.is_multiple_of(PAGE_BYTES) {
            return Err(AddressError::Misaligned(page_addr));
        }
        Ok((page_addr..page_addr + PAGE_BYTES)
            .step_by(self.cfg.block_size as usize)
            .map(|a| {
                let d = self.decode(a);
                (d.vault, d.bank)
            })
            .collect())
    }
}

impl Default for AddressMap {
    fn default() -> Self {
        AddressMap::new(AddressMapConfig::default()).expect("default map is valid")
    }
}
