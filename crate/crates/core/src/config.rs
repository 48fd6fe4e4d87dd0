//! Simulation configuration and address arithmetic.
//!
//! The default profile models a GTX480-class SM: 16KB 4-way L1D with 128B
//! lines, 48KB of shared memory in 32 banks, a victim tag array of 8 FIFO
//! entries for each of 48 warps, and the interference cutoffs and epoch
//! lengths used by the CIAO scheduler.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::GlobalAddress;

/// Width of one shared-memory bank word in bytes.
pub const SMEM_BANK_WORD_BYTES: u64 = 8;

/// Upper bound on rows addressable by the 8-bit row field of the translation unit.
pub const SMEM_MAX_TRANSLATED_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Gto,
    BestSwl,
    CcwsLite,
    CiaoT,
    CiaoP,
    CiaoC,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::Gto,
        Policy::BestSwl,
        Policy::CcwsLite,
        Policy::CiaoT,
        Policy::CiaoP,
        Policy::CiaoC,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Gto => "gto",
            Policy::BestSwl => "best-swl",
            Policy::CcwsLite => "ccws-lite",
            Policy::CiaoT => "ciao-t",
            Policy::CiaoP => "ciao-p",
            Policy::CiaoC => "ciao-c",
        }
    }

    /// Whether the policy may redirect warps to the shared-memory cache.
    pub fn uses_smem_cache(self) -> bool {
        matches!(self, Policy::CiaoP | Policy::CiaoC)
    }

    /// Whether the policy runs the CIAO isolate/stall state machine.
    pub fn is_ciao(self) -> bool {
        matches!(self, Policy::CiaoT | Policy::CiaoP | Policy::CiaoC)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown policy `{0}` (expected one of gto, best-swl, ccws-lite, ciao-t, ciao-p, ciao-c)")]
pub struct UnknownPolicy(pub String);

impl FromStr for Policy {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub l1d_size_bytes: u64,
    pub l1d_ways: usize,
    pub line_bytes: u64,
    /// XOR the set bits with the next-higher block-index bits.
    pub xor_hashing: bool,
    pub smem_total_bytes: u64,
    pub smem_banks: usize,
    /// Physical rows per bank of the unified L1D/shared-memory array.
    pub smem_rows_per_bank: usize,
    /// Shared memory reserved by resident CTAs; the rest may become cache.
    pub cta_smem_bytes: u64,
    pub vta_entries_per_warp: usize,
    pub vta_sets: usize,
    pub high_cutoff: f64,
    pub low_cutoff: f64,
    pub high_epoch_insts: u64,
    pub low_epoch_insts: u64,
    /// Evaluate IRS over the current high-cutoff epoch instead of the whole run.
    pub irs_windowed: bool,
    pub l2_hit_latency_cycles: u64,
    pub dram_latency_cycles: u64,
    /// Fraction of fills that miss in L2 and pay DRAM latency.
    pub l2_miss_ratio: f64,
    /// Serialization of the L1-to-L2 request port, cycles per request.
    pub mem_port_cycles: u64,
    pub response_queue_latency: u64,
    pub mshr_entries: usize,
    pub max_warps: usize,
    pub scheduler: Policy,
    pub best_swl_limit: Option<usize>,
    /// Let a later trigger overwrite an occupied pair-list field.
    pub pair_list_overwrite: bool,
    /// Baseline locality score per warp; the CCWS-lite cutoff is this times the live warp count.
    pub ccws_base_score: u64,
    /// Score added per VTA hit before decay.
    pub ccws_vta_weight: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        default_config()
    }
}

/// GTX480-like single-SM profile.
pub fn default_config() -> SimConfig {
    SimConfig {
        l1d_size_bytes: 16 * 1024,
        l1d_ways: 4,
        line_bytes: 128,
        xor_hashing: true,
        smem_total_bytes: 48 * 1024,
        smem_banks: 32,
        smem_rows_per_bank: 512,
        cta_smem_bytes: 0,
        vta_entries_per_warp: 8,
        vta_sets: 48,
        high_cutoff: 0.01,
        low_cutoff: 0.005,
        high_epoch_insts: 5000,
        low_epoch_insts: 100,
        irs_windowed: false,
        l2_hit_latency_cycles: 120,
        dram_latency_cycles: 220,
        l2_miss_ratio: 0.0,
        mem_port_cycles: 2,
        response_queue_latency: 1,
        mshr_entries: 32,
        max_warps: 48,
        scheduler: Policy::Gto,
        best_swl_limit: None,
        pair_list_overwrite: false,
        ccws_base_score: 100,
        ccws_vta_weight: 50,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line_bytes = {0} is not a power of two")]
    LineNotPowerOfTwo(u64),
    #[error("l1d_ways must be at least 1")]
    ZeroWays,
    #[error("L1D set count {sets} (size / (ways * line)) is not a power of two")]
    SetCountNotPowerOfTwo { sets: u64 },
    #[error(
        "shared-memory cache layout needs 32 banks and 128-byte lines, got {banks} banks and {line_bytes}-byte lines"
    )]
    SmemLayout { banks: usize, line_bytes: u64 },
    #[error("shared memory spans {rows} rows, exceeding the limit of {limit}")]
    SmemRows { rows: usize, limit: usize },
    #[error("cta_smem_bytes = {cta} exceeds smem_total_bytes = {total}")]
    CtaSmemExceeds { cta: u64, total: u64 },
    #[error("cutoffs must satisfy high > low > 0 (high = {high}, low = {low})")]
    CutoffOrder { high: f64, low: f64 },
    #[error("epochs must satisfy high > low > 0 (high = {high}, low = {low})")]
    EpochOrder { high: u64, low: u64 },
    #[error("max_warps = {0} must be in 1..=64")]
    MaxWarps(usize),
    #[error("vta_sets = {sets} must equal max_warps = {max_warps}")]
    VtaSets { sets: usize, max_warps: usize },
    #[error("vta_entries_per_warp must be at least 1")]
    ZeroVtaEntries,
    #[error("mshr_entries must be at least 1")]
    ZeroMshr,
    #[error("best_swl_limit must be at least 1")]
    ZeroSwlLimit,
    #[error("l2_miss_ratio = {0} outside [0, 1]")]
    L2MissRatio(f64),
    #[error("ccws_base_score must be at least 1")]
    CcwsBaseScore,
}

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

impl SimConfig {
    pub fn l1d_sets(&self) -> u64 {
        self.l1d_size_bytes / (self.l1d_ways as u64 * self.line_bytes)
    }

    /// Rows of shared memory (32 banks of 8-byte words per row).
    pub fn smem_rows(&self) -> usize {
        (self.smem_total_bytes / (self.smem_banks as u64 * SMEM_BANK_WORD_BYTES)) as usize
    }

    /// Rows reserved by CTAs, rounded up to whole rows.
    pub fn cta_smem_rows(&self) -> usize {
        let row_bytes = self.smem_banks as u64 * SMEM_BANK_WORD_BYTES;
        self.cta_smem_bytes.div_ceil(row_bytes) as usize
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.scheduler = policy;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.line_bytes.is_power_of_two() {
            return Err(ConfigError::LineNotPowerOfTwo(self.line_bytes));
        }
        if self.l1d_ways == 0 {
            return Err(ConfigError::ZeroWays);
        }
        let sets = self.l1d_sets();
        if sets == 0 || !sets.is_power_of_two() || sets * self.l1d_ways as u64 * self.line_bytes != self.l1d_size_bytes
        {
            return Err(ConfigError::SetCountNotPowerOfTwo { sets });
        }
        if self.smem_banks != 32 || self.line_bytes != 128 {
            return Err(ConfigError::SmemLayout {
                banks: self.smem_banks,
                line_bytes: self.line_bytes,
            });
        }
        let rows = self.smem_rows();
        let limit = self.smem_rows_per_bank.min(SMEM_MAX_TRANSLATED_ROWS);
        if rows > limit {
            return Err(ConfigError::SmemRows { rows, limit });
        }
        if self.cta_smem_bytes > self.smem_total_bytes {
            return Err(ConfigError::CtaSmemExceeds {
                cta: self.cta_smem_bytes,
                total: self.smem_total_bytes,
            });
        }
        // Written to also reject NaN.
        if !(self.low_cutoff > 0.0 && self.high_cutoff > self.low_cutoff) {
            return Err(ConfigError::CutoffOrder {
                high: self.high_cutoff,
                low: self.low_cutoff,
            });
        }
        if !(self.low_epoch_insts > 0 && self.high_epoch_insts > self.low_epoch_insts) {
            return Err(ConfigError::EpochOrder {
                high: self.high_epoch_insts,
                low: self.low_epoch_insts,
            });
        }
        if self.max_warps == 0 || self.max_warps > 64 {
            return Err(ConfigError::MaxWarps(self.max_warps));
        }
        if self.vta_sets != self.max_warps {
            return Err(ConfigError::VtaSets {
                sets: self.vta_sets,
                max_warps: self.max_warps,
            });
        }
        if self.vta_entries_per_warp == 0 {
            return Err(ConfigError::ZeroVtaEntries);
        }
        if self.mshr_entries == 0 {
            return Err(ConfigError::ZeroMshr);
        }
        if self.best_swl_limit == Some(0) {
            return Err(ConfigError::ZeroSwlLimit);
        }
        if !(0.0..=1.0).contains(&self.l2_miss_ratio) {
            return Err(ConfigError::L2MissRatio(self.l2_miss_ratio));
        }
        if self.ccws_base_score == 0 {
            return Err(ConfigError::CcwsBaseScore);
        }
        Ok(())
    }

    /// Parses a flat `key = value` config. Omitted keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigFileError> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("SimConfig serializes to TOML")
    }
}

/// Block index of `addr`: the address shifted right by log2(line_bytes).
#[inline]
pub fn block_index(addr: GlobalAddress, cfg: &SimConfig) -> u64 {
    addr.0 >> cfg.line_bytes.trailing_zeros()
}
