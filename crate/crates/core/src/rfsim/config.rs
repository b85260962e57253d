use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::regset::{RegSet, MAX_REGISTERS};
use crate::renumber::{count_bank_conflicts, BankLayout, BankMapping};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Design {
    /// Single-level register file.
    #[serde(rename = "BL")]
    Baseline,
    /// Hardware-managed register cache.
    #[serde(rename = "RFC")]
    Rfc,
    #[serde(rename = "LTRF")]
    Ltrf,
    /// Liveness-aware write-back and refetch.
    #[serde(rename = "LTRF_PLUS", alias = "LTRF+")]
    LtrfPlus,
    /// Liveness-aware, run on bank-renumbered code.
    #[serde(rename = "LTRF_CONF", alias = "LTRF_conf")]
    LtrfConf,
}

impl Design {
    pub const ALL: [Design; 5] = [Design::Baseline, Design::Rfc, Design::Ltrf, Design::LtrfPlus, Design::LtrfConf];

    pub fn name(self) -> &'static str {
        match self {
            Design::Baseline => "BL",
            Design::Rfc => "RFC",
            Design::Ltrf => "LTRF",
            Design::LtrfPlus => "LTRF_PLUS",
            Design::LtrfConf => "LTRF_CONF",
        }
    }

    /// Prefetches interval working sets into a register cache.
    pub fn prefetches(self) -> bool {
        matches!(self, Design::Ltrf | Design::LtrfPlus | Design::LtrfConf)
    }

    pub fn liveness_aware(self) -> bool {
        matches!(self, Design::LtrfPlus | Design::LtrfConf)
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('+', "_PLUS").replace('-', "_").as_str() {
            "BL" | "BASELINE" => Ok(Design::Baseline),
            "RFC" => Ok(Design::Rfc),
            "LTRF" => Ok(Design::Ltrf),
            "LTRF_PLUS" => Ok(Design::LtrfPlus),
            "LTRF_CONF" => Ok(Design::LtrfConf),
            _ => Err(format!("unknown design {s:?} (expected BL, RFC, LTRF, LTRF_PLUS or LTRF_CONF)")),
        }
    }
}

/// One row of the register file design table; figures are relative to the
/// 256KB, 16-bank baseline and are reported, never simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignPoint {
    pub config: u8,
    pub cell: &'static str,
    pub banks: f64,
    pub bank_size: f64,
    pub network: &'static str,
    pub capacity: f64,
    pub area: f64,
    pub power: f64,
    pub capacity_per_area: f64,
    pub capacity_per_power: f64,
    /// Main register file latency multiplier, as a decimal literal.
    pub latency: &'static str,
}

const fn row(
    config: u8,
    cell: &'static str,
    banks: f64,
    bank_size: f64,
    network: &'static str,
    [capacity, area, power, capacity_per_area, capacity_per_power]: [f64; 5],
    latency: &'static str,
) -> DesignPoint {
    DesignPoint { config, cell, banks, bank_size, network, capacity, area, power, capacity_per_area, capacity_per_power, latency }
}

pub const TABLE2: [DesignPoint; 7] = [
    row(1, "HP SRAM", 1.0, 1.0, "Crossbar", [1.0, 1.0, 1.0, 1.0, 1.0], "1"),
    row(2, "HP SRAM", 1.0, 8.0, "Crossbar", [8.0, 8.0, 8.0, 1.0, 1.0], "1.25"),
    row(3, "HP SRAM", 8.0, 1.0, "F. Butterfly", [8.0, 8.0, 8.0, 1.0, 1.0], "1.5"),
    row(4, "LSTP SRAM", 1.0, 8.0, "Crossbar", [8.0, 8.0, 3.2, 1.0, 2.5], "1.6"),
    row(5, "LSTP SRAM", 8.0, 1.0, "F. Butterfly", [8.0, 8.0, 3.2, 1.0, 2.5], "2.8"),
    row(6, "TFET SRAM", 8.0, 1.0, "F. Butterfly", [8.0, 8.0, 1.05, 1.0, 7.6], "5.3"),
    row(7, "DWM", 8.0, 1.0, "F. Butterfly", [8.0, 0.25, 0.65, 32.0, 12.0], "6.3"),
];

/// Latency multipliers of the design table, ascending.
pub fn table2_multipliers<S: Scalar>() -> Vec<S> {
    TABLE2.iter().map(|r| S::parse_decimal(r.latency).expect("table literal parses")).collect()
}

pub fn table2_row(config: u8) -> Option<&'static DesignPoint> {
    TABLE2.iter().find(|r| r.config == config)
}

mod multiplier {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::scalar::Scalar;

    pub fn serialize<S: Scalar, Ser: Serializer>(v: &S, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        s.serialize_f64(v.to_f64_lossy())
    }

    pub fn deserialize<'de, S: Scalar, D: Deserializer<'de>>(d: D) -> Result<S, D::Error> {
        let n = serde_json::Number::deserialize(d)?;
        S::parse_decimal(&n.to_string()).ok_or_else(|| serde::de::Error::custom(format!("bad multiplier {n}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"), default, deny_unknown_fields)]
pub struct RegisterFileConfig<S> {
    pub design: Design,
    pub main_banks: usize,
    pub main_bank_mapping: BankMapping,
    /// Defaults to an even split of the register space over the banks.
    pub main_registers_per_bank: Option<usize>,
    /// Main register file bank latency relative to the baseline.
    #[serde(with = "multiplier")]
    pub bank_latency_multiplier: S,
    pub base_bank_latency_cycles: u64,
    /// Baseline crossbar width in registers per cycle.
    pub crossbar_regs_per_cycle: usize,
    /// Width divisor applied to the main crossbar in prefetching designs.
    pub ltrf_crossbar_narrowing: usize,
    /// Register cache banks, i.e. registers per interval.
    pub cache_banks: usize,
    pub active_warps: usize,
    pub total_warps: usize,
    pub wcb_access_cycles: u64,
    pub cache_access_cycles: u64,
    /// Cycles between a warp's instruction issuing and its next one being
    /// able to collect operands.
    pub dependent_issue_cycles: u64,
    pub memory_stall_cycles: u64,
    pub rfc_entries: usize,
    pub rfc_ways: usize,
    /// Row of the design table echoed in reports.
    pub table2_config: Option<u8>,
}

impl<S: Scalar> Default for RegisterFileConfig<S> {
    fn default() -> Self {
        RegisterFileConfig {
            design: Design::Ltrf,
            main_banks: 16,
            main_bank_mapping: BankMapping::Mod,
            main_registers_per_bank: None,
            bank_latency_multiplier: S::one(),
            base_bank_latency_cycles: 1,
            crossbar_regs_per_cycle: 16,
            ltrf_crossbar_narrowing: 4,
            cache_banks: 16,
            active_warps: 8,
            total_warps: 64,
            wcb_access_cycles: 1,
            cache_access_cycles: 1,
            dependent_issue_cycles: 6,
            memory_stall_cycles: 400,
            rfc_entries: 128,
            rfc_ways: 4,
            table2_config: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid register file config: {0}")]
pub struct ConfigError(pub String);

impl<S: Scalar> RegisterFileConfig<S> {
    pub fn new(design: Design) -> Self {
        RegisterFileConfig { design, ..Self::default() }
    }

    pub fn with_multiplier(&self, m: S) -> Self {
        RegisterFileConfig { bank_latency_multiplier: m, ..self.clone() }
    }

    pub fn with_design(&self, design: Design) -> Self {
        RegisterFileConfig { design, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.main_banks == 0 || !MAX_REGISTERS.is_multiple_of(self.main_banks) {
            return err(format!("main_banks {} must divide {MAX_REGISTERS}", self.main_banks));
        }
        if self.bank_latency_multiplier <= S::zero() {
            return err("bank_latency_multiplier must be positive".into());
        }
        if let Some(n) = self.main_registers_per_bank {
            if n == 0 || n * self.main_banks > MAX_REGISTERS {
                return err(format!("{n} registers per bank do not fit {} banks", self.main_banks));
            }
        }
        if self.crossbar_regs_per_cycle == 0 || self.ltrf_crossbar_narrowing == 0 {
            return err("crossbar width and narrowing must be positive".into());
        }
        if self.cache_banks == 0 || self.cache_banks > MAX_REGISTERS {
            return err(format!("cache_banks {} outside 1..={MAX_REGISTERS}", self.cache_banks));
        }
        if self.active_warps > self.total_warps {
            return err(format!("active_warps {} exceeds total_warps {}", self.active_warps, self.total_warps));
        }
        if self.rfc_entries == 0 || self.rfc_ways == 0 {
            return err("register cache needs entries and ways".into());
        }
        if let Some(c) = self.table2_config {
            if table2_row(c).is_none() {
                return err(format!("no design table row {c}"));
            }
        }
        Ok(())
    }

    pub fn metadata(&self) -> Option<&'static DesignPoint> {
        self.table2_config.and_then(table2_row)
    }

    pub fn main_layout(&self) -> BankLayout {
        let layout = BankLayout::new(self.main_banks, self.main_bank_mapping);
        match self.main_registers_per_bank {
            Some(n) => layout.with_registers_per_bank(n),
            None => layout,
        }
    }

    /// Registers per cycle over the main register file crossbar.
    pub fn crossbar_width(&self) -> usize {
        if self.design.prefetches() {
            (self.crossbar_regs_per_cycle / self.ltrf_crossbar_narrowing).max(1)
        } else {
            self.crossbar_regs_per_cycle
        }
    }

    /// Cycles for `rounds` serial bank accesses.
    pub fn bank_rounds_latency(&self, rounds: usize) -> u64 {
        (S::from_cycles(self.base_bank_latency_cycles) * self.bank_latency_multiplier * S::from_cycles(rounds as u64))
            .ceil_cycles()
    }

    /// Reading (or writing) `regs` from the main register file: serial bank
    /// rounds plus crossbar transfer. Zero for an empty set.
    pub fn main_access_latency(&self, regs: &RegSet) -> u64 {
        if regs.is_empty() {
            return 0;
        }
        let rounds = 1 + count_bank_conflicts(regs, &self.main_layout());
        self.bank_rounds_latency(rounds) + (regs.len() as u64).div_ceil(self.crossbar_width() as u64)
    }

    /// Prefetch of `fetched` into the cache, including the WCB update.
    pub fn prefetch_latency(&self, fetched: &RegSet) -> u64 {
        self.main_access_latency(fetched) + self.wcb_access_cycles
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Multiplier;

    fn set(regs: &[u16]) -> RegSet {
        regs.iter().copied().collect()
    }

    #[test]
    fn prefetch_latency_examples() {
        let mut c = RegisterFileConfig::<Multiplier>::new(Design::Ltrf);
        c.crossbar_regs_per_cycle = 16;
        assert_eq!(c.crossbar_width(), 4);
        assert_eq!(c.prefetch_latency(&set(&[0, 1, 2, 3])), 3);
        let fig8 = RegisterFileConfig::<Multiplier> {
            main_banks: 4,
            main_bank_mapping: BankMapping::Div,
            main_registers_per_bank: Some(2),
            ..c.clone()
        };
        assert_eq!(fig8.prefetch_latency(&set(&[0, 1, 4, 5])), 4);
        assert_eq!(c.prefetch_latency(&RegSet::new()), 1);
    }

    #[test]
    fn single_bank_serialises_fully() {
        let c = RegisterFileConfig::<Multiplier>::new(Design::Ltrf);
        let regs = set(&[0, 16, 32, 48, 64]);
        assert_eq!(c.crossbar_width(), 4);
        assert_eq!(c.main_access_latency(&regs), 5 + 2);
    }

    #[test]
    fn multiplier_rounds_up_exactly() {
        let c = RegisterFileConfig::<Multiplier>::new(Design::Baseline).with_multiplier(Multiplier::new(63, 10));
        assert_eq!(c.bank_rounds_latency(1), 7);
        assert_eq!(c.bank_rounds_latency(10), 63);
        let f = RegisterFileConfig::<f64>::new(Design::Baseline).with_multiplier(6.3);
        assert_eq!(f.bank_rounds_latency(1), 7);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let c = RegisterFileConfig::<Multiplier> { table2_config: Some(7), ..Default::default() }
            .with_multiplier(Multiplier::new(63, 10));
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"bank_latency_multiplier\":6.3"));
        let back: RegisterFileConfig<Multiplier> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: RegisterFileConfig<Multiplier> =
            serde_json::from_str(r#"{"design":"LTRF+","bank_latency_multiplier":1.25}"#).unwrap();
        assert_eq!(partial.design, Design::LtrfPlus);
        assert_eq!(partial.bank_latency_multiplier, Multiplier::new(5, 4));
    }

    #[test]
    fn design_names() {
        for d in Design::ALL {
            assert_eq!(d.name().parse::<Design>().unwrap(), d);
        }
        assert_eq!("ltrf+".parse::<Design>().unwrap(), Design::LtrfPlus);
        assert_eq!("LTRF_conf".parse::<Design>().unwrap(), Design::LtrfConf);
        assert!("XYZ".parse::<Design>().is_err());
    }

    #[test]
    fn validation() {
        let mut c = RegisterFileConfig::<f64>::default();
        assert!(c.validate().is_ok());
        c.active_warps = 65;
        assert!(c.validate().is_err());
        c.active_warps = 8;
        c.main_banks = 12;
        assert!(c.validate().is_err());
        c.main_banks = 16;
        c.bank_latency_multiplier = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn table_multipliers() {
        let m = table2_multipliers::<Multiplier>();
        assert_eq!(m[0], Multiplier::from_integer(1));
        assert_eq!(m[6], Multiplier::new(63, 10));
        assert!(m.windows(2).all(|w| w[0] < w[1]));
    }
}
